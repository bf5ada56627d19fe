fn main() {
    std::process::exit(dbini_cli::run(std::env::args_os()));
}

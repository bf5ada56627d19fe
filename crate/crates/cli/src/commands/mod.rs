pub mod bench;
pub mod integrate;
pub mod mesh;
pub mod metrics;
pub mod replay;
pub mod solve;
pub mod synth;

use crate::args::Command;
use crate::error::CliResult;

pub fn execute(command: &Command, quiet: bool) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth::run(command, a, quiet),
        Command::Integrate(a) => integrate::run(command, a, quiet),
        Command::Bench(a) => bench::run(command, a, quiet),
        Command::Mesh(a) => mesh::run(command, a, quiet),
        Command::Metrics(a) => metrics::run(command, a, quiet),
        Command::Replay(a) => replay::run(a, quiet),
    }
}

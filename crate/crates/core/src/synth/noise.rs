use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::field::{VectorField2D, N_Z_MIN};

/// Halvings tried before a pixel is left unrotated.
const MAX_HALVINGS: usize = 64;

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / len, v[1] / len, v[2] / len]
}

/// Angle between two unit vectors, degrees.
pub fn angular_deviation_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let s = {
        let x = cross(a, b);
        (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
    };
    s.atan2(c).to_degrees()
}

/// Rotates `n` by `|N(0, stddev)|` about a uniformly random axis in its
/// tangent plane. The rng belongs to this pixel alone.
fn perturb_one(n: [f64; 3], stddev_rad: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let angle = Normal::new(0.0, stddev_rad).unwrap().sample(rng).abs();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let helper = if n[2].abs() < 0.9 {
        [0.0, 0.0, 1.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let t1 = unit(cross(n, helper));
    let t2 = cross(n, t1);
    let axis = [
        phi.cos() * t1[0] + phi.sin() * t2[0],
        phi.cos() * t1[1] + phi.sin() * t2[1],
        phi.cos() * t1[2] + phi.sin() * t2[2],
    ];
    let side = cross(axis, n);
    let mut theta = angle;
    for _ in 0..MAX_HALVINGS {
        let (s, c) = theta.sin_cos();
        let out = unit([
            n[0] * c + side[0] * s,
            n[1] * c + side[1] * s,
            n[2] * c + side[2] * s,
        ]);
        if out[2].abs() >= N_Z_MIN && out[2].signum() == n[2].signum() {
            return out;
        }
        theta *= 0.5;
    }
    n
}

/// Random rotation of every finite normal. The angle follows a folded normal
/// distribution with `stddev_deg`; rotations that would push a normal past
/// grazing or flip its facing are halved until they do not. Each pixel
/// draws from its own ChaCha stream, so output depends only on `seed`.
pub fn perturb_normals(field: &VectorField2D, stddev_deg: f64, seed: u64) -> VectorField2D {
    let mut out = field.clone();
    if stddev_deg <= 0.0 {
        return out;
    }
    let stddev = stddev_deg.to_radians();
    out.vectors_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, n)| {
            if n.iter().any(|c| !c.is_finite()) {
                return;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            *n = perturb_one(*n, stddev, &mut rng);
        });
    out
}

#![allow(dead_code)]

use nalgebra::DMatrix;
use pagkit::linops;
use pagkit::Channel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomSiso {
    pub channel: Channel,
    /// Largest eigenvalue modulus of `A`.
    pub radius: f64,
    /// `1 / min |Re lambda|`.
    pub time_constant: f64,
}

/// A random Hurwitz SISO channel of order 1..=5.
///
/// Poles are drawn directly (real ones and lightly to heavily damped pairs) and
/// mixed by a random similarity with condition number below 50.
pub fn random_siso(seed: u64) -> RandomSiso {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=5);
    let mut d = DMatrix::zeros(n, n);
    let mut i = 0;
    while i < n {
        if n - i >= 2 && rng.random_bool(0.5) {
            let sigma = rng.random_range(0.2..3.0);
            let omega = rng.random_range(0.2..5.0);
            d[(i, i)] = -sigma;
            d[(i + 1, i + 1)] = -sigma;
            d[(i, i + 1)] = omega;
            d[(i + 1, i)] = -omega;
            i += 2;
        } else {
            d[(i, i)] = -rng.random_range(0.2..5.0);
            i += 1;
        }
    }
    let (t, t_inv) = loop {
        let t = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::identity(n, n);
        let sv = t.clone().svd(false, false).singular_values;
        if sv.min() > 0.0 && sv.max() / sv.min() < 50.0 {
            let inv = t.clone().try_inverse().expect("well conditioned");
            break (t, inv);
        }
    };
    let a = &t * d * t_inv;
    let b = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0));
    let eig = linops::eigenvalues(&a).unwrap();
    let radius = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let slowest = eig.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min);
    RandomSiso { channel: Channel::new(a, b, c).unwrap(), radius, time_constant: 1.0 / slowest }
}

pub const PERIOD_FACTORS: [f64; 3] = [0.1, 1.0, 10.0];

/// Samples per period keeping `radius * dt` at or below `2e-3`, which holds the
/// trapezoid error of the AC gain near `3e-7` relative.
pub fn samples_for(radius: f64, period: f64) -> usize {
    let n = (radius * period / 2e-3).ceil() as usize;
    n.max(pagkit::DEFAULT_GRID_N).next_multiple_of(2)
}

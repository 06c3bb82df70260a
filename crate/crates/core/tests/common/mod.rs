#![allow(dead_code)]

use esop::channel::{draw_channel, ChannelModel, UeTransmission};
use esop::frame::GridConfig;
use esop::pilots::PilotAssignment;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn bpsk(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0))
        .collect()
}

pub fn cgauss(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let n: rand_distr::StandardNormal = rand_distr::StandardNormal;
    Complex64::new(rng.sample::<f64, _>(n) * s, rng.sample::<f64, _>(n) * s)
}

/// A UE with a flat Rayleigh channel, given offsets and random BPSK data.
pub fn flat_ue(
    rng: &mut ChaCha8Rng,
    grid: &GridConfig,
    antennas: usize,
    ids: Vec<usize>,
    to: f64,
    fo: f64,
) -> UeTransmission {
    let mut channel = draw_channel(rng, &ChannelModel::flat(), antennas, grid, 0.0, 0.0);
    channel.to = to;
    channel.fo = fo;
    UeTransmission {
        channel,
        pilots: PilotAssignment { ids },
        symbols: bpsk(rng, grid.data_len()),
    }
}

/// Binomial standard error of a rate `p` estimated from `n` draws.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

//! Blind phase tracking on combined data symbols (partition matching).
//!
//! The data band is partitioned into groups along one axis. Each group's rotation
//! is the m-power estimate `arg(sum x^m) / m`, which is blind to the data and
//! ambiguous modulo `2 pi / m`. Differences between neighbouring groups give the
//! phase slope; the absolute phase is pinned to the pilot position, where the
//! combiner response is real and positive.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::frame::{GridConfig, GridCoord};
use crate::phy::{symbol_llrs, Modulation};

/// Extra passes of [`estimate_slope`] on the derotated residual. Groups with uneven
/// symbol spacing bias a single pass slightly; re-estimating removes it.
const SLOPE_PASSES: usize = 3;
const VAR_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Frequency,
    Time,
}

fn order(modulation: Modulation) -> i32 {
    modulation.power()
}

/// Wraps `x` into `[-half, half)`.
pub fn wrap(x: f64, half: f64) -> f64 {
    let period = 2.0 * half;
    x - period * ((x + half) / period).floor()
}

fn power_sum(symbols: impl Iterator<Item = Complex64>, m: i32) -> Complex64 {
    symbols.map(|x| x.powi(m)).sum()
}

/// Average rotation of a group of symbols in `[-pi/m, pi/m)`.
pub fn pm_group_rotation(symbols: &[Complex64], modulation: Modulation) -> Result<f64> {
    if symbols.is_empty() {
        return Err(Error::EmptyGroup("pm_group_rotation"));
    }
    let m = order(modulation);
    let z = power_sum(symbols.iter().copied(), m);
    rotation_of_sum(z, m)
}

fn rotation_of_sum(z: Complex64, m: i32) -> Result<f64> {
    if z == Complex64::new(0.0, 0.0) {
        return Err(Error::UndefinedRotation);
    }
    let half = PI / m as f64;
    Ok(wrap(z.arg() / m as f64, half))
}

/// Partition of the data REs into contiguous groups along `axis`.
#[derive(Debug, Clone)]
struct Groups {
    /// Group of every data RE.
    of_re: Vec<usize>,
    /// Mean axis coordinate of each group.
    centroid: Vec<f64>,
}

fn groups(grid: &GridConfig, axis: Axis, n_groups: usize) -> Result<Groups> {
    let positions: Vec<usize> = match axis {
        Axis::Frequency => (0..grid.n_subcarriers()).collect(),
        Axis::Time => grid.data_symbols().to_vec(),
    };
    if n_groups == 0 || positions.len() % n_groups != 0 {
        return Err(Error::InvalidConfig(format!(
            "{n_groups} groups do not divide {} {} positions",
            positions.len(),
            match axis {
                Axis::Frequency => "subcarrier",
                Axis::Time => "data symbol",
            }
        )));
    }
    let width = positions.len() / n_groups;
    let centroid = positions
        .chunks(width)
        .map(|c| c.iter().sum::<usize>() as f64 / width as f64)
        .collect();
    let of_re = grid
        .data_coords()
        .iter()
        .map(|c| match axis {
            Axis::Frequency => c.subcarrier / width,
            Axis::Time => positions.iter().position(|&t| t == c.symbol).unwrap_or(0) / width,
        })
        .collect();
    Ok(Groups { of_re, centroid })
}

fn axis_coord(c: &GridCoord, axis: Axis) -> f64 {
    match axis {
        Axis::Frequency => c.subcarrier as f64,
        Axis::Time => c.symbol as f64,
    }
}

/// One pass: phase of the summed neighbour products of group m-power sums, over
/// `m` times the (weighted) mean centroid spacing.
fn slope_pass(symbols: &[Complex64], g: &Groups, m: i32, weights_rot: impl Fn(usize) -> Complex64) -> Result<f64> {
    let n = g.centroid.len();
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    for (i, x) in symbols.iter().enumerate() {
        z[g.of_re[i]] += (x * weights_rot(i)).powi(m);
    }
    if n < 2 {
        return Ok(0.0);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    let (mut wsum, mut wspan) = (0.0, 0.0);
    for k in 0..n - 1 {
        let u = z[k + 1] * z[k].conj();
        let w = u.norm();
        acc += u;
        wsum += w;
        wspan += w * (g.centroid[k + 1] - g.centroid[k]);
    }
    if acc == Complex64::new(0.0, 0.0) || wsum == 0.0 {
        return Err(Error::UndefinedRotation);
    }
    Ok(acc.arg() / (m as f64 * (wspan / wsum)))
}

/// Phase rotation per RE step along `axis`, estimated blindly from combined data
/// symbols in serial order.
pub fn estimate_slope(
    symbols: &[Complex64],
    grid: &GridConfig,
    axis: Axis,
    n_groups: usize,
    modulation: Modulation,
) -> Result<f64> {
    if symbols.len() != grid.data_len() {
        return Err(Error::LengthMismatch {
            expected: grid.data_len(),
            actual: symbols.len(),
        });
    }
    let g = groups(grid, axis, n_groups)?;
    let m = order(modulation);
    let coords = grid.data_coords();
    let mut slope = 0.0;
    for _ in 0..SLOPE_PASSES {
        let s = slope;
        let step = slope_pass(symbols, &g, m, |i| Complex64::from_polar(1.0, -s * axis_coord(&coords[i], axis)))?;
        slope += step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    Ok(slope)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmConfig {
    pub groups_freq: usize,
    pub groups_time: usize,
    pub alternations: usize,
    pub selective: bool,
    pub modulation: Modulation,
}

/// Linear phase model `exp(i (freq_slope (j - j0) + time_slope (t - t0)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseRamp {
    pub freq_slope: f64,
    pub time_slope: f64,
    pub anchor: GridCoord,
}

impl PhaseRamp {
    pub fn zero(anchor: GridCoord) -> Self {
        Self {
            freq_slope: 0.0,
            time_slope: 0.0,
            anchor,
        }
    }

    pub fn phase(&self, c: GridCoord) -> f64 {
        self.freq_slope * (c.subcarrier as f64 - self.anchor.subcarrier as f64)
            + self.time_slope * (c.symbol as f64 - self.anchor.symbol as f64)
    }

    pub fn phasor(&self, c: GridCoord) -> Complex64 {
        Complex64::from_polar(1.0, self.phase(c))
    }
}

/// Output of [`pm_equalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Equalized {
    /// Derotated symbols with the group gain divided out.
    pub symbols: Vec<Complex64>,
    pub ramp: PhaseRamp,
    /// Complex gain per frequency group.
    pub gains: Vec<Complex64>,
    /// Residual noise variance per group, before gain division.
    pub noise_vars: Vec<f64>,
    /// Group index of every subcarrier.
    pub group_of_subcarrier: Vec<usize>,
}

impl Equalized {
    pub fn llrs(&self, grid: &GridConfig, modulation: Modulation) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.symbols.len() * modulation.bits_per_symbol());
        let one = Complex64::new(1.0, 0.0);
        for (x, c) in self.symbols.iter().zip(grid.data_coords()) {
            let g = self.group_of_subcarrier[c.subcarrier];
            let v = self.noise_vars[g] / self.gains[g].norm_sqr();
            symbol_llrs(*x, one, v, modulation, &mut out);
        }
        out
    }
}

/// Alternating frequency/time slope removal followed by group gain estimation.
pub fn pm_equalize(symbols: &[Complex64], grid: &GridConfig, cfg: &PmConfig, anchor: GridCoord) -> Result<Equalized> {
    if symbols.len() != grid.data_len() {
        return Err(Error::LengthMismatch {
            expected: grid.data_len(),
            actual: symbols.len(),
        });
    }
    let coords = grid.data_coords();
    let mut ramp = PhaseRamp::zero(anchor);
    let mut work = symbols.to_vec();
    let derotate = |ramp: &PhaseRamp, out: &mut Vec<Complex64>| {
        for ((o, s), c) in out.iter_mut().zip(symbols).zip(coords) {
            *o = s * ramp.phasor(*c).conj();
        }
    };
    for _ in 0..cfg.alternations {
        ramp.freq_slope += estimate_slope(&work, grid, Axis::Frequency, cfg.groups_freq, cfg.modulation)?;
        derotate(&ramp, &mut work);
        ramp.time_slope += estimate_slope(&work, grid, Axis::Time, cfg.groups_time, cfg.modulation)?;
        derotate(&ramp, &mut work);
    }

    let n_groups = if cfg.selective { cfg.groups_freq } else { 1 };
    let g = groups(grid, Axis::Frequency, n_groups)?;
    let width = grid.n_subcarriers() / n_groups;
    let group_of_subcarrier: Vec<usize> = (0..grid.n_subcarriers()).map(|j| j / width).collect();
    let m = order(cfg.modulation);
    let mut z = vec![Complex64::new(0.0, 0.0); n_groups];
    let mut pow2 = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for (i, x) in work.iter().enumerate() {
        let k = g.of_re[i];
        z[k] += x.powi(m);
        pow2[k] += x.norm_sqr();
        count[k] += 1;
    }
    let raw: Vec<f64> = z.iter().map(|&zk| rotation_of_sum(zk, m)).collect::<Result<_>>()?;
    // Unwrap outward from the anchor group, whose phase is pinned near zero.
    let half = PI / m as f64;
    let a = group_of_subcarrier[anchor.subcarrier.min(grid.n_subcarriers() - 1)];
    let mut phase = raw.clone();
    for k in (0..a).rev() {
        phase[k] = phase[k + 1] + wrap(raw[k] - phase[k + 1], half);
    }
    for k in a + 1..n_groups {
        phase[k] = phase[k - 1] + wrap(raw[k] - phase[k - 1], half);
    }
    let mut gains = Vec::with_capacity(n_groups);
    let mut noise_vars = Vec::with_capacity(n_groups);
    for k in 0..n_groups {
        let n = count[k] as f64;
        let mag = (z[k].norm() / n).powf(1.0 / m as f64);
        let power = pow2[k] / n;
        gains.push(Complex64::from_polar(mag, phase[k]));
        noise_vars.push((power - mag * mag).max(VAR_FLOOR * power));
    }
    for (x, c) in work.iter_mut().zip(coords) {
        *x /= gains[group_of_subcarrier[c.subcarrier]];
    }
    Ok(Equalized {
        symbols: work,
        ramp,
        gains,
        noise_vars,
        group_of_subcarrier,
    })
}

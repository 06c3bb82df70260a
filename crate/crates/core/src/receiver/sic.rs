//! Data-assisted channel refinement and signal cancellation.

use num_complex::Complex64;

use super::detect::PilotEstimate;
use super::pm::PhaseRamp;
use crate::channel::{CMatrix, ReceivedSignal};
use crate::error::{Error, Result};
use crate::frame::GridConfig;
use crate::pilots::PilotPattern;

/// Frequency subchannel of subcarrier `j` when `n_sub` subcarriers are split into
/// `n_groups` equal contiguous groups.
#[inline]
pub fn subchannel(j: usize, n_sub: usize, n_groups: usize) -> usize {
    j * n_groups / n_sub
}

/// Transmitted symbols as they appear after the UE's estimated phase ramp.
pub fn ramped_symbols(symbols: &[Complex64], ramp: &PhaseRamp, grid: &GridConfig) -> Vec<Complex64> {
    symbols
        .iter()
        .zip(grid.data_coords())
        .map(|(s, c)| s * ramp.phasor(*c))
        .collect()
}

/// Least-squares channel per frequency subchannel, `sum y x* / sum |x|^2`, using
/// the known (ramped) symbols `reference`. Returns `M x n_groups`.
pub fn data_assisted_ls(y_d: &CMatrix, reference: &[Complex64], grid: &GridConfig, n_groups: usize) -> Result<CMatrix> {
    let j_total = grid.n_subcarriers();
    if n_groups == 0 || j_total % n_groups != 0 {
        return Err(Error::InvalidConfig(format!(
            "{n_groups} subchannels do not divide {j_total} subcarriers"
        )));
    }
    if reference.len() != y_d.ncols() || y_d.ncols() != grid.data_len() {
        return Err(Error::LengthMismatch {
            expected: y_d.ncols(),
            actual: reference.len(),
        });
    }
    let m_ant = y_d.nrows();
    let mut h = CMatrix::zeros(m_ant, n_groups);
    let mut norm = vec![0.0; n_groups];
    for (i, (x, c)) in reference.iter().zip(grid.data_coords()).enumerate() {
        let g = subchannel(c.subcarrier, j_total, n_groups);
        let xc = x.conj();
        let col = y_d.column(i);
        for m in 0..m_ant {
            h[(m, g)] += col[m] * xc;
        }
        norm[g] += x.norm_sqr();
    }
    for (g, n) in norm.iter().enumerate() {
        if *n == 0.0 {
            return Err(Error::EmptyGroup("data_assisted_ls"));
        }
        h.column_mut(g).unscale_mut(*n);
    }
    Ok(h)
}

/// Subtracts `H_g(j) x_i` from every data column.
pub fn cancel_data(y_d: &mut CMatrix, channel: &CMatrix, reference: &[Complex64], grid: &GridConfig) {
    let j_total = grid.n_subcarriers();
    let n_groups = channel.ncols();
    let m_ant = y_d.nrows();
    for (i, (x, c)) in reference.iter().zip(grid.data_coords()).enumerate() {
        let g = subchannel(c.subcarrier, j_total, n_groups);
        for m in 0..m_ant {
            y_d[(m, i)] -= channel[(m, g)] * x;
        }
    }
}

/// Subtracts the pilot contribution `H_g(j) p ramp(j, t)` at every RE of `pattern`.
pub fn cancel_pilot(
    y_p: &mut CMatrix,
    channel: &CMatrix,
    ramp: &PhaseRamp,
    pattern: &PilotPattern,
    grid: &GridConfig,
) {
    let j_total = grid.n_subcarriers();
    let n_groups = channel.ncols();
    for e in &pattern.entries {
        let g = subchannel(e.coord.subcarrier, j_total, n_groups);
        let v = e.value * ramp.phasor(e.coord);
        for m in 0..y_p.nrows() {
            y_p[(m, e.re)] -= channel[(m, g)] * v;
        }
    }
}

/// Like [`cancel_pilot`], but leaves `y_p` untouched and returns false when the
/// subtraction would raise the energy on the pattern's REs. A reconstruction that
/// adds energy does not match what is there, typically a collided or misread pilot.
pub fn cancel_pilot_if_reducing(
    y_p: &mut CMatrix,
    channel: &CMatrix,
    ramp: &PhaseRamp,
    pattern: &PilotPattern,
    grid: &GridConfig,
) -> bool {
    let j_total = grid.n_subcarriers();
    let n_groups = channel.ncols();
    let (mut before, mut after) = (0.0, 0.0);
    for e in &pattern.entries {
        let g = subchannel(e.coord.subcarrier, j_total, n_groups);
        let v = e.value * ramp.phasor(e.coord);
        for m in 0..y_p.nrows() {
            let y = y_p[(m, e.re)];
            before += y.norm_sqr();
            after += (y - channel[(m, g)] * v).norm_sqr();
        }
    }
    if after > before {
        return false;
    }
    cancel_pilot(y_p, channel, ramp, pattern, grid);
    true
}

/// Removes a decoded UE's data and the listed pilots from `sig`.
pub fn reconstruct_and_cancel<'a>(
    sig: &mut ReceivedSignal,
    channel: &CMatrix,
    ramp: &PhaseRamp,
    symbols: &[Complex64],
    pilots: impl IntoIterator<Item = &'a PilotPattern>,
    grid: &GridConfig,
) {
    let reference = ramped_symbols(symbols, ramp, grid);
    cancel_data(&mut sig.data, channel, &reference, grid);
    for p in pilots {
        cancel_pilot(&mut sig.pilots[p.region], channel, ramp, p, grid);
    }
}

/// Phase-insensitive similarity in `[0, 1]` between a pilot's block estimates and a
/// refined channel evaluated at the block positions.
pub fn channel_correlation(est: &PilotEstimate, pattern: &PilotPattern, channel: &CMatrix, grid: &GridConfig) -> f64 {
    let j_total = grid.n_subcarriers();
    let (mut num, mut ea, mut eb) = (0.0, 0.0, 0.0);
    for (b, blk) in est.blocks.iter().enumerate() {
        let j = pattern.block_center(b).round() as usize;
        let g = subchannel(j.min(j_total - 1), j_total, channel.ncols());
        let r = channel.column(g);
        num += blk.dotc(&r).norm();
        ea += blk.norm_squared();
        eb += r.norm_squared();
    }
    if ea == 0.0 || eb == 0.0 {
        return 0.0;
    }
    num / (ea * eb).sqrt()
}

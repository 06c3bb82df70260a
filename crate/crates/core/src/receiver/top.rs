//! Subband channel estimates for the comb pilots.
//!
//! Each PRB gives one despread estimate. A time offset turns into a phase step of
//! up to several radians between PRBs, so plain interpolation would alias. The
//! common step is estimated first and removed, the smooth remainder is linearly
//! interpolated, and the ramp is put back per subcarrier.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::detect::PilotEstimate;
use crate::channel::CMatrix;
use crate::frame::GridConfig;
use crate::pilots::PilotPattern;

/// Fraction of the alias-free delay range reserved for negative delays.
const NEGATIVE_DELAY_MARGIN: f64 = 0.05;

/// Interpolated per-subcarrier estimate (`M x J`) plus the phase ramp per
/// subcarrier that was removed before interpolating.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandEstimate {
    pub h: CMatrix,
    pub freq_slope: f64,
}

/// Per-subcarrier phase slope implied by the mean step between consecutive block
/// estimates, mapped into the delay window `[-5%, 95%)` of the alias-free range.
pub fn block_phase_slope(est: &PilotEstimate, pattern: &PilotPattern) -> f64 {
    let n = est.blocks.len();
    if n < 2 {
        return 0.0;
    }
    let spacing = pattern.block_center(1) - pattern.block_center(0);
    let acc: Complex64 = (0..n - 1).map(|b| est.blocks[b + 1].dotc(&est.blocks[b]).conj()).sum();
    if acc.norm() == 0.0 {
        return 0.0;
    }
    // A delay tau gives a step of -2 pi tau df per subcarrier; a window
    // [-margin, 1 - margin) of the alias-free range maps to steps in
    // (-2 pi (1 - margin), 2 pi margin].
    let lo = -2.0 * PI * (1.0 - NEGATIVE_DELAY_MARGIN);
    let mut step = acc.arg();
    while step <= lo {
        step += 2.0 * PI;
    }
    while step > lo + 2.0 * PI {
        step -= 2.0 * PI;
    }
    step / spacing
}

/// Interpolates block estimates of `est` to every subcarrier of the grid.
pub fn estimate_top_subband(est: &PilotEstimate, pattern: &PilotPattern, grid: &GridConfig) -> SubbandEstimate {
    let m_ant = est.h.len();
    let j_total = grid.n_subcarriers();
    let n = est.blocks.len();
    let slope = block_phase_slope(est, pattern);
    let centers: Vec<f64> = (0..n).map(|b| pattern.block_center(b)).collect();
    let flat: Vec<Vec<Complex64>> = est
        .blocks
        .iter()
        .zip(&centers)
        .map(|(blk, &c)| {
            let r = Complex64::from_polar(1.0, -slope * c);
            blk.iter().map(|v| v * r).collect()
        })
        .collect();
    let mut h = CMatrix::zeros(m_ant, j_total);
    for j in 0..j_total {
        let x = j as f64;
        let r = Complex64::from_polar(1.0, slope * x);
        if n == 1 {
            for m in 0..m_ant {
                h[(m, j)] = flat[0][m] * r;
            }
            continue;
        }
        // Segment whose span contains x, clamped to the end segments for extrapolation.
        let seg = centers.windows(2).position(|w| x < w[1]).unwrap_or(n - 2).min(n - 2);
        let (x0, x1) = (centers[seg], centers[seg + 1]);
        let t = (x - x0) / (x1 - x0);
        for m in 0..m_ant {
            h[(m, j)] = (flat[seg][m] * (1.0 - t) + flat[seg + 1][m] * t) * r;
        }
    }
    SubbandEstimate { h, freq_slope: slope }
}

//! Per-pilot channel estimation by despreading and energy-threshold activity detection.

use nalgebra::DVector;
use num_complex::Complex64;
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::channel::CMatrix;
use crate::error::{Error, Result};
use crate::pilots::{PilotPattern, PilotSet};

pub type CVector = DVector<Complex64>;

/// Despread estimate of one pilot hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotEstimate {
    pub region: usize,
    pub id: usize,
    /// One estimate per despreading block (a single block for ESOP, one per PRB for TOP).
    pub blocks: Vec<CVector>,
    /// Mean of the block estimates.
    pub h: CVector,
    /// Detection statistic: mean squared norm of the block estimates. For a
    /// single-block pilot this is `|h|^2`.
    pub energy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionResult {
    /// Detected pilots, strongest first.
    pub entries: Vec<PilotEstimate>,
}

impl DetectionResult {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Least-squares despreading `sum y conj(p) / sum |p|^2` over each block of `pattern`.
pub fn despread(y_region: &CMatrix, pattern: &PilotPattern) -> PilotEstimate {
    let m_ant = y_region.nrows();
    let mut blocks = vec![CVector::zeros(m_ant); pattern.n_blocks];
    let mut norms = vec![0.0; pattern.n_blocks];
    for e in &pattern.entries {
        let c = e.value.conj();
        let col = y_region.column(e.re);
        let b = &mut blocks[e.block];
        for m in 0..m_ant {
            b[m] += col[m] * c;
        }
        norms[e.block] += e.value.norm_sqr();
    }
    for (b, n) in blocks.iter_mut().zip(&norms) {
        *b /= Complex64::new(*n, 0.0);
    }
    let mut h = CVector::zeros(m_ant);
    for b in &blocks {
        h += b;
    }
    h /= Complex64::new(blocks.len() as f64, 0.0);
    let energy = blocks.iter().map(|b| b.norm_squared()).sum::<f64>() / blocks.len() as f64;
    PilotEstimate {
        region: pattern.region,
        id: pattern.id,
        blocks,
        h,
        energy,
    }
}

/// Estimates for every pilot of every region.
pub fn estimate_spatial_channels(y_pilots: &[CMatrix], set: &PilotSet) -> Result<Vec<PilotEstimate>> {
    if y_pilots.len() != set.n_regions() {
        return Err(Error::Dimension(format!(
            "{} pilot regions received, pilot set has {}",
            y_pilots.len(),
            set.n_regions()
        )));
    }
    let mut out = Vec::with_capacity(set.n_regions() * set.n_per_region());
    for (r, y) in y_pilots.iter().enumerate() {
        for p in set.region(r) {
            if let Some(e) = p.entries.iter().find(|e| e.re >= y.ncols()) {
                return Err(Error::Dimension(format!("pilot RE {} outside received region", e.re)));
            }
            out.push(despread(y, p));
        }
    }
    Ok(out)
}

/// Energy threshold for a single-block pilot of total energy `pilot_energy`:
/// under noise only, `|h|^2 > T` with probability `p_fa`.
pub fn detection_threshold(noise_var: f64, n_antennas: usize, pilot_energy: f64, p_fa: f64) -> Result<f64> {
    blockwise_threshold(noise_var, n_antennas, 1, pilot_energy, p_fa)
}

/// Threshold for the mean block energy of a pilot despread over `n_blocks` equal
/// blocks. Each block estimate has per-antenna noise variance
/// `n_blocks * noise_var / pilot_energy`, so the statistic is Gamma with shape
/// `n_antennas * n_blocks` and scale `noise_var / pilot_energy`.
pub fn blockwise_threshold(
    noise_var: f64,
    n_antennas: usize,
    n_blocks: usize,
    pilot_energy: f64,
    p_fa: f64,
) -> Result<f64> {
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(Error::InvalidConfig(format!("p_fa must lie in (0, 1), got {p_fa}")));
    }
    if n_antennas == 0 || n_blocks == 0 || !(pilot_energy > 0.0) || !(noise_var >= 0.0) {
        return Err(Error::InvalidConfig("threshold inputs must be positive".into()));
    }
    let shape = (n_antennas * n_blocks) as f64;
    let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(noise_var / pilot_energy * gamma.inverse_cdf(1.0 - p_fa))
}

/// Keeps estimates whose energy exceeds `threshold`, strongest first.
pub fn detect_active(estimates: &[PilotEstimate], threshold: f64) -> DetectionResult {
    let mut entries: Vec<PilotEstimate> = estimates.iter().filter(|e| e.energy > threshold).cloned().collect();
    entries.sort_by(|a, b| {
        b.energy
            .total_cmp(&a.energy)
            .then(a.region.cmp(&b.region))
            .then(a.id.cmp(&b.id))
    });
    DetectionResult { entries }
}

/// Estimation plus detection over all regions of `set`.
pub fn detect(y_pilots: &[CMatrix], set: &PilotSet, noise_var: f64, p_fa: f64) -> Result<DetectionResult> {
    let estimates = estimate_spatial_channels(y_pilots, set)?;
    let proto = set.pattern(0, 0);
    let m_ant = y_pilots[0].nrows();
    let t = blockwise_threshold(noise_var, m_ant, proto.n_blocks, proto.energy(), p_fa)?;
    Ok(detect_active(&estimates, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_gaussian, synthesize_clean, ChannelRealization, UeTransmission};
    use crate::frame::GridConfig;
    use crate::pilots::{build_pilot_set, PilotAssignment, PilotScheme};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ue(rng: &mut ChaCha8Rng, grid: &GridConfig, ids: Vec<usize>) -> UeTransmission {
        let col: Vec<Complex64> = (0..8).map(|_| complex_gaussian(rng, 1.0)).collect();
        UeTransmission {
            channel: ChannelRealization {
                h: CMatrix::from_fn(8, grid.n_subcarriers(), |m, _| col[m]),
                to: 0.0,
                fo: 0.0,
            },
            pilots: PilotAssignment { ids },
            symbols: vec![Complex64::new(1.0, 0.0); grid.data_len()],
        }
    }

    #[test]
    fn exact_single_and_collided() {
        let grid = GridConfig::new(6, 1).unwrap();
        let set = build_pilot_set(PilotScheme::Esop, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = ue(&mut rng, &grid, vec![17]);
        let b = ue(&mut rng, &grid, vec![17]);
        let sig = synthesize_clean(std::slice::from_ref(&a), &set, &grid, 8).unwrap();
        let est = estimate_spatial_channels(&sig.pilots, &set).unwrap();
        let h = a.channel.h.column(0).into_owned();
        assert!((&est[17].h - &h).norm() < 1e-12);
        assert!(est.iter().enumerate().all(|(i, e)| i == 17 || e.energy == 0.0));

        let sig = synthesize_clean(&[a.clone(), b.clone()], &set, &grid, 8).unwrap();
        let est = estimate_spatial_channels(&sig.pilots, &set).unwrap();
        let sum = h + b.channel.h.column(0);
        assert!((&est[17].h - sum).norm() < 1e-12);
    }

    #[test]
    fn top_blocks_are_exact_and_orthogonal() {
        for regions in [1, 2] {
            let grid = GridConfig::new(6, regions).unwrap();
            let set = build_pilot_set(PilotScheme::Top, &grid).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let ids = vec![5; regions];
            let a = ue(&mut rng, &grid, ids);
            let b = ue(&mut rng, &grid, vec![6; regions]);
            let sig = synthesize_clean(&[a.clone(), b], &set, &grid, 8).unwrap();
            let est = estimate_spatial_channels(&sig.pilots, &set).unwrap();
            let h = a.channel.h.column(0).into_owned();
            assert_eq!(est[5].blocks.len(), 6);
            for blk in &est[5].blocks {
                assert!((blk - &h).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn threshold_closed_form() {
        // M = 1: exponential tail exp(-T |p|^2 / s2).
        let t = detection_threshold(2.0, 1, 1.0, (-1.0f64).exp()).unwrap();
        assert!((t - 2.0).abs() < 1e-9);
        let t = detection_threshold(0.5, 1, 4.0, 1e-3).unwrap();
        assert!((t - 0.5 / 4.0 * 1e3f64.ln()).abs() < 1e-9);
        assert_eq!(detection_threshold(0.0, 8, 1.0, 1e-3).unwrap(), 0.0);
        assert!(detection_threshold(1.0, 8, 1.0, 0.0).is_err());
        assert!(detection_threshold(1.0, 8, 1.0, 1.0).is_err());
    }

    #[test]
    fn threshold_matches_gamma_tail() {
        // Upper regularized incomplete gamma at the threshold is p_fa.
        for (m, blocks, p) in [(8usize, 1usize, 1e-3), (4, 6, 1e-2), (2, 1, 0.2)] {
            let t = blockwise_threshold(1.0, m, blocks, 1.0, p).unwrap();
            let q = statrs::function::gamma::gamma_ur((m * blocks) as f64, t);
            assert!((q - p).abs() < 1e-9 * p.max(1e-3), "{q} vs {p}");
        }
    }

    #[test]
    fn detection_sorted_and_filtered() {
        let mk = |id, energy| PilotEstimate {
            region: 0,
            id,
            blocks: vec![],
            h: CVector::zeros(1),
            energy,
        };
        let d = detect_active(&[mk(0, 1.0), mk(1, 5.0), mk(2, 0.1), mk(3, 3.0)], 0.5);
        let ids: Vec<usize> = d.entries.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![1, 3, 0]);
    }
}

//! Multi-user receiver: activity detection, spatial combining, blind phase
//! equalization, decoding and successive interference cancellation (SIC).

mod combine;
mod detect;
mod pm;
mod sic;
mod top;

use std::collections::HashSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use self::combine::{
    combine, mmse_weights, ry_weights, ry_weights_with, sample_covariance, CombinerWeights,
};
pub use self::detect::{
    blockwise_threshold, despread, detect, detect_active, detection_threshold, estimate_spatial_channels,
    CVector, DetectionResult, PilotEstimate,
};
pub use self::pm::{estimate_slope, pm_equalize, pm_group_rotation, wrap, Axis, Equalized, PhaseRamp, PmConfig};
pub use self::sic::{
    cancel_data, cancel_pilot, cancel_pilot_if_reducing, channel_correlation, data_assisted_ls, ramped_symbols, reconstruct_and_cancel,
    subchannel,
};
pub use self::top::{block_phase_slope, estimate_top_subband, SubbandEstimate};

use crate::channel::{CMatrix, ReceivedSignal};
use crate::error::{Error, Result};
use crate::frame::{GridConfig, GridCoord};
use crate::phy::{hard_decision, modulate, CodeConfig, Modulation};
use crate::pilots::{PilotScheme, PilotSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinerKind {
    /// ESOP on flat channels: MMSE, then a covariance-based retry of every CRC
    /// failure. MMSE alone everywhere else.
    Auto,
    /// `h^H (H H^H + s2 I)^-1` over the detected candidates.
    Mmse,
    /// `h^H R_y^-1` with the sample covariance of the received data.
    Ry,
}

impl CombinerKind {
    /// Combiners tried in order; later stages only see earlier CRC failures.
    ///
    /// The covariance combiner suppresses undetected and collided interferers
    /// that MMSE cannot see, but with fewer users than antennas it nulls part of
    /// the desired signal through the estimation error. Under frequency
    /// selectivity a single-subcarrier estimate mismatches the desired signal
    /// everywhere else, so it is not used there.
    pub fn stages(self, scheme: PilotScheme, selective: bool) -> &'static [CombinerKind] {
        match (self, scheme, selective) {
            (CombinerKind::Auto, PilotScheme::Esop, false) => &[CombinerKind::Mmse, CombinerKind::Ry],
            (CombinerKind::Auto, ..) | (CombinerKind::Mmse, ..) => &[CombinerKind::Mmse],
            (CombinerKind::Ry, ..) => &[CombinerKind::Ry],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverConfig {
    pub p_fa: f64,
    pub combiner: CombinerKind,
    /// Frequency groups `G` for slope and gain estimation; must divide `J`.
    pub pm_groups_freq: usize,
    /// Time groups; must divide the number of data symbols.
    pub pm_groups_time: usize,
    pub pm_alternations: usize,
    /// Subchannels for data-assisted refinement. Defaults to one subchannel for
    /// flat operation and `pm_groups_freq / 6` in selective mode.
    pub ls_groups: Option<usize>,
    pub max_sic_rounds: usize,
    /// Estimate one gain per frequency group instead of one per slot.
    pub selective_mode: bool,
    pub pairing_threshold: f64,
    /// Decision-directed recombining passes on the ESOP path. Defaults to 2 in
    /// selective mode and 0 otherwise.
    pub refine_passes: Option<usize>,
    /// Taken from the `[phy]` section when loaded from a file.
    #[serde(skip)]
    pub modulation: Modulation,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            p_fa: 1e-3,
            combiner: CombinerKind::Auto,
            pm_groups_freq: 24,
            pm_groups_time: 4,
            pm_alternations: 2,
            ls_groups: None,
            max_sic_rounds: 10,
            selective_mode: false,
            pairing_threshold: 0.7,
            refine_passes: None,
            modulation: Modulation::Bpsk,
        }
    }
}

impl ReceiverConfig {
    pub fn ls_groups(&self) -> usize {
        self.ls_groups
            .unwrap_or(if self.selective_mode { (self.pm_groups_freq / 6).max(1) } else { 1 })
    }

    pub fn refine_passes(&self) -> usize {
        self.refine_passes.unwrap_or(if self.selective_mode { 2 } else { 0 })
    }

    pub fn pm(&self) -> PmConfig {
        PmConfig {
            groups_freq: self.pm_groups_freq,
            groups_time: self.pm_groups_time,
            alternations: self.pm_alternations,
            selective: self.selective_mode,
            modulation: self.modulation,
        }
    }

    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return bad(format!("p_fa must lie in (0, 1), got {}", self.p_fa));
        }
        let j = grid.n_subcarriers();
        if self.pm_groups_freq == 0 || j % self.pm_groups_freq != 0 {
            return bad(format!("pm_groups_freq {} does not divide {j}", self.pm_groups_freq));
        }
        let t = grid.data_symbols().len();
        if self.pm_groups_time == 0 || t % self.pm_groups_time != 0 {
            return bad(format!("pm_groups_time {} does not divide {t}", self.pm_groups_time));
        }
        let ls = self.ls_groups();
        if ls == 0 || j % ls != 0 {
            return bad(format!("ls_groups {ls} does not divide {j}"));
        }
        if !(0.0..=1.0).contains(&self.pairing_threshold) {
            return bad(format!("pairing_threshold must lie in [0, 1], got {}", self.pairing_threshold));
        }
        if self.max_sic_rounds == 0 {
            return bad("max_sic_rounds must be positive".into());
        }
        Ok(())
    }
}

/// A UE recovered by the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedUser {
    /// `(region, pilot id)` of every pilot attributed to this UE.
    pub pilots: Vec<(usize, usize)>,
    pub payload: Vec<u8>,
    /// Refined channel per frequency subchannel, `M x ls_groups`.
    pub channel: CMatrix,
    /// Estimated offset ramp used for reconstruction.
    pub ramp: PhaseRamp,
    /// Re-modulated transmitted symbols.
    pub symbols: Vec<Complex64>,
    pub sic_round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub region: usize,
    pub id: usize,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    pub detections: Vec<DetectionRecord>,
    pub crc_passes: usize,
    pub new_users: usize,
    pub duplicates: usize,
    pub crc_failures: usize,
    /// Pilot plus data energy of the residual after this round's cancellations.
    pub residual_energy: f64,
    /// Residual energy after each individual cancellation in this round.
    pub cancellation_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReceiverOutput {
    pub users: Vec<DecodedUser>,
    pub rounds: Vec<RoundDiagnostics>,
    pub residual: ReceivedSignal,
}

struct Candidate {
    est: PilotEstimate,
    anchor: GridCoord,
    subband: Option<SubbandEstimate>,
}

impl Candidate {
    /// Estimated channel at subcarrier `j`.
    fn h_at(&self, j: usize) -> CVector {
        match &self.subband {
            Some(s) => s.h.column(j).into_owned(),
            None => self.est.h.clone(),
        }
    }
}

struct Attempt {
    payload: Vec<u8>,
    symbols: Vec<Complex64>,
    ramp: PhaseRamp,
}

/// Runs detection, combining, equalization, decoding and SIC on one slot.
pub fn run_receiver(
    sig: &ReceivedSignal,
    set: &PilotSet,
    grid: &GridConfig,
    code: &CodeConfig,
    cfg: &ReceiverConfig,
) -> Result<ReceiverOutput> {
    cfg.validate(grid)?;
    if sig.data.ncols() != grid.data_len() || sig.pilots.len() != set.n_regions() {
        return Err(Error::Dimension("received signal does not match grid".into()));
    }
    let stages = cfg.combiner.stages(set.scheme(), cfg.selective_mode);
    let noise_var = sig.noise_var;
    let ls_groups = cfg.ls_groups();
    let mut residual = sig.clone();
    let mut users: Vec<DecodedUser> = Vec::new();
    let mut rounds = Vec::new();

    for round in 0..cfg.max_sic_rounds {
        let det = detect(&residual.pilots, set, noise_var, cfg.p_fa)?;
        let mut diag = RoundDiagnostics {
            round,
            detections: det
                .entries
                .iter()
                .map(|e| DetectionRecord {
                    region: e.region,
                    id: e.id,
                    energy: e.energy,
                })
                .collect(),
            crc_passes: 0,
            new_users: 0,
            duplicates: 0,
            crc_failures: 0,
            residual_energy: residual.energy(),
            cancellation_trace: Vec::new(),
        };
        if det.is_empty() {
            rounds.push(diag);
            break;
        }
        let candidates: Vec<Candidate> = det
            .entries
            .iter()
            .map(|e| {
                let pattern = set.pattern(e.region, e.id);
                let subband = match set.scheme() {
                    PilotScheme::Top => Some(estimate_top_subband(e, pattern, grid)),
                    PilotScheme::Esop => None,
                };
                Candidate {
                    est: e.clone(),
                    anchor: pattern.entries[0].coord,
                    subband,
                }
            })
            .collect();

        let mut attempts: Vec<Option<Attempt>> = (0..candidates.len()).map(|_| None).collect();
        for &combiner in stages {
            let pending: Vec<usize> = (0..candidates.len()).filter(|&i| attempts[i].is_none()).collect();
            if pending.is_empty() {
                break;
            }
            let results = decode_candidates(&candidates, &pending, &residual, grid, code, cfg, combiner)?;
            for (i, r) in pending.into_iter().zip(results) {
                attempts[i] = r;
            }
        }

        let mut consumed: HashSet<(usize, usize)> = HashSet::new();
        for (ci, attempt) in attempts.into_iter().enumerate() {
            let Some(attempt) = attempt else {
                diag.crc_failures += 1;
                continue;
            };
            diag.crc_passes += 1;
            let cand = &candidates[ci];
            let key = (cand.est.region, cand.est.id);
            if let Some(u) = users.iter_mut().find(|u| u.payload == attempt.payload) {
                diag.duplicates += 1;
                if !consumed.contains(&key)
                    && !u.pilots.contains(&key)
                    && cancel_pilot_if_reducing(
                        &mut residual.pilots[key.0],
                        &u.channel,
                        &u.ramp,
                        set.pattern(key.0, key.1),
                        grid,
                    )
                {
                    u.pilots.push(key);
                    consumed.insert(key);
                    diag.cancellation_trace.push(residual.energy());
                }
                continue;
            }
            let reference = ramped_symbols(&attempt.symbols, &attempt.ramp, grid);
            let channel = data_assisted_ls(&residual.data, &reference, grid, ls_groups)?;
            let mut pilots = Vec::with_capacity(set.n_regions());
            if !consumed.contains(&key) {
                pilots.push(key);
            }
            if set.n_regions() > 1 {
                let partner = candidates
                    .iter()
                    .filter(|c| c.est.region != key.0 && !consumed.contains(&(c.est.region, c.est.id)))
                    .map(|c| {
                        let p = set.pattern(c.est.region, c.est.id);
                        (c, channel_correlation(&c.est, p, &channel, grid))
                    })
                    .filter(|(_, r)| *r > cfg.pairing_threshold)
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((c, _)) = partner {
                    pilots.push((c.est.region, c.est.id));
                }
            }
            cancel_data(&mut residual.data, &channel, &reference, grid);
            consumed.extend(pilots.iter().copied());
            pilots.retain(|&(r, id)| {
                cancel_pilot_if_reducing(&mut residual.pilots[r], &channel, &attempt.ramp, set.pattern(r, id), grid)
            });
            diag.cancellation_trace.push(residual.energy());
            diag.new_users += 1;
            users.push(DecodedUser {
                pilots,
                payload: attempt.payload,
                channel,
                ramp: attempt.ramp,
                symbols: attempt.symbols,
                sic_round: round,
            });
        }
        diag.residual_energy = residual.energy();
        let progress = diag.new_users;
        rounds.push(diag);
        if progress == 0 {
            break;
        }
    }
    Ok(ReceiverOutput {
        users,
        rounds,
        residual,
    })
}

/// Combines, equalizes and decodes the `pending` candidates; `None` marks a CRC
/// failure. MMSE weights are built over all candidates of a region.
fn decode_candidates(
    candidates: &[Candidate],
    pending: &[usize],
    sig: &ReceivedSignal,
    grid: &GridConfig,
    code: &CodeConfig,
    cfg: &ReceiverConfig,
    combiner: CombinerKind,
) -> Result<Vec<Option<Attempt>>> {
    let n_regions = sig.pilots.len();
    let cov = match combiner {
        CombinerKind::Ry => Some(sample_covariance(&sig.data)?),
        _ => None,
    };
    let mut out: Vec<Option<Attempt>> = (0..candidates.len()).map(|_| None).collect();
    // MMSE is built per region: the same UE is seen once in every region, and
    // treating its two estimates as different users would null its own signal.
    // Covariance weights only depend on the candidate itself.
    let groups: Vec<Vec<usize>> = match combiner {
        CombinerKind::Ry => vec![pending.to_vec()],
        _ => (0..n_regions)
            .map(|r| (0..candidates.len()).filter(|&i| candidates[i].est.region == r).collect())
            .collect(),
    };
    for members in groups.iter().filter(|m| m.iter().any(|i| pending.contains(i))) {
        let cands: Vec<&Candidate> = members.iter().map(|&i| &candidates[i]).collect();
        let wanted: Vec<bool> = members.iter().map(|i| pending.contains(i)).collect();
        let results = if cands[0].subband.is_some() {
            decode_subband(&cands, &wanted, sig, grid, code, cfg, cov.as_ref())?
        } else {
            decode_flat(&cands, &wanted, sig, grid, code, cfg, cov.as_ref())?
        };
        for (&i, r) in members.iter().zip(results) {
            out[i] = r;
        }
    }
    Ok(pending.iter().map(|&i| out[i].take()).collect())
}

fn try_decode(llrs: &[f64], code: &CodeConfig, modulation: Modulation, ramp: PhaseRamp) -> Result<Option<Attempt>> {
    let res = code.decode_block(llrs)?;
    if !res.crc_ok {
        return Ok(None);
    }
    let cw = code.encode_payload(&res.payload)?;
    let symbols = modulate(&cw, modulation)?;
    Ok(Some(Attempt {
        payload: res.payload,
        symbols,
        ramp,
    }))
}

/// ESOP path: one combiner per candidate, then blind phase equalization.
///
/// With refinement passes, every candidate's spatial channel is re-estimated per
/// subchannel from its current symbol decisions (re-encoded codewords where the
/// CRC passed, hard decisions otherwise) and the whole group is recombined with
/// per-subchannel weights.
fn decode_flat(
    cands: &[&Candidate],
    wanted: &[bool],
    sig: &ReceivedSignal,
    grid: &GridConfig,
    code: &CodeConfig,
    cfg: &ReceiverConfig,
    cov: Option<&CMatrix>,
) -> Result<Vec<Option<Attempt>>> {
    let m_ant = sig.n_antennas();
    let q_n = cands.len();
    let h_hat = CMatrix::from_fn(m_ant, q_n, |m, q| cands[q].est.h[m]);
    let w = match cov {
        Some(r) => ry_weights_with(r, &h_hat)?,
        None => mmse_weights(&h_hat, sig.noise_var)?,
    };
    let s_hat = combine(&w, &sig.data)?;
    let pm_cfg = cfg.pm();
    let mut out: Vec<Option<Attempt>> = Vec::with_capacity(q_n);
    let mut decisions: Vec<Option<Vec<Complex64>>> = Vec::with_capacity(q_n);
    for (q, cand) in cands.iter().enumerate() {
        if !wanted[q] {
            out.push(None);
            decisions.push(None);
            continue;
        }
        let symbols: Vec<Complex64> = s_hat.row(q).iter().copied().collect();
        let (attempt, decided) = equalize_and_decode(&symbols, grid, code, cfg, &pm_cfg, cand.anchor)?;
        out.push(attempt);
        decisions.push(decided);
    }

    let n_sub = cfg.ls_groups();
    let j_total = grid.n_subcarriers();
    for _ in 0..cfg.refine_passes() {
        if out.iter().zip(wanted).all(|(o, w)| o.is_some() || !w) {
            break;
        }
        // Candidates without usable decisions keep their pilot estimate everywhere.
        let mut channels = Vec::with_capacity(q_n);
        for (q, d) in decisions.iter().enumerate() {
            let h = match d {
                Some(reference) => data_assisted_ls(&sig.data, reference, grid, n_sub)?,
                None => CMatrix::from_fn(m_ant, n_sub, |m, _| cands[q].est.h[m]),
            };
            channels.push(h);
        }
        let mut weights = Vec::with_capacity(n_sub);
        for g in 0..n_sub {
            let h_g = CMatrix::from_fn(m_ant, q_n, |m, q| channels[q][(m, g)]);
            weights.push(mmse_weights(&h_g, sig.noise_var)?);
        }
        for q in 0..q_n {
            if out[q].is_some() || !wanted[q] {
                continue;
            }
            let symbols: Vec<Complex64> = grid
                .data_coords()
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let w = &weights[subchannel(c.subcarrier, j_total, n_sub)];
                    w.w.row(q).iter().zip(sig.data.column(i).iter()).map(|(a, b)| a * b).sum()
                })
                .collect();
            let (attempt, decided) = equalize_and_decode(&symbols, grid, code, cfg, &pm_cfg, cands[q].anchor)?;
            out[q] = attempt;
            if decided.is_some() {
                decisions[q] = decided;
            }
        }
    }
    Ok(out)
}

/// Returns the decode attempt plus ramped symbol decisions for later refinement.
fn equalize_and_decode(
    symbols: &[Complex64],
    grid: &GridConfig,
    code: &CodeConfig,
    cfg: &ReceiverConfig,
    pm_cfg: &PmConfig,
    anchor: GridCoord,
) -> Result<(Option<Attempt>, Option<Vec<Complex64>>)> {
    let eq = match pm_equalize(symbols, grid, pm_cfg, anchor) {
        Ok(eq) => eq,
        // Degenerate blind estimates mean the candidate cannot be decoded.
        Err(Error::UndefinedRotation) => return Ok((None, None)),
        Err(e) => return Err(e),
    };
    let llrs = eq.llrs(grid, cfg.modulation);
    let attempt = try_decode(&llrs, code, cfg.modulation, eq.ramp)?;
    if cfg.refine_passes() == 0 {
        return Ok((attempt, None));
    }
    let decided = match &attempt {
        Some(a) => a.symbols.clone(),
        None => modulate(&hard_decision(&llrs), cfg.modulation)?,
    };
    Ok((attempt, Some(ramped_symbols(&decided, &eq.ramp, grid))))
}

/// TOP path: per-subcarrier combiner from interpolated subband estimates, no blind
/// phase tracking.
fn decode_subband(
    cands: &[&Candidate],
    wanted: &[bool],
    sig: &ReceivedSignal,
    grid: &GridConfig,
    code: &CodeConfig,
    cfg: &ReceiverConfig,
    cov: Option<&CMatrix>,
) -> Result<Vec<Option<Attempt>>> {
    let m_ant = sig.n_antennas();
    let j_total = grid.n_subcarriers();
    let q_n = cands.len();
    // weights[j] is Q x M.
    let mut weights = Vec::with_capacity(j_total);
    for j in 0..j_total {
        let cols: Vec<CVector> = cands.iter().map(|c| c.h_at(j)).collect();
        let h_j = CMatrix::from_fn(m_ant, q_n, |m, q| cols[q][m]);
        let w = match cov {
            Some(r) => ry_weights_with(r, &h_j)?,
            None => mmse_weights(&h_j, sig.noise_var)?,
        };
        let resp: Vec<Complex64> = (0..q_n).map(|q| w.response(q, cols[q].as_slice())).collect();
        weights.push((w, resp));
    }
    let n_groups = cfg.pm_groups_freq;
    let mut out = Vec::with_capacity(q_n);
    for (q, cand) in cands.iter().enumerate() {
        if !wanted[q] {
            out.push(None);
            continue;
        }
        let mut s = Vec::with_capacity(grid.data_len());
        let mut pow = vec![0.0; n_groups];
        let mut gain2 = vec![0.0; n_groups];
        let mut count = vec![0usize; n_groups];
        for (i, c) in grid.data_coords().iter().enumerate() {
            let (w, resp) = &weights[c.subcarrier];
            let y = sig.data.column(i);
            let v: Complex64 = w.w.row(q).iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            let g = subchannel(c.subcarrier, j_total, n_groups);
            pow[g] += v.norm_sqr();
            gain2[g] += resp[q].norm_sqr();
            count[g] += 1;
            s.push(v);
        }
        let var: Vec<f64> = (0..n_groups)
            .map(|g| {
                let n = count[g] as f64;
                let p = pow[g] / n;
                (p - gain2[g] / n).max(0.1 * p).max(f64::MIN_POSITIVE)
            })
            .collect();
        let mut llrs = Vec::with_capacity(code.coded_bits());
        for (v, c) in s.iter().zip(grid.data_coords()) {
            let gain = weights[c.subcarrier].1[q];
            crate::phy::symbol_llrs(*v, gain, var[subchannel(c.subcarrier, j_total, n_groups)], cfg.modulation, &mut llrs);
        }
        let slope = cand.subband.as_ref().map_or(0.0, |s| s.freq_slope);
        let ramp = PhaseRamp {
            freq_slope: slope,
            time_slope: 0.0,
            anchor: cand.anchor,
        };
        out.push(try_decode(&llrs, code, cfg.modulation, ramp)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_retries_with_covariance_only_for_flat_esop() {
        use CombinerKind::*;
        assert_eq!(Auto.stages(PilotScheme::Esop, false), &[Mmse, Ry]);
        assert_eq!(Auto.stages(PilotScheme::Esop, true), &[Mmse]);
        assert_eq!(Auto.stages(PilotScheme::Top, false), &[Mmse]);
        assert_eq!(Ry.stages(PilotScheme::Top, true), &[Ry]);
        assert_eq!(Mmse.stages(PilotScheme::Esop, false), &[Mmse]);
    }

    #[test]
    fn selective_mode_defaults() {
        let mut cfg = ReceiverConfig::default();
        assert_eq!((cfg.ls_groups(), cfg.refine_passes()), (1, 0));
        cfg.selective_mode = true;
        cfg.pm_groups_freq = 24;
        assert_eq!((cfg.ls_groups(), cfg.refine_passes()), (4, 2));
    }
}

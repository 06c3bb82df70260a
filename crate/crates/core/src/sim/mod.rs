//! Monte Carlo engine: single trials, parameter sweeps and reports.

mod config;
mod report;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use self::config::{ChannelSection, FrameSection, PhySection, PilotSection, SimConfig, SweepSection};
pub use self::report::{
    collision_sweep, max_supported_k, write_collision_csv, write_report_csv, CollisionRow, PointReport, SimReport,
    CSV_HEADER,
};

use crate::channel::{draw_channel, fo_phase_slope, synthesize, to_phase_slope, ChannelModel, UeTransmission};
use crate::error::{Error, Result};
use crate::frame::GridConfig;
use crate::phy::{modulate, CodeConfig};
use crate::pilots::{build_pilot_set_with_energy, collided_flags, select_pilots, PilotSet};
use crate::receiver::{run_receiver, ReceiverConfig, ReceiverOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Decoded,
    /// No pilot of the UE was ever detected.
    Missed,
    /// Every pilot of the UE was shared with another UE and the UE was not decoded.
    CollidedUndetected,
    /// Detected, not collided, but never recovered with a valid CRC.
    CrcFail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub outcomes: Vec<Outcome>,
    /// UEs whose every pilot collided, decoded or not.
    pub collided: usize,
    pub sic_rounds: usize,
    /// First-round detections on pilots no UE transmitted.
    pub false_alarms: usize,
    /// Pilot hypotheses no UE transmitted.
    pub idle_pilots: usize,
    /// Per UE: estimated minus true phase slope across subcarriers, if decoded.
    pub to_slope_error: Vec<Option<f64>>,
    /// Per UE: estimated minus true phase slope across symbols, if decoded.
    pub fo_slope_error: Vec<Option<f64>>,
}

impl TrialResult {
    pub fn count(&self, o: Outcome) -> usize {
        self.outcomes.iter().filter(|&&x| x == o).count()
    }
}

/// Per-trial generator, a pure function of the sweep seed and the trial coordinates.
pub fn trial_rng(base_seed: u64, k: usize, snr_db: f64, trial: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&base_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&(k as u64).to_le_bytes());
    seed[16..24].copy_from_slice(&snr_db.to_bits().to_le_bytes());
    seed[24..].copy_from_slice(&trial.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Everything needed to run trials of one configuration. Immutable and shared by
/// all workers.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub config: SimConfig,
    pub grid: GridConfig,
    pub pilots: PilotSet,
    pub code: CodeConfig,
    pub channel: ChannelModel,
    pub receiver: ReceiverConfig,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let pilots = build_pilot_set_with_energy(config.pilots.scheme, &grid, config.pilots.energy)?;
        let code = config.code()?;
        let channel = config.channel_model();
        let mut receiver = config.receiver.clone();
        receiver.modulation = config.phy.modulation;
        Ok(Self {
            config,
            grid,
            pilots,
            code,
            channel,
            receiver,
        })
    }

    /// One slot with `k` active UEs at `snr_db`, drawn from `rng`.
    pub fn run_trial_detailed(&self, rng: &mut ChaCha8Rng, k: usize, snr_db: f64) -> Result<(TrialResult, ReceiverOutput)> {
        let grid = &self.grid;
        let ch = &self.config.channel;
        let info = self.code.info_bits();
        let payloads: Vec<Vec<u8>> = (0..k).map(|_| (0..info).map(|_| rng.random_range(0..2u8)).collect()).collect();
        let assignments = select_pilots(rng, k, &self.pilots);
        let to_max = ch.to_max_cp * grid.cp_length();
        let mut ues = Vec::with_capacity(k);
        for (payload, pilots) in payloads.iter().zip(&assignments) {
            let channel = draw_channel(rng, &self.channel, ch.antennas, grid, to_max, ch.fo_max_hz);
            let cw = self.code.encode_payload(payload)?;
            let symbols: Vec<Complex64> = modulate(&cw, self.config.phy.modulation)?;
            ues.push(UeTransmission {
                channel,
                pilots: pilots.clone(),
                symbols,
            });
        }
        let noise_var = noise_variance(snr_db);
        let sig = synthesize(&ues, &self.pilots, grid, ch.antennas, noise_var, rng)?;
        let out = run_receiver(&sig, &self.pilots, grid, &self.code, &self.receiver)?;

        let collided = if k > 0 {
            collided_flags(&assignments, self.pilots.n_per_region())
        } else {
            Vec::new()
        };
        let n_per = self.pilots.n_per_region();
        let n_hyp = n_per * self.pilots.n_regions();
        let mut detected = vec![false; n_hyp];
        for round in &out.rounds {
            for d in &round.detections {
                detected[d.region * n_per + d.id] = true;
            }
        }
        let mut used = vec![false; n_hyp];
        for a in &assignments {
            for (r, &id) in a.ids.iter().enumerate() {
                used[r * n_per + id] = true;
            }
        }
        let false_alarms = out.rounds.first().map_or(0, |r| {
            r.detections.iter().filter(|d| !used[d.region * n_per + d.id]).count()
        });
        let idle_pilots = used.iter().filter(|&&u| !u).count();

        let mut outcomes = Vec::with_capacity(k);
        let mut to_err = Vec::with_capacity(k);
        let mut fo_err = Vec::with_capacity(k);
        for (i, ue) in ues.iter().enumerate() {
            let user = out.users.iter().find(|u| u.payload == payloads[i]);
            let outcome = if user.is_some() {
                Outcome::Decoded
            } else if collided[i] {
                Outcome::CollidedUndetected
            } else if ue
                .pilots
                .ids
                .iter()
                .enumerate()
                .all(|(r, &id)| !detected[r * n_per + id])
            {
                Outcome::Missed
            } else {
                Outcome::CrcFail
            };
            outcomes.push(outcome);
            to_err.push(user.map(|u| u.ramp.freq_slope - to_phase_slope(ue.channel.to, grid)));
            fo_err.push(user.map(|u| u.ramp.time_slope - fo_phase_slope(ue.channel.fo, grid)));
        }
        let result = TrialResult {
            outcomes,
            collided: collided.iter().filter(|&&c| c).count(),
            sic_rounds: out.rounds.len(),
            false_alarms,
            idle_pilots,
            to_slope_error: to_err,
            fo_slope_error: fo_err,
        };
        Ok((result, out))
    }

    /// Trial `trial` of the point `(k, snr_db)` under sweep seed `base_seed`.
    pub fn run_trial(&self, base_seed: u64, k: usize, snr_db: f64, trial: u64) -> Result<TrialResult> {
        let mut rng = trial_rng(base_seed, k, snr_db, trial);
        Ok(self.run_trial_detailed(&mut rng, k, snr_db)?.0)
    }

    /// All trials of one point, in trial order.
    pub fn run_point(&self, k: usize, snr_db: f64, trials: usize) -> Result<PointReport> {
        let seed = self.config.sim.seed;
        let results: Vec<TrialResult> = (0..trials as u64)
            .into_par_iter()
            .map(|t| self.run_trial(seed, k, snr_db, t))
            .collect::<Result<_>>()?;
        Ok(PointReport::aggregate(&self.config, k, snr_db, &results))
    }

    /// Every `(K, SNR)` point of the configuration on a pool of
    /// `config.sim.workers` threads. Results do not depend on the worker count.
    pub fn run_sweep(&self) -> Result<SimReport> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.sim.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            let mut points = Vec::new();
            for &k in &self.config.sim.k {
                for &snr in &self.config.sim.snr_db {
                    points.push(self.run_point(k, snr, self.config.sim.trials)?);
                }
            }
            Ok(SimReport {
                config: self.config.clone(),
                points,
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(k: Vec<usize>) -> Simulator {
        let mut cfg = SimConfig::default();
        cfg.sim.k = k;
        cfg.sim.trials = 4;
        cfg.sim.workers = 1;
        Simulator::new(cfg).unwrap()
    }

    #[test]
    fn single_user_high_snr_decodes() {
        let s = sim(vec![1]);
        let r = s.run_trial(7, 1, 20.0, 0).unwrap();
        assert_eq!(r.outcomes, vec![Outcome::Decoded]);
        assert_eq!(r.to_slope_error[0].map(|e| e.abs() < 1e-2), Some(true));
    }

    #[test]
    fn trials_are_deterministic() {
        let s = sim(vec![6]);
        let a = s.run_trial(3, 6, 10.0, 5).unwrap();
        let b = s.run_trial(3, 6, 10.0, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.outcomes.len(), 6);
    }

    #[test]
    fn empty_slot() {
        let s = sim(vec![0]);
        let r = s.run_trial(1, 0, 10.0, 0).unwrap();
        assert!(r.outcomes.is_empty());
        assert_eq!(r.idle_pilots, 144);
    }

    #[test]
    fn trial_seeds_differ_per_coordinate() {
        let a: u64 = trial_rng(1, 2, 3.0, 4).random();
        for b in [trial_rng(2, 2, 3.0, 4), trial_rng(1, 3, 3.0, 4), trial_rng(1, 2, 3.5, 4), trial_rng(1, 2, 3.0, 5)] {
            let mut b = b;
            assert_ne!(a, b.random::<u64>());
        }
    }
}

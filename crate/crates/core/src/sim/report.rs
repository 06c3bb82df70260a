//! Aggregated metrics and their CSV serialization.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Outcome, SimConfig, TrialResult};
use crate::pilots::{collision_mc_stats, collision_prob_analytic, CollisionStats};

pub const CSV_HEADER: &str =
    "scheme,regions,channel,K,snr_db,trials,bler,ci_halfwidth,collision_rate,miss_rate,fa_rate,mean_sic_rounds";

/// Metrics of one `(K, SNR)` point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub scheme: String,
    pub regions: usize,
    pub channel: String,
    pub k: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub decoded: usize,
    pub missed: usize,
    pub collided_undetected: usize,
    pub crc_fail: usize,
    pub bler: f64,
    /// 95% normal-approximation binomial half-width of `bler`.
    pub ci_halfwidth: f64,
    pub collision_rate: f64,
    pub miss_rate: f64,
    pub fa_rate: f64,
    pub mean_sic_rounds: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl PointReport {
    pub fn aggregate(cfg: &SimConfig, k: usize, snr_db: f64, results: &[TrialResult]) -> Self {
        let blocks = k * results.len();
        let sum = |o: Outcome| results.iter().map(|r| r.count(o)).sum::<usize>();
        let decoded = sum(Outcome::Decoded);
        let bler = 1.0 - ratio(decoded, blocks);
        let bler = if blocks == 0 { 0.0 } else { bler };
        let ci = if blocks == 0 {
            0.0
        } else {
            1.96 * (bler * (1.0 - bler) / blocks as f64).sqrt()
        };
        let missed = sum(Outcome::Missed);
        let fa: usize = results.iter().map(|r| r.false_alarms).sum();
        let idle: usize = results.iter().map(|r| r.idle_pilots).sum();
        let collided: usize = results.iter().map(|r| r.collided).sum();
        let rounds: usize = results.iter().map(|r| r.sic_rounds).sum();
        Self {
            scheme: cfg.pilots.scheme.name().to_string(),
            regions: cfg.pilots.regions,
            channel: cfg.channel.model.name().to_string(),
            k,
            snr_db,
            trials: results.len(),
            decoded,
            missed,
            collided_undetected: sum(Outcome::CollidedUndetected),
            crc_fail: sum(Outcome::CrcFail),
            bler,
            ci_halfwidth: ci,
            collision_rate: ratio(collided, blocks),
            miss_rate: ratio(missed, blocks),
            fa_rate: ratio(fa, idle),
            mean_sic_rounds: ratio(rounds, results.len()),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.2},{},{:.6},{:.6},{:.6},{:.6},{:.8},{:.4}",
            self.scheme,
            self.regions,
            self.channel,
            self.k,
            self.snr_db,
            self.trials,
            self.bler,
            self.ci_halfwidth,
            self.collision_rate,
            self.miss_rate,
            self.fa_rate,
            self.mean_sic_rounds
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub points: Vec<PointReport>,
}

impl SimReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for p in &self.points {
            s.push_str(&p.csv_row());
            s.push('\n');
        }
        s
    }

    /// Config and per-point metrics as TOML.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

pub fn write_report_csv<W: Write>(report: &SimReport, mut w: W) -> std::io::Result<()> {
    w.write_all(report.to_csv().as_bytes())
}

/// Largest K reached, scanning `points` in ascending K, before the first point whose
/// BLER exceeds `target`. Zero if the smallest K already fails.
pub fn max_supported_k(points: &[PointReport], target: f64) -> usize {
    let mut sorted: Vec<&PointReport> = points.iter().collect();
    sorted.sort_by_key(|p| p.k);
    let mut best = 0;
    for p in sorted {
        if p.bler > target {
            break;
        }
        best = p.k;
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionRow {
    pub scheme: &'static str,
    pub n_regions: usize,
    pub n_per_region: usize,
    pub k: usize,
    pub analytic: f64,
    pub mc: CollisionStats,
}

/// Analytic and Monte Carlo collision probability for the four pilot layouts of the
/// default grid, each K in `ks`.
pub fn collision_sweep(ks: &[usize], trials: usize, seed: u64) -> Vec<CollisionRow> {
    let layouts = [("esop", 1, 144), ("top", 1, 24), ("esop", 2, 72), ("top", 2, 12)];
    let mut rows = Vec::new();
    for (li, &(scheme, regions, n)) in layouts.iter().enumerate() {
        for &k in ks {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((li as u64) << 32) ^ k as u64);
            rows.push(CollisionRow {
                scheme,
                n_regions: regions,
                n_per_region: n,
                k,
                analytic: collision_prob_analytic(n, k, regions),
                mc: collision_mc_stats(&mut rng, n, k, regions, trials),
            });
        }
    }
    rows
}

pub fn write_collision_csv<W: Write>(rows: &[CollisionRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "scheme,n_regions,N_per_region,K,analytic,mc,trials")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.6},{}",
            r.scheme, r.n_regions, r.n_per_region, r.k, r.analytic, r.mc.mean, r.mc.trials
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(k: usize, bler: f64) -> PointReport {
        PointReport {
            scheme: "esop".into(),
            regions: 1,
            channel: "flat".into(),
            k,
            snr_db: 20.0,
            trials: 1,
            decoded: 0,
            missed: 0,
            collided_undetected: 0,
            crc_fail: 0,
            bler,
            ci_halfwidth: 0.0,
            collision_rate: 0.0,
            miss_rate: 0.0,
            fa_rate: 0.0,
            mean_sic_rounds: 0.0,
        }
    }

    #[test]
    fn supported_k_stops_at_first_failure() {
        let pts = vec![point(20, 0.3), point(5, 0.0), point(10, 0.05), point(15, 0.2), point(25, 0.05)];
        assert_eq!(max_supported_k(&pts, 0.1), 10);
        assert_eq!(max_supported_k(&[point(5, 0.5)], 0.1), 0);
    }

    #[test]
    fn conservation_and_rates() {
        let cfg = SimConfig::default();
        let r = TrialResult {
            outcomes: vec![Outcome::Decoded, Outcome::Missed, Outcome::CrcFail, Outcome::CollidedUndetected],
            collided: 1,
            sic_rounds: 2,
            false_alarms: 1,
            idle_pilots: 140,
            to_slope_error: vec![None; 4],
            fo_slope_error: vec![None; 4],
        };
        let p = PointReport::aggregate(&cfg, 4, 20.0, &[r.clone(), r]);
        assert_eq!(p.decoded + p.missed + p.crc_fail + p.collided_undetected, 8);
        assert!((p.bler - 0.75).abs() < 1e-12);
        assert!((p.fa_rate - 2.0 / 280.0).abs() < 1e-12);
        assert_eq!(p.mean_sic_rounds, 2.0);
        assert_eq!(p.csv_row().split(',').count(), CSV_HEADER.split(',').count());
    }

    #[test]
    fn collision_csv_layout() {
        let rows = collision_sweep(&[5, 10], 100, 1);
        assert_eq!(rows.len(), 8);
        let mut buf = Vec::new();
        write_collision_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("scheme,n_regions,N_per_region,K,analytic,mc,trials\n"));
    }
}

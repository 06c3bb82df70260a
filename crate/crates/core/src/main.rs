use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use esop::sim::{collision_sweep, trial_rng, write_collision_csv, SimConfig, Simulator};

#[derive(Parser)]
#[command(version, about = "Grant-free uplink link-level simulator (ESOP vs TOP pilots)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic vs Monte Carlo pilot collision probability.
    Collision {
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated UE counts.
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30,35,40")]
        k: Vec<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Full BLER sweep described by a config file.
    Bler {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[sim] output`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the TOML report next to the CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// One slot with per-stage diagnostics.
    Trial {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        snr: f64,
    },
}

fn sink(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn load(path: Option<&PathBuf>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(SimConfig::default()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Collision { trials, seed, k, output } => {
            let rows = collision_sweep(&k, trials, seed);
            let mut w = sink(output.as_ref())?;
            write_collision_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::Bler { config, output, report } => {
            let cfg = load(Some(&config))?;
            let out = output.or_else(|| cfg.sim.output.clone());
            let sim = Simulator::new(cfg)?;
            let rep = sim.run_sweep()?;
            let mut w = sink(out.as_ref())?;
            w.write_all(rep.to_csv().as_bytes())?;
            w.flush()?;
            if let Some(p) = report {
                std::fs::write(&p, rep.to_text()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Trial { config, seed, k, snr } => {
            let sim = Simulator::new(load(config.as_ref())?)?;
            let mut rng = trial_rng(seed, k, snr, 0);
            let (result, out) = sim.run_trial_detailed(&mut rng, k, snr)?;
            let mut w = io::stdout().lock();
            writeln!(w, "seed={seed} K={k} snr_db={snr}")?;
            for r in &out.rounds {
                writeln!(
                    w,
                    "round {}: detections={} crc_passes={} new_users={} duplicates={} crc_failures={} residual_energy={:.4}",
                    r.round,
                    r.detections.len(),
                    r.crc_passes,
                    r.new_users,
                    r.duplicates,
                    r.crc_failures,
                    r.residual_energy
                )?;
                for d in &r.detections {
                    writeln!(w, "  pilot region={} id={} energy={:.4}", d.region, d.id, d.energy)?;
                }
            }
            for (i, o) in result.outcomes.iter().enumerate() {
                let slope = |e: Option<f64>| e.map_or("-".to_string(), |v| format!("{v:+.5}"));
                writeln!(
                    w,
                    "ue {i}: {:?} to_slope_err={} fo_slope_err={}",
                    o,
                    slope(result.to_slope_error[i]),
                    slope(result.fo_slope_error[i])
                )?;
            }
            writeln!(w, "false_alarms={} sic_rounds={}", result.false_alarms, result.sic_rounds)?;
        }
    }
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use pdm_ofdm::harness::{write_constellation_csv, write_point_outputs, write_sweep_outputs, RunRecord};
use pdm_ofdm::sic::Method;
use pdm_ofdm::{compute_rate, dump_constellation, run_once, run_sweep, Axis, RunConfig, Tap};

#[derive(Parser)]
#[command(name = "pdm-ofdm", version, about = "Two-branch power-division multiplexed OFDM link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and report per-branch BER.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run a configuration at each value of one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// pdr, snr_db, osnr_db or fiber_length_km
        #[arg(long)]
        axis: String,
        /// Comma-separated, strictly monotone values.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Dump first-frame samples at a receiver tap.
    Constellation {
        #[command(flatten)]
        common: Common,
        /// post_equalize, post_despread or residual
        #[arg(long, default_value = "post_despread")]
        tap: String,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    pdr: Option<f64>,
    #[arg(long)]
    snr_db: Option<f64>,
    /// sic or hierarchical
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    bits_per_branch: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.pdr {
            cfg.pdr = p;
        }
        if let Some(s) = self.snr_db {
            cfg.snr_db = Some(s);
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse::<Method>()?;
        }
        if let Some(b) = self.bits_per_branch {
            cfg.bits_per_branch = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = common.load()?;
            let outcome = run_once(&cfg)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("branch pol  ber          errors     bits       ci95");
            for r in &outcome.point.rows {
                println!(
                    "{:<6} {:<4} {:<12.4e} {:<10} {:<10} [{:.3e}, {:.3e}]",
                    r.branch, r.pol, r.ber, r.errors, r.bits, r.ci_lo, r.ci_hi
                );
            }
            println!("evm {:.4}  frames {}  rate {:.4} Gb/s", outcome.point.evm, outcome.point.frames, compute_rate(&cfg) / 1e9);
            write_point_outputs(&common.out, &cfg, &outcome)?;
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.load()?;
            let axis: Axis = axis.parse()?;
            let sweep = run_sweep(&cfg, axis, &values)?;
            for (v, f) in sweep.failures() {
                eprintln!("warning: {} = {v} failed: {f}", axis.column());
            }
            for p in &sweep.points {
                if let Some(r) = &p.result {
                    let ber: Vec<String> = (1..=2)
                        .filter_map(|b| r.branch(b).map(|row| format!("{:.4e}", row.ber)))
                        .collect();
                    println!("{} {:<8} {}", axis.column(), p.value, ber.join(" "));
                }
            }
            write_sweep_outputs(&common.out, &cfg, &sweep)?;
            if sweep.points.iter().all(|p| p.result.is_none()) {
                bail!("every sweep point failed");
            }
        }
        Command::Constellation { common, tap } => {
            let cfg = common.load()?;
            let tap: Tap = tap.parse()?;
            let points = dump_constellation(&cfg, tap)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join(format!("constellation_{}.csv", tap.name()));
            let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_constellation_csv(&points, file)?;
            RunRecord::new("constellation", &cfg).write(&common.out)?;
            println!("{} points -> {}", points.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

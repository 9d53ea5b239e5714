use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sfd_deom::cli::{exit_code, load, run, RunConfig, RunOptions, PRESETS};
use sfd_deom::Result;

/// Stochastic-field dissipaton propagation for a system coupled to a
/// non-linearly coupled Brownian-oscillator bath.
#[derive(Debug, Parser)]
#[command(name = "sfd-deom", version)]
struct Args {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in two-state case.
    #[arg(long, value_name = "NAME", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    #[arg(long, value_name = "N")]
    trajectories: Option<u64>,
    #[arg(long, value_name = "X")]
    dt: Option<f64>,
    #[arg(long, value_name = "X")]
    t_final: Option<f64>,
    /// Hierarchy truncation tier.
    #[arg(long, value_name = "L")]
    level: Option<usize>,
    /// Bose-function poles in the bath expansion.
    #[arg(long, value_name = "P")]
    poles: Option<usize>,
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, value_name = "W")]
    workers: Option<usize>,
    /// Propagate with the raw fields and no Girsanov weighting.
    #[arg(long)]
    no_gt: bool,
    /// Write fields.csv, sampling every STRIDE steps.
    #[arg(long, value_name = "STRIDE")]
    field_dump: Option<usize>,
    /// Decompose and validate the bath, write bath_validation.csv, and stop.
    #[arg(long)]
    validate_bath_only: bool,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

impl Args {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = load(self.config.as_deref(), self.preset.as_deref())?;
        if let Some(n) = self.trajectories {
            cfg.ensemble.n = n;
            cfg.ensemble.ladder.retain(|&m| m <= n);
        }
        if let Some(dt) = self.dt {
            cfg.integration.dt = dt;
        }
        if let Some(t) = self.t_final {
            cfg.integration.t_final = t;
        }
        if let Some(l) = self.level {
            cfg.hierarchy.level = l;
        }
        if let Some(p) = self.poles {
            cfg.bath.n_poles = p;
        }
        if let Some(s) = self.seed {
            cfg.ensemble.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.ensemble.workers = w;
        }
        if self.no_gt {
            cfg.flags.gt = false;
        }
        if let Some(stride) = self.field_dump {
            cfg.flags.field_dump_stride = stride;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let outcome = args.config().and_then(|cfg| {
        run(
            &cfg,
            &RunOptions {
                out_dir: args.out.clone(),
                validate_bath_only: args.validate_bath_only,
            },
        )
    });
    match outcome {
        Ok(outcome) => {
            if let Some(report) = &outcome.bath_report {
                println!(
                    "bath: max |C_fit - C| = {:.3e} ({:.3e} of |C(0)|)",
                    report.max_abs_error,
                    report.max_abs_error / report.c0_abs
                );
            }
            if let Some((result, _)) = &outcome.ensemble {
                let acc = &result.accumulator;
                println!(
                    "ensemble: {} accepted, {} discarded, {:.1} s",
                    acc.count(),
                    acc.discarded(),
                    result.wall_time
                );
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

//! Command-line front end: `simulate`, `train`, `eval` and `plot`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use foa_pinn::experiment::{self, ExperimentConfig};
use foa_pinn::physics::PriorMode;
use foa_pinn::Error;

#[derive(Parser)]
#[command(
    name = "foa-pinn",
    version,
    about = "Physics-informed reconstruction of FOA room impulse responses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground-truth datasets with the image-source method.
    Simulate(Common),
    /// Train neural fields on simulated datasets.
    Train(Common),
    /// Score trained checkpoints on the evaluation split.
    Eval(Common),
    /// Write W-channel slices of ground truth and predictions.
    Plot(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults to the full-scale protocol.
    #[arg(long, conflicts_with = "desk_scale")]
    config: Option<PathBuf>,
    /// Use the reduced desk-scale profile.
    #[arg(long)]
    desk_scale: bool,
    /// Restrict to one prior (none, wave or foa).
    #[arg(long)]
    method: Option<PriorMode>,
    /// Restrict to one room seed.
    #[arg(long)]
    room: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn resolve(&self) -> foa_pinn::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.desk_scale) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, true) => ExperimentConfig::desk_scale(),
            (None, false) => ExperimentConfig::default(),
        };
        if let Some(room) = self.room {
            cfg.rooms = vec![room];
        }
        if let Some(method) = self.method {
            cfg.methods = vec![method];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> foa_pinn::Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.resolve()?;
            for dir in experiment::cmd_simulate(&cfg, &c.out)? {
                println!("wrote {}", dir.display());
            }
        }
        Command::Train(c) => {
            let cfg = c.resolve()?;
            for &room in &cfg.rooms {
                for &method in &cfg.methods {
                    let outcome = experiment::cmd_train(&cfg, &c.out, room, method)?;
                    println!(
                        "{} {}: best validation NMSE(W) {:.2} dB at step {}",
                        experiment::room_name(room),
                        method,
                        outcome.best_val_nmse_w,
                        outcome.best.step
                    );
                }
            }
        }
        Command::Eval(c) => {
            let cfg = c.resolve()?;
            let rows = experiment::cmd_eval(&cfg, &c.out)?;
            print_metrics(&rows, &c.out);
        }
        Command::Plot(c) => {
            let cfg = c.resolve()?;
            let stems = experiment::cmd_plot(&cfg, &c.out)?;
            println!(
                "wrote {} slices under {}",
                stems.len(),
                c.out.join("plots").display()
            );
        }
    }
    Ok(())
}

fn print_metrics(rows: &[foa_pinn::metrics::MetricsReport], out: &Path) {
    println!(
        "{:<10} {:<6} {:>10} {:>10} {:>8} {:>8}",
        "room", "method", "NMSE(W)", "NMSE(XYZ)", "PCC(W)", "PCC(XYZ)"
    );
    for r in rows {
        println!(
            "{:<10} {:<6} {:>10.2} {:>10.2} {:>8.3} {:>8.3}",
            r.room, r.method, r.nmse_w, r.nmse_xyz, r.pcc_w, r.pcc_xyz
        );
    }
    println!("wrote {}", out.join(experiment::METRICS_FILE).display());
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::SceneGeneration { .. } | Error::DegenerateDistance { .. } => {
            2
        }
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::UndefinedMetric(_) | Error::State(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_distinct_codes() {
        assert_eq!(exit_code(&Error::Validation("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Format {
                path: "p".into(),
                reason: "x".into()
            }),
            3
        );
        assert_eq!(
            exit_code(&Error::Divergence {
                step: 3,
                diagnostics: String::new()
            }),
            4
        );
        assert_eq!(exit_code(&Error::State("x".into())), 1);
    }
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use srlmpc::scenario::{self, load_config, Mode, RunArtifact, ScenarioConfig};
use srlmpc::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

/// Leader/follower bridge-crossing simulator.
#[derive(Parser)]
#[command(name = "srlmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one control mode and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "srlmpc", value_parser = parse_mode)]
        mode: Mode,
    },
    /// Run both modes on the same scenario and print a summary table.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Parse and check a scenario file, then print it with defaults filled in.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Directory for CSV output; nothing is written without it.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Infeasible(_) | Error::NoUsablePrediction { .. } | Error::Horizon { .. } => {
                EXIT_INFEASIBLE
            }
            Error::Config { .. } | Error::Parse { .. } => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_FAILURE,
            message: e.to_string(),
        }
    }
}

fn config_failure(path: &Path, e: Error) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", path.display()),
    }
}

fn load(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = load_config(&common.config).map_err(|e| config_failure(&common.config, e))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.max_iters {
        cfg.max_iters = n;
    }
    cfg.validate()
        .map_err(|e| config_failure(&common.config, e))?;
    Ok(cfg)
}

fn write_file(
    path: &Path,
    contents: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    contents(&mut w)?;
    w.flush()
}

fn emit(artifact: &RunArtifact, cfg: &ScenarioConfig, dir: &Path) -> std::io::Result<()> {
    scenario::emit_csv(artifact, dir)?;
    scenario::emit_plot_data(artifact, &dir.join("plot.csv"))?;
    write_file(&dir.join("scenario.cfg"), |w| write!(w, "{cfg}"))
}

fn report(artifact: &RunArtifact) {
    let s = &artifact.summary;
    println!(
        "{}: energy {:.4}, dropped {}, saturated {}, zone steps {}, min ttc {:.3}",
        artifact.mode, s.energy, s.dropped, s.saturated, s.zone_steps, s.min_ttc
    );
    for r in &artifact.iterations {
        println!(
            "  iteration {:>2}: cost {:.6}, energy {:.4}, saturated {}, dropped {}",
            r.iteration, r.cost, r.energy, r.saturated, r.dropped
        );
    }
    if artifact.fallback_steps > 0 {
        println!(
            "  {} steps planned on an extrapolated leader",
            artifact.fallback_steps
        );
    }
}

/// A stopped iteration loop still produces artifacts, but the run counts as failed.
fn check_stopped(artifact: &RunArtifact) -> Result<(), Failure> {
    match &artifact.failure {
        Some(msg) => Err(Failure {
            code: EXIT_INFEASIBLE,
            message: format!("{} stopped before converging: {msg}", artifact.mode),
        }),
        None => Ok(()),
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::ValidateConfig { config } => {
            let cfg = load_config(&config).map_err(|e| config_failure(&config, e))?;
            print!("{cfg}");
            Ok(())
        }
        Command::Run { common, mode } => {
            let cfg = load(&common)?;
            let artifact = scenario::run_scenario(&cfg, mode)?;
            report(&artifact);
            if let Some(dir) = &common.out_dir {
                emit(&artifact, &cfg, dir)?;
            }
            check_stopped(&artifact)
        }
        Command::Compare { common } => {
            let cfg = load(&common)?;
            let cmp = scenario::compare(&cfg)?;
            print!("{cmp}");
            if let Some(dir) = &common.out_dir {
                emit(&cmp.baseline, &cfg, &dir.join("baseline"))?;
                emit(&cmp.srlmpc, &cfg, &dir.join("srlmpc"))?;
                write_file(&dir.join("comparison.csv"), |w| {
                    scenario::write_comparison(&cmp, w)
                })?;
            }
            check_stopped(&cmp.srlmpc)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

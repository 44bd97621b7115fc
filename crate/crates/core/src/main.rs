use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use preisach_sir::commands;
use preisach_sir::config::ScenarioConfig;
use preisach_sir::{Error, Result};

/// SIR epidemic model with a Preisach hysteresis transmission rate.
#[derive(Parser, Debug)]
#[command(name = "preisach-sir", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// scenario config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// output directory (defaults to the config's `output`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// integrate one trajectory; writes trajectory.csv and summary.json
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// drive the operator through an input program; writes loop.csv
    LoopDiagram {
        #[command(flatten)]
        common: Common,
        /// comma-separated turning values, starting from the virgin state at 0
        #[arg(long, value_delimiter = ',', required = true)]
        program: Vec<f64>,
        /// samples per monotone segment
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// compute the stability certificate; writes certificate.json
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// check the Lyapunov inequalities; writes lemma_report.json and lemma_summary.json
    VerifyLemmas {
        #[command(flatten)]
        common: Common,
        /// number of seeded random initial conditions added to the config's own
        #[arg(long, default_value_t = 0)]
        corpus: usize,
    },
    /// tabulate the endemic segment; writes equilibria.csv
    Equilibria {
        #[command(flatten)]
        common: Common,
        /// number of points along the segment
        #[arg(long, default_value_t = 101)]
        resolution: usize,
    },
    /// run a parameter grid; writes sweep.csv and sweep_summary.json
    Sweep {
        #[command(flatten)]
        common: Common,
        /// grid spec (JSON)
        #[arg(long)]
        grid: PathBuf,
        /// worker threads
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn load(common: &Common) -> Result<(ScenarioConfig, PathBuf)> {
    let cfg = ScenarioConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let (cfg, out) = load(&common)?;
            let s = commands::run_simulate(&cfg, &out)?;
            println!(
                "{:?} after {} switches, limit I = {:.10}, S = {:.10}, on segment: {}",
                s.outcome, s.n_switches, s.limit.0, s.limit.1, s.on_segment
            );
        }
        Command::LoopDiagram { common, program, samples } => {
            let (cfg, out) = load(&common)?;
            let rows = commands::run_loop_diagram(&cfg, &program, samples, &out)?;
            println!("{} points written", rows.len());
        }
        Command::Certify { common } => {
            let (cfg, out) = load(&common)?;
            let c = commands::run_certify(&cfg, &out)?;
            println!("{:?}: kappa = {:e}, eps0 = {:e}", c.verdict, c.kappa, c.eps0);
        }
        Command::VerifyLemmas { common, corpus } => {
            let (cfg, out) = load(&common)?;
            let s = commands::run_verify_lemmas(&cfg, corpus, &out)?;
            println!("{} runs, {} records, {} failures", s.runs.len(), s.records, s.failures);
        }
        Command::Equilibria { common, resolution } => {
            let (cfg, out) = load(&common)?;
            let rows = commands::run_equilibria(&cfg, resolution, &out)?;
            println!("{} points written", rows.len());
        }
        Command::Sweep { common, grid, jobs } => {
            let (cfg, out) = load(&common)?;
            let text = std::fs::read_to_string(&grid).map_err(|e| Error::Io(format!("{}: {e}", grid.display())))?;
            let grid = commands::SweepGrid::from_json(&text)?;
            let rows = commands::run_sweep(&cfg, &grid, jobs, &out)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} cells, {} failed", rows.len(), failed);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

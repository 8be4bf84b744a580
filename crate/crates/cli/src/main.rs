use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedhpd_cli::config::{ExperimentConfig, RawConfig};
use fedhpd_cli::{exit_code, run, EXIT_NUMERIC};
use fedhpd_core::Result;

#[derive(Parser, Debug)]
#[command(name = "fedhpd", version, about = "Federated REINFORCE with periodic policy distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a public state set and its provenance sidecar.
    GenerateStates {
        #[command(flatten)]
        common: Common,
        /// Output file (default: <output.dir>/states.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured (mode, d, seed) cell.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run the grid once per public-set seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        public_seeds: Option<Vec<u64>>,
    },
    /// Gradient-variance and smoothness diagnostics for a policy snapshot.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        snapshot: PathBuf,
        /// Snapshots averaged with `--snapshot` into the consensus.
        #[arg(long)]
        peer: Vec<PathBuf>,
        /// State file (default: the configured public set).
        #[arg(long)]
        states: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        radius: Option<f64>,
        /// Output file (default: <output.dir>/diagnostics.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags that override the config file.
#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    /// Total rounds T.
    #[arg(long)]
    rounds: Option<usize>,
    /// Distillation intervals, comma separated.
    #[arg(long, value_delimiter = ',')]
    d: Option<Vec<usize>>,
    /// nofed, fedhpd or both, comma separated.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    public_size: Option<usize>,
    #[arg(long)]
    public_source: Option<String>,
    #[arg(long)]
    public_path: Option<PathBuf>,
    #[arg(long)]
    public_seed: Option<u64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    no_snapshots: bool,
}

impl Common {
    fn overrides(&self) -> RawConfig {
        let mut raw = RawConfig {
            seeds: self.seeds.clone(),
            gamma: self.gamma,
            workers: self.workers,
            ..Default::default()
        };
        raw.env.kind = self.env.clone();
        raw.fed.t = self.rounds;
        raw.fed.d = self.d.clone();
        raw.fed.modes = self.modes.clone();
        raw.agents.preset = self.preset.clone();
        raw.public.size = self.public_size;
        raw.public.source = self.public_source.clone();
        raw.public.path = self.public_path.clone();
        raw.public.seed = self.public_seed;
        raw.public.warmup = self.warmup;
        raw.public.rollouts = self.rollouts;
        raw.output.dir = self.out_dir.clone();
        if self.no_snapshots {
            raw.output.snapshots = Some(false);
        }
        raw
    }

    fn raw(&self) -> Result<RawConfig> {
        let base = match &self.config {
            Some(path) => RawConfig::load(path)?,
            None => RawConfig::default(),
        };
        Ok(base.merge(&self.overrides()))
    }
}

fn report_train(report: &run::TrainReport) -> bool {
    for s in &report.settings {
        eprintln!(
            "{:>6} d={:<4} final-window mean {:.2} over {} seeds",
            s.mode.name(),
            s.d.map_or("inf".to_string(), |d| d.to_string()),
            s.final_mean(),
            s.finals.len()
        );
    }
    let mut ok = true;
    for f in report.failures() {
        eprintln!("cell {} failed: {}", f.cell.run_id(), f.error.as_deref().unwrap_or(""));
        ok = false;
    }
    eprintln!("results in {}", report.dir.display());
    ok
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenerateStates { common, out } => {
            let cfg = ExperimentConfig::resolve(&common.raw()?)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("states.txt"));
            let set = run::generate_states(&cfg, &path)?;
            eprintln!("wrote {} states to {}", set.len(), path.display());
            Ok(true)
        }
        Command::Train { common } => {
            let cfg = ExperimentConfig::resolve(&common.raw()?)?;
            Ok(report_train(&run::train(&cfg)?))
        }
        Command::Sweep { common, public_seeds } => {
            let mut raw = common.raw()?;
            if public_seeds.is_some() {
                raw.sweep.public_seeds = public_seeds;
            }
            let cfg = ExperimentConfig::resolve(&raw)?;
            let mut ok = true;
            for (seed, report) in run::sweep(&cfg)? {
                if let Some(s) = seed {
                    eprintln!("public set seed {s}:");
                }
                ok &= report_train(&report);
            }
            Ok(ok)
        }
        Command::Diagnose { common, snapshot, peer, states, samples, repeats, pairs, radius, out } => {
            let mut raw = common.raw()?;
            raw.diagnose.samples = samples.or(raw.diagnose.samples);
            raw.diagnose.repeats = repeats.or(raw.diagnose.repeats);
            raw.diagnose.pairs = pairs.or(raw.diagnose.pairs);
            raw.diagnose.radius = radius.or(raw.diagnose.radius);
            let cfg = ExperimentConfig::resolve(&raw)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("diagnostics.csv"));
            let rows = run::diagnose(&cfg, &snapshot, &peer, states.as_deref(), &path)?;
            eprintln!("wrote {} diagnostic rows to {}", rows.len(), path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NUMERIC as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

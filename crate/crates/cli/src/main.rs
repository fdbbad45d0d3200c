use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use romkit::romsim::Scheme;
use romkit::synth_fom::evenly_spaced_nodes;
use romkit::RomError;
use romkit_cli::commands::{self, Experiment};
use romkit_cli::config::{ExperimentConfig, MethodChoice};
use romkit_cli::error::{CliError, Result};

#[derive(Parser)]
#[command(name = "romkit", version, about = "Learn and evaluate linear reduced-order models of second-order systems")]
struct Cli {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the full-order model and write episode files.
    Generate,
    /// Fit the selected methods on the training episodes.
    Train,
    /// Roll out saved ROMs on training and test episodes.
    Evaluate,
    /// Run a complete experiment and print its error tables.
    Repro {
        #[arg(value_enum)]
        experiment: Experiment,
    },
    /// Describe a matrix file, a ROM directory or a report.
    Inspect { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SchemeArg {
    ImplicitEuler,
    NewmarkTrapezoid,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true, value_enum)]
    method: Option<MethodChoice>,
    /// Reduced dimension when no sweep is given.
    #[arg(long, global = true)]
    r: Option<usize>,
    /// Comma-separated dimensions; `a:b` is an inclusive range.
    #[arg(long, global = true, value_parser = parse_sweep)]
    r_sweep: Option<IndexList>,
    #[arg(long, global = true)]
    n_nodes: Option<usize>,
    /// Snapshots per episode, including the initial state.
    #[arg(long, global = true)]
    n_steps: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    episodes: Option<usize>,
    #[arg(long, global = true)]
    amplitude: Option<f64>,
    #[arg(long, global = true)]
    hold_steps: Option<usize>,
    /// Comma-separated training episodes.
    #[arg(long, global = true, value_parser = parse_list)]
    train: Option<IndexList>,
    /// Comma-separated test episodes; an empty string means none.
    #[arg(long, global = true, value_parser = parse_list)]
    test: Option<IndexList>,
    #[arg(long, global = true, value_enum)]
    scheme: Option<SchemeArg>,
    /// Lower eigenvalue bound on the LOpInf stiffness and damping.
    #[arg(long, global = true)]
    spd_floor: Option<f64>,
    /// LOpInf relative objective-decrease stopping tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    /// DMDc input-space truncation rank (default r + m).
    #[arg(long, global = true)]
    p_trunc: Option<usize>,
    /// OKID observer order before clamping to the record length.
    #[arg(long, global = true)]
    q_obs: Option<usize>,
    /// ERA Hankel block rows.
    #[arg(long, global = true)]
    alpha: Option<usize>,
    /// ERA Hankel block columns.
    #[arg(long, global = true)]
    beta: Option<usize>,
    /// Subtract each episode's first snapshot before POD.
    #[arg(long, global = true)]
    centering: Option<bool>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    rom_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,
}

/// Wrapper so clap treats a list flag as one value.
#[derive(Clone)]
struct IndexList(Vec<usize>);

fn parse_list(s: &str) -> std::result::Result<IndexList, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|e| format!("'{t}': {e}")))
        .collect::<std::result::Result<_, _>>()
        .map(IndexList)
}

fn parse_sweep(s: &str) -> std::result::Result<IndexList, String> {
    let mut out = Vec::new();
    for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token.split_once(':') {
            Some((a, b)) => {
                let a: usize = a.parse().map_err(|e| format!("'{token}': {e}"))?;
                let b: usize = b.parse().map_err(|e| format!("'{token}': {e}"))?;
                out.extend(a..=b);
            }
            None => out.push(token.parse().map_err(|e| format!("'{token}': {e}"))?),
        }
    }
    Ok(IndexList(out))
}

impl Overrides {
    fn apply(self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set! {
            method => cfg.method,
            r => cfg.r,
            n_steps => cfg.fom.n_steps,
            dt => cfg.fom.dt,
            seed => cfg.fom.seed,
            episodes => cfg.episodes.count,
            amplitude => cfg.episodes.amplitude,
            hold_steps => cfg.episodes.hold_steps,
            spd_floor => cfg.spd_floor,
            tol => cfg.tol,
            max_iters => cfg.max_iters,
            q_obs => cfg.q_obs,
            centering => cfg.centering,
            data_dir => cfg.paths.data_dir,
            rom_dir => cfg.paths.rom_dir,
            report_dir => cfg.paths.report_dir,
        }
        if let Some(n) = self.n_nodes {
            // Keep the sensor and actuator counts, respread over the new chain.
            let fom = &mut cfg.fom;
            fom.input_nodes = evenly_spaced_nodes(n, fom.input_nodes.len().min(n));
            fom.output_nodes = evenly_spaced_nodes(n, fom.output_nodes.len().min(n));
            fom.n_nodes = n;
        }
        if let Some(v) = self.train {
            cfg.train_episodes = v.0;
        }
        if let Some(v) = self.test {
            cfg.test_episodes = v.0;
        }
        if let Some(v) = self.r_sweep {
            cfg.r_sweep = Some(v.0);
        }
        if let Some(v) = self.p_trunc {
            cfg.p_trunc = Some(v);
        }
        if let Some(v) = self.alpha {
            cfg.alpha = Some(v);
        }
        if let Some(v) = self.beta {
            cfg.beta = Some(v);
        }
        if let Some(s) = self.scheme {
            cfg.scheme = match s {
                SchemeArg::ImplicitEuler => Scheme::ImplicitEuler,
                SchemeArg::NewmarkTrapezoid => Scheme::NewmarkTrapezoid,
            };
        }
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Ok(threads) = std::env::var("ROMKIT_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| RomError::InvalidConfig(format!("ROMKIT_THREADS must be a positive integer, got '{threads}'")))?;
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    match cli.command {
        Command::Generate => print_paths(&commands::generate(&cfg)?),
        Command::Train => print_paths(&commands::train(&cfg)?),
        Command::Evaluate => print_paths(&commands::evaluate(&cfg)?),
        Command::Repro { experiment } => {
            let outcome = commands::repro(&cfg, experiment)?;
            print!("{}", commands::summary(&outcome.reports));
            print_paths(&outcome.files);
        }
        Command::Inspect { path } => print!("{}", commands::inspect(&path)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}

fn report(e: &CliError) {
    eprintln!("error[{}]: {e}", e.code());
}

//! `klsynth`: model generators, deceptive and reference policy synthesis, and
//! detection experiments.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 infeasible problem,
//! 3 numerical trouble.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "klsynth",
    version,
    about = "KL-divergence policy synthesis on MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a model file and, optionally, formulas against its propositions.
    Validate(ValidateArgs),
    /// Generate a grid-world model.
    Gridworld(GridArgs),
    /// Generate a random model with its reference policy.
    RandomMdp(RandomArgs),
    /// Synthesize the optimal deceptive policy against a reference.
    SynthDeceptive(DeceptiveArgs),
    /// Synthesize a reference policy that resists deception.
    SynthReference(ReferenceArgs),
    /// Run the detection experiment and write per-batch scores.
    Simulate(ExperimentArgs),
    /// Run the detection experiment and summarize which candidate is hardest to detect.
    Detect(ExperimentArgs),
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    phi_sup: Option<String>,
    #[arg(long)]
    phi_agent: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Grid20,
    Grid4,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Start from a built-in layout; other flags override its fields.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// Label placement `PROP@ROW,COL`; repeatable.
    #[arg(long = "label")]
    labels: Vec<String>,
    #[arg(long)]
    slip: Option<f64>,
    /// Cell `ROW,COL` with an extra self-loop action; repeatable.
    #[arg(long = "self-loop")]
    self_loops: Vec<String>,
    /// Initial cell `ROW,COL`.
    #[arg(long)]
    initial: Option<String>,
    /// Output directory; the model is printed when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RandomArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    transient: usize,
    #[arg(long, default_value_t = 4)]
    successors: usize,
    #[arg(long, default_value_t = 0.15)]
    exit_prob: f64,
    #[arg(long, default_value_t = 0.3)]
    target_reach: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DeceptiveArgs {
    #[arg(long)]
    model: PathBuf,
    /// `min-time:<formula>`, an inline JSON policy, or a policy/residence file.
    #[arg(long = "ref")]
    reference: String,
    /// Supervisor formula for the product when the reference is not `min-time:`.
    #[arg(long)]
    phi_sup: Option<String>,
    #[arg(long)]
    phi_agent: String,
    #[arg(long)]
    nu_agent: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Admm,
    Relax,
    Ccp,
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    #[arg(long)]
    model: PathBuf,
    /// Omitted means the supervisor has no task.
    #[arg(long)]
    phi_sup: Option<String>,
    #[arg(long)]
    phi_agent: String,
    #[arg(long, default_value_t = 0.0)]
    nu_sup: f64,
    #[arg(long)]
    nu_agent: f64,
    #[arg(long, value_enum)]
    method: Method,
    /// Method settings as JSON (ADMM or CCP configuration).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixed agent for `ccp`: policy or residence file on the model.
    #[arg(long)]
    agent: Option<String>,
    /// Starting reference for `ccp`: inline JSON policy or file.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Failure with its exit code and a message naming the failing stage.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    /// Maps a library error raised during `stage`.
    pub fn at(stage: &str, e: klsynth::Error) -> Self {
        use klsynth::Error as E;
        let code = match e {
            E::Infeasible(_) | E::InfeasibleSet(_) => 2,
            E::Numerical(_) | E::Singular(_) | E::ClosedSetMismatch(_) => 3,
            _ => 1,
        };
        Self {
            code,
            message: format!("{stage}: {e}"),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

fn configure_threads() -> CmdResult {
    let Ok(v) = std::env::var("KLSYNTH_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| {
        Failure::usage(format!(
            "KLSYNTH_THREADS must be a positive integer, got '{v}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Gridworld(a) => commands::gridworld(a),
        Command::RandomMdp(a) => commands::random_mdp(a),
        Command::SynthDeceptive(a) => commands::synth_deceptive(a),
        Command::SynthReference(a) => commands::synth_reference(a),
        Command::Simulate(a) => commands::experiment(a, false),
        Command::Detect(a) => commands::experiment(a, true),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use biplik_cli::{
    cmd_cluster, cmd_fit, cmd_report, cmd_simulate, error_exit_code, with_threads, EventsFormat,
    RunConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "biplik", version, about = "Pairwise likelihood fits of longitudinal actor-event networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed-effects fit of every actor's trajectories.
    Fit(Opts),
    /// Cluster actors into participation and collaboration groups.
    Cluster(Opts),
    /// Sample a synthetic corpus from a JSON spec.
    Simulate(Opts),
    /// Descriptive statistics of an event file.
    Report(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Args)]
struct Opts {
    /// Event file (.csv or .jsonl), or a simulation spec for `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    order1: usize,
    #[arg(long, default_value_t = 2)]
    order2: usize,
    /// Relative objective change that ends the sweeps.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Projected gradient norm that ends a per-actor solve.
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 100)]
    max_sweeps: usize,
    /// Participation groups.
    #[arg(long)]
    h1: Option<usize>,
    /// Collaboration groups.
    #[arg(long)]
    h2: Option<usize>,
    /// Choose group counts by the BSS/TSS rule.
    #[arg(long, conflicts_with_all = ["h1", "h2"])]
    auto_clusters: bool,
    #[arg(long, default_value_t = 0.8)]
    bss_threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Sample only events with at least one actor.
    #[arg(long)]
    condition_nonempty: bool,
    /// Event file format written by `simulate`.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

impl Opts {
    fn config(self) -> RunConfig {
        RunConfig {
            input: self.input,
            out: self.out,
            order1: self.order1,
            order2: self.order2,
            tol: self.tol,
            grad_tol: self.grad_tol,
            max_sweeps: self.max_sweeps,
            h1: self.h1,
            h2: self.h2,
            auto_clusters: self.auto_clusters,
            bss_threshold: self.bss_threshold,
            seed: self.seed,
            threads: self.threads,
            condition_nonempty: self.condition_nonempty,
            events_format: match self.format {
                Format::Csv => EventsFormat::Csv,
                Format::Jsonl => EventsFormat::Jsonl,
            },
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BIPLIK_LOG", "warn")).init();
    let cli = Cli::parse();
    let (run, opts): (fn(&RunConfig) -> biplik::Result<_>, Opts) = match cli.command {
        Command::Fit(o) => (cmd_fit, o),
        Command::Cluster(o) => (cmd_cluster, o),
        Command::Simulate(o) => (cmd_simulate, o),
        Command::Report(o) => (cmd_report, o),
    };
    let cfg = opts.config();
    let result = with_threads(cfg.threads, || run(&cfg)).and_then(|r| r);
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                log::info!("wrote {}", f.display());
            }
            if !outcome.converged {
                eprintln!("warning: fit did not converge; artifacts written to {}", cfg.out.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}

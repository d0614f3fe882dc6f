//! `rankflow`: batch runner for tower, spectrum, criteria, CLT and
//! exponential-sum experiments.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "rankflow", version, about = "Rank-one flow and Riesz product experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build towers and write their frequency tables.
    Tower(Common),
    /// Quadrature transforms against word sums or the triangle.
    Spectrum(Common),
    /// Singularity criteria and their auxiliary inequalities.
    Criteria(Common),
    /// Central limit experiments.
    Clt(Common),
    /// `|Q_n(t)|` profiles on a `q` ladder.
    Flatness(Common),
    /// Direct exponential sums against the stationary-phase main term.
    KkVerify(Common),
    /// Every experiment in the config.
    All(Common),
}

#[derive(Args)]
struct Common {
    #[arg(short, long)]
    config: PathBuf,
    #[arg(short, long, default_value = "results")]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Quadrature tolerance for every experiment.
    #[arg(long)]
    tol: Option<f64>,
    /// Replaces the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_FAILED: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kinds, args): (Option<&[&str]>, Common) = match cli.command {
        Command::Tower(a) => (Some(&["tower"]), a),
        Command::Spectrum(a) => (Some(&["spectrum"]), a),
        Command::Criteria(a) => (Some(&["criteria"]), a),
        Command::Clt(a) => (Some(&["clt"]), a),
        Command::Flatness(a) => (Some(&["flatness"]), a),
        Command::KkVerify(a) => (Some(&["kk-verify"]), a),
        Command::All(a) => (None, a),
    };
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    if let Some(tol) = args.tol {
        if !(tol.is_finite() && tol > 0.0) {
            eprintln!("error: --tol must be positive");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let cfg = match config::Config::load(&args.config.to_string_lossy()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let ov = run::Overrides {
        tol: args.tol,
        seed: args.seed,
    };
    match run::run(&cfg, &args.out, kinds, &ov) {
        Ok(summary) => {
            for e in &summary.experiments {
                let status = if e.pass { "PASS" } else { "FAIL" };
                println!("{status} {} ({}) {:.1}s", e.id, e.kind, e.elapsed_s);
                for c in &e.failed_checks {
                    println!("     failed check {c}");
                }
                for err in &e.errors {
                    println!("     error {err}");
                }
            }
            if summary.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

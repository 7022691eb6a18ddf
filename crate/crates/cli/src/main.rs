use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fbe_cli::checks::run_checks;
use fbe_cli::{run_experiment, RunSpec};
use fbe_core::problems::{build_problem, write_instance, Family, ProblemSpec};

#[derive(Parser)]
#[command(name = "fbe", version, about = "Forward-backward envelope solvers and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solvers listed in a spec file. Exits 0 iff every run converged.
    Run {
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Tolerance of the spec's stopping rule.
        #[arg(long)]
        tol: Option<f64>,
        /// Comma-separated preset names.
        #[arg(long)]
        solvers: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic instance and write its data, spec and metadata.
    Gen {
        family: String,
        /// Problem settings as key=value, e.g. m=100 n=200 lambda_fraction=0.1.
        params: Vec<String>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the invariant suite on built-in instances. Exits 0 iff all checks pass.
    Check,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            spec,
            seed,
            max_iters,
            tol,
            solvers,
            out,
        } => {
            let mut run = RunSpec::read(&spec)?;
            if let Some(s) = seed {
                run.problem.seed = s;
            }
            if let Some(m) = max_iters {
                run.max_iters = m;
            }
            if let Some(t) = tol {
                run.set_tol(t);
            }
            if let Some(list) = solvers {
                run.set_solvers(&list)?;
            }
            if let Some(o) = out {
                run.out = o;
            }
            let summary = run_experiment(&run)?;
            print!("{}", summary.to_text());
            println!("results in {}", run.out.display());
            Ok(summary.all_converged())
        }
        Command::Gen {
            family,
            params,
            out,
            seed,
        } => {
            let family: Family = family.parse()?;
            let mut spec = ProblemSpec::new(family);
            for kv in &params {
                let (k, v) = kv
                    .split_once('=')
                    .with_context(|| format!("expected key=value, got '{kv}'"))?;
                if !spec.set(k, v)? {
                    bail!("unknown problem setting '{k}'");
                }
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let built = build_problem(&spec, &std::env::current_dir()?)?;
            for path in write_instance(&out, &built)? {
                println!("wrote {}", path.display());
            }
            println!("lambda = {:e}", built.meta.lambda);
            Ok(true)
        }
        Command::Check => {
            let results = run_checks();
            for c in &results {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(results.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

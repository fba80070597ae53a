use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moment_cluster::cli::{cmd_bench, cmd_cluster, cmd_generate, cmd_validate, output_dir, RunConfig, RunReport};
use moment_cluster::Error;

#[derive(Parser)]
#[command(name = "moment-cluster", version, about = "Moment-based clustering of translated Poincaré and Gaussian mixtures")]
struct Args {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the internal pool.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; falls back to $MOMENT_CLUSTER_OUT, then ./moment-cluster-out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config leaf by dotted path, e.g. `cluster.poincare.k=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write samples.csv and spec.json for the configured mixture.
    Generate,
    /// Learn the means and write the report and assignments.csv.
    Cluster,
    /// Run oracle and property suites (all configured suites when none are named).
    Validate { suites: Vec<String> },
    /// Sweep separation × degree × reps for the pair test.
    Bench,
}

fn load(args: &Args) -> Result<(RunConfig, PathBuf), Error> {
    let (text, base_dir) = match &args.config {
        Some(p) => (std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (String::new(), PathBuf::from(".")),
    };
    let mut overrides = args.set.clone();
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    Ok((RunConfig::load(&text, &overrides)?, base_dir))
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    let (cfg, base_dir) = match load(&args) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = args.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let out = output_dir(args.out.clone());
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::from(1);
    }
    let (name, result) = match &args.command {
        Command::Generate => ("generate", cmd_generate(&cfg, &base_dir, &out)),
        Command::Cluster => ("cluster", cmd_cluster(&cfg, &base_dir, &out)),
        Command::Validate { suites } => ("validate", cmd_validate(&cfg, suites)),
        Command::Bench => ("bench", cmd_bench(&cfg)),
    };
    let report = match result {
        Ok(r) => r,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => RunReport::failure(name, &cfg.resolved(), &e),
    };
    match report.write(&out) {
        Ok(path) => println!("{}", path.display()),
        Err(e) => {
            eprintln!("error: cannot write report: {e}");
            return ExitCode::from(1);
        }
    }
    if report.failed() {
        eprintln!("error: {}", report.error.as_deref().unwrap_or("run failed"));
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}

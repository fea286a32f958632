use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::error;

use mazt::scenario::{parse_scenario, run_scenario, Kind};
use mazt::Error;

/// Zero-temperature Monge-Ampère experiments on the flat torus.
///
/// Exit codes: 0 all checks pass, 2 a check failed, 3 a solver failed,
/// 4 the config is invalid.
#[derive(Parser, Debug)]
#[command(name = "mazt", version)]
struct Cli {
    /// One of solve, envelope, sweep-beta, hele-shaw, geodesic.
    kind: Kind,
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides `out` in the config (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let scenario = match parse_scenario(&cli.config, Some(cli.kind)) {
        Ok(s) => s,
        Err(e) => {
            error!("{}: {e}", cli.config.display());
            eprintln!("error: {}: {e}", cli.config.display());
            return ExitCode::from(4);
        }
    };
    let out = cli
        .out
        .or_else(|| scenario.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        pool = pool.num_threads(k);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(3);
        }
    };

    match pool.install(|| run_scenario(&scenario, &out)) {
        Ok(summary) => {
            for c in &summary.checks {
                println!("{:<32} {}", c.check, if c.pass { "pass" } else { "FAIL" });
            }
            println!("summary: {}", out.join("summary.json").display());
            if summary.all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e.root() {
                Error::Validation { .. } | Error::Parse { .. } => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}

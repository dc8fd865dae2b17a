use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symflow::cli::{run, RunConfig, Suite};

#[derive(Parser)]
#[command(name = "symflow", version, about = "Flows on symmetric Lie algebras: simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random initial data and suites (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Patch the configuration, e.g. `--override params.beta=0.2`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the configured initial data and write snapshots and observables.
    Simulate(Common),
    /// Run verification suites and write a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Suite to run; repeat for several, omit for all.
        #[arg(long, value_parser = |s: &str| s.parse::<Suite>())]
        suite: Vec<Suite>,
    },
    /// Compare the gauge-transformed matrix flow with the potential equation.
    GaugeCompare(Common),
    /// Evolve n = 2 data as a matrix and as a 3-vector field side by side.
    Reduce(Common),
    /// Curvature residual of the zero-curvature-type representation.
    CurvatureResidual(Common),
}

fn load(c: &Common) -> Result<RunConfig, String> {
    let mut overrides = c.overrides.clone();
    if let Some(out) = &c.out {
        overrides.push(format!("out_dir={}", serde_json::to_string(out).map_err(|e| e.to_string())?));
    }
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    RunConfig::load(&c.config, &overrides).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => load(c).and_then(|cfg| run::simulate(&cfg).map_err(|e| e.to_string())),
        Command::GaugeCompare(c) => load(c).and_then(|cfg| run::gauge_compare(&cfg).map_err(|e| e.to_string())),
        Command::Reduce(c) => load(c).and_then(|cfg| run::reduce(&cfg).map_err(|e| e.to_string())),
        Command::CurvatureResidual(c) => load(c).and_then(|cfg| run::curvature_residual(&cfg).map_err(|e| e.to_string())),
        Command::Verify { common, suite } => load(common).and_then(|cfg| {
            let suites = if suite.is_empty() { Suite::ALL.to_vec() } else { suite.clone() };
            let (out, reports) = run::verify(&cfg, &suites).map_err(|e| e.to_string())?;
            for r in &reports {
                for c in &r.checks {
                    let cmp = if c.lower_bound { ">=" } else { "<=" };
                    println!(
                        "{} [{}] {}: {:.3e} {cmp} {:.1e}",
                        if c.pass { "PASS" } else { "FAIL" },
                        r.suite,
                        c.name,
                        c.measured,
                        c.tolerance
                    );
                }
            }
            Ok(out)
        }),
    };
    match result {
        Ok(out) => {
            println!("{} -> {}", out.manifest.command, out.out_dir.display());
            if let Some(e) = &out.manifest.error {
                eprintln!("error: {e}");
            }
            if out.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

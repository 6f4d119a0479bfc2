use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gridgame::engine::{run_scenario, segment_oracle, Variant};
use gridgame::game::price_positivity_margin;
use gridgame::{Error, Scenario};

#[derive(Parser)]
#[command(name = "gridgame", version, about = "DC microgrid game simulator and equilibrium oracle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Fixed integration step in seconds.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Simulation horizon in seconds.
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
    /// Fast time-scale parameter of the consensus subsystem.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write timeseries.csv and summary.json.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 3 unless every acceptance threshold is met.
        #[arg(long)]
        check: bool,
    },
    /// Check parameters, margins and penalty adequacy.
    Validate { scenario: PathBuf },
    /// Solve for the normalized equilibrium and its multipliers.
    Equilibrium { scenario: PathBuf },
    /// Run with the consensus states at their quasi-steady state.
    Reduced {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
    Check(String),
}

fn load(cli: &Cli, path: &PathBuf) -> Result<gridgame::Model, Failure> {
    let scenario = Scenario::load(path).map_err(|e| Failure::Validation(e.to_string()))?;
    scenario
        .with_overrides(cli.dt, cli.t_end, cli.eps)
        .build()
        .map_err(|e| Failure::Validation(e.to_string()))
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn simulate(cli: &Cli, path: &PathBuf, out: Option<&PathBuf>, check: bool, variant: Variant) -> Result<(), Failure> {
    let model = load(cli, path)?;
    let run = run_scenario(&model, variant).map_err(runtime)?;
    match out {
        Some(dir) => {
            run.write(dir).map_err(runtime)?;
            let r = &run.report;
            println!("wrote {} samples to {}", r.samples, dir.display());
            println!("final kkt residual {:.3e}", r.residuals.final_max);
            for c in &r.checks {
                let tag = if c.pass { "ok  " } else { "FAIL" };
                println!("{tag} {:<22} {:.3e} (threshold {:.1e})", c.name, c.value, c.threshold);
            }
        }
        None => match cli.format {
            Some(Format::Csv) => print!("{}", run.csv()),
            _ => println!("{}", run.summary_json()),
        },
    }
    if let Some(e) = &run.report.error {
        return Err(Failure::Runtime(e.clone()));
    }
    if check && !run.report.passed() {
        let failed: Vec<&str> = run.report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        return Err(Failure::Check(format!("checks failed: {}", failed.join(", "))));
    }
    Ok(())
}

fn validate(cli: &Cli, path: &PathBuf) -> Result<(), Failure> {
    let model = load(cli, path)?;
    let games = model.segment_games().map_err(runtime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut report = Vec::new();
    for (k, g) in games.iter().enumerate() {
        let oracle = segment_oracle(g).map_err(runtime)?;
        let eig = g.sampled_min_eigenvalues(&mut rng, 10).map_err(runtime)?;
        report.push(serde_json::json!({
            "segment": k + 1,
            "price_positivity_margin": price_positivity_margin(g.params(), &g.price),
            "monotonicity_margins": g.monotonicity_margins(),
            "lines_per_agent": g.grid.topology.partition_multiplicity(),
            "min_symmetric_jacobian_eigenvalue": eig.iter().copied().fold(f64::INFINITY, f64::min),
            "penalty": oracle.penalty,
        }));
    }
    if let Some(Format::Json) = cli.format {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        for r in &report {
            println!("segment {}", r["segment"]);
            println!("  price positivity margin   {}", r["price_positivity_margin"]);
            println!("  monotonicity margins      {}", r["monotonicity_margins"]);
            println!("  lines managed per agent   {}", r["lines_per_agent"]);
            println!("  min eig of sym. Jacobian  {}", r["min_symmetric_jacobian_eigenvalue"]);
            println!("  voltage penalty required  {}", r["penalty"]["voltage_required"]);
            println!("  line penalty required     {}", r["penalty"]["line_required"]);
        }
    }
    Ok(())
}

fn equilibrium(cli: &Cli, path: &PathBuf) -> Result<(), Failure> {
    let model = load(cli, path)?;
    let games = model.segment_games().map_err(runtime)?;
    let mut all = Vec::new();
    for g in &games {
        all.push(segment_oracle(g).map_err(runtime)?);
    }
    match cli.format {
        Some(Format::Csv) => {
            println!("segment,kind,name,value");
            for (k, o) in all.iter().enumerate() {
                for (kind, s) in [("constrained", &o.constrained), ("penalized", &o.penalized)] {
                    let n = s.u_star.len();
                    let emit = |name: String, v: f64| println!("{},{kind},{name},{v:.16e}", k + 1);
                    s.u_star.iter().enumerate().for_each(|(i, v)| emit(format!("u.{}", i + 1), *v));
                    for (j, v) in s.x_star.iter().enumerate() {
                        let name = match j {
                            j if j < n => format!("I.{}", j + 1),
                            j if j < 2 * n => format!("V.{}", j - n + 1),
                            j => format!("Il.{}", j - 2 * n + 1),
                        };
                        emit(name, *v);
                    }
                    s.lambda_star.iter().enumerate().for_each(|(i, v)| emit(format!("lambda.{}", i + 1), *v));
                    s.gamma_star.iter().enumerate().for_each(|(i, v)| emit(format!("gamma.{}", i + 1), *v));
                }
            }
        }
        _ => println!("{}", serde_json::to_string_pretty(&all).unwrap()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { scenario, out, check } => simulate(&cli, scenario, out.as_ref(), *check, Variant::Full),
        Command::Reduced { scenario, out } => simulate(&cli, scenario, out.as_ref(), false, Variant::Reduced),
        Command::Validate { scenario } => validate(&cli, scenario),
        Command::Equilibrium { scenario } => equilibrium(&cli, scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}

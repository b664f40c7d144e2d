//! Experiment driver for cooperative-robot state estimation with degenerate
//! Gaussian factors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use robotsim::config::ExperimentConfig;
use robotsim::output;
use robotsim::problem::Hypothesis;
use robotsim::report::{compare_models, run_estimation, sweep_ridge};
use robotsim::world::simulate;
use robotsim::SimError;

#[derive(Parser)]
#[command(name = "robotsim", about = "Cooperative-robot estimation with degenerate Gaussian factors")]
struct Cli {
    /// TOML configuration file (fields mirror the defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Override the estimation method (degenerate|ridge|no-auxiliary).
    #[arg(long, global = true)]
    method: Option<String>,

    /// Skip SVG plot generation.
    #[arg(long, global = true)]
    no_plots: bool,

    /// Disable normalisation bookkeeping (moments only). Evidence-based
    /// subcommands refuse to run in this mode.
    #[arg(long, global = true)]
    moments_only: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a run and write the trajectory/measurement CSVs.
    Simulate,
    /// Run the full estimation pipeline and write beliefs (CSV + SVG).
    Estimate,
    /// Sweep the ridge-regularisation parameter over the seed list.
    SweepRidge,
    /// Compare pickup-time or object-size hypotheses via model evidence.
    CompareModels {
        /// Which hypothesis grid to evaluate.
        #[arg(long, value_enum, default_value_t = Grid::Pickup)]
        grid: Grid,
    },
    /// Run the built-in oracle suites and exit nonzero on any failure.
    Selftest,
}

#[derive(Copy, Clone, ValueEnum)]
enum Grid {
    Pickup,
    Size,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, SimError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.world.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(method) = &cli.method {
        config.method = method.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), SimError> {
    degen_factors::gmode::set_g_enabled(!cli.moments_only);
    let config = load_config(cli)?;
    std::fs::create_dir_all(&config.out_dir)?;

    match &cli.command {
        Command::Simulate => {
            let record = simulate(&config.world)?;
            output::write_trajectory_csv(&record, &config.out_dir.join("trajectory.csv"))?;
            output::write_auxiliary_csv(&record, &config.out_dir.join("auxiliary.csv"))?;
            println!(
                "simulated {} steps for {} robots (seed {}) -> {}",
                config.world.steps,
                config.world.robot_count,
                config.world.seed,
                config.out_dir.display()
            );
        }
        Command::Estimate => {
            let method = config.method_enum()?;
            let record = simulate(&config.world)?;
            output::write_trajectory_csv(&record, &config.out_dir.join("trajectory.csv"))?;
            output::write_auxiliary_csv(&record, &config.out_dir.join("auxiliary.csv"))?;
            let report = run_estimation(&config.world, method)?;
            output::write_beliefs_csv(&report, &config.out_dir.join("beliefs.csv"))?;
            if !cli.no_plots {
                output::write_beliefs_svg(&record, &report, &config.out_dir.join("beliefs.svg"))?;
            }
            println!(
                "method {}: {} beliefs, converged={} after {} sweeps, max kappa {:.3e}, {:.2} ms",
                config.method,
                report.beliefs.len(),
                report.converged,
                report.sweeps,
                report.max_kappa,
                report.wall_time.as_secs_f64() * 1e3
            );
            match report.log_evidence {
                Some(z) => println!("log evidence: {z:.6}"),
                None => println!("log evidence: disabled (moments-only mode)"),
            }
        }
        Command::SweepRidge => {
            if cli.moments_only {
                return Err(SimError::Config(
                    "sweep-ridge needs model evidence; drop --moments-only".into(),
                ));
            }
            let rows = sweep_ridge(&config.world, &config.lambda_grid, &config.seeds)?;
            output::write_ridge_csv(&rows, &config.out_dir.join("ridge.csv"))?;
            println!("lambda,kappa,logz_mean,logz_std,failures");
            for r in &rows {
                println!(
                    "{:.3e},{:.3e},{:.4},{:.4},{}",
                    r.lambda, r.kappa, r.logz_mean, r.logz_std, r.failures
                );
            }
        }
        Command::CompareModels { grid } => {
            if cli.moments_only {
                return Err(SimError::Config(
                    "compare-models needs model evidence; drop --moments-only".into(),
                ));
            }
            let hypotheses: Vec<(String, Hypothesis)> = match grid {
                Grid::Pickup => config
                    .pickup_grid
                    .iter()
                    .map(|&k| (format!("pickup={k}"), Hypothesis::pickup_at(&config.world, k)))
                    .collect(),
                Grid::Size => config
                    .size_grid
                    .iter()
                    .map(|&a| (format!("size={a}"), Hypothesis::size_scaled(&config.world, a)))
                    .collect(),
            };
            if hypotheses.is_empty() {
                return Err(SimError::Config("hypothesis grid is empty".into()));
            }
            let table = compare_models(&config.world, &hypotheses, &config.seeds)?;
            output::write_models_csv(&table, &config.out_dir.join("models.csv"))?;
            let best = table.argmax_mean();
            println!("hypothesis,logz_mean,logz_std,argmax");
            for (h, label) in table.labels.iter().enumerate() {
                let (mean, std) = table.mean_std(h);
                println!("{label},{mean:.4},{std:.4},{}", if h == best { 1 } else { 0 });
            }
        }
        Command::Selftest => {
            let (reports, ok) = robotsim::selftest::run_all(config.world.seed);
            for r in &reports {
                println!("{r}");
            }
            if !ok {
                return Err(SimError::Numerical("selftest suites failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

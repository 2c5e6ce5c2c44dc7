use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polsense::harness::{
    run_experiment, run_on_series, sweep, write_series, EstimatorSelection, ExperimentConfig,
    ExperimentOutput, NoiseAxis, OUTPUT_DIR_ENV,
};
use polsense::simulator::{generate_scenario, read_scenario, PerturbationProfile};

const FALLBACK_OUTPUT_DIR: &str = "polsense-out";

#[derive(Parser)]
#[command(name = "polsense", version, about = "Distributed polarization sensing experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON). Defaults to the reference scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Falls back to the config, then $POLSENSE_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["isa", "learn", "both"])]
    estimator: Option<String>,
    /// Per-entry measurement SNR in dB; overrides the configured noise.
    #[arg(long, global = true, allow_negative_numbers = true)]
    snr_db: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario and write its measurements and ground truth.
    Simulate,
    /// Track with layer peeling.
    Isa(Input),
    /// Track with the gradient learner.
    Learn(Input),
    /// Run the selected estimators and write all artifacts.
    Experiment(Input),
    /// Run many experiments over noise levels and seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Input {
    /// Read measurements from a scenario.csv instead of simulating.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated noise variances σ²_z.
    #[arg(long, value_delimiter = ',', conflicts_with = "snr", required_unless_present = "snr")]
    sigma2: Vec<f64>,
    /// Comma-separated per-entry SNRs in dB.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    snr: Vec<f64>,
    /// Number of consecutive seeds starting at the configured seed.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

fn load_config(common: &Common) -> polsense::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::reference(0),
    };
    if let Some(seed) = common.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(e) = &common.estimator {
        cfg.estimator = e.parse()?;
    }
    if common.snr_db.is_some() {
        cfg.snr_db = common.snr_db;
    }
    cfg.output_dir = Some(
        common
            .out
            .clone()
            .or(cfg.output_dir)
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT_DIR)),
    );
    Ok(cfg)
}

fn track(mut cfg: ExperimentConfig, input: &Input, forced: Option<EstimatorSelection>) -> polsense::Result<()> {
    if let Some(sel) = forced {
        cfg.estimator = sel;
    }
    let out = match &input.scenario {
        Some(path) => {
            let series = read_scenario(path)?;
            let sc = &mut cfg.scenario;
            let n = series.ground_truth()[0].len();
            let k = series.len() - 1;
            if sc.n_sections != n || sc.horizon != k {
                sc.perturbation = PerturbationProfile::quiet(n, k);
            }
            sc.n_sections = n;
            sc.horizon = k;
            sc.tau = series.grid().tau();
            sc.n_freqs = series.grid().len();
            run_on_series(&cfg, series)?
        }
        None => run_experiment(&cfg)?,
    };
    report(&out);
    Ok(())
}

fn report(out: &ExperimentOutput) {
    let dir = out.config.output_dir.as_deref().unwrap_or(Path::new("."));
    println!(
        "seed {}  min identifiability {:.3e}{}",
        out.config.scenario.seed,
        out.health.min_identifiability,
        if out.health.degenerate { "  (degenerate)" } else { "" }
    );
    for (e, m) in out.estimates.iter().zip(&out.metrics) {
        let verdict = m.verdict.map_or_else(|| "inconclusive".to_string(), |v| format!("section {v}"));
        let worst = m.response_residual.iter().cloned().fold(0.0, f64::max);
        println!(
            "{:<6} verdict {verdict:<13} margin {:.4}  tracking error {:.3e}  max residual {:.3e}",
            e.estimator.name(),
            m.margin,
            m.mean_tracking_error(),
            worst
        );
    }
    println!("wrote {}", dir.display());
}

fn run(cli: Cli) -> polsense::Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate => {
            let cfg = cfg.resolved()?;
            let series = generate_scenario(&cfg.scenario)?;
            let dir = cfg.output_dir.clone().expect("set by load_config");
            write_series(&dir, &cfg, &series)?;
            println!("wrote {}", dir.display());
        }
        Command::Isa(input) => track(cfg, &input, Some(EstimatorSelection::Isa))?,
        Command::Learn(input) => track(cfg, &input, Some(EstimatorSelection::Learn))?,
        Command::Experiment(input) => track(cfg, &input, None)?,
        Command::Sweep(args) => {
            let axis = if args.snr.is_empty() {
                NoiseAxis::Sigma2(args.sigma2)
            } else {
                NoiseAxis::SnrDb(args.snr)
            };
            let first = cfg.scenario.seed;
            let seeds: Vec<u64> = (first..first + args.seeds).collect();
            let report = sweep(&cfg, &axis, &seeds)?;
            for a in &report.aggregate {
                println!(
                    "{}={:<8} {:<6} success {}/{} ({} degenerate)  median tracking error {:.3e}",
                    a.noise_axis,
                    a.noise_value,
                    a.estimator.name(),
                    a.successes,
                    a.runs - a.degenerate,
                    a.degenerate,
                    a.median_tracking_error
                );
            }
            if let Some(dir) = &cfg.output_dir {
                println!("wrote {}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}


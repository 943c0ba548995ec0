//! Command-line harness: run simulated experiments, solve serialized
//! strategic instances, and fit the demand/supply forecaster.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mma::forecast::{
    error_rate, fit_horizon_models, predict_window, FeatureKind, ModelBundle, MODEL_FILE_VERSION,
};
use mma::lr::LrOptions;
use mma::sim::{
    prepare_forecasts, run_experiment, write_events_jsonl, write_metrics_csv, IrregularEvent,
    MetricsRow, RunOptions, ScenarioConfig, SimError,
};
use mma::slm::{exact_solve, load_instance, DEFAULT_CELL_LIMIT};

/// Environment variable overriding the default artifact directory.
const OUT_DIR_ENV: &str = "MMA_OUT_DIR";

#[derive(Parser)]
#[command(name = "mma", about = "Ride-hailing matching and relocation experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate seeded days under one or more dispatch policies.
    Simulate(SimulateArgs),
    /// Solve a serialized strategic-layer instance.
    SolveSlm(SolveSlmArgs),
    /// Fit the per-horizon Lasso forecaster on synthetic history.
    FitForecast(FitForecastArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config JSON; defaults to the built-in toy network.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated policy names (fcfs, batch, mma-noreloc, mma).
    #[arg(long, default_value = "batch")]
    policy: String,
    #[arg(long, default_value_t = 1)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for metrics.csv and events.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relocation weight in the strategic objective.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Imbalance weight in the strategic objective.
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    /// Forecast perturbation amplitude in [0,1).
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    /// JSON file with a list of irregular demand events.
    #[arg(long)]
    irregular: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    lr_max_iter: usize,
    #[arg(long, default_value_t = 2)]
    lr_samples: usize,
    #[arg(long, default_value_t = 0.03)]
    lr_gap_tol: f64,
    /// Skip writing per-event records (metrics.csv only).
    #[arg(long, default_value_t = false)]
    no_events: bool,
}

#[derive(Args)]
struct SolveSlmArgs {
    /// Serialized instance JSON.
    instance: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = 0.03)]
    gap_tol: f64,
    /// Also run the enumeration oracle and report the bound error.
    #[arg(long, default_value_t = false)]
    exact: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitForecastArgs {
    /// Scenario config JSON; defaults to the built-in toy network.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic history days to generate for training.
    #[arg(long, default_value_t = 6)]
    synthetic_days: usize,
    #[arg(long, default_value_t = 1.0)]
    l1: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit codes: 0 success, 1 runtime failure, 2 usage/validation.
fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::SolveSlm(args) => cmd_solve_slm(args),
        Command::FitForecast(args) => cmd_fit_forecast(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn usage_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load_config(flag: Option<&Path>) -> Result<ScenarioConfig, SimError> {
    match flag {
        Some(path) => ScenarioConfig::load(path),
        None => Ok(ScenarioConfig::toy_default()),
    }
}

fn is_validation(err: &SimError) -> bool {
    matches!(err, SimError::InvalidInput(_) | SimError::Csv(_) | SimError::Core(_))
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, String> {
    let cfg = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return Ok(usage_error(e)),
    };
    if !(0.0..1.0).contains(&args.perturb) {
        return Ok(usage_error("--perturb must be in [0,1)"));
    }
    let policies: Vec<String> = args.policy.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if policies.is_empty() {
        return Ok(usage_error("--policy must name at least one policy"));
    }
    let irregular: Vec<IrregularEvent> = match &args.irregular {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("read {}: {e}", path.display()))?;
            match serde_json::from_str(&text) {
                Ok(v) => v,
                Err(e) => return Ok(usage_error(format!("bad irregular-event file: {e}"))),
            }
        }
        None => Vec::new(),
    };
    let opts = RunOptions {
        alpha: args.alpha,
        beta: args.beta,
        lr: LrOptions { max_iter: args.lr_max_iter, gap_tol: args.lr_gap_tol, samples: args.lr_samples, seed: args.seed },
        perturb_amplitude: args.perturb,
        irregular,
        collect_events: !args.no_events,
    };
    let outcome = match run_experiment(&cfg, &policies, args.days, args.seed, &opts) {
        Ok(o) => o,
        Err(e) if is_validation(&e) => return Ok(usage_error(e)),
        Err(e) => return Err(e.to_string()),
    };
    let dir = out_dir(args.out);
    std::fs::create_dir_all(&dir).map_err(|e| format!("create {}: {e}", dir.display()))?;
    write_metrics_csv(&dir.join("metrics.csv"), &outcome.rows).map_err(|e| e.to_string())?;
    if !args.no_events {
        write_events_jsonl(&dir.join("events.jsonl"), &outcome.events).map_err(|e| e.to_string())?;
    }
    print_summary(&policies, &outcome.rows);
    println!("wrote {}", dir.join("metrics.csv").display());
    Ok(ExitCode::SUCCESS)
}

/// Per-policy totals with the improvement-vs-batch column.
fn print_summary(policies: &[String], rows: &[MetricsRow]) {
    struct Agg {
        generated: u64,
        completed: u64,
        pickup_weighted: f64,
        matched_weight: u64,
        relocations: u64,
    }
    let agg = |name: &str| -> Agg {
        let mut a = Agg { generated: 0, completed: 0, pickup_weighted: 0.0, matched_weight: 0, relocations: 0 };
        for r in rows.iter().filter(|r| r.policy == name) {
            a.generated += r.generated;
            a.completed += r.completed;
            // Weight day means by completions to recover the overall mean.
            a.pickup_weighted += r.mean_pickup_km * r.completed as f64;
            a.matched_weight += r.completed;
            a.relocations += r.relocations;
        }
        a
    };
    let batch_completed = policies.iter().find(|p| *p == "batch").map(|p| agg(p).completed);
    println!(
        "{:<12} {:>10} {:>10} {:>9} {:>12} {:>12} {:>12}",
        "policy", "generated", "completed", "rate", "vs batch", "pickup km", "relocations"
    );
    for name in policies {
        let a = agg(name);
        let rate = if a.generated > 0 { a.completed as f64 / a.generated as f64 } else { 0.0 };
        let vs_batch = match batch_completed {
            Some(b) if b > 0 => format!("{:+.2}%", (a.completed as f64 - b as f64) / b as f64 * 100.0),
            _ => "-".to_string(),
        };
        let pickup = if a.matched_weight > 0 { a.pickup_weighted / a.matched_weight as f64 } else { 0.0 };
        println!(
            "{:<12} {:>10} {:>10} {:>8.2}% {:>12} {:>12.4} {:>12}",
            name,
            a.generated,
            a.completed,
            rate * 100.0,
            vs_batch,
            pickup,
            a.relocations
        );
    }
}

fn cmd_solve_slm(args: SolveSlmArgs) -> Result<ExitCode, String> {
    let inst = match load_instance(&args.instance) {
        Ok(i) => i,
        Err(e) => return Ok(usage_error(e)),
    };
    if args.exact && inst.cells() > DEFAULT_CELL_LIMIT {
        return Ok(usage_error(format!(
            "--exact refused: instance has {} mode cells, enumeration limit is {}",
            inst.cells(),
            DEFAULT_CELL_LIMIT
        )));
    }
    let opts = LrOptions { max_iter: args.max_iter, gap_tol: args.gap_tol, seed: args.seed, ..LrOptions::default() };
    let report = mma::lr::solve(&inst, &opts).map_err(|e| e.to_string())?;
    println!(
        "iterations={} upper_bound={:.6} lower_bound={:.6} gap={:.6}",
        report.iterations, report.best_upper_bound, report.best_lower_bound, report.gap
    );
    if args.exact {
        let exact = exact_solve(&inst, DEFAULT_CELL_LIMIT).map_err(|e| e.to_string())?;
        let denom = exact.objective.abs().max(1.0);
        println!(
            "exact={:.6} bound_error={:.6}",
            exact.objective,
            (report.best_upper_bound - exact.objective) / denom
        );
    }
    let dir = out_dir(args.out);
    std::fs::create_dir_all(&dir).map_err(|e| format!("create {}: {e}", dir.display()))?;
    let report_path = dir.join("lr_report.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    std::fs::write(&report_path, text).map_err(|e| e.to_string())?;
    println!("wrote {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit_forecast(args: FitForecastArgs) -> Result<ExitCode, String> {
    let mut cfg = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return Ok(usage_error(e)),
    };
    if args.l1 < 0.0 {
        return Ok(usage_error("--l1 must be non-negative"));
    }
    cfg.l1_penalty = args.l1;
    // Hold the last day out for evaluation; the rest trains the models.
    if args.synthetic_days < 6 {
        return Ok(usage_error(
            "--synthetic-days must be >= 6: demand lags reach four day-strides back plus a held-out test day",
        ));
    }
    cfg.warmup_days = args.synthetic_days;
    let prep = match prepare_forecasts(&cfg, args.seed) {
        Ok(p) => p,
        Err(e) if is_validation(&e) => return Ok(usage_error(e)),
        Err(e) => return Err(e.to_string()),
    };
    let p = cfg.planning_intervals;
    let n = cfg.intervals_per_day();
    // Refit on all but the last day, then score horizon-h predictions on it.
    let mut train_demand = prep.demand_history.clone();
    train_demand.series.truncate((args.synthetic_days - 1) * n);
    let mut train_supply = prep.supply_history.clone();
    train_supply.series.truncate((args.synthetic_days - 1) * n);
    let demand_models = fit_horizon_models(&train_demand, p, FeatureKind::Demand, cfg.l1_penalty, 1e-6, 200)
        .map_err(|e| e.to_string())?;
    let supply_models = fit_horizon_models(&train_supply, p, FeatureKind::Supply, cfg.l1_penalty, 1e-6, 200)
        .map_err(|e| e.to_string())?;
    for (kind, models, full, train) in [
        ("demand", &demand_models, &prep.demand_history, &train_demand),
        ("supply", &supply_models, &prep.supply_history, &train_supply),
    ] {
        let feature_kind = if kind == "demand" { FeatureKind::Demand } else { FeatureKind::Supply };
        for h in 0..p {
            let mut predicted = Vec::new();
            let mut actual = Vec::new();
            for origin in train.len()..full.len() {
                let target = origin; // horizon-h forecast issued h intervals earlier
                let issue = target.saturating_sub(h);
                if issue < train.len() {
                    continue;
                }
                let (grid, _) = predict_window(models, full, feature_kind, issue, h + 1).map_err(|e| e.to_string())?;
                for r in 0..cfg.regions.len() {
                    predicted.push(grid[h][r]);
                    actual.push(full.series[target][r]);
                }
            }
            match error_rate(&predicted, &actual) {
                Ok(er) => println!("{kind} horizon {h}: test ER {er:.4}"),
                Err(_) => println!("{kind} horizon {h}: test ER undefined (no demand in test day)"),
            }
        }
    }
    let bundle = ModelBundle {
        version: MODEL_FILE_VERSION,
        l1_penalty: cfg.l1_penalty,
        demand_feature_count: demand_models[0].coefficients.len(),
        supply_feature_count: supply_models[0].coefficients.len(),
        demand: demand_models,
        supply: supply_models,
    };
    let dir = out_dir(args.out);
    std::fs::create_dir_all(&dir).map_err(|e| format!("create {}: {e}", dir.display()))?;
    let path = dir.join("forecast_models.json");
    bundle.save(&path).map_err(|e| e.to_string())?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use overlap_dr::analyze::{ingest_csv, run_analysis, AnalysisSpec, CiMethod};
use overlap_dr::datagen::{calibrate_intercept, BASE_PS_SLOPES, CALIBRATION_DRAWS, N_COVARIATES};
use overlap_dr::diagnostics::{interval_bounds, phi_mass, PHI_DRAWS};
use overlap_dr::simharness::{emit_tables, load_run_config, parse_run_config, run};
use overlap_dr::{Error, RunConfig, Scenario};

const DESK_CONFIG: &str = include_str!("../configs/desk.toml");
const OUT_ENV: &str = "DR_OVERLAP_OUT";

#[derive(Parser, Debug)]
#[command(name = "overlap-dr", version, about = "Doubly-robust estimation under limited overlap")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Worker threads for simulation and bootstrap (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte Carlo study and write the result tables.
    Simulate(SimulateArgs),
    /// Estimate effects on a CSV dataset with bootstrap intervals.
    Analyze(AnalyzeArgs),
    /// Large-sample propensity distribution of a scenario.
    Phi(PhiArgs),
    /// Find the PS intercept that hits a target prevalence.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// TOML run configuration; the bundled desk configuration when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = OUT_ENV, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Run a single sample size.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    treatment: String,
    #[arg(long)]
    outcome: String,
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1])]
    trim: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    #[arg(long, default_value_t = 20240501)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Percentile bootstrap intervals instead of normal-approximation ones.
    #[arg(long)]
    percentile_ci: bool,
    #[arg(long, env = OUT_ENV, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PhiArgs {
    /// Preset scenario name, e.g. prev10_d3.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = PHI_DRAWS)]
    n: usize,
    #[arg(long, default_value_t = 20240501)]
    seed: u64,
    #[arg(long, env = OUT_ENV, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    prevalence: f64,
    /// Overlap multiplier applied to the standard PS slopes.
    #[arg(long, default_value_t = 1.0)]
    d: f64,
    /// Explicit PS slopes (six values); overrides --d.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    alpha: Option<Vec<f64>>,
    #[arg(long, default_value_t = CALIBRATION_DRAWS)]
    draws: usize,
    #[arg(long, default_value_t = 20240501)]
    seed: u64,
    /// Also write calibrate.csv and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status 2 marks invalid input; 1 marks a failure while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::MissingColumn { .. } | Error::Ingest { .. } => 2,
        _ => 1,
    }
}

fn error_json(e: &Error) -> Value {
    match e {
        Error::Config { field, message } => json!({ "error": "config", "field": field, "message": message }),
        Error::Ingest { path, row, column, message } => {
            json!({ "error": "ingest", "path": path, "row": row, "column": column, "message": message })
        }
        Error::MissingColumn { path, column } => json!({ "error": "missing_column", "path": path, "column": column }),
        Error::InvalidArgument(m) => json!({ "error": "invalid_argument", "message": m }),
        other => json!({ "error": "runtime", "message": other.to_string() }),
    }
}

fn write_manifest(dir: &Path, command: &str, seed: u64, config: Value, outputs: &[PathBuf], started: Instant) -> Result<(), Error> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "master_seed": seed,
        "config": config,
        "outputs": outputs.iter().map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned())).collect::<Vec<_>>(),
        "wall_time_secs": started.elapsed().as_secs_f64(),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn config_echo(cfg: &RunConfig, source: &str) -> Value {
    json!({
        "source": source,
        "master_seed": cfg.master_seed,
        "n_replicates": cfg.n_replicates,
        "sample_sizes": cfg.sample_sizes,
        "primary_n": cfg.primary_n,
        "scenarios": cfg.scenarios.iter().map(|s| json!({ "name": s.name, "parameters": s.scenario })).collect::<Vec<_>>(),
        "model_specs": cfg.model_specs.iter().map(|s| s.label()).collect::<Vec<_>>(),
        "estimators": cfg.grid,
        "outcome_structure": cfg.outcome_structure,
        "tail_rule": cfg.tail_rule,
        "diagnostics": cfg.diagnostics,
        "phi_draws": cfg.phi_draws,
        "calibration_draws": cfg.calibration_draws,
        "max_redraws": cfg.max_redraws,
    })
}

fn simulate(args: SimulateArgs) -> Result<(), Error> {
    let started = Instant::now();
    let (mut cfg, source) = match &args.config {
        Some(p) => (load_run_config(p)?, p.display().to_string()),
        None => (parse_run_config(DESK_CONFIG)?, "bundled:desk.toml".to_string()),
    };
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = args.replicates {
        cfg.n_replicates = r;
    }
    if let Some(n) = args.n {
        cfg.sample_sizes = vec![n];
        cfg.primary_n = n;
    }
    cfg.validate()?;

    let out = run(&cfg)?;
    for s in &out.skipped {
        eprintln!("skipped {} at n={}: {}", s.scenario, s.n, s.reason);
    }
    let mut written = emit_tables(&out, &cfg, &args.out)?;
    write_manifest(&args.out, "simulate", cfg.master_seed, config_echo(&cfg, &source), &written, started)?;
    written.push(args.out.join("manifest.json"));
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), Error> {
    let started = Instant::now();
    let cols: Vec<&str> = args.covariates.iter().map(String::as_str).collect();
    let spec = AnalysisSpec {
        trim_levels: args.trim.clone(),
        bootstrap_reps: args.boot,
        ci_level: args.ci_level,
        seed: args.seed,
        ci_method: if args.percentile_ci { CiMethod::Percentile } else { CiMethod::Normal },
        ..AnalysisSpec::new(&args.treatment, &args.outcome, &cols)
    };
    let data = ingest_csv(&args.data, &spec)?;
    eprintln!("rows {} (treated {}, control {})", data.obs.len(), data.obs.n_treated(), data.obs.n_control());
    let report = run_analysis(&data, &spec)?;
    if !report.ps_converged {
        eprintln!("warning: propensity model did not converge");
    }
    for r in report.rows.iter().filter(|r| r.unstable) {
        eprintln!("warning: {} unstable ({} of {} bootstrap fits failed)", r.estimator, r.boot_failed, spec.bootstrap_reps);
    }
    let mut written = report.save(&args.out)?;
    let config = json!({ "data": args.data, "spec": spec });
    write_manifest(&args.out, "analyze", spec.seed, config, &written, started)?;
    written.push(args.out.join("manifest.json"));
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn phi(args: PhiArgs) -> Result<(), Error> {
    let started = Instant::now();
    let scenario = Scenario::named(&args.scenario).ok_or_else(|| Error::Config {
        field: "scenario".into(),
        message: format!("unknown preset `{}`; expected one of {:?}", args.scenario, Scenario::preset_names().collect::<Vec<_>>()),
    })?;
    if args.n == 0 {
        return Err(Error::InvalidArgument("--n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mass = phi_mass(&scenario, args.n, &mut rng)?;

    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("phi.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["interval", "lo", "hi", "mass", "treated", "control"])?;
    for l in 0..mass.mass.len() {
        let (lo, hi) = interval_bounds(l);
        w.write_record([
            l.to_string(),
            lo.to_string(),
            hi.to_string(),
            mass.mass[l].to_string(),
            mass.treated[l].to_string(),
            mass.control[l].to_string(),
        ])?;
    }
    w.flush()?;
    println!("scenario {} n {}", args.scenario, mass.n);
    println!("prevalence {:.4}", mass.prevalence);
    println!("outside (0.05, 0.95) {:.2}%", 100.0 * mass.outside_05_95);
    let config = json!({ "scenario": args.scenario, "parameters": scenario, "n": args.n });
    write_manifest(&args.out, "phi", args.seed, config, std::slice::from_ref(&path), started)?;
    println!("{}", path.display());
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<(), Error> {
    let started = Instant::now();
    let alpha: [f64; N_COVARIATES] = match &args.alpha {
        Some(v) => v.as_slice().try_into().map_err(|_| Error::InvalidArgument(format!("--alpha needs {N_COVARIATES} values, got {}", v.len())))?,
        None => BASE_PS_SLOPES.map(|a| a * args.d),
    };
    if args.draws == 0 {
        return Err(Error::InvalidArgument("--draws must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let alpha0 = calibrate_intercept(args.prevalence, &alpha, args.draws, &mut rng)
        .map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config { field: "prevalence".into(), message: m },
            other => other,
        })?;
    println!("alpha0 {alpha0:.6}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("calibrate.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["prevalence", "d", "alpha0"])?;
        w.write_record([args.prevalence.to_string(), args.d.to_string(), alpha0.to_string()])?;
        w.flush()?;
        let config = json!({ "prevalence": args.prevalence, "d": args.d, "alpha": alpha, "draws": args.draws });
        write_manifest(dir, "calibrate", args.seed, config, &[path], started)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("{}", json!({ "error": "invalid_argument", "message": e.to_string() }));
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Phi(a) => phi(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

//! Monte Carlo study driver.
//!
//! For every scenario and sample size, replicates are generated from streams
//! derived from the master seed, each model specification is fitted on the
//! same replicate dataset, and every estimator of the grid is evaluated.
//! Replicates run on the rayon pool in fixed-size batches; each batch is
//! reduced in replicate order, so the output does not depend on the number of
//! threads.

mod config;
mod emit;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use config::{load_run_config, parse_run_config, ScenarioEntry};
pub use emit::{emit_tables, OUTPUT_FILES};

use crate::datagen::{calibrate_intercept, make_dataset_redrawing, Scenario, CALIBRATION_DRAWS};
use crate::diagnostics::{
    finite_sample_error, interval_bounds, interval_means, phi_mass, sate, subpop_error, IntervalMav, MeanMav,
    PhiMass, Population, Quantity, TailRule, N_INTERVALS, PHI_DRAWS,
};
use crate::error::{Error, Result};
use crate::estimators::{estimate_with_fits, normalize_grid, EstimatorConfig, Method};
use crate::models::{FittedModels, ModelSpec, OutcomeStructure};
use crate::seed::{derive_replicate_seed, scenario_id};

/// Replicates evaluated in parallel before an in-order reduction.
const BATCH: usize = 64;

/// Full description of a simulation study.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenarios: Vec<ScenarioEntry>,
    pub sample_sizes: Vec<usize>,
    /// Sample size reported in the main tables.
    pub primary_n: usize,
    pub n_replicates: usize,
    pub master_seed: u64,
    pub model_specs: Vec<ModelSpec>,
    pub grid: Vec<EstimatorConfig>,
    pub outcome_structure: OutcomeStructure,
    pub tail_rule: TailRule,
    /// Compute finite-sample error decompositions alongside the estimates.
    pub diagnostics: bool,
    /// Draw size for the interval masses; 0 skips them.
    pub phi_draws: usize,
    /// Draw size for the intercept cross-check; 0 skips it.
    pub calibration_draws: usize,
    /// Empty-arm redraws allowed per replicate before it is counted missing.
    pub max_redraws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenarios: Scenario::preset_names().map(ScenarioEntry::preset).collect(),
            sample_sizes: vec![100, 300, 500, 1000, 2000],
            primary_n: 500,
            n_replicates: 2_000,
            master_seed: 20240501,
            model_specs: ModelSpec::study_grid(),
            grid: crate::estimators::grid(&Method::ALL, &[0.05, 0.1]),
            outcome_structure: OutcomeStructure::Joint,
            tail_rule: TailRule::Percentile,
            diagnostics: true,
            phi_draws: PHI_DRAWS,
            calibration_draws: CALIBRATION_DRAWS,
            max_redraws: 1_000,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::Config { field: field.into(), message: message.into() });
        if self.n_replicates == 0 {
            return bad("n_replicates", "must be at least 1");
        }
        if self.sample_sizes.iter().any(|&n| n < 2) {
            return bad("sample_sizes", "every sample size must be at least 2");
        }
        for c in &self.grid {
            if let Some(t) = c.trim {
                if !(t > 0.0 && t < 0.5) {
                    return bad("trims", &format!("trim {t} is outside (0, 0.5)"));
                }
            }
        }
        for s in &self.scenarios {
            s.scenario.validate()?;
        }
        Ok(())
    }

    /// Whether the (scenario, n) cell is excluded: low-prevalence scenarios
    /// at n = 100 too often contain no treated units.
    pub fn skips(scenario: &Scenario, n: usize) -> bool {
        scenario.prevalence_target <= 0.1 + 1e-9 && n <= 100
    }
}

/// Aggregated accuracy of one estimator in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scenario: String,
    pub prevalence: f64,
    pub d: f64,
    pub n: usize,
    pub spec: ModelSpec,
    pub config: EstimatorConfig,
    /// Against the population effect `tau`.
    pub bias: f64,
    pub rmse: f64,
    /// Population variance of the estimates (divisor = replicates used).
    pub variance: f64,
    pub mc_se_bias: f64,
    pub n_ok: usize,
    pub missing_rate: f64,
    /// Missing replicates by reason code.
    pub missing: BTreeMap<&'static str, usize>,
    pub ps_nonconverged_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn find(&self, scenario: &str, n: usize, spec: ModelSpec, method: Method, trim: Option<f64>) -> Option<&MetricsRow> {
        let key = EstimatorConfig::new(method, trim).normalized();
        self.rows.iter().find(|r| {
            r.scenario == scenario
                && r.n == n
                && r.spec == spec
                && r.config.method == key.method
                && r.config.trim.map(f64::to_bits) == key.trim.map(f64::to_bits)
        })
    }
}

/// Mean and MAV of the subpopulation finite-sample error across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SubpopRow {
    pub scenario: String,
    pub n: usize,
    pub spec: ModelSpec,
    pub population: Population,
    pub mean: Option<f64>,
    pub mav: Option<f64>,
    pub n_reps: usize,
}

/// Per-interval MAV of one residual quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRow {
    pub scenario: String,
    pub n: usize,
    pub spec: ModelSpec,
    pub quantity: Quantity,
    pub interval: usize,
    pub interval_lo: f64,
    pub interval_hi: f64,
    pub mav: Option<f64>,
    pub phi: Option<f64>,
    /// Ratio to the correct specification's MAV in the same interval.
    pub relative_mav: Option<f64>,
    pub scaled_relative_mav: Option<f64>,
}

/// Large-sample description of a scenario's propensity distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub name: String,
    pub scenario: Scenario,
    pub calibrated_alpha0: Option<f64>,
    pub phi: Option<PhiMass>,
}

/// A (scenario, n) cell that was not run.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedCell {
    pub scenario: String,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub metrics: MetricsTable,
    pub subpop: Vec<SubpopRow>,
    pub intervals: Vec<IntervalRow>,
    pub scenarios: Vec<ScenarioSummary>,
    pub skipped: Vec<SkippedCell>,
    /// Empty-arm redraws per (scenario, n).
    pub redraws: Vec<(String, usize, usize)>,
}

/// Output of one model specification on one replicate.
struct SpecRecord {
    estimates: Vec<std::result::Result<f64, &'static str>>,
    ps_converged: bool,
    subpop: [Option<f64>; 3],
    intervals: Option<[Vec<Option<f64>>; 3]>,
}

struct ReplicateRecord {
    redraws: usize,
    /// `None` when no usable dataset could be drawn.
    specs: Option<Vec<SpecRecord>>,
}

fn run_replicate(cfg: &RunConfig, grid: &[EstimatorConfig], entry: &ScenarioEntry, n: usize, r: usize) -> ReplicateRecord {
    let mut rng = derive_replicate_seed(cfg.master_seed, scenario_id(&entry.name), n as u64, r as u64).rng();
    let (ds, redraws) = match make_dataset_redrawing(&entry.scenario, n, &mut rng, cfg.max_redraws) {
        Ok(v) => v,
        Err(_) => return ReplicateRecord { redraws: cfg.max_redraws, specs: None },
    };
    let specs = cfg
        .model_specs
        .iter()
        .map(|&spec| {
            let fits = FittedModels::fit(&ds.obs, spec, cfg.outcome_structure);
            let est = estimate_with_fits(&ds.obs, &fits, spec, grid, cfg.outcome_structure);
            let estimates = est.cells.iter().map(|c| c.result.as_ref().map(|v| v.estimate).map_err(|e| e.code())).collect();
            let ps_converged = fits.ps.as_ref().map(|f| f.converged).unwrap_or(false);

            let mut subpop = [None; 3];
            let mut intervals = None;
            if cfg.diagnostics {
                if let (Ok(ps), Ok(out)) = (&fits.ps, &fits.outcome) {
                    if let Ok((_, res)) = finite_sample_error(&ds, &ps.e_hat, &out.mu0_hat, &out.mu1_hat) {
                        for (slot, pop) in subpop.iter_mut().zip(Population::ALL) {
                            *slot = subpop_error(&res, &ps.e_hat, pop, cfg.tail_rule);
                        }
                        intervals = Some(Quantity::ALL.map(|q| interval_means(&res, &ds.e_true, q).0));
                    }
                }
            }
            SpecRecord { estimates, ps_converged, subpop, intervals }
        })
        .collect();
    ReplicateRecord { redraws, specs: Some(specs) }
}

#[derive(Default)]
struct SpecAgg {
    values: Vec<Vec<f64>>,
    missing: Vec<BTreeMap<&'static str, usize>>,
    ps_nonconverged: usize,
    subpop: [MeanMav; 3],
    intervals: [IntervalMav; 3],
}

struct CellAgg {
    specs: Vec<SpecAgg>,
    redraws: usize,
    replicates: usize,
}

impl CellAgg {
    fn new(n_specs: usize, n_cells: usize) -> Self {
        let specs = (0..n_specs)
            .map(|_| SpecAgg {
                values: vec![Vec::new(); n_cells],
                missing: vec![BTreeMap::new(); n_cells],
                ..Default::default()
            })
            .collect();
        CellAgg { specs, redraws: 0, replicates: 0 }
    }

    fn absorb(&mut self, rec: ReplicateRecord) {
        self.redraws += rec.redraws;
        self.replicates += 1;
        match rec.specs {
            None => {
                for s in &mut self.specs {
                    s.ps_nonconverged += 1;
                    for m in &mut s.missing {
                        *m.entry("no_dataset").or_default() += 1;
                    }
                }
            }
            Some(specs) => {
                for (agg, sr) in self.specs.iter_mut().zip(specs) {
                    if !sr.ps_converged {
                        agg.ps_nonconverged += 1;
                    }
                    for (k, v) in sr.estimates.into_iter().enumerate() {
                        match v {
                            Ok(x) => agg.values[k].push(x),
                            Err(code) => *agg.missing[k].entry(code).or_default() += 1,
                        }
                    }
                    for (acc, v) in agg.subpop.iter_mut().zip(sr.subpop) {
                        acc.push(v);
                    }
                    if let Some(iv) = sr.intervals {
                        for (acc, means) in agg.intervals.iter_mut().zip(iv.iter()) {
                            acc.push(means);
                        }
                    }
                }
            }
        }
    }
}

/// Bias, RMSE, population variance and Monte Carlo SE of `values` around `tau`.
pub fn summarize(values: &[f64], tau: f64) -> (f64, f64, f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    let bias = mean - tau;
    let mse = values.iter().map(|v| (v - tau) * (v - tau)).sum::<f64>() / k;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
    let mc_se = if values.len() > 1 { (variance * k / (k - 1.0)).sqrt() / k.sqrt() } else { f64::NAN };
    (bias, mse.sqrt(), variance, mc_se)
}

/// Runs the study on the current rayon pool.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let grid = normalize_grid(&cfg.grid);
    let mut out = RunOutput::default();

    for entry in &cfg.scenarios {
        let sid = scenario_id(&entry.name);
        let phi = if cfg.phi_draws > 0 {
            let mut rng = derive_replicate_seed(cfg.master_seed, sid, cfg.phi_draws as u64, u64::MAX).rng();
            Some(phi_mass(&entry.scenario, cfg.phi_draws, &mut rng)?)
        } else {
            None
        };
        let calibrated_alpha0 = if cfg.calibration_draws > 0 {
            let mut rng = derive_replicate_seed(cfg.master_seed, sid, cfg.calibration_draws as u64, u64::MAX - 1).rng();
            Some(calibrate_intercept(
                entry.scenario.prevalence_target,
                &entry.scenario.alpha,
                cfg.calibration_draws,
                &mut rng,
            )?)
        } else {
            None
        };

        for &n in &cfg.sample_sizes {
            if RunConfig::skips(&entry.scenario, n) {
                out.skipped.push(SkippedCell {
                    scenario: entry.name.clone(),
                    n,
                    reason: "prevalence 0.1 at n = 100: too many samples without treated units".into(),
                });
                continue;
            }
            let mut agg = CellAgg::new(cfg.model_specs.len(), grid.len());
            let mut start = 0;
            while start < cfg.n_replicates {
                let end = (start + BATCH).min(cfg.n_replicates);
                let batch: Vec<ReplicateRecord> =
                    (start..end).into_par_iter().map(|r| run_replicate(cfg, &grid, entry, n, r)).collect();
                for rec in batch {
                    agg.absorb(rec);
                }
                start = end;
            }
            collect_cell(cfg, &grid, entry, n, agg, phi.as_ref(), &mut out);
        }

        out.scenarios.push(ScenarioSummary {
            name: entry.name.clone(),
            scenario: entry.scenario.clone(),
            calibrated_alpha0,
            phi,
        });
    }
    Ok(out)
}

/// Runs the study on a dedicated pool with `threads` workers.
pub fn run_with_threads(cfg: &RunConfig, threads: usize) -> Result<RunOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run(cfg))
}

fn collect_cell(
    cfg: &RunConfig,
    grid: &[EstimatorConfig],
    entry: &ScenarioEntry,
    n: usize,
    agg: CellAgg,
    phi: Option<&PhiMass>,
    out: &mut RunOutput,
) {
    let tau = entry.scenario.tau;
    let reps = agg.replicates as f64;
    out.redraws.push((entry.name.clone(), n, agg.redraws));
    let correct_idx = cfg.model_specs.iter().position(ModelSpec::is_correct);
    let correct_mav: Option<[Vec<Option<f64>>; 3]> =
        correct_idx.map(|i| [0, 1, 2].map(|q| agg.specs[i].intervals[q].mav()));

    for (spec, sagg) in cfg.model_specs.iter().zip(&agg.specs) {
        let nonconv = sagg.ps_nonconverged as f64 / reps;
        for (k, config) in grid.iter().enumerate() {
            let values = &sagg.values[k];
            let (bias, rmse, variance, mc_se_bias) = summarize(values, tau);
            out.metrics.rows.push(MetricsRow {
                scenario: entry.name.clone(),
                prevalence: entry.scenario.prevalence_target,
                d: entry.scenario.d,
                n,
                spec: *spec,
                config: *config,
                bias,
                rmse,
                variance,
                mc_se_bias,
                n_ok: values.len(),
                missing_rate: 1.0 - values.len() as f64 / reps,
                missing: sagg.missing[k].clone(),
                ps_nonconverged_rate: nonconv,
            });
        }

        if !cfg.diagnostics {
            continue;
        }
        for (pop, acc) in Population::ALL.iter().zip(&sagg.subpop) {
            out.subpop.push(SubpopRow {
                scenario: entry.name.clone(),
                n,
                spec: *spec,
                population: *pop,
                mean: acc.mean(),
                mav: acc.mav(),
                n_reps: acc.count,
            });
        }
        for (q, quantity) in Quantity::ALL.iter().enumerate() {
            let mav = sagg.intervals[q].mav();
            for l in 0..N_INTERVALS {
                let (lo, hi) = interval_bounds(l);
                let phi_l = phi.map(|p| p.mass[l]);
                let relative = match (&correct_mav, mav[l]) {
                    (Some(c), Some(m)) => c[q][l].filter(|&c| c > 0.0).map(|c| m / c),
                    _ => None,
                };
                out.intervals.push(IntervalRow {
                    scenario: entry.name.clone(),
                    n,
                    spec: *spec,
                    quantity: *quantity,
                    interval: l,
                    interval_lo: lo,
                    interval_hi: hi,
                    mav: mav[l],
                    phi: phi_l,
                    relative_mav: relative,
                    scaled_relative_mav: relative.zip(phi_l).map(|(r, p)| r * p),
                });
            }
        }
    }
}

/// Regenerates replicate `r` of a cell and returns the untrimmed DR estimate,
/// the sample average treatment effect and the finite-sample error, or
/// `None` if a fit or the estimator fails.
pub fn replicate_dr_error(cfg: &RunConfig, entry: &ScenarioEntry, n: usize, r: usize, spec: ModelSpec) -> Option<(f64, f64, f64)> {
    let mut rng = derive_replicate_seed(cfg.master_seed, scenario_id(&entry.name), n as u64, r as u64).rng();
    let (ds, _) = make_dataset_redrawing(&entry.scenario, n, &mut rng, cfg.max_redraws).ok()?;
    let fits = FittedModels::fit(&ds.obs, spec, cfg.outcome_structure);
    let (ps, o) = (fits.ps.ok()?, fits.outcome.ok()?);
    let dr = crate::estimators::estimate_dr(&ds.obs.z, &ds.obs.y, &ps.e_hat, &o.mu0_hat, &o.mu1_hat).ok()?;
    let (delta, _) = finite_sample_error(&ds, &ps.e_hat, &o.mu0_hat, &o.mu1_hat).ok()?;
    Some((dr, sate(&ds), delta))
}

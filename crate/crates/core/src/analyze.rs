//! Estimation on a user-supplied dataset with bootstrap uncertainty.
//!
//! The propensity model is a main-effects logistic regression and the
//! outcome model a main-effects linear regression on the listed covariates.
//! Standard deviations and intervals come from a nonparametric bootstrap that
//! refits both models on every resample.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Observations;
use crate::error::{Error, Result};
use crate::estimators::{estimate_all, estimate_with_fits, grid, EstimateSet, EstimatorConfig, Method};
use crate::models::{FittedModels, ModelSpec, OutcomeStructure};
use crate::seed::{derive_replicate_seed, scenario_id};
use crate::stats::{quantile_sorted, sample_sd};

/// Estimators reported by [`run_analysis`].
pub const ANALYSIS_METHODS: [Method; 4] = [Method::Dr, Method::IpwHajek, Method::Om, Method::Ow];

/// Bootstrap failure share above which an estimator is flagged unstable.
pub const UNSTABLE_FAILURE_RATE: f64 = 0.10;

pub const DEFAULT_HIST_BINS: usize = 50;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// Estimate plus or minus the normal quantile times the bootstrap SD.
    #[default]
    Normal,
    /// Empirical quantiles of the bootstrap estimates.
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSpec {
    pub treatment_col: String,
    pub outcome_col: String,
    pub covariate_cols: Vec<String>,
    pub trim_levels: Vec<f64>,
    pub bootstrap_reps: usize,
    pub ci_level: f64,
    pub seed: u64,
    pub ci_method: CiMethod,
    pub outcome_structure: OutcomeStructure,
}

impl AnalysisSpec {
    pub fn new(treatment_col: &str, outcome_col: &str, covariate_cols: &[&str]) -> Self {
        AnalysisSpec {
            treatment_col: treatment_col.to_string(),
            outcome_col: outcome_col.to_string(),
            covariate_cols: covariate_cols.iter().map(|s| s.to_string()).collect(),
            trim_levels: vec![0.05, 0.1],
            bootstrap_reps: 1_000,
            ci_level: 0.95,
            seed: 20240501,
            ci_method: CiMethod::Normal,
            outcome_structure: OutcomeStructure::Joint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariate_cols.is_empty() {
            return Err(Error::InvalidArgument("at least one covariate column is required".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidArgument(format!("ci level {} not in (0, 1)", self.ci_level)));
        }
        if let Some(t) = self.trim_levels.iter().find(|t| !(**t > 0.0 && **t < 0.5)) {
            return Err(Error::InvalidArgument(format!("trim {t} not in (0, 0.5)")));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<EstimatorConfig> {
        grid(&ANALYSIS_METHODS, &self.trim_levels)
    }
}

/// Ingested data ready for estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisDataset {
    pub obs: Observations,
    pub covariate_names: Vec<String>,
    pub source: PathBuf,
}

fn parse_cell(raw: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a CSV with a header row. `source` is only used in messages.
pub fn ingest_reader<R: Read>(reader: R, source: &Path, spec: &AnalysisSpec) -> Result<AnalysisDataset> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn { path: source.to_path_buf(), column: name.to_string() })
    };
    let t_col = col(&spec.treatment_col)?;
    let y_col = col(&spec.outcome_col)?;
    let x_cols: Vec<usize> = spec.covariate_cols.iter().map(|c| col(c)).collect::<Result<_>>()?;

    let ingest_err = |row: usize, column: &str, message: String| Error::Ingest {
        path: source.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };

    let (mut z, mut y, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        // 1-based data row, header excluded.
        let row = i + 1;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let t_raw = field(t_col);
        let t = parse_cell(t_raw).ok_or_else(|| ingest_err(row, &spec.treatment_col, format!("missing or non-numeric value `{t_raw}`")))?;
        z.push(match t {
            0.0 => false,
            1.0 => true,
            v => return Err(ingest_err(row, &spec.treatment_col, format!("treatment must be 0 or 1, got {v}"))),
        });
        let y_raw = field(y_col);
        y.push(parse_cell(y_raw).ok_or_else(|| ingest_err(row, &spec.outcome_col, format!("missing or non-numeric value `{y_raw}`")))?);
        for (&c, name) in x_cols.iter().zip(&spec.covariate_cols) {
            let raw = field(c);
            x.push(parse_cell(raw).ok_or_else(|| ingest_err(row, name, format!("missing or non-numeric value `{raw}`")))?);
        }
    }

    let n = z.len();
    let obs = Observations { x: DMatrix::from_row_slice(n, x_cols.len(), &x), z, y };
    if let Some(arm) = obs.empty_arm() {
        return Err(Error::EmptyArm { arm });
    }
    Ok(AnalysisDataset { obs, covariate_names: spec.covariate_cols.clone(), source: source.to_path_buf() })
}

pub fn ingest_csv(path: &Path, spec: &AnalysisSpec) -> Result<AnalysisDataset> {
    let file = std::fs::File::open(path)?;
    ingest_reader(std::io::BufReader::new(file), path, spec)
}

/// Counts of estimated propensities per equal-width bin on [0, 1], by arm.
#[derive(Debug, Clone, PartialEq)]
pub struct PsHistogram {
    pub bins: usize,
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
}

/// Bins `e_hat` into `bins` equal-width bins; the last bin is closed.
pub fn export_ps_histogram(z: &[bool], e_hat: &[f64], bins: usize) -> PsHistogram {
    let mut h = PsHistogram { bins, treated: vec![0; bins], control: vec![0; bins] };
    for (&t, &e) in z.iter().zip(e_hat) {
        let b = ((e * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        if t {
            h.treated[b] += 1;
        } else {
            h.control[b] += 1;
        }
    }
    h
}

impl PsHistogram {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["bin", "lo", "hi", "treated", "control"])?;
        for b in 0..self.bins {
            let lo = b as f64 / self.bins as f64;
            let hi = (b + 1) as f64 / self.bins as f64;
            w.write_record([b.to_string(), lo.to_string(), hi.to_string(), self.treated[b].to_string(), self.control[b].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One estimator's result with bootstrap uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectRow {
    pub estimator: String,
    pub method: Method,
    pub trim: Option<f64>,
    pub estimate: Option<f64>,
    pub sd: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub n_used: Option<usize>,
    pub boot_ok: usize,
    pub boot_failed: usize,
    pub unstable: bool,
    /// Reason code when the point estimate could not be computed.
    pub error: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectReport {
    pub rows: Vec<EffectRow>,
    pub n: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub ps_converged: bool,
    pub histogram: Option<PsHistogram>,
}

impl EffectReport {
    pub fn get(&self, method: Method, trim: Option<f64>) -> Option<&EffectRow> {
        let key = EstimatorConfig::new(method, trim).normalized();
        self.rows.iter().find(|r| r.method == key.method && r.trim.map(f64::to_bits) == key.trim.map(f64::to_bits))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `effects.csv` and, when the PS fit succeeded, `ps_hist.csv`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let effects = dir.join("effects.csv");
        self.write_csv(std::fs::File::create(&effects)?)?;
        let mut written = vec![effects];
        if let Some(h) = &self.histogram {
            let p = dir.join("ps_hist.csv");
            h.write_csv(std::fs::File::create(&p)?)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Point estimates on the full sample.
pub fn point_estimates(obs: &Observations, spec: &AnalysisSpec) -> EstimateSet {
    estimate_all(obs, ModelSpec::CORRECT, &spec.grid(), spec.outcome_structure)
}

/// Fits the models, evaluates every estimator and bootstraps them.
/// Resamples run on the current rayon pool with per-resample streams, so the
/// report depends only on the data and the spec.
pub fn run_analysis(data: &AnalysisDataset, spec: &AnalysisSpec) -> Result<EffectReport> {
    spec.validate()?;
    let obs = &data.obs;
    let n = obs.len();
    let grid = spec.grid();
    let fits = FittedModels::fit(obs, ModelSpec::CORRECT, spec.outcome_structure);
    let point = estimate_with_fits(obs, &fits, ModelSpec::CORRECT, &grid, spec.outcome_structure);

    let stream = scenario_id("analyze-bootstrap");
    let boot: Vec<Vec<Option<f64>>> = (0..spec.bootstrap_reps)
        .into_par_iter()
        .map(|b| {
            use rand::Rng;
            let mut rng = derive_replicate_seed(spec.seed, stream, n as u64, b as u64).rng();
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let est = estimate_all(&obs.subset(&idx), ModelSpec::CORRECT, &grid, spec.outcome_structure);
            est.cells.iter().map(|c| c.result.as_ref().ok().map(|v| v.estimate)).collect()
        })
        .collect();

    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + spec.ci_level / 2.0);
    let alpha = 1.0 - spec.ci_level;
    let rows = point
        .cells
        .iter()
        .enumerate()
        .map(|(k, cell)| {
            let mut values: Vec<f64> = boot.iter().filter_map(|r| r[k]).collect();
            let boot_failed = spec.bootstrap_reps - values.len();
            let unstable = spec.bootstrap_reps > 0 && boot_failed as f64 > UNSTABLE_FAILURE_RATE * spec.bootstrap_reps as f64;
            let (estimate, n_used, error) = match &cell.result {
                Ok(v) => (Some(v.estimate), Some(v.n_used), None),
                Err(e) => (None, None, Some(e.code())),
            };
            let sd = (values.len() >= 2).then(|| sample_sd(&values));
            let (ci_lower, ci_upper) = match (spec.ci_method, estimate, sd) {
                (CiMethod::Normal, Some(est), Some(sd)) => (Some(est - z * sd), Some(est + z * sd)),
                (CiMethod::Percentile, Some(_), Some(_)) => {
                    values.sort_by(f64::total_cmp);
                    (Some(quantile_sorted(&values, alpha / 2.0)), Some(quantile_sorted(&values, 1.0 - alpha / 2.0)))
                }
                _ => (None, None),
            };
            EffectRow {
                estimator: cell.config.label(),
                method: cell.config.method,
                trim: cell.config.trim,
                estimate,
                sd,
                ci_lower,
                ci_upper,
                n_used,
                boot_ok: values.len(),
                boot_failed,
                unstable,
                error,
            }
        })
        .collect();

    let (ps_converged, histogram) = match &fits.ps {
        Ok(f) => (f.converged, Some(export_ps_histogram(&obs.z, &f.e_hat, DEFAULT_HIST_BINS))),
        Err(_) => (false, None),
    };
    Ok(EffectReport { rows, n, n_treated: obs.n_treated(), n_control: obs.n_control(), ps_converged, histogram })
}

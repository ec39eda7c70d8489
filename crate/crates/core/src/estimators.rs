//! Average treatment effect estimators.
//!
//! All point estimators are plain functions over per-unit slices. The
//! augmented (DR) estimator accumulates one contribution per unit,
//! `(mu1 + aug1) - (mu0 + aug0)`, and the outcome-regression and
//! Horvitz-Thompson estimators accumulate in the same order, so the collapse
//! identities (zero residuals gives OM, zero predictions gives HT) hold
//! bit-for-bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Arm, Observations};
use crate::error::{EstimateError, FitError};
use crate::models::{FittedModels, LogisticFit, ModelSpec, OutcomeFit, OutcomeStructure};

type EResult<T> = std::result::Result<T, EstimateError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Outcome regression.
    Om,
    /// Horvitz-Thompson IPW (weighted sums divided by N).
    IpwHt,
    /// Hajek IPW (weights normalized within each arm).
    IpwHajek,
    /// Augmented IPW (doubly robust).
    Dr,
    /// Overlap weighting.
    Ow,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Dr, Method::IpwHajek, Method::IpwHt, Method::Om, Method::Ow];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Om => "om",
            Method::IpwHt => "ipw_ht",
            Method::IpwHajek => "ipw_hajek",
            Method::Dr => "dr",
            Method::Ow => "ow",
        }
    }

    /// Whether trimming applies. Outcome regression and overlap weighting
    /// always use the full sample.
    pub fn trimmable(&self) -> bool {
        matches!(self, Method::IpwHt | Method::IpwHajek | Method::Dr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "om" | "outcome_regression" => Ok(Method::Om),
            "ipw_ht" | "ht" => Ok(Method::IpwHt),
            "ipw_hajek" | "hajek" | "ipw" => Ok(Method::IpwHajek),
            "dr" | "aipw" => Ok(Method::Dr),
            "ow" | "overlap" => Ok(Method::Ow),
            other => Err(format!("unknown estimator `{other}`")),
        }
    }
}

/// One cell of an estimator grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: Method,
    /// Keep units with `trim <= e_hat <= 1 - trim`.
    pub trim: Option<f64>,
    /// Refit both working models on the trimmed sample.
    pub refit_after_trim: bool,
}

impl EstimatorConfig {
    pub fn new(method: Method, trim: Option<f64>) -> Self {
        EstimatorConfig { method, trim, refit_after_trim: true }
    }

    /// Drops the trim level for methods that ignore it.
    pub fn normalized(mut self) -> Self {
        if !self.method.trimmable() {
            self.trim = None;
            self.refit_after_trim = true;
        }
        self
    }

    pub fn label(&self) -> String {
        match self.trim {
            None => self.method.as_str().to_string(),
            Some(d) => format!("{}_trim{}", self.method, d),
        }
    }

    fn same_cell(&self, other: &Self) -> bool {
        self.method == other.method
            && self.trim.map(f64::to_bits) == other.trim.map(f64::to_bits)
            && self.refit_after_trim == other.refit_after_trim
    }
}

/// Builds the grid `methods x ({none} + trims)`, with non-trimmable methods
/// appearing once.
pub fn grid(methods: &[Method], trims: &[f64]) -> Vec<EstimatorConfig> {
    let mut cells = Vec::new();
    for &m in methods {
        cells.push(EstimatorConfig::new(m, None));
        for &t in trims {
            cells.push(EstimatorConfig::new(m, Some(t)));
        }
    }
    normalize_grid(&cells)
}

/// Normalizes every cell and removes duplicates, keeping first occurrences.
pub fn normalize_grid(cells: &[EstimatorConfig]) -> Vec<EstimatorConfig> {
    let mut out: Vec<EstimatorConfig> = Vec::new();
    for c in cells.iter().map(|c| c.normalized()) {
        if !out.iter().any(|o| o.same_cell(&c)) {
            out.push(c);
        }
    }
    out
}

fn check_lengths(a: usize, b: usize) -> EResult<()> {
    if a != b {
        Err(EstimateError::LengthMismatch(a, b))
    } else {
        Ok(())
    }
}

fn check_propensities(e_hat: &[f64]) -> EResult<()> {
    match e_hat.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
        Some(index) => Err(EstimateError::DegeneratePropensity { index, value: e_hat[index] }),
        None => Ok(()),
    }
}

/// Mean over units of `mu1_hat - mu0_hat`.
pub fn estimate_om(fit: &OutcomeFit) -> f64 {
    om_from_predictions(&fit.mu0_hat, &fit.mu1_hat)
}

pub fn om_from_predictions(mu0_hat: &[f64], mu1_hat: &[f64]) -> f64 {
    let n = mu0_hat.len();
    let total: f64 = mu1_hat.iter().zip(mu0_hat).map(|(m1, m0)| m1 - m0).sum();
    total / n as f64
}

/// Horvitz-Thompson IPW: `(1/N) [sum z y / e - sum (1-z) y / (1-e)]`.
pub fn estimate_ipw_ht(z: &[bool], y: &[f64], e_hat: &[f64]) -> EResult<f64> {
    check_lengths(z.len(), y.len())?;
    check_lengths(z.len(), e_hat.len())?;
    check_propensities(e_hat)?;
    let total: f64 = (0..z.len())
        .map(|i| if z[i] { y[i] / e_hat[i] } else { -(y[i] / (1.0 - e_hat[i])) })
        .sum();
    Ok(total / z.len() as f64)
}

/// Hajek IPW: difference of inverse-probability weighted arm means.
pub fn estimate_ipw_hajek(z: &[bool], y: &[f64], e_hat: &[f64]) -> EResult<f64> {
    check_lengths(z.len(), y.len())?;
    check_lengths(z.len(), e_hat.len())?;
    check_propensities(e_hat)?;
    weighted_arm_difference(z, y, |i| 1.0 / e_hat[i], |i| 1.0 / (1.0 - e_hat[i]))
}

/// Overlap weighting: treated units weighted by `1 - e`, controls by `e`.
pub fn estimate_ow(z: &[bool], y: &[f64], e_hat: &[f64]) -> EResult<f64> {
    check_lengths(z.len(), y.len())?;
    check_lengths(z.len(), e_hat.len())?;
    check_propensities(e_hat)?;
    weighted_arm_difference(z, y, |i| 1.0 - e_hat[i], |i| e_hat[i])
}

fn weighted_arm_difference(
    z: &[bool],
    y: &[f64],
    w_treated: impl Fn(usize) -> f64,
    w_control: impl Fn(usize) -> f64,
) -> EResult<f64> {
    let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
    let (mut n1, mut n0) = (0usize, 0usize);
    for i in 0..z.len() {
        if z[i] {
            let w = w_treated(i);
            s1 += w * y[i];
            w1 += w;
            n1 += 1;
        } else {
            let w = w_control(i);
            s0 += w * y[i];
            w0 += w;
            n0 += 1;
        }
    }
    if n1 == 0 {
        return Err(EstimateError::EmptyArm { arm: Arm::Treated });
    }
    if n0 == 0 {
        return Err(EstimateError::EmptyArm { arm: Arm::Control });
    }
    if w1 == 0.0 {
        return Err(EstimateError::ZeroDenominator { arm: Arm::Treated });
    }
    if w0 == 0.0 {
        return Err(EstimateError::ZeroDenominator { arm: Arm::Control });
    }
    Ok(s1 / w1 - s0 / w0)
}

/// Augmented IPW:
/// `(1/N) sum [mu1 + z (y - mu1) / e] - (1/N) sum [mu0 + (1-z)(y - mu0) / (1-e)]`.
pub fn estimate_dr(z: &[bool], y: &[f64], e_hat: &[f64], mu0_hat: &[f64], mu1_hat: &[f64]) -> EResult<f64> {
    let n = z.len();
    for len in [y.len(), e_hat.len(), mu0_hat.len(), mu1_hat.len()] {
        check_lengths(n, len)?;
    }
    check_propensities(e_hat)?;
    let total: f64 = (0..n)
        .map(|i| {
            let (m0, m1) = (mu0_hat[i], mu1_hat[i]);
            if z[i] {
                (m1 + (y[i] - m1) / e_hat[i]) - m0
            } else {
                m1 - (m0 + (y[i] - m0) / (1.0 - e_hat[i]))
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// Indices with `delta <= e_hat <= 1 - delta`. Fails when the retained set
/// lacks either arm.
pub fn apply_trim(z: &[bool], e_hat: &[f64], delta: f64) -> EResult<Vec<usize>> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(EstimateError::InvalidTrim(delta));
    }
    check_lengths(z.len(), e_hat.len())?;
    let keep: Vec<usize> = (0..e_hat.len()).filter(|&i| e_hat[i] >= delta && e_hat[i] <= 1.0 - delta).collect();
    if !keep.iter().any(|&i| z[i]) {
        return Err(EstimateError::EmptyArm { arm: Arm::Treated });
    }
    if keep.iter().all(|&i| z[i]) {
        return Err(EstimateError::EmptyArm { arm: Arm::Control });
    }
    Ok(keep)
}

/// A successful estimator cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellValue {
    pub estimate: f64,
    /// Units contributing after trimming.
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateCell {
    pub config: EstimatorConfig,
    pub result: EResult<CellValue>,
}

/// Estimates for every cell of a grid on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    pub cells: Vec<EstimateCell>,
}

impl EstimateSet {
    pub fn get(&self, method: Method, trim: Option<f64>) -> Option<&EstimateCell> {
        let key = EstimatorConfig::new(method, trim).normalized();
        self.cells
            .iter()
            .find(|c| c.config.method == key.method && c.config.trim.map(f64::to_bits) == key.trim.map(f64::to_bits))
    }

    pub fn estimate(&self, method: Method, trim: Option<f64>) -> Option<f64> {
        self.get(method, trim).and_then(|c| c.result.as_ref().ok()).map(|v| v.estimate)
    }
}

/// Propensities and outcome predictions a cell is evaluated with.
struct Inputs<'a> {
    z: &'a [bool],
    y: &'a [f64],
    ps: Result<&'a LogisticFit, &'a FitError>,
    outcome: Result<&'a OutcomeFit, &'a FitError>,
}

fn evaluate(method: Method, inp: &Inputs<'_>) -> EResult<f64> {
    let e_hat = || inp.ps.map(|f| f.e_hat.as_slice()).map_err(|e| EstimateError::PsFit(e.clone()));
    let outcome = || inp.outcome.map_err(|e| EstimateError::OutcomeFit(e.clone()));
    match method {
        Method::Om => outcome().map(estimate_om),
        Method::IpwHt => estimate_ipw_ht(inp.z, inp.y, e_hat()?),
        Method::IpwHajek => estimate_ipw_hajek(inp.z, inp.y, e_hat()?),
        Method::Ow => estimate_ow(inp.z, inp.y, e_hat()?),
        Method::Dr => {
            let e = e_hat()?;
            let o = outcome()?;
            estimate_dr(inp.z, inp.y, e, &o.mu0_hat, &o.mu1_hat)
        }
    }
}

fn subset_fit_predictions(full: &FittedModels, keep: &[usize]) -> FittedModels {
    let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
    FittedModels {
        ps: full.ps.as_ref().map_err(Clone::clone).map(|f| LogisticFit { e_hat: pick(&f.e_hat), ..f.clone() }),
        outcome: full.outcome.as_ref().map_err(Clone::clone).map(|f| OutcomeFit {
            mu0_hat: pick(&f.mu0_hat),
            mu1_hat: pick(&f.mu1_hat),
            ..f.clone()
        }),
    }
}

/// Evaluates every cell of `grid` on `obs`, reusing `full` for untrimmed
/// cells. Trimmed cells select units by the full-sample propensities and,
/// when `refit_after_trim` is set, refit both models on the retained units.
/// A failing cell never affects the others.
pub fn estimate_with_fits(
    obs: &Observations,
    full: &FittedModels,
    spec: ModelSpec,
    grid: &[EstimatorConfig],
    structure: OutcomeStructure,
) -> EstimateSet {
    let grid = normalize_grid(grid);
    let n = obs.len();
    let mut cells: Vec<Option<EstimateCell>> = vec![None; grid.len()];

    // Group cells sharing the same (trim, refit) so each trimmed refit is done once.
    let mut done = vec![false; grid.len()];
    for k in 0..grid.len() {
        if done[k] {
            continue;
        }
        let key = grid[k];
        let members: Vec<usize> = (k..grid.len())
            .filter(|&j| {
                grid[j].trim.map(f64::to_bits) == key.trim.map(f64::to_bits)
                    && (key.trim.is_none() || grid[j].refit_after_trim == key.refit_after_trim)
            })
            .collect();
        for &j in &members {
            done[j] = true;
        }

        let group: EResult<(usize, Option<(Observations, FittedModels)>)> = match key.trim {
            None => Ok((n, None)),
            Some(delta) => {
                let e_full = full.ps.as_ref().map_err(|e| EstimateError::PsFit(e.clone()));
                e_full.and_then(|f| apply_trim(&obs.z, &f.e_hat, delta)).map(|keep| {
                    let sub = obs.subset(&keep);
                    let fits = if key.refit_after_trim {
                        FittedModels::fit(&sub, spec, structure)
                    } else {
                        subset_fit_predictions(full, &keep)
                    };
                    (keep.len(), Some((sub, fits)))
                })
            }
        };

        for &j in &members {
            let result = match &group {
                Err(e) => Err(e.clone()),
                Ok((n_used, trimmed)) => {
                    let (sample, fits) = match trimmed {
                        Some((s, f)) => (s, f),
                        None => (obs, full),
                    };
                    let inputs = Inputs { z: &sample.z, y: &sample.y, ps: fits.ps.as_ref(), outcome: fits.outcome.as_ref() };
                    evaluate(grid[j].method, &inputs).map(|estimate| CellValue { estimate, n_used: *n_used })
                }
            };
            cells[j] = Some(EstimateCell { config: grid[j], result });
        }
    }

    EstimateSet { cells: cells.into_iter().map(|c| c.expect("every cell evaluated")).collect() }
}

/// Fits the working models under `spec` and evaluates the grid.
pub fn estimate_all(
    obs: &Observations,
    spec: ModelSpec,
    grid: &[EstimatorConfig],
    structure: OutcomeStructure,
) -> EstimateSet {
    let full = FittedModels::fit(obs, spec, structure);
    estimate_with_fits(obs, &full, spec, grid, structure)
}

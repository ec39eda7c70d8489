//! Simulation data-generating process.
//!
//! Six covariates come from an equicorrelated standard Gaussian (pairwise
//! correlation 0.5); the last three are dichotomised at zero. Treatment is
//! Bernoulli with a logistic propensity, and the outcome is linear in the
//! covariates with a homogeneous additive treatment effect. Both potential
//! outcomes are kept so finite-sample quantities can be computed exactly.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Observations;
use crate::error::{Error, Result};
use crate::stats::logistic;

pub const N_COVARIATES: usize = 6;

/// Propensity slopes before scaling by the overlap multiplier `d`.
pub const BASE_PS_SLOPES: [f64; N_COVARIATES] = [0.2, 0.3, 0.4, -0.25, -0.3, -0.3];
pub const OUTCOME_SLOPES: [f64; N_COVARIATES] = [-0.5, -0.8, -1.2, 0.8, 0.8, 1.0];

/// Shared-factor loading for pairwise correlation 0.5: V = sqrt(.5) F + sqrt(.5) E.
const FACTOR_LOADING: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Named presets: (name, prevalence target, d, intercept).
pub const PRESETS: [(&str, f64, f64, f64); 4] = [
    ("prev40_d1", 0.4, 1.0, -0.05),
    ("prev40_d3", 0.4, 3.0, 0.37),
    ("prev10_d1", 0.1, 1.0, -2.13),
    ("prev10_d3", 0.1, 3.0, -3.16),
];

/// Parameters of one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub prevalence_target: f64,
    pub d: f64,
    pub alpha0: f64,
    pub alpha: [f64; N_COVARIATES],
    #[serde(default)]
    pub beta0: f64,
    #[serde(default = "default_beta")]
    pub beta: [f64; N_COVARIATES],
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
}

fn default_beta() -> [f64; N_COVARIATES] {
    OUTCOME_SLOPES
}
fn default_tau() -> f64 {
    1.0
}
fn default_noise_sd() -> f64 {
    1.0
}

impl Scenario {
    /// Scenario with the standard coefficient vectors and the supplied
    /// intercept.
    pub fn with_intercept(prevalence_target: f64, d: f64, alpha0: f64) -> Self {
        Scenario {
            prevalence_target,
            d,
            alpha0,
            alpha: BASE_PS_SLOPES.map(|a| a * d),
            beta0: 0.0,
            beta: OUTCOME_SLOPES,
            tau: 1.0,
            noise_sd: 1.0,
        }
    }

    /// One of the four standard scenarios, keyed by prevalence and `d`.
    pub fn preset(prevalence: f64, d: f64) -> Option<Self> {
        PRESETS
            .iter()
            .find(|p| (p.1 - prevalence).abs() < 1e-9 && (p.2 - d).abs() < 1e-9)
            .map(|p| Scenario::with_intercept(p.1, p.2, p.3))
    }

    pub fn named(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|p| p.0 == name)
            .map(|p| Scenario::with_intercept(p.1, p.2, p.3))
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|p| p.0)
    }

    /// Parses a scenario from a TOML key-value document.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| Error::Config {
            field: e.span().map(|r| format!("byte {}..{}", r.start, r.end)).unwrap_or_else(|| "scenario".into()),
            message: e.message().to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha0, self.beta0, self.tau, self.noise_sd, self.d]
            .iter()
            .chain(&self.alpha)
            .chain(&self.beta)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config { field: "scenario".into(), message: "coefficients must be finite".into() });
        }
        if !(self.prevalence_target > 0.0 && self.prevalence_target < 1.0) {
            return Err(Error::Config {
                field: "prevalence_target".into(),
                message: format!("{} is not in (0, 1)", self.prevalence_target),
            });
        }
        if self.noise_sd < 0.0 {
            return Err(Error::Config { field: "noise_sd".into(), message: "must be non-negative".into() });
        }
        Ok(())
    }

    fn ps_linear(&self, row: &[f64]) -> f64 {
        self.alpha.iter().zip(row).fold(self.alpha0, |acc, (a, x)| acc + a * x)
    }

    fn outcome_linear(&self, row: &[f64]) -> f64 {
        self.beta.iter().zip(row).fold(self.beta0, |acc, (b, x)| acc + b * x)
    }
}

/// A simulated study with both potential outcomes and the true propensity.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub obs: Observations,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub e_true: Vec<f64>,
}

impl SimDataset {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Writes the dataset as CSV with header `x1,...,x6,z,y_obs,y0,y1,e_true`.
    /// Floats use the shortest round-trip representation, so reading the file
    /// back yields identical values.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let p = self.obs.x.ncols();
        let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
        header.extend(["z", "y_obs", "y0", "y1", "e_true"].map(String::from));
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = (0..p).map(|j| self.obs.x[(i, j)].to_string()).collect();
            rec.push(if self.obs.z[i] { "1".into() } else { "0".into() });
            rec.push(self.obs.y[i].to_string());
            rec.push(self.y0[i].to_string());
            rec.push(self.y1[i].to_string());
            rec.push(self.e_true[i].to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn draw_covariate_row<R: Rng + ?Sized>(rng: &mut R, row: &mut [f64; N_COVARIATES]) {
    let common: f64 = rng.sample(StandardNormal);
    for (j, v) in row.iter_mut().enumerate() {
        let own: f64 = rng.sample(StandardNormal);
        let latent = FACTOR_LOADING * common + FACTOR_LOADING * own;
        *v = if j < 3 { latent } else if latent < 0.0 { 1.0 } else { 0.0 };
    }
}

/// Draws `n` covariate rows. Columns 1-3 are continuous, 4-6 are binary.
pub fn gen_covariates<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("covariate draw needs n >= 1".into()));
    }
    let mut flat = Vec::with_capacity(n * N_COVARIATES);
    let mut row = [0.0; N_COVARIATES];
    for _ in 0..n {
        draw_covariate_row(rng, &mut row);
        flat.extend_from_slice(&row);
    }
    Ok(DMatrix::from_row_slice(n, N_COVARIATES, &flat))
}

/// True propensity `logistic(alpha0 + alpha' x)`.
pub fn true_propensity(x_row: &[f64], scenario: &Scenario) -> f64 {
    logistic(scenario.ps_linear(x_row))
}

/// Draws one dataset. Fails with [`Error::EmptyArm`] when the realized
/// treatment vector has no treated or no control units.
pub fn make_dataset<R: Rng + ?Sized>(scenario: &Scenario, n: usize, rng: &mut R) -> Result<SimDataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("dataset needs n >= 2, got {n}")));
    }
    let x = gen_covariates(n, rng)?;
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut e_true = Vec::with_capacity(n);
    let mut row = [0.0; N_COVARIATES];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[(i, j)];
        }
        let e = true_propensity(&row, scenario);
        let zi = rng.gen::<f64>() < e;
        let eps: f64 = rng.sample::<f64, _>(StandardNormal) * scenario.noise_sd;
        // One noise draw shared by both potential outcomes.
        let base = scenario.outcome_linear(&row) + eps;
        let y1i = base + scenario.tau;
        e_true.push(e);
        z.push(zi);
        y0.push(base);
        y1.push(y1i);
        y.push(if zi { y1i } else { base });
    }
    let obs = Observations { x, z, y };
    if let Some(arm) = obs.empty_arm() {
        return Err(Error::EmptyArm { arm });
    }
    Ok(SimDataset { obs, y0, y1, e_true })
}

/// Draws until both arms are non-empty. Returns the dataset and the number
/// of discarded draws.
pub fn make_dataset_redrawing<R: Rng + ?Sized>(
    scenario: &Scenario,
    n: usize,
    rng: &mut R,
    max_redraws: usize,
) -> Result<(SimDataset, usize)> {
    let mut redraws = 0;
    loop {
        match make_dataset(scenario, n, rng) {
            Ok(ds) => return Ok((ds, redraws)),
            Err(Error::EmptyArm { arm }) if redraws >= max_redraws => return Err(Error::EmptyArm { arm }),
            Err(Error::EmptyArm { .. }) => redraws += 1,
            Err(e) => return Err(e),
        }
    }
}

/// Default covariate draw size for intercept calibration.
pub const CALIBRATION_DRAWS: usize = 1_000_000;

/// Finds the intercept that makes the mean true propensity over a large
/// covariate draw equal `prevalence_target`, by bisection.
pub fn calibrate_intercept<R: Rng + ?Sized>(
    prevalence_target: f64,
    alpha: &[f64; N_COVARIATES],
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(prevalence_target > 0.0 && prevalence_target < 1.0) {
        return Err(Error::InvalidArgument(format!("prevalence {prevalence_target} not in (0, 1)")));
    }
    let x = gen_covariates(draws, rng)?;
    let linear: Vec<f64> = (0..draws)
        .map(|i| alpha.iter().enumerate().map(|(j, a)| a * x[(i, j)]).sum())
        .collect();
    let prevalence = |a0: f64| linear.iter().map(|l| logistic(a0 + l)).sum::<f64>() / draws as f64;

    let (mut lo, mut hi) = (-30.0, 30.0);
    if prevalence(lo) > prevalence_target || prevalence(hi) < prevalence_target {
        return Err(Error::Calibration(format!("target {prevalence_target} not bracketed by [{lo}, {hi}]")));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if prevalence(mid) < prevalence_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::Calibration("bisection did not converge".into()))
}

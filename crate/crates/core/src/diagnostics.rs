//! Finite-sample diagnostics of the doubly-robust estimator.
//!
//! With both potential outcomes known, the error of the DR estimate against
//! the sample average effect factors exactly as the mean of per-unit products
//! `r_e * r_y`, where `r_e = z - e_hat` is the propensity residual and
//! `r_y = (y1 - mu1) / e_hat + (y0 - mu0) / (1 - e_hat)` is the weighted
//! outcome residual. This module computes that decomposition, restricts it to
//! subpopulations (tail and bulk of the estimated propensity) and to
//! 0.01-wide intervals of the true propensity, and estimates the interval
//! mass of the true propensity from a large draw.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{make_dataset, Scenario, SimDataset};
use crate::error::{EstimateError, Result};
use crate::stats::quantile_sorted;

/// Number of equal-width propensity intervals on (0, 1).
pub const N_INTERVALS: usize = 100;

/// Sample average treatment effect from the potential outcomes.
pub fn sate(ds: &SimDataset) -> f64 {
    let total: f64 = ds.y1.iter().zip(&ds.y0).map(|(a, b)| a - b).sum();
    total / ds.len() as f64
}

/// Per-unit propensity residuals and weighted outcome residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub r_e: Vec<f64>,
    pub r_y: Vec<f64>,
}

impl ResidualSet {
    pub fn len(&self) -> usize {
        self.r_e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_e.is_empty()
    }

    pub fn product(&self, i: usize) -> f64 {
        self.r_e[i] * self.r_y[i]
    }
}

/// Per-column difference between the overlap-weighted treated and control
/// means of `design`. Treated units weigh `1 - e_hat`, controls `e_hat`.
/// With `e_hat` from a logistic MLE on the same design every entry is zero
/// up to the fit tolerance.
pub fn ow_balance(design: &DMatrix<f64>, z: &[bool], e_hat: &[f64]) -> Vec<f64> {
    let (mut wt, mut wc) = (0.0, 0.0);
    let mut st = vec![0.0; design.ncols()];
    let mut sc = vec![0.0; design.ncols()];
    for (i, (&t, &e)) in z.iter().zip(e_hat).enumerate() {
        let (w, sums, total) = if t { (1.0 - e, &mut st, &mut wt) } else { (e, &mut sc, &mut wc) };
        *total += w;
        for (j, s) in sums.iter_mut().enumerate() {
            *s += w * design[(i, j)];
        }
    }
    st.iter().zip(&sc).map(|(a, b)| a / wt - b / wc).collect()
}

/// Finite-sample error of the DR estimator, `mean(r_e * r_y)`, with the
/// residual vectors. Equals `dr_estimate - sate` up to rounding.
pub fn finite_sample_error(
    ds: &SimDataset,
    e_hat: &[f64],
    mu0_hat: &[f64],
    mu1_hat: &[f64],
) -> std::result::Result<(f64, ResidualSet), EstimateError> {
    let n = ds.len();
    for len in [e_hat.len(), mu0_hat.len(), mu1_hat.len()] {
        if len != n {
            return Err(EstimateError::LengthMismatch(n, len));
        }
    }
    if let Some(index) = e_hat.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(EstimateError::DegeneratePropensity { index, value: e_hat[index] });
    }
    let mut r_e = Vec::with_capacity(n);
    let mut r_y = Vec::with_capacity(n);
    for i in 0..n {
        let z = if ds.obs.z[i] { 1.0 } else { 0.0 };
        r_e.push(z - e_hat[i]);
        r_y.push((ds.y1[i] - mu1_hat[i]) / e_hat[i] + (ds.y0[i] - mu0_hat[i]) / (1.0 - e_hat[i]));
    }
    let res = ResidualSet { r_e, r_y };
    let delta = (0..n).map(|i| res.product(i)).sum::<f64>() / n as f64;
    Ok((delta, res))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Overall,
    /// Units with extreme estimated propensities.
    Tail,
    /// Units with central estimated propensities.
    Bulk,
}

impl Population {
    pub const ALL: [Population; 3] = [Population::Overall, Population::Tail, Population::Bulk];

    pub fn as_str(&self) -> &'static str {
        match self {
            Population::Overall => "overall",
            Population::Tail => "tail",
            Population::Bulk => "bulk",
        }
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How tail and bulk are delimited.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailRule {
    /// Tail: outside the within-sample 5th-95th percentiles of `e_hat`;
    /// bulk: within the 25th-75th percentiles. Boundary units are inner.
    #[default]
    Percentile,
    /// Tail: `e_hat` outside (0.05, 0.95); bulk: `e_hat` within [0.25, 0.75].
    RawThreshold,
}

impl FromStr for TailRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "percentile" => Ok(TailRule::Percentile),
            "raw_threshold" | "raw" => Ok(TailRule::RawThreshold),
            other => Err(format!("unknown tail rule `{other}`")),
        }
    }
}

/// Membership mask of a subpopulation.
pub fn population_mask(e_hat: &[f64], population: Population, rule: TailRule) -> Vec<bool> {
    if population == Population::Overall || e_hat.is_empty() {
        return vec![true; e_hat.len()];
    }
    let (tail_lo, tail_hi, bulk_lo, bulk_hi) = match rule {
        TailRule::RawThreshold => (0.05, 0.95, 0.25, 0.75),
        TailRule::Percentile => {
            let mut sorted = e_hat.to_vec();
            sorted.sort_by(f64::total_cmp);
            (
                quantile_sorted(&sorted, 0.05),
                quantile_sorted(&sorted, 0.95),
                quantile_sorted(&sorted, 0.25),
                quantile_sorted(&sorted, 0.75),
            )
        }
    };
    match population {
        Population::Tail => e_hat.iter().map(|&e| e < tail_lo || e > tail_hi).collect(),
        Population::Bulk => e_hat.iter().map(|&e| e >= bulk_lo && e <= bulk_hi).collect(),
        Population::Overall => unreachable!(),
    }
}

/// Mean of `r_e * r_y` over the subpopulation; `None` when it is empty.
pub fn subpop_error(res: &ResidualSet, e_hat: &[f64], population: Population, rule: TailRule) -> Option<f64> {
    let mask = population_mask(e_hat, population, rule);
    let (sum, count) = (0..res.len())
        .filter(|&i| mask[i])
        .fold((0.0, 0usize), |(s, c), i| (s + res.product(i), c + 1));
    (count > 0).then(|| sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Propensity residual `r_e`.
    ResidualE,
    /// Weighted outcome residual `r_y`.
    ResidualY,
    /// Product `r_e * r_y`.
    Product,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::ResidualE, Quantity::ResidualY, Quantity::Product];

    pub fn as_str(&self) -> &'static str {
        match self {
            Quantity::ResidualE => "r_e",
            Quantity::ResidualY => "r_y",
            Quantity::Product => "r_e_r_y",
        }
    }

    fn value(&self, res: &ResidualSet, i: usize) -> f64 {
        match self {
            Quantity::ResidualE => res.r_e[i],
            Quantity::ResidualY => res.r_y[i],
            Quantity::Product => res.product(i),
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Interval index of a propensity: interval `l` is `(l/100, (l+1)/100]`, the
/// last interval also holds values that round up to 1.
pub fn interval_index(e: f64) -> usize {
    let l = (e * N_INTERVALS as f64).ceil() as isize - 1;
    l.clamp(0, N_INTERVALS as isize - 1) as usize
}

pub fn interval_bounds(l: usize) -> (f64, f64) {
    (l as f64 / N_INTERVALS as f64, (l + 1) as f64 / N_INTERVALS as f64)
}

/// Within-sample means of `quantity` over units whose true propensity falls in
/// each interval, plus the unit count per interval. Intervals with no units
/// are `None`.
pub fn interval_means(res: &ResidualSet, e_true: &[f64], quantity: Quantity) -> (Vec<Option<f64>>, Vec<usize>) {
    let mut sums = vec![0.0; N_INTERVALS];
    let mut counts = vec![0usize; N_INTERVALS];
    for (i, &e) in e_true.iter().enumerate() {
        let l = interval_index(e);
        sums[l] += quantity.value(res, i);
        counts[l] += 1;
    }
    let means = sums.iter().zip(&counts).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect();
    (means, counts)
}

/// Cross-replicate mean and mean absolute value of a per-replicate quantity.
/// Missing replicates are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeanMav {
    pub sum: f64,
    pub sum_abs: f64,
    pub count: usize,
}

impl MeanMav {
    pub fn push(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.sum_abs += v.abs();
            self.count += 1;
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn mav(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_abs / self.count as f64)
    }
}

/// Per-interval MAV accumulator across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMav {
    pub cells: Vec<MeanMav>,
}

impl Default for IntervalMav {
    fn default() -> Self {
        IntervalMav { cells: vec![MeanMav::default(); N_INTERVALS] }
    }
}

impl IntervalMav {
    pub fn push(&mut self, means: &[Option<f64>]) {
        for (cell, &m) in self.cells.iter_mut().zip(means) {
            cell.push(m);
        }
    }

    pub fn mav(&self) -> Vec<Option<f64>> {
        self.cells.iter().map(MeanMav::mav).collect()
    }
}

/// `(mav_misspecified / mav_correct) * phi`.
pub fn scaled_relative_mav(mav_misspecified: f64, mav_correct: f64, phi: f64) -> f64 {
    mav_misspecified / mav_correct * phi
}

/// Large-sample distribution of the true propensity for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiMass {
    /// Probability mass per interval; sums to 1.
    pub mass: Vec<f64>,
    /// Counts per interval among treated and control units.
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
    pub n: usize,
    /// Fraction of units with true propensity outside (0.05, 0.95).
    pub outside_05_95: f64,
    pub prevalence: f64,
}

/// Default draw size for interval masses.
pub const PHI_DRAWS: usize = 100_000;

/// Histograms the true propensity of `n` simulated units over the 100
/// intervals, overall and by realized treatment.
pub fn phi_mass<R: Rng + ?Sized>(scenario: &Scenario, n: usize, rng: &mut R) -> Result<PhiMass> {
    let ds = make_dataset(scenario, n, rng)?;
    let mut treated = vec![0usize; N_INTERVALS];
    let mut control = vec![0usize; N_INTERVALS];
    let mut outside = 0usize;
    for (i, &e) in ds.e_true.iter().enumerate() {
        let l = interval_index(e);
        if ds.obs.z[i] {
            treated[l] += 1;
        } else {
            control[l] += 1;
        }
        if e <= 0.05 || e >= 0.95 {
            outside += 1;
        }
    }
    let mass = treated.iter().zip(&control).map(|(t, c)| (t + c) as f64 / n as f64).collect();
    Ok(PhiMass {
        mass,
        n,
        outside_05_95: outside as f64 / n as f64,
        prevalence: ds.obs.n_treated() as f64 / n as f64,
        treated,
        control,
    })
}

//! Working models: logistic propensity fit (IRLS) and linear outcome fit
//! (least squares via Householder QR), with configurable misspecification of
//! the covariate design.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Observations};
use crate::error::FitError;
use crate::stats::{logistic, softplus};

/// How the covariates enter a working model's design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateForm {
    /// All covariates, linearly.
    Correct,
    /// The third covariate enters as its square.
    WrongForm,
    /// The third and fourth covariates are dropped.
    OmitVars,
}

impl CovariateForm {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovariateForm::Correct => "correct",
            CovariateForm::WrongForm => "wrong_form",
            CovariateForm::OmitVars => "omit_vars",
        }
    }
}

impl fmt::Display for CovariateForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Covariate forms of the propensity and outcome working models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub ps_form: CovariateForm,
    pub outcome_form: CovariateForm,
}

impl ModelSpec {
    pub const CORRECT: ModelSpec = ModelSpec::new(CovariateForm::Correct, CovariateForm::Correct);

    pub const fn new(ps_form: CovariateForm, outcome_form: CovariateForm) -> Self {
        ModelSpec { ps_form, outcome_form }
    }

    pub fn is_correct(&self) -> bool {
        *self == Self::CORRECT
    }

    /// The seven specifications used in the study: correct, then PS-only,
    /// outcome-only and both misspecified for each misspecification type.
    pub fn study_grid() -> Vec<ModelSpec> {
        use CovariateForm::*;
        let mut v = vec![Self::CORRECT];
        for f in [WrongForm, OmitVars] {
            v.push(ModelSpec::new(f, Correct));
            v.push(ModelSpec::new(Correct, f));
            v.push(ModelSpec::new(f, f));
        }
        v
    }

    /// Short label such as `correct`, `ps-wrong_form`, `outcome-omit_vars`,
    /// `both-wrong_form`.
    pub fn label(&self) -> String {
        use CovariateForm::Correct;
        match (self.ps_form, self.outcome_form) {
            (Correct, Correct) => "correct".into(),
            (f, Correct) => format!("ps-{f}"),
            (Correct, f) => format!("outcome-{f}"),
            (a, b) if a == b => format!("both-{a}"),
            (a, b) => format!("ps-{a}+outcome-{b}"),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use CovariateForm::*;
        let form = |t: &str| match t {
            "correct" => Ok(Correct),
            "wrong_form" => Ok(WrongForm),
            "omit_vars" => Ok(OmitVars),
            other => Err(format!("unknown covariate form `{other}`")),
        };
        if s == "correct" {
            return Ok(Self::CORRECT);
        }
        if let Some((ps, out)) = s.split_once('+') {
            let ps = ps.strip_prefix("ps-").ok_or_else(|| format!("bad model spec `{s}`"))?;
            let out = out.strip_prefix("outcome-").ok_or_else(|| format!("bad model spec `{s}`"))?;
            return Ok(ModelSpec::new(form(ps)?, form(out)?));
        }
        if let Some(f) = s.strip_prefix("ps-") {
            return Ok(ModelSpec::new(form(f)?, Correct));
        }
        if let Some(f) = s.strip_prefix("outcome-") {
            return Ok(ModelSpec::new(Correct, form(f)?));
        }
        if let Some(f) = s.strip_prefix("both-") {
            let f = form(f)?;
            return Ok(ModelSpec::new(f, f));
        }
        Err(format!("unknown model spec `{s}`"))
    }
}

/// Design matrix `[1, covariates...]` under the given covariate form.
///
/// `WrongForm` squares column 3 in place; `OmitVars` drops columns 3 and 4
/// (1-based covariate numbering).
pub fn build_design(x: &DMatrix<f64>, form: CovariateForm) -> Result<DMatrix<f64>, FitError> {
    let (n, k) = x.shape();
    let needed = match form {
        CovariateForm::Correct => 0,
        CovariateForm::WrongForm => 3,
        CovariateForm::OmitVars => 4,
    };
    if k < needed {
        return Err(FitError::TooFewCovariates { form: form.as_str(), needed, got: k });
    }
    let cols: Vec<usize> = match form {
        CovariateForm::OmitVars => (0..k).filter(|&j| j != 2 && j != 3).collect(),
        _ => (0..k).collect(),
    };
    let p = cols.len() + 1;
    if n < p {
        return Err(FitError::TooFewRows { rows: n, cols: p });
    }
    let square_third = form == CovariateForm::WrongForm;
    Ok(DMatrix::from_fn(n, p, |i, j| {
        if j == 0 {
            1.0
        } else {
            let c = cols[j - 1];
            let v = x[(i, c)];
            if square_third && c == 2 {
                v * v
            } else {
                v
            }
        }
    }))
}

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_COEF_TOL: f64 = 1e-8;
pub const IRLS_DEVIANCE_TOL: f64 = 1e-10;
/// Any coefficient beyond this magnitude is taken as (quasi-)separation.
pub const SEPARATION_BOUND: f64 = 30.0;
const RIDGE: f64 = 1e-10;

/// Maximum-likelihood logistic fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Log-odds coefficients, intercept first.
    pub coef: Vec<f64>,
    pub converged: bool,
    /// Set when a coefficient exceeded [`SEPARATION_BOUND`].
    pub separated: bool,
    pub n_iter: usize,
    pub e_hat: Vec<f64>,
}

fn deviance(eta: &DVector<f64>, z: &[bool]) -> f64 {
    // -2 log L with log p = -softplus(-eta), log(1-p) = -softplus(eta)
    2.0 * eta
        .iter()
        .zip(z)
        .map(|(&e, &zi)| if zi { softplus(-e) } else { softplus(e) })
        .sum::<f64>()
}

fn check_arms(z: &[bool]) -> Result<(), FitError> {
    let treated = z.iter().filter(|&&t| t).count();
    if treated == 0 {
        return Err(FitError::SingleArm { arm: Arm::Control });
    }
    if treated == z.len() {
        return Err(FitError::SingleArm { arm: Arm::Treated });
    }
    Ok(())
}

/// Fits `P(z = 1 | design) = logistic(design * coef)` by iteratively
/// reweighted least squares (Newton-Raphson on the log-likelihood).
///
/// Non-convergence and separation are reported through the flags on the
/// returned fit rather than as errors.
pub fn fit_logistic(design: &DMatrix<f64>, z: &[bool]) -> Result<LogisticFit, FitError> {
    let (n, p) = design.shape();
    if z.len() != n {
        return Err(FitError::LengthMismatch { rows: n, len: z.len() });
    }
    if n < p {
        return Err(FitError::TooFewRows { rows: n, cols: p });
    }
    check_arms(z)?;

    let zf = DVector::from_iterator(n, z.iter().map(|&t| if t { 1.0 } else { 0.0 }));
    let mut beta = DVector::<f64>::zeros(p);
    let mut eta = design * &beta;
    let mut dev = deviance(&eta, z);
    let mut converged = false;
    let mut separated = false;
    let mut n_iter = 0;
    let mut weighted = design.clone();

    while n_iter < IRLS_MAX_ITER {
        n_iter += 1;
        let mu = eta.map(logistic);
        let w = mu.map(|m| m * (1.0 - m));
        for (j, mut col) in weighted.column_iter_mut().enumerate() {
            for i in 0..n {
                col[i] = design[(i, j)] * w[i];
            }
        }
        let hessian = design.tr_mul(&weighted);
        let score = design.tr_mul(&(&zf - &mu));
        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => {
                let mut ridged = hessian;
                for j in 0..p {
                    ridged[(j, j)] += RIDGE;
                }
                match ridged.cholesky() {
                    Some(ch) => ch.solve(&score),
                    None => break,
                }
            }
        };
        beta += &step;
        if beta.iter().any(|b| !b.is_finite() || b.abs() > SEPARATION_BOUND) {
            separated = true;
            eta = design * &beta;
            break;
        }
        eta = design * &beta;
        let new_dev = deviance(&eta, z);
        let max_step = step.amax();
        let rel_dev = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        if max_step < IRLS_COEF_TOL || rel_dev < IRLS_DEVIANCE_TOL {
            converged = true;
            break;
        }
    }

    Ok(LogisticFit {
        coef: beta.iter().copied().collect(),
        converged: converged && !separated,
        separated,
        n_iter,
        e_hat: eta.iter().map(|&e| logistic(e)).collect(),
    })
}

/// How the outcome model is parameterised.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStructure {
    /// One regression on `[design | z]`; the treatment effect is additive.
    #[default]
    Joint,
    /// Separate regressions on the design within each arm.
    PerArm,
}

/// Linear outcome fit with predicted potential outcomes for every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeFit {
    pub structure: OutcomeStructure,
    /// `Joint`: design coefficients followed by the treatment coefficient.
    /// `PerArm`: control-arm coefficients followed by treated-arm ones.
    pub coef: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
}

impl OutcomeFit {
    pub fn treatment_coef(&self) -> Option<f64> {
        match self.structure {
            OutcomeStructure::Joint => self.coef.last().copied(),
            OutcomeStructure::PerArm => None,
        }
    }
}

/// Relative threshold on `|R_jj|` below which a column is declared collinear.
const RANK_TOL: f64 = 1e-10;

/// Least-squares solution of `a * b = y` via Householder QR.
pub fn least_squares(a: DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>, FitError> {
    let (n, p) = a.shape();
    if y.len() != n {
        return Err(FitError::LengthMismatch { rows: n, len: y.len() });
    }
    if n < p {
        return Err(FitError::TooFewRows { rows: n, cols: p });
    }
    let col_norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let qr = a.qr();
    let r = qr.r();
    for j in 0..p {
        let scale = col_norms[j].max(f64::MIN_POSITIVE);
        if r[(j, j)].abs() <= RANK_TOL * scale {
            return Err(FitError::RankDeficient { column: j });
        }
    }
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let head = qty.rows(0, p).into_owned();
    let b = r
        .solve_upper_triangular(&head)
        .ok_or(FitError::RankDeficient { column: p - 1 })?;
    Ok(b.iter().copied().collect())
}

/// Fits the outcome model by least squares and predicts both potential
/// outcomes for every unit.
pub fn fit_outcome(
    design: &DMatrix<f64>,
    z: &[bool],
    y: &[f64],
    structure: OutcomeStructure,
) -> Result<OutcomeFit, FitError> {
    let (n, p) = design.shape();
    if z.len() != n {
        return Err(FitError::LengthMismatch { rows: n, len: z.len() });
    }
    if y.len() != n {
        return Err(FitError::LengthMismatch { rows: n, len: y.len() });
    }
    match structure {
        OutcomeStructure::Joint => {
            let a = DMatrix::from_fn(n, p + 1, |i, j| if j < p { design[(i, j)] } else if z[i] { 1.0 } else { 0.0 });
            let coef = least_squares(a, y)?;
            let b = DVector::from_column_slice(&coef[..p]);
            let mu0 = design * b;
            let effect = coef[p];
            Ok(OutcomeFit {
                structure,
                mu1_hat: mu0.iter().map(|m| m + effect).collect(),
                mu0_hat: mu0.iter().copied().collect(),
                coef,
            })
        }
        OutcomeStructure::PerArm => {
            check_arms(z)?;
            let arm_fit = |arm: bool| -> Result<Vec<f64>, FitError> {
                let rows: Vec<usize> = (0..n).filter(|&i| z[i] == arm).collect();
                let a = DMatrix::from_fn(rows.len(), p, |i, j| design[(rows[i], j)]);
                let ya: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                least_squares(a, &ya)
            };
            let c0 = arm_fit(false)?;
            let c1 = arm_fit(true)?;
            let mu0 = design * DVector::from_column_slice(&c0);
            let mu1 = design * DVector::from_column_slice(&c1);
            let mut coef = c0;
            coef.extend(c1);
            Ok(OutcomeFit {
                structure,
                coef,
                mu0_hat: mu0.iter().copied().collect(),
                mu1_hat: mu1.iter().copied().collect(),
            })
        }
    }
}

/// Propensity and outcome fits for one sample under one model specification.
/// Each fit can fail independently.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub ps: Result<LogisticFit, FitError>,
    pub outcome: Result<OutcomeFit, FitError>,
}

impl FittedModels {
    pub fn fit(obs: &Observations, spec: ModelSpec, structure: OutcomeStructure) -> Self {
        let ps = build_design(&obs.x, spec.ps_form).and_then(|d| fit_logistic(&d, &obs.z));
        let outcome = build_design(&obs.x, spec.outcome_form).and_then(|d| fit_outcome(&d, &obs.z, &obs.y, structure));
        FittedModels { ps, outcome }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample_x(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, k, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn design_shapes() {
        let x = sample_x(500, 6, 1);
        let d = build_design(&x, CovariateForm::Correct).unwrap();
        assert_eq!(d.shape(), (500, 7));
        assert_eq!(d.column(3), x.column(2));
        assert!(d.column(0).iter().all(|&v| v == 1.0));

        let mut x2 = x.clone();
        x2[(0, 2)] = -2.0;
        let d = build_design(&x2, CovariateForm::WrongForm).unwrap();
        assert_eq!(d[(0, 3)], 4.0);

        let d = build_design(&x, CovariateForm::OmitVars).unwrap();
        assert_eq!(d.ncols(), 5);
        for j in 0..5 {
            assert_ne!(d.column(j), x.column(2));
            assert_ne!(d.column(j), x.column(3));
        }
        assert_eq!(d.column(3), x.column(4));
    }

    #[test]
    fn design_needs_more_rows_than_columns() {
        let x = sample_x(5, 6, 1);
        assert_eq!(build_design(&x, CovariateForm::Correct), Err(FitError::TooFewRows { rows: 5, cols: 7 }));
        let x = sample_x(10, 2, 1);
        assert!(matches!(build_design(&x, CovariateForm::OmitVars), Err(FitError::TooFewCovariates { .. })));
    }

    #[test]
    fn spec_labels_roundtrip() {
        for s in ModelSpec::study_grid() {
            assert_eq!(s.label().parse::<ModelSpec>().unwrap(), s);
        }
        let mixed = ModelSpec::new(CovariateForm::WrongForm, CovariateForm::OmitVars);
        assert_eq!(mixed.label().parse::<ModelSpec>().unwrap(), mixed);
        assert!("ps-bogus".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn intercept_only_logistic_is_logit_of_proportion() {
        let n = 250;
        let z: Vec<bool> = (0..n).map(|i| i % 5 < 2).collect();
        let d = DMatrix::from_element(n, 1, 1.0);
        let fit = fit_logistic(&d, &z).unwrap();
        assert!(fit.converged);
        assert!((fit.coef[0] - (0.4f64 / 0.6).ln()).abs() < 1e-10, "{:?}", fit.coef);
        assert!((fit.coef[0] - -0.4055).abs() < 1e-4);
    }

    #[test]
    fn logistic_score_equations_hold() {
        let n = 800;
        let x = sample_x(n, 6, 3);
        let d = build_design(&x, CovariateForm::Correct).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z: Vec<bool> = (0..n).map(|i| rng.gen::<f64>() < logistic(0.3 * x[(i, 0)] - 0.5 * x[(i, 4)])).collect();
        let fit = fit_logistic(&d, &z).unwrap();
        assert!(fit.converged && !fit.separated);
        for c in d.column_iter() {
            let s: f64 = (0..n).map(|i| ((z[i] as u8 as f64) - fit.e_hat[i]) * c[i]).sum();
            assert!(s.abs() < 1e-6 * n as f64, "score {s}");
        }
        let mean_e = fit.e_hat.iter().sum::<f64>() / n as f64;
        let mean_z = z.iter().filter(|&&t| t).count() as f64 / n as f64;
        assert!((mean_e - mean_z).abs() < 1e-8);
        assert!(fit.e_hat.iter().all(|&e| e > 0.0 && e < 1.0));
    }

    /// Gradient ascent on the mean log-likelihood with a fixed step; slow but
    /// shares nothing with the IRLS path.
    fn gradient_ascent_oracle(x: &[[f64; 3]], z: &[bool]) -> [f64; 3] {
        let mut b = [0.0; 3];
        let n = x.len() as f64;
        for _ in 0..400_000 {
            let mut g = [0.0; 3];
            for (row, &zi) in x.iter().zip(z) {
                let eta: f64 = row.iter().zip(&b).map(|(a, c)| a * c).sum();
                let p = 1.0 / (1.0 + (-eta).exp());
                let r = if zi { 1.0 } else { 0.0 } - p;
                for k in 0..3 {
                    g[k] += r * row[k];
                }
            }
            for k in 0..3 {
                b[k] += 0.5 * g[k] / n;
            }
        }
        b
    }

    #[test]
    fn logistic_matches_gradient_ascent_oracle() {
        let x1 = [-1.2, -0.8, -0.5, -0.3, 0.0, 0.1, 0.4, 0.9, 1.3, 2.0, -1.9, -0.1, 0.2, 0.6, 1.1, -0.6, 0.3, 1.6, -1.4, 0.8];
        let x2 = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let z = [0, 0, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0].map(|v| v == 1);
        let rows: Vec<[f64; 3]> = (0..20).map(|i| [1.0, x1[i], x2[i]]).collect();
        let d = DMatrix::from_fn(20, 3, |i, j| rows[i][j]);
        let fit = fit_logistic(&d, &z).unwrap();
        assert!(fit.converged);
        let oracle = gradient_ascent_oracle(&rows, &z);
        for (k, want) in oracle.iter().enumerate() {
            assert!((fit.coef[k] - want).abs() < 1e-6, "coef {k}: {} vs {want}", fit.coef[k]);
        }
    }

    #[test]
    fn separation_is_flagged_not_fatal() {
        let n = 40;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 - 20.0);
        let d = build_design(&x, CovariateForm::Correct).unwrap();
        let z: Vec<bool> = (0..n).map(|i| i >= 20).collect();
        let fit = fit_logistic(&d, &z).unwrap();
        assert!(!fit.converged);
        assert!(fit.separated);
    }

    #[test]
    fn single_arm_is_an_error() {
        let d = DMatrix::from_element(10, 1, 1.0);
        assert!(matches!(fit_logistic(&d, &[true; 10]), Err(FitError::SingleArm { .. })));
    }

    #[test]
    fn exact_linear_outcome_is_recovered() {
        let n = 60;
        let x = sample_x(n, 6, 9);
        let d = build_design(&x, CovariateForm::Correct).unwrap();
        let z: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let b = [0.5, -1.0, 2.0, 0.25, -0.75, 1.5, 3.0, 1.25];
        let y: Vec<f64> = (0..n)
            .map(|i| (0..7).map(|j| b[j] * d[(i, j)]).sum::<f64>() + if z[i] { b[7] } else { 0.0 })
            .collect();
        let fit = fit_outcome(&d, &z, &y, OutcomeStructure::Joint).unwrap();
        for (got, want) in fit.coef.iter().zip(b) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        for i in 0..n {
            assert!((fit.mu1_hat[i] - fit.mu0_hat[i] - fit.treatment_coef().unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ols_residuals_are_orthogonal_to_design() {
        let n = 300;
        let x = sample_x(n, 6, 11);
        let d = build_design(&x, CovariateForm::WrongForm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)].sin() * 3.0 + rng.gen::<f64>()).collect();
        let fit = fit_outcome(&d, &z, &y, OutcomeStructure::Joint).unwrap();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let resid: Vec<f64> = (0..n).map(|i| y[i] - if z[i] { fit.mu1_hat[i] } else { fit.mu0_hat[i] }).collect();
        for c in d.column_iter() {
            let s: f64 = (0..n).map(|i| resid[i] * c[i]).sum();
            assert!(s.abs() < 1e-8 * n as f64 * ynorm, "{s}");
        }
        let s: f64 = (0..n).filter(|&i| z[i]).map(|i| resid[i]).sum();
        assert!(s.abs() < 1e-8 * n as f64 * ynorm);
    }

    /// Normal equations solved by Gauss-Jordan elimination with partial
    /// pivoting; shares no code with the QR path.
    fn normal_equations_oracle(a: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = a[0].len();
        let mut m = vec![vec![0.0f64; p + 1]; p];
        for (row, &yi) in a.iter().zip(y) {
            for r in 0..p {
                for c in 0..p {
                    m[r][c] += row[r] * row[c];
                }
                m[r][p] += row[r] * yi;
            }
        }
        for col in 0..p {
            let piv = (col..p).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            m.swap(col, piv);
            let d = m[col][col];
            for v in m[col].iter_mut() {
                *v /= d;
            }
            for r in 0..p {
                if r != col {
                    let f = m[r][col];
                    let pivot_row = m[col].clone();
                    for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        m.iter().map(|row| row[p]).collect()
    }

    #[test]
    fn ols_matches_normal_equation_oracle() {
        let xs = [0.3, -1.1, 0.8, 1.7, -0.4, 0.0, 2.2, -1.6, 0.5, 1.0];
        let ws = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let z = [true, false, true, true, false, false, true, false, false, true];
        let y = [1.2, -0.7, 2.9, 3.1, 0.4, -0.2, 4.4, -1.8, 1.0, 2.6];
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { xs[i] } else { ws[i] });
        let d = build_design(&x, CovariateForm::Correct).unwrap();
        let fit = fit_outcome(&d, &z, &y, OutcomeStructure::Joint).unwrap();
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, xs[i], ws[i], z[i] as u8 as f64]).collect();
        let oracle = normal_equations_oracle(&rows, &y);
        for (g, o) in fit.coef.iter().zip(&oracle) {
            assert!((g - o).abs() < 1e-8, "{g} vs {o}");
        }
    }

    #[test]
    fn collinear_column_is_named() {
        let n = 30;
        let x = sample_x(n, 2, 2);
        let mut d = build_design(&x, CovariateForm::Correct).unwrap();
        // column 2 becomes a copy of column 1
        for i in 0..n {
            d[(i, 2)] = d[(i, 1)] * 2.0;
        }
        let z: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let y = vec![1.0; n];
        assert_eq!(fit_outcome(&d, &z, &y, OutcomeStructure::Joint).unwrap_err(), FitError::RankDeficient { column: 2 });

        // treatment column collinear with the intercept when everyone is treated
        let d = build_design(&x, CovariateForm::Correct).unwrap();
        assert_eq!(
            fit_outcome(&d, &vec![true; n], &y, OutcomeStructure::Joint).unwrap_err(),
            FitError::RankDeficient { column: 3 }
        );
    }

    #[test]
    fn per_arm_fit_predicts_each_arm_from_its_own_regression() {
        let n = 80;
        let x = sample_x(n, 1, 21);
        let d = build_design(&x, CovariateForm::Correct).unwrap();
        let z: Vec<bool> = (0..n).map(|i| i % 2 == 1).collect();
        let y: Vec<f64> = (0..n).map(|i| if z[i] { 2.0 + 3.0 * x[(i, 0)] } else { -1.0 + 0.5 * x[(i, 0)] }).collect();
        let fit = fit_outcome(&d, &z, &y, OutcomeStructure::PerArm).unwrap();
        assert!(fit.treatment_coef().is_none());
        for (g, w) in fit.coef.iter().zip([-1.0, 0.5, 2.0, 3.0]) {
            assert!((g - w).abs() < 1e-10);
        }
        for i in 0..n {
            assert!((fit.mu1_hat[i] - (2.0 + 3.0 * x[(i, 0)])).abs() < 1e-10);
            assert!((fit.mu0_hat[i] - (-1.0 + 0.5 * x[(i, 0)])).abs() < 1e-10);
        }
    }
}

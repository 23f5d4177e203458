//! Logistic propensity model and the estimand-specific balancing weights.
//!
//! A weight scheme is a tilting function `w(e)` together with its
//! derivative. The subject weight is `w(e) / (A e + (1 - A)(1 - e))`, and
//! the k-factor is its propensity sensitivity on the logit scale,
//! `k = e (1 - e) d/de [subject weight]`, which is what the stacked
//! sandwich needs for the cross-derivative block.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::linalg;

/// Fitted probabilities must stay inside `[SEPARATION_CLIP, 1 - SEPARATION_CLIP]`.
pub const SEPARATION_CLIP: f64 = 1e-10;
/// Largest admissible logit coefficient in absolute value.
pub const MAX_COEFFICIENT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EstimandKind {
    #[serde(rename = "ATE")]
    Ate,
    #[serde(rename = "ATT")]
    Att,
    #[serde(rename = "ATO")]
    Ato,
    Custom,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied tilting function and its derivative.
#[derive(Clone)]
pub struct CustomTilt {
    pub name: String,
    w: ScalarFn,
    w_prime: ScalarFn,
}

#[derive(Clone)]
pub enum WeightScheme {
    Ate,
    Att,
    Ato,
    Custom(CustomTilt),
}

impl fmt::Debug for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightScheme::Custom(c) => write!(f, "Custom({})", c.name),
            other => write!(f, "{}", other.label()),
        }
    }
}

impl WeightScheme {
    pub const BUILT_IN: [WeightScheme; 3] =
        [WeightScheme::Ate, WeightScheme::Att, WeightScheme::Ato];

    /// A custom scheme. `w_prime` must be the derivative of `w`; nothing
    /// checks this at construction.
    pub fn custom(
        name: &str,
        w: impl Fn(f64) -> f64 + Send + Sync + 'static,
        w_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        WeightScheme::Custom(CustomTilt {
            name: name.to_string(),
            w: Arc::new(w),
            w_prime: Arc::new(w_prime),
        })
    }

    pub fn kind(&self) -> EstimandKind {
        match self {
            WeightScheme::Ate => EstimandKind::Ate,
            WeightScheme::Att => EstimandKind::Att,
            WeightScheme::Ato => EstimandKind::Ato,
            WeightScheme::Custom(_) => EstimandKind::Custom,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            WeightScheme::Ate => "ATE",
            WeightScheme::Att => "ATT",
            WeightScheme::Ato => "ATO",
            WeightScheme::Custom(c) => &c.name,
        }
    }

    pub fn token(&self) -> &str {
        match self {
            WeightScheme::Ate => "ate",
            WeightScheme::Att => "att",
            WeightScheme::Ato => "ato",
            WeightScheme::Custom(c) => &c.name,
        }
    }

    /// Tilting function w(e).
    pub fn tilt(&self, e: f64) -> f64 {
        match self {
            WeightScheme::Ate => 1.0,
            WeightScheme::Att => e,
            WeightScheme::Ato => e * (1.0 - e),
            WeightScheme::Custom(c) => (c.w)(e),
        }
    }

    /// Derivative w'(e).
    pub fn tilt_prime(&self, e: f64) -> f64 {
        match self {
            WeightScheme::Ate => 0.0,
            WeightScheme::Att => 1.0,
            WeightScheme::Ato => 1.0 - 2.0 * e,
            WeightScheme::Custom(c) => (c.w_prime)(e),
        }
    }

    pub fn subject_weight(&self, e: f64, treated: bool) -> Result<f64> {
        check_propensity(e)?;
        let received = if treated { e } else { 1.0 - e };
        Ok(self.tilt(e) / received)
    }

    pub fn k_factor(&self, e: f64, treated: bool) -> Result<f64> {
        check_propensity(e)?;
        let w = self.tilt(e);
        let wp = self.tilt_prime(e);
        Ok(if treated {
            (1.0 - e) * (wp - w / e)
        } else {
            e * (wp + w / (1.0 - e))
        })
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ate" => Ok(WeightScheme::Ate),
            "att" => Ok(WeightScheme::Att),
            "ato" => Ok(WeightScheme::Ato),
            other => Err(Error::ConfigInvalid(format!(
                "unknown estimand `{other}` (expected ate, att or ato)"
            ))),
        }
    }
}

fn check_propensity(e: f64) -> Result<()> {
    if e > 0.0 && e < 1.0 {
        Ok(())
    } else {
        Err(Error::PropensityOutOfRange(e))
    }
}

pub fn subject_weight(scheme: &WeightScheme, e: f64, treated: bool) -> Result<f64> {
    scheme.subject_weight(e, treated)
}

pub fn k_factor(scheme: &WeightScheme, e: f64, treated: bool) -> Result<f64> {
    scheme.k_factor(e, treated)
}

/// Subject weights for a vector of propensities and treatment indicators.
pub fn weights_for(scheme: &WeightScheme, e: &[f64], treated: &[bool]) -> Result<Vec<f64>> {
    e.iter()
        .zip(treated)
        .map(|(&e, &a)| scheme.subject_weight(e, a))
        .collect()
}

pub fn k_factors_for(scheme: &WeightScheme, e: &[f64], treated: &[bool]) -> Result<Vec<f64>> {
    e.iter()
        .zip(treated)
        .map(|(&e, &a)| scheme.k_factor(e, a))
        .collect()
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropensityFit {
    /// Logit coefficients, intercept first.
    pub gamma_hat: DVector<f64>,
    pub e_hat: Vec<f64>,
    /// Row i is the logistic score contribution `(A_i - e_i) X_i`.
    pub score_residuals: DMatrix<f64>,
    /// `sum_i e_i (1 - e_i) X_i X_i^T`.
    pub info_matrix: DMatrix<f64>,
    /// Design matrix (intercept column first) the model was fitted on.
    pub design: DMatrix<f64>,
    pub treated: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
}

impl PropensityFit {
    pub fn n(&self) -> usize {
        self.e_hat.len()
    }

    pub fn p(&self) -> usize {
        self.gamma_hat.len()
    }

    pub fn score_sum(&self) -> DVector<f64> {
        self.score_residuals.row_sum().transpose()
    }
}

/// `n x (1 + dim)` design with the intercept prepended.
pub fn design_matrix(cohort: &Cohort) -> DMatrix<f64> {
    let p = cohort.dim() + 1;
    DMatrix::from_fn(cohort.len(), p, |i, j| {
        if j == 0 {
            1.0
        } else {
            cohort.subjects()[i].covariates[j - 1]
        }
    })
}

pub fn propensities_from_gamma(design: &DMatrix<f64>, gamma: &DVector<f64>) -> Vec<f64> {
    (design * gamma).iter().map(|&lp| expit(lp)).collect()
}

fn log_likelihood(design: &DMatrix<f64>, a: &[bool], gamma: &DVector<f64>) -> f64 {
    (design * gamma)
        .iter()
        .zip(a)
        .map(|(&lp, &ai)| if ai { lp - log1pexp(lp) } else { -log1pexp(lp) })
        .sum()
}

/// Logistic score `sum_i (A_i - e_i) X_i` and information `sum_i e_i(1-e_i) X_i X_i^T`.
fn score_and_information(
    design: &DMatrix<f64>,
    a: &[bool],
    e: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let p = design.ncols();
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for (i, (&ei, &ai)) in e.iter().zip(a).enumerate() {
        let x = design.row(i);
        let r = if ai { 1.0 - ei } else { -ei };
        let v = ei * (1.0 - ei);
        for j in 0..p {
            score[j] += r * x[j];
            for k in 0..=j {
                info[(j, k)] += v * x[j] * x[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            info[(k, j)] = info[(j, k)];
        }
    }
    (score, info)
}

pub fn fit_logistic(cohort: &Cohort, opts: LogisticOptions) -> Result<PropensityFit> {
    if !cohort.has_both_arms() {
        return Err(Error::SingleArm);
    }
    let treated: Vec<bool> = cohort.subjects().iter().map(|s| s.treated).collect();
    fit_logistic_design(design_matrix(cohort), treated, opts)
}

/// Damped Newton on the logistic log-likelihood, started from zero.
pub fn fit_logistic_design(
    design: DMatrix<f64>,
    treated: Vec<bool>,
    opts: LogisticOptions,
) -> Result<PropensityFit> {
    let n = design.nrows();
    let p = design.ncols();
    if treated.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows but {} treatment indicators",
            treated.len()
        )));
    }
    let mut gamma = DVector::zeros(p);
    let mut ll = log_likelihood(&design, &treated, &gamma);

    for iter in 0..=opts.max_iter {
        let e = propensities_from_gamma(&design, &gamma);
        if gamma.amax() > MAX_COEFFICIENT
            || e.iter()
                .any(|&ei| !(SEPARATION_CLIP..=1.0 - SEPARATION_CLIP).contains(&ei))
        {
            return Err(Error::Separation);
        }
        let (score, info) = score_and_information(&design, &treated, &e);
        if score.amax() <= opts.tol {
            let score_residuals = DMatrix::from_fn(n, p, |i, j| {
                let r = if treated[i] { 1.0 - e[i] } else { -e[i] };
                r * design[(i, j)]
            });
            return Ok(PropensityFit {
                gamma_hat: gamma,
                e_hat: e,
                score_residuals,
                info_matrix: info,
                design,
                treated,
                converged: true,
                iterations: iter,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let step = linalg::spd_solve(&info, &score).ok_or(Error::SingularInformation)?;

        // step-halving keeps the likelihood non-decreasing
        let mut t = 1.0;
        loop {
            let candidate = &gamma + &step * t;
            let cand_ll = log_likelihood(&design, &treated, &candidate);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) || t < 1e-10 {
                gamma = candidate;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::MaxIterExceeded {
        solver: "logistic Newton",
        max_iter: opts.max_iter,
    })
}

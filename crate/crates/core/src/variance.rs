//! Robust and corrected sandwich variances for the weighted Cox estimator.
//!
//! The robust variance treats the weights as fixed:
//! `var_R = sum_i eta_i^2 / A11^2`. The corrected sandwich stacks the Cox
//! score with the logistic score, `Omega_i = (eta_i, pi_i)`, and takes the
//! (1,1) element of `A^{-1} B A^{-T}` where
//!
//! ```text
//!     A = | A11  A12 |      B = sum_i Omega_i Omega_i^T
//!         |  0   A22 |
//! ```
//!
//! `A12 = -sum_i k_i L0_i X_i^T` follows from `d w_i / d gamma = k_i X_i`,
//! and `A22 = sum_i e_i (1 - e_i) X_i X_i^T`.
//!
//! Because `A` is block upper-triangular its first row inverts in closed
//! form, giving `var_CS = sum_i (eta_i + d^T pi_i)^2 / A11^2` with
//! `d = U^{-1} (1/n) sum_i k_i L0_i X_i`. Expanding the square gives
//!
//! ```text
//!     n var_CS = n var_R + n^2 / A11^2 [ d^T Q d + 2 d^T c ]
//!     Q = (1/n) sum_i (A_i - e_i)^2 X_i X_i^T
//!     c = (1/n) sum_i w_i L0_i (A_i - e_i) X_i
//! ```
//!
//! which therefore holds exactly in finite samples, not just to `o_p(1)`.
//! Replacing `Q` by `U` yields the form whose sign is fixed (non-positive)
//! under ATE weights.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::Cohort;
use crate::coxfit::CoxFit;
use crate::error::{Error, Result};
use crate::linalg;
use crate::propensity::{PropensityFit, WeightScheme};

/// Per-subject Cox influence terms.
#[derive(Debug, Clone)]
pub struct CoxResiduals {
    /// `eta_i`, cohort order; equals `w_i * l0_i`.
    pub eta: Vec<f64>,
    /// `L0_i`: derivative of the weighted score in subject i's weight.
    pub l0: Vec<f64>,
}

/// Everything that enters the stacked sandwich.
#[derive(Debug, Clone)]
pub struct ScoreResiduals {
    pub eta: Vec<f64>,
    pub l0: Vec<f64>,
    pub k: Vec<f64>,
    pub a11: f64,
    pub a12: DVector<f64>,
    pub a22: DMatrix<f64>,
}

/// Computes `eta_i` and `L0_i` for every subject in O(n log n).
///
/// `L0_i = d_i (A_i - p_i) - exp(theta A_i) sum_{j: d_j, T_j <= T_i} w_j / S0(j) (A_i - p_j)`
/// with `p_j = S1(j) / S0(j)`. The inner sum splits into two running sums
/// over event times in ascending order.
pub fn eta_residuals(fit: &CoxFit, cohort: &Cohort) -> Result<CoxResiduals> {
    let subjects = cohort.subjects();
    let n = subjects.len();
    if fit.weights.len() != n || fit.s0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "fit has {} subjects, cohort has {n}",
            fit.weights.len()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| subjects[i].time.total_cmp(&subjects[j].time));

    let et = fit.theta_hat.exp();
    let mut eta = vec![0.0; n];
    let mut l0 = vec![0.0; n];
    // running sums of w_j / S0(j) and w_j p_j / S0(j) over events with T_j <= t
    let (mut h0, mut h1) = (0.0, 0.0);
    let mut k = 0;
    while k < n {
        let start = k;
        let t = subjects[order[start]].time;
        while k < n && subjects[order[k]].time == t {
            let j = order[k];
            if subjects[j].event {
                let inc = fit.weights[j] / fit.s0[j];
                h0 += inc;
                h1 += inc * fit.s1[j] / fit.s0[j];
            }
            k += 1;
        }
        for &i in &order[start..k] {
            let s = &subjects[i];
            let a = s.a();
            let own = if s.event {
                a - fit.s1[i] / fit.s0[i]
            } else {
                0.0
            };
            let risk = if s.treated { et } else { 1.0 };
            l0[i] = own - risk * (a * h0 - h1);
            eta[i] = fit.weights[i] * l0[i];
        }
    }
    Ok(CoxResiduals { eta, l0 })
}

fn check_a11(fit: &CoxFit) -> Result<f64> {
    let a11 = fit.information;
    let scale: f64 = fit.weights.iter().sum::<f64>().max(1.0);
    if !(a11.is_finite() && a11 > 1e-12 * scale) {
        return Err(Error::DegenerateInformation(a11));
    }
    Ok(a11)
}

/// `sum_i eta_i^2 / A11^2`.
pub fn robust_variance(fit: &CoxFit, cohort: &Cohort) -> Result<f64> {
    let a11 = check_a11(fit)?;
    let r = eta_residuals(fit, cohort)?;
    Ok(r.eta.iter().map(|e| e * e).sum::<f64>() / (a11 * a11))
}

fn check_same_population(fit: &CoxFit, ps: &PropensityFit, cohort: &Cohort) -> Result<()> {
    let n = cohort.len();
    if ps.n() != n || fit.weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "cohort has {n} subjects, propensity fit {}, Cox fit {}",
            ps.n(),
            fit.weights.len()
        )));
    }
    if ps.p() != cohort.dim() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "propensity model has {} coefficients for {} covariates",
            ps.p(),
            cohort.dim()
        )));
    }
    if ps
        .treated
        .iter()
        .zip(cohort.subjects())
        .any(|(&a, s)| a != s.treated)
    {
        return Err(Error::DimensionMismatch(
            "propensity fit and cohort disagree on treatment".into(),
        ));
    }
    Ok(())
}

/// `members[m]` is the propensity-population row of Cox subject `m`.
fn score_residuals_nested(
    fit: &CoxFit,
    ps: &PropensityFit,
    cohort: &Cohort,
    members: &[usize],
    scheme: &WeightScheme,
) -> Result<ScoreResiduals> {
    let a11 = check_a11(fit)?;
    let CoxResiduals { eta, l0 } = eta_residuals(fit, cohort)?;
    let p = ps.p();
    let mut a12 = DVector::zeros(p);
    let mut k = Vec::with_capacity(members.len());
    for (m, (&row, s)) in members.iter().zip(cohort.subjects()).enumerate() {
        let km = scheme.k_factor(ps.e_hat[row], s.treated)?;
        k.push(km);
        for j in 0..p {
            a12[j] -= km * l0[m] * ps.design[(row, j)];
        }
    }
    Ok(ScoreResiduals {
        eta,
        l0,
        k,
        a11,
        a12,
        a22: ps.info_matrix.clone(),
    })
}

pub fn score_residuals(
    fit: &CoxFit,
    ps: &PropensityFit,
    cohort: &Cohort,
    scheme: &WeightScheme,
) -> Result<ScoreResiduals> {
    check_same_population(fit, ps, cohort)?;
    let members: Vec<usize> = (0..cohort.len()).collect();
    score_residuals_nested(fit, ps, cohort, &members, scheme)
}

#[derive(Debug, Clone)]
pub struct Sandwich {
    /// (1,1) element: corrected variance of theta-hat.
    pub var_theta: f64,
    /// Full `(1+p) x (1+p)` covariance of `(theta, gamma)`.
    pub covariance: DMatrix<f64>,
    pub a_inverse: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub residuals: ScoreResiduals,
}

fn assemble_sandwich(
    res: ScoreResiduals,
    ps: &PropensityFit,
    members: &[usize],
) -> Result<Sandwich> {
    let p = ps.p();
    let dim = p + 1;
    let a22_inv = linalg::spd_inverse(&res.a22).ok_or(Error::SingularBlock)?;

    // block upper-triangular inverse
    let mut a_inv = DMatrix::zeros(dim, dim);
    a_inv[(0, 0)] = 1.0 / res.a11;
    let top = -(res.a12.transpose() * &a22_inv) / res.a11;
    for j in 0..p {
        a_inv[(0, j + 1)] = top[j];
    }
    a_inv.view_mut((1, 1), (p, p)).copy_from(&a22_inv);

    let mut eta_full = vec![0.0; ps.n()];
    for (m, &row) in members.iter().enumerate() {
        eta_full[row] = res.eta[m];
    }
    let mut b = DMatrix::zeros(dim, dim);
    let mut omega = DVector::zeros(dim);
    for (r, &eta_r) in eta_full.iter().enumerate() {
        omega[0] = eta_r;
        for j in 0..p {
            omega[j + 1] = ps.score_residuals[(r, j)];
        }
        b.ger(1.0, &omega, &omega, 1.0);
    }
    let covariance = &a_inv * &b * a_inv.transpose();
    let var_theta = covariance[(0, 0)];
    if !(var_theta.is_finite() && var_theta > 0.0) {
        return Err(Error::SingularBlock);
    }
    Ok(Sandwich {
        var_theta,
        covariance,
        a_inverse: a_inv,
        b,
        residuals: res,
    })
}

/// Corrected sandwich over the stacked Cox and logistic estimating equations.
pub fn corrected_sandwich_variance(
    fit: &CoxFit,
    ps: &PropensityFit,
    cohort: &Cohort,
    scheme: &WeightScheme,
) -> Result<Sandwich> {
    let res = score_residuals(fit, ps, cohort, scheme)?;
    let members: Vec<usize> = (0..cohort.len()).collect();
    assemble_sandwich(res, ps, &members)
}

/// Corrected sandwich when the propensity model was fitted on a larger
/// population than the Cox model (e.g. a subgroup analysis reusing
/// full-cohort scores). `members[m]` is the row of `ps` holding Cox subject
/// `m`; non-members contribute only their logistic score to `B`.
pub fn corrected_sandwich_variance_nested(
    fit: &CoxFit,
    ps: &PropensityFit,
    cohort: &Cohort,
    members: &[usize],
    scheme: &WeightScheme,
) -> Result<Sandwich> {
    if members.len() != cohort.len() || fit.weights.len() != cohort.len() {
        return Err(Error::DimensionMismatch(
            "member map, Cox fit and cohort lengths differ".into(),
        ));
    }
    if members.iter().any(|&r| r >= ps.n()) {
        return Err(Error::DimensionMismatch("member index out of range".into()));
    }
    if ps.p() != cohort.dim() + 1 {
        return Err(Error::DimensionMismatch(
            "propensity model dimension".into(),
        ));
    }
    let res = score_residuals_nested(fit, ps, cohort, members, scheme)?;
    assemble_sandwich(res, ps, members)
}

/// Pieces of `n var_CS = n var_R + n^2/A11^2 [d^T Q d + 2 d^T c]`.
#[derive(Debug, Clone, Serialize)]
pub struct Decomposition {
    pub n: usize,
    pub a11: f64,
    pub var_robust: f64,
    pub d_hat: Vec<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub u_hat: DMatrix<f64>,
    /// `d^T Q d` with `Q = (1/n) sum (A - e)^2 X X^T`.
    pub quadratic_term: f64,
    /// `2 d^T c` with `c = (1/n) sum w L0 (A - e) X`.
    pub cross_term: f64,
    /// The bracket, unscaled.
    pub bracket: f64,
    /// `n^2 / A11^2 * bracket`, on the `n var` scale.
    pub correction_n_scaled: f64,
    /// `n / A11^2 * bracket`, i.e. `var_CS - var_R`.
    pub correction: f64,
    pub var_corrected_reconstructed: f64,
    /// Bracket with `Q` replaced by `U`: `d^T U d + 2 d^T c`.
    pub bracket_substituted: f64,
    /// `-m^T U^{-1} m` for `m = (1/n) sum k L0 X`; equals
    /// `bracket_substituted` under ATE weights.
    pub ate_quadratic_form: f64,
}

pub fn variance_decomposition(
    fit: &CoxFit,
    ps: &PropensityFit,
    cohort: &Cohort,
    scheme: &WeightScheme,
) -> Result<Decomposition> {
    let res = score_residuals(fit, ps, cohort, scheme)?;
    let n = cohort.len();
    let nf = n as f64;
    let p = ps.p();
    let a11 = res.a11;
    let var_robust = res.eta.iter().map(|e| e * e).sum::<f64>() / (a11 * a11);

    let u_hat = &res.a22 / nf;
    let m_vec = -&res.a12 / nf;
    let u_chol = linalg::guarded_cholesky(&u_hat).ok_or(Error::SingularU)?;
    let d_hat = u_chol.solve(&m_vec);

    let mut q = DMatrix::zeros(p, p);
    let mut c = DVector::zeros(p);
    for (i, s) in cohort.subjects().iter().enumerate() {
        let r = s.a() - ps.e_hat[i];
        let x = ps.design.row(i).transpose();
        q.ger(r * r / nf, &x, &x, 1.0);
        c.axpy(fit.weights[i] * res.l0[i] * r / nf, &x, 1.0);
    }
    let quadratic_term = (d_hat.transpose() * &q * &d_hat)[(0, 0)];
    let cross_term = 2.0 * d_hat.dot(&c);
    let bracket = quadratic_term + cross_term;
    let correction_n_scaled = nf * nf / (a11 * a11) * bracket;
    let correction = correction_n_scaled / nf;
    let bracket_substituted = (d_hat.transpose() * &u_hat * &d_hat)[(0, 0)] + cross_term;
    let ate_quadratic_form = -m_vec.dot(&d_hat);

    Ok(Decomposition {
        n,
        a11,
        var_robust,
        d_hat: d_hat.iter().copied().collect(),
        u_hat,
        quadratic_term,
        cross_term,
        bracket,
        correction_n_scaled,
        correction,
        var_corrected_reconstructed: var_robust + correction,
        bracket_substituted,
        ate_quadratic_form,
    })
}

fn ser_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

/// Wald interval on the log hazard ratio scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    /// Same interval on the hazard ratio scale.
    pub fn hazard_ratio(&self) -> Interval {
        Interval {
            lower: self.lower.exp(),
            upper: self.upper.exp(),
        }
    }
}

pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    let std = Normal::standard();
    Ok(std.inverse_cdf(0.5 * (1.0 + level)))
}

pub fn confidence_interval(theta_hat: f64, variance: f64, level: f64) -> Result<Interval> {
    let z = normal_quantile(level)?;
    if !(variance.is_finite() && variance > 0.0) {
        return Err(Error::DegenerateInformation(variance));
    }
    let half = z * variance.sqrt();
    Ok(Interval {
        lower: theta_hat - half,
        upper: theta_hat + half,
    })
}

/// Side-by-side robust and corrected inference for one fit.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub theta_hat: f64,
    #[serde(skip)]
    pub var_robust: f64,
    #[serde(skip)]
    pub var_corrected: f64,
    pub se_robust: f64,
    pub se_corrected: f64,
    pub ratio_robust_over_corrected: f64,
    pub ci_robust: Interval,
    pub ci_corrected: Interval,
    #[serde(skip)]
    pub level: f64,
}

impl VarianceReport {
    pub fn new(theta_hat: f64, var_robust: f64, var_corrected: f64, level: f64) -> Result<Self> {
        let ci_robust = confidence_interval(theta_hat, var_robust, level)?;
        let ci_corrected = confidence_interval(theta_hat, var_corrected, level)?;
        let se_robust = var_robust.sqrt();
        let se_corrected = var_corrected.sqrt();
        Ok(Self {
            theta_hat,
            var_robust,
            var_corrected,
            se_robust,
            se_corrected,
            ratio_robust_over_corrected: se_robust / se_corrected,
            ci_robust,
            ci_corrected,
            level,
        })
    }
}

pub fn variance_report(
    fit: &CoxFit,
    ps: &PropensityFit,
    cohort: &Cohort,
    scheme: &WeightScheme,
    level: f64,
) -> Result<VarianceReport> {
    let sandwich = corrected_sandwich_variance(fit, ps, cohort, scheme)?;
    let var_robust = sandwich.residuals.eta.iter().map(|e| e * e).sum::<f64>()
        / (sandwich.residuals.a11 * sandwich.residuals.a11);
    VarianceReport::new(fit.theta_hat, var_robust, sandwich.var_theta, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standard_interval() {
        let ci = confidence_interval(0.0, 1.0, 0.95).unwrap();
        assert_abs_diff_eq!(ci.lower, -1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(ci.upper, 1.959964, epsilon = 1e-6);
        let ci = confidence_interval(0.5, 0.04, 0.95).unwrap();
        assert_abs_diff_eq!(ci.lower, 0.108007, epsilon = 1e-6);
        assert_abs_diff_eq!(ci.upper, 0.891993, epsilon = 1e-6);
        for th in [-3.0, 0.2, 10.0] {
            let ci = confidence_interval(th, 0.09, 0.95).unwrap();
            assert_abs_diff_eq!(ci.width(), 2.0 * 1.959964 * 0.3, epsilon = 1e-6);
        }
        let hr = confidence_interval(0.0, 1.0, 0.95).unwrap().hazard_ratio();
        assert_abs_diff_eq!(hr.lower * hr.upper, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_level() {
        for level in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                confidence_interval(0.0, 1.0, level),
                Err(Error::InvalidLevel(_))
            ));
        }
    }
}

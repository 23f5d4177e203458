//! Weighted partial-likelihood fit of the marginal log hazard ratio for a
//! single binary treatment.
//!
//! The score is `sum_i w_i d_i [A_i - S1(i) / S0(i)]` with risk sets
//! `{l : T_l >= T_i}` taken at event times. Tied event times share the same
//! risk-set sums (Breslow).
//!
//! Two implementations are kept side by side: [`fit_cox`] evaluates every
//! risk set directly, and [`fit_cox_fast`] sorts once and works from suffix
//! sums. They are cross-checked in the tests.

use rayon::slice::ParallelSliceMut;

use crate::cohort::Cohort;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    /// Tolerance on `|score|`, relative to `max(1, sum_i w_i d_i)`.
    pub tol: f64,
    pub max_iter: usize,
    pub bracket: (f64, f64),
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            bracket: (-20.0, 20.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoxFit {
    pub theta_hat: f64,
    /// Subject weights, cohort order.
    pub weights: Vec<f64>,
    /// `S0` over the risk set `{l : T_l >= T_i}` at each subject's own time,
    /// cohort order. Only event subjects enter the score.
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
    pub score_at_solution: f64,
    /// Negative slope of the score at the solution.
    pub information: f64,
    /// Absolute score tolerance that was applied.
    pub tolerance: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn check_weights(cohort: &Cohort, weights: &[f64]) -> Result<()> {
    if weights.len() != cohort.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} subjects",
            weights.len(),
            cohort.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::DimensionMismatch(format!(
            "weight {w} is not finite and positive"
        )));
    }
    Ok(())
}

/// Risk-set sums `(S0, S1)` at time `t`, evaluated directly.
fn risk_sums(theta: f64, cohort: &Cohort, weights: &[f64], t: f64) -> (f64, f64) {
    let et = theta.exp();
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for (s, &w) in cohort.subjects().iter().zip(weights) {
        if s.time >= t {
            if s.treated {
                s0 += w * et;
                s1 += w * et;
            } else {
                s0 += w;
            }
        }
    }
    (s0, s1)
}

/// Score and its derivative in `theta`, evaluated directly.
fn score_and_slope(theta: f64, cohort: &Cohort, weights: &[f64]) -> Result<(f64, f64)> {
    let mut score = 0.0;
    let mut slope = 0.0;
    for (s, &w) in cohort.subjects().iter().zip(weights) {
        if !s.event {
            continue;
        }
        let (s0, s1) = risk_sums(theta, cohort, weights, s.time);
        if s0.is_nan() || s0 <= 0.0 {
            return Err(Error::EmptyRiskSet(s.time));
        }
        let p = s1 / s0;
        score += w * (s.a() - p);
        slope -= w * p * (1.0 - p);
    }
    Ok((score, slope))
}

pub fn cox_score(theta: f64, cohort: &Cohort, weights: &[f64]) -> Result<f64> {
    check_weights(cohort, weights)?;
    score_and_slope(theta, cohort, weights).map(|(s, _)| s)
}

/// Analytic `d score / d theta`.
pub fn cox_score_slope(theta: f64, cohort: &Cohort, weights: &[f64]) -> Result<f64> {
    check_weights(cohort, weights)?;
    score_and_slope(theta, cohort, weights).map(|(_, d)| d)
}

fn event_weight(cohort: &Cohort, weights: &[f64]) -> f64 {
    cohort
        .subjects()
        .iter()
        .zip(weights)
        .filter(|(s, _)| s.event)
        .map(|(_, w)| w)
        .sum()
}

pub fn fit_cox(cohort: &Cohort, weights: &[f64], opts: CoxOptions) -> Result<CoxFit> {
    check_weights(cohort, weights)?;
    let tol = opts.tol * event_weight(cohort, weights).max(1.0);
    let root = solve_decreasing(|th| score_and_slope(th, cohort, weights), tol, opts)?;

    let (s0, s1): (Vec<f64>, Vec<f64>) = cohort
        .subjects()
        .iter()
        .map(|s| risk_sums(root.theta, cohort, weights, s.time))
        .unzip();
    Ok(CoxFit {
        theta_hat: root.theta,
        weights: weights.to_vec(),
        s0,
        s1,
        score_at_solution: root.score,
        information: -root.slope,
        tolerance: tol,
        converged: true,
        iterations: root.iterations,
    })
}

struct Root {
    theta: f64,
    score: f64,
    slope: f64,
    iterations: usize,
}

/// Safeguarded Newton for a non-increasing score: Newton steps while they
/// stay inside the current sign-change bracket, bisection otherwise.
fn solve_decreasing<F>(mut f: F, tol: f64, opts: CoxOptions) -> Result<Root>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let (mut lo, mut hi) = opts.bracket;
    let (f_lo, _) = f(lo)?;
    let (f_hi, _) = f(hi)?;
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::MonotoneLikelihood { lo, hi });
    }
    let mut theta = 0.0_f64.clamp(lo, hi);
    for iter in 0..opts.max_iter {
        let (score, slope) = f(theta)?;
        if score.abs() <= tol {
            // one extra Newton step, kept only if it does not hurt
            let polished = theta - score / slope;
            if slope < 0.0 && polished > lo && polished < hi {
                let (s2, d2) = f(polished)?;
                if s2.abs() <= score.abs() {
                    return Ok(Root {
                        theta: polished,
                        score: s2,
                        slope: d2,
                        iterations: iter + 1,
                    });
                }
            }
            return Ok(Root {
                theta,
                score,
                slope,
                iterations: iter,
            });
        }
        if score > 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        if hi - lo <= 4.0 * f64::EPSILON * theta.abs().max(1.0) {
            // bracket exhausted at machine precision
            return Ok(Root {
                theta,
                score,
                slope,
                iterations: iter,
            });
        }
        let newton = theta - score / slope;
        theta = if slope < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::MaxIterExceeded {
        solver: "Cox safeguarded Newton",
        max_iter: opts.max_iter,
    })
}

/// Survival data sorted by descending time, with tied times grouped.
#[derive(Debug, Clone)]
pub struct SortedSurvival {
    /// `order[k]` is the original index of the k-th sorted subject.
    order: Vec<usize>,
    time: Vec<f64>,
    treated: Vec<bool>,
    weights: Vec<f64>,
    /// One entry per distinct event time.
    blocks: Vec<EventBlock>,
}

#[derive(Debug, Clone, Copy)]
struct EventBlock {
    /// Risk-set weight of treated and control subjects.
    at_risk_treated: f64,
    at_risk_control: f64,
    /// Summed weight of the events at this time, and of the treated ones.
    event_weight: f64,
    event_weight_treated: f64,
}

impl SortedSurvival {
    pub fn new(time: &[f64], treated: &[bool], event: &[bool], weights: &[f64]) -> Result<Self> {
        let n = time.len();
        if treated.len() != n || event.len() != n || weights.len() != n {
            return Err(Error::DimensionMismatch(
                "survival arrays differ in length".into(),
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::DimensionMismatch(format!(
                "weight {w} is not finite and positive"
            )));
        }
        if let Some(row) = time.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::NonPositiveTime { row });
        }
        let mut order: Vec<usize> = (0..n).collect();
        // stable, so ties keep input order
        order.par_sort_by(|&i, &j| time[j].total_cmp(&time[i]));
        Ok(Self::from_order(order, time, treated, event, weights))
    }

    pub fn from_cohort(cohort: &Cohort, weights: &[f64]) -> Result<Self> {
        check_weights(cohort, weights)?;
        let s = cohort.subjects();
        let time: Vec<f64> = s.iter().map(|s| s.time).collect();
        let treated: Vec<bool> = s.iter().map(|s| s.treated).collect();
        let event: Vec<bool> = s.iter().map(|s| s.event).collect();
        Self::new(&time, &treated, &event, weights)
    }

    fn from_order(
        order: Vec<usize>,
        time: &[f64],
        treated: &[bool],
        event: &[bool],
        weights: &[f64],
    ) -> Self {
        let time: Vec<f64> = order.iter().map(|&i| time[i]).collect();
        let treated: Vec<bool> = order.iter().map(|&i| treated[i]).collect();
        let event: Vec<bool> = order.iter().map(|&i| event[i]).collect();
        let weights: Vec<f64> = order.iter().map(|&i| weights[i]).collect();

        let mut blocks = Vec::new();
        let (mut wt, mut wc) = (0.0, 0.0);
        let mut k = 0;
        let n = time.len();
        while k < n {
            let start = k;
            let (mut d, mut dt) = (0.0, 0.0);
            while k < n && time[k] == time[start] {
                if treated[k] {
                    wt += weights[k];
                } else {
                    wc += weights[k];
                }
                if event[k] {
                    d += weights[k];
                    if treated[k] {
                        dt += weights[k];
                    }
                }
                k += 1;
            }
            if d > 0.0 {
                blocks.push(EventBlock {
                    at_risk_treated: wt,
                    at_risk_control: wc,
                    event_weight: d,
                    event_weight_treated: dt,
                });
            }
        }
        Self {
            order,
            time,
            treated,
            weights,
            blocks,
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Score and slope in O(number of distinct event times).
    pub fn score_and_slope(&self, theta: f64) -> (f64, f64) {
        let et = theta.exp();
        let mut score = 0.0;
        let mut slope = 0.0;
        for b in &self.blocks {
            let s1 = et * b.at_risk_treated;
            let p = s1 / (b.at_risk_control + s1);
            score += b.event_weight_treated - b.event_weight * p;
            slope -= b.event_weight * p * (1.0 - p);
        }
        (score, slope)
    }

    fn total_event_weight(&self) -> f64 {
        self.blocks.iter().map(|b| b.event_weight).sum()
    }

    /// Risk-set sums for every subject in original order.
    fn risk_sums(&self, theta: f64) -> (Vec<f64>, Vec<f64>) {
        let et = theta.exp();
        let n = self.len();
        let mut s0 = vec![0.0; n];
        let mut s1 = vec![0.0; n];
        let (mut wt, mut wc) = (0.0, 0.0);
        let mut k = 0;
        while k < n {
            let start = k;
            while k < n && self.time[k] == self.time[start] {
                if self.treated[k] {
                    wt += self.weights[k];
                } else {
                    wc += self.weights[k];
                }
                k += 1;
            }
            for j in start..k {
                let orig = self.order[j];
                s1[orig] = et * wt;
                s0[orig] = wc + et * wt;
            }
        }
        (s0, s1)
    }

    /// Weights back in original order.
    fn original_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        for (k, &orig) in self.order.iter().enumerate() {
            w[orig] = self.weights[k];
        }
        w
    }
}

impl SortedSurvival {
    fn solve(&self, opts: CoxOptions) -> Result<(Root, f64)> {
        let tol = opts.tol * self.total_event_weight().max(1.0);
        solve_decreasing(|th| Ok(self.score_and_slope(th)), tol, opts).map(|r| (r, tol))
    }

    /// Root of the score only, without the per-subject risk-set sums.
    pub fn solve_theta(&self, opts: CoxOptions) -> Result<f64> {
        self.solve(opts).map(|(r, _)| r.theta)
    }
}

pub fn fit_cox_fast(data: &SortedSurvival, opts: CoxOptions) -> Result<CoxFit> {
    let (root, tol) = data.solve(opts)?;
    let (s0, s1) = data.risk_sums(root.theta);
    Ok(CoxFit {
        theta_hat: root.theta,
        weights: data.original_weights(),
        s0,
        s1,
        score_at_solution: root.score,
        information: -root.slope,
        tolerance: tol,
        converged: true,
        iterations: root.iterations,
    })
}

/// Sorts and fits in one call.
pub fn fit_cox_sorted(cohort: &Cohort, weights: &[f64], opts: CoxOptions) -> Result<CoxFit> {
    fit_cox_fast(&SortedSurvival::from_cohort(cohort, weights)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Subject;
    use approx::assert_abs_diff_eq;

    pub(crate) fn four() -> Cohort {
        let rows = [(true, 1.0), (false, 2.0), (true, 3.0), (false, 4.0)];
        Cohort::new(
            rows.iter()
                .map(|&(a, t)| Subject {
                    covariates: vec![],
                    treated: a,
                    time: t,
                    event: true,
                })
                .collect(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn four_subject_score() {
        let c = four();
        let w = [1.0; 4];
        assert_abs_diff_eq!(cox_score(0.0, &c, &w).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        let e = 1f64.exp();
        let expected = 2.0 * (1.0 - e / (e + 1.0)) - e / (e + 2.0);
        assert_abs_diff_eq!(cox_score(1.0, &c, &w).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, -0.038234042, epsilon = 1e-9);
    }

    #[test]
    fn no_events_score_is_zero() {
        let mut s = four().subjects().to_vec();
        for x in &mut s {
            x.event = false;
        }
        let c = Cohort::new(s, vec![]).unwrap();
        assert_eq!(cox_score(0.7, &c, &[1.0; 4]).unwrap(), 0.0);
        assert!(matches!(
            fit_cox(&c, &[1.0; 4], CoxOptions::default()),
            Err(Error::MonotoneLikelihood { .. })
        ));
    }

    #[test]
    fn four_subject_fit() {
        let c = four();
        let naive = fit_cox(&c, &[1.0; 4], CoxOptions::default()).unwrap();
        let fast = fit_cox_sorted(&c, &[1.0; 4], CoxOptions::default()).unwrap();
        // root of 2(1 - e/(e+1)) - e/(e+2), e = exp(theta), by Brent's method
        assert_abs_diff_eq!(naive.theta_hat, 0.940_613_642_107_208_7, epsilon = 1e-12);
        assert_abs_diff_eq!(naive.theta_hat, fast.theta_hat, epsilon = 1e-12);
        assert!(naive.score_at_solution.abs() <= 1e-10 * 4.0);
        let scaled = fit_cox(&c, &[7.0; 4], CoxOptions::default()).unwrap();
        assert_abs_diff_eq!(naive.theta_hat, scaled.theta_hat, epsilon = 1e-10);
        for (a, b) in naive.s0.iter().zip(&fast.s0) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_treated_events_is_monotone() {
        let mut s = four().subjects().to_vec();
        s[0].event = false;
        s[2].event = false;
        let c = Cohort::new(s, vec![]).unwrap();
        assert!(matches!(
            fit_cox(&c, &[1.0; 4], CoxOptions::default()),
            Err(Error::MonotoneLikelihood { .. })
        ));
        assert!(matches!(
            fit_cox_sorted(&c, &[1.0; 4], CoxOptions::default()),
            Err(Error::MonotoneLikelihood { .. })
        ));
    }

    #[test]
    fn ties_share_risk_sets() {
        // two events tied at t=2: both see all of {2, 2, 3}
        let rows = [
            (true, 2.0, true),
            (false, 2.0, true),
            (true, 3.0, false),
            (false, 1.0, true),
        ];
        let c = Cohort::new(
            rows.iter()
                .map(|&(a, t, d)| Subject {
                    covariates: vec![],
                    treated: a,
                    time: t,
                    event: d,
                })
                .collect(),
            vec![],
        )
        .unwrap();
        let w = [1.0, 2.0, 0.5, 1.5];
        let fast = SortedSurvival::from_cohort(&c, &w).unwrap();
        for th in [-1.0, 0.0, 0.3, 2.0] {
            let e = f64::exp(th);
            // t=1: everyone at risk; t=2: subjects 0,1,2
            let p1 = e * 1.5 / (e * 1.5 + 3.5);
            let p2 = e * 1.5 / (e * 1.5 + 2.0);
            let expected = 1.5 * (0.0 - p1) + 1.0 * (1.0 - p2) + 2.0 * (0.0 - p2);
            assert_abs_diff_eq!(cox_score(th, &c, &w).unwrap(), expected, epsilon = 1e-14);
            assert_abs_diff_eq!(fast.score_and_slope(th).0, expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn bad_weights() {
        let c = four();
        assert!(cox_score(0.0, &c, &[1.0, 1.0, 0.0, 1.0]).is_err());
        assert!(cox_score(0.0, &c, &[1.0; 3]).is_err());
    }
}

//! Test-only oracles. Everything here is written from the estimating
//! equations directly and shares no code with the library's solvers.
#![allow(dead_code)]

use coxpsw::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn arrays(c: &Cohort) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t = c.subjects().iter().map(|s| s.time).collect();
    let a = c.subjects().iter().map(|s| s.a()).collect();
    let d = c
        .subjects()
        .iter()
        .map(|s| if s.event { 1.0 } else { 0.0 })
        .collect();
    (t, a, d)
}

pub fn treated(c: &Cohort) -> Vec<bool> {
    c.subjects().iter().map(|s| s.treated).collect()
}

/// `(S0, S1)` at time `t` by brute force.
pub fn s01(theta: f64, t: &[f64], a: &[f64], w: &[f64], at: f64) -> (f64, f64) {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for l in 0..t.len() {
        if t[l] >= at {
            let r = w[l] * (theta * a[l]).exp();
            s0 += r;
            s1 += r * a[l];
        }
    }
    (s0, s1)
}

pub fn oracle_score(theta: f64, c: &Cohort, w: &[f64]) -> f64 {
    let (t, a, d) = arrays(c);
    (0..t.len())
        .map(|i| {
            if d[i] == 0.0 {
                return 0.0;
            }
            let (s0, s1) = s01(theta, &t, &a, w, t[i]);
            w[i] * (a[i] - s1 / s0)
        })
        .sum()
}

/// Grid scan over [-20, 20] for the sign change, then plain bisection.
pub fn brute_force_root(c: &Cohort, w: &[f64]) -> f64 {
    let f = |th: f64| oracle_score(th, c, w);
    let step = 0.01;
    let mut lo = -20.0;
    let mut flo = f(lo);
    assert!(flo > 0.0, "no sign change");
    let mut hi = lo;
    loop {
        hi += step;
        assert!(hi <= 20.0 + step, "no sign change on the grid");
        let fhi = f(hi);
        if fhi <= 0.0 {
            break;
        }
        lo = hi;
        flo = fhi;
    }
    let _ = flo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The three-term eta_i, term by term.
pub fn oracle_eta(theta: f64, c: &Cohort, w: &[f64]) -> Vec<f64> {
    let (t, a, d) = arrays(c);
    let n = t.len();
    let sums: Vec<(f64, f64)> = (0..n).map(|j| s01(theta, &t, &a, w, t[j])).collect();
    (0..n)
        .map(|i| {
            let (s0i, s1i) = sums[i];
            let first = if d[i] == 1.0 {
                w[i] * (a[i] - s1i / s0i)
            } else {
                0.0
            };
            let mut second = 0.0;
            let mut third = 0.0;
            for j in 0..n {
                if d[j] == 1.0 && t[j] <= t[i] {
                    let (s0j, s1j) = sums[j];
                    second += w[j] / s0j;
                    third += w[j] * s1j / (s0j * s0j);
                }
            }
            let r = (a[i] * theta).exp();
            first - w[i] * a[i] * r * second + w[i] * r * third
        })
        .collect()
}

/// L0_i summed over event times j, each term centred at p_j.
pub fn oracle_l0(theta: f64, c: &Cohort, w: &[f64]) -> Vec<f64> {
    let (t, a, d) = arrays(c);
    let n = t.len();
    let sums: Vec<(f64, f64)> = (0..n).map(|j| s01(theta, &t, &a, w, t[j])).collect();
    (0..n)
        .map(|i| {
            let own = if d[i] == 1.0 {
                a[i] - sums[i].1 / sums[i].0
            } else {
                0.0
            };
            let mut acc = 0.0;
            for j in 0..n {
                if d[j] == 1.0 && t[j] <= t[i] {
                    acc += w[j] / sums[j].0 * (a[i] - sums[j].1 / sums[j].0);
                }
            }
            own - (theta * a[i]).exp() * acc
        })
        .collect()
}

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Small confounded cohort with two covariates, distinct continuous times
/// and roughly 25% censoring.
pub fn random_cohort(rng: &mut ChaCha8Rng, n: usize) -> Cohort {
    let subjects = (0..n)
        .map(|_| {
            let x1: f64 = StandardNormal.sample(rng);
            let x2 = if rng.random_bool(0.4) { 1.0 } else { 0.0 };
            let treated = rng.random::<f64>() < expit(0.2 + 0.6 * x1 - 0.8 * x2);
            let rate = (0.5 * x1 + 0.4 * x2 + if treated { 0.3 } else { 0.0 }).exp();
            let t_star = -rng.random::<f64>().ln() / rate;
            let c = -rng.random::<f64>().ln() / 0.3;
            Subject {
                covariates: vec![x1, x2],
                treated,
                time: t_star.min(c),
                event: t_star <= c,
            }
        })
        .collect();
    Cohort::new(subjects, vec!["x1".into(), "x2".into()]).unwrap()
}

/// Draws `count` small cohorts on which both the logistic and Cox fits
/// succeed under every built-in scheme.
pub fn fittable_cohorts(seed: u64, count: usize, n_range: (usize, usize)) -> Vec<Cohort> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let n = rng.random_range(n_range.0..=n_range.1);
        let c = random_cohort(&mut rng, n);
        let Ok(ps) = fit_logistic(&c, LogisticOptions::default()) else {
            continue;
        };
        let ok = WeightScheme::BUILT_IN.iter().all(|s| {
            let w = weights_for(s, &ps.e_hat, &treated(&c)).unwrap();
            fit_cox(&c, &w, CoxOptions::default()).is_ok()
        });
        if ok {
            out.push(c);
        }
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

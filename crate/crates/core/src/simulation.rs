//! Simulation study: data-generating process, large-sample approximation of
//! the true marginal log hazard ratio, and the Monte Carlo coverage study.
//!
//! Data-generating process, per subject:
//!
//! ```text
//!     L1 ~ Ber(0.5), L2, L3 ~ N(0, 1)
//!     A  ~ Ber(1 / (1 + exp(2 + 0.5 L1 - a1 L2 - a2 L3)))
//!     T0 ~ Exp(rate 0.01)
//!     lp = log(0.8) A + log(0.4) L1 + log(5) A L1 + log(b1) L2 + log(b2) L3
//!     T* = T0 exp(-lp),  C ~ Exp(rate 0.0001)
//!     T  = min(T*, C),   event = T* <= C
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::{Cohort, Subject};
use crate::coxfit::{fit_cox_fast, CoxOptions, SortedSurvival};
use crate::error::{Error, Result};
use crate::propensity::{expit, fit_logistic, weights_for, LogisticOptions, WeightScheme};
use crate::rng::{Block, StreamKey};
use crate::variance::{confidence_interval, corrected_sandwich_variance};

pub const COVARIATE_NAMES: [&str; 3] = ["L1", "L2", "L3"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub base_event_rate: f64,
    pub censor_rate: f64,
}

impl ScenarioConfig {
    /// Confounders drive the outcome more than the treatment.
    pub const SCENARIO_1: ScenarioConfig = ScenarioConfig {
        alpha1: -0.1,
        alpha2: -0.1,
        beta1: 0.4,
        beta2: 0.4,
        base_event_rate: 0.01,
        censor_rate: 0.0001,
    };

    /// Confounders drive the treatment more than the outcome.
    pub const SCENARIO_2: ScenarioConfig = ScenarioConfig {
        alpha1: 0.5,
        alpha2: 0.5,
        beta1: 0.95,
        beta2: 0.95,
        base_event_rate: 0.01,
        censor_rate: 0.0001,
    };

    pub fn preset(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Self::SCENARIO_1),
            2 => Ok(Self::SCENARIO_2),
            other => Err(Error::ConfigInvalid(format!(
                "unknown scenario `{other}` (expected 1 or 2)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.alpha1, self.alpha2].iter().all(|v| v.is_finite())
            && [
                self.beta1,
                self.beta2,
                self.base_event_rate,
                self.censor_rate,
            ]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(
                "scenario multipliers and rates must be finite and positive".into(),
            ))
        }
    }

    /// True propensity P(A = 1 | L).
    pub fn propensity(&self, l1: f64, l2: f64, l3: f64) -> f64 {
        expit(-(2.0 + 0.5 * l1 - self.alpha1 * l2 - self.alpha2 * l3))
    }

    /// Linear predictor of the outcome hazard.
    pub fn outcome_predictor(&self, a: f64, l1: f64, l2: f64, l3: f64) -> f64 {
        0.8_f64.ln() * a
            + 0.4_f64.ln() * l1
            + 5.0_f64.ln() * a * l1
            + self.beta1.ln() * l2
            + self.beta2.ln() * l3
    }
}

impl FromStr for ScenarioConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id: u32 = s.trim().parse().map_err(|_| {
            Error::ConfigInvalid(format!("unknown scenario `{s}` (expected 1 or 2)"))
        })?;
        Self::preset(id)
    }
}

/// A generated cohort together with its latent times.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub cohort: Cohort,
    pub event_time: Vec<f64>,
    pub censor_time: Vec<f64>,
    pub true_propensity: Vec<f64>,
}

impl SimulatedData {
    pub fn censoring_fraction(&self) -> f64 {
        let censored = self.cohort.subjects().iter().filter(|s| !s.event).count();
        censored as f64 / self.cohort.len() as f64
    }

    pub fn treated_fraction(&self) -> f64 {
        let treated = self.cohort.subjects().iter().filter(|s| s.treated).count();
        treated as f64 / self.cohort.len() as f64
    }
}

struct Draws {
    l: Vec<[f64; 3]>,
    e: Vec<f64>,
    a: Vec<bool>,
    t_star: Vec<f64>,
}

fn draw(scenario: &ScenarioConfig, n: usize, key: StreamKey) -> Draws {
    let mut cov_rng = key.rng(Block::Covariates);
    let mut trt_rng = key.rng(Block::Treatment);
    let mut evt_rng = key.rng(Block::EventTime);
    let mut l = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut t_star = Vec::with_capacity(n);
    for _ in 0..n {
        let l1 = if cov_rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let l2: f64 = StandardNormal.sample(&mut cov_rng);
        let l3: f64 = StandardNormal.sample(&mut cov_rng);
        let ei = scenario.propensity(l1, l2, l3);
        let u: f64 = trt_rng.random();
        let ai = u < ei;
        let t0: f64 = Exp1.sample(&mut evt_rng);
        let t0 = t0 / scenario.base_event_rate;
        let lp = scenario.outcome_predictor(if ai { 1.0 } else { 0.0 }, l1, l2, l3);
        l.push([l1, l2, l3]);
        e.push(ei);
        a.push(ai);
        t_star.push(t0 * (-lp).exp());
    }
    Draws { l, e, a, t_star }
}

/// One dataset from the scenario, fully determined by `key`.
pub fn generate_dataset(
    scenario: &ScenarioConfig,
    n: usize,
    key: StreamKey,
) -> Result<SimulatedData> {
    if n == 0 {
        return Err(Error::ConfigInvalid("n must be at least 1".into()));
    }
    let d = draw(scenario, n, key);
    let mut cens_rng = key.rng(Block::Censoring);
    let censor_time: Vec<f64> = (0..n)
        .map(|_| {
            let c: f64 = Exp1.sample(&mut cens_rng);
            c / scenario.censor_rate
        })
        .collect();
    let subjects = (0..n)
        .map(|i| {
            let (t, c) = (d.t_star[i], censor_time[i]);
            Subject {
                covariates: d.l[i].to_vec(),
                treated: d.a[i],
                time: t.min(c),
                event: t <= c,
            }
        })
        .collect();
    Ok(SimulatedData {
        cohort: Cohort::new(
            subjects,
            COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        )?,
        event_time: d.t_star,
        censor_time,
        true_propensity: d.e,
    })
}

pub const TRUTH_CHUNK: usize = 1 << 16;
pub const MIN_TRUTH_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrueLogHr {
    pub log_hr: f64,
    /// `|first half - second half| / 2`.
    pub split_half_se: f64,
    pub first_half: f64,
    pub second_half: f64,
    pub samples: usize,
}

/// Event times, treatment and weights.
type TruthArrays = (Vec<f64>, Vec<bool>, Vec<f64>);

/// Uncensored arrays for the chunks `[from, to)`.
fn truth_arrays(
    scenario: &ScenarioConfig,
    scheme: &WeightScheme,
    m: usize,
    seed: u64,
    chunks: std::ops::Range<usize>,
) -> Result<TruthArrays> {
    let parts: Vec<Result<TruthArrays>> = chunks
        .into_par_iter()
        .map(|c| {
            let size = TRUTH_CHUNK.min(m - c * TRUTH_CHUNK);
            let d = draw(scenario, size, StreamKey::truth_chunk(seed, c));
            let w = weights_for(scheme, &d.e, &d.a)?;
            Ok((d.t_star, d.a, w))
        })
        .collect();
    let mut time = Vec::new();
    let mut treated = Vec::new();
    let mut weights = Vec::new();
    for part in parts {
        let (t, a, w) = part?;
        time.extend(t);
        treated.extend(a);
        weights.extend(w);
    }
    Ok((time, treated, weights))
}

fn truth_fit(
    scenario: &ScenarioConfig,
    scheme: &WeightScheme,
    m: usize,
    seed: u64,
    chunks: std::ops::Range<usize>,
) -> Result<f64> {
    let (time, treated, weights) = truth_arrays(scenario, scheme, m, seed, chunks)?;
    let event = vec![true; time.len()];
    let data = SortedSurvival::new(&time, &treated, &event, &weights)?;
    drop((time, treated, weights));
    data.solve_theta(CoxOptions::default())
}

/// Approximates the estimand's marginal log hazard ratio from `m`
/// uncensored draws weighted by the true propensity score.
pub fn true_log_hr(
    scenario: &ScenarioConfig,
    scheme: &WeightScheme,
    m: usize,
    seed: u64,
) -> Result<TrueLogHr> {
    if m < MIN_TRUTH_SAMPLES {
        return Err(Error::ConfigInvalid(format!(
            "truth approximation needs at least {MIN_TRUTH_SAMPLES} samples, got {m}"
        )));
    }
    scenario.validate()?;
    let chunks = m.div_ceil(TRUTH_CHUNK);
    let half = chunks / 2;
    let log_hr = truth_fit(scenario, scheme, m, seed, 0..chunks)?;
    let first_half = truth_fit(scenario, scheme, m, seed, 0..half)?;
    let second_half = truth_fit(scenario, scheme, m, seed, half..chunks)?;
    Ok(TrueLogHr {
        log_hr,
        split_half_se: 0.5 * (first_half - second_half).abs(),
        first_half,
        second_half,
        samples: m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSpec {
    Given(f64),
    Compute { samples: usize },
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub scenario: ScenarioConfig,
    pub n: usize,
    pub replications: usize,
    pub estimand: WeightScheme,
    pub seed: u64,
    pub true_log_hr: TruthSpec,
    pub level: f64,
}

impl McConfig {
    pub fn new(
        scenario: ScenarioConfig,
        n: usize,
        replications: usize,
        estimand: WeightScheme,
        seed: u64,
    ) -> Self {
        Self {
            scenario,
            n,
            replications,
            estimand,
            seed,
            true_log_hr: TruthSpec::Compute { samples: 5_000_000 },
            level: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::ConfigInvalid(
                "replications must be at least 1".into(),
            ));
        }
        if self.n < 50 {
            return Err(Error::ConfigInvalid(format!(
                "n = {} is below the minimum of 50",
                self.n
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "level {} not in (0, 1)",
                self.level
            )));
        }
        if let TruthSpec::Given(v) = self.true_log_hr {
            if !v.is_finite() {
                return Err(Error::ConfigInvalid("true log HR must be finite".into()));
            }
        }
        self.scenario.validate()
    }
}

/// Outcome of one successful replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replication {
    pub theta_hat: f64,
    pub var_robust: f64,
    pub var_corrected: f64,
    pub width_robust: f64,
    pub width_corrected: f64,
    pub covers_robust: bool,
    pub covers_corrected: bool,
    pub censoring_fraction: f64,
    pub treated_fraction: f64,
}

/// Runs replication `index` of `config` against the given truth.
pub fn run_replication(config: &McConfig, truth: f64, index: usize) -> Result<Replication> {
    let data = generate_dataset(
        &config.scenario,
        config.n,
        StreamKey::replication(config.seed, index),
    )?;
    let cohort = &data.cohort;
    let ps = fit_logistic(cohort, LogisticOptions::default())?;
    let treated: Vec<bool> = cohort.subjects().iter().map(|s| s.treated).collect();
    let weights = weights_for(&config.estimand, &ps.e_hat, &treated)?;
    let fit = fit_cox_fast(
        &SortedSurvival::from_cohort(cohort, &weights)?,
        CoxOptions::default(),
    )?;
    let sandwich = corrected_sandwich_variance(&fit, &ps, cohort, &config.estimand)?;
    let a11 = sandwich.residuals.a11;
    let var_robust = sandwich.residuals.eta.iter().map(|e| e * e).sum::<f64>() / (a11 * a11);
    let ci_r = confidence_interval(fit.theta_hat, var_robust, config.level)?;
    let ci_c = confidence_interval(fit.theta_hat, sandwich.var_theta, config.level)?;
    Ok(Replication {
        theta_hat: fit.theta_hat,
        var_robust,
        var_corrected: sandwich.var_theta,
        width_robust: ci_r.width(),
        width_corrected: ci_c.width(),
        covers_robust: ci_r.contains(truth),
        covers_corrected: ci_c.contains(truth),
        censoring_fraction: data.censoring_fraction(),
        treated_fraction: data.treated_fraction(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub mean_width: f64,
    pub width_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub estimand: String,
    pub scenario: ScenarioConfig,
    pub n: usize,
    pub replications: usize,
    pub successes: usize,
    pub failures: usize,
    pub failure_reasons: BTreeMap<String, usize>,
    pub seed: u64,
    pub level: f64,
    pub true_log_hr: f64,
    pub true_log_hr_mcse: Option<f64>,
    pub mean_log_hr: f64,
    pub bias: f64,
    pub bias_mcse: f64,
    pub empirical_sd: f64,
    pub robust: EstimatorSummary,
    pub corrected: EstimatorSummary,
    pub censoring_fraction: f64,
    pub treated_fraction: f64,
}

/// Mean and Monte Carlo standard error of the mean, summed in order.
fn mean_and_mcse(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let sd = if n > 1 {
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd / (n as f64).sqrt())
}

fn summarize(reps: &[Replication], robust: bool) -> EstimatorSummary {
    let pick = |r: &Replication| {
        if robust {
            (r.width_robust, r.covers_robust, r.var_robust)
        } else {
            (r.width_corrected, r.covers_corrected, r.var_corrected)
        }
    };
    let (mean_width, width_mcse) = mean_and_mcse(reps.iter().map(|r| pick(r).0));
    let n = reps.len() as f64;
    let coverage = reps.iter().filter(|r| pick(r).1).count() as f64 / n;
    let (mean_se, _) = mean_and_mcse(reps.iter().map(|r| pick(r).2.sqrt()));
    EstimatorSummary {
        mean_width,
        width_mcse,
        coverage,
        coverage_mcse: (coverage * (1.0 - coverage) / n).sqrt(),
        mean_se,
    }
}

/// Replications are independent and run on the ambient rayon pool; results
/// are reduced in replication order, so the report does not depend on the
/// number of workers.
pub fn run_monte_carlo(config: &McConfig) -> Result<SimulationReport> {
    config.validate()?;
    let (truth, truth_mcse) = match config.true_log_hr {
        TruthSpec::Given(v) => (v, None),
        TruthSpec::Compute { samples } => {
            let t = true_log_hr(&config.scenario, &config.estimand, samples, config.seed)?;
            (t.log_hr, Some(t.split_half_se))
        }
    };
    let outcomes: Vec<Result<Replication>> = (0..config.replications)
        .into_par_iter()
        .map(|i| run_replication(config, truth, i))
        .collect();

    let mut reps = Vec::with_capacity(outcomes.len());
    let mut failure_reasons = BTreeMap::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => reps.push(r),
            Err(e) => *failure_reasons.entry(e.status().to_string()).or_insert(0) += 1,
        }
    }
    if reps.is_empty() {
        return Err(Error::AllReplicationsFailed(config.replications));
    }
    let (mean_log_hr, bias_mcse) = mean_and_mcse(reps.iter().map(|r| r.theta_hat));
    let empirical_sd = bias_mcse * (reps.len() as f64).sqrt();
    let (censoring_fraction, _) = mean_and_mcse(reps.iter().map(|r| r.censoring_fraction));
    let (treated_fraction, _) = mean_and_mcse(reps.iter().map(|r| r.treated_fraction));

    Ok(SimulationReport {
        estimand: config.estimand.label().to_string(),
        scenario: config.scenario,
        n: config.n,
        replications: config.replications,
        successes: reps.len(),
        failures: config.replications - reps.len(),
        failure_reasons,
        seed: config.seed,
        level: config.level,
        true_log_hr: truth,
        true_log_hr_mcse: truth_mcse,
        mean_log_hr,
        bias: mean_log_hr - truth,
        bias_mcse,
        empirical_sd,
        robust: summarize(&reps, true),
        corrected: summarize(&reps, false),
        censoring_fraction,
        treated_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_tokens() {
        assert_eq!(
            "1".parse::<ScenarioConfig>().unwrap(),
            ScenarioConfig::SCENARIO_1
        );
        assert_eq!(
            "2".parse::<ScenarioConfig>().unwrap(),
            ScenarioConfig::SCENARIO_2
        );
        assert!(matches!(
            "3".parse::<ScenarioConfig>(),
            Err(Error::ConfigInvalid(_))
        ));
        assert!("two".parse::<ScenarioConfig>().is_err());
    }

    #[test]
    fn dataset_is_deterministic() {
        let key = StreamKey::replication(11, 3);
        let a = generate_dataset(&ScenarioConfig::SCENARIO_2, 200, key).unwrap();
        let b = generate_dataset(&ScenarioConfig::SCENARIO_2, 200, key).unwrap();
        assert_eq!(a.cohort, b.cohort);
        assert_eq!(a.censor_time, b.censor_time);
        let c = generate_dataset(
            &ScenarioConfig::SCENARIO_2,
            200,
            StreamKey::replication(11, 4),
        )
        .unwrap();
        assert_ne!(a.cohort, c.cohort);
    }

    #[test]
    fn latent_times_are_consistent() {
        let d = generate_dataset(
            &ScenarioConfig::SCENARIO_1,
            500,
            StreamKey::replication(1, 0),
        )
        .unwrap();
        for (i, s) in d.cohort.subjects().iter().enumerate() {
            assert_eq!(s.time, d.event_time[i].min(d.censor_time[i]));
            assert_eq!(s.event, d.event_time[i] <= d.censor_time[i]);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = McConfig::new(ScenarioConfig::SCENARIO_1, 1000, 0, WeightScheme::Ate, 1);
        assert!(matches!(run_monte_carlo(&c), Err(Error::ConfigInvalid(_))));
        c.replications = 5;
        c.n = 10;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        assert!(matches!(
            true_log_hr(&ScenarioConfig::SCENARIO_1, &WeightScheme::Ate, 10, 1),
            Err(Error::ConfigInvalid(_))
        ));
    }
}

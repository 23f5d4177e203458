use coxpsw::prelude::*;
use coxpsw::simulation::TrueLogHr;
use serde::Serialize;

use crate::args::PsScope;
use crate::config::{AnalyzeConfig, SimulateConfig, TrueHrConfig, TruthSetting};
use crate::error::{CliError, Result};
use crate::output::{fixed, Table};

pub const OVERALL: &str = "Overall population";

pub const ANALYSIS_HEADERS: [&str; 7] = [
    "Weight",
    "Subgroup",
    "log HR",
    "Robust SE",
    "Corrected sandwich SE",
    "Robust SE /Corrected sandwich SE",
    "Status",
];

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisRow {
    pub weight: String,
    pub subgroup: String,
    /// `ok`, or the failure token.
    pub status: String,
    pub n: usize,
    #[serde(flatten)]
    pub report: Option<VarianceReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisOutput {
    pub ps_scope: &'static str,
    pub level: f64,
    pub rows: Vec<AnalysisRow>,
}

impl AnalysisOutput {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&ANALYSIS_HEADERS);
        for r in &self.rows {
            let cells = match &r.report {
                Some(v) => [
                    fixed(v.theta_hat, 3),
                    fixed(v.se_robust, 3),
                    fixed(v.se_corrected, 3),
                    fixed(v.ratio_robust_over_corrected, 3),
                ],
                None => Default::default(),
            };
            let mut row = vec![r.weight.clone(), r.subgroup.clone()];
            row.extend(cells);
            row.push(r.status.clone());
            t.push(row);
        }
        t
    }
}

fn treated(c: &Cohort) -> Vec<bool> {
    c.subjects().iter().map(|s| s.treated).collect()
}

fn fit_refit(sub: &Cohort, scheme: &WeightScheme, level: f64) -> coxpsw::Result<VarianceReport> {
    let sub = sub.drop_constant_covariates();
    let ps = fit_logistic(&sub, LogisticOptions::default())?;
    let w = weights_for(scheme, &ps.e_hat, &treated(&sub))?;
    let fit = fit_cox_sorted(&sub, &w, CoxOptions::default())?;
    variance_report(&fit, &ps, &sub, scheme, level)
}

fn fit_reuse(
    sub: &Cohort,
    members: &[usize],
    ps: &PropensityFit,
    scheme: &WeightScheme,
    level: f64,
) -> coxpsw::Result<VarianceReport> {
    let e: Vec<f64> = members.iter().map(|&r| ps.e_hat[r]).collect();
    let w = weights_for(scheme, &e, &treated(sub))?;
    let fit = fit_cox_sorted(sub, &w, CoxOptions::default())?;
    let var_robust = robust_variance(&fit, sub)?;
    let sandwich = corrected_sandwich_variance_nested(&fit, ps, sub, members, scheme)?;
    VarianceReport::new(fit.theta_hat, var_robust, sandwich.var_theta, level)
}

/// One row per estimand and group; fit failures become row statuses.
pub fn analyze(config: &AnalyzeConfig) -> Result<AnalysisOutput> {
    let cohort = load_csv(&config.input, &config.columns)
        .map_err(|e| CliError::core(config.input.display().to_string(), e))?;
    let mut groups: Vec<(String, std::result::Result<Vec<usize>, &'static str>)> =
        vec![(OVERALL.to_string(), Ok((0..cohort.len()).collect()))];
    for spec in &config.subgroups {
        let idx = match cohort.subgroup_indices(spec) {
            Ok(idx) => Ok(idx),
            Err(e @ Error::UnknownCovariate(_)) => {
                return Err(CliError::core(format!("subgroup `{spec}`"), e))
            }
            Err(e) => Err(e.status()),
        };
        groups.push((spec.to_string(), idx));
    }
    let full_ps = match config.ps_scope {
        PsScope::Full => {
            Some(fit_logistic(&cohort, LogisticOptions::default()).map_err(|e| e.status()))
        }
        PsScope::Subgroup => None,
    };

    let mut rows = Vec::new();
    for scheme in &config.estimands {
        for (label, idx) in &groups {
            let outcome = idx.as_ref().map_err(|s| *s).and_then(|idx| {
                let ps = match &full_ps {
                    Some(Err(status)) => return Err(*status),
                    Some(Ok(ps)) => Some(ps),
                    None => None,
                };
                cohort
                    .select(idx)
                    .and_then(|sub| match ps {
                        Some(ps) => fit_reuse(&sub, idx, ps, scheme, config.level),
                        None => fit_refit(&sub, scheme, config.level),
                    })
                    .map_err(|e| e.status())
            });
            let (status, report) = match outcome {
                Ok(report) => ("ok".to_string(), Some(report)),
                Err(status) => (status.to_string(), None),
            };
            rows.push(AnalysisRow {
                weight: scheme.label().to_string(),
                subgroup: label.clone(),
                status,
                n: idx.as_ref().map(Vec::len).unwrap_or(0),
                report,
            });
        }
    }
    Ok(AnalysisOutput {
        ps_scope: match config.ps_scope {
            PsScope::Subgroup => "subgroup",
            PsScope::Full => "full",
        },
        level: config.level,
        rows,
    })
}

pub const SIMULATION_HEADERS: [&str; 14] = [
    "Scenario",
    "Estimand",
    "n",
    "Replications",
    "Failures",
    "True log HR",
    "Bias of log HR",
    "Empirical SD",
    "Robust mean SE",
    "Corrected mean SE",
    "Robust width",
    "Corrected width",
    "Robust coverage",
    "Corrected coverage",
];

#[derive(Debug, Clone, Serialize)]
pub struct SimulationOutput {
    pub scenario: u32,
    pub reports: Vec<SimulationReport>,
}

impl SimulationOutput {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&SIMULATION_HEADERS);
        for r in &self.reports {
            t.push(vec![
                self.scenario.to_string(),
                r.estimand.clone(),
                r.n.to_string(),
                r.replications.to_string(),
                r.failures.to_string(),
                fixed(r.true_log_hr, 4),
                fixed(r.bias, 4),
                fixed(r.empirical_sd, 3),
                fixed(r.robust.mean_se, 3),
                fixed(r.corrected.mean_se, 3),
                fixed(r.robust.mean_width, 3),
                fixed(r.corrected.mean_width, 3),
                fixed(r.robust.coverage, 3),
                fixed(r.corrected.coverage, 3),
            ]);
        }
        t
    }
}

pub fn simulate(config: &SimulateConfig) -> Result<SimulationOutput> {
    let mut reports = Vec::new();
    for scheme in &config.estimands {
        let mut mc = McConfig::new(
            config.scenario,
            config.n,
            config.reps,
            scheme.clone(),
            config.shared.seed,
        );
        mc.level = config.level;
        mc.true_log_hr = match config.truth {
            TruthSetting::Given(v) => TruthSpec::Given(v),
            TruthSetting::Compute(samples) => TruthSpec::Compute { samples },
        };
        let report = run_monte_carlo(&mc)
            .map_err(|e| CliError::core(format!("estimand {}", scheme.label()), e))?;
        reports.push(report);
    }
    Ok(SimulationOutput {
        scenario: config.scenario_id,
        reports,
    })
}

pub const TRUTH_HEADERS: [&str; 5] = [
    "Scenario",
    "Estimand",
    "True log HR",
    "Split-half SE",
    "Samples",
];

#[derive(Debug, Clone, Serialize)]
pub struct TruthRow {
    pub scenario: u32,
    pub estimand: String,
    #[serde(flatten)]
    pub truth: TrueLogHr,
}

pub fn true_hr(config: &TrueHrConfig) -> Result<Vec<TruthRow>> {
    config
        .estimands
        .iter()
        .map(|scheme| {
            let truth = true_log_hr(&config.scenario, scheme, config.m, config.shared.seed)
                .map_err(|e| CliError::core(format!("estimand {}", scheme.label()), e))?;
            Ok(TruthRow {
                scenario: config.scenario_id,
                estimand: scheme.label().to_string(),
                truth,
            })
        })
        .collect()
}

pub fn truth_table(rows: &[TruthRow]) -> Table {
    let mut t = Table::new(&TRUTH_HEADERS);
    for r in rows {
        t.push(vec![
            r.scenario.to_string(),
            r.estimand.clone(),
            fixed(r.truth.log_hr, 4),
            fixed(r.truth.split_half_se, 4),
            r.truth.samples.to_string(),
        ]);
    }
    t
}

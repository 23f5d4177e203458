//! Propensity-score weighted Cox regression for a binary treatment.
//!
//! The crate fits the marginal log hazard ratio under ATE, ATT, ATO or
//! custom balancing weights and reports two variances side by side: the
//! robust variance that treats the weights as known, and the corrected
//! sandwich variance that stacks the Cox score with the logistic propensity
//! score. A simulation module reproduces the coverage study comparing them.
//!
//! ```no_run
//! use coxpsw::prelude::*;
//!
//! let map = ColumnMap::new("time", "status", "treated", &["age", "male"]);
//! let cohort = load_csv("cohort.csv", &map)?;
//! let ps = fit_logistic(&cohort, LogisticOptions::default())?;
//! let scheme = WeightScheme::Att;
//! let treated: Vec<bool> = cohort.subjects().iter().map(|s| s.treated).collect();
//! let weights = weights_for(&scheme, &ps.e_hat, &treated)?;
//! let fit = fit_cox(&cohort, &weights, CoxOptions::default())?;
//! let report = variance_report(&fit, &ps, &cohort, &scheme, 0.95)?;
//! println!("{:.3} ({:.3} / {:.3})", report.theta_hat, report.se_robust, report.se_corrected);
//! # Ok::<(), coxpsw::Error>(())
//! ```

pub mod cohort;
pub mod coxfit;
pub mod error;
pub mod linalg;
pub mod propensity;
pub mod rng;
pub mod simulation;
pub mod variance;

pub use error::{Error, ErrorKind, Result};

pub mod prelude {
    pub use crate::cohort::{
        load_csv, read_csv, validate_for_fitting, Cohort, ColumnMap, Comparator, FitDiagnostics,
        SubgroupSpec, Subject,
    };
    pub use crate::coxfit::{
        cox_score, fit_cox, fit_cox_fast, fit_cox_sorted, CoxFit, CoxOptions, SortedSurvival,
    };
    pub use crate::error::{Error, ErrorKind, Result};
    pub use crate::propensity::{
        fit_logistic, k_factor, subject_weight, weights_for, EstimandKind, LogisticOptions,
        PropensityFit, WeightScheme,
    };
    pub use crate::simulation::{
        generate_dataset, run_monte_carlo, true_log_hr, McConfig, ScenarioConfig, SimulationReport,
        TruthSpec,
    };
    pub use crate::variance::{
        confidence_interval, corrected_sandwich_variance, corrected_sandwich_variance_nested,
        eta_residuals, robust_variance, variance_decomposition, variance_report, Interval,
        VarianceReport,
    };
}

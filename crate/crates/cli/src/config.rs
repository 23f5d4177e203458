//! Merges command-line flags, an optional TOML file and built-in defaults,
//! in that order of precedence.

use std::path::{Path, PathBuf};

use coxpsw::prelude::*;
use serde::{Deserialize, Deserializer};

use crate::args::{AnalyzeArgs, CommonArgs, Format, PsScope, SimulateArgs, TrueHrArgs};
use crate::error::{CliError, Result};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_TRUTH_SAMPLES: usize = 5_000_000;

/// Keys mirror the long flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub input: Option<PathBuf>,
    pub time: Option<String>,
    pub event: Option<String>,
    pub treatment: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub estimand: Option<OneOrMany>,
    pub subgroup: Option<OneOrMany>,
    pub ps_scope: Option<PsScope>,
    pub level: Option<f64>,
    pub scenario: Option<ScalarText>,
    #[serde(default, deserialize_with = "count")]
    pub n: Option<usize>,
    #[serde(default, deserialize_with = "count")]
    pub reps: Option<usize>,
    pub true_hr: Option<ScalarText>,
    #[serde(default, deserialize_with = "count")]
    pub truth_samples: Option<usize>,
    #[serde(default, deserialize_with = "count")]
    pub m: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => s.split(',').map(str::to_string).collect(),
            OneOrMany::Many(v) => v,
        }
    }
}

/// A value written either bare (`2`, `0.4`) or quoted (`"compute"`).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalarText {
    Int(i64),
    Float(f64),
    Text(String),
}

impl ScalarText {
    fn into_text(self) -> String {
        match self {
            ScalarText::Int(v) => v.to_string(),
            ScalarText::Float(v) => v.to_string(),
            ScalarText::Text(s) => s,
        }
    }
}

fn count<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<usize>, D::Error> {
    let v = Option::<ScalarText>::deserialize(d)?;
    v.map(|v| parse_count(&v.into_text()).map_err(serde::de::Error::custom))
        .transpose()
}

/// Accepts `5000000`, `5_000_000` or `5e6`.
pub fn parse_count(s: &str) -> std::result::Result<usize, String> {
    let cleaned = s.trim().replace('_', "");
    if let Ok(v) = cleaned.parse::<usize>() {
        return Ok(v);
    }
    match cleaned.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= 1e15 => Ok(v as usize),
        _ => Err(format!("`{s}` is not a non-negative whole number")),
    }
}

pub fn load_file(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct Shared {
    pub seed: u64,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

fn shared(cli: &CommonArgs, file: &FileConfig) -> Result<Shared> {
    let threads = cli.threads.or(file.threads);
    if threads == Some(0) {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    Ok(Shared {
        seed: cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        format: cli.format.or(file.format).unwrap_or(Format::Csv),
        out: cli.out.clone().or_else(|| file.out.clone()),
        threads,
    })
}

fn schemes(tokens: Vec<String>) -> Result<Vec<WeightScheme>> {
    let mut out: Vec<WeightScheme> = Vec::new();
    for t in tokens.iter().map(|t| t.trim()).filter(|t| !t.is_empty()) {
        let s: WeightScheme = t
            .parse()
            .map_err(|e: coxpsw::Error| CliError::core("--estimand", e))?;
        if !out.iter().any(|o| o.token() == s.token()) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(
            "--estimand needs at least one of ate, att, ato".into(),
        ));
    }
    Ok(out)
}

fn level(v: Option<f64>) -> Result<f64> {
    let level = v.unwrap_or(DEFAULT_LEVEL);
    if level > 0.0 && level < 1.0 {
        Ok(level)
    } else {
        Err(CliError::Config(format!(
            "--level {level} is not in (0, 1)"
        )))
    }
}

fn scenario(cli: Option<&String>, file: Option<ScalarText>) -> Result<(u32, ScenarioConfig)> {
    let token = cli
        .cloned()
        .or_else(|| file.map(ScalarText::into_text))
        .unwrap_or_else(|| "1".into());
    let config: ScenarioConfig = token.parse().map_err(|e| CliError::core("--scenario", e))?;
    let id = if config == ScenarioConfig::SCENARIO_1 {
        1
    } else {
        2
    };
    Ok((id, config))
}

#[derive(Debug, Clone)]
pub struct AnalyzeConfig {
    pub shared: Shared,
    pub input: PathBuf,
    pub columns: ColumnMap,
    pub estimands: Vec<WeightScheme>,
    pub subgroups: Vec<SubgroupSpec>,
    pub ps_scope: PsScope,
    pub level: f64,
}

impl AnalyzeConfig {
    pub fn resolve(args: &AnalyzeArgs) -> Result<Self> {
        let file = load_file(args.common.config.as_deref())?;
        let shared = shared(&args.common, &file)?;
        let input = args
            .input
            .clone()
            .or(file.input)
            .ok_or_else(|| CliError::Config("--input is required".into()))?;
        let covariates = args
            .covariates
            .clone()
            .or(file.covariates)
            .ok_or_else(|| CliError::Config("--covariates is required".into()))?;
        let covariates: Vec<&str> = covariates
            .iter()
            .map(|c| c.trim())
            .filter(|c| !c.is_empty())
            .collect();
        if covariates.is_empty() {
            return Err(CliError::Config(
                "--covariates needs at least one column".into(),
            ));
        }
        let columns = ColumnMap::new(
            args.time
                .as_deref()
                .or(file.time.as_deref())
                .unwrap_or("time"),
            args.event
                .as_deref()
                .or(file.event.as_deref())
                .unwrap_or("event"),
            args.treatment
                .as_deref()
                .or(file.treatment.as_deref())
                .unwrap_or("treatment"),
            &covariates,
        );
        let estimands = schemes(
            args.estimand
                .clone()
                .or_else(|| file.estimand.map(OneOrMany::into_vec))
                .unwrap_or_else(|| vec!["ate".into(), "att".into(), "ato".into()]),
        )?;
        let raw_subgroups = if args.subgroup.is_empty() {
            file.subgroup
                .map(|s| match s {
                    OneOrMany::One(s) => vec![s],
                    OneOrMany::Many(v) => v,
                })
                .unwrap_or_default()
        } else {
            args.subgroup.clone()
        };
        let subgroups = raw_subgroups
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::core(format!("subgroup `{s}`"), e))
            })
            .collect::<Result<Vec<SubgroupSpec>>>()?;
        for s in &subgroups {
            if !columns.covariates.contains(&s.covariate) {
                return Err(CliError::Config(format!(
                    "subgroup `{s}` uses `{}`, which is not among --covariates",
                    s.covariate
                )));
            }
        }
        Ok(Self {
            shared,
            input,
            columns,
            estimands,
            subgroups,
            ps_scope: args.ps_scope.or(file.ps_scope).unwrap_or(PsScope::Subgroup),
            level: level(args.level.or(file.level))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthSetting {
    Given(f64),
    Compute(usize),
}

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub shared: Shared,
    pub scenario_id: u32,
    pub scenario: ScenarioConfig,
    pub n: usize,
    pub reps: usize,
    pub estimands: Vec<WeightScheme>,
    pub truth: TruthSetting,
    pub level: f64,
}

impl SimulateConfig {
    pub fn resolve(args: &SimulateArgs) -> Result<Self> {
        let file = load_file(args.common.config.as_deref())?;
        let shared = shared(&args.common, &file)?;
        let (scenario_id, scenario) = scenario(args.scenario.as_ref(), file.scenario)?;
        let samples = args
            .truth_samples
            .or(file.truth_samples)
            .unwrap_or(DEFAULT_TRUTH_SAMPLES);
        let truth_text = args
            .true_hr
            .clone()
            .or_else(|| file.true_hr.map(ScalarText::into_text))
            .unwrap_or_else(|| "compute".into());
        let truth = if truth_text.trim().eq_ignore_ascii_case("compute") {
            TruthSetting::Compute(samples)
        } else {
            match truth_text.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => TruthSetting::Given(v),
                _ => {
                    return Err(CliError::Config(format!(
                        "--true-hr `{truth_text}` is neither a number nor `compute`"
                    )))
                }
            }
        };
        let estimands = schemes(
            args.estimand
                .clone()
                .or_else(|| file.estimand.map(OneOrMany::into_vec))
                .unwrap_or_else(|| vec!["ate".into(), "att".into(), "ato".into()]),
        )?;
        if matches!(truth, TruthSetting::Given(_)) && estimands.len() > 1 {
            return Err(CliError::Config(
                "a numeric --true-hr applies to a single --estimand".into(),
            ));
        }
        Ok(Self {
            shared,
            scenario_id,
            scenario,
            n: args.n.or(file.n).unwrap_or(1_000),
            reps: args.reps.or(file.reps).unwrap_or(1_000),
            estimands,
            truth,
            level: level(args.level.or(file.level))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrueHrConfig {
    pub shared: Shared,
    pub scenario_id: u32,
    pub scenario: ScenarioConfig,
    pub estimands: Vec<WeightScheme>,
    pub m: usize,
}

impl TrueHrConfig {
    pub fn resolve(args: &TrueHrArgs) -> Result<Self> {
        let file = load_file(args.common.config.as_deref())?;
        let shared = shared(&args.common, &file)?;
        let (scenario_id, scenario) = scenario(args.scenario.as_ref(), file.scenario)?;
        let estimands = schemes(
            args.estimand
                .clone()
                .or_else(|| file.estimand.map(OneOrMany::into_vec))
                .unwrap_or_else(|| vec!["ate".into(), "att".into(), "ato".into()]),
        )?;
        Ok(Self {
            shared,
            scenario_id,
            scenario,
            estimands,
            m: args.m.or(file.m).unwrap_or(DEFAULT_TRUTH_SAMPLES),
        })
    }
}

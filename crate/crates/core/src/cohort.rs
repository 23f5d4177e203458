//! Observed survival samples: per-subject records, CSV ingestion and
//! subgroup selection.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// One observed individual: baseline covariates, received treatment,
/// observed time `min(T*, C)` and event indicator `T* <= C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub covariates: Vec<f64>,
    pub treated: bool,
    pub time: f64,
    pub event: bool,
}

impl Subject {
    pub fn a(&self) -> f64 {
        if self.treated {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<Subject>,
    covariate_names: Vec<String>,
}

impl Cohort {
    /// Builds a cohort, checking the per-subject invariants.
    pub fn new(subjects: Vec<Subject>, covariate_names: Vec<String>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::EmptyCohort);
        }
        let dim = covariate_names.len();
        for (row, s) in subjects.iter().enumerate() {
            if !(s.time.is_finite() && s.time > 0.0) {
                return Err(Error::NonPositiveTime { row });
            }
            if s.covariates.len() != dim {
                return Err(Error::CovariateDimension {
                    row,
                    expected: dim,
                    found: s.covariates.len(),
                });
            }
        }
        Ok(Self {
            subjects,
            covariate_names,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Design row with a leading intercept.
    pub fn design_row(&self, i: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.dim() + 1);
        row.push(1.0);
        row.extend_from_slice(&self.subjects[i].covariates);
        row
    }

    pub fn has_both_arms(&self) -> bool {
        let treated = self.subjects.iter().filter(|s| s.treated).count();
        treated > 0 && treated < self.len()
    }

    /// Indices (in cohort order) of the subjects satisfying `spec`.
    pub fn subgroup_indices(&self, spec: &SubgroupSpec) -> Result<Vec<usize>> {
        let col = self
            .covariate_index(&spec.covariate)
            .ok_or_else(|| Error::UnknownCovariate(spec.covariate.clone()))?;
        let idx: Vec<usize> = self
            .subjects
            .iter()
            .enumerate()
            .filter(|(_, s)| spec.comparator.holds(s.covariates[col], spec.threshold))
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::EmptySubgroup(spec.to_string()));
        }
        Ok(idx)
    }

    /// Subset cohort for the given indices, order preserved.
    pub fn select(&self, indices: &[usize]) -> Result<Cohort> {
        Cohort::new(
            indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            self.covariate_names.clone(),
        )
    }

    pub fn filter_subgroup(&self, spec: &SubgroupSpec) -> Result<Cohort> {
        let idx = self.subgroup_indices(spec)?;
        self.select(&idx)
    }

    /// Copy without the covariates that take a single value, e.g. the
    /// defining covariate inside a subgroup.
    pub fn drop_constant_covariates(&self) -> Cohort {
        let keep: Vec<usize> = (0..self.dim())
            .filter(|&j| {
                let first = self.subjects[0].covariates[j];
                self.subjects.iter().any(|s| s.covariates[j] != first)
            })
            .collect();
        Cohort {
            subjects: self
                .subjects
                .iter()
                .map(|s| Subject {
                    covariates: keep.iter().map(|&j| s.covariates[j]).collect(),
                    ..s.clone()
                })
                .collect(),
            covariate_names: keep
                .iter()
                .map(|&j| self.covariate_names[j].clone())
                .collect(),
        }
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        validate_for_fitting(self)
    }

    /// Writes the cohort with columns `time,event,treatment,<covariates>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string(), "event".into(), "treatment".into()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for s in &self.subjects {
            let mut rec = vec![
                s.time.to_string(),
                (s.event as u8).to_string(),
                (s.treated as u8).to_string(),
            ];
            rec.extend(s.covariates.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Names of the CSV columns holding each field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub time: String,
    pub event: String,
    pub treatment: String,
    pub covariates: Vec<String>,
}

impl ColumnMap {
    pub fn new(time: &str, event: &str, treatment: &str, covariates: &[&str]) -> Self {
        Self {
            time: time.into(),
            event: event.into(),
            treatment: treatment.into(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, map: &ColumnMap) -> Result<Cohort> {
    let file = std::fs::File::open(path)?;
    read_csv(file, map)
}

/// Parses a headed, comma-delimited table. Row numbers in errors are 1-based
/// data rows (the header is not counted).
pub fn read_csv<R: Read>(reader: R, map: &ColumnMap) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_col = find(&map.time)?;
    let d_col = find(&map.event)?;
    let a_col = find(&map.treatment)?;
    let x_cols = map
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut subjects = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let num = |col: usize| -> Result<f64> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::NonNumericCell {
                row,
                column: headers[col].to_string(),
                value: raw.to_string(),
            })
        };
        let indicator = |col: usize| -> Result<bool> {
            let v = num(col)?;
            if v == 0.0 {
                Ok(false)
            } else if v == 1.0 {
                Ok(true)
            } else {
                Err(Error::NonBinaryIndicator {
                    row,
                    column: headers[col].to_string(),
                })
            }
        };
        let time = num(t_col)?;
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::NonPositiveTime { row });
        }
        let event = indicator(d_col)?;
        let treated = indicator(a_col)?;
        let covariates = x_cols
            .iter()
            .map(|&c| {
                let v = num(c)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonNumericCell {
                        row,
                        column: headers[c].to_string(),
                        value: rec.get(c).unwrap_or("").to_string(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        subjects.push(Subject {
            covariates,
            treated,
            time,
            event,
        });
    }
    Cohort::new(subjects, map.covariates.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Eq,
    Ge,
    Lt,
    Le,
    Gt,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Eq => value == threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
        }
    }

    /// Complementary comparator, if it is in the supported set.
    pub fn negated(self) -> Option<Comparator> {
        match self {
            Comparator::Ge => Some(Comparator::Lt),
            Comparator::Lt => Some(Comparator::Ge),
            Comparator::Le => Some(Comparator::Gt),
            Comparator::Gt => Some(Comparator::Le),
            Comparator::Eq => None,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "==",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgroupSpec {
    pub covariate: String,
    pub comparator: Comparator,
    pub threshold: f64,
}

impl SubgroupSpec {
    pub fn new(covariate: &str, comparator: Comparator, threshold: f64) -> Self {
        Self {
            covariate: covariate.into(),
            comparator,
            threshold,
        }
    }

    pub fn negated(&self) -> Option<SubgroupSpec> {
        self.comparator.negated().map(|comparator| SubgroupSpec {
            comparator,
            ..self.clone()
        })
    }
}

impl fmt::Display for SubgroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}",
            self.covariate,
            self.comparator.symbol(),
            self.threshold
        )
    }
}

impl std::str::FromStr for SubgroupSpec {
    type Err = Error;

    /// Accepts `name>=value`, `name<value`, `name==value` (or `name=value`), etc.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSubgroup(s.to_string());
        // two-character operators first so `>=` is not read as `>`
        const OPS: [(&str, Comparator); 6] = [
            (">=", Comparator::Ge),
            ("<=", Comparator::Le),
            ("==", Comparator::Eq),
            (">", Comparator::Gt),
            ("<", Comparator::Lt),
            ("=", Comparator::Eq),
        ];
        for (op, cmp) in OPS {
            if let Some(pos) = s.find(op) {
                let name = s[..pos].trim();
                let value = s[pos + op.len()..].trim();
                if name.is_empty() {
                    return Err(bad());
                }
                let threshold: f64 = value.parse().map_err(|_| bad())?;
                return Ok(SubgroupSpec::new(name, cmp, threshold));
            }
        }
        Err(bad())
    }
}

/// Pre-fit summary of a cohort. Nothing here is an error; the flags say
/// which fits are going to fail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub n: usize,
    pub treated: usize,
    pub control: usize,
    pub events_treated: usize,
    pub events_control: usize,
    pub censoring_fraction: f64,
    pub single_arm: bool,
    pub zero_events: bool,
    /// Some arm has no events, so the weighted Cox score has no finite root.
    pub monotone_likelihood: bool,
}

impl FitDiagnostics {
    pub fn clear(&self) -> bool {
        !(self.single_arm || self.zero_events || self.monotone_likelihood)
    }
}

pub fn validate_for_fitting(cohort: &Cohort) -> FitDiagnostics {
    let mut d = FitDiagnostics {
        n: cohort.len(),
        treated: 0,
        control: 0,
        events_treated: 0,
        events_control: 0,
        censoring_fraction: 0.0,
        single_arm: false,
        zero_events: false,
        monotone_likelihood: false,
    };
    for s in cohort.subjects() {
        match (s.treated, s.event) {
            (true, ev) => {
                d.treated += 1;
                d.events_treated += ev as usize;
            }
            (false, ev) => {
                d.control += 1;
                d.events_control += ev as usize;
            }
        }
    }
    let events = d.events_treated + d.events_control;
    d.censoring_fraction = if d.n == 0 {
        0.0
    } else {
        (d.n - events) as f64 / d.n as f64
    };
    d.single_arm = d.treated == 0 || d.control == 0;
    d.zero_events = events == 0;
    d.monotone_likelihood = d.events_treated == 0 || d.events_control == 0;
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_map() -> ColumnMap {
        ColumnMap::new("t", "d", "a", &["x1"])
    }

    fn small() -> Cohort {
        let rows = [
            (0.0, true, 1.0, true),
            (1.0, false, 2.0, true),
            (1.0, true, 3.0, false),
        ];
        Cohort::new(
            rows.iter()
                .map(|&(x, a, t, d)| Subject {
                    covariates: vec![x],
                    treated: a,
                    time: t,
                    event: d,
                })
                .collect(),
            vec!["x1".into()],
        )
        .unwrap()
    }

    #[test]
    fn parses_three_rows() {
        let data = "t,d,a,x1\n1.5,1,0,0.25\n2,0,1,1\n3.25,1,1,-2\n";
        let c = read_csv(data.as_bytes(), &csv_map()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.dim(), 1);
        assert_eq!(c.subjects()[2].covariates, vec![-2.0]);
        assert!(c.subjects()[1].treated && !c.subjects()[1].event);
    }

    #[test]
    fn columns_are_matched_by_name() {
        let data = "x1,a,extra,d,t\n0.5,1,zzz,1,4\n";
        let c = read_csv(data.as_bytes(), &csv_map()).unwrap();
        assert_eq!(c.subjects()[0].time, 4.0);
        assert_eq!(c.subjects()[0].covariates, vec![0.5]);
    }

    #[test]
    fn missing_event_column() {
        let data = "t,a,x1\n1,0,0\n";
        match read_csv(data.as_bytes(), &csv_map()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "d"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_time_names_row() {
        let data = "t,d,a,x1\n1,1,0,0\n-1,1,0,0\n";
        assert!(matches!(
            read_csv(data.as_bytes(), &csv_map()),
            Err(Error::NonPositiveTime { row: 2 })
        ));
    }

    #[test]
    fn bad_cells() {
        let data = "t,d,a,x1\n1,1,0,abc\n";
        match read_csv(data.as_bytes(), &csv_map()) {
            Err(Error::NonNumericCell { row, column, .. }) => {
                assert_eq!((row, column.as_str()), (1, "x1"))
            }
            other => panic!("{other:?}"),
        }
        let data = "t,d,a,x1\n1,1,2,0\n";
        assert!(matches!(
            read_csv(data.as_bytes(), &csv_map()),
            Err(Error::NonBinaryIndicator { row: 1, .. })
        ));
        // missing values are hard errors
        let data = "t,d,a,x1\n1,1,0,\n";
        assert!(matches!(
            read_csv(data.as_bytes(), &csv_map()),
            Err(Error::NonNumericCell { .. })
        ));
    }

    #[test]
    fn filter_ge() {
        let c = small();
        let spec = SubgroupSpec::new("x1", Comparator::Ge, 0.5);
        let sub = c.filter_subgroup(&spec).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.subjects()[0].time, 2.0);
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn filter_errors() {
        let c = small();
        assert!(matches!(
            c.filter_subgroup(&SubgroupSpec::new("age", Comparator::Ge, 1.0)),
            Err(Error::UnknownCovariate(_))
        ));
        assert!(matches!(
            c.filter_subgroup(&SubgroupSpec::new("x1", Comparator::Gt, 5.0)),
            Err(Error::EmptySubgroup(_))
        ));
    }

    #[test]
    fn parse_subgroup() {
        let s: SubgroupSpec = "age>=70".parse().unwrap();
        assert_eq!(s, SubgroupSpec::new("age", Comparator::Ge, 70.0));
        let s: SubgroupSpec = "male == 1".parse().unwrap();
        assert_eq!(s, SubgroupSpec::new("male", Comparator::Eq, 1.0));
        let s: SubgroupSpec = "x<0.5".parse().unwrap();
        assert_eq!(s.comparator, Comparator::Lt);
        assert!("x~3".parse::<SubgroupSpec>().is_err());
        assert!(">=3".parse::<SubgroupSpec>().is_err());
        assert_eq!(s.to_string(), "x<0.5");
    }

    #[test]
    fn diagnostics_flags() {
        let c = small();
        let d = validate_for_fitting(&c);
        assert_eq!(
            (d.treated, d.control, d.events_treated, d.events_control),
            (2, 1, 1, 1)
        );
        assert!(d.clear());

        let mut subjects = c.subjects().to_vec();
        subjects[0].event = false;
        let d = validate_for_fitting(&Cohort::new(subjects.clone(), vec!["x1".into()]).unwrap());
        assert!(d.monotone_likelihood && !d.zero_events);

        for s in &mut subjects {
            s.event = false;
        }
        let d = validate_for_fitting(&Cohort::new(subjects, vec!["x1".into()]).unwrap());
        assert!(d.zero_events && d.monotone_likelihood);
        assert_eq!(d.censoring_fraction, 1.0);
    }

    #[test]
    fn constant_covariates_dropped() {
        let mk = |x: [f64; 3]| Subject {
            covariates: x.to_vec(),
            treated: x[0] > 0.0,
            time: 1.0,
            event: true,
        };
        let c = Cohort::new(
            vec![
                mk([1.0, 5.0, 0.0]),
                mk([0.0, 5.0, 1.0]),
                mk([2.0, 5.0, 1.0]),
            ],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let d = c.drop_constant_covariates();
        assert_eq!(d.covariate_names(), ["a", "c"]);
        assert_eq!(d.subjects()[2].covariates, vec![2.0, 1.0]);
    }
}

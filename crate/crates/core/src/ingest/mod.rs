//! Cohort ingestion: CSV parsing, normalization rules, longitudinal
//! summarization and complete-case filtering.
//!
//! Two files describe a cohort:
//!
//! * `cohort.csv` with `subject_id, sex, outcome` followed by raw columns;
//!   an empty cell is a missing value.
//! * `longitudinal.csv` in long format: `subject_id, predictor, wave, age, value`.
//!
//! A rules document maps every model predictor to one [`NormalizationRule`].

pub mod normalize;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::longitudinal::{
    blup, estimate_variance_components, wave_mean, LongitudinalError, SubjectSeries,
    VarianceComponents, VarianceMethod,
};
use crate::model::{FeatureVector, ModelSpec, PredictorKind, Summarizer};
pub use normalize::{
    ace_score, compose_any_source, delinquency_score, divide_by_constant, item_mean_then_divide,
    normalize_likert, normalize_min_max, MinMaxMode, SourceObservation,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("rules name predictor `{0}` which the model does not define")]
    UnknownPredictor(String),
    #[error("no normalization rule for predictor `{0}`")]
    RuleGap(String),
    #[error("rule for `{predictor}` is invalid: {message}")]
    InvalidRule { predictor: String, message: String },
    #[error("column `{0}` not present in cohort file")]
    MissingColumn(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("divisor {0} is not strictly positive")]
    NonPositiveDivisor(f64),
    #[error("all items are missing")]
    AllMissing,
    #[error("line {line}, subject `{subject}`, predictor `{predictor}`: {source}")]
    Value { line: u64, subject: String, predictor: String, source: Box<IngestError> },
    #[error("summarizing `{predictor}`: {source}")]
    Summary { predictor: String, source: LongitudinalError },
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
}

/// Raw item: one column, or several columns of which the largest
/// non-missing value is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemSource {
    Column(String),
    MaxOf(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSource {
    /// Reporter label, e.g. `parent` or `child`.
    #[serde(default)]
    pub name: Option<String>,
    /// 0/1 column.
    pub occurred: String,
    /// Column with the age at occurrence. Without one, every report counts
    /// as before the cutoff.
    #[serde(default)]
    pub age: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventSpec {
    Column(String),
    Sources { sources: Vec<EventSource> },
}

impl EventSpec {
    fn sources(&self) -> Vec<EventSource> {
        match self {
            EventSpec::Column(c) => vec![EventSource { name: None, occurred: c.clone(), age: None }],
            EventSpec::Sources { sources } => sources.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum NormalizationRule {
    /// `value / divisor`. `column` defaults to the predictor name; for a
    /// longitudinal predictor it names the series in the long file.
    DivideByConstant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
        divisor: f64,
    },
    MinMaxPossible {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
        min_possible: f64,
        max_possible: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<MinMaxMode>,
    },
    ItemMeanThenDivide { items: Vec<ItemSource>, divisor: f64 },
    NonmissingEventMean { events: Vec<EventSpec>, age_cutoff: f64 },
    AnySourceOr { sources: Vec<EventSource>, age_cutoff: f64 },
}

impl NormalizationRule {
    fn validate(&self, predictor: &str, kind: PredictorKind) -> Result<(), IngestError> {
        let bad = |message: &str| IngestError::InvalidRule {
            predictor: predictor.to_string(),
            message: message.to_string(),
        };
        match self {
            NormalizationRule::DivideByConstant { divisor, .. }
            | NormalizationRule::ItemMeanThenDivide { divisor, .. } => {
                if !(*divisor > 0.0 && divisor.is_finite()) {
                    return Err(bad("divisor must be strictly positive"));
                }
            }
            NormalizationRule::MinMaxPossible { min_possible, max_possible, .. } => {
                if !(*max_possible > 0.0 && min_possible < max_possible) {
                    return Err(bad("need 0 < max_possible and min_possible < max_possible"));
                }
            }
            NormalizationRule::NonmissingEventMean { events, age_cutoff } => {
                if events.is_empty() {
                    return Err(bad("event list is empty"));
                }
                if age_cutoff.is_nan() || *age_cutoff <= 0.0 {
                    return Err(bad("age cutoff must be positive"));
                }
            }
            NormalizationRule::AnySourceOr { sources, age_cutoff } => {
                if sources.is_empty() {
                    return Err(bad("source list is empty"));
                }
                if age_cutoff.is_nan() || *age_cutoff <= 0.0 {
                    return Err(bad("age cutoff must be positive"));
                }
            }
        }
        if let NormalizationRule::ItemMeanThenDivide { items, .. } = self {
            if items.is_empty() {
                return Err(bad("item list is empty"));
            }
        }
        let scalar = matches!(
            self,
            NormalizationRule::DivideByConstant { .. } | NormalizationRule::MinMaxPossible { .. }
        );
        if kind == PredictorKind::Longitudinal && !scalar {
            return Err(bad("longitudinal predictors take divide_by_constant or min_max_possible"));
        }
        Ok(())
    }

    fn scalar_column<'a>(&'a self, predictor: &'a str) -> &'a str {
        match self {
            NormalizationRule::DivideByConstant { column, .. }
            | NormalizationRule::MinMaxPossible { column, .. } => column.as_deref().unwrap_or(predictor),
            _ => predictor,
        }
    }

    /// Normalizes one scalar value (scalar rules only).
    fn apply_scalar(&self, value: f64, default_mode: MinMaxMode) -> Result<f64, IngestError> {
        match self {
            NormalizationRule::DivideByConstant { divisor, .. } => divide_by_constant(value, *divisor),
            NormalizationRule::MinMaxPossible { min_possible, max_possible, mode, .. } => {
                normalize_min_max(value, *min_possible, *max_possible, mode.unwrap_or(default_mode))
            }
            _ => unreachable!("validated as scalar"),
        }
    }

    /// Normalized cross-sectional value, or `None` when inputs are missing.
    fn apply_record(
        &self,
        predictor: &str,
        record: &RawRecord,
        default_mode: MinMaxMode,
    ) -> Result<Option<f64>, IngestError> {
        match self {
            NormalizationRule::DivideByConstant { .. } | NormalizationRule::MinMaxPossible { .. } => {
                match record.field(self.scalar_column(predictor)) {
                    Some(v) => self.apply_scalar(v, default_mode).map(Some),
                    None => Ok(None),
                }
            }
            NormalizationRule::ItemMeanThenDivide { items, divisor } => {
                let values: Vec<Option<f64>> = items
                    .iter()
                    .map(|item| match item {
                        ItemSource::Column(c) => record.field(c),
                        ItemSource::MaxOf(cols) => {
                            cols.iter().filter_map(|c| record.field(c)).reduce(f64::max)
                        }
                    })
                    .collect();
                if let Some(neg) = values.iter().flatten().find(|v| **v < 0.0) {
                    return Err(IngestError::OutOfRange(format!("negative item response {neg}")));
                }
                match item_mean_then_divide(&values, *divisor) {
                    Err(IngestError::AllMissing) => Ok(None),
                    other => other.map(Some),
                }
            }
            NormalizationRule::NonmissingEventMean { events, age_cutoff } => {
                let indicators = events
                    .iter()
                    .map(|e| record.any_source(&e.sources(), *age_cutoff))
                    .collect::<Result<Vec<_>, _>>()?;
                match ace_score(&indicators) {
                    Err(IngestError::AllMissing) => Ok(None),
                    other => other.map(Some),
                }
            }
            NormalizationRule::AnySourceOr { sources, age_cutoff } => {
                Ok(record.any_source(sources, *age_cutoff)?.map(f64::from))
            }
        }
    }

    /// Raw columns of `cohort.csv` this rule reads.
    fn columns(&self, predictor: &str) -> Vec<String> {
        match self {
            NormalizationRule::DivideByConstant { .. } | NormalizationRule::MinMaxPossible { .. } => {
                vec![self.scalar_column(predictor).to_string()]
            }
            NormalizationRule::ItemMeanThenDivide { items, .. } => items
                .iter()
                .flat_map(|i| match i {
                    ItemSource::Column(c) => vec![c.clone()],
                    ItemSource::MaxOf(cs) => cs.clone(),
                })
                .collect(),
            NormalizationRule::NonmissingEventMean { events, .. } => events
                .iter()
                .flat_map(|e| e.sources())
                .flat_map(|s| std::iter::once(s.occurred).chain(s.age))
                .collect(),
            NormalizationRule::AnySourceOr { sources, .. } => sources
                .iter()
                .flat_map(|s| std::iter::once(s.occurred.clone()).chain(s.age.clone()))
                .collect(),
        }
    }
}

/// Predictor name to normalization rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleSet {
    pub rules: BTreeMap<String, NormalizationRule>,
}

impl RuleSet {
    pub fn from_json_str(text: &str) -> Result<Self, IngestError> {
        serde_json::from_str(text).map_err(|e| IngestError::ParseError {
            line: e.line() as u64,
            message: format!("rules document: {e}"),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        Self::from_json_str(&read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("rules serialize")
    }

    /// Every model predictor has a valid rule and every rule names a model
    /// predictor.
    pub fn check_against(&self, model: &ModelSpec) -> Result<(), IngestError> {
        if let Some(name) = self.rules.keys().find(|k| model.predictor(k).is_none()) {
            return Err(IngestError::UnknownPredictor(name.clone()));
        }
        for p in &model.predictors {
            let rule = self.rules.get(&p.name).ok_or_else(|| IngestError::RuleGap(p.name.clone()))?;
            rule.validate(&p.name, p.kind)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalObservation {
    pub series: String,
    pub wave: i64,
    pub age: Option<f64>,
    pub value: f64,
    pub line: u64,
}

/// One subject as read from disk, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub subject_id: String,
    /// 0 = female, 1 = male.
    pub sex: u8,
    pub outcome: u8,
    /// Every column of the row except `subject_id` (so `sex` and `outcome`
    /// are addressable by rules too).
    pub fields: BTreeMap<String, Option<f64>>,
    pub observations: Vec<LongitudinalObservation>,
    pub line: u64,
}

impl RawRecord {
    pub fn field(&self, column: &str) -> Option<f64> {
        self.fields.get(column).copied().flatten()
    }

    fn any_source(&self, sources: &[EventSource], cutoff: f64) -> Result<Option<u8>, IngestError> {
        let mut observations = Vec::new();
        for s in sources {
            let Some(occurred) = self.field(&s.occurred) else { continue };
            if occurred != 0.0 && occurred != 1.0 {
                return Err(IngestError::OutOfRange(format!(
                    "event column `{}` holds {occurred}, expected 0/1",
                    s.occurred
                )));
            }
            let age = match &s.age {
                None => 0.0,
                Some(col) => match self.field(col) {
                    Some(a) if a < 0.0 => {
                        return Err(IngestError::OutOfRange(format!("negative age {a} in `{col}`")))
                    }
                    Some(a) => a,
                    // an occurrence of unknown timing cannot be placed before the cutoff
                    None if occurred == 1.0 => continue,
                    None => 0.0,
                },
            };
            observations.push(SourceObservation {
                source: s.name.clone().unwrap_or_else(|| s.occurred.clone()),
                occurred: occurred as u8,
                age,
            });
        }
        Ok(compose_any_source(&observations, cutoff))
    }
}

/// Parsed cohort files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawCohort {
    /// Raw columns after `subject_id, sex, outcome`, in file order.
    pub columns: Vec<String>,
    pub records: Vec<RawRecord>,
}

fn read_to_string(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn parse_binary(cell: &str, what: &str, line: u64) -> Result<u8, IngestError> {
    match cell.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(IngestError::ParseError {
            line,
            message: format!("{what} must be 0 or 1, found `{other}`"),
        }),
    }
}

fn parse_real(cell: &str, what: &str, line: u64) -> Result<Option<f64>, IngestError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(IngestError::ParseError { line, message: format!("{what}: `{cell}` is not a number") }),
    }
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IngestError::ParseError { line, message: e.to_string() }
}

impl RawCohort {
    pub fn parse<R: Read, L: Read>(cohort: R, longitudinal: Option<L>) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(cohort);
        let header: Vec<String> = reader.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
        let position = |name: &str| {
            header.iter().position(|h| h == name).ok_or_else(|| IngestError::ParseError {
                line: 1,
                message: format!("cohort file lacks required column `{name}`"),
            })
        };
        let (id_col, sex_col, outcome_col) = (position("subject_id")?, position("sex")?, position("outcome")?);
        let mut seen_columns = BTreeSet::new();
        for h in &header {
            if !seen_columns.insert(h.as_str()) {
                return Err(IngestError::ParseError { line: 1, message: format!("duplicate column `{h}`") });
            }
        }
        let columns: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_col && *i != sex_col && *i != outcome_col)
            .map(|(_, h)| h.clone())
            .collect();

        let mut records = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for row in reader.records() {
            let row = row.map_err(csv_error)?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let id = row[id_col].trim().to_string();
            if id.is_empty() {
                return Err(IngestError::ParseError { line, message: "empty subject_id".into() });
            }
            if index.insert(id.clone(), records.len()).is_some() {
                return Err(IngestError::ParseError { line, message: format!("duplicate subject_id `{id}`") });
            }
            let sex = parse_binary(&row[sex_col], "sex", line)?;
            let outcome = parse_binary(&row[outcome_col], "outcome", line)?;
            let mut fields = BTreeMap::new();
            for (i, h) in header.iter().enumerate() {
                if i != id_col {
                    fields.insert(h.clone(), parse_real(&row[i], h, line)?);
                }
            }
            records.push(RawRecord { subject_id: id, sex, outcome, fields, observations: Vec::new(), line });
        }

        if let Some(long) = longitudinal {
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(long);
            let header: Vec<String> =
                reader.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
            let col = |name: &str| {
                header.iter().position(|h| h == name).ok_or_else(|| IngestError::ParseError {
                    line: 1,
                    message: format!("longitudinal file lacks required column `{name}`"),
                })
            };
            let (c_id, c_pred, c_wave, c_age, c_val) =
                (col("subject_id")?, col("predictor")?, col("wave")?, col("age")?, col("value")?);
            let mut keys = BTreeSet::new();
            for row in reader.records() {
                let row = row.map_err(csv_error)?;
                let line = row.position().map(|p| p.line()).unwrap_or(0);
                let id = row[c_id].trim();
                let &slot = index.get(id).ok_or_else(|| IngestError::ParseError {
                    line,
                    message: format!("subject `{id}` is not in the cohort file"),
                })?;
                let series = row[c_pred].trim().to_string();
                let wave: i64 = row[c_wave].trim().parse().map_err(|_| IngestError::ParseError {
                    line,
                    message: format!("wave `{}` is not an integer", &row[c_wave]),
                })?;
                if !keys.insert((id.to_string(), series.clone(), wave)) {
                    return Err(IngestError::ParseError {
                        line,
                        message: format!("duplicate wave {wave} of `{series}` for subject `{id}`"),
                    });
                }
                let age = parse_real(&row[c_age], "age", line)?;
                let Some(value) = parse_real(&row[c_val], "value", line)? else { continue };
                records[slot].observations.push(LongitudinalObservation { series, wave, age, value, line });
            }
        }
        Ok(Self { columns, records })
    }

    pub fn from_paths(cohort: &Path, longitudinal: Option<&Path>) -> Result<Self, IngestError> {
        let c = read_to_string(cohort)?;
        let l = longitudinal.map(read_to_string).transpose()?;
        Self::parse(c.as_bytes(), l.as_ref().map(|s| s.as_bytes()))
    }

    pub fn to_cohort_csv(&self) -> String {
        let mut out = String::from("subject_id,sex,outcome");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{}", r.subject_id, r.sex, r.outcome));
            for c in &self.columns {
                out.push(',');
                if let Some(v) = r.field(c) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_longitudinal_csv(&self) -> String {
        let mut out = String::from("subject_id,predictor,wave,age,value\n");
        for r in &self.records {
            for o in &r.observations {
                let age = o.age.map(|a| a.to_string()).unwrap_or_default();
                out.push_str(&format!("{},{},{},{},{}\n", r.subject_id, o.series, o.wave, age, o.value));
            }
        }
        out
    }
}

/// Normalized, summarized subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub sex: u8,
    pub outcome: u8,
    pub features: FeatureVector,
    /// Normalized longitudinal series, keyed by predictor.
    pub series: BTreeMap<String, SubjectSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub subjects: Vec<SubjectRecord>,
    pub n: usize,
    pub case_count: usize,
    /// Components estimated on this cohort for each random-intercept predictor.
    pub variance_components: BTreeMap<String, VarianceComponents>,
}

impl Cohort {
    pub fn new(subjects: Vec<SubjectRecord>, variance_components: BTreeMap<String, VarianceComponents>) -> Self {
        let n = subjects.len();
        let case_count = subjects.iter().filter(|s| s.outcome == 1).count();
        Self { subjects, n, case_count, variance_components }
    }

    pub fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(|s| s.outcome).collect()
    }

    pub fn features(&self) -> Vec<FeatureVector> {
        self.subjects.iter().map(|s| s.features.clone()).collect()
    }

    pub fn prevalence(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.case_count as f64 / self.n as f64
        }
    }

    /// Sub-cohort of the given subject positions, in that order.
    pub fn select(&self, positions: &[usize]) -> Cohort {
        Cohort::new(
            positions.iter().map(|&i| self.subjects[i].clone()).collect(),
            self.variance_components.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub subject_id: String,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadedCohort {
    pub cohort: Cohort,
    /// Dropped subjects, ordered by subject id.
    pub exclusions: Vec<Exclusion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadOptions {
    /// Min-max divisor for rules that do not set one.
    pub minmax_mode: MinMaxMode,
    pub variance_method: VarianceMethod,
}

/// Normalizes, summarizes and filters a parsed cohort against `model`.
pub fn load_cohort(
    raw: &RawCohort,
    model: &ModelSpec,
    rules: &RuleSet,
    options: LoadOptions,
) -> Result<LoadedCohort, IngestError> {
    rules.check_against(model)?;
    for p in model.predictors.iter().filter(|p| p.kind == PredictorKind::CrossSectional) {
        for c in rules.rules[&p.name].columns(&p.name) {
            if c != "sex" && c != "outcome" && !raw.columns.contains(&c) {
                return Err(IngestError::MissingColumn(c));
            }
        }
    }

    struct Pending {
        record: SubjectRecord,
        missing: Vec<String>,
    }
    let mut pending = Vec::with_capacity(raw.records.len());
    for r in &raw.records {
        let mut features = FeatureVector::new();
        let mut series = BTreeMap::new();
        let mut missing = Vec::new();
        for p in &model.predictors {
            let rule = &rules.rules[&p.name];
            let ctx = |e: IngestError, line: u64| IngestError::Value {
                line,
                subject: r.subject_id.clone(),
                predictor: p.name.clone(),
                source: Box::new(e),
            };
            match p.kind {
                PredictorKind::CrossSectional => match rule.apply_record(&p.name, r, options.minmax_mode) {
                    Ok(Some(v)) => {
                        if !p.admits(v) {
                            return Err(ctx(
                                IngestError::OutOfRange(format!("{v} is outside the {:?} range", p.range)),
                                r.line,
                            ));
                        }
                        features.insert(&p.name, v);
                    }
                    Ok(None) => missing.push(p.name.clone()),
                    Err(e) => return Err(ctx(e, r.line)),
                },
                PredictorKind::Longitudinal => {
                    let name = rule.scalar_column(&p.name);
                    let mut obs: Vec<&LongitudinalObservation> =
                        r.observations.iter().filter(|o| o.series == name).collect();
                    obs.sort_by_key(|o| o.wave);
                    let mut s = SubjectSeries {
                        subject_id: r.subject_id.clone(),
                        values: Vec::with_capacity(obs.len()),
                        waves: Vec::with_capacity(obs.len()),
                        ages: Vec::with_capacity(obs.len()),
                    };
                    for o in obs {
                        let v = rule.apply_scalar(o.value, options.minmax_mode).map_err(|e| ctx(e, o.line))?;
                        s.values.push(v);
                        s.waves.push(o.wave);
                        s.ages.push(o.age);
                    }
                    if s.is_empty() {
                        missing.push(p.name.clone());
                    }
                    series.insert(p.name.clone(), s);
                }
            }
        }
        pending.push(Pending {
            record: SubjectRecord {
                subject_id: r.subject_id.clone(),
                sex: r.sex,
                outcome: r.outcome,
                features,
                series,
            },
            missing,
        });
    }

    let mut exclusions: Vec<Exclusion> = pending
        .iter()
        .filter(|p| !p.missing.is_empty())
        .map(|p| Exclusion { subject_id: p.record.subject_id.clone(), missing: p.missing.clone() })
        .collect();
    exclusions.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let mut subjects: Vec<SubjectRecord> =
        pending.into_iter().filter(|p| p.missing.is_empty()).map(|p| p.record).collect();

    let mut components = BTreeMap::new();
    for p in model.predictors.iter().filter(|p| p.kind == PredictorKind::Longitudinal) {
        let summary_err = |source| IngestError::Summary { predictor: p.name.clone(), source };
        match p.summarizer {
            Summarizer::WaveMean => {
                for s in &mut subjects {
                    let v = wave_mean(&s.series[&p.name]).map_err(summary_err)?;
                    s.features.insert(&p.name, v);
                }
            }
            Summarizer::RandomIntercept => {
                let all: Vec<SubjectSeries> = subjects.iter().map(|s| s.series[&p.name].clone()).collect();
                let vc = estimate_variance_components(&all, options.variance_method).map_err(summary_err)?;
                for s in &mut subjects {
                    let v = blup(&s.series[&p.name], &vc).map_err(summary_err)?;
                    s.features.insert(&p.name, v);
                }
                components.insert(p.name.clone(), vc);
            }
            Summarizer::Identity => unreachable!("validated model"),
        }
        for s in &subjects {
            let v = s.features.values[&p.name];
            if !p.admits(v) {
                return Err(IngestError::OutOfRange(format!(
                    "subject `{}`: summarized `{}` = {v} is outside the {:?} range",
                    s.subject_id, p.name, p.range
                )));
            }
        }
    }

    Ok(LoadedCohort { cohort: Cohort::new(subjects, components), exclusions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PredictorSpec, ValueRange};

    fn model() -> ModelSpec {
        let p = |name: &str, kind, summarizer, range| PredictorSpec { name: name.into(), kind, summarizer, range };
        ModelSpec {
            intercept: -2.0,
            coefficients: [("sex", 0.5), ("consc", -1.0), ("ace", 1.0), ("delinq", 2.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            predictors: vec![
                p("sex", PredictorKind::CrossSectional, Summarizer::Identity, ValueRange::Binary),
                p("consc", PredictorKind::CrossSectional, Summarizer::Identity, ValueRange::UnitInterval),
                p("ace", PredictorKind::CrossSectional, Summarizer::Identity, ValueRange::UnitInterval),
                p("delinq", PredictorKind::Longitudinal, Summarizer::WaveMean, ValueRange::UnitInterval),
            ],
            provenance: "unit test".into(),
        }
    }

    fn rules() -> RuleSet {
        RuleSet::from_json_str(
            r#"{
              "sex": {"rule": "divide_by_constant", "divisor": 1},
              "consc": {"rule": "min_max_possible", "column": "consc_raw", "min_possible": 10, "max_possible": 50},
              "ace": {"rule": "nonmissing_event_mean", "age_cutoff": 18, "events": [
                  "abuse",
                  {"sources": [{"name": "parent", "occurred": "div_p", "age": "div_p_age"},
                               {"name": "child", "occurred": "div_c", "age": "div_c_age"}]}
              ]},
              "delinq": {"rule": "divide_by_constant", "column": "asb", "divisor": 3}
            }"#,
        )
        .unwrap()
    }

    const COHORT: &str = "subject_id,sex,outcome,consc_raw,abuse,div_p,div_p_age,div_c,div_c_age
s01,1,1,30,1,0,,1,12
s02,0,0,50,0,1,19,,
s03,1,0,,1,,,,
s04,0,1,10,,,,,
";
    const LONG: &str = "subject_id,predictor,wave,age,value
s01,asb,1,11,3
s01,asb,2,12,0
s02,asb,1,11,1.5
s03,asb,1,11,1
s04,asb,2,12,
";

    #[test]
    fn end_to_end_normalization() {
        let raw = RawCohort::parse(COHORT.as_bytes(), Some(LONG.as_bytes())).unwrap();
        let loaded = load_cohort(&raw, &model(), &rules(), LoadOptions::default()).unwrap();
        let c = &loaded.cohort;
        assert_eq!(c.n, 2);
        assert_eq!(c.case_count, 1);
        let s1 = &c.subjects[0].features;
        assert!((s1.values["consc"] - 0.4).abs() < 1e-15);
        assert_eq!(s1.values["ace"], 1.0);
        assert_eq!(s1.values["delinq"], 0.5);
        let s2 = &c.subjects[1].features;
        assert_eq!(s2.values["consc"], 0.8);
        // divorce reported after 18 only counts as a non-event
        assert_eq!(s2.values["ace"], 0.0);
        assert_eq!(
            loaded.exclusions,
            vec![
                Exclusion { subject_id: "s03".into(), missing: vec!["consc".into()] },
                Exclusion { subject_id: "s04".into(), missing: vec!["ace".into(), "delinq".into()] },
            ]
        );
    }

    #[test]
    fn range_mode_via_options() {
        let raw = RawCohort::parse(COHORT.as_bytes(), Some(LONG.as_bytes())).unwrap();
        let opts = LoadOptions { minmax_mode: MinMaxMode::Range, ..Default::default() };
        let loaded = load_cohort(&raw, &model(), &rules(), opts).unwrap();
        assert_eq!(loaded.cohort.subjects[1].features.values["consc"], 1.0);
    }

    #[test]
    fn rule_gaps_and_unknown_predictors() {
        let raw = RawCohort::parse(COHORT.as_bytes(), Some(LONG.as_bytes())).unwrap();
        let mut r = rules();
        r.rules.remove("ace");
        assert_eq!(
            load_cohort(&raw, &model(), &r, LoadOptions::default()).unwrap_err(),
            IngestError::RuleGap("ace".into())
        );
        let mut r = rules();
        r.rules.insert("height".into(), NormalizationRule::DivideByConstant { column: None, divisor: 2.0 });
        assert_eq!(
            load_cohort(&raw, &model(), &r, LoadOptions::default()).unwrap_err(),
            IngestError::UnknownPredictor("height".into())
        );
        let mut r = rules();
        r.rules.insert(
            "delinq".into(),
            NormalizationRule::ItemMeanThenDivide { items: vec![ItemSource::Column("x".into())], divisor: 3.0 },
        );
        assert!(matches!(
            load_cohort(&raw, &model(), &r, LoadOptions::default()),
            Err(IngestError::InvalidRule { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let bad = "subject_id,sex,outcome,consc_raw\na,1,0,12\nb,2,0,13\n";
        match RawCohort::parse(bad.as_bytes(), None::<&[u8]>) {
            Err(IngestError::ParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let dup = "subject_id,sex,outcome\na,1,0\na,0,0\n";
        assert!(matches!(
            RawCohort::parse(dup.as_bytes(), None::<&[u8]>),
            Err(IngestError::ParseError { line: 3, .. })
        ));
        let long = "subject_id,predictor,wave,age,value\na,x,1,,0.5\na,x,1,,0.4\n";
        let ok = "subject_id,sex,outcome\na,1,0\n";
        assert!(matches!(
            RawCohort::parse(ok.as_bytes(), Some(long.as_bytes())),
            Err(IngestError::ParseError { line: 3, .. })
        ));
    }

    #[test]
    fn out_of_range_raw_value_is_an_error() {
        let bad = COHORT.replace("s01,1,1,30", "s01,1,1,70");
        let raw = RawCohort::parse(bad.as_bytes(), Some(LONG.as_bytes())).unwrap();
        assert!(matches!(
            load_cohort(&raw, &model(), &rules(), LoadOptions::default()),
            Err(IngestError::Value { line: 2, .. })
        ));
    }

    #[test]
    fn max_of_items() {
        let rule = NormalizationRule::ItemMeanThenDivide {
            items: vec![ItemSource::MaxOf(vec!["a".into(), "b".into()]), ItemSource::Column("c".into())],
            divisor: 3.0,
        };
        let record = RawRecord {
            subject_id: "x".into(),
            sex: 0,
            outcome: 0,
            fields: [("a", Some(1.0)), ("b", Some(3.0)), ("c", None)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            observations: vec![],
            line: 2,
        };
        assert_eq!(rule.apply_record("d", &record, MinMaxMode::Literal).unwrap(), Some(1.0));
    }

    #[test]
    fn csv_round_trip() {
        let raw = RawCohort::parse(COHORT.as_bytes(), Some(LONG.as_bytes())).unwrap();
        let again = RawCohort::parse(raw.to_cohort_csv().as_bytes(), Some(raw.to_longitudinal_csv().as_bytes()))
            .unwrap();
        assert_eq!(raw.records.len(), again.records.len());
        for (a, b) in raw.records.iter().zip(&again.records) {
            assert_eq!(a.fields, b.fields);
            assert_eq!(a.observations.len(), b.observations.len());
        }
    }
}

//! Portable logistic risk model: linear predictor, inverse-logit link,
//! intercept updates and the dichotomized count score.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the binary predictor that carries biological sex (male = 1).
pub const SEX: &str = "sex";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("missing feature `{0}`")]
    MissingFeature(String),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("cannot parse model document: {0}")]
    Parse(String),
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    CrossSectional,
    Longitudinal,
}

/// How a predictor's raw values are reduced to the scalar the model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summarizer {
    Identity,
    WaveMean,
    RandomIntercept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    UnitInterval,
    Binary,
}

impl ValueRange {
    pub fn contains(self, value: f64) -> bool {
        match self {
            ValueRange::UnitInterval => (0.0..=1.0).contains(&value),
            ValueRange::Binary => value == 0.0 || value == 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    pub name: String,
    pub kind: PredictorKind,
    pub summarizer: Summarizer,
    pub range: ValueRange,
}

impl PredictorSpec {
    /// Continuous predictors are the ones dichotomized by the count score
    /// and split at the median in subgroup tables.
    pub fn is_continuous(&self) -> bool {
        self.range != ValueRange::Binary
    }

    /// Whether a summarized value is admissible. Random-intercept values are
    /// centered deviations and carry no range contract.
    pub fn admits(&self, value: f64) -> bool {
        value.is_finite()
            && (self.summarizer == Summarizer::RandomIntercept || self.range.contains(value))
    }
}

/// A fitted logistic risk model. Only the intercept is ever changed by this
/// crate; coefficients are treated as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    /// Evaluation order of the linear predictor.
    pub predictors: Vec<PredictorSpec>,
    #[serde(default)]
    pub provenance: String,
}

/// Post-summarization predictor values for one subject.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: BTreeMap<String, f64>,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.values.insert(name.to_string(), value);
        self
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Result<f64, ModelError> {
        self.values
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingFeature(name.to_string()))
    }
}

impl ModelSpec {
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let model: ModelSpec =
            serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn from_path(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.intercept.is_finite() {
            return Err(ModelError::Invalid("intercept is not finite".into()));
        }
        let mut seen = BTreeSet::new();
        for p in &self.predictors {
            if !seen.insert(p.name.as_str()) {
                return Err(ModelError::Invalid(format!("duplicate predictor `{}`", p.name)));
            }
            let consistent = match p.kind {
                PredictorKind::CrossSectional => p.summarizer == Summarizer::Identity,
                PredictorKind::Longitudinal => p.summarizer != Summarizer::Identity,
            };
            if !consistent {
                return Err(ModelError::Invalid(format!(
                    "predictor `{}`: summarizer {:?} does not fit kind {:?}",
                    p.name, p.summarizer, p.kind
                )));
            }
            match self.coefficients.get(&p.name) {
                None => {
                    return Err(ModelError::Invalid(format!(
                        "predictor `{}` has no coefficient",
                        p.name
                    )))
                }
                Some(b) if !b.is_finite() => {
                    return Err(ModelError::Invalid(format!(
                        "coefficient `{}` is not finite",
                        p.name
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.coefficients.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(ModelError::Invalid(format!(
                "coefficient `{extra}` has no predictor entry"
            )));
        }
        Ok(())
    }

    pub fn predictor(&self, name: &str) -> Option<&PredictorSpec> {
        self.predictors.iter().find(|p| p.name == name)
    }

    pub fn coefficient(&self, name: &str) -> f64 {
        self.coefficients.get(name).copied().unwrap_or(0.0)
    }

    /// Σ β_j x_j in predictor order, without the intercept.
    ///
    /// This is the part of the linear predictor that ranks subjects; it does
    /// not depend on the intercept, so it is bitwise stable under
    /// recalibration.
    pub fn risk_score(&self, x: &FeatureVector) -> Result<f64, ModelError> {
        let mut acc = 0.0;
        for p in &self.predictors {
            acc += self.coefficient(&p.name) * x.get(&p.name)?;
        }
        Ok(acc)
    }

    /// β₀ + Σ β_j x_j.
    pub fn linear_predictor(&self, x: &FeatureVector) -> Result<f64, ModelError> {
        Ok(self.intercept + self.risk_score(x)?)
    }

    pub fn probability(&self, x: &FeatureVector) -> Result<f64, ModelError> {
        predict_probability(self.linear_predictor(x)?)
    }

    /// Returns a copy with `delta` added to the intercept.
    pub fn update_intercept(&self, delta: f64) -> Result<ModelSpec, ModelError> {
        if !delta.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        let mut out = self.clone();
        out.intercept += delta;
        Ok(out)
    }

    pub fn continuous_predictors(&self) -> impl Iterator<Item = &PredictorSpec> {
        self.predictors.iter().filter(|p| p.is_continuous())
    }
}

/// Inverse logit. Each branch only exponentiates a non-positive number.
pub fn sigmoid(lp: f64) -> f64 {
    if lp >= 0.0 {
        1.0 / (1.0 + (-lp).exp())
    } else {
        let z = lp.exp();
        z / (1.0 + z)
    }
}

pub fn predict_probability(lp: f64) -> Result<f64, ModelError> {
    if !lp.is_finite() {
        return Err(ModelError::NonFiniteInput);
    }
    Ok(sigmoid(lp))
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Which side of the cutoff counts as the risk pole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RiskDirection {
    #[default]
    Higher,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cutoff {
    pub value: f64,
    #[serde(default)]
    pub direction: RiskDirection,
}

/// Per-predictor dichotomization thresholds for the count score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedianCutoffs {
    pub cutoffs: BTreeMap<String, Cutoff>,
}

impl MedianCutoffs {
    /// Cutoffs for every continuous predictor of `model`, taken as the median
    /// of each column; direction follows the coefficient sign.
    pub fn from_features(model: &ModelSpec, features: &[FeatureVector]) -> Result<Self, ModelError> {
        let mut cutoffs = BTreeMap::new();
        for p in model.continuous_predictors() {
            let column = features
                .iter()
                .map(|f| f.get(&p.name))
                .collect::<Result<Vec<_>, _>>()?;
            let value = crate::stats::median(&column).ok_or(ModelError::NonFiniteInput)?;
            let direction = if model.coefficient(&p.name) < 0.0 {
                RiskDirection::Lower
            } else {
                RiskDirection::Higher
            };
            cutoffs.insert(p.name.clone(), Cutoff { value, direction });
        }
        Ok(Self { cutoffs })
    }

    pub fn from_path(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| ModelError::Parse(e.to_string()))
    }
}

/// Number of continuous predictors on their risk side of the cutoff
/// (strictly), plus one for male sex.
pub fn count_score(
    x: &FeatureVector,
    cutoffs: &MedianCutoffs,
    sex_value: u8,
) -> Result<u32, ModelError> {
    let mut score = u32::from(sex_value == 1);
    for (name, cut) in &cutoffs.cutoffs {
        let v = x.get(name)?;
        let at_risk = match cut.direction {
            RiskDirection::Higher => v > cut.value,
            RiskDirection::Lower => v < cut.value,
        };
        score += u32::from(at_risk);
    }
    Ok(score)
}

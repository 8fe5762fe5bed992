//! Scalar normalization rules that bring raw questionnaire scores onto the
//! [0, 1] scale the model expects.

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Divisor used by the min-max rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MinMaxMode {
    /// `(score - min) / max`
    #[default]
    Literal,
    /// `(score - min) / (max - min)`
    Range,
}

impl std::str::FromStr for MinMaxMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(MinMaxMode::Literal),
            "range" => Ok(MinMaxMode::Range),
            other => Err(format!("unknown min-max mode `{other}` (expected literal or range)")),
        }
    }
}

fn unit(value: f64, what: &str) -> Result<f64, IngestError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(IngestError::OutOfRange(format!("{what} normalized to {value}, outside [0, 1]")))
    }
}

/// Likert category divided by the top category.
pub fn normalize_likert(value: i64, max_category: i64) -> Result<f64, IngestError> {
    if max_category < 1 || value < 1 || value > max_category {
        return Err(IngestError::OutOfRange(format!(
            "Likert value {value} outside 1..={max_category}"
        )));
    }
    Ok(value as f64 / max_category as f64)
}

pub fn divide_by_constant(value: f64, divisor: f64) -> Result<f64, IngestError> {
    if !divisor.is_finite() || divisor <= 0.0 {
        return Err(IngestError::NonPositiveDivisor(divisor));
    }
    if !value.is_finite() {
        return Err(IngestError::OutOfRange(format!("non-finite value {value}")));
    }
    unit(value / divisor, "value")
}

pub fn normalize_min_max(
    score: f64,
    min_possible: f64,
    max_possible: f64,
    mode: MinMaxMode,
) -> Result<f64, IngestError> {
    if max_possible.is_nan() || max_possible <= 0.0 {
        return Err(IngestError::NonPositiveDivisor(max_possible));
    }
    if !(min_possible <= score && score <= max_possible) {
        return Err(IngestError::OutOfRange(format!(
            "score {score} outside [{min_possible}, {max_possible}]"
        )));
    }
    let divisor = match mode {
        MinMaxMode::Literal => max_possible,
        MinMaxMode::Range => max_possible - min_possible,
    };
    if divisor.is_nan() || divisor <= 0.0 {
        return Err(IngestError::NonPositiveDivisor(divisor));
    }
    unit((score - min_possible) / divisor, "score")
}

/// Mean of the non-missing items, divided by `divisor`.
pub fn item_mean_then_divide(items: &[Option<f64>], divisor: f64) -> Result<f64, IngestError> {
    if divisor.is_nan() || divisor <= 0.0 {
        return Err(IngestError::NonPositiveDivisor(divisor));
    }
    let present: Vec<f64> = items.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(IngestError::AllMissing);
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    unit(mean / divisor, "item mean")
}

/// Delinquency checklist: responses 0..=3, mean of non-missing, over 3.
pub fn delinquency_score(responses: &[Option<i64>]) -> Result<f64, IngestError> {
    if let Some(bad) = responses.iter().flatten().find(|r| !(0..=3).contains(*r)) {
        return Err(IngestError::OutOfRange(format!("delinquency response {bad} outside 0..=3")));
    }
    let items: Vec<Option<f64>> = responses.iter().map(|r| r.map(|v| v as f64)).collect();
    item_mean_then_divide(&items, 3.0)
}

/// Fraction of non-missing events that occurred.
pub fn ace_score(events: &[Option<u8>]) -> Result<f64, IngestError> {
    if let Some(bad) = events.iter().flatten().find(|e| **e > 1) {
        return Err(IngestError::OutOfRange(format!("event indicator {bad} is not 0/1")));
    }
    let present: Vec<u8> = events.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(IngestError::AllMissing);
    }
    Ok(present.iter().map(|&e| f64::from(e)).sum::<f64>() / present.len() as f64)
}

/// One report of whether an event happened, and at what age.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceObservation {
    pub source: String,
    pub occurred: u8,
    pub age: f64,
}

/// 1 when any source reports the event before `cutoff`, 0 otherwise;
/// `None` when there is no evidence at all.
pub fn compose_any_source(observations: &[SourceObservation], cutoff: f64) -> Option<u8> {
    if observations.is_empty() {
        return None;
    }
    Some(u8::from(observations.iter().any(|o| o.occurred == 1 && o.age < cutoff)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn likert() {
        assert_eq!(normalize_likert(5, 5).unwrap(), 1.0);
        assert_eq!(normalize_likert(1, 5).unwrap(), 0.2);
        assert!((normalize_likert(2, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(normalize_likert(0, 5).is_err());
        assert!(normalize_likert(6, 5).is_err());
    }

    #[test]
    fn min_max_literal_and_range() {
        assert_eq!(normalize_min_max(10.0, 10.0, 50.0, MinMaxMode::Literal).unwrap(), 0.0);
        assert!((normalize_min_max(30.0, 10.0, 50.0, MinMaxMode::Literal).unwrap() - 0.4).abs() < 1e-15);
        assert!((normalize_min_max(50.0, 10.0, 50.0, MinMaxMode::Literal).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(normalize_min_max(50.0, 10.0, 50.0, MinMaxMode::Range).unwrap(), 1.0);
        assert!(matches!(
            normalize_min_max(5.0, 10.0, 50.0, MinMaxMode::Literal),
            Err(IngestError::OutOfRange(_))
        ));
        assert!(matches!(
            normalize_min_max(0.0, 0.0, 0.0, MinMaxMode::Literal),
            Err(IngestError::NonPositiveDivisor(_))
        ));
    }

    #[test]
    fn delinquency() {
        assert_eq!(delinquency_score(&[Some(3); 4]).unwrap(), 1.0);
        assert_eq!(delinquency_score(&[Some(0); 4]).unwrap(), 0.0);
        let v = delinquency_score(&[Some(3), None, Some(0), Some(3)]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(delinquency_score(&[None, None]), Err(IngestError::AllMissing));
        assert!(delinquency_score(&[Some(4)]).is_err());
    }

    #[test]
    fn ace() {
        assert_eq!(ace_score(&[Some(1); 5]).unwrap(), 1.0);
        assert_eq!(ace_score(&[Some(0); 5]).unwrap(), 0.0);
        assert_eq!(ace_score(&[Some(1), Some(0), None, Some(1), Some(0)]).unwrap(), 0.5);
        assert_eq!(ace_score(&[None]), Err(IngestError::AllMissing));
    }

    #[test]
    fn any_source() {
        let obs = |s: &str, o: u8, a: f64| SourceObservation { source: s.into(), occurred: o, age: a };
        assert_eq!(compose_any_source(&[obs("parent", 1, 12.0), obs("child", 0, 12.0)], 18.0), Some(1));
        assert_eq!(compose_any_source(&[obs("parent", 1, 19.0)], 18.0), Some(0));
        assert_eq!(compose_any_source(&[], 18.0), None);
    }
}

//! Expected/observed tables, decile calibration curves and intercept
//! recalibration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glm::{fit_calibration_intercept, fit_calibration_line, GlmError};
use crate::ingest::Cohort;
use crate::model::{ModelError, ModelSpec};
use crate::stats::{balanced_group_sizes, median, round_dp, round_sig, stable_argsort};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("no observed events in group `{0}`; E/O is undefined")]
    ZeroObserved(String),
    #[error("{n} subjects cannot fill {k} groups")]
    TooFewSubjects { n: usize, k: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Expected and observed event counts for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EoEntry {
    pub group: String,
    pub n: usize,
    /// Sum of predicted probabilities.
    pub expected: f64,
    pub observed: u64,
    /// `expected / observed`; absent when nothing was observed.
    pub ratio: Option<f64>,
}

impl EoEntry {
    pub fn from_totals(group: impl Into<String>, n: usize, expected: f64, observed: u64) -> Self {
        let ratio = (observed > 0).then(|| expected / observed as f64);
        Self { group: group.into(), n, expected, observed, ratio }
    }

    pub fn labelled(mut self, group: impl Into<String>) -> Self {
        self.group = group.into();
        self
    }

    pub fn ratio_checked(&self) -> Result<f64, CalibrationError> {
        self.ratio.ok_or_else(|| CalibrationError::ZeroObserved(self.group.clone()))
    }

    /// Entry for the disjoint union of two groups.
    pub fn merge(&self, other: &EoEntry, group: impl Into<String>) -> EoEntry {
        EoEntry::from_totals(group, self.n + other.n, self.expected + other.expected, self.observed + other.observed)
    }

    /// Values as printed in reports: expected to 6 significant digits, the
    /// ratio to 3 decimals. The ratio is taken from the printed expected
    /// value so a reader recomputing it from the table gets the same digits.
    pub fn rounded(&self) -> EoEntry {
        let expected = round_sig(self.expected, 6);
        EoEntry {
            group: self.group.clone(),
            n: self.n,
            expected,
            observed: self.observed,
            ratio: (self.observed > 0).then(|| round_dp(expected / self.observed as f64, 3)),
        }
    }
}

fn check(probs: &[f64], labels: &[u8]) -> Result<(), CalibrationError> {
    if probs.len() != labels.len() {
        return Err(CalibrationError::InvalidInput(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CalibrationError::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(CalibrationError::InvalidInput(format!("label {l} is not binary")));
    }
    Ok(())
}

pub fn expected_observed(probs: &[f64], labels: &[u8]) -> Result<EoEntry, CalibrationError> {
    check(probs, labels)?;
    Ok(eo_unchecked("Overall", probs, labels, (0..probs.len()).collect::<Vec<_>>().as_slice()))
}

fn eo_unchecked(group: &str, probs: &[f64], labels: &[u8], members: &[usize]) -> EoEntry {
    let expected = members.iter().map(|&i| probs[i]).sum();
    let observed = members.iter().map(|&i| u64::from(labels[i])).sum();
    EoEntry::from_totals(group, members.len(), expected, observed)
}

/// Group index (0-based, ascending risk) of each subject when sorted by
/// predicted probability into `k` contiguous, near-equal groups.
pub fn quantile_assignment(probs: &[f64], k: usize) -> Result<Vec<usize>, CalibrationError> {
    if k == 0 || probs.len() < k {
        return Err(CalibrationError::TooFewSubjects { n: probs.len(), k });
    }
    let order = stable_argsort(probs);
    let mut group = vec![0usize; probs.len()];
    let mut start = 0;
    for (g, size) in balanced_group_sizes(probs.len(), k).into_iter().enumerate() {
        for &i in &order[start..start + size] {
            group[i] = g;
        }
        start += size;
    }
    Ok(group)
}

pub fn risk_quantile_groups(probs: &[f64], labels: &[u8], k: usize) -> Result<Vec<EoEntry>, CalibrationError> {
    check(probs, labels)?;
    let group = quantile_assignment(probs, k)?;
    Ok((0..k)
        .map(|g| {
            let members: Vec<usize> = (0..probs.len()).filter(|&i| group[i] == g).collect();
            eo_unchecked(&format!("Group {}", g + 1), probs, labels, &members)
        })
        .collect())
}

/// Split at the median of `values`; ties go below.
pub fn median_split_eo(values: &[f64], probs: &[f64], labels: &[u8]) -> Result<(EoEntry, EoEntry), CalibrationError> {
    check(probs, labels)?;
    if values.len() != probs.len() {
        return Err(CalibrationError::InvalidInput("feature and probability lengths differ".into()));
    }
    let cut = median(values).ok_or_else(|| CalibrationError::InvalidInput("empty or NaN feature".into()))?;
    let (below, above): (Vec<usize>, Vec<usize>) = (0..values.len()).partition(|&i| values[i] <= cut);
    Ok((
        eo_unchecked("Below median", probs, labels, &below),
        eo_unchecked("Above median", probs, labels, &above),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    pub mean_predicted: f64,
    pub event_rate: f64,
    pub count: usize,
}

/// Equal-width histograms of predicted probability by outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityHistogram {
    /// Bin edges, `bins + 1` values from 0 to 1.
    pub edges: Vec<f64>,
    pub cases: Vec<usize>,
    pub controls: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurveData {
    pub bins: Vec<CurveBin>,
    pub histogram: ProbabilityHistogram,
}

pub const HISTOGRAM_BINS: usize = 20;

impl CalibrationCurveData {
    /// Bins pooled where they share the same mean prediction (tied
    /// probabilities split across bin boundaries).
    pub fn effective_points(&self) -> Vec<CurveBin> {
        let mut out: Vec<CurveBin> = Vec::new();
        for b in &self.bins {
            match out.last_mut() {
                Some(last) if last.mean_predicted == b.mean_predicted => {
                    let total = last.count + b.count;
                    last.event_rate =
                        (last.event_rate * last.count as f64 + b.event_rate * b.count as f64) / total as f64;
                    last.count = total;
                }
                _ => out.push(b.clone()),
            }
        }
        out
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("bin,mean_pred,event_rate,count\n");
        for (i, b) in self.bins.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                round_sig(b.mean_predicted, 6),
                round_sig(b.event_rate, 6),
                b.count
            ));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let h = &self.histogram;
        let mut out = String::from("outcome,bin_low,bin_high,count\n");
        for (label, counts) in [("case", &h.cases), ("control", &h.controls)] {
            for (i, c) in counts.iter().enumerate() {
                out.push_str(&format!("{label},{},{},{c}\n", round_sig(h.edges[i], 6), round_sig(h.edges[i + 1], 6)));
            }
        }
        out
    }
}

pub fn calibration_curve(probs: &[f64], labels: &[u8], n_bins: usize) -> Result<CalibrationCurveData, CalibrationError> {
    check(probs, labels)?;
    let group = quantile_assignment(probs, n_bins)?;
    let mut sum_p = vec![0.0; n_bins];
    let mut events = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    // accumulate in ascending-probability order so sums are order-stable
    for i in stable_argsort(probs) {
        let g = group[i];
        sum_p[g] += probs[i];
        events[g] += usize::from(labels[i]);
        counts[g] += 1;
    }
    let bins = (0..n_bins)
        .map(|g| CurveBin {
            mean_predicted: sum_p[g] / counts[g] as f64,
            event_rate: events[g] as f64 / counts[g] as f64,
            count: counts[g],
        })
        .collect();

    let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| i as f64 / HISTOGRAM_BINS as f64).collect();
    let mut cases = vec![0usize; HISTOGRAM_BINS];
    let mut controls = vec![0usize; HISTOGRAM_BINS];
    for (&p, &l) in probs.iter().zip(labels) {
        let slot = ((p * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
        if l == 1 {
            cases[slot] += 1;
        } else {
            controls[slot] += 1;
        }
    }
    Ok(CalibrationCurveData { bins, histogram: ProbabilityHistogram { edges, cases, controls } })
}

/// Estimated calibration parameters with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    /// Intercept with the linear predictor as offset (slope fixed at 1).
    pub intercept: f64,
    /// Slope from the two-parameter calibration line, when estimated.
    pub slope: Option<f64>,
    /// Intercept of the two-parameter calibration line.
    pub line_intercept: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
}

impl CalibrationFit {
    pub fn estimate(labels: &[u8], lp: &[f64], with_line: bool) -> Result<Self, CalibrationError> {
        let a = fit_calibration_intercept(labels, lp)?;
        let line = if with_line { Some(fit_calibration_line(labels, lp)?) } else { None };
        Ok(Self {
            intercept: a.intercept,
            slope: line.as_ref().map(|l| l.slope),
            line_intercept: line.as_ref().map(|l| l.intercept),
            converged: a.fit.converged,
            iterations: a.fit.iterations,
            max_abs_score: a.fit.max_abs_score,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    pub model: ModelSpec,
    pub fit: CalibrationFit,
    pub before: EoEntry,
    pub after: EoEntry,
}

/// Linear predictors and probabilities of every subject.
pub fn score_cohort(model: &ModelSpec, cohort: &Cohort) -> Result<(Vec<f64>, Vec<f64>), CalibrationError> {
    let mut lps = Vec::with_capacity(cohort.n);
    let mut probs = Vec::with_capacity(cohort.n);
    for s in &cohort.subjects {
        let lp = model.linear_predictor(&s.features)?;
        lps.push(lp);
        probs.push(crate::model::predict_probability(lp)?);
    }
    Ok((lps, probs))
}

/// Shifts the model intercept by the estimated calibration intercept.
pub fn recalibrate(model: &ModelSpec, cohort: &Cohort) -> Result<Recalibration, CalibrationError> {
    let labels = cohort.labels();
    let (lps, probs) = score_cohort(model, cohort)?;
    let before = expected_observed(&probs, &labels)?;
    let fit = CalibrationFit::estimate(&labels, &lps, false)?;
    let updated = model.update_intercept(fit.intercept)?;
    let (_, after_probs) = score_cohort(&updated, cohort)?;
    let after = expected_observed(&after_probs, &labels)?;
    Ok(Recalibration { model: updated, fit, before, after })
}

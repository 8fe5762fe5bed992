//! Repeated stratified 50/50 holdout check of intercept recalibration.
//!
//! Each repetition estimates the calibration intercept on a training half
//! and scores the shifted model on the held-out half. Repetition `r` draws
//! from ChaCha8 stream `r` of the master seed, so repetitions can run in
//! any order or in parallel and still give identical results.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{expected_observed, score_cohort, CalibrationFit};
use crate::discrimination::auc;
use crate::ingest::Cohort;
use crate::model::ModelSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobustnessError {
    #[error("stratified splitting needs at least 2 cases and 2 controls (have {cases} and {controls})")]
    TooFewPerStratum { cases: usize, controls: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("every repetition failed; first error: {0}")]
    AllRepetitionsFailed(String),
}

/// Random generator for one repetition.
pub fn repetition_rng(seed: u64, repetition: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repetition as u64);
    rng
}

/// Shuffles cases and controls independently and sends
/// `round(fraction * count)` of each to the training half. Returned
/// positions are sorted.
pub fn stratified_split<R: Rng + ?Sized>(
    labels: &[u8],
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>), RobustnessError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(RobustnessError::InvalidArgument(format!("fraction {fraction} outside (0, 1)")));
    }
    let mut cases: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut controls: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if cases.len() < 2 || controls.len() < 2 {
        return Err(RobustnessError::TooFewPerStratum { cases: cases.len(), controls: controls.len() });
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for stratum in [&mut cases, &mut controls] {
        stratum.shuffle(rng);
        let k = ((fraction * stratum.len() as f64).round() as usize).clamp(1, stratum.len() - 1);
        train.extend_from_slice(&stratum[..k]);
        test.extend_from_slice(&stratum[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub repetition: usize,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Calibration intercept estimated on the training half.
    pub calibration_intercept: Option<f64>,
    pub test_auc: Option<f64>,
    /// E/O on the test half after the training-half intercept shift.
    pub test_eo: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub reps: usize,
    pub seed: u64,
    pub per_rep: Vec<SplitResult>,
    /// Means over the repetitions that completed.
    pub mean_auc: f64,
    pub mean_eo: f64,
    pub mean_intercept: f64,
    pub failed_reps: usize,
}

struct RepOutcome {
    intercept: f64,
    auc: f64,
    eo: f64,
}

fn run_split(model: &ModelSpec, cohort: &Cohort, train: &[usize], test: &[usize]) -> Result<RepOutcome, crate::Error> {
    let train_cohort = cohort.select(train);
    let test_cohort = cohort.select(test);
    let (train_lp, _) = score_cohort(model, &train_cohort)?;
    let fit = CalibrationFit::estimate(&train_cohort.labels(), &train_lp, false)?;
    let adjusted = model.update_intercept(fit.intercept)?;
    let test_labels = test_cohort.labels();
    let (_, test_probs) = score_cohort(&adjusted, &test_cohort)?;
    let eo = expected_observed(&test_probs, &test_labels)?.labelled("test").ratio_checked()?;
    let scores = test_cohort
        .subjects
        .iter()
        .map(|s| adjusted.risk_score(&s.features))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RepOutcome { intercept: fit.intercept, auc: auc(&scores, &test_labels)?, eo })
}

/// Runs one repetition with the generator for `repetition`.
pub fn holdout_repetition(cohort: &Cohort, model: &ModelSpec, seed: u64, repetition: usize) -> Result<SplitResult, RobustnessError> {
    let labels = cohort.labels();
    let mut rng = repetition_rng(seed, repetition);
    let (train, test) = stratified_split(&labels, 0.5, &mut rng)?;
    let ids = |pos: &[usize]| pos.iter().map(|&i| cohort.subjects[i].subject_id.clone()).collect();
    let mut result = SplitResult {
        repetition,
        seed,
        train_ids: ids(&train),
        test_ids: ids(&test),
        calibration_intercept: None,
        test_auc: None,
        test_eo: None,
        error: None,
    };
    match run_split(model, cohort, &train, &test) {
        Ok(o) => {
            result.calibration_intercept = Some(o.intercept);
            result.test_auc = Some(o.auc);
            result.test_eo = Some(o.eo);
        }
        Err(e) => result.error = Some(e.to_string()),
    }
    Ok(result)
}

pub fn repeated_holdout(cohort: &Cohort, model: &ModelSpec, reps: usize, seed: u64) -> Result<RobustnessSummary, RobustnessError> {
    if reps == 0 {
        return Err(RobustnessError::InvalidArgument("reps must be at least 1".into()));
    }
    let controls = cohort.n - cohort.case_count;
    if cohort.case_count < 2 || controls < 2 {
        return Err(RobustnessError::TooFewPerStratum { cases: cohort.case_count, controls });
    }
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|r| holdout_repetition(cohort, model, seed, r))
        .collect::<Result<Vec<_>, _>>()?;

    let done: Vec<&SplitResult> = per_rep.iter().filter(|r| r.error.is_none()).collect();
    if done.is_empty() {
        let first = per_rep[0].error.clone().unwrap_or_default();
        return Err(RobustnessError::AllRepetitionsFailed(first));
    }
    let mean = |f: fn(&SplitResult) -> Option<f64>| done.iter().filter_map(|r| f(r)).sum::<f64>() / done.len() as f64;
    Ok(RobustnessSummary {
        reps,
        seed,
        mean_auc: mean(|r| r.test_auc),
        mean_eo: mean(|r| r.test_eo),
        mean_intercept: mean(|r| r.calibration_intercept),
        failed_reps: per_rep.len() - done.len(),
        per_rep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let mut labels = vec![1u8; 53];
        labels.extend(vec![0u8; 371]);
        let (train, test) = stratified_split(&labels, 0.5, &mut repetition_rng(1, 0)).unwrap();
        let cases = |pos: &[usize]| pos.iter().filter(|&&i| labels[i] == 1).count();
        let mut halves = [cases(&train), cases(&test)];
        halves.sort();
        assert_eq!(halves, [26, 27]);
        let mut ctl = [train.len() - cases(&train), test.len() - cases(&test)];
        ctl.sort();
        assert_eq!(ctl, [185, 186]);
        assert_eq!(train.len() + test.len(), 424);
    }

    #[test]
    fn small_exact_split() {
        let labels = [1, 1, 1, 1, 0, 0, 0, 0];
        let (train, test) = stratified_split(&labels, 0.5, &mut repetition_rng(3, 2)).unwrap();
        assert_eq!(train.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(train.len(), 4);
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let labels: Vec<u8> = (0..200).map(|i| u8::from(i % 5 == 0)).collect();
        let a = stratified_split(&labels, 0.5, &mut repetition_rng(9, 4)).unwrap();
        let b = stratified_split(&labels, 0.5, &mut repetition_rng(9, 4)).unwrap();
        let c = stratified_split(&labels, 0.5, &mut repetition_rng(10, 4)).unwrap();
        let d = stratified_split(&labels, 0.5, &mut repetition_rng(9, 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn too_few_per_stratum() {
        assert!(matches!(
            stratified_split(&[1, 0, 0, 0], 0.5, &mut repetition_rng(0, 0)),
            Err(RobustnessError::TooFewPerStratum { cases: 1, controls: 3 })
        ));
    }
}

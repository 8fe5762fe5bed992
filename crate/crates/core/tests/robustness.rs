use std::collections::BTreeSet;

use riskval_core::calibration::{expected_observed, score_cohort, CalibrationFit};
use riskval_core::discrimination::auc;
use riskval_core::robustness::{holdout_repetition, repeated_holdout, repetition_rng, stratified_split};
use riskval_core::simulate::{generate_cohort, preset};

fn cohort() -> (riskval_core::model::ModelSpec, riskval_core::ingest::Cohort) {
    let mut cfg = preset("mls_like", 4).unwrap();
    cfg.n = 600;
    let sim = generate_cohort(&cfg).unwrap();
    (cfg.model, sim.cohort)
}

#[test]
fn single_repetition_equals_manual_steps() {
    let (model, cohort) = cohort();
    let summary = repeated_holdout(&cohort, &model, 1, 99).unwrap();
    let labels = cohort.labels();
    let (train, test) = stratified_split(&labels, 0.5, &mut repetition_rng(99, 0)).unwrap();
    let train_c = cohort.select(&train);
    let test_c = cohort.select(&test);
    let (lp, _) = score_cohort(&model, &train_c).unwrap();
    let a = CalibrationFit::estimate(&train_c.labels(), &lp, false).unwrap().intercept;
    let adjusted = model.update_intercept(a).unwrap();
    let (_, probs) = score_cohort(&adjusted, &test_c).unwrap();
    let eo = expected_observed(&probs, &test_c.labels()).unwrap().ratio.unwrap();
    let scores: Vec<f64> = test_c.subjects.iter().map(|s| model.risk_score(&s.features).unwrap()).collect();
    let rep = &summary.per_rep[0];
    assert_eq!(rep.calibration_intercept, Some(a));
    assert_eq!(rep.test_eo, Some(eo));
    assert_eq!(rep.test_auc, Some(auc(&scores, &test_c.labels()).unwrap()));
    assert_eq!(summary.mean_eo, eo);
}

#[test]
fn halves_are_disjoint_and_stratified() {
    let (model, cohort) = cohort();
    for r in 0..5 {
        let rep = holdout_repetition(&cohort, &model, 7, r).unwrap();
        let train: BTreeSet<&String> = rep.train_ids.iter().collect();
        let test: BTreeSet<&String> = rep.test_ids.iter().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), cohort.n);
        let cases_in = |ids: &BTreeSet<&String>| {
            cohort.subjects.iter().filter(|s| s.outcome == 1 && ids.contains(&s.subject_id)).count()
        };
        assert!(cases_in(&train).abs_diff(cases_in(&test)) <= 1);
    }
}

#[test]
fn summary_means_over_repetitions() {
    let (model, cohort) = cohort();
    let summary = repeated_holdout(&cohort, &model, 6, 3).unwrap();
    let m = summary.per_rep.iter().map(|r| r.test_auc.unwrap()).sum::<f64>() / 6.0;
    assert!((summary.mean_auc - m).abs() < 1e-15);
    let reps: Vec<usize> = summary.per_rep.iter().map(|r| r.repetition).collect();
    assert_eq!(reps, (0..6).collect::<Vec<_>>());
}

#[test]
fn rejects_zero_repetitions() {
    let (model, cohort) = cohort();
    assert!(repeated_holdout(&cohort, &model, 0, 1).is_err());
}

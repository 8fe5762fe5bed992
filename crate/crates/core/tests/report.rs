use riskval_core::ingest::LoadedCohort;
use riskval_core::report::{cohort_auc, recalibration_report, validate, ValidateOptions, ValidationReport};
use riskval_core::simulate::{generate_cohort, preset};

fn loaded(seed: u64) -> (riskval_core::model::ModelSpec, LoadedCohort) {
    let mut cfg = preset("mls_like", seed).unwrap();
    cfg.n = 424;
    let sim = generate_cohort(&cfg).unwrap();
    (cfg.model, LoadedCohort { cohort: sim.cohort, exclusions: Vec::new() })
}

#[test]
fn json_round_trip() {
    let (model, cohort) = loaded(1);
    let out = validate(&model, &cohort, ValidateOptions::default(), Vec::new()).unwrap();
    let text = out.report.to_json_pretty();
    let back = ValidationReport::from_json_str(&text).unwrap();
    assert_eq!(back, out.report);
    assert_eq!(back.to_json_pretty(), text);
}

#[test]
fn table_rows_are_consistent() {
    let (model, cohort) = loaded(2);
    let report = validate(&model, &cohort, ValidateOptions::default(), Vec::new()).unwrap().report;
    report.check_consistency().unwrap();
    let rows = report.eo_rows();
    assert_eq!(rows[0].group, "Overall");
    assert_eq!(rows.len(), 1 + 2 + 5 + 2 * 6);
    assert_eq!(report.sex[0].n + report.sex[1].n, 424);
    for split in &report.median_splits {
        assert_eq!(split.below.observed + split.above.observed, report.overall.observed);
    }
    let pct = 100.0 * report.cohort.cases as f64 / 424.0;
    assert!((report.cohort.prevalence_percent - pct).abs() <= 0.005);
}

#[test]
fn recalibration_keeps_auc() {
    let (model, cohort) = loaded(3);
    let (updated, report) = recalibration_report(&model, &cohort.cohort).unwrap();
    assert_eq!(report.auc_before, report.auc_after);
    assert_eq!(cohort_auc(&model, &cohort.cohort).unwrap(), cohort_auc(&updated, &cohort.cohort).unwrap());
    assert!(report.calibration_intercept > 0.0);
    assert_eq!(report.eo_after.ratio, Some(1.0));
}

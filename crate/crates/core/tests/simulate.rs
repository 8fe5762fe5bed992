use riskval_core::calibration::recalibrate;
use riskval_core::ingest::{load_cohort, LoadOptions, RawCohort, RuleSet};
use riskval_core::simulate::{generate_cohort, preset, SimConfig};

fn config(n: usize, shift: f64, seed: u64) -> SimConfig {
    let mut cfg = preset("chds_like", seed).unwrap();
    cfg.n = n;
    cfg.intercept_shift = shift;
    cfg
}

#[test]
fn same_seed_same_cohort() {
    let a = generate_cohort(&config(300, -1.0, 5)).unwrap();
    let b = generate_cohort(&config(300, -1.0, 5)).unwrap();
    assert_eq!(a.raw.to_cohort_csv(), b.raw.to_cohort_csv());
    assert_eq!(a.truth.probabilities, b.truth.probabilities);
    let c = generate_cohort(&config(300, -1.0, 6)).unwrap();
    assert_ne!(a.raw.to_cohort_csv(), c.raw.to_cohort_csv());
}

#[test]
fn written_files_reload_to_same_cohort() {
    let sim = generate_cohort(&config(250, -1.4, 8)).unwrap();
    let cohort_csv = sim.raw.to_cohort_csv();
    let long_csv = sim.raw.to_longitudinal_csv();
    let raw = RawCohort::parse(cohort_csv.as_bytes(), Some(long_csv.as_bytes())).unwrap();
    let rules = RuleSet::from_json_str(&sim.rules.to_json_pretty()).unwrap();
    let cfg = config(250, -1.4, 8);
    let loaded = load_cohort(&raw, &cfg.model, &rules, LoadOptions::default()).unwrap();
    assert_eq!(loaded.cohort.n, sim.cohort.n);
    for (a, b) in loaded.cohort.subjects.iter().zip(&sim.cohort.subjects) {
        assert_eq!(a.outcome, b.outcome);
        for (k, v) in &b.features.values {
            assert!((a.features.values[k] - v).abs() < 1e-12, "{k}");
        }
    }
}

#[test]
fn unshifted_model_is_self_calibrated() {
    let sim = generate_cohort(&config(100_000, 0.0, 9)).unwrap();
    let cfg = config(100_000, 0.0, 9);
    let r = recalibrate(&cfg.model, &sim.cohort).unwrap();
    let eo = r.before.ratio.unwrap();
    let se = (1.0 / r.before.observed as f64).sqrt();
    assert!((eo - 1.0).abs() < 3.0 * se, "E/O {eo}");
    assert!(r.fit.intercept.abs() < 0.05, "a {}", r.fit.intercept);
}

#[test]
fn zero_coefficients_give_flat_prevalence() {
    let mut cfg = config(20_000, 0.0, 10);
    for c in cfg.model.coefficients.values_mut() {
        *c = 0.0;
    }
    cfg.model.intercept = (0.2f64 / 0.8).ln();
    let sim = generate_cohort(&cfg).unwrap();
    assert!(sim.truth.probabilities.iter().all(|&p| (p - 0.2).abs() < 1e-12));
    let prev = sim.cohort.prevalence();
    let se = (0.2 * 0.8 / 20_000.0f64).sqrt();
    assert!((prev - 0.2).abs() < 3.0 * se, "{prev}");
}

#[test]
fn blups_track_true_intercepts() {
    let sim = generate_cohort(&config(2_000, 0.0, 12)).unwrap();
    let truth = &sim.truth.random_intercepts["peer_cannabis_use"];
    let est: Vec<f64> = sim.cohort.subjects.iter().map(|s| s.features.values["peer_cannabis_use"]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mt, me) = (mean(truth), mean(&est));
    let cov: f64 = truth.iter().zip(&est).map(|(t, e)| (t - mt) * (e - me)).sum();
    let vt: f64 = truth.iter().map(|t| (t - mt).powi(2)).sum();
    let ve: f64 = est.iter().map(|e| (e - me).powi(2)).sum();
    let r = cov / (vt * ve).sqrt();
    assert!(r > 0.9, "correlation {r}");
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(preset("nope", 1).is_err());
    let mut cfg = config(10, 0.0, 1);
    cfg.n = 0;
    assert!(generate_cohort(&cfg).is_err());
}

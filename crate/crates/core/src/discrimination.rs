//! ROC curves, Mann-Whitney AUC and DeLong confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::stats::stable_argsort;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscriminationError {
    #[error("need at least {needed} cases and {needed} controls (have {cases} and {controls})")]
    DegenerateLabels { cases: usize, controls: usize, needed: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    /// Threshold at which each point is reached; the first is +infinity.
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
            .sum()
    }

    /// `threshold,fpr,tpr` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for (t, (fpr, tpr)) in self.thresholds.iter().zip(&self.points) {
            let t = if t.is_infinite() { "Inf".to_string() } else { format!("{t}") };
            out.push_str(&format!("{t},{fpr},{tpr}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucEstimate {
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub variance: f64,
    pub n_cases: usize,
    pub n_controls: usize,
    /// DeLong variance is zero (e.g. perfect separation); the CI collapses
    /// to the point estimate.
    pub zero_variance: bool,
}

fn validate(scores: &[f64], labels: &[u8], needed: usize) -> Result<(usize, usize), DiscriminationError> {
    if scores.len() != labels.len() {
        return Err(DiscriminationError::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(DiscriminationError::InvalidInput("NaN score".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(DiscriminationError::InvalidInput("labels must be 0 or 1".into()));
    }
    let cases = labels.iter().filter(|&&l| l == 1).count();
    let controls = labels.len() - cases;
    if cases < needed || controls < needed {
        return Err(DiscriminationError::DegenerateLabels { cases, controls, needed });
    }
    Ok((cases, controls))
}

/// Twice the midrank of every score (1-based), so the result stays integral.
fn doubled_midranks(scores: &[f64]) -> Vec<u64> {
    let order = stable_argsort(scores);
    let mut ranks = vec![0u64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank ((i+1)+(j+1))/2
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUC; ties between a case and a control count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, DiscriminationError> {
    let (cases, controls) = validate(scores, labels, 1)?;
    let ranks = doubled_midranks(scores);
    let case_rank_sum: u64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    // 2U = 2R - n1(n1+1)
    let twice_u = case_rank_sum - (cases * (cases + 1)) as u64;
    Ok(twice_u as f64 * 0.5 / (cases as f64 * controls as f64))
}

/// DeLong structural-component variance and a normal-theory CI on the AUC
/// scale, truncated to [0, 1].
pub fn delong_ci(scores: &[f64], labels: &[u8], level: f64) -> Result<AucEstimate, DiscriminationError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(DiscriminationError::InvalidInput(format!("level {level} outside (0,1)")));
    }
    let (m, n) = validate(scores, labels, 2)?;
    let (v10, v01) = placements(scores, labels);
    let auc_value = auc(scores, labels)?;
    let s10 = crate::stats::sample_variance(&v10).unwrap_or(0.0);
    let s01 = crate::stats::sample_variance(&v01).unwrap_or(0.0);
    let variance = s10 / m as f64 + s01 / n as f64;
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let half = z * variance.sqrt();
    Ok(AucEstimate {
        auc: auc_value,
        ci_low: (auc_value - half).max(0.0),
        ci_high: (auc_value + half).min(1.0),
        level,
        variance,
        n_cases: m,
        n_controls: n,
        zero_variance: variance <= 0.0,
    })
}

/// Placement values: for each case, the fraction of controls it outranks
/// (ties one half), and for each control, the fraction of cases that
/// outrank it. Computed from midranks in O(n log n).
pub fn placements(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let case_scores: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
    let control_scores: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(s, _)| *s).collect();
    let (m, n) = (case_scores.len(), control_scores.len());
    let all = doubled_midranks(scores);
    let within_cases = doubled_midranks(&case_scores);
    let within_controls = doubled_midranks(&control_scores);

    let mut v10 = Vec::with_capacity(m);
    let mut v01 = Vec::with_capacity(n);
    let (mut ci, mut ki) = (0, 0);
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            // controls below + half the tied controls
            let below = (all[i] - within_cases[ci]) as f64 * 0.5;
            v10.push(below / n as f64);
            ci += 1;
        } else {
            let below_or_tied = (all[i] - within_controls[ki]) as f64 * 0.5;
            v01.push(1.0 - below_or_tied / m as f64);
            ki += 1;
        }
    }
    (v10, v01)
}

/// Empirical ROC with one step per distinct score, thresholds descending.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve, DiscriminationError> {
    let (cases, controls) = validate(scores, labels, 1)?;
    let mut order = stable_argsort(scores);
    order.reverse();
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / controls as f64, tp as f64 / cases as f64));
        thresholds.push(t);
    }
    Ok(RocCurve { points, thresholds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    total += 1.0;
                } else if scores[i] == scores[j] {
                    total += 0.5;
                }
            }
        }
        total / pairs
    }

    #[test]
    fn extremes() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(DiscriminationError::DegenerateLabels { .. })));
    }

    #[test]
    fn minimal_roc() {
        let roc = roc_curve(&[1.0, 0.0], &[1, 0]).unwrap();
        assert_eq!(roc.points, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        let tied = roc_curve(&[0.3; 4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(tied.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(tied.trapezoid_area(), 0.5);
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let scores: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 / 4.0).collect();
        let labels: Vec<u8> = (0..50).map(|i| u8::from((i * 13) % 7 < 3)).collect();
        assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        let roc = roc_curve(&scores, &labels).unwrap();
        assert!((roc.trapezoid_area() - auc(&scores, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn placements_match_pairwise_definition() {
        let scores: Vec<f64> = (0..20).map(|i| ((i * 7) % 9) as f64).collect();
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i % 3 == 0)).collect();
        let (v10, v01) = placements(&scores, &labels);
        let psi = |x: f64, y: f64| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
        let cases: Vec<f64> = scores.iter().zip(&labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
        let controls: Vec<f64> = scores.iter().zip(&labels).filter(|(_, &l)| l == 0).map(|(s, _)| *s).collect();
        for (i, &x) in cases.iter().enumerate() {
            let brute = controls.iter().map(|&y| psi(x, y)).sum::<f64>() / controls.len() as f64;
            assert!((v10[i] - brute).abs() < 1e-15);
        }
        for (j, &y) in controls.iter().enumerate() {
            let brute = cases.iter().map(|&x| psi(x, y)).sum::<f64>() / cases.len() as f64;
            assert!((v01[j] - brute).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_separation_has_zero_variance() {
        let est = delong_ci(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0], 0.95).unwrap();
        assert!(est.zero_variance);
        assert_eq!((est.ci_low, est.auc, est.ci_high), (1.0, 1.0, 1.0));
        assert!(delong_ci(&[0.9, 0.1, 0.2], &[1, 0, 0], 0.95).is_err());
    }

    #[test]
    fn duplicating_data_halves_variance_roughly() {
        let scores: Vec<f64> = (0..40).map(|i| ((i * 17) % 23) as f64).collect();
        let labels: Vec<u8> = (0..40).map(|i| u8::from((i * 5) % 4 == 1 || i % 7 == 0)).collect();
        let a = delong_ci(&scores, &labels, 0.95).unwrap();
        let s2: Vec<f64> = scores.iter().chain(&scores).copied().collect();
        let l2: Vec<u8> = labels.iter().chain(&labels).copied().collect();
        let b = delong_ci(&s2, &l2, 0.95).unwrap();
        assert_eq!(a.auc, b.auc);
        let ratio = b.variance / a.variance;
        assert!(ratio > 0.4 && ratio < 0.6, "{ratio}");
    }
}

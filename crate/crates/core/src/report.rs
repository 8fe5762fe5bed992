//! Validation and recalibration reports, per-subject scores and plot output.
//!
//! Reals are rounded when a report is built (6 significant digits, E/O
//! ratios to 3 decimals) so the JSON form re-parses to an equal value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibration::{
    calibration_curve, expected_observed, median_split_eo, quantile_assignment, risk_quantile_groups, score_cohort,
    CalibrationCurveData, CalibrationFit, EoEntry,
};
use crate::discrimination::{auc, delong_ci, roc_curve, RocCurve};
use crate::ingest::{Cohort, Exclusion, LoadedCohort};
use crate::longitudinal::VarianceComponents;
use crate::model::{count_score, logit, sigmoid, MedianCutoffs, ModelSpec};
use crate::stats::{median, round_dp, round_sig};
use crate::Error;

/// SHA-256 of one input file, identified by role and file name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub n: usize,
    pub cases: usize,
    pub controls: usize,
    /// Percentage of cases, 2 decimals.
    pub prevalence_percent: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Intercept with the linear predictor as offset.
    pub intercept: f64,
    pub slope: f64,
    /// Intercept of the two-parameter calibration line.
    pub line_intercept: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianSplit {
    pub predictor: String,
    pub median: f64,
    pub below: EoEntry,
    pub above: EoEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tool_version: String,
    pub model_provenance: String,
    pub inputs: Vec<InputDigest>,
    pub cohort: CohortStats,
    pub auc: AucReport,
    pub overall: EoEntry,
    pub calibration: CalibrationReport,
    pub quantile_groups: Vec<EoEntry>,
    /// Male then female.
    pub sex: Vec<EoEntry>,
    pub median_splits: Vec<MedianSplit>,
    pub variance_components: BTreeMap<String, VarianceComponents>,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub quantiles: usize,
    pub bins: usize,
    pub level: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { quantiles: 5, bins: 10, level: 0.95 }
    }
}

/// Everything `validate` produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutputs {
    pub report: ValidationReport,
    pub roc: RocCurve,
    pub curve: CalibrationCurveData,
    /// Unrounded probabilities in subject order.
    pub probabilities: Vec<f64>,
}

fn r6(x: f64) -> f64 {
    round_sig(x, 6)
}

/// Intercept-free scores used for every AUC, so that intercept updates
/// leave the AUC bit-for-bit unchanged.
pub fn risk_scores(model: &ModelSpec, cohort: &Cohort) -> Result<Vec<f64>, Error> {
    Ok(cohort.subjects.iter().map(|s| model.risk_score(&s.features)).collect::<Result<_, _>>()?)
}

pub fn cohort_auc(model: &ModelSpec, cohort: &Cohort) -> Result<f64, Error> {
    Ok(auc(&risk_scores(model, cohort)?, &cohort.labels())?)
}

pub fn validate(
    model: &ModelSpec,
    loaded: &LoadedCohort,
    options: ValidateOptions,
    inputs: Vec<InputDigest>,
) -> Result<ValidationOutputs, Error> {
    let cohort = &loaded.cohort;
    let labels = cohort.labels();
    let (lps, probs) = score_cohort(model, cohort)?;
    let scores = risk_scores(model, cohort)?;

    let est = delong_ci(&scores, &labels, options.level)?;
    let roc = roc_curve(&scores, &labels)?;
    let overall = expected_observed(&probs, &labels)?;
    overall.ratio_checked()?;
    let fit = CalibrationFit::estimate(&labels, &lps, true)?;
    let quantile_groups = risk_quantile_groups(&probs, &labels, options.quantiles)?;
    let curve = calibration_curve(&probs, &labels, options.bins)?;

    let sex_members = |value: u8| -> EoEntry {
        let (mut e, mut o, mut n) = (0.0, 0u64, 0usize);
        for (i, s) in cohort.subjects.iter().enumerate() {
            if s.sex == value {
                e += probs[i];
                o += u64::from(labels[i]);
                n += 1;
            }
        }
        EoEntry::from_totals(if value == 1 { "Male" } else { "Female" }, n, e, o)
    };
    let sex = vec![sex_members(1).rounded(), sex_members(0).rounded()];

    let mut median_splits = Vec::new();
    for p in model.continuous_predictors() {
        let values: Vec<f64> = cohort.subjects.iter().map(|s| s.features.get(&p.name)).collect::<Result<_, _>>()?;
        let (below, above) = median_split_eo(&values, &probs, &labels)?;
        median_splits.push(MedianSplit {
            predictor: p.name.clone(),
            median: r6(median(&values).unwrap_or(f64::NAN)),
            below: below.rounded(),
            above: above.rounded(),
        });
    }

    let variance_components = cohort
        .variance_components
        .iter()
        .map(|(k, vc)| {
            (k.clone(), VarianceComponents { mu: r6(vc.mu), tau2: r6(vc.tau2), sigma2: r6(vc.sigma2), method: vc.method })
        })
        .collect();

    let report = ValidationReport {
        tool_version: crate::VERSION.to_string(),
        model_provenance: model.provenance.clone(),
        inputs,
        cohort: CohortStats {
            n: cohort.n,
            cases: cohort.case_count,
            controls: cohort.n - cohort.case_count,
            prevalence_percent: round_dp(100.0 * cohort.prevalence(), 2),
            excluded: loaded.exclusions.len(),
        },
        auc: AucReport {
            auc: r6(est.auc),
            ci_low: r6(est.ci_low),
            ci_high: r6(est.ci_high),
            level: est.level,
            zero_variance: est.zero_variance,
        },
        overall: overall.rounded(),
        calibration: CalibrationReport {
            intercept: r6(fit.intercept),
            slope: r6(fit.slope.unwrap_or(f64::NAN)),
            line_intercept: r6(fit.line_intercept.unwrap_or(f64::NAN)),
            converged: fit.converged,
        },
        quantile_groups: quantile_groups.iter().map(EoEntry::rounded).collect(),
        sex,
        median_splits,
        variance_components,
        exclusions: loaded.exclusions.clone(),
    };
    report.check_consistency()?;
    Ok(ValidationOutputs { report, roc, curve, probabilities: probs })
}

impl ValidationReport {
    /// Every partition table must add up to the overall entry: subject and
    /// event counts exactly, expected counts up to rounding.
    pub fn check_consistency(&self) -> Result<(), Error> {
        let mut tables: Vec<(String, Vec<&EoEntry>)> = vec![
            ("quantile groups".into(), self.quantile_groups.iter().collect()),
            ("sex".into(), self.sex.iter().collect()),
        ];
        for m in &self.median_splits {
            tables.push((format!("{} median split", m.predictor), vec![&m.below, &m.above]));
        }
        for (name, rows) in tables {
            let n: usize = rows.iter().map(|r| r.n).sum();
            let o: u64 = rows.iter().map(|r| r.observed).sum();
            let e: f64 = rows.iter().map(|r| r.expected).sum();
            let tol = 1e-5 * self.overall.expected.abs().max(1.0) * (rows.len() + 1) as f64;
            if n != self.overall.n || o != self.overall.observed || (e - self.overall.expected).abs() > tol {
                return Err(Error::Invariant(format!("{name} table does not add up to the overall totals")));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Rows in table order: overall, sex, risk groups, then median splits.
    pub fn eo_rows(&self) -> Vec<EoEntry> {
        let mut rows = vec![self.overall.clone()];
        rows.extend(self.sex.iter().cloned());
        rows.extend(self.quantile_groups.iter().cloned());
        for m in &self.median_splits {
            rows.push(m.below.clone().labelled(format!("{} below median", m.predictor)));
            rows.push(m.above.clone().labelled(format!("{} above median", m.predictor)));
        }
        rows
    }

    pub fn eo_table_csv(&self) -> String {
        eo_csv(&self.eo_rows())
    }
}

/// `group,n,expected,observed,ratio`; an undefined ratio is written as `NA`.
pub fn eo_csv(rows: &[EoEntry]) -> String {
    let mut out = String::from("group,n,expected,observed,ratio\n");
    for r in rows {
        let ratio = r.ratio.map(|x| format!("{x:.3}")).unwrap_or_else(|| "NA".into());
        out.push_str(&format!("{},{},{},{},{}\n", r.group, r.n, r.expected, r.observed, ratio));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationReport {
    pub calibration_intercept: f64,
    pub converged: bool,
    pub intercept_before: f64,
    pub intercept_after: f64,
    pub eo_before: EoEntry,
    pub eo_after: EoEntry,
    pub auc_before: f64,
    pub auc_after: f64,
}

/// Intercept update plus a before/after summary.
pub fn recalibration_report(model: &ModelSpec, cohort: &Cohort) -> Result<(ModelSpec, RecalibrationReport), Error> {
    let r = crate::calibration::recalibrate(model, cohort)?;
    r.before.ratio_checked()?;
    let auc_before = cohort_auc(model, cohort)?;
    let auc_after = cohort_auc(&r.model, cohort)?;
    if auc_before.to_bits() != auc_after.to_bits() {
        return Err(Error::Invariant("AUC changed under an intercept-only update".into()));
    }
    let report = RecalibrationReport {
        calibration_intercept: r6(r.fit.intercept),
        converged: r.fit.converged,
        intercept_before: model.intercept,
        intercept_after: r.model.intercept,
        eo_before: r.before.rounded(),
        eo_after: r.after.rounded(),
        auc_before: r6(auc_before),
        auc_after: r6(auc_after),
    };
    Ok((r.model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSubject {
    pub subject_id: String,
    pub outcome: u8,
    pub linear_predictor: f64,
    pub probability: f64,
    /// 1-based risk quantile group.
    pub quantile: usize,
    pub count_score: u32,
}

pub fn score_subjects(
    model: &ModelSpec,
    cohort: &Cohort,
    cutoffs: &MedianCutoffs,
    quantiles: usize,
) -> Result<Vec<ScoredSubject>, Error> {
    let (lps, probs) = score_cohort(model, cohort)?;
    let group = quantile_assignment(&probs, quantiles)?;
    cohort
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(ScoredSubject {
                subject_id: s.subject_id.clone(),
                outcome: s.outcome,
                linear_predictor: lps[i],
                probability: probs[i],
                quantile: group[i] + 1,
                count_score: count_score(&s.features, cutoffs, s.sex)?,
            })
        })
        .collect()
}

pub fn scores_csv(rows: &[ScoredSubject]) -> String {
    let mut out = String::from("subject_id,outcome,lp,probability,quantile,count_score\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.subject_id, r.outcome, r.linear_predictor, r.probability, r.quantile, r.count_score
        ));
    }
    out
}

/// Static SVG calibration plot: bin means as triangles against the
/// identity line, the fitted calibration line `sigmoid(a + b * logit(p))`
/// when `line = Some((a, b))`, and case and control probability histograms
/// in a strip along the bottom (cases above the axis, controls below).
pub fn calibration_svg(curve: &CalibrationCurveData, line: Option<(f64, f64)>) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    const STRIP: f64 = 60.0;
    let x = |p: f64| PAD + p * SIZE;
    let y = |p: f64| PAD + (1.0 - p) * SIZE;
    let width = SIZE + 2.0 * PAD;
    let height = SIZE + 2.0 * PAD + STRIP;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    s.push_str(&format!(
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    s.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"grey\" stroke-dasharray=\"4 4\"/>\n",
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    ));
    if let Some((a, slope)) = line.filter(|(a, b)| a.is_finite() && b.is_finite()) {
        let points: Vec<String> = (1..200)
            .map(|i| {
                let p = i as f64 / 200.0;
                format!("{:.1},{:.1}", x(p), y(sigmoid(a + slope * logit(p))))
            })
            .collect();
        s.push_str(&format!("<polyline points=\"{}\" fill=\"none\" stroke=\"black\"/>\n", points.join(" ")));
    }
    for b in &curve.bins {
        let (cx, cy) = (x(b.mean_predicted), y(b.event_rate));
        s.push_str(&format!(
            "<polygon points=\"{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}\" fill=\"black\"/>\n",
            cx,
            cy - 5.0,
            cx - 5.0,
            cy + 4.0,
            cx + 5.0,
            cy + 4.0
        ));
    }
    let h = &curve.histogram;
    let axis = PAD + SIZE + STRIP / 2.0 + 10.0;
    let peak = h.cases.iter().chain(&h.controls).copied().max().unwrap_or(0).max(1) as f64;
    let bar = SIZE / h.cases.len() as f64;
    for (i, (&c, &k)) in h.cases.iter().zip(&h.controls).enumerate() {
        let left = x(h.edges[i]);
        let up = c as f64 / peak * (STRIP / 2.0 - 2.0);
        let down = k as f64 / peak * (STRIP / 2.0 - 2.0);
        if c > 0 {
            s.push_str(&format!(
                "<rect x=\"{left:.1}\" y=\"{:.1}\" width=\"{bar:.1}\" height=\"{up:.1}\" fill=\"firebrick\"/>\n",
                axis - up
            ));
        }
        if k > 0 {
            s.push_str(&format!(
                "<rect x=\"{left:.1}\" y=\"{axis:.1}\" width=\"{bar:.1}\" height=\"{down:.1}\" fill=\"steelblue\"/>\n"
            ));
        }
    }
    s.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{axis:.1}\" x2=\"{:.1}\" y2=\"{axis:.1}\" stroke=\"black\"/>\n",
        PAD + SIZE
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">Predicted probability</text>\n",
        PAD + SIZE / 2.0,
        height - 4.0
    ));
    s.push_str(&format!(
        "<text x=\"12\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 12 {:.1})\">Observed proportion</text>\n",
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    ));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eo_csv_layout() {
        let rows = vec![
            EoEntry::from_totals("Male", 298, 40.082, 41).rounded(),
            EoEntry::from_totals("Group 1", 10, 0.5, 0).rounded(),
        ];
        assert_eq!(eo_csv(&rows), "group,n,expected,observed,ratio\nMale,298,40.082,41,0.978\nGroup 1,10,0.5,0,NA\n");
    }
}

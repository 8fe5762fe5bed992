//! Descriptive table of the summarized predictors by outcome group.
//!
//! Continuous predictors are reported as mean (SD) of the values the model
//! actually sees, so a wave-mean predictor is summarized after averaging and
//! a random-intercept predictor as its BLUPs. Sex is reported as the
//! percentage of males.

use serde::{Deserialize, Serialize};

use crate::ingest::Cohort;
use crate::model::{ModelSpec, ValueRange, SEX};
use crate::stats::{mean, round_sig, sample_sd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: Option<f64>,
    /// `None` when fewer than two subjects are in the group.
    pub sd: Option<f64>,
}

impl MeanSd {
    fn of(values: &[f64]) -> Self {
        Self { mean: mean(values).map(|m| round_sig(m, 6)), sd: sample_sd(values).map(|s| round_sig(s, 6)) }
    }

    fn cell(&self) -> String {
        match (self.mean, self.sd) {
            (Some(m), Some(s)) => format!("{} ({})", two_dp(m), two_dp(s)),
            (Some(m), None) => format!("{} (NA)", two_dp(m)),
            _ => "NA".into(),
        }
    }
}

/// Two decimals, without a sign on values that round to zero.
fn two_dp(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SummaryRow {
    Percent { label: String, total: Option<f64>, cases: Option<f64>, controls: Option<f64> },
    MeanSd { label: String, total: MeanSd, cases: MeanSd, controls: MeanSd },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub n_total: usize,
    pub n_cases: usize,
    pub n_controls: usize,
    pub rows: Vec<SummaryRow>,
}

fn percent(flags: &[f64]) -> Option<f64> {
    mean(flags).map(|m| round_sig(100.0 * m, 6))
}

/// Builds the table with a `Male %` row followed by one row per
/// non-sex predictor in model order.
pub fn summarize(model: &ModelSpec, cohort: &Cohort) -> SummaryTable {
    let groups: [Vec<usize>; 3] = [
        (0..cohort.n).collect(),
        (0..cohort.n).filter(|&i| cohort.subjects[i].outcome == 1).collect(),
        (0..cohort.n).filter(|&i| cohort.subjects[i].outcome == 0).collect(),
    ];
    let column = |get: &dyn Fn(usize) -> f64, g: &[usize]| g.iter().map(|&i| get(i)).collect::<Vec<f64>>();

    let mut rows = Vec::new();
    let sex = |i: usize| f64::from(cohort.subjects[i].sex);
    rows.push(SummaryRow::Percent {
        label: "Male %".into(),
        total: percent(&column(&sex, &groups[0])),
        cases: percent(&column(&sex, &groups[1])),
        controls: percent(&column(&sex, &groups[2])),
    });
    for p in model.predictors.iter().filter(|p| p.name != SEX) {
        let get = |i: usize| cohort.subjects[i].features.values.get(&p.name).copied().unwrap_or(f64::NAN);
        if p.range == ValueRange::Binary {
            rows.push(SummaryRow::Percent {
                label: format!("{} %", p.name),
                total: percent(&column(&get, &groups[0])),
                cases: percent(&column(&get, &groups[1])),
                controls: percent(&column(&get, &groups[2])),
            });
        } else {
            rows.push(SummaryRow::MeanSd {
                label: p.name.clone(),
                total: MeanSd::of(&column(&get, &groups[0])),
                cases: MeanSd::of(&column(&get, &groups[1])),
                controls: MeanSd::of(&column(&get, &groups[2])),
            });
        }
    }
    SummaryTable { n_total: cohort.n, n_cases: groups[1].len(), n_controls: groups[2].len(), rows }
}

impl SummaryTable {
    /// `variable,total,cases,controls` with formatted cells.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "variable,total (n={}),cases (n={}),controls (n={})\n",
            self.n_total, self.n_cases, self.n_controls
        );
        let pct = |v: &Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "NA".into());
        for row in &self.rows {
            let line = match row {
                SummaryRow::Percent { label, total, cases, controls } => {
                    format!("{label},{},{},{}", pct(total), pct(cases), pct(controls))
                }
                SummaryRow::MeanSd { label, total, cases, controls } => {
                    format!("{label},{},{},{}", total.cell(), cases.cell(), controls.cell())
                }
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SubjectRecord;
    use crate::model::FeatureVector;
    use crate::simulate::demo_model;
    use std::collections::BTreeMap;

    fn subject(id: &str, sex: u8, outcome: u8, x: f64) -> SubjectRecord {
        let mut features = FeatureVector::new().with(SEX, f64::from(sex));
        for p in demo_model().predictors.iter().filter(|p| p.name != SEX) {
            features.insert(&p.name, x);
        }
        SubjectRecord { subject_id: id.into(), sex, outcome, features, series: BTreeMap::new() }
    }

    #[test]
    fn single_subject_sd_undefined() {
        let cohort = Cohort::new(vec![subject("a", 1, 1, 0.4)], BTreeMap::new());
        let table = summarize(&demo_model(), &cohort);
        let SummaryRow::MeanSd { total, controls, .. } = &table.rows[1] else { panic!() };
        assert_eq!(total.mean, Some(0.4));
        assert_eq!(total.sd, None);
        assert_eq!(controls.mean, None);
        assert!(table.to_csv().contains("0.40 (NA)"));
    }

    #[test]
    fn constant_predictor_sd_zero() {
        let subjects = (0..5).map(|i| subject(&format!("s{i}"), (i % 2) as u8, u8::from(i < 2), 0.25)).collect();
        let table = summarize(&demo_model(), &Cohort::new(subjects, BTreeMap::new()));
        let SummaryRow::MeanSd { total, .. } = &table.rows[2] else { panic!() };
        assert_eq!(total.sd, Some(0.0));
        let SummaryRow::Percent { total, cases, .. } = &table.rows[0] else { panic!() };
        assert_eq!(*total, Some(40.0));
        assert_eq!(*cases, Some(50.0));
    }

    #[test]
    fn row_structure() {
        let cohort = Cohort::new(vec![subject("a", 0, 0, 0.1), subject("b", 1, 1, 0.2)], BTreeMap::new());
        let labels: Vec<String> = summarize(&demo_model(), &cohort)
            .rows
            .iter()
            .map(|r| match r {
                SummaryRow::Percent { label, .. } | SummaryRow::MeanSd { label, .. } => label.clone(),
            })
            .collect();
        assert_eq!(
            labels,
            ["Male %", "ace", "neuroticism", "conscientiousness", "openness", "delinquency", "peer_cannabis_use"]
        );
    }
}

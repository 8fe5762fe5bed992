//! Longitudinal summarizers: wave means and random-intercept predictions
//! under the one-way model `y_ij = mu + b_i + e_ij`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LongitudinalError {
    #[error("empty series for subject `{0}`")]
    EmptySeries(String),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("invalid variance components: {0}")]
    InvalidComponents(String),
}

/// Observed waves of one predictor for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeries {
    pub subject_id: String,
    pub values: Vec<f64>,
    pub waves: Vec<i64>,
    /// Age at measurement, when recorded.
    pub ages: Vec<Option<f64>>,
}

impl SubjectSeries {
    /// A series without wave metadata; waves are numbered from 1.
    pub fn from_values(subject_id: impl Into<String>, values: Vec<f64>) -> Self {
        let waves = (1..=values.len() as i64).collect();
        let ages = vec![None; values.len()];
        Self { subject_id: subject_id.into(), values, waves, ages }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    #[default]
    Moments,
    Reml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub mu: f64,
    /// Between-subject variance.
    pub tau2: f64,
    /// Within-subject variance.
    pub sigma2: f64,
    pub method: VarianceMethod,
}

impl VarianceComponents {
    /// Externally supplied components. `sigma2 = 0` is accepted here (it
    /// means no shrinkage); the estimators never return it.
    pub fn new(mu: f64, tau2: f64, sigma2: f64, method: VarianceMethod) -> Result<Self, LongitudinalError> {
        if !(mu.is_finite() && tau2.is_finite() && sigma2.is_finite()) || tau2 < 0.0 || sigma2 < 0.0 {
            return Err(LongitudinalError::InvalidComponents(format!(
                "mu={mu}, tau2={tau2}, sigma2={sigma2}"
            )));
        }
        Ok(Self { mu, tau2, sigma2, method })
    }

    /// Shrinkage factor tau2 / (tau2 + sigma2 / n).
    pub fn shrinkage(&self, n: usize) -> f64 {
        if self.tau2 == 0.0 {
            0.0
        } else {
            self.tau2 / (self.tau2 + self.sigma2 / n as f64)
        }
    }
}

pub fn wave_mean(series: &SubjectSeries) -> Result<f64, LongitudinalError> {
    if series.is_empty() {
        return Err(LongitudinalError::EmptySeries(series.subject_id.clone()));
    }
    Ok(series.values.iter().sum::<f64>() / series.len() as f64)
}

/// Best linear unbiased predictor of the subject's random intercept.
pub fn blup(series: &SubjectSeries, vc: &VarianceComponents) -> Result<f64, LongitudinalError> {
    let ybar = wave_mean(series)?;
    Ok(vc.shrinkage(series.len()) * (ybar - vc.mu))
}

struct Design {
    /// (n_i, subject mean, within sum of squares)
    groups: Vec<(usize, f64, f64)>,
    total: usize,
    grand_mean: f64,
    ssw: f64,
}

impl Design {
    fn new(all: &[SubjectSeries]) -> Result<Self, LongitudinalError> {
        if let Some(empty) = all.iter().find(|s| s.is_empty()) {
            return Err(LongitudinalError::EmptySeries(empty.subject_id.clone()));
        }
        if all.len() < 2 {
            return Err(LongitudinalError::DegenerateDesign(
                "at least two subjects are required".into(),
            ));
        }
        let mut groups = Vec::with_capacity(all.len());
        let mut total = 0usize;
        let mut sum = 0.0;
        let mut ssw = 0.0;
        for s in all {
            let n = s.len();
            let m = s.values.iter().sum::<f64>() / n as f64;
            let w: f64 = s.values.iter().map(|y| (y - m) * (y - m)).sum();
            total += n;
            sum += s.values.iter().sum::<f64>();
            ssw += w;
            groups.push((n, m, w));
        }
        if total == all.len() {
            return Err(LongitudinalError::DegenerateDesign(
                "every subject has a single observation; within-subject variance is unidentifiable"
                    .into(),
            ));
        }
        if ssw <= 0.0 {
            return Err(LongitudinalError::DegenerateDesign(
                "no within-subject variation".into(),
            ));
        }
        Ok(Self { groups, total, grand_mean: sum / total as f64, ssw })
    }
}

pub fn estimate_variance_components(
    all: &[SubjectSeries],
    method: VarianceMethod,
) -> Result<VarianceComponents, LongitudinalError> {
    let design = Design::new(all)?;
    match method {
        VarianceMethod::Moments => Ok(moments(&design)),
        VarianceMethod::Reml => Ok(reml(&design)),
    }
}

/// Unbalanced one-way ANOVA estimator, tau2 clipped at zero.
fn moments(d: &Design) -> VarianceComponents {
    let k = d.groups.len() as f64;
    let n = d.total as f64;
    let ssb: f64 = d
        .groups
        .iter()
        .map(|&(ni, m, _)| ni as f64 * (m - d.grand_mean) * (m - d.grand_mean))
        .sum();
    let msw = d.ssw / (n - k);
    let msb = ssb / (k - 1.0);
    let sum_sq: f64 = d.groups.iter().map(|&(ni, _, _)| (ni * ni) as f64).sum();
    let n0 = (n - sum_sq / n) / (k - 1.0);
    let tau2 = ((msb - msw) / n0).max(0.0);
    VarianceComponents { mu: d.grand_mean, tau2, sigma2: msw, method: VarianceMethod::Moments }
}

/// Profile restricted log-likelihood (up to a constant) at variance ratio
/// `lambda = tau2 / sigma2`, together with the profiled mu and sigma2.
fn reml_profile(d: &Design, lambda: f64) -> (f64, f64, f64) {
    let mut sw = 0.0;
    let mut swy = 0.0;
    let mut logdet = 0.0;
    for &(ni, m, _) in &d.groups {
        let w = ni as f64 / (1.0 + lambda * ni as f64);
        sw += w;
        swy += w * m;
        logdet += (1.0 + lambda * ni as f64).ln();
    }
    let mu = swy / sw;
    let mut q = 0.0;
    for &(ni, m, within) in &d.groups {
        let w = ni as f64 / (1.0 + lambda * ni as f64);
        q += within + w * (m - mu) * (m - mu);
    }
    let dof = (d.total - 1) as f64;
    let sigma2 = q / dof;
    let ll = -0.5 * (dof * q.ln() + logdet + sw.ln());
    (ll, mu, sigma2)
}

/// Derivative of the profile restricted log-likelihood in lambda.
fn reml_slope(d: &Design, lambda: f64) -> f64 {
    let (_, mu, _) = reml_profile(d, lambda);
    let (mut sw, mut sw2, mut spread, mut dq) = (0.0, 0.0, 0.0, 0.0);
    for &(ni, m, _) in &d.groups {
        let w = ni as f64 / (1.0 + lambda * ni as f64);
        sw += w;
        sw2 += w * w;
        spread += w * (m - mu) * (m - mu);
        dq += w * w * (m - mu) * (m - mu);
    }
    let q = d.ssw + spread;
    let dof = (d.total - 1) as f64;
    0.5 * (dof * dq / q - sw + sw2 / sw)
}

/// One-dimensional REML over lambda = tau2/sigma2. The search runs on
/// u = lambda/(1+lambda) in [0, 1): coarse grid, then refinement around the
/// best grid point by bisection on the sign of the derivative, or by
/// golden-section search when the derivative does not bracket a root.
fn reml(d: &Design) -> VarianceComponents {
    const GRID: usize = 400;
    const U_MAX: f64 = 1.0 - 1e-9;
    let to_lambda = |u: f64| u / (1.0 - u);
    let objective = |u: f64| reml_profile(d, to_lambda(u)).0;
    let slope = |u: f64| reml_slope(d, to_lambda(u));

    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..=GRID {
        let u = U_MAX * i as f64 / GRID as f64;
        let v = objective(u);
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let step = U_MAX / GRID as f64;
    let mut a = (best as f64 - 1.0).max(0.0) * step;
    let mut b = ((best + 1) as f64 * step).min(U_MAX);

    let mut u = if slope(a) > 0.0 && slope(b) < 0.0 {
        loop {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break mid;
            }
            if slope(mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
    } else {
        golden_section(&objective, a, b)
    };
    if objective(0.0) >= objective(u) {
        u = 0.0;
    }
    let lambda = to_lambda(u);
    let (_, mu, sigma2) = reml_profile(d, lambda);
    VarianceComponents { mu, tau2: lambda * sigma2, sigma2, method: VarianceMethod::Reml }
}

fn golden_section(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut e = a + ratio * (b - a);
    let mut fc = f(c);
    let mut fe = f(e);
    while b - a > 1e-15 {
        if fc > fe {
            b = e;
            e = c;
            fe = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + ratio * (b - a);
            fe = f(e);
        }
    }
    0.5 * (a + b)
}

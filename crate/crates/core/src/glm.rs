//! Maximum-likelihood logistic regression with an optional offset, fitted by
//! iteratively reweighted least squares.
//!
//! Each Newton step solves the weighted least-squares problem
//! `sqrt(W) X d = (y - p) / sqrt(W)` through an SVD of the weighted design,
//! never the normal equations. A step that lowers the log-likelihood is
//! halved until it does not. Iteration stops once the largest absolute score
//! component `|X'(y - p)|` drops below the tolerance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::sigmoid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("outcome is constant; the maximum-likelihood estimate does not exist")]
    ConstantOutcome,
    #[error("quasi-separation: coefficient {index} reached {value:.3} (limit {limit})")]
    Separation { index: usize, value: f64, limit: f64 },
    #[error("information matrix is singular (reciprocal condition {rcond:.3e})")]
    SingularInformation { rcond: f64 },
    #[error("predictor is constant; slope is not identifiable")]
    ConstantPredictor,
    #[error("no convergence after {iterations} iterations (max |score| {max_abs_score:.3e})")]
    NotConverged { iterations: usize, max_abs_score: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub separation_limit: f64,
    pub max_halvings: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 50, separation_limit: 15.0, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute score component at the returned coefficients.
    pub max_abs_score: f64,
    pub log_likelihood: f64,
    /// Log-likelihood after each accepted step, starting at the zero start.
    pub trace: Vec<f64>,
}

/// Stable log(1 + e^x).
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_likelihood(eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    eta.iter().zip(y.iter()).map(|(&e, &yi)| yi * e - softplus(e)).sum()
}

fn check_labels(y: &[u8]) -> Result<DVector<f64>, GlmError> {
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(GlmError::InvalidInput(format!("outcome value {bad} is not binary")));
    }
    Ok(DVector::from_iterator(y.len(), y.iter().map(|&v| f64::from(v))))
}

/// Fits `logit P(y = 1) = X beta + offset` from a zero start.
pub fn fit_logistic(
    design: &DMatrix<f64>,
    y: &[u8],
    offset: Option<&[f64]>,
    options: &GlmOptions,
) -> Result<GlmFit, GlmError> {
    let (n, p) = design.shape();
    if p == 0 || n < p {
        return Err(GlmError::InvalidInput(format!("design is {n}x{p}; need n >= p >= 1")));
    }
    if y.len() != n {
        return Err(GlmError::InvalidInput(format!("{} outcomes for {n} rows", y.len())));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::InvalidInput("design has non-finite entries".into()));
    }
    let yv = check_labels(y)?;
    let off = match offset {
        Some(o) if o.len() != n => {
            return Err(GlmError::InvalidInput(format!("{} offsets for {n} rows", o.len())))
        }
        Some(o) if o.iter().any(|v| !v.is_finite()) => {
            return Err(GlmError::InvalidInput("offset has non-finite entries".into()))
        }
        Some(o) => DVector::from_column_slice(o),
        None => DVector::zeros(n),
    };
    let cases = y.iter().filter(|&&v| v == 1).count();
    if cases == 0 || cases == n {
        return Err(GlmError::ConstantOutcome);
    }

    let rcond = reciprocal_condition(design.clone());
    if rcond < RCOND_LIMIT {
        return Err(GlmError::SingularInformation { rcond });
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut eta = design * &beta + &off;
    let mut ll = log_likelihood(&eta, &yv);
    let mut trace = vec![ll];
    let mut iterations = 0;

    loop {
        let probs = eta.map(sigmoid);
        let max_abs_score = design.tr_mul(&(&yv - &probs)).amax();
        if max_abs_score < options.tolerance {
            // a few unguarded Newton steps take the converged estimate to
            // machine precision; each is kept only if the score shrinks
            let mut best = (beta, max_abs_score);
            for _ in 0..POLISH_STEPS {
                let eta = design * &best.0 + &off;
                let Ok(step) = newton_step(design, &eta, &yv) else { break };
                let candidate = &best.0 + step;
                let cand_score = design.tr_mul(&(&yv - (design * &candidate + &off).map(sigmoid))).amax();
                if cand_score < best.1 {
                    best = (candidate, cand_score);
                } else {
                    break;
                }
            }
            let eta = design * &best.0 + &off;
            return Ok(GlmFit {
                coefficients: best.0.iter().copied().collect(),
                converged: true,
                iterations,
                max_abs_score: best.1,
                log_likelihood: log_likelihood(&eta, &yv),
                trace,
            });
        }
        if iterations == options.max_iterations {
            return Ok(unconverged(beta, iterations, max_abs_score, ll, trace));
        }
        iterations += 1;

        let step = newton_step(design, &eta, &yv)?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate = &beta + &step * scale;
            let cand_eta = design * &candidate + &off;
            let cand_ll = log_likelihood(&cand_eta, &yv);
            if cand_ll >= ll - 1e-12 * ll.abs() {
                accepted = Some((candidate, cand_eta, cand_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, cand_eta, cand_ll)) = accepted else {
            // no ascent left at machine precision
            return Ok(unconverged(beta, iterations, max_abs_score, ll, trace));
        };
        if let Some((index, &value)) = candidate
            .iter()
            .enumerate()
            .find(|(_, b)| b.abs() > options.separation_limit)
        {
            return Err(GlmError::Separation { index, value, limit: options.separation_limit });
        }
        beta = candidate;
        eta = cand_eta;
        ll = cand_ll;
        trace.push(ll);
    }
}

fn unconverged(beta: DVector<f64>, iterations: usize, max_abs_score: f64, ll: f64, trace: Vec<f64>) -> GlmFit {
    GlmFit {
        coefficients: beta.iter().copied().collect(),
        converged: false,
        iterations,
        max_abs_score,
        log_likelihood: ll,
        trace,
    }
}

const RCOND_LIMIT: f64 = 1e-12;
const POLISH_STEPS: usize = 3;

fn reciprocal_condition(m: DMatrix<f64>) -> f64 {
    let sv = m.svd(false, false).singular_values;
    let smax = sv.max();
    if smax > 0.0 {
        sv.min() / smax
    } else {
        0.0
    }
}

/// Newton direction from the least-squares problem `sqrt(W) X d = r / sqrt(W)`.
fn newton_step(design: &DMatrix<f64>, eta: &DVector<f64>, yv: &DVector<f64>) -> Result<DVector<f64>, GlmError> {
    let probs = eta.map(sigmoid);
    let resid = yv - &probs;
    let sqrt_w = probs.map(|pi| (pi * (1.0 - pi)).max(1e-30).sqrt());
    let mut weighted = design.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= sqrt_w[i];
    }
    let rhs = resid.component_div(&sqrt_w);
    let svd = weighted.svd(true, true);
    let smax = svd.singular_values.max();
    let rcond = if smax > 0.0 { svd.singular_values.min() / smax } else { 0.0 };
    if rcond < RCOND_LIMIT {
        return Err(GlmError::SingularInformation { rcond });
    }
    svd.solve(&rhs, 0.0).map_err(|e| GlmError::InvalidInput(e.to_string()))
}

/// Calibration intercept `a` and slope `b` of `logit p = a + b * lp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationLine {
    pub intercept: f64,
    pub slope: f64,
    pub fit: GlmFit,
}

pub fn fit_calibration_line(y: &[u8], lp: &[f64]) -> Result<CalibrationLine, GlmError> {
    if lp.len() != y.len() {
        return Err(GlmError::InvalidInput(format!("{} scores for {} outcomes", lp.len(), y.len())));
    }
    if lp.windows(2).all(|w| w[0] == w[1]) {
        return Err(GlmError::ConstantPredictor);
    }
    let design = DMatrix::from_fn(lp.len(), 2, |i, j| if j == 0 { 1.0 } else { lp[i] });
    let fit = fit_logistic(&design, y, None, &GlmOptions::default())?;
    require_converged(&fit)?;
    Ok(CalibrationLine { intercept: fit.coefficients[0], slope: fit.coefficients[1], fit })
}

/// Intercept-only fit with `lp` as offset (slope fixed at 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationIntercept {
    pub intercept: f64,
    pub fit: GlmFit,
}

pub fn fit_calibration_intercept(y: &[u8], lp: &[f64]) -> Result<CalibrationIntercept, GlmError> {
    if lp.len() != y.len() {
        return Err(GlmError::InvalidInput(format!("{} scores for {} outcomes", lp.len(), y.len())));
    }
    let design = DMatrix::from_element(lp.len(), 1, 1.0);
    let fit = fit_logistic(&design, y, Some(lp), &GlmOptions::default())?;
    require_converged(&fit)?;
    Ok(CalibrationIntercept { intercept: fit.coefficients[0], fit })
}

fn require_converged(fit: &GlmFit) -> Result<(), GlmError> {
    if fit.converged {
        Ok(())
    } else {
        Err(GlmError::NotConverged { iterations: fit.iterations, max_abs_score: fit.max_abs_score })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::logit;

    fn ones(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn intercept_only_is_logit_of_mean() {
        let y = [1, 0, 0, 1, 0, 0, 0, 1];
        let fit = fit_logistic(&ones(8), &y, None, &GlmOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - logit(3.0 / 8.0)).abs() < 1e-9);
    }

    /// Bisection on the monotone score function sum(y - sigmoid(a + off)).
    fn bisect_offset_intercept(y: &[u8], off: &[f64]) -> f64 {
        let score = |a: f64| -> f64 {
            y.iter().zip(off).map(|(&yi, &o)| f64::from(yi) - sigmoid(a + o)).sum()
        };
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if score(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn offset_intercept_matches_bisection_oracle() {
        let y = [1, 0, 1, 0, 0, 1];
        let off = [-0.4, 1.2, 0.3, -2.0, 0.9, -1.1];
        let oracle = bisect_offset_intercept(&y, &off);
        let fit = fit_calibration_intercept(&y, &off).unwrap();
        assert!((fit.intercept - oracle).abs() < 1e-6, "{} vs {oracle}", fit.intercept);
    }

    #[test]
    fn separated_data_is_flagged() {
        let design = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let y = [0, 0, 1, 1];
        assert!(matches!(
            fit_logistic(&design, &y, None, &GlmOptions::default()),
            Err(GlmError::Separation { .. })
        ));
    }

    #[test]
    fn constant_outcome_and_predictor() {
        assert_eq!(
            fit_logistic(&ones(3), &[1, 1, 1], None, &GlmOptions::default()),
            Err(GlmError::ConstantOutcome)
        );
        assert_eq!(fit_calibration_intercept(&[0, 0], &[0.1, 0.2]).unwrap_err(), GlmError::ConstantOutcome);
        assert_eq!(fit_calibration_line(&[0, 1, 1], &[0.5; 3]).unwrap_err(), GlmError::ConstantPredictor);
    }

    #[test]
    fn singular_design_is_reported() {
        let design = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(
            fit_logistic(&design, &[0, 1, 0, 1], None, &GlmOptions::default()),
            Err(GlmError::SingularInformation { .. })
        ));
    }

    #[test]
    fn score_equations_and_monotone_trace() {
        let lp: Vec<f64> = (0..40).map(|i| (i as f64 - 20.0) / 8.0).collect();
        let y: Vec<u8> = (0..40).map(|i| u8::from(i % 3 == 0 || i > 30)).collect();
        let line = fit_calibration_line(&y, &lp).unwrap();
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        for (i, &l) in lp.iter().enumerate() {
            let r = f64::from(y[i]) - sigmoid(line.intercept + line.slope * l);
            s0 += r;
            s1 += r * l;
        }
        assert!(s0.abs() <= 1e-6 * 40.0 && s1.abs() <= 1e-6 * 40.0);
        assert!(line.fit.trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn offset_shift_moves_intercept_exactly() {
        let y = [1, 0, 1, 0, 0, 1, 0, 0];
        let lp = [-0.4, 1.2, 0.3, -2.0, 0.9, -1.1, 0.0, -0.7];
        let a = fit_calibration_intercept(&y, &lp).unwrap().intercept;
        let shifted: Vec<f64> = lp.iter().map(|v| v + 0.83).collect();
        let b = fit_calibration_intercept(&y, &shifted).unwrap().intercept;
        assert!((b - (a - 0.83)).abs() < 1e-9);
    }
}

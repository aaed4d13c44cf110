//! Matched-pairs variance estimation, confidence intervals and tests.

use crate::error::{Error, Result};
use crate::estimators::{fit, AdjustmentSpec};
use crate::experiment::{adjusted_outcomes, difference_in_means, EstimateReport, ExperimentData, WorkingModel};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    pub tau2: f64,
    pub lambda_hat: f64,
    /// `tau2 - (lambda_hat + delta_hat^2) / 2`, clamped at zero.
    pub sigma2_hat: f64,
    /// Arm-wise variances of the adjusted outcomes (the difference-in-means
    /// comparator, which ignores the pairing).
    pub sigma2_conservative: f64,
    /// Whether the unclamped value was negative.
    pub clamped: bool,
}

/// Variance of `sqrt(n) (delta_hat - Delta)` for the working model `wm`.
///
/// Pairs are taken in plan order: `lambda_hat` multiplies the signed
/// within-pair differences of consecutive pairs `(1,2), (3,4), ...`, and with
/// an odd number of pairs the last one only enters `tau2`.
pub fn variance_adjusted(data: &ExperimentData, wm: &WorkingModel, delta_hat: f64) -> Result<VarianceReport> {
    let n = data.n_pairs();
    if n < 2 {
        return Err(Error::TooFewPairs { required: 2, found: n });
    }
    let yt = adjusted_outcomes(data, wm)?;
    let units = data.units();
    let nf = n as f64;

    let diffs: Vec<(f64, f64)> = data
        .plan()
        .pairs()
        .iter()
        .map(|&(a, b)| (yt[a] - yt[b], units[a].d as f64 - units[b].d as f64))
        .collect();
    let tau2 = diffs.iter().map(|(dy, _)| dy * dy).sum::<f64>() / nf;
    let lambda_hat = 2.0 / nf
        * diffs
            .chunks_exact(2)
            .map(|q| (q[0].0 * q[0].1) * (q[1].0 * q[1].1))
            .sum::<f64>();
    let raw = tau2 - 0.5 * (lambda_hat + delta_hat * delta_hat);

    let mean_of = |arm: u8| {
        yt.iter()
            .zip(units)
            .filter(|(_, u)| u.d == arm)
            .map(|(v, _)| v)
            .sum::<f64>()
            / nf
    };
    let (mean1, mean0) = (mean_of(1), mean_of(0));
    let sigma2_conservative = yt
        .iter()
        .zip(units)
        .map(|(v, u)| {
            if u.d == 1 {
                (v - mean1).powi(2)
            } else {
                (v - mean0).powi(2)
            }
        })
        .sum::<f64>()
        / nf;

    Ok(VarianceReport {
        tau2,
        lambda_hat,
        sigma2_hat: raw.max(0.0),
        sigma2_conservative,
        clamped: raw < 0.0,
    })
}

/// `delta_hat -/+ (sigma_hat / sqrt(n)) * Phi^{-1}(1 - alpha/2)`.
pub fn confidence_interval(delta_hat: f64, sigma_hat: f64, n: usize, alpha: f64) -> Result<(f64, f64)> {
    let half = half_width(sigma_hat, n, alpha)?;
    Ok((delta_hat - half, delta_hat + half))
}

fn half_width(sigma_hat: f64, n: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(sigma_hat >= 0.0) || n == 0 {
        return Err(Error::InvalidArgument(
            "standard deviation must be >= 0 and n >= 1".into(),
        ));
    }
    Ok(sigma_hat / (n as f64).sqrt() * normal::quantile(1.0 - alpha / 2.0)?)
}

/// Two-sided test of `Delta = delta0` at the report's level.
pub fn test_ate(report: &EstimateReport, delta0: f64) -> bool {
    let z = normal::quantile(1.0 - report.alpha / 2.0).unwrap_or(f64::INFINITY);
    (report.delta_hat - delta0).abs() > report.std_error * z
}

/// Builds the full report for an already fitted working model.
pub fn report_for(data: &ExperimentData, wm: &WorkingModel, alpha: f64, delta0: f64) -> Result<EstimateReport> {
    let adjusted = adjusted_outcomes(data, wm)?;
    let delta_hat = difference_in_means(data, &adjusted);
    let var = variance_adjusted(data, wm, delta_hat)?;
    let n = data.n_pairs();
    let sigma_hat = var.sigma2_hat.sqrt();
    let (ci_lower, ci_upper) = confidence_interval(delta_hat, sigma_hat, n, alpha)?;
    let mut diagnostics = wm.diagnostics.clone();
    diagnostics.insert("tau2".into(), var.tau2);
    diagnostics.insert("lambda_hat".into(), var.lambda_hat);
    diagnostics.insert("sigma2_conservative".into(), var.sigma2_conservative);
    diagnostics.insert("sigma2_clamped".into(), if var.clamped { 1.0 } else { 0.0 });
    let mut report = EstimateReport {
        method: wm.label.clone(),
        delta_hat,
        sigma_hat,
        std_error: sigma_hat / (n as f64).sqrt(),
        ci_lower,
        ci_upper,
        alpha,
        reject_h0: false,
        delta_null: delta0,
        n_pairs: n,
        diagnostics,
    };
    report.reject_h0 = test_ate(&report, delta0);
    Ok(report)
}

/// Fit, estimate, and test in one call.
pub fn estimate(data: &ExperimentData, spec: &AdjustmentSpec, alpha: f64, delta0: f64) -> Result<EstimateReport> {
    let wm = fit(data, spec)?;
    report_for(data, &wm, alpha, delta0)
}

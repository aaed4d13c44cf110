//! Monte Carlo engine: draw, match, assign, estimate, test, aggregate.
//!
//! Replication `r` is a pure function of `(seed, r)`. Results are gathered in
//! replication order before any summation, so summaries are bit-identical for
//! any number of worker threads.

mod models;

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

pub use models::{
    covariate_dims, default_menu, generate_model, lasso_basis, ModelSpec, SimulatedUnits, RHO,
    SIMULATION_SLOW_DIVERGENCE,
};

use crate::design::{assign_with_stream, match_pairs_greedy, match_pairs_sorted, reorder_pairs};
use crate::error::{Error, Result};
use crate::estimators::{fit, AdjustmentKind, AdjustmentSpec};
use crate::experiment::{doubly_robust_estimate, EstimateReport, ExperimentData, UnitRecord};
use crate::inference::report_for;
use crate::stream::Stream;

/// Level of every simulated test.
pub const ALPHA: f64 = 0.05;

/// Draws, matches and assigns one replication. Units are returned in plan
/// order (pair `j` holds units `2j` and `2j + 1`); unit ids are the draw
/// indices.
pub fn simulate_dataset(spec: &ModelSpec, replication: u64) -> Result<ExperimentData> {
    let draw = generate_model(spec, replication)?;
    let plan = if draw.x.ncols() == 1 {
        match_pairs_sorted(draw.x.column(0).as_slice())?
    } else {
        let greedy = match_pairs_greedy(&draw.x)?;
        reorder_pairs(&greedy, &draw.x)?
    };
    let assign = Stream::new(spec.seed)
        .derive(replication)
        .derive(models::CHANNEL_ASSIGN);
    let d = assign_with_stream(&plan, &assign);
    let units = (0..draw.y0.len())
        .map(|i| {
            let y = if d[i] == 1 { draw.y1[i] } else { draw.y0[i] };
            UnitRecord::new(
                i.to_string(),
                y,
                d[i],
                draw.x.row(i).iter().copied().collect(),
                draw.w.row(i).iter().copied().collect(),
            )
        })
        .collect();
    Ok(ExperimentData::new(units, plan)?.canonical())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindOutcome {
    pub label: String,
    pub result: std::result::Result<EstimateReport, String>,
}

/// One pass of the full pipeline for every estimator in `kinds`. Estimator
/// failures are recorded per kind rather than aborting the replication.
pub fn run_replication(spec: &ModelSpec, kinds: &[AdjustmentSpec], replication: u64) -> Result<Vec<KindOutcome>> {
    let data = simulate_dataset(spec, replication)?;
    Ok(kinds
        .iter()
        .map(|k| KindOutcome {
            label: k.label.clone(),
            result: estimate_checked(&data, k).map_err(|e| e.to_string()),
        })
        .collect())
}

fn estimate_checked(data: &ExperimentData, spec: &AdjustmentSpec) -> Result<EstimateReport> {
    let wm = fit(data, spec)?;
    let report = report_for(data, &wm, ALPHA, 0.0)?;
    // The combiner and the adjusted-outcome path must agree.
    let combined = doubly_robust_estimate(data, &wm)?;
    let scale = 1.0 + report.delta_hat.abs();
    if (combined - report.delta_hat).abs() > 1e-9 * scale {
        return Err(Error::InvalidExperiment(format!(
            "estimate paths disagree: {combined} vs {}",
            report.delta_hat
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindSummary {
    pub label: String,
    /// Replications in which the estimator succeeded.
    pub replications: usize,
    pub failures: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub mean_std_error: f64,
    /// `100 (1 - mean SE / mean SE of the unadjusted estimator)`, when the
    /// menu contains one.
    pub se_reduction_pct: Option<f64>,
    pub mean_delta_hat: f64,
    pub sd_delta_hat: f64,
    pub median_sigma_hat: f64,
    /// Share of intervals containing the true effect.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub model_id: u8,
    pub n_pairs: usize,
    pub delta: f64,
    pub seed: u64,
    pub replications: usize,
    pub kinds: Vec<KindSummary>,
}

impl SimulationSummary {
    pub fn kind(&self, label: &str) -> Option<&KindSummary> {
        self.kinds.iter().find(|k| k.label == label)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidArgument(format!("writing summary: {e}"));
        w.write_record([
            "model_id",
            "n",
            "delta",
            "kind",
            "replications",
            "rejection_rate",
            "mean_se",
            "se_reduction_pct",
        ])
        .map_err(io)?;
        for k in &self.kinds {
            w.write_record([
                self.model_id.to_string(),
                self.n_pairs.to_string(),
                self.delta.to_string(),
                k.label.clone(),
                k.replications.to_string(),
                k.rejection_rate.to_string(),
                k.mean_std_error.to_string(),
                k.se_reduction_pct.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(format!("writing summary: {e}")))
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Runs `replications` replications on the current rayon pool.
pub fn run_monte_carlo(spec: &ModelSpec, kinds: &[AdjustmentSpec], replications: usize) -> Result<SimulationSummary> {
    if replications == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no estimators requested".into()));
    }
    spec.check()?;
    let results: Vec<Vec<KindOutcome>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| run_replication(spec, kinds, r))
        .collect::<Result<_>>()?;
    Ok(summarize(spec, kinds, &results))
}

/// [`run_monte_carlo`] on a dedicated pool of `threads` workers.
pub fn run_monte_carlo_threads(
    spec: &ModelSpec,
    kinds: &[AdjustmentSpec],
    replications: usize,
    threads: usize,
) -> Result<SimulationSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run_monte_carlo(spec, kinds, replications))
}

/// Aggregates per-replication outcomes in replication order.
pub fn summarize(spec: &ModelSpec, kinds: &[AdjustmentSpec], results: &[Vec<KindOutcome>]) -> SimulationSummary {
    let mut summaries: Vec<KindSummary> = kinds
        .iter()
        .enumerate()
        .map(|(k, ks)| {
            let reports: Vec<&EstimateReport> = results.iter().filter_map(|r| r[k].result.as_ref().ok()).collect();
            let m = reports.len();
            let mf = m as f64;
            let rejections = reports.iter().filter(|r| r.reject_h0).count();
            let mean_delta = reports.iter().map(|r| r.delta_hat).sum::<f64>() / mf;
            let sd_delta = if m > 1 {
                (reports.iter().map(|r| (r.delta_hat - mean_delta).powi(2)).sum::<f64>() / (mf - 1.0)).sqrt()
            } else {
                0.0
            };
            let mut sigmas: Vec<f64> = reports.iter().map(|r| r.sigma_hat).collect();
            sigmas.sort_by(f64::total_cmp);
            let median_sigma = match m {
                0 => f64::NAN,
                _ if m % 2 == 1 => sigmas[m / 2],
                _ => 0.5 * (sigmas[m / 2 - 1] + sigmas[m / 2]),
            };
            let covered = reports
                .iter()
                .filter(|r| r.ci_lower <= spec.delta && spec.delta <= r.ci_upper)
                .count();
            KindSummary {
                label: ks.label.clone(),
                replications: m,
                failures: results.len() - m,
                rejections,
                rejection_rate: rejections as f64 / mf,
                mean_std_error: reports.iter().map(|r| r.std_error).sum::<f64>() / mf,
                se_reduction_pct: None,
                mean_delta_hat: mean_delta,
                sd_delta_hat: sd_delta,
                median_sigma_hat: median_sigma,
                coverage: covered as f64 / mf,
            }
        })
        .collect();
    if let Some(base) = kinds.iter().position(|k| k.kind == AdjustmentKind::Unadjusted) {
        let base_se = summaries[base].mean_std_error;
        for s in &mut summaries {
            s.se_reduction_pct = Some(100.0 * (1.0 - s.mean_std_error / base_se));
        }
    }
    SimulationSummary {
        model_id: spec.model_id,
        n_pairs: spec.n_pairs,
        delta: spec.delta,
        seed: spec.seed,
        replications: results.len(),
        kinds: summaries,
    }
}

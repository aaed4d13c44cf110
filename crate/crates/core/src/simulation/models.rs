//! The fifteen data-generating processes.
//!
//! Every model draws `Y(d) = mu_d + m_d(X, W) + sigma_d(X, W) eps_d` with
//! `mu_0 = 0`, `mu_1 = delta` and independent standard normal errors. The
//! latent vector `V` is equicorrelated (`rho = 0.2`) for Models 1-11 and
//! AR(1) with coefficient 0.5 (Toeplitz `0.5^|j-k|`) for Models 12-15.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimators::{AdjustmentKind, AdjustmentSpec, CrossTerms, PsiSource};
use crate::normal::cdf;
use crate::regression::LassoConfig;
use crate::stream::Stream;

pub const RHO: f64 = 0.2;
const TOEPLITZ_DECAY: f64 = 0.5;
const HIGH_DIM_W: usize = 40;

pub(crate) const CHANNEL_UNITS: u64 = 0;
pub(crate) const CHANNEL_ASSIGN: u64 = 1;
const EPS_COUNTER: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub model_id: u8,
    pub n_pairs: usize,
    /// Treatment effect `mu_1 - mu_0`.
    pub delta: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(model_id: u8, n_pairs: usize, delta: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            model_id,
            n_pairs,
            delta,
            seed,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if !(1..=15).contains(&self.model_id) {
            return Err(Error::InvalidArgument(format!(
                "model must be between 1 and 15, got {}",
                self.model_id
            )));
        }
        if self.n_pairs < 2 {
            return Err(Error::TooFewPairs {
                required: 2,
                found: self.n_pairs,
            });
        }
        if !self.delta.is_finite() {
            return Err(Error::NonFinite("delta"));
        }
        Ok(())
    }
}

/// One draw of `2n` units with both potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedUnits {
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

/// Latent dimension of `V`.
fn latent_dim(model_id: u8) -> usize {
    match model_id {
        1..=6 => 2,
        7..=9 => 4,
        10 | 11 => 6,
        _ => 2 * HIGH_DIM_W,
    }
}

/// `(dim X, dim W)` of a model.
pub fn covariate_dims(model_id: u8) -> (usize, usize) {
    match model_id {
        1..=6 => (1, 1),
        7..=9 => (2, 2),
        10 | 11 => (4, 2),
        _ => (4, HIGH_DIM_W),
    }
}

fn latent(model_id: u8, s: &Stream, v: &mut [f64]) {
    if model_id >= 12 {
        v[0] = s.normal_at(0);
        let innov = (1.0 - TOEPLITZ_DECAY * TOEPLITZ_DECAY).sqrt();
        for k in 1..v.len() {
            v[k] = TOEPLITZ_DECAY * v[k - 1] + innov * s.normal_at(k as u64);
        }
    } else {
        let common = RHO.sqrt() * s.normal_at(0);
        let own = (1.0 - RHO).sqrt();
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = common + own * s.normal_at(k as u64 + 1);
        }
    }
}

struct Unit {
    x: Vec<f64>,
    w: Vec<f64>,
    m0: f64,
    m1: f64,
    sigma: f64,
}

fn draw_unit(model_id: u8, v: &[f64]) -> Unit {
    let rho = RHO;
    match model_id {
        1 => {
            let (x, w) = (cdf(v[0]), cdf(v[1]));
            let m = 4.0 * (w - 0.5);
            Unit {
                x: vec![x],
                w: vec![w],
                m0: m,
                m1: m,
                sigma: 1.0,
            }
        }
        2 | 3 => {
            let w = v[0] * v[1];
            let m = if model_id == 2 {
                (w - rho) + 2.0 * (v[0] * v[0] - 1.0)
            } else {
                0.25 * (w - rho) + (cdf(w) - 0.5) + 2.0 * (v[0] * v[0] - 1.0)
            };
            Unit {
                x: vec![cdf(v[0])],
                w: vec![w],
                m0: m,
                m1: m,
                sigma: 1.0,
            }
        }
        4..=6 => {
            let (x, w) = (v[0], v[0] * v[1]);
            let m0 = 2.0 * (w - rho) + (cdf(w) - 0.5) + 2.0 * (x * x - 1.0);
            let m1 = if model_id == 4 { m0 } else { m0 + cdf(x) - 0.5 };
            let sigma = if model_id == 6 { cdf(x) + 0.5 } else { 1.0 };
            Unit {
                x: vec![x],
                w: vec![w],
                m0,
                m1,
                sigma,
            }
        }
        7..=9 => {
            let x = vec![v[0], v[1]];
            let w = vec![v[0] * v[2], v[1] * v[3]];
            let m0 = w.iter().map(|&wk| 2.0 * (wk - rho) + (cdf(wk) - 0.5)).sum::<f64>() + (x[0] * x[0] - 1.0);
            let m1 = if model_id == 7 { m0 } else { m0 + cdf(x[0]) - 0.5 };
            let sigma = if model_id == 9 { cdf(x[0]) + 0.5 } else { 1.0 };
            Unit { x, w, m0, m1, sigma }
        }
        10 | 11 => {
            let x: Vec<f64> = v[..4].iter().map(|&z| cdf(z)).collect();
            let w = vec![v[0] * v[4], v[1] * v[5]];
            let m0 = w.iter().map(|&wk| (wk - rho) + 0.5 * (cdf(wk) - 0.5)).sum::<f64>()
                + 0.5 * (v[0] * v[0] - 1.0)
                + 0.5 * (v[1] * v[1] - 1.0);
            let m1 = if model_id == 10 {
                m0
            } else {
                m0 + 0.25 * x.iter().map(|xj| xj - 0.5).sum::<f64>()
            };
            Unit {
                x,
                w,
                m0,
                m1,
                sigma: 1.0,
            }
        }
        _ => {
            let x: Vec<f64> = v[..4].iter().map(|&z| cdf(z)).collect();
            let w: Vec<f64> = (0..HIGH_DIM_W).map(|k| v[k] * v[HIGH_DIM_W + k]).collect();
            let quad: f64 = v[..4].iter().map(|z| (z * z - 1.0) / 8.0).sum();
            let mut m0 = quad;
            for (k, &wk) in w.iter().enumerate() {
                let g = 1.0 / ((k + 1) * (k + 1)) as f64;
                m0 += g * wk;
                if model_id >= 13 {
                    m0 += g / 8.0 * (cdf(wk) - 0.5);
                }
            }
            let m1 = if model_id >= 14 {
                m0 + x
                    .iter()
                    .enumerate()
                    .map(|(j, xj)| (xj - 0.5) / ((j + 1) * (j + 1)) as f64)
                    .sum::<f64>()
            } else {
                m0
            };
            let sigma = if model_id == 15 { x[0] + 0.5 } else { 1.0 };
            Unit { x, w, m0, m1, sigma }
        }
    }
}

/// Draws replication `replication` of `spec`. Unit `i` reads only its own
/// stream, so the draw is a pure function of `(seed, replication, i)`.
pub fn generate_model(spec: &ModelSpec, replication: u64) -> Result<SimulatedUnits> {
    spec.check()?;
    let units = Stream::new(spec.seed).derive(replication).derive(CHANNEL_UNITS);
    let rows = 2 * spec.n_pairs;
    let (kx, kw) = covariate_dims(spec.model_id);
    let mut x = DMatrix::zeros(rows, kx);
    let mut w = DMatrix::zeros(rows, kw);
    let mut y0 = Vec::with_capacity(rows);
    let mut y1 = Vec::with_capacity(rows);
    let mut v = vec![0.0; latent_dim(spec.model_id)];
    for i in 0..rows {
        let s = units.derive(i as u64);
        latent(spec.model_id, &s, &mut v);
        let u = draw_unit(spec.model_id, &v);
        for (k, val) in u.x.iter().enumerate() {
            x[(i, k)] = *val;
        }
        for (k, val) in u.w.iter().enumerate() {
            w[(i, k)] = *val;
        }
        y0.push(u.m0 + u.sigma * s.normal_at(EPS_COUNTER));
        y1.push(spec.delta + u.m1 + u.sigma * s.normal_at(EPS_COUNTER + 1));
    }
    Ok(SimulatedUnits { x, w, y0, y1 })
}

/// Regressors of the LASSO-based adjustments for each model.
pub fn lasso_basis(model_id: u8) -> PsiSource {
    match model_id {
        1..=9 => PsiSource::Expanded(CrossTerms::All),
        10 | 11 => PsiSource::Expanded(CrossTerms::Pairs(vec![(0, 0), (1, 1), (2, 0), (3, 1)])),
        _ => PsiSource::XW,
    }
}

/// Slowly diverging penalty multiplier used by the simulation menus.
pub const SIMULATION_SLOW_DIVERGENCE: f64 = 1.0;

/// Estimators compared for each model: unadjusted, naive (W), naive2
/// (X and W), pfe (W) and refit for Models 1-11; unadjusted and refit for
/// Models 12-15.
pub fn default_menu(model_id: u8) -> Vec<AdjustmentSpec> {
    let lasso = LassoConfig {
        slow_divergence: Some(SIMULATION_SLOW_DIVERGENCE),
        ..LassoConfig::default()
    };
    let refit = AdjustmentSpec::new(AdjustmentKind::Refit, lasso_basis(model_id)).with_lasso(lasso);
    if model_id >= 12 {
        return vec![AdjustmentSpec::unadjusted(), refit];
    }
    vec![
        AdjustmentSpec::unadjusted(),
        AdjustmentSpec::new(AdjustmentKind::Naive, PsiSource::W),
        AdjustmentSpec::new(AdjustmentKind::Naive, PsiSource::XW).with_label("naive2"),
        AdjustmentSpec::new(AdjustmentKind::Pfe, PsiSource::W),
        refit,
    ]
}

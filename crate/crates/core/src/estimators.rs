//! Covariate adjustments. Each produces a [`WorkingModel`] that the doubly
//! robust combiner turns into a treatment-effect estimate.
//!
//! Regressors `psi` are built from a unit's `x` and `w` according to a
//! [`PsiSource`]. OLS-based kinds use them as given; the two LASSO kinds
//! standardize them first and map coefficients back to the raw scale.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::experiment::{doubly_robust_estimate, ExperimentData, WorkingModel};
use crate::regression::{iterate_penalty_loadings, ols_fit, LassoConfig, LassoFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdjustmentKind {
    Unadjusted,
    Naive,
    Interacted,
    Pfe,
    IntPfe,
    LassoIntermediate,
    Refit,
}

impl AdjustmentKind {
    pub const ALL: [AdjustmentKind; 7] = [
        AdjustmentKind::Unadjusted,
        AdjustmentKind::Naive,
        AdjustmentKind::Interacted,
        AdjustmentKind::Pfe,
        AdjustmentKind::IntPfe,
        AdjustmentKind::LassoIntermediate,
        AdjustmentKind::Refit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdjustmentKind::Unadjusted => "unadjusted",
            AdjustmentKind::Naive => "naive",
            AdjustmentKind::Interacted => "interacted",
            AdjustmentKind::Pfe => "pfe",
            AdjustmentKind::IntPfe => "int_pfe",
            AdjustmentKind::LassoIntermediate => "lasso_intermediate",
            AdjustmentKind::Refit => "refit",
        }
    }

    pub fn is_lasso(self) -> bool {
        matches!(self, AdjustmentKind::LassoIntermediate | AdjustmentKind::Refit)
    }
}

impl fmt::Display for AdjustmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdjustmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AdjustmentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown adjustment '{s}'")))
    }
}

/// Which cross products `x_j * w_k` the expanded basis contains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CrossTerms {
    All,
    Pairs(Vec<(usize, usize)>),
}

/// How regressors are built from a unit's `(x, w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PsiSource {
    W,
    X,
    XW,
    /// Selected columns of the concatenation `[x | w]`.
    Columns(Vec<usize>),
    /// `x, w, x^2, w^2`, cross products, then the linear and squared hinges
    /// `(v - med) I{v > med}` at the sample median of each covariate.
    /// Derived columns that come out constant are dropped.
    Expanded(CrossTerms),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentSpec {
    pub kind: AdjustmentKind,
    pub psi: PsiSource,
    pub lasso: LassoConfig,
    /// Add the LASSO intercepts to the arm working models. The estimate does
    /// not depend on this; it only changes the reported fitted values.
    pub include_intercept: bool,
    pub label: String,
}

impl AdjustmentSpec {
    pub fn new(kind: AdjustmentKind, psi: PsiSource) -> Self {
        Self {
            kind,
            psi,
            lasso: LassoConfig::default(),
            include_intercept: false,
            label: kind.name().to_string(),
        }
    }

    pub fn unadjusted() -> Self {
        Self::new(AdjustmentKind::Unadjusted, PsiSource::W)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_lasso(mut self, cfg: LassoConfig) -> Self {
        self.lasso = cfg;
        self
    }

    pub fn with_intercept(mut self, include: bool) -> Self {
        self.include_intercept = include;
        self
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

fn is_constant(col: &[f64]) -> bool {
    col.iter().all(|&v| v == col[0])
}

/// Regressor matrix (one row per unit) for `source`.
pub fn build_psi(data: &ExperimentData, source: &PsiSource) -> Result<DMatrix<f64>> {
    let n = data.n_units();
    let (kx, kw) = (data.kx(), data.kw());
    let x = data.x_matrix();
    let w = data.w_matrix();
    let concat = |idx: &[usize]| -> Result<DMatrix<f64>> {
        for &c in idx {
            if c >= kx + kw {
                return Err(Error::InvalidArgument(format!(
                    "regressor column {} out of range (x and w have {} columns)",
                    c + 1,
                    kx + kw
                )));
            }
        }
        Ok(DMatrix::from_fn(n, idx.len(), |i, c| {
            let col = idx[c];
            if col < kx {
                x[(i, col)]
            } else {
                w[(i, col - kx)]
            }
        }))
    };
    match source {
        PsiSource::W => Ok(w),
        PsiSource::X => Ok(x),
        PsiSource::XW => concat(&(0..kx + kw).collect::<Vec<_>>()),
        PsiSource::Columns(idx) => concat(idx),
        PsiSource::Expanded(cross) => {
            let mut cols: Vec<Vec<f64>> = Vec::new();
            let xc: Vec<Vec<f64>> = (0..kx).map(|k| x.column(k).iter().copied().collect()).collect();
            let wc: Vec<Vec<f64>> = (0..kw).map(|k| w.column(k).iter().copied().collect()).collect();
            cols.extend(xc.iter().cloned());
            cols.extend(wc.iter().cloned());
            cols.extend(xc.iter().map(|c| c.iter().map(|v| v * v).collect()));
            cols.extend(wc.iter().map(|c| c.iter().map(|v| v * v).collect()));
            let pairs: Vec<(usize, usize)> = match cross {
                CrossTerms::All => (0..kx).flat_map(|j| (0..kw).map(move |k| (j, k))).collect(),
                CrossTerms::Pairs(p) => p.clone(),
            };
            for (j, k) in pairs {
                if j >= kx || k >= kw {
                    return Err(Error::InvalidArgument(format!(
                        "cross term x{} * w{} out of range",
                        j + 1,
                        k + 1
                    )));
                }
                cols.push(xc[j].iter().zip(&wc[k]).map(|(a, b)| a * b).collect());
            }
            for group in [&xc, &wc] {
                let hinges: Vec<(Vec<f64>, Vec<f64>)> = group
                    .iter()
                    .map(|c| {
                        let med = median(&mut c.clone());
                        let lin: Vec<f64> = c.iter().map(|&v| if v > med { v - med } else { 0.0 }).collect();
                        let sq = lin.iter().map(|h| h * h).collect();
                        (lin, sq)
                    })
                    .collect();
                let (lin, sq): (Vec<_>, Vec<_>) = hinges.into_iter().unzip();
                cols.extend(lin);
                cols.extend(sq);
            }
            // Raw covariates are kept even if constant so the usual check
            // reports them; derived constant columns are simply dropped.
            let raw = kx + kw;
            let kept: Vec<Vec<f64>> = cols
                .into_iter()
                .enumerate()
                .filter(|(c, col)| *c < raw || !is_constant(col))
                .map(|(_, col)| col)
                .collect();
            Ok(DMatrix::from_fn(n, kept.len(), |i, c| kept[c][i]))
        }
    }
}

fn checked_psi(data: &ExperimentData, source: &PsiSource) -> Result<DMatrix<f64>> {
    let psi = build_psi(data, source)?;
    if psi.ncols() == 0 {
        return Err(Error::InvalidArgument("no adjustment regressors selected".into()));
    }
    for c in 0..psi.ncols() {
        if is_constant(psi.column(c).as_slice()) {
            return Err(Error::InvalidArgument(format!(
                "regressor column {} is constant",
                c + 1
            )));
        }
    }
    Ok(psi)
}

fn linear_index(psi: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (0..psi.nrows())
        .map(|i| beta.iter().enumerate().map(|(l, b)| psi[(i, l)] * b).sum())
        .collect()
}

/// Arm means of every regressor column: `(treated, control)`.
fn arm_means(data: &ExperimentData, psi: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = data.n_pairs() as f64;
    let p = psi.ncols();
    let mut mu1 = vec![0.0; p];
    let mut mu0 = vec![0.0; p];
    for (i, u) in data.units().iter().enumerate() {
        let target = if u.d == 1 { &mut mu1 } else { &mut mu0 };
        for l in 0..p {
            target[l] += psi[(i, l)];
        }
    }
    mu1.iter_mut().chain(mu0.iter_mut()).for_each(|v| *v /= n);
    (mu1, mu0)
}

fn centered_index(psi: &DMatrix<f64>, center: &[f64], coef: &[f64]) -> Vec<f64> {
    (0..psi.nrows())
        .map(|i| (0..psi.ncols()).map(|l| (psi[(i, l)] - center[l]) * coef[l]).sum())
        .collect()
}

fn singular(context: &'static str, hint: &str) -> Error {
    Error::Singular {
        context,
        hint: hint.to_string(),
    }
}

pub fn fit_unadjusted(data: &ExperimentData) -> WorkingModel {
    WorkingModel::zero("unadjusted", data.n_units())
}

/// OLS of `Y` on `(1, D, psi)`; both working models are `psi' beta`.
pub fn fit_naive(data: &ExperimentData, spec: &AdjustmentSpec) -> Result<WorkingModel> {
    let psi = checked_psi(data, &spec.psi)?;
    let p = psi.ncols();
    let d = data.d();
    let design = DMatrix::from_fn(data.n_units(), 2 + p, |i, c| match c {
        0 => 1.0,
        1 => d[i] as f64,
        _ => psi[(i, c - 2)],
    });
    let fit = ols_fit(&design, &data.y())?;
    if !fit.rank_ok {
        return Err(singular(
            "naive adjustment",
            "regressors are collinear with the intercept or treatment; prune columns",
        ));
    }
    let m = linear_index(&psi, &fit.coefficients[2..]);
    Ok(WorkingModel::new(spec.label.clone(), m.clone(), m).with_diagnostic("ols_delta", fit.coefficients[1]))
}

/// OLS of `Y` on `(1, D, psi - mean, D (psi - mean))`, with arm-specific
/// working models centered at the arm means.
pub fn fit_interacted(data: &ExperimentData, spec: &AdjustmentSpec) -> Result<WorkingModel> {
    let psi = checked_psi(data, &spec.psi)?;
    let p = psi.ncols();
    let d = data.d();
    let means: Vec<f64> = (0..p).map(|l| psi.column(l).mean()).collect();
    let design = DMatrix::from_fn(data.n_units(), 2 + 2 * p, |i, c| match c {
        0 => 1.0,
        1 => d[i] as f64,
        c if c < 2 + p => psi[(i, c - 2)] - means[c - 2],
        c => d[i] as f64 * (psi[(i, c - 2 - p)] - means[c - 2 - p]),
    });
    let fit = ols_fit(&design, &data.y())?;
    if !fit.rank_ok {
        return Err(singular(
            "interacted adjustment",
            "design is rank deficient; prune columns",
        ));
    }
    let gamma = &fit.coefficients[2..2 + p];
    let eta = &fit.coefficients[2 + p..];
    let slope1: Vec<f64> = gamma.iter().zip(eta).map(|(g, e)| g + e).collect();
    let (mu1, mu0) = arm_means(data, &psi);
    Ok(WorkingModel::new(
        spec.label.clone(),
        centered_index(&psi, &mu1, &slope1),
        centered_index(&psi, &mu0, gamma),
    )
    .with_diagnostic("ols_delta", fit.coefficients[1]))
}

/// Treated-minus-control differences `(D_a - D_b)(v_a - v_b)` of every
/// pair, for the outcome and each regressor column.
pub fn pairwise_differences(data: &ExperimentData, psi: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = data.n_pairs();
    let units = data.units();
    let mut dy = Vec::with_capacity(n);
    let mut dpsi = DMatrix::zeros(n, psi.ncols());
    for j in 0..n {
        let (t, c) = data.treated_control(j);
        dy.push(units[t].y - units[c].y);
        for l in 0..psi.ncols() {
            dpsi[(j, l)] = psi[(t, l)] - psi[(c, l)];
        }
    }
    (dy, dpsi)
}

/// Pair-fixed-effect regression through its pairwise-difference form:
/// regress `delta_Y` on `(1, delta_psi)`; the intercept is the estimate and
/// the slope the adjustment coefficient.
fn pfe_coefficients(data: &ExperimentData, psi: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let (dy, dpsi) = pairwise_differences(data, psi);
    let p = psi.ncols();
    if data.n_pairs() < p + 1 {
        return Err(singular(
            "pair fixed effects",
            &format!("{} pairs cannot identify {} slopes and an intercept", data.n_pairs(), p),
        ));
    }
    let design = DMatrix::from_fn(
        data.n_pairs(),
        1 + p,
        |j, c| if c == 0 { 1.0 } else { dpsi[(j, c - 1)] },
    );
    let fit = ols_fit(&design, &dy)?;
    if !fit.rank_ok {
        return Err(singular(
            "pair fixed effects",
            "regressors have no usable within-pair variation; the estimator is undefined (fall back to unadjusted)",
        ));
    }
    Ok((fit.coefficients[0], fit.coefficients[1..].to_vec()))
}

pub fn fit_pfe(data: &ExperimentData, spec: &AdjustmentSpec) -> Result<WorkingModel> {
    let psi = checked_psi(data, &spec.psi)?;
    let (delta, beta) = pfe_coefficients(data, &psi)?;
    let m = linear_index(&psi, &beta);
    Ok(WorkingModel::new(spec.label.clone(), m.clone(), m).with_diagnostic("ols_delta", delta))
}

/// Pair fixed effects with a treatment interaction. Differencing within
/// pairs reduces the regression to `delta_Y` on
/// `(1, delta_psi, psi_treated - mu_psi(1))` with coefficients
/// `(Delta, gamma, eta)`. The working models
/// `m1 = (psi - mu_psi(1))'(gamma + eta)` and
/// `m0 = (psi - mu_psi(0))'(gamma - eta)` reproduce the regression's
/// `Delta` through the combiner.
pub fn fit_int_pfe(data: &ExperimentData, spec: &AdjustmentSpec) -> Result<WorkingModel> {
    let psi = checked_psi(data, &spec.psi)?;
    let p = psi.ncols();
    let n = data.n_pairs();
    if n < 2 * p + 1 {
        return Err(singular(
            "interacted pair fixed effects",
            &format!("{n} pairs cannot identify {} coefficients", 2 * p + 1),
        ));
    }
    let (dy, dpsi) = pairwise_differences(data, &psi);
    let (mu1, mu0) = arm_means(data, &psi);
    let design = DMatrix::from_fn(n, 1 + 2 * p, |j, c| match c {
        0 => 1.0,
        c if c <= p => dpsi[(j, c - 1)],
        c => {
            let (t, _) = data.treated_control(j);
            psi[(t, c - 1 - p)] - mu1[c - 1 - p]
        }
    });
    let fit = ols_fit(&design, &dy)?;
    if !fit.rank_ok {
        return Err(singular(
            "interacted pair fixed effects",
            "design is rank deficient; regressors lack within-pair variation",
        ));
    }
    let gamma = &fit.coefficients[1..1 + p];
    let eta = &fit.coefficients[1 + p..];
    let slope1: Vec<f64> = gamma.iter().zip(eta).map(|(g, e)| g + e).collect();
    let slope0: Vec<f64> = gamma.iter().zip(eta).map(|(g, e)| g - e).collect();
    Ok(WorkingModel::new(
        spec.label.clone(),
        centered_index(&psi, &mu1, &slope1),
        centered_index(&psi, &mu0, &slope0),
    )
    .with_diagnostic("ols_delta", fit.coefficients[0]))
}

/// Per-arm LASSO fits mapped back to the raw regressor scale.
struct LassoStage {
    psi: DMatrix<f64>,
    beta1: Vec<f64>,
    beta0: Vec<f64>,
    alpha1: f64,
    alpha0: f64,
    fit1: LassoFit,
    fit0: LassoFit,
}

impl LassoStage {
    fn predictions(&self, include_intercept: bool) -> (Vec<f64>, Vec<f64>) {
        let mut g1 = linear_index(&self.psi, &self.beta1);
        let mut g0 = linear_index(&self.psi, &self.beta0);
        if include_intercept {
            g1.iter_mut().for_each(|v| *v += self.alpha1);
            g0.iter_mut().for_each(|v| *v += self.alpha0);
        }
        (g1, g0)
    }

    fn annotate(&self, mut wm: WorkingModel) -> WorkingModel {
        let nz = |b: &[f64]| b.iter().filter(|v| **v != 0.0).count() as f64;
        for (arm, fit, beta) in [("1", &self.fit1, &self.beta1), ("0", &self.fit0, &self.beta0)] {
            wm.diagnostics.insert(format!("lasso_lambda_{arm}"), fit.lambda);
            wm.diagnostics.insert(format!("lasso_nonzero_{arm}"), nz(beta));
            wm.diagnostics.insert(format!("lasso_kkt_{arm}"), fit.kkt_violation);
            wm.diagnostics
                .insert(format!("lasso_converged_{arm}"), if fit.converged { 1.0 } else { 0.0 });
        }
        wm
    }
}

fn lasso_stage(data: &ExperimentData, spec: &AdjustmentSpec) -> Result<LassoStage> {
    let psi = checked_psi(data, &spec.psi)?;
    let (rows, p) = psi.shape();
    let mut center = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for l in 0..p {
        let col = psi.column(l);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rows - 1) as f64;
        center[l] = mean;
        scale[l] = var.sqrt();
    }
    let standardized = DMatrix::from_fn(rows, p, |i, l| (psi[(i, l)] - center[l]) / scale[l]);
    let y = data.y();
    let d = data.d();
    let fit_arm = |arm: u8| -> Result<(LassoFit, Vec<f64>, f64)> {
        let mask: Vec<bool> = d.iter().map(|&v| v == arm).collect();
        let fit = iterate_penalty_loadings(&standardized, &y, &mask, &spec.lasso)?;
        let beta: Vec<f64> = fit.beta.iter().zip(&scale).map(|(b, s)| b / s).collect();
        let alpha = fit.intercept - beta.iter().zip(&center).map(|(b, c)| b * c).sum::<f64>();
        Ok((fit, beta, alpha))
    };
    let (fit1, beta1, alpha1) = fit_arm(1)?;
    let (fit0, beta0, alpha0) = fit_arm(0)?;
    Ok(LassoStage {
        psi,
        beta1,
        beta0,
        alpha1,
        alpha0,
        fit1,
        fit0,
    })
}

/// Per-arm LASSO with iterated loadings; arm `d`'s working model is
/// `psi' beta_d` (plus the arm intercept when requested).
pub fn fit_lasso_intermediate(data: &ExperimentData, spec: &AdjustmentSpec) -> Result<WorkingModel> {
    let stage = lasso_stage(data, spec)?;
    let (m1, m0) = stage.predictions(spec.include_intercept);
    let (a1, a0) = stage.predictions(!spec.include_intercept);
    let other = WorkingModel::new("", a1, a0);
    let wm = WorkingModel::new(spec.label.clone(), m1, m0);
    let (with, without) = if spec.include_intercept {
        (
            doubly_robust_estimate(data, &wm)?,
            doubly_robust_estimate(data, &other)?,
        )
    } else {
        (
            doubly_robust_estimate(data, &other)?,
            doubly_robust_estimate(data, &wm)?,
        )
    };
    Ok(stage
        .annotate(wm)
        .with_diagnostic("delta_with_intercept", with)
        .with_diagnostic("delta_without_intercept", without))
}

/// Relative tolerance of the refit rank policy.
pub const REFIT_RANK_TOL: f64 = 1e-8;

/// Pair-fixed-effect refit on supplied predictions (one column per arm
/// model).
///
/// Rank policy: a column whose within-pair differences have (relatively)
/// no variance is dropped; if the remaining two are collinear within pairs,
/// the one with lower within-pair variance is dropped. With nothing left the
/// working model falls back to zero (the unadjusted estimator) and
/// `fallback_unadjusted` is set to 1.
pub fn refit_on_predictions(data: &ExperimentData, gamma: &DMatrix<f64>, label: &str) -> Result<WorkingModel> {
    if gamma.nrows() != data.n_units() {
        return Err(Error::LengthMismatch {
            what: "prediction rows",
            expected: data.n_units(),
            found: gamma.nrows(),
        });
    }
    let (_, dg) = pairwise_differences(data, gamma);
    let n = dg.nrows() as f64;
    let k = gamma.ncols();
    let means: Vec<f64> = (0..k).map(|c| dg.column(c).sum() / n).collect();
    let cov = |a: usize, b: usize| {
        (0..dg.nrows())
            .map(|j| (dg[(j, a)] - means[a]) * (dg[(j, b)] - means[b]))
            .sum::<f64>()
            / n
    };
    let var: Vec<f64> = (0..k).map(|c| cov(c, c)).collect();
    let mut keep: Vec<usize> = (0..k)
        .filter(|&c| {
            let level = gamma.column(c).iter().map(|v| v * v).sum::<f64>() / gamma.nrows() as f64;
            var[c] > REFIT_RANK_TOL * level && var[c] > 0.0
        })
        .collect();
    let mut dropped = 0.0;
    if keep.len() == 2 {
        let (a, b) = (keep[0], keep[1]);
        let det = var[a] * var[b] - cov(a, b).powi(2);
        if det <= REFIT_RANK_TOL * var[a] * var[b] {
            let drop = if var[b] <= var[a] { b } else { a };
            keep.retain(|&c| c != drop);
            dropped = (drop + 1) as f64;
        }
    }
    let fallback = |reason: f64| {
        WorkingModel::zero(label, data.n_units())
            .with_diagnostic("fallback_unadjusted", 1.0)
            .with_diagnostic("fallback_reason", reason)
    };
    if keep.is_empty() {
        return Ok(fallback(1.0));
    }
    let cols = DMatrix::from_fn(gamma.nrows(), keep.len(), |i, c| gamma[(i, keep[c])]);
    match pfe_coefficients(data, &cols) {
        Ok((delta, beta)) => {
            let m = linear_index(&cols, &beta);
            Ok(WorkingModel::new(label, m.clone(), m)
                .with_diagnostic("fallback_unadjusted", 0.0)
                .with_diagnostic("dropped_column", dropped)
                .with_diagnostic("ols_delta", delta))
        }
        Err(Error::Singular { .. }) => Ok(fallback(2.0)),
        Err(e) => Err(e),
    }
}

/// LASSO predictions of both arms, refit with pair fixed effects.
pub fn fit_refit(data: &ExperimentData, spec: &AdjustmentSpec) -> Result<WorkingModel> {
    let stage = lasso_stage(data, spec)?;
    let (g1, g0) = stage.predictions(spec.include_intercept);
    let gamma = DMatrix::from_fn(data.n_units(), 2, |i, c| if c == 0 { g1[i] } else { g0[i] });
    let wm = refit_on_predictions(data, &gamma, &spec.label)?;
    Ok(stage.annotate(wm))
}

/// Dispatches on `spec.kind`.
pub fn fit(data: &ExperimentData, spec: &AdjustmentSpec) -> Result<WorkingModel> {
    match spec.kind {
        AdjustmentKind::Unadjusted => {
            let mut wm = fit_unadjusted(data);
            wm.label = spec.label.clone();
            Ok(wm)
        }
        AdjustmentKind::Naive => fit_naive(data, spec),
        AdjustmentKind::Interacted => fit_interacted(data, spec),
        AdjustmentKind::Pfe => fit_pfe(data, spec),
        AdjustmentKind::IntPfe => fit_int_pfe(data, spec),
        AdjustmentKind::LassoIntermediate => fit_lasso_intermediate(data, spec),
        AdjustmentKind::Refit => fit_refit(data, spec),
    }
}

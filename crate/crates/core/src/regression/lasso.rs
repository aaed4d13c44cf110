//! Weighted l1-penalized least squares by cyclic coordinate descent, the
//! penalty level rule, and iterated data-driven penalty loadings.
//!
//! The objective for a sample of `n` rows is
//!
//! ```text
//! (1/n) sum_i (y_i - a - x_i'b)^2 + lambda * sum_l omega_l |b_l|
//! ```
//!
//! with the intercept `a` unpenalized. Coordinate descent runs on the
//! centered Gram matrix, so a sweep costs `O(p^2)` regardless of `n`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoConfig {
    /// Maximum coordinate-descent sweeps per fit.
    pub max_iter: usize,
    /// Convergence tolerance on the largest coefficient change in a sweep
    /// (and on the subgradient-condition excess).
    pub tol: f64,
    /// Number of loading-refinement steps.
    pub loading_steps: usize,
    /// Slowly diverging multiplier of the penalty level. `None` uses
    /// `max(1, ln ln 2n)`.
    pub slow_divergence: Option<f64>,
    /// Tail mass in the penalty-level rule.
    pub gamma: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-7,
            loading_steps: 15,
            slow_divergence: None,
            gamma: 0.1,
        }
    }
}

impl LassoConfig {
    pub fn slow_divergence_for(&self, n_pairs: usize) -> f64 {
        self.slow_divergence
            .unwrap_or_else(|| (2.0 * n_pairs as f64).ln().ln().max(1.0))
    }

    fn check(&self) -> Result<()> {
        let ok = self.max_iter > 0
            && self.tol > 0.0
            && self.loading_steps > 0
            && self.gamma > 0.0
            && self.slow_divergence.is_none_or(|v| v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid lasso configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub loadings: Vec<f64>,
    pub lambda: f64,
    /// Largest excess over the subgradient conditions at the returned iterate.
    pub kkt_violation: f64,
    pub converged: bool,
    pub sweeps: usize,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
}

/// `(ll / sqrt(n)) * Phi^{-1}(1 - gamma / (2 ln(n) p))`.
pub fn compute_lambda(n_pairs: usize, p: usize, cfg: &LassoConfig) -> Result<f64> {
    if n_pairs < 2 {
        return Err(Error::TooFewPairs {
            required: 2,
            found: n_pairs,
        });
    }
    if p == 0 {
        return Err(Error::InvalidArgument("penalty level needs p >= 1".into()));
    }
    let n = n_pairs as f64;
    let arg = 1.0 - cfg.gamma / (2.0 * n.ln() * p as f64);
    let z = normal::quantile(arg)?;
    Ok(cfg.slow_divergence_for(n_pairs) / n.sqrt() * z)
}

/// Centered sufficient statistics of one regression sample.
struct GramProblem {
    p: usize,
    x_mean: Vec<f64>,
    y_mean: f64,
    /// (1/n) Xc'Xc, row-major.
    gram: Vec<f64>,
    /// (1/n) Xc'yc
    xty: Vec<f64>,
    /// (1/n) yc'yc
    yy: f64,
}

impl GramProblem {
    fn new(design: &DMatrix<f64>, rows: &[usize], response: &[f64]) -> Self {
        let n = rows.len();
        let p = design.ncols();
        let nf = n as f64;
        let x_mean: Vec<f64> = (0..p)
            .map(|l| rows.iter().map(|&i| design[(i, l)]).sum::<f64>() / nf)
            .collect();
        let y_mean = rows.iter().map(|&i| response[i]).sum::<f64>() / nf;

        let mut xc = vec![0.0; n * p];
        for (r, &i) in rows.iter().enumerate() {
            for l in 0..p {
                xc[l * n + r] = design[(i, l)] - x_mean[l];
            }
        }
        let yc: Vec<f64> = rows.iter().map(|&i| response[i] - y_mean).collect();
        let col = |l: usize| &xc[l * n..(l + 1) * n];
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();

        let mut gram = vec![0.0; p * p];
        for a in 0..p {
            for b in a..p {
                let g = dot(col(a), col(b)) / nf;
                gram[a * p + b] = g;
                gram[b * p + a] = g;
            }
        }
        let xty = (0..p).map(|l| dot(col(l), &yc) / nf).collect();
        let yy = dot(&yc, &yc) / nf;
        Self {
            p,
            x_mean,
            y_mean,
            gram,
            xty,
            yy,
        }
    }

    fn objective(&self, beta: &[f64], gb: &[f64], penalty: &[f64]) -> f64 {
        let mut q = self.yy;
        let mut pen = 0.0;
        for l in 0..self.p {
            q += beta[l] * (gb[l] - 2.0 * self.xty[l]);
            pen += penalty[l] * beta[l].abs();
        }
        q + pen
    }

    /// `penalty[l] = lambda * omega_l`.
    fn kkt_violation(&self, beta: &[f64], gb: &[f64], penalty: &[f64]) -> f64 {
        (0..self.p)
            .map(|l| {
                let grad = 2.0 * (gb[l] - self.xty[l]);
                if beta[l] != 0.0 {
                    (grad + penalty[l] * beta[l].signum()).abs()
                } else {
                    (grad.abs() - penalty[l]).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    fn solve(&self, penalty: &[f64], mut beta: Vec<f64>, cfg: &LassoConfig) -> Solved {
        let p = self.p;
        let mut gb = vec![0.0; p];
        for a in 0..p {
            if beta[a] != 0.0 {
                for l in 0..p {
                    gb[l] += self.gram[l * p + a] * beta[a];
                }
            }
        }
        let kkt_tol = cfg.tol * self.xty.iter().fold(1.0, |m: f64, v| m.max(v.abs()));
        let mut trace = Vec::new();
        let mut prev = self.objective(&beta, &gb, penalty);
        let mut converged = false;
        let mut sweeps = 0;
        while sweeps < cfg.max_iter {
            sweeps += 1;
            let mut max_change: f64 = 0.0;
            for l in 0..p {
                let g_ll = self.gram[l * p + l];
                if g_ll <= 0.0 {
                    continue;
                }
                let rho = self.xty[l] - gb[l] + g_ll * beta[l];
                let half = 0.5 * penalty[l];
                let new = if rho > half {
                    (rho - half) / g_ll
                } else if rho < -half {
                    (rho + half) / g_ll
                } else {
                    0.0
                };
                let delta = new - beta[l];
                if delta != 0.0 {
                    beta[l] = new;
                    for k in 0..p {
                        gb[k] += self.gram[k * p + l] * delta;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            let obj = self.objective(&beta, &gb, penalty);
            debug_assert!(
                obj <= prev + 1e-10 * (1.0 + prev.abs()),
                "coordinate descent increased the objective: {prev} -> {obj}"
            );
            trace.push(obj);
            prev = obj;
            if max_change < cfg.tol && self.kkt_violation(&beta, &gb, penalty) <= kkt_tol {
                converged = true;
                break;
            }
        }
        let kkt = self.kkt_violation(&beta, &gb, penalty);
        Solved {
            beta,
            kkt,
            converged,
            sweeps,
            trace,
        }
    }

    fn intercept(&self, beta: &[f64]) -> f64 {
        self.y_mean - self.x_mean.iter().zip(beta).map(|(m, b)| m * b).sum::<f64>()
    }
}

struct Solved {
    beta: Vec<f64>,
    kkt: f64,
    converged: bool,
    sweeps: usize,
    trace: Vec<f64>,
}

fn check_inputs(design: &DMatrix<f64>, response: &[f64]) -> Result<()> {
    if response.len() != design.nrows() {
        return Err(Error::LengthMismatch {
            what: "response",
            expected: design.nrows(),
            found: response.len(),
        });
    }
    if design.iter().chain(response).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lasso input"));
    }
    Ok(())
}

/// Minimizes the weighted lasso objective over all rows of `design`.
///
/// Returns the last iterate with `converged = false` when `max_iter` sweeps
/// are exhausted; `kkt_violation` then says how far off it is.
pub fn weighted_lasso_fit(
    design: &DMatrix<f64>,
    response: &[f64],
    loadings: &[f64],
    lambda: f64,
    cfg: &LassoConfig,
) -> Result<LassoFit> {
    cfg.check()?;
    check_inputs(design, response)?;
    if loadings.len() != design.ncols() {
        return Err(Error::LengthMismatch {
            what: "loadings",
            expected: design.ncols(),
            found: loadings.len(),
        });
    }
    if let Some(column) = loadings.iter().position(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::ZeroLoading { column });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("penalty level {lambda}")));
    }
    if design.nrows() == 0 {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let rows: Vec<usize> = (0..design.nrows()).collect();
    let problem = GramProblem::new(design, &rows, response);
    let penalty: Vec<f64> = loadings.iter().map(|w| lambda * w).collect();
    let solved = problem.solve(&penalty, vec![0.0; problem.p], cfg);
    Ok(LassoFit {
        intercept: problem.intercept(&solved.beta),
        beta: solved.beta,
        loadings: loadings.to_vec(),
        lambda,
        kkt_violation: solved.kkt,
        converged: solved.converged,
        sweeps: solved.sweeps,
        objective_trace: solved.trace,
    })
}

/// Loadings `omega_l = sqrt((1/n) sum_i x_il^2 e_i^2)` over the arm's rows.
fn loadings_from(design: &DMatrix<f64>, rows: &[usize], resid: &[f64]) -> Result<Vec<f64>> {
    let n = rows.len() as f64;
    (0..design.ncols())
        .map(|l| {
            let s: f64 = rows.iter().zip(resid).map(|(&i, e)| (design[(i, l)] * e).powi(2)).sum();
            let w = (s / n).sqrt();
            if w > 0.0 && w.is_finite() {
                Ok(w)
            } else {
                Err(Error::ZeroLoading { column: l })
            }
        })
        .collect()
}

/// Iterated penalty loadings for the rows selected by `arm_mask`.
///
/// Step 0 uses the raw outcome as residual; each of the `loading_steps`
/// steps recomputes the loadings from the previous residuals and refits,
/// warm-started, at the penalty level from [`compute_lambda`]. Returns the
/// last step's fit.
pub fn iterate_penalty_loadings(
    design: &DMatrix<f64>,
    response: &[f64],
    arm_mask: &[bool],
    cfg: &LassoConfig,
) -> Result<LassoFit> {
    cfg.check()?;
    check_inputs(design, response)?;
    if arm_mask.len() != design.nrows() {
        return Err(Error::LengthMismatch {
            what: "arm mask",
            expected: design.nrows(),
            found: arm_mask.len(),
        });
    }
    let rows: Vec<usize> = (0..design.nrows()).filter(|&i| arm_mask[i]).collect();
    let p = design.ncols();
    let lambda = compute_lambda(rows.len(), p, cfg)?;
    let problem = GramProblem::new(design, &rows, response);

    let mut resid: Vec<f64> = rows.iter().map(|&i| response[i]).collect();
    let mut beta = vec![0.0; p];
    let mut last = None;
    for _ in 0..cfg.loading_steps {
        let loadings = loadings_from(design, &rows, &resid)?;
        let penalty: Vec<f64> = loadings.iter().map(|w| lambda * w).collect();
        let solved = problem.solve(&penalty, beta, cfg);
        let intercept = problem.intercept(&solved.beta);
        for (r, &i) in rows.iter().enumerate() {
            let fitted: f64 = (0..p).map(|l| design[(i, l)] * solved.beta[l]).sum();
            resid[r] = response[i] - intercept - fitted;
        }
        beta = solved.beta.clone();
        last = Some(LassoFit {
            intercept,
            beta: solved.beta,
            loadings,
            lambda,
            kkt_violation: solved.kkt,
            converged: solved.converged,
            sweeps: solved.sweeps,
            objective_trace: solved.trace,
        });
    }
    Ok(last.expect("loading_steps > 0"))
}

/// Objective value of `(intercept, beta)` on all rows of `design`.
pub fn lasso_objective(
    design: &DMatrix<f64>,
    response: &[f64],
    intercept: f64,
    beta: &[f64],
    loadings: &[f64],
    lambda: f64,
) -> f64 {
    let n = design.nrows() as f64;
    let rss: f64 = (0..design.nrows())
        .map(|i| {
            let fit: f64 = beta.iter().enumerate().map(|(l, b)| design[(i, l)] * b).sum();
            (response[i] - intercept - fit).powi(2)
        })
        .sum();
    rss / n + lambda * loadings.iter().zip(beta).map(|(w, b)| w * b.abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::ols_fit;
    use crate::stream::Stream;

    fn random_problem(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>) {
        let s = Stream::new(seed);
        let x = DMatrix::from_fn(n, p, |i, l| s.normal_at((i * p + l) as u64));
        let y = (0..n)
            .map(|i| {
                let signal: f64 = (0..p.min(3)).map(|l| x[(i, l)] * (l as f64 + 1.0)).sum();
                signal + s.normal_at(10_000 + i as u64)
            })
            .collect();
        (x, y)
    }

    #[test]
    fn huge_penalty_shrinks_to_mean() {
        let (x, y) = random_problem(1, 30, 4);
        let fit = weighted_lasso_fit(&x, &y, &[1.0; 4], 1e6, &LassoConfig::default()).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        let mean = y.iter().sum::<f64>() / 30.0;
        assert!((fit.intercept - mean).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_soft_threshold() {
        // centred regressor with (1/n) sum x^2 = 1 and (1/n) sum x y = rho
        let x = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let y = [0.9, -0.7, 0.5, -0.5];
        let rho = (0.9 + 0.7 + 0.5 + 0.5) / 4.0;
        for (lambda, omega) in [(0.1, 1.0), (0.3, 2.0), (0.0, 1.0), (1.4, 2.0)] {
            let fit = weighted_lasso_fit(&x, &y, &[omega], lambda, &LassoConfig::default()).unwrap();
            let expected = (rho - lambda * omega / 2.0_f64).max(0.0);
            assert!((fit.beta[0] - expected).abs() < 1e-12, "lambda {lambda}");
        }
    }

    #[test]
    fn zero_penalty_is_ols() {
        let (x, y) = random_problem(2, 40, 5);
        let fit = weighted_lasso_fit(&x, &y, &[1.0; 5], 0.0, &LassoConfig::default()).unwrap();
        let design = DMatrix::from_fn(40, 6, |i, c| if c == 0 { 1.0 } else { x[(i, c - 1)] });
        let ols = ols_fit(&design, &y).unwrap();
        assert!((fit.intercept - ols.coefficients[0]).abs() < 1e-6);
        for l in 0..5 {
            assert!((fit.beta[l] - ols.coefficients[l + 1]).abs() < 1e-6);
        }
    }

    #[test]
    fn objective_never_increases_and_kkt_holds() {
        for seed in 0..10 {
            let (x, y) = random_problem(seed, 50, 8);
            let loadings: Vec<f64> = (0..8).map(|l| 0.5 + l as f64 / 8.0).collect();
            let fit = weighted_lasso_fit(&x, &y, &loadings, 0.2, &LassoConfig::default()).unwrap();
            assert!(fit.converged);
            assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            assert!(fit.kkt_violation <= 1e-6);
            let obj = lasso_objective(&x, &y, fit.intercept, &fit.beta, &loadings, 0.2);
            assert!((obj - fit.objective_trace.last().unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn lambda_monotone_in_p_and_n() {
        let cfg = LassoConfig {
            slow_divergence: Some(1.0),
            ..Default::default()
        };
        assert!(compute_lambda(100, 100, &cfg).unwrap() > compute_lambda(100, 10, &cfg).unwrap());
        assert!(compute_lambda(10_000, 10, &cfg).unwrap() < compute_lambda(100, 10, &cfg).unwrap());
    }

    #[test]
    fn lambda_reference_value() {
        // mpmath: Phi^{-1}(1 - 0.1 / (2 ln(100) 10)) / 10
        let cfg = LassoConfig {
            slow_divergence: Some(1.0),
            ..Default::default()
        };
        let lam = compute_lambda(100, 10, &cfg).unwrap();
        assert!((lam - 0.306_571_906_422_116_94).abs() < 1e-10);
    }

    #[test]
    fn lambda_positive_over_simulation_grid() {
        let cfg = LassoConfig::default();
        for n in [2, 3, 50, 100, 200, 1000] {
            for p in [1, 9, 20, 44, 84] {
                assert!(compute_lambda(n, p, &cfg).unwrap() > 0.0);
            }
        }
        assert!(compute_lambda(1, 3, &cfg).is_err());
    }

    #[test]
    fn default_slow_divergence() {
        let cfg = LassoConfig::default();
        assert_eq!(cfg.slow_divergence_for(2), 1.0);
        assert!((cfg.slow_divergence_for(200) - 400f64.ln().ln()).abs() < 1e-15);
        assert_eq!(cfg.loading_steps, 15);
    }

    #[test]
    fn first_step_loadings_use_raw_outcome() {
        let (x, y) = random_problem(4, 30, 3);
        let mask: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        let cfg = LassoConfig {
            loading_steps: 1,
            ..Default::default()
        };
        let fit = iterate_penalty_loadings(&x, &y, &mask, &cfg).unwrap();
        for l in 0..3 {
            let expected = ((0..30)
                .filter(|i| i % 2 == 0)
                .map(|i| (x[(i, l)] * y[i]).powi(2))
                .sum::<f64>()
                / 15.0)
                .sqrt();
            assert!((fit.loadings[l] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn loadings_settle_on_sparse_problem() {
        let s = Stream::new(21);
        let (n, p) = (200, 20);
        let x = DMatrix::from_fn(n, p, |i, l| s.normal_at((i * p + l) as u64));
        let y: Vec<f64> = (0..n)
            .map(|i| 2.0 * x[(i, 0)] - x[(i, 3)] + s.normal_at(50_000 + i as u64))
            .collect();
        let mask = vec![true; n];
        let run = |steps| {
            let cfg = LassoConfig {
                loading_steps: steps,
                ..Default::default()
            };
            iterate_penalty_loadings(&x, &y, &mask, &cfg).unwrap()
        };
        let before = run(14);
        let last = run(15);
        let change = before
            .loadings
            .iter()
            .zip(&last.loadings)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(change < 1e-3, "loading change {change}");
        assert!(last.beta[0] > 1.0 && last.beta[3] < -0.3);
    }

    #[test]
    fn zero_column_is_reported() {
        let mut x = DMatrix::from_fn(10, 3, |i, l| (i + l) as f64);
        x.column_mut(1).fill(0.0);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let err = iterate_penalty_loadings(&x, &y, &[true; 10], &LassoConfig::default()).unwrap_err();
        assert_eq!(err, Error::ZeroLoading { column: 1 });
    }
}

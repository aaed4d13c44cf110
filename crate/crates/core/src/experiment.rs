//! Experiment records, pairing plans, working models and the doubly robust
//! combiner every adjustment feeds into.
//!
//! Indices are 0-based in the API and 1-based in anything printed for a
//! human (error messages, CLI output).

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One experimental unit: outcome, arm, matching covariates `x` and
/// adjustment covariates `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub unit_id: String,
    pub y: f64,
    pub d: u8,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl UnitRecord {
    pub fn new(unit_id: impl Into<String>, y: f64, d: u8, x: Vec<f64>, w: Vec<f64>) -> Self {
        Self {
            unit_id: unit_id.into(),
            y,
            d,
            x,
            w,
        }
    }
}

/// An ordered list of index pairs partitioning `0..2n`.
///
/// The order is meaningful: pairs `2j` and `2j + 1` form a "pair of pairs"
/// for the variance estimator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPlan {
    pairs: Vec<(usize, usize)>,
}

impl PairingPlan {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(msg) = partition_violation(&pairs, pairs.len() * 2) {
            return Err(Error::InvalidPlan(msg));
        }
        Ok(Self { pairs })
    }

    /// `((0,1), (2,3), ...)` over `2n` units.
    pub fn consecutive(n_pairs: usize) -> Self {
        Self {
            pairs: (0..n_pairs).map(|j| (2 * j, 2 * j + 1)).collect(),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn unit_count(&self) -> usize {
        2 * self.pairs.len()
    }

    /// Same membership, new sequence. `order[k]` is the old position of the
    /// pair placed at position `k`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.pairs.len() {
            return Err(Error::LengthMismatch {
                what: "pair order",
                expected: self.pairs.len(),
                found: order.len(),
            });
        }
        let mut seen = vec![false; order.len()];
        for &k in order {
            if k >= seen.len() || std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidPlan("pair order is not a permutation".into()));
            }
        }
        Ok(Self {
            pairs: order.iter().map(|&k| self.pairs[k]).collect(),
        })
    }

    /// Pair index (position in the plan) of every unit.
    pub fn pair_of_unit(&self) -> Vec<usize> {
        let mut out = vec![0; self.unit_count()];
        for (j, &(a, b)) in self.pairs.iter().enumerate() {
            out[a] = j;
            out[b] = j;
        }
        out
    }
}

fn partition_violation(pairs: &[(usize, usize)], unit_count: usize) -> Option<String> {
    let mut seen = HashSet::with_capacity(unit_count);
    for (j, &(a, b)) in pairs.iter().enumerate() {
        for idx in [a, b] {
            if idx >= unit_count {
                return Some(format!(
                    "pair {} references unit {} but only {} units exist",
                    j + 1,
                    idx + 1,
                    unit_count
                ));
            }
            if !seen.insert(idx) {
                return Some(format!("unit {} appears more than once (pair {})", idx + 1, j + 1));
            }
        }
    }
    if seen.len() != unit_count {
        return Some(format!("plan covers {} of {} units", seen.len(), unit_count));
    }
    None
}

/// Outcome of [`validate_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub passed: bool,
    /// 0-based position of the first pair found to be at fault, if any.
    pub first_offending_pair: Option<usize>,
    pub message: Option<String>,
}

impl Validation {
    fn pass() -> Self {
        Self {
            passed: true,
            first_offending_pair: None,
            message: None,
        }
    }

    fn fail(pair: Option<usize>, message: String) -> Self {
        Self {
            passed: false,
            first_offending_pair: pair,
            message: Some(message),
        }
    }
}

/// Checks every record and plan invariant without failing; the first problem
/// found is reported.
pub fn validate_experiment(units: &[UnitRecord], pairs: &[(usize, usize)]) -> Validation {
    if units.is_empty() {
        return Validation::fail(None, "no units".into());
    }
    if !units.len().is_multiple_of(2) {
        return Validation::fail(None, format!("odd number of units ({})", units.len()));
    }
    if pairs.len() * 2 != units.len() {
        return Validation::fail(
            None,
            format!("{} pairs cannot cover {} units", pairs.len(), units.len()),
        );
    }
    let kx = units[0].x.len();
    let kw = units[0].w.len();
    if kx == 0 {
        return Validation::fail(None, "matching covariates x are empty".into());
    }
    for (i, u) in units.iter().enumerate() {
        if u.d > 1 {
            return Validation::fail(None, format!("unit {} has arm {} (expected 0 or 1)", i + 1, u.d));
        }
        if u.x.len() != kx || u.w.len() != kw {
            return Validation::fail(None, format!("unit {} has inconsistent covariate dimensions", i + 1));
        }
        if !u.y.is_finite() || u.x.iter().chain(&u.w).any(|v| !v.is_finite()) {
            return Validation::fail(None, format!("unit {} has a non-finite value", i + 1));
        }
    }
    if let Some(msg) = partition_violation(pairs, units.len()) {
        return Validation::fail(None, msg);
    }
    for (j, &(a, b)) in pairs.iter().enumerate() {
        if units[a].d + units[b].d != 1 {
            return Validation::fail(
                Some(j),
                format!(
                    "pair {} ({}, {}) does not have exactly one treated unit",
                    j + 1,
                    units[a].unit_id,
                    units[b].unit_id
                ),
            );
        }
    }
    Validation::pass()
}

/// Validated experiment: records plus the pairing plan they were randomized
/// under.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    units: Vec<UnitRecord>,
    plan: PairingPlan,
}

impl ExperimentData {
    pub fn new(units: Vec<UnitRecord>, plan: PairingPlan) -> Result<Self> {
        let v = validate_experiment(&units, plan.pairs());
        if !v.passed {
            return Err(Error::InvalidExperiment(v.message.unwrap_or_default()));
        }
        Ok(Self { units, plan })
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn plan(&self) -> &PairingPlan {
        &self.plan
    }

    pub fn n_pairs(&self) -> usize {
        self.plan.n_pairs()
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn kx(&self) -> usize {
        self.units[0].x.len()
    }

    pub fn kw(&self) -> usize {
        self.units[0].w.len()
    }

    pub fn y(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.y).collect()
    }

    pub fn d(&self) -> Vec<u8> {
        self.units.iter().map(|u| u.d).collect()
    }

    pub fn x_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.units.len(), self.kx(), |i, k| self.units[i].x[k])
    }

    pub fn w_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.units.len(), self.kw(), |i, k| self.units[i].w[k])
    }

    /// `(treated, control)` unit indices of pair `j`.
    pub fn treated_control(&self, j: usize) -> (usize, usize) {
        let (a, b) = self.plan.pairs()[j];
        if self.units[a].d == 1 {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Same experiment with units stored in plan order, so the plan becomes
    /// `((0,1), (2,3), ...)`.
    pub fn canonical(&self) -> Self {
        let units = self
            .plan
            .pairs()
            .iter()
            .flat_map(|&(a, b)| [self.units[a].clone(), self.units[b].clone()])
            .collect();
        Self {
            units,
            plan: PairingPlan::consecutive(self.n_pairs()),
        }
    }
}

/// Fitted working models for both arms, evaluated at every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingModel {
    pub m1_hat: Vec<f64>,
    pub m0_hat: Vec<f64>,
    pub label: String,
    pub diagnostics: BTreeMap<String, f64>,
}

impl WorkingModel {
    pub fn new(label: impl Into<String>, m1_hat: Vec<f64>, m0_hat: Vec<f64>) -> Self {
        Self {
            m1_hat,
            m0_hat,
            label: label.into(),
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn zero(label: impl Into<String>, n_units: usize) -> Self {
        Self::new(label, vec![0.0; n_units], vec![0.0; n_units])
    }

    pub fn with_diagnostic(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }

    fn check(&self, n_units: usize) -> Result<()> {
        for (what, v) in [("m1_hat", &self.m1_hat), ("m0_hat", &self.m0_hat)] {
            if v.len() != n_units {
                return Err(Error::LengthMismatch {
                    what,
                    expected: n_units,
                    found: v.len(),
                });
            }
        }
        if self.m1_hat.iter().chain(&self.m0_hat).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("working model"));
        }
        Ok(())
    }
}

/// Result of one estimator applied to one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub delta_hat: f64,
    pub sigma_hat: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
    pub reject_h0: bool,
    pub delta_null: f64,
    pub n_pairs: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

/// `Y - (m1 + m0) / 2` for every unit.
pub fn adjusted_outcomes(data: &ExperimentData, wm: &WorkingModel) -> Result<Vec<f64>> {
    wm.check(data.n_units())?;
    Ok(data
        .units()
        .iter()
        .zip(wm.m1_hat.iter().zip(&wm.m0_hat))
        .map(|(u, (m1, m0))| u.y - 0.5 * (m1 + m0))
        .collect())
}

/// Augmented inverse-propensity estimate with propensity one half:
/// `mu(1) - mu(0)` where
/// `mu(d) = 1/(2n) * sum(2 I{D=d} (Y - m_d) + m_d)`.
pub fn doubly_robust_estimate(data: &ExperimentData, wm: &WorkingModel) -> Result<f64> {
    wm.check(data.n_units())?;
    let two_n = data.n_units() as f64;
    let mut mu1 = 0.0;
    let mut mu0 = 0.0;
    for (i, u) in data.units().iter().enumerate() {
        let (m1, m0) = (wm.m1_hat[i], wm.m0_hat[i]);
        let (i1, i0) = if u.d == 1 { (2.0, 0.0) } else { (0.0, 2.0) };
        mu1 += i1 * (u.y - m1) + m1;
        mu0 += i0 * (u.y - m0) + m0;
    }
    Ok(mu1 / two_n - mu0 / two_n)
}

/// Difference in arm means of `values`, i.e. `(1/n) sum D v - (1/n) sum (1-D) v`.
pub fn difference_in_means(data: &ExperimentData, values: &[f64]) -> f64 {
    let n = data.n_pairs() as f64;
    let (mut t, mut c) = (0.0, 0.0);
    for (u, v) in data.units().iter().zip(values) {
        if u.d == 1 {
            t += v;
        } else {
            c += v;
        }
    }
    t / n - c / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pair() -> ExperimentData {
        // treated outcomes {3, 4}, control {1, 2}
        let units = vec![
            UnitRecord::new("a", 3.0, 1, vec![0.0], vec![]),
            UnitRecord::new("b", 1.0, 0, vec![0.1], vec![]),
            UnitRecord::new("c", 2.0, 0, vec![1.0], vec![]),
            UnitRecord::new("d", 4.0, 1, vec![1.1], vec![]),
        ];
        ExperimentData::new(units, PairingPlan::consecutive(2)).unwrap()
    }

    #[test]
    fn zero_working_model_leaves_outcomes() {
        let data = two_pair();
        let wm = WorkingModel::zero("z", 4);
        assert_eq!(adjusted_outcomes(&data, &wm).unwrap(), data.y());
    }

    #[test]
    fn adjusted_outcome_arithmetic() {
        let units = vec![
            UnitRecord::new("a", 5.0, 1, vec![0.0], vec![]),
            UnitRecord::new("b", 1.0, 0, vec![0.0], vec![]),
        ];
        let data = ExperimentData::new(units, PairingPlan::consecutive(1)).unwrap();
        let wm = WorkingModel::new("m", vec![2.0, 0.0], vec![4.0, 0.0]);
        assert_eq!(adjusted_outcomes(&data, &wm).unwrap()[0], 2.0);
    }

    #[test]
    fn self_cancelling_working_model() {
        let data = two_pair();
        let y = data.y();
        let wm = WorkingModel::new("self", y.clone(), y);
        assert!(adjusted_outcomes(&data, &wm).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_difference_in_means() {
        let data = two_pair();
        let est = doubly_robust_estimate(&data, &WorkingModel::zero("z", 4)).unwrap();
        assert_eq!(est, 2.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let data = two_pair();
        let wm = WorkingModel::zero("z", 3);
        assert!(matches!(
            adjusted_outcomes(&data, &wm),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn validation_reports_first_bad_pair() {
        let mut units = two_pair().units().to_vec();
        assert!(validate_experiment(&units, &[(0, 1), (2, 3)]).passed);
        units[2].d = 1;
        let v = validate_experiment(&units, &[(0, 1), (2, 3)]);
        assert!(!v.passed);
        assert_eq!(v.first_offending_pair, Some(1));
        assert!(v.message.unwrap().contains("pair 2"));
    }

    #[test]
    fn validation_rejects_repeated_index() {
        let units = two_pair().units().to_vec();
        let v = validate_experiment(&units, &[(0, 1), (1, 3)]);
        assert!(!v.passed);
        assert!(v.message.unwrap().contains("more than once"));
        assert!(PairingPlan::new(vec![(0, 1), (1, 3)]).is_err());
    }

    #[test]
    fn canonical_preserves_estimate() {
        let units = two_pair().units().to_vec();
        let data = ExperimentData::new(units, PairingPlan::new(vec![(3, 2), (1, 0)]).unwrap()).unwrap();
        let canon = data.canonical();
        assert_eq!(canon.units()[0].unit_id, "d");
        let wm = WorkingModel::zero("z", 4);
        assert_eq!(
            doubly_robust_estimate(&data, &wm).unwrap(),
            doubly_robust_estimate(&canon, &wm).unwrap()
        );
    }
}

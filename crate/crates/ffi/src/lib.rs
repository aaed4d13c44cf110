//! C ABI for `paired-ate`.
//!
//! Every fallible function returns a `PA_*` status code and writes results
//! through out-pointers. On failure, `pa_last_error_message` describes the
//! most recent error on the calling thread. Handles are opaque and must be
//! released with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::DMatrix;
use paired_ate::design::{assign_within_pairs, match_pairs_greedy, match_pairs_sorted, reorder_pairs, AssignmentSeed};
use paired_ate::simulation::{default_menu, run_monte_carlo, ModelSpec, SimulationSummary};
use paired_ate::{
    estimate, AdjustmentKind, AdjustmentSpec, CrossTerms, Error, ExperimentData, PairingPlan, PsiSource, UnitRecord,
};

pub const PA_OK: i32 = 0;
/// A required pointer argument was null.
pub const PA_ERR_NULL_POINTER: i32 = 1;
/// An argument was out of range or inconsistent.
pub const PA_ERR_INVALID_ARGUMENT: i32 = 2;
/// The data do not form a valid matched-pairs experiment.
pub const PA_ERR_INVALID_DATA: i32 = 3;
/// The estimator could not be computed (singular design, non-finite values).
pub const PA_ERR_NUMERICAL: i32 = 4;
/// An internal error; the library state is unaffected.
pub const PA_ERR_PANIC: i32 = 5;

pub const PA_KIND_UNADJUSTED: i32 = 0;
pub const PA_KIND_NAIVE: i32 = 1;
pub const PA_KIND_INTERACTED: i32 = 2;
pub const PA_KIND_PFE: i32 = 3;
pub const PA_KIND_INT_PFE: i32 = 4;
pub const PA_KIND_LASSO_INTERMEDIATE: i32 = 5;
pub const PA_KIND_REFIT: i32 = 6;

pub const PA_PSI_W: i32 = 0;
pub const PA_PSI_X: i32 = 1;
pub const PA_PSI_XW: i32 = 2;
pub const PA_PSI_EXPANDED: i32 = 3;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::LengthMismatch { .. } | Error::InvalidArgument(_) | Error::QuantileDomain(_) => {
                PA_ERR_INVALID_ARGUMENT
            }
            Error::InvalidExperiment(_)
            | Error::InvalidPlan(_)
            | Error::OddUnitCount(_)
            | Error::TooFewPairs { .. } => PA_ERR_INVALID_DATA,
            Error::NonFinite(_) | Error::Singular { .. } | Error::ZeroLoading { .. } => PA_ERR_NUMERICAL,
        };
        Failure(code, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PA_ERR_INVALID_ARGUMENT, msg.into())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PA_OK,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            PA_ERR_PANIC
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(PA_ERR_NULL_POINTER, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure(PA_ERR_NULL_POINTER, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass pointers valid for one write or null.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(PA_ERR_NULL_POINTER, format!("{what} is null")))
}

/// A matched-pairs experiment: outcomes, arms, covariates and pairing.
pub struct PaExperiment {
    data: ExperimentData,
}

/// Result of one estimator.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PaEstimate {
    pub delta_hat: f64,
    pub sigma_hat: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
    pub delta_null: f64,
    /// 1 when the null hypothesis is rejected, else 0.
    pub reject_h0: i32,
    /// 1 when a LASSO-based estimator fell back to the unadjusted one.
    pub fallback_unadjusted: i32,
    pub n_pairs: u64,
}

/// Monte Carlo results for one model configuration.
pub struct PaSimulation {
    summary: SimulationSummary,
    labels: Vec<CString>,
}

/// Summary of one estimator over all replications.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PaKindSummary {
    pub replications: u64,
    pub failures: u64,
    pub rejection_rate: f64,
    pub mean_std_error: f64,
    /// NaN when the menu has no unadjusted estimator.
    pub se_reduction_pct: f64,
    pub mean_delta_hat: f64,
    pub sd_delta_hat: f64,
    pub median_sigma_hat: f64,
    pub coverage: f64,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread. The pointer stays valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds an experiment of `n_units = 2 * n_pairs` units.
///
/// `x` is `n_units x kx` (kx >= 1) and `w` is `n_units x kw`, both
/// row-major; `w` may be null when `kw` is 0. `d` holds 0/1 arms. `pairs` holds
/// `2 * n_pairs` unit indices, pair `j` being `(pairs[2j], pairs[2j+1])`;
/// null means consecutive units form pairs.
///
/// # Safety
/// Every non-null pointer must be valid for the stated number of reads;
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pa_experiment_new(
    n_pairs: usize,
    y: *const f64,
    d: *const u8,
    x: *const f64,
    kx: usize,
    w: *const f64,
    kw: usize,
    pairs: *const u64,
    out: *mut *mut PaExperiment,
) -> i32 {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let m = n_pairs.checked_mul(2).ok_or_else(|| invalid("n_pairs overflows"))?;
        let size = |k: usize| m.checked_mul(k).ok_or_else(|| invalid("covariate size overflows"));
        let y = input(y, m, "y")?;
        let d = input(d, m, "d")?;
        let x = input(x, size(kx)?, "x")?;
        let w = input(w, size(kw)?, "w")?;
        let units = (0..m)
            .map(|i| {
                UnitRecord::new(
                    i.to_string(),
                    y[i],
                    d[i],
                    x[i * kx..(i + 1) * kx].to_vec(),
                    w[i * kw..(i + 1) * kw].to_vec(),
                )
            })
            .collect();
        let plan = if pairs.is_null() {
            PairingPlan::consecutive(n_pairs)
        } else {
            let raw = input(pairs, m, "pairs")?;
            let idx = raw
                .iter()
                .map(|&v| usize::try_from(v).map_err(|_| invalid("pair index overflows")))
                .collect::<Result<Vec<_>, _>>()?;
            PairingPlan::new(idx.chunks_exact(2).map(|c| (c[0], c[1])).collect())?
        };
        let data = ExperimentData::new(units, plan)?;
        *out = Box::into_raw(Box::new(PaExperiment { data }));
        Ok(())
    })
}

/// # Safety
/// `exp` must be null or a handle from `pa_experiment_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pa_experiment_free(exp: *mut PaExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Number of pairs in `exp`, or 0 when `exp` is null.
///
/// # Safety
/// `exp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pa_experiment_n_pairs(exp: *const PaExperiment) -> u64 {
    exp.as_ref().map_or(0, |e| e.data.n_pairs() as u64)
}

fn kind_from(code: i32) -> Result<AdjustmentKind, Failure> {
    Ok(match code {
        PA_KIND_UNADJUSTED => AdjustmentKind::Unadjusted,
        PA_KIND_NAIVE => AdjustmentKind::Naive,
        PA_KIND_INTERACTED => AdjustmentKind::Interacted,
        PA_KIND_PFE => AdjustmentKind::Pfe,
        PA_KIND_INT_PFE => AdjustmentKind::IntPfe,
        PA_KIND_LASSO_INTERMEDIATE => AdjustmentKind::LassoIntermediate,
        PA_KIND_REFIT => AdjustmentKind::Refit,
        other => return Err(invalid(format!("unknown estimator kind {other}"))),
    })
}

fn psi_from(code: i32) -> Result<PsiSource, Failure> {
    Ok(match code {
        PA_PSI_W => PsiSource::W,
        PA_PSI_X => PsiSource::X,
        PA_PSI_XW => PsiSource::XW,
        PA_PSI_EXPANDED => PsiSource::Expanded(CrossTerms::All),
        other => return Err(invalid(format!("unknown regressor source {other}"))),
    })
}

/// Estimates the average treatment effect with estimator `kind` (a
/// `PA_KIND_*` value) on regressors `psi` (a `PA_PSI_*` value), and tests
/// `H0: Delta = delta0` at level `alpha`.
///
/// # Safety
/// `exp` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pa_estimate(
    exp: *const PaExperiment,
    kind: i32,
    psi: i32,
    include_intercept: i32,
    alpha: f64,
    delta0: f64,
    out: *mut PaEstimate,
) -> i32 {
    guard(|| {
        let exp = exp.as_ref().ok_or(Failure(PA_ERR_NULL_POINTER, "exp is null".into()))?;
        let out = out_ptr(out, "out")?;
        let spec = AdjustmentSpec::new(kind_from(kind)?, psi_from(psi)?).with_intercept(include_intercept != 0);
        let r = estimate(&exp.data, &spec, alpha, delta0)?;
        *out = PaEstimate {
            delta_hat: r.delta_hat,
            sigma_hat: r.sigma_hat,
            std_error: r.std_error,
            ci_lower: r.ci_lower,
            ci_upper: r.ci_upper,
            alpha: r.alpha,
            delta_null: r.delta_null,
            reject_h0: i32::from(r.reject_h0),
            fallback_unadjusted: i32::from(r.diagnostics.get("fallback_unadjusted") == Some(&1.0)),
            n_pairs: r.n_pairs as u64,
        };
        Ok(())
    })
}

/// Pairs `n_units` units on the row-major `n_units x kx` covariates `x`.
/// A single covariate is matched by sorting; several use greedy
/// nearest-neighbour matching on standardized covariates with pairs
/// re-ordered so consecutive pairs are close. Writes `n_units` indices to
/// `out_pairs` as in `pa_experiment_new`.
///
/// # Safety
/// `x` must be valid for `n_units * kx` reads and `out_pairs` for `n_units`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn pa_match_pairs(x: *const f64, n_units: usize, kx: usize, out_pairs: *mut u64) -> i32 {
    guard(|| {
        if kx == 0 {
            return Err(invalid("at least one matching covariate is required"));
        }
        let len = n_units
            .checked_mul(kx)
            .ok_or_else(|| invalid("covariate size overflows"))?;
        let x = DMatrix::from_row_slice(n_units, kx, input(x, len, "x")?);
        let out = output(out_pairs, n_units, "out_pairs")?;
        let plan = if kx == 1 {
            match_pairs_sorted(x.column(0).as_slice())?
        } else {
            reorder_pairs(&match_pairs_greedy(&x)?, &x)?
        };
        for (slot, idx) in out.iter_mut().zip(plan.pairs().iter().flat_map(|&(a, b)| [a, b])) {
            *slot = idx as u64;
        }
        Ok(())
    })
}

/// Randomizes treatment within each of `n_pairs` pairs (layout as in
/// `pa_experiment_new`), writing 0/1 arms for `2 * n_pairs` units.
///
/// # Safety
/// `pairs` must be valid for `2 * n_pairs` reads and `out_d` for
/// `2 * n_pairs` writes.
#[no_mangle]
pub unsafe extern "C" fn pa_assign_within_pairs(pairs: *const u64, n_pairs: usize, seed: u64, out_d: *mut u8) -> i32 {
    guard(|| {
        let m = n_pairs.checked_mul(2).ok_or_else(|| invalid("n_pairs overflows"))?;
        let raw = input(pairs, m, "pairs")?;
        let idx = raw
            .iter()
            .map(|&v| usize::try_from(v).map_err(|_| invalid("pair index overflows")))
            .collect::<Result<Vec<_>, _>>()?;
        let plan = PairingPlan::new(idx.chunks_exact(2).map(|c| (c[0], c[1])).collect())?;
        let out = output(out_d, m, "out_d")?;
        out.copy_from_slice(&assign_within_pairs(&plan, AssignmentSeed(seed)));
        Ok(())
    })
}

/// Runs `replications` Monte Carlo replications of model `model_id` (1-15)
/// with the model's default estimator menu.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pa_simulate(
    model_id: u32,
    n_pairs: usize,
    delta: f64,
    seed: u64,
    replications: usize,
    out: *mut *mut PaSimulation,
) -> i32 {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let id = u8::try_from(model_id).map_err(|_| invalid(format!("model {model_id} is not in 1..=15")))?;
        let spec = ModelSpec::new(id, n_pairs, delta, seed)?;
        let summary = run_monte_carlo(&spec, &default_menu(id), replications)?;
        let labels = summary
            .kinds
            .iter()
            .map(|k| CString::new(k.label.as_str()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(PaSimulation { summary, labels }));
        Ok(())
    })
}

/// # Safety
/// `sim` must be null or a handle from `pa_simulate` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pa_simulation_free(sim: *mut PaSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Number of estimators in `sim`, or 0 when `sim` is null.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pa_simulation_kind_count(sim: *const PaSimulation) -> u64 {
    sim.as_ref().map_or(0, |s| s.summary.kinds.len() as u64)
}

/// Label of estimator `index`, owned by `sim`; null when out of range.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pa_simulation_kind_label(sim: *const PaSimulation, index: u64) -> *const c_char {
    sim.as_ref()
        .and_then(|s| s.labels.get(usize::try_from(index).ok()?))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Summary of estimator `index`.
///
/// # Safety
/// `sim` must be a live handle; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pa_simulation_kind(sim: *const PaSimulation, index: u64, out: *mut PaKindSummary) -> i32 {
    guard(|| {
        let sim = sim.as_ref().ok_or(Failure(PA_ERR_NULL_POINTER, "sim is null".into()))?;
        let out = out_ptr(out, "out")?;
        let k = usize::try_from(index)
            .ok()
            .and_then(|i| sim.summary.kinds.get(i))
            .ok_or_else(|| invalid(format!("estimator index {index} out of range")))?;
        *out = PaKindSummary {
            replications: k.replications as u64,
            failures: k.failures as u64,
            rejection_rate: k.rejection_rate,
            mean_std_error: k.mean_std_error,
            se_reduction_pct: k.se_reduction_pct.unwrap_or(f64::NAN),
            mean_delta_hat: k.mean_delta_hat,
            sd_delta_hat: k.sd_delta_hat,
            median_sigma_hat: k.median_sigma_hat,
            coverage: k.coverage,
        };
        Ok(())
    })
}

/// Parses an estimator name such as `"pfe"` into a `PA_KIND_*` value;
/// returns -1 for unknown names or a null pointer.
///
/// # Safety
/// `name` must be null or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pa_kind_from_name(name: *const c_char) -> i32 {
    if name.is_null() {
        return -1;
    }
    let Ok(text) = CStr::from_ptr(name).to_str() else {
        return -1;
    };
    match text.parse::<AdjustmentKind>() {
        Ok(k) => AdjustmentKind::ALL
            .iter()
            .position(|&a| a == k)
            .map_or(-1, |p| p as i32),
        Err(_) => -1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_codes() {
        let code = |e: Error| Failure::from(e).0;
        assert_eq!(code(Error::OddUnitCount(3)), PA_ERR_INVALID_DATA);
        assert_eq!(code(Error::NonFinite("y")), PA_ERR_NUMERICAL);
        assert_eq!(code(Error::InvalidArgument("a".into())), PA_ERR_INVALID_ARGUMENT);
    }

    #[test]
    fn guard_catches_panics() {
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let code = guard(|| panic!("boom"));
        std::panic::set_hook(prev);
        assert_eq!(code, PA_ERR_PANIC);
        let msg = unsafe { CStr::from_ptr(pa_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }

    #[test]
    fn kind_codes_follow_library_order() {
        for (code, kind) in AdjustmentKind::ALL.iter().enumerate() {
            assert_eq!(kind_from(code as i32).ok(), Some(*kind));
        }
        assert!(kind_from(7).is_err());
        assert!(psi_from(4).is_err());
    }
}

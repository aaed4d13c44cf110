use std::ffi::{CStr, CString};
use std::ptr;

use paired_ate::simulation::{simulate_dataset, ModelSpec};
use paired_ate::{estimate, AdjustmentKind, AdjustmentSpec, PsiSource};
use paired_ate_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pa_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

/// Experiment whose single matching covariate is the unit index.
fn experiment(n: usize, y: &[f64], d: &[u8], w: &[f64], kw: usize, pairs: Option<&[u64]>) -> (i32, *mut PaExperiment) {
    let x: Vec<f64> = (0..2 * n).map(|i| i as f64).collect();
    let mut exp = ptr::null_mut();
    let code = unsafe {
        pa_experiment_new(
            n,
            y.as_ptr(),
            d.as_ptr(),
            x.as_ptr(),
            1,
            w.as_ptr(),
            kw,
            pairs.map_or(ptr::null(), <[u64]>::as_ptr),
            &mut exp,
        )
    };
    (code, exp)
}

#[test]
fn hand_example_round_trip() {
    let y = [3.0, 1.0, 5.0, 3.0];
    let d = [1, 0, 1, 0];
    let (code, exp) = experiment(2, &y, &d, &[], 0, None);
    assert_eq!(code, PA_OK);
    assert_eq!(unsafe { pa_experiment_n_pairs(exp) }, 2);
    let mut r = PaEstimate::default();
    let code = unsafe { pa_estimate(exp, PA_KIND_UNADJUSTED, PA_PSI_W, 0, 0.05, 0.0, &mut r) };
    assert_eq!(code, PA_OK);
    assert_eq!(r.delta_hat, 2.0);
    assert_eq!(r.n_pairs, 2);
    unsafe { pa_experiment_free(exp) };
}

#[test]
fn matches_library_on_simulated_data() {
    let data = simulate_dataset(&ModelSpec::new(7, 30, 0.25, 3).unwrap(), 0).unwrap();
    let y = data.y();
    let d = data.d();
    let kw = data.kw();
    let w: Vec<f64> = data.units().iter().flat_map(|u| u.w.clone()).collect();
    let pairs: Vec<u64> = data
        .plan()
        .pairs()
        .iter()
        .flat_map(|&(a, b)| [a as u64, b as u64])
        .collect();
    let (code, exp) = experiment(data.n_pairs(), &y, &d, &w, kw, Some(&pairs));
    assert_eq!(code, PA_OK, "{}", last_error());
    for (code, kind) in [
        (PA_KIND_PFE, AdjustmentKind::Pfe),
        (PA_KIND_NAIVE, AdjustmentKind::Naive),
    ] {
        let mut r = PaEstimate::default();
        assert_eq!(unsafe { pa_estimate(exp, code, PA_PSI_W, 0, 0.05, 0.0, &mut r) }, PA_OK);
        let lib = estimate(&data, &AdjustmentSpec::new(kind, PsiSource::W), 0.05, 0.0).unwrap();
        assert_eq!(r.delta_hat, lib.delta_hat);
        assert_eq!(r.sigma_hat, lib.sigma_hat);
        assert_eq!(r.reject_h0, i32::from(lib.reject_h0));
    }
    unsafe { pa_experiment_free(exp) };
}

#[test]
fn errors_set_codes_and_messages() {
    let mut r = PaEstimate::default();
    assert_eq!(
        unsafe { pa_estimate(ptr::null(), PA_KIND_PFE, PA_PSI_W, 0, 0.05, 0.0, &mut r) },
        PA_ERR_NULL_POINTER
    );
    assert!(last_error().contains("null"));

    let (code, exp) = experiment(2, &[1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 0], &[], 0, None);
    assert_eq!(code, PA_ERR_INVALID_DATA);
    assert!(exp.is_null());

    let (code, exp) = experiment(2, &[1.0, 2.0, 3.0, 4.0], &[1, 0, 1, 0], &[], 0, Some(&[0, 1, 1, 2]));
    assert_eq!(code, PA_ERR_INVALID_DATA, "{}", last_error());
    assert!(exp.is_null());

    let (_, exp) = experiment(2, &[1.0, 2.0, 3.0, 4.0], &[1, 0, 1, 0], &[], 0, None);
    assert_eq!(
        unsafe { pa_estimate(exp, 42, PA_PSI_W, 0, 0.05, 0.0, &mut r) },
        PA_ERR_INVALID_ARGUMENT
    );
    assert!(last_error().contains("42"));
    assert_eq!(
        unsafe { pa_estimate(exp, PA_KIND_PFE, PA_PSI_W, 0, 0.05, 0.0, &mut r) },
        PA_ERR_INVALID_ARGUMENT
    );
    unsafe { pa_experiment_free(exp) };
    unsafe { pa_experiment_free(ptr::null_mut()) };
}

#[test]
fn matching_and_assignment() {
    let x = [0.0, 10.0, 1.0, 11.0];
    let mut pairs = [0u64; 4];
    assert_eq!(unsafe { pa_match_pairs(x.as_ptr(), 4, 1, pairs.as_mut_ptr()) }, PA_OK);
    assert_eq!(pairs, [0, 2, 1, 3]);
    let mut d = [9u8; 4];
    assert_eq!(
        unsafe { pa_assign_within_pairs(pairs.as_ptr(), 2, 7, d.as_mut_ptr()) },
        PA_OK
    );
    assert_eq!(d[0] + d[2], 1);
    assert_eq!(d[1] + d[3], 1);
    assert_eq!(
        unsafe { pa_match_pairs(x.as_ptr(), 3, 1, pairs.as_mut_ptr()) },
        PA_ERR_INVALID_DATA
    );
}

#[test]
fn simulation_handle() {
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { pa_simulate(1, 20, 0.0, 5, 10, &mut sim) }, PA_OK);
    let count = unsafe { pa_simulation_kind_count(sim) };
    assert_eq!(count, 5);
    let label = unsafe { CStr::from_ptr(pa_simulation_kind_label(sim, 3)) };
    assert_eq!(label.to_str().unwrap(), "pfe");
    assert!(unsafe { pa_simulation_kind_label(sim, count) }.is_null());
    let mut k = PaKindSummary::default();
    assert_eq!(unsafe { pa_simulation_kind(sim, 0, &mut k) }, PA_OK);
    assert_eq!(k.replications, 10);
    assert_eq!(k.se_reduction_pct, 0.0);
    assert_eq!(
        unsafe { pa_simulation_kind(sim, count, &mut k) },
        PA_ERR_INVALID_ARGUMENT
    );
    unsafe { pa_simulation_free(sim) };

    assert_eq!(
        unsafe { pa_simulate(99, 20, 0.0, 5, 10, &mut sim) },
        PA_ERR_INVALID_ARGUMENT
    );
    assert!(sim.is_null());
}

#[test]
fn kind_names() {
    let name = CString::new("refit").unwrap();
    assert_eq!(unsafe { pa_kind_from_name(name.as_ptr()) }, PA_KIND_REFIT);
    let bad = CString::new("magic").unwrap();
    assert_eq!(unsafe { pa_kind_from_name(bad.as_ptr()) }, -1);
    assert_eq!(unsafe { pa_kind_from_name(ptr::null()) }, -1);
    let v = unsafe { CStr::from_ptr(pa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

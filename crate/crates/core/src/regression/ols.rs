use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singularity threshold on the cross-product matrix, i.e. on
/// `(s_min / s_max)^2` for the singular values of the design.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// One coefficient per design column, in column order.
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    /// False when the cross-product matrix is numerically singular; the
    /// coefficients are then the minimum-norm least-squares solution.
    pub rank_ok: bool,
}

/// Least squares via Householder QR. The intercept, if wanted, must already be
/// a column of `design`.
pub fn ols_fit(design: &DMatrix<f64>, response: &[f64]) -> Result<OlsFit> {
    let (m, q) = design.shape();
    if response.len() != m {
        return Err(Error::LengthMismatch {
            what: "response",
            expected: m,
            found: response.len(),
        });
    }
    if q == 0 || m < q {
        return Err(Error::InvalidArgument(format!(
            "least squares needs at least as many rows as columns ({m} x {q})"
        )));
    }
    if design.iter().chain(response).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression input"));
    }
    let y = DVector::from_column_slice(response);

    let qr = design.clone().qr();
    let r = qr.r();
    let sv = r.clone().svd(false, false).singular_values;
    let s_max = sv.max();
    let s_min = sv.min();
    let rank_ok = s_max > 0.0 && (s_min / s_max).powi(2) > RANK_TOL;

    let beta = if rank_ok {
        let mut qty = y.clone();
        qr.q_tr_mul(&mut qty);
        let qty = qty.rows(0, q).into_owned();
        r.solve_upper_triangular(&qty).ok_or(Error::Singular {
            context: "least squares",
            hint: "triangular solve failed".into(),
        })?
    } else {
        let svd = design.clone().svd(true, true);
        let eps = s_max * RANK_TOL.sqrt();
        svd.solve(&y, eps).map_err(|e| Error::Singular {
            context: "least squares",
            hint: e.to_string(),
        })?
    };
    let residuals = &y - design * &beta;
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        rank_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::Stream;

    /// Normal equations solved by Gauss-Jordan elimination with partial pivoting.
    fn normal_equation_oracle(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
        let (m, q) = x.shape();
        let mut a = vec![vec![0.0; q + 1]; q];
        for r in 0..q {
            for c in 0..q {
                a[r][c] = (0..m).map(|i| x[(i, r)] * x[(i, c)]).sum();
            }
            a[r][q] = (0..m).map(|i| x[(i, r)] * y[i]).sum();
        }
        for col in 0..q {
            let piv = (col..q)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for r in 0..q {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=q {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        (0..q).map(|r| a[r][q] / a[r][r]).collect()
    }

    #[test]
    fn two_by_two_by_hand() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let fit = ols_fit(&x, &[1.0, 2.0]).unwrap();
        assert!(fit.rank_ok);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-14);
        assert!((fit.coefficients[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_response() {
        let s = Stream::new(3);
        let x = DMatrix::from_fn(12, 3, |i, c| if c == 0 { 1.0 } else { s.normal_at((i * 3 + c) as u64) });
        let fit = ols_fit(&x, &[2.5; 12]).unwrap();
        assert!((fit.coefficients[0] - 2.5).abs() < 1e-12);
        assert!(fit.coefficients[1].abs() < 1e-12 && fit.coefficients[2].abs() < 1e-12);
    }

    #[test]
    fn random_instance_matches_normal_equations() {
        let s = Stream::new(8);
        for rep in 0..20 {
            let st = s.derive(rep);
            let x = DMatrix::from_fn(10, 3, |i, c| st.normal_at((i * 3 + c) as u64));
            let y: Vec<f64> = (0..10).map(|i| st.normal_at(100 + i)).collect();
            let fit = ols_fit(&x, &y).unwrap();
            let oracle = normal_equation_oracle(&x, &y);
            for (a, b) in fit.coefficients.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9);
            }
            // residual orthogonality
            let r = DVector::from_column_slice(&fit.residuals);
            assert!((x.transpose() * r).amax() < 1e-8);
        }
    }

    #[test]
    fn rank_deficient_gives_min_norm() {
        // second and third columns identical
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 3.0, 3.0, 1.0, 4.0, 4.0]);
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = ols_fit(&x, &y).unwrap();
        assert!(!fit.rank_ok);
        assert!((fit.coefficients[1] - fit.coefficients[2]).abs() < 1e-9);
        assert!((fit.coefficients[1] + fit.coefficients[2] - 2.0).abs() < 1e-9);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::from_element(2, 3, 1.0);
        assert!(ols_fit(&x, &[1.0, 2.0]).is_err());
    }
}

//! Dense linear-algebra helpers shared by the model, synthesis and
//! verification code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

// Padé [13/13] coefficients.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé core.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("matrix", "entries must be finite"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = one_norm(m);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);

    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::param("matrix", "Padé denominator is singular"))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

pub fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest eigenvalue magnitude of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = m.clone().complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Evaluates `xᵀ P⁻¹ x` through a Cholesky solve.
pub fn inverse_quadratic_form(p: &DMatrix<f64>, x: &DVector<f64>) -> Result<f64> {
    let chol = p
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("shape matrix"))?;
    let y = chol
        .l()
        .solve_lower_triangular(x)
        .expect("triangular factor is nonsingular");
    Ok(y.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor_squaring(m: &DMatrix<f64>, squarings: i32, terms: usize) -> DMatrix<f64> {
        let n = m.nrows();
        let h = m * 2f64.powi(-squarings);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..=terms {
            term = &term * &h / k as f64;
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(4, 4);
        assert_eq!(expm(&z).unwrap(), DMatrix::identity(4, 4));
    }

    #[test]
    fn expm_diagonal() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let e = expm(&d).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-2f64).exp(), max_relative = 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn expm_rotation_generator() {
        let t = 3.0;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&m).unwrap();
        assert_relative_eq!(e[(0, 0)], t.cos(), epsilon = 1e-13);
        assert_relative_eq!(e[(1, 0)], t.sin(), epsilon = 1e-13);
    }

    #[test]
    fn expm_large_norm_matches_taylor() {
        let m = DMatrix::from_row_slice(3, 3, &[-12.0, 4.0, 0.5, 1.0, -7.0, 2.0, 0.0, 3.0, -20.0]);
        let e = expm(&m).unwrap();
        let oracle = taylor_squaring(&m, 12, 24);
        for (a, b) in e.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn expm_rejects_non_square() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(expm(&m), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn spectral_radius_simple() {
        assert_relative_eq!(spectral_radius(&DMatrix::identity(3, 3)).unwrap(), 1.0);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn inverse_quadratic_form_matches_explicit_inverse() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let explicit = (x.transpose() * p.clone().try_inverse().unwrap() * &x)[(0, 0)];
        assert_relative_eq!(
            inverse_quadratic_form(&p, &x).unwrap(),
            explicit,
            epsilon = 1e-14
        );
    }
}

//! Dense matrix helpers shared by the synthesis, verification and simulation code.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; the matrices in this
//! problem class are at most a few dozen rows, so no effort is spent on
//! sparsity or blocking.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::LinalgError;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Sign condition tested by [`is_definite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    Positive,
    Negative,
    PositiveSemi,
    NegativeSemi,
}

/// `M + Mᵀ`.
pub fn he(m: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(m)?;
    Ok(m + m.transpose())
}

/// `(M + Mᵀ) / 2`, exactly symmetric.
pub fn symmetrize(m: &Matrix) -> Matrix {
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn ensure_square(m: &Matrix) -> Result<(), LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

pub fn ensure_finite(m: &Matrix) -> Result<(), LinalgError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_spectrum(m: &Matrix) -> Result<Vector, LinalgError> {
    ensure_square(m)?;
    ensure_finite(m)?;
    if m.nrows() == 0 {
        return Ok(Vector::zeros(0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    Ok(Vector::from_vec(vals))
}

/// Extreme eigenvalues `(λ_min, λ_max)` of a symmetric matrix.
pub fn sym_eig_bounds(m: &Matrix) -> Result<(f64, f64), LinalgError> {
    let spec = sym_spectrum(m)?;
    if spec.is_empty() {
        return Ok((f64::INFINITY, f64::NEG_INFINITY));
    }
    Ok((spec[0], spec[spec.len() - 1]))
}

pub fn is_definite(m: &Matrix, sense: Definiteness, tol: f64) -> Result<bool, LinalgError> {
    let (lo, hi) = sym_eig_bounds(m)?;
    Ok(match sense {
        Definiteness::Positive => lo > tol,
        Definiteness::PositiveSemi => lo >= -tol,
        Definiteness::Negative => hi < -tol,
        Definiteness::NegativeSemi => hi <= tol,
    })
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(*v))
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let hi = sv.iter().fold(0.0_f64, |a, v| a.max(*v));
    let lo = sv.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a square matrix, refused when the condition number exceeds `max_cond`.
pub fn guarded_inverse(m: &Matrix, max_cond: f64) -> Result<Matrix, LinalgError> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let cond = condition_number(m);
    if !(cond <= max_cond) {
        return Err(LinalgError::IllConditioned {
            cond,
            limit: max_cond,
        });
    }
    m.clone()
        .lu()
        .try_inverse()
        .ok_or(LinalgError::IllConditioned {
            cond: f64::INFINITY,
            limit: max_cond,
        })
}

/// Default singular-value floor for [`balanced_factorize`].
pub fn default_sigma_tol(x: &Matrix) -> f64 {
    1e-8 * (1.0 + spectral_norm(x))
}

/// Factor `X = M Nᵀ` with `M = UΣ^½`, `N = VΣ^½` from the SVD `X = UΣVᵀ`.
///
/// Both factors inherit half of the conditioning of `X`.
pub fn balanced_factorize(x: &Matrix, sigma_tol: f64) -> Result<(Matrix, Matrix), LinalgError> {
    ensure_square(x)?;
    ensure_finite(x)?;
    let svd = x.clone().svd(true, true);
    let sigma_min = svd
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(*v));
    if !(sigma_min > sigma_tol) {
        return Err(LinalgError::NearSingular { sigma_min });
    }
    let root = svd.singular_values.map(f64::sqrt);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let m = scale_columns(&u, &root);
    let n = scale_columns(&v, &root);
    Ok((m, n))
}

fn scale_columns(m: &Matrix, s: &Vector) -> Matrix {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= s[j];
    }
    out
}

/// Row-major construction helper.
pub fn from_rows(rows: &[&[f64]]) -> Matrix {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    Matrix::from_fn(r, c, |i, j| rows[i][j])
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Assemble a dense matrix from a grid of blocks. Every row of the grid must
/// agree on heights and every column on widths.
pub fn block_matrix(grid: &[Vec<&Matrix>]) -> Matrix {
    let heights: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
    let widths: Vec<usize> = grid[0].iter().map(|b| b.ncols()).collect();
    let mut out = Matrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r = 0;
    for (bi, row) in grid.iter().enumerate() {
        let mut c = 0;
        for (bj, b) in row.iter().enumerate() {
            debug_assert_eq!(b.nrows(), heights[bi]);
            debug_assert_eq!(b.ncols(), widths[bj]);
            out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
            c += widths[bj];
        }
        r += heights[bi];
    }
    out
}

/// Largest absolute entry of `a - b` relative to the larger of the two magnitudes.
pub fn relative_difference(a: &Matrix, b: &Matrix) -> f64 {
    let scale = max_abs(a).max(max_abs(b));
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(a - b)) / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn he_examples() {
        let m = from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(he(&m).unwrap(), from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));
        let m = from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(he(&m).unwrap(), from_rows(&[&[2.0, 5.0], &[5.0, 8.0]]));
        let s = from_rows(&[&[1.5, -2.0], &[-2.0, 7.0]]);
        assert_eq!(he(&s).unwrap(), &s * 2.0);
        assert!(matches!(
            he(&Matrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn eig_bounds_examples() {
        let (lo, hi) = sym_eig_bounds(&Matrix::identity(3, 3)).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));
        let (lo, hi) = sym_eig_bounds(&Matrix::from_diagonal(&Vector::from_vec(vec![-2.0, 5.0]))).unwrap();
        assert_eq!((lo, hi), (-2.0, 5.0));
        let (lo, hi) = sym_eig_bounds(&from_rows(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert_relative_eq!(lo, 1.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 3.0, epsilon = 1e-12);
        let bad = from_rows(&[&[f64::NAN, 0.0], &[0.0, 1.0]]);
        assert_eq!(sym_eig_bounds(&bad), Err(LinalgError::NonFinite));
    }

    #[test]
    fn definiteness_examples() {
        let i = Matrix::identity(2, 2);
        assert!(is_definite(&i, Definiteness::Positive, 0.0).unwrap());
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![0.0, 1.0]));
        assert!(!is_definite(&d, Definiteness::Positive, 0.0).unwrap());
        assert!(is_definite(&d, Definiteness::PositiveSemi, 1e-12).unwrap());
        let m = from_rows(&[&[0.5, 1.0], &[1.0, 0.5]]);
        assert!(!is_definite(&m, Definiteness::PositiveSemi, 1e-9).unwrap());
        assert!(is_definite(&(-&i), Definiteness::Negative, 0.0).unwrap());
        assert!(is_definite(&(-&d), Definiteness::NegativeSemi, 0.0).unwrap());
    }

    #[test]
    fn balanced_factorize_examples() {
        let (m, n) = balanced_factorize(&from_rows(&[&[0.75]]), 1e-8).unwrap();
        assert_relative_eq!(m[(0, 0)].abs(), 0.75_f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(n[(0, 0)].abs(), 0.75_f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(m[(0, 0)] * n[(0, 0)], 0.75, epsilon = 1e-14);

        let singular = Matrix::from_diagonal(&Vector::from_vec(vec![-1.0, 0.0]));
        assert!(matches!(
            balanced_factorize(&singular, 1e-8),
            Err(LinalgError::NearSingular { .. })
        ));

        let x = from_rows(&[&[-3.0, 0.0], &[0.0, -3.0]]);
        let (m, n) = balanced_factorize(&x, default_sigma_tol(&x)).unwrap();
        assert!(relative_difference(&(&m * n.transpose()), &x) < 1e-14);
        // Each factor is √3 times an orthogonal matrix.
        let mtm = m.transpose() * &m;
        assert!(relative_difference(&mtm, &(Matrix::identity(2, 2) * 3.0)) < 1e-14);
        let ntn = n.transpose() * &n;
        assert!(relative_difference(&ntn, &(Matrix::identity(2, 2) * 3.0)) < 1e-14);
    }

    #[test]
    fn balanced_factors_split_conditioning() {
        let x = from_rows(&[&[4.0, 1.0, 0.0], &[0.5, 2.0, 0.3], &[0.0, -1.0, 0.25]]);
        let (m, n) = balanced_factorize(&x, 1e-8).unwrap();
        let root = condition_number(&x).sqrt();
        assert_relative_eq!(condition_number(&m), root, max_relative = 1e-10);
        assert_relative_eq!(condition_number(&n), root, max_relative = 1e-10);
    }

    #[test]
    fn guarded_inverse_rejects_ill_conditioned() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1e-14]));
        assert!(matches!(
            guarded_inverse(&m, 1e12),
            Err(LinalgError::IllConditioned { .. })
        ));
        let ok = from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let inv = guarded_inverse(&ok, 1e12).unwrap();
        assert!(relative_difference(&(&ok * inv), &Matrix::identity(2, 2)) < 1e-15);
    }

    /// Characteristic-polynomial oracle for a symmetric 2x2 matrix.
    fn char_poly_eigs(a: f64, b: f64, d: f64) -> (f64, f64) {
        let tr = a + d;
        let det = a * d - b * b;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        (tr / 2.0 - disc, tr / 2.0 + disc)
    }

    #[test]
    fn eig_bounds_match_char_poly_on_integer_grid() {
        for a in -5..=5 {
            for b in -5..=5 {
                for d in -5..=5 {
                    let m = from_rows(&[&[a as f64, b as f64], &[b as f64, d as f64]]);
                    let (lo, hi) = sym_eig_bounds(&m).unwrap();
                    let (elo, ehi) = char_poly_eigs(a as f64, b as f64, d as f64);
                    let scale = 1.0 + elo.abs().max(ehi.abs());
                    assert!((lo - elo).abs() <= 1e-10 * scale, "{a} {b} {d}: {lo} vs {elo}");
                    assert!((hi - ehi).abs() <= 1e-10 * scale, "{a} {b} {d}: {hi} vs {ehi}");
                }
            }
        }
    }

    fn square(max: usize) -> impl Strategy<Value = Matrix> {
        (1..=max).prop_flat_map(|n| {
            proptest::collection::vec(-10.0..10.0_f64, n * n)
                .prop_map(move |v| Matrix::from_row_slice(n, n, &v))
        })
    }

    proptest! {
        #[test]
        fn he_twice_doubles(m in square(6)) {
            let once = he(&m).unwrap();
            prop_assert_eq!(he(&once).unwrap(), &once * 2.0);
        }

        #[test]
        fn positive_implies_semidefinite(m in square(5)) {
            let s = symmetrize(&m);
            if is_definite(&s, Definiteness::Positive, 0.0).unwrap() {
                prop_assert!(is_definite(&s, Definiteness::PositiveSemi, 0.0).unwrap());
            }
        }
    }

    #[test]
    fn balanced_factorize_reconstructs_random_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 1000 {
            let n = rng.gen_range(1..=8);
            let x = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            if condition_number(&x) > 1e6 {
                continue;
            }
            let (m, nf) = balanced_factorize(&x, default_sigma_tol(&x)).unwrap();
            let err = spectral_norm(&(&m * nf.transpose() - &x)) / spectral_norm(&x);
            assert!(err <= 1e-10, "relative error {err}");
            checked += 1;
        }
    }
}

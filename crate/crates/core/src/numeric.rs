//! Dense linear-algebra and root-finding kernels.
//!
//! Everything here is deterministic: pivot choices, singular-vector signs and
//! Cholesky diagonals follow fixed conventions so that repeated runs produce
//! bit-identical output.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};

/// Relative tolerance used when none is given explicitly.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Result of a Gauss-Jordan reduction.
///
/// Column indices are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RrefResult {
    pub reduced: DMatrix<f64>,
    pub pivot_cols: Vec<usize>,
    pub rank: usize,
}

/// Reduced row-echelon form by Gauss-Jordan elimination with partial pivoting.
///
/// Columns are scanned left to right and never swapped. A column is skipped
/// when its largest remaining entry is at most `tol` times the largest
/// absolute entry of `m` (or `tol` itself for the zero matrix).
pub fn gj_rref(m: &DMatrix<f64>, tol: f64) -> RrefResult {
    gj_rref_limited(m, tol, m.ncols())
}

/// Like [`gj_rref`] but only the first `pivot_limit` columns may hold pivots.
/// The remaining columns are carried along by the row operations.
pub fn gj_rref_limited(m: &DMatrix<f64>, tol: f64, pivot_limit: usize) -> RrefResult {
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let scale = m.amax();
    let threshold = tol * if scale > 0.0 { scale } else { 1.0 };

    let mut pivot_cols = Vec::new();
    let mut row = 0;
    for col in 0..pivot_limit.min(cols) {
        if row == rows {
            break;
        }
        let mut best = row;
        let mut best_abs = a[(row, col)].abs();
        for r in row + 1..rows {
            let v = a[(r, col)].abs();
            if v > best_abs {
                best = r;
                best_abs = v;
            }
        }
        if best_abs <= threshold {
            continue;
        }
        if best != row {
            a.swap_rows(best, row);
        }
        let inv = 1.0 / a[(row, col)];
        for c in col..cols {
            a[(row, c)] *= inv;
        }
        a[(row, col)] = 1.0;
        for r in 0..rows {
            if r == row {
                continue;
            }
            let f = a[(r, col)];
            if f != 0.0 {
                for c in col + 1..cols {
                    let v = a[(row, c)];
                    a[(r, c)] -= f * v;
                }
                a[(r, col)] = 0.0;
            }
        }
        pivot_cols.push(col);
        row += 1;
    }
    let rank = pivot_cols.len();
    RrefResult {
        reduced: a,
        pivot_cols,
        rank,
    }
}

fn fix_sign(v: &mut DVector<f64>) {
    let idx = v.iamax();
    if v[idx] < 0.0 {
        v.neg_mut();
    }
}

/// Right singular vectors of `m` ordered by ascending singular value, along
/// with the singular values themselves. Wide matrices are padded with zero
/// rows so that the full right basis is available.
pub(crate) fn right_singular_basis(m: &DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let (rows, cols) = m.shape();
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[a]
            .total_cmp(&svd.singular_values[b])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: DVector<f64> = v_t.row(i).transpose();
            fix_sign(&mut v);
            v
        })
        .collect();
    (values, vectors)
}

/// Unit right singular vector of the smallest singular value, with its
/// largest-magnitude entry made positive.
pub fn min_singular_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let (_, mut vectors) = right_singular_basis(m);
    vectors.swap_remove(0)
}

/// Factor a symmetric positive definite `s` as `K Kᵀ` with `K` upper
/// triangular, then rescale so that `K₃₃ = 1`.
///
/// This is the anti-diagonal flip of the ordinary lower Cholesky factor of the
/// flipped matrix, written out for the 3×3 case.
pub fn cholesky_upper_right(s: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let scale = s.amax();
    if !(scale > 0.0) || !s.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    if (s - s.transpose()).amax() > 1e-9 * scale {
        return Err(Error::InvalidInput("cholesky input is not symmetric".into()));
    }
    let s = (s + s.transpose()) * 0.5;
    let k33_sq = s[(2, 2)];
    if k33_sq <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    let k33 = k33_sq.sqrt();
    let k23 = s[(1, 2)] / k33;
    let k13 = s[(0, 2)] / k33;
    let k22_sq = s[(1, 1)] - k23 * k23;
    if k22_sq <= 1e-14 * scale {
        return Err(Error::NotPositiveDefinite);
    }
    let k22 = k22_sq.sqrt();
    let k12 = (s[(0, 1)] - k13 * k23) / k22;
    let k11_sq = s[(0, 0)] - k12 * k12 - k13 * k13;
    if k11_sq <= 1e-14 * scale {
        return Err(Error::NotPositiveDefinite);
    }
    let k11 = k11_sq.sqrt();
    let k = Matrix3::new(k11, k12, k13, 0.0, k22, k23, 0.0, 0.0, k33);
    Ok(k / k33)
}

/// Closest rotation in the Frobenius sense, `U Vᵀ` with a determinant fix.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    nearest_rotation_tol(m, DEFAULT_TOL)
}

pub fn nearest_rotation_tol(m: &Matrix3<f64>, tol: f64) -> Result<Matrix3<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateMatrix);
    }
    let svd = m.svd(true, true);
    let sv = svd.singular_values;
    let (mut imin, mut imax) = (0, 0);
    for i in 1..3 {
        if sv[i] < sv[imin] {
            imin = i;
        }
        if sv[i] > sv[imax] {
            imax = i;
        }
    }
    if sv[imin] <= tol * sv[imax] || sv[imax] == 0.0 {
        return Err(Error::DegenerateMatrix);
    }
    let mut u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(imin).neg_mut();
    }
    Ok(u * v_t)
}

fn eval_cubic(c: [f64; 4], x: f64) -> (f64, f64) {
    let p = ((c[0] * x + c[1]) * x + c[2]) * x + c[3];
    let dp = (3.0 * c[0] * x + 2.0 * c[1]) * x + c[2];
    (p, dp)
}

/// Discriminant of `c3 x³ + c2 x² + c1 x + c0` divided by `max|cᵢ|⁴`.
///
/// Positive: three distinct real roots. Negative: one real root.
pub fn cubic_discriminant_normalized(c3: f64, c2: f64, c1: f64, c0: f64) -> f64 {
    let s = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if s == 0.0 {
        return 0.0;
    }
    let (a, b, c, d) = (c3 / s, c2 / s, c1 / s, c0 / s);
    18.0 * a * b * c * d - 4.0 * b * b * b * d + b * b * c * c - 4.0 * a * c * c * c
        - 27.0 * a * a * d * d
}

/// Width of the band around a zero discriminant in which a complex pair is
/// reported as a double real root.
pub const DISCRIMINANT_BAND: f64 = 1e-8;

/// Real roots of a cubic (with multiplicity), ascending, polished by Newton
/// steps. Inside the discriminant band the pair comes from the quadratic left
/// after deflating the simple root. Degenerate leading coefficients fall back
/// to the quadratic and linear cases.
pub fn cubic_real_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> Result<Vec<f64>> {
    cubic_real_roots_tol(c3, c2, c1, c0, DEFAULT_TOL)
}

pub fn cubic_real_roots_tol(c3: f64, c2: f64, c1: f64, c0: f64, tol: f64) -> Result<Vec<f64>> {
    let scale = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::ZeroPolynomial);
    }
    let coeffs = [c3, c2, c1, c0];
    let mut roots = if c3.abs() > tol * scale {
        let (a, b, c) = (c2 / c3, c1 / c3, c0 / c3);
        // depressed form y³ + p y + q with x = y - a/3
        let shift = a / 3.0;
        let p = b - a * a / 3.0;
        let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
        let disc = cubic_discriminant_normalized(c3, c2, c1, c0);
        if p.abs() <= f64::EPSILON * (1.0 + a * a) && q.abs() <= f64::EPSILON * (1.0 + a.abs().powi(3)) {
            vec![-shift; 3]
        } else if disc > 0.0 {
            let r = (-p / 3.0).sqrt();
            let arg = (3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0);
            let phi = arg.acos() / 3.0;
            (0..3)
                .map(|k| {
                    2.0 * r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift
                })
                .collect()
        } else {
            let h = q * q / 4.0 + p * p * p / 27.0;
            let sq = h.max(0.0).sqrt();
            let u = (-q / 2.0 + sq).cbrt();
            let v = (-q / 2.0 - sq).cbrt();
            let single = newton_polish(coeffs, u + v - shift, 4);
            if disc > -DISCRIMINANT_BAND {
                // near-double root: keep the pair, read off the deflated
                // quadratic instead of dropping it
                let (qa, qb, qc) = (c3, c2 + c3 * single, c1 + (c2 + c3 * single) * single);
                let qd = qb * qb - 4.0 * qa * qc;
                let mid = -qb / (2.0 * qa);
                let half = if qd > 0.0 { qd.sqrt() / (2.0 * qa.abs()) } else { 0.0 };
                let mut roots = vec![single, mid - half, mid + half];
                roots.sort_by(f64::total_cmp);
                return Ok(roots);
            } else {
                vec![single]
            }
        }
    } else if c2.abs() > tol * scale {
        let (a, b, c) = (c2, c1, c0);
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            Vec::new()
        } else {
            let sq = disc.sqrt();
            let t = -0.5 * (b + b.signum() * sq);
            if t == 0.0 {
                vec![0.0, 0.0]
            } else {
                vec![t / a, c / t]
            }
        }
    } else if c1.abs() > tol * scale {
        vec![-c0 / c1]
    } else {
        Vec::new()
    };
    for r in roots.iter_mut() {
        *r = newton_polish(coeffs, *r, 1);
    }
    roots.sort_by(f64::total_cmp);
    Ok(roots)
}

/// Up to `steps` Newton steps, each kept only if it does not raise |p|.
fn newton_polish(coeffs: [f64; 4], mut x: f64, steps: usize) -> f64 {
    for _ in 0..steps {
        let (p, dp) = eval_cubic(coeffs, x);
        if dp == 0.0 || p == 0.0 {
            break;
        }
        let next = x - p / dp;
        if !(next.is_finite() && eval_cubic(coeffs, next).0.abs() <= p.abs()) {
            break;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    fn dm(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn rref_permuted_identity() {
        let r = gj_rref(&dm(2, 2, &[0.0, 2.0, 1.0, 0.0]), 1e-12);
        assert_eq!(r.reduced, DMatrix::identity(2, 2));
        assert_eq!(r.pivot_cols, vec![0, 1]);
        assert_eq!(r.rank, 2);
    }

    #[test]
    fn rref_dependent_rows() {
        let r = gj_rref(&dm(2, 2, &[1.0, 2.0, 2.0, 4.0]), 1e-12);
        assert_eq!(r.rank, 1);
        assert_eq!(r.pivot_cols, vec![0]);
        assert!(r.reduced.row(1).amax() < 1e-15);
        assert!((r.reduced[(0, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rref_zero_matrix() {
        let r = gj_rref(&DMatrix::zeros(3, 4), 1e-12);
        assert_eq!(r.rank, 0);
    }

    #[test]
    fn rref_limited_leaves_tail_columns() {
        let m = dm(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let r = gj_rref_limited(&m, 1e-12, 2);
        assert_eq!(r.pivot_cols, vec![0, 1]);
        assert_eq!(r.reduced[(2, 2)], 1.0);
    }

    #[test]
    fn min_singular_vector_examples() {
        let v = min_singular_vector(&dm(1, 2, &[1.0, 0.0]));
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
        let v = min_singular_vector(&dm(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        assert!((v - DVector::from_vec(vec![0.0, 0.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky_upper_right(&Matrix3::identity()).unwrap(), Matrix3::identity());
        let k_hat = Matrix3::new(2.0, 1.0, 3.0, 0.0, 2.0, 1.0, 0.0, 0.0, 1.0);
        let s = Matrix3::new(14.0, 5.0, 3.0, 5.0, 5.0, 1.0, 3.0, 1.0, 1.0);
        assert_eq!(k_hat * k_hat.transpose(), s);
        let k = cholesky_upper_right(&s).unwrap();
        assert!((k - k_hat).amax() < 1e-14);
        let indefinite = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(cholesky_upper_right(&indefinite), Err(Error::NotPositiveDefinite));
    }

    #[test]
    fn nearest_rotation_examples() {
        let r = Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        assert!((nearest_rotation(&r).unwrap() - r).amax() < 1e-14);
        assert!((nearest_rotation(&(1.3 * r)).unwrap() - r).amax() < 1e-14);
        assert_eq!(nearest_rotation(&Matrix3::zeros()), Err(Error::DegenerateMatrix));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let fixed = nearest_rotation(&reflection).unwrap();
        assert!((fixed.determinant() - 1.0).abs() < 1e-12);
    }

    /// Brute-force oracle: no sampled rotation is closer to the perturbed
    /// matrix than the returned one.
    #[test]
    fn nearest_rotation_beats_sampled_rotations() {
        let r = Rotation3::from_euler_angles(0.5, 0.1, -0.7).into_inner();
        let pert = Matrix3::new(0.3, -0.8, 0.1, 0.9, 0.2, -0.4, -0.5, 0.6, 0.7);
        let m = r + 0.01 * pert;
        let best = nearest_rotation(&m).unwrap();
        let d_best = (m - best).norm();
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..20000 {
            let axis = Vector3::new(next(), next(), next());
            let cand = Rotation3::new(axis * 0.05).into_inner() * r;
            assert!((m - cand).norm() >= d_best - 1e-15);
        }
        let angle = Rotation3::from_matrix_unchecked(best * r.transpose()).angle();
        assert!(angle.to_degrees() < 2.0);
    }

    #[test]
    fn cubic_examples() {
        let r = cubic_real_roots(1.0, -6.0, 11.0, -6.0).unwrap();
        assert_eq!(r.len(), 3);
        for (a, b) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let r = cubic_real_roots(1.0, 0.0, 0.0, -1.0).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0] - 1.0).abs() < 1e-14);
        let r = cubic_real_roots(0.0, 1.0, -3.0, 2.0).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14);
        assert_eq!(cubic_real_roots(0.0, 0.0, 0.0, 0.0), Err(Error::ZeroPolynomial));
    }

    #[test]
    fn cubic_double_root() {
        // (x-1)²(x+2)
        let r = cubic_real_roots(1.0, 0.0, -3.0, 2.0).unwrap();
        assert_eq!(r.len(), 3);
        assert!((r[0] + 2.0).abs() < 1e-7 && (r[1] - 1.0).abs() < 1e-7 && (r[2] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn near_double_roots_keep_the_simple_root_exact() {
        // (x+2)((x-1)² + δ²): a complex pair just inside the band
        let d2 = 1e-10;
        let (c3, c2, c1, c0) = (1.0, 0.0, -3.0 + d2, 2.0 + 2.0 * d2);
        assert!(cubic_discriminant_normalized(c3, c2, c1, c0).abs() <= DISCRIMINANT_BAND);
        let r = cubic_real_roots(c3, c2, c1, c0).unwrap();
        assert_eq!(r.len(), 3);
        assert!((r[0] + 2.0).abs() < 1e-14);
        assert!((r[1] - 1.0).abs() < 1e-9 && (r[2] - 1.0).abs() < 1e-9, "{r:?}");
    }

    fn random_matrix(rows: usize, cols: usize, seed: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |r, c| seed[(r * cols + c) % seed.len()] * (1.0 + (r * 7 + c * 3) as f64 % 5.0))
    }

    proptest! {
        #[test]
        fn rref_idempotent(v in prop::collection::vec(-1.0f64..1.0, 12)) {
            let m = random_matrix(3, 4, &v);
            let r = gj_rref(&m, 1e-12);
            let again = gj_rref(&r.reduced, 1e-12);
            prop_assert_eq!(&again.pivot_cols, &r.pivot_cols);
            prop_assert!((&again.reduced - &r.reduced).amax() <= 1e-12);
        }

        #[test]
        fn rref_preserves_row_space(v in prop::collection::vec(-1.0f64..1.0, 20)) {
            let m = DMatrix::from_row_slice(4, 5, &v);
            let r = gj_rref(&m, 1e-12);
            // every original row lies in the span of the reduced rows and vice versa
            let proj = |basis: &DMatrix<f64>, x: DVector<f64>| -> f64 {
                let svd = basis.transpose().svd(true, false);
                let u = svd.u.unwrap();
                let keep: Vec<usize> = (0..svd.singular_values.len())
                    .filter(|&i| svd.singular_values[i] > 1e-10 * svd.singular_values.max())
                    .collect();
                let mut res = x.clone();
                for i in keep {
                    let col = u.column(i);
                    res -= col * col.dot(&x);
                }
                res.norm() / x.norm().max(1e-300)
            };
            let reduced_rows = r.reduced.rows(0, r.rank).into_owned();
            for i in 0..4 {
                prop_assert!(proj(&reduced_rows, m.row(i).transpose()) <= 1e-10);
            }
            for i in 0..r.rank {
                prop_assert!(proj(&m, r.reduced.row(i).transpose()) <= 1e-10);
            }
        }

        #[test]
        fn cholesky_round_trip(v in prop::collection::vec(-1.0f64..1.0, 9)) {
            let a = Matrix3::from_row_slice(&v);
            let s = a * a.transpose() + Matrix3::identity() * 0.1;
            let k = cholesky_upper_right(&s).unwrap();
            prop_assert!(k[(1, 0)] == 0.0 && k[(2, 0)] == 0.0 && k[(2, 1)] == 0.0);
            prop_assert!(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0);
            let lhs = k * k.transpose() / (k[(2, 2)] * k[(2, 2)]);
            let rhs = s / s[(2, 2)];
            prop_assert!((lhs - rhs).norm() <= 1e-10 * rhs.norm());
        }

        #[test]
        fn nearest_rotation_is_proper(v in prop::collection::vec(-1.0f64..1.0, 9)) {
            let m = Matrix3::from_row_slice(&v) + Matrix3::identity() * 0.5;
            if let Ok(r) = nearest_rotation(&m) {
                prop_assert!((r.transpose() * r - Matrix3::identity()).amax() <= 1e-12);
                prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn cubic_roots_are_roots(c in prop::collection::vec(-1.0f64..1.0, 4)) {
            prop_assume!(c[0].abs() > 1e-3);
            let roots = cubic_real_roots(c[0], c[1], c[2], c[3]).unwrap();
            let disc = cubic_discriminant_normalized(c[0], c[1], c[2], c[3]);
            prop_assume!(disc.abs() > DISCRIMINANT_BAND);
            prop_assert!(roots.len() == 1 || roots.len() == 3);
            let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for r in roots {
                let (p, _) = eval_cubic([c[0], c[1], c[2], c[3]], r);
                prop_assert!(p.abs() <= 1e-9 * scale * r.abs().max(1.0).powi(3));
            }
        }
    }
}

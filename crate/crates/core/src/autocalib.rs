//! Metric upgrade of a projective triplet through the absolute dual quadric.
//!
//! With `P′₁ = [I | 0]`, the constraints `λω* = P′₂Q*P′₂ᵀ` and
//! `μω* = P′₃Q*P′₃ᵀ` are written as `C(λ,μ)·x = 0` for the 10-vector
//! `x = (r, q₁, q₂, q₃, ω*₁₁, ω*₁₂, ω*₁₃, ω*₂₂, ω*₂₃, 1)`. Every 10×10 minor of
//! `C` vanishes; six of them give polynomials in (λ, μ) which are reduced by a
//! fixed schedule of Gauss-Jordan eliminations to a graded basis from which
//! λ and μ are read off directly.

use nalgebra::{DMatrix, Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reprojection_rms, Camera, ProjectiveTriplet, SixViewCorrespondences, WorldPoint};
use crate::numeric::{cholesky_upper_right, gj_rref, gj_rref_limited, nearest_rotation, RrefResult, DEFAULT_TOL};
use crate::sixpoint::{projective_reconstruction, ProjectiveSolution};

/// Exponents (of λ, of μ) of the 18 monomials, in basis order.
pub const MONOMIALS: [(u8, u8); 18] = [
    (4, 1),
    (3, 2),
    (2, 3),
    (1, 4),
    (4, 0),
    (0, 4),
    (3, 1),
    (2, 2),
    (1, 3),
    (3, 0),
    (2, 1),
    (1, 2),
    (0, 3),
    (2, 0),
    (1, 1),
    (0, 2),
    (1, 0),
    (0, 1),
];

fn monomial_index(a: u8, b: u8) -> Option<usize> {
    MONOMIALS.iter().position(|&m| m == (a, b))
}

/// Which variable a row is multiplied by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shift {
    Lambda,
    Mu,
}

/// A polynomial in (λ, μ) over [`MONOMIALS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyRow18(pub [f64; 18]);

impl PolyRow18 {
    pub fn zero() -> Self {
        Self([0.0; 18])
    }

    pub fn unit(index: usize) -> Self {
        let mut c = [0.0; 18];
        c[index] = 1.0;
        Self(c)
    }

    pub fn scale(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// The monomial vector at (λ, μ).
    pub fn monomial_vector(lambda: f64, mu: f64) -> [f64; 18] {
        MONOMIALS.map(|(a, b)| lambda.powi(a as i32) * mu.powi(b as i32))
    }

    pub fn eval(&self, lambda: f64, mu: f64) -> f64 {
        let y = Self::monomial_vector(lambda, mu);
        self.0.iter().zip(y.iter()).map(|(c, v)| c * v).sum()
    }

    /// Σ|cᵢ yᵢ|, the natural magnitude against which an evaluation is small.
    pub fn eval_magnitude(&self, lambda: f64, mu: f64) -> f64 {
        let y = Self::monomial_vector(lambda, mu);
        self.0.iter().zip(y.iter()).map(|(c, v)| (c * v).abs()).sum()
    }
}

/// Tolerance, relative to the row scale, for coefficients that a shift would
/// push out of the basis.
const SHIFT_TOL: f64 = 1e-11;

/// Multiply a row by λ or μ, moving coefficients along the basis.
pub fn shift_row(row: &PolyRow18, var: Shift) -> Result<PolyRow18> {
    let scale = row.scale();
    let mut out = [0.0; 18];
    for (i, &(a, b)) in MONOMIALS.iter().enumerate() {
        let c = row.0[i];
        let target = match var {
            Shift::Lambda => monomial_index(a + 1, b),
            Shift::Mu => monomial_index(a, b + 1),
        };
        match target {
            Some(j) => out[j] = c,
            None if c.abs() <= SHIFT_TOL * scale => {}
            None => return Err(Error::BasisOverflow),
        }
    }
    Ok(PolyRow18(out))
}

/// `D` of `C(λ,μ) = [[0, λI₆],[0, μI₆]] − D`.
///
/// Rows 0–5 are the (1,1),(1,2),(1,3),(2,2),(2,3),(3,3) entries of
/// `P′₂Q*P′₂ᵀ`, rows 6–11 the same entries for `P′₃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintMatrix {
    pub d: SMatrix<f64, 12, 10>,
}

/// Symmetric-entry order shared by the rows of `D` and by x₅..x₁₀.
const SYM_ENTRIES: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// The dual quadric with `x` placed in its entries.
pub fn quadric_from_x(x: &SVector<f64, 10>) -> Matrix4<f64> {
    let mut q = Matrix4::zeros();
    q[(3, 3)] = x[0];
    for k in 0..3 {
        q[(k, 3)] = x[1 + k];
        q[(3, k)] = x[1 + k];
    }
    for (n, &(i, j)) in SYM_ENTRIES.iter().enumerate() {
        q[(i, j)] = x[4 + n];
        q[(j, i)] = x[4 + n];
    }
    q
}

impl ConstraintMatrix {
    /// Numeric `C(λ, μ)`.
    pub fn at(&self, lambda: f64, mu: f64) -> SMatrix<f64, 12, 10> {
        let mut c = -self.d;
        for k in 0..6 {
            c[(k, 4 + k)] += lambda;
            c[(6 + k, 4 + k)] += mu;
        }
        c
    }
}

/// Assemble `D` column by column: column `c` holds the six symmetric entries
/// of `P′ᵢ Q(e_c) P′ᵢᵀ` for the unit vector `e_c`.
pub fn build_constraints(triplet: &ProjectiveTriplet) -> ConstraintMatrix {
    let mut d = SMatrix::<f64, 12, 10>::zeros();
    for c in 0..10 {
        let q = quadric_from_x(&SVector::<f64, 10>::from_fn(|i, _| if i == c { 1.0 } else { 0.0 }));
        for (block, cam) in triplet.cameras[1..].iter().enumerate() {
            let m = cam.0 * q * cam.0.transpose();
            for (n, &(i, j)) in SYM_ENTRIES.iter().enumerate() {
                d[(6 * block + n, c)] = m[(i, j)];
            }
        }
    }
    ConstraintMatrix { d }
}

/// Dense bivariate polynomial of total degree ≤ 5; `c[a][b]` multiplies λᵃμᵇ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiPoly5 {
    pub c: [[f64; 6]; 6],
}

impl BiPoly5 {
    fn zero() -> Self {
        Self { c: [[0.0; 6]; 6] }
    }

    fn constant(v: f64) -> Self {
        let mut p = Self::zero();
        p.c[0][0] = v;
        p
    }

    /// Multiply by `k0 + kl λ + km μ`; the top degree is dropped, which is
    /// exact as long as the product stays within degree 5.
    fn mul_affine(&self, k0: f64, kl: f64, km: f64) -> Self {
        let mut out = Self::zero();
        for a in 0..6 {
            for b in 0..6 - a {
                let v = self.c[a][b];
                if v == 0.0 {
                    continue;
                }
                out.c[a][b] += k0 * v;
                if a + b < 5 {
                    out.c[a + 1][b] += kl * v;
                    out.c[a][b + 1] += km * v;
                }
            }
        }
        out
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        for a in 0..6 {
            for b in 0..6 - a {
                self.c[a][b] += s * other.c[a][b];
            }
        }
    }

    pub fn eval(&self, lambda: f64, mu: f64) -> f64 {
        let mut sum = 0.0;
        for a in 0..6 {
            for b in 0..6 - a {
                sum += self.c[a][b] * lambda.powi(a as i32) * mu.powi(b as i32);
            }
        }
        sum
    }

    pub fn max_coeff(&self) -> f64 {
        let mut m = 0.0f64;
        for a in 0..6 {
            for b in 0..6 - a {
                m = m.max(self.c[a][b].abs());
            }
        }
        m
    }

    /// Largest of |λ⁵|, |μ⁵|, |1| coefficients relative to the largest one.
    pub fn structural_defect(&self) -> f64 {
        let m = self.max_coeff();
        if m == 0.0 {
            return 0.0;
        }
        self.c[5][0].abs().max(self.c[0][5].abs()).max(self.c[0][0].abs()) / m
    }

    pub fn to_row18(&self) -> PolyRow18 {
        PolyRow18(MONOMIALS.map(|(a, b)| self.c[a as usize][b as usize]))
    }
}

/// Determinant of a 5×5 matrix with entries `c0 + cl λ + cm μ`, expanded
/// exactly by rows over column subsets.
fn affine_det5(c0: &[[f64; 5]; 5], cl: &[[f64; 5]; 5], cm: &[[f64; 5]; 5]) -> BiPoly5 {
    let mut table = vec![BiPoly5::zero(); 1 << 5];
    table[0] = BiPoly5::constant(1.0);
    for mask in 0usize..(1 << 5) {
        let row = mask.count_ones() as usize;
        if row == 5 {
            continue;
        }
        let base = table[mask];
        if base.max_coeff() == 0.0 {
            continue;
        }
        for col in 0..5 {
            if mask & (1 << col) != 0 {
                continue;
            }
            let inversions = (mask >> (col + 1)).count_ones();
            let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
            let term = base.mul_affine(c0[row][col], cl[row][col], cm[row][col]);
            table[mask | (1 << col)].add_scaled(&term, sign);
        }
    }
    table[(1 << 5) - 1]
}

/// Rows kept when rows `i` and `i+6` are removed.
fn kept_rows(i: usize) -> Vec<usize> {
    (0..12).filter(|&r| r != i && r != i + 6).collect()
}

/// `S_i(λ, μ)` as a full degree-5 polynomial, before projection onto the
/// 18-term basis. `i` is zero-based.
///
/// The five columns r, q₁, q₂, q₃ and ω-column `i` of the 10×10 submatrix
/// contain no λ or μ, so they are eliminated with partial pivoting first; the
/// leftover 5×5 block is affine in (λ, μ) and is expanded exactly.
pub fn subdeterminant_bipoly(c: &ConstraintMatrix, i: usize) -> BiPoly5 {
    assert!(i < 6, "subdeterminant index out of range");
    let rows = kept_rows(i);
    let scalar_cols = [0usize, 1, 2, 3, 4 + i];
    let other_cols: Vec<usize> = (0..6).filter(|&j| j != i).map(|j| 4 + j).collect();

    // per kept row: scalar part, then constant / λ / μ parts of the rest
    let mut s = [[0.0f64; 5]; 10];
    let mut k0 = [[0.0f64; 5]; 10];
    let mut kl = [[0.0f64; 5]; 10];
    let mut km = [[0.0f64; 5]; 10];
    for (n, &r) in rows.iter().enumerate() {
        for (k, &col) in scalar_cols.iter().enumerate() {
            s[n][k] = -c.d[(r, col)];
        }
        for (k, &col) in other_cols.iter().enumerate() {
            k0[n][k] = -c.d[(r, col)];
            if r < 6 && col == 4 + r {
                kl[n][k] = 1.0;
            }
            if r >= 6 && col == 4 + (r - 6) {
                km[n][k] = 1.0;
            }
        }
    }

    let mut used = [false; 10];
    let mut order = Vec::with_capacity(10);
    let mut pivot_product = 1.0;
    for k in 0..5 {
        let mut best = None;
        let mut best_abs = -1.0;
        for n in 0..10 {
            if !used[n] && s[n][k].abs() > best_abs {
                best = Some(n);
                best_abs = s[n][k].abs();
            }
        }
        let p = best.expect("ten rows for five pivots");
        used[p] = true;
        order.push(p);
        let pv = s[p][k];
        pivot_product *= pv;
        if pv == 0.0 {
            return BiPoly5::zero();
        }
        for n in 0..10 {
            if used[n] {
                continue;
            }
            let f = s[n][k] / pv;
            if f == 0.0 {
                continue;
            }
            for kk in 0..5 {
                s[n][kk] -= f * s[p][kk];
                k0[n][kk] -= f * k0[p][kk];
                kl[n][kk] -= f * kl[p][kk];
                km[n][kk] -= f * km[p][kk];
            }
            s[n][k] = 0.0;
        }
    }
    let rest: Vec<usize> = (0..10).filter(|n| !used[*n]).collect();
    order.extend(rest.iter().copied());

    let mut a0 = [[0.0; 5]; 5];
    let mut al = [[0.0; 5]; 5];
    let mut am = [[0.0; 5]; 5];
    for (m, &n) in rest.iter().enumerate() {
        a0[m] = k0[n];
        al[m] = kl[n];
        am[m] = km[n];
    }
    let mut det = affine_det5(&a0, &al, &am);

    // row permutation parity and the column move of ω-column i to slot 4
    let mut inversions = 0;
    for x in 0..10 {
        for y in x + 1..10 {
            if order[x] > order[y] {
                inversions += 1;
            }
        }
    }
    let sign = if (inversions + i) % 2 == 0 { 1.0 } else { -1.0 };
    let factor = sign * pivot_product;
    for a in 0..6 {
        for b in 0..6 - a {
            det.c[a][b] *= factor;
        }
    }
    det
}

/// Largest relative size tolerated for the λ⁵, μ⁵ and constant coefficients.
pub const STRUCTURAL_TOL: f64 = 1e-8;

/// `S_i` projected onto the 18-term basis; `i` is zero-based.
pub fn subdeterminant_poly(c: &ConstraintMatrix, i: usize) -> Result<PolyRow18> {
    let full = subdeterminant_bipoly(c, i);
    let defect = full.structural_defect();
    if !(defect <= STRUCTURAL_TOL) || full.max_coeff() == 0.0 {
        return Err(Error::StructuralViolation(defect));
    }
    Ok(full.to_row18())
}

/// All six `S_i`, each scaled to unit max-abs: the rows of `F₀`.
pub fn f0_rows(c: &ConstraintMatrix) -> Result<[PolyRow18; 6]> {
    let mut rows = [PolyRow18::zero(); 6];
    for (i, row) in rows.iter_mut().enumerate() {
        let p = subdeterminant_poly(c, i)?;
        let s = p.scale();
        *row = PolyRow18(p.0.map(|v| v / s));
    }
    Ok(rows)
}

/// Every reduced matrix of the elimination schedule.
///
/// The schedule runs on the balanced variables `λ/scale`, `μ/scale`; the
/// rows of `reduced` are polynomials in those.
#[derive(Debug, Clone)]
pub struct EliminationTrace {
    pub reduced: [RrefResult; 4],
    pub scale: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl EliminationTrace {
    /// Row `r` (zero-based) of the final reduced matrix.
    pub fn final_row(&self, r: usize) -> PolyRow18 {
        let m = &self.reduced[3].reduced;
        PolyRow18(std::array::from_fn(|k| m[(r, k)]))
    }
}

fn to_matrix(rows: &[PolyRow18]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), 18, |r, c| rows[r].0[c])
}

fn row_of(m: &DMatrix<f64>, r: usize) -> PolyRow18 {
    PolyRow18(std::array::from_fn(|k| m[(r, k)]))
}

fn reduce_stage(rows: &[PolyRow18], stage: usize) -> Result<RrefResult> {
    let r = gj_rref(&to_matrix(rows), DEFAULT_TOL);
    let expected: Vec<usize> = (0..rows.len()).collect();
    if r.pivot_cols != expected {
        return Err(Error::PivotPatternBroken {
            stage,
            pivots: r.pivot_cols,
        });
    }
    Ok(r)
}

/// Scale `s` for the substitution `λ = sλ′, μ = sμ′` that brings the linear
/// and quintic coefficients of the rows to the same magnitude.
///
/// With pixel-unit cameras the scales are far from one, and the coefficients
/// then spread over many orders of magnitude, which hides the last pivots
/// below the rank threshold.
pub fn balancing_scale(rows: &[PolyRow18]) -> f64 {
    let degree_max = |deg: u8| {
        rows.iter()
            .flat_map(|r| r.0.iter().zip(MONOMIALS.iter()))
            .filter(|(_, m)| m.0 + m.1 == deg)
            .fold(0.0f64, |acc, (c, _)| acc.max(c.abs()))
    };
    let s = (degree_max(1) / degree_max(5)).powf(0.25);
    if s.is_finite() && s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Rewrite a row in the variables `λ′ = λ/s`, `μ′ = μ/s`, scaled to unit
/// max-abs.
pub fn rescale_variables(row: &PolyRow18, s: f64) -> PolyRow18 {
    let mut out = PolyRow18(std::array::from_fn(|k| {
        let (a, b) = MONOMIALS[k];
        row.0[k] * s.powi((a + b) as i32)
    }));
    let m = out.scale();
    if m > 0.0 {
        out.0.iter_mut().for_each(|v| *v /= m);
    }
    out
}

/// Run `F₀ → F̃₀ → F₁ → F̃₁ → F₂ → F̃₂ → F₃ → F̃₃` and read off (λ, μ).
pub fn elimination_trace(f0: &[PolyRow18; 6]) -> Result<EliminationTrace> {
    let scale = balancing_scale(f0);
    let balanced: Vec<PolyRow18> = f0.iter().map(|r| rescale_variables(r, scale)).collect();
    let r0 = reduce_stage(&balanced, 0)?;
    let mut rows: Vec<PolyRow18> = (0..6).map(|r| row_of(&r0.reduced, r)).collect();
    rows.push(shift_row(&rows[5], Shift::Lambda)?);
    rows.push(shift_row(&rows[4], Shift::Mu)?);

    let r1 = reduce_stage(&rows, 1)?;
    let mut rows: Vec<PolyRow18> = (0..8).map(|r| row_of(&r1.reduced, r)).collect();
    for src in [6, 7] {
        rows.push(shift_row(&rows[src], Shift::Lambda)?);
        rows.push(shift_row(&rows[src], Shift::Mu)?);
    }

    let r2 = reduce_stage(&rows, 2)?;
    let mut rows: Vec<PolyRow18> = (0..12).map(|r| row_of(&r2.reduced, r)).collect();
    for src in [10, 11] {
        rows.push(shift_row(&rows[src], Shift::Lambda)?);
        rows.push(shift_row(&rows[src], Shift::Mu)?);
    }
    rows.push(shift_row(&rows[9], Shift::Mu)?);

    let r3 = reduce_stage(&rows, 3)?;
    let mu = -r3.reduced[(15, 17)];
    let lambda = -mu * r3.reduced[(16, 17)];
    Ok(EliminationTrace {
        reduced: [r0, r1, r2, r3],
        scale,
        lambda: lambda * scale,
        mu: mu * scale,
    })
}

/// The row with λ and μ exchanged. The basis is closed under the exchange.
pub fn swap_variables(row: &PolyRow18) -> PolyRow18 {
    PolyRow18(std::array::from_fn(|k| {
        let (a, b) = MONOMIALS[k];
        row.0[monomial_index(b, a).expect("basis is symmetric")]
    }))
}

/// (λ, μ) from the six subdeterminant rows: the elimination followed by
/// [`refine_scales`].
///
/// On rare instances the last stage cannot read λ off linearly. The same
/// schedule is then run with λ and μ exchanged, which reads it from the
/// quadratic row instead.
pub fn elimination_pipeline(f0: &[PolyRow18; 6]) -> Result<(f64, f64)> {
    let (lambda, mu) = match elimination_trace(f0) {
        Ok(t) => (t.lambda, t.mu),
        Err(first) => {
            let swapped = f0.map(|r| swap_variables(&r));
            let t = elimination_trace(&swapped).map_err(|_| first)?;
            (t.mu, t.lambda)
        }
    };
    Ok(refine_scales(f0, lambda, mu))
}

/// Most Gauss-Newton steps taken by [`refine_scales`].
const REFINE_STEPS: usize = 4;

/// Gauss-Newton on the six subdeterminants, in the balanced variables.
///
/// The fixed elimination schedule loses a few digits on poorly conditioned
/// instances; the rows themselves are exact, so a couple of steps on their
/// common root recover them. A step is kept only if it lowers the residual.
pub fn refine_scales(f0: &[PolyRow18; 6], lambda: f64, mu: f64) -> (f64, f64) {
    let s = balancing_scale(f0);
    let rows: Vec<PolyRow18> = f0.iter().map(|r| rescale_variables(r, s)).collect();
    let residual = |l: f64, m: f64| SVector::<f64, 6>::from_fn(|i, _| rows[i].eval(l, m));
    let (mut l, mut m) = (lambda / s, mu / s);
    if !(l.is_finite() && m.is_finite()) {
        return (lambda, mu);
    }
    let mut r = residual(l, m);
    for _ in 0..REFINE_STEPS {
        let mut jac = SMatrix::<f64, 6, 2>::zeros();
        for (i, row) in rows.iter().enumerate() {
            for (k, &(a, b)) in MONOMIALS.iter().enumerate() {
                let c = row.0[k];
                if a > 0 {
                    jac[(i, 0)] += c * a as f64 * l.powi(a as i32 - 1) * m.powi(b as i32);
                }
                if b > 0 {
                    jac[(i, 1)] += c * b as f64 * l.powi(a as i32) * m.powi(b as i32 - 1);
                }
            }
        }
        let Ok(step) = jac.svd(true, true).solve(&r, 1e-14) else {
            break;
        };
        let (nl, nm) = (l - step[0], m - step[1]);
        let nr = residual(nl, nm);
        if !(nr.norm() < r.norm()) {
            break;
        }
        (l, m, r) = (nl, nm, nr);
    }
    (l * s, m * s)
}

/// Absolute dual quadric recovered for given scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualQuadricSolution {
    pub lambda: f64,
    pub mu: f64,
    pub r: f64,
    pub q: Vector3<f64>,
    /// Symmetric with `ω*₃₃ = 1`.
    pub omega: Matrix3<f64>,
    /// `‖C(λ,μ)x‖ / ‖D‖_F`.
    pub residual: f64,
}

impl DualQuadricSolution {
    pub fn x(&self) -> SVector<f64, 10> {
        let o = &self.omega;
        SVector::<f64, 10>::from_column_slice(&[
            self.r,
            self.q.x,
            self.q.y,
            self.q.z,
            o[(0, 0)],
            o[(0, 1)],
            o[(0, 2)],
            o[(1, 1)],
            o[(1, 2)],
            1.0,
        ])
    }

    pub fn quadric(&self) -> Matrix4<f64> {
        quadric_from_x(&self.x())
    }
}

/// Gauss-Jordan on the numeric `C(λ, μ)` with pivots restricted to the first
/// nine columns; the tenth entry of `x` is the free unit.
pub fn recover_dual_quadric(c: &ConstraintMatrix, lambda: f64, mu: f64) -> Result<DualQuadricSolution> {
    let d_norm = c.d.norm();
    if !(lambda.is_finite() && mu.is_finite()) {
        return Err(Error::RankUnexpected(0));
    }
    let cm = c.at(lambda, mu);
    let mut m = DMatrix::from_fn(12, 10, |r, k| cm[(r, k)]);
    if lambda.abs().max(mu.abs()) <= 1e-12 * d_norm {
        let rank = gj_rref(&m, DEFAULT_TOL).rank;
        return Err(Error::RankUnexpected(rank));
    }
    for r in 0..12 {
        let s = m.row(r).amax();
        if s > 0.0 {
            m.row_mut(r).scale_mut(1.0 / s);
        }
    }
    let red = gj_rref_limited(&m, DEFAULT_TOL, 9);
    if red.rank < 9 {
        return Err(Error::RankUnexpected(red.rank));
    }
    if red.pivot_cols != (0..9).collect::<Vec<_>>() {
        return Err(Error::NormalizationFailure);
    }
    let mut x = SVector::<f64, 10>::zeros();
    for k in 0..9 {
        x[k] = -red.reduced[(k, 9)];
    }
    x[9] = 1.0;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NormalizationFailure);
    }
    let residual = (cm * x).norm() / d_norm;
    let omega = Matrix3::new(x[4], x[5], x[6], x[5], x[7], x[8], x[6], x[8], 1.0);
    Ok(DualQuadricSolution {
        lambda,
        mu,
        r: x[0],
        q: Vector3::new(x[1], x[2], x[3]),
        omega,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDiagnostics {
    /// RMS pixel error of the metric cameras on the six points; filled in by
    /// [`autocalibrate`].
    pub reprojection_px: f64,
    /// Largest `‖R/s − nearest_rotation(R/s)‖_F` over the two views.
    pub orthogonality_residual: f64,
    pub positive_definite: bool,
    pub projective_root: usize,
    pub dual_quadric_residual: f64,
    pub lambda: f64,
    pub mu: f64,
}

/// Calibration and metric poses of views 2 and 3 relative to view 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub k: Matrix3<f64>,
    pub r2: Matrix3<f64>,
    pub r3: Matrix3<f64>,
    pub t2: Vector3<f64>,
    pub t3: Vector3<f64>,
    pub p: Vector3<f64>,
    pub h: Matrix4<f64>,
    /// The six points in the metric frame of the first camera.
    pub points: [WorldPoint; 6],
    pub diagnostics: CalibrationDiagnostics,
}

impl CalibrationResult {
    /// `K[I|0]`, `K[R₂|t₂]`, `K[R₃|t₃]`.
    pub fn metric_cameras(&self) -> [Camera; 3] {
        [
            Camera::metric(&self.k, &Matrix3::identity(), &Vector3::zeros()),
            Camera::metric(&self.k, &self.r2, &self.t2),
            Camera::metric(&self.k, &self.r3, &self.t3),
        ]
    }

    /// Express a result computed on images mapped by `T` (last row
    /// `(0, 0, 1)`) in the original image frame: `K = T⁻¹K′`, `p = Tᵀp′`.
    /// Poses and metric points do not change.
    pub fn unnormalized(&self, t: &Matrix3<f64>) -> Result<Self> {
        let t_inv = t.try_inverse().ok_or(Error::DegenerateMatrix)?;
        let mut k = t_inv * self.k;
        k /= k[(2, 2)];
        let p = t.transpose() * self.p;
        Ok(Self {
            k,
            p,
            h: upgrade_matrix(&k, &p),
            ..*self
        })
    }
}

/// Upgrade matrix `H = [[K, 0],[−pᵀK, 1]]`.
pub fn upgrade_matrix(k: &Matrix3<f64>, p: &Vector3<f64>) -> Matrix4<f64> {
    let mut h = Matrix4::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(k);
    let bottom = -(p.transpose() * k);
    h.fixed_view_mut::<1, 3>(3, 0).copy_from(&bottom);
    h[(3, 3)] = 1.0;
    h
}

/// Metric points `H⁻¹X′` for the triplet's six points.
fn metric_points(triplet: &ProjectiveTriplet, h: &Matrix4<f64>) -> Result<[WorldPoint; 6]> {
    let h_inv = h.try_inverse().ok_or(Error::ImproperRotation)?;
    Ok(triplet.points.map(|x| WorldPoint(h_inv * x.0)))
}

/// Cholesky of ω*, the upgrade `H`, and rotation-corrected metric poses.
///
/// Translations are signed so that the majority of the six points lie in
/// front of the first camera.
pub fn calibrate_and_upgrade(triplet: &ProjectiveTriplet, sol: &DualQuadricSolution) -> Result<CalibrationResult> {
    let k = cholesky_upper_right(&sol.omega)?;
    let omega_inv = sol.omega.try_inverse().ok_or(Error::NotPositiveDefinite)?;
    let p = -(omega_inv * sol.q);
    let h = upgrade_matrix(&k, &p);
    let k_inv = k.try_inverse().ok_or(Error::NotPositiveDefinite)?;

    let mut poses = [(Matrix3::identity(), Vector3::zeros()); 2];
    let mut ortho = 0.0f64;
    for (slot, cam) in triplet.cameras[1..].iter().enumerate() {
        let m = k_inv * cam.0 * h;
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t: Vector3<f64> = m.column(3).into_owned();
        let det = r.determinant();
        let s = det.cbrt();
        if !(s.is_finite()) || s.abs() <= 1e-300 || det.abs() <= 1e-12 * r.norm().powi(3) {
            return Err(Error::ImproperRotation);
        }
        let r_scaled = r / s;
        let rot = nearest_rotation(&r_scaled).map_err(|_| Error::ImproperRotation)?;
        ortho = ortho.max((r_scaled - rot).norm());
        poses[slot] = (rot, t / s);
    }

    let mut pts = metric_points(triplet, &h)?;
    let in_front = pts.iter().filter(|y| y.0.z * y.0.w > 0.0).count();
    if in_front * 2 < pts.len() {
        for (_, t) in poses.iter_mut() {
            *t = -*t;
        }
        for y in pts.iter_mut() {
            y.0 = Vector4::new(-y.0.x, -y.0.y, -y.0.z, y.0.w);
        }
    }

    Ok(CalibrationResult {
        k,
        r2: poses[0].0,
        r3: poses[1].0,
        t2: poses[0].1,
        t3: poses[1].1,
        p,
        h,
        points: pts,
        diagnostics: CalibrationDiagnostics {
            reprojection_px: f64::NAN,
            orthogonality_residual: ortho,
            positive_definite: true,
            projective_root: 0,
            dual_quadric_residual: sol.residual,
            lambda: sol.lambda,
            mu: sol.mu,
        },
    })
}

/// Metric upgrade of one projective root, with the reprojection check
/// against the observations.
pub fn calibrate_projective(solution: &ProjectiveSolution, obs: &[Vec<nalgebra::Vector2<f64>>]) -> Result<CalibrationResult> {
    let triplet = &solution.triplet;
    let c = build_constraints(triplet);
    let f0 = f0_rows(&c)?;
    let (lambda, mu) = elimination_pipeline(&f0)?;
    let dq = recover_dual_quadric(&c, lambda, mu)?;
    let mut result = calibrate_and_upgrade(triplet, &dq)?;
    result.diagnostics.reprojection_px = reprojection_rms(&result.metric_cameras(), &result.points, obs)?;
    result.diagnostics.projective_root = solution.root_index;
    Ok(result)
}

/// Metric upgrade of one root found on images normalized by `t`, returned in
/// pixel units with its reprojection error against the raw observations.
pub fn calibrate_root(
    solution: &ProjectiveSolution,
    obs_normalized: &[Vec<nalgebra::Vector2<f64>>],
    obs: &[Vec<nalgebra::Vector2<f64>>],
    t: &Matrix3<f64>,
) -> Result<CalibrationResult> {
    let mut r = calibrate_projective(solution, obs_normalized)?.unnormalized(t)?;
    r.diagnostics.reprojection_px = reprojection_rms(&r.metric_cameras(), &r.points, obs)?;
    if !r.diagnostics.reprojection_px.is_finite() {
        return Err(Error::ProjectionAtInfinity);
    }
    Ok(r)
}

/// Everything [`autocalibrate`] found, including rejected roots.
#[derive(Debug, Clone)]
pub struct AutocalibOutcome {
    /// Accepted candidates, best (lowest metric reprojection error) first.
    pub results: Vec<CalibrationResult>,
    pub projective_roots: usize,
    pub rejected: Vec<(usize, Error)>,
}

/// Projective reconstruction followed by the metric upgrade of every root.
///
/// The images are first mapped by one similarity common to the three views
/// (see [`SixViewCorrespondences::normalizing_transform`]). The
/// intrinsics stay shared, and in pixel units the coefficients of the
/// subdeterminant polynomials spread over too many orders of magnitude for the
/// elimination to find its pivots.
pub fn autocalibrate_detailed(corr: &SixViewCorrespondences) -> Result<AutocalibOutcome> {
    let t = corr.normalizing_transform()?;
    let normalized = corr.transformed(&t);
    let set = projective_reconstruction(&normalized)?;
    let obs_n = normalized.pixels()?;
    let obs = corr.pixels()?;
    let mut results = Vec::new();
    let mut rejected = Vec::new();
    for sol in &set.solutions {
        match calibrate_root(sol, &obs_n, &obs, &t) {
            Ok(r) => results.push(r),
            Err(e) => rejected.push((sol.root_index, e)),
        }
    }
    results.sort_by(|a, b| {
        a.diagnostics
            .reprojection_px
            .total_cmp(&b.diagnostics.reprojection_px)
            .then(a.diagnostics.projective_root.cmp(&b.diagnostics.projective_root))
    });
    Ok(AutocalibOutcome {
        results,
        projective_roots: set.solutions.len(),
        rejected,
    })
}

/// Calibration candidates ranked by metric reprojection error. Degenerate
/// input yields an empty list rather than an error.
pub fn autocalibrate(corr: &SixViewCorrespondences) -> Vec<CalibrationResult> {
    autocalibrate_detailed(corr).map(|o| o.results).unwrap_or_default()
}

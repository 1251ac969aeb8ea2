//! Minimal projective reconstruction from six points in three views.
//!
//! The first five world points are fixed to the projective basis e₁..e₄,
//! (1,1,1,1). In every view the images of e₁..e₄ are moved to the canonical
//! image basis, which leaves a one-parameter family of cameras consistent
//! with the first five points. Requiring the family to also reach the sixth
//! image point gives one quadric in X₆ per view. Three quadrics with only
//! cross terms meet in X₅ plus up to three further points, which are found
//! from a cubic.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    apply_h0, canonical_plane_basis, projective_basis, reprojection_rms, Camera, ImagePoint,
    ProjectiveTriplet, SixViewCorrespondences, WorldPoint,
};
use crate::numeric::{
    cubic_discriminant_normalized, cubic_real_roots, right_singular_basis,
};

/// Quadric with cross terms only, over (XY, XZ, XW, YZ, YW, ZW).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewQuadric(pub [f64; 6]);

impl ViewQuadric {
    pub fn eval(&self, x: &WorldPoint) -> f64 {
        let m = monomials(&x.0);
        self.0.iter().zip(m.iter()).map(|(c, v)| c * v).sum()
    }

    pub fn scale(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// (XY, XZ, XW, YZ, YW, ZW).
pub fn monomials(x: &Vector4<f64>) -> [f64; 6] {
    [
        x[0] * x[1],
        x[0] * x[2],
        x[0] * x[3],
        x[1] * x[2],
        x[1] * x[3],
        x[2] * x[3],
    ]
}

const COORD_TOL: f64 = 1e-10;

/// Quadric satisfied by every X₆ that some camera of the canonical family
/// maps onto the sixth image point.
///
/// In the canonical frame the family is `P = [[a,0,0,d],[0,b,0,d],[0,0,c,d]]`
/// with `a+d = κu, b+d = κv, c+d = κw` for x̂₅ = (u,v,w). The two incidence
/// equations of x̂₆ = (p,q,r) are linear in (κ, d); their 2×2 determinant is
/// `(quX − pvY)(r(W−Y) − q(W−Z)) − (rvY − qwZ)(q(W−X) − p(W−Y))`.
pub fn view_quadric(points: &[ImagePoint; 6]) -> Result<ViewQuadric> {
    let t = canonical_plane_basis([&points[0], &points[1], &points[2], &points[3]])?;
    let x5 = (t * points[4].0).normalize();
    let x6 = (t * points[5].0).normalize();
    if x5.iter().chain(x6.iter()).any(|c| c.abs() <= COORD_TOL) {
        return Err(Error::DegenerateView);
    }
    let (u, v, w) = (x5.x, x5.y, x5.z);
    let (p, q, r) = (x6.x, x6.y, x6.z);
    // expansion of the determinant above
    Ok(ViewQuadric([
        q * r * (v - u),
        q * q * (u - w),
        q * u * (r - q),
        p * q * (w - v),
        v * q * (p - r),
        w * q * (q - p),
    ]))
}

/// Real sixth-point candidates together with the cubic they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SixthPointRoots {
    pub points: Vec<WorldPoint>,
    /// Normalized discriminant of the pencil cubic.
    pub discriminant: f64,
    /// Number of real cubic roots, with multiplicity.
    pub real_roots: usize,
}

fn sym_outer(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    let m = a * b.transpose();
    (m + m.transpose()) * 0.5
}

/// Recover X from its cross-product monomials, anchoring on the coordinate
/// that keeps all divisions well away from zero.
fn point_from_monomials(m: &[f64; 6]) -> Option<WorldPoint> {
    let [xy, xz, xw, yz, yw, zw] = *m;
    // for each anchor: the three direct products and the ratio options for
    // the anchor's square as (num_a, num_b, den)
    let anchors: [([f64; 3], [(f64, f64, f64); 3]); 4] = [
        ([xy, xz, xw], [(xy, xz, yz), (xy, xw, yw), (xz, xw, zw)]),
        ([xy, yz, yw], [(xy, yz, xz), (xy, yw, xw), (yz, yw, zw)]),
        ([xz, yz, zw], [(xz, yz, xy), (xz, zw, xw), (yz, zw, yw)]),
        ([xw, yw, zw], [(xw, yw, xy), (xw, zw, xz), (yw, zw, yz)]),
    ];
    let mut best: Option<(f64, usize)> = None;
    for (i, (direct, ratios)) in anchors.iter().enumerate() {
        let den = ratios.iter().fold(0.0f64, |m, r| m.max(r.2.abs()));
        let min_used = direct.iter().fold(den, |m, v| m.min(v.abs()));
        if best.is_none_or(|(b, _)| min_used > b) {
            best = Some((min_used, i));
        }
    }
    let (quality, i) = best?;
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(quality > 1e-14 * scale) {
        return None;
    }
    let (direct, ratios) = anchors[i];
    let (na, nb, den) = ratios
        .iter()
        .copied()
        .max_by(|a, b| a.2.abs().total_cmp(&b.2.abs()))?;
    let sq = na * nb / den;
    let v = match i {
        0 => Vector4::new(sq, direct[0], direct[1], direct[2]),
        1 => Vector4::new(direct[0], sq, direct[1], direct[2]),
        2 => Vector4::new(direct[0], direct[1], sq, direct[2]),
        _ => Vector4::new(direct[0], direct[1], direct[2], sq),
    };
    if !v.iter().all(|c| c.is_finite()) || v.norm() == 0.0 {
        return None;
    }
    Some(WorldPoint(v).normalized())
}

/// Most Newton steps taken by [`polish_on_quadrics`].
const POLISH_STEPS: usize = 4;

/// Singular values of the quadric Jacobian below this fraction of the largest
/// are truncated in the polishing steps.
const POLISH_RCOND: f64 = 1e-8;

/// Newton steps on the three quadrics in the chart that fixes the largest
/// coordinate; a step is kept only if it lowers the residual. The monomial
/// read-out loses a few digits, the quadrics do not.
fn polish_on_quadrics(quadrics: &[&ViewQuadric; 3], x: WorldPoint) -> WorldPoint {
    let scales = quadrics.map(|q| q.scale());
    let residual = |v: &Vector4<f64>| Vector3::from_fn(|i, _| quadrics[i].eval(&WorldPoint(*v)) / scales[i]);
    let anchor = x.0.iamax();
    let mut v = x.0 / x.0[anchor];
    let mut r = residual(&v);
    let free: Vec<usize> = (0..4).filter(|&k| k != anchor).collect();
    for _ in 0..POLISH_STEPS {
        // ∂(cross monomials)/∂(X,Y,Z,W), rows in monomial order
        let d = [
            [v[1], v[0], 0.0, 0.0],
            [v[2], 0.0, v[0], 0.0],
            [v[3], 0.0, 0.0, v[0]],
            [0.0, v[2], v[1], 0.0],
            [0.0, v[3], 0.0, v[1]],
            [0.0, 0.0, v[3], v[2]],
        ];
        let jac = Matrix3::from_fn(|i, j| (0..6).map(|k| quadrics[i].0[k] * d[k][free[j]]).sum::<f64>() / scales[i]);
        // directions along a near-tangent valley are left alone: there the
        // step is rounding noise
        let svd = jac.svd(true, true);
        let Ok(step) = svd.solve(&r, POLISH_RCOND * svd.singular_values.max()) else {
            break;
        };
        let mut next = v;
        for (j, &k) in free.iter().enumerate() {
            next[k] -= step[j];
        }
        let nr = residual(&next);
        if !(nr.norm() < r.norm()) {
            break;
        }
        (v, r) = (next, nr);
    }
    WorldPoint(v).normalized()
}

/// Angle below which a candidate counts as one of the basis points.
const BASIS_ANGLE_TOL: f64 = 1e-6;

/// Intersect the three view quadrics away from X₅.
///
/// The admissible monomial vectors lie in the 3-dimensional null space N of
/// the stacked coefficients and must also satisfy the two rank-one conics
/// `m_XY m_ZW = m_XZ m_YW` and `m_XZ m_YW = m_XW m_YZ`. Both conics pass
/// through the coordinates s₀ of (1,…,1); lines through s₀ meet each conic in
/// one more point, and the two second intersections agree exactly when
/// `B₁(s₀,d)K₂(d) − B₂(s₀,d)K₁(d) = 0`, a binary cubic in the direction d.
pub fn sixth_point_candidates(quadrics: [&ViewQuadric; 3]) -> Result<SixthPointRoots> {
    let mut stack = DMatrix::zeros(3, 6);
    for (i, q) in quadrics.iter().enumerate() {
        let s = q.scale();
        if !(s > 0.0) {
            return Err(Error::RankDefect("zero view quadric"));
        }
        for j in 0..6 {
            stack[(i, j)] = q.0[j] / s;
        }
    }
    let (values, vectors) = right_singular_basis(&stack);
    // values ascend; the top three are the row-space singular values
    if values[3] <= 1e-10 * values[5] {
        return Err(Error::RankDefect("quadric stack rank below 3"));
    }
    let null = DMatrix::from_columns(&vectors[..3]);

    // rotate the null basis so that its first axis is (1,…,1)
    let ones = DVector::from_element(6, 1.0 / 6f64.sqrt());
    let s0: Vector3<f64> = Vector3::from_iterator((null.transpose() * &ones).iter().copied());
    if s0.norm() < 0.5 {
        return Err(Error::RankDefect("basis point outside the null space"));
    }
    let s0 = s0.normalize();
    let helper = if s0.x.abs() < 0.6 { Vector3::x() } else { Vector3::y() };
    let u1 = (helper - s0 * s0.dot(&helper)).normalize();
    let u2 = s0.cross(&u1);
    let rot = Matrix3::from_columns(&[s0, u1, u2]);
    let rows: Vec<Vector3<f64>> = (0..6)
        .map(|k| {
            let r = Vector3::new(null[(k, 0)], null[(k, 1)], null[(k, 2)]);
            rot.transpose() * r
        })
        .collect();

    let conic1 = sym_outer(&rows[0], &rows[5]) - sym_outer(&rows[1], &rows[4]);
    let conic2 = sym_outer(&rows[1], &rows[4]) - sym_outer(&rows[2], &rows[3]);

    // B_j(s0, a e1 + b e2) = beta a + gamma b ; K_j = A a² + 2H ab + C b²
    let parts = |c: &Matrix3<f64>| (c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]);
    let (b1, g1, a1, h1, c1) = parts(&conic1);
    let (b2, g2, a2, h2, c2) = parts(&conic2);
    let f3 = b1 * a2 - b2 * a1;
    let f2 = 2.0 * b1 * h2 + g1 * a2 - 2.0 * b2 * h1 - g2 * a1;
    let f1 = b1 * c2 + 2.0 * g1 * h2 - b2 * c1 - 2.0 * g2 * h1;
    let f0 = g1 * c2 - g2 * c1;
    let discriminant = cubic_discriminant_normalized(f3, f2, f1, f0);

    // pick the chart that keeps every root finite
    let directions: Vec<(f64, f64)> = if f0.abs() >= f3.abs() {
        cubic_real_roots(f0, f1, f2, f3)?
            .into_iter()
            .map(|t| (1.0, t))
            .collect()
    } else {
        cubic_real_roots(f3, f2, f1, f0)?
            .into_iter()
            .map(|t| (t, 1.0))
            .collect()
    };
    let real_roots = directions.len();

    let basis = projective_basis();
    let mut points = Vec::new();
    for (a, b) in directions {
        let n = (a * a + b * b).sqrt();
        let d = Vector3::new(0.0, a / n, b / n);
        let pick = |c: &Matrix3<f64>| {
            let bil = c[(0, 1)] * d.y + c[(0, 2)] * d.z;
            let quad = (d.transpose() * c * d)[0];
            (bil, quad)
        };
        let (bil1, quad1) = pick(&conic1);
        let (bil2, quad2) = pick(&conic2);
        let (bil, quad) = if bil1.abs() >= bil2.abs() {
            (bil1, quad1)
        } else {
            (bil2, quad2)
        };
        let s = Vector3::new(1.0, 0.0, 0.0) * (-quad) + d * (2.0 * bil);
        if s.y.hypot(s.z) <= 1e-12 * s.norm() {
            continue;
        }
        let s_null = rot * s;
        let m_vec = &null * DVector::from_column_slice(s_null.as_slice());
        let m: [f64; 6] = std::array::from_fn(|k| m_vec[k]);
        let Some(x6) = point_from_monomials(&m) else {
            continue;
        };
        let x6 = polish_on_quadrics(&quadrics, x6);
        if basis.iter().any(|e| x6.angle_to(e) <= BASIS_ANGLE_TOL) {
            continue;
        }
        points.push(x6);
    }
    if points.is_empty() {
        return Err(Error::NoRealCandidate);
    }
    Ok(SixthPointRoots {
        points,
        discriminant,
        real_roots,
    })
}

/// Linear resection from six correspondences: the 18 cross-product rows
/// `x × P X = 0`, solved for the 12 entries of `P` in the least-squares sense.
pub fn resect_camera(view_points: &[ImagePoint; 6], world_points: &[WorldPoint; 6]) -> Result<Camera> {
    let mut a = DMatrix::zeros(18, 12);
    for (j, (x, w)) in view_points.iter().zip(world_points).enumerate() {
        let x = x.0.normalize();
        let w = w.0.normalize();
        let (u, v, s) = (x.x, x.y, x.z);
        for k in 0..4 {
            // row: [0, -s X, v X]
            a[(3 * j, 4 + k)] = -s * w[k];
            a[(3 * j, 8 + k)] = v * w[k];
            // row: [s X, 0, -u X]
            a[(3 * j + 1, k)] = s * w[k];
            a[(3 * j + 1, 8 + k)] = -u * w[k];
            // row: [-v X, u X, 0]
            a[(3 * j + 2, k)] = -v * w[k];
            a[(3 * j + 2, 4 + k)] = u * w[k];
        }
    }
    let (values, vectors) = right_singular_basis(&a);
    if values[1] <= 1e-10 * values[11] {
        return Err(Error::RankDefect("resection system rank below 11"));
    }
    let p = &vectors[0];
    let cam = Camera(nalgebra::Matrix3x4::from_row_slice(p.as_slice()));
    Ok(cam.normalized())
}

/// One projective root: cameras in the normalized frame, the sixth point in
/// the basis frame, and the fit quality against the raw observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveSolution {
    pub triplet: ProjectiveTriplet,
    pub sixth_point: WorldPoint,
    pub residual_px: f64,
    /// Index of the candidate in the cubic's root order.
    pub root_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SixPointSolutionSet {
    /// Sorted by ascending reprojection residual.
    pub solutions: Vec<ProjectiveSolution>,
    pub discriminant: f64,
    pub real_roots: usize,
}

/// Full projective reconstruction: quadrics, sixth-point candidates, and
/// resection of all three cameras for each candidate, followed by the move
/// to the frame where the first camera is `[I | 0]`.
pub fn projective_reconstruction(corr: &SixViewCorrespondences) -> Result<SixPointSolutionSet> {
    let q: Vec<ViewQuadric> = corr
        .points
        .iter()
        .map(view_quadric)
        .collect::<Result<_>>()?;
    let roots = sixth_point_candidates([&q[0], &q[1], &q[2]])?;
    let obs = corr.pixels()?;
    let basis = projective_basis();

    let mut solutions = Vec::new();
    for (root_index, x6) in roots.points.iter().enumerate() {
        let world = [basis[0], basis[1], basis[2], basis[3], basis[4], *x6];
        let Ok(cams) = corr
            .points
            .iter()
            .map(|view| resect_camera(view, &world))
            .collect::<Result<Vec<_>>>()
        else {
            continue;
        };
        let Ok(triplet) = apply_h0(&[cams[0], cams[1], cams[2]], &world) else {
            continue;
        };
        let Ok(residual_px) = reprojection_rms(&triplet.cameras, &triplet.points, &obs) else {
            continue;
        };
        solutions.push(ProjectiveSolution {
            triplet,
            sixth_point: *x6,
            residual_px,
            root_index,
        });
    }
    if solutions.is_empty() {
        return Err(Error::EmptySolutionSet);
    }
    solutions.sort_by(|a, b| a.residual_px.total_cmp(&b.residual_px));
    Ok(SixPointSolutionSet {
        solutions,
        discriminant: roots.discriminant,
        real_roots: roots.real_roots,
    })
}

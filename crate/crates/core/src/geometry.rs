//! Projective entities and frame normalizations.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Homogeneous image point `(u, v, w)` in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint(pub Vector3<f64>);

impl ImagePoint {
    pub fn new(u: f64, v: f64, w: f64) -> Self {
        Self(Vector3::new(u, v, w))
    }

    pub fn from_pixel(p: Vector2<f64>) -> Self {
        Self(Vector3::new(p.x, p.y, 1.0))
    }

    /// Dehomogenized pixel position, or `None` when `w` vanishes.
    pub fn to_pixel(&self) -> Option<Vector2<f64>> {
        let w = self.0.z;
        if w.abs() <= 1e-12 * self.0.norm() || w == 0.0 {
            None
        } else {
            Some(Vector2::new(self.0.x / w, self.0.y / w))
        }
    }
}

/// Homogeneous world point `(X, Y, Z, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint(pub Vector4<f64>);

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Self {
        Self(Vector4::new(x, y, z, w))
    }

    pub fn from_euclidean(p: Vector3<f64>) -> Self {
        Self(p.push(1.0))
    }

    /// Unit-norm representative with its largest-magnitude entry positive.
    pub fn normalized(&self) -> Self {
        let mut v = self.0.normalize();
        if v[v.iamax()] < 0.0 {
            v.neg_mut();
        }
        Self(v)
    }

    /// Angle between the lines spanned by two homogeneous points, in radians.
    pub fn angle_to(&self, other: &WorldPoint) -> f64 {
        let a = self.0.normalize();
        let b = other.0.normalize();
        let c = a.dot(&b).abs().min(1.0);
        // sin via the rejection keeps precision for tiny angles
        let s = (b - a * a.dot(&b)).norm();
        s.atan2(c)
    }
}

/// The five points used as the projective basis: e₁, e₂, e₃, e₄, (1,1,1,1).
pub fn projective_basis() -> [WorldPoint; 5] {
    [
        WorldPoint::new(1.0, 0.0, 0.0, 0.0),
        WorldPoint::new(0.0, 1.0, 0.0, 0.0),
        WorldPoint::new(0.0, 0.0, 1.0, 0.0),
        WorldPoint::new(0.0, 0.0, 0.0, 1.0),
        WorldPoint::new(1.0, 1.0, 1.0, 1.0),
    ]
}

/// A 3×4 projective camera `P = [A | a]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera(pub Matrix3x4<f64>);

impl Camera {
    pub fn canonical() -> Self {
        Self(Matrix3x4::identity())
    }

    pub fn from_parts(a: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(a);
        p.set_column(3, t);
        Self(p)
    }

    /// `K [R | t]`.
    pub fn metric(k: &Matrix3<f64>, r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        Self::from_parts(&(k * r), &(k * t))
    }

    pub fn left_block(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn last_column(&self) -> Vector3<f64> {
        self.0.column(3).into_owned()
    }

    /// Unit Frobenius norm, largest-magnitude entry positive.
    pub fn normalized(&self) -> Self {
        let mut p = self.0 / self.0.norm();
        if p[p.iamax_full()] < 0.0 {
            p.neg_mut();
        }
        Self(p)
    }

    /// Right null vector of `P` (the camera center), unit norm.
    pub fn center(&self) -> Vector4<f64> {
        let p = &self.0;
        // signed 3×3 minors give the null vector exactly for rank-3 P
        let minor = |skip: usize| {
            let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
            Matrix3::from_fn(|r, c| p[(r, cols[c])]).determinant()
        };
        let c = Vector4::new(minor(0), -minor(1), minor(2), -minor(3));
        let n = c.norm();
        if n > 0.0 {
            c / n
        } else {
            c
        }
    }
}

/// Project a world point, keeping the homogeneous result.
pub fn project(p: &Camera, x: &WorldPoint) -> Result<ImagePoint> {
    let y = p.0 * x.0;
    if y.norm() <= 1e-12 * p.0.norm() * x.0.norm() {
        return Err(Error::PointAtCameraCenter);
    }
    Ok(ImagePoint(y))
}

fn collinear(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, tol: f64) -> bool {
    let det = Matrix3::from_columns(&[*a, *b, *c]).determinant();
    det.abs() <= tol * a.norm() * b.norm() * c.norm()
}

/// Homography `T` sending x₁..x₄ to (1,0,0), (0,1,0), (0,0,1), (1,1,1).
///
/// `T` is scaled to unit Frobenius norm with its largest entry positive.
pub fn canonical_plane_basis(x: [&ImagePoint; 4]) -> Result<Matrix3<f64>> {
    const TOL: f64 = 1e-9;
    let v: Vec<Vector3<f64>> = x.iter().map(|p| p.0).collect();
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        if collinear(&v[i], &v[j], &v[k], TOL) {
            return Err(Error::DegenerateQuad);
        }
    }
    let m = Matrix3::from_columns(&[v[0], v[1], v[2]]);
    let lu = m.lu();
    let c = lu.solve(&v[3]).ok_or(Error::DegenerateQuad)?;
    let inv = Matrix3::from_columns(&[v[0] * c[0], v[1] * c[1], v[2] * c[2]]);
    let t = inv.try_inverse().ok_or(Error::DegenerateQuad)?;
    let mut t = t / t.norm();
    if t[t.iamax_full()] < 0.0 {
        t.neg_mut();
    }
    Ok(t)
}

/// Three cameras in the frame where the first is `[I | 0]`, together with the
/// six reconstructed points expressed in the same frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveTriplet {
    pub cameras: [Camera; 3],
    pub points: [WorldPoint; 6],
    /// The frame change applied to the input cameras.
    pub h0: Matrix4<f64>,
}

impl ProjectiveTriplet {
    /// `(B, b)` such that camera `i` equals `[B | b]`.
    pub fn split(&self, i: usize) -> (Matrix3<f64>, Vector3<f64>) {
        (self.cameras[i].left_block(), self.cameras[i].last_column())
    }
}

/// Condition number above which the first camera's left block is rejected.
pub const H0_CONDITION_LIMIT: f64 = 1e12;

/// Move to the frame `H₀ = [A₁⁻¹, −A₁⁻¹a₁; 0ᵀ, 1]` in which the first camera
/// is `[I | 0]`. Points are mapped by `H₀⁻¹`. The second and third cameras are
/// rescaled to unit Frobenius norm.
pub fn apply_h0(cams: &[Camera; 3], points: &[WorldPoint; 6]) -> Result<ProjectiveTriplet> {
    let a1 = cams[0].left_block();
    let a1_col = cams[0].last_column();
    let sv = a1.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond.is_finite() && cond <= H0_CONDITION_LIMIT) {
        return Err(Error::SingularFirstCamera(cond));
    }
    let a1_inv = a1.try_inverse().ok_or(Error::SingularFirstCamera(cond))?;
    let mut h0 = Matrix4::identity();
    h0.fixed_view_mut::<3, 3>(0, 0).copy_from(&a1_inv);
    h0.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-a1_inv * a1_col));
    let mut h0_inv = Matrix4::identity();
    h0_inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&a1);
    h0_inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&a1_col);

    let cameras = [
        Camera::canonical(),
        Camera(cams[1].0 * h0).normalized(),
        Camera(cams[2].0 * h0).normalized(),
    ];
    let points = points.map(|x| WorldPoint(h0_inv * x.0).normalized());
    Ok(ProjectiveTriplet {
        cameras,
        points,
        h0,
    })
}

/// Root-mean-square pixel distance between projections and observations.
/// `obs[i][j]` is the observation of point `j` in camera `i`.
pub fn reprojection_rms(cams: &[Camera], pts: &[WorldPoint], obs: &[Vec<Vector2<f64>>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (cam, row) in cams.iter().zip(obs) {
        for (x, o) in pts.iter().zip(row) {
            let y = cam.0 * x.0;
            if y.z.abs() <= 1e-12 * y.norm() || y.z == 0.0 {
                return Err(Error::ProjectionAtInfinity);
            }
            let d = Vector2::new(y.x / y.z, y.y / y.z) - o;
            sum += d.norm_squared();
            n += 1;
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok((sum / n as f64).sqrt())
}

/// Three views of six points, `points[view][point]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixViewCorrespondences {
    pub points: [[ImagePoint; 6]; 3],
}

impl SixViewCorrespondences {
    pub fn from_pixels(px: &[[Vector2<f64>; 6]; 3]) -> Self {
        Self {
            points: px.map(|view| view.map(ImagePoint::from_pixel)),
        }
    }

    /// Dehomogenized observations, `[view][point]`.
    pub fn pixels(&self) -> Result<Vec<Vec<Vector2<f64>>>> {
        self.points
            .iter()
            .map(|view| {
                view.iter()
                    .map(|p| p.to_pixel().ok_or(Error::ProjectionAtInfinity))
                    .collect()
            })
            .collect()
    }

    /// Similarity `T` shared by all views that moves the centroid of the
    /// eighteen observations to the origin and makes their mean distance
    /// from it √2.
    pub fn normalizing_transform(&self) -> Result<Matrix3<f64>> {
        let px = self.pixels()?;
        let all: Vec<&Vector2<f64>> = px.iter().flatten().collect();
        let n = all.len() as f64;
        let c = all.iter().copied().sum::<Vector2<f64>>() / n;
        let mean = all.iter().map(|p| (*p - c).norm()).sum::<f64>() / n;
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::DegenerateView);
        }
        let s = std::f64::consts::SQRT_2 / mean;
        Ok(Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0))
    }

    /// Every point mapped by the same image homography.
    pub fn transformed(&self, t: &Matrix3<f64>) -> Self {
        Self {
            points: self.points.map(|view| view.map(|p| ImagePoint(t * p.0))),
        }
    }
}

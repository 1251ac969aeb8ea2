//! Ground-truth scenes, noise and outlier injection, oracle quantities and
//! error metrics.
//!
//! All randomness comes from ChaCha8 streams. A trial's generator is keyed by
//! `(master_seed, trial_index)` through [`trial_rng`], so sweeps give the same
//! numbers no matter how trials are spread over threads.

use nalgebra::{DMatrix, Matrix3, Matrix4, SVector, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autocalib::CalibrationResult;
use crate::error::{Error, Result};
use crate::geometry::{Camera, ImagePoint, SixViewCorrespondences};
use crate::numeric::right_singular_basis;
use crate::sixpoint::ProjectiveSolution;

/// Generator for trial `trial` of a run seeded with `master`.
pub fn trial_rng(master: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial);
    rng
}

pub fn table1_k() -> Matrix3<f64> {
    Matrix3::new(425.0, 0.0, 176.0, 0.0, 425.0, 144.0, 0.0, 0.0, 1.0)
}

/// Three-view setup of the synthetic accuracy experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub distance_to_scene: f64,
    pub scene_depth: f64,
    /// Distance between the first and third camera centers.
    pub baseline: f64,
    /// Radius of the ball around the baseline midpoint holding camera 2.
    pub mid_camera_amplitude: f64,
    /// Radius of the ball around the point centroid from which each camera's
    /// aim point is drawn.
    pub aim_jitter: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub k: Matrix3<f64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            distance_to_scene: 1.0,
            scene_depth: 0.5,
            baseline: 0.1,
            mid_camera_amplitude: 0.025,
            aim_jitter: 0.1,
            image_width: 352.0,
            image_height: 288.0,
            k: table1_k(),
        }
    }
}

/// Circular camera track around a central point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackConfig {
    pub n_cameras: usize,
    pub n_points: usize,
    pub circle_radius: f64,
    /// Half extent of the cube holding the points.
    pub cloud_half_extent: f64,
    /// Radius of the ball around the cloud center each camera aims at; keeps
    /// the window motions away from planar, critical ones.
    pub aim_jitter: f64,
    pub outlier_rate: f64,
    pub noise_px: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub k: Matrix3<f64>,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            n_cameras: 70,
            n_points: 400,
            circle_radius: 1.0,
            cloud_half_extent: 0.3,
            aim_jitter: 0.1,
            outlier_rate: 0.2,
            noise_px: 1.0,
            image_width: 352.0,
            image_height: 288.0,
            k: table1_k(),
        }
    }
}

impl TrackConfig {
    /// The reduced sequence used for quick runs: 20 cameras, 150 points.
    pub fn desk() -> Self {
        Self {
            n_cameras: 20,
            n_points: 150,
            ..Self::default()
        }
    }
}

/// World-to-camera rigid motion `X_cam = R X + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// Camera at `center` looking at `target`, image y pointing along world +y,
    /// then rolled about the optical axis.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, roll: f64) -> Self {
        let z = (target - center).normalize();
        let x = Vector3::y().cross(&z).normalize();
        let y = z.cross(&x);
        let (s, c) = roll.sin_cos();
        let xr = x * c + y * s;
        let yr = -x * s + y * c;
        let r = Matrix3::from_rows(&[xr.transpose(), yr.transpose(), z.transpose()]);
        Self { r, t: -(r * center) }
    }

    /// Motion from this camera's frame to `other`'s frame.
    pub fn relative_to(&self, other: &Pose) -> Pose {
        let r = other.r * self.r.transpose();
        Pose {
            r,
            t: other.t - r * self.t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub k: Matrix3<f64>,
    pub cameras: Vec<Pose>,
    pub points: Vec<Vector3<f64>>,
    /// Exact projections, `[view][point]`.
    pub clean: Vec<Vec<Vector2<f64>>>,
    /// Observations after perturbation; `None` marks a missing observation.
    pub observations: Vec<Vec<Option<Vector2<f64>>>>,
    pub outlier_mask: Vec<Vec<bool>>,
    pub noise_px: f64,
    pub image_size: (f64, f64),
}

fn project_pixel(k: &Matrix3<f64>, pose: &Pose, x: &Vector3<f64>) -> Option<Vector2<f64>> {
    let y = k * (pose.r * x + pose.t);
    if y.z <= 0.0 {
        return None;
    }
    Some(Vector2::new(y.x / y.z, y.y / y.z))
}

fn inside(p: &Vector2<f64>, (w, h): (f64, f64)) -> bool {
    p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h
}

impl SyntheticDataset {
    fn from_parts(seed: u64, k: Matrix3<f64>, cameras: Vec<Pose>, points: Vec<Vector3<f64>>, image_size: (f64, f64)) -> Option<Self> {
        let mut clean = Vec::with_capacity(cameras.len());
        for pose in &cameras {
            let mut row = Vec::with_capacity(points.len());
            for x in &points {
                let p = project_pixel(&k, pose, x)?;
                if !inside(&p, image_size) {
                    return None;
                }
                row.push(p);
            }
            clean.push(row);
        }
        let observations = clean.iter().map(|r| r.iter().map(|p| Some(*p)).collect()).collect();
        let outlier_mask = clean.iter().map(|r| vec![false; r.len()]).collect();
        Some(Self {
            seed,
            k,
            cameras,
            points,
            clean,
            observations,
            outlier_mask,
            noise_px: 0.0,
            image_size,
        })
    }

    pub fn n_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn camera(&self, i: usize) -> Camera {
        Camera::metric(&self.k, &self.cameras[i].r, &self.cameras[i].t)
    }

    /// Six-point, three-view correspondences from the current observations.
    pub fn correspondences(&self, views: [usize; 3], points: [usize; 6]) -> Result<SixViewCorrespondences> {
        let mut out = [[ImagePoint::new(0.0, 0.0, 1.0); 6]; 3];
        for (vi, &v) in views.iter().enumerate() {
            for (pi, &p) in points.iter().enumerate() {
                let obs = self
                    .observations
                    .get(v)
                    .and_then(|row| row.get(p))
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::InvalidInput(format!("missing observation view {v} point {p}")))?;
                out[vi][pi] = ImagePoint::from_pixel(obs);
            }
        }
        Ok(SixViewCorrespondences { points: out })
    }

    /// Ground-truth motion of view `b` relative to view `a`.
    pub fn relative_pose(&self, a: usize, b: usize) -> Pose {
        self.cameras[a].relative_to(&self.cameras[b])
    }
}

const MAX_ATTEMPTS: usize = 1000;

fn uniform_in_ball<R: Rng>(rng: &mut R, radius: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

fn random_roll<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(-5.0f64..5.0).to_radians()
}

/// Three cameras and six points following the accuracy-experiment setup.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_scene_with(cfg, &mut rng, seed)
}

/// As [`generate_scene`] but drawing from a caller-provided generator.
pub fn generate_scene_with<R: Rng>(cfg: &SceneConfig, rng: &mut R, seed: u64) -> Result<SyntheticDataset> {
    let near = cfg.distance_to_scene - cfg.scene_depth / 2.0;
    let half_w = 0.85 * near * (cfg.image_width / 2.0) / cfg.k[(0, 0)];
    let half_h = 0.85 * near * (cfg.image_height / 2.0) / cfg.k[(1, 1)];
    for _ in 0..MAX_ATTEMPTS {
        let points: Vec<Vector3<f64>> = (0..6)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-half_w..half_w),
                    rng.random_range(-half_h..half_h),
                    cfg.distance_to_scene + rng.random_range(-0.5..0.5) * cfg.scene_depth,
                )
            })
            .collect();
        let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
        let c1 = Vector3::new(-cfg.baseline / 2.0, 0.0, 0.0);
        let c3 = Vector3::new(cfg.baseline / 2.0, 0.0, 0.0);
        let c2 = uniform_in_ball(rng, cfg.mid_camera_amplitude);
        let cameras: Vec<Pose> = [c1, c2, c3]
            .iter()
            .map(|c| {
                let aim = centroid + uniform_in_ball(rng, cfg.aim_jitter);
                Pose::look_at(*c, aim, random_roll(rng))
            })
            .collect();
        if let Some(ds) = SyntheticDataset::from_parts(seed, cfg.k, cameras, points, (cfg.image_width, cfg.image_height)) {
            return Ok(ds);
        }
    }
    Err(Error::ResampleExhausted(MAX_ATTEMPTS))
}

/// Cameras equally spaced on a circle, aimed near the center of a point cloud
/// that every camera sees completely.
pub fn generate_track(cfg: &TrackConfig, seed: u64) -> Result<SyntheticDataset> {
    if cfg.n_cameras < 3 {
        return Err(Error::InvalidInput("a track needs at least 3 cameras".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = (cfg.image_width, cfg.image_height);
    let cameras: Vec<Pose> = (0..cfg.n_cameras)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / cfg.n_cameras as f64;
            let center = Vector3::new(theta.sin(), 0.0, -theta.cos()) * cfg.circle_radius;
            let jitter = uniform_in_ball(&mut rng, cfg.aim_jitter);
            Pose::look_at(center, jitter, random_roll(&mut rng))
        })
        .collect();
    let mut points = Vec::with_capacity(cfg.n_points);
    let mut attempts = 0;
    let h = cfg.cloud_half_extent;
    while points.len() < cfg.n_points {
        attempts += 1;
        if attempts > MAX_ATTEMPTS * cfg.n_points.max(1) {
            return Err(Error::ResampleExhausted(attempts));
        }
        let x = Vector3::new(rng.random_range(-h..h), rng.random_range(-h..h), rng.random_range(-h..h));
        let visible = cameras
            .iter()
            .all(|pose| project_pixel(&cfg.k, pose, &x).is_some_and(|p| inside(&p, size)));
        if visible {
            points.push(x);
        }
    }
    let ds = SyntheticDataset::from_parts(seed, cfg.k, cameras, points, size)
        .ok_or(Error::ResampleExhausted(attempts))?;
    let noisy = add_noise(&ds, cfg.noise_px, seed.wrapping_add(1));
    Ok(add_outliers(&noisy, cfg.outlier_rate, seed.wrapping_add(2)))
}

/// I.i.d. Gaussian offsets of standard deviation `sigma` on every observed
/// coordinate of the clean projections. Outliers already present are kept.
pub fn add_noise(ds: &SyntheticDataset, sigma: f64, seed: u64) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise_with(ds, sigma, &mut rng)
}

pub fn add_noise_with<R: Rng>(ds: &SyntheticDataset, sigma: f64, rng: &mut R) -> SyntheticDataset {
    let mut out = ds.clone();
    if sigma == 0.0 {
        return out;
    }
    for (v, row) in out.observations.iter_mut().enumerate() {
        for (p, obs) in row.iter_mut().enumerate() {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            if ds.outlier_mask[v][p] {
                continue;
            }
            if obs.is_some() {
                *obs = Some(ds.clean[v][p] + Vector2::new(dx, dy) * sigma);
            }
        }
    }
    out.noise_px = sigma;
    out
}

/// Replace a Bernoulli(`rate`) subset of observations by uniform draws over
/// the image rectangle.
pub fn add_outliers(ds: &SyntheticDataset, rate: f64, seed: u64) -> SyntheticDataset {
    let mut out = ds.clone();
    if rate <= 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = ds.image_size;
    for (v, row) in out.observations.iter_mut().enumerate() {
        for (p, obs) in row.iter_mut().enumerate() {
            let hit = rng.random_bool(rate);
            let u = rng.random_range(0.0..w);
            let y = rng.random_range(0.0..h);
            if hit && obs.is_some() {
                *obs = Some(Vector2::new(u, y));
                out.outlier_mask[v][p] = true;
            }
        }
    }
    out
}

/// Ground-truth scales and dual-quadric vector for a projective solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScales {
    pub lambda: f64,
    pub mu: f64,
    /// `(r, q₁, q₂, q₃, ω*₁₁, ω*₁₂, ω*₁₃, ω*₂₂, ω*₂₃, 1)`.
    pub x: SVector<f64, 10>,
    pub quadric: Matrix4<f64>,
}

/// Recover (λ̂, μ̂, x̂) from ground truth: fit the 4×4 homography taking the
/// metric points (in the first view's frame) to the projective points, push
/// `diag(1,1,1,0)` through it and read off the entries.
pub fn oracle_scales(ds: &SyntheticDataset, views: [usize; 3], points: [usize; 6], solution: &ProjectiveSolution) -> Result<OracleScales> {
    let first = &ds.cameras[views[0]];
    let metric: Vec<Vector4<f64>> = points
        .iter()
        .map(|&j| (first.r * ds.points[j] + first.t).push(1.0))
        .collect();
    let proj: Vec<Vector4<f64>> = solution.triplet.points.iter().map(|p| p.0).collect();

    let mut a = DMatrix::zeros(36, 16);
    let mut row = 0;
    for (y, xp) in metric.iter().zip(&proj) {
        for i in 0..4 {
            for j in i + 1..4 {
                for k in 0..4 {
                    a[(row, 4 * j + k)] = xp[i] * y[k];
                    a[(row, 4 * i + k)] = -xp[j] * y[k];
                }
                row += 1;
            }
        }
    }
    let (values, vectors) = right_singular_basis(&a);
    if values[1] <= 1e-10 * values[15] {
        return Err(Error::DltRankDefect);
    }
    let h = Matrix4::from_row_slice(vectors[0].as_slice());
    let mut q = h * Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 1.0, 0.0)) * h.transpose();
    if q[(2, 2)].abs() <= 1e-300 {
        return Err(Error::DltRankDefect);
    }
    q /= q[(2, 2)];
    let cams = &solution.triplet.cameras;
    let lambda = (cams[1].0 * q * cams[1].0.transpose())[(2, 2)];
    let mu = (cams[2].0 * q * cams[2].0.transpose())[(2, 2)];
    let x = SVector::<f64, 10>::from_column_slice(&[
        q[(3, 3)],
        q[(0, 3)],
        q[(1, 3)],
        q[(2, 3)],
        q[(0, 0)],
        q[(0, 1)],
        q[(0, 2)],
        q[(1, 1)],
        q[(1, 2)],
        1.0,
    ]);
    Ok(OracleScales {
        lambda,
        mu,
        x,
        quadric: q,
    })
}

/// `‖K − K̂‖_F / ‖K̂‖_F` with both normalized to `K₃₃ = 1`.
pub fn k_error(k: &Matrix3<f64>, k_true: &Matrix3<f64>) -> f64 {
    let a = k / k[(2, 2)];
    let b = k_true / k_true[(2, 2)];
    (a - b).norm() / b.norm()
}

/// Angle of `R_a R_bᵀ` in degrees.
pub fn rotation_error_deg(r: &Matrix3<f64>, r_true: &Matrix3<f64>) -> f64 {
    let d = r * r_true.transpose();
    let s = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm() / 2.0;
    let c = (d.trace() - 1.0) / 2.0;
    s.atan2(c).to_degrees()
}

/// Angle between two translation directions in degrees.
pub fn direction_error_deg(t: &Vector3<f64>, t_true: &Vector3<f64>) -> Result<f64> {
    if t_true.norm() <= 1e-12 || t.norm() <= 1e-300 {
        return Err(Error::ZeroTranslation);
    }
    Ok(t.cross(t_true).norm().atan2(t.dot(t_true)).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    pub rot2_deg: f64,
    pub rot3_deg: f64,
    pub dir2_deg: f64,
    pub dir3_deg: f64,
}

/// Rotation and translation-direction errors of views 2 and 3 relative to
/// the first view of `views`.
pub fn pose_errors(result: &CalibrationResult, ds: &SyntheticDataset, views: [usize; 3]) -> Result<PoseErrors> {
    let g2 = ds.relative_pose(views[0], views[1]);
    let g3 = ds.relative_pose(views[0], views[2]);
    Ok(PoseErrors {
        rot2_deg: rotation_error_deg(&result.r2, &g2.r),
        rot3_deg: rotation_error_deg(&result.r3, &g3.r),
        dir2_deg: direction_error_deg(&result.t2, &g2.t)?,
        dir3_deg: direction_error_deg(&result.t3, &g3.t)?,
    })
}

/// `dst ≈ s R src + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p * self.scale + self.t
    }
}

/// Least-squares similarity between point sets (closed form via SVD of the
/// cross-covariance).
pub fn align_similarity(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Similarity> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::InvalidInput("similarity alignment needs ≥ 3 pairs".into()));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = s - mu_s;
        let b = d - mu_d;
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if var_s <= 0.0 {
        return Err(Error::InvalidInput("degenerate source points".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("u");
    let v_t = svd.v_t.expect("v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let trace_ds: f64 = (0..3).map(|i| svd.singular_values[i] * d[(i, i)]).sum();
    let scale = trace_ds / var_s;
    let t = mu_d - r * mu_s * scale;
    Ok(Similarity { scale, r, t })
}

/// On-disk dataset layout (`version` 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub version: u32,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: [[f64; 3]; 3],
    pub cameras: Vec<CameraEntry>,
    pub points: Vec<[f64; 3]>,
    /// `[view, point, u, v]`.
    pub observations: Vec<(usize, usize, f64, f64)>,
    /// Aligned with `observations`.
    pub outlier_mask: Vec<bool>,
    pub noise_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

pub const DATASET_VERSION: u32 = 1;

/// Human-readable description of the dataset layout, for usage errors.
pub const DATASET_SCHEMA: &str = r#"{"version": 1, "seed": <u64>, "K": [[3 reals] x3], "cameras": [{"R": [[3 reals] x3], "t": [3 reals]}, ...], "points": [[x, y, z], ...], "observations": [[view, point, u, v], ...], "outlier_mask": [bool per observation], "noise_px": <real>}"#;

fn rows3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn from_rows3(a: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| a[r][c])
}

impl From<&SyntheticDataset> for DatasetFile {
    fn from(ds: &SyntheticDataset) -> Self {
        let mut observations = Vec::new();
        let mut outlier_mask = Vec::new();
        for (v, row) in ds.observations.iter().enumerate() {
            for (p, obs) in row.iter().enumerate() {
                if let Some(o) = obs {
                    observations.push((v, p, o.x, o.y));
                    outlier_mask.push(ds.outlier_mask[v][p]);
                }
            }
        }
        DatasetFile {
            version: DATASET_VERSION,
            seed: ds.seed,
            k: rows3(&ds.k),
            cameras: ds
                .cameras
                .iter()
                .map(|c| CameraEntry {
                    r: rows3(&c.r),
                    t: [c.t.x, c.t.y, c.t.z],
                })
                .collect(),
            points: ds.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            observations,
            outlier_mask,
            noise_px: ds.noise_px,
        }
    }
}

impl DatasetFile {
    /// Rebuild the in-memory dataset; clean projections are recomputed from
    /// the stored ground truth.
    pub fn to_dataset(&self, image_size: (f64, f64)) -> Result<SyntheticDataset> {
        if self.version != DATASET_VERSION {
            return Err(Error::InvalidInput(format!("unsupported dataset version {}", self.version)));
        }
        if self.outlier_mask.len() != self.observations.len() {
            return Err(Error::InvalidInput("outlier_mask length differs from observations".into()));
        }
        let k = from_rows3(&self.k);
        let cameras: Vec<Pose> = self
            .cameras
            .iter()
            .map(|c| Pose {
                r: from_rows3(&c.r),
                t: Vector3::from(c.t),
            })
            .collect();
        let points: Vec<Vector3<f64>> = self.points.iter().map(|p| Vector3::from(*p)).collect();
        let clean: Vec<Vec<Vector2<f64>>> = cameras
            .iter()
            .map(|pose| {
                points
                    .iter()
                    .map(|x| {
                        let y = k * (pose.r * x + pose.t);
                        Vector2::new(y.x / y.z, y.y / y.z)
                    })
                    .collect()
            })
            .collect();
        let mut observations = vec![vec![None; points.len()]; cameras.len()];
        let mut outlier_mask = vec![vec![false; points.len()]; cameras.len()];
        for (&(v, p, u, y), &o) in self.observations.iter().zip(&self.outlier_mask) {
            if v >= cameras.len() || p >= points.len() {
                return Err(Error::InvalidInput(format!("observation ({v}, {p}) out of range")));
            }
            observations[v][p] = Some(Vector2::new(u, y));
            outlier_mask[v][p] = o;
        }
        Ok(SyntheticDataset {
            seed: self.seed,
            k,
            cameras,
            points,
            clean,
            observations,
            outlier_mask,
            noise_px: self.noise_px,
            image_size,
        })
    }
}

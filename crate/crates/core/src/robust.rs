//! The solver as a hypothesis generator inside preemptive RANSAC, and its use
//! over a camera sequence.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autocalib::{autocalibrate, CalibrationResult};
use crate::error::{Error, Result};
use crate::geometry::{Camera, SixViewCorrespondences};
use crate::synthetic::{trial_rng, Pose, SyntheticDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub n_hypotheses: usize,
    pub block_size: usize,
    /// Truncation level of the per-observation Sampson error, in px².
    pub sampson_threshold: f64,
    pub seed: u64,
    /// Minimal samples drawn before giving up on filling the budget, as a
    /// multiple of `n_hypotheses`.
    pub max_attempts_factor: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            n_hypotheses: 400,
            block_size: 100,
            sampson_threshold: 4.0,
            seed: 0,
            max_attempts_factor: 10,
        }
    }
}

impl RansacConfig {
    /// The reduced budget used for desk-scale runs.
    pub fn desk() -> Self {
        Self {
            n_hypotheses: 200,
            block_size: 50,
            ..Self::default()
        }
    }
}

/// View pairs scored by every hypothesis.
pub const SCORED_PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

/// One calibration candidate of a 3-view window with its pairwise epipolar
/// geometry, ordered as [`SCORED_PAIRS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionHypothesis {
    pub calibration: CalibrationResult,
    pub fundamentals: [Matrix3<f64>; 3],
    pub sample: [usize; 6],
}

impl MotionHypothesis {
    pub fn new(calibration: CalibrationResult, sample: [usize; 6]) -> Result<Self> {
        let cams = calibration.metric_cameras();
        let mut fundamentals = [Matrix3::zeros(); 3];
        for (f, &(a, b)) in fundamentals.iter_mut().zip(SCORED_PAIRS.iter()) {
            *f = pair_fundamental(&cams[a], &cams[b])?;
        }
        Ok(Self {
            calibration,
            fundamentals,
            sample,
        })
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `F = [e_b]× P_b P_a⁺` with `x_bᵀ F x_a = 0`; unit Frobenius norm, largest
/// entry positive.
pub fn pair_fundamental(pa: &Camera, pb: &Camera) -> Result<Matrix3<f64>> {
    let ca = pa.center();
    let cb = pb.center();
    let ca_n = ca / ca.norm();
    let cb_n = cb / cb.norm();
    // centers coincide when their homogeneous 4-vectors are parallel
    let cross = ca_n * cb_n.transpose() - cb_n * ca_n.transpose();
    if cross.norm() <= 1e-10 {
        return Err(Error::CoincidentCenters);
    }
    let e_b = pb.0 * ca;
    let pinv = pa
        .0
        .pseudo_inverse(1e-15)
        .map_err(|_| Error::DegenerateMatrix)?;
    let f = skew(&e_b) * pb.0 * pinv;
    let n = f.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::CoincidentCenters);
    }
    let mut f = f / n;
    if f[f.iamax_full()] < 0.0 {
        f = -f;
    }
    Ok(f)
}

/// Sampson approximation of the squared geometric error of `x_b ↔ x_a`.
pub fn sampson_error(f: &Matrix3<f64>, xa: &Vector2<f64>, xb: &Vector2<f64>) -> f64 {
    let a = xa.push(1.0);
    let b = xb.push(1.0);
    let fa = f * a;
    let fb = f.transpose() * b;
    let num = b.dot(&fa);
    let den = fa.x * fa.x + fa.y * fa.y + fb.x * fb.x + fb.y * fb.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    num * num / den
}

/// Truncated Sampson cost of one three-view match, summed over the pairs.
pub fn match_score(h: &MotionHypothesis, m: &[Vector2<f64>; 3], threshold: f64) -> f64 {
    SCORED_PAIRS
        .iter()
        .zip(h.fundamentals.iter())
        .map(|(&(a, b), f)| {
            let e = sampson_error(f, &m[a], &m[b]);
            if e.is_nan() {
                threshold
            } else {
                e.min(threshold)
            }
        })
        .sum()
}

/// Robust score of a hypothesis over a set of matches; lower is better.
pub fn sampson_score(h: &MotionHypothesis, matches: &[[Vector2<f64>; 3]], threshold: f64) -> f64 {
    matches.iter().map(|m| match_score(h, m, threshold)).sum()
}

/// Hypotheses kept after `observations_seen` observations:
/// `⌊M · 2^(−⌊i/B⌋)⌋`, never below one.
pub fn preemption_survivors(n_hypotheses: usize, block_size: usize, observations_seen: usize) -> usize {
    let k = observations_seen / block_size.max(1);
    let kept = if k >= usize::BITS as usize { 0 } else { n_hypotheses >> k };
    kept.max(1)
}

/// Draw minimal samples and turn every calibration root into a hypothesis
/// until the budget is full.
pub fn generate_hypotheses(matches: &[[Vector2<f64>; 3]], cfg: &RansacConfig) -> Result<Vec<MotionHypothesis>> {
    if matches.len() < 6 {
        return Err(Error::InvalidInput(format!("need at least 6 matches, got {}", matches.len())));
    }
    if cfg.n_hypotheses == 0 || cfg.block_size == 0 {
        return Err(Error::InvalidInput("n_hypotheses and block_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_attempts = cfg.n_hypotheses.saturating_mul(cfg.max_attempts_factor.max(1));
    let mut hypotheses = Vec::with_capacity(cfg.n_hypotheses);
    let mut attempts = 0;
    while hypotheses.len() < cfg.n_hypotheses && attempts < max_attempts {
        attempts += 1;
        let picked = rand::seq::index::sample(&mut rng, matches.len(), 6);
        let sample: [usize; 6] = std::array::from_fn(|k| picked.index(k));
        let px: [[Vector2<f64>; 6]; 3] = std::array::from_fn(|v| std::array::from_fn(|k| matches[sample[k]][v]));
        let corr = SixViewCorrespondences::from_pixels(&px);
        for cal in autocalibrate(&corr) {
            if hypotheses.len() == cfg.n_hypotheses {
                break;
            }
            if let Ok(h) = MotionHypothesis::new(cal, sample) {
                hypotheses.push(h);
            }
        }
    }
    if hypotheses.is_empty() {
        return Err(Error::NoHypothesis);
    }
    Ok(hypotheses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacOutcome {
    pub best: MotionHypothesis,
    /// Accumulated score of the winner over the observations it was shown.
    pub score: f64,
    pub n_generated: usize,
    /// Surviving hypothesis count after each scored block.
    pub survivors: Vec<usize>,
}

/// Score hypotheses on observations taken in random order, block by block,
/// keeping the best `⌊M · 2^(−k)⌋` after block `k`. Ties go to the lower
/// hypothesis index.
pub fn preempt(hypotheses: &[MotionHypothesis], matches: &[[Vector2<f64>; 3]], cfg: &RansacConfig) -> Result<RansacOutcome> {
    if hypotheses.is_empty() {
        return Err(Error::NoHypothesis);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0bad_cafe_f00d);
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.shuffle(&mut rng);

    let m = hypotheses.len();
    let mut alive: Vec<usize> = (0..m).collect();
    let mut scores = vec![0.0f64; m];
    let mut survivors = Vec::new();
    let mut seen = 0;
    for block in order.chunks(cfg.block_size.max(1)) {
        if alive.len() <= 1 {
            break;
        }
        for &h in &alive {
            scores[h] += block
                .iter()
                .map(|&j| match_score(&hypotheses[h], &matches[j], cfg.sampson_threshold))
                .sum::<f64>();
        }
        seen += block.len();
        alive.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let keep = if block.len() == cfg.block_size {
            preemption_survivors(m, cfg.block_size, seen)
        } else {
            alive.len()
        };
        alive.truncate(keep.min(alive.len()));
        survivors.push(alive.len());
    }
    alive.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let best = alive[0];
    Ok(RansacOutcome {
        best: hypotheses[best],
        score: scores[best],
        n_generated: m,
        survivors,
    })
}

/// Hypothesis generation followed by preemptive scoring.
pub fn preemptive_ransac(matches: &[[Vector2<f64>; 3]], cfg: &RansacConfig) -> Result<RansacOutcome> {
    let hypotheses = generate_hypotheses(matches, cfg)?;
    preempt(&hypotheses, matches, cfg)
}

/// Three-view matches of every point observed in all of `views`.
pub fn window_matches(ds: &SyntheticDataset, views: [usize; 3]) -> Vec<[Vector2<f64>; 3]> {
    (0..ds.n_points())
        .filter_map(|p| {
            let a = ds.observations[views[0]][p]?;
            let b = ds.observations[views[1]][p]?;
            let c = ds.observations[views[2]][p]?;
            Some([a, b, c])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    /// First view of the window; the window is `(start, start+1, start+2)`.
    pub start: usize,
    pub calibration: Option<CalibrationResult>,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub windows: Vec<WindowResult>,
    /// Entrywise mean of K over the accepted windows.
    pub mean_k: Option<Matrix3<f64>>,
    /// Chained world-to-camera poses; `None` where the chain broke.
    pub poses: Vec<Option<Pose>>,
}

impl TrackResult {
    pub fn centers(&self) -> Vec<Option<Vector3<f64>>> {
        self.poses.iter().map(|p| p.map(|p| p.center())).collect()
    }
}

/// Motions view 1 → 2, view 1 → 3 and view 2 → 3 of a window.
fn window_poses(c: &CalibrationResult) -> (Pose, Pose, Pose) {
    let g2 = Pose { r: c.r2, t: c.t2 };
    let g3 = Pose { r: c.r3, t: c.t3 };
    (g2, g3, g2.relative_to(&g3))
}

fn compose(rel: &Pose, scale: f64, base: &Pose) -> Pose {
    Pose {
        r: rel.r * base.r,
        t: rel.r * base.t + rel.t * scale,
    }
}

/// Sliding 3-view windows (stride 1), each solved with preemptive RANSAC on
/// its own seed stream, then K averaged and poses chained.
///
/// The first camera is the world frame and the first window's baseline fixes
/// the global scale. Each later window is scaled so that its first baseline
/// matches the same baseline as estimated by the window before it; if that
/// window failed, the last known baseline length is reused.
pub fn track_sequence(ds: &SyntheticDataset, cfg: &RansacConfig) -> Result<TrackResult> {
    let n = ds.n_views();
    if n < 3 {
        return Err(Error::InvalidInput("a sequence needs at least 3 cameras".into()));
    }
    let windows: Vec<WindowResult> = (0..n - 2)
        .into_par_iter()
        .map(|start| {
            let views = [start, start + 1, start + 2];
            let matches = window_matches(ds, views);
            let mut rng = trial_rng(cfg.seed, start as u64);
            let local = RansacConfig {
                seed: rand::Rng::random(&mut rng),
                ..*cfg
            };
            match preemptive_ransac(&matches, &local) {
                Ok(out) => WindowResult {
                    start,
                    calibration: Some(out.best.calibration),
                    score: Some(out.score),
                    error: None,
                },
                Err(e) => WindowResult {
                    start,
                    calibration: None,
                    score: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let accepted: Vec<&CalibrationResult> = windows.iter().filter_map(|w| w.calibration.as_ref()).collect();
    let mean_k = if accepted.is_empty() {
        None
    } else {
        Some(accepted.iter().map(|c| c.k).sum::<Matrix3<f64>>() / accepted.len() as f64)
    };

    let mut poses: Vec<Option<Pose>> = vec![None; n];
    poses[0] = Some(Pose::identity());
    // scale of each window relative to the global frame
    let mut scales: Vec<Option<f64>> = vec![None; n - 2];
    let mut last_baseline: Option<f64> = None;
    for w in 0..n - 2 {
        let Some(c) = windows[w].calibration.as_ref() else {
            continue;
        };
        let (g2, _, _) = window_poses(c);
        let own = g2.t.norm();
        if own <= 0.0 {
            continue;
        }
        let target = if w == 0 {
            Some(own)
        } else {
            match (w.checked_sub(1).and_then(|p| windows[p].calibration.as_ref()), scales[w - 1]) {
                (Some(prev), Some(s_prev)) => Some(window_poses(prev).2.t.norm() * s_prev),
                _ => last_baseline,
            }
        };
        if let Some(target) = target {
            scales[w] = Some(target / own);
            last_baseline = Some(target);
        }
    }
    for j in 1..n {
        // prefer the window starting one view earlier, else two views earlier
        let via_second = (j >= 1 && j - 1 < n - 2)
            .then(|| (j - 1, windows[j - 1].calibration.as_ref(), scales[j - 1]))
            .and_then(|(w, c, s)| Some((w, c?, s?)))
            .and_then(|(w, c, s)| poses[w].map(|base| compose(&window_poses(c).0, s, &base)));
        let via_third = || {
            (j >= 2)
                .then(|| (j - 2, windows[j - 2].calibration.as_ref(), scales[j - 2]))
                .and_then(|(w, c, s)| Some((w, c?, s?)))
                .and_then(|(w, c, s)| poses[w].map(|base| compose(&window_poses(c).1, s, &base)))
        };
        poses[j] = via_second.or_else(via_third);
    }

    Ok(TrackResult { windows, mean_k, poses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, WorldPoint};
    use crate::synthetic::{add_noise, add_outliers, generate_scene, generate_track, table1_k, SceneConfig, TrackConfig};
    use rand::Rng;

    fn random_camera(rng: &mut ChaCha8Rng, center: Vector3<f64>) -> Camera {
        let target = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0);
        let pose = Pose::look_at(center, target, rng.random_range(-0.3..0.3));
        Camera::metric(&table1_k(), &pose.r, &pose.t)
    }

    #[test]
    fn fundamental_annihilates_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let xa = rng.random_range(-1.0..1.0);
            let pa = random_camera(&mut rng, Vector3::new(xa, 0.2, -3.0));
            let xb = rng.random_range(-1.0..1.0);
            let pb = random_camera(&mut rng, Vector3::new(xb, -0.2, -3.0));
            let f = pair_fundamental(&pa, &pb).unwrap();
            assert!(f.singular_values().min() <= 1e-10);
            assert!((f.norm() - 1.0).abs() < 1e-12);
            for _ in 0..50 {
                let x = WorldPoint::from_euclidean(Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ));
                let xa = project(&pa, &x).unwrap().0.normalize();
                let xb = project(&pb, &x).unwrap().0.normalize();
                assert!((xb.transpose() * f * xa)[0].abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn coincident_centers_are_rejected() {
        let k = table1_k();
        let c = Vector3::new(0.3, -0.2, -2.0);
        let a = Pose::look_at(c, Vector3::zeros(), 0.0);
        let b = Pose::look_at(c, Vector3::new(0.2, 0.1, 0.0), 0.4);
        let pa = Camera::metric(&k, &a.r, &a.t);
        let pb = Camera::metric(&k, &b.r, &b.t);
        assert_eq!(pair_fundamental(&pa, &pb), Err(Error::CoincidentCenters));
    }

    #[test]
    fn sampson_on_epipolar_line_is_zero() {
        let f = skew(&Vector3::new(1.0, 0.0, 0.0));
        // pure horizontal translation: epipolar lines are image rows
        assert_eq!(sampson_error(&f, &Vector2::new(10.0, 5.0), &Vector2::new(40.0, 5.0)), 0.0);
        assert!(sampson_error(&f, &Vector2::new(10.0, 5.0), &Vector2::new(40.0, 7.0)) > 0.0);
    }

    #[test]
    fn survivor_schedule() {
        let expected = [400, 200, 100, 50, 25, 12, 6, 3, 1, 1, 1];
        for (k, &e) in expected.iter().enumerate() {
            assert_eq!(preemption_survivors(400, 100, 100 * k), e);
            assert_eq!(preemption_survivors(400, 100, 100 * k + 99), e);
        }
    }

    fn clean_window(seed: u64) -> (SyntheticDataset, Vec<[Vector2<f64>; 3]>) {
        let cfg = TrackConfig {
            n_cameras: 20,
            n_points: 60,
            noise_px: 0.0,
            outlier_rate: 0.0,
            ..TrackConfig::desk()
        };
        let ds = generate_track(&cfg, seed).unwrap();
        let m = window_matches(&ds, [0, 1, 2]);
        (ds, m)
    }

    #[test]
    fn clean_scores_vanish_and_outliers_saturate() {
        let ds = generate_scene(&SceneConfig::default(), 5).unwrap();
        let corr = ds.correspondences([0, 1, 2], [0, 1, 2, 3, 4, 5]).unwrap();
        let cal = autocalibrate(&corr).remove(0);
        let h = MotionHypothesis::new(cal, [0, 1, 2, 3, 4, 5]).unwrap();
        let m = window_matches(&ds, [0, 1, 2]);
        assert!(sampson_score(&h, &m, 4.0) <= 1e-8 * m.len() as f64);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let junk: Vec<[Vector2<f64>; 3]> = (0..2000)
            .map(|_| std::array::from_fn(|_| Vector2::new(rng.random_range(0.0..352.0), rng.random_range(0.0..288.0))))
            .collect();
        let score = sampson_score(&h, &junk, 4.0);
        let full = 4.0 * 3.0 * junk.len() as f64;
        assert!(score >= 0.95 * full && score <= full, "{score} vs {full}");
    }

    #[test]
    fn adding_an_outlier_never_lowers_a_score() {
        let (_, m) = clean_window(2);
        let cfg = RansacConfig { n_hypotheses: 5, ..RansacConfig::desk() };
        let hyps = generate_hypotheses(&m, &cfg).unwrap();
        let mut more = m.clone();
        more.push([Vector2::new(1.0, 2.0), Vector2::new(300.0, 5.0), Vector2::new(50.0, 250.0)]);
        for h in &hyps {
            assert!(sampson_score(h, &more, 4.0) >= sampson_score(h, &m, 4.0));
        }
    }

    #[test]
    fn clean_window_recovers_k() {
        let (ds, m) = clean_window(4);
        let cfg = RansacConfig { n_hypotheses: 20, block_size: 10, ..RansacConfig::default() };
        let out = preemptive_ransac(&m, &cfg).unwrap();
        assert!(crate::synthetic::k_error(&out.best.calibration.k, &ds.k) <= 1e-6);
        assert_eq!(out, preemptive_ransac(&m, &cfg).unwrap());
    }

    #[test]
    fn too_few_matches() {
        let (_, m) = clean_window(1);
        assert!(matches!(preemptive_ransac(&m[..5], &RansacConfig::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn noisy_window_is_deterministic() {
        let ds = generate_track(&TrackConfig::desk(), 8).unwrap();
        let ds = add_outliers(&add_noise(&ds, 1.0, 1), 0.0, 2);
        let m = window_matches(&ds, [3, 4, 5]);
        let cfg = RansacConfig { n_hypotheses: 30, block_size: 20, ..RansacConfig::default() };
        assert_eq!(preemptive_ransac(&m, &cfg).unwrap(), preemptive_ransac(&m, &cfg).unwrap());
    }
}

//! Desk-scale experiment runners and their reports.
//!
//! Every trial draws from `trial_rng(seed, trial)` and results are collected
//! in trial order, so reports are identical for any worker count. Wall-clock
//! timings are kept out of reports unless asked for, for the same reason.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autocalib::{autocalibrate, calibrate_root};
use crate::error::{Error, Result};
use crate::robust::{track_sequence, RansacConfig, TrackResult};
use crate::sixpoint::projective_reconstruction;
use crate::synthetic::{
    add_noise_with, align_similarity, generate_scene_with, generate_track, k_error, pose_errors, trial_rng, SceneConfig, TrackConfig,
};

pub const REPORT_VERSION: u32 = 1;

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "AUTOCAL_THREADS";

/// Noise levels of the default sweep, in pixels.
pub const DEFAULT_SIGMAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Thread pool sized from [`THREADS_ENV`]; rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Order statistics of the finite values of a sample; all `None` when empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub count: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub p01: Option<f64>,
    pub p10: Option<f64>,
    pub p25: Option<f64>,
    pub median: Option<f64>,
    pub p75: Option<f64>,
    pub p90: Option<f64>,
    pub p99: Option<f64>,
    pub max: Option<f64>,
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * w)
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Summary::default();
    }
    v.sort_by(f64::total_cmp);
    let q = |p| quantile_sorted(&v, p);
    Summary {
        count: v.len(),
        mean: Some(v.iter().sum::<f64>() / v.len() as f64),
        min: v.first().copied(),
        p01: q(0.01),
        p10: q(0.10),
        p25: q(0.25),
        median: q(0.5),
        p75: q(0.75),
        p90: q(0.90),
        p99: q(0.99),
        max: v.last().copied(),
    }
}

/// Outcome of one Table-1 style trial, scored on the best-ranked candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub noise_px: f64,
    pub n_results: usize,
    pub k_error: Option<f64>,
    pub rot2_deg: Option<f64>,
    pub rot3_deg: Option<f64>,
    pub dir2_deg: Option<f64>,
    pub dir3_deg: Option<f64>,
    pub reprojection_px: Option<f64>,
    pub failure: Option<String>,
}

impl TrialRecord {
    fn failed(trial: u64, noise_px: f64, n_results: usize, why: String) -> Self {
        Self {
            trial,
            noise_px,
            n_results,
            k_error: None,
            rot2_deg: None,
            rot3_deg: None,
            dir2_deg: None,
            dir3_deg: None,
            reprojection_px: None,
            failure: Some(why),
        }
    }
}

/// Generate, perturb and calibrate one random scene.
pub fn run_trial(cfg: &SceneConfig, seed: u64, trial: u64, sigma: f64) -> TrialRecord {
    let mut rng = trial_rng(seed, trial);
    let ds = match generate_scene_with(cfg, &mut rng, seed) {
        Ok(ds) => ds,
        Err(e) => return TrialRecord::failed(trial, sigma, 0, e.to_string()),
    };
    let ds = add_noise_with(&ds, sigma, &mut rng);
    let views = [0, 1, 2];
    let corr = match ds.correspondences(views, [0, 1, 2, 3, 4, 5]) {
        Ok(c) => c,
        Err(e) => return TrialRecord::failed(trial, sigma, 0, e.to_string()),
    };
    let results = autocalibrate(&corr);
    let Some(best) = results.first() else {
        return TrialRecord::failed(trial, sigma, 0, "no calibration candidate".into());
    };
    let pe = pose_errors(best, &ds, views).ok();
    TrialRecord {
        trial,
        noise_px: sigma,
        n_results: results.len(),
        k_error: Some(k_error(&best.k, &ds.k)),
        rot2_deg: pe.map(|p| p.rot2_deg),
        rot3_deg: pe.map(|p| p.rot3_deg),
        dir2_deg: pe.map(|p| p.dir2_deg),
        dir3_deg: pe.map(|p| p.dir3_deg),
        reprojection_px: Some(best.diagnostics.reprojection_px),
        failure: None,
    }
}

/// `n` trials at one noise level, in trial order.
pub fn run_trials(cfg: &SceneConfig, seed: u64, n: u64, sigma: f64) -> Vec<TrialRecord> {
    (0..n).into_par_iter().map(|t| run_trial(cfg, seed, t, sigma)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_s: f64,
}

/// Machine-readable record of one experiment command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub command: String,
    pub config: serde_json::Value,
    pub trials: Vec<TrialRecord>,
    /// Keyed `"<metric>"` or `"<metric>@<noise_px>"`.
    pub summary: BTreeMap<String, Summary>,
    pub extra: serde_json::Value,
    pub timing: Option<Timing>,
    pub artifacts: Vec<String>,
}

const METRICS: [&str; 5] = ["k_error", "rot2_deg", "rot3_deg", "dir2_deg", "dir3_deg"];

fn metric(r: &TrialRecord, name: &str) -> Option<f64> {
    match name {
        "k_error" => r.k_error,
        "rot2_deg" => r.rot2_deg,
        "rot3_deg" => r.rot3_deg,
        "dir2_deg" => r.dir2_deg,
        "dir3_deg" => r.dir3_deg,
        _ => None,
    }
}

fn noise_key(sigma: f64) -> String {
    format!("{sigma}")
}

/// Summaries of every metric over all trials, and per noise level when the
/// trials span more than one.
pub fn summarize_trials(trials: &[TrialRecord]) -> BTreeMap<String, Summary> {
    let mut out = BTreeMap::new();
    let mut levels: Vec<f64> = trials.iter().map(|t| t.noise_px).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    for m in METRICS {
        let v: Vec<f64> = trials.iter().filter_map(|t| metric(t, m)).collect();
        out.insert(m.to_string(), summarize(&v));
        if levels.len() > 1 {
            for &s in &levels {
                let v: Vec<f64> = trials.iter().filter(|t| t.noise_px == s).filter_map(|t| metric(t, m)).collect();
                out.insert(format!("{m}@{}", noise_key(s)), summarize(&v));
            }
        }
    }
    out
}

impl ExperimentReport {
    pub fn new(command: &str, config: serde_json::Value, trials: Vec<TrialRecord>) -> Self {
        let summary = summarize_trials(&trials);
        Self {
            version: REPORT_VERSION,
            command: command.to_string(),
            config,
            trials,
            summary,
            extra: serde_json::Value::Null,
            timing: None,
            artifacts: Vec::new(),
        }
    }

    /// Summaries rebuilt from the per-trial records.
    pub fn recompute_summary(&self) -> BTreeMap<String, Summary> {
        summarize_trials(&self.trials)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

/// IO failure with the offending path attached.
#[derive(Debug, thiserror::Error)]
#[error("{path}: {source}")]
pub struct IoError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_text(path: &Path, text: &str) -> std::result::Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Serialize rows with a header taken from the row type's field names.
pub fn csv_string<T: Serialize>(rows: &[T]) -> std::result::Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> std::result::Result<(), IoError> {
    let text = csv_string(rows).map_err(|e| io_err(path, std::io::Error::other(e)))?;
    write_text(path, &text)
}

/// Write `report.json` plus the named CSV tables into `dir`, recording the
/// file names in the report.
pub fn emit_report(report: &mut ExperimentReport, dir: &Path, tables: &[(&str, String)]) -> std::result::Result<(), IoError> {
    report.artifacts = std::iter::once("report.json".to_string())
        .chain(tables.iter().map(|(n, _)| n.to_string()))
        .collect();
    for (name, text) in tables {
        write_text(&dir.join(name), text)?;
    }
    let path = dir.join("report.json");
    let json = report.to_json().map_err(|e| io_err(&path, std::io::Error::other(e)))?;
    write_text(&path, &json)
}

/// One row of the numerical-error distribution table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistRow {
    pub trial: u64,
    pub k_error: Option<f64>,
    pub log10_k_error: Option<f64>,
    pub n_results: usize,
}

/// Counts of `log10(k_error)` in bins of `width` decades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub log10_lo: f64,
    pub log10_hi: f64,
    pub count: usize,
}

pub fn log_histogram(values: &[f64], width: f64) -> Vec<HistogramRow> {
    let logs: Vec<f64> = values.iter().filter(|v| **v > 0.0 && v.is_finite()).map(|v| v.log10()).collect();
    if logs.is_empty() || width <= 0.0 {
        return Vec::new();
    }
    let lo = (logs.iter().copied().fold(f64::INFINITY, f64::min) / width).floor() as i64;
    let hi = (logs.iter().copied().fold(f64::NEG_INFINITY, f64::max) / width).floor() as i64;
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for l in &logs {
        counts[((l / width).floor() as i64 - lo) as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let b = lo + i as i64;
            HistogramRow {
                log10_lo: b as f64 * width,
                log10_hi: (b + 1) as f64 * width,
                count,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistOutput {
    pub report: ExperimentReport,
    pub rows: Vec<ErrorDistRow>,
    pub histogram: Vec<HistogramRow>,
}

/// Noise-free accuracy over `n` random scenes.
pub fn error_distribution(cfg: &SceneConfig, seed: u64, n: u64) -> ErrorDistOutput {
    let trials = run_trials(cfg, seed, n, 0.0);
    let rows: Vec<ErrorDistRow> = trials
        .iter()
        .map(|t| ErrorDistRow {
            trial: t.trial,
            k_error: t.k_error,
            log10_k_error: t.k_error.filter(|e| *e > 0.0).map(f64::log10),
            n_results: t.n_results,
        })
        .collect();
    let errs: Vec<f64> = trials.iter().filter_map(|t| t.k_error).collect();
    let histogram = log_histogram(&errs, 0.25);
    let config = serde_json::json!({ "seed": seed, "trials": n, "scene": cfg });
    let mut report = ExperimentReport::new("error-dist", config, trials);
    let failures = report.trials.iter().filter(|t| t.k_error.is_none()).count();
    report.extra = serde_json::json!({ "fail_rate": fail_rate(failures, n as usize) });
    ErrorDistOutput { report, rows, histogram }
}

fn fail_rate(failures: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        failures as f64 / n as f64
    }
}

/// Median errors at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub noise_px: f64,
    pub k_err_median: Option<f64>,
    pub rot2_deg_median: Option<f64>,
    pub rot3_deg_median: Option<f64>,
    pub dir2_deg_median: Option<f64>,
    pub dir3_deg_median: Option<f64>,
    pub fail_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub report: ExperimentReport,
    pub rows: Vec<SweepRow>,
}

/// Table rows rebuilt from per-trial records, one per noise level in order
/// of first appearance.
pub fn sweep_rows(trials: &[TrialRecord]) -> Vec<SweepRow> {
    let mut levels: Vec<f64> = Vec::new();
    for t in trials {
        if !levels.contains(&t.noise_px) {
            levels.push(t.noise_px);
        }
    }
    levels
        .into_iter()
        .map(|s| {
            let at: Vec<&TrialRecord> = trials.iter().filter(|t| t.noise_px == s).collect();
            let med = |m: &str| summarize(&at.iter().filter_map(|t| metric(t, m)).collect::<Vec<_>>()).median;
            SweepRow {
                noise_px: s,
                k_err_median: med("k_error"),
                rot2_deg_median: med("rot2_deg"),
                rot3_deg_median: med("rot3_deg"),
                dir2_deg_median: med("dir2_deg"),
                dir3_deg_median: med("dir3_deg"),
                fail_rate: fail_rate(at.iter().filter(|t| t.k_error.is_none()).count(), at.len()),
            }
        })
        .collect()
}

/// `n` trials per noise level. Trial `t` uses the same scene at every level,
/// so levels differ only in the perturbation.
pub fn sweep_noise(cfg: &SceneConfig, seed: u64, n: u64, sigmas: &[f64]) -> SweepOutput {
    let trials: Vec<TrialRecord> = sigmas.iter().flat_map(|&s| run_trials(cfg, seed, n, s)).collect();
    let rows = sweep_rows(&trials);
    let config = serde_json::json!({ "seed": seed, "trials": n, "sigmas": sigmas, "scene": cfg });
    SweepOutput {
        report: ExperimentReport::new("sweep-noise", config, trials),
        rows,
    }
}

/// Per-window calibration along the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrameRow {
    pub frame: usize,
    pub k11: Option<f64>,
    pub k12: Option<f64>,
    pub k13: Option<f64>,
    pub k22: Option<f64>,
    pub k23: Option<f64>,
    pub score: Option<f64>,
    pub failure: Option<String>,
}

/// Estimated camera center after similarity alignment, next to the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackCenterRow {
    pub camera: usize,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    pub true_x: f64,
    pub true_y: f64,
    pub true_z: f64,
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub mean_k: Option<[[f64; 3]; 3]>,
    /// `(K₁₁ + K₂₂)/2` of the averaged K.
    pub focal: Option<f64>,
    pub focal_rel_error: Option<f64>,
    pub failed_windows: usize,
    pub chained_cameras: usize,
    /// Largest aligned center error divided by the circle radius.
    pub max_center_error_rel: Option<f64>,
    pub rms_center_error_rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub summary: TrackSummary,
    pub frames: Vec<TrackFrameRow>,
    pub centers: Vec<TrackCenterRow>,
    pub result: TrackResult,
    pub report: ExperimentReport,
}

/// The circular-sequence experiment.
pub fn track_experiment(track: &TrackConfig, ransac: &RansacConfig, seed: u64) -> Result<TrackOutput> {
    let ds = generate_track(track, seed)?;
    let result = track_sequence(&ds, &RansacConfig { seed, ..*ransac })?;
    let frames: Vec<TrackFrameRow> = result
        .windows
        .iter()
        .map(|w| {
            let k = w.calibration.map(|c| c.k);
            TrackFrameRow {
                frame: w.start,
                k11: k.map(|k| k[(0, 0)]),
                k12: k.map(|k| k[(0, 1)]),
                k13: k.map(|k| k[(0, 2)]),
                k22: k.map(|k| k[(1, 1)]),
                k23: k.map(|k| k[(1, 2)]),
                score: w.score,
                failure: w.error.clone(),
            }
        })
        .collect();

    let truth: Vec<Vector3<f64>> = ds.cameras.iter().map(|p| p.center()).collect();
    let est = result.centers();
    let (src, dst): (Vec<Vector3<f64>>, Vec<Vector3<f64>>) = est
        .iter()
        .zip(&truth)
        .filter_map(|(e, t)| e.map(|e| (e, *t)))
        .unzip();
    let align = if src.len() >= 3 { align_similarity(&src, &dst).ok() } else { None };
    let centers: Vec<TrackCenterRow> = est
        .iter()
        .zip(&truth)
        .enumerate()
        .map(|(i, (e, t))| {
            let a = e.and_then(|e| align.as_ref().map(|s| s.apply(&e)));
            TrackCenterRow {
                camera: i,
                x: a.map(|a| a.x),
                y: a.map(|a| a.y),
                z: a.map(|a| a.z),
                true_x: t.x,
                true_y: t.y,
                true_z: t.z,
                error: a.map(|a| (a - t).norm()),
            }
        })
        .collect();
    let errs: Vec<f64> = centers.iter().filter_map(|c| c.error).collect();
    let radius = track.circle_radius;
    let complete = errs.len() == truth.len();
    let focal = result.mean_k.map(|k| (k[(0, 0)] + k[(1, 1)]) / 2.0);
    let true_focal = (ds.k[(0, 0)] + ds.k[(1, 1)]) / 2.0;
    let summary = TrackSummary {
        mean_k: result.mean_k.map(|k: Matrix3<f64>| std::array::from_fn(|r| std::array::from_fn(|c| k[(r, c)]))),
        focal,
        focal_rel_error: focal.map(|f| (f - true_focal).abs() / true_focal),
        failed_windows: result.windows.iter().filter(|w| w.calibration.is_none()).count(),
        chained_cameras: est.iter().filter(|c| c.is_some()).count(),
        max_center_error_rel: (complete && align.is_some()).then(|| errs.iter().copied().fold(0.0, f64::max) / radius),
        rms_center_error_rel: (!errs.is_empty())
            .then(|| (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt() / radius),
    };
    let config = serde_json::json!({ "seed": seed, "track": track, "ransac": ransac });
    let mut report = ExperimentReport::new("track", config, Vec::new());
    report.extra = serde_json::to_value(&summary).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(TrackOutput {
        summary,
        frames,
        centers,
        result,
        report,
    })
}

/// Median stage timings; indicative only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub stage: String,
    pub median_us: Option<f64>,
    pub mean_us: Option<f64>,
    pub samples: usize,
}

/// Time the projective stage and each root's metric upgrade, single-threaded.
pub fn bench(cfg: &SceneConfig, seed: u64, n: u64) -> Vec<BenchRow> {
    let mut projective = Vec::new();
    let mut per_root = Vec::new();
    let mut full = Vec::new();
    for trial in 0..n {
        let mut rng = trial_rng(seed, trial);
        let Ok(ds) = generate_scene_with(cfg, &mut rng, seed) else {
            continue;
        };
        let Ok(corr) = ds.correspondences([0, 1, 2], [0, 1, 2, 3, 4, 5]) else {
            continue;
        };
        let start = Instant::now();
        let Ok(t) = corr.normalizing_transform() else {
            continue;
        };
        let normalized = corr.transformed(&t);
        let Ok(set) = projective_reconstruction(&normalized) else {
            continue;
        };
        projective.push(start.elapsed().as_secs_f64() * 1e6);
        let (Ok(obs_n), Ok(obs)) = (normalized.pixels(), corr.pixels()) else {
            continue;
        };
        for sol in &set.solutions {
            let s = Instant::now();
            let _ = std::hint::black_box(calibrate_root(sol, &obs_n, &obs, &t));
            per_root.push(s.elapsed().as_secs_f64() * 1e6);
        }
        let s = Instant::now();
        let _ = std::hint::black_box(autocalibrate(&corr));
        full.push(s.elapsed().as_secs_f64() * 1e6);
    }
    [("projective", projective), ("metric_per_root", per_root), ("full", full)]
        .into_iter()
        .map(|(stage, v)| {
            let s = summarize(&v);
            BenchRow {
                stage: stage.to_string(),
                median_us: s.median,
                mean_us: s.mean,
                samples: s.count,
            }
        })
        .collect()
}

//! Command-line harness for the calibration experiments.
//!
//! Exit codes: 0 success, 1 usage or input/output error, 2 solver failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Matrix3;
use sixpoint_autocal::autocalib::{autocalibrate, CalibrationDiagnostics, CalibrationResult};
use sixpoint_autocal::experiments::{
    bench, csv_string, emit_report, error_distribution, sweep_noise, thread_pool, track_experiment, write_text,
    ExperimentReport, Summary, Timing, DEFAULT_SIGMAS, THREADS_ENV,
};
use sixpoint_autocal::robust::RansacConfig;
use sixpoint_autocal::synthetic::{
    add_noise, add_outliers, generate_scene, generate_track, k_error, DatasetFile, SceneConfig, TrackConfig, DATASET_SCHEMA,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "autocal",
    version,
    about = "Six-point three-view self-calibration: datasets, calibration and experiments",
    after_help = format!("Set {THREADS_ENV} to fix the number of worker threads.")
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset as JSON.
    Synth(SynthArgs),
    /// Calibrate from six points seen in three views of a dataset.
    Calibrate(CalibrateArgs),
    /// Median errors over a grid of noise levels.
    SweepNoise(SweepArgs),
    /// Noise-free error distribution over many random scenes.
    ErrorDist(ErrorDistArgs),
    /// Preemptive-RANSAC calibration and tracking along a circular sequence.
    Track(TrackArgs),
    /// Indicative per-stage timings.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Gaussian pixel noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Fraction of observations replaced by uniform outliers.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    /// Generate a circular sequence instead of a three-view scene.
    #[arg(long)]
    track: bool,
    #[arg(long, default_value_t = 20)]
    cameras: usize,
    #[arg(long, default_value_t = 150)]
    points: usize,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output JSON file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2])]
    views: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 3, 4, 5])]
    points: Vec<usize>,
    #[arg(long, default_value_t = 352.0)]
    width: f64,
    #[arg(long, default_value_t = 288.0)]
    height: f64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = DEFAULT_SIGMAS.to_vec())]
    sigmas: Vec<f64>,
    /// Output directory.
    #[arg(long, default_value = "sweep-noise")]
    out: PathBuf,
    /// Record wall-clock time in the report (breaks bit-identical output).
    #[arg(long)]
    with_timing: bool,
}

#[derive(Args, Debug)]
struct ErrorDistArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value = "error-dist")]
    out: PathBuf,
    #[arg(long)]
    with_timing: bool,
}

#[derive(Args, Debug)]
struct TrackArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    cameras: usize,
    #[arg(long, default_value_t = 150)]
    points: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.2)]
    outliers: f64,
    #[arg(long, default_value_t = 200)]
    hypotheses: usize,
    #[arg(long, default_value_t = 50)]
    block: usize,
    /// Truncation of the Sampson error, px².
    #[arg(long, default_value_t = 4.0)]
    threshold: f64,
    #[arg(long, default_value = "track")]
    out: PathBuf,
    #[arg(long)]
    with_timing: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    /// CSV output; the table is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome of a subcommand that did not succeed.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Solver(String),
}

impl Failure {
    fn io(e: impl std::fmt::Display) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parse `args` (program name first) and run the subcommand.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Calibrate(a) => calibrate(&a),
        Command::SweepNoise(a) => in_pool(|| sweep(&a)),
        Command::ErrorDist(a) => in_pool(|| error_dist(&a)),
        Command::Track(a) => in_pool(|| track(&a)),
        Command::Bench(a) => run_bench(&a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            EXIT_SOLVER
        }
    }
}

/// Write to stdout, ignoring a closed pipe.
fn stdout(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn in_pool(f: impl FnOnce() -> Outcome + Send) -> Outcome {
    let pool = thread_pool().map_err(|e| Failure::Usage(e.to_string()))?;
    pool.install(f)
}

fn check_rate(rate: f64) -> Outcome {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Failure::Usage(format!("outlier rate must lie in [0, 1), got {rate}")))
    }
}

fn check_noise(sigma: f64) -> Outcome {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("noise must be a finite non-negative number, got {sigma}")))
    }
}

fn synth(a: &SynthArgs) -> Outcome {
    check_noise(a.noise)?;
    check_rate(a.outliers)?;
    let ds = if a.track {
        let cfg = TrackConfig {
            n_cameras: a.cameras,
            n_points: a.points,
            noise_px: a.noise,
            outlier_rate: a.outliers,
            ..TrackConfig::desk()
        };
        generate_track(&cfg, a.seed).map_err(|e| Failure::Usage(e.to_string()))?
    } else {
        let ds = generate_scene(&SceneConfig::default(), a.seed).map_err(|e| Failure::Usage(e.to_string()))?;
        let ds = add_noise(&ds, a.noise, a.seed.wrapping_add(1));
        add_outliers(&ds, a.outliers, a.seed.wrapping_add(2))
    };
    let json = serde_json::to_string_pretty(&DatasetFile::from(&ds)).map_err(Failure::io)?;
    write_text(&a.out, &json).map_err(Failure::io)
}

fn schema_error(path: &Path, why: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{}: {why}\nexpected dataset layout:\n{DATASET_SCHEMA}", path.display()))
}

fn calibrate(a: &CalibrateArgs) -> Outcome {
    let text = std::fs::read_to_string(&a.input).map_err(|e| Failure::Usage(format!("{}: {e}", a.input.display())))?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| schema_error(&a.input, e))?;
    let ds = file.to_dataset((a.width, a.height)).map_err(|e| schema_error(&a.input, e))?;
    let views: [usize; 3] = a.views.clone().try_into().map_err(|_| Failure::Usage("--views takes three indices".into()))?;
    let points: [usize; 6] = a.points.clone().try_into().map_err(|_| Failure::Usage("--points takes six indices".into()))?;
    if views.iter().any(|&v| v >= ds.n_views()) || points.iter().any(|&p| p >= ds.n_points()) {
        return Err(Failure::Usage("view or point index out of range".into()));
    }
    let corr = ds.correspondences(views, points).map_err(|e| Failure::Usage(e.to_string()))?;
    let results = autocalibrate(&corr);
    if results.is_empty() {
        return Err(Failure::Solver("no calibration candidate survived".into()));
    }
    #[derive(serde::Serialize)]
    struct Output {
        views: [usize; 3],
        points: [usize; 6],
        /// Error of each candidate against the dataset's ground truth K.
        k_errors: Vec<f64>,
        results: Vec<Candidate>,
    }
    let out = Output {
        views,
        points,
        k_errors: results.iter().map(|r| k_error(&r.k, &ds.k)).collect(),
        results: results.iter().map(Candidate::from).collect(),
    };
    let json = serde_json::to_string_pretty(&out).map_err(Failure::io)?;
    match &a.out {
        Some(p) => write_text(p, &json).map_err(Failure::io),
        None => {
            stdout(&format!("{json}\n"));
            Ok(())
        }
    }
}

/// One calibration candidate with matrices written row by row.
#[derive(serde::Serialize)]
struct Candidate {
    k: [[f64; 3]; 3],
    r2: [[f64; 3]; 3],
    r3: [[f64; 3]; 3],
    t2: [f64; 3],
    t3: [f64; 3],
    /// Plane at infinity in the projective frame of the first camera.
    p: [f64; 3],
    diagnostics: CalibrationDiagnostics,
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

impl From<&CalibrationResult> for Candidate {
    fn from(r: &CalibrationResult) -> Self {
        Self {
            k: rows(&r.k),
            r2: rows(&r.r2),
            r3: rows(&r.r3),
            t2: r.t2.into(),
            t3: r.t3.into(),
            p: r.p.into(),
            diagnostics: r.diagnostics,
        }
    }
}

fn finish(report: &mut ExperimentReport, dir: &Path, tables: &[(&str, String)], start: Option<Instant>) -> Outcome {
    report.timing = start.map(|s| Timing {
        total_s: s.elapsed().as_secs_f64(),
    });
    emit_report(report, dir, tables).map_err(Failure::io)
}

fn summary_table(report: &ExperimentReport) -> Result<String, Failure> {
    #[derive(serde::Serialize)]
    struct Row<'a> {
        metric: &'a str,
        count: usize,
        mean: Option<f64>,
        median: Option<f64>,
        p90: Option<f64>,
        p99: Option<f64>,
        max: Option<f64>,
    }
    let rows: Vec<Row> = report
        .summary
        .iter()
        .map(|(k, s): (&String, &Summary)| Row {
            metric: k,
            count: s.count,
            mean: s.mean,
            median: s.median,
            p90: s.p90,
            p99: s.p99,
            max: s.max,
        })
        .collect();
    csv_string(&rows).map_err(Failure::io)
}

fn sweep(a: &SweepArgs) -> Outcome {
    if a.sigmas.is_empty() {
        return Err(Failure::Usage("--sigmas needs at least one level".into()));
    }
    for &s in &a.sigmas {
        check_noise(s)?;
    }
    let start = a.with_timing.then(Instant::now);
    let mut out = sweep_noise(&SceneConfig::default(), a.seed, a.trials, &a.sigmas);
    let table = csv_string(&out.rows).map_err(Failure::io)?;
    stdout(&table);
    finish(&mut out.report, &a.out, &[("sweep_noise.csv", table)], start)
}

fn error_dist(a: &ErrorDistArgs) -> Outcome {
    let start = a.with_timing.then(Instant::now);
    let mut out = error_distribution(&SceneConfig::default(), a.seed, a.trials);
    let rows = csv_string(&out.rows).map_err(Failure::io)?;
    let hist = csv_string(&out.histogram).map_err(Failure::io)?;
    let summary = summary_table(&out.report)?;
    stdout(&summary);
    finish(
        &mut out.report,
        &a.out,
        &[("error_dist.csv", rows), ("error_dist_hist.csv", hist), ("error_dist_summary.csv", summary)],
        start,
    )
}

fn track(a: &TrackArgs) -> Outcome {
    check_noise(a.noise)?;
    check_rate(a.outliers)?;
    if a.hypotheses == 0 || a.block == 0 || !(a.threshold > 0.0) {
        return Err(Failure::Usage("--hypotheses, --block and --threshold must be positive".into()));
    }
    let start = a.with_timing.then(Instant::now);
    let tc = TrackConfig {
        n_cameras: a.cameras,
        n_points: a.points,
        noise_px: a.noise,
        outlier_rate: a.outliers,
        ..TrackConfig::desk()
    };
    let rc = RansacConfig {
        n_hypotheses: a.hypotheses,
        block_size: a.block,
        sampson_threshold: a.threshold,
        ..RansacConfig::desk()
    };
    let mut out = track_experiment(&tc, &rc, a.seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let frames = csv_string(&out.frames).map_err(Failure::io)?;
    let centers = csv_string(&out.centers).map_err(Failure::io)?;
    let s = &out.summary;
    stdout(&format!(
        "focal {} (relative error {}), failed windows {}, max center error / radius {}\n",
        fmt_opt(s.focal),
        fmt_opt(s.focal_rel_error),
        s.failed_windows,
        fmt_opt(s.max_center_error_rel)
    ));
    let no_window = out.summary.mean_k.is_none();
    finish(&mut out.report, &a.out, &[("track_frames.csv", frames), ("track_centers.csv", centers)], start)?;
    if no_window {
        return Err(Failure::Solver("no window produced a calibration".into()));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn run_bench(a: &BenchArgs) -> Outcome {
    let rows = bench(&SceneConfig::default(), a.seed, a.trials);
    stdout("stage timings in microseconds (indicative, single-threaded)\n");
    for r in &rows {
        stdout(&format!(
            "{:<16} median {:>10} mean {:>10} n {}\n",
            r.stage,
            fmt_opt(r.median_us),
            fmt_opt(r.mean_us),
            r.samples
        ));
    }
    if rows.iter().all(|r| r.samples == 0) {
        return Err(Failure::Solver("no trial completed".into()));
    }
    if let Some(p) = &a.out {
        let table = csv_string(&rows).map_err(Failure::io)?;
        write_text(p, &table).map_err(Failure::io)?;
    }
    Ok(())
}

//! Command-line pipeline: simulate → (dsp) → estimate → evaluate, plus a
//! standalone scan matcher for offline debugging.
//!
//! Exit codes: 0 on success, 1 on validation/configuration errors, 2 when an
//! estimator run fails mid-dataset (the partial run directory is still
//! written, with the failure context recorded).

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rio::dsp::{cube_to_pointcloud, io::read_cube, DspOptions};
use rio::eval::{compare_backends, metrics_report, AlignedRun, MetricsReport};
use rio::geom::Pose;
use rio::harness::{
    load_dataset, load_run_config, load_sim_config, run_pipeline, write_dataset, write_run,
    BackendKind, LoadedRun,
};
use rio::matching::{align_points, match_point_sets, MatchGates};
use rio::sim::run_montecarlo;
use rio::types::RadarScan;

type CliError = Box<dyn Error>;

#[derive(Parser)]
#[command(
    name = "rio",
    version,
    about = "Radar-inertial odometry: simulation, radar DSP, estimation, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (IMU + radar + ground truth).
    Simulate {
        /// Simulation configuration, TOML.
        #[arg(short = 'c', long = "config")]
        config: PathBuf,
        /// Output dataset directory (created if absent).
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        /// Number of Monte-Carlo noise realizations; values above one write
        /// run-00, run-01, … subdirectories sharing one world and truth.
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Process a raw radar data cube into a radar scan record.
    Dsp {
        /// Input cube file (binary; header plus complex samples).
        #[arg(short = 'i', long = "input")]
        input: PathBuf,
        /// Output scan file (one line-delimited JSON record).
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        /// Optional DSP options, TOML; defaults are used when omitted.
        #[arg(short = 'c', long = "config")]
        config: Option<PathBuf>,
    },
    /// Run an estimator over a dataset, writing a run directory.
    Estimate {
        /// Run configuration, TOML.
        #[arg(short = 'c', long = "config")]
        config: PathBuf,
        /// Dataset directory produced by `simulate`.
        #[arg(short = 'd', long = "dataset")]
        dataset: PathBuf,
        /// Output run directory (created if absent).
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Compute accuracy metrics for run directories against recorded truth.
    Evaluate {
        /// Run directory; repeat the flag to evaluate several runs.
        #[arg(short = 'r', long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Output report directory (report.tsv + report.json).
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Match two radar scans given the body poses that observed them.
    Match {
        /// Scan A (the earlier scan): file with one radar-scan JSON record.
        #[arg(short = 'a', long = "scan-a")]
        scan_a: PathBuf,
        /// Scan B (the later scan): file with one radar-scan JSON record.
        #[arg(short = 'b', long = "scan-b")]
        scan_b: PathBuf,
        /// Body pose observing scan A: JSON literal (starts with '{') or a
        /// path to a file holding one; same shape as the `pose` field of the
        /// dataset truth records.
        #[arg(long = "pose-a")]
        pose_a: String,
        /// Body pose observing scan B; same format as --pose-a.
        #[arg(long = "pose-b")]
        pose_b: String,
        /// Radar-to-body extrinsics; same format as --pose-a. Identity when
        /// omitted (poses are then radar poses directly).
        #[arg(long)]
        extrinsics: Option<String>,
        /// Gate: maximum aligned point distance for a match [m].
        #[arg(long, default_value_t = 1.0)]
        max_distance: f64,
        /// Gate: minimum intensity for a current-scan point to match.
        #[arg(long, default_value_t = 0.0)]
        min_intensity: f64,
        /// Output file for the match records (line-delimited JSON); written
        /// to stdout when omitted.
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; they exit 0, real argument
            // errors exit 1 (a validation failure).
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = e.source();
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.cmd {
        Cmd::Simulate { config, out, runs } => simulate(&config, &out, runs),
        Cmd::Dsp { input, out, config } => dsp(&input, &out, config.as_deref()),
        Cmd::Estimate {
            config,
            dataset,
            out,
        } => estimate(&config, &dataset, &out),
        Cmd::Evaluate { runs, out } => evaluate(&runs, &out),
        Cmd::Match {
            scan_a,
            scan_b,
            pose_a,
            pose_b,
            extrinsics,
            max_distance,
            min_intensity,
            out,
        } => match_scans(
            &scan_a,
            &scan_b,
            &pose_a,
            &pose_b,
            extrinsics.as_deref(),
            MatchGates {
                max_distance,
                min_intensity,
            },
            out.as_deref(),
        ),
    }
}

fn simulate(config: &Path, out: &Path, runs: usize) -> Result<ExitCode, CliError> {
    if runs == 0 {
        return Err("--runs must be at least 1".into());
    }
    let sim = load_sim_config(config)?;
    let mc = run_montecarlo(
        &sim.trajectory,
        &sim.world,
        &sim.radar,
        &sim.noise,
        sim.imu_rate,
        runs,
    )?;
    if runs == 1 {
        write_dataset(out, &sim, &mc.runs[0], &mc.truth)?;
        println!(
            "wrote dataset to {} ({} imu samples, {} scans)",
            out.display(),
            mc.runs[0].imu.len(),
            mc.runs[0].radar.len()
        );
    } else {
        for (r, run) in mc.runs.iter().enumerate() {
            let dir = out.join(format!("run-{r:02}"));
            write_dataset(&dir, &sim, run, &mc.truth)?;
        }
        println!(
            "wrote {} datasets under {} ({} imu samples, {} scans each)",
            runs,
            out.display(),
            mc.runs[0].imu.len(),
            mc.runs[0].radar.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn dsp(input: &Path, out: &Path, config: Option<&Path>) -> Result<ExitCode, CliError> {
    let opts: DspOptions = match config {
        Some(path) => toml::from_str(&fs::read_to_string(path)?)?,
        None => DspOptions::default(),
    };
    let cube = read_cube(fs::File::open(input)?)?;
    let (scan, detections) = cube_to_pointcloud(&cube, &opts)?;
    let mut line = serde_json::to_string(&scan)?;
    line.push('\n');
    fs::write(out, line)?;
    println!(
        "wrote scan at t={} with {} points ({} raw detections) to {}",
        scan.t,
        scan.points.len(),
        detections.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn estimate(config: &Path, dataset: &Path, out: &Path) -> Result<ExitCode, CliError> {
    let cfg = load_run_config(config)?;
    let data = load_dataset(dataset)?;
    let output = run_pipeline(&cfg, &data)?;
    write_run(out, &cfg, dataset, &output)?;
    match &output.failure {
        Some(f) => {
            eprintln!(
                "estimator failure at t={:.6}{}: {}",
                f.t,
                f.scan_index
                    .map(|s| format!(" (scan {s})"))
                    .unwrap_or_default(),
                f.message
            );
            eprintln!(
                "partial run ({} snapshots) written to {}",
                output.snapshots.len(),
                out.display()
            );
            Ok(ExitCode::from(2))
        }
        None => {
            println!(
                "wrote run ({} backend, {} snapshots) to {}",
                cfg.backend,
                output.snapshots.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

struct EvaluatedRun {
    dir: String,
    run: LoadedRun,
    aligned: AlignedRun,
    metrics: MetricsReport,
}

fn evaluate(runs: &[PathBuf], out: &Path) -> Result<ExitCode, CliError> {
    let mut rows = Vec::new();
    for dir in runs {
        let run = rio::harness::load_run(dir)?;
        if let Some(f) = &run.record.failure {
            return Err(format!(
                "{}: run ended in estimator failure at t={:.6} ({}); nothing to evaluate",
                dir.display(),
                f.t,
                f.message
            )
            .into());
        }
        let data = load_dataset(Path::new(&run.record.dataset_dir))?;
        let aligned = AlignedRun::align(&run.snapshots, &data.truth)?;
        let metrics = metrics_report(&aligned)?;
        rows.push(EvaluatedRun {
            dir: dir.display().to_string(),
            run,
            aligned,
            metrics,
        });
    }

    let table = render_table(&rows);
    print!("{table}");

    // Backend comparison when the evaluation covers a balanced set of runs
    // from both back-ends: the i-th filter run pairs with the i-th graph run
    // (command-line order), which the Monte-Carlo workflow arranges to share
    // a dataset pairwise.
    let ekf: Vec<&EvaluatedRun> = rows
        .iter()
        .filter(|r| r.run.record.backend == BackendKind::Ekf)
        .collect();
    let fg: Vec<&EvaluatedRun> = rows
        .iter()
        .filter(|r| r.run.record.backend == BackendKind::Fg)
        .collect();
    let comparison = if !ekf.is_empty() && ekf.len() == fg.len() {
        for (a, b) in ekf.iter().zip(&fg) {
            if a.run.record.dataset_dir != b.run.record.dataset_dir {
                eprintln!(
                    "warning: comparing runs from different datasets: {} vs {}",
                    a.run.record.dataset_dir, b.run.record.dataset_dir
                );
            }
        }
        let ekf_aligned: Vec<AlignedRun> = ekf.iter().map(|r| r.aligned.clone()).collect();
        let fg_aligned: Vec<AlignedRun> = fg.iter().map(|r| r.aligned.clone()).collect();
        Some(compare_backends(&ekf_aligned, &fg_aligned)?)
    } else {
        None
    };

    fs::create_dir_all(out)?;
    fs::write(out.join("report.tsv"), &table)?;
    let summary = serde_json::json!({
        "runs": rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "run": r.dir,
                    "backend": r.run.record.backend,
                    "dataset": r.run.record.dataset_dir,
                    "n_scans": r.run.record.n_scans,
                    "metrics": r.metrics,
                })
            })
            .collect::<Vec<_>>(),
        "comparison": comparison,
    });
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(out.join("report.json"), json)?;
    println!("wrote report.tsv and report.json to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn render_table(rows: &[EvaluatedRun]) -> String {
    let mut s = String::from(
        "run\tbackend\tmae_pos_m\trmse_pos_m\trmse_att_deg\tfinal_drift_pct\ttraveled_m\tnees_inside\n",
    );
    for r in rows {
        let nees = match &r.metrics.nees {
            Some(n) => format!("{:.3}", n.fraction_inside),
            None => "-".into(),
        };
        s.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.3}\t{:.4}\t{:.2}\t{}\n",
            r.dir,
            r.run.record.backend,
            r.metrics.mae_position,
            r.metrics.rmse_position,
            r.metrics.rmse_attitude_deg,
            r.metrics.final_drift_pct,
            r.metrics.traveled_distance,
            nees
        ));
    }
    s
}

/// Reads one line-delimited JSON record of a radar scan.
fn read_scan(path: &Path) -> Result<RadarScan, CliError> {
    let text = fs::read_to_string(path)?;
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| format!("{}: no scan record found", path.display()))?;
    Ok(serde_json::from_str(line)
        .map_err(|e| format!("{}: corrupt scan record: {e}", path.display()))?)
}

/// Accepts a pose as a JSON literal (starting with '{') or a path to a file
/// holding one.
fn parse_pose(arg: &str) -> Result<Pose, CliError> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg)?
    };
    Ok(serde_json::from_str(text.trim()).map_err(|e| format!("invalid pose {arg:?}: {e}"))?)
}

#[allow(clippy::too_many_arguments)]
fn match_scans(
    scan_a: &Path,
    scan_b: &Path,
    pose_a: &str,
    pose_b: &str,
    extrinsics: Option<&str>,
    gates: MatchGates,
    out: Option<&Path>,
) -> Result<ExitCode, CliError> {
    if !(gates.max_distance > 0.0) {
        return Err("--max-distance must be positive".into());
    }
    if gates.min_intensity < 0.0 {
        return Err("--min-intensity must be non-negative".into());
    }
    let a = read_scan(scan_a)?;
    let b = read_scan(scan_b)?;
    let pose_a = parse_pose(pose_a)?;
    let pose_b = parse_pose(pose_b)?;
    let extrinsics = match extrinsics {
        Some(e) => parse_pose(e)?,
        None => Pose::identity(),
    };

    let a_points: Vec<_> = a.points.iter().map(|p| p.position).collect();
    let b_points: Vec<_> = b.points.iter().map(|p| p.position).collect();
    let b_intensity: Vec<_> = b.points.iter().map(|p| p.intensity).collect();
    let aligned = align_points(&a_points, &pose_a, &pose_b, &extrinsics);
    let matches = match_point_sets(&b_points, &b_intensity, &aligned, &gates);

    let mut lines = String::new();
    for pair in &matches.pairs {
        lines.push_str(&serde_json::to_string(pair)?);
        lines.push('\n');
    }
    match out {
        Some(path) => fs::write(path, &lines)?,
        None => print!("{lines}"),
    }
    eprintln!(
        "{} matches between {} (A: {} points) and {} (B: {} points)",
        matches.pairs.len(),
        scan_a.display(),
        a.points.len(),
        scan_b.display(),
        b.points.len()
    );
    Ok(ExitCode::SUCCESS)
}

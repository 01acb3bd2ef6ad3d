//! The estimation pipeline: replays a dataset's merged event stream through
//! one back-end, collecting per-scan snapshots, front-end decisions, and
//! update reports.
//!
//! The pipeline is deterministic: the same dataset and configuration produce
//! byte-identical output records. Estimator failures halt the replay
//! gracefully and are recorded with their time and scan context.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::dataset::{parse_jsonl, write_jsonl, Dataset, Event};
use super::{BackendKind, HarnessError, RunConfig};
use crate::ekf::state::IDX_P;
use crate::ekf::{Ekf, UpdateReport};
use crate::eval::Snapshot;
use crate::fg::{FgEstimator, FgReport};
use crate::matching::frontend::ScanDecisions;
use crate::types::{ImuSample, RadarScan};

const CONFIG_FILE: &str = "config.toml";
const SNAPSHOTS_FILE: &str = "snapshots.jsonl";
const DECISIONS_FILE: &str = "decisions.jsonl";
const REPORTS_FILE: &str = "reports.jsonl";
const RECORD_FILE: &str = "run.json";

/// Where and why a run stopped early.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FailureContext {
    pub t: f64,
    /// Set when the failure occurred while processing a radar scan.
    pub scan_index: Option<u64>,
    pub message: String,
}

/// Per-scan estimator diagnostics, tagged by back-end.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum ScanReportRecord {
    Ekf(UpdateReport),
    Fg(FgReport),
}

/// Everything one run produces, in scan order.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub snapshots: Vec<Snapshot>,
    pub decisions: Vec<ScanDecisions>,
    pub reports: Vec<ScanReportRecord>,
    /// Present when the estimator failed; earlier records are still valid.
    pub failure: Option<FailureContext>,
}

/// The run directory's summary record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub backend: BackendKind,
    /// Dataset the run was produced from (absolute where possible).
    pub dataset_dir: String,
    pub n_scans: usize,
    pub failure: Option<FailureContext>,
}

enum Backend {
    Ekf(Box<Ekf>),
    Fg(Box<FgEstimator>),
}

impl Backend {
    fn process_imu(&mut self, sample: ImuSample) -> Result<(), String> {
        match self {
            Backend::Ekf(e) => e.process_imu(sample).map_err(|e| e.to_string()),
            Backend::Fg(f) => f.process_imu(sample).map_err(|e| e.to_string()),
        }
    }

    fn process_scan(
        &mut self,
        scan: &RadarScan,
        scan_index: u64,
        gyro: &Vector3<f64>,
    ) -> Result<(ScanDecisions, ScanReportRecord), String> {
        match self {
            Backend::Ekf(e) => {
                let res = e.process_scan(scan, scan_index, gyro).map_err(|e| e.to_string())?;
                Ok((res.decisions, ScanReportRecord::Ekf(res.report)))
            }
            Backend::Fg(f) => {
                let res = f.process_scan(scan, scan_index, gyro).map_err(|e| e.to_string())?;
                Ok((res.decisions, ScanReportRecord::Fg(res.report)))
            }
        }
    }

    fn snapshot(&self, scan_index: u64) -> Snapshot {
        match self {
            Backend::Ekf(e) => {
                let st = e.state();
                Snapshot {
                    t: st.t,
                    scan_index,
                    pose: st.nav.pose(),
                    v: st.nav.v,
                    ba: st.nav.ba,
                    bg: st.nav.bg,
                    calib: st.calib,
                    pos_cov: Some(st.cov.fixed_view::<3, 3>(IDX_P, IDX_P).into_owned()),
                }
            }
            Backend::Fg(f) => {
                let nav = f.nav();
                Snapshot {
                    t: f.t(),
                    scan_index,
                    pose: nav.pose(),
                    v: nav.v,
                    ba: nav.ba,
                    bg: nav.bg,
                    calib: *f.extrinsics(),
                    pos_cov: None,
                }
            }
        }
    }
}

/// Replays `data` through the configured back-end.
///
/// IMU events propagate (EKF) or buffer for preintegration (graph); each
/// radar event runs the full per-scan cycle and appends one snapshot. Radar
/// events use the gyro rate of the nearest preceding IMU sample for the
/// Doppler lever arm.
pub fn run_pipeline(cfg: &RunConfig, data: &Dataset) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let init = cfg.initial_nav(data.truth.first());
    let extrinsics = cfg.initial_extrinsics(&data.manifest.sim.radar.extrinsics);
    let mut backend = match cfg.backend {
        BackendKind::Ekf => Backend::Ekf(Box::new(Ekf::new(cfg.ekf.clone(), init, extrinsics))),
        BackendKind::Fg => {
            Backend::Fg(Box::new(FgEstimator::new(cfg.fg.clone(), init, extrinsics)))
        }
    };

    let mut out = RunOutput::default();
    let mut last_gyro = Vector3::zeros();
    let mut scan_index: u64 = 0;
    for event in data.events() {
        match event {
            Event::Imu(sample) => {
                if let Err(message) = backend.process_imu(*sample) {
                    out.failure = Some(FailureContext {
                        t: sample.t,
                        scan_index: None,
                        message,
                    });
                    break;
                }
                last_gyro = sample.gyro;
            }
            Event::Radar(scan) => match backend.process_scan(scan, scan_index, &last_gyro) {
                Ok((decisions, report)) => {
                    out.snapshots.push(backend.snapshot(scan_index));
                    out.decisions.push(decisions);
                    out.reports.push(report);
                    scan_index += 1;
                }
                Err(message) => {
                    out.failure = Some(FailureContext {
                        t: scan.t,
                        scan_index: Some(scan_index),
                        message,
                    });
                    break;
                }
            },
        }
    }
    Ok(out)
}

/// Writes a run directory: resolved config, the three record streams, and the
/// summary record. Returns the summary.
pub fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    dataset_dir: &Path,
    out: &RunOutput,
) -> Result<RunRecord, HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string())?;
    write_jsonl(&dir.join(SNAPSHOTS_FILE), &out.snapshots)?;
    write_jsonl(&dir.join(DECISIONS_FILE), &out.decisions)?;
    write_jsonl(&dir.join(REPORTS_FILE), &out.reports)?;
    let dataset_abs = fs::canonicalize(dataset_dir)
        .unwrap_or_else(|_| dataset_dir.to_path_buf())
        .display()
        .to_string();
    let record = RunRecord {
        backend: cfg.backend,
        dataset_dir: dataset_abs,
        n_scans: out.snapshots.len(),
        failure: out.failure.clone(),
    };
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    fs::write(dir.join(RECORD_FILE), text)?;
    Ok(record)
}

/// A run directory read back for evaluation.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub record: RunRecord,
    pub cfg: RunConfig,
    pub snapshots: Vec<Snapshot>,
    pub decisions: Vec<ScanDecisions>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, HarnessError> {
    let record: RunRecord =
        serde_json::from_str(&fs::read_to_string(dir.join(RECORD_FILE))?)?;
    let cfg = RunConfig::from_toml_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let snapshots = parse_jsonl(
        SNAPSHOTS_FILE,
        &fs::read_to_string(dir.join(SNAPSHOTS_FILE))?,
    )?;
    let decisions = parse_jsonl(
        DECISIONS_FILE,
        &fs::read_to_string(dir.join(DECISIONS_FILE))?,
    )?;
    Ok(LoadedRun {
        record,
        cfg,
        snapshots,
        decisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::write_dataset;
    use crate::harness::SimConfig;
    use crate::sim::{
        gen_trajectory, run_montecarlo, Family, NoiseConfig, TrajectorySpec, YawProfile,
    };

    /// A 5-second zero-noise circle dataset in a temp directory. The high
    /// IMU rate keeps the discrete integrator within a fraction of a
    /// millimetre of the continuous trajectory, so the back-ends can be held
    /// to tight absolute bounds.
    fn zero_noise_dataset(dir: &Path) -> Dataset {
        let sim = SimConfig {
            trajectory: TrajectorySpec {
                duration: 5.0,
                ..TrajectorySpec::default()
            },
            noise: NoiseConfig::zero(11),
            imu_rate: 800.0,
            ..SimConfig::default()
        };
        let mc = run_montecarlo(
            &sim.trajectory,
            &sim.world,
            &sim.radar,
            &sim.noise,
            sim.imu_rate,
            1,
        )
        .unwrap();
        let truth = gen_trajectory(&sim.trajectory, sim.imu_rate).unwrap();
        write_dataset(dir, &sim, &mc.runs[0], &truth).unwrap();
        super::super::load_dataset(dir).unwrap()
    }

    /// A run configuration suited to noise-free data: the default 1 m match
    /// gate is sized for noisy detections, and on clean data it lets a trail
    /// or landmark whose scatterer just left the field of view latch onto a
    /// neighbouring point. Predictions are sub-millimetre here, so a tight
    /// gate keeps every association unambiguous.
    fn zero_noise_run_config(backend: BackendKind) -> RunConfig {
        let mut cfg = RunConfig {
            backend,
            ..RunConfig::default()
        };
        for fe in [&mut cfg.ekf.frontend, &mut cfg.fg.frontend] {
            fe.trail_gates.max_distance = 0.15;
            fe.landmark_gates.max_distance = 0.15;
        }
        cfg
    }

    #[test]
    fn zero_noise_ekf_tracks_truth() {
        let dir = tempfile::tempdir().unwrap();
        let data = zero_noise_dataset(dir.path());
        let out = run_pipeline(&zero_noise_run_config(BackendKind::Ekf), &data).unwrap();
        assert!(out.failure.is_none(), "{:?}", out.failure);
        assert_eq!(out.snapshots.len(), data.radar.len());
        // Final estimate within a fraction of a millimetre of truth.
        let last = out.snapshots.last().unwrap();
        let truth = data.truth.last().unwrap();
        let err = (last.pose.trans - truth.pose.trans).norm();
        assert!(err < 5e-4, "final position error {err}");
        assert!(last.pos_cov.is_some());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let data = zero_noise_dataset(dir.path());
        let cfg = RunConfig::default();
        let a = run_pipeline(&cfg, &data).unwrap();
        let b = run_pipeline(&cfg, &data).unwrap();
        assert_eq!(
            serde_json::to_vec(&a.snapshots).unwrap(),
            serde_json::to_vec(&b.snapshots).unwrap()
        );
        assert_eq!(
            serde_json::to_vec(&a.reports).unwrap(),
            serde_json::to_vec(&b.reports).unwrap()
        );
        assert_eq!(a.decisions, b.decisions);
    }

    #[test]
    fn backend_switch_preserves_decisions() {
        let dir = tempfile::tempdir().unwrap();
        let data = zero_noise_dataset(dir.path());
        let ekf_out = run_pipeline(&zero_noise_run_config(BackendKind::Ekf), &data).unwrap();
        let fg_out = run_pipeline(&zero_noise_run_config(BackendKind::Fg), &data).unwrap();
        assert!(ekf_out.failure.is_none() && fg_out.failure.is_none());
        assert_eq!(ekf_out.decisions.len(), fg_out.decisions.len());
        for (a, b) in ekf_out.decisions.iter().zip(&fg_out.decisions) {
            assert_eq!(a, b, "decision logs diverged at scan {}", a.scan_index);
        }
        // The graph back-end carries no marginal covariance in its snapshots.
        assert!(fg_out.snapshots.iter().all(|s| s.pos_cov.is_none()));
    }

    #[test]
    fn estimator_failure_is_recorded_with_context() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = zero_noise_dataset(dir.path());
        // Shift the third scan off the IMU grid: the back-end must reject it
        // and the pipeline must stop there, keeping earlier results.
        data.radar[2].t += 0.8 / 800.0;
        let out = run_pipeline(&RunConfig::default(), &data).unwrap();
        let failure = out.failure.expect("failure recorded");
        assert_eq!(failure.scan_index, Some(2));
        assert_eq!(out.snapshots.len(), 2);
        assert!(failure.message.contains("does not match"), "{}", failure.message);
    }

    #[test]
    fn hover_with_spin_runs_both_backends() {
        // A yaw-spinning hover exercises rotation-only excitation.
        let dir = tempfile::tempdir().unwrap();
        let sim = SimConfig {
            trajectory: TrajectorySpec {
                family: Family::Hover,
                yaw: YawProfile::Spin {
                    start: 0.0,
                    rate: 0.4,
                },
                duration: 3.0,
                ..TrajectorySpec::default()
            },
            noise: NoiseConfig::zero(3),
            ..SimConfig::default()
        };
        let mc = run_montecarlo(
            &sim.trajectory,
            &sim.world,
            &sim.radar,
            &sim.noise,
            sim.imu_rate,
            1,
        )
        .unwrap();
        let truth = gen_trajectory(&sim.trajectory, sim.imu_rate).unwrap();
        write_dataset(dir.path(), &sim, &mc.runs[0], &truth).unwrap();
        let data = super::super::load_dataset(dir.path()).unwrap();
        for backend in [BackendKind::Ekf, BackendKind::Fg] {
            let cfg = RunConfig {
                backend,
                ..RunConfig::default()
            };
            let out = run_pipeline(&cfg, &data).unwrap();
            assert!(out.failure.is_none(), "{backend}: {:?}", out.failure);
            let last = out.snapshots.last().unwrap();
            let truth_last = data.truth.last().unwrap();
            let err = (last.pose.trans - truth_last.pose.trans).norm();
            assert!(err < 2e-3, "{backend}: hover drifted {err} m");
        }
    }

    #[test]
    fn run_directory_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let data = zero_noise_dataset(&dir.path().join("dataset"));
        let cfg = RunConfig::default();
        let out = run_pipeline(&cfg, &data).unwrap();
        let run_dir = dir.path().join("run");
        let record = write_run(&run_dir, &cfg, &dir.path().join("dataset"), &out).unwrap();
        assert_eq!(record.n_scans, out.snapshots.len());
        let loaded = load_run(&run_dir).unwrap();
        assert_eq!(loaded.record.backend, BackendKind::Ekf);
        assert_eq!(loaded.snapshots.len(), out.snapshots.len());
        assert_eq!(loaded.decisions, out.decisions);
        assert_eq!(
            serde_json::to_vec(&loaded.snapshots).unwrap(),
            serde_json::to_vec(&out.snapshots).unwrap()
        );
        // The recorded dataset path loads.
        let ds = super::super::load_dataset(Path::new(&loaded.record.dataset_dir)).unwrap();
        assert_eq!(ds.radar.len(), data.radar.len());
    }
}

//! Dataset format, run configuration, and the pipeline tying
//! simulate → (dsp) → estimate → evaluate together.
//!
//! A dataset is a directory of line-delimited JSON streams plus a manifest
//! that records the generating configuration and a SHA-256 hash of every data
//! file. Runs are directories of per-scan snapshot/decision/report streams
//! plus the fully resolved configuration, so any result can be regenerated
//! from its own metadata.

pub mod dataset;
pub mod pipeline;

pub use dataset::{
    load_dataset, write_dataset, Dataset, DatasetManifest, Event, DATASET_FORMAT_VERSION,
};
pub use pipeline::{
    load_run, run_pipeline, write_run, FailureContext, LoadedRun, RunOutput, RunRecord,
    ScanReportRecord,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ekf::{EkfConfig, InitialNav};
use crate::fg::FgConfig;
use crate::geom::{Pose, Rotation};
use crate::sim::{NoiseConfig, RadarSimConfig, TrajectorySpec, TruthState, WorldConfig};
use nalgebra::Vector3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset format version {found} (this build reads {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{file}:{line}: corrupt record: {source}")]
    CorruptRecord {
        file: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{file}: contents do not match the manifest hash")]
    HashMismatch { file: String },
    #[error("missing dataset file {0}")]
    MissingFile(String),
    #[error("{file}:{line}: timestamps not strictly increasing")]
    NonMonotoneTime { file: String, line: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("configuration parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything the simulator needs to produce one dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub trajectory: TrajectorySpec,
    pub world: WorldConfig,
    pub radar: RadarSimConfig,
    pub noise: NoiseConfig,
    /// IMU sample rate [Hz].
    pub imu_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            trajectory: TrajectorySpec::default(),
            world: WorldConfig::default(),
            radar: RadarSimConfig::default(),
            noise: NoiseConfig::default(),
            imu_rate: 200.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.into()));
        self.trajectory
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        self.noise
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        if !(self.imu_rate > 0.0) {
            return bad("imu_rate must be positive");
        }
        let r = &self.radar;
        if !(r.rate > 0.0) {
            return bad("radar.rate must be positive");
        }
        if self.imu_rate < r.rate {
            return bad("imu_rate must be at least the radar rate");
        }
        if !(r.azimuth_fov > 0.0 && r.elevation_fov > 0.0) {
            return bad("radar fields of view must be positive");
        }
        if !(r.max_range > r.min_range && r.min_range >= 0.0) {
            return bad("radar range bounds must satisfy 0 <= min < max");
        }
        let w = &self.world;
        if (0..3).any(|i| !(w.max[i] > w.min[i])) {
            return bad("world bounds must have positive extent on every axis");
        }
        Ok(())
    }
}

/// Which estimation back-end a run drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Ekf,
    Fg,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Ekf => "ekf",
            BackendKind::Fg => "fg",
        })
    }
}

/// Initial-state policy: start from the dataset's first ground-truth sample
/// (the odometry convention — drift is measured from a known start), with
/// optional explicit overrides on top.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub from_truth: bool,
    pub p: Option<[f64; 3]>,
    /// Attitude override as a rotation vector [rad].
    pub theta: Option<[f64; 3]>,
    pub v: Option<[f64; 3]>,
    pub sigma_p: f64,
    pub sigma_theta: f64,
    pub sigma_v: f64,
    pub sigma_ba: f64,
    pub sigma_bg: f64,
    pub sigma_calib_p: f64,
    pub sigma_calib_theta: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        let d = InitialNav::default();
        InitConfig {
            from_truth: true,
            p: None,
            theta: None,
            v: None,
            sigma_p: d.sigma_p,
            sigma_theta: d.sigma_theta,
            sigma_v: d.sigma_v,
            sigma_ba: d.sigma_ba,
            sigma_bg: d.sigma_bg,
            sigma_calib_p: d.sigma_calib_p,
            sigma_calib_theta: d.sigma_calib_theta,
        }
    }
}

/// Initial extrinsics as offsets from the dataset's recorded rig: the
/// calibration experiments perturb a hand-measured value, and the unperturbed
/// default is simply no offset.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtrinsicsInit {
    /// Roll/pitch/yaw errors [deg] composed onto the true rotation.
    pub rot_offset_deg: [f64; 3],
    /// Lever-arm error [m] added to the true translation.
    pub trans_offset: [f64; 3],
}

/// One estimation run: back-end choice, initialization policy, and the full
/// per-back-end parameter sets. Every field has a default, and the resolved
/// configuration (defaults included) is written into the run directory.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub init: InitConfig,
    pub extrinsics: Option<ExtrinsicsInit>,
    pub ekf: EkfConfig,
    pub fg: FgConfig,
}

impl Default for BackendKind {
    fn default() -> Self {
        BackendKind::Ekf
    }
}

fn check_positive(pairs: &[(&str, f64)]) -> Result<(), HarnessError> {
    for (name, v) in pairs {
        if !(*v > 0.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "{name} must be positive (got {v})"
            )));
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig, HarnessError> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        let e = &self.ekf;
        check_positive(&[
            ("ekf.noise.sigma_a", e.noise.sigma_a),
            ("ekf.noise.sigma_g", e.noise.sigma_g),
            ("ekf.noise.sigma_ba", e.noise.sigma_ba),
            ("ekf.noise.sigma_bg", e.noise.sigma_bg),
            ("ekf.sigma_d", e.sigma_d),
            ("ekf.sigma_v", e.sigma_v),
            ("ekf.sigma_landmark_init", e.sigma_landmark_init),
            ("ekf.ransac.threshold", e.ransac.threshold),
        ])?;
        if !(e.chi2_percentile > 0.0 && e.chi2_percentile < 1.0) {
            return bad(format!(
                "ekf.chi2_percentile must lie in (0, 1), got {}",
                e.chi2_percentile
            ));
        }
        if e.max_clones < 1 || e.max_landmarks < 1 {
            return bad("ekf.max_clones and ekf.max_landmarks must be at least 1".into());
        }
        if e.ransac.iterations < 1 {
            return bad("ekf.ransac.iterations must be at least 1".into());
        }
        validate_frontend("ekf.frontend", &e.frontend)?;

        let g = &self.fg;
        check_positive(&[
            ("fg.noise.sigma_a", g.noise.sigma_a),
            ("fg.noise.sigma_g", g.noise.sigma_g),
            ("fg.noise.sigma_ba", g.noise.sigma_ba),
            ("fg.noise.sigma_bg", g.noise.sigma_bg),
            ("fg.sigma_d", g.sigma_d),
            ("fg.sigma_v", g.sigma_v),
            ("fg.dcs_phi_doppler", g.dcs_phi_doppler),
            ("fg.dcs_phi_distance", g.dcs_phi_distance),
            ("fg.dcs_phi_landmark", g.dcs_phi_landmark),
            ("fg.ransac.threshold", g.ransac.threshold),
            ("fg.lm.lambda_init", g.lm.lambda_init),
            ("fg.lm.gradient_tol", g.lm.gradient_tol),
        ])?;
        if g.window < 2 {
            return bad(format!("fg.window must be at least 2, got {}", g.window));
        }
        if g.max_landmarks < 1 {
            return bad("fg.max_landmarks must be at least 1".into());
        }
        if g.ransac.iterations < 1 || g.lm.max_iterations < 1 {
            return bad("fg iteration counts must be at least 1".into());
        }
        if g.lm.lambda_factor <= 1.0 {
            return bad("fg.lm.lambda_factor must exceed 1".into());
        }
        validate_frontend("fg.frontend", &g.frontend)?;
        if g.frontend.trail_len > g.window {
            return bad(format!(
                "fg.frontend.trail_len ({}) must not exceed fg.window ({})",
                g.frontend.trail_len, g.window
            ));
        }

        let i = &self.init;
        check_positive(&[
            ("init.sigma_p", i.sigma_p),
            ("init.sigma_theta", i.sigma_theta),
            ("init.sigma_v", i.sigma_v),
            ("init.sigma_ba", i.sigma_ba),
            ("init.sigma_bg", i.sigma_bg),
            ("init.sigma_calib_p", i.sigma_calib_p),
            ("init.sigma_calib_theta", i.sigma_calib_theta),
        ])?;
        Ok(())
    }

    /// Resolves the initial navigation state against the dataset's first
    /// ground-truth sample (if the policy uses it).
    pub fn initial_nav(&self, truth0: Option<&TruthState>) -> InitialNav {
        let i = &self.init;
        let mut nav = InitialNav {
            t: truth0.map_or(0.0, |s| s.t),
            sigma_p: i.sigma_p,
            sigma_theta: i.sigma_theta,
            sigma_v: i.sigma_v,
            sigma_ba: i.sigma_ba,
            sigma_bg: i.sigma_bg,
            sigma_calib_p: i.sigma_calib_p,
            sigma_calib_theta: i.sigma_calib_theta,
            ..InitialNav::default()
        };
        if i.from_truth {
            if let Some(s) = truth0 {
                nav.p = s.pose.trans;
                nav.theta = s.pose.rot.log();
                nav.v = s.v;
            }
        }
        if let Some(p) = i.p {
            nav.p = Vector3::from(p);
        }
        if let Some(th) = i.theta {
            nav.theta = Vector3::from(th);
        }
        if let Some(v) = i.v {
            nav.v = Vector3::from(v);
        }
        nav
    }

    /// The extrinsics handed to the estimator: the dataset's recorded rig,
    /// optionally perturbed by the configured offsets.
    pub fn initial_extrinsics(&self, recorded: &Pose) -> Pose {
        match &self.extrinsics {
            None => *recorded,
            Some(e) => {
                let [r, p, y] = e.rot_offset_deg;
                let offset = Rotation::rot_z(y.to_radians())
                    .compose(&Rotation::rot_y(p.to_radians()))
                    .compose(&Rotation::rot_x(r.to_radians()));
                Pose {
                    rot: recorded.rot.compose(&offset),
                    trans: recorded.trans + Vector3::from(e.trans_offset),
                }
            }
        }
    }
}

fn validate_frontend(
    prefix: &str,
    cfg: &crate::matching::frontend::FrontEndConfig,
) -> Result<(), HarnessError> {
    let bad = |m: String| Err(HarnessError::InvalidConfig(m));
    if cfg.trail_len < 2 {
        return bad(format!("{prefix}.trail_len must be at least 2"));
    }
    for (name, g) in [
        ("trail_gates", &cfg.trail_gates),
        ("landmark_gates", &cfg.landmark_gates),
    ] {
        if !(g.max_distance > 0.0) {
            return bad(format!("{prefix}.{name}.max_distance must be positive"));
        }
        if !(g.min_intensity >= 0.0) {
            return bad(format!("{prefix}.{name}.min_intensity must be non-negative"));
        }
    }
    Ok(())
}

/// Reads and validates a TOML run configuration.
pub fn load_run_config(path: &Path) -> Result<RunConfig, HarnessError> {
    RunConfig::from_toml_str(&std::fs::read_to_string(path)?)
}

/// Reads and validates a TOML simulation configuration.
pub fn load_sim_config(path: &Path) -> Result<SimConfig, HarnessError> {
    let cfg: SimConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

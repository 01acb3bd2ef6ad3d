//! Deterministic synthetic data generation: analytic trajectories, IMU
//! streams that exactly invert the propagation model, and radar scans with
//! per-point ground-truth identity.
//!
//! Everything is a pure function of (configuration, seed). Monte-Carlo runs
//! share one world and truth but draw noise from per-run RNG substreams, so
//! regenerating with the same seed is byte-identical.

pub mod imu;
pub mod radar;
pub mod trajectory;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub use imu::sample_imu;
pub use radar::{gen_world, sample_radar, RadarSimConfig, Scatterer, WorldConfig, WorldMap};
pub use trajectory::{
    gen_trajectory, AttitudeMode, Family, TrajectoryError, TrajectorySpec, TruthState, YawProfile,
};

use crate::types::{ImuSample, RadarScan};
use nalgebra::Vector3;

/// All stochastic knobs of one simulated sensor rig.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Accelerometer white noise density [m/s²/√Hz].
    pub accel_noise_density: f64,
    /// Gyroscope white noise density [rad/s/√Hz].
    pub gyro_noise_density: f64,
    /// Accelerometer bias random walk [m/s²/√s].
    pub accel_bias_walk: f64,
    /// Gyroscope bias random walk [rad/s/√s].
    pub gyro_bias_walk: f64,
    pub init_accel_bias: Vector3<f64>,
    pub init_gyro_bias: Vector3<f64>,
    /// Radar range standard deviation [m].
    pub range_sigma: f64,
    /// Radar azimuth standard deviation [rad].
    pub azimuth_sigma: f64,
    /// Radar elevation standard deviation [rad].
    pub elevation_sigma: f64,
    /// Doppler standard deviation [m/s].
    pub doppler_sigma: f64,
    /// Probability that a visible scatterer produces a return.
    pub detection_prob: f64,
    /// Expected clutter points per scan (Poisson).
    pub clutter_rate: f64,
    /// Master RNG seed.
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::default_noisy(0)
    }
}

impl NoiseConfig {
    /// Representative sensor noise: modest MEMS IMU, precise radar ranging
    /// with coarse angles.
    pub fn default_noisy(seed: u64) -> Self {
        NoiseConfig {
            accel_noise_density: 0.02,
            gyro_noise_density: 0.002,
            accel_bias_walk: 0.001,
            gyro_bias_walk: 1.0e-4,
            init_accel_bias: Vector3::zeros(),
            init_gyro_bias: Vector3::zeros(),
            range_sigma: 0.05,
            azimuth_sigma: 2.0_f64.to_radians(),
            elevation_sigma: 2.0_f64.to_radians(),
            doppler_sigma: 0.05,
            detection_prob: 0.9,
            clutter_rate: 2.0,
            seed,
        }
    }

    /// Ideal sensors: no noise, no bias, every visible scatterer returns,
    /// no clutter.
    pub fn zero(seed: u64) -> Self {
        NoiseConfig {
            accel_noise_density: 0.0,
            gyro_noise_density: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
            init_accel_bias: Vector3::zeros(),
            init_gyro_bias: Vector3::zeros(),
            range_sigma: 0.0,
            azimuth_sigma: 0.0,
            elevation_sigma: 0.0,
            doppler_sigma: 0.0,
            detection_prob: 1.0,
            clutter_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let sigmas = [
            self.accel_noise_density,
            self.gyro_noise_density,
            self.accel_bias_walk,
            self.gyro_bias_walk,
            self.range_sigma,
            self.azimuth_sigma,
            self.elevation_sigma,
            self.doppler_sigma,
            self.clutter_rate,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(TrajectoryError::Invalid(
                "noise magnitudes must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.detection_prob) {
            return Err(TrajectoryError::Invalid(
                "detection probability must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One noise realization of a full flight.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimRun {
    pub imu: Vec<ImuSample>,
    pub radar: Vec<RadarScan>,
}

/// Radar scan schedule: each scan lands exactly on an IMU sample index, the
/// nearest one to the ideal `k/radar_rate` instant.
pub fn radar_schedule(duration: f64, imu_rate: f64, radar_rate: f64) -> Vec<(usize, f64)> {
    let n_imu = (duration * imu_rate).floor() as usize + 1;
    let mut out: Vec<(usize, f64)> = Vec::new();
    let mut k = 0u64;
    loop {
        let idx = (k as f64 * imu_rate / radar_rate).round() as usize;
        if idx >= n_imu {
            break;
        }
        if out.last().map(|&(i, _)| i) != Some(idx) {
            out.push((idx, idx as f64 / imu_rate));
        }
        k += 1;
    }
    out
}

/// Generates one run's sensor streams from a fresh RNG.
pub fn simulate_run(
    spec: &TrajectorySpec,
    world: &WorldMap,
    radar_cfg: &RadarSimConfig,
    noise: &NoiseConfig,
    imu_rate: f64,
    rng: &mut ChaCha12Rng,
) -> Result<SimRun, TrajectoryError> {
    spec.validate()?;
    noise.validate()?;
    let imu = sample_imu(spec, noise, imu_rate, rng);
    let radar = radar_schedule(spec.duration, imu_rate, radar_cfg.rate)
        .into_iter()
        .map(|(_, t)| sample_radar(&spec.state_at(t), world, radar_cfg, noise, rng))
        .collect();
    Ok(SimRun { imu, radar })
}

/// Shared truth plus independent noise realizations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub world: WorldMap,
    /// Dense truth on the IMU grid.
    pub truth: Vec<TruthState>,
    pub runs: Vec<SimRun>,
}

/// Deterministic Monte-Carlo generation: the world draws from RNG stream 0
/// of the seed, run `r` from stream `r + 1`.
pub fn run_montecarlo(
    spec: &TrajectorySpec,
    world_cfg: &WorldConfig,
    radar_cfg: &RadarSimConfig,
    noise: &NoiseConfig,
    imu_rate: f64,
    n_runs: usize,
) -> Result<MonteCarlo, TrajectoryError> {
    if n_runs == 0 {
        return Err(TrajectoryError::Invalid("need at least one run".into()));
    }
    let mut world_rng = ChaCha12Rng::seed_from_u64(noise.seed);
    world_rng.set_stream(0);
    let world = gen_world(world_cfg, &mut world_rng);
    let truth = gen_trajectory(spec, imu_rate)?;
    let mut runs = Vec::with_capacity(n_runs);
    for r in 0..n_runs {
        let mut rng = ChaCha12Rng::seed_from_u64(noise.seed);
        rng.set_stream(r as u64 + 1);
        runs.push(simulate_run(spec, &world, radar_cfg, noise, imu_rate, &mut rng)?);
    }
    Ok(MonteCarlo { world, truth, runs })
}

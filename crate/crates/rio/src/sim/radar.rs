//! Radar scan synthesis: visibility, spherical noise, Doppler, clutter.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::trajectory::TruthState;
use super::NoiseConfig;
use crate::geom::Pose;
use crate::models::{predict_doppler, radar_pose};
use crate::types::{RadarPoint, RadarScan};

/// A static reflective scatterer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Vector3<f64>,
    pub intensity: f64,
}

/// The static scene: everything the radar can ever see.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct WorldMap {
    pub scatterers: Vec<Scatterer>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Number of scatterers.
    pub count: usize,
    /// Axis-aligned bounds of the scatterer volume [m].
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            count: 400,
            min: Vector3::new(-6.0, -6.0, 0.0),
            max: Vector3::new(6.0, 6.0, 2.5),
        }
    }
}

/// Draws scatterers uniformly in the configured box with intensities in
/// [1, 10].
pub fn gen_world<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> WorldMap {
    let scatterers = (0..cfg.count)
        .map(|_| {
            let u: Vector3<f64> =
                Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            Scatterer {
                position: cfg.min + (cfg.max - cfg.min).component_mul(&u),
                intensity: 1.0 + 9.0 * rng.random::<f64>(),
            }
        })
        .collect();
    WorldMap { scatterers }
}

/// Sensor geometry and timing (noise lives in [`NoiseConfig`]).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarSimConfig {
    /// Scan rate [Hz].
    pub rate: f64,
    /// Azimuth half field of view [rad] (total 120°).
    pub azimuth_fov: f64,
    /// Elevation half field of view [rad] (total 30°).
    pub elevation_fov: f64,
    pub max_range: f64,
    pub min_range: f64,
    /// Body-to-radar extrinsic pose.
    pub extrinsics: Pose,
}

impl Default for RadarSimConfig {
    fn default() -> Self {
        RadarSimConfig {
            rate: 15.0,
            azimuth_fov: 60.0_f64.to_radians(),
            elevation_fov: 15.0_f64.to_radians(),
            max_range: 20.0,
            min_range: 0.2,
            // Radar pitched 45° down, slightly offset from the IMU.
            extrinsics: Pose {
                rot: crate::geom::Rotation::rot_y(45.0_f64.to_radians()),
                trans: Vector3::new(0.075, -0.01, -0.04),
            },
        }
    }
}

/// Range/azimuth/elevation of a radar-frame point (x boresight, azimuth
/// toward +y, elevation toward +z).
pub fn spherical_of(p: &Vector3<f64>) -> (f64, f64, f64) {
    let r = p.norm();
    (r, p.y.atan2(p.x), (p.z / r).asin())
}

fn from_spherical(r: f64, az: f64, el: f64) -> Vector3<f64> {
    Vector3::new(
        r * el.cos() * az.cos(),
        r * el.cos() * az.sin(),
        r * el.sin(),
    )
}

fn in_fov(cfg: &RadarSimConfig, r: f64, az: f64, el: f64) -> bool {
    r >= cfg.min_range && r <= cfg.max_range && az.abs() <= cfg.azimuth_fov && el.abs() <= cfg.elevation_fov
}

/// One scan at the given truth state. Scatterer points carry their index as
/// `truth_id`; clutter points carry none. All emitted points lie inside the
/// field of view even after noise.
pub fn sample_radar<R: Rng>(
    state: &TruthState,
    world: &WorldMap,
    cfg: &RadarSimConfig,
    noise: &NoiseConfig,
    rng: &mut R,
) -> RadarScan {
    let sensor = radar_pose(&state.pose, &cfg.extrinsics);
    let mut points = Vec::new();
    for (id, sc) in world.scatterers.iter().enumerate() {
        let p_true = sensor.inverse_transform(&sc.position);
        let (r, az, el) = spherical_of(&p_true);
        if !in_fov(cfg, r, az, el) {
            continue;
        }
        if !rng.random_bool(noise.detection_prob) {
            continue;
        }
        let mut stdn = || -> f64 { StandardNormal.sample(rng) };
        let (zr, zaz, zel, zd) = (stdn(), stdn(), stdn(), stdn());
        let rn = r + noise.range_sigma * zr;
        let azn = az + noise.azimuth_sigma * zaz;
        let eln = el + noise.elevation_sigma * zel;
        let doppler = predict_doppler(
            &state.pose,
            &state.v,
            &state.omega,
            &cfg.extrinsics,
            &(p_true / r),
        ) + noise.doppler_sigma * zd;
        if !in_fov(cfg, rn, azn, eln) {
            continue;
        }
        points.push(RadarPoint {
            position: from_spherical(rn, azn, eln),
            doppler,
            intensity: sc.intensity,
            truth_id: Some(id as u64),
        });
    }
    if noise.clutter_rate > 0.0 {
        let n_clutter = Poisson::new(noise.clutter_rate)
            .expect("positive clutter rate")
            .sample(rng) as usize;
        for _ in 0..n_clutter {
            let r = rng.random_range(cfg.min_range..cfg.max_range);
            let az = rng.random_range(-cfg.azimuth_fov..cfg.azimuth_fov);
            let el = rng.random_range(-cfg.elevation_fov..cfg.elevation_fov);
            points.push(RadarPoint {
                position: from_spherical(r, az, el),
                doppler: rng.random_range(-2.0..2.0),
                intensity: 0.1 + 0.9 * rng.random::<f64>(),
                truth_id: None,
            });
        }
    }
    RadarScan { t: state.t, points }
}

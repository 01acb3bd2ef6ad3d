//! Analytic reference trajectories.
//!
//! Position is a closed-form function of time per family, and velocity and
//! acceleration are its hand-derived exact derivatives (a finite-difference
//! test pins them). Attitude follows a yaw profile; roll and pitch are
//! either zero (`Level`) or chosen so the body z axis carries the thrust a
//! hovering-capable vehicle would need (`ThrustAligned`), which excites
//! rotation about two axes whenever the path accelerates laterally.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::{gravity_vec, Pose, Rotation};

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("invalid trajectory: {0}")]
    Invalid(String),
}

/// Closed-form path family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Family {
    /// Constant position at `center`.
    Hover,
    /// Ellipse in the xy plane with a sinusoidal z component:
    /// `p = c + (A_x cos φ, A_y sin φ, A_z sin φ)`, `φ = Ωt`.
    Circle,
    /// Per-axis sinusoids `p_i = c_i + A_i sin(n_i Ω t + δ_i)` with integer
    /// frequency multiples.
    Lissajous {
        multipliers: (u32, u32, u32),
        phases: (f64, f64, f64),
    },
    /// Rectangle with smoothly rounded corners:
    /// `p = c + (A_x u(φ), A_y w(φ), A_z sin φ)` where
    /// `u = tanh(k cos φ)/tanh k`, `w = tanh(k sin φ)/tanh k`. Larger
    /// `sharpness` k gives squarer corners; the path stays infinitely
    /// differentiable for any k.
    RoundedRectangle { sharpness: f64 },
}

/// Heading as a function of time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum YawProfile {
    /// Constant heading [rad].
    Fixed(f64),
    /// Heading tracks the horizontal velocity direction.
    FollowVelocity,
    /// Linear heading `ψ = start + rate·t`.
    Spin { start: f64, rate: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum AttitudeMode {
    /// Roll and pitch identically zero.
    #[default]
    Level,
    /// Body z axis aligned with the required thrust direction
    /// `a_world − g_world`, yaw applied about it (standard multirotor
    /// differential flatness construction).
    ThrustAligned,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub family: Family,
    /// Path center [m].
    pub center: Vector3<f64>,
    /// Per-axis amplitude [m].
    pub amplitude: Vector3<f64>,
    /// Fundamental period [s]; `Ω = 2π / period`.
    pub period: f64,
    /// Total duration [s].
    pub duration: f64,
    pub yaw: YawProfile,
    pub attitude: AttitudeMode,
    /// Declared speed bound [m/s]; validation fails if the family's analytic
    /// speed bound exceeds it.
    pub max_speed: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            family: Family::Circle,
            center: Vector3::new(0.0, 0.0, 1.5),
            amplitude: Vector3::new(2.0, 2.0, 0.3),
            period: 10.0,
            duration: 30.0,
            yaw: YawProfile::FollowVelocity,
            attitude: AttitudeMode::Level,
            max_speed: 5.0,
        }
    }
}

/// Ground-truth kinematic state at one instant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthState {
    pub t: f64,
    /// World-from-body pose.
    pub pose: Pose,
    /// World-frame velocity [m/s].
    pub v: Vector3<f64>,
    /// Body-frame angular rate [rad/s].
    pub omega: Vector3<f64>,
    /// World-frame acceleration [m/s²] (gravity not included; this is p̈).
    pub a: Vector3<f64>,
}

/// Position and its first two time derivatives.
struct PathPoint {
    p: Vector3<f64>,
    v: Vector3<f64>,
    a: Vector3<f64>,
}

impl TrajectorySpec {
    fn omega_rad(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.period
    }

    fn path(&self, t: f64) -> PathPoint {
        let c = self.center;
        let am = self.amplitude;
        let om = self.omega_rad();
        let phi = om * t;
        match self.family {
            Family::Hover => PathPoint {
                p: c,
                v: Vector3::zeros(),
                a: Vector3::zeros(),
            },
            Family::Circle => {
                let (s, cs) = phi.sin_cos();
                PathPoint {
                    p: c + Vector3::new(am.x * cs, am.y * s, am.z * s),
                    v: om * Vector3::new(-am.x * s, am.y * cs, am.z * cs),
                    a: om * om * Vector3::new(-am.x * cs, -am.y * s, -am.z * s),
                }
            }
            Family::Lissajous {
                multipliers: (nx, ny, nz),
                phases: (dx, dy, dz),
            } => {
                let mut p = c;
                let mut v = Vector3::zeros();
                let mut a = Vector3::zeros();
                for (i, (n, d)) in [(nx, dx), (ny, dy), (nz, dz)].iter().enumerate() {
                    let w = *n as f64 * om;
                    let (s, cs) = (w * t + d).sin_cos();
                    p[i] += am[i] * s;
                    v[i] = am[i] * w * cs;
                    a[i] = -am[i] * w * w * s;
                }
                PathPoint { p, v, a }
            }
            Family::RoundedRectangle { sharpness: k } => {
                let tk = k.tanh();
                let (s, cs) = phi.sin_cos();
                let sech2 = |x: f64| 1.0 - x.tanh() * x.tanh();
                // u = tanh(k cos φ)/tanh k and its φ-derivatives.
                let u = (k * cs).tanh() / tk;
                let du = -(k / tk) * sech2(k * cs) * s;
                let ddu = -(k / tk) * sech2(k * cs) * (cs + 2.0 * k * s * s * (k * cs).tanh());
                // w = tanh(k sin φ)/tanh k and its φ-derivatives.
                let w = (k * s).tanh() / tk;
                let dw = (k / tk) * sech2(k * s) * cs;
                let ddw = -(k / tk) * sech2(k * s) * (s + 2.0 * k * cs * cs * (k * s).tanh());
                PathPoint {
                    p: c + Vector3::new(am.x * u, am.y * w, am.z * s),
                    v: om * Vector3::new(am.x * du, am.y * dw, am.z * cs),
                    a: om * om * Vector3::new(am.x * ddu, am.y * ddw, -am.z * s),
                }
            }
        }
    }

    /// Heading and heading rate at time `t`.
    fn yaw_at(&self, t: f64) -> (f64, f64) {
        match self.yaw {
            YawProfile::Fixed(psi) => (psi, 0.0),
            YawProfile::Spin { start, rate } => (start + rate * t, rate),
            YawProfile::FollowVelocity => {
                let pp = self.path(t);
                let psi = pp.v.y.atan2(pp.v.x);
                let planar2 = pp.v.x * pp.v.x + pp.v.y * pp.v.y;
                let rate = (pp.v.x * pp.a.y - pp.v.y * pp.a.x) / planar2;
                (psi, rate)
            }
        }
    }

    fn attitude_at(&self, t: f64) -> Rotation {
        let (psi, _) = self.yaw_at(t);
        match self.attitude {
            AttitudeMode::Level => Rotation::rot_z(psi),
            AttitudeMode::ThrustAligned => {
                let pp = self.path(t);
                let thrust = pp.a - gravity_vec();
                let z_b = thrust.normalize();
                let x_c = Vector3::new(psi.cos(), psi.sin(), 0.0);
                let y_b = z_b.cross(&x_c).normalize();
                let x_b = y_b.cross(&z_b);
                let m = nalgebra::Matrix3::from_columns(&[x_b, y_b, z_b]);
                Rotation::from_matrix(&m)
            }
        }
    }

    /// Full kinematic truth at time `t`.
    pub fn state_at(&self, t: f64) -> TruthState {
        let pp = self.path(t);
        let rot = self.attitude_at(t);
        let omega = match self.attitude {
            AttitudeMode::Level => {
                let (_, rate) = self.yaw_at(t);
                Vector3::new(0.0, 0.0, rate)
            }
            AttitudeMode::ThrustAligned => {
                // The constructed attitude has no convenient closed-form
                // rate; a central quaternion difference of the analytic
                // attitude is accurate to O(h²) ≈ 1e-10 rad/s here.
                let h = 1.0e-5;
                self.attitude_at(t + h)
                    .boxminus(&self.attitude_at(t - h))
                    / (2.0 * h)
            }
        };
        TruthState {
            t,
            pose: Pose {
                rot,
                trans: pp.p,
            },
            v: pp.v,
            omega,
            a: pp.a,
        }
    }

    /// Conservative analytic bound on `|v|`.
    fn speed_bound(&self) -> f64 {
        let am = self.amplitude;
        let om = self.omega_rad();
        match self.family {
            Family::Hover => 0.0,
            Family::Circle => om * (am.x.max((am.y * am.y + am.z * am.z).sqrt())),
            Family::Lissajous {
                multipliers: (nx, ny, nz),
                ..
            } => {
                om * Vector3::new(am.x * nx as f64, am.y * ny as f64, am.z * nz as f64).norm()
            }
            Family::RoundedRectangle { sharpness: k } => {
                let g = k / k.tanh();
                om * Vector3::new(am.x * g, am.y * g, am.z).norm()
            }
        }
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let fail = |m: String| Err(TrajectoryError::Invalid(m));
        if !(self.period > 0.0) {
            return fail("period must be positive".into());
        }
        if !(self.duration > 0.0) {
            return fail("duration must be positive".into());
        }
        if self.amplitude.iter().any(|a| *a < 0.0) {
            return fail("amplitudes must be non-negative".into());
        }
        match self.family {
            Family::RoundedRectangle { sharpness } if !(sharpness > 0.0) => {
                return fail("corner sharpness must be positive".into());
            }
            Family::Lissajous {
                multipliers: (nx, ny, nz),
                ..
            } if nx == 0 || ny == 0 || nz == 0 => {
                return fail("Lissajous frequency multipliers must be ≥ 1".into());
            }
            _ => {}
        }
        let bound = self.speed_bound();
        if bound > self.max_speed {
            return fail(format!(
                "speed bound {bound:.3} m/s exceeds declared max {:.3} m/s",
                self.max_speed
            ));
        }
        // Profile-specific degeneracies, scanned on a fine grid.
        let n = (self.duration * 200.0).ceil() as usize + 1;
        for i in 0..n {
            let t = self.duration * i as f64 / (n - 1).max(1) as f64;
            let pp = self.path(t);
            if matches!(self.yaw, YawProfile::FollowVelocity)
                && pp.v.xy().norm() < 1.0e-3
            {
                return fail(format!(
                    "velocity-following yaw undefined: planar speed ~0 at t={t:.3}"
                ));
            }
            if matches!(self.attitude, AttitudeMode::ThrustAligned) {
                let thrust = pp.a - gravity_vec();
                if thrust.z < 1.0e-3 || thrust.norm() < 1.0e-3 {
                    return fail(format!(
                        "thrust-aligned attitude undefined at t={t:.3} (free fall or inverted)"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Path length over the full duration (numeric quadrature of `|v|`).
    pub fn path_length(&self) -> f64 {
        let n = (self.duration * 500.0).ceil() as usize;
        let dt = self.duration / n as f64;
        (0..n)
            .map(|i| {
                let v0 = self.path(i as f64 * dt).v.norm();
                let v1 = self.path((i + 1) as f64 * dt).v.norm();
                0.5 * (v0 + v1) * dt
            })
            .sum()
    }
}

/// Ground truth sampled on the regular `rate` grid covering the duration.
pub fn gen_trajectory(spec: &TrajectorySpec, rate: f64) -> Result<Vec<TruthState>, TrajectoryError> {
    spec.validate()?;
    if !(rate > 0.0) {
        return Err(TrajectoryError::Invalid("rate must be positive".into()));
    }
    let n = (spec.duration * rate).floor() as usize + 1;
    Ok((0..n).map(|i| spec.state_at(i as f64 / rate)).collect())
}

//! IMU synthesis: inverts the propagation model so that integrating the
//! samples reproduces the trajectory.
//!
//! `a# = R_GIᵀ(a_world − g_world) + b_a + n_a` and `ω# = ω_body + b_ω + n_ω`,
//! with the biases following a random walk. White noise densities
//! [unit/√Hz] are discretized as `σ·√rate` per sample; bias random-walk
//! densities as `σ·√dt` per step.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::trajectory::TrajectorySpec;
use super::NoiseConfig;
use crate::geom::gravity_vec;
use crate::types::ImuSample;

fn normal3<R: Rng>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    let mut draw = || -> f64 { StandardNormal.sample(rng) };
    let (x, y, z) = (draw(), draw(), draw());
    Vector3::new(sigma * x, sigma * y, sigma * z)
}

/// Samples the IMU over the spec's duration at `rate` [Hz]. Sample `i` is
/// taken at `t = i/rate`; biases start at the configured initial values and
/// random-walk between samples.
pub fn sample_imu<R: Rng>(
    spec: &TrajectorySpec,
    noise: &NoiseConfig,
    rate: f64,
    rng: &mut R,
) -> Vec<ImuSample> {
    let n = (spec.duration * rate).floor() as usize + 1;
    let dt = 1.0 / rate;
    let white_a = noise.accel_noise_density * rate.sqrt();
    let white_g = noise.gyro_noise_density * rate.sqrt();
    let walk_a = noise.accel_bias_walk * dt.sqrt();
    let walk_g = noise.gyro_bias_walk * dt.sqrt();
    let mut b_a = noise.init_accel_bias;
    let mut b_g = noise.init_gyro_bias;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let s = spec.state_at(t);
        let accel =
            s.pose.rot.inverse_rotate(&(s.a - gravity_vec())) + b_a + normal3(rng, white_a);
        let gyro = s.omega + b_g + normal3(rng, white_g);
        out.push(ImuSample { t, accel, gyro });
        b_a += normal3(rng, walk_a);
        b_g += normal3(rng, walk_g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::trajectory::{AttitudeMode, Family, YawProfile};
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn hover_spec() -> TrajectorySpec {
        TrajectorySpec {
            family: Family::Hover,
            yaw: YawProfile::Fixed(0.0),
            attitude: AttitudeMode::Level,
            duration: 2.0,
            ..TrajectorySpec::default()
        }
    }

    #[test]
    fn hover_zero_noise_reads_static_equilibrium() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let samples = sample_imu(&hover_spec(), &NoiseConfig::zero(1), 200.0, &mut rng);
        assert_eq!(samples.len(), 401);
        for s in &samples {
            assert_relative_eq!(
                s.accel,
                Vector3::new(0.0, 0.0, 9.81),
                epsilon = 1e-12
            );
            assert_eq!(s.gyro, Vector3::zeros());
        }
    }

    #[test]
    fn constant_bias_appears_in_samples() {
        let mut noise = NoiseConfig::zero(1);
        noise.init_accel_bias = Vector3::new(0.1, -0.2, 0.05);
        noise.init_gyro_bias = Vector3::new(0.01, 0.0, -0.02);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let samples = sample_imu(&hover_spec(), &noise, 200.0, &mut rng);
        for s in &samples {
            assert_relative_eq!(
                s.accel,
                Vector3::new(0.1, -0.2, 9.86),
                epsilon = 1e-12
            );
            assert_relative_eq!(s.gyro, noise.init_gyro_bias, epsilon = 1e-15);
        }
    }

    #[test]
    fn white_noise_scales_with_rate() {
        // Per-sample standard deviation must be σ·√rate.
        let mut noise = NoiseConfig::zero(1);
        noise.accel_noise_density = 0.02;
        let rate = 400.0;
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let spec = TrajectorySpec {
            duration: 50.0,
            ..hover_spec()
        };
        let samples = sample_imu(&spec, &noise, rate, &mut rng);
        let zs: Vec<f64> = samples.iter().map(|s| s.accel.z - 9.81).collect();
        let var = zs.iter().map(|z| z * z).sum::<f64>() / zs.len() as f64;
        let expected = noise.accel_noise_density * noise.accel_noise_density * rate;
        assert_relative_eq!(var, expected, max_relative = 0.05);
    }

    #[test]
    fn bias_random_walk_variance_grows_linearly() {
        // Var[b(t)] = σ_walk²·t: estimate the gyro-x bias drift over many
        // independent walks.
        let mut noise = NoiseConfig::zero(1);
        noise.gyro_bias_walk = 0.01;
        let spec = TrajectorySpec {
            duration: 4.0,
            ..hover_spec()
        };
        let mut finals = Vec::new();
        for seed in 0..400 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let samples = sample_imu(&spec, &noise, 100.0, &mut rng);
            finals.push(samples.last().unwrap().gyro.x);
        }
        let var = finals.iter().map(|b| b * b).sum::<f64>() / finals.len() as f64;
        let expected = noise.gyro_bias_walk * noise.gyro_bias_walk * spec.duration;
        assert_relative_eq!(var, expected, max_relative = 0.2);
    }

    #[test]
    fn moving_trajectory_zero_noise_is_exact_model_inverse() {
        let spec = TrajectorySpec::default();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let samples = sample_imu(&spec, &NoiseConfig::zero(1), 200.0, &mut rng);
        for s in samples.iter().step_by(137) {
            let truth = spec.state_at(s.t);
            let expected = truth
                .pose
                .rot
                .inverse_rotate(&(truth.a - gravity_vec()));
            assert_relative_eq!(s.accel, expected, epsilon = 1e-15);
            assert_relative_eq!(s.gyro, truth.omega, epsilon = 1e-15);
        }
    }
}

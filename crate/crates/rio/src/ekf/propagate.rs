//! IMU propagation: mid-point integration of the nominal state and the
//! matching first-order error-state transition.
//!
//! For one interval with bias-corrected rate `ω̂` and specific force `â`
//! (the estimator feeds the average of the two samples bounding the
//! interval):
//!
//! ```text
//! q⁺ = q ⊗ Exp(ω̂ dt)            R_mid = R(q ⊗ Exp(ω̂ dt/2))
//! a_w = R_mid â + g              v⁺ = v + a_w dt
//! p⁺ = p + v dt + ½ a_w dt²
//! ```
//!
//! With right-multiplicative attitude error `R = R̂ Exp(θ̃)` the transition
//! blocks are (writing `M = Exp(ω̂ dt/2)`, `J_r` the SO(3) right Jacobian):
//!
//! ```text
//! θ̃⁺ = Exp(ω̂ dt)ᵀ θ̃ − J_r(ω̂ dt) dt b̃_ω
//! ṽ⁺ = ṽ − R̂ skew(M â) dt θ̃ − R̂ M dt b̃_a + R̂ M skew(â) J_r(ω̂ dt/2) dt²/2 b̃_ω
//! p̃⁺ = p̃ + ṽ dt + (the ṽ⁺ θ̃/b̃ terms with an extra dt/2 factor)
//! ```
//!
//! Calibration, clone, and landmark errors are untouched (their transition is
//! the identity and they receive no process noise); only the nav block and
//! its cross covariances change.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{gravity_vec, skew, so3_right_jacobian, Rotation};

use super::state::{FilterState, IDX_BA, IDX_BG, IDX_P, IDX_TH, IDX_V, NAV_DIM};
use super::EkfError;

/// Continuous-time IMU noise densities. The white densities integrate as
/// `σ² dt` per interval; the walk densities drive the bias random walks.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessNoise {
    /// Accelerometer white noise density [m/s² · √s].
    pub sigma_a: f64,
    /// Gyroscope white noise density [rad/s · √s].
    pub sigma_g: f64,
    /// Accelerometer bias random-walk density [m/s³ · √s].
    pub sigma_ba: f64,
    /// Gyroscope bias random-walk density [rad/s² · √s].
    pub sigma_bg: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        ProcessNoise {
            sigma_a: 0.02,
            sigma_g: 0.002,
            sigma_ba: 0.001,
            sigma_bg: 1e-4,
        }
    }
}

/// The nav-block transition matrix for one interval, evaluated at the current
/// nominal state.
pub fn transition_matrix(
    q: &Rotation,
    a_hat: &Vector3<f64>,
    w_hat: &Vector3<f64>,
    dt: f64,
) -> SMatrix<f64, NAV_DIM, NAV_DIM> {
    let r_hat = q.matrix();
    let m_half = Rotation::exp(&(w_hat * (dt / 2.0)));
    let rm = r_hat * m_half.matrix();
    let sk_ma = skew(&m_half.rotate(a_hat));
    let jr = so3_right_jacobian(&(w_hat * dt));
    let jr_half = so3_right_jacobian(&(w_hat * (dt / 2.0)));
    let rot_wdt_t = Rotation::exp(&(w_hat * dt)).matrix().transpose();

    let mut phi = SMatrix::<f64, NAV_DIM, NAV_DIM>::identity();
    let eye = Matrix3::identity();

    phi.fixed_view_mut::<3, 3>(IDX_P, IDX_V).copy_from(&(eye * dt));
    phi.fixed_view_mut::<3, 3>(IDX_P, IDX_TH)
        .copy_from(&(-r_hat * sk_ma * (dt * dt / 2.0)));
    phi.fixed_view_mut::<3, 3>(IDX_P, IDX_BA)
        .copy_from(&(-rm * (dt * dt / 2.0)));
    phi.fixed_view_mut::<3, 3>(IDX_P, IDX_BG)
        .copy_from(&(rm * skew(a_hat) * jr_half * (dt * dt * dt / 4.0)));

    phi.fixed_view_mut::<3, 3>(IDX_TH, IDX_TH).copy_from(&rot_wdt_t);
    phi.fixed_view_mut::<3, 3>(IDX_TH, IDX_BG).copy_from(&(-jr * dt));

    phi.fixed_view_mut::<3, 3>(IDX_V, IDX_TH)
        .copy_from(&(-r_hat * sk_ma * dt));
    phi.fixed_view_mut::<3, 3>(IDX_V, IDX_BA).copy_from(&(-rm * dt));
    phi.fixed_view_mut::<3, 3>(IDX_V, IDX_BG)
        .copy_from(&(rm * skew(a_hat) * jr_half * (dt * dt / 2.0)));

    phi
}

/// Discrete process noise for one interval on the nav block.
fn process_noise_matrix(noise: &ProcessNoise, dt: f64) -> SMatrix<f64, NAV_DIM, NAV_DIM> {
    let mut q = SMatrix::<f64, NAV_DIM, NAV_DIM>::zeros();
    for k in 0..3 {
        q[(IDX_TH + k, IDX_TH + k)] = noise.sigma_g * noise.sigma_g * dt;
        q[(IDX_V + k, IDX_V + k)] = noise.sigma_a * noise.sigma_a * dt;
        q[(IDX_BA + k, IDX_BA + k)] = noise.sigma_ba * noise.sigma_ba * dt;
        q[(IDX_BG + k, IDX_BG + k)] = noise.sigma_bg * noise.sigma_bg * dt;
    }
    q
}

/// Propagates the nominal state and covariance by one interval driven by the
/// raw specific force `accel` and rate `gyro` (bias correction happens here).
pub fn propagate(
    state: &mut FilterState,
    accel: &Vector3<f64>,
    gyro: &Vector3<f64>,
    dt: f64,
    noise: &ProcessNoise,
) -> Result<(), EkfError> {
    if !(accel.iter().all(|x| x.is_finite()) && gyro.iter().all(|x| x.is_finite())) {
        return Err(EkfError::NonFiniteImu);
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EkfError::NonPositiveDt(dt));
    }

    let a_hat = accel - state.nav.ba;
    let w_hat = gyro - state.nav.bg;

    let phi = transition_matrix(&state.nav.q, &a_hat, &w_hat, dt);

    // Nominal mid-point step.
    let m_half = Rotation::exp(&(w_hat * (dt / 2.0)));
    let r_mid = state.nav.q.compose(&m_half);
    let a_w = r_mid.rotate(&a_hat) + gravity_vec();
    let p_next = state.nav.p + state.nav.v * dt + a_w * (dt * dt / 2.0);
    let v_next = state.nav.v + a_w * dt;
    let q_next = state.nav.q.compose(&Rotation::exp(&(w_hat * dt)));
    state.nav.p = p_next;
    state.nav.v = v_next;
    state.nav.q = q_next;
    state.t += dt;

    // Covariance: Σ ← F Σ Fᵀ + Q with F = blkdiag(Φ_nav, I).
    let dim = state.dim();
    let rest = dim - NAV_DIM;
    let qd = process_noise_matrix(noise, dt);
    let nav_block = state.cov.view((0, 0), (NAV_DIM, NAV_DIM)).clone_owned();
    let new_nav = &phi * nav_block * phi.transpose() + qd;
    let sym_nav = (&new_nav + new_nav.transpose()) * 0.5;
    state
        .cov
        .view_mut((0, 0), (NAV_DIM, NAV_DIM))
        .copy_from(&sym_nav);
    if rest > 0 {
        let cross = state.cov.view((0, NAV_DIM), (NAV_DIM, rest)).clone_owned();
        let new_cross = phi * cross;
        state
            .cov
            .view_mut((0, NAV_DIM), (NAV_DIM, rest))
            .copy_from(&new_cross);
        state
            .cov
            .view_mut((NAV_DIM, 0), (rest, NAV_DIM))
            .copy_from(&new_cross.transpose());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose, GRAVITY};
    use crate::sim::trajectory::{gen_trajectory, AttitudeMode, Family, TrajectorySpec, YawProfile};
    use crate::sim::{sample_imu, NoiseConfig};
    use nalgebra::{vector, DMatrix, DVector, Matrix3};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::ekf::state::{CLONE_DIM, LM_DIM, STATIC_DIM};

    fn rest_state() -> FilterState {
        FilterState::new(
            0.0,
            super::super::state::NavState {
                p: Vector3::zeros(),
                q: Rotation::identity(),
                v: Vector3::zeros(),
                ba: Vector3::zeros(),
                bg: Vector3::zeros(),
            },
            Pose::identity(),
        )
    }

    fn random_state(rng: &mut StdRng) -> FilterState {
        let mut state = rest_state();
        state.nav.p = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        state.nav.q = Rotation::exp(&(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * 1.5));
        state.nav.v = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        state.nav.ba = Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05));
        state.nav.bg = Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01));
        state.calib = Pose::new(
            Rotation::exp(&Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5))),
            Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)),
        );
        state
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let mut state = rest_state();
        let noise = ProcessNoise::default();
        let accel = vector![0.0, 0.0, GRAVITY];
        let gyro = Vector3::zeros();
        let dt = 0.005;
        for _ in 0..2000 {
            propagate(&mut state, &accel, &gyro, dt, &noise).unwrap();
        }
        assert!(state.nav.p.norm() < 1e-9);
        assert!(state.nav.v.norm() < 1e-9);
        assert!(state.nav.q.angle_to(&Rotation::identity()) < 1e-9);
        assert!((state.t - 10.0).abs() < 1e-9);
    }

    #[test]
    fn clone_landmark_and_calib_blocks_unchanged() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut state = random_state(&mut rng);
        state.add_clone(0, 0.0);
        state.add_landmark(
            1,
            vector![2.0, 1.0, 0.5],
            0,
            Matrix3::identity() * 0.3,
            &DMatrix::zeros(LM_DIM, STATIC_DIM + CLONE_DIM),
        );
        let n = state.dim();
        let dense = DMatrix::from_fn(n, n, |i, j| 0.01 * ((i * n + j) as f64 * 0.37).sin());
        state.cov = &dense * dense.transpose() + DMatrix::identity(n, n);
        let before = state.cov.clone();
        propagate(
            &mut state,
            &vector![0.3, -0.2, 9.9],
            &vector![0.1, 0.02, -0.3],
            0.005,
            &ProcessNoise::default(),
        )
        .unwrap();
        // Everything outside the nav rows/cols is bit-identical.
        for i in NAV_DIM..n {
            for j in NAV_DIM..n {
                assert_eq!(state.cov[(i, j)].to_bits(), before[(i, j)].to_bits());
            }
        }
        assert!(state.check_invariants().is_ok());
    }

    #[test]
    fn transition_matrix_matches_central_differences() {
        let mut rng = StdRng::seed_from_u64(12);
        let noise = ProcessNoise {
            sigma_a: 0.0,
            sigma_g: 0.0,
            sigma_ba: 0.0,
            sigma_bg: 0.0,
        };
        let dt = 0.005;
        for _ in 0..20 {
            let state = random_state(&mut rng);
            let accel = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0))
                + vector![0.0, 0.0, GRAVITY];
            let gyro = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let a_hat = accel - state.nav.ba;
            let w_hat = gyro - state.nav.bg;
            let phi = transition_matrix(&state.nav.q, &a_hat, &w_hat, dt);

            let h = 1e-4;
            for k in 0..NAV_DIM {
                let mut dv = DVector::zeros(STATIC_DIM);
                dv[k] = h;
                let mut plus = state.clone();
                plus.boxplus(&dv);
                propagate(&mut plus, &accel, &gyro, dt, &noise).unwrap();
                let mut minus = state.clone();
                minus.boxplus(&(-dv.clone()));
                propagate(&mut minus, &accel, &gyro, dt, &noise).unwrap();
                let fd = plus.boxminus(&minus) / (2.0 * h);
                for i in 0..NAV_DIM {
                    let a = phi[(i, k)];
                    let f = fd[i];
                    let tol = 1e-5 * a.abs().max(f.abs()).max(1e-3);
                    assert!(
                        (a - f).abs() <= tol,
                        "phi[({i},{k})] = {a:.9e} vs fd {f:.9e}"
                    );
                }
                // Calibration errors stay put and never leak into nav.
                for i in NAV_DIM..STATIC_DIM {
                    let expect = if i == k { 1.0 } else { 0.0 };
                    assert!((fd[i] - expect).abs() < 1e-6);
                }
            }
            // Calibration perturbations do not move the nav state.
            for k in NAV_DIM..STATIC_DIM {
                let mut dv = DVector::zeros(STATIC_DIM);
                dv[k] = h;
                let mut plus = state.clone();
                plus.boxplus(&dv);
                propagate(&mut plus, &accel, &gyro, dt, &noise).unwrap();
                let mut minus = state.clone();
                minus.boxplus(&(-dv.clone()));
                propagate(&mut minus, &accel, &gyro, dt, &noise).unwrap();
                let fd = plus.boxminus(&minus) / (2.0 * h);
                for i in 0..STATIC_DIM {
                    let expect = if i == k { 1.0 } else { 0.0 };
                    assert!((fd[i] - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn process_noise_grows_covariance_from_zero() {
        let mut state = rest_state();
        let noise = ProcessNoise::default();
        let dt = 0.01;
        propagate(
            &mut state,
            &vector![0.0, 0.0, GRAVITY],
            &Vector3::zeros(),
            dt,
            &noise,
        )
        .unwrap();
        let c = &state.cov;
        for k in 0..3 {
            assert!((c[(IDX_V + k, IDX_V + k)] - noise.sigma_a * noise.sigma_a * dt).abs() < 1e-15);
            assert!((c[(IDX_TH + k, IDX_TH + k)] - noise.sigma_g * noise.sigma_g * dt).abs() < 1e-15);
            assert!(
                (c[(IDX_BA + k, IDX_BA + k)] - noise.sigma_ba * noise.sigma_ba * dt).abs() < 1e-18
            );
            assert!(
                (c[(IDX_BG + k, IDX_BG + k)] - noise.sigma_bg * noise.sigma_bg * dt).abs() < 1e-18
            );
        }
        assert!(state.check_invariants().is_ok());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut state = rest_state();
        let noise = ProcessNoise::default();
        assert!(matches!(
            propagate(
                &mut state,
                &vector![f64::NAN, 0.0, 0.0],
                &Vector3::zeros(),
                0.01,
                &noise
            ),
            Err(EkfError::NonFiniteImu)
        ));
        assert!(matches!(
            propagate(
                &mut state,
                &Vector3::zeros(),
                &Vector3::zeros(),
                0.0,
                &noise
            ),
            Err(EkfError::NonPositiveDt(_))
        ));
    }

    /// Pure dead-reckoning against the simulator's analytic truth on a
    /// gentle circle at a high IMU rate: mid-point integration must track the
    /// closed-form trajectory to well below a millimeter over 10 s.
    #[test]
    fn zero_noise_dead_reckoning_tracks_truth() {
        let spec = TrajectorySpec {
            family: Family::Circle,
            center: vector![0.0, 0.0, 1.5],
            amplitude: vector![2.0, 2.0, 0.0],
            period: 10.0,
            duration: 10.0,
            yaw: YawProfile::FollowVelocity,
            attitude: AttitudeMode::Level,
            max_speed: 5.0,
        };
        let rate = 1000.0;
        let truth = gen_trajectory(&spec, rate).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        let imu = sample_imu(&spec, &NoiseConfig::zero(0), rate, &mut rng);

        let mut state = rest_state();
        state.nav.p = truth[0].pose.trans;
        state.nav.q = truth[0].pose.rot;
        state.nav.v = truth[0].v;
        let noise = ProcessNoise::default();
        for pair in imu.windows(2) {
            let accel = (pair[0].accel + pair[1].accel) * 0.5;
            let gyro = (pair[0].gyro + pair[1].gyro) * 0.5;
            let dt = pair[1].t - pair[0].t;
            propagate(&mut state, &accel, &gyro, dt, &noise).unwrap();
        }
        let last = truth.last().unwrap();
        assert!(
            (state.nav.p - last.pose.trans).norm() < 2e-4,
            "position error {:.3e}",
            (state.nav.p - last.pose.trans).norm()
        );
        assert!((state.nav.v - last.v).norm() < 2e-4);
        assert!(state.nav.q.angle_to(&last.pose.rot) < 1e-5);
    }
}

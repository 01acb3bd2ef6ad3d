//! Analytic measurement Jacobians.
//!
//! Every function returns the nominal prediction (computed through the shared
//! measurement models so both back-ends predict bitwise-identical values)
//! together with the error-state Jacobian blocks. Conventions: attitude
//! errors are right-multiplicative (`R = R̂ Exp(θ̃)`), so for a world vector
//! `u`, `∂(R u)/∂θ̃ = −R̂ skew(u)` and `∂(Rᵀ u)/∂θ̃ = skew(R̂ᵀ u)`.

use nalgebra::{Matrix3, RowVector3, Vector3};

use crate::geom::{skew, Pose};
use crate::models::{predict_doppler, radar_to_world, relative_radar_pose, world_to_radar};

/// Distance observation of one trail-history point: the point was detected at
/// `p_old` in the radar frame of `clone_pose`; its predicted distance from
/// the *current* radar origin is compared with the range measured now.
#[derive(Clone, Debug)]
pub struct DistanceJacobian {
    /// Predicted distance ‖p′‖.
    pub predicted: f64,
    pub d_nav_p: RowVector3<f64>,
    pub d_nav_th: RowVector3<f64>,
    pub d_clone_p: RowVector3<f64>,
    pub d_clone_th: RowVector3<f64>,
    pub d_calib_p: RowVector3<f64>,
    pub d_calib_th: RowVector3<f64>,
}

/// Predicted distance of a past detection from the current radar origin.
pub fn predict_trail_distance(
    nav_pose: &Pose,
    clone_pose: &Pose,
    extrinsics: &Pose,
    p_old: &Vector3<f64>,
) -> f64 {
    relative_radar_pose(clone_pose, nav_pose, extrinsics)
        .transform(p_old)
        .norm()
}

pub fn distance_trail(
    nav_pose: &Pose,
    clone_pose: &Pose,
    extrinsics: &Pose,
    p_old: &Vector3<f64>,
) -> DistanceJacobian {
    let r_ir = extrinsics.rot.matrix();
    let r_ir_t = r_ir.transpose();
    let r_n_t = nav_pose.rot.matrix().transpose();
    let r_c = clone_pose.rot.matrix();
    let p_ir = extrinsics.trans;

    // World position of the old detection and its image in the current
    // frame. The prediction goes through the shared relative-pose model so
    // both back-ends produce bitwise-identical values.
    let lever = p_ir + r_ir * p_old;
    let p_w = clone_pose.trans + r_c * lever;
    let p_prime = relative_radar_pose(clone_pose, nav_pose, extrinsics).transform(p_old);
    let predicted = p_prime.norm();
    let n_hat = (p_prime / predicted).transpose();

    let d_nav_p = n_hat * (-r_ir_t * r_n_t);
    let d_nav_th = n_hat * (r_ir_t * skew(&(r_n_t * (p_w - nav_pose.trans))));
    let d_clone_p = n_hat * (r_ir_t * r_n_t);
    let d_clone_th = n_hat * (-r_ir_t * r_n_t * r_c * skew(&lever));
    let d_calib_p = n_hat * (r_ir_t * (r_n_t * r_c - Matrix3::identity()));
    let d_calib_th = n_hat * (skew(&p_prime) - r_ir_t * r_n_t * r_c * r_ir * skew(p_old));

    DistanceJacobian {
        predicted,
        d_nav_p,
        d_nav_th,
        d_clone_p,
        d_clone_th,
        d_calib_p,
        d_calib_th,
    }
}

/// Doppler observation along radar-frame direction `dir` (normalized here):
/// `h = −r̂ᵀ R_IRᵀ (R_GIᵀ v + ω × p_IR)` with `ω = gyro − b_ω`.
#[derive(Clone, Debug)]
pub struct DopplerJacobian {
    pub predicted: f64,
    pub d_v: RowVector3<f64>,
    pub d_th: RowVector3<f64>,
    pub d_bg: RowVector3<f64>,
    pub d_calib_p: RowVector3<f64>,
    pub d_calib_th: RowVector3<f64>,
}

pub fn doppler(
    nav_pose: &Pose,
    v_world: &Vector3<f64>,
    gyro: &Vector3<f64>,
    bg: &Vector3<f64>,
    extrinsics: &Pose,
    dir: &Vector3<f64>,
) -> DopplerJacobian {
    let omega = gyro - bg;
    let predicted = predict_doppler(nav_pose, v_world, &omega, extrinsics, dir);

    let r_hat = (dir / dir.norm()).transpose();
    let r_ir_t = extrinsics.rot.matrix().transpose();
    let r_n_t = nav_pose.rot.matrix().transpose();
    let p_ir = extrinsics.trans;
    let y = r_n_t * v_world + omega.cross(&p_ir);

    let d_v = -r_hat * (r_ir_t * r_n_t);
    let d_th = -r_hat * (r_ir_t * skew(&(r_n_t * v_world)));
    // ∂h/∂ω = +r̂ᵀ R_IRᵀ skew(p_IR) and ∂ω/∂b̃_ω = −I.
    let d_bg = -r_hat * (r_ir_t * skew(&p_ir));
    let d_calib_p = -r_hat * (r_ir_t * skew(&omega));
    let d_calib_th = -r_hat * skew(&(r_ir_t * y));

    DopplerJacobian {
        predicted,
        d_v,
        d_th,
        d_bg,
        d_calib_p,
        d_calib_th,
    }
}

/// Distance observation of a persistent world landmark:
/// `d = ‖R_IRᵀ (R_GIᵀ (l − p_GI) − p_IR)‖`.
#[derive(Clone, Debug)]
pub struct LandmarkJacobian {
    pub predicted: f64,
    pub d_nav_p: RowVector3<f64>,
    pub d_nav_th: RowVector3<f64>,
    pub d_calib_p: RowVector3<f64>,
    pub d_calib_th: RowVector3<f64>,
    pub d_lm: RowVector3<f64>,
}

pub fn landmark_distance(
    nav_pose: &Pose,
    extrinsics: &Pose,
    lm_world: &Vector3<f64>,
) -> LandmarkJacobian {
    let l_prime = world_to_radar(nav_pose, extrinsics, lm_world);
    let predicted = l_prime.norm();
    let n_hat = (l_prime / predicted).transpose();

    let r_ir_t = extrinsics.rot.matrix().transpose();
    let r_n_t = nav_pose.rot.matrix().transpose();

    let d_nav_p = n_hat * (-r_ir_t * r_n_t);
    let d_nav_th = n_hat * (r_ir_t * skew(&(r_n_t * (lm_world - nav_pose.trans))));
    let d_calib_p = n_hat * (-r_ir_t);
    let d_calib_th = n_hat * skew(&l_prime);
    let d_lm = n_hat * (r_ir_t * r_n_t);

    LandmarkJacobian {
        predicted,
        d_nav_p,
        d_nav_th,
        d_calib_p,
        d_calib_th,
        d_lm,
    }
}

/// Inverse observation for landmark initialization:
/// `l = R_GI (R_IR p_R + p_IR) + p_GI`, with the Jacobians of `l` w.r.t. the
/// pose / calibration errors and the radar-frame measurement.
#[derive(Clone, Debug)]
pub struct LandmarkInit {
    pub mean: Vector3<f64>,
    pub h_nav_p: Matrix3<f64>,
    pub h_nav_th: Matrix3<f64>,
    pub h_calib_p: Matrix3<f64>,
    pub h_calib_th: Matrix3<f64>,
    /// Jacobian w.r.t. the measured radar-frame point.
    pub h_z: Matrix3<f64>,
}

pub fn landmark_init(nav_pose: &Pose, extrinsics: &Pose, p_radar: &Vector3<f64>) -> LandmarkInit {
    let mean = radar_to_world(nav_pose, extrinsics, p_radar);
    let r = nav_pose.rot.matrix();
    let r_ir = extrinsics.rot.matrix();
    let lever = extrinsics.trans + r_ir * p_radar;

    LandmarkInit {
        mean,
        h_nav_p: Matrix3::identity(),
        h_nav_th: -r * skew(&lever),
        h_calib_p: r,
        h_calib_th: -r * r_ir * skew(p_radar),
        h_z: r * r_ir,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rotation;
    use approx::assert_relative_eq;
    use nalgebra::vector;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_pose(rng: &mut StdRng, trans_scale: f64) -> Pose {
        Pose::new(
            Rotation::exp(&(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * 1.2)),
            Vector3::from_fn(|_, _| rng.random_range(-trans_scale..trans_scale)),
        )
    }

    fn fd_ok(analytic: f64, fd: f64) -> bool {
        (analytic - fd).abs() <= 1e-5 * analytic.abs().max(fd.abs()).max(1e-3)
    }

    /// Central finite difference of a scalar function under a pose
    /// perturbation in direction `k` (0..3 translation, 3..6 rotation).
    fn pose_fd(f: &dyn Fn(&Pose) -> f64, pose: &Pose, k: usize) -> f64 {
        let h = 1e-6;
        let mut dp = Vector3::zeros();
        let mut dth = Vector3::zeros();
        if k < 3 {
            dp[k] = h;
        } else {
            dth[k - 3] = h;
        }
        let plus = pose.boxplus(&dp, &dth);
        let minus = pose.boxplus(&(-dp), &(-dth));
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    fn vec_fd(f: &dyn Fn(&Vector3<f64>) -> f64, x: &Vector3<f64>, k: usize) -> f64 {
        let h = 1e-6;
        let mut dx = Vector3::zeros();
        dx[k] = h;
        (f(&(x + dx)) - f(&(x - dx))) / (2.0 * h)
    }

    #[test]
    fn trail_distance_jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..150 {
            let nav = random_pose(&mut rng, 4.0);
            let clone = random_pose(&mut rng, 4.0);
            let calib = random_pose(&mut rng, 0.2);
            let p_old = Vector3::from_fn(|_, _| rng.random_range(-6.0..6.0));
            if predict_trail_distance(&nav, &clone, &calib, &p_old) < 0.5 {
                continue;
            }
            let jac = distance_trail(&nav, &clone, &calib, &p_old);
            assert_relative_eq!(
                jac.predicted,
                predict_trail_distance(&nav, &clone, &calib, &p_old)
            );
            for k in 0..6 {
                let f_nav =
                    |p: &Pose| predict_trail_distance(p, &clone, &calib, &p_old);
                let fd = pose_fd(&f_nav, &nav, k);
                let a = if k < 3 {
                    jac.d_nav_p[k]
                } else {
                    jac.d_nav_th[k - 3]
                };
                assert!(fd_ok(a, fd), "nav dir {k}: {a:.8e} vs {fd:.8e}");

                let f_clone =
                    |p: &Pose| predict_trail_distance(&nav, p, &calib, &p_old);
                let fd = pose_fd(&f_clone, &clone, k);
                let a = if k < 3 {
                    jac.d_clone_p[k]
                } else {
                    jac.d_clone_th[k - 3]
                };
                assert!(fd_ok(a, fd), "clone dir {k}: {a:.8e} vs {fd:.8e}");

                let f_calib =
                    |p: &Pose| predict_trail_distance(&nav, &clone, p, &p_old);
                let fd = pose_fd(&f_calib, &calib, k);
                let a = if k < 3 {
                    jac.d_calib_p[k]
                } else {
                    jac.d_calib_th[k - 3]
                };
                assert!(fd_ok(a, fd), "calib dir {k}: {a:.8e} vs {fd:.8e}");
            }
        }
    }

    #[test]
    fn trail_distance_zero_motion_identity_extrinsics_is_point_norm() {
        let pose = Pose::new(Rotation::rot_z(0.4), vector![1.0, 2.0, 3.0]);
        let p = vector![1.0, 2.0, 2.0];
        let jac = distance_trail(&pose, &pose, &Pose::identity(), &p);
        assert_relative_eq!(jac.predicted, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn doppler_jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..150 {
            let nav = random_pose(&mut rng, 4.0);
            let calib = random_pose(&mut rng, 0.2);
            let v: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let gyro: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let bg: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05));
            let dir = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();

            let jac = doppler(&nav, &v, &gyro, &bg, &calib, &dir);

            // Velocity block.
            for k in 0..3 {
                let f = |x: &Vector3<f64>| {
                    predict_doppler(&nav, x, &(gyro - bg), &calib, &dir)
                };
                assert!(fd_ok(jac.d_v[k], vec_fd(&f, &v, k)));
            }
            // Attitude block: perturb only the rotation of the nav pose.
            for k in 0..3 {
                let f = |p: &Pose| predict_doppler(p, &v, &(gyro - bg), &calib, &dir);
                let fd = pose_fd(&f, &nav, k + 3);
                assert!(fd_ok(jac.d_th[k], fd), "th {k}: {} vs {}", jac.d_th[k], fd);
            }
            // Gyro bias block.
            for k in 0..3 {
                let f = |x: &Vector3<f64>| {
                    predict_doppler(&nav, &v, &(gyro - x), &calib, &dir)
                };
                assert!(fd_ok(jac.d_bg[k], vec_fd(&f, &bg, k)));
            }
            // Calibration blocks.
            for k in 0..6 {
                let f = |p: &Pose| predict_doppler(&nav, &v, &(gyro - bg), p, &dir);
                let fd = pose_fd(&f, &calib, k);
                let a = if k < 3 {
                    jac.d_calib_p[k]
                } else {
                    jac.d_calib_th[k - 3]
                };
                assert!(fd_ok(a, fd), "calib {k}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn doppler_point_dead_ahead_gives_minus_speed() {
        let jac = doppler(
            &Pose::identity(),
            &vector![1.0, 0.0, 0.0],
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Pose::identity(),
            &vector![1.0, 0.0, 0.0],
        );
        assert_relative_eq!(jac.predicted, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn landmark_distance_jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..150 {
            let nav = random_pose(&mut rng, 4.0);
            let calib = random_pose(&mut rng, 0.2);
            let lm: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-8.0..8.0));
            if world_to_radar(&nav, &calib, &lm).norm() < 0.5 {
                continue;
            }
            let jac = landmark_distance(&nav, &calib, &lm);
            for k in 0..6 {
                let f_nav = |p: &Pose| world_to_radar(p, &calib, &lm).norm();
                let fd = pose_fd(&f_nav, &nav, k);
                let a = if k < 3 {
                    jac.d_nav_p[k]
                } else {
                    jac.d_nav_th[k - 3]
                };
                assert!(fd_ok(a, fd), "nav {k}: {a} vs {fd}");

                let f_calib = |p: &Pose| world_to_radar(&nav, p, &lm).norm();
                let fd = pose_fd(&f_calib, &calib, k);
                let a = if k < 3 {
                    jac.d_calib_p[k]
                } else {
                    jac.d_calib_th[k - 3]
                };
                assert!(fd_ok(a, fd), "calib {k}: {a} vs {fd}");
            }
            for k in 0..3 {
                let f = |x: &Vector3<f64>| world_to_radar(&nav, &calib, x).norm();
                assert!(fd_ok(jac.d_lm[k], vec_fd(&f, &lm, k)));
            }
        }
    }

    #[test]
    fn landmark_distance_identity_case() {
        let jac = landmark_distance(&Pose::identity(), &Pose::identity(), &vector![3.0, 4.0, 0.0]);
        assert_relative_eq!(jac.predicted, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn landmark_init_jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(24);
        for _ in 0..150 {
            let nav = random_pose(&mut rng, 4.0);
            let calib = random_pose(&mut rng, 0.2);
            let p_r: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let init = landmark_init(&nav, &calib, &p_r);
            assert_relative_eq!(
                init.mean,
                radar_to_world(&nav, &calib, &p_r),
                epsilon = 1e-12
            );
            let h = 1e-6;
            // Rows of the mean under pose/calib/measurement perturbations.
            for k in 0..6 {
                let mut dp = Vector3::zeros();
                let mut dth = Vector3::zeros();
                if k < 3 {
                    dp[k] = h;
                } else {
                    dth[k - 3] = h;
                }
                let fd_nav = (radar_to_world(&nav.boxplus(&dp, &dth), &calib, &p_r)
                    - radar_to_world(&nav.boxplus(&(-dp), &(-dth)), &calib, &p_r))
                    / (2.0 * h);
                let fd_calib = (radar_to_world(&nav, &calib.boxplus(&dp, &dth), &p_r)
                    - radar_to_world(&nav, &calib.boxplus(&(-dp), &(-dth)), &p_r))
                    / (2.0 * h);
                for i in 0..3 {
                    let a_nav = if k < 3 {
                        init.h_nav_p[(i, k)]
                    } else {
                        init.h_nav_th[(i, k - 3)]
                    };
                    assert!(fd_ok(a_nav, fd_nav[i]), "nav ({i},{k})");
                    let a_calib = if k < 3 {
                        init.h_calib_p[(i, k)]
                    } else {
                        init.h_calib_th[(i, k - 3)]
                    };
                    assert!(fd_ok(a_calib, fd_calib[i]), "calib ({i},{k})");
                }
            }
            for k in 0..3 {
                let mut dz = Vector3::zeros();
                dz[k] = h;
                let fd = (radar_to_world(&nav, &calib, &(p_r + dz))
                    - radar_to_world(&nav, &calib, &(p_r - dz)))
                    / (2.0 * h);
                for i in 0..3 {
                    assert!(fd_ok(init.h_z[(i, k)], fd[i]));
                }
            }
        }
    }

    #[test]
    fn landmark_init_identity_maps_through() {
        let init = landmark_init(&Pose::identity(), &Pose::identity(), &vector![1.0, 0.0, 0.0]);
        assert_relative_eq!(init.mean, vector![1.0, 0.0, 0.0], epsilon = 1e-15);
    }

    /// The predicted trail distance only depends on relative geometry: a rigid
    /// transform applied to both body poses leaves it unchanged.
    #[test]
    fn trail_distance_is_gauge_invariant() {
        let mut rng = StdRng::seed_from_u64(25);
        for _ in 0..50 {
            let nav = random_pose(&mut rng, 4.0);
            let clone = random_pose(&mut rng, 4.0);
            let calib = random_pose(&mut rng, 0.2);
            let p_old: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-6.0..6.0));
            let g = random_pose(&mut rng, 10.0);
            let d0 = predict_trail_distance(&nav, &clone, &calib, &p_old);
            let d1 = predict_trail_distance(&g.compose(&nav), &g.compose(&clone), &calib, &p_old);
            assert_relative_eq!(d0, d1, epsilon = 1e-9, max_relative = 1e-9);
        }
    }
}

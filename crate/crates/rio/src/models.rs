//! Measurement models shared by the simulator, the matching front-end, and
//! both estimation back-ends.
//!
//! Keeping these in one place guarantees the back-ends predict identical
//! values from identical inputs, which the A/B comparison depends on.

use nalgebra::Vector3;

use crate::geom::Pose;

/// Radar pose in the world: `T_GR = T_GI ∘ T_IR`.
pub fn radar_pose(body_pose: &Pose, extrinsics: &Pose) -> Pose {
    body_pose.compose(extrinsics)
}

/// Transform mapping points from the radar frame at a past body pose into the
/// radar frame at the current body pose:
/// `T = (T_GI(t_c) T_IR)⁻¹ ∘ (T_GI(t_p) T_IR)`.
pub fn relative_radar_pose(past: &Pose, current: &Pose, extrinsics: &Pose) -> Pose {
    radar_pose(current, extrinsics)
        .inverse()
        .compose(&radar_pose(past, extrinsics))
}

/// Maps a world point into the radar frame at the given body pose:
/// `l' = R_IRᵀ (R_GIᵀ (l − p_GI) − p_IR)`.
pub fn world_to_radar(body_pose: &Pose, extrinsics: &Pose, p_world: &Vector3<f64>) -> Vector3<f64> {
    radar_pose(body_pose, extrinsics).inverse_transform(p_world)
}

/// Inverse observation: maps a radar-frame point into the world:
/// `l = R_GI (R_IR p + p_IR) + p_GI`.
pub fn radar_to_world(body_pose: &Pose, extrinsics: &Pose, p_radar: &Vector3<f64>) -> Vector3<f64> {
    radar_pose(body_pose, extrinsics).transform(p_radar)
}

/// Predicted Doppler (range-rate) of a static world point observed along the
/// radar-frame direction `dir` (need not be normalized):
/// `−r̂ᵀ (R_IRᵀ R_GIᵀ v_GI + R_IRᵀ (ω × p_IR))`.
///
/// `omega` is the bias-corrected body angular rate.
pub fn predict_doppler(
    body_pose: &Pose,
    velocity_world: &Vector3<f64>,
    omega: &Vector3<f64>,
    extrinsics: &Pose,
    dir: &Vector3<f64>,
) -> f64 {
    let r_hat = dir / dir.norm();
    let v_sensor = extrinsics
        .rot
        .inverse_rotate(&(body_pose.rot.inverse_rotate(velocity_world) + omega.cross(&extrinsics.trans)));
    -r_hat.dot(&v_sensor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rotation;
    use approx::assert_relative_eq;

    #[test]
    fn world_radar_round_trip() {
        let body = Pose::new(Rotation::rot_z(0.7), Vector3::new(1.0, -2.0, 0.5));
        let ext = Pose::new(Rotation::rot_y(0.8), Vector3::new(0.075, -0.01, -0.04));
        let p = Vector3::new(3.0, 1.0, -0.2);
        let lr = world_to_radar(&body, &ext, &p);
        assert_relative_eq!(radar_to_world(&body, &ext, &lr), p, epsilon = 1e-12);
    }

    #[test]
    fn relative_pose_identity_when_static() {
        let body = Pose::new(Rotation::rot_x(0.3), Vector3::new(0.4, 0.1, 2.0));
        let ext = Pose::new(Rotation::rot_y(0.78), Vector3::new(0.07, 0.0, -0.05));
        let rel = relative_radar_pose(&body, &body, &ext);
        assert!(rel.trans.norm() < 1e-12);
        assert!(rel.rot.angle_to(&Rotation::identity()) < 1e-12);
    }

    #[test]
    fn relative_pose_maps_old_points_onto_new_frame() {
        // A static world point observed from two body poses must land on the
        // same spot after re-mapping the old observation.
        let ext = Pose::new(Rotation::rot_y(0.6), Vector3::new(0.075, -0.01, -0.04));
        let pose_p = Pose::new(Rotation::rot_z(0.2), Vector3::new(0.0, 0.0, 1.0));
        let pose_c = Pose::new(Rotation::rot_z(-0.4), Vector3::new(0.5, 0.3, 1.1));
        let world = Vector3::new(2.0, -1.0, 0.0);
        let obs_p = world_to_radar(&pose_p, &ext, &world);
        let obs_c = world_to_radar(&pose_c, &ext, &world);
        let mapped = relative_radar_pose(&pose_p, &pose_c, &ext).transform(&obs_p);
        assert_relative_eq!(mapped, obs_c, epsilon = 1e-12);
    }

    #[test]
    fn doppler_of_approached_point_is_negative() {
        // Body moving along +x toward a point ahead: range shrinks, so the
        // range-rate reading must be negative.
        let body = Pose::identity();
        let ext = Pose::identity();
        let v = Vector3::new(1.5, 0.0, 0.0);
        let d = predict_doppler(&body, &v, &Vector3::zeros(), &ext, &Vector3::new(4.0, 0.0, 0.0));
        assert_relative_eq!(d, -1.5, epsilon = 1e-12);
        // Pure rotation with a lever arm also produces Doppler.
        let ext2 = Pose::new(Rotation::identity(), Vector3::new(0.1, 0.0, 0.0));
        let om = Vector3::new(0.0, 0.0, 2.0);
        let d2 = predict_doppler(&body, &Vector3::zeros(), &om, &ext2, &Vector3::new(0.0, 1.0, 0.0));
        // ω × p_IR = [0, 0.2, 0]; along +y: receding at 0.2 → doppler −0.2.
        assert_relative_eq!(d2, -0.2, epsilon = 1e-12);
    }
}

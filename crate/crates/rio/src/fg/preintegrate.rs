//! IMU preintegration between consecutive radar scans.
//!
//! The samples of a segment are compressed into relative motion deltas
//! (ΔR, Δv, Δp) that are independent of the absolute start state, together
//! with first-order bias-correction Jacobians and a 9×9 covariance of the
//! stacked [θ, v, p] delta error. Integration mirrors the filter backend's
//! midpoint scheme — consecutive samples are pair-averaged and the
//! specific-force term is rotated by the half-step attitude — so both
//! backends traverse identical nominal trajectories on identical data.
//!
//! The between-state residual compares the deltas (bias-corrected to first
//! order around the reference biases b̄) against the relative motion implied
//! by the two connected states:
//!
//! `r_R = Log(ΔR̃ᵀ R_iᵀ R_j)`
//! `r_v = R_iᵀ(v_j − v_i − g Δt) − Δṽ`
//! `r_p = R_iᵀ(p_j − p_i − v_i Δt − ½ g Δt²) − Δp̃`
//!
//! plus bias random-walk residuals `b_j − b_i` whitened by `σ_b √Δt`.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};

use crate::ekf::{NavState, ProcessNoise};
use crate::geom::{gravity_vec, skew, so3_right_jacobian, so3_right_jacobian_inv, Rotation};
use crate::types::ImuSample;

use super::factor::{Factor, FactorLin};
use super::variables::{Values, VarKey, VarValue};
use super::FgError;

type Matrix9 = SMatrix<f64, 9, 9>;

/// Preintegrated IMU deltas over one segment.
#[derive(Clone, Debug)]
pub struct Preintegration {
    /// Segment length [s].
    pub dt: f64,
    /// Rotation delta: `R_iᵀ R_j` for a noise- and bias-free segment.
    pub delta_r: Rotation,
    /// Velocity delta in the start body frame.
    pub delta_v: Vector3<f64>,
    /// Position delta in the start body frame.
    pub delta_p: Vector3<f64>,
    /// Accelerometer bias the segment was integrated at.
    pub ba_bar: Vector3<f64>,
    /// Gyroscope bias the segment was integrated at.
    pub bg_bar: Vector3<f64>,
    /// ∂ΔR/∂b_g (rotation-vector sense, right perturbation).
    pub j_r_bg: Matrix3<f64>,
    /// ∂Δv/∂b_a.
    pub j_v_ba: Matrix3<f64>,
    /// ∂Δv/∂b_g.
    pub j_v_bg: Matrix3<f64>,
    /// ∂Δp/∂b_a.
    pub j_p_ba: Matrix3<f64>,
    /// ∂Δp/∂b_g.
    pub j_p_bg: Matrix3<f64>,
    /// Covariance of the stacked [θ, v, p] delta error.
    pub cov: Matrix9,
}

impl Preintegration {
    /// Bias-corrected deltas at the biases of `nav` (first order around b̄).
    fn corrected(&self, nav: &NavState) -> (Rotation, Vector3<f64>, Vector3<f64>) {
        let dba = nav.ba - self.ba_bar;
        let dbg = nav.bg - self.bg_bar;
        let dr = self.delta_r.compose(&Rotation::exp(&(self.j_r_bg * dbg)));
        let dv = self.delta_v + self.j_v_ba * dba + self.j_v_bg * dbg;
        let dp = self.delta_p + self.j_p_ba * dba + self.j_p_bg * dbg;
        (dr, dv, dp)
    }

    /// Propagates a start state through the segment (biases carried over).
    pub fn predict(&self, nav_i: &NavState) -> NavState {
        let (dr, dv, dp) = self.corrected(nav_i);
        let g = gravity_vec();
        let r_i = nav_i.q.matrix();
        NavState {
            p: nav_i.p + nav_i.v * self.dt + 0.5 * g * self.dt * self.dt + r_i * dp,
            q: nav_i.q.compose(&dr),
            v: nav_i.v + g * self.dt + r_i * dv,
            ba: nav_i.ba,
            bg: nav_i.bg,
        }
    }
}

/// Integrates an IMU segment at the reference biases. The segment must hold
/// at least two samples with strictly increasing timestamps.
pub fn preintegrate(
    samples: &[ImuSample],
    ba_bar: Vector3<f64>,
    bg_bar: Vector3<f64>,
    noise: &ProcessNoise,
) -> Result<Preintegration, FgError> {
    if samples.len() < 2 {
        return Err(FgError::EmptySegment);
    }
    for s in samples {
        let finite = s.t.is_finite()
            && s.accel.iter().all(|x| x.is_finite())
            && s.gyro.iter().all(|x| x.is_finite());
        if !finite {
            return Err(FgError::NonFiniteImu);
        }
    }

    let mut out = Preintegration {
        dt: 0.0,
        delta_r: Rotation::identity(),
        delta_v: Vector3::zeros(),
        delta_p: Vector3::zeros(),
        ba_bar,
        bg_bar,
        j_r_bg: Matrix3::zeros(),
        j_v_ba: Matrix3::zeros(),
        j_v_bg: Matrix3::zeros(),
        j_p_ba: Matrix3::zeros(),
        j_p_bg: Matrix3::zeros(),
        cov: Matrix9::zeros(),
    };

    for pair in samples.windows(2) {
        let dt = pair[1].t - pair[0].t;
        if dt <= 0.0 {
            return Err(FgError::NonPositiveDt(dt));
        }
        let omega = 0.5 * (pair[0].gyro + pair[1].gyro) - bg_bar;
        let acc = 0.5 * (pair[0].accel + pair[1].accel) - ba_bar;
        let step = Rotation::exp(&(omega * dt));
        // Half-step attitude used for the specific-force terms.
        let half = Rotation::exp(&(omega * (0.5 * dt)));
        let mid_r = out.delta_r.compose(&half).matrix();
        let e_half_t = half.matrix().transpose();
        let jr_step = so3_right_jacobian(&(omega * dt));
        let jr_half = so3_right_jacobian(&(omega * (0.5 * dt)));
        let acc_skew = skew(&acc);
        // Sensitivity of the midpoint-rotated specific force to the carried
        // attitude error (the half step conjugates it into the mid frame)...
        let mid_acc_skew = mid_r * acc_skew * e_half_t;
        // ...and to the gyro bias, which enters both through the accumulated
        // rotation Jacobian and through the half step itself.
        let dvdbg = mid_r * acc_skew * (e_half_t * out.j_r_bg - jr_half * (0.5 * dt));

        // Nominal deltas (Δp before Δv: its update uses the pre-step Δv).
        out.delta_p += out.delta_v * dt + 0.5 * (mid_r * acc) * dt * dt;
        out.delta_v += (mid_r * acc) * dt;

        // Bias Jacobians; right-hand sides are pre-step values throughout,
        // so the position rows update first and the rotation row last.
        out.j_p_ba += out.j_v_ba * dt - 0.5 * mid_r * dt * dt;
        out.j_p_bg += out.j_v_bg * dt - 0.5 * dvdbg * dt * dt;
        out.j_v_ba -= mid_r * dt;
        out.j_v_bg -= dvdbg * dt;
        out.j_r_bg = step.matrix().transpose() * out.j_r_bg - jr_step * dt;

        // Discrete error propagation for the stacked [θ, v, p] error.
        let mut a = Matrix9::identity();
        a.view_mut((0, 0), (3, 3))
            .copy_from(&step.matrix().transpose());
        a.view_mut((3, 0), (3, 3)).copy_from(&(-mid_acc_skew * dt));
        a.view_mut((6, 0), (3, 3))
            .copy_from(&(-mid_acc_skew * (0.5 * dt * dt)));
        a.view_mut((6, 3), (3, 3))
            .copy_from(&(Matrix3::identity() * dt));
        let mut b = SMatrix::<f64, 9, 6>::zeros();
        b.view_mut((0, 0), (3, 3)).copy_from(&jr_step);
        b.view_mut((3, 3), (3, 3)).copy_from(&mid_r);
        b.view_mut((6, 3), (3, 3)).copy_from(&(mid_r * (0.5 * dt)));
        let mut q = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..3 {
            q[(i, i)] = noise.sigma_g * noise.sigma_g * dt;
            q[(i + 3, i + 3)] = noise.sigma_a * noise.sigma_a * dt;
        }
        out.cov = a * out.cov * a.transpose() + b * q * b.transpose();

        out.delta_r = out.delta_r.compose(&step);
        out.dt += dt;
    }
    Ok(out)
}

/// Between-state factor built from one preintegrated segment.
///
/// The 15-dim residual stacks [r_R, r_v, r_p, r_ba, r_bg]; the motion rows
/// are whitened by the inverse Cholesky factor of the preintegration
/// covariance and the bias rows by the random-walk growth over the segment.
#[derive(Clone, Debug)]
pub struct PreintFactor {
    keys: [VarKey; 2],
    pub preint: Preintegration,
    /// L⁻¹ with cov = LLᵀ; whitens the [θ, v, p] rows.
    sqrt_info: Matrix9,
    sigma_ba_step: f64,
    sigma_bg_step: f64,
}

impl PreintFactor {
    pub fn new(
        i: u64,
        j: u64,
        preint: Preintegration,
        noise: &ProcessNoise,
    ) -> Result<PreintFactor, FgError> {
        assert!(i < j, "between-factor states out of order");
        assert!(
            noise.sigma_ba > 0.0 && noise.sigma_bg > 0.0,
            "bias random-walk densities must be positive"
        );
        let mut chol = preint.cov.cholesky();
        let mut jitter = 1e-15;
        while chol.is_none() && jitter <= 1e-9 {
            let mut damped = preint.cov;
            for d in 0..9 {
                damped[(d, d)] += jitter;
            }
            chol = damped.cholesky();
            jitter *= 10.0;
        }
        let chol = chol.ok_or(FgError::BadPreintCovariance)?;
        let sqrt_info = chol
            .l()
            .solve_lower_triangular(&Matrix9::identity())
            .ok_or(FgError::BadPreintCovariance)?;
        let sigma_ba_step = noise.sigma_ba * preint.dt.sqrt();
        let sigma_bg_step = noise.sigma_bg * preint.dt.sqrt();
        Ok(PreintFactor {
            keys: [VarKey::State(i), VarKey::State(j)],
            preint,
            sqrt_info,
            sigma_ba_step,
            sigma_bg_step,
        })
    }

    pub fn state_i(&self) -> u64 {
        match self.keys[0] {
            VarKey::State(i) => i,
            VarKey::Landmark(_) => unreachable!(),
        }
    }

    pub fn state_j(&self) -> u64 {
        match self.keys[1] {
            VarKey::State(j) => j,
            VarKey::Landmark(_) => unreachable!(),
        }
    }

    /// Unwhitened 15-dim residual.
    pub fn residual_raw(&self, nav_i: &NavState, nav_j: &NavState) -> DVector<f64> {
        let (dr, dv, dp) = self.preint.corrected(nav_i);
        let g = gravity_vec();
        let dt = self.preint.dt;
        let r_it = nav_i.q.matrix().transpose();
        let r_rot = dr
            .inverse()
            .compose(&nav_i.q.inverse())
            .compose(&nav_j.q)
            .log();
        let r_v = r_it * (nav_j.v - nav_i.v - g * dt) - dv;
        let r_p = r_it * (nav_j.p - nav_i.p - nav_i.v * dt - 0.5 * g * dt * dt) - dp;
        let r_ba = nav_j.ba - nav_i.ba;
        let r_bg = nav_j.bg - nav_i.bg;
        let mut r = DVector::zeros(15);
        r.fixed_rows_mut::<3>(0).copy_from(&r_rot);
        r.fixed_rows_mut::<3>(3).copy_from(&r_v);
        r.fixed_rows_mut::<3>(6).copy_from(&r_p);
        r.fixed_rows_mut::<3>(9).copy_from(&r_ba);
        r.fixed_rows_mut::<3>(12).copy_from(&r_bg);
        r
    }

    /// Whitened residual plus Jacobians w.r.t. both states' error vectors
    /// ([p, θ, v, ba, bg] blocks of 3).
    fn linearize_nav(
        &self,
        nav_i: &NavState,
        nav_j: &NavState,
    ) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut r = self.residual_raw(nav_i, nav_j);
        let r_rot = Vector3::new(r[0], r[1], r[2]);

        let g = gravity_vec();
        let dt = self.preint.dt;
        let r_it = nav_i.q.matrix().transpose();
        let w_v = r_it * (nav_j.v - nav_i.v - g * dt);
        let w_p = r_it * (nav_j.p - nav_i.p - nav_i.v * dt - 0.5 * g * dt * dt);
        let rel = nav_i.q.inverse().compose(&nav_j.q).matrix();
        let jr_inv = so3_right_jacobian_inv(&r_rot);
        let dbg = nav_i.bg - self.preint.bg_bar;
        let xi = self.preint.j_r_bg * dbg;

        let mut ji = DMatrix::zeros(15, 15);
        let mut jj = DMatrix::zeros(15, 15);
        let eye = Matrix3::identity();

        // Rotation rows.
        ji.view_mut((0, 3), (3, 3))
            .copy_from(&(-jr_inv * rel.transpose()));
        ji.view_mut((0, 12), (3, 3)).copy_from(
            &(-jr_inv
                * Rotation::exp(&(-r_rot)).matrix()
                * so3_right_jacobian(&xi)
                * self.preint.j_r_bg),
        );
        jj.view_mut((0, 3), (3, 3)).copy_from(&jr_inv);
        // Velocity rows.
        ji.view_mut((3, 3), (3, 3)).copy_from(&skew(&w_v));
        ji.view_mut((3, 6), (3, 3)).copy_from(&(-r_it));
        ji.view_mut((3, 9), (3, 3)).copy_from(&(-self.preint.j_v_ba));
        ji.view_mut((3, 12), (3, 3))
            .copy_from(&(-self.preint.j_v_bg));
        jj.view_mut((3, 6), (3, 3)).copy_from(&r_it);
        // Position rows.
        ji.view_mut((6, 0), (3, 3)).copy_from(&(-r_it));
        ji.view_mut((6, 3), (3, 3)).copy_from(&skew(&w_p));
        ji.view_mut((6, 6), (3, 3)).copy_from(&(-r_it * dt));
        ji.view_mut((6, 9), (3, 3)).copy_from(&(-self.preint.j_p_ba));
        ji.view_mut((6, 12), (3, 3))
            .copy_from(&(-self.preint.j_p_bg));
        jj.view_mut((6, 0), (3, 3)).copy_from(&r_it);
        // Bias random-walk rows.
        ji.view_mut((9, 9), (3, 3)).copy_from(&(-eye));
        ji.view_mut((12, 12), (3, 3)).copy_from(&(-eye));
        jj.view_mut((9, 9), (3, 3)).copy_from(&eye);
        jj.view_mut((12, 12), (3, 3)).copy_from(&eye);

        // Whiten: motion rows by the square-root information, bias rows by
        // the random-walk growth.
        let white_rvp = self.sqrt_info * r.fixed_rows::<9>(0).into_owned();
        r.fixed_rows_mut::<9>(0).copy_from(&white_rvp);
        for m in [&mut ji, &mut jj] {
            let top = self.sqrt_info * m.view((0, 0), (9, 15)).into_owned();
            m.view_mut((0, 0), (9, 15)).copy_from(&top);
        }
        for row in 9..12 {
            r[row] /= self.sigma_ba_step;
            for c in 0..15 {
                ji[(row, c)] /= self.sigma_ba_step;
                jj[(row, c)] /= self.sigma_ba_step;
            }
        }
        for row in 12..15 {
            r[row] /= self.sigma_bg_step;
            for c in 0..15 {
                ji[(row, c)] /= self.sigma_bg_step;
                jj[(row, c)] /= self.sigma_bg_step;
            }
        }
        (r, ji, jj)
    }

    fn navs<'a>(&self, values: &'a Values) -> Result<(&'a NavState, &'a NavState), FgError> {
        let get = |key: &VarKey| -> Result<&'a NavState, FgError> {
            match values.get(key) {
                Some(VarValue::Nav(nav)) => Ok(nav),
                Some(_) => panic!("between factor bound to a non-state variable"),
                None => Err(FgError::UnknownVariable(*key)),
            }
        };
        Ok((get(&self.keys[0])?, get(&self.keys[1])?))
    }
}

impl Factor for PreintFactor {
    fn keys(&self) -> &[VarKey] {
        &self.keys
    }

    fn linearize(&self, values: &Values) -> Result<FactorLin, FgError> {
        let (nav_i, nav_j) = self.navs(values)?;
        let (residual, ji, jj) = self.linearize_nav(nav_i, nav_j);
        Ok(FactorLin {
            residual,
            blocks: vec![ji, jj],
        })
    }

    fn cost(&self, values: &Values) -> Result<f64, FgError> {
        let (nav_i, nav_j) = self.navs(values)?;
        let (residual, _, _) = self.linearize_nav(nav_i, nav_j);
        Ok(0.5 * residual.norm_squared())
    }
}

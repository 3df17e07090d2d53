use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Standard gravity in a z-up world, m/s².
pub fn gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -9.81)
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn so3_exp(phi: &Vec3) -> Rotation3<f64> {
    Rotation3::from_scaled_axis(*phi)
}

/// Uses the quaternion half-angle `atan2`, which stays accurate for tiny
/// angles where `acos` of the trace does not.
pub fn so3_log(r: &Rotation3<f64>) -> Vec3 {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let n = v.norm();
    if n < 1e-12 {
        return v * (2.0 / w);
    }
    v * (2.0 * n.atan2(w) / n)
}

/// Inverse right Jacobian of SO(3).
pub fn right_jacobian_inv(phi: &Vec3) -> Matrix3<f64> {
    let th = phi.norm();
    let k = skew(phi);
    if th < 1e-8 {
        return Matrix3::identity() + 0.5 * k + k * k / 12.0;
    }
    let c = 1.0 / (th * th) - (1.0 + th.cos()) / (2.0 * th * th.sin());
    Matrix3::identity() + 0.5 * k + c * k * k
}

/// Projects a nearly orthonormal matrix back onto SO(3) through its
/// closed-form quaternion, so the result is orthonormal to rounding.
pub fn reorthonormalize(r: &Rotation3<f64>) -> Rotation3<f64> {
    UnitQuaternion::from_rotation_matrix(r).to_rotation_matrix()
}

/// Pose, velocity and IMU biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub rotation: Rotation3<f64>,
    pub position: Vec3,
    pub velocity: Vec3,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    pub timestamp: f64,
}

impl NavState {
    pub fn at_rest(position: Vec3, timestamp: f64) -> Self {
        NavState {
            rotation: Rotation3::identity(),
            position,
            velocity: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
            accel_bias: Vec3::zeros(),
            timestamp,
        }
    }

    /// `x ⊞ δ` with `δ = [δθ, δp, δv, δb_g, δb_a]`; rotation is perturbed on
    /// the right.
    pub fn boxplus(&self, d: &nalgebra::SVector<f64, 15>) -> NavState {
        let v = |i: usize| Vec3::new(d[i], d[i + 1], d[i + 2]);
        NavState {
            rotation: reorthonormalize(&(self.rotation * so3_exp(&v(0)))),
            position: self.position + v(3),
            velocity: self.velocity + v(6),
            gyro_bias: self.gyro_bias + v(9),
            accel_bias: self.accel_bias + v(12),
            timestamp: self.timestamp,
        }
    }

    /// `self ⊟ other`, the inverse of [`NavState::boxplus`].
    pub fn boxminus(&self, other: &NavState) -> nalgebra::SVector<f64, 15> {
        let mut d = nalgebra::SVector::<f64, 15>::zeros();
        let parts = [
            so3_log(&(other.rotation.inverse() * self.rotation)),
            self.position - other.position,
            self.velocity - other.velocity,
            self.gyro_bias - other.gyro_bias,
            self.accel_bias - other.accel_bias,
        ];
        for (k, p) in parts.iter().enumerate() {
            d.fixed_rows_mut::<3>(3 * k).copy_from(p);
        }
        d
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.matrix().iter().all(|x| x.is_finite())
            && [self.position, self.velocity, self.gyro_bias, self.accel_bias]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// ω_m, rad/s.
    pub gyro: Vec3,
    /// Specific force a_m, m/s².
    pub accel: Vec3,
    pub timestamp: f64,
}

/// Largest accepted integration step, s.
pub const MAX_IMU_STEP: f64 = 0.1;

/// One integration step with the sample held constant over `dt`:
/// `R ← R·Exp((ω − b_g)dt)`, `a = R(a_m − b_a) + g`, `v ← v + a·dt`,
/// `p ← p + v·dt + ½a·dt²`, using the rotation and velocity at the start of
/// the step.
pub fn imu_propagate(state: &NavState, imu: &ImuSample, dt: f64, g: &Vec3) -> Result<NavState> {
    if !(dt > 0.0 && dt <= MAX_IMU_STEP) {
        return Err(Error::Domain(format!(
            "IMU step {dt} s outside (0, {MAX_IMU_STEP}]"
        )));
    }
    if !(imu.gyro.iter().chain(imu.accel.iter()).all(|x| x.is_finite()) && state.is_finite()) {
        return Err(Error::Numerical("non-finite IMU propagation input".into()));
    }
    let acc = state.rotation * (imu.accel - state.accel_bias) + g;
    let rot = state.rotation * so3_exp(&((imu.gyro - state.gyro_bias) * dt));
    Ok(NavState {
        rotation: reorthonormalize(&rot),
        position: state.position + state.velocity * dt + 0.5 * acc * dt * dt,
        velocity: state.velocity + acc * dt,
        gyro_bias: state.gyro_bias,
        accel_bias: state.accel_bias,
        timestamp: state.timestamp + dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn stationary_is_equilibrium() {
        let mut s = NavState::at_rest(Vec3::new(1.0, 2.0, 3.0), 0.0);
        s.rotation = Rotation3::from_euler_angles(0.1, -0.2, 0.7);
        s.gyro_bias = Vec3::new(0.01, 0.0, -0.02);
        s.accel_bias = Vec3::new(0.1, 0.05, 0.0);
        let imu = ImuSample {
            gyro: s.gyro_bias,
            accel: s.rotation.inverse() * -gravity() + s.accel_bias,
            timestamp: 0.0,
        };
        let n = imu_propagate(&s, &imu, 0.01, &gravity()).unwrap();
        assert!((n.position - s.position).norm() < 1e-12);
        assert!(n.velocity.norm() < 1e-12);
        assert!((n.rotation.matrix() - s.rotation.matrix()).norm() < 1e-12);
        assert_eq!(n.timestamp, 0.01);
    }

    #[test]
    fn constant_acceleration() {
        let mut s = NavState::at_rest(Vec3::zeros(), 0.0);
        let imu = ImuSample {
            gyro: Vec3::zeros(),
            accel: Vec3::new(2.0, 0.0, 9.81),
            timestamp: 0.0,
        };
        for _ in 0..1000 {
            s = imu_propagate(&s, &imu, 1e-3, &gravity()).unwrap();
        }
        assert!((s.position.x - 1.0).abs() < 1e-4);
    }

    #[test]
    fn quarter_turn_matches_rodrigues() {
        let mut s = NavState::at_rest(Vec3::zeros(), 0.0);
        s.velocity = Vec3::new(3.0, 0.0, 0.0);
        let w = FRAC_PI_2 / 2.0;
        let n = 1000;
        let dt = 2.0 / n as f64;
        for _ in 0..n {
            // Specific force cancels gravity only; body-frame velocity turns.
            let imu = ImuSample {
                gyro: Vec3::new(0.0, 0.0, w),
                accel: s.rotation.inverse() * -gravity(),
                timestamp: s.timestamp,
            };
            s = imu_propagate(&s, &imu, dt, &gravity()).unwrap();
        }
        let want = Rotation3::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
        assert!((s.rotation.matrix() - want.matrix()).norm() < 1e-6);
        assert!((s.velocity.norm() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn step_bounds() {
        let s = NavState::at_rest(Vec3::zeros(), 0.0);
        let imu = ImuSample { gyro: Vec3::zeros(), accel: Vec3::zeros(), timestamp: 0.0 };
        assert!(imu_propagate(&s, &imu, 0.0, &gravity()).is_err());
        assert!(imu_propagate(&s, &imu, 0.2, &gravity()).is_err());
        let bad = ImuSample { gyro: Vec3::new(f64::NAN, 0.0, 0.0), ..imu };
        assert!(matches!(imu_propagate(&s, &bad, 0.01, &gravity()), Err(Error::Numerical(_))));
    }

    #[test]
    fn boxplus_boxminus_inverse() {
        let mut s = NavState::at_rest(Vec3::new(1.0, 0.0, 0.0), 0.0);
        s.rotation = Rotation3::from_euler_angles(0.3, 0.2, -1.0);
        let d = nalgebra::SVector::<f64, 15>::from_fn(|i, _| 0.01 * (i as f64 - 7.0));
        let back = s.boxplus(&d).boxminus(&s);
        assert!((back - d).norm() < 1e-12);
    }
}

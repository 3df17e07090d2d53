use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::plane::Plane;
use super::state::{right_jacobian_inv, skew, NavState};
use crate::error::{Error, Result};
use crate::geom::Vec3;

pub type Mat15 = SMatrix<f64, 15, 15>;
pub type Vec15 = SVector<f64, 15>;

/// A body-frame scan point associated with a world-frame map plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarMatch {
    pub point: Vec3,
    pub plane: Plane,
    /// Residual variance, m².
    pub variance: f64,
}

/// Residuals of one update: the IMU prior and the point-to-plane matches.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub prior: NavState,
    pub prior_cov: Mat15,
    pub lidar: Vec<LidarMatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateOptions {
    pub max_iterations: usize,
    /// Converged once the step norm or the relative cost decrease drops
    /// below this.
    pub tolerance: f64,
    pub initial_damping: f64,
    pub max_damping: f64,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        UpdateOptions {
            max_iterations: 20,
            tolerance: 1e-10,
            initial_damping: 1e-6,
            max_damping: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateResult {
    pub state: NavState,
    /// Cost at the start and after every accepted step.
    pub costs: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Damping hit its ceiling before convergence.
    pub failed: bool,
    /// Inverse Gauss-Newton Hessian at the returned state.
    pub covariance: Mat15,
}

/// `n · (R q + p) + d`.
pub fn lidar_residual(x: &NavState, m: &LidarMatch) -> f64 {
    m.plane.distance(&(x.rotation * m.point + x.position))
}

/// Row Jacobian of [`lidar_residual`] with respect to the error state.
pub fn lidar_jacobian(x: &NavState, m: &LidarMatch) -> Vec15 {
    let n = m.plane.normal;
    let dth = -(n.transpose() * x.rotation.matrix() * skew(&m.point));
    let mut j = Vec15::zeros();
    for k in 0..3 {
        j[k] = dth[k];
        j[3 + k] = n[k];
    }
    j
}

/// `x ⊟ prior`.
pub fn prior_residual(x: &NavState, prior: &NavState) -> Vec15 {
    x.boxminus(prior)
}

pub fn prior_jacobian(x: &NavState, prior: &NavState) -> Mat15 {
    let r = prior_residual(x, prior);
    let mut j = Mat15::identity();
    let th = Vec3::new(r[0], r[1], r[2]);
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&right_jacobian_inv(&th));
    j
}

fn information(cov: &Mat15) -> Result<Mat15> {
    cov.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical("prior covariance is not positive definite".into()))
}

/// `‖r_I‖²_{P⁻¹} + Σ r_L² / σ²`.
pub fn total_cost(x: &NavState, set: &ResidualSet, info: &Mat15) -> f64 {
    let r = prior_residual(x, &set.prior);
    let mut c = (r.transpose() * info * r)[0];
    for m in &set.lidar {
        c += lidar_residual(x, m).powi(2) / m.variance;
    }
    c
}

fn normal_equations(x: &NavState, set: &ResidualSet, info: &Mat15) -> (Mat15, Vec15) {
    let r = prior_residual(x, &set.prior);
    let j = prior_jacobian(x, &set.prior);
    let mut h = j.transpose() * info * j;
    let mut g = j.transpose() * info * r;
    for m in &set.lidar {
        let jl = lidar_jacobian(x, m);
        let w = 1.0 / m.variance;
        h += jl * jl.transpose() * w;
        g += jl * (lidar_residual(x, m) * w);
    }
    (h, g)
}

/// Damped Gauss-Newton on the joint prior + point-to-plane cost, starting
/// from `start`. Steps that raise the cost are rejected and the damping
/// raised, so the accepted cost sequence never increases.
pub fn update_state(start: &NavState, set: &ResidualSet, opts: &UpdateOptions) -> Result<UpdateResult> {
    if set.lidar.is_empty() {
        return Ok(UpdateResult {
            state: set.prior.clone(),
            costs: vec![0.0],
            iterations: 0,
            converged: true,
            failed: false,
            covariance: set.prior_cov,
        });
    }
    let info = information(&set.prior_cov)?;
    let mut x = start.clone();
    let mut cost = total_cost(&x, set, &info);
    let mut costs = vec![cost];
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut failed = false;
    let mut iterations = 0;
    'outer: for it in 1..=opts.max_iterations {
        iterations = it;
        let (h, g) = normal_equations(&x, set, &info);
        loop {
            let mut a = h;
            for k in 0..15 {
                a[(k, k)] += lambda * h[(k, k)].max(1e-12);
            }
            let step = a.cholesky().map(|c| c.solve(&(-g)));
            let Some(d) = step else {
                lambda *= 10.0;
                if lambda > opts.max_damping {
                    failed = true;
                    break 'outer;
                }
                continue;
            };
            let cand = x.boxplus(&d);
            let c_new = total_cost(&cand, set, &info);
            if c_new <= cost {
                let decrease = cost - c_new;
                x = cand;
                cost = c_new;
                costs.push(cost);
                lambda = (lambda * 0.1).max(1e-12);
                if d.norm() < opts.tolerance || decrease <= opts.tolerance * cost.max(f64::MIN_POSITIVE) {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > opts.max_damping {
                // No descent direction left at this point.
                converged = g.norm() <= 1e-6 * (1.0 + cost);
                failed = !converged;
                break 'outer;
            }
        }
    }
    let (h, _) = normal_equations(&x, set, &info);
    let covariance = h
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical("posterior information is singular".into()))?;
    Ok(UpdateResult {
        state: x,
        costs,
        iterations,
        converged,
        failed,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn plane(n: Vec3, d: f64) -> Plane {
        Plane { normal: n.normalize(), offset: d, rms: 0.0 }
    }

    fn state() -> NavState {
        let mut s = NavState::at_rest(Vec3::new(0.3, -0.2, 1.1), 0.0);
        s.rotation = Rotation3::from_euler_angles(0.2, -0.1, 0.8);
        s.velocity = Vec3::new(1.0, 0.5, 0.0);
        s.gyro_bias = Vec3::new(0.01, -0.02, 0.0);
        s.accel_bias = Vec3::new(0.0, 0.1, -0.05);
        s
    }

    #[test]
    fn lidar_jacobian_matches_central_differences() {
        let x = state();
        let m = LidarMatch {
            point: Vec3::new(2.0, -1.0, 0.5),
            plane: plane(Vec3::new(0.3, 0.9, 0.2), -1.5),
            variance: 1e-4,
        };
        let ja = lidar_jacobian(&x, &m);
        let h = 1e-6;
        for k in 0..15 {
            let mut d = Vec15::zeros();
            d[k] = h;
            let fd = (lidar_residual(&x.boxplus(&d), &m) - lidar_residual(&x.boxplus(&-d), &m)) / (2.0 * h);
            assert!((fd - ja[k]).abs() <= 1e-5 * ja.amax().max(1e-12), "column {k}");
        }
    }

    #[test]
    fn prior_jacobian_matches_central_differences() {
        let x = state();
        let mut prior = state();
        prior.rotation = Rotation3::from_euler_angles(0.5, 0.1, 0.2);
        prior.position += Vec3::new(0.1, 0.0, -0.3);
        let ja = prior_jacobian(&x, &prior);
        let h = 1e-6;
        for k in 0..15 {
            let mut d = Vec15::zeros();
            d[k] = h;
            let fd = (prior_residual(&x.boxplus(&d), &prior) - prior_residual(&x.boxplus(&-d), &prior)) / (2.0 * h);
            let col = ja.column(k);
            assert!((fd - col).amax() <= 1e-5 * ja.amax(), "column {k}");
        }
    }

    #[test]
    fn prior_only_returns_prior() {
        let set = ResidualSet { prior: state(), prior_cov: Mat15::identity(), lidar: vec![] };
        let r = update_state(&state(), &set, &UpdateOptions::default()).unwrap();
        assert_eq!(r.state, state());
    }

    #[test]
    fn zero_residuals_leave_state() {
        let x = state();
        let planes = [Vec3::x(), Vec3::y(), Vec3::z()];
        let lidar: Vec<LidarMatch> = planes
            .iter()
            .map(|n| {
                let q = Vec3::new(1.0, 2.0, 3.0);
                let w = x.rotation * q + x.position;
                LidarMatch { point: q, plane: plane(*n, -n.dot(&w)), variance: 1e-4 }
            })
            .collect();
        let set = ResidualSet { prior: x.clone(), prior_cov: Mat15::identity() * 1e-2, lidar };
        let r = update_state(&x, &set, &UpdateOptions::default()).unwrap();
        assert!(r.state.boxminus(&x).norm() < 1e-12);
    }
}

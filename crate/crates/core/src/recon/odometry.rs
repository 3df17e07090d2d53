use std::io::Write;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::index::SpatialIndex;
use super::plane::{point_to_plane_residual, PlaneParams};
use super::state::{imu_propagate, so3_exp, ImuSample, NavState, MAX_IMU_STEP};
use super::update::{lidar_jacobian, update_state, LidarMatch, Mat15, ResidualSet, UpdateOptions};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::lidar::PointCloud;

/// One LiDAR scan in the body frame, taken at a single instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub timestamp: f64,
    pub points: Vec<Vec3>,
}

/// Continuous-time noise densities of the IMU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuNoise {
    /// rad/s/√Hz
    pub gyro_density: f64,
    /// m/s²/√Hz
    pub accel_density: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
}

impl ImuNoise {
    pub fn ideal() -> Self {
        ImuNoise {
            gyro_density: 0.0,
            accel_density: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
        }
    }
}

impl Default for ImuNoise {
    fn default() -> Self {
        ImuNoise {
            gyro_density: 0.01,
            accel_density: 0.1,
            gyro_bias_walk: 1e-4,
            accel_bias_walk: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdometryConfig {
    pub plane: PlaneParams,
    /// LiDAR range σ; the residual variance is σ² plus the plane RMS².
    pub lidar_sigma: f64,
    pub update: UpdateOptions,
    /// Re-association passes per scan.
    pub max_passes: usize,
    /// Stop re-associating once the pass moved the state less than this.
    pub pass_tolerance: f64,
    /// Use every n-th scan point.
    pub point_stride: usize,
    /// Matches whose residual exceeds this many predicted standard
    /// deviations (`√(J P Jᵀ + σ²)` under the prior covariance) are dropped.
    /// Map neighborhoods spanning two surfaces fit a plane with no error but
    /// the wrong orientation (two parallel scan lines are always coplanar);
    /// their residuals are what this gate catches. `None` disables it.
    pub residual_gate: Option<f64>,
    /// Corrected points closer than this to the map are not inserted, m.
    pub map_resolution: f64,
    /// IMU gaps longer than this break the segment, s.
    pub max_imu_gap: f64,
    pub imu_noise: ImuNoise,
    /// Diagonal of the initial (and post-break) covariance, in error-state
    /// order θ, p, v, b_g, b_a. The first scan defines the map frame, so the
    /// initial pose is known relative to the map up to rounding.
    pub initial_sigma: [f64; 5],
    pub gravity: Vec3,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        OdometryConfig {
            plane: PlaneParams::default(),
            lidar_sigma: 0.01,
            update: UpdateOptions::default(),
            max_passes: 4,
            pass_tolerance: 1e-7,
            point_stride: 4,
            residual_gate: Some(3.0),
            map_resolution: 0.1,
            max_imu_gap: 0.1,
            imu_noise: ImuNoise::default(),
            initial_sigma: [1e-6, 1e-6, 1e-2, 1e-3, 1e-2],
            gravity: super::state::gravity(),
        }
    }
}

impl OdometryConfig {
    /// Covariances taken from the sensor noise: IMU densities and LiDAR
    /// range σ, each floored so an ideal sensor still yields a
    /// well-conditioned problem. The plane planarity tolerance follows the
    /// range noise (3σ, capped at the generic default).
    pub fn with_noise(imu: &ImuNoise, range_sigma: f64) -> Self {
        let lidar_sigma = range_sigma.max(1e-3);
        let generic = PlaneParams::default();
        OdometryConfig {
            plane: PlaneParams {
                planarity_tol: (3.0 * lidar_sigma).min(generic.planarity_tol),
                ..generic
            },
            imu_noise: ImuNoise {
                gyro_density: imu.gyro_density.max(1e-6),
                accel_density: imu.accel_density.max(1e-6),
                gyro_bias_walk: imu.gyro_bias_walk.max(1e-8),
                accel_bias_walk: imu.accel_bias_walk.max(1e-8),
            },
            lidar_sigma,
            ..Default::default()
        }
    }

    fn initial_cov(&self) -> Mat15 {
        let mut p = Mat15::zeros();
        for (b, s) in self.initial_sigma.iter().enumerate() {
            for k in 0..3 {
                p[(3 * b + k, 3 * b + k)] = s * s;
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub state: NavState,
    pub matched: usize,
    pub rejected: usize,
    pub passes: usize,
    /// Cost sequence of every update pass.
    pub costs: Vec<Vec<f64>>,
    pub converged: bool,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<ScanRecord>,
    /// Scan indices at which a new segment starts (always includes 0).
    pub segment_starts: Vec<usize>,
}

impl Trajectory {
    pub fn states(&self) -> impl Iterator<Item = &NavState> {
        self.records.iter().map(|r| &r.state)
    }

    /// Whitespace-free CSV: `t,px,py,pz,qw,qx,qy,qz,segment`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# units: t s, p m, q unit quaternion world_from_body")?;
        writeln!(f, "t,px,py,pz,qw,qx,qy,qz,segment")?;
        let mut seg = 0;
        for (i, r) in self.records.iter().enumerate() {
            if self.segment_starts[1..].contains(&i) {
                seg += 1;
            }
            let s = &r.state;
            let q = nalgebra::UnitQuaternion::from_rotation_matrix(&s.rotation);
            writeln!(
                f,
                "{:.9},{:.9},{:.9},{:.9},{:.12},{:.12},{:.12},{:.12},{}",
                s.timestamp, s.position.x, s.position.y, s.position.z, q.w, q.i, q.j, q.k, seg
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Map contents as a world-frame point cloud.
pub fn map_cloud<M: SpatialIndex + ?Sized>(map: &M, timestamp: f64) -> PointCloud {
    let points = map.points().to_vec();
    PointCloud {
        rows: vec![0; points.len()],
        cols: (0..points.len() as u32).collect(),
        points,
        timestamp,
    }
}

/// Error-state transition and discrete noise of one IMU step taken from
/// `x` (the state before the step).
pub fn propagation_jacobian(x: &NavState, imu: &ImuSample, dt: f64, noise: &ImuNoise) -> (Mat15, Mat15) {
    let w = imu.gyro - x.gyro_bias;
    let a = imu.accel - x.accel_bias;
    let r = *x.rotation.matrix();
    let mut f = Mat15::identity();
    let i3 = Matrix3::identity();
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(so3_exp(&(-w * dt)).matrix());
    f.fixed_view_mut::<3, 3>(0, 9).copy_from(&(-i3 * dt));
    let ra = r * super::state::skew(&a);
    f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-ra * (0.5 * dt * dt)));
    f.fixed_view_mut::<3, 3>(3, 6).copy_from(&(i3 * dt));
    f.fixed_view_mut::<3, 3>(3, 12).copy_from(&(-r * (0.5 * dt * dt)));
    f.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-ra * dt));
    f.fixed_view_mut::<3, 3>(6, 12).copy_from(&(-r * dt));
    let mut q = Mat15::zeros();
    let sg = noise.gyro_density.powi(2) * dt;
    let sa = noise.accel_density.powi(2) * dt;
    let sbg = noise.gyro_bias_walk.powi(2) * dt;
    let sba = noise.accel_bias_walk.powi(2) * dt;
    for k in 0..3 {
        q[(k, k)] = sg;
        q[(3 + k, 3 + k)] = sa * dt * dt / 4.0;
        q[(6 + k, 6 + k)] = sa;
        q[(9 + k, 9 + k)] = sbg;
        q[(12 + k, 12 + k)] = sba;
    }
    (f, q)
}

struct Propagator<'a> {
    imu: &'a [ImuSample],
    /// Index of the sample held at the current time.
    cursor: usize,
}

impl Propagator<'_> {
    /// Integrates `x` (with covariance `p`) to `t_end` holding each IMU
    /// sample until the next one. Returns true if a gap was crossed, in
    /// which case `x` restarts at the first sample after the gap.
    fn advance(&mut self, x: &mut NavState, p: &mut Mat15, t_end: f64, cfg: &OdometryConfig) -> Result<bool> {
        let mut broke = false;
        while self.cursor + 1 < self.imu.len() && self.imu[self.cursor + 1].timestamp <= x.timestamp {
            self.cursor += 1;
        }
        while x.timestamp < t_end {
            let held = &self.imu[self.cursor];
            let next_t = self.imu.get(self.cursor + 1).map(|s| s.timestamp);
            if let Some(nt) = next_t {
                if nt - held.timestamp > cfg.max_imu_gap && x.timestamp >= held.timestamp {
                    // Skip the gap: the state is carried over untouched and
                    // the covariance reset.
                    broke = true;
                    self.cursor += 1;
                    x.timestamp = nt.min(t_end);
                    *p = cfg.initial_cov();
                    continue;
                }
            }
            let stop = next_t.map_or(t_end, |nt| nt.min(t_end));
            let dt = (stop - x.timestamp).min(MAX_IMU_STEP);
            if dt <= 0.0 {
                self.cursor += 1;
                continue;
            }
            let (f, q) = propagation_jacobian(x, held, dt, &cfg.imu_noise);
            let mut nx = imu_propagate(x, held, dt, &cfg.gravity)?;
            // Land exactly on the target instant.
            if (stop - nx.timestamp).abs() < 1e-12 {
                nx.timestamp = stop;
            }
            *x = nx;
            *p = f * *p * f.transpose() + q;
            if next_t == Some(x.timestamp) {
                self.cursor += 1;
            }
        }
        Ok(broke)
    }
}

fn insert_scan<M: SpatialIndex + ?Sized>(map: &mut M, x: &NavState, pts: &[Vec3], resolution: f64) -> usize {
    let mut n = 0;
    for q in pts {
        let w = x.rotation * q + x.position;
        let near = matches!(map.knn(&w, 1).first(), Some(nb) if nb.dist2 <= resolution * resolution);
        if !near {
            map.insert(w);
            n += 1;
        }
    }
    n
}

/// Tightly coupled LiDAR-inertial odometry: IMU propagation between scans,
/// a damped Gauss-Newton update at each scan, and map growth from the
/// corrected points. The first scan seeds the map at `initial`.
pub fn run_odometry<M: SpatialIndex>(
    imu: &[ImuSample],
    scans: &[Scan],
    initial: &NavState,
    cfg: &OdometryConfig,
    mut map: M,
) -> Result<(Trajectory, M)> {
    if imu.is_empty() {
        return Err(Error::InsufficientData("no IMU samples".into()));
    }
    if imu.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) || scans.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::config("stream timestamps must be strictly increasing"));
    }
    if cfg.point_stride == 0 || cfg.max_passes == 0 {
        return Err(Error::config("point_stride and max_passes must be positive"));
    }
    let mut x = initial.clone();
    let mut p = cfg.initial_cov();
    let mut prop = Propagator { imu, cursor: 0 };
    let mut traj = Trajectory { records: Vec::with_capacity(scans.len()), segment_starts: vec![0] };
    let variance_floor = cfg.lidar_sigma * cfg.lidar_sigma;
    for (k, scan) in scans.iter().enumerate() {
        if scan.timestamp < x.timestamp {
            return Err(Error::config(format!("scan {k} precedes the current state")));
        }
        let pts: Vec<Vec3> = scan.points.iter().step_by(cfg.point_stride).copied().collect();
        if k == 0 || map.is_empty() {
            prop.advance(&mut x, &mut p, scan.timestamp, cfg)?;
            insert_scan(&mut map, &x, &pts, cfg.map_resolution);
            traj.records.push(ScanRecord {
                state: x.clone(),
                matched: 0,
                rejected: 0,
                passes: 0,
                costs: vec![],
                converged: true,
                failed: false,
            });
            continue;
        }
        if prop.advance(&mut x, &mut p, scan.timestamp, cfg)? {
            traj.segment_starts.push(k);
        }
        let prior = x.clone();
        let mut est = x.clone();
        let mut rec = ScanRecord {
            state: x.clone(),
            matched: 0,
            rejected: 0,
            passes: 0,
            costs: vec![],
            converged: false,
            failed: false,
        };
        let mut posterior = p;
        for _ in 0..cfg.max_passes {
            let mut lidar = Vec::with_capacity(pts.len());
            let mut rejected = 0;
            for q in &pts {
                let w = est.rotation * q + est.position;
                let Ok((r, plane)) = point_to_plane_residual(&w, &map, &cfg.plane) else {
                    rejected += 1;
                    continue;
                };
                let m = LidarMatch {
                    point: *q,
                    plane,
                    variance: variance_floor + plane.rms * plane.rms,
                };
                if let Some(g) = cfg.residual_gate {
                    let j = lidar_jacobian(&est, &m);
                    let s = (j.transpose() * p * j)[0] + m.variance;
                    if r * r > g * g * s {
                        rejected += 1;
                        continue;
                    }
                }
                lidar.push(m);
            }
            rec.matched = lidar.len();
            rec.rejected = rejected;
            let set = ResidualSet { prior: prior.clone(), prior_cov: p, lidar };
            let out = update_state(&est, &set, &cfg.update)?;
            rec.passes += 1;
            rec.costs.push(out.costs);
            rec.converged = out.converged;
            rec.failed = out.failed;
            posterior = out.covariance;
            let moved = out.state.boxminus(&est).norm();
            est = out.state;
            if moved < cfg.pass_tolerance {
                break;
            }
        }
        x = est;
        p = (posterior + posterior.transpose()) * 0.5;
        insert_scan(&mut map, &x, &pts, cfg.map_resolution);
        rec.state = x.clone();
        traj.records.push(rec);
    }
    Ok((traj, map))
}

//! LiDAR-inertial state estimation: IMU propagation on a 15-dimensional
//! error state, point-to-plane residuals against an incremental map, and a
//! damped Gauss-Newton correction at every scan.

mod index;
mod odometry;
mod plane;
mod sim;
mod state;
mod update;

pub use index::{brute_force_knn, KdTree, Neighbor, SpatialIndex, VoxelMap};
pub use odometry::{
    map_cloud, propagation_jacobian, run_odometry, ImuNoise, OdometryConfig, Scan, ScanRecord, Trajectory,
};
pub use plane::{fit_plane, point_to_plane_residual, Plane, PlaneParams, Rejection};
pub use sim::{simulate_corridor, CorridorSpec, DriveNoise, SimulatedDrive};
pub use state::{
    gravity, imu_propagate, reorthonormalize, right_jacobian_inv, skew, so3_exp, so3_log, ImuSample, NavState,
    MAX_IMU_STEP,
};
pub use update::{
    lidar_jacobian, lidar_residual, prior_jacobian, prior_residual, total_cost, update_state, LidarMatch, Mat15,
    ResidualSet, UpdateOptions, UpdateResult, Vec15,
};

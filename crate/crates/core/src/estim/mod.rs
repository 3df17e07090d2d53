//! Inverse chain from calibrated responses to channel parameters: power
//! delay profiles, path loss, SAGE path estimation, and clustering.

mod cluster;
mod pathloss;
mod pdp;
mod sage;

pub use cluster::{cluster_pdp, cluster_points, Cluster, ClusterParams, ClusterPoint, ClusterSet};
pub use pathloss::{
    fit_log_distance, fit_points, path_loss_series, snapshot_powers, window_len_for, LogDistanceFit,
    PathLossOptions, PathLossSeries,
};
pub use pdp::{find_peaks, noise_floor, pdp, to_delay_domain, Pdp, PdpOptions, Window, DEFAULT_FLOOR_MARGIN_DB};
pub use sage::{sage_estimate, PathEstimate, PathEstimates, SageConfig};

//! Software twin of a multi-band SIMO channel sounder with synchronized
//! LiDAR, camera and geolocation sensing.
//!
//! The crate synthesizes measurement sessions from a geometric scene and
//! runs the processing chain on them: calibration, power delay profiles,
//! path loss fitting, SAGE angle/delay estimation, multipath clustering,
//! LiDAR destaggering, LiDAR-camera fusion, multi-rate time alignment and
//! LiDAR-inertial reconstruction.

pub mod calib;
pub mod error;
pub mod estim;
pub mod fusion;
pub mod geom;
pub mod lidar;
pub mod recon;
pub mod rng;
pub mod scene;
pub mod session;
pub mod sounder;
pub mod sync;
pub mod waveform;

pub use error::{Error, Result};
pub use geom::Vec3;
pub use num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

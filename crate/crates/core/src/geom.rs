//! Direction conventions shared by the radio side of the crate.
//!
//! Arrival angles use azimuth measured counter-clockwise from +x in the
//! xy-plane and a polar "elevation" measured from +z, so `elevation` spans
//! `[0, π]`. The LiDAR module uses its own beam elevation measured from the
//! horizon; see [`crate::lidar`].

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

/// Unit vector for an (azimuth, polar elevation) pair.
pub fn direction(azimuth: f64, elevation: f64) -> Vec3 {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vec3::new(se * ca, se * sa, ce)
}

/// Inverse of [`direction`]; azimuth wrapped into `[0, 2π)`.
pub fn angles(dir: &Vec3) -> (f64, f64) {
    let n = dir.norm();
    let az = wrap_2pi(dir.y.atan2(dir.x));
    let el = (dir.z / n).clamp(-1.0, 1.0).acos();
    (az, el)
}

pub fn wrap_2pi(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wrap into `(-π, π]`.
pub fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Great-circle angle between two directions.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    let c = a.cross(b).norm();
    let d = a.dot(b);
    c.atan2(d)
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

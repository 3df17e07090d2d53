//! LiDAR-to-camera projection, depth overlays, and mapping of estimated
//! multipath components onto scene objects.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Matrix3, Matrix4, Rotation3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estim::PathEstimates;
use crate::geom::{angle_between, direction, Vec3};
use crate::lidar::PointCloud;
use crate::scene::{is_rotation, Pose, SceneSpec};
use crate::SPEED_OF_LIGHT;

/// Rigid transform taking LiDAR-frame points into the camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Self::identity()
    }
}

impl Extrinsics {
    pub fn identity() -> Self {
        Extrinsics {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Extrinsics {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Extrinsics) -> Extrinsics {
        Extrinsics {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Extrinsics {
        let rt = self.rotation.transpose();
        Extrinsics {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn collect_violations(&self, errs: &mut Vec<String>) {
        if !is_rotation(&self.rotation, 1e-9) {
            errs.push("extrinsic rotation must be orthonormal with det +1".into());
        }
        if self.translation.iter().any(|x| !x.is_finite()) {
            errs.push("extrinsic translation must be finite".into());
        }
    }
}

/// Pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn collect_violations(&self, errs: &mut Vec<String>) {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            errs.push("camera focal lengths must be > 0".into());
        }
        if !(self.cx >= 0.0
            && self.cx <= self.width as f64
            && self.cy >= 0.0
            && self.cy <= self.height as f64)
        {
            errs.push("camera principal point must lie inside the image".into());
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = vec![];
        self.collect_violations(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// `P_C = R · P_L + t`.
pub fn lidar_to_camera(p: &Vec3, ext: &Extrinsics) -> Vec3 {
    ext.rotation * p + ext.translation
}

pub fn camera_to_lidar(p: &Vec3, ext: &Extrinsics) -> Vec3 {
    ext.rotation.transpose() * (p - ext.translation)
}

/// `u = f_x X/Z + c_x`, `v = f_y Y/Z + c_y`.
pub fn project(p: &Vec3, intr: &Intrinsics) -> Result<(f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy))
}

/// Camera-frame point at depth `z` seen at pixel `(u, v)`.
pub fn back_project(u: f64, v: f64, z: f64, intr: &Intrinsics) -> Vec3 {
    Vec3::new((u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayEntry {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Index of the source point in the cloud.
    pub source: usize,
}

impl OverlayEntry {
    pub fn pixel(&self) -> (u32, u32) {
        (self.u.floor() as u32, self.v.floor() as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthOverlay {
    /// One entry per occupied pixel, row-major pixel order.
    pub entries: Vec<OverlayEntry>,
    pub width: u32,
    pub height: u32,
    /// 1st and 99th percentile of the depths, for color mapping.
    pub color_bounds: (f64, f64),
}

impl DepthOverlay {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Row-major depth map with 0 where no point landed.
    pub fn depth_raster(&self) -> Vec<f32> {
        let mut out = vec![0.0f32; (self.width * self.height) as usize];
        for e in &self.entries {
            let (c, r) = e.pixel();
            out[(r * self.width + c) as usize] = e.depth as f32;
        }
        out
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "source,u,v,pixel_u,pixel_v,depth_m")?;
        for e in &self.entries {
            let (pu, pv) = e.pixel();
            writeln!(w, "{},{:.6},{:.6},{},{},{:.6}", e.source, e.u, e.v, pu, pv, e.depth)?;
        }
        Ok(())
    }
}

/// Projects a cloud into the image, keeping the nearest depth per pixel.
pub fn overlay(cloud: &PointCloud, ext: &Extrinsics, intr: &Intrinsics) -> DepthOverlay {
    let mut best: BTreeMap<(u32, u32), OverlayEntry> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let pc = lidar_to_camera(p, ext);
        let Ok((u, v)) = project(&pc, intr) else {
            continue;
        };
        if !(u >= 0.0 && v >= 0.0 && u < intr.width as f64 && v < intr.height as f64) {
            continue;
        }
        let e = OverlayEntry {
            u,
            v,
            depth: pc.z,
            source: i,
        };
        let (pu, pv) = e.pixel();
        best.entry((pv, pu))
            .and_modify(|cur| {
                if e.depth < cur.depth {
                    *cur = e;
                }
            })
            .or_insert(e);
    }
    let entries: Vec<OverlayEntry> = best.into_values().collect();
    let mut depths: Vec<f64> = entries.iter().map(|e| e.depth).collect();
    depths.sort_by(f64::total_cmp);
    let color_bounds = if depths.is_empty() {
        (0.0, 0.0)
    } else {
        let at = |q: f64| depths[((depths.len() - 1) as f64 * q).round() as usize];
        (at(0.01), at(0.99))
    };
    DepthOverlay {
        entries,
        width: intr.width,
        height: intr.height,
        color_bounds,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectKind {
    Transmitter,
    Facet(usize),
    Scatterer(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub path: usize,
    /// `None` when nothing lies inside the angular gate.
    pub object: Option<ObjectKind>,
    pub label: Option<String>,
    /// Angle between the arrival direction and the object, rad.
    pub angular_error: f64,
    /// Propagation length implied by the object's geometry, m.
    pub geometric_length: f64,
    /// `|c·τ − geometric length|`, m.
    pub length_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationConfig {
    /// Angular gate, rad.
    pub gate: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            gate: 5f64.to_radians(),
        }
    }
}

/// Maps each estimated path to the scene object it most plausibly came
/// from. Candidates inside the angular gate are ranked by how well their
/// geometric length explains the estimated delay; the transmitter,
/// reflecting facets and point scatterers all compete.
pub fn associate_paths_to_objects(
    paths: &PathEstimates,
    scene: &SceneSpec,
    rx: &Pose,
    cfg: &AssociationConfig,
) -> Vec<Association> {
    let tx = scene.tx_pose.position;
    let r = rx.position;
    paths
        .paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let dir = rx.rotation * direction(p.azimuth, p.elevation);
            let delay_len = p.delay * SPEED_OF_LIGHT;
            let mut cands: Vec<(ObjectKind, String, f64, f64)> = vec![];
            cands.push((
                ObjectKind::Transmitter,
                "tx".into(),
                angle_between(&dir, &(tx - r)),
                (tx - r).norm(),
            ));
            for (k, f) in scene.reflectors.iter().enumerate() {
                let ang = f.angular_distance(&r, &dir);
                let len = (r - f.mirror(&tx)).norm();
                cands.push((ObjectKind::Facet(k), f.label.clone(), ang, len));
            }
            for (k, s) in scene.scatterers.iter().enumerate() {
                let ang = angle_between(&dir, &(s.position - r));
                let len = (s.position - tx).norm() + (r - s.position).norm();
                cands.push((ObjectKind::Scatterer(k), s.label.clone(), ang, len));
            }
            let best = cands
                .into_iter()
                .filter(|c| c.2 <= cfg.gate)
                .min_by(|a, b| {
                    (a.3 - delay_len)
                        .abs()
                        .total_cmp(&(b.3 - delay_len).abs())
                        .then(a.2.total_cmp(&b.2))
                });
            match best {
                Some((kind, label, ang, len)) => Association {
                    path: i,
                    object: Some(kind),
                    label: Some(label),
                    angular_error: ang,
                    geometric_length: len,
                    length_residual: (delay_len - len).abs(),
                },
                None => Association {
                    path: i,
                    object: None,
                    label: None,
                    angular_error: f64::NAN,
                    geometric_length: f64::NAN,
                    length_residual: f64::NAN,
                },
            }
        })
        .collect()
}

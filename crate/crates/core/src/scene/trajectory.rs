use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Rigid pose at an instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseDoc", into = "PoseDoc")]
pub struct Pose {
    pub position: Vec3,
    pub rotation: Rotation3<f64>,
    pub timestamp: f64,
}

/// Human-editable form: `orientation` is a unit quaternion `[w, x, y, z]`.
#[derive(Serialize, Deserialize)]
struct PoseDoc {
    #[serde(default)]
    t: f64,
    position: [f64; 3],
    #[serde(default = "identity_quat")]
    orientation: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl From<PoseDoc> for Pose {
    fn from(d: PoseDoc) -> Self {
        let [w, x, y, z] = d.orientation;
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Pose {
            position: Vec3::from(d.position),
            rotation: q.to_rotation_matrix(),
            timestamp: d.t,
        }
    }
}

impl From<Pose> for PoseDoc {
    fn from(p: Pose) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&p.rotation);
        PoseDoc {
            t: p.timestamp,
            position: p.position.into(),
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl Pose {
    pub fn new(position: Vec3, rotation: Rotation3<f64>, timestamp: f64) -> Self {
        Pose {
            position,
            rotation,
            timestamp,
        }
    }

    pub fn at(position: Vec3) -> Self {
        Pose::new(position, Rotation3::identity(), 0.0)
    }

    pub fn with_yaw(position: Vec3, yaw: f64, timestamp: f64) -> Self {
        Pose::new(position, Rotation3::from_euler_angles(0.0, 0.0, yaw), timestamp)
    }

    /// ‖RᵀR − I‖ and |det R − 1| both within `tol`.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        is_rotation(self.rotation.matrix(), tol)
    }

    pub fn to_world(&self, v: &Vec3) -> Vec3 {
        self.rotation * v + self.position
    }
}

pub fn is_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
    (m.transpose() * m - Matrix3::identity()).norm() <= tol && (m.determinant() - 1.0).abs() <= tol
}

/// Keyframed trajectory with linear position and slerped orientation.
/// A single keyframe describes a static pose valid at every instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    pub keyframes: Vec<Pose>,
}

impl Trajectory {
    pub fn new(keyframes: Vec<Pose>) -> Self {
        Trajectory { keyframes }
    }

    pub fn fixed(pose: Pose) -> Self {
        Trajectory {
            keyframes: vec![pose],
        }
    }

    /// Constant-velocity straight line from `start` to `end` over `[t0, t1]`.
    pub fn linear(start: Vec3, end: Vec3, t0: f64, t1: f64, rotation: Rotation3<f64>) -> Self {
        Trajectory::new(vec![
            Pose::new(start, rotation, t0),
            Pose::new(end, rotation, t1),
        ])
    }

    pub fn validate(&self, errs: &mut Vec<String>) {
        if self.keyframes.is_empty() {
            errs.push("trajectory has no keyframes".into());
        }
        for w in self.keyframes.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                errs.push(format!(
                    "trajectory timestamps not strictly increasing at t = {}",
                    w[1].timestamp
                ));
            }
        }
        for (i, k) in self.keyframes.iter().enumerate() {
            if !k.is_orthonormal(1e-9) {
                errs.push(format!("keyframe {i} orientation is not a rotation"));
            }
        }
    }

    pub fn is_static(&self) -> bool {
        self.keyframes.len() == 1
    }

    pub fn span(&self) -> (f64, f64) {
        if self.is_static() {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        (
            self.keyframes[0].timestamp,
            self.keyframes.last().unwrap().timestamp,
        )
    }

    fn segment(&self, t: f64) -> Result<usize> {
        let (a, b) = self.span();
        if !(t >= a && t <= b) {
            return Err(Error::Range(format!(
                "t = {t} outside trajectory span [{a}, {b}]"
            )));
        }
        let k = &self.keyframes;
        let i = k.partition_point(|p| p.timestamp <= t);
        Ok(i.saturating_sub(1).min(k.len() - 2))
    }

    pub fn pose(&self, t: f64) -> Result<Pose> {
        if self.keyframes.is_empty() {
            return Err(Error::Range("empty trajectory".into()));
        }
        if self.is_static() {
            let mut p = self.keyframes[0].clone();
            p.timestamp = t;
            return Ok(p);
        }
        let i = self.segment(t)?;
        let (a, b) = (&self.keyframes[i], &self.keyframes[i + 1]);
        if t == a.timestamp {
            return Ok(a.clone());
        }
        if t == b.timestamp {
            return Ok(b.clone());
        }
        let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
        let position = a.position + (b.position - a.position) * s;
        let qa = UnitQuaternion::from_rotation_matrix(&a.rotation);
        let qb = UnitQuaternion::from_rotation_matrix(&b.rotation);
        let q = qa.try_slerp(&qb, s, 1e-12).unwrap_or(qa);
        Ok(Pose::new(position, q.to_rotation_matrix(), t))
    }

    /// Velocity of the piecewise-linear position; the segment starting at
    /// `t` wins at interior keyframes.
    pub fn velocity(&self, t: f64) -> Result<Vec3> {
        if self.is_static() {
            return Ok(Vec3::zeros());
        }
        let i = self.segment(t)?;
        let (a, b) = (&self.keyframes[i], &self.keyframes[i + 1]);
        Ok((b.position - a.position) / (b.timestamp - a.timestamp))
    }
}

//! Geometric world model: planar reflectors, point scatterers, a static
//! transmitter and a moving receiver. Produces ground-truth multipath
//! (line of sight plus single-bounce specular and point-scatter paths) and
//! ground-truth LiDAR ranges.

mod facet;
mod trajectory;

pub use facet::Facet;
pub use trajectory::{is_rotation, Pose, Trajectory};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::{angles, Vec3};
use crate::rng::keyed_seed;
use crate::SPEED_OF_LIGHT;

/// Point scatterer with a radar-cross-section-like gain relative to a
/// specular path of the same unfolded length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    #[serde(default)]
    pub label: String,
    pub position: Vec3,
    pub gain_db: f64,
}

/// Large-scale gain law applied to every path by unfolded length `L`:
/// `|g|² = (λ / 4π d₀)² (d₀ / L)^n`, with optional log-normal shadowing drawn
/// once per spatial cell of the link endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Propagation {
    pub path_loss_exponent: f64,
    pub reference_distance: f64,
    pub shadowing_db: f64,
    pub shadowing_cell: f64,
    pub shadowing_seed: u64,
}

impl Default for Propagation {
    fn default() -> Self {
        Propagation {
            path_loss_exponent: 2.0,
            reference_distance: 1.0,
            shadowing_db: 0.0,
            shadowing_cell: 0.5,
            shadowing_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub reflectors: Vec<Facet>,
    #[serde(default)]
    pub scatterers: Vec<Scatterer>,
    pub tx_pose: Pose,
    pub rx_trajectory: Trajectory,
    pub carrier_frequency: f64,
    #[serde(default)]
    pub propagation: Propagation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interaction {
    LineOfSight,
    Reflection(usize),
    Scatter(usize),
}

impl Interaction {
    pub fn code(&self) -> (u32, u32) {
        match *self {
            Interaction::LineOfSight => (0, 0),
            Interaction::Reflection(i) => (1, i as u32),
            Interaction::Scatter(i) => (2, i as u32),
        }
    }

    pub fn from_code(kind: u32, index: u32) -> Option<Self> {
        match kind {
            0 => Some(Interaction::LineOfSight),
            1 => Some(Interaction::Reflection(index as usize)),
            2 => Some(Interaction::Scatter(index as usize)),
            _ => None,
        }
    }
}

/// One multipath component. Angles are arrival angles in the receiver body
/// frame (see [`crate::geom`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub delay: f64,
    pub gain: Complex64,
    pub azimuth: f64,
    pub elevation: f64,
    pub doppler: f64,
    pub interaction: Interaction,
}

impl Path {
    /// Unfolded propagation length.
    pub fn length(&self) -> f64 {
        self.delay * SPEED_OF_LIGHT
    }
}

/// Paths valid at instant `epoch`; Doppler phase accrues relative to it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSet {
    pub epoch: f64,
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn new(epoch: f64, paths: Vec<Path>) -> Self {
        PathSet { epoch, paths }
    }

    pub fn los(&self) -> Option<&Path> {
        self.paths
            .iter()
            .find(|p| p.interaction == Interaction::LineOfSight)
    }

    pub fn los_count(&self) -> usize {
        self.paths
            .iter()
            .filter(|p| p.interaction == Interaction::LineOfSight)
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }
}

impl SceneSpec {
    /// Free space between two static poses.
    pub fn free_space(tx: Pose, rx: Pose, carrier_frequency: f64) -> Self {
        SceneSpec {
            reflectors: vec![],
            scatterers: vec![],
            tx_pose: tx,
            rx_trajectory: Trajectory::fixed(rx),
            carrier_frequency,
            propagation: Propagation::default(),
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
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

    pub fn collect_violations(&self, errs: &mut Vec<String>) {
        if !(self.carrier_frequency > 0.0 && self.carrier_frequency.is_finite()) {
            errs.push("scene.carrier_frequency must be > 0".into());
        }
        for (i, f) in self.reflectors.iter().enumerate() {
            f.validate(i, errs);
        }
        self.rx_trajectory.validate(errs);
        if !self.tx_pose.is_orthonormal(1e-9) {
            errs.push("tx_pose orientation is not a rotation".into());
        }
        let p = &self.propagation;
        if !(p.reference_distance > 0.0) {
            errs.push("propagation.reference_distance must be > 0".into());
        }
        if !(p.shadowing_db >= 0.0) {
            errs.push("propagation.shadowing_db must be >= 0".into());
        }
        if !(p.shadowing_cell > 0.0) {
            errs.push("propagation.shadowing_cell must be > 0".into());
        }
    }

    pub fn trajectory_pose(&self, t: f64) -> Result<Pose> {
        self.rx_trajectory.pose(t)
    }

    fn amplitude(&self, length: f64, extra_db: f64, shadow_db: f64) -> f64 {
        let p = &self.propagation;
        let d0 = p.reference_distance;
        let a0 = self.wavelength() / (4.0 * PI * d0);
        a0 * (d0 / length).powf(p.path_loss_exponent / 2.0)
            * 10f64.powf((extra_db - shadow_db) / 20.0)
    }

    /// Shadowing in dB for a link, symmetric in its endpoints.
    pub fn shadowing_db(&self, a: &Vec3, b: &Vec3) -> f64 {
        let p = &self.propagation;
        if p.shadowing_db == 0.0 {
            return 0.0;
        }
        let cell = |v: &Vec3| -> [i64; 3] {
            [
                (v.x / p.shadowing_cell).floor() as i64,
                (v.y / p.shadowing_cell).floor() as i64,
                (v.z / p.shadowing_cell).floor() as i64,
            ]
        };
        let (mut ca, mut cb) = (cell(a), cell(b));
        if cb < ca {
            std::mem::swap(&mut ca, &mut cb);
        }
        let keys = [ca[0], ca[1], ca[2], cb[0], cb[1], cb[2]];
        let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(p.shadowing_seed, &keys));
        let z: f64 = StandardNormal.sample(&mut rng);
        p.shadowing_db * z
    }

    fn occluded(&self, a: &Vec3, b: &Vec3, skip: Option<usize>) -> bool {
        self.reflectors
            .iter()
            .enumerate()
            .any(|(i, f)| Some(i) != skip && f.blocks_segment(a, b))
    }

    /// Ground-truth multipath at time `t`.
    pub fn ground_truth_paths(&self, t: f64) -> Result<PathSet> {
        let rx = self.rx_trajectory.pose(t)?;
        let vel = self.rx_trajectory.velocity(t)?;
        Ok(self.paths_between(&self.tx_pose, &rx, &vel, t))
    }

    /// Paths from `tx` to a receiver at `rx` moving with world velocity `vel`.
    pub fn paths_between(&self, tx: &Pose, rx: &Pose, vel: &Vec3, epoch: f64) -> PathSet {
        let t_pos = tx.position;
        let r_pos = rx.position;
        let shadow = self.shadowing_db(&t_pos, &r_pos);
        let k_dop = self.carrier_frequency / SPEED_OF_LIGHT;
        let mut out = vec![];
        let mut push = |toward: Vec3, length: f64, gain: Complex64, kind: Interaction| {
            let dir = (toward - r_pos).normalize();
            let body = rx.rotation.inverse() * dir;
            let (az, el) = angles(&body);
            out.push(Path {
                delay: length / SPEED_OF_LIGHT,
                gain,
                azimuth: az,
                elevation: el,
                doppler: k_dop * vel.dot(&dir),
                interaction: kind,
            });
        };

        if !self.occluded(&t_pos, &r_pos, None) {
            let len = (r_pos - t_pos).norm();
            let a = self.amplitude(len, 0.0, shadow);
            push(t_pos, len, Complex64::new(a, 0.0), Interaction::LineOfSight);
        }

        for (i, f) in self.reflectors.iter().enumerate() {
            let dt = f.signed_distance(&t_pos);
            let dr = f.signed_distance(&r_pos);
            if dt * dr <= 0.0 {
                continue;
            }
            let image = f.mirror(&t_pos);
            let n = f.normal();
            let dir = r_pos - image;
            let s = (f.corners[0] - image).dot(&n) / dir.dot(&n);
            let hit = image + dir * s;
            if !f.contains(&hit) {
                continue;
            }
            if self.occluded(&t_pos, &hit, Some(i)) || self.occluded(&hit, &r_pos, Some(i)) {
                continue;
            }
            let len = (r_pos - image).norm();
            let a = self.amplitude(len, -f.reflection_loss_db, shadow);
            // Specular reflection flips the field sign.
            push(hit, len, Complex64::new(-a, 0.0), Interaction::Reflection(i));
        }

        for (i, sc) in self.scatterers.iter().enumerate() {
            let s = sc.position;
            if self.occluded(&t_pos, &s, None) || self.occluded(&s, &r_pos, None) {
                continue;
            }
            let len = (s - t_pos).norm() + (r_pos - s).norm();
            let a = self.amplitude(len, sc.gain_db, shadow);
            push(s, len, Complex64::new(a, 0.0), Interaction::Scatter(i));
        }

        PathSet::new(epoch, out)
    }

    /// Nearest facet hit along each sensor-frame beam direction.
    pub fn ground_truth_ranges(&self, sensor: &Pose, beams: &[Vec3]) -> Vec<Option<f64>> {
        beams
            .iter()
            .map(|b| {
                let dir = sensor.rotation * b;
                let mut best = f64::INFINITY;
                for f in &self.reflectors {
                    if let Some(t) = f.intersect_ray_within(&sensor.position, &dir, best) {
                        best = t;
                    }
                }
                best.is_finite().then_some(best)
            })
            .collect()
    }

    /// Diagonal of the bounding box of all geometry and poses.
    pub fn bounding_diameter(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut add = |p: &Vec3| {
            lo = lo.inf(p);
            hi = hi.sup(p);
        };
        for f in &self.reflectors {
            f.corners.iter().for_each(&mut add);
        }
        for s in &self.scatterers {
            add(&s.position);
        }
        add(&self.tx_pose.position);
        for k in &self.rx_trajectory.keyframes {
            add(&k.position);
        }
        (hi - lo).norm()
    }
}

//! Synthetic corridor drive for exercising the odometry end to end.

use nalgebra::Rotation3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::odometry::{ImuNoise, Scan};
use super::state::{gravity, ImuSample, NavState};
use crate::error::Result;
use crate::geom::Vec3;
use crate::lidar::{destagger, synth_staggered_frame, to_points, LidarConfig};
use crate::rng::sub_seed;
use crate::scene::{Facet, Pose, SceneSpec, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorSpec {
    /// Driven distance along +x, m.
    pub length: f64,
    pub half_width: f64,
    pub height: f64,
    /// Clearance between the path ends and the end walls, m.
    pub end_margin: f64,
    pub speed: f64,
    pub sensor_height: f64,
    /// Spacing of rectangular pillars on both walls, m; 0 disables them.
    /// A bare corridor leaves the along-track position observable only
    /// through the distant end walls.
    pub pillar_spacing: f64,
    pub pillar_width: f64,
    pub pillar_depth: f64,
    pub imu_rate: f64,
    pub lidar: LidarConfig,
}

impl Default for CorridorSpec {
    fn default() -> Self {
        CorridorSpec {
            length: 50.0,
            half_width: 2.0,
            height: 3.0,
            end_margin: 5.0,
            speed: 2.0,
            sensor_height: 1.5,
            pillar_spacing: 5.0,
            pillar_width: 0.4,
            pillar_depth: 0.25,
            imu_rate: 200.0,
            lidar: LidarConfig::uniform(16, 360, 10.0, 30f64.to_radians()),
        }
    }
}

impl CorridorSpec {
    pub fn duration(&self) -> f64 {
        self.length / self.speed
    }

    pub fn scene(&self) -> SceneSpec {
        let (x0, x1) = (-self.end_margin, self.length + self.end_margin);
        let (w, h) = (self.half_width, self.height);
        let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
        let mut reflectors = vec![
            Facet::new("floor", vec![v(x0, -w, 0.0), v(x1, -w, 0.0), v(x1, w, 0.0), v(x0, w, 0.0)], 6.0),
            Facet::new("ceiling", vec![v(x0, -w, h), v(x0, w, h), v(x1, w, h), v(x1, -w, h)], 6.0),
            Facet::vertical("left", v(x0, w, 0.0), v(x1, w, 0.0), 0.0, h, 6.0),
            Facet::vertical("right", v(x0, -w, 0.0), v(x1, -w, 0.0), 0.0, h, 6.0),
            Facet::vertical("rear", v(x0, -w, 0.0), v(x0, w, 0.0), 0.0, h, 6.0),
            Facet::vertical("front", v(x1, -w, 0.0), v(x1, w, 0.0), 0.0, h, 6.0),
        ];
        if self.pillar_spacing > 0.0 {
            let n = ((x1 - x0) / self.pillar_spacing).ceil() as i64;
            for i in 1..n {
                let xc = x0 + i as f64 * self.pillar_spacing;
                let (a, b) = (xc - self.pillar_width / 2.0, xc + self.pillar_width / 2.0);
                for (side, tag) in [(1.0, "L"), (-1.0, "R")] {
                    let (outer, inner) = (side * w, side * (w - self.pillar_depth));
                    let name = |part: &str| format!("pillar{i}{tag}-{part}");
                    reflectors.push(Facet::vertical(&name("a"), v(a, outer, 0.0), v(a, inner, 0.0), 0.0, h, 6.0));
                    reflectors.push(Facet::vertical(&name("face"), v(a, inner, 0.0), v(b, inner, 0.0), 0.0, h, 6.0));
                    reflectors.push(Facet::vertical(&name("b"), v(b, inner, 0.0), v(b, outer, 0.0), 0.0, h, 6.0));
                }
            }
        }
        SceneSpec {
            reflectors,
            scatterers: vec![],
            tx_pose: Pose::at(v(0.0, 0.0, self.sensor_height)),
            rx_trajectory: Trajectory::linear(
                v(0.0, 0.0, self.sensor_height),
                v(self.length, 0.0, self.sensor_height),
                0.0,
                self.duration(),
                Rotation3::identity(),
            ),
            carrier_frequency: 28e9,
            propagation: Default::default(),
        }
    }

    pub fn truth(&self, t: f64) -> NavState {
        let mut s = NavState::at_rest(Vec3::new(self.speed * t, 0.0, self.sensor_height), t);
        s.velocity = Vec3::new(self.speed, 0.0, 0.0);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDrive {
    pub imu: Vec<ImuSample>,
    pub scans: Vec<Scan>,
    /// Ground truth at each scan.
    pub truth: Vec<NavState>,
    pub initial: NavState,
}

/// Noise switches for [`simulate_corridor`]; `None` densities mean an ideal
/// sensor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriveNoise {
    pub imu: Option<ImuNoise>,
    pub range_sigma: Option<f64>,
    pub seed: u64,
}

/// Constant-velocity drive along the corridor centerline. Each scan is taken
/// from the pose at its start time (no motion within a frame).
pub fn simulate_corridor(spec: &CorridorSpec, noise: &DriveNoise) -> Result<SimulatedDrive> {
    let scene = spec.scene();
    let mut lidar = spec.lidar.clone();
    lidar.range_noise = noise.range_sigma.unwrap_or(0.0);
    lidar.validate()?;
    let duration = spec.duration();

    let n_imu = (duration * spec.imu_rate).round() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(noise.seed, "imu"));
    let f_rest = -gravity();
    let imu = (0..n_imu)
        .map(|i| {
            let mut s = ImuSample {
                gyro: Vec3::zeros(),
                accel: f_rest,
                timestamp: i as f64 / spec.imu_rate,
            };
            if let Some(n) = &noise.imu {
                let g = Normal::new(0.0, n.gyro_density * spec.imu_rate.sqrt()).expect("finite sigma");
                let a = Normal::new(0.0, n.accel_density * spec.imu_rate.sqrt()).expect("finite sigma");
                s.gyro += Vec3::from_fn(|_, _| g.sample(&mut rng));
                s.accel += Vec3::from_fn(|_, _| a.sample(&mut rng));
            }
            s
        })
        .collect();

    let n_scans = (duration * lidar.frame_rate).floor() as usize + 1;
    let range_seed = noise.range_sigma.map(|_| sub_seed(noise.seed, "lidar"));
    let mut scans = Vec::with_capacity(n_scans);
    let mut truth = Vec::with_capacity(n_scans);
    for k in 0..n_scans {
        let t = k as f64 / lidar.frame_rate;
        let x = spec.truth(t);
        let pose = Pose::new(x.position, x.rotation, t);
        let seed = range_seed.map(|s| s.wrapping_add(k as u64));
        let frame = synth_staggered_frame(&scene, |_| pose.clone(), &lidar, t, seed);
        let cloud = to_points(&destagger(&frame, &lidar)?, &lidar)?;
        scans.push(Scan { timestamp: t, points: cloud.points });
        truth.push(x);
    }
    Ok(SimulatedDrive {
        imu,
        scans,
        initial: truth[0].clone(),
        truth,
    })
}

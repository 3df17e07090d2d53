use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calib::B2bReference;
use crate::error::{Error, Result};
use crate::estim::{ClusterParams, PathLossOptions, PdpOptions, SageConfig};
use crate::fusion::{AssociationConfig, Extrinsics, Intrinsics};
use crate::geom::Vec3;
use crate::lidar::LidarConfig;
use crate::scene::{Facet, Pose, Propagation, SceneSpec, Scatterer, Trajectory};
use crate::sounder::{
    AngularSupport, ArrayGeometry, ArrayPlane, BudgetLedger, ImpairmentProfile, Sounder,
    SwitchSchedule,
};
use crate::sync::{ClockModel, DRIFT_SANITY_BOUND};
use crate::waveform::ToneConfig;
use crate::SPEED_OF_LIGHT;

/// Largest seed a session accepts; TOML integers are signed 64-bit.
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    /// Recording length, s. Snapshots, frames and fixes cover `[0, duration)`.
    pub duration: f64,
    /// Creation stamp written verbatim to the manifest. Not taken from the
    /// wall clock so that sessions stay byte-reproducible.
    #[serde(default = "default_created")]
    pub created: String,
    /// Geolocation fix rate, Hz.
    #[serde(default = "default_geo_rate")]
    pub geolocation_rate: f64,
    /// Per-axis Gaussian position noise of the fixes, m.
    #[serde(default)]
    pub geolocation_sigma: f64,
}

fn default_created() -> String {
    "1970-01-01T00:00:00Z".into()
}

fn default_geo_rate() -> f64 {
    120.0
}

/// Complex measurement noise. `variance` is per bin in channel units;
/// when absent it follows from the link budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct B2bSpec {
    pub attenuation_db: f64,
    #[serde(default)]
    pub delay: f64,
    pub repetitions: usize,
}

impl B2bSpec {
    pub fn reference(&self) -> B2bReference {
        B2bReference {
            attenuation_db: self.attenuation_db,
            delay: self.delay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarSpec {
    pub config: LidarConfig,
    /// Sensor origin in the receiver body frame, m.
    #[serde(default = "Vec3::zeros")]
    pub mount: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub intrinsics: Intrinsics,
    /// LiDAR frame to camera frame.
    pub extrinsics: Extrinsics,
}

/// Injected device clock: `local = reference · (1 + drift) + offset`, plus
/// Gaussian timestamp jitter of standard deviation `jitter`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ClockInjection {
    pub offset: f64,
    pub drift: f64,
    #[serde(default)]
    pub jitter: f64,
}

impl ClockInjection {
    pub fn model(&self) -> ClockModel {
        ClockModel::new(self.offset, self.drift)
    }
}

/// Geolocation defines the reference time base. Every device also stamps a
/// shared pulse train, which is what synchronization fits against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockSpec {
    pub channel: ClockInjection,
    pub lidar: ClockInjection,
    pub geolocation: ClockInjection,
    /// Interval of the shared pulse train, s.
    pub pulse_interval: f64,
}

/// Options of the processing stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessingConfig {
    pub pdp: PdpOptions,
    /// Process every n-th snapshot.
    pub pdp_stride: usize,
    pub pathloss: PathLossOptions,
    /// d₀ of the log-distance fit, m.
    pub reference_distance: f64,
    pub sage: SageConfig,
    pub sage_stride: usize,
    pub cluster: ClusterParams,
    pub association: AssociationConfig,
    /// LiDAR frame whose rasters and overlay go into the report.
    pub raster_frame: usize,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        ProcessingConfig {
            pdp: PdpOptions::default(),
            pdp_stride: 1,
            pathloss: PathLossOptions::default(),
            reference_distance: 1.0,
            sage: SageConfig::default(),
            sage_stride: 25,
            cluster: ClusterParams::default(),
            association: AssociationConfig::default(),
            raster_frame: 0,
        }
    }
}

impl ProcessingConfig {
    pub fn collect_violations(&self, errs: &mut Vec<String>) {
        if self.pdp_stride == 0 {
            errs.push("processing.pdp_stride must be >= 1".into());
        }
        if self.sage_stride == 0 {
            errs.push("processing.sage_stride must be >= 1".into());
        }
        if self.pdp.oversample == 0 {
            errs.push("processing.pdp.oversample must be >= 1".into());
        }
        if !(self.reference_distance > 0.0) {
            errs.push("processing.reference_distance must be > 0".into());
        }
        if self.pathloss.hop == 0 {
            errs.push("processing.pathloss.hop must be >= 1".into());
        }
        if matches!(self.pathloss.window_len, Some(w) if w % 2 == 0) {
            errs.push("processing.pathloss.window_len must be odd".into());
        }
        if self.sage.max_paths == 0 {
            errs.push("processing.sage.max_paths must be >= 1".into());
        }
        if !(self.sage.angle_step > 0.0) {
            errs.push("processing.sage.angle_step must be > 0".into());
        }
        if !(self.association.gate > 0.0) {
            errs.push("processing.association.gate must be > 0".into());
        }
    }
}

/// Everything that determines a session, given a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session: SessionInfo,
    pub noise: NoiseSpec,
    pub b2b: B2bSpec,
    pub clocks: ClockSpec,
    pub budget: BudgetLedger,
    pub scene: SceneSpec,
    pub waveform: ToneConfig,
    pub array: ArrayGeometry,
    pub schedule: SwitchSchedule,
    #[serde(default)]
    pub impairments: ImpairmentProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lidar: Option<LidarSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraSpec>,
    #[serde(default)]
    pub processing: ProcessingConfig,
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("session config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("session config: {e}")))
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn sounder(&self) -> Sounder {
        Sounder {
            array: self.array.clone(),
            schedule: self.schedule.clone(),
            impairments: self.impairments.clone(),
            waveform: self.waveform.clone(),
            carrier_frequency: self.scene.carrier_frequency,
        }
    }

    pub fn noise_variance(&self) -> f64 {
        if !self.noise.enabled {
            return 0.0;
        }
        self.noise
            .variance
            .unwrap_or_else(|| self.budget.channel_noise_variance())
    }

    pub fn snapshot_count(&self) -> usize {
        (self.session.duration / self.schedule.snapshot_period).round() as usize
    }

    pub fn lidar_frame_count(&self) -> usize {
        self.lidar
            .as_ref()
            .map_or(0, |l| (self.session.duration * l.config.frame_rate + 1e-9).floor() as usize)
    }

    pub fn geolocation_count(&self) -> usize {
        (self.session.duration * self.session.geolocation_rate + 1e-9).floor() as usize + 1
    }

    pub fn pulse_count(&self) -> usize {
        (self.session.duration / self.clocks.pulse_interval + 1e-9).floor() as usize + 1
    }

    pub fn collect_violations(&self, errs: &mut Vec<String>) {
        let s = &self.session;
        if s.id.trim().is_empty() {
            errs.push("session.id must not be empty".into());
        }
        if !(s.duration > 0.0 && s.duration.is_finite()) {
            errs.push("session.duration must be > 0".into());
        }
        if !(s.geolocation_rate > 0.0) {
            errs.push("session.geolocation_rate must be > 0".into());
        }
        if !(s.geolocation_sigma >= 0.0) {
            errs.push("session.geolocation_sigma must be >= 0".into());
        }
        if let Some(v) = self.noise.variance {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push("noise.variance must be >= 0".into());
            }
        }
        if self.b2b.repetitions == 0 {
            errs.push("b2b.repetitions must be >= 1".into());
        }
        if !self.b2b.attenuation_db.is_finite() || !(self.b2b.delay >= 0.0) {
            errs.push("b2b attenuation must be finite and delay >= 0".into());
        }
        for (name, c) in [
            ("channel", &self.clocks.channel),
            ("lidar", &self.clocks.lidar),
            ("geolocation", &self.clocks.geolocation),
        ] {
            if !(c.drift.abs() < DRIFT_SANITY_BOUND) || !c.offset.is_finite() {
                errs.push(format!(
                    "clocks.{name}: offset must be finite and |drift| < {DRIFT_SANITY_BOUND}"
                ));
            }
            if !(c.jitter >= 0.0) {
                errs.push(format!("clocks.{name}.jitter must be >= 0"));
            }
        }
        // Timestamps must stay ordered; 8σ of jitter per interval keeps a
        // swap below 1e-8 per pair.
        let mut periods = vec![
            ("channel", self.clocks.channel.jitter, self.schedule.snapshot_period),
            ("geolocation", self.clocks.geolocation.jitter, 1.0 / s.geolocation_rate),
        ];
        if let Some(l) = &self.lidar {
            periods.push(("lidar", self.clocks.lidar.jitter, 1.0 / l.config.frame_rate));
        }
        for (name, jitter, period) in periods {
            if 8.0 * jitter >= period {
                errs.push(format!(
                    "clocks.{name}.jitter {jitter} s too large for a {period} s sample interval"
                ));
            }
        }
        if !(self.clocks.pulse_interval > 0.0) {
            errs.push("clocks.pulse_interval must be > 0".into());
        }
        self.budget.collect_violations(errs);
        self.scene.collect_violations(errs);
        self.sounder().collect_violations(errs);
        if !self.scene.rx_trajectory.is_static() && s.duration.is_finite() {
            let (a, b) = self.scene.rx_trajectory.span();
            if a > 0.0 || b < s.duration {
                errs.push(format!(
                    "rx trajectory covers [{a}, {b}] s, session needs [0, {}] s",
                    s.duration
                ));
            }
        }
        if self.snapshot_count() == 0 && s.duration > 0.0 {
            errs.push("session shorter than one snapshot period".into());
        }
        if let Some(l) = &self.lidar {
            l.config.collect_violations(errs);
            if !l.mount.iter().all(|v| v.is_finite()) {
                errs.push("lidar.mount must be finite".into());
            }
        }
        if let Some(c) = &self.camera {
            c.intrinsics.collect_violations(errs);
            c.extrinsics.collect_violations(errs);
        }
        self.processing.collect_violations(errs);
    }

    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = vec![];
        self.collect_violations(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// 28 GHz vehicle-to-infrastructure run: a 400 m straight road with a
    /// building facade on one side and a fence on the other, a static
    /// roadside transmitter, and a receiver driving away from it at
    /// 20 km/h from 10 m to 280 m.
    pub fn v2i() -> Self {
        let fc = 28e9;
        let speed = 20.0 / 3.6;
        let (x0, x1) = (10.0, 280.0);
        let duration = (x1 - x0) / speed;
        let (tx_h, rx_h) = (3.0, 1.5);
        let scene = SceneSpec {
            reflectors: vec![
                Facet::vertical(
                    "facade",
                    Vec3::new(-50.0, 8.0, 0.0),
                    Vec3::new(350.0, 8.0, 0.0),
                    0.0,
                    12.0,
                    6.0,
                ),
                Facet::vertical(
                    "fence",
                    Vec3::new(350.0, -6.0, 0.0),
                    Vec3::new(-50.0, -6.0, 0.0),
                    0.0,
                    2.0,
                    10.0,
                ),
            ],
            scatterers: vec![Scatterer {
                label: "sign".into(),
                position: Vec3::new(150.0, 5.0, 3.0),
                gain_db: -10.0,
            }],
            tx_pose: Pose::at(Vec3::new(0.0, 0.0, tx_h)),
            rx_trajectory: Trajectory::linear(
                Vec3::new(x0, 0.0, rx_h),
                Vec3::new(x1, 0.0, rx_h),
                0.0,
                duration,
                Rotation3::identity(),
            ),
            carrier_frequency: fc,
            propagation: Propagation {
                path_loss_exponent: 2.07,
                shadowing_db: 3.0,
                ..Propagation::default()
            },
        };
        let lidar = LidarSpec {
            config: staggered_lidar(16, 256),
            mount: Vec3::new(0.0, 0.0, 0.3),
        };
        SessionConfig {
            session: SessionInfo {
                id: "v2i-road".into(),
                duration,
                created: default_created(),
                geolocation_rate: 120.0,
                geolocation_sigma: 0.02,
            },
            noise: NoiseSpec {
                enabled: true,
                variance: None,
            },
            b2b: B2bSpec {
                attenuation_db: 60.0,
                delay: 0.0,
                repetitions: 16,
            },
            clocks: default_clocks(),
            budget: BudgetLedger::mmwave_28ghz(),
            scene,
            waveform: default_waveform(),
            array: facing_back_upa(fc),
            schedule: SwitchSchedule::sequential(16, 8e-6, 50.0),
            impairments: default_impairments(16),
            lidar: Some(lidar),
            camera: Some(default_camera()),
            processing: ProcessingConfig::default(),
        }
    }

    /// Same road and drive with every reflector and scatterer removed,
    /// exponent 2 and no shadowing.
    pub fn v2i_free_space() -> Self {
        let mut cfg = Self::v2i();
        cfg.session.id = "v2i-free-space".into();
        cfg.scene.reflectors.clear();
        cfg.scene.scatterers.clear();
        cfg.scene.propagation = Propagation::default();
        cfg
    }

    /// Two-second indoor run: an 8 m × 6 m × 3 m room, a transmitter near
    /// one wall and a receiver walking 3 m away from it.
    pub fn desk() -> Self {
        let fc = 28e9;
        let duration = 2.0;
        let (w0, w1, d0, d1, h) = (-2.0, 8.0, -3.0, 3.0, 3.0);
        let c = |x, y, z| Vec3::new(x, y, z);
        let scene = SceneSpec {
            reflectors: vec![
                Facet::vertical("wall-north", c(w0, d1, 0.0), c(w1, d1, 0.0), 0.0, h, 7.0),
                Facet::vertical("wall-south", c(w1, d0, 0.0), c(w0, d0, 0.0), 0.0, h, 7.0),
                Facet::vertical("wall-west", c(w0, d0, 0.0), c(w0, d1, 0.0), 0.0, h, 9.0),
                Facet::vertical("wall-east", c(w1, d1, 0.0), c(w1, d0, 0.0), 0.0, h, 9.0),
                Facet::new(
                    "floor",
                    vec![c(w0, d0, 0.0), c(w1, d0, 0.0), c(w1, d1, 0.0), c(w0, d1, 0.0)],
                    12.0,
                ),
                Facet::new(
                    "ceiling",
                    vec![c(w0, d0, h), c(w0, d1, h), c(w1, d1, h), c(w1, d0, h)],
                    12.0,
                ),
            ],
            scatterers: vec![Scatterer {
                label: "cabinet".into(),
                position: c(1.0, -2.5, 1.2),
                gain_db: -6.0,
            }],
            tx_pose: Pose::at(c(0.0, 0.5, 1.2)),
            rx_trajectory: Trajectory::linear(
                c(2.0, 0.0, 1.2),
                c(5.0, 0.0, 1.2),
                0.0,
                duration,
                Rotation3::identity(),
            ),
            carrier_frequency: fc,
            propagation: Propagation::default(),
        };
        SessionConfig {
            session: SessionInfo {
                id: "desk-room".into(),
                duration,
                created: default_created(),
                geolocation_rate: 120.0,
                geolocation_sigma: 0.0,
            },
            noise: NoiseSpec {
                enabled: true,
                variance: None,
            },
            b2b: B2bSpec {
                attenuation_db: 60.0,
                delay: 0.0,
                repetitions: 4,
            },
            clocks: default_clocks(),
            budget: BudgetLedger::mmwave_28ghz(),
            scene,
            waveform: default_waveform(),
            array: facing_back_upa(fc),
            schedule: SwitchSchedule::sequential(16, 8e-6, 50.0),
            impairments: default_impairments(16),
            lidar: Some(LidarSpec {
                config: staggered_lidar(16, 128),
                mount: Vec3::new(0.0, 0.0, 0.3),
            }),
            camera: Some(default_camera()),
            processing: ProcessingConfig {
                sage_stride: 10,
                ..ProcessingConfig::default()
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "v2i" => Ok(Self::v2i()),
            "v2i-free-space" => Ok(Self::v2i_free_space()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::config(format!(
                "unknown preset `{name}` (v2i, v2i-free-space, desk)"
            ))),
        }
    }
}

/// 65 tones spanning 1 GHz.
fn default_waveform() -> ToneConfig {
    let spacing = 1e9 / 65.0;
    ToneConfig::new(spacing, 32, 128.0 * spacing)
}

/// 4 × 4 half-wavelength planar array in the y-z plane. It responds only
/// to the half space behind the direction of travel (−x), which removes
/// the front/back ambiguity of a planar array.
fn facing_back_upa(fc: f64) -> ArrayGeometry {
    let half = SPEED_OF_LIGHT / fc / 2.0;
    ArrayGeometry::upa(4, 4, half, ArrayPlane::Yz)
        .with_support(AngularSupport::degrees(90.0, 270.0, 0.0, 180.0))
}

fn default_impairments(m: usize) -> ImpairmentProfile {
    ImpairmentProfile {
        phase_offsets: (0..m)
            .map(|k| ((k as f64 * 2.3999632).rem_euclid(2.0 * PI)) - PI)
            .collect(),
        gain_ripple_db: (0..m).map(|k| 0.4 * ((k as f64) * 1.7).sin()).collect(),
        drift_rates: vec![],
        system_response: vec![ImpairmentProfile::raised_cosine_ripple(65, 3.0, 1.5)],
    }
}

fn default_clocks() -> ClockSpec {
    ClockSpec {
        channel: ClockInjection {
            offset: 0.120,
            drift: 2e-5,
            jitter: 1e-4,
        },
        lidar: ClockInjection {
            offset: -0.045,
            drift: -1e-5,
            jitter: 1e-4,
        },
        geolocation: ClockInjection::default(),
        pulse_interval: 0.5,
    }
}

/// Spinning LiDAR, 30° vertical field, 10 Hz, rows firing in a four-step
/// stagger of 2 columns per step.
fn staggered_lidar(rows: usize, cols: usize) -> LidarConfig {
    let mut cfg = LidarConfig::uniform(rows, cols, 10.0, 30f64.to_radians());
    cfg.max_range = 150.0;
    cfg.range_noise = 0.02;
    cfg.pixel_shifts = (0..rows).map(|r| 2 * (r as i64 % 4)).collect();
    let dt = cfg.column_interval;
    cfg.firing_delays = cfg.pixel_shifts.iter().map(|&s| s as f64 * dt).collect();
    cfg
}

/// Forward-looking camera (+x) rigidly attached near the LiDAR.
fn default_camera() -> CameraSpec {
    // Camera axes: z forward (LiDAR +x), x right (LiDAR −y), y down (LiDAR −z).
    let r = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::new(
        0.0, -1.0, 0.0, //
        0.0, 0.0, -1.0, //
        1.0, 0.0, 0.0,
    ));
    CameraSpec {
        intrinsics: Intrinsics {
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        },
        extrinsics: Extrinsics::new(r, Vec3::new(0.0, -0.05, -0.1)),
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::UnitQuaternion;
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ClockInjection, SessionConfig, MAX_SEED};
use super::format::{
    put_f32, put_f64, put_u32, write_atomic, RawStream, StreamHeader, StreamKind, StreamWriter,
};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::lidar::{synth_staggered_frame, RangeImage};
use crate::rng::{indexed_rng, sub_seed};
use crate::scene::{Pose, Trajectory};
use crate::sounder::{NoiseConfig, Snapshot};
use crate::sync::Modality;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;

/// Snapshots are synthesized in parallel blocks of this many.
const BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub kind: StreamKind,
    pub modality: Modality,
    pub file: String,
    pub count: u64,
    /// Nominal record rate, Hz (0 for one-off captures).
    pub rate: f64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub format_version: u32,
    pub session_id: String,
    pub created: String,
    pub seed: u64,
    /// Digest of `config` as stored below.
    pub config_sha256: String,
    pub streams: Vec<StreamEntry>,
    /// Effective configuration, including seeds derived from `seed`.
    pub config: SessionConfig,
}

impl SessionManifest {
    pub fn stream(&self, kind: StreamKind) -> Option<&StreamEntry> {
        self.streams.iter().find(|s| s.kind == kind)
    }
}

/// One geolocation fix on the geolocation device clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoFix {
    pub local_time: f64,
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

/// One pulse of the shared train as stamped by one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockPulse {
    pub modality: Modality,
    pub reference: f64,
    pub local: f64,
}

fn modality_code(m: Modality) -> u32 {
    match m {
        Modality::Channel => 0,
        Modality::Lidar => 1,
        Modality::Image => 2,
        Modality::Geolocation => 3,
    }
}

fn modality_from_code(c: u32) -> Option<Modality> {
    match c {
        0 => Some(Modality::Channel),
        1 => Some(Modality::Lidar),
        2 => Some(Modality::Image),
        3 => Some(Modality::Geolocation),
        _ => None,
    }
}

/// Device clock with its own jitter sub-stream.
struct DeviceClock {
    injection: ClockInjection,
    seed: u64,
}

impl DeviceClock {
    fn new(injection: ClockInjection, seed: u64, name: &str) -> Self {
        DeviceClock {
            injection,
            seed: sub_seed(seed, &format!("clocks/{name}")),
        }
    }

    fn stamp(&self, reference: f64, index: u64) -> f64 {
        let local = self.injection.model().to_local(reference);
        if self.injection.jitter == 0.0 {
            return local;
        }
        let z: f64 = StandardNormal.sample(&mut indexed_rng(self.seed, index));
        local + self.injection.jitter * z
    }
}

fn pose_clamped(traj: &Trajectory, t: f64) -> Pose {
    let (a, b) = traj.span();
    traj.pose(t.clamp(a, b))
        .expect("time clamped into the trajectory span")
}

/// Synthesizes a full session into `dir`: raw snapshots, a back-to-back
/// reference, staggered LiDAR frames, geolocation fixes and clock pulses,
/// all stamped by their injected device clocks. The result depends only
/// on `(cfg, seed)`.
pub fn generate_session(cfg: &SessionConfig, seed: u64, dir: &Path) -> Result<SessionManifest> {
    cfg.validate()?;
    if seed > MAX_SEED {
        return Err(Error::config(format!("seed must not exceed {MAX_SEED}")));
    }
    let mut cfg = cfg.clone();
    cfg.scene.propagation.shadowing_seed = sub_seed(seed, "shadowing") & MAX_SEED;
    fs::create_dir_all(dir)?;
    // A previous manifest must not describe the streams while they change.
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path)?;
    }

    let mut streams = vec![
        write_snapshots(&cfg, seed, dir)?,
        write_b2b(&cfg, seed, dir)?,
    ];
    if cfg.lidar.is_some() {
        streams.push(write_lidar(&cfg, seed, dir)?);
    }
    streams.push(write_geolocation(&cfg, seed, dir)?);
    streams.push(write_clocks(&cfg, seed, dir)?);

    let manifest = SessionManifest {
        format_version: MANIFEST_VERSION,
        session_id: cfg.session.id.clone(),
        created: cfg.session.created.clone(),
        seed,
        config_sha256: cfg.digest()?,
        streams,
        config: cfg,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
    write_atomic(&manifest_path, text.as_bytes())?;
    Ok(manifest)
}

fn entry(kind: StreamKind, modality: Modality, count: usize, rate: f64, sha256: String) -> StreamEntry {
    StreamEntry {
        kind,
        modality,
        file: kind.file_name().into(),
        count: count as u64,
        rate,
        sha256,
    }
}

fn encode_snapshot(s: &Snapshot) -> Vec<u8> {
    let m = s.elements();
    let mut out = Vec::with_capacity(8 * (2 + m + 2 * m * s.bins()));
    put_f64(&mut out, s.timestamp);
    put_f64(&mut out, s.noise_variance);
    for t in &s.element_times {
        put_f64(&mut out, *t);
    }
    for row in &s.response {
        for x in row {
            put_f64(&mut out, x.re);
            put_f64(&mut out, x.im);
        }
    }
    out
}

/// Moves a snapshot from reference time onto the device clock.
fn restamp(mut s: Snapshot, clock: &DeviceClock, index: u64) -> Snapshot {
    let t = s.timestamp;
    let local = clock.stamp(t, index);
    let scale = 1.0 + clock.injection.drift;
    for e in s.element_times.iter_mut() {
        *e = local + (*e - t) * scale;
    }
    s.timestamp = local;
    s
}

fn snapshot_dims(cfg: &SessionConfig) -> [u32; 2] {
    [cfg.array.len() as u32, cfg.waveform.tone_count() as u32]
}

fn write_snapshots(cfg: &SessionConfig, seed: u64, dir: &Path) -> Result<StreamEntry> {
    let sounder = cfg.sounder();
    let n = cfg.snapshot_count();
    let period = cfg.schedule.snapshot_period;
    let noise = NoiseConfig {
        enabled: cfg.noise.enabled,
        variance: cfg.noise_variance(),
        seed: sub_seed(seed, "noise"),
    };
    let clock = DeviceClock::new(cfg.clocks.channel, seed, "channel");
    let kind = StreamKind::Snapshots;
    let mut w = StreamWriter::create(
        &dir.join(kind.file_name()),
        StreamHeader::new(kind, snapshot_dims(cfg), n as u64),
    )?;
    for start in (0..n).step_by(BLOCK) {
        let block: Vec<Snapshot> = (start..(start + BLOCK).min(n))
            .into_par_iter()
            .map(|k| {
                let s = sounder.capture(&cfg.scene, k as f64 * period, &noise, k as u64)?;
                Ok(restamp(s, &clock, k as u64))
            })
            .collect::<Result<_>>()?;
        for s in &block {
            w.push(&encode_snapshot(s))?;
        }
    }
    Ok(entry(kind, Modality::Channel, n, 1.0 / period, w.finish()?))
}

fn write_b2b(cfg: &SessionConfig, seed: u64, dir: &Path) -> Result<StreamEntry> {
    let noise = NoiseConfig {
        enabled: cfg.noise.enabled,
        variance: cfg.noise_variance(),
        seed: sub_seed(seed, "b2b"),
    };
    let s = cfg
        .sounder()
        .capture_b2b(cfg.b2b.attenuation_db, cfg.b2b.delay, 0.0, cfg.b2b.repetitions, &noise, 0)?;
    let clock = DeviceClock::new(
        ClockInjection {
            jitter: 0.0,
            ..cfg.clocks.channel
        },
        seed,
        "channel",
    );
    let s = restamp(s, &clock, 0);
    let kind = StreamKind::B2b;
    let mut w = StreamWriter::create(
        &dir.join(kind.file_name()),
        StreamHeader::new(kind, snapshot_dims(cfg), 1),
    )?;
    w.push(&encode_snapshot(&s))?;
    Ok(entry(kind, Modality::Channel, 1, 0.0, w.finish()?))
}

fn write_lidar(cfg: &SessionConfig, seed: u64, dir: &Path) -> Result<StreamEntry> {
    let spec = cfg.lidar.as_ref().expect("lidar configured");
    let l = &spec.config;
    let n = cfg.lidar_frame_count();
    let clock = DeviceClock::new(cfg.clocks.lidar, seed, "lidar");
    let noise_seed = sub_seed(seed, "lidar");
    let traj = &cfg.scene.rx_trajectory;
    let pose_at = |t: f64| {
        let rx = pose_clamped(traj, t);
        Pose::new(rx.position + rx.rotation * spec.mount, rx.rotation, t)
    };
    let kind = StreamKind::Lidar;
    let mut w = StreamWriter::create(
        &dir.join(kind.file_name()),
        StreamHeader::new(kind, [l.rows as u32, l.cols as u32], n as u64),
    )?;
    let mut rec = Vec::with_capacity(8 + 4 * l.rows * l.cols);
    for k in 0..n {
        let t0 = k as f64 / l.frame_rate;
        let img = synth_staggered_frame(&cfg.scene, pose_at, l, t0, Some(noise_seed.wrapping_add(k as u64)));
        rec.clear();
        put_f64(&mut rec, clock.stamp(t0, k as u64));
        for v in &img.ranges {
            put_f32(&mut rec, *v);
        }
        w.push(&rec)?;
    }
    Ok(entry(kind, Modality::Lidar, n, l.frame_rate, w.finish()?))
}

fn write_geolocation(cfg: &SessionConfig, seed: u64, dir: &Path) -> Result<StreamEntry> {
    let n = cfg.geolocation_count();
    let rate = cfg.session.geolocation_rate;
    let sigma = cfg.session.geolocation_sigma;
    let clock = DeviceClock::new(cfg.clocks.geolocation, seed, "geolocation");
    let noise_seed = sub_seed(seed, "geolocation");
    let kind = StreamKind::Geolocation;
    let mut w = StreamWriter::create(
        &dir.join(kind.file_name()),
        StreamHeader::new(kind, [0, 0], n as u64),
    )?;
    let mut rec = Vec::with_capacity(64);
    for j in 0..n {
        let t = j as f64 / rate;
        let pose = pose_clamped(&cfg.scene.rx_trajectory, t);
        let mut p = pose.position;
        if sigma > 0.0 {
            let mut rng = indexed_rng(noise_seed, j as u64);
            for c in p.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c += sigma * z;
            }
        }
        let q = UnitQuaternion::from_rotation_matrix(&pose.rotation);
        rec.clear();
        put_f64(&mut rec, clock.stamp(t, j as u64));
        for v in [p.x, p.y, p.z, q.w, q.i, q.j, q.k] {
            put_f64(&mut rec, v);
        }
        w.push(&rec)?;
    }
    Ok(entry(kind, Modality::Geolocation, n, rate, w.finish()?))
}

const PULSED: [Modality; 3] = [Modality::Channel, Modality::Lidar, Modality::Geolocation];

fn write_clocks(cfg: &SessionConfig, seed: u64, dir: &Path) -> Result<StreamEntry> {
    let n = cfg.pulse_count();
    let c = &cfg.clocks;
    let clocks: Vec<DeviceClock> = PULSED
        .iter()
        .map(|m| {
            let inj = match m {
                Modality::Channel => c.channel,
                Modality::Lidar => c.lidar,
                _ => c.geolocation,
            };
            DeviceClock::new(inj, seed, &format!("pulses/{}", m.name()))
        })
        .collect();
    let kind = StreamKind::Clocks;
    let count = n * PULSED.len();
    let mut w = StreamWriter::create(
        &dir.join(kind.file_name()),
        StreamHeader::new(kind, [0, 0], count as u64),
    )?;
    let mut rec = Vec::with_capacity(24);
    for j in 0..n {
        let t = j as f64 * c.pulse_interval;
        for (m, clock) in PULSED.iter().zip(&clocks) {
            rec.clear();
            put_u32(&mut rec, modality_code(*m));
            put_u32(&mut rec, 0);
            put_f64(&mut rec, t);
            put_f64(&mut rec, clock.stamp(t, j as u64));
            w.push(&rec)?;
        }
    }
    Ok(entry(kind, Modality::Geolocation, count, 1.0 / c.pulse_interval, w.finish()?))
}

/// An opened, validated session directory.
#[derive(Debug, Clone)]
pub struct Session {
    pub dir: PathBuf,
    pub manifest: SessionManifest,
}

fn read_manifest(dir: &Path) -> Result<SessionManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)?;
    // Check the version before the schema so future layouts get a clear error.
    let raw: toml::Table = toml::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let version = raw.get("format_version").and_then(|v| v.as_integer());
    if version != Some(MANIFEST_VERSION as i64) {
        return Err(Error::UnsupportedVersion {
            file: path,
            found: version.unwrap_or(0) as u32,
            expected: MANIFEST_VERSION,
        });
    }
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Parses the manifest and checks every stream; see [`validate_session`].
pub fn read_session(dir: &Path) -> Result<Session> {
    let manifest = validate_session(dir)?;
    Ok(Session {
        dir: dir.to_path_buf(),
        manifest,
    })
}

/// Checks the manifest and every stream it lists: presence, header,
/// record counts against the manifest and the configuration, record
/// contents, and content digests.
pub fn validate_session(dir: &Path) -> Result<SessionManifest> {
    let manifest = read_manifest(dir)?;
    manifest.config.validate()?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest.config.digest()? != manifest.config_sha256 {
        return Err(Error::Format {
            file: manifest_path,
            offset: 0,
            reason: "config digest does not match the embedded configuration".into(),
        });
    }
    let cfg = &manifest.config;
    for kind in StreamKind::ALL {
        let expected = match kind {
            StreamKind::Snapshots => cfg.snapshot_count(),
            StreamKind::B2b => 1,
            StreamKind::Lidar if cfg.lidar.is_none() => continue,
            StreamKind::Lidar => cfg.lidar_frame_count(),
            StreamKind::Geolocation => cfg.geolocation_count(),
            StreamKind::Clocks => cfg.pulse_count() * PULSED.len(),
        } as u64;
        let Some(e) = manifest.stream(kind) else {
            return Err(Error::Format {
                file: manifest_path,
                offset: 0,
                reason: format!("no {} stream listed", kind.name()),
            });
        };
        if e.count != expected {
            return Err(Error::CountMismatch {
                file: manifest_path,
                expected,
                found: e.count,
            });
        }
    }
    let session = Session {
        dir: dir.to_path_buf(),
        manifest: manifest.clone(),
    };
    for e in &manifest.streams {
        let raw = session.raw(e.kind)?;
        let dims = raw.header.dims;
        let want = match e.kind {
            StreamKind::Snapshots | StreamKind::B2b => snapshot_dims(cfg),
            StreamKind::Lidar => {
                let l = &cfg.lidar.as_ref().expect("checked above").config;
                [l.rows as u32, l.cols as u32]
            }
            _ => [0, 0],
        };
        if dims != want {
            return Err(Error::Format {
                file: raw.path.clone(),
                offset: 16,
                reason: format!("dimensions {dims:?}, configuration implies {want:?}"),
            });
        }
        match e.kind {
            StreamKind::Snapshots | StreamKind::B2b => {
                decode_snapshots(&raw)?;
            }
            StreamKind::Lidar => {
                decode_lidar(&raw)?;
            }
            StreamKind::Geolocation => {
                decode_geolocation(&raw)?;
            }
            StreamKind::Clocks => {
                decode_clocks(&raw)?;
            }
        }
        if raw.digest() != e.sha256 {
            return Err(Error::Format {
                file: raw.path.clone(),
                offset: 0,
                reason: "content digest does not match the manifest".into(),
            });
        }
    }
    Ok(manifest)
}

fn check_time(raw: &RawStream, i: usize, t: f64, prev: &mut f64) -> Result<()> {
    if !t.is_finite() {
        return Err(raw.corrupt(i, "non-finite timestamp"));
    }
    if t <= *prev {
        return Err(raw.corrupt(i, format!("timestamp {t} does not increase")));
    }
    *prev = t;
    Ok(())
}

fn decode_snapshots(raw: &RawStream) -> Result<Vec<Snapshot>> {
    let [m, f] = raw.header.dims.map(|d| d as usize);
    let mut prev = f64::NEG_INFINITY;
    (0..raw.len())
        .map(|i| {
            let mut r = raw.record(i);
            let timestamp = r.f64();
            check_time(raw, i, timestamp, &mut prev)?;
            let noise_variance = r.f64();
            let element_times: Vec<f64> = (0..m).map(|_| r.f64()).collect();
            let response: Vec<Vec<Complex64>> = (0..m)
                .map(|_| (0..f).map(|_| Complex64::new(r.f64(), r.f64())).collect())
                .collect();
            if !(noise_variance >= 0.0)
                || element_times.iter().any(|t| !t.is_finite())
                || response.iter().flatten().any(|x| !x.is_finite())
            {
                return Err(raw.corrupt(i, "non-finite or negative field in snapshot"));
            }
            Ok(Snapshot {
                timestamp,
                element_times,
                response,
                noise_variance,
            })
        })
        .collect()
}

fn decode_lidar(raw: &RawStream) -> Result<Vec<RangeImage>> {
    let [rows, cols] = raw.header.dims.map(|d| d as usize);
    let mut prev = f64::NEG_INFINITY;
    (0..raw.len())
        .map(|i| {
            let mut r = raw.record(i);
            let t0 = r.f64();
            check_time(raw, i, t0, &mut prev)?;
            let ranges: Vec<f32> = (0..rows * cols).map(|_| r.f32()).collect();
            if ranges.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(raw.corrupt(i, "range must be finite and >= 0"));
            }
            Ok(RangeImage {
                rows,
                cols,
                ranges,
                staggered: true,
                t0,
            })
        })
        .collect()
}

fn decode_geolocation(raw: &RawStream) -> Result<Vec<GeoFix>> {
    let mut prev = f64::NEG_INFINITY;
    (0..raw.len())
        .map(|i| {
            let mut r = raw.record(i);
            let t = r.f64();
            check_time(raw, i, t, &mut prev)?;
            let v: Vec<f64> = (0..7).map(|_| r.f64()).collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(raw.corrupt(i, "non-finite geolocation field"));
            }
            let q = nalgebra::Quaternion::new(v[3], v[4], v[5], v[6]);
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(raw.corrupt(i, "orientation is not a unit quaternion"));
            }
            Ok(GeoFix {
                local_time: t,
                position: Vec3::new(v[0], v[1], v[2]),
                orientation: UnitQuaternion::from_quaternion(q),
            })
        })
        .collect()
}

fn decode_clocks(raw: &RawStream) -> Result<Vec<ClockPulse>> {
    (0..raw.len())
        .map(|i| {
            let mut r = raw.record(i);
            let code = r.u32();
            let _pad = r.u32();
            let (reference, local) = (r.f64(), r.f64());
            let modality = modality_from_code(code)
                .ok_or_else(|| raw.corrupt(i, format!("unknown modality code {code}")))?;
            if !(reference.is_finite() && local.is_finite()) {
                return Err(raw.corrupt(i, "non-finite pulse time"));
            }
            Ok(ClockPulse {
                modality,
                reference,
                local,
            })
        })
        .collect()
}

impl Session {
    /// Raw stream with structural checks (header, counts).
    pub fn raw(&self, kind: StreamKind) -> Result<RawStream> {
        let e = self.manifest.stream(kind).ok_or_else(|| Error::Dependency {
            stage: "read".into(),
            artifact: kind.file_name().into(),
        })?;
        let path = self.dir.join(&e.file);
        if !path.exists() {
            return Err(Error::Format {
                file: path,
                offset: 0,
                reason: "stream file listed in the manifest is missing".into(),
            });
        }
        RawStream::read(&path, kind, e.count)
    }

    pub fn snapshots(&self) -> Result<Vec<Snapshot>> {
        decode_snapshots(&self.raw(StreamKind::Snapshots)?)
    }

    pub fn b2b(&self) -> Result<Snapshot> {
        let mut v = decode_snapshots(&self.raw(StreamKind::B2b)?)?;
        v.pop()
            .ok_or_else(|| Error::InsufficientData("empty back-to-back stream".into()))
    }

    /// Staggered frames; `t0` is on the LiDAR clock.
    pub fn lidar_frames(&self) -> Result<Vec<RangeImage>> {
        decode_lidar(&self.raw(StreamKind::Lidar)?)
    }

    pub fn geolocation(&self) -> Result<Vec<GeoFix>> {
        decode_geolocation(&self.raw(StreamKind::Geolocation)?)
    }

    pub fn clock_pulses(&self) -> Result<Vec<ClockPulse>> {
        decode_clocks(&self.raw(StreamKind::Clocks)?)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.manifest.config
    }
}

//! Spinning-LiDAR range images: staggered synthesis, destaggering and
//! conversion to point clouds.
//!
//! Columns sweep clockwise: column `c` looks along `θ₀ − c·ω·Δt_col`. Row `r`
//! fires `τ_r` late, which skews its azimuth by `ω·τ_r`, so in a staggered
//! frame pixel `(r, c)` looks along `θ₀ − c·ω·Δt_col + ω·τ_r`. Destaggering
//! with `s_r = round(τ_r / Δt_col)` then maps each column to one azimuth.
//!
//! Beam elevation here is measured up from the sensor's horizontal plane.

use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::rng::keyed_seed;
use crate::scene::{Pose, SceneSpec};

/// Range value marking a pixel with no return.
pub const INVALID_RANGE: f32 = 0.0;

/// Direction in which `s_r` moves the sample index during destaggering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftSign {
    /// `D[r, c] = S[r, (c + s_r) mod W]`.
    #[default]
    Forward,
    /// `D[r, c] = S[r, (c - s_r) mod W]`.
    Backward,
}

impl ShiftSign {
    fn factor(self) -> i64 {
        match self {
            ShiftSign::Forward => 1,
            ShiftSign::Backward => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub rows: usize,
    pub cols: usize,
    /// ω, rad/s.
    pub rotation_rate: f64,
    /// Δt_col, s.
    pub column_interval: f64,
    /// τ_r per row, s.
    pub firing_delays: Vec<f64>,
    /// s_r per row, columns.
    pub pixel_shifts: Vec<i64>,
    /// Beam elevation above the horizontal per row, rad.
    pub beam_elevations: Vec<f64>,
    pub frame_rate: f64,
    pub max_range: f64,
    /// Additive Gaussian range noise σ, m.
    pub range_noise: f64,
    /// θ₀, azimuth of column 0, rad.
    #[serde(default)]
    pub start_azimuth: f64,
    #[serde(default)]
    pub shift_sign: ShiftSign,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self::os1_128()
    }
}

impl LidarConfig {
    /// 128 × 1024 at 10 Hz, 45° vertical field, 200 m, σ = 5 cm. Rows fire
    /// in a four-step stagger of 6 columns per step.
    pub fn os1_128() -> Self {
        let mut cfg = Self::uniform(128, 1024, 10.0, 45f64.to_radians());
        cfg.max_range = 200.0;
        cfg.range_noise = 0.05;
        let dt = cfg.column_interval;
        cfg.pixel_shifts = (0..128).map(|r| 6 * (r as i64 % 4)).collect();
        cfg.firing_delays = cfg.pixel_shifts.iter().map(|&s| s as f64 * dt).collect();
        cfg
    }

    /// No stagger, evenly spaced beams over `vertical_fov` centered on the
    /// horizontal, one revolution per frame.
    pub fn uniform(rows: usize, cols: usize, frame_rate: f64, vertical_fov: f64) -> Self {
        let rate = TAU * frame_rate;
        let elev = (0..rows)
            .map(|r| {
                if rows == 1 {
                    0.0
                } else {
                    vertical_fov / 2.0 - vertical_fov * r as f64 / (rows - 1) as f64
                }
            })
            .collect();
        LidarConfig {
            rows,
            cols,
            rotation_rate: rate,
            column_interval: 1.0 / (frame_rate * cols as f64),
            firing_delays: vec![0.0; rows],
            pixel_shifts: vec![0; rows],
            beam_elevations: elev,
            frame_rate,
            max_range: 120.0,
            range_noise: 0.0,
            start_azimuth: 0.0,
            shift_sign: ShiftSign::Forward,
        }
    }

    /// Replaces `s_r` with `round(ω τ_r / (ω Δt_col))`.
    pub fn with_derived_shifts(mut self) -> Self {
        self.pixel_shifts = (0..self.rows)
            .map(|r| (row_azimuth_offset(&self, r) / self.column_step()).round() as i64)
            .collect();
        self
    }

    /// Azimuth advance per column, rad.
    pub fn column_step(&self) -> f64 {
        self.rotation_rate * self.column_interval
    }

    pub fn column_azimuth(&self, c: f64) -> f64 {
        self.start_azimuth - c * self.column_step()
    }

    pub fn collect_violations(&self, errs: &mut Vec<String>) {
        if self.rows < 1 || self.cols < 1 {
            errs.push(format!("lidar raster {}×{} must be at least 1×1", self.rows, self.cols));
        }
        for (name, n) in [
            ("firing_delays", self.firing_delays.len()),
            ("pixel_shifts", self.pixel_shifts.len()),
            ("beam_elevations", self.beam_elevations.len()),
        ] {
            if n != self.rows {
                errs.push(format!("lidar.{name} has {n} entries, expected {}", self.rows));
            }
        }
        let rev = self.column_step() * self.cols as f64;
        if (rev - TAU).abs() > 1e-6 {
            errs.push(format!(
                "lidar ω·Δt_col·W = {rev:.9} rad, must be one revolution (2π)"
            ));
        }
        if !(self.max_range > 0.0) {
            errs.push("lidar.max_range must be > 0".into());
        }
        if !(self.range_noise >= 0.0) {
            errs.push("lidar.range_noise must be ≥ 0".into());
        }
        if !(self.frame_rate > 0.0) {
            errs.push("lidar.frame_rate must be > 0".into());
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
}

/// `t₀ + c·Δt_col + τ_r`.
pub fn pixel_time(cfg: &LidarConfig, r: usize, c: usize, t0: f64) -> Result<f64> {
    if r >= cfg.rows || c >= cfg.cols {
        return Err(Error::Range(format!(
            "pixel ({r}, {c}) outside {}×{} raster",
            cfg.rows, cfg.cols
        )));
    }
    Ok(t0 + c as f64 * cfg.column_interval + cfg.firing_delays[r])
}

/// `Δθ_r = ω·τ_r`.
pub fn row_azimuth_offset(cfg: &LidarConfig, r: usize) -> f64 {
    cfg.rotation_rate * cfg.firing_delays[r]
}

/// Unit beam vector in the sensor frame.
pub fn beam_direction(azimuth: f64, elevation: f64) -> Vec3 {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vec3::new(ce * ca, ce * sa, se)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub rows: usize,
    pub cols: usize,
    /// Row-major ranges in meters; [`INVALID_RANGE`] where there is no return.
    pub ranges: Vec<f32>,
    pub staggered: bool,
    /// Frame start time t₀.
    pub t0: f64,
}

impl RangeImage {
    pub fn invalid(rows: usize, cols: usize, staggered: bool, t0: f64) -> Self {
        RangeImage {
            rows,
            cols,
            ranges: vec![INVALID_RANGE; rows * cols],
            staggered,
            t0,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.ranges[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.ranges[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_valid(v: f32) -> bool {
        v != INVALID_RANGE && v.is_finite()
    }

    pub fn valid_count(&self) -> usize {
        self.ranges.iter().filter(|v| Self::is_valid(**v)).count()
    }
}

/// Forward model of a staggered frame: pixel `(r, c)` is sampled at
/// `pixel_time(r, c)` along azimuth `θ_c + Δθ_r`. Range noise is drawn
/// when `noise_seed` is given.
pub fn synth_staggered_frame<F>(
    scene: &SceneSpec,
    pose_at: F,
    cfg: &LidarConfig,
    t0: f64,
    noise_seed: Option<u64>,
) -> RangeImage
where
    F: Fn(f64) -> Pose + Sync,
{
    let mut img = RangeImage::invalid(cfg.rows, cfg.cols, true, t0);
    let sigma = cfg.range_noise;
    img.ranges
        .par_chunks_mut(cfg.cols)
        .enumerate()
        .for_each(|(r, row)| {
            let mut rng = noise_seed.map(|s| ChaCha8Rng::seed_from_u64(keyed_seed(s, &[r as i64])));
            let normal = Normal::new(0.0, sigma.max(0.0)).unwrap();
            let dtheta = row_azimuth_offset(cfg, r);
            let el = cfg.beam_elevations[r];
            for (c, out) in row.iter_mut().enumerate() {
                let t = t0 + c as f64 * cfg.column_interval + cfg.firing_delays[r];
                let pose = pose_at(t);
                let beam = beam_direction(cfg.column_azimuth(c as f64) + dtheta, el);
                let hit = scene.ground_truth_ranges(&pose, std::slice::from_ref(&beam))[0];
                let noise = match rng.as_mut() {
                    Some(g) if sigma > 0.0 => normal.sample(g),
                    _ => 0.0,
                };
                if let Some(d) = hit {
                    let v = d + noise;
                    if d <= cfg.max_range && v > 0.0 {
                        *out = v as f32;
                    }
                }
            }
        });
    img
}

fn shift_rows(img: &RangeImage, cfg: &LidarConfig, direction: i64) -> Vec<f32> {
    let w = img.cols as i64;
    let mut out = vec![INVALID_RANGE; img.ranges.len()];
    for r in 0..img.rows {
        let s = direction * cfg.shift_sign.factor() * cfg.pixel_shifts[r];
        let src = img.row(r);
        let dst = &mut out[r * img.cols..(r + 1) * img.cols];
        for (c, d) in dst.iter_mut().enumerate() {
            *d = src[(c as i64 + s).rem_euclid(w) as usize];
        }
    }
    out
}

fn check_shape(img: &RangeImage, cfg: &LidarConfig) -> Result<()> {
    if img.rows != cfg.rows || img.cols != cfg.cols || cfg.pixel_shifts.len() != cfg.rows {
        return Err(Error::config(format!(
            "range image {}×{} does not match lidar config {}×{}",
            img.rows, img.cols, cfg.rows, cfg.cols
        )));
    }
    Ok(())
}

/// `D[r, c] = S[r, (c + s_r) mod W]` (sign per [`ShiftSign`]).
pub fn destagger(s: &RangeImage, cfg: &LidarConfig) -> Result<RangeImage> {
    if !s.staggered {
        return Err(Error::State("frame is already destaggered".into()));
    }
    check_shape(s, cfg)?;
    Ok(RangeImage {
        ranges: shift_rows(s, cfg, 1),
        staggered: false,
        ..s.clone()
    })
}

/// Inverse of [`destagger`].
pub fn restagger(d: &RangeImage, cfg: &LidarConfig) -> Result<RangeImage> {
    if d.staggered {
        return Err(Error::State("frame is already staggered".into()));
    }
    check_shape(d, cfg)?;
    Ok(RangeImage {
        ranges: shift_rows(d, cfg, -1),
        staggered: true,
        ..d.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    /// Sensor-frame points, m.
    pub points: Vec<Vec3>,
    pub rows: Vec<u32>,
    pub cols: Vec<u32>,
    pub timestamp: f64,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Azimuth of destaggered pixel `(r, c)`. Equals the column azimuth when
/// `s_r` matches `τ_r`; otherwise the rounding residual is kept so points
/// stay geometrically exact.
pub fn destaggered_azimuth(cfg: &LidarConfig, r: usize, c: usize) -> f64 {
    let src = c as f64 + (cfg.shift_sign.factor() * cfg.pixel_shifts[r]) as f64;
    cfg.column_azimuth(src) + row_azimuth_offset(cfg, r)
}

pub fn to_points(d: &RangeImage, cfg: &LidarConfig) -> Result<PointCloud> {
    if d.staggered {
        return Err(Error::State("to_points needs a destaggered frame".into()));
    }
    check_shape(d, cfg)?;
    let mut pc = PointCloud {
        timestamp: d.t0,
        ..Default::default()
    };
    for r in 0..d.rows {
        for c in 0..d.cols {
            let v = d.get(r, c);
            if !RangeImage::is_valid(v) {
                continue;
            }
            let dir = beam_direction(destaggered_azimuth(cfg, r, c), cfg.beam_elevations[r]);
            pc.points.push(dir * v as f64);
            pc.rows.push(r as u32);
            pc.cols.push(c as u32);
        }
    }
    Ok(pc)
}

#[derive(Debug, Serialize, Deserialize)]
struct RasterSidecar {
    format: String,
    version: u32,
    endianness: String,
    rows: usize,
    cols: usize,
    staggered: bool,
    t0: f64,
    lidar: LidarConfig,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".toml");
    PathBuf::from(p)
}

/// Row-major little-endian f32 raster plus a `<path>.toml` sidecar.
pub fn write_range_image(path: &Path, img: &RangeImage, cfg: &LidarConfig) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.ranges.len() * 4);
    for v in &img.ranges {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let side = RasterSidecar {
        format: "range-f32".into(),
        version: 1,
        endianness: "little".into(),
        rows: img.rows,
        cols: img.cols,
        staggered: img.staggered,
        t0: img.t0,
        lidar: cfg.clone(),
    };
    fs::write(
        sidecar_path(path),
        toml::to_string(&side).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    Ok(())
}

pub fn read_range_image(path: &Path) -> Result<(RangeImage, LidarConfig)> {
    let side_path = sidecar_path(path);
    let side: RasterSidecar = toml::from_str(&fs::read_to_string(&side_path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", side_path.display())))?;
    if side.version != 1 {
        return Err(Error::UnsupportedVersion {
            file: side_path,
            found: side.version,
            expected: 1,
        });
    }
    if side.endianness != "little" {
        return Err(Error::Format {
            file: side_path,
            offset: 0,
            reason: format!("unsupported endianness {}", side.endianness),
        });
    }
    let bytes = fs::read(path)?;
    let want = side.rows * side.cols * 4;
    if bytes.len() != want {
        return Err(Error::Format {
            file: path.to_path_buf(),
            offset: bytes.len() as u64,
            reason: format!("expected {want} bytes"),
        });
    }
    let ranges = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((
        RangeImage {
            rows: side.rows,
            cols: side.cols,
            ranges,
            staggered: side.staggered,
            t0: side.t0,
        },
        side.lidar,
    ))
}

/// 1st and 99th percentile of the valid ranges (nearest rank).
pub fn percentile_bounds(img: &RangeImage) -> Option<(f32, f32)> {
    let mut v: Vec<f32> = img.ranges.iter().copied().filter(|x| RangeImage::is_valid(*x)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f32::total_cmp);
    let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    Some((at(0.01), at(0.99)))
}

/// Binary PGM render. Invalid pixels are black; valid ranges are clamped to
/// the 1–99 percentile and mapped to 1..=255.
pub fn render_pgm(img: &RangeImage, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", img.cols, img.rows)?;
    let (lo, hi) = percentile_bounds(img).unwrap_or((0.0, 1.0));
    let span = (hi - lo).max(f32::EPSILON);
    let px: Vec<u8> = img
        .ranges
        .iter()
        .map(|&v| {
            if !RangeImage::is_valid(v) {
                0
            } else {
                let x = ((v.clamp(lo, hi) - lo) / span).clamp(0.0, 1.0);
                1 + (x * 254.0).round() as u8
            }
        })
        .collect();
    f.write_all(&px)?;
    Ok(())
}

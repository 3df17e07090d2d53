use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ProcessingConfig, SessionConfig};
use super::format::{file_digest, write_atomic, StreamKind};
use super::generate::{GeoFix, Session};
use crate::calib::{apply_calibration, b2b_extract, CirEntry, CirMatrix, SystemResponse};
use crate::error::{Error, Result};
use crate::estim::{
    cluster_pdp, fit_log_distance, path_loss_series, pdp, sage_estimate, LogDistanceFit, Pdp,
    PathEstimate, PathEstimates,
};
use crate::fusion::{associate_paths_to_objects, overlay, ObjectKind};
use crate::geom::{db_to_lin, lin_to_db};
use crate::lidar::{destagger, read_range_image, to_points, write_range_image};
use crate::scene::Pose;
use crate::sounder::{max_measurable_path_loss, BudgetReport, Snapshot};
use crate::sync::{align, fit_clock_model, AlignOptions, ClockModel, Modality, SampledStream};
use crate::Vec3;

/// Bumped whenever a stage's output format or algorithm changes, so old
/// stamps stop matching.
const STAGE_VERSION: u32 = 1;
const STAMP_DIR: &str = "stamps";
pub const REPORT_FILE: &str = "report.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Calibrate,
    Sync,
    Pdp,
    #[serde(rename = "pl")]
    PathLoss,
    Sage,
    Cluster,
    Destagger,
    Fuse,
}

impl Stage {
    /// Canonical execution order.
    pub const ALL: [Stage; 8] = [
        Stage::Calibrate,
        Stage::Sync,
        Stage::Pdp,
        Stage::PathLoss,
        Stage::Sage,
        Stage::Cluster,
        Stage::Destagger,
        Stage::Fuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Calibrate => "calibrate",
            Stage::Sync => "sync",
            Stage::Pdp => "pdp",
            Stage::PathLoss => "pl",
            Stage::Sage => "sage",
            Stage::Cluster => "cluster",
            Stage::Destagger => "destagger",
            Stage::Fuse => "fuse",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Calibrate | Stage::Sync | Stage::Destagger => &[],
            Stage::Pdp | Stage::Sage => &[Stage::Calibrate],
            Stage::PathLoss => &[Stage::Calibrate, Stage::Sync],
            Stage::Cluster => &[Stage::Pdp],
            Stage::Fuse => &[Stage::Sync, Stage::Sage, Stage::Destagger],
        }
    }

    fn streams(self) -> &'static [StreamKind] {
        match self {
            Stage::Calibrate => &[StreamKind::B2b],
            Stage::Sync => &[StreamKind::Clocks, StreamKind::Snapshots, StreamKind::Lidar, StreamKind::Geolocation],
            Stage::Pdp | Stage::Sage => &[StreamKind::Snapshots],
            Stage::PathLoss => &[StreamKind::Snapshots, StreamKind::Geolocation],
            Stage::Cluster => &[],
            Stage::Destagger => &[StreamKind::Lidar],
            Stage::Fuse => &[StreamKind::Geolocation],
        }
    }

    /// The processing options this stage reads, in a stable text form.
    fn options(self, p: &ProcessingConfig) -> String {
        match self {
            Stage::Calibrate | Stage::Sync => String::new(),
            Stage::Pdp => format!("{:?}|{}", p.pdp, p.pdp_stride),
            Stage::PathLoss => format!("{:?}|{}", p.pathloss, p.reference_distance),
            Stage::Sage => format!("{:?}|{}", p.sage, p.sage_stride),
            Stage::Cluster => format!("{:?}", p.cluster),
            Stage::Destagger => format!("{}", p.raster_frame),
            Stage::Fuse => format!("{:?}", p.association),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown stage `{s}` (calibrate, sync, pdp, pl, sage, cluster, destagger, fuse)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

/// A delimited table or binary raster produced by a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableInfo {
    pub stage: Stage,
    pub name: String,
    /// Path relative to the output directory.
    pub file: String,
    pub columns: Vec<Column>,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OutputDigest {
    file: String,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamp {
    stage: Stage,
    input_sha256: String,
    outputs: Vec<OutputDigest>,
    tables: Vec<TableInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path_loss_fit: Option<LogDistanceFit>,
}

/// Everything the pipeline produced, with provenance. Tables and rasters
/// live as files under the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub session_id: String,
    pub seed: u64,
    /// Digest of the session configuration with the processing options in
    /// effect for this run.
    pub config_sha256: String,
    pub stages: Vec<Stage>,
    pub tables: Vec<TableInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_loss_fit: Option<LogDistanceFit>,
    pub budget: BudgetReport,
    /// Stages run in this call. Not persisted.
    #[serde(skip)]
    pub executed: Vec<Stage>,
    /// Stages whose stamp matched. Not persisted.
    #[serde(skip)]
    pub skipped: Vec<Stage>,
}

struct Ctx<'a> {
    session: &'a Session,
    cfg: SessionConfig,
    out: &'a Path,
    provenance: String,
}

impl Ctx<'_> {
    fn proc(&self) -> &ProcessingConfig {
        &self.cfg.processing
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.out.join(STAMP_DIR).join(format!("{}.toml", stage.name()))
    }

    fn read_stamp(&self, stage: Stage) -> Option<Stamp> {
        let text = fs::read_to_string(self.stamp_path(stage)).ok()?;
        toml::from_str(&text).ok()
    }

    /// A stamp whose outputs are all present and unmodified.
    fn intact_stamp(&self, stage: Stage) -> Option<Stamp> {
        let stamp = self.read_stamp(stage)?;
        let ok = stamp.outputs.iter().all(|o| {
            file_digest(&self.out.join(&o.file)).is_ok_and(|d| d == o.sha256)
        });
        ok.then_some(stamp)
    }

    fn input_digest(&self, stage: Stage, deps: &[Stamp]) -> String {
        let mut h = Sha256::new();
        h.update(stage.name());
        h.update(STAGE_VERSION.to_le_bytes());
        h.update(&self.session.manifest.config_sha256);
        for kind in stage.streams() {
            if let Some(e) = self.session.manifest.stream(*kind) {
                h.update(&e.sha256);
            }
        }
        h.update(stage.options(self.proc()));
        for d in deps {
            h.update(&d.input_sha256);
            for o in &d.outputs {
                h.update(&o.sha256);
            }
        }
        hex::encode(h.finalize())
    }

    fn write(&self, rel: &str, bytes: &[u8], outputs: &mut Vec<OutputDigest>) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)?;
        outputs.push(OutputDigest {
            file: rel.into(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }
}

/// Accumulates one CSV table with a provenance and units preamble.
struct Table {
    stage: Stage,
    name: &'static str,
    columns: Vec<(String, String)>,
    rows: Vec<String>,
}

impl Table {
    fn new(stage: Stage, name: &'static str, columns: &[(&str, &str)]) -> Self {
        Table {
            stage,
            name,
            columns: columns.iter().map(|(c, u)| (c.to_string(), u.to_string())).collect(),
            rows: vec![],
        }
    }

    fn push(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells.join(","));
    }

    fn file(&self) -> String {
        format!("{}/{}.csv", self.stage.name(), self.name)
    }

    fn render(&self, provenance: &str) -> String {
        let mut s = String::new();
        s.push_str(&format!("# table: {}/{}\n", self.stage.name(), self.name));
        s.push_str(&format!("# {provenance}\n"));
        let units: Vec<String> = self.columns.iter().map(|(c, u)| format!("{c}={u}")).collect();
        s.push_str(&format!("# units: {}\n", units.join(" ")));
        let names: Vec<&str> = self.columns.iter().map(|(c, _)| c.as_str()).collect();
        s.push_str(&names.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn save(self, ctx: &Ctx, outputs: &mut Vec<OutputDigest>, tables: &mut Vec<TableInfo>) -> Result<()> {
        let file = self.file();
        ctx.write(&file, self.render(&ctx.provenance).as_bytes(), outputs)?;
        tables.push(TableInfo {
            stage: self.stage,
            name: self.name.into(),
            file,
            columns: self
                .columns
                .into_iter()
                .map(|(name, unit)| Column { name, unit })
                .collect(),
            rows: self.rows.len(),
        });
        Ok(())
    }
}

/// Numeric rows of a table written by [`Table`], header and comments
/// skipped. Non-numeric cells parse as NaN.
fn read_numeric(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClockModels {
    channel: ClockModel,
    lidar: Option<ClockModel>,
    geolocation: ClockModel,
}

/// Runs `stages` in the order given against `session`, writing artifacts
/// under `out`. A stage whose inputs and outputs are unchanged since its
/// last run is skipped. A stage whose prerequisite artifacts are missing
/// fails with [`Error::Dependency`]. `processing` overrides the options
/// stored in the session.
pub fn run_pipeline(
    session: &Session,
    stages: &[Stage],
    out: &Path,
    processing: Option<&ProcessingConfig>,
) -> Result<ReportBundle> {
    let mut cfg = session.manifest.config.clone();
    if let Some(p) = processing {
        cfg.processing = p.clone();
    }
    let mut errs = vec![];
    cfg.processing.collect_violations(&mut errs);
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let config_sha256 = cfg.digest()?;
    fs::create_dir_all(out.join(STAMP_DIR))?;
    let ctx = Ctx {
        session,
        provenance: format!(
            "session={} seed={} config_sha256={}",
            session.manifest.session_id, session.manifest.seed, config_sha256
        ),
        cfg,
        out,
    };
    let mut executed = vec![];
    let mut skipped = vec![];
    for &stage in stages {
        let mut deps = vec![];
        for &d in stage.prerequisites() {
            let stamp = ctx.intact_stamp(d).ok_or_else(|| Error::Dependency {
                stage: stage.name().into(),
                artifact: primary_artifact(d).into(),
            })?;
            deps.push(stamp);
        }
        let digest = ctx.input_digest(stage, &deps);
        if ctx
            .intact_stamp(stage)
            .is_some_and(|s| s.input_sha256 == digest)
        {
            skipped.push(stage);
            continue;
        }
        // Drop the old stamp first: a failed run must not leave it valid.
        let stamp_path = ctx.stamp_path(stage);
        if stamp_path.exists() {
            fs::remove_file(&stamp_path)?;
        }
        let mut stamp = execute(&ctx, stage)?;
        stamp.input_sha256 = digest;
        let text = toml::to_string(&stamp).map_err(|e| Error::Parse(format!("stamp: {e}")))?;
        write_atomic(&stamp_path, text.as_bytes())?;
        executed.push(stage);
    }

    let mut bundle = ReportBundle {
        session_id: session.manifest.session_id.clone(),
        seed: session.manifest.seed,
        config_sha256,
        stages: vec![],
        tables: vec![],
        path_loss_fit: None,
        budget: max_measurable_path_loss(&ctx.cfg.budget, None),
        executed,
        skipped,
    };
    for stage in Stage::ALL {
        if let Some(s) = ctx.intact_stamp(stage) {
            bundle.stages.push(stage);
            bundle.tables.extend(s.tables);
            if s.path_loss_fit.is_some() {
                bundle.path_loss_fit = s.path_loss_fit;
            }
        }
    }
    let text = toml::to_string(&bundle).map_err(|e| Error::Parse(format!("report: {e}")))?;
    write_atomic(&out.join(REPORT_FILE), text.as_bytes())?;
    Ok(bundle)
}

fn primary_artifact(stage: Stage) -> &'static str {
    match stage {
        Stage::Calibrate => "calibrate/system_response.toml",
        Stage::Sync => "sync/clock_models.toml",
        Stage::Pdp => "pdp/waterfall.csv",
        Stage::PathLoss => "pl/series.csv",
        Stage::Sage => "sage/paths.csv",
        Stage::Cluster => "cluster/clusters.csv",
        Stage::Destagger => "destagger/destaggered.f32",
        Stage::Fuse => "fuse/associations.csv",
    }
}

fn execute(ctx: &Ctx, stage: Stage) -> Result<Stamp> {
    let mut st = Stamp {
        stage,
        input_sha256: String::new(),
        outputs: vec![],
        tables: vec![],
        path_loss_fit: None,
    };
    match stage {
        Stage::Calibrate => calibrate(ctx, &mut st)?,
        Stage::Sync => sync(ctx, &mut st)?,
        Stage::Pdp => pdp_stage(ctx, &mut st)?,
        Stage::PathLoss => path_loss(ctx, &mut st)?,
        Stage::Sage => sage(ctx, &mut st)?,
        Stage::Cluster => cluster(ctx, &mut st)?,
        Stage::Destagger => destagger_stage(ctx, &mut st)?,
        Stage::Fuse => fuse(ctx, &mut st)?,
    }
    Ok(st)
}

fn missing_stream(stage: Stage, e: Error) -> Error {
    match e {
        Error::Dependency { artifact, .. } => Error::Dependency {
            stage: stage.name().into(),
            artifact,
        },
        other => other,
    }
}

fn calibrate(ctx: &Ctx, st: &mut Stamp) -> Result<()> {
    let b2b = ctx.session.b2b()?;
    let sounder = ctx.cfg.sounder();
    let sys = b2b_extract(
        &b2b,
        &sounder.freq_grid(),
        ctx.cfg.b2b.reference(),
        &sounder.waveform.active_mask(),
    )?;
    let text = toml::to_string(&sys).map_err(|e| Error::Parse(format!("system response: {e}")))?;
    ctx.write(primary_artifact(Stage::Calibrate), text.as_bytes(), &mut st.outputs)?;
    let mut t = Table::new(
        Stage::Calibrate,
        "system_response",
        &[("channel", "-"), ("bin", "-"), ("freq_hz", "Hz"), ("gain_db", "dB"), ("phase_rad", "rad")],
    );
    for (m, row) in sys.response.iter().enumerate() {
        for (f, x) in row.iter().enumerate() {
            if !sys.active[f] {
                continue;
            }
            t.push(vec![
                m.to_string(),
                f.to_string(),
                format!("{:.1}", sys.freqs[f]),
                format!("{:.6}", lin_to_db(x.norm_sqr())),
                format!("{:.6}", x.arg()),
            ]);
        }
    }
    t.save(ctx, &mut st.outputs, &mut st.tables)
}

fn load_system_response(ctx: &Ctx) -> Result<SystemResponse> {
    let path = ctx.out.join(primary_artifact(Stage::Calibrate));
    toml::from_str(&fs::read_to_string(&path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn load_clock_models(ctx: &Ctx) -> Result<ClockModels> {
    let path = ctx.out.join(primary_artifact(Stage::Sync));
    toml::from_str(&fs::read_to_string(&path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn sync(ctx: &Ctx, st: &mut Stamp) -> Result<()> {
    let pulses = ctx.session.clock_pulses()?;
    let fit = |m: Modality| -> Result<ClockModel> {
        let pairs: Vec<(f64, f64)> = pulses
            .iter()
            .filter(|p| p.modality == m)
            .map(|p| (p.local, p.reference))
            .collect();
        let mut model = fit_clock_model(&pairs)?;
        model.reference = "geolocation pulse train".into();
        Ok(model)
    };
    let has_lidar = ctx.cfg.lidar.is_some();
    let models = ClockModels {
        channel: fit(Modality::Channel)?,
        lidar: if has_lidar { Some(fit(Modality::Lidar)?) } else { None },
        geolocation: fit(Modality::Geolocation)?,
    };
    let text = toml::to_string(&models).map_err(|e| Error::Parse(format!("clock models: {e}")))?;
    ctx.write(primary_artifact(Stage::Sync), text.as_bytes(), &mut st.outputs)?;

    let mut t = Table::new(
        Stage::Sync,
        "clock_models",
        &[
            ("modality", "-"),
            ("offset_s", "s"),
            ("drift", "s/s"),
            ("residual_rms_s", "s"),
            ("injected_offset_s", "s"),
            ("injected_drift", "s/s"),
        ],
    );
    let c = &ctx.cfg.clocks;
    let mut rows = vec![("channel", &models.channel, c.channel)];
    if let Some(l) = &models.lidar {
        rows.push(("lidar", l, c.lidar));
    }
    rows.push(("geolocation", &models.geolocation, c.geolocation));
    for (name, m, inj) in rows {
        t.push(vec![
            name.into(),
            format!("{:.9}", m.offset),
            format!("{:.3e}", m.drift),
            format!("{:.3e}", m.residual_rms),
            format!("{:.9}", inj.offset),
            format!("{:.3e}", inj.drift),
        ]);
    }
    t.save(ctx, &mut st.outputs, &mut st.tables)?;

    let grid = snapshot_reference_times(ctx, &models.channel)?;
    let geo = ctx.session.geolocation()?;
    let mut streams = vec![geo_stream(&geo, &models.geolocation)];
    if has_lidar {
        let times = ctx.session.lidar_frames()?.iter().map(|f| f.t0).collect();
        streams.push(SampledStream::frames(
            Modality::Lidar,
            times,
            models.lidar.clone().expect("fitted above"),
        ));
    }
    let timeline = align(&streams, &grid, &AlignOptions::default())?;
    let mut csv = vec![];
    timeline.write_csv(&mut csv)?;
    let mut text = format!(
        "# table: sync/timeline\n# {}\n# units: t_ref=s *_residual_s=s geolocation_v0..v2=m geolocation_v3..v6=quaternion\n",
        ctx.provenance
    );
    text.push_str(&String::from_utf8_lossy(&csv));
    let rel = "sync/timeline.csv";
    ctx.write(rel, text.as_bytes(), &mut st.outputs)?;
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap_or("");
    st.tables.push(TableInfo {
        stage: Stage::Sync,
        name: "timeline".into(),
        file: rel.into(),
        columns: header
            .split(',')
            .map(|c| Column {
                name: c.into(),
                unit: column_unit(c).into(),
            })
            .collect(),
        rows: grid.len(),
    });
    Ok(())
}

fn column_unit(c: &str) -> &'static str {
    if c == "t_ref" || c.ends_with("_s") {
        "s"
    } else if c.ends_with("_v0") || c.ends_with("_v1") || c.ends_with("_v2") {
        "m"
    } else if c.contains("_v") {
        "-"
    } else {
        "-"
    }
}

fn geo_stream(geo: &[GeoFix], model: &ClockModel) -> SampledStream {
    SampledStream::values(
        Modality::Geolocation,
        geo.iter().map(|g| g.local_time).collect(),
        geo.iter()
            .map(|g| {
                let q = g.orientation;
                vec![g.position.x, g.position.y, g.position.z, q.w, q.i, q.j, q.k]
            })
            .collect(),
        ClockModel {
            // Device rate, not the modality default.
            ..model.clone()
        },
    )
}

fn snapshot_reference_times(ctx: &Ctx, channel: &ClockModel) -> Result<Vec<f64>> {
    let raw = ctx.session.raw(StreamKind::Snapshots)?;
    Ok((0..raw.len())
        .map(|i| channel.to_reference(raw.record(i).f64()).time)
        .collect())
}

/// Receiver poses at reference instants `grid`, interpolated from the
/// geolocation fixes.
fn rx_poses(ctx: &Ctx, models: &ClockModels, grid: &[f64]) -> Result<Vec<Pose>> {
    let geo = ctx.session.geolocation()?;
    let mut stream = geo_stream(&geo, &models.geolocation);
    stream.nominal_rate = ctx.cfg.session.geolocation_rate;
    let tl = align(&[stream], grid, &AlignOptions::default())?;
    tl.columns[0]
        .samples
        .iter()
        .zip(grid)
        .map(|(s, t)| {
            let v = s.value.as_ref().ok_or_else(|| {
                Error::InsufficientData(format!("no geolocation fix near t = {t:.6} s"))
            })?;
            let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                v[3], v[4], v[5], v[6],
            ));
            Ok(Pose::new(Vec3::new(v[0], v[1], v[2]), q.to_rotation_matrix(), *t))
        })
        .collect()
}

fn calibrated(snaps: &[Snapshot], sys: &SystemResponse) -> Result<Vec<CirEntry>> {
    snaps.iter().map(|s| apply_calibration(s, sys)).collect()
}

fn strided(snaps: Vec<Snapshot>, stride: usize) -> Vec<(usize, Snapshot)> {
    snaps.into_iter().enumerate().step_by(stride).collect()
}

/// Element-averaged PDP of one calibrated capture.
fn mean_pdp(e: &CirEntry, spacing: f64, opts: crate::estim::PdpOptions) -> Pdp {
    let mut acc: Option<Pdp> = None;
    for row in &e.response {
        let p = pdp(row, spacing, e.timestamp, opts);
        match acc.as_mut() {
            None => acc = Some(p),
            Some(a) => a.power.iter_mut().zip(&p.power).for_each(|(x, y)| *x += y),
        }
    }
    let mut a = acc.expect("captures have at least one element");
    let m = e.elements() as f64;
    a.power.iter_mut().for_each(|x| *x /= m);
    a
}

/// dB with a floor so that empty bins stay printable.
fn db(x: f64) -> f64 {
    lin_to_db(x.max(1e-30))
}

fn pdp_stage(ctx: &Ctx, st: &mut Stamp) -> Result<()> {
    let sys = load_system_response(ctx)?;
    let p = ctx.proc();
    let snaps = strided(ctx.session.snapshots()?, p.pdp_stride);
    let spacing = ctx.cfg.waveform.tone_spacing;
    let pdps: Vec<(usize, Pdp)> = snaps
        .par_iter()
        .map(|(i, s)| Ok((*i, mean_pdp(&apply_calibration(s, &sys)?, spacing, p.pdp))))
        .collect::<Result<_>>()?;
    let Some((_, first)) = pdps.first() else {
        return Err(Error::InsufficientData("no snapshots to profile".into()));
    };
    let mut axis = Table::new(Stage::Pdp, "delays", &[("bin", "-"), ("delay_ns", "ns")]);
    for (k, d) in first.delays.iter().enumerate() {
        axis.push(vec![k.to_string(), format!("{:.6}", d * 1e9)]);
    }
    let mut cols: Vec<(String, String)> = vec![
        ("snapshot".into(), "-".into()),
        ("t_local_s".into(), "s".into()),
    ];
    cols.extend((0..first.len()).map(|k| (format!("p{k}"), "dB".to_string())));
    let col_refs: Vec<(&str, &str)> = cols.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let mut grid = Table::new(Stage::Pdp, "waterfall", &col_refs);
    for (i, p) in &pdps {
        let mut cells = vec![i.to_string(), format!("{:.9}", p.timestamp)];
        cells.extend(p.power.iter().map(|x| format!("{:.6}", db(*x))));
        grid.push(cells);
    }
    grid.save(ctx, &mut st.outputs, &mut st.tables)?;
    axis.save(ctx, &mut st.outputs, &mut st.tables)
}

fn cluster(ctx: &Ctx, st: &mut Stamp) -> Result<()> {
    let delays: Vec<f64> = read_numeric(&ctx.out.join("pdp/delays.csv"))?
        .iter()
        .map(|r| r[1] * 1e-9)
        .collect();
    let rows = read_numeric(&ctx.out.join(primary_artifact(Stage::Pdp)))?;
    let mut t = Table::new(
        Stage::Cluster,
        "clusters",
        &[
            ("snapshot", "-"),
            ("t_local_s", "s"),
            ("cluster", "-"),
            ("centroid_delay_ns", "ns"),
            ("power_db", "dB"),
            ("peak_db", "dB"),
            ("members", "-"),
        ],
    );
    let mut counts = Table::new(
        Stage::Cluster,
        "counts",
        &[("snapshot", "-"), ("t_local_s", "s"), ("clusters", "-"), ("floor_db", "dB")],
    );
    for r in &rows {
        let profile = Pdp {
            timestamp: r[1],
            delays: delays.clone(),
            power: r[2..].iter().map(|x| db_to_lin(*x)).collect(),
        };
        let set = cluster_pdp(&profile, &ctx.proc().cluster);
        for c in &set.clusters {
            t.push(vec![
                format!("{}", r[0] as usize),
                format!("{:.9}", r[1]),
                c.id.to_string(),
                format!("{:.6}", c.centroid_delay * 1e9),
                format!("{:.6}", db(c.power)),
                format!("{:.6}", db(c.peak_power)),
                c.members.to_string(),
            ]);
        }
        counts.push(vec![
            format!("{}", r[0] as usize),
            format!("{:.9}", r[1]),
            set.len().to_string(),
            format!("{:.6}", set.floor_db),
        ]);
    }
    t.save(ctx, &mut st.outputs, &mut st.tables)?;
    counts.save(ctx, &mut st.outputs, &mut st.tables)
}

fn path_loss(ctx: &Ctx, st: &mut Stamp) -> Result<()> {
    let sys = load_system_response(ctx)?;
    let models = load_clock_models(ctx)?;
    let grid = snapshot_reference_times(ctx, &models.channel)?;
    let poses = rx_poses(ctx, &models, &grid)?;
    let tx = ctx.cfg.scene.tx_pose.position;
    let distances: Vec<f64> = poses.iter().map(|p| (p.position - tx).norm()).collect();
    let snaps = ctx.session.snapshots()?;
    let mut cir = CirMatrix::new(sys.freqs.clone(), ctx.cfg.scene.carrier_frequency, sys.active.clone());
    cir.entries = calibrated(&snaps, &sys)?;
    drop(snaps);
    let p = ctx.proc();
    let series = path_loss_series(&cir, &distances, &p.pathloss)?;
    let per_bin = series.per_bin_db();
    let mut fit_input = series.clone();
    fit_input.pl_db = per_bin.clone();
    let fit = fit_log_distance(&fit_input, p.reference_distance)?;
    let mut t = Table::new(
        Stage::PathLoss,
        "series",
        &[
            ("snapshot", "-"),
            ("t_ref_s", "s"),
            ("distance_m", "m"),
            ("pl_db", "dB"),
            ("pl_per_bin_db", "dB"),
            ("fit_db", "dB"),
        ],
    );
    for (k, &c) in series.centers.iter().enumerate() {
        t.push(vec![
            c.to_string(),
            format!("{:.9}", grid[c]),
            format!("{:.6}", series.distances[k]),
            format!("{:.6}", series.pl_db[k]),
            format!("{:.6}", per_bin[k]),
            format!("{:.6}", fit.predict(series.distances[k])),
        ]);
    }
    t.save(ctx, &mut st.outputs, &mut st.tables)?;
    let mut f = Table::new(
        Stage::PathLoss,
        "fit",
        &[
            ("ple", "-"),
            ("intercept_db", "dB"),
            ("sigma_db", "dB"),
            ("reference_distance_m", "m"),
            ("samples", "-"),
            ("window_len", "snapshots"),
        ],
    );
    f.push(vec![
        format!("{:.6}", fit.ple),
        format!("{:.6}", fit.intercept_db),
        format!("{:.6}", fit.sigma_db),
        format!("{:.6}", fit.reference_distance),
        fit.samples.to_string(),
        series.window_len.to_string(),
    ]);
    f.save(ctx, &mut st.outputs, &mut st.tables)?;
    st.path_loss_fit = Some(fit);
    Ok(())
}

fn sage(ctx: &Ctx, st: &mut Stamp) -> Result<()> {
    let sys = load_system_response(ctx)?;
    let p = ctx.proc();
    let snaps = strided(ctx.session.snapshots()?, p.sage_stride);
    let array = &ctx.cfg.array;
    let results: Vec<(usize, f64, PathEstimates)> = snaps
        .par_iter()
        .map(|(i, s)| {
            let e = apply_calibration(s, &sys)?;
            let est = sage_estimate(&e.response, &sys.freqs, &sys.active, array, &p.sage)?;
            Ok((*i, e.timestamp, est))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(
        Stage::Sage,
        "paths",
        &[
            ("snapshot", "-"),
            ("t_local_s", "s"),
            ("path", "-"),
            ("delay_ns", "ns"),
            ("azimuth_deg", "deg"),
            ("elevation_deg", "deg"),
            ("power_db", "dB"),
            ("relative_power_db", "dB"),
        ],
    );
    for (i, ts, est) in &results {
        for (k, path) in est.paths.iter().enumerate() {
            t.push(vec![
                i.to_string(),
                format!("{ts:.9}"),
                k.to_string(),
                format!("{:.6}", path.delay * 1e9),
                format!("{:.6}", path.azimuth.to_degrees()),
                format!("{:.6}", path.elevation.to_degrees()),
                format!("{:.6}", db(path.amplitude.norm_sqr())),
                format!("{:.6}", path.power_db),
            ]);
        }
    }
    t.save(ctx, &mut st.outputs, &mut st.tables)
}

fn destagger_stage(ctx: &Ctx, st: &mut Stamp) -> Result<()> {
    let Some(spec) = ctx.cfg.lidar.as_ref() else {
        return Err(Error::Dependency {
            stage: Stage::Destagger.name().into(),
            artifact: StreamKind::Lidar.file_name().into(),
        });
    };
    let frames = ctx
        .session
        .lidar_frames()
        .map_err(|e| missing_stream(Stage::Destagger, e))?;
    if frames.is_empty() {
        return Err(Error::InsufficientData("session has no LiDAR frames".into()));
    }
    let mut t = Table::new(
        Stage::Destagger,
        "frames",
        &[("frame", "-"), ("t_local_s", "s"), ("valid_staggered", "px"), ("valid_destaggered", "px")],
    );
    let pick = ctx.proc().raster_frame.min(frames.len() - 1);
    let dir = ctx.out.join(Stage::Destagger.name());
    fs::create_dir_all(&dir)?;
    for (k, f) in frames.iter().enumerate() {
        let d = destagger(f, &spec.config)?;
        t.push(vec![
            k.to_string(),
            format!("{:.9}", f.t0),
            f.valid_count().to_string(),
            d.valid_count().to_string(),
        ]);
        if k == pick {
            for (name, img) in [("staggered", f), ("destaggered", &d)] {
                let rel = format!("destagger/{name}.f32");
                let path = ctx.out.join(&rel);
                write_range_image(&path, img, &spec.config)?;
                for file in [rel.clone(), format!("{rel}.toml")] {
                    st.outputs.push(OutputDigest {
                        sha256: file_digest(&ctx.out.join(&file))?,
                        file,
                    });
                }
                st.tables.push(TableInfo {
                    stage: Stage::Destagger,
                    name: name.into(),
                    file: rel,
                    columns: vec![Column {
                        name: "range".into(),
                        unit: "m (f32 raster, row-major, 0 = no return)".into(),
                    }],
                    rows: img.rows,
                });
            }
        }
    }
    t.save(ctx, &mut st.outputs, &mut st.tables)
}

fn fuse(ctx: &Ctx, st: &mut Stamp) -> Result<()> {
    let models = load_clock_models(ctx)?;
    if let (Some(cam), Some(spec)) = (ctx.cfg.camera.as_ref(), ctx.cfg.lidar.as_ref()) {
        let (img, _) = read_range_image(&ctx.out.join(primary_artifact(Stage::Destagger)))?;
        let cloud = to_points(&img, &spec.config)?;
        let ov = overlay(&cloud, &cam.extrinsics, &cam.intrinsics);
        let mut t = Table::new(
            Stage::Fuse,
            "overlay",
            &[
                ("source", "-"),
                ("u", "px"),
                ("v", "px"),
                ("pixel_u", "px"),
                ("pixel_v", "px"),
                ("depth_m", "m"),
            ],
        );
        for e in &ov.entries {
            let (pu, pv) = e.pixel();
            t.push(vec![
                e.source.to_string(),
                format!("{:.6}", e.u),
                format!("{:.6}", e.v),
                pu.to_string(),
                pv.to_string(),
                format!("{:.6}", e.depth),
            ]);
        }
        t.save(ctx, &mut st.outputs, &mut st.tables)?;
    }

    let rows = read_numeric(&ctx.out.join(primary_artifact(Stage::Sage)))?;
    let mut by_snapshot: BTreeMap<usize, (f64, Vec<PathEstimate>)> = BTreeMap::new();
    for r in &rows {
        let e = by_snapshot.entry(r[0] as usize).or_insert((r[1], vec![]));
        e.1.push(PathEstimate {
            delay: r[3] * 1e-9,
            azimuth: r[4].to_radians(),
            elevation: r[5].to_radians(),
            amplitude: crate::Complex64::from_polar(db_to_lin(r[6]).sqrt(), 0.0),
            power_db: r[7],
        });
    }
    let grid: Vec<f64> = by_snapshot
        .values()
        .map(|(t, _)| models.channel.to_reference(*t).time)
        .collect();
    let poses = rx_poses(ctx, &models, &grid)?;
    let mut t = Table::new(
        Stage::Fuse,
        "associations",
        &[
            ("snapshot", "-"),
            ("t_ref_s", "s"),
            ("path", "-"),
            ("object", "-"),
            ("label", "-"),
            ("angular_error_deg", "deg"),
            ("geometric_length_m", "m"),
            ("length_residual_m", "m"),
        ],
    );
    for ((snap, (_, paths)), pose) in by_snapshot.into_iter().zip(&poses) {
        let est = PathEstimates {
            paths,
            iterations: 0,
            converged: true,
            residual_history: vec![],
            input_power: 0.0,
        };
        for a in associate_paths_to_objects(&est, &ctx.cfg.scene, pose, &ctx.proc().association) {
            let object = match a.object {
                Some(ObjectKind::Transmitter) => "tx".to_string(),
                Some(ObjectKind::Facet(i)) => format!("facet{i}"),
                Some(ObjectKind::Scatterer(i)) => format!("scatterer{i}"),
                None => "none".into(),
            };
            t.push(vec![
                snap.to_string(),
                format!("{:.9}", pose.timestamp),
                a.path.to_string(),
                object,
                a.label.unwrap_or_default(),
                format!("{:.6}", a.angular_error.to_degrees()),
                format!("{:.6}", a.geometric_length),
                format!("{:.6}", a.length_residual),
            ]);
        }
    }
    t.save(ctx, &mut st.outputs, &mut st.tables)
}

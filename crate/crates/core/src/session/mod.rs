//! Session container, configuration schema, dataset generation and the
//! staged processing pipeline.
//!
//! A session is a directory holding `manifest.toml` and one binary file per
//! stream (see [`format`]). Generation is a pure function of the
//! configuration and one seed; every random stream draws from a named
//! sub-seed of it.

mod config;
pub mod format;
mod generate;
mod pipeline;

pub use config::{
    B2bSpec, CameraSpec, ClockInjection, ClockSpec, LidarSpec, NoiseSpec, ProcessingConfig,
    SessionConfig, SessionInfo, MAX_SEED,
};
pub use format::StreamKind;
pub use generate::{
    generate_session, read_session, validate_session, ClockPulse, GeoFix, Session,
    SessionManifest, StreamEntry, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use pipeline::{run_pipeline, ReportBundle, Stage, TableInfo};

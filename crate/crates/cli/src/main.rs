//! `chansense` command line.
//!
//! Exit codes: 0 success, 1 validation or input error, 2 missing
//! prerequisite stage, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chansense::session::{
    generate_session, read_session, run_pipeline, validate_session, ProcessingConfig,
    ReportBundle, SessionConfig, Stage,
};
use chansense::sounder::max_measurable_path_loss;
use chansense::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "chansense", version, about = "Channel sounding session simulator and processor")]
struct Cli {
    /// Session directory.
    #[arg(long, global = true)]
    session: Option<PathBuf>,
    /// Session configuration TOML. Processing commands take its
    /// `[processing]` table as an override.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for processing artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a session directory from a configuration or preset.
    Simulate {
        /// Built-in configuration used when --config is absent.
        #[arg(long, default_value = "v2i")]
        preset: String,
    },
    /// Check a session's manifest and every stream.
    Validate,
    /// Extract the system response from the back-to-back capture.
    Calibrate,
    /// Run one estimation stage.
    Process {
        #[arg(value_enum)]
        stage: ProcessStage,
    },
    /// Destagger the LiDAR frames and dump range rasters.
    Destagger,
    /// Project LiDAR into the camera and associate paths with objects.
    Fuse,
    /// Print the link budget.
    Budget {
        /// Reference maximum path loss to compare against, in dB.
        #[arg(long)]
        reference: Option<f64>,
        #[arg(long, default_value = "v2i")]
        preset: String,
    },
    /// Run every stage not yet up to date and summarise the report.
    Report,
    /// Write a preset configuration as TOML to stdout.
    Preset { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcessStage {
    Sync,
    Pdp,
    Pl,
    Sage,
    Cluster,
}

impl From<ProcessStage> for Stage {
    fn from(s: ProcessStage) -> Stage {
        match s {
            ProcessStage::Sync => Stage::Sync,
            ProcessStage::Pdp => Stage::Pdp,
            ProcessStage::Pl => Stage::PathLoss,
            ProcessStage::Sage => Stage::Sage,
            ProcessStage::Cluster => Stage::Cluster,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Dependency { .. } => 2,
        Error::Numerical(_)
        | Error::DegenerateFit(_)
        | Error::InsufficientData(_)
        | Error::DivisionGuard { .. }
        | Error::Undefined(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Config(list) = &e {
                for v in list {
                    eprintln!("  - {v}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> chansense::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::config(format!("--{flag} is required for this command")))
}

fn load_config(cli: &Cli, preset: &str) -> chansense::Result<SessionConfig> {
    match &cli.config {
        Some(p) => SessionConfig::load(p),
        None => SessionConfig::preset(preset),
    }
}

fn run(cli: &Cli) -> chansense::Result<()> {
    match &cli.command {
        Command::Simulate { preset } => {
            let cfg = load_config(cli, preset)?;
            let dir = required(&cli.session, "session")?;
            let m = generate_session(&cfg, cli.seed.unwrap_or(0), dir)?;
            println!("session `{}` written to {}", m.session_id, dir.display());
            for s in &m.streams {
                println!("  {:<18} {:>8} records", s.file, s.count);
            }
        }
        Command::Validate => {
            let dir = required(&cli.session, "session")?;
            let m = validate_session(dir)?;
            println!("{}: ok ({} streams)", dir.display(), m.streams.len());
        }
        Command::Calibrate => {
            stages(cli, &[Stage::Calibrate])?;
        }
        Command::Process { stage } => {
            stages(cli, &[(*stage).into()])?;
        }
        Command::Destagger => {
            stages(cli, &[Stage::Destagger])?;
        }
        Command::Fuse => {
            stages(cli, &[Stage::Fuse])?;
        }
        Command::Budget { reference, preset } => {
            let cfg = match (&cli.session, &cli.config) {
                (Some(dir), None) => read_session(dir)?.config().clone(),
                _ => load_config(cli, preset)?,
            };
            print!("{}", max_measurable_path_loss(&cfg.budget, *reference));
        }
        Command::Report => {
            let b = stages(cli, &Stage::ALL)?;
            println!("stages present: {}", names(&b.stages));
            for t in &b.tables {
                println!("  {:<36} {:>8} rows", t.file, t.rows);
            }
            if let Some(f) = &b.path_loss_fit {
                println!(
                    "path loss exponent {:.3}, intercept {:.2} dB, shadowing {:.2} dB",
                    f.ple, f.intercept_db, f.sigma_db
                );
            }
        }
        Command::Preset { name } => print!("{}", SessionConfig::preset(name)?.to_toml()?),
    }
    Ok(())
}

fn names(s: &[Stage]) -> String {
    s.iter().map(|s| s.name()).collect::<Vec<_>>().join(" ")
}

fn stages(cli: &Cli, list: &[Stage]) -> chansense::Result<ReportBundle> {
    let session = read_session(required(&cli.session, "session")?)?;
    let out = match &cli.out {
        Some(o) => o.clone(),
        None => session.dir.join("processed"),
    };
    let processing: Option<ProcessingConfig> = match &cli.config {
        Some(p) => Some(SessionConfig::load(p)?.processing),
        None => None,
    };
    if let Some(seed) = cli.seed {
        if seed != session.manifest.seed {
            return Err(Error::config(format!(
                "--seed {seed} does not match the session seed {}",
                session.manifest.seed
            )));
        }
    }
    let b = run_pipeline(&session, list, &out, processing.as_ref())?;
    if !b.executed.is_empty() {
        println!("ran: {}", names(&b.executed));
    }
    if !b.skipped.is_empty() {
        println!("up to date: {}", names(&b.skipped));
    }
    println!("artifacts in {}", out.display());
    Ok(b)
}

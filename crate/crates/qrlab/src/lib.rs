//! Experiment runner around `qrlab_core`: config parsing, recipes, and artifact emission.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

use qrlab_core::curvature::CurvatureError;
use qrlab_core::flows::FlowError;
use qrlab_core::functionals::FunctionalError;
use qrlab_core::geometry::GeometryError;
use qrlab_core::rigidity::RigidityError;
use serde_json::{Map, Value};
use thiserror::Error;

pub use config::{parse_config, Experiment, ExperimentConfig, Format, KindSpec, Resolved};
pub use experiments::Outcome;
pub use output::{Cell, Table};

/// Environment variable capping the worker count of sample-parallel scans.
pub const THREADS_ENV: &str = "QRLAB_THREADS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 1,
            RunError::Precondition(_) => 2,
            RunError::Invariant(_) => 3,
        }
    }
}

impl From<GeometryError> for RunError {
    fn from(e: GeometryError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<CurvatureError> for RunError {
    fn from(e: CurvatureError) -> Self {
        RunError::Precondition(e.to_string())
    }
}

impl From<FunctionalError> for RunError {
    fn from(e: FunctionalError) -> Self {
        RunError::Precondition(e.to_string())
    }
}

impl From<RigidityError> for RunError {
    fn from(e: RigidityError) -> Self {
        RunError::Precondition(e.to_string())
    }
}

impl From<FlowError> for RunError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::InvariantViolated { .. } => RunError::Invariant(e.to_string()),
            other => RunError::Precondition(other.to_string()),
        }
    }
}

/// Worker count from [`THREADS_ENV`]; `None` lets rayon decide.
pub fn thread_cap() -> Result<Option<usize>, RunError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(k) => Ok(Some(k)),
            Err(_) => Err(RunError::Config(format!("{THREADS_ENV}={s} is not a worker count"))),
        },
    }
}

/// Runs the experiment inside a pool sized by [`thread_cap`].
pub fn run_experiment(r: &Resolved) -> Result<Outcome, RunError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = thread_cap()? {
        builder = builder.num_threads(k);
    }
    let pool = builder
        .build()
        .map_err(|e| RunError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| experiments::run(r))
}

/// Paths written by [`execute`].
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub payload: PathBuf,
    pub meta: PathBuf,
    pub report: Option<PathBuf>,
}

/// Metadata sidecar: config echo, code version, grid, and the run summary.
pub fn metadata(r: &Resolved, outcome: &Outcome) -> Value {
    let mut grid = Map::new();
    grid.insert("n".into(), r.n.into());
    grid.insert("kind".into(), r.kind.to_string().into());
    grid.insert("N".into(), r.nodes.into());
    grid.insert("L".into(), r.degree.into());
    let mut meta = Map::new();
    meta.insert("code_version".into(), env!("CARGO_PKG_VERSION").into());
    meta.insert("config".into(), serde_json::to_value(r).expect("config serialises"));
    meta.insert("experiment".into(), r.experiment.name().into());
    meta.insert("grid".into(), Value::Object(grid));
    meta.insert("rows".into(), outcome.table.rows.len().into());
    meta.insert("schema_version".into(), output::SCHEMA_VERSION.into());
    meta.insert(
        "status".into(),
        if outcome.violation.is_some() { "invariant-violation" } else { "ok" }.into(),
    );
    meta.insert("summary".into(), Value::Object(outcome.summary.clone()));
    if let Some(v) = &outcome.violation {
        meta.insert("violation".into(), v.clone().into());
    }
    Value::Object(meta)
}

/// Runs `r` and writes the payload, the `.meta.json` sidecar and any report.
///
/// A broken flow invariant still writes everything, then surfaces as [`RunError::Invariant`].
pub fn execute(r: &Resolved) -> Result<(Outcome, Artifacts), RunError> {
    let outcome = run_experiment(r)?;
    let payload = r.output_path.clone();
    output::write_file(&payload, &outcome.table.render(r.format))?;
    let meta = output::sidecar_path(&payload, "meta.json");
    let mut text = serde_json::to_string_pretty(&metadata(r, &outcome)).expect("metadata serialises");
    text.push('\n');
    output::write_file(&meta, &text)?;
    let report = match &outcome.report {
        Some(rep) => {
            let path = output::sidecar_path(&payload, "report.txt");
            output::write_file(&path, rep)?;
            Some(path)
        }
        None => None,
    };
    if let Some(v) = &outcome.violation {
        return Err(RunError::Invariant(v.clone()));
    }
    Ok((outcome, Artifacts { payload, meta, report }))
}

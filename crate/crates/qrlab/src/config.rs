//! Experiment configuration: a JSON object or flat `key = value` lines.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qrlab_core::geometry::BackgroundKind;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Constants,
    SobolevScan,
    ObataCheck,
    Flow4,
    Subcritical,
    EpsContinuation,
    Continue3d,
    CoeffCertificate,
    DualityScan,
    ConvexityScan,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Constants,
        Experiment::SobolevScan,
        Experiment::ObataCheck,
        Experiment::Flow4,
        Experiment::Subcritical,
        Experiment::EpsContinuation,
        Experiment::Continue3d,
        Experiment::CoeffCertificate,
        Experiment::DualityScan,
        Experiment::ConvexityScan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Constants => "constants",
            Experiment::SobolevScan => "sobolev-scan",
            Experiment::ObataCheck => "obata-check",
            Experiment::Flow4 => "flow4",
            Experiment::Subcritical => "subcritical",
            Experiment::EpsContinuation => "eps-continuation",
            Experiment::Continue3d => "continue3d",
            Experiment::CoeffCertificate => "coeff-certificate",
            Experiment::DualityScan => "duality-scan",
            Experiment::ConvexityScan => "convexity-scan",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Experiment::Constants => "closed-form sphere constants next to grid recomputations",
            Experiment::SobolevScan => "Paneitz Sobolev deficits over optimizers and random admissible metrics",
            Experiment::ObataCheck => "integral identity residuals on random metrics",
            Experiment::Flow4 => "four-dimensional gradient flow trace",
            Experiment::Subcritical => "subcritical flow trace at fixed eps",
            Experiment::EpsContinuation => "subcritical limits along a decreasing eps schedule",
            Experiment::Continue3d => "Newton path continuation on the 3-sphere",
            Experiment::CoeffCertificate => "exact rational coefficient certificate",
            Experiment::DualityScan => "dual quotient products on random factors",
            Experiment::ConvexityScan => "geometric-mean convexity of the conformal Laplacian",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| RunError::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Background model as written in a config: `sphere` or `product(p,q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KindSpec {
    Sphere,
    Product { p: usize, q: usize },
}

impl KindSpec {
    /// Einstein-matched radii with the first factor of unit radius.
    pub fn background_kind(self) -> BackgroundKind {
        match self {
            KindSpec::Sphere => BackgroundKind::RoundSphere,
            KindSpec::Product { p, q } => {
                let r2 = if p > 1 {
                    ((q as f64 - 1.0) / (p as f64 - 1.0)).sqrt()
                } else {
                    1.0
                };
                BackgroundKind::EinsteinProduct {
                    p,
                    q,
                    radii: (1.0, r2),
                }
            }
        }
    }

    pub fn dim(self) -> Option<usize> {
        match self {
            KindSpec::Sphere => None,
            KindSpec::Product { p, q } => Some(p + q),
        }
    }
}

impl fmt::Display for KindSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KindSpec::Sphere => f.write_str("sphere"),
            KindSpec::Product { p, q } => write!(f, "product({p},{q})"),
        }
    }
}

impl FromStr for KindSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if t == "sphere" {
            return Ok(KindSpec::Sphere);
        }
        let inner = t
            .strip_prefix("product(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("kind '{s}' is neither 'sphere' nor 'product(p,q)'"))?;
        let mut parts = inner.split(',').map(str::parse::<usize>);
        match (parts.next(), parts.next(), parts.next()) {
            (Some(Ok(p)), Some(Ok(q)), None) => Ok(KindSpec::Product { p, q }),
            _ => Err(format!("kind '{s}' needs two integer factor dimensions")),
        }
    }
}

impl Serialize for KindSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KindSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Raw configuration; absent fields take per-experiment defaults in [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Upper end of a dimension range starting at `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<KindSpec>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Size of the initial perturbation for the flows and the path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Zonal degree of the initial perturbation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    /// Step-size halvings allowed before a flow reports an invariant violation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_halvings: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

/// Parses either a JSON object or `key = value` lines (`#` starts a comment).
pub fn parse_config(text: &str) -> Result<ExperimentConfig, RunError> {
    let value = if text.trim_start().starts_with('{') {
        serde_json::from_str::<Value>(text).map_err(|e| RunError::Config(format!("invalid JSON: {e}")))?
    } else {
        Value::Object(parse_flat(text)?)
    };
    serde_json::from_value(value).map_err(|e| RunError::Config(e.to_string()))
}

fn parse_flat(text: &str) -> Result<Map<String, Value>, RunError> {
    let mut map = Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| RunError::Config(format!("line {}: expected key = value", i + 1)))?;
        let key = key.trim();
        let val = val.trim();
        if key.is_empty() {
            return Err(RunError::Config(format!("line {}: empty key", i + 1)));
        }
        let parsed = serde_json::from_str::<Value>(val).unwrap_or_else(|_| Value::String(val.to_string()));
        if map.insert(key.to_string(), parsed).is_some() {
            return Err(RunError::Config(format!("line {}: duplicate key '{key}'", i + 1)));
        }
    }
    Ok(map)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Fully defaulted configuration for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub experiment: Experiment,
    pub n: usize,
    pub n_max: usize,
    pub kind: KindSpec,
    #[serde(rename = "N")]
    pub nodes: usize,
    #[serde(rename = "L")]
    pub degree: usize,
    pub eps: f64,
    pub schedule: Vec<f64>,
    pub dt: f64,
    pub tol: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub samples: usize,
    pub amplitude: f64,
    pub mode: usize,
    pub alpha_points: usize,
    pub record_every: usize,
    pub max_halvings: usize,
    pub output_path: PathBuf,
    pub format: Format,
}

impl ExperimentConfig {
    /// Fills defaults for `experiment` and checks ranges.
    pub fn resolve(&self, experiment: Experiment) -> Result<Resolved, RunError> {
        if let Some(e) = self.experiment {
            if e != experiment {
                return Err(RunError::Config(format!(
                    "config is for '{e}' but '{experiment}' was requested"
                )));
            }
        }
        use Experiment::*;
        let default_n = match experiment {
            Flow4 => self.kind.and_then(KindSpec::dim).unwrap_or(4),
            Continue3d => 3,
            _ => self.kind.and_then(KindSpec::dim).unwrap_or(5),
        };
        let n = self.n.unwrap_or(default_n);
        let n_max = match (experiment, self.n, self.n_max) {
            (_, _, Some(m)) => m,
            (Constants, None, None) => 10,
            _ => n,
        };
        let kind = self.kind.unwrap_or(match experiment {
            Flow4 => KindSpec::Product { p: 2, q: 2 },
            _ => KindSpec::Sphere,
        });
        let (nodes, degree) = match experiment {
            SobolevScan | ObataCheck | DualityScan | ConvexityScan => (256, 96),
            Constants => (64, 16),
            _ => (64, 24),
        };
        let samples = match experiment {
            SobolevScan => 1000,
            ObataCheck => 100,
            DualityScan => 500,
            ConvexityScan => 200,
            _ => 0,
        };
        let (amplitude, mode) = match experiment {
            Flow4 => (0.1, 2),
            Subcritical | EpsContinuation => (0.2, 1),
            _ => (0.0, 1),
        };
        let schedule = match experiment {
            EpsContinuation => vec![0.3, 0.2, 0.1, 0.05],
            Continue3d => (0..=10).map(|k| k as f64 / 10.0).collect(),
            _ => Vec::new(),
        };
        let format = self.format.unwrap_or_default();
        let r = Resolved {
            experiment,
            n,
            n_max,
            kind,
            nodes: self.nodes.unwrap_or(nodes),
            degree: self.degree.unwrap_or(degree),
            eps: self.eps.unwrap_or(0.2),
            schedule: self.schedule.clone().unwrap_or(schedule),
            dt: self.dt.unwrap_or(1e-2),
            tol: self.tol.unwrap_or(if experiment == Continue3d { 1e-10 } else { 1e-12 }),
            max_steps: self.max_steps.unwrap_or(if experiment == Continue3d { 50 } else { 100_000 }),
            seed: self.seed.unwrap_or(0),
            samples: self.samples.unwrap_or(samples),
            amplitude: self.amplitude.unwrap_or(amplitude),
            mode: self.mode.unwrap_or(mode),
            alpha_points: self.alpha_points.unwrap_or(101),
            record_every: self.record_every.unwrap_or(1),
            max_halvings: self.max_halvings.unwrap_or(8),
            output_path: self
                .output_path
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{experiment}.{}", format.extension()))),
            format,
        };
        r.check()?;
        Ok(r)
    }
}

impl Resolved {
    fn check(&self) -> Result<(), RunError> {
        let bad = |msg: String| Err(RunError::Config(msg));
        if let Some(d) = self.kind.dim() {
            if d != self.n {
                return bad(format!("kind {} has dimension {d} but n = {}", self.kind, self.n));
            }
        }
        if self.n_max < self.n {
            return bad(format!("n_max = {} is below n = {}", self.n_max, self.n));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tol = {} must be positive", self.tol));
        }
        if !self.eps.is_finite() || self.schedule.iter().any(|e| !e.is_finite()) {
            return bad("eps and schedule must be finite".into());
        }
        if !self.amplitude.is_finite() {
            return bad("amplitude must be finite".into());
        }
        if self.mode > self.degree {
            return bad(format!("mode {} exceeds L = {}", self.mode, self.degree));
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        if self.alpha_points == 0 {
            return bad("alpha_points must be at least 1".into());
        }
        Ok(())
    }
}

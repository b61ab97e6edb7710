//! Run configuration: one JSON document with a section per stage. Missing
//! keys take their defaults, unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use silcarve::basis::BasisConfig;
use silcarve::nrsfm::NrsfmConfig;
use silcarve::prototype::ProtoConfig;
use silcarve::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    pub fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Hausdorff,
    Zmae,
    Iou,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Hausdorff => "hausdorff",
            Metric::Zmae => "zmae",
            Metric::Iou => "iou",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub iso: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { iso: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    /// Surface samples per shape for the Hausdorff distance.
    pub samples: usize,
    /// Image side used when no mask gives the size.
    pub image_size: usize,
    /// Splat radius in pixels for point-cloud predictions; `None` derives it
    /// from the point spacing.
    pub splat_radius: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { metrics: vec![Metric::Hausdorff, Metric::Zmae, Metric::Iou], samples: 10_000, image_size: 128, splat_radius: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; `None` leaves the choice to the command (the scene seed
    /// for `synth`, 0 elsewhere). The manifest always records a number.
    pub seed: Option<u64>,
    /// Directory that relative default outputs are placed in.
    pub out: Option<PathBuf>,
    pub log: LogLevel,
    pub nrsfm: NrsfmConfig,
    pub proto: ProtoConfig,
    pub basis: BasisConfig,
    pub mesh: MeshConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            log: LogLevel::Info,
            nrsfm: NrsfmConfig::default(),
            proto: ProtoConfig::default(),
            basis: BasisConfig::default(),
            mesh: MeshConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn section(name: &str, r: Result<(), (String, String)>) -> Result<(), Error> {
    r.map_err(|(path, message)| Error::Config { path: format!("{name}.{path}"), message })
}

impl RunConfig {
    /// Range checks on every section; errors carry the full key path.
    pub fn validate(&self) -> Result<(), Error> {
        section("nrsfm", self.nrsfm.validate())?;
        section("proto", self.proto.validate())?;
        section("basis", self.basis.validate())?;
        if !self.mesh.iso.is_finite() {
            return Err(Error::Config { path: "mesh.iso".into(), message: "must be finite".into() });
        }
        let e = &self.eval;
        if e.metrics.is_empty() {
            return Err(Error::Config { path: "eval.metrics".into(), message: "must name at least one metric".into() });
        }
        if e.samples == 0 {
            return Err(Error::Config { path: "eval.samples".into(), message: "must be at least 1".into() });
        }
        if e.image_size == 0 {
            return Err(Error::Config { path: "eval.image_size".into(), message: "must be at least 1".into() });
        }
        if let Some(r) = e.splat_radius {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::Config { path: "eval.splat_radius".into(), message: format!("must be positive, got {r}") });
            }
        }
        Ok(())
    }

    /// Parses and validates a config document. A run manifest is accepted
    /// too, in which case its `config` section is used.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config { path: ".".into(), message: e.to_string() })?;
        let value = match value {
            serde_json::Value::Object(mut m) if m.contains_key("command") && m.contains_key("config") => m.remove("config").unwrap_or_default(),
            v => v,
        };
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::Config { path, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

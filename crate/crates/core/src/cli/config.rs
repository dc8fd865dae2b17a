//! Run configuration: one JSON document, optionally patched with
//! `key.path=value` overrides before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::algebra::AlgebraSpec;
use crate::fields::Grid;
use crate::flows::{stability_bound, FlowKind, GeneratorForm};
use crate::functionals::FlowParams;
use crate::initial::{build, InitialData};
use crate::orbit::{orbit_from_frame, FramedSnapshot, FramedState, OrbitSnapshot, OrbitState};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("override `{0}` must look like key.path=value")]
    Override(String),
}

fn field(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtSpec {
    Fixed(f64),
    Named(DtKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtKeyword {
    /// Half the stability bound.
    Auto,
}

impl Default for DtSpec {
    fn default() -> Self {
        Self::Named(DtKeyword::Auto)
    }
}

/// A named generator, or a snapshot file written by a previous run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Snapshot { snapshot: PathBuf },
    Named(InitialData),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algebra: AlgebraSpec,
    pub grid: Grid,
    pub params: FlowParams,
    #[serde(default = "default_kind")]
    pub kind: FlowKind,
    #[serde(default)]
    pub generator: GeneratorForm,
    pub initial: InitialSpec,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default)]
    pub dt: DtSpec,
    #[serde(default)]
    pub output_times: Vec<f64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Seeds `random_smooth` initial data and the random draws of the
    /// verification suites.
    #[serde(default)]
    pub seed: u64,
}

fn default_kind() -> FlowKind {
    FlowKind::ThirdOrder
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Sets `path` (dot separated) in a JSON document to `raw`, parsed as JSON
/// when possible and as a string otherwise.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(ConfigError::Override(spec.into()));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| field(&keys[..i].join("."), "is not an object"))?;
        if i + 1 == keys.len() {
            obj.insert((*key).to_string(), value);
            return Ok(());
        }
        cur = obj.entry((*key).to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields a key")
}

impl RunConfig {
    pub fn from_value(doc: Value) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut doc: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_value(doc)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params.validate().map_err(|e| field("params", e.to_string()))?;
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(field("T", format!("must be finite and non-negative, got {}", self.t_end)));
        }
        if let DtSpec::Fixed(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(field("dt", format!("must be positive or \"auto\", got {dt}")));
            }
        }
        let mut last = 0.0;
        for &t in &self.output_times {
            if !(t > last && t <= self.t_end) {
                return Err(field("output_times", format!("must increase strictly within (0, T]; {t} does not")));
            }
            last = t;
        }
        if self.grid.len() < crate::fields::min_points(4) {
            return Err(field("grid.N", format!("needs at least {} points", crate::fields::min_points(4))));
        }
        if self.kind == FlowKind::SecondOrder && self.generator != GeneratorForm::default() {
            log::warn!("generator is ignored by the second-order flow");
        }
        Ok(())
    }

    pub fn stability_bound(&self) -> f64 {
        stability_bound(&self.grid, &self.params, self.kind, self.generator)
    }

    pub fn resolved_dt(&self) -> f64 {
        match self.dt {
            DtSpec::Fixed(dt) => dt,
            DtSpec::Named(DtKeyword::Auto) => 0.5 * self.stability_bound(),
        }
    }

    /// The initial data with the top-level seed applied.
    pub fn resolved_initial(&self) -> InitialSpec {
        match &self.initial {
            InitialSpec::Named(InitialData::RandomSmooth { modes, amplitude, .. }) => InitialSpec::Named(InitialData::RandomSmooth {
                seed: self.seed,
                modes: *modes,
                amplitude: *amplitude,
            }),
            other => other.clone(),
        }
    }

    /// Copy with dt and the initial-data seed made explicit.
    pub fn resolved(&self) -> Self {
        Self {
            dt: DtSpec::Fixed(self.resolved_dt()),
            initial: self.resolved_initial(),
            ..self.clone()
        }
    }

    /// Builds the framed initial state (named generators only).
    pub fn framed_initial(&self) -> Result<FramedState, ConfigError> {
        match self.resolved_initial() {
            InitialSpec::Named(data) => build(&self.algebra, self.grid, &data).map_err(|e| field("initial", e.to_string())),
            InitialSpec::Snapshot { snapshot } => {
                let snap: FramedSnapshot = read_json(&snapshot)?;
                FramedState::from_snapshot(snap).map_err(|e| field("initial.snapshot", e.to_string()))
            }
        }
    }

    /// The initial orbit state. Snapshot files may hold either a framed
    /// state or a bare orbit state.
    pub fn orbit_initial(&self) -> Result<OrbitState, ConfigError> {
        let os = match self.resolved_initial() {
            InitialSpec::Named(_) => orbit_from_frame(&self.framed_initial()?).map_err(|e| field("initial", e.to_string()))?,
            InitialSpec::Snapshot { snapshot } => {
                let v: Value = read_json(&snapshot)?;
                if v.get("frame").is_some() {
                    let fs = FramedState::from_snapshot(serde_json::from_value(v).map_err(|e| field("initial.snapshot", e.to_string()))?)
                        .map_err(|e| field("initial.snapshot", e.to_string()))?;
                    orbit_from_frame(&fs).map_err(|e| field("initial.snapshot", e.to_string()))?
                } else {
                    let s: OrbitSnapshot = serde_json::from_value(v).map_err(|e| field("initial.snapshot", e.to_string()))?;
                    OrbitState::from_snapshot(s).map_err(|e| field("initial.snapshot", e.to_string()))?
                }
            }
        };
        if os.spec != self.algebra || os.grid() != self.grid {
            return Err(field("initial", "snapshot algebra or grid differs from the config"));
        }
        Ok(os)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| field("initial.snapshot", format!("{}: {e}", path.display())))
}

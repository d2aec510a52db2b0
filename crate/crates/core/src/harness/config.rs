// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration files.
//!
//! ```toml
//! world = { builtin = "default" }      # or { path = "world.toml" }, or an inline world table
//! baseline = "CFG"                     # method that relative improvement is measured against
//!
//! [seeds]
//! count = 200
//! base = 0
//!
//! [schedule]                           # optional, see ScheduleSpec
//! num_steps = 50
//!
//! [[scenarios]]
//! id = "alpha_1"
//! alpha = 1.0
//! # background = "landscape"          # defaults to the first safe concept
//! # patch = "unsafe"                  # defaults to the first unsafe concept
//!
//! [[methods]]
//! name = "CFG"
//! variant = "cfg"
//!
//! [[methods]]
//! name = "SLD-max"
//! variant = "sld"
//! sld_preset = "max"
//!
//! [output]
//! dir = "out"
//! trace_seeds = 1
//!
//! [calibration]
//! seeds = 200
//! ```
//!
//! Range and emptiness checks run during deserialization so that errors carry
//! the offending line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, Variant};
use crate::schedule::ScheduleSpec;
use crate::world::{PromptScenario, WorldConfig, WorldModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldSource {
    Builtin { builtin: String },
    Path { path: PathBuf },
    Inline(WorldConfig),
}

impl Default for WorldSource {
    fn default() -> Self {
        WorldSource::Builtin {
            builtin: "default".into(),
        }
    }
}

impl WorldSource {
    /// Resolves to an inline world; relative paths are taken from `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<WorldConfig> {
        match self {
            WorldSource::Builtin { builtin } if builtin == "default" => Ok(WorldConfig::default_world()),
            WorldSource::Builtin { builtin } => Err(Error::config(format!(
                "unknown builtin world '{builtin}' (available: default)"
            ))),
            WorldSource::Path { path } => {
                let full = base_dir.join(path);
                let text = std::fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
                WorldConfig::from_toml(&text).map_err(|e| e.with_context(full.display().to_string()))
            }
            WorldSource::Inline(w) => Ok(w.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: String,
    #[serde(deserialize_with = "unit_interval")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<String>,
}

impl ScenarioSpec {
    pub fn build(&self, world: &WorldModel) -> Result<PromptScenario> {
        let mut sc = world.default_scenario(self.alpha)?;
        let background = self.background.as_deref().unwrap_or(&sc.background).to_string();
        let patch = self.patch.as_deref().unwrap_or(&sc.unsafe_patch).to_string();
        if self.background.is_some() || self.patch.is_some() {
            sc = world.scenario(&self.id, &background, &patch, self.alpha)?;
        }
        sc.id = self.id.clone();
        Ok(sc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSpec {
    #[serde(deserialize_with = "positive")]
    pub count: u64,
    #[serde(default)]
    pub base: u64,
}

impl SeedsSpec {
    pub fn iter(&self) -> impl Iterator<Item = u64> + Clone {
        let base = self.base;
        (0..self.count).map(move |k| base.wrapping_add(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Left out of stored configs, so relocating a run keeps its hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Per-step traces are written for this many leading seeds.
    pub trace_seeds: u64,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            trace_seeds: 1,
        }
    }
}

impl OutputSpec {
    pub fn dir(&self) -> PathBuf {
        self.dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Detector calibration: CFG samples of the scenario background at `α = 0`
/// (safe) and `α = 1` (unsafe), on a random stream disjoint from evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSpec {
    /// Samples per class; defaults to the evaluation seed count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<u64>,
    pub s_g: f64,
    /// Skip calibration and use this threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            seeds: None,
            s_g: 7.5,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub world: WorldSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub seeds: SeedsSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(deserialize_with = "non_empty")]
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(deserialize_with = "non_empty")]
    pub methods: Vec<GuidanceConfig>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub calibration: CalibrationSpec,
}

/// Random stream of evaluation samples.
pub const EVAL_STREAM: u64 = 0;
/// Random stream of detector-calibration samples.
pub const CALIBRATION_STREAM: u64 = 1;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and inlines a path-referenced world.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| e.with_context(path.display().to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.world = WorldSource::Inline(cfg.world.resolve(base)?);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let num_steps = self.schedule.num_steps;
        let mut names: Vec<&str> = Vec::new();
        for m in &self.methods {
            if names.contains(&m.name.as_str()) {
                return Err(Error::config(format!("duplicate method name '{}'", m.name)));
            }
            names.push(&m.name);
            m.validate(num_steps)
                .map_err(|e| Error::config(format!("method '{}': {}", m.name, e.root())))?;
        }
        let mut ids: Vec<&str> = Vec::new();
        for s in &self.scenarios {
            if ids.contains(&s.id.as_str()) {
                return Err(Error::config(format!("duplicate scenario id '{}'", s.id)));
            }
            ids.push(&s.id);
        }
        if let Some(b) = &self.baseline {
            if !names.contains(&b.as_str()) {
                return Err(Error::config(format!("baseline '{b}' is not one of the methods")));
            }
        }
        if let Some(t) = self.calibration.threshold {
            if !(t > -1.0 && t < 1.0) {
                return Err(Error::config(format!("calibration threshold {t} outside (-1, 1)")));
            }
        }
        if self.calibration.seeds == Some(0) {
            return Err(Error::config("calibration seeds must be positive"));
        }
        Ok(())
    }

    /// Name of the method relative improvement is measured against: the
    /// configured baseline, else the first CFG method, else the first method.
    pub fn baseline_name(&self) -> &str {
        self.baseline
            .as_deref()
            .or_else(|| self.methods.iter().find(|m| m.variant == Variant::Cfg).map(|m| m.name.as_str()))
            .unwrap_or(&self.methods[0].name)
    }

    pub fn method(&self, name: &str) -> Result<&GuidanceConfig> {
        self.methods
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::config(format!("unknown method '{name}'")))
    }

    pub fn scenario(&self, id: &str) -> Result<&ScenarioSpec> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::config(format!("unknown scenario '{id}'")))
    }

    pub fn build_world(&self) -> Result<WorldModel> {
        self.world.resolve(Path::new("."))?.build()
    }

    /// The shipped default experiment (`configs/experiment_default.toml`).
    pub fn shipped_default() -> Self {
        Self::from_toml(include_str!("../../configs/experiment_default.toml")).expect("shipped experiment config is valid")
    }
}

fn unit_interval<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(serde::de::Error::custom(format!("alpha {v} outside [0, 1]")))
    }
}

fn positive<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    match u64::deserialize(d)? {
        0 => Err(serde::de::Error::custom("count must be at least 1")),
        v => Ok(v),
    }
}

fn non_empty<'de, D: Deserializer<'de>, T: Deserialize<'de>>(d: D) -> std::result::Result<Vec<T>, D::Error> {
    let v = Vec::<T>::deserialize(d)?;
    if v.is_empty() {
        Err(serde::de::Error::custom("list must not be empty"))
    } else {
        Ok(v)
    }
}

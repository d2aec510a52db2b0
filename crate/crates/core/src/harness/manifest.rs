// SPDX-License-Identifier: Apache-2.0

//! Run manifests: what was run, with which resolved settings, and where the
//! outputs went.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, SeedsSpec};
use super::run::to_json;
use super::write_file;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, SldParams, SpGuardParams, Variant};
use crate::schedule::ScheduleSpec;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A method with its presets expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedMethod {
    pub name: String,
    pub variant: Variant,
    pub s_g: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sld: Option<SldParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spguard: Option<SpGuardParams>,
}

impl ResolvedMethod {
    pub fn resolve(m: &GuidanceConfig, num_steps: usize) -> Result<Self> {
        Ok(Self {
            name: m.name.clone(),
            variant: m.variant,
            s_g: m.s_g,
            sld: match m.variant {
                Variant::Sld => Some(m.resolved_sld()?),
                _ => None,
            },
            spguard: match m.variant {
                Variant::SpGuard => Some(SpGuardParams {
                    t_drop: Some(m.spguard.t_drop(num_steps)),
                    ..m.spguard.clone()
                }),
                _ => None,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// SHA-256 of `config.toml` as stored next to the manifest.
    pub config_sha256: String,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` when set.
    pub timestamp: u64,
    pub seeds: SeedsSpec,
    pub schedule: ScheduleSpec,
    pub methods: Vec<ResolvedMethod>,
    /// Outputs shared by all methods.
    pub files: Vec<String>,
    /// Per-method outputs.
    pub method_files: BTreeMap<String, Vec<String>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()) {
        return t;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(
        cfg: &ExperimentConfig,
        config_bytes: &[u8],
        files: Vec<String>,
        method_files: BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        let num_steps = cfg.schedule.num_steps;
        Ok(Self {
            tool_version: TOOL_VERSION.to_string(),
            config_sha256: sha256_hex(config_bytes),
            timestamp: timestamp(),
            seeds: cfg.seeds,
            schedule: cfg.schedule.clone(),
            methods: cfg
                .methods
                .iter()
                .map(|m| ResolvedMethod::resolve(m, num_steps))
                .collect::<Result<_>>()?,
            files,
            method_files,
        })
    }
}

pub fn write_manifest(m: &RunManifest, out_dir: &Path) -> Result<()> {
    write_file(&out_dir.join("manifest.json"), to_json(m).as_bytes())
}

pub fn read_manifest(out_dir: &Path) -> Result<RunManifest> {
    let p = out_dir.join("manifest.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))
}

/// Recomputes the hash of the stored `config.toml` and compares it with the
/// manifest's.
pub fn verify_manifest(out_dir: &Path) -> Result<RunManifest> {
    let m = read_manifest(out_dir)?;
    let p = out_dir.join("config.toml");
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let actual = sha256_hex(&bytes);
    if actual != m.config_sha256 {
        return Err(Error::config(format!(
            "config drift: {} hashes to {actual}, manifest records {}",
            p.display(),
            m.config_sha256
        )));
    }
    Ok(m)
}

// SPDX-License-Identifier: Apache-2.0

//! Safe latent diffusion guidance: a clipped, thresholded elementwise weight
//! with warmup and momentum.

use serde::{Deserialize, Serialize};

use super::combine::safe_gamma;
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// The five SLD hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SldParams {
    /// Scale `s_S` applied to `ε_p − ε_S` before clipping at 1.
    pub s_s: f64,
    /// Elements with `ε_p − ε_S ≥ lambda_thresh` receive no guidance.
    pub lambda_thresh: f64,
    /// Steps during which momentum accumulates but nothing is applied.
    pub warmup_steps: usize,
    pub momentum_scale: f64,
    pub momentum_beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset_name: Option<String>,
}

/// Preset names in increasing strength.
pub const SLD_PRESETS: [&str; 4] = ["weak", "medium", "strong", "max"];

const PRESETS_TOML: &str = include_str!("../../configs/sld_presets.toml");

impl SldParams {
    /// Loads a named preset (`weak`, `medium`, `strong`, `max`) from the
    /// bundled preset file.
    pub fn preset(name: &str) -> Result<Self> {
        Self::preset_from(PRESETS_TOML, name)
    }

    /// Loads a named preset from preset-file text.
    pub fn preset_from(text: &str, name: &str) -> Result<Self> {
        let table: std::collections::BTreeMap<String, SldParams> =
            toml::from_str(text).map_err(|e| Error::config(format!("SLD preset file: {e}")))?;
        let mut p = table
            .get(name)
            .cloned()
            .ok_or_else(|| Error::config(format!("unknown SLD preset '{name}'")))?;
        p.preset_name = Some(name.to_string());
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_s > 0.0) {
            return Err(Error::config(format!("SLD s_S must be positive, got {}", self.s_s)));
        }
        if !(0.0..=1.0).contains(&self.momentum_beta) {
            return Err(Error::config("SLD momentum_beta must lie in [0, 1]"));
        }
        if !self.lambda_thresh.is_finite() || !self.momentum_scale.is_finite() {
            return Err(Error::config("SLD parameters must be finite"));
        }
        Ok(())
    }
}

/// Elementwise SLD weight: `min(1, |s_S·(ε_p − ε_S)|)` where
/// `ε_p − ε_S < λ`, else 0.
pub fn sld_mu(eps_prompt: &Tensor3, eps_unsafe: &Tensor3, s_s: f64, lambda_thresh: f64) -> Result<Tensor3> {
    eps_prompt.ensure_same_shape(eps_unsafe, "sld_mu")?;
    eps_prompt.zip_map(eps_unsafe, |p, s| {
        let diff = p - s;
        if diff < lambda_thresh {
            (s_s * diff).abs().min(1.0)
        } else {
            0.0
        }
    })
}

/// Momentum carried across steps of one trajectory.
#[derive(Debug, Clone, Default)]
pub struct SldState {
    momentum: Option<Tensor3>,
    steps: usize,
}

impl SldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn momentum(&self) -> Option<&Tensor3> {
        self.momentum.as_ref()
    }
}

/// Output of one SLD step.
#[derive(Debug, Clone)]
pub struct SldOutput {
    /// Guidance term to add (zero during warmup).
    pub gamma: Tensor3,
    /// The elementwise weight `μ_t` for this step.
    pub mu: Tensor3,
    pub warming_up: bool,
}

/// One SLD step. The momentum-corrected term `g = γ + scale·ν` is computed
/// every step and folded into the EMA `ν ← β·ν + (1−β)·g`; it is applied
/// only once `warmup_steps` steps have passed.
pub fn sld_step(
    eps_uncond: &Tensor3,
    eps_prompt: &Tensor3,
    eps_unsafe: &Tensor3,
    params: &SldParams,
    state: &mut SldState,
) -> Result<SldOutput> {
    let mu = sld_mu(eps_prompt, eps_unsafe, params.s_s, params.lambda_thresh)?;
    let raw = safe_gamma(eps_unsafe, eps_uncond, &mu)?;
    Ok(advance(raw, mu, params, state))
}

fn advance(raw: Tensor3, mu: Tensor3, params: &SldParams, state: &mut SldState) -> SldOutput {
    let momentum = state
        .momentum
        .get_or_insert_with(|| Tensor3::zeros(raw.shape()));
    let mut g = raw;
    if params.momentum_scale != 0.0 {
        for (gv, nu) in g.as_mut_slice().iter_mut().zip(momentum.as_slice()) {
            *gv += params.momentum_scale * nu;
        }
    }
    let beta = params.momentum_beta;
    for (nu, gv) in momentum.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *nu = beta * *nu + (1.0 - beta) * gv;
    }
    state.steps += 1;
    let warming_up = state.steps <= params.warmup_steps;
    let gamma = if warming_up { Tensor3::zeros(g.shape()) } else { g };
    SldOutput {
        gamma,
        mu,
        warming_up,
    }
}

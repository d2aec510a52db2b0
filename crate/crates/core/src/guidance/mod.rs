// SPDX-License-Identifier: Apache-2.0

//! Guidance strategies as per-step transforms of noise estimates.
//!
//! [`Guidance`] owns the mutable state of one trajectory (SLD momentum or
//! the SP-Guard proxy) and the transparency trace. It is fed the noise
//! estimates for the null condition, the prompt and every unsafe concept
//! and returns the combined estimate for the sampler's update.

pub mod combine;
pub mod sld;
pub mod spguard;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub use combine::{cfg_combine, combine_guided, neg_prompt_combine, noise_direction, safe_gamma};
pub use sld::{sld_mu, sld_step, SldOutput, SldParams, SldState, SLD_PRESETS};
pub use spguard::{
    lambda_schedule, spguard_mask, spguard_mu, whole_tensor_similarities, ConceptMode, LambdaScheduleKind,
    MaskValue, ProxyState, SpGuardParams,
};
pub use trace::{GuidanceTrace, ProxyRecord, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "cfg", alias = "CFG")]
    Cfg,
    #[serde(rename = "neg", alias = "NEG")]
    Neg,
    #[serde(rename = "sld", alias = "SLD")]
    Sld,
    #[serde(rename = "spguard", alias = "SPGuard", alias = "sp_guard")]
    SpGuard,
}

fn default_s_g() -> f64 {
    7.5
}

/// One method under comparison.
///
/// ```toml
/// [[methods]]
/// name = "SLD-max"
/// variant = "sld"
/// sld_preset = "max"        # or an inline `sld = { s_s = ..., ... }` table
///
/// [[methods]]
/// name = "SP-Guard"
/// variant = "spguard"
/// spguard = { lambda_max = 4.0, schedule = "cosine" }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub name: String,
    pub variant: Variant,
    #[serde(default = "default_s_g")]
    pub s_g: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sld_preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sld: Option<SldParams>,
    #[serde(default)]
    pub spguard: SpGuardParams,
}

const SPGUARD_DEFAULTS_TOML: &str = include_str!("../../configs/spguard_defaults.toml");

impl SpGuardParams {
    /// Parameters from the bundled defaults file.
    pub fn shipped_defaults() -> Result<Self> {
        toml::from_str(SPGUARD_DEFAULTS_TOML).map_err(|e| Error::config(format!("SP-Guard defaults: {e}")))
    }
}

impl GuidanceConfig {
    fn base(name: &str, variant: Variant, s_g: f64) -> Self {
        Self {
            name: name.to_string(),
            variant,
            s_g,
            sld_preset: None,
            sld: None,
            spguard: SpGuardParams::default(),
        }
    }

    pub fn cfg(s_g: f64) -> Self {
        Self::base("CFG", Variant::Cfg, s_g)
    }

    pub fn neg(s_g: f64) -> Self {
        Self::base("NEG", Variant::Neg, s_g)
    }

    pub fn sld_preset(preset: &str, s_g: f64) -> Self {
        let mut c = Self::base(&format!("SLD-{preset}"), Variant::Sld, s_g);
        c.sld_preset = Some(preset.to_string());
        c
    }

    pub fn spguard(params: SpGuardParams, s_g: f64) -> Self {
        let mut c = Self::base("SP-Guard", Variant::SpGuard, s_g);
        c.spguard = params;
        c
    }

    /// One method table, as found under `[[methods]]` in experiment configs.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("method config: {e}")))
    }

    /// SLD parameters after preset lookup.
    pub fn resolved_sld(&self) -> Result<SldParams> {
        match (&self.sld, &self.sld_preset) {
            (Some(_), Some(_)) => Err(Error::config(format!(
                "method '{}': give either sld_preset or sld, not both",
                self.name
            ))),
            (Some(p), None) => Ok(p.clone()),
            (None, Some(name)) => SldParams::preset(name),
            (None, None) => Err(Error::config(format!(
                "method '{}': SLD needs sld_preset or sld parameters",
                self.name
            ))),
        }
    }

    pub fn validate(&self, num_steps: usize) -> Result<()> {
        let ctx = |e: Error| Error::config(format!("method '{}': {}", self.name, e.root()));
        if !(self.s_g >= 0.0 && self.s_g.is_finite()) {
            return Err(Error::config(format!(
                "method '{}': s_g must be >= 0, got {}",
                self.name, self.s_g
            )));
        }
        match self.variant {
            Variant::Sld => self.resolved_sld()?.validate().map_err(ctx)?,
            Variant::SpGuard => self.spguard.validate(num_steps).map_err(ctx)?,
            Variant::Cfg | Variant::Neg => {}
        }
        Ok(())
    }
}

/// Noise estimates available at one step.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a> {
    /// Position from the start, `1..=T`.
    pub step: usize,
    /// Schedule index of `z_t`.
    pub t: usize,
    pub eps_uncond: &'a Tensor3,
    pub eps_prompt: &'a Tensor3,
    /// One estimate per unsafe concept, in unsafe-set order.
    pub eps_unsafe: &'a [Tensor3],
    /// Estimate for the combined unsafe condition.
    pub eps_unsafe_combined: &'a Tensor3,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub eps: Tensor3,
    /// Effective guidance weight `μ_t`, when the strategy has one.
    pub mu: Option<Tensor3>,
    /// SP-Guard selective mask (elementwise max over concepts).
    pub mask: Option<Tensor3>,
}

#[derive(Debug, Clone)]
enum State {
    Plain,
    Sld(SldParams, SldState),
    SpGuard(ProxyState),
}

/// Guidance state for one trajectory.
#[derive(Debug, Clone)]
pub struct Guidance {
    config: GuidanceConfig,
    num_steps: usize,
    state: State,
    trace: GuidanceTrace,
}

impl Guidance {
    pub fn new(config: &GuidanceConfig, concept_ids: Vec<String>, num_steps: usize) -> Result<Self> {
        config.validate(num_steps)?;
        if concept_ids.is_empty() {
            return Err(Error::config("guidance needs at least one unsafe concept"));
        }
        let state = match config.variant {
            Variant::Cfg | Variant::Neg => State::Plain,
            Variant::Sld => State::Sld(config.resolved_sld()?, SldState::new()),
            Variant::SpGuard => State::SpGuard(ProxyState::new(concept_ids.len(), config.spguard.t_p)),
        };
        Ok(Self {
            config: config.clone(),
            num_steps,
            state,
            trace: GuidanceTrace {
                method: config.name.clone(),
                concept_ids,
                steps: Vec::with_capacity(num_steps),
                proxy: None,
            },
        })
    }

    pub fn config(&self) -> &GuidanceConfig {
        &self.config
    }

    pub fn trace(&self) -> &GuidanceTrace {
        &self.trace
    }

    /// Consumes the strategy, checking that every step ran.
    pub fn finish(self) -> Result<GuidanceTrace> {
        if self.trace.steps.len() != self.num_steps {
            return Err(Error::contract(format!(
                "trajectory ended after {} of {} steps",
                self.trace.steps.len(),
                self.num_steps
            )));
        }
        Ok(self.trace)
    }

    pub fn step(&mut self, inp: &StepInputs<'_>) -> Result<StepOutput> {
        let expected = self.trace.steps.len() + 1;
        if inp.step != expected || inp.step > self.num_steps {
            return Err(Error::contract(format!(
                "guidance step {} out of order (expected {expected} of {})",
                inp.step, self.num_steps
            )));
        }
        if inp.eps_unsafe.len() != self.trace.concept_ids.len() {
            return Err(Error::contract(format!(
                "expected {} unsafe estimates, got {}",
                self.trace.concept_ids.len(),
                inp.eps_unsafe.len()
            )));
        }
        let dc_prompt = noise_direction(inp.eps_prompt, inp.eps_uncond)?;
        let dc_unsafe = inp
            .eps_unsafe
            .iter()
            .map(|e| noise_direction(e, inp.eps_uncond))
            .collect::<Result<Vec<_>>>()?;
        let dc_refs: Vec<&Tensor3> = dc_unsafe.iter().collect();
        let sims = whole_tensor_similarities(&dc_prompt, &dc_refs)?;

        let mut record = StepRecord {
            step: inp.step,
            t: inp.t,
            lambda: None,
            proxy: None,
            mask_on_frac: 0.0,
            mu_min: 0.0,
            mu_mean: 0.0,
            mu_max: 0.0,
            sims: sims.clone(),
        };
        let s_g = self.config.s_g;
        let out = match &mut self.state {
            State::Plain => {
                let eps = match self.config.variant {
                    Variant::Neg => neg_prompt_combine(inp.eps_unsafe_combined, inp.eps_prompt, s_g)?,
                    _ => cfg_combine(inp.eps_uncond, inp.eps_prompt, s_g)?,
                };
                StepOutput {
                    eps,
                    mu: None,
                    mask: None,
                }
            }
            State::Sld(params, st) => {
                let o = sld_step(inp.eps_uncond, inp.eps_prompt, inp.eps_unsafe_combined, params, st)?;
                let eps = combine_guided(inp.eps_uncond, inp.eps_prompt, &o.gamma, s_g)?;
                record.set_mu(Some(&o.mu));
                StepOutput {
                    eps,
                    mu: Some(o.mu),
                    mask: None,
                }
            }
            State::SpGuard(proxy) => {
                let params = &self.config.spguard;
                let lambda = lambda_schedule(inp.step, params, self.num_steps)?;
                record.lambda = Some(lambda);
                if inp.step <= params.t_p {
                    proxy.accumulate_similarities(&sims)?;
                    if let Some(p) = proxy.proxy() {
                        self.trace.proxy = Some(ProxyRecord {
                            per_concept: proxy.concept_means(),
                            proxy: p,
                            p_plus: p.max(0.0),
                            argmax: self.trace.concept_ids[proxy.argmax()].clone(),
                        });
                    }
                    record.proxy = proxy.proxy();
                    StepOutput {
                        eps: cfg_combine(inp.eps_uncond, inp.eps_prompt, s_g)?,
                        mu: None,
                        mask: None,
                    }
                } else {
                    let p_plus = proxy
                        .p_plus()
                        .ok_or_else(|| Error::contract("proxy not finalized after the proxy window"))?;
                    record.proxy = proxy.proxy();
                    spguard_apply(inp, &dc_prompt, &dc_unsafe, params, lambda, p_plus, s_g, &mut record)?
                }
            }
        };
        self.trace.steps.push(record);
        Ok(out)
    }
}

#[allow(clippy::too_many_arguments)]
fn spguard_apply(
    inp: &StepInputs<'_>,
    dc_prompt: &Tensor3,
    dc_unsafe: &[Tensor3],
    params: &SpGuardParams,
    lambda: f64,
    p_plus: f64,
    s_g: f64,
    record: &mut StepRecord,
) -> Result<StepOutput> {
    // (direction, estimate) pairs that receive a mask
    let combined_dc;
    let targets: Vec<(&Tensor3, &Tensor3)> = match params.concept_mode {
        ConceptMode::PerConceptSum => dc_unsafe.iter().zip(inp.eps_unsafe).collect(),
        ConceptMode::Combined => {
            combined_dc = noise_direction(inp.eps_unsafe_combined, inp.eps_uncond)?;
            vec![(&combined_dc, inp.eps_unsafe_combined)]
        }
    };
    let shape = inp.eps_uncond.shape();
    let mut mask_union = Tensor3::zeros(shape);
    let mut mu_total = Tensor3::zeros(shape);
    let mut gamma = Tensor3::zeros(shape);
    let active = lambda * p_plus != 0.0;
    for (dc, eps_s) in targets {
        let mask = spguard_mask(dc_prompt, dc, params.q, params.mask_value)?;
        for (u, m) in mask_union.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *u = u.max(*m);
        }
        if active {
            let mu = spguard_mu(lambda, p_plus, &mask);
            let g = safe_gamma(eps_s, inp.eps_uncond, &mu)?;
            for (a, v) in gamma.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += v;
            }
            for (a, v) in mu_total.as_mut_slice().iter_mut().zip(mu.as_slice()) {
                *a += v;
            }
        }
    }
    let eps = if active {
        combine_guided(inp.eps_uncond, inp.eps_prompt, &gamma, s_g)?
    } else {
        cfg_combine(inp.eps_uncond, inp.eps_prompt, s_g)?
    };
    record.set_mu(Some(&mu_total));
    let on = mask_union.as_slice().iter().filter(|&&v| v != 0.0).count();
    record.mask_on_frac = on as f64 / mask_union.len() as f64;
    Ok(StepOutput {
        eps,
        mu: Some(mu_total),
        mask: Some(mask_union),
    })
}

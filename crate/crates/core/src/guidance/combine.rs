// SPDX-License-Identifier: Apache-2.0

//! Per-step combinations of noise estimates.

use crate::error::Result;
use crate::tensor::Tensor3;

/// `u + s·(c − u)`, returning `c` itself at `s = 1`.
#[inline]
fn lerp(u: f64, c: f64, s: f64) -> f64 {
    if s == 1.0 {
        c
    } else {
        u + s * (c - u)
    }
}

/// Classifier-free guidance: `ε_u + s_g·(ε_c − ε_u)`.
pub fn cfg_combine(eps_uncond: &Tensor3, eps_cond: &Tensor3, s_g: f64) -> Result<Tensor3> {
    eps_uncond.ensure_same_shape(eps_cond, "cfg_combine")?;
    eps_uncond.zip_map(eps_cond, |u, c| lerp(u, c, s_g))
}

/// Negative-prompt guidance: the unconditional estimate is replaced by the
/// negative prompt's, `ε_neg + s_g·(ε_c − ε_neg)`.
pub fn neg_prompt_combine(eps_neg: &Tensor3, eps_cond: &Tensor3, s_g: f64) -> Result<Tensor3> {
    eps_neg.ensure_same_shape(eps_cond, "neg_prompt_combine")?;
    eps_neg.zip_map(eps_cond, |n, c| lerp(n, c, s_g))
}

/// Safe guidance term `γ = −μ ⊙ (ε_S − ε_u)`.
pub fn safe_gamma(eps_unsafe: &Tensor3, eps_uncond: &Tensor3, mu: &Tensor3) -> Result<Tensor3> {
    eps_unsafe.ensure_same_shape(eps_uncond, "safe_gamma")?;
    eps_unsafe.ensure_same_shape(mu, "safe_gamma")?;
    let values = eps_unsafe
        .as_slice()
        .iter()
        .zip(eps_uncond.as_slice())
        .zip(mu.as_slice())
        .map(|((&s, &u), &m)| -m * (s - u))
        .collect();
    Tensor3::new(eps_unsafe.shape(), values).map_err(|e| e.with_context("safe_gamma"))
}

/// Guided estimate `ε_u + s_g·(ε_p − ε_u + γ)`.
///
/// Entries where `γ = 0` (of either sign) take the [`cfg_combine`] path, so a
/// zero `γ` reproduces CFG bit for bit.
pub fn combine_guided(
    eps_uncond: &Tensor3,
    eps_prompt: &Tensor3,
    gamma: &Tensor3,
    s_g: f64,
) -> Result<Tensor3> {
    eps_uncond.ensure_same_shape(eps_prompt, "combine_guided")?;
    eps_uncond.ensure_same_shape(gamma, "combine_guided")?;
    let values = eps_uncond
        .as_slice()
        .iter()
        .zip(eps_prompt.as_slice())
        .zip(gamma.as_slice())
        .map(|((&u, &p), &g)| {
            if g == 0.0 {
                lerp(u, p, s_g)
            } else {
                u + s_g * (p - u + g)
            }
        })
        .collect();
    Tensor3::new(eps_uncond.shape(), values).map_err(|e| e.with_context("combine_guided"))
}

/// Noise direction `Δc = ε(z, c) − ε(z, φ)`.
pub fn noise_direction(eps_cond: &Tensor3, eps_null: &Tensor3) -> Result<Tensor3> {
    eps_cond.ensure_same_shape(eps_null, "noise_direction")?;
    eps_cond.sub(eps_null)
}

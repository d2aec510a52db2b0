// SPDX-License-Identifier: Apache-2.0

//! Forward-process noise schedules.
//!
//! Sampling steps are numbered `t = 1..=T`; the reverse loop visits them in
//! descending order. `alpha_bar(t)` is the cumulative signal fraction at step
//! `t`, so `z_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    /// Betas evenly spaced between the endpoints.
    Linear,
    /// Square roots of the betas evenly spaced (the latent-diffusion default).
    #[default]
    ScaledLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    num_steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

fn validate(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<()> {
    if num_steps < 2 {
        return Err(Error::config(format!(
            "schedule needs at least 2 steps, got {num_steps}"
        )));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    Ok(())
}

fn betas(n: usize, beta_start: f64, beta_end: f64, kind: BetaKind) -> Vec<f64> {
    let lerp = |a: f64, b: f64, i: usize| a + (b - a) * i as f64 / (n - 1) as f64;
    match kind {
        BetaKind::Linear => (0..n).map(|i| lerp(beta_start, beta_end, i)).collect(),
        BetaKind::ScaledLinear => (0..n)
            .map(|i| lerp(beta_start.sqrt(), beta_end.sqrt(), i).powi(2))
            .collect(),
    }
}

/// Builds a `num_steps` schedule whose betas run directly from `beta_start` to `beta_end`.
pub fn make_schedule(
    num_steps: usize,
    beta_start: f64,
    beta_end: f64,
    kind: BetaKind,
) -> Result<NoiseSchedule> {
    validate(num_steps, beta_start, beta_end)?;
    let betas = betas(num_steps, beta_start, beta_end, kind);
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(num_steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule {
        num_steps,
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    /// A `num_steps` sampling schedule taken from a `train_steps` training
    /// schedule with evenly spaced timesteps `1, 1+k, 1+2k, …` where
    /// `k = train_steps / num_steps`. Per-step betas are the ratios of
    /// consecutive selected `ᾱ` values.
    pub fn subsampled(
        num_steps: usize,
        train_steps: usize,
        beta_start: f64,
        beta_end: f64,
        kind: BetaKind,
    ) -> Result<NoiseSchedule> {
        validate(num_steps, beta_start, beta_end)?;
        if train_steps < num_steps {
            return Err(Error::config(format!(
                "train_steps {train_steps} must be at least num_steps {num_steps}"
            )));
        }
        let train = make_schedule(train_steps, beta_start, beta_end, kind)?;
        let stride = train_steps / num_steps;
        let offset = usize::from(stride > 1);
        let alpha_bars: Vec<f64> = (0..num_steps)
            .map(|k| train.alpha_bars[k * stride + offset])
            .collect();
        Self::from_alpha_bars(alpha_bars)
    }

    /// A schedule from explicit `ᾱ_1..=ᾱ_T`, which must lie in `(0, 1]` and
    /// be non-increasing.
    pub fn from_alpha_bars(alpha_bars: Vec<f64>) -> Result<NoiseSchedule> {
        let num_steps = alpha_bars.len();
        if num_steps == 0 {
            return Err(Error::config("schedule needs at least one step"));
        }
        let mut prev = 1.0;
        for &ab in &alpha_bars {
            if !(ab > 0.0 && ab <= prev) {
                return Err(Error::config(format!(
                    "alpha_bar values must be non-increasing in (0, 1], got {ab} after {prev}"
                )));
            }
            prev = ab;
        }
        let mut prev = 1.0;
        let alphas: Vec<f64> = alpha_bars
            .iter()
            .map(|&ab| {
                let a = ab / prev;
                prev = ab;
                a
            })
            .collect();
        let betas = alphas.iter().map(|a| 1.0 - a).collect();
        Ok(NoiseSchedule {
            num_steps,
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `ᾱ_t` for `t ∈ 1..=T`; `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps {
            return Err(Error::contract(format!(
                "step {t} outside schedule 1..={}",
                self.num_steps
            )));
        }
        Ok(())
    }

    /// Reverse traversal order `T, T−1, …, 1`.
    pub fn step_indices(&self) -> impl Iterator<Item = usize> {
        (1..=self.num_steps).rev()
    }
}

/// Serializable description of a schedule, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: BetaKind,
    /// When larger than `num_steps`, sampling steps are a subsequence of a
    /// schedule with this many training steps.
    pub train_steps: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            num_steps: 50,
            beta_start: 0.00085,
            beta_end: 0.012,
            kind: BetaKind::ScaledLinear,
            train_steps: 1000,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        if self.train_steps <= self.num_steps {
            make_schedule(self.num_steps, self.beta_start, self.beta_end, self.kind)
        } else {
            NoiseSchedule::subsampled(
                self.num_steps,
                self.train_steps,
                self.beta_start,
                self.beta_end,
                self.kind,
            )
        }
    }
}

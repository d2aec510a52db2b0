// SPDX-License-Identifier: Apache-2.0

//! Selective prompt-adaptive guidance.
//!
//! During the first `t_p` steps (the proxy window) the sampler runs plain
//! CFG while the whole-tensor cosine similarity between the prompt's noise
//! direction and each unsafe concept's is accumulated. The window mean,
//! maximized over concepts, is the risk proxy `P`. Afterwards the guidance
//! weight is `μ_t = λ(t)·max(0, P)·M`, where the mask `M` keeps only the
//! largest `|Δc_S|` entries and scales them by the per-pixel channel-vector
//! similarity of the two directions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{cosine_unchecked, percentile_threshold};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScheduleKind {
    /// 0 in the proxy window, `λ_max` until `t_drop`, then 1.
    #[default]
    Step,
    /// 0 in the proxy window, then a half-cosine decay from `λ_max` to 1.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConceptMode {
    /// One mask and guidance term per unsafe concept, summed.
    #[default]
    PerConceptSum,
    /// A single condition at the average unsafe template.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskValue {
    /// `1 + |ψ|`.
    #[default]
    Literal,
    /// `1 + max(0, ψ)`, leaving anti-aligned pixels at weight 1.
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpGuardParams {
    pub lambda_max: f64,
    pub q: f64,
    pub t_p: usize,
    pub schedule: LambdaScheduleKind,
    /// Last step (counted from the start) at `λ_max` for the step schedule;
    /// `None` means `floor(T/2)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_drop: Option<usize>,
    pub concept_mode: ConceptMode,
    pub mask_value: MaskValue,
}

impl Default for SpGuardParams {
    fn default() -> Self {
        Self {
            lambda_max: 4.0,
            q: 0.9,
            t_p: 10,
            schedule: LambdaScheduleKind::Step,
            t_drop: None,
            concept_mode: ConceptMode::PerConceptSum,
            mask_value: MaskValue::Literal,
        }
    }
}

impl SpGuardParams {
    pub fn t_drop(&self, num_steps: usize) -> usize {
        self.t_drop.unwrap_or(num_steps / 2)
    }

    pub fn validate(&self, num_steps: usize) -> Result<()> {
        if !(self.lambda_max >= 1.0 && self.lambda_max.is_finite()) {
            return Err(Error::config(format!(
                "lambda_max must be >= 1, got {}",
                self.lambda_max
            )));
        }
        if !(0.0..1.0).contains(&self.q) {
            return Err(Error::config(format!("q must lie in [0, 1), got {}", self.q)));
        }
        if self.t_p == 0 || self.t_p >= num_steps {
            return Err(Error::config(format!(
                "t_p must satisfy 0 < t_p < T = {num_steps}, got {}",
                self.t_p
            )));
        }
        let t_drop = self.t_drop(num_steps);
        if t_drop <= self.t_p || t_drop > num_steps {
            return Err(Error::config(format!(
                "t_drop must lie in (t_p, T] = ({}, {num_steps}], got {t_drop}",
                self.t_p
            )));
        }
        Ok(())
    }
}

/// Running state of the risk proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyState {
    window: usize,
    sums: Vec<f64>,
    steps_accumulated: usize,
    finalized: Option<f64>,
}

impl ProxyState {
    pub fn new(num_concepts: usize, window: usize) -> Self {
        Self {
            window,
            sums: vec![0.0; num_concepts],
            steps_accumulated: 0,
            finalized: None,
        }
    }

    pub fn steps_accumulated(&self) -> usize {
        self.steps_accumulated
    }

    /// Final proxy `P`, available after `window` accumulation steps.
    pub fn proxy(&self) -> Option<f64> {
        self.finalized
    }

    /// `P₊ = max(0, P)`.
    pub fn p_plus(&self) -> Option<f64> {
        self.finalized.map(|p| p.max(0.0))
    }

    /// Window-mean similarity per concept (running mean before finalization).
    pub fn concept_means(&self) -> Vec<f64> {
        let n = self.steps_accumulated.max(1) as f64;
        self.sums.iter().map(|s| s / n).collect()
    }

    /// Index of the concept attaining the maximum.
    pub fn argmax(&self) -> usize {
        let means = self.concept_means();
        (0..means.len())
            .max_by(|&a, &b| means[a].total_cmp(&means[b]).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    /// Adds one step of similarities. Returns the per-concept values.
    pub fn accumulate(&mut self, dc_prompt: &Tensor3, dc_unsafe: &[&Tensor3]) -> Result<Vec<f64>> {
        if self.finalized.is_some() {
            return Err(Error::contract("proxy accumulated after finalization"));
        }
        if dc_unsafe.len() != self.sums.len() {
            return Err(Error::contract(format!(
                "proxy expects {} concept directions, got {}",
                self.sums.len(),
                dc_unsafe.len()
            )));
        }
        let sims = whole_tensor_similarities(dc_prompt, dc_unsafe)?;
        self.accumulate_similarities(&sims)?;
        Ok(sims)
    }

    pub(crate) fn accumulate_similarities(&mut self, sims: &[f64]) -> Result<()> {
        if self.finalized.is_some() {
            return Err(Error::contract("proxy accumulated after finalization"));
        }
        for (s, v) in self.sums.iter_mut().zip(sims) {
            *s += v;
        }
        self.steps_accumulated += 1;
        if self.steps_accumulated == self.window {
            let p = self
                .sums
                .iter()
                .map(|s| s / self.window as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            self.finalized = Some(p.clamp(-1.0, 1.0));
        }
        Ok(())
    }
}

/// Cosine similarity of the fully flattened prompt direction with each concept direction.
pub fn whole_tensor_similarities(dc_prompt: &Tensor3, dc_unsafe: &[&Tensor3]) -> Result<Vec<f64>> {
    dc_unsafe
        .iter()
        .map(|d| {
            dc_prompt.ensure_same_shape(d, "proxy similarity")?;
            Ok(cosine_unchecked(dc_prompt.as_slice(), d.as_slice()))
        })
        .collect()
}

/// Selective mask: entries where `|Δc_S|` exceeds its `q`-quantile get
/// `1 + |ψ(i,j)|` (or `1 + max(0, ψ)`), the rest 0. `ψ(i,j)` is the cosine
/// similarity of the channel vectors `Δc_p[·,i,j]` and `Δc_S[·,i,j]`.
pub fn spguard_mask(dc_prompt: &Tensor3, dc_unsafe: &Tensor3, q: f64, value: MaskValue) -> Result<Tensor3> {
    dc_prompt.ensure_same_shape(dc_unsafe, "spguard_mask")?;
    let magnitude = dc_unsafe.abs();
    let eta = percentile_threshold(&magnitude, q)?;
    let shape = dc_unsafe.shape();
    let mut mask = Tensor3::zeros(shape);
    let mut pp = vec![0.0; shape.channels];
    let mut ps = vec![0.0; shape.channels];
    for i in 0..shape.height {
        for j in 0..shape.width {
            let hot: Vec<usize> = (0..shape.channels)
                .filter(|&c| magnitude.get(c, i, j) > eta)
                .collect();
            if hot.is_empty() {
                continue;
            }
            for c in 0..shape.channels {
                pp[c] = dc_prompt.get(c, i, j);
                ps[c] = dc_unsafe.get(c, i, j);
            }
            let psi = cosine_unchecked(&pp, &ps);
            let weight = match value {
                MaskValue::Literal => 1.0 + psi.abs(),
                MaskValue::Signed => 1.0 + psi.max(0.0),
            };
            for c in hot {
                mask.set(c, i, j, weight);
            }
        }
    }
    Ok(mask)
}

/// `λ(t)` at position `t_index ∈ 1..=T` counted from the start of sampling.
pub fn lambda_schedule(t_index: usize, params: &SpGuardParams, num_steps: usize) -> Result<f64> {
    if t_index == 0 || t_index > num_steps {
        return Err(Error::contract(format!(
            "lambda_schedule: step {t_index} outside 1..={num_steps}"
        )));
    }
    if t_index <= params.t_p {
        return Ok(0.0);
    }
    Ok(match params.schedule {
        LambdaScheduleKind::Step => {
            if t_index <= params.t_drop(num_steps) {
                params.lambda_max
            } else {
                1.0
            }
        }
        LambdaScheduleKind::Cosine => {
            let span = num_steps - params.t_p - 1;
            if span == 0 {
                params.lambda_max
            } else {
                let u = (t_index - params.t_p - 1) as f64 / span as f64;
                1.0 + (params.lambda_max - 1.0) * (1.0 + (std::f64::consts::PI * u).cos()) / 2.0
            }
        }
    })
}

/// `μ_t = λ(t)·P₊·M`.
pub fn spguard_mu(lambda_t: f64, p_plus: f64, mask: &Tensor3) -> Tensor3 {
    let k = lambda_t * p_plus;
    mask.map(|m| k * m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_noise, SeedSpec};
    use crate::tensor::Shape;
    use proptest::prelude::*;

    #[test]
    fn proxy_constant_average() {
        let mut st = ProxyState::new(1, 10);
        for _ in 0..9 {
            st.accumulate_similarities(&[0.5]).unwrap();
            assert!(st.proxy().is_none());
        }
        st.accumulate_similarities(&[0.5]).unwrap();
        assert!((st.proxy().unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(st.accumulate_similarities(&[0.5]), Err(Error::Contract(_))));
    }

    #[test]
    fn proxy_takes_max_over_concepts() {
        let mut st = ProxyState::new(2, 10);
        for _ in 0..10 {
            st.accumulate_similarities(&[0.2, 0.6]).unwrap();
        }
        assert!((st.proxy().unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(st.argmax(), 1);
    }

    #[test]
    fn negative_proxy_clamps_to_zero() {
        let mut st = ProxyState::new(1, 10);
        for _ in 0..10 {
            st.accumulate_similarities(&[-0.3]).unwrap();
        }
        assert!((st.proxy().unwrap() + 0.3).abs() < 1e-12);
        assert_eq!(st.p_plus(), Some(0.0));
    }

    #[test]
    fn accumulate_checks_concept_count() {
        let mut st = ProxyState::new(2, 3);
        let t = Tensor3::filled(Shape::new(1, 1, 2), 1.0);
        assert!(st.accumulate(&t, &[&t]).is_err());
        let sims = st.accumulate(&t, &[&t, &t.scale(-1.0)]).unwrap();
        assert_eq!(sims, vec![1.0, -1.0]);
    }

    #[test]
    fn mask_hot_pixel() {
        let shape = Shape::new(2, 2, 2);
        let mut dc = Tensor3::zeros(shape);
        dc.set(0, 0, 0, 1.0);
        dc.set(1, 0, 0, 1.0);
        let m = spguard_mask(&dc, &dc, 0.75, MaskValue::Literal).unwrap();
        for c in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let want = if (i, j) == (0, 0) { 2.0 } else { 0.0 };
                    assert_eq!(m.get(c, i, j), want);
                }
            }
        }
    }

    #[test]
    fn mask_orthogonal_channels_weight_one() {
        let shape = Shape::new(2, 3, 3);
        let ds = Tensor3::from_fn(shape, |c, i, j| if c == 0 { (1 + i * 3 + j) as f64 } else { 0.0 });
        let dp = Tensor3::from_fn(shape, |c, _, _| if c == 1 { 1.0 } else { 0.0 });
        let m = spguard_mask(&dp, &ds, 0.5, MaskValue::Literal).unwrap();
        assert!(m.as_slice().iter().any(|&v| v > 0.0));
        assert!(m.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn mask_of_zero_direction_is_empty() {
        let shape = Shape::new(3, 4, 4);
        let dp = gaussian_noise(shape, SeedSpec::new(1, 0));
        let m = spguard_mask(&dp, &Tensor3::zeros(shape), 0.9, MaskValue::Literal).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn signed_mask_drops_anti_aligned_bonus() {
        let shape = Shape::new(2, 1, 1);
        let ds = Tensor3::new(shape, vec![1.0, 1.0]).unwrap();
        let dp = ds.scale(-1.0);
        assert_eq!(spguard_mask(&dp, &ds, 0.0, MaskValue::Literal).unwrap().as_slice(), &[2.0, 2.0]);
        assert_eq!(spguard_mask(&dp, &ds, 0.0, MaskValue::Signed).unwrap().as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn step_schedule_values() {
        let p = SpGuardParams {
            t_drop: Some(25),
            ..SpGuardParams::default()
        };
        assert_eq!(lambda_schedule(5, &p, 50).unwrap(), 0.0);
        assert_eq!(lambda_schedule(10, &p, 50).unwrap(), 0.0);
        assert_eq!(lambda_schedule(11, &p, 50).unwrap(), 4.0);
        assert_eq!(lambda_schedule(15, &p, 50).unwrap(), 4.0);
        assert_eq!(lambda_schedule(25, &p, 50).unwrap(), 4.0);
        assert_eq!(lambda_schedule(26, &p, 50).unwrap(), 1.0);
        assert_eq!(lambda_schedule(40, &p, 50).unwrap(), 1.0);
        assert!(lambda_schedule(0, &p, 50).is_err());
        assert!(lambda_schedule(51, &p, 50).is_err());
        // default t_drop is floor(T/2)
        assert_eq!(SpGuardParams::default().t_drop(50), 25);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let p = SpGuardParams {
            schedule: LambdaScheduleKind::Cosine,
            ..SpGuardParams::default()
        };
        assert_eq!(lambda_schedule(10, &p, 50).unwrap(), 0.0);
        assert_eq!(lambda_schedule(11, &p, 50).unwrap(), 4.0);
        assert!((lambda_schedule(50, &p, 50).unwrap() - 1.0).abs() < 1e-15);
        let vals: Vec<f64> = (11..=50).map(|t| lambda_schedule(t, &p, 50).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn mu_examples() {
        let m = Tensor3::filled(Shape::new(1, 1, 3), 2.0);
        assert!(spguard_mu(4.0, 0.0, &m).as_slice().iter().all(|&v| v == 0.0));
        assert!(spguard_mu(4.0, 0.5, &m).as_slice().iter().all(|&v| v == 4.0));
        assert!(spguard_mu(0.0, 0.5, &m).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn params_validation() {
        let ok = SpGuardParams::default();
        ok.validate(50).unwrap();
        let bad = [
            SpGuardParams { lambda_max: 0.5, ..ok.clone() },
            SpGuardParams { q: 1.0, ..ok.clone() },
            SpGuardParams { t_p: 50, ..ok.clone() },
            SpGuardParams { t_p: 0, ..ok.clone() },
            SpGuardParams { t_drop: Some(10), ..ok.clone() },
            SpGuardParams { t_drop: Some(51), ..ok.clone() },
        ];
        for b in bad {
            assert!(matches!(b.validate(50), Err(Error::Config(_))), "{b:?}");
        }
    }

    proptest! {
        #[test]
        fn mask_range_and_occupancy(seed in 0u64..100_000, q in prop::sample::select(vec![0.0, 0.5, 0.9, 0.99, 0.3, 0.75])) {
            let shape = Shape::new(3, 8, 8);
            let dp = gaussian_noise(shape, SeedSpec::new(seed, 0));
            let ds = gaussian_noise(shape, SeedSpec::new(seed, 1));
            let m = spguard_mask(&dp, &ds, q, MaskValue::Literal).unwrap();
            let on = m.as_slice().iter().filter(|&&v| v != 0.0).count();
            prop_assert!(m.as_slice().iter().all(|&v| v == 0.0 || (1.0..=2.0).contains(&v)));
            prop_assert_eq!(on, shape.len() - crate::numeric::quantile_rank(q, shape.len()));
        }

        #[test]
        fn proxy_is_bounded_and_scale_invariant(seed in 0u64..10_000, k1 in 0.01f64..100.0, k2 in 0.01f64..100.0) {
            let shape = Shape::new(2, 3, 3);
            let mut a = ProxyState::new(2, 3);
            let mut b = ProxyState::new(2, 3);
            for step in 0..3 {
                let dp = gaussian_noise(shape, SeedSpec::new(seed, 3 * step));
                let d1 = gaussian_noise(shape, SeedSpec::new(seed, 3 * step + 1));
                let d2 = gaussian_noise(shape, SeedSpec::new(seed, 3 * step + 2));
                let sa = a.accumulate(&dp, &[&d1, &d2]).unwrap();
                let sb = b.accumulate(&dp.scale(k1), &[&d1.scale(k2), &d2.scale(k1 * k2)]).unwrap();
                for (x, y) in sa.iter().zip(&sb) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
            let p = a.proxy().unwrap();
            prop_assert!((-1.0..=1.0).contains(&p));
            prop_assert!((0.0..=1.0).contains(&a.p_plus().unwrap()));
            prop_assert!((p - b.proxy().unwrap()).abs() < 1e-12);
        }
    }
}

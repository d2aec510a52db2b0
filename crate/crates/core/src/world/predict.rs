// SPDX-License-Identifier: Apache-2.0

//! Closed-form noise predictors.
//!
//! For data `x₀ ~ Normal(μ, σ²I)` and `z_t = √ᾱ·x₀ + √(1−ᾱ)·ε`, the marginal
//! of `z_t` is `Normal(√ᾱ·μ, (ᾱσ² + 1 − ᾱ)I)`. The posterior-mean noise is
//! `−√(1−ᾱ)` times its score:
//!
//! ```text
//! ε*(z_t) = √(1−ᾱ) · (z_t − √ᾱ·μ) / (ᾱσ² + 1 − ᾱ)
//! ```
//!
//! A mixture of such Gaussians predicts the responsibility-weighted sum of
//! the component predictions.

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy)]
pub struct MixtureComponent<'a> {
    pub template: &'a Tensor3,
    pub sigma: f64,
    pub weight: f64,
}

/// Signal scale `√ᾱ`, noise scale `√(1−ᾱ)` and marginal variance at step `t`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepScales {
    pub signal: f64,
    pub noise: f64,
}

impl StepScales {
    pub fn at(schedule: &NoiseSchedule, t: usize) -> Result<Self> {
        schedule.check_step(t)?;
        let ab = schedule.alpha_bar(t);
        Ok(Self {
            signal: ab.sqrt(),
            noise: (1.0 - ab).sqrt(),
        })
    }

    pub fn variance(&self, sigma: f64) -> f64 {
        self.signal * self.signal * sigma * sigma + self.noise * self.noise
    }
}

fn analytic_into(out: &mut [f64], z: &[f64], mean: &[f64], sigma: f64, s: StepScales) {
    let gain = s.noise / s.variance(sigma);
    for ((o, &zv), &m) in out.iter_mut().zip(z).zip(mean) {
        *o = gain * (zv - s.signal * m);
    }
}

/// Bayes-optimal noise estimate for data `Normal(template, σ²I)` at step `t`.
pub fn analytic_noise_prediction(
    z_t: &Tensor3,
    t: usize,
    template: &Tensor3,
    sigma: f64,
    schedule: &NoiseSchedule,
) -> Result<Tensor3> {
    z_t.ensure_same_shape(template, "analytic_noise_prediction")?;
    if !(sigma >= 0.0) {
        return Err(Error::contract(format!("sigma must be non-negative, got {sigma}")));
    }
    let s = StepScales::at(schedule, t)?;
    let mut out = Tensor3::zeros(z_t.shape());
    analytic_into(out.as_mut_slice(), z_t.as_slice(), template.as_slice(), sigma, s);
    Ok(out)
}

/// Posterior responsibilities of each component for `z_t`, log-sum-exp stabilized.
pub fn mixture_responsibilities(
    z_t: &Tensor3,
    t: usize,
    components: &[MixtureComponent<'_>],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if components.is_empty() {
        return Err(Error::config("mixture needs at least one component"));
    }
    let s = StepScales::at(schedule, t)?;
    let dim = z_t.len() as f64;
    let mut logits = Vec::with_capacity(components.len());
    for c in components {
        z_t.ensure_same_shape(c.template, "mixture_noise_prediction")?;
        if !(c.weight > 0.0) {
            return Err(Error::config("mixture weights must be positive"));
        }
        let var = s.variance(c.sigma);
        let mut sq = 0.0;
        for (&zv, &m) in z_t.as_slice().iter().zip(c.template.as_slice()) {
            let d = zv - s.signal * m;
            sq += d * d;
        }
        logits.push(c.weight.ln() - 0.5 * dim * var.ln() - 0.5 * sq / var);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Noise estimate of the Gaussian mixture `Σ w_k Normal(μ_k, σ_k²I)`.
pub fn mixture_noise_prediction(
    z_t: &Tensor3,
    t: usize,
    components: &[MixtureComponent<'_>],
    schedule: &NoiseSchedule,
) -> Result<Tensor3> {
    if components.len() == 1 {
        let c = components[0];
        if !(c.weight > 0.0) {
            return Err(Error::config("mixture weights must be positive"));
        }
        return analytic_noise_prediction(z_t, t, c.template, c.sigma, schedule);
    }
    let resp = mixture_responsibilities(z_t, t, components, schedule)?;
    let s = StepScales::at(schedule, t)?;
    let mut out = Tensor3::zeros(z_t.shape());
    let mut scratch = vec![0.0; z_t.len()];
    for (c, r) in components.iter().zip(resp) {
        analytic_into(&mut scratch, z_t.as_slice(), c.template.as_slice(), c.sigma, s);
        for (o, e) in out.as_mut_slice().iter_mut().zip(&scratch) {
            *o += r * e;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_noise, SeedSpec};
    use crate::schedule::{make_schedule, BetaKind, ScheduleSpec};
    use crate::tensor::Shape;

    fn scalar(v: f64) -> Tensor3 {
        Tensor3::new(Shape::new(1, 1, 1), vec![v]).unwrap()
    }

    #[test]
    fn noiseless_point_mass_at_mean_predicts_zero() {
        let sched = ScheduleSpec::default().build().unwrap();
        let mu = gaussian_noise(Shape::new(2, 3, 3), SeedSpec::new(1, 0)).scale(0.5);
        for t in [1, 25, 50] {
            let z = mu.scale(sched.alpha_bar(t).sqrt());
            let eps = analytic_noise_prediction(&z, t, &mu, 0.0, &sched).unwrap();
            assert!(eps.as_slice().iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn noiseless_prediction_inverts_forward_process() {
        let sched = ScheduleSpec::default().build().unwrap();
        let shape = Shape::new(1, 4, 4);
        let x0 = gaussian_noise(shape, SeedSpec::new(2, 0)).scale(0.3);
        let noise = gaussian_noise(shape, SeedSpec::new(3, 0));
        let t = 30;
        let ab = sched.alpha_bar(t);
        let z = x0.scale(ab.sqrt()).add(&noise.scale((1.0 - ab).sqrt())).unwrap();
        let eps = analytic_noise_prediction(&z, t, &x0, 0.0, &sched).unwrap();
        for (e, n) in eps.as_slice().iter().zip(noise.as_slice()) {
            assert!((e - n).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_hand_value() {
        // ᾱ = 0.5 exactly at step 1 of a one-beta schedule
        let sched = make_schedule(2, 0.5, 0.5, BetaKind::Linear).unwrap();
        let eps = analytic_noise_prediction(&scalar(1.0), 1, &scalar(0.0), 1.0, &sched).unwrap();
        assert!((eps.as_slice()[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
    }

    #[test]
    fn single_component_mixture_is_bitwise_analytic() {
        let sched = ScheduleSpec::default().build().unwrap();
        let shape = Shape::new(3, 4, 4);
        let mu = gaussian_noise(shape, SeedSpec::new(4, 0));
        let z = gaussian_noise(shape, SeedSpec::new(5, 0));
        let comp = [MixtureComponent { template: &mu, sigma: 0.1, weight: 1.0 }];
        let a = mixture_noise_prediction(&z, 17, &comp, &sched).unwrap();
        let b = analytic_noise_prediction(&z, 17, &mu, 0.1, &sched).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn symmetric_components_split_evenly_at_origin() {
        let sched = ScheduleSpec::default().build().unwrap();
        let shape = Shape::new(1, 3, 3);
        let mu = Tensor3::filled(shape, 0.7);
        let neg = mu.scale(-1.0);
        let comps = [
            MixtureComponent { template: &mu, sigma: 0.1, weight: 0.5 },
            MixtureComponent { template: &neg, sigma: 0.1, weight: 0.5 },
        ];
        let r = mixture_responsibilities(&Tensor3::zeros(shape), 10, &comps, &sched).unwrap();
        assert_eq!(r, vec![0.5, 0.5]);
    }

    #[test]
    fn empty_mixture_is_config_error() {
        let sched = ScheduleSpec::default().build().unwrap();
        let z = scalar(0.0);
        assert!(matches!(mixture_noise_prediction(&z, 1, &[], &sched), Err(Error::Config(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let sched = ScheduleSpec::default().build().unwrap();
        let z = Tensor3::zeros(Shape::new(1, 2, 2));
        let mu = Tensor3::zeros(Shape::new(1, 2, 3));
        assert!(analytic_noise_prediction(&z, 1, &mu, 0.1, &sched).is_err());
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Deterministic DDIM sampling driven by the toy world's exact predictors.

use crate::error::{Error, Result};
use crate::guidance::{Guidance, GuidanceConfig, GuidanceTrace, StepInputs};
use crate::rng::{gaussian_noise, SeedSpec};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor3;
use crate::world::{
    analytic_noise_prediction, mixture_noise_prediction, Condition, MixtureComponent, PromptScenario, WorldModel,
};

/// One deterministic (η = 0) DDIM update from step `t` to `t − 1`.
///
/// At `t = 1` the clean estimate `x̂₀` is returned.
pub fn ddim_step(z_t: &Tensor3, eps: &Tensor3, t: usize, schedule: &NoiseSchedule) -> Result<Tensor3> {
    schedule.check_step(t)?;
    z_t.ensure_same_shape(eps, "ddim_step")?;
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (pa, pn) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let last = t == 1;
    let mut out = Vec::with_capacity(z_t.len());
    for (k, (&z, &e)) in z_t.as_slice().iter().zip(eps.as_slice()).enumerate() {
        let x0 = (z - sn * e) / sa;
        let v = if last { x0 } else { pa * x0 + pn * e };
        if !v.is_finite() {
            return Err(Error::Numeric {
                step: t,
                detail: format!("non-finite value at element {k} (z = {z}, eps = {e})"),
            });
        }
        out.push(v);
    }
    Tensor3::new(z_t.shape(), out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SampleOptions {
    /// Keep each step's `μ` and mask tensors.
    pub record_maps: bool,
    /// Keep each step's input latent `z_t`.
    pub record_latents: bool,
}

#[derive(Debug, Clone)]
pub struct StepSnapshot {
    pub step: usize,
    pub t: usize,
    pub z_t: Option<Tensor3>,
    pub mu: Option<Tensor3>,
    pub mask: Option<Tensor3>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub seed: SeedSpec,
    pub steps: Vec<StepSnapshot>,
    pub final_image: Tensor3,
    pub trace: GuidanceTrace,
}

/// Baseline (CFG) and guided trajectories from the same `z_T`.
#[derive(Debug, Clone)]
pub struct PairedRun {
    pub seed: SeedSpec,
    pub baseline: Trajectory,
    pub guided: Trajectory,
}

/// The conditions a sampler queries at every step.
#[derive(Debug, Clone)]
pub struct Predictors<'w> {
    null: Vec<MixtureComponent<'w>>,
    prompt: Condition,
    unsafe_conditions: Vec<Condition>,
    combined: Condition,
    unsafe_ids: Vec<String>,
}

impl<'w> Predictors<'w> {
    pub fn new(world: &'w WorldModel, prompt: Condition) -> Result<Self> {
        if prompt.template.shape() != world.shape() {
            return Err(Error::config(format!(
                "prompt shape {} != world shape {}",
                prompt.template.shape(),
                world.shape()
            )));
        }
        Ok(Self {
            null: world.null_components(),
            prompt,
            unsafe_conditions: world.unsafe_conditions(),
            combined: world.combined_unsafe_condition(),
            unsafe_ids: world.unsafe_ids(),
        })
    }

    pub fn for_scenario(world: &'w WorldModel, scenario: &PromptScenario) -> Result<Self> {
        Self::new(
            world,
            Condition {
                template: scenario.composed_template.clone(),
                data_std: scenario.data_std,
            },
        )
    }

    fn shape(&self) -> crate::tensor::Shape {
        self.prompt.template.shape()
    }

    /// Runs one trajectory from `z_T = gaussian_noise(seed)`.
    pub fn sample(
        &self,
        config: &GuidanceConfig,
        seed: SeedSpec,
        schedule: &NoiseSchedule,
        opts: SampleOptions,
    ) -> Result<Trajectory> {
        self.sample_from(config, seed, gaussian_noise(self.shape(), seed), schedule, opts)
            .map_err(|e| e.with_context(format!("seed {seed}")))
    }

    fn sample_from(
        &self,
        config: &GuidanceConfig,
        seed: SeedSpec,
        z_init: Tensor3,
        schedule: &NoiseSchedule,
        opts: SampleOptions,
    ) -> Result<Trajectory> {
        let num_steps = schedule.num_steps();
        let mut guidance = Guidance::new(config, self.unsafe_ids.clone(), num_steps)?;
        let mut z = z_init;
        let mut steps = Vec::with_capacity(num_steps);
        let single_unsafe = self.unsafe_conditions.len() == 1;
        for (k, t) in schedule.step_indices().enumerate() {
            let step = k + 1;
            let eps_uncond = mixture_noise_prediction(&z, t, &self.null, schedule)?;
            let eps_prompt =
                analytic_noise_prediction(&z, t, &self.prompt.template, self.prompt.data_std, schedule)?;
            let eps_unsafe = self
                .unsafe_conditions
                .iter()
                .map(|c| analytic_noise_prediction(&z, t, &c.template, c.data_std, schedule))
                .collect::<Result<Vec<_>>>()?;
            let combined_owned;
            let eps_unsafe_combined = if single_unsafe {
                &eps_unsafe[0]
            } else {
                combined_owned =
                    analytic_noise_prediction(&z, t, &self.combined.template, self.combined.data_std, schedule)?;
                &combined_owned
            };
            let out = guidance.step(&StepInputs {
                step,
                t,
                eps_uncond: &eps_uncond,
                eps_prompt: &eps_prompt,
                eps_unsafe: &eps_unsafe,
                eps_unsafe_combined,
            })?;
            let next = ddim_step(&z, &out.eps, t, schedule)?;
            steps.push(StepSnapshot {
                step,
                t,
                z_t: opts.record_latents.then(|| z.clone()),
                mu: if opts.record_maps { out.mu } else { None },
                mask: if opts.record_maps { out.mask } else { None },
            });
            z = next;
        }
        Ok(Trajectory {
            seed,
            steps,
            final_image: z,
            trace: guidance.finish()?,
        })
    }

    /// CFG baseline and `config` from the same initial noise. The baseline
    /// uses `config`'s guidance scale.
    pub fn paired_sample(
        &self,
        config: &GuidanceConfig,
        seed: SeedSpec,
        schedule: &NoiseSchedule,
        opts: SampleOptions,
    ) -> Result<PairedRun> {
        let baseline_cfg = GuidanceConfig::cfg(config.s_g);
        let baseline = self.sample(&baseline_cfg, seed, schedule, opts)?;
        let guided = self.sample(config, seed, schedule, opts)?;
        Ok(PairedRun { seed, baseline, guided })
    }
}

/// Samples `scenario` in `world` with `config`.
pub fn sample(
    world: &WorldModel,
    scenario: &PromptScenario,
    config: &GuidanceConfig,
    seed: SeedSpec,
    schedule: &NoiseSchedule,
) -> Result<Trajectory> {
    Predictors::for_scenario(world, scenario)?.sample(config, seed, schedule, SampleOptions::default())
}

pub fn paired_sample(
    world: &WorldModel,
    scenario: &PromptScenario,
    config: &GuidanceConfig,
    seed: SeedSpec,
    schedule: &NoiseSchedule,
) -> Result<PairedRun> {
    Predictors::for_scenario(world, scenario)?.paired_sample(config, seed, schedule, SampleOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, BetaKind, ScheduleSpec};
    use crate::tensor::Shape;

    fn forward(x0: &Tensor3, eps: &Tensor3, ab: f64) -> Tensor3 {
        x0.zip_map(eps, |x, e| ab.sqrt() * x + (1.0 - ab).sqrt() * e).unwrap()
    }

    #[test]
    fn exact_noise_recovers_x0() {
        let sched = ScheduleSpec::default().build().unwrap();
        let shape = Shape::new(2, 3, 3);
        let x0 = gaussian_noise(shape, SeedSpec::new(1, 0)).scale(0.5);
        let eps = gaussian_noise(shape, SeedSpec::new(2, 0));
        for t in [1, 7, 30, 50] {
            let ab = sched.alpha_bar(t);
            let z = forward(&x0, &eps, ab);
            let single = NoiseSchedule::from_alpha_bars(vec![ab]).unwrap();
            let back = ddim_step(&z, &eps, 1, &single).unwrap();
            for (a, b) in back.as_slice().iter().zip(x0.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
            // one step down lands on the forward marginal at t − 1
            let next = ddim_step(&z, &eps, t, &sched).unwrap();
            let want = forward(&x0, &eps, sched.alpha_bar(t - 1));
            for (n, w) in next.as_slice().iter().zip(want.as_slice()) {
                assert!((n - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_hand_trace() {
        // betas 0.1, 0.2 ⇒ ᾱ₁ = 0.9, ᾱ₂ = 0.72
        let sched = make_schedule(2, 0.1, 0.2, BetaKind::Linear).unwrap();
        let s = Shape::new(1, 1, 1);
        let z2 = Tensor3::filled(s, 1.0);
        let e = Tensor3::filled(s, 0.5);
        let z1 = ddim_step(&z2, &e, 2, &sched).unwrap().as_slice()[0];
        assert!((z1 - 0.980343882603333).abs() < 1e-12, "{z1}");
        let e1 = Tensor3::filled(s, -0.2);
        let x = ddim_step(&Tensor3::filled(s, z1), &e1, 1, &sched).unwrap().as_slice()[0];
        assert!((x - 1.1000398530797508).abs() < 1e-12, "{x}");
    }

    #[test]
    fn constant_alpha_is_noop() {
        let sched = NoiseSchedule::from_alpha_bars(vec![0.6, 0.6, 0.3]).unwrap();
        let shape = Shape::new(1, 2, 2);
        let x0 = gaussian_noise(shape, SeedSpec::new(3, 0));
        let eps = gaussian_noise(shape, SeedSpec::new(4, 0));
        let z = forward(&x0, &eps, 0.6);
        let next = ddim_step(&z, &eps, 2, &sched).unwrap();
        for (a, b) in next.as_slice().iter().zip(z.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nonfinite_is_numeric_error() {
        let sched = ScheduleSpec::default().build().unwrap();
        let s = Shape::new(1, 1, 1);
        let z = Tensor3::filled(s, f64::MAX);
        let e = Tensor3::filled(s, -f64::MAX);
        match ddim_step(&z, &e, 10, &sched) {
            Err(Error::Numeric { step: 10, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn determinism_and_self_pairing() {
        let world = WorldModel::default_world();
        let sched = ScheduleSpec::default().build().unwrap();
        let sc = world.default_scenario(1.0).unwrap();
        let cfg = GuidanceConfig::cfg(7.5);
        let a = sample(&world, &sc, &cfg, SeedSpec::new(5, 0), &sched).unwrap();
        let b = sample(&world, &sc, &cfg, SeedSpec::new(5, 0), &sched).unwrap();
        assert_eq!(a.final_image, b.final_image);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.steps.len(), 50);
        let pair = paired_sample(&world, &sc, &cfg, SeedSpec::new(5, 0), &sched).unwrap();
        assert_eq!(pair.baseline.final_image, pair.guided.final_image);
    }
}

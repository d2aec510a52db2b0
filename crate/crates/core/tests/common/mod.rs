// SPDX-License-Identifier: Apache-2.0

//! Oracle measurements shared by the oracle tests and the acceptance suite.
//! Each returns the measured quantity; callers choose the tolerance.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spguard::guidance::GuidanceConfig;
use spguard::rng::{gaussian_noise, SeedSpec};
use spguard::sampler::{Predictors, SampleOptions};
use spguard::schedule::ScheduleSpec;
use spguard::tensor::{Shape, Tensor3};
use spguard::world::{
    mixture_noise_prediction, Condition, ConceptLabel, ConceptTemplate, MixtureComponent, PixelRegion, WorldConfig,
    WorldModel,
};

/// `log Σ_k w_k Normal(z; √ᾱ μ_k, v_k I)` with `v_k = ᾱσ_k² + 1 − ᾱ`.
pub fn log_marginal(z: &[f64], ab: f64, comps: &[MixtureComponent<'_>]) -> f64 {
    let d = z.len() as f64;
    let logs: Vec<f64> = comps
        .iter()
        .map(|c| {
            let v = ab * c.sigma * c.sigma + 1.0 - ab;
            let sq: f64 = z
                .iter()
                .zip(c.template.as_slice())
                .map(|(zi, m)| (zi - ab.sqrt() * m).powi(2))
                .sum();
            c.weight.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * sq / v
        })
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Largest `|∂ log p / ∂z_i − (−ε_i/√(1−ᾱ))|` over `points` draws from the
/// noisy marginal of the default world, eight coordinates each, with a
/// fourth-order central difference.
pub fn fd_score_max_error(points: u64) -> f64 {
    let world = WorldModel::default_world();
    let comps = world.null_components();
    let sched = ScheduleSpec::default().build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for point in 0..points {
        let t = rng.random_range(1..=sched.num_steps());
        let ab = sched.alpha_bar(t);
        let k = rng.random_range(0..comps.len());
        let x0 = comps[k]
            .template
            .zip_map(&gaussian_noise(world.shape(), SeedSpec::new(point, 10)), |m, e| m + comps[k].sigma * e)
            .unwrap();
        let z = x0
            .zip_map(&gaussian_noise(world.shape(), SeedSpec::new(point, 11)), |x, e| {
                ab.sqrt() * x + (1.0 - ab).sqrt() * e
            })
            .unwrap();
        let eps = mixture_noise_prediction(&z, t, &comps, &sched).unwrap();
        let h = 1e-3;
        for _ in 0..8 {
            let i = rng.random_range(0..z.len());
            let at = |dx: f64| {
                let mut zz = z.as_slice().to_vec();
                zz[i] += dx;
                log_marginal(&zz, ab, &comps)
            };
            let fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            let score = -eps.as_slice()[i] / (1.0 - ab).sqrt();
            worst = worst.max((fd - score).abs());
        }
    }
    worst
}

/// A two-concept world whose templates have zero spread.
pub fn point_mass_world() -> WorldModel {
    let s = Shape::new(2, 4, 4);
    let a = Tensor3::from_fn(s, |c, i, j| 0.1 * (c + i) as f64 - 0.05 * j as f64);
    let b = Tensor3::from_fn(s, |_, i, j| if (i + j) % 2 == 0 { 0.3 } else { -0.3 });
    let region = PixelRegion::rect(4, 4, 1, 1, 2, 2).unwrap();
    WorldModel::new(
        s,
        vec![
            ConceptTemplate::new("a", ConceptLabel::Safe, a, 0.0, None).unwrap(),
            ConceptTemplate::new("b", ConceptLabel::Unsafe, b, 0.0, Some(region)).unwrap(),
        ],
        None,
        &["b"],
    )
    .unwrap()
}

/// Largest distance from a σ = 0 template reached by unguided sampling of
/// a single-concept world, over `seeds` seeds.
pub fn point_mass_max_error(seeds: u64) -> f64 {
    let sched = ScheduleSpec::default().build().unwrap();
    let tmpl = point_mass_world().concept("a").unwrap().mean_image.clone();
    let single = WorldModel::new(
        tmpl.shape(),
        vec![ConceptTemplate::new("a", ConceptLabel::Unsafe, tmpl.clone(), 0.0, None).unwrap()],
        None,
        &["a"],
    )
    .unwrap();
    let pr = Predictors::new(&single, Condition { template: tmpl.clone(), data_std: 0.0 }).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let tr = pr.sample(&GuidanceConfig::cfg(0.0), SeedSpec::new(seed, 0), &sched, SampleOptions::default()).unwrap();
        for (x, m) in tr.final_image.as_slice().iter().zip(tmpl.as_slice()) {
            worst = worst.max((x - m).abs());
        }
    }
    worst
}

/// Unguided samples of the default world under priors `[0.2, 0.3, 0.5]`,
/// assigned to the nearest template. Returns `(count, n·w, √(n·w·(1−w)))`
/// per component.
pub fn prior_occupancy(n: u64) -> Vec<(usize, f64, f64)> {
    let mut cfg = WorldConfig::default_world();
    cfg.priors = Some(vec![0.2, 0.3, 0.5]);
    let world = cfg.build().unwrap();
    let sched = ScheduleSpec::default().build().unwrap();
    let pr = Predictors::for_scenario(&world, &world.default_scenario(0.0).unwrap()).unwrap();
    // s_g = 0 returns the unconditional (mixture) estimate exactly
    let unguided = GuidanceConfig::cfg(0.0);
    let mut counts = vec![0usize; world.concepts().len()];
    for seed in 0..n {
        let x = pr
            .sample(&unguided, SeedSpec::new(seed, 2), &sched, SampleOptions::default())
            .unwrap()
            .final_image;
        let nearest = world
            .concepts()
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let d: f64 = x.as_slice().iter().zip(c.mean_image.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
                (k, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        counts[nearest] += 1;
    }
    world
        .prior_weights()
        .iter()
        .zip(counts)
        .map(|(&w, c)| (c, n as f64 * w, (n as f64 * w * (1.0 - w)).sqrt()))
        .collect()
}

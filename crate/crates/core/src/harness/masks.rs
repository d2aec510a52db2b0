// SPDX-License-Identifier: Apache-2.0

//! Guidance-weight visualizations and mask locality.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, EVAL_STREAM};
use super::run::to_json;
use super::write_file;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, Variant};
use crate::rng::SeedSpec;
use crate::sampler::{Predictors, SampleOptions};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor3;
use crate::world::{PromptScenario, WorldModel};

/// Binary PGM (P5, maxval 255).
pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    debug_assert_eq!(gray.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

/// Binary PPM (P6, maxval 255), `rgb` interleaved.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    debug_assert_eq!(rgb.len(), 3 * width * height);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Min-max scaling to `0..=255`. A constant frame maps to all zeros with
/// scale 0.
pub fn normalize_frame(values: &[f64]) -> (Vec<u8>, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if values.is_empty() { 0.0 } else { hi - lo };
    let px = values
        .iter()
        .map(|&v| if scale > 0.0 { ((v - lo) / scale * 255.0).round() as u8 } else { 0 })
        .collect();
    (px, if values.is_empty() { 0.0 } else { lo }, scale)
}

/// Image as RGB bytes, `[-1, 1]` mapped onto `0..=255` and clamped. One
/// channel is replicated to gray; channels past the third are ignored.
pub fn image_rgb(image: &Tensor3) -> Vec<u8> {
    let s = image.shape();
    let to_byte = |v: f64| (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8;
    let mut out = Vec::with_capacity(3 * s.pixels());
    for i in 0..s.height {
        for j in 0..s.width {
            for c in 0..3 {
                out.push(to_byte(image.get(c.min(s.channels - 1), i, j)));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub step: usize,
    pub t: usize,
    /// `value = min + scale · byte / 255`.
    pub min: f64,
    pub scale: f64,
}

fn check_masked_method(m: &GuidanceConfig) -> Result<()> {
    match m.variant {
        Variant::Sld | Variant::SpGuard => Ok(()),
        v => Err(Error::config(format!(
            "method '{}' ({v:?}) has no guidance mask to dump",
            m.name
        ))),
    }
}

/// For each requested step (1-based, in sampling order) writes the
/// channel-averaged `μ` as `mu_step_NN.pgm` with a JSON sidecar and the raw
/// tensor as `mu_step_NN.t3`; also writes `final.ppm`. Steps without guidance
/// produce all-zero frames. Returns the written paths relative to `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn mask_dump(
    world: &WorldModel,
    scenario: &PromptScenario,
    method: &GuidanceConfig,
    seed: u64,
    steps: &[usize],
    schedule: &NoiseSchedule,
    out_dir: &Path,
) -> Result<Vec<String>> {
    check_masked_method(method)?;
    let n = schedule.num_steps();
    if let Some(bad) = steps.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::config(format!("step {bad} out of range 1..={n}")));
    }
    let pr = Predictors::for_scenario(world, scenario)?;
    let opts = SampleOptions {
        record_maps: true,
        record_latents: false,
    };
    let tr = pr.sample(method, SeedSpec::new(seed, EVAL_STREAM), schedule, opts)?;
    let shape = world.shape();
    let mut written = Vec::new();
    for &k in steps {
        let snap = &tr.steps[k - 1];
        let mu = snap.mu.clone().unwrap_or_else(|| Tensor3::zeros(shape));
        let (gray, min, scale) = normalize_frame(&mu.channel_mean());
        let stem = format!("mu_step_{k:02}");
        write_file(&out_dir.join(format!("{stem}.pgm")), &encode_pgm(shape.width, shape.height, &gray))?;
        let side = FrameSidecar {
            step: k,
            t: snap.t,
            min,
            scale,
        };
        write_file(&out_dir.join(format!("{stem}.json")), to_json(&side).as_bytes())?;
        write_file(&out_dir.join(format!("{stem}.t3")), &mu.to_container_bytes())?;
        written.extend([format!("{stem}.pgm"), format!("{stem}.json"), format!("{stem}.t3")]);
    }
    write_file(&out_dir.join("final.ppm"), &encode_ppm(shape.width, shape.height, &image_rgb(&tr.final_image)))?;
    written.push("final.ppm".into());
    Ok(written)
}

/// Config-driven [`mask_dump`].
pub fn mask_dump_from_config(
    cfg: &ExperimentConfig,
    scenario_id: &str,
    method_name: &str,
    seed: u64,
    steps: &[usize],
    out_dir: &Path,
) -> Result<Vec<String>> {
    let method = cfg.method(method_name)?;
    check_masked_method(method)?;
    let world = cfg.build_world()?;
    let scenario = cfg.scenario(scenario_id)?.build(&world)?;
    mask_dump(&world, &scenario, method, seed, steps, &cfg.schedule.build()?, out_dir)
}

/// Fraction of mask-on elements that fall inside the scenario's patch
/// region, pooled over the active guidance steps `t_p + 1 ..= t_drop` and
/// all seeds. `None` when no element is ever on.
pub fn mask_locality(
    world: &WorldModel,
    scenario: &PromptScenario,
    method: &GuidanceConfig,
    seeds: &[u64],
    schedule: &NoiseSchedule,
) -> Result<Option<f64>> {
    if method.variant != Variant::SpGuard {
        return Err(Error::config("mask locality needs an SP-Guard method"));
    }
    let n = schedule.num_steps();
    let (first, last) = (method.spguard.t_p + 1, method.spguard.t_drop(n));
    let pr = Predictors::for_scenario(world, scenario)?;
    let opts = SampleOptions {
        record_maps: true,
        record_latents: false,
    };
    let counts = seeds
        .par_iter()
        .map(|&s| {
            let tr = pr.sample(method, SeedSpec::new(s, EVAL_STREAM), schedule, opts)?;
            let (mut inside, mut total) = (0usize, 0usize);
            for snap in tr.steps.iter().filter(|st| (first..=last).contains(&st.step)) {
                if let Some(m) = &snap.mask {
                    for (f, &v) in m.as_slice().iter().enumerate() {
                        if v != 0.0 {
                            total += 1;
                            inside += usize::from(scenario.region.contains_flat(f));
                        }
                    }
                }
            }
            Ok((inside, total))
        })
        .collect::<Result<Vec<_>>>()?;
    let (inside, total) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((total > 0).then(|| inside as f64 / total as f64))
}

// SPDX-License-Identifier: Apache-2.0

//! `λ_max` × schedule-shape sweeps of SP-Guard.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{build_reports, evaluate, resolve_detector, Detector};
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, LambdaScheduleKind, SpGuardParams, Variant};
use crate::numeric::spearman;
use crate::world::WorldModel;

/// `2.0, 2.5, …, 6.0`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=8).map(|k| 2.0 + 0.5 * k as f64).collect()
}

pub const DEFAULT_SCHEDULES: [LambdaScheduleKind; 2] = [LambdaScheduleKind::Step, LambdaScheduleKind::Cosine];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_max: f64,
    pub schedule: LambdaScheduleKind,
    pub n_seeds: usize,
    pub unsafe_rate: f64,
    pub relative_improvement: Option<f64>,
    pub preservation_mean: f64,
    pub preservation_std: f64,
    pub background_mean: f64,
}

/// The SP-Guard method the sweep varies: the config's first SP-Guard method,
/// else defaults at the first method's guidance scale.
pub fn sweep_template(cfg: &ExperimentConfig) -> GuidanceConfig {
    cfg.methods
        .iter()
        .find(|m| m.variant == Variant::SpGuard)
        .cloned()
        .unwrap_or_else(|| GuidanceConfig::spguard(SpGuardParams::default(), cfg.methods[0].s_g))
}

/// The scenario sweeps default to: the one with the largest `α`.
pub fn default_sweep_scenario(cfg: &ExperimentConfig) -> &str {
    let mut best = &cfg.scenarios[0];
    for s in &cfg.scenarios {
        if s.alpha >= best.alpha {
            best = s;
        }
    }
    &best.id
}

/// One row per (schedule, `λ_max`), schedule-major, each against the paired
/// CFG baseline at the same guidance scale.
pub fn sweep_lambda_with(
    cfg: &ExperimentConfig,
    world: &WorldModel,
    detector: &Detector,
    scenario_id: &str,
    lambdas: &[f64],
    schedules: &[LambdaScheduleKind],
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() || schedules.is_empty() {
        return Err(Error::config("sweep needs at least one λ_max value and one schedule"));
    }
    let template = sweep_template(cfg);
    let baseline = GuidanceConfig {
        name: "__baseline".into(),
        ..GuidanceConfig::cfg(template.s_g)
    };
    let mut methods = vec![baseline.clone()];
    let mut keys = Vec::new();
    for &kind in schedules {
        for &lm in lambdas {
            let mut m = template.clone();
            m.spguard.lambda_max = lm;
            m.spguard.schedule = kind;
            m.name = format!("{kind:?}@{lm}");
            m.validate(cfg.schedule.num_steps)?;
            keys.push((lm, kind, m.name.clone()));
            methods.push(m);
        }
    }
    let scenario = cfg.scenario(scenario_id)?.clone();
    let seeds: Vec<u64> = cfg.seeds.iter().collect();
    let schedule = cfg.schedule.build()?;
    let eval = evaluate(world, &[scenario], &methods, &seeds, &schedule, detector, 0)?;
    let reports = build_reports(&eval.rows, &baseline.name)?;
    Ok(keys
        .into_iter()
        .map(|(lambda_max, schedule, name)| {
            let r = &reports.iter().find(|r| r.report.method == name).expect("every method reported").report;
            SweepRow {
                lambda_max,
                schedule,
                n_seeds: r.n_seeds,
                unsafe_rate: r.unsafe_rate,
                relative_improvement: r.relative_improvement,
                preservation_mean: r.preservation_mean,
                preservation_std: r.preservation_std,
                background_mean: r.background_mean,
            }
        })
        .collect())
}

/// Calibrates (or uses the configured threshold) and sweeps.
pub fn sweep_lambda(
    cfg: &ExperimentConfig,
    scenario_id: &str,
    lambdas: &[f64],
    schedules: &[LambdaScheduleKind],
) -> Result<Vec<SweepRow>> {
    let world = cfg.build_world()?;
    let (detector, _) = resolve_detector(cfg, &world, &cfg.schedule.build()?)?;
    sweep_lambda_with(cfg, &world, &detector, scenario_id, lambdas, schedules)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::contract(format!("sweep csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::contract(format!("sweep csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per schedule: Spearman correlation of `λ_max` with mean preservation
/// distance, and whether the unsafe rate never increases along `λ_max`.
pub fn sweep_trends(rows: &[SweepRow]) -> Vec<(LambdaScheduleKind, Option<f64>, bool)> {
    let mut kinds: Vec<LambdaScheduleKind> = Vec::new();
    for r in rows {
        if !kinds.contains(&r.schedule) {
            kinds.push(r.schedule);
        }
    }
    kinds
        .into_iter()
        .map(|k| {
            let mut mine: Vec<&SweepRow> = rows.iter().filter(|r| r.schedule == k).collect();
            mine.sort_by(|a, b| a.lambda_max.total_cmp(&b.lambda_max));
            let lm: Vec<f64> = mine.iter().map(|r| r.lambda_max).collect();
            let pm: Vec<f64> = mine.iter().map(|r| r.preservation_mean).collect();
            let rho = spearman(&lm, &pm).ok();
            let non_increasing = mine.windows(2).all(|w| w[1].unsafe_rate <= w[0].unsafe_rate);
            (k, rho, non_increasing)
        })
        .collect()
}

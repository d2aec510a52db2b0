// SPDX-License-Identifier: Apache-2.0

//! Paired evaluation of guidance methods over scenarios and seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ScenarioSpec, WorldSource, CALIBRATION_STREAM, EVAL_STREAM};
use super::manifest::{write_manifest, RunManifest};
use super::plot::emit_tradeoff_plot;
use super::write_file;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, GuidanceTrace};
use crate::metrics::{aggregate, detector_score, eer_threshold, preservation_distance, wilson_interval, Calibration, MetricsReport, SeedRow};
use crate::rng::SeedSpec;
use crate::sampler::{Predictors, SampleOptions};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor3;
use crate::world::{PixelRegion, WorldModel};

/// One `metrics.csv` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub alpha: f64,
    pub method: String,
    pub seed: u64,
    pub unsafe_score: f64,
    pub flagged: bool,
    pub preservation_full: f64,
    pub preservation_background: f64,
    /// Proxy value, for methods that estimate one.
    pub proxy: Option<f64>,
}

impl MetricsRow {
    pub fn seed_row(&self) -> SeedRow {
        SeedRow {
            scenario: self.scenario.clone(),
            method: self.method.clone(),
            seed: self.seed,
            unsafe_score: self.unsafe_score,
            flagged: self.flagged,
            preservation_full: self.preservation_full,
            preservation_background: self.preservation_background,
        }
    }
}

/// Correlation detector for the world's first unsafe concept.
#[derive(Debug, Clone)]
pub struct Detector {
    pub patch: Tensor3,
    pub region: PixelRegion,
    pub threshold: f64,
}

impl Detector {
    pub fn new(world: &WorldModel, threshold: f64) -> Result<Self> {
        let concept = world
            .unsafe_concepts()
            .find(|c| c.region.is_some())
            .ok_or_else(|| Error::config("no unsafe concept with a region to detect"))?;
        Ok(Self {
            patch: concept.mean_image.clone(),
            region: concept.region.clone().expect("filtered on region"),
            threshold,
        })
    }

    pub fn score(&self, image: &Tensor3) -> Result<f64> {
        detector_score(image, &self.patch, &self.region)
    }
}

/// Calibrates the detector threshold on CFG samples of the first scenario's
/// background at `α = 0` and `α = 1`.
pub fn calibrate(cfg: &ExperimentConfig, world: &WorldModel, schedule: &NoiseSchedule) -> Result<Calibration> {
    let probe = Detector::new(world, 0.0)?;
    let n = cfg.calibration.seeds.unwrap_or(cfg.seeds.count);
    let method = GuidanceConfig::cfg(cfg.calibration.s_g);
    let scores = |alpha: f64| -> Result<Vec<f64>> {
        let spec = ScenarioSpec {
            alpha,
            ..cfg.scenarios[0].clone()
        };
        let sc = spec.build(world)?;
        let pr = Predictors::for_scenario(world, &sc)?;
        (0..n)
            .into_par_iter()
            .map(|k| {
                let seed = SeedSpec::new(cfg.seeds.base.wrapping_add(k), CALIBRATION_STREAM);
                let tr = pr.sample(&method, seed, schedule, SampleOptions::default())?;
                probe.score(&tr.final_image)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.with_context(format!("calibration at alpha {alpha}")))
    };
    eer_threshold(&scores(0.0)?, &scores(1.0)?)
}

/// The configured threshold, or a fresh calibration.
pub fn resolve_detector(cfg: &ExperimentConfig, world: &WorldModel, schedule: &NoiseSchedule) -> Result<(Detector, Option<Calibration>)> {
    match cfg.calibration.threshold {
        Some(t) => Ok((Detector::new(world, t)?, None)),
        None => {
            let cal = calibrate(cfg, world, schedule)?;
            Ok((Detector::new(world, cal.threshold)?, Some(cal)))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub trace: GuidanceTrace,
}

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    /// Ordered by scenario, method, seed.
    pub rows: Vec<MetricsRow>,
    pub traces: Vec<TraceRecord>,
}

/// Runs every (scenario, method, seed) against a CFG baseline with the
/// method's own guidance scale, sharing `z_T` per seed. Traces are kept for
/// the first `trace_seeds` seeds.
pub fn evaluate(
    world: &WorldModel,
    scenarios: &[ScenarioSpec],
    methods: &[GuidanceConfig],
    seeds: &[u64],
    schedule: &NoiseSchedule,
    detector: &Detector,
    trace_seeds: usize,
) -> Result<Evaluation> {
    let mut out = Evaluation::default();
    for spec in scenarios {
        let sc = spec.build(world)?;
        let background = sc.region.complement();
        let pr = Predictors::for_scenario(world, &sc)?;
        let mut scales: Vec<u64> = methods.iter().map(|m| m.s_g.to_bits()).collect();
        scales.sort_unstable();
        scales.dedup();
        let mut baselines: BTreeMap<u64, Vec<Tensor3>> = BTreeMap::new();
        for bits in scales {
            let base = GuidanceConfig::cfg(f64::from_bits(bits));
            let images = seeds
                .par_iter()
                .map(|&s| Ok(pr.sample(&base, SeedSpec::new(s, EVAL_STREAM), schedule, SampleOptions::default())?.final_image))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.with_context(format!("baseline CFG, scenario '{}'", spec.id)))?;
            baselines.insert(bits, images);
        }
        for m in methods {
            let base = &baselines[&m.s_g.to_bits()];
            let results = seeds
                .par_iter()
                .enumerate()
                .map(|(k, &s)| {
                    let tr = pr.sample(m, SeedSpec::new(s, EVAL_STREAM), schedule, SampleOptions::default())?;
                    let img = &tr.final_image;
                    let score = detector.score(img)?;
                    let row = MetricsRow {
                        scenario: spec.id.clone(),
                        alpha: spec.alpha,
                        method: m.name.clone(),
                        seed: s,
                        unsafe_score: score,
                        flagged: score > detector.threshold,
                        preservation_full: preservation_distance(&base[k], img, None)?,
                        preservation_background: match &background {
                            Some(r) => preservation_distance(&base[k], img, Some(r))?,
                            None => 0.0,
                        },
                        proxy: tr.trace.proxy.as_ref().map(|p| p.proxy),
                    };
                    Ok((row, (k < trace_seeds).then_some(tr.trace)))
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.with_context(format!("method '{}', scenario '{}'", m.name, spec.id)))?;
            for (row, trace) in results {
                if let Some(trace) = trace {
                    out.traces.push(TraceRecord {
                        scenario: row.scenario.clone(),
                        method: row.method.clone(),
                        seed: row.seed,
                        trace,
                    });
                }
                out.rows.push(row);
            }
        }
    }
    Ok(out)
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::contract(format!("metrics csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::contract(format!("metrics csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| Error::config(format!("metrics csv: {e}")))
}

/// A [`MetricsReport`] with the 95% Wilson interval of its unsafe rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    #[serde(flatten)]
    pub report: MetricsReport,
    pub alpha: f64,
    pub unsafe_rate_ci: (f64, f64),
    pub proxy_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub threshold: f64,
    pub calibration: Option<Calibration>,
    pub reports: Vec<MethodReport>,
}

pub fn build_reports(rows: &[MetricsRow], baseline: &str) -> Result<Vec<MethodReport>> {
    let seed_rows: Vec<SeedRow> = rows.iter().map(MetricsRow::seed_row).collect();
    aggregate(&seed_rows, baseline)?
        .into_iter()
        .map(|report| {
            let mine: Vec<&MetricsRow> = rows
                .iter()
                .filter(|r| r.scenario == report.scenario && r.method == report.method)
                .collect();
            let proxies: Vec<f64> = mine.iter().filter_map(|r| r.proxy).collect();
            let proxy_mean = (!proxies.is_empty()).then(|| crate::numeric::mean_std(&proxies).0);
            Ok(MethodReport {
                alpha: mine[0].alpha,
                unsafe_rate_ci: wilson_interval(report.flagged, report.n_seeds),
                proxy_mean,
                report,
            })
        })
        .collect()
}

/// Everything `run` produced, with paths relative to the output directory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub rows: Vec<MetricsRow>,
    pub report: RunReport,
    pub out_dir: PathBuf,
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Runs the full experiment and writes its artifacts into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let world_cfg = cfg.world.resolve(Path::new("."))?;
    let world = world_cfg.build()?;
    let mut effective = cfg.clone();
    effective.world = WorldSource::Inline(world_cfg);
    effective.output.dir = None;
    let schedule = cfg.schedule.build()?;
    let (detector, calibration) = resolve_detector(cfg, &world, &schedule)?;
    let seeds: Vec<u64> = cfg.seeds.iter().collect();
    let eval = evaluate(
        &world,
        &cfg.scenarios,
        &cfg.methods,
        &seeds,
        &schedule,
        &detector,
        cfg.output.trace_seeds.min(cfg.seeds.count) as usize,
    )?;
    let baseline = cfg.baseline_name();
    let report = RunReport {
        threshold: detector.threshold,
        calibration,
        reports: build_reports(&eval.rows, baseline)?,
    };

    let config_text = effective.to_toml();
    let mut files: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut common = vec!["config.toml".to_string(), "metrics.csv".into(), "report.json".into()];
    write_file(&out_dir.join("config.toml"), config_text.as_bytes())?;
    write_file(&out_dir.join("metrics.csv"), metrics_csv(&eval.rows)?.as_bytes())?;
    write_file(&out_dir.join("report.json"), to_json(&report).as_bytes())?;
    for m in &cfg.methods {
        let stem = file_stem(&m.name);
        let mine: Vec<&MethodReport> = report.reports.iter().filter(|r| r.report.method == m.name).collect();
        let rel = format!("reports/{stem}.json");
        write_file(&out_dir.join(&rel), to_json(&mine).as_bytes())?;
        files.entry(m.name.clone()).or_default().push(rel);
    }
    for t in &eval.traces {
        let rel = format!(
            "traces/{}/{}/seed_{}.csv",
            file_stem(&t.scenario),
            file_stem(&t.method),
            t.seed
        );
        write_file(&out_dir.join(&rel), t.trace.to_csv().as_bytes())?;
        files.entry(t.method.clone()).or_default().push(rel);
    }
    if cfg.methods.len() >= 2 {
        for s in &cfg.scenarios {
            let (csv, svg) = emit_tradeoff_plot(&report.reports, &s.id, out_dir)?;
            common.push(csv);
            common.push(svg);
        }
    }
    let manifest = RunManifest::new(&effective, config_text.as_bytes(), common, files)?;
    write_manifest(&manifest, out_dir)?;
    Ok(RunOutcome {
        manifest,
        rows: eval.rows,
        report,
        out_dir: out_dir.to_path_buf(),
    })
}

pub fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

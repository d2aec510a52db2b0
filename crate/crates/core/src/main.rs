// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spguard::guidance::LambdaScheduleKind;
use spguard::harness::{self, run::to_json, ExperimentConfig, RunReport};
use spguard::{Error, Result};

/// Guided diffusion sampling experiments on an analytic toy world.
///
/// Exit codes: 0 success, 2 configuration error, 3 numeric failure,
/// 4 calibration failure, 1 anything else.
#[derive(Parser, Debug)]
#[command(name = "spguard", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML); the shipped default when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of seeds; overrides `seeds.count`.
    #[arg(long, value_name = "N")]
    seeds: Option<u64>,
    /// First seed; overrides `seeds.base`.
    #[arg(long, value_name = "U64")]
    base_seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every scenario × method × seed and write metrics, reports, traces and a manifest.
    Run(Common),
    /// Sweep SP-Guard's λ_max over schedule shapes.
    SweepLambda {
        #[command(flatten)]
        common: Common,
        /// Scenario id (default: the one with the largest α).
        #[arg(long)]
        scenario: Option<String>,
        /// Comma-separated λ_max values (default 2.0 to 6.0 in steps of 0.5).
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<f64>,
        /// Comma-separated schedule shapes: step, cosine (default both).
        #[arg(long, value_delimiter = ',', value_parser = parse_schedule)]
        schedules: Vec<LambdaScheduleKind>,
    },
    /// Render the guidance weight map of chosen steps for one seed.
    MaskDump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated 1-based sampling steps.
        #[arg(long, value_delimiter = ',', required = true)]
        steps: Vec<usize>,
    },
    /// Calibrate the unsafe-content detector threshold.
    CalibrateDetector(Common),
    /// Redraw trade-off plots from a finished run's report.json.
    TradeoffPlot {
        #[command(flatten)]
        common: Common,
        /// Scenario id (default: every scenario in the report).
        #[arg(long)]
        scenario: Option<String>,
    },
}

fn parse_schedule(s: &str) -> std::result::Result<LambdaScheduleKind, String> {
    match s.trim() {
        "step" => Ok(LambdaScheduleKind::Step),
        "cosine" => Ok(LambdaScheduleKind::Cosine),
        other => Err(format!("unknown schedule '{other}' (expected step or cosine)")),
    }
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::shipped_default(),
        };
        if let Some(n) = self.seeds {
            if n == 0 {
                return Err(Error::config("--seeds must be at least 1"));
            }
            cfg.seeds.count = n;
        }
        if let Some(b) = self.base_seed {
            cfg.seeds.base = b;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = Some(o.clone());
        }
        if let Some(t) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| Error::config(format!("--threads: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.load()?;
            let out = harness::run(&cfg, &cfg.output.dir())?;
            for r in &out.report.reports {
                println!(
                    "{:<12} {:<12} unsafe_rate {:.3}  preservation {:.4}",
                    r.report.scenario, r.report.method, r.report.unsafe_rate, r.report.preservation_mean
                );
            }
            println!("wrote {}", out.out_dir.display());
        }
        Command::SweepLambda {
            common,
            scenario,
            lambdas,
            schedules,
        } => {
            let cfg = common.load()?;
            let scenario = scenario.unwrap_or_else(|| harness::sweep::default_sweep_scenario(&cfg).to_string());
            let lambdas = if lambdas.is_empty() { harness::default_lambda_grid() } else { lambdas };
            let schedules = if schedules.is_empty() { harness::DEFAULT_SCHEDULES.to_vec() } else { schedules };
            let rows = harness::sweep_lambda(&cfg, &scenario, &lambdas, &schedules)?;
            let path = cfg.output.dir().join("sweep_lambda.csv");
            harness::write_file(&path, harness::sweep_csv(&rows)?.as_bytes())?;
            for (kind, rho, non_inc) in harness::sweep_trends(&rows) {
                let rho = rho.map(|r| format!("{r:.3}")).unwrap_or_else(|| "n/a".into());
                println!("{kind:?}: spearman(lambda_max, preservation) = {rho}, unsafe rate non-increasing = {non_inc}");
            }
            println!("wrote {}", path.display());
        }
        Command::MaskDump {
            common,
            scenario,
            method,
            seed,
            steps,
        } => {
            let cfg = common.load()?;
            let dir = cfg.output.dir().join("masks").join(&scenario).join(&method).join(format!("seed_{seed}"));
            let files = harness::mask_dump_from_config(&cfg, &scenario, &method, seed, &steps, &dir)?;
            println!("wrote {} files to {}", files.len(), dir.display());
        }
        Command::CalibrateDetector(common) => {
            let cfg = common.load()?;
            let world = cfg.build_world()?;
            let cal = harness::calibrate(&cfg, &world, &cfg.schedule.build()?)?;
            let path = cfg.output.dir().join("calibration.json");
            harness::write_file(&path, to_json(&cal).as_bytes())?;
            println!("threshold {:.6}  eer {:.4}", cal.threshold, cal.eer);
            println!("wrote {}", path.display());
        }
        Command::TradeoffPlot { common, scenario } => {
            let dir = match &common.out {
                Some(o) => o.clone(),
                None => common.load()?.output.dir(),
            };
            let report = read_report(&dir)?;
            let mut ids: Vec<String> = Vec::new();
            for r in &report.reports {
                if !ids.contains(&r.report.scenario) {
                    ids.push(r.report.scenario.clone());
                }
            }
            if let Some(s) = scenario {
                if !ids.contains(&s) {
                    return Err(Error::config(format!("scenario '{s}' not in {}", dir.display())));
                }
                ids = vec![s];
            }
            for id in ids {
                let (csv, svg) = harness::emit_tradeoff_plot(&report.reports, &id, &dir)?;
                println!("wrote {csv} and {svg}");
            }
        }
    }
    Ok(())
}

fn read_report(dir: &Path) -> Result<RunReport> {
    let p = dir.join("report.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Subcommands. Every command writes into its `--out` directory and reports
//! failures as a JSON object on stderr with a category-specific exit code.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use tpjm_core::fit::fit_inla;
use tpjm_core::mle::fit_mle;
use tpjm_core::posthoc::{conditional_re_means, mvn_draws, subgroup_hazard_ratio, Direction, SubgroupQuery, Threshold, MIN_DRAWS};
use tpjm_core::simgen::{censoring_fraction, generate_replicate, zero_rate, ScenarioConfig};

use crate::config::{FileConfig, Resolved};
use crate::dataset::{read_dir, write_dir};
use crate::error::{CliError, Result};
use crate::fitfile::{render_table, FitRecord};
use crate::harness::{compare_reports, raw_csv, render_report, report_csv, run_study, survival_csv, FitEngine, InlaEngine, MleEngine, Study};

#[derive(Debug, Parser)]
#[command(name = "tpjm", version, about = "Two-part joint models for a semicontinuous biomarker and a terminal event")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate replicates of a scenario into `OUT/rep_NNNN/`.
    Simulate(SimulateArgs),
    /// Fit one dataset and write `fit.json` and `fit.txt`.
    Fit(FitArgs),
    /// Replication study: simulate, fit, and summarize.
    Study(StudyArgs),
    /// Subgroup random-effect means and hazard ratio from a fit file.
    Posthoc(PosthocArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Inla,
    Mle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyEngine {
    Inla,
    Mle,
    Both,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub scenario: u8,
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub engine: EngineArg,
    /// Directory holding `longitudinal.csv` and `survival.csv`.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML configuration; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub scenario: u8,
    #[arg(long, value_enum, default_value = "inla")]
    pub engine: StudyEngine,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PosthocArgs {
    /// Fit file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Random effect to threshold: a, b0 or b1.
    #[arg(long)]
    pub component: String,
    /// Threshold in SDs of the component.
    #[arg(long, conflicts_with = "threshold", required_unless_present = "threshold")]
    pub threshold_sd: Option<f64>,
    /// Threshold on the random-effect scale.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Condition on values below the threshold instead of above.
    #[arg(long)]
    pub below: bool,
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write the JSON result to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    path.map_or_else(|| Ok(FileConfig::default()), FileConfig::read)
}

pub fn simulate(a: &SimulateArgs) -> Result<String> {
    let cfg = ScenarioConfig::scenario(a.scenario, a.seed)?;
    create_dir(&a.out)?;
    let mut rows = Vec::new();
    for r in 0..a.replicates {
        let data = generate_replicate(&cfg, r)?;
        let dir = a.out.join(format!("rep_{r:04}"));
        write_dir(&data, &dir)?;
        rows.push(json!({"replicate": r, "subjects": data.len(), "zero_rate": zero_rate(&data), "censored": censoring_fraction(&data)}));
    }
    let manifest = json!({"scenario": a.scenario, "seed": a.seed, "replicates": rows});
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&a.out.join("manifest.json"), &text)?;
    Ok(format!("wrote {} replicate(s) of scenario {} to {}", a.replicates, a.scenario, a.out.display()))
}

fn resolved_spec(file: &FileConfig, data: &[tpjm_core::model::SubjectData]) -> Result<(Resolved, tpjm_core::model::TpjmSpec)> {
    let r = file.resolve(None)?;
    let names: Vec<&str> = data.first().map(|s| s.covariates.keys().map(String::as_str).collect()).unwrap_or_default();
    let spec = r.spec(&names)?;
    Ok((r, spec))
}

pub fn fit(a: &FitArgs) -> Result<String> {
    let file = load_config(a.config.as_deref())?;
    let data = read_dir(&a.data)?;
    let (r, spec) = resolved_spec(&file, &data)?;
    let echo = file.to_toml();
    let t = Instant::now();
    let rec = match a.engine {
        EngineArg::Inla => {
            let f = fit_inla(&data, &spec, &r.priors, &r.inla, false)?;
            FitRecord::from_inla(&f, &spec, &echo, 0, t.elapsed().as_secs_f64())?
        }
        EngineArg::Mle => {
            let mut m = fit_mle(&data, &spec, None, &r.mle)?;
            m.seconds = t.elapsed().as_secs_f64();
            FitRecord::from_mle(&m, &spec, &echo)?
        }
    };
    create_dir(&a.out)?;
    rec.write(&a.out.join("fit.json"))?;
    let table = render_table(&rec);
    write(&a.out.join("fit.txt"), &table)?;
    Ok(table)
}

fn write_study(out: &Path, s: &Study) -> Result<()> {
    let e = &s.report.engine;
    write(&out.join(format!("report_{e}.csv")), &report_csv(&s.report))?;
    write(&out.join(format!("report_{e}.txt")), &render_report(&s.report))?;
    write(&out.join(format!("raw_{e}.csv")), &raw_csv(&s.records))?;
    write(&out.join(format!("survival_{e}.csv")), &survival_csv(&s.report.survival))
}

pub fn study(a: &StudyArgs) -> Result<String> {
    let cfg = ScenarioConfig::scenario(a.scenario, a.seed)?;
    let file = load_config(a.config.as_deref())?;
    let r = file.resolve(Some(cfg.re_structure))?;
    if r.model.re_structure != cfg.re_structure {
        return Err(CliError::Config(format!("scenario {} needs random_effects = \"{}\"", a.scenario, cfg.re_structure.names().join(","))));
    }
    let spec = r.spec(&["trt"])?;
    let inla = InlaEngine { priors: r.priors.clone(), opts: r.inla.clone() };
    let mle = MleEngine { opts: r.mle.clone() };
    let engines: Vec<&dyn FitEngine> = match a.engine {
        StudyEngine::Inla => vec![&inla],
        StudyEngine::Mle => vec![&mle],
        StudyEngine::Both => vec![&inla, &mle],
    };
    create_dir(&a.out)?;
    write(&a.out.join("config.toml"), &file.to_toml())?;
    let mut studies = Vec::new();
    let mut text = String::new();
    for e in engines {
        let s = run_study(&cfg, &spec, e, a.replicates, a.workers)?;
        write_study(&a.out, &s)?;
        text.push_str(&render_report(&s.report));
        studies.push(s);
    }
    if let [x, y] = studies.as_slice() {
        let c = compare_reports(&x.report, &y.report)?;
        write(&a.out.join("comparison.csv"), &c.to_csv())?;
        write(&a.out.join("comparison.txt"), &c.to_text())?;
        text = c.to_text();
    }
    Ok(text)
}

pub fn posthoc(a: &PosthocArgs) -> Result<String> {
    let rec = FitRecord::read(&a.model)?;
    let component = rec
        .random_effects
        .iter()
        .position(|n| *n == a.component)
        .ok_or_else(|| CliError::Config(format!("unknown component {}; the model has {}", a.component, rec.random_effects.join(", "))))?;
    if a.draws < MIN_DRAWS {
        return Err(CliError::Config(format!("--draws must be at least {MIN_DRAWS}")));
    }
    let threshold = match (a.threshold_sd, a.threshold) {
        (Some(t), _) => Threshold::Sd(t),
        (None, Some(t)) => Threshold::Absolute(t),
        (None, None) => return Err(CliError::Config("a threshold is required".into())),
    };
    let q = SubgroupQuery { component, threshold, direction: if a.below { Direction::Below } else { Direction::Above }, mc_draws: a.draws };
    let m = conditional_re_means(&rec.re_covariance_matrix(), &q, a.seed)?;
    let phi_draws = match rec.association_covariance() {
        Some(c) => mvn_draws(&rec.association.mean, &c, MIN_DRAWS, a.seed.wrapping_add(1))?,
        None => Vec::new(),
    };
    let hr = subgroup_hazard_ratio(&rec.association.mean, &m.analytic, &phi_draws)?;
    let nan_null = |v: f64| if v.is_finite() { json!(v) } else { json!(null) };
    let out = json!({
        "component": a.component,
        "cut": m.cut,
        "direction": if a.below { "below" } else { "above" },
        "probability": m.probability,
        "random_effects": rec.random_effects,
        "analytic_means": m.analytic,
        "mc_means": m.mc,
        "mc_se": m.mc_se,
        "hazard_ratio": {"estimate": hr.hr, "lower": nan_null(hr.lower), "upper": nan_null(hr.upper)},
    });
    let text = serde_json::to_string_pretty(&out).expect("result serializes");
    if let Some(p) = &a.out {
        write(p, &text)?;
    }
    Ok(text)
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Study(a) => study(a),
        Command::Posthoc(a) => posthoc(a),
    }
}

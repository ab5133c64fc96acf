//! Replication studies: simulate, fit with either engine, and summarize
//! bias, spread, coverage, convergence and timing.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use tpjm_core::fit::fit_inla;
use tpjm_core::inla::summary::baseline_survival;
use tpjm_core::inla::ExploreOptions;
use tpjm_core::math::stable_sum;
use tpjm_core::mle::{fit_mle, mle_estimates, MleOptions, ParamLayout};
use tpjm_core::model::{PriorConfig, SubjectData, TpjmSpec};
use tpjm_core::posthoc::quantile_sorted;
use tpjm_core::report::{parameter_labels, reports_coverage, true_value, ParamEstimate};
use tpjm_core::simgen::{generate_replicate, ScenarioConfig};

use crate::error::{CliError, Result};

/// What the harness needs back from one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineFit {
    pub estimates: Vec<ParamEstimate>,
    pub converged: bool,
    /// Log baseline-hazard levels used for the survival band.
    pub log_baseline: Vec<f64>,
    pub note: Option<String>,
}

pub trait FitEngine: Sync {
    fn name(&self) -> &str;
    fn fit(&self, data: &[SubjectData], spec: &TpjmSpec, scenario: &ScenarioConfig) -> tpjm_core::Result<EngineFit>;
}

#[derive(Debug, Clone)]
pub struct InlaEngine {
    pub priors: PriorConfig,
    pub opts: ExploreOptions,
}

impl FitEngine for InlaEngine {
    fn name(&self) -> &str {
        "inla"
    }

    fn fit(&self, data: &[SubjectData], spec: &TpjmSpec, _: &ScenarioConfig) -> tpjm_core::Result<EngineFit> {
        let f = fit_inla(data, spec, &self.priors, &self.opts, false)?;
        Ok(EngineFit { estimates: f.estimates, converged: true, log_baseline: f.lambda_median, note: None })
    }
}

#[derive(Debug, Clone)]
pub struct MleEngine {
    pub opts: MleOptions,
}

impl FitEngine for MleEngine {
    fn name(&self) -> &str {
        "mle"
    }

    fn fit(&self, data: &[SubjectData], spec: &TpjmSpec, _: &ScenarioConfig) -> tpjm_core::Result<EngineFit> {
        let r = fit_mle(data, spec, None, &self.opts)?;
        let l = ParamLayout::new(spec);
        let note = (!r.converged).then(|| {
            format!("criteria d_loglik {:.2e} d_params {:.2e} grad {:.2e}", r.criteria.d_loglik, r.criteria.d_params, r.criteria.grad)
        });
        Ok(EngineFit {
            estimates: mle_estimates(spec, &r)?,
            converged: r.converged,
            log_baseline: (0..l.n_lambda).map(|k| r.estimates[l.lambda(k)]).collect(),
            note,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub converged: bool,
    /// Wall-clock seconds of the fit alone.
    pub seconds: f64,
    pub estimates: Vec<ParamEstimate>,
    pub log_baseline: Vec<f64>,
    /// Failure message or convergence diagnostics.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub truth: f64,
    pub mean: f64,
    /// Empirical SD of the estimates (divisor R−1).
    pub sd: f64,
    /// Mean reported SD (posterior SD or standard error).
    pub mean_se: f64,
    /// `None` for variance components.
    pub cp: Option<f64>,
}

impl ReportRow {
    pub fn bias(&self) -> f64 {
        self.mean - self.truth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalBand {
    pub times: Vec<f64>,
    pub q025: Vec<f64>,
    pub q50: Vec<f64>,
    pub q975: Vec<f64>,
    /// `exp(-scale·t)`.
    pub truth: Vec<f64>,
}

impl SurvivalBand {
    /// Index of the grid point closest to `t`.
    pub fn at(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = k;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub engine: String,
    pub replicates: usize,
    pub converged: usize,
    pub rows: Vec<ReportRow>,
    pub time_mean: f64,
    pub time_sd: f64,
    pub survival: SurvivalBand,
}

impl ReplicationReport {
    pub fn convergence_rate(&self) -> f64 {
        self.converged as f64 / self.replicates as f64
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub records: Vec<ReplicateRecord>,
    pub report: ReplicationReport,
}

/// Survival band grid: 41 points on `[0, horizon]`.
pub fn time_grid(horizon: f64) -> Vec<f64> {
    (0..=40).map(|k| horizon * k as f64 / 40.0).collect()
}

fn run_one(cfg: &ScenarioConfig, spec: &TpjmSpec, engine: &dyn FitEngine, replicate: u64) -> ReplicateRecord {
    let failed = |note: String, seconds| ReplicateRecord {
        replicate,
        converged: false,
        seconds,
        estimates: Vec::new(),
        log_baseline: Vec::new(),
        note: Some(note),
    };
    let data = match generate_replicate(cfg, replicate) {
        Ok(d) => d,
        Err(e) => return failed(format!("simulation: {e}"), 0.0),
    };
    let t = Instant::now();
    let r = engine.fit(&data, spec, cfg);
    let seconds = t.elapsed().as_secs_f64();
    match r {
        Ok(f) => ReplicateRecord { replicate, converged: f.converged, seconds, estimates: f.estimates, log_baseline: f.log_baseline, note: f.note },
        Err(e) => failed(e.to_string(), seconds),
    }
}

/// Replicates `0..replicates` of `cfg`, fitted on a pool of `workers`
/// threads. Failed fits are recorded, never raised.
pub fn run_study(cfg: &ScenarioConfig, spec: &TpjmSpec, engine: &dyn FitEngine, replicates: usize, workers: usize) -> Result<Study> {
    if replicates == 0 {
        return Err(CliError::Config("at least one replicate is required".into()));
    }
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let records: Vec<ReplicateRecord> =
        pool.install(|| (0..replicates as u64).into_par_iter().map(|r| run_one(cfg, spec, engine, r)).collect());
    let report = summarize(engine.name(), cfg, spec, &records);
    Ok(Study { records, report })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = stable_sum(v.iter().copied()) / n;
    let sd = if v.len() > 1 { (stable_sum(v.iter().map(|x| (x - m) * (x - m))) / (n - 1.0)).sqrt() } else { f64::NAN };
    (m, sd)
}

/// Aggregates converged replicates; the rest only count against the
/// convergence rate. Records are sorted by replicate, so the result does
/// not depend on completion order.
pub fn summarize(engine: &str, cfg: &ScenarioConfig, spec: &TpjmSpec, records: &[ReplicateRecord]) -> ReplicationReport {
    let mut recs: Vec<&ReplicateRecord> = records.iter().collect();
    recs.sort_by_key(|r| r.replicate);
    let ok: Vec<&ReplicateRecord> = recs.iter().copied().filter(|r| r.converged).collect();
    let rows = parameter_labels(spec)
        .into_iter()
        .map(|label| {
            let truth = true_value(&cfg.truth, cfg.re_structure, &label).unwrap_or(f64::NAN);
            let hits: Vec<&ParamEstimate> = ok.iter().filter_map(|r| r.estimates.iter().find(|e| e.label == label)).collect();
            let est: Vec<f64> = hits.iter().map(|e| e.estimate).collect();
            let (mean, sd) = mean_sd(&est);
            let ses: Vec<f64> = hits.iter().map(|e| e.sd).filter(|s| s.is_finite()).collect();
            let mean_se = mean_sd(&ses).0;
            let cp = reports_coverage(&label).then(|| {
                let finite: Vec<&&ParamEstimate> = hits.iter().filter(|e| e.lower.is_finite() && e.upper.is_finite()).collect();
                finite.iter().filter(|e| e.lower <= truth && truth <= e.upper).count() as f64 / finite.len() as f64
            });
            ReportRow { label, truth, mean, sd, mean_se, cp }
        })
        .collect();
    let times: Vec<f64> = recs.iter().filter(|r| r.seconds > 0.0).map(|r| r.seconds).collect();
    let (time_mean, time_sd) = mean_sd(&times);
    let grid = time_grid(cfg.horizon);
    let edges = spec.bin_edges();
    let curves: Vec<Vec<f64>> =
        ok.iter().filter(|r| r.log_baseline.len() + 1 == edges.len()).map(|r| baseline_survival(&r.log_baseline, &edges, &grid)).collect();
    let band = |p: f64| -> Vec<f64> {
        (0..grid.len())
            .map(|k| {
                let mut v: Vec<f64> = curves.iter().map(|c| c[k]).collect();
                v.sort_by(f64::total_cmp);
                quantile_sorted(&v, p)
            })
            .collect()
    };
    ReplicationReport {
        engine: engine.into(),
        replicates: recs.len(),
        converged: ok.len(),
        rows,
        time_mean,
        time_sd,
        survival: SurvivalBand {
            q025: band(0.025),
            q50: band(0.5),
            q975: band(0.975),
            truth: grid.iter().map(|t| (-cfg.baseline_scale * t).exp()).collect(),
            times: grid,
        },
    }
}

fn cell(r: &ReportRow) -> String {
    let cp = r.cp.map_or(String::new(), |c| format!(" [{:.0}%]", 100.0 * c));
    format!("{:.2} ({:.2}){cp}", r.mean, r.sd)
}

/// Side-by-side Est (SD) [CP] table of two studies with timing and
/// convergence rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn compare_reports(a: &ReplicationReport, b: &ReplicationReport) -> Result<Comparison> {
    let la: Vec<&str> = a.rows.iter().map(|r| r.label.as_str()).collect();
    let lb: Vec<&str> = b.rows.iter().map(|r| r.label.as_str()).collect();
    if la != lb {
        return Err(CliError::Data(format!("parameter labels differ between the {} and {} reports", a.engine, b.engine)));
    }
    let mut rows: Vec<Vec<String>> =
        a.rows.iter().zip(&b.rows).map(|(x, y)| vec![x.label.clone(), format!("{}", x.truth), cell(x), cell(y)]).collect();
    let time = |r: &ReplicationReport| format!("{:.2} ({:.2})", r.time_mean, r.time_sd);
    rows.push(vec!["time (s)".into(), String::new(), time(a), time(b)]);
    let conv = |r: &ReplicationReport| format!("{:.0}%", 100.0 * r.convergence_rate());
    rows.push(vec!["convergence".into(), String::new(), conv(a), conv(b)]);
    Ok(Comparison { header: vec!["parameter".into(), "truth".into(), a.engine.clone(), b.engine.clone()], rows })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let ncol = self.header.len();
        let w: Vec<usize> =
            (0..ncol).map(|c| self.rows.iter().map(|r| r[c].len()).chain([self.header[c].len()]).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in std::iter::once(&self.header).chain(&self.rows) {
            let line: Vec<String> = r.iter().zip(&w).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(&self.header);
        for r in &self.rows {
            let _ = w.write_record(r);
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }
}

fn csv_string(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(header);
    for r in rows {
        let _ = w.write_record(&r);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn report_csv(r: &ReplicationReport) -> String {
    let mut rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|x| vec![x.label.clone(), x.truth.to_string(), x.mean.to_string(), x.bias().to_string(), x.sd.to_string(), x.mean_se.to_string(), opt(x.cp)])
        .collect();
    rows.push(vec!["time_seconds".into(), String::new(), r.time_mean.to_string(), String::new(), r.time_sd.to_string(), String::new(), String::new()]);
    rows.push(vec!["convergence_rate".into(), String::new(), r.convergence_rate().to_string(), String::new(), String::new(), String::new(), String::new()]);
    csv_string(&["parameter", "truth", "mean", "bias", "sd", "mean_se", "cp"], rows.into_iter())
}

/// One line per (replicate, parameter); failed replicates get a single line
/// carrying the message.
pub fn raw_csv(records: &[ReplicateRecord]) -> String {
    let rows = records.iter().flat_map(|r| {
        let note = r.note.clone().unwrap_or_default();
        let head = vec![r.replicate.to_string(), r.converged.to_string(), r.seconds.to_string()];
        if r.estimates.is_empty() {
            return vec![[head, vec![String::new(); 5], vec![note]].concat()];
        }
        r.estimates
            .iter()
            .map(|e| {
                let vals = vec![e.label.clone(), e.estimate.to_string(), e.sd.to_string(), e.lower.to_string(), e.upper.to_string()];
                [head.clone(), vals, vec![note.clone()]].concat()
            })
            .collect()
    });
    csv_string(&["replicate", "converged", "seconds", "parameter", "estimate", "sd", "lower", "upper", "note"], rows)
}

pub fn survival_csv(b: &SurvivalBand) -> String {
    let rows = (0..b.times.len()).map(|k| vec![b.times[k].to_string(), b.q025[k].to_string(), b.q50[k].to_string(), b.q975[k].to_string(), b.truth[k].to_string()]);
    csv_string(&["time", "q025", "q50", "q975", "truth"], rows)
}

/// Single-engine text table.
pub fn render_report(r: &ReplicationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "engine {}: {} replicates, {} converged", r.engine, r.replicates, r.converged);
    let _ = writeln!(out, "{:16} {:>7} {:>8} {:>8} {:>7} {:>8} {:>5}", "parameter", "truth", "mean", "bias", "sd", "mean_se", "cp");
    for x in &r.rows {
        let cp = x.cp.map_or(String::new(), |c| format!("{:.0}%", 100.0 * c));
        let _ = writeln!(out, "{:16} {:>7.3} {:>8.3} {:>+8.3} {:>7.3} {:>8.3} {:>5}", x.label, x.truth, x.mean, x.bias(), x.sd, x.mean_se, cp);
    }
    let _ = writeln!(out, "time per fit {:.2}s (sd {:.2})", r.time_mean, r.time_sd);
    out
}

//! Engine-neutral fitted-model file: JSON for machines, a text table for people.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use tpjm_core::fit::InlaFit;
use tpjm_core::mle::{mle_estimates, MleResult, ParamLayout};
use tpjm_core::model::{cov_from_params, n_corr, HyperParams, TpjmSpec};
use tpjm_core::report::{Engine, ParamEstimate};

use crate::error::{CliError, Result};

/// JSON has no NaN; missing standard errors are written as `null`.
mod nan_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub label: String,
    #[serde(with = "nan_null")]
    pub estimate: f64,
    #[serde(with = "nan_null")]
    pub sd: f64,
    #[serde(with = "nan_null")]
    pub lower: f64,
    #[serde(with = "nan_null")]
    pub upper: f64,
    pub p_value: Option<f64>,
    pub coverage: bool,
}

impl From<&ParamEstimate> for EstimateRow {
    fn from(e: &ParamEstimate) -> Self {
        Self {
            label: e.label.clone(),
            estimate: e.estimate,
            sd: e.sd,
            lower: e.lower,
            upper: e.upper,
            p_value: e.p_value.filter(|p| p.is_finite()),
            coverage: e.coverage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRow {
    pub name: String,
    pub free: bool,
    pub mode: f64,
    #[serde(with = "nan_null")]
    pub sd: f64,
    pub value: f64,
    #[serde(with = "nan_null")]
    pub value_sd: f64,
    #[serde(with = "nan_null")]
    pub q025: f64,
    #[serde(with = "nan_null")]
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub theta: Vec<f64>,
    pub log_post: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriteriaRecord {
    pub d_loglik: f64,
    pub d_params: f64,
    pub grad: f64,
}

/// Gaussian summary of the association loadings: posterior (or sampling)
/// mean and covariance, used for hazard-ratio intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRecord {
    pub mean: Vec<f64>,
    /// Row-major; absent when the curvature at the optimum was not usable.
    pub covariance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub engine: String,
    pub converged: bool,
    pub criteria: Option<CriteriaRecord>,
    pub iterations: usize,
    pub seed: u64,
    pub seconds: f64,
    /// Log marginal likelihood estimate (nested Laplace) or maximized
    /// Monte-Carlo log-likelihood.
    pub log_likelihood: f64,
    /// Resolved configuration, as TOML.
    pub config: String,
    pub estimates: Vec<EstimateRow>,
    pub random_effects: Vec<String>,
    /// Point estimate of the random-effect covariance, row-major.
    pub re_covariance: Vec<f64>,
    pub association: AssociationRecord,
    pub bin_edges: Vec<f64>,
    pub log_baseline_hazard: Vec<f64>,
    #[serde(default)]
    pub hyper: Vec<HyperRow>,
    #[serde(default)]
    pub latent: Vec<LatentRow>,
    #[serde(default)]
    pub theta_points: Vec<ThetaRow>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.ncols();
    (0..m.nrows() * n).map(|k| m[(k / n, k % n)]).collect()
}

impl FitRecord {
    pub fn from_inla(fit: &InlaFit, spec: &TpjmSpec, config: &str, seed: u64, seconds: f64) -> Result<Self> {
        let d = spec.re_dim();
        let ex = &fit.exploration;
        let hp = HyperParams::from_slice(&ex.mode, d)?;
        let phi_at = 2 + d + n_corr(d);
        // φ block of the inverse negative Hessian, when every φ is free.
        let pos: Option<Vec<usize>> = (0..d).map(|k| ex.free.iter().position(|&j| j == phi_at + k)).collect();
        let covariance = pos.and_then(|p| {
            let inv = ex.neg_hessian.clone().try_inverse()?;
            Some((0..d * d).map(|k| inv[(p[k / d], p[k % d])]).collect())
        });
        let s = &fit.summary;
        Ok(Self {
            engine: Engine::Inla.name().into(),
            converged: true,
            criteria: None,
            iterations: s.mode_iterations,
            seed,
            seconds,
            log_likelihood: s.log_mlik,
            config: config.into(),
            estimates: fit.estimates.iter().map(EstimateRow::from).collect(),
            random_effects: spec.re_structure.names().iter().map(|s| s.to_string()).collect(),
            re_covariance: row_major(&hp.covariance()?),
            association: AssociationRecord { mean: hp.assoc.clone(), covariance },
            bin_edges: spec.bin_edges(),
            log_baseline_hazard: fit.lambda_median.clone(),
            hyper: s
                .hyper
                .iter()
                .map(|h| HyperRow {
                    name: h.name.clone(),
                    free: h.free,
                    mode: h.mode,
                    sd: h.sd,
                    value: h.value,
                    value_sd: h.value_sd,
                    q025: h.q025,
                    q975: h.q975,
                })
                .collect(),
            latent: s
                .latent
                .iter()
                .map(|m| LatentRow { name: m.name.clone(), mean: m.mean, sd: m.sd, q025: m.q025, q50: m.q50, q975: m.q975, p_value: m.p_value })
                .collect(),
            theta_points: s.points.iter().map(|(t, lp, w)| ThetaRow { theta: t.clone(), log_post: *lp, weight: *w }).collect(),
        })
    }

    pub fn from_mle(r: &MleResult, spec: &TpjmSpec, config: &str) -> Result<Self> {
        let l = ParamLayout::new(spec);
        let d = l.re_dim;
        let re_cov = &r.estimates[l.re_cov()..l.phi(0)];
        let sigma = cov_from_params(re_cov, d)?;
        let covariance = r.covariance_matrix().map(|c| (0..d * d).map(|k| c[(l.phi(k / d), l.phi(k % d))]).collect());
        Ok(Self {
            engine: Engine::Mle.name().into(),
            converged: r.converged,
            criteria: Some(CriteriaRecord { d_loglik: r.criteria.d_loglik, d_params: r.criteria.d_params, grad: r.criteria.grad }),
            iterations: r.iterations,
            seed: r.seed,
            seconds: r.seconds,
            log_likelihood: r.loglik,
            config: config.into(),
            estimates: mle_estimates(spec, r)?.iter().map(EstimateRow::from).collect(),
            random_effects: spec.re_structure.names().iter().map(|s| s.to_string()).collect(),
            re_covariance: row_major(&sigma),
            association: AssociationRecord { mean: (0..d).map(|k| r.estimates[l.phi(k)]).collect(), covariance },
            bin_edges: spec.bin_edges(),
            log_baseline_hazard: (0..l.n_lambda).map(|k| r.estimates[l.lambda(k)]).collect(),
            hyper: Vec::new(),
            latent: r
                .names
                .iter()
                .enumerate()
                .map(|(k, n)| {
                    let se = r.std_errors.as_ref().map_or(f64::NAN, |s| s[k]);
                    let m = r.estimates[k];
                    LatentRow { name: n.clone(), mean: m, sd: se, q025: m - 1.96 * se, q50: m, q975: m + 1.96 * se, p_value: f64::NAN }
                })
                .filter(|row| row.sd.is_finite())
                .collect(),
            theta_points: Vec::new(),
        })
    }

    pub fn re_covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.random_effects.len();
        DMatrix::from_row_slice(d, d, &self.re_covariance)
    }

    pub fn association_covariance(&self) -> Option<DMatrix<f64>> {
        let d = self.association.mean.len();
        self.association.covariance.as_ref().map(|c| DMatrix::from_row_slice(d, d, c))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Format(format!("fit file: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
    }
}

/// `***` below 0.001, `**` below 0.01, `*` below 0.05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "-".into()
    }
}

/// Parameter table with estimate, SD, 95% interval and, when available, a
/// p-value with significance stars.
pub fn render_table(f: &FitRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "engine: {}   converged: {}   iterations: {}   seconds: {:.1}", f.engine, f.converged, f.iterations, f.seconds);
    if let Some(c) = f.criteria {
        let _ = writeln!(out, "criteria: d_loglik {:.2e}  d_params {:.2e}  grad {:.2e}", c.d_loglik, c.d_params, c.grad);
    }
    let w = f.estimates.iter().map(|e| e.label.len()).max().unwrap_or(9).max(9);
    let _ = writeln!(out, "{:w$}  {:>9}  {:>8}  {:>20}  {:>8}", "parameter", "estimate", "sd", "95% interval", "p");
    for e in &f.estimates {
        let interval = format!("[{}, {}]", num(e.lower), num(e.upper));
        let p = e.p_value.map_or(String::new(), |p| format!("{p:.4}{}", stars(p)));
        let _ = writeln!(out, "{:w$}  {:>9}  {:>8}  {:>20}  {:>8}", e.label, num(e.estimate), num(e.sd), interval, p);
    }
    let note = if f.engine == "inla" {
        "p: two-sided posterior tail mass of zero, an indication only"
    } else {
        "p: Wald test"
    };
    let _ = writeln!(out, "*** p<0.001; ** p<0.01; * p<0.05   ({note})");
    out
}

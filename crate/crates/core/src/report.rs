//! Engine-neutral parameter estimates under canonical labels.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::model::{corr_pairs, ReStructure, TpjmSpec};
use crate::simgen::TrueParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Inla,
    Mle,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Inla => "inla",
            Engine::Mle => "mle",
        }
    }
}

/// One reported parameter. `sd` is the posterior SD or the standard error;
/// `[lower, upper]` is the 95% credible or Wald interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    pub label: String,
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub p_value: Option<f64>,
    /// Whether coverage is reported for this row.
    pub coverage: bool,
}

/// Canonical labels in reporting order: binary, continuous (with `sigma_eps`),
/// survival, association, random-effect SDs, correlations.
pub fn parameter_labels(spec: &TpjmSpec) -> Vec<String> {
    let mut v = Vec::new();
    for t in &spec.binary_terms {
        v.push(format!("alpha:{}", t.label()));
    }
    for t in &spec.continuous_terms {
        v.push(format!("beta:{}", t.label()));
    }
    v.push("sigma_eps".to_string());
    for t in &spec.survival_terms {
        v.push(format!("gamma:{}", t.label()));
    }
    let names = spec.re_structure.names();
    for n in names {
        v.push(format!("phi_{n}"));
    }
    for n in names {
        v.push(format!("sigma_{n}"));
    }
    for (i, j) in corr_pairs(names.len()) {
        v.push(format!("rho_{}_{}", names[i], names[j]));
    }
    v
}

/// Whether the row carries a coverage column (variance components do not).
pub fn reports_coverage(label: &str) -> bool {
    !(label.starts_with("sigma_") && label != "sigma_eps") && !label.starts_with("rho_")
}

/// True value of a canonical label under the simulation design.
pub fn true_value(truth: &TrueParams, re: ReStructure, label: &str) -> Option<f64> {
    let terms = ["1", "time", "trt", "time:trt"];
    let names = re.names();
    if let Some(t) = label.strip_prefix("alpha:") {
        return terms.iter().position(|x| *x == t).map(|k| truth.alpha[k]);
    }
    if let Some(t) = label.strip_prefix("beta:") {
        return terms.iter().position(|x| *x == t).map(|k| truth.beta[k]);
    }
    if label == "sigma_eps" {
        return Some(truth.sigma_eps);
    }
    if label == "gamma:trt" {
        return Some(truth.gamma);
    }
    if let Some(n) = label.strip_prefix("phi_") {
        return names.iter().position(|x| *x == n).map(|k| truth.assoc[k]);
    }
    if let Some(n) = label.strip_prefix("sigma_") {
        return names.iter().position(|x| *x == n).map(|k| truth.re_sd(k));
    }
    if let Some(rest) = label.strip_prefix("rho_") {
        let (p, q) = rest.split_once('_')?;
        let a = names.iter().position(|x| *x == p)?;
        let b = names.iter().position(|x| *x == q)?;
        return Some(truth.re_corr(a, b));
    }
    None
}

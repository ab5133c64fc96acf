//! Fitting the joint model with the nested Laplace engine.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::inla::{self, Exploration, ExploreOptions, PosteriorSummary};
use crate::lgm::{LatentGaussianModel, Parts, TpjmLgm};
use crate::model::{n_corr, PriorConfig, SubjectData, TpjmSpec};
use crate::report::{parameter_labels, reports_coverage, ParamEstimate};

/// Crude moment-based starting point for `θ`.
pub fn theta_start(data: &[SubjectData], spec: &TpjmSpec) -> Vec<f64> {
    let d = spec.re_dim();
    let mut within = 0.0;
    let mut n_within = 0usize;
    let mut means = Vec::new();
    for s in data {
        let y: Vec<f64> = s.visits.iter().filter(|v| v.is_positive()).map(|v| v.value.ln()).collect();
        if y.is_empty() {
            continue;
        }
        let m = y.iter().sum::<f64>() / y.len() as f64;
        means.push(m);
        within += y.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        n_within += y.len() - 1;
    }
    let var_w = if n_within > 0 { (within / n_within as f64).max(1e-4) } else { 1.0 };
    let var_b = if means.len() > 1 {
        let mm = means.iter().sum::<f64>() / means.len() as f64;
        (means.iter().map(|v| (v - mm) * (v - mm)).sum::<f64>() / (means.len() - 1) as f64).max(1e-2)
    } else {
        1.0
    };
    let mut th = vec![0.0; 2 + d + n_corr(d) + d];
    th[0] = -var_w.ln();
    th[1] = 3.0;
    th[3] = -var_b.ln();
    th
}

/// Latent marginals that feed parameter estimates: everything but the random effects.
pub fn non_re(model: &TpjmLgm) -> impl Fn(usize) -> bool {
    let end = model.layout.re_block().end;
    move |j| j >= end
}

#[derive(Debug, Clone)]
pub struct InlaFit {
    pub summary: PosteriorSummary,
    pub exploration: Exploration,
    pub estimates: Vec<ParamEstimate>,
    /// Posterior medians of the log baseline-hazard levels.
    pub lambda_median: Vec<f64>,
}

/// Fits the model; random-effect marginals are kept only when `keep_re`.
pub fn fit_inla(data: &[SubjectData], spec: &TpjmSpec, priors: &PriorConfig, opts: &ExploreOptions, keep_re: bool) -> Result<InlaFit> {
    let model = TpjmLgm::new(data, spec, priors, Parts::ALL)?;
    let start = theta_start(data, spec);
    let free = vec![true; start.len()];
    let keep = non_re(&model);
    let keep_all = |_: usize| true;
    let keep_fn: &dyn Fn(usize) -> bool = if keep_re { &keep_all } else { &keep };
    let (ex, summary) = inla::fit(&model, &start, &free, opts, Some(keep_fn))?;
    let estimates = inla_estimates(&model, &summary)?;
    let lambda_median = (0..spec.baseline_bins)
        .map(|k| summary.latent(&format!("lambda[{k}]")).map(|m| m.q50).ok_or(Error::Dimension("missing λ marginal".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(InlaFit { summary, exploration: ex, estimates, lambda_median })
}

/// Maps the posterior summary onto the canonical parameter rows. Latent
/// rows use mixture means and equal-tailed quantiles, hyperparameters the
/// transformed mode with delta-method SD.
pub fn inla_estimates(model: &TpjmLgm, s: &PosteriorSummary) -> Result<Vec<ParamEstimate>> {
    let names = model.theta_names();
    let mut out = Vec::new();
    for label in parameter_labels(&model.spec) {
        let hyper_name = if label == "sigma_eps" {
            Some(names[0].clone())
        } else if let Some(n) = label.strip_prefix("phi_") {
            Some(format!("phi_{n}"))
        } else if let Some(n) = label.strip_prefix("sigma_") {
            Some(format!("log_prec_{n}"))
        } else if let Some(rest) = label.strip_prefix("rho_") {
            Some(format!("z_{rest}"))
        } else {
            None
        };
        let est = match hyper_name {
            Some(h) => {
                let m = s.hyper(&h).ok_or_else(|| Error::Dimension(format!("no hyperparameter {h}")))?;
                ParamEstimate {
                    label: label.clone(),
                    estimate: m.value,
                    sd: m.value_sd,
                    lower: m.q025,
                    upper: m.q975,
                    p_value: None,
                    coverage: reports_coverage(&label),
                }
            }
            None => {
                let m = s.latent(&label).ok_or_else(|| Error::Dimension(format!("no latent {label}")))?;
                ParamEstimate {
                    label: label.clone(),
                    estimate: m.mean,
                    sd: m.sd,
                    lower: m.q025,
                    upper: m.q975,
                    p_value: Some(m.p_value),
                    coverage: true,
                }
            }
        };
        out.push(est);
    }
    Ok(out)
}

//! Observation-level log-likelihood kernels and the expansion of subject data
//! into rows of the latent Gaussian model.
//!
//! Every kernel returns the log-likelihood together with its first and second
//! derivative in the linear predictor. The survival part is expressed through
//! Poisson augmentation over the baseline-hazard bins: with a piecewise
//! constant hazard the cumulative hazard integral is exact.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus, LN_2PI};
use crate::model::{SubjectData, TpjmSpec};

/// Log-likelihood value and derivatives with respect to the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KernelEval {
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
}

/// Bernoulli-logit kernel `uη - log(1 + e^η)`.
#[inline]
pub fn binary_loglik(eta: f64, u: bool) -> KernelEval {
    let p = sigmoid(eta);
    let y = if u { 1.0 } else { 0.0 };
    KernelEval {
        value: y * eta - softplus(eta),
        grad: y - p,
        hess: -p * (1.0 - p),
    }
}

/// Gaussian kernel for `log Y` with residual precision `tau_eps`.
#[inline]
pub fn gaussian_loglik(eta: f64, y_log: f64, tau_eps: f64) -> KernelEval {
    let r = y_log - eta;
    KernelEval {
        value: 0.5 * (tau_eps.ln() - LN_2PI) - 0.5 * tau_eps * r * r,
        grad: tau_eps * r,
        hess: -tau_eps,
    }
}

/// Survival segment kernel `δη - exp(η + log Δ)`.
///
/// Summed over the segments of a subject this is exactly the log-likelihood
/// `δ log h(T) - H(T)` of a piecewise-constant hazard.
pub fn poisson_surv_loglik(eta_total: f64, event: bool, log_exposure: f64) -> Result<KernelEval> {
    if !log_exposure.is_finite() {
        return Err(Error::Domain(format!(
            "segment exposure must be positive (log exposure {log_exposure})"
        )));
    }
    Ok(surv_kernel(eta_total, event, log_exposure))
}

#[inline]
pub(crate) fn surv_kernel(eta: f64, event: bool, log_exposure: f64) -> KernelEval {
    let mu = (eta + log_exposure).exp();
    KernelEval {
        value: if event { eta } else { 0.0 } - mu,
        grad: if event { 1.0 } else { 0.0 } - mu,
        hess: -mu,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsKind {
    Binary,
    Continuous,
    SurvSegment,
}

/// Coefficient of one latent column in a linear-predictor row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coef {
    Fixed(f64),
    /// Association loading `φ_k`, resolved from the hyperparameters.
    Assoc(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowEntry {
    pub col: usize,
    pub coef: Coef,
}

/// One row of the augmented data set.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedObservation {
    pub kind: ObsKind,
    pub subject: usize,
    pub entries: Vec<RowEntry>,
    /// `U_ij`, `log Y_ij`, or the segment event indicator.
    pub response: f64,
    /// Log exposure `log Δ` for survival segments, zero otherwise.
    pub offset: f64,
    /// Hazard bin for survival segments.
    pub bin: Option<usize>,
}

impl AugmentedObservation {
    pub fn exposure(&self) -> Option<f64> {
        (self.kind == ObsKind::SurvSegment).then(|| self.offset.exp())
    }

    /// Kernel evaluated at `eta`; `tau_eps` is used by continuous rows only.
    #[inline]
    pub fn loglik(&self, eta: f64, tau_eps: f64) -> KernelEval {
        match self.kind {
            ObsKind::Binary => binary_loglik(eta, self.response > 0.5),
            ObsKind::Continuous => gaussian_loglik(eta, self.response, tau_eps),
            ObsKind::SurvSegment => surv_kernel(eta, self.response > 0.5, self.offset),
        }
    }
}

/// Exposure of each bin overlapping `[0, t]`, as `(bin, exposure)` pairs with
/// positive exposure.
pub fn bin_exposures(t: f64, edges: &[f64]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for k in 0..edges.len() - 1 {
        let lo = edges[k];
        if t <= lo {
            break;
        }
        let hi = edges[k + 1];
        let exposure = if t < hi || k == edges.len() - 2 { t - lo } else { hi - lo };
        if exposure > 0.0 {
            out.push((k, exposure));
        }
    }
    out
}

/// Expands subjects into binary, continuous and survival-segment rows.
pub fn augment_dataset(data: &[SubjectData], spec: &TpjmSpec) -> Result<Vec<AugmentedObservation>> {
    let layout = spec.layout(data.len());
    let edges = spec.bin_edges();
    let slope = spec.re_dim() == 3;
    let mut rows = Vec::new();
    for (i, s) in data.iter().enumerate() {
        s.validate()?;
        if s.surv_time > spec.follow_up_max {
            return Err(Error::InvalidData {
                subject: s.id,
                reason: format!(
                    "survival time {} exceeds follow-up horizon {}",
                    s.surv_time, spec.follow_up_max
                ),
            });
        }
        for v in &s.visits {
            let mut entries = Vec::with_capacity(1 + layout.n_alpha);
            entries.push(RowEntry { col: layout.re(i, 0), coef: Coef::Fixed(1.0) });
            for (k, term) in spec.binary_terms.iter().enumerate() {
                entries.push(RowEntry {
                    col: layout.alpha_block().start + k,
                    coef: Coef::Fixed(term.eval(v.time, s)?),
                });
            }
            rows.push(AugmentedObservation {
                kind: ObsKind::Binary,
                subject: i,
                entries,
                response: if v.is_positive() { 1.0 } else { 0.0 },
                offset: 0.0,
                bin: None,
            });
        }
        for v in s.visits.iter().filter(|v| v.is_positive()) {
            let mut entries = Vec::with_capacity(2 + layout.n_beta);
            entries.push(RowEntry { col: layout.re(i, 1), coef: Coef::Fixed(1.0) });
            if slope {
                entries.push(RowEntry { col: layout.re(i, 2), coef: Coef::Fixed(v.time) });
            }
            for (k, term) in spec.continuous_terms.iter().enumerate() {
                entries.push(RowEntry {
                    col: layout.beta_block().start + k,
                    coef: Coef::Fixed(term.eval(v.time, s)?),
                });
            }
            rows.push(AugmentedObservation {
                kind: ObsKind::Continuous,
                subject: i,
                entries,
                response: v.value.ln(),
                offset: 0.0,
                bin: None,
            });
        }
        let segments = bin_exposures(s.surv_time, &edges);
        let last = segments.len().saturating_sub(1);
        let mut gamma_x = Vec::with_capacity(layout.n_gamma);
        for term in &spec.survival_terms {
            gamma_x.push(term.eval(0.0, s)?);
        }
        for (seg, &(bin, exposure)) in segments.iter().enumerate() {
            let mut entries = Vec::with_capacity(layout.re_dim + layout.n_gamma + 1);
            for k in 0..layout.re_dim {
                entries.push(RowEntry { col: layout.re(i, k), coef: Coef::Assoc(k) });
            }
            for (k, &x) in gamma_x.iter().enumerate() {
                entries.push(RowEntry { col: layout.gamma_block().start + k, coef: Coef::Fixed(x) });
            }
            entries.push(RowEntry { col: layout.lambda_block().start + bin, coef: Coef::Fixed(1.0) });
            rows.push(AugmentedObservation {
                kind: ObsKind::SurvSegment,
                subject: i,
                entries,
                response: if s.event && seg == last { 1.0 } else { 0.0 },
                offset: exposure.ln(),
                bin: Some(bin),
            });
        }
    }
    Ok(rows)
}

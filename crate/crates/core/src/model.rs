//! Domain types for the two-part joint model: subject data, the model
//! specification, the latent-field layout, and the hyperparameter vector.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// One biomarker measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisitRecord {
    /// Years since randomization.
    pub time: f64,
    /// Biomarker value; zero is a structural zero.
    pub value: f64,
}

impl VisitRecord {
    pub fn new(time: f64, value: f64) -> Result<Self> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::Domain(format!("visit time {time} must be finite and >= 0")));
        }
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::Domain(format!("biomarker value {value} must be finite and >= 0")));
        }
        Ok(Self { time, value })
    }

    #[inline]
    pub fn is_positive(&self) -> bool {
        self.value > 0.0
    }
}

/// Longitudinal and survival records for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub id: u64,
    pub visits: Vec<VisitRecord>,
    pub surv_time: f64,
    pub event: bool,
    pub covariates: BTreeMap<String, f64>,
}

impl SubjectData {
    pub fn new(
        id: u64,
        visits: Vec<VisitRecord>,
        surv_time: f64,
        event: bool,
        covariates: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let s = Self { id, visits, surv_time, event, covariates };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidData { subject: self.id, reason };
        if !(self.surv_time.is_finite() && self.surv_time > 0.0) {
            return Err(bad(format!("survival time {} must be positive", self.surv_time)));
        }
        for w in self.visits.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(bad(format!(
                    "visit times must be strictly increasing ({} then {})",
                    w[0].time, w[1].time
                )));
            }
        }
        for v in &self.visits {
            if !(v.value.is_finite() && v.value >= 0.0) {
                return Err(bad(format!("negative or non-finite value {}", v.value)));
            }
            if !(v.time >= 0.0) {
                return Err(bad(format!("negative visit time {}", v.time)));
            }
            if v.time > self.surv_time {
                return Err(bad(format!(
                    "visit at {} after survival time {}",
                    v.time, self.surv_time
                )));
            }
        }
        for (k, x) in &self.covariates {
            if !x.is_finite() {
                return Err(bad(format!("covariate `{k}` is not finite")));
            }
        }
        Ok(())
    }

    pub fn covariate(&self, name: &str) -> Result<f64> {
        self.covariates
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }
}

/// Factor of a design term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Factor {
    Time,
    Covariate(String),
}

/// Product of factors; the empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub factors: Vec<Factor>,
}

impl Term {
    pub fn intercept() -> Self {
        Self { factors: Vec::new() }
    }

    /// Parses `"1"`, `"time"`, `"trt"` or an interaction such as `"time:trt"`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" || s.eq_ignore_ascii_case("intercept") {
            return Ok(Self::intercept());
        }
        let mut factors = Vec::new();
        for part in s.split(':') {
            let part = part.trim();
            if part.is_empty() {
                return Err(Error::InvalidSpec(format!("malformed term `{s}`")));
            }
            factors.push(if part == "time" {
                Factor::Time
            } else {
                Factor::Covariate(part.to_string())
            });
        }
        Ok(Self { factors })
    }

    pub fn is_intercept(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn involves_time(&self) -> bool {
        self.factors.iter().any(|f| *f == Factor::Time)
    }

    pub fn label(&self) -> String {
        if self.factors.is_empty() {
            return "1".to_string();
        }
        let parts: Vec<&str> = self
            .factors
            .iter()
            .map(|f| match f {
                Factor::Time => "time",
                Factor::Covariate(c) => c.as_str(),
            })
            .collect();
        parts.join(":")
    }

    pub fn eval(&self, time: f64, subject: &SubjectData) -> Result<f64> {
        let mut x = 1.0;
        for f in &self.factors {
            x *= match f {
                Factor::Time => time,
                Factor::Covariate(c) => subject.covariate(c)?,
            };
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReStructure {
    /// Random intercepts `(a_i, b_0i)`.
    InterceptsOnly,
    /// Random intercepts plus a continuous-part slope `(a_i, b_0i, b_1i)`.
    InterceptPlusSlope,
}

impl ReStructure {
    pub fn dim(self) -> usize {
        match self {
            ReStructure::InterceptsOnly => 2,
            ReStructure::InterceptPlusSlope => 3,
        }
    }

    pub fn names(self) -> &'static [&'static str] {
        &["a", "b0", "b1"][..self.dim()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RwOrder {
    First,
    Second,
}

impl RwOrder {
    pub fn order(self) -> usize {
        match self {
            RwOrder::First => 1,
            RwOrder::Second => 2,
        }
    }

    pub fn from_order(k: usize) -> Result<Self> {
        match k {
            1 => Ok(RwOrder::First),
            2 => Ok(RwOrder::Second),
            _ => Err(Error::InvalidSpec(format!("random-walk order must be 1 or 2, got {k}"))),
        }
    }
}

/// Unvalidated model description, as read from a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub binary_terms: Vec<String>,
    pub continuous_terms: Vec<String>,
    pub survival_terms: Vec<String>,
    pub re_structure: ReStructure,
    pub baseline_bins: usize,
    pub follow_up_max: f64,
    pub rw_order: usize,
}

impl ModelConfig {
    /// The design used in all simulation scenarios: `1 + time + trt + time:trt`
    /// in both longitudinal parts and `trt` in the survival part.
    pub fn scenario(re_structure: ReStructure) -> Self {
        let terms: Vec<String> =
            ["1", "time", "trt", "time:trt"].iter().map(|s| s.to_string()).collect();
        Self {
            binary_terms: terms.clone(),
            continuous_terms: terms,
            survival_terms: vec!["trt".to_string()],
            re_structure,
            baseline_bins: 15,
            follow_up_max: 4.0,
            rw_order: 2,
        }
    }
}

/// Validated model specification.
#[derive(Debug, Clone, PartialEq)]
pub struct TpjmSpec {
    pub binary_terms: Vec<Term>,
    pub continuous_terms: Vec<Term>,
    pub survival_terms: Vec<Term>,
    pub re_structure: ReStructure,
    pub baseline_bins: usize,
    pub follow_up_max: f64,
    pub rw_order: RwOrder,
}

/// Validates a configuration against the covariates available in the data.
pub fn build_spec(config: &ModelConfig, available: &[&str]) -> Result<TpjmSpec> {
    if config.baseline_bins < 2 {
        return Err(Error::InvalidSpec(format!(
            "baseline_bins must be >= 2, got {}",
            config.baseline_bins
        )));
    }
    if !(config.follow_up_max.is_finite() && config.follow_up_max > 0.0) {
        return Err(Error::InvalidSpec("follow_up_max must be positive".to_string()));
    }
    let parse = |terms: &[String]| -> Result<Vec<Term>> {
        let mut out = Vec::with_capacity(terms.len());
        for t in terms {
            let term = Term::parse(t)?;
            for f in &term.factors {
                if let Factor::Covariate(c) = f {
                    if !available.contains(&c.as_str()) {
                        return Err(Error::UnknownCovariate(c.clone()));
                    }
                }
            }
            if out.contains(&term) {
                return Err(Error::InvalidSpec(format!("duplicate term `{t}`")));
            }
            out.push(term);
        }
        Ok(out)
    };
    let survival_terms = parse(&config.survival_terms)?;
    if let Some(t) = survival_terms.iter().find(|t| t.is_intercept() || t.involves_time()) {
        return Err(Error::InvalidSpec(format!(
            "survival term `{}` not allowed: the baseline hazard carries the level and time",
            t.label()
        )));
    }
    Ok(TpjmSpec {
        binary_terms: parse(&config.binary_terms)?,
        continuous_terms: parse(&config.continuous_terms)?,
        survival_terms,
        re_structure: config.re_structure,
        baseline_bins: config.baseline_bins,
        follow_up_max: config.follow_up_max,
        rw_order: RwOrder::from_order(config.rw_order)?,
    })
}

impl TpjmSpec {
    pub fn re_dim(&self) -> usize {
        self.re_structure.dim()
    }

    pub fn bin_width(&self) -> f64 {
        self.follow_up_max / self.baseline_bins as f64
    }

    /// Bin edges `0 = c_0 < c_1 < … < c_m = follow_up_max`.
    pub fn bin_edges(&self) -> Vec<f64> {
        let w = self.bin_width();
        let mut e: Vec<f64> = (0..=self.baseline_bins).map(|k| k as f64 * w).collect();
        e[self.baseline_bins] = self.follow_up_max;
        e
    }

    pub fn layout(&self, n_subjects: usize) -> LatentLayout {
        LatentLayout {
            n_subjects,
            re_dim: self.re_dim(),
            n_alpha: self.binary_terms.len(),
            n_beta: self.continuous_terms.len(),
            n_gamma: self.survival_terms.len(),
            n_lambda: self.baseline_bins,
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for t in self
            .binary_terms
            .iter()
            .chain(&self.continuous_terms)
            .chain(&self.survival_terms)
        {
            for f in &t.factors {
                if let Factor::Covariate(c) = f {
                    if !names.contains(c) {
                        names.push(c.clone());
                    }
                }
            }
        }
        names
    }
}

/// Index map of the latent vector `u = (re, α, β, γ, λ)`.
///
/// Random effects come first, subject-major, so that natural ordering gives a
/// fill-free sparse Cholesky for the subject blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentLayout {
    pub n_subjects: usize,
    pub re_dim: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub n_gamma: usize,
    pub n_lambda: usize,
}

impl LatentLayout {
    #[inline]
    pub fn re(&self, subject: usize, k: usize) -> usize {
        subject * self.re_dim + k
    }
    pub fn re_block(&self) -> Range<usize> {
        0..self.n_subjects * self.re_dim
    }
    pub fn alpha_block(&self) -> Range<usize> {
        let s = self.re_block().end;
        s..s + self.n_alpha
    }
    pub fn beta_block(&self) -> Range<usize> {
        let s = self.alpha_block().end;
        s..s + self.n_beta
    }
    pub fn gamma_block(&self) -> Range<usize> {
        let s = self.beta_block().end;
        s..s + self.n_gamma
    }
    pub fn lambda_block(&self) -> Range<usize> {
        let s = self.gamma_block().end;
        s..s + self.n_lambda
    }
    pub fn len(&self) -> usize {
        self.lambda_block().end
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn blocks(&self) -> [Range<usize>; 5] {
        [
            self.re_block(),
            self.alpha_block(),
            self.beta_block(),
            self.gamma_block(),
            self.lambda_block(),
        ]
    }
}

/// A latent vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    pub layout: LatentLayout,
    pub values: Vec<f64>,
}

impl LatentField {
    pub fn zeros(layout: LatentLayout) -> Self {
        Self { layout, values: vec![0.0; layout.len()] }
    }
    pub fn from_values(layout: LatentLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Dimension(format!(
                "latent vector has {} entries, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, values })
    }
    pub fn re(&self, subject: usize) -> &[f64] {
        let s = self.layout.re(subject, 0);
        &self.values[s..s + self.layout.re_dim]
    }
    pub fn alpha(&self) -> &[f64] {
        &self.values[self.layout.alpha_block()]
    }
    pub fn beta(&self) -> &[f64] {
        &self.values[self.layout.beta_block()]
    }
    pub fn gamma(&self) -> &[f64] {
        &self.values[self.layout.gamma_block()]
    }
    pub fn lambda(&self) -> &[f64] {
        &self.values[self.layout.lambda_block()]
    }
}

/// Number of correlation parameters for a `d`-dimensional covariance.
pub fn n_corr(d: usize) -> usize {
    d * (d - 1) / 2
}

/// Correlation pairs in parameter order: (0,1), (0,2), …, (1,2), ….
pub fn corr_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(n_corr(d));
    for i in 0..d {
        for j in i + 1..d {
            v.push((i, j));
        }
    }
    v
}

/// Covariance from `d` log-precisions followed by `d(d-1)/2` Fisher-z correlations.
pub fn cov_from_params(re_cov: &[f64], d: usize) -> Result<DMatrix<f64>> {
    let corr = corr_from_params(re_cov, d)?;
    let sd: Vec<f64> = re_cov[..d].iter().map(|s| (-0.5 * s).exp()).collect();
    Ok(DMatrix::from_fn(d, d, |i, j| corr[(i, j)] * sd[i] * sd[j]))
}

/// Correlation matrix implied by the Fisher-z block; rejects infeasible combinations.
pub fn corr_from_params(re_cov: &[f64], d: usize) -> Result<DMatrix<f64>> {
    if re_cov.len() != d + n_corr(d) {
        return Err(Error::Dimension(format!(
            "covariance parameter vector has {} entries, expected {}",
            re_cov.len(),
            d + n_corr(d)
        )));
    }
    if re_cov.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    let mut r = DMatrix::<f64>::identity(d, d);
    for (k, (i, j)) in corr_pairs(d).into_iter().enumerate() {
        let rho = re_cov[d + k].tanh();
        r[(i, j)] = rho;
        r[(j, i)] = rho;
    }
    match r.clone().cholesky() {
        Some(ch) if ch.l().diagonal().iter().all(|x| *x > 1e-10) => Ok(r),
        _ => Err(Error::NotPositiveDefinite),
    }
}

/// Inverse of [`cov_from_params`].
pub fn params_from_cov(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = sigma.nrows();
    if sigma.ncols() != d || d == 0 {
        return Err(Error::Dimension("covariance must be square".to_string()));
    }
    let mut out = Vec::with_capacity(d + n_corr(d));
    for i in 0..d {
        let v = sigma[(i, i)];
        if !(v > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        out.push(-v.ln());
    }
    for (i, j) in corr_pairs(d) {
        let rho = sigma[(i, j)] / (sigma[(i, i)] * sigma[(j, j)]).sqrt();
        if !(rho.abs() < 1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        out.push(rho.atanh());
    }
    Ok(out)
}

/// Hyperparameters `θ`, all on unconstrained scales.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// `log τ_ε`, with `τ_ε = σ_ε⁻²`.
    pub log_prec_eps: f64,
    /// `log τ_λ`, the random-walk precision.
    pub log_prec_rw: f64,
    /// `d` log-precisions of the random effects followed by Fisher-z correlations.
    pub re_cov: Vec<f64>,
    /// Association loadings `(φ_a, φ_b0[, φ_b1])`.
    pub assoc: Vec<f64>,
}

impl HyperParams {
    pub fn dim_for(d: usize) -> usize {
        2 + d + n_corr(d) + d
    }

    pub fn re_dim(&self) -> usize {
        self.assoc.len()
    }

    pub fn len(&self) -> usize {
        Self::dim_for(self.re_dim())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat order: `[log τ_ε, log τ_λ, re log-precisions…, Fisher-z…, φ…]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(self.log_prec_eps);
        v.push(self.log_prec_rw);
        v.extend_from_slice(&self.re_cov);
        v.extend_from_slice(&self.assoc);
        v
    }

    pub fn from_slice(theta: &[f64], d: usize) -> Result<Self> {
        if theta.len() != Self::dim_for(d) {
            return Err(Error::Dimension(format!(
                "hyperparameter vector has {} entries, expected {}",
                theta.len(),
                Self::dim_for(d)
            )));
        }
        let k = d + n_corr(d);
        Ok(Self {
            log_prec_eps: theta[0],
            log_prec_rw: theta[1],
            re_cov: theta[2..2 + k].to_vec(),
            assoc: theta[2 + k..].to_vec(),
        })
    }

    /// Builds θ from natural-scale quantities.
    pub fn from_natural(sigma_eps: f64, sigma_rw: f64, sigma: &DMatrix<f64>, assoc: &[f64]) -> Result<Self> {
        Ok(Self {
            log_prec_eps: -2.0 * sigma_eps.ln(),
            log_prec_rw: -2.0 * sigma_rw.ln(),
            re_cov: params_from_cov(sigma)?,
            assoc: assoc.to_vec(),
        })
    }

    pub fn tau_eps(&self) -> f64 {
        self.log_prec_eps.exp()
    }

    pub fn tau_rw(&self) -> f64 {
        self.log_prec_rw.exp()
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        cov_from_params(&self.re_cov, self.re_dim())
    }

    /// Positional names matching [`HyperParams::to_vec`].
    pub fn names(d: usize) -> Vec<String> {
        let re = ReStructure::InterceptPlusSlope.names();
        let mut v = vec!["log_prec_eps".to_string(), "log_prec_rw".to_string()];
        for name in &re[..d] {
            v.push(format!("log_prec_{name}"));
        }
        for (i, j) in corr_pairs(d) {
            v.push(format!("z_{}_{}", re[i], re[j]));
        }
        for name in &re[..d] {
            v.push(format!("phi_{name}"));
        }
        v
    }
}

/// Penalizing-complexity prior on a precision, set by `P(σ > w) = v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcPrior {
    pub w: f64,
    pub v: f64,
}

impl PcPrior {
    pub fn new(w: f64, v: f64) -> Result<Self> {
        let p = Self { w, v };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::Domain(format!("PC prior scale w = {} must be positive", self.w)));
        }
        if !(self.v > 0.0 && self.v < 1.0) {
            return Err(Error::Domain(format!("PC prior tail v = {} must lie in (0, 1)", self.v)));
        }
        Ok(())
    }

    /// `ρ = -ln(v) / w`.
    pub fn rate(&self) -> f64 {
        -self.v.ln() / self.w
    }
}

impl Default for PcPrior {
    fn default() -> Self {
        Self { w: 1.0, v: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    /// `τ_α = τ_β = τ_γ`, a precision.
    pub fixed_effect_prec: f64,
    /// `τ_φ`, a precision.
    pub assoc_prec: f64,
    /// Prior mean of each association loading.
    pub assoc_mean: f64,
    pub pc_eps: PcPrior,
    pub pc_rw: PcPrior,
    /// One entry per random effect.
    pub pc_re: Vec<PcPrior>,
    /// SD of the Gaussian prior on each Fisher-z correlation.
    pub corr_prior_sd: f64,
}

impl PriorConfig {
    pub fn default_for(d: usize) -> Self {
        Self {
            fixed_effect_prec: 1e-3,
            assoc_prec: 1e-3,
            assoc_mean: 0.0,
            pc_eps: PcPrior::default(),
            pc_rw: PcPrior::default(),
            pc_re: vec![PcPrior::default(); d],
            corr_prior_sd: 1.0,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.fixed_effect_prec > 0.0 && self.assoc_prec > 0.0 && self.corr_prior_sd > 0.0 && self.assoc_mean.is_finite()) {
            return Err(Error::Domain("prior precisions and SDs must be positive".to_string()));
        }
        if self.pc_re.len() != d {
            return Err(Error::Dimension(format!(
                "{} random-effect PC priors for {} random effects",
                self.pc_re.len(),
                d
            )));
        }
        self.pc_eps.validate()?;
        self.pc_rw.validate()?;
        self.pc_re.iter().try_for_each(|p| p.validate())
    }
}

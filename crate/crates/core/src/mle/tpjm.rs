//! The two-part joint model as a Monte-Carlo marginal likelihood.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::fit::theta_start;
use crate::likelihood::{augment_dataset, Coef, ObsKind};
use crate::math::{norm_sf, sigmoid, softplus, LN_2PI};
use crate::mle::objective::{MarginalModel, McObjective};
use crate::mle::optim::{inverse_information, maximize, Criteria, MarquardtOptions};
use crate::model::{corr_pairs, cov_from_params, n_corr, SubjectData, TpjmSpec};
use crate::report::{parameter_labels, reports_coverage, ParamEstimate};

const BINARY: u32 = 1;
const CONTINUOUS: u32 = 2;
const SURVIVAL: u32 = 4;

/// Positions in the parameter vector
/// `[α, β, γ, λ, log τ_ε, log-precisions, Fisher-z, φ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_alpha: usize,
    pub n_beta: usize,
    pub n_gamma: usize,
    pub n_lambda: usize,
    pub re_dim: usize,
}

impl ParamLayout {
    pub fn new(spec: &TpjmSpec) -> Self {
        Self {
            n_alpha: spec.binary_terms.len(),
            n_beta: spec.continuous_terms.len(),
            n_gamma: spec.survival_terms.len(),
            n_lambda: spec.baseline_bins,
            re_dim: spec.re_dim(),
        }
    }

    pub fn alpha(&self, k: usize) -> usize {
        k
    }

    pub fn beta(&self, k: usize) -> usize {
        self.n_alpha + k
    }

    pub fn gamma(&self, k: usize) -> usize {
        self.n_alpha + self.n_beta + k
    }

    pub fn lambda(&self, k: usize) -> usize {
        self.n_alpha + self.n_beta + self.n_gamma + k
    }

    pub fn log_prec_eps(&self) -> usize {
        self.lambda(self.n_lambda)
    }

    /// Start of the covariance block (log-precisions then Fisher-z).
    pub fn re_cov(&self) -> usize {
        self.log_prec_eps() + 1
    }

    pub fn corr(&self, k: usize) -> usize {
        self.re_cov() + self.re_dim + k
    }

    pub fn phi(&self, k: usize) -> usize {
        self.corr(n_corr(self.re_dim)) + k
    }

    pub fn len(&self) -> usize {
        self.phi(self.re_dim)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self, spec: &TpjmSpec) -> Vec<String> {
        let re = spec.re_structure.names();
        let mut v = Vec::with_capacity(self.len());
        v.extend(spec.binary_terms.iter().map(|t| format!("alpha:{}", t.label())));
        v.extend(spec.continuous_terms.iter().map(|t| format!("beta:{}", t.label())));
        v.extend(spec.survival_terms.iter().map(|t| format!("gamma:{}", t.label())));
        v.extend((0..self.n_lambda).map(|k| format!("lambda[{k}]")));
        v.push("log_prec_eps".to_string());
        v.extend(re.iter().map(|n| format!("log_prec_{n}")));
        v.extend(corr_pairs(self.re_dim).into_iter().map(|(i, j)| format!("z_{}_{}", re[i], re[j])));
        v.extend(re.iter().map(|n| format!("phi_{n}")));
        v
    }
}

#[derive(Debug, Clone, Default)]
struct SubjectRows {
    /// Binary design, `n_visits × n_alpha`.
    bin_x: Vec<f64>,
    bin_u: Vec<bool>,
    con_x: Vec<f64>,
    con_y: Vec<f64>,
    /// Coefficient of the random slope in each continuous row.
    con_t: Vec<f64>,
    surv_x: Vec<f64>,
    event: bool,
    event_bin: usize,
    /// `(bin, log exposure)` per segment.
    segments: Vec<(usize, f64)>,
}

/// Per-subject block likelihoods: binary, continuous, survival.
#[derive(Debug, Clone)]
pub struct TpjmMarginal {
    pub spec: TpjmSpec,
    pub layout: ParamLayout,
    subjects: Vec<SubjectRows>,
    masks: Vec<u32>,
}

fn component_mask(k: usize) -> u32 {
    if k == 0 {
        BINARY | SURVIVAL
    } else {
        CONTINUOUS | SURVIVAL
    }
}

impl TpjmMarginal {
    pub fn new(data: &[SubjectData], spec: &TpjmSpec) -> Result<Self> {
        let rows = augment_dataset(data, spec)?;
        let lat = spec.layout(data.len());
        let layout = ParamLayout::new(spec);
        let mut subjects = vec![SubjectRows::default(); data.len()];
        for r in &rows {
            let s = &mut subjects[r.subject];
            let fixed = |range: core::ops::Range<usize>, n: usize| {
                let mut x = vec![0.0; n];
                let mut slope = 0.0;
                for e in &r.entries {
                    if let Coef::Fixed(c) = e.coef {
                        if range.contains(&e.col) {
                            x[e.col - range.start] = c;
                        } else if lat.re_dim == 3 && e.col == lat.re(r.subject, 2) {
                            slope = c;
                        }
                    }
                }
                (x, slope)
            };
            match r.kind {
                ObsKind::Binary => {
                    s.bin_x.extend(fixed(lat.alpha_block(), lat.n_alpha).0);
                    s.bin_u.push(r.response > 0.5);
                }
                ObsKind::Continuous => {
                    let (x, slope) = fixed(lat.beta_block(), lat.n_beta);
                    s.con_x.extend(x);
                    s.con_y.push(r.response);
                    s.con_t.push(slope);
                }
                ObsKind::SurvSegment => {
                    let bin = r.bin.expect("segment bin");
                    if s.segments.is_empty() {
                        s.surv_x = fixed(lat.gamma_block(), lat.n_gamma).0;
                    }
                    if r.response > 0.5 {
                        s.event = true;
                        s.event_bin = bin;
                    }
                    s.segments.push((bin, r.offset));
                }
            }
        }
        let d = layout.re_dim;
        let mut masks = vec![0; layout.len()];
        for k in 0..layout.n_alpha {
            masks[layout.alpha(k)] = BINARY;
        }
        for k in 0..layout.n_beta {
            masks[layout.beta(k)] = CONTINUOUS;
        }
        masks[layout.log_prec_eps()] = CONTINUOUS;
        for k in 0..layout.n_gamma {
            masks[layout.gamma(k)] = SURVIVAL;
        }
        for k in 0..layout.n_lambda {
            masks[layout.lambda(k)] = SURVIVAL;
        }
        for k in 0..d {
            masks[layout.re_cov() + k] = component_mask(k);
            masks[layout.phi(k)] = SURVIVAL;
        }
        // With the lower Cholesky factor of the correlation, pair (i, j)
        // moves every component from j on.
        for (c, (_, j)) in corr_pairs(d).into_iter().enumerate() {
            masks[layout.corr(c)] = (j..d).fold(0, |m, k| m | component_mask(k));
        }
        Ok(Self { spec: spec.clone(), layout, subjects, masks })
    }
}

impl MarginalModel for TpjmMarginal {
    fn n_params(&self) -> usize {
        self.layout.len()
    }

    fn param_names(&self) -> Vec<String> {
        self.layout.names(&self.spec)
    }

    fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    fn re_dim(&self) -> usize {
        self.layout.re_dim
    }

    fn n_blocks(&self) -> usize {
        3
    }

    fn block_mask(&self, p: usize) -> u32 {
        self.masks[p]
    }

    fn is_re_param(&self, p: usize) -> bool {
        (self.layout.re_cov()..self.layout.phi(0)).contains(&p)
    }

    fn re_factor(&self, params: &[f64]) -> Option<DMatrix<f64>> {
        let l = &self.layout;
        let sigma = cov_from_params(&params[l.re_cov()..l.phi(0)], l.re_dim).ok()?;
        let ch = sigma.cholesky()?;
        Some(ch.l())
    }

    fn block_loglik(&self, x: &[f64], i: usize, block: usize, re: &[f64], out: &mut [f64]) {
        let l = &self.layout;
        let s = &self.subjects[i];
        let d = l.re_dim;
        match block {
            0 => {
                let alpha = &x[l.alpha(0)..l.alpha(l.n_alpha)];
                let lin: Vec<f64> = s.bin_x.chunks_exact(l.n_alpha.max(1)).map(|r| r.iter().zip(alpha).map(|(a, b)| a * b).sum()).collect();
                for (o, r) in out.iter_mut().zip(re.chunks_exact(d)) {
                    let a = r[0];
                    let mut v = 0.0;
                    for (eta0, &u) in lin.iter().zip(&s.bin_u) {
                        let eta = eta0 + a;
                        v += if u { eta } else { 0.0 } - softplus(eta);
                    }
                    *o = v;
                }
            }
            1 => {
                let beta = &x[l.beta(0)..l.beta(l.n_beta)];
                let tau = x[l.log_prec_eps()].exp();
                let n = s.con_y.len() as f64;
                let (mut sr, mut srr, mut st, mut stt, mut srt) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (k, (&y, &t)) in s.con_y.iter().zip(&s.con_t).enumerate() {
                    let row = &s.con_x[k * l.n_beta..(k + 1) * l.n_beta];
                    let r = y - row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
                    sr += r;
                    srr += r * r;
                    st += t;
                    stt += t * t;
                    srt += r * t;
                }
                let c = 0.5 * n * (x[l.log_prec_eps()] - LN_2PI);
                for (o, r) in out.iter_mut().zip(re.chunks_exact(d)) {
                    let b0 = r[1];
                    let b1 = if d == 3 { r[2] } else { 0.0 };
                    let ss = srr - 2.0 * b0 * sr - 2.0 * b1 * srt + n * b0 * b0 + 2.0 * b0 * b1 * st + b1 * b1 * stt;
                    *o = c - 0.5 * tau * ss;
                }
            }
            _ => {
                let lin: f64 = s.surv_x.iter().zip(&x[l.gamma(0)..l.gamma(l.n_gamma)]).map(|(a, b)| a * b).sum();
                let h0: f64 = s.segments.iter().map(|&(b, off)| (x[l.lambda(b)] + off).exp()).sum();
                let ev = if s.event { x[l.lambda(s.event_bin)] } else { 0.0 };
                let phi = &x[l.phi(0)..l.phi(d)];
                for (o, r) in out.iter_mut().zip(re.chunks_exact(d)) {
                    let sh: f64 = lin + r.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
                    *o = if s.event { ev + sh } else { 0.0 } - sh.exp() * h0;
                }
            }
        }
    }
}

/// Marginal log-likelihood of the joint model by quasi-Monte-Carlo
/// integration over the random effects.
pub fn mc_marginal_loglik(params: &[f64], data: &[SubjectData], spec: &TpjmSpec, n_points: usize, seed: u64) -> Result<f64> {
    let model = TpjmMarginal::new(data, spec)?;
    let obj = McObjective::new(&model, n_points, seed)?;
    Ok(obj.value(params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOptions {
    pub n_points: usize,
    pub seed: u64,
    pub marquardt: MarquardtOptions,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { n_points: 1000, seed: 1, marquardt: MarquardtOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    /// Present only when the observed information is positive definite.
    pub std_errors: Option<Vec<f64>>,
    /// Inverse observed information, row-major.
    pub covariance: Option<Vec<f64>>,
    pub converged: bool,
    pub criteria: Criteria,
    pub loglik: f64,
    pub iterations: usize,
    pub n_points: usize,
    pub seed: u64,
    /// Wall-clock seconds, filled in by callers that can time.
    pub seconds: f64,
}

impl MleResult {
    pub fn get(&self, name: &str) -> Option<(f64, Option<f64>)> {
        let k = self.names.iter().position(|n| n == name)?;
        Some((self.estimates[k], self.std_errors.as_ref().map(|s| s[k])))
    }

    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let n = self.estimates.len();
        self.covariance.as_ref().map(|c| DMatrix::from_row_slice(n, n, c))
    }
}

/// Marginal fixed-effect fits, occurrence/exposure baseline levels and
/// moment-based variance components.
pub fn mle_start(data: &[SubjectData], spec: &TpjmSpec) -> Result<Vec<f64>> {
    let model = TpjmMarginal::new(data, spec)?;
    let l = model.layout;
    let mut x = vec![0.0; l.len()];
    let (pa, pb) = (l.n_alpha, l.n_beta);
    // Logistic regression without random effects by Newton-Raphson.
    let mut alpha = DVector::<f64>::zeros(pa);
    for _ in 0..50 {
        let mut h = DMatrix::<f64>::identity(pa, pa) * 1e-6;
        let mut g = DVector::<f64>::zeros(pa);
        for s in &model.subjects {
            for (row, &u) in s.bin_x.chunks_exact(pa).zip(&s.bin_u) {
                let eta: f64 = row.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
                let p = sigmoid(eta);
                let w = p * (1.0 - p);
                for a in 0..pa {
                    g[a] += (if u { 1.0 } else { 0.0 } - p) * row[a];
                    for b in 0..pa {
                        h[(a, b)] += w * row[a] * row[b];
                    }
                }
            }
        }
        let step = h.cholesky().ok_or(Error::NotPositiveDefinite)?.solve(&g);
        alpha += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    let mut xtx = DMatrix::<f64>::identity(pb, pb) * 1e-9;
    let mut xty = DVector::<f64>::zeros(pb);
    for s in &model.subjects {
        for (row, &y) in s.con_x.chunks_exact(pb).zip(&s.con_y) {
            for a in 0..pb {
                xty[a] += row[a] * y;
                for b in 0..pb {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
        }
    }
    let beta = xtx.cholesky().ok_or(Error::NotPositiveDefinite)?.solve(&xty);
    for k in 0..pa {
        x[l.alpha(k)] = alpha[k];
    }
    for k in 0..pb {
        x[l.beta(k)] = beta[k];
    }
    let mut events = vec![0.0; l.n_lambda];
    let mut exposure = vec![0.0; l.n_lambda];
    for s in &model.subjects {
        for &(b, off) in &s.segments {
            exposure[b] += off.exp();
        }
        if s.event {
            events[s.event_bin] += 1.0;
        }
    }
    for k in 0..l.n_lambda {
        x[l.lambda(k)] = (f64::max(events[k], 0.5) / exposure[k].max(1e-12)).ln();
    }
    let th = theta_start(data, spec);
    x[l.log_prec_eps()] = th[0];
    x[l.re_cov()] = 0.0;
    x[l.re_cov() + 1] = th[3];
    if l.re_dim == 3 {
        x[l.re_cov() + 2] = 4.0f64.ln();
    }
    Ok(x)
}

/// Maximizes the Monte-Carlo marginal likelihood from `start` (or
/// [`mle_start`] when `None`).
pub fn fit_mle(data: &[SubjectData], spec: &TpjmSpec, start: Option<&[f64]>, opts: &MleOptions) -> Result<MleResult> {
    let model = TpjmMarginal::new(data, spec)?;
    let x0 = match start {
        Some(s) => s.to_vec(),
        None => mle_start(data, spec)?,
    };
    if x0.len() != model.n_params() {
        return Err(Error::Dimension(format!("start has {} entries, model {}", x0.len(), model.n_params())));
    }
    let obj = McObjective::new(&model, opts.n_points, opts.seed)?;
    let r = maximize(&obj, &x0, &opts.marquardt)?;
    let cov = r.hess.as_ref().and_then(inverse_information).filter(|c| (0..c.nrows()).all(|i| c[(i, i)] > 0.0 && c[(i, i)].is_finite()));
    let std_errors = cov.as_ref().map(|c| (0..c.nrows()).map(|i| c[(i, i)].sqrt()).collect());
    let covariance = cov.map(|c| {
        let n = c.nrows();
        (0..n * n).map(|k| c[(k / n, k % n)]).collect()
    });
    Ok(MleResult {
        names: model.param_names(),
        estimates: r.x,
        std_errors,
        covariance,
        converged: r.converged,
        criteria: r.criteria,
        loglik: r.value,
        iterations: r.iterations,
        n_points: opts.n_points,
        seed: opts.seed,
        seconds: 0.0,
    })
}

/// Canonical rows with Wald intervals `est ± 1.96·SE`; variance components
/// and correlations go through the delta method.
pub fn mle_estimates(spec: &TpjmSpec, r: &MleResult) -> Result<Vec<ParamEstimate>> {
    let z = 1.959_963_984_540_054;
    let mut out = Vec::new();
    for label in parameter_labels(spec) {
        let (name, kind) = if label == "sigma_eps" {
            ("log_prec_eps".to_string(), 1)
        } else if let Some(n) = label.strip_prefix("sigma_") {
            (format!("log_prec_{n}"), 1)
        } else if let Some(rest) = label.strip_prefix("rho_") {
            (format!("z_{rest}"), 2)
        } else {
            (label.clone(), 0)
        };
        let (w, se) = r.get(&name).ok_or_else(|| Error::Dimension(format!("no parameter {name}")))?;
        let se = se.unwrap_or(f64::NAN);
        let (est, sd) = match kind {
            1 => {
                let v = (-0.5 * w).exp();
                (v, 0.5 * v * se)
            }
            2 => {
                let v = w.tanh();
                (v, (1.0 - v * v) * se)
            }
            _ => (w, se),
        };
        let p_value = (kind == 0 && sd.is_finite()).then(|| 2.0 * norm_sf((est / sd).abs()));
        out.push(ParamEstimate {
            coverage: reports_coverage(&label),
            label,
            estimate: est,
            sd,
            lower: est - z * sd,
            upper: est + z * sd,
            p_value,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::AugmentedObservation;
    use crate::model::{build_spec, ModelConfig, ReStructure};
    use crate::simgen::{generate_dataset, ScenarioConfig};

    fn small(scenario: u8, n: usize) -> (Vec<SubjectData>, TpjmSpec) {
        let mut cfg = ScenarioConfig::scenario(scenario, 17).unwrap();
        cfg.n = n;
        let spec = build_spec(&ModelConfig::scenario(cfg.re_structure), &["trt"]).unwrap();
        (generate_dataset(&cfg).unwrap(), spec)
    }

    fn point(model: &TpjmMarginal, data: &[SubjectData], spec: &TpjmSpec) -> Vec<f64> {
        let mut x = mle_start(data, spec).unwrap();
        let l = model.layout;
        for k in 0..l.re_dim {
            x[l.phi(k)] = 0.4 + 0.1 * k as f64;
        }
        for c in 0..n_corr(l.re_dim) {
            x[l.corr(c)] = 0.3 - 0.2 * c as f64;
        }
        x[l.gamma(0)] = 0.15;
        x
    }

    #[test]
    fn cached_derivatives_match_plain_differences() {
        let (data, spec) = small(2, 12);
        let model = TpjmMarginal::new(&data, &spec).unwrap();
        let obj = McObjective::new(&model, 40, 3).unwrap();
        let x = point(&model, &data, &spec);
        let der = obj.derivatives(&x).unwrap();
        let h = obj.steps(&x);
        let f = |y: &[f64]| obj.value(y);
        let f0 = f(&x);
        assert!((der.value - f0).abs() < 1e-9 * f0.abs());
        let p = x.len();
        let shift = |pairs: &[(usize, f64)]| {
            let mut y = x.clone();
            for &(j, s) in pairs {
                y[j] += s;
            }
            y
        };
        for a in 0..p {
            let fp = f(&shift(&[(a, h[a])]));
            let fm = f(&shift(&[(a, -h[a])]));
            let g = (fp - fm) / (2.0 * h[a]);
            assert!((der.grad[a] - g).abs() < 1e-5 * (1.0 + g.abs()), "grad {a}: {} vs {g}", der.grad[a]);
            let hd = (fp - 2.0 * f0 + fm) / (h[a] * h[a]);
            assert!((der.hess[(a, a)] - hd).abs() < 1e-4 * (1.0 + hd.abs()), "diag {a}");
            for b in a + 1..p {
                let fb = f(&shift(&[(b, h[b])]));
                let fab = f(&shift(&[(a, h[a]), (b, h[b])]));
                let hab = (fab - fp - fb + f0) / (h[a] * h[b]);
                assert!((der.hess[(a, b)] - hab).abs() < 1e-4 * (1.0 + hab.abs()), "({a},{b}): {} vs {hab}", der.hess[(a, b)]);
                assert_eq!(der.hess[(a, b)], der.hess[(b, a)]);
            }
        }
    }

    fn no_re_loglik(rows: &[AugmentedObservation], x: &[f64], l: &ParamLayout, lat: &crate::model::LatentLayout) -> f64 {
        rows.iter()
            .map(|r| {
                let eta: f64 = r
                    .entries
                    .iter()
                    .map(|e| match e.coef {
                        Coef::Fixed(c) if lat.alpha_block().contains(&e.col) => c * x[l.alpha(e.col - lat.alpha_block().start)],
                        Coef::Fixed(c) if lat.beta_block().contains(&e.col) => c * x[l.beta(e.col - lat.beta_block().start)],
                        Coef::Fixed(c) if lat.gamma_block().contains(&e.col) => c * x[l.gamma(e.col - lat.gamma_block().start)],
                        Coef::Fixed(c) if lat.lambda_block().contains(&e.col) => c * x[l.lambda(e.col - lat.lambda_block().start)],
                        _ => 0.0,
                    })
                    .sum();
                r.loglik(eta, x[l.log_prec_eps()].exp()).value
            })
            .sum()
    }

    #[test]
    fn vanishing_random_effects_give_the_fixed_effect_likelihood() {
        let (data, spec) = small(1, 30);
        let model = TpjmMarginal::new(&data, &spec).unwrap();
        let l = model.layout;
        let mut x = point(&model, &data, &spec);
        for k in 0..l.re_dim {
            x[l.phi(k)] = 0.0;
            x[l.re_cov() + k] = -2.0 * 1e-6f64.ln();
        }
        let want = no_re_loglik(&augment_dataset(&data, &spec).unwrap(), &x, &l, &spec.layout(data.len()));
        let got = mc_marginal_loglik(&x, &data, &spec, 100, 1).unwrap();
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }

    #[test]
    fn deterministic_given_seed_and_infeasible_covariance() {
        let (data, spec) = small(2, 10);
        let model = TpjmMarginal::new(&data, &spec).unwrap();
        let x = point(&model, &data, &spec);
        let a = mc_marginal_loglik(&x, &data, &spec, 50, 9).unwrap();
        assert_eq!(a.to_bits(), mc_marginal_loglik(&x, &data, &spec, 50, 9).unwrap().to_bits());
        let mut bad = x.clone();
        let l = model.layout;
        bad[l.corr(0)] = 3.0;
        bad[l.corr(1)] = 3.0;
        bad[l.corr(2)] = -3.0;
        assert_eq!(mc_marginal_loglik(&bad, &data, &spec, 50, 9).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn correlation_masks_follow_the_factor() {
        let (data, spec) = small(2, 5);
        let m = TpjmMarginal::new(&data, &spec).unwrap();
        let l = m.layout;
        assert_eq!(m.block_mask(l.re_cov()), BINARY | SURVIVAL);
        assert_eq!(m.block_mask(l.corr(0)), CONTINUOUS | SURVIVAL);
        assert_eq!(m.block_mask(l.corr(2)), CONTINUOUS | SURVIVAL);
        assert_eq!(m.block_mask(l.alpha(0)), BINARY);
        assert!(m.is_re_param(l.corr(2)) && !m.is_re_param(l.phi(0)));
        assert_eq!(ParamLayout::new(&spec).len(), m.param_names().len());
        let _ = ReStructure::InterceptsOnly;
    }

    #[test]
    fn degenerate_start_does_not_crash() {
        let (data, spec) = small(1, 40);
        let mut x = mle_start(&data, &spec).unwrap();
        let l = ParamLayout::new(&spec);
        for k in 0..l.re_dim {
            x[l.re_cov() + k] = -2.0 * 1e-4f64.ln();
        }
        let opts = MleOptions { n_points: 50, seed: 2, marquardt: MarquardtOptions { max_iter: 30, ..Default::default() } };
        let r = fit_mle(&data, &spec, Some(&x), &opts).unwrap();
        assert!(r.loglik.is_finite());
        assert_eq!(r.estimates.len(), l.len());
    }
}

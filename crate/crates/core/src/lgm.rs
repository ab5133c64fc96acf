//! Latent Gaussian model assembly: the prior precision `Q(θ)`, the
//! observation matrix `A(θ)` mapping the latent field to linear predictors,
//! and the hyperparameter priors.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::likelihood::{augment_dataset, AugmentedObservation, Coef, KernelEval, ObsKind};
use crate::math::LN_2PI;
use crate::model::{n_corr, HyperParams, LatentLayout, PcPrior, PriorConfig, SubjectData, TpjmSpec};
use crate::sparse::{CholeskySymbolic, SymCsc};

/// Diagonal anchor added to the random-walk block to make it proper.
pub const RW_ANCHOR: f64 = 1e-5;

/// Scale on which a hyperparameter is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Log-precision to standard deviation, `exp(-s/2)`.
    LogPrecToSd,
    /// Fisher-z to correlation.
    Tanh,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::LogPrecToSd => (-0.5 * x).exp(),
            Transform::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::LogPrecToSd => -0.5 * (-0.5 * x).exp(),
            Transform::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

/// Sparse observation matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl ObservationMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        (&self.col_idx[s..e], &self.values[s..e])
    }

    /// `η = A u`.
    pub fn mul_vec(&self, u: &[f64], eta: &mut [f64]) {
        for (r, out) in eta.iter_mut().enumerate() {
            let (c, v) = self.row(r);
            *out = c.iter().zip(v).map(|(&c, &v)| v * u[c]).sum();
        }
    }

    /// `out += Aᵀ w`.
    pub fn add_tmul_vec(&self, w: &[f64], out: &mut [f64]) {
        for (r, &wr) in w.iter().enumerate() {
            let (c, v) = self.row(r);
            for (&c, &v) in c.iter().zip(v) {
                out[c] += v * wr;
            }
        }
    }
}

/// A latent Gaussian model `u | θ ~ N(0, Q(θ)⁻¹)`, `η = A(θ) u`, with
/// conditionally independent observations given `η`.
///
/// The sparsity patterns of `Q` and `A` must not depend on `θ`.
pub trait LatentGaussianModel {
    fn n_latent(&self) -> usize;
    fn theta_dim(&self) -> usize;
    fn theta_names(&self) -> Vec<String>;
    fn theta_transform(&self, j: usize) -> Transform;
    /// Prior precision and its log determinant.
    fn precision(&self, theta: &[f64]) -> Result<(SymCsc, f64)>;
    fn observation_matrix(&self, theta: &[f64]) -> Result<ObservationMatrix>;
    /// Fills `out[r]` with the log-likelihood kernel of row `r` at `eta[r]`.
    fn loglik(&self, theta: &[f64], eta: &[f64], out: &mut [KernelEval]);
    /// Log prior density of each hyperparameter on its working scale.
    fn log_prior_terms(&self, theta: &[f64]) -> Result<Vec<f64>>;
    fn latent_names(&self) -> Vec<String> {
        (0..self.n_latent()).map(|i| format!("u[{i}]")).collect()
    }
}

/// Log density of the PC prior on a precision `τ`:
/// `log(ρ/2) - 1.5 log τ - ρ τ^{-1/2}` with `ρ = -ln(v)/w`.
pub fn pc_prec_logdensity(tau: f64, prior: PcPrior) -> Result<f64> {
    prior.validate()?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("precision {tau} must be positive")));
    }
    let rho = prior.rate();
    Ok((0.5 * rho).ln() - 1.5 * tau.ln() - rho / tau.sqrt())
}

/// PC prior density for `s = log τ`, including the Jacobian `τ`.
pub fn pc_log_prec_logdensity(log_tau: f64, prior: PcPrior) -> Result<f64> {
    if !log_tau.is_finite() {
        return Err(Error::Domain(format!("log precision {log_tau} must be finite")));
    }
    Ok(pc_prec_logdensity(log_tau.exp(), prior)? + log_tau)
}

/// `log N(x | 0, 1/prec)`.
pub fn gaussian_logdensity(x: f64, prec: f64) -> f64 {
    0.5 * (prec.ln() - LN_2PI) - 0.5 * prec * x * x
}

/// Prior log density of each entry of `θ`, in `HyperParams::to_vec` order.
pub fn log_prior_terms(theta: &HyperParams, priors: &PriorConfig) -> Result<Vec<f64>> {
    let d = theta.re_dim();
    priors.validate(d)?;
    let mut out = Vec::with_capacity(theta.len());
    out.push(pc_log_prec_logdensity(theta.log_prec_eps, priors.pc_eps)?);
    out.push(pc_log_prec_logdensity(theta.log_prec_rw, priors.pc_rw)?);
    for k in 0..d {
        out.push(pc_log_prec_logdensity(theta.re_cov[k], priors.pc_re[k])?);
    }
    let zprec = priors.corr_prior_sd.powi(-2);
    for &z in &theta.re_cov[d..] {
        out.push(gaussian_logdensity(z, zprec));
    }
    for &phi in &theta.assoc {
        out.push(gaussian_logdensity(phi - priors.assoc_mean, priors.assoc_prec));
    }
    Ok(out)
}

/// Sum of [`log_prior_terms`].
pub fn log_prior_theta(theta: &HyperParams, priors: &PriorConfig) -> Result<f64> {
    Ok(log_prior_terms(theta, priors)?.iter().sum())
}

/// `Dᵀ D` for the order-`k` difference operator on `m` coefficients.
pub fn rw_structure(m: usize, order: usize) -> DMatrix<f64> {
    let stencil: &[f64] = if order == 1 { &[-1.0, 1.0] } else { &[1.0, -2.0, 1.0] };
    let rows = m.saturating_sub(order);
    let mut d = DMatrix::zeros(rows, m);
    for r in 0..rows {
        for (k, &s) in stencil.iter().enumerate() {
            d[(r, r + k)] = s;
        }
    }
    d.transpose() * d
}

/// The assembled prior precision of the TPJM latent field.
#[derive(Debug, Clone)]
pub struct PrecisionStructure {
    pub q: SymCsc,
    pub log_det: f64,
    /// The `d × d` block `Σ⁻¹` shared by all subjects.
    pub re_block: DMatrix<f64>,
}

fn q_triplets(theta: &HyperParams, spec: &TpjmSpec, priors: &PriorConfig, n: usize) -> Result<(Vec<(usize, usize, f64)>, DMatrix<f64>)> {
    let layout = spec.layout(n);
    let d = layout.re_dim;
    if theta.re_dim() != d {
        return Err(Error::Dimension(format!(
            "hyperparameters carry {} random effects, model has {d}",
            theta.re_dim()
        )));
    }
    let sigma = theta.covariance()?;
    let qab = sigma.try_inverse().ok_or(Error::NotPositiveDefinite)?;
    let mut t = Vec::with_capacity(n * d * (d + 1) / 2 + layout.len() + 3 * layout.n_lambda);
    for i in 0..n {
        for a in 0..d {
            for b in a..d {
                t.push((layout.re(i, a), layout.re(i, b), qab[(a, b)]));
            }
        }
    }
    for c in layout.alpha_block().start..layout.gamma_block().end {
        t.push((c, c, priors.fixed_effect_prec));
    }
    let m = layout.n_lambda;
    let s = layout.lambda_block().start;
    let rw = rw_structure(m, spec.rw_order.order());
    let tau = theta.tau_rw();
    for a in 0..m {
        for b in a..m.min(a + spec.rw_order.order() + 1) {
            let v = tau * rw[(a, b)] + if a == b { RW_ANCHOR } else { 0.0 };
            t.push((s + a, s + b, v));
        }
    }
    Ok((t, qab))
}

/// Builds `Q(θ)`: `n` copies of `Σ⁻¹`, `τ_fixed I` on the fixed effects, and
/// `τ_λ DᵀD + ε I` on the log-hazard levels.
pub fn assemble_q(theta: &HyperParams, spec: &TpjmSpec, priors: &PriorConfig, n: usize) -> Result<PrecisionStructure> {
    let (t, re_block) = q_triplets(theta, spec, priors, n)?;
    let q = SymCsc::from_triplets(spec.layout(n).len(), &t)?;
    let f = CholeskySymbolic::analyze(&q).factor(&q)?;
    Ok(PrecisionStructure { log_det: f.log_det(), q, re_block })
}

/// Resolves row coefficients against the association loadings.
pub fn assemble_a(aug: &[AugmentedObservation], layout: &LatentLayout, assoc: &[f64]) -> Result<ObservationMatrix> {
    let n_cols = layout.len();
    let mut row_ptr = Vec::with_capacity(aug.len() + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for row in aug {
        for e in &row.entries {
            if e.col >= n_cols {
                return Err(Error::IndexOutOfRange { index: e.col, len: n_cols });
            }
            col_idx.push(e.col);
            values.push(match e.coef {
                Coef::Fixed(v) => v,
                Coef::Assoc(k) => *assoc.get(k).ok_or(Error::IndexOutOfRange { index: k, len: assoc.len() })?,
            });
        }
        row_ptr.push(col_idx.len());
    }
    Ok(ObservationMatrix { n_cols, row_ptr, col_idx, values })
}

/// Which parts of the joint model contribute likelihood rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parts {
    pub binary: bool,
    pub continuous: bool,
    pub survival: bool,
}

impl Parts {
    pub const ALL: Parts = Parts { binary: true, continuous: true, survival: true };

    fn keeps(&self, k: ObsKind) -> bool {
        match k {
            ObsKind::Binary => self.binary,
            ObsKind::Continuous => self.continuous,
            ObsKind::SurvSegment => self.survival,
        }
    }
}

/// The two-part joint model as a latent Gaussian model.
#[derive(Debug, Clone)]
pub struct TpjmLgm {
    pub spec: TpjmSpec,
    pub priors: PriorConfig,
    pub layout: LatentLayout,
    pub rows: Vec<AugmentedObservation>,
    pub subject_ids: Vec<u64>,
    q_symbolic: CholeskySymbolic,
    q_pattern: SymCsc,
}

impl TpjmLgm {
    pub fn new(data: &[SubjectData], spec: &TpjmSpec, priors: &PriorConfig, parts: Parts) -> Result<Self> {
        priors.validate(spec.re_dim())?;
        if data.is_empty() {
            return Err(Error::InvalidSpec("no subjects".into()));
        }
        let rows: Vec<_> = augment_dataset(data, spec)?.into_iter().filter(|r| parts.keeps(r.kind)).collect();
        let n = data.len();
        let d = spec.re_dim();
        let probe = HyperParams { log_prec_eps: 0.0, log_prec_rw: 0.0, re_cov: vec![0.0; d + n_corr(d)], assoc: vec![0.0; d] };
        let (t, _) = q_triplets(&probe, spec, priors, n)?;
        let q_pattern = SymCsc::from_triplets(spec.layout(n).len(), &t)?;
        Ok(Self {
            spec: spec.clone(),
            priors: priors.clone(),
            layout: spec.layout(n),
            rows,
            subject_ids: data.iter().map(|s| s.id).collect(),
            q_symbolic: CholeskySymbolic::analyze(&q_pattern),
            q_pattern,
        })
    }

    pub fn hyper(&self, theta: &[f64]) -> Result<HyperParams> {
        HyperParams::from_slice(theta, self.spec.re_dim())
    }
}

impl LatentGaussianModel for TpjmLgm {
    fn n_latent(&self) -> usize {
        self.layout.len()
    }

    fn theta_dim(&self) -> usize {
        HyperParams::dim_for(self.spec.re_dim())
    }

    fn theta_names(&self) -> Vec<String> {
        HyperParams::names(self.spec.re_dim())
    }

    fn theta_transform(&self, j: usize) -> Transform {
        let d = self.spec.re_dim();
        if j < 2 + d {
            Transform::LogPrecToSd
        } else if j < 2 + d + n_corr(d) {
            Transform::Tanh
        } else {
            Transform::Identity
        }
    }

    fn precision(&self, theta: &[f64]) -> Result<(SymCsc, f64)> {
        let h = self.hyper(theta)?;
        let (t, _) = q_triplets(&h, &self.spec, &self.priors, self.layout.n_subjects)?;
        let q = SymCsc::from_triplets(self.layout.len(), &t)?;
        debug_assert!(q.same_pattern(&self.q_pattern));
        let f = self.q_symbolic.factor(&q)?;
        Ok((q, f.log_det()))
    }

    fn observation_matrix(&self, theta: &[f64]) -> Result<ObservationMatrix> {
        let h = self.hyper(theta)?;
        assemble_a(&self.rows, &self.layout, &h.assoc)
    }

    fn loglik(&self, theta: &[f64], eta: &[f64], out: &mut [KernelEval]) {
        let tau = theta[0].exp();
        for ((o, row), &e) in out.iter_mut().zip(&self.rows).zip(eta) {
            *o = row.loglik(e, tau);
        }
    }

    fn log_prior_terms(&self, theta: &[f64]) -> Result<Vec<f64>> {
        log_prior_terms(&self.hyper(theta)?, &self.priors)
    }

    fn latent_names(&self) -> Vec<String> {
        let re = self.spec.re_structure.names();
        let mut v = Vec::with_capacity(self.n_latent());
        for &id in &self.subject_ids {
            for name in re {
                v.push(format!("{name}[{id}]"));
            }
        }
        for t in &self.spec.binary_terms {
            v.push(format!("alpha:{}", t.label()));
        }
        for t in &self.spec.continuous_terms {
            v.push(format!("beta:{}", t.label()));
        }
        for t in &self.spec.survival_terms {
            v.push(format!("gamma:{}", t.label()));
        }
        for k in 0..self.layout.n_lambda {
            v.push(format!("lambda[{k}]"));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_spec, ModelConfig, ReStructure, VisitRecord};
    use alloc::collections::BTreeMap;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn spec(re: ReStructure, bins: usize, rw: usize) -> TpjmSpec {
        let mut c = ModelConfig::scenario(re);
        c.baseline_bins = bins;
        c.rw_order = rw;
        build_spec(&c, &["trt"]).unwrap()
    }

    fn theta_identity(d: usize) -> HyperParams {
        HyperParams { log_prec_eps: 0.0, log_prec_rw: 0.0, re_cov: vec![0.0; d + n_corr(d)], assoc: vec![1.0; d] }
    }

    fn toy_data(n: usize, seed: u64) -> Vec<SubjectData> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let t: f64 = 0.3 + 3.6 * rng.random::<f64>();
                let visits = (0..5)
                    .filter(|k| (*k as f64) * 0.5 < t)
                    .map(|k| VisitRecord { time: k as f64 * 0.5, value: if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() * 5.0 + 0.1 } })
                    .collect();
                let mut cov = BTreeMap::new();
                cov.insert("trt".to_string(), (i % 2) as f64);
                SubjectData::new(i as u64 + 1, visits, t, rng.random::<bool>(), cov).unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_covariance_gives_identity_blocks() {
        let s = spec(ReStructure::InterceptsOnly, 15, 2);
        let p = assemble_q(&theta_identity(2), &s, &PriorConfig::default_for(2), 2).unwrap();
        let q = p.q.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(q[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn scenario_one_re_block() {
        let s = spec(ReStructure::InterceptsOnly, 15, 2);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.25]);
        let th = HyperParams::from_natural(0.3, 1.0, &sigma, &[1.0, 1.0]).unwrap();
        let p = assemble_q(&th, &s, &PriorConfig::default_for(2), 3).unwrap();
        // 2x2 inverse: (1/det) [[d, -b], [-b, a]], det = 0.25 - 0.0625
        let det = 1.0 * 0.25 - 0.25 * 0.25;
        let want = [0.25 / det, -0.25 / det, 1.0 / det];
        assert!((want[0] - 4.0 / 3.0).abs() < 1e-12 && (want[2] - 16.0 / 3.0).abs() < 1e-12);
        for i in 0..3 {
            let (r0, r1) = (2 * i, 2 * i + 1);
            assert!((p.q.get(r0, r0) - want[0]).abs() < 1e-10);
            assert!((p.q.get(r0, r1) - want[1]).abs() < 1e-10);
            assert!((p.q.get(r1, r1) - want[2]).abs() < 1e-10);
        }
    }

    #[test]
    fn rw1_block_is_tridiagonal() {
        let s = spec(ReStructure::InterceptsOnly, 4, 1);
        let p = assemble_q(&theta_identity(2), &s, &PriorConfig::default_for(2), 1).unwrap();
        let q = p.q.to_dense();
        let lam = s.layout(1).lambda_block().start;
        let want = [[1.0, -1.0, 0.0, 0.0], [-1.0, 2.0, -1.0, 0.0], [0.0, -1.0, 2.0, -1.0], [0.0, 0.0, -1.0, 1.0]];
        for a in 0..4 {
            for b in 0..4 {
                let w = want[a][b] + if a == b { RW_ANCHOR } else { 0.0 };
                assert!((q[(lam + a, lam + b)] - w).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rw2_structure_has_rank_deficiency_two() {
        let k = rw_structure(10, 2);
        let eig = k.symmetric_eigen().eigenvalues;
        assert_eq!(eig.iter().filter(|e| e.abs() < 1e-10).count(), 2);
    }

    #[test]
    fn log_det_matches_dense() {
        let s = spec(ReStructure::InterceptPlusSlope, 6, 2);
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.25, 0.25, 0.25, 0.25, -0.05, 0.25, -0.05, 0.25]);
        let th = HyperParams::from_natural(0.3, 0.5, &sigma, &[1.0, 1.0, 1.0]).unwrap();
        let p = assemble_q(&th, &s, &PriorConfig::default_for(3), 4).unwrap();
        let dense = p.q.to_dense();
        let ld: f64 = dense.cholesky().unwrap().l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
        assert!((p.log_det - ld).abs() < 1e-9);
    }

    #[test]
    fn rejects_infeasible_correlations() {
        let s = spec(ReStructure::InterceptPlusSlope, 6, 2);
        let mut th = theta_identity(3);
        th.re_cov[3] = 3.0;
        th.re_cov[4] = 3.0;
        th.re_cov[5] = -3.0;
        let e = assemble_q(&th, &s, &PriorConfig::default_for(3), 2).unwrap_err();
        assert_eq!(e, Error::NotPositiveDefinite);
    }

    #[test]
    fn survival_row_carries_loadings() {
        let s = spec(ReStructure::InterceptPlusSlope, 4, 2);
        let data = toy_data(3, 1);
        let aug = augment_dataset(&data, &s).unwrap();
        let layout = s.layout(3);
        let a = assemble_a(&aug, &layout, &[0.7, 1.1, -0.4]).unwrap();
        let r = aug.iter().position(|r| r.kind == ObsKind::SurvSegment && r.subject == 1).unwrap();
        let (cols, vals) = a.row(r);
        assert_eq!(&cols[..3], &[layout.re(1, 0), layout.re(1, 1), layout.re(1, 2)]);
        assert_eq!(&vals[..3], &[0.7, 1.1, -0.4]);
        assert_eq!(vals[3], 1.0); // trt for the second subject
        assert_eq!(*vals.last().unwrap(), 1.0);
        assert!(layout.lambda_block().contains(cols.last().unwrap()));
    }

    #[test]
    fn zero_loadings_decouple_survival() {
        let s = spec(ReStructure::InterceptsOnly, 4, 2);
        let data = toy_data(4, 2);
        let aug = augment_dataset(&data, &s).unwrap();
        let a = assemble_a(&aug, &s.layout(4), &[0.0, 0.0]).unwrap();
        for (r, row) in aug.iter().enumerate() {
            if row.kind == ObsKind::SurvSegment {
                let (c, v) = a.row(r);
                for (c, v) in c.iter().zip(v) {
                    if s.layout(4).re_block().contains(c) {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn phi_prior_term() {
        let th = HyperParams { log_prec_eps: 0.0, log_prec_rw: 0.0, re_cov: vec![0.0; 3], assoc: vec![1.0, 0.0] };
        let t = log_prior_terms(&th, &PriorConfig::default_for(2)).unwrap();
        let want = -0.5 * (2.0 * core::f64::consts::PI * 1000.0).ln() - 1.0 / 2000.0;
        assert!((t[5] - want).abs() < 1e-14);
    }

    #[test]
    fn terms_are_separable() {
        let pr = PriorConfig::default_for(2);
        let a = HyperParams { log_prec_eps: 1.0, log_prec_rw: 2.0, re_cov: vec![0.5, 0.1, 0.2], assoc: vec![1.0, 0.5] };
        let mut b = a.clone();
        b.log_prec_rw += 10f64.ln();
        let ta = log_prior_terms(&a, &pr).unwrap();
        let tb = log_prior_terms(&b, &pr).unwrap();
        for k in 0..ta.len() {
            assert_eq!(ta[k] == tb[k], k != 1);
        }
    }

    #[test]
    fn pc_rate_unit() {
        let p = PcPrior::new(1.0, (-1.0f64).exp()).unwrap();
        assert!((p.rate() - 1.0).abs() < 1e-15);
        assert!(pc_prec_logdensity(0.0, p).is_err());
        assert!(pc_prec_logdensity(1.0, PcPrior { w: 1.0, v: 1.5 }).is_err());
    }

    proptest! {
        #[test]
        fn jacobian_in_log_scale(s in -5.0f64..5.0, w in 0.1f64..3.0, v in 0.01f64..0.5) {
            let p = PcPrior::new(w, v).unwrap();
            let lhs = pc_log_prec_logdensity(s, p).unwrap().exp();
            let rhs = pc_prec_logdensity(s.exp(), p).unwrap().exp() * s.exp();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }

        #[test]
        fn a_times_u_reproduces_predictors(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let s = spec(ReStructure::InterceptPlusSlope, 5, 2);
            let data = toy_data(6, seed);
            let layout = s.layout(6);
            let aug = augment_dataset(&data, &s).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 1000);
            let phi = [rng.random::<f64>(), rng.random::<f64>(), -rng.random::<f64>()];
            let a = assemble_a(&aug, &layout, &phi).unwrap();
            let u: Vec<f64> = (0..layout.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let mut eta = vec![0.0; aug.len()];
            a.mul_vec(&u, &mut eta);
            let al = &u[layout.alpha_block()];
            let be = &u[layout.beta_block()];
            let ga = &u[layout.gamma_block()];
            let la = &u[layout.lambda_block()];
            let edges = s.bin_edges();
            let mut r = 0;
            for (i, subj) in data.iter().enumerate() {
                let trt = subj.covariates["trt"];
                let re = &u[layout.re(i, 0)..layout.re(i, 0) + 3];
                for v in &subj.visits {
                    let direct = al[0] + al[1] * v.time + al[2] * trt + al[3] * v.time * trt + re[0];
                    prop_assert!((eta[r] - direct).abs() < 1e-12);
                    r += 1;
                }
                for v in subj.visits.iter().filter(|v| v.is_positive()) {
                    let direct = be[0] + be[1] * v.time + be[2] * trt + be[3] * v.time * trt + re[1] + re[2] * v.time;
                    prop_assert!((eta[r] - direct).abs() < 1e-12);
                    r += 1;
                }
                for (bin, _) in crate::likelihood::bin_exposures(subj.surv_time, &edges) {
                    let direct = la[bin] + ga[0] * trt + phi[0] * re[0] + phi[1] * re[1] + phi[2] * re[2];
                    prop_assert!((eta[r] - direct).abs() < 1e-12);
                    r += 1;
                }
            }
            prop_assert_eq!(r, aug.len());
        }

        #[test]
        fn subject_permutation_permutes_blocks(seed in 0u64..50) {
            use rand::{Rng, SeedableRng};
            let s = spec(ReStructure::InterceptsOnly, 5, 2);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let th = HyperParams { log_prec_eps: 0.0, log_prec_rw: rng.random::<f64>(), re_cov: vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() - 0.5], assoc: vec![1.0, 1.0] };
            let q = assemble_q(&th, &s, &PriorConfig::default_for(2), 5).unwrap().q;
            for i in 1..5 {
                for a in 0..2 {
                    for b in 0..2 {
                        prop_assert_eq!(q.get(2 * i + a, 2 * i + b), q.get(a, b));
                    }
                }
                prop_assert_eq!(q.get(0, 2 * i), 0.0);
            }
        }
    }
}

//! Random-intercept generalized linear mixed model, small enough for
//! quadrature oracles. One hyperparameter: the log precision of the intercept.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::lgm::{pc_log_prec_logdensity, LatentGaussianModel, ObservationMatrix, Transform};
use crate::likelihood::{binary_loglik, gaussian_loglik, KernelEval};
use crate::mle::MarginalModel;
use crate::model::PcPrior;
use crate::sparse::SymCsc;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Bernoulli,
    /// Gaussian response with known residual precision.
    Gaussian { tau: f64 },
}

impl Family {
    #[inline]
    pub fn kernel(self, eta: f64, y: f64) -> KernelEval {
        match self {
            Family::Bernoulli => binary_loglik(eta, y > 0.5),
            Family::Gaussian { tau } => gaussian_loglik(eta, y, tau),
        }
    }
}

/// `y_ij | a_i ~ F(x_ijᵀβ + a_i)`, `a_i ~ N(0, 1/τ_a)`, `β ~ N(0, I/τ_β)`.
///
/// Latent field `(a_1, …, a_n, β)`; for the marginal likelihood the parameters
/// are `(β, log τ_a)`.
#[derive(Debug, Clone)]
pub struct RandomInterceptGlmm {
    pub family: Family,
    pub n_subjects: usize,
    /// Row-major `n_obs × p` design.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub subject: Vec<usize>,
    pub p: usize,
    pub fixed_prec: f64,
    pub prior: PcPrior,
    by_subject: Vec<Vec<usize>>,
}

impl RandomInterceptGlmm {
    pub fn new(family: Family, n_subjects: usize, x: Vec<f64>, p: usize, y: Vec<f64>, subject: Vec<usize>, fixed_prec: f64, prior: PcPrior) -> Result<Self> {
        if x.len() != y.len() * p || subject.len() != y.len() {
            return Err(Error::Dimension(format!("{} design entries, {} responses, {} subject indices, p = {p}", x.len(), y.len(), subject.len())));
        }
        if let Some(&s) = subject.iter().find(|&&s| s >= n_subjects) {
            return Err(Error::IndexOutOfRange { index: s, len: n_subjects });
        }
        if !(fixed_prec > 0.0) {
            return Err(Error::Domain("fixed-effect prior precision must be positive".into()));
        }
        prior.validate()?;
        let mut by_subject = vec![Vec::new(); n_subjects];
        for (r, &s) in subject.iter().enumerate() {
            by_subject[s].push(r);
        }
        Ok(Self { family, n_subjects, x, y, subject, p, fixed_prec, prior, by_subject })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.x[r * self.p..(r + 1) * self.p]
    }

    /// Rows of subject `i`.
    pub fn rows_of(&self, i: usize) -> &[usize] {
        &self.by_subject[i]
    }
}

impl LatentGaussianModel for RandomInterceptGlmm {
    fn n_latent(&self) -> usize {
        self.n_subjects + self.p
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn theta_names(&self) -> Vec<String> {
        vec!["log_prec_a".to_string()]
    }

    fn theta_transform(&self, _j: usize) -> Transform {
        Transform::LogPrecToSd
    }

    fn precision(&self, theta: &[f64]) -> Result<(SymCsc, f64)> {
        let tau = theta[0].exp();
        let n = self.n_latent();
        let trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, if i < self.n_subjects { tau } else { self.fixed_prec })).collect();
        let q = SymCsc::from_triplets(n, &trip)?;
        Ok((q, self.n_subjects as f64 * theta[0] + self.p as f64 * self.fixed_prec.ln()))
    }

    fn observation_matrix(&self, _theta: &[f64]) -> Result<ObservationMatrix> {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.n_obs() {
            col_idx.push(self.subject[r]);
            values.push(1.0);
            for (k, &v) in self.row(r).iter().enumerate() {
                col_idx.push(self.n_subjects + k);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(ObservationMatrix { n_cols: self.n_latent(), row_ptr, col_idx, values })
    }

    fn loglik(&self, _theta: &[f64], eta: &[f64], out: &mut [KernelEval]) {
        for ((o, &e), &y) in out.iter_mut().zip(eta).zip(&self.y) {
            *o = self.family.kernel(e, y);
        }
    }

    fn log_prior_terms(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![pc_log_prec_logdensity(theta[0], self.prior)?])
    }

    fn latent_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (0..self.n_subjects).map(|i| format!("a[{i}]")).collect();
        v.extend((0..self.p).map(|k| format!("beta[{k}]")));
        v
    }
}

impl MarginalModel for RandomInterceptGlmm {
    fn n_params(&self) -> usize {
        self.p + 1
    }

    fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = (0..self.p).map(|k| format!("beta[{k}]")).collect();
        v.push("log_prec_a".to_string());
        v
    }

    fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    fn re_dim(&self) -> usize {
        1
    }

    fn n_blocks(&self) -> usize {
        1
    }

    fn block_mask(&self, _p: usize) -> u32 {
        1
    }

    fn is_re_param(&self, p: usize) -> bool {
        p == self.p
    }

    fn re_factor(&self, params: &[f64]) -> Option<DMatrix<f64>> {
        let s = (-0.5 * params[self.p]).exp();
        (s.is_finite() && s > 0.0).then(|| DMatrix::from_element(1, 1, s))
    }

    fn block_loglik(&self, params: &[f64], i: usize, _block: usize, re: &[f64], out: &mut [f64]) {
        let rows = self.rows_of(i);
        let lin: Vec<f64> = rows.iter().map(|&r| self.row(r).iter().zip(params).map(|(a, b)| a * b).sum()).collect();
        for (o, &a) in out.iter_mut().zip(re) {
            *o = rows.iter().zip(&lin).map(|(&r, &l)| self.family.kernel(l + a, self.y[r]).value).sum();
        }
    }
}

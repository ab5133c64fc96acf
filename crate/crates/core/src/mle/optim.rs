//! Marquardt-damped Newton maximization.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::math::max_abs;
use crate::mle::objective::{Derivatives, MarginalModel, McObjective};

/// Something to maximize, with an objective-only path for trial steps.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn derivatives(&self, x: &[f64]) -> Result<Derivatives>;
}

impl<M: MarginalModel + ?Sized> Objective for McObjective<'_, M> {
    fn value(&self, x: &[f64]) -> f64 {
        McObjective::value(self, x)
    }

    fn derivatives(&self, x: &[f64]) -> Result<Derivatives> {
        McObjective::derivatives(self, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarquardtOptions {
    pub max_iter: usize,
    pub tol_loglik: f64,
    pub tol_params: f64,
    pub tol_grad: f64,
    /// Initial damping factor.
    pub damping: f64,
}

impl Default for MarquardtOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol_loglik: 1e-3, tol_params: 1e-3, tol_grad: 1e-3, damping: 1e-2 }
    }
}

/// Values of the three stopping criteria at termination: change in the
/// objective and largest parameter change over the last accepted step, and
/// the gradient max-norm at the final point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criteria {
    pub d_loglik: f64,
    pub d_params: f64,
    pub grad: f64,
}

impl Criteria {
    pub fn met(&self, o: &MarquardtOptions) -> bool {
        self.d_loglik < o.tol_loglik && self.d_params < o.tol_params && self.grad < o.tol_grad
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub criteria: Criteria,
    pub grad: Vec<f64>,
    /// Hessian of the objective at `x`, when it was evaluated there.
    pub hess: Option<DMatrix<f64>>,
}

/// Damped system `(-H + μ·diag(max(|-H_ii|, 1e-8))) δ = g`; `μ` shrinks ten-fold
/// after an accepted step and grows ten-fold after a rejected or singular one.
pub fn maximize<O: Objective + ?Sized>(obj: &O, start: &[f64], opts: &MarquardtOptions) -> Result<OptimResult> {
    let n = start.len();
    let mut x = start.to_vec();
    if !obj.value(&x).is_finite() {
        return Err(Error::Domain("objective is not finite at the starting point".into()));
    }
    let mut mu = opts.damping;
    let mut last: Option<(f64, f64)> = None;
    let mut crit = Criteria { d_loglik: f64::INFINITY, d_params: f64::INFINITY, grad: f64::INFINITY };
    let mut iterations = 0;
    loop {
        let der = match obj.derivatives(&x) {
            Ok(d) => d,
            Err(_) => {
                return Ok(OptimResult { value: obj.value(&x), x, iterations, converged: false, criteria: crit, grad: Vec::new(), hess: None });
            }
        };
        crit.grad = max_abs(&der.grad);
        if let Some((dl, dx)) = last {
            crit.d_loglik = dl;
            crit.d_params = dx;
        }
        let done = |converged: bool, x: Vec<f64>, crit: Criteria, iterations: usize| OptimResult {
            x,
            value: der.value,
            iterations,
            converged,
            criteria: crit,
            grad: der.grad.clone(),
            hess: Some(der.hess.clone()),
        };
        if last.is_some() && crit.met(opts) {
            return Ok(done(true, x, crit, iterations));
        }
        if iterations >= opts.max_iter {
            return Ok(done(false, x, crit, iterations));
        }
        let a = -&der.hess;
        let g = DVector::from_column_slice(&der.grad);
        let mut accepted = None;
        for _ in 0..60 {
            let mut m = a.clone();
            for i in 0..n {
                m[(i, i)] += mu * a[(i, i)].abs().max(1e-8);
            }
            if let Some(ch) = m.cholesky() {
                let delta = ch.solve(&g);
                let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
                let fv = obj.value(&trial);
                if fv.is_finite() && fv >= der.value {
                    accepted = Some((trial, fv, max_abs(delta.as_slice())));
                    mu = (mu * 0.1).max(1e-12);
                    break;
                }
            }
            mu *= 10.0;
            if mu > 1e20 {
                break;
            }
        }
        match accepted {
            Some((trial, fv, dx)) => {
                last = Some(((fv - der.value).abs(), dx));
                x = trial;
                iterations += 1;
            }
            None => {
                // No ascent direction left at this damping: the point is
                // stationary to working precision.
                crit.d_loglik = 0.0;
                crit.d_params = 0.0;
                let ok = crit.met(opts);
                return Ok(done(ok, x, crit, iterations));
            }
        }
    }
}

/// Standard errors from the inverse of `-H`, when it is positive definite.
pub fn standard_errors(hess: &DMatrix<f64>) -> Option<Vec<f64>> {
    let ch = (-hess).cholesky()?;
    let inv = ch.inverse();
    let se: Vec<f64> = (0..hess.nrows()).map(|i| inv[(i, i)].sqrt()).collect();
    se.iter().all(|v| v.is_finite()).then_some(se)
}

/// Covariance `(-H)⁻¹` when positive definite.
pub fn inverse_information(hess: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Some((-hess).cholesky()?.inverse())
}

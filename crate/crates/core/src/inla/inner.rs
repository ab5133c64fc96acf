//! Gaussian approximation of `π(u | θ, y)` at its mode.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::lgm::{LatentGaussianModel, ObservationMatrix};
use crate::likelihood::KernelEval;
use crate::math::{max_abs, norm2, stable_sum};
use crate::sparse::{CholeskyFactor, CholeskySymbolic, SymCsc};

pub const MAX_NEWTON_ITER: usize = 100;
pub const STEP_TOL: f64 = 1e-8;
pub const GRAD_TOL: f64 = 1e-6;
const PIN_WEIGHT: f64 = 1e12;

/// Gaussian approximation at the inner mode for one `θ`.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub theta: Vec<f64>,
    pub mode: Vec<f64>,
    /// Cholesky factor of `Q + AᵀCA` at the mode.
    pub factor: CholeskyFactor,
    pub log_det_h: f64,
    pub log_det_q: f64,
    /// `u*ᵀ Q u*`.
    pub quad: f64,
    /// `Σ log p(y | η*)`.
    pub loglik: f64,
    pub iterations: usize,
    /// Objective after each accepted Newton step, starting value first.
    pub objective_trace: Vec<f64>,
}

impl GaussianApprox {
    /// `½log|Q| - ½u*ᵀQu* + Σℓ(Au*) - ½log|H|`, the log of
    /// `π(u*|θ) p(y|u*) / π_G(u*|θ,y)` with the `2π` terms cancelled.
    pub fn log_ratio(&self) -> f64 {
        0.5 * self.log_det_q - 0.5 * self.quad + self.loglik - 0.5 * self.log_det_h
    }

    /// Marginal variances of the latent field.
    pub fn marginal_variances(&self) -> Vec<f64> {
        self.factor.selected_inverse().diagonal()
    }
}

/// Pattern of `H = Q + AᵀCA` with scatter maps from `Q` and `A` into it.
pub struct InnerProblem<'m, M: LatentGaussianModel + ?Sized> {
    pub model: &'m M,
    h: SymCsc,
    symbolic: CholeskySymbolic,
    q_map: Vec<usize>,
    a_pattern: (Vec<usize>, Vec<usize>),
    /// Per row: `(slot_p, slot_q, position)` for ordered entry pairs with `col_p <= col_q`.
    pair_map: Vec<(u32, u32, usize)>,
    pair_ptr: Vec<usize>,
}

impl<'m, M: LatentGaussianModel + ?Sized> InnerProblem<'m, M> {
    pub fn new(model: &'m M, theta: &[f64]) -> Result<Self> {
        let (q, _) = model.precision(theta)?;
        let a = model.observation_matrix(theta)?;
        let n = model.n_latent();
        if q.n != n || a.n_cols != n {
            return Err(Error::Dimension(format!("Q is {}, A has {} columns, latent field {}", q.n, a.n_cols, n)));
        }
        let mut trip = Vec::with_capacity(q.nnz() + 8 * a.col_idx.len());
        for c in 0..n {
            for p in q.col_ptr[c]..q.col_ptr[c + 1] {
                trip.push((q.row_idx[p], c, 0.0));
            }
        }
        for r in 0..a.n_rows() {
            let (cols, _) = a.row(r);
            for &i in cols {
                for &j in cols {
                    if i <= j {
                        trip.push((i, j, 0.0));
                    }
                }
            }
        }
        let h = SymCsc::from_triplets(n, &trip)?;
        let mut q_map = Vec::with_capacity(q.nnz());
        for c in 0..n {
            for p in q.col_ptr[c]..q.col_ptr[c + 1] {
                q_map.push(h.find(q.row_idx[p], c).expect("Q entry in H"));
            }
        }
        let mut pair_map = Vec::new();
        let mut pair_ptr = Vec::with_capacity(a.n_rows() + 1);
        pair_ptr.push(0);
        for r in 0..a.n_rows() {
            let (cols, _) = a.row(r);
            for (sp, &i) in cols.iter().enumerate() {
                for (sq, &j) in cols.iter().enumerate() {
                    if i <= j {
                        pair_map.push((sp as u32, sq as u32, h.find(i, j).expect("A pair in H")));
                    }
                }
            }
            pair_ptr.push(pair_map.len());
        }
        let symbolic = CholeskySymbolic::analyze(&h);
        Ok(Self { model, h, symbolic, q_map, a_pattern: (a.row_ptr, a.col_idx), pair_map, pair_ptr })
    }

    pub fn n_latent(&self) -> usize {
        self.h.n
    }

    fn check_a(&self, a: &ObservationMatrix) -> Result<()> {
        if a.row_ptr != self.a_pattern.0 || a.col_idx != self.a_pattern.1 {
            return Err(Error::Dimension("observation matrix pattern changed with θ".into()));
        }
        Ok(())
    }

    fn assemble_h(&mut self, q: &SymCsc, a: &ObservationMatrix, kern: &[KernelEval]) {
        self.h.values.iter_mut().for_each(|v| *v = 0.0);
        for (k, &pos) in self.q_map.iter().enumerate() {
            self.h.values[pos] += q.values[k];
        }
        for r in 0..a.n_rows() {
            let c = -kern[r].hess;
            if c == 0.0 {
                continue;
            }
            let vals = &a.values[a.row_ptr[r]..a.row_ptr[r + 1]];
            for &(sp, sq, pos) in &self.pair_map[self.pair_ptr[r]..self.pair_ptr[r + 1]] {
                self.h.values[pos] += c * vals[sp as usize] * vals[sq as usize];
            }
        }
    }

    /// Newton iterations for the mode of `-½uᵀQu + Σℓ(Au)`.
    pub fn inner_mode(&mut self, theta: &[f64], start: Option<&[f64]>) -> Result<GaussianApprox> {
        self.newton(theta, start, None)
    }

    /// Mode of the remaining field with `u_j = c` held fixed. The returned
    /// `log_det_h` is that of the Hessian with row and column `j` removed.
    pub fn pinned_mode(&mut self, theta: &[f64], start: Option<&[f64]>, j: usize, c: f64) -> Result<GaussianApprox> {
        self.newton(theta, start, Some((j, c)))
    }

    fn newton(&mut self, theta: &[f64], start: Option<&[f64]>, pin: Option<(usize, f64)>) -> Result<GaussianApprox> {
        let (q, log_det_q) = self.model.precision(theta)?;
        let a = self.model.observation_matrix(theta)?;
        self.check_a(&a)?;
        let n = self.n_latent();
        let m = a.n_rows();
        let mut u = match start {
            Some(s) if s.len() == n => s.to_vec(),
            _ => vec![0.0; n],
        };
        if let Some((j, c)) = pin {
            if j >= n {
                return Err(Error::Dimension(format!("pinned index {j} outside a field of {n}")));
            }
            u[j] = c;
        }
        let mut eta = vec![0.0; m];
        let mut kern = vec![KernelEval { value: 0.0, grad: 0.0, hess: 0.0 }; m];
        let mut qu = vec![0.0; n];
        let mut grad = vec![0.0; n];

        let model = self.model;
        let objective = |u: &[f64], eta: &mut [f64], kern: &mut [KernelEval], qu: &mut [f64]| -> (f64, f64, f64) {
            a.mul_vec(u, eta);
            model.loglik(theta, eta, kern);
            q.mul_vec(u, qu);
            let quad = stable_sum(u.iter().zip(qu.iter()).map(|(x, y)| x * y));
            let ll = stable_sum(kern.iter().map(|k| k.value));
            (-0.5 * quad + ll, quad, ll)
        };

        let (mut obj, mut quad, mut ll) = objective(&u, &mut eta, &mut kern, &mut qu);
        if !obj.is_finite() {
            return Err(Error::InnerNotConverged(0));
        }
        let mut trace = vec![obj];
        for it in 0..=MAX_NEWTON_ITER {
            for (g, x) in grad.iter_mut().zip(&qu) {
                *g = -x;
            }
            let w: Vec<f64> = kern.iter().map(|k| k.grad).collect();
            a.add_tmul_vec(&w, &mut grad);
            self.assemble_h(&q, &a, &kern);
            let mut pin_schur = 0.0;
            if let Some((j, _)) = pin {
                grad[j] = 0.0;
                let d = self.h.find(j, j).expect("diagonal in H");
                pin_schur = self.h.values[d];
                self.h.values[d] += PIN_WEIGHT;
            }
            let factor = self.symbolic.factor(&self.h)?;
            let mut delta = grad.clone();
            factor.solve(&mut delta);
            if let Some((j, _)) = pin {
                delta[j] = 0.0;
            }
            if max_abs(&delta) < STEP_TOL && norm2(&grad) < GRAD_TOL {
                // log|H̃| = log|H₋ⱼ| + ln(K + s) with s the Schur complement of
                // the pinned pivot; s ≤ H_jj, so ln(K + H_jj) is exact to s/K.
                let log_det_h = match pin {
                    Some(_) => factor.log_det() - (PIN_WEIGHT + pin_schur.max(0.0)).ln(),
                    None => factor.log_det(),
                };
                return Ok(GaussianApprox {
                    theta: theta.to_vec(),
                    mode: u,
                    log_det_h,
                    factor,
                    log_det_q,
                    quad,
                    loglik: ll,
                    iterations: it,
                    objective_trace: trace,
                });
            }
            if it == MAX_NEWTON_ITER {
                break;
            }
            let mut t = 1.0;
            let mut trial = vec![0.0; n];
            let mut accepted = false;
            for _ in 0..40 {
                for k in 0..n {
                    trial[k] = u[k] + t * delta[k];
                }
                let (o, qd, l) = objective(&trial, &mut eta, &mut kern, &mut qu);
                if o.is_finite() && o >= obj - 1e-12 * (1.0 + obj.abs()) {
                    obj = o;
                    trace.push(o);
                    quad = qd;
                    ll = l;
                    core::mem::swap(&mut u, &mut trial);
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return Err(Error::InnerNotConverged(it));
            }
        }
        Err(Error::InnerNotConverged(MAX_NEWTON_ITER))
    }
}

//! Monte-Carlo marginal likelihood over the random effects and its
//! finite-difference derivatives.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, NeumaierSum};
use crate::mle::draws::DrawSet;

/// A likelihood whose subjects factor into blocks, each depending on a
/// known subset of the parameters.
///
/// The derivative code only re-evaluates the blocks a perturbation touches.
pub trait MarginalModel {
    fn n_params(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
    fn n_subjects(&self) -> usize;
    fn re_dim(&self) -> usize;
    fn n_blocks(&self) -> usize;
    /// Bit set of the blocks that change with parameter `p`, including
    /// changes routed through the random effects.
    fn block_mask(&self, p: usize) -> u32;
    /// Whether parameter `p` enters the random-effect covariance.
    fn is_re_param(&self, p: usize) -> bool;
    /// Lower Cholesky factor of the random-effect covariance, `None` when
    /// the parameters do not give a positive definite matrix.
    fn re_factor(&self, params: &[f64]) -> Option<DMatrix<f64>>;
    /// Log-likelihood of block `block` of subject `subject` at each draw;
    /// `re` is `out.len() × re_dim` row-major.
    fn block_loglik(&self, params: &[f64], subject: usize, block: usize, re: &[f64], out: &mut [f64]);
}

/// Value, gradient and Hessian of the objective.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

/// The Monte-Carlo objective with draws fixed once (common random numbers).
pub struct McObjective<'m, M: MarginalModel + ?Sized> {
    pub model: &'m M,
    pub draws: DrawSet,
    /// Relative finite-difference step.
    pub rel_step: f64,
}

fn apply_factor(l: &DMatrix<f64>, z: &[f64], d: usize, re: &mut [f64]) {
    for (zq, rq) in z.chunks_exact(d).zip(re.chunks_exact_mut(d)) {
        for k in 0..d {
            let mut s = 0.0;
            for j in 0..=k {
                s += l[(k, j)] * zq[j];
            }
            rq[k] = s;
        }
    }
}

fn log_mean_exp(v: &[f64]) -> f64 {
    log_sum_exp(v) - (v.len() as f64).ln()
}

impl<'m, M: MarginalModel + ?Sized> McObjective<'m, M> {
    pub fn new(model: &'m M, n_points: usize, seed: u64) -> Result<Self> {
        let draws = DrawSet::new(model.n_subjects(), model.re_dim(), n_points, seed)?;
        Ok(Self { model, draws, rel_step: 1e-4 })
    }

    pub fn n_points(&self) -> usize {
        self.draws.n_points
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.model.n_params() {
            return Err(Error::Dimension(format!("{} parameters given, model has {}", x.len(), self.model.n_params())));
        }
        Ok(())
    }

    /// Per-subject log of the Monte-Carlo mean likelihood; `-∞` entries mark
    /// a covariance that is not positive definite.
    fn subject_terms(&self, x: &[f64], mut each: impl FnMut(usize, &[f64])) -> bool {
        let Some(l) = self.model.re_factor(x) else {
            return false;
        };
        let (d, q, nb) = (self.model.re_dim(), self.draws.n_points, self.model.n_blocks());
        let mut re = vec![0.0; q * d];
        let mut tot = vec![0.0; q];
        let mut blk = vec![0.0; q];
        for i in 0..self.model.n_subjects() {
            apply_factor(&l, self.draws.subject(i), d, &mut re);
            tot.iter_mut().for_each(|v| *v = 0.0);
            for b in 0..nb {
                self.model.block_loglik(x, i, b, &re, &mut blk);
                for (t, v) in tot.iter_mut().zip(&blk) {
                    *t += v;
                }
            }
            each(i, &tot);
        }
        true
    }

    /// Marginal log-likelihood; `-∞` when the covariance is not positive definite.
    pub fn value(&self, x: &[f64]) -> f64 {
        if self.check(x).is_err() {
            return f64::NEG_INFINITY;
        }
        let mut acc = NeumaierSum::default();
        if !self.subject_terms(x, |_, t| acc.add(log_mean_exp(t))) {
            return f64::NEG_INFINITY;
        }
        let v = acc.value();
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// Per-subject terms of [`McObjective::value`]; `None` when the covariance
    /// is not positive definite.
    pub fn subject_values(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.check(x).ok()?;
        let mut v = Vec::with_capacity(self.model.n_subjects());
        self.subject_terms(x, |_, t| v.push(log_mean_exp(t))).then_some(v)
    }

    /// Marginal log-likelihood with its Monte-Carlo standard error, from the
    /// spread of the antithetic pair means (delta method on the log).
    pub fn value_with_se(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check(x)?;
        let mut acc = NeumaierSum::default();
        let mut var = 0.0;
        let ok = self.subject_terms(x, |_, t| {
            let m = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pairs: Vec<f64> = t.chunks_exact(2).map(|p| 0.5 * ((p[0] - m).exp() + (p[1] - m).exp())).collect();
            let h = pairs.len() as f64;
            let mean = pairs.iter().sum::<f64>() / h;
            let s2 = pairs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (h - 1.0).max(1.0);
            var += s2 / h / (mean * mean);
            acc.add(log_mean_exp(t));
        });
        if !ok {
            return Err(Error::NotPositiveDefinite);
        }
        Ok((acc.value(), var.sqrt()))
    }

    /// Steps `h_p = rel_step · max(|x_p|, 1)`.
    pub fn steps(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.rel_step * v.abs().max(1.0)).collect()
    }

    /// Central-difference gradient and Hessian diagonal, forward-pair
    /// off-diagonals. Per subject only perturbed blocks are recomputed and the
    /// differences are accumulated subject by subject.
    pub fn derivatives(&self, x: &[f64]) -> Result<Derivatives> {
        self.check(x)?;
        let model = self.model;
        let (p, d, q, nb) = (model.n_params(), model.re_dim(), self.draws.n_points, model.n_blocks());
        let h = self.steps(x);
        let shifted = |pairs: &[(usize, f64)]| {
            let mut y = x.to_vec();
            for &(j, s) in pairs {
                y[j] += s;
            }
            y
        };
        let xp: Vec<Vec<f64>> = (0..p).map(|j| shifted(&[(j, h[j])])).collect();
        let xm: Vec<Vec<f64>> = (0..p).map(|j| shifted(&[(j, -h[j])])).collect();
        let factor = |y: &[f64]| model.re_factor(y).ok_or(Error::NotPositiveDefinite);
        let l0 = factor(x)?;
        let mut lp = Vec::with_capacity(p);
        let mut lm = Vec::with_capacity(p);
        for j in 0..p {
            if model.is_re_param(j) {
                lp.push(Some(factor(&xp[j])?));
                lm.push(Some(factor(&xm[j])?));
            } else {
                lp.push(None);
                lm.push(None);
            }
        }
        let re_params: Vec<usize> = (0..p).filter(|&j| model.is_re_param(j)).collect();
        let mut lpair = vec![None; p * p];
        for (ia, &a) in re_params.iter().enumerate() {
            for &b in &re_params[ia + 1..] {
                lpair[a * p + b] = Some(factor(&shifted(&[(a, h[a]), (b, h[b])]))?);
            }
        }
        let mask: Vec<u32> = (0..p).map(|j| model.block_mask(j)).collect();

        let mut re0 = vec![0.0; q * d];
        let mut re1 = vec![0.0; q * d];
        let mut base = vec![0.0; nb * q];
        let mut plus = vec![0.0; p * nb * q];
        let mut minus = vec![0.0; p * nb * q];
        let mut pair_blk = vec![0.0; nb * q];
        let mut tot = vec![0.0; q];
        let mut xab = x.to_vec();

        let mut f = NeumaierSum::default();
        let mut g = vec![0.0; p];
        let mut hd = vec![0.0; p];
        let mut hoff = DMatrix::<f64>::zeros(p, p);
        let mut fp = vec![0.0; p];
        let mut fm = vec![0.0; p];

        let combine = |tot: &mut [f64], src: &dyn Fn(usize) -> usize, store: &[&[f64]]| {
            tot.iter_mut().for_each(|v| *v = 0.0);
            for b in 0..nb {
                let s = &store[src(b)][b * q..(b + 1) * q];
                for (t, v) in tot.iter_mut().zip(s) {
                    *t += v;
                }
            }
            log_mean_exp(tot)
        };

        for i in 0..model.n_subjects() {
            let z = self.draws.subject(i);
            apply_factor(&l0, z, d, &mut re0);
            for b in 0..nb {
                model.block_loglik(x, i, b, &re0, &mut base[b * q..(b + 1) * q]);
            }
            for j in 0..p {
                for (vals, xs, lf) in [(&mut plus, &xp[j], &lp[j]), (&mut minus, &xm[j], &lm[j])] {
                    let re = match lf {
                        Some(l) => {
                            apply_factor(l, z, d, &mut re1);
                            &re1
                        }
                        None => &re0,
                    };
                    let off = j * nb * q;
                    for b in 0..nb {
                        let dst = &mut vals[off + b * q..off + (b + 1) * q];
                        if mask[j] >> b & 1 == 1 {
                            model.block_loglik(xs, i, b, re, dst);
                        } else {
                            dst.copy_from_slice(&base[b * q..(b + 1) * q]);
                        }
                    }
                }
            }
            let f0 = log_mean_exp_sum(&base, nb, q, &mut tot);
            f.add(f0);
            for j in 0..p {
                let off = j * nb * q;
                fp[j] = log_mean_exp_sum(&plus[off..off + nb * q], nb, q, &mut tot);
                fm[j] = log_mean_exp_sum(&minus[off..off + nb * q], nb, q, &mut tot);
                g[j] += (fp[j] - fm[j]) / (2.0 * h[j]);
                hd[j] += (fp[j] - 2.0 * f0 + fm[j]) / (h[j] * h[j]);
            }
            for a in 0..p {
                for b in a + 1..p {
                    let shared = mask[a] & mask[b];
                    if shared != 0 {
                        xab.copy_from_slice(x);
                        xab[a] += h[a];
                        xab[b] += h[b];
                        let re = match (&lp[a], &lp[b]) {
                            (Some(_), Some(_)) => {
                                apply_factor(lpair[a * p + b].as_ref().expect("pair factor"), z, d, &mut re1);
                                &re1
                            }
                            (Some(l), None) | (None, Some(l)) => {
                                apply_factor(l, z, d, &mut re1);
                                &re1
                            }
                            (None, None) => &re0,
                        };
                        for blk in 0..nb {
                            if shared >> blk & 1 == 1 {
                                model.block_loglik(&xab, i, blk, re, &mut pair_blk[blk * q..(blk + 1) * q]);
                            }
                        }
                    }
                    let (pa, pb) = (&plus[a * nb * q..(a + 1) * nb * q], &plus[b * nb * q..(b + 1) * nb * q]);
                    let stores: [&[f64]; 4] = [&base, pa, pb, &pair_blk];
                    let src = |blk: usize| {
                        let (ia, ib) = (mask[a] >> blk & 1 == 1, mask[b] >> blk & 1 == 1);
                        match (ia, ib) {
                            (true, true) => 3,
                            (true, false) => 1,
                            (false, true) => 2,
                            (false, false) => 0,
                        }
                    };
                    let fab = combine(&mut tot, &src, &stores);
                    hoff[(a, b)] += (fab - fp[a] - fp[b] + f0) / (h[a] * h[b]);
                }
            }
        }
        let mut hess = hoff;
        for a in 0..p {
            hess[(a, a)] = hd[a];
            for b in a + 1..p {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        let value = f.value();
        if !value.is_finite() || g.iter().any(|v| !v.is_finite()) || hess.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite Monte-Carlo likelihood or derivative".into()));
        }
        Ok(Derivatives { value, grad: g, hess })
    }
}

fn log_mean_exp_sum(blocks: &[f64], nb: usize, q: usize, tot: &mut [f64]) -> f64 {
    tot.copy_from_slice(&blocks[..q]);
    for b in 1..nb {
        for (t, v) in tot.iter_mut().zip(&blocks[b * q..(b + 1) * q]) {
            *t += v;
        }
    }
    log_mean_exp(tot)
}

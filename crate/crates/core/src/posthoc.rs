//! Subgroup summaries after a fit: random-effect means given a threshold on
//! one component, and the hazard ratio they imply.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{norm_cdf, norm_pdf, norm_quantile, norm_sf};

/// Smallest conditioning probability accepted.
pub const MIN_ACCEPTANCE: f64 = 1e-6;
pub const MIN_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// In standard deviations of the thresholded component.
    Sd(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgroupQuery {
    pub component: usize,
    pub threshold: Threshold,
    pub direction: Direction,
    pub mc_draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMeans {
    /// Monte-Carlo conditional means and their standard errors.
    pub mc: Vec<f64>,
    pub mc_se: Vec<f64>,
    /// Closed-form values from the truncated-normal regression identity.
    pub analytic: Vec<f64>,
    /// Probability of the conditioning event.
    pub probability: f64,
    /// Threshold on the absolute scale.
    pub cut: f64,
}

/// `E[X | X_c > t]` (or `< t`) for `X ~ N(0, Σ)`.
///
/// The thresholded component is drawn from its truncated marginal by
/// inversion and the others from their Gaussian conditional given it, so the
/// draws come from the conditional distribution exactly. The analytic values use
/// `E[X_k | X_c > t] = Σ_kc/σ_c · φ(t/σ_c) / (1 - Φ(t/σ_c))`.
pub fn conditional_re_means(sigma: &DMatrix<f64>, q: &SubgroupQuery, seed: u64) -> Result<ConditionalMeans> {
    let d = sigma.nrows();
    if sigma.ncols() != d || q.component >= d {
        return Err(Error::Dimension(format!("component {} of a {}x{} covariance", q.component, d, sigma.ncols())));
    }
    if q.mc_draws < MIN_DRAWS {
        return Err(Error::Domain(format!("at least {MIN_DRAWS} draws required, got {}", q.mc_draws)));
    }
    if sigma.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    let c = q.component;
    let sc = sigma[(c, c)].sqrt();
    let cut = match q.threshold {
        Threshold::Sd(k) => k * sc,
        Threshold::Absolute(t) => t,
    };
    let t = cut / sc;
    let (prob, ratio) = match q.direction {
        Direction::Above => (norm_sf(t), if t == f64::NEG_INFINITY { 0.0 } else { norm_pdf(t) / norm_sf(t) }),
        Direction::Below => (norm_cdf(t), if t == f64::INFINITY { 0.0 } else { -norm_pdf(t) / norm_cdf(t) }),
    };
    if !(prob >= MIN_ACCEPTANCE) {
        return Err(Error::ExtremeThreshold(prob));
    }
    let analytic: Vec<f64> = (0..d).map(|k| sigma[(k, c)] / sc * ratio).collect();

    // X_rest | X_c = x ~ N(Σ_rc x / σ_c², Σ_rr - Σ_rc Σ_cr / σ_c²).
    let others: Vec<usize> = (0..d).filter(|&k| k != c).collect();
    let m = others.len();
    let reg: Vec<f64> = others.iter().map(|&k| sigma[(k, c)] / (sc * sc)).collect();
    let cond = DMatrix::from_fn(m, m, |i, j| sigma[(others[i], others[j])] - sigma[(others[i], c)] * sigma[(c, others[j])] / (sc * sc));
    let cond_l = if m > 0 {
        match cond.clone().cholesky() {
            Some(ch) => ch.l(),
            None => return Err(Error::NotPositiveDefinite),
        }
    } else {
        DMatrix::zeros(0, 0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; d];
    let mut sum2 = vec![0.0; d];
    let mut x = vec![0.0; d];
    for _ in 0..q.mc_draws {
        // Tail mass to the far side of the draw is uniform on (0, prob);
        // inverting it directly keeps precision deep in the tail.
        let w = (prob * (1.0 - rng.random::<f64>())).min(1.0 - 1e-16);
        let z = match q.direction {
            Direction::Above => -norm_quantile(w),
            Direction::Below => norm_quantile(w),
        };
        x[c] = sc * z;
        let e = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let dev = &cond_l * e;
        for (i, &k) in others.iter().enumerate() {
            x[k] = reg[i] * x[c] + dev[i];
        }
        for k in 0..d {
            sum[k] += x[k];
            sum2[k] += x[k] * x[k];
        }
    }
    let n = q.mc_draws as f64;
    let mc: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mc_se = (0..d).map(|k| ((sum2[k] / n - mc[k] * mc[k]).max(0.0) / n).sqrt()).collect();
    Ok(ConditionalMeans { mc, mc_se, analytic, probability: prob, cut })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardRatio {
    pub hr: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `exp(φᵀm)` with an equal-tailed 95% interval over draws of `φ`.
pub fn subgroup_hazard_ratio(phi: &[f64], cond_means: &[f64], phi_draws: &[Vec<f64>]) -> Result<HazardRatio> {
    if phi.len() != cond_means.len() || phi_draws.iter().any(|d| d.len() != phi.len()) {
        return Err(Error::Dimension("association and conditional-mean dimensions differ".into()));
    }
    let lin = |p: &[f64]| p.iter().zip(cond_means).map(|(a, b)| a * b).sum::<f64>();
    let hr = lin(phi).exp();
    if phi_draws.is_empty() {
        return Ok(HazardRatio { hr, lower: f64::NAN, upper: f64::NAN });
    }
    let mut v: Vec<f64> = phi_draws.iter().map(|p| lin(p).exp()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    Ok(HazardRatio { hr, lower: quantile_sorted(&v, 0.025), upper: quantile_sorted(&v, 0.975) })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = p * (v.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (h - i as f64) * (v[j] - v[i])
}

/// Draws from `N(mean, cov)`.
pub fn mvn_draws(mean: &[f64], cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::Dimension("covariance does not match the mean".into()));
    }
    let l = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = &l * z;
            mean.iter().zip(x.iter()).map(|(a, b)| a + b).collect()
        })
        .collect())
}

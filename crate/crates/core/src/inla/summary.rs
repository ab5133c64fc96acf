//! Posterior summaries from the integration points.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Result;
use crate::inla::explore::{Exploration, ThetaPoint};
use crate::inla::inner::{GaussianApprox, InnerProblem};
use crate::lgm::{LatentGaussianModel, Transform};
use crate::math::{norm_cdf, norm_quantile};

/// A finite mixture of univariate Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl GaussianMixture {
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (m, s))| w * (s * s + (m - mu) * (m - mu)))
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (m, s))| w * if *s > 0.0 { norm_cdf((x - m) / s) } else if x >= *m { 1.0 } else { 0.0 })
            .sum()
    }

    /// Bisection on the CDF to `1e-8` in probability.
    pub fn quantile(&self, p: f64) -> f64 {
        if self.weights.len() == 1 {
            return self.means[0] + self.sds[0] * norm_quantile(p);
        }
        let z = norm_quantile(p).abs() + 1.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (m, s) in self.means.iter().zip(&self.sds) {
            lo = lo.min(m - z * s);
            hi = hi.max(m + z * s);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let c = self.cdf(mid);
            if (c - p).abs() < 1e-8 || hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                return mid;
            }
            if c < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentMarginal {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// Two-sided tail mass of zero under the marginal.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperMarginal {
    pub name: String,
    pub free: bool,
    pub transform: Transform,
    /// Mode and Gaussian-approximation SD on the working scale.
    pub mode: f64,
    pub sd: f64,
    /// Transformed scale: value at the mode, delta-method SD, and the
    /// transformed 2.5/97.5% Gaussian quantiles.
    pub value: f64,
    pub value_sd: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub latent: Vec<LatentMarginal>,
    pub hyper: Vec<HyperMarginal>,
    pub log_mlik: f64,
    pub points: Vec<(Vec<f64>, f64, f64)>,
    pub n_evals: usize,
    pub mode_iterations: usize,
    pub seconds: f64,
}

impl PosteriorSummary {
    pub fn latent(&self, name: &str) -> Option<&LatentMarginal> {
        self.latent.iter().find(|m| m.name == name)
    }

    pub fn hyper(&self, name: &str) -> Option<&HyperMarginal> {
        self.hyper.iter().find(|m| m.name == name)
    }
}

/// Mixture marginal of latent element `j` across the points.
pub fn latent_mixture(points: &[ThetaPoint], j: usize) -> GaussianMixture {
    GaussianMixture {
        weights: points.iter().map(|p| p.weight).collect(),
        means: points.iter().map(|p| p.mean[j]).collect(),
        sds: points.iter().map(|p| p.var[j].max(0.0).sqrt()).collect(),
    }
}

/// Summarizes latent elements selected by `keep` (all when `None`).
pub fn latent_marginals(points: &[ThetaPoint], names: &[String], keep: Option<&dyn Fn(usize) -> bool>) -> Vec<LatentMarginal> {
    let n = points.first().map_or(0, |p| p.mean.len());
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        if let Some(f) = keep {
            if !f(j) {
                continue;
            }
        }
        let mix = latent_mixture(points, j);
        let f0 = mix.cdf(0.0);
        out.push(LatentMarginal {
            name: names[j].clone(),
            mean: mix.mean(),
            sd: mix.variance().sqrt(),
            q025: mix.quantile(0.025),
            q50: mix.quantile(0.5),
            q975: mix.quantile(0.975),
            p_value: (2.0 * f0.min(1.0 - f0)).min(1.0),
        });
    }
    out
}

/// Standardized nodes of the pinned-mode grid.
const SHIFT_NODES: core::ops::RangeInclusive<i32> = -16..=16;
const SHIFT_SPACING: f64 = 0.3;

/// Mean of the Laplace marginal of `u_j` at `θ` minus the Gaussian mean.
/// The marginal is `π(u*(c), θ, y) / π_G(u₋ⱼ | u_j = c, θ, y)` on a
/// standardized grid around the Gaussian approximation `g`.
pub fn laplace_mean_shift<M: LatentGaussianModel + ?Sized>(
    inner: &mut InnerProblem<M>,
    g: &GaussianApprox,
    sd: f64,
    j: usize,
) -> Result<f64> {
    let m = g.mode[j];
    let mut nodes = Vec::new();
    let mut lps = Vec::new();
    for i in SHIFT_NODES {
        let c = m + sd * SHIFT_SPACING * i as f64;
        let a = inner.pinned_mode(&g.theta, Some(&g.mode), j, c)?;
        nodes.push(c);
        lps.push(-0.5 * a.quad + a.loglik - 0.5 * a.log_det_h);
    }
    let mx = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lps.iter().map(|l| (l - mx).exp()).collect();
    let sw: f64 = w.iter().sum();
    Ok(nodes.iter().zip(&w).map(|(c, w)| c * w).sum::<f64>() / sw - m)
}

/// Translates the latent means at every point by `laplace_mean_shift`
/// evaluated at the hyperparameter mode, for the elements in `which`.
pub fn shift_points<M: LatentGaussianModel + ?Sized>(model: &M, ex: &Exploration, which: &dyn Fn(usize) -> bool) -> Result<Vec<ThetaPoint>> {
    let mut inner = InnerProblem::new(model, &ex.mode)?;
    let centre = ex
        .points
        .iter()
        .max_by(|a, b| a.log_post.partial_cmp(&b.log_post).unwrap_or(core::cmp::Ordering::Equal))
        .map(|p| p.mean.clone());
    let g = inner.inner_mode(&ex.mode, centre.as_deref())?;
    let var = g.marginal_variances();
    let mut points = ex.points.clone();
    for j in 0..g.mode.len() {
        if !which(j) {
            continue;
        }
        let d = laplace_mean_shift(&mut inner, &g, var[j].max(0.0).sqrt(), j)?;
        for p in &mut points {
            p.mean[j] += d;
        }
    }
    Ok(points)
}

/// Hyperparameter summaries from the Gaussian approximation at the mode.
pub fn hyper_marginals<M: LatentGaussianModel + ?Sized>(model: &M, ex: &Exploration) -> Vec<HyperMarginal> {
    let names = model.theta_names();
    let k = ex.free.len();
    let cov = if k > 0 {
        ex.neg_hessian.clone().try_inverse().unwrap_or_else(|| nalgebra::DMatrix::from_element(k, k, f64::NAN))
    } else {
        nalgebra::DMatrix::zeros(0, 0)
    };
    let z = norm_quantile(0.975);
    (0..ex.mode.len())
        .map(|j| {
            let tr = model.theta_transform(j);
            let m = ex.mode[j];
            let fi = ex.free.iter().position(|&f| f == j);
            let sd = fi.map_or(0.0, |i| cov[(i, i)].max(0.0).sqrt());
            let (a, b) = (tr.apply(m - z * sd), tr.apply(m + z * sd));
            HyperMarginal {
                name: names[j].clone(),
                free: fi.is_some(),
                transform: tr,
                mode: m,
                sd,
                value: tr.apply(m),
                value_sd: tr.derivative(m).abs() * sd,
                q025: a.min(b),
                q975: a.max(b),
            }
        })
        .collect()
}

/// `S₀(t) = exp(-Σ_k exp(λ_k) |bin_k ∩ [0, t]|)` on `times`.
pub fn baseline_survival(lambda: &[f64], edges: &[f64], times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .map(|&t| {
            let mut cum = 0.0;
            for k in 0..lambda.len() {
                let lo = edges[k];
                let hi = edges[k + 1];
                if t > lo {
                    cum += lambda[k].exp() * (t.min(hi) - lo);
                }
            }
            (-cum).exp()
        })
        .collect()
}

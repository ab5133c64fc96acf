//! Nested Laplace approximation for latent Gaussian models.

pub mod explore;
pub mod inner;
pub mod summary;

use alloc::vec::Vec;

pub use explore::{explore_theta, ccd_points, fractional_factorial, grid_points, Exploration, ExploreOptions, Strategy, ThetaEvaluator, ThetaPoint};
pub use inner::{GaussianApprox, InnerProblem};
pub use summary::{baseline_survival, hyper_marginals, laplace_mean_shift, latent_marginals, shift_points, GaussianMixture, HyperMarginal, LatentMarginal, PosteriorSummary};

use crate::error::Result;
use crate::lgm::LatentGaussianModel;

/// Runs the hyperparameter exploration and summarizes the latent elements
/// accepted by `keep` (all of them when `None`). With `laplace_shift` the
/// same elements receive the mode-level Laplace mean correction.
pub fn fit<M: LatentGaussianModel + ?Sized>(
    model: &M,
    start: &[f64],
    free: &[bool],
    opts: &ExploreOptions,
    keep: Option<&dyn Fn(usize) -> bool>,
) -> Result<(Exploration, PosteriorSummary)> {
    let ex = explore_theta(model, start, free, opts)?;
    let names = model.latent_names();
    let latent = if opts.laplace_shift {
        let all = |_: usize| true;
        let shifted = shift_points(model, &ex, keep.unwrap_or(&all))?;
        latent_marginals(&shifted, &names, keep)
    } else {
        latent_marginals(&ex.points, &names, keep)
    };
    let hyper = hyper_marginals(model, &ex);
    let points: Vec<_> = ex.points.iter().map(|p| (p.theta.clone(), p.log_post, p.weight)).collect();
    let summary = PosteriorSummary {
        latent,
        hyper,
        log_mlik: ex.log_mlik,
        points,
        n_evals: ex.n_evals,
        mode_iterations: ex.mode_iterations,
        seconds: 0.0,
    };
    Ok((ex, summary))
}

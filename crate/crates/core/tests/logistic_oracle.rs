//! Logistic random-intercept models small enough for adaptive quadrature.

mod common;

use common::{coordinate_max, logistic_toy, newton_max, quad_loglik, reference_posterior};
use tpjm_core::glmm::{Family, RandomInterceptGlmm};
use tpjm_core::inla::{self, ExploreOptions, InnerProblem, Strategy, ThetaEvaluator};
use tpjm_core::lgm::{pc_log_prec_logdensity, LatentGaussianModel, ObservationMatrix, Transform};
use tpjm_core::likelihood::KernelEval;
use tpjm_core::mle::{maximize, MarquardtOptions, McObjective};
use tpjm_core::model::PcPrior;
use tpjm_core::sparse::SymCsc;

#[test]
fn inner_mode_matches_a_derivative_free_optimizer() {
    // Centred covariate, no intercept: weak coupling keeps coordinate ascent fast.
    let base = logistic_toy(20, 3, &[0.3, 1.2], 1.0, 4);
    let x: Vec<f64> = (0..base.n_obs()).map(|r| base.row(r)[1]).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let x: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let m = RandomInterceptGlmm::new(Family::Bernoulli, 20, x, 1, base.y.clone(), base.subject.clone(), 1e-3, PcPrior::default()).unwrap();
    let theta = [0.3];
    let (q, _) = m.precision(&theta).unwrap();
    let a = m.observation_matrix(&theta).unwrap();
    let objective = |u: &[f64]| {
        let mut eta = vec![0.0; a.n_rows()];
        a.mul_vec(u, &mut eta);
        let ll: f64 = eta.iter().zip(&m.y).map(|(e, y)| m.family.kernel(*e, *y).value).sum();
        ll - 0.5 * q.quad_form(u)
    };
    let oracle = coordinate_max(&objective, &vec![0.0; m.n_latent()], 1e-10, 20_000);
    let mut inner = InnerProblem::new(&m, &theta).unwrap();
    let g = inner.inner_mode(&theta, None).unwrap();
    for (j, (u, o)) in g.mode.iter().zip(&oracle).enumerate() {
        assert!((u - o).abs() < 1e-6, "u[{j}] {u} vs {o}");
    }
}

#[test]
fn laplace_log_posterior_tracks_the_quadrature_marginal() {
    let m = logistic_toy(10, 4, &[], 1.0, 12);
    assert_eq!(m.n_latent(), 10);
    let mut ev = ThetaEvaluator::new(&m, &[0.0], &[true]).unwrap();
    for log_tau in [-1.0, 0.0, 1.0, 2.0] {
        let prior = pc_log_prec_logdensity(log_tau, m.prior).unwrap();
        let laplace = ev.log_post(&[log_tau]) - prior;
        let exact = quad_loglik(&m, &[], log_tau);
        let rel = ((laplace - exact) / exact).abs();
        assert!(rel <= 2e-2, "log τ = {log_tau}: {laplace} vs {exact}");
    }
}

/// The toy model with a constant added to every log-likelihood value.
struct Shifted<'a>(&'a RandomInterceptGlmm, f64);

impl LatentGaussianModel for Shifted<'_> {
    fn n_latent(&self) -> usize {
        self.0.n_latent()
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn theta_names(&self) -> Vec<String> {
        self.0.theta_names()
    }
    fn theta_transform(&self, j: usize) -> Transform {
        self.0.theta_transform(j)
    }
    fn precision(&self, theta: &[f64]) -> tpjm_core::error::Result<(SymCsc, f64)> {
        self.0.precision(theta)
    }
    fn observation_matrix(&self, theta: &[f64]) -> tpjm_core::error::Result<ObservationMatrix> {
        self.0.observation_matrix(theta)
    }
    fn loglik(&self, theta: &[f64], eta: &[f64], out: &mut [KernelEval]) {
        self.0.loglik(theta, eta, out);
        for o in out.iter_mut() {
            o.value += self.1;
        }
    }
    fn log_prior_terms(&self, theta: &[f64]) -> tpjm_core::error::Result<Vec<f64>> {
        self.0.log_prior_terms(theta)
    }
}

#[test]
fn constant_likelihood_offset_shifts_the_log_posterior() {
    let m = logistic_toy(15, 3, &[0.2, -0.4], 0.8, 3);
    let c = 0.37;
    let shifted = Shifted(&m, c);
    let mut e0 = ThetaEvaluator::new(&m, &[0.0], &[true]).unwrap();
    let mut e1 = ThetaEvaluator::new(&shifted, &[0.0], &[true]).unwrap();
    let offset = c * m.n_obs() as f64;
    let (a0, a1) = (e0.log_post(&[-0.5]), e1.log_post(&[-0.5]));
    let (b0, b1) = (e0.log_post(&[1.5]), e1.log_post(&[1.5]));
    assert!((a1 - a0 - offset).abs() < 1e-9);
    assert!((b1 - b0 - offset).abs() < 1e-9);
    assert!(((a1 - b1) - (a0 - b0)).abs() < 1e-9);
}

#[test]
fn duplicated_data_doubles_the_likelihood_at_a_frozen_mode() {
    let m = logistic_toy(15, 3, &[0.2, -0.4], 0.8, 5);
    let mut x = m.x.clone();
    x.extend_from_slice(&m.x);
    let mut y = m.y.clone();
    y.extend_from_slice(&m.y);
    let mut sub = m.subject.clone();
    sub.extend_from_slice(&m.subject);
    let twice = RandomInterceptGlmm::new(Family::Bernoulli, 15, x, 2, y, sub, 1e-3, PcPrior::default()).unwrap();
    let theta = [0.4];
    let g = InnerProblem::new(&m, &theta).unwrap().inner_mode(&theta, None).unwrap();
    let a = twice.observation_matrix(&theta).unwrap();
    let mut eta = vec![0.0; a.n_rows()];
    a.mul_vec(&g.mode, &mut eta);
    let mut out = vec![KernelEval::default(); a.n_rows()];
    twice.loglik(&theta, &eta, &mut out);
    let ll: f64 = out.iter().map(|k| k.value).sum();
    assert!((ll - 2.0 * g.loglik).abs() < 1e-10 * ll.abs());
}

#[test]
fn fixed_effect_posterior_matches_dense_quadrature() {
    let m = logistic_toy(20, 3, &[0.5, 1.0], 1.0, 21);
    let (mean, sd, edge) = reference_posterior(&m);
    assert!(edge.iter().all(|&e| e < 1e-3), "grid truncates {edge:?}");
    let opts = ExploreOptions { strategy: Strategy::Grid, grid_step: 0.25, laplace_shift: true, ..Default::default() };
    let (_, s) = inla::fit(&m, &[0.0], &[true], &opts, None).unwrap();
    for k in 0..2 {
        let lm = s.latent(&format!("beta[{k}]")).unwrap();
        assert!((lm.mean - mean[k]).abs() < 0.05, "beta[{k}] mean {} vs {}", lm.mean, mean[k]);
        assert!((lm.sd / sd[k] - 1.0).abs() < 0.10, "beta[{k}] sd {} vs {}", lm.sd, sd[k]);
    }
}

#[test]
fn monte_carlo_mle_matches_quadrature_mle() {
    let m = logistic_toy(20, 3, &[0.5, 1.0], 1.0, 21);
    let ll = |x: &[f64]| quad_loglik(&m, &x[..2], x[2]);
    let (oracle, _) = newton_max(&ll, &[0.0, 0.0, 0.0], 1e-3);
    let obj = McObjective::new(&m, 100_000, 7).unwrap();
    let r = maximize(&obj, &[0.0, 0.0, 0.0], &MarquardtOptions::default()).unwrap();
    assert!(r.converged);
    for k in 0..3 {
        assert!((r.x[k] - oracle[k]).abs() < 0.05, "{k}: {} vs {}", r.x[k], oracle[k]);
    }
}

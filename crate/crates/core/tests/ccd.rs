//! Hyperparameter integration designs.

use nalgebra::{DMatrix, DVector};
use tpjm_core::inla::{self, ccd_points, fractional_factorial, ExploreOptions, Strategy};
use tpjm_core::lgm::{LatentGaussianModel, ObservationMatrix, Transform};
use tpjm_core::likelihood::KernelEval;
use tpjm_core::sparse::SymCsc;

/// Smallest two-level resolution-V fractions, from the standard design tables.
const RUNS: [(usize, usize); 9] = [(2, 4), (3, 8), (4, 16), (5, 16), (6, 32), (7, 64), (8, 64), (9, 128), (10, 128)];

#[test]
fn design_sizes_follow_the_table() {
    assert_eq!(ccd_points(1, 1.1).len(), 3);
    for (k, runs) in RUNS {
        assert_eq!(fractional_factorial(k).len(), runs, "k = {k}");
        assert_eq!(ccd_points(k, 1.1).len(), 1 + 2 * k + runs, "k = {k}");
    }
}

#[test]
fn fractions_have_resolution_five() {
    // Resolution V: main effects and two-factor interactions are all
    // mutually orthogonal contrasts.
    for (k, _) in RUNS {
        let d = fractional_factorial(k);
        let mut cols: Vec<Vec<i32>> = (0..k).map(|a| d.iter().map(|r| r[a] as i32).collect()).collect();
        for a in 0..k {
            for b in a + 1..k {
                cols.push(d.iter().map(|r| (r[a] * r[b]) as i32).collect());
            }
        }
        for (i, c) in cols.iter().enumerate() {
            assert_eq!(c.iter().sum::<i32>(), 0, "k = {k}, column {i} unbalanced");
            for e in &cols[i + 1..] {
                assert_eq!(c.iter().zip(e).map(|(x, y)| x * y).sum::<i32>(), 0, "k = {k}: aliased contrasts");
            }
        }
    }
}

#[test]
fn axial_and_factorial_points_lie_on_one_sphere() {
    for k in 2..=7 {
        let r = 1.1 * (k as f64).sqrt();
        for (z, _) in ccd_points(k, 1.1).iter().skip(1) {
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - r).abs() < 1e-12);
        }
    }
}

/// A model whose hyperparameter posterior is an exact Gaussian: one latent
/// element with fixed precision, no observations, and a Gaussian prior on θ.
struct Synthetic {
    mean: DVector<f64>,
    prec: DMatrix<f64>,
}

impl Synthetic {
    fn new(mean: &[f64], sd: &[f64], corr: f64) -> Self {
        let k = mean.len();
        let cov = DMatrix::from_fn(k, k, |i, j| sd[i] * sd[j] * if i == j { 1.0 } else { corr });
        Self { mean: DVector::from_column_slice(mean), prec: cov.try_inverse().unwrap() }
    }
}

impl LatentGaussianModel for Synthetic {
    fn n_latent(&self) -> usize {
        1
    }
    fn theta_dim(&self) -> usize {
        self.mean.len()
    }
    fn theta_names(&self) -> Vec<String> {
        (0..self.mean.len()).map(|j| format!("t{j}")).collect()
    }
    fn theta_transform(&self, _j: usize) -> Transform {
        Transform::Identity
    }
    fn precision(&self, _theta: &[f64]) -> tpjm_core::error::Result<(SymCsc, f64)> {
        Ok((SymCsc::from_triplets(1, &[(0, 0, 1.0)])?, 0.0))
    }
    fn observation_matrix(&self, _theta: &[f64]) -> tpjm_core::error::Result<ObservationMatrix> {
        Ok(ObservationMatrix { n_cols: 1, row_ptr: vec![0], col_idx: vec![], values: vec![] })
    }
    fn loglik(&self, _theta: &[f64], _eta: &[f64], _out: &mut [KernelEval]) {}
    fn log_prior_terms(&self, theta: &[f64]) -> tpjm_core::error::Result<Vec<f64>> {
        let d = DVector::from_column_slice(theta) - &self.mean;
        let mut t = vec![0.0; theta.len()];
        t[0] = -0.5 * (d.transpose() * &self.prec * &d)[(0, 0)];
        Ok(t)
    }
}

fn theta_moments(points: &[(Vec<f64>, f64, f64)], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mean: Vec<f64> = (0..k).map(|j| points.iter().map(|p| p.2 * p.0[j]).sum()).collect();
    let sd = (0..k).map(|j| points.iter().map(|p| p.2 * (p.0[j] - mean[j]).powi(2)).sum::<f64>().sqrt()).collect();
    (mean, sd)
}

#[test]
fn ccd_recovers_a_gaussian_hyperparameter_posterior() {
    for (mean, sd) in [(vec![1.0, -2.0], vec![0.5, 1.5]), (vec![0.5, 2.0, -1.0], vec![0.3, 0.8, 1.2])] {
        let k = mean.len();
        let m = Synthetic::new(&mean, &sd, 0.6);
        let (_, s) = inla::fit(&m, &vec![0.0; k], &vec![true; k], &ExploreOptions::default(), None).unwrap();
        let (got_mean, got_sd) = theta_moments(&s.points, k);
        for j in 0..k {
            assert!((got_mean[j] - mean[j]).abs() <= 0.01 * mean[j].abs(), "mean {j}: {} vs {}", got_mean[j], mean[j]);
            assert!((got_sd[j] / sd[j] - 1.0).abs() <= 0.01, "sd {j}: {} vs {}", got_sd[j], sd[j]);
        }
    }
}

#[test]
fn one_dimensional_grid_is_symmetric_with_unit_weight() {
    let m = Synthetic::new(&[0.7], &[0.4], 0.0);
    let opts = ExploreOptions { strategy: Strategy::Grid, ..Default::default() };
    let (ex, s) = inla::fit(&m, &[0.0], &[true], &opts, None).unwrap();
    let total: f64 = s.points.iter().map(|p| p.2).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let mut off: Vec<f64> = s.points.iter().map(|p| p.0[0] - ex.mode[0]).collect();
    off.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (a, b) in off.iter().zip(off.iter().rev()) {
        assert!((a + b).abs() < 1e-9);
    }
    let (mean, sd) = theta_moments(&s.points, 1);
    assert!((mean[0] - 0.7).abs() < 1e-3 && (sd[0] / 0.4 - 1.0).abs() < 0.02);
}

#[test]
fn empirical_bayes_is_the_mode_alone() {
    let m = Synthetic::new(&[0.7, -0.3], &[0.4, 0.2], 0.3);
    let opts = ExploreOptions { strategy: Strategy::EmpiricalBayes, ..Default::default() };
    let (ex, s) = inla::fit(&m, &[0.0, 0.0], &[true, true], &opts, None).unwrap();
    assert_eq!(s.points.len(), 1);
    assert_eq!(s.points[0].2, 1.0);
    assert!((ex.mode[0] - 0.7).abs() < 1e-3 && (ex.mode[1] + 0.3).abs() < 1e-3);
}

//! Synthetic data from the two-part joint model with a constant baseline
//! hazard and administrative censoring.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::model::{ReStructure, SubjectData, VisitRecord};

/// Data-generating parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParams {
    /// Binary part: intercept, time, trt, time:trt.
    pub alpha: [f64; 4],
    /// Continuous part: intercept, time, trt, time:trt.
    pub beta: [f64; 4],
    pub sigma_eps: f64,
    pub gamma: f64,
    /// `(φ_a, φ_b0[, φ_b1])`.
    pub assoc: Vec<f64>,
    /// Random-effect covariance of `(a, b0[, b1])`.
    pub sigma: DMatrix<f64>,
}

impl TrueParams {
    pub fn scenario(re: ReStructure) -> Self {
        let full = DMatrix::from_fn(3, 3, |i, j| {
            let sd = [1.0, 0.5, 0.5];
            let rho = [[1.0, 0.5, 0.5], [0.5, 1.0, -0.2], [0.5, -0.2, 1.0]];
            rho[i][j] * sd[i] * sd[j]
        });
        let d = re.dim();
        Self {
            alpha: [4.0, -0.5, -0.5, 0.5],
            beta: [2.0, -0.3, -0.3, 0.3],
            sigma_eps: 0.3,
            gamma: 0.2,
            assoc: alloc::vec![1.0; d],
            sigma: full.view((0, 0), (d, d)).into_owned(),
        }
    }

    pub fn re_sd(&self, k: usize) -> f64 {
        self.sigma[(k, k)].sqrt()
    }

    pub fn re_corr(&self, i: usize, j: usize) -> f64 {
        self.sigma[(i, j)] / (self.re_sd(i) * self.re_sd(j))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n: usize,
    pub re_structure: ReStructure,
    pub truth: TrueParams,
    pub visit_schedule: Vec<f64>,
    pub horizon: f64,
    pub baseline_scale: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Scenarios 1-3: two random effects with 200 subjects, three with 200,
    /// three with 500.
    pub fn scenario(k: u8, seed: u64) -> Result<Self> {
        let (n, re) = match k {
            1 => (200, ReStructure::InterceptsOnly),
            2 => (200, ReStructure::InterceptPlusSlope),
            3 => (500, ReStructure::InterceptPlusSlope),
            _ => return Err(Error::InvalidSpec(format!("unknown scenario {k}"))),
        };
        Ok(Self {
            n,
            re_structure: re,
            truth: TrueParams::scenario(re),
            visit_schedule: (0..=16).map(|q| q as f64 * 0.25).collect(),
            horizon: 4.0,
            baseline_scale: 0.2,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.re_structure.dim();
        if self.truth.sigma.nrows() != d || self.truth.assoc.len() != d {
            return Err(Error::Dimension("true parameters do not match the random-effect structure".into()));
        }
        if self.truth.sigma.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        if !(self.horizon > 0.0 && self.baseline_scale > 0.0 && self.truth.sigma_eps >= 0.0) {
            return Err(Error::InvalidSpec("horizon, baseline scale and σ_ε must be positive".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidSpec("no subjects".into()));
        }
        Ok(())
    }
}

/// Replicate `replicate` of the scenario; each replicate uses its own
/// ChaCha stream under the configured seed.
pub fn generate_replicate(cfg: &ScenarioConfig, replicate: u64) -> Result<Vec<SubjectData>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replicate);
    let d = cfg.re_structure.dim();
    let chol = cfg.truth.sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let tp = &cfg.truth;
    let mut schedule = cfg.visit_schedule.clone();
    if !schedule.contains(&0.0) {
        schedule.insert(0, 0.0);
    }
    schedule.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let trt = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let re = &l * z;
        let lin: f64 = tp.gamma * trt + (0..d).map(|k| tp.assoc[k] * re[k]).sum::<f64>();
        let rate = cfg.baseline_scale * lin.exp();
        let e: f64 = -(1.0 - rng.random::<f64>()).ln();
        let t_event = e / rate;
        let (surv_time, event) = if t_event < cfg.horizon { (t_event, true) } else { (cfg.horizon, false) };
        let mut visits = Vec::new();
        for &t in schedule.iter().filter(|&&t| t <= surv_time) {
            let eta_b = tp.alpha[0] + re[0] + tp.alpha[1] * t + tp.alpha[2] * trt + tp.alpha[3] * t * trt;
            let positive = rng.random::<f64>() < sigmoid(eta_b);
            let noise: f64 = rng.sample(StandardNormal);
            let value = if positive {
                let slope = if d == 3 { re[2] } else { 0.0 };
                let eta_c = tp.beta[0] + re[1] + (tp.beta[1] + slope) * t + tp.beta[2] * trt + tp.beta[3] * t * trt;
                (eta_c + tp.sigma_eps * noise).exp()
            } else {
                0.0
            };
            visits.push(VisitRecord { time: t, value });
        }
        let mut cov = BTreeMap::new();
        cov.insert("trt".to_string(), trt);
        out.push(SubjectData::new(i as u64 + 1, visits, surv_time, event, cov)?);
    }
    Ok(out)
}

/// Replicate 0 of the scenario.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<Vec<SubjectData>> {
    generate_replicate(cfg, 0)
}

/// Fraction of zero biomarker values.
pub fn zero_rate(data: &[SubjectData]) -> f64 {
    let (z, n) = data.iter().flat_map(|s| &s.visits).fold((0usize, 0usize), |(z, n), v| (z + (!v.is_positive()) as usize, n + 1));
    z as f64 / n as f64
}

/// Fraction of subjects censored at the horizon.
pub fn censoring_fraction(data: &[SubjectData]) -> f64 {
    data.iter().filter(|s| !s.event).count() as f64 / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let cfg = ScenarioConfig::scenario(1, 42).unwrap();
        assert_eq!(generate_replicate(&cfg, 3).unwrap(), generate_replicate(&cfg, 3).unwrap());
        assert_ne!(generate_replicate(&cfg, 3).unwrap(), generate_replicate(&cfg, 4).unwrap());
    }

    #[test]
    fn no_post_terminal_visits_and_baseline_visit_present() {
        let cfg = ScenarioConfig::scenario(2, 7).unwrap();
        for s in generate_dataset(&cfg).unwrap() {
            assert_eq!(s.visits[0].time, 0.0);
            assert!(s.visits.iter().all(|v| v.time <= s.surv_time));
            assert!(s.surv_time <= 4.0);
        }
    }

    #[test]
    fn null_association_gives_exponential_censoring() {
        let mut cfg = ScenarioConfig::scenario(1, 11).unwrap();
        cfg.truth.assoc = alloc::vec![0.0, 0.0];
        cfg.truth.gamma = 0.0;
        cfg.n = 20000;
        let c = censoring_fraction(&generate_dataset(&cfg).unwrap());
        let want = (-0.8f64).exp();
        let se = (want * (1.0 - want) / 20000.0).sqrt();
        assert!((c - want).abs() < 4.0 * se, "{c} vs {want}");
    }

    #[test]
    fn noiseless_values_are_exact() {
        let mut cfg = ScenarioConfig::scenario(1, 5).unwrap();
        cfg.truth.sigma_eps = 0.0;
        cfg.truth.sigma = DMatrix::from_diagonal_element(2, 2, 1e-300);
        cfg.n = 20;
        for s in generate_dataset(&cfg).unwrap() {
            let trt = s.covariates["trt"];
            for v in s.visits.iter().filter(|v| v.is_positive()) {
                let b = cfg.truth.beta;
                let want = (b[0] + b[1] * v.time + b[2] * trt + b[3] * v.time * trt).exp();
                assert!((v.value - want).abs() < 1e-12 * want);
            }
        }
    }
}

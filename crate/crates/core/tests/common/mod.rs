#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpjm_core::glmm::{Family, RandomInterceptGlmm};
use tpjm_core::lgm::{pc_log_prec_logdensity, LatentGaussianModel, TpjmLgm};
use tpjm_core::model::PcPrior;

/// Gauss-Hermite nodes and weights for `∫ e^{-x²} f(x) dx`, by Newton on the
/// orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-0.16667),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `log ∫ exp(f(a)) N(a; 0, s²) da` by adaptive Gauss-Hermite quadrature
/// centred at the mode of the integrand with its curvature as scale. `f`
/// returns the value with its first two derivatives.
pub fn aghq_log(f: &dyn Fn(f64) -> (f64, f64, f64), s: f64, nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    let p = 1.0 / (s * s);
    let g = |a: f64| {
        let (v, d1, d2) = f(a);
        (v - 0.5 * p * a * a, d1 - p * a, d2 - p)
    };
    let mut a = 0.0;
    for _ in 0..100 {
        let (_, d1, d2) = g(a);
        let step = (-d1 / d2).clamp(-2.0, 2.0);
        a += step;
        if step.abs() < 1e-13 {
            break;
        }
    }
    let sd = (-1.0 / g(a).2).sqrt();
    let scale = std::f64::consts::SQRT_2 * sd;
    let (x, w) = nodes;
    let terms: Vec<f64> = x.iter().zip(w).map(|(&xi, &wi)| wi.ln() + xi * xi + g(a + scale * xi).0).collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln() + scale.ln() - 0.5 * (2.0 * std::f64::consts::PI * s * s).ln()
}

/// Bernoulli-logit log-likelihood of `y` with derivatives in `eta`.
pub fn logit_terms(eta: f64, y: f64) -> (f64, f64, f64) {
    let p = 1.0 / (1.0 + (-eta).exp());
    let v = y * eta - if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
    (v, y - p, -p * (1.0 - p))
}

/// Logistic random-intercept toy: `n` subjects, `visits` each, intercept and
/// one standard-normal covariate.
pub fn logistic_toy(n: usize, visits: usize, beta: &[f64], sigma: f64, seed: u64) -> RandomInterceptGlmm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut sub = Vec::new();
    for i in 0..n {
        let a: f64 = sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
        for _ in 0..visits {
            let xi: f64 = rng.sample(rand_distr::StandardNormal);
            let mut row = vec![1.0, xi];
            row.truncate(beta.len());
            let eta = a + row.iter().zip(beta).map(|(u, v)| u * v).sum::<f64>();
            let p = 1.0 / (1.0 + (-eta).exp());
            y.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
            x.extend(row);
            sub.push(i);
        }
    }
    RandomInterceptGlmm::new(Family::Bernoulli, n, x, beta.len(), y, sub, 1e-3, PcPrior::default()).unwrap()
}

/// Gaussian random-intercept toy with known residual precision.
pub fn gaussian_toy(n: usize, visits: usize, beta: &[f64], sigma: f64, tau: f64, seed: u64) -> RandomInterceptGlmm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut sub = Vec::new();
    for i in 0..n {
        let a: f64 = sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
        // Unbalanced on purpose.
        for _ in 0..visits + i % 3 {
            let xi: f64 = rng.random::<f64>() * 2.0;
            let row = [1.0, xi];
            let eta = a + row.iter().zip(beta).map(|(u, v)| u * v).sum::<f64>();
            let e: f64 = rng.sample(rand_distr::StandardNormal);
            y.push(eta + e / tau.sqrt());
            x.extend_from_slice(&row[..beta.len()]);
            sub.push(i);
        }
    }
    RandomInterceptGlmm::new(Family::Gaussian { tau }, n, x, beta.len(), y, sub, 1e-3, PcPrior::default()).unwrap()
}

/// Dense log-density of `N(0, S)` at `y`.
pub fn mvn_logpdf(y: &[f64], s: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let ch = s.clone().cholesky().expect("SPD");
    let l = ch.l();
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let yv = nalgebra::DVector::from_column_slice(y);
    let sol = ch.solve(&yv);
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + yv.dot(&sol))
}

/// Maximizes a unimodal 1-d function by golden-section search after
/// bracketing outward from `x` with initial half-width `h`.
pub fn golden_max(f: &dyn Fn(f64) -> f64, x: f64, h: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (x - h, x + h);
    let mut w = h;
    while f(a) > f(x) {
        w *= 2.0;
        a = x - w;
    }
    w = h;
    while f(b) > f(x) {
        w *= 2.0;
        b = x + w;
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Cyclic coordinate ascent with golden-section line searches; stops when a
/// full sweep moves no coordinate by more than `tol`.
pub fn coordinate_max(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], tol: f64, max_sweeps: usize) -> Vec<f64> {
    let mut x = x0.to_vec();
    for _ in 0..max_sweeps {
        let mut moved = 0.0f64;
        for j in 0..x.len() {
            let old = x[j];
            let line = |v: f64| {
                let mut y = x.clone();
                y[j] = v;
                f(&y)
            };
            x[j] = golden_max(&line, old, 0.1, tol * 1e-2);
            moved = moved.max((x[j] - old).abs());
        }
        if moved < tol {
            break;
        }
    }
    x
}

/// Newton ascent with central-difference derivatives, for smooth
/// low-dimensional objectives.
pub fn newton_max(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], h: f64) -> (Vec<f64>, DMatrix<f64>) {
    let k = x0.len();
    let mut x = x0.to_vec();
    let hess_at = |x: &[f64]| {
        let mut g = nalgebra::DVector::zeros(k);
        let mut hm = DMatrix::zeros(k, k);
        let f0 = f(x);
        let at = |d: &[(usize, f64)]| {
            let mut y = x.to_vec();
            for &(j, s) in d {
                y[j] += s;
            }
            f(&y)
        };
        for i in 0..k {
            let (fp, fm) = (at(&[(i, h)]), at(&[(i, -h)]));
            g[i] = (fp - fm) / (2.0 * h);
            hm[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in 0..i {
                let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)]) + at(&[(i, -h), (j, -h)])) / (4.0 * h * h);
                hm[(i, j)] = v;
                hm[(j, i)] = v;
            }
        }
        (g, hm)
    };
    for _ in 0..100 {
        let (g, hm) = hess_at(&x);
        let step = match (-&hm).cholesky() {
            Some(c) => c.solve(&g),
            None => g.clone() * 0.1,
        };
        let mut t = 1.0;
        let f0 = f(&x);
        let mut next: Vec<f64>;
        loop {
            next = x.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            if f(&next) >= f0 - 1e-12 || t < 1e-6 {
                break;
            }
            t *= 0.5;
        }
        let moved = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if moved < 1e-9 {
            break;
        }
    }
    let (_, hm) = hess_at(&x);
    (x, hm)
}

pub struct Conjugate {
    pub mean: DVector<f64>,
    pub sd: Vec<f64>,
    pub log_marginal: f64,
}

/// Dense conjugate posterior `u | y ~ N(H⁻¹τAᵀy, H⁻¹)` with `H = Q + τAᵀA`
/// and marginal `y ~ N(0, AQ⁻¹Aᵀ + I/τ)`.
pub fn conjugate(m: &TpjmLgm, theta: &[f64]) -> Conjugate {
    let n = m.n_latent();
    let (q_sparse, _) = m.precision(theta).unwrap();
    let q = DMatrix::from_fn(n, n, |i, j| q_sparse.get(i, j));
    let a_sparse = m.observation_matrix(theta).unwrap();
    let rows = a_sparse.n_rows();
    let mut a = DMatrix::zeros(rows, n);
    for r in 0..rows {
        let (c, v) = a_sparse.row(r);
        for (&j, &x) in c.iter().zip(v) {
            a[(r, j)] += x;
        }
    }
    let y = DVector::from_iterator(rows, m.rows.iter().map(|r| r.response));
    let tau = theta[0].exp();
    let h = &q + a.transpose() * &a * tau;
    let hinv = h.clone().try_inverse().unwrap();
    let mean = &hinv * (a.transpose() * &y * tau);
    let sd = (0..n).map(|i| hinv[(i, i)].sqrt()).collect();
    let qinv = q.try_inverse().unwrap();
    let s = &a * qinv * a.transpose() + DMatrix::identity(rows, rows) / tau;
    Conjugate { mean, sd, log_marginal: mvn_logpdf(y.as_slice(), &s) }
}

pub const NODES: usize = 60;

/// `log p(y | β, log τ_a)` by per-subject adaptive quadrature.
pub fn quad_loglik(m: &RandomInterceptGlmm, beta: &[f64], log_tau: f64) -> f64 {
    thread_local!(static GH: (Vec<f64>, Vec<f64>) = gauss_hermite(NODES));
    let s = (-0.5 * log_tau).exp();
    (0..m.n_subjects)
        .map(|i| {
            let rows = m.rows_of(i);
            let lin: Vec<f64> = rows.iter().map(|&r| m.row(r).iter().zip(beta).map(|(x, b)| x * b).sum()).collect();
            let f = |a: f64| {
                rows.iter().zip(&lin).fold((0.0, 0.0, 0.0), |acc, (&r, l)| {
                    let t = logit_terms(l + a, m.y[r]);
                    (acc.0 + t.0, acc.1 + t.1, acc.2 + t.2)
                })
            };
            GH.with(|gh| aghq_log(&f, s, gh))
        })
        .sum()
}

pub fn gauss_prior(x: f64, prec: f64) -> f64 {
    -0.5 * prec * x * x + 0.5 * (prec / (2.0 * std::f64::consts::PI)).ln()
}

struct Grid {
    nodes: Vec<Vec<f64>>,
}

impl Grid {
    fn around(centre: &[f64], sd: &[f64], width: &[f64], n: usize) -> Self {
        let nodes = (0..centre.len())
            .map(|k| (0..n).map(|i| centre[k] + sd[k] * width[k] * (2.0 * i as f64 / (n - 1) as f64 - 1.0)).collect())
            .collect();
        Self { nodes }
    }
}

/// Posterior moments of `β` under the toy model by brute force: a tensor grid
/// over `(log τ_a, β₀, β₁)` with adaptive quadrature inside each subject.
pub fn reference_posterior(m: &RandomInterceptGlmm) -> ([f64; 2], [f64; 2], [f64; 3]) {
    let log_post = |x: &[f64]| {
        quad_loglik(m, &x[1..], x[0])
            + pc_log_prec_logdensity(x[0], m.prior).unwrap()
            + x[1..].iter().map(|b| gauss_prior(*b, m.fixed_prec)).sum::<f64>()
    };
    let (mode, h) = newton_max(&log_post, &[0.0, 0.0, 0.0], 1e-3);
    let cov = (-h).try_inverse().unwrap();
    let sd: Vec<f64> = (0..3).map(|k| cov[(k, k)].sqrt()).collect();
    let grid = Grid::around(&mode, &sd, &[7.0, 6.0, 6.0], 41);
    let mut lp = Vec::new();
    for &t in &grid.nodes[0] {
        for &b0 in &grid.nodes[1] {
            for &b1 in &grid.nodes[2] {
                lp.push(log_post(&[t, b0, b1]));
            }
        }
    }
    let mx = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lp.iter().map(|l| (l - mx).exp()).collect();
    let tot: f64 = w.iter().sum();
    let n = 41;
    let (mut m1, mut m2) = ([0.0; 2], [0.0; 2]);
    let mut edge = [0.0; 3];
    for (idx, wi) in w.iter().enumerate() {
        let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
        let b = [grid.nodes[1][j], grid.nodes[2][k]];
        for c in 0..2 {
            m1[c] += wi * b[c] / tot;
            m2[c] += wi * b[c] * b[c] / tot;
        }
        for (c, v) in [i, j, k].into_iter().enumerate() {
            if v == 0 || v == n - 1 {
                edge[c] += wi / tot;
            }
        }
    }
    let sds = [(m2[0] - m1[0] * m1[0]).sqrt(), (m2[1] - m1[1] * m1[1]).sqrt()];
    (m1, sds, edge)
}

//! Hyperparameter posterior: mode search, curvature, and integration points.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::inla::inner::{GaussianApprox, InnerProblem};
use crate::lgm::LatentGaussianModel;
use crate::math::LN_2PI;

/// How the hyperparameter posterior is integrated out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Plug in the posterior mode.
    EmpiricalBayes,
    /// Tensor grid over ±3 standard deviations; at most two free hyperparameters.
    Grid,
    /// Central composite design.
    Ccd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreOptions {
    pub strategy: Strategy,
    /// Finite-difference step on the working scale.
    pub fd_step: f64,
    /// CCD radius factor.
    pub f0: f64,
    /// Evaluation budget per free hyperparameter for the mode search.
    pub evals_per_dim: usize,
    /// Largest gradient accepted at the mode, per component in units of the
    /// local posterior SD (`|g_i| / √curv_i`).
    pub grad_tol: f64,
    /// Grid spacing in standardized units.
    pub grid_step: f64,
    /// Largest step of the quasi-Newton search, in working units.
    pub max_step: f64,
    /// Shift each summarized latent marginal by the gap between its Laplace
    /// and Gaussian means at the hyperparameter mode.
    pub laplace_shift: bool,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ccd,
            fd_step: 1e-3,
            f0: 1.1,
            evals_per_dim: 200,
            grad_tol: 1e-3,
            grid_step: 0.5,
            max_step: 2.0,
            laplace_shift: false,
        }
    }
}

/// `log π̃(θ | y)` as a function of the free hyperparameters.
pub struct ThetaEvaluator<'m, M: LatentGaussianModel + ?Sized> {
    inner: InnerProblem<'m, M>,
    pub free: Vec<usize>,
    pub base: Vec<f64>,
    warm: Option<Vec<f64>>,
    pub n_evals: usize,
    pub n_failures: usize,
}

impl<'m, M: LatentGaussianModel + ?Sized> ThetaEvaluator<'m, M> {
    /// `theta` holds the start (and the values of fixed components).
    pub fn new(model: &'m M, theta: &[f64], free: &[bool]) -> Result<Self> {
        if theta.len() != model.theta_dim() || free.len() != theta.len() {
            return Err(Error::Dimension("θ and its free mask must match the model".into()));
        }
        let inner = InnerProblem::new(model, theta)?;
        Ok(Self {
            inner,
            free: (0..theta.len()).filter(|&j| free[j]).collect(),
            base: theta.to_vec(),
            warm: None,
            n_evals: 0,
            n_failures: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.free.len()
    }

    pub fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut t = self.base.clone();
        for (&j, &v) in self.free.iter().zip(x) {
            t[j] = v;
        }
        t
    }

    pub fn start(&self) -> Vec<f64> {
        self.free.iter().map(|&j| self.base[j]).collect()
    }

    /// Log posterior (up to a constant) and the Gaussian approximation.
    pub fn approx(&mut self, x: &[f64]) -> Result<(f64, GaussianApprox)> {
        self.n_evals += 1;
        let theta = self.full(x);
        let r = (|| {
            let prior = self.inner.model.log_prior_terms(&theta)?;
            let lp: f64 = self.free.iter().map(|&j| prior[j]).sum();
            let ga = self.inner.inner_mode(&theta, self.warm.as_deref())?;
            let v = lp + ga.log_ratio();
            if !v.is_finite() {
                return Err(Error::InnerNotConverged(ga.iterations));
            }
            Ok((v, ga))
        })();
        match &r {
            Ok((_, ga)) => self.warm = Some(ga.mode.clone()),
            Err(_) => self.n_failures += 1,
        }
        r
    }

    /// Failures map to `-∞`.
    pub fn log_post(&mut self, x: &[f64]) -> f64 {
        self.approx(x).map_or(f64::NEG_INFINITY, |r| r.0)
    }
}

/// Result of the mode search.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub x: Vec<f64>,
    pub log_post: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
}

fn central_grad<M: LatentGaussianModel + ?Sized>(ev: &mut ThetaEvaluator<M>, x: &[f64], fx: f64, h: f64) -> (Vec<f64>, Vec<f64>) {
    let k = x.len();
    let mut g = vec![0.0; k];
    let mut curv = vec![0.0; k];
    let mut xp = x.to_vec();
    for i in 0..k {
        xp[i] = x[i] + h;
        let fp = -ev.log_post(&xp);
        xp[i] = x[i] - h;
        let fm = -ev.log_post(&xp);
        xp[i] = x[i];
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            _ => f64::NAN,
        };
        curv[i] = if fp.is_finite() && fm.is_finite() { (fp - 2.0 * fx + fm) / (h * h) } else { f64::NAN };
    }
    (g, curv)
}

/// Quasi-Newton (BFGS) maximization of `log π̃(θ|y)` with central
/// finite-difference gradients and a backtracking line search.
/// Max-norm of the gradient scaled by the inverse square root of the
/// diagonal curvature; raw where the curvature is not positive.
fn scaled_max(g: &[f64], curv: &[f64]) -> f64 {
    g.iter()
        .zip(curv)
        .map(|(g, c)| if c.is_finite() && *c > 1e-6 { g.abs() / c.sqrt() } else { g.abs() })
        .fold(0.0, f64::max)
}

pub fn find_mode<M: LatentGaussianModel + ?Sized>(ev: &mut ThetaEvaluator<M>, opts: &ExploreOptions) -> Result<ModeResult> {
    let k = ev.k();
    let mut x = ev.start();
    let mut f = -ev.log_post(&x);
    if !f.is_finite() {
        return Err(Error::ModeSearchFailed(f64::INFINITY));
    }
    if k == 0 {
        return Ok(ModeResult { x, log_post: -f, grad: Vec::new(), iterations: 0 });
    }
    let budget = ev.n_evals + opts.evals_per_dim * k;
    let h = opts.fd_step;
    let (mut g, mut curv) = central_grad(ev, &x, f, h);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModeSearchFailed(f64::INFINITY));
    }
    let init_diag = |curv: &[f64]| DMatrix::from_fn(k, k, |i, j| {
        if i != j {
            0.0
        } else if curv[i].is_finite() && curv[i] > 1e-6 {
            1.0 / curv[i]
        } else {
            1.0
        }
    });
    let mut hinv = init_diag(&curv);
    let mut iterations = 0;
    let mut reset = false;
    while ev.n_evals < budget {
        if scaled_max(&g, &curv) < 0.1 * opts.grad_tol {
            break;
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut p = -(&hinv * &gv);
        let mut slope = p.dot(&gv);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(k, k);
            p = -gv.clone();
            slope = p.dot(&gv);
        }
        let pmax = p.amax();
        if pmax > opts.max_step {
            p *= opts.max_step / pmax;
            slope = p.dot(&gv);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let xn: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a + t * b).collect();
            let fn_ = -ev.log_post(&xn);
            if fn_.is_finite() && fn_ <= f + 1e-4 * t * slope {
                accepted = Some((xn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            // A stale quasi-Newton metric can stall the line search near the
            // mode; restart once from the diagonal curvature.
            if reset {
                break;
            }
            reset = true;
            hinv = init_diag(&curv);
            continue;
        };
        reset = false;
        let (gn, cn) = central_grad(ev, &xn, fn_, h);
        curv = cn;
        if gn.iter().any(|v| !v.is_finite()) {
            break;
        }
        let s = DVector::from_iterator(k, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(k, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        let small = (f - fn_).abs() < 1e-12 && s.amax() < 1e-9;
        x = xn;
        f = fn_;
        g = gn;
        if small {
            break;
        }
    }
    let gmax = scaled_max(&g, &curv);
    if gmax > opts.grad_tol {
        return Err(Error::ModeSearchFailed(gmax));
    }
    Ok(ModeResult { x, log_post: -f, grad: g, iterations })
}

/// Negative Hessian of `log π̃(θ|y)` at `x` by central differences.
pub fn neg_hessian<M: LatentGaussianModel + ?Sized>(ev: &mut ThetaEvaluator<M>, x: &[f64], fx: f64, h: f64) -> Result<DMatrix<f64>> {
    let k = x.len();
    let mut hm = DMatrix::zeros(k, k);
    let mut xp = x.to_vec();
    let eval = |ev: &mut ThetaEvaluator<M>, xp: &[f64]| -> Result<f64> {
        let v = ev.log_post(xp);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::ModeSearchFailed(f64::INFINITY))
        }
    };
    for i in 0..k {
        xp[i] = x[i] + h;
        let fp = eval(ev, &xp)?;
        xp[i] = x[i] - h;
        let fm = eval(ev, &xp)?;
        xp[i] = x[i];
        hm[(i, i)] = -(fp - 2.0 * fx + fm) / (h * h);
    }
    for i in 0..k {
        for j in i + 1..k {
            let mut f = [0.0; 4];
            for (n, (si, sj)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].into_iter().enumerate() {
                xp[i] = x[i] + si * h;
                xp[j] = x[j] + sj * h;
                f[n] = eval(ev, &xp)?;
            }
            xp[i] = x[i];
            xp[j] = x[j];
            let v = -(f[0] - f[1] - f[2] + f[3]) / (4.0 * h * h);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    Ok(hm)
}

/// Two-level fractional factorial of resolution at least V on `k` factors
/// (full factorial when `k <= 4`). Rows are ±1 settings.
pub fn fractional_factorial(k: usize) -> Vec<Vec<i8>> {
    if k == 0 {
        return Vec::new();
    }
    let (base, gens) = resolution_v_generators(k);
    let mut rows = Vec::with_capacity(1 << base);
    for r in 0..(1usize << base) {
        let mut row: Vec<i8> = (0..base).map(|b| if (r >> b) & 1 == 1 { 1 } else { -1 }).collect();
        for &g in &gens {
            let mut v = 1i8;
            for b in 0..base {
                if (g >> b) & 1 == 1 {
                    v *= row[b];
                }
            }
            row.push(v);
        }
        rows.push(row);
    }
    rows
}

/// Smallest base design found greedily: generator words are subsets of the
/// base factors, accepted when every word of the defining relation has
/// length at least five.
fn resolution_v_generators(k: usize) -> (usize, Vec<u32>) {
    for base in 1..=k {
        let need = k - base;
        if need == 0 {
            return (base, Vec::new());
        }
        let mut cands: Vec<u32> = (1u32..(1u32 << base)).filter(|w| w.count_ones() >= 4).collect();
        cands.sort_by_key(|w| (w.count_ones(), *w));
        let mut gens: Vec<u32> = Vec::new();
        for &c in &cands {
            let mut trial = gens.clone();
            trial.push(c);
            if defining_relation_ok(&trial) {
                gens = trial;
                if gens.len() == need {
                    return (base, gens);
                }
            }
        }
    }
    unreachable!("full factorial always qualifies")
}

/// Every nonempty product of generator words `gᵢ · xᵢ` (the generator's own
/// added factor) has length at least five.
fn defining_relation_ok(gens: &[u32]) -> bool {
    for mask in 1u32..(1u32 << gens.len()) {
        let mut word = 0u32;
        for (i, &g) in gens.iter().enumerate() {
            if (mask >> i) & 1 == 1 {
                word ^= g;
            }
        }
        if word.count_ones() + mask.count_ones() < 5 {
            return false;
        }
    }
    true
}

/// CCD points in standardized coordinates with their design weights.
/// Non-center points lie on the sphere of radius `f0 √k`.
pub fn ccd_points(k: usize, f0: f64) -> Vec<(Vec<f64>, f64)> {
    let mut pts = vec![(vec![0.0; k], 1.0)];
    if k == 0 {
        return pts;
    }
    let r = f0 * (k as f64).sqrt();
    let mut outer: Vec<Vec<f64>> = Vec::new();
    for i in 0..k {
        for s in [1.0, -1.0] {
            let mut z = vec![0.0; k];
            z[i] = s * r;
            outer.push(z);
        }
    }
    if k > 1 {
        for row in fractional_factorial(k) {
            outer.push(row.iter().map(|&v| v as f64 * r / (k as f64).sqrt()).collect());
        }
    }
    let n = outer.len() as f64;
    let delta = 1.0 / (n * (f0 * f0 - 1.0) * (-(k as f64) * f0 * f0 / 2.0).exp());
    pts.extend(outer.into_iter().map(|z| (z, delta)));
    pts
}

/// Tensor grid over `[-3, 3]^k` in standardized units.
pub fn grid_points(k: usize, step: f64) -> Vec<(Vec<f64>, f64)> {
    let half = (3.0 / step).round() as i64;
    let axis: Vec<f64> = (-half..=half).map(|i| i as f64 * step).collect();
    let mut pts = vec![(Vec::new(), 1.0)];
    for _ in 0..k {
        let mut next = Vec::with_capacity(pts.len() * axis.len());
        for (p, w) in &pts {
            for &a in &axis {
                let mut q = p.clone();
                q.push(a);
                next.push((q, *w));
            }
        }
        pts = next;
    }
    pts
}

/// One hyperparameter integration point with its latent marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPoint {
    pub theta: Vec<f64>,
    pub log_post: f64,
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub mode: Vec<f64>,
    pub mode_log_post: f64,
    pub free: Vec<usize>,
    /// Negative Hessian of the log posterior at the mode (free components).
    pub neg_hessian: DMatrix<f64>,
    pub points: Vec<ThetaPoint>,
    pub log_mlik: f64,
    pub n_evals: usize,
    pub mode_iterations: usize,
}

/// Eigenvalues are floored so the standardization stays defined when the
/// finite-difference Hessian is nearly singular.
fn standardizer(h: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let k = h.nrows();
    if k == 0 {
        return (DMatrix::zeros(0, 0), 0.0);
    }
    let eig = h.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let floor = 1e-8 * lmax;
    let mut logdet = 0.0;
    let mut s = DMatrix::zeros(k, k);
    for j in 0..k {
        let l = eig.eigenvalues[j].abs().max(floor);
        logdet += l.ln();
        for i in 0..k {
            s[(i, j)] = eig.eigenvectors[(i, j)] / l.sqrt();
        }
    }
    (s, logdet)
}

/// Mode search followed by construction of the integration points.
pub fn explore_theta<M: LatentGaussianModel + ?Sized>(model: &M, start: &[f64], free: &[bool], opts: &ExploreOptions) -> Result<Exploration> {
    let mut ev = ThetaEvaluator::new(model, start, free)?;
    let k = ev.k();
    if opts.strategy == Strategy::Grid && k > 2 {
        return Err(Error::InvalidSpec("grid integration needs at most two free hyperparameters".into()));
    }
    let mode = find_mode(&mut ev, opts)?;
    let (lp_mode, _) = ev.approx(&mode.x)?;
    let hess = if k > 0 { neg_hessian(&mut ev, &mode.x, lp_mode, opts.fd_step)? } else { DMatrix::zeros(0, 0) };
    let (scale, logdet) = standardizer(&hess);
    let log_mlik = lp_mode + 0.5 * k as f64 * LN_2PI - 0.5 * logdet;

    let design = match opts.strategy {
        Strategy::EmpiricalBayes => vec![(vec![0.0; k], 1.0)],
        Strategy::Ccd => ccd_points(k, opts.f0),
        Strategy::Grid => grid_points(k, opts.grid_step),
    };
    let mut points = Vec::with_capacity(design.len());
    let mut raw = Vec::with_capacity(design.len());
    // Evaluate the centre last so the warm start ends at the mode.
    for (z, delta) in design.iter().skip(1).chain(design.iter().take(1)) {
        let zv = DVector::from_column_slice(z);
        let off = &scale * zv;
        let x: Vec<f64> = mode.x.iter().zip(off.iter()).map(|(a, b)| a + b).collect();
        if let Ok((lp, ga)) = ev.approx(&x) {
            raw.push((ev.full(&x), lp, *delta));
            points.push(ga);
        }
    }
    if raw.is_empty() {
        return Err(Error::ModeSearchFailed(f64::INFINITY));
    }
    let lmax = raw.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let wsum: f64 = raw.iter().map(|r| r.2 * (r.1 - lmax).exp()).sum();
    let mut out = Vec::with_capacity(raw.len());
    for ((theta, lp, delta), ga) in raw.into_iter().zip(points) {
        let weight = delta * (lp - lmax).exp() / wsum;
        if weight < 1e-14 {
            continue;
        }
        let var = ga.marginal_variances();
        out.push(ThetaPoint { theta, log_post: lp, weight, mean: ga.mode, var });
    }
    let wtot: f64 = out.iter().map(|p| p.weight).sum();
    for p in &mut out {
        p.weight /= wtot;
    }
    Ok(Exploration {
        mode: ev.full(&mode.x),
        mode_log_post: lp_mode,
        free: ev.free.clone(),
        neg_hessian: hess,
        points: out,
        log_mlik,
        n_evals: ev.n_evals,
        mode_iterations: mode.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorial_columns_are_balanced_and_orthogonal() {
        for k in 2..=10 {
            let d = fractional_factorial(k);
            for a in 0..k {
                assert_eq!(d.iter().map(|r| r[a] as i32).sum::<i32>(), 0);
                for b in a + 1..k {
                    assert_eq!(d.iter().map(|r| (r[a] * r[b]) as i32).sum::<i32>(), 0);
                }
            }
        }
    }

    #[test]
    fn ccd_weights_reproduce_gaussian_second_moments() {
        for k in 1..=8 {
            let pts = ccd_points(k, 1.1);
            let w: Vec<f64> = pts.iter().map(|(z, d)| d * (-0.5 * z.iter().map(|v| v * v).sum::<f64>()).exp()).collect();
            let tot: f64 = w.iter().sum();
            for i in 0..k {
                for j in 0..k {
                    let m: f64 = pts.iter().zip(&w).map(|((z, _), w)| w * z[i] * z[j]).sum::<f64>() / tot;
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((m - want).abs() < 1e-12, "k={k} ({i},{j}) {m}");
                }
            }
        }
    }

    #[test]
    fn grid_is_symmetric() {
        let g = grid_points(1, 0.5);
        assert_eq!(g.len(), 13);
        for (a, b) in g.iter().zip(g.iter().rev()) {
            assert_eq!(a.0[0], -b.0[0]);
        }
    }
}

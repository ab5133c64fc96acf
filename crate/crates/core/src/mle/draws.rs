//! Randomized quasi-Monte-Carlo draws for the random effects.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::norm_quantile;

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % b) as f64;
        index /= b;
    }
    r
}

/// Standard-normal draws per subject, fixed for the lifetime of one fit.
///
/// Subject `i` uses the Halton points `1..=n/2` under its own Cranley-Patterson
/// shift, mapped through `Φ⁻¹`; each point is followed by its negation.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSet {
    pub n_subjects: usize,
    pub dim: usize,
    pub n_points: usize,
    z: Vec<f64>,
}

impl DrawSet {
    pub fn new(n_subjects: usize, dim: usize, n_points: usize, seed: u64) -> Result<Self> {
        if n_points < 2 || n_points % 2 != 0 {
            return Err(Error::Domain(format!("number of integration points must be even and at least 2, got {n_points}")));
        }
        if dim > PRIMES.len() {
            return Err(Error::Domain(format!("at most {} random effects supported by the draw generator", PRIMES.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = n_points / 2;
        let base: Vec<Vec<f64>> = (0..dim).map(|k| (1..=half as u64).map(|j| halton(j, PRIMES[k])).collect()).collect();
        let mut z = Vec::with_capacity(n_subjects * n_points * dim);
        let mut point = alloc::vec![0.0; dim];
        for _ in 0..n_subjects {
            let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            for j in 0..half {
                for k in 0..dim {
                    let mut u = base[k][j] + shift[k];
                    if u >= 1.0 {
                        u -= 1.0;
                    }
                    point[k] = norm_quantile(u.clamp(1e-16, 1.0 - 1e-16));
                }
                z.extend_from_slice(&point);
                z.extend(point.iter().map(|v| -v));
            }
        }
        Ok(Self { n_subjects, dim, n_points, z })
    }

    /// `n_points × dim` row-major block of subject `i`.
    pub fn subject(&self, i: usize) -> &[f64] {
        let len = self.n_points * self.dim;
        &self.z[i * len..(i + 1) * len]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(5, 3) - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-15);
    }

    #[test]
    fn antithetic_and_reproducible() {
        let a = DrawSet::new(3, 2, 10, 9).unwrap();
        assert_eq!(a, DrawSet::new(3, 2, 10, 9).unwrap());
        let s = a.subject(1);
        for q in 0..5 {
            for k in 0..2 {
                assert_eq!(s[(2 * q) * 2 + k], -s[(2 * q + 1) * 2 + k]);
            }
        }
        assert_ne!(a.subject(0), a.subject(1));
        assert!(DrawSet::new(3, 2, 7, 9).is_err());
    }

    #[test]
    fn moments_close_to_standard_normal() {
        let d = DrawSet::new(1, 3, 20000, 1).unwrap();
        let z = d.subject(0);
        for k in 0..3 {
            let v: f64 = (0..20000).map(|q| z[q * 3 + k] * z[q * 3 + k]).sum::<f64>() / 20000.0;
            assert!((v - 1.0).abs() < 5e-3, "{v}");
        }
    }
}

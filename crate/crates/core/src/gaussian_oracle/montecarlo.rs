//! Monte Carlo estimate of the normally ordered four-intensity moment for
//! jointly Gaussian classical fields.
//!
//! A complex field `z = x + iy` with real Gaussian `x`, `y` has
//! `E[z zᴴ] = Σx + Σy` and `E[z zᵀ] = Σx - Σy`. Choosing `Σx = (K + J)/2` and
//! `Σy = (K - J)/2` reproduces the phase-insensitive covariance `K` (the `R`
//! terms) and the phase-sensitive covariance `J` (the `C` terms). Both must be
//! positive semidefinite, which restricts the check to the classical regime.

use super::CorrelationModel;
use crate::error::{Error, Result};
use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct FieldSampler {
    lx: Matrix4<f64>,
    ly: Matrix4<f64>,
}

fn psd_sqrt(m: Matrix4<f64>) -> Result<Matrix4<f64>> {
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.min() < -1e-9 * scale {
        return Err(Error::InvalidModel(
            "covariance not positive semidefinite (nonclassical correlations)".into(),
        ));
    }
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix4::from_diagonal(&s))
}

impl FieldSampler {
    /// Fields at `t = [t1, t2, t3, t4]`; 1 and 2 Stokes, 3 and 4 anti-Stokes.
    pub fn new(m: &CorrelationModel, t: [f64; 4]) -> Result<Self> {
        m.validate()?;
        let mut k = Matrix4::from_diagonal_element(m.r0);
        k[(0, 1)] = m.r_s(t[0] - t[1]);
        k[(1, 0)] = k[(0, 1)];
        k[(2, 3)] = m.r_a(t[2] - t[3]);
        k[(3, 2)] = k[(2, 3)];
        let mut j = Matrix4::zeros();
        for s in 0..2 {
            for a in 2..4 {
                j[(s, a)] = m.c(t[a] - t[s]);
                j[(a, s)] = j[(s, a)];
            }
        }
        Ok(FieldSampler { lx: psd_sqrt((k + j) * 0.5)?, ly: psd_sqrt((k - j) * 0.5)? })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let mut u = Vector4::zeros();
        let mut v = Vector4::zeros();
        for i in 0..4 {
            u[i] = StandardNormal.sample(rng);
            v[i] = StandardNormal.sample(rng);
        }
        let x = self.lx * u;
        let y = self.ly * v;
        (0..4).map(|i| x[i] * x[i] + y[i] * y[i]).product()
    }

    /// Mean and standard error of `|z1|²|z2|²|z3|²|z4|²` over `samples` draws.
    /// Work is split into fixed blocks with position-derived RNG streams, so
    /// the result does not depend on the thread count.
    pub fn estimate(&self, samples: u64, seed: u64) -> (f64, f64) {
        const BLOCK: u64 = 1 << 16;
        let blocks = samples.div_ceil(BLOCK);
        let sums: Vec<(f64, f64, u64)> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b);
                let n = BLOCK.min(samples - b * BLOCK);
                let (mut s, mut s2) = (0.0, 0.0);
                for _ in 0..n {
                    let p = self.draw(&mut rng);
                    s += p;
                    s2 += p * p;
                }
                (s, s2, n)
            })
            .collect();
        let (s, s2, n) = sums.iter().fold((0.0, 0.0, 0u64), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
        let n = n as f64;
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_oracle::{g4_rate, g2_cross};

    fn model(c0: f64) -> CorrelationModel {
        CorrelationModel {
            r0: 1.0,
            c0,
            tau_c: 6.0,
            tau_0: 2.0,
            tau_s: 8.0,
            tau_a: 5.0,
            one_sided: false,
            rabi_omega: None,
        }
    }

    #[test]
    fn rejects_nonclassical() {
        assert!(FieldSampler::new(&model(2.0), [0.0, 0.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn small_sample_agrees_with_closed_form() {
        let m = model(0.7);
        let t = [0.0, 3.0, 4.0, 6.0];
        let (mean, se) = FieldSampler::new(&m, t).unwrap().estimate(400_000, 7);
        let exact = g4_rate(&m, t);
        assert!((mean - exact).abs() < 5.0 * se, "{mean} vs {exact} ± {se}");
        assert!(g2_cross(&m, 2.0) <= 2.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = FieldSampler::new(&model(0.5), [0.0; 4]).unwrap();
        assert_eq!(s.estimate(100_000, 1), s.estimate(100_000, 1));
    }
}

//! Channel-loss model and inversion of corrected detection rates into pair
//! (`g_p`) and correlated double-pair (`g_q`) generation rates.
//!
//! Forward model for per-channel detection probabilities `η_k`:
//!
//! * `c_q   = 4 g_q η1 η2 η3 η4`
//! * `c_ijk = 2 g_q η_i η_j (2 - η_k) η_k` where `i, j` share an arm
//! * `c_ij  = η_i η_j (g_p + g_q (2 - η_i)(2 - η_j))`

use crate::accidentals::CorrectedRates;
use crate::error::{Error, Result};
use nalgebra::{Matrix4, Vector4};
use std::fmt::Write as _;

/// Stokes/anti-Stokes pair channels, in the order used by pair arrays.
pub const PAIR_CHANNELS: [[u8; 2]; 4] = [[1, 3], [1, 4], [2, 3], [2, 4]];
/// Triplet channel sets, in the order used by triplet arrays.
pub const TRIPLET_CHANNELS: [[u8; 3]; 4] = [[1, 2, 3], [1, 2, 4], [1, 3, 4], [2, 3, 4]];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencySet {
    /// Measured per-channel efficiencies `η′_k`.
    pub eta_prime: [f64; 4],
    pub eta_s: f64,
    pub eta_a: f64,
}

impl EfficiencySet {
    pub fn new(eta_prime: [f64; 4], eta_s: f64, eta_a: f64) -> Result<Self> {
        let e = EfficiencySet { eta_prime, eta_s, eta_a };
        e.validate()?;
        Ok(e)
    }

    /// Total efficiencies with no separate arm factors.
    pub fn from_totals(eta: [f64; 4]) -> Result<Self> {
        Self::new(eta, 1.0, 1.0)
    }

    pub fn totals(&self) -> [f64; 4] {
        let [a, b, c, d] = self.eta_prime;
        [a * self.eta_s, b * self.eta_s, c * self.eta_a, d * self.eta_a]
    }

    pub fn validate(&self) -> Result<()> {
        for (k, &e) in self.totals().iter().enumerate() {
            if !(e > 0.0) {
                return Err(Error::ZeroEfficiency(k as u8 + 1));
            }
            if e > 1.0 {
                return Err(Error::DegenerateInput(format!("efficiency of channel {} exceeds 1", k + 1)));
            }
        }
        let t = self.totals();
        if t[0] + t[1] > 1.0 + 1e-12 || t[2] + t[3] > 1.0 + 1e-12 {
            return Err(Error::DegenerateInput("per-arm efficiencies sum above 1".into()));
        }
        Ok(())
    }
}

fn check_eta(eta: &[f64; 4]) -> Result<()> {
    for (k, &e) in eta.iter().enumerate() {
        if !(e > 0.0) {
            return Err(Error::ZeroEfficiency(k as u8 + 1));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationRates {
    pub g_p: f64,
    pub g_q: f64,
    /// Set when a negative estimate was clamped to zero.
    pub clamped: bool,
}

impl GenerationRates {
    pub fn clamped(g_p: f64, g_q: f64) -> Self {
        GenerationRates { g_p: g_p.max(0.0), g_q: g_q.max(0.0), clamped: g_p < 0.0 || g_q < 0.0 }
    }
}

/// Noiseless corrected rates implied by generation rates and efficiencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedRates {
    /// In [`PAIR_CHANNELS`] order.
    pub pairs: [f64; 4],
    /// In [`TRIPLET_CHANNELS`] order.
    pub triplets: [f64; 4],
    pub quad: f64,
}

pub fn predicted_rates(g_p: f64, g_q: f64, eta: [f64; 4]) -> PredictedRates {
    let e = |c: u8| eta[(c - 1) as usize];
    let pairs = PAIR_CHANNELS.map(|[i, j]| e(i) * e(j) * (g_p + g_q * (2.0 - e(i)) * (2.0 - e(j))));
    let triplets = TRIPLET_CHANNELS.map(|[i, j, k]| {
        // i, j share an arm except for the anti-Stokes pairs 134 and 234
        let (pi, pj, odd) = if i <= 2 && j <= 2 { (i, j, k) } else { (j, k, i) };
        2.0 * g_q * e(pi) * e(pj) * (2.0 - e(odd)) * e(odd)
    });
    PredictedRates { pairs, triplets, quad: 4.0 * g_q * eta.iter().product::<f64>() }
}

/// Arithmetic mean and sample standard deviation of per-equation estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub values: [f64; 4],
    pub mean: f64,
    pub spread: f64,
}

impl Estimate {
    fn from_values(values: [f64; 4]) -> Self {
        let mean = values.iter().sum::<f64>() / 4.0;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        Estimate { values, mean, spread: var.sqrt() }
    }
}

pub fn gq_from_quadruplets(c_q: f64, eta: [f64; 4]) -> Result<f64> {
    check_eta(&eta)?;
    Ok(c_q / (4.0 * eta.iter().product::<f64>()))
}

/// One `g_q` per triplet equation, in [`TRIPLET_CHANNELS`] order.
pub fn gq_from_triplets(c_ijk: [f64; 4], eta: [f64; 4]) -> Result<Estimate> {
    check_eta(&eta)?;
    let unit = predicted_rates(0.0, 1.0, eta).triplets;
    Ok(Estimate::from_values(std::array::from_fn(|i| c_ijk[i] / unit[i])))
}

/// One `g_p` per pair equation, in [`PAIR_CHANNELS`] order.
pub fn gp_from_pairs(c_ij: [f64; 4], g_q: f64, eta: [f64; 4]) -> Result<Estimate> {
    check_eta(&eta)?;
    let e = |c: u8| eta[(c - 1) as usize];
    Ok(Estimate::from_values(std::array::from_fn(|n| {
        let [i, j] = PAIR_CHANNELS[n];
        c_ij[n] / (e(i) * e(j)) - g_q * (2.0 - e(i)) * (2.0 - e(j))
    })))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmFit {
    pub eta_s: f64,
    pub eta_a: f64,
    pub g_p: f64,
    pub g_q: f64,
    /// Euclidean norm of the nine relative residuals at the optimum.
    pub residual_norm: f64,
    pub iterations: usize,
}

impl ArmFit {
    pub fn totals(&self, eta_prime: [f64; 4]) -> [f64; 4] {
        EfficiencySet { eta_prime, eta_s: self.eta_s, eta_a: self.eta_a }.totals()
    }
}

const MAX_ITER: usize = 200;
const STEP_TOL: f64 = 1e-9;

fn fit_residuals(p: &Vector4<f64>, obs: &[f64; 9], eta_prime: [f64; 4]) -> [f64; 9] {
    let (es, ea, gp, gq) = (p[0].exp(), p[1].exp(), p[2].exp(), p[3].exp());
    let eta = [eta_prime[0] * es, eta_prime[1] * es, eta_prime[2] * ea, eta_prime[3] * ea];
    let m = predicted_rates(gp, gq, eta);
    let model = [
        m.pairs[0], m.pairs[1], m.pairs[2], m.pairs[3],
        m.triplets[0], m.triplets[1], m.triplets[2], m.triplets[3],
        m.quad,
    ];
    std::array::from_fn(|i| model[i] / obs[i] - 1.0)
}

fn norm2(r: &[f64; 9]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Joint least-squares fit of arm factors and generation rates to the nine
/// corrected rates, on relative residuals. Parameters are fitted in log space
/// with Levenberg-Marquardt; the start is `η_s = η_a = 0.5` with `g_q`, `g_p`
/// seeded from the closed-form estimators.
pub fn fit_arm_losses(
    c_ij: [f64; 4],
    c_ijk: [f64; 4],
    c_q: f64,
    eta_prime: [f64; 4],
) -> Result<ArmFit> {
    check_eta(&eta_prime)?;
    let obs: [f64; 9] = [
        c_ij[0], c_ij[1], c_ij[2], c_ij[3], c_ijk[0], c_ijk[1], c_ijk[2], c_ijk[3], c_q,
    ];
    if let Some((i, v)) = obs.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::DegenerateInput(format!("rate #{} is {v}, must be positive", i + 1)));
    }
    let eta0 = EfficiencySet { eta_prime, eta_s: 0.5, eta_a: 0.5 }.totals();
    let gq0 = gq_from_quadruplets(c_q, eta0)?;
    let gp0 = gp_from_pairs(c_ij, gq0, eta0)?.mean;
    let gp0 = if gp0 > 0.0 { gp0 } else { gq0 };
    let mut p = Vector4::new(0.5f64.ln(), 0.5f64.ln(), gp0.ln(), gq0.ln());
    let mut r = fit_residuals(&p, &obs, eta_prime);
    let mut cost = norm2(&r);
    let mut lambda = 1e-3;
    let mut last_step = f64::INFINITY;

    for iter in 1..=MAX_ITER {
        // forward-difference Jacobian in log space
        let mut jac = [[0.0; 4]; 9];
        for k in 0..4 {
            let h = 1e-7 * (1.0 + p[k].abs());
            let mut q = p;
            q[k] += h;
            let rq = fit_residuals(&q, &obs, eta_prime);
            for i in 0..9 {
                jac[i][k] = (rq[i] - r[i]) / h;
            }
        }
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for i in 0..9 {
            for a in 0..4 {
                jtr[a] += jac[i][a] * r[i];
                for b in 0..4 {
                    jtj[(a, b)] += jac[i][a] * jac[i][b];
                }
            }
        }
        loop {
            let mut lhs = jtj;
            for a in 0..4 {
                lhs[(a, a)] += lambda * jtj[(a, a)].max(1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    return Err(Error::NoConvergence { iterations: iter, last_step });
                }
                continue;
            };
            let q = p + step;
            let rq = fit_residuals(&q, &obs, eta_prime);
            let cq = norm2(&rq);
            if cq <= cost || step.norm() < STEP_TOL {
                last_step = step.norm();
                p = q;
                r = rq;
                cost = cq.min(cost);
                lambda = (lambda * 0.3).max(1e-12);
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                last_step = step.norm();
                break;
            }
        }
        if last_step < STEP_TOL {
            return Ok(ArmFit {
                eta_s: p[0].exp(),
                eta_a: p[1].exp(),
                g_p: p[2].exp(),
                g_q: p[3].exp(),
                residual_norm: norm2(&r).sqrt(),
                iterations: iter,
            });
        }
    }
    Err(Error::NoConvergence { iterations: MAX_ITER, last_step })
}

/// Full inference from corrected rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub eta: [f64; 4],
    pub c_pairs: [f64; 4],
    pub c_triplets: [f64; 4],
    pub c_q: f64,
    pub gq_quad: f64,
    pub gq_triplets: Estimate,
    pub gp_pairs: Estimate,
    /// Triplet-mean `g_q` and the pair-mean `g_p` that uses it, clamped at 0.
    pub rates: GenerationRates,
    pub arm_fit: Option<ArmFit>,
}

fn corrected_arrays(c: &CorrectedRates) -> ([f64; 4], [f64; 4]) {
    (PAIR_CHANNELS.map(|p| c.c(&p)), TRIPLET_CHANNELS.map(|t| c.c(&t)))
}

/// Closed-form inference with known total efficiencies.
pub fn infer(c: &CorrectedRates, eta: [f64; 4]) -> Result<Inference> {
    let (c_pairs, c_triplets) = corrected_arrays(c);
    let gq_quad = gq_from_quadruplets(c.c_q(), eta)?;
    let gq_triplets = gq_from_triplets(c_triplets, eta)?;
    let gp_pairs = gp_from_pairs(c_pairs, gq_triplets.mean, eta)?;
    Ok(Inference {
        eta,
        c_pairs,
        c_triplets,
        c_q: c.c_q(),
        gq_quad,
        gq_triplets,
        gp_pairs,
        rates: GenerationRates::clamped(gp_pairs.mean, gq_triplets.mean),
        arm_fit: None,
    })
}

/// Fits the arm factors first, then runs the closed-form inference with the
/// fitted total efficiencies.
pub fn infer_with_arm_fit(c: &CorrectedRates, eta_prime: [f64; 4]) -> Result<Inference> {
    let (c_pairs, c_triplets) = corrected_arrays(c);
    let fit = fit_arm_losses(c_pairs, c_triplets, c.c_q(), eta_prime)?;
    let mut inf = infer(c, fit.totals(eta_prime))?;
    inf.arm_fit = Some(fit);
    Ok(inf)
}

impl Inference {
    /// Flat `key = value` report.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for (k, e) in self.eta.iter().enumerate() {
            let _ = writeln!(s, "eta{} = {e:.6}", k + 1);
        }
        if let Some(f) = &self.arm_fit {
            let _ = writeln!(s, "fit.eta_s = {:.6}", f.eta_s);
            let _ = writeln!(s, "fit.eta_a = {:.6}", f.eta_a);
            let _ = writeln!(s, "fit.g_p = {:.6e}", f.g_p);
            let _ = writeln!(s, "fit.g_q = {:.6e}", f.g_q);
            let _ = writeln!(s, "fit.residual_norm = {:.3e}", f.residual_norm);
            let _ = writeln!(s, "fit.iterations = {}", f.iterations);
        }
        for (n, [i, j]) in PAIR_CHANNELS.iter().enumerate() {
            let _ = writeln!(s, "c{i}{j} = {:.6e}", self.c_pairs[n]);
            let _ = writeln!(s, "g_p.from_c{i}{j} = {:.6e}", self.gp_pairs.values[n]);
        }
        for (n, [i, j, k]) in TRIPLET_CHANNELS.iter().enumerate() {
            let _ = writeln!(s, "c{i}{j}{k} = {:.6e}", self.c_triplets[n]);
            let _ = writeln!(s, "g_q.from_c{i}{j}{k} = {:.6e}", self.gq_triplets.values[n]);
        }
        let _ = writeln!(s, "c_q = {:.6e}", self.c_q);
        let _ = writeln!(s, "g_q.from_c_q = {:.6e}", self.gq_quad);
        let _ = writeln!(s, "g_q.triplet_mean = {:.6e}", self.gq_triplets.mean);
        let _ = writeln!(s, "g_q.triplet_spread = {:.6e}", self.gq_triplets.spread);
        let _ = writeln!(s, "g_p.pair_mean = {:.6e}", self.gp_pairs.mean);
        let _ = writeln!(s, "g_p.pair_spread = {:.6e}", self.gp_pairs.spread);
        let _ = writeln!(s, "g_p = {:.6e}", self.rates.g_p);
        let _ = writeln!(s, "g_q = {:.6e}", self.rates.g_q);
        let _ = writeln!(s, "clamped = {}", self.rates.clamped);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const REFERENCE_ETA: [f64; 4] = [0.022, 0.023, 0.025, 0.021];

    #[test]
    fn quadruplet_inversion() {
        assert_eq!(gq_from_quadruplets(0.0, REFERENCE_ETA).unwrap(), 0.0);
        let u = 4.0 * REFERENCE_ETA.iter().product::<f64>();
        assert!((gq_from_quadruplets(u, REFERENCE_ETA).unwrap() - 1.0).abs() < 1e-12);
        let g = gq_from_quadruplets(2.9, REFERENCE_ETA).unwrap();
        assert!((g / 2.7e6 - 1.0).abs() < 0.03, "{g}");
        assert_eq!(gq_from_quadruplets(1.0, [0.1, 0.0, 0.1, 0.1]), Err(Error::ZeroEfficiency(2)));
    }

    #[test]
    fn triplet_and_pair_inversion() {
        assert_eq!(gq_from_triplets([0.0; 4], REFERENCE_ETA).unwrap().mean, 0.0);
        let [e1, _, e3, e4] = REFERENCE_ETA;
        let c134 = 2.0 * e3 * e4 * (2.0 - e1) * e1;
        let est = gq_from_triplets([0.0, 0.0, c134, 0.0], REFERENCE_ETA).unwrap();
        assert!((est.values[2] - 1.0).abs() < 1e-12);
        let gp = gp_from_pairs([e1 * e3, 0.0, 0.0, 0.0], 0.0, REFERENCE_ETA).unwrap();
        assert!((gp.values[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn published_scale_pair_inversion() {
        // c_p split over the four combinations in proportion to η_i η_j
        let w: Vec<f64> = PAIR_CHANNELS.iter().map(|[i, j]| REFERENCE_ETA[*i as usize - 1] * REFERENCE_ETA[*j as usize - 1]).collect();
        let tot: f64 = w.iter().sum();
        let c = std::array::from_fn(|n| 4.8e4 * w[n] / tot);
        let gp = gp_from_pairs(c, 2.5e6, REFERENCE_ETA).unwrap();
        assert!((gp.mean / 1.3e7 - 1.0).abs() < 0.1, "{}", gp.mean);
    }

    #[test]
    fn fit_exact_recovery() {
        let eta_prime = [0.078, 0.083, 0.080, 0.067];
        let (es, ea, gp, gq) = (0.28, 0.31, 1.3e7, 2.5e6);
        let eta = EfficiencySet::new(eta_prime, es, ea).unwrap().totals();
        let m = predicted_rates(gp, gq, eta);
        let f = fit_arm_losses(m.pairs, m.triplets, m.quad, eta_prime).unwrap();
        assert!(f.residual_norm < 1e-8, "{f:?}");
        assert!((f.eta_s / es - 1.0).abs() < 1e-6);
        assert!((f.eta_a / ea - 1.0).abs() < 1e-6);
        assert!((f.g_p / gp - 1.0).abs() < 1e-6);
        assert!((f.g_q / gq - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fit_perturbation() {
        let eta_prime = [0.078, 0.083, 0.080, 0.067];
        let eta = EfficiencySet::new(eta_prime, 0.28, 0.31).unwrap().totals();
        let m = predicted_rates(1.3e7, 2.5e6, eta);
        let base = fit_arm_losses(m.pairs, m.triplets, m.quad, eta_prime).unwrap();
        let mut t = m.triplets;
        t[2] *= 1.05;
        let f = fit_arm_losses(m.pairs, t, m.quad, eta_prime).unwrap();
        assert!(f.residual_norm > base.residual_norm);
        for (a, b) in [(f.eta_s, base.eta_s), (f.eta_a, base.eta_a), (f.g_p, base.g_p), (f.g_q, base.g_q)] {
            assert!((a / b - 1.0).abs() < 0.1, "{a} vs {b}");
        }
    }

    #[test]
    fn fit_rejects_nonpositive() {
        let r = fit_arm_losses([1.0; 4], [1.0, 1.0, 0.0, 1.0], 1.0, [0.1; 4]);
        assert!(matches!(r, Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn clamping_flags() {
        let g = GenerationRates::clamped(1.0, -2.0);
        assert_eq!((g.g_p, g.g_q, g.clamped), (1.0, 0.0, true));
    }

    #[test]
    fn efficiency_validation() {
        assert!(EfficiencySet::from_totals([0.6, 0.5, 0.1, 0.1]).is_err());
        assert!(EfficiencySet::from_totals([0.5, 0.5, 0.1, 0.1]).is_ok());
        assert_eq!(EfficiencySet::from_totals([0.5, 0.5, 0.0, 0.1]), Err(Error::ZeroEfficiency(3)));
    }

    proptest! {
        #[test]
        fn round_trip_and_scale_covariance(
            gp in 1e3f64..1e8, gq in 1e2f64..1e7, eta in prop::array::uniform4(0.005f64..0.5), lam in 0.1f64..10.0,
        ) {
            let m = predicted_rates(gp, gq, eta);
            let q = gq_from_quadruplets(m.quad, eta).unwrap();
            let t = gq_from_triplets(m.triplets, eta).unwrap();
            prop_assert!((q / gq - 1.0).abs() < 1e-10);
            prop_assert!((t.mean / gq - 1.0).abs() < 1e-10);
            prop_assert!((q / t.mean - 1.0).abs() < 1e-12);
            let p = gp_from_pairs(m.pairs, t.mean, eta).unwrap();
            prop_assert!((p.mean / gp - 1.0).abs() < 1e-10 * (1.0 + gq / gp));

            let s = |a: [f64; 4]| a.map(|x| x * lam);
            let t2 = gq_from_triplets(s(m.triplets), eta).unwrap();
            let p2 = gp_from_pairs(s(m.pairs), t2.mean, eta).unwrap();
            prop_assert!((t2.mean / (lam * t.mean) - 1.0).abs() < 1e-12);
            prop_assert!((p2.mean / (lam * p.mean) - 1.0).abs() < 1e-9);
        }
    }
}

//! Analytic correlation functions for Gaussian (parametric) pair sources.
//!
//! Times are in nanoseconds and rates in counts per second. The first-order
//! cross-correlation `C` is evaluated at `t_anti - t_stokes`; the
//! auto-correlations `R` are even in their argument.

mod montecarlo;

pub use montecarlo::FieldSampler;

use crate::error::{Error, Result};
use crate::tagstream::Arm;

/// Exponential first-order correlation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationModel {
    /// `R(0)`, the pair generation rate.
    pub r0: f64,
    /// Peak cross-correlation amplitude; may exceed `r0` (nonclassical).
    pub c0: f64,
    pub tau_c: f64,
    pub tau_0: f64,
    pub tau_s: f64,
    pub tau_a: f64,
    /// Zero cross-correlation before `tau_0` when set.
    pub one_sided: bool,
    /// Optional `cos²(ω·(τ-τ₀)/2)` modulation of `C`, angular frequency in rad/ns.
    pub rabi_omega: Option<f64>,
}

impl CorrelationModel {
    /// Two-sided model with equal auto-correlation times `tau_c`, offset
    /// `tau_0`, and cross amplitude set from the peak `g2_cross`.
    pub fn from_peak_g2(r0: f64, g2_peak: f64, tau_c: f64, tau_0: f64) -> Result<Self> {
        if g2_peak < 1.0 {
            return Err(Error::DomainError(g2_peak));
        }
        let m = CorrelationModel {
            r0,
            c0: r0 * (g2_peak - 1.0).sqrt(),
            tau_c,
            tau_0,
            tau_s: tau_c,
            tau_a: tau_c,
            one_sided: false,
            rabi_omega: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidModel(what.to_string()));
        if !(self.r0 > 0.0) || !self.r0.is_finite() {
            return bad("R0 must be positive");
        }
        if !(self.c0 >= 0.0) || !self.c0.is_finite() {
            return bad("C0 must be non-negative");
        }
        for t in [self.tau_c, self.tau_s, self.tau_a] {
            if !(t > 0.0) || !t.is_finite() {
                return bad("decay times must be positive");
            }
        }
        if !self.tau_0.is_finite() {
            return bad("offset must be finite");
        }
        Ok(())
    }

    /// Cross-correlation at `tau = t_anti - t_stokes`.
    pub fn c(&self, tau: f64) -> f64 {
        let d = tau - self.tau_0;
        if self.one_sided && d < 0.0 {
            return 0.0;
        }
        let mut v = self.c0 * (-d.abs() / self.tau_c).exp();
        if let Some(w) = self.rabi_omega {
            v *= (0.5 * w * d).cos().powi(2);
        }
        v
    }

    /// Auto-correlation of one arm.
    pub fn r(&self, arm: Arm, tau: f64) -> f64 {
        let t = match arm {
            Arm::Stokes => self.tau_s,
            Arm::AntiStokes => self.tau_a,
        };
        self.r0 * (-tau.abs() / t).exp()
    }

    pub fn r_s(&self, tau: f64) -> f64 {
        self.r(Arm::Stokes, tau)
    }

    pub fn r_a(&self, tau: f64) -> f64 {
        self.r(Arm::AntiStokes, tau)
    }
}

pub fn g2_cross(m: &CorrelationModel, tau: f64) -> f64 {
    1.0 + (m.c(tau) / m.r0).powi(2)
}

pub fn g2_auto(m: &CorrelationModel, tau: f64, arm: Arm) -> f64 {
    1.0 + (m.r(arm, tau) / m.r0).powi(2)
}

/// Normalized triple correlation written through pairwise `g2` values.
pub fn g3_reduced(g2_as_3s: f64, g2_as_4s: f64, g2_aa_34: f64) -> Result<f64> {
    for g in [g2_as_3s, g2_as_4s, g2_aa_34] {
        if !(g >= 1.0) {
            return Err(Error::DomainError(g));
        }
    }
    Ok(g2_aa_34 + g2_as_3s + g2_as_4s - 2.0
        + 2.0 * (g2_as_3s - 1.0).sqrt() * (g2_as_4s - 1.0).sqrt() * (g2_aa_34 - 1.0).sqrt())
}

/// The five terms of the anti-Stokes/anti-Stokes/Stokes triple rate, with
/// `tau_3s = t3 - ts`, `tau_4s = t4 - ts`, `tau_34 = t3 - t4`.
pub fn g3_terms(m: &CorrelationModel, tau_3s: f64, tau_4s: f64, tau_34: f64) -> [f64; 5] {
    let r0 = m.r0;
    let (c3, c4, r34) = (m.c(tau_3s), m.c(tau_4s), m.r_a(tau_34));
    [r0 * r0 * r0, r0 * r34 * r34, r0 * c3 * c3, r0 * c4 * c4, 2.0 * c3 * c4 * r34]
}

pub fn g3_rate(m: &CorrelationModel, tau_3s: f64, tau_4s: f64, tau_34: f64) -> f64 {
    g3_terms(m, tau_3s, tau_4s, tau_34).iter().sum()
}

/// Normalized `g3` from the model: `G3 / R0³`.
pub fn g3_model(m: &CorrelationModel, tau_3s: f64, tau_4s: f64) -> f64 {
    g3_rate(m, tau_3s, tau_4s, tau_3s - tau_4s) / m.r0.powi(3)
}

/// The 17 terms of the two-Stokes/two-anti-Stokes rate at absolute times
/// `t = [t1, t2, t3, t4]` (1, 2 Stokes; 3, 4 anti-Stokes), in listing order.
pub fn g4_terms(m: &CorrelationModel, t: [f64; 4]) -> [f64; 17] {
    let [t1, t2, t3, t4] = t;
    let r0 = m.r0;
    let r43 = m.r_a(t4 - t3);
    let r21 = m.r_s(t2 - t1);
    let c13 = m.c(t3 - t1);
    let c14 = m.c(t4 - t1);
    let c23 = m.c(t3 - t2);
    let c24 = m.c(t4 - t2);
    let r02 = r0 * r0;
    [
        r02 * r02,
        r02 * r43 * r43,
        r02 * r21 * r21,
        r02 * c23 * c23,
        r02 * c24 * c24,
        r02 * c13 * c13,
        r02 * c14 * c14,
        2.0 * r0 * r43 * c24 * c23,
        2.0 * r0 * r43 * c14 * c13,
        2.0 * r0 * r21 * c14 * c24,
        2.0 * r0 * r21 * c13 * c23,
        r43 * r43 * r21 * r21,
        c13 * c13 * c24 * c24,
        c14 * c14 * c23 * c23,
        2.0 * c24 * c13 * c14 * c23,
        2.0 * r43 * r21 * c24 * c13,
        2.0 * r43 * r21 * c23 * c14,
    ]
}

pub fn g4_rate(m: &CorrelationModel, t: [f64; 4]) -> f64 {
    g4_terms(m, t).iter().sum()
}

/// Same as [`g4_rate`] from the six pairwise delays `τ_ij = t_i - t_j`.
/// The delays must come from four absolute times.
pub fn g4_rate_from_delays(
    m: &CorrelationModel,
    tau_34: f64,
    tau_24: f64,
    tau_14: f64,
    tau_23: f64,
    tau_21: f64,
    tau_13: f64,
) -> Result<f64> {
    let t = [tau_14, tau_24, tau_34, 0.0];
    let scale = [tau_34, tau_24, tau_14, tau_23, tau_21, tau_13]
        .iter()
        .fold(1.0f64, |a, b| a.max(b.abs()));
    let tol = 1e-9 * scale;
    let consistent = (t[1] - t[2] - tau_23).abs() <= tol
        && (t[1] - t[0] - tau_21).abs() <= tol
        && (t[0] - t[2] - tau_13).abs() <= tol;
    if !consistent {
        return Err(Error::InconsistentDelays);
    }
    Ok(g4_rate(m, t))
}

/// Normalized `g4`: `G4 / R0⁴`.
pub fn g4_model(m: &CorrelationModel, t: [f64; 4]) -> f64 {
    g4_rate(m, t) / m.r0.powi(4)
}

/// Photon-number distribution of the two-mode squeezed vacuum:
/// `P_n = tanh²ⁿζ / cosh²ζ`.
pub fn pn_squeezed(zeta: f64, n: u32) -> f64 {
    if zeta == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let ln = 2.0 * n as f64 * zeta.tanh().ln() - 2.0 * zeta.cosh().ln();
    ln.exp()
}

/// Poisson pair-number distribution `e^{-μ} μⁿ / n!`.
pub fn pn_poisson(mu: f64, n: u32) -> f64 {
    if mu == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let ln_fact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
    (n as f64 * mu.ln() - mu - ln_fact).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(r0: f64, c0: f64) -> CorrelationModel {
        CorrelationModel {
            r0,
            c0,
            tau_c: 16.0,
            tau_0: 8.0,
            tau_s: 16.0,
            tau_a: 16.0,
            one_sided: false,
            rabi_omega: None,
        }
    }

    #[test]
    fn g2_examples() {
        let m = model(1.0, 0.0);
        assert_eq!(g2_cross(&m, 3.0), 1.0);
        let m = model(1.0, 2.0);
        assert_eq!(g2_cross(&m, 8.0), 5.0);
        assert_eq!(g2_cross(&model(3.0, 3.0), 8.0), 2.0);
        assert!(g2_cross(&m, 1e4) - 1.0 < 1e-12);
        assert_eq!(g2_auto(&m, 0.0, Arm::Stokes), 2.0);
        let t = 16.0 * 2f64.ln();
        assert!((g2_auto(&m, t, Arm::AntiStokes) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn one_sided_and_modulation() {
        let mut m = model(1.0, 1.0);
        m.one_sided = true;
        assert_eq!(m.c(7.9), 0.0);
        assert_eq!(m.c(8.0), 1.0);
        m.rabi_omega = Some(std::f64::consts::PI);
        assert!(m.c(9.0).abs() < 1e-12);
    }

    #[test]
    fn g3_reduced_examples() {
        assert_eq!(g3_reduced(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(g3_reduced(5.0, 5.0, 2.0).unwrap(), 18.0);
        assert_eq!(g3_reduced(7.0, 1.0, 1.0).unwrap(), 7.0);
        assert_eq!(g3_reduced(0.5, 1.0, 1.0), Err(Error::DomainError(0.5)));
    }

    #[test]
    fn g3_limits() {
        let m = model(2.0, 3.0);
        assert!((g3_rate(&m, 1e5, -1e5, 2e5) - 8.0).abs() < 1e-9);
        assert!((g3_rate(&m, 1e5, 1e5, 0.0) - 16.0).abs() < 1e-9);
    }

    #[test]
    fn g4_limits() {
        let m = model(1.5, 1.0);
        let far = 1e5;
        let r4 = 1.5f64.powi(4);
        assert!((g4_rate(&m, [0.0, far, 2.0 * far, 3.0 * far]) - r4).abs() < 1e-9);
        // both arms bunched, arms far apart: terms 1, 2, 3 and 12
        let v = g4_rate(&m, [0.0, 0.0, far, far]);
        assert!((v - 4.0 * r4).abs() < 1e-9, "{v}");
        let terms = g4_terms(&m, [0.0, 0.0, far, far]);
        let live: Vec<usize> = (0..17).filter(|&i| terms[i] > 1e-12).collect();
        assert_eq!(live, vec![0, 1, 2, 11]);
    }

    #[test]
    fn g4_delay_form() {
        let m = model(1.0, 0.8);
        let t = [1.0, -2.0, 9.0, 12.5];
        let d = |i: usize, j: usize| t[i - 1] - t[j - 1];
        let v = g4_rate_from_delays(&m, d(3, 4), d(2, 4), d(1, 4), d(2, 3), d(2, 1), d(1, 3)).unwrap();
        assert!((v - g4_rate(&m, t)).abs() < 1e-12);
        let bad = g4_rate_from_delays(&m, d(3, 4), d(2, 4), d(1, 4), d(2, 3) + 1.0, d(2, 1), d(1, 3));
        assert_eq!(bad, Err(Error::InconsistentDelays));
    }

    #[test]
    fn pn_examples() {
        assert_eq!(pn_squeezed(0.0, 0), 1.0);
        assert_eq!(pn_squeezed(0.0, 3), 0.0);
        let z = 1e-3;
        let ratio_sq = pn_squeezed(z, 2) / pn_squeezed(z, 1).powi(2);
        let ratio_po = pn_poisson(z, 2) / pn_poisson(z, 1).powi(2);
        assert!((ratio_sq - 1.0).abs() < 1e-5);
        assert!((ratio_po - 0.5).abs() < 1e-3);
        assert!((ratio_sq / ratio_po - 2.0).abs() < 1e-2);
    }

    proptest! {
        #[test]
        fn pn_normalized(zeta in 0.0f64..1.2, mu in 0.0f64..20.0) {
            let s: f64 = (0..=200).map(|n| pn_squeezed(zeta, n)).sum();
            let p: f64 = (0..=200).map(|n| pn_poisson(mu, n)).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!((p - 1.0).abs() < 1e-12);
        }

        #[test]
        fn g3_rate_matches_reduced(
            r0 in 0.1f64..10.0, k in prop_oneof![Just(0.0), 0.3f64..5.0], tc in 0.5f64..30.0,
            t0 in -10.0f64..10.0, s in 1.0f64..3.0, u in -3.0f64..3.0, w in -3.0f64..3.0,
            one in any::<bool>(),
        ) {
            // delays within a few decay times, so every g2 - 1 stays well above
            // rounding; the g-form cannot recover g - 1 once it nears 1 ulp
            let (a, b, ta) = (t0 + u * tc, t0 + w * tc, s * tc);
            let m = CorrelationModel { r0, c0: k * r0, tau_c: tc, tau_0: t0, tau_s: ta, tau_a: ta, one_sided: one, rabi_omega: None };
            let lhs = g3_rate(&m, a, b, a - b) / r0.powi(3);
            let rhs = g3_reduced(g2_cross(&m, a), g2_cross(&m, b), g2_auto(&m, a - b, Arm::AntiStokes)).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs);
        }

        #[test]
        fn g4_label_swaps(
            r0 in 0.1f64..10.0, k in 0.0f64..3.0, t in prop::array::uniform4(-40.0f64..40.0),
        ) {
            let m = CorrelationModel { r0, c0: k * r0, tau_c: 7.0, tau_0: 3.0, tau_s: 11.0, tau_a: 5.0, one_sided: false, rabi_omega: None };
            let v = g4_rate(&m, t);
            let s12 = g4_rate(&m, [t[1], t[0], t[2], t[3]]);
            let s34 = g4_rate(&m, [t[0], t[1], t[3], t[2]]);
            prop_assert!((v - s12).abs() <= 1e-12 * v);
            prop_assert!((v - s34).abs() <= 1e-12 * v);
        }

        #[test]
        fn g3_reduced_peak_identity(g in 1.0f64..1e3) {
            let v = g3_reduced(g, g, 2.0).unwrap();
            prop_assert!((v - (4.0 * g - 2.0)).abs() <= 1e-12 * v);
        }
    }

    #[test]
    fn normalized_correlations_decay_to_one() {
        let m = model(1.0, 2.0);
        let far = 1e4;
        assert!((g3_model(&m, far, -far) - 1.0).abs() < 1e-12);
        assert!((g4_model(&m, [0.0, far, 2.0 * far, 3.0 * far]) - 1.0).abs() < 1e-12);
    }
}

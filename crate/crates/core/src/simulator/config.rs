use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Source emission parameters. Times in ns, rates in events per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// Pair emission rate.
    pub g_p: f64,
    /// Correlated double-pair emission rate.
    pub g_q: f64,
    /// Decay constant of the Stokes to anti-Stokes delay.
    pub tau_c_ns: f64,
    /// Fixed part of the Stokes to anti-Stokes delay.
    pub tau_0_ns: f64,
    /// Scale of the Stokes-Stokes separation inside a double pair.
    pub tau_b_ns: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig { g_p: 1.3e7, g_q: 2.5e6, tau_c_ns: 16.0, tau_0_ns: 8.0, tau_b_ns: 16.0 }
    }
}

/// Uncorrelated light. Arm backgrounds are photons per second before the
/// detectors; dark counts are clicks per second per detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundConfig {
    pub bg_s: f64,
    pub bg_a: f64,
    pub dark: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Detection probability per channel, including arm transmission and
    /// beam splitting.
    pub eta: [f64; 4],
    pub dead_time_ticks: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { eta: [0.022, 0.023, 0.025, 0.021], dead_time_ticks: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub tick_ps: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { tick_ps: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { duration_s: 1.0, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub source: SourceConfig,
    pub background: BackgroundConfig,
    pub detectors: DetectorConfig,
    pub timing: TimingConfig,
    pub run: RunConfig,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let s = &self.source;
        for (name, v) in [
            ("g_p", s.g_p),
            ("g_q", s.g_q),
            ("tau_c_ns", s.tau_c_ns),
            ("tau_0_ns", s.tau_0_ns),
            ("tau_b_ns", s.tau_b_ns),
            ("bg_s", self.background.bg_s),
            ("bg_a", self.background.bg_a),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (k, &d) in self.background.dark.iter().enumerate() {
            if !(d >= 0.0) || !d.is_finite() {
                return bad(format!("dark count rate of channel {} must be non-negative", k + 1));
            }
        }
        let eta = self.detectors.eta;
        for (k, &e) in eta.iter().enumerate() {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("eta of channel {} must lie in [0, 1], got {e}", k + 1));
            }
        }
        if eta[0] + eta[1] > 1.0 || eta[2] + eta[3] > 1.0 {
            return bad("detection probabilities within one arm sum above 1".into());
        }
        if !(self.run.duration_s > 0.0) || !self.run.duration_s.is_finite() {
            return bad(format!("duration_s must be positive, got {}", self.run.duration_s));
        }
        if self.timing.tick_ps == 0 {
            return bad("tick_ps must be positive".into());
        }
        Ok(())
    }

    pub fn tick_ns(&self) -> f64 {
        self.timing.tick_ps as f64 * 1e-3
    }

    /// Acquisition span in ticks.
    pub fn duration_ticks(&self) -> u64 {
        (self.run.duration_s * 1e12 / self.timing.tick_ps as f64).round() as u64
    }

    /// Expected detected singles per channel, ignoring dead time and
    /// same-tick merging.
    pub fn expected_singles(&self) -> [f64; 4] {
        let s = &self.source;
        let photons_per_arm = s.g_p + 2.0 * s.g_q;
        std::array::from_fn(|k| {
            let bg = if k < 2 { self.background.bg_s } else { self.background.bg_a };
            (photons_per_arm + bg) * self.detectors.eta[k] + self.background.dark[k]
        })
    }

    /// Sets arm backgrounds so that the expected arm singles (sum of the two
    /// detectors) reach the targets. Fails if the source alone exceeds them.
    pub fn tune_background(&mut self, stokes_singles: f64, anti_singles: f64) -> Result<()> {
        self.background.bg_s = 0.0;
        self.background.bg_a = 0.0;
        let r = self.expected_singles();
        let eta = self.detectors.eta;
        let need = [stokes_singles - r[0] - r[1], anti_singles - r[2] - r[3]];
        let arm_eta = [eta[0] + eta[1], eta[2] + eta[3]];
        for a in 0..2 {
            if need[a] < 0.0 || (need[a] > 0.0 && arm_eta[a] == 0.0) {
                return Err(Error::InvalidConfig("source alone exceeds the singles target".into()));
            }
        }
        self.background.bg_s = if need[0] > 0.0 { need[0] / arm_eta[0] } else { 0.0 };
        self.background.bg_a = if need[1] > 0.0 { need[1] / arm_eta[1] } else { 0.0 };
        Ok(())
    }

    /// Same configuration at pump scale `p`: pair rate and backgrounds scale
    /// with `p`, double pairs with `p²`; dark counts stay.
    pub fn at_pump(&self, p: f64) -> SimConfig {
        let mut c = self.clone();
        c.source.g_p *= p;
        c.source.g_q *= p * p;
        c.background.bg_s *= p;
        c.background.bg_a *= p;
        c
    }
}

/// Zero-delay bin probability for a two-sided exponential separation of
/// scale `tau` quantized into bins of width `bin` with uniform phase:
/// `∫ f(Δ)(1 - |Δ|/bin)₊ dΔ`.
pub fn zero_bin_fraction(tau: f64, bin: f64) -> f64 {
    if tau == 0.0 {
        return 1.0;
    }
    let a = bin / tau;
    1.0 - (1.0 - (-a).exp()) / a
}

/// Effective bunching time such that `g_q = τ_eff · (g_p + 2 g_q)²` makes the
/// Stokes auto-correlation, read in a zero-delay bin of width `bin_ns`,
/// equal to 2.
pub fn tau_eff_ns(tau_b_ns: f64, bin_ns: f64) -> f64 {
    bin_ns / (2.0 * zero_bin_fraction(tau_b_ns, bin_ns))
}

/// Double-pair rate that makes the single-arm marginal thermal:
/// the smaller root of `g_q = τ (g_p + 2 g_q)²`. Exists only for
/// `g_p ≤ 1/(8τ)`.
pub fn thermal_gq(g_p: f64, tau_eff_ns: f64) -> Result<f64> {
    let t = tau_eff_ns * 1e-9;
    let b = 1.0 - 4.0 * t * g_p;
    let disc = b * b - 16.0 * t * t * g_p * g_p;
    if g_p < 0.0 || disc < 0.0 || b < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "no thermal double-pair rate for g_p = {g_p:e} at tau_eff = {tau_eff_ns} ns (needs g_p <= {:e})",
            1.0 / (8.0 * t)
        )));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok((b - disc.sqrt()) / (8.0 * t))
}

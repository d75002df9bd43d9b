//! Poisson cluster model of a pair source: single pairs, correlated double
//! pairs, uncorrelated background and dark counts, thinned by per-detector
//! efficiencies and quantized to detector ticks.
//!
//! Time is cut into slabs of [`SLAB_TICKS`]; every slab draws from its own
//! ChaCha stream selected by the slab index, so the output only depends on
//! the configuration and seed, not on how slabs are scheduled.

mod config;

pub use config::{
    tau_eff_ns, thermal_gq, zero_bin_fraction, BackgroundConfig, DetectorConfig, RunConfig,
    SimConfig, SourceConfig, TimingConfig,
};

use crate::error::Result;
use crate::tagstream::{ChannelId, TagStream, TimeTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Poisson};
use rayon::prelude::*;

pub const SLAB_TICKS: u64 = 1 << 19;

const LOST: u8 = u8::MAX;

/// Conditional outcome table for a group of photons, given that at least
/// one of them clicks.
#[derive(Debug, Clone)]
struct Thinning {
    p_any: f64,
    cum: Vec<f64>,
    outcomes: Vec<[u8; 4]>,
}

impl Thinning {
    /// `stokes[i]` tells whether photon `i` belongs to the Stokes arm.
    fn new(stokes: &[bool], eta: [f64; 4]) -> Self {
        let n = stokes.len();
        let mut outcomes = Vec::new();
        let mut probs = Vec::new();
        for code in 0..3usize.pow(n as u32) {
            let mut out = [LOST; 4];
            let mut p = 1.0;
            let mut c = code;
            for (i, &is_s) in stokes.iter().enumerate() {
                let base = if is_s { 0 } else { 2 };
                let choice = c % 3;
                c /= 3;
                p *= match choice {
                    2 => 1.0 - eta[base] - eta[base + 1],
                    k => {
                        out[i] = (base + k) as u8;
                        eta[base + k]
                    }
                };
            }
            if out.iter().any(|&o| o != LOST) && p > 0.0 {
                outcomes.push(out);
                probs.push(p);
            }
        }
        let p_any: f64 = probs.iter().sum();
        let mut acc = 0.0;
        let cum = probs
            .iter()
            .map(|p| {
                acc += p / p_any;
                acc
            })
            .collect();
        Thinning { p_any, cum, outcomes }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> [u8; 4] {
        let u: f64 = rng.random();
        let i = self.cum.partition_point(|&c| c <= u).min(self.outcomes.len() - 1);
        self.outcomes[i]
    }
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive mean");
    rng.sample::<f64, _>(d) as u64
}

fn exp_delay<R: Rng>(rng: &mut R, tau: f64) -> f64 {
    if tau == 0.0 {
        0.0
    } else {
        tau * rng.sample::<f64, _>(Exp1)
    }
}

/// Streaming generator. Tags come out globally sorted, merged and
/// dead-time censored, in chunks.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    pair: Thinning,
    double: Thinning,
    detector_bg: [f64; 4],
    t_m: u64,
    n_slabs: u64,
    next_slab: u64,
    // packed (tick << 2 | channel index), photons past the emitted boundary
    pending: Vec<u64>,
    last: [Option<u64>; 4],
    emitted_until: u64,
}

impl Simulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let eta = cfg.detectors.eta;
        let bg = &cfg.background;
        let detector_bg =
            std::array::from_fn(|k| (if k < 2 { bg.bg_s } else { bg.bg_a }) * eta[k] + bg.dark[k]);
        let t_m = cfg.duration_ticks();
        Ok(Simulator {
            cfg: cfg.clone(),
            pair: Thinning::new(&[true, false], eta),
            double: Thinning::new(&[true, true, false, false], eta),
            detector_bg,
            t_m,
            n_slabs: t_m.div_ceil(SLAB_TICKS),
            next_slab: 0,
            pending: Vec::new(),
            last: [None; 4],
            emitted_until: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn duration_ticks(&self) -> u64 {
        self.t_m
    }

    pub fn tick_ps(&self) -> u64 {
        self.cfg.timing.tick_ps
    }

    /// All tags below this tick have been returned.
    pub fn emitted_until(&self) -> u64 {
        self.emitted_until
    }

    pub fn is_done(&self) -> bool {
        self.next_slab >= self.n_slabs
    }

    /// Advances the generator past `until` (rounded up to a slab boundary,
    /// at least one slab) and returns the newly completed tags.
    pub fn next_chunk(&mut self, until: u64) -> Vec<TimeTag> {
        if self.is_done() {
            return Vec::new();
        }
        let end = until.div_ceil(SLAB_TICKS).clamp(self.next_slab + 1, self.n_slabs);
        let slabs: Vec<Vec<u64>> =
            (self.next_slab..end).into_par_iter().map(|k| self.generate_slab(k)).collect();
        self.next_slab = end;
        let mut all = std::mem::take(&mut self.pending);
        all.reserve(slabs.iter().map(Vec::len).sum());
        for s in slabs {
            all.extend(s);
        }
        all.sort_unstable();
        let boundary = if self.is_done() { self.t_m } else { end * SLAB_TICKS };
        let split = all.partition_point(|&p| p >> 2 < boundary);
        if !self.is_done() {
            self.pending = all.split_off(split);
        }
        all.truncate(split);
        self.emitted_until = boundary;
        self.censor(&all)
    }

    /// Same-channel same-tick merge (first kept) and non-paralyzable dead time.
    fn censor(&mut self, photons: &[u64]) -> Vec<TimeTag> {
        let gap = self.cfg.detectors.dead_time_ticks.max(1);
        let mut out = Vec::with_capacity(photons.len());
        for &p in photons {
            let (tick, ch) = (p >> 2, (p & 3) as usize);
            if let Some(prev) = self.last[ch] {
                if tick < prev + gap {
                    continue;
                }
            }
            self.last[ch] = Some(tick);
            out.push(TimeTag::new(tick, ChannelId::from_index(ch)));
        }
        out
    }

    fn generate_slab(&self, k: u64) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.run.seed);
        rng.set_stream(k);
        let tick_ns = self.cfg.tick_ns();
        let start_tick = k * SLAB_TICKS;
        let len_ticks = SLAB_TICKS.min(self.t_m - start_tick);
        let start = start_tick as f64 * tick_ns;
        let span = len_ticks as f64 * tick_ns;
        let span_s = span * 1e-9;
        let t_m = self.t_m;
        let src = &self.cfg.source;
        let mut out = Vec::new();
        let mut push = |t_ns: f64, ch: u8| {
            let tick = (t_ns / tick_ns).floor() as u64;
            if ch != LOST && tick < t_m {
                out.push(tick << 2 | ch as u64);
            }
        };

        let n = poisson(&mut rng, src.g_p * self.pair.p_any * span_s);
        for _ in 0..n {
            let t = start + rng.random::<f64>() * span;
            let o = self.pair.sample(&mut rng);
            let ta = t + src.tau_0_ns + exp_delay(&mut rng, src.tau_c_ns);
            push(t, o[0]);
            push(ta, o[1]);
        }

        // Both anti-Stokes photons follow the later Stokes photon, which
        // reproduces the C13 C14 C23 C24 interference term of the Gaussian
        // moment expansion for one-sided exponential correlations.
        let n = poisson(&mut rng, src.g_q * self.double.p_any * span_s);
        for _ in 0..n {
            let t1 = start + rng.random::<f64>() * span;
            let t2 = t1 + exp_delay(&mut rng, src.tau_b_ns);
            let o = self.double.sample(&mut rng);
            let a1 = t2 + src.tau_0_ns + exp_delay(&mut rng, src.tau_c_ns);
            let a2 = t2 + src.tau_0_ns + exp_delay(&mut rng, src.tau_c_ns);
            push(t1, o[0]);
            push(t2, o[1]);
            push(a1, o[2]);
            push(a2, o[3]);
        }

        for (ch, &rate) in self.detector_bg.iter().enumerate() {
            let n = poisson(&mut rng, rate * span_s);
            for _ in 0..n {
                push(start + rng.random::<f64>() * span, ch as u8);
            }
        }
        out
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<TagStream> {
    let mut sim = Simulator::new(cfg)?;
    let tags = sim.next_chunk(u64::MAX);
    TagStream::new(tags, sim.tick_ps(), sim.duration_ticks())
}

/// Same engine with double pairs disabled: quadruplets then only arise from
/// coincidences of independent pairs.
pub fn simulate_uncorrelated_pairs(cfg: &SimConfig) -> Result<TagStream> {
    let mut c = cfg.clone();
    c.source.g_q = 0.0;
    simulate(&c)
}

/// Configurations of a pump sweep; level `i` uses seed `seed + i`.
pub fn sweep_configs(base: &SimConfig, pump_levels: &[f64]) -> Vec<SimConfig> {
    pump_levels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut c = base.at_pump(p);
            c.run.seed = base.run.seed.wrapping_add(i as u64);
            c
        })
        .collect()
}

pub fn power_sweep(base: &SimConfig, pump_levels: &[f64]) -> Result<Vec<TagStream>> {
    sweep_configs(base, pump_levels).iter().map(simulate).collect()
}

use super::{PairEvent, QuadEvent, TripletEvent};
use crate::error::{Error, Result};
use std::io::{self, Write};

/// Uniform delay axis in ticks. Bin `k` covers `[lo + k·bin, lo + (k+1)·bin)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistAxis {
    pub lo: i64,
    pub bin: u64,
    pub nbins: usize,
}

impl HistAxis {
    /// Axis whose first bin starts at `lo` and whose last bin starts at the
    /// largest multiple of `bin` not beyond `hi`.
    pub fn new(lo: i64, hi: i64, bin: u64) -> Result<Self> {
        if bin == 0 {
            return Err(Error::ZeroBinWidth);
        }
        if hi < lo {
            return Err(Error::BadRange { lo, hi });
        }
        let nbins = ((hi - lo) as u64 / bin) as usize + 1;
        Ok(HistAxis { lo, bin, nbins })
    }

    /// `[-max, +max]` in ticks.
    pub fn symmetric(max: u64, bin: u64) -> Result<Self> {
        Self::new(-(max as i64), max as i64, bin)
    }

    pub fn index(&self, delay: i64) -> Option<usize> {
        if delay < self.lo {
            return None;
        }
        let k = ((delay - self.lo) as u64 / self.bin) as usize;
        (k < self.nbins).then_some(k)
    }

    pub fn lower_edge(&self, k: usize) -> i64 {
        self.lo + (k as u64 * self.bin) as i64
    }

    /// Half-open delay span `[lo, hi)` covered by all bins.
    pub fn span(&self) -> (i64, i64) {
        (self.lo, self.lower_edge(self.nbins))
    }

    /// Largest absolute delay the axis can hold.
    pub fn reach(&self) -> u64 {
        let (lo, hi) = self.span();
        lo.unsigned_abs().max((hi - 1).unsigned_abs())
    }
}

/// Dense `D`-dimensional delay histogram; the first axis varies slowest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayHistogram<const D: usize> {
    axes: [HistAxis; D],
    counts: Vec<u64>,
}

pub type DelayHistogram1D = DelayHistogram<1>;
pub type DelayHistogram2D = DelayHistogram<2>;
pub type DelayHistogram3D = DelayHistogram<3>;

impl<const D: usize> DelayHistogram<D> {
    pub fn new(axes: [HistAxis; D]) -> Self {
        let n = axes.iter().map(|a| a.nbins).product();
        DelayHistogram { axes, counts: vec![0; n] }
    }

    pub fn axes(&self) -> &[HistAxis; D] {
        &self.axes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn flat(&self, idx: [usize; D]) -> usize {
        let mut f = 0;
        for (a, &i) in self.axes.iter().zip(&idx) {
            f = f * a.nbins + i;
        }
        f
    }

    pub fn unflatten(&self, mut f: usize) -> [usize; D] {
        let mut idx = [0; D];
        for d in (0..D).rev() {
            idx[d] = f % self.axes[d].nbins;
            f /= self.axes[d].nbins;
        }
        idx
    }

    pub fn get(&self, idx: [usize; D]) -> u64 {
        self.counts[self.flat(idx)]
    }

    /// Bin indices for a delay tuple, `None` if any coordinate is off-axis.
    pub fn locate(&self, delays: [i64; D]) -> Option<[usize; D]> {
        let mut idx = [0; D];
        for d in 0..D {
            idx[d] = self.axes[d].index(delays[d])?;
        }
        Some(idx)
    }

    /// Counts one event; returns false if it falls outside the axes.
    pub fn add(&mut self, delays: [i64; D]) -> bool {
        match self.locate(delays) {
            Some(idx) => {
                let f = self.flat(idx);
                self.counts[f] += 1;
                true
            }
            None => false,
        }
    }

    pub fn add_at(&mut self, idx: [usize; D], n: u64) {
        let f = self.flat(idx);
        self.counts[f] += n;
    }

    pub fn merge(&mut self, other: &DelayHistogram<D>) -> Result<()> {
        if self.axes != other.axes {
            return Err(Error::InvalidConfig("cannot merge histograms with different axes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Flat index of the fullest bin (first one on ties).
    pub fn argmax(&self) -> [usize; D] {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        self.unflatten(best)
    }

    /// Lower bin edges in ticks for a multi-index.
    pub fn edges(&self, idx: [usize; D]) -> [i64; D] {
        let mut e = [0; D];
        for d in 0..D {
            e[d] = self.axes[d].lower_edge(idx[d]);
        }
        e
    }
}

impl DelayHistogram<3> {
    /// 2D slice at a fixed index of the first axis.
    pub fn slice(&self, first: usize) -> DelayHistogram2D {
        let [_, b, c] = self.axes;
        let n = b.nbins * c.nbins;
        let start = first * n;
        DelayHistogram { axes: [b, c], counts: self.counts[start..start + n].to_vec() }
    }
}

/// Histogram paired with the accidental-rate normalization
/// `∏R_k · δtᴰ · T_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedHistogram<const D: usize> {
    pub hist: DelayHistogram<D>,
    pub rates: Vec<f64>,
    pub tick_seconds: f64,
    pub duration_seconds: f64,
    /// Expected counts per bin for uncorrelated input.
    pub accidental_per_bin: f64,
}

impl<const D: usize> NormalizedHistogram<D> {
    pub fn new(
        hist: DelayHistogram<D>,
        rates: &[f64],
        tick_seconds: f64,
        duration_seconds: f64,
    ) -> Result<Self> {
        for &r in rates.iter().chain([&duration_seconds]) {
            if !(r > 0.0) {
                return Err(Error::ZeroRate(r));
            }
        }
        let mut acc = duration_seconds;
        for &r in rates {
            acc *= r;
        }
        for a in hist.axes() {
            acc *= a.bin as f64 * tick_seconds;
        }
        Ok(NormalizedHistogram {
            hist,
            rates: rates.to_vec(),
            tick_seconds,
            duration_seconds,
            accidental_per_bin: acc,
        })
    }

    pub fn value(&self, idx: [usize; D]) -> f64 {
        self.hist.get(idx) as f64 / self.accidental_per_bin
    }

    pub fn values(&self) -> Vec<f64> {
        self.hist.counts().iter().map(|&c| c as f64 / self.accidental_per_bin).collect()
    }

    /// Line-oriented CSV: `#` header lines, then one bin per line with the
    /// lower-edge coordinates in ns, the raw count and the normalized value.
    pub fn write_csv<W: Write>(&self, w: &mut W, extra: &[(&str, String)]) -> io::Result<()> {
        let ns = self.tick_seconds * 1e9;
        let axes = self.hist.axes();
        writeln!(w, "# dims = {D}")?;
        writeln!(w, "# bin_ns = {}", axes[0].bin as f64 * ns)?;
        for (d, a) in axes.iter().enumerate() {
            let (lo, hi) = a.span();
            writeln!(w, "# axis{d}_ns = [{}, {})", lo as f64 * ns, hi as f64 * ns)?;
        }
        let rates: Vec<String> = self.rates.iter().map(|r| format!("{r:.6e}")).collect();
        writeln!(w, "# rates_cps = {}", rates.join(" "))?;
        writeln!(w, "# t_m_s = {}", self.duration_seconds)?;
        for (k, v) in extra {
            writeln!(w, "# {k} = {v}")?;
        }
        let cols: Vec<String> = (0..D).map(|d| format!("tau{d}_ns")).collect();
        writeln!(w, "{},count,normalized", cols.join(","))?;
        for (f, &c) in self.hist.counts().iter().enumerate() {
            let edges = self.hist.edges(self.hist.unflatten(f));
            for e in edges {
                write!(w, "{},", e as f64 * ns)?;
            }
            writeln!(w, "{c},{:.6}", c as f64 / self.accidental_per_bin)?;
        }
        Ok(())
    }
}

/// Histogram of `t_j - t_i` over the axis.
pub fn histogram_pairs(pairs: &[PairEvent], axis: HistAxis) -> DelayHistogram1D {
    let mut h = DelayHistogram::new([axis]);
    for p in pairs {
        h.add([p.delay()]);
    }
    h
}

/// Histogram over `(t_b - t_a, t_c - t_a)`.
pub fn histogram_triplets(triplets: &[TripletEvent], axes: [HistAxis; 2]) -> DelayHistogram2D {
    let mut h = DelayHistogram::new(axes);
    for t in triplets {
        let a = t.t_a as i64;
        h.add([t.t_b as i64 - a, t.t_c as i64 - a]);
    }
    h
}

/// Histogram over `(t1 - t2, t3 - t1, t4 - t1)`.
pub fn histogram_quadruplets(quads: &[QuadEvent], axes: [HistAxis; 3]) -> DelayHistogram3D {
    let mut h = DelayHistogram::new(axes);
    for q in quads {
        let [t1, t2, t3, t4] = q.times.map(|t| t as i64);
        h.add([t1 - t2, t3 - t1, t4 - t1]);
    }
    h
}

/// Pair histogram normalized by `R_i R_j δt T_m`.
pub fn normalized_g2(
    hist: DelayHistogram1D,
    r_i: f64,
    r_j: f64,
    tick_seconds: f64,
    duration_seconds: f64,
) -> Result<NormalizedHistogram<1>> {
    NormalizedHistogram::new(hist, &[r_i, r_j], tick_seconds, duration_seconds)
}

/// Triplet histogram normalized by `R_a R_b R_c δt² T_m`.
pub fn normalized_g3(
    hist: DelayHistogram2D,
    rates: [f64; 3],
    tick_seconds: f64,
    duration_seconds: f64,
) -> Result<NormalizedHistogram<2>> {
    NormalizedHistogram::new(hist, &rates, tick_seconds, duration_seconds)
}

/// Quadruplet histogram normalized by `R_1 R_2 R_3 R_4 δt³ T_m`.
pub fn normalized_g4(
    hist: DelayHistogram3D,
    rates: [f64; 4],
    tick_seconds: f64,
    duration_seconds: f64,
) -> Result<NormalizedHistogram<3>> {
    NormalizedHistogram::new(hist, &rates, tick_seconds, duration_seconds)
}

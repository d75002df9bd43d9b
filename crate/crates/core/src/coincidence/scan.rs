//! Anchored window scans.
//!
//! Every n-fold event is attributed to exactly one anchor tag, and each other
//! channel must fall into a half-open delay range relative to that anchor.
//! Because attribution is by anchor, disjoint anchor ranges can be processed
//! independently (given enough surrounding data), which is what the chunked
//! and streaming drivers rely on.

use super::histogram::{DelayHistogram, HistAxis};
use crate::error::{Error, Result};
use crate::tagstream::{Arm, ChannelId, ChannelTimes, TagStream, TimeTag};
use rayon::prelude::*;

/// Something that can be computed one anchor range at a time and merged.
pub trait AnchoredAnalysis: Clone + Send + Sync {
    /// Largest `|t_k - t_anchor|` the analysis ever looks at.
    fn margin(&self) -> u64;
    /// Accumulates all events whose anchor tick lies in `[lo, hi)`. `ct` must
    /// hold every tag within `margin` of that range.
    fn process(&mut self, ct: &ChannelTimes, lo: u64, hi: u64);
    fn merge(&mut self, other: &Self);
}

/// Delay range `t_k - t_anchor ∈ [lo, hi)` for channel index `ch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Reach {
    ch: usize,
    lo: i64,
    hi: i64,
}

fn reach_margin(reaches: &[Reach]) -> u64 {
    reaches
        .iter()
        .map(|r| r.lo.unsigned_abs().max((r.hi - 1).unsigned_abs()))
        .max()
        .unwrap_or(0)
}

/// Calls `f(t_anchor, slices)` for every anchor tag in `[alo, ahi)`, where
/// `slices[k]` are the tags of `reaches[k].ch` inside its delay range.
fn for_each_anchor<F>(ct: &ChannelTimes, anchor: usize, reaches: &[Reach], alo: u64, ahi: u64, mut f: F)
where
    F: FnMut(u64, &[&[u64]]),
{
    let at = &ct.times[anchor];
    let first = at.partition_point(|&t| t < alo);
    let last = at.partition_point(|&t| t < ahi);
    if first == last {
        return;
    }
    let m = reaches.len();
    let mut starts = [0usize; 4];
    let mut ends = [0usize; 4];
    let t0 = at[first] as i64;
    for (k, r) in reaches.iter().enumerate() {
        let v = &ct.times[r.ch];
        starts[k] = v.partition_point(|&t| (t as i64) < t0 + r.lo);
        ends[k] = starts[k];
    }
    let mut slices: [&[u64]; 4] = [&[]; 4];
    for &t in &at[first..last] {
        let ti = t as i64;
        for (k, r) in reaches.iter().enumerate() {
            let v = &ct.times[r.ch];
            while starts[k] < v.len() && (v[starts[k]] as i64) < ti + r.lo {
                starts[k] += 1;
            }
            ends[k] = ends[k].max(starts[k]);
            while ends[k] < v.len() && (v[ends[k]] as i64) < ti + r.hi {
                ends[k] += 1;
            }
            slices[k] = &v[starts[k]..ends[k]];
        }
        f(t, &slices[..m]);
    }
}

/// Coincidence window geometry.
///
/// For a channel subset the anchor is its lowest channel. Every other channel
/// `k` must satisfy `(t_k - off_k) - (t_a - off_a) ∈ [-⌊t_c/2⌋, t_c - ⌊t_c/2⌋)`,
/// with arm offsets `off = 0` for Stokes and `as_offset` for anti-Stokes.
/// Each axis therefore has width exactly `t_c`, so independent channels give
/// `t_cᵐ⁻¹·∏R` accidentals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub t_c: u64,
    pub as_offset: u64,
}

impl WindowSpec {
    /// Anti-Stokes window offset by half a window, so a Stokes-anchored
    /// anti-Stokes tag is accepted for delays `[0, t_c)`.
    pub fn new(t_c: u64) -> Self {
        WindowSpec { t_c, as_offset: t_c / 2 }
    }

    fn offset(&self, ch: usize) -> i64 {
        match ChannelId::from_index(ch).arm() {
            Arm::Stokes => 0,
            Arm::AntiStokes => self.as_offset as i64,
        }
    }

    /// Accepted `t_k - t_anchor` range.
    pub fn delay_range(&self, anchor: ChannelId, k: ChannelId) -> (i64, i64) {
        let lo = self.offset(k.index()) - self.offset(anchor.index()) - (self.t_c / 2) as i64;
        (lo, lo + self.t_c as i64)
    }

    fn reach(&self, anchor: usize, k: usize) -> Reach {
        let (lo, hi) = self.delay_range(ChannelId::from_index(anchor), ChannelId::from_index(k));
        Reach { ch: k, lo, hi }
    }
}

/// Raw n-fold counts for all 11 channel subsets of size 2..=4, indexed by
/// channel bitmask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowCounter {
    spec: WindowSpec,
    counts: [u64; 16],
}

impl WindowCounter {
    pub fn new(spec: WindowSpec) -> Self {
        WindowCounter { spec, counts: [0; 16] }
    }

    pub fn counts(&self) -> &[u64; 16] {
        &self.counts
    }
}

impl AnchoredAnalysis for WindowCounter {
    fn margin(&self) -> u64 {
        let mut reaches = Vec::new();
        for a in 0..4 {
            for k in a + 1..4 {
                reaches.push(self.spec.reach(a, k));
            }
        }
        reach_margin(&reaches)
    }

    fn process(&mut self, ct: &ChannelTimes, lo: u64, hi: u64) {
        for a in 0..3 {
            let reaches: Vec<Reach> = (a + 1..4).map(|k| self.spec.reach(a, k)).collect();
            // subsets whose lowest channel is `a`, as masks over the reaches
            let subsets: Vec<(usize, usize)> = (1usize..1 << reaches.len())
                .map(|sub| {
                    let mut mask = 1 << a;
                    for (i, r) in reaches.iter().enumerate() {
                        if sub & (1 << i) != 0 {
                            mask |= 1 << r.ch;
                        }
                    }
                    (sub, mask)
                })
                .collect();
            let counts = &mut self.counts;
            for_each_anchor(ct, a, &reaches, lo, hi, |_, slices| {
                for &(sub, mask) in &subsets {
                    let mut n = 1u64;
                    for (i, s) in slices.iter().enumerate() {
                        if sub & (1 << i) != 0 {
                            n *= s.len() as u64;
                        }
                    }
                    counts[mask] += n;
                }
            });
        }
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Observed singles and n-fold window counts over one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowCounts {
    pub spec: WindowSpec,
    /// Indexed by channel bitmask (bit 0 = channel 1).
    pub counts: [u64; 16],
    pub singles: [u64; 4],
    pub duration: u64,
    pub tick_ps: u64,
}

impl WindowCounts {
    pub fn from_counter(counter: &WindowCounter, singles: [u64; 4], duration: u64, tick_ps: u64) -> Result<Self> {
        if duration == 0 {
            return Err(Error::ZeroDuration);
        }
        Ok(WindowCounts { spec: counter.spec, counts: counter.counts, singles, duration, tick_ps })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.duration as f64 * self.tick_ps as f64 * 1e-12
    }

    pub fn t_c_seconds(&self) -> f64 {
        self.spec.t_c as f64 * self.tick_ps as f64 * 1e-12
    }

    pub fn count(&self, channels: &[u8]) -> u64 {
        self.counts[mask_of(channels)]
    }

    /// Observed rate for a channel subset in counts per second.
    pub fn rate(&self, channels: &[u8]) -> f64 {
        self.count(channels) as f64 / self.duration_seconds()
    }

    pub fn singles_rates(&self) -> [f64; 4] {
        let t = self.duration_seconds();
        self.singles.map(|n| n as f64 / t)
    }

    /// Rates indexed by bitmask; singletons carry the singles rates.
    pub fn rates_by_mask(&self) -> [f64; 16] {
        let t = self.duration_seconds();
        let mut out = [0.0; 16];
        for (m, o) in out.iter_mut().enumerate() {
            *o = match m.count_ones() {
                0 => 0.0,
                1 => self.singles[m.trailing_zeros() as usize] as f64 / t,
                _ => self.counts[m] as f64 / t,
            };
        }
        out
    }
}

/// Bitmask for a list of channel numbers 1..=4.
pub fn mask_of(channels: &[u8]) -> usize {
    channels.iter().fold(0, |m, &c| m | 1 << (c - 1))
}

pub fn window_counts(stream: &TagStream, t_c: u64) -> Result<WindowCounts> {
    window_counts_with(stream, WindowSpec::new(t_c))
}

pub fn window_counts_with(stream: &TagStream, spec: WindowSpec) -> Result<WindowCounts> {
    if spec.t_c == 0 {
        return Err(Error::ZeroWindow);
    }
    if stream.duration() == 0 {
        return Err(Error::ZeroDuration);
    }
    let mut counter = WindowCounter::new(spec);
    counter.process(&stream.by_channel(), 0, u64::MAX);
    WindowCounts::from_counter(&counter, stream.singles_counts(), stream.duration(), stream.tick_ps())
}

/// One histogram axis: delay of `channel` relative to the anchor, optionally
/// negated (`t_anchor - t_k`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayAxis {
    pub channel: ChannelId,
    pub negate: bool,
    pub axis: HistAxis,
}

impl DelayAxis {
    pub fn new(channel: ChannelId, axis: HistAxis) -> Self {
        DelayAxis { channel, negate: false, axis }
    }

    pub fn negated(channel: ChannelId, axis: HistAxis) -> Self {
        DelayAxis { channel, negate: true, axis }
    }

    fn reach(&self) -> Reach {
        let (lo, hi) = self.axis.span();
        if self.negate {
            Reach { ch: self.channel.index(), lo: 1 - hi, hi: 1 - lo }
        } else {
            Reach { ch: self.channel.index(), lo, hi }
        }
    }
}

/// Streaming delay histogram. Anchors may be a group of channels (e.g. both
/// Stokes detectors), in which case each group member anchors independently.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramScan<const D: usize> {
    anchors: Vec<ChannelId>,
    axes: [DelayAxis; D],
    hist: DelayHistogram<D>,
}

impl<const D: usize> HistogramScan<D> {
    pub fn new(anchors: &[ChannelId], axes: [DelayAxis; D]) -> Result<Self> {
        for (i, a) in axes.iter().enumerate() {
            if anchors.contains(&a.channel) || axes[..i].iter().any(|b| b.channel == a.channel) {
                return Err(Error::SameChannel(a.channel.get()));
            }
        }
        if anchors.is_empty() {
            return Err(Error::MismatchedAnchorChannel);
        }
        Ok(HistogramScan {
            anchors: anchors.to_vec(),
            axes,
            hist: DelayHistogram::new(axes.map(|a| a.axis)),
        })
    }

    pub fn histogram(&self) -> &DelayHistogram<D> {
        &self.hist
    }

    pub fn into_histogram(self) -> DelayHistogram<D> {
        self.hist
    }

    pub fn anchors(&self) -> &[ChannelId] {
        &self.anchors
    }
}

impl HistogramScan<1> {
    /// `t_j - t_i` histogram.
    pub fn g2(ch_i: ChannelId, ch_j: ChannelId, axis: HistAxis) -> Result<Self> {
        Self::new(&[ch_i], [DelayAxis::new(ch_j, axis)])
    }
}

impl HistogramScan<2> {
    /// `(t_b - t_A, t_c - t_A)` with `A` any channel of the anchor group.
    pub fn g3(anchors: &[ChannelId], b: ChannelId, c: ChannelId, axes: [HistAxis; 2]) -> Result<Self> {
        Self::new(anchors, [DelayAxis::new(b, axes[0]), DelayAxis::new(c, axes[1])])
    }
}

impl HistogramScan<3> {
    /// `(t1 - t2, t3 - t1, t4 - t1)`.
    pub fn g4(axes: [HistAxis; 3]) -> Result<Self> {
        let ch = |i| ChannelId::from_index(i);
        Self::new(
            &[ch(0)],
            [
                DelayAxis::negated(ch(1), axes[0]),
                DelayAxis::new(ch(2), axes[1]),
                DelayAxis::new(ch(3), axes[2]),
            ],
        )
    }
}

impl<const D: usize> AnchoredAnalysis for HistogramScan<D> {
    fn margin(&self) -> u64 {
        let r: Vec<Reach> = self.axes.iter().map(DelayAxis::reach).collect();
        reach_margin(&r)
    }

    fn process(&mut self, ct: &ChannelTimes, lo: u64, hi: u64) {
        let reaches: Vec<Reach> = self.axes.iter().map(DelayAxis::reach).collect();
        let axes = self.axes;
        let hist = &mut self.hist;
        let mut bins: [Vec<usize>; D] = std::array::from_fn(|_| Vec::new());
        for &a in &self.anchors {
            for_each_anchor(ct, a.index(), &reaches, lo, hi, |t, slices| {
                if slices.iter().any(|s| s.is_empty()) {
                    return;
                }
                for d in 0..D {
                    bins[d].clear();
                    for &tk in slices[d] {
                        let delay = tk as i64 - t as i64;
                        let v = if axes[d].negate { -delay } else { delay };
                        // in reach implies on-axis
                        bins[d].push(axes[d].axis.index(v).expect("reach matches axis span"));
                    }
                }
                let mut odo = [0usize; D];
                'outer: loop {
                    let mut idx = [0usize; D];
                    for d in 0..D {
                        idx[d] = bins[d][odo[d]];
                    }
                    hist.add_at(idx, 1);
                    for d in (0..D).rev() {
                        odo[d] += 1;
                        if odo[d] < bins[d].len() {
                            continue 'outer;
                        }
                        odo[d] = 0;
                    }
                    break;
                }
            });
        }
    }

    fn merge(&mut self, other: &Self) {
        self.hist.merge(&other.hist).expect("same axes");
    }
}

/// Runs `proto` over `ct` in anchor chunks of `chunk_ticks`, in parallel,
/// merging in chunk order.
pub fn run_chunked<A: AnchoredAnalysis>(ct: &ChannelTimes, proto: &A, chunk_ticks: u64) -> A {
    let chunk = chunk_ticks.max(1);
    let end = ct.times.iter().filter_map(|v| v.last()).max().map_or(0, |&t| t + 1);
    let n = end.div_ceil(chunk);
    let parts: Vec<A> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut a = proto.clone();
            a.process(ct, i * chunk, ((i + 1) * chunk).min(end));
            a
        })
        .collect();
    let mut out = proto.clone();
    for p in &parts {
        out.merge(p);
    }
    out
}

/// Incremental driver for tag sequences that arrive in time order, such as a
/// file read in chunks or simulator output. Memory stays bounded by the
/// margin plus the largest chunk.
#[derive(Debug, Clone)]
pub struct StreamAnalyzer<A: AnchoredAnalysis> {
    analysis: A,
    margin: u64,
    buf: ChannelTimes,
    done: u64,
}

impl<A: AnchoredAnalysis> StreamAnalyzer<A> {
    pub fn new(analysis: A) -> Self {
        let margin = analysis.margin();
        StreamAnalyzer { analysis, margin, buf: ChannelTimes::default(), done: 0 }
    }

    /// Appends time-ordered `tags`; `complete_until` promises that no tag
    /// earlier than it is still to come.
    pub fn feed(&mut self, tags: &[TimeTag], complete_until: u64) {
        self.buf.extend_from_tags(tags);
        let ready = complete_until.saturating_sub(self.margin);
        if ready > self.done {
            self.analysis.process(&self.buf, self.done, ready);
            self.done = ready;
            self.buf.drop_before(self.done.saturating_sub(self.margin));
        }
    }

    pub fn finish(mut self) -> A {
        self.analysis.process(&self.buf, self.done, u64::MAX);
        self.analysis
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::{find_pairs, histogram_pairs};
    use proptest::prelude::*;

    fn ch(i: u8) -> ChannelId {
        ChannelId::new(i).unwrap()
    }

    fn stream(tags: &[(u64, u8)]) -> TagStream {
        let tags: Vec<_> = tags.iter().map(|&(t, c)| TimeTag::new(t, ch(c))).collect();
        let end = tags.iter().map(|t| t.ticks).max().unwrap_or(0) + 1;
        TagStream::from_unsorted(tags, 2000, end).unwrap()
    }

    #[test]
    fn window_examples() {
        let w = window_counts(&stream(&[]), 10).unwrap();
        assert!(w.counts.iter().all(|&c| c == 0));
        let w = window_counts(&stream(&[(0, 1), (9, 3)]), 10).unwrap();
        assert_eq!(w.count(&[1, 3]), 1);
        let w = window_counts(&stream(&[(0, 1), (10, 3)]), 10).unwrap();
        assert_eq!(w.count(&[1, 3]), 0);
        assert_eq!(window_counts(&stream(&[]), 0), Err(Error::ZeroWindow));
        let empty = TagStream::empty(2000, 0);
        assert_eq!(window_counts(&empty, 10), Err(Error::ZeroDuration));
    }

    #[test]
    fn window_geometry() {
        let s = WindowSpec::new(10);
        assert_eq!(s.delay_range(ch(1), ch(3)), (0, 10));
        assert_eq!(s.delay_range(ch(1), ch(2)), (-5, 5));
        assert_eq!(s.delay_range(ch(3), ch(4)), (-5, 5));
        assert_eq!(s.delay_range(ch(2), ch(4)), (0, 10));
        let s = WindowSpec { t_c: 10, as_offset: 0 };
        assert_eq!(s.delay_range(ch(1), ch(3)), (-5, 5));
    }

    fn in_range(spec: &WindowSpec, a: u8, ta: u64, k: u8, tk: u64) -> bool {
        let (lo, hi) = spec.delay_range(ch(a), ch(k));
        let d = tk as i64 - ta as i64;
        lo <= d && d < hi
    }

    /// Exhaustive subset scan: every choice of one tag per channel of the
    /// subset, accepted when all members sit in the anchor's windows.
    fn brute_counts(s: &TagStream, spec: &WindowSpec) -> [u64; 16] {
        let ct = s.by_channel();
        let mut out = [0u64; 16];
        for mask in 0usize..16 {
            if mask.count_ones() < 2 {
                continue;
            }
            let chans: Vec<u8> = (0..4).filter(|b| mask & (1 << b) != 0).map(|b| b as u8 + 1).collect();
            fn rec(ct: &ChannelTimes, chans: &[u8], chosen: &mut Vec<u64>, spec: &WindowSpec, n: &mut u64) {
                if chosen.len() == chans.len() {
                    let ok = (1..chans.len()).all(|i| in_range(spec, chans[0], chosen[0], chans[i], chosen[i]));
                    *n += ok as u64;
                    return;
                }
                for &t in ct.channel(ChannelId::new(chans[chosen.len()]).unwrap()) {
                    chosen.push(t);
                    rec(ct, chans, chosen, spec, n);
                    chosen.pop();
                }
            }
            rec(&ct, &chans, &mut Vec::new(), spec, &mut out[mask]);
        }
        out
    }

    fn arb_stream(max_tags: usize, span: u64) -> impl Strategy<Value = TagStream> {
        prop::collection::vec((0..span, 1u8..=4), 0..max_tags).prop_map(|v| stream(&v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn window_counts_match_brute_force(s in arb_stream(60, 120), t_c in 1u64..15, off in 0u64..12) {
            let spec = WindowSpec { t_c, as_offset: off };
            let w = window_counts_with(&s, spec).unwrap();
            prop_assert_eq!(w.counts, brute_counts(&s, &spec));
        }

        #[test]
        fn chunked_and_streaming_match_sequential(
            s in arb_stream(500, 3000), t_c in 1u64..20, chunk in 1u64..200, feed in 1usize..50,
        ) {
            let spec = WindowSpec::new(t_c);
            let ct = s.by_channel();
            let mut seq = WindowCounter::new(spec);
            seq.process(&ct, 0, u64::MAX);
            let par = run_chunked(&ct, &WindowCounter::new(spec), chunk);
            prop_assert_eq!(par.counts(), seq.counts());

            let mut st = StreamAnalyzer::new(WindowCounter::new(spec));
            for part in s.tags().chunks(feed) {
                let until = part.last().unwrap().ticks;
                st.feed(part, until);
            }
            let streamed = st.finish();
            prop_assert_eq!(streamed.counts(), seq.counts());

            let axes = [HistAxis::symmetric(12, 2).unwrap(); 3];
            let g4 = HistogramScan::g4(axes).unwrap();
            let mut g4_seq = g4.clone();
            g4_seq.process(&ct, 0, u64::MAX);
            let g4_par = run_chunked(&ct, &g4, chunk);
            prop_assert_eq!(g4_par.histogram(), g4_seq.histogram());
        }

        #[test]
        fn g2_scan_matches_pair_list(s in arb_stream(300, 1000), max in 0u64..30, bin in 1u64..4) {
            let axis = HistAxis::symmetric(max, bin).unwrap();
            let mut scan = HistogramScan::g2(ch(2), ch(3), axis).unwrap();
            scan.process(&s.by_channel(), 0, u64::MAX);
            let pairs = find_pairs(&s, ch(2), ch(3), axis.reach()).unwrap();
            prop_assert_eq!(scan.histogram(), &histogram_pairs(&pairs, axis));
        }

        #[test]
        fn g4_scan_matches_brute_force(s in arb_stream(80, 150), max in 1u64..12) {
            let axis = HistAxis::symmetric(max, 1).unwrap();
            let mut scan = HistogramScan::g4([axis; 3]).unwrap();
            scan.process(&s.by_channel(), 0, u64::MAX);
            let ct = s.by_channel();
            let mut want = DelayHistogram::new([axis; 3]);
            for &t1 in ct.channel(ch(1)) {
                for &t2 in ct.channel(ch(2)) {
                    for &t3 in ct.channel(ch(3)) {
                        for &t4 in ct.channel(ch(4)) {
                            let (t1, t2, t3, t4) = (t1 as i64, t2 as i64, t3 as i64, t4 as i64);
                            want.add([t1 - t2, t3 - t1, t4 - t1]);
                        }
                    }
                }
            }
            prop_assert_eq!(scan.histogram(), &want);
        }
    }

    #[test]
    fn g3_anchor_group_counts_both_stokes() {
        let s = stream(&[(10, 1), (10, 2), (12, 3), (15, 4)]);
        let axis = HistAxis::symmetric(10, 1).unwrap();
        let mut scan = HistogramScan::g3(&[ch(1), ch(2)], ch(3), ch(4), [axis; 2]).unwrap();
        scan.process(&s.by_channel(), 0, u64::MAX);
        let h = scan.histogram();
        assert_eq!(h.total(), 2);
        assert_eq!(h.get([h.axes()[0].index(2).unwrap(), h.axes()[1].index(5).unwrap()]), 2);
        assert!(HistogramScan::g3(&[ch(1), ch(3)], ch(3), ch(4), [axis; 2]).is_err());
    }
}

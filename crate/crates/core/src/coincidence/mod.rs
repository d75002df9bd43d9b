//! Coincidence search: explicit pair/triplet/quadruplet event lists, delay
//! histograms, and anchored window scans that run over chunked or streaming
//! input without materializing events.

mod histogram;
mod scan;

pub use histogram::{
    histogram_pairs, histogram_quadruplets, histogram_triplets, normalized_g2, normalized_g3,
    normalized_g4, DelayHistogram, DelayHistogram1D, DelayHistogram2D, DelayHistogram3D,
    HistAxis, NormalizedHistogram,
};
pub use scan::{
    mask_of, run_chunked, window_counts, window_counts_with, AnchoredAnalysis, DelayAxis, HistogramScan,
    StreamAnalyzer, WindowCounter, WindowCounts, WindowSpec,
};

use crate::error::{Error, Result};
use crate::tagstream::{ChannelId, TagStream};

/// Default maximum delay per axis: 60 ns at 2 ns ticks.
pub const DEFAULT_MAX_DELAY_TICKS: u64 = 30;
/// Default coincidence window: 20 ns at 2 ns ticks.
pub const DEFAULT_WINDOW_TICKS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairEvent {
    pub t_i: u64,
    pub t_j: u64,
    pub ch_i: ChannelId,
    pub ch_j: ChannelId,
}

impl PairEvent {
    /// `t_j - t_i` in ticks.
    pub fn delay(&self) -> i64 {
        self.t_j as i64 - self.t_i as i64
    }
}

/// Three tags on distinct channels; `t_a` is the shared anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripletEvent {
    pub t_a: u64,
    pub t_b: u64,
    pub t_c: u64,
    pub channels: [ChannelId; 3],
}

/// One tag per channel, indexed by channel (`times[0]` is channel 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuadEvent {
    pub times: [u64; 4],
}

impl QuadEvent {
    pub fn t(&self, ch: u8) -> u64 {
        self.times[(ch - 1) as usize]
    }
}

/// Every ordered pair `(t_i on ch_i, t_j on ch_j)` with `|t_j - t_i| <= max_delay`,
/// sorted by `t_i` then `t_j`.
pub fn find_pairs(
    stream: &TagStream,
    ch_i: ChannelId,
    ch_j: ChannelId,
    max_delay: u64,
) -> Result<Vec<PairEvent>> {
    if ch_i == ch_j {
        return Err(Error::SameChannel(ch_i.get()));
    }
    let ct = stream.by_channel();
    Ok(pairs_between(ct.channel(ch_i), ct.channel(ch_j), ch_i, ch_j, max_delay))
}

pub(crate) fn pairs_between(
    ti: &[u64],
    tj: &[u64],
    ch_i: ChannelId,
    ch_j: ChannelId,
    max_delay: u64,
) -> Vec<PairEvent> {
    let mut out = Vec::new();
    let mut lo = 0usize;
    for &a in ti {
        let start = a.saturating_sub(max_delay);
        while lo < tj.len() && tj[lo] < start {
            lo += 1;
        }
        let end = a.saturating_add(max_delay);
        for &b in tj[lo..].iter().take_while(|&&b| b <= end) {
            out.push(PairEvent { t_i: a, t_j: b, ch_i, ch_j });
        }
    }
    out
}

fn common_channel(pairs: &[PairEvent]) -> Result<Option<(ChannelId, ChannelId)>> {
    let Some(first) = pairs.first() else { return Ok(None) };
    if pairs.iter().any(|p| p.ch_i != first.ch_i || p.ch_j != first.ch_j) {
        return Err(Error::MismatchedAnchorChannel);
    }
    Ok(Some((first.ch_i, first.ch_j)))
}

/// Joins pairs `(A,B)` and `(A,C)` whose anchor timestamps differ by at most
/// `anchor_tol`. The emitted anchor time is the one from `pairs_ab`.
pub fn find_triplets(
    pairs_ab: &[PairEvent],
    pairs_ac: &[PairEvent],
    anchor_tol: u64,
) -> Result<Vec<TripletEvent>> {
    let (Some((a, b)), Some((a2, c))) = (common_channel(pairs_ab)?, common_channel(pairs_ac)?)
    else {
        return Ok(Vec::new());
    };
    if a != a2 {
        return Err(Error::MismatchedAnchorChannel);
    }
    if b == c {
        return Err(Error::SameChannel(b.get()));
    }
    let mut ac: Vec<&PairEvent> = pairs_ac.iter().collect();
    ac.sort_by_key(|p| (p.t_i, p.t_j));
    let mut ab: Vec<&PairEvent> = pairs_ab.iter().collect();
    ab.sort_by_key(|p| (p.t_i, p.t_j));

    let mut out = Vec::new();
    let mut lo = 0usize;
    for p in ab {
        let start = p.t_i.saturating_sub(anchor_tol);
        while lo < ac.len() && ac[lo].t_i < start {
            lo += 1;
        }
        let end = p.t_i.saturating_add(anchor_tol);
        for q in ac[lo..].iter().take_while(|q| q.t_i <= end) {
            out.push(TripletEvent { t_a: p.t_i, t_b: p.t_j, t_c: q.t_j, channels: [a, b, c] });
        }
    }
    Ok(out)
}

/// Joins triplets with pairs that share exactly one channel; the shared
/// timestamps must agree within `anchor_tol`, the triplet's copy is kept.
///
/// The canonical use is triplets on (1,3,4) and pairs on (2,4), joined on
/// channel 4.
pub fn find_quadruplets(
    triplets: &[TripletEvent],
    pairs: &[PairEvent],
    anchor_tol: u64,
) -> Result<Vec<QuadEvent>> {
    let (Some(tr), Some((pi, pj))) = (triplets.first(), common_channel(pairs)?) else {
        return Ok(Vec::new());
    };
    let chans = tr.channels;
    if triplets.iter().any(|t| t.channels != chans) {
        return Err(Error::MismatchedAnchorChannel);
    }
    let in_tr = |c: ChannelId| chans.iter().position(|&x| x == c);
    // slot of the shared channel within the triplet, and whether the pair's
    // shared end is its first element
    let (slot, shared_first, new_ch) = match (in_tr(pi), in_tr(pj)) {
        (Some(s), None) => (s, true, pj),
        (None, Some(s)) => (s, false, pi),
        _ => return Err(Error::MismatchedAnchorChannel),
    };
    let tr_time = |t: &TripletEvent| [t.t_a, t.t_b, t.t_c][slot];
    let pair_split = |p: &PairEvent| if shared_first { (p.t_i, p.t_j) } else { (p.t_j, p.t_i) };

    let mut ts: Vec<&TripletEvent> = triplets.iter().collect();
    ts.sort_by_key(|t| (tr_time(t), t.t_a, t.t_b, t.t_c));
    let mut ps: Vec<(u64, u64)> = pairs.iter().map(pair_split).collect();
    ps.sort_unstable();

    let mut out = Vec::new();
    let mut lo = 0usize;
    for t in ts {
        let shared = tr_time(t);
        let start = shared.saturating_sub(anchor_tol);
        while lo < ps.len() && ps[lo].0 < start {
            lo += 1;
        }
        let end = shared.saturating_add(anchor_tol);
        for &(_, other) in ps[lo..].iter().take_while(|p| p.0 <= end) {
            let mut times = [0u64; 4];
            times[chans[0].index()] = t.t_a;
            times[chans[1].index()] = t.t_b;
            times[chans[2].index()] = t.t_c;
            times[new_ch.index()] = other;
            out.push(QuadEvent { times });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagstream::TimeTag;
    use proptest::prelude::*;

    fn ch(i: u8) -> ChannelId {
        ChannelId::new(i).unwrap()
    }

    fn stream(tags: &[(u64, u8)]) -> TagStream {
        let tags = tags.iter().map(|&(t, c)| TimeTag::new(t, ch(c))).collect();
        let end = tags_end(&tags);
        TagStream::from_unsorted(tags, 2000, end).unwrap()
    }

    fn tags_end(tags: &Vec<TimeTag>) -> u64 {
        tags.iter().map(|t| t.ticks).max().unwrap_or(0)
    }

    #[test]
    fn pair_examples() {
        assert!(find_pairs(&stream(&[]), ch(1), ch(3), 30).unwrap().is_empty());
        let p = find_pairs(&stream(&[(0, 1), (3, 3), (100, 3)]), ch(1), ch(3), 30).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].t_i, p[0].t_j, p[0].delay()), (0, 3, 3));
        assert_eq!(find_pairs(&stream(&[]), ch(2), ch(2), 3), Err(Error::SameChannel(2)));
    }

    #[test]
    fn triplet_and_quad_construction() {
        let p13 = [PairEvent { t_i: 10, t_j: 14, ch_i: ch(1), ch_j: ch(3) }];
        let p14 = [PairEvent { t_i: 10, t_j: 18, ch_i: ch(1), ch_j: ch(4) }];
        let t = find_triplets(&p13, &p14, 0).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].t_a, t[0].t_b, t[0].t_c), (10, 14, 18));

        let p24 = [PairEvent { t_i: 11, t_j: 18, ch_i: ch(2), ch_j: ch(4) }];
        let q = find_quadruplets(&t, &p24, 0).unwrap();
        assert_eq!(q, vec![QuadEvent { times: [10, 11, 14, 18] }]);

        let p24_off = [PairEvent { t_i: 11, t_j: 19, ch_i: ch(2), ch_j: ch(4) }];
        assert!(find_quadruplets(&t, &p24_off, 0).unwrap().is_empty());

        let p14_off = [PairEvent { t_i: 11, t_j: 18, ch_i: ch(1), ch_j: ch(4) }];
        assert!(find_triplets(&p13, &p14_off, 0).unwrap().is_empty());
        assert_eq!(find_triplets(&p13, &p14_off, 1).unwrap().len(), 1);
    }

    #[test]
    fn mismatched_anchor_rejected() {
        let p13 = [PairEvent { t_i: 10, t_j: 14, ch_i: ch(1), ch_j: ch(3) }];
        let p24 = [PairEvent { t_i: 10, t_j: 18, ch_i: ch(2), ch_j: ch(4) }];
        assert_eq!(find_triplets(&p13, &p24, 0), Err(Error::MismatchedAnchorChannel));
        let t = [TripletEvent { t_a: 1, t_b: 2, t_c: 3, channels: [ch(1), ch(3), ch(4)] }];
        assert_eq!(find_quadruplets(&t, &p13, 0), Err(Error::MismatchedAnchorChannel));
    }

    fn brute_pairs(s: &TagStream, i: ChannelId, j: ChannelId, max: u64) -> Vec<PairEvent> {
        let mut out = Vec::new();
        for a in s.tags().iter().filter(|t| t.channel == i) {
            for b in s.tags().iter().filter(|t| t.channel == j) {
                if a.ticks.abs_diff(b.ticks) <= max {
                    out.push(PairEvent { t_i: a.ticks, t_j: b.ticks, ch_i: i, ch_j: j });
                }
            }
        }
        out.sort();
        out
    }

    fn arb_stream(max_tags: usize, span: u64) -> impl Strategy<Value = TagStream> {
        prop::collection::vec((0..span, 1u8..=4), 0..max_tags).prop_map(|v| stream(&v))
    }

    proptest! {
        #[test]
        fn pairs_match_brute_force(s in arb_stream(200, 400), max in 0u64..40) {
            let mut got = find_pairs(&s, ch(1), ch(3), max).unwrap();
            got.sort();
            prop_assert_eq!(got, brute_pairs(&s, ch(1), ch(3), max));
        }

        #[test]
        fn pair_delays_mirror(s in arb_stream(200, 400), max in 0u64..40) {
            let mut fwd: Vec<i64> =
                find_pairs(&s, ch(2), ch(4), max).unwrap().iter().map(|p| p.delay()).collect();
            let mut rev: Vec<i64> =
                find_pairs(&s, ch(4), ch(2), max).unwrap().iter().map(|p| -p.delay()).collect();
            fwd.sort_unstable();
            rev.sort_unstable();
            prop_assert_eq!(fwd, rev);
        }

        #[test]
        fn duplication_scales_pairs_quadratically(
            s in arb_stream(80, 300), k in 1u64..4, max in 0u64..20,
        ) {
            let base = find_pairs(&s, ch(1), ch(3), max).unwrap().len() as u64;
            let ct = s.by_channel();
            let dup = |v: &[u64]| v.iter().flat_map(|&t| std::iter::repeat(t).take(k as usize)).collect::<Vec<_>>();
            let n = pairs_between(&dup(ct.channel(ch(1))), &dup(ct.channel(ch(3))), ch(1), ch(3), max).len() as u64;
            prop_assert_eq!(n, k * k * base);
        }

        #[test]
        fn triplets_match_brute_force(s in arb_stream(120, 200), max in 0u64..25) {
            let p13 = find_pairs(&s, ch(1), ch(3), max).unwrap();
            let p14 = find_pairs(&s, ch(1), ch(4), max).unwrap();
            let mut got: Vec<_> = find_triplets(&p13, &p14, 0).unwrap()
                .iter().map(|t| (t.t_a, t.t_b, t.t_c)).collect();
            got.sort_unstable();
            let ct = s.by_channel();
            let mut want = Vec::new();
            for &a in ct.channel(ch(1)) {
                for &b in ct.channel(ch(3)) {
                    for &c in ct.channel(ch(4)) {
                        if a.abs_diff(b) <= max && a.abs_diff(c) <= max {
                            want.push((a, b, c));
                        }
                    }
                }
            }
            want.sort_unstable();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn quadruplets_match_brute_force(s in arb_stream(100, 150), max in 0u64..20) {
            let p13 = find_pairs(&s, ch(1), ch(3), max).unwrap();
            let p14 = find_pairs(&s, ch(1), ch(4), max).unwrap();
            let p24 = find_pairs(&s, ch(2), ch(4), max).unwrap();
            let tr = find_triplets(&p13, &p14, 0).unwrap();
            let mut got: Vec<_> = find_quadruplets(&tr, &p24, 0).unwrap().iter().map(|q| q.times).collect();
            got.sort_unstable();
            let ct = s.by_channel();
            let mut want = Vec::new();
            for &t1 in ct.channel(ch(1)) {
                for &t2 in ct.channel(ch(2)) {
                    for &t3 in ct.channel(ch(3)) {
                        for &t4 in ct.channel(ch(4)) {
                            if t1.abs_diff(t3) <= max && t1.abs_diff(t4) <= max && t2.abs_diff(t4) <= max {
                                want.push([t1, t2, t3, t4]);
                            }
                        }
                    }
                }
            }
            want.sort_unstable();
            prop_assert_eq!(got, want);
        }
    }
}

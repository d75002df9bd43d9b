//! Accidental-coincidence correction by set partitions.
//!
//! For a channel set `S`, every partition of `S` into `m >= 2` blocks is an
//! accidental route: independent block events landing in one window, at rate
//! `t_cᵐ⁻¹ · ∏ rate(block)`, where a singleton contributes its singles rate
//! and a larger block its already-corrected rate. Rates are in counts per
//! second and `t_c` in seconds.

use crate::coincidence::WindowCounts;
use std::fmt::Write as _;

pub fn correct_pairs(r_ij: f64, r_i: f64, r_j: f64, t_c: f64) -> f64 {
    r_ij - t_c * r_i * r_j
}

/// `c_ij`, `c_jk`, `c_ik` must already be corrected.
#[allow(clippy::too_many_arguments)]
pub fn correct_triplets(
    r_ijk: f64,
    c_ij: f64,
    c_jk: f64,
    c_ik: f64,
    r_i: f64,
    r_j: f64,
    r_k: f64,
    t_c: f64,
) -> f64 {
    r_ijk - t_c * (c_ij * r_k + c_jk * r_i + c_ik * r_j) - t_c * t_c * r_i * r_j * r_k
}

/// Lower-order corrected rates for the four-channel correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerOrder {
    /// `c12, c13, c14, c23, c24, c34`
    pub pairs: [f64; 6],
    /// `c123, c124, c134, c234`
    pub triplets: [f64; 4],
    /// `R1..R4`
    pub singles: [f64; 4],
}

pub fn correct_quadruplets(r_1234: f64, lo: &LowerOrder, t_c: f64) -> f64 {
    let [c12, c13, c14, c23, c24, c34] = lo.pairs;
    let [c123, c124, c134, c234] = lo.triplets;
    let [r1, r2, r3, r4] = lo.singles;
    r_1234
        - t_c * (c12 * c34 + c13 * c24 + c14 * c23)
        - t_c * (c123 * r4 + c124 * r3 + c134 * r2 + c234 * r1)
        - t_c * t_c * (c12 * r3 * r4 + c13 * r2 * r4 + c14 * r2 * r3)
        - t_c * t_c * (c23 * r1 * r4 + c24 * r1 * r3 + c34 * r1 * r2)
        - t_c * t_c * t_c * r1 * r2 * r3 * r4
}

/// All set partitions of `{1..n}`, blocks and elements in ascending order.
pub fn bell_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    // restricted growth strings: a[0] = 0, a[i] <= max(a[..i]) + 1
    fn rec(a: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<Vec<usize>>>) {
        if a.len() == n {
            let m = a.iter().max().map_or(0, |&x| x + 1);
            let mut blocks = vec![Vec::new(); m];
            for (i, &b) in a.iter().enumerate() {
                blocks[b].push(i + 1);
            }
            out.push(blocks);
            return;
        }
        let next = a.iter().max().map_or(0, |&x| x + 1);
        for b in 0..=next {
            a.push(b);
            rec(a, n, out);
            a.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    rec(&mut Vec::with_capacity(n), n, &mut out);
    out
}

/// Partitions of an arbitrary element bitmask, as lists of block bitmasks.
fn mask_partitions(mask: usize) -> Vec<Vec<usize>> {
    let elems: Vec<usize> = (0..usize::BITS as usize).filter(|b| mask & (1 << b) != 0).collect();
    bell_partitions(elems.len())
        .into_iter()
        .map(|p| p.iter().map(|blk| blk.iter().fold(0, |m, &e| m | 1 << elems[e - 1])).collect())
        .collect()
}

/// General n-fold corrector over elements `0..n`.
///
/// `lower[mask]` holds the corrected rate of every proper sub-block with at
/// least two elements (indexed by element bitmask); `singles[k]` the singles
/// rate of element `k`.
pub fn correct_nfold_general(observed: f64, lower: &[f64], singles: &[f64], t_c: f64, n: usize) -> f64 {
    let full = (1usize << n) - 1;
    let mut c = observed;
    for p in mask_partitions(full) {
        if p.len() < 2 {
            continue;
        }
        c -= partition_term(&p, lower, singles, t_c);
    }
    c
}

fn block_rate(block: usize, lower: &[f64], singles: &[f64]) -> f64 {
    if block.count_ones() == 1 {
        singles[block.trailing_zeros() as usize]
    } else {
        lower[block]
    }
}

fn partition_term(p: &[usize], lower: &[f64], singles: &[f64], t_c: f64) -> f64 {
    let mut v = t_c.powi(p.len() as i32 - 1);
    for &b in p {
        v *= block_rate(b, lower, singles);
    }
    v
}

/// Corrected rates for every channel subset of a four-channel acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedRates {
    pub t_c: f64,
    /// Observed rates by channel bitmask; singletons hold singles rates.
    pub observed: [f64; 16],
    /// Corrected rates by channel bitmask; singletons hold singles rates.
    pub corrected: [f64; 16],
}

fn mask(channels: &[u8]) -> usize {
    channels.iter().fold(0, |m, &c| m | 1 << (c - 1))
}

pub fn label(mask: usize) -> String {
    (0..4).filter(|b| mask & (1 << b) != 0).map(|b| char::from(b'1' + b as u8)).collect()
}

impl CorrectedRates {
    /// Corrects all subsets in order of increasing size.
    pub fn from_rates(observed: [f64; 16], t_c: f64) -> Self {
        let mut corrected = [0.0; 16];
        let singles: Vec<f64> = (0..4).map(|k| observed[1 << k]).collect();
        for k in 0..4 {
            corrected[1 << k] = observed[1 << k];
        }
        for size in 2..=4u32 {
            for m in 0..16usize {
                if m.count_ones() != size {
                    continue;
                }
                let mut c = observed[m];
                for p in mask_partitions(m) {
                    if p.len() >= 2 {
                        c -= partition_term(&p, &corrected, &singles, t_c);
                    }
                }
                corrected[m] = c;
            }
        }
        CorrectedRates { t_c, observed, corrected }
    }

    pub fn from_counts(w: &WindowCounts) -> Self {
        Self::from_rates(w.rates_by_mask(), w.t_c_seconds())
    }

    pub fn c(&self, channels: &[u8]) -> f64 {
        self.corrected[mask(channels)]
    }

    pub fn observed(&self, channels: &[u8]) -> f64 {
        self.observed[mask(channels)]
    }

    /// Total correlated Stokes/anti-Stokes pair rate.
    pub fn c_p(&self) -> f64 {
        [[1, 3], [1, 4], [2, 3], [2, 4]].iter().map(|p| self.c(p)).sum()
    }

    pub fn c_q(&self) -> f64 {
        self.corrected[15]
    }

    /// `c134 + c234`: one Stokes, both anti-Stokes detectors.
    pub fn triplets_one_stokes(&self) -> f64 {
        self.c(&[1, 3, 4]) + self.c(&[2, 3, 4])
    }

    /// `c123 + c124`: both Stokes detectors, one anti-Stokes.
    pub fn triplets_two_stokes(&self) -> f64 {
        self.c(&[1, 2, 3]) + self.c(&[1, 2, 4])
    }

    /// Accidental quadruplet contributions grouped by partition class.
    pub fn quad_breakdown(&self) -> AccidentalBreakdown {
        let singles: Vec<f64> = (0..4).map(|k| self.observed[1 << k]).collect();
        let mut b = AccidentalBreakdown::default();
        for p in mask_partitions(15) {
            if p.len() < 2 {
                continue;
            }
            let v = partition_term(&p, &self.corrected, &singles, self.t_c);
            let mut sizes: Vec<u32> = p.iter().map(|x| x.count_ones()).collect();
            sizes.sort_unstable();
            match sizes.as_slice() {
                [2, 2] => b.double_pairs += v,
                [1, 3] => b.triplet_single += v,
                [1, 1, 2] => b.pair_two_singles += v,
                _ => b.four_singles += v,
            }
        }
        b
    }

    /// Flat `key = value` audit listing every observed and corrected rate and
    /// each subtracted partition term.
    pub fn report(&self) -> String {
        let singles: Vec<f64> = (0..4).map(|k| self.observed[1 << k]).collect();
        let mut s = String::new();
        let _ = writeln!(s, "t_c_s = {:e}", self.t_c);
        for k in 0..4 {
            let _ = writeln!(s, "R{} = {:e}", k + 1, self.observed[1 << k]);
        }
        for size in 2..=4u32 {
            for m in (0..16usize).filter(|m| m.count_ones() == size) {
                let l = label(m);
                let _ = writeln!(s, "R{l} = {:e}", self.observed[m]);
                for p in mask_partitions(m).iter().filter(|p| p.len() >= 2) {
                    let name: String = p
                        .iter()
                        .map(|&b| {
                            if b.count_ones() == 1 {
                                format!("R{}", label(b))
                            } else {
                                format!("c{}", label(b))
                            }
                        })
                        .collect::<Vec<_>>()
                        .join("*");
                    let v = partition_term(p, &self.corrected, &singles, self.t_c);
                    let _ = writeln!(s, "term.{l}.{name} = {v:.6e}");
                }
                let _ = writeln!(s, "c{l} = {:.6e}", self.corrected[m]);
            }
        }
        let b = self.quad_breakdown();
        let _ = writeln!(s, "c_p = {:.6e}", self.c_p());
        let _ = writeln!(s, "c134+c234 = {:.6e}", self.triplets_one_stokes());
        let _ = writeln!(s, "c123+c124 = {:.6e}", self.triplets_two_stokes());
        let _ = writeln!(s, "c_q = {:.6e}", self.c_q());
        let _ = writeln!(s, "accidental.double_pairs = {:.6e}", b.double_pairs);
        let _ = writeln!(s, "accidental.pair_two_singles = {:.6e}", b.pair_two_singles);
        let _ = writeln!(s, "accidental.triplet_single = {:.6e}", b.triplet_single);
        let _ = writeln!(s, "accidental.four_singles = {:.6e}", b.four_singles);
        s
    }
}

/// Subtracted quadruplet accidentals per partition class.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AccidentalBreakdown {
    /// `{2,2}`: two independent correlated pairs.
    pub double_pairs: f64,
    /// `{2,1,1}`: a pair and two singles.
    pub pair_two_singles: f64,
    /// `{3,1}`: a triplet and a single.
    pub triplet_single: f64,
    /// `{1,1,1,1}`.
    pub four_singles: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn pair_examples() {
        assert_eq!(correct_pairs(2e4, 1e6, 1e6, 2e-8), 0.0);
        assert!((correct_pairs(5e4, 1e6, 1e6, 2e-8) - 3e4).abs() < 1e-9);
    }

    #[test]
    fn triplet_hand_example() {
        // c-terms sum to 1e8 and R_i R_j R_k = 1e15
        let c = correct_triplets(10.0, 1e5, 0.0, 0.0, 1e6, 1e6, 1e3, 2e-8);
        assert!((c - 7.6).abs() < 1e-9, "{c}");
    }

    #[test]
    fn bell_numbers() {
        let counts: Vec<usize> = (0..=6).map(|n| bell_partitions(n).len()).collect();
        assert_eq!(counts, vec![1, 1, 2, 5, 15, 52, 203]);
        for p in bell_partitions(4) {
            let mut all: Vec<usize> = p.concat();
            all.sort_unstable();
            assert_eq!(all, vec![1, 2, 3, 4]);
        }
    }

    #[test]
    fn quad_term_count() {
        assert_eq!(mask_partitions(15).iter().filter(|p| p.len() >= 2).count(), 14);
    }

    #[test]
    fn quad_with_zero_lower_order() {
        let lo = LowerOrder { pairs: [0.0; 6], triplets: [0.0; 4], singles: [1e6, 2e6, 3e6, 4e6] };
        let t = 2e-8;
        let c = correct_quadruplets(100.0, &lo, t);
        assert!(close(c, 100.0 - t * t * t * 24e24));
        let mut lower = vec![0.0; 16];
        lower[15] = f64::NAN;
        let g = correct_nfold_general(100.0, &lower, &lo.singles, t, 4);
        assert!(close(c, g));
    }

    #[test]
    fn breakdown_classes() {
        let mut obs = [0.0; 16];
        for k in 0..4 {
            obs[1 << k] = 1e6;
        }
        let t = 1e-8;
        for m in [3, 5, 9, 6, 10, 12] {
            obs[m] = t * 1e12;
        }
        obs[mask(&[1, 3])] += 100.0;
        obs[mask(&[2, 4])] += 100.0;
        let c = CorrectedRates::from_rates(obs, t);
        let b = c.quad_breakdown();
        assert!(close(b.double_pairs, t * 100.0 * 100.0));
        assert!(close(b.four_singles, t.powi(3) * 1e24));
        let r = c.report();
        assert!(r.contains("term.1234.c13*c24 = "));
        assert!(r.contains("c_q = "));
    }

    proptest! {
        #[test]
        fn general_matches_explicit(
            r in prop::array::uniform4(0.0f64..2e6),
            pr in prop::array::uniform6(0.0f64..1e5),
            tr in prop::array::uniform4(0.0f64..1e3),
            quad in 0.0f64..100.0,
            t in 1e-9f64..1e-7,
        ) {
            let pair_masks = [3usize, 5, 9, 6, 10, 12];
            let trip_masks = [7usize, 11, 13, 14];
            let mut obs = [0.0; 16];
            for k in 0..4 { obs[1 << k] = r[k]; }
            for (m, v) in pair_masks.iter().zip(pr) { obs[*m] = v; }
            for (m, v) in trip_masks.iter().zip(tr) { obs[*m] = v; }
            obs[15] = quad;
            let all = CorrectedRates::from_rates(obs, t);

            let c = |m: usize| all.corrected[m];
            for (i, &m) in pair_masks.iter().enumerate() {
                let (a, b) = (m.trailing_zeros() as usize, 63 - (m as u64).leading_zeros() as usize);
                prop_assert!(close(c(m), correct_pairs(pr[i], r[a], r[b], t)));
                let g = correct_nfold_general(pr[i], &[0.0; 4], &[r[a], r[b]], t, 2);
                prop_assert!(close(c(m), g));
            }
            // triplet 134: i=1, j=3, k=4
            let e134 = correct_triplets(tr[2], c(5), c(12), c(9), r[0], r[2], r[3], t);
            prop_assert!(close(c(13), e134));
            let e123 = correct_triplets(tr[0], c(3), c(6), c(5), r[0], r[1], r[2], t);
            prop_assert!(close(c(7), e123));
            let lo = LowerOrder {
                pairs: pair_masks.map(c),
                triplets: trip_masks.map(c),
                singles: r,
            };
            let e = correct_quadruplets(quad, &lo, t);
            prop_assert!(close(all.c_q(), e), "{} vs {}", all.c_q(), e);
            let g = correct_nfold_general(quad, &all.corrected, &r, t, 4);
            prop_assert!(close(g, e));
        }

        #[test]
        fn linear_in_observed(quad in 0.0f64..100.0, d in -10.0f64..10.0) {
            let mut obs = [0.0; 16];
            for k in 0..4 { obs[1 << k] = 1e6; }
            obs[15] = quad;
            let a = CorrectedRates::from_rates(obs, 2e-8).c_q();
            obs[15] = quad + d;
            let b = CorrectedRates::from_rates(obs, 2e-8).c_q();
            prop_assert!(((b - a) - d).abs() < 1e-9);
        }
    }
}

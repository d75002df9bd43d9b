//! Time-tag data model: channel-stamped detection events at a fixed tick
//! resolution, plus the QTAG binary container in [`file`].

mod file;

pub use file::{
    parse_tag_file, write_tag_file, ReadError, TagFileHeader, TagFileReader, TagFileWriter,
    PREAMBLE_LEN, RECORD_LEN,
};

use crate::error::{Error, Result};
use std::fmt;

/// Default timebase: 2 ns per tick.
pub const DEFAULT_TICK_PS: u64 = 2000;

/// Largest tick value representable in a QTAG record.
pub const MAX_TICKS: u64 = (1 << 60) - 1;

/// Which output field of the source a detector watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Stokes,
    AntiStokes,
}

/// Detector number 1..=4. Channels 1 and 2 sit in the Stokes arm, 3 and 4 in
/// the anti-Stokes arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelId(u8);

impl ChannelId {
    pub const ALL: [ChannelId; 4] = [ChannelId(1), ChannelId(2), ChannelId(3), ChannelId(4)];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=4).contains(&id) {
            Ok(ChannelId(id))
        } else {
            Err(Error::InvalidChannel(id))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based index, handy for `[T; 4]` tables.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < 4, "channel index {index} out of range");
        ChannelId(index as u8 + 1)
    }

    pub fn arm(self) -> Arm {
        if self.0 <= 2 {
            Arm::Stokes
        } else {
            Arm::AntiStokes
        }
    }

    /// One-hot code used in QTAG records.
    pub fn mask(self) -> u8 {
        1 << (self.0 - 1)
    }

    pub fn from_mask(mask: u8) -> Option<Self> {
        match mask {
            0b0001 => Some(ChannelId(1)),
            0b0010 => Some(ChannelId(2)),
            0b0100 => Some(ChannelId(3)),
            0b1000 => Some(ChannelId(4)),
            _ => None,
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub ticks: u64,
    pub channel: ChannelId,
}

impl TimeTag {
    pub fn new(ticks: u64, channel: ChannelId) -> Self {
        TimeTag { ticks, channel }
    }
}

/// Incremental checker for the stream ordering rules: ticks non-decreasing,
/// and no channel twice on the same tick.
#[derive(Debug, Clone, Default)]
pub(crate) struct OrderCheck {
    last_tick: Option<u64>,
    seen_at_tick: u8,
    index: usize,
}

impl OrderCheck {
    pub(crate) fn push(&mut self, tag: TimeTag) -> Result<()> {
        let index = self.index;
        self.index += 1;
        match self.last_tick {
            Some(prev) if tag.ticks < prev => {
                return Err(Error::NonMonotonicTime { index, ticks: tag.ticks, previous: prev })
            }
            Some(prev) if tag.ticks == prev => {
                if self.seen_at_tick & tag.channel.mask() != 0 {
                    return Err(Error::DuplicateChannelTick {
                        index,
                        channel: tag.channel.get(),
                        ticks: tag.ticks,
                    });
                }
                self.seen_at_tick |= tag.channel.mask();
            }
            _ => {
                self.last_tick = Some(tag.ticks);
                self.seen_at_tick = tag.channel.mask();
            }
        }
        Ok(())
    }
}

/// An immutable, validated sequence of time tags.
///
/// `duration` is the acquisition span `T_m` in ticks. It is carried
/// explicitly so that quiet tails still count toward rates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    tags: Vec<TimeTag>,
    tick_ps: u64,
    duration: u64,
}

impl TagStream {
    pub fn new(tags: Vec<TimeTag>, tick_ps: u64, duration: u64) -> Result<Self> {
        if tick_ps == 0 {
            return Err(Error::ZeroTickDuration);
        }
        let mut check = OrderCheck::default();
        for &tag in &tags {
            check.push(tag)?;
        }
        if let Some(last) = tags.last() {
            if last.ticks > duration {
                return Err(Error::TickBeyondDuration { ticks: last.ticks, duration });
            }
        }
        Ok(TagStream { tags, tick_ps, duration })
    }

    /// Sorts into canonical `(ticks, channel)` order and drops repeated
    /// same-channel same-tick entries, keeping the first.
    pub fn from_unsorted(mut tags: Vec<TimeTag>, tick_ps: u64, duration: u64) -> Result<Self> {
        tags.sort_unstable();
        tags.dedup();
        Self::new(tags, tick_ps, duration)
    }

    pub fn empty(tick_ps: u64, duration: u64) -> Self {
        TagStream { tags: Vec::new(), tick_ps, duration }
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tick_ps(&self) -> u64 {
        self.tick_ps
    }

    /// Acquisition span `T_m` in ticks.
    pub fn duration(&self) -> u64 {
        self.duration
    }

    pub fn tick_seconds(&self) -> f64 {
        self.tick_ps as f64 * 1e-12
    }

    pub fn duration_seconds(&self) -> f64 {
        self.duration as f64 * self.tick_seconds()
    }

    pub fn singles_counts(&self) -> [u64; 4] {
        let mut counts = [0u64; 4];
        for tag in &self.tags {
            counts[tag.channel.index()] += 1;
        }
        counts
    }

    /// Per-channel count rates in counts per second.
    pub fn singles_rates(&self) -> Result<[f64; 4]> {
        if self.duration == 0 {
            return Err(Error::ZeroDuration);
        }
        let t = self.duration_seconds();
        Ok(self.singles_counts().map(|n| n as f64 / t))
    }

    /// Splits the stream into one sorted timestamp array per channel.
    pub fn by_channel(&self) -> ChannelTimes {
        let mut ct = ChannelTimes::default();
        for tag in &self.tags {
            ct.times[tag.channel.index()].push(tag.ticks);
        }
        ct
    }

    /// Union of two streams on the same timebase. Duplicate same-channel
    /// same-tick tags collapse to one.
    pub fn merge(&self, other: &TagStream) -> Result<TagStream> {
        if self.tick_ps != other.tick_ps {
            return Err(Error::InvalidConfig(format!(
                "cannot merge streams with tick {} ps and {} ps",
                self.tick_ps, other.tick_ps
            )));
        }
        let mut tags = Vec::with_capacity(self.len() + other.len());
        tags.extend_from_slice(&self.tags);
        tags.extend_from_slice(&other.tags);
        tags.sort_unstable();
        tags.dedup();
        TagStream::new(tags, self.tick_ps, self.duration.max(other.duration))
    }

    /// Tags with `start <= ticks < end`, rebased so that `start` becomes 0.
    pub fn slice(&self, start: u64, end: u64) -> TagStream {
        let end = end.min(self.duration.max(start));
        let lo = self.tags.partition_point(|t| t.ticks < start);
        let hi = self.tags.partition_point(|t| t.ticks < end);
        let tags = self.tags[lo..hi]
            .iter()
            .map(|t| TimeTag::new(t.ticks - start, t.channel))
            .collect();
        TagStream { tags, tick_ps: self.tick_ps, duration: end.saturating_sub(start) }
    }

    /// Moves every tag by `delta` ticks, keeping `T_m`. Tags pushed outside
    /// `[0, T_m]` are dropped.
    pub fn shifted(&self, delta: i64) -> TagStream {
        let tags = self
            .tags
            .iter()
            .filter_map(|t| {
                let moved = t.ticks as i64 + delta;
                (moved >= 0 && moved as u64 <= self.duration)
                    .then(|| TimeTag::new(moved as u64, t.channel))
            })
            .collect();
        TagStream { tags, tick_ps: self.tick_ps, duration: self.duration }
    }
}

/// Per-channel sorted timestamps; the working representation of the
/// coincidence engine.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelTimes {
    pub times: [Vec<u64>; 4],
}

impl ChannelTimes {
    pub fn channel(&self, ch: ChannelId) -> &[u64] {
        &self.times[ch.index()]
    }

    pub fn len(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends tags that are already in time order.
    pub fn extend_from_tags(&mut self, tags: &[TimeTag]) {
        for tag in tags {
            self.times[tag.channel.index()].push(tag.ticks);
        }
    }

    /// Drops every timestamp strictly below `tick`.
    pub fn drop_before(&mut self, tick: u64) {
        for v in &mut self.times {
            let cut = v.partition_point(|&t| t < tick);
            v.drain(..cut);
        }
    }

    /// Timestamps in `[start, end)` for every channel.
    pub fn window(&self, start: u64, end: u64) -> ChannelTimes {
        let mut out = ChannelTimes::default();
        for (dst, src) in out.times.iter_mut().zip(&self.times) {
            let lo = src.partition_point(|&t| t < start);
            let hi = src.partition_point(|&t| t < end);
            dst.extend_from_slice(&src[lo..hi]);
        }
        out
    }
}

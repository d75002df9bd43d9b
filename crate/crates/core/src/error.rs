use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // tag files and streams
    #[error("bad magic bytes, not a QTAG file")]
    BadMagic,
    #[error("unsupported QTAG version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated inside the {0}-byte header")]
    TruncatedHeader(usize),
    #[error("trailing {0} bytes do not form a complete 8-byte record")]
    TruncatedRecord(usize),
    #[error("record {index}: tick {ticks} precedes previous tick {previous}")]
    NonMonotonicTime { index: usize, ticks: u64, previous: u64 },
    #[error("record {index}: channel {channel} reported twice at tick {ticks}")]
    DuplicateChannelTick { index: usize, channel: u8, ticks: u64 },
    #[error("record {index}: channel mask {mask:#06b} is not one-hot")]
    InvalidChannelMask { index: usize, mask: u8 },
    #[error("channel id {0} outside 1..=4")]
    InvalidChannel(u8),
    #[error("tick {ticks} exceeds the stream duration {duration}")]
    TickBeyondDuration { ticks: u64, duration: u64 },
    #[error("tick {0} does not fit in 60 bits")]
    TicksOverflow(u64),
    #[error("tick duration must be positive")]
    ZeroTickDuration,
    #[error("stream duration is zero")]
    ZeroDuration,

    // coincidence search
    #[error("coincidence channels must differ (got {0} twice)")]
    SameChannel(u8),
    #[error("pair lists do not share the expected anchor channel")]
    MismatchedAnchorChannel,
    #[error("histogram bin width must be at least one tick")]
    ZeroBinWidth,
    #[error("empty or inverted histogram range [{lo}, {hi}]")]
    BadRange { lo: i64, hi: i64 },
    #[error("coincidence window must be at least one tick")]
    ZeroWindow,
    #[error("normalization needs positive rates, got {0}")]
    ZeroRate(f64),

    // analytic oracle
    #[error("g2 argument {0} is below 1")]
    DomainError(f64),
    #[error("delay arguments are not generated by four absolute times")]
    InconsistentDelays,
    #[error("invalid correlation model: {0}")]
    InvalidModel(String),

    // rate inference
    #[error("efficiency of channel {0} is not positive")]
    ZeroEfficiency(u8),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("fit did not converge after {iterations} iterations (last step {last_step:e})")]
    NoConvergence { iterations: usize, last_step: f64 },

    // simulator
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
}

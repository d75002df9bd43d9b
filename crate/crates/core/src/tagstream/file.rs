//! QTAG binary container.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `QTAG` (0x51 0x54 0x41 0x47)      |
//! | 4      | 2    | version, currently 1                    |
//! | 6      | 2    | reserved, written as 0                  |
//! | 8      | 8    | tick duration in picoseconds            |
//! | 16     | 8    | acquisition span `T_m` in ticks         |
//! | 24     | 8·N  | records                                 |
//!
//! Each record is one `u64`: bits 0-3 hold the one-hot channel code
//! (`0b0001` = channel 1 ... `0b1000` = channel 4), bits 4-63 the tick count.
//! Records are sorted by tick.

use super::{ChannelId, OrderCheck, TagStream, TimeTag, MAX_TICKS};
use crate::error::{Error, Result};
use std::io::{self, Read, Write};

pub const MAGIC: [u8; 4] = *b"QTAG";
pub const VERSION: u16 = 1;
/// Fixed header plus the `T_m` word.
pub const PREAMBLE_LEN: usize = 24;
pub const RECORD_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagFileHeader {
    pub tick_ps: u64,
    pub duration: u64,
}

impl TagFileHeader {
    pub fn to_bytes(self) -> [u8; PREAMBLE_LEN] {
        let mut out = [0u8; PREAMBLE_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&VERSION.to_le_bytes());
        out[8..16].copy_from_slice(&self.tick_ps.to_le_bytes());
        out[16..24].copy_from_slice(&self.duration.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[0..4] != MAGIC {
            return Err(if bytes.len() < 4 && MAGIC.starts_with(bytes) {
                Error::TruncatedHeader(PREAMBLE_LEN)
            } else {
                Error::BadMagic
            });
        }
        if bytes.len() < 6 {
            return Err(Error::TruncatedHeader(PREAMBLE_LEN));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes.len() < PREAMBLE_LEN {
            return Err(Error::TruncatedHeader(PREAMBLE_LEN));
        }
        let tick_ps = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let duration = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if tick_ps == 0 {
            return Err(Error::ZeroTickDuration);
        }
        Ok(TagFileHeader { tick_ps, duration })
    }
}

pub fn encode_record(tag: TimeTag) -> Result<u64> {
    if tag.ticks > MAX_TICKS {
        return Err(Error::TicksOverflow(tag.ticks));
    }
    Ok((tag.ticks << 4) | tag.channel.mask() as u64)
}

fn decode_record(word: u64, index: usize) -> Result<TimeTag> {
    let mask = (word & 0xF) as u8;
    let channel = ChannelId::from_mask(mask).ok_or(Error::InvalidChannelMask { index, mask })?;
    Ok(TimeTag::new(word >> 4, channel))
}

/// Serializes a stream into QTAG bytes.
pub fn write_tag_file(stream: &TagStream) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(PREAMBLE_LEN + RECORD_LEN * stream.len());
    let header = TagFileHeader { tick_ps: stream.tick_ps(), duration: stream.duration() };
    out.extend_from_slice(&header.to_bytes());
    for &tag in stream.tags() {
        out.extend_from_slice(&encode_record(tag)?.to_le_bytes());
    }
    Ok(out)
}

/// Parses and validates a complete QTAG buffer.
pub fn parse_tag_file(bytes: &[u8]) -> Result<TagStream> {
    let mut reader = TagFileReader::new(bytes).map_err(|e| match e {
        ReadError::Format(e) => e,
        ReadError::Io(_) => Error::TruncatedHeader(PREAMBLE_LEN),
    })?;
    let body = &bytes[PREAMBLE_LEN..];
    let mut tags = Vec::with_capacity(body.len() / RECORD_LEN);
    loop {
        match reader.read_chunk(&mut tags, usize::MAX) {
            Ok(0) => break,
            Ok(_) => {}
            Err(ReadError::Format(e)) => return Err(e),
            Err(ReadError::Io(_)) => unreachable!("reading from a slice"),
        }
    }
    let header = reader.header();
    TagStream::new(tags, header.tick_ps, header.duration)
}

/// Failure while streaming a tag file: either the bytes are malformed or the
/// underlying reader failed.
#[derive(Debug)]
pub enum ReadError {
    Format(Error),
    Io(io::Error),
}

impl std::fmt::Display for ReadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReadError::Format(e) => write!(f, "{e}"),
            ReadError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ReadError {}

impl From<Error> for ReadError {
    fn from(e: Error) -> Self {
        ReadError::Format(e)
    }
}

/// Chunked reader for tag files too large to hold in memory. Validates the
/// same ordering rules as [`TagStream::new`] across chunk boundaries.
pub struct TagFileReader<R: Read> {
    inner: R,
    header: TagFileHeader,
    check: OrderCheck,
    index: usize,
    buf: Vec<u8>,
    pending: usize,
}

impl<R: Read> TagFileReader<R> {
    pub fn new(mut inner: R) -> std::result::Result<Self, ReadError> {
        let mut pre = [0u8; PREAMBLE_LEN];
        let got = read_full(&mut inner, &mut pre).map_err(ReadError::Io)?;
        let header = TagFileHeader::from_bytes(&pre[..got])?;
        Ok(TagFileReader {
            inner,
            header,
            check: OrderCheck::default(),
            index: 0,
            buf: vec![0u8; 1 << 16],
            pending: 0,
        })
    }

    pub fn header(&self) -> TagFileHeader {
        self.header
    }

    pub fn into_inner(self) -> R {
        self.inner
    }

    /// Appends up to `max` validated tags to `out`; returns how many were
    /// read, 0 at end of file.
    pub fn read_chunk(
        &mut self,
        out: &mut Vec<TimeTag>,
        max: usize,
    ) -> std::result::Result<usize, ReadError> {
        let mut added = 0;
        while added < max {
            let n = self.inner.read(&mut self.buf[self.pending..]).map_err(ReadError::Io)?;
            let filled = self.pending + n;
            if n == 0 {
                if self.pending != 0 {
                    return Err(Error::TruncatedRecord(self.pending).into());
                }
                break;
            }
            let whole = filled / RECORD_LEN * RECORD_LEN;
            for rec in self.buf[..whole].chunks_exact(RECORD_LEN) {
                let word = u64::from_le_bytes(rec.try_into().unwrap());
                let tag = decode_record(word, self.index)?;
                self.check.push(tag)?;
                if tag.ticks > self.header.duration {
                    return Err(
                        Error::TickBeyondDuration { ticks: tag.ticks, duration: self.header.duration }
                            .into(),
                    );
                }
                self.index += 1;
                out.push(tag);
                added += 1;
            }
            self.buf.copy_within(whole..filled, 0);
            self.pending = filled - whole;
        }
        Ok(added)
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Streaming writer; the header is emitted on construction, so `T_m` must be
/// known up front.
pub struct TagFileWriter<W: Write> {
    inner: W,
    check: OrderCheck,
    written: u64,
}

impl<W: Write> TagFileWriter<W> {
    pub fn new(mut inner: W, header: TagFileHeader) -> io::Result<Self> {
        inner.write_all(&header.to_bytes())?;
        Ok(TagFileWriter { inner, check: OrderCheck::default(), written: 0 })
    }

    pub fn write_tags(&mut self, tags: &[TimeTag]) -> std::result::Result<(), ReadError> {
        let mut bytes = Vec::with_capacity(tags.len() * RECORD_LEN);
        for &tag in tags {
            self.check.push(tag)?;
            bytes.extend_from_slice(&encode_record(tag)?.to_le_bytes());
        }
        self.inner.write_all(&bytes).map_err(ReadError::Io)?;
        self.written += tags.len() as u64;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

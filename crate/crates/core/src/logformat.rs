//! The `.cpf` trace file format.
//!
//! ```text
//! file    := header frame*                 (buffered handlers)
//!          | header record*                (DirectId: one implicit frame)
//! header  := "CPF1" version:u16 handler:u8 codec:u8 capacity:u32
//!            name_len:u16 name:[u8; name_len]
//! frame   := seq_no:u64 entry_count:u32 codec:u8 uncompressed_len:u32
//!            payload_len:u32 payload:[u8; payload_len]
//! record  := timestamp_ns:u64 tag:i32
//! ```
//!
//! All integers are little-endian. A frame payload decompresses to
//! `entry_count` consecutive records. Frames may appear in any order; the
//! decoder restores per-channel order from `seq_no`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, ErrorKind, Read};
use std::path::Path;

use thiserror::Error;

use crate::codecs::{self, CodecError, CodecId};
use crate::profiler::{HandlerKind, TimestampEntry};

pub const MAGIC: [u8; 4] = *b"CPF1";
pub const VERSION: u16 = 1;
pub const ENTRY_SIZE: usize = 12;
pub const FRAME_HEADER_SIZE: usize = 21;
/// Size of the fixed part of the file header, before the channel name.
pub const FILE_HEADER_FIXED_SIZE: usize = 14;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error at byte {offset}: {source}")]
    Io { offset: u64, source: io::Error },
    #[error("bad magic at byte 0: {found:02x?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {found} at byte 4")]
    UnsupportedVersion { found: u16 },
    #[error("unknown handler kind {found} at byte 6")]
    UnknownHandler { found: u8 },
    #[error("unknown codec id {found} at byte {offset}")]
    UnknownCodec { offset: u64, found: u8 },
    #[error("truncated {what} at byte {offset}: need {needed} bytes, have {available}")]
    Truncated {
        what: &'static str,
        offset: u64,
        needed: u64,
        available: u64,
    },
    #[error("channel name at byte {offset} is not valid UTF-8")]
    BadChannelName { offset: u64 },
    #[error("frame at byte {offset}: uncompressed_len {uncompressed_len} != 12 x {entry_count} entries")]
    FrameLength {
        offset: u64,
        entry_count: u32,
        uncompressed_len: u32,
    },
    #[error("frame at byte {offset}: payload integrity failure: {source}")]
    Payload { offset: u64, source: CodecError },
    #[error("frame at byte {offset} repeats seq_no {seq_no}")]
    DuplicateFrame { offset: u64, seq_no: u64 },
    #[error("missing frame seq_no {seq_no} (file has frames up to {max_seq})")]
    MissingFrame { seq_no: u64, max_seq: u64 },
}

impl FormatError {
    /// Byte offset of the failure, when it is tied to a position in the file.
    pub fn offset(&self) -> Option<u64> {
        match self {
            FormatError::Io { offset, .. }
            | FormatError::UnknownCodec { offset, .. }
            | FormatError::Truncated { offset, .. }
            | FormatError::BadChannelName { offset }
            | FormatError::FrameLength { offset, .. }
            | FormatError::Payload { offset, .. }
            | FormatError::DuplicateFrame { offset, .. } => Some(*offset),
            FormatError::BadMagic { .. } => Some(0),
            FormatError::UnsupportedVersion { .. } => Some(4),
            FormatError::UnknownHandler { .. } => Some(6),
            FormatError::MissingFrame { .. } => None,
        }
    }
}

/// One decoded entry. The channel is implicit in the file it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub timestamp_ns: u64,
    pub tag: i32,
}

impl From<TimestampEntry> for Record {
    fn from(e: TimestampEntry) -> Self {
        Record {
            timestamp_ns: e.timestamp_ns,
            tag: e.tag,
        }
    }
}

#[inline]
pub fn encode_entry(entry: &TimestampEntry) -> [u8; ENTRY_SIZE] {
    encode_record(entry.timestamp_ns, entry.tag)
}

#[inline]
pub fn encode_record(timestamp_ns: u64, tag: i32) -> [u8; ENTRY_SIZE] {
    let mut out = [0u8; ENTRY_SIZE];
    out[..8].copy_from_slice(&timestamp_ns.to_le_bytes());
    out[8..].copy_from_slice(&tag.to_le_bytes());
    out
}

pub fn decode_entry(bytes: &[u8]) -> Result<Record, FormatError> {
    if bytes.len() != ENTRY_SIZE {
        return Err(FormatError::Truncated {
            what: "entry",
            offset: 0,
            needed: ENTRY_SIZE as u64,
            available: bytes.len() as u64,
        });
    }
    Ok(record_at(bytes, 0))
}

#[inline]
fn record_at(bytes: &[u8], idx: usize) -> Record {
    let b = &bytes[idx * ENTRY_SIZE..(idx + 1) * ENTRY_SIZE];
    Record {
        timestamp_ns: u64::from_le_bytes(b[..8].try_into().unwrap()),
        tag: i32::from_le_bytes(b[8..].try_into().unwrap()),
    }
}

fn records(raw: &[u8]) -> impl Iterator<Item = Record> + '_ {
    (0..raw.len() / ENTRY_SIZE).map(move |i| record_at(raw, i))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFileHeader {
    pub version: u16,
    pub handler: HandlerKind,
    pub default_codec: CodecId,
    pub block_capacity: u32,
    pub channel_name: String,
}

impl TraceFileHeader {
    pub fn new(handler: HandlerKind, block_capacity: u32, channel_name: &str) -> Self {
        TraceFileHeader {
            version: VERSION,
            handler,
            default_codec: handler.codec().unwrap_or(CodecId::Identity),
            block_capacity,
            channel_name: channel_name.to_owned(),
        }
    }

    /// Panics if the channel name is longer than `u16::MAX` bytes; the
    /// profiler validates names before it gets here.
    pub fn encode(&self) -> Vec<u8> {
        let name = self.channel_name.as_bytes();
        let name_len = u16::try_from(name.len()).expect("channel name too long");
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.handler.as_byte());
        out.push(self.default_codec.as_byte());
        out.extend_from_slice(&self.block_capacity.to_le_bytes());
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out
    }

    pub fn encoded_len(&self) -> usize {
        FILE_HEADER_FIXED_SIZE + self.channel_name.len()
    }

    pub fn read_from<R: Read>(reader: &mut R) -> Result<Self, FormatError> {
        let mut fixed = [0u8; FILE_HEADER_FIXED_SIZE];
        let got = read_up_to(reader, &mut fixed, 0)?;
        // Magic first, so a foreign file is reported as such even if short.
        if got >= 4 && fixed[..4] != MAGIC {
            return Err(FormatError::BadMagic {
                found: fixed[..4].try_into().unwrap(),
            });
        }
        if got < FILE_HEADER_FIXED_SIZE {
            return Err(FormatError::Truncated {
                what: "file header",
                offset: 0,
                needed: FILE_HEADER_FIXED_SIZE as u64,
                available: got as u64,
            });
        }
        let version = u16::from_le_bytes([fixed[4], fixed[5]]);
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion { found: version });
        }
        let handler =
            HandlerKind::from_byte(fixed[6]).ok_or(FormatError::UnknownHandler { found: fixed[6] })?;
        let default_codec = CodecId::from_byte(fixed[7]).ok_or(FormatError::UnknownCodec {
            offset: 7,
            found: fixed[7],
        })?;
        let block_capacity = u32::from_le_bytes(fixed[8..12].try_into().unwrap());
        let name_len = u16::from_le_bytes([fixed[12], fixed[13]]) as usize;
        let mut name = vec![0u8; name_len];
        let got = read_up_to(reader, &mut name, FILE_HEADER_FIXED_SIZE as u64)?;
        if got < name_len {
            return Err(FormatError::Truncated {
                what: "channel name",
                offset: FILE_HEADER_FIXED_SIZE as u64,
                needed: name_len as u64,
                available: got as u64,
            });
        }
        let channel_name = String::from_utf8(name).map_err(|_| FormatError::BadChannelName {
            offset: FILE_HEADER_FIXED_SIZE as u64,
        })?;
        Ok(TraceFileHeader {
            version,
            handler,
            default_codec,
            block_capacity,
            channel_name,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub seq_no: u64,
    pub entry_count: u32,
    pub codec: CodecId,
    pub uncompressed_len: u32,
    pub payload_len: u32,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; FRAME_HEADER_SIZE] {
        let mut out = [0u8; FRAME_HEADER_SIZE];
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut [u8]) {
        out[0..8].copy_from_slice(&self.seq_no.to_le_bytes());
        out[8..12].copy_from_slice(&self.entry_count.to_le_bytes());
        out[12] = self.codec.as_byte();
        out[13..17].copy_from_slice(&self.uncompressed_len.to_le_bytes());
        out[17..21].copy_from_slice(&self.payload_len.to_le_bytes());
    }

    pub fn parse(bytes: &[u8; FRAME_HEADER_SIZE], offset: u64) -> Result<Self, FormatError> {
        let codec = CodecId::from_byte(bytes[12]).ok_or(FormatError::UnknownCodec {
            offset: offset + 12,
            found: bytes[12],
        })?;
        let header = FrameHeader {
            seq_no: u64::from_le_bytes(bytes[0..8].try_into().unwrap()),
            entry_count: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
            codec,
            uncompressed_len: u32::from_le_bytes(bytes[13..17].try_into().unwrap()),
            payload_len: u32::from_le_bytes(bytes[17..21].try_into().unwrap()),
        };
        if header.uncompressed_len as u64 != header.entry_count as u64 * ENTRY_SIZE as u64 {
            return Err(FormatError::FrameLength {
                offset,
                entry_count: header.entry_count,
                uncompressed_len: header.uncompressed_len,
            });
        }
        Ok(header)
    }
}

/// A frame with its payload already decompressed to raw records.
#[derive(Debug)]
pub struct Frame {
    pub header: FrameHeader,
    /// Byte offset of the frame header in the file.
    pub offset: u64,
    pub raw: Vec<u8>,
}

impl Frame {
    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        records(&self.raw)
    }
}

/// Sequential frame reader. DirectId files yield one implicit frame (seq 0,
/// identity codec) covering everything after the header.
pub struct TraceReader<R> {
    header: TraceFileHeader,
    reader: R,
    offset: u64,
    implicit_done: bool,
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, FormatError> {
        let file = File::open(path).map_err(|source| FormatError::Io { offset: 0, source })?;
        TraceReader::new(BufReader::with_capacity(1 << 20, file))
    }
}

impl<R: Read> TraceReader<R> {
    pub fn new(mut reader: R) -> Result<Self, FormatError> {
        let header = TraceFileHeader::read_from(&mut reader)?;
        let offset = header.encoded_len() as u64;
        Ok(TraceReader {
            header,
            reader,
            offset,
            implicit_done: false,
        })
    }

    pub fn header(&self) -> &TraceFileHeader {
        &self.header
    }

    /// Current byte offset, i.e. the total bytes consumed so far.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>, FormatError> {
        if self.header.handler == HandlerKind::DirectId {
            return self.next_implicit_frame();
        }
        let start = self.offset;
        let mut hdr = [0u8; FRAME_HEADER_SIZE];
        let got = read_up_to(&mut self.reader, &mut hdr, start)?;
        if got == 0 {
            return Ok(None);
        }
        if got < FRAME_HEADER_SIZE {
            return Err(FormatError::Truncated {
                what: "frame header",
                offset: start,
                needed: FRAME_HEADER_SIZE as u64,
                available: got as u64,
            });
        }
        let header = FrameHeader::parse(&hdr, start)?;
        let payload_offset = start + FRAME_HEADER_SIZE as u64;
        let mut payload = vec![0u8; header.payload_len as usize];
        let got = read_up_to(&mut self.reader, &mut payload, payload_offset)?;
        if got < payload.len() {
            return Err(FormatError::Truncated {
                what: "frame payload",
                offset: payload_offset,
                needed: payload.len() as u64,
                available: got as u64,
            });
        }
        self.offset = payload_offset + payload.len() as u64;
        let raw = if header.codec == CodecId::Identity {
            if payload.len() != header.uncompressed_len as usize {
                return Err(FormatError::Payload {
                    offset: start,
                    source: CodecError::LengthMismatch {
                        codec: CodecId::Identity,
                        expected: header.uncompressed_len as usize,
                        actual: payload.len(),
                    },
                });
            }
            payload
        } else {
            codecs::decompress(header.codec, &payload, header.uncompressed_len as usize)
                .map_err(|source| FormatError::Payload {
                    offset: start,
                    source,
                })?
        };
        Ok(Some(Frame {
            header,
            offset: start,
            raw,
        }))
    }

    fn next_implicit_frame(&mut self) -> Result<Option<Frame>, FormatError> {
        if self.implicit_done {
            return Ok(None);
        }
        self.implicit_done = true;
        let start = self.offset;
        let mut raw = Vec::new();
        self.reader
            .read_to_end(&mut raw)
            .map_err(|source| FormatError::Io {
                offset: start,
                source,
            })?;
        self.offset += raw.len() as u64;
        let whole = raw.len() / ENTRY_SIZE * ENTRY_SIZE;
        if whole != raw.len() {
            return Err(FormatError::Truncated {
                what: "record",
                offset: start + whole as u64,
                needed: ENTRY_SIZE as u64,
                available: (raw.len() - whole) as u64,
            });
        }
        let entry_count = u32::try_from(raw.len() / ENTRY_SIZE).map_err(|_| FormatError::FrameLength {
            offset: start,
            entry_count: u32::MAX,
            uncompressed_len: u32::MAX,
        })?;
        let header = FrameHeader {
            seq_no: 0,
            entry_count,
            codec: CodecId::Identity,
            uncompressed_len: raw.len() as u32,
            payload_len: raw.len() as u32,
        };
        Ok(Some(Frame {
            header,
            offset: start,
            raw,
        }))
    }
}

/// Fill `buf` as far as the reader allows; returns bytes read (short only at EOF).
fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8], offset: u64) -> Result<usize, FormatError> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(source) => {
                return Err(FormatError::Io {
                    offset: offset + filled as u64,
                    source,
                })
            }
        }
    }
    Ok(filled)
}

/// Per-frame facts gathered without keeping entries in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSummary {
    pub seq_no: u64,
    pub offset: u64,
    pub entry_count: u32,
    pub codec: CodecId,
    pub payload_len: u32,
    pub first_ts: Option<u64>,
    pub last_ts: Option<u64>,
    /// Adjacent pairs inside the frame whose timestamp decreases.
    pub inner_regressions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FileReport {
    pub frames: u64,
    pub entries: u64,
    /// Bytes of encoded records (12 per entry).
    pub raw_bytes: u64,
    /// Total file size including headers.
    pub disk_bytes: u64,
    pub max_seq: Option<u64>,
    pub missing_seqs: Vec<u64>,
    pub duplicate_seqs: Vec<u64>,
    /// Decreasing adjacent timestamp pairs, in seq_no order.
    pub timestamp_regressions: u64,
}

impl FileReport {
    pub fn seq_complete(&self) -> bool {
        self.missing_seqs.is_empty() && self.duplicate_seqs.is_empty()
    }
}

#[derive(Debug)]
pub struct FileScan {
    pub header: TraceFileHeader,
    /// Sorted by seq_no.
    pub frames: Vec<FrameSummary>,
    pub report: FileReport,
}

/// Parse every frame and check payload integrity without materializing the
/// entries. Sequence gaps and duplicates are reported, not raised.
pub fn scan_file(path: &Path) -> Result<FileScan, FormatError> {
    let mut reader = TraceReader::open(path)?;
    let mut frames = Vec::new();
    while let Some(frame) = reader.next_frame()? {
        let mut first = None;
        let mut last: Option<u64> = None;
        let mut inner_regressions = 0;
        for r in frame.records() {
            if first.is_none() {
                first = Some(r.timestamp_ns);
            }
            if matches!(last, Some(prev) if r.timestamp_ns < prev) {
                inner_regressions += 1;
            }
            last = Some(r.timestamp_ns);
        }
        frames.push(FrameSummary {
            seq_no: frame.header.seq_no,
            offset: frame.offset,
            entry_count: frame.header.entry_count,
            codec: frame.header.codec,
            payload_len: frame.header.payload_len,
            first_ts: first,
            last_ts: last,
            inner_regressions,
        });
    }
    let disk_bytes = reader.offset();
    let header = reader.header.clone();
    frames.sort_by_key(|f| f.seq_no);

    let mut report = FileReport {
        frames: frames.len() as u64,
        disk_bytes,
        ..FileReport::default()
    };
    let mut prev_last: Option<u64> = None;
    for (i, f) in frames.iter().enumerate() {
        report.entries += f.entry_count as u64;
        report.timestamp_regressions += f.inner_regressions;
        if let (Some(prev), Some(first)) = (prev_last, f.first_ts) {
            if first < prev {
                report.timestamp_regressions += 1;
            }
        }
        if f.last_ts.is_some() {
            prev_last = f.last_ts;
        }
        if i > 0 && frames[i - 1].seq_no == f.seq_no {
            report.duplicate_seqs.push(f.seq_no);
        }
    }
    report.raw_bytes = report.entries * ENTRY_SIZE as u64;
    report.max_seq = frames.last().map(|f| f.seq_no);
    if let Some(max) = report.max_seq {
        let mut expected = 0u64;
        for f in &frames {
            while expected < f.seq_no {
                report.missing_seqs.push(expected);
                expected += 1;
            }
            expected = expected.max(f.seq_no + 1);
        }
        debug_assert_eq!(expected, max + 1);
    }
    Ok(FileScan {
        header,
        frames,
        report,
    })
}

#[derive(Debug)]
pub struct DecodedTrace {
    pub header: TraceFileHeader,
    /// Entries in logging order (frames reordered by seq_no).
    pub entries: Vec<Record>,
    pub report: FileReport,
}

/// Decode a whole trace file. Unlike [`scan_file`], a gap or duplicate in the
/// frame sequence is an error.
pub fn decode_file(path: &Path) -> Result<DecodedTrace, FormatError> {
    let mut reader = TraceReader::open(path)?;
    let mut by_seq: BTreeMap<u64, Frame> = BTreeMap::new();
    while let Some(frame) = reader.next_frame()? {
        let seq_no = frame.header.seq_no;
        let offset = frame.offset;
        if by_seq.insert(seq_no, frame).is_some() {
            return Err(FormatError::DuplicateFrame { offset, seq_no });
        }
    }
    let disk_bytes = reader.offset();
    let header = reader.header.clone();
    let max_seq = by_seq.keys().next_back().copied();
    if let Some(max) = max_seq {
        if let Some(missing) = (0..=max).find(|s| !by_seq.contains_key(s)) {
            return Err(FormatError::MissingFrame {
                seq_no: missing,
                max_seq: max,
            });
        }
    }
    let total: usize = by_seq.values().map(|f| f.header.entry_count as usize).sum();
    let mut entries = Vec::with_capacity(total);
    for frame in by_seq.values() {
        entries.extend(frame.records());
    }
    let timestamp_regressions = entries
        .windows(2)
        .filter(|w| w[1].timestamp_ns < w[0].timestamp_ns)
        .count() as u64;
    let report = FileReport {
        frames: by_seq.len() as u64,
        entries: entries.len() as u64,
        raw_bytes: (entries.len() * ENTRY_SIZE) as u64,
        disk_bytes,
        max_seq,
        missing_seqs: Vec::new(),
        duplicate_seqs: Vec::new(),
        timestamp_regressions,
    };
    Ok(DecodedTrace {
        header,
        entries,
        report,
    })
}

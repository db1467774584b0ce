//! Block codecs used by the compression workers.
//!
//! Each codec has a stable one-byte id that is written verbatim into every
//! block frame, so the decoder never has to guess the format of a payload.

use std::fmt;

use thiserror::Error;

/// Zstandard level used for block compression.
pub const ZSTD_LEVEL: i32 = 3;

/// LZO1X-1 with the standard 14-bit dictionary.
const LZO_LEVEL: lzo1x::CompressLevel = lzo1x::CompressLevel::new(3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CodecId {
    Identity = 0,
    Zstd = 1,
    /// LZO1X-1, the real-time codec.
    Realtime = 2,
}

impl CodecId {
    pub const ALL: [CodecId; 3] = [CodecId::Identity, CodecId::Zstd, CodecId::Realtime];

    pub fn as_byte(self) -> u8 {
        self as u8
    }

    pub fn from_byte(byte: u8) -> Option<CodecId> {
        match byte {
            0 => Some(CodecId::Identity),
            1 => Some(CodecId::Zstd),
            2 => Some(CodecId::Realtime),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecId::Identity => "identity",
            CodecId::Zstd => "zstd",
            CodecId::Realtime => "lzo1x",
        }
    }
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("cannot compress an empty payload")]
    EmptyInput,
    #[error("{codec} compression failed: {reason}")]
    Compress { codec: CodecId, reason: String },
    #[error("{codec} payload is corrupt: {reason}")]
    Corrupt { codec: CodecId, reason: String },
    #[error("{codec} payload decoded to {actual} bytes, expected {expected}")]
    LengthMismatch {
        codec: CodecId,
        expected: usize,
        actual: usize,
    },
}

/// Compress `raw` with `codec`. `Identity` returns a copy of the input.
pub fn compress(codec: CodecId, raw: &[u8]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    BlockCompressor::new(codec)?.compress_into(raw, &mut out)?;
    Ok(out)
}

/// Invert [`compress`]. The output is exactly `expected_len` bytes or an error.
pub fn decompress(
    codec: CodecId,
    compressed: &[u8],
    expected_len: usize,
) -> Result<Vec<u8>, CodecError> {
    let out = match codec {
        CodecId::Identity => compressed.to_vec(),
        // A frame whose content is shorter than expected decodes cleanly and
        // is caught by the length check below.
        CodecId::Zstd => zstd::bulk::decompress(compressed, expected_len).map_err(|e| {
            CodecError::Corrupt {
                codec,
                reason: e.to_string(),
            }
        })?,
        CodecId::Realtime => {
            let mut out = vec![0u8; expected_len];
            lzo1x::decompress(compressed, &mut out).map_err(|e| CodecError::Corrupt {
                codec,
                reason: e.to_string(),
            })?;
            out
        }
    };
    if out.len() != expected_len {
        return Err(CodecError::LengthMismatch {
            codec,
            expected: expected_len,
            actual: out.len(),
        });
    }
    Ok(out)
}

/// Per-worker compression state. Zstd keeps its context between blocks.
pub struct BlockCompressor {
    codec: CodecId,
    zstd: Option<zstd::bulk::Compressor<'static>>,
}

impl BlockCompressor {
    pub fn new(codec: CodecId) -> Result<Self, CodecError> {
        let zstd = match codec {
            CodecId::Zstd => Some(zstd::bulk::Compressor::new(ZSTD_LEVEL).map_err(|e| {
                CodecError::Compress {
                    codec,
                    reason: e.to_string(),
                }
            })?),
            _ => None,
        };
        Ok(BlockCompressor { codec, zstd })
    }

    pub fn codec(&self) -> CodecId {
        self.codec
    }

    /// Append the compressed form of `raw` to `out`, returning the number of
    /// bytes appended. On error `out` is left at its original length.
    pub fn compress_into(&mut self, raw: &[u8], out: &mut Vec<u8>) -> Result<usize, CodecError> {
        if raw.is_empty() {
            return Err(CodecError::EmptyInput);
        }
        let start = out.len();
        match self.codec {
            CodecId::Identity => out.extend_from_slice(raw),
            CodecId::Zstd => {
                let compressor = self.zstd.as_mut().expect("zstd context");
                let bound = zstd::zstd_safe::compress_bound(raw.len());
                out.resize(start + bound, 0);
                match compressor.compress_to_buffer(raw, &mut out[start..]) {
                    Ok(n) => out.truncate(start + n),
                    Err(e) => {
                        out.truncate(start);
                        return Err(CodecError::Compress {
                            codec: self.codec,
                            reason: e.to_string(),
                        });
                    }
                }
            }
            CodecId::Realtime => out.extend_from_slice(&lzo1x::compress(raw, LZO_LEVEL)),
        }
        Ok(out.len() - start)
    }
}

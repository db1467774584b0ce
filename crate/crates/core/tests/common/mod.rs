#![allow(dead_code)]

use std::fs;
use std::path::Path;

use blockprof::logformat::{encode_record, FrameHeader, TraceFileHeader, ENTRY_SIZE};
use blockprof::{CodecId, HandlerKind};

/// Write a BufferedId trace by hand: one identity frame per `(seq_no, records)`.
pub fn write_frames(path: &Path, name: &str, frames: &[(u64, Vec<(u64, i32)>)]) {
    let mut bytes = TraceFileHeader::new(HandlerKind::BufferedId, 64, name).encode();
    for (seq_no, records) in frames {
        let raw: Vec<u8> = records
            .iter()
            .flat_map(|&(ts, tag)| encode_record(ts, tag))
            .collect();
        let header = FrameHeader {
            seq_no: *seq_no,
            entry_count: records.len() as u32,
            codec: CodecId::Identity,
            uncompressed_len: (records.len() * ENTRY_SIZE) as u32,
            payload_len: raw.len() as u32,
        };
        bytes.extend_from_slice(&header.encode());
        bytes.extend_from_slice(&raw);
    }
    fs::write(path, bytes).unwrap();
}

/// Seeded tag sequence in `[-1000, 1000)`.
pub fn seeded_tags(seed: u64, n: usize) -> Vec<i32> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1000..1000)).collect()
}

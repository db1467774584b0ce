//! Per-entry dispatch strategies.
//!
//! * Null discards the entry.
//! * DirectId writes each 12-byte record to the channel's file immediately.
//! * The buffered kinds append to the channel's current block and hand full
//!   blocks to the pipeline; whether a block is compressed is decided there.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, PoisonError};

use crate::logformat::{encode_entry, TraceFileHeader};
use crate::pipeline::{BufferBlock, Pipeline};
use crate::profiler::TimestampEntry;

/// An append-only trace file with write accounting.
///
/// `write_ops` counts entry-carrying writes only; the file header is not
/// included.
#[derive(Debug)]
pub struct TraceSink {
    path: PathBuf,
    file: File,
    write_ops: AtomicU64,
    entries: AtomicU64,
    bytes: AtomicU64,
    errors: AtomicU64,
    first_error: Mutex<Option<String>>,
}

impl TraceSink {
    /// Create (or truncate) `path`, write `header`, and reopen for appending.
    pub fn create(path: &Path, header: &TraceFileHeader) -> io::Result<TraceSink> {
        let encoded = header.encode();
        let mut f = File::create(path)?;
        f.write_all(&encoded)?;
        drop(f);
        let file = OpenOptions::new().append(true).open(path)?;
        let sink = TraceSink::from_file(file, path.to_path_buf());
        sink.bytes.store(encoded.len() as u64, Ordering::Relaxed);
        Ok(sink)
    }

    pub fn from_file(file: File, path: PathBuf) -> TraceSink {
        TraceSink {
            path,
            file,
            write_ops: AtomicU64::new(0),
            entries: AtomicU64::new(0),
            bytes: AtomicU64::new(0),
            errors: AtomicU64::new(0),
            first_error: Mutex::new(None),
        }
    }

    /// One write carrying `entries` records. Failures are counted, never raised.
    pub fn write_entries(&self, bytes: &[u8], entries: u64) {
        self.write_ops.fetch_add(1, Ordering::Relaxed);
        match (&self.file).write_all(bytes) {
            Ok(()) => {
                self.entries.fetch_add(entries, Ordering::Relaxed);
                self.bytes.fetch_add(bytes.len() as u64, Ordering::Relaxed);
            }
            Err(e) => {
                if self.errors.fetch_add(1, Ordering::Relaxed) == 0 {
                    log::error!("write to {} failed: {e}", self.path.display());
                    *self.first_error.lock().unwrap_or_else(PoisonError::into_inner) =
                        Some(e.to_string());
                }
            }
        }
    }

    pub fn sync(&self) {
        if let Err(e) = self.file.sync_data() {
            // /dev/null and friends refuse fsync; that is not data loss.
            if e.kind() != io::ErrorKind::InvalidInput {
                log::warn!("fsync of {} failed: {e}", self.path.display());
            }
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_ops(&self) -> u64 {
        self.write_ops.load(Ordering::Relaxed)
    }

    pub fn entries_written(&self) -> u64 {
        self.entries.load(Ordering::Relaxed)
    }

    /// Bytes on disk, header included.
    pub fn bytes_written(&self) -> u64 {
        self.bytes.load(Ordering::Relaxed)
    }

    pub fn write_errors(&self) -> u64 {
        self.errors.load(Ordering::Relaxed)
    }

    pub fn first_error(&self) -> Option<String> {
        self.first_error.lock().unwrap_or_else(PoisonError::into_inner).clone()
    }
}

/// Fill state of one buffered channel, guarded by its mutex.
#[derive(Debug, Default)]
pub(crate) struct FillState {
    current: Option<Box<BufferBlock>>,
    next_seq: u64,
    sealed_entries: u64,
    sealed_blocks: u64,
    closed: bool,
    late_drops: u64,
}

pub(crate) struct BufferedState {
    channel_id: u32,
    pipeline: Arc<Pipeline>,
    fill: Mutex<FillState>,
}

impl BufferedState {
    pub(crate) fn new(channel_id: u32, pipeline: Arc<Pipeline>) -> Self {
        BufferedState {
            channel_id,
            pipeline,
            fill: Mutex::new(FillState::default()),
        }
    }

    fn lock(&self) -> MutexGuard<'_, FillState> {
        self.fill.lock().unwrap_or_else(PoisonError::into_inner)
    }

    fn seal(&self, fill: &mut FillState) {
        if let Some(mut block) = fill.current.take() {
            if block.count() == 0 {
                self.pipeline.recycle(block);
                return;
            }
            block.seq_no = fill.next_seq;
            fill.next_seq += 1;
            fill.sealed_entries += block.count() as u64;
            fill.sealed_blocks += 1;
            // Cannot fail: the block is non-empty and queues fit the pool.
            let _ = self.pipeline.seal_and_submit(block);
        }
    }

    /// Seal the partially filled block (if any) and refuse further appends.
    pub(crate) fn close_and_flush(&self) {
        let mut fill = self.lock();
        fill.closed = true;
        self.seal(&mut fill);
    }

    /// Entries in the block currently being filled.
    pub(crate) fn filling_count(&self) -> u32 {
        self.lock().current.as_ref().map_or(0, |b| b.count())
    }

    pub(crate) fn sealed_blocks(&self) -> u64 {
        self.lock().sealed_blocks
    }

    pub(crate) fn sealed_entries(&self) -> u64 {
        self.lock().sealed_entries
    }

    pub(crate) fn late_drops(&self) -> u64 {
        self.lock().late_drops
    }
}

pub(crate) enum HandlerState {
    Null,
    Direct(Arc<TraceSink>),
    Buffered(BufferedState),
}

impl HandlerState {
    #[inline]
    pub(crate) fn dispatch(&self, entry: &TimestampEntry) {
        match self {
            HandlerState::Null => handle_null(entry),
            HandlerState::Direct(sink) => handle_direct(entry, sink),
            HandlerState::Buffered(state) => handle_buffered(entry, state),
        }
    }
}

/// The call boundary and nothing else.
#[inline(never)]
pub fn handle_null(entry: &TimestampEntry) {
    std::hint::black_box(entry);
}

/// One write system call per entry; the OS has the record when this returns.
#[inline(never)]
pub fn handle_direct(entry: &TimestampEntry, sink: &TraceSink) {
    sink.write_entries(&encode_entry(entry), 1);
}

#[inline]
pub(crate) fn handle_buffered(entry: &TimestampEntry, state: &BufferedState) {
    let mut fill = state.lock();
    if fill.closed {
        fill.late_drops += 1;
        return;
    }
    let block = match fill.current {
        Some(ref mut block) => block,
        None => match state.pipeline.acquire_empty(state.channel_id) {
            Ok(block) => fill.current.insert(block),
            Err(_) => {
                fill.late_drops += 1;
                return;
            }
        },
    };
    if block.push(entry.timestamp_ns, entry.tag) {
        state.seal(&mut fill);
    }
}

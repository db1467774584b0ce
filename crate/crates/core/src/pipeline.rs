//! Off-critical-path block machinery.
//!
//! ```text
//!  producers ──seal──► raw queue ──► compression workers ──┐
//!      ▲          │                                         ▼
//!      │          └──(no codec)──────────────────────► write queue ──► writer
//!      └──────────────────── free pool ◄──────────────── recycle ◄─────┘
//! ```
//!
//! A fixed pool of blocks circulates through three bounded MPMC queues. Every
//! queue is sized to the pool, so pushing a pool block can never fail, and a
//! block is owned by exactly one stage at a time.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex, PoisonError};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_queue::ArrayQueue;
use thiserror::Error;

use crate::codecs::{BlockCompressor, CodecId};
use crate::handlers::TraceSink;
use crate::logformat::{encode_record, FrameHeader, ENTRY_SIZE, FRAME_HEADER_SIZE};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("pipeline is shut down")]
    ShutDown,
    #[error("writer thread is gone; no block will ever be recycled")]
    WriterGone,
    #[error("empty blocks cannot be submitted")]
    EmptyBlock,
    #[error("failed to spawn pipeline thread: {0}")]
    Spawn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadState {
    Raw,
    /// The frame (header and compressed payload) sits in the block's output
    /// buffer; `len` is the payload length.
    Compressed { codec: CodecId, len: usize },
}

/// Fixed-capacity run of encoded entries for one channel.
///
/// The record buffer keeps `FRAME_HEADER_SIZE` bytes of headroom so an
/// uncompressed block goes to disk with a single write.
#[derive(Debug)]
pub struct BufferBlock {
    pub seq_no: u64,
    pub channel_id: u32,
    count: u32,
    capacity: u32,
    data: Vec<u8>,
    out: Vec<u8>,
    payload: PayloadState,
}

impl BufferBlock {
    fn new(capacity: u32) -> Box<Self> {
        let mut data = Vec::with_capacity(FRAME_HEADER_SIZE + capacity as usize * ENTRY_SIZE);
        data.resize(FRAME_HEADER_SIZE, 0);
        Box::new(BufferBlock {
            seq_no: 0,
            channel_id: 0,
            count: 0,
            capacity,
            data,
            out: Vec::new(),
            payload: PayloadState::Raw,
        })
    }

    /// Append one entry; returns true when the block is now full.
    #[inline]
    pub fn push(&mut self, timestamp_ns: u64, tag: i32) -> bool {
        debug_assert!(self.count < self.capacity);
        self.data.extend_from_slice(&encode_record(timestamp_ns, tag));
        self.count += 1;
        self.count == self.capacity
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.count == self.capacity
    }

    pub fn payload_state(&self) -> PayloadState {
        self.payload
    }

    /// The encoded records, 12 bytes per entry.
    pub fn records(&self) -> &[u8] {
        &self.data[FRAME_HEADER_SIZE..]
    }

    fn reset(&mut self) {
        self.seq_no = 0;
        self.count = 0;
        self.data.truncate(FRAME_HEADER_SIZE);
        self.out.clear();
        self.payload = PayloadState::Raw;
    }

    fn compress(&mut self, compressor: &mut BlockCompressor) -> Result<(), crate::codecs::CodecError> {
        self.out.clear();
        self.out.resize(FRAME_HEADER_SIZE, 0);
        let len = compressor.compress_into(&self.data[FRAME_HEADER_SIZE..], &mut self.out)?;
        let header = FrameHeader {
            seq_no: self.seq_no,
            entry_count: self.count,
            codec: compressor.codec(),
            uncompressed_len: self.count * ENTRY_SIZE as u32,
            payload_len: len as u32,
        };
        header.encode_into(&mut self.out[..FRAME_HEADER_SIZE]);
        self.payload = PayloadState::Compressed {
            codec: compressor.codec(),
            len,
        };
        Ok(())
    }

    /// The complete on-disk frame for this block.
    fn frame(&mut self) -> &[u8] {
        match self.payload {
            PayloadState::Compressed { .. } => &self.out,
            PayloadState::Raw => {
                let len = self.count * ENTRY_SIZE as u32;
                FrameHeader {
                    seq_no: self.seq_no,
                    entry_count: self.count,
                    codec: CodecId::Identity,
                    uncompressed_len: len,
                    payload_len: len,
                }
                .encode_into(&mut self.data[..FRAME_HEADER_SIZE]);
                &self.data
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub num_blocks: usize,
    pub block_capacity: u32,
    /// `None` sends sealed blocks straight to the writer.
    pub codec: Option<CodecId>,
    pub num_workers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrainReport {
    pub timed_out: bool,
    pub codec_fallbacks: u64,
    pub free_blocks: usize,
    pub num_blocks: usize,
    pub errors: Vec<String>,
}

struct Shared {
    codec: Option<CodecId>,
    num_blocks: usize,
    free: ArrayQueue<Box<BufferBlock>>,
    raw: ArrayQueue<Box<BufferBlock>>,
    write: ArrayQueue<Box<BufferBlock>>,
    sinks: Mutex<Vec<Arc<TraceSink>>>,
    accepting: AtomicBool,
    draining: AtomicBool,
    workers_alive: AtomicUsize,
    writer_alive: AtomicBool,
    codec_fallbacks: AtomicU64,
    orphan_blocks: AtomicU64,
}

pub struct Pipeline {
    shared: Arc<Shared>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    writer_done: Mutex<Option<Receiver<()>>>,
    report: Mutex<Option<DrainReport>>,
}

impl Pipeline {
    /// Allocate the block pool and start the workers and the writer.
    pub fn start(config: PipelineConfig) -> Result<Pipeline, PipelineError> {
        assert!(config.num_blocks > 0 && config.block_capacity > 0);
        let n = config.num_blocks;
        let free = ArrayQueue::new(n);
        for _ in 0..n {
            let _ = free.push(BufferBlock::new(config.block_capacity));
        }
        let workers = if config.codec.is_some() {
            config.num_workers.max(1)
        } else {
            0
        };
        let shared = Arc::new(Shared {
            codec: config.codec,
            num_blocks: n,
            free,
            raw: ArrayQueue::new(n),
            write: ArrayQueue::new(n),
            sinks: Mutex::new(Vec::new()),
            accepting: AtomicBool::new(true),
            draining: AtomicBool::new(false),
            workers_alive: AtomicUsize::new(workers),
            writer_alive: AtomicBool::new(true),
            codec_fallbacks: AtomicU64::new(0),
            orphan_blocks: AtomicU64::new(0),
        });

        let pipeline = Pipeline {
            shared: shared.clone(),
            threads: Mutex::new(Vec::new()),
            writer_done: Mutex::new(None),
            report: Mutex::new(None),
        };
        let (tx, rx) = mpsc::channel();
        *pipeline.writer_done.lock().unwrap() = Some(rx);

        let mut threads = Vec::with_capacity(workers + 1);
        if let Some(codec) = config.codec {
            for i in 0..workers {
                let worker_shared = shared.clone();
                let spawned = thread::Builder::new()
                    .name(format!("blockprof-compress-{i}"))
                    .spawn(move || compression_worker_loop(&worker_shared, codec));
                match spawned {
                    Ok(h) => threads.push(h),
                    Err(e) => {
                        shared.workers_alive.fetch_sub(1, Ordering::SeqCst);
                        pipeline.abort_start(threads);
                        return Err(PipelineError::Spawn(e.to_string()));
                    }
                }
            }
        }
        let writer_shared = shared.clone();
        let spawned = thread::Builder::new()
            .name("blockprof-writer".into())
            .spawn(move || {
                writer_loop(&writer_shared);
                writer_shared.writer_alive.store(false, Ordering::SeqCst);
                let _ = tx.send(());
            });
        match spawned {
            Ok(h) => threads.push(h),
            Err(e) => {
                shared.writer_alive.store(false, Ordering::SeqCst);
                pipeline.abort_start(threads);
                return Err(PipelineError::Spawn(e.to_string()));
            }
        }
        *pipeline.threads.lock().unwrap() = threads;
        Ok(pipeline)
    }

    fn abort_start(&self, threads: Vec<JoinHandle<()>>) {
        self.shared.accepting.store(false, Ordering::SeqCst);
        self.shared.draining.store(true, Ordering::SeqCst);
        for h in threads {
            let _ = h.join();
        }
        *self.report.lock().unwrap() = Some(DrainReport {
            timed_out: false,
            codec_fallbacks: 0,
            free_blocks: self.shared.free.len(),
            num_blocks: self.shared.num_blocks,
            errors: vec!["pipeline failed to start".into()],
        });
    }

    pub fn num_blocks(&self) -> usize {
        self.shared.num_blocks
    }

    pub fn codec(&self) -> Option<CodecId> {
        self.shared.codec
    }

    pub fn free_blocks(&self) -> usize {
        self.shared.free.len()
    }

    pub fn queued_raw(&self) -> usize {
        self.shared.raw.len()
    }

    pub fn queued_write(&self) -> usize {
        self.shared.write.len()
    }

    pub fn codec_fallbacks(&self) -> u64 {
        self.shared.codec_fallbacks.load(Ordering::Relaxed)
    }

    /// Attach the output for `channel_id`. Channel ids are dense, so sinks
    /// must be registered in id order.
    pub fn register_sink(&self, channel_id: u32, sink: Arc<TraceSink>) {
        let mut sinks = self.shared.sinks.lock().unwrap_or_else(PoisonError::into_inner);
        assert_eq!(sinks.len(), channel_id as usize, "sinks must be registered in id order");
        sinks.push(sink);
    }

    /// Take an empty block from the free pool, waiting for the writer to
    /// recycle one if the pool is exhausted. Never drops.
    pub fn acquire_empty(&self, channel_id: u32) -> Result<Box<BufferBlock>, PipelineError> {
        let shared = &*self.shared;
        let mut backoff = Backoff::new(Duration::from_micros(100));
        loop {
            if !shared.accepting.load(Ordering::Acquire) {
                return Err(PipelineError::ShutDown);
            }
            if let Some(mut block) = shared.free.pop() {
                block.channel_id = channel_id;
                return Ok(block);
            }
            if !shared.writer_alive.load(Ordering::Acquire) {
                return Err(PipelineError::WriterGone);
            }
            backoff.snooze();
        }
    }

    /// Hand a sealed block to the compression workers, or straight to the
    /// writer when the pipeline has no codec.
    pub fn seal_and_submit(&self, block: Box<BufferBlock>) -> Result<(), PipelineError> {
        if block.count == 0 {
            self.recycle(block);
            return Err(PipelineError::EmptyBlock);
        }
        let queue = if self.shared.codec.is_some() {
            &self.shared.raw
        } else {
            &self.shared.write
        };
        if queue.push(block).is_err() {
            unreachable!("queues are sized to the block pool");
        }
        Ok(())
    }

    /// Return an unused block to the free pool.
    pub fn recycle(&self, mut block: Box<BufferBlock>) {
        block.reset();
        if self.shared.free.push(block).is_err() {
            unreachable!("free pool is sized to the block pool");
        }
    }

    /// Stop accepting blocks, wait for every queued block to reach disk and
    /// stop all threads. Callers seal partial blocks before draining.
    /// Idempotent; later calls return the first report.
    pub fn drain(&self, timeout: Duration) -> DrainReport {
        let mut report = self.report.lock().unwrap_or_else(PoisonError::into_inner);
        if let Some(r) = report.as_ref() {
            return r.clone();
        }
        let shared = &*self.shared;
        shared.accepting.store(false, Ordering::SeqCst);
        shared.draining.store(true, Ordering::SeqCst);

        let mut errors = Vec::new();
        let done = self
            .writer_done
            .lock()
            .unwrap_or_else(PoisonError::into_inner)
            .take()
            .map(|rx| rx.recv_timeout(timeout));
        let timed_out = matches!(done, Some(Err(RecvTimeoutError::Timeout)));
        let threads = std::mem::take(&mut *self.threads.lock().unwrap_or_else(PoisonError::into_inner));
        if timed_out {
            let in_flight = shared.num_blocks - shared.free.len();
            errors.push(format!(
                "drain timed out after {timeout:?}: {in_flight} of {} blocks not recycled \
                 ({} awaiting compression, {} awaiting write); their entries are lost",
                shared.num_blocks,
                shared.raw.len(),
                shared.write.len()
            ));
            // Threads are left detached; they exit once their queues empty.
        } else {
            for h in threads {
                if h.join().is_err() {
                    errors.push("pipeline thread panicked".into());
                }
            }
        }
        let orphans = shared.orphan_blocks.load(Ordering::Relaxed);
        if orphans > 0 {
            errors.push(format!("{orphans} blocks referenced an unregistered channel"));
        }
        let r = DrainReport {
            timed_out,
            codec_fallbacks: shared.codec_fallbacks.load(Ordering::Relaxed),
            free_blocks: shared.free.len(),
            num_blocks: shared.num_blocks,
            errors,
        };
        *report = Some(r.clone());
        r
    }
}

impl Drop for Pipeline {
    fn drop(&mut self) {
        self.drain(Duration::from_secs(60));
    }
}

fn compression_worker_loop(shared: &Shared, codec: CodecId) {
    let mut compressor = match BlockCompressor::new(codec) {
        Ok(c) => Some(c),
        Err(e) => {
            log::error!("{codec} compressor unavailable, writing blocks uncompressed: {e}");
            None
        }
    };
    let mut backoff = Backoff::new(Duration::from_millis(1));
    loop {
        if let Some(mut block) = shared.raw.pop() {
            let ok = match compressor.as_mut() {
                Some(c) => block.compress(c).is_ok(),
                None => false,
            };
            if !ok {
                block.payload = PayloadState::Raw;
                shared.codec_fallbacks.fetch_add(1, Ordering::Relaxed);
            }
            if shared.write.push(block).is_err() {
                unreachable!("write queue is sized to the block pool");
            }
            backoff.reset();
            continue;
        }
        if shared.draining.load(Ordering::SeqCst) && shared.raw.is_empty() {
            break;
        }
        backoff.snooze();
    }
    shared.workers_alive.fetch_sub(1, Ordering::SeqCst);
}

fn writer_loop(shared: &Shared) {
    let mut backoff = Backoff::new(Duration::from_millis(1));
    let mut sinks: Vec<Arc<TraceSink>> = Vec::new();
    loop {
        if let Some(mut block) = shared.write.pop() {
            let id = block.channel_id as usize;
            if id >= sinks.len() {
                sinks = shared.sinks.lock().unwrap_or_else(PoisonError::into_inner).clone();
            }
            match sinks.get(id) {
                Some(sink) => {
                    let count = block.count as u64;
                    sink.write_entries(block.frame(), count);
                }
                None => {
                    shared.orphan_blocks.fetch_add(1, Ordering::Relaxed);
                }
            }
            block.reset();
            if shared.free.push(block).is_err() {
                unreachable!("free pool is sized to the block pool");
            }
            backoff.reset();
            continue;
        }
        // Workers push before they retire, so once none are alive an empty
        // write queue stays empty.
        if shared.draining.load(Ordering::SeqCst)
            && shared.workers_alive.load(Ordering::SeqCst) == 0
            && shared.raw.is_empty()
            && shared.write.is_empty()
        {
            break;
        }
        backoff.snooze();
    }
    let sinks = shared.sinks.lock().unwrap_or_else(PoisonError::into_inner).clone();
    for sink in sinks {
        sink.sync();
    }
}

/// Spin, then yield, then sleep with exponential growth up to `cap`.
pub(crate) struct Backoff {
    step: u32,
    cap: Duration,
}

impl Backoff {
    const SPIN_LIMIT: u32 = 6;
    const YIELD_LIMIT: u32 = 10;

    pub(crate) fn new(cap: Duration) -> Self {
        Backoff { step: 0, cap }
    }

    pub(crate) fn reset(&mut self) {
        self.step = 0;
    }

    pub(crate) fn snooze(&mut self) {
        if self.step < Self::SPIN_LIMIT {
            for _ in 0..(1u32 << self.step) {
                std::hint::spin_loop();
            }
        } else if self.step < Self::YIELD_LIMIT {
            thread::yield_now();
        } else {
            let exp = (self.step - Self::YIELD_LIMIT).min(16);
            let sleep = Duration::from_micros(10 << exp).min(self.cap);
            thread::sleep(sleep);
        }
        self.step = self.step.saturating_add(1);
    }
}

//! Channels, configuration and the `log_ts` entry point.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError};
use std::time::Duration;

use thiserror::Error;

use crate::clock::now_ns;
use crate::codecs::CodecId;
use crate::handlers::{BufferedState, HandlerState, TraceSink};
use crate::logformat::{TraceFileHeader, ENTRY_SIZE};
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError};

/// Environment variable that overrides [`ProfilerConfig::output_dir`].
pub const OUTPUT_DIR_ENV: &str = "BLOCKPROF_OUT";

pub const DEFAULT_NUM_BLOCKS: usize = 32;
pub const DEFAULT_BLOCK_CAPACITY: usize = 1_000_000;
pub const DEFAULT_COMPRESSION_WORKERS: usize = 4;
pub const DEFAULT_DRAIN_TIMEOUT: Duration = Duration::from_secs(60);

/// Largest capacity whose encoded block length still fits a u32 frame field.
pub const MAX_BLOCK_CAPACITY: usize = u32::MAX as usize / ENTRY_SIZE;

/// One logged event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimestampEntry {
    pub channel_id: u32,
    /// Caller-defined; recorded verbatim.
    pub tag: i32,
    pub timestamp_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum HandlerKind {
    Null = 0,
    DirectId = 1,
    BufferedId = 2,
    BufferedZstd = 3,
    BufferedRealtime = 4,
}

impl HandlerKind {
    pub const ALL: [HandlerKind; 5] = [
        HandlerKind::Null,
        HandlerKind::DirectId,
        HandlerKind::BufferedId,
        HandlerKind::BufferedZstd,
        HandlerKind::BufferedRealtime,
    ];

    pub fn as_byte(self) -> u8 {
        self as u8
    }

    pub fn from_byte(b: u8) -> Option<HandlerKind> {
        HandlerKind::ALL.get(b as usize).copied()
    }

    /// Block codec applied by the compression workers, if any.
    pub fn codec(self) -> Option<CodecId> {
        match self {
            HandlerKind::BufferedZstd => Some(CodecId::Zstd),
            HandlerKind::BufferedRealtime => Some(CodecId::Realtime),
            _ => None,
        }
    }

    pub fn is_buffered(self) -> bool {
        matches!(
            self,
            HandlerKind::BufferedId | HandlerKind::BufferedZstd | HandlerKind::BufferedRealtime
        )
    }

    pub fn writes_files(self) -> bool {
        self != HandlerKind::Null
    }

    pub fn label(self) -> &'static str {
        match self {
            HandlerKind::Null => "null",
            HandlerKind::DirectId => "direct-id",
            HandlerKind::BufferedId => "buffered-id",
            HandlerKind::BufferedZstd => "buffered-zstd",
            HandlerKind::BufferedRealtime => "buffered-realtime",
        }
    }
}

impl fmt::Display for HandlerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for HandlerKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HandlerKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| ConfigError::UnknownHandler(s.to_owned()))
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown handler {0:?}")]
    UnknownHandler(String),
    #[error("output directory {} is not writable: {source}", path.display())]
    OutputDir { path: PathBuf, source: io::Error },
    #[error("channel {0:?} is already open")]
    DuplicateChannel(String),
    #[error("invalid channel name {name:?}: {reason}")]
    ChannelName { name: String, reason: &'static str },
    #[error("cannot create trace file {}: {source}", path.display())]
    TraceFile { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Error)]
pub enum ProfilerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("profiler is shut down")]
    ShutDown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfilerConfig {
    pub handler: HandlerKind,
    pub num_blocks: usize,
    /// Entries per block.
    pub block_capacity: usize,
    pub num_compression_workers: usize,
    pub output_dir: PathBuf,
    /// Channels opened by [`Profiler::new`], in id order.
    pub channel_names: Vec<String>,
    pub drain_timeout: Duration,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        ProfilerConfig {
            handler: HandlerKind::BufferedId,
            num_blocks: DEFAULT_NUM_BLOCKS,
            block_capacity: DEFAULT_BLOCK_CAPACITY,
            num_compression_workers: DEFAULT_COMPRESSION_WORKERS,
            output_dir: PathBuf::from("traces"),
            channel_names: Vec::new(),
            drain_timeout: DEFAULT_DRAIN_TIMEOUT,
        }
    }
}

impl ProfilerConfig {
    pub fn with_handler(handler: HandlerKind) -> Self {
        ProfilerConfig {
            handler,
            ..ProfilerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn invalid(field: &'static str, reason: String) -> Result<(), ConfigError> {
            Err(ConfigError::Invalid { field, reason })
        }
        if self.block_capacity == 0 || self.block_capacity > MAX_BLOCK_CAPACITY {
            return invalid(
                "block_capacity",
                format!("{} is outside 1..={MAX_BLOCK_CAPACITY}", self.block_capacity),
            );
        }
        if self.num_compression_workers == 0 {
            return invalid("num_compression_workers", "must be at least 1".into());
        }
        if self.num_blocks < self.num_compression_workers + 2 {
            return invalid(
                "num_blocks",
                format!(
                    "{} blocks cannot keep {} workers, a filling block and a writing block busy",
                    self.num_blocks, self.num_compression_workers
                ),
            );
        }
        Ok(())
    }

    /// `output_dir`, unless `BLOCKPROF_OUT` is set and non-empty.
    pub fn effective_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}

/// Per-channel accounting returned by [`Profiler::shutdown`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelReport {
    pub channel_id: u32,
    pub name: String,
    pub path: Option<PathBuf>,
    /// Entries accepted by the handler. Always 0 for Null, which keeps no
    /// state.
    pub entries_logged: u64,
    pub entries_written: u64,
    /// Frames for buffered handlers, records for DirectId.
    pub blocks_written: u64,
    /// File size including the header.
    pub bytes_written: u64,
    /// Entry-carrying write calls issued to the file.
    pub write_ops: u64,
    pub write_errors: u64,
    pub first_error: Option<String>,
    /// `log_ts` calls on a closed or closing handle.
    pub misuse_calls: u64,
}

impl ChannelReport {
    pub fn is_lossless(&self) -> bool {
        self.write_errors == 0 && self.entries_logged == self.entries_written
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlushReport {
    pub handler: HandlerKind,
    pub channels: Vec<ChannelReport>,
    pub num_blocks: usize,
    /// Blocks back in the free pool after drain; `None` without a pipeline.
    pub free_blocks: Option<usize>,
    pub codec_fallbacks: u64,
    pub timed_out: bool,
    pub errors: Vec<String>,
}

impl FlushReport {
    pub fn is_ok(&self) -> bool {
        !self.timed_out && self.errors.is_empty() && self.channels.iter().all(|c| c.is_lossless())
    }

    pub fn channel(&self, name: &str) -> Option<&ChannelReport> {
        self.channels.iter().find(|c| c.name == name)
    }
}

struct Channel {
    id: u32,
    name: String,
    closed: AtomicBool,
    misuse: AtomicU64,
    state: HandlerState,
}

impl Channel {
    #[cold]
    fn note_misuse(&self) {
        if self.misuse.fetch_add(1, Ordering::Relaxed) == 0 {
            log::warn!(
                "log_ts on closed channel {:?}; further calls are ignored silently",
                self.name
            );
        }
    }
}

/// Cheap, cloneable handle to an open channel. Safe to share across threads.
#[derive(Clone)]
pub struct ChannelHandle(Arc<Channel>);

impl ChannelHandle {
    /// Record the current monotonic time with `tag`.
    #[inline]
    pub fn log_ts(&self, tag: i32) {
        let ch = &*self.0;
        if ch.closed.load(Ordering::Relaxed) {
            ch.note_misuse();
            return;
        }
        let entry = TimestampEntry {
            channel_id: ch.id,
            tag,
            timestamp_ns: now_ns(),
        };
        ch.state.dispatch(&entry);
    }

    pub fn id(&self) -> u32 {
        self.0.id
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn is_closed(&self) -> bool {
        self.0.closed.load(Ordering::Relaxed)
    }

    pub fn misuse_calls(&self) -> u64 {
        self.0.misuse.load(Ordering::Relaxed)
    }

    /// Entries waiting in the channel's current block (0 for unbuffered kinds).
    pub fn pending_entries(&self) -> u32 {
        match &self.0.state {
            HandlerState::Buffered(b) => b.filling_count(),
            _ => 0,
        }
    }

    /// Blocks this channel has sealed and handed to the pipeline so far.
    pub fn sealed_blocks(&self) -> u64 {
        match &self.0.state {
            HandlerState::Buffered(b) => b.sealed_blocks(),
            _ => 0,
        }
    }
}

impl fmt::Debug for ChannelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChannelHandle")
            .field("id", &self.0.id)
            .field("name", &self.0.name)
            .finish()
    }
}

struct Registry {
    channels: Vec<Arc<Channel>>,
    sinks: Vec<Option<Arc<TraceSink>>>,
}

/// A set of channels sharing one handler kind and, for buffered kinds, one
/// block pipeline.
pub struct Profiler {
    config: ProfilerConfig,
    output_dir: PathBuf,
    pipeline: Option<Arc<Pipeline>>,
    registry: Mutex<Registry>,
    report: Mutex<Option<FlushReport>>,
}

impl Profiler {
    pub fn new(config: ProfilerConfig) -> Result<Profiler, ConfigError> {
        config.validate()?;
        let output_dir = config.effective_output_dir();
        if config.handler.writes_files() {
            fs::create_dir_all(&output_dir).map_err(|source| ConfigError::OutputDir {
                path: output_dir.clone(),
                source,
            })?;
        }
        let pipeline = if config.handler.is_buffered() {
            Some(Arc::new(Pipeline::start(PipelineConfig {
                num_blocks: config.num_blocks,
                block_capacity: config.block_capacity as u32,
                codec: config.handler.codec(),
                num_workers: config.num_compression_workers,
            })?))
        } else {
            None
        };
        let profiler = Profiler {
            output_dir,
            pipeline,
            registry: Mutex::new(Registry {
                channels: Vec::new(),
                sinks: Vec::new(),
            }),
            report: Mutex::new(None),
            config,
        };
        for name in profiler.config.channel_names.clone() {
            profiler.open_channel(&name).map_err(|e| match e {
                ProfilerError::Config(c) => c,
                ProfilerError::ShutDown => unreachable!("fresh profiler"),
            })?;
        }
        Ok(profiler)
    }

    pub fn config(&self) -> &ProfilerConfig {
        &self.config
    }

    pub fn handler(&self) -> HandlerKind {
        self.config.handler
    }

    /// Directory trace files are written to, after the environment override.
    pub fn output_dir(&self) -> &Path {
        &self.output_dir
    }

    pub fn channel_path(&self, name: &str) -> PathBuf {
        self.output_dir.join(format!("{name}.cpf"))
    }

    /// Open a named channel. Ids are dense, starting at 0, in open order.
    pub fn open_channel(&self, name: &str) -> Result<ChannelHandle, ProfilerError> {
        validate_channel_name(name)?;
        if self.is_shut_down() {
            return Err(ProfilerError::ShutDown);
        }
        let mut reg = self.registry.lock().unwrap_or_else(PoisonError::into_inner);
        if reg.channels.iter().any(|c| c.name == name) {
            return Err(ConfigError::DuplicateChannel(name.to_owned()).into());
        }
        let id = reg.channels.len() as u32;
        let kind = self.config.handler;
        let sink = if kind.writes_files() {
            let path = self.channel_path(name);
            let header = TraceFileHeader::new(kind, self.config.block_capacity as u32, name);
            let sink = TraceSink::create(&path, &header)
                .map_err(|source| ConfigError::TraceFile { path, source })?;
            Some(Arc::new(sink))
        } else {
            None
        };
        let state = match kind {
            HandlerKind::Null => HandlerState::Null,
            HandlerKind::DirectId => HandlerState::Direct(sink.clone().expect("direct sink")),
            _ => {
                let pipeline = self.pipeline.clone().expect("buffered pipeline");
                pipeline.register_sink(id, sink.clone().expect("buffered sink"));
                HandlerState::Buffered(BufferedState::new(id, pipeline))
            }
        };
        let channel = Arc::new(Channel {
            id,
            name: name.to_owned(),
            closed: AtomicBool::new(false),
            misuse: AtomicU64::new(0),
            state,
        });
        reg.channels.push(channel.clone());
        reg.sinks.push(sink);
        Ok(ChannelHandle(channel))
    }

    pub fn is_shut_down(&self) -> bool {
        self.report.lock().unwrap_or_else(PoisonError::into_inner).is_some()
    }

    /// Seal partial blocks, drain the pipeline and close every channel.
    /// Idempotent: later calls return the first report.
    pub fn shutdown(&self) -> FlushReport {
        let mut slot = self.report.lock().unwrap_or_else(PoisonError::into_inner);
        if let Some(report) = slot.as_ref() {
            return report.clone();
        }
        let reg = self.registry.lock().unwrap_or_else(PoisonError::into_inner);
        for ch in &reg.channels {
            ch.closed.store(true, Ordering::SeqCst);
        }
        for ch in &reg.channels {
            if let HandlerState::Buffered(state) = &ch.state {
                state.close_and_flush();
            }
        }
        let drain = self
            .pipeline
            .as_ref()
            .map(|p| p.drain(self.config.drain_timeout));
        for ch in &reg.channels {
            if let HandlerState::Direct(sink) = &ch.state {
                sink.sync();
            }
        }

        let channels = reg
            .channels
            .iter()
            .zip(&reg.sinks)
            .map(|(ch, sink)| {
                let (logged, late) = match &ch.state {
                    HandlerState::Null => (0, 0),
                    HandlerState::Direct(s) => (s.entries_written() + s.write_errors(), 0),
                    HandlerState::Buffered(b) => (b.sealed_entries(), b.late_drops()),
                };
                let blocks_written = match &ch.state {
                    HandlerState::Buffered(_) => sink.as_ref().map_or(0, |s| {
                        s.write_ops() - s.write_errors()
                    }),
                    _ => sink.as_ref().map_or(0, |s| s.entries_written()),
                };
                ChannelReport {
                    channel_id: ch.id,
                    name: ch.name.clone(),
                    path: sink.as_ref().map(|s| s.path().to_path_buf()),
                    entries_logged: logged,
                    entries_written: sink.as_ref().map_or(0, |s| s.entries_written()),
                    blocks_written,
                    bytes_written: sink.as_ref().map_or(0, |s| s.bytes_written()),
                    write_ops: sink.as_ref().map_or(0, |s| s.write_ops()),
                    write_errors: sink.as_ref().map_or(0, |s| s.write_errors()),
                    first_error: sink.as_ref().and_then(|s| s.first_error()),
                    misuse_calls: ch.misuse.load(Ordering::Relaxed) + late,
                }
            })
            .collect();

        let report = FlushReport {
            handler: self.config.handler,
            channels,
            num_blocks: self.pipeline.as_ref().map_or(0, |p| p.num_blocks()),
            free_blocks: drain.as_ref().map(|d| d.free_blocks),
            codec_fallbacks: drain.as_ref().map_or(0, |d| d.codec_fallbacks),
            timed_out: drain.as_ref().is_some_and(|d| d.timed_out),
            errors: drain.map(|d| d.errors).unwrap_or_default(),
        };
        *slot = Some(report.clone());
        report
    }
}

impl Drop for Profiler {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn validate_channel_name(name: &str) -> Result<(), ConfigError> {
    let reason = if name.is_empty() {
        "empty"
    } else if name.len() > u16::MAX as usize {
        "longer than 65535 bytes"
    } else if name == "." || name == ".." || name.contains(['/', '\\', '\0']) {
        "not usable as a file name"
    } else {
        return Ok(());
    };
    Err(ConfigError::ChannelName {
        name: name.to_owned(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logformat::{decode_file, scan_file};

    fn cfg(dir: &Path, handler: HandlerKind, cap: usize) -> ProfilerConfig {
        ProfilerConfig {
            handler,
            block_capacity: cap,
            output_dir: dir.to_path_buf(),
            ..ProfilerConfig::default()
        }
    }

    #[test]
    fn defaults_match_protocol_constants() {
        let c = ProfilerConfig::default();
        assert_eq!(c.num_blocks, 32);
        assert_eq!(c.block_capacity, 1_000_000);
        assert_eq!(c.num_compression_workers, 4);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = ProfilerConfig {
            num_blocks: 5,
            ..ProfilerConfig::default()
        };
        assert!(c.validate().is_err());
        c.num_blocks = 6;
        assert!(c.validate().is_ok());
        c.block_capacity = 0;
        assert!(c.validate().is_err());
        c.block_capacity = MAX_BLOCK_CAPACITY + 1;
        assert!(c.validate().is_err());
        c.block_capacity = 1;
        c.num_compression_workers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn handler_labels_roundtrip() {
        for k in HandlerKind::ALL {
            assert_eq!(k.label().parse::<HandlerKind>().unwrap(), k);
            assert_eq!(HandlerKind::from_byte(k.as_byte()), Some(k));
        }
        assert!("bogus".parse::<HandlerKind>().is_err());
        assert_eq!(HandlerKind::from_byte(5), None);
    }

    #[test]
    fn channel_ids_are_dense_in_open_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = Profiler::new(cfg(dir.path(), HandlerKind::BufferedId, 1_000_000)).unwrap();
        let a = p.open_channel("ch_start").unwrap();
        let b = p.open_channel("ch_end").unwrap();
        assert_eq!((a.id(), b.id()), (0, 1));
        assert!(p.channel_path("ch_start").exists());
    }

    #[test]
    fn configured_channel_names_are_opened_up_front() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(dir.path(), HandlerKind::DirectId, 10);
        c.channel_names = vec!["a".into(), "b".into()];
        let p = Profiler::new(c).unwrap();
        assert!(p.channel_path("a").exists() && p.channel_path("b").exists());
        assert_eq!(p.open_channel("c").unwrap().id(), 2);
    }

    #[test]
    fn duplicate_and_bad_names_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = Profiler::new(cfg(dir.path(), HandlerKind::Null, 10)).unwrap();
        p.open_channel("x").unwrap();
        assert!(matches!(
            p.open_channel("x"),
            Err(ProfilerError::Config(ConfigError::DuplicateChannel(_)))
        ));
        for bad in ["", "a/b", ".."] {
            assert!(matches!(
                p.open_channel(bad),
                Err(ProfilerError::Config(ConfigError::ChannelName { .. }))
            ));
        }
    }

    #[test]
    fn unwritable_output_dir_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, b"x").unwrap();
        let c = cfg(&file.join("sub"), HandlerKind::BufferedId, 10);
        assert!(matches!(Profiler::new(c), Err(ConfigError::OutputDir { .. })));
        // Null never touches the file system.
        let c = cfg(&file.join("sub"), HandlerKind::Null, 10);
        assert!(Profiler::new(c).is_ok());
    }

    #[test]
    fn null_handler_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let p = Profiler::new(cfg(&out, HandlerKind::Null, 10)).unwrap();
        let h = p.open_channel("ch").unwrap();
        for i in 0..10_000 {
            h.log_ts(i);
        }
        let r = p.shutdown();
        assert!(!out.exists());
        assert_eq!(r.channels[0].bytes_written, 0);
        assert_eq!(r.channels[0].path, None);
        assert!(r.is_ok());
    }

    #[test]
    fn partial_block_is_flushed_on_shutdown() {
        let dir = tempfile::tempdir().unwrap();
        let p = Profiler::new(cfg(dir.path(), HandlerKind::BufferedId, 1_000_000)).unwrap();
        let h = p.open_channel("c").unwrap();
        for tag in [7, 8, 9] {
            h.log_ts(tag);
        }
        assert_eq!(h.pending_entries(), 3);
        let r = p.shutdown();
        assert!(r.is_ok(), "{r:?}");
        assert_eq!(r.free_blocks, Some(32));
        let d = decode_file(&p.channel_path("c")).unwrap();
        assert_eq!(d.entries.iter().map(|e| e.tag).collect::<Vec<_>>(), [7, 8, 9]);
    }

    #[test]
    fn shutdown_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let p = Profiler::new(cfg(dir.path(), HandlerKind::BufferedZstd, 10)).unwrap();
        let h = p.open_channel("c").unwrap();
        h.log_ts(1);
        let first = p.shutdown();
        let second = p.shutdown();
        assert_eq!(first, second);
        assert!(matches!(p.open_channel("d"), Err(ProfilerError::ShutDown)));
    }

    #[test]
    fn logging_after_shutdown_is_a_counted_noop() {
        let dir = tempfile::tempdir().unwrap();
        let p = Profiler::new(cfg(dir.path(), HandlerKind::DirectId, 10)).unwrap();
        let h = p.open_channel("c").unwrap();
        h.log_ts(1);
        p.shutdown();
        assert!(h.is_closed());
        h.log_ts(2);
        h.log_ts(3);
        assert_eq!(h.misuse_calls(), 2);
        assert_eq!(decode_file(&p.channel_path("c")).unwrap().entries.len(), 1);
    }

    #[test]
    fn block_arithmetic_for_one_and_a_half_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let p = Profiler::new(cfg(dir.path(), HandlerKind::BufferedId, 1_000)).unwrap();
        let h = p.open_channel("c").unwrap();
        for i in 0..1_500 {
            h.log_ts(i);
        }
        assert_eq!(h.sealed_blocks(), 1);
        let r = p.shutdown();
        let c = &r.channels[0];
        assert_eq!(c.blocks_written, 2);
        assert_eq!(c.entries_written, 1_500);
        let scan = scan_file(&p.channel_path("c")).unwrap();
        let counts: Vec<u32> = scan.frames.iter().map(|f| f.entry_count).collect();
        assert_eq!(counts, [1_000, 500]);
        // Header plus two identity frames, byte for byte.
        let header = 14 + 1;
        assert_eq!(c.bytes_written, header + 2 * 21 + 12 * 1_500);
        assert_eq!(scan.report.disk_bytes, c.bytes_written);
    }

    #[test]
    fn all_kinds_decode_to_the_same_tags() {
        let dir = tempfile::tempdir().unwrap();
        let tags: Vec<i32> = (0..2_345).map(|i| (i * 7919) % 1000 - 500).collect();
        let mut decoded = Vec::new();
        for kind in [
            HandlerKind::DirectId,
            HandlerKind::BufferedId,
            HandlerKind::BufferedZstd,
            HandlerKind::BufferedRealtime,
        ] {
            let out = dir.path().join(kind.label());
            let p = Profiler::new(cfg(&out, kind, 100)).unwrap();
            let h = p.open_channel("c").unwrap();
            for &t in &tags {
                h.log_ts(t);
            }
            assert!(p.shutdown().is_ok());
            let d = decode_file(&p.channel_path("c")).unwrap();
            assert_eq!(d.header.handler, kind);
            decoded.push(d.entries.iter().map(|e| e.tag).collect::<Vec<_>>());
        }
        for d in &decoded {
            assert_eq!(d, &tags);
        }
    }
}

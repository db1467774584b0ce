//! Event-timestamp profiling with pluggable handlers and an overhead
//! microbenchmark.
//!
//! A [`Profiler`] owns a set of named channels. Each [`ChannelHandle::log_ts`]
//! call records `(monotonic ns, tag)` through the configured [`HandlerKind`]:
//!
//! | kind                | hot path                          | off the hot path            |
//! |---------------------|-----------------------------------|-----------------------------|
//! | `Null`              | nothing                           | nothing                     |
//! | `DirectId`          | one `write(2)` per entry          | nothing                     |
//! | `BufferedId`        | append to a block                 | writer thread               |
//! | `BufferedZstd`      | append to a block                 | compression workers, writer |
//! | `BufferedRealtime`  | append to a block                 | compression workers, writer |
//!
//! Trace files use the `.cpf` format described in [`logformat`]. The
//! [`bench`] and [`stats`] modules measure what each handler costs per call.

pub mod bench;
pub mod cli;
pub mod clock;
pub mod codecs;
pub mod handlers;
pub mod logformat;
pub mod pipeline;
pub mod profiler;
pub mod stats;


pub use clock::now_ns;
pub use codecs::CodecId;
pub use profiler::{
    ChannelHandle, ChannelReport, ConfigError, FlushReport, HandlerKind, Profiler, ProfilerConfig,
    ProfilerError, TimestampEntry,
};

//! Overhead microbenchmark.
//!
//! The workload is a recursive method of configurable depth whose innermost
//! call busy-waits for `method_time_ns`. Every level is wrapped by a
//! monitored method that logs a start entry and, on the way out, an end
//! entry, each tagged with the current depth. Timing one outer call per
//! iteration and comparing against an uninstrumented run yields the
//! per-call cost of a handler.
//!
//! Results layout:
//!
//! ```text
//! <out>/manifest.txt                      key=value run metadata and repeat status
//! <out>/<config>/repeat-<i>.csv           iteration,elapsed_ns
//! <out>/<config>/repeat-<i>.mem.csv       iteration,resident_bytes
//! <out>/<config>/traces-<i>/*.cpf         only with keep_traces
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::clock::{self, now_ns};
use crate::logformat::scan_file;
use crate::profiler::{
    ChannelHandle, ConfigError, FlushReport, HandlerKind, Profiler, ProfilerConfig, ProfilerError,
    DEFAULT_BLOCK_CAPACITY, DEFAULT_COMPRESSION_WORKERS, DEFAULT_NUM_BLOCKS,
};
use crate::stats::ConfigurationData;

pub const START_CHANNEL: &str = "ch_start";
pub const END_CHANNEL: &str = "ch_end";
pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_FORMAT: &str = "blockprof-results-1";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Profiler(#[from] ProfilerError),
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid benchmark setting {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown configuration {0:?}")]
    UnknownConfiguration(String),
    #[error("no results in {}: {reason}", path.display())]
    NoResults { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What gets measured: the bare workload or the workload instrumented with
/// one handler kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Configuration {
    Baseline,
    Handler(HandlerKind),
}

impl Configuration {
    /// Suite order: baseline first, then handlers from cheapest to costliest
    /// on the hot path as designed.
    pub const ALL: [Configuration; 6] = [
        Configuration::Baseline,
        Configuration::Handler(HandlerKind::Null),
        Configuration::Handler(HandlerKind::DirectId),
        Configuration::Handler(HandlerKind::BufferedId),
        Configuration::Handler(HandlerKind::BufferedZstd),
        Configuration::Handler(HandlerKind::BufferedRealtime),
    ];

    pub fn label(self) -> &'static str {
        match self {
            Configuration::Baseline => "baseline",
            Configuration::Handler(k) => k.label(),
        }
    }

    pub fn handler(self) -> Option<HandlerKind> {
        match self {
            Configuration::Baseline => None,
            Configuration::Handler(k) => Some(k),
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Configuration {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Configuration::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| BenchError::UnknownConfiguration(s.to_owned()))
    }
}

/// Parse a comma-separated configuration list, keeping the given order.
pub fn parse_configurations(list: &str) -> Result<Vec<Configuration>, BenchError> {
    let configs = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>, _>>()?;
    if configs.is_empty() {
        return Err(BenchError::UnknownConfiguration(list.to_owned()));
    }
    Ok(configs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub iterations: usize,
    pub depth: u32,
    pub method_time_ns: u64,
    pub repeats: usize,
    pub configuration: Configuration,
    pub memory_sample_stride: usize,
    pub num_blocks: usize,
    pub block_capacity: usize,
    pub num_compression_workers: usize,
    /// Keep the `.cpf` files after a repeat has been verified.
    pub keep_traces: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            iterations: 2_000_000,
            depth: 10,
            method_time_ns: 0,
            repeats: 10,
            configuration: Configuration::Baseline,
            memory_sample_stride: 1_000,
            num_blocks: DEFAULT_NUM_BLOCKS,
            block_capacity: DEFAULT_BLOCK_CAPACITY,
            num_compression_workers: DEFAULT_COMPRESSION_WORKERS,
            keep_traces: false,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let positive = [
            ("iterations", self.iterations),
            ("depth", self.depth as usize),
            ("repeats", self.repeats),
            ("memory_sample_stride", self.memory_sample_stride),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(BenchError::Invalid {
                    field,
                    reason: "must be positive".into(),
                });
            }
        }
        if self.depth > i32::MAX as u32 {
            return Err(BenchError::Invalid {
                field: "depth",
                reason: "must fit a 32-bit tag".into(),
            });
        }
        self.profiler_config(HandlerKind::BufferedId, PathBuf::new())
            .validate()?;
        Ok(())
    }

    pub fn profiler_config(&self, handler: HandlerKind, output_dir: PathBuf) -> ProfilerConfig {
        ProfilerConfig {
            handler,
            num_blocks: self.num_blocks,
            block_capacity: self.block_capacity,
            num_compression_workers: self.num_compression_workers,
            output_dir,
            ..ProfilerConfig::default()
        }
    }

    /// Entries each channel must hold after one repeat.
    pub fn expected_entries_per_channel(&self) -> u64 {
        self.iterations as u64 * self.depth as u64
    }
}

/// Instrumentation hooks around each monitored call.
pub trait Probe {
    fn enter(&self, depth: i32);
    fn exit(&self, depth: i32);
}

/// No instrumentation at all; calls compile away.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoProbe;

impl Probe for NoProbe {
    #[inline(always)]
    fn enter(&self, _depth: i32) {}
    #[inline(always)]
    fn exit(&self, _depth: i32) {}
}

/// Logs start and end entries on two channels.
#[derive(Debug, Clone)]
pub struct ChannelProbe {
    pub start: ChannelHandle,
    pub end: ChannelHandle,
}

impl Probe for ChannelProbe {
    #[inline(always)]
    fn enter(&self, depth: i32) {
        self.start.log_ts(depth);
    }
    #[inline(always)]
    fn exit(&self, depth: i32) {
        self.end.log_ts(depth);
    }
}

struct ExitGuard<'a, P: Probe> {
    probe: &'a P,
    depth: i32,
}

impl<P: Probe> Drop for ExitGuard<'_, P> {
    #[inline(always)]
    fn drop(&mut self) {
        self.probe.exit(self.depth);
    }
}

/// The synthetic recursive workload.
pub struct Workload<P: Probe> {
    probe: P,
}

impl<P: Probe> Workload<P> {
    pub fn new(probe: P) -> Self {
        Workload { probe }
    }

    pub fn probe(&self) -> &P {
        &self.probe
    }

    /// Log a start entry, run [`Self::extracted_method`], and log the end
    /// entry however that call exits, unwinding included.
    #[inline(never)]
    pub fn monitored_method(&self, time_ns: u64, depth: u32) -> u64 {
        let tag = depth as i32;
        self.probe.enter(tag);
        let _exit = ExitGuard {
            probe: &self.probe,
            depth: tag,
        };
        self.extracted_method(time_ns, depth)
    }

    /// Recurse through `depth - 1` more monitored calls, then busy-wait for
    /// `time_ns` and return the last clock reading.
    #[inline(never)]
    pub fn extracted_method(&self, time_ns: u64, depth: u32) -> u64 {
        if depth > 1 {
            self.monitored_method(time_ns, depth - 1)
        } else {
            let exit_time = now_ns() + time_ns;
            loop {
                let cur = now_ns();
                if cur >= exit_time {
                    return cur;
                }
            }
        }
    }
}

/// One repeat's raw measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub configuration: Configuration,
    pub repeat: usize,
    pub elapsed_ns: Vec<u64>,
    /// `(iteration index, resident bytes)`.
    pub memory_samples: Vec<(usize, u64)>,
}

#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub measurements: MeasurementSet,
    pub flush: Option<FlushReport>,
    /// Entries found in each channel's trace file.
    pub trace_entries: Vec<(String, u64)>,
    /// `Err` explains why the repeat must not be used.
    pub validity: Result<(), String>,
}

/// Resident set size of this process, where the platform exposes it.
pub fn resident_bytes() -> Option<u64> {
    #[cfg(target_os = "linux")]
    {
        let statm = fs::read_to_string("/proc/self/statm").ok()?;
        let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
        let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
        Some(pages * page.max(1) as u64)
    }
    #[cfg(not(target_os = "linux"))]
    {
        None
    }
}

fn time_iterations<P: Probe>(
    workload: &Workload<P>,
    config: &BenchConfig,
    elapsed: &mut Vec<u64>,
    memory: &mut Vec<(usize, u64)>,
) {
    for i in 0..config.iterations {
        if i % config.memory_sample_stride == 0 {
            if let Some(rss) = resident_bytes() {
                memory.push((i, rss));
            }
        }
        let start = now_ns();
        std::hint::black_box(workload.monitored_method(config.method_time_ns, config.depth));
        let end = now_ns();
        // Below clock resolution counts as 1 ns.
        elapsed.push((end - start).max(1));
    }
}

pub fn config_dir(out_dir: &Path, configuration: Configuration) -> PathBuf {
    out_dir.join(configuration.label())
}

pub fn result_path(out_dir: &Path, configuration: Configuration, repeat: usize) -> PathBuf {
    config_dir(out_dir, configuration).join(format!("repeat-{repeat}.csv"))
}

pub fn memory_path(out_dir: &Path, configuration: Configuration, repeat: usize) -> PathBuf {
    config_dir(out_dir, configuration).join(format!("repeat-{repeat}.mem.csv"))
}

pub fn trace_dir(out_dir: &Path, configuration: Configuration, repeat: usize) -> PathBuf {
    config_dir(out_dir, configuration).join(format!("traces-{repeat}"))
}

/// Run one repeat in this process with a fresh profiler, write its result
/// files, and check the trace files hold every entry.
pub fn run_repeat(config: &BenchConfig, repeat: usize, out_dir: &Path) -> Result<RepeatOutcome, BenchError> {
    config.validate()?;
    let configuration = config.configuration;
    let dir = config_dir(out_dir, configuration);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let mut elapsed = Vec::with_capacity(config.iterations);
    let mut memory = Vec::with_capacity(config.iterations / config.memory_sample_stride + 1);
    let mut flush = None;
    let mut trace_entries = Vec::new();
    let mut problems = Vec::new();
    let traces = trace_dir(out_dir, configuration, repeat);

    match configuration.handler() {
        None => time_iterations(&Workload::new(NoProbe), config, &mut elapsed, &mut memory),
        Some(kind) => {
            let profiler = Profiler::new(config.profiler_config(kind, traces.clone()))?;
            let probe = ChannelProbe {
                start: profiler.open_channel(START_CHANNEL)?,
                end: profiler.open_channel(END_CHANNEL)?,
            };
            time_iterations(&Workload::new(probe), config, &mut elapsed, &mut memory);
            let report = profiler.shutdown();
            if !report.is_ok() {
                problems.push(format!("flush failed: {report:?}"));
            }
            if kind.writes_files() {
                let expected = config.expected_entries_per_channel();
                for name in [START_CHANNEL, END_CHANNEL] {
                    match scan_file(&profiler.channel_path(name)) {
                        Ok(scan) => {
                            if scan.report.entries != expected {
                                problems.push(format!(
                                    "{name}: {} entries on disk, expected {expected}",
                                    scan.report.entries
                                ));
                            }
                            if !scan.report.seq_complete() {
                                problems.push(format!("{name}: incomplete frame sequence"));
                            }
                            trace_entries.push((name.to_owned(), scan.report.entries));
                        }
                        Err(e) => problems.push(format!("{name}: {e}")),
                    }
                }
            }
            flush = Some(report);
            drop(profiler);
            if !config.keep_traces && traces.exists() {
                fs::remove_dir_all(&traces).map_err(io_err(&traces))?;
            }
        }
    }

    let measurements = MeasurementSet {
        configuration,
        repeat,
        elapsed_ns: elapsed,
        memory_samples: memory,
    };
    write_measurements(out_dir, &measurements)?;
    Ok(RepeatOutcome {
        measurements,
        flush,
        trace_entries,
        validity: if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        },
    })
}

fn write_measurements(out_dir: &Path, m: &MeasurementSet) -> Result<(), BenchError> {
    let path = result_path(out_dir, m.configuration, m.repeat);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    let mut write = || -> io::Result<()> {
        writeln!(w, "iteration,elapsed_ns")?;
        for (i, e) in m.elapsed_ns.iter().enumerate() {
            writeln!(w, "{i},{e}")?;
        }
        w.flush()
    };
    write().map_err(io_err(&path))?;

    let path = memory_path(out_dir, m.configuration, m.repeat);
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    let mut write = || -> io::Result<()> {
        writeln!(w, "iteration,resident_bytes")?;
        for (i, b) in &m.memory_samples {
            writeln!(w, "{i},{b}")?;
        }
        w.flush()
    };
    write().map_err(io_err(&path))
}

/// Read the second column of a two-column CSV with a header line.
pub fn read_value_column(path: &Path) -> Result<Vec<u64>, BenchError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut values = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if n == 0 || line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(_, v)| v.trim().parse::<u64>().ok());
        match parsed {
            Some(v) => values.push(v),
            None => {
                return Err(BenchError::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: format!("expected `index,value`, got {line:?}"),
                })
            }
        }
    }
    Ok(values)
}

/// Runs one repeat somewhere: in this process or in a fresh one.
pub trait RepeatLauncher {
    fn launch(&mut self, config: &BenchConfig, repeat: usize, out_dir: &Path) -> Result<(), String>;
}

/// Runs repeats inside the calling process.
#[derive(Debug, Default)]
pub struct InProcess;

impl RepeatLauncher for InProcess {
    fn launch(&mut self, config: &BenchConfig, repeat: usize, out_dir: &Path) -> Result<(), String> {
        run_repeat(config, repeat, out_dir)
            .map_err(|e| e.to_string())
            .and_then(|o| o.validity)
    }
}

/// Runs each repeat as `<exe> bench repeat ...`, so no allocator, page-cache
/// or thread state carries over between repeats.
#[derive(Debug)]
pub struct Subprocess {
    pub exe: PathBuf,
}

impl Subprocess {
    pub fn current_exe() -> io::Result<Self> {
        Ok(Subprocess {
            exe: std::env::current_exe()?,
        })
    }

    pub fn args(config: &BenchConfig, repeat: usize, out_dir: &Path) -> Vec<String> {
        let mut args: Vec<String> = vec![
            "bench".into(),
            "repeat".into(),
            "--configuration".into(),
            config.configuration.label().into(),
            "--repeat".into(),
            repeat.to_string(),
            "--out".into(),
            out_dir.display().to_string(),
            "--iterations".into(),
            config.iterations.to_string(),
            "--depth".into(),
            config.depth.to_string(),
            "--method-time".into(),
            config.method_time_ns.to_string(),
            "--memory-stride".into(),
            config.memory_sample_stride.to_string(),
            "--num-blocks".into(),
            config.num_blocks.to_string(),
            "--block-capacity".into(),
            config.block_capacity.to_string(),
            "--workers".into(),
            config.num_compression_workers.to_string(),
        ];
        if config.keep_traces {
            args.push("--keep-traces".into());
        }
        args
    }
}

impl RepeatLauncher for Subprocess {
    fn launch(&mut self, config: &BenchConfig, repeat: usize, out_dir: &Path) -> Result<(), String> {
        let output = Command::new(&self.exe)
            .args(Subprocess::args(config, repeat, out_dir))
            .output()
            .map_err(|e| format!("cannot start {}: {e}", self.exe.display()))?;
        if output.status.success() {
            Ok(())
        } else {
            let stderr = String::from_utf8_lossy(&output.stderr);
            Err(format!("{}: {}", output.status, stderr.trim()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepeatStatus {
    pub configuration: Configuration,
    pub repeat: usize,
    pub result: Result<(), String>,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub out_dir: PathBuf,
    pub statuses: Vec<RepeatStatus>,
}

impl SuiteOutcome {
    pub fn failures(&self) -> usize {
        self.statuses.iter().filter(|s| s.result.is_err()).count()
    }
}

/// Run every configuration in the given order, `base.repeats` times each,
/// and write the manifest. A failed repeat is recorded and the suite goes on.
pub fn run_suite(
    base: &BenchConfig,
    configurations: &[Configuration],
    out_dir: &Path,
    launcher: &mut dyn RepeatLauncher,
) -> Result<SuiteOutcome, BenchError> {
    base.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let order: Vec<&str> = configurations.iter().map(|c| c.label()).collect();
    log::info!("suite order: {}", order.join(","));

    let mut statuses = Vec::new();
    for &configuration in configurations {
        let config = BenchConfig {
            configuration,
            ..base.clone()
        };
        for repeat in 0..base.repeats {
            log::info!("{configuration} repeat {repeat}");
            let result = launcher.launch(&config, repeat, out_dir);
            if let Err(e) = &result {
                log::warn!("{configuration} repeat {repeat} failed: {e}");
            }
            statuses.push(RepeatStatus {
                configuration,
                repeat,
                result,
            });
        }
    }
    write_manifest(out_dir, base, configurations, &statuses)?;
    Ok(SuiteOutcome {
        out_dir: out_dir.to_path_buf(),
        statuses,
    })
}

fn cpu_model() -> String {
    fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_owned())
        })
        .unwrap_or_else(|| "unknown".into())
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn write_manifest(
    out_dir: &Path,
    base: &BenchConfig,
    configurations: &[Configuration],
    statuses: &[RepeatStatus],
) -> Result<(), BenchError> {
    let mut m = String::new();
    let mut kv = |k: &str, v: String| {
        m.push_str(k);
        m.push('=');
        m.push_str(&one_line(&v));
        m.push('\n');
    };
    kv("format", MANIFEST_FORMAT.into());
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    kv("created_unix", created.to_string());
    kv("host.cpu_model", cpu_model());
    kv(
        "host.cores",
        std::thread::available_parallelism().map_or(0, |n| n.get()).to_string(),
    );
    kv("host.os", std::env::consts::OS.into());
    kv("host.arch", std::env::consts::ARCH.into());
    kv("clock.source", "monotonic".into());
    kv("clock.resolution_ns", clock::resolution_ns().to_string());
    kv("iterations", base.iterations.to_string());
    kv("depth", base.depth.to_string());
    kv("method_time_ns", base.method_time_ns.to_string());
    kv("repeats", base.repeats.to_string());
    kv("memory_sample_stride", base.memory_sample_stride.to_string());
    kv("num_blocks", base.num_blocks.to_string());
    kv("block_capacity", base.block_capacity.to_string());
    kv("num_compression_workers", base.num_compression_workers.to_string());
    kv("selection", "second half of each repeat".into());
    kv(
        "order",
        configurations
            .iter()
            .map(|c| c.label())
            .collect::<Vec<_>>()
            .join(","),
    );
    for s in statuses {
        let status = match &s.result {
            Ok(()) => "ok".to_owned(),
            Err(e) => format!("failed: {e}"),
        };
        kv(&format!("repeat.{}.{}", s.configuration.label(), s.repeat), status);
    }
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, m).map_err(io_err(&path))
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| BenchError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: "expected key=value".into(),
        })?;
        map.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(map)
}

/// A results directory written by [`run_suite`].
#[derive(Debug, Clone)]
pub struct ResultsDirectory {
    pub path: PathBuf,
    pub manifest: BTreeMap<String, String>,
    pub configurations: Vec<ConfigurationData>,
}

impl ResultsDirectory {
    pub fn load(dir: &Path) -> Result<ResultsDirectory, BenchError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(BenchError::NoResults {
                path: dir.to_path_buf(),
                reason: format!("{MANIFEST_FILE} not found"),
            });
        }
        let manifest = read_manifest(&manifest_path)?;
        let order = manifest.get("order").cloned().unwrap_or_default();
        let configurations_in_order = parse_configurations(&order).map_err(|_| BenchError::NoResults {
            path: dir.to_path_buf(),
            reason: "manifest lists no configurations".into(),
        })?;
        let repeats: usize = manifest
            .get("repeats")
            .and_then(|r| r.parse().ok())
            .unwrap_or(0);

        let mut configurations = Vec::new();
        for c in configurations_in_order {
            let mut data = ConfigurationData {
                label: c.label().to_owned(),
                ..ConfigurationData::default()
            };
            for r in 0..repeats {
                let key = format!("repeat.{}.{r}", c.label());
                if manifest.get(&key).map(String::as_str) != Some("ok") {
                    data.failed_repeats += 1;
                    continue;
                }
                data.repeats.push(read_value_column(&result_path(dir, c, r))?);
                let mem = memory_path(dir, c, r);
                if mem.exists() {
                    data.memory_bytes.extend(read_value_column(&mem)?);
                }
            }
            if !data.repeats.is_empty() {
                configurations.push(data);
            }
        }
        if configurations.is_empty() {
            return Err(BenchError::NoResults {
                path: dir.to_path_buf(),
                reason: "no successful repeats".into(),
            });
        }
        Ok(ResultsDirectory {
            path: dir.to_path_buf(),
            manifest,
            configurations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logformat::decode_file;
    use std::cell::RefCell;

    #[derive(Default)]
    struct Recorder(RefCell<Vec<(char, i32)>>);

    impl Probe for Recorder {
        fn enter(&self, depth: i32) {
            self.0.borrow_mut().push(('>', depth));
        }
        fn exit(&self, depth: i32) {
            self.0.borrow_mut().push(('<', depth));
        }
    }

    fn small(configuration: Configuration, iterations: usize) -> BenchConfig {
        BenchConfig {
            iterations,
            repeats: 1,
            configuration,
            memory_sample_stride: 10,
            num_blocks: 8,
            block_capacity: 64,
            num_compression_workers: 2,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn defaults_mirror_the_protocol() {
        let c = BenchConfig::default();
        assert_eq!(
            (c.iterations, c.depth, c.method_time_ns, c.repeats, c.memory_sample_stride),
            (2_000_000, 10, 0, 10, 1_000)
        );
        // 10 repeats x 2 M iterations.
        assert_eq!(c.iterations * c.repeats, 20_000_000);
    }

    #[test]
    fn depth_one_logs_one_pair() {
        let w = Workload::new(Recorder::default());
        w.monitored_method(0, 1);
        assert_eq!(*w.probe().0.borrow(), [('>', 1), ('<', 1)]);
    }

    #[test]
    fn depth_three_call_chain() {
        let w = Workload::new(Recorder::default());
        w.monitored_method(0, 3);
        assert_eq!(
            *w.probe().0.borrow(),
            [('>', 3), ('>', 2), ('>', 1), ('<', 1), ('<', 2), ('<', 3)]
        );
    }

    #[test]
    fn end_entry_is_logged_while_unwinding() {
        struct Boom(Recorder);
        impl Probe for Boom {
            fn enter(&self, d: i32) {
                self.0.enter(d);
                if d == 1 {
                    panic!("workload failure");
                }
            }
            fn exit(&self, d: i32) {
                self.0.exit(d);
            }
        }
        let w = Workload::new(Boom(Recorder::default()));
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| w.monitored_method(0, 2)));
        assert!(r.is_err());
        // Depth 1 panicked inside enter, before its guard existed.
        assert_eq!(*w.probe().0 .0.borrow(), [('>', 2), ('>', 1), ('<', 2)]);
    }

    #[test]
    fn busy_wait_lasts_at_least_method_time() {
        let w = Workload::new(NoProbe);
        let start = now_ns();
        let end = w.extracted_method(1_000_000, 1);
        let elapsed = end - start;
        assert!(elapsed >= 1_000_000);
        assert!(elapsed <= 1_500_000, "{elapsed}");
        // time 0 returns at once with a fresh reading.
        let t = now_ns();
        assert!(w.extracted_method(0, 1) >= t);
    }

    #[test]
    fn configuration_labels() {
        let labels: Vec<&str> = Configuration::ALL.iter().map(|c| c.label()).collect();
        assert_eq!(
            labels,
            ["baseline", "null", "direct-id", "buffered-id", "buffered-zstd", "buffered-realtime"]
        );
        assert_eq!(
            parse_configurations("null, baseline").unwrap(),
            [Configuration::Handler(HandlerKind::Null), Configuration::Baseline]
        );
        assert!(parse_configurations("nonexistent").is_err());
        assert!(parse_configurations("").is_err());
    }

    #[test]
    fn buffered_repeat_counts_entries() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(Configuration::Handler(HandlerKind::BufferedId), 100);
        c.keep_traces = true;
        let o = run_repeat(&c, 0, dir.path()).unwrap();
        assert_eq!(o.validity, Ok(()));
        assert_eq!(o.measurements.elapsed_ns.len(), 100);
        assert!(o.measurements.elapsed_ns.iter().all(|&e| e > 0));
        assert_eq!(o.measurements.memory_samples.len(), 10);
        assert_eq!(
            o.trace_entries,
            [("ch_start".to_owned(), 1_000), ("ch_end".to_owned(), 1_000)]
        );
        let csv = read_value_column(&result_path(dir.path(), c.configuration, 0)).unwrap();
        assert_eq!(csv, o.measurements.elapsed_ns);
        let traces = trace_dir(dir.path(), c.configuration, 0);
        let d = decode_file(&traces.join("ch_start.cpf")).unwrap();
        let tags: Vec<i32> = d.entries[..10].iter().map(|e| e.tag).collect();
        assert_eq!(tags, [10, 9, 8, 7, 6, 5, 4, 3, 2, 1]);
        let d = decode_file(&traces.join("ch_end.cpf")).unwrap();
        let tags: Vec<i32> = d.entries[..10].iter().map(|e| e.tag).collect();
        assert_eq!(tags, [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
    }

    #[test]
    fn traces_are_removed_unless_kept() {
        let dir = tempfile::tempdir().unwrap();
        let c = small(Configuration::Handler(HandlerKind::BufferedZstd), 50);
        let o = run_repeat(&c, 3, dir.path()).unwrap();
        assert_eq!(o.validity, Ok(()));
        assert!(!trace_dir(dir.path(), c.configuration, 3).exists());
        assert!(result_path(dir.path(), c.configuration, 3).exists());
        assert!(memory_path(dir.path(), c.configuration, 3).exists());
    }

    #[test]
    fn baseline_and_null_write_no_traces() {
        let dir = tempfile::tempdir().unwrap();
        for conf in [Configuration::Baseline, Configuration::Handler(HandlerKind::Null)] {
            let o = run_repeat(&small(conf, 20), 0, dir.path()).unwrap();
            assert_eq!(o.validity, Ok(()));
            assert!(o.trace_entries.is_empty());
            assert!(o.measurements.elapsed_ns.iter().all(|&e| e > 0));
        }
    }

    struct Scripted(Vec<(Configuration, usize)>);

    impl RepeatLauncher for Scripted {
        fn launch(&mut self, config: &BenchConfig, repeat: usize, out_dir: &Path) -> Result<(), String> {
            self.0.push((config.configuration, repeat));
            if config.configuration == Configuration::Handler(HandlerKind::DirectId) && repeat == 1 {
                return Err("injected\nfailure".into());
            }
            InProcess.launch(config, repeat, out_dir)
        }
    }

    #[test]
    fn suite_runs_everything_in_order_and_survives_failures() {
        let dir = tempfile::tempdir().unwrap();
        let base = BenchConfig {
            repeats: 2,
            ..small(Configuration::Baseline, 30)
        };
        let mut launcher = Scripted(Vec::new());
        let outcome = run_suite(&base, &Configuration::ALL, dir.path(), &mut launcher).unwrap();
        assert_eq!(launcher.0.len(), 12);
        assert_eq!(launcher.0[0], (Configuration::Baseline, 0));
        assert_eq!(launcher.0[11].0, Configuration::Handler(HandlerKind::BufferedRealtime));
        assert_eq!(outcome.failures(), 1);

        let manifest = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(
            manifest["order"],
            "baseline,null,direct-id,buffered-id,buffered-zstd,buffered-realtime"
        );
        assert_eq!(manifest["repeat.direct-id.1"], "failed: injected failure");
        assert!(manifest.contains_key("host.cpu_model"));
        assert!(manifest.contains_key("host.cores"));
        assert!(manifest.contains_key("clock.resolution_ns"));

        let results = ResultsDirectory::load(dir.path()).unwrap();
        assert_eq!(results.configurations.len(), 6);
        let direct = &results.configurations[2];
        assert_eq!(direct.label, "direct-id");
        assert_eq!((direct.repeats.len(), direct.failed_repeats), (1, 1));
        assert!(results.configurations.iter().all(|c| !c.memory_bytes.is_empty()));
    }

    #[test]
    fn empty_results_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ResultsDirectory::load(dir.path()),
            Err(BenchError::NoResults { .. })
        ));
    }

    #[test]
    fn subprocess_arguments() {
        let c = small(Configuration::Handler(HandlerKind::BufferedZstd), 5);
        let args = Subprocess::args(&c, 4, Path::new("/tmp/x"));
        let joined = args.join(" ");
        assert!(joined.starts_with("bench repeat --configuration buffered-zstd --repeat 4"));
        assert!(joined.contains("--block-capacity 64"));
    }
}

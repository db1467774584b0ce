//! `blockprof` command line: `bench run`, `decode`, `verify`, `report`.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 benchmark finished with
//! failed repeats.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::bench::{
    self, parse_configurations, BenchConfig, Configuration, InProcess, RepeatLauncher, ResultsDirectory,
    Subprocess,
};
use crate::logformat::{decode_file, scan_file, FormatError};
use crate::stats::compare;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

pub const QUICK_ITERATIONS: usize = 1_000;
pub const QUICK_REPEATS: usize = 2;

#[derive(Debug, Parser)]
#[command(name = "blockprof", version, about = "Timestamp profiler and overhead benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the overhead benchmark.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Print the entries of a trace file.
    Decode(DecodeArgs),
    /// Check a trace file for format, sequence, integrity and ordering problems.
    Verify { path: PathBuf },
    /// Summarize a results directory.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Run every configuration and write results plus a manifest.
    Run(RunArgs),
    /// Run a single repeat (used by `bench run` to isolate repeats).
    #[command(hide = true)]
    Repeat(RepeatArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML file with benchmark and profiler settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated list, e.g. `baseline,null,buffered-id`.
    #[arg(long)]
    pub configurations: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub depth: Option<u32>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Results directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Smoke run: 1,000 iterations x 2 repeats unless overridden.
    #[arg(long)]
    pub quick: bool,
    /// Run repeats inside this process instead of one child process each.
    #[arg(long)]
    pub in_process: bool,
}

#[derive(Debug, Args)]
pub struct RepeatArgs {
    #[arg(long)]
    pub configuration: String,
    #[arg(long)]
    pub repeat: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: usize,
    #[arg(long)]
    pub depth: u32,
    #[arg(long, default_value_t = 0)]
    pub method_time: u64,
    #[arg(long)]
    pub memory_stride: usize,
    #[arg(long)]
    pub num_blocks: usize,
    #[arg(long)]
    pub block_capacity: usize,
    #[arg(long)]
    pub workers: usize,
    #[arg(long)]
    pub keep_traces: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub path: PathBuf,
    /// CSV output (the default).
    #[arg(long, conflicts_with = "count_only")]
    pub csv: bool,
    /// Print only the number of entries.
    #[arg(long)]
    pub count_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Csv,
    Plot,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub results_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
}

/// Settings file for `bench run --config`. Every key is optional.
#[derive(Debug, Default, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfigFile {
    pub iterations: Option<usize>,
    pub depth: Option<u32>,
    pub method_time_ns: Option<u64>,
    pub repeats: Option<usize>,
    pub memory_sample_stride: Option<usize>,
    pub configurations: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub keep_traces: Option<bool>,
    pub num_blocks: Option<usize>,
    pub block_capacity: Option<usize>,
    pub num_compression_workers: Option<usize>,
}

impl CliConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    fn apply(&self, c: &mut BenchConfig) {
        macro_rules! set {
            ($($f:ident => $t:ident),*) => {$(if let Some(v) = self.$f.clone() { c.$t = v; })*};
        }
        set!(
            iterations => iterations,
            depth => depth,
            method_time_ns => method_time_ns,
            repeats => repeats,
            memory_sample_stride => memory_sample_stride,
            keep_traces => keep_traces,
            num_blocks => num_blocks,
            block_capacity => block_capacity,
            num_compression_workers => num_compression_workers
        );
    }
}

/// Resolved `bench run` settings: defaults, then the config file, then
/// `--quick`, then explicit flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub bench: BenchConfig,
    pub configurations: Vec<Configuration>,
    pub out: PathBuf,
}

impl RunArgs {
    pub fn plan(&self) -> Result<RunPlan, String> {
        let file = match &self.config {
            Some(p) => CliConfigFile::load(p)?,
            None => CliConfigFile::default(),
        };
        let mut bench = BenchConfig::default();
        file.apply(&mut bench);
        if self.quick {
            bench.iterations = QUICK_ITERATIONS;
            bench.repeats = QUICK_REPEATS;
        }
        if let Some(v) = self.iterations {
            bench.iterations = v;
        }
        if let Some(v) = self.depth {
            bench.depth = v;
        }
        if let Some(v) = self.repeats {
            bench.repeats = v;
        }
        bench.validate().map_err(|e| e.to_string())?;

        let configurations = match (&self.configurations, &file.configurations) {
            (Some(list), _) => parse_configurations(list).map_err(|e| e.to_string())?,
            (None, Some(list)) => parse_configurations(&list.join(",")).map_err(|e| e.to_string())?,
            (None, None) => Configuration::ALL.to_vec(),
        };
        let out = self
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("results"));
        Ok(RunPlan {
            bench,
            configurations,
            out,
        })
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                if !text.contains("Usage:") {
                    let _ = writeln!(err, "\n{}", usage(&[]));
                }
                EXIT_ERROR
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    execute(cli, out, err)
}

pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Bench {
            command: BenchCommand::Run(args),
        } => cmd_bench_run(&args, out, err),
        Command::Bench {
            command: BenchCommand::Repeat(args),
        } => cmd_bench_repeat(&args, err),
        Command::Decode(args) => cmd_decode(&args, out, err),
        Command::Verify { path } => cmd_verify(&path, out),
        Command::Report(args) => cmd_report(&args, out, err),
    }
}

/// Usage line of the command reached through `path` from the top level.
pub fn usage(path: &[&str]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let mut cur = cmd;
    for name in path {
        match cur.find_subcommand(name) {
            Some(sub) => cur = sub.clone(),
            None => break,
        }
    }
    cur.render_usage().to_string()
}

fn usage_error(err: &mut dyn Write, path: &[&str], message: &str) -> i32 {
    let _ = writeln!(err, "error: {message}\n\n{}", usage(path));
    EXIT_ERROR
}

pub fn cmd_bench_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let plan = match args.plan() {
        Ok(p) => p,
        Err(e) => return usage_error(err, &["bench", "run"], &e),
    };
    let mut launcher: Box<dyn RepeatLauncher> = if args.in_process {
        Box::new(InProcess)
    } else {
        match Subprocess::current_exe() {
            Ok(s) => Box::new(s),
            Err(e) => {
                let _ = writeln!(err, "cannot locate own executable ({e}); running in process");
                Box::new(InProcess)
            }
        }
    };
    let outcome = match bench::run_suite(&plan.bench, &plan.configurations, &plan.out, launcher.as_mut()) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    for s in &outcome.statuses {
        if let Err(e) = &s.result {
            let _ = writeln!(err, "{} repeat {} failed: {e}", s.configuration, s.repeat);
        }
    }
    let _ = writeln!(
        out,
        "{} repeats, {} failed; results in {}",
        outcome.statuses.len(),
        outcome.failures(),
        outcome.out_dir.display()
    );
    if outcome.failures() == 0 {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    }
}

fn cmd_bench_repeat(args: &RepeatArgs, err: &mut dyn Write) -> i32 {
    let configuration: Configuration = match args.configuration.parse() {
        Ok(c) => c,
        Err(e) => return usage_error(err, &["bench", "repeat"], &e.to_string()),
    };
    let config = BenchConfig {
        iterations: args.iterations,
        depth: args.depth,
        method_time_ns: args.method_time,
        repeats: 1,
        configuration,
        memory_sample_stride: args.memory_stride,
        num_blocks: args.num_blocks,
        block_capacity: args.block_capacity,
        num_compression_workers: args.workers,
        keep_traces: args.keep_traces,
    };
    match bench::run_repeat(&config, args.repeat, &args.out) {
        Ok(outcome) => match outcome.validity {
            Ok(()) => EXIT_OK,
            Err(reason) => {
                let _ = writeln!(err, "invalid repeat: {reason}");
                EXIT_PARTIAL
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn format_error(err: &mut dyn Write, path: &Path, e: &FormatError) -> i32 {
    let _ = match e.offset() {
        Some(off) => writeln!(err, "{}: format error at byte offset {off}: {e}", path.display()),
        None => writeln!(err, "{}: {e}", path.display()),
    };
    EXIT_ERROR
}

pub fn cmd_decode(args: &DecodeArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if args.count_only {
        let scan = match scan_file(&args.path) {
            Ok(s) => s,
            Err(e) => return format_error(err, &args.path, &e),
        };
        if let Some(&seq_no) = scan.report.missing_seqs.first() {
            let e = FormatError::MissingFrame {
                seq_no,
                max_seq: scan.report.max_seq.unwrap_or(0),
            };
            return format_error(err, &args.path, &e);
        }
        if let Some(&seq_no) = scan.report.duplicate_seqs.first() {
            let offset = scan.frames.iter().filter(|f| f.seq_no == seq_no).nth(1).map_or(0, |f| f.offset);
            return format_error(err, &args.path, &FormatError::DuplicateFrame { offset, seq_no });
        }
        let _ = writeln!(out, "{}", scan.report.entries);
        return EXIT_OK;
    }
    let trace = match decode_file(&args.path) {
        Ok(t) => t,
        Err(e) => return format_error(err, &args.path, &e),
    };
    let mut w = BufWriter::new(out);
    let result = (|| -> io::Result<()> {
        writeln!(w, "seq,timestamp_ns,tag")?;
        for (i, r) in trace.entries.iter().enumerate() {
            writeln!(w, "{i},{},{}", r.timestamp_ns, r.tag)?;
        }
        w.flush()
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

/// Outcome of `verify` on one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub lines: Vec<String>,
    pub passed: bool,
}

/// Checks magic and version, codec integrity of every frame, frame sequence
/// completeness, and timestamp monotonicity across the whole file. A channel
/// written by several threads can legitimately fail the last check.
pub fn verify_file(path: &Path) -> Verification {
    let mut lines = vec![format!("file: {}", path.display())];
    let scan = match scan_file(path) {
        Ok(s) => s,
        Err(e) => {
            let check = match &e {
                FormatError::BadMagic { .. } | FormatError::UnsupportedVersion { .. } => "magic/version",
                FormatError::Payload { .. } => "codec integrity",
                _ => "structure",
            };
            lines.push(format!("[FAIL] {check}: {e}"));
            lines.push("result: FAIL".into());
            return Verification { lines, passed: false };
        }
    };
    let h = &scan.header;
    let r = &scan.report;
    lines.push(format!(
        "channel: {}  handler: {}  codec: {}  block capacity: {}",
        h.channel_name, h.handler, h.default_codec, h.block_capacity
    ));
    lines.push(format!("[ok] magic/version: CPF1 v{}", h.version));
    lines.push(format!(
        "[ok] codec integrity: {} frames, {} entries, {} raw bytes, {} bytes on disk",
        r.frames, r.entries, r.raw_bytes, r.disk_bytes
    ));
    let mut passed = true;
    if r.seq_complete() {
        let max = r.max_seq.map_or_else(|| "none".into(), |m| m.to_string());
        lines.push(format!("[ok] frame sequence: complete, max seq_no {max}"));
    } else {
        passed = false;
        for s in &r.missing_seqs {
            lines.push(format!("[FAIL] frame sequence: missing frame seq_no {s}"));
        }
        for s in &r.duplicate_seqs {
            lines.push(format!("[FAIL] frame sequence: duplicate frame seq_no {s}"));
        }
    }
    if r.timestamp_regressions == 0 {
        lines.push("[ok] monotonicity: timestamps never decrease".into());
    } else {
        passed = false;
        lines.push(format!(
            "[FAIL] monotonicity: warning: {} timestamp regressions",
            r.timestamp_regressions
        ));
    }
    lines.push(format!("result: {}", if passed { "PASS" } else { "FAIL" }));
    Verification { lines, passed }
}

pub fn cmd_verify(path: &Path, out: &mut dyn Write) -> i32 {
    let v = verify_file(path);
    for l in &v.lines {
        let _ = writeln!(out, "{l}");
    }
    if v.passed {
        EXIT_OK
    } else {
        EXIT_ERROR
    }
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let results = match ResultsDirectory::load(&args.results_dir) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let table = match compare(&results.configurations) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    for w in &table.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let text = match args.format {
        ReportFormat::Text => table.to_text(),
        ReportFormat::Csv => table.to_csv(),
        ReportFormat::Plot => table.to_plot_data(),
    };
    let _ = write!(out, "{text}");
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiler::HandlerKind;

    fn parse_run(args: &[&str]) -> RunArgs {
        let cli = Cli::try_parse_from(["blockprof", "bench", "run"].iter().chain(args)).unwrap();
        match cli.command {
            Command::Bench {
                command: BenchCommand::Run(r),
            } => r,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defaults_are_the_protocol_constants() {
        let plan = parse_run(&[]).plan().unwrap();
        let b = &plan.bench;
        assert_eq!(
            (b.num_blocks, b.block_capacity, b.num_compression_workers),
            (32, 1_000_000, 4)
        );
        assert_eq!((b.iterations, b.depth, b.method_time_ns, b.repeats), (2_000_000, 10, 0, 10));
        assert_eq!(plan.configurations, Configuration::ALL);
        assert_eq!(plan.out, PathBuf::from("results"));
    }

    #[test]
    fn quick_then_flags_override() {
        let plan = parse_run(&["--quick"]).plan().unwrap();
        assert_eq!((plan.bench.iterations, plan.bench.repeats), (1_000, 2));
        let plan = parse_run(&["--quick", "--iterations", "200000", "--repeats", "3"])
            .plan()
            .unwrap();
        assert_eq!((plan.bench.iterations, plan.bench.repeats), (200_000, 3));
    }

    #[test]
    fn config_file_is_applied_and_strict() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bench.toml");
        fs::write(
            &p,
            "iterations = 500\nblock_capacity = 64\nconfigurations = [\"baseline\", \"buffered-zstd\"]\n",
        )
        .unwrap();
        let plan = parse_run(&["--config", p.to_str().unwrap(), "--depth", "3"])
            .plan()
            .unwrap();
        assert_eq!((plan.bench.iterations, plan.bench.depth, plan.bench.block_capacity), (500, 3, 64));
        assert_eq!(
            plan.configurations,
            [Configuration::Baseline, Configuration::Handler(HandlerKind::BufferedZstd)]
        );

        let e = CliConfigFile::parse("iterations = 5\nbogus_key = 1\n").unwrap_err();
        assert!(e.contains("bogus_key"), "{e}");
        assert!(CliConfigFile::parse("iterations = \"many\"").is_err());
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        for args in [
            &["--configurations", "nonexistent"][..],
            &["--iterations", "0"],
            &["--depth", "0"],
        ] {
            assert!(parse_run(args).plan().is_err(), "{args:?}");
        }
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(["blockprof", "bench", "run", "--iterations", "lots"], &mut out, &mut err);
        assert_eq!(code, EXIT_ERROR);
        assert!(String::from_utf8_lossy(&err).contains("Usage"));
    }

    #[test]
    fn help_exits_zero() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["blockprof", "--help"], &mut out, &mut err), EXIT_OK);
        let help = String::from_utf8(out).unwrap();
        for sub in ["bench", "decode", "verify", "report"] {
            assert!(help.contains(sub));
        }
        assert!(!help.contains("repeat"));
    }

    #[test]
    fn empty_report_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            ["blockprof".as_ref(), "report".as_ref(), dir.path().as_os_str()],
            &mut out,
            &mut err,
        );
        assert_eq!(code, EXIT_ERROR);
    }
}

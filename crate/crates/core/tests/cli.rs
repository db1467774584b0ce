mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use blockprof::{HandlerKind, Profiler, ProfilerConfig};

fn blockprof(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockprof"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn trace(dir: &Path, kind: HandlerKind, tags: &[i32]) -> String {
    let profiler = Profiler::new(ProfilerConfig {
        block_capacity: 4,
        num_blocks: 8,
        num_compression_workers: 2,
        output_dir: dir.to_path_buf(),
        ..ProfilerConfig::with_handler(kind)
    })
    .unwrap();
    let ch = profiler.open_channel("t").unwrap();
    for &t in tags {
        ch.log_ts(t);
    }
    assert!(profiler.shutdown().is_ok());
    profiler.channel_path("t").display().to_string()
}

#[test]
fn decode_five_entries() {
    let dir = tempfile::tempdir().unwrap();
    let path = trace(dir.path(), HandlerKind::BufferedZstd, &[5, 4, 3, 2, 1]);
    let o = blockprof(&["decode", &path]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], "seq,timestamp_ns,tag");
    let tags: Vec<&str> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(tags, ["5", "4", "3", "2", "1"]);
    assert!(lines[1].starts_with("0,"));

    let o = blockprof(&["decode", "--csv", &path]);
    assert_eq!(stdout(&o), out);
    let o = blockprof(&["decode", "--count-only", &path]);
    assert_eq!(stdout(&o).trim(), "5");
}

#[test]
fn decode_truncated_file_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = trace(dir.path(), HandlerKind::BufferedId, &[1, 2, 3, 4, 5, 6]);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    for args in [&["decode", &path][..], &["decode", "--count-only", &path]] {
        let o = blockprof(args);
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains("byte offset"), "{}", stderr(&o));
    }
}

#[test]
fn verify_healthy_files() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [
        HandlerKind::DirectId,
        HandlerKind::BufferedId,
        HandlerKind::BufferedZstd,
        HandlerKind::BufferedRealtime,
    ] {
        let sub = dir.path().join(kind.label());
        let path = trace(&sub, kind, &(0..37).collect::<Vec<_>>());
        let o = blockprof(&["verify", &path]);
        assert_eq!(o.status.code(), Some(0), "{kind}: {}", stdout(&o));
        assert!(stdout(&o).contains("result: PASS"));
    }
}

#[test]
fn verify_flags_missing_frame() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gap.cpf");
    common::write_frames(&path, "gap", &[(0, vec![(1, 1)]), (2, vec![(3, 3)])]);
    let o = blockprof(&["verify", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("missing frame"), "{}", stdout(&o));
    let o = blockprof(&["decode", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing frame"));
}

#[test]
fn verify_flags_non_monotone_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("back.cpf");
    common::write_frames(&path, "back", &[(0, vec![(10, 1), (20, 2)]), (1, vec![(15, 3)])]);
    let o = blockprof(&["verify", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("monotonicity: warning"), "{}", stdout(&o));
}

#[test]
fn verify_rejects_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.cpf");
    fs::write(&path, b"not a trace file at all").unwrap();
    let o = blockprof(&["verify", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("[FAIL] magic/version"));
}

#[test]
fn bench_quick_then_report_all_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let out_s = out.to_str().unwrap();
    let o = blockprof(&["bench", "run", "--quick", "--out", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for label in ["baseline", "null", "direct-id", "buffered-id", "buffered-zstd", "buffered-realtime"] {
        for r in 0..2 {
            let csv = fs::read_to_string(out.join(label).join(format!("repeat-{r}.csv"))).unwrap();
            assert_eq!(csv.lines().count(), 1_001, "{label}");
        }
        assert!(!out.join(label).join("traces-0").exists());
    }

    let text = stdout(&blockprof(&["report", out_s]));
    for label in ["baseline", "null", "direct-id", "buffered-id", "buffered-zstd", "buffered-realtime"] {
        assert!(text.lines().any(|l| l.starts_with(label)), "{label} missing:\n{text}");
    }
    assert!(text.contains("speedup vs direct-id"));

    let csv = stdout(&blockprof(&["report", out_s, "--format", "csv"]));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "config,n,mean_ns,median_ns,q25_ns,q75_ns,min_ns,max_ns,stddev_ns,cv_pct,overhead_ns"
    );
    assert_eq!(lines.len(), 7);
    // Second half of 2 repeats x 1,000 iterations.
    assert!(lines[1].starts_with("baseline,1000,"));

    let plot = stdout(&blockprof(&["report", out_s, "--format", "plot"]));
    let rows: Vec<Vec<&str>> = plot
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let v: Vec<f64> = r[2..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v.windows(2).all(|w| w[0] <= w[1]), "{v:?}");
    }
}

#[test]
fn bench_usage_errors_exit_one() {
    for args in [
        &["bench", "run", "--configurations", "nonexistent"][..],
        &["bench", "run", "--iterations", "-3"],
        &["bench", "run", "--repeats", "0"],
        &["bench", "run", "--config", "/nonexistent/bench.toml"],
        &["frobnicate"],
    ] {
        let o = blockprof(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).contains("Usage"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn bench_config_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.toml");
    fs::write(&cfg, "iterations = 10\nnum_buffers = 4\n").unwrap();
    let o = blockprof(&["bench", "run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("num_buffers"));
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = blockprof(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

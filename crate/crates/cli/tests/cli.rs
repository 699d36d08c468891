use std::path::Path;
use std::process::{Command, Output};

use qsiam_core::synthetic::TranslatingSquare;
use qsiam_core::tracker::sequence::write_sequence;

fn qsiam(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsiam")).current_dir(cwd).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synthetic_sequence(dir: &Path, frames: usize) {
    let s = TranslatingSquare { frames, ..TranslatingSquare::default() };
    write_sequence(dir, &s.frames(), &s.groundtruth()).unwrap();
}

#[test]
fn track_writes_one_line_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_sequence(&tmp.path().join("seq"), 12);
    let o = qsiam(tmp.path(), &["track", "seq", "--extractor", "stub", "--output", "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = std::fs::read_to_string(tmp.path().join("run/results.txt")).unwrap();
    assert_eq!(results.lines().count(), 12);
    assert!(results.lines().all(|l| l.split(',').count() == 4));
    let timing = std::fs::read_to_string(tmp.path().join("run/timing.csv")).unwrap();
    assert!(timing.starts_with("item,seconds,percent_of_total\n"));
    assert!(timing.contains("\nnetwork,"));
}

#[test]
fn missing_weights_fail_without_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_sequence(&tmp.path().join("seq"), 3);
    let o = qsiam(tmp.path(), &["track", "seq", "--weights", "absent.qsiam", "--output", "run"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!tmp.path().join("run/results.txt").exists());
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn exit_codes_separate_argument_and_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(qsiam(tmp.path(), &["track", "seq"]).status.code(), Some(2));
    assert_eq!(qsiam(tmp.path(), &["--scales", "2", "dse"]).status.code(), Some(2));
    assert_eq!(qsiam(tmp.path(), &["dse", "--pe", "4"]).status.code(), Some(2));
    assert_eq!(qsiam(tmp.path(), &["track", "nowhere", "--extractor", "stub"]).status.code(), Some(3));

    std::fs::write(tmp.path().join("bad.qsiam"), b"QSIAM1 nonsense").unwrap();
    synthetic_sequence(&tmp.path().join("seq"), 3);
    let o = qsiam(tmp.path(), &["track", "seq", "--weights", "bad.qsiam"]);
    assert_eq!(o.status.code(), Some(3));

    std::fs::write(tmp.path().join("seq/00000002.png"), b"not a png").unwrap();
    let o = qsiam(tmp.path(), &["track", "seq", "--extractor", "stub", "--output", "run"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("frame"));
}

#[test]
fn track_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_sequence(&tmp.path().join("seq"), 10);
    for run in ["a", "b"] {
        let o = qsiam(tmp.path(), &["--no-timing", "track", "seq", "--extractor", "stub", "--output", run]);
        assert!(o.status.success());
        assert!(!tmp.path().join(run).join("timing.csv").exists());
    }
    let a = std::fs::read(tmp.path().join("a/results.txt")).unwrap();
    let b = std::fs::read(tmp.path().join("b/results.txt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_file_overrides_tracker_fields() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_sequence(&tmp.path().join("seq"), 4);
    std::fs::write(tmp.path().join("bad.toml"), "[tracker]\nnum_scales = 5\n").unwrap();
    let o = qsiam(tmp.path(), &["--config", "bad.toml", "track", "seq", "--extractor", "stub"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(tmp.path().join("typo.toml"), "[tracker]\nnum_scale = 1\n").unwrap();
    let o = qsiam(tmp.path(), &["--config", "typo.toml", "track", "seq", "--extractor", "stub"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(tmp.path().join("ok.toml"), "[tracker]\nnum_scales = 1\n").unwrap();
    let o = qsiam(tmp.path(), &["--config", "ok.toml", "track", "seq", "--extractor", "stub"]);
    assert!(o.status.success());
}

#[test]
fn dump_frames_writes_annotated_pngs() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_sequence(&tmp.path().join("seq"), 3);
    let o = qsiam(tmp.path(), &["track", "seq", "--extractor", "stub", "--dump-frames", "--output", "run"]);
    assert!(o.status.success());
    let img = image::open(tmp.path().join("run/frames/00000001.png")).unwrap().to_rgb8();
    // first ground-truth box has its top-left corner at (60, 100)
    assert_eq!(img.get_pixel(60, 100).0, [255, 0, 0]);
}

#[test]
fn gen_weights_is_seed_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qsiam(tmp.path(), &["--seed", "7", "gen-weights", "a.qsiam"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("parameters: 554688"));
    qsiam(tmp.path(), &["--seed", "7", "gen-weights", "b.qsiam"]);
    qsiam(tmp.path(), &["--seed", "8", "gen-weights", "c.qsiam"]);
    let read = |n: &str| std::fs::read(tmp.path().join(n)).unwrap();
    assert_eq!(read("a.qsiam"), read("b.qsiam"));
    assert_ne!(read("a.qsiam"), read("c.qsiam"));
}

#[test]
fn gen_weights_into_unwritable_path_fails() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("file"), b"").unwrap();
    let o = qsiam(tmp.path(), &["gen-weights", "file/w.qsiam"]);
    assert!(!o.status.success());
}

fn dse_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn dse_reference_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qsiam(tmp.path(), &["dse", "--configs", "table3"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("out/dse.csv")).unwrap();
    assert!(csv.starts_with("name,fps,units,watts\n"));
    let rows = dse_rows(&csv);
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["V1", "V2", "V3", "V4", "V5", "V6"]);
    let fps: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(fps.windows(2).all(|p| p[0] < p[1]), "{fps:?}");
    let measured = [4.5, 4.56, 4.81, 4.92, 5.5, 6.79];
    for (r, m) in rows.iter().zip(measured) {
        let w: f64 = r[3].parse().unwrap();
        assert!(((w - m) / m).abs() <= 0.05, "{} predicted {w} W vs {m} W", r[0]);
    }
}

#[test]
fn dse_zero_budget_is_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qsiam(tmp.path(), &["dse", "--budget", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(tmp.path().join("out/dse.csv")).unwrap(), "name,fps,units,watts\n");
}

#[test]
fn dse_front_is_sorted_and_non_dominated() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qsiam(tmp.path(), &["dse", "--pe", "8,16,32", "--simd", "3,8,16", "--budget", "4000"]);
    assert!(o.status.success());
    let rows = dse_rows(&std::fs::read_to_string(tmp.path().join("out/dse.csv")).unwrap());
    assert!(!rows.is_empty());
    let pts: Vec<(f64, u64)> = rows.iter().map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap())).collect();
    assert!(pts.iter().all(|p| p.1 <= 4000));
    assert!(pts.windows(2).all(|p| p[0].0 < p[1].0 && p[0].1 < p[1].1));
}

#[test]
fn dse_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let folds = "folds = [{pe=32,simd=3},{pe=32,simd=16},{pe=16,simd=16},{pe=8,simd=16},{pe=8,simd=16},{pe=8,simd=8}]";
    std::fs::write(tmp.path().join("f.toml"), format!("[folding]\nname = \"mine\"\n{folds}\n")).unwrap();
    let o = qsiam(tmp.path(), &["--config", "f.toml", "dse", "--configs", "config"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = dse_rows(&std::fs::read_to_string(tmp.path().join("out/dse.csv")).unwrap());
    assert_eq!(rows[0][0], "mine");
    assert_eq!(rows[0][2], "1344");
    std::fs::write(tmp.path().join("g.toml"), "[folding]\nfolds = [{pe=5,simd=3}]\n").unwrap();
    let o = qsiam(tmp.path(), &["--config", "g.toml", "dse", "--configs", "config"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_oracle_reports_perfect_overlap() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_sequence(&tmp.path().join("data/a"), 6);
    synthetic_sequence(&tmp.path().join("data/b"), 4);
    let o = qsiam(tmp.path(), &["bench", "data", "--tracker", "oracle"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mao_line = text.lines().find(|l| l.starts_with("mAO")).unwrap();
    assert!(mao_line.trim_end().ends_with("1.000"), "{mao_line}");
    let csv = std::fs::read_to_string(tmp.path().join("out/bench.csv")).unwrap();
    assert!(csv.starts_with("sequence,frames,ao\na,5,1.000000\nb,3,1.000000\nmAO,8,1.000000\n"));
}

#[test]
fn bench_stub_tracks_the_synthetic_square() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_sequence(&tmp.path().join("data/a"), 20);
    let o = qsiam(tmp.path(), &["--no-timing", "bench", "data", "--tracker", "stub"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("out/bench.csv")).unwrap();
    let mao: f64 = csv.lines().find(|l| l.starts_with("mAO")).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!(mao > 0.5, "{csv}");
    assert!(!csv.contains("fps"));
}

#[test]
fn profile_reference_breakdown() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qsiam(tmp.path(), &["profile", "--reference"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("out/profile.csv")).unwrap();
    assert!(csv.contains("\nstage_sum,0.054600,"));
    assert!(csv.contains("\nmeasured_total,0.058700,"));
    assert!(csv.contains("\nfps,17.036,"));
    assert_eq!(qsiam(tmp.path(), &["profile"]).status.code(), Some(2));
}

#[test]
fn profile_a_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_sequence(&tmp.path().join("seq"), 5);
    let o = qsiam(tmp.path(), &["profile", "seq", "--extractor", "stub"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(tmp.path().join("out/profile.csv")).unwrap();
    let value = |item: &str| -> f64 {
        csv.lines().find(|l| l.starts_with(&format!("{item},"))).unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!(value("stage_sum") <= value("measured_total") + 1e-6);
}

use std::path::Path;

use qsiam_core::metrics::{mao, run_benchmark, FixedBoxTracker, OracleTracker, SequenceResult, SiamSequenceTracker};
use qsiam_core::synthetic::TranslatingSquare;
use qsiam_core::tracker::sequence::write_sequence;
use qsiam_core::tracker::{BBox, PooledGrayStub, TrackerConfig};

fn dataset(root: &Path, lengths: &[usize]) {
    for (i, &n) in lengths.iter().enumerate() {
        let s = TranslatingSquare { frames: n, seed: i as u64 + 1, ..TranslatingSquare::default() };
        write_sequence(&root.join(format!("seq{i}")), &s.frames(), &s.groundtruth()).unwrap();
    }
}

#[test]
fn oracle_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), &[5, 9, 3]);
    let r = run_benchmark(tmp.path(), &OracleTracker).unwrap();
    assert_eq!(r.mao, 1.0);
    let names: Vec<&str> = r.sequences.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["seq0", "seq1", "seq2"]);
    let frames: Vec<usize> = r.sequences.iter().map(|s| s.frames).collect();
    assert_eq!(frames, [4, 8, 2]);
    assert_eq!(r.fps, None);
}

#[test]
fn far_away_box_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), &[6, 4]);
    let far = BBox::from_top_left(5000.0, 5000.0, 10.0, 10.0).unwrap();
    let r = run_benchmark(tmp.path(), &FixedBoxTracker(far)).unwrap();
    assert_eq!(r.mao, 0.0);
}

#[test]
fn per_sequence_scores_combine_by_frame_count() {
    let a = SequenceResult::from_ious("a", vec![0.5; 100]);
    let b = SequenceResult::from_ious("b", vec![0.7; 300]);
    assert!((mao(&[a, b]).unwrap() - 0.65).abs() < 1e-12);
}

#[test]
fn stub_tracker_benchmark_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path(), &[10, 8]);
    let stub = PooledGrayStub::default();
    let t = SiamSequenceTracker { extractor: &stub, config: TrackerConfig::default() };
    let a = run_benchmark(tmp.path(), &t).unwrap();
    let b = run_benchmark(tmp.path(), &t).unwrap();
    assert_eq!(a.sequences, b.sequences);
    assert_eq!(a.boxes, b.boxes);
    assert!(a.mao > 0.5);
    assert!(a.fps.is_some());
}

#[test]
fn empty_dataset_and_mismatched_groundtruth_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_benchmark(tmp.path(), &OracleTracker).is_err());
    dataset(tmp.path(), &[4]);
    let gt = tmp.path().join("seq0/groundtruth.txt");
    let text = std::fs::read_to_string(&gt).unwrap();
    std::fs::write(&gt, text.lines().take(2).collect::<Vec<_>>().join("\n")).unwrap();
    let err = run_benchmark(tmp.path(), &OracleTracker).unwrap_err();
    assert!(err.to_string().contains("seq0"), "{err}");
}

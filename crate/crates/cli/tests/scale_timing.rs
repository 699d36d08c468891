//! Search at three scales runs the network three times per frame.

use std::path::Path;
use std::process::Command;

use qsiam_core::synthetic::TranslatingSquare;
use qsiam_core::tracker::sequence::write_sequence;

fn network_seconds(dir: &Path, scales: &str, out: &str) -> f64 {
    let o = Command::new(env!("CARGO_BIN_EXE_qsiam"))
        .current_dir(dir)
        .args(["--scales", scales, "track", "seq", "--weights", "w.qsiam", "--output", out])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.join(out).join("timing.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("network,")).unwrap();
    row.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn three_scales_cost_three_network_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let s = TranslatingSquare { frames: 3, ..TranslatingSquare::default() };
    write_sequence(&tmp.path().join("seq"), &s.frames(), &s.groundtruth()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qsiam"))
        .current_dir(tmp.path())
        .args(["--seed", "1", "gen-weights", "w.qsiam"])
        .output()
        .unwrap();
    assert!(o.status.success());

    let one = network_seconds(tmp.path(), "1", "one");
    let three = network_seconds(tmp.path(), "3", "three");
    let ratio = three / one;
    assert!((ratio - 3.0).abs() <= 0.3 * 3.0, "3-scale/1-scale network time ratio {ratio:.2}");
}

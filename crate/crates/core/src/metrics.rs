//! Overlap metrics and the one-pass benchmark harness.
//!
//! Every sequence is initialized once from its first ground-truth box and
//! never reset. The initialization frame is excluded from the overlap
//! average, so a sequence contributes `frames - 1` evaluated frames.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::profile::StageTiming;
use crate::tracker::{
    sequence, track_sequence, BBox, FeatureExtractor, SequenceDir, TrackError, TrackOutput, TrackerConfig,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("sequence `{sequence}`: {source}")]
    Sequence {
        sequence: String,
        #[source]
        source: TrackError,
    },
    #[error(transparent)]
    Track(#[from] TrackError),
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.cx + a.w / 2.0).min(b.cx + b.w / 2.0) - (a.cx - a.w / 2.0).max(b.cx - b.w / 2.0);
    let iy = (a.cy + a.h / 2.0).min(b.cy + b.h / 2.0) - (a.cy - a.h / 2.0).max(b.cy - b.h / 2.0);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceResult {
    pub name: String,
    pub frames: usize,
    pub ious: Vec<f64>,
    pub ao: f64,
}

impl SequenceResult {
    pub fn from_ious(name: impl Into<String>, ious: Vec<f64>) -> Self {
        let ao = if ious.is_empty() { 0.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 };
        Self { name: name.into(), frames: ious.len(), ious, ao }
    }

    /// Scores predictions against ground truth, skipping the initialization frame.
    pub fn evaluate(name: impl Into<String>, predicted: &[BBox], groundtruth: &[BBox]) -> Result<Self, MetricsError> {
        let name = name.into();
        if predicted.len() != groundtruth.len() {
            return Err(MetricsError::Parameter(format!(
                "sequence `{name}`: {} predictions for {} ground-truth boxes",
                predicted.len(),
                groundtruth.len()
            )));
        }
        if predicted.len() < 2 {
            return Err(MetricsError::Parameter(format!(
                "sequence `{name}` needs at least two frames to evaluate"
            )));
        }
        let ious = predicted.iter().zip(groundtruth).skip(1).map(|(p, g)| iou(p, g)).collect();
        Ok(Self::from_ious(name, ious))
    }
}

/// Frame-weighted mean of per-sequence average overlaps.
pub fn mao(results: &[SequenceResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Parameter("no sequence results".into()));
    }
    let frames: usize = results.iter().map(|r| r.frames).sum();
    if frames == 0 {
        return Err(MetricsError::Parameter("sequences contain no evaluated frames".into()));
    }
    Ok(results.iter().map(|r| r.frames as f64 * r.ao).sum::<f64>() / frames as f64)
}

/// Produces one box per frame for an on-disk sequence.
pub trait SequenceTracker: Sync {
    fn track(&self, seq: &SequenceDir) -> Result<TrackOutput, TrackError>;
}

/// The Siamese tracker over any feature extractor.
pub struct SiamSequenceTracker<'a> {
    pub extractor: &'a dyn FeatureExtractor,
    pub config: TrackerConfig,
}

impl SequenceTracker for SiamSequenceTracker<'_> {
    fn track(&self, seq: &SequenceDir) -> Result<TrackOutput, TrackError> {
        track_sequence(seq, seq.init_box(), self.extractor, &self.config)
    }
}

/// Echoes the ground truth back; the upper bound of every metric.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleTracker;

impl SequenceTracker for OracleTracker {
    fn track(&self, seq: &SequenceDir) -> Result<TrackOutput, TrackError> {
        let mut boxes = seq.groundtruth.clone();
        boxes.resize(seq.frames.len(), *seq.groundtruth.last().expect("non-empty ground truth"));
        Ok(TrackOutput { boxes, timing: StageTiming::new(), measured_total: 0.0 })
    }
}

/// Reports the initialization box, then a fixed box for every later frame.
#[derive(Debug, Clone, Copy)]
pub struct FixedBoxTracker(pub BBox);

impl SequenceTracker for FixedBoxTracker {
    fn track(&self, seq: &SequenceDir) -> Result<TrackOutput, TrackError> {
        let mut boxes = vec![self.0; seq.frames.len()];
        boxes[0] = seq.init_box();
        Ok(TrackOutput { boxes, timing: StageTiming::new(), measured_total: 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub sequences: Vec<SequenceResult>,
    pub mao: f64,
    /// Tracked frames per second of wall time, when any time was measured.
    pub fps: Option<f64>,
    #[serde(skip)]
    pub timing: StageTiming,
    pub measured_total: f64,
    /// Predicted boxes per sequence, aligned with `sequences`.
    #[serde(skip)]
    pub boxes: Vec<Vec<BBox>>,
}

impl BenchmarkReport {
    /// `sequence,frames,ao` rows plus a summary row; `fps` only when timing is kept.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("sequence,frames,ao\n");
        for r in &self.sequences {
            out += &format!("{},{},{:.6}\n", r.name, r.frames, r.ao);
        }
        let frames: usize = self.sequences.iter().map(|r| r.frames).sum();
        out += &format!("mAO,{frames},{:.6}\n", self.mao);
        if with_timing {
            if let Some(fps) = self.fps {
                out += &format!("fps,,{fps:.3}\n");
            }
        }
        out
    }
}

impl fmt::Display for BenchmarkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<32} {:>8} {:>8}", "sequence", "frames", "AO")?;
        for r in &self.sequences {
            writeln!(f, "{:<32} {:>8} {:>8.3}", r.name, r.frames, r.ao)?;
        }
        write!(f, "{:<32} {:>8} {:>8.3}", "mAO", self.sequences.iter().map(|r| r.frames).sum::<usize>(), self.mao)?;
        if let Some(fps) = self.fps {
            write!(f, "\n{:<32} {:>17.2}", "fps", fps)?;
        }
        Ok(())
    }
}

/// One-pass evaluation of every sequence under `root`. Sequences run
/// concurrently; results come back in directory-name order.
pub fn run_benchmark(root: &Path, tracker: &dyn SequenceTracker) -> Result<BenchmarkReport, MetricsError> {
    let dirs = sequence::list_sequences(root)?;
    if dirs.is_empty() {
        return Err(MetricsError::Parameter(format!("no sequences under {}", root.display())));
    }
    let runs = dirs
        .par_iter()
        .map(|dir| {
            let wrap = |e: TrackError| MetricsError::Sequence {
                sequence: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                source: e,
            };
            let seq = SequenceDir::open(dir).map_err(wrap)?;
            if seq.groundtruth.len() != seq.frames.len() {
                return Err(wrap(TrackError::GroundTruth {
                    file: dir.join(sequence::GROUNDTRUTH_FILE),
                    line: seq.groundtruth.len(),
                    reason: format!("{} boxes for {} frames", seq.groundtruth.len(), seq.frames.len()),
                }));
            }
            let out = tracker.track(&seq).map_err(wrap)?;
            let result = SequenceResult::evaluate(seq.name.clone(), &out.boxes, &seq.groundtruth)?;
            Ok((result, out))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;

    let mut timing = StageTiming::new();
    let mut measured_total = 0.0;
    let mut sequences = Vec::with_capacity(runs.len());
    let mut boxes = Vec::with_capacity(runs.len());
    for (r, out) in runs {
        timing.merge(&out.timing);
        measured_total += out.measured_total;
        sequences.push(r);
        boxes.push(out.boxes);
    }
    let mao = mao(&sequences)?;
    let fps = (measured_total > 0.0).then(|| timing.frames as f64 / measured_total);
    Ok(BenchmarkReport { sequences, mao, fps, timing, measured_total, boxes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tl(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::from_top_left(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = tl(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &tl(20.0, 0.0, 5.0, 5.0)), 0.0);
        assert_eq!(iou(&a, &tl(10.0, 0.0, 5.0, 5.0)), 0.0);
        assert!((iou(&a, &tl(5.0, 0.0, 10.0, 10.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mao_examples() {
        let one = SequenceResult { name: "a".into(), frames: 10, ious: vec![], ao: 0.42 };
        assert!((mao(&[one]).unwrap() - 0.42).abs() < 1e-12);
        let a = SequenceResult { name: "a".into(), frames: 100, ious: vec![], ao: 0.5 };
        let b = SequenceResult { name: "b".into(), frames: 300, ious: vec![], ao: 0.7 };
        assert!((mao(&[a, b]).unwrap() - 0.65).abs() < 1e-12);
        let eq: Vec<SequenceResult> = [0.1, 0.2, 0.6]
            .iter()
            .map(|&ao| SequenceResult { name: "x".into(), frames: 7, ious: vec![], ao })
            .collect();
        assert!((mao(&eq).unwrap() - 0.3).abs() < 1e-12);
        assert!(matches!(mao(&[]), Err(MetricsError::Parameter(_))));
    }

    #[test]
    fn evaluation_skips_the_init_frame() {
        let g = vec![tl(0.0, 0.0, 10.0, 10.0); 3];
        let p = vec![g[0], tl(100.0, 100.0, 10.0, 10.0), g[2]];
        let r = SequenceResult::evaluate("s", &p, &g).unwrap();
        assert_eq!(r.frames, 2);
        assert_eq!(r.ao, 0.5);
        assert!(SequenceResult::evaluate("s", &p[..1], &g[..1]).is_err());
        assert!(SequenceResult::evaluate("s", &p[..2], &g).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0f64..50.0, -50.0f64..50.0, 0.5f64..40.0, 0.5f64..40.0).prop_map(|(x, y, w, h)| tl(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn shrinking_inside_lowers_iou(a in arb_box(), f1 in 0.3f64..1.0, f2 in 0.3f64..1.0) {
            let (hi, lo) = if f1 >= f2 { (f1, f2) } else { (f2, f1) };
            let inner = |f: f64| BBox { w: a.w * f, h: a.h * f, ..a };
            prop_assert!(iou(&a, &inner(lo)) <= iou(&a, &inner(hi)) + 1e-12);
        }

        #[test]
        fn mao_ignores_order(
            aos in proptest::collection::vec((1usize..500, 0.0f64..1.0), 1..10),
            rot in 0usize..10
        ) {
            let rs: Vec<SequenceResult> = aos.iter().enumerate()
                .map(|(i, &(n, ao))| SequenceResult { name: i.to_string(), frames: n, ious: vec![], ao })
                .collect();
            let mut shuffled = rs.clone();
            shuffled.rotate_left(rot % rs.len());
            shuffled.reverse();
            prop_assert!((mao(&rs).unwrap() - mao(&shuffled).unwrap()).abs() < 1e-12);
        }
    }
}

//! SiamFC-style tracking loop.
//!
//! Per frame: crop the search region at one or three scales, run the
//! shared branch, correlate against the first-frame exemplar features,
//! upsample the similarity map, apply the scale penalty and cosine window,
//! and move/rescale the box.

mod frame;
mod score;
pub mod sequence;
mod stub;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{Stage, StageTiming};
use crate::qtensor::{QTensor, TensorError};
use crate::siamnet::{NetError, QuantizedNetwork};

pub use self::frame::{context_side, crop_resize, crop_square, patch_to_qtensor, Frame, Patch};
pub use self::score::{
    bicubic_upsample, correlate_planes, cross_correlate, hann_window, penalize_and_locate, unpack_features,
    upsample_score, FeaturePlanes, Grid, Located, ScoreMap, SCORE_SIDE,
};
pub use self::sequence::SequenceDir;
pub use self::stub::PooledGrayStub;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error("frame {frame}: {reason}")]
    Ingestion { frame: usize, reason: String },
    #[error("{}:{line}: {reason}", file.display())]
    GroundTruth { file: PathBuf, line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrackError>;

/// Axis-aligned box in centre form, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_top_left(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x + w / 2.0, y + h / 2.0, w, h)
    }

    pub fn to_top_left(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || !(self.w > 0.0) || !(self.h > 0.0) {
            return Err(TrackError::Parameter(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub num_scales: usize,
    pub scale_step: f64,
    pub scale_penalty: f64,
    pub scale_damping: f64,
    pub window_influence: f64,
    pub upsample_factor: usize,
    pub context_amount: f64,
    pub exemplar_size: usize,
    pub roi_size: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            num_scales: 3,
            scale_step: 1.0375,
            scale_penalty: 0.9745,
            scale_damping: 0.59,
            window_influence: 0.176,
            upsample_factor: 16,
            context_amount: 0.5,
            exemplar_size: 110,
            roi_size: 238,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrackError::Parameter(m.to_string()));
        if !matches!(self.num_scales, 1 | 3) {
            return bad("num_scales must be 1 or 3");
        }
        if !(self.scale_step >= 1.0) {
            return bad("scale_step must be >= 1");
        }
        if !(self.scale_penalty > 0.0 && self.scale_penalty <= 1.0) {
            return bad("scale_penalty must be in (0, 1]");
        }
        if !(self.scale_damping >= 0.0 && self.scale_damping <= 1.0) {
            return bad("scale_damping must be in [0, 1]");
        }
        if !(self.window_influence >= 0.0 && self.window_influence < 1.0) {
            return bad("window_influence must be in [0, 1)");
        }
        if self.upsample_factor == 0 {
            return bad("upsample_factor must be positive");
        }
        if !(self.context_amount >= 0.0) {
            return bad("context_amount must be >= 0");
        }
        if self.exemplar_size == 0 || self.roi_size < self.exemplar_size {
            return bad("roi_size must be >= exemplar_size > 0");
        }
        Ok(())
    }

    /// Search-region scale factors, smallest first.
    pub fn scale_factors(&self) -> Vec<f64> {
        let half = (self.num_scales as i32 - 1) / 2;
        (-half..=half).map(|e| self.scale_step.powi(e)).collect()
    }

    pub fn center_scale(&self) -> usize {
        (self.num_scales - 1) / 2
    }

    pub fn upsampled_side(&self) -> usize {
        SCORE_SIDE * self.upsample_factor
    }
}

/// Anything that maps an 8-bit patch to a `(C, H, W)` feature map.
pub trait FeatureExtractor: Sync {
    /// Scale of the packed 8-bit input the extractor expects.
    fn input_scale(&self) -> f64;
    /// Input pixels per feature cell.
    fn total_stride(&self) -> usize;
    fn extract(&self, input: &QTensor) -> Result<QTensor>;
}

impl FeatureExtractor for QuantizedNetwork {
    fn input_scale(&self) -> f64 {
        QuantizedNetwork::input_scale(self)
    }

    fn total_stride(&self) -> usize {
        self.spec().total_stride()
    }

    fn extract(&self, input: &QTensor) -> Result<QTensor> {
        Ok(self.forward(input)?)
    }
}

/// Random-access frame provider.
pub trait FrameSource {
    fn len(&self) -> usize;
    fn frame(&self, index: usize) -> Result<Frame>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for [Frame] {
    fn len(&self) -> usize {
        <[Frame]>::len(self)
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        self.get(index).cloned().ok_or_else(|| TrackError::Ingestion {
            frame: index,
            reason: "frame index out of range".into(),
        })
    }
}

impl FrameSource for Vec<Frame> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        self.as_slice().frame(index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub exemplar_features: QTensor,
    pub bbox: BBox,
    pub penalty_window: Grid,
    exemplar_planes: FeaturePlanes,
}

impl TrackerState {
    /// Crops the exemplar around `bbox` and computes its features once.
    pub fn init(frame: &Frame, bbox: BBox, extractor: &dyn FeatureExtractor, cfg: &TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        let patch = crop_resize(frame, &bbox, cfg.context_amount, cfg.exemplar_size, cfg.exemplar_size)?;
        let features = extractor.extract(&patch_to_qtensor(&patch, extractor.input_scale())?)?;
        let planes = unpack_features(&features)?;
        Ok(Self {
            exemplar_features: features,
            bbox,
            penalty_window: hann_window(cfg.upsampled_side()),
            exemplar_planes: planes,
        })
    }

    /// Side of the central-scale search region in frame pixels.
    pub fn roi_side(&self, cfg: &TrackerConfig) -> f64 {
        context_side(&self.bbox, cfg.context_amount) * cfg.roi_size as f64 / cfg.exemplar_size as f64
    }
}

/// Moves the box by the located displacement (ROI pixels, converted to
/// frame pixels at the chosen scale) and damps the chosen scale change.
pub fn update_state(mut state: TrackerState, located: &Located, cfg: &TrackerConfig) -> TrackerState {
    let factors = cfg.scale_factors();
    let idx = located.scale_index.min(factors.len() - 1);
    let roi_to_frame = state.roi_side(cfg) * factors[idx] / cfg.roi_size as f64;
    state.bbox.cx += located.dx * roi_to_frame;
    state.bbox.cy += located.dy * roi_to_frame;
    let exponent = idx as i32 - cfg.center_scale() as i32;
    let target = cfg.scale_step.powi(exponent);
    let s = 1.0 + cfg.scale_damping * (target - 1.0);
    state.bbox.w *= s;
    state.bbox.h *= s;
    state
}

/// Tracks one frame, accumulating stage durations into `timing`.
pub fn track_frame(
    state: TrackerState,
    frame: &Frame,
    extractor: &dyn FeatureExtractor,
    cfg: &TrackerConfig,
    timing: &mut StageTiming,
) -> Result<(TrackerState, Located)> {
    let t = Instant::now();
    let mean = frame.channel_mean();
    let side = state.roi_side(cfg);
    let patches = cfg
        .scale_factors()
        .iter()
        .map(|f| crop_square(frame, state.bbox.cx, state.bbox.cy, side * f, cfg.roi_size, mean))
        .collect::<Result<Vec<_>>>()?;
    timing.add(Stage::CropResize, t.elapsed());

    let t = Instant::now();
    let inputs = patches
        .iter()
        .map(|p| patch_to_qtensor(p, extractor.input_scale()))
        .collect::<Result<Vec<_>>>()?;
    timing.add(Stage::InputTransfer, t.elapsed());

    let t = Instant::now();
    let features = inputs.iter().map(|q| extractor.extract(q)).collect::<Result<Vec<_>>>()?;
    timing.add(Stage::Network, t.elapsed());

    let t = Instant::now();
    let planes = features.iter().map(unpack_features).collect::<Result<Vec<_>>>()?;
    timing.add(Stage::OutputTransfer, t.elapsed());

    let t = Instant::now();
    let ex = &state.exemplar_planes;
    let maps = planes
        .iter()
        .map(|p| correlate_planes(p, ex).map(|m| m.to_grid(p.scale * ex.scale)))
        .collect::<Result<Vec<_>>>()?;
    timing.add(Stage::CrossCorrelation, t.elapsed());

    let t = Instant::now();
    let up = maps
        .iter()
        .map(|m| upsample_score(m, cfg.upsample_factor))
        .collect::<Result<Vec<_>>>()?;
    timing.add(Stage::Upsampling, t.elapsed());

    let t = Instant::now();
    let located = penalize_and_locate(&up, &state.penalty_window, cfg, extractor.total_stride())?;
    let state = update_state(state, &located, cfg);
    timing.add(Stage::Locate, t.elapsed());
    timing.frames += 1;
    Ok((state, located))
}

/// Boxes for every frame plus the stage timings of frames `1..`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub boxes: Vec<BBox>,
    pub timing: StageTiming,
    /// Wall time of the tracked frames, including frame decoding.
    pub measured_total: f64,
}

pub fn track_sequence(
    frames: &dyn FrameSource,
    init_box: BBox,
    extractor: &dyn FeatureExtractor,
    cfg: &TrackerConfig,
) -> Result<TrackOutput> {
    if frames.is_empty() {
        return Err(TrackError::Parameter("sequence has no frames".into()));
    }
    init_box.validate()?;
    let first = frames.frame(0)?;
    let inside = init_box.cx >= 0.0
        && init_box.cy >= 0.0
        && init_box.cx <= first.width() as f64
        && init_box.cy <= first.height() as f64;
    if !inside {
        return Err(TrackError::Parameter(format!("initial box {init_box:?} lies outside the first frame")));
    }
    let mut state = TrackerState::init(&first, init_box, extractor, cfg)?;
    let mut boxes = vec![init_box];
    let mut timing = StageTiming::new();
    let mut measured_total = 0.0;
    for i in 1..frames.len() {
        let t = Instant::now();
        let frame = frames.frame(i)?;
        let (next, _) = track_frame(state, &frame, extractor, cfg, &mut timing)?;
        state = next;
        boxes.push(state.bbox);
        measured_total += t.elapsed().as_secs_f64();
    }
    Ok(TrackOutput { boxes, timing, measured_total })
}

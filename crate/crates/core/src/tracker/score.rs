//! Similarity map: correlation, upsampling, cosine-window penalty and peak search.

use crate::qtensor::{QTensor, TensorError};

use super::{Result, TrackError, TrackerConfig};

/// Side of the raw similarity map for the canonical 29x29 / 13x13 features.
pub const SCORE_SIDE: usize = 17;

/// Dense row-major 2D array of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::Shape(format!(
                "grid data length {} does not match {rows}x{cols}",
                data.len()
            ))
            .into());
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.cols + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// First position of the maximum, row-major.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    /// Centroid of every position within `eps` of the maximum. Plateaus from
    /// symmetric peaks on even-sized maps resolve to their geometric middle.
    pub fn peak_centroid(&self, eps: f64) -> (f64, f64) {
        let m = self.max();
        let tol = eps * m.abs().max(1.0);
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for (i, &v) in self.data.iter().enumerate() {
            if v >= m - tol {
                sy += (i / self.cols) as f64;
                sx += (i % self.cols) as f64;
                n += 1.0;
            }
        }
        (sy / n, sx / n)
    }
}

/// Integer score map, `[H - h + 1, W - w + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i64>,
}

impl ScoreMap {
    /// Real-valued map given the real scales of both feature tensors.
    pub fn to_grid(&self, scale: f64) -> Grid {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v as f64 * scale).collect(),
        }
    }
}

/// Feature map widened to `i32` for correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlanes {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i32>,
    pub scale: f64,
}

/// Unpacks a quantized `(C, H, W)` feature map.
pub fn unpack_features(q: &QTensor) -> Result<FeaturePlanes> {
    let (channels, rows, cols) = q.chw()?;
    Ok(FeaturePlanes {
        channels,
        rows,
        cols,
        data: q.data().iter().map(|&v| v as i32).collect(),
        scale: q.scale(),
    })
}

/// Valid-mode cross-correlation of `exemplar` over `roi`, summed over channels.
pub fn correlate_planes(roi: &FeaturePlanes, exemplar: &FeaturePlanes) -> Result<ScoreMap> {
    if roi.channels != exemplar.channels {
        return Err(TensorError::Shape(format!(
            "roi has {} channels, exemplar {}",
            roi.channels, exemplar.channels
        ))
        .into());
    }
    if exemplar.rows > roi.rows || exemplar.cols > roi.cols || exemplar.rows == 0 || exemplar.cols == 0 {
        return Err(TensorError::Shape(format!(
            "exemplar {}x{} does not fit inside roi {}x{}",
            exemplar.rows, exemplar.cols, roi.rows, roi.cols
        ))
        .into());
    }
    let rows = roi.rows - exemplar.rows + 1;
    let cols = roi.cols - exemplar.cols + 1;
    let mut data = vec![0i64; rows * cols];
    let (rp, ep) = (roi.rows * roi.cols, exemplar.rows * exemplar.cols);
    for c in 0..roi.channels {
        let rplane = &roi.data[c * rp..][..rp];
        let eplane = &exemplar.data[c * ep..][..ep];
        for y in 0..rows {
            for x in 0..cols {
                let mut sum = 0i64;
                for dy in 0..exemplar.rows {
                    let rrow = &rplane[(y + dy) * roi.cols + x..][..exemplar.cols];
                    let erow = &eplane[dy * exemplar.cols..][..exemplar.cols];
                    // row products stay well inside i32: 13 * 128 * 128
                    sum += rrow.iter().zip(erow).map(|(a, b)| a * b).sum::<i32>() as i64;
                }
                data[y * cols + x] += sum;
            }
        }
    }
    Ok(ScoreMap { rows, cols, data })
}

/// `score[y, x] = sum_c sum_dy sum_dx roi[c, y+dy, x+dx] * ex[c, dy, dx]`.
pub fn cross_correlate(roi_feat: &QTensor, ex_feat: &QTensor) -> Result<ScoreMap> {
    correlate_planes(&unpack_features(roi_feat)?, &unpack_features(ex_feat)?)
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic_weights(t: f64) -> [f64; 4] {
    let a = -0.5;
    let w = |x: f64| {
        let x = x.abs();
        if x <= 1.0 {
            (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
        } else if x < 2.0 {
            a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
        } else {
            0.0
        }
    };
    [w(1.0 + t), w(t), w(1.0 - t), w(2.0 - t)]
}

fn cubic_taps(n_in: usize, factor: usize) -> Vec<([usize; 4], [f64; 4])> {
    let n_out = n_in * factor;
    (0..n_out)
        .map(|j| {
            let src = (j as f64 + 0.5) / factor as f64 - 0.5;
            let i0 = src.floor();
            let t = src - i0;
            let i0 = i0 as i64;
            let idx = [i0 - 1, i0, i0 + 1, i0 + 2].map(|i| i.clamp(0, n_in as i64 - 1) as usize);
            (idx, cubic_weights(t))
        })
        .collect()
}

/// Separable bicubic upsampling by an integer factor, half-pixel aligned,
/// edge samples replicated.
pub fn bicubic_upsample(map: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 || map.rows == 0 || map.cols == 0 {
        return Err(TrackError::Parameter("upsampling needs a non-empty map and factor >= 1".into()));
    }
    let xt = cubic_taps(map.cols, factor);
    let yt = cubic_taps(map.rows, factor);
    let oc = map.cols * factor;
    let or = map.rows * factor;
    let mut horiz = vec![0f64; map.rows * oc];
    for y in 0..map.rows {
        let row = &map.data[y * map.cols..][..map.cols];
        for (x, (idx, w)) in xt.iter().enumerate() {
            horiz[y * oc + x] = (0..4).map(|k| row[idx[k]] * w[k]).sum();
        }
    }
    let mut out = vec![0f64; or * oc];
    for (y, (idx, w)) in yt.iter().enumerate() {
        for x in 0..oc {
            out[y * oc + x] = (0..4).map(|k| horiz[idx[k] * oc + x] * w[k]).sum();
        }
    }
    Grid::new(or, oc, out)
}

/// Bicubic upsampling of a 17x17 similarity map.
pub fn upsample_score(map: &Grid, factor: usize) -> Result<Grid> {
    if map.rows != SCORE_SIDE || map.cols != SCORE_SIDE {
        return Err(TensorError::Shape(format!(
            "score map must be {SCORE_SIDE}x{SCORE_SIDE}, got {}x{}",
            map.rows, map.cols
        ))
        .into());
    }
    bicubic_upsample(map, factor)
}

/// Outer product of two Hann windows, peak-normalized to 1.
pub fn hann_window(side: usize) -> Grid {
    let hann: Vec<f64> = if side < 2 {
        vec![1.0; side]
    } else {
        (0..side)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (side - 1) as f64).cos())
            .collect()
    };
    let mut data: Vec<f64> = hann.iter().flat_map(|a| hann.iter().map(move |b| a * b)).collect();
    let peak = data.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        data.iter_mut().for_each(|v| *v /= peak);
    }
    Grid { rows: side, cols: side, data }
}

/// Outcome of the peak search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Located {
    /// Index into the scale list (the centre scale for a single map).
    pub scale_index: usize,
    /// Target displacement from the ROI centre, in ROI pixels (x, y).
    pub dx: f64,
    pub dy: f64,
    /// Penalized raw peak of the winning map.
    pub response: f64,
}

/// Picks the scale with the highest (penalized) peak, blends its affinely
/// normalized map with the cosine window and converts the peak offset from
/// map pixels to ROI pixels.
pub fn penalize_and_locate(maps: &[Grid], window: &Grid, cfg: &TrackerConfig, total_stride: usize) -> Result<Located> {
    if maps.is_empty() {
        return Err(TrackError::Parameter("no score maps to locate in".into()));
    }
    let center = (maps.len() - 1) / 2;
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in maps.iter().enumerate() {
        if m.rows != window.rows || m.cols != window.cols {
            return Err(TensorError::Shape(format!(
                "map {}x{} does not match window {}x{}",
                m.rows, m.cols, window.rows, window.cols
            ))
            .into());
        }
        let penalty = if i == center { 1.0 } else { cfg.scale_penalty };
        let peak = m.max() * penalty;
        let better = match best {
            None => true,
            Some((bi, bp)) => {
                peak > bp || (peak == bp && i.abs_diff(center) < bi.abs_diff(center))
            }
        };
        if better {
            best = Some((i, peak));
        }
    }
    let (scale_index, response) = best.expect("non-empty");
    let m = &maps[scale_index];
    let (lo, hi) = (m.min(), m.max());
    let range = hi - lo;
    let wi = cfg.window_influence;
    let blended = Grid {
        rows: m.rows,
        cols: m.cols,
        data: m
            .data
            .iter()
            .zip(&window.data)
            .map(|(&v, &w)| {
                let norm = if range > 0.0 { (v - lo) / range } else { 0.0 };
                (1.0 - wi) * norm + wi * w
            })
            .collect(),
    };
    let (py, px) = blended.peak_centroid(1e-12);
    let to_roi = total_stride as f64 / cfg.upsample_factor as f64;
    let dy = (py - (m.rows as f64 - 1.0) / 2.0) * to_roi;
    let dx = (px - (m.cols as f64 - 1.0) / 2.0) * to_roi;
    Ok(Located { scale_index, dx, dy, response })
}

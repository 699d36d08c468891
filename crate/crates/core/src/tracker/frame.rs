//! Frames, square crops and the float patch handed to the network.

use crate::qtensor::{self, QTensor};

use super::{BBox, Result, TrackError};

/// 8-bit RGB frame, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(TrackError::Parameter("frame must be non-empty".into()));
        }
        if data.len() != width * height * 3 {
            return Err(TrackError::Parameter(format!(
                "frame data has {} bytes, {width}x{height} RGB needs {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Single-colour frame.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn channel_mean(&self) -> [f32; 3] {
        let mut sum = [0u64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as u64;
            }
        }
        let n = (self.width * self.height) as f64;
        sum.map(|s| (s as f64 / n) as f32)
    }

    pub fn from_rgb_image(img: image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self { width: w as usize, height: h as usize, data: img.into_raw() }
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("frame buffer matches its dimensions")
    }
}

/// Square float patch in `(C, H, W)` layout, pixel values on the 0..=255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub side: usize,
    pub data: Vec<f32>,
}

impl Patch {
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.side + y) * self.side + x]
    }
}

/// Samples a `side`-pixel square centred on `(cx, cy)` into an
/// `out_size`-pixel patch with bilinear interpolation. Samples falling
/// outside the frame read `fill`.
///
/// Coordinates are continuous: pixel `k` spans `[k, k + 1)`.
pub fn crop_square(frame: &Frame, cx: f64, cy: f64, side: f64, out_size: usize, fill: [f32; 3]) -> Result<Patch> {
    if !(side > 0.0) || !side.is_finite() || out_size == 0 {
        return Err(TrackError::Parameter(format!(
            "crop side {side} / output size {out_size} must be positive"
        )));
    }
    let step = side / out_size as f64;
    let x0 = cx - side / 2.0;
    let y0 = cy - side / 2.0;
    // per-axis source taps: (index0, index1, weight1)
    let taps = |origin: f64| -> Vec<(i64, f32)> {
        (0..out_size)
            .map(|j| {
                let src = origin + (j as f64 + 0.5) * step - 0.5;
                let i0 = src.floor();
                (i0 as i64, (src - i0) as f32)
            })
            .collect()
    };
    let xs = taps(x0);
    let ys = taps(y0);
    let (w, h) = (frame.width as i64, frame.height as i64);
    let sample = |x: i64, y: i64, c: usize| -> f32 {
        if x < 0 || y < 0 || x >= w || y >= h {
            fill[c]
        } else {
            frame.data[((y * w + x) * 3) as usize + c] as f32
        }
    };
    let mut data = vec![0f32; 3 * out_size * out_size];
    for (oy, &(iy, fy)) in ys.iter().enumerate() {
        for (ox, &(ix, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let top = sample(ix, iy, c) * (1.0 - fx) + sample(ix + 1, iy, c) * fx;
                let bot = sample(ix, iy + 1, c) * (1.0 - fx) + sample(ix + 1, iy + 1, c) * fx;
                data[(c * out_size + oy) * out_size + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Ok(Patch { side: out_size, data })
}

/// Exemplar-sized context square around a box: `sqrt((w + p)(h + p))` with
/// `p = context * (w + h)`.
pub fn context_side(bbox: &BBox, context: f64) -> f64 {
    let p = context * (bbox.w + bbox.h);
    ((bbox.w + p) * (bbox.h + p)).sqrt()
}

/// Crops the context square around `bbox` and resizes it to `out_size`.
/// The square is scaled by `out_size / exemplar_size`, so the exemplar and
/// the search region share one frame-to-patch ratio. Out-of-frame regions
/// take the per-channel frame mean.
pub fn crop_resize(frame: &Frame, bbox: &BBox, context: f64, exemplar_size: usize, out_size: usize) -> Result<Patch> {
    bbox.validate()?;
    let side = context_side(bbox, context) * out_size as f64 / exemplar_size as f64;
    crop_square(frame, bbox.cx, bbox.cy, side, out_size, frame.channel_mean())
}

/// Packs a 0..=255 patch onto the signed 8-bit input grid (`value - 128`).
pub fn patch_to_qtensor(patch: &Patch, scale: f64) -> Result<QTensor> {
    let real: Vec<f64> = patch.data.iter().map(|&v| (v as f64 - 128.0) / 128.0).collect();
    Ok(qtensor::quantize(&real, vec![3, patch.side, patch.side], 8, scale)?)
}

use crate::qtensor::{QTensor, TensorError};

use super::{FeatureExtractor, Result};

/// Network stand-in for exercising the tracking logic: the patch is
/// averaged to grayscale, average-pooled by `stride`, and replicated over
/// `channels` channels as 8-bit features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PooledGrayStub {
    pub channels: usize,
    pub stride: usize,
}

impl Default for PooledGrayStub {
    fn default() -> Self {
        Self { channels: 128, stride: 8 }
    }
}

impl FeatureExtractor for PooledGrayStub {
    fn input_scale(&self) -> f64 {
        crate::siamnet::INPUT_SCALE
    }

    fn total_stride(&self) -> usize {
        self.stride
    }

    fn extract(&self, input: &QTensor) -> Result<QTensor> {
        let (c, h, w) = input.chw()?;
        let s = self.stride;
        if h < s || w < s || c == 0 {
            return Err(TensorError::Shape(format!("{c}x{h}x{w} patch is smaller than the pooling stride {s}")).into());
        }
        let (oh, ow) = (h / s, w / s);
        let denom = (c * s * s) as f64;
        let mut plane = Vec::with_capacity(oh * ow);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0i64;
                for ch in 0..c {
                    for y in oy * s..(oy + 1) * s {
                        let row = &input.data()[(ch * h + y) * w + ox * s..][..s];
                        sum += row.iter().map(|&v| v as i64).sum::<i64>();
                    }
                }
                plane.push((sum as f64 / denom).round_ties_even().clamp(-128.0, 127.0) as i8);
            }
        }
        let data = plane.iter().copied().cycle().take(self.channels * oh * ow).collect();
        Ok(QTensor::new(vec![self.channels, oh, ow], data, 8, input.scale())?)
    }
}

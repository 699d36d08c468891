//! Integer tensors and the bit-exact kernels the Siamese branch is built from.
//!
//! Everything here is integer arithmetic except [`quantize`]/[`dequantize`]
//! at the boundary and the one-off lowering of batch-norm parameters into
//! per-channel thresholds ([`lower_batchnorm`]).

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unsupported layer: {0}")]
    UnsupportedLayer(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("value {value} does not fit a signed {bits}-bit tensor")]
    Range { value: i64, bits: u8 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

/// Inclusive signed range `[-2^(bits-1), 2^(bits-1) - 1]`.
pub fn signed_range(bits: u8) -> (i32, i32) {
    let half = 1i32 << (bits - 1);
    (-half, half - 1)
}

fn check_bits(bits: u8) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(TensorError::Parameter(format!(
            "bit-width {bits} outside {MIN_BITS}..={MAX_BITS}"
        )))
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(TensorError::Parameter(format!("scale must be positive, got {scale}")))
    }
}

/// Low bit-width signed integer tensor. `real = value * scale`.
///
/// Layout is row-major with the channel axis outermost: `(C, H, W)` for
/// activations and `(F, C, KH, KW)` for convolution weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    dims: Vec<usize>,
    data: Vec<i8>,
    bits: u8,
    scale: f64,
}

impl QTensor {
    pub fn new(dims: Vec<usize>, data: Vec<i8>, bits: u8, scale: f64) -> Result<Self> {
        check_bits(bits)?;
        check_scale(scale)?;
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(TensorError::Shape(format!(
                "data length {} does not match dims {:?} ({} elements)",
                data.len(),
                dims,
                expected
            )));
        }
        let (lo, hi) = signed_range(bits);
        if let Some(&v) = data.iter().find(|&&v| (v as i32) < lo || (v as i32) > hi) {
            return Err(TensorError::Range { value: v as i64, bits });
        }
        Ok(Self { dims, data, bits, scale })
    }

    /// Builds a tensor from wider integers, rejecting anything outside the bit range.
    pub fn from_i32(dims: Vec<usize>, values: &[i32], bits: u8, scale: f64) -> Result<Self> {
        check_bits(bits)?;
        let (lo, hi) = signed_range(bits);
        let data = values
            .iter()
            .map(|&v| {
                if v < lo || v > hi {
                    Err(TensorError::Range { value: v as i64, bits })
                } else {
                    Ok(v as i8)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, data, bits, scale)
    }

    pub fn zeros(dims: Vec<usize>, bits: u8, scale: f64) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0; n], bits, scale)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::Shape(format!(
                "expected a (C, H, W) tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<i8>, u8, f64) {
        (self.dims, self.data, self.bits, self.scale)
    }
}

/// Wide accumulator output of a convolution, `(C, H, W)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccTensor {
    dims: [usize; 3],
    data: Vec<i32>,
}

impl AccTensor {
    pub fn new(dims: [usize; 3], data: Vec<i32>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(TensorError::Shape(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    /// Element-wise negation of the listed channels.
    pub fn negate_channels(&mut self, negate: &[bool]) {
        let plane = self.dims[1] * self.dims[2];
        for (chunk, &neg) in self.data.chunks_mut(plane).zip(negate) {
            if neg {
                chunk.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1, exact integer accumulation.
///
/// Output channels are computed in parallel; each output element is a plain
/// integer sum, so the result does not depend on scheduling.
pub fn conv2d_same(input: &QTensor, weights: &QTensor) -> Result<AccTensor> {
    let (c, h, w) = input.chw()?;
    let (f, wc, kh, kw) = match weights.dims()[..] {
        [f, wc, kh, kw] => (f, wc, kh, kw),
        _ => {
            return Err(TensorError::Shape(format!(
                "weights must be (F, C, KH, KW), got {:?}",
                weights.dims()
            )))
        }
    };
    if (kh, kw) != (3, 3) {
        return Err(TensorError::UnsupportedLayer(format!(
            "only 3x3 kernels are supported, got {kh}x{kw}"
        )));
    }
    if wc != c {
        return Err(TensorError::Shape(format!(
            "input has {c} channels but weights expect {wc}"
        )));
    }

    let pw = w + 2;
    let ph = h + 2;
    let mut padded = vec![0i32; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            let src = &input.data()[(ch * h + y) * w..][..w];
            let dst = &mut padded[(ch * ph + y + 1) * pw + 1..][..w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s as i32;
            }
        }
    }

    let plane = h * w;
    let mut out = vec![0i32; f * plane];
    out.par_chunks_mut(plane.max(1))
        .enumerate()
        .for_each(|(oc, out_plane)| {
            let filt = &weights.data()[oc * c * 9..][..c * 9];
            // Row blocks keep the accumulator rows resident in L1.
            let block = (4096 / w.max(1)).clamp(1, h.max(1));
            for y0 in (0..h).step_by(block) {
                let y1 = (y0 + block).min(h);
                for ch in 0..c {
                    let src = &padded[ch * ph * pw..][..ph * pw];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let wv = filt[ch * 9 + ky * 3 + kx] as i32;
                            if wv == 0 {
                                continue;
                            }
                            for y in y0..y1 {
                                let in_row = &src[(y + ky) * pw + kx..][..w];
                                let out_row = &mut out_plane[y * w..][..w];
                                for (o, &i) in out_row.iter_mut().zip(in_row) {
                                    *o += wv * i;
                                }
                            }
                        }
                    }
                }
            }
        });
    AccTensor::new([f, h, w], out)
}

fn pool_planes<T: Copy + Ord>(data: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &data[ch * h * w..][..h * w];
        for y in 0..oh {
            let r0 = &plane[2 * y * w..][..w];
            let r1 = &plane[(2 * y + 1) * w..][..w];
            for x in 0..ow {
                let m = r0[2 * x].max(r0[2 * x + 1]).max(r1[2 * x]).max(r1[2 * x + 1]);
                out.push(m);
            }
        }
    }
    out
}

fn check_poolable(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(TensorError::Shape(format!(
            "2x2 max-pooling needs H, W >= 2, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Non-overlapping 2x2 max-pooling; an odd trailing row/column is dropped.
pub fn maxpool2x2(input: &QTensor) -> Result<QTensor> {
    let (c, h, w) = input.chw()?;
    check_poolable(h, w)?;
    let data = pool_planes(input.data(), c, h, w);
    QTensor::new(vec![c, h / 2, w / 2], data, input.bits(), input.scale())
}

/// [`maxpool2x2`] on accumulator tensors.
pub fn maxpool2x2_acc(input: &AccTensor) -> Result<AccTensor> {
    let [c, h, w] = input.dims();
    check_poolable(h, w)?;
    AccTensor::new([c, h / 2, w / 2], pool_planes(input.data(), c, h, w))
}

/// Per-channel integer thresholds realizing batch-norm + uniform activation
/// quantization.
///
/// The output level is `offset + #{t in thresholds[c] : acc >= t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    thresholds: Vec<Vec<i32>>,
    out_bits: u8,
    offset: i32,
    out_scale: f64,
}

impl ThresholdSet {
    /// Levels land on the signed grid `[-2^(b-1), 2^(b-1) - 1]`.
    pub fn signed(thresholds: Vec<Vec<i32>>, out_bits: u8, out_scale: f64) -> Result<Self> {
        let offset = if out_bits == 0 { 0 } else { -(1i32 << (out_bits - 1)) };
        Self::with_offset(thresholds, out_bits, offset, out_scale)
    }

    /// Levels land on `[0, 2^b - 1]`.
    pub fn unsigned(thresholds: Vec<Vec<i32>>, out_bits: u8, out_scale: f64) -> Result<Self> {
        Self::with_offset(thresholds, out_bits, 0, out_scale)
    }

    pub fn with_offset(
        thresholds: Vec<Vec<i32>>,
        out_bits: u8,
        offset: i32,
        out_scale: f64,
    ) -> Result<Self> {
        if out_bits == 0 || out_bits > MAX_BITS {
            return Err(TensorError::Parameter(format!(
                "activation bit-width {out_bits} outside 1..={MAX_BITS}"
            )));
        }
        check_scale(out_scale)?;
        let count = (1usize << out_bits) - 1;
        for (c, t) in thresholds.iter().enumerate() {
            if t.len() != count {
                return Err(TensorError::Parameter(format!(
                    "channel {c} has {} thresholds, {out_bits}-bit output needs {count}",
                    t.len()
                )));
            }
            if t.windows(2).any(|p| p[0] > p[1]) {
                return Err(TensorError::Parameter(format!(
                    "channel {c} thresholds are not non-decreasing"
                )));
            }
        }
        let set = Self { thresholds, out_bits, offset, out_scale };
        let (lo, hi) = set.level_range();
        let storage = set.storage_bits();
        let (slo, shi) = signed_range(storage);
        if lo < slo || hi > shi {
            return Err(TensorError::Parameter(format!(
                "output levels {lo}..={hi} do not fit an 8-bit tensor"
            )));
        }
        Ok(set)
    }

    pub fn channels(&self) -> usize {
        self.thresholds.len()
    }

    pub fn thresholds(&self) -> &[Vec<i32>] {
        &self.thresholds
    }

    pub fn out_bits(&self) -> u8 {
        self.out_bits
    }

    pub fn offset(&self) -> i32 {
        self.offset
    }

    pub fn out_scale(&self) -> f64 {
        self.out_scale
    }

    /// Inclusive range of output levels.
    pub fn level_range(&self) -> (i32, i32) {
        (self.offset, self.offset + (1i32 << self.out_bits) - 1)
    }

    /// Narrowest signed tensor width (>= 2) holding every output level.
    pub fn storage_bits(&self) -> u8 {
        let (lo, hi) = self.level_range();
        (MIN_BITS..=MAX_BITS)
            .find(|&b| {
                let (slo, shi) = signed_range(b);
                lo >= slo && hi <= shi
            })
            .unwrap_or(MAX_BITS + 1)
    }
}

pub fn threshold_activate(acc: &AccTensor, thr: &ThresholdSet) -> Result<QTensor> {
    let [c, h, w] = acc.dims();
    if thr.channels() != c {
        return Err(TensorError::Shape(format!(
            "accumulator has {c} channels, threshold set has {}",
            thr.channels()
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(acc.data().len());
    for (ch, t) in thr.thresholds().iter().enumerate() {
        for &v in &acc.data()[ch * plane..][..plane] {
            // thresholds are sorted: the count of met thresholds is a partition point
            let met = t.partition_point(|&th| th <= v) as i32;
            out.push((thr.offset() + met) as i8);
        }
    }
    QTensor::new(vec![c, h, w], out, thr.storage_bits(), thr.out_scale())
}

/// Round-half-to-even onto the signed `bits` grid, saturating at the edges.
pub fn quantize(x: &[f64], dims: Vec<usize>, bits: u8, scale: f64) -> Result<QTensor> {
    check_bits(bits)?;
    check_scale(scale)?;
    let (lo, hi) = signed_range(bits);
    let data = x
        .iter()
        .map(|&v| quantize_scalar(v, scale, lo, hi) as i8)
        .collect();
    QTensor::new(dims, data, bits, scale)
}

pub(crate) fn quantize_scalar(v: f64, scale: f64, lo: i32, hi: i32) -> i32 {
    let r = (v / scale).round_ties_even();
    if r.is_nan() {
        0
    } else {
        r.clamp(lo as f64, hi as f64) as i32
    }
}

pub fn dequantize(q: &QTensor) -> Vec<f64> {
    q.data().iter().map(|&v| v as f64 * q.scale()).collect()
}

/// Float batch-norm parameters for one layer, one entry per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl BatchNorm {
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Threshold form of a batch-norm + activation quantizer.
///
/// Channels with negative gamma are monotone decreasing in the accumulator;
/// they are listed in `negate` and their accumulator (equivalently, their
/// weights) must be negated before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct LoweredActivation {
    pub thresholds: ThresholdSet,
    pub negate: Vec<bool>,
}

fn saturate_i32(v: f64) -> i32 {
    if v.is_nan() {
        i32::MAX
    } else {
        v.clamp(i32::MIN as f64, i32::MAX as f64) as i32
    }
}

/// Lowers `y = gamma * (acc * acc_scale - mean) / std + beta` followed by
/// `clamp(round(y / out_scale))` on the signed `out_bits` grid into integer
/// thresholds over the accumulator.
pub fn lower_batchnorm(
    bn: &BatchNorm,
    acc_scale: f64,
    out_bits: u8,
    out_scale: f64,
) -> Result<LoweredActivation> {
    check_scale(acc_scale)?;
    check_scale(out_scale)?;
    let n = bn.channels();
    if bn.beta.len() != n || bn.mean.len() != n || bn.std.len() != n {
        return Err(TensorError::Shape("batch-norm vectors differ in length".into()));
    }
    if let Some(s) = bn.std.iter().find(|&&s| !(s > 0.0)) {
        return Err(TensorError::Parameter(format!("batch-norm std must be > 0, got {s}")));
    }
    let (lo, hi) = signed_range(out_bits);
    let levels = (hi - lo) as usize;
    let mut thresholds = Vec::with_capacity(n);
    let mut negate = Vec::with_capacity(n);
    for c in 0..n {
        let (g, b, m, s) = (
            bn.gamma[c] as f64,
            bn.beta[c] as f64,
            bn.mean[c] as f64,
            bn.std[c] as f64,
        );
        let mut t = Vec::with_capacity(levels);
        if g == 0.0 {
            let constant = quantize_scalar(b, out_scale, lo, hi);
            let met = (constant - lo) as usize;
            t.extend(std::iter::repeat_n(i32::MIN, met));
            t.extend(std::iter::repeat_n(i32::MAX, levels - met));
            negate.push(false);
        } else {
            for k in 1..=levels {
                // level lo + k is reached once y / out_scale >= lo + k - 1/2
                let y = (lo as f64 + k as f64 - 0.5) * out_scale;
                let acc = (m + s * (y - b) / g) / acc_scale;
                if g > 0.0 {
                    t.push(saturate_i32(acc.ceil()));
                } else {
                    t.push(saturate_i32(-acc.floor()));
                }
            }
            negate.push(g < 0.0);
        }
        thresholds.push(t);
    }
    Ok(LoweredActivation {
        thresholds: ThresholdSet::signed(thresholds, out_bits, out_scale)?,
        negate,
    })
}

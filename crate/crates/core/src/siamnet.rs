//! The Siamese branch network: declarative layer plan, weight container,
//! and the integer forward pass.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qtensor::{
    self, conv2d_same, lower_batchnorm, maxpool2x2, threshold_activate, AccTensor, BatchNorm,
    QTensor, TensorError, ThresholdSet,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("container error in tensor `{tensor}`: {reason}")]
    Tensor { tensor: String, reason: String },
    #[error("container error: {0}")]
    Container(String),
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Kernel(#[from] TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl NetError {
    fn tensor(name: &str, reason: impl Into<String>) -> Self {
        NetError::Tensor { tensor: name.to_string(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Magic prefix of the weight container file.
pub const MAGIC: &[u8; 6] = b"QSIAM1";
pub const FORMAT_VERSION: u32 = 1;

/// Bit-width and scale of the 8-bit image fed into the first layer.
pub const INPUT_BITS: u8 = 8;
pub const INPUT_SCALE: f64 = 1.0 / 128.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kernel: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight_bits: u8,
    /// `None` for the last layer, whose output is only requantized.
    pub act_bits: Option<u8>,
    pub pool: bool,
    pub has_batchnorm: bool,
}

impl LayerSpec {
    pub fn conv3x3(name: &str, in_channels: usize, out_channels: usize, weight_bits: u8) -> Self {
        Self {
            name: name.to_string(),
            kernel: (3, 3),
            in_channels,
            out_channels,
            weight_bits,
            act_bits: Some(4),
            pool: false,
            has_batchnorm: true,
        }
    }

    pub fn params(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.in_channels * self.out_channels
    }

    fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(NetError::Spec(format!("layer `{}`: {why}", self.name)));
        if self.kernel != (3, 3) {
            return bad("kernel must be 3x3");
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive");
        }
        if !matches!(self.weight_bits, 4 | 8) {
            return bad("weight bits must be 4 or 8");
        }
        if !matches!(self.act_bits, None | Some(4)) {
            return bad("activation bits must be 4 or absent");
        }
        if self.has_batchnorm && self.act_bits.is_none() {
            return bad("batch-norm requires an activation quantizer");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub exemplar_input: (usize, usize, usize),
    pub roi_input: (usize, usize, usize),
}

/// Spatial sizes through the branch: the input, then the map after every
/// convolution and every pooling, in execution order.
pub type ShapeTrace = Vec<usize>;

impl NetworkSpec {
    pub fn new(
        layers: Vec<LayerSpec>,
        exemplar_input: (usize, usize, usize),
        roi_input: (usize, usize, usize),
    ) -> Result<Self> {
        for l in &layers {
            l.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(NetError::Spec(format!(
                    "`{}` emits {} channels but `{}` expects {}",
                    pair[0].name, pair[0].out_channels, pair[1].name, pair[1].in_channels
                )));
            }
        }
        Ok(Self { layers, exemplar_input, roi_input })
    }

    /// Output channels of the final layer.
    pub fn feature_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    /// Output (conv) spatial size of every layer for a square input, before pooling.
    pub fn conv_output_sizes(&self, input: usize) -> Result<Vec<(usize, usize)>> {
        let mut hw = (input, input);
        let mut sizes = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            sizes.push(hw);
            if l.pool {
                if hw.0 < 2 || hw.1 < 2 {
                    return Err(NetError::Spec(format!(
                        "layer `{}` pools a {}x{} map",
                        l.name, hw.0, hw.1
                    )));
                }
                hw = (hw.0 / 2, hw.1 / 2);
            }
        }
        Ok(sizes)
    }

    /// Spatial size of the final feature map for a square input.
    pub fn feature_size(&self, input: usize) -> Result<usize> {
        let sizes = self.conv_output_sizes(input)?;
        Ok(match self.layers.last() {
            Some(l) if l.pool => sizes.last().map_or(input, |s| s.0 / 2),
            Some(_) => sizes.last().map_or(input, |s| s.0),
            None => input,
        })
    }

    /// Product of the pooling factors, i.e. the input pixels per feature cell.
    pub fn total_stride(&self) -> usize {
        1 << self.layers.iter().filter(|l| l.pool).count()
    }
}

/// The six-layer branch: 3x3 kernels throughout, 8-bit weights at both
/// ends and 4-bit in between, 4-bit activations, pooling after the first
/// three layers.
pub fn canonical_network() -> NetworkSpec {
    let mut layers = vec![
        LayerSpec::conv3x3("conv1_1", 3, 64, 8),
        LayerSpec::conv3x3("conv1_2", 64, 64, 4),
        LayerSpec::conv3x3("conv2", 64, 128, 4),
        LayerSpec::conv3x3("conv3", 128, 128, 4),
        LayerSpec::conv3x3("conv4", 128, 128, 4),
        LayerSpec::conv3x3("conv5", 128, 128, 8),
    ];
    for l in &mut layers[..3] {
        l.pool = true;
    }
    let last = layers.last_mut().expect("six layers");
    last.act_bits = None;
    last.has_batchnorm = false;
    NetworkSpec::new(layers, (3, 110, 110), (3, 238, 238)).expect("canonical spec is valid")
}

/// Convolution weights only; there are no biases and batch-norm is not counted.
pub fn param_count(spec: &NetworkSpec) -> usize {
    spec.layers.iter().map(LayerSpec::params).sum()
}

/// Trained (or synthetic) parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub name: String,
    pub weights: QTensor,
    pub batchnorm: Option<BatchNorm>,
    /// Activation scale for thresholded layers, requantization scale for the last.
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightContainer {
    pub input_scale: f64,
    pub layers: Vec<LayerWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dims: Vec<usize>,
    bits: u8,
    scale: f64,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    output_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    input_scale: f64,
    layers: Vec<LayerEntry>,
    tensors: Vec<TensorEntry>,
}

const BN_FIELDS: [&str; 4] = ["gamma", "beta", "mean", "std"];

fn bn_field<'a>(bn: &'a BatchNorm, field: &str) -> &'a [f32] {
    match field {
        "gamma" => &bn.gamma,
        "beta" => &bn.beta,
        "mean" => &bn.mean,
        _ => &bn.std,
    }
}

impl WeightContainer {
    /// Checks the container against a network plan.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(NetError::Container(format!(
                "container has {} layers, network has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        if !(self.input_scale > 0.0) {
            return Err(NetError::Container("input scale must be positive".into()));
        }
        for (lw, ls) in self.layers.iter().zip(&spec.layers) {
            let wname = format!("{}.weight", ls.name);
            if lw.name != ls.name {
                return Err(NetError::tensor(
                    &wname,
                    format!("expected layer `{}`, found `{}`", ls.name, lw.name),
                ));
            }
            let want = [ls.out_channels, ls.in_channels, ls.kernel.0, ls.kernel.1];
            if lw.weights.dims() != want {
                return Err(NetError::tensor(
                    &wname,
                    format!("dims {:?}, expected {:?}", lw.weights.dims(), want),
                ));
            }
            if lw.weights.bits() != ls.weight_bits {
                return Err(NetError::tensor(
                    &wname,
                    format!("{} bits, expected {}", lw.weights.bits(), ls.weight_bits),
                ));
            }
            if !(lw.output_scale > 0.0) {
                return Err(NetError::tensor(&wname, "output scale must be positive"));
            }
            match (&lw.batchnorm, ls.has_batchnorm) {
                (Some(bn), true) => {
                    for f in BN_FIELDS {
                        if bn_field(bn, f).len() != ls.out_channels {
                            return Err(NetError::tensor(
                                &format!("{}.bn.{f}", ls.name),
                                format!("length {}, expected {}", bn_field(bn, f).len(), ls.out_channels),
                            ));
                        }
                    }
                }
                (None, false) => {}
                (None, true) => {
                    return Err(NetError::tensor(&format!("{}.bn.gamma", ls.name), "missing"))
                }
                (Some(_), false) => {
                    return Err(NetError::tensor(
                        &format!("{}.bn.gamma", ls.name),
                        "layer has no batch-norm",
                    ))
                }
            }
        }
        Ok(())
    }

    /// Serialized container bytes: magic, manifest length, JSON manifest, blob.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        let mut tensors = Vec::new();
        for lw in &self.layers {
            tensors.push(TensorEntry {
                name: format!("{}.weight", lw.name),
                dims: lw.weights.dims().to_vec(),
                bits: lw.weights.bits(),
                scale: lw.weights.scale(),
                offset: blob.len(),
            });
            blob.extend(lw.weights.data().iter().map(|&v| v as u8));
        }
        for lw in &self.layers {
            if let Some(bn) = &lw.batchnorm {
                for f in BN_FIELDS {
                    let v = bn_field(bn, f);
                    tensors.push(TensorEntry {
                        name: format!("{}.bn.{f}", lw.name),
                        dims: vec![v.len()],
                        bits: 32,
                        scale: 1.0,
                        offset: blob.len(),
                    });
                    for x in v {
                        blob.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        let manifest = Manifest {
            version: FORMAT_VERSION,
            input_scale: self.input_scale,
            layers: self
                .layers
                .iter()
                .map(|l| LayerEntry { name: l.name.clone(), output_scale: l.output_scale })
                .collect(),
            tensors,
        };
        let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + text.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(&text);
        out.extend_from_slice(&blob);
        out
    }

    /// Parses container bytes and validates them against `spec`.
    pub fn from_bytes(bytes: &[u8], spec: &NetworkSpec) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(NetError::Container("missing QSIAM1 magic".into()));
        }
        let len_bytes: [u8; 4] = bytes[6..10].try_into().expect("4 bytes");
        let mlen = u32::from_le_bytes(len_bytes) as usize;
        let body = &bytes[10..];
        if body.len() < mlen {
            return Err(NetError::Container("manifest is truncated".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])
            .map_err(|e| NetError::Container(format!("malformed manifest: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(NetError::Container(format!(
                "unsupported container version {}",
                manifest.version
            )));
        }
        let blob = &body[mlen..];
        if manifest.layers.len() != spec.layers.len() {
            return Err(NetError::Container(format!(
                "manifest lists {} layers, network has {}",
                manifest.layers.len(),
                spec.layers.len()
            )));
        }

        // every tensor must be contiguous, in manifest order, and inside the blob
        let mut cursor = 0usize;
        for t in &manifest.tensors {
            let width = match t.bits {
                2..=8 => 1,
                32 => 4,
                b => return Err(NetError::tensor(&t.name, format!("unsupported bit-width {b}"))),
            };
            let size = t.dims.iter().product::<usize>() * width;
            if t.offset != cursor {
                return Err(NetError::tensor(
                    &t.name,
                    format!("offset {} does not follow previous tensor end {cursor}", t.offset),
                ));
            }
            if t.offset + size > blob.len() {
                return Err(NetError::tensor(
                    &t.name,
                    format!(
                        "blob truncated: needs bytes {}..{}, blob has {}",
                        t.offset,
                        t.offset + size,
                        blob.len()
                    ),
                ));
            }
            cursor += size;
        }
        if cursor != blob.len() {
            return Err(NetError::Container(format!(
                "blob has {} trailing bytes not described by the manifest",
                blob.len() - cursor
            )));
        }

        let find = |name: &str| manifest.tensors.iter().find(|t| t.name == name);
        let mut known = Vec::new();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (entry, ls) in manifest.layers.iter().zip(&spec.layers) {
            if entry.name != ls.name {
                return Err(NetError::Container(format!(
                    "manifest layer `{}` where network expects `{}`",
                    entry.name, ls.name
                )));
            }
            let wname = format!("{}.weight", ls.name);
            let t = find(&wname).ok_or_else(|| NetError::tensor(&wname, "missing"))?;
            if t.bits > 8 {
                return Err(NetError::tensor(&wname, "weights must be at most 8 bits"));
            }
            let data: Vec<i8> = blob[t.offset..][..t.dims.iter().product::<usize>()]
                .iter()
                .map(|&b| b as i8)
                .collect();
            let weights = QTensor::new(t.dims.clone(), data, t.bits, t.scale)
                .map_err(|e| NetError::tensor(&wname, e.to_string()))?;
            known.push(wname);

            let batchnorm = if ls.has_batchnorm {
                let mut vecs = Vec::with_capacity(4);
                for f in BN_FIELDS {
                    let name = format!("{}.bn.{f}", ls.name);
                    let t = find(&name).ok_or_else(|| NetError::tensor(&name, "missing"))?;
                    if t.bits != 32 {
                        return Err(NetError::tensor(&name, "batch-norm vectors must be 32-bit floats"));
                    }
                    let n = t.dims.iter().product::<usize>();
                    let v: Vec<f32> = blob[t.offset..][..n * 4]
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    vecs.push(v);
                    known.push(name);
                }
                let mut it = vecs.into_iter();
                Some(BatchNorm {
                    gamma: it.next().expect("gamma"),
                    beta: it.next().expect("beta"),
                    mean: it.next().expect("mean"),
                    std: it.next().expect("std"),
                })
            } else {
                None
            };
            layers.push(LayerWeights {
                name: ls.name.clone(),
                weights,
                batchnorm,
                output_scale: entry.output_scale,
            });
        }
        if let Some(extra) = manifest.tensors.iter().find(|t| !known.contains(&t.name)) {
            return Err(NetError::tensor(&extra.name, "unknown tensor"));
        }
        let container = WeightContainer { input_scale: manifest.input_scale, layers };
        container.validate(spec)?;
        Ok(container)
    }
}

pub fn save_weights(weights: &WeightContainer, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&weights.to_bytes())?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<WeightContainer> {
    let bytes = fs::read(path)?;
    WeightContainer::from_bytes(&bytes, spec)
}

/// Deterministic synthetic weights, shaped so activations stay spread over
/// the 4-bit grid for natural-image inputs.
pub fn gen_random_weights(spec: &NetworkSpec, seed: u64) -> WeightContainer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act_scale = 0.5;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, ls) in spec.layers.iter().enumerate() {
        let (lo, hi) = qtensor::signed_range(ls.weight_bits);
        let fan_in = (ls.kernel.0 * ls.kernel.1 * ls.in_channels) as f64;
        let n = ls.out_channels * ls.in_channels * ls.kernel.0 * ls.kernel.1;
        let data: Vec<i8> = (0..n).map(|_| rng.gen_range(lo..=hi) as i8).collect();
        let wscale = 1.0 / (hi as f64 + 1.0) / fan_in.sqrt();
        let weights = QTensor::new(
            vec![ls.out_channels, ls.in_channels, ls.kernel.0, ls.kernel.1],
            data,
            ls.weight_bits,
            wscale,
        )
        .expect("generated weights are in range");
        // rough pre-activation std: sqrt(fan_in) * std(w) * rms(x)
        let x_rms = if i == 0 { 0.5 } else { 1.0 };
        let pre_std = x_rms / 3f64.sqrt();
        let batchnorm = ls.has_batchnorm.then(|| {
            let c = ls.out_channels;
            BatchNorm {
                gamma: (0..c)
                    .map(|_| {
                        let g = rng.gen_range(0.5f32..1.5);
                        if rng.gen_bool(0.1) {
                            -g
                        } else {
                            g
                        }
                    })
                    .collect(),
                beta: (0..c).map(|_| rng.gen_range(-0.5f32..0.5)).collect(),
                mean: (0..c).map(|_| rng.gen_range(-0.1f32..0.1) * pre_std as f32).collect(),
                std: (0..c)
                    .map(|_| rng.gen_range(0.7f32..1.3) * pre_std as f32)
                    .collect(),
            }
        });
        let output_scale = if ls.act_bits.is_some() { act_scale } else { 4.0 / 128.0 };
        layers.push(LayerWeights { name: ls.name.clone(), weights, batchnorm, output_scale });
    }
    WeightContainer { input_scale: INPUT_SCALE, layers }
}

#[derive(Debug, Clone)]
enum Activation {
    Threshold { set: ThresholdSet, negate: Option<Vec<bool>> },
    Requantize { acc_scale: f64, out_scale: f64 },
}

#[derive(Debug, Clone)]
struct LoweredLayer {
    weights: QTensor,
    activation: Activation,
    pool: bool,
}

/// A network ready for integer-only inference: batch-norm lowered to
/// thresholds, scales resolved. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct QuantizedNetwork {
    spec: NetworkSpec,
    input_scale: f64,
    layers: Vec<LoweredLayer>,
}

impl QuantizedNetwork {
    pub fn new(spec: &NetworkSpec, weights: &WeightContainer) -> Result<Self> {
        weights.validate(spec)?;
        let mut scale_in = weights.input_scale;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (ls, lw) in spec.layers.iter().zip(&weights.layers) {
            let acc_scale = scale_in * lw.weights.scale();
            let activation = match (ls.act_bits, &lw.batchnorm) {
                (Some(bits), Some(bn)) => {
                    let lowered = lower_batchnorm(bn, acc_scale, bits, lw.output_scale)
                        .map_err(|e| NetError::tensor(&format!("{}.bn", ls.name), e.to_string()))?;
                    let negate = lowered.negate.iter().any(|&n| n).then_some(lowered.negate);
                    Activation::Threshold { set: lowered.thresholds, negate }
                }
                (Some(bits), None) => {
                    // plain uniform quantizer expressed as thresholds
                    let bn = BatchNorm {
                        gamma: vec![1.0; ls.out_channels],
                        beta: vec![0.0; ls.out_channels],
                        mean: vec![0.0; ls.out_channels],
                        std: vec![1.0; ls.out_channels],
                    };
                    let lowered = lower_batchnorm(&bn, acc_scale, bits, lw.output_scale)?;
                    Activation::Threshold { set: lowered.thresholds, negate: None }
                }
                (None, _) => Activation::Requantize { acc_scale, out_scale: lw.output_scale },
            };
            scale_in = lw.output_scale;
            layers.push(LoweredLayer { weights: lw.weights.clone(), activation, pool: ls.pool });
        }
        Ok(Self { spec: spec.clone(), input_scale: weights.input_scale, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn forward(&self, image: &QTensor) -> Result<QTensor> {
        self.forward_traced(image).map(|(q, _)| q)
    }

    /// Forward pass that also reports the spatial size after each convolution
    /// and each pooling step.
    pub fn forward_traced(&self, image: &QTensor) -> Result<(QTensor, ShapeTrace)> {
        let (c, h, _) = image.chw()?;
        let first = self.spec.layers.first().map_or(c, |l| l.in_channels);
        if c != first {
            return Err(TensorError::Shape(format!(
                "image has {c} channels, first layer expects {first}"
            ))
            .into());
        }
        if image.scale() != self.input_scale {
            return Err(TensorError::Parameter(format!(
                "image scale {} differs from the container input scale {}",
                image.scale(),
                self.input_scale
            ))
            .into());
        }
        let mut trace = vec![h];
        let mut x = image.clone();
        for layer in &self.layers {
            let mut acc = conv2d_same(&x, &layer.weights)?;
            trace.push(acc.dims()[1]);
            x = match &layer.activation {
                Activation::Threshold { set, negate } => {
                    if let Some(neg) = negate {
                        acc.negate_channels(neg);
                    }
                    threshold_activate(&acc, set)?
                }
                Activation::Requantize { acc_scale, out_scale } => requantize(&acc, *acc_scale, *out_scale)?,
            };
            if layer.pool {
                x = maxpool2x2(&x)?;
                trace.push(x.dims()[1]);
            }
        }
        Ok((x, trace))
    }
}

fn requantize(acc: &AccTensor, acc_scale: f64, out_scale: f64) -> Result<QTensor> {
    let (lo, hi) = qtensor::signed_range(8);
    let ratio = acc_scale / out_scale;
    let data: Vec<i8> = acc
        .data()
        .iter()
        .map(|&v| qtensor::quantize_scalar(v as f64 * ratio, 1.0, lo, hi) as i8)
        .collect();
    Ok(QTensor::new(acc.dims().to_vec(), data, 8, out_scale)?)
}

/// One-shot forward: lowers `weights` and runs a single image.
pub fn forward(spec: &NetworkSpec, weights: &WeightContainer, image: &QTensor) -> Result<QTensor> {
    QuantizedNetwork::new(spec, weights)?.forward(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(seed: u64, side: usize) -> QTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<i8> = (0..3 * side * side).map(|_| rng.gen_range(-128..=127i32) as i8).collect();
        QTensor::new(vec![3, side, side], data, INPUT_BITS, INPUT_SCALE).unwrap()
    }

    #[test]
    fn canonical_layer_plan() {
        let spec = canonical_network();
        assert_eq!(spec.layers.len(), 6);
        assert_eq!(spec.layers[2].name, "conv2");
        assert_eq!(spec.layers[2].out_channels, 128);
        assert_eq!(spec.layers[2].weight_bits, 4);
        let pools: Vec<bool> = spec.layers.iter().map(|l| l.pool).collect();
        assert_eq!(pools, [true, true, true, false, false, false]);
        let outs: Vec<usize> = spec.layers.iter().map(|l| l.out_channels).collect();
        assert_eq!(outs, [64, 64, 128, 128, 128, 128]);
        let wbits: Vec<u8> = spec.layers.iter().map(|l| l.weight_bits).collect();
        assert_eq!(wbits, [8, 4, 4, 4, 4, 8]);
        let bn: Vec<bool> = spec.layers.iter().map(|l| l.has_batchnorm).collect();
        assert_eq!(bn, [true, true, true, true, true, false]);
        assert_eq!(spec.layers[5].act_bits, None);
        assert_eq!(spec.total_stride(), 8);
        assert_eq!(spec, canonical_network());
    }

    #[test]
    fn param_counts() {
        assert_eq!(param_count(&canonical_network()), 554_688);
        let one = NetworkSpec::new(vec![LayerSpec::conv3x3("c", 3, 64, 8)], (3, 8, 8), (3, 8, 8)).unwrap();
        assert_eq!(param_count(&one), 1728);
        let empty = NetworkSpec::new(vec![], (3, 8, 8), (3, 8, 8)).unwrap();
        assert_eq!(param_count(&empty), 0);
    }

    #[test]
    fn spec_validation() {
        let mut l = LayerSpec::conv3x3("c", 3, 8, 8);
        l.kernel = (5, 5);
        assert!(NetworkSpec::new(vec![l], (3, 8, 8), (3, 8, 8)).is_err());
        let l = LayerSpec::conv3x3("c", 3, 8, 6);
        assert!(NetworkSpec::new(vec![l], (3, 8, 8), (3, 8, 8)).is_err());
        let a = LayerSpec::conv3x3("a", 3, 8, 8);
        let b = LayerSpec::conv3x3("b", 4, 8, 8);
        assert!(NetworkSpec::new(vec![a, b], (3, 8, 8), (3, 8, 8)).is_err());
    }

    #[test]
    fn feature_sizes() {
        let spec = canonical_network();
        assert_eq!(spec.feature_size(238).unwrap(), 29);
        assert_eq!(spec.feature_size(110).unwrap(), 13);
        assert!(spec.feature_size(4).is_err());
    }

    #[test]
    fn generated_weights_are_deterministic_and_in_range() {
        let spec = canonical_network();
        let a = gen_random_weights(&spec, 11);
        let b = gen_random_weights(&spec, 11);
        let c = gen_random_weights(&spec, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate(&spec).unwrap();
        for (lw, ls) in a.layers.iter().zip(&spec.layers) {
            let (lo, hi) = qtensor::signed_range(ls.weight_bits);
            assert!(lw.weights.data().iter().all(|&v| (v as i32) >= lo && (v as i32) <= hi));
            if let Some(bn) = &lw.batchnorm {
                assert!(bn.std.iter().all(|&s| s > 0.0));
            }
        }
    }

    #[test]
    fn roundtrip_bytes() {
        let spec = canonical_network();
        let w = gen_random_weights(&spec, 5);
        let back = WeightContainer::from_bytes(&w.to_bytes(), &spec).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_bytes(), w.to_bytes());
    }

    #[test]
    fn truncated_blob_names_last_tensor() {
        let spec = canonical_network();
        let mut bytes = gen_random_weights(&spec, 5).to_bytes();
        bytes.pop();
        match WeightContainer::from_bytes(&bytes, &spec) {
            Err(NetError::Tensor { tensor, .. }) => assert_eq!(tensor, "conv4.bn.std"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_manifest_is_rejected() {
        let spec = canonical_network();
        let mut w = gen_random_weights(&spec, 5);
        w.layers.pop();
        let bytes = w.to_bytes();
        assert!(matches!(
            WeightContainer::from_bytes(&bytes, &spec),
            Err(NetError::Container(_))
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let spec = canonical_network();
        let mut bytes = gen_random_weights(&spec, 5).to_bytes();
        bytes[0] = b'X';
        assert!(WeightContainer::from_bytes(&bytes, &spec).is_err());
    }

    #[test]
    fn forward_shapes_and_trace() {
        let spec = canonical_network();
        let net = QuantizedNetwork::new(&spec, &gen_random_weights(&spec, 1)).unwrap();
        let (roi, trace) = net.forward_traced(&random_image(2, 238)).unwrap();
        assert_eq!(roi.dims(), &[128, 29, 29]);
        assert_eq!(roi.bits(), 8);
        assert_eq!(trace, [238, 238, 119, 119, 59, 59, 29, 29, 29, 29]);
        let (ex, trace) = net.forward_traced(&random_image(3, 110)).unwrap();
        assert_eq!(ex.dims(), &[128, 13, 13]);
        assert_eq!(trace, [110, 110, 55, 55, 27, 27, 13, 13, 13, 13]);
    }

    #[test]
    fn forward_is_deterministic_and_branch_shared() {
        let spec = canonical_network();
        let w = gen_random_weights(&spec, 9);
        let img = random_image(4, 110);
        let a = forward(&spec, &w, &img).unwrap();
        let net = QuantizedNetwork::new(&spec, &w).unwrap();
        let b = net.forward(&img).unwrap();
        assert_eq!(a, b);
        // output is not degenerate
        assert!(a.data().iter().any(|&v| v != a.data()[0]));
    }

    #[test]
    fn zero_image_propagates_to_constant() {
        let spec = canonical_network();
        let mut w = gen_random_weights(&spec, 9);
        for lw in &mut w.layers {
            if let Some(bn) = &mut lw.batchnorm {
                bn.mean.iter_mut().for_each(|m| *m = 0.0);
                bn.beta.iter_mut().for_each(|b| *b = 0.0);
            }
        }
        let img = QTensor::zeros(vec![3, 110, 110], INPUT_BITS, INPUT_SCALE).unwrap();
        let out = forward(&spec, &w, &img).unwrap();
        assert!(out.data().iter().all(|&v| v == out.data()[0]));
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let spec = canonical_network();
        let net = QuantizedNetwork::new(&spec, &gen_random_weights(&spec, 1)).unwrap();
        let img = QTensor::zeros(vec![1, 110, 110], 8, INPUT_SCALE).unwrap();
        assert!(net.forward(&img).is_err());
        let img = QTensor::zeros(vec![3, 110, 110], 8, 1.0).unwrap();
        assert!(net.forward(&img).is_err());
        let img = QTensor::zeros(vec![3, 6, 6], 8, INPUT_SCALE).unwrap();
        assert!(net.forward(&img).is_err());
    }
}

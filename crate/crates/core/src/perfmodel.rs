//! Analytical cost model of a layer-pipelined dataflow accelerator.
//!
//! Each convolution is a matrix-vector unit folded in time: `PE` output
//! channels and `SIMD` terms of the `3x3xC` input window are processed per
//! cycle. A layer therefore needs
//! `out_h * out_w * (9 * in_ch / SIMD) * (out_ch / PE)` cycles per frame.
//! A single frame in flight costs the sum over layers; a saturated pipeline
//! is limited by the slowest layer.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::siamnet::{LayerSpec, NetworkSpec};

pub const DEFAULT_CLOCK_HZ: f64 = 1e8;

const CALIBRATION_CSV: &str = include_str!("../data/reference_calibration.csv");
const REFERENCE_FOLDING_CSV: &str = include_str!("../data/reference_folding.csv");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerfError {
    #[error("folding error in layer `{layer}`: {reason}")]
    Folding { layer: String, reason: String },
    #[error("energy fit error: {0}")]
    Fit(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("fixture parse error at line {line}: {reason}")]
    Fixture { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, PerfError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fold {
    pub pe: usize,
    pub simd: usize,
}

impl Fold {
    pub const fn new(pe: usize, simd: usize) -> Self {
        Self { pe, simd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldingConfig {
    pub name: String,
    pub folds: Vec<Fold>,
    pub clock_hz: f64,
}

impl FoldingConfig {
    pub fn new(name: impl Into<String>, folds: Vec<Fold>, clock_hz: f64) -> Self {
        Self { name: name.into(), folds, clock_hz }
    }

    /// `PE = out_ch`, `SIMD = 9 * in_ch` for every layer.
    pub fn fully_parallel(spec: &NetworkSpec, clock_hz: f64) -> Self {
        let folds = spec.layers.iter().map(|l| Fold::new(l.out_channels, window(l))).collect();
        Self::new("fully-parallel", folds, clock_hz)
    }

    /// `pe:simd` pairs joined by `/`.
    pub fn label(&self) -> String {
        self.folds.iter().map(|f| format!("{}:{}", f.pe, f.simd)).collect::<Vec<_>>().join("/")
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.folds.len() != spec.layers.len() {
            return Err(PerfError::Parameter(format!(
                "{} folds for {} layers",
                self.folds.len(),
                spec.layers.len()
            )));
        }
        if !(self.clock_hz > 0.0) {
            return Err(PerfError::Parameter(format!("clock must be positive, got {}", self.clock_hz)));
        }
        for (l, f) in spec.layers.iter().zip(&self.folds) {
            check_fold(l, *f)?;
        }
        Ok(())
    }
}

fn window(layer: &LayerSpec) -> usize {
    layer.kernel.0 * layer.kernel.1 * layer.in_channels
}

fn check_fold(layer: &LayerSpec, fold: Fold) -> Result<()> {
    let err = |reason: String| Err(PerfError::Folding { layer: layer.name.clone(), reason });
    if fold.pe == 0 || fold.simd == 0 {
        return err("PE and SIMD must be >= 1".into());
    }
    if !layer.out_channels.is_multiple_of(fold.pe) {
        return err(format!("PE {} does not divide {} output channels", fold.pe, layer.out_channels));
    }
    if !window(layer).is_multiple_of(fold.simd) {
        return err(format!("SIMD {} does not divide the {}-wide input window", fold.simd, window(layer)));
    }
    Ok(())
}

pub fn layer_cycles(layer: &LayerSpec, fold: Fold, out_h: usize, out_w: usize) -> Result<u64> {
    check_fold(layer, fold)?;
    Ok((out_h * out_w) as u64 * (window(layer) / fold.simd) as u64 * (layer.out_channels / fold.pe) as u64)
}

/// Arithmetic cost proxy of one layer: `PE * SIMD` lanes, weighted by the
/// weight bit-width relative to 4 bits.
pub fn layer_units(layer: &LayerSpec, fold: Fold) -> u64 {
    (fold.pe * fold.simd) as u64 * layer.weight_bits as u64 / 4
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfEstimate {
    pub layer_cycles: Vec<u64>,
    pub latency_cycles: u64,
    pub bottleneck_cycles: u64,
    pub bottleneck_layer: usize,
    pub latency_fps: f64,
    pub throughput_fps: f64,
    pub resource_units: u64,
    pub energy_watts: Option<f64>,
}

/// Per-frame cost of the search-region branch under `fold`.
pub fn estimate(spec: &NetworkSpec, fold: &FoldingConfig) -> Result<PerfEstimate> {
    fold.validate(spec)?;
    let sizes = spec
        .conv_output_sizes(spec.roi_input.1)
        .map_err(|e| PerfError::Parameter(e.to_string()))?;
    let layer_cycles = spec
        .layers
        .iter()
        .zip(&fold.folds)
        .zip(&sizes)
        .map(|((l, f), &(h, w))| layer_cycles(l, *f, h, w))
        .collect::<Result<Vec<_>>>()?;
    let latency_cycles: u64 = layer_cycles.iter().sum();
    let (bottleneck_layer, &bottleneck_cycles) = layer_cycles
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .unwrap_or((0, &0));
    let resource_units = spec.layers.iter().zip(&fold.folds).map(|(l, f)| layer_units(l, *f)).sum();
    let fps = |c: u64| if c == 0 { f64::INFINITY } else { fold.clock_hz / c as f64 };
    Ok(PerfEstimate {
        latency_fps: fps(latency_cycles),
        throughput_fps: fps(bottleneck_cycles),
        layer_cycles,
        latency_cycles,
        bottleneck_cycles,
        bottleneck_layer,
        resource_units,
        energy_watts: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub name: String,
    pub fps: f64,
    pub lut_pct: f64,
    pub ff_pct: f64,
    pub bram_pct: f64,
    pub lutram_pct: f64,
    pub watts: f64,
}

/// Measured FPS, utilization and power of the reference configurations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationTable {
    pub rows: Vec<CalibrationRow>,
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .skip(1)
}

impl CalibrationTable {
    pub fn parse(text: &str) -> Result<Self> {
        let rows = data_lines(text)
            .map(|(line, l)| {
                let cols: Vec<&str> = l.split(',').map(str::trim).collect();
                if cols.len() != 7 {
                    return Err(PerfError::Fixture { line, reason: format!("expected 7 columns, got {}", cols.len()) });
                }
                let num = |i: usize| {
                    cols[i].parse::<f64>().map_err(|_| PerfError::Fixture {
                        line,
                        reason: format!("`{}` is not a number", cols[i]),
                    })
                };
                Ok(CalibrationRow {
                    name: cols[0].to_string(),
                    fps: num(1)?,
                    lut_pct: num(2)?,
                    ff_pct: num(3)?,
                    bram_pct: num(4)?,
                    lutram_pct: num(5)?,
                    watts: num(6)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    /// The shipped fixture.
    pub fn reference() -> Self {
        Self::parse(CALIBRATION_CSV).expect("bundled calibration fixture parses")
    }
}

pub fn parse_folding_configs(text: &str, clock_hz: f64) -> Result<Vec<FoldingConfig>> {
    data_lines(text)
        .map(|(line, l)| {
            let mut cols = l.split(',').map(str::trim);
            let name = cols.next().unwrap_or_default().to_string();
            let folds = cols
                .map(|c| {
                    let (pe, simd) = c
                        .split_once(':')
                        .ok_or_else(|| PerfError::Fixture { line, reason: format!("`{c}` is not PE:SIMD") })?;
                    let parse = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| PerfError::Fixture { line, reason: format!("`{s}` is not an integer") })
                    };
                    Ok(Fold::new(parse(pe)?, parse(simd)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FoldingConfig::new(name, folds, clock_hz))
        })
        .collect()
}

/// The six reference folding configurations V1..V6.
pub fn reference_configs(clock_hz: f64) -> Vec<FoldingConfig> {
    parse_folding_configs(REFERENCE_FOLDING_CSV, clock_hz).expect("bundled folding fixture parses")
}

/// Affine power model `watts = base + alpha * resource_units`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyFit {
    pub p_base: f64,
    pub alpha: f64,
    /// `measured - predicted`, watts, in input order.
    pub residuals: Vec<f64>,
}

impl EnergyFit {
    pub fn predict(&self, units: u64) -> f64 {
        self.p_base + self.alpha * units as f64
    }

    pub fn annotate(&self, est: &mut PerfEstimate) {
        est.energy_watts = Some(self.predict(est.resource_units));
    }
}

/// Ordinary least squares of measured watts against modeled resource units.
pub fn fit_energy(calib: &CalibrationTable, estimates: &[PerfEstimate]) -> Result<EnergyFit> {
    if calib.rows.len() != estimates.len() {
        return Err(PerfError::Fit(format!(
            "{} calibration rows for {} estimates",
            calib.rows.len(),
            estimates.len()
        )));
    }
    if estimates.len() < 2 {
        return Err(PerfError::Fit("need at least two points".into()));
    }
    let n = estimates.len() as f64;
    let xs: Vec<f64> = estimates.iter().map(|e| e.resource_units as f64).collect();
    let ys: Vec<f64> = calib.rows.iter().map(|r| r.watts).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(PerfError::Fit("all resource units are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    let p_base = my - alpha * mx;
    let residuals = xs.iter().zip(&ys).map(|(x, y)| y - (p_base + alpha * x)).collect();
    Ok(EnergyFit { p_base, alpha, residuals })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(Ordering::Equal));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation, ties ranked by their average position.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(PerfError::Parameter("spearman needs two equal-length series of >= 2 values".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(PerfError::Parameter("constant series has no rank correlation".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Per-layer folding options the explorer may pick from.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSpace {
    pub per_layer: Vec<Vec<Fold>>,
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|&d| n.is_multiple_of(d)).collect()
}

impl CandidateSpace {
    /// Every `(pe, simd)` from the two sets that folds each layer exactly.
    pub fn from_sets(spec: &NetworkSpec, pes: &[usize], simds: &[usize]) -> Result<Self> {
        let per_layer = spec
            .layers
            .iter()
            .map(|l| {
                let mut opts: Vec<Fold> = pes
                    .iter()
                    .flat_map(|&pe| simds.iter().map(move |&simd| Fold::new(pe, simd)))
                    .filter(|&f| check_fold(l, f).is_ok())
                    .collect();
                opts.sort();
                opts.dedup();
                if opts.is_empty() {
                    Err(PerfError::Folding {
                        layer: l.name.clone(),
                        reason: "no candidate PE/SIMD pair divides this layer".into(),
                    })
                } else {
                    Ok(opts)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_layer })
    }

    /// All exact foldings of every layer.
    pub fn all_divisors(spec: &NetworkSpec) -> Self {
        let per_layer = spec
            .layers
            .iter()
            .map(|l| {
                divisors(l.out_channels)
                    .into_iter()
                    .flat_map(|pe| divisors(window(l)).into_iter().map(move |simd| Fold::new(pe, simd)))
                    .collect()
            })
            .collect();
        Self { per_layer }
    }

    /// Per layer, the PE values crossed with the SIMD values used by `configs`.
    pub fn from_configs(spec: &NetworkSpec, configs: &[FoldingConfig]) -> Result<Self> {
        let per_layer = (0..spec.layers.len())
            .map(|i| {
                let pes: Vec<usize> = configs.iter().filter_map(|c| c.folds.get(i).map(|f| f.pe)).collect();
                let simds: Vec<usize> = configs.iter().filter_map(|c| c.folds.get(i).map(|f| f.simd)).collect();
                let mut opts: Vec<Fold> = pes
                    .iter()
                    .flat_map(|&pe| simds.iter().map(move |&simd| Fold::new(pe, simd)))
                    .filter(|&f| check_fold(&spec.layers[i], f).is_ok())
                    .collect();
                opts.sort();
                opts.dedup();
                if opts.is_empty() {
                    return Err(PerfError::Folding {
                        layer: spec.layers[i].name.clone(),
                        reason: "no valid candidate".into(),
                    });
                }
                Ok(opts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_layer })
    }

    /// Number of complete configurations in the space.
    pub fn size(&self) -> u128 {
        self.per_layer.iter().map(|o| o.len() as u128).product()
    }

    /// Every configuration in the space, lexicographic in the option order.
    pub fn enumerate(&self, clock_hz: f64) -> impl Iterator<Item = FoldingConfig> + '_ {
        let total = if self.per_layer.iter().any(|o| o.is_empty()) { 0 } else { self.size() };
        (0..total).map(move |mut k| {
            let mut folds = vec![Fold::new(1, 1); self.per_layer.len()];
            for (i, opts) in self.per_layer.iter().enumerate().rev() {
                let n = opts.len() as u128;
                folds[i] = opts[(k % n) as usize];
                k /= n;
            }
            FoldingConfig::new("", folds, clock_hz)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontPoint {
    pub config: FoldingConfig,
    pub estimate: PerfEstimate,
}

/// `a` dominates `b`: no slower, no costlier, strictly better on one axis.
pub fn dominates(a: &PerfEstimate, b: &PerfEstimate) -> bool {
    a.latency_cycles <= b.latency_cycles
        && a.resource_units <= b.resource_units
        && (a.latency_cycles < b.latency_cycles || a.resource_units < b.resource_units)
}

/// Non-dominated subset of explicit points, ordered by resource units.
/// Among exact ties the first point in input order is kept.
pub fn pareto_front(points: Vec<FrontPoint>) -> Vec<FrontPoint> {
    let mut indexed: Vec<(usize, FrontPoint)> = points.into_iter().enumerate().collect();
    indexed.sort_by(|(ia, a), (ib, b)| {
        a.estimate
            .resource_units
            .cmp(&b.estimate.resource_units)
            .then(a.estimate.latency_cycles.cmp(&b.estimate.latency_cycles))
            .then(ia.cmp(ib))
    });
    let mut best = u64::MAX;
    let mut front = Vec::new();
    for (_, p) in indexed {
        if p.estimate.latency_cycles < best {
            best = p.estimate.latency_cycles;
            front.push(p);
        }
    }
    front
}

/// Pareto-optimal configurations (max latency FPS, min resource units)
/// within `budget` units.
///
/// Both objectives are sums over layers, so dominated partial assignments
/// can be discarded layer by layer without losing any front member. Exact
/// ties keep the lexicographically first assignment.
pub fn explore(spec: &NetworkSpec, budget: u64, space: &CandidateSpace, clock_hz: f64) -> Result<Vec<FrontPoint>> {
    if space.per_layer.len() != spec.layers.len() {
        return Err(PerfError::Parameter(format!(
            "candidate space covers {} layers, network has {}",
            space.per_layer.len(),
            spec.layers.len()
        )));
    }
    if !(clock_hz > 0.0) {
        return Err(PerfError::Parameter(format!("clock must be positive, got {clock_hz}")));
    }
    let sizes = spec
        .conv_output_sizes(spec.roi_input.1)
        .map_err(|e| PerfError::Parameter(e.to_string()))?;

    // (cycles, units, option index per layer)
    let mut partial: Vec<(u64, u64, Vec<usize>)> = vec![(0, 0, Vec::new())];
    for (i, (layer, opts)) in spec.layers.iter().zip(&space.per_layer).enumerate() {
        if opts.is_empty() {
            return Err(PerfError::Folding { layer: layer.name.clone(), reason: "empty candidate set".into() });
        }
        let costs = opts
            .iter()
            .map(|&f| Ok((layer_cycles(layer, f, sizes[i].0, sizes[i].1)?, layer_units(layer, f))))
            .collect::<Result<Vec<_>>>()?;
        let mut next = Vec::with_capacity(partial.len() * opts.len());
        for (c, u, choice) in &partial {
            for (k, &(lc, lu)) in costs.iter().enumerate() {
                let units = u + lu;
                if units > budget {
                    continue;
                }
                let mut ch = choice.clone();
                ch.push(k);
                next.push((c + lc, units, ch));
            }
        }
        next.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)).then_with(|| a.2.cmp(&b.2)));
        let mut best = u64::MAX;
        next.retain(|(c, _, _)| {
            if *c < best {
                best = *c;
                true
            } else {
                false
            }
        });
        partial = next;
        if partial.is_empty() {
            return Ok(Vec::new());
        }
    }
    partial
        .into_iter()
        .map(|(_, _, choice)| {
            let folds = choice.iter().enumerate().map(|(i, &k)| space.per_layer[i][k]).collect();
            let config = FoldingConfig::new("", folds, clock_hz);
            let estimate = estimate(spec, &config)?;
            Ok(FrontPoint { config, estimate })
        })
        .collect()
}

/// CSV of named estimates: per-layer cycles, both FPS figures, units, watts.
pub fn estimates_csv(rows: &[(String, PerfEstimate)], layers: usize) -> String {
    let mut out = String::from("name");
    for i in 1..=layers {
        let _ = write!(out, ",cycles_l{i}");
    }
    out += ",latency_cycles,latency_fps,throughput_fps,units,watts\n";
    for (name, e) in rows {
        out += name;
        for c in &e.layer_cycles {
            let _ = write!(out, ",{c}");
        }
        let watts = e.energy_watts.map(|w| format!("{w:.4}")).unwrap_or_default();
        let _ = writeln!(
            out,
            ",{},{:.4},{:.4},{},{}",
            e.latency_cycles, e.latency_fps, e.throughput_fps, e.resource_units, watts
        );
    }
    out
}

//! Dense feed-forward classifiers and their on-disk formats.
//!
//! # Model file (`ZOGMLP1`)
//!
//! ```text
//! magic    8 bytes   "ZOGMLP1\n"
//! L        u32 LE    number of layers (>= 1)
//! dims     u32 LE    L + 1 layer widths, input first, classes last
//! layer k  f64 LE    weights, dims[k+1] rows x dims[k] columns, row-major,
//!                    then dims[k+1] biases
//! ```
//!
//! No padding and no trailing bytes. Hidden layers use ReLU; the last layer
//! emits raw logits.
//!
//! # Probe file
//!
//! One probe per line: comma-separated input components followed by the
//! integer label.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::oracle::{argmax, Classifier};
use crate::rng::SeededRng;

pub const MODEL_MAGIC: &[u8; 8] = b"ZOGMLP1\n";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model header: {0}")]
    MalformedHeader(String),
    #[error("model payload has {got} bytes, header dimensions require {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in layer {layer} at offset {index}")]
    NonFiniteWeight { layer: usize, index: usize },
    #[error("invalid layer dimensions: {0}")]
    BadDims(String),
    #[error("malformed probe line {line}: {reason}")]
    MalformedProbe { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One dense layer: `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs` rows of `inputs` columns.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// A ReLU multilayer perceptron emitting logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

impl MlpModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::BadDims("model needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.inputs == 0 || layer.outputs == 0 {
                return Err(ModelError::BadDims(format!("layer {k} has a zero width")));
            }
            if layer.weights.len() != layer.inputs * layer.outputs
                || layer.bias.len() != layer.outputs
            {
                return Err(ModelError::BadDims(format!(
                    "layer {k} buffers do not match {}x{}",
                    layer.outputs, layer.inputs
                )));
            }
            if k > 0 && layers[k - 1].outputs != layer.inputs {
                return Err(ModelError::BadDims(format!(
                    "layer {k} takes {} inputs but layer {} emits {}",
                    layer.inputs,
                    k - 1,
                    layers[k - 1].outputs
                )));
            }
            let params = layer.weights.iter().chain(&layer.bias);
            if let Some(index) = params.into_iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteWeight { layer: k, index });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Layer widths, input first and classes last.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.dims();
        let mut out = Vec::with_capacity(payload_len(&dims).unwrap_or(0) + 12 + 4 * dims.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for d in &dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let header_err = |m: &str| ModelError::MalformedHeader(m.to_string());
        let rest = bytes
            .strip_prefix(MODEL_MAGIC.as_slice())
            .ok_or_else(|| header_err("missing ZOGMLP1 magic"))?;
        let mut words = rest.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()));
        let layer_count = words.next().ok_or_else(|| header_err("missing layer count"))? as usize;
        if layer_count == 0 {
            return Err(header_err("layer count is zero"));
        }
        let header_len = 4 * (layer_count + 2);
        if rest.len() < header_len {
            return Err(header_err("truncated dimension list"));
        }
        let dims: Vec<usize> = words.take(layer_count + 1).map(|d| d as usize).collect();
        if dims.contains(&0) {
            return Err(header_err("zero layer width"));
        }
        let payload = &rest[header_len..];
        let expected = payload_len(&dims).ok_or_else(|| header_err("dimensions overflow"))?;
        if payload.len() != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                got: payload.len(),
            });
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weights: values.by_ref().take(w[0] * w[1]).collect(),
                bias: values.by_ref().take(w[1]).collect(),
            })
            .collect();
        Self::new(layers)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|source| io_err(path, source))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()).map_err(|source| io_err(path, source))
    }
}

fn payload_len(dims: &[usize]) -> Option<usize> {
    dims.windows(2).try_fold(0usize, |acc, w| {
        let params = w[0].checked_mul(w[1])?.checked_add(w[1])?;
        acc.checked_add(params.checked_mul(8)?)
    })
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Classifier for MlpModel {
    fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if k < last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        h
    }
}

/// A labeled input point.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub x: Vec<f64>,
    pub label: usize,
}

pub fn write_probes(probes: &[Probe]) -> String {
    let mut out = String::new();
    for p in probes {
        for v in &p.x {
            write!(out, "{v:?},").unwrap();
        }
        writeln!(out, "{}", p.label).unwrap();
    }
    out
}

pub fn parse_probes(text: &str) -> Result<Vec<Probe>, ModelError> {
    let mut probes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| ModelError::MalformedProbe { line: i + 1, reason };
        let (values, label) = line
            .rsplit_once(',')
            .ok_or_else(|| bad("expected at least one value and a label".into()))?;
        let label = label
            .trim()
            .parse::<usize>()
            .map_err(|e| bad(format!("label: {e}")))?;
        let x = values
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        if let Some(first) = probes.first().map(|p: &Probe| p.x.len()) {
            if first != x.len() {
                return Err(bad(format!("{} values, previous lines have {first}", x.len())));
            }
        }
        probes.push(Probe { x, label });
    }
    Ok(probes)
}

pub fn load_probes(path: &Path) -> Result<Vec<Probe>, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    parse_probes(&text)
}

pub fn save_probes(probes: &[Probe], path: &Path) -> Result<(), ModelError> {
    fs::write(path, write_probes(probes)).map_err(|source| io_err(path, source))
}

/// Latent factors behind generated probes.
pub const PROBE_LATENT_FACTORS: usize = 4;
/// Scale of the latent component of a generated probe around 0.5.
pub const PROBE_LATENT_SCALE: f64 = 0.08;
/// Half-width of the independent per-component noise of a generated probe.
pub const PROBE_NOISE: f64 = 0.02;

/// Generates a random classifier and a probe set labeled by it.
///
/// `dims` lists the input width followed by any hidden widths; the output
/// layer of `num_classes` logits is appended. Weights are Gaussian with
/// variance `2 / fan_in` (hidden) or `1 / fan_in` (output). The first layer is
/// centered on the input midpoint (`b = -W·0.5`); other biases are zero.
///
/// Probes imitate natural inputs, whose variation concentrates on a few
/// directions: each is `0.5 + s·Bz/√k + u`, with a fixed `d x k` basis `B`
/// and latent `z` uniform on `[-1, 1]`, noise `u` uniform on
/// `[-PROBE_NOISE, PROBE_NOISE]`, clamped to `[0, 1]`.
pub fn gen_model(
    dims: &[usize],
    num_classes: usize,
    num_probes: usize,
    seed: u64,
) -> Result<(MlpModel, Vec<Probe>), ModelError> {
    if dims.is_empty() || dims.contains(&0) || num_classes < 2 {
        return Err(ModelError::BadDims(format!(
            "need nonzero widths and at least 2 classes, got dims {dims:?} and {num_classes} classes"
        )));
    }
    let widths: Vec<usize> = dims.iter().copied().chain([num_classes]).collect();
    let last = widths.len() - 2;
    let mut rng = SeededRng::new(seed).split(&[0]);
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let gain = if k < last { 2.0 } else { 1.0 };
            let normal = Normal::new(0.0, (gain / w[0] as f64).sqrt()).unwrap();
            let weights: Vec<f64> = (0..w[0] * w[1]).map(|_| normal.sample(&mut rng)).collect();
            let bias = if k == 0 {
                weights.chunks_exact(w[0]).map(|row| -0.5 * row.iter().sum::<f64>()).collect()
            } else {
                vec![0.0; w[1]]
            };
            DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weights,
                bias,
            }
        })
        .collect();
    let model = MlpModel::new(layers)?;

    let d = dims[0];
    let k = PROBE_LATENT_FACTORS.min(d);
    let mut rng = SeededRng::new(seed).split(&[1]);
    let basis: Vec<f64> = (0..d * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let scale = PROBE_LATENT_SCALE / (k as f64).sqrt();
    let probes = (0..num_probes)
        .map(|_| {
            let z: Vec<f64> = (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let x: Vec<f64> = basis
                .chunks_exact(k)
                .map(|row| {
                    let latent: f64 = row.iter().zip(&z).map(|(b, z)| b * z).sum();
                    let noise = rng.uniform(-PROBE_NOISE, PROBE_NOISE);
                    (0.5 + scale * latent + noise).clamp(0.0, 1.0)
                })
                .collect();
            let label = argmax(&model.forward(&x));
            Probe { x, label }
        })
        .collect();
    Ok((model, probes))
}

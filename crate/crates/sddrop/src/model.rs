//! Split network: backbone features, dropout sampling point, classifier head.
//!
//! The network is a configurable MLP `h(f(x))`. `dropout_position` selects
//! the backbone layer after which feature sampling happens; backbone layers
//! past that point are folded into the head path, so the same parameters
//! serve every sampling position.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Backbone layer widths.
    pub hidden_dims: Vec<usize>,
    /// Zero or more hidden head widths, then the class count.
    pub head_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Backbone layer count after which sampling occurs; `None` means after
    /// the last backbone layer. `0` samples the raw input features.
    #[serde(default)]
    pub dropout_position: Option<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        // Sized so the dropout-pair objective at its default weight sits in
        // its working regime on the default synthetic task: features narrow
        // enough to train fast, a hidden head layer so the two masked views
        // stay reconcilable as margins grow.
        ModelSpec {
            input_dim: 16,
            hidden_dims: vec![32],
            head_dims: vec![64, 4],
            activation: Activation::Relu,
            dropout_position: None,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument {
                what: "model spec",
                why: "input_dim must be positive".into(),
            });
        }
        if self.hidden_dims.contains(&0) || self.head_dims.contains(&0) {
            return Err(Error::InvalidArgument {
                what: "model spec",
                why: "layer widths must be positive".into(),
            });
        }
        if self.num_classes() < 2 {
            return Err(Error::InvalidArgument {
                what: "model spec",
                why: format!("need at least 2 classes, got {}", self.num_classes()),
            });
        }
        if let Some(pos) = self.dropout_position {
            if pos > self.hidden_dims.len() {
                return Err(Error::InvalidArgument {
                    what: "model spec",
                    why: format!(
                        "dropout_position {pos} out of range for {} backbone layers",
                        self.hidden_dims.len()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.head_dims.last().copied().unwrap_or(0)
    }

    pub fn dropout_position(&self) -> usize {
        self.dropout_position.unwrap_or(self.hidden_dims.len())
    }

    /// Feature width at the sampling point.
    pub fn feature_dim(&self) -> usize {
        let pos = self.dropout_position();
        if pos == 0 {
            self.input_dim
        } else {
            self.hidden_dims[pos - 1]
        }
    }

    /// All layer (fan_in, fan_out) pairs in forward order: backbone, head.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &d in self.hidden_dims.iter().chain(self.head_dims.iter()) {
            dims.push((prev, d));
            prev = d;
        }
        dims
    }

    fn layer_name(&self, index: usize) -> String {
        if index < self.hidden_dims.len() {
            format!("backbone.{index}")
        } else {
            format!("head.{}", index - self.hidden_dims.len())
        }
    }

    fn num_layers(&self) -> usize {
        self.hidden_dims.len() + self.head_dims.len()
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered parameter set for a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    pub entries: Vec<ParamEntry>,
}

impl Parameters {
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Flatten all parameter values in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for e in &self.entries {
            out.extend_from_slice(&e.values);
        }
        out
    }

    /// Fresh gradient-tracking leaf tensors for one forward/backward pass.
    pub fn leaves(&self) -> Result<GraphParams> {
        let mut tensors = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            tensors.push(Tensor::param(&e.shape, e.values.clone())?);
        }
        Ok(GraphParams { tensors })
    }
}

/// Leaf tensors for the current graph, aligned with `Parameters::entries`.
pub struct GraphParams {
    pub tensors: Vec<Tensor>,
}

impl GraphParams {
    fn layer(&self, index: usize) -> (&Tensor, &Tensor) {
        (&self.tensors[2 * index], &self.tensors[2 * index + 1])
    }
}

/// Bernoulli keep-mask over the feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    /// Entries in {0.0, 1.0}; 1 keeps the feature.
    pub keep: Vec<f64>,
    /// Drop probability.
    pub beta: f64,
    pub seed: u64,
}

impl DropoutMask {
    pub fn dim(&self) -> usize {
        self.keep.len()
    }

    pub fn kept_fraction(&self) -> f64 {
        self.keep.iter().sum::<f64>() / self.keep.len() as f64
    }
}

/// Glorot-style uniform init: weights in (-s, s) with s = sqrt(6/(fan_in+fan_out)),
/// biases zero. Bit-deterministic per seed.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<Parameters> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut entries = Vec::new();
    for (i, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
        let name = spec.layer_name(i);
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.uniform(-s, s)).collect();
        entries.push(ParamEntry {
            name: format!("{name}.weight"),
            shape: vec![fan_in, fan_out],
            values: w,
        });
        entries.push(ParamEntry {
            name: format!("{name}.bias"),
            shape: vec![fan_out],
            values: vec![0.0; fan_out],
        });
    }
    Ok(Parameters { entries })
}

/// Sample a keep-mask: each entry kept with probability 1 - beta.
pub fn sample_mask(dim: usize, beta: f64, seed: u64) -> Result<DropoutMask> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument {
            what: "dropout rate",
            why: format!("beta must be in [0, 1), got {beta}"),
        });
    }
    let mut rng = Rng::new(seed);
    let keep: Vec<f64> = (0..dim)
        .map(|_| if rng.next_f64() < beta { 0.0 } else { 1.0 })
        .collect();
    Ok(DropoutMask { keep, beta, seed })
}

fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    x.matmul(w)?.add(b)
}

/// Backbone features at the sampling position for a `batch x input_dim` input.
pub fn forward_features(spec: &ModelSpec, params: &GraphParams, x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 || x.shape()[1] != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "forward_features",
            lhs: x.shape().to_vec(),
            rhs: vec![x.shape().first().copied().unwrap_or(0), spec.input_dim],
        });
    }
    let mut h = x.clone();
    for i in 0..spec.dropout_position() {
        let (w, b) = params.layer(i);
        h = linear(&h, w, b)?.relu()?;
    }
    Ok(h)
}

/// Head path from the sampling position to logits: any remaining backbone
/// layers (with activation), hidden head layers (with activation), then the
/// final linear layer.
pub fn head_forward(spec: &ModelSpec, params: &GraphParams, features: &Tensor) -> Result<Tensor> {
    let mut h = features.clone();
    let last = spec.num_layers() - 1;
    for i in spec.dropout_position()..spec.num_layers() {
        let (w, b) = params.layer(i);
        h = linear(&h, w, b)?;
        if i < last {
            h = h.relu()?;
        }
    }
    Ok(h)
}

/// Logits for dropout-sampled features: h((mask ⊙ features) / (1 - beta)).
pub fn masked_head_forward(
    spec: &ModelSpec,
    params: &GraphParams,
    features: &Tensor,
    mask: &DropoutMask,
) -> Result<Tensor> {
    let dim = *features.shape().last().unwrap_or(&0);
    if mask.dim() != dim {
        return Err(Error::ShapeMismatch {
            op: "masked_head_forward",
            lhs: features.shape().to_vec(),
            rhs: vec![mask.dim()],
        });
    }
    let mask_t = Tensor::new(&[mask.dim()], mask.keep.clone())?;
    let mut sampled = features.mul(&mask_t)?;
    // Inverted scaling keeps the sampled features unbiased; beta = 0 is the
    // exact identity.
    if mask.beta != 0.0 {
        sampled = sampled.mul_scalar(1.0 / (1.0 - mask.beta))?;
    }
    head_forward(spec, params, &sampled)
}

/// Plain full forward: logits = head(features(x)).
pub fn plain_forward(spec: &ModelSpec, params: &GraphParams, x: &Tensor) -> Result<Tensor> {
    let features = forward_features(spec, params, x)?;
    head_forward(spec, params, &features)
}

/// Conventional dropout baseline. Training applies one sampled mask at the
/// sampling position with inverted scaling; evaluation is the plain forward.
pub fn standard_dropout_forward(
    spec: &ModelSpec,
    params: &GraphParams,
    x: &Tensor,
    beta: f64,
    seed: u64,
    training: bool,
) -> Result<Tensor> {
    if !training {
        return plain_forward(spec, params, x);
    }
    let mask = sample_mask(spec.feature_dim(), beta, seed)?;
    let features = forward_features(spec, params, x)?;
    masked_head_forward(spec, params, &features, &mask)
}

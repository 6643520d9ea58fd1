//! Loss functions: temperature posteriors, cross-entropy, label smoothing,
//! KL divergence with explicit gradient-flow control, and the combined
//! distillation objective.
//!
//! The flow mode decides which side of each directed KL term is detached:
//! `Forward` freezes the reference distribution (the first argument of
//! `KL(p || q)`), `Reverse` freezes the approximating side, `Both` freezes
//! nothing. The loss value is identical across modes; only gradients differ.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Floor applied to probabilities before `log` inside loss compositions.
/// The raw log primitive stays strict; this floor only guards against
/// numerically-zero posterior entries.
pub const LOG_FLOOR: f64 = 1e-12;

/// Row-normalization tolerance accepted by [`kl_divergence`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    Forward,
    Reverse,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillLossSpec {
    pub temperature: f64,
    pub lambda_sdd: f64,
    pub lambda_kd: f64,
    pub flow_mode: FlowMode,
    pub label_smoothing_alpha: f64,
}

impl Default for DistillLossSpec {
    fn default() -> Self {
        DistillLossSpec {
            temperature: 1.0,
            lambda_sdd: 1.0,
            lambda_kd: 0.0,
            flow_mode: FlowMode::Both,
            label_smoothing_alpha: 0.0,
        }
    }
}

impl DistillLossSpec {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::InvalidArgument {
                what: "temperature",
                why: format!("must be positive, got {}", self.temperature),
            });
        }
        if self.lambda_sdd < 0.0 || self.lambda_kd < 0.0 {
            return Err(Error::InvalidArgument {
                what: "loss weight",
                why: "lambda_sdd and lambda_kd must be non-negative".into(),
            });
        }
        if !(0.0..1.0).contains(&self.label_smoothing_alpha) {
            return Err(Error::InvalidArgument {
                what: "label smoothing alpha",
                why: format!("must be in [0, 1), got {}", self.label_smoothing_alpha),
            });
        }
        Ok(())
    }
}

/// Temperature-scaled class posterior, rows summing to one.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub probs: Tensor,
    pub temperature: f64,
}

impl Posterior {
    /// Wrap an existing probability tensor, checking row normalization and
    /// that every entry is a probability.
    pub fn from_probs(probs: Tensor, temperature: f64) -> Result<Posterior> {
        check_rows_normalized(&probs, 1e-9)?;
        if let Some(bad) = probs.values().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument {
                what: "posterior",
                why: format!("entry {bad} outside [0, 1]"),
            });
        }
        Ok(Posterior { probs, temperature })
    }

    pub fn batch_size(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.probs.shape().last().unwrap()
    }
}

fn check_rows_normalized(probs: &Tensor, tolerance: f64) -> Result<()> {
    let shape = probs.shape();
    if shape.len() != 2 {
        return Err(Error::InvalidArgument {
            what: "posterior",
            why: format!("expected batch x classes, got shape {shape:?}"),
        });
    }
    let n = shape[1];
    for (row, chunk) in probs.values().chunks(n).enumerate() {
        let sum: f64 = chunk.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::NotNormalized {
                row,
                sum,
                tolerance,
            });
        }
    }
    Ok(())
}

/// Softmax of `logits / T` over the class axis.
pub fn softmax_with_temperature(logits: &Tensor, temperature: f64) -> Result<Posterior> {
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument {
            what: "temperature",
            why: format!("must be positive, got {temperature}"),
        });
    }
    let scaled = logits.mul_scalar(1.0 / temperature)?;
    let probs = scaled.softmax_last()?;
    Ok(Posterior { probs, temperature })
}

fn one_hot(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; labels.len() * num_classes];
    for (row, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        out[row * num_classes + label] = 1.0;
    }
    Ok(out)
}

fn target_weighted_nll(logits: &Tensor, target: Vec<f64>) -> Result<Tensor> {
    let batch = logits.shape()[0] as f64;
    let probs = softmax_with_temperature(logits, 1.0)?.probs;
    let logp = probs.clamp_min(LOG_FLOOR)?.log()?;
    let target_t = Tensor::new(logits.shape(), target)?;
    target_t
        .mul(&logp)?
        .sum_axis(1)?
        .sum_axis(0)?
        .mul_scalar(-1.0 / batch)
}

/// Mean cross-entropy at T = 1; log is floored at [`LOG_FLOOR`].
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    label_smoothing_loss(logits, labels, 0.0)
}

/// Cross-entropy against the smoothed target (1-alpha) * onehot + alpha / N.
pub fn label_smoothing_loss(logits: &Tensor, labels: &[usize], alpha: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument {
            what: "label smoothing alpha",
            why: format!("must be in [0, 1), got {alpha}"),
        });
    }
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape.to_vec(),
            rhs: vec![labels.len(), shape.get(1).copied().unwrap_or(0)],
        });
    }
    let num_classes = shape[1];
    let mut target = one_hot(labels, num_classes)?;
    if alpha != 0.0 {
        let uniform = alpha / num_classes as f64;
        for v in &mut target {
            *v = (1.0 - alpha) * *v + uniform;
        }
    }
    target_weighted_nll(logits, target)
}

/// Mean over the batch of `sum_i p_i (log p_i - log q_i)` with the detach
/// pattern selected by `mode` applied to this ordered pair.
pub fn kl_divergence(p: &Posterior, q: &Posterior, mode: FlowMode) -> Result<Tensor> {
    if p.probs.shape() != q.probs.shape() {
        return Err(Error::ShapeMismatch {
            op: "kl_divergence",
            lhs: p.probs.shape().to_vec(),
            rhs: q.probs.shape().to_vec(),
        });
    }
    check_rows_normalized(&p.probs, NORMALIZATION_TOLERANCE)?;
    check_rows_normalized(&q.probs, NORMALIZATION_TOLERANCE)?;

    let (p_used, q_used) = match mode {
        FlowMode::Forward => (p.probs.detach(), q.probs.clone()),
        FlowMode::Reverse => (p.probs.clone(), q.probs.detach()),
        FlowMode::Both => (p.probs.clone(), q.probs.clone()),
    };
    let batch = p.batch_size() as f64;
    let logp = p_used.clamp_min(LOG_FLOOR)?.log()?;
    let logq = q_used.clamp_min(LOG_FLOOR)?.log()?;
    p_used
        .mul(&logp.sub(&logq)?)?
        .sum_axis(1)?
        .sum_axis(0)?
        .mul_scalar(1.0 / batch)
}

/// Symmetric distillation loss between two dropout-sampled logit tensors:
/// `KL(P_u || P_v) + KL(P_v || P_u)` at temperature `t`.
pub fn sdd_loss(
    logits_u: &Tensor,
    logits_v: &Tensor,
    temperature: f64,
    mode: FlowMode,
) -> Result<Tensor> {
    if logits_u.shape() != logits_v.shape() {
        return Err(Error::ShapeMismatch {
            op: "sdd_loss",
            lhs: logits_u.shape().to_vec(),
            rhs: logits_v.shape().to_vec(),
        });
    }
    let pu = softmax_with_temperature(logits_u, temperature)?;
    let pv = softmax_with_temperature(logits_v, temperature)?;
    kl_divergence(&pu, &pv, mode)?.add(&kl_divergence(&pv, &pu, mode)?)
}

/// ce + lambda_sdd * T^2 * sdd [+ lambda_kd * T^2 * kd_extra].
pub fn total_loss(
    ce: &Tensor,
    sdd: &Tensor,
    kd_extra: Option<&Tensor>,
    spec: &DistillLossSpec,
) -> Result<Tensor> {
    let t2 = spec.temperature * spec.temperature;
    let mut total = ce.add(&sdd.mul_scalar(spec.lambda_sdd * t2)?)?;
    if let Some(kd) = kd_extra {
        total = total.add(&kd.mul_scalar(spec.lambda_kd * t2)?)?;
    }
    Ok(total)
}

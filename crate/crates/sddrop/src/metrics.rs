//! Evaluation metrics: expected calibration error with reliability bins,
//! the one-step sign attack, desk-scale input corruptions, and
//! detector-scored out-of-distribution metrics.

use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, Tensor};
use crate::data::Dataset;
use crate::distill::LOG_FLOOR;
use crate::error::{Error, Result};
use crate::model::{plain_forward, ModelSpec, Parameters};
use crate::rng::Rng;

/// One equal-width confidence bin ((m-1)/M, m/M], 1-based index.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    pub index: usize,
    pub count: usize,
    /// Mean correctness of samples in the bin.
    pub acc: f64,
    /// Mean confidence of samples in the bin.
    pub conf: f64,
}

impl BinStats {
    pub fn low(&self, bins: usize) -> f64 {
        (self.index - 1) as f64 / bins as f64
    }

    pub fn high(&self, bins: usize) -> f64 {
        self.index as f64 / bins as f64
    }
}

/// Expected calibration error over equal-width bins; confidence 0 falls
/// into bin 1. Returns the weighted gap plus all `bins` bin records
/// (empty bins report zero counts).
pub fn ece(records: &[(f64, bool)], bins: usize) -> Result<(f64, Vec<BinStats>)> {
    if records.is_empty() {
        return Err(Error::InvalidArgument {
            what: "ece",
            why: "no records".into(),
        });
    }
    if bins == 0 {
        return Err(Error::InvalidArgument {
            what: "ece",
            why: "need at least one bin".into(),
        });
    }
    if let Some((c, _)) = records.iter().find(|(c, _)| !(0.0..=1.0).contains(c)) {
        return Err(Error::InvalidArgument {
            what: "ece",
            why: format!("confidence {c} outside [0, 1]"),
        });
    }

    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut acc_sum = vec![0.0; bins];
    for &(confidence, correct) in records {
        let idx = bin_index(confidence, bins);
        count[idx - 1] += 1;
        conf_sum[idx - 1] += confidence;
        acc_sum[idx - 1] += correct as usize as f64;
    }

    let n = records.len() as f64;
    let mut value = 0.0;
    let mut stats = Vec::with_capacity(bins);
    for m in 0..bins {
        let (acc, conf) = if count[m] > 0 {
            (acc_sum[m] / count[m] as f64, conf_sum[m] / count[m] as f64)
        } else {
            (0.0, 0.0)
        };
        if count[m] > 0 {
            value += count[m] as f64 / n * (acc - conf).abs();
        }
        stats.push(BinStats {
            index: m + 1,
            count: count[m],
            acc,
            conf,
        });
    }
    Ok((value, stats))
}

/// Bin for a confidence in [0, 1]: ((m-1)/M, m/M], with 0 assigned to bin 1.
fn bin_index(confidence: f64, bins: usize) -> usize {
    if confidence <= 0.0 {
        return 1;
    }
    ((confidence * bins as f64).ceil() as usize).clamp(1, bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub clip_min: Option<f64>,
    pub clip_max: Option<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.2,
            clip_min: None,
            clip_max: None,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One-step sign attack: x' = clip(x + epsilon * sign(d L_CE / d x)).
/// Every pre-clip perturbation coordinate is exactly -epsilon, 0, or
/// +epsilon.
pub fn fgsm_attack(
    spec: &ModelSpec,
    params: &Parameters,
    data: &Dataset,
    cfg: &AttackConfig,
) -> Result<Dataset> {
    if cfg.epsilon < 0.0 {
        return Err(Error::InvalidArgument {
            what: "attack epsilon",
            why: format!("must be non-negative, got {}", cfg.epsilon),
        });
    }
    let dim = data.dim();
    let mut perturbed = Vec::with_capacity(data.len() * dim);
    let chunk = 256usize;
    let mut i = 0usize;
    while i < data.len() {
        let hi = (i + chunk).min(data.len());
        let indices: Vec<usize> = (i..hi).collect();
        let (xs, labels) = crate::data::gather_batch(data, &indices);
        let leaves = params.leaves()?;
        let x = Tensor::param(&[indices.len(), dim], xs.clone())?;
        let logits = plain_forward(spec, &leaves, &x)?;
        let loss = crate::distill::cross_entropy(&logits, &labels)?;
        let grads = backward(&loss)?;
        let gx = grads.get_or_zeros(&x);
        for (v, g) in xs.iter().zip(&gx) {
            let mut out = v + cfg.epsilon * sign(*g);
            if let Some(lo) = cfg.clip_min {
                out = out.max(lo);
            }
            if let Some(hi) = cfg.clip_max {
                out = out.min(hi);
            }
            perturbed.push(out);
        }
        i = hi;
    }
    data.with_features(perturbed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    Brightness,
    Contrast,
}

impl std::fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
        };
        f.write_str(s)
    }
}

/// Apply one corruption at severity 1..=5. Gaussian noise has sigma
/// 0.04 * severity; brightness shifts by 0.1 * severity; contrast scales by
/// (1 - 0.1 * severity) about each example's mean.
pub fn corrupt(data: &Dataset, kind: CorruptionKind, severity: u8, seed: u64) -> Result<Dataset> {
    if !(1..=5).contains(&severity) {
        return Err(Error::InvalidArgument {
            what: "corruption severity",
            why: format!("must be in 1..=5, got {severity}"),
        });
    }
    let s = severity as f64;
    let dim = data.dim();
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(data.len() * dim);
    for i in 0..data.len() {
        let row = data.row(i);
        match kind {
            CorruptionKind::GaussianNoise => {
                let sigma = 0.04 * s;
                out.extend(row.iter().map(|v| v + sigma * rng.normal()));
            }
            CorruptionKind::Brightness => {
                let shift = 0.1 * s;
                out.extend(row.iter().map(|v| v + shift));
            }
            CorruptionKind::Contrast => {
                let scale = 1.0 - 0.1 * s;
                let mean = row.iter().sum::<f64>() / dim as f64;
                out.extend(row.iter().map(|v| mean + (v - mean) * scale));
            }
        }
    }
    data.with_features(out)
}

/// Detector score per example: perturb the input against the temperature-
/// scaled max-softmax and rescore. eps = 0, T = 1 reduces to plain
/// max-softmax confidence.
pub fn odin_score(
    spec: &ModelSpec,
    params: &Parameters,
    data: &Dataset,
    t_odin: f64,
    eps_odin: f64,
) -> Result<Vec<f64>> {
    if t_odin <= 0.0 {
        return Err(Error::InvalidArgument {
            what: "detector temperature",
            why: format!("must be positive, got {t_odin}"),
        });
    }
    if eps_odin < 0.0 {
        return Err(Error::InvalidArgument {
            what: "detector epsilon",
            why: format!("must be non-negative, got {eps_odin}"),
        });
    }
    let dim = data.dim();
    let mut scores = Vec::with_capacity(data.len());
    let chunk = 256usize;
    let mut i = 0usize;
    while i < data.len() {
        let hi = (i + chunk).min(data.len());
        let indices: Vec<usize> = (i..hi).collect();
        let (xs, _) = crate::data::gather_batch(data, &indices);

        // Input gradient of sum_b log max_i softmax(z_b / T); rows are
        // independent, so the batch sum gives per-example gradients.
        let leaves = params.leaves()?;
        let x = Tensor::param(&[indices.len(), dim], xs.clone())?;
        let logits = plain_forward(spec, &leaves, &x)?;
        let probs = logits.mul_scalar(1.0 / t_odin)?.softmax_last()?;
        let max_prob = probs.max_axis(1)?;
        let objective = max_prob.clamp_min(LOG_FLOOR)?.log()?.sum_all()?;
        let grads = backward(&objective)?;
        let gx = grads.get_or_zeros(&x);

        let perturbed: Vec<f64> = xs
            .iter()
            .zip(&gx)
            .map(|(v, g)| v - eps_odin * sign(-*g))
            .collect();
        let leaves = params.leaves()?;
        let xt = Tensor::matrix(indices.len(), dim, perturbed)?;
        let logits = plain_forward(spec, &leaves, &xt)?;
        let probs = logits.mul_scalar(1.0 / t_odin)?.softmax_last()?;
        let classes = spec.num_classes();
        for row in 0..indices.len() {
            let row_probs = &probs.values()[row * classes..(row + 1) * classes];
            scores.push(row_probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        i = hi;
    }
    Ok(scores)
}

/// The detector metric quadruple (plus both AUPR directions), all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OODMetrics {
    pub fpr_at_95_tpr: f64,
    pub detection_error: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
}

/// Threshold-based detection metrics; higher score means more
/// in-distribution, classification rule is `score >= threshold`.
pub fn ood_metrics(in_scores: &[f64], out_scores: &[f64]) -> Result<OODMetrics> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::InvalidArgument {
            what: "ood scores",
            why: "both score lists must be non-empty".into(),
        });
    }

    // FPR at the largest threshold keeping TPR >= 0.95: the k-th largest
    // in-distribution score with k = ceil(0.95 n).
    let mut sorted_in = in_scores.to_vec();
    sorted_in.sort_by(f64::total_cmp);
    let k = ((0.95 * in_scores.len() as f64).ceil() as usize).max(1);
    let threshold = sorted_in[in_scores.len() - k];
    let fpr_at_95_tpr =
        out_scores.iter().filter(|s| **s >= threshold).count() as f64 / out_scores.len() as f64;

    // Detection error minimized over all thresholds; +inf realizes 0.5.
    let mut detection_error = 0.5f64;
    let mut candidates: Vec<f64> = in_scores.iter().chain(out_scores).cloned().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for t in candidates {
        let tpr = in_scores.iter().filter(|s| **s >= t).count() as f64 / in_scores.len() as f64;
        let fpr = out_scores.iter().filter(|s| **s >= t).count() as f64 / out_scores.len() as f64;
        detection_error = detection_error.min(0.5 * (1.0 - tpr) + 0.5 * fpr);
    }

    Ok(OODMetrics {
        fpr_at_95_tpr,
        detection_error,
        auroc: auroc_rank(in_scores, out_scores),
        aupr_in: average_precision(in_scores, out_scores),
        aupr_out: {
            let neg_out: Vec<f64> = out_scores.iter().map(|s| -s).collect();
            let neg_in: Vec<f64> = in_scores.iter().map(|s| -s).collect();
            average_precision(&neg_out, &neg_in)
        },
    })
}

/// Rank statistic (Mann-Whitney) with average ranks on ties, so tied pairs
/// earn exactly half credit.
fn auroc_rank(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|s| (*s, true))
        .chain(negatives.iter().map(|s| (*s, false)))
        .collect();
    all.sort_by(|a, b| f64::total_cmp(&a.0, &b.0));

    let mut rank_sum_pos = 0.0;
    let mut i = 0usize;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j averaged over the tie group
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let np = positives.len() as f64;
    let nn = negatives.len() as f64;
    (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Step-integrated precision-recall area: sum over distinct descending
/// thresholds of (recall gain) * precision.
fn average_precision(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|s| (*s, true))
        .chain(negatives.iter().map(|s| (*s, false)))
        .collect();
    all.sort_by(|a, b| f64::total_cmp(&b.0, &a.0));

    let total_pos = positives.len() as f64;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0usize;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        let recall = tp / total_pos;
        let precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    ap
}

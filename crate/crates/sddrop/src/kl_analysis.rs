//! Closed-form KL derivative formulas and the numeric studies around them:
//! per-class Jacobians of the two dropout posteriors, the forward/reverse
//! derivative formulas, assumption statistics, the derivative-gap quantity
//! D_i with its k(r) / l(rho) companions, and gradient-direction reports.

use crate::autodiff::{backward, Tensor};
use crate::distill::{sdd_loss, softmax_with_temperature, FlowMode};
use crate::error::{Error, Result};
use crate::model::{forward_features, masked_head_forward, DropoutMask, ModelSpec, Parameters};

/// Posterior pair (p, q) for one input under masks u, v, with per-class
/// Jacobians with respect to the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct PairJacobian {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Row i holds d p_i / d theta, flattened in parameter order.
    pub jac_p: Vec<Vec<f64>>,
    pub jac_q: Vec<Vec<f64>>,
}

impl PairJacobian {
    pub fn num_classes(&self) -> usize {
        self.p.len()
    }

    pub fn num_params(&self) -> usize {
        self.jac_p.first().map(Vec::len).unwrap_or(0)
    }
}

/// Fractions and means behind the assumption-verification table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssumptionStats {
    /// Fraction of evaluated pairs where the sign condition holds strictly.
    pub prob_a1: Option<f64>,
    pub mean_r: Option<f64>,
    pub mean_r1: Option<f64>,
    /// Fraction of ratio-qualifying pairs with r <= r1.
    pub a2_hold_fraction: Option<f64>,
    /// (class, parameter) pairs with both gradient entries nonzero.
    pub evaluated_pairs: usize,
    /// Evaluated pairs sitting exactly on a ratio-1 boundary.
    pub boundary_pairs: usize,
    /// Evaluated pairs entering the r/r1 statistics (gradient ratio > 1).
    pub a2_pairs: usize,
}

/// Cosine and L1 norms of the forward-mode vs reverse-mode gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionReport {
    pub cosine: Option<f64>,
    pub l1_forward: f64,
    pub l1_reverse: f64,
}

/// One backward pass per class and distribution: O(N) passes per side.
pub fn pair_jacobian(
    spec: &ModelSpec,
    params: &Parameters,
    x_row: &[f64],
    mask_u: &DropoutMask,
    mask_v: &DropoutMask,
    temperature: f64,
) -> Result<PairJacobian> {
    if x_row.len() != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "pair_jacobian",
            lhs: vec![1, x_row.len()],
            rhs: vec![1, spec.input_dim],
        });
    }
    let n = spec.num_classes();
    let total = params.total_len();

    let side = |mask: &DropoutMask| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut probs_out = vec![0.0; n];
        let mut jac = vec![vec![0.0; total]; n];
        for class in 0..n {
            let leaves = params.leaves()?;
            let x = Tensor::matrix(1, spec.input_dim, x_row.to_vec())?;
            let feat = forward_features(spec, &leaves, &x)?;
            let logits = masked_head_forward(spec, &leaves, &feat, mask)?;
            let probs = softmax_with_temperature(&logits, temperature)?.probs;
            if class == 0 {
                probs_out.copy_from_slice(probs.values());
            }
            let mut pick = vec![0.0; n];
            pick[class] = 1.0;
            let selector = Tensor::matrix(1, n, pick)?;
            let p_i = probs.mul(&selector)?.sum_all()?;
            let grads = backward(&p_i)?;
            let mut flat = Vec::with_capacity(total);
            for leaf in &leaves.tensors {
                flat.extend(grads.get_or_zeros(leaf));
            }
            jac[class] = flat;
        }
        Ok((probs_out, jac))
    };

    let (p, jac_p) = side(mask_u)?;
    let (q, jac_q) = side(mask_v)?;
    Ok(PairJacobian { p, q, jac_p, jac_q })
}

fn check_positive(pj: &PairJacobian) -> Result<()> {
    for (i, (&pi, &qi)) in pj.p.iter().zip(&pj.q).enumerate() {
        if pi <= 0.0 || qi <= 0.0 {
            return Err(Error::InvalidArgument {
                what: "pair jacobian probabilities",
                why: format!("class {i}: p={pi}, q={qi}; ratios undefined at zero"),
            });
        }
    }
    Ok(())
}

/// Forward-direction derivative formula:
/// `sum_i (1 - p_i/q_i) grad q_i + sum_i (1 - q_i/p_i) grad p_i`.
pub fn lemma1_forward_grad(pj: &PairJacobian) -> Result<Vec<f64>> {
    check_positive(pj)?;
    let mut out = vec![0.0; pj.num_params()];
    for i in 0..pj.num_classes() {
        let cq = 1.0 - pj.p[i] / pj.q[i];
        let cp = 1.0 - pj.q[i] / pj.p[i];
        for (o, (gq, gp)) in out.iter_mut().zip(pj.jac_q[i].iter().zip(&pj.jac_p[i])) {
            *o += cq * gq + cp * gp;
        }
    }
    Ok(out)
}

/// Reverse-direction derivative formula:
/// `sum_i log(p_i/q_i) grad p_i + sum_i log(q_i/p_i) grad q_i`.
pub fn lemma1_reverse_grad(pj: &PairJacobian) -> Result<Vec<f64>> {
    check_positive(pj)?;
    let mut out = vec![0.0; pj.num_params()];
    for i in 0..pj.num_classes() {
        let cp = (pj.p[i] / pj.q[i]).ln();
        let cq = (pj.q[i] / pj.p[i]).ln();
        for (o, (gq, gp)) in out.iter_mut().zip(pj.jac_q[i].iter().zip(&pj.jac_p[i])) {
            *o += cp * gp + cq * gq;
        }
    }
    Ok(out)
}

/// Per-pair statistics over all (class, parameter) entries with both
/// gradient components nonzero. Strict inequalities throughout; ratio-1
/// boundaries never count as holding and are tallied separately.
pub fn assumption_stats(pj: &PairJacobian) -> AssumptionStats {
    assumption_stats_pooled(std::slice::from_ref(pj))
}

/// Same statistics pooled over a probe batch: every (class, parameter) pair
/// of every example enters one population. This is the report's averaging
/// convention.
pub fn assumption_stats_pooled(pjs: &[PairJacobian]) -> AssumptionStats {
    let mut evaluated = 0usize;
    let mut a1_holds = 0usize;
    let mut boundary = 0usize;
    let mut a2_pairs = 0usize;
    let mut a2_holds = 0usize;
    let mut sum_r = 0.0;
    let mut sum_r1 = 0.0;

    for pj in pjs {
        for i in 0..pj.num_classes() {
            let (pi, qi) = (pj.p[i], pj.q[i]);
            if pi <= 0.0 || qi <= 0.0 {
                continue;
            }
            for j in 0..pj.num_params() {
                let (gp, gq) = (pj.jac_p[i][j], pj.jac_q[i][j]);
                if gp == 0.0 || gq == 0.0 {
                    continue;
                }
                evaluated += 1;

                let prob_ratio = (pi / qi).abs();
                let grad_ratio = (gp / gq).abs();
                let a1_term = (prob_ratio - 1.0) * (grad_ratio - 1.0);
                if a1_term > 0.0 {
                    a1_holds += 1;
                } else if a1_term == 0.0 {
                    boundary += 1;
                }

                // Swap so both ratios are >= 1, as in the proof's
                // without-loss-of-generality step.
                let rho = grad_ratio.max(1.0 / grad_ratio);
                if rho > 1.0 {
                    a2_pairs += 1;
                    let r = (pi / qi).ln().abs();
                    let r1 = (rho.ln() + (rho + (std::f64::consts::E - 1.0)).ln().ln()).abs();
                    sum_r += r;
                    sum_r1 += r1;
                    if r <= r1 {
                        a2_holds += 1;
                    }
                }
            }
        }
    }

    AssumptionStats {
        prob_a1: (evaluated > 0).then(|| a1_holds as f64 / evaluated as f64),
        mean_r: (a2_pairs > 0).then(|| sum_r / a2_pairs as f64),
        mean_r1: (a2_pairs > 0).then(|| sum_r1 / a2_pairs as f64),
        a2_hold_fraction: (a2_pairs > 0).then(|| a2_holds as f64 / a2_pairs as f64),
        evaluated_pairs: evaluated,
        boundary_pairs: boundary,
        a2_pairs,
    }
}

/// Per-component gap between reverse and forward derivative magnitudes:
/// `|log(p/q) dq| + |log(q/p) dp| - (|(1 - p/q) dq| + |(1 - q/p) dp|)`.
pub fn proposition_gap(p: f64, q: f64, dp: f64, dq: f64) -> Result<f64> {
    if p <= 0.0 || q <= 0.0 || dp <= 0.0 || dq <= 0.0 {
        return Err(Error::InvalidArgument {
            what: "proposition gap",
            why: format!("all inputs must be positive: p={p}, q={q}, dp={dp}, dq={dq}"),
        });
    }
    let r = (p / q).ln();
    let reverse = (r * dq).abs() + (-r * dp).abs();
    let forward = ((1.0 - p / q) * dq).abs() + ((1.0 - q / p) * dp).abs();
    Ok(reverse - forward)
}

/// k(r) = (1 + rho) r - ((e^r - 1) + rho (1 - e^{-r})).
pub fn k_function(r: f64, rho: f64) -> f64 {
    (1.0 + rho) * r - ((r.exp() - 1.0) + rho * (1.0 - (-r).exp()))
}

/// Grid argmax of k over r in [0, 2 log(rho)]; returns (argmax, value).
pub fn k_argmax_on_grid(rho: f64, grid_points: usize) -> (f64, f64) {
    let hi = 2.0 * rho.ln().max(0.0);
    let steps = grid_points.max(2) - 1;
    let mut best = (0.0, k_function(0.0, rho));
    for s in 1..=steps {
        let r = hi * s as f64 / steps as f64;
        let v = k_function(r, rho);
        if v > best.1 {
            best = (r, v);
        }
    }
    best
}

/// Draw one (p, q, dp, dq) tuple strictly inside the assumption region:
/// gradient ratio rho in (1, 10], probability log-ratio r in (0, r1], with
/// both ratios bounded away from their degenerate corners so the gap is
/// resolvable in f64.
pub fn sample_assumption_region(rng: &mut crate::rng::Rng) -> (f64, f64, f64, f64) {
    let rho = rng.uniform(1.01, 10.0);
    let r1 = rho.ln() + (rho + (std::f64::consts::E - 1.0)).ln().ln();
    let r = rng.uniform(0.01 * r1, r1);
    let q = rng.uniform(1e-6, 1.0 / r.exp());
    let p = q * r.exp();
    let dq = rng.uniform(1e-6, 10.0);
    let dp = rho * dq;
    (p, q, dp, dq)
}

/// l(rho) = k(log(rho) + log(log(rho + e - 1))) for rho >= 1.
pub fn l_function(rho: f64) -> Result<f64> {
    if rho < 1.0 {
        return Err(Error::InvalidArgument {
            what: "l function",
            why: format!("rho must be >= 1, got {rho}"),
        });
    }
    let r1 = rho.ln() + (rho + (std::f64::consts::E - 1.0)).ln().ln();
    Ok(k_function(r1, rho))
}

pub(crate) fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

fn l1_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// Gradient of the symmetric distillation loss over a batch, in one flow
/// mode, flattened over the parameter order.
#[allow(clippy::too_many_arguments)]
fn sdd_gradient(
    spec: &ModelSpec,
    params: &Parameters,
    xs: &[f64],
    rows: usize,
    mask_u: &DropoutMask,
    mask_v: &DropoutMask,
    temperature: f64,
    mode: FlowMode,
) -> Result<Vec<f64>> {
    let leaves = params.leaves()?;
    let x = Tensor::matrix(rows, spec.input_dim, xs.to_vec())?;
    let feat = forward_features(spec, &leaves, &x)?;
    let logits_u = masked_head_forward(spec, &leaves, &feat, mask_u)?;
    let logits_v = masked_head_forward(spec, &leaves, &feat, mask_v)?;
    let loss = sdd_loss(&logits_u, &logits_v, temperature, mode)?;
    let grads = backward(&loss)?;
    let mut flat = Vec::with_capacity(params.total_len());
    for leaf in &leaves.tensors {
        flat.extend(grads.get_or_zeros(leaf));
    }
    Ok(flat)
}

/// Compare the forward-mode and reverse-mode gradients of the distillation
/// loss on a batch: cosine similarity plus both L1 norms.
pub fn direction_report(
    spec: &ModelSpec,
    params: &Parameters,
    xs: &[f64],
    rows: usize,
    mask_u: &DropoutMask,
    mask_v: &DropoutMask,
    temperature: f64,
) -> Result<DirectionReport> {
    let fw = sdd_gradient(
        spec,
        params,
        xs,
        rows,
        mask_u,
        mask_v,
        temperature,
        FlowMode::Forward,
    )?;
    let rv = sdd_gradient(
        spec,
        params,
        xs,
        rows,
        mask_u,
        mask_v,
        temperature,
        FlowMode::Reverse,
    )?;
    Ok(DirectionReport {
        cosine: cosine_similarity(&fw, &rv),
        l1_forward: l1_norm(&fw),
        l1_reverse: l1_norm(&rv),
    })
}

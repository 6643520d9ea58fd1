//! Reverse accumulation over a recorded graph.

use std::collections::{HashMap, HashSet};

use super::{axis_split, matmul_raw, OpKind, Tensor, TensorId};
use crate::error::{Error, Result};

/// Gradients keyed by leaf tensor id, as produced by [`backward`].
#[derive(Debug, Default)]
pub struct GradStore {
    grads: HashMap<TensorId, Vec<f64>>,
}

impl GradStore {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient of `t`, with absence meaning an exact zero.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.grads
            .get(&t.id())
            .cloned()
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Reverse-mode gradient of a scalar `root` with respect to every
/// `requires_grad` leaf reachable without crossing a stop-gradient node.
///
/// Each reached leaf also has the gradient written into its `grad` slot
/// (replacing any previous value). A root that tracks no gradient yields an
/// empty store.
pub fn backward(root: &Tensor) -> Result<GradStore> {
    if root.numel() != 1 {
        return Err(Error::NonScalarRoot {
            shape: root.shape().to_vec(),
        });
    }
    let mut store = GradStore::default();
    if !root.requires_grad() {
        return Ok(store);
    }

    let order = topo_order(root);
    let mut acc: HashMap<TensorId, Vec<f64>> = HashMap::new();
    acc.insert(root.id(), vec![1.0]);

    // Reversed postorder visits every node before its inputs, so a node's
    // accumulated gradient is complete when it is popped.
    for node in order.iter().rev() {
        let grad = match acc.remove(&node.id()) {
            Some(g) => g,
            None => continue, // unreachable contribution pruned earlier
        };
        if matches!(node.op_kind(), OpKind::Leaf) {
            node.set_grad(grad.clone());
            store.grads.insert(node.id(), grad);
            continue;
        }
        accumulate_inputs(node, &grad, &mut acc);
    }
    Ok(store)
}

/// Postorder DFS over gradient-tracking nodes; stop-gradient nodes are
/// treated as leaves (their inputs are never visited).
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order: Vec<Tensor> = Vec::new();
    let mut seen: HashSet<TensorId> = HashSet::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    seen.insert(root.id());

    while let Some((node, input_idx)) = stack.pop() {
        let inputs: &[Tensor] = if node.is_stop_gradient() {
            &[]
        } else {
            node.inputs()
        };
        if input_idx < inputs.len() {
            let child = inputs[input_idx].clone();
            stack.push((node, input_idx + 1));
            if child.requires_grad() && !seen.contains(&child.id()) {
                seen.insert(child.id());
                stack.push((child, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

fn add_into(acc: &mut HashMap<TensorId, Vec<f64>>, t: &Tensor, contribution: &[f64]) {
    if !t.requires_grad() {
        return;
    }
    let slot = acc.entry(t.id()).or_insert_with(|| vec![0.0; t.numel()]);
    for (s, c) in slot.iter_mut().zip(contribution) {
        *s += c;
    }
}

fn accumulate_inputs(node: &Tensor, grad: &[f64], acc: &mut HashMap<TensorId, Vec<f64>>) {
    let inputs = node.inputs();
    match node.op_kind() {
        OpKind::Add => {
            add_into(acc, &inputs[0], grad);
            add_into(acc, &inputs[1], grad);
        }
        OpKind::Sub => {
            add_into(acc, &inputs[0], grad);
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            add_into(acc, &inputs[1], &neg);
        }
        OpKind::Mul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let ga: Vec<f64> = grad.iter().zip(b.values()).map(|(g, y)| g * y).collect();
            let gb: Vec<f64> = grad.iter().zip(a.values()).map(|(g, x)| g * x).collect();
            add_into(acc, a, &ga);
            add_into(acc, b, &gb);
        }
        OpKind::MulScalar(c) => {
            let g: Vec<f64> = grad.iter().map(|g| g * c).collect();
            add_into(acc, &inputs[0], &g);
        }
        OpKind::Matmul => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            // dA = G @ B^T, dB = A^T @ G
            let bt = transpose(b.values(), k, n);
            let ga = matmul_raw(grad, &bt, m, n, k);
            let at = transpose(a.values(), m, k);
            let gb = matmul_raw(&at, grad, k, m, n);
            add_into(acc, a, &ga);
            add_into(acc, b, &gb);
        }
        OpKind::Relu => {
            let x = &inputs[0];
            let g: Vec<f64> = grad
                .iter()
                .zip(x.values())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            add_into(acc, x, &g);
        }
        OpKind::Exp => {
            let g: Vec<f64> = grad.iter().zip(node.values()).map(|(g, y)| g * y).collect();
            add_into(acc, &inputs[0], &g);
        }
        OpKind::Log => {
            let x = &inputs[0];
            let g: Vec<f64> = grad.iter().zip(x.values()).map(|(g, x)| g / x).collect();
            add_into(acc, x, &g);
        }
        OpKind::ClampMin(floor) => {
            let x = &inputs[0];
            let g: Vec<f64> = grad
                .iter()
                .zip(x.values())
                .map(|(g, x)| if *x >= *floor { *g } else { 0.0 })
                .collect();
            add_into(acc, x, &g);
        }
        OpKind::SumAxis(axis) => {
            let x = &inputs[0];
            let (outer, len, inner) = axis_split(x.shape(), *axis);
            let mut g = vec![0.0; x.numel()];
            for o in 0..outer {
                for a in 0..len {
                    let base = (o * len + a) * inner;
                    for i in 0..inner {
                        g[base + i] = grad[o * inner + i];
                    }
                }
            }
            add_into(acc, x, &g);
        }
        OpKind::MaxAxis(axis) => {
            // Route to the first argmax along the axis; deterministic on ties.
            let x = &inputs[0];
            let (outer, len, inner) = axis_split(x.shape(), *axis);
            let mut g = vec![0.0; x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = 0usize;
                    let mut best_v = f64::NEG_INFINITY;
                    for a in 0..len {
                        let v = x.values()[(o * len + a) * inner + i];
                        if v > best_v {
                            best_v = v;
                            best = a;
                        }
                    }
                    g[(o * len + best) * inner + i] = grad[o * inner + i];
                }
            }
            add_into(acc, x, &g);
        }
        OpKind::Softmax => {
            let x = &inputs[0];
            let shape = node.shape();
            let last = shape[shape.len() - 1];
            let rows = node.numel() / last;
            let p = node.values();
            let mut g = vec![0.0; node.numel()];
            for r in 0..rows {
                let base = r * last;
                let dot: f64 = (0..last).map(|j| grad[base + j] * p[base + j]).sum();
                for j in 0..last {
                    g[base + j] = p[base + j] * (grad[base + j] - dot);
                }
            }
            add_into(acc, x, &g);
        }
        OpKind::Broadcast => {
            let x = &inputs[0];
            let small = x.numel().max(1);
            let reps = node.numel() / small;
            let mut g = vec![0.0; x.numel()];
            for rep in 0..reps {
                for j in 0..x.numel() {
                    g[j] += grad[rep * small + j];
                }
            }
            add_into(acc, x, &g);
        }
        OpKind::Leaf | OpKind::Detach => {}
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_gradient;
    use crate::rng::Rng;

    #[test]
    fn product_rule() {
        let x = Tensor::param(&[], vec![2.0]).unwrap();
        let y = Tensor::param(&[], vec![3.0]).unwrap();
        let z = x.mul(&y).unwrap();
        let grads = backward(&z).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[3.0]);
        assert_eq!(grads.get(&y).unwrap(), &[2.0]);
        assert_eq!(x.grad().unwrap(), vec![3.0]);
    }

    #[test]
    fn constant_root_yields_empty_store() {
        let c = Tensor::scalar(5.0).unwrap();
        let grads = backward(&c).unwrap();
        assert!(grads.is_empty());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            backward(&x).unwrap_err(),
            Error::NonScalarRoot { .. }
        ));
    }

    #[test]
    fn detach_freezes_one_factor() {
        let x = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let frozen = x.detach();
        let loss = frozen.mul(&x).unwrap().sum_all().unwrap();
        let grads = backward(&loss).unwrap();
        // d/dx sum(c * x) = c where c = detach(x).values
        assert_eq!(grads.get(&x).unwrap(), x.values());
    }

    #[test]
    fn detached_only_loss_has_zero_gradients() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = x.detach().sum_all().unwrap();
        let grads = backward(&loss).unwrap();
        assert!(grads.is_empty());
        assert_eq!(grads.get_or_zeros(&x), vec![0.0; 3]);
    }

    #[test]
    fn shared_node_accumulates_both_paths() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let x = Tensor::param(&[], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap();
        let grads = backward(&y).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[7.0]);
    }

    #[test]
    fn bias_broadcast_gradient_sums_rows() {
        let x = Tensor::matrix(3, 2, vec![1.0; 6]).unwrap();
        let b = Tensor::param(&[2], vec![0.5, -0.5]).unwrap();
        let loss = x.add(&b).unwrap().sum_all().unwrap();
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&b).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn random_two_layer_net_matches_finite_differences() {
        let mut rng = Rng::new(17);
        for trial in 0..20 {
            let (d_in, d_h, d_out) = (3, 4, 3);
            let w1v: Vec<f64> = (0..d_in * d_h).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let w2v: Vec<f64> = (0..d_h * d_out).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let xv: Vec<f64> = (0..2 * d_in).map(|_| rng.uniform(-1.0, 1.0)).collect();

            let w1 = Tensor::param(&[d_in, d_h], w1v.clone()).unwrap();
            let w2 = Tensor::param(&[d_h, d_out], w2v.clone()).unwrap();
            let x = Tensor::matrix(2, d_in, xv.clone()).unwrap();

            let loss_of = |w1t: &Tensor, w2t: &Tensor| -> Tensor {
                x.matmul(w1t)
                    .unwrap()
                    .relu()
                    .unwrap()
                    .matmul(w2t)
                    .unwrap()
                    .softmax_last()
                    .unwrap()
                    .mul(&x.matmul(w1t).unwrap().relu().unwrap().matmul(w2t).unwrap())
                    .unwrap()
                    .sum_all()
                    .unwrap()
            };
            let loss = loss_of(&w1, &w2);
            let grads = backward(&loss).unwrap();

            let fd_w1 = finite_diff_gradient(|t| Ok(loss_of(t, &w2)), &w1, 1e-6).unwrap();
            let got = grads.get(&w1).unwrap();
            for (i, (a, c)) in got.iter().zip(&fd_w1).enumerate() {
                let rel = (a - c).abs() / (c.abs() + 1e-8);
                assert!(rel < 1e-4, "trial {trial} coord {i}: auto {a} vs fd {c}");
            }
        }
    }

    #[test]
    fn gradients_bit_identical_across_rebuilds() {
        let build = || {
            let w = Tensor::param(&[2, 2], vec![0.3, -0.7, 1.1, 0.2]).unwrap();
            let x = Tensor::matrix(1, 2, vec![0.9, -1.3]).unwrap();
            let loss = x
                .matmul(&w)
                .unwrap()
                .softmax_last()
                .unwrap()
                .clamp_min(1e-12)
                .unwrap()
                .log()
                .unwrap()
                .sum_all()
                .unwrap()
                .neg()
                .unwrap();
            let grads = backward(&loss).unwrap();
            grads.get(&w).unwrap().to_vec()
        };
        let a = build();
        let b = build();
        let bits_a: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }
}

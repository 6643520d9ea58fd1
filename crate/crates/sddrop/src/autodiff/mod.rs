//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Tensors are immutable nodes in a per-forward-pass graph. Every primitive
//! validates shapes, computes the exact mathematical definition, and checks
//! that the result is finite. [`Tensor::detach`] marks a stop-gradient
//! boundary: downstream uses of a detached tensor contribute nothing to the
//! gradients of its ancestors, which is the mechanism behind the forward /
//! reverse KL flow modes in the distillation losses.
//!
//! Graphs are acyclic by construction (nodes only reference older nodes) and
//! are dropped wholesale after [`backward`]. A graph and its tensors belong
//! to one execution context; distinct graphs may run on distinct threads.

mod backward;
mod finite_diff;

pub use backward::{backward, GradStore};
pub use finite_diff::finite_diff_gradient;

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub type TensorId = u64;

/// Primitive identifier recorded on every graph node.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    MulScalar(f64),
    Matmul,
    Relu,
    Exp,
    Log,
    ClampMin(f64),
    SumAxis(usize),
    MaxAxis(usize),
    Softmax,
    Broadcast,
    Detach,
}

struct Node {
    id: TensorId,
    shape: Vec<usize>,
    values: Vec<f64>,
    op: OpKind,
    inputs: Vec<Tensor>,
    stop_gradient: bool,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
}

/// Cheap-to-clone handle to a graph node.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("op", &self.0.op)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(()),
    }
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        values: Vec<f64>,
        op: OpKind,
        inputs: Vec<Tensor>,
        stop_gradient: bool,
        requires_grad: bool,
    ) -> Tensor {
        debug_assert_eq!(values.len(), numel_of(&shape));
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            values,
            op,
            inputs,
            stop_gradient,
            requires_grad,
            grad: RefCell::new(None),
        }))
    }

    fn from_op(
        op: OpKind,
        op_name: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        inputs: Vec<Tensor>,
    ) -> Result<Tensor> {
        check_finite(op_name, &values)?;
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        Ok(Tensor::build(
            shape,
            values,
            op,
            inputs,
            false,
            requires_grad,
        ))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        if values.len() != numel_of(shape) {
            return Err(Error::InvalidArgument {
                what: "tensor values",
                why: format!("{} values for shape {:?}", values.len(), shape),
            });
        }
        check_finite("new", &values)?;
        Ok(Tensor::build(
            shape.to_vec(),
            values,
            OpKind::Leaf,
            vec![],
            false,
            false,
        ))
    }

    /// Leaf tensor that participates in gradients.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, values)?;
        Ok(Tensor::build(
            t.0.shape.clone(),
            t.0.values.clone(),
            OpKind::Leaf,
            vec![],
            false,
            true,
        ))
    }

    pub fn scalar(value: f64) -> Result<Tensor> {
        Tensor::new(&[], vec![value])
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor> {
        Tensor::new(&[rows, cols], values)
    }

    pub fn id(&self) -> TensorId {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn numel(&self) -> usize {
        self.0.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1 && self.0.shape.is_empty()
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.0.values[0]
    }

    pub fn op_kind(&self) -> &OpKind {
        &self.0.op
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.0.inputs
    }

    pub fn is_stop_gradient(&self) -> bool {
        self.0.stop_gradient
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Gradient stored on this leaf by the most recent [`backward`] pass.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    fn set_grad(&self, g: Vec<f64>) {
        *self.0.grad.borrow_mut() = Some(g);
    }

    /// Same values, but treated as a constant by backward passes.
    pub fn detach(&self) -> Tensor {
        Tensor::build(
            self.0.shape.clone(),
            self.0.values.clone(),
            OpKind::Detach,
            vec![self.clone()],
            true,
            false,
        )
    }

    // ---- primitives -----------------------------------------------------

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = align_for_elementwise("add", self, rhs)?;
        let values = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x + y)
            .collect();
        Tensor::from_op(OpKind::Add, "add", a.shape().to_vec(), values, vec![a, b])
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = align_for_elementwise("subtract", self, rhs)?;
        let values = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x - y)
            .collect();
        Tensor::from_op(
            OpKind::Sub,
            "subtract",
            a.shape().to_vec(),
            values,
            vec![a, b],
        )
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = align_for_elementwise("multiply", self, rhs)?;
        let values = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x * y)
            .collect();
        Tensor::from_op(
            OpKind::Mul,
            "multiply",
            a.shape().to_vec(),
            values,
            vec![a, b],
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Tensor> {
        let values = self.values().iter().map(|x| x * c).collect();
        Tensor::from_op(
            OpKind::MulScalar(c),
            "scalar multiply",
            self.0.shape.clone(),
            values,
            vec![self.clone()],
        )
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.mul_scalar(-1.0)
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a_shape, b_shape) = (self.shape(), rhs.shape());
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a_shape.to_vec(),
                rhs: b_shape.to_vec(),
            });
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let values = matmul_raw(self.values(), rhs.values(), m, k, n);
        Tensor::from_op(
            OpKind::Matmul,
            "matmul",
            vec![m, n],
            values,
            vec![self.clone(), rhs.clone()],
        )
    }

    pub fn relu(&self) -> Result<Tensor> {
        let values = self.values().iter().map(|x| x.max(0.0)).collect();
        Tensor::from_op(
            OpKind::Relu,
            "relu",
            self.0.shape.clone(),
            values,
            vec![self.clone()],
        )
    }

    pub fn exp(&self) -> Result<Tensor> {
        let values = self.values().iter().map(|x| x.exp()).collect();
        Tensor::from_op(
            OpKind::Exp,
            "exp",
            self.0.shape.clone(),
            values,
            vec![self.clone()],
        )
    }

    /// Natural log. Rejects non-positive inputs; loss compositions that need
    /// a floor apply [`Tensor::clamp_min`] first.
    pub fn log(&self) -> Result<Tensor> {
        if let Some(index) = self.values().iter().position(|v| *v <= 0.0) {
            return Err(Error::LogDomain {
                value: self.values()[index],
                index,
            });
        }
        let values = self.values().iter().map(|x| x.ln()).collect();
        Tensor::from_op(
            OpKind::Log,
            "log",
            self.0.shape.clone(),
            values,
            vec![self.clone()],
        )
    }

    pub fn clamp_min(&self, floor: f64) -> Result<Tensor> {
        let values = self.values().iter().map(|x| x.max(floor)).collect();
        Tensor::from_op(
            OpKind::ClampMin(floor),
            "clamp_min",
            self.0.shape.clone(),
            values,
            vec![self.clone()],
        )
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument {
                what: "sum axis",
                why: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let (outer, len, inner) = axis_split(shape, axis);
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let mut values = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    values[o * inner + i] += self.values()[base + i];
                }
            }
        }
        Tensor::from_op(
            OpKind::SumAxis(axis),
            "sum_axis",
            out_shape,
            values,
            vec![self.clone()],
        )
    }

    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument {
                what: "max axis",
                why: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let (outer, len, inner) = axis_split(shape, axis);
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let mut values = vec![f64::NEG_INFINITY; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    let v = self.values()[base + i];
                    if v > values[o * inner + i] {
                        values[o * inner + i] = v;
                    }
                }
            }
        }
        Tensor::from_op(
            OpKind::MaxAxis(axis),
            "max_axis",
            out_shape,
            values,
            vec![self.clone()],
        )
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(Error::InvalidArgument {
                what: "softmax",
                why: "softmax needs at least one axis".into(),
            });
        }
        let last = shape[shape.len() - 1];
        let rows = self.numel() / last;
        let mut values = vec![0.0; self.numel()];
        for r in 0..rows {
            let row = &self.values()[r * last..(r + 1) * last];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, v) in row.iter().enumerate() {
                let e = (v - m).exp();
                values[r * last + j] = e;
                sum += e;
            }
            for j in 0..last {
                values[r * last + j] /= sum;
            }
        }
        Tensor::from_op(
            OpKind::Softmax,
            "softmax",
            shape.to_vec(),
            values,
            vec![self.clone()],
        )
    }

    /// Broadcast to `target` where `self.shape()` is a trailing suffix of it.
    pub fn broadcast_to(&self, target: &[usize]) -> Result<Tensor> {
        if !is_suffix(self.shape(), target) {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: self.shape().to_vec(),
                rhs: target.to_vec(),
            });
        }
        let reps = numel_of(target) / self.numel().max(1);
        let mut values = Vec::with_capacity(numel_of(target));
        for _ in 0..reps {
            values.extend_from_slice(self.values());
        }
        Tensor::from_op(
            OpKind::Broadcast,
            "broadcast",
            target.to_vec(),
            values,
            vec![self.clone()],
        )
    }

    // ---- conveniences built from primitives ------------------------------

    /// Sum of all entries, as a scalar tensor.
    pub fn sum_all(&self) -> Result<Tensor> {
        let mut t = self.clone();
        while !t.shape().is_empty() {
            t = t.sum_axis(0)?;
        }
        Ok(t)
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum_all()?.mul_scalar(1.0 / n)
    }
}

/// Generic dispatcher over the primitive set; the method forms are preferred.
pub fn apply_primitive(kind: OpKind, operands: &[&Tensor]) -> Result<Tensor> {
    let need = |n: usize| -> Result<()> {
        if operands.len() != n {
            Err(Error::ArityMismatch {
                op: "apply_primitive",
                expected: n,
                got: operands.len(),
            })
        } else {
            Ok(())
        }
    };
    match kind {
        OpKind::Add => {
            need(2)?;
            operands[0].add(operands[1])
        }
        OpKind::Sub => {
            need(2)?;
            operands[0].sub(operands[1])
        }
        OpKind::Mul => {
            need(2)?;
            operands[0].mul(operands[1])
        }
        OpKind::MulScalar(c) => {
            need(1)?;
            operands[0].mul_scalar(c)
        }
        OpKind::Matmul => {
            need(2)?;
            operands[0].matmul(operands[1])
        }
        OpKind::Relu => {
            need(1)?;
            operands[0].relu()
        }
        OpKind::Exp => {
            need(1)?;
            operands[0].exp()
        }
        OpKind::Log => {
            need(1)?;
            operands[0].log()
        }
        OpKind::ClampMin(c) => {
            need(1)?;
            operands[0].clamp_min(c)
        }
        OpKind::SumAxis(axis) => {
            need(1)?;
            operands[0].sum_axis(axis)
        }
        OpKind::MaxAxis(axis) => {
            need(1)?;
            operands[0].max_axis(axis)
        }
        OpKind::Softmax => {
            need(1)?;
            operands[0].softmax_last()
        }
        OpKind::Detach => {
            need(1)?;
            Ok(operands[0].detach())
        }
        OpKind::Broadcast | OpKind::Leaf => Err(Error::InvalidArgument {
            what: "apply_primitive",
            why: format!("{kind:?} needs explicit construction arguments"),
        }),
    }
}

/// (outer, axis length, inner) strides around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// Align two operands for an element-wise op by broadcasting the one whose
/// shape is a trailing suffix of the other's.
fn align_for_elementwise(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    if a.shape() == b.shape() {
        return Ok((a.clone(), b.clone()));
    }
    if is_suffix(b.shape(), a.shape()) {
        return Ok((a.clone(), b.broadcast_to(a.shape())?));
    }
    if is_suffix(a.shape(), b.shape()) {
        return Ok((a.broadcast_to(b.shape())?, b.clone()));
    }
    Err(Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

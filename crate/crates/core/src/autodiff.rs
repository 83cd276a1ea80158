//! Dense-tensor reverse-mode automatic differentiation on a Wengert tape.
//!
//! Values are 64-bit floats in row-major order. The tape is rebuilt for every
//! forward pass (define-by-run); nodes reference their inputs by index, so
//! topological order holds by construction. Gradient accumulation walks nodes
//! in reverse index order, which fixes the floating-point reduction order and
//! makes repeated backward passes bitwise identical.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense multidimensional array of f64, optionally attached to a tape node.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<usize>,
}

impl Tensor {
    /// A detached tensor. Panics if `shape` does not describe `data`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar tensor");
        self.data[0]
    }

    /// Extent of the last axis (1 for true scalars).
    fn last_extent(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

/// Operation kinds recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    MatMul,
    Sin,
    Cos,
    Tanh,
    Relu,
    Square,
    Sum,
    Mean,
    BiasAdd,
    Slice { start: usize, len: usize },
    Concat,
    ScalarMul(f64),
    ScalarAdd(f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "elementwise-multiply",
            Op::MatMul => "matrix-multiply",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Square => "square",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::BiasAdd => "broadcast-add",
            Op::Slice { .. } => "slice",
            Op::Concat => "concat",
            Op::ScalarMul(_) => "scalar-multiply",
            Op::ScalarAdd(_) => "scalar-add",
        }
    }
}

/// One recorded input: the node it came from (if tracked) plus its value.
#[derive(Debug, Clone)]
struct InputSlot {
    node: Option<usize>,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<InputSlot>,
    shape: Vec<usize>,
    value: Arc<Vec<f64>>,
}

/// Append-only record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a tracked tensor; zeros if the node was unreachable.
    pub fn for_tensor(&self, t: &Tensor) -> Result<Tensor> {
        let id = t.node.ok_or(Error::DetachedTensor)?;
        Ok(match &self.grads[id] {
            Some(g) => Tensor::new(t.shape.clone(), g.clone()),
            None => Tensor::zeros(t.shape.clone()),
        })
    }

    pub fn by_node(&self, id: usize) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tensor as a tracked leaf (parameter or differentiable input).
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: t.shape.clone(),
            value: t.data.clone(),
        });
        Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            node: Some(id),
        }
    }

    /// Apply an op, recording a node. Inputs without a node id participate as
    /// constants: their values are used but they receive no gradient.
    pub fn apply(&mut self, op: Op, inputs: &[&Tensor]) -> Result<Tensor> {
        let (shape, value) = eval_op(op, inputs)?;
        let id = self.nodes.len();
        let value = Arc::new(value);
        self.nodes.push(Node {
            op,
            inputs: inputs
                .iter()
                .map(|t| InputSlot {
                    node: t.node,
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
                .collect(),
            shape: shape.clone(),
            value: value.clone(),
        });
        Ok(Tensor {
            shape,
            data: value,
            node: Some(id),
        })
    }

    // Convenience wrappers; all shape checking lives in `eval_op`.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn sin(&mut self, a: &Tensor) -> Result<Tensor> {
        self.apply(Op::Sin, &[a])
    }
    pub fn cos(&mut self, a: &Tensor) -> Result<Tensor> {
        self.apply(Op::Cos, &[a])
    }
    pub fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        self.apply(Op::Relu, &[a])
    }
    pub fn square(&mut self, a: &Tensor) -> Result<Tensor> {
        self.apply(Op::Square, &[a])
    }
    pub fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        self.apply(Op::Sum, &[a])
    }
    pub fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        self.apply(Op::Mean, &[a])
    }
    pub fn bias_add(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        self.apply(Op::BiasAdd, &[a, bias])
    }
    pub fn slice(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        self.apply(Op::Slice { start, len }, &[a])
    }
    pub fn concat(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.apply(Op::Concat, inputs)
    }
    pub fn scalar_mul(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.apply(Op::ScalarMul(c), &[a])
    }
    pub fn scalar_add(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.apply(Op::ScalarAdd(c), &[a])
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
        let d = self.sub(pred, target)?;
        let sq = self.square(&d)?;
        self.mean(&sq)
    }

    /// Reverse pass from a scalar output. Gradient buffers are fresh per call,
    /// so several backward passes may run against one tape.
    pub fn backward(&self, output: &Tensor) -> Result<Gradients> {
        let out_id = output.node.ok_or(Error::DetachedTensor)?;
        if !output.is_scalar() {
            return Err(Error::NonScalarOutput {
                shape: output.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out_id] = Some(vec![1.0]);

        for id in (0..=out_id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            self.accumulate_inputs(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_inputs(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let add_into = |grads: &mut [Option<Vec<f64>>], slot: &InputSlot, contrib: &[f64]| {
            if let Some(id) = slot.node {
                let buf = grads[id].get_or_insert_with(|| vec![0.0; slot.data.len()]);
                for (b, c) in buf.iter_mut().zip(contrib) {
                    *b += c;
                }
            }
        };

        match node.op {
            Op::Leaf => {}
            Op::Add => {
                add_into(grads, &node.inputs[0], g);
                add_into(grads, &node.inputs[1], g);
            }
            Op::Sub => {
                add_into(grads, &node.inputs[0], g);
                if let Some(id) = node.inputs[1].node {
                    let buf =
                        grads[id].get_or_insert_with(|| vec![0.0; node.inputs[1].data.len()]);
                    for (b, c) in buf.iter_mut().zip(g) {
                        *b -= c;
                    }
                }
            }
            Op::Mul => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                if a.node.is_some() {
                    let contrib: Vec<f64> = g.iter().zip(b.data.iter()).map(|(g, b)| g * b).collect();
                    add_into(grads, a, &contrib);
                }
                if b.node.is_some() {
                    let contrib: Vec<f64> = g.iter().zip(a.data.iter()).map(|(g, a)| g * a).collect();
                    add_into(grads, b, &contrib);
                }
            }
            Op::MatMul => {
                let (a, b) = (&node.inputs[0], &node.inputs[1]);
                let (m, k) = (a.shape[0], a.shape[1]);
                let n = b.shape[1];
                if a.node.is_some() {
                    // dA = G B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for (p, d) in darow.iter_mut().enumerate() {
                            let brow = &b.data[p * n..(p + 1) * n];
                            *d = dot(grow, brow);
                        }
                    }
                    add_into(grads, a, &da);
                }
                if b.node.is_some() {
                    // dB = A^T G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let arow = &a.data[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for (p, &apv) in arow.iter().enumerate() {
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for (d, &gv) in dbrow.iter_mut().zip(grow) {
                                *d += apv * gv;
                            }
                        }
                    }
                    add_into(grads, b, &db);
                }
            }
            Op::Sin => {
                let a = &node.inputs[0];
                let contrib: Vec<f64> =
                    g.iter().zip(a.data.iter()).map(|(g, x)| g * x.cos()).collect();
                add_into(grads, a, &contrib);
            }
            Op::Cos => {
                let a = &node.inputs[0];
                let contrib: Vec<f64> =
                    g.iter().zip(a.data.iter()).map(|(g, x)| -g * x.sin()).collect();
                add_into(grads, a, &contrib);
            }
            Op::Tanh => {
                // d tanh = 1 - tanh^2, taken from the saved output.
                let contrib: Vec<f64> = g
                    .iter()
                    .zip(node.value.iter())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                add_into(grads, &node.inputs[0], &contrib);
            }
            Op::Relu => {
                let a = &node.inputs[0];
                let contrib: Vec<f64> = g
                    .iter()
                    .zip(a.data.iter())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                add_into(grads, a, &contrib);
            }
            Op::Square => {
                let a = &node.inputs[0];
                let contrib: Vec<f64> = g
                    .iter()
                    .zip(a.data.iter())
                    .map(|(g, x)| 2.0 * g * x)
                    .collect();
                add_into(grads, a, &contrib);
            }
            Op::Sum => {
                let a = &node.inputs[0];
                let contrib = vec![g[0]; a.data.len()];
                add_into(grads, a, &contrib);
            }
            Op::Mean => {
                let a = &node.inputs[0];
                let contrib = vec![g[0] / a.data.len() as f64; a.data.len()];
                add_into(grads, a, &contrib);
            }
            Op::BiasAdd => {
                let (a, bias) = (&node.inputs[0], &node.inputs[1]);
                add_into(grads, a, g);
                if bias.node.is_some() {
                    let n = bias.data.len();
                    let mut contrib = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        for (c, v) in contrib.iter_mut().zip(row) {
                            *c += v;
                        }
                    }
                    add_into(grads, bias, &contrib);
                }
            }
            Op::Slice { start, len } => {
                let a = &node.inputs[0];
                if a.node.is_some() {
                    let last = a.shape.last().copied().unwrap_or(1);
                    let mut contrib = vec![0.0; a.data.len()];
                    for (row, grow) in contrib.chunks_exact_mut(last).zip(g.chunks_exact(len)) {
                        row[start..start + len].copy_from_slice(grow);
                    }
                    add_into(grads, a, &contrib);
                }
            }
            Op::Concat => {
                let out_last = node.shape.last().copied().unwrap_or(1);
                let mut offset = 0;
                for slot in &node.inputs {
                    let last = slot.shape.last().copied().unwrap_or(1);
                    if slot.node.is_some() {
                        let mut contrib = vec![0.0; slot.data.len()];
                        for (row, grow) in
                            contrib.chunks_exact_mut(last).zip(g.chunks_exact(out_last))
                        {
                            row.copy_from_slice(&grow[offset..offset + last]);
                        }
                        add_into(grads, slot, &contrib);
                    }
                    offset += last;
                }
            }
            Op::ScalarMul(c) => {
                let contrib: Vec<f64> = g.iter().map(|g| g * c).collect();
                add_into(grads, &node.inputs[0], &contrib);
            }
            Op::ScalarAdd(_) => {
                add_into(grads, &node.inputs[0], g);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data.iter().zip(b.data.iter()).map(|(&x, &y)| f(x, y)).collect()
}

fn require_same_shape(op: Op, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op: op.name(),
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

/// Pure forward evaluation of one op (shape rule + value).
fn eval_op(op: Op, inputs: &[&Tensor]) -> Result<(Vec<usize>, Vec<f64>)> {
    let unary = |f: fn(f64) -> f64| -> (Vec<usize>, Vec<f64>) {
        (
            inputs[0].shape.clone(),
            inputs[0].data.iter().map(|&x| f(x)).collect(),
        )
    };
    Ok(match op {
        Op::Leaf => (inputs[0].shape.clone(), inputs[0].data.to_vec()),
        Op::Add => {
            require_same_shape(op, inputs[0], inputs[1])?;
            (
                inputs[0].shape.clone(),
                zip_map(inputs[0], inputs[1], |a, b| a + b),
            )
        }
        Op::Sub => {
            require_same_shape(op, inputs[0], inputs[1])?;
            (
                inputs[0].shape.clone(),
                zip_map(inputs[0], inputs[1], |a, b| a - b),
            )
        }
        Op::Mul => {
            require_same_shape(op, inputs[0], inputs[1])?;
            (
                inputs[0].shape.clone(),
                zip_map(inputs[0], inputs[1], |a, b| a * b),
            )
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut c = vec![0.0; m * n];
            for i in 0..m {
                let arow = &a.data[i * k..(i + 1) * k];
                let crow = &mut c[i * n..(i + 1) * n];
                for (p, &apv) in arow.iter().enumerate() {
                    let brow = &b.data[p * n..(p + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += apv * bv;
                    }
                }
            }
            (vec![m, n], c)
        }
        Op::Sin => unary(f64::sin),
        Op::Cos => unary(f64::cos),
        Op::Tanh => unary(f64::tanh),
        Op::Relu => unary(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Square => unary(|x| x * x),
        Op::Sum => (vec![1], vec![inputs[0].data.iter().sum()]),
        Op::Mean => (
            vec![1],
            vec![inputs[0].data.iter().sum::<f64>() / inputs[0].numel() as f64],
        ),
        Op::BiasAdd => {
            let (a, bias) = (inputs[0], inputs[1]);
            let n = bias.numel();
            if bias.shape.len() != 1 || a.last_extent() != n {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    lhs: a.shape.clone(),
                    rhs: bias.shape.clone(),
                });
            }
            let mut out = a.data.to_vec();
            for row in out.chunks_exact_mut(n) {
                for (v, b) in row.iter_mut().zip(bias.data.iter()) {
                    *v += b;
                }
            }
            (a.shape.clone(), out)
        }
        Op::Slice { start, len } => {
            let a = inputs[0];
            let last = a.last_extent();
            if len == 0 || start + len > last {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    lhs: a.shape.clone(),
                    rhs: vec![start, len],
                });
            }
            let mut shape = a.shape.clone();
            *shape.last_mut().unwrap() = len;
            let mut out = Vec::with_capacity(a.numel() / last * len);
            for row in a.data.chunks_exact(last) {
                out.extend_from_slice(&row[start..start + len]);
            }
            (shape, out)
        }
        Op::Concat => {
            let first = inputs[0];
            let lead = &first.shape[..first.shape.len() - 1];
            let mut total_last = 0;
            for t in inputs {
                if t.shape.len() != first.shape.len() || &t.shape[..t.shape.len() - 1] != lead {
                    return Err(Error::ShapeMismatch {
                        op: op.name(),
                        lhs: first.shape.clone(),
                        rhs: t.shape.clone(),
                    });
                }
                total_last += t.last_extent();
            }
            let rows = first.numel() / first.last_extent();
            let mut out = Vec::with_capacity(rows * total_last);
            for r in 0..rows {
                for t in inputs {
                    let last = t.last_extent();
                    out.extend_from_slice(&t.data[r * last..(r + 1) * last]);
                }
            }
            let mut shape = first.shape.clone();
            *shape.last_mut().unwrap() = total_last;
            (shape, out)
        }
        Op::ScalarMul(c) => (
            inputs[0].shape.clone(),
            inputs[0].data.iter().map(|&x| x * c).collect(),
        ),
        Op::ScalarAdd(c) => (
            inputs[0].shape.clone(),
            inputs[0].data.iter().map(|&x| x + c).collect(),
        ),
    })
}

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
///
/// `f` must build a scalar output on the provided tape from the tracked point;
/// the analytic gradient comes from one reverse pass, the reference from
/// central differences with the given step.
pub fn finite_diff_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor>,
{
    assert!(step > 0.0, "finite difference step must be positive");
    let mut tape = Tape::new();
    let x = tape.leaf(point);
    let y = f(&mut tape, &x)?;
    if !y.is_scalar() {
        return Err(Error::NonScalarOutput {
            shape: y.shape().to_vec(),
        });
    }
    if !y.item().is_finite() {
        return Err(Error::NonFinite {
            context: "finite_diff_check base evaluation".into(),
        });
    }
    let grads = tape.backward(&y)?;
    let analytic = grads.for_tensor(&x)?;

    let eval_at = |data: Vec<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let p = t.leaf(&Tensor::new(point.shape().to_vec(), data));
        let v = f(&mut t, &p)?;
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_diff_check perturbed evaluation".into(),
            });
        }
        Ok(v)
    };

    let mut max_err: f64 = 0.0;
    for i in 0..point.numel() {
        let mut plus = point.data().to_vec();
        plus[i] += step;
        let mut minus = point.data().to_vec();
        minus[i] -= step;
        let fd = (eval_at(plus)? - eval_at(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        max_err = max_err.max((a - fd).abs() / a.abs().max(1.0));
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn sin_of_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(0.0));
        let y = tape.sin(&x).unwrap();
        assert_eq!(y.item(), 0.0);
    }

    #[test]
    fn matmul_identity_preserves_rhs() {
        let mut tape = Tape::new();
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let m = Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let out = tape.matmul(&eye, &m).unwrap();
        assert_eq!(out.data(), m.data());
    }

    #[test]
    fn zero_residual_mse_is_zero() {
        let mut tape = Tape::new();
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let loss = tape.mse(&a, &a).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn grad_of_sum_of_squares_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        let sq = tape.square(&x).unwrap();
        let y = tape.sum(&sq).unwrap();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.for_tensor(&x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn grad_of_sin_at_zero_is_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(0.0));
        let y = tape.sin(&x).unwrap();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.for_tensor(&x).unwrap().item(), 1.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(vec![1.0, 2.0]));
        let err = tape.backward(&x).unwrap_err();
        assert!(matches!(err, Error::NonScalarOutput { .. }));
    }

    #[test]
    fn backward_rejects_detached_tensor() {
        let tape = Tape::new();
        let t = Tensor::scalar(1.0);
        assert!(matches!(tape.backward(&t), Err(Error::DetachedTensor)));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let err = tape.add(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    /// mse(Wx + b, y) gradient w.r.t. W against the central-difference oracle.
    #[test]
    fn linear_regression_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, vec![3, 3]);
        let b = rand_tensor(&mut rng, vec![3]);
        let y = rand_tensor(&mut rng, vec![3, 3]);
        let w0 = rand_tensor(&mut rng, vec![3, 3]);
        let err = finite_diff_check(
            |tape, w| {
                let xw = tape.matmul(&x, w)?;
                let pred = tape.bias_add(&xw, &b)?;
                tape.mse(&pred, &y)
            },
            &w0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn finite_diff_check_quadratic_is_tight() {
        let err = finite_diff_check(
            |tape, x| {
                let sq = tape.square(x)?;
                tape.sum(&sq)
            },
            &Tensor::scalar(3.0),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn finite_diff_check_sin_is_tight() {
        let err = finite_diff_check(|tape, x| tape.sin(x), &Tensor::scalar(1.0), 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    /// Every differentiable op passes a gradient check on randomized shapes.
    #[test]
    fn all_ops_match_finite_differences_over_many_seeds() {
        for seed in 0..120u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = rng.gen_range(1..4usize);
            let cols = rng.gen_range(1..5usize);
            let point = rand_tensor(&mut rng, vec![rows, cols]);
            let other = rand_tensor(&mut rng, vec![rows, cols]);
            let bias = rand_tensor(&mut rng, vec![cols]);
            let wide = rand_tensor(&mut rng, vec![cols, 3]);
            let start = rng.gen_range(0..cols);
            let len = rng.gen_range(1..=cols - start);

            let checks: Vec<(&str, Box<dyn Fn(&mut Tape, &Tensor) -> Result<Tensor>>)> = vec![
                ("add", {
                    let other = other.clone();
                    Box::new(move |t: &mut Tape, x: &Tensor| {
                        let s = t.add(x, &other)?;
                        let sq = t.square(&s)?;
                        t.sum(&sq)
                    })
                }),
                ("subtract", {
                    let other = other.clone();
                    Box::new(move |t: &mut Tape, x: &Tensor| {
                        let s = t.sub(x, &other)?;
                        let sq = t.square(&s)?;
                        t.sum(&sq)
                    })
                }),
                ("elementwise-multiply", {
                    let other = other.clone();
                    Box::new(move |t: &mut Tape, x: &Tensor| {
                        let s = t.mul(x, &other)?;
                        t.sum(&s)
                    })
                }),
                ("matrix-multiply", {
                    let wide = wide.clone();
                    Box::new(move |t: &mut Tape, x: &Tensor| {
                        let s = t.matmul(x, &wide)?;
                        let sq = t.square(&s)?;
                        t.mean(&sq)
                    })
                }),
                ("sin", Box::new(|t: &mut Tape, x: &Tensor| {
                    let s = t.sin(x)?;
                    t.sum(&s)
                })),
                ("cos", Box::new(|t: &mut Tape, x: &Tensor| {
                    let s = t.cos(x)?;
                    t.sum(&s)
                })),
                ("tanh", Box::new(|t: &mut Tape, x: &Tensor| {
                    let s = t.tanh(x)?;
                    t.sum(&s)
                })),
                ("square", Box::new(|t: &mut Tape, x: &Tensor| {
                    let s = t.square(x)?;
                    t.mean(&s)
                })),
                ("broadcast-add", {
                    let bias = bias.clone();
                    Box::new(move |t: &mut Tape, x: &Tensor| {
                        let s = t.bias_add(x, &bias)?;
                        let sq = t.square(&s)?;
                        t.sum(&sq)
                    })
                }),
                ("slice", Box::new(move |t: &mut Tape, x: &Tensor| {
                    let s = t.slice(x, start, len)?;
                    let sq = t.square(&s)?;
                    t.sum(&sq)
                })),
                ("concat", {
                    let other = other.clone();
                    Box::new(move |t: &mut Tape, x: &Tensor| {
                        let s = t.concat(&[x, &other])?;
                        let sq = t.square(&s)?;
                        t.mean(&sq)
                    })
                }),
                ("scalar-multiply", Box::new(|t: &mut Tape, x: &Tensor| {
                    let s = t.scalar_mul(x, -1.7)?;
                    let sq = t.square(&s)?;
                    t.sum(&sq)
                })),
                ("scalar-add", Box::new(|t: &mut Tape, x: &Tensor| {
                    let s = t.scalar_add(x, 0.4)?;
                    let sq = t.square(&s)?;
                    t.sum(&sq)
                })),
            ];
            for (name, f) in checks {
                let err = finite_diff_check(|t, x| f(t, x), &point, 1e-5).unwrap();
                assert!(err < 1e-6, "op {name} seed {seed}: relative error {err}");
            }
        }
    }

    /// relu gradient check away from the kink at zero.
    #[test]
    fn relu_grad_matches_finite_differences_off_kink() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..6)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.1..2.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let point = Tensor::new(vec![2, 3], data);
            let err = finite_diff_check(
                |t, x| {
                    let r = t.relu(x)?;
                    let sq = t.square(&r)?;
                    t.sum(&sq)
                },
                &point,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    /// backward is linear: grad(a*f + b*g) == a*grad(f) + b*grad(g).
    #[test]
    fn backward_is_linear_in_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let point = rand_tensor(&mut rng, vec![4]);
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));

            let run = |combine: bool| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
                let mut tape = Tape::new();
                let x = tape.leaf(&point);
                let sq = tape.square(&x).unwrap();
                let f = tape.sum(&sq).unwrap();
                let sn = tape.sin(&x).unwrap();
                let g = tape.sum(&sn).unwrap();
                let gf = tape.backward(&f).unwrap().for_tensor(&x).unwrap();
                let gg = tape.backward(&g).unwrap().for_tensor(&x).unwrap();
                let combined = if combine {
                    let af = tape.scalar_mul(&f, a).unwrap();
                    let bg = tape.scalar_mul(&g, b).unwrap();
                    let h = tape.add(&af, &bg).unwrap();
                    tape.backward(&h).unwrap().for_tensor(&x).unwrap().data().to_vec()
                } else {
                    Vec::new()
                };
                (gf.data().to_vec(), gg.data().to_vec(), combined)
            };
            let (gf, gg, gh) = run(true);
            for i in 0..gf.len() {
                let expect = a * gf[i] + b * gg[i];
                assert!((gh[i] - expect).abs() < 1e-12, "{} vs {}", gh[i], expect);
            }
        }
    }

    /// Re-running an identical forward/backward yields bitwise-identical numbers.
    #[test]
    fn replay_is_bitwise_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let x0 = rand_tensor(&mut rng, vec![5, 4]);
            let w = rand_tensor(&mut rng, vec![4, 3]);
            let mut tape = Tape::new();
            let x = tape.leaf(&x0);
            let wt = tape.leaf(&w);
            let h = tape.matmul(&x, &wt).unwrap();
            let s = tape.sin(&h).unwrap();
            let y = tape.mean(&s).unwrap();
            let grads = tape.backward(&y).unwrap();
            (
                y.item().to_bits(),
                grads
                    .for_tensor(&wt)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn finite_diff_check_reports_non_finite() {
        let err = finite_diff_check(
            |tape, x| tape.scalar_mul(x, f64::INFINITY),
            &Tensor::scalar(1.0),
            1e-5,
        );
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }
}

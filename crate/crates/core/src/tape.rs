//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! Every operation appends one node holding its output value and the ids of
//! its inputs. Nodes are only ever appended, so the tape is topologically
//! ordered by construction and [`Tape::backward`] is a single reverse sweep
//! that visits each reachable node once.
//!
//! ```
//! use monet::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(&[1.0, -2.0, 3.0]).with_requires_grad(true));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

use crate::tensor::{
    check_same_shape, gemm_nn, gemm_nt, gemm_tn, matrix_dims, sigmoid, Tensor, TensorError,
};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The elementwise operations exposed through [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Abs,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    AddN(Vec<Var>),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Sum(Var),
    SoftmaxRows(Var),
    CrossEntropy(Var, Vec<usize>),
    GroupSoftmax(Vec<Var>),
    Take { src: Var, index: usize },
    Concat { a: Var, b: Var, axis: usize },
    Slice { src: Var, axis: usize, start: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Recorded computation graph. Confined to one thread; replicate per worker.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sigmoid_grad_fault: Option<f64>,
}

type Result<T> = std::result::Result<T, TensorError>;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Negative-control hook: scales every sigmoid backward by `factor`.
    /// Only used to show that gradient checking catches a broken backward.
    #[doc(hidden)]
    pub fn inject_sigmoid_grad_fault(&mut self, factor: f64) {
        self.sigmoid_grad_fault = Some(factor);
    }

    /// Records a leaf. Its `requires_grad` flag decides whether gradients flow to it.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        let requires_grad = value.requires_grad();
        value.zero_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a copy of `value` as a trainable leaf.
    pub fn param(&mut self, value: &Tensor) -> Var {
        let mut v = value.clone();
        v.zero_grad();
        self.push(v, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, shaped like its value.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn grad_data(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Clears every accumulated gradient on the tape.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_same_shape(name, va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.value(a))?;
        let (k2, n) = matrix_dims("matmul", self.value(b))?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a[m×k] · b[n×k]ᵀ`, the batched form of applying a weight matrix `b`
    /// to every row of `a`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul_nt", self.value(a))?;
        let (n, k2) = matrix_dims("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMulNT(a, b), rg))
    }

    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(TensorError::Contract(format!(
                "{op:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        Ok(match op {
            Elementwise::Add => self.add(inputs[0], inputs[1])?,
            Elementwise::Sub => self.sub(inputs[0], inputs[1])?,
            Elementwise::Mul => self.mul(inputs[0], inputs[1])?,
            Elementwise::Sigmoid => self.sigmoid(inputs[0]),
            Elementwise::Tanh => self.tanh(inputs[0]),
            Elementwise::Relu => self.relu(inputs[0]),
            Elementwise::Abs => self.abs(inputs[0]),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Sum of several equally shaped tensors.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars
            .first()
            .ok_or_else(|| TensorError::Contract("add_n of zero tensors".into()))?;
        let mut acc = self.value(first).clone();
        for &v in &vars[1..] {
            check_same_shape("add_n", &acc, self.value(v))?;
            for (a, b) in acc.data_mut().iter_mut().zip(self.value(v).data()) {
                *a += b;
            }
        }
        let rg = self.any_grad(vars);
        Ok(self.push(acc, Op::AddN(vars.to_vec()), rg))
    }

    /// Adds the vector `bias[n]` to every length-`n` row of `x`. Explicit,
    /// not broadcasting: the last dimension of `x` must equal `n`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = vb.len();
        if vb.rank() != 1 || vx.shape().last() != Some(&n) {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut value = vx.clone();
        for row in value.data_mut().chunks_mut(n) {
            for (r, b) in row.iter_mut().zip(vb.data()) {
                *r += b;
            }
        }
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Softmax over the last axis of a 2-D tensor.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = matrix_dims("softmax_rows", self.value(a))?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(r * c);
        for row in src.chunks(c) {
            out.extend(crate::tensor::softmax(row));
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::new([r, c], out)?, Op::SoftmaxRows(a), rg))
    }

    /// Mean softmax cross-entropy of `logits[n×c]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (r, c) = matrix_dims("softmax_cross_entropy", self.value(logits))?;
        if labels.len() != r || labels.iter().any(|&l| l >= c) {
            return Err(TensorError::Contract(format!(
                "softmax_cross_entropy: {} labels in [0,{c}) expected for {r} rows",
                r
            )));
        }
        let src = self.value(logits).data();
        let mut total = 0.0;
        for (row, &label) in src.chunks(c).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / r as f64),
            Op::CrossEntropy(logits, labels.to_vec()),
            rg,
        ))
    }

    /// Softmax across `k ≥ 2` equally shaped tensors, independently per
    /// coordinate. Returns `k` tensors of the input shape.
    pub fn group_softmax(&mut self, inputs: &[Var]) -> Result<Vec<Var>> {
        if inputs.len() < 2 {
            return Err(TensorError::Contract(format!(
                "group_softmax needs at least 2 inputs, got {}",
                inputs.len()
            )));
        }
        let shape = self.value(inputs[0]).shape().to_vec();
        for &v in &inputs[1..] {
            check_same_shape("group_softmax", self.value(inputs[0]), self.value(v))?;
        }
        let k = inputs.len();
        let n = self.value(inputs[0]).len();
        let mut stacked = vec![0.0; k * n];
        for c in 0..n {
            let mut max = f64::NEG_INFINITY;
            for &v in inputs {
                max = max.max(self.value(v).data()[c]);
            }
            let mut total = 0.0;
            for (i, &v) in inputs.iter().enumerate() {
                let e = (self.value(v).data()[c] - max).exp();
                stacked[i * n + c] = e;
                total += e;
            }
            for i in 0..k {
                stacked[i * n + c] /= total;
            }
        }
        let mut stacked_shape = vec![k];
        stacked_shape.extend_from_slice(&shape);
        let rg = self.any_grad(inputs);
        let group = self.push(
            Tensor::new(stacked_shape, stacked)?,
            Op::GroupSoftmax(inputs.to_vec()),
            rg,
        );
        let mut outputs = Vec::with_capacity(k);
        for index in 0..k {
            let data = self.value(group).data()[index * n..(index + 1) * n].to_vec();
            let value = Tensor::new(shape.clone(), data)?;
            outputs.push(self.push(value, Op::Take { src: group, index }, rg));
        }
        Ok(outputs)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let rank = va.rank();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                rank,
            });
        }
        let compatible = vb.rank() == rank
            && (0..rank).all(|d| d == axis || va.shape()[d] == vb.shape()[d]);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let outer: usize = va.shape()[..axis].iter().product();
        let inner: usize = va.shape()[axis + 1..].iter().product();
        let (ca, cb) = (va.shape()[axis] * inner, vb.shape()[axis] * inner);
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for o in 0..outer {
            data.extend_from_slice(&va.data()[o * ca..(o + 1) * ca]);
            data.extend_from_slice(&vb.data()[o * cb..(o + 1) * cb]);
        }
        let mut shape = va.shape().to_vec();
        shape[axis] += vb.shape()[axis];
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { a, b, axis }, rg))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let vs = self.value(src);
        let rank = vs.rank();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange {
                op: "slice",
                axis,
                rank,
            });
        }
        if start + len > vs.shape()[axis] {
            return Err(TensorError::Contract(format!(
                "slice [{start}, {}) exceeds axis {axis} of shape {:?}",
                start + len,
                vs.shape()
            )));
        }
        let outer: usize = vs.shape()[..axis].iter().product();
        let inner: usize = vs.shape()[axis + 1..].iter().product();
        let full = vs.shape()[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            data.extend_from_slice(&vs.data()[base..base + len * inner]);
        }
        let mut shape = vs.shape().to_vec();
        shape[axis] = len;
        let rg = self.any_grad(&[src]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { src, axis, start }, rg))
    }

    /// Splits `src` along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, src: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let rank = self.value(src).rank();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange {
                op: "split",
                axis,
                rank,
            });
        }
        let total = self.value(src).shape()[axis];
        if sizes.iter().sum::<usize>() != total {
            return Err(TensorError::Contract(format!(
                "split sizes {sizes:?} do not cover axis of length {total}"
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice(src, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Backpropagates from a scalar `loss`, accumulating into every node's
    /// gradient. Call [`Tape::zero_grad`] to start fresh.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_with_seed(loss, &[1.0])
    }

    /// Backpropagates an arbitrary upstream gradient `seed` (shaped like `output`).
    pub fn backward_with_seed(&mut self, output: Var, seed: &[f64]) -> Result<()> {
        if seed.len() != self.value(output).len() {
            return Err(TensorError::Contract(format!(
                "seed of length {} for output of {} elements",
                seed.len(),
                self.value(output).len()
            )));
        }
        if !self.nodes[output.0].requires_grad {
            return Ok(());
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        pass[output.0] = Some(seed.to_vec());
        for i in (0..=output.0).rev() {
            let Some(g) = pass[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut pass);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    /// Dense jacobian `∂output/∂input` as a `[len(output) × len(input)]` matrix.
    /// Entries are exactly zero where no recorded path connects the two.
    pub fn jacobian(&mut self, output: Var, input: Var) -> Result<Tensor> {
        let (n_out, n_in) = (self.value(output).len(), self.value(input).len());
        let mut jac = vec![0.0; n_out * n_in];
        let mut seed = vec![0.0; n_out];
        for j in 0..n_out {
            self.zero_grad();
            seed[j] = 1.0;
            self.backward_with_seed(output, &seed)?;
            seed[j] = 0.0;
            if let Some(g) = self.grad_data(input) {
                jac[j * n_in..(j + 1) * n_in].copy_from_slice(g);
            }
        }
        self.zero_grad();
        Tensor::new([n_out, n_in], jac)
    }

    fn propagate(&self, i: usize, g: &[f64], pass: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let len = nodes[v.0].value.len();
                f(pass[v.0].get_or_insert_with(|| vec![0.0; len]));
            }
        };
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                acc(a, &mut |ga| gemm_nt(g, val(b), ga, m, n, k));
                acc(b, &mut |gb| gemm_tn(val(a), g, gb, m, k, n));
            }
            &Op::MatMulNT(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[0];
                acc(a, &mut |ga| gemm_nn(g, val(b), ga, m, n, k));
                acc(b, &mut |gb| gemm_tn(g, val(a), gb, m, n, k));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| add_into(ga, g));
                acc(b, &mut |gb| add_into(gb, g));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |ga| add_into(ga, g));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d));
            }
            &Op::Mul(a, b) => {
                acc(a, &mut |ga| {
                    for ((x, d), y) in ga.iter_mut().zip(g).zip(val(b)) {
                        *x += d * y;
                    }
                });
                acc(b, &mut |gb| {
                    for ((x, d), y) in gb.iter_mut().zip(g).zip(val(a)) {
                        *x += d * y;
                    }
                });
            }
            Op::AddN(vars) => {
                for &v in vars {
                    acc(v, &mut |gv| add_into(gv, g));
                }
            }
            &Op::AddBias(x, b) => {
                acc(x, &mut |gx| add_into(gx, g));
                acc(b, &mut |gb| {
                    for row in g.chunks(gb.len()) {
                        add_into(gb, row);
                    }
                });
            }
            &Op::Scale(a, factor) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += factor * d));
            }
            &Op::Sigmoid(a) => {
                let fault = self.sigmoid_grad_fault.unwrap_or(1.0);
                acc(a, &mut |ga| {
                    for ((x, d), y) in ga.iter_mut().zip(g).zip(out) {
                        *x += fault * d * y * (1.0 - y);
                    }
                });
            }
            &Op::Tanh(a) => {
                acc(a, &mut |ga| {
                    for ((x, d), y) in ga.iter_mut().zip(g).zip(out) {
                        *x += d * (1.0 - y * y);
                    }
                });
            }
            &Op::Relu(a) => {
                acc(a, &mut |ga| {
                    for ((x, d), inp) in ga.iter_mut().zip(g).zip(val(a)) {
                        if *inp > 0.0 {
                            *x += d;
                        }
                    }
                });
            }
            &Op::Abs(a) => {
                acc(a, &mut |ga| {
                    for ((x, d), inp) in ga.iter_mut().zip(g).zip(val(a)) {
                        if *inp > 0.0 {
                            *x += d;
                        } else if *inp < 0.0 {
                            *x -= d;
                        }
                    }
                });
            }
            &Op::Sum(a) => {
                acc(a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            &Op::SoftmaxRows(a) => {
                let c = nodes[i].value.shape()[1];
                acc(a, &mut |ga| {
                    for ((gr, dr), yr) in ga.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let dot: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                        for ((x, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *x += y * (d - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy(logits, labels) => {
                let c = nodes[logits.0].value.shape()[1];
                let scale = g[0] / labels.len() as f64;
                acc(*logits, &mut |gl| {
                    for ((gr, row), &label) in gl.chunks_mut(c).zip(val(*logits).chunks(c)).zip(labels) {
                        let p = crate::tensor::softmax(row);
                        for (j, (x, pj)) in gr.iter_mut().zip(p).enumerate() {
                            let target = if j == label { 1.0 } else { 0.0 };
                            *x += scale * (pj - target);
                        }
                    }
                });
            }
            Op::GroupSoftmax(inputs) => {
                let n = nodes[inputs[0].0].value.len();
                let k = inputs.len();
                let mut dots = vec![0.0; n];
                for j in 0..k {
                    for c in 0..n {
                        dots[c] += g[j * n + c] * out[j * n + c];
                    }
                }
                for (j, &v) in inputs.iter().enumerate() {
                    acc(v, &mut |gv| {
                        for c in 0..n {
                            gv[c] += out[j * n + c] * (g[j * n + c] - dots[c]);
                        }
                    });
                }
            }
            &Op::Take { src, index } => {
                let n = g.len();
                acc(src, &mut |gs| add_into(&mut gs[index * n..(index + 1) * n], g));
            }
            &Op::Concat { a, b, axis } => {
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let outer: usize = sa[..axis].iter().product();
                let inner: usize = sa[axis + 1..].iter().product();
                let (ca, cb) = (sa[axis] * inner, sb[axis] * inner);
                acc(a, &mut |ga| {
                    for o in 0..outer {
                        add_into(&mut ga[o * ca..(o + 1) * ca], &g[o * (ca + cb)..o * (ca + cb) + ca]);
                    }
                });
                acc(b, &mut |gb| {
                    for o in 0..outer {
                        let base = o * (ca + cb) + ca;
                        add_into(&mut gb[o * cb..(o + 1) * cb], &g[base..base + cb]);
                    }
                });
            }
            &Op::Slice { src, axis, start } => {
                let ss = nodes[src.0].value.shape();
                let len = nodes[i].value.shape()[axis];
                let outer: usize = ss[..axis].iter().product();
                let inner: usize = ss[axis + 1..].iter().product();
                let full = ss[axis] * inner;
                let piece = len * inner;
                acc(src, &mut |gs| {
                    for o in 0..outer {
                        let base = o * full + start * inner;
                        add_into(&mut gs[base..base + piece], &g[o * piece..(o + 1) * piece]);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

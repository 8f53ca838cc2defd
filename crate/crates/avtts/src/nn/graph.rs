//! Tape-based reverse-mode differentiation.
//!
//! Ops evaluate eagerly and record themselves on the tape; `backward`
//! replays the tape in reverse insertion order (which is a reverse
//! topological order by construction) exactly once per node.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::rng;
use crate::nn::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T: Scalar> {
    Input,
    Param(String),
    MatMul,
    /// C = A @ B^T
    MatMulNT,
    /// rhs broadcast over leading axes (rhs shape is a suffix of lhs shape)
    Add,
    Mul,
    Scale(T),
    Relu,
    Softmax,
    LayerNorm {
        eps: T,
    },
    Embedding {
        ids: Vec<usize>,
    },
    /// (T, C) -> (T, C*k), zero same-padding along the time axis.
    Unfold {
        kernel: usize,
    },
    Dropout {
        mask: Vec<T>,
    },
    Concat {
        axis: usize,
    },
    SliceRows {
        start: usize,
    },
    SliceCols {
        start: usize,
        end: usize,
    },
    GatherRows {
        indices: Vec<usize>,
    },
    MaskedMse,
    MaskedMae,
}

struct Node<T: Scalar> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
    needs_grad: bool,
}

pub struct Gradients<T: Scalar> {
    by_node: Vec<Option<Tensor<T>>>,
    params: HashMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of_node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.by_node[id.0].as_ref()
    }

    pub fn of_param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn into_params(self) -> HashMap<String, Tensor<T>> {
        self.params
    }
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    train: bool,
    dropout_seed: u64,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// Inference-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            train: false,
            dropout_seed: 0,
        }
    }

    /// Training-mode graph. Dropout masks are a pure function of
    /// (seed, node index, element index).
    pub fn train(dropout_seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            train: true,
            dropout_seed,
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        let needs_grad = match op {
            Op::Param(_) => true,
            Op::Input => false,
            _ => inputs.iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Input, vec![], value)
    }

    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> NodeId {
        self.push(Op::Param(name.to_string()), vec![], value.clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        Ok(self.push(Op::MatMul, vec![a, b], Tensor::new(vec![m, n], out)))
    }

    /// C = A @ B^T for A (M,K), B (N,K).
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2();
        let (n, k2) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt_kernel(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        Ok(self.push(Op::MatMulNT, vec![a, b], Tensor::new(vec![m, n], out)))
    }

    fn broadcast_check(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<(NodeId, NodeId)> {
        // larger operand first; rhs shape must be a suffix of lhs shape
        let (big, small) = if self.value(a).numel() >= self.value(b).numel() {
            (a, b)
        } else {
            (b, a)
        };
        let ls = self.value(big).shape();
        let rs = self.value(small).shape();
        let ok = self.value(small).numel() == 1
            || (rs.len() <= ls.len() && ls[ls.len() - rs.len()..] == *rs);
        if !ok {
            return Err(Error::ShapeMismatch {
                op,
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        Ok((big, small))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = self.broadcast_check(a, b, "add")?;
        let rn = self.value(b).numel();
        let bd = self.value(b).data();
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % rn])
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Add, vec![a, b], Tensor::new(shape, data)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = self.broadcast_check(a, b, "mul")?;
        let rn = self.value(b).numel();
        let bd = self.value(b).data();
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bd[i % rn])
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Mul, vec![a, b], Tensor::new(shape, data)))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let value = self.value(a).map(|x| x * c);
        self.push(Op::Scale(c), vec![a], value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -T::one());
        self.add(a, nb)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(Op::Relu, vec![a], value)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let cols = *t.shape().last().expect("softmax needs rank >= 1");
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                sum = sum + *x;
            }
            for x in row.iter_mut() {
                *x = *x / sum;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Op::Softmax, vec![a], Tensor::new(shape, data))
    }

    /// Normalize over the last axis (pre gain/bias).
    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        let eps = T::from_f64x(1e-5);
        let t = self.value(a);
        let cols = *t.shape().last().expect("layer_norm needs rank >= 1");
        let nf = T::from_f64x(cols as f64);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols) {
            let mean = row.iter().cloned().sum::<T>() / nf;
            let var = row
                .iter()
                .map(|&x| (x - mean) * (x - mean))
                .sum::<T>()
                / nf;
            let s = (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) / s;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Op::LayerNorm { eps }, vec![a], Tensor::new(shape, data))
    }

    /// Look up rows of a (V, H) table.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, h) = self.value(table).dims2();
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::invalid(format!(
                "embedding id {bad} out of range for table of {v} rows"
            )));
        }
        let td = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            data.extend_from_slice(&td[i * h..(i + 1) * h]);
        }
        Ok(self.push(
            Op::Embedding { ids: ids.to_vec() },
            vec![table],
            Tensor::new(vec![ids.len(), h], data),
        ))
    }

    /// im2col for 1-D convolution with zero same-padding: (T, C) -> (T, C*k).
    pub fn unfold(&mut self, a: NodeId, kernel: usize) -> Result<NodeId> {
        assert!(kernel % 2 == 1, "same-padding requires odd kernel");
        let (t, c) = self.value(a).dims2();
        let pad = kernel / 2;
        let xd = self.value(a).data();
        let mut data = vec![T::zero(); t * c * kernel];
        for ti in 0..t {
            for j in 0..kernel {
                let src = ti as isize + j as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let src = src as usize;
                for ci in 0..c {
                    data[ti * c * kernel + ci * kernel + j] = xd[src * c + ci];
                }
            }
        }
        Ok(self.push(
            Op::Unfold { kernel },
            vec![a],
            Tensor::new(vec![t, c * kernel], data),
        ))
    }

    /// Inverted-scaling dropout; identity in inference graphs.
    pub fn dropout(&mut self, a: NodeId, p: f64) -> NodeId {
        if !self.train || p <= 0.0 {
            return a;
        }
        let seed = rng::derive_seed(self.dropout_seed, &[self.nodes.len() as u64]);
        let keep = T::from_f64x(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).numel())
            .map(|i| {
                if rng::uniform01(seed, i as u64) >= p {
                    keep
                } else {
                    T::zero()
                }
            })
            .collect();
        let xd = self.value(a).data();
        let data: Vec<T> = xd.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Dropout { mask }, vec![a], Tensor::new(shape, data))
    }

    /// Concatenate two rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let (ra, ca) = self.value(a).dims2();
        let (rb, cb) = self.value(b).dims2();
        match axis {
            0 => {
                if ca != cb {
                    return Err(Error::ShapeMismatch {
                        op: "concat0",
                        lhs: vec![ra, ca],
                        rhs: vec![rb, cb],
                    });
                }
                let mut data = self.value(a).data().to_vec();
                data.extend_from_slice(self.value(b).data());
                Ok(self.push(
                    Op::Concat { axis },
                    vec![a, b],
                    Tensor::new(vec![ra + rb, ca], data),
                ))
            }
            1 => {
                if ra != rb {
                    return Err(Error::ShapeMismatch {
                        op: "concat1",
                        lhs: vec![ra, ca],
                        rhs: vec![rb, cb],
                    });
                }
                let ad = self.value(a).data();
                let bd = self.value(b).data();
                let mut data = Vec::with_capacity(ra * (ca + cb));
                for i in 0..ra {
                    data.extend_from_slice(&ad[i * ca..(i + 1) * ca]);
                    data.extend_from_slice(&bd[i * cb..(i + 1) * cb]);
                }
                Ok(self.push(
                    Op::Concat { axis },
                    vec![a, b],
                    Tensor::new(vec![ra, ca + cb], data),
                ))
            }
            _ => Err(Error::invalid("concat axis must be 0 or 1")),
        }
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2();
        if start > end || end > r {
            return Err(Error::invalid(format!(
                "slice_rows [{start},{end}) out of range for {r} rows"
            )));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        Ok(self.push(
            Op::SliceRows { start },
            vec![a],
            Tensor::new(vec![end - start, c], data),
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2();
        if start > end || end > c {
            return Err(Error::invalid(format!(
                "slice_cols [{start},{end}) out of range for {c} cols"
            )));
        }
        let ad = self.value(a).data();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&ad[i * c + start..i * c + end]);
        }
        Ok(self.push(
            Op::SliceCols { start, end },
            vec![a],
            Tensor::new(vec![r, end - start], data),
        ))
    }

    /// Row gather; used by the length regulator and to broadcast a single
    /// row over a sequence.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2();
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::invalid(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let ad = self.value(a).data();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&ad[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            Op::GatherRows {
                indices: indices.to_vec(),
            },
            vec![a],
            Tensor::new(vec![indices.len(), c], data),
        ))
    }

    fn masked_loss(
        &mut self,
        pred: NodeId,
        target: NodeId,
        mask: NodeId,
        mae: bool,
    ) -> Result<NodeId> {
        self.value(pred)
            .check_same_shape(self.value(target), "masked_loss")?;
        self.value(pred)
            .check_same_shape(self.value(mask), "masked_loss")?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let m = self.value(mask).data();
        let msum: T = m.iter().cloned().sum();
        let loss = if msum == T::zero() {
            T::zero()
        } else {
            let mut acc = T::zero();
            for i in 0..p.len() {
                let d = p[i] - t[i];
                acc = acc + m[i] * if mae { d.abs() } else { d * d };
            }
            acc / msum
        };
        let op = if mae { Op::MaskedMae } else { Op::MaskedMse };
        Ok(self.push(op, vec![pred, target, mask], Tensor::scalar(loss)))
    }

    /// sum(mask * (pred - target)^2) / sum(mask)
    pub fn masked_mse(&mut self, pred: NodeId, target: NodeId, mask: NodeId) -> Result<NodeId> {
        self.masked_loss(pred, target, mask, false)
    }

    /// sum(mask * |pred - target|) / sum(mask)
    pub fn masked_mae(&mut self, pred: NodeId, target: NodeId, mask: NodeId) -> Result<NodeId> {
        self.masked_loss(pred, target, mask, true)
    }

    /// Reverse pass from a scalar loss. Parameters that do not influence
    /// the loss get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(
            self.value(loss).shape().to_vec(),
            vec![T::one()],
        ));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }

        let mut params = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let g = grads[idx]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                // same parameter may appear as several nodes
                match params.entry(name.clone()) {
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(g);
                    }
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        let acc = e.get_mut();
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + *b;
                        }
                    }
                }
            }
        }
        Ok(Gradients {
            by_node: grads,
            params,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, idx: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let ins = &node.inputs;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul => {
                let a = self.value(ins[0]);
                let b = self.value(ins[1]);
                let (m, k) = a.dims2();
                let (_, n) = b.dims2();
                if self.nodes[ins[0].0].needs_grad {
                    let mut da = vec![T::zero(); m * k];
                    matmul_nt_kernel(gy.data(), b.data(), m, n, k, &mut da);
                    self.accumulate(grads, ins[0], Tensor::new(vec![m, k], da));
                }
                if self.nodes[ins[1].0].needs_grad {
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn_kernel(a.data(), gy.data(), m, k, n, &mut db);
                    self.accumulate(grads, ins[1], Tensor::new(vec![k, n], db));
                }
            }
            Op::MatMulNT => {
                let a = self.value(ins[0]);
                let b = self.value(ins[1]);
                let (m, k) = a.dims2();
                let (n, _) = b.dims2();
                if self.nodes[ins[0].0].needs_grad {
                    let mut da = vec![T::zero(); m * k];
                    matmul_kernel(gy.data(), b.data(), m, n, k, &mut da);
                    self.accumulate(grads, ins[0], Tensor::new(vec![m, k], da));
                }
                if self.nodes[ins[1].0].needs_grad {
                    let mut db = vec![T::zero(); n * k];
                    matmul_tn_kernel(gy.data(), a.data(), m, n, k, &mut db);
                    self.accumulate(grads, ins[1], Tensor::new(vec![n, k], db));
                }
            }
            Op::Add => {
                if self.nodes[ins[0].0].needs_grad {
                    self.accumulate(grads, ins[0], gy.clone());
                }
                if self.nodes[ins[1].0].needs_grad {
                    self.accumulate(grads, ins[1], reduce_to(gy, self.value(ins[1])));
                }
            }
            Op::Mul => {
                let a = self.value(ins[0]);
                let b = self.value(ins[1]);
                let rn = b.numel();
                if self.nodes[ins[0].0].needs_grad {
                    let bd = b.data();
                    let da: Vec<T> = gy
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| g * bd[i % rn])
                        .collect();
                    self.accumulate(grads, ins[0], Tensor::new(a.shape().to_vec(), da));
                }
                if self.nodes[ins[1].0].needs_grad {
                    let ad = a.data();
                    let mut db = vec![T::zero(); rn];
                    for (i, &g) in gy.data().iter().enumerate() {
                        db[i % rn] = db[i % rn] + g * ad[i];
                    }
                    self.accumulate(grads, ins[1], Tensor::new(b.shape().to_vec(), db));
                }
            }
            Op::Scale(c) => {
                self.accumulate(grads, ins[0], gy.map(|g| g * *c));
            }
            Op::Relu => {
                let x = self.value(ins[0]).data();
                let dx: Vec<T> = gy
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&g, &xi)| if xi > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(
                    grads,
                    ins[0],
                    Tensor::new(self.value(ins[0]).shape().to_vec(), dx),
                );
            }
            Op::Softmax => {
                let y = &node.value;
                let cols = *y.shape().last().unwrap();
                let mut dx = vec![T::zero(); y.numel()];
                for (r, (yrow, grow)) in y
                    .data()
                    .chunks(cols)
                    .zip(gy.data().chunks(cols))
                    .enumerate()
                {
                    let dot: T = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    for j in 0..cols {
                        dx[r * cols + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(grads, ins[0], Tensor::new(y.shape().to_vec(), dx));
            }
            Op::LayerNorm { eps } => {
                let x = self.value(ins[0]);
                let y = &node.value;
                let cols = *x.shape().last().unwrap();
                let nf = T::from_f64x(cols as f64);
                let mut dx = vec![T::zero(); x.numel()];
                for r in 0..x.numel() / cols {
                    let xrow = &x.data()[r * cols..(r + 1) * cols];
                    let yrow = &y.data()[r * cols..(r + 1) * cols];
                    let grow = &gy.data()[r * cols..(r + 1) * cols];
                    let mean = xrow.iter().cloned().sum::<T>() / nf;
                    let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
                    let s = (var + *eps).sqrt();
                    let gmean = grow.iter().cloned().sum::<T>() / nf;
                    let gymean = grow.iter().zip(yrow).map(|(&g, &yv)| g * yv).sum::<T>() / nf;
                    for j in 0..cols {
                        dx[r * cols + j] = (grow[j] - gmean - yrow[j] * gymean) / s;
                    }
                }
                self.accumulate(grads, ins[0], Tensor::new(x.shape().to_vec(), dx));
            }
            Op::Embedding { ids } => {
                let table = self.value(ins[0]);
                let (_, h) = table.dims2();
                let mut dt = Tensor::zeros(table.shape());
                for (i, &id) in ids.iter().enumerate() {
                    let src = &gy.data()[i * h..(i + 1) * h];
                    let dst = &mut dt.data_mut()[id * h..(id + 1) * h];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
                self.accumulate(grads, ins[0], dt);
            }
            Op::Unfold { kernel } => {
                let x = self.value(ins[0]);
                let (t, c) = x.dims2();
                let pad = kernel / 2;
                let mut dx = vec![T::zero(); t * c];
                for ti in 0..t {
                    for j in 0..*kernel {
                        let src = ti as isize + j as isize - pad as isize;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let src = src as usize;
                        for ci in 0..c {
                            dx[src * c + ci] =
                                dx[src * c + ci] + gy.data()[ti * c * kernel + ci * kernel + j];
                        }
                    }
                }
                self.accumulate(grads, ins[0], Tensor::new(vec![t, c], dx));
            }
            Op::Dropout { mask } => {
                let dx: Vec<T> = gy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                self.accumulate(
                    grads,
                    ins[0],
                    Tensor::new(self.value(ins[0]).shape().to_vec(), dx),
                );
            }
            Op::Concat { axis } => {
                let a = self.value(ins[0]);
                let b = self.value(ins[1]);
                let (ra, ca) = a.dims2();
                let (rb, cb) = b.dims2();
                if *axis == 0 {
                    let split = ra * ca;
                    self.accumulate(
                        grads,
                        ins[0],
                        Tensor::new(vec![ra, ca], gy.data()[..split].to_vec()),
                    );
                    self.accumulate(
                        grads,
                        ins[1],
                        Tensor::new(vec![rb, cb], gy.data()[split..].to_vec()),
                    );
                } else {
                    let mut da = Vec::with_capacity(ra * ca);
                    let mut db = Vec::with_capacity(rb * cb);
                    for i in 0..ra {
                        let row = &gy.data()[i * (ca + cb)..(i + 1) * (ca + cb)];
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    self.accumulate(grads, ins[0], Tensor::new(vec![ra, ca], da));
                    self.accumulate(grads, ins[1], Tensor::new(vec![rb, cb], db));
                }
            }
            Op::SliceRows { start } => {
                let x = self.value(ins[0]);
                let (_, c) = x.dims2();
                let mut dx = Tensor::zeros(x.shape());
                let off = start * c;
                dx.data_mut()[off..off + gy.numel()].copy_from_slice(gy.data());
                self.accumulate(grads, ins[0], dx);
            }
            Op::SliceCols { start, end } => {
                let x = self.value(ins[0]);
                let (r, c) = x.dims2();
                let w = end - start;
                let mut dx = Tensor::zeros(x.shape());
                for i in 0..r {
                    dx.data_mut()[i * c + start..i * c + end]
                        .copy_from_slice(&gy.data()[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::GatherRows { indices } => {
                let x = self.value(ins[0]);
                let (_, c) = x.dims2();
                let mut dx = Tensor::zeros(x.shape());
                for (i, &id) in indices.iter().enumerate() {
                    let src = &gy.data()[i * c..(i + 1) * c];
                    let dst = &mut dx.data_mut()[id * c..(id + 1) * c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
                self.accumulate(grads, ins[0], dx);
            }
            Op::MaskedMse | Op::MaskedMae => {
                let mae = matches!(node.op, Op::MaskedMae);
                let p = self.value(ins[0]);
                let t = self.value(ins[1]);
                let m = self.value(ins[2]);
                let msum: T = m.data().iter().cloned().sum();
                if msum == T::zero() {
                    return;
                }
                let g0 = gy.data()[0];
                let two = T::from_f64x(2.0);
                let dp: Vec<T> = (0..p.numel())
                    .map(|i| {
                        let d = p.data()[i] - t.data()[i];
                        let dd = if mae {
                            if d > T::zero() {
                                T::one()
                            } else if d < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            }
                        } else {
                            two * d
                        };
                        g0 * m.data()[i] * dd / msum
                    })
                    .collect();
                if self.nodes[ins[1].0].needs_grad {
                    let dt: Vec<T> = dp.iter().map(|&v| -v).collect();
                    self.accumulate(grads, ins[1], Tensor::new(t.shape().to_vec(), dt));
                }
                self.accumulate(grads, ins[0], Tensor::new(p.shape().to_vec(), dp));
            }
        }
    }
}

/// Reduce a gradient to the (suffix-broadcast) shape of `target`.
fn reduce_to<T: Scalar>(gy: &Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    let rn = target.numel();
    if gy.numel() == rn {
        return Tensor::new(target.shape().to_vec(), gy.data().to_vec());
    }
    let mut out = vec![T::zero(); rn];
    for (i, &g) in gy.data().iter().enumerate() {
        out[i % rn] = out[i % rn] + g;
    }
    Tensor::new(target.shape().to_vec(), out)
}

fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// C += A @ B^T, A (M,K), B (N,K).
fn matmul_nt_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let dot: T = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            out[i * n + j] = out[i * n + j] + dot;
        }
    }
}

/// C += A^T @ B, A (M,K), B (M,N), C (K,N).
fn matmul_tn_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let i = g.input(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softmax_symmetry() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::new(vec![3], vec![0.0, 0.0, 0.0]));
        let s = g.softmax(a);
        for &v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn layer_norm_constant_vector_is_zero() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::new(vec![4], vec![2.5; 4]));
        let y = g.layer_norm(a);
        for &v in g.value(y).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn square_gradient() {
        // f(x) = x*x at x=3 -> df/dx = 6
        let mut g = Graph::<f64>::new();
        let x = g.param("x", &Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!((grads.of_param("x").unwrap().data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn relu_sum_gradient() {
        // f(x) = sum(relu(x)), x = [-1, 2] -> grad [0, 1]
        let mut g = Graph::<f64>::new();
        let x = g.param("x", &Tensor::new(vec![2], vec![-1.0, 2.0]));
        let r = g.relu(x);
        let ones = g.input(Tensor::new(vec![2], vec![1.0, 1.0]));
        let zeros = g.input(Tensor::zeros(&[2]));
        // sum via masked mse against zeros would square; use mae with target 0
        let loss = g.masked_mae(r, zeros, ones).unwrap();
        // masked mae normalizes by sum(mask) = 2
        let grads = g.backward(loss).unwrap();
        let gx = grads.of_param("x").unwrap().data();
        assert_eq!(gx[0], 0.0);
        assert!((gx[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param("x", &Tensor::new(vec![2], vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unused_param_gets_zero_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.param("x", &Tensor::scalar(3.0));
        let _unused = g.param("w", &Tensor::new(vec![2], vec![1.0, 1.0]));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.of_param("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn masked_positions_have_zero_grad() {
        let mut g = Graph::<f64>::new();
        let p = g.param("p", &Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]));
        let t = g.input(Tensor::new(vec![4], vec![0.0; 4]));
        let m = g.input(Tensor::new(vec![4], vec![1.0, 1.0, 0.0, 0.0]));
        let loss = g.masked_mse(p, t, m).unwrap();
        let grads = g.backward(loss).unwrap();
        let gp = grads.of_param("p").unwrap().data();
        assert_ne!(gp[0], 0.0);
        assert_ne!(gp[1], 0.0);
        assert_eq!(gp[2], 0.0);
        assert_eq!(gp[3], 0.0);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[4, 5]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 5]"), "{err}");
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let y = g.dropout(x, 0.5);
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_deterministic_per_seed() {
        let run = |seed| {
            let mut g = Graph::<f32>::train(seed);
            let x = g.input(Tensor::new(vec![64], vec![1.0; 64]));
            let y = g.dropout(x, 0.5);
            g.value(y).data().to_vec()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }
}

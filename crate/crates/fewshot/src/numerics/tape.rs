//! Reverse-mode differentiation over a recorded operation trace.
//!
//! Each differentiable operation appends a node holding its output tensor and
//! the identities of its inputs. `backward` replays the trace in reverse,
//! accumulating vector-Jacobian products into every node that can reach a
//! trainable leaf. Nodes that cannot (constants, dropout masks, frozen
//! parameters) are skipped entirely.

use rand::Rng;

use super::ops::{self, RowReduce};
use super::{Mode, NumericsError, ParameterSet, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { input: NodeId, weights: NodeId, bias: NodeId },
    Relu { input: NodeId },
    Sigmoid { input: NodeId },
    Tanh { input: NodeId },
    Sqrt { input: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { input: NodeId, factor: f64 },
    Concat { parts: Vec<NodeId> },
    Slice { input: NodeId, offset: usize },
    Stack { rows: Vec<NodeId> },
    MeanRows { input: NodeId },
    MaxRows { input: NodeId, arg: Vec<usize> },
    MinRows { input: NodeId, arg: Vec<usize> },
    SumAll { input: NodeId },
    Conv1d { input: NodeId, kernel: NodeId, bias: NodeId },
    MaxPoolPairs { input: NodeId, arg: Vec<usize> },
    LogSumExp { input: NodeId },
    Pick { input: NodeId, index: usize },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Ordered trace of executed differentiable operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant input: gradients are never propagated into it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// Differentiable leaf (a trainable parameter).
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn dense(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let out = ops::dense_forward(self.value(input), self.value(weights), self.value(bias))?;
        let ng = self.any_grad(&[input, weights, bias]);
        Ok(self.push(out, ng, Op::Dense { input, weights, bias }))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = ops::relu(self.value(input));
        let ng = self.nodes[input.0].needs_grad;
        self.push(out, ng, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let out = ops::sigmoid(self.value(input));
        let ng = self.nodes[input.0].needs_grad;
        self.push(out, ng, Op::Sigmoid { input })
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let out = ops::tanh(self.value(input));
        let ng = self.nodes[input.0].needs_grad;
        self.push(out, ng, Op::Tanh { input })
    }

    pub fn sqrt(&mut self, input: NodeId) -> NodeId {
        let data = self.value(input).data().iter().map(|v| v.sqrt()).collect();
        let out = Tensor::new(self.value(input).shape().to_vec(), data).unwrap();
        let ng = self.nodes[input.0].needs_grad;
        self.push(out, ng, Op::Sqrt { input })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, ng, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, ng, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, ng, Op::Mul { a, b }))
    }

    fn zip(&self, a: NodeId, b: NodeId, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: match op {
                    "add" => "add",
                    "sub" => "sub",
                    _ => "mul",
                },
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let data = self.value(input).data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(self.value(input).shape().to_vec(), data).unwrap();
        let ng = self.nodes[input.0].needs_grad;
        self.push(out, ng, Op::Scale { input, factor })
    }

    /// Concatenation of 1-D vectors into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyInput { op: "concat" });
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let ng = self.any_grad(parts);
        Ok(self.push(
            Tensor::from_vec(data),
            ng,
            Op::Concat { parts: parts.to_vec() },
        ))
    }

    /// Contiguous slice of a 1-D vector.
    pub fn slice(&mut self, input: NodeId, offset: usize, len: usize) -> Result<NodeId> {
        let t = self.value(input);
        if offset + len > t.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "slice",
                left: t.shape().to_vec(),
                right: vec![offset, len],
            });
        }
        let data = t.data()[offset..offset + len].to_vec();
        let ng = self.nodes[input.0].needs_grad;
        Ok(self.push(Tensor::from_vec(data), ng, Op::Slice { input, offset }))
    }

    /// Stacks equally sized 1-D vectors into a `[rows, dim]` tensor.
    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(NumericsError::EmptyInput { op: "stack" });
        }
        let dim = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let t = self.value(*r);
            if t.len() != dim {
                return Err(NumericsError::ShapeMismatch {
                    op: "stack",
                    left: vec![dim],
                    right: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let ng = self.any_grad(rows);
        Ok(self.push(
            Tensor::new(vec![rows.len(), dim], data)?,
            ng,
            Op::Stack { rows: rows.to_vec() },
        ))
    }

    pub fn mean_rows(&mut self, input: NodeId) -> NodeId {
        let (out, _) = ops::reduce_rows(self.value(input), RowReduce::Mean);
        let ng = self.nodes[input.0].needs_grad;
        self.push(out, ng, Op::MeanRows { input })
    }

    pub fn max_rows(&mut self, input: NodeId) -> NodeId {
        let (out, arg) = ops::reduce_rows(self.value(input), RowReduce::Max);
        let ng = self.nodes[input.0].needs_grad;
        self.push(out, ng, Op::MaxRows { input, arg })
    }

    pub fn min_rows(&mut self, input: NodeId) -> NodeId {
        let (out, arg) = ops::reduce_rows(self.value(input), RowReduce::Min);
        let ng = self.nodes[input.0].needs_grad;
        self.push(out, ng, Op::MinRows { input, arg })
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.value(input).data().iter().sum();
        let ng = self.nodes[input.0].needs_grad;
        self.push(Tensor::scalar(s), ng, Op::SumAll { input })
    }

    pub fn conv1d_same(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let out = ops::conv1d_same(self.value(input), self.value(kernel), self.value(bias))?;
        let ng = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(out, ng, Op::Conv1d { input, kernel, bias }))
    }

    pub fn maxpool_pairs(&mut self, input: NodeId) -> NodeId {
        let (out, arg) = ops::maxpool_pairs(self.value(input));
        let ng = self.nodes[input.0].needs_grad;
        self.push(out, ng, Op::MaxPoolPairs { input, arg })
    }

    /// Stable log-sum-exp of a 1-D vector, producing a scalar.
    pub fn log_sum_exp(&mut self, input: NodeId) -> NodeId {
        let out = ops::log_sum_exp(self.value(input).data());
        let ng = self.nodes[input.0].needs_grad;
        self.push(Tensor::scalar(out), ng, Op::LogSumExp { input })
    }

    /// Single element of a 1-D vector as a scalar.
    pub fn pick(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(input);
        if index >= t.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "pick",
                left: t.shape().to_vec(),
                right: vec![index],
            });
        }
        let v = t.data()[index];
        let ng = self.nodes[input.0].needs_grad;
        Ok(self.push(Tensor::scalar(v), ng, Op::Pick { input, index }))
    }

    /// Inverted dropout: identity in eval mode or at p = 0, otherwise an
    /// elementwise product with a Bernoulli mask scaled by 1/(1-p).
    pub fn dropout(
        &mut self,
        input: NodeId,
        p: f64,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::InvalidProbability(p));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(input);
        }
        let mask = ops::dropout_mask(self.value(input).shape(), p, rng)?;
        let mask_id = self.constant(mask);
        self.mul(input, mask_id)
    }

    /// Reverse-mode gradients of a scalar node with respect to every
    /// gradient-carrying node on the tape.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_t = self.value(loss);
        if loss_t.len() != 1 {
            return Err(NumericsError::NotScalar {
                op: "backward",
                shape: loss_t.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let entries = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g).unwrap()))
            .collect();
        Ok(Gradients { entries })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, contribution: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = &mut grads[id.0];
        match slot {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn accumulate_at(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, index: usize, c: f64) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let n = self.nodes[id.0].value.len();
        let slot = grads[id.0].get_or_insert_with(|| vec![0.0; n]);
        slot[index] += c;
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Dense { input, weights, bias } => {
                let x = self.value(*input);
                let w = self.value(*weights);
                let d_out = w.shape()[0];
                let d_in = w.shape()[1];
                let rows = x.len() / d_in;
                if self.nodes[input.0].needs_grad {
                    let mut dx = vec![0.0; x.len()];
                    for r in 0..rows {
                        for o in 0..d_out {
                            let go = g[r * d_out + o];
                            let wrow = &w.data()[o * d_in..(o + 1) * d_in];
                            for (dxi, wi) in dx[r * d_in..(r + 1) * d_in].iter_mut().zip(wrow) {
                                *dxi += go * wi;
                            }
                        }
                    }
                    self.accumulate(grads, *input, &dx);
                }
                if self.nodes[weights.0].needs_grad {
                    let mut dw = vec![0.0; w.len()];
                    for r in 0..rows {
                        let xrow = &x.data()[r * d_in..(r + 1) * d_in];
                        for o in 0..d_out {
                            let go = g[r * d_out + o];
                            for (dwi, xi) in dw[o * d_in..(o + 1) * d_in].iter_mut().zip(xrow) {
                                *dwi += go * xi;
                            }
                        }
                    }
                    self.accumulate(grads, *weights, &dw);
                }
                if self.nodes[bias.0].needs_grad {
                    let mut db = vec![0.0; d_out];
                    for r in 0..rows {
                        for o in 0..d_out {
                            db[o] += g[r * d_out + o];
                        }
                    }
                    self.accumulate(grads, *bias, &db);
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                let dx: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *input, &dx);
            }
            Op::Sigmoid { input } => {
                let y = &self.nodes[i].value;
                let dx: Vec<f64> = y.data().iter().zip(g).map(|(y, g)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *input, &dx);
            }
            Op::Tanh { input } => {
                let y = &self.nodes[i].value;
                let dx: Vec<f64> = y.data().iter().zip(g).map(|(y, g)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *input, &dx);
            }
            Op::Sqrt { input } => {
                let y = &self.nodes[i].value;
                let dx: Vec<f64> = y
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(y, g)| g / (2.0 * y.max(1e-12)))
                    .collect();
                self.accumulate(grads, *input, &dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate(grads, *b, &neg);
            }
            Op::Mul { a, b } => {
                if self.nodes[a.0].needs_grad {
                    let db: Vec<f64> = self.value(*b).data().iter().zip(g).map(|(b, g)| b * g).collect();
                    self.accumulate(grads, *a, &db);
                }
                if self.nodes[b.0].needs_grad {
                    let da: Vec<f64> = self.value(*a).data().iter().zip(g).map(|(a, g)| a * g).collect();
                    self.accumulate(grads, *b, &da);
                }
            }
            Op::Scale { input, factor } => {
                let dx: Vec<f64> = g.iter().map(|v| v * factor).collect();
                self.accumulate(grads, *input, &dx);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.accumulate(grads, *p, &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::Slice { input, offset } => {
                if self.nodes[input.0].needs_grad {
                    for (j, gv) in g.iter().enumerate() {
                        self.accumulate_at(grads, *input, offset + j, *gv);
                    }
                }
            }
            Op::Stack { rows } => {
                let dim = self.value(rows[0]).len();
                for (r, row) in rows.iter().enumerate() {
                    self.accumulate(grads, *row, &g[r * dim..(r + 1) * dim]);
                }
            }
            Op::MeanRows { input } => {
                if self.nodes[input.0].needs_grad {
                    let shape = self.value(*input).shape();
                    let (rows, cols) = (shape[0], shape[1]);
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for j in 0..cols {
                            dx[r * cols + j] = g[j] / rows as f64;
                        }
                    }
                    self.accumulate(grads, *input, &dx);
                }
            }
            Op::MaxRows { input, arg } | Op::MinRows { input, arg } => {
                if self.nodes[input.0].needs_grad {
                    let cols = self.value(*input).shape()[1];
                    for (j, gv) in g.iter().enumerate() {
                        self.accumulate_at(grads, *input, arg[j] * cols + j, *gv);
                    }
                }
            }
            Op::SumAll { input } => {
                if self.nodes[input.0].needs_grad {
                    let dx = vec![g[0]; self.value(*input).len()];
                    self.accumulate(grads, *input, &dx);
                }
            }
            Op::Conv1d { input, kernel, bias } => {
                let x = self.value(*input);
                let w = self.value(*kernel);
                let (len, c_in) = (x.shape()[0], x.shape()[1]);
                let (filters, k) = (w.shape()[0], w.shape()[1]);
                let off = k / 2;
                if self.nodes[input.0].needs_grad {
                    let mut dx = vec![0.0; x.len()];
                    for p in 0..len {
                        for f in 0..filters {
                            let go = g[p * filters + f];
                            for t in 0..k {
                                let q = p + t;
                                if q < off || q - off >= len {
                                    continue;
                                }
                                let q = q - off;
                                let wrow = &w.data()[(f * k + t) * c_in..(f * k + t + 1) * c_in];
                                for (dxi, wi) in dx[q * c_in..(q + 1) * c_in].iter_mut().zip(wrow) {
                                    *dxi += go * wi;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *input, &dx);
                }
                if self.nodes[kernel.0].needs_grad {
                    let mut dw = vec![0.0; w.len()];
                    for p in 0..len {
                        for f in 0..filters {
                            let go = g[p * filters + f];
                            for t in 0..k {
                                let q = p + t;
                                if q < off || q - off >= len {
                                    continue;
                                }
                                let q = q - off;
                                let xrow = &x.data()[q * c_in..(q + 1) * c_in];
                                let base = (f * k + t) * c_in;
                                for (c, xi) in xrow.iter().enumerate() {
                                    dw[base + c] += go * xi;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *kernel, &dw);
                }
                if self.nodes[bias.0].needs_grad {
                    let mut db = vec![0.0; filters];
                    for p in 0..len {
                        for f in 0..filters {
                            db[f] += g[p * filters + f];
                        }
                    }
                    self.accumulate(grads, *bias, &db);
                }
            }
            Op::MaxPoolPairs { input, arg } => {
                if self.nodes[input.0].needs_grad {
                    for (j, gv) in g.iter().enumerate() {
                        self.accumulate_at(grads, *input, arg[j], *gv);
                    }
                }
            }
            Op::LogSumExp { input } => {
                if self.nodes[input.0].needs_grad {
                    let out = self.nodes[i].value.data()[0];
                    let dx: Vec<f64> = self
                        .value(*input)
                        .data()
                        .iter()
                        .map(|x| g[0] * (x - out).exp())
                        .collect();
                    self.accumulate(grads, *input, &dx);
                }
            }
            Op::Pick { input, index } => {
                self.accumulate_at(grads, *input, *index, g[0]);
            }
        }
    }
}

/// Gradient of the loss for every reachable node, indexed by `NodeId`.
pub struct Gradients {
    entries: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.entries.get(id.0).and_then(|e| e.as_ref())
    }
}

/// Parameter leaves inserted on a tape, addressable by parameter name.
pub struct BoundParams {
    ids: std::collections::BTreeMap<String, NodeId>,
}

/// Inserts every parameter of `params` as a leaf on `tape`. Trainable
/// parameters become differentiable leaves; frozen ones become constants, so
/// no gradient work is spent on them.
pub fn bind_params(tape: &mut Tape, params: &ParameterSet) -> BoundParams {
    let mut ids = std::collections::BTreeMap::new();
    for (name, p) in params.iter() {
        let id = if p.trainable {
            tape.variable(p.value.clone())
        } else {
            tape.constant(p.value.clone())
        };
        ids.insert(name.clone(), id);
    }
    BoundParams { ids }
}

impl BoundParams {
    /// Wraps an existing name → node mapping (for callers that bound the
    /// leaves themselves).
    pub fn from_ids(ids: std::collections::BTreeMap<String, NodeId>) -> Self {
        BoundParams { ids }
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    /// Gradient tensors per trainable parameter; zero where no gradient flowed.
    pub fn collect_gradients(
        &self,
        grads: &Gradients,
        params: &ParameterSet,
    ) -> std::collections::BTreeMap<String, Tensor> {
        let mut out = std::collections::BTreeMap::new();
        for (name, id) in &self.ids {
            let p = params.get(name).expect("bound name exists");
            if !p.trainable {
                continue;
            }
            let g = grads
                .get(*id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()));
            out.insert(name.clone(), g);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_square_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_vec(vec![3.0]));
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        // linearity on a small graph: d(l1 + l2)/dx == d l1/dx + d l2/dx
        let build = |with_both: bool| -> (f64, f64) {
            let mut tape = Tape::new();
            let x = tape.variable(Tensor::from_vec(vec![2.0]));
            let sq = tape.mul(x, x).unwrap();
            let l1 = tape.sum_all(sq);
            let l2 = tape.scale(x, 5.0);
            let l2 = tape.sum_all(l2);
            let loss = if with_both { tape.add(l1, l2).unwrap() } else { l1 };
            let g = tape.backward(loss).unwrap();
            (tape.value(loss).item().unwrap(), g.get(x).unwrap().data()[0])
        };
        let (_, g_sum) = build(true);
        let (_, g_l1) = build(false);
        // l2 alone has gradient 5
        assert!((g_sum - (g_l1 + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_vec(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let y = tape.mul(x, c).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_vec(vec![1.5]));
        let a = tape.scale(x, 2.0);
        let b = tape.scale(x, 3.0);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum_all(s);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn log_sum_exp_gradient_is_softmax() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let l = tape.log_sum_exp(x);
        let grads = tape.backward(l).unwrap();
        let g = grads.get(x).unwrap();
        let z: f64 = [1.0, 2.0, 3.0].iter().map(|v: &f64| v.exp()).sum();
        for (gi, xi) in g.data().iter().zip([1.0_f64, 2.0, 3.0]) {
            assert!((gi - xi.exp() / z).abs() < 1e-12);
        }
        let total: f64 = g.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }
}

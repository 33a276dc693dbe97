use crate::error::{Error, Result};

use super::params::ParamStore;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(pub(crate) usize);

enum Op {
    Leaf,
    Relu(Value),
    Sigmoid(Value),
    Tanh(Value),
    Add(Value, Value),
    Mul(Value, Value),
    ScaleConst(Value, f64),
    /// vector * scalar value
    Scale(Value, Value),
    Concat(Vec<Value>),
    MeanOf(Vec<Value>),
    Sum(Value),
    Linear {
        x: Value,
        w: Value,
        b: Option<Value>,
    },
    Row {
        m: Value,
        idx: usize,
    },
    Slice {
        v: Value,
        start: usize,
    },
    SoftmaxCrossEntropy {
        logits: Value,
        label: usize,
    },
    SmoothL1 {
        pred: Value,
        target: Vec<f64>,
    },
}

struct Node {
    data: Vec<f64>,
    grad: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
}

/// Dynamic computation tape. Nodes only reference earlier nodes, so index
/// order is a valid topological order for the backward sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(String, Value)>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op) -> Value {
        debug_assert_eq!(data.len(), numel(&shape));
        let grad = vec![0.0; data.len()];
        self.nodes.push(Node {
            data,
            grad,
            shape,
            op,
        });
        Value(self.nodes.len() - 1)
    }

    /// Constant leaf (gradients are tracked but never read back).
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Value {
        self.push(data, shape, Op::Leaf)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Value {
        let n = data.len();
        self.push(data, vec![n], Op::Leaf)
    }

    pub fn zeros(&mut self, n: usize) -> Value {
        self.constant_vec(vec![0.0; n])
    }

    /// Leaf bound to a named parameter; `flush_grads` adds the accumulated
    /// gradient back onto the store entry.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Value> {
        let tensor = store.get(name)?;
        let v = self.push(tensor.data.clone(), tensor.shape.clone(), Op::Leaf);
        self.bindings.push((name.to_string(), v));
        Ok(v)
    }

    pub fn data(&self, v: Value) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn grad(&self, v: Value) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Value) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn same_shape(&self, a: Value, b: Value, context: &'static str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                context,
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn relu(&mut self, x: Value) -> Value {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(data, shape, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| sigmoid(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(data, shape, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Value) -> Value {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.tanh()).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(data, shape, Op::Tanh(x))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(data, shape, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.same_shape(a, b, "mul")?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(data, shape, Op::Mul(a, b)))
    }

    pub fn scale_const(&mut self, x: Value, c: f64) -> Value {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(data, shape, Op::ScaleConst(x, c))
    }

    /// Elementwise product of `x` with a scalar-valued node.
    pub fn scale(&mut self, x: Value, s: Value) -> Result<Value> {
        if self.nodes[s.0].data.len() != 1 {
            return Err(Error::ShapeMismatch {
                context: "scale: scalar operand",
                left: self.nodes[x.0].shape.clone(),
                right: self.nodes[s.0].shape.clone(),
            });
        }
        let sv = self.nodes[s.0].data[0];
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v * sv).collect();
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(data, shape, Op::Scale(x, s)))
    }

    pub fn concat(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::invalid("concat: empty input list"));
        }
        let mut data = Vec::new();
        for p in parts {
            if self.nodes[p.0].shape.len() > 1 {
                return Err(Error::ShapeMismatch {
                    context: "concat: vector inputs only",
                    left: self.nodes[p.0].shape.clone(),
                    right: vec![],
                });
            }
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let n = data.len();
        Ok(self.push(data, vec![n], Op::Concat(parts.to_vec())))
    }

    /// Elementwise mean over a non-empty list of same-shaped values.
    pub fn mean_of(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::invalid("mean_of: empty input list"));
        }
        for p in &parts[1..] {
            self.same_shape(parts[0], *p, "mean_of")?;
        }
        let n = self.nodes[parts[0].0].data.len();
        let mut data = vec![0.0; n];
        for p in parts {
            for (d, v) in data.iter_mut().zip(&self.nodes[p.0].data) {
                *d += v;
            }
        }
        let inv = 1.0 / parts.len() as f64;
        for d in &mut data {
            *d *= inv;
        }
        let shape = self.nodes[parts[0].0].shape.clone();
        Ok(self.push(data, shape, Op::MeanOf(parts.to_vec())))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Value) -> Value {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        self.push(vec![s], vec![1], Op::Sum(x))
    }

    /// `W x + b` with `W: [out, in]`, `x: [in]`.
    pub fn linear(&mut self, x: Value, w: Value, b: Option<Value>) -> Result<Value> {
        let wshape = &self.nodes[w.0].shape;
        if wshape.len() != 2 {
            return Err(Error::ShapeMismatch {
                context: "linear: weight must be a matrix",
                left: wshape.clone(),
                right: vec![],
            });
        }
        let (out_dim, in_dim) = (wshape[0], wshape[1]);
        if self.nodes[x.0].data.len() != in_dim {
            return Err(Error::ShapeMismatch {
                context: "linear: input dim",
                left: self.nodes[x.0].shape.clone(),
                right: wshape.clone(),
            });
        }
        if let Some(bias) = b {
            if self.nodes[bias.0].data.len() != out_dim {
                return Err(Error::ShapeMismatch {
                    context: "linear: bias dim",
                    left: self.nodes[bias.0].shape.clone(),
                    right: vec![out_dim],
                });
            }
        }
        let mut data = vec![0.0; out_dim];
        {
            let wdata = &self.nodes[w.0].data;
            let xdata = &self.nodes[x.0].data;
            for (o, slot) in data.iter_mut().enumerate() {
                let row = &wdata[o * in_dim..(o + 1) * in_dim];
                let mut acc = 0.0;
                for (wv, xv) in row.iter().zip(xdata) {
                    acc += wv * xv;
                }
                *slot = acc;
            }
            if let Some(bias) = b {
                for (slot, bv) in data.iter_mut().zip(&self.nodes[bias.0].data) {
                    *slot += bv;
                }
            }
        }
        Ok(self.push(data, vec![out_dim], Op::Linear { x, w, b }))
    }

    /// Row `idx` of a matrix value, as a vector (used for embedding lookup).
    pub fn row(&mut self, m: Value, idx: usize) -> Result<Value> {
        let shape = &self.nodes[m.0].shape;
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                context: "row: matrix expected",
                left: shape.clone(),
                right: vec![],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if idx >= rows {
            return Err(Error::IndexOutOfRange(format!(
                "row {idx} of {rows}x{cols} matrix"
            )));
        }
        let data = self.nodes[m.0].data[idx * cols..(idx + 1) * cols].to_vec();
        Ok(self.push(data, vec![cols], Op::Row { m, idx }))
    }

    /// Contiguous slice `[start, start+len)` of a vector.
    pub fn slice(&mut self, v: Value, start: usize, len: usize) -> Result<Value> {
        let n = self.nodes[v.0].data.len();
        if start + len > n {
            return Err(Error::IndexOutOfRange(format!(
                "slice [{start}, {}) of vector of length {n}",
                start + len
            )));
        }
        let data = self.nodes[v.0].data[start..start + len].to_vec();
        Ok(self.push(data, vec![len], Op::Slice { v, start }))
    }

    /// `-log softmax(logits)[label]`, numerically stable.
    pub fn softmax_cross_entropy(&mut self, logits: Value, label: usize) -> Result<Value> {
        let n = self.nodes[logits.0].data.len();
        if label >= n {
            return Err(Error::IndexOutOfRange(format!(
                "label {label} for {n} logits"
            )));
        }
        let data = &self.nodes[logits.0].data;
        let (max_idx, max_val) = argmax(data);
        let rest: f64 = data
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != max_idx)
            .map(|(_, &v)| (v - max_val).exp())
            .sum();
        // loss = logsumexp - l[label]; keeping the subtraction inside the
        // shifted domain avoids cancellation when the label dominates.
        let loss = (max_val - data[label]) + rest.ln_1p();
        Ok(self.push(vec![loss], vec![1], Op::SoftmaxCrossEntropy { logits, label }))
    }

    /// Elementwise smooth L1 against a constant target, summed:
    /// `0.5 d^2` for `|d| < 1`, else `|d| - 0.5`.
    pub fn smooth_l1(&mut self, pred: Value, target: &[f64]) -> Result<Value> {
        if self.nodes[pred.0].data.len() != target.len() {
            return Err(Error::ShapeMismatch {
                context: "smooth_l1",
                left: self.nodes[pred.0].shape.clone(),
                right: vec![target.len()],
            });
        }
        let mut loss = 0.0;
        for (p, t) in self.nodes[pred.0].data.iter().zip(target) {
            let d = p - t;
            loss += if d.abs() < 1.0 {
                0.5 * d * d
            } else {
                d.abs() - 0.5
            };
        }
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::SmoothL1 {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar loss. Each call computes the gradients of
    /// this pass into fresh buffers and adds them onto the stored grads, so
    /// repeated calls accumulate; use [`Tape::zero_grads`] in between for
    /// fresh gradients.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut local: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .take(loss.0 + 1)
            .map(|n| vec![0.0; n.data.len()])
            .collect();
        local[loss.0][0] = 1.0;
        for i in (0..=loss.0).rev() {
            let up = std::mem::take(&mut local[i]);
            self.propagate(i, &up, &mut local);
            local[i] = up;
        }
        for (node, l) in self.nodes.iter_mut().zip(&local) {
            for (g, d) in node.grad.iter_mut().zip(l) {
                *g += d;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, up: &[f64], local: &mut [Vec<f64>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Relu(x) => {
                for k in 0..up.len() {
                    if self.nodes[x.0].data[k] > 0.0 {
                        local[x.0][k] += up[k];
                    }
                }
            }
            Op::Sigmoid(x) => {
                for k in 0..up.len() {
                    let s = self.nodes[i].data[k];
                    local[x.0][k] += up[k] * s * (1.0 - s);
                }
            }
            Op::Tanh(x) => {
                for k in 0..up.len() {
                    let t = self.nodes[i].data[k];
                    local[x.0][k] += up[k] * (1.0 - t * t);
                }
            }
            Op::Add(a, b) => {
                for k in 0..up.len() {
                    local[a.0][k] += up[k];
                }
                for k in 0..up.len() {
                    local[b.0][k] += up[k];
                }
            }
            Op::Mul(a, b) => {
                for k in 0..up.len() {
                    local[a.0][k] += up[k] * self.nodes[b.0].data[k];
                }
                for k in 0..up.len() {
                    local[b.0][k] += up[k] * self.nodes[a.0].data[k];
                }
            }
            Op::ScaleConst(x, c) => {
                for k in 0..up.len() {
                    local[x.0][k] += up[k] * c;
                }
            }
            Op::Scale(x, s) => {
                let sv = self.nodes[s.0].data[0];
                let mut sg = 0.0;
                for k in 0..up.len() {
                    local[x.0][k] += up[k] * sv;
                    sg += up[k] * self.nodes[x.0].data[k];
                }
                local[s.0][0] += sg;
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.nodes[p.0].data.len();
                    for k in 0..n {
                        local[p.0][k] += up[offset + k];
                    }
                    offset += n;
                }
            }
            Op::MeanOf(parts) => {
                let inv = 1.0 / parts.len() as f64;
                for p in parts {
                    for k in 0..up.len() {
                        local[p.0][k] += up[k] * inv;
                    }
                }
            }
            Op::Sum(x) => {
                for k in 0..self.nodes[x.0].data.len() {
                    local[x.0][k] += up[0];
                }
            }
            Op::Linear { x, w, b } => {
                let in_dim = self.nodes[w.0].shape[1];
                let out_dim = self.nodes[w.0].shape[0];
                for o in 0..out_dim {
                    let g = up[o];
                    if g == 0.0 {
                        continue;
                    }
                    for k in 0..in_dim {
                        let wv = self.nodes[w.0].data[o * in_dim + k];
                        let xv = self.nodes[x.0].data[k];
                        local[x.0][k] += g * wv;
                        local[w.0][o * in_dim + k] += g * xv;
                    }
                    if let Some(bias) = b {
                        local[bias.0][o] += g;
                    }
                }
            }
            Op::Row { m, idx } => {
                let cols = self.nodes[m.0].shape[1];
                for k in 0..cols {
                    local[m.0][idx * cols + k] += up[k];
                }
            }
            Op::Slice { v, start } => {
                for k in 0..up.len() {
                    local[v.0][start + k] += up[k];
                }
            }
            Op::SoftmaxCrossEntropy { logits, label } => {
                let data = &self.nodes[logits.0].data;
                let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = data.iter().map(|&v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for k in 0..exps.len() {
                    let p = exps[k] / z;
                    let onehot = if k == *label { 1.0 } else { 0.0 };
                    local[logits.0][k] += up[0] * (p - onehot);
                }
            }
            Op::SmoothL1 { pred, target } => {
                for (k, t) in target.iter().enumerate() {
                    let d = self.nodes[pred.0].data[k] - t;
                    local[pred.0][k] += up[0] * d.clamp(-1.0, 1.0);
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            for g in &mut node.grad {
                *g = 0.0;
            }
        }
    }

    /// Add each bound parameter's tape gradient onto the store gradient.
    pub fn flush_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (name, v) in &self.bindings {
            store.add_grad(name, &self.nodes[v.0].grad)?;
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn argmax(data: &[f64]) -> (usize, f64) {
    let mut idx = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, &v) in data.iter().enumerate() {
        if v > best {
            best = v;
            idx = i;
        }
    }
    (idx, best)
}

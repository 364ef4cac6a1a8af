//! Reverse-mode automatic differentiation over the tensor kernels.
//!
//! A `Graph` is built define-by-run: every operation computes its forward
//! value immediately and records what it needs for the backward sweep. Nodes
//! are append-only, so insertion order is a topological order and `backward`
//! is a single reverse pass accumulating adjoints by the chain rule.

use crate::tensor::{self, Padding, ShapeError, Tensor};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("backward root must be scalar, got {len} elements")]
    NonScalarRoot { len: usize },
    #[error("backward has already run on this graph")]
    BackwardAlreadyRun,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// A trainable tensor with its momentum buffer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub momentum: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Parameter {
        let momentum = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            momentum,
        }
    }
}

/// Per-parameter adjoints aligned with a model's parameter list. `None` means
/// the parameter did not appear in the graph at all.
#[derive(Debug, Clone)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn none(n_params: usize) -> Gradients {
        Gradients {
            slots: vec![None; n_params],
        }
    }

    pub fn from_slots(slots: Vec<Option<Tensor>>) -> Gradients {
        Gradients { slots }
    }

    pub fn get(&self, param: usize) -> Option<&Tensor> {
        self.slots[param].as_ref()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// `self += other * scale`, treating missing slots as zero.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (dst, src) in self.slots.iter_mut().zip(other.slots.iter()) {
            if let Some(s) = src {
                match dst {
                    Some(d) => d.add_scaled(s, scale),
                    None => {
                        let mut t = Tensor::zeros(s.shape());
                        t.add_scaled(s, scale);
                        *dst = Some(t);
                    }
                }
            }
        }
    }
}

enum Op {
    /// Leaf holding a constant or network input.
    Input,
    /// Leaf bound to a model parameter; the index lives in `Graph::param_nodes`.
    Param,
    Conv2d(Padding),
    MaxPool { argmax: Vec<usize> },
    Upsample,
    Concat,
    Dense,
    Relu,
    Sigmoid,
    /// Fused softmax + categorical cross-entropy on logits; scalar output.
    SoftmaxCrossEntropy { label: usize, probs: Tensor },
    Add,
    Scale(f64),
    Reshape,
    /// Scalar pick of one component of a rank-1 value.
    Select(usize),
    /// Scalar sum of all elements.
    Sum,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Append-only computation record; one per forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<(usize, NodeId)>,
    ran_backward: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            param_nodes: Vec::new(),
            ran_backward: false,
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, inputs, value });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, vec![], value)
    }

    pub fn param(&mut self, index: usize, value: &Tensor) -> NodeId {
        let id = self.push(Op::Param, vec![], value.clone());
        self.param_nodes.push((index, id));
        id
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId, AutodiffError> {
        let value = tensor::conv2d(
            self.value(input),
            self.value(kernels),
            self.value(bias),
            padding,
        )?;
        Ok(self.push(Op::Conv2d(padding), vec![input, kernels, bias], value))
    }

    pub fn maxpool2x2(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        let (value, argmax) = tensor::maxpool2x2(self.value(input))?;
        Ok(self.push(Op::MaxPool { argmax }, vec![input], value))
    }

    pub fn upsample2x(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        let value = tensor::upsample2x(self.value(input))?;
        Ok(self.push(Op::Upsample, vec![input], value))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let value = tensor::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(Op::Concat, vec![a, b], value))
    }

    pub fn dense(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let value = tensor::dense(self.value(input), self.value(weights), self.value(bias))?;
        Ok(self.push(Op::Dense, vec![input, weights, bias], value))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = tensor::relu(self.value(input));
        self.push(Op::Relu, vec![input], value)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = tensor::sigmoid(self.value(input));
        self.push(Op::Sigmoid, vec![input], value)
    }

    /// Fused stable softmax + cross-entropy against a one-hot label.
    /// The loss is computed in log space, so no probability floor is needed.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        label: usize,
    ) -> Result<NodeId, AutodiffError> {
        let z = self.value(logits);
        if z.rank() != 1 {
            return Err(ShapeError::RankMismatch {
                op: "softmax_cross_entropy",
                expected: 1,
                got: z.rank(),
            }
            .into());
        }
        let classes = z.len();
        if label >= classes {
            return Err(AutodiffError::LabelOutOfRange { label, classes });
        }
        let max = z.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.data().iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let loss = sum.ln() - (z.data()[label] - max);
        let probs = Tensor::from_vec(vec![classes], exps.into_iter().map(|e| e / sum).collect())?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy { label, probs },
            vec![logits],
            Tensor::scalar(loss),
        ))
    }

    /// Softmax probabilities cached by a `softmax_cross_entropy` node.
    pub fn cross_entropy_probs(&self, id: NodeId) -> Option<&Tensor> {
        match &self.nodes[id].op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(ShapeError::AxisMismatch {
                op: "add",
                axis: "element count",
                expected: ta.len(),
                got: tb.len(),
            }
            .into());
        }
        let mut value = ta.clone();
        value.add_scaled(tb, 1.0);
        Ok(self.push(Op::Add, vec![a, b], value))
    }

    pub fn scale(&mut self, input: NodeId, k: f64) -> NodeId {
        let mut value = self.value(input).clone();
        value.scale_inplace(k);
        self.push(Op::Scale(k), vec![input], value)
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId, AutodiffError> {
        let value = self.value(input).reshaped(shape)?;
        Ok(self.push(Op::Reshape, vec![input], value))
    }

    pub fn flatten(&mut self, input: NodeId) -> NodeId {
        let value = tensor::flatten(self.value(input));
        self.push(Op::Reshape, vec![input], value)
    }

    pub fn select(&mut self, input: NodeId, index: usize) -> Result<NodeId, AutodiffError> {
        let t = self.value(input);
        if t.rank() != 1 {
            return Err(ShapeError::RankMismatch {
                op: "select",
                expected: 1,
                got: t.rank(),
            }
            .into());
        }
        if index >= t.len() {
            return Err(ShapeError::AxisMismatch {
                op: "select",
                axis: "index",
                expected: t.len(),
                got: index,
            }
            .into());
        }
        let value = Tensor::scalar(t.data()[index]);
        Ok(self.push(Op::Select(index), vec![input], value))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let total: f64 = self.value(input).data().iter().sum();
        self.push(Op::Sum, vec![input], Tensor::scalar(total))
    }

    /// Reverse sweep from a scalar root. Each graph may run backward once.
    pub fn backward(&mut self, root: NodeId) -> Result<Backward, AutodiffError> {
        if self.ran_backward {
            return Err(AutodiffError::BackwardAlreadyRun);
        }
        let root_len = self.value(root).len();
        if root_len != 1 {
            return Err(AutodiffError::NonScalarRoot { len: root_len });
        }
        self.ran_backward = true;

        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[root] = Some(Tensor::scalar(1.0));

        for id in (0..=root).rev() {
            let Some(oadj) = adjoints[id].take() else {
                continue;
            };
            self.accumulate_inputs(id, &oadj, &mut adjoints);
            adjoints[id] = Some(oadj);
        }
        Ok(Backward { adjoints })
    }

    fn accumulate_inputs(&self, id: NodeId, oadj: &Tensor, adjoints: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let add_to = |target: NodeId, grad: Tensor, adjoints: &mut [Option<Tensor>]| {
            match &mut adjoints[target] {
                Some(existing) => existing.add_scaled(&grad, 1.0),
                slot @ None => *slot = Some(grad),
            }
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Conv2d(padding) => {
                let x = self.value(node.inputs[0]);
                let k = self.value(node.inputs[1]);
                let (dx, dk, db) = conv2d_backward(x, k, oadj, *padding);
                add_to(node.inputs[0], dx, adjoints);
                add_to(node.inputs[1], dk, adjoints);
                add_to(node.inputs[2], db, adjoints);
            }
            Op::MaxPool { argmax } => {
                let x = self.value(node.inputs[0]);
                let mut dx = Tensor::zeros(x.shape());
                for (o, &src) in argmax.iter().enumerate() {
                    dx.data_mut()[src] += oadj.data()[o];
                }
                add_to(node.inputs[0], dx, adjoints);
            }
            Op::Upsample => {
                let x = self.value(node.inputs[0]);
                let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let mut dx = Tensor::zeros(x.shape());
                for i in 0..h {
                    for j in 0..w {
                        for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let src = ((2 * i + di) * 2 * w + 2 * j + dj) * c;
                            let dst = (i * w + j) * c;
                            for ci in 0..c {
                                dx.data_mut()[dst + ci] += oadj.data()[src + ci];
                            }
                        }
                    }
                }
                add_to(node.inputs[0], dx, adjoints);
            }
            Op::Concat => {
                let a = self.value(node.inputs[0]);
                let b = self.value(node.inputs[1]);
                let (h, w) = (a.shape()[0], a.shape()[1]);
                let (ca, cb) = (a.shape()[2], b.shape()[2]);
                let mut da = Tensor::zeros(a.shape());
                let mut db = Tensor::zeros(b.shape());
                for p in 0..h * w {
                    let src = p * (ca + cb);
                    da.data_mut()[p * ca..(p + 1) * ca]
                        .copy_from_slice(&oadj.data()[src..src + ca]);
                    db.data_mut()[p * cb..(p + 1) * cb]
                        .copy_from_slice(&oadj.data()[src + ca..src + ca + cb]);
                }
                add_to(node.inputs[0], da, adjoints);
                add_to(node.inputs[1], db, adjoints);
            }
            Op::Dense => {
                let x = self.value(node.inputs[0]);
                let w = self.value(node.inputs[1]);
                let (n, m) = (w.shape()[0], w.shape()[1]);
                let mut dx = Tensor::zeros(x.shape());
                let mut dw = Tensor::zeros(w.shape());
                for i in 0..n {
                    let wrow = &w.data()[i * m..i * m + m];
                    let mut acc = 0.0;
                    for (wv, ov) in wrow.iter().zip(oadj.data().iter()) {
                        acc += wv * ov;
                    }
                    dx.data_mut()[i] = acc;
                    let xv = x.data()[i];
                    let drow = &mut dw.data_mut()[i * m..i * m + m];
                    for (d, ov) in drow.iter_mut().zip(oadj.data().iter()) {
                        *d = xv * ov;
                    }
                }
                add_to(node.inputs[0], dx, adjoints);
                add_to(node.inputs[1], dw, adjoints);
                add_to(node.inputs[2], oadj.clone(), adjoints);
            }
            Op::Relu => {
                let x = self.value(node.inputs[0]);
                let mut dx = oadj.clone();
                for (d, &xv) in dx.data_mut().iter_mut().zip(x.data().iter()) {
                    if xv <= 0.0 {
                        *d = 0.0;
                    }
                }
                add_to(node.inputs[0], dx, adjoints);
            }
            Op::Sigmoid => {
                let y = &node.value;
                let mut dx = oadj.clone();
                for (d, &yv) in dx.data_mut().iter_mut().zip(y.data().iter()) {
                    *d *= yv * (1.0 - yv);
                }
                add_to(node.inputs[0], dx, adjoints);
            }
            Op::SoftmaxCrossEntropy { label, probs } => {
                let g = oadj.data()[0];
                let mut dz = probs.clone();
                dz.data_mut()[*label] -= 1.0;
                dz.scale_inplace(g);
                add_to(node.inputs[0], dz, adjoints);
            }
            Op::Add => {
                add_to(node.inputs[0], oadj.clone(), adjoints);
                add_to(node.inputs[1], oadj.clone(), adjoints);
            }
            Op::Scale(k) => {
                let mut dx = oadj.clone();
                dx.scale_inplace(*k);
                add_to(node.inputs[0], dx, adjoints);
            }
            Op::Reshape => {
                let x = self.value(node.inputs[0]);
                let dx = oadj.reshaped(x.shape()).expect("reshape adjoint volume");
                add_to(node.inputs[0], dx, adjoints);
            }
            Op::Select(index) => {
                let x = self.value(node.inputs[0]);
                let mut dx = Tensor::zeros(x.shape());
                dx.data_mut()[*index] = oadj.data()[0];
                add_to(node.inputs[0], dx, adjoints);
            }
            Op::Sum => {
                let x = self.value(node.inputs[0]);
                let g = oadj.data()[0];
                add_to(node.inputs[0], Tensor::filled(x.shape(), g), adjoints);
            }
        }
    }
}

/// Adjoints produced by one backward sweep.
pub struct Backward {
    adjoints: Vec<Option<Tensor>>,
}

impl Backward {
    pub fn adjoint(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints[id].as_ref()
    }

    /// Collect parameter adjoints into slots aligned with a parameter list of
    /// length `n_params`. Parameters absent from the graph stay `None`.
    pub fn into_param_gradients(mut self, graph: &Graph, n_params: usize) -> Gradients {
        let mut grads = Gradients::none(n_params);
        for &(param, node) in &graph.param_nodes {
            if let Some(adj) = self.adjoints[node].take() {
                match &mut grads.slots[param] {
                    Some(existing) => existing.add_scaled(&adj, 1.0),
                    slot @ None => *slot = Some(adj),
                }
            } else {
                // Parameter present in the graph but off the gradient path.
                grads.slots[param] = Some(Tensor::zeros(graph.value(node).shape()));
            }
        }
        grads
    }
}

fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    out_adj: &Tensor,
    padding: Padding,
) -> (Tensor, Tensor, Tensor) {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, f) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[3]);
    let (oh, ow) = (out_adj.shape()[0], out_adj.shape()[1]);
    let (ph, pw) = match padding {
        Padding::Same => (kh / 2, kw / 2),
        Padding::Valid => (0, 0),
    };

    // Kernels transposed to (kh, kw, f, c) so the d_input inner loop runs
    // contiguously over input channels.
    let kdat = kernels.data();
    let mut kt = vec![0.0f64; kdat.len()];
    for di in 0..kh {
        for dj in 0..kw {
            let base = (di * kw + dj) * c * f;
            for ci in 0..c {
                for fi in 0..f {
                    kt[base + fi * c + ci] = kdat[base + ci * f + fi];
                }
            }
        }
    }

    let mut dx = vec![0.0f64; h * w * c];
    let mut dk = vec![0.0f64; kdat.len()];
    let mut db = vec![0.0f64; f];
    let idat = input.data();
    let odat = out_adj.data();

    for oi in 0..oh {
        let di_lo = ph.saturating_sub(oi);
        let di_hi = (h + ph - oi).min(kh);
        for oj in 0..ow {
            let dj_lo = pw.saturating_sub(oj);
            let dj_hi = (w + pw - oj).min(kw);
            let orow = &odat[(oi * ow + oj) * f..(oi * ow + oj) * f + f];
            for (d, &o) in db.iter_mut().zip(orow.iter()) {
                *d += o;
            }
            for di in di_lo..di_hi {
                let iy = oi + di - ph;
                for dj in dj_lo..dj_hi {
                    let ix = oj + dj - pw;
                    let pix = (iy * w + ix) * c;
                    let kbase = (di * kw + dj) * c * f;
                    let dxrow = &mut dx[pix..pix + c];
                    for (fi, &ov) in orow.iter().enumerate() {
                        let ktrow = &kt[kbase + fi * c..kbase + fi * c + c];
                        for (d, &kv) in dxrow.iter_mut().zip(ktrow.iter()) {
                            *d += ov * kv;
                        }
                    }
                    let ipix = &idat[pix..pix + c];
                    for (ci, &xv) in ipix.iter().enumerate() {
                        let dkrow = &mut dk[kbase + ci * f..kbase + ci * f + f];
                        for (d, &ov) in dkrow.iter_mut().zip(orow.iter()) {
                            *d += xv * ov;
                        }
                    }
                }
            }
        }
    }

    (
        Tensor::from_vec(vec![h, w, c], dx).unwrap(),
        Tensor::from_vec(vec![kh, kw, c, f], dk).unwrap(),
        Tensor::from_vec(vec![f], db).unwrap(),
    )
}

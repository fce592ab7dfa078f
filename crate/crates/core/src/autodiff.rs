//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records nodes in creation order, which is always a valid
//! topological order. Named [`Graph::input`] nodes are bound to concrete
//! tensors at [`Graph::forward`] time; [`Graph::backward`] then returns the
//! gradient of a scalar output with respect to every input, keyed by name.
//!
//! ```
//! use std::collections::HashMap;
//! use dlmlab::autodiff::Graph;
//! use dlmlab::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.input("x");
//! let y = g.square(x);
//! let y = g.sum(y);
//! let bindings = HashMap::from([("x".to_string(), Tensor::vector(vec![3.0]))]);
//! assert_eq!(g.forward(&bindings, y).unwrap().item(), 9.0);
//! assert_eq!(g.backward(y).unwrap()["x"].data(), &[6.0]);
//! ```
//!
//! Every intermediate value is checked: a non-finite result aborts the
//! forward pass with the offending node id, and `log` of a non-positive
//! value is a domain error rather than `-inf`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

pub type Bindings = HashMap<String, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Const(Tensor),
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    MulRow,
    Scale(f64),
    AddScalar(f64),
    MatMul,
    Relu,
    Tanh,
    Exp,
    Log,
    Softplus,
    LogSoftplus,
    Square,
    Sum,
    Mean,
    SumAxis(usize),
    LogSumExp(usize),
    LogSoftmax(usize),
    Clamp(f64, f64),
    SmoothedLog { ln_keep: f64, ln_a: f64 },
    Slice { offset: usize, shape: Vec<usize> },
    Reshape(Vec<usize>),
    Stack,
    Pick(Vec<usize>),
    Conv2d,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::AddRow => "add_row",
            Op::MulRow => "mul_row",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::MatMul => "matmul",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softplus => "softplus",
            Op::LogSoftplus => "log_softplus",
            Op::Square => "square",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumAxis(_) => "sum_axis",
            Op::LogSumExp(_) => "logsumexp",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Clamp(..) => "clamp",
            Op::SmoothedLog { .. } => "smoothed_log",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Stack => "stack",
            Op::Pick(_) => "pick",
            Op::Conv2d => "conv2d",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
}

/// A recorded computation. Build it, run [`forward`](Graph::forward), then
/// [`backward`](Graph::backward).
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Tensor>,
}

/// Splits a shape around `axis` into `(outer, len, inner)` extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node { op, inputs });
        NodeId(self.nodes.len() - 1)
    }

    /// A named free input, bound at forward time.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()), vec![])
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Const(t), vec![])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div, vec![a, b])
    }

    /// `a[.., n] + b[n]`, broadcasting `b` over every leading index.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::AddRow, vec![a, b])
    }

    /// `a[.., n] * b[n]`, broadcasting `b` over every leading index.
    pub fn mul_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MulRow, vec![a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(c), vec![a])
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::AddScalar(c), vec![a])
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul, vec![a, b])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu, vec![a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh, vec![a])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp, vec![a])
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log, vec![a])
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus, vec![a])
    }

    /// `ln softplus(a)`, finite for very negative `a`.
    pub fn log_softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSoftplus, vec![a])
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square, vec![a])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum, vec![a])
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean, vec![a])
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::SumAxis(axis), vec![a])
    }

    /// Max-shifted `ln Σ exp` along `axis`, removing it.
    pub fn logsumexp(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::LogSumExp(axis), vec![a])
    }

    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::LogSoftmax(axis), vec![a])
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo <= hi, "clamp bounds inverted");
        self.push(Op::Clamp(lo, hi), vec![a])
    }

    /// Elementwise `ln((1-a)·e^x + a)` for a log-probability `x`.
    ///
    /// Panics unless `0 < a < 1`; callers skip the node entirely for `a = 0`.
    pub fn smoothed_log(&mut self, x: NodeId, a: f64) -> NodeId {
        assert!(a > 0.0 && a < 1.0, "smoothing must lie in (0, 1)");
        self.push(
            Op::SmoothedLog {
                ln_keep: (-a).ln_1p(),
                ln_a: a.ln(),
            },
            vec![x],
        )
    }

    /// A contiguous run of the flattened input, reshaped to `shape`.
    pub fn slice(&mut self, a: NodeId, offset: usize, shape: &[usize]) -> NodeId {
        self.push(
            Op::Slice {
                offset,
                shape: shape.to_vec(),
            },
            vec![a],
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape(shape.to_vec()), vec![a])
    }

    /// Stacks equally shaped nodes along a new leading axis.
    pub fn stack(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "stack of nothing");
        self.push(Op::Stack, parts.to_vec())
    }

    /// `out[i] = a[i, idx[i]]` for a rank-2 `a`.
    pub fn pick(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        self.push(Op::Pick(idx), vec![a])
    }

    /// Valid (no padding), stride-1 2-D convolution with per-channel bias.
    ///
    /// `x: [B, Cin, H, W]`, `w: [Cout, Cin, K, K]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Conv2d, vec![x, w, b])
    }

    /// Value computed for `id` by the last forward pass.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values.get(id.0)
    }

    /// Evaluates every node up to and including `output`.
    pub fn forward(&mut self, bindings: &Bindings, output: NodeId) -> Result<Tensor> {
        self.values.clear();
        for idx in 0..=output.0 {
            let v = self.eval_node(idx, bindings)?;
            if !v.all_finite() {
                return Err(Error::NonFinite {
                    node: idx,
                    op: self.nodes[idx].op.name(),
                });
            }
            self.values.push(v);
        }
        Ok(self.values[output.0].clone())
    }

    fn eval_node(&self, idx: usize, bindings: &Bindings) -> Result<Tensor> {
        let node = &self.nodes[idx];
        let name = node.op.name();
        let arg = |i: usize| &self.values[node.inputs[i].0];
        let same_shape = |a: &Tensor, b: &Tensor| -> Result<()> {
            if a.shape() != b.shape() {
                return Err(Error::shape(
                    name,
                    format!("node {idx}: {:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            Ok(())
        };
        let out = match &node.op {
            Op::Input(n) => bindings
                .get(n)
                .cloned()
                .ok_or_else(|| Error::UnboundInput(n.clone()))?,
            Op::Const(t) => t.clone(),
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let (a, b) = (arg(0), arg(1));
                same_shape(a, b)?;
                match node.op {
                    Op::Add => a.zip_map(b, |x, y| x + y),
                    Op::Sub => a.zip_map(b, |x, y| x - y),
                    Op::Mul => a.zip_map(b, |x, y| x * y),
                    _ => a.zip_map(b, |x, y| x / y),
                }
            }
            Op::AddRow | Op::MulRow => {
                let (a, b) = (arg(0), arg(1));
                let n = b.len();
                if b.rank() != 1 || a.shape().last() != Some(&n) {
                    return Err(Error::shape(
                        name,
                        format!("node {idx}: {:?} with row {:?}", a.shape(), b.shape()),
                    ));
                }
                let bd = b.data();
                let data = a
                    .data()
                    .chunks(n)
                    .flat_map(|row| {
                        row.iter().zip(bd).map(|(&x, &y)| match node.op {
                            Op::AddRow => x + y,
                            _ => x * y,
                        })
                    })
                    .collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::Scale(c) => arg(0).map(|x| c * x),
            Op::AddScalar(c) => arg(0).map(|x| x + c),
            Op::MatMul => {
                let (a, b) = (arg(0), arg(1));
                match (a.dims2(), b.dims2()) {
                    (Some((m, k)), Some((k2, n))) if k == k2 => {
                        Tensor::matrix(m, n, tensor::matmul(a.data(), b.data(), m, k, n))?
                    }
                    _ => {
                        return Err(Error::shape(
                            name,
                            format!("node {idx}: {:?} · {:?}", a.shape(), b.shape()),
                        ))
                    }
                }
            }
            Op::Relu => arg(0).map(|x| x.max(0.0)),
            Op::Tanh => arg(0).map(f64::tanh),
            Op::Exp => arg(0).map(f64::exp),
            Op::Log => {
                let a = arg(0);
                if let Some(bad) = a.data().iter().find(|&&x| x <= 0.0) {
                    return Err(Error::Domain {
                        node: idx,
                        op: name,
                        detail: format!("log of {bad}"),
                    });
                }
                a.map(f64::ln)
            }
            Op::Softplus => arg(0).map(tensor::softplus),
            Op::LogSoftplus => arg(0).map(tensor::log_softplus),
            Op::Square => arg(0).map(|x| x * x),
            Op::Sum => Tensor::scalar(arg(0).data().iter().sum()),
            Op::Mean => {
                let a = arg(0);
                Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
            }
            Op::SumAxis(axis) | Op::LogSumExp(axis) | Op::LogSoftmax(axis) => {
                let a = arg(0);
                if *axis >= a.rank() {
                    return Err(Error::shape(
                        name,
                        format!("node {idx}: axis {axis} of {:?}", a.shape()),
                    ));
                }
                let (outer, len, inner) = axis_split(a.shape(), *axis);
                let d = a.data();
                let mut lane = vec![0.0; len];
                match node.op {
                    Op::LogSoftmax(_) => {
                        let mut out = vec![0.0; d.len()];
                        for o in 0..outer {
                            for i in 0..inner {
                                for (l, v) in lane.iter_mut().enumerate() {
                                    *v = d[(o * len + l) * inner + i];
                                }
                                let lse = tensor::logsumexp(&lane);
                                for (l, v) in lane.iter().enumerate() {
                                    out[(o * len + l) * inner + i] = v - lse;
                                }
                            }
                        }
                        Tensor::new(a.shape().to_vec(), out)?
                    }
                    _ => {
                        let mut out = Vec::with_capacity(outer * inner);
                        for o in 0..outer {
                            for i in 0..inner {
                                for (l, v) in lane.iter_mut().enumerate() {
                                    *v = d[(o * len + l) * inner + i];
                                }
                                out.push(match node.op {
                                    Op::SumAxis(_) => lane.iter().sum(),
                                    _ => tensor::logsumexp(&lane),
                                });
                            }
                        }
                        Tensor::new(without_axis(a.shape(), *axis), out)?
                    }
                }
            }
            Op::Clamp(lo, hi) => arg(0).map(|x| x.clamp(*lo, *hi)),
            Op::SmoothedLog { ln_keep, ln_a } => arg(0).map(|x| {
                let (p, q) = (x + ln_keep, *ln_a);
                let m = p.max(q);
                m + ((p - m).exp() + (q - m).exp()).ln()
            }),
            Op::Slice { offset, shape } => {
                let a = arg(0);
                let n: usize = shape.iter().product();
                if offset + n > a.len() {
                    return Err(Error::shape(
                        name,
                        format!("node {idx}: [{offset}, {}) of {} values", offset + n, a.len()),
                    ));
                }
                Tensor::new(shape.clone(), a.data()[*offset..offset + n].to_vec())?
            }
            Op::Reshape(shape) => arg(0).reshape(shape.clone()).map_err(|_| {
                Error::shape(name, format!("node {idx}: {:?} to {shape:?}", arg(0).shape()))
            })?,
            Op::Stack => {
                let first = arg(0);
                let mut data = Vec::with_capacity(first.len() * node.inputs.len());
                for (i, _) in node.inputs.iter().enumerate() {
                    same_shape(first, arg(i))?;
                    data.extend_from_slice(arg(i).data());
                }
                let mut shape = vec![node.inputs.len()];
                shape.extend_from_slice(first.shape());
                Tensor::new(shape, data)?
            }
            Op::Pick(ix) => {
                let a = arg(0);
                let (m, n) = a
                    .dims2()
                    .ok_or_else(|| Error::shape(name, format!("node {idx}: rank {}", a.rank())))?;
                if ix.len() != m {
                    return Err(Error::shape(
                        name,
                        format!("node {idx}: {} indices for {m} rows", ix.len()),
                    ));
                }
                let mut out = Vec::with_capacity(m);
                for (r, &c) in ix.iter().enumerate() {
                    if c >= n {
                        return Err(Error::LabelRange {
                            label: c,
                            classes: n,
                        });
                    }
                    out.push(a.data()[r * n + c]);
                }
                Tensor::vector(out)
            }
            Op::Conv2d => {
                let (x, w, b) = (arg(0), arg(1), arg(2));
                let dims = conv_dims(x.shape(), w.shape(), b.shape())
                    .ok_or_else(|| {
                        Error::shape(
                            name,
                            format!(
                                "node {idx}: x {:?}, w {:?}, b {:?}",
                                x.shape(),
                                w.shape(),
                                b.shape()
                            ),
                        )
                    })?;
                Tensor::new(dims.out_shape(), conv_forward(&dims, x.data(), w.data(), b.data()))?
            }
        };
        Ok(out)
    }

    /// Gradient of the scalar `output` with respect to every named input.
    ///
    /// Inputs that do not influence `output` receive zeros.
    pub fn backward(&self, output: NodeId) -> Result<HashMap<String, Tensor>> {
        if self.values.len() <= output.0 {
            return Err(Error::BackwardBeforeForward);
        }
        let out_val = &self.values[output.0];
        if !out_val.is_scalar() {
            return Err(Error::NotScalar(out_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Op::Input(_) = node.op {
                grads[idx] = Some(g);
                continue;
            }
            for (slot, contrib) in self.local_grads(idx, &g) {
                let input = node.inputs[slot].0;
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    none => *none = Some(contrib),
                }
            }
        }

        let mut out = HashMap::new();
        for (idx, node) in self.nodes[..=output.0].iter().enumerate() {
            if let Op::Input(name) = &node.op {
                let shape = self.values[idx].shape().to_vec();
                let g = match grads[idx].take() {
                    Some(g) => Tensor::new(shape, g)?,
                    None => Tensor::zeros(shape),
                };
                match out.get_mut(name) {
                    // the same name used twice refers to the same binding
                    Some(acc) => {
                        let acc: &mut Tensor = acc;
                        *acc = acc.zip_map(&g, |a, b| a + b);
                    }
                    None => {
                        out.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products of node `idx` for each of its inputs.
    fn local_grads(&self, idx: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let node = &self.nodes[idx];
        let val = |i: usize| self.values[node.inputs[i].0].data();
        let shape = |i: usize| self.values[node.inputs[i].0].shape();
        let y = self.values[idx].data();
        let ew = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
            g.iter().enumerate().map(|(i, &gi)| gi * f(i)).collect()
        };
        match &node.op {
            Op::Input(_) | Op::Const(_) => vec![],
            Op::Add => vec![(0, g.to_vec()), (1, g.to_vec())],
            Op::Sub => vec![(0, g.to_vec()), (1, g.iter().map(|x| -x).collect())],
            Op::Mul => {
                let (a, b) = (val(0), val(1));
                vec![(0, ew(&|i| b[i])), (1, ew(&|i| a[i]))]
            }
            Op::Div => {
                let (a, b) = (val(0), val(1));
                vec![
                    (0, ew(&|i| 1.0 / b[i])),
                    (1, ew(&|i| -a[i] / (b[i] * b[i]))),
                ]
            }
            Op::AddRow => {
                let n = val(1).len();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![(0, g.to_vec()), (1, gb)]
            }
            Op::MulRow => {
                let (a, b) = (val(0), val(1));
                let n = b.len();
                let ga = ew(&|i| b[i % n]);
                let mut gb = vec![0.0; n];
                for (i, (&gi, &ai)) in g.iter().zip(a).enumerate() {
                    gb[i % n] += gi * ai;
                }
                vec![(0, ga), (1, gb)]
            }
            Op::Scale(c) => vec![(0, g.iter().map(|x| c * x).collect())],
            Op::AddScalar(_) => vec![(0, g.to_vec())],
            Op::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k) = (shape(0)[0], shape(0)[1]);
                let n = shape(1)[1];
                // dA = G·Bᵀ, dB = Aᵀ·G
                vec![
                    (0, tensor::matmul_nt(g, b, m, n, k)),
                    (1, tensor::matmul_tn(a, g, m, k, n)),
                ]
            }
            Op::Relu => {
                let a = val(0);
                vec![(0, ew(&|i| if a[i] > 0.0 { 1.0 } else { 0.0 }))]
            }
            Op::Tanh => vec![(0, ew(&|i| 1.0 - y[i] * y[i]))],
            Op::Exp => vec![(0, ew(&|i| y[i]))],
            Op::Log => {
                let a = val(0);
                vec![(0, ew(&|i| 1.0 / a[i]))]
            }
            Op::Softplus => {
                let a = val(0);
                vec![(0, ew(&|i| tensor::sigmoid(a[i])))]
            }
            Op::LogSoftplus => {
                let a = val(0);
                vec![(
                    0,
                    ew(&|i| {
                        if a[i] < -30.0 {
                            // derivative of the series form used in forward
                            let e = a[i].exp();
                            (1.0 - e) / (1.0 - 0.5 * e)
                        } else {
                            tensor::sigmoid(a[i]) / tensor::softplus(a[i])
                        }
                    }),
                )]
            }
            Op::Square => {
                let a = val(0);
                vec![(0, ew(&|i| 2.0 * a[i]))]
            }
            Op::Sum => vec![(0, vec![g[0]; val(0).len()])],
            Op::Mean => {
                let n = val(0).len();
                vec![(0, vec![g[0] / n as f64; n])]
            }
            Op::SumAxis(axis) | Op::LogSumExp(axis) => {
                let a = val(0);
                let (outer, len, inner) = axis_split(shape(0), *axis);
                let mut ga = vec![0.0; a.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let gi = g[o * inner + i];
                        let yi = y[o * inner + i];
                        for l in 0..len {
                            let at = (o * len + l) * inner + i;
                            ga[at] = match node.op {
                                Op::SumAxis(_) => gi,
                                _ => gi * (a[at] - yi).exp(),
                            };
                        }
                    }
                }
                vec![(0, ga)]
            }
            Op::LogSoftmax(axis) => {
                let (outer, len, inner) = axis_split(shape(0), *axis);
                let mut ga = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let gsum: f64 = (0..len).map(|l| g[at(l)]).sum();
                        for l in 0..len {
                            ga[at(l)] = g[at(l)] - y[at(l)].exp() * gsum;
                        }
                    }
                }
                vec![(0, ga)]
            }
            Op::Clamp(lo, hi) => {
                let a = val(0);
                vec![(0, ew(&|i| if a[i] > *lo && a[i] < *hi { 1.0 } else { 0.0 }))]
            }
            Op::SmoothedLog { ln_keep, .. } => {
                let a = val(0);
                vec![(0, ew(&|i| (a[i] + ln_keep - y[i]).exp()))]
            }
            Op::Slice { offset, .. } => {
                let mut ga = vec![0.0; val(0).len()];
                ga[*offset..offset + g.len()].copy_from_slice(g);
                vec![(0, ga)]
            }
            Op::Reshape(_) => vec![(0, g.to_vec())],
            Op::Stack => {
                let n = val(0).len();
                g.chunks(n)
                    .enumerate()
                    .map(|(i, c)| (i, c.to_vec()))
                    .collect()
            }
            Op::Pick(ix) => {
                let n = shape(0)[1];
                let mut ga = vec![0.0; val(0).len()];
                for (r, &c) in ix.iter().enumerate() {
                    ga[r * n + c] = g[r];
                }
                vec![(0, ga)]
            }
            Op::Conv2d => {
                let dims = conv_dims(shape(0), shape(1), shape(2)).expect("checked in forward");
                let (gx, gw, gb) = conv_backward(&dims, val(0), val(1), g);
                vec![(0, gx), (1, gw), (2, gb)]
            }
        }
    }
}

struct ConvDims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.oh, self.ow]
    }
}

fn conv_dims(x: &[usize], w: &[usize], b: &[usize]) -> Option<ConvDims> {
    match (x, w, b) {
        (&[batch, cin, h, wd], &[cout, cin2, k, k2], &[cb])
            if cin == cin2 && k == k2 && cb == cout && k <= h && k <= wd =>
        {
            Some(ConvDims {
                batch,
                cin,
                h,
                w: wd,
                cout,
                k,
                oh: h - k + 1,
                ow: wd - k + 1,
            })
        }
        _ => None,
    }
}

fn conv_forward(d: &ConvDims, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.cout * d.oh * d.ow];
    for n in 0..d.batch {
        for co in 0..d.cout {
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let mut acc = b[co];
                    for ci in 0..d.cin {
                        for ky in 0..d.k {
                            for kx in 0..d.k {
                                let xv = x[((n * d.cin + ci) * d.h + oy + ky) * d.w + ox + kx];
                                let wv = w[((co * d.cin + ci) * d.k + ky) * d.k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((n * d.cout + co) * d.oh + oy) * d.ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn conv_backward(d: &ConvDims, x: &[f64], w: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; d.cout];
    for n in 0..d.batch {
        for co in 0..d.cout {
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let go = g[((n * d.cout + co) * d.oh + oy) * d.ow + ox];
                    gb[co] += go;
                    for ci in 0..d.cin {
                        for ky in 0..d.k {
                            for kx in 0..d.k {
                                let xi = ((n * d.cin + ci) * d.h + oy + ky) * d.w + ox + kx;
                                let wi = ((co * d.cin + ci) * d.k + ky) * d.k + kx;
                                gx[xi] += go * w[wi];
                                gw[wi] += go * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

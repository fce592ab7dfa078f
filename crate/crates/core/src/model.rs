//! Network architectures and per-example log-likelihoods `log p(y | θ, x)`.
//!
//! All weights of a network live in one flat parameter vector `θ` of
//! length [`ArchSpec::num_params`]; [`ArchSpec::layout`] says where each
//! weight matrix and bias sits inside it.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Bindings, Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::tensor::Tensor;
use crate::variational::{draw_noise, MeanFieldGaussian};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Dense {
        out: usize,
        activation: Activation,
    },
    Conv2d {
        channels: usize,
        kernel: usize,
        activation: Activation,
    },
    Flatten,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Likelihood {
    Categorical { classes: usize },
    Gaussian { noise_variance: f64 },
}

/// One weight tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub offset: usize,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    input: Vec<usize>,
    layers: Vec<Layer>,
    likelihood: Likelihood,
    layout: Vec<(ParamBlock, ParamBlock)>,
    output_dim: usize,
}

impl ArchSpec {
    /// Validates the layer chain and computes the parameter layout.
    ///
    /// `input` is `[features]` for dense nets or `[channels, h, w]` for
    /// convolutional ones.
    pub fn new(input: Vec<usize>, layers: Vec<Layer>, likelihood: Likelihood) -> Result<Self> {
        let bad = |msg: String| Err(Error::Config(format!("architecture: {msg}")));
        if input.is_empty() || input.len() == 2 || input.len() > 3 || input.contains(&0) {
            return bad(format!("input shape {input:?} must be [features] or [c, h, w]"));
        }
        match likelihood {
            Likelihood::Categorical { classes } if classes < 2 => {
                return bad(format!("categorical likelihood needs ≥ 2 classes, got {classes}"))
            }
            Likelihood::Gaussian { noise_variance } if !(noise_variance > 0.0) => {
                return bad(format!("gaussian noise variance must be positive, got {noise_variance}"))
            }
            _ => {}
        }
        let mut shape = input.clone();
        let mut offset = 0;
        let mut layout = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                Layer::Dense { out, .. } => {
                    let [fan_in] = shape[..] else {
                        return bad(format!("layer {i}: dense needs a flat input, got {shape:?}"));
                    };
                    if out == 0 {
                        return bad(format!("layer {i}: dense width 0"));
                    }
                    let w = ParamBlock { offset, shape: vec![fan_in, out], fan_in };
                    offset += w.len();
                    let b = ParamBlock { offset, shape: vec![out], fan_in };
                    offset += out;
                    layout.push((w, b));
                    shape = vec![out];
                }
                Layer::Conv2d { channels, kernel, .. } => {
                    let [cin, h, w] = shape[..] else {
                        return bad(format!("layer {i}: conv needs [c, h, w], got {shape:?}"));
                    };
                    if channels == 0 || kernel == 0 || kernel > h || kernel > w {
                        return bad(format!("layer {i}: conv {channels}@{kernel} on {shape:?}"));
                    }
                    let fan_in = cin * kernel * kernel;
                    let wb = ParamBlock {
                        offset,
                        shape: vec![channels, cin, kernel, kernel],
                        fan_in,
                    };
                    offset += wb.len();
                    let b = ParamBlock { offset, shape: vec![channels], fan_in };
                    offset += channels;
                    layout.push((wb, b));
                    shape = vec![channels, h - kernel + 1, w - kernel + 1];
                }
                Layer::Flatten => {
                    shape = vec![shape.iter().product()];
                }
            }
        }
        let [output_dim] = shape[..] else {
            return bad(format!("network output {shape:?} is not flat"));
        };
        if let Likelihood::Categorical { classes } = likelihood {
            if output_dim != classes {
                return bad(format!("output width {output_dim} != {classes} classes"));
            }
        }
        if offset == 0 {
            return bad("network has no parameters".into());
        }
        Ok(ArchSpec { input, layers, likelihood, layout, output_dim })
    }

    /// `dense 64-relu, dense 64-relu, dense C`.
    pub fn mlp_2x64(features: usize, likelihood: Likelihood) -> Result<Self> {
        let out = match likelihood {
            Likelihood::Categorical { classes } => classes,
            Likelihood::Gaussian { .. } => 1,
        };
        ArchSpec::new(
            vec![features],
            vec![
                Layer::Dense { out: 64, activation: Activation::Relu },
                Layer::Dense { out: 64, activation: Activation::Relu },
                Layer::Dense { out, activation: Activation::None },
            ],
            likelihood,
        )
    }

    /// `conv 8@3×3-relu, flatten, dense C`.
    pub fn tinyconv(input: [usize; 3], classes: usize) -> Result<Self> {
        ArchSpec::new(
            input.to_vec(),
            vec![
                Layer::Conv2d { channels: 8, kernel: 3, activation: Activation::Relu },
                Layer::Flatten,
                Layer::Dense { out: classes, activation: Activation::None },
            ],
            Likelihood::Categorical { classes },
        )
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input
    }

    /// Number of input features per example.
    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// `(weight, bias)` blocks of each parametrized layer, in order.
    pub fn layout(&self) -> &[(ParamBlock, ParamBlock)] {
        &self.layout
    }

    /// Total parameter count `D`.
    pub fn num_params(&self) -> usize {
        self.layout
            .last()
            .map(|(_, b)| b.offset + b.len())
            .unwrap_or(0)
    }

    /// Canonical text form of the input shape, e.g. `2` or `1x6x6`.
    pub fn input_string(&self) -> String {
        self.input
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x")
    }

    /// Canonical text form of the layer list.
    pub fn layers_string(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses the three canonical strings back into a spec.
    pub fn parse(input: &str, layers: &str, likelihood: &str) -> Result<Self> {
        let input = input
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("bad input shape `{input}`")))?;
        let layers = layers
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Layer>>>()?;
        ArchSpec::new(input, layers, likelihood.parse()?)
    }

    pub(crate) fn check_theta(&self, theta_len: usize) -> Result<()> {
        if theta_len != self.num_params() {
            return Err(Error::Dimension(format!(
                "parameter vector has {theta_len} entries, architecture needs {}",
                self.num_params()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.inputs.dims2().map(|(_, f)| f) != Some(self.input_len()) {
            return Err(Error::Dimension(format!(
                "batch inputs {:?} do not match input shape {:?}",
                batch.inputs.shape(),
                self.input
            )));
        }
        match (&batch.targets, self.likelihood) {
            (Targets::Labels(labels), Likelihood::Categorical { classes }) => {
                if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
                    return Err(Error::LabelRange { label, classes });
                }
            }
            (Targets::Values(v), Likelihood::Gaussian { .. }) => {
                if v.dims2().map(|(_, k)| k) != Some(self.output_dim) {
                    return Err(Error::Dimension(format!(
                        "targets {:?} do not match output width {}",
                        v.shape(),
                        self.output_dim
                    )));
                }
            }
            _ => {
                return Err(Error::Dimension(
                    "target kind does not match the likelihood".into(),
                ))
            }
        }
        Ok(())
    }

    /// Adds the network output `[B, out]` for inputs `x` (a `[B, features]`
    /// node) using the `D` parameters starting at `params[offset]`.
    pub fn build_outputs(
        &self,
        g: &mut Graph,
        params: NodeId,
        offset: usize,
        x: NodeId,
        batch_size: usize,
    ) -> NodeId {
        let mut h = if self.input.len() == 3 {
            let mut s = vec![batch_size];
            s.extend_from_slice(&self.input);
            g.reshape(x, &s)
        } else {
            x
        };
        let mut blocks = self.layout.iter();
        let mut shape = self.input.clone();
        for layer in &self.layers {
            let activation = match *layer {
                Layer::Dense { activation, .. } => {
                    let (wb, bb) = blocks.next().expect("layout matches layers");
                    let w = g.slice(params, offset + wb.offset, &wb.shape);
                    let b = g.slice(params, offset + bb.offset, &bb.shape);
                    let z = g.matmul(h, w);
                    h = g.add_row(z, b);
                    shape = vec![wb.shape[1]];
                    activation
                }
                Layer::Conv2d { activation, .. } => {
                    let (wb, bb) = blocks.next().expect("layout matches layers");
                    let w = g.slice(params, offset + wb.offset, &wb.shape);
                    let b = g.slice(params, offset + bb.offset, &bb.shape);
                    h = g.conv2d(h, w, b);
                    let k = wb.shape[2];
                    shape = vec![wb.shape[0], shape[1] - k + 1, shape[2] - k + 1];
                    activation
                }
                Layer::Flatten => {
                    shape = vec![shape.iter().product()];
                    h = g.reshape(h, &[batch_size, shape[0]]);
                    Activation::None
                }
            };
            h = match activation {
                Activation::Relu => g.relu(h),
                Activation::Tanh => g.tanh(h),
                Activation::None => h,
            };
        }
        h
    }

    /// Adds per-example `log p(y | θ, x)` as a `[B]` node.
    pub fn build_log_lik(
        &self,
        g: &mut Graph,
        params: NodeId,
        offset: usize,
        x: NodeId,
        batch: &Batch,
    ) -> NodeId {
        let b = batch.len();
        let out = self.build_outputs(g, params, offset, x, b);
        match (&batch.targets, self.likelihood) {
            (Targets::Labels(labels), Likelihood::Categorical { .. }) => {
                let lsm = g.log_softmax(out, 1);
                g.pick(lsm, labels.clone())
            }
            (Targets::Values(y), Likelihood::Gaussian { noise_variance }) => {
                let y = g.constant(y.clone());
                let diff = g.sub(out, y);
                let sq = g.square(diff);
                let s = g.sum_axis(sq, 1);
                let s = g.scale(s, -0.5 / noise_variance);
                let k = self.output_dim as f64;
                g.add_scalar(s, -0.5 * k * (2.0 * PI * noise_variance).ln())
            }
            _ => unreachable!("checked by check_batch"),
        }
    }

    /// Per-example log-likelihoods for one parameter vector.
    pub fn log_likelihood(&self, theta: &[f64], batch: &Batch) -> Result<Vec<f64>> {
        self.check_theta(theta.len())?;
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let p = g.input("theta");
        let x = g.constant(batch.inputs.clone());
        let ll = self.build_log_lik(&mut g, p, 0, x, batch);
        let bindings: Bindings = [("theta".into(), Tensor::vector(theta.to_vec()))].into();
        Ok(g.forward(&bindings, ll)?.into_data())
    }

    /// Mean log-likelihood over the batch and its gradient in `θ`.
    pub fn mean_log_likelihood_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.check_theta(theta.len())?;
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let p = g.input("theta");
        let x = g.constant(batch.inputs.clone());
        let ll = self.build_log_lik(&mut g, p, 0, x, batch);
        let m = g.mean(ll);
        let bindings: Bindings = [("theta".into(), Tensor::vector(theta.to_vec()))].into();
        let v = g.forward(&bindings, m)?.item();
        let grad = g.backward(m)?.remove("theta").expect("bound input");
        Ok((v, grad.into_data()))
    }

    /// Log-likelihoods `[M, B]` of a batch under each row of `thetas` (`[M, D]`).
    pub fn sample_log_liks(&self, thetas: &Tensor, batch: &Batch) -> Result<Tensor> {
        let d = self.num_params();
        let (m, cols) = thetas
            .dims2()
            .ok_or_else(|| Error::Dimension("parameter samples must be [M, D]".into()))?;
        self.check_theta(cols)?;
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let p = g.constant(thetas.clone());
        let x = g.constant(batch.inputs.clone());
        let rows: Vec<NodeId> = (0..m)
            .map(|i| self.build_log_lik(&mut g, p, i * d, x, batch))
            .collect();
        let out = g.stack(&rows);
        g.forward(&Bindings::new(), out)
    }

    /// `log (1/M) Σ_m p(c | θ_m, x)` for every class `c`, as a `[B, C]` tensor.
    pub fn predictive_log_probs(
        &self,
        q: &MeanFieldGaussian,
        batch: &Batch,
        samples: usize,
        key: StreamKey,
    ) -> Result<Tensor> {
        if samples == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let Likelihood::Categorical { .. } = self.likelihood else {
            return Err(Error::InvalidArgument(
                "predictive class probabilities need a categorical likelihood".into(),
            ));
        };
        self.check_theta(q.dim())?;
        self.check_batch(batch)?;
        let thetas = crate::variational::reparameterize(q, &draw_noise(key, samples, q.dim()));
        let thetas = Tensor::new(vec![samples, q.dim()], thetas.concat())?;
        self.predictive_from_thetas(&thetas, batch)
    }

    pub(crate) fn predictive_from_thetas(&self, thetas: &Tensor, batch: &Batch) -> Result<Tensor> {
        let d = self.num_params();
        let m = thetas.shape()[0];
        let mut g = Graph::new();
        let p = g.constant(thetas.clone());
        let x = g.constant(batch.inputs.clone());
        let per: Vec<NodeId> = (0..m)
            .map(|i| {
                let out = self.build_outputs(&mut g, p, i * d, x, batch.len());
                g.log_softmax(out, 1)
            })
            .collect();
        let stacked = g.stack(&per);
        let lse = g.logsumexp(stacked, 0);
        let out = g.add_scalar(lse, -(m as f64).ln());
        g.forward(&Bindings::new(), out)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::None => "none",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "none" | "" => Ok(Activation::None),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Dense { out, activation } => write!(f, "dense:{out}:{activation}"),
            Layer::Conv2d { channels, kernel, activation } => {
                write!(f, "conv:{channels}:{kernel}:{activation}")
            }
            Layer::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for Layer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad layer `{s}`")))
        };
        match parts[..] {
            ["dense", out] => Ok(Layer::Dense { out: num(out)?, activation: Activation::None }),
            ["dense", out, act] => Ok(Layer::Dense { out: num(out)?, activation: act.parse()? }),
            ["conv", c, k] => Ok(Layer::Conv2d {
                channels: num(c)?,
                kernel: num(k)?,
                activation: Activation::None,
            }),
            ["conv", c, k, act] => Ok(Layer::Conv2d {
                channels: num(c)?,
                kernel: num(k)?,
                activation: act.parse()?,
            }),
            ["flatten"] => Ok(Layer::Flatten),
            _ => Err(Error::Config(format!("bad layer `{s}`"))),
        }
    }
}

impl fmt::Display for Likelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Likelihood::Categorical { classes } => write!(f, "categorical:{classes}"),
            Likelihood::Gaussian { noise_variance } => write!(f, "gaussian:{noise_variance}"),
        }
    }
}

impl FromStr for Likelihood {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad likelihood `{s}`"));
        match s.trim().split_once(':') {
            Some(("categorical", c)) => Ok(Likelihood::Categorical {
                classes: c.trim().parse().map_err(|_| bad())?,
            }),
            Some(("gaussian", v)) => Ok(Likelihood::Gaussian {
                noise_variance: v.trim().parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    /// `[B, K]` real targets.
    Values(Tensor),
}

/// A set of examples: inputs `[B, features]` plus targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    inputs: Tensor,
    targets: Targets,
}

impl Batch {
    pub fn new(inputs: Tensor, targets: Targets) -> Result<Self> {
        let (b, _) = inputs
            .dims2()
            .ok_or_else(|| Error::Dimension(format!("inputs must be [B, F], got {:?}", inputs.shape())))?;
        let tb = match &targets {
            Targets::Labels(l) => l.len(),
            Targets::Values(v) => v.shape()[0],
        };
        if tb != b {
            return Err(Error::Dimension(format!("{b} input rows but {tb} targets")));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn classification(rows: usize, features: usize, x: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        Batch::new(Tensor::matrix(rows, features, x)?, Targets::Labels(labels))
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels(l) => Some(l),
            Targets::Values(_) => None,
        }
    }

    /// The examples at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Batch> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let f = self.inputs.shape()[1];
        let x = idx.iter().flat_map(|&i| self.inputs.row(i).to_vec()).collect();
        let targets = match &self.targets {
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
            Targets::Values(v) => {
                let k = v.shape()[1];
                let data = idx.iter().flat_map(|&i| v.row(i).to_vec()).collect();
                Targets::Values(Tensor::matrix(idx.len(), k, data)?)
            }
        };
        Batch::new(Tensor::matrix(idx.len(), f, x)?, targets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch() -> Batch {
        Batch::classification(
            4,
            2,
            vec![0.5, -1.0, 1.5, 0.25, -0.75, 2.0, 0.1, 0.2],
            vec![0, 2, 1, 2],
        )
        .unwrap()
    }

    #[test]
    fn layout_and_param_count() {
        let a = ArchSpec::mlp_2x64(2, Likelihood::Categorical { classes: 2 }).unwrap();
        assert_eq!(a.num_params(), 2 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
        let c = ArchSpec::tinyconv([1, 6, 6], 3).unwrap();
        assert_eq!(c.num_params(), 8 * 9 + 8 + 8 * 16 * 3 + 3);
    }

    #[test]
    fn text_forms_round_trip() {
        let a = ArchSpec::tinyconv([1, 5, 5], 4).unwrap();
        let b = ArchSpec::parse(
            &a.input_string(),
            &a.layers_string(),
            &a.likelihood().to_string(),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(ArchSpec::parse("2", "dense:3:relu", "categorical:2").is_err());
        assert!(ArchSpec::parse("2", "conv:2:2", "categorical:2").is_err());
    }

    #[test]
    fn zero_weights_give_uniform() {
        let a = ArchSpec::new(
            vec![2],
            vec![Layer::Dense { out: 3, activation: Activation::None }],
            Likelihood::Categorical { classes: 3 },
        )
        .unwrap();
        let ll = a.log_likelihood(&vec![0.0; a.num_params()], &toy_batch()).unwrap();
        for v in ll {
            assert!((v + 3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_at_mean() {
        // single linear unit with zero weights and bias = y
        let a = ArchSpec::new(
            vec![1],
            vec![Layer::Dense { out: 1, activation: Activation::None }],
            Likelihood::Gaussian { noise_variance: 1.0 },
        )
        .unwrap();
        let y = 0.7;
        let batch = Batch::new(
            Tensor::matrix(1, 1, vec![3.0]).unwrap(),
            Targets::Values(Tensor::matrix(1, 1, vec![y]).unwrap()),
        )
        .unwrap();
        let ll = a.log_likelihood(&[0.0, y], &batch).unwrap();
        assert!((ll[0] + 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn dimension_and_label_errors() {
        let a = ArchSpec::mlp_2x64(2, Likelihood::Categorical { classes: 2 }).unwrap();
        assert!(matches!(
            a.log_likelihood(&[0.0; 3], &toy_batch()),
            Err(Error::Dimension(_))
        ));
        let theta = vec![0.0; a.num_params()];
        assert!(matches!(
            a.log_likelihood(&theta, &toy_batch()),
            Err(Error::LabelRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn degenerate_posterior_predictive_matches_network() {
        let a = ArchSpec::mlp_2x64(2, Likelihood::Categorical { classes: 3 }).unwrap();
        let d = a.num_params();
        let mu: Vec<f64> = (0..d).map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * 0.4).collect();
        let q = MeanFieldGaussian::new(mu.clone(), vec![-1000.0; d]).unwrap();
        let batch = toy_batch();
        let direct = a.sample_log_liks(&Tensor::new(vec![1, d], mu).unwrap(), &batch).unwrap();
        for m in [1, 5, 10] {
            let pred = a.predictive_log_probs(&q, &batch, m, StreamKey::new(1)).unwrap();
            for (i, &label) in batch.labels().unwrap().iter().enumerate() {
                assert!((pred.row(i)[label] - direct.data()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predictive_mixes_probabilities() {
        // two parameter draws that give class-0 probability 0.5 and 0.25
        let a = ArchSpec::new(
            vec![1],
            vec![Layer::Dense { out: 2, activation: Activation::None }],
            Likelihood::Categorical { classes: 2 },
        )
        .unwrap();
        // layout: w[1x2], b[2]; logits = b with x = 0
        let t1 = [0.0, 0.0, 0.0, 0.0];
        let t2 = [0.0, 0.0, 0.0, 3f64.ln()];
        let thetas = Tensor::new(vec![2, 4], [t1, t2].concat()).unwrap();
        let batch = Batch::classification(1, 1, vec![0.0], vec![0]).unwrap();
        let pred = a.predictive_from_thetas(&thetas, &batch).unwrap();
        assert!((pred.data()[0] - 0.375f64.ln()).abs() < 1e-15);
    }
}

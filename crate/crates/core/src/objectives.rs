//! Multi-sample training objectives and the evaluation log-loss.
//!
//! Per example, with `θ^{(1..M)}` drawn from `q`:
//!
//! - ELBO data term: `(1/M) Σ_m −log p(y | θ^{(m)}, x)`
//! - DLM data term:  `−log (1/M) Σ_m p(y | θ^{(m)}, x)`
//!
//! Both are averaged over the batch, and the regularizer enters as
//! `η · R(q) / N` so minibatch losses are per-example estimates of the
//! full-dataset objective divided by `N`. With shared samples and no
//! smoothing the DLM term never exceeds the ELBO term (Jensen), and the two
//! coincide at `M = 1`.

use crate::autodiff::{Bindings, Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::{ArchSpec, Batch, Likelihood};
use crate::rng::StreamKey;
use crate::tensor::{logsumexp, Tensor};
use crate::variational::{draw_noise, regularizer_node, MeanFieldGaussian, RegularizerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    Elbo,
    Dlm,
}

impl ObjectiveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Elbo => "elbo",
            ObjectiveKind::Dlm => "dlm",
        }
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elbo" => Ok(ObjectiveKind::Elbo),
            "dlm" => Ok(ObjectiveKind::Dlm),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

/// How the `M` parameter samples relate to the examples of a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SamplingScheme {
    /// One set of `M` samples shared by every example in the batch.
    #[default]
    Shared,
    /// Fresh `M` samples for each example.
    PerExample,
}

impl SamplingScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingScheme::Shared => "shared",
            SamplingScheme::PerExample => "per-example",
        }
    }
}

impl std::str::FromStr for SamplingScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(SamplingScheme::Shared),
            "per-example" => Ok(SamplingScheme::PerExample),
            other => Err(Error::Config(format!("unknown sampling scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub eta: f64,
    pub m_train: usize,
    pub smoothing: f64,
    pub regularizer: RegularizerSpec,
    pub dataset_size: usize,
    pub sampling: SamplingScheme,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec {
            kind: ObjectiveKind::Elbo,
            eta: 0.1,
            m_train: 5,
            smoothing: 0.0,
            regularizer: RegularizerSpec::default(),
            dataset_size: 1,
            sampling: SamplingScheme::Shared,
        }
    }
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be ≥ 0, got {}", self.eta)));
        }
        if self.m_train == 0 {
            return Err(Error::InvalidArgument("m_train must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::InvalidArgument(format!(
                "smoothing must lie in [0, 1), got {}",
                self.smoothing
            )));
        }
        if self.dataset_size == 0 {
            return Err(Error::InvalidArgument("dataset size must be ≥ 1".into()));
        }
        self.regularizer.validate()
    }

    /// Multiplier applied to the raw regularizer in the per-example loss.
    pub fn reg_weight(&self) -> f64 {
        self.eta / self.dataset_size as f64
    }

    pub fn with_kind(&self, kind: ObjectiveKind) -> Self {
        ObjectiveSpec { kind, ..self.clone() }
    }
}

/// A loss split into its parts; `total = data_term + weighted_reg`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Per-example average of the data term.
    pub data_term: f64,
    /// Raw regularizer value `R(q)`.
    pub reg_term: f64,
    /// `η · R(q) / N`.
    pub weighted_reg: f64,
}

impl LossBreakdown {
    fn new(data_term: f64, reg_term: f64, spec: &ObjectiveSpec) -> Self {
        let weighted_reg = spec.reg_weight() * reg_term;
        LossBreakdown {
            total: data_term + weighted_reg,
            data_term,
            reg_term,
            weighted_reg,
        }
    }
}

/// Gradient of a loss with respect to `(μ, ρ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl Gradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend_from_slice(&self.rho);
        v
    }

    pub fn all_finite(&self) -> bool {
        self.mu.iter().chain(&self.rho).all(|v| v.is_finite())
    }
}

/// `ln((1 − a)p + a)` for `p = e^{logp}`, evaluated as a two-term logsumexp.
pub fn smoothed_log(logp: f64, a: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&a) {
        return Err(Error::InvalidArgument(format!("smoothing must lie in [0, 1), got {a}")));
    }
    if a == 0.0 {
        return Ok(logp);
    }
    Ok(logsumexp(&[logp + (-a).ln_1p(), a.ln()]))
}

/// Noise for one batch: `[M, D]` when shared, `[B·M, D]` (example-major)
/// when drawn per example.
pub fn draw_batch_noise(spec: &ObjectiveSpec, key: StreamKey, batch_len: usize, dim: usize) -> Tensor {
    match spec.sampling {
        SamplingScheme::Shared => draw_noise(key, spec.m_train, dim),
        SamplingScheme::PerExample => draw_noise(key, spec.m_train * batch_len, dim),
    }
}

struct LossGraph {
    graph: Graph,
    data: NodeId,
    reg: NodeId,
    total: NodeId,
}

fn check_inputs(arch: &ArchSpec, q: &MeanFieldGaussian, batch: &Batch, spec: &ObjectiveSpec, noise: &Tensor) -> Result<()> {
    spec.validate()?;
    if q.dim() != arch.num_params() {
        return Err(Error::Dimension(format!(
            "posterior has {} parameters, architecture needs {}",
            q.dim(),
            arch.num_params()
        )));
    }
    let rows = match spec.sampling {
        SamplingScheme::Shared => spec.m_train,
        SamplingScheme::PerExample => spec.m_train * batch.len(),
    };
    if noise.shape() != [rows, q.dim()] {
        return Err(Error::Dimension(format!(
            "noise {:?} does not match [{rows}, {}]",
            noise.shape(),
            q.dim()
        )));
    }
    arch.check_batch(batch)?;
    Ok(())
}

fn build(arch: &ArchSpec, batch: &Batch, spec: &ObjectiveSpec, noise: &Tensor) -> Result<LossGraph> {
    let d = arch.num_params();
    let m = spec.m_train;
    let b = batch.len();
    let mut g = Graph::new();
    let mu = g.input("mu");
    let rho = g.input("rho");
    let sigma = g.softplus(rho);
    let eps = g.constant(noise.clone());
    let scaled = g.mul_row(eps, sigma);
    let thetas = g.add_row(scaled, mu);

    let ll = match spec.sampling {
        SamplingScheme::Shared => {
            let x = g.constant(batch.inputs().clone());
            let rows: Vec<NodeId> = (0..m)
                .map(|s| arch.build_log_lik(&mut g, thetas, s * d, x, batch))
                .collect();
            g.stack(&rows)
        }
        SamplingScheme::PerExample => {
            let singles: Vec<Batch> = (0..b).map(|i| batch.select(&[i])).collect::<Result<_>>()?;
            let xs: Vec<NodeId> = singles.iter().map(|e| g.constant(e.inputs().clone())).collect();
            let mut cells = Vec::with_capacity(m * b);
            for s in 0..m {
                for (i, single) in singles.iter().enumerate() {
                    cells.push(arch.build_log_lik(&mut g, thetas, (i * m + s) * d, xs[i], single));
                }
            }
            let stacked = g.stack(&cells);
            g.reshape(stacked, &[m, b])
        }
    };
    let ll = if spec.smoothing > 0.0 {
        g.smoothed_log(ll, spec.smoothing)
    } else {
        ll
    };
    let data = match spec.kind {
        ObjectiveKind::Elbo => {
            let avg = g.mean(ll);
            g.neg(avg)
        }
        ObjectiveKind::Dlm => {
            let lse = g.logsumexp(ll, 0);
            let lme = g.add_scalar(lse, -(m as f64).ln());
            let avg = g.mean(lme);
            g.neg(avg)
        }
    };
    let reg = regularizer_node(&mut g, mu, rho, d, &spec.regularizer);
    let weighted = g.scale(reg, spec.reg_weight());
    let total = g.add(data, weighted);
    Ok(LossGraph { graph: g, data, reg, total })
}

fn bindings(q: &MeanFieldGaussian) -> Bindings {
    [
        ("mu".to_string(), Tensor::vector(q.mu().to_vec())),
        ("rho".to_string(), Tensor::vector(q.rho().to_vec())),
    ]
    .into()
}

/// The loss of `spec.kind` on a batch with fixed noise, plus its gradient.
pub fn batch_loss_with_noise(
    arch: &ArchSpec,
    q: &MeanFieldGaussian,
    batch: &Batch,
    spec: &ObjectiveSpec,
    noise: &Tensor,
) -> Result<(LossBreakdown, Gradients)> {
    check_inputs(arch, q, batch, spec, noise)?;
    let LossGraph { mut graph, data, reg, total } = build(arch, batch, spec, noise)?;
    graph.forward(&bindings(q), total)?;
    let data_v = graph.value(data).expect("evaluated").item();
    let reg_v = graph.value(reg).expect("evaluated").item();
    let mut grads = graph.backward(total)?;
    let grads = Gradients {
        mu: grads.remove("mu").expect("bound").into_data(),
        rho: grads.remove("rho").expect("bound").into_data(),
    };
    Ok((LossBreakdown::new(data_v, reg_v, spec), grads))
}

/// Loss value only, with fixed noise.
pub fn batch_loss_value(
    arch: &ArchSpec,
    q: &MeanFieldGaussian,
    batch: &Batch,
    spec: &ObjectiveSpec,
    noise: &Tensor,
) -> Result<LossBreakdown> {
    check_inputs(arch, q, batch, spec, noise)?;
    let LossGraph { mut graph, data, reg, total } = build(arch, batch, spec, noise)?;
    graph.forward(&bindings(q), total)?;
    let data_v = graph.value(data).expect("evaluated").item();
    let reg_v = graph.value(reg).expect("evaluated").item();
    Ok(LossBreakdown::new(data_v, reg_v, spec))
}

fn keyed_loss(
    arch: &ArchSpec,
    q: &MeanFieldGaussian,
    batch: &Batch,
    spec: &ObjectiveSpec,
    key: StreamKey,
    expected: ObjectiveKind,
) -> Result<(LossBreakdown, Gradients)> {
    if spec.kind != expected {
        return Err(Error::InvalidArgument(format!(
            "{} loss requested with a {} objective spec",
            expected.as_str(),
            spec.kind.as_str()
        )));
    }
    let noise = draw_batch_noise(spec, key, batch.len(), q.dim());
    batch_loss_with_noise(arch, q, batch, spec, &noise)
}

/// Multi-sample ELBO loss for one minibatch, noise drawn from `key`.
pub fn elbo_batch_loss(
    arch: &ArchSpec,
    q: &MeanFieldGaussian,
    batch: &Batch,
    spec: &ObjectiveSpec,
    key: StreamKey,
) -> Result<(LossBreakdown, Gradients)> {
    keyed_loss(arch, q, batch, spec, key, ObjectiveKind::Elbo)
}

/// Multi-sample DLM loss for one minibatch, noise drawn from `key`.
pub fn dlm_batch_loss(
    arch: &ArchSpec,
    q: &MeanFieldGaussian,
    batch: &Batch,
    spec: &ObjectiveSpec,
    key: StreamKey,
) -> Result<(LossBreakdown, Gradients)> {
    keyed_loss(arch, q, batch, spec, key, ObjectiveKind::Dlm)
}

/// ELBO and DLM data terms from a `[M, B]` matrix of sample log-likelihoods.
pub fn data_terms(log_liks: &Tensor, smoothing: f64) -> Result<(f64, f64)> {
    let (m, b) = log_liks
        .dims2()
        .ok_or_else(|| Error::Dimension("log-likelihoods must be [M, B]".into()))?;
    let smoothed: Vec<f64> = log_liks
        .data()
        .iter()
        .map(|&l| smoothed_log(l, smoothing))
        .collect::<Result<_>>()?;
    let elbo = -smoothed.iter().sum::<f64>() / (m * b) as f64;
    let ln_m = (m as f64).ln();
    let mut column = vec![0.0; m];
    let mut dlm = 0.0;
    for i in 0..b {
        for (s, c) in column.iter_mut().enumerate() {
            *c = smoothed[s * b + i];
        }
        dlm += logsumexp(&column) - ln_m;
    }
    Ok((elbo, -dlm / b as f64))
}

/// Both losses over a whole dataset with one shared `[M, D]` noise draw.
///
/// Returns `(elbo, dlm)`; the regularizer part is identical in both.
pub fn evaluate_losses(
    arch: &ArchSpec,
    q: &MeanFieldGaussian,
    data: &Batch,
    spec: &ObjectiveSpec,
    key: StreamKey,
) -> Result<(LossBreakdown, LossBreakdown)> {
    spec.validate()?;
    let noise = draw_noise(key, spec.m_train, q.dim());
    let thetas = crate::variational::reparameterize(q, &noise);
    let thetas = Tensor::new(vec![spec.m_train, q.dim()], thetas.concat())?;
    let ll = arch.sample_log_liks(&thetas, data)?;
    let (elbo, dlm) = data_terms(&ll, spec.smoothing)?;
    let reg = crate::variational::regularizer_value(q, &spec.regularizer);
    Ok((LossBreakdown::new(elbo, reg, spec), LossBreakdown::new(dlm, reg, spec)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestMetrics {
    /// Mean of `−log` predictive probability (density, for regression).
    pub nll: f64,
    /// Argmax accuracy; `None` for regression likelihoods.
    pub accuracy: Option<f64>,
}

/// Predictive log-loss and accuracy with `M_eval` samples, unsmoothed.
pub fn test_metrics(
    arch: &ArchSpec,
    q: &MeanFieldGaussian,
    data: &Batch,
    m_eval: usize,
    key: StreamKey,
) -> Result<TestMetrics> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if m_eval == 0 {
        return Err(Error::InvalidArgument("m_eval must be ≥ 1".into()));
    }
    match (arch.likelihood(), data.labels()) {
        (Likelihood::Categorical { .. }, Some(labels)) => {
            let pred = arch.predictive_log_probs(q, data, m_eval, key)?;
            Ok(metrics_from_predictive(&pred, labels))
        }
        _ => {
            let noise = draw_noise(key, m_eval, q.dim());
            let thetas = crate::variational::reparameterize(q, &noise);
            let thetas = Tensor::new(vec![m_eval, q.dim()], thetas.concat())?;
            let ll = arch.sample_log_liks(&thetas, data)?;
            let (_, dlm) = data_terms(&ll, 0.0)?;
            Ok(TestMetrics { nll: dlm, accuracy: None })
        }
    }
}

/// NLL and accuracy from a `[B, C]` matrix of predictive log-probabilities.
pub fn metrics_from_predictive(pred: &Tensor, labels: &[usize]) -> TestMetrics {
    let mut nll = 0.0;
    let mut correct = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let row = pred.row(i);
        nll -= row[y];
        let best = row
            .iter()
            .enumerate()
            .fold(0, |best, (c, &v)| if v > row[best] { c } else { best });
        if best == y {
            correct += 1;
        }
    }
    let n = labels.len() as f64;
    TestMetrics {
        nll: nll / n,
        accuracy: Some(correct as f64 / n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer};

    /// One dense layer `x ↦ b` (zero input) so logits equal the bias.
    fn bias_only() -> ArchSpec {
        ArchSpec::new(
            vec![1],
            vec![Layer::Dense { out: 2, activation: Activation::None }],
            Likelihood::Categorical { classes: 2 },
        )
        .unwrap()
    }

    fn spec(kind: ObjectiveKind, m: usize, eta: f64) -> ObjectiveSpec {
        ObjectiveSpec {
            kind,
            eta,
            m_train: m,
            smoothing: 0.0,
            regularizer: RegularizerSpec::default(),
            dataset_size: 100,
            sampling: SamplingScheme::Shared,
        }
    }

    /// Noise rows that move the class-1 bias so that class 0 gets
    /// probability 0.5 then 0.25 (sigma = 1 on that coordinate only).
    fn two_sample_setup() -> (MeanFieldGaussian, Tensor, Batch) {
        let rho_off = -1000.0;
        let q = MeanFieldGaussian::new(
            vec![0.0; 4],
            vec![rho_off, rho_off, rho_off, crate::tensor::inv_softplus(1.0)],
        )
        .unwrap();
        let noise = Tensor::new(vec![2, 4], vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3f64.ln()]).unwrap();
        let batch = Batch::classification(1, 1, vec![0.0], vec![0]).unwrap();
        (q, noise, batch)
    }

    #[test]
    fn smoothed_log_examples() {
        assert!(smoothed_log(0.0, 0.001).unwrap().abs() < 1e-15);
        assert!((smoothed_log(f64::NEG_INFINITY, 0.001).unwrap() - 0.001f64.ln()).abs() < 1e-15);
        assert_eq!(smoothed_log(-3.25, 0.0).unwrap(), -3.25);
        assert!(smoothed_log(-1.0, 1.0).is_err());
        assert!(smoothed_log(-1.0, -0.1).is_err());
        for &lp in &[-50.0, -7.0, -1.0, 0.0] {
            assert!(smoothed_log(lp, 0.001).unwrap() >= 0.001f64.ln());
        }
    }

    #[test]
    fn elbo_and_dlm_two_sample_examples() {
        let (q, noise, batch) = two_sample_setup();
        let arch = bias_only();
        let (elbo, _) = batch_loss_with_noise(&arch, &q, &batch, &spec(ObjectiveKind::Elbo, 2, 0.0), &noise).unwrap();
        assert!((elbo.data_term - 1.039_720_770_839_918).abs() < 1e-12);
        let (dlm, _) = batch_loss_with_noise(&arch, &q, &batch, &spec(ObjectiveKind::Dlm, 2, 0.0), &noise).unwrap();
        assert!((dlm.data_term - 0.980_829_253_011_726_2).abs() < 1e-12);
    }

    #[test]
    fn deterministic_net_half_probability() {
        let arch = bias_only();
        let q = MeanFieldGaussian::new(vec![0.0; 4], vec![-1000.0; 4]).unwrap();
        let batch = Batch::classification(1, 1, vec![0.0], vec![1]).unwrap();
        let s = spec(ObjectiveKind::Elbo, 1, 0.0);
        let (l, _) = elbo_batch_loss(&arch, &q, &batch, &s, StreamKey::new(0)).unwrap();
        assert!((l.data_term - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn breakdown_arithmetic() {
        let s = spec(ObjectiveKind::Elbo, 1, 0.1);
        let b = LossBreakdown::new(0.5, 10.0, &s);
        assert!((b.weighted_reg - 0.01).abs() < 1e-15);
        assert_eq!(b.total, b.data_term + b.weighted_reg);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let arch = bias_only();
        let (q, _, batch) = two_sample_setup();
        let s = spec(ObjectiveKind::Dlm, 2, 0.1);
        assert!(elbo_batch_loss(&arch, &q, &batch, &s, StreamKey::new(0)).is_err());
    }

    #[test]
    fn identical_samples_close_the_gap() {
        let arch = bias_only();
        let (q, _, batch) = two_sample_setup();
        let noise = Tensor::new(vec![3, 4], vec![0.3; 12]).unwrap();
        let e = batch_loss_value(&arch, &q, &batch, &spec(ObjectiveKind::Elbo, 3, 0.0), &noise).unwrap();
        let d = batch_loss_value(&arch, &q, &batch, &spec(ObjectiveKind::Dlm, 3, 0.0), &noise).unwrap();
        assert!((e.data_term - d.data_term).abs() < 1e-12);
    }

    #[test]
    fn per_example_sampling_matches_manual_loop() {
        let arch = ArchSpec::new(
            vec![2],
            vec![
                Layer::Dense { out: 3, activation: Activation::Tanh },
                Layer::Dense { out: 2, activation: Activation::None },
            ],
            Likelihood::Categorical { classes: 2 },
        )
        .unwrap();
        let d = arch.num_params();
        let q = MeanFieldGaussian::new(
            (0..d).map(|i| (i as f64 * 0.37).sin()).collect(),
            vec![-1.0; d],
        )
        .unwrap();
        let batch = Batch::classification(3, 2, vec![0.1, 0.2, -0.4, 1.0, 0.8, -0.3], vec![0, 1, 1]).unwrap();
        let mut s = spec(ObjectiveKind::Dlm, 2, 0.0);
        s.sampling = SamplingScheme::PerExample;
        let noise = draw_batch_noise(&s, StreamKey::new(9), 3, d);
        let got = batch_loss_value(&arch, &q, &batch, &s, &noise).unwrap();

        let mut want = 0.0;
        for i in 0..3 {
            let rows = Tensor::new(vec![2, d], noise.data()[i * 2 * d..(i + 1) * 2 * d].to_vec()).unwrap();
            let thetas = crate::variational::reparameterize(&q, &rows).concat();
            let ll = arch
                .sample_log_liks(&Tensor::new(vec![2, d], thetas).unwrap(), &batch.select(&[i]).unwrap())
                .unwrap();
            want += -(logsumexp(ll.data()) - 2f64.ln());
        }
        assert!((got.data_term - want / 3.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_examples() {
        let c = 10;
        let uniform = Tensor::filled(vec![4, c], -(c as f64).ln());
        let m = metrics_from_predictive(&uniform, &[0, 3, 9, 1]);
        assert!((m.nll - 10f64.ln()).abs() < 1e-15);

        let confident = Tensor::new(vec![2, 2], vec![0.0, f64::MIN, f64::MIN, 0.0]).unwrap();
        let m = metrics_from_predictive(&confident, &[0, 1]);
        assert_eq!(m.nll, 0.0);
        assert_eq!(m.accuracy, Some(1.0));

        let p = Tensor::new(vec![3, 2], [0.7f64, 0.3, 0.3, 0.7, 0.7, 0.3].map(f64::ln).to_vec()).unwrap();
        let m = metrics_from_predictive(&p, &[0, 1, 0]);
        assert!((m.nll - 0.356_674_943_938_732_4).abs() < 1e-12);
    }

    #[test]
    fn data_terms_match_graph() {
        let (q, noise, batch) = two_sample_setup();
        let arch = bias_only();
        let thetas = crate::variational::reparameterize(&q, &noise).concat();
        let ll = arch.sample_log_liks(&Tensor::new(vec![2, 4], thetas).unwrap(), &batch).unwrap();
        let (e, d) = data_terms(&ll, 0.0).unwrap();
        assert!((e - 1.039_720_770_839_918).abs() < 1e-12);
        assert!((d - 0.980_829_253_011_726_2).abs() < 1e-12);
    }
}

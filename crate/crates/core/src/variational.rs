//! The mean-field Gaussian posterior family and everything that acts on it
//! directly: reparameterized sampling, the KL to an isotropic prior, the
//! collapsed-VI and empirical-Bayes regularizers, and projection onto the
//! bounded parameter set.
//!
//! Scales are stored unconstrained: `σ_j = softplus(ρ_j)`.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::tensor::{inv_softplus, log_softplus, softplus, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldGaussian {
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl MeanFieldGaussian {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::Dimension(format!(
                "mu has {} entries, rho has {}",
                mu.len(),
                rho.len()
            )));
        }
        if mu.is_empty() {
            return Err(Error::Dimension("empty posterior".into()));
        }
        if !mu.iter().chain(&rho).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite posterior parameter".into()));
        }
        Ok(MeanFieldGaussian { mu, rho })
    }

    /// Builds `q` from means and variances, back-solving `ρ`.
    pub fn from_mean_variance(mu: Vec<f64>, variance: &[f64]) -> Result<Self> {
        if let Some(v) = variance.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(format!("non-positive variance {v}")));
        }
        let rho = variance.iter().map(|v| inv_softplus(v.sqrt())).collect();
        MeanFieldGaussian::new(mu, rho)
    }

    /// Means `mu` with every standard deviation equal to `sigma`.
    pub fn with_constant_sigma(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        let rho = vec![inv_softplus(sigma); mu.len()];
        MeanFieldGaussian::new(mu, rho)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.rho
            .iter()
            .map(|&r| {
                let s = softplus(r);
                s * s
            })
            .collect()
    }

    /// `(μ, ρ)` concatenated, the layout the optimizer works on.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend_from_slice(&self.rho);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::Dimension(format!("odd flat length {}", flat.len())));
        }
        let d = flat.len() / 2;
        MeanFieldGaussian::new(flat[..d].to_vec(), flat[d..].to_vec())
    }
}

/// Zero-mean isotropic Gaussian prior with variance `s²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorSpec {
    variance: f64,
}

impl PriorSpec {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "prior variance must be positive, got {variance}"
            )));
        }
        Ok(PriorSpec { variance })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { variance: 0.05 }
    }
}

/// Which regularizer replaces (or is) the KL term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegularizerSpec {
    /// KL to a fixed isotropic prior.
    FixedKl { prior: PriorSpec },
    /// Collapsed VI with a learned prior mean ("mean").
    CviMean { gamma: f64, alpha_reg: f64 },
    /// Collapsed VI with learned prior mean and variance ("mv").
    CviMv { alpha: f64, beta: f64, delta: f64 },
    /// Empirical Bayes ("eb").
    Eb { alpha: f64, beta: f64 },
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec::FixedKl {
            prior: PriorSpec::default(),
        }
    }
}

impl RegularizerSpec {
    pub fn cvi_mean_default() -> Self {
        RegularizerSpec::CviMean {
            gamma: 0.3,
            alpha_reg: 0.05,
        }
    }

    pub fn cvi_mv_default() -> Self {
        RegularizerSpec::CviMv {
            alpha: 0.5,
            beta: 0.01,
            delta: 0.1,
        }
    }

    pub fn eb_default() -> Self {
        RegularizerSpec::Eb {
            alpha: 4.4798,
            beta: 10.0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            RegularizerSpec::FixedKl { .. } => "fixed_kl",
            RegularizerSpec::CviMean { .. } => "cvi_mean",
            RegularizerSpec::CviMv { .. } => "cvi_mv",
            RegularizerSpec::Eb { .. } => "eb",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let params: Vec<(&str, f64)> = match *self {
            RegularizerSpec::FixedKl { prior } => vec![("prior_variance", prior.variance)],
            RegularizerSpec::CviMean { gamma, alpha_reg } => {
                vec![("gamma", gamma), ("alpha_reg", alpha_reg)]
            }
            RegularizerSpec::CviMv { alpha, beta, delta } => {
                vec![("alpha", alpha), ("beta", beta), ("delta", delta)]
            }
            RegularizerSpec::Eb { alpha, beta } => vec![("alpha", alpha), ("beta", beta)],
        };
        for (name, v) in params {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "regularizer {} needs {name} > 0, got {v}",
                    self.kind_name()
                )));
            }
        }
        Ok(())
    }
}

/// Bounds on `‖μ‖₂` and `‖σ²‖∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundSpec {
    pub b_m: f64,
    pub b_v: f64,
}

impl BoundSpec {
    pub fn new(b_m: f64, b_v: f64) -> Result<Self> {
        if !(b_m > 0.0 && b_v > 0.0 && b_m.is_finite() && b_v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bounds must be positive, got b_m={b_m}, b_v={b_v}"
            )));
        }
        Ok(BoundSpec { b_m, b_v })
    }
}

/// Standard normal noise `ε` of shape `[M, D]`; row `m` is draw `m` of `key`.
pub fn draw_noise(key: StreamKey, samples: usize, dim: usize) -> Tensor {
    assert!(samples >= 1, "need at least one sample");
    let mut data = Vec::with_capacity(samples * dim);
    for m in 0..samples {
        data.extend(key.normals(m as u64, dim));
    }
    Tensor::new(vec![samples, dim], data).expect("shape matches")
}

/// `θ^{(m)} = μ + σ ⊙ ε^{(m)}` for a fixed noise matrix.
pub fn reparameterize(q: &MeanFieldGaussian, noise: &Tensor) -> Vec<Vec<f64>> {
    let sigma = q.sigma();
    noise
        .data()
        .chunks(q.dim())
        .map(|eps| {
            q.mu.iter()
                .zip(&sigma)
                .zip(eps)
                .map(|((m, s), e)| m + s * e)
                .collect()
        })
        .collect()
}

/// `M` reparameterized samples from `q`; sample `m` depends only on `(key, m)`.
pub fn sample_params(q: &MeanFieldGaussian, key: StreamKey, samples: usize) -> Vec<Vec<f64>> {
    reparameterize(q, &draw_noise(key, samples, q.dim()))
}

/// Closed-form `KL(q ‖ N(0, s² I))`.
pub fn kl_to_prior(q: &MeanFieldGaussian, prior: &PriorSpec) -> f64 {
    let s2 = prior.variance;
    let ln_s2 = s2.ln();
    0.5 * q
        .mu
        .iter()
        .zip(&q.rho)
        .map(|(&m, &r)| {
            let s = softplus(r);
            (s * s + m * m) / s2 - 1.0 - 2.0 * log_softplus(r) + ln_s2
        })
        .sum::<f64>()
}

/// The active regularizer's value at `q`.
pub fn regularizer_value(q: &MeanFieldGaussian, spec: &RegularizerSpec) -> f64 {
    let d = q.dim() as f64;
    let var = q.variance();
    let ln_var_sum: f64 = q.rho.iter().map(|&r| 2.0 * log_softplus(r)).sum();
    let mu_sq: f64 = q.mu.iter().map(|m| m * m).sum();
    let var_sum: f64 = var.iter().sum();
    match *spec {
        RegularizerSpec::FixedKl { prior } => kl_to_prior(q, &prior),
        RegularizerSpec::CviMean { gamma, alpha_reg } => {
            (var_sum + alpha_reg * mu_sq) / (2.0 * gamma) - 0.5 * ln_var_sum
                - 0.5 * d * alpha_reg.ln()
        }
        RegularizerSpec::CviMv { alpha, beta, delta } => {
            let s: f64 = q
                .mu
                .iter()
                .zip(&var)
                .map(|(m, v)| (beta + 0.5 * delta * m * m + 0.5 * v).ln())
                .sum();
            (alpha + 0.5) * s - 0.5 * ln_var_sum
        }
        RegularizerSpec::Eb { alpha, beta } => {
            let s = mu_sq + var_sum;
            let t = s + 2.0 * beta;
            let k = d + 2.0 * alpha + 2.0;
            0.5 * (d * (t / k).ln() - ln_var_sum - d) + 0.5 * k / t * s
        }
    }
}

/// Adds the regularizer to `g` as a scalar node of the vector inputs
/// `mu` and `rho` (both of length `dim`).
pub fn regularizer_node(
    g: &mut Graph,
    mu: NodeId,
    rho: NodeId,
    dim: usize,
    spec: &RegularizerSpec,
) -> NodeId {
    let d = dim as f64;
    let sigma = g.softplus(rho);
    let var = g.square(sigma);
    let ln_sigma = g.log_softplus(rho);
    let ln_var = g.scale(ln_sigma, 2.0);
    let mu_sq = g.square(mu);
    match *spec {
        RegularizerSpec::FixedKl { prior } => {
            let s2 = prior.variance;
            let t = g.add(var, mu_sq);
            let t = g.scale(t, 1.0 / s2);
            let t = g.sub(t, ln_var);
            let t = g.sum(t);
            let t = g.scale(t, 0.5);
            g.add_scalar(t, 0.5 * d * (s2.ln() - 1.0))
        }
        RegularizerSpec::CviMean { gamma, alpha_reg } => {
            let m = g.scale(mu_sq, alpha_reg);
            let a = g.add(var, m);
            let a = g.sum(a);
            let a = g.scale(a, 1.0 / (2.0 * gamma));
            let l = g.sum(ln_var);
            let l = g.scale(l, -0.5);
            let r = g.add(a, l);
            g.add_scalar(r, -0.5 * d * alpha_reg.ln())
        }
        RegularizerSpec::CviMv { alpha, beta, delta } => {
            let m = g.scale(mu_sq, 0.5 * delta);
            let v = g.scale(var, 0.5);
            let inner = g.add(m, v);
            let inner = g.add_scalar(inner, beta);
            let inner = g.log(inner);
            let a = g.sum(inner);
            let a = g.scale(a, alpha + 0.5);
            let l = g.sum(ln_var);
            let l = g.scale(l, -0.5);
            g.add(a, l)
        }
        RegularizerSpec::Eb { alpha, beta } => {
            let k = d + 2.0 * alpha + 2.0;
            let ms = g.sum(mu_sq);
            let vs = g.sum(var);
            let s = g.add(ms, vs);
            let t = g.add_scalar(s, 2.0 * beta);
            let ln_t = g.log(t);
            let first = g.scale(ln_t, 0.5 * d);
            let l = g.sum(ln_var);
            let l = g.scale(l, -0.5);
            let ratio = g.div(s, t);
            let ratio = g.scale(ratio, 0.5 * k);
            let r = g.add(first, l);
            let r = g.add(r, ratio);
            g.add_scalar(r, -0.5 * d * k.ln() - 0.5 * d)
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `max_j σ_j²`.
pub fn max_variance(q: &MeanFieldGaussian) -> f64 {
    q.variance().into_iter().fold(0.0, f64::max)
}

pub fn is_feasible(q: &MeanFieldGaussian, bounds: &BoundSpec) -> bool {
    l2_norm(&q.mu) <= bounds.b_m && max_variance(q) <= bounds.b_v
}

/// Euclidean projection of `μ` onto the `b_m` ball and clamping of each
/// `σ_j²` to `b_v`.
///
/// Both constraints hold exactly on the result as measured by [`l2_norm`]
/// and [`max_variance`]; rounding is absorbed by stepping down one ulp at a
/// time. Feasible coordinates are returned untouched, so the map is
/// idempotent.
pub fn project(q: &MeanFieldGaussian, bounds: &BoundSpec) -> MeanFieldGaussian {
    let norm = l2_norm(&q.mu);
    let mu = if norm > bounds.b_m {
        let mut factor = bounds.b_m / norm;
        loop {
            let scaled: Vec<f64> = q.mu.iter().map(|m| m * factor).collect();
            if l2_norm(&scaled) <= bounds.b_m {
                break scaled;
            }
            factor = factor.next_down();
        }
    } else {
        q.mu.clone()
    };

    let sigma_max = bounds.b_v.sqrt();
    let mut rho_cap = inv_softplus(sigma_max);
    while softplus(rho_cap).powi(2) > bounds.b_v {
        rho_cap = rho_cap.next_down();
    }
    let rho = q
        .rho
        .iter()
        .map(|&r| if softplus(r).powi(2) > bounds.b_v { rho_cap } else { r })
        .collect();
    MeanFieldGaussian { mu, rho }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Bindings;
    use proptest::prelude::*;

    fn q_from(mu: &[f64], var: &[f64]) -> MeanFieldGaussian {
        MeanFieldGaussian::from_mean_variance(mu.to_vec(), var).unwrap()
    }

    #[test]
    fn kl_examples() {
        let prior = PriorSpec::new(0.05).unwrap();
        assert!(kl_to_prior(&q_from(&[0.0, 0.0], &[0.05, 0.05]), &prior).abs() < 1e-12);
        // ½[(0.05 + 1)/0.05 − 1 − 0] = 10
        assert!((kl_to_prior(&q_from(&[1.0], &[0.05]), &prior) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn regularizer_examples() {
        let q = q_from(&[0.0], &[1.0]);
        let cases = [
            (RegularizerSpec::cvi_mean_default(), 3.164_532_803_443_662),
            (RegularizerSpec::cvi_mv_default(), -0.673_344_553_263_765_6),
            (RegularizerSpec::eb_default(), 0.066_246_448_240_521_53),
        ];
        for (spec, want) in cases {
            let got = regularizer_value(&q, &spec);
            assert!((got - want).abs() < 1e-12, "{}: {got} vs {want}", spec.kind_name());
        }
        let prior = PriorSpec::new(0.05).unwrap();
        let q = q_from(&[0.3, -1.2], &[0.2, 0.01]);
        assert_eq!(
            regularizer_value(&q, &RegularizerSpec::FixedKl { prior }),
            kl_to_prior(&q, &prior)
        );
    }

    #[test]
    fn graph_regularizers_match_closed_forms() {
        let q = q_from(&[0.4, -0.7, 1.5], &[0.3, 0.02, 1.1]);
        let specs = [
            RegularizerSpec::default(),
            RegularizerSpec::cvi_mean_default(),
            RegularizerSpec::cvi_mv_default(),
            RegularizerSpec::eb_default(),
        ];
        for spec in specs {
            let mut g = Graph::new();
            let mu = g.input("mu");
            let rho = g.input("rho");
            let r = regularizer_node(&mut g, mu, rho, 3, &spec);
            let b: Bindings = [
                ("mu".to_string(), Tensor::vector(q.mu().to_vec())),
                ("rho".to_string(), Tensor::vector(q.rho().to_vec())),
            ]
            .into();
            let v = g.forward(&b, r).unwrap().item();
            let want = regularizer_value(&q, &spec);
            assert!((v - want).abs() < 1e-12 * want.abs().max(1.0), "{spec:?}");
        }
    }

    #[test]
    fn degenerate_variance_collapses_samples() {
        let q = MeanFieldGaussian::new(vec![1.0, -2.0, 3.5], vec![-1000.0; 3]).unwrap();
        for theta in sample_params(&q, StreamKey::new(3), 4) {
            assert_eq!(theta, q.mu());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let q = q_from(&[0.0, 1.0], &[0.5, 0.1]);
        let key = StreamKey::new(11);
        assert_eq!(sample_params(&q, key, 5), sample_params(&q, key, 5));
        // sample m is independent of how many samples are drawn
        assert_eq!(sample_params(&q, key, 2)[1], sample_params(&q, key, 5)[1]);
    }

    #[test]
    fn sample_mean_law_of_large_numbers() {
        let q = q_from(&[1.0], &[0.25]);
        let n = 1_000_000;
        let noise = StreamKey::new(5).normals(0, n);
        let noise = Tensor::new(vec![n, 1], noise).unwrap();
        let mean: f64 = reparameterize(&q, &noise).iter().map(|t| t[0]).sum::<f64>() / n as f64;
        // 4σ/√n = 0.002
        assert!((mean - 1.0).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn projection_examples() {
        let bounds = BoundSpec::new(50.0, 0.25).unwrap();
        let q = q_from(&[60.0, 80.0], &[0.1, 0.1]);
        let p = project(&q, &bounds);
        assert!((p.mu()[0] - 30.0).abs() < 1e-12 && (p.mu()[1] - 40.0).abs() < 1e-12);
        assert!(l2_norm(p.mu()) <= 50.0);
        assert!((l2_norm(p.mu()) - 50.0).abs() < 1e-12);

        let feasible = q_from(&[18.0, 24.0], &[0.1, 0.05]);
        let b90 = BoundSpec::new(90.0, 0.25).unwrap();
        assert_eq!(project(&feasible, &b90), feasible);

        let wide = q_from(&[0.0, 0.0], &[0.3, 5.0]);
        let p = project(&wide, &bounds);
        assert!(max_variance(&p) <= 0.25);
        assert!((max_variance(&p) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(PriorSpec::new(0.0).is_err());
        assert!(BoundSpec::new(-1.0, 0.25).is_err());
        assert!(RegularizerSpec::Eb { alpha: 0.0, beta: 1.0 }.validate().is_err());
        assert!(MeanFieldGaussian::new(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(MeanFieldGaussian::from_mean_variance(vec![0.0], &[0.0]).is_err());
    }

    fn arb_q() -> impl Strategy<Value = MeanFieldGaussian> {
        (1usize..12).prop_flat_map(|d| {
            (
                prop::collection::vec(-200.0..200.0f64, d),
                prop::collection::vec(-8.0..4.0f64, d),
            )
                .prop_map(|(mu, rho)| MeanFieldGaussian::new(mu, rho).unwrap())
        })
    }

    proptest! {
        #[test]
        fn projection_is_feasible_idempotent_and_shrinking(
            q in arb_q(),
            b_m in prop::sample::select(vec![30.0, 50.0, 90.0, 120.0]),
        ) {
            let bounds = BoundSpec::new(b_m, 0.25).unwrap();
            let p = project(&q, &bounds);
            prop_assert!(is_feasible(&p, &bounds));
            prop_assert_eq!(project(&p, &bounds), p.clone());
            prop_assert!(l2_norm(p.mu()) <= l2_norm(q.mu()));
            for (a, b) in p.variance().iter().zip(q.variance()) {
                prop_assert!(*a <= b);
            }
        }

        #[test]
        fn kl_is_nonnegative(q in arb_q(), s2 in 0.01..2.0f64) {
            let prior = PriorSpec::new(s2).unwrap();
            prop_assert!(kl_to_prior(&q, &prior) >= -1e-9);
        }
    }
}

//! Gaussian-mean model `y = θ + noise`, `noise ~ N(0, τ² I)`, where both
//! per-example losses have closed forms under a mean-field Gaussian `q`:
//!
//! - DLM: `−log E_q p(y|θ) = Σ_j ½ ln 2π(σ_j² + τ²) + (y_j − μ_j)² / 2(σ_j² + τ²)`
//! - ELBO: `E_q[−log p(y|θ)] = Σ_j ½ ln 2πτ² + ((y_j − μ_j)² + σ_j²) / 2τ²`
//!
//! That makes it a reference for checking the Monte-Carlo estimators and
//! for verifying, by exhaustive search over a finite candidate set, that
//! the KL-regularized minimizer also solves the KL-ball constrained one.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::tensor::logsumexp;
use crate::variational::{sample_params, MeanFieldGaussian, PriorSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct ConjugateModel {
    dim: usize,
    noise_variance: f64,
    data: Vec<Vec<f64>>,
}

impl ConjugateModel {
    pub fn new(dim: usize, noise_variance: f64, data: Vec<Vec<f64>>) -> Result<Self> {
        if !(noise_variance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        if dim == 0 || data.iter().any(|y| y.len() != dim) {
            return Err(Error::Dimension(format!("observations must all have dimension {dim}")));
        }
        Ok(ConjugateModel { dim, noise_variance, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    /// Exact `−log E_q p(y|θ)` for means `mu` and variances `var`.
    pub fn dlm_loss_mv(&self, mu: &[f64], var: &[f64], y: &[f64]) -> f64 {
        let t2 = self.noise_variance;
        mu.iter()
            .zip(var)
            .zip(y)
            .map(|((m, v), y)| {
                let s = v + t2;
                0.5 * (2.0 * PI * s).ln() + (y - m).powi(2) / (2.0 * s)
            })
            .sum()
    }

    /// Exact `E_q[−log p(y|θ)]` for means `mu` and variances `var`.
    pub fn elbo_loss_mv(&self, mu: &[f64], var: &[f64], y: &[f64]) -> f64 {
        let t2 = self.noise_variance;
        mu.iter()
            .zip(var)
            .zip(y)
            .map(|((m, v), y)| 0.5 * (2.0 * PI * t2).ln() + ((y - m).powi(2) + v) / (2.0 * t2))
            .sum()
    }

    pub fn exact_dlm_loss(&self, q: &MeanFieldGaussian, y: &[f64]) -> Result<f64> {
        self.check(q, y)?;
        Ok(self.dlm_loss_mv(q.mu(), &q.variance(), y))
    }

    pub fn exact_elbo_loss(&self, q: &MeanFieldGaussian, y: &[f64]) -> Result<f64> {
        self.check(q, y)?;
        Ok(self.elbo_loss_mv(q.mu(), &q.variance(), y))
    }

    fn check(&self, q: &MeanFieldGaussian, y: &[f64]) -> Result<()> {
        if q.dim() != self.dim || y.len() != self.dim {
            return Err(Error::Dimension(format!(
                "model dimension {}, posterior {}, observation {}",
                self.dim,
                q.dim(),
                y.len()
            )));
        }
        Ok(())
    }

    /// `log p(y | θ)`.
    pub fn log_lik(&self, theta: &[f64], y: &[f64]) -> f64 {
        let t2 = self.noise_variance;
        theta
            .iter()
            .zip(y)
            .map(|(t, y)| -0.5 * (2.0 * PI * t2).ln() - (y - t).powi(2) / (2.0 * t2))
            .sum()
    }
}

/// Empirical behaviour of both Monte-Carlo estimators at one `M`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub m: usize,
    pub trials: usize,
    pub elbo_mean: f64,
    pub elbo_stderr: f64,
    pub dlm_mean: f64,
    pub dlm_stderr: f64,
    pub exact_elbo: f64,
    pub exact_dlm: f64,
}

impl ProbeRow {
    /// Estimated bias of the DLM estimator.
    pub fn dlm_gap(&self) -> f64 {
        self.dlm_mean - self.exact_dlm
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Repeats both `M`-sample estimators `trials` times for every `M` in
/// `m_grid` and reports their empirical means against the exact values.
pub fn mc_bias_probe(
    model: &ConjugateModel,
    q: &MeanFieldGaussian,
    y: &[f64],
    m_grid: &[usize],
    trials: usize,
    key: StreamKey,
) -> Result<Vec<ProbeRow>> {
    if trials < 1000 {
        return Err(Error::InvalidArgument(format!("need ≥ 1000 trials, got {trials}")));
    }
    if m_grid.contains(&0) {
        return Err(Error::InvalidArgument("M must be ≥ 1".into()));
    }
    let exact_elbo = model.exact_elbo_loss(q, y)?;
    let exact_dlm = model.exact_dlm_loss(q, y)?;
    m_grid
        .iter()
        .map(|&m| {
            let mut elbo = Vec::with_capacity(trials);
            let mut dlm = Vec::with_capacity(trials);
            let ln_m = (m as f64).ln();
            for t in 0..trials {
                let thetas = sample_params(q, key.path(&[m as u64, t as u64]), m);
                let lls: Vec<f64> = thetas.iter().map(|th| model.log_lik(th, y)).collect();
                elbo.push(-lls.iter().sum::<f64>() / m as f64);
                dlm.push(-(logsumexp(&lls) - ln_m));
            }
            let (elbo_mean, elbo_stderr) = mean_stderr(&elbo);
            let (dlm_mean, dlm_stderr) = mean_stderr(&dlm);
            Ok(ProbeRow {
                m,
                trials,
                elbo_mean,
                elbo_stderr,
                dlm_mean,
                dlm_stderr,
                exact_elbo,
                exact_dlm,
            })
        })
        .collect()
}

/// One candidate posterior `(μ, σ²)` on a search grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

/// `μ` linearly spaced over `mu_range`, `σ²` log-spaced over `var_range`.
pub fn grid_1d(mu_range: (f64, f64), mu_points: usize, var_range: (f64, f64), var_points: usize) -> Vec<Candidate> {
    assert!(mu_points >= 2 && var_points >= 2, "grid needs at least two points per axis");
    let (lo, hi) = (var_range.0.ln(), var_range.1.ln());
    let mut out = Vec::with_capacity(mu_points * var_points);
    for i in 0..mu_points {
        let mu = mu_range.0 + (mu_range.1 - mu_range.0) * i as f64 / (mu_points - 1) as f64;
        for j in 0..var_points {
            let var = (lo + (hi - lo) * j as f64 / (var_points - 1) as f64).exp();
            out.push(Candidate { mu: vec![mu], var: vec![var] });
        }
    }
    out
}

/// KL from a candidate to the zero-mean isotropic prior.
pub fn candidate_kl(c: &Candidate, prior: &PriorSpec) -> f64 {
    let s2 = prior.variance();
    0.5 * c
        .mu
        .iter()
        .zip(&c.var)
        .map(|(m, v)| (v + m * m) / s2 - 1.0 - (v / s2).ln())
        .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub index: usize,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub data_term: f64,
    pub kl: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prop1Report {
    pub eta: f64,
    #[serde(rename = "A_eta")]
    pub a_eta: f64,
    /// Every minimizer of data term + η·KL (ties within tolerance).
    pub q_reg: Vec<ScoredCandidate>,
    /// Every minimizer of the data term subject to KL ≤ A_η.
    pub q_con: Vec<ScoredCandidate>,
    pub reg_objective: f64,
    pub reg_data_term: f64,
    pub con_data_term: f64,
    pub tie_tolerance: f64,
    pub pass: bool,
}

const TIE_TOL: f64 = 1e-12;

fn ties(scores: &[(usize, f64)]) -> Vec<usize> {
    let best = scores
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * best.abs().max(1.0);
    scores
        .iter()
        .filter(|&&(_, v)| v <= best + tol)
        .map(|&(i, _)| i)
        .collect()
}

/// Finds the regularized minimizer `q_reg` over `grid`, sets
/// `A_η = KL(q_reg ‖ prior)`, then finds the data-term minimizer `q_con`
/// within `KL ≤ A_η`. Passes when both attain the same data term.
pub fn proposition1_grid_check(
    model: &ConjugateModel,
    eta: f64,
    grid: &[Candidate],
    prior: &PriorSpec,
) -> Result<Prop1Report> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("eta must be ≥ 0, got {eta}")));
    }
    for c in grid {
        if c.mu.len() != model.dim() || c.var.len() != model.dim() {
            return Err(Error::Dimension("grid candidate dimension".into()));
        }
        if c.var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("grid variances must be positive".into()));
        }
    }
    let scored: Vec<ScoredCandidate> = grid
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let data_term: f64 = model
                .data()
                .iter()
                .map(|y| model.dlm_loss_mv(&c.mu, &c.var, y))
                .sum();
            let kl = candidate_kl(c, prior);
            ScoredCandidate {
                index,
                mu: c.mu.clone(),
                var: c.var.clone(),
                data_term,
                kl,
                objective: data_term + eta * kl,
            }
        })
        .collect();

    let reg_idx = ties(&scored.iter().map(|s| (s.index, s.objective)).collect::<Vec<_>>());
    let first = &scored[reg_idx[0]];
    let a_eta = first.kl;
    let feasible: Vec<(usize, f64)> = scored
        .iter()
        .filter(|s| s.kl <= a_eta)
        .map(|s| (s.index, s.data_term))
        .collect();
    let con_idx = ties(&feasible);
    let con_data_term = scored[con_idx[0]].data_term;
    let tol = TIE_TOL * first.data_term.abs().max(1.0);
    let pass = (con_data_term - first.data_term).abs() <= tol;
    Ok(Prop1Report {
        eta,
        a_eta,
        reg_objective: first.objective,
        reg_data_term: first.data_term,
        con_data_term,
        q_reg: reg_idx.iter().map(|&i| scored[i].clone()).collect(),
        q_con: con_idx.iter().map(|&i| scored[i].clone()).collect(),
        tie_tolerance: TIE_TOL,
        pass,
    })
}

/// The standard check: `d = 1`, dataset `{0}`, `τ² = 1`, prior variance
/// 0.05, and a 101×101 grid over `μ ∈ [−2, 2]`, `σ² ∈ [10⁻³, 1]`
/// (log-spaced).
pub fn reference_proposition1(eta: f64) -> Result<Prop1Report> {
    let model = ConjugateModel::new(1, 1.0, vec![vec![0.0]])?;
    let grid = grid_1d((-2.0, 2.0), 101, (1e-3, 1.0), 101);
    proposition1_grid_check(&model, eta, &grid, &PriorSpec::new(0.05)?)
}

/// Bias probe on `d = 1`, `τ² = 1`, `y = 0`, `q = N(0.5, 1)`.
pub fn reference_bias_probe(m_grid: &[usize], trials: usize, seed: u64) -> Result<Vec<ProbeRow>> {
    let model = ConjugateModel::new(1, 1.0, vec![])?;
    let q = MeanFieldGaussian::from_mean_variance(vec![0.5], &[1.0])?;
    mc_bias_probe(&model, &q, &[0.0], m_grid, trials, StreamKey::new(seed).child(crate::rng::tag::PROBE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_model() -> ConjugateModel {
        ConjugateModel::new(1, 1.0, vec![vec![0.0]]).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let m = unit_model();
        let q = MeanFieldGaussian::from_mean_variance(vec![0.0], &[1.0]).unwrap();
        assert!((m.exact_dlm_loss(&q, &[0.0]).unwrap() - 1.265_512_123_484_645_4).abs() < 1e-12);
        assert!((m.exact_elbo_loss(&q, &[0.0]).unwrap() - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn delta_posterior_limit() {
        let m = ConjugateModel::new(2, 0.3, vec![]).unwrap();
        let q = MeanFieldGaussian::new(vec![0.2, -1.0], vec![-1000.0; 2]).unwrap();
        let y = [1.0, 0.5];
        let dlm = m.exact_dlm_loss(&q, &y).unwrap();
        let elbo = m.exact_elbo_loss(&q, &y).unwrap();
        let direct = -m.log_lik(q.mu(), &y);
        assert!((dlm - direct).abs() < 1e-12);
        assert!((elbo - direct).abs() < 1e-12);
    }

    #[test]
    fn translation_invariance_and_jensen() {
        let m = ConjugateModel::new(3, 0.7, vec![]).unwrap();
        let var = [0.2, 1.5, 0.01];
        let mu = [0.3, -0.4, 2.0];
        let y = [1.0, 0.0, -1.0];
        let shift = 4.25;
        let mu2: Vec<f64> = mu.iter().map(|v| v + shift).collect();
        let y2: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let a = m.dlm_loss_mv(&mu, &var, &y);
        assert!((a - m.dlm_loss_mv(&mu2, &var, &y2)).abs() < 1e-12);
        assert!(a <= m.elbo_loss_mv(&mu, &var, &y));
    }

    #[test]
    fn too_few_trials_rejected() {
        let m = unit_model();
        let q = MeanFieldGaussian::from_mean_variance(vec![0.0], &[1.0]).unwrap();
        assert!(mc_bias_probe(&m, &q, &[0.0], &[1], 10, StreamKey::new(0)).is_err());
    }

    #[test]
    fn regularized_argmin_is_feasible_and_large_eta_hugs_prior() {
        let model = unit_model();
        let prior = PriorSpec::new(0.05).unwrap();
        let grid = grid_1d((-2.0, 2.0), 41, (1e-3, 1.0), 41);
        let r = proposition1_grid_check(&model, 0.1, &grid, &prior).unwrap();
        assert!(r.q_reg[0].kl <= r.a_eta);
        assert!(r.pass);

        let r = proposition1_grid_check(&model, 1e9, &grid, &prior).unwrap();
        let min_kl = grid
            .iter()
            .map(|c| candidate_kl(c, &prior))
            .fold(f64::INFINITY, f64::min);
        assert!((r.q_reg[0].kl - min_kl).abs() < 1e-12);
    }
}

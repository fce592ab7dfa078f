//! Linear paths between two posteriors and paired run comparisons.
//!
//! Paths interpolate means and variances (not `ρ`), and every point on a
//! path is evaluated with the same frozen noise so the curves are smooth in
//! `α`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::objectives::{evaluate_losses, test_metrics, ObjectiveKind, ObjectiveSpec};
use crate::rng::{tag, StreamKey};
use crate::tensor::inv_softplus;
use crate::trainer::{Checkpoint, TrainData};
use crate::variational::MeanFieldGaussian;

fn lerp(a: f64, b: f64, alpha: f64) -> f64 {
    if alpha <= 0.5 {
        a + alpha * (b - a)
    } else {
        b + (1.0 - alpha) * (a - b)
    }
}

/// `(1−α)·qA + α·qB` in `(μ, σ²)`. Exact at `α ∈ {0, 1}`.
pub fn interpolate(qa: &MeanFieldGaussian, qb: &MeanFieldGaussian, alpha: f64) -> Result<MeanFieldGaussian> {
    if qa.dim() != qb.dim() {
        return Err(Error::Dimension(format!(
            "endpoints have {} and {} parameters",
            qa.dim(),
            qb.dim()
        )));
    }
    if !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be finite, got {alpha}")));
    }
    let (va, vb) = (qa.variance(), qb.variance());
    let mut mu = Vec::with_capacity(qa.dim());
    let mut rho = Vec::with_capacity(qa.dim());
    for j in 0..qa.dim() {
        mu.push(lerp(qa.mu()[j], qb.mu()[j], alpha));
        let v = lerp(va[j], vb[j], alpha);
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "interpolated variance {v} ≤ 0 at coordinate {j} (alpha {alpha})"
            )));
        }
        rho.push(if v == va[j] {
            qa.rho()[j]
        } else if v == vb[j] {
            qb.rho()[j]
        } else {
            inv_softplus(v.sqrt())
        });
    }
    MeanFieldGaussian::new(mu, rho)
}

/// `0, 0.05, …, 1`.
pub fn default_alphas() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Clone, Debug)]
pub struct PathSpec {
    pub a: Checkpoint,
    pub b: Checkpoint,
    pub alphas: Vec<f64>,
    pub m_eval: usize,
    pub eval_seed: u64,
    /// Draw fresh noise at every `α` instead of freezing it.
    pub resample: bool,
}

impl PathSpec {
    pub fn new(a: Checkpoint, b: Checkpoint) -> Self {
        let eval_seed = a.seed;
        PathSpec {
            a,
            b,
            alphas: default_alphas(),
            m_eval: 10,
            eval_seed,
            resample: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.arch != self.b.arch {
            return Err(Error::ArchMismatch {
                checkpoint: crate::trainer::describe_arch(&self.a.arch),
                config: crate::trainer::describe_arch(&self.b.arch),
            });
        }
        if self.alphas.is_empty() {
            return Err(Error::InvalidArgument("no alphas given".into()));
        }
        if self.alphas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("alphas must be strictly increasing".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(-0.25..=1.25).contains(*a)) {
            return Err(Error::InvalidArgument(format!("alpha {a} outside [-0.25, 1.25]")));
        }
        if self.m_eval == 0 {
            return Err(Error::InvalidArgument("m_eval must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathRecord {
    pub alpha: f64,
    pub elbo_with_reg: f64,
    pub elbo_no_reg: f64,
    pub dlm_with_reg: f64,
    pub dlm_no_reg: f64,
    pub reg_value: f64,
    pub test_nll: f64,
    pub test_accuracy: Option<f64>,
}

/// Evaluates one posterior the way [`path_scan`] evaluates each path point.
/// `objective.dataset_size` is replaced by the training set size.
pub fn evaluate_posterior(
    ckpt_arch: &crate::model::ArchSpec,
    q: &MeanFieldGaussian,
    data: &TrainData,
    objective: &ObjectiveSpec,
    m_eval: usize,
    key: StreamKey,
    alpha: f64,
) -> Result<PathRecord> {
    let spec = ObjectiveSpec {
        dataset_size: data.train.len(),
        ..objective.clone()
    };
    let (elbo, dlm) = evaluate_losses(ckpt_arch, q, &data.train, &spec, key.child(tag::EVAL_LOSS))?;
    let test = test_metrics(ckpt_arch, q, &data.test, m_eval, key.child(tag::EVAL_TEST))?;
    Ok(PathRecord {
        alpha,
        elbo_with_reg: elbo.total,
        elbo_no_reg: elbo.data_term,
        dlm_with_reg: dlm.total,
        dlm_no_reg: dlm.data_term,
        reg_value: elbo.reg_term,
        test_nll: test.nll,
        test_accuracy: test.accuracy,
    })
}

/// One record per `α`, in order.
pub fn path_scan(spec: &PathSpec, data: &TrainData, objective: &ObjectiveSpec) -> Result<Vec<PathRecord>> {
    spec.validate()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let base = StreamKey::new(spec.eval_seed);
    spec.alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let q = interpolate(&spec.a.posterior, &spec.b.posterior, alpha)?;
            let key = if spec.resample { base.child(i as u64) } else { base };
            evaluate_posterior(&spec.a.arch, &q, data, objective, spec.m_eval, key, alpha)
        })
        .collect()
}

/// Final result of one training run, as needed for comparisons.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dataset: String,
    pub arch: String,
    pub seed: u64,
    pub kind: ObjectiveKind,
    pub test_nll: f64,
}

/// `delta = nll_dlm − nll_elbo`; positive means DLM did worse.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDelta {
    pub dataset: String,
    pub arch: String,
    pub seed: u64,
    pub nll_dlm: f64,
    pub nll_elbo: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub dataset: String,
    pub arch: String,
    pub pairs: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub pairs: Vec<PairDelta>,
    pub groups: Vec<GroupSummary>,
}

/// Pairs ELBO and DLM runs by `(dataset, arch, seed)`.
pub fn compare_runs(runs: &[RunSummary]) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no runs to compare".into()));
    }
    type Slot = (Option<f64>, Option<f64>);
    let mut slots: BTreeMap<(String, String, u64), Slot> = BTreeMap::new();
    for r in runs {
        let slot = slots
            .entry((r.dataset.clone(), r.arch.clone(), r.seed))
            .or_default();
        let role = match r.kind {
            ObjectiveKind::Elbo => &mut slot.0,
            ObjectiveKind::Dlm => &mut slot.1,
        };
        if role.replace(r.test_nll).is_some() {
            return Err(Error::UnpairedRun(format!(
                "two {} runs for dataset {}, arch {}, seed {}",
                r.kind.as_str(),
                r.dataset,
                r.arch,
                r.seed
            )));
        }
    }
    let mut pairs = Vec::new();
    for ((dataset, arch, seed), slot) in slots {
        let (Some(nll_elbo), Some(nll_dlm)) = slot else {
            let missing = if slot.0.is_none() { "elbo" } else { "dlm" };
            return Err(Error::UnpairedRun(format!(
                "dataset {dataset}, arch {arch}, seed {seed} has no {missing} run"
            )));
        };
        pairs.push(PairDelta {
            dataset,
            arch,
            seed,
            nll_dlm,
            nll_elbo,
            delta: nll_dlm - nll_elbo,
        });
    }
    let mut groups: Vec<GroupSummary> = Vec::new();
    for p in &pairs {
        match groups.last_mut() {
            Some(g) if g.dataset == p.dataset && g.arch == p.arch => {
                g.pairs += 1;
                g.mean += p.delta;
                g.min = g.min.min(p.delta);
                g.max = g.max.max(p.delta);
            }
            _ => groups.push(GroupSummary {
                dataset: p.dataset.clone(),
                arch: p.arch.clone(),
                pairs: 1,
                mean: p.delta,
                min: p.delta,
                max: p.delta,
            }),
        }
    }
    for g in &mut groups {
        g.mean /= g.pairs as f64;
    }
    Ok(Comparison { pairs, groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let qa = MeanFieldGaussian::from_mean_variance(vec![0.0, 1.5], &[0.1, 0.7]).unwrap();
        let qb = MeanFieldGaussian::from_mean_variance(vec![2.0, -3.0], &[0.3, 0.02]).unwrap();
        assert_eq!(interpolate(&qa, &qb, 0.0).unwrap(), qa);
        assert_eq!(interpolate(&qa, &qb, 1.0).unwrap(), qb);
        let mid = interpolate(&qa, &qb, 0.5).unwrap();
        assert_eq!(mid.mu()[0], 1.0);
        assert!((mid.variance()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_path_is_constant() {
        let q = MeanFieldGaussian::from_mean_variance(vec![0.4, -1.0], &[0.05, 0.2]).unwrap();
        for a in [-0.25, 0.1, 0.37, 0.5, 0.93, 1.25] {
            assert_eq!(interpolate(&q, &q, a).unwrap(), q);
        }
    }

    #[test]
    fn extrapolation_to_negative_variance_errors() {
        let qa = MeanFieldGaussian::from_mean_variance(vec![0.0], &[0.01]).unwrap();
        let qb = MeanFieldGaussian::from_mean_variance(vec![0.0], &[1.0]).unwrap();
        assert!(interpolate(&qa, &qb, -0.25).is_err());
        assert!(interpolate(&qa, &qb, 1.25).is_ok());
    }

    fn run(seed: u64, kind: ObjectiveKind, nll: f64) -> RunSummary {
        RunSummary {
            dataset: "moons".into(),
            arch: "mlp".into(),
            seed,
            kind,
            test_nll: nll,
        }
    }

    #[test]
    fn comparison_arithmetic() {
        let c = compare_runs(&[run(1, ObjectiveKind::Dlm, 1.2), run(1, ObjectiveKind::Elbo, 1.0)]).unwrap();
        assert!((c.pairs[0].delta - 0.2).abs() < 1e-15);

        let runs = [
            run(1, ObjectiveKind::Elbo, 1.0),
            run(1, ObjectiveKind::Dlm, 1.1),
            run(2, ObjectiveKind::Elbo, 1.0),
            run(2, ObjectiveKind::Dlm, 1.2),
            run(3, ObjectiveKind::Elbo, 1.0),
            run(3, ObjectiveKind::Dlm, 1.3),
        ];
        let c = compare_runs(&runs).unwrap();
        let g = &c.groups[0];
        assert_eq!(g.pairs, 3);
        assert!((g.mean - 0.2).abs() < 1e-12);
        assert!((g.min - 0.1).abs() < 1e-12);
        assert!((g.max - 0.3).abs() < 1e-12);
    }

    #[test]
    fn unpaired_runs_rejected() {
        assert!(matches!(
            compare_runs(&[run(1, ObjectiveKind::Elbo, 1.0)]),
            Err(Error::UnpairedRun(_))
        ));
        assert!(matches!(
            compare_runs(&[run(1, ObjectiveKind::Elbo, 1.0), run(1, ObjectiveKind::Elbo, 1.1)]),
            Err(Error::UnpairedRun(_))
        ));
    }
}

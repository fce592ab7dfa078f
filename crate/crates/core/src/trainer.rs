//! Adam optimization of an [`ObjectiveSpec`] and the training protocols
//! built on it: training from a random initialization, continuing from a
//! checkpoint under a different objective (ELBO-init), and the `η → 0`
//! variants.
//!
//! Every random draw is keyed from the run seed, so `(config, data)` fully
//! determine every logged number. Both the ELBO and DLM losses are logged at
//! every evaluation point regardless of which one is optimized, using one
//! frozen noise draw for the whole run.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{ArchSpec, Batch};
use crate::objectives::{
    batch_loss_with_noise, draw_batch_noise, evaluate_losses, test_metrics, ObjectiveSpec,
};
use crate::rng::{tag, StreamKey};
use crate::tensor::inv_softplus;
use crate::variational::{project, BoundSpec, MeanFieldGaussian};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length");
    assert_eq!(params.len(), state.m.len(), "parameter/state length");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// How initial means are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MuInit {
    /// `N(0, 1/fan_in)` per layer.
    FanIn,
    /// `N(0, s²)` for every parameter.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Random { mu: MuInit, sigma: f64 },
    Checkpoint(std::path::PathBuf),
}

impl Default for Init {
    fn default() -> Self {
        Init::Random {
            mu: MuInit::FanIn,
            sigma: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub objective: ObjectiveSpec,
    pub arch: ArchSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub init: Init,
    pub bounds: Option<BoundSpec>,
    pub eval_every: usize,
    pub m_eval: usize,
}

impl TrainConfig {
    /// Desk-scale defaults for `arch`.
    pub fn new(arch: ArchSpec) -> Self {
        TrainConfig {
            objective: ObjectiveSpec::default(),
            arch,
            epochs: 200,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
            init: Init::default(),
            bounds: None,
            eval_every: 1,
            m_eval: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch size must be ≥ 1".into());
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.adam.lr));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam.eps > 0.0) {
            return bad("adam epsilon must be > 0".into());
        }
        if self.eval_every == 0 || self.m_eval == 0 {
            return bad("eval_every and m_eval must be ≥ 1".into());
        }
        if let Init::Random { mu, sigma } = self.init {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return bad(format!("initial sigma must be > 0, got {sigma}"));
            }
            if let MuInit::Fixed(s) = mu {
                if !(s >= 0.0 && s.is_finite()) {
                    return bad(format!("initial mean scale must be ≥ 0, got {s}"));
                }
            }
        }
        Ok(())
    }
}

/// Everything needed to resume or evaluate a trained posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub posterior: MeanFieldGaussian,
    pub seed: u64,
    pub objective: ObjectiveSpec,
    pub epochs_completed: usize,
}

/// Metrics logged at one evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub epoch: usize,
    /// Full training-set ELBO loss (data term + η·R/N).
    pub train_elbo_loss: f64,
    /// Full training-set DLM loss (data term + η·R/N).
    pub train_dlm_loss: f64,
    pub reg_value: f64,
    pub test_nll: f64,
    pub test_accuracy: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub trajectory: Vec<TrajectoryRow>,
}

/// Train and test splits.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Batch,
    pub test: Batch,
}

/// Draws the initial posterior for `config`.
pub fn initialize(config: &TrainConfig) -> Result<MeanFieldGaussian> {
    let Init::Random { mu, sigma } = config.init else {
        return Err(Error::InvalidArgument("initialize needs a random init".into()));
    };
    let d = config.arch.num_params();
    let z = StreamKey::new(config.seed).child(tag::INIT).normals(0, d);
    let mut means = vec![0.0; d];
    for (w, b) in config.arch.layout() {
        for block in [w, b] {
            let scale = match mu {
                MuInit::FanIn => (1.0 / block.fan_in as f64).sqrt(),
                MuInit::Fixed(s) => s,
            };
            for j in block.offset..block.offset + block.len() {
                means[j] = scale * z[j];
            }
        }
    }
    MeanFieldGaussian::new(means, vec![inv_softplus(sigma); d])
}

/// Trains from `config.init` for `config.epochs` epochs.
pub fn train(config: &TrainConfig, data: &TrainData) -> Result<TrainOutput> {
    if config.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be ≥ 1".into()));
    }
    match &config.init {
        Init::Random { .. } => {
            config.validate()?;
            let q = initialize(config)?;
            run(config, data, q, 0)
        }
        Init::Checkpoint(path) => {
            let ckpt = crate::io::checkpoint::read(path)?;
            continue_train(&ckpt, config, data)
        }
    }
}

/// Continues from `checkpoint` under `config` (usually a different
/// objective). Adam moments start fresh.
pub fn continue_train(checkpoint: &Checkpoint, config: &TrainConfig, data: &TrainData) -> Result<TrainOutput> {
    config.validate()?;
    if checkpoint.arch != config.arch {
        return Err(Error::ArchMismatch {
            checkpoint: describe_arch(&checkpoint.arch),
            config: describe_arch(&config.arch),
        });
    }
    run(config, data, checkpoint.posterior.clone(), checkpoint.epochs_completed)
}

pub fn describe_arch(arch: &ArchSpec) -> String {
    format!("{} [{}] {}", arch.input_string(), arch.layers_string(), arch.likelihood())
}

fn run(config: &TrainConfig, data: &TrainData, init: MeanFieldGaussian, prior_epochs: usize) -> Result<TrainOutput> {
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if init.dim() != config.arch.num_params() {
        return Err(Error::Dimension(format!(
            "posterior has {} parameters, architecture needs {}",
            init.dim(),
            config.arch.num_params()
        )));
    }
    let mut spec = config.objective.clone();
    spec.dataset_size = data.train.len();
    let key = StreamKey::new(config.seed);
    let loss_key = key.child(tag::EVAL_LOSS);
    let test_key = key.child(tag::EVAL_TEST);
    let start = Instant::now();

    let mut q = match &config.bounds {
        Some(b) => project(&init, b),
        None => init,
    };
    let evaluate = |q: &MeanFieldGaussian, epoch: usize| -> Result<TrajectoryRow> {
        let (elbo, dlm) = evaluate_losses(&config.arch, q, &data.train, &spec, loss_key)?;
        let test = test_metrics(&config.arch, q, &data.test, config.m_eval, test_key)?;
        Ok(TrajectoryRow {
            epoch,
            train_elbo_loss: elbo.total,
            train_dlm_loss: dlm.total,
            reg_value: elbo.reg_term,
            test_nll: test.nll,
            test_accuracy: test.accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    };

    let mut trajectory = vec![evaluate(&q, 0)?];
    let mut adam = AdamState::new(2 * q.dim());
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut key.path(&[tag::SHUFFLE, epoch as u64]).rng(0));
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let abort = |detail: String| Error::NumericalAbort { epoch, batch: b, detail };
            let batch = data.train.select(chunk)?;
            let noise_key = key.path(&[tag::TRAIN_NOISE, epoch as u64, b as u64]);
            let noise = draw_batch_noise(&spec, noise_key, batch.len(), q.dim());
            let (loss, grads) = match batch_loss_with_noise(&config.arch, &q, &batch, &spec, &noise) {
                Ok(r) => r,
                Err(e) if e.is_numerical() => return Err(abort(e.to_string())),
                Err(e) => return Err(e),
            };
            if !loss.total.is_finite() || !grads.all_finite() {
                return Err(abort(format!("loss {}", loss.total)));
            }
            let mut flat = q.to_flat();
            adam_step(&mut flat, &grads.to_flat(), &mut adam, &config.adam);
            q = MeanFieldGaussian::from_flat(&flat).map_err(|e| abort(e.to_string()))?;
            if let Some(bounds) = &config.bounds {
                q = project(&q, bounds);
            }
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            trajectory.push(evaluate(&q, epoch)?);
        }
    }

    Ok(TrainOutput {
        checkpoint: Checkpoint {
            arch: config.arch.clone(),
            posterior: q,
            seed: config.seed,
            objective: spec,
            epochs_completed: prior_epochs + config.epochs,
        },
        trajectory,
    })
}

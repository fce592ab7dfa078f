use dlmlab::io::dataset::{generate, GenKind, GenSpec};
use dlmlab::model::{Activation, ArchSpec, Batch, Layer, Likelihood};
use dlmlab::objectives::{batch_loss_value, draw_batch_noise, ObjectiveKind};
use dlmlab::rng::StreamKey;
use dlmlab::trainer::{continue_train, train, Checkpoint, Init, MuInit, TrainConfig, TrainData};
use dlmlab::variational::{regularizer_value, MeanFieldGaussian};

fn blobs(seed: u64) -> TrainData {
    let (train, test) = generate(&GenSpec {
        kind: GenKind::Blobs,
        n: 400,
        seed,
        label_noise: 0.0,
    })
    .unwrap();
    TrainData { train, test }
}

fn mlp_config(epochs: usize) -> TrainConfig {
    let arch = ArchSpec::mlp_2x64(2, Likelihood::Categorical { classes: 2 }).unwrap();
    let mut c = TrainConfig::new(arch);
    c.epochs = epochs;
    c.eval_every = epochs;
    c.seed = 21;
    c
}

#[test]
fn separable_blobs_reach_high_accuracy() {
    let data = blobs(4);

    // Baseline: near-deterministic weights and no regularizer.
    let mut base = mlp_config(50);
    base.objective.eta = 0.0;
    base.init = Init::Random { mu: MuInit::FanIn, sigma: 1e-6 };
    let b = train(&base, &data).unwrap();
    let base_acc = b.trajectory.last().unwrap().test_accuracy.unwrap();
    assert!(base_acc >= 0.99, "baseline accuracy {base_acc}");

    let c = mlp_config(50);
    let out = train(&c, &data).unwrap();
    let acc = out.trajectory.last().unwrap().test_accuracy.unwrap();
    assert!(acc > 0.95, "elbo accuracy {acc}");
}

#[test]
fn zero_gradient_model_is_left_unchanged() {
    // Every hidden unit is dead and the regularizer is off, so all
    // gradients vanish.
    let arch = ArchSpec::new(
        vec![2],
        vec![Layer::Dense { out: 2, activation: Activation::Relu }],
        Likelihood::Categorical { classes: 2 },
    )
    .unwrap();
    let mut mu = vec![0.0; arch.num_params()];
    mu[4] = -1e3;
    mu[5] = -1e3;
    let posterior = MeanFieldGaussian::with_constant_sigma(mu, 1e-300).unwrap();
    let ckpt = Checkpoint {
        arch: arch.clone(),
        posterior: posterior.clone(),
        seed: 1,
        objective: Default::default(),
        epochs_completed: 0,
    };
    let mut c = TrainConfig::new(arch);
    c.epochs = 1;
    c.objective.eta = 0.0;
    let out = continue_train(&ckpt, &c, &blobs(1)).unwrap();
    assert_eq!(out.checkpoint.posterior, posterior);
    assert_eq!(out.checkpoint.epochs_completed, 1);
}

#[test]
fn eta_zero_continuation_logs_regularizer_but_ignores_it() {
    let data = blobs(2);
    let mut c = mlp_config(2);
    c.batch_size = 64;
    let src = train(&c, &data).unwrap();

    let mut c0 = c.clone();
    c0.objective.eta = 0.0;
    c0.objective.kind = ObjectiveKind::Dlm;
    let out = continue_train(&src.checkpoint, &c0, &data).unwrap();
    let row = &out.trajectory[0];
    let reg = regularizer_value(&src.checkpoint.posterior, &c.objective.regularizer);
    assert!(row.reg_value > 0.0);
    assert_eq!(row.reg_value, reg);

    let batch: Batch = data.train.select(&[0, 1, 2, 3]).unwrap();
    let mut spec = c0.objective.clone();
    spec.dataset_size = data.train.len();
    let noise = draw_batch_noise(&spec, StreamKey::new(0), 4, src.checkpoint.posterior.dim());
    let l = batch_loss_value(&c0.arch, &src.checkpoint.posterior, &batch, &spec, &noise).unwrap();
    assert_eq!(l.weighted_reg, 0.0);
    assert_eq!(l.total, l.data_term);
}

#[test]
fn per_example_sampling_trains_deterministically() {
    let (tr, te) = generate(&GenSpec {
        kind: GenKind::Blobs,
        n: 100,
        seed: 3,
        label_noise: 0.0,
    })
    .unwrap();
    let data = TrainData { train: tr, test: te };
    let arch = ArchSpec::new(
        vec![2],
        vec![
            Layer::Dense { out: 8, activation: Activation::Tanh },
            Layer::Dense { out: 2, activation: Activation::None },
        ],
        Likelihood::Categorical { classes: 2 },
    )
    .unwrap();
    let mut c = TrainConfig::new(arch);
    c.epochs = 3;
    c.batch_size = 16;
    c.seed = 21;
    c.objective.sampling = dlmlab::objectives::SamplingScheme::PerExample;
    c.objective.m_train = 2;
    let a = train(&c, &data).unwrap();
    let b = train(&c, &data).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.trajectory.len(), 4);
    assert!(a.trajectory.iter().all(|r| r.train_dlm_loss.is_finite()));
}

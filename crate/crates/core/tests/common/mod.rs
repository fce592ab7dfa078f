#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dlmlab::autodiff::{Bindings, Graph, NodeId};
use dlmlab::model::{Activation, ArchSpec, Batch, Layer, Likelihood, Targets};
use dlmlab::objectives::{
    batch_loss_value, batch_loss_with_noise, draw_batch_noise, ObjectiveKind, ObjectiveSpec,
    SamplingScheme,
};
use dlmlab::rng::StreamKey;
use dlmlab::tensor::Tensor;
use dlmlab::variational::{MeanFieldGaussian, PriorSpec, RegularizerSpec};

pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Values in `±[lo, hi]`, away from zero.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = r.gen_range(lo..hi);
            if r.gen_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn agree(ad: f64, fd: f64) -> bool {
    (ad - fd).abs() <= (REL_TOL * ad.abs().max(fd.abs())).max(ABS_FLOOR)
}

/// Worst mismatch found, as a description; `None` when all agree.
pub type Mismatch = Option<String>;

/// Compares reverse-mode gradients of scalar `out` with central differences
/// over every input coordinate.
pub fn check_graph(g: &mut Graph, out: NodeId, inputs: &Bindings) -> Mismatch {
    g.forward(inputs, out).expect("forward");
    let ad = g.backward(out).expect("backward");
    let mut names: Vec<&String> = inputs.keys().collect();
    names.sort();
    for name in names {
        let base = &inputs[name];
        for j in 0..base.len() {
            let x = base.data()[j];
            let h = 1e-6 * x.abs().max(1.0);
            let mut eval = |v: f64| {
                let mut b = inputs.clone();
                let mut d = base.data().to_vec();
                d[j] = v;
                b.insert(name.clone(), Tensor::new(base.shape().to_vec(), d).unwrap());
                g.forward(&b, out).expect("perturbed forward").item()
            };
            let fd = (eval(x + h) - eval(x - h)) / (2.0 * h);
            let a = ad[name].data()[j];
            if !agree(a, fd) {
                return Some(format!("{name}[{j}]: reverse {a:e} vs central {fd:e}"));
            }
        }
    }
    None
}

/// `Σ c ⊙ y` for a fixed random `c`, turning any node into a scalar.
pub fn weighted_sum(g: &mut Graph, y: NodeId, shape: &[usize], r: &mut ChaCha8Rng) -> NodeId {
    let c = g.constant(uniform(r, shape, -1.0, 1.0));
    let p = g.mul(y, c);
    g.sum(p)
}

/// One random instance of a named primitive: `(graph, scalar output, bindings)`.
pub fn primitive_instance(name: &str, r: &mut ChaCha8Rng) -> (Graph, NodeId, Bindings) {
    let rows = r.gen_range(1..=4);
    let cols = r.gen_range(1..=5);
    let s = [rows, cols];
    let mut g = Graph::new();
    let mut b = Bindings::new();
    let x = g.input("x");
    let bind = |b: &mut Bindings, k: &str, t: Tensor| {
        b.insert(k.to_string(), t);
    };
    let (y, shape): (NodeId, Vec<usize>) = match name {
        "add" | "sub" | "mul" | "div" => {
            let z = g.input("z");
            bind(&mut b, "x", uniform(r, &s, -2.0, 2.0));
            let zt = if name == "div" {
                away_from_zero(r, &s, 0.5, 2.0)
            } else {
                uniform(r, &s, -2.0, 2.0)
            };
            bind(&mut b, "z", zt);
            let y = match name {
                "add" => g.add(x, z),
                "sub" => g.sub(x, z),
                "mul" => g.mul(x, z),
                _ => g.div(x, z),
            };
            (y, s.to_vec())
        }
        "add_row" | "mul_row" => {
            let z = g.input("z");
            bind(&mut b, "x", uniform(r, &s, -2.0, 2.0));
            bind(&mut b, "z", uniform(r, &[cols], -2.0, 2.0));
            let y = if name == "add_row" { g.add_row(x, z) } else { g.mul_row(x, z) };
            (y, s.to_vec())
        }
        "scale" => {
            bind(&mut b, "x", uniform(r, &s, -2.0, 2.0));
            (g.scale(x, -1.7), s.to_vec())
        }
        "add_scalar" => {
            bind(&mut b, "x", uniform(r, &s, -2.0, 2.0));
            (g.add_scalar(x, 0.3), s.to_vec())
        }
        "matmul" => {
            let k = r.gen_range(1..=4);
            let z = g.input("z");
            bind(&mut b, "x", uniform(r, &s, -2.0, 2.0));
            bind(&mut b, "z", uniform(r, &[cols, k], -2.0, 2.0));
            (g.matmul(x, z), vec![rows, k])
        }
        "relu" => {
            bind(&mut b, "x", away_from_zero(r, &s, 0.1, 2.0));
            (g.relu(x), s.to_vec())
        }
        "tanh" | "exp" | "softplus" | "square" => {
            bind(&mut b, "x", uniform(r, &s, -2.0, 2.0));
            let y = match name {
                "tanh" => g.tanh(x),
                "exp" => g.exp(x),
                "softplus" => g.softplus(x),
                _ => g.square(x),
            };
            (y, s.to_vec())
        }
        "log_softplus" => {
            // Include the far tail, where the stable branch takes over.
            let t = uniform(r, &s, -3.0, 3.0).map(|v| if v < -2.5 { v * 15.0 } else { v });
            bind(&mut b, "x", t);
            (g.log_softplus(x), s.to_vec())
        }
        "log" => {
            bind(&mut b, "x", uniform(r, &s, 0.5, 3.0));
            (g.log(x), s.to_vec())
        }
        "sum" | "mean" => {
            bind(&mut b, "x", uniform(r, &s, -2.0, 2.0));
            let y = if name == "sum" { g.sum(x) } else { g.mean(x) };
            let y2 = g.square(y);
            return (g, y2, b);
        }
        "sum_axis" | "logsumexp" | "log_softmax" => {
            let axis = r.gen_range(0..2);
            bind(&mut b, "x", uniform(r, &s, -3.0, 3.0));
            let y = match name {
                "sum_axis" => g.sum_axis(x, axis),
                "logsumexp" => g.logsumexp(x, axis),
                _ => g.log_softmax(x, axis),
            };
            let shape = match name {
                "log_softmax" => s.to_vec(),
                _ => vec![s[1 - axis]],
            };
            (y, shape)
        }
        "clamp" => {
            let t = uniform(r, &s, -2.0, 2.0).map(|v| if (v.abs() - 1.0).abs() < 0.05 { v * 0.8 } else { v });
            bind(&mut b, "x", t);
            (g.clamp(x, -1.0, 1.0), s.to_vec())
        }
        "smoothed_log" => {
            bind(&mut b, "x", uniform(r, &s, -12.0, -0.01));
            let a = [0.001, 0.1, 0.5][r.gen_range(0..3)];
            (g.smoothed_log(x, a), s.to_vec())
        }
        "slice" | "reshape" => {
            bind(&mut b, "x", uniform(r, &[rows * cols], -2.0, 2.0));
            if name == "slice" && rows * cols > 1 {
                let len = r.gen_range(1..rows * cols);
                let off = r.gen_range(0..=rows * cols - len);
                (g.slice(x, off, &[len]), vec![len])
            } else {
                (g.reshape(x, &[rows, cols]), s.to_vec())
            }
        }
        "stack" => {
            let z = g.input("z");
            bind(&mut b, "x", uniform(r, &s, -2.0, 2.0));
            bind(&mut b, "z", uniform(r, &s, -2.0, 2.0));
            let t = g.tanh(z);
            (g.stack(&[x, t, x]), vec![3, rows, cols])
        }
        "pick" => {
            bind(&mut b, "x", uniform(r, &s, -2.0, 2.0));
            let idx = (0..rows).map(|_| r.gen_range(0..cols)).collect();
            (g.pick(x, idx), vec![rows])
        }
        "conv2d" => {
            let (bs, cin, cout, k) = (r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
            let hw = k + r.gen_range(0..=2);
            let w = g.input("w");
            let bias = g.input("b");
            bind(&mut b, "x", uniform(r, &[bs, cin, hw, hw], -1.0, 1.0));
            bind(&mut b, "w", uniform(r, &[cout, cin, k, k], -1.0, 1.0));
            bind(&mut b, "b", uniform(r, &[cout], -1.0, 1.0));
            let o = hw - k + 1;
            (g.conv2d(x, w, bias), vec![bs, cout, o, o])
        }
        other => panic!("unknown primitive {other}"),
    };
    let out = weighted_sum(&mut g, y, &shape, r);
    (g, out, b)
}

pub const PRIMITIVES: &[&str] = &[
    "add", "sub", "mul", "div", "add_row", "mul_row", "scale", "add_scalar", "matmul", "relu", "tanh", "exp",
    "softplus", "square", "log_softplus", "log", "sum", "mean", "sum_axis", "logsumexp", "log_softmax", "clamp",
    "smoothed_log", "slice", "reshape", "stack", "pick", "conv2d",
];

/// A random smooth composite of depth ≤ 6 over inputs of width ≤ 8.
pub fn composite_instance(r: &mut ChaCha8Rng) -> (Graph, NodeId, Bindings) {
    let rows = r.gen_range(1..=8);
    let mut cols = r.gen_range(1..=8);
    let mut g = Graph::new();
    let mut b = Bindings::new();
    let mut cur = g.input("x");
    b.insert("x".into(), uniform(r, &[rows, cols], -1.5, 1.5));
    let depth = r.gen_range(1..=6);
    for step in 0..depth {
        cur = match r.gen_range(0..9) {
            0 => g.tanh(cur),
            1 => g.softplus(cur),
            2 => {
                let t = g.tanh(cur);
                g.exp(t)
            }
            3 => {
                let name = format!("v{step}");
                let v = g.input(&name);
                b.insert(name, uniform(r, &[cols], -1.0, 1.0));
                g.add_row(cur, v)
            }
            4 => {
                let name = format!("v{step}");
                let v = g.input(&name);
                b.insert(name, uniform(r, &[cols], -1.0, 1.0));
                g.mul_row(cur, v)
            }
            5 => {
                let k = r.gen_range(1..=8);
                let name = format!("w{step}");
                let w = g.input(&name);
                b.insert(name, uniform(r, &[cols, k], -0.8, 0.8));
                cols = k;
                g.matmul(cur, w)
            }
            6 => g.log_softmax(cur, 1),
            7 => {
                let t = g.tanh(cur);
                g.mul(cur, t)
            }
            _ => {
                let s = g.square(cur);
                let s = g.scale(s, 0.2);
                g.add(cur, s)
            }
        };
    }
    let out = match r.gen_range(0..3) {
        0 => g.mean(cur),
        1 => {
            let l = g.logsumexp(cur, 1);
            g.sum(l)
        }
        _ => weighted_sum(&mut g, cur, &[rows, cols], r),
    };
    (g, out, b)
}

pub fn small_archs() -> Vec<ArchSpec> {
    vec![
        ArchSpec::new(
            vec![3],
            vec![
                Layer::Dense { out: 4, activation: Activation::Tanh },
                Layer::Dense { out: 3, activation: Activation::None },
            ],
            Likelihood::Categorical { classes: 3 },
        )
        .unwrap(),
        ArchSpec::new(
            vec![2],
            vec![
                Layer::Dense { out: 3, activation: Activation::Relu },
                Layer::Dense { out: 2, activation: Activation::None },
            ],
            Likelihood::Categorical { classes: 2 },
        )
        .unwrap(),
        ArchSpec::new(
            vec![1, 4, 4],
            vec![
                Layer::Conv2d { channels: 2, kernel: 3, activation: Activation::Tanh },
                Layer::Flatten,
                Layer::Dense { out: 2, activation: Activation::None },
            ],
            Likelihood::Categorical { classes: 2 },
        )
        .unwrap(),
        ArchSpec::new(
            vec![2],
            vec![
                Layer::Dense { out: 3, activation: Activation::Tanh },
                Layer::Dense { out: 1, activation: Activation::None },
            ],
            Likelihood::Gaussian { noise_variance: 0.5 },
        )
        .unwrap(),
    ]
}

pub fn random_batch(arch: &ArchSpec, n: usize, r: &mut ChaCha8Rng) -> Batch {
    let f = arch.input_len();
    let x = uniform(r, &[n, f], -1.5, 1.5);
    let targets = match arch.likelihood() {
        Likelihood::Categorical { classes } => Targets::Labels((0..n).map(|_| r.gen_range(0..classes)).collect()),
        Likelihood::Gaussian { .. } => Targets::Values(uniform(r, &[n, 1], -1.0, 1.0)),
    };
    Batch::new(x, targets).unwrap()
}

pub fn random_posterior(dim: usize, r: &mut ChaCha8Rng) -> MeanFieldGaussian {
    let mu = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let rho = (0..dim).map(|_| r.gen_range(-4.0..-0.5)).collect();
    MeanFieldGaussian::new(mu, rho).unwrap()
}

pub fn random_regularizer(r: &mut ChaCha8Rng) -> RegularizerSpec {
    match r.gen_range(0..4) {
        0 => RegularizerSpec::FixedKl { prior: PriorSpec::new(0.05).unwrap() },
        1 => RegularizerSpec::cvi_mean_default(),
        2 => RegularizerSpec::cvi_mv_default(),
        _ => RegularizerSpec::eb_default(),
    }
}

/// Checks the batch-loss gradient with respect to `(μ, ρ)` against central
/// differences of the loss value under the same frozen noise.
pub fn check_batch_loss(kind: ObjectiveKind, r: &mut ChaCha8Rng) -> Mismatch {
    let archs = small_archs();
    let arch = &archs[r.gen_range(0..archs.len())];
    let batch = random_batch(arch, r.gen_range(1..=5), r);
    let q = random_posterior(arch.num_params(), r);
    let spec = ObjectiveSpec {
        kind,
        eta: [0.0, 0.1, 1.0][r.gen_range(0..3)],
        m_train: r.gen_range(1..=4),
        smoothing: [0.0, 0.0, 0.001, 0.1][r.gen_range(0..4)],
        regularizer: random_regularizer(r),
        dataset_size: r.gen_range(5..50),
        sampling: if r.gen_bool(0.5) { SamplingScheme::Shared } else { SamplingScheme::PerExample },
    };
    let noise = draw_batch_noise(&spec, StreamKey::new(r.gen()), batch.len(), q.dim());
    let (_, grads) = batch_loss_with_noise(arch, &q, &batch, &spec, &noise).unwrap();
    let ad = grads.to_flat();
    let flat = q.to_flat();
    for j in 0..flat.len() {
        let h = 1e-6 * flat[j].abs().max(1.0);
        let eval = |v: f64| {
            let mut p = flat.clone();
            p[j] = v;
            let q = MeanFieldGaussian::from_flat(&p).unwrap();
            batch_loss_value(arch, &q, &batch, &spec, &noise).unwrap().total
        };
        let fd = (eval(flat[j] + h) - eval(flat[j] - h)) / (2.0 * h);
        if !agree(ad[j], fd) {
            return Some(format!(
                "{} param {j} ({}): reverse {:e} vs central {fd:e}",
                kind.as_str(),
                arch.layers_string(),
                ad[j]
            ));
        }
    }
    None
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dlmlab::conjugate::{reference_bias_probe, reference_proposition1, ProbeRow, Prop1Report};
use dlmlab::io::config::{apply_overrides, parse_pairs, KeyValues, RunConfig, CONFIG_VERSION};
use dlmlab::io::{atomic_write, checkpoint, dataset, tables};
use dlmlab::objectives::ObjectiveSpec;
use dlmlab::rng::StreamKey;
use dlmlab::surface::{self, PathSpec, RunSummary};
use dlmlab::trainer::{describe_arch, Checkpoint, TrainData};

#[derive(Parser)]
#[command(name = "dlmlab", version, about = "Train and compare ELBO and DLM Bayesian neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a random initialization.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training from a checkpoint, usually under another objective.
    Continue {
        /// Checkpoint to start from.
        #[arg(long)]
        from: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint's losses and test metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scan the interpolation path between two checkpoints.
    Path {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Comma-separated, increasing; default 0, 0.05, ..., 1.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Draw fresh noise at every alpha.
        #[arg(long)]
        resample: bool,
        /// Defaults to the seed stored in checkpoint A.
        #[arg(long)]
        eval_seed: Option<u64>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair ELBO and DLM run directories and tabulate test-NLL differences.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Checks on the conjugate Gaussian model.
    #[command(group(clap::ArgGroup::new("check").required(true).multiple(true).args(["prop1", "bias"])))]
    Oracle {
        /// Grid check that the regularized and constrained problems agree.
        #[arg(long)]
        prop1: bool,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1")]
        eta: Vec<f64>,
        /// Monte Carlo bias of both estimators against the exact losses.
        #[arg(long)]
        bias: bool,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        m: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset as train.csv and test.csv.
    GenData {
        /// two-moons, xor-blobs or blobs.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of labels flipped.
        #[arg(long, default_value_t = 0.0)]
        label_noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Config file plus flags; flags win over the file.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// elbo or dlm.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    m_eval: Option<usize>,
}

impl RunArgs {
    fn pairs(&self) -> Result<KeyValues> {
        let mut map = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                parse_pairs(&text)?
            }
            None => KeyValues::from([("version".to_string(), CONFIG_VERSION.to_string())]),
        };
        let flags: Vec<(&str, Option<String>)> = vec![
            ("data.train", self.train_data.as_ref().map(|p| p.display().to_string())),
            ("data.test", self.test_data.as_ref().map(|p| p.display().to_string())),
            ("train.seed", self.seed.map(|v| v.to_string())),
            ("train.epochs", self.epochs.map(|v| v.to_string())),
            ("objective.kind", self.objective.clone()),
            ("objective.eta", self.eta.map(|v| v.to_string())),
            ("objective.smoothing", self.smoothing.map(|v| v.to_string())),
            ("train.m_eval", self.m_eval.map(|v| v.to_string())),
        ];
        let set_keys: Vec<&str> = self.set.iter().filter_map(|s| s.split_once('=')).map(|(k, _)| k.trim()).collect();
        let mut explicit = Vec::new();
        for (key, value) in flags {
            if let Some(v) = value {
                if set_keys.contains(&key) {
                    bail!("conflicting flags: `{key}` given both as a flag and via --set");
                }
                explicit.push(format!("{key}={v}"));
            }
        }
        apply_overrides(&mut map, &self.set)?;
        apply_overrides(&mut map, &explicit)?;
        Ok(map)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .filter_map(|c| c.downcast_ref::<dlmlab::Error>())
                .any(|e| e.is_numerical());
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { run, out } => {
            let map = run.pairs()?;
            if map.get("init.kind").map(String::as_str) == Some("checkpoint") {
                bail!("use `continue --from` to start from a checkpoint");
            }
            train_and_write(RunConfig::from_pairs(map)?, &out)
        }
        Command::Continue { from, run, out } => {
            let mut map = run.pairs()?;
            if map.keys().any(|k| k.starts_with("init.")) {
                bail!("conflicting flags: --from replaces the init.* settings");
            }
            let ckpt = checkpoint::read(&from).with_context(|| format!("loading {}", from.display()))?;
            fill_arch(&mut map, &ckpt);
            map.entry("train.seed".into()).or_insert_with(|| ckpt.seed.to_string());
            map.insert("init.kind".into(), "checkpoint".into());
            map.insert("init.checkpoint".into(), from.display().to_string());
            train_and_write(RunConfig::from_pairs(map)?, &out)
        }
        Command::Eval { checkpoint: path, run, out } => {
            let mut map = run.pairs()?;
            let ckpt = checkpoint::read(&path).with_context(|| format!("loading {}", path.display()))?;
            fill_arch(&mut map, &ckpt);
            let objective = objective_for(&map, &ckpt);
            let cfg = RunConfig::from_pairs(map)?;
            let ckpt = checkpoint::read_for(&path, &cfg.train)?;
            let data = load_data(&cfg)?;
            let rec = surface::evaluate_posterior(
                &ckpt.arch,
                &ckpt.posterior,
                &data,
                &objective,
                cfg.train.m_eval,
                StreamKey::new(ckpt.seed),
                0.0,
            )?;
            #[derive(Serialize)]
            struct EvalReport {
                checkpoint: String,
                elbo_with_reg: f64,
                elbo_no_reg: f64,
                dlm_with_reg: f64,
                dlm_no_reg: f64,
                reg_value: f64,
                test_nll: f64,
                test_acc: Option<f64>,
            }
            let report = EvalReport {
                checkpoint: path.display().to_string(),
                elbo_with_reg: rec.elbo_with_reg,
                elbo_no_reg: rec.elbo_no_reg,
                dlm_with_reg: rec.dlm_with_reg,
                dlm_no_reg: rec.dlm_no_reg,
                reg_value: rec.reg_value,
                test_nll: rec.test_nll,
                test_acc: rec.test_accuracy,
            };
            let text = serde_json::to_string_pretty(&report)? + "\n";
            atomic_write(&out.join("eval.json"), text.as_bytes())?;
            print!("{text}");
            Ok(())
        }
        Command::Path { a, b, alphas, resample, eval_seed, run, out } => {
            let mut map = run.pairs()?;
            let ca = checkpoint::read(&a).with_context(|| format!("loading {}", a.display()))?;
            let cb = checkpoint::read(&b).with_context(|| format!("loading {}", b.display()))?;
            fill_arch(&mut map, &ca);
            let objective = objective_for(&map, &ca);
            let cfg = RunConfig::from_pairs(map)?;
            let data = load_data(&cfg)?;
            let mut spec = PathSpec::new(ca, cb);
            if let Some(alphas) = alphas {
                spec.alphas = alphas;
            }
            spec.resample = resample;
            spec.m_eval = cfg.train.m_eval;
            if let Some(s) = eval_seed {
                spec.eval_seed = s;
            }
            let records = surface::path_scan(&spec, &data, &objective)?;
            tables::write_path(&out.join("path.csv"), &records)?;
            eprintln!("wrote {} path points to {}", records.len(), out.join("path.csv").display());
            Ok(())
        }
        Command::Compare { runs, out } => {
            let summaries = runs.iter().map(|d| run_summary(d)).collect::<Result<Vec<_>>>()?;
            let cmp = surface::compare_runs(&summaries)?;
            tables::write_comparison(&out.join("compare.csv"), &out.join("compare_summary.csv"), &cmp)?;
            for g in &cmp.groups {
                println!(
                    "{} {}: {} pairs, delta mean {:.6} min {:.6} max {:.6}",
                    g.dataset, g.arch, g.pairs, g.mean, g.min, g.max
                );
            }
            Ok(())
        }
        Command::Oracle { prop1, eta, bias, m, trials, seed, out } => {
            #[derive(Serialize)]
            struct OracleReport {
                pass: bool,
                #[serde(skip_serializing_if = "Vec::is_empty")]
                prop1: Vec<Prop1Report>,
                #[serde(skip_serializing_if = "Vec::is_empty")]
                bias: Vec<ProbeRow>,
            }
            let prop1 = if prop1 {
                eta.iter().map(|&e| reference_proposition1(e)).collect::<dlmlab::Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let bias = if bias { reference_bias_probe(&m, trials, seed)? } else { Vec::new() };
            let report = OracleReport {
                pass: prop1.iter().all(|r| r.pass),
                prop1,
                bias,
            };
            for r in &report.prop1 {
                println!("prop1 eta={} A_eta={:.6} pass={}", r.eta, r.a_eta, r.pass);
            }
            for r in &report.bias {
                println!(
                    "bias M={} elbo {:.6}±{:.6} (exact {:.6}) dlm {:.6}±{:.6} (exact {:.6})",
                    r.m, r.elbo_mean, r.elbo_stderr, r.exact_elbo, r.dlm_mean, r.dlm_stderr, r.exact_dlm
                );
            }
            let text = serde_json::to_string_pretty(&report)? + "\n";
            atomic_write(&out.join("oracle-report.json"), text.as_bytes())?;
            Ok(())
        }
        Command::GenData { kind, n, seed, label_noise, out } => {
            let spec = dataset::GenSpec {
                kind: kind.parse()?,
                n,
                seed,
                label_noise,
            };
            let (train, test) = dataset::generate(&spec)?;
            dataset::write(&out.join("train.csv"), &train)?;
            dataset::write(&out.join("test.csv"), &test)?;
            eprintln!("wrote {} train and {} test rows to {}", train.len(), test.len(), out.display());
            Ok(())
        }
    }
}

/// Uses the checkpoint's architecture unless the config names one.
fn fill_arch(map: &mut KeyValues, ckpt: &Checkpoint) {
    if !map.keys().any(|k| k.starts_with("arch.")) {
        map.insert("arch.input".into(), ckpt.arch.input_string());
        map.insert("arch.layers".into(), ckpt.arch.layers_string());
        map.insert("arch.likelihood".into(), ckpt.arch.likelihood().to_string());
    }
}

/// The config's objective if it sets any objective or regularizer key,
/// otherwise the one stored in the checkpoint.
fn objective_for(map: &KeyValues, ckpt: &Checkpoint) -> ObjectiveSpec {
    let configured = map
        .keys()
        .any(|k| k.starts_with("objective.") || k.starts_with("regularizer."));
    if configured {
        let mut m = map.clone();
        m.retain(|k, _| k == "version" || k.starts_with("objective.") || k.starts_with("regularizer."));
        if let Ok(cfg) = RunConfig::from_pairs(m) {
            return cfg.train.objective;
        }
    }
    ckpt.objective.clone()
}

fn load_data(cfg: &RunConfig) -> Result<TrainData> {
    Ok(dlmlab::io::load_run_data(cfg)?)
}

fn train_and_write(cfg: RunConfig, out: &Path) -> Result<()> {
    let result = dlmlab::io::train_run(&cfg, out)?;
    if let Some(last) = result.trajectory.last() {
        eprintln!(
            "epoch {}: elbo {:.6} dlm {:.6} test nll {:.6}{}",
            last.epoch,
            last.train_elbo_loss,
            last.train_dlm_loss,
            last.test_nll,
            last.test_accuracy.map(|a| format!(" acc {a:.4}")).unwrap_or_default()
        );
    }
    Ok(())
}

fn run_summary(dir: &Path) -> Result<RunSummary> {
    let cfg = RunConfig::load(&dir.join("config.cfg")).with_context(|| format!("run {}", dir.display()))?;
    let ckpt = checkpoint::read(&dir.join("checkpoint.json")).with_context(|| format!("run {}", dir.display()))?;
    let test_nll = tables::final_test_nll(&dir.join("trajectory.csv"))?;
    Ok(RunSummary {
        dataset: cfg.data.name,
        arch: describe_arch(&ckpt.arch),
        seed: ckpt.seed,
        kind: ckpt.objective.kind,
        test_nll,
    })
}

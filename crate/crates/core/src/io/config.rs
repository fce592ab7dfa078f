//! Run configuration files: flat `key = value` lines with dotted keys.
//!
//! ```text
//! version = 1
//! data.name = moons
//! data.train = data/train.csv
//! data.test = data/test.csv
//! arch.input = 2
//! arch.preset = mlp-2x64
//! arch.likelihood = categorical:2
//! objective.kind = dlm
//! train.seed = 3
//! ```
//!
//! `#` starts a comment. Unknown or repeated keys are errors. Missing keys
//! take their defaults, and [`RunConfig::to_text`] writes every key back
//! out, so the echo alone reproduces the run. Paths are taken relative to
//! the working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ArchSpec, Likelihood};
use crate::objectives::{ObjectiveKind, ObjectiveSpec, SamplingScheme};
use crate::trainer::{AdamConfig, Init, MuInit, TrainConfig};
use crate::variational::{BoundSpec, PriorSpec, RegularizerSpec};

use super::fmt_f64;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    /// Dataset label used to pair runs in comparisons.
    pub name: String,
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSpec,
    pub train: TrainConfig,
}

pub type KeyValues = BTreeMap<String, String>;

/// Splits a config document into its key-value pairs.
pub fn parse_pairs(text: &str) -> Result<KeyValues> {
    let mut map = KeyValues::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key `{k}` repeated", i + 1)));
        }
    }
    Ok(map)
}

/// Parses `key=value` strings (as given on a command line) over `map`.
pub fn apply_overrides(map: &mut KeyValues, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(())
}

struct Keys(KeyValues);

impl Keys {
    fn raw(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn parsed<T: FromStr<Err = Error>>(&mut self, key: &str) -> Result<Option<T>> {
        self.0
            .remove(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("`{key}`: {e}"))))
            .transpose()
    }
}

fn arch_from(keys: &mut Keys) -> Result<ArchSpec> {
    let input = keys.raw("arch.input").unwrap_or_else(|| "2".into());
    let likelihood = keys.raw("arch.likelihood").unwrap_or_else(|| "categorical:2".into());
    let layers = keys.raw("arch.layers");
    let preset = keys.raw("arch.preset");
    match (layers, preset) {
        (Some(_), Some(_)) => Err(Error::Config("give arch.layers or arch.preset, not both".into())),
        (Some(layers), None) => ArchSpec::parse(&input, &layers, &likelihood),
        (None, preset) => {
            let lik: Likelihood = likelihood.parse()?;
            let dims: Vec<usize> = input
                .split('x')
                .map(|d| d.trim().parse().map_err(|_| Error::Config(format!("bad arch.input `{input}`"))))
                .collect::<Result<_>>()?;
            match preset.as_deref().unwrap_or("mlp-2x64") {
                "mlp-2x64" => {
                    let features = dims.iter().product();
                    ArchSpec::mlp_2x64(features, lik)
                }
                "tinyconv" => {
                    let [c, h, w] = dims[..] else {
                        return Err(Error::Config("tinyconv needs arch.input = CxHxW".into()));
                    };
                    let Likelihood::Categorical { classes } = lik else {
                        return Err(Error::Config("tinyconv needs a categorical likelihood".into()));
                    };
                    ArchSpec::tinyconv([c, h, w], classes)
                }
                other => Err(Error::Config(format!("unknown arch.preset `{other}`"))),
            }
        }
    }
}

fn regularizer_from(keys: &mut Keys) -> Result<RegularizerSpec> {
    let kind = keys.raw("regularizer.kind").unwrap_or_else(|| "fixed_kl".into());
    let spec = match kind.as_str() {
        "fixed_kl" => RegularizerSpec::FixedKl {
            prior: PriorSpec::new(keys.or("regularizer.prior_variance", 0.05)?)?,
        },
        "cvi_mean" => {
            let RegularizerSpec::CviMean { gamma, alpha_reg } = RegularizerSpec::cvi_mean_default() else {
                unreachable!()
            };
            RegularizerSpec::CviMean {
                gamma: keys.or("regularizer.gamma", gamma)?,
                alpha_reg: keys.or("regularizer.alpha_reg", alpha_reg)?,
            }
        }
        "cvi_mv" => {
            let RegularizerSpec::CviMv { alpha, beta, delta } = RegularizerSpec::cvi_mv_default() else {
                unreachable!()
            };
            RegularizerSpec::CviMv {
                alpha: keys.or("regularizer.alpha", alpha)?,
                beta: keys.or("regularizer.beta", beta)?,
                delta: keys.or("regularizer.delta", delta)?,
            }
        }
        "eb" => {
            let RegularizerSpec::Eb { alpha, beta } = RegularizerSpec::eb_default() else {
                unreachable!()
            };
            RegularizerSpec::Eb {
                alpha: keys.or("regularizer.alpha", alpha)?,
                beta: keys.or("regularizer.beta", beta)?,
            }
        }
        other => return Err(Error::Config(format!("unknown regularizer.kind `{other}`"))),
    };
    spec.validate()?;
    Ok(spec)
}

impl RunConfig {
    /// Builds a config from key-value pairs; every key must be consumed.
    pub fn from_pairs(map: KeyValues) -> Result<Self> {
        let mut keys = Keys(map);
        match keys.get::<u32>("version")? {
            None => return Err(Error::Config("missing `version` key".into())),
            Some(CONFIG_VERSION) => {}
            Some(found) => {
                return Err(Error::VersionMismatch {
                    found,
                    expected: CONFIG_VERSION,
                })
            }
        }
        let data = DataSpec {
            name: keys.raw("data.name").unwrap_or_else(|| "data".into()),
            train: keys.raw("data.train").unwrap_or_else(|| "train.csv".into()).into(),
            test: keys.raw("data.test").unwrap_or_else(|| "test.csv".into()).into(),
        };
        let arch = arch_from(&mut keys)?;

        let d = ObjectiveSpec::default();
        let objective = ObjectiveSpec {
            kind: keys.parsed::<ObjectiveKind>("objective.kind")?.unwrap_or(d.kind),
            eta: keys.or("objective.eta", d.eta)?,
            m_train: keys.or("objective.m_train", d.m_train)?,
            smoothing: keys.or("objective.smoothing", d.smoothing)?,
            sampling: keys.parsed::<SamplingScheme>("objective.sampling")?.unwrap_or(d.sampling),
            regularizer: regularizer_from(&mut keys)?,
            dataset_size: d.dataset_size,
        };

        let mut train = TrainConfig::new(arch);
        train.objective = objective;
        let a = AdamConfig::default();
        train.epochs = keys.or("train.epochs", train.epochs)?;
        train.batch_size = keys.or("train.batch_size", train.batch_size)?;
        train.adam = AdamConfig {
            lr: keys.or("train.lr", a.lr)?,
            beta1: keys.or("train.beta1", a.beta1)?,
            beta2: keys.or("train.beta2", a.beta2)?,
            eps: keys.or("train.eps_adam", a.eps)?,
        };
        train.seed = keys.or("train.seed", train.seed)?;
        train.eval_every = keys.or("train.eval_every", train.eval_every)?;
        train.m_eval = keys.or("train.m_eval", train.m_eval)?;

        let init_kind = keys.raw("init.kind").unwrap_or_else(|| "random".into());
        train.init = match init_kind.as_str() {
            "random" => {
                let mu = match keys.raw("init.mu").as_deref() {
                    None | Some("fan_in") => MuInit::FanIn,
                    Some(s) => MuInit::Fixed(
                        s.parse()
                            .map_err(|_| Error::Config(format!("bad value `{s}` for `init.mu`")))?,
                    ),
                };
                Init::Random {
                    mu,
                    sigma: keys.or("init.sigma", 0.01)?,
                }
            }
            "checkpoint" => Init::Checkpoint(
                keys.raw("init.checkpoint")
                    .ok_or_else(|| Error::Config("init.kind = checkpoint needs init.checkpoint".into()))?
                    .into(),
            ),
            other => return Err(Error::Config(format!("unknown init.kind `{other}`"))),
        };

        train.bounds = match (keys.get::<f64>("bounds.b_m")?, keys.get::<f64>("bounds.b_v")?) {
            (None, None) => None,
            (Some(b_m), Some(b_v)) => Some(BoundSpec::new(b_m, b_v)?),
            _ => return Err(Error::Config("bounds.b_m and bounds.b_v go together".into())),
        };

        if let Some(k) = keys.0.keys().next() {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        if train.epochs == 0 {
            return Err(Error::Config("train.epochs must be ≥ 1".into()));
        }
        train.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(RunConfig { data, train })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every setting as `(key, value)`, in canonical order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let o = &t.objective;
        let mut out = vec![
            ("version", CONFIG_VERSION.to_string()),
            ("data.name", self.data.name.clone()),
            ("data.train", self.data.train.display().to_string()),
            ("data.test", self.data.test.display().to_string()),
            ("arch.input", t.arch.input_string()),
            ("arch.layers", t.arch.layers_string()),
            ("arch.likelihood", t.arch.likelihood().to_string()),
            ("objective.kind", o.kind.as_str().into()),
            ("objective.eta", fmt_f64(o.eta)),
            ("objective.m_train", o.m_train.to_string()),
            ("objective.smoothing", fmt_f64(o.smoothing)),
            ("objective.sampling", o.sampling.as_str().into()),
            ("regularizer.kind", o.regularizer.kind_name().into()),
        ];
        match o.regularizer {
            RegularizerSpec::FixedKl { prior } => {
                out.push(("regularizer.prior_variance", fmt_f64(prior.variance())))
            }
            RegularizerSpec::CviMean { gamma, alpha_reg } => {
                out.push(("regularizer.gamma", fmt_f64(gamma)));
                out.push(("regularizer.alpha_reg", fmt_f64(alpha_reg)));
            }
            RegularizerSpec::CviMv { alpha, beta, delta } => {
                out.push(("regularizer.alpha", fmt_f64(alpha)));
                out.push(("regularizer.beta", fmt_f64(beta)));
                out.push(("regularizer.delta", fmt_f64(delta)));
            }
            RegularizerSpec::Eb { alpha, beta } => {
                out.push(("regularizer.alpha", fmt_f64(alpha)));
                out.push(("regularizer.beta", fmt_f64(beta)));
            }
        }
        out.extend([
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", fmt_f64(t.adam.lr)),
            ("train.beta1", fmt_f64(t.adam.beta1)),
            ("train.beta2", fmt_f64(t.adam.beta2)),
            ("train.eps_adam", fmt_f64(t.adam.eps)),
            ("train.seed", t.seed.to_string()),
            ("train.eval_every", t.eval_every.to_string()),
            ("train.m_eval", t.m_eval.to_string()),
        ]);
        match &t.init {
            Init::Random { mu, sigma } => {
                out.push(("init.kind", "random".into()));
                out.push((
                    "init.mu",
                    match mu {
                        MuInit::FanIn => "fan_in".into(),
                        MuInit::Fixed(s) => fmt_f64(*s),
                    },
                ));
                out.push(("init.sigma", fmt_f64(*sigma)));
            }
            Init::Checkpoint(p) => {
                out.push(("init.kind", "checkpoint".into()));
                out.push(("init.checkpoint", p.display().to_string()));
            }
        }
        if let Some(b) = &t.bounds {
            out.push(("bounds.b_m", fmt_f64(b.b_m)));
            out.push(("bounds.b_v", fmt_f64(b.b_v)));
        }
        out
    }

    /// The canonical document; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = RunConfig::parse("version = 1\n").unwrap();
        assert_eq!(c.train.epochs, 200);
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.train.objective.m_train, 5);
        assert_eq!(c.train.m_eval, 10);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn full_document_round_trip() {
        let text = "\
version = 1   # format
data.name = moons
data.train = d/train.csv
data.test = d/test.csv
arch.input = 1x6x6
arch.preset = tinyconv
arch.likelihood = categorical:3
objective.kind = dlm
objective.eta = 0.3
objective.smoothing = 0.001
objective.sampling = per-example
regularizer.kind = cvi_mv
regularizer.delta = 0.2
train.seed = 18446744073709551615
train.lr = 0.1e-2
init.mu = 0.5
bounds.b_m = 30
bounds.b_v = 0.25
";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.train.seed, u64::MAX);
        assert_eq!(c.train.objective.kind, ObjectiveKind::Dlm);
        assert_eq!(c.train.init, Init::Random { mu: MuInit::Fixed(0.5), sigma: 0.01 });
        let echo = c.to_text();
        assert_eq!(RunConfig::parse(&echo).unwrap(), c);
        assert_eq!(RunConfig::parse(&echo).unwrap().to_text(), echo);
    }

    #[test]
    fn errors() {
        assert!(RunConfig::parse("objective.eta = 1\n").is_err());
        assert!(matches!(
            RunConfig::parse("version = 2\n"),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
        assert!(RunConfig::parse("version = 1\nobjective.etaa = 1\n").is_err());
        assert!(RunConfig::parse("version = 1\nversion = 1\n").is_err());
        assert!(RunConfig::parse("version = 1\ntrain.epochs = 0\n").is_err());
        assert!(RunConfig::parse("version = 1\nbounds.b_m = 3\n").is_err());
        assert!(RunConfig::parse("version = 1\nobjective.kind = mle\n").is_err());
        assert!(RunConfig::parse("version = 1\narch.preset = mlp-2x64\narch.layers = dense:2\n").is_err());
    }

    #[test]
    fn overrides_replace_values() {
        let mut map = parse_pairs("version = 1\ntrain.seed = 1\n").unwrap();
        apply_overrides(&mut map, &["train.seed=9".into(), "objective.kind = dlm".into()]).unwrap();
        let c = RunConfig::from_pairs(map).unwrap();
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.objective.kind, ObjectiveKind::Dlm);
    }
}

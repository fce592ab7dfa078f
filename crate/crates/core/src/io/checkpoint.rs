//! Checkpoints as versioned JSON. Every real is written with 17 significant
//! digits, so a write-read cycle reproduces `μ` and `ρ` bit for bit.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::model::ArchSpec;
use crate::objectives::{ObjectiveKind, ObjectiveSpec, SamplingScheme};
use crate::trainer::{describe_arch, Checkpoint, TrainConfig};
use crate::variational::{MeanFieldGaussian, PriorSpec, RegularizerSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArchDoc {
    input: String,
    layers: String,
    likelihood: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RegularizerDoc {
    FixedKl { prior_variance: f64 },
    CviMean { gamma: f64, alpha_reg: f64 },
    CviMv { alpha: f64, beta: f64, delta: f64 },
    Eb { alpha: f64, beta: f64 },
}

#[derive(Serialize, Deserialize)]
struct ObjectiveDoc {
    kind: String,
    eta: f64,
    m_train: usize,
    smoothing: f64,
    sampling: String,
    dataset_size: usize,
    regularizer: RegularizerDoc,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    arch: ArchDoc,
    mu: Vec<f64>,
    rho: Vec<f64>,
    seed: u64,
    objective: ObjectiveDoc,
    epochs_completed: usize,
}

/// Pretty JSON with reals rendered as `d.dddddddddddddddde±x`.
struct ExactFloats(PrettyFormatter<'static>);

impl Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn end_object_key<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_key(w)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn regularizer_doc(r: &RegularizerSpec) -> RegularizerDoc {
    match *r {
        RegularizerSpec::FixedKl { prior } => RegularizerDoc::FixedKl {
            prior_variance: prior.variance(),
        },
        RegularizerSpec::CviMean { gamma, alpha_reg } => RegularizerDoc::CviMean { gamma, alpha_reg },
        RegularizerSpec::CviMv { alpha, beta, delta } => RegularizerDoc::CviMv { alpha, beta, delta },
        RegularizerSpec::Eb { alpha, beta } => RegularizerDoc::Eb { alpha, beta },
    }
}

fn regularizer_spec(d: RegularizerDoc) -> Result<RegularizerSpec> {
    Ok(match d {
        RegularizerDoc::FixedKl { prior_variance } => RegularizerSpec::FixedKl {
            prior: PriorSpec::new(prior_variance)?,
        },
        RegularizerDoc::CviMean { gamma, alpha_reg } => RegularizerSpec::CviMean { gamma, alpha_reg },
        RegularizerDoc::CviMv { alpha, beta, delta } => RegularizerSpec::CviMv { alpha, beta, delta },
        RegularizerDoc::Eb { alpha, beta } => RegularizerSpec::Eb { alpha, beta },
    })
}

/// Serializes `ckpt` to its JSON text.
pub fn to_json(ckpt: &Checkpoint) -> Result<String> {
    let o = &ckpt.objective;
    let doc = CheckpointDoc {
        version: FORMAT_VERSION,
        arch: ArchDoc {
            input: ckpt.arch.input_string(),
            layers: ckpt.arch.layers_string(),
            likelihood: ckpt.arch.likelihood().to_string(),
        },
        mu: ckpt.posterior.mu().to_vec(),
        rho: ckpt.posterior.rho().to_vec(),
        seed: ckpt.seed,
        objective: ObjectiveDoc {
            kind: o.kind.as_str().to_string(),
            eta: o.eta,
            m_train: o.m_train,
            smoothing: o.smoothing,
            sampling: o.sampling.as_str().to_string(),
            dataset_size: o.dataset_size,
            regularizer: regularizer_doc(&o.regularizer),
        },
        epochs_completed: ckpt.epochs_completed,
    };
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloats(PrettyFormatter::new()));
    doc.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// Parses and validates checkpoint JSON.
pub fn from_json(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or(Error::Checkpoint {
            field: "version",
            detail: "missing or not an integer".into(),
        })?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    let doc: CheckpointDoc = serde_json::from_value(value)?;
    let arch = ArchSpec::parse(&doc.arch.input, &doc.arch.layers, &doc.arch.likelihood).map_err(|e| {
        Error::Checkpoint {
            field: "arch",
            detail: e.to_string(),
        }
    })?;
    let d = arch.num_params();
    for (field, v) in [("mu", &doc.mu), ("rho", &doc.rho)] {
        if v.len() != d {
            return Err(Error::Checkpoint {
                field,
                detail: format!("has {} entries, architecture needs {d}", v.len()),
            });
        }
    }
    let posterior = MeanFieldGaussian::new(doc.mu, doc.rho).map_err(|e| Error::Checkpoint {
        field: "mu/rho",
        detail: e.to_string(),
    })?;
    let o = doc.objective;
    let bad = |field: &'static str, e: Error| Error::Checkpoint {
        field,
        detail: e.to_string(),
    };
    let objective = ObjectiveSpec {
        kind: o.kind.parse::<ObjectiveKind>().map_err(|e| bad("objective.kind", e))?,
        eta: o.eta,
        m_train: o.m_train,
        smoothing: o.smoothing,
        sampling: o.sampling.parse::<SamplingScheme>().map_err(|e| bad("objective.sampling", e))?,
        dataset_size: o.dataset_size,
        regularizer: regularizer_spec(o.regularizer).map_err(|e| bad("objective.regularizer", e))?,
    };
    objective.validate().map_err(|e| bad("objective", e))?;
    Ok(Checkpoint {
        arch,
        posterior,
        seed: doc.seed,
        objective,
        epochs_completed: doc.epochs_completed,
    })
}

pub fn write(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    super::atomic_write(path, to_json(ckpt)?.as_bytes())
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

/// Reads a checkpoint and checks it fits `config`'s architecture.
pub fn read_for(path: &Path, config: &TrainConfig) -> Result<Checkpoint> {
    let ckpt = read(path)?;
    if ckpt.arch != config.arch {
        return Err(Error::ArchMismatch {
            checkpoint: describe_arch(&ckpt.arch),
            config: describe_arch(&config.arch),
        });
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Likelihood;

    fn sample() -> Checkpoint {
        let arch = ArchSpec::mlp_2x64(2, Likelihood::Categorical { classes: 2 }).unwrap();
        let d = arch.num_params();
        let mu: Vec<f64> = (0..d).map(|i| (i as f64 * 0.731).sin() / 3.0).collect();
        let rho: Vec<f64> = (0..d).map(|i| -4.6 + 1e-17 * i as f64 + (i as f64).cos() * 1e-3).collect();
        Checkpoint {
            arch,
            posterior: MeanFieldGaussian::new(mu, rho).unwrap(),
            seed: u64::MAX - 3,
            objective: ObjectiveSpec {
                regularizer: RegularizerSpec::cvi_mv_default(),
                dataset_size: 800,
                ..ObjectiveSpec::default()
            },
            epochs_completed: 7,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = from_json(&to_json(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.posterior.mu().iter().zip(c.posterior.mu()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn extreme_values_round_trip() {
        let mut c = sample();
        let d = c.posterior.dim();
        let mut mu = vec![0.0; d];
        mu[0] = f64::MIN_POSITIVE;
        mu[1] = 5e-324;
        mu[2] = -f64::MAX;
        mu[3] = 0.1 + 0.2;
        mu[4] = -0.0;
        c.posterior = MeanFieldGaussian::new(mu, c.posterior.rho().to_vec()).unwrap();
        let back = from_json(&to_json(&c).unwrap()).unwrap();
        for (a, b) in back.posterior.mu().iter().zip(c.posterior.mu()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tampered_dimension_names_field() {
        let text = to_json(&sample()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["rho"].as_array_mut().unwrap().pop();
        let err = from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { field: "rho", .. }), "{err}");
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = to_json(&sample()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["version"] = 2.into();
        assert!(matches!(
            from_json(&v.to_string()),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }
}

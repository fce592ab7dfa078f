//! Dataset CSV files and the synthetic generators.
//!
//! A dataset file has a header `f0,…,f{k−1},label` (integer classes) or
//! `f0,…,f{k−1},target` (a real regression target), one example per row.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{Batch, Targets};
use crate::rng::{tag, StreamKey};
use crate::tensor::Tensor;

use super::{atomic_write, fmt_f64};

pub fn read(path: &Path) -> Result<Batch> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse(text: &str) -> Result<Batch> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    let k = header.len().saturating_sub(1);
    if k == 0 {
        return Err(Error::Config("dataset needs at least one feature column".into()));
    }
    for (j, h) in header.iter().take(k).enumerate() {
        if h != format!("f{j}") {
            return Err(Error::Config(format!("column {j} must be named f{j}, found `{h}`")));
        }
    }
    let labels = match &header[k] {
        "label" => true,
        "target" => false,
        other => {
            return Err(Error::Config(format!(
                "last column must be `label` or `target`, found `{other}`"
            )))
        }
    };
    let mut x = Vec::new();
    let mut ys = Vec::new();
    let mut ts = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != k + 1 {
            return Err(Error::Config(format!("line {line}: expected {} fields", k + 1)));
        }
        for field in rec.iter().take(k) {
            x.push(number::<f64>(field, line)?);
        }
        if labels {
            ys.push(number::<usize>(&rec[k], line)?);
        } else {
            ts.push(number::<f64>(&rec[k], line)?);
        }
    }
    let n = if labels { ys.len() } else { ts.len() };
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let targets = if labels {
        Targets::Labels(ys)
    } else {
        Targets::Values(Tensor::matrix(n, 1, ts)?)
    };
    Batch::new(Tensor::matrix(n, k, x)?, targets)
}

fn number<T: FromStr>(s: &str, line: usize) -> Result<T> {
    let v = s
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("line {line}: bad value `{s}`")))?;
    Ok(v)
}

pub fn to_csv(batch: &Batch) -> Result<Vec<u8>> {
    let (n, k) = batch.inputs().dims2().expect("batch inputs are 2-d");
    if let Targets::Values(v) = batch.targets() {
        if v.shape()[1] != 1 {
            return Err(Error::InvalidArgument("only single-column targets can be written".into()));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..k).map(|j| format!("f{j}")).collect();
    header.push(if batch.labels().is_some() { "label" } else { "target" }.into());
    w.write_record(&header)?;
    for i in 0..n {
        let mut row: Vec<String> = batch.inputs().row(i).iter().map(|&v| fmt_f64(v)).collect();
        row.push(match batch.targets() {
            Targets::Labels(l) => l[i].to_string(),
            Targets::Values(v) => fmt_f64(v.row(i)[0]),
        });
        w.write_record(&row)?;
    }
    Ok(w.into_inner().expect("writing to memory cannot fail"))
}

pub fn write(path: &Path, batch: &Batch) -> Result<()> {
    atomic_write(path, &to_csv(batch)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenKind {
    /// Two interleaved half circles.
    TwoMoons,
    /// Four blobs at `(±1, ±1)`, labeled by the sign product.
    XorBlobs,
    /// Two well separated Gaussian blobs.
    Blobs,
}

impl FromStr for GenKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-moons" => Ok(GenKind::TwoMoons),
            "xor-blobs" => Ok(GenKind::XorBlobs),
            "blobs" => Ok(GenKind::Blobs),
            _ => Err(Error::Config(format!(
                "unknown dataset kind `{s}` (expected two-moons, xor-blobs or blobs)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenSpec {
    pub kind: GenKind,
    pub n: usize,
    pub seed: u64,
    /// Fraction of labels replaced by a different class.
    pub label_noise: f64,
}

/// Generates a dataset and splits it 80/20, stratified by the clean class.
pub fn generate(spec: &GenSpec) -> Result<(Batch, Batch)> {
    if spec.n < 10 {
        return Err(Error::InvalidArgument(format!("n must be ≥ 10, got {}", spec.n)));
    }
    if !(0.0..0.5).contains(&spec.label_noise) {
        return Err(Error::InvalidArgument(format!(
            "label noise rate must lie in [0, 0.5), got {}",
            spec.label_noise
        )));
    }
    let key = StreamKey::new(spec.seed).child(tag::DATA);
    let (x, clean) = match spec.kind {
        GenKind::TwoMoons => two_moons(spec.n, key),
        GenKind::XorBlobs => xor_blobs(spec.n, key),
        GenKind::Blobs => blobs(spec.n, key),
    };
    let mut labels = clean.clone();
    if spec.label_noise > 0.0 {
        let mut rng = key.child(1).rng(0);
        for y in labels.iter_mut() {
            if rng.gen::<f64>() < spec.label_noise {
                *y = 1 - *y;
            }
        }
    }
    let all = Batch::classification(spec.n, 2, x, labels)?;

    let mut split_rng = key.child(2).rng(0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..spec.n).filter(|&i| clean[i] == class).collect();
        idx.shuffle(&mut split_rng);
        let cut = (idx.len() as f64 * 0.8).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((all.select(&train)?, all.select(&test)?))
}

fn balanced_labels(n: usize) -> Vec<usize> {
    (0..n).map(|i| i % 2).collect()
}

fn two_moons(n: usize, key: StreamKey) -> (Vec<f64>, Vec<usize>) {
    let mut rng = key.rng(0);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let labels = balanced_labels(n);
    let mut x = Vec::with_capacity(2 * n);
    for &y in &labels {
        let t = rng.gen::<f64>() * std::f64::consts::PI;
        let (px, py) = if y == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        x.push(px + noise.sample(&mut rng));
        x.push(py + noise.sample(&mut rng));
    }
    (x, labels)
}

fn xor_blobs(n: usize, key: StreamKey) -> (Vec<f64>, Vec<usize>) {
    let mut rng = key.rng(0);
    let noise = Normal::new(0.0, 0.3).expect("valid normal");
    let labels = balanced_labels(n);
    let mut x = Vec::with_capacity(2 * n);
    for (i, &y) in labels.iter().enumerate() {
        let s = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
        // Class 0 sits at (s, s), class 1 at (s, −s).
        let (cx, cy) = if y == 0 { (s, s) } else { (s, -s) };
        x.push(cx + noise.sample(&mut rng));
        x.push(cy + noise.sample(&mut rng));
    }
    (x, labels)
}

fn blobs(n: usize, key: StreamKey) -> (Vec<f64>, Vec<usize>) {
    let mut rng = key.rng(0);
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let labels = balanced_labels(n);
    let mut x = Vec::with_capacity(2 * n);
    for &y in &labels {
        let c = if y == 0 { -2.0 } else { 2.0 };
        x.push(c + noise.sample(&mut rng));
        x.push(c + noise.sample(&mut rng));
    }
    (x, labels)
}

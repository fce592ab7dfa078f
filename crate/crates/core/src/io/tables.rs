//! CSV tables. Column orders are fixed; wall-clock times live in their own
//! file so that the trajectory is byte-reproducible.

use std::path::Path;

use crate::error::Result;
use crate::surface::{Comparison, PathRecord};
use crate::trainer::TrajectoryRow;

use super::{atomic_write, fmt_f64, fmt_opt};

pub const TRAJECTORY_HEADER: [&str; 6] = [
    "epoch",
    "train_elbo_loss",
    "train_dlm_loss",
    "reg_value",
    "test_nll",
    "test_acc",
];

pub const PATH_HEADER: [&str; 8] = [
    "alpha",
    "elbo_with_reg",
    "elbo_no_reg",
    "dlm_with_reg",
    "dlm_no_reg",
    "reg_value",
    "test_nll",
    "test_acc",
];

pub const COMPARE_HEADER: [&str; 6] = ["dataset", "arch", "seed", "nll_dlm", "nll_elbo", "delta"];

fn render(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().expect("writing to memory cannot fail"))
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> Result<Vec<u8>> {
    render(
        &TRAJECTORY_HEADER,
        rows.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                fmt_f64(r.train_elbo_loss),
                fmt_f64(r.train_dlm_loss),
                fmt_f64(r.reg_value),
                fmt_f64(r.test_nll),
                fmt_opt(r.test_accuracy),
            ]
        }),
    )
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    atomic_write(path, &trajectory_csv(rows)?)
}

/// `epoch,wall_time_s` for each trajectory row.
pub fn write_timing(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let bytes = render(
        &["epoch", "wall_time_s"],
        rows.iter().map(|r| vec![r.epoch.to_string(), fmt_f64(r.wall_time_s)]),
    )?;
    atomic_write(path, &bytes)
}

pub fn path_csv(records: &[PathRecord]) -> Result<Vec<u8>> {
    render(
        &PATH_HEADER,
        records.iter().map(|r| {
            vec![
                fmt_f64(r.alpha),
                fmt_f64(r.elbo_with_reg),
                fmt_f64(r.elbo_no_reg),
                fmt_f64(r.dlm_with_reg),
                fmt_f64(r.dlm_no_reg),
                fmt_f64(r.reg_value),
                fmt_f64(r.test_nll),
                fmt_opt(r.test_accuracy),
            ]
        }),
    )
}

pub fn write_path(path: &Path, records: &[PathRecord]) -> Result<()> {
    atomic_write(path, &path_csv(records)?)
}

/// Writes the per-pair table to `path` and the per-group summary to
/// `summary_path`.
pub fn write_comparison(path: &Path, summary_path: &Path, c: &Comparison) -> Result<()> {
    let pairs = render(
        &COMPARE_HEADER,
        c.pairs.iter().map(|p| {
            vec![
                p.dataset.clone(),
                p.arch.clone(),
                p.seed.to_string(),
                fmt_f64(p.nll_dlm),
                fmt_f64(p.nll_elbo),
                fmt_f64(p.delta),
            ]
        }),
    )?;
    let groups = render(
        &["dataset", "arch", "pairs", "mean_delta", "min_delta", "max_delta"],
        c.groups.iter().map(|g| {
            vec![
                g.dataset.clone(),
                g.arch.clone(),
                g.pairs.to_string(),
                fmt_f64(g.mean),
                fmt_f64(g.min),
                fmt_f64(g.max),
            ]
        }),
    )?;
    atomic_write(path, &pairs)?;
    atomic_write(summary_path, &groups)
}

/// Reads the `test_nll` of the last row of a trajectory file.
pub fn final_test_nll(path: &Path) -> Result<f64> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = headers.iter().position(|h| h == "test_nll").ok_or_else(|| {
        crate::Error::InvalidArgument(format!("{} has no test_nll column", path.display()))
    })?;
    let mut last = None;
    for rec in r.records() {
        last = Some(rec?);
    }
    let rec = last.ok_or(crate::Error::EmptyDataset)?;
    rec[col]
        .parse()
        .map_err(|_| crate::Error::InvalidArgument(format!("bad test_nll `{}`", &rec[col])))
}

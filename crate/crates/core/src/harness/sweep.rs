//! `selfpace sweep`: one run per value of `w` or `alpha`, everything else fixed.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::{build_report, write_rows};
use super::run::{cmd_run, LOG_FILE};
use super::runlog::{RunLog, RunStatus};
use crate::error::{Error, Result};
use crate::tasks::Role;

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Smoothing weight.
    W,
    Alpha,
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w" => Ok(SweepParam::W),
            "alpha" => Ok(SweepParam::Alpha),
            other => Err(Error::config(format!("unknown sweep parameter `{other}` (w or alpha)"))),
        }
    }
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::W => "w",
            SweepParam::Alpha => "alpha",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig, value: f64) {
        match self {
            SweepParam::W => cfg.smoothing = value,
            SweepParam::Alpha => cfg.alpha = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParam,
    pub value: f64,
    pub status: RunStatus,
    pub steps_completed: u64,
    /// Step of the best dev selection loss.
    pub steps_to_best: Option<u64>,
    pub best_selection_loss: Option<f64>,
    pub final_mean_loss: Option<f64>,
    pub final_mean_accuracy: Option<f64>,
    pub final_lrl_accuracy: Option<f64>,
    pub switches: u64,
    pub lrl_share_post_warmup: f64,
}

/// Per-value output directory, e.g. `alpha_1.1`.
pub fn run_dir(out_dir: &Path, param: SweepParam, value: f64) -> PathBuf {
    out_dir.join(format!("{}_{}", param.as_str(), value))
}

pub fn summarize(param: SweepParam, value: f64, log: &RunLog) -> Result<SweepRow> {
    let report = build_report(log, 100)?;
    let summary = log.summary();
    let last_dev = log.devs().last();
    let lrl: Vec<_> = log
        .header()
        .tasks
        .iter()
        .filter(|t| t.role == Role::Lrl)
        .map(|t| t.id)
        .collect();
    let final_lrl_accuracy = last_dev.and_then(|d| {
        let accs: Vec<f64> = d
            .tasks
            .iter()
            .filter(|t| lrl.contains(&t.task))
            .map(|t| t.accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    });
    Ok(SweepRow {
        parameter: param,
        value,
        status: summary.map_or(RunStatus::Diverged, |s| s.status),
        steps_completed: log.steps().last().map_or(0, |s| s.step),
        steps_to_best: summary.and_then(|s| s.best_step),
        best_selection_loss: summary.and_then(|s| s.best_selection_loss),
        final_mean_loss: last_dev.map(|d| d.mean_loss),
        final_mean_accuracy: last_dev.map(|d| d.mean_accuracy),
        final_lrl_accuracy,
        switches: report.total_switches(),
        lrl_share_post_warmup: report.share_of(Role::Lrl, true),
    })
}

/// Runs every value (up to `jobs` at a time) and writes `sweep.csv`.
/// A diverged run is reported in its row rather than aborting the sweep.
pub fn cmd_sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    for &v in values {
        let mut c = cfg.clone();
        param.apply(&mut c, v);
        c.validate()?;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRow>>>> =
        Mutex::new((0..values.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, values.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= values.len() {
                    break;
                }
                let row = run_one(cfg, param, values[i], out_dir);
                results.lock().expect("no poisoned lock")[i] = Some(row);
            });
        }
    });
    let rows = results
        .into_inner()
        .expect("no poisoned lock")
        .into_iter()
        .map(|r| r.expect("every value ran"))
        .collect::<Result<Vec<_>>>()?;
    let path = out_dir.join(SWEEP_FILE);
    fs::write(&path, write_rows(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

fn run_one(cfg: &RunConfig, param: SweepParam, value: f64, out_dir: &Path) -> Result<SweepRow> {
    let mut c = cfg.clone();
    param.apply(&mut c, value);
    let dir = run_dir(out_dir, param, value);
    let log = match cmd_run(&c, &dir, false) {
        Ok(log) => log,
        Err(Error::Divergence { .. }) => RunLog::load(&dir.join(LOG_FILE))?,
        Err(e) => return Err(e),
    };
    summarize(param, value, &log)
}

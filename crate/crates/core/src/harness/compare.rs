//! `selfpace compare-metrics`: one single-task training run recording all six
//! distance/scope combinations side by side.

use std::fs;
use std::path::Path;

use super::config::RunConfig;
use super::run::{measure, RunData};
use crate::error::{Error, Result};
use crate::metrics::{rolling_average, MetricKind};
use crate::rng::{step_rng, Stream};
use crate::tasks::make_batch;
use crate::trainer::Trainer;

pub const COMPARE_FILE: &str = "compare.csv";

/// Rolled and raw series, one entry per sampled step.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub kinds: Vec<MetricKind>,
    pub steps: Vec<u64>,
    pub raw: Vec<Vec<f64>>,
    pub rolled: Vec<Vec<f64>>,
}

impl CompareTable {
    pub fn series(&self, kind: MetricKind) -> Option<&[f64]> {
        let i = self.kinds.iter().position(|k| *k == kind)?;
        Some(&self.rolled[i])
    }

    /// Step at which the rolled series of `kind` peaks (first maximum).
    pub fn peak_step(&self, kind: MetricKind) -> Option<u64> {
        let s = self.series(kind)?;
        let mut best = 0;
        for (i, v) in s.iter().enumerate() {
            if *v > s[best] {
                best = i;
            }
        }
        self.steps.get(best).copied()
    }

    fn headers(&self) -> Vec<String> {
        let mut h = vec!["step".to_string()];
        h.extend(self.kinds.iter().map(|k| k.label()));
        h.extend(self.kinds.iter().map(|k| format!("{}_raw", k.label())));
        h
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.headers()).expect("in-memory write");
        for (i, step) in self.steps.iter().enumerate() {
            let mut row = vec![step.to_string()];
            row.extend(self.rolled.iter().map(|s| s[i].to_string()));
            row.extend(self.raw.iter().map(|s| s[i].to_string()));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| csv_err(e, 1))?.clone();
        let kinds: Vec<MetricKind> = MetricKind::all().to_vec();
        let expected = CompareTable {
            kinds: kinds.clone(),
            steps: vec![],
            raw: vec![],
            rolled: vec![],
        }
        .headers();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse {
                line: 1,
                message: "unexpected compare table header".into(),
            });
        }
        let n = kinds.len();
        let mut t = CompareTable {
            kinds,
            steps: vec![],
            raw: vec![Vec::new(); n],
            rolled: vec![Vec::new(); n],
        };
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| csv_err(e, line))?;
            let num = |j: usize| -> Result<f64> {
                rec[j].parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad number `{}`", &rec[j]),
                })
            };
            t.steps.push(rec[0].parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad step `{}`", &rec[0]),
            })?);
            for k in 0..n {
                t.rolled[k].push(num(1 + k)?);
                t.raw[k].push(num(1 + n + k)?);
            }
        }
        Ok(t)
    }
}

fn csv_err(e: csv::Error, line: usize) -> Error {
    Error::Parse {
        line: e.position().map_or(line, |p| p.line() as usize),
        message: e.to_string(),
    }
}

/// Trains on task `cfg.compare.task` for `cfg.total_steps` updates and
/// measures every combination on the update ending at each sampled step.
pub fn compare_metrics(cfg: &RunConfig) -> Result<CompareTable> {
    cfg.validate()?;
    if cfg.scripted.is_some() {
        return Err(Error::config("compare-metrics needs a trained model, not a scripted metric"));
    }
    let seed = cfg.seed()?;
    let data = RunData::build(cfg)?;
    let family = data.family.as_ref().expect("trained runs have data");
    let task = family.tasks.get(cfg.compare.task).ok_or_else(|| {
        Error::config(format!(
            "compare.task {} out of range ({} tasks)",
            cfg.compare.task,
            family.tasks.len()
        ))
    })?;
    let mut trainer = Trainer::new(cfg.trainer_config()?, family.vocab.size())?;
    let kinds = MetricKind::all().to_vec();
    let every = cfg.compare.sample_every;
    let mut steps = Vec::new();
    let mut raw = vec![Vec::new(); kinds.len()];
    for t in 1..=cfg.total_steps {
        let before = (t % every == 0).then(|| trainer.snapshot());
        let mut rng = step_rng(seed, t, Stream::Batch);
        let batch = make_batch(task, trainer.config.batch_tokens, &mut rng)?;
        trainer.train_step(&batch)?;
        if let Some(prev) = before {
            let curr = trainer.snapshot();
            for (k, kind) in kinds.iter().enumerate() {
                raw[k].push(measure(&prev, &curr, *kind)?);
            }
            steps.push(t);
        }
    }
    let rolled = raw
        .iter()
        .map(|s| rolling_average(s, cfg.compare.window))
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareTable {
        kinds,
        steps,
        raw,
        rolled,
    })
}

/// Runs [`compare_metrics`] and writes `compare.csv` under `out_dir`.
pub fn cmd_compare_metrics(cfg: &RunConfig, out_dir: &Path) -> Result<CompareTable> {
    let table = compare_metrics(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(COMPARE_FILE);
    fs::write(&path, table.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let kinds = MetricKind::all().to_vec();
        let t = CompareTable {
            steps: vec![10, 20],
            raw: (0..6).map(|k| vec![k as f64 * 0.1, 1.0 / 3.0]).collect(),
            rolled: (0..6).map(|k| vec![k as f64 * 1e-9, 2.5]).collect(),
            kinds,
        };
        let text = t.to_csv();
        let back = CompareTable::from_csv(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv(), text);
        assert_eq!(t.peak_step(MetricKind::default_kl()), Some(20));
    }

    #[test]
    fn bad_csv_reports_line() {
        let t = CompareTable {
            kinds: MetricKind::all().to_vec(),
            steps: vec![10],
            raw: vec![vec![1.0]; 6],
            rolled: vec![vec![1.0]; 6],
        };
        let text = t.to_csv().replace("10,", "x,");
        assert!(matches!(CompareTable::from_csv(&text), Err(Error::Parse { line: 2, .. })));
    }
}

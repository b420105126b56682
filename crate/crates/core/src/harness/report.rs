//! `selfpace report`: task-switch counts per step bucket, per-task training
//! shares and the event timeline of a run log.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::runlog::RunLog;
use crate::competence::{Draw, TaskId};
use crate::error::{Error, Result};
use crate::scheduler::Trigger;
use crate::tasks::Role;

pub const BUCKETS_FILE: &str = "report_buckets.csv";
pub const SHARES_FILE: &str = "report_shares.csv";
pub const TIMELINE_FILE: &str = "report_timeline.csv";

/// One task within one bucket of steps `start..=end`. `switch_ins` counts
/// decisions in the bucket that moved training onto `task`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub start: u64,
    pub end: u64,
    pub task: String,
    pub updates: u64,
    pub switch_ins: u64,
    pub switches_total: u64,
}

/// Updates count examples for multilingual batches and minibatches otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub task: String,
    pub role: Role,
    pub updates: u64,
    pub share: f64,
    pub post_warmup_updates: u64,
    pub post_warmup_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub step: u64,
    pub from: String,
    pub to: String,
    pub trigger: Trigger,
    pub draw: Option<Draw>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub bucket_size: u64,
    pub warmup_steps: u64,
    pub buckets: Vec<BucketRow>,
    pub shares: Vec<ShareRow>,
    pub timeline: Vec<TimelineRow>,
}

impl Report {
    pub fn share_of(&self, role: Role, post_warmup: bool) -> f64 {
        self.shares
            .iter()
            .filter(|s| s.role == role)
            .map(|s| if post_warmup { s.post_warmup_share } else { s.share })
            .sum()
    }

    pub fn total_switches(&self) -> u64 {
        self.timeline
            .iter()
            .filter(|t| t.trigger != Trigger::Initial)
            .count() as u64
    }

    /// Plain-text overview for the terminal.
    pub fn summary_text(&self) -> String {
        let mut out = format!(
            "switches: {}  (buckets of {} steps, warmup {})\n",
            self.total_switches(),
            self.bucket_size,
            self.warmup_steps
        );
        out.push_str("task        role  share    post-warmup\n");
        for s in &self.shares {
            let role = match s.role {
                Role::Hrl => "HRL",
                Role::Lrl => "LRL",
            };
            out.push_str(&format!(
                "{:<11} {:<5} {:<8.4} {:.4}\n",
                s.task, role, s.share, s.post_warmup_share
            ));
        }
        out
    }
}

pub fn build_report(log: &RunLog, bucket_size: u64) -> Result<Report> {
    if bucket_size == 0 {
        return Err(Error::config("bucket size must be >= 1"));
    }
    let h = log.header();
    let n = h.tasks.len();
    let index = |id: TaskId| -> Result<usize> {
        h.tasks
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| Error::invalid(format!("log references unknown task {id}")))
    };
    let name = |id: TaskId| -> Result<String> { Ok(h.tasks[index(id)?].name.clone()) };

    let last_step = log.steps().last().map_or(0, |s| s.step);
    // Keyed by bucket index; only buckets holding updates get rows.
    let mut updates: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    let mut switch_ins: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    let mut totals = vec![0u64; n];
    let mut post = vec![0u64; n];

    for s in log.steps() {
        let b = s.step.saturating_sub(1) / bucket_size;
        let counts: Vec<(usize, u64)> = match (&s.task, &s.mix) {
            (Some(t), _) => vec![(index(*t)?, 1)],
            (None, Some(mix)) if mix.len() == n => {
                mix.iter().enumerate().map(|(i, c)| (i, u64::from(*c))).collect()
            }
            _ => {
                return Err(Error::invalid(format!(
                    "step {} has neither a task nor a per-task mix",
                    s.step
                )))
            }
        };
        let row = updates.entry(b).or_insert_with(|| vec![0; n]);
        for (i, c) in counts {
            row[i] += c;
            totals[i] += c;
            if s.step > h.warmup_steps {
                post[i] += c;
            }
        }
    }

    let mut timeline = Vec::new();
    for e in log.events() {
        if e.trigger != Trigger::Initial && e.step >= 1 {
            let b = (e.step - 1) / bucket_size;
            if updates.contains_key(&b) {
                switch_ins.entry(b).or_insert_with(|| vec![0; n])[index(e.to_task)?] += 1;
            }
        }
        timeline.push(TimelineRow {
            step: e.step,
            from: name(e.from_task)?,
            to: name(e.to_task)?,
            trigger: e.trigger,
            draw: e.draw,
        });
    }

    let mut buckets = Vec::new();
    let no_switches = vec![0; n];
    for (&b, counts) in &updates {
        let ins = switch_ins.get(&b).unwrap_or(&no_switches);
        let start = b * bucket_size + 1;
        let end = b.saturating_add(1).saturating_mul(bucket_size).min(last_step);
        let total: u64 = ins.iter().sum();
        for (i, t) in h.tasks.iter().enumerate() {
            buckets.push(BucketRow {
                start,
                end,
                task: t.name.clone(),
                updates: counts[i],
                switch_ins: ins[i],
                switches_total: total,
            });
        }
    }

    let sum: u64 = totals.iter().sum();
    let post_sum: u64 = post.iter().sum();
    let frac = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let shares = h
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| ShareRow {
            task: t.name.clone(),
            role: t.role,
            updates: totals[i],
            share: frac(totals[i], sum),
            post_warmup_updates: post[i],
            post_warmup_share: frac(post[i], post_sum),
        })
        .collect();

    Ok(Report {
        bucket_size,
        warmup_steps: h.warmup_steps,
        buckets,
        shares,
        timeline,
    })
}

pub fn cmd_report(log_path: &Path, out_dir: &Path, bucket_size: u64) -> Result<Report> {
    let log = RunLog::load(log_path)?;
    let report = build_report(&log, bucket_size)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (file, text) in [
        (BUCKETS_FILE, write_rows(&report.buckets)),
        (SHARES_FILE, write_rows(&report.shares)),
        (TIMELINE_FILE, write_rows(&report.timeline)),
    ] {
        let path = out_dir.join(file);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

/// Serializes rows as CSV with a header line.
pub fn write_rows<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Parses CSV written by [`write_rows`]. Errors carry 1-based line numbers.
pub fn read_rows<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|rec| {
            rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })
        })
        .collect()
}

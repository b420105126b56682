//! JSONL run log, format `selfpace-runlog` version 1.
//!
//! One JSON object per line, discriminated by `kind`. The first line is the
//! header; step numbers strictly increase; a summary, when present, is last.
//! See `docs/formats.md` for the field reference.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::competence::TaskId;
use crate::error::{Error, Result};
use crate::scheduler::ScheduleEvent;
use crate::tasks::Role;

pub const RUNLOG_FORMAT: &str = "selfpace-runlog";
pub const RUNLOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Header(Header),
    Step(StepRecord),
    Event(ScheduleEvent),
    Dev(DevRecord),
    Summary(Summary),
}

impl Record {
    /// Training step the record belongs to; `None` for header and summary.
    pub fn step(&self) -> Option<u64> {
        match self {
            Record::Step(s) => Some(s.step),
            Record::Event(e) => Some(e.step),
            Record::Dev(d) => Some(d.step),
            Record::Header(_) | Record::Summary(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub id: TaskId,
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// Learning-rate warmup of the trainer, which is also the HRL warmup length.
    pub warmup_steps: u64,
    pub tasks: Vec<TaskInfo>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Task of the minibatch; absent for multilingual (shuffled) batches.
    pub task: Option<TaskId>,
    pub d_raw: f64,
    pub d_smoothed: f64,
    pub d_smoothed_prev: Option<f64>,
    pub lr: Option<f64>,
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub clipped: bool,
    /// The scheduler switched task after this update.
    pub switched: bool,
    /// Examples per task, in task order, for multilingual batches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevTask {
    pub task: TaskId,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevRecord {
    pub step: u64,
    pub tasks: Vec<DevTask>,
    pub mean_loss: f64,
    pub mean_accuracy: f64,
    /// Mean dev loss over the LRL tasks (all tasks when there are none).
    pub selection_loss: f64,
    pub best: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: RunStatus,
    pub steps_completed: u64,
    pub best_step: Option<u64>,
    pub best_selection_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<Record>,
}

impl RunLog {
    pub fn header(&self) -> &Header {
        match self.records.first() {
            Some(Record::Header(h)) => h,
            _ => unreachable!("parsed logs start with a header"),
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = &ScheduleEvent> {
        self.records.iter().filter_map(|r| match r {
            Record::Event(e) => Some(e),
            _ => None,
        })
    }

    pub fn devs(&self) -> impl Iterator<Item = &DevRecord> {
        self.records.iter().filter_map(|r| match r {
            Record::Dev(d) => Some(d),
            _ => None,
        })
    }

    pub fn summary(&self) -> Option<&Summary> {
        match self.records.last() {
            Some(Record::Summary(s)) => Some(s),
            _ => None,
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&record_line(r));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_runlog(&text)
    }
}

fn record_line(r: &Record) -> String {
    let mut s = serde_json::to_string(r).expect("records serialize");
    s.push('\n');
    s
}

/// Parses and structurally validates a run log. Errors carry 1-based line numbers.
pub fn parse_runlog(text: &str) -> Result<RunLog> {
    let mut records = Vec::new();
    let mut last_step: Option<u64> = None;
    let mut n_lines = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        n_lines = lineno;
        let err = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        if line.trim().is_empty() {
            return Err(err("empty line".into()));
        }
        let record: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        match (&record, records.is_empty()) {
            (Record::Header(h), true) => {
                if h.format != RUNLOG_FORMAT || h.version != RUNLOG_VERSION {
                    return Err(err(format!(
                        "unsupported log format {} v{}",
                        h.format, h.version
                    )));
                }
                let mut ids: Vec<TaskId> = h.tasks.iter().map(|t| t.id).collect();
                ids.sort();
                ids.dedup();
                if ids.len() != h.tasks.len() || ids.is_empty() {
                    return Err(err("header task ids must be present and distinct".into()));
                }
            }
            (_, true) => return Err(err("first record must be the header".into())),
            (Record::Header(_), false) => return Err(err("duplicate header".into())),
            _ => {}
        }
        if matches!(records.last(), Some(Record::Summary(_))) {
            return Err(err("record after summary".into()));
        }
        if matches!(&record, Record::Step(_) | Record::Dev(_)) && record.step() == Some(0) {
            return Err(err("training steps start at 1".into()));
        }
        if let Record::Step(s) = &record {
            if last_step.is_some_and(|prev| s.step <= prev) {
                return Err(err(format!("step {} does not increase", s.step)));
            }
            if !(s.d_raw.is_finite() && s.d_smoothed.is_finite()) {
                return Err(err("non-finite variation".into()));
            }
            last_step = Some(s.step);
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Parse {
            line: n_lines.max(1),
            message: "empty run log".into(),
        });
    }
    Ok(RunLog { records })
}

/// Append-only writer that flushes every record, so a crash leaves a
/// readable prefix.
pub struct RunLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(RunLogWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    /// Keeps records up to and including `step`, replaces the header with
    /// `header`, then reopens for appending.
    pub fn truncate_after(path: &Path, step: u64, header: Header) -> Result<(Self, RunLog)> {
        let mut log = RunLog::load(path)?;
        log.records
            .retain(|r| !matches!(r, Record::Summary(_)) && r.step().is_none_or(|s| s <= step));
        log.records[0] = Record::Header(header);
        fs::write(path, log.to_jsonl()).map_err(|e| Error::io(path, e))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok((
            RunLogWriter {
                path: path.to_path_buf(),
                out: BufWriter::new(file),
            },
            log,
        ))
    }

    pub fn append(&mut self, record: &Record) -> Result<()> {
        self.out
            .write_all(record_line(record).as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{Strategy, Trigger};

    fn sample() -> RunLog {
        let mut cfg = RunConfig::desk_default(Strategy::SelfPaced);
        cfg.seed = Some(4);
        RunLog {
            records: vec![
                Record::Header(Header {
                    format: RUNLOG_FORMAT.into(),
                    version: RUNLOG_VERSION,
                    seed: 4,
                    warmup_steps: 200,
                    tasks: vec![
                        TaskInfo { id: TaskId(0), name: "hrl0".into(), role: Role::Hrl },
                        TaskInfo { id: TaskId(1), name: "lrl0".into(), role: Role::Lrl },
                    ],
                    config: cfg,
                }),
                Record::Event(ScheduleEvent {
                    step: 0,
                    from_task: TaskId(0),
                    to_task: TaskId(0),
                    trigger: Trigger::Initial,
                    draw: None,
                }),
                Record::Step(StepRecord {
                    step: 1,
                    task: Some(TaskId(0)),
                    d_raw: 0.1 + 0.2,
                    d_smoothed: 1.0 / 3.0,
                    d_smoothed_prev: None,
                    lr: Some(1e-7),
                    loss: Some(3.25),
                    grad_norm: Some(2.5e-3),
                    clipped: false,
                    switched: false,
                    mix: None,
                }),
                Record::Dev(DevRecord {
                    step: 1,
                    tasks: vec![DevTask { task: TaskId(0), loss: 2.0, accuracy: 0.125 }],
                    mean_loss: 2.0,
                    mean_accuracy: 0.125,
                    selection_loss: 2.0,
                    best: true,
                }),
                Record::Summary(Summary {
                    status: RunStatus::Completed,
                    steps_completed: 1,
                    best_step: Some(1),
                    best_selection_loss: Some(2.0),
                    message: None,
                }),
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let text = sample().to_jsonl();
        let parsed = parse_runlog(&text).unwrap();
        assert_eq!(parsed, sample());
        assert_eq!(parsed.to_jsonl(), text);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = sample().to_jsonl();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = "{\"kind\":\"step\",\"step\":";
        match parse_runlog(&lines.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let no_header: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_runlog(&no_header), Err(Error::Parse { line: 1, .. })));
        assert!(parse_runlog("").is_err());
    }

    #[test]
    fn steps_must_increase() {
        let mut log = sample();
        let step = log.records[2].clone();
        log.records.insert(3, step);
        match parse_runlog(&log.to_jsonl()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_step_zero_and_duplicate_task_ids() {
        let mut log = sample();
        if let Record::Step(s) = &mut log.records[2] {
            s.step = 0;
        }
        assert!(matches!(parse_runlog(&log.to_jsonl()), Err(Error::Parse { line: 3, .. })));
        let mut log = sample();
        if let Record::Header(h) = &mut log.records[0] {
            h.tasks[1].id = TaskId(0);
        }
        assert!(matches!(parse_runlog(&log.to_jsonl()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn truncation_keeps_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        fs::write(&path, sample().to_jsonl()).unwrap();
        let header = sample().header().clone();
        let (_, log) = RunLogWriter::truncate_after(&path, 0, header).unwrap();
        assert_eq!(log.records.len(), 2);
        assert_eq!(RunLog::load(&path).unwrap(), log);
    }
}

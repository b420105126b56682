//! Per-task smoothed weight variation and the task sampler built on it.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompetenceEntry {
    pub smoothed: Option<f64>,
    /// Smoothed value as of the previous update on this task.
    pub lagged: Option<f64>,
    pub seen: bool,
    pub last_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetenceTable {
    smoothing: f64,
    entries: BTreeMap<TaskId, CompetenceEntry>,
}

/// How `sample_next_task` picked its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Draw {
    Unseen,
    Softmax,
}

impl CompetenceTable {
    pub fn new(smoothing: f64, tasks: impl IntoIterator<Item = TaskId>) -> Result<Self> {
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::config(format!(
                "smoothing weight must be in [0, 1), got {smoothing}"
            )));
        }
        Ok(CompetenceTable {
            smoothing,
            entries: tasks
                .into_iter()
                .map(|t| (t, CompetenceEntry::default()))
                .collect(),
        })
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn entry(&self, task: TaskId) -> Option<&CompetenceEntry> {
        self.entries.get(&task)
    }

    pub fn entries(&self) -> impl Iterator<Item = (TaskId, &CompetenceEntry)> {
        self.entries.iter().map(|(t, e)| (*t, e))
    }

    pub fn is_seen(&self, task: TaskId) -> bool {
        self.entries.get(&task).is_some_and(|e| e.seen)
    }

    fn entry_mut(&mut self, task: TaskId) -> Result<&mut CompetenceEntry> {
        self.entries
            .get_mut(&task)
            .ok_or_else(|| Error::invalid(format!("unknown task {task}")))
    }

    /// Folds a raw variation into `task`'s exponential average and returns
    /// the new smoothed value. The first observation initializes it directly.
    pub fn smooth_update(&mut self, task: TaskId, d_raw: f64, step: u64) -> Result<f64> {
        if !d_raw.is_finite() || d_raw < 0.0 {
            return Err(Error::invalid(format!(
                "raw variation must be finite and >= 0, got {d_raw}"
            )));
        }
        let w = self.smoothing;
        let e = self.entry_mut(task)?;
        let new = match e.smoothed {
            Some(prev) => (1.0 - w) * d_raw + w * prev,
            None => d_raw,
        };
        e.lagged = e.smoothed;
        e.smoothed = Some(new);
        e.seen = true;
        e.last_step = Some(step);
        Ok(new)
    }

    /// Stores an already smoothed value, as when replaying a log.
    pub fn observe_smoothed(&mut self, task: TaskId, smoothed: f64, step: u64) -> Result<()> {
        if !smoothed.is_finite() || smoothed < 0.0 {
            return Err(Error::invalid(format!(
                "smoothed variation must be finite and >= 0, got {smoothed}"
            )));
        }
        let e = self.entry_mut(task)?;
        e.lagged = e.smoothed;
        e.smoothed = Some(smoothed);
        e.seen = true;
        e.last_step = Some(step);
        Ok(())
    }

    /// Sets the competence `C_c` used by the sampler.
    pub fn record_competence(&mut self, task: TaskId, value: f64) -> Result<()> {
        let e = self.entry_mut(task)?;
        if !e.seen {
            return Err(Error::InternalState(format!(
                "competence recorded for untrained task {task}"
            )));
        }
        e.smoothed = Some(value);
        Ok(())
    }
}

fn candidates(current: TaskId, all_tasks: &[TaskId]) -> Result<Vec<TaskId>> {
    if all_tasks.len() < 2 {
        return Err(Error::invalid("task sampling needs at least two tasks"));
    }
    if !all_tasks.contains(&current) {
        return Err(Error::invalid(format!(
            "current task {current} is not in the candidate set"
        )));
    }
    let others: Vec<TaskId> = all_tasks.iter().copied().filter(|t| *t != current).collect();
    if others.is_empty() {
        return Err(Error::invalid("no candidate besides the current task"));
    }
    Ok(others)
}

/// Selection distribution over `all_tasks \ {current}`, paired with the
/// draw kind it implies.
pub fn selection_probabilities(
    table: &CompetenceTable,
    current: TaskId,
    all_tasks: &[TaskId],
) -> Result<(Draw, Vec<(TaskId, f64)>)> {
    let others = candidates(current, all_tasks)?;
    let unseen: Vec<TaskId> = others
        .iter()
        .copied()
        .filter(|t| !table.is_seen(*t))
        .collect();
    if !unseen.is_empty() {
        let p = 1.0 / unseen.len() as f64;
        return Ok((Draw::Unseen, unseen.into_iter().map(|t| (t, p)).collect()));
    }
    let values: Vec<f64> = others
        .iter()
        .map(|t| {
            table
                .entry(*t)
                .and_then(|e| e.smoothed)
                .ok_or_else(|| Error::InternalState(format!("seen task {t} has no value")))
        })
        .collect::<Result<_>>()?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok((
        Draw::Softmax,
        others.into_iter().zip(exps.into_iter().map(|e| e / sum)).collect(),
    ))
}

/// Picks the next task: uniformly among never-trained tasks while any remain,
/// otherwise from the softmax of the smoothed variations. Never returns
/// `current`.
pub fn sample_next_task<R: Rng + ?Sized>(
    table: &CompetenceTable,
    current: TaskId,
    all_tasks: &[TaskId],
    rng: &mut R,
) -> Result<(TaskId, Draw)> {
    let (draw, probs) = selection_probabilities(table, current, all_tasks)?;
    if draw == Draw::Unseen {
        let i = rng.random_range(0..probs.len());
        return Ok((probs[i].0, draw));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (task, p) in &probs {
        acc += p;
        if u < acc {
            return Ok((*task, draw));
        }
    }
    probs
        .last()
        .map(|(t, _)| (*t, draw))
        .ok_or_else(|| Error::InternalState("empty selection distribution".into()))
}

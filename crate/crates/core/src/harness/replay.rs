//! Offline reconstruction of scheduler decisions from a run log, plus the
//! structural checks every self-paced log must pass.

use super::runlog::RunLog;
use crate::competence::{CompetenceTable, Draw};
use crate::error::{Error, Result};
use crate::rng::{step_rng, Stream};
use crate::scheduler::{ScheduleEvent, Scheduler, Strategy};

/// Re-runs the decision logic over the logged smoothed variations and
/// returns the events it emits, starting with the initial one.
pub fn replay(log: &RunLog) -> Result<Vec<ScheduleEvent>> {
    let h = log.header();
    let cfg = &h.config;
    if cfg.strategy == Strategy::Shuffled {
        return Ok(Vec::new());
    }
    let roles: Vec<_> = h.tasks.iter().map(|t| (t.id, t.role)).collect();
    let ids: Vec<_> = roles.iter().map(|r| r.0).collect();
    let (mut sched, initial) =
        Scheduler::new(cfg.strategy, cfg.alpha, cfg.hrl_warmup, h.warmup_steps, roles)?;
    let mut table = CompetenceTable::new(cfg.smoothing, ids)?;
    let mut events = vec![initial];
    for s in log.steps() {
        let task = s
            .task
            .ok_or_else(|| Error::invalid(format!("step {} has no task", s.step)))?;
        if task != sched.current_task() {
            return Err(Error::InternalState(format!(
                "step {} trained task {task} but replay expects {}",
                s.step,
                sched.current_task()
            )));
        }
        table.observe_smoothed(task, s.d_smoothed, s.step)?;
        let prev = table.entry(task).and_then(|e| e.lagged);
        if prev.map(f64::to_bits) != s.d_smoothed_prev.map(f64::to_bits) {
            return Err(Error::InternalState(format!(
                "step {}: logged previous smoothed value disagrees with replay",
                s.step
            )));
        }
        let mut rng = step_rng(h.seed, s.step, Stream::Schedule);
        if let Some(e) = sched.decide(s.step, &mut table, s.d_smoothed, prev, &mut rng)? {
            events.push(e);
        }
    }
    Ok(events)
}

/// Replays `log` and compares with its logged events.
pub fn check_replay(log: &RunLog) -> Result<()> {
    let logged: Vec<_> = log.events().cloned().collect();
    let replayed = replay(log)?;
    if logged != replayed {
        let at = logged
            .iter()
            .zip(&replayed)
            .position(|(a, b)| a != b)
            .unwrap_or(logged.len().min(replayed.len()));
        return Err(Error::InternalState(format!(
            "replay diverges from the log at event {at} ({} logged, {} replayed)",
            logged.len(),
            replayed.len()
        )));
    }
    Ok(())
}

/// Every maximal run of same-task updates has at least two updates, except
/// possibly the last one.
pub fn check_two_update_minimum(log: &RunLog) -> Result<()> {
    let tasks: Vec<_> = log.steps().map(|s| (s.step, s.task)).collect();
    let mut i = 0;
    while i < tasks.len() {
        let mut j = i;
        while j + 1 < tasks.len() && tasks[j + 1].1 == tasks[i].1 {
            j += 1;
        }
        let len = j - i + 1;
        if len < 2 && j + 1 < tasks.len() {
            return Err(Error::InternalState(format!(
                "single-update run on task {:?} at step {}",
                tasks[i].1, tasks[i].0
            )));
        }
        i = j + 1;
    }
    Ok(())
}

/// Every task eligible for the next update must have been trained before a
/// softmax draw picks it. With HRL warmup only HRL tasks are eligible until
/// the warmup ends.
pub fn check_initial_coverage(log: &RunLog) -> Result<()> {
    let h = log.header();
    let cfg = &h.config;
    let roles: Vec<_> = h.tasks.iter().map(|t| (t.id, t.role)).collect();
    let (sched, _) = Scheduler::new(cfg.strategy, cfg.alpha, cfg.hrl_warmup, h.warmup_steps, roles)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut steps = log.steps().peekable();
    for e in log.events().filter(|e| e.draw == Some(Draw::Softmax)) {
        while let Some(s) = steps.next_if(|s| s.step <= e.step) {
            seen.extend(s.task);
        }
        let eligible = sched.warmup_gate(e.step + 1);
        if let Some(missing) = eligible.iter().find(|t| !seen.contains(t)) {
            return Err(Error::InternalState(format!(
                "softmax draw at step {} before task {missing} was trained",
                e.step
            )));
        }
    }
    Ok(())
}

/// All structural checks for a self-paced log.
pub fn audit_self_paced(log: &RunLog) -> Result<()> {
    check_two_update_minimum(log)?;
    check_initial_coverage(log)?;
    check_replay(log)
}

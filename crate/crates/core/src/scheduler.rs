//! Task-switching strategies.
//!
//! The self-paced strategy stays on a task while its smoothed weight
//! variation keeps growing and switches once it drops below `alpha` times the
//! previous value. Every task receives at least two consecutive updates, so
//! both sides of the comparison come from same-task updates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::competence::{sample_next_task, CompetenceTable, Draw, TaskId};
use crate::error::{Error, Result};
use crate::tasks::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    SelfPaced,
    Alternation,
    Shuffled,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SelfPaced => "self-paced",
            Strategy::Alternation => "alternation",
            Strategy::Shuffled => "shuffled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    Initial,
    VariationDecrease,
    AlternationCycle,
    WarmupEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    /// Update after which the decision was taken; 0 for the initial choice.
    pub step: u64,
    pub from_task: TaskId,
    pub to_task: TaskId,
    pub trigger: Trigger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draw: Option<Draw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub strategy: Strategy,
    pub current_task: TaskId,
    pub changed_task: bool,
    pub steps_on_task: u64,
    pub alpha: f64,
    pub hrl_warmup: bool,
    pub warmup_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    state: SchedulerState,
    /// Tasks in configuration order with their roles.
    tasks: Vec<(TaskId, Role)>,
}

impl Scheduler {
    /// Starts on the first task allowed at step 1, in configuration order.
    pub fn new(
        strategy: Strategy,
        alpha: f64,
        hrl_warmup: bool,
        warmup_steps: u64,
        tasks: Vec<(TaskId, Role)>,
    ) -> Result<(Self, ScheduleEvent)> {
        if tasks.is_empty() {
            return Err(Error::config("scheduler needs at least one task"));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::config(format!("alpha must be > 0, got {alpha}")));
        }
        let mut ids: Vec<TaskId> = tasks.iter().map(|(t, _)| *t).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!("task {} is listed twice", w[0])));
        }
        if hrl_warmup && warmup_steps == 0 {
            return Err(Error::config("hrl warmup needs warmup_steps >= 1"));
        }
        if hrl_warmup && !tasks.iter().any(|(_, r)| *r == Role::Hrl) {
            return Err(Error::config("hrl warmup requested but no HRL task is configured"));
        }
        let mut sched = Scheduler {
            state: SchedulerState {
                strategy,
                current_task: tasks[0].0,
                changed_task: true,
                steps_on_task: 0,
                alpha,
                hrl_warmup,
                warmup_steps,
            },
            tasks,
        };
        let first = sched.warmup_gate(1)[0];
        sched.state.current_task = first;
        let event = ScheduleEvent {
            step: 0,
            from_task: first,
            to_task: first,
            trigger: Trigger::Initial,
            draw: None,
        };
        Ok((sched, event))
    }

    pub fn state(&self) -> &SchedulerState {
        &self.state
    }

    pub fn current_task(&self) -> TaskId {
        self.state.current_task
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|(t, _)| *t).collect()
    }

    /// Tasks the scheduler may pick for `step`.
    pub fn warmup_gate(&self, step: u64) -> Vec<TaskId> {
        let restricted = self.state.hrl_warmup && step <= self.state.warmup_steps;
        self.tasks
            .iter()
            .filter(|(_, role)| !restricted || *role == Role::Hrl)
            .map(|(t, _)| *t)
            .collect()
    }

    /// Dispatches the post-update decision for the configured strategy.
    /// `step` is the update that just completed.
    pub fn decide<R: Rng + ?Sized>(
        &mut self,
        step: u64,
        table: &mut CompetenceTable,
        d_smoothed_now: f64,
        d_smoothed_prev: Option<f64>,
        rng: &mut R,
    ) -> Result<Option<ScheduleEvent>> {
        match self.state.strategy {
            Strategy::SelfPaced => {
                self.self_paced_step(step, table, d_smoothed_now, d_smoothed_prev, rng)
            }
            Strategy::Alternation => self.alternation_step(step),
            Strategy::Shuffled => Ok(None),
        }
    }

    fn switch_to(&mut self, step: u64, to: TaskId, trigger: Trigger, draw: Option<Draw>) -> ScheduleEvent {
        let from = self.state.current_task;
        self.state.current_task = to;
        self.state.steps_on_task = 0;
        ScheduleEvent {
            step,
            from_task: from,
            to_task: to,
            trigger,
            draw,
        }
    }

    /// One iteration of the self-paced decision after the update at `step`.
    pub fn self_paced_step<R: Rng + ?Sized>(
        &mut self,
        step: u64,
        table: &mut CompetenceTable,
        d_smoothed_now: f64,
        d_smoothed_prev: Option<f64>,
        rng: &mut R,
    ) -> Result<Option<ScheduleEvent>> {
        self.state.steps_on_task += 1;
        if self.state.changed_task {
            self.state.changed_task = false;
            return Ok(None);
        }
        let prev = d_smoothed_prev.ok_or_else(|| {
            Error::InternalState(format!(
                "no previous smoothed variation for task {} at step {step}",
                self.state.current_task
            ))
        })?;
        if d_smoothed_now >= self.state.alpha * prev {
            return Ok(None);
        }

        let current = self.state.current_task;
        table.record_competence(current, d_smoothed_now)?;
        let allowed = self.warmup_gate(step + 1);
        if !allowed.contains(&current) {
            return Err(Error::InternalState(format!(
                "current task {current} is outside the allowed set at step {step}"
            )));
        }
        if allowed.len() < 2 {
            // Nothing else to switch to while the warmup gate is closed.
            return Ok(None);
        }
        let (next, draw) = sample_next_task(table, current, &allowed, rng)?;
        self.state.changed_task = true;
        Ok(Some(self.switch_to(step, next, Trigger::VariationDecrease, Some(draw))))
    }

    /// Advances to the next allowed task in configuration order.
    pub fn alternation_step(&mut self, step: u64) -> Result<Option<ScheduleEvent>> {
        self.state.steps_on_task += 1;
        let allowed = self.warmup_gate(step + 1);
        if allowed.is_empty() {
            return Err(Error::invalid("alternation over an empty task list"));
        }
        let order = self.task_ids();
        let pos = order
            .iter()
            .position(|t| *t == self.state.current_task)
            .ok_or_else(|| Error::InternalState("current task not configured".into()))?;
        let next = (1..=order.len())
            .map(|k| order[(pos + k) % order.len()])
            .find(|t| allowed.contains(t))
            .expect("allowed is a non-empty subset of order");
        if next == self.state.current_task {
            return Ok(None);
        }
        let gate_lifted = self.state.hrl_warmup && step == self.state.warmup_steps;
        let trigger = if gate_lifted {
            Trigger::WarmupEnd
        } else {
            Trigger::AlternationCycle
        };
        Ok(Some(self.switch_to(step, next, trigger, None)))
    }
}

/// Uniform choice of one task, the per-example realization of equal-size
/// upsampling followed by shuffling.
pub fn draw_shuffled_task<R: Rng + ?Sized>(tasks: &[TaskId], rng: &mut R) -> Result<TaskId> {
    if tasks.is_empty() {
        return Err(Error::invalid("shuffled batch needs at least one task"));
    }
    Ok(tasks[rng.random_range(0..tasks.len())])
}

/// Task assignment for `slots` examples of one multilingual batch.
pub fn shuffled_batch_plan<R: Rng + ?Sized>(
    tasks: &[TaskId],
    slots: usize,
    rng: &mut R,
) -> Result<Vec<TaskId>> {
    (0..slots).map(|_| draw_shuffled_task(tasks, rng)).collect()
}

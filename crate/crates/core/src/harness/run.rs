//! The training loop behind `selfpace run`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::runlog::{
    DevRecord, DevTask, Header, Record, RunLog, RunLogWriter, RunStatus, StepRecord, Summary,
    TaskInfo, RUNLOG_FORMAT, RUNLOG_VERSION,
};
use crate::competence::{CompetenceTable, TaskId};
use crate::error::{Error, Result};
use crate::metrics::{weight_variation, Distance, MetricKind, WeightSnapshot};
use crate::rng::{step_rng, Stream};
use crate::scheduler::{ScheduleEvent, Scheduler, Strategy};
use crate::tasks::{
    generate_task_family, import_family, make_batch, make_shuffled_batch, Role, TaskData,
    TaskFamily,
};
use crate::trainer::checkpoint::Checkpoint;
use crate::trainer::Trainer;

pub const LOG_FILE: &str = "runlog.jsonl";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const STATE_FILE: &str = "state.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Variation between consecutive snapshots of a trained model. Inverse
/// cosine skips tensors that are still all zero.
pub fn measure(prev: &WeightSnapshot, curr: &WeightSnapshot, kind: MetricKind) -> Result<f64> {
    if kind.distance == Distance::InverseCosine {
        let (p, c) = prev.without_zero_layers(curr)?;
        weight_variation(&p, &c, kind)
    } else {
        weight_variation(prev, curr, kind)
    }
}

/// Task family plus the task list the scheduler sees. Scripted runs have no data.
pub struct RunData {
    pub family: Option<TaskFamily>,
    pub tasks: Vec<TaskInfo>,
}

impl RunData {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        if cfg.scripted.is_some() {
            let mut tasks = Vec::new();
            for (i, _) in cfg.data.pairs.iter().enumerate() {
                for (j, (role, prefix)) in [(Role::Hrl, "hrl"), (Role::Lrl, "lrl")].into_iter().enumerate() {
                    tasks.push(TaskInfo {
                        id: TaskId((2 * i + j) as u32),
                        name: format!("{prefix}{i}"),
                        role,
                    });
                }
            }
            return Ok(RunData { family: None, tasks });
        }
        let family = match &cfg.data.corpus_dir {
            Some(dir) => import_family(dir)?,
            None => generate_task_family(cfg.data_seed()?, &cfg.data.pairs, &cfg.data.options)?,
        };
        let tasks = family
            .tasks
            .iter()
            .map(|t| TaskInfo {
                id: t.spec.id,
                name: t.spec.name.clone(),
                role: t.spec.role,
            })
            .collect();
        Ok(RunData {
            family: Some(family),
            tasks,
        })
    }

    pub fn ids(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|t| t.id).collect()
    }

    pub fn roles(&self) -> Vec<(TaskId, Role)> {
        self.tasks.iter().map(|t| (t.id, t.role)).collect()
    }

    fn task(&self, id: TaskId) -> Result<&TaskData> {
        self.family
            .as_ref()
            .and_then(|f| f.task(id))
            .ok_or_else(|| Error::InternalState(format!("no data for task {id}")))
    }
}

/// Everything beyond the checkpointed weights needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResumeState {
    version: u32,
    step: u64,
    scheduler: Scheduler,
    table: CompetenceTable,
    /// Smoothed variation of the single multilingual stream (shuffled runs).
    global_smoothed: Option<f64>,
    best: Option<(u64, f64)>,
}

struct Loop<'a> {
    cfg: &'a RunConfig,
    data: RunData,
    seed: u64,
    out_dir: PathBuf,
    trainer: Option<Trainer>,
    snapshot: Option<WeightSnapshot>,
    scheduler: Scheduler,
    table: CompetenceTable,
    global_smoothed: Option<f64>,
    best: Option<(u64, f64)>,
    writer: RunLogWriter,
    step: u64,
}

/// Runs (or, with `resume`, continues) the configured experiment in `out_dir`
/// and returns the complete log. Divergence leaves a flagged partial log and
/// returns the divergence error.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path, resume: bool) -> Result<RunLog> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let seed = cfg.seed()?;
    let tc = cfg.trainer_config()?;
    let data = RunData::build(cfg)?;
    let log_path = out_dir.join(LOG_FILE);

    let mut lp = if resume {
        resume_loop(cfg, data, out_dir)?
    } else {
        fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml())
            .map_err(|e| Error::io(out_dir.join(CONFIG_FILE), e))?;
        let trainer = match &data.family {
            Some(f) => Some(Trainer::new(tc.clone(), f.vocab.size())?),
            None => None,
        };
        let (scheduler, initial) = Scheduler::new(
            cfg.strategy,
            cfg.alpha,
            cfg.hrl_warmup,
            tc.warmup_steps,
            data.roles(),
        )?;
        let table = CompetenceTable::new(cfg.smoothing, data.ids())?;
        let mut writer = RunLogWriter::create(&log_path)?;
        writer.append(&Record::Header(header(cfg, &data)?))?;
        if cfg.strategy != Strategy::Shuffled {
            writer.append(&Record::Event(initial))?;
        }
        let snapshot = trainer.as_ref().map(Trainer::snapshot);
        Loop {
            cfg,
            data,
            seed,
            out_dir: out_dir.to_path_buf(),
            trainer,
            snapshot,
            scheduler,
            table,
            global_smoothed: None,
            best: None,
            writer,
            step: 0,
        }
    };

    while lp.step < cfg.total_steps {
        match lp.advance() {
            Ok(()) => {}
            Err(e @ Error::Divergence { .. }) => {
                lp.writer.append(&Record::Summary(Summary {
                    status: RunStatus::Diverged,
                    steps_completed: lp.step,
                    best_step: lp.best.map(|b| b.0),
                    best_selection_loss: lp.best.map(|b| b.1),
                    message: Some(e.to_string()),
                }))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
    if lp.trainer.is_some() && (cfg.checkpoint_every == 0 || lp.step % cfg.checkpoint_every != 0) {
        lp.save_resume_point()?;
    }
    lp.writer.append(&Record::Summary(Summary {
        status: RunStatus::Completed,
        steps_completed: lp.step,
        best_step: lp.best.map(|b| b.0),
        best_selection_loss: lp.best.map(|b| b.1),
        message: None,
    }))?;
    drop(lp);
    RunLog::load(&log_path)
}

fn header(cfg: &RunConfig, data: &RunData) -> Result<Header> {
    Ok(Header {
        format: RUNLOG_FORMAT.into(),
        version: RUNLOG_VERSION,
        seed: cfg.seed()?,
        warmup_steps: cfg.trainer_config()?.warmup_steps,
        tasks: data.tasks.clone(),
        config: cfg.clone(),
    })
}

/// Resuming may extend `total_steps`; every other setting must match the
/// logged run.
fn resume_loop<'a>(cfg: &'a RunConfig, data: RunData, out_dir: &Path) -> Result<Loop<'a>> {
    let state_path = out_dir.join(STATE_FILE);
    let text = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
    let state: ResumeState = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if state.version != 1 {
        return Err(Error::config(format!("unsupported resume state version {}", state.version)));
    }
    let ckpt = Checkpoint::load(&out_dir.join(LAST_CKPT))?;
    if ckpt.step != state.step {
        return Err(Error::Checkpoint(format!(
            "checkpoint is at step {} but resume state at {}",
            ckpt.step, state.step
        )));
    }
    let trainer = Trainer::restore(cfg.trainer_config()?, ckpt)?;
    let log_path = out_dir.join(LOG_FILE);
    let mut logged = RunLog::load(&log_path)?.header().config.clone();
    logged.total_steps = cfg.total_steps;
    logged.output_dir.clone_from(&cfg.output_dir);
    if logged != *cfg {
        return Err(Error::config("resume config does not match the logged run"));
    }
    if state.step > cfg.total_steps {
        return Err(Error::config(format!(
            "checkpoint at step {} is past total_steps {}",
            state.step, cfg.total_steps
        )));
    }
    let (writer, _) = RunLogWriter::truncate_after(&log_path, state.step, header(cfg, &data)?)?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml())
        .map_err(|e| Error::io(out_dir.join(CONFIG_FILE), e))?;
    Ok(Loop {
        cfg,
        data,
        seed: cfg.seed()?,
        out_dir: out_dir.to_path_buf(),
        snapshot: Some(trainer.snapshot()),
        trainer: Some(trainer),
        scheduler: state.scheduler,
        table: state.table,
        global_smoothed: state.global_smoothed,
        best: state.best,
        writer,
        step: state.step,
    })
}

impl Loop<'_> {
    fn advance(&mut self) -> Result<()> {
        let t = self.step + 1;
        let shuffled = self.cfg.strategy == Strategy::Shuffled;
        let current = self.scheduler.current_task();
        let mut rec = StepRecord {
            step: t,
            task: (!shuffled).then_some(current),
            d_raw: 0.0,
            d_smoothed: 0.0,
            d_smoothed_prev: None,
            lr: None,
            loss: None,
            grad_norm: None,
            clipped: false,
            switched: false,
            mix: None,
        };

        match (&mut self.trainer, &self.cfg.scripted) {
            (_, Some(script)) => rec.d_raw = script.values[(t - 1) as usize],
            (Some(trainer), None) => {
                let mut rng = step_rng(self.seed, t, Stream::Batch);
                let tokens = trainer.config.batch_tokens;
                let batch = if shuffled {
                    let all: Vec<&TaskData> = self
                        .data
                        .family
                        .as_ref()
                        .expect("trained runs have data")
                        .tasks
                        .iter()
                        .collect();
                    let b = make_shuffled_batch(&all, tokens, &mut rng)?;
                    rec.mix = Some(
                        self.data
                            .tasks
                            .iter()
                            .map(|info| b.tasks.iter().filter(|x| **x == info.id).count() as u32)
                            .collect(),
                    );
                    b
                } else {
                    make_batch(self.data.task(current)?, tokens, &mut rng)?
                };
                let report = trainer.train_step(&batch)?;
                let snap = trainer.snapshot();
                let prev = self.snapshot.replace(snap);
                let prev = prev.expect("snapshot kept alongside the trainer");
                rec.d_raw = measure(&prev, self.snapshot.as_ref().expect("just set"), self.cfg.metric)?;
                rec.lr = Some(report.lr);
                rec.loss = Some(report.loss);
                rec.grad_norm = Some(report.grad_norm);
                rec.clipped = report.clipped;
            }
            (None, None) => return Err(Error::InternalState("no trainer and no script".into())),
        }

        let mut event: Option<ScheduleEvent> = None;
        if shuffled {
            let w = self.cfg.smoothing;
            rec.d_smoothed_prev = self.global_smoothed;
            rec.d_smoothed = match self.global_smoothed {
                Some(prev) => (1.0 - w) * rec.d_raw + w * prev,
                None => rec.d_raw,
            };
            self.global_smoothed = Some(rec.d_smoothed);
        } else {
            rec.d_smoothed = self.table.smooth_update(current, rec.d_raw, t)?;
            rec.d_smoothed_prev = self.table.entry(current).and_then(|e| e.lagged);
            let mut rng = step_rng(self.seed, t, Stream::Schedule);
            event = self.scheduler.decide(t, &mut self.table, rec.d_smoothed, rec.d_smoothed_prev, &mut rng)?;
        }
        rec.switched = event.is_some();
        self.writer.append(&Record::Step(rec))?;
        if let Some(e) = event {
            self.writer.append(&Record::Event(e))?;
        }
        self.step = t;

        if self.trainer.is_some() && (t.is_multiple_of(self.cfg.eval_every) || t == self.cfg.total_steps) {
            self.evaluate(t)?;
        }
        if self.trainer.is_some() && self.cfg.checkpoint_every > 0 && t.is_multiple_of(self.cfg.checkpoint_every) {
            self.save_resume_point()?;
        }
        Ok(())
    }

    fn evaluate(&mut self, t: u64) -> Result<()> {
        let trainer = self.trainer.as_ref().expect("evaluation needs a model");
        let mut tasks = Vec::new();
        let mut lrl = Vec::new();
        for info in &self.data.tasks {
            let stats = trainer.model.evaluate(&self.data.task(info.id)?.dev)?;
            if info.role == Role::Lrl {
                lrl.push(stats.loss);
            }
            tasks.push(DevTask {
                task: info.id,
                loss: stats.loss,
                accuracy: stats.accuracy(),
            });
        }
        let n = tasks.len() as f64;
        let mean_loss = tasks.iter().map(|d| d.loss).sum::<f64>() / n;
        let mean_accuracy = tasks.iter().map(|d| d.accuracy).sum::<f64>() / n;
        let selection_loss = if lrl.is_empty() {
            mean_loss
        } else {
            lrl.iter().sum::<f64>() / lrl.len() as f64
        };
        let best = self.best.is_none_or(|(_, b)| selection_loss < b);
        if best {
            self.best = Some((t, selection_loss));
            Checkpoint::from_trainer(trainer, false).save(&self.out_dir.join(BEST_CKPT))?;
        }
        self.writer.append(&Record::Dev(DevRecord {
            step: t,
            tasks,
            mean_loss,
            mean_accuracy,
            selection_loss,
            best,
        }))
    }

    fn save_resume_point(&self) -> Result<()> {
        let trainer = self.trainer.as_ref().expect("checkpoints need a model");
        Checkpoint::from_trainer(trainer, true).save(&self.out_dir.join(LAST_CKPT))?;
        let state = ResumeState {
            version: 1,
            step: self.step,
            scheduler: self.scheduler.clone(),
            table: self.table.clone(),
            global_smoothed: self.global_smoothed,
            best: self.best,
        };
        let path = self.out_dir.join(STATE_FILE);
        let text = serde_json::to_string_pretty(&state).expect("state serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

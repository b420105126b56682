#![allow(dead_code)]

use std::path::Path;

use selfpace::harness::config::{RunConfig, ScriptedMetric};
use selfpace::harness::run::cmd_run;
use selfpace::harness::runlog::RunLog;
use selfpace::tasks::PairSpec;
use selfpace::Strategy;

/// Two-task scripted configuration: no model, raw variation taken from `values`.
pub fn scripted(values: Vec<f64>, alpha: f64, w: f64) -> RunConfig {
    let mut cfg = RunConfig::desk_default(Strategy::SelfPaced);
    cfg.seed = Some(17);
    cfg.alpha = alpha;
    cfg.smoothing = w;
    cfg.total_steps = values.len() as u64;
    cfg.scripted = Some(ScriptedMetric { values });
    cfg
}

pub fn with_pairs(mut cfg: RunConfig, n: usize) -> RunConfig {
    cfg.data.pairs = (0..n)
        .map(|_| PairSpec {
            hrl_size: 100,
            lrl_size: 10,
            relatedness: 0.5,
        })
        .collect();
    cfg
}

pub fn run_in(cfg: &RunConfig, dir: &Path) -> RunLog {
    cmd_run(cfg, dir, false).expect("run completes")
}

pub fn run_scripted(cfg: &RunConfig) -> RunLog {
    let dir = tempfile::tempdir().unwrap();
    run_in(cfg, dir.path())
}

/// Task trained at each step, as letters `A`, `B`, ... in task order.
pub fn task_letters(log: &RunLog) -> String {
    log.steps()
        .map(|s| (b'A' + s.task.expect("monolingual step").0 as u8) as char)
        .collect()
}

/// Steps after which a switch was decided.
pub fn switch_steps(log: &RunLog) -> Vec<u64> {
    log.events().filter(|e| e.step > 0).map(|e| e.step).collect()
}

/// Small trained run configuration for end-to-end tests that need a model.
pub fn tiny_trained(strategy: Strategy, steps: u64) -> RunConfig {
    let mut cfg = RunConfig::desk_default(strategy);
    cfg.seed = Some(5);
    cfg.total_steps = steps;
    cfg.eval_every = 10;
    cfg.data.pairs = vec![PairSpec {
        hrl_size: 200,
        lrl_size: 40,
        relatedness: 0.8,
    }];
    cfg.data.options.dev_size = 20;
    cfg.data.options.test_size = 20;
    cfg.trainer.d_model = Some(16);
    cfg.trainer.n_heads = Some(2);
    cfg.trainer.n_layers = Some(1);
    cfg.trainer.ffn_dim = Some(32);
    cfg.trainer.batch_tokens = Some(128);
    cfg.trainer.warmup_steps = Some(8);
    cfg
}

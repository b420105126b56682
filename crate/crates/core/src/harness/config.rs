//! Run configuration (TOML, `version = 1`). Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::scheduler::Strategy;
use crate::tasks::{FamilyOptions, PairSpec};
use crate::trainer::{AdamConfig, Profile, TrainerConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub strategy: Strategy,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Exponential smoothing weight `w`.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default)]
    pub hrl_warmup: bool,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    pub total_steps: u64,
    /// Required before a run starts; usually supplied with `--seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// Save a resumable checkpoint every this many steps; 0 saves only at the end.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub metric: MetricKind,
    pub data: DataConfig,
    #[serde(default)]
    pub trainer: TrainerOverrides,
    #[serde(default)]
    pub compare: CompareConfig,
    /// Replaces measured weight variation with a fixed sequence; no model is trained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted: Option<ScriptedMetric>,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_smoothing() -> f64 {
    0.995
}

fn default_profile() -> Profile {
    Profile::Default
}

fn default_eval_every() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
    /// Load an exported family instead of generating one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_dir: Option<PathBuf>,
    #[serde(default)]
    pub options: FamilyOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    /// Non-positive disables clipping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_smoothing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub sample_every: u64,
    pub window: usize,
    /// Index of the task trained by `compare-metrics`.
    pub task: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            sample_every: 10,
            window: 100,
            task: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedMetric {
    /// Raw variation for steps `1..=values.len()`.
    pub values: Vec<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::config(format!("line {line}: {}", e.message()))
        })?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::config("a seed is required (pass --seed)"))
    }

    pub fn data_seed(&self) -> Result<u64> {
        match self.data.seed {
            Some(s) => Ok(s),
            None => self.seed(),
        }
    }

    /// Profile defaults with overrides applied and the run seed set.
    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        let mut t = TrainerConfig::profile(self.profile);
        let o = &self.trainer;
        if let Some(v) = o.d_model {
            t.d_model = v;
        }
        if let Some(v) = o.n_heads {
            t.n_heads = v;
        }
        if let Some(v) = o.n_layers {
            t.n_layers = v;
        }
        if let Some(v) = o.ffn_dim {
            t.ffn_dim = v;
        }
        if let Some(v) = o.warmup_steps {
            t.warmup_steps = v;
        }
        if let Some(v) = o.lr_scale {
            t.lr_scale = v;
        }
        if let Some(v) = o.dropout {
            t.dropout = v;
        }
        if let Some(v) = o.grad_clip_norm {
            t.grad_clip_norm = (v > 0.0).then_some(v);
        }
        if let Some(v) = o.batch_tokens {
            t.batch_tokens = v;
        }
        if let Some(v) = o.label_smoothing {
            t.label_smoothing = v;
        }
        if let Some(v) = o.adam {
            t.adam = v;
        }
        t.seed = self.seed()?;
        t.validate()?;
        Ok(t)
    }

    /// Checks everything that can be checked without building data.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if self.total_steps == 0 {
            return Err(Error::config("total_steps must be >= 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::config(format!(
                "smoothing must be in [0, 1), got {}",
                self.smoothing
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be >= 1"));
        }
        if self.compare.sample_every == 0 || self.compare.window == 0 {
            return Err(Error::config("compare.sample_every and compare.window must be >= 1"));
        }
        if self.data.pairs.is_empty() && self.data.corpus_dir.is_none() {
            return Err(Error::config("data needs `pairs` or `corpus_dir`"));
        }
        if let Some(s) = &self.scripted {
            if (s.values.len() as u64) < self.total_steps {
                return Err(Error::config(format!(
                    "scripted metric has {} values for {} steps",
                    s.values.len(),
                    self.total_steps
                )));
            }
            if s.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::config("scripted values must be finite and >= 0"));
            }
            if self.data.pairs.is_empty() {
                return Err(Error::config("scripted runs take task roles from `data.pairs`"));
            }
        }
        self.trainer_config()?;
        Ok(())
    }

    /// Desk-scale 2-to-1 setup: one HRL/LRL pair of 5000/500 examples.
    pub fn desk_default(strategy: Strategy) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            strategy,
            alpha: default_alpha(),
            smoothing: default_smoothing(),
            hrl_warmup: false,
            profile: Profile::Default,
            total_steps: 3000,
            seed: None,
            eval_every: default_eval_every(),
            checkpoint_every: 0,
            metric: MetricKind::default(),
            data: DataConfig {
                seed: None,
                pairs: vec![PairSpec {
                    hrl_size: 5000,
                    lrl_size: 500,
                    relatedness: 0.8,
                }],
                corpus_dir: None,
                options: FamilyOptions::default(),
            },
            trainer: TrainerOverrides::default(),
            compare: CompareConfig::default(),
            scripted: None,
            output_dir: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
version = 1
strategy = "self-paced"
alpha = 1.1
smoothing = 0.999
total_steps = 50

[metric]
distance = "l2"
scope = "last-layer"

[data]
pairs = [{ hrl_size = 100, lrl_size = 10, relatedness = 0.5 }]

[trainer]
d_model = 16
grad_clip_norm = 0
"#;

    #[test]
    fn parses_and_applies_overrides() {
        let mut cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.strategy, Strategy::SelfPaced);
        assert_eq!(cfg.alpha, 1.1);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "seed is mandatory");
        cfg.seed = Some(3);
        cfg.validate().unwrap();
        let t = cfg.trainer_config().unwrap();
        assert_eq!(t.d_model, 16);
        assert_eq!(t.grad_clip_norm, None);
        assert_eq!(t.seed, 3);
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = SAMPLE.replace("alpha = 1.1", "alpha = 1.1\nbogus = 2");
        match RunConfig::from_toml(&text) {
            Err(Error::Config(msg)) => assert!(msg.starts_with("line 5:"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let text = SAMPLE.replace("d_model = 16", "d_modle = 16");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = RunConfig::from_toml(SAMPLE).unwrap();
        cfg.seed = Some(1);
        cfg.smoothing = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::from_toml(SAMPLE).unwrap();
        cfg.seed = Some(1);
        cfg.scripted = Some(ScriptedMetric { values: vec![1.0; 3] });
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml(&SAMPLE.replace("version = 1", "version = 2")).is_err());
    }
}

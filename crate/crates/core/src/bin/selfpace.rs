use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::value::{Error as DeError, StrDeserializer};
use serde::de::{DeserializeOwned, IntoDeserializer};

use selfpace::harness::compare::cmd_compare_metrics;
use selfpace::harness::config::RunConfig;
use selfpace::harness::report::cmd_report;
use selfpace::harness::run::cmd_run;
use selfpace::harness::sweep::{cmd_sweep, SweepParam};
use selfpace::metrics::{Distance, Scope};
use selfpace::trainer::Profile;
use selfpace::{Error, Result, Strategy};

#[derive(Parser)]
#[command(name = "selfpace", version, about = "Self-paced multitask scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with a scheduling strategy and write a run log.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue from the last checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train one task and record all six variation metrics.
    CompareMetrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sample_every: Option<u64>,
        #[arg(long)]
        window: Option<usize>,
        /// Task index in the family.
        #[arg(long)]
        task: Option<usize>,
    },
    /// One run per value of `w` or `alpha`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_param)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        /// Runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Switch counts, task shares and the event timeline of a run log.
    Report {
        /// Run log (runlog.jsonl).
        #[arg(long)]
        log: PathBuf,
        /// Directory for the CSV tables; defaults to the log's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        bucket: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; the built-in 2-task desk setup when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<Strategy>)]
    strategy: Option<Strategy>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Smoothing weight.
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    hrl_warmup: Option<bool>,
    #[arg(long, value_parser = parse_enum::<Profile>)]
    profile: Option<Profile>,
    #[arg(long, value_parser = parse_enum::<Distance>)]
    distance: Option<Distance>,
    #[arg(long, value_parser = parse_enum::<Scope>)]
    scope: Option<Scope>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    let de: StrDeserializer<'_, DeError> = s.into_deserializer();
    T::deserialize(de).map_err(|e| e.to_string())
}

fn parse_param(s: &str) -> std::result::Result<SweepParam, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    fn resolve(&self, default_strategy: Strategy) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::desk_default(default_strategy),
        };
        cfg.seed = Some(self.seed);
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.w {
            cfg.smoothing = v;
        }
        if let Some(v) = self.steps {
            cfg.total_steps = v;
        }
        if let Some(v) = self.hrl_warmup {
            cfg.hrl_warmup = v;
        }
        if let Some(v) = self.profile {
            cfg.profile = v;
        }
        if let Some(v) = self.distance {
            cfg.metric.distance = v;
        }
        if let Some(v) = self.scope {
            cfg.metric.scope = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = self.checkpoint_every {
            cfg.checkpoint_every = v;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        let out = cfg
            .output_dir
            .clone()
            .ok_or_else(|| Error::Config("an output directory is required (pass --out)".into()))?;
        cfg.validate()?;
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, resume } => {
            let (cfg, out) = common.resolve(Strategy::SelfPaced)?;
            let log = cmd_run(&cfg, &out, resume)?;
            let steps = log.steps().count();
            let switches = log.events().count().saturating_sub(1);
            println!("{steps} steps, {switches} task switches; log in {}", out.display());
        }
        Command::CompareMetrics {
            common,
            sample_every,
            window,
            task,
        } => {
            let (mut cfg, out) = common.resolve(Strategy::SelfPaced)?;
            if let Some(v) = sample_every {
                cfg.compare.sample_every = v;
            }
            if let Some(v) = window {
                cfg.compare.window = v;
            }
            if let Some(v) = task {
                cfg.compare.task = v;
            }
            let table = cmd_compare_metrics(&cfg, &out)?;
            println!("{:<14} {:>10}", "metric", "peak step");
            for kind in &table.kinds {
                let peak = table.peak_step(*kind).map_or("-".into(), |s| s.to_string());
                println!("{:<14} {:>10}", kind.label(), peak);
            }
        }
        Command::Sweep {
            common,
            param,
            values,
            jobs,
        } => {
            let (cfg, out) = common.resolve(Strategy::SelfPaced)?;
            let rows = cmd_sweep(&cfg, param, &values, &out, jobs)?;
            println!("{:>8} {:>10} {:>14} {:>10} {:>10}", param.as_str(), "status", "steps_to_best", "switches", "lrl_share");
            for r in rows {
                let status = format!("{:?}", r.status).to_lowercase();
                let best = r.steps_to_best.map_or("-".into(), |s| s.to_string());
                println!(
                    "{:>8} {:>10} {:>14} {:>10} {:>10.4}",
                    r.value, status, best, r.switches, r.lrl_share_post_warmup
                );
            }
        }
        Command::Report { log, out, bucket } => {
            let out = out.unwrap_or_else(|| log.parent().unwrap_or(Path::new(".")).to_path_buf());
            let report = cmd_report(&log, &out, bucket)?;
            print!("{}", report.summary_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

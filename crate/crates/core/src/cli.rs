//! Command-line surface: gen -> demos -> train -> eval, plus ablate.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::articulation::{build_instance, GenConfig, ObjectInstance};
use crate::category::Category;
use crate::diffusion::{DiffusionPolicy, PolicyConfig};
use crate::expert::{collect_dataset, read_dataset, write_dataset, ExpertConfig};
use crate::harness::{
    ablate_trials, evaluate, train_policy, write_ablation_csv, write_loss_csv, write_report_csv,
    AblationConfig, Controller, DiffusionController, EvalConfig, ExpertController,
    RandomController,
};
use crate::rng::instance_seed;

#[derive(Debug, Parser)]
#[command(
    name = "artilab",
    version,
    about = "Articulated objects with hidden mechanisms, adaptive demos and diffusion policies"
)]
pub struct Cli {
    /// Worker threads (1 gives the reference single-threaded run).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate object instances.
    Gen(GenArgs),
    /// Collect expert demonstrations on generated objects.
    Demos(DemosArgs),
    /// Train a diffusion policy on a demonstration file.
    Train(TrainArgs),
    /// Evaluate a policy and write a success report.
    Eval(EvalArgs),
    /// Repeated-trials ablation: demos, training and evaluation per trials value.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub category: String,
    /// Instances to generate (defaults to the category's dataset size).
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemosArgs {
    #[arg(long)]
    pub objects: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub per_object: usize,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyKind {
    Model,
    Expert,
    Random,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model (required for `--policy model`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyKind::Model)]
    pub policy: PolicyKind,
    /// Category name or `all`.
    #[arg(long)]
    pub category: String,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Expert trials when `--policy expert`.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub category: String,
    /// Comma-separated trials values.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    pub trials: Vec<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Contents of `--config` files. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub policy: PolicyConfig,
    pub gen: GenConfig,
    pub expert: ExpertConfig,
    pub eval: EvalConfig,
    pub ablation: AblationSizes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSizes {
    pub instances: usize,
    pub per_object: usize,
    pub seed: u64,
}

impl Default for AblationSizes {
    fn default() -> Self {
        Self {
            instances: 20,
            per_object: 20,
            seed: 0,
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn categories(arg: &str) -> anyhow::Result<Vec<Category>> {
    if arg.eq_ignore_ascii_case("all") {
        return Ok(Category::ALL.to_vec());
    }
    arg.split(',')
        .map(|s| s.parse::<Category>().map_err(anyhow::Error::from))
        .collect()
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Gen(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let mut out: Vec<ObjectInstance> = Vec::new();
            for c in categories(&a.category)? {
                let n = a.count.unwrap_or(c.dataset_count());
                for i in 0..n {
                    out.push(build_instance(
                        c,
                        instance_seed(a.seed, c.index(), i, false),
                        &cfg.gen,
                    )?);
                }
            }
            std::fs::write(&a.out, serde_json::to_string_pretty(&out)?)?;
            eprintln!("wrote {} instances to {}", out.len(), a.out.display());
        }
        Command::Demos(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let text = std::fs::read_to_string(&a.objects)
                .with_context(|| format!("reading {}", a.objects.display()))?;
            let insts: Vec<ObjectInstance> = serde_json::from_str(&text)?;
            if insts.is_empty() {
                bail!("no objects in {}", a.objects.display());
            }
            let ec = ExpertConfig {
                trials: a.trials,
                ..cfg.expert
            };
            let ds = collect_dataset(&insts, a.per_object, &ec, &cfg.gen.priors, a.seed)?;
            write_dataset(&a.out, &ds)?;
            eprintln!(
                "wrote {} demos ({} keyframes) to {}",
                ds.demos.len(),
                ds.keyframe_count(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let ds = read_dataset(&a.demos)?;
            let (policy, losses) = train_policy(&ds, &cfg.policy, &cfg.gen, |e, l| {
                if e % 50 == 0 {
                    eprintln!("epoch {e}: loss {l:.5}");
                }
            })?;
            policy.save(&a.out)?;
            if let Some(log) = &a.log {
                write_loss_csv(log, &losses)?;
            }
            eprintln!("saved model to {}", a.out.display());
        }
        Command::Eval(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let eval = EvalConfig {
                episodes: a.episodes,
                seeds: a.seeds,
                seed: a.seed,
                ..cfg.eval
            };
            let cats = categories(&a.category)?;
            let ctl: Box<dyn Controller> = match a.policy {
                PolicyKind::Model => {
                    let path = a
                        .model
                        .as_deref()
                        .context("--model is required for --policy model")?;
                    let policy = DiffusionPolicy::load(path)?;
                    let eval_ta = policy.cfg.t_a;
                    let ctl = DiffusionController { policy };
                    let eval = EvalConfig {
                        t_a: eval_ta,
                        ..eval.clone()
                    };
                    return finish_eval(&ctl, &cats, &eval, &cfg.gen, &a.out);
                }
                PolicyKind::Expert => Box::new(ExpertController {
                    cfg: ExpertConfig {
                        trials: a.trials,
                        ..cfg.expert
                    },
                }),
                PolicyKind::Random => Box::new(RandomController {
                    t_p: cfg.policy.t_p,
                }),
            };
            finish_eval(ctl.as_ref(), &cats, &eval, &cfg.gen, &a.out)?;
        }
        Command::Ablate(a) => {
            let cfg = load_config(a.config.as_deref())?;
            let category: Category = a.category.parse()?;
            let ab = AblationConfig {
                instances: cfg.ablation.instances,
                per_object: cfg.ablation.per_object,
                seed: cfg.ablation.seed,
                policy: cfg.policy,
                expert: cfg.expert,
                eval: cfg.eval,
                gen: cfg.gen,
            };
            let rows = ablate_trials(category, &a.trials, &ab)?;
            write_ablation_csv(&a.out, &rows)?;
            for r in &rows {
                eprintln!("trials {}: success {:.3}", r.trials, r.report.success_rate);
            }
        }
    }
    Ok(())
}

fn finish_eval(
    ctl: &dyn Controller,
    cats: &[Category],
    eval: &EvalConfig,
    gen: &GenConfig,
    out: &Path,
) -> anyhow::Result<()> {
    let report = evaluate(ctl, cats, eval, gen)?;
    write_report_csv(out, &report)?;
    for r in &report.rows {
        eprintln!(
            "{}: {:.3} +- {:.3} over {} episodes",
            r.category, r.success_rate, r.std, r.episodes
        );
    }
    Ok(())
}

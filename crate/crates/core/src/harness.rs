//! Closed-loop rollouts, success-rate evaluation and the repeated-trials
//! ablation.

use std::path::Path;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::articulation::{build_instance, home_pose, GenConfig, ObjectInstance};
use crate::category::Category;
use crate::diffusion::{
    build_condition, history, Batch, DiffusionPolicy, PolicyConfig, ACTION_DIM,
};
use crate::error::{Error, Result};
use crate::expert::{
    collect_dataset, expert_next_goal, DemoDataset, ExpertConfig, Feedback, MacroGoal, VisibleState,
};
use crate::geometry::{axis_angle, pose_to_action, Pose};
use crate::perception::{fps, sample_points, NormStats, ObsLayout};
use crate::rng::{self, instance_seed, tag, Stream, EVAL_SEED_BASE};
use crate::scene::{Execution, Scene};

/// Prediction windows per episode before it counts as a failure.
pub const WINDOW_BUDGET: usize = 40;

pub fn home_action() -> [f64; 10] {
    pose_to_action(&home_pose(), true)
}

/// Everything a controller may consult when proposing the next window.
pub struct StepContext<'a> {
    pub scene: &'a Scene,
    /// Observations before each executed action, then the current one.
    pub obs_hist: &'a [Vec<f64>],
    /// Executed actions.
    pub act_hist: &'a [[f64; 10]],
    pub last: Option<&'a Execution>,
}

pub trait EpisodeController {
    fn window(&mut self, ctx: &StepContext, rng: &mut Stream) -> Result<Vec<[f64; 10]>>;
}

pub trait Controller: Sync {
    fn begin<'a>(&'a self, instance: &ObjectInstance) -> Box<dyn EpisodeController + 'a>;
}

/// Learned policy; point clouds (when configured) are regenerated from the
/// instance geometry at the current joint values.
pub struct DiffusionController {
    pub policy: DiffusionPolicy,
}

struct DiffusionEpisode<'a> {
    ctl: &'a DiffusionController,
    instance: ObjectInstance,
}

impl EpisodeController for DiffusionEpisode<'_> {
    fn window(&mut self, ctx: &StepContext, rng: &mut Stream) -> Result<Vec<[f64; 10]>> {
        let p = &self.ctl.policy;
        let t = ctx.obs_hist.len() - 1;
        let obs = history(ctx.obs_hist, t, p.cfg.t_o, &ctx.obs_hist[0]);
        let acts = action_history(
            ctx.act_hist,
            ctx.act_hist.len(),
            p.cfg.t_o,
            action_pad(&p.act_stats),
        );
        let cloud = match &p.cfg.point_cloud {
            Some(pc) => {
                let mut inst = self.instance.clone();
                for (j, v) in ctx.scene.instance.joint_values().into_iter().enumerate() {
                    inst.joints[j].value = v;
                }
                Some(cloud_of(&inst, pc.raw_points, pc.points, rng.random())?)
            }
            None => None,
        };
        p.sample(&obs, &acts, cloud.as_ref(), rng)
    }
}

impl Controller for DiffusionController {
    fn begin<'a>(&'a self, instance: &ObjectInstance) -> Box<dyn EpisodeController + 'a> {
        Box::new(DiffusionEpisode {
            ctl: self,
            instance: instance.clone(),
        })
    }
}

/// The rule-based expert driven through the same executor (one macro per
/// window).
pub struct ExpertController {
    pub cfg: ExpertConfig,
}

struct ExpertEpisode<'a> {
    cfg: &'a ExpertConfig,
    hidden: crate::mechanisms::MechanismState,
    history: Vec<Feedback>,
    pending: Option<MacroGoal>,
}

impl EpisodeController for ExpertEpisode<'_> {
    fn window(&mut self, ctx: &StepContext, rng: &mut Stream) -> Result<Vec<[f64; 10]>> {
        if let (Some(goal), Some(e)) = (self.pending.take(), ctx.last) {
            self.history.push(Feedback {
                goal,
                blocked: e.blocked.clone(),
                applied: e.applied.clone(),
            });
        }
        let vis = VisibleState::new(&ctx.scene.instance, &ctx.scene.grasp);
        let hidden = (self.cfg.trials == 0).then_some(&self.hidden);
        let goal = expert_next_goal(&vis, &self.history, self.cfg, hidden, rng)?;
        let a = goal.action();
        self.pending = Some(goal);
        Ok(vec![a])
    }
}

impl Controller for ExpertController {
    fn begin<'a>(&'a self, instance: &ObjectInstance) -> Box<dyn EpisodeController + 'a> {
        Box::new(ExpertEpisode {
            cfg: &self.cfg,
            hidden: instance.mechanism,
            history: Vec::new(),
            pending: None,
        })
    }
}

/// Negative control: half the time a closed-gripper command at a random
/// part's handle, otherwise a random displacement of the current pose.
pub struct RandomController {
    pub t_p: usize,
}

struct RandomEpisode {
    t_p: usize,
}

impl EpisodeController for RandomEpisode {
    fn window(&mut self, ctx: &StepContext, rng: &mut Stream) -> Result<Vec<[f64; 10]>> {
        let inst = &ctx.scene.instance;
        let mut current = ctx.scene.grasp.grasp_pose;
        let mut out = Vec::with_capacity(self.t_p);
        for _ in 0..self.t_p {
            let a = if rng.random_bool(0.5) {
                let p = rng.random_range(0..inst.parts.len());
                pose_to_action(&inst.handle_pose(p)?, false)
            } else {
                let d = Vector3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                );
                let axis = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let rot = if axis.norm() > 1e-6 {
                    axis_angle(&axis, rng.random_range(-1.0..1.0))
                } else {
                    nalgebra::Rotation3::identity()
                };
                let target = Pose::new(current.translation + d, rot * current.rotation);
                current = target;
                pose_to_action(&target, rng.random_bool(0.2))
            };
            out.push(a);
        }
        Ok(out)
    }
}

impl Controller for RandomController {
    fn begin<'a>(&'a self, _instance: &ObjectInstance) -> Box<dyn EpisodeController + 'a> {
        Box::new(RandomEpisode { t_p: self.t_p })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub obs: Vec<f64>,
    pub action: [f64; 10],
    pub achieved: Pose,
    pub blocked: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub category: Category,
    pub seed: u64,
    pub success: bool,
    /// Executed actions (macro steps).
    pub steps: usize,
    pub windows: usize,
    /// Whether the initial hidden state defeats the naive first attempt.
    pub unfavorable: bool,
    pub trace: Vec<TraceStep>,
    pub error: Option<String>,
}

/// The `len` executed actions preceding step `t`, padded at the front with
/// `pad`. Policies pad with the dataset action mean: any fixed action that
/// is not in the data would normalize to ~1e6 on dimensions that never vary.
pub fn action_pad(stats: &NormStats) -> [f64; 10] {
    let mut a = [0.0; 10];
    for (x, m) in a.iter_mut().zip(&stats.mean) {
        *x = *m;
    }
    a
}

pub fn action_history(acts: &[[f64; 10]], t: usize, len: usize, pad: [f64; 10]) -> Vec<[f64; 10]> {
    (0..len)
        .map(|i| {
            let back = len - i;
            if back > t {
                pad
            } else {
                acts[t - back]
            }
        })
        .collect()
}

/// Execute `t_a` actions of each proposed window, re-observe, repeat; stop on
/// success or after `budget` windows.
pub fn rollout_policy(
    ctl: &dyn Controller,
    instance: &ObjectInstance,
    t_a: usize,
    budget: usize,
    rng: &mut Stream,
) -> Result<EpisodeResult> {
    let mut scene = Scene::new(instance.clone());
    let mut ep = ctl.begin(instance);
    let mut executed_obs: Vec<Vec<f64>> = Vec::new();
    let mut acts: Vec<[f64; 10]> = Vec::new();
    let mut trace = Vec::new();
    let mut last: Option<Execution> = None;
    let mut windows = 0;
    let mut error = None;
    'outer: while windows < budget && !scene.instance.is_success() {
        let mut obs_hist = executed_obs.clone();
        obs_hist.push(scene.observe());
        let ctx = StepContext {
            scene: &scene,
            obs_hist: &obs_hist,
            act_hist: &acts,
            last: last.as_ref(),
        };
        let window = match ep.window(&ctx, rng) {
            Ok(w) => w,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        windows += 1;
        for a in window.into_iter().take(t_a) {
            if a.iter().any(|x| !x.is_finite()) {
                error = Some("non-finite action".into());
                break 'outer;
            }
            let obs = scene.observe();
            let exec = match scene.execute_action(&a) {
                Ok(e) => e,
                Err(e) => {
                    error = Some(e.to_string());
                    break 'outer;
                }
            };
            trace.push(TraceStep {
                obs: obs.clone(),
                action: a,
                achieved: exec.achieved,
                blocked: exec.blocked.clone(),
            });
            executed_obs.push(obs);
            acts.push(a);
            last = Some(exec);
            if scene.instance.is_success() {
                break;
            }
        }
    }
    Ok(EpisodeResult {
        category: instance.category,
        seed: instance.seed,
        success: error.is_none() && scene.instance.is_success(),
        steps: acts.len(),
        windows,
        unfavorable: instance.mechanism.unfavorable(),
        trace,
        error,
    })
}

/// Surface points of `instance` at its current joint values, FPS-downsampled.
pub fn cloud_of(
    instance: &ObjectInstance,
    raw: usize,
    keep: usize,
    seed: u64,
) -> Result<Vec<[f64; 3]>> {
    let pc = sample_points(instance, raw, seed)?;
    let idx = fps(&pc.points, keep, 0)?;
    Ok(idx
        .iter()
        .map(|&i| [pc.points[i].x, pc.points[i].y, pc.points[i].z])
        .collect())
}

/// Training rows: for every keyframe `t` of every demo, the clean window
/// `a_t..a_{t+t_p-1}` (edge padded), and the condition built from
/// `o_{t-t_o+1}..o_t` (padded with `o_0`) and `a_{t-t_o}..a_{t-1}` (padded
/// with the action mean).
pub fn training_batch(ds: &DemoDataset, cfg: &PolicyConfig, gen: &GenConfig) -> Result<Batch> {
    let rows = ds.keyframe_count();
    if rows == 0 {
        return Err(Error::Empty("dataset"));
    }
    let obs_dim = ds.obs_stats.dim();
    let mut a0 = Array2::zeros((rows, cfg.window_dim()));
    let mut cond = Array2::zeros((rows, cfg.cond_dim(obs_dim)));
    let mut clouds = cfg.point_cloud.as_ref().map(|_| Vec::with_capacity(rows));
    let layout = ObsLayout::default();
    let mut r = 0;
    for d in &ds.demos {
        let obs: Vec<Vec<f64>> = d.keyframes.iter().map(|k| k.obs.clone()).collect();
        let acts: Vec<[f64; 10]> = d.keyframes.iter().map(|k| k.act).collect();
        let base = match &cfg.point_cloud {
            Some(_) => Some(build_instance(d.category, d.seed, gen)?),
            None => None,
        };
        for t in 0..obs.len() {
            let oh = history(&obs, t, cfg.t_o, &obs[0]);
            let ah = action_history(&acts, t, cfg.t_o, action_pad(&ds.act_stats));
            let c = build_condition(cfg, &oh, &ah, &ds.obs_stats, &ds.act_stats)?;
            cond.row_mut(r).assign(&ndarray::Array1::from(c));
            for i in 0..cfg.t_p {
                let a = acts[(t + i).min(acts.len() - 1)];
                let z = crate::perception::normalize(&a, &ds.act_stats)?;
                for j in 0..ACTION_DIM {
                    a0[[r, i * ACTION_DIM + j]] = z[j];
                }
            }
            if let (Some(pc), Some(base), Some(out)) = (&cfg.point_cloud, &base, clouds.as_mut()) {
                let mut inst = base.clone();
                for j in 0..inst.joints.len().min(layout.j_max) {
                    inst.joints[j].value = obs[t][layout.joints_offset() + j];
                }
                out.push(cloud_of(
                    &inst,
                    pc.raw_points,
                    pc.points,
                    rng::mix(&[d.seed, d.demo_index, t as u64]),
                )?);
            }
            r += 1;
        }
    }
    Ok(Batch { a0, cond, clouds })
}

/// Fit a policy to `ds`; `on_epoch` receives `(epoch, mean loss)`.
pub fn train_policy(
    ds: &DemoDataset,
    cfg: &PolicyConfig,
    gen: &GenConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(DiffusionPolicy, Vec<f64>)> {
    let mut policy = DiffusionPolicy::init(cfg, ds.obs_stats.clone(), ds.act_stats.clone())?;
    policy.extra =
        serde_json::json!({ "gen": gen, "trials": ds.trials, "per_object": ds.per_object });
    let batch = training_batch(ds, cfg, gen)?;
    let losses = policy.train(&batch, on_epoch)?;
    Ok((policy, losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Seed groups; mean and std of the success rate are taken across them.
    pub seeds: usize,
    pub seed: u64,
    pub budget: usize,
    pub t_a: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            seeds: 5,
            seed: 0,
            budget: WINDOW_BUDGET,
            t_a: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: Category,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub std: f64,
    pub unfavorable_episodes: usize,
    pub unfavorable_successes: usize,
}

impl CategoryReport {
    pub fn unfavorable_rate(&self) -> f64 {
        if self.unfavorable_episodes == 0 {
            0.0
        } else {
            self.unfavorable_successes as f64 / self.unfavorable_episodes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub rows: Vec<CategoryReport>,
    pub config: EvalConfig,
}

/// Evaluation instance `e` of seed group `g`: seeds come from the disjoint
/// evaluation range, so hidden states are never shared with training.
pub fn eval_instance(
    category: Category,
    cfg: &EvalConfig,
    group: usize,
    e: usize,
    gen: &GenConfig,
) -> Result<ObjectInstance> {
    let seed = instance_seed(cfg.seed, category.index(), group * cfg.episodes + e, true);
    debug_assert!(seed >= EVAL_SEED_BASE);
    build_instance(category, seed, gen)
}

pub fn training_instances(
    category: Category,
    count: usize,
    seed: u64,
    gen: &GenConfig,
) -> Result<Vec<ObjectInstance>> {
    (0..count)
        .map(|i| {
            build_instance(
                category,
                instance_seed(seed, category.index(), i, false),
                gen,
            )
        })
        .collect()
}

pub fn run_episodes(
    ctl: &dyn Controller,
    category: Category,
    cfg: &EvalConfig,
    gen: &GenConfig,
) -> Result<Vec<EpisodeResult>> {
    let jobs: Vec<(usize, usize)> = (0..cfg.seeds)
        .flat_map(|g| (0..cfg.episodes).map(move |e| (g, e)))
        .collect();
    jobs.par_iter()
        .map(|&(g, e)| {
            let inst = eval_instance(category, cfg, g, e, gen)?;
            let mut s = rng::stream(&[tag::EPISODE, cfg.seed, category.index() as u64, inst.seed]);
            rollout_policy(ctl, &inst, cfg.t_a, cfg.budget, &mut s)
        })
        .collect()
}

fn summarize(category: Category, cfg: &EvalConfig, results: &[EpisodeResult]) -> CategoryReport {
    let rates: Vec<f64> = results
        .chunks(cfg.episodes)
        .map(|c| c.iter().filter(|r| r.success).count() as f64 / c.len() as f64)
        .collect();
    let successes = results.iter().filter(|r| r.success).count();
    let mean = successes as f64 / results.len() as f64;
    let std = if rates.len() >= 2 {
        let m = rates.iter().sum::<f64>() / rates.len() as f64;
        (rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (rates.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let unfav: Vec<&EpisodeResult> = results.iter().filter(|r| r.unfavorable).collect();
    CategoryReport {
        category,
        episodes: results.len(),
        successes,
        success_rate: mean,
        std,
        unfavorable_episodes: unfav.len(),
        unfavorable_successes: unfav.iter().filter(|r| r.success).count(),
    }
}

pub fn evaluate(
    ctl: &dyn Controller,
    categories: &[Category],
    cfg: &EvalConfig,
    gen: &GenConfig,
) -> Result<SuccessReport> {
    if cfg.episodes == 0 || cfg.seeds == 0 {
        return Err(Error::InvalidConfig(
            "episodes and seeds must be at least 1".into(),
        ));
    }
    let mut rows = Vec::with_capacity(categories.len());
    for &c in categories {
        let results = run_episodes(ctl, c, cfg, gen)?;
        rows.push(summarize(c, cfg, &results));
    }
    Ok(SuccessReport {
        rows,
        config: cfg.clone(),
    })
}

pub fn write_report_csv(path: &Path, report: &SuccessReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "category",
        "episodes",
        "successes",
        "success_rate",
        "std",
        "unfavorable_episodes",
        "unfavorable_successes",
        "unfavorable_rate",
    ])
    .map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            r.category.name().to_string(),
            r.episodes.to_string(),
            r.successes.to_string(),
            format!("{:.6}", r.success_rate),
            format!("{:.6}", r.std),
            r.unfavorable_episodes.to_string(),
            r.unfavorable_successes.to_string(),
            format!("{:.6}", r.unfavorable_rate()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        what: "csv",
        detail: e.to_string(),
    }
}

pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epoch", "loss"]).map_err(csv_err)?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:.10e}")])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Training instances of the category.
    pub instances: usize,
    pub per_object: usize,
    pub seed: u64,
    pub policy: PolicyConfig,
    pub expert: ExpertConfig,
    pub eval: EvalConfig,
    pub gen: GenConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            per_object: 20,
            seed: 0,
            policy: PolicyConfig::default(),
            expert: ExpertConfig::default(),
            eval: EvalConfig::default(),
            gen: GenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub trials: usize,
    pub report: CategoryReport,
    pub final_loss: f64,
}

/// Collect, train and evaluate once per trials value; every row shares the
/// training instances and the evaluation seeds.
pub fn ablate_trials(
    category: Category,
    trials_list: &[usize],
    cfg: &AblationConfig,
) -> Result<Vec<AblationRow>> {
    if trials_list.is_empty() {
        return Err(Error::InvalidConfig("trials list is empty".into()));
    }
    let instances = training_instances(category, cfg.instances, cfg.seed, &cfg.gen)?;
    let mut rows = Vec::with_capacity(trials_list.len());
    for &trials in trials_list {
        let ec = ExpertConfig {
            trials,
            ..cfg.expert.clone()
        };
        let ds = collect_dataset(&instances, cfg.per_object, &ec, &cfg.gen.priors, cfg.seed)?;
        let (policy, losses) = train_policy(&ds, &cfg.policy, &cfg.gen, |_, _| {})?;
        let ctl = DiffusionController { policy };
        let eval = EvalConfig {
            t_a: cfg.policy.t_a,
            ..cfg.eval.clone()
        };
        let results = run_episodes(&ctl, category, &eval, &cfg.gen)?;
        rows.push(AblationRow {
            trials,
            report: summarize(category, &eval, &results),
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "category",
        "trials",
        "episodes",
        "success_rate",
        "std",
        "unfavorable_episodes",
        "unfavorable_rate",
        "final_loss",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.report.category.name().to_string(),
            r.trials.to_string(),
            r.report.episodes.to_string(),
            format!("{:.6}", r.report.success_rate),
            format!("{:.6}", r.report.std),
            r.report.unfavorable_episodes.to_string(),
            format!("{:.6}", r.report.unfavorable_rate()),
            format!("{:.6e}", r.final_loss),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

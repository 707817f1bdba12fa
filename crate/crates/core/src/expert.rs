//! Rule-based adaptive experts, trajectory sparsification and demonstration
//! datasets.
//!
//! The adaptive expert only sees what the observation exposes plus the
//! blocked/applied feedback of its own past macros. It probes the naive
//! action first and adapts when refused. With `trials = 0` the expert reads
//! the hidden mechanism directly and never probes.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::articulation::{GraspState, JointKind, ObjectInstance};
use crate::category::{Category, Family};
use crate::error::{Error, Result};
use crate::geometry::{pose_to_action, Pose};
use crate::mechanisms::{HiddenPriors, LampMode, MechanismState};
use crate::perception::NormStats;
use crate::rng::{self, tag, Stream};
use crate::scene::{ExecKind, Scene};

/// Hinge angle past which the door counts as cracked open by a pull.
const CRACKED: f64 = 0.2;
/// Hinge angle a pull probe aims for.
const PULL_ANGLE: f64 = 0.35;
/// Fraction of a joint's nominal travel used as a macro target.
const REACH: f64 = 0.9;
const FINISH: f64 = 0.95;
/// Largest spin angle a rotate-then-lift expert will command.
const SPIN_CAP: f64 = 2.5;
pub const STATS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroLabel {
    Grasp,
    Regrasp,
    Rotate,
    Lift,
    Pull,
    Push,
    Open,
    Release,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroGoal {
    pub part_id: usize,
    pub target: Pose,
    pub gripper_open: bool,
    /// Debug only; never written into training data.
    pub label: MacroLabel,
    /// Joint the macro drives and its commanded value; `None` for grasps.
    pub joint: Option<(usize, f64)>,
}

impl MacroGoal {
    pub fn action(&self) -> [f64; 10] {
        pose_to_action(&self.target, self.gripper_open)
    }

    fn is_grasp(&self) -> bool {
        self.joint.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    pub goal: MacroGoal,
    /// Per joint.
    pub blocked: Vec<bool>,
    pub applied: Vec<f64>,
}

impl Feedback {
    fn failed(&self) -> bool {
        self.blocked.iter().any(|&b| b)
    }
}

/// What the expert may look at: joint values, nominal limits, part geometry
/// and the gripper. The hidden mechanism is not reachable through it.
pub struct VisibleState<'a> {
    inst: &'a ObjectInstance,
    pub grasp: &'a GraspState,
}

impl<'a> VisibleState<'a> {
    pub fn new(inst: &'a ObjectInstance, grasp: &'a GraspState) -> Self {
        Self { inst, grasp }
    }

    pub fn category(&self) -> Category {
        self.inst.category
    }

    pub fn value(&self, joint: usize) -> f64 {
        self.inst.joints[joint].value
    }

    pub fn nominal(&self, joint: usize) -> [f64; 2] {
        self.inst.joints[joint].nominal_limits
    }

    pub fn part_of(&self, joint: usize) -> usize {
        self.inst.joints[joint].part
    }

    pub fn joint_kind(&self, joint: usize) -> JointKind {
        self.inst.joints[joint].kind
    }

    pub fn handle_pose(&self, part: usize) -> Result<Pose> {
        self.inst.handle_pose(part)
    }

    pub fn handle_pose_if(&self, part: usize, joint: usize, value: f64) -> Result<Pose> {
        self.inst.handle_pose_if(part, joint, value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Failed attempts at one probe before adapting; 0 selects the static
    /// full-observation expert.
    pub trials: usize,
    pub rotate_increment: f64,
    /// Probability of rotating again (rather than probing) after a rotate.
    pub interleave_p: f64,
    pub step_budget: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            trials: 1,
            rotate_increment: 0.25,
            interleave_p: 0.5,
            step_budget: 60,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rotate_increment > 0.0)
            || !(0.0..=1.0).contains(&self.interleave_p)
            || self.step_budget == 0
        {
            return Err(Error::InvalidConfig(
                "expert needs a positive increment, interleave_p in [0, 1] and a step budget"
                    .into(),
            ));
        }
        Ok(())
    }
}

fn check_feedback(history: &[Feedback]) -> Result<()> {
    for (i, f) in history.iter().enumerate() {
        for (j, &b) in f.blocked.iter().enumerate() {
            if b && f.goal.joint.map(|(g, _)| g) != Some(j) {
                return Err(Error::InconsistentFeedback(format!(
                    "step {i} ({:?}) reports joint {j} blocked but never commanded it",
                    f.goal.label
                )));
            }
        }
    }
    Ok(())
}

/// Manipulation macros only (grasps carry no information).
fn manipulations(history: &[Feedback]) -> impl DoubleEndedIterator<Item = &Feedback> {
    history.iter().filter(|f| !f.goal.is_grasp())
}

fn trailing_failures(history: &[Feedback], label: MacroLabel) -> usize {
    manipulations(history)
        .rev()
        .take_while(|f| f.failed() && f.goal.label == label)
        .count()
}

fn succeeded(history: &[Feedback], joint: usize) -> bool {
    manipulations(history).any(|f| !f.failed() && f.goal.joint.map(|(j, _)| j) == Some(joint))
}

/// Commanded direction of a key/knob rotation.
fn dir_of(f: &Feedback) -> i8 {
    match f.goal.joint {
        Some((_, v)) if v < 0.0 => -1,
        _ => 1,
    }
}

struct Planner<'v, 'a> {
    vis: &'v VisibleState<'a>,
    history: &'v [Feedback],
}

impl Planner<'_, '_> {
    /// Grasp `part` unless already holding it.
    fn hold(&self, part: usize) -> Result<Option<MacroGoal>> {
        if self.vis.grasp.part == Some(part) {
            return Ok(None);
        }
        let label = if self.history.is_empty() {
            MacroLabel::Grasp
        } else {
            MacroLabel::Regrasp
        };
        Ok(Some(MacroGoal {
            part_id: part,
            target: self.vis.handle_pose(part)?,
            gripper_open: false,
            label,
            joint: None,
        }))
    }

    fn drive(&self, joint: usize, value: f64, label: MacroLabel) -> Result<MacroGoal> {
        let part = self.vis.grasp.part.ok_or(Error::NotAttached)?;
        Ok(MacroGoal {
            part_id: part,
            target: self.vis.handle_pose_if(part, joint, value)?,
            gripper_open: false,
            label,
            joint: Some((joint, value)),
        })
    }

    fn then(&self, part: usize, f: impl FnOnce() -> Result<MacroGoal>) -> Result<MacroGoal> {
        match self.hold(part)? {
            Some(g) => Ok(g),
            None => f(),
        }
    }
}

/// Direction of the next key rotation: keep the first tried direction until
/// it has failed `trials` times, then switch. A fresh choice is random.
fn key_direction(history: &[Feedback], key: usize, trials: usize, rng: &mut Stream) -> Result<i8> {
    let rotations: Vec<&Feedback> = manipulations(history)
        .filter(|f| f.goal.joint.map(|(j, _)| j) == Some(key))
        .collect();
    let first = match rotations.first() {
        Some(f) => dir_of(f),
        None => {
            if rng.random_bool(0.5) {
                1
            } else {
                -1
            }
        }
    };
    let fails = |d: i8| {
        rotations
            .iter()
            .filter(|f| f.failed() && dir_of(f) == d)
            .count()
    };
    if fails(first) < trials.max(1) {
        Ok(first)
    } else if fails(-first) < trials.max(1) {
        Ok(-first)
    } else {
        Err(Error::InconsistentFeedback(
            "key refused in both directions".into(),
        ))
    }
}

fn lamp_mode_of(f: &Feedback, push_joint: usize) -> LampMode {
    match f.goal.joint {
        Some((j, _)) if j == push_joint => LampMode::Push,
        Some((_, v)) if v < 0.0 => LampMode::RotateCw,
        _ => LampMode::RotateCcw,
    }
}

/// Next macro goal for the adaptive (`trials >= 1`) or, when `hidden` is
/// given, the static full-observation expert.
pub fn expert_next_goal(
    vis: &VisibleState,
    history: &[Feedback],
    cfg: &ExpertConfig,
    hidden: Option<&MechanismState>,
    rng: &mut Stream,
) -> Result<MacroGoal> {
    check_feedback(history)?;
    let p = Planner { vis, history };
    let trials = cfg.trials.max(1);
    match vis.category().family() {
        Family::RotateSlide => {
            let (rev, pris) = (0, 1);
            let part = vis.part_of(pris);
            let lift_to = FINISH * vis.nominal(pris)[1];
            let rotate = || {
                p.drive(
                    rev,
                    vis.value(rev) + cfg.rotate_increment,
                    MacroLabel::Rotate,
                )
            };
            let lift = || p.drive(pris, lift_to, MacroLabel::Lift);
            p.then(part, || {
                if let Some(MechanismState::RotateSlide { release_angle, .. }) = hidden {
                    return if vis.value(rev) < *release_angle {
                        rotate()
                    } else {
                        lift()
                    };
                }
                match manipulations(history).last() {
                    None => lift(),
                    Some(f) if f.goal.label == MacroLabel::Lift && f.failed() => {
                        if trailing_failures(history, MacroLabel::Lift) < trials {
                            lift()
                        } else {
                            rotate()
                        }
                    }
                    Some(f) if f.goal.label == MacroLabel::Rotate => {
                        if vis.value(rev) + cfg.rotate_increment > SPIN_CAP
                            || !rng.random_bool(cfg.interleave_p)
                        {
                            lift()
                        } else {
                            rotate()
                        }
                    }
                    Some(_) => lift(),
                }
            })
        }
        fam @ (Family::LockOnHandle | Family::LockSwitchContact) => {
            let (hinge, key) = (0, 1);
            let key_part = vis.part_of(key);
            // a lever handle rides on the panel and is held throughout
            let door = if fam == Family::LockOnHandle {
                key_part
            } else {
                vis.part_of(hinge)
            };
            let hinge_open = FINISH * vis.nominal(hinge)[1];
            let open = || p.then(door, || p.drive(hinge, hinge_open, MacroLabel::Open));
            let pull = || p.then(door, || p.drive(hinge, PULL_ANGLE, MacroLabel::Pull));
            let actuate = |d: i8| {
                p.then(key_part, || match vis.joint_kind(key) {
                    JointKind::Prismatic => {
                        p.drive(key, FINISH * vis.nominal(key)[1], MacroLabel::Push)
                    }
                    JointKind::Revolute => {
                        let [lo, hi] = vis.nominal(key);
                        let v = if d > 0 { REACH * hi } else { REACH * lo };
                        p.drive(key, v, MacroLabel::Rotate)
                    }
                })
            };
            if vis.value(hinge) > CRACKED || succeeded(history, key) {
                return open();
            }
            if let Some(m) = hidden {
                let (locked, d) = match *m {
                    MechanismState::Lock {
                        locked, direction, ..
                    } => (locked, direction),
                    MechanismState::LockSwitchContact {
                        locked,
                        key_direction,
                        ..
                    } => (locked, key_direction),
                    _ => {
                        return Err(Error::InvalidConfig(
                            "hidden state does not match category".into(),
                        ))
                    }
                };
                return if locked { actuate(d) } else { pull() };
            }
            match manipulations(history).last() {
                None => pull(),
                Some(f) if f.goal.label == MacroLabel::Pull && f.failed() => {
                    if trailing_failures(history, MacroLabel::Pull) < trials {
                        pull()
                    } else {
                        actuate(key_direction(history, key, trials, rng)?)
                    }
                }
                Some(f) if f.goal.joint.map(|(j, _)| j) == Some(key) && f.failed() => {
                    actuate(key_direction(history, key, trials, rng)?)
                }
                Some(_) => pull(),
            }
        }
        Family::PushRotate => {
            let (push, turn) = (0, 1);
            let part = vis.part_of(push);
            let goal_for = |m: LampMode| match m {
                LampMode::Push => p.drive(push, FINISH * vis.nominal(push)[1], MacroLabel::Push),
                LampMode::RotateCw => {
                    p.drive(turn, REACH * vis.nominal(turn)[0], MacroLabel::Rotate)
                }
                LampMode::RotateCcw => {
                    p.drive(turn, REACH * vis.nominal(turn)[1], MacroLabel::Rotate)
                }
            };
            p.then(part, || {
                if let Some(MechanismState::PushRotate { mode, .. }) = hidden {
                    return goal_for(*mode);
                }
                let failures = |m: LampMode| {
                    manipulations(history)
                        .filter(|f| f.failed() && lamp_mode_of(f, push) == m)
                        .count()
                };
                if let Some(f) = manipulations(history).last() {
                    let m = lamp_mode_of(f, push);
                    if f.failed() && failures(m) < trials {
                        return goal_for(m);
                    }
                    if !f.failed() {
                        return goal_for(m);
                    }
                }
                let untried: Vec<LampMode> = LampMode::ALL
                    .into_iter()
                    .filter(|&m| failures(m) == 0)
                    .collect();
                if untried.is_empty() {
                    return Err(Error::InconsistentFeedback(
                        "every lamp mode refused".into(),
                    ));
                }
                goal_for(untried[rng.random_range(0..untried.len())])
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Intermediate,
    Grasp,
    MacroEnd,
    BlockedProbe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep {
    pub obs: Vec<f64>,
    pub action: [f64; 10],
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub obs: Vec<f64>,
    pub act: [f64; 10],
}

/// Drop interpolated intermediates, keeping grasp, macro-terminal and
/// blocked-probe steps in order.
pub fn sparsify(dense: &[DenseStep]) -> Result<Vec<DenseStep>> {
    if dense.is_empty() {
        return Err(Error::Empty("dense trajectory"));
    }
    Ok(dense
        .iter()
        .filter(|s| s.kind != StepKind::Intermediate)
        .cloned()
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    #[serde(rename = "cat")]
    pub category: Category,
    pub seed: u64,
    /// Demo index within the instance; selects the hidden-state draw.
    #[serde(rename = "idx", default)]
    pub demo_index: u64,
    #[serde(rename = "kf")]
    pub keyframes: Vec<Keyframe>,
    #[serde(rename = "ok")]
    pub outcome: bool,
    pub trials: usize,
    #[serde(skip)]
    pub labels: Vec<MacroLabel>,
    #[serde(skip)]
    pub blocked: Vec<bool>,
}

impl Demonstration {
    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }
}

/// Run the expert on a fresh instance until success or the step budget.
pub fn rollout_expert(
    instance: &ObjectInstance,
    cfg: &ExpertConfig,
    rng: &mut Stream,
) -> Result<(Demonstration, Vec<DenseStep>)> {
    cfg.validate()?;
    let hidden = instance.mechanism;
    let mut scene = Scene::new(instance.clone());
    let mut history: Vec<Feedback> = Vec::new();
    let mut dense = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..cfg.step_budget {
        if scene.instance.is_success() {
            break;
        }
        let vis = VisibleState::new(&scene.instance, &scene.grasp);
        let static_view = (cfg.trials == 0).then_some(&hidden);
        let goal = expert_next_goal(&vis, &history, cfg, static_view, rng)?;
        let obs = scene.observe();
        let action = goal.action();
        let exec = scene.execute(&goal.target, goal.gripper_open)?;
        if goal.is_grasp() && exec.kind != ExecKind::Grasp(goal.part_id) {
            return Err(Error::RolloutRejected(format!(
                "{} seed {}: grasp of part {} did not attach",
                instance.category, instance.seed, goal.part_id
            )));
        }
        let kind = if goal.is_grasp() {
            StepKind::Grasp
        } else if exec.any_blocked() {
            StepKind::BlockedProbe
        } else {
            StepKind::MacroEnd
        };
        dense.push(DenseStep { obs, action, kind });
        for m in &exec.micro {
            dense.push(DenseStep {
                obs: m.obs.clone(),
                action: pose_to_action(&m.pose, m.gripper_open),
                kind: StepKind::Intermediate,
            });
        }
        labels.push(goal.label);
        history.push(Feedback {
            goal,
            blocked: exec.blocked,
            applied: exec.applied,
        });
    }
    let keyframes: Vec<Keyframe> = sparsify(&dense)?
        .into_iter()
        .map(|s| Keyframe {
            obs: s.obs,
            act: s.action,
        })
        .collect();
    let demo = Demonstration {
        category: instance.category,
        seed: instance.seed,
        demo_index: 0,
        keyframes,
        outcome: scene.instance.is_success(),
        trials: cfg.trials,
        labels,
        blocked: history.iter().map(Feedback::failed).collect(),
    };
    Ok((demo, dense))
}

/// Execute the recorded actions open loop on `instance`; true on success.
pub fn replay(instance: &ObjectInstance, demo: &Demonstration) -> Result<bool> {
    let mut scene = Scene::new(instance.clone());
    for kf in &demo.keyframes {
        scene.execute_action(&kf.act)?;
    }
    Ok(scene.instance.is_success())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub act_mean: Vec<f64>,
    pub act_std: Vec<f64>,
    pub v: u32,
    pub trials: usize,
    pub per_object: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub demos: Vec<Demonstration>,
    pub obs_stats: NormStats,
    pub act_stats: NormStats,
    pub trials: usize,
    pub per_object: usize,
}

impl DemoDataset {
    pub fn new(demos: Vec<Demonstration>, trials: usize, per_object: usize) -> Result<Self> {
        let first = demos
            .iter()
            .flat_map(|d| d.keyframes.first())
            .next()
            .ok_or(Error::Empty("dataset"))?;
        let obs_dim = first.obs.len();
        let kfs = || demos.iter().flat_map(|d| d.keyframes.iter());
        let obs_stats = NormStats::compute(kfs().map(|k| k.obs.as_slice()), obs_dim)?;
        let act_stats = NormStats::compute(kfs().map(|k| &k.act[..]), 10)?;
        Ok(Self {
            demos,
            obs_stats,
            act_stats,
            trials,
            per_object,
        })
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            obs_mean: self.obs_stats.mean.clone(),
            obs_std: self.obs_stats.std.clone(),
            act_mean: self.act_stats.mean.clone(),
            act_std: self.act_stats.std.clone(),
            v: STATS_SCHEMA_VERSION,
            trials: self.trials,
            per_object: self.per_object,
        }
    }

    pub fn keyframe_count(&self) -> usize {
        self.demos.iter().map(|d| d.keyframes.len()).sum()
    }
}

/// Sidecar path for a dataset file: `demos.jsonl` -> `demos.jsonl.stats.json`.
pub fn stats_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

pub fn write_dataset(path: &Path, ds: &DemoDataset) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for d in &ds.demos {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    std::fs::write(stats_path(path), serde_json::to_string_pretty(&ds.stats())?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<DemoDataset> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut demos = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Demonstration = serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "dataset line",
            detail: format!("line {}: {e}", i + 1),
        })?;
        demos.push(d);
    }
    let stats: DatasetStats = serde_json::from_str(&std::fs::read_to_string(stats_path(path))?)?;
    if stats.v != STATS_SCHEMA_VERSION {
        return Err(Error::Format {
            what: "stats sidecar",
            detail: format!("unsupported version {}", stats.v),
        });
    }
    let mut ds = DemoDataset::new(demos, stats.trials, stats.per_object)?;
    ds.obs_stats = NormStats {
        mean: stats.obs_mean,
        std: stats.obs_std,
    };
    ds.act_stats = NormStats {
        mean: stats.act_mean,
        std: stats.act_std,
    };
    Ok(ds)
}

/// `per_object` demonstrations for every instance. Demo `d` runs on hidden
/// draw `d` of its instance with an expert stream keyed by
/// `(seed, category, instance seed, d)`; results are ordered by instance then
/// demo index regardless of thread scheduling.
pub fn collect_dataset(
    instances: &[ObjectInstance],
    per_object: usize,
    cfg: &ExpertConfig,
    priors: &HiddenPriors,
    seed: u64,
) -> Result<DemoDataset> {
    if per_object == 0 {
        return Err(Error::InvalidConfig("per_object must be at least 1".into()));
    }
    cfg.validate()?;
    let jobs: Vec<(usize, u64)> = (0..instances.len())
        .flat_map(|i| (0..per_object as u64).map(move |d| (i, d)))
        .collect();
    let demos: Vec<Demonstration> = jobs
        .par_iter()
        .map(|&(i, d)| {
            let inst = instances[i].with_hidden_draw(d, priors)?;
            let mut s = rng::stream(&[
                tag::EXPERT,
                seed,
                inst.category.index() as u64,
                inst.seed,
                d,
            ]);
            let (mut demo, _) = rollout_expert(&inst, cfg, &mut s)?;
            demo.demo_index = d;
            if !demo.outcome {
                return Err(Error::RolloutRejected(format!(
                    "{} seed {} demo {}: budget of {} macros exhausted; labels {:?}; hidden {:?}",
                    inst.category, inst.seed, d, cfg.step_budget, demo.labels, inst.mechanism
                )));
            }
            Ok(demo)
        })
        .collect::<Result<_>>()?;
    DemoDataset::new(demos, cfg.trials, per_object)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::articulation::{build_instance, GenConfig};

    fn run(inst: &ObjectInstance, trials: usize, key: u64) -> Demonstration {
        let cfg = ExpertConfig {
            trials,
            ..Default::default()
        };
        rollout_expert(inst, &cfg, &mut rng::stream(&[key]))
            .unwrap()
            .0
    }

    fn with_lock(c: Category, locked: bool) -> ObjectInstance {
        let base = build_instance(c, 11, &GenConfig::default()).unwrap();
        let mut m = base.mechanism;
        match &mut m {
            MechanismState::Lock { locked: l, .. }
            | MechanismState::LockSwitchContact { locked: l, .. } => *l = locked,
            _ => unreachable!(),
        }
        base.with_mechanism(m)
    }

    use MacroLabel::*;

    #[test]
    fn locked_safe_sequence() {
        let inst = with_lock(Category::Safe, true);
        let d = run(&inst, 1, 0);
        assert!(d.outcome);
        assert_eq!(d.labels[..2], [Grasp, Pull]);
        assert!(d.blocked[1]);
        assert_eq!(d.labels[2], Regrasp);
        assert_eq!(d.labels[d.labels.len() - 2..], [Regrasp, Open]);
        assert_eq!(d.keyframes.len(), d.labels.len());
    }

    #[test]
    fn unlocked_safe_never_touches_knob() {
        let inst = with_lock(Category::Safe, false);
        let d = run(&inst, 1, 0);
        assert_eq!(d.labels, [Grasp, Pull, Open]);
        assert_eq!(d.blocked_count(), 0);
    }

    #[test]
    fn microwave_static_and_repeated_trials() {
        let inst = with_lock(Category::Microwave, true);
        let d = run(&inst, 0, 0);
        assert_eq!(d.labels, [Grasp, Push, Regrasp, Open]);
        assert_eq!(d.blocked_count(), 0);
        let d = run(&inst, 3, 0);
        assert_eq!(
            d.labels,
            [Grasp, Pull, Pull, Pull, Regrasp, Push, Regrasp, Open]
        );
        assert_eq!(d.blocked_count(), 3);
    }

    #[test]
    fn microwave_pull_success_continues_opening() {
        let inst = with_lock(Category::Microwave, false);
        let mut scene = Scene::new(inst);
        let cfg = ExpertConfig::default();
        let mut s = rng::stream(&[1]);
        let mut history = Vec::new();
        for _ in 0..2 {
            let vis = VisibleState::new(&scene.instance, &scene.grasp);
            let g = expert_next_goal(&vis, &history, &cfg, None, &mut s).unwrap();
            let e = scene.execute(&g.target, g.gripper_open).unwrap();
            history.push(Feedback {
                goal: g,
                blocked: e.blocked,
                applied: e.applied,
            });
        }
        assert!(history[1].applied[0] > 0.0);
        let vis = VisibleState::new(&scene.instance, &scene.grasp);
        let g = expert_next_goal(&vis, &history, &cfg, None, &mut s).unwrap();
        assert_eq!(g.label, Open);
        assert_eq!(g.part_id, 0);
    }

    #[test]
    fn window_switches_direction_after_refusal() {
        let base = build_instance(Category::Window, 5, &GenConfig::default()).unwrap();
        let inst = base.with_mechanism(MechanismState::Lock {
            locked: true,
            key_joint: 1,
            unlock_angle: 0.8,
            direction: -1,
            goal_joint: 0,
        });
        // try until the random first direction is the wrong one
        let d = (0..20)
            .map(|k| run(&inst, 1, k))
            .find(|d| d.blocked_count() == 2)
            .expect("some stream tries +1 first");
        assert_eq!(d.labels, [Grasp, Pull, Rotate, Rotate, Open]);
        assert_eq!(d.blocked, [false, true, true, false, false]);
        assert!(d.outcome);
    }

    #[test]
    fn inconsistent_feedback_is_rejected() {
        let inst = with_lock(Category::Safe, true);
        let g = GraspState::home();
        let vis = VisibleState::new(&inst, &g);
        let goal = MacroGoal {
            part_id: 0,
            target: inst.handle_pose(0).unwrap(),
            gripper_open: false,
            label: Grasp,
            joint: None,
        };
        let history = vec![Feedback {
            goal,
            blocked: vec![true, false],
            applied: vec![0.0, 0.0],
        }];
        let r = expert_next_goal(
            &vis,
            &history,
            &ExpertConfig::default(),
            None,
            &mut rng::stream(&[0]),
        );
        assert!(matches!(r, Err(Error::InconsistentFeedback(_))));
    }

    #[test]
    fn lamp_never_repeats_failed_mode() {
        let base = build_instance(Category::Lamp, 2, &GenConfig::default()).unwrap();
        for mode in LampMode::ALL {
            let inst = base.with_mechanism(MechanismState::PushRotate {
                mode,
                press_depth: 0.01,
                turn_angle: 0.9,
                latch_on: false,
                pris_joint: 0,
                rev_joint: 1,
            });
            for k in 0..10 {
                let d = run(&inst, 1, k);
                assert!(d.outcome);
                assert!(d.blocked_count() <= 2);
                assert_eq!(d.labels.len(), 2 + d.blocked_count());
            }
        }
    }

    #[test]
    fn sparsify_keeps_tagged_steps() {
        let inst = with_lock(Category::Safe, true);
        let cfg = ExpertConfig::default();
        let (demo, dense) = rollout_expert(&inst, &cfg, &mut rng::stream(&[3])).unwrap();
        assert!(dense.len() > demo.keyframes.len());
        let kf = sparsify(&dense).unwrap();
        assert_eq!(kf.len(), demo.keyframes.len());
        assert_eq!(sparsify(&kf).unwrap(), kf);
        assert!(sparsify(&[]).is_err());
    }

    #[test]
    fn every_category_succeeds_and_replays() {
        let cfg = GenConfig::default();
        for c in Category::ALL {
            for seed in 0..20 {
                let inst = build_instance(c, seed, &cfg).unwrap();
                let d = run(&inst, 1, seed);
                assert!(d.outcome, "{c} {seed} {:?}", d.labels);
                assert!(replay(&inst, &d).unwrap());
            }
        }
    }

    #[test]
    fn dataset_roundtrip_and_determinism() {
        let cfg = GenConfig::default();
        let insts: Vec<_> = (0..3)
            .map(|i| build_instance(Category::Microwave, i, &cfg).unwrap())
            .collect();
        let ec = ExpertConfig::default();
        let a = collect_dataset(&insts, 2, &ec, &cfg.priors, 9).unwrap();
        let b = collect_dataset(&insts, 2, &ec, &cfg.priors, 9).unwrap();
        assert_eq!(a.demos.len(), 6);
        assert_eq!(a.demos, b.demos);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&p, &a).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.obs_stats, a.obs_stats);
        assert_eq!(back.demos.len(), 6);
        assert_eq!(back.demos[0].keyframes, a.demos[0].keyframes);
        let line = std::fs::read_to_string(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for k in ["cat", "seed", "kf", "ok", "trials"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(collect_dataset(&insts, 0, &ec, &cfg.priors, 9).is_err());
    }
}

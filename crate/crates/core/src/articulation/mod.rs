//! Procedural articulated objects: parts on revolute/prismatic joints, a
//! hidden mechanism that overrides joint limits, and quasi-static stepping of
//! a rigidly grasped part toward a commanded end-effector pose.

mod templates;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Error, Result};
use crate::geometry::{twist_angle, Pose};
use crate::mechanisms::{
    apply_mechanism, check_range, sample_hidden, HiddenPriors, MechanismState,
};
use crate::rng::{self, tag};

/// Commanded motion below this magnitude (rad or m) never counts as blocked.
pub const BLOCK_MIN_DESIRED: f64 = 1e-3;
/// Shortfall of applied versus desired motion that counts as blocked.
pub const BLOCK_EPS: f64 = 1e-6;
/// Fraction of the goal joint's nominal upper limit that counts as open.
pub const SUCCESS_FRACTION: f64 = 0.85;
pub const INSTANCE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub kind: JointKind,
    /// Unit axis in the frame the owning part is attached to.
    pub axis: Vector3<f64>,
    pub anchor: Vector3<f64>,
    pub nominal_limits: [f64; 2],
    pub value: f64,
    pub effective_limits: [f64; 2],
    /// Owning part.
    pub part: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub id: usize,
    pub name: String,
    /// Part this one rides on; `None` means the object base.
    pub parent: Option<usize>,
    pub joints: Vec<usize>,
    /// Part frame relative to the parent frame at zero joint values.
    pub rest: Pose,
    /// Grasp location in the part frame.
    pub handle_point: Vector3<f64>,
    pub box_extents: Vector3<f64>,
}

/// Fixed geometry of the object body, used only for point-cloud sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticBox {
    pub name: String,
    pub pose: Pose,
    pub extents: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub priors: HiddenPriors,
    /// Relative jitter applied to template dimensions.
    pub extent_jitter: f64,
    /// Absolute jitter (m) of the base position in x and y.
    pub position_jitter: f64,
    /// Upper limit range (rad) of door and window hinges.
    pub hinge_limit_range: [f64; 2],
    /// Upper limit range (m) of lift / pull-down slides.
    pub lift_range: [f64; 2],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            priors: HiddenPriors::default(),
            extent_jitter: 0.1,
            position_jitter: 0.03,
            hinge_limit_range: [1.3, 1.6],
            lift_range: [0.04, 0.06],
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        check_range("extent_jitter", [0.0, self.extent_jitter])?;
        check_range("position_jitter", [0.0, self.position_jitter])?;
        check_range("hinge_limit_range", self.hinge_limit_range)?;
        check_range("lift_range", self.lift_range)?;
        if self.extent_jitter >= 0.5
            || self.hinge_limit_range[0] <= 0.0
            || self.lift_range[0] <= 0.0
        {
            return Err(Error::InvalidConfig(
                "jitter must be < 0.5 and joint ranges positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "InstanceRepr", try_from = "InstanceRepr")]
pub struct ObjectInstance {
    pub category: Category,
    pub seed: u64,
    pub base_pose: Pose,
    pub parts: Vec<Part>,
    pub joints: Vec<JointSpec>,
    pub statics: Vec<StaticBox>,
    /// Hidden internal state. Never read by observation code.
    pub mechanism: MechanismState,
    pub goal_joint: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspState {
    /// Attached part, if any.
    pub part: Option<usize>,
    /// Gripper pose in the world frame; equals the handle pose while attached.
    pub grasp_pose: Pose,
    pub gripper_open: bool,
}

/// Resting pose of the free end effector at the start of every episode.
pub fn home_pose() -> Pose {
    Pose::from_translation(Vector3::new(0.15, 0.0, 0.45))
}

impl GraspState {
    pub fn home() -> Self {
        Self {
            part: None,
            grasp_pose: home_pose(),
            gripper_open: true,
        }
    }

    pub fn attached(&self) -> bool {
        self.part.is_some()
    }

    pub fn release(&mut self) {
        self.part = None;
        self.gripper_open = true;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub achieved_pose: Pose,
    pub per_joint_applied: Vec<f64>,
    pub per_joint_desired: Vec<f64>,
    pub blocked: Vec<bool>,
    pub success_after: bool,
}

impl StepResult {
    pub fn any_blocked(&self) -> bool {
        self.blocked.iter().any(|&b| b)
    }
}

/// Build the instance for `(category, seed)`. Geometry and hidden state come
/// from independent streams keyed by the pair, so the result is bit-identical
/// across calls.
pub fn build_instance(category: Category, seed: u64, cfg: &GenConfig) -> Result<ObjectInstance> {
    cfg.validate()?;
    let mut geo = rng::stream(&[tag::GEOMETRY, category.index() as u64, seed]);
    let mut hidden = rng::stream(&[tag::HIDDEN, category.index() as u64, seed]);
    let template = templates::generate(category, &mut geo, cfg);
    let mechanism = sample_hidden(category, &mut hidden, &cfg.priors)?;
    let mut inst = ObjectInstance {
        category,
        seed,
        base_pose: template.base_pose,
        parts: template.parts,
        joints: template.joints,
        statics: template.statics,
        mechanism,
        goal_joint: template.goal_joint,
    };
    inst.refresh_limits();
    Ok(inst)
}

impl ObjectInstance {
    /// Copy of this instance at rest with a fresh hidden state drawn from the
    /// stream keyed by `(category, seed, draw)`. Geometry is unchanged.
    pub fn with_hidden_draw(&self, draw: u64, priors: &HiddenPriors) -> Result<ObjectInstance> {
        let mut s = rng::stream(&[
            tag::HIDDEN,
            self.category.index() as u64,
            self.seed,
            draw + 1,
        ]);
        let mut inst = self.clone();
        for j in &mut inst.joints {
            j.value = 0.0;
        }
        inst.mechanism = sample_hidden(self.category, &mut s, priors)?;
        inst.refresh_limits();
        Ok(inst)
    }

    /// Replace the hidden state, resetting joint values and limits to rest.
    pub fn with_mechanism(&self, mechanism: MechanismState) -> ObjectInstance {
        let mut inst = self.clone();
        for j in &mut inst.joints {
            j.value = 0.0;
        }
        inst.mechanism = mechanism;
        inst.refresh_limits();
        inst
    }

    pub fn joint_values(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.value).collect()
    }

    fn nominal_limits(&self) -> Vec<[f64; 2]> {
        self.joints.iter().map(|j| j.nominal_limits).collect()
    }

    /// Run the mechanism once against current joint values and install its
    /// limit overrides; joints it does not govern revert to nominal limits.
    fn refresh_limits(&mut self) {
        let (next, ov) = apply_mechanism(
            &self.mechanism,
            &self.joint_values(),
            &self.nominal_limits(),
        );
        self.mechanism = next;
        for (i, j) in self.joints.iter_mut().enumerate() {
            j.effective_limits = ov.get(i).unwrap_or(j.nominal_limits);
        }
    }

    pub fn part(&self, part_id: usize) -> Result<&Part> {
        self.parts.get(part_id).ok_or(Error::UnknownPart(part_id))
    }

    /// Joints moving `part_id`, root first (ancestors' joints precede its own).
    pub fn chain(&self, part_id: usize) -> Vec<usize> {
        let mut parts = vec![part_id];
        let mut cur = self.parts[part_id].parent;
        while let Some(p) = cur {
            parts.push(p);
            cur = self.parts[p].parent;
        }
        parts
            .iter()
            .rev()
            .flat_map(|&p| self.parts[p].joints.iter().copied())
            .collect()
    }

    fn joint_motion(&self, j: usize, value: f64) -> Pose {
        let js = &self.joints[j];
        match js.kind {
            JointKind::Revolute => Pose::about_axis(&js.axis, &js.anchor, value),
            JointKind::Prismatic => Pose::from_translation(js.axis * value),
        }
    }

    fn parent_frame_with(&self, part_id: usize, values: &[f64]) -> Pose {
        match self.parts[part_id].parent {
            Some(p) => self.part_pose_with(p, values),
            None => self.base_pose,
        }
    }

    fn part_pose_with(&self, part_id: usize, values: &[f64]) -> Pose {
        let part = &self.parts[part_id];
        let mut pose = self.parent_frame_with(part_id, values);
        for &j in &part.joints {
            pose = pose * self.joint_motion(j, values[j]);
        }
        pose * part.rest
    }

    fn handle_pose_with(&self, part_id: usize, values: &[f64]) -> Pose {
        self.part_pose_with(part_id, values)
            * Pose::from_translation(self.parts[part_id].handle_point)
    }

    /// World axis and anchor of joint `j` at the given joint values.
    fn joint_world_frame(&self, j: usize, values: &[f64]) -> (Vector3<f64>, Vector3<f64>) {
        let js = &self.joints[j];
        let part = &self.parts[js.part];
        let mut frame = self.parent_frame_with(js.part, values);
        for &i in part.joints.iter().take_while(|&&i| i != j) {
            frame = frame * self.joint_motion(i, values[i]);
        }
        (
            frame.transform_vector(&js.axis),
            frame.transform_point(&js.anchor),
        )
    }

    /// Pose of the part frame under current joint values.
    pub fn part_pose(&self, part_id: usize) -> Result<Pose> {
        self.part(part_id)?;
        Ok(self.part_pose_with(part_id, &self.joint_values()))
    }

    /// Pose of the part's handle point (grasp frame) under current joint values.
    pub fn handle_pose(&self, part_id: usize) -> Result<Pose> {
        self.part(part_id)?;
        Ok(self.handle_pose_with(part_id, &self.joint_values()))
    }

    /// Handle pose the part would have if joint `joint` were set to `value`,
    /// other joints unchanged. Limits are ignored.
    pub fn handle_pose_if(&self, part_id: usize, joint: usize, value: f64) -> Result<Pose> {
        self.part(part_id)?;
        let mut values = self.joint_values();
        *values.get_mut(joint).ok_or(Error::UnknownPart(joint))? = value;
        Ok(self.handle_pose_with(part_id, &values))
    }

    pub fn is_success(&self) -> bool {
        if let Some(latch) = self.mechanism.latch_on() {
            return latch;
        }
        let g = &self.joints[self.goal_joint];
        g.value >= SUCCESS_FRACTION * g.nominal_limits[1]
    }

    /// Decompose the displacement from the grasp pose to `target` into
    /// per-joint screw motions of the grasped part's kinematic chain, apply
    /// them clamped to effective limits, then run the mechanism once.
    pub fn step_to(&mut self, grasp: &mut GraspState, target: &Pose) -> Result<StepResult> {
        let part_id = grasp.part.ok_or(Error::NotAttached)?;
        if !target.is_finite() {
            return Err(Error::NonFinite("target pose"));
        }
        let n = self.joints.len();
        let chain = self.chain(part_id);
        let values = self.joint_values();
        let current = self.handle_pose_with(part_id, &values);
        let rel = target.rotation * current.rotation.inverse();

        let mut desired = vec![0.0; n];
        let mut trial = values.clone();
        for &j in &chain {
            if self.joints[j].kind == JointKind::Revolute {
                let (axis, _) = self.joint_world_frame(j, &values);
                desired[j] = twist_angle(&rel, &axis);
                trial[j] += desired[j];
            }
        }
        let predicted = self.handle_pose_with(part_id, &trial);
        let residual = target.translation - predicted.translation;
        for &j in &chain {
            if self.joints[j].kind == JointKind::Prismatic {
                let (axis, _) = self.joint_world_frame(j, &values);
                desired[j] = residual.dot(&axis);
            }
        }

        let mut applied = vec![0.0; n];
        for &j in &chain {
            let js = &mut self.joints[j];
            let [lo, hi] = js.effective_limits;
            let next = (js.value + desired[j]).clamp(lo, hi);
            applied[j] = next - js.value;
            js.value = next;
        }
        self.refresh_limits();

        let blocked = (0..n)
            .map(|j| {
                desired[j].abs() > BLOCK_MIN_DESIRED && (desired[j] - applied[j]).abs() > BLOCK_EPS
            })
            .collect();
        let achieved = self.handle_pose_with(part_id, &self.joint_values());
        grasp.grasp_pose = achieved;
        Ok(StepResult {
            achieved_pose: achieved,
            per_joint_applied: applied,
            per_joint_desired: desired,
            blocked,
            success_after: self.is_success(),
        })
    }
}

/// Attach the gripper to `part_id` at its current handle pose.
pub fn grasp(
    instance: &ObjectInstance,
    current: &GraspState,
    part_id: usize,
) -> Result<GraspState> {
    if let Some(p) = current.part {
        return Err(Error::AlreadyAttached(p));
    }
    let pose = instance.handle_pose(part_id)?;
    Ok(GraspState {
        part: Some(part_id),
        grasp_pose: pose,
        gripper_open: false,
    })
}

#[derive(Serialize, Deserialize)]
struct HiddenSection {
    hidden: bool,
    #[serde(flatten)]
    state: MechanismState,
}

#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    v: u32,
    category: Category,
    seed: u64,
    base_pose: Pose,
    parts: Vec<Part>,
    joints: Vec<JointSpec>,
    statics: Vec<StaticBox>,
    mechanism: HiddenSection,
    goal_joint: usize,
}

impl From<ObjectInstance> for InstanceRepr {
    fn from(i: ObjectInstance) -> Self {
        InstanceRepr {
            v: INSTANCE_SCHEMA_VERSION,
            category: i.category,
            seed: i.seed,
            base_pose: i.base_pose,
            parts: i.parts,
            joints: i.joints,
            statics: i.statics,
            mechanism: HiddenSection {
                hidden: true,
                state: i.mechanism,
            },
            goal_joint: i.goal_joint,
        }
    }
}

impl TryFrom<InstanceRepr> for ObjectInstance {
    type Error = String;

    fn try_from(r: InstanceRepr) -> std::result::Result<Self, String> {
        if r.v != INSTANCE_SCHEMA_VERSION {
            return Err(format!("unsupported instance schema version {}", r.v));
        }
        if r.goal_joint >= r.joints.len() {
            return Err(format!("goal joint {} out of range", r.goal_joint));
        }
        for j in &r.joints {
            let [lo, hi] = j.effective_limits;
            if lo > hi || j.value < lo || j.value > hi || j.part >= r.parts.len() {
                return Err("joint state violates its limits".into());
            }
        }
        Ok(ObjectInstance {
            category: r.category,
            seed: r.seed,
            base_pose: r.base_pose,
            parts: r.parts,
            joints: r.joints,
            statics: r.statics,
            mechanism: r.mechanism.state,
            goal_joint: r.goal_joint,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::axis_angle;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Rotation3};

    fn safe(locked: bool) -> ObjectInstance {
        let base = build_instance(Category::Safe, 7, &GenConfig::default()).unwrap();
        let mut m = base.mechanism;
        if let MechanismState::LockSwitchContact { locked: l, .. } = &mut m {
            *l = locked;
        }
        base.with_mechanism(m)
    }

    fn door_target(inst: &ObjectInstance, angle: f64) -> Pose {
        inst.handle_pose_if(0, 0, angle).unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = GenConfig::default();
        for c in Category::ALL {
            let a = build_instance(c, 42, &cfg).unwrap();
            let b = build_instance(c, 42, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(
                serde_json::to_string(&a).unwrap(),
                serde_json::to_string(&b).unwrap()
            );
        }
    }

    #[test]
    fn safe_template_and_lock_limit() {
        let cfg = GenConfig::default();
        let inst = build_instance(Category::Safe, 7, &cfg).unwrap();
        let names: Vec<_> = inst.parts.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["door", "knob"]);
        let locked = inst.mechanism.locked().unwrap();
        let door = &inst.joints[inst.goal_joint];
        assert_eq!(door.effective_limits == [0.0, 0.0], locked);
        assert!(inst.joints.iter().all(|j| j.value == 0.0));
    }

    #[test]
    fn part_invariants_hold_for_all_templates() {
        let cfg = GenConfig::default();
        for c in Category::ALL {
            let inst = build_instance(c, 3, &cfg).unwrap();
            for p in &inst.parts {
                assert!(matches!(p.joints.len(), 1 | 2));
                if p.joints.len() == 2 {
                    let kinds: Vec<_> = p.joints.iter().map(|&j| inst.joints[j].kind).collect();
                    assert!(kinds.contains(&JointKind::Revolute));
                    assert!(kinds.contains(&JointKind::Prismatic));
                }
            }
            for j in &inst.joints {
                assert_relative_eq!(j.axis.norm(), 1.0, epsilon = 1e-9);
            }
            assert!(inst.goal_joint < inst.joints.len());
        }
    }

    #[test]
    fn invalid_gen_config_rejected() {
        let cfg = GenConfig {
            lift_range: [0.06, 0.04],
            ..Default::default()
        };
        assert!(build_instance(Category::Bottle, 1, &cfg).is_err());
    }

    #[test]
    fn grasp_at_rest_and_unknown_part() {
        let inst = safe(true);
        let g = grasp(&inst, &GraspState::home(), 0).unwrap();
        assert_eq!(g.grasp_pose, inst.handle_pose(0).unwrap());
        assert!(!g.gripper_open);
        assert!(matches!(
            grasp(&inst, &GraspState::home(), 99),
            Err(Error::UnknownPart(99))
        ));
        assert!(matches!(
            grasp(&inst, &g, 1),
            Err(Error::AlreadyAttached(0))
        ));
    }

    #[test]
    fn rest_part_pose_is_base_times_offset() {
        let inst = build_instance(Category::Microwave, 5, &GenConfig::default()).unwrap();
        for (i, p) in inst.parts.iter().enumerate() {
            assert_eq!(inst.part_pose(i).unwrap(), inst.base_pose * p.rest);
        }
    }

    #[test]
    fn revolute_part_pose_matches_rotation_oracle() {
        let mut inst = safe(false);
        let theta = 0.6;
        inst.joints[0].value = theta;
        // independent oracle: explicit rotation matrix about the world hinge line
        let j = &inst.joints[0];
        let axis = inst.base_pose.rotation * j.axis;
        let anchor = inst.base_pose.transform_point(&j.anchor);
        let (s, c) = theta.sin_cos();
        let k = Matrix3::new(
            0.0, -axis.z, axis.y, axis.z, 0.0, -axis.x, -axis.y, axis.x, 0.0,
        );
        let r = Matrix3::identity() + k * s + k * k * (1.0 - c);
        let rest = inst.base_pose * inst.parts[0].rest;
        let expected_t = r * (rest.translation - anchor) + anchor;
        let expected_r = r * rest.rotation.matrix();
        let pose = inst.part_pose(0).unwrap();
        assert_relative_eq!(pose.translation, expected_t, epsilon = 1e-12);
        assert_relative_eq!(*pose.rotation.matrix(), expected_r, epsilon = 1e-12);
    }

    #[test]
    fn prismatic_part_pose_translates_along_axis() {
        let mut inst = build_instance(Category::Microwave, 5, &GenConfig::default()).unwrap();
        let rest = inst.part_pose(1).unwrap();
        inst.joints[1].value = 0.01;
        let moved = inst.part_pose(1).unwrap();
        let axis = inst.base_pose.rotation * inst.joints[1].axis;
        assert_relative_eq!(
            moved.translation,
            rest.translation + axis * 0.01,
            epsilon = 1e-12
        );
        assert_eq!(moved.rotation, rest.rotation);
    }

    #[test]
    fn cap_grasp_after_rotation_matches_axis_angle() {
        let mut inst = build_instance(Category::Bottle, 2, &GenConfig::default()).unwrap();
        let rest = inst.handle_pose(0).unwrap();
        inst.joints[0].value = 0.4;
        let g = grasp(&inst, &GraspState::home(), 0).unwrap();
        let axis = inst.base_pose.rotation * inst.joints[0].axis;
        let expected: Rotation3<f64> = axis_angle(&axis, 0.4) * rest.rotation;
        assert_relative_eq!(
            g.grasp_pose.rotation.matrix(),
            expected.matrix(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn locked_door_blocks_pull() {
        let mut inst = safe(true);
        let mut g = grasp(&inst, &GraspState::home(), 0).unwrap();
        let r = inst.step_to(&mut g, &door_target(&inst, 0.3)).unwrap();
        assert_eq!(r.per_joint_applied[0], 0.0);
        assert!(r.blocked[0]);
        assert!(!r.success_after);
    }

    #[test]
    fn unlocked_door_follows_pull() {
        let mut inst = safe(false);
        let mut g = grasp(&inst, &GraspState::home(), 0).unwrap();
        let r = inst.step_to(&mut g, &door_target(&inst, 0.3)).unwrap();
        assert_relative_eq!(r.per_joint_applied[0], 0.3, epsilon = 1e-9);
        assert!(!r.blocked[0]);
        assert_relative_eq!(
            r.achieved_pose.translation,
            door_target(&inst, 0.3).translation,
            epsilon = 1e-9
        );
    }

    #[test]
    fn bottle_rotate_then_lift() {
        let base = build_instance(Category::Bottle, 4, &GenConfig::default()).unwrap();
        let mut inst = base.with_mechanism(MechanismState::RotateSlide {
            release_angle: 0.5,
            rev_joint: 0,
            pris_joint: 1,
            released: false,
        });
        let mut g = grasp(&inst, &GraspState::home(), 0).unwrap();
        // lifting first is refused
        let lift = inst.handle_pose_if(0, 1, 0.05).unwrap();
        let r = inst.step_to(&mut g, &lift).unwrap();
        assert!(r.blocked[1]);
        assert_eq!(r.per_joint_applied[1], 0.0);
        let rot = inst.handle_pose_if(0, 0, 0.6).unwrap();
        let r = inst.step_to(&mut g, &rot).unwrap();
        assert_relative_eq!(r.per_joint_applied[0], 0.6, epsilon = 1e-9);
        let lift = inst.handle_pose_if(0, 1, 0.05).unwrap();
        let r = inst.step_to(&mut g, &lift).unwrap();
        assert_relative_eq!(r.per_joint_applied[1], 0.05, epsilon = 1e-9);
        assert!(!r.any_blocked());
    }

    #[test]
    fn step_requires_attachment_and_finite_target() {
        let mut inst = safe(false);
        let mut g = GraspState::home();
        assert!(matches!(
            inst.step_to(&mut g, &Pose::identity()),
            Err(Error::NotAttached)
        ));
        let mut g = grasp(&inst, &GraspState::home(), 0).unwrap();
        let mut bad = Pose::identity();
        bad.translation.x = f64::NAN;
        assert!(matches!(
            inst.step_to(&mut g, &bad),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn success_threshold() {
        let mut inst = build_instance(Category::Microwave, 1, &GenConfig::default()).unwrap();
        assert!(!inst.is_success());
        let hi = inst.joints[0].nominal_limits[1];
        inst.joints[0].value = 0.9 * hi;
        assert!(inst.is_success());
        inst.joints[0].value = 0.8 * hi;
        assert!(!inst.is_success());
    }

    #[test]
    fn json_carries_version_and_hidden_tag() {
        let inst = safe(true);
        let v: serde_json::Value = serde_json::to_value(&inst).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["mechanism"]["hidden"], true);
        let back: ObjectInstance = serde_json::from_value(v).unwrap();
        assert_eq!(back, inst);
    }
}

//! Executes absolute end-effector goal actions against an instance: snaps
//! grasps onto nearby handles, moves the free gripper, and drives a grasped
//! part through interpolated micro-steps until the goal or a refusal.

use crate::articulation::{grasp, GraspState, ObjectInstance};
use crate::error::Result;
use crate::geometry::{action_to_pose, pose_to_action, Pose};
use crate::perception::observe;

/// A closing gripper commanded within this distance (m) of an ungrasped
/// part's handle attaches to that part.
pub const SNAP_RADIUS: f64 = 0.02;
pub const MICRO_STEPS: usize = 10;
/// Straight-line pre-grasp stand-off along the handle's outward normal (m).
pub const PREGRASP_OFFSET: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecKind {
    /// Attached to the given part (releasing any previous attachment).
    Grasp(usize),
    /// Moved the unattached gripper.
    Free,
    /// Drove the grasped part.
    Manipulate,
}

/// One interpolated micro-step: the observation before it and the pose it
/// commanded.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroStep {
    pub obs: Vec<f64>,
    pub pose: Pose,
    pub gripper_open: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub kind: ExecKind,
    /// Per joint: refused at some micro-step.
    pub blocked: Vec<bool>,
    /// Per joint: total applied displacement.
    pub applied: Vec<f64>,
    pub achieved: Pose,
    pub success: bool,
    pub micro: Vec<MicroStep>,
}

impl Execution {
    pub fn any_blocked(&self) -> bool {
        self.blocked.iter().any(|&b| b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub instance: ObjectInstance,
    pub grasp: GraspState,
}

impl Scene {
    pub fn new(instance: ObjectInstance) -> Self {
        Self {
            instance,
            grasp: GraspState::home(),
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        observe(&self.instance, &self.grasp).values
    }

    /// Nearest ungrasped part whose handle lies within the snap radius.
    pub fn snap_target(&self, position: &nalgebra::Vector3<f64>) -> Option<usize> {
        (0..self.instance.parts.len())
            .filter(|&p| Some(p) != self.grasp.part)
            .map(|p| {
                let h = self
                    .instance
                    .handle_pose(p)
                    .expect("valid part")
                    .translation;
                (p, (h - position).norm())
            })
            .filter(|&(_, d)| d <= SNAP_RADIUS)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(p, _)| p)
    }

    fn approach_normal(&self, part: usize) -> nalgebra::Vector3<f64> {
        let pose = self.instance.part_pose(part).expect("valid part");
        let h = pose.transform_vector(&self.instance.parts[part].handle_point);
        if h.norm() > 1e-9 {
            h.normalize()
        } else {
            -nalgebra::Vector3::x()
        }
    }

    pub fn execute_action(&mut self, action: &[f64]) -> Result<Execution> {
        let (pose, open) = action_to_pose(action)?;
        self.execute(&pose, open)
    }

    pub fn execute(&mut self, target: &Pose, gripper_open: bool) -> Result<Execution> {
        let n = self.instance.joints.len();
        let mut micro = Vec::new();
        if !gripper_open {
            if let Some(part) = self.snap_target(&target.translation) {
                let handle = self.instance.handle_pose(part)?;
                let mut pre = handle;
                pre.translation += self.approach_normal(part) * PREGRASP_OFFSET;
                micro.push(MicroStep {
                    obs: self.observe(),
                    pose: pre,
                    gripper_open: true,
                });
                self.grasp.release();
                self.grasp.grasp_pose = pre;
                self.grasp = grasp(&self.instance, &self.grasp, part)?;
                return Ok(Execution {
                    kind: ExecKind::Grasp(part),
                    blocked: vec![false; n],
                    applied: vec![0.0; n],
                    achieved: self.grasp.grasp_pose,
                    success: self.instance.is_success(),
                    micro,
                });
            }
        }
        if gripper_open || !self.grasp.attached() {
            if gripper_open {
                self.grasp.release();
            } else {
                self.grasp.gripper_open = false;
            }
            micro.push(MicroStep {
                obs: self.observe(),
                pose: *target,
                gripper_open,
            });
            self.grasp.grasp_pose = *target;
            return Ok(Execution {
                kind: ExecKind::Free,
                blocked: vec![false; n],
                applied: vec![0.0; n],
                achieved: *target,
                success: self.instance.is_success(),
                micro,
            });
        }

        let start = self.grasp.grasp_pose;
        let mut blocked = vec![false; n];
        let mut applied = vec![0.0; n];
        for i in 1..=MICRO_STEPS {
            let waypoint = start.interpolate(target, i as f64 / MICRO_STEPS as f64);
            micro.push(MicroStep {
                obs: self.observe(),
                pose: waypoint,
                gripper_open: false,
            });
            let r = self.instance.step_to(&mut self.grasp, &waypoint)?;
            for j in 0..n {
                applied[j] += r.per_joint_applied[j];
                blocked[j] |= r.blocked[j];
            }
            if r.any_blocked() || r.success_after {
                break;
            }
        }
        Ok(Execution {
            kind: ExecKind::Manipulate,
            blocked,
            applied,
            achieved: self.grasp.grasp_pose,
            success: self.instance.is_success(),
            micro,
        })
    }

    /// Action vector for the current gripper state (a no-op command).
    pub fn hold_action(&self) -> [f64; 10] {
        pose_to_action(&self.grasp.grasp_pose, self.grasp.gripper_open)
    }
}

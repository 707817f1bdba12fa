//! Helpers shared by the integration tests: random manipulation sequences
//! driven directly through `grasp` / `step_to`.

#![allow(dead_code)]

use artilab::articulation::{grasp, GraspState, ObjectInstance, StepResult};
use artilab::geometry::{axis_angle, Pose};
use nalgebra::Vector3;
use rand::Rng;

/// One random step of a manipulation sequence.
#[derive(Debug, Clone)]
pub enum Op {
    Grasp(usize),
    Step(Pose),
}

/// Random target for the grasped part: a screw motion along one joint of its
/// chain (overshooting the nominal range on purpose), plus a small off-axis
/// perturbation the kinematics must discard.
pub fn random_target<R: Rng>(inst: &ObjectInstance, part: usize, rng: &mut R) -> Pose {
    let chain = inst.chain(part);
    let j = chain[rng.random_range(0..chain.len())];
    let js = &inst.joints[j];
    let span = (js.nominal_limits[1] - js.nominal_limits[0]).max(0.05);
    let value = js.value + rng.random_range(-1.2..1.2) * span;
    let mut target = inst.handle_pose_if(part, j, value).unwrap();
    if rng.random_bool(0.5) {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if axis.norm() > 1e-3 {
            target.rotation =
                axis_angle(&axis.normalize(), rng.random_range(-0.05..0.05)) * target.rotation;
        }
        target.translation += Vector3::new(
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
        );
    }
    target
}

/// Draw and execute a sequence of `len` ops. The sequence is generated
/// online because targets depend on the current state.
pub fn run_random<R: Rng>(
    inst: &mut ObjectInstance,
    len: usize,
    rng: &mut R,
    mut visit: impl FnMut(&ObjectInstance, &GraspState, &Op, Option<&StepResult>),
) {
    let mut gs = GraspState::home();
    for _ in 0..len {
        let op = if gs.part.is_none() || rng.random_bool(0.2) {
            Op::Grasp(rng.random_range(0..inst.parts.len()))
        } else {
            Op::Step(random_target(inst, gs.part.unwrap(), rng))
        };
        let res = apply(inst, &mut gs, &op);
        visit(inst, &gs, &op, res.as_ref());
    }
}

pub fn apply(inst: &mut ObjectInstance, gs: &mut GraspState, op: &Op) -> Option<StepResult> {
    match op {
        Op::Grasp(p) => {
            gs.release();
            *gs = grasp(inst, gs, *p).unwrap();
            None
        }
        Op::Step(t) => Some(inst.step_to(gs, t).unwrap()),
    }
}

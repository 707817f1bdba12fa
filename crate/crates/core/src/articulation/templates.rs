//! Box-primitive category templates. Object frame: z up, the front face looks
//! along -x toward the robot standing at the world origin.
//!
//! Joint order per category is fixed (see `mechanisms` for the slot table).

use nalgebra::Vector3;
use rand::Rng;

use super::{GenConfig, JointKind, JointSpec, Part, StaticBox};
use crate::category::Category;
use crate::geometry::Pose;
use crate::rng::Stream;

pub(super) struct Template {
    pub base_pose: Pose,
    pub parts: Vec<Part>,
    pub joints: Vec<JointSpec>,
    pub statics: Vec<StaticBox>,
    pub goal_joint: usize,
}

const KEY_RANGE: [f64; 2] = [-1.5, 1.5];
const SPIN_RANGE: [f64; 2] = [0.0, 3.0];
const BUTTON_TRAVEL: f64 = 0.025;
const OBJECT_DISTANCE: f64 = 0.55;

fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
    Vector3::new(x, y, z)
}

struct Builder<'a> {
    rng: &'a mut Stream,
    cfg: &'a GenConfig,
    parts: Vec<Part>,
    joints: Vec<JointSpec>,
    statics: Vec<StaticBox>,
}

impl<'a> Builder<'a> {
    fn jitter(&mut self, x: f64) -> f64 {
        let j = self.cfg.extent_jitter;
        if j == 0.0 {
            x
        } else {
            x * self.rng.random_range(1.0 - j..1.0 + j)
        }
    }

    fn draw(&mut self, r: [f64; 2]) -> f64 {
        if r[0] == r[1] {
            r[0]
        } else {
            self.rng.random_range(r[0]..r[1])
        }
    }

    fn body(&mut self, name: &str, center: Vector3<f64>, extents: Vector3<f64>) {
        self.statics.push(StaticBox {
            name: name.into(),
            pose: Pose::from_translation(center),
            extents,
        });
    }

    fn part(
        &mut self,
        name: &str,
        parent: Option<usize>,
        rest: Vector3<f64>,
        handle_point: Vector3<f64>,
        box_extents: Vector3<f64>,
    ) -> usize {
        let id = self.parts.len();
        self.parts.push(Part {
            id,
            name: name.into(),
            parent,
            joints: Vec::new(),
            rest: Pose::from_translation(rest),
            handle_point,
            box_extents,
        });
        id
    }

    fn joint(
        &mut self,
        part: usize,
        kind: JointKind,
        axis: Vector3<f64>,
        anchor: Vector3<f64>,
        limits: [f64; 2],
    ) -> usize {
        let id = self.joints.len();
        self.joints.push(JointSpec {
            kind,
            axis: axis.normalize(),
            anchor,
            nominal_limits: limits,
            value: 0.0,
            effective_limits: limits,
            part,
        });
        self.parts[part].joints.push(id);
        id
    }
}

pub(super) fn generate(category: Category, rng: &mut Stream, cfg: &GenConfig) -> Template {
    let pj = cfg.position_jitter;
    let (dx, dy) = if pj == 0.0 {
        (0.0, 0.0)
    } else {
        (rng.random_range(-pj..pj), rng.random_range(-pj..pj))
    };
    let base_pose = Pose::from_translation(v(OBJECT_DISTANCE + dx, dy, 0.0));
    let mut b = Builder {
        rng,
        cfg,
        parts: Vec::new(),
        joints: Vec::new(),
        statics: Vec::new(),
    };
    let goal_joint = match category {
        Category::Bottle => spin_lift(
            &mut b,
            [0.08, 0.08, 0.20],
            [0.035, 0.035, 0.03],
            false,
            "cap",
        ),
        Category::Pen => spin_lift(
            &mut b,
            [0.016, 0.016, 0.12],
            [0.018, 0.018, 0.045],
            false,
            "cap",
        ),
        Category::PressureCooker => {
            spin_lift(&mut b, [0.30, 0.30, 0.20], [0.28, 0.28, 0.03], true, "lid")
        }
        Category::CoffeeMaker => coffee_maker(&mut b),
        Category::Window => hinged_with_lever(&mut b, 0.50, 0.60, 0.03, 0.30),
        Category::Door => hinged_with_lever(&mut b, 0.60, 1.00, 0.04, 0.0),
        Category::Safe => safe(&mut b),
        Category::Microwave => microwave(&mut b),
        Category::Lamp => lamp(&mut b),
    };
    Template {
        base_pose,
        parts: b.parts,
        joints: b.joints,
        statics: b.statics,
        goal_joint,
    }
}

/// Upright body with a lid/cap that turns about z and lifts along z.
/// Joint 0 spins, joint 1 lifts (goal).
fn spin_lift(
    b: &mut Builder,
    body: [f64; 3],
    cap: [f64; 3],
    off_axis_handle: bool,
    name: &str,
) -> usize {
    let (w, d, h) = (b.jitter(body[0]), b.jitter(body[1]), b.jitter(body[2]));
    let cap_h = b.jitter(cap[2]);
    b.body("body", v(0.0, 0.0, h / 2.0), v(d, w, h));
    let rest = v(0.0, 0.0, h + cap_h / 2.0);
    let handle = if off_axis_handle {
        v(-0.4 * cap[0], 0.0, cap_h)
    } else {
        v(0.0, 0.0, cap_h / 2.0)
    };
    let p = b.part(name, None, rest, handle, v(cap[0], cap[1], cap_h));
    let lift = b.draw(b.cfg.lift_range);
    b.joint(p, JointKind::Revolute, Vector3::z(), rest, SPIN_RANGE);
    b.joint(p, JointKind::Prismatic, Vector3::z(), rest, [0.0, lift])
}

/// Portafilter under the group head: turns about z, pulls down along -z.
fn coffee_maker(b: &mut Builder) -> usize {
    let (d, w, h) = (b.jitter(0.25), b.jitter(0.20), b.jitter(0.35));
    b.body("body", v(0.0, 0.0, h / 2.0), v(d, w, h));
    let rest = v(-d / 2.0 - 0.05, 0.0, 0.45 * h);
    let p = b.part(
        "portafilter",
        None,
        rest,
        v(-0.10, 0.0, 0.0),
        v(0.08, 0.08, 0.04),
    );
    let travel = b.draw(b.cfg.lift_range);
    b.joint(p, JointKind::Revolute, Vector3::z(), rest, SPIN_RANGE);
    b.joint(p, JointKind::Prismatic, -Vector3::z(), rest, [0.0, travel])
}

/// Door or window panel hinged on its left edge, with a lever handle riding
/// on the panel. Joint 0 is the hinge (goal), joint 1 the lever (key).
fn hinged_with_lever(b: &mut Builder, width: f64, height: f64, thick: f64, sill: f64) -> usize {
    let (w, h) = (b.jitter(width), b.jitter(height));
    let zc = sill + h / 2.0;
    b.body("post_left", v(0.0, -w / 2.0 - 0.03, zc), v(0.06, 0.06, h));
    b.body("post_right", v(0.0, w / 2.0 + 0.03, zc), v(0.06, 0.06, h));
    b.body(
        "lintel",
        v(0.0, 0.0, sill + h + 0.03),
        v(0.06, w + 0.12, 0.06),
    );
    let hi = b.draw(b.cfg.hinge_limit_range);
    let panel = b.part(
        "panel",
        None,
        v(0.0, 0.0, zc),
        v(-thick / 2.0 - 0.01, w / 2.0 - 0.03, -0.25 * h),
        v(thick, w, h),
    );
    let hinge = b.joint(
        panel,
        JointKind::Revolute,
        Vector3::z(),
        v(0.0, -w / 2.0, zc),
        [0.0, hi],
    );
    let pivot = v(-thick / 2.0 - 0.02, w / 2.0 - 0.08, 0.0);
    let lever = b.part(
        "handle",
        Some(panel),
        pivot,
        v(-0.02, -0.07, 0.0),
        v(0.03, 0.12, 0.02),
    );
    b.joint(lever, JointKind::Revolute, Vector3::x(), pivot, KEY_RANGE);
    hinge
}

/// Door with handle (goal) plus a dial knob on the door (key).
fn safe(b: &mut Builder) -> usize {
    let (d, w, h) = (b.jitter(0.40), b.jitter(0.40), b.jitter(0.40));
    b.body("body", v(0.0, 0.0, h / 2.0), v(d, w, h));
    let hi = b.draw(b.cfg.hinge_limit_range);
    let x = -d / 2.0 - 0.01;
    let door = b.part(
        "door",
        None,
        v(x, 0.0, h / 2.0),
        v(-0.04, 0.45 * w - 0.05, 0.0),
        v(0.02, 0.9 * w, 0.9 * h),
    );
    let hinge = b.joint(
        door,
        JointKind::Revolute,
        Vector3::z(),
        v(x, -0.45 * w, h / 2.0),
        [0.0, hi],
    );
    let knob_at = v(-0.025, -0.15 * w, 0.2 * h);
    let knob = b.part(
        "knob",
        Some(door),
        knob_at,
        v(-0.03, 0.0, 0.0),
        v(0.03, 0.05, 0.05),
    );
    b.joint(knob, JointKind::Revolute, Vector3::x(), knob_at, KEY_RANGE);
    hinge
}

/// Door with handle (goal) plus a push button on the side panel (key).
fn microwave(b: &mut Builder) -> usize {
    let (d, w, h) = (b.jitter(0.35), b.jitter(0.50), b.jitter(0.30));
    b.body("body", v(0.0, 0.0, h / 2.0), v(d, w, h));
    let hi = b.draw(b.cfg.hinge_limit_range);
    let x = -d / 2.0 - 0.01;
    let door = b.part(
        "door",
        None,
        v(x, -0.15 * w, h / 2.0),
        v(-0.04, 0.35 * w - 0.04, 0.0),
        v(0.02, 0.7 * w, 0.9 * h),
    );
    let hinge = b.joint(
        door,
        JointKind::Revolute,
        Vector3::z(),
        v(x, -w / 2.0, h / 2.0),
        [0.0, hi],
    );
    let at = v(x, 0.35 * w, 0.7 * h);
    let button = b.part("button", None, at, v(-0.02, 0.0, 0.0), v(0.02, 0.04, 0.04));
    b.joint(
        button,
        JointKind::Prismatic,
        Vector3::x(),
        at,
        [0.0, BUTTON_TRAVEL],
    );
    hinge
}

/// Lamp base with a combined button/knob that can be pushed down or turned.
/// Joint 0 pushes, joint 1 turns.
fn lamp(b: &mut Builder) -> usize {
    let (w, h) = (b.jitter(0.16), b.jitter(0.35));
    b.body("base", v(0.0, 0.0, 0.025), v(w, w, 0.05));
    b.body("stem", v(0.04, 0.0, 0.05 + h / 2.0), v(0.03, 0.03, h));
    b.body("shade", v(0.04, 0.0, 0.05 + h), v(0.18, 0.18, 0.10));
    let at = v(-0.04, 0.0, 0.065);
    let knob = b.part("knob", None, at, v(0.0, 0.0, 0.015), v(0.035, 0.035, 0.03));
    let push = b.joint(
        knob,
        JointKind::Prismatic,
        -Vector3::z(),
        at,
        [0.0, BUTTON_TRAVEL],
    );
    b.joint(knob, JointKind::Revolute, Vector3::z(), at, KEY_RANGE);
    push
}

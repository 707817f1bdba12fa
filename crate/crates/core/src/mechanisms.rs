//! Hidden internal mechanisms. Each is a pure state machine over joint values
//! that emits effective-limit overrides and an updated hidden state.
//!
//! Joint slots are fixed per category template:
//!
//! | family              | joint 0          | joint 1         |
//! |---------------------|------------------|-----------------|
//! | rotate & slide      | revolute (turn)  | prismatic (slide)|
//! | lock on handle      | hinge (goal)     | handle (key)    |
//! | lock + switch contact | hinge (goal)   | knob/button (key)|
//! | push / rotate       | prismatic (push) | revolute (turn) |

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::category::{Category, Family};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LampMode {
    Push,
    RotateCw,
    RotateCcw,
}

impl LampMode {
    pub const ALL: [LampMode; 3] = [LampMode::Push, LampMode::RotateCw, LampMode::RotateCcw];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum MechanismState {
    Lock {
        locked: bool,
        key_joint: usize,
        unlock_angle: f64,
        direction: i8,
        goal_joint: usize,
    },
    RotateSlide {
        release_angle: f64,
        rev_joint: usize,
        pris_joint: usize,
        /// Set once the revolute joint reaches the release angle; never reset.
        released: bool,
    },
    PushRotate {
        mode: LampMode,
        press_depth: f64,
        turn_angle: f64,
        latch_on: bool,
        pris_joint: usize,
        rev_joint: usize,
    },
    LockSwitchContact {
        locked: bool,
        key_joint: usize,
        key_threshold: f64,
        key_direction: i8,
        goal_joint: usize,
    },
}

/// Effective-limit replacements keyed by joint index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LimitOverride(pub BTreeMap<usize, [f64; 2]>);

impl LimitOverride {
    pub fn get(&self, joint: usize) -> Option<[f64; 2]> {
        self.0.get(&joint).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HiddenPriors {
    pub p_lock: f64,
    /// Unlock, release and turn angles (rad).
    pub theta_range: [f64; 2],
    /// Button press depths (m).
    pub press_range: [f64; 2],
}

impl Default for HiddenPriors {
    fn default() -> Self {
        Self {
            p_lock: 0.5,
            theta_range: [0.3, 1.2],
            press_range: [0.005, 0.02],
        }
    }
}

impl HiddenPriors {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_lock) {
            return Err(Error::InvalidRange {
                name: "p_lock",
                lo: self.p_lock,
                hi: self.p_lock,
            });
        }
        check_range("theta_range", self.theta_range)?;
        check_range("press_range", self.press_range)?;
        Ok(())
    }
}

pub(crate) fn check_range(name: &'static str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] {
        return Err(Error::InvalidRange {
            name,
            lo: r[0],
            hi: r[1],
        });
    }
    Ok(())
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn sign<R: Rng>(rng: &mut R) -> i8 {
    if rng.random_bool(0.5) {
        1
    } else {
        -1
    }
}

/// Draw the hidden state of a fresh instance.
pub fn sample_hidden<R: Rng>(
    category: Category,
    rng: &mut R,
    priors: &HiddenPriors,
) -> Result<MechanismState> {
    priors.validate()?;
    Ok(match category.family() {
        Family::RotateSlide => MechanismState::RotateSlide {
            release_angle: uniform(rng, priors.theta_range),
            rev_joint: 0,
            pris_joint: 1,
            released: false,
        },
        Family::LockOnHandle => {
            let locked = rng.random_bool(priors.p_lock);
            let direction = sign(rng);
            let unlock_angle = uniform(rng, priors.theta_range);
            MechanismState::Lock {
                locked,
                key_joint: 1,
                unlock_angle,
                direction,
                goal_joint: 0,
            }
        }
        Family::LockSwitchContact => {
            let locked = rng.random_bool(priors.p_lock);
            let (key_threshold, key_direction) = if category == Category::Microwave {
                (uniform(rng, priors.press_range), 1)
            } else {
                let d = sign(rng);
                (uniform(rng, priors.theta_range), d)
            };
            MechanismState::LockSwitchContact {
                locked,
                key_joint: 1,
                key_threshold,
                key_direction,
                goal_joint: 0,
            }
        }
        Family::PushRotate => {
            let mode = LampMode::ALL[rng.random_range(0..3)];
            MechanismState::PushRotate {
                mode,
                press_depth: uniform(rng, priors.press_range),
                turn_angle: uniform(rng, priors.theta_range),
                latch_on: false,
                pris_joint: 0,
                rev_joint: 1,
            }
        }
    })
}

const CLOSED: [f64; 2] = [0.0, 0.0];

fn directional(nominal: [f64; 2], direction: i8) -> [f64; 2] {
    if direction >= 0 {
        [nominal[0].max(0.0), nominal[1]]
    } else {
        [nominal[0], nominal[1].min(0.0)]
    }
}

/// Run one mechanism update against the current joint values.
///
/// Total over valid inputs and idempotent: applying twice with unchanged
/// joints yields identical outputs.
pub fn apply_mechanism(
    state: &MechanismState,
    values: &[f64],
    nominal: &[[f64; 2]],
) -> (MechanismState, LimitOverride) {
    let mut next = *state;
    let mut ov = BTreeMap::new();
    match &mut next {
        MechanismState::Lock {
            locked,
            key_joint,
            unlock_angle,
            direction,
            goal_joint,
        } => {
            if *locked && f64::from(*direction) * values[*key_joint] >= *unlock_angle {
                *locked = false;
            }
            ov.insert(*key_joint, directional(nominal[*key_joint], *direction));
            ov.insert(
                *goal_joint,
                if *locked {
                    CLOSED
                } else {
                    nominal[*goal_joint]
                },
            );
        }
        MechanismState::LockSwitchContact {
            locked,
            key_joint,
            key_threshold,
            key_direction,
            goal_joint,
        } => {
            if *locked && f64::from(*key_direction) * values[*key_joint] >= *key_threshold {
                *locked = false;
            }
            ov.insert(*key_joint, directional(nominal[*key_joint], *key_direction));
            ov.insert(
                *goal_joint,
                if *locked {
                    CLOSED
                } else {
                    nominal[*goal_joint]
                },
            );
        }
        MechanismState::RotateSlide {
            release_angle,
            rev_joint,
            pris_joint,
            released,
        } => {
            if values[*rev_joint] >= *release_angle {
                *released = true;
            }
            ov.insert(
                *pris_joint,
                if *released {
                    nominal[*pris_joint]
                } else {
                    CLOSED
                },
            );
        }
        MechanismState::PushRotate {
            mode,
            press_depth,
            turn_angle,
            latch_on,
            pris_joint,
            rev_joint,
        } => {
            let (pris, rev) = match mode {
                LampMode::Push => (nominal[*pris_joint], CLOSED),
                LampMode::RotateCw => (CLOSED, directional(nominal[*rev_joint], -1)),
                LampMode::RotateCcw => (CLOSED, directional(nominal[*rev_joint], 1)),
            };
            ov.insert(*pris_joint, pris);
            ov.insert(*rev_joint, rev);
            let crossed = match mode {
                LampMode::Push => values[*pris_joint] >= *press_depth,
                LampMode::RotateCw => -values[*rev_joint] >= *turn_angle,
                LampMode::RotateCcw => values[*rev_joint] >= *turn_angle,
            };
            if crossed {
                *latch_on = true;
            }
        }
    }
    (next, LimitOverride(ov))
}

impl MechanismState {
    pub fn locked(&self) -> Option<bool> {
        match self {
            MechanismState::Lock { locked, .. }
            | MechanismState::LockSwitchContact { locked, .. } => Some(*locked),
            _ => None,
        }
    }

    pub fn latch_on(&self) -> Option<bool> {
        match self {
            MechanismState::PushRotate { latch_on, .. } => Some(*latch_on),
            _ => None,
        }
    }

    /// Whether this hidden state defeats the naive first attempt, i.e. an
    /// adaptive expert must probe and recover before succeeding.
    pub fn unfavorable(&self) -> bool {
        match self {
            MechanismState::Lock { locked, .. }
            | MechanismState::LockSwitchContact { locked, .. } => *locked,
            MechanismState::RotateSlide { release_angle, .. } => *release_angle > 0.0,
            MechanismState::PushRotate { .. } => true,
        }
    }

    /// Whether the precondition that gates success has held: the key crossed
    /// its threshold in the hidden direction, the revolute joint reached the
    /// release angle, or the mode joint crossed its threshold.
    pub fn precondition_met(&self, values: &[f64]) -> bool {
        match *self {
            MechanismState::Lock {
                locked,
                key_joint,
                unlock_angle,
                direction,
                ..
            } => !locked || f64::from(direction) * values[key_joint] >= unlock_angle,
            MechanismState::LockSwitchContact {
                locked,
                key_joint,
                key_threshold,
                key_direction,
                ..
            } => !locked || f64::from(key_direction) * values[key_joint] >= key_threshold,
            MechanismState::RotateSlide {
                release_angle,
                rev_joint,
                ..
            } => values[rev_joint] >= release_angle,
            MechanismState::PushRotate {
                mode,
                press_depth,
                turn_angle,
                pris_joint,
                rev_joint,
                ..
            } => match mode {
                LampMode::Push => values[pris_joint] >= press_depth,
                LampMode::RotateCw => -values[rev_joint] >= turn_angle,
                LampMode::RotateCcw => values[rev_joint] >= turn_angle,
            },
        }
    }
}

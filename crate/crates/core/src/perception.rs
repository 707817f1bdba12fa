//! Partial observations of the visible state, synthetic point clouds with
//! farthest point sampling, and per-dimension normalization.
//!
//! Observation layout (default `P_MAX = 4`, `J_MAX = 6`, 41 values):
//!
//! | offset | len       | content                                   |
//! |--------|-----------|-------------------------------------------|
//! | 0      | 3         | end-effector position (m, world)          |
//! | 3      | 6         | end-effector rotation, 6D                  |
//! | 9      | 1         | gripper open (1) / closed (0)             |
//! | 10     | P_MAX     | grasped-part one-hot                      |
//! | 10+P   | J_MAX     | joint values, zero padded                 |
//! | 10+P+J | 3·P_MAX   | handle positions (m, world), zero padded  |
//! | ...    | 9         | category one-hot                          |

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::articulation::{GraspState, ObjectInstance};
use crate::category::Category;
use crate::error::{Error, Result};
use crate::geometry::{rot6d_encode, Pose};
use crate::rng::{self, tag};

pub const P_MAX: usize = 4;
pub const J_MAX: usize = 6;
pub const OBS_LAYOUT_VERSION: u32 = 1;
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub p_max: usize,
    pub j_max: usize,
}

impl Default for ObsLayout {
    fn default() -> Self {
        Self {
            p_max: P_MAX,
            j_max: J_MAX,
        }
    }
}

impl ObsLayout {
    pub fn dim(&self) -> usize {
        3 + 6 + 1 + self.p_max + self.j_max + 3 * self.p_max + Category::ALL.len()
    }

    pub fn grasp_offset(&self) -> usize {
        10
    }

    pub fn joints_offset(&self) -> usize {
        10 + self.p_max
    }

    pub fn handles_offset(&self) -> usize {
        10 + self.p_max + self.j_max
    }

    pub fn category_offset(&self) -> usize {
        10 + 4 * self.p_max + self.j_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
    pub layout_version: u32,
}

pub fn observe(instance: &ObjectInstance, grasp: &GraspState) -> Observation {
    observe_with(instance, grasp, &ObsLayout::default())
}

/// Deterministic function of the visible state only: end-effector pose,
/// gripper, attachment, joint values and part geometry. Mechanism payload and
/// effective limits are never read.
pub fn observe_with(
    instance: &ObjectInstance,
    grasp: &GraspState,
    layout: &ObsLayout,
) -> Observation {
    let mut v = vec![0.0; layout.dim()];
    let ee = &grasp.grasp_pose;
    v[0..3].copy_from_slice(ee.translation.as_slice());
    v[3..9].copy_from_slice(&rot6d_encode(&ee.rotation));
    v[9] = if grasp.gripper_open { 1.0 } else { 0.0 };
    if let Some(p) = grasp.part {
        if p < layout.p_max {
            v[layout.grasp_offset() + p] = 1.0;
        }
    }
    for (i, j) in instance.joints.iter().take(layout.j_max).enumerate() {
        v[layout.joints_offset() + i] = j.value;
    }
    for p in 0..instance.parts.len().min(layout.p_max) {
        let h = instance
            .handle_pose(p)
            .expect("part index in range")
            .translation;
        let o = layout.handles_offset() + 3 * p;
        v[o..o + 3].copy_from_slice(h.as_slice());
    }
    v[layout.category_offset() + instance.category.index()] = 1.0;
    Observation {
        values: v,
        layout_version: OBS_LAYOUT_VERSION,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Moving part each point lies on; `None` for static body geometry.
    pub part_ids: Option<Vec<Option<usize>>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            part_ids: self
                .part_ids
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i]).collect()),
        }
    }
}

struct Surface {
    pose: Pose,
    extents: Vector3<f64>,
    part: Option<usize>,
}

fn face_areas(e: &Vector3<f64>) -> [f64; 6] {
    let (x, y, z) = (e.x, e.y, e.z);
    [y * z, y * z, x * z, x * z, x * y, x * y]
}

/// Point on face `f` of an axis-aligned box centred at the origin, using two
/// uniform coordinates in `[0, 1)`.
pub(crate) fn face_point(e: &Vector3<f64>, f: usize, u: f64, w: f64) -> Vector3<f64> {
    let h = e / 2.0;
    let a = |ext: f64, t: f64| (t - 0.5) * ext;
    let sign = if f % 2 == 0 { -1.0 } else { 1.0 };
    match f / 2 {
        0 => Vector3::new(sign * h.x, a(e.y, u), a(e.z, w)),
        1 => Vector3::new(a(e.x, u), sign * h.y, a(e.z, w)),
        _ => Vector3::new(a(e.x, u), a(e.y, w), sign * h.z),
    }
}

/// `n` points uniform over the union of box surfaces (area weighted), posed
/// by the current joint values. The same seed draws the same local surface
/// coordinates regardless of joint values, so each part's points move rigidly.
pub fn sample_points(instance: &ObjectInstance, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Empty("point request"));
    }
    let mut surfaces: Vec<Surface> = instance
        .statics
        .iter()
        .map(|s| Surface {
            pose: instance.base_pose * s.pose,
            extents: s.extents,
            part: None,
        })
        .collect();
    for (i, p) in instance.parts.iter().enumerate() {
        surfaces.push(Surface {
            pose: instance.part_pose(i)?,
            extents: p.box_extents,
            part: Some(i),
        });
    }
    let mut cumulative = Vec::with_capacity(surfaces.len() * 6);
    let mut total = 0.0;
    for s in &surfaces {
        for a in face_areas(&s.extents) {
            total += a;
            cumulative.push(total);
        }
    }
    let mut rng = rng::stream(&[tag::POINTS, seed]);
    let mut points = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let r: f64 = rng.random::<f64>() * total;
        let k = cumulative
            .partition_point(|&c| c <= r)
            .min(cumulative.len() - 1);
        let (s, f) = (&surfaces[k / 6], k % 6);
        let (u, w): (f64, f64) = (rng.random(), rng.random());
        points.push(s.pose.transform_point(&face_point(&s.extents, f, u, w)));
        ids.push(s.part);
    }
    Ok(PointCloud {
        points,
        part_ids: Some(ids),
    })
}

/// Greedy farthest point sampling. The first index is `start`; each next
/// index maximizes the distance to the chosen set, ties going to the lowest
/// index.
pub fn fps(points: &[Vector3<f64>], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m > n {
        return Err(Error::TooManyPoints {
            requested: m,
            available: n,
        });
    }
    if m == 0 {
        return Err(Error::Empty("fps selection"));
    }
    if start >= n {
        return Err(Error::TooManyPoints {
            requested: start + 1,
            available: n,
        });
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut cur = start;
    for _ in 0..m {
        chosen.push(cur);
        taken[cur] = true;
        let p = points[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = (points[i] - p).norm_squared();
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(chosen)
}

/// Per-dimension mean and (population) standard deviation, std floored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn compute<'a, I>(rows: I, dim: usize) -> Result<NormStats>
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        for r in rows.clone() {
            if r.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            for (s, x) in sum.iter_mut().zip(r) {
                *s += x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("statistics input"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .map(|v| (v / n as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() || self.std.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

pub fn normalize(x: &[f64], stats: &NormStats) -> Result<Vec<f64>> {
    stats.check(x)?;
    Ok(x.iter()
        .zip(&stats.mean)
        .zip(&stats.std)
        .map(|((x, m), s)| (x - m) / s)
        .collect())
}

pub fn denormalize(z: &[f64], stats: &NormStats) -> Result<Vec<f64>> {
    stats.check(z)?;
    Ok(z.iter()
        .zip(&stats.mean)
        .zip(&stats.std)
        .map(|((z, m), s)| z * s + m)
        .collect())
}

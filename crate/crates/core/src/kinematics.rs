//! Fixed 22-joint body tree in SMPL joint order and forward kinematics.
//!
//! Bone offsets are constants (meters, y up, +x to the body's left, +z
//! forward) and can be replaced through a skeleton file:
//!
//! ```text
//! # name        parent      x      y      z
//! pelvis        -           0      0      0
//! left_hip      pelvis      0.09  -0.09   0
//! ...
//! ```
//!
//! Exactly the 22 joint names below must appear, each with its canonical
//! parent; the root's parent is written `-`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::rotmath::{rot6d_to_matrix, Rot6D, RotationMatrix};
use crate::tensor::{Real, Tensor};

pub const JOINT_COUNT: usize = 22;
pub const PELVIS: usize = 0;
pub const HEAD: usize = 15;
pub const LEFT_WRIST: usize = 20;
pub const RIGHT_WRIST: usize = 21;

/// Joints whose world poses act as the three trackers (head, left, right).
pub const TRACKER_JOINTS: [usize; 3] = [HEAD, LEFT_WRIST, RIGHT_WRIST];

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

pub const PARENTS: [Option<usize>; JOINT_COUNT] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
];

const DEFAULT_OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],
    [0.09, -0.09, 0.0],
    [-0.09, -0.09, 0.0],
    [0.0, 0.12, 0.0],
    [0.0, -0.38, 0.0],
    [0.0, -0.38, 0.0],
    [0.0, 0.13, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, 0.05, 0.0],
    [0.0, -0.06, 0.12],
    [0.0, -0.06, 0.12],
    [0.0, 0.10, 0.0],
    [0.05, 0.08, 0.0],
    [-0.05, 0.08, 0.0],
    [0.0, 0.10, 0.0],
    [0.15, 0.0, 0.0],
    [-0.15, 0.0, 0.0],
    [0.26, 0.0, 0.0],
    [-0.26, 0.0, 0.0],
    [0.25, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
];

/// The body tree: parents are topologically sorted and the root offset is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    offsets: [Vector3<f64>; JOINT_COUNT],
}

impl Default for KinematicTree {
    fn default() -> Self {
        default_skeleton()
    }
}

/// Built-in tree: hips ±0.09 m lateral, thigh 0.38 m, shin 0.40 m, spine
/// 0.12/0.13/0.05 m, neck 0.10 m, head 0.10 m, clavicle 0.15 m, upper arm
/// 0.26 m, forearm 0.25 m, arms in a T-pose along ±x.
pub fn default_skeleton() -> KinematicTree {
    KinematicTree { offsets: DEFAULT_OFFSETS.map(|o| Vector3::new(o[0], o[1], o[2])) }
}

impl KinematicTree {
    pub fn joint_count(&self) -> usize {
        JOINT_COUNT
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        PARENTS[j]
    }

    pub fn offset(&self, j: usize) -> &Vector3<f64> {
        &self.offsets[j]
    }

    pub fn name(&self, j: usize) -> &'static str {
        JOINT_NAMES[j]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut offsets: [Option<Vector3<f64>>; JOINT_COUNT] = [None; JOINT_COUNT];
        let mut roots = 0;
        let mut count = 0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Config(format!("skeleton line {}: {msg}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", fields.len())));
            }
            count += 1;
            let j = JOINT_NAMES
                .iter()
                .position(|n| *n == fields[0])
                .ok_or_else(|| bad(format!("unknown joint {:?}", fields[0])))?;
            let parent = match fields[1] {
                "-" => {
                    roots += 1;
                    None
                }
                name => Some(
                    JOINT_NAMES
                        .iter()
                        .position(|n| *n == name)
                        .ok_or_else(|| bad(format!("unknown parent {name:?}")))?,
                ),
            };
            if parent != PARENTS[j] {
                return Err(bad(format!("joint {} has wrong parent {}", fields[0], fields[1])));
            }
            if offsets[j].is_some() {
                return Err(bad(format!("duplicate joint {}", fields[0])));
            }
            let mut xyz = [0.0; 3];
            for (k, f) in fields[2..].iter().enumerate() {
                xyz[k] = f
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("bad offset {f:?}")))?;
            }
            offsets[j] = Some(Vector3::new(xyz[0], xyz[1], xyz[2]));
        }
        if count != JOINT_COUNT {
            return Err(Error::Config(format!("skeleton needs {JOINT_COUNT} joints, found {count}")));
        }
        if roots != 1 {
            return Err(Error::Config(format!("skeleton needs a single root, found {roots}")));
        }
        let offsets = offsets.map(|o| o.expect("all joints present"));
        if offsets[PELVIS] != Vector3::zeros() {
            return Err(Error::Config("root offset must be zero".into()));
        }
        Ok(Self { offsets })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_skeleton_string(&self) -> String {
        let mut s = String::from("# name parent x y z (meters)\n");
        for j in 0..JOINT_COUNT {
            let parent = PARENTS[j].map_or("-", |p| JOINT_NAMES[p]);
            let o = &self.offsets[j];
            let _ = writeln!(s, "{} {} {} {} {}", JOINT_NAMES[j], parent, o.x, o.y, o.z);
        }
        s
    }

    /// Head height etc. at rest: cumulative offsets with all rotations identity.
    pub fn rest_positions(&self) -> [Vector3<f64>; JOINT_COUNT] {
        let mut p = [Vector3::zeros(); JOINT_COUNT];
        for j in 0..JOINT_COUNT {
            p[j] = match PARENTS[j] {
                Some(par) => p[par] + self.offsets[j],
                None => self.offsets[j],
            };
        }
        p
    }
}

/// Full-body output: 22 local joint rotations plus root translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullBodyPose {
    pub rotations: [Rot6D; JOINT_COUNT],
    pub root: Vector3<f64>,
}

impl FullBodyPose {
    pub fn identity() -> Self {
        Self { rotations: [Rot6D::IDENTITY; JOINT_COUNT], root: Vector3::zeros() }
    }

    /// From 132 values laid out joint-major, 6 per joint.
    pub fn from_flat(values: &[f64], root: Vector3<f64>) -> Self {
        let mut rotations = [Rot6D::IDENTITY; JOINT_COUNT];
        for (j, r) in rotations.iter_mut().enumerate() {
            *r = Rot6D::from_slice(&values[j * 6..j * 6 + 6]);
        }
        Self { rotations, root }
    }

    pub fn flat(&self) -> [f64; JOINT_COUNT * 6] {
        let mut out = [0.0; JOINT_COUNT * 6];
        for (j, r) in self.rotations.iter().enumerate() {
            out[j * 6..j * 6 + 6].copy_from_slice(&r.0);
        }
        out
    }

    pub fn decode(&self) -> Result<[RotationMatrix; JOINT_COUNT]> {
        let mut out = [RotationMatrix::identity(); JOINT_COUNT];
        for (o, r) in out.iter_mut().zip(&self.rotations) {
            *o = rot6d_to_matrix(r)?;
        }
        Ok(out)
    }
}

/// A sequence of full-body poses, one per frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseSequence {
    pub frames: Vec<FullBodyPose>,
}

impl PoseSequence {
    pub fn new(frames: Vec<FullBodyPose>) -> Self {
        Self { frames }
    }

    /// From a `T×132` tensor and per-frame root translations.
    pub fn from_tensor<F: Real>(rows: &Tensor<F>, roots: &[Vector3<f64>]) -> Result<Self> {
        if rows.cols() != JOINT_COUNT * 6 || roots.len() != rows.rows() {
            return Err(Error::Shape(format!(
                "pose tensor {:?} with {} roots",
                rows.shape(),
                roots.len()
            )));
        }
        let frames = (0..rows.rows())
            .map(|i| {
                let vals: Vec<f64> = rows.row(i).iter().map(|x| x.as_f64()).collect();
                FullBodyPose::from_flat(&vals, roots[i])
            })
            .collect();
        Ok(Self { frames })
    }

    /// `T×132` rotation values.
    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        Tensor::from_fn(self.frames.len(), JOINT_COUNT * 6, |i, j| {
            F::lit(self.frames[i].rotations[j / 6].0[j % 6])
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Global joint positions of every frame.
    pub fn global_positions(&self, tree: &KinematicTree) -> Result<Vec<[Vector3<f64>; JOINT_COUNT]>> {
        self.frames
            .iter()
            .map(|f| forward_kinematics(f, tree).map(|g| g.positions))
            .collect()
    }
}

/// Global joint transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalPose {
    pub positions: [Vector3<f64>; JOINT_COUNT],
    pub rotations: [RotationMatrix; JOINT_COUNT],
}

/// FK from already-decoded local rotations.
pub fn forward_kinematics_matrices(
    local: &[RotationMatrix; JOINT_COUNT],
    root: &Vector3<f64>,
    tree: &KinematicTree,
) -> GlobalPose {
    let mut positions = [Vector3::zeros(); JOINT_COUNT];
    let mut rotations = [RotationMatrix::identity(); JOINT_COUNT];
    for j in 0..JOINT_COUNT {
        match PARENTS[j] {
            None => {
                rotations[j] = local[j];
                positions[j] = root + tree.offsets[j];
            }
            Some(p) => {
                rotations[j] = rotations[p] * local[j];
                positions[j] = positions[p] + rotations[p].apply(&tree.offsets[j]);
            }
        }
    }
    GlobalPose { positions, rotations }
}

pub fn forward_kinematics(pose: &FullBodyPose, tree: &KinematicTree) -> Result<GlobalPose> {
    Ok(forward_kinematics_matrices(&pose.decode()?, &pose.root, tree))
}

/// Root translation that places the head joint at `observed_head`.
pub fn recover_root_translation(
    rotations: &[Rot6D; JOINT_COUNT],
    observed_head: &Vector3<f64>,
    tree: &KinematicTree,
) -> Result<Vector3<f64>> {
    let pose = FullBodyPose { rotations: *rotations, root: Vector3::zeros() };
    let g = forward_kinematics(&pose, tree)?;
    Ok(observed_head - g.positions[HEAD])
}

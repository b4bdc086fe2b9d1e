//! Evaluation metrics.
//!
//! | metric | unit |
//! |--------|------|
//! | MPJRE  | degrees (geodesic angle of local joint rotations) |
//! | MPJPE, part PEs | cm |
//! | MPJVE  | cm/s |
//! | Jitter | 10² m/s³ (mean L2 norm of the third positional difference) |

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, PoseSequence, JOINT_COUNT};
use crate::rotmath::{geodesic_angle_deg, rot6d_to_matrix};

pub const DEFAULT_FPS: f64 = 60.0;

pub type Positions = [Vector3<f64>; JOINT_COUNT];

/// Joint groups for the per-part position errors.
pub struct JointPartition;

impl JointPartition {
    pub const ROOT: &'static [usize] = &[0];
    pub const HAND: &'static [usize] = &[20, 21];
    pub const UPPER: &'static [usize] = &[3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21];
    pub const LOWER: &'static [usize] = &[1, 2, 4, 5, 7, 8, 10, 11];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    Root,
    Hand,
    Upper,
    Lower,
}

impl BodyPart {
    pub const ALL: [BodyPart; 4] = [BodyPart::Root, BodyPart::Hand, BodyPart::Upper, BodyPart::Lower];

    pub fn joints(self) -> &'static [usize] {
        match self {
            BodyPart::Root => JointPartition::ROOT,
            BodyPart::Hand => JointPartition::HAND,
            BodyPart::Upper => JointPartition::UPPER,
            BodyPart::Lower => JointPartition::LOWER,
        }
    }
}

fn check_pair(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!("sequences of {} and {} frames", pred.len(), gt.len())));
    }
    Ok(())
}

fn mean(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn rotation_error_sum(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    let mut s = 0.0;
    for (p, g) in pred.frames.iter().zip(&gt.frames) {
        for j in 0..JOINT_COUNT {
            s += geodesic_angle_deg(&rot6d_to_matrix(&p.rotations[j])?, &rot6d_to_matrix(&g.rotations[j])?);
        }
    }
    Ok(s)
}

pub fn mpjre(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(rotation_error_sum(pred, gt)? / (pred.len() * JOINT_COUNT) as f64)
}

fn position_error_sum(pred: &[Positions], gt: &[Positions], joints: &[usize]) -> f64 {
    pred.iter().zip(gt).map(|(p, g)| joints.iter().map(|&j| (p[j] - g[j]).norm()).sum::<f64>()).sum()
}

fn velocity_error_sum(pred: &[Positions], gt: &[Positions], fps: f64) -> f64 {
    let mut s = 0.0;
    for t in 0..pred.len().saturating_sub(1) {
        for j in 0..JOINT_COUNT {
            let vp = (pred[t + 1][j] - pred[t][j]) * fps;
            let vg = (gt[t + 1][j] - gt[t][j]) * fps;
            s += (vp - vg).norm();
        }
    }
    s
}

fn jerk_sum(pos: &[Positions], fps: f64) -> f64 {
    let mut s = 0.0;
    for t in 0..pos.len().saturating_sub(3) {
        for j in 0..JOINT_COUNT {
            let d1 = [1, 2, 3].map(|k| pos[t + k][j] - pos[t + k - 1][j]);
            let d3 = (d1[2] - d1[1]) - (d1[1] - d1[0]);
            s += (d3 * fps.powi(3)).norm();
        }
    }
    s
}

/// Mean joint distance in cm over `joints`.
pub fn positions_pe(pred: &[Positions], gt: &[Positions], joints: &[usize]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!("{} vs {} frames", pred.len(), gt.len())));
    }
    if joints.is_empty() {
        return Err(Error::Contract("empty joint selection".into()));
    }
    Ok(100.0 * position_error_sum(pred, gt, joints) / (pred.len() * joints.len()) as f64)
}

/// Mean velocity error in cm/s.
pub fn positions_ve(pred: &[Positions], gt: &[Positions], fps: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} vs {} frames", pred.len(), gt.len())));
    }
    if pred.len() < 2 {
        return Err(Error::Contract(format!("velocity error needs >= 2 frames, got {}", pred.len())));
    }
    Ok(100.0 * velocity_error_sum(pred, gt, fps) / ((pred.len() - 1) * JOINT_COUNT) as f64)
}

/// Mean jerk magnitude in 10² m/s³.
pub fn positions_jitter(pos: &[Positions], fps: f64) -> Result<f64> {
    if pos.len() < 4 {
        return Err(Error::Contract(format!("jitter needs >= 4 frames, got {}", pos.len())));
    }
    Ok(jerk_sum(pos, fps) / ((pos.len() - 3) * JOINT_COUNT) as f64 / 100.0)
}

pub fn mpjpe(pred: &PoseSequence, gt: &PoseSequence, tree: &KinematicTree) -> Result<f64> {
    part_pe_joints(pred, gt, tree, &(0..JOINT_COUNT).collect::<Vec<_>>())
}

pub fn part_pe(pred: &PoseSequence, gt: &PoseSequence, tree: &KinematicTree, part: BodyPart) -> Result<f64> {
    part_pe_joints(pred, gt, tree, part.joints())
}

fn part_pe_joints(pred: &PoseSequence, gt: &PoseSequence, tree: &KinematicTree, joints: &[usize]) -> Result<f64> {
    check_pair(pred, gt)?;
    positions_pe(&pred.global_positions(tree)?, &gt.global_positions(tree)?, joints)
}

pub fn mpjve(pred: &PoseSequence, gt: &PoseSequence, tree: &KinematicTree, fps: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("sequences of {} and {} frames", pred.len(), gt.len())));
    }
    if pred.len() < 2 {
        return Err(Error::Contract(format!("velocity error needs >= 2 frames, got {}", pred.len())));
    }
    positions_ve(&pred.global_positions(tree)?, &gt.global_positions(tree)?, fps)
}

pub fn jitter(seq: &PoseSequence, tree: &KinematicTree, fps: f64) -> Result<f64> {
    if seq.len() < 4 {
        return Err(Error::Contract(format!("jitter needs >= 4 frames, got {}", seq.len())));
    }
    positions_jitter(&seq.global_positions(tree)?, fps)
}

/// Running sums so several clips pool into one report weighted by the
/// number of terms each metric averages over.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSums {
    rot: (f64, usize),
    pos: (f64, usize),
    vel: (f64, usize),
    jerk: (f64, usize),
    parts: [(f64, usize); 4],
    frames: usize,
}

impl MetricSums {
    /// Adds one predicted/ground-truth sequence pair.
    pub fn add(&mut self, pred: &PoseSequence, gt: &PoseSequence, tree: &KinematicTree, fps: f64) -> Result<()> {
        check_pair(pred, gt)?;
        let n = pred.len();
        let pp = pred.global_positions(tree)?;
        let gp = gt.global_positions(tree)?;
        let all: Vec<usize> = (0..JOINT_COUNT).collect();
        self.rot.0 += rotation_error_sum(pred, gt)?;
        self.rot.1 += n * JOINT_COUNT;
        self.pos.0 += position_error_sum(&pp, &gp, &all);
        self.pos.1 += n * JOINT_COUNT;
        self.vel.0 += velocity_error_sum(&pp, &gp, fps);
        self.vel.1 += n.saturating_sub(1) * JOINT_COUNT;
        self.jerk.0 += jerk_sum(&pp, fps);
        self.jerk.1 += n.saturating_sub(3) * JOINT_COUNT;
        for (acc, part) in self.parts.iter_mut().zip(BodyPart::ALL) {
            acc.0 += position_error_sum(&pp, &gp, part.joints());
            acc.1 += n * part.joints().len();
        }
        self.frames += n;
        Ok(())
    }

    pub fn merge(&mut self, o: &MetricSums) {
        for (a, b) in [(&mut self.rot, o.rot), (&mut self.pos, o.pos), (&mut self.vel, o.vel), (&mut self.jerk, o.jerk)] {
            a.0 += b.0;
            a.1 += b.1;
        }
        for (a, b) in self.parts.iter_mut().zip(o.parts) {
            a.0 += b.0;
            a.1 += b.1;
        }
        self.frames += o.frames;
    }

    pub fn report(&self, fps: f64) -> MetricsReport {
        let m = |(s, c): (f64, usize)| mean(s, c);
        MetricsReport {
            mpjre: m(self.rot),
            mpjpe: 100.0 * m(self.pos),
            mpjve: 100.0 * m(self.vel),
            jitter: m(self.jerk) / 100.0,
            root_pe: 100.0 * m(self.parts[0]),
            hand_pe: 100.0 * m(self.parts[1]),
            upper_pe: 100.0 * m(self.parts[2]),
            lower_pe: 100.0 * m(self.parts[3]),
            frames: self.frames,
            fps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mpjre: f64,
    pub mpjpe: f64,
    pub mpjve: f64,
    pub jitter: f64,
    pub root_pe: f64,
    pub hand_pe: f64,
    pub upper_pe: f64,
    pub lower_pe: f64,
    pub frames: usize,
    pub fps: f64,
}

impl MetricsReport {
    pub fn compute(pred: &PoseSequence, gt: &PoseSequence, tree: &KinematicTree, fps: f64) -> Result<Self> {
        let mut s = MetricSums::default();
        s.add(pred, gt, tree, fps)?;
        Ok(s.report(fps))
    }

    /// `(name, value, unit)` rows.
    pub fn rows(&self) -> Vec<(&'static str, f64, &'static str)> {
        vec![
            ("mpjre", self.mpjre, "deg"),
            ("mpjpe", self.mpjpe, "cm"),
            ("mpjve", self.mpjve, "cm/s"),
            ("jitter", self.jitter, "1e2 m/s^3"),
            ("root_pe", self.root_pe, "cm"),
            ("hand_pe", self.hand_pe, "cm"),
            ("upper_pe", self.upper_pe, "cm"),
            ("lower_pe", self.lower_pe, "cm"),
            ("frames", self.frames as f64, "count"),
            ("fps", self.fps, "Hz"),
        ]
    }

    /// One `name value unit` line per metric.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, v, unit) in self.rows() {
            let _ = writeln!(s, "{name} {v:.6} {unit}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct")
    }
}

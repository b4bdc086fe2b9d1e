//! Synthetic motion clips, derived tracker streams and dataset files.

mod manifest;
mod motn;
mod synth;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::featurize::{TrackedFrame, TrackerPose};
use crate::kinematics::{forward_kinematics_matrices, FullBodyPose, KinematicTree, PoseSequence, JOINT_COUNT, TRACKER_JOINTS};
use crate::rotmath::{axis_angle_to_matrix, matrix_to_rot6d, AxisAngle, RotationMatrix};

pub use manifest::{split_dataset, DatasetManifest, ManifestEntry, Split};
pub use motn::{load_clip, read_clip, save_clip, write_clip, MOTN_HEADER_LEN, MOTN_MAGIC};
pub use synth::{synth_motion, MotionKind, MotionSpec};

/// One frame of a clip: root translation (m) and local axis-angle rotations,
/// stored at the precision of the file format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipFrame {
    pub root: [f32; 3],
    pub rotations: [[f32; 3]; JOINT_COUNT],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub fps: u32,
    pub clip_id: u32,
    pub frames: Vec<ClipFrame>,
}

impl MotionClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Config(format!("clip needs >= 2 frames, has {}", self.frames.len())));
        }
        if self.fps == 0 {
            return Err(Error::Config("clip fps must be positive".into()));
        }
        let finite = self
            .frames
            .iter()
            .all(|f| f.root.iter().chain(f.rotations.iter().flatten()).all(|x| x.is_finite()));
        if !finite {
            return Err(Error::NonFinite("clip values"));
        }
        Ok(())
    }

    pub fn local_rotations(&self, i: usize) -> Result<[RotationMatrix; JOINT_COUNT]> {
        let f = &self.frames[i];
        let mut out = [RotationMatrix::identity(); JOINT_COUNT];
        for (o, aa) in out.iter_mut().zip(&f.rotations) {
            *o = axis_angle_to_matrix(AxisAngle::new(aa[0] as f64, aa[1] as f64, aa[2] as f64))?;
        }
        Ok(out)
    }

    pub fn root(&self, i: usize) -> Vector3<f64> {
        let r = self.frames[i].root;
        Vector3::new(r[0] as f64, r[1] as f64, r[2] as f64)
    }

    pub fn pose(&self, i: usize) -> Result<FullBodyPose> {
        let rots = self.local_rotations(i)?;
        Ok(FullBodyPose { rotations: rots.map(|r| matrix_to_rot6d(&r)), root: self.root(i) })
    }

    /// Ground-truth full-body supervision in model output form.
    pub fn pose_sequence(&self) -> Result<PoseSequence> {
        (0..self.len()).map(|i| self.pose(i)).collect::<Result<Vec<_>>>().map(PoseSequence::new)
    }
}

/// Head and wrist world poses of every frame, as a headset and two
/// controllers would report them.
pub fn derive_sparse_stream(clip: &MotionClip, tree: &KinematicTree) -> Result<Vec<TrackedFrame>> {
    clip.validate()?;
    (0..clip.len())
        .map(|i| {
            let g = forward_kinematics_matrices(&clip.local_rotations(i)?, &clip.root(i), tree);
            let trackers = TRACKER_JOINTS.map(|j| TrackerPose { position: g.positions[j], rotation: g.rotations[j] });
            Ok(TrackedFrame { t: i as u64, trackers })
        })
        .collect()
}

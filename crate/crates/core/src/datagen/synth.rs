use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClipFrame, MotionClip};
use crate::error::{Error, Result};
use crate::kinematics::JOINT_COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Walk,
    Run,
    Jump,
    Idle,
}

/// Per-kind gait constants. Angles in radians, speeds in m/s, heights in m.
struct Gait {
    freq_hz: f64,
    hip: f64,
    knee: f64,
    shoulder: f64,
    elbow: f64,
    speed: f64,
    bob: f64,
    jump: f64,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [MotionKind::Walk, MotionKind::Run, MotionKind::Jump, MotionKind::Idle];

    fn gait(self) -> Gait {
        match self {
            MotionKind::Walk => Gait { freq_hz: 1.0, hip: 0.45, knee: 0.7, shoulder: 0.35, elbow: 0.3, speed: 1.3, bob: 0.02, jump: 0.0 },
            MotionKind::Run => Gait { freq_hz: 1.6, hip: 0.8, knee: 1.4, shoulder: 0.6, elbow: 1.0, speed: 3.2, bob: 0.05, jump: 0.0 },
            MotionKind::Jump => Gait { freq_hz: 0.8, hip: 0.5, knee: 1.2, shoulder: 1.0, elbow: 0.4, speed: 0.0, bob: 0.0, jump: 0.35 },
            MotionKind::Idle => Gait { freq_hz: 0.2, hip: 0.0, knee: 0.0, shoulder: 0.02, elbow: 0.02, speed: 0.0, bob: 0.003, jump: 0.0 },
        }
    }

    /// Cycle length in whole frames at `fps`.
    pub fn period_frames(self, fps: u32) -> usize {
        ((fps as f64 / self.gait().freq_hz).round() as usize).max(2)
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Walk => "walk",
            MotionKind::Run => "run",
            MotionKind::Jump => "jump",
            MotionKind::Idle => "idle",
        }
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown motion kind {s:?} (walk|run|jump|idle)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub kind: MotionKind,
    pub duration_s: f64,
    pub fps: u32,
}

const PELVIS_HEIGHT: f64 = 0.93;
/// Resting arm drop from the T-pose.
const ARM_DROP: f64 = 1.2;

/// Procedural clip: phase-locked sinusoids on hips, knees, shoulders and
/// elbows, forward drift for walk/run, a ballistic arc for jump.
///
/// The seed picks the phase offset, heading and a ±10% amplitude scale; the
/// cycle is always exactly [`MotionKind::period_frames`] frames long.
pub fn synth_motion(spec: &MotionSpec, seed: u64) -> Result<MotionClip> {
    if spec.fps == 0 || !spec.duration_s.is_finite() {
        return Err(Error::Config(format!("invalid motion spec {spec:?}")));
    }
    let n = (spec.duration_s * spec.fps as f64).round();
    if n < 2.0 {
        return Err(Error::Config(format!("clip of {n} frames; need at least 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase0 = rng.random_range(0.0..TAU);
    let heading = rng.random_range(-PI..PI);
    let scale = rng.random_range(0.9..1.1);
    let g = spec.kind.gait();
    let period = spec.kind.period_frames(spec.fps) as f64;
    let dt = 1.0 / spec.fps as f64;
    let (sh, ch) = heading.sin_cos();

    let frames = (0..n as usize)
        .map(|i| {
            let phi = TAU * i as f64 / period + phase0;
            let (s, c) = phi.sin_cos();
            let mut rot = [[0.0f64; 3]; JOINT_COUNT];
            rot[0] = [0.0, heading, 0.0];
            rot[1][0] = -g.hip * scale * s;
            rot[2][0] = g.hip * scale * s;
            rot[4][0] = g.knee * scale * 0.5 * (1.0 - c);
            rot[5][0] = g.knee * scale * 0.5 * (1.0 + c);
            rot[3][1] = 0.05 * scale * s;
            rot[9][0] = 0.02 * scale * c;
            rot[15][0] = 0.05 * scale * (0.5 * phi).sin();
            rot[16] = [g.shoulder * scale * s, 0.0, -ARM_DROP];
            rot[17] = [-g.shoulder * scale * s, 0.0, ARM_DROP];
            rot[18][1] = g.elbow * scale * 0.5 * (1.0 + c);
            rot[19][1] = -g.elbow * scale * 0.5 * (1.0 - c);

            let dist = g.speed * i as f64 * dt;
            let frac = (phi / TAU).rem_euclid(1.0);
            let y = PELVIS_HEIGHT + g.bob * (2.0 * phi).cos() + 4.0 * g.jump * frac * (1.0 - frac);
            let root = [dist * sh, y, dist * ch];
            ClipFrame { root: root.map(|v| v as f32), rotations: rot.map(|r| r.map(|v| v as f32)) }
        })
        .collect();
    Ok(MotionClip { fps: spec.fps, clip_id: seed as u32, frames })
}

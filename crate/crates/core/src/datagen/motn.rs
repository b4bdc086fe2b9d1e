//! MOTN clip files, little-endian:
//!
//! | offset | field |
//! |--------|-------|
//! | 0  | magic `b"MOTN"` |
//! | 4  | u32 version (= 1) |
//! | 8  | u32 fps |
//! | 12 | u32 frame count |
//! | 16 | u32 joint count (= 22) |
//! | 20 | u32 clip id |
//! | 24 | per frame: root xyz (3×f32), then 22 axis-angle rotations (3×f32 each) |

use std::path::Path;

use super::{ClipFrame, MotionClip};
use crate::error::{Error, Result};
use crate::kinematics::JOINT_COUNT;

pub const MOTN_MAGIC: &[u8; 4] = b"MOTN";
pub const MOTN_HEADER_LEN: usize = 24;
const VERSION: u32 = 1;
const FRAME_FLOATS: usize = 3 + JOINT_COUNT * 3;

pub fn write_clip(clip: &MotionClip) -> Result<Vec<u8>> {
    clip.validate()?;
    let mut buf = Vec::with_capacity(MOTN_HEADER_LEN + clip.len() * FRAME_FLOATS * 4);
    buf.extend_from_slice(MOTN_MAGIC);
    for v in [VERSION, clip.fps, clip.len() as u32, JOINT_COUNT as u32, clip.clip_id] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for f in &clip.frames {
        for x in f.root.iter().chain(f.rotations.iter().flatten()) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn read_clip(buf: &[u8]) -> Result<MotionClip> {
    let fail = |offset: usize, msg: String| Error::Format { offset: offset as u64, msg };
    if buf.len() < MOTN_HEADER_LEN {
        return Err(fail(buf.len(), format!("truncated header ({} bytes)", buf.len())));
    }
    if &buf[..4] != MOTN_MAGIC {
        return Err(fail(0, "bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let (version, fps, frames, joints, clip_id) = (word(0), word(1), word(2), word(3), word(4));
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    if fps == 0 {
        return Err(fail(8, "fps must be positive".into()));
    }
    if frames < 2 {
        return Err(fail(12, format!("need >= 2 frames, header says {frames}")));
    }
    if joints as usize != JOINT_COUNT {
        return Err(fail(16, format!("expected {JOINT_COUNT} joints, got {joints}")));
    }
    let body = frames as usize * FRAME_FLOATS * 4;
    if buf.len() < MOTN_HEADER_LEN + body {
        return Err(fail(buf.len(), format!("truncated body: need {} bytes", MOTN_HEADER_LEN + body)));
    }
    if buf.len() > MOTN_HEADER_LEN + body {
        return Err(fail(MOTN_HEADER_LEN + body, "trailing bytes".into()));
    }
    let mut floats = buf[MOTN_HEADER_LEN..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
    let mut frames_out = Vec::with_capacity(frames as usize);
    for i in 0..frames as usize {
        let mut f = ClipFrame { root: [0.0; 3], rotations: [[0.0; 3]; JOINT_COUNT] };
        for x in f.root.iter_mut().chain(f.rotations.iter_mut().flatten()) {
            *x = floats.next().expect("length checked");
        }
        if !f.root.iter().chain(f.rotations.iter().flatten()).all(|x| x.is_finite()) {
            return Err(fail(MOTN_HEADER_LEN + i * FRAME_FLOATS * 4, format!("non-finite value in frame {i}")));
        }
        frames_out.push(f);
    }
    Ok(MotionClip { fps, clip_id, frames: frames_out })
}

pub fn save_clip(clip: &MotionClip, path: &Path) -> Result<()> {
    std::fs::write(path, write_clip(clip)?)?;
    Ok(())
}

pub fn load_clip(path: &Path) -> Result<MotionClip> {
    read_clip(&std::fs::read(path)?)
}

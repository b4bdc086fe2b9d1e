//! Per-frame tracker features and temporal window assembly.
//!
//! Each tracker (head, left hand, right hand) contributes
//! `[position (3), orientation 6D (6), linear velocity (3), rotation velocity 6D (6)]`,
//! giving 54 values per frame. Velocities are frame differences, so they are
//! in meters/frame rather than meters/second.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::rotmath::{matrix_to_rot6d, relative_rotation, Rot6D, RotationMatrix};
use crate::tensor::Tensor;

pub const TRACKERS: usize = 3;
pub const PER_TRACKER: usize = 18;
pub const FEATURE_DIM: usize = TRACKERS * PER_TRACKER;

/// World-frame pose of one tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerPose {
    pub position: Vector3<f64>,
    pub rotation: RotationMatrix,
}

impl Default for TrackerPose {
    fn default() -> Self {
        Self { position: Vector3::zeros(), rotation: RotationMatrix::identity() }
    }
}

/// Sensor readings at one instant, trackers ordered head, left, right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedFrame {
    pub t: u64,
    pub trackers: [TrackerPose; TRACKERS],
}

impl TrackedFrame {
    pub fn head(&self) -> &TrackerPose {
        &self.trackers[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn write_block(out: &mut [f64], p: &Vector3<f64>, theta: &Rot6D, v: &Vector3<f64>, w: &Rot6D) {
    out[0..3].copy_from_slice(p.as_slice());
    out[3..9].copy_from_slice(&theta.0);
    out[9..12].copy_from_slice(v.as_slice());
    out[12..18].copy_from_slice(&w.0);
}

/// Features of `cur` relative to the immediately preceding frame.
pub fn frame_features(prev: &TrackedFrame, cur: &TrackedFrame) -> Result<FeatureVector> {
    if prev.t.checked_add(1) != Some(cur.t) {
        return Err(Error::Sequencing(format!(
            "frame {} does not follow frame {}",
            cur.t, prev.t
        )));
    }
    let mut out = [0.0; FEATURE_DIM];
    for (j, (a, b)) in prev.trackers.iter().zip(&cur.trackers).enumerate() {
        let theta = matrix_to_rot6d(&b.rotation);
        let v = b.position - a.position;
        let w = matrix_to_rot6d(&relative_rotation(&a.rotation, &b.rotation));
        write_block(&mut out[j * PER_TRACKER..(j + 1) * PER_TRACKER], &b.position, &theta, &v, &w);
    }
    Ok(FeatureVector(out))
}

/// Features of a stream's first frame: zero velocity, identity rotation velocity.
pub fn first_frame_features(cur: &TrackedFrame) -> FeatureVector {
    let mut out = [0.0; FEATURE_DIM];
    for (j, b) in cur.trackers.iter().enumerate() {
        let theta = matrix_to_rot6d(&b.rotation);
        write_block(
            &mut out[j * PER_TRACKER..(j + 1) * PER_TRACKER],
            &b.position,
            &theta,
            &Vector3::zeros(),
            &Rot6D::IDENTITY,
        );
    }
    FeatureVector(out)
}

/// Features for a whole stream; index `i` of the result belongs to frame `i`.
pub fn stream_features(frames: &[TrackedFrame]) -> Result<Vec<FeatureVector>> {
    let mut out = Vec::with_capacity(frames.len());
    if let Some(first) = frames.first() {
        out.push(first_frame_features(first));
    }
    for pair in frames.windows(2) {
        out.push(frame_features(&pair[0], &pair[1])?);
    }
    Ok(out)
}

/// What to do when the requested window reaches before the stream start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Reject,
    /// Repeat the earliest available frame.
    RepeatFirst,
}

/// The current window plus `K` past windows, each `T×54`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindowSet {
    pub current: Tensor<f64>,
    pub past: Vec<Tensor<f64>>,
}

impl FeatureWindowSet {
    pub fn window_len(&self) -> usize {
        self.current.rows()
    }

    pub fn past_count(&self) -> usize {
        self.past.len()
    }
}

/// Inclusive frame range `[start, end]` of window `k` ending at `t`
/// (`k = 0` is the current window). Negative starts mean padding is needed.
pub fn window_range(t: usize, window: usize, k: usize) -> (i64, i64) {
    let (t, w, k) = (t as i64, window as i64, k as i64);
    (t - (k + 1) * w + 1, t - k * w)
}

/// Earliest frame index at which a full window set is available.
pub fn first_valid_frame(window: usize, past: usize) -> usize {
    window * (past + 1) - 1
}

pub fn build_window_set(
    stream: &[FeatureVector],
    t: usize,
    window: usize,
    past: usize,
    padding: Padding,
) -> Result<FeatureWindowSet> {
    if window < 2 {
        return Err(Error::Config(format!("window length must be >= 2, got {window}")));
    }
    if t >= stream.len() {
        return Err(Error::History { t, needed: t + 1, available: stream.len() });
    }
    let needed = first_valid_frame(window, past);
    if t < needed && padding == Padding::Reject {
        return Err(Error::History { t, needed: needed + 1, available: t + 1 });
    }
    let extract = |k: usize| {
        let (start, _) = window_range(t, window, k);
        let mut data = Vec::with_capacity(window * FEATURE_DIM);
        for i in 0..window as i64 {
            let idx = (start + i).max(0) as usize;
            data.extend_from_slice(&stream[idx].0);
        }
        Tensor::from_vec(window, FEATURE_DIM, data).expect("window size")
    };
    Ok(FeatureWindowSet { current: extract(0), past: (1..=past).map(extract).collect() })
}

//! Streaming inference: one full-body pose per incoming tracker frame.
//!
//! A session keeps the last `(K+1)·T` feature vectors. Once that history is
//! full, every new frame rebuilds the window set ending at that frame, runs
//! the model and returns the pose of the newest frame with its root placed
//! under the observed head.
//!
//! With the activation cache enabled, each frame's window-block activations
//! are computed once on arrival instead of once per window it falls in;
//! tokens are then pooled from the cache. Both paths produce bit-identical
//! poses.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use serde::Serialize;

use crate::datagen::{derive_sparse_stream, synth_motion, MotionKind, MotionSpec};
use crate::error::{Error, Result};
use crate::featurize::{
    build_window_set, first_frame_features, first_valid_frame, frame_features, window_range, FeatureVector, Padding,
    TrackedFrame, TrackerPose, FEATURE_DIM, TRACKERS,
};
use crate::kinematics::{default_skeleton, recover_root_translation, FullBodyPose, KinematicTree, JOINT_COUNT};
use crate::model::{init_params, predict, predict_with_tokens, window_frame_activations, ModelConfig, ModelParams, OUTPUT_DIM};
use crate::rotmath::RotationMatrix;
use crate::tensor::{kernels, Real, Tape, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionOptions {
    pub padding: Padding,
    pub cache_activations: bool,
}

pub struct StreamingSession<F: Real = f32> {
    params: Arc<ModelParams<F>>,
    tree: KinematicTree,
    options: SessionOptions,
    capacity: usize,
    features: VecDeque<FeatureVector>,
    /// Per past window, per buffered frame: the `1×D` activation row.
    activations: Vec<VecDeque<Tensor<F>>>,
    prev: Option<TrackedFrame>,
    consumed: u64,
}

impl<F: Real> StreamingSession<F> {
    pub fn new(params: Arc<ModelParams<F>>, tree: KinematicTree, options: SessionOptions) -> Result<Self> {
        params.config.validate()?;
        let c = &params.config;
        let capacity = first_valid_frame(c.window, c.past_windows) + 1;
        let activations = if options.cache_activations { vec![VecDeque::with_capacity(capacity); c.past_windows] } else { Vec::new() };
        Ok(Self {
            params,
            tree,
            options,
            capacity,
            features: VecDeque::with_capacity(capacity),
            activations,
            prev: None,
            consumed: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// Frames needed before the first pose (without padding).
    pub fn warmup_frames(&self) -> usize {
        self.capacity
    }

    pub fn frames_consumed(&self) -> u64 {
        self.consumed
    }

    pub fn buffered(&self) -> usize {
        self.features.len()
    }

    pub fn push_frame(&mut self, frame: &TrackedFrame) -> Result<Option<FullBodyPose>> {
        let feat = match &self.prev {
            Some(prev) => frame_features(prev, frame)?,
            None => first_frame_features(frame),
        };
        if self.options.cache_activations {
            self.cache_frame(&feat)?;
        }
        self.features.push_back(feat);
        if self.features.len() > self.capacity {
            self.features.pop_front();
        }
        self.prev = Some(*frame);
        self.consumed += 1;
        if self.features.len() < self.capacity && self.options.padding == Padding::Reject {
            return Ok(None);
        }

        let c = &self.params.config;
        let t = self.features.len() - 1;
        let rows = if self.options.cache_activations {
            let ws = build_window_set(self.features.make_contiguous(), t, c.window, 0, self.options.padding)?;
            let tokens = (1..=c.past_windows).map(|k| self.pooled_token(t, k)).collect::<Result<Vec<_>>>()?;
            predict_with_tokens(&self.params, &ws.current, &tokens)?
        } else {
            let ws = build_window_set(self.features.make_contiguous(), t, c.window, c.past_windows, self.options.padding)?;
            predict(&self.params, &ws)?
        };
        let last: Vec<f64> = rows.row(rows.rows() - 1).iter().map(|x| x.as_f64()).collect();
        let mut pose = FullBodyPose::from_flat(&last, Vector3::zeros());
        pose.root = recover_root_translation(&pose.rotations, &frame.head().position, &self.tree)?;
        Ok(Some(pose))
    }

    fn cache_frame(&mut self, feat: &FeatureVector) -> Result<()> {
        let p = &self.params;
        let eps = F::lit(p.config.ln_eps);
        let x = Tensor::from_vec(1, FEATURE_DIM, feat.0.iter().map(|&v| F::lit(v)).collect())?;
        for (k, cache) in self.activations.iter_mut().enumerate() {
            let mut tape = Tape::new();
            let wb = &p.tensors.windows[k];
            let vars = crate::model::WindowBlock {
                proj_w: tape.constant_ref(&wb.proj_w),
                proj_b: tape.constant_ref(&wb.proj_b),
                ln_gain: tape.constant_ref(&wb.ln_gain),
                ln_bias: tape.constant_ref(&wb.ln_bias),
            };
            let xv = tape.constant_ref(&x);
            let a = window_frame_activations(&mut tape, &vars, xv, eps)?;
            cache.push_back(tape.value(a).clone());
            if cache.len() > self.capacity {
                cache.pop_front();
            }
        }
        Ok(())
    }

    /// Mean of cached activations over past window `k` ending at buffer index `t`.
    fn pooled_token(&self, t: usize, k: usize) -> Result<Tensor<F>> {
        let cache = &self.activations[k - 1];
        let window = self.params.config.window;
        let (start, _) = window_range(t, window, k);
        let width = cache[0].cols();
        let mut data = Vec::with_capacity(window * width);
        for i in 0..window as i64 {
            data.extend_from_slice(cache[(start + i).max(0) as usize].data());
        }
        Ok(kernels::mean_rows(&Tensor::from_vec(window, width, data)?))
    }
}

/// Poses for a whole stream computed offline, one per frame from the first
/// warm index on (`None` before it).
pub fn offline_poses<F: Real>(
    params: &ModelParams<F>,
    stream: &[TrackedFrame],
    tree: &KinematicTree,
) -> Result<Vec<Option<FullBodyPose>>> {
    let feats = crate::featurize::stream_features(stream)?;
    let c = &params.config;
    let first = first_valid_frame(c.window, c.past_windows);
    (0..stream.len())
        .map(|t| {
            if t < first {
                return Ok(None);
            }
            let ws = build_window_set(&feats, t, c.window, c.past_windows, Padding::Reject)?;
            let rows = predict(params, &ws)?;
            let last: Vec<f64> = rows.row(c.window - 1).iter().map(|x| x.as_f64()).collect();
            let mut pose = FullBodyPose::from_flat(&last, Vector3::zeros());
            pose.root = recover_root_translation(&pose.rotations, &stream[t].head().position, tree)?;
            Ok(Some(pose))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub input_fps: f64,
    /// Output rate when fed at `input_fps`: capped by the input rate.
    pub achieved_fps: f64,
    /// `1000 / mean_ms`, ignoring the input rate.
    pub raw_fps: f64,
}

impl LatencyReport {
    pub fn from_samples(samples_ms: Vec<f64>, input_fps: f64) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::Contract("no latency samples".into()));
        }
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        let mean_ms = samples_ms.iter().sum::<f64>() / samples_ms.len() as f64;
        let raw_fps = if mean_ms > 0.0 { 1000.0 / mean_ms } else { f64::INFINITY };
        Ok(Self { p50_ms: rank(0.5), p99_ms: rank(0.99), mean_ms, input_fps, achieved_fps: raw_fps.min(input_fps), raw_fps, samples_ms })
    }

    pub fn to_text(&self) -> String {
        format!(
            "samples {}\nmean_ms {:.4}\np50_ms {:.4}\np99_ms {:.4}\ninput_fps {:.1}\nachieved_fps {:.1}\nraw_fps {:.1}\n",
            self.samples_ms.len(),
            self.mean_ms,
            self.p50_ms,
            self.p99_ms,
            self.input_fps,
            self.achieved_fps,
            self.raw_fps
        )
    }
}

/// Times `push_frame` on a synthetic walk stream: untimed warm-up, then
/// `round(duration_s · input_fps)` timed calls back to back.
pub fn bench_latency(config: &ModelConfig, duration_s: f64, input_fps: f64, options: SessionOptions) -> Result<LatencyReport> {
    if !(duration_s > 0.0 && input_fps > 0.0) {
        return Err(Error::Config("duration and fps must be positive".into()));
    }
    let params = Arc::new(init_params::<f32>(config, 0)?);
    let tree = default_skeleton();
    let mut session = StreamingSession::new(params, tree.clone(), options)?;
    let timed = (duration_s * input_fps).round().max(1.0) as usize;
    let warm = session.warmup_frames();
    let fps = input_fps.round().max(1.0) as u32;
    let clip = synth_motion(&MotionSpec { kind: MotionKind::Walk, duration_s: (warm + timed) as f64 / fps as f64, fps }, 0)?;
    let stream = derive_sparse_stream(&clip, &tree)?;
    let mut samples = Vec::with_capacity(timed);
    for (i, frame) in stream.iter().take(warm + timed).enumerate() {
        let start = Instant::now();
        let out = session.push_frame(frame)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if i >= warm {
            debug_assert!(out.is_some());
            samples.push(ms);
        }
    }
    LatencyReport::from_samples(samples, input_fps)
}

/// Fields per input CSV line: `t`, then per tracker position xyz and nine
/// row-major rotation entries.
pub const FRAME_CSV_FIELDS: usize = 1 + TRACKERS * 12;
/// Fields per output CSV line: `t`, 22×6 rotation values, root xyz.
pub const POSE_CSV_FIELDS: usize = 1 + OUTPUT_DIM + 3;

pub fn parse_frame_csv(line: &str) -> Result<TrackedFrame> {
    let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
    if fields.len() != FRAME_CSV_FIELDS {
        return Err(Error::InvalidInput(format!("expected {FRAME_CSV_FIELDS} fields, got {}", fields.len())));
    }
    let t = fields[0].parse::<u64>().map_err(|_| Error::InvalidInput(format!("bad timestamp {:?}", fields[0])))?;
    let mut vals = [0.0f64; FRAME_CSV_FIELDS - 1];
    for (v, f) in vals.iter_mut().zip(&fields[1..]) {
        *v = f.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| Error::InvalidInput(format!("bad number {f:?}")))?;
    }
    let mut trackers = [TrackerPose::default(); TRACKERS];
    for (k, tr) in trackers.iter_mut().enumerate() {
        let b = &vals[k * 12..(k + 1) * 12];
        tr.position = Vector3::new(b[0], b[1], b[2]);
        let m = nalgebra::Matrix3::from_row_slice(&b[3..12]);
        let r = RotationMatrix::new_unchecked(m);
        if !r.is_valid(1e-4) {
            return Err(Error::InvalidInput(format!("tracker {k} rotation is not orthonormal")));
        }
        tr.rotation = r;
    }
    Ok(TrackedFrame { t, trackers })
}

pub fn format_frame_csv(frame: &TrackedFrame) -> String {
    let mut parts = vec![frame.t.to_string()];
    for tr in &frame.trackers {
        parts.extend(tr.position.iter().map(|v| v.to_string()));
        parts.extend(tr.rotation.rows().iter().flatten().map(|v| v.to_string()));
    }
    parts.join(",")
}

pub fn format_pose_csv(t: u64, pose: &FullBodyPose) -> String {
    let mut parts = Vec::with_capacity(POSE_CSV_FIELDS);
    parts.push(t.to_string());
    parts.extend(pose.flat().iter().map(|v| v.to_string()));
    parts.extend(pose.root.iter().map(|v| v.to_string()));
    debug_assert_eq!(parts.len(), 1 + JOINT_COUNT * 6 + 3);
    parts.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(k: usize, seed: u64) -> (Arc<ModelParams<f32>>, Vec<TrackedFrame>, KinematicTree) {
        let tree = default_skeleton();
        let params = Arc::new(init_params::<f32>(&ModelConfig::new(6, k, 3, 16), seed).unwrap());
        let clip = synth_motion(&MotionSpec { kind: MotionKind::Run, duration_s: 1.0, fps: 60 }, seed).unwrap();
        (params, derive_sparse_stream(&clip, &tree).unwrap(), tree)
    }

    #[test]
    fn warmup_then_bit_identical_to_offline() {
        for cache in [false, true] {
            let (params, stream, tree) = setup(2, 1);
            let offline = offline_poses(&params, &stream, &tree).unwrap();
            let mut s = StreamingSession::new(params, tree, SessionOptions { cache_activations: cache, ..Default::default() }).unwrap();
            assert_eq!(s.warmup_frames(), 18);
            for (i, f) in stream.iter().enumerate() {
                let out = s.push_frame(f).unwrap();
                assert_eq!(out.is_some(), i + 1 >= 18, "frame {i}");
                assert_eq!(out, offline[i]);
                assert!(s.buffered() <= 18);
            }
            assert_eq!(s.frames_consumed(), 60);
        }
    }

    #[test]
    fn padded_session_matches_padded_offline_windows() {
        let (params, stream, tree) = setup(1, 2);
        let feats = crate::featurize::stream_features(&stream).unwrap();
        let mut plain = StreamingSession::new(params.clone(), tree.clone(), SessionOptions { padding: Padding::RepeatFirst, cache_activations: false }).unwrap();
        let mut cached = StreamingSession::new(params.clone(), tree, SessionOptions { padding: Padding::RepeatFirst, cache_activations: true }).unwrap();
        for (t, f) in stream.iter().enumerate().take(20) {
            let a = plain.push_frame(f).unwrap().unwrap();
            let b = cached.push_frame(f).unwrap().unwrap();
            assert_eq!(a, b);
            let ws = build_window_set(&feats, t, 6, 1, Padding::RepeatFirst).unwrap();
            let rows = predict(&params, &ws).unwrap();
            assert_eq!(&a.flat().map(|v| v as f32)[..], rows.row(5));
        }
    }

    #[test]
    fn timestamp_gaps_are_rejected() {
        let (params, stream, tree) = setup(0, 3);
        let mut s = StreamingSession::new(params, tree, SessionOptions::default()).unwrap();
        s.push_frame(&stream[0]).unwrap();
        assert!(matches!(s.push_frame(&stream[2]), Err(Error::Sequencing(_))));
    }

    #[test]
    fn csv_round_trip() {
        let (_, stream, _) = setup(0, 4);
        let line = format_frame_csv(&stream[5]);
        assert_eq!(line.split(',').count(), FRAME_CSV_FIELDS);
        assert_eq!(parse_frame_csv(&line).unwrap(), stream[5]);
        assert!(parse_frame_csv("1,2,3").is_err());
        let bad = line.replacen(",", ",x", 1);
        assert!(parse_frame_csv(&bad).is_err());
        let pose = FullBodyPose::identity();
        assert_eq!(format_pose_csv(3, &pose).split(',').count(), POSE_CSV_FIELDS);
    }

    #[test]
    fn latency_report_statistics() {
        let r = LatencyReport::from_samples((1..=100).map(|i| i as f64).collect(), 60.0).unwrap();
        assert_eq!(r.p50_ms, 50.0);
        assert_eq!(r.p99_ms, 99.0);
        assert!((r.mean_ms - 50.5).abs() < 1e-12);
        assert_eq!(r.achieved_fps, 1000.0 / 50.5);
        let fast = LatencyReport::from_samples(vec![1.0; 4], 72.0).unwrap();
        assert_eq!(fast.achieved_fps, 72.0);
        let b = bench_latency(&ModelConfig::new(4, 1, 1, 8), 0.5, 30.0, SessionOptions::default()).unwrap();
        assert_eq!(b.samples_ms.len(), 15);
    }
}

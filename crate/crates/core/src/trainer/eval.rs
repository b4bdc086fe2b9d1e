use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{prepare_clips, train, PreparedClip, TrainConfig};
use crate::datagen::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::featurize::{first_valid_frame, FeatureWindowSet};
use crate::kinematics::{recover_root_translation, FullBodyPose, KinematicTree, PoseSequence};
use crate::metrics::{MetricSums, MetricsReport};
use crate::model::{count_cost, load_checkpoint, predict, ModelConfig, ModelParams};
use crate::tensor::{Real, Tensor};

/// How predictions are scored along a clip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Slide one frame at a time and keep the last frame of each prediction.
    #[default]
    Online,
    /// Tile the clip with non-overlapping windows and keep every frame.
    Sequence,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(Protocol::Online),
            "sequence" => Ok(Protocol::Sequence),
            _ => Err(Error::Config(format!("unknown protocol {s:?} (online|sequence)"))),
        }
    }
}

/// Anything that maps a window set to `T×132` rotations.
pub trait Predictor: Sync {
    fn model_config(&self) -> &ModelConfig;

    /// `clip` and `t` identify the window for predictors that need them.
    fn predict(&self, clip: usize, t: usize, windows: &FeatureWindowSet) -> Result<Tensor<f64>>;
}

impl<F: Real> Predictor for ModelParams<F> {
    fn model_config(&self) -> &ModelConfig {
        &self.config
    }

    fn predict(&self, _clip: usize, _t: usize, windows: &FeatureWindowSet) -> Result<Tensor<f64>> {
        Ok(predict(self, windows)?.cast())
    }
}

/// Returns the ground truth itself.
pub struct GroundTruthPredictor<'a> {
    pub config: ModelConfig,
    pub clips: &'a [PreparedClip],
}

impl Predictor for GroundTruthPredictor<'_> {
    fn model_config(&self) -> &ModelConfig {
        &self.config
    }

    fn predict(&self, clip: usize, t: usize, _windows: &FeatureWindowSet) -> Result<Tensor<f64>> {
        self.clips[clip].target(t, self.config.window)
    }
}

fn anchored(values: &[f64], head: &nalgebra::Vector3<f64>, tree: &KinematicTree) -> Result<FullBodyPose> {
    let mut pose = FullBodyPose::from_flat(values, Default::default());
    pose.root = recover_root_translation(&pose.rotations, head, tree)?;
    Ok(pose)
}

fn evaluate_clip(
    predictor: &dyn Predictor,
    index: usize,
    clip: &PreparedClip,
    protocol: Protocol,
    tree: &KinematicTree,
    fps: f64,
) -> Result<MetricSums> {
    let cfg = predictor.model_config();
    let first = first_valid_frame(cfg.window, cfg.past_windows);
    let ends: Vec<usize> = match protocol {
        Protocol::Online => (first..clip.len()).collect(),
        Protocol::Sequence => (first..clip.len()).step_by(cfg.window).collect(),
    };
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    for t in ends {
        let rows = predictor.predict(index, t, &clip.window_set(t, cfg)?)?;
        let kept = match protocol {
            Protocol::Online => cfg.window - 1..cfg.window,
            Protocol::Sequence => 0..cfg.window,
        };
        for r in kept {
            let frame = t + 1 + r - cfg.window;
            let head = clip.stream[frame].head().position;
            pred.push(anchored(rows.row(r), &head, tree)?);
            gt.push(anchored(clip.targets.row(frame), &head, tree)?);
        }
    }
    let mut sums = MetricSums::default();
    if !pred.is_empty() {
        sums.add(&PoseSequence::new(pred), &PoseSequence::new(gt), tree, fps)?;
    }
    Ok(sums)
}

/// Scores `predictor` over every clip long enough for its window set. Both
/// prediction and ground truth get their root from the observed head.
pub fn evaluate(
    predictor: &dyn Predictor,
    clips: &[PreparedClip],
    protocol: Protocol,
    tree: &KinematicTree,
    fps: f64,
) -> Result<MetricsReport> {
    let cfg = predictor.model_config();
    let usable: Vec<usize> = (0..clips.len()).filter(|&i| clips[i].fits(cfg)).collect();
    if usable.is_empty() {
        return Err(Error::Contract(format!(
            "no evaluation clip is long enough for T={}, K={}",
            cfg.window, cfg.past_windows
        )));
    }
    let per_clip = exec::map_indexed(usable.len(), |k| {
        let i = usable[k];
        evaluate_clip(predictor, i, &clips[i], protocol, tree, fps)
    });
    let mut total = MetricSums::default();
    for s in per_clip {
        total.merge(&s?);
    }
    Ok(total.report(fps))
}

/// Evaluates a checkpoint on the test split of a manifest.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    manifest: &DatasetManifest,
    protocol: Protocol,
    tree: &KinematicTree,
) -> Result<MetricsReport> {
    let params: ModelParams<f32> = load_checkpoint(checkpoint)?;
    let clips = manifest.load(Split::Test)?;
    if let Some(c) = clips.iter().find(|c| c.fps != manifest.fps) {
        return Err(Error::Contract(format!("clip at {} fps in a {} fps manifest", c.fps, manifest.fps)));
    }
    let prepared = prepare_clips(&clips, tree)?;
    evaluate(&params, &prepared, protocol, tree, manifest.fps as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub window: usize,
    pub past_windows: usize,
    pub params: u64,
    pub gflops: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const COLUMNS: [&'static str; 8] = ["T", "K", "params", "GFLOPs", "MPJRE", "MPJPE", "MPJVE", "Jitter"];

    /// Markdown table, one row per configuration.
    pub fn to_text(&self) -> String {
        let mut s = format!("| {} |\n", Self::COLUMNS.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(Self::COLUMNS.len()));
        for r in &self.rows {
            let m = &r.report;
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.4} | {:.3} | {:.3} | {:.3} | {:.3} |",
                r.window, r.past_windows, r.params, r.gflops, m.mpjre, m.mpjpe, m.mpjve, m.jitter
            );
        }
        s
    }
}

/// Trains and evaluates one model per `(T, K)` pair, `T` outermost.
pub fn ablation_grid(
    base: &TrainConfig,
    windows: &[usize],
    pasts: &[usize],
    train_clips: &[PreparedClip],
    test_clips: &[PreparedClip],
    tree: &KinematicTree,
    protocol: Protocol,
    fps: f64,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for &t in windows {
        for &k in pasts {
            let mut cfg = base.clone();
            cfg.model.window = t;
            cfg.model.past_windows = k;
            cfg.eval_every = 0;
            log::info!("ablation T={t} K={k}");
            let out = train(&cfg, train_clips, &[], tree, None)?;
            let report = evaluate(&out.params, test_clips, protocol, tree, fps)?;
            let cost = count_cost(&cfg.model);
            rows.push(AblationRow { window: t, past_windows: k, params: cost.params, gflops: cost.gflops(), report });
        }
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synth_motion, MotionKind, MotionSpec};
    use crate::kinematics::default_skeleton;
    use crate::model::init_params;
    use crate::trainer::LrSchedule;

    fn clips() -> Vec<PreparedClip> {
        [(MotionKind::Walk, 1), (MotionKind::Run, 2)]
            .iter()
            .map(|&(kind, seed)| {
                let c = synth_motion(&MotionSpec { kind, duration_s: 1.0, fps: 60 }, seed).unwrap();
                PreparedClip::new(&c, &default_skeleton()).unwrap()
            })
            .collect()
    }

    #[test]
    fn ground_truth_predictor_scores_zero() {
        let clips = clips();
        let tree = default_skeleton();
        for protocol in [Protocol::Online, Protocol::Sequence] {
            let gt = GroundTruthPredictor { config: ModelConfig::new(8, 2, 1, 8), clips: &clips };
            let r = evaluate(&gt, &clips, protocol, &tree, 60.0).unwrap();
            for v in [r.mpjre, r.mpjpe, r.mpjve, r.root_pe, r.hand_pe, r.upper_pe, r.lower_pe] {
                assert_eq!(v, 0.0);
            }
            assert!(r.jitter > 0.0);
        }
    }

    #[test]
    fn frame_counts_follow_protocol() {
        let clips = clips();
        let tree = default_skeleton();
        let gt = GroundTruthPredictor { config: ModelConfig::new(8, 2, 1, 8), clips: &clips };
        let online = evaluate(&gt, &clips, Protocol::Online, &tree, 60.0).unwrap();
        assert_eq!(online.frames, 2 * (60 - 23));
        let seq = evaluate(&gt, &clips, Protocol::Sequence, &tree, 60.0).unwrap();
        assert_eq!(seq.frames, 2 * 5 * 8);
    }

    #[test]
    fn model_evaluation_is_repeatable() {
        let clips = clips();
        let tree = default_skeleton();
        let p = init_params::<f32>(&ModelConfig::new(8, 1, 2, 16), 1).unwrap();
        let a = evaluate(&p, &clips, Protocol::Online, &tree, 60.0).unwrap();
        let b = evaluate(&p, &clips, Protocol::Online, &tree, 60.0).unwrap();
        assert_eq!(a, b);
        let short = GroundTruthPredictor { config: ModelConfig::new(40, 2, 1, 8), clips: &clips };
        assert!(matches!(evaluate(&short, &clips, Protocol::Online, &tree, 60.0), Err(Error::Contract(_))));
    }

    #[test]
    fn ablation_grid_has_one_row_per_pair() {
        let clips = clips();
        let base = TrainConfig {
            steps: 2,
            batch: 2,
            lr: LrSchedule::scaled_to(2),
            model: ModelConfig::new(8, 0, 1, 8),
            ..TrainConfig::default()
        };
        let table =
            ablation_grid(&base, &[8, 16], &[0, 1, 2], &clips, &clips, &default_skeleton(), Protocol::Online, 60.0)
                .unwrap();
        let pairs: Vec<(usize, usize)> = table.rows.iter().map(|r| (r.window, r.past_windows)).collect();
        assert_eq!(pairs, vec![(8, 0), (8, 1), (8, 2), (16, 0), (16, 1), (16, 2)]);
        let text = table.to_text();
        assert_eq!(text.lines().count(), 8);
        assert!(text.starts_with("| T | K | params | GFLOPs"));
    }
}

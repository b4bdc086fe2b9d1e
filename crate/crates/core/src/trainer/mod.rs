//! Mini-batch training with AdamW, checkpoints, logs and evaluation.

mod eval;
mod optim;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{derive_sparse_stream, DatasetManifest, MotionClip, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::featurize::{build_window_set, first_valid_frame, stream_features, FeatureVector, FeatureWindowSet, Padding, TrackedFrame};
use crate::kinematics::{KinematicTree, PoseSequence};
use crate::metrics::MetricsReport;
use crate::model::{init_params, save_checkpoint, ModelConfig, ModelParams};
use crate::objective::{training_loss, LossBreakdown, ObjectiveConfig, Regularization};
use crate::tensor::{Real, Tape, Tensor};

pub use eval::{
    ablation_grid, evaluate, evaluate_checkpoint, AblationRow, AblationTable, GroundTruthPredictor, Predictor, Protocol,
};
pub use optim::{adamw_step, clip_global_norm, global_norm, AdamW, OptimizerState};

/// Step-function learning rate: `initial` before `drop_step`, `reduced` after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub reduced: f64,
    pub drop_step: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 3e-4, reduced: 1e-5, drop_step: 225_000 }
    }
}

impl LrSchedule {
    /// Same rates with the drop at three quarters of `steps`.
    pub fn scaled_to(steps: usize) -> Self {
        Self { drop_step: steps * 3 / 4, ..Self::default() }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.drop_step {
            self.initial
        } else {
            self.reduced
        }
    }
}

/// Learning rate of the full-length schedule.
pub fn lr_at(step: usize) -> f64 {
    LrSchedule::default().lr_at(step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: LrSchedule,
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub optimizer: AdamW,
    /// Global-norm gradient clipping threshold.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Evaluate every this many steps (0 = never).
    #[serde(default)]
    pub eval_every: usize,
    /// Write a checkpoint every this many steps (0 = final only).
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300_000,
            batch: 128,
            lr: LrSchedule::default(),
            seed: 0,
            model: ModelConfig::default(),
            objective: ObjectiveConfig::default(),
            optimizer: AdamW::default(),
            grad_clip: None,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Laptop-sized run: 2000 steps, batch 16, `T=16, K=2, L=4, D=64`.
    pub fn desk() -> Self {
        Self { steps: 2000, batch: 16, lr: LrSchedule::scaled_to(2000), model: ModelConfig::new(16, 2, 4, 64), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be positive".into()));
        }
        if self.lr.drop_step > self.steps {
            return Err(Error::Config(format!("lr drop at {} is past the last step {}", self.lr.drop_step, self.steps)));
        }
        if !(self.lr.initial > 0.0 && self.lr.reduced > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        let decay = self.optimizer.weight_decay;
        match self.objective.regularization {
            Regularization::Explicit if decay != 0.0 => {
                return Err(Error::Config("weight decay and the explicit L2 term cannot both be active".into()))
            }
            Regularization::Decoupled if decay <= 0.0 => {
                return Err(Error::Config("decoupled regularization needs a positive weight decay".into()))
            }
            _ => {}
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("gradient clip must be positive".into()));
        }
        Ok(())
    }
}

/// A clip with its tracker stream, features and supervision precomputed.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub fps: u32,
    pub stream: Vec<TrackedFrame>,
    pub features: Vec<FeatureVector>,
    pub poses: PoseSequence,
    /// `F×132` rotation targets.
    pub targets: Tensor<f64>,
}

impl PreparedClip {
    pub fn new(clip: &MotionClip, tree: &KinematicTree) -> Result<Self> {
        let stream = derive_sparse_stream(clip, tree)?;
        let features = stream_features(&stream)?;
        let poses = clip.pose_sequence()?;
        let targets = poses.to_tensor();
        Ok(Self { fps: clip.fps, stream, features, poses, targets })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn fits(&self, config: &ModelConfig) -> bool {
        self.len() > first_valid_frame(config.window, config.past_windows)
    }

    pub fn window_set(&self, t: usize, config: &ModelConfig) -> Result<FeatureWindowSet> {
        build_window_set(&self.features, t, config.window, config.past_windows, Padding::Reject)
    }

    /// Targets of the current window ending at `t`.
    pub fn target(&self, t: usize, window: usize) -> Result<Tensor<f64>> {
        self.targets.slice_rows(t + 1 - window, t + 1)
    }
}

pub fn prepare_clips(clips: &[MotionClip], tree: &KinematicTree) -> Result<Vec<PreparedClip>> {
    exec::map_indexed(clips.len(), |i| PreparedClip::new(&clips[i], tree)).into_iter().collect()
}

/// Gradients of the total loss for one window, in parameter declaration order.
pub fn sample_gradients<F: Real>(
    params: &ModelParams<F>,
    windows: &FeatureWindowSet,
    target: &Tensor<F>,
    objective: &ObjectiveConfig,
) -> Result<(Vec<Tensor<F>>, LossBreakdown)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let lv = training_loss(&mut tape, &vars, &params.config, windows, target, objective)?;
    let breakdown = lv.breakdown(&tape, &vars, objective);
    let mut g = tape.backward(lv.total)?;
    let grads = vars.iter().into_iter().map(|&v| g.take(v).expect("trainable leaf")).collect();
    Ok((grads, breakdown))
}

/// Samples evaluated concurrently; bounds peak tape memory.
const GRAD_CHUNK: usize = 16;

/// Mean gradients and losses over `(clip, t)` samples. Per-sample work may
/// run in parallel; the reduction is always in sample order.
pub fn batch_gradients<F: Real>(
    params: &ModelParams<F>,
    clips: &[PreparedClip],
    samples: &[(usize, usize)],
    objective: &ObjectiveConfig,
) -> Result<(Vec<Tensor<F>>, LossBreakdown)> {
    let window = params.config.window;
    let mut sum: Option<Vec<Tensor<F>>> = None;
    let mut parts = [0.0f64; 7];
    for chunk in samples.chunks(GRAD_CHUNK) {
        let results = exec::map_indexed(chunk.len(), |i| {
            let (c, t) = chunk[i];
            let ws = clips[c].window_set(t, &params.config)?;
            let target = clips[c].target(t, window)?.cast::<F>();
            sample_gradients(params, &ws, &target, objective)
        });
        for r in results {
            let (g, b) = r?;
            match &mut sum {
                None => sum = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| a.add_assign(x)),
            }
            for (p, v) in parts.iter_mut().zip(breakdown_fields(&b)) {
                *p += v;
            }
        }
    }
    let mut grads = sum.ok_or_else(|| Error::Contract("empty batch".into()))?;
    let n = samples.len() as f64;
    grads.iter_mut().for_each(|g| g.scale_assign(F::lit(1.0 / n)));
    let m = parts.map(|p| p / n);
    let mean = LossBreakdown {
        l_theta: m[0],
        l_rv: m[1],
        l_reg: m[2],
        total: m[3],
        weight_theta: m[4],
        weight_rv: m[5],
        weight_reg: m[6],
    };
    Ok((grads, mean))
}

fn breakdown_fields(b: &LossBreakdown) -> [f64; 7] {
    [b.l_theta, b.l_rv, b.l_reg, b.total, b.weight_theta, b.weight_rv, b.weight_reg]
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub s_theta: f64,
    pub s_rv: f64,
}

impl TrainLogEntry {
    pub const HEADER: &'static str = "step lr l_theta l_rv l_reg total s_theta s_rv";

    pub fn to_line(&self) -> String {
        let l = &self.loss;
        format!(
            "{} {:e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e}",
            self.step, self.lr, l.l_theta, l.l_rv, l.l_reg, l.total, self.s_theta, self.s_rv
        )
    }
}

/// Owns parameters, optimizer state and the sampling stream of one run.
pub struct Trainer<'c> {
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
    pub state: OptimizerState<f32>,
    clips: &'c [PreparedClip],
    eligible: Vec<usize>,
    rng: ChaCha8Rng,
    step: usize,
}

impl<'c> Trainer<'c> {
    pub fn new(config: TrainConfig, clips: &'c [PreparedClip]) -> Result<Self> {
        config.validate()?;
        let mut eligible = Vec::new();
        for (i, c) in clips.iter().enumerate() {
            if c.fits(&config.model) {
                eligible.push(i);
            } else {
                log::warn!(
                    "skipping clip {i}: {} frames, need {}",
                    c.len(),
                    first_valid_frame(config.model.window, config.model.past_windows) + 1
                );
            }
        }
        if eligible.is_empty() {
            return Err(Error::Config("no training clip is long enough for the window configuration".into()));
        }
        let params = init_params(&config.model, config.seed)?;
        let state = OptimizerState::new(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self { config, params, state, clips, eligible, rng, step: 0 })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    /// Uniform over eligible clips, then uniform over valid end frames.
    pub fn sample_batch(&mut self) -> Vec<(usize, usize)> {
        let first = first_valid_frame(self.config.model.window, self.config.model.past_windows);
        (0..self.config.batch)
            .map(|_| {
                let c = self.eligible[self.rng.random_range(0..self.eligible.len())];
                (c, self.rng.random_range(first..self.clips[c].len()))
            })
            .collect()
    }

    pub fn step(&mut self) -> Result<TrainLogEntry> {
        let samples = self.sample_batch();
        let step = self.step;
        let diverged = |e: Error| match e {
            Error::NonFinite(what) => Error::Diverged { step, msg: format!("non-finite {what}") },
            Error::Diverged { msg, .. } => Error::Diverged { step, msg },
            other => other,
        };
        let (mut grads, loss) =
            batch_gradients(&self.params, self.clips, &samples, &self.config.objective).map_err(diverged)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, msg: format!("loss {loss:?}") });
        }
        if let Some(c) = self.config.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        let lr = self.config.lr.lr_at(step);
        adamw_step(&mut self.params, &grads, &mut self.state, &self.config.optimizer, lr).map_err(diverged)?;
        if !self.params.is_finite() {
            return Err(Error::Diverged { step, msg: "parameters became non-finite".into() });
        }
        self.step += 1;
        Ok(TrainLogEntry {
            step,
            lr,
            loss,
            s_theta: self.params.tensors.log_var_theta.item() as f64,
            s_rv: self.params.tensors.log_var_rv.item() as f64,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub log: Vec<TrainLogEntry>,
    pub evals: Vec<(usize, MetricsReport)>,
    pub checkpoints: Vec<PathBuf>,
}

pub const FINAL_CHECKPOINT: &str = "final.twm";
pub const TRAIN_LOG: &str = "train.log";

/// Runs a full training job. With `out`, appends `train.log`, writes periodic
/// `step_NNNNNNN.twm` checkpoints and `final.twm`.
pub fn train(
    config: &TrainConfig,
    train_clips: &[PreparedClip],
    eval_clips: &[PreparedClip],
    tree: &KinematicTree,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), train_clips)?;
    let mut writer = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join(TRAIN_LOG))?);
            writeln!(w, "{}", TrainLogEntry::HEADER)?;
            Some(w)
        }
        None => None,
    };
    let report_every = (config.steps / 20).max(1);
    let mut log = Vec::with_capacity(config.steps);
    let mut evals = Vec::new();
    let mut checkpoints = Vec::new();
    while !trainer.is_done() {
        let entry = trainer.step()?;
        if let Some(w) = writer.as_mut() {
            writeln!(w, "{}", entry.to_line())?;
        }
        let done = trainer.step_index();
        if done % report_every == 0 || done == config.steps {
            log::info!(
                "step {done}/{} lr {:.1e} l_theta {:.4} l_rv {:.4} total {:.4}",
                config.steps,
                entry.lr,
                entry.loss.l_theta,
                entry.loss.l_rv,
                entry.loss.total
            );
        }
        log.push(entry);
        if config.eval_every > 0 && done % config.eval_every == 0 && !eval_clips.is_empty() {
            let r = evaluate(&trainer.params, eval_clips, Protocol::Online, tree, eval_fps(eval_clips))?;
            log::info!("eval at step {done}: mpjre {:.3} deg, mpjpe {:.3} cm", r.mpjre, r.mpjpe);
            evals.push((done, r));
        }
        if let Some(dir) = out {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != config.steps {
                let p = dir.join(format!("step_{done:07}.twm"));
                save_checkpoint(&trainer.params, &p)?;
                checkpoints.push(p);
            }
        }
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    if let Some(dir) = out {
        let p = dir.join(FINAL_CHECKPOINT);
        save_checkpoint(&trainer.params, &p)?;
        checkpoints.push(p);
    }
    Ok(TrainOutcome { params: trainer.params, log, evals, checkpoints })
}

fn eval_fps(clips: &[PreparedClip]) -> f64 {
    clips.first().map_or(crate::metrics::DEFAULT_FPS, |c| c.fps as f64)
}

/// Loads the train and test clips of a manifest and trains on the former.
pub fn train_manifest(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    tree: &KinematicTree,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let train_clips = prepare_clips(&manifest.load(Split::Train)?, tree)?;
    let test_clips = if config.eval_every > 0 { prepare_clips(&manifest.load(Split::Test)?, tree)? } else { Vec::new() };
    train(config, &train_clips, &test_clips, tree, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synth_motion, MotionKind, MotionSpec};
    use crate::kinematics::default_skeleton;
    use crate::model::read_checkpoint;
    use crate::objective::{rotation_loss, LossWeighting};

    fn walk(seconds: f64, seed: u64) -> PreparedClip {
        let clip = synth_motion(&MotionSpec { kind: MotionKind::Walk, duration_s: seconds, fps: 60 }, seed).unwrap();
        PreparedClip::new(&clip, &default_skeleton()).unwrap()
    }

    fn tiny(steps: usize) -> TrainConfig {
        TrainConfig { steps, batch: 4, lr: LrSchedule::scaled_to(steps), model: ModelConfig::new(4, 1, 2, 8), ..TrainConfig::default() }
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_at(0), 3e-4);
        assert_eq!(lr_at(224_999), 3e-4);
        assert_eq!(lr_at(225_000), 1e-5);
        assert_eq!(lr_at(299_999), 1e-5);
        assert_eq!(LrSchedule::scaled_to(2000).drop_step, 1500);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::desk().validate().is_ok());
        let mut c = tiny(10);
        c.lr.drop_step = 11;
        assert!(c.validate().is_err());
        let mut c = tiny(10);
        c.optimizer.weight_decay = 0.01;
        assert!(c.validate().is_err());
        c.objective.regularization = Regularization::Decoupled;
        assert!(c.validate().is_ok());
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), c);
        assert!(serde_json::from_str::<TrainConfig>(&json.replace("\"steps\"", "\"stepz\"")).is_err());
    }

    #[test]
    fn log_has_one_entry_per_step_and_files_are_written() {
        let clips = vec![walk(0.5, 1)];
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(6);
        cfg.checkpoint_every = 2;
        let out = train(&cfg, &clips, &[], &default_skeleton(), Some(dir.path())).unwrap();
        assert_eq!(out.log.len(), 6);
        assert_eq!(out.log.iter().map(|e| e.step).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
        let text = std::fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert_eq!(out.checkpoints.len(), 3);
        let back: ModelParams<f32> = read_checkpoint(std::fs::File::open(dir.path().join(FINAL_CHECKPOINT)).unwrap()).unwrap();
        assert_eq!(back, out.params);
    }

    #[test]
    fn training_is_deterministic_across_exec_modes() {
        let clips = vec![walk(0.5, 1), walk(0.4, 2)];
        let cfg = tiny(5);
        let a = train(&cfg, &clips, &[], &default_skeleton(), None).unwrap();
        let b = train(&cfg, &clips, &[], &default_skeleton(), None).unwrap();
        assert_eq!(a.params, b.params);
        let samples: Vec<(usize, usize)> = (0..20).map(|i| (i % 2, 7 + i % 15)).collect();
        exec::set_mode(exec::Mode::Sequential);
        let seq = batch_gradients(&a.params, &clips, &samples, &cfg.objective).unwrap();
        exec::set_mode(exec::Mode::Parallel);
        let par = batch_gradients(&a.params, &clips, &samples, &cfg.objective).unwrap();
        assert_eq!(seq.0, par.0);
        assert_eq!(seq.1, par.1);
    }

    #[test]
    fn step_zero_loss_with_zero_output_matches_zero_prediction() {
        let clip = walk(0.5, 3);
        let mut cfg = tiny(1);
        cfg.batch = 1;
        let mut p = init_params::<f32>(&cfg.model, 0).unwrap();
        p.tensors.output_w = Tensor::zeros(8, 132);
        let t = 20;
        let ws = clip.window_set(t, &cfg.model).unwrap();
        let target = clip.target(t, 4).unwrap();
        let (_, b) = sample_gradients(&p, &ws, &target.cast(), &cfg.objective).unwrap();
        let gt = PoseSequence::new(clip.poses.frames[t - 3..=t].to_vec());
        let zero = PoseSequence::new(vec![crate::kinematics::FullBodyPose::from_flat(&[0.0; 132], Default::default()); 4]);
        assert!((b.l_theta - rotation_loss(&zero, &gt).unwrap()).abs() < 1e-4);
    }

    #[test]
    fn short_clips_are_skipped_or_rejected() {
        let short = walk(0.1, 1);
        let ok = walk(0.5, 1);
        let cfg = tiny(2);
        assert!(matches!(Trainer::new(cfg.clone(), std::slice::from_ref(&short)), Err(Error::Config(_))));
        let both = vec![short, ok];
        let mut t = Trainer::new(cfg, &both).unwrap();
        assert!(t.sample_batch().iter().all(|&(c, _)| c == 1));
    }

    #[test]
    fn fixed_weighting_leaves_log_variances_alone() {
        let clips = vec![walk(0.5, 1)];
        let mut cfg = tiny(3);
        cfg.objective.weighting = LossWeighting::fixed();
        let out = train(&cfg, &clips, &[], &default_skeleton(), None).unwrap();
        assert!(out.log.iter().all(|e| e.s_theta == 0.0 && e.s_rv == 0.0));
        cfg.objective.weighting = LossWeighting::Uncertainty;
        let out = train(&cfg, &clips, &[], &default_skeleton(), None).unwrap();
        assert!(out.log.last().unwrap().s_theta != 0.0);
    }
}

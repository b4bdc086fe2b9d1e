//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any fail.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twmlp::datagen::{derive_sparse_stream, synth_motion, MotionClip, MotionKind, MotionSpec};
use twmlp::exec::{self, Mode};
use twmlp::featurize::FeatureWindowSet;
use twmlp::kinematics::{default_skeleton, forward_kinematics_matrices, FullBodyPose, KinematicTree, PoseSequence, JOINT_COUNT};
use twmlp::metrics::{jitter, mpjpe, part_pe, BodyPart, MetricsReport};
use twmlp::model::{base_forward, count_cost, init_params, predict, save_checkpoint, BaseMlp, ModelConfig, Params};
use twmlp::objective::{training_loss, LossWeighting, ObjectiveConfig};
use twmlp::rotmath::{axis_angle_to_matrix, matrix_to_rot6d, rot6d_to_matrix, AxisAngle, RotationMatrix};
use twmlp::runtime::{offline_poses, SessionOptions, StreamingSession};
use twmlp::tensor::gradcheck::check_gradients;
use twmlp::tensor::{Real, Tensor};
use twmlp::trainer::{evaluate, prepare_clips, train, PreparedClip, Protocol, TrainConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn clip(kind: MotionKind, seconds: f64, seed: u64) -> MotionClip {
    synth_motion(&MotionSpec { kind, duration_s: seconds, fps: 60 }, seed).expect("synth")
}

fn bits<F: Real>(t: &Tensor<F>) -> Vec<u64> {
    t.data().iter().map(|x| x.as_f64().to_bits()).collect()
}

fn gradients() -> Outcome {
    let config = ModelConfig::new(8, 2, 2, 16);
    let tree = default_skeleton();
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let prepared = ok(PreparedClip::new(&clip(MotionKind::ALL[seed as usize % 4], 1.0, seed), &tree))?;
        let t = 30 + 3 * seed as usize;
        let ws = ok(prepared.window_set(t, &config))?;
        let target: &'static Tensor<f64> = Box::leak(Box::new(ok(prepared.target(t, config.window))?));
        let params = ok(init_params::<f64>(&config, seed))?;
        let inputs: Vec<Tensor<f64>> = params.tensors.iter().into_iter().cloned().collect();
        let objective = ObjectiveConfig::default();
        let err = ok(check_gradients(
            &inputs,
            |tape, vars| {
                let p = Params::from_ordered(&config, vars.to_vec())?;
                Ok(training_loss(tape, &p, &config, &ws, target, &objective)?.total)
            },
            1e-6,
        ))?;
        ensure!(err < 1e-4, "seed {seed}: relative error {err:.3e}");
        worst = worst.max(err);
    }
    Ok(format!("worst relative error {worst:.2e} over 5 seeds"))
}

fn parameter_count() -> Outcome {
    let base = count_cost(&ModelConfig::new(196, 0, 12, 512)).params as f64 / 1e6;
    let tw = count_cost(&ModelConfig::new(41, 2, 10, 512)).params as f64 / 1e6;
    ensure!((base - 3.74).abs() <= 0.374, "base {base:.3}M");
    ensure!((tw - 3.17).abs() <= 0.25 * 3.17, "windowed {tw:.3}M");
    Ok(format!("base {base:.2}M, windowed {tw:.2}M"))
}

fn flop_count() -> Outcome {
    let base = count_cost(&ModelConfig::new(196, 0, 12, 512)).gflops();
    let tw = count_cost(&ModelConfig::new(41, 2, 10, 512)).gflops();
    ensure!((base - 0.88).abs() <= 0.088, "base {base:.3} GFLOPs");
    ensure!((0.10..=0.20).contains(&tw), "windowed {tw:.3} GFLOPs");
    ensure!(tw / base <= 0.35, "ratio {:.3}", tw / base);
    Ok(format!("base {base:.3}G, windowed {tw:.3}G, ratio {:.3}", tw / base))
}

fn degeneration() -> Outcome {
    let tree = default_skeleton();
    let prepared = ok(PreparedClip::new(&clip(MotionKind::Run, 2.0, 3), &tree))?;
    let config = ModelConfig::new(24, 0, 4, 32);
    for seed in 0..3 {
        let params = ok(init_params::<f32>(&config, seed))?;
        let base = ok(BaseMlp::from_params(params.clone()))?;
        let params64 = params.cast::<f64>();
        let base64 = ok(BaseMlp::from_params(params64.clone()))?;
        for t in [23, 60, 110] {
            let ws: FeatureWindowSet = ok(prepared.window_set(t, &config))?;
            ensure!(ws.past.is_empty(), "K=0 has past windows");
            ensure!(bits(&ok(predict(&params, &ws))?) == bits(&ok(base_forward(&base, &ws.current))?), "f32 seed {seed} t {t}");
            ensure!(bits(&ok(predict(&params64, &ws))?) == bits(&ok(base_forward(&base64, &ws.current))?), "f64 seed {seed} t {t}");
        }
    }
    Ok("3 seeds x 3 windows, f32 and f64".into())
}

fn pose_bits(p: &FullBodyPose) -> Vec<u64> {
    p.flat().iter().chain(p.root.iter()).map(|x| x.to_bits()).collect()
}

fn streaming() -> Outcome {
    let tree = default_skeleton();
    let mut stream = ok(derive_sparse_stream(&clip(MotionKind::Walk, 34.0, 11), &tree))?;
    stream.truncate(2000);
    ensure!(stream.len() == 2000, "stream has {} frames", stream.len());
    let params = std::sync::Arc::new(ok(init_params::<f32>(&ModelConfig::new(16, 2, 4, 64), 5))?);
    let offline = ok(offline_poses(&params, &stream, &tree))?;
    let mut warm = 0;
    for cache in [false, true] {
        let options = SessionOptions { cache_activations: cache, ..Default::default() };
        let mut session = ok(StreamingSession::new(params.clone(), tree.clone(), options))?;
        warm = 0;
        for (t, frame) in stream.iter().enumerate() {
            let live = ok(session.push_frame(frame))?;
            match (&live, &offline[t]) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    ensure!(pose_bits(a) == pose_bits(b), "frame {t} differs (cache {cache})");
                    warm += 1;
                }
                _ => return Err(format!("frame {t}: warm-up mismatch (cache {cache})")),
            }
        }
    }
    Ok(format!("{warm} warm frames identical, with and without cache"))
}

/// Joint positions from the product of 4x4 homogeneous transforms along
/// each joint's chain to the root.
fn chain_positions(local: &[RotationMatrix; JOINT_COUNT], root: &Vector3<f64>, tree: &KinematicTree) -> Vec<Vector3<f64>> {
    (0..JOINT_COUNT)
        .map(|j| {
            let mut chain = vec![j];
            while let Some(p) = tree.parent(*chain.last().unwrap()) {
                chain.push(p);
            }
            let mut m = Matrix4::identity();
            for &k in chain.iter().rev() {
                let mut step = Matrix4::identity();
                step.fixed_view_mut::<3, 3>(0, 0).copy_from(local[k].matrix());
                let offset = if tree.parent(k).is_none() { root + tree.offset(k) } else { *tree.offset(k) };
                step.fixed_view_mut::<3, 1>(0, 3).copy_from(&offset);
                m *= step;
            }
            Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)])
        })
        .collect()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> RotationMatrix {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let v = axis.normalize() * angle;
    axis_angle_to_matrix(AxisAngle::new(v.x, v.y, v.z)).expect("finite")
}

fn rotations_and_fk() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_rt: f64 = 0.0;
    for _ in 0..1000 {
        let r = random_rotation(&mut rng);
        let back = ok(rot6d_to_matrix(&matrix_to_rot6d(&r)))?;
        worst_rt = worst_rt.max((back.matrix() - r.matrix()).amax());
    }
    ensure!(worst_rt < 1e-6, "6D round trip error {worst_rt:.2e}");
    let tree = default_skeleton();
    let mut worst_fk: f64 = 0.0;
    for _ in 0..100 {
        let local: [RotationMatrix; JOINT_COUNT] = std::array::from_fn(|_| random_rotation(&mut rng));
        let root = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0), rng.random_range(-2.0..2.0));
        let fk = forward_kinematics_matrices(&local, &root, &tree);
        for (a, b) in fk.positions.iter().zip(chain_positions(&local, &root, &tree)) {
            worst_fk = worst_fk.max((a - b).amax());
        }
    }
    ensure!(worst_fk < 1e-6, "FK error {worst_fk:.2e}");
    Ok(format!("6D round trip {worst_rt:.1e}, FK vs chain {worst_fk:.1e}"))
}

fn seq_with_roots(rotations: &FullBodyPose, roots: impl Iterator<Item = Vector3<f64>>) -> PoseSequence {
    PoseSequence::new(roots.map(|root| FullBodyPose { root, ..*rotations }).collect())
}

fn metric_identities() -> Outcome {
    let tree = default_skeleton();
    let fps = 60.0;
    let moving = ok(clip(MotionKind::Jump, 2.0, 8).pose_sequence())?;
    let r = ok(MetricsReport::compute(&moving, &moving, &tree, fps))?;
    let errors = [r.mpjre, r.mpjpe, r.mpjve, r.root_pe, r.hand_pe, r.upper_pe, r.lower_pe];
    ensure!(errors.iter().all(|&e| e == 0.0), "identical moving sequences: {errors:?}");
    let still_pose = moving.frames[10];
    let still = seq_with_roots(&still_pose, std::iter::repeat_n(still_pose.root, 30));
    let r = ok(MetricsReport::compute(&still, &still, &tree, fps))?;
    ensure!([r.mpjre, r.mpjpe, r.mpjve, r.jitter, r.root_pe, r.hand_pe, r.upper_pe, r.lower_pe].iter().all(|&e| e == 0.0), "static pair");

    let v = Vector3::new(0.7, -0.1, 1.3);
    let linear = seq_with_roots(&still_pose, (0..120).map(|i| v * (i as f64 / fps)));
    let j_lin = ok(jitter(&linear, &tree, fps))?;
    ensure!(j_lin < 1e-9, "constant velocity jitter {j_lin:.2e}");

    let c = Vector3::new(0.3, 0.2, -0.4);
    let cubic = seq_with_roots(&still_pose, (0..120).map(|i| c * (i as f64 / fps).powi(3)));
    let expected = 6.0 * c.norm() / 100.0;
    let j_cub = ok(jitter(&cubic, &tree, fps))?;
    ensure!((j_cub - expected).abs() < 1e-6, "cubic jerk {j_cub} vs {expected}");

    let other = ok(clip(MotionKind::Walk, 2.0, 9).pose_sequence())?;
    let n = moving.len().min(other.len());
    let (a, b) = (PoseSequence::new(moving.frames[..n].to_vec()), PoseSequence::new(other.frames[..n].to_vec()));
    let all = ok(mpjpe(&a, &b, &tree))?;
    let parts = [BodyPart::Root, BodyPart::Upper, BodyPart::Lower];
    let mut recombined = 0.0;
    for p in parts {
        recombined += ok(part_pe(&a, &b, &tree, p))? * p.joints().len() as f64;
    }
    recombined /= JOINT_COUNT as f64;
    ensure!((recombined - all).abs() < 1e-9, "part recombination {recombined} vs {all}");
    Ok(format!("constant-velocity jitter {j_lin:.1e}, cubic jerk error {:.1e}", (j_cub - expected).abs()))
}

fn desk_learning() -> Outcome {
    let tree = default_skeleton();
    let clips = ok(prepare_clips(&[clip(MotionKind::Walk, 200.0 / 60.0, 7)], &tree))?;
    let mut cfg = TrainConfig::desk();
    cfg.seed = 7;
    let learned = ok(train(&cfg, &clips, &[], &tree, None))?;
    let first = learned.log.first().unwrap().loss.l_theta;
    let last = learned.log.last().unwrap();
    ensure!(last.loss.l_theta < 0.1 * first, "L_theta {first:.3} -> {:.3}", last.loss.l_theta);
    ensure!(last.s_theta.is_finite() && last.s_rv.is_finite(), "s diverged");
    let report = ok(evaluate(&learned.params, &clips, Protocol::Online, &tree, 60.0))?;
    ensure!(report.mpjre < 5.0, "MPJRE {:.2} deg", report.mpjre);
    cfg.objective.weighting = LossWeighting::fixed();
    let fixed = ok(train(&cfg, &clips, &[], &tree, None))?;
    let fixed_last = fixed.log.last().unwrap().loss.l_theta;
    let ratio = last.loss.l_theta.max(fixed_last) / last.loss.l_theta.min(fixed_last);
    ensure!(ratio <= 2.0, "uncertainty {:.3} vs fixed {fixed_last:.3}", last.loss.l_theta);
    Ok(format!(
        "L_theta {first:.2} -> {:.2}, MPJRE {:.2} deg, s=({:.3}, {:.3}), fixed-weight L_theta {fixed_last:.2}",
        last.loss.l_theta, report.mpjre, last.s_theta, last.s_rv
    ))
}

fn latency_ordering() -> Outcome {
    let options = SessionOptions::default();
    let tw = ok(twmlp::runtime::bench_latency(&ModelConfig::new(41, 2, 10, 512), 0.5, 60.0, options))?;
    let base = ok(twmlp::runtime::bench_latency(&ModelConfig::new(196, 0, 12, 512), 0.5, 60.0, options))?;
    ensure!(tw.mean_ms < base.mean_ms, "windowed {:.2} ms vs base {:.2} ms", tw.mean_ms, base.mean_ms);
    Ok(format!("windowed {:.2} ms < base {:.2} ms per frame", tw.mean_ms, base.mean_ms))
}

fn determinism() -> Outcome {
    let tree = default_skeleton();
    let clips = ok(prepare_clips(&[clip(MotionKind::Walk, 3.0, 1), clip(MotionKind::Run, 3.0, 2)], &tree))?;
    let mut cfg = TrainConfig::desk();
    cfg.steps = 150;
    cfg.lr = twmlp::trainer::LrSchedule::scaled_to(150);
    cfg.model = ModelConfig::new(8, 2, 2, 32);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    let mut reports = Vec::new();
    for (i, mode) in [Mode::Parallel, Mode::Sequential].into_iter().enumerate() {
        exec::set_mode(mode);
        let out = ok(train(&cfg, &clips, &[], &tree, None));
        exec::set_mode(Mode::Parallel);
        let out = out?;
        let path = dir.path().join(format!("run{i}.twm"));
        ok(save_checkpoint(&out.params, &path))?;
        bytes.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        reports.push(ok(evaluate(&out.params, &clips, Protocol::Online, &tree, 60.0))?);
        reports.push(ok(evaluate(&out.params, &clips, Protocol::Sequence, &tree, 60.0))?);
    }
    ensure!(bytes[0] == bytes[1], "checkpoints differ");
    ensure!(reports[0] == reports[2] && reports[1] == reports[3], "reports differ");
    Ok(format!("{}-byte checkpoints identical across parallel and sequential runs", bytes[0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient integrity", gradients),
        ("parameter count", parameter_count),
        ("FLOP accounting", flop_count),
        ("structural degeneration", degeneration),
        ("streaming equals batch", streaming),
        ("rotation and FK oracles", rotations_and_fk),
        ("metric identities", metric_identities),
        ("desk-scale learning", desk_learning),
        ("latency ordering", latency_ordering),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = fmt_duration(start.elapsed());
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({took}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({took}): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn fmt_duration(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

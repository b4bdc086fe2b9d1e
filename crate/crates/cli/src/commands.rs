use std::io::{BufRead, BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use twmlp::datagen::{save_clip, split_dataset, synth_motion, DatasetManifest, ManifestEntry, MotionKind, MotionSpec, Split};
use twmlp::kinematics::{default_skeleton, KinematicTree};
use twmlp::model::{count_cost, init_params, load_checkpoint, ModelConfig, ModelParams};
use twmlp::objective::LossWeighting;
use twmlp::runtime::{bench_latency, format_pose_csv, parse_frame_csv, SessionOptions, StreamingSession};
use twmlp::trainer::{ablation_grid, evaluate_checkpoint, prepare_clips, train_manifest, Protocol};

use crate::config::{Overrides, RunConfig};
use crate::{Command, Common, KindArg, LossArg, ProtocolArg};

pub const MANIFEST: &str = "manifest.txt";

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        window: common.window,
        past: common.past,
        blocks: common.blocks,
        width: common.width,
        steps: common.steps,
        batch: common.batch,
        seed: common.seed,
        fps: common.fps,
        out: common.out.clone(),
        protocol: common.protocol.map(|p| match p {
            ProtocolArg::Online => Protocol::Online,
            ProtocolArg::Sequence => Protocol::Sequence,
        }),
        loss: common.loss.map(|l| match l {
            LossArg::Uncertainty => LossWeighting::Uncertainty,
            LossArg::Fixed => LossWeighting::fixed(),
        }),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn skeleton(cfg: &RunConfig) -> Result<KinematicTree> {
    match &cfg.skeleton {
        Some(p) => Ok(KinematicTree::load(p).with_context(|| format!("loading skeleton {}", p.display()))?),
        None => Ok(default_skeleton()),
    }
}

fn manifest(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<DatasetManifest> {
    let path = flag.or_else(|| cfg.manifest.clone()).context("no dataset manifest given (--data)")?;
    Ok(DatasetManifest::load_file(&path).with_context(|| format!("loading manifest {}", path.display()))?)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { common, kind, count, duration } => {
            let mut cfg = resolve(&common)?;
            if !kind.is_empty() {
                cfg.synth.kinds = if kind.contains(&KindArg::All) {
                    MotionKind::ALL.to_vec()
                } else {
                    kind.iter()
                        .map(|k| match k {
                            KindArg::Walk => MotionKind::Walk,
                            KindArg::Run => MotionKind::Run,
                            KindArg::Jump => MotionKind::Jump,
                            _ => MotionKind::Idle,
                        })
                        .collect()
                };
            }
            if let Some(c) = count {
                cfg.synth.count = c;
            }
            if let Some(d) = duration {
                cfg.synth.duration_s = d;
            }
            cfg.validate()?;
            synth(&cfg)
        }
        Command::Train { common, data } => {
            let cfg = resolve(&common)?;
            let m = manifest(&cfg, data)?;
            cfg.write_effective(&cfg.out)?;
            let out = train_manifest(&cfg.train, &m, &skeleton(&cfg)?, Some(&cfg.out))?;
            let last = out.log.last().expect("at least one step");
            println!(
                "trained {} steps: l_theta {:.5} l_rv {:.5} total {:.5} s_theta {:.4} s_rv {:.4}",
                out.log.len(),
                last.loss.l_theta,
                last.loss.l_rv,
                last.loss.total,
                last.s_theta,
                last.s_rv
            );
            for p in &out.checkpoints {
                println!("checkpoint {}", p.display());
            }
            Ok(())
        }
        Command::Eval { common, checkpoint, data, ablation, grid_t, grid_k } => {
            let cfg = resolve(&common)?;
            let m = manifest(&cfg, data)?;
            let tree = skeleton(&cfg)?;
            cfg.write_effective(&cfg.out)?;
            if ablation {
                let train = prepare_clips(&m.load(Split::Train)?, &tree)?;
                let test = prepare_clips(&m.load(Split::Test)?, &tree)?;
                let table = ablation_grid(&cfg.train, &grid_t, &grid_k, &train, &test, &tree, cfg.protocol, m.fps as f64)?;
                let text = table.to_text();
                std::fs::write(cfg.out.join("ablation.md"), &text)?;
                std::fs::write(cfg.out.join("ablation.json"), serde_json::to_string_pretty(&table)?)?;
                print!("{text}");
                return Ok(());
            }
            let ckpt = checkpoint.or_else(|| cfg.checkpoint.clone()).context("no checkpoint given (--checkpoint)")?;
            let report = evaluate_checkpoint(&ckpt, &m, cfg.protocol, &tree)?;
            std::fs::write(cfg.out.join("metrics.txt"), report.to_text())?;
            std::fs::write(cfg.out.join("metrics.json"), report.to_json())?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::Flops { common, layers, json } => {
            let cfg = resolve(&common)?;
            flops(&cfg.train.model, layers, json)
        }
        Command::Bench { common, duration, cache, compare } => {
            let mut cfg = resolve(&common)?;
            if let Some(d) = duration {
                cfg.bench.duration_s = d;
            }
            cfg.bench.cache |= cache;
            cfg.validate()?;
            bench(&cfg, compare)
        }
        Command::Stream { common, checkpoint, cache, pad } => {
            let cfg = resolve(&common)?;
            let params = match checkpoint.or_else(|| cfg.checkpoint.clone()) {
                Some(p) => load_checkpoint(&p).with_context(|| format!("loading checkpoint {}", p.display()))?,
                None => init_params::<f32>(&cfg.train.model, cfg.train.seed)?,
            };
            let options = SessionOptions {
                padding: if pad { twmlp::featurize::Padding::RepeatFirst } else { twmlp::featurize::Padding::Reject },
                cache_activations: cache || cfg.bench.cache,
            };
            stream(Arc::new(params), skeleton(&cfg)?, options)
        }
    }
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.synth;
    std::fs::create_dir_all(&cfg.out)?;
    let mut names = Vec::new();
    for (ki, &kind) in s.kinds.iter().enumerate() {
        for i in 0..s.count {
            let seed = cfg.train.seed.wrapping_add(((ki as u64) << 32) + i as u64);
            let clip = synth_motion(&MotionSpec { kind, duration_s: s.duration_s, fps: cfg.fps }, seed)?;
            let name = PathBuf::from(format!("{}_{i:03}.motn", kind.name()));
            save_clip(&clip, &cfg.out.join(&name))?;
            println!("{} ({} frames)", cfg.out.join(&name).display(), clip.len());
            names.push(name);
        }
    }
    let manifest = if names.len() >= 2 {
        split_dataset(&names, s.ratio, cfg.train.seed, cfg.fps)?
    } else {
        DatasetManifest {
            seed: cfg.train.seed,
            fps: cfg.fps,
            ratio: s.ratio,
            entries: names.into_iter().map(|path| ManifestEntry { path, split: Split::Train }).collect(),
        }
    };
    manifest.save(&cfg.out.join(MANIFEST))?;
    cfg.write_effective(&cfg.out)?;
    println!("{}", cfg.out.join(MANIFEST).display());
    Ok(())
}

fn flops(model: &ModelConfig, layers: bool, json: bool) -> Result<()> {
    let r = count_cost(model);
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    let name = if model.past_windows > 0 { "TW-MLP" } else { "MLP" };
    println!("| model | T | K | L | D | params (M) | GFLOPs |");
    println!("|---|---|---|---|---|---|---|");
    println!(
        "| {name} | {} | {} | {} | {} | {:.2} | {:.2} |",
        model.window,
        model.past_windows,
        model.blocks,
        model.width,
        r.mparams(),
        r.gflops()
    );
    if layers {
        println!();
        println!("| layer | params | MFLOPs | activation KiB |");
        println!("|---|---|---|---|");
        for l in &r.layers {
            println!("| {} | {} | {:.3} | {:.1} |", l.name, l.params, l.flops as f64 / 1e6, l.activation_bytes as f64 / 1024.0);
        }
    }
    Ok(())
}

fn bench(cfg: &RunConfig, compare: bool) -> Result<()> {
    let options = SessionOptions { cache_activations: cfg.bench.cache, ..Default::default() };
    let model = &cfg.train.model;
    let mut results = vec![(model.clone(), bench_latency(model, cfg.bench.duration_s, cfg.fps as f64, options)?)];
    if compare {
        let base = ModelConfig::new(196, 0, 12, model.width);
        results.push((base.clone(), bench_latency(&base, cfg.bench.duration_s, cfg.fps as f64, options)?));
    }
    println!("| T | K | L | D | samples | mean ms | p50 ms | p99 ms | achieved fps |");
    println!("|---|---|---|---|---|---|---|---|---|");
    for (m, r) in &results {
        println!(
            "| {} | {} | {} | {} | {} | {:.3} | {:.3} | {:.3} | {:.1} |",
            m.window,
            m.past_windows,
            m.blocks,
            m.width,
            r.samples_ms.len(),
            r.mean_ms,
            r.p50_ms,
            r.p99_ms,
            r.achieved_fps
        );
    }
    cfg.write_effective(&cfg.out)?;
    let json: Vec<_> = results.iter().map(|(m, r)| serde_json::json!({ "model": m, "latency": r })).collect();
    std::fs::write(cfg.out.join("latency.json"), serde_json::to_string_pretty(&json)?)?;
    Ok(())
}

fn stream(params: Arc<ModelParams<f32>>, tree: KinematicTree, options: SessionOptions) -> Result<()> {
    let mut session = StreamingSession::new(params, tree, options)?;
    let stdin = std::io::stdin();
    let mut out = BufWriter::new(std::io::stdout().lock());
    for (n, line) in stdin.lock().lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let frame = parse_frame_csv(trimmed).with_context(|| format!("input line {}", n + 1))?;
        if let Some(pose) = session.push_frame(&frame).with_context(|| format!("input line {}", n + 1))? {
            writeln!(out, "{}", format_pose_csv(frame.t, &pose))?;
            out.flush()?;
        }
    }
    Ok(())
}


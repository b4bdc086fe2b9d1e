//! Run configuration: a JSON file merged with command-line overrides.
//!
//! ```json
//! {
//!   "train": { "steps": 2000, "batch": 16, "seed": 0, "lr": {...}, "model": {...} },
//!   "fps": 60,
//!   "protocol": "online",
//!   "manifest": "data/manifest.txt",
//!   "checkpoint": "runs/final.twm",
//!   "out": "runs",
//!   "skeleton": null,
//!   "synth": { "kinds": ["walk"], "count": 1, "duration_s": 10.0, "ratio": 0.9 },
//!   "bench": { "duration_s": 2.0, "cache": false }
//! }
//! ```
//!
//! Every section is optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use twmlp::datagen::MotionKind;
use twmlp::trainer::{LrSchedule, Protocol, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub kinds: Vec<MotionKind>,
    /// Clips per kind.
    pub count: usize,
    pub duration_s: f64,
    pub ratio: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self { kinds: vec![MotionKind::Walk], count: 1, duration_s: 10.0, ratio: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub duration_s: f64,
    pub cache: bool,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self { duration_s: 2.0, cache: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub fps: u32,
    pub protocol: Protocol,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub skeleton: Option<PathBuf>,
    pub synth: SynthSettings,
    pub bench: BenchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::desk(),
            fps: 60,
            protocol: Protocol::Online,
            manifest: None,
            checkpoint: None,
            out: PathBuf::from("out"),
            skeleton: None,
            synth: SynthSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub window: Option<usize>,
    pub past: Option<usize>,
    pub blocks: Option<usize>,
    pub width: Option<usize>,
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub fps: Option<u32>,
    pub out: Option<PathBuf>,
    pub protocol: Option<Protocol>,
    pub loss: Option<twmlp::objective::LossWeighting>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// `--L` also resets fusion to every odd block; `--steps` moves the
    /// learning-rate drop to three quarters of the run.
    pub fn apply(&mut self, o: &Overrides) {
        let m = &mut self.train.model;
        if let Some(v) = o.window {
            m.window = v;
        }
        if let Some(v) = o.past {
            m.past_windows = v;
        }
        if let Some(v) = o.blocks {
            m.blocks = v;
            m.fusion_layers = (1..=v).step_by(2).collect();
        }
        if let Some(v) = o.width {
            m.width = v;
        }
        if let Some(v) = o.steps {
            self.train.steps = v;
            self.train.lr = LrSchedule { drop_step: v * 3 / 4, ..self.train.lr };
        }
        if let Some(v) = o.batch {
            self.train.batch = v;
        }
        if let Some(v) = o.seed {
            self.train.seed = v;
        }
        if let Some(v) = o.fps {
            self.fps = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.protocol {
            self.protocol = v;
        }
        if let Some(v) = o.loss {
            self.train.objective.weighting = v;
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        if self.fps == 0 {
            bail!("fps must be positive");
        }
        if self.synth.count == 0 || self.synth.kinds.is_empty() {
            bail!("synth needs at least one kind and a positive count");
        }
        if !(self.synth.duration_s > 0.0) || !(self.bench.duration_s > 0.0) {
            bail!("durations must be positive");
        }
        Ok(())
    }

    pub fn write_effective(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

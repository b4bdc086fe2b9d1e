//! Dataset manifest, a line-oriented text file:
//!
//! ```text
//! # twmlp dataset manifest
//! seed 7
//! fps 60
//! ratio 0.9
//! train walk_000.motn
//! test run_001.motn
//! ```
//!
//! Relative clip paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{load_clip, MotionClip};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub fps: u32,
    pub ratio: f64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn paths(&self, split: Split) -> Vec<&Path> {
        self.entries.iter().filter(|e| e.split == split).map(|e| e.path.as_path()).collect()
    }

    /// Loads every clip of `split`, in manifest order.
    pub fn load(&self, split: Split) -> Result<Vec<MotionClip>> {
        self.paths(split).into_iter().map(load_clip).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# twmlp dataset manifest\n");
        let _ = writeln!(s, "seed {}\nfps {}\nratio {}", self.seed, self.fps, self.ratio);
        for e in &self.entries {
            let _ = writeln!(s, "{} {}", e.split.name(), e.path.display());
        }
        s
    }

    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let (mut seed, mut fps, mut ratio) = (None, None, None);
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Config(format!("manifest line {}: {m}", n + 1));
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| bad("expected `key value`"))?;
            let value = value.trim();
            match key {
                "seed" => seed = Some(value.parse().map_err(|_| bad("bad seed"))?),
                "fps" => fps = Some(value.parse().map_err(|_| bad("bad fps"))?),
                "ratio" => ratio = Some(value.parse().map_err(|_| bad("bad ratio"))?),
                "train" | "test" => {
                    let split = if key == "train" { Split::Train } else { Split::Test };
                    let p = Path::new(value);
                    let path = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
                    entries.push(ManifestEntry { path, split });
                }
                other => return Err(bad(&format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("manifest missing `{k}`"));
        Ok(Self {
            seed: seed.ok_or_else(|| missing("seed"))?,
            fps: fps.ok_or_else(|| missing("fps"))?,
            ratio: ratio.ok_or_else(|| missing("ratio"))?,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&std::fs::read_to_string(path)?, base)
    }
}

/// Seeded shuffle, then the first `⌈ratio·N⌉` clips (at most `N − 1`) train.
pub fn split_dataset(clips: &[PathBuf], ratio: f64, seed: u64, fps: u32) -> Result<DatasetManifest> {
    if clips.len() < 2 {
        return Err(Error::Contract(format!("need >= 2 clips to split, got {}", clips.len())));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let unique: BTreeSet<&PathBuf> = clips.iter().collect();
    if unique.len() != clips.len() {
        return Err(Error::Contract("duplicate clip paths".into()));
    }
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = clips.len();
    let n_train = ((ratio * n as f64).ceil() as usize).clamp(1, n - 1);
    let entries = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| ManifestEntry {
            path: clips[i].clone(),
            split: if rank < n_train { Split::Train } else { Split::Test },
        })
        .collect();
    Ok(DatasetManifest { seed, fps, ratio, entries })
}

//! Dataset manifests.
//!
//! Format, one record per line, `#` starts a comment:
//!
//! ```text
//! seed 42
//! train structures/00000.cif
//! val structures/00001.cif
//! ```
//!
//! Paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<(PathBuf, Split)>,
}

impl DatasetManifest {
    /// Shuffles `paths` with `seed` and assigns rounded 80/10/10 shares.
    pub fn split_80_10_10(paths: Vec<PathBuf>, seed: u64) -> Result<Self, IoError> {
        let n = paths.len();
        let n_train = (0.8 * n as f64).round() as usize;
        let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut split = vec![Split::Test; n];
        for (rank, &i) in idx.iter().enumerate() {
            split[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        let m = Self { seed, entries: paths.into_iter().zip(split).collect() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let mut seen = HashSet::new();
        for (p, _) in &self.entries {
            if !seen.insert(p) {
                return Err(IoError::Manifest(format!("duplicate path {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn paths(&self, split: Split) -> Vec<&Path> {
        self.entries
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(p, _)| p.as_path())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|(_, s)| *s == split).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("seed {}\n", self.seed);
        for (p, s) in &self.entries {
            out.push_str(&format!("{s} {}\n", p.display()));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut seed = None;
        let mut entries = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| IoError::Manifest(format!("line {}: {msg}", k + 1));
            let (key, rest) = line.split_once(char::is_whitespace).ok_or_else(|| bad("expected `<tag> <value>`".into()))?;
            let rest = rest.trim();
            if key == "seed" {
                seed = Some(rest.parse::<u64>().map_err(|e| bad(e.to_string()))?);
            } else {
                let split = key.parse::<Split>().map_err(bad)?;
                entries.push((PathBuf::from(rest), split));
            }
        }
        let m = Self {
            seed: seed.ok_or_else(|| IoError::Manifest("missing seed line".into()))?,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Entry path resolved against the directory holding `manifest_path`.
    pub fn resolve(manifest_path: &Path, entry: &Path) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(entry)
    }
}

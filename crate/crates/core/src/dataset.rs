//! Train/valid/test partitions: chronological (time-wise) and random
//! (time-ignore).

use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::triplet::{read_jsonl, write_jsonl, JsonlError, MethodPairTriplet};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("invalid split parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {source}")]
    Manifest {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPolicy {
    /// Train and valid predate the boundary; test is on or after it.
    #[serde(rename = "timewise")]
    TimeWise,
    /// Seeded random partition that ignores dates.
    #[serde(rename = "random")]
    TimeIgnore,
}

impl SplitPolicy {
    pub fn name(self) -> &'static str {
        match self {
            SplitPolicy::TimeWise => "timewise",
            SplitPolicy::TimeIgnore => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<MethodPairTriplet>,
    pub valid: Vec<MethodPairTriplet>,
    pub test: Vec<MethodPairTriplet>,
    pub policy: SplitPolicy,
    pub boundary: Option<DateTime<Utc>>,
    pub seed: Option<u64>,
    pub fractions: Vec<f64>,
}

impl DatasetSplit {
    /// Size of the training set.
    pub fn num_training_examples(&self) -> usize {
        self.train.len()
    }
}

/// 2020-01-01T00:00:00Z.
pub fn default_boundary() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
}

/// Everything dated before `boundary` is shuffled with `seed` and divided
/// `train_fraction : 1 - train_fraction` into train/valid; the rest is test.
pub fn split_timewise(
    triplets: &[MethodPairTriplet],
    boundary: DateTime<Utc>,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidParameters(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let (mut pre, test): (Vec<_>, Vec<_>) = triplets
        .iter()
        .cloned()
        .partition(|t| t.commit_time < boundary);
    if pre.is_empty() || test.is_empty() {
        return Err(DatasetError::DegenerateSplit(format!(
            "{} triplets before and {} on/after the boundary {boundary}",
            pre.len(),
            test.len()
        )));
    }
    pre.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * pre.len() as f64).round() as usize;
    let valid = pre.split_off(n_train.min(pre.len()));
    Ok(DatasetSplit {
        train: pre,
        valid,
        test,
        policy: SplitPolicy::TimeWise,
        boundary: Some(boundary),
        seed: Some(seed),
        fractions: vec![train_fraction, 1.0 - train_fraction],
    })
}

/// Part sizes by largest-remainder rounding; ties go to the earlier part.
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Seeded shuffle followed by a contiguous train/valid/test partition.
pub fn split_random(
    triplets: &[MethodPairTriplet],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&x| !(x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidParameters(format!(
            "fractions {f:?} must be positive and sum to 1"
        )));
    }
    if triplets.len() < 3 {
        return Err(DatasetError::DegenerateSplit(format!(
            "need at least 3 triplets, got {}",
            triplets.len()
        )));
    }
    let mut all = triplets.to_vec();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sizes = largest_remainder(all.len(), &f);
    let test = all.split_off(sizes[0] + sizes[1]);
    let valid = all.split_off(sizes[0]);
    Ok(DatasetSplit {
        train: all,
        valid,
        test,
        policy: SplitPolicy::TimeIgnore,
        boundary: None,
        seed: Some(seed),
        fractions: f.to_vec(),
    })
}

/// On-disk description of a split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub policy: SplitPolicy,
    pub boundary: Option<String>,
    pub seed: Option<u64>,
    pub fractions: Vec<f64>,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `train.jsonl`, `valid.jsonl`, `test.jsonl` and `manifest.json`
/// into `dir`. Paths in the manifest are relative to `dir`.
pub fn save_split(split: &DatasetSplit, dir: &Path) -> Result<SplitManifest, DatasetError> {
    let manifest = SplitManifest {
        policy: split.policy,
        boundary: split.boundary.as_ref().map(crate::triplet::format_time),
        seed: split.seed,
        fractions: split.fractions.clone(),
        train: "train.jsonl".into(),
        valid: "valid.jsonl".into(),
        test: "test.jsonl".into(),
    };
    write_jsonl(&dir.join(&manifest.train), &split.train)?;
    write_jsonl(&dir.join(&manifest.valid), &split.valid)?;
    write_jsonl(&dir.join(&manifest.test), &split.test)?;
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|source| DatasetError::Manifest {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<SplitManifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Manifest {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_split(dir: &Path) -> Result<DatasetSplit, DatasetError> {
    let m = read_manifest(dir)?;
    Ok(DatasetSplit {
        train: read_jsonl(&dir.join(&m.train))?,
        valid: read_jsonl(&dir.join(&m.valid))?,
        test: read_jsonl(&dir.join(&m.test))?,
        policy: m.policy,
        boundary: m.boundary.as_deref().and_then(crate::triplet::parse_time),
        seed: m.seed,
        fractions: m.fractions,
    })
}

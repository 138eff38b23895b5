//! Flat `key = value` pipeline configuration.
//!
//! Values come from, in increasing precedence: built-in defaults, the TOML
//! file given by `--config`, `UPDATEBENCH_<KEY>` environment variables and
//! command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use updatebench::dataset::SplitPolicy;
use updatebench::metrics::CodeBleuWeights;
use updatebench::miner::FilterPolicy;
use updatebench::model::{ModelConfig, TrainConfig};
use updatebench::pipeline::TokenMode;

pub const ENV_PREFIX: &str = "UPDATEBENCH_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// File listing one repository path or URL per line.
    pub repos: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Where cloned repositories are kept.
    pub clone_dir: Option<PathBuf>,
    pub since: String,
    pub until: String,
    pub filter: bool,
    pub max_method_tokens: usize,
    pub max_changed_tokens: usize,
    pub mode: TokenMode,
    pub num_merges: usize,
    pub split: SplitPolicy,
    pub boundary: String,
    pub seed: u64,
    /// Train share of the pre-boundary data for time-wise splits.
    pub train_fraction: f64,
    /// Train, valid and test shares for random splits.
    pub random_fractions: [f64; 3],
    pub d_model: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub positional_encoding: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: Option<f64>,
    pub max_steps: Option<usize>,
    pub parallel_training: bool,
    pub beams: Vec<usize>,
    /// BLEU, weighted BLEU, syntax and dataflow weights of CodeBLEU.
    pub codebleu_weights: [f64; 4],
    /// Replacement keyword table for `classify`.
    pub type_table: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let filter = FilterPolicy::default();
        Self {
            repos: None,
            out_dir: PathBuf::from("out"),
            clone_dir: None,
            since: "1970-01-01".into(),
            until: "2100-01-01".into(),
            filter: filter.enabled,
            max_method_tokens: filter.max_method_tokens,
            max_changed_tokens: filter.max_changed_tokens,
            mode: TokenMode::Bpe,
            num_merges: updatebench::bpe::DEFAULT_NUM_MERGES,
            split: SplitPolicy::TimeWise,
            boundary: "2020-01-01".into(),
            seed: 0,
            train_fraction: 0.8,
            random_fractions: [0.8, 0.1, 0.1],
            d_model: model.d_model,
            num_heads: model.num_heads,
            encoder_layers: model.encoder_layers,
            decoder_layers: model.decoder_layers,
            ffn_dim: model.ffn_dim,
            max_seq_len: model.max_seq_len,
            dropout: model.dropout,
            positional_encoding: model.positional_encoding,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            grad_clip: train.grad_clip,
            max_steps: train.max_steps,
            parallel_training: train.parallel,
            beams: vec![1, 5, 10, 15],
            codebleu_weights: [0.25; 4],
            type_table: None,
            jobs: None,
        }
    }
}

impl PipelineConfig {
    /// Layers the file at `path` (if any) and the environment over the
    /// defaults. Relative paths in a file resolve against its directory.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, String> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
            None => String::new(),
        };
        let mut cfg = Self::parse(&text, env).map_err(|e| match path {
            Some(p) => format!("{}: {e}", p.display()),
            None => e,
        })?;
        if let Some(base) = path.and_then(Path::parent) {
            for p in [&mut cfg.repos, &mut cfg.clone_dir, &mut cfg.type_table].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if cfg.out_dir.is_relative() {
                cfg.out_dir = base.join(&cfg.out_dir);
            }
        }
        Ok(cfg)
    }

    /// Layers TOML `text` and the environment over the defaults, leaving
    /// paths as written.
    pub fn parse(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, String> {
        let mut table = text.parse::<toml::Table>().map_err(|e| e.to_string())?;
        for (key, value) in env {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            table.insert(name.to_lowercase(), env_value(&value));
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| e.message().to_string())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            num_heads: self.num_heads,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            dropout: self.dropout,
            seed: self.seed,
            positional_encoding: self.positional_encoding,
            ..ModelConfig::default()
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            grad_clip: self.grad_clip,
            max_steps: self.max_steps,
            parallel: self.parallel_training,
            ..TrainConfig::default()
        }
    }

    pub fn filter_policy(&self) -> FilterPolicy {
        FilterPolicy {
            max_method_tokens: self.max_method_tokens,
            max_changed_tokens: self.max_changed_tokens,
            enabled: self.filter,
        }
    }

    pub fn weights(&self) -> CodeBleuWeights {
        let [bleu, weighted_bleu, ast, dataflow] = self.codebleu_weights;
        CodeBleuWeights {
            bleu,
            weighted_bleu,
            ast,
            dataflow,
        }
    }
}

/// Environment values are read as TOML when they parse as a value and as
/// plain strings otherwise, so `UPDATEBENCH_MODE=abs` needs no quoting.
fn env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

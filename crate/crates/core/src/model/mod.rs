//! A compact transformer encoder-decoder, trained from scratch with
//! cross-entropy and decoded with beam search.
//!
//! Everything runs in `f64` on the CPU with hand-written backward passes;
//! checkpoints store `f32`.

mod beam;
mod checkpoint;
pub mod layers;
mod train;
mod transformer;
mod vocab;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use beam::{beam_search, search, BeamCandidate, StepModel};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use train::{train, EpochStats, TrainConfig, TrainOutcome};
pub use transformer::{decode_step, encode, positional_row, DecoderState, EncoderState, Example, IncrementalDecoder};
pub use vocab::{Vocab, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

use layers::{Attention, FeedForward, LayerNorm, Linear, Mat, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Sinusoidal position signal added to embeddings. Only switched off to
    /// probe permutation behaviour.
    #[serde(default = "yes")]
    pub positional_encoding: bool,
}

fn yes() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            num_heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 512,
            max_seq_len: 256,
            vocab_size: 8_004,
            dropout: 0.1,
            seed: 0,
            positional_encoding: true,
        }
    }
}

/// Upper bounds that keep a hostile checkpoint header from requesting an
/// absurd allocation.
const MAX_DIM: usize = 1 << 14;
const MAX_LAYERS: usize = 64;
const MAX_VOCAB: usize = 1 << 21;

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.num_heads == 0 || self.ffn_dim == 0 || self.max_seq_len == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return bad("layer counts must be positive".into());
        }
        if self.vocab_size <= vocab::SPECIAL_COUNT {
            return bad(format!("vocab_size {} leaves no room past the specials", self.vocab_size));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.d_model > MAX_DIM
            || self.ffn_dim > MAX_DIM
            || self.max_seq_len > MAX_DIM
            || self.encoder_layers > MAX_LAYERS
            || self.decoder_layers > MAX_LAYERS
            || self.vocab_size > MAX_VOCAB
        {
            return bad("configuration exceeds supported size".into());
        }
        Ok(())
    }

    /// Number of scalar parameters implied by the configuration.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let linear = |i: usize, o: usize| i * o + o;
        let attn = 4 * linear(d, d);
        let norm = 2 * d;
        let ffn = linear(d, self.ffn_dim) + linear(self.ffn_dim, d);
        let enc = 2 * norm + attn + ffn;
        let dec = 3 * norm + 2 * attn + ffn;
        self.vocab_size * d
            + self.encoder_layers * enc
            + norm
            + self.decoder_layers * dec
            + norm
            + linear(d, self.vocab_size)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token id {id} outside vocabulary of {vocab_size}")]
    Vocab { id: usize, vocab_size: usize },
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("prefix must start with BOS")]
    MissingBos,
    #[error("no training examples")]
    EmptyTrainingSet,
    #[error("training diverged at epoch {epoch}, step {step}")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        /// Parameters after the last step that kept every tensor finite.
        last_finite: Box<ModelParams>,
    },
}

#[derive(Clone, PartialEq)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub self_attn: Attention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Clone, PartialEq)]
pub struct DecoderLayer {
    pub norm1: LayerNorm,
    pub self_attn: Attention,
    pub norm2: LayerNorm,
    pub cross_attn: Attention,
    pub norm3: LayerNorm,
    pub ffn: FeedForward,
}

/// All trainable tensors. The embedding table is shared by source and target.
#[derive(Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embedding: Mat,
    pub encoder: Vec<EncoderLayer>,
    pub encoder_norm: LayerNorm,
    pub decoder: Vec<DecoderLayer>,
    pub decoder_norm: LayerNorm,
    pub output: Linear,
}

impl fmt::Debug for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelParams")
            .field("config", &self.config)
            .field("parameters", &self.config.parameter_count())
            .finish()
    }
}

impl ModelParams {
    /// Seeded random initialisation.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        // unit variance after the sqrt(d) input scaling
        let emb_bound = (3.0 / d as f64).sqrt();
        let embedding = layers::uniform_mat(config.vocab_size, d, emb_bound, &mut rng);
        let encoder = (0..config.encoder_layers)
            .map(|_| EncoderLayer {
                norm1: LayerNorm::new(d),
                self_attn: Attention::init(d, &mut rng),
                norm2: LayerNorm::new(d),
                ffn: FeedForward::init(d, config.ffn_dim, &mut rng),
            })
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|_| DecoderLayer {
                norm1: LayerNorm::new(d),
                self_attn: Attention::init(d, &mut rng),
                norm2: LayerNorm::new(d),
                cross_attn: Attention::init(d, &mut rng),
                norm3: LayerNorm::new(d),
                ffn: FeedForward::init(d, config.ffn_dim, &mut rng),
            })
            .collect();
        // small output weights so the first predictions are near uniform
        let out_bound = 0.02 * 3f64.sqrt();
        let output = Linear {
            weight: layers::uniform_mat(d, config.vocab_size, out_bound, &mut rng),
            bias: layers::Row::zeros(config.vocab_size),
        };
        Ok(Self {
            config: config.clone(),
            embedding,
            encoder,
            encoder_norm: LayerNorm::new(d),
            decoder,
            decoder_norm: LayerNorm::new(d),
            output,
        })
    }

    /// Same structure, every value zero. Used for gradients.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        Self {
            config: config.clone(),
            embedding: Mat::zeros((config.vocab_size, d)),
            encoder: (0..config.encoder_layers)
                .map(|_| EncoderLayer {
                    norm1: LayerNorm::zeros(d),
                    self_attn: Attention::zeros(d),
                    norm2: LayerNorm::zeros(d),
                    ffn: FeedForward::zeros(d, config.ffn_dim),
                })
                .collect(),
            encoder_norm: LayerNorm::zeros(d),
            decoder: (0..config.decoder_layers)
                .map(|_| DecoderLayer {
                    norm1: LayerNorm::zeros(d),
                    self_attn: Attention::zeros(d),
                    norm2: LayerNorm::zeros(d),
                    cross_attn: Attention::zeros(d),
                    norm3: LayerNorm::zeros(d),
                    ffn: FeedForward::zeros(d, config.ffn_dim),
                })
                .collect(),
            decoder_norm: LayerNorm::zeros(d),
            output: Linear::zeros(d, config.vocab_size),
        }
    }

    /// `(name, shape)` of every tensor in visiting order.
    pub fn tensor_index(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, _, shape| out.push((name, shape)));
        out
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, values, _| ok &= values.iter().all(|v| v.is_finite()));
        ok
    }

    /// Flattened copy of every parameter in visiting order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.parameter_count());
        self.visit("", &mut |_, values, _| out.extend_from_slice(values));
        out
    }

    /// Adds `scale * other` element-wise.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let flat = other.flatten();
        let mut pos = 0;
        self.visit_mut("", &mut |_, values, _| {
            for v in values.iter_mut() {
                *v += scale * flat[pos];
                pos += 1;
            }
        });
    }
}

fn child(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Parameters for ModelParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        layers::visit_mat(&self.embedding, child(prefix, "embedding"), f);
        for (i, layer) in self.encoder.iter().enumerate() {
            let p = child(prefix, &format!("encoder.{i}"));
            layer.norm1.visit(&child(&p, "norm1"), f);
            layer.self_attn.visit(&child(&p, "self_attn"), f);
            layer.norm2.visit(&child(&p, "norm2"), f);
            layer.ffn.visit(&child(&p, "ffn"), f);
        }
        self.encoder_norm.visit(&child(prefix, "encoder_norm"), f);
        for (i, layer) in self.decoder.iter().enumerate() {
            let p = child(prefix, &format!("decoder.{i}"));
            layer.norm1.visit(&child(&p, "norm1"), f);
            layer.self_attn.visit(&child(&p, "self_attn"), f);
            layer.norm2.visit(&child(&p, "norm2"), f);
            layer.cross_attn.visit(&child(&p, "cross_attn"), f);
            layer.norm3.visit(&child(&p, "norm3"), f);
            layer.ffn.visit(&child(&p, "ffn"), f);
        }
        self.decoder_norm.visit(&child(prefix, "decoder_norm"), f);
        self.output.visit(&child(prefix, "output"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        layers::visit_mat_mut(&mut self.embedding, child(prefix, "embedding"), f);
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            let p = child(prefix, &format!("encoder.{i}"));
            layer.norm1.visit_mut(&child(&p, "norm1"), f);
            layer.self_attn.visit_mut(&child(&p, "self_attn"), f);
            layer.norm2.visit_mut(&child(&p, "norm2"), f);
            layer.ffn.visit_mut(&child(&p, "ffn"), f);
        }
        self.encoder_norm.visit_mut(&child(prefix, "encoder_norm"), f);
        for (i, layer) in self.decoder.iter_mut().enumerate() {
            let p = child(prefix, &format!("decoder.{i}"));
            layer.norm1.visit_mut(&child(&p, "norm1"), f);
            layer.self_attn.visit_mut(&child(&p, "self_attn"), f);
            layer.norm2.visit_mut(&child(&p, "norm2"), f);
            layer.cross_attn.visit_mut(&child(&p, "cross_attn"), f);
            layer.norm3.visit_mut(&child(&p, "norm3"), f);
            layer.ffn.visit_mut(&child(&p, "ffn"), f);
        }
        self.decoder_norm.visit_mut(&child(prefix, "decoder_norm"), f);
        self.output.visit_mut(&child(prefix, "output"), f);
    }
}

//! Glue between the stages: tokenization modes, model inputs, candidate
//! generation and the train-then-evaluate loop shared by the CLI and tests.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{abstract_pair, abstract_tokens, deabstract, AbstractionMap};
use crate::bpe::{BpeError, BpeModel};
use crate::dataset::DatasetSplit;
use crate::java::tokens_from_texts;
use crate::metrics::{evaluate_run, CandidateSet, CodeBleuWeights, EvalError, EvalReport};
use crate::model::{
    beam_search, train, Checkpoint, Example, ModelConfig, ModelError, TrainConfig, TrainOutcome, Vocab,
    EOS_ID,
};
use crate::triplet::MethodPairTriplet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenMode {
    #[serde(rename = "raw")]
    Raw,
    #[serde(rename = "abs")]
    Abs,
    #[serde(rename = "bpe")]
    Bpe,
    #[serde(rename = "abs+bpe")]
    AbsBpe,
}

impl TokenMode {
    pub const ALL: [TokenMode; 4] = [TokenMode::Raw, TokenMode::Abs, TokenMode::Bpe, TokenMode::AbsBpe];

    pub fn name(self) -> &'static str {
        match self {
            TokenMode::Raw => "raw",
            TokenMode::Abs => "abs",
            TokenMode::Bpe => "bpe",
            TokenMode::AbsBpe => "abs+bpe",
        }
    }

    pub fn abstracts(self) -> bool {
        matches!(self, TokenMode::Abs | TokenMode::AbsBpe)
    }

    pub fn uses_bpe(self) -> bool {
        matches!(self, TokenMode::Bpe | TokenMode::AbsBpe)
    }
}

impl fmt::Display for TokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TokenMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TokenMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown tokenization mode {s:?} (expected raw, abs, bpe or abs+bpe)"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bpe(#[from] BpeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no usable training examples after length filtering")]
    NoExamples,
}

/// Turns triplets into model-side subword sequences and back.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    pub mode: TokenMode,
    pub bpe: Option<BpeModel>,
}

/// A triplet with its model-side sequences, as written by `tokenize`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizedRecord {
    #[serde(flatten)]
    pub triplet: MethodPairTriplet,
    pub source: Vec<String>,
    pub target: Vec<String>,
    /// `ID -> original` entries for abstracted modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<BTreeMap<String, String>>,
}

impl Tokenizer {
    /// Learns BPE merges on the training pairs when the mode needs them.
    pub fn fit(mode: TokenMode, train: &[MethodPairTriplet], num_merges: usize) -> Result<Self, PipelineError> {
        let bpe = if mode.uses_bpe() {
            let corpus: Vec<Vec<String>> = train
                .iter()
                .flat_map(|t| {
                    if mode.abstracts() {
                        let (a, b, _) = abstract_pair(&tokens_from_texts(&t.prior), &tokens_from_texts(&t.updated));
                        vec![a, b]
                    } else {
                        vec![t.prior.clone(), t.updated.clone()]
                    }
                })
                .collect();
            Some(BpeModel::learn(&corpus, num_merges)?)
        } else {
            None
        };
        Ok(Self { mode, bpe })
    }

    fn subwords(&self, tokens: Vec<String>) -> Vec<String> {
        match &self.bpe {
            Some(b) => b.apply(&tokens),
            None => tokens,
        }
    }

    pub fn encode_pair(&self, t: &MethodPairTriplet) -> TokenizedRecord {
        let (source, target, map) = if self.mode.abstracts() {
            let (a, b, map) = abstract_pair(&tokens_from_texts(&t.prior), &tokens_from_texts(&t.updated));
            (a, b, Some(map.entries().clone()))
        } else {
            (t.prior.clone(), t.updated.clone(), None)
        };
        TokenizedRecord {
            triplet: t.clone(),
            source: self.subwords(source),
            target: self.subwords(target),
            map,
        }
    }

    /// Inference-side encoding: only the prior version is available.
    pub fn encode_source(&self, prior: &[String]) -> (Vec<String>, Option<AbstractionMap>) {
        if self.mode.abstracts() {
            let (a, map) = abstract_tokens(&tokens_from_texts(prior));
            (self.subwords(a), Some(map))
        } else {
            (self.subwords(prior.to_vec()), None)
        }
    }

    /// Subwords back to code tokens. IDs the map cannot resolve stay as
    /// they are; the second value counts them.
    pub fn decode(&self, subwords: &[String], map: Option<&AbstractionMap>) -> (Vec<String>, usize) {
        let tokens = match &self.bpe {
            Some(b) => b.detokenize(subwords),
            None => subwords.to_vec(),
        };
        let Some(map) = map else {
            return (tokens, 0);
        };
        match deabstract(&tokens, map) {
            Ok(t) => (t, 0),
            Err(_) => {
                let mut unmapped = 0;
                let out = tokens
                    .iter()
                    .map(|t| match deabstract(std::slice::from_ref(t), map) {
                        Ok(mut v) => v.pop().unwrap_or_default(),
                        Err(_) => {
                            unmapped += 1;
                            t.clone()
                        }
                    })
                    .collect();
                (out, unmapped)
            }
        }
    }
}

pub fn build_vocab(records: &[TokenizedRecord]) -> Vocab {
    Vocab::build(records.iter().flat_map(|r| [r.source.as_slice(), r.target.as_slice()]))
}

/// Model input for a source subword sequence: ids plus a closing EOS.
pub fn source_ids(vocab: &Vocab, source: &[String]) -> Vec<usize> {
    let mut ids = vocab.encode(source);
    ids.push(EOS_ID);
    ids
}

/// Examples that fit `max_seq_len` (source plus EOS, BOS plus target).
pub fn examples(vocab: &Vocab, records: &[TokenizedRecord], max_seq_len: usize) -> Vec<Example> {
    let out: Vec<Example> = records
        .iter()
        .filter(|r| r.source.len() < max_seq_len && r.target.len() < max_seq_len)
        .map(|r| Example {
            source: source_ids(vocab, &r.source),
            target: vocab.encode(&r.target),
        })
        .collect();
    if out.len() < records.len() {
        log::warn!("{} pairs exceed max_seq_len {max_seq_len} and were skipped", records.len() - out.len());
    }
    out
}

/// Generation limit for a source of `n` subwords.
pub fn default_max_len(n: usize) -> usize {
    n + n / 2 + 16
}

/// Beam-searches every triplet's prior version and maps the results back to
/// code tokens. Candidates that decode to the same tokens are kept once, at
/// their best rank.
pub fn recommend(
    ckpt: &Checkpoint,
    tokenizer: &Tokenizer,
    triplets: &[MethodPairTriplet],
    beam: usize,
) -> Result<Vec<CandidateSet>, PipelineError> {
    let max_seq_len = ckpt.params.config.max_seq_len;
    triplets
        .par_iter()
        .map(|t| {
            let (source, map) = tokenizer.encode_source(&t.prior);
            let mut ids = source_ids(&ckpt.vocab, &source);
            if ids.len() > max_seq_len {
                ids.drain(max_seq_len - 1..ids.len() - 1);
            }
            let beams = beam_search(&ckpt.params, &ids, beam, default_max_len(source.len()))?;
            let mut candidates: Vec<Vec<String>> = Vec::new();
            let mut scores = Vec::new();
            for b in beams {
                let (tokens, _) = tokenizer.decode(&ckpt.vocab.decode(&b.tokens), map.as_ref());
                if !candidates.contains(&tokens) {
                    candidates.push(tokens);
                    scores.push(b.log_prob);
                }
            }
            Ok(CandidateSet {
                example_id: crate::metrics::reference_id(t),
                candidates,
                scores: Some(scores),
            })
        })
        .collect()
}

/// Everything a single train-and-evaluate run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub tokenizer: Tokenizer,
    pub checkpoint: Checkpoint,
    pub training: TrainOutcome,
    pub candidates: Vec<CandidateSet>,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub mode: TokenMode,
    pub num_merges: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beams: Vec<usize>,
    pub weights: CodeBleuWeights,
}

/// Builds the vocabulary from `train`, trains a model on it and packages the
/// best epoch as a checkpoint. `model.vocab_size` is replaced by the size of
/// that vocabulary.
pub fn train_model(
    train_records: &[TokenizedRecord],
    valid_records: &[TokenizedRecord],
    mode: TokenMode,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainOutcome), PipelineError> {
    let vocab = build_vocab(train_records);
    let model = ModelConfig {
        vocab_size: vocab.len(),
        ..model.clone()
    };
    let train_set = examples(&vocab, train_records, model.max_seq_len);
    if train_set.is_empty() {
        return Err(PipelineError::NoExamples);
    }
    let valid_set = examples(&vocab, valid_records, model.max_seq_len);
    let training = train(&train_set, &valid_set, &model, train_cfg)?;
    let checkpoint = Checkpoint {
        params: training.params.clone(),
        vocab,
        metadata: BTreeMap::from([("mode".to_string(), mode.name().to_string())]),
    };
    Ok((checkpoint, training))
}

/// Tokenize, train, recommend and evaluate on one split.
pub fn run_split(split: &DatasetSplit, settings: &RunSettings) -> Result<RunOutput, PipelineError> {
    let tokenizer = Tokenizer::fit(settings.mode, &split.train, settings.num_merges)?;
    let train_records: Vec<TokenizedRecord> = split.train.iter().map(|t| tokenizer.encode_pair(t)).collect();
    let valid_records: Vec<TokenizedRecord> = split.valid.iter().map(|t| tokenizer.encode_pair(t)).collect();
    let (checkpoint, training) =
        train_model(&train_records, &valid_records, settings.mode, &settings.model, &settings.train)?;
    let beam = settings.beams.iter().copied().max().unwrap_or(1);
    let candidates = recommend(&checkpoint, &tokenizer, &split.test, beam)?;
    let report = evaluate_run(&candidates, &split.test, &settings.beams, &settings.weights)?;
    Ok(RunOutput {
        tokenizer,
        checkpoint,
        training,
        candidates,
        report,
    })
}

pub const MERGES_FILE: &str = "bpe.merges";
pub const MODE_FILE: &str = "mode";

impl Tokenizer {
    /// Writes `mode` and, for BPE modes, `bpe.merges` into `dir`.
    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MODE_FILE), format!("{}\n", self.mode))?;
        if let Some(b) = &self.bpe {
            std::fs::write(dir.join(MERGES_FILE), b.to_merges_file())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, String> {
        let mode_path = dir.join(MODE_FILE);
        let mode: TokenMode = std::fs::read_to_string(&mode_path)
            .map_err(|e| format!("{}: {e}", mode_path.display()))?
            .trim()
            .parse()?;
        let bpe = if mode.uses_bpe() {
            let path = dir.join(MERGES_FILE);
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            Some(BpeModel::from_merges_file(&text).map_err(|e| format!("{}: {e}", path.display()))?)
        } else {
            None
        };
        Ok(Self { mode, bpe })
    }
}

//! Candidate files, Perfect Prediction@k and whole-run evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bleu::bleu_from_stats;
use super::codebleu::{codebleu_stats, CodeBleuScore, CodeBleuStats, CodeBleuWeights};
use crate::classifier::{classify, UpdateType};
use crate::miner::changed_token_count;
use crate::triplet::{read_jsonl, JsonlError, MethodPairTriplet};

/// One line of a candidates file: ranked token sequences for one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSet {
    pub example_id: String,
    /// Best first. An empty list marks an example the producer could not
    /// generate for; it scores as a miss.
    pub candidates: Vec<Vec<String>>,
    /// Optional model scores aligned with `candidates`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("candidates line {line}: {message}")]
pub struct SchemaError {
    pub line: usize,
    pub message: String,
}

impl CandidateSet {
    pub fn validate(&self) -> Result<(), String> {
        if self.example_id.is_empty() {
            return Err("empty example_id".into());
        }
        if let Some(scores) = &self.scores {
            if scores.len() != self.candidates.len() {
                return Err(format!(
                    "{}: {} scores for {} candidates",
                    self.example_id,
                    scores.len(),
                    self.candidates.len()
                ));
            }
        }
        Ok(())
    }
}

/// Parses and checks a candidates JSONL document: every line must match
/// the schema and example ids must be unique.
pub fn parse_candidates(text: &str) -> Result<Vec<CandidateSet>, SchemaError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| SchemaError { line: i + 1, message };
        let set: CandidateSet = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        set.validate().map_err(err)?;
        if !seen.insert(set.example_id.clone()) {
            return Err(err(format!("duplicate example_id {}", set.example_id)));
        }
        out.push(set);
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    References(#[from] JsonlError),
    #[error("ids without candidates: {missing_candidates:?}; ids without references: {missing_references:?}")]
    Alignment {
        missing_candidates: Vec<String>,
        missing_references: Vec<String>,
    },
    #[error("invalid evaluation setting: {0}")]
    Invalid(String),
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidateSet>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_candidates(&text)?)
}

/// True iff one of the first `k` candidates equals `reference` token for token.
pub fn perfect_prediction<S: AsRef<str>>(set: &CandidateSet, reference: &[S], k: usize) -> bool {
    set.candidates.iter().take(k).any(|c| {
        c.len() == reference.len() && c.iter().zip(reference).all(|(a, b)| a == b.as_ref())
    })
}

pub const METHOD_BUCKETS: [&str; 5] = ["0-50", "50-100", "100-150", "150-200", "200+"];
pub const UPDATE_BUCKETS: [&str; 6] = ["0-5", "5-10", "10-15", "15-20", "20-25", "25+"];

/// `[lo, hi)` buckets of fixed width with an open last bucket.
fn bucket(value: usize, width: usize, count: usize) -> usize {
    (value / width).min(count - 1)
}

pub fn method_size_bucket(prior_len: usize) -> usize {
    bucket(prior_len, 50, METHOD_BUCKETS.len())
}

pub fn update_size_bucket(changed: usize) -> usize {
    bucket(changed, 5, UPDATE_BUCKETS.len())
}

/// `(method-size bucket, update-size bucket)` indices into
/// [`METHOD_BUCKETS`] and [`UPDATE_BUCKETS`].
pub fn bucketize(t: &MethodPairTriplet) -> (usize, usize) {
    (
        method_size_bucket(t.prior.len()),
        update_size_bucket(changed_token_count(&t.prior, &t.updated)),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub count: usize,
    pub pp_count: usize,
    /// `None` for an empty cell.
    pub pp_rate: Option<f64>,
}

impl Cell {
    fn add(&mut self, hit: bool) {
        self.count += 1;
        self.pp_count += usize::from(hit);
        self.pp_rate = Some(self.pp_count as f64 / self.count as f64);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KScores {
    pub pp_count: usize,
    pub pp_rate: f64,
    /// Corpus BLEU-4 of the rank-1 candidates.
    pub bleu: f64,
    /// Corpus CodeBLEU of the rank-1 candidates.
    pub codebleu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    pub per_k: BTreeMap<usize, KScores>,
    pub codebleu: CodeBleuScore,
    pub weights: CodeBleuWeights,
    /// Beam size used for the per-type and per-bucket breakdowns.
    pub breakdown_k: usize,
    /// Keyed by the update type's label.
    pub per_type: BTreeMap<String, Cell>,
    pub method_buckets: Vec<String>,
    pub update_buckets: Vec<String>,
    /// `per_bucket[method][update]`.
    pub per_bucket: Vec<Vec<Cell>>,
}

impl Cell {
    /// Sum of several cells.
    pub fn merged<'a>(cells: impl IntoIterator<Item = &'a Cell>) -> Cell {
        let mut out = Cell::default();
        for c in cells {
            out.count += c.count;
            out.pp_count += c.pp_count;
        }
        if out.count > 0 {
            out.pp_rate = Some(out.pp_count as f64 / out.count as f64);
        }
        out
    }
}

impl EvalReport {
    /// Per update-size bucket, summed over method sizes.
    pub fn update_size_totals(&self) -> Vec<Cell> {
        (0..self.update_buckets.len())
            .map(|u| Cell::merged(self.per_bucket.iter().map(|row| &row[u])))
            .collect()
    }

    /// Per method-size bucket, summed over update sizes.
    pub fn method_size_totals(&self) -> Vec<Cell> {
        self.per_bucket.iter().map(Cell::merged).collect()
    }
}

/// Per-example outcome used by [`evaluate_run`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleOutcome {
    pub example_id: String,
    /// Zero-based rank of the first exact match.
    pub first_hit: Option<usize>,
    pub update_type: UpdateType,
    pub buckets: (usize, usize),
    pub rank1: CodeBleuStats,
}

pub fn reference_id(t: &MethodPairTriplet) -> String {
    if t.example_id.is_empty() {
        t.derive_example_id()
    } else {
        t.example_id.clone()
    }
}

pub fn score_example(set: &CandidateSet, reference: &MethodPairTriplet) -> ExampleOutcome {
    let first_hit = set.candidates.iter().position(|c| *c == reference.updated);
    let empty = Vec::new();
    let top = set.candidates.first().unwrap_or(&empty);
    ExampleOutcome {
        example_id: reference_id(reference),
        first_hit,
        update_type: classify(&reference.message),
        buckets: bucketize(reference),
        rank1: codebleu_stats(top, &reference.updated),
    }
}

/// Checks that candidates and references cover exactly the same, non-empty
/// set of example ids.
pub fn check_alignment(candidates: &[CandidateSet], references: &[MethodPairTriplet]) -> Result<(), EvalError> {
    let cand_ids: HashSet<&str> = candidates.iter().map(|c| c.example_id.as_str()).collect();
    let ref_ids: Vec<String> = references.iter().map(reference_id).collect();
    let ref_set: HashSet<&str> = ref_ids.iter().map(String::as_str).collect();
    let missing_candidates: Vec<String> = ref_ids.iter().filter(|id| !cand_ids.contains(id.as_str())).cloned().collect();
    let missing_references: Vec<String> = candidates
        .iter()
        .filter(|c| !ref_set.contains(c.example_id.as_str()))
        .map(|c| c.example_id.clone())
        .collect();
    if !missing_candidates.is_empty() || !missing_references.is_empty() || references.is_empty() {
        return Err(EvalError::Alignment {
            missing_candidates,
            missing_references,
        });
    }
    Ok(())
}

/// Scores every reference against its candidate set. Both sides must cover
/// the same example ids.
pub fn evaluate_run(
    candidates: &[CandidateSet],
    references: &[MethodPairTriplet],
    ks: &[usize],
    weights: &CodeBleuWeights,
) -> Result<EvalReport, EvalError> {
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(EvalError::Invalid("beam sizes must be positive".into()));
    }
    if !weights.is_valid() {
        return Err(EvalError::Invalid(format!("CodeBLEU weights {weights:?} must be nonnegative and sum to 1")));
    }
    check_alignment(candidates, references)?;
    let by_id: HashMap<&str, &CandidateSet> = candidates.iter().map(|c| (c.example_id.as_str(), c)).collect();
    let ref_ids: Vec<String> = references.iter().map(reference_id).collect();
    let outcomes: Vec<ExampleOutcome> = references
        .par_iter()
        .zip(ref_ids.par_iter())
        .map(|(r, id)| score_example(by_id[id.as_str()], r))
        .collect();
    Ok(aggregate(&outcomes, &ks, weights))
}

/// Ordered reduction of per-example outcomes.
pub fn aggregate(outcomes: &[ExampleOutcome], ks: &[usize], weights: &CodeBleuWeights) -> EvalReport {
    let mut stats = CodeBleuStats::default();
    for o in outcomes {
        stats += o.rank1;
    }
    let codebleu = stats.score(weights);
    let bleu = bleu_from_stats(&stats.bleu);
    let n = outcomes.len();
    let per_k = ks
        .iter()
        .map(|&k| {
            let pp_count = outcomes.iter().filter(|o| o.first_hit.is_some_and(|r| r < k)).count();
            (
                k,
                KScores {
                    pp_count,
                    pp_rate: if n == 0 { 0.0 } else { pp_count as f64 / n as f64 },
                    bleu,
                    codebleu: codebleu.score,
                },
            )
        })
        .collect();
    let breakdown_k = *ks.last().unwrap_or(&1);
    let mut per_type: BTreeMap<String, Cell> =
        UpdateType::ALL.iter().map(|t| (t.label().to_string(), Cell::default())).collect();
    let mut per_bucket = vec![vec![Cell::default(); UPDATE_BUCKETS.len()]; METHOD_BUCKETS.len()];
    for o in outcomes {
        let hit = o.first_hit.is_some_and(|r| r < breakdown_k);
        per_type.get_mut(o.update_type.label()).expect("all types present").add(hit);
        per_bucket[o.buckets.0][o.buckets.1].add(hit);
    }
    EvalReport {
        examples: n,
        per_k,
        codebleu,
        weights: *weights,
        breakdown_k,
        per_type,
        method_buckets: METHOD_BUCKETS.iter().map(|s| s.to_string()).collect(),
        update_buckets: UPDATE_BUCKETS.iter().map(|s| s.to_string()).collect(),
        per_bucket,
    }
}

/// File-level wrapper around [`evaluate_run`].
pub fn evaluate_files(
    candidates: &Path,
    references: &Path,
    ks: &[usize],
    weights: &CodeBleuWeights,
) -> Result<EvalReport, EvalError> {
    let cands = read_candidates(candidates)?;
    let refs: Vec<MethodPairTriplet> = read_jsonl(references)?;
    evaluate_run(&cands, &refs, ks, weights)
}

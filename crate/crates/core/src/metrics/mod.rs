//! Perfect Prediction@k, BLEU-4 and CodeBLEU over candidate sets from any
//! producer.

mod bleu;
mod codebleu;
mod eval;

pub use bleu::{bleu4, bleu_from_stats, corpus_bleu4, ngram_stats, NgramStats};
pub use codebleu::{codebleu, codebleu_stats, CodeBleuScore, CodeBleuStats, CodeBleuWeights, KEYWORD_WEIGHT, OTHER_WEIGHT};
pub use eval::{
    aggregate, bucketize, check_alignment, evaluate_files, evaluate_run, method_size_bucket, parse_candidates, perfect_prediction,
    read_candidates, reference_id, score_example, update_size_bucket, CandidateSet, Cell, EvalError, EvalReport,
    ExampleOutcome, KScores, SchemaError, METHOD_BUCKETS, UPDATE_BUCKETS,
};

//! Checks shared by the fuzz targets and the seed-replay test. Each one must
//! return normally for any input.

use updatebench::abstraction::{abstract_pair, deabstract, parse_id};
use updatebench::bpe::BpeModel;
use updatebench::classifier::Classifier;
use updatebench::java::{extract_methods, lex, strip_comments, Token};
use updatebench::metrics::{parse_candidates, perfect_prediction};
use updatebench::model::{decode_checkpoint, encode_checkpoint};
use updatebench::triplet::{parse_jsonl, MethodPairTriplet};

pub fn java_source(data: &[u8]) {
    let Ok(source) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(stripped) = strip_comments(source) {
        assert_eq!(strip_comments(&stripped).unwrap(), stripped);
    }
    let _ = lex(source);
    if let Ok(methods) = extract_methods(source) {
        for m in methods {
            assert!(m.start <= m.body_start && m.body_start < m.body_end && m.body_end <= source.len());
        }
    }
}

/// Input is two Java fragments separated by a NUL byte.
pub fn abstraction(data: &[u8]) {
    let text = String::from_utf8_lossy(data);
    let (left, right) = text.split_once('\u{0}').unwrap_or((&text, ""));
    let (Ok(prior), Ok(updated)) = (lex(left), lex(right)) else {
        return;
    };
    let (a, b, map) = abstract_pair(&prior, &updated);
    let texts = |ts: &[Token]| ts.iter().map(|t| t.text.clone()).collect::<Vec<_>>();
    assert_eq!(deabstract(&a, &map).unwrap(), texts(&prior));
    assert_eq!(deabstract(&b, &map).unwrap(), texts(&updated));
    for t in &a {
        let _ = parse_id(t);
    }
}

/// Input is a merges file, a blank line, then whitespace-separated tokens.
pub fn bpe_merges(data: &[u8]) {
    let text = String::from_utf8_lossy(data);
    let (merges, sample) = text.split_once("\n\n").unwrap_or((&text, "view setBackground"));
    let Ok(model) = BpeModel::from_merges_file(merges) else {
        return;
    };
    // a token that already holds the marker cannot be told apart on the way back
    let marker = model.end_of_word();
    let tokens: Vec<&str> = sample.split_whitespace().filter(|t| !t.contains(marker)).collect();
    assert_eq!(model.detokenize(&model.apply(&tokens)), tokens);
    let reloaded = BpeModel::from_merges_file(&model.to_merges_file()).unwrap();
    assert_eq!(reloaded.merges(), model.merges());
}

pub fn checkpoint(data: &[u8]) {
    if let Ok(ckpt) = decode_checkpoint(data) {
        let again = decode_checkpoint(&encode_checkpoint(&ckpt)).unwrap();
        assert_eq!(again.vocab, ckpt.vocab);
        assert_eq!(again.params.flatten().len(), ckpt.params.flatten().len());
    }
}

pub fn triplets_jsonl(data: &[u8]) {
    if let Ok(rows) = parse_jsonl::<MethodPairTriplet, _>(data, "fuzz") {
        for t in rows {
            let line = serde_json::to_string(&t).unwrap();
            assert_eq!(serde_json::from_str::<MethodPairTriplet>(&line).unwrap(), t);
        }
    }
}

pub fn candidates_jsonl(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sets) = parse_candidates(text) {
        for set in &sets {
            assert!(set.validate().is_ok());
            let reference = set.candidates.first().cloned().unwrap_or_default();
            assert_eq!(perfect_prediction(set, &reference, 1), !set.candidates.is_empty());
        }
    }
}

/// Input is a keyword table, a blank line, then a commit message.
pub fn type_table(data: &[u8]) {
    let text = String::from_utf8_lossy(data);
    let (table, message) = text.split_once("\n\n").unwrap_or((&text, "fix crash"));
    if let Ok(c) = Classifier::from_table(table) {
        assert_eq!(c.classify(message), c.classify(message));
    }
}

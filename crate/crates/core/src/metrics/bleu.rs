//! BLEU-4 with add-one smoothing on zero-match orders.
//!
//! For order `n` with `c_n` candidate n-grams and `m_n` clipped matches the
//! precision is `m_n / c_n`, or `1 / (c_n + 1)` when `m_n = 0`. An order
//! the candidate is too short for (`c_n = 0`) therefore contributes 1.
//! The brevity penalty is `exp(1 - r/c)` when `c < r`.

use std::collections::BTreeMap;
use std::ops::AddAssign;

/// Sufficient statistics; sentence and corpus scores both derive from them.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NgramStats {
    pub matches: [f64; 4],
    pub totals: [f64; 4],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl AddAssign for NgramStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..4 {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.candidate_len += o.candidate_len;
        self.reference_len += o.reference_len;
    }
}

/// Ordered so weighted sums are accumulated in a fixed order.
pub(crate) fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(|t| t.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Statistics with a per-unigram weight; higher orders are unweighted.
pub(crate) fn weighted_stats<S: AsRef<str>, R: AsRef<str>>(
    candidate: &[S],
    reference: &[R],
    unigram_weight: impl Fn(&str) -> f64,
) -> NgramStats {
    let mut stats = NgramStats {
        candidate_len: candidate.len(),
        reference_len: reference.len(),
        ..NgramStats::default()
    };
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        for (gram, &c) in &cand {
            let w = if n == 1 { unigram_weight(gram[0]) } else { 1.0 };
            let clipped = c.min(refc.get(gram).copied().unwrap_or(0));
            stats.matches[n - 1] += w * clipped as f64;
            stats.totals[n - 1] += w * c as f64;
        }
    }
    stats
}

pub fn ngram_stats<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], reference: &[R]) -> NgramStats {
    weighted_stats(candidate, reference, |_| 1.0)
}

/// BLEU-4 from accumulated statistics.
pub fn bleu_from_stats(s: &NgramStats) -> f64 {
    if s.candidate_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if s.matches[n] > 0.0 {
            s.matches[n] / s.totals[n]
        } else {
            1.0 / (s.totals[n] + 1.0)
        };
        log_sum += p.ln();
    }
    let c = s.candidate_len as f64;
    let r = s.reference_len as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    (bp * (log_sum / 4.0).exp()).clamp(0.0, 1.0)
}

/// Sentence-level BLEU-4.
pub fn bleu4<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], reference: &[R]) -> f64 {
    bleu_from_stats(&ngram_stats(candidate, reference))
}

/// Corpus BLEU-4: counts are summed over all pairs before combining.
pub fn corpus_bleu4<S: AsRef<str>, R: AsRef<str>>(pairs: &[(Vec<S>, Vec<R>)]) -> f64 {
    let mut total = NgramStats::default();
    for (c, r) in pairs {
        total += ngram_stats(c, r);
    }
    bleu_from_stats(&total)
}

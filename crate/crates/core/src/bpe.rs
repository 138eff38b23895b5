//! Byte-pair encoding over code tokens.
//!
//! Each token is split into characters, the last one carrying the
//! end-of-word marker (`</w>` by default). Training repeatedly merges the
//! most frequent adjacent symbol pair; ties go to the lexicographically
//! smallest `(left, right)`. Tokens must not themselves contain the marker
//! text, otherwise [`detokenize`] cannot find the word boundary.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const SPECIALS: [&str; 4] = [PAD, BOS, EOS, UNK];

pub const DEFAULT_END_OF_WORD: &str = "</w>";
pub const DEFAULT_NUM_MERGES: usize = 8_000;

const HEADER_PREFIX: &str = "#bpe-merges v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BpeError {
    #[error("cannot learn merges from an empty corpus")]
    EmptyCorpus,
    #[error("merges file line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    vocab: BTreeSet<String>,
    end_of_word: String,
}

/// Heap entry: highest count first, then smallest `(left, right)`.
#[derive(PartialEq, Eq)]
struct Candidate {
    count: i64,
    left: Reverse<String>,
    right: Reverse<String>,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.count, &self.left, &self.right).cmp(&(other.count, &other.left, &other.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Trainer {
    symbols: Vec<String>,
    ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, i64)>,
    counts: HashMap<(u32, u32), i64>,
    occurs_in: HashMap<(u32, u32), HashSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Trainer {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }

    fn push(&mut self, pair: (u32, u32)) {
        let count = self.counts.get(&pair).copied().unwrap_or(0);
        if count > 0 {
            self.heap.push(Candidate {
                count,
                left: Reverse(self.symbols[pair.0 as usize].clone()),
                right: Reverse(self.symbols[pair.1 as usize].clone()),
                pair,
            });
        }
    }

    fn add_word_pairs(&mut self, w: usize, sign: i64, touched: &mut HashSet<(u32, u32)>) {
        let (syms, freq) = &self.words[w];
        for win in syms.windows(2) {
            let pair = (win[0], win[1]);
            *self.counts.entry(pair).or_insert(0) += sign * freq;
            if sign > 0 {
                self.occurs_in.entry(pair).or_default().insert(w);
            }
            touched.insert(pair);
        }
    }

    fn pop_best(&mut self) -> Option<(u32, u32, i64)> {
        while let Some(c) = self.heap.pop() {
            if self.counts.get(&c.pair).copied().unwrap_or(0) == c.count {
                return Some((c.pair.0, c.pair.1, c.count));
            }
        }
        None
    }

    fn merge(&mut self, a: u32, b: u32, merged: u32) {
        let words: Vec<usize> = {
            let mut w: Vec<usize> = self
                .occurs_in
                .remove(&(a, b))
                .unwrap_or_default()
                .into_iter()
                .collect();
            w.sort_unstable();
            w
        };
        let mut touched = HashSet::new();
        for w in words {
            if !self.words[w].0.windows(2).any(|p| p == [a, b]) {
                continue;
            }
            self.add_word_pairs(w, -1, &mut touched);
            let old = std::mem::take(&mut self.words[w].0);
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && old[i] == a && old[i + 1] == b {
                    new.push(merged);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            self.words[w].0 = new;
            self.add_word_pairs(w, 1, &mut touched);
        }
        let mut touched: Vec<_> = touched.into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            self.push(pair);
        }
    }
}

/// Splits one token into its initial symbols: characters, the last with the marker.
fn initial_symbols(token: &str, end_of_word: &str) -> Vec<String> {
    let mut out: Vec<String> = token.chars().map(String::from).collect();
    match out.last_mut() {
        Some(last) => last.push_str(end_of_word),
        None => out.push(end_of_word.to_string()),
    }
    out
}

impl BpeModel {
    /// Learns up to `num_merges` merges. Stops early once no pair occurs at
    /// least twice.
    pub fn learn<S: AsRef<str>>(corpus: &[Vec<S>], num_merges: usize) -> Result<Self, BpeError> {
        Self::learn_with_marker(corpus, num_merges, DEFAULT_END_OF_WORD)
    }

    pub fn learn_with_marker<S: AsRef<str>>(
        corpus: &[Vec<S>],
        num_merges: usize,
        end_of_word: &str,
    ) -> Result<Self, BpeError> {
        if corpus.iter().all(|seq| seq.is_empty()) {
            return Err(BpeError::EmptyCorpus);
        }
        let mut freqs: HashMap<&str, i64> = HashMap::new();
        for seq in corpus {
            for tok in seq {
                *freqs.entry(tok.as_ref()).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(&str, i64)> = freqs.into_iter().collect();
        words.sort_unstable();

        let mut trainer = Trainer {
            symbols: Vec::new(),
            ids: HashMap::new(),
            words: Vec::with_capacity(words.len()),
            counts: HashMap::new(),
            occurs_in: HashMap::new(),
            heap: BinaryHeap::new(),
        };
        let mut vocab = BTreeSet::new();
        for (word, freq) in &words {
            let syms: Vec<u32> = initial_symbols(word, end_of_word)
                .iter()
                .map(|s| {
                    vocab.insert(s.clone());
                    trainer.intern(s)
                })
                .collect();
            trainer.words.push((syms, *freq));
        }
        let mut touched = HashSet::new();
        for w in 0..trainer.words.len() {
            trainer.add_word_pairs(w, 1, &mut touched);
        }
        let mut touched: Vec<_> = touched.into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            trainer.push(pair);
        }

        let mut merges = Vec::new();
        while merges.len() < num_merges {
            let Some((a, b, count)) = trainer.pop_best() else {
                break;
            };
            if count < 2 {
                break;
            }
            let joined = format!("{}{}", trainer.symbols[a as usize], trainer.symbols[b as usize]);
            let merged = trainer.intern(&joined);
            merges.push((
                trainer.symbols[a as usize].clone(),
                trainer.symbols[b as usize].clone(),
            ));
            vocab.insert(joined);
            trainer.merge(a, b, merged);
        }
        Ok(Self::from_parts(merges, vocab, end_of_word))
    }

    fn from_parts(merges: Vec<(String, String)>, vocab: BTreeSet<String>, end_of_word: &str) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self {
            merges,
            ranks,
            vocab,
            end_of_word: end_of_word.to_string(),
        }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Symbols known to the model: the training alphabet and every merge result
    /// (for a loaded model, only symbols that occur in the merges file).
    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    pub fn end_of_word(&self) -> &str {
        &self.end_of_word
    }

    /// Splits one token into subwords by replaying merges in learned order.
    pub fn apply_token(&self, token: &str) -> Vec<String> {
        let mut syms = initial_symbols(token, &self.end_of_word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else {
                break;
            };
            let (a, b) = &self.merges[rank];
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i] == a && &syms[i + 1] == b {
                    out.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = out;
        }
        syms
    }

    pub fn apply<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        tokens
            .iter()
            .flat_map(|t| self.apply_token(t.as_ref()))
            .collect()
    }

    pub fn detokenize<S: AsRef<str>>(&self, subwords: &[S]) -> Vec<String> {
        detokenize_with_marker(subwords, &self.end_of_word)
    }

    /// Serializes to the merges file format: a version header, then one
    /// `left right` line per merge in learned order. Backslash, space, tab,
    /// CR and LF inside symbols are escaped as `\\`, `\s`, `\t`, `\r`, `\n`.
    pub fn to_merges_file(&self) -> String {
        let mut out = format!("{HEADER_PREFIX} eow={}\n", escape(&self.end_of_word));
        for (a, b) in &self.merges {
            let _ = writeln!(out, "{} {}", escape(a), escape(b));
        }
        out
    }

    pub fn from_merges_file(text: &str) -> Result<Self, BpeError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(BpeError::Format {
            line: 1,
            message: "missing version header".into(),
        })?;
        let rest = header.strip_prefix(HEADER_PREFIX).ok_or(BpeError::Format {
            line: 1,
            message: format!("expected header starting with {HEADER_PREFIX:?}"),
        })?;
        let end_of_word = match rest.trim().strip_prefix("eow=") {
            Some(m) if !m.is_empty() => unescape(m).ok_or(BpeError::Format {
                line: 1,
                message: "bad escape in marker".into(),
            })?,
            _ => {
                return Err(BpeError::Format {
                    line: 1,
                    message: "header must name the end-of-word marker".into(),
                })
            }
        };
        let mut merges = Vec::new();
        let mut seen = HashSet::new();
        let mut vocab = BTreeSet::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let err = |message: &str| BpeError::Format {
                line: line_no,
                message: message.to_string(),
            };
            let mut parts = line.split(' ');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected exactly two symbols"));
            };
            let a = unescape(a).ok_or_else(|| err("bad escape"))?;
            let b = unescape(b).ok_or_else(|| err("bad escape"))?;
            if a.is_empty() || b.is_empty() {
                return Err(err("empty symbol"));
            }
            if SPECIALS.contains(&a.as_str()) || SPECIALS.contains(&b.as_str()) {
                return Err(err("special tokens cannot be merged"));
            }
            if !seen.insert((a.clone(), b.clone())) {
                return Err(err("duplicate merge"));
            }
            vocab.insert(a.clone());
            vocab.insert(b.clone());
            vocab.insert(format!("{a}{b}"));
            merges.push((a, b));
        }
        Ok(Self::from_parts(merges, vocab, &end_of_word))
    }
}

/// Concatenates subwords, closing a token at every subword that ends with
/// the marker. A trailing partial token is emitted as is.
pub fn detokenize_with_marker<S: AsRef<str>>(subwords: &[S], end_of_word: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut open = false;
    for sw in subwords {
        let sw = sw.as_ref();
        if let Some(stem) = sw.strip_suffix(end_of_word) {
            current.push_str(stem);
            out.push(std::mem::take(&mut current));
            open = false;
        } else {
            current.push_str(sw);
            open = true;
        }
    }
    if open {
        out.push(current);
    }
    out
}

pub fn detokenize<S: AsRef<str>>(subwords: &[S]) -> Vec<String> {
    detokenize_with_marker(subwords, DEFAULT_END_OF_WORD)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next()? {
            '\\' => '\\',
            's' => ' ',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}

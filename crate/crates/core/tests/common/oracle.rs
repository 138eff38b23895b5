//! Slow, independent reimplementations used as test oracles.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use updatebench::model::layers::{Attention, FeedForward, LayerNorm, Linear, Parameters};
use updatebench::model::{BeamCandidate, Example, ModelParams, StepModel};

type V = Vec<f64>;

fn linear(x: &[f64], l: &Linear) -> V {
    let (n_in, n_out) = l.weight.dim();
    assert_eq!(x.len(), n_in);
    (0..n_out)
        .map(|j| l.bias[j] + (0..n_in).map(|i| x[i] * l.weight[[i, j]]).sum::<f64>())
        .collect()
}

fn norm(x: &[f64], ln: &LayerNorm) -> V {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let sd = (var + 1e-5).sqrt();
    x.iter().enumerate().map(|(j, v)| (v - mean) / sd * ln.gain[j] + ln.shift[j]).collect()
}

fn feed_forward(x: &[f64], f: &FeedForward) -> V {
    let hidden: V = linear(x, &f.expand).into_iter().map(|v| v.max(0.0)).collect();
    linear(&hidden, &f.contract)
}

fn attention(queries: &[V], memory: &[V], a: &Attention, heads: usize, causal: bool) -> Vec<V> {
    let q: Vec<V> = queries.iter().map(|x| linear(x, &a.query)).collect();
    let k: Vec<V> = memory.iter().map(|x| linear(x, &a.key)).collect();
    let v: Vec<V> = memory.iter().map(|x| linear(x, &a.value)).collect();
    let d = q[0].len();
    let dh = d / heads;
    let mut out = Vec::new();
    for i in 0..q.len() {
        let visible = if causal { i + 1 } else { k.len() };
        let mut context = vec![0.0; d];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let scores: V = (0..visible)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: V = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = weights.iter().sum();
            for (j, w) in weights.iter().enumerate() {
                for c in cols.clone() {
                    context[c] += w / z * v[j][c];
                }
            }
        }
        out.push(linear(&context, &a.output));
    }
    out
}

fn add(a: &mut [V], b: Vec<V>) {
    for (x, y) in a.iter_mut().zip(b) {
        for (p, q) in x.iter_mut().zip(y) {
            *p += q;
        }
    }
}

fn embed(p: &ModelParams, ids: &[usize]) -> Vec<V> {
    let d = p.config.d_model;
    ids.iter()
        .enumerate()
        .map(|(pos, &id)| {
            (0..d)
                .map(|c| {
                    let mut v = p.embedding[[id, c]] * (d as f64).sqrt();
                    if p.config.positional_encoding {
                        let angle = pos as f64 / 10_000f64.powf((c - c % 2) as f64 / d as f64);
                        v += if c % 2 == 0 { angle.sin() } else { angle.cos() };
                    }
                    v
                })
                .collect()
        })
        .collect()
}

/// Encoder output, one vector per source position.
pub fn encode(p: &ModelParams, source: &[usize]) -> Vec<V> {
    let heads = p.config.num_heads;
    let mut x = embed(p, source);
    for layer in &p.encoder {
        let a: Vec<V> = x.iter().map(|r| norm(r, &layer.norm1)).collect();
        add(&mut x, attention(&a, &a, &layer.self_attn, heads, false));
        let b: Vec<V> = x.iter().map(|r| feed_forward(&norm(r, &layer.norm2), &layer.ffn)).collect();
        add(&mut x, b);
    }
    x.iter().map(|r| norm(r, &p.encoder_norm)).collect()
}

/// Next-token probabilities after `prefix`, one position at a time.
pub fn next_token_probs(p: &ModelParams, source: &[usize], prefix: &[usize]) -> V {
    let heads = p.config.num_heads;
    let memory = encode(p, source);
    let mut y = embed(p, prefix);
    for layer in &p.decoder {
        let a: Vec<V> = y.iter().map(|r| norm(r, &layer.norm1)).collect();
        add(&mut y, attention(&a, &a, &layer.self_attn, heads, true));
        let b: Vec<V> = y.iter().map(|r| norm(r, &layer.norm2)).collect();
        add(&mut y, attention(&b, &memory, &layer.cross_attn, heads, false));
        let c: Vec<V> = y.iter().map(|r| feed_forward(&norm(r, &layer.norm3), &layer.ffn)).collect();
        add(&mut y, c);
    }
    let logits = linear(&norm(y.last().unwrap(), &p.decoder_norm), &p.output);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: V = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Worst relative error between analytic gradients and central differences
/// over every parameter.
pub fn max_gradient_error(p: &ModelParams, ex: &Example) -> f64 {
    let (_, grad) = p.loss_and_gradient(ex).unwrap();
    let analytic = grad.flatten();
    let count = analytic.len();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let loss_at = |delta: f64| {
            let mut q = p.clone();
            let mut pos = 0;
            q.visit_mut("", &mut |_, values, _| {
                if (pos..pos + values.len()).contains(&i) {
                    values[i - pos] += delta;
                }
                pos += values.len();
            });
            q.loss(ex).unwrap()
        };
        let numeric = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

/// A scorer whose next-token distribution depends only on the step index.
pub struct Positional {
    pub steps: Vec<V>,
    pub eos: usize,
}

impl Positional {
    pub fn random(rng: &mut ChaCha8Rng, vocab: usize, steps: usize) -> Self {
        let steps = (0..steps)
            .map(|_| {
                let w: V = (0..vocab).map(|_| rng.gen_range(0.05..1.0)).collect();
                let z: f64 = w.iter().sum();
                w.iter().map(|x| (x / z).ln()).collect()
            })
            .collect();
        Self { steps, eos: vocab - 1 }
    }
}

impl StepModel for Positional {
    type State = (usize, V);

    fn start(&self) -> (usize, V) {
        (0, self.steps[0].clone())
    }

    fn log_probs<'s>(&self, state: &'s (usize, V)) -> &'s [f64] {
        &state.1
    }

    fn advance(&self, state: &(usize, V), _token: usize) -> (usize, V) {
        let next = (state.0 + 1).min(self.steps.len() - 1);
        (state.0 + 1, self.steps[next].clone())
    }

    fn eos(&self) -> usize {
        self.eos
    }
}

/// Every sequence of at most `max_len` tokens (either ending at EOS or cut at
/// `max_len`), ranked by log-probability then token ids, first `beam` kept.
pub fn exhaustive(model: &Positional, max_len: usize, beam: usize) -> Vec<BeamCandidate> {
    fn walk(m: &Positional, max_len: usize, tokens: &mut Vec<usize>, lp: f64, out: &mut Vec<BeamCandidate>) {
        let dist = &m.steps[tokens.len().min(m.steps.len() - 1)];
        for (t, &l) in dist.iter().enumerate() {
            tokens.push(t);
            let done = t == m.eos;
            if done || tokens.len() == max_len {
                out.push(BeamCandidate {
                    tokens: tokens.clone(),
                    log_prob: lp + l,
                    terminated: done,
                });
            } else {
                walk(m, max_len, tokens, lp + l, out);
            }
            tokens.pop();
        }
    }
    let mut all = Vec::new();
    walk(model, max_len, &mut Vec::new(), 0.0, &mut all);
    all.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens)));
    all.truncate(beam);
    all
}

/// Sentence BLEU-4 by brute-force n-gram scans. The i-th occurrence of an
/// n-gram in the candidate matches when the reference holds at least i
/// copies; zero-match orders use `1 / (total + 1)`.
pub fn bleu4<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let occurrences = |seq: &[T], gram: &[T], upto: usize| -> usize {
        let n = gram.len();
        (0..upto.min((seq.len() + 1).saturating_sub(n))).filter(|&j| &seq[j..j + n] == gram).count()
    };
    let mut product = 1.0;
    for n in 1..=4 {
        let total = (candidate.len() + 1).saturating_sub(n);
        let mut matched = 0;
        for i in 0..total {
            let gram = &candidate[i..i + n];
            if occurrences(candidate, gram, i + 1) <= occurrences(reference, gram, usize::MAX) {
                matched += 1;
            }
        }
        product *= if matched > 0 {
            matched as f64 / total as f64
        } else {
            1.0 / (total as f64 + 1.0)
        };
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    brevity * product.powf(0.25)
}

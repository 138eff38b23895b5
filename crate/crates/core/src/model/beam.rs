//! Beam search over any left-to-right scorer.
//!
//! Up to `beam` live hypotheses are kept per step. A hypothesis that emits
//! EOS moves to the finished set and stops growing. The search ends at
//! `max_len` or as soon as the best live score falls below the `beam`-th
//! best finished score, since raw log-probabilities can only decrease. The
//! result is the best `beam` of finished and still-live hypotheses, sorted
//! by summed log-probability; equal scores are ordered by token ids.
//!
//! With `beam = 1` the live path is the greedy argmax path, but an earlier
//! EOS branch that scored higher than the greedy path's final score wins.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::transformer::{encode, DecoderState, IncrementalDecoder};
use super::{ModelError, ModelParams, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

/// A left-to-right scorer: a state yields next-token log-probabilities.
pub trait StepModel {
    type State: Clone;
    fn start(&self) -> Self::State;
    fn log_probs<'s>(&self, state: &'s Self::State) -> &'s [f64];
    fn advance(&self, state: &Self::State, token: usize) -> Self::State;
    fn eos(&self) -> usize;
    /// Tokens that may be generated.
    fn allowed(&self, _token: usize) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamCandidate {
    /// Generated ids, ending with EOS when `terminated`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub terminated: bool,
}

fn rank(a: &BeamCandidate, b: &BeamCandidate) -> Ordering {
    b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Generic beam search; see the module docs for the exact policy.
pub fn search<M: StepModel>(model: &M, beam: usize, max_len: usize) -> Vec<BeamCandidate> {
    let beam = beam.max(1);
    let eos = model.eos();
    let mut live: Vec<(BeamCandidate, M::State)> = vec![(
        BeamCandidate {
            tokens: Vec::new(),
            log_prob: 0.0,
            terminated: false,
        },
        model.start(),
    )];
    let mut finished: Vec<BeamCandidate> = Vec::new();
    for _ in 0..max_len {
        let mut expansions: Vec<(BeamCandidate, usize)> = Vec::new();
        for (i, (hyp, state)) in live.iter().enumerate() {
            for (t, &lp) in model.log_probs(state).iter().enumerate() {
                if !model.allowed(t) || lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(t);
                expansions.push((
                    BeamCandidate {
                        tokens,
                        log_prob: hyp.log_prob + lp,
                        terminated: t == eos,
                    },
                    i,
                ));
            }
        }
        expansions.sort_by(|a, b| rank(&a.0, &b.0));
        let mut next = Vec::with_capacity(beam);
        for (cand, parent) in expansions {
            if cand.terminated {
                finished.push(cand);
            } else if next.len() < beam {
                let token = *cand.tokens.last().expect("non-empty expansion");
                let state = model.advance(&live[parent].1, token);
                next.push((cand, state));
            }
        }
        finished.sort_by(rank);
        finished.truncate(beam);
        live = next;
        let done = match (live.first(), finished.get(beam - 1)) {
            (None, _) => true,
            (Some((best, _)), Some(worst)) => best.log_prob < worst.log_prob,
            _ => false,
        };
        if done {
            break;
        }
    }
    let mut out = finished;
    out.extend(live.into_iter().map(|(c, _)| c));
    out.sort_by(rank);
    out.truncate(beam);
    out
}

impl StepModel for IncrementalDecoder<'_> {
    type State = DecoderState;

    fn start(&self) -> DecoderState {
        IncrementalDecoder::start(self)
    }

    fn log_probs<'s>(&self, state: &'s DecoderState) -> &'s [f64] {
        &state.log_probs
    }

    fn advance(&self, state: &DecoderState, token: usize) -> DecoderState {
        let mut next = state.clone();
        self.feed(&mut next, token);
        next
    }

    fn eos(&self) -> usize {
        EOS_ID
    }

    fn allowed(&self, token: usize) -> bool {
        !matches!(token, PAD_ID | BOS_ID | UNK_ID)
    }
}

/// Encodes `source` and returns at most `beam` candidates of at most
/// `max_len` generated tokens (clamped so BOS plus output fits
/// `max_seq_len`).
pub fn beam_search(
    params: &ModelParams,
    source: &[usize],
    beam: usize,
    max_len: usize,
) -> Result<Vec<BeamCandidate>, ModelError> {
    let state = encode(params, source)?;
    let decoder = IncrementalDecoder::new(params, &state);
    let max_len = max_len.min(params.config.max_seq_len.saturating_sub(1));
    Ok(search(&decoder, beam, max_len))
}

#[cfg(test)]
mod tests {
    use super::super::{decode_step, ModelConfig};
    use super::*;

    /// Context-free model: the same distribution at every step.
    struct Stationary {
        log_probs: Vec<f64>,
        eos: usize,
    }

    impl StepModel for Stationary {
        type State = Vec<f64>;
        fn start(&self) -> Vec<f64> {
            self.log_probs.clone()
        }
        fn log_probs<'s>(&self, state: &'s Vec<f64>) -> &'s [f64] {
            state
        }
        fn advance(&self, state: &Vec<f64>, _token: usize) -> Vec<f64> {
            state.clone()
        }
        fn eos(&self) -> usize {
            self.eos
        }
    }

    /// Distribution chosen by the full prefix.
    struct Table<F: Fn(&[usize]) -> Vec<f64>> {
        f: F,
    }

    impl<F: Fn(&[usize]) -> Vec<f64>> StepModel for Table<F> {
        type State = (Vec<usize>, Vec<f64>);
        fn start(&self) -> Self::State {
            (Vec::new(), (self.f)(&[]))
        }
        fn log_probs<'s>(&self, state: &'s Self::State) -> &'s [f64] {
            &state.1
        }
        fn advance(&self, state: &Self::State, token: usize) -> Self::State {
            let mut prefix = state.0.clone();
            prefix.push(token);
            let lp = (self.f)(&prefix);
            (prefix, lp)
        }
        fn eos(&self) -> usize {
            0
        }
    }

    #[test]
    fn greedy_when_eos_is_never_competitive() {
        // EOS is improbable until the third step, where it dominates
        let model = Table {
            f: |p: &[usize]| {
                let probs: [f64; 3] = match p.len() {
                    0 => [0.01, 0.6, 0.39],
                    1 => [0.01, 0.3, 0.69],
                    _ => [0.9, 0.05, 0.05],
                };
                probs.iter().map(|v| v.ln()).collect()
            },
        };
        let out = search(&model, 1, 6);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, vec![1, 2, 0]);
        assert!(out[0].terminated);
        assert!((out[0].log_prob - (0.6f64 * 0.69 * 0.9).ln()).abs() < 1e-12);
    }

    #[test]
    fn no_eos_stops_at_max_len() {
        let model = Stationary {
            log_probs: vec![f64::NEG_INFINITY, 0.5f64.ln(), 0.5f64.ln()],
            eos: 0,
        };
        let out = search(&model, 3, 3);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|c| !c.terminated && c.tokens.len() == 3));
        // equal scores fall back to token order
        assert_eq!(out[0].tokens, vec![1, 1, 1]);
        assert_eq!(out[1].tokens, vec![1, 1, 2]);
    }

    #[test]
    fn transformer_beam_of_one_follows_argmax() {
        let cfg = ModelConfig {
            d_model: 16,
            num_heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_dim: 32,
            max_seq_len: 12,
            vocab_size: 24,
            dropout: 0.0,
            seed: 8,
            positional_encoding: true,
        };
        let p = ModelParams::init(&cfg).unwrap();
        let source = [5, 6, 7, EOS_ID];
        let out = beam_search(&p, &source, 1, 8).unwrap();
        let h = encode(&p, &source).unwrap();
        // walk the greedy path with the full recompute
        let mut prefix = vec![BOS_ID];
        let mut score = 0.0;
        for _ in 0..8 {
            let probs = decode_step(&p, &h, &prefix).unwrap();
            let (best, pr) = probs
                .iter()
                .enumerate()
                .filter(|(t, _)| !matches!(*t, PAD_ID | BOS_ID | UNK_ID))
                .fold((0, -1.0), |acc, (t, &v)| if v > acc.1 { (t, v) } else { acc });
            prefix.push(best);
            score += pr.ln();
            if best == EOS_ID {
                break;
            }
        }
        let top = &out[0];
        assert!(top.log_prob >= score - 1e-9);
        if top.tokens.len() == prefix.len() - 1 {
            assert_eq!(top.tokens, prefix[1..]);
        }
        let wide = beam_search(&p, &source, 5, 8).unwrap();
        assert!(wide[0].log_prob >= top.log_prob - 1e-12);
        for w in wide.windows(2) {
            assert!(rank(&w[0], &w[1]) == Ordering::Less);
        }
    }
}

//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::oracle;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use updatebench::abstraction::{abstract_pair, deabstract};
use updatebench::bpe::BpeModel;
use updatebench::dataset::{default_boundary, save_split, split_random, split_timewise, DatasetSplit};
use updatebench::java::{token_kind, tokens_from_texts, TokenKind};
use updatebench::metrics::{
    bleu4, codebleu, evaluate_run, perfect_prediction, CandidateSet, CodeBleuWeights, EvalReport,
};
use updatebench::model::{search, Example, ModelConfig, ModelParams, TrainConfig, EOS_ID};
use updatebench::pipeline::{recommend, run_split, train_model, RunSettings, TokenMode, Tokenizer};
use updatebench::synth;
use updatebench::triplet::MethodPairTriplet;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    const CHARS: &[char] = &[
        'a', 'b', 'e', 'g', 't', 'V', 'w', '0', '7', '_', '$', '.', '(', ')', ';', '<', '>', '/', '"', '\'', 'é', 'ß',
        '中', '🙂',
    ];
    let len = rng.gen_range(1..10);
    (0..len).map(|_| *CHARS.choose(rng).unwrap()).collect()
}

fn roundtrip_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let corpus: Vec<Vec<String>> = synth::rule_corpus(400, 1).into_iter().map(|t| t.prior).collect();
    let model = BpeModel::learn(&corpus, 500).map_err(|e| e.to_string())?;
    let mut bpe_exact = 0;
    for _ in 0..10_000 {
        let tokens: Vec<String> = (0..rng.gen_range(0..20))
            .map(|_| {
                if rng.gen_bool(0.5) {
                    corpus.choose(&mut rng).unwrap().choose(&mut rng).unwrap().clone()
                } else {
                    random_word(&mut rng)
                }
            })
            .filter(|t| !t.contains("</w>"))
            .collect();
        bpe_exact += usize::from(model.detokenize(&model.apply(&tokens)) == tokens);
    }

    let vocabulary = ["(", ")", "{", "}", ";", ".", ",", "=", "+", "==", "return", "if", "new", "int", "this", "null"];
    let piece = |rng: &mut ChaCha8Rng| -> String {
        match rng.gen_range(0..5) {
            0 => vocabulary.choose(rng).unwrap().to_string(),
            1 => format!("{}", rng.gen_range(0..50)),
            2 => format!("\"s{}\"", rng.gen_range(0..9)),
            3 => format!("Type{}", rng.gen_range(0..6)),
            _ => {
                let w = format!("v{}", random_word(rng).chars().filter(char::is_ascii_alphanumeric).collect::<String>());
                if token_kind(&w) == Some(TokenKind::Identifier) {
                    w
                } else {
                    "x".into()
                }
            }
        }
    };
    let mut abs_exact = 0;
    for _ in 0..1000 {
        let prior: Vec<String> = (0..rng.gen_range(0..40)).map(|_| piece(&mut rng)).collect();
        let updated: Vec<String> = (0..rng.gen_range(0..40)).map(|_| piece(&mut rng)).collect();
        let (a, b, map) = abstract_pair(&tokens_from_texts(&prior), &tokens_from_texts(&updated));
        let ok = deabstract(&a, &map).ok() == Some(prior) && deabstract(&b, &map).ok() == Some(updated);
        abs_exact += usize::from(ok);
    }
    let elapsed = start.elapsed();
    check(
        bpe_exact == 10_000 && abs_exact == 1000 && elapsed < Duration::from_secs(60),
        format!("bpe {bpe_exact}/10000 exact, abstraction {abs_exact}/1000 exact, {}", secs(elapsed)),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let words = ["a", "b", "c", "(", ")", ";", "x", "=", "{", "}", "return", "int"];
    let seq = |rng: &mut ChaCha8Rng| -> Vec<String> {
        (0..rng.gen_range(0..18)).map(|_| words.choose(rng).unwrap().to_string()).collect()
    };
    let mut worst_bleu: f64 = 0.0;
    let mut pp_agree = 0;
    let mut components_ok = true;
    let mut worst_sum: f64 = 0.0;
    for i in 0..200 {
        let reference = seq(&mut rng);
        let mut candidate = reference.clone();
        if !candidate.is_empty() && rng.gen_bool(0.7) {
            let at = rng.gen_range(0..candidate.len());
            candidate[at] = words.choose(&mut rng).unwrap().to_string();
        } else if rng.gen_bool(0.5) {
            candidate = seq(&mut rng);
        }
        worst_bleu = worst_bleu.max((bleu4(&candidate, &reference) - oracle::bleu4(&candidate, &reference)).abs());

        let mut cands: Vec<Vec<String>> = (0..rng.gen_range(0..6)).map(|_| seq(&mut rng)).collect();
        if rng.gen_bool(0.5) {
            cands.insert(rng.gen_range(0..=cands.len()), reference.clone());
        }
        let set = CandidateSet {
            example_id: format!("e{i}"),
            candidates: cands.clone(),
            scores: None,
        };
        let agree = (0..8).all(|k| {
            let mut scan = false;
            for c in cands.iter().take(k) {
                scan |= *c == reference;
            }
            perfect_prediction(&set, &reference, k) == scan
        });
        pp_agree += usize::from(agree);

        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let z: f64 = w.iter().sum();
        let weights = CodeBleuWeights {
            bleu: w[0] / z,
            weighted_bleu: w[1] / z,
            ast: w[2] / z,
            dataflow: w[3] / z,
        };
        let s = codebleu(&candidate, &reference, &weights);
        let parts = [s.bleu, s.weighted_bleu, s.ast_match, s.dataflow_match];
        components_ok &= parts.iter().all(|v| (0.0..=1.0).contains(v));
        let sum = weights.bleu * s.bleu
            + weights.weighted_bleu * s.weighted_bleu
            + weights.ast * s.ast_match
            + weights.dataflow * s.dataflow_match;
        worst_sum = worst_sum.max((sum - s.score).abs());
    }
    check(
        worst_bleu < 1e-9 && pp_agree == 200 && components_ok && worst_sum < 1e-12,
        format!(
            "bleu max diff {worst_bleu:.1e}, PP@k agreement {pp_agree}/200, components in [0,1]: {components_ok}, weighted-sum diff {worst_sum:.1e}"
        ),
    )
}

fn split_bytes(split: &DatasetSplit) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    save_split(split, dir.path()).unwrap();
    ["train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"]
        .iter()
        .flat_map(|f| std::fs::read(dir.path().join(f)).unwrap())
        .collect()
}

fn split_invariants() -> Outcome {
    let all = common::random_triplets(&mut ChaCha8Rng::seed_from_u64(13), 10_000);
    let first = split_timewise(&all, default_boundary(), 0.8, 5).map_err(|e| e.to_string())?;
    let second = split_timewise(&all, default_boundary(), 0.8, 5).map_err(|e| e.to_string())?;
    let latest = first.train.iter().chain(&first.valid).map(|t| t.commit_time).max().unwrap();
    let earliest = first.test.iter().map(|t| t.commit_time).min().unwrap();
    let ids = |p: &[MethodPairTriplet]| p.iter().map(|t| t.example_id.clone()).collect::<BTreeSet<_>>();
    let (tr, va, te) = (ids(&first.train), ids(&first.valid), ids(&first.test));
    let disjoint = tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te);
    let exact = tr.len() + va.len() + te.len() == all.len() && {
        let union: BTreeSet<String> = tr.union(&va).chain(&te).cloned().collect();
        union == ids(&all)
    };
    let byte_exact = split_bytes(&first) == split_bytes(&second);
    check(
        latest < earliest && disjoint && exact && byte_exact,
        format!(
            "{}/{}/{} train/valid/test, date order {}, disjoint {disjoint}, exact {exact}, byte-identical rerun {byte_exact}",
            tr.len(),
            va.len(),
            te.len(),
            latest < earliest
        ),
    )
}

fn model_numerics() -> Outcome {
    let start = Instant::now();
    let tiny = ModelConfig {
        d_model: 8,
        num_heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_dim: 16,
        max_seq_len: 16,
        vocab_size: 20,
        dropout: 0.0,
        seed: 1,
        positional_encoding: true,
    };
    let params = ModelParams::init(&tiny).map_err(|e| e.to_string())?;
    let ex = Example {
        source: vec![5, 9, 14, 17, EOS_ID],
        target: vec![7, 11, 16, 4],
    };
    let grad_error = oracle::max_gradient_error(&params, &ex);

    let vocab = 2000;
    let wide = ModelConfig {
        vocab_size: vocab,
        max_seq_len: 64,
        ..desk_model()
    };
    let fresh = ModelParams::init(&wide).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let batch: Vec<Example> = (0..8)
        .map(|_| Example {
            source: (0..20).map(|_| rng.gen_range(4..vocab)).chain([EOS_ID]).collect(),
            target: (0..20).map(|_| rng.gen_range(4..vocab)).collect(),
        })
        .collect();
    let initial = fresh.mean_loss(&batch);
    let ln_v = (vocab as f64).ln();
    let initial_ok = (initial - ln_v).abs() / ln_v < 0.1;

    let pair = common::triplet(
        0,
        "void f ( ) { view . setBackgroundDrawable ( d ) ; }",
        "void f ( ) { view . setBackground ( d ) ; }",
        "2019-05-01",
    );
    let tokenizer = Tokenizer::fit(TokenMode::Bpe, std::slice::from_ref(&pair), 50).map_err(|e| e.to_string())?;
    let records = vec![tokenizer.encode_pair(&pair)];
    let cfg = TrainConfig {
        batch_size: 1,
        epochs: 200,
        max_steps: Some(200),
        ..desk_training(200)
    };
    let (ckpt, _) = train_model(&records, &records, TokenMode::Bpe, &desk_model(), &cfg).map_err(|e| e.to_string())?;
    let cands = recommend(&ckpt, &tokenizer, std::slice::from_ref(&pair), 1).map_err(|e| e.to_string())?;
    let pp1 = evaluate_run(&cands, &[pair], &[1], &CodeBleuWeights::default())
        .map_err(|e| e.to_string())?
        .per_k[&1]
        .pp_rate;
    let elapsed = start.elapsed();
    check(
        grad_error < 1e-3 && initial_ok && pp1 == 1.0 && elapsed < Duration::from_secs(120),
        format!(
            "max grad rel error {grad_error:.1e}, initial loss {initial:.3} vs ln V {ln_v:.3}, overfit PP@1 {pp1} within 200 steps, {}",
            secs(elapsed)
        ),
    )
}

fn beam_correctness(reports: &[(String, EvalReport)]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut agree = 0;
    let trials = 100;
    for _ in 0..trials {
        let model = oracle::Positional::random(&mut rng, 3, 4);
        let same = [1, 2, 5].iter().all(|&beam| {
            let got = search(&model, beam, 4);
            let want = oracle::exhaustive(&model, 4, beam);
            got.len() == want.len()
                && got.iter().zip(&want).all(|(g, w)| {
                    g.tokens == w.tokens && g.terminated == w.terminated && (g.log_prob - w.log_prob).abs() < 1e-12
                })
        });
        agree += usize::from(same);
    }
    let non_monotone: Vec<&str> = reports
        .iter()
        .filter(|(_, r)| r.per_k.values().zip(r.per_k.values().skip(1)).any(|(a, b)| b.pp_count < a.pp_count))
        .map(|(name, _)| name.as_str())
        .collect();
    check(
        agree == trials && non_monotone.is_empty(),
        format!(
            "exhaustive agreement {agree}/{trials} models for beams 1, 2, 5; PP@k monotone on {}/{} runs",
            reports.len() - non_monotone.len(),
            reports.len()
        ),
    )
}

fn desk_model() -> ModelConfig {
    ModelConfig {
        d_model: 64,
        num_heads: 4,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_dim: 128,
        max_seq_len: 128,
        dropout: 0.0,
        seed: 0,
        ..ModelConfig::default()
    }
}

fn desk_training(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        epochs,
        ..TrainConfig::default()
    }
}

fn settings(mode: TokenMode, epochs: usize, seed: u64) -> RunSettings {
    RunSettings {
        mode,
        num_merges: 2000,
        model: ModelConfig { seed, ..desk_model() },
        train: desk_training(epochs),
        beams: vec![1, 5, 10, 15],
        weights: CodeBleuWeights::default(),
    }
}

fn pp15(r: &EvalReport) -> f64 {
    r.per_k[&15].pp_rate
}

fn seen_rules(reports: &mut Vec<(String, EvalReport)>) -> Outcome {
    let corpus = synth::rule_corpus(2000, 21);
    let split = split_random(&corpus, (0.8, 0.1, 0.1), 21).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut gate = None;
    for mode in [TokenMode::Bpe, TokenMode::Abs, TokenMode::AbsBpe] {
        let start = Instant::now();
        let out = run_split(&split, &settings(mode, 6, 21)).map_err(|e| format!("{mode}: {e}"))?;
        let elapsed = start.elapsed();
        let pp = pp15(&out.report);
        lines.push(format!("{mode} {pp:.3}"));
        if mode == TokenMode::Bpe {
            gate = Some((pp, elapsed));
        }
        reports.push((format!("seen-rules {mode}"), out.report));
    }
    let (pp, elapsed) = gate.expect("bpe run");
    check(
        pp >= 0.90 && elapsed < Duration::from_secs(600),
        format!(
            "bpe PP@15 {pp:.3} (>= 0.90) in {} on {} held-out pairs; per-mode PP@15: {}",
            secs(elapsed),
            split.test.len(),
            lines.join(", ")
        ),
    )
}

fn drift(reports: &mut Vec<(String, EvalReport)>) -> Outcome {
    let mut lines = Vec::new();
    let mut all_hold = true;
    for seed in [1, 2, 3] {
        let corpus = synth::drift_corpus(800, 2020, seed);
        let timewise = split_timewise(&corpus, default_boundary(), 0.8, seed).map_err(|e| e.to_string())?;
        let random = split_random(&corpus, (0.8, 0.1, 0.1), seed).map_err(|e| e.to_string())?;
        let tw = run_split(&timewise, &settings(TokenMode::Bpe, 12, seed)).map_err(|e| e.to_string())?;
        let ti = run_split(&random, &settings(TokenMode::Bpe, 12, seed)).map_err(|e| e.to_string())?;
        let gap = pp15(&ti.report) - pp15(&tw.report);
        all_hold &= gap >= 0.10;
        lines.push(format!(
            "seed {seed}: random {:.3} vs timewise {:.3} (gap {:.1}pp)",
            pp15(&ti.report),
            pp15(&tw.report),
            100.0 * gap
        ));
        reports.push((format!("drift timewise {seed}"), tw.report));
        reports.push((format!("drift random {seed}"), ti.report));
    }
    check(all_hold, lines.join("; "))
}

fn update_size(reports: &mut Vec<(String, EvalReport)>) -> Outcome {
    let mut lines = Vec::new();
    let mut all_hold = true;
    for seed in [1, 2, 3] {
        let corpus = synth::size_corpus(900, &[1, 2, 7], seed);
        let split = split_random(&corpus, (0.8, 0.1, 0.1), seed).map_err(|e| e.to_string())?;
        let out = run_split(&split, &settings(TokenMode::Bpe, 12, seed)).map_err(|e| e.to_string())?;
        let totals = out.report.update_size_totals();
        let rates: Vec<Option<f64>> = [0, 1, 5].iter().map(|&b| totals[b].pp_rate).collect();
        let holds = match rates[..] {
            [Some(a), Some(b), Some(c)] => a >= b && b >= c,
            _ => false,
        };
        all_hold &= holds;
        let shown: Vec<String> = rates
            .iter()
            .map(|r| r.map_or("empty".to_string(), |v| format!("{v:.3}")))
            .collect();
        lines.push(format!("seed {seed}: 0-5 {} / 5-10 {} / 25+ {}", shown[0], shown[1], shown[2]));
        reports.push((format!("update-size {seed}"), out.report));
    }
    check(all_hold, lines.join("; "))
}

fn main() {
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("roundtrip suite", roundtrip_suite()),
        ("metric oracles", metric_oracles()),
        ("split invariants", split_invariants()),
        ("model numerics", model_numerics()),
    ];
    let seen = seen_rules(&mut reports);
    let drifted = drift(&mut reports);
    let sized = update_size(&mut reports);
    results.push(("beam correctness", beam_correctness(&reports)));
    results.push(("seen-rule reproduction", seen));
    results.push(("time-wise vs time-ignore gap", drifted));
    results.push(("update-size decay", sized));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed in {}", results.len() - failed, secs(start.elapsed()));
    if failed > 0 {
        std::process::exit(1);
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use updatebench::dataset::{split_random, split_timewise, SplitPolicy};
use updatebench::metrics::{evaluate_run, CodeBleuWeights};
use updatebench::miner::{dedupe, filter_small, mine_all, FilterPolicy};
use updatebench::model::{decode_checkpoint, encode_checkpoint, ModelConfig, TrainConfig};
use updatebench::pipeline::{recommend, train_model, TokenMode, TokenizedRecord, Tokenizer};
use updatebench::report::Report;
use updatebench::triplet::{parse_time, read_jsonl, MethodPairTriplet};

fn git(repo: &Path, args: &[&str], date: &str) {
    let status = Command::new("git")
        .args(["-c", "user.name=Dev", "-c", "user.email=dev@example.com", "-c", "commit.gpgsign=false"])
        .args(args)
        .current_dir(repo)
        .env("GIT_AUTHOR_DATE", date)
        .env("GIT_COMMITTER_DATE", date)
        .status()
        .unwrap();
    assert!(status.success(), "git {args:?}");
}

fn java(values: &[i64; 5]) -> String {
    let mut src = String::from("package app;\n\npublic class Counter {\n");
    for (k, v) in values.iter().enumerate() {
        src.push_str(&format!("    int step{k}(int a) {{\n        return a + {v};\n    }}\n\n"));
    }
    src.push_str("}\n");
    src
}

const MESSAGES: [&str; 4] = ["Fix off-by-one step", "Add faster stepping", "Refactor step size", "Update constants"];

/// 40 commits from 2018 to 2021, each changing one method's constant.
fn fixture_repo(dir: &Path) -> PathBuf {
    let repo = dir.join("counter");
    std::fs::create_dir_all(repo.join("src")).unwrap();
    git(&repo, &["init", "--quiet"], "2017-12-01T00:00:00Z");
    let mut values = [1, 2, 3, 4, 5];
    std::fs::write(repo.join("src/Counter.java"), java(&values)).unwrap();
    git(&repo, &["add", "."], "2017-12-01T00:00:00Z");
    git(&repo, &["commit", "--quiet", "-m", "Initial import"], "2017-12-01T00:00:00Z");
    for i in 0..40 {
        values[i % 5] = 10 + i as i64;
        std::fs::write(repo.join("src/Counter.java"), java(&values)).unwrap();
        let date = format!("{}-{:02}-15T12:00:00Z", 2018 + i / 12, i % 12 + 1);
        git(&repo, &["commit", "--quiet", "-am", MESSAGES[i % 4]], &date);
    }
    repo
}

const CONFIG: &str = r#"
repos = "repos.txt"
out_dir = "out"
mode = "bpe"
num_merges = 60
boundary = "2020-01-01"
seed = 3
d_model = 16
num_heads = 2
encoder_layers = 1
decoder_layers = 1
ffn_dim = 32
max_seq_len = 64
dropout = 0.0
learning_rate = 0.003
batch_size = 4
epochs = 2
beams = [1, 3]
"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    repo: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let repo = fixture_repo(&root);
    std::fs::write(root.join("repos.txt"), "# fixture\ncounter\n").unwrap();
    std::fs::write(root.join("bench.toml"), CONFIG).unwrap();
    Fixture { _dir: dir, root, repo }
}

fn cli(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_updatebench"))
        .arg("--config")
        .arg(root.join("bench.toml"))
        .arg("--jobs")
        .arg("1")
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(root: &Path, args: &[&str]) -> Output {
    let out = cli(root, args);
    assert!(
        out.status.success(),
        "{args:?}: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn model() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        num_heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_dim: 32,
        max_seq_len: 64,
        dropout: 0.0,
        seed: 3,
        ..ModelConfig::default()
    }
}

fn training() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.003,
        batch_size: 4,
        epochs: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn full_pipeline_matches_library() {
    let f = fixture();
    let out = f.root.join("out");
    ok(&f.root, &["mine"]);
    let mined: Vec<MethodPairTriplet> = read_jsonl(&out.join("triplets.jsonl")).unwrap();
    let since = parse_time("1970-01-01").unwrap();
    let until = parse_time("2100-01-01").unwrap();
    let lib_mined = dedupe(filter_small(
        mine_all(std::slice::from_ref(&f.repo), since, until, 1).unwrap(),
        &FilterPolicy::default(),
    ));
    assert_eq!(mined, lib_mined);
    assert_eq!(mined.len(), 40);

    ok(&f.root, &["classify"]);
    let types = std::fs::read_to_string(out.join("types.jsonl")).unwrap();
    assert_eq!(types.lines().count(), 40);

    let mut runs = BTreeMap::new();
    for policy in [SplitPolicy::TimeWise, SplitPolicy::TimeIgnore] {
        let name = policy.name();
        for stage in ["split", "tokenize", "train", "recommend", "evaluate"] {
            ok(&f.root, &[stage, "--split", name]);
        }

        let split = match policy {
            SplitPolicy::TimeWise => split_timewise(&mined, parse_time("2020-01-01").unwrap(), 0.8, 3),
            SplitPolicy::TimeIgnore => split_random(&mined, (0.8, 0.1, 0.1), 3),
        }
        .unwrap();
        let tokenizer = Tokenizer::fit(TokenMode::Bpe, &split.train, 60).unwrap();
        let encode = |part: &[MethodPairTriplet]| -> Vec<TokenizedRecord> {
            part.iter().map(|t| tokenizer.encode_pair(t)).collect()
        };
        let (ckpt, _) =
            train_model(&encode(&split.train), &encode(&split.valid), TokenMode::Bpe, &model(), &training()).unwrap();
        let bytes = encode_checkpoint(&ckpt);
        assert_eq!(std::fs::read(out.join("models").join(format!("{name}.ckpt"))).unwrap(), bytes);
        let stored = decode_checkpoint(&bytes).unwrap();
        let candidates = recommend(&stored, &tokenizer, &split.test, 3).unwrap();
        let report = evaluate_run(&candidates, &split.test, &[1, 3], &CodeBleuWeights::default()).unwrap();
        let mut expected = serde_json::to_string_pretty(&report).unwrap();
        expected.push('\n');
        let actual = std::fs::read_to_string(out.join("eval").join(format!("{name}.json"))).unwrap();
        assert_eq!(actual, expected, "{name}");
        runs.insert(name.to_string(), report);
    }

    let stdout = String::from_utf8(ok(&f.root, &["report"]).stdout).unwrap();
    let report = Report::new(runs);
    assert!(report.comparison.is_some());
    assert_eq!(std::fs::read_to_string(out.join("report.txt")).unwrap(), report.render());
    assert_eq!(stdout, report.render());
    let json: Report = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(serde_json::to_string(&json).unwrap(), serde_json::to_string(&report).unwrap());

    // re-running a stage reproduces its outputs exactly
    let before = std::fs::read(out.join("models/timewise.ckpt")).unwrap();
    let cands = std::fs::read(out.join("candidates/timewise.jsonl")).unwrap();
    ok(&f.root, &["train", "--split", "timewise"]);
    ok(&f.root, &["recommend", "--split", "timewise"]);
    assert_eq!(std::fs::read(out.join("models/timewise.ckpt")).unwrap(), before);
    assert_eq!(std::fs::read(out.join("candidates/timewise.jsonl")).unwrap(), cands);
}

#[test]
fn single_run_report_marks_comparison_unavailable() {
    let f = fixture();
    ok(&f.root, &["mine"]);
    for stage in ["split", "tokenize", "train", "recommend", "check-candidates", "evaluate", "report"] {
        ok(&f.root, &[stage, "--mode", "abs"]);
    }
    let text = std::fs::read_to_string(f.root.join("out/report.txt")).unwrap();
    assert!(text.contains("n/a"), "{text}");
    assert!(text.contains("timewise split"));

    // an externally produced file that drops one example is rejected
    let path = f.root.join("out/candidates/timewise.jsonl");
    let full = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = full.lines().collect();
    lines.pop();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let out = cli(&f.root, &["check-candidates"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ids without candidates"));
    std::fs::write(&path, "{\"example_id\": \"x\", \"candidates\": [[\"a\"]], \"scores\": []}\n").unwrap();
    let out = cli(&f.root, &["check-candidates"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("candidates line 1"));
}

#[test]
fn missing_artifacts_exit_with_two() {
    let f = fixture();
    for stage in ["split", "tokenize", "train", "recommend", "check-candidates", "evaluate", "classify", "report"] {
        let out = cli(&f.root, &[stage]);
        assert_eq!(out.status.code(), Some(2), "{stage}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("missing input"), "{stage}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_updatebench"))
        .args(["--config", "/nonexistent/bench.toml", "mine"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_failures_exit_with_one() {
    let f = fixture();
    let out = cli(&f.root, &["--beam", "0", "mine"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config failed"));

    // every commit predates this boundary, so the time-wise test part is empty
    ok(&f.root, &["mine"]);
    let out = cli(&f.root, &["split", "--boundary", "2030-01-01"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("split failed"));
}

#[test]
fn environment_overrides_config_file() {
    let f = fixture();
    ok(&f.root, &["mine"]);
    let out = Command::new(env!("CARGO_BIN_EXE_updatebench"))
        .arg("--config")
        .arg(f.root.join("bench.toml"))
        .args(["split"])
        .env("UPDATEBENCH_SPLIT", "random")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(f.root.join("out/split/random/manifest.json").exists());
    assert!(!f.root.join("out/split/timewise").exists());
}

#[test]
fn config_fuzz_seeds_parse_without_panicking() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fuzz/corpus/pipeline_config");
    let full = std::fs::read_to_string(dir.join("full.toml")).unwrap();
    assert!(updatebench_cli::config::PipelineConfig::parse(&full, []).is_ok());
    for entry in std::fs::read_dir(&dir).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        for cut in 0..=text.len() {
            if text.is_char_boundary(cut) {
                let _ = updatebench_cli::config::PipelineConfig::parse(&text[..cut], []);
            }
        }
    }
}

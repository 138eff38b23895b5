//! `updatebench`: mine, split, tokenize, train, recommend, evaluate,
//! classify and report, one stage per invocation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;
use updatebench::classifier::Classifier;
use updatebench::dataset::{load_split, save_split, split_random, split_timewise, SplitPolicy, MANIFEST_FILE};
use updatebench::metrics::{check_alignment, evaluate_run, read_candidates, EvalReport};
use updatebench::miner::{dedupe, filter_small, mine_all, read_repo_list, resolve_repo};
use updatebench::model::{load_checkpoint, save_checkpoint};
use updatebench::pipeline::{recommend, train_model, TokenMode, TokenizedRecord, Tokenizer, MODE_FILE};
use updatebench::report::{overall_table, Report};
use updatebench::triplet::{parse_time, read_jsonl, write_jsonl, MethodPairTriplet};
use updatebench_cli::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "updatebench", version, about = "Method-level code update benchmark pipeline")]
struct Cli {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Beam widths, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    beam: Option<Vec<usize>>,
    /// One of raw, abs, bpe, abs+bpe.
    #[arg(long, global = true)]
    mode: Option<TokenMode>,
    /// timewise or random.
    #[arg(long, global = true, value_parser = parse_policy)]
    split: Option<SplitPolicy>,
    /// First instant of the test period, e.g. 2020-01-01.
    #[arg(long, global = true)]
    boundary: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Extract method-pair triplets from the listed repositories.
    Mine,
    /// Divide the triplets into train, valid and test.
    Split,
    /// Fit the tokenizer on train and encode every part.
    Tokenize,
    /// Train the sequence-to-sequence model.
    Train,
    /// Beam-search candidate updates for the test part.
    Recommend,
    /// Score candidates against the test references.
    Evaluate,
    /// Validate a candidates file (built-in or external) without scoring it.
    CheckCandidates,
    /// Label every triplet with an update type from its commit message.
    Classify,
    /// Render result tables from all evaluated splits.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Mine => "mine",
            Command::Split => "split",
            Command::Tokenize => "tokenize",
            Command::Train => "train",
            Command::Recommend => "recommend",
            Command::Evaluate => "evaluate",
            Command::CheckCandidates => "check-candidates",
            Command::Classify => "classify",
            Command::Report => "report",
        }
    }
}

fn parse_policy(s: &str) -> Result<SplitPolicy, String> {
    match s {
        "timewise" => Ok(SplitPolicy::TimeWise),
        "random" => Ok(SplitPolicy::TimeIgnore),
        _ => Err(format!("unknown split policy {s:?} (expected timewise or random)")),
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),
    #[error("{stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Missing(_) => 2,
            CliError::Stage { .. } => 1,
        }
    }
}

/// Output locations, all below `out_dir`.
struct Layout {
    root: PathBuf,
    policy: &'static str,
}

impl Layout {
    fn triplets(&self) -> PathBuf {
        self.root.join("triplets.jsonl")
    }
    fn types(&self) -> PathBuf {
        self.root.join("types.jsonl")
    }
    fn split(&self) -> PathBuf {
        self.root.join("split").join(self.policy)
    }
    fn tokenized(&self) -> PathBuf {
        self.root.join("tokenized").join(self.policy)
    }
    fn checkpoint(&self) -> PathBuf {
        self.root.join("models").join(format!("{}.ckpt", self.policy))
    }
    fn candidates(&self) -> PathBuf {
        self.root.join("candidates").join(format!("{}.jsonl", self.policy))
    }
    fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

struct Stage {
    name: &'static str,
    cfg: PipelineConfig,
    layout: Layout,
}

impl Stage {
    fn fail(&self, message: impl ToString) -> CliError {
        CliError::Stage {
            stage: self.name,
            message: message.to_string(),
        }
    }

    fn require(&self, path: PathBuf) -> Result<PathBuf, CliError> {
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::Missing(path))
        }
    }

    fn create_parent(&self, path: &Path) -> Result<(), CliError> {
        match path.parent() {
            Some(p) => std::fs::create_dir_all(p).map_err(|e| self.fail(format!("{}: {e}", p.display()))),
            None => Ok(()),
        }
    }

    fn write(&self, path: &Path, text: &str) -> Result<(), CliError> {
        self.create_parent(path)?;
        std::fs::write(path, text).map_err(|e| self.fail(format!("{}: {e}", path.display())))
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| self.fail(e))?;
        text.push('\n');
        self.write(path, &text)
    }

    fn write_jsonl<T: Serialize>(&self, path: &Path, items: &[T]) -> Result<(), CliError> {
        self.create_parent(path)?;
        write_jsonl(path, items).map_err(|e| self.fail(e))
    }

    fn read_triplets(&self, path: PathBuf) -> Result<Vec<MethodPairTriplet>, CliError> {
        let path = self.require(path)?;
        read_jsonl(&path).map_err(|e| self.fail(e))
    }

    fn time(&self, key: &str, value: &str) -> Result<chrono::DateTime<chrono::Utc>, CliError> {
        parse_time(value).ok_or_else(|| self.fail(format!("{key}: cannot parse date {value:?}")))
    }

    fn mine(&self) -> Result<(), CliError> {
        let list_path = self
            .cfg
            .repos
            .clone()
            .ok_or_else(|| self.fail("no repository list configured (set `repos`)"))?;
        let list_path = self.require(list_path)?;
        let text = std::fs::read_to_string(&list_path).map_err(|e| self.fail(format!("{}: {e}", list_path.display())))?;
        let base = list_path.parent().unwrap_or(Path::new("."));
        let cache = self.cfg.clone_dir.clone().unwrap_or_else(|| self.layout.root.join("repos"));
        let mut repos = Vec::new();
        for entry in read_repo_list(&text) {
            let repo = resolve_repo(&entry, base, &cache).map_err(|e| self.fail(e))?;
            repos.push(self.require(repo)?);
        }
        let since = self.time("since", &self.cfg.since)?;
        let until = self.time("until", &self.cfg.until)?;
        let jobs = self.cfg.jobs.unwrap_or_else(rayon::current_num_threads);
        let mined = mine_all(&repos, since, until, jobs).map_err(|e| self.fail(e))?;
        let total = mined.len();
        let kept = dedupe(filter_small(mined, &self.cfg.filter_policy()));
        log::info!("{total} method pairs mined, {} kept after filtering and deduplication", kept.len());
        self.write_jsonl(&self.layout.triplets(), &kept)
    }

    fn classify(&self) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Labelled<'a> {
            example_id: &'a str,
            update_type: &'static str,
            message: &'a str,
        }
        let triplets = self.read_triplets(self.layout.triplets())?;
        let classifier = match &self.cfg.type_table {
            Some(p) => {
                let p = self.require(p.clone())?;
                let text = std::fs::read_to_string(&p).map_err(|e| self.fail(format!("{}: {e}", p.display())))?;
                Classifier::from_table(&text).map_err(|e| self.fail(format!("{}: {e}", p.display())))?
            }
            None => Classifier::default(),
        };
        let ids: Vec<String> = triplets.iter().map(updatebench::metrics::reference_id).collect();
        let rows: Vec<Labelled> = triplets
            .iter()
            .zip(&ids)
            .map(|(t, id)| Labelled {
                example_id: id,
                update_type: classifier.classify(&t.message).label(),
                message: &t.message,
            })
            .collect();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &rows {
            *counts.entry(r.update_type).or_default() += 1;
        }
        for (label, n) in counts {
            println!("{label}\t{n}");
        }
        self.write_jsonl(&self.layout.types(), &rows)
    }

    fn split(&self) -> Result<(), CliError> {
        let triplets = self.read_triplets(self.layout.triplets())?;
        let split = match self.cfg.split {
            SplitPolicy::TimeWise => {
                let boundary = self.time("boundary", &self.cfg.boundary)?;
                split_timewise(&triplets, boundary, self.cfg.train_fraction, self.cfg.seed)
            }
            SplitPolicy::TimeIgnore => {
                let [a, b, c] = self.cfg.random_fractions;
                split_random(&triplets, (a, b, c), self.cfg.seed)
            }
        }
        .map_err(|e| self.fail(e))?;
        let dir = self.layout.split();
        std::fs::create_dir_all(&dir).map_err(|e| self.fail(format!("{}: {e}", dir.display())))?;
        save_split(&split, &dir).map_err(|e| self.fail(e))?;
        println!(
            "{}: {} train, {} valid, {} test",
            self.cfg.split.name(),
            split.train.len(),
            split.valid.len(),
            split.test.len()
        );
        Ok(())
    }

    fn load_split(&self) -> Result<updatebench::dataset::DatasetSplit, CliError> {
        let dir = self.layout.split();
        self.require(dir.join(MANIFEST_FILE))?;
        load_split(&dir).map_err(|e| self.fail(e))
    }

    fn load_tokenizer(&self) -> Result<Tokenizer, CliError> {
        let dir = self.layout.tokenized();
        self.require(dir.join(MODE_FILE))?;
        Tokenizer::load(&dir).map_err(|e| self.fail(e))
    }

    fn tokenize(&self) -> Result<(), CliError> {
        let split = self.load_split()?;
        let tokenizer = Tokenizer::fit(self.cfg.mode, &split.train, self.cfg.num_merges).map_err(|e| self.fail(e))?;
        let dir = self.layout.tokenized();
        tokenizer.save(&dir).map_err(|e| self.fail(format!("{}: {e}", dir.display())))?;
        for (name, part) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
            let records: Vec<TokenizedRecord> = part.iter().map(|t| tokenizer.encode_pair(t)).collect();
            self.write_jsonl(&dir.join(format!("{name}.jsonl")), &records)?;
        }
        Ok(())
    }

    fn train(&self) -> Result<(), CliError> {
        let tokenizer = self.load_tokenizer()?;
        let dir = self.layout.tokenized();
        let read = |name: &str| -> Result<Vec<TokenizedRecord>, CliError> {
            let path = self.require(dir.join(format!("{name}.jsonl")))?;
            read_jsonl(&path).map_err(|e| self.fail(e))
        };
        let (train, valid) = (read("train")?, read("valid")?);
        let (ckpt, outcome) = train_model(&train, &valid, tokenizer.mode, &self.cfg.model(), &self.cfg.training())
            .map_err(|e| self.fail(e))?;
        println!("best epoch {} of {}", outcome.best_epoch, outcome.history.len());
        let path = self.layout.checkpoint();
        save_checkpoint(&path, &ckpt).map_err(|e| self.fail(e))
    }

    fn recommend(&self) -> Result<(), CliError> {
        let path = self.require(self.layout.checkpoint())?;
        let ckpt = load_checkpoint(&path).map_err(|e| self.fail(e))?;
        let tokenizer = self.load_tokenizer()?;
        let test = self.load_split()?.test;
        let beam = self.cfg.beams.iter().copied().max().unwrap_or(1);
        let sets = recommend(&ckpt, &tokenizer, &test, beam).map_err(|e| self.fail(e))?;
        self.write_jsonl(&self.layout.candidates(), &sets)
    }

    fn evaluate(&self) -> Result<(), CliError> {
        let path = self.require(self.layout.candidates())?;
        let candidates = read_candidates(&path).map_err(|e| self.fail(e))?;
        let test = self.load_split()?.test;
        let report = evaluate_run(&candidates, &test, &self.cfg.beams, &self.cfg.weights()).map_err(|e| self.fail(e))?;
        let dir = self.layout.eval_dir();
        self.write_json(&dir.join(format!("{}.json", self.layout.policy)), &report)?;
        let text = Report::new(BTreeMap::from([(self.layout.policy.to_string(), report.clone())])).render();
        self.write(&dir.join(format!("{}.txt", self.layout.policy)), &text)?;
        print!("{}", overall_table(&report));
        Ok(())
    }

    fn check_candidates(&self) -> Result<(), CliError> {
        let path = self.require(self.layout.candidates())?;
        let candidates = read_candidates(&path).map_err(|e| self.fail(e))?;
        let test = self.load_split()?.test;
        check_alignment(&candidates, &test).map_err(|e| self.fail(e))?;
        let widest = candidates.iter().map(|c| c.candidates.len()).max().unwrap_or(0);
        println!("{}: {} candidate sets, up to {widest} candidates each", path.display(), candidates.len());
        Ok(())
    }

    fn report(&self) -> Result<(), CliError> {
        let dir = self.layout.eval_dir();
        let mut runs = BTreeMap::new();
        for policy in [SplitPolicy::TimeWise, SplitPolicy::TimeIgnore] {
            let path = dir.join(format!("{}.json", policy.name()));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| self.fail(format!("{}: {e}", path.display())))?;
            let run: EvalReport =
                serde_json::from_str(&text).map_err(|e| self.fail(format!("{}: {e}", path.display())))?;
            runs.insert(policy.name().to_string(), run);
        }
        if runs.is_empty() {
            return Err(CliError::Missing(dir.join(format!("{}.json", self.layout.policy))));
        }
        let report = Report::new(runs);
        let text = report.render();
        self.write_json(&self.layout.root.join("report.json"), &report)?;
        self.write(&self.layout.root.join("report.txt"), &text)?;
        print!("{text}");
        Ok(())
    }
}

fn configure(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let config_err = |message: String| CliError::Stage {
        stage: "config",
        message,
    };
    if let Some(p) = &cli.config {
        if !p.exists() {
            return Err(CliError::Missing(p.clone()));
        }
    }
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), std::env::vars()).map_err(config_err)?;
    if let Some(j) = cli.jobs {
        cfg.jobs = Some(j);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = &cli.beam {
        cfg.beams = b.clone();
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(s) = cli.split {
        cfg.split = s;
    }
    if let Some(b) = &cli.boundary {
        cfg.boundary = b.clone();
    }
    if cfg.beams.is_empty() || cfg.beams.contains(&0) {
        return Err(config_err(format!("beam widths must be positive, got {:?}", cfg.beams)));
    }
    if !cfg.weights().is_valid() {
        return Err(config_err(format!("invalid CodeBLEU weights {:?}", cfg.codebleu_weights)));
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = configure(cli)?;
    if let Some(j) = cfg.jobs {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    let stage = Stage {
        name: cli.command.name(),
        layout: Layout {
            root: cfg.out_dir.clone(),
            policy: cfg.split.name(),
        },
        cfg,
    };
    match cli.command {
        Command::Mine => stage.mine(),
        Command::Split => stage.split(),
        Command::Tokenize => stage.tokenize(),
        Command::Train => stage.train(),
        Command::Recommend => stage.recommend(),
        Command::Evaluate => stage.evaluate(),
        Command::CheckCandidates => stage.check_candidates(),
        Command::Classify => stage.classify(),
        Command::Report => stage.report(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! Walks first-parent git history and pairs up methods that changed.
//!
//! Git is driven through its command line (`git log`, `git diff-tree -M`,
//! `git cat-file`); no libgit2 binding is involved.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, TimeZone, Utc};
use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::java::{extract_methods, lex, strip_comments, JavaError, MethodSpan, Token};
use crate::triplet::MethodPairTriplet;

#[derive(Debug, Error)]
pub enum MineError {
    #[error("cannot read repository {path}: {message}")]
    Repo { path: String, message: String },
    #[error("invalid time range: since {since} is after until {until}")]
    Range {
        since: DateTime<Utc>,
        until: DateTime<Utc>,
    },
}

/// A method located in one file version together with its tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractedMethod {
    pub span: MethodSpan,
    pub tokens: Vec<Token>,
}

impl ExtractedMethod {
    pub fn texts(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }
}

/// Strips comments and extracts every method with its header+body tokens.
pub fn methods_of(source: &str) -> Result<Vec<ExtractedMethod>, JavaError> {
    let stripped = strip_comments(source)?;
    extract_methods(&stripped)?
        .into_iter()
        .map(|span| {
            let tokens = lex(span.text(&stripped))?;
            Ok(ExtractedMethod { span, tokens })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodPair {
    pub name: String,
    pub param_count: usize,
    pub prior: Vec<Token>,
    pub updated: Vec<Token>,
}

impl MethodPair {
    pub fn method_key(&self) -> String {
        format!("{}/{}", self.name, self.param_count)
    }
}

/// Matches methods of two versions of a file by `(name, param_count)`.
///
/// Only matched methods whose token texts differ are emitted. Methods that
/// were added, deleted or renamed have no partner and are dropped, as are all
/// methods whose key occurs more than once on either side.
pub fn pair_methods(before: &[ExtractedMethod], after: &[ExtractedMethod]) -> Vec<MethodPair> {
    fn index(methods: &[ExtractedMethod]) -> (HashMap<(String, usize), usize>, HashSet<(String, usize)>) {
        let mut seen = HashMap::new();
        let mut dup = HashSet::new();
        for (i, m) in methods.iter().enumerate() {
            if seen.insert(m.span.key(), i).is_some() {
                dup.insert(m.span.key());
            }
        }
        (seen, dup)
    }
    let (before_idx, before_dup) = index(before);
    let (_, after_dup) = index(after);

    let mut pairs = Vec::new();
    let mut warned = HashSet::new();
    for m in after {
        let key = m.span.key();
        if before_dup.contains(&key) || after_dup.contains(&key) {
            if warned.insert(key.clone()) {
                warn!("ambiguous method {}/{} dropped", key.0, key.1);
            }
            continue;
        }
        let Some(&bi) = before_idx.get(&key) else {
            continue;
        };
        let prior = &before[bi];
        let same = prior.tokens.len() == m.tokens.len()
            && prior.tokens.iter().zip(&m.tokens).all(|(a, b)| a.text == b.text);
        if !same {
            pairs.push(MethodPair {
                name: key.0,
                param_count: key.1,
                prior: prior.tokens.clone(),
                updated: m.tokens.clone(),
            });
        }
    }
    pairs
}

/// Token-level Levenshtein distance; a substitution costs 1.
pub fn changed_token_count<S: AsRef<str>>(prior: &[S], updated: &[S]) -> usize {
    if prior.is_empty() {
        return updated.len();
    }
    let mut row: Vec<usize> = (0..=updated.len()).collect();
    for (i, a) in prior.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, b) in updated.iter().enumerate() {
            let sub = diag + usize::from(a.as_ref() != b.as_ref());
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[updated.len()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub max_method_tokens: usize,
    pub max_changed_tokens: usize,
    pub enabled: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            max_method_tokens: 50,
            max_changed_tokens: 5,
            enabled: true,
        }
    }
}

impl FilterPolicy {
    /// Strict bounds: both versions shorter than `max_method_tokens` and fewer
    /// than `max_changed_tokens` edits.
    pub fn keeps(&self, t: &MethodPairTriplet) -> bool {
        !self.enabled
            || (t.prior.len() < self.max_method_tokens
                && t.updated.len() < self.max_method_tokens
                && changed_token_count(&t.prior, &t.updated) < self.max_changed_tokens)
    }
}

pub fn filter_small(triplets: Vec<MethodPairTriplet>, policy: &FilterPolicy) -> Vec<MethodPairTriplet> {
    triplets.into_iter().filter(|t| policy.keeps(t)).collect()
}

/// Drops repeated `(prior, updated)` pairs, keeping the earliest commit.
/// Survivors keep their input order.
pub fn dedupe(triplets: Vec<MethodPairTriplet>) -> Vec<MethodPairTriplet> {
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    order.sort_by_key(|&i| triplets[i].commit_time);
    let mut seen = HashSet::new();
    let mut keep = vec![false; triplets.len()];
    for i in order {
        let t = &triplets[i];
        if seen.insert((&t.prior, &t.updated)) {
            keep[i] = true;
        }
    }
    triplets
        .into_iter()
        .zip(keep)
        .filter_map(|(t, k)| k.then_some(t))
        .collect()
}

fn git(repo: &Path, args: &[&str]) -> Result<Vec<u8>, MineError> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(args)
        .output()
        .map_err(|e| MineError::Repo {
            path: repo.display().to_string(),
            message: e.to_string(),
        })?;
    if !out.status.success() {
        return Err(MineError::Repo {
            path: repo.display().to_string(),
            message: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    Ok(out.stdout)
}

struct CommitInfo {
    hash: String,
    parent: Option<String>,
    time: DateTime<Utc>,
    message: String,
}

fn list_commits(repo: &Path) -> Result<Vec<CommitInfo>, MineError> {
    let raw = git(
        repo,
        &[
            "log",
            "--first-parent",
            "--no-merges",
            "--reverse",
            "--format=%H%x1f%P%x1f%ct%x1f%B%x1e",
        ],
    )?;
    let text = String::from_utf8_lossy(&raw);
    let mut commits = Vec::new();
    for record in text.split('\u{1e}') {
        let record = record.trim_start_matches('\n');
        if record.is_empty() {
            continue;
        }
        let fields: Vec<&str> = record.splitn(4, '\u{1f}').collect();
        if fields.len() != 4 {
            continue;
        }
        let secs: i64 = fields[2].trim().parse().map_err(|_| MineError::Repo {
            path: repo.display().to_string(),
            message: format!("bad commit time {:?}", fields[2]),
        })?;
        commits.push(CommitInfo {
            hash: fields[0].to_string(),
            parent: fields[1].split_whitespace().next().map(str::to_string),
            time: Utc.timestamp_opt(secs, 0).single().unwrap_or_default(),
            message: fields[3].trim_end().to_string(),
        });
    }
    Ok(commits)
}

/// `(old_path, new_path)` of modified or renamed `.java` files.
fn changed_java_files(repo: &Path, parent: &str, commit: &str) -> Result<Vec<(String, String)>, MineError> {
    let raw = git(
        repo,
        &["diff-tree", "-r", "-M", "-z", "--no-commit-id", "--name-status", parent, commit],
    )?;
    let text = String::from_utf8_lossy(&raw);
    let mut fields = text.split('\0').filter(|f| !f.is_empty());
    let mut files = Vec::new();
    while let Some(status) = fields.next() {
        let (old, new) = match status.as_bytes().first() {
            Some(b'R') | Some(b'C') => {
                let old = fields.next().unwrap_or_default();
                let new = fields.next().unwrap_or_default();
                (old, new)
            }
            _ => {
                let p = fields.next().unwrap_or_default();
                (p, p)
            }
        };
        if matches!(status.as_bytes().first(), Some(b'M') | Some(b'R')) && new.ends_with(".java") {
            files.push((old.to_string(), new.to_string()));
        }
    }
    Ok(files)
}

fn blob(repo: &Path, rev: &str, path: &str) -> Result<String, MineError> {
    let raw = git(repo, &["cat-file", "-p", &format!("{rev}:{path}")])?;
    String::from_utf8(raw).map_err(|_| MineError::Repo {
        path: format!("{rev}:{path}"),
        message: "not valid UTF-8".into(),
    })
}

pub fn repo_id_of(repo: &Path) -> String {
    repo.canonicalize()
        .unwrap_or_else(|_| repo.to_path_buf())
        .file_name()
        .map(|n| n.to_string_lossy().trim_end_matches(".git").to_string())
        .unwrap_or_else(|| repo.display().to_string())
}

/// Mines every non-merge first-parent commit with `since <= time <= until`.
pub fn mine_repo(
    repo_path: &Path,
    since: DateTime<Utc>,
    until: DateTime<Utc>,
) -> Result<Vec<MethodPairTriplet>, MineError> {
    if since > until {
        return Err(MineError::Range { since, until });
    }
    let inside = git(repo_path, &["rev-parse", "--is-inside-work-tree"])?;
    if String::from_utf8_lossy(&inside).trim() != "true" {
        return Err(MineError::Repo {
            path: repo_path.display().to_string(),
            message: "not a work tree".into(),
        });
    }
    let repo_id = repo_id_of(repo_path);
    let mut out = Vec::new();
    for commit in list_commits(repo_path)? {
        if commit.time < since || commit.time > until {
            continue;
        }
        let Some(parent) = &commit.parent else {
            continue;
        };
        for (old_path, new_path) in changed_java_files(repo_path, parent, &commit.hash)? {
            let versions = blob(repo_path, parent, &old_path)
                .and_then(|b| Ok((b, blob(repo_path, &commit.hash, &new_path)?)));
            let (before_src, after_src) = match versions {
                Ok(v) => v,
                Err(e) => {
                    warn!("{}: skipping {new_path}: {e}", commit.hash);
                    continue;
                }
            };
            let parsed = methods_of(&before_src).and_then(|b| Ok((b, methods_of(&after_src)?)));
            let (before, after) = match parsed {
                Ok(v) => v,
                Err(e) => {
                    warn!("{}: skipping {new_path}: {e}", commit.hash);
                    continue;
                }
            };
            for pair in pair_methods(&before, &after) {
                let mut t = MethodPairTriplet {
                    example_id: String::new(),
                    repo_id: repo_id.clone(),
                    commit_hash: commit.hash.clone(),
                    commit_time: commit.time,
                    message: commit.message.clone(),
                    file_path: new_path.clone(),
                    method: pair.method_key(),
                    prior: pair.prior.iter().map(|t| t.text.clone()).collect(),
                    updated: pair.updated.iter().map(|t| t.text.clone()).collect(),
                };
                t.example_id = t.derive_example_id();
                out.push(t);
            }
        }
        debug!("{repo_id}: mined {}", commit.hash);
    }
    sort_triplets(&mut out);
    Ok(out)
}

pub fn sort_triplets(triplets: &mut [MethodPairTriplet]) {
    triplets.sort_by(|a, b| {
        (a.commit_time, &a.file_path, &a.method, &a.repo_id, &a.commit_hash).cmp(&(
            b.commit_time,
            &b.file_path,
            &b.method,
            &b.repo_id,
            &b.commit_hash,
        ))
    });
}

/// Reads a newline-delimited list of repository paths or URLs. Blank lines
/// and `#` comments are ignored.
pub fn read_repo_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Resolves a repo list entry to a local work tree, cloning URLs into `cache`.
pub fn resolve_repo(entry: &str, base: &Path, cache: &Path) -> Result<PathBuf, MineError> {
    let is_url = entry.contains("://") || entry.starts_with("git@");
    if !is_url {
        let p = Path::new(entry);
        return Ok(if p.is_absolute() { p.to_path_buf() } else { base.join(p) });
    }
    let name: String = entry
        .trim_end_matches('/')
        .trim_end_matches(".git")
        .rsplit(['/', ':'])
        .next()
        .unwrap_or("repo")
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let dest = cache.join(name);
    if !dest.exists() {
        std::fs::create_dir_all(cache).map_err(|e| MineError::Repo {
            path: cache.display().to_string(),
            message: e.to_string(),
        })?;
        let status = Command::new("git")
            .args(["clone", "--quiet", entry])
            .arg(&dest)
            .status()
            .map_err(|e| MineError::Repo {
                path: entry.to_string(),
                message: e.to_string(),
            })?;
        if !status.success() {
            return Err(MineError::Repo {
                path: entry.to_string(),
                message: "git clone failed".into(),
            });
        }
    }
    Ok(dest)
}

/// Mines several repositories on up to `jobs` workers and merges the output
/// into one globally sorted list.
pub fn mine_all(
    repos: &[PathBuf],
    since: DateTime<Utc>,
    until: DateTime<Utc>,
    jobs: usize,
) -> Result<Vec<MethodPairTriplet>, MineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| MineError::Repo {
            path: String::new(),
            message: e.to_string(),
        })?;
    let per_repo: Vec<Result<Vec<MethodPairTriplet>, MineError>> =
        pool.install(|| repos.par_iter().map(|r| mine_repo(r, since, until)).collect());
    let mut all = Vec::new();
    for r in per_repo {
        all.extend(r?);
    }
    sort_triplets(&mut all);
    Ok(all)
}

//! Heuristic update-type labels from commit messages.
//!
//! The keyword table is plain text (see `data/update_types.txt`); the
//! built-in copy is used unless a custom table is loaded.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TABLE: &str = include_str!("../data/update_types.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UpdateType {
    FixingBug,
    AddingNewFeature,
    RefactoringMethod,
    AdjustingBuild,
    MaintainingCompatibility,
    ImprovingPerformance,
    OptimizingTestCase,
    AlteringDocumentation,
    Other,
}

impl UpdateType {
    pub const ALL: [UpdateType; 9] = [
        UpdateType::FixingBug,
        UpdateType::AddingNewFeature,
        UpdateType::RefactoringMethod,
        UpdateType::AdjustingBuild,
        UpdateType::MaintainingCompatibility,
        UpdateType::ImprovingPerformance,
        UpdateType::OptimizingTestCase,
        UpdateType::AlteringDocumentation,
        UpdateType::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            UpdateType::FixingBug => "Fixing Bug",
            UpdateType::AddingNewFeature => "Adding New Feature",
            UpdateType::RefactoringMethod => "Refactoring Method",
            UpdateType::AdjustingBuild => "Adjusting Build",
            UpdateType::MaintainingCompatibility => "Maintaining Compatibility",
            UpdateType::ImprovingPerformance => "Improving Performance",
            UpdateType::OptimizingTestCase => "Optimizing Test Case",
            UpdateType::AlteringDocumentation => "Altering Documentation",
            UpdateType::Other => "Other",
        }
    }
}

impl fmt::Display for UpdateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for UpdateType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        UpdateType::ALL
            .into_iter()
            .find(|t| format!("{t:?}") == s)
            .ok_or(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("keyword table line {line}: {message}")]
pub struct TableError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RuleKind {
    Prefix,
    Word,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Rule {
    update_type: UpdateType,
    kind: RuleKind,
    keywords: Vec<String>,
}

/// Ordered keyword rules; the first matching rule decides the type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classifier {
    rules: Vec<Rule>,
}

impl Default for Classifier {
    fn default() -> Self {
        Self::from_table(DEFAULT_TABLE).expect("built-in keyword table parses")
    }
}

impl Classifier {
    pub fn from_table(text: &str) -> Result<Self, TableError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| TableError { line: i + 1, message };
            let mut parts = line.splitn(3, char::is_whitespace);
            let ty = parts.next().unwrap_or_default();
            let update_type: UpdateType = ty
                .parse()
                .map_err(|_| err(format!("unknown update type {ty:?}")))?;
            let kind = match parts.next() {
                Some("prefix") => RuleKind::Prefix,
                Some("word") => RuleKind::Word,
                other => return Err(err(format!("expected `prefix` or `word`, got {other:?}"))),
            };
            let keywords: Vec<String> = parts
                .next()
                .unwrap_or_default()
                .split(',')
                .map(|k| k.trim().to_lowercase())
                .filter(|k| !k.is_empty())
                .collect();
            if keywords.is_empty() {
                return Err(err("rule without keywords".into()));
            }
            rules.push(Rule {
                update_type,
                kind,
                keywords,
            });
        }
        // conventional-commit prefixes always take precedence over keywords
        rules.sort_by_key(|r| r.kind == RuleKind::Word);
        Ok(Self { rules })
    }

    pub fn classify(&self, message: &str) -> UpdateType {
        let msg = message.trim().to_lowercase();
        for rule in &self.rules {
            let hit = rule.keywords.iter().any(|k| match rule.kind {
                RuleKind::Prefix => msg
                    .strip_prefix(k.as_str())
                    .is_some_and(|rest| rest.starts_with([':', '(', '!'])),
                RuleKind::Word => word_start_match(&msg, k),
            });
            if hit {
                return rule.update_type;
            }
        }
        UpdateType::Other
    }
}

/// True when `keyword` occurs in `text` starting at a word boundary.
fn word_start_match(text: &str, keyword: &str) -> bool {
    text.match_indices(keyword).any(|(i, _)| {
        text[..i]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric())
    })
}

pub fn classify(message: &str) -> UpdateType {
    thread_local! {
        static DEFAULT: Classifier = Classifier::default();
    }
    DEFAULT.with(|c| c.classify(message))
}

//! Identifier and literal abstraction: every identifier or literal in a
//! method pair is replaced by a typed, reusable ID such as `VAR_1` or
//! `STRING_2`, and the mapping is kept so generated output can be turned
//! back into real code.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::java::{Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbstractionError {
    #[error("no mapping for {0}")]
    UnmappableToken(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    Var,
    Method,
    Type,
    String,
    Char,
    Int,
    Float,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Var,
        Category::Method,
        Category::Type,
        Category::String,
        Category::Char,
        Category::Int,
        Category::Float,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Category::Var => "VAR",
            Category::Method => "METHOD",
            Category::Type => "TYPE",
            Category::String => "STRING",
            Category::Char => "CHAR",
            Category::Int => "INT",
            Category::Float => "FLOAT",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Category::ALL.into_iter().find(|c| c.prefix() == s).ok_or(())
    }
}

/// Splits `CAT_N` into its category and index.
pub fn parse_id(token: &str) -> Option<(Category, u32)> {
    let (cat, n) = token.rsplit_once('_')?;
    let cat = cat.parse().ok()?;
    if n.is_empty() || n.starts_with('0') || !n.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((cat, n.parse().ok()?))
}

/// Bidirectional mapping between original texts and abstract IDs for one pair.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractionMap {
    forward: BTreeMap<String, String>,
    backward: BTreeMap<String, String>,
    next_index: BTreeMap<Category, u32>,
}

impl AbstractionMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn id_of(&self, original: &str) -> Option<&str> {
        self.forward.get(original).map(String::as_str)
    }

    pub fn original_of(&self, id: &str) -> Option<&str> {
        self.backward.get(id).map(String::as_str)
    }

    /// Next index per category, i.e. one more than the highest assigned.
    pub fn next_index(&self, cat: Category) -> u32 {
        self.next_index.get(&cat).copied().unwrap_or(1)
    }

    /// `ID -> original` entries, the form stored next to abstracted corpora.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.backward
    }

    /// Rebuilds a map from stored `ID -> original` entries.
    pub fn from_entries(entries: BTreeMap<String, String>) -> Option<Self> {
        let mut map = Self::new();
        for (id, original) in entries {
            let (cat, n) = parse_id(&id)?;
            if map.forward.insert(original.clone(), id.clone()).is_some() {
                return None;
            }
            let next = map.next_index.entry(cat).or_insert(1);
            *next = (*next).max(n + 1);
            map.backward.insert(id, original);
        }
        Some(map)
    }

    fn intern(&mut self, original: &str, cat: Category) -> String {
        if let Some(id) = self.forward.get(original) {
            return id.clone();
        }
        let next = self.next_index.entry(cat).or_insert(1);
        let id = format!("{}_{}", cat.prefix(), next);
        *next += 1;
        self.forward.insert(original.to_string(), id.clone());
        self.backward.insert(id.clone(), original.to_string());
        id
    }
}

fn starts_uppercase(text: &str) -> bool {
    text.chars().next().is_some_and(char::is_uppercase)
}

/// Best-effort category of the identifier at `i`.
fn classify_identifier(tokens: &[Token], i: usize) -> Category {
    let next = tokens.get(i + 1);
    let next_text = next.map(|t| t.text.as_str());
    if next_text == Some("(") {
        return Category::Method;
    }
    if !starts_uppercase(&tokens[i].text) {
        return Category::Var;
    }
    let prev_text = i.checked_sub(1).map(|p| tokens[p].text.as_str());
    let type_position = next.is_some_and(|t| t.kind == TokenKind::Identifier)
        || matches!(prev_text, Some("new") | Some("<"))
        || next_text == Some(">")
        || matches!(next_text, Some("<") | Some("...") | Some("."))
        || (next_text == Some("[") && tokens.get(i + 2).is_some_and(|t| t.text == "]"))
        || (prev_text == Some("(") && next_text == Some(")"));
    if type_position {
        Category::Type
    } else {
        Category::Var
    }
}

fn category_of(tokens: &[Token], i: usize) -> Option<Category> {
    match tokens[i].kind {
        TokenKind::Identifier => Some(classify_identifier(tokens, i)),
        TokenKind::Annotation => Some(Category::Type),
        TokenKind::StringLiteral => Some(Category::String),
        TokenKind::CharLiteral => Some(Category::Char),
        TokenKind::IntLiteral => Some(Category::Int),
        TokenKind::FloatLiteral => Some(Category::Float),
        TokenKind::Keyword | TokenKind::Operator | TokenKind::Punctuation => None,
    }
}

fn abstract_into(tokens: &[Token], map: &mut AbstractionMap) -> Vec<String> {
    (0..tokens.len())
        .map(|i| match category_of(tokens, i) {
            Some(cat) => map.intern(&tokens[i].text, cat),
            None => tokens[i].text.clone(),
        })
        .collect()
}

/// Abstracts a pair with one shared map, scanning `prior` then `updated`.
/// An identifier keeps the category of its first occurrence.
pub fn abstract_pair(prior: &[Token], updated: &[Token]) -> (Vec<String>, Vec<String>, AbstractionMap) {
    let mut map = AbstractionMap::new();
    let a = abstract_into(prior, &mut map);
    let b = abstract_into(updated, &mut map);
    (a, b, map)
}

/// Abstracts a single sequence; used at inference time when only the prior
/// version is known.
pub fn abstract_tokens(tokens: &[Token]) -> (Vec<String>, AbstractionMap) {
    let mut map = AbstractionMap::new();
    let out = abstract_into(tokens, &mut map);
    (out, map)
}

/// Replaces every `CAT_N` token through the map. Other tokens pass through.
pub fn deabstract<S: AsRef<str>>(abs_tokens: &[S], map: &AbstractionMap) -> Result<Vec<String>, AbstractionError> {
    abs_tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if parse_id(t).is_some() {
                map.original_of(t)
                    .map(str::to_string)
                    .ok_or_else(|| AbstractionError::UnmappableToken(t.to_string()))
            } else {
                Ok(t.to_string())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::java::lex;

    fn toks(src: &str) -> Vec<Token> {
        lex(src).unwrap()
    }

    #[test]
    fn first_variable_is_var_1() {
        let (a, _, map) = abstract_pair(&toks("int a = b + a ;"), &[]);
        assert_eq!(a.join(" "), "int VAR_1 = VAR_2 + VAR_1 ;");
        assert_eq!(map.next_index(Category::Var), 3);
    }

    #[test]
    fn keywords_only_is_untouched() {
        let (a, b, map) = abstract_pair(&toks("return ;"), &toks("return ;"));
        assert_eq!(a, vec!["return", ";"]);
        assert_eq!(b, a);
        assert!(map.is_empty());
    }

    #[test]
    fn categories() {
        let src = "@Override List<Item> load(String path) { Item x = new Item(\"a\", 'c', 3, 2.5f); \
                   return (Item) helper.fetch(path); }";
        let (a, _, _) = abstract_pair(&toks(src), &[]);
        assert_eq!(
            a.join(" "),
            "TYPE_1 TYPE_2 < TYPE_3 > METHOD_1 ( TYPE_4 VAR_1 ) { TYPE_3 VAR_2 = new TYPE_3 ( STRING_1 , \
             CHAR_1 , INT_1 , FLOAT_1 ) ; return ( TYPE_3 ) VAR_3 . METHOD_2 ( VAR_1 ) ; }"
        );
    }

    #[test]
    fn shared_map_across_versions() {
        let prior = toks("void f ( ) { g ( x ) ; }");
        let updated = toks("void f ( boolean y ) { g ( x , y ) ; }");
        let (a, b, map) = abstract_pair(&prior, &updated);
        assert_eq!(a.join(" "), "void METHOD_1 ( ) { METHOD_2 ( VAR_1 ) ; }");
        assert_eq!(b.join(" "), "void METHOD_1 ( boolean VAR_2 ) { METHOD_2 ( VAR_1 , VAR_2 ) ; }");
        assert_eq!(deabstract(&b, &map).unwrap(), updated.iter().map(|t| t.text.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_id_is_unmappable() {
        let err = deabstract(&["[", "VAR_9", "]"], &AbstractionMap::new()).unwrap_err();
        assert_eq!(err, AbstractionError::UnmappableToken("VAR_9".into()));
    }

    #[test]
    fn id_parsing() {
        assert_eq!(parse_id("VAR_12"), Some((Category::Var, 12)));
        assert_eq!(parse_id("STRING_1"), Some((Category::String, 1)));
        assert_eq!(parse_id("VAR_0"), None);
        assert_eq!(parse_id("VAR_01"), None);
        assert_eq!(parse_id("LOCAL_1"), None);
        assert_eq!(parse_id("VAR_"), None);
    }

    #[test]
    fn entries_roundtrip() {
        let (_, _, map) = abstract_pair(&toks("int a = b ( \"s\" ) ;"), &[]);
        let back = AbstractionMap::from_entries(map.entries().clone()).unwrap();
        assert_eq!(back, map);
    }
}

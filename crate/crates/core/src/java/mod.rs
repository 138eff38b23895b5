//! A lightweight Java front end: comment stripping, a maximal-munch lexer and
//! a heuristic method locator. There is no generics-aware parsing; angle
//! brackets are plain operators.

mod comments;
mod lexer;
mod methods;

use thiserror::Error;

pub use comments::strip_comments;
pub use lexer::{is_keyword, lex, token_kind, tokens_from_texts, Token, TokenKind, KEYWORDS};
pub use methods::{extract_methods, MethodSpan};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JavaError {
    #[error("unterminated block comment starting at byte {offset}")]
    UnterminatedComment { offset: usize },
    #[error("no token starts at byte {offset}")]
    Lex { offset: usize },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
}

/// Joins token texts with single spaces.
pub fn join_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(|t| t.as_ref()).collect::<Vec<_>>().join(" ")
}

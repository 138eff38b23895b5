use serde::{Deserialize, Serialize};

use super::JavaError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Keyword,
    Identifier,
    IntLiteral,
    FloatLiteral,
    StringLiteral,
    CharLiteral,
    Operator,
    Punctuation,
    Annotation,
}

impl TokenKind {
    pub fn is_literal(self) -> bool {
        matches!(
            self,
            TokenKind::IntLiteral
                | TokenKind::FloatLiteral
                | TokenKind::StringLiteral
                | TokenKind::CharLiteral
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub byte_offset: usize,
}

impl Token {
    pub fn is(&self, text: &str) -> bool {
        self.text == text
    }
}

/// Reserved words plus the literal keywords `true`, `false` and `null`.
pub const KEYWORDS: &[&str] = &[
    "abstract",
    "assert",
    "boolean",
    "break",
    "byte",
    "case",
    "catch",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extends",
    "false",
    "final",
    "finally",
    "float",
    "for",
    "goto",
    "if",
    "implements",
    "import",
    "instanceof",
    "int",
    "interface",
    "long",
    "native",
    "new",
    "null",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "short",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "true",
    "try",
    "void",
    "volatile",
    "while",
];

/// Operators ordered longest first so the first hit is the maximal munch.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=",
    ">=", "+=", "-=", "*=", "/=", "&=", "|=", "^=", "%=", "<<", ">>", "=", ">", "<", "!", "~",
    "?", ":", "+", "-", "*", "/", "&", "|", "^", "%",
];

const PUNCTUATION: &[u8] = b"(){}[];,.";

pub fn is_keyword(text: &str) -> bool {
    KEYWORDS.binary_search(&text).is_ok()
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c == '$' || c.is_alphanumeric()
}

/// Tokenizes comment-free Java source with maximal munch.
pub fn lex(source: &str) -> Result<Vec<Token>, JavaError> {
    let mut lexer = Lexer { src: source, pos: 0 };
    let mut tokens = Vec::new();
    while let Some(tok) = lexer.next_token()? {
        tokens.push(tok);
    }
    Ok(tokens)
}

/// Recovers the kind of a single token text, as stored in JSONL corpora.
pub fn token_kind(text: &str) -> Option<TokenKind> {
    match lex(text) {
        Ok(toks) if toks.len() == 1 && toks[0].text == text => Some(toks[0].kind),
        _ => None,
    }
}

/// Re-lexes each stored token text on its own. Texts that are not a single
/// valid token fall back to `Identifier` so downstream stages stay total.
pub fn tokens_from_texts<S: AsRef<str>>(texts: &[S]) -> Vec<Token> {
    let mut offset = 0;
    texts
        .iter()
        .map(|t| {
            let text = t.as_ref();
            let tok = Token {
                kind: token_kind(text).unwrap_or(TokenKind::Identifier),
                text: text.to_string(),
                byte_offset: offset,
            };
            offset += text.len() + 1;
            tok
        })
        .collect()
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek_char(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn byte_at(&self, i: usize) -> Option<u8> {
        self.src.as_bytes().get(i).copied()
    }

    fn next_token(&mut self) -> Result<Option<Token>, JavaError> {
        while let Some(c) = self.peek_char() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        let start = self.pos;
        let Some(c) = self.peek_char() else {
            return Ok(None);
        };

        let kind = if is_ident_start(c) {
            self.eat_ident();
            if is_keyword(&self.src[start..self.pos]) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            }
        } else if c.is_ascii_digit()
            || (c == '.' && self.byte_at(start + 1).is_some_and(|b| b.is_ascii_digit()))
        {
            self.eat_number()
        } else if c == '"' {
            self.eat_string(start)?;
            TokenKind::StringLiteral
        } else if c == '\'' {
            self.eat_quoted(b'\'', start)?;
            TokenKind::CharLiteral
        } else if c == '@' && self.rest()[1..].chars().next().is_some_and(is_ident_start) {
            self.pos += 1;
            self.eat_ident();
            // qualified annotation names such as `@android.annotation.TargetApi`
            while self.byte_at(self.pos) == Some(b'.')
                && self.src[self.pos + 1..].chars().next().is_some_and(is_ident_start)
            {
                self.pos += 1;
                self.eat_ident();
            }
            TokenKind::Annotation
        } else if let Some(op) = OPERATORS.iter().find(|op| self.rest().starts_with(**op)) {
            self.pos += op.len();
            TokenKind::Operator
        } else if c.is_ascii() && PUNCTUATION.contains(&(c as u8)) {
            self.pos += 1;
            TokenKind::Punctuation
        } else {
            return Err(JavaError::Lex { offset: start });
        };

        Ok(Some(Token {
            kind,
            text: self.src[start..self.pos].to_string(),
            byte_offset: start,
        }))
    }

    fn eat_ident(&mut self) {
        let mut chars = self.rest().char_indices();
        let mut end = self.rest().len();
        chars.next();
        for (i, c) in chars {
            if !is_ident_continue(c) {
                end = i;
                break;
            }
        }
        self.pos += end;
    }

    fn eat_digits(&mut self, allowed: impl Fn(u8) -> bool) {
        while let Some(b) = self.byte_at(self.pos) {
            if allowed(b) || b == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn eat_number(&mut self) -> TokenKind {
        let bytes = self.src.as_bytes();
        let start = self.pos;
        if bytes[start] == b'0' && matches!(self.byte_at(start + 1), Some(b'x' | b'X')) {
            self.pos += 2;
            self.eat_digits(|b| b.is_ascii_hexdigit());
            return self.int_suffix();
        }
        if bytes[start] == b'0' && matches!(self.byte_at(start + 1), Some(b'b' | b'B')) {
            self.pos += 2;
            self.eat_digits(|b| b == b'0' || b == b'1');
            return self.int_suffix();
        }

        let mut float = false;
        self.eat_digits(|b| b.is_ascii_digit());
        if self.byte_at(self.pos) == Some(b'.')
            && self
                .byte_at(self.pos + 1)
                .is_none_or(|b| !is_ident_start(b as char) || matches!(b, b'e' | b'E' | b'f' | b'F' | b'd' | b'D'))
            && self.byte_at(self.pos + 1) != Some(b'.')
        {
            float = true;
            self.pos += 1;
            self.eat_digits(|b| b.is_ascii_digit());
        }
        if matches!(self.byte_at(self.pos), Some(b'e' | b'E')) {
            let mut look = self.pos + 1;
            if matches!(self.byte_at(look), Some(b'+' | b'-')) {
                look += 1;
            }
            if self.byte_at(look).is_some_and(|b| b.is_ascii_digit()) {
                float = true;
                self.pos = look;
                self.eat_digits(|b| b.is_ascii_digit());
            }
        }
        if matches!(self.byte_at(self.pos), Some(b'f' | b'F' | b'd' | b'D')) {
            self.pos += 1;
            return TokenKind::FloatLiteral;
        }
        if float {
            TokenKind::FloatLiteral
        } else {
            self.int_suffix()
        }
    }

    fn int_suffix(&mut self) -> TokenKind {
        if matches!(self.byte_at(self.pos), Some(b'l' | b'L')) {
            self.pos += 1;
        }
        TokenKind::IntLiteral
    }

    fn eat_string(&mut self, start: usize) -> Result<(), JavaError> {
        if self.rest().starts_with("\"\"\"") {
            // text block
            match self.src[self.pos + 3..].find("\"\"\"") {
                Some(i) => {
                    self.pos += 3 + i + 3;
                    Ok(())
                }
                None => Err(JavaError::Lex { offset: start }),
            }
        } else {
            self.eat_quoted(b'"', start)
        }
    }

    fn eat_quoted(&mut self, quote: u8, start: usize) -> Result<(), JavaError> {
        let bytes = self.src.as_bytes();
        let mut i = self.pos + 1;
        while i < bytes.len() {
            match bytes[i] {
                b'\\' => i += 2,
                b'\n' => break,
                b if b == quote => {
                    self.pos = i + 1;
                    return Ok(());
                }
                _ => i += 1,
            }
        }
        Err(JavaError::Lex { offset: start })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds_texts(src: &str) -> Vec<(TokenKind, String)> {
        lex(src).unwrap().into_iter().map(|t| (t.kind, t.text)).collect()
    }

    #[test]
    fn keyword_table_is_sorted() {
        let mut sorted = KEYWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, KEYWORDS);
    }

    #[test]
    fn compound_assignment_is_one_operator() {
        use TokenKind::*;
        assert_eq!(
            kinds_texts("a+=1;"),
            vec![
                (Identifier, "a".into()),
                (Operator, "+=".into()),
                (IntLiteral, "1".into()),
                (Punctuation, ";".into()),
            ]
        );
    }

    #[test]
    fn return_statement_from_android_snippet() {
        use TokenKind::*;
        assert_eq!(
            kinds_texts("return sDefaultContactImage;"),
            vec![
                (Keyword, "return".into()),
                (Identifier, "sDefaultContactImage".into()),
                (Punctuation, ";".into()),
            ]
        );
    }

    #[test]
    fn literals() {
        use TokenKind::*;
        let toks = kinds_texts(r#"0x1F 10L 3.5f 1e9 .5 2. 'a' '\'' "s\"q" 1_000"#);
        let kinds: Vec<_> = toks.iter().map(|t| t.0).collect();
        assert_eq!(
            kinds,
            vec![
                IntLiteral, IntLiteral, FloatLiteral, FloatLiteral, FloatLiteral, FloatLiteral,
                CharLiteral, CharLiteral, StringLiteral, IntLiteral
            ]
        );
    }

    #[test]
    fn member_access_on_int_is_not_float() {
        // `1.toString` never occurs in Java, but `arr.length` after a digit-ending
        // identifier must split.
        let toks = kinds_texts("a1.b");
        assert_eq!(toks.len(), 3);
    }

    #[test]
    fn annotations_and_shifts() {
        use TokenKind::*;
        let toks = kinds_texts("@Override List<List<String>> x >>>= 2");
        assert_eq!(toks[0], (Annotation, "@Override".into()));
        assert!(toks.contains(&(Operator, ">>".into())));
        assert!(toks.contains(&(Operator, ">>>=".into())));
    }

    #[test]
    fn bad_byte_reports_offset() {
        assert_eq!(lex("int a = #;"), Err(JavaError::Lex { offset: 8 }));
        assert_eq!(lex("\"open"), Err(JavaError::Lex { offset: 0 }));
    }

    #[test]
    fn token_kind_of_single_texts() {
        assert_eq!(token_kind("+="), Some(TokenKind::Operator));
        assert_eq!(token_kind("\"a b\""), Some(TokenKind::StringLiteral));
        assert_eq!(token_kind("a b"), None);
    }
}

use serde::{Deserialize, Serialize};

use super::lexer::{lex, Token, TokenKind};
use super::JavaError;

/// A method (or constructor) located in comment-free source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpan {
    pub name: String,
    /// Header text from the first annotation/modifier up to the opening brace.
    pub signature_text: String,
    /// Byte offset of the first header token.
    pub start: usize,
    /// Byte offset of the opening `{`.
    pub body_start: usize,
    /// Byte offset one past the closing `}`.
    pub body_end: usize,
    pub param_count: usize,
}

impl MethodSpan {
    /// `(name, param_count)`, the key used to match methods across versions.
    pub fn key(&self) -> (String, usize) {
        (self.name.clone(), self.param_count)
    }

    pub fn body<'s>(&self, source: &'s str) -> &'s str {
        &source[self.body_start..self.body_end]
    }

    /// Full method text: header followed by body.
    pub fn text<'s>(&self, source: &'s str) -> &'s str {
        &source[self.start..self.body_end]
    }
}

const MODIFIERS: &[&str] = &[
    "public",
    "private",
    "protected",
    "static",
    "final",
    "abstract",
    "synchronized",
    "native",
    "strictfp",
    "default",
    "transient",
    "volatile",
];

const TYPE_KEYWORDS: &[&str] = &[
    "void", "boolean", "byte", "char", "short", "int", "long", "float", "double",
];

/// True when the tokens declare a class, interface, enum, record or annotation type.
fn declares_type(tokens: &[Token]) -> bool {
    tokens.iter().enumerate().any(|(i, t)| match t.kind {
        TokenKind::Keyword => matches!(t.text.as_str(), "class" | "interface" | "enum"),
        TokenKind::Annotation => t.text == "@interface",
        // `record` is a contextual keyword
        TokenKind::Identifier => {
            t.text == "record"
                && tokens.get(i + 1).is_some_and(|n| n.kind == TokenKind::Identifier)
        }
        _ => false,
    })
}

/// Finds methods whose header looks like
/// `[annotations] [modifiers] [type] name ( params ) [throws ...] {`.
///
/// Member classes are descended into; method bodies, initializers and
/// anonymous classes are not. Spans come back ordered by `body_start`.
pub fn extract_methods(source: &str) -> Result<Vec<MethodSpan>, JavaError> {
    let tokens = lex(source)?;
    let matching = match_braces(&tokens)?;
    let mut methods = Vec::new();
    scan_members(source, &tokens, &matching, 0, tokens.len(), &mut methods);
    methods.sort_by_key(|m| m.body_start);
    Ok(methods)
}

/// For every `{` token index, the index of its closing `}`.
fn match_braces(tokens: &[Token]) -> Result<Vec<usize>, JavaError> {
    let mut matching = vec![usize::MAX; tokens.len()];
    let mut stack = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if t.kind != TokenKind::Punctuation {
            continue;
        }
        match t.text.as_str() {
            "{" => stack.push(i),
            "}" => {
                let open = stack.pop().ok_or(JavaError::Parse {
                    offset: t.byte_offset,
                    message: "unmatched '}'".into(),
                })?;
                matching[open] = i;
            }
            _ => {}
        }
    }
    if let Some(open) = stack.pop() {
        return Err(JavaError::Parse {
            offset: tokens[open].byte_offset,
            message: "unclosed '{'".into(),
        });
    }
    Ok(matching)
}

/// Scans a class-body-like region `[from, to)`.
fn scan_members(
    source: &str,
    tokens: &[Token],
    matching: &[usize],
    from: usize,
    to: usize,
    out: &mut Vec<MethodSpan>,
) {
    let mut i = from;
    // index of the first token of the current member declaration
    let mut member_start = from;
    while i < to {
        let tok = &tokens[i];
        if tok.kind == TokenKind::Punctuation && tok.text == ";" {
            i += 1;
            member_start = i;
            continue;
        }
        if tok.kind == TokenKind::Punctuation && tok.text == "}" {
            i += 1;
            member_start = i;
            continue;
        }
        if tok.kind == TokenKind::Punctuation && tok.text == "{" {
            let close = matching[i];
            if let Some(span) = method_header(source, tokens, member_start, i, close) {
                out.push(span);
            } else if is_type_declaration(&tokens[member_start..i]) {
                scan_members(source, tokens, matching, i + 1, close, out);
            }
            i = close + 1;
            member_start = i;
            continue;
        }
        i += 1;
    }
}

fn is_type_declaration(header: &[Token]) -> bool {
    // `new Foo() { ... }` inside a field initializer is an anonymous class
    if header.iter().any(|t| t.text == "new" || t.text == "=") {
        return false;
    }
    declares_type(header)
}

/// Checks whether `tokens[start..brace]` is a method header and builds its span.
fn method_header(
    source: &str,
    tokens: &[Token],
    start: usize,
    brace: usize,
    close: usize,
) -> Option<MethodSpan> {
    let header = &tokens[start..brace];
    if declares_type(header) || header.iter().any(|t| matches!(t.text.as_str(), "=" | "new" | "->")) {
        return None;
    }

    // Drop a trailing `throws A, B.C` clause.
    let mut end = header.len();
    if let Some(pos) = header.iter().rposition(|t| t.text == "throws") {
        let tail_ok = header[pos + 1..].iter().all(|t| {
            t.kind == TokenKind::Identifier || matches!(t.text.as_str(), "," | "." | "<" | ">")
        });
        if !tail_ok || pos + 1 == header.len() {
            return None;
        }
        end = pos;
    }
    let head = &header[..end];
    if head.last()?.text != ")" {
        return None;
    }

    // Find the `(` matching the last `)`.
    let mut depth = 0usize;
    let mut open = None;
    for (j, t) in head.iter().enumerate().rev() {
        match t.text.as_str() {
            ")" => depth += 1,
            "(" => {
                depth -= 1;
                if depth == 0 {
                    open = Some(j);
                    break;
                }
            }
            _ => {}
        }
    }
    let open = open?;
    if open == 0 {
        return None;
    }
    let name_tok = &head[open - 1];
    if name_tok.kind != TokenKind::Identifier {
        return None;
    }

    // Everything before the name must look like annotations, modifiers and a type.
    let prefix = &head[..open - 1];
    if !prefix_is_header(prefix) {
        return None;
    }

    let params = &head[open + 1..head.len() - 1];
    let first = head.first()?;
    let body_start = tokens[brace].byte_offset;
    Some(MethodSpan {
        name: name_tok.text.clone(),
        signature_text: source[first.byte_offset..body_start].trim_end().to_string(),
        start: first.byte_offset,
        body_start,
        body_end: tokens[close].byte_offset + 1,
        param_count: count_params(params),
    })
}

fn prefix_is_header(prefix: &[Token]) -> bool {
    let mut i = 0;
    let mut paren_depth = 0usize;
    while i < prefix.len() {
        let t = &prefix[i];
        match t.kind {
            TokenKind::Annotation => {}
            TokenKind::Keyword => {
                let text = t.text.as_str();
                // `extends`/`super` appear in generic bounds such as `<R extends Comparable<R>>`
                let bound = matches!(text, "extends" | "super");
                if !bound && !TYPE_KEYWORDS.contains(&text) && !MODIFIERS.contains(&text) && paren_depth == 0 {
                    return false;
                }
            }
            TokenKind::Identifier => {}
            TokenKind::Punctuation => match t.text.as_str() {
                // annotation arguments
                "(" if i > 0 && prefix[i - 1].kind == TokenKind::Annotation => paren_depth += 1,
                "(" if paren_depth > 0 => paren_depth += 1,
                ")" if paren_depth > 0 => paren_depth -= 1,
                "[" | "]" | "." | "," => {}
                _ if paren_depth > 0 => {}
                _ => return false,
            },
            TokenKind::Operator => match t.text.as_str() {
                "<" | ">" | ">>" | ">>>" | "?" | "&" => {}
                _ if paren_depth > 0 => {}
                _ => return false,
            },
            _ if paren_depth > 0 => {}
            _ => return false,
        }
        i += 1;
    }
    paren_depth == 0
}

fn count_params(params: &[Token]) -> usize {
    if params.is_empty() {
        return 0;
    }
    let mut count = 1;
    let mut parens = 0i32;
    let mut angles = 0i32;
    for t in params {
        match t.text.as_str() {
            "(" | "[" | "{" => parens += 1,
            ")" | "]" | "}" => parens -= 1,
            "<" => angles += 1,
            ">" => angles -= 1,
            ">>" => angles -= 2,
            ">>>" => angles -= 3,
            "," if parens == 0 && angles <= 0 => count += 1,
            _ => {}
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONTACT_IMAGE: &str = "private Drawable getDefaultContactImage() {
    if (sDefaultContactImage == null)
        sDefaultContactImage = ResourcesCompat
            .getDrawable(getContext().getResources(),
            R.drawable.ic_default_contact, getContext().getTheme());
    return sDefaultContactImage;
}";

    #[test]
    fn android_snippet_has_one_method() {
        let spans = extract_methods(&format!("class C {{ {CONTACT_IMAGE} }}")).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].name, "getDefaultContactImage");
        assert_eq!(spans[0].param_count, 0);
        assert_eq!(spans[0].signature_text, "private Drawable getDefaultContactImage()");

        // bare snippets without an enclosing class work as well
        let spans = extract_methods(CONTACT_IMAGE).unwrap();
        assert_eq!(spans.len(), 1);
    }

    #[test]
    fn empty_class() {
        assert!(extract_methods("class A {}").unwrap().is_empty());
    }

    #[test]
    fn constructors_annotations_generics_throws() {
        let src = "public class A<T> extends B implements C {
            private final Map<String, List<T>> m = new HashMap<>();
            static { init(); }
            @Inject public A(Context ctx, @Named(\"x\") Map<String, Integer> cfg) { super(ctx); }
            @Override
            public <R extends Comparable<R>> List<R> sort(List<R> in) throws IOException, Foo.Bar {
                Runnable r = () -> { run(); };
                Object o = new Object() { public String toString() { return \"\"; } };
                return in;
            }
            int[] values(int... xs) { return xs; }
        }";
        let spans = extract_methods(src).unwrap();
        let names: Vec<_> = spans.iter().map(|s| (s.name.as_str(), s.param_count)).collect();
        assert_eq!(names, vec![("A", 2), ("sort", 1), ("values", 1)]);
        assert!(spans[0].signature_text.starts_with("@Inject public A("));
        assert!(spans[1].signature_text.starts_with("@Override"));
        assert!(spans[1].signature_text.ends_with("Foo.Bar"));
    }

    #[test]
    fn control_flow_is_not_a_method() {
        let src = "void f() { if (a) { b(); } while (c) { d(); } synchronized (l) { } }";
        let spans = extract_methods(src).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].name, "f");
    }

    #[test]
    fn unbalanced_braces() {
        assert!(matches!(
            extract_methods("class A { void f() { }"),
            Err(JavaError::Parse { .. })
        ));
        assert!(matches!(
            extract_methods("class A { } }"),
            Err(JavaError::Parse { .. })
        ));
    }

    #[test]
    fn interface_and_enum_members() {
        let src = "interface I { void a(); default int b(int x) { return x; } }
                   enum E { X, Y; int c() { return 1; } }";
        let spans = extract_methods(src).unwrap();
        let names: Vec<_> = spans.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, vec!["b", "c"]);
    }
}

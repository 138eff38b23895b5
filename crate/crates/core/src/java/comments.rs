use super::JavaError;

#[derive(Clone, Copy)]
enum State {
    Code,
    Str,
    TextBlock,
    Char,
}

/// Replaces every `//` and `/* */` comment with a single space.
///
/// String, text-block and char literals are copied verbatim even when they
/// contain comment delimiters. Newlines that end line comments are kept.
pub fn strip_comments(source: &str) -> Result<String, JavaError> {
    let bytes = source.as_bytes();
    let mut out = String::with_capacity(source.len());
    let mut state = State::Code;
    let mut copied_to = 0;
    let mut i = 0;

    while i < bytes.len() {
        match state {
            State::Code => match bytes[i] {
                b'/' if bytes.get(i + 1) == Some(&b'/') => {
                    out.push_str(&source[copied_to..i]);
                    out.push(' ');
                    let end = source[i..].find('\n').map_or(bytes.len(), |n| i + n);
                    i = end;
                    copied_to = end;
                }
                b'/' if bytes.get(i + 1) == Some(&b'*') => {
                    out.push_str(&source[copied_to..i]);
                    out.push(' ');
                    let close = source[i + 2..]
                        .find("*/")
                        .ok_or(JavaError::UnterminatedComment { offset: i })?;
                    i = i + 2 + close + 2;
                    copied_to = i;
                }
                b'"' if bytes[i..].starts_with(b"\"\"\"") => {
                    state = State::TextBlock;
                    i += 3;
                }
                b'"' => {
                    state = State::Str;
                    i += 1;
                }
                b'\'' => {
                    state = State::Char;
                    i += 1;
                }
                _ => i += 1,
            },
            State::Str | State::Char => {
                let quote = if matches!(state, State::Str) { b'"' } else { b'\'' };
                match bytes[i] {
                    b'\\' => i += 2,
                    // unterminated literal: let the lexer report it
                    b'\n' => {
                        state = State::Code;
                        i += 1;
                    }
                    b if b == quote => {
                        state = State::Code;
                        i += 1;
                    }
                    _ => i += 1,
                }
            }
            State::TextBlock => {
                if bytes[i] == b'\\' {
                    i += 2;
                } else if bytes[i..].starts_with(b"\"\"\"") {
                    state = State::Code;
                    i += 3;
                } else {
                    i += 1;
                }
            }
        }
    }
    out.push_str(&source[copied_to.min(bytes.len())..]);
    Ok(out)
}

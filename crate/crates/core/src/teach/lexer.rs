//! Tokens of the teaching language.
//!
//! Keywords are ordinary barewords; the parser decides from context whether
//! a bareword is a keyword or a name, so values such as `No` or `Yes` need no
//! quoting.

use std::fmt;

/// Barewords that act as keywords somewhere in the grammar.
pub const KEYWORDS: &[&str] = &[
    "noun", "under", "verb", "from", "to", "in", "out", "ext", "adj", "rule", "fact", "ask",
    "given", "yes", "no", "if", "and", "nonzero", "numeric", "ordered",
];

#[derive(Clone, Debug, PartialEq)]
pub enum TokenKind {
    /// A bareword.
    Word(String),
    /// A double-quoted string, unescaped.
    Quoted(String),
    Number(f64),
    Colon,
    Comma,
    LParen,
    RParen,
    Eq,
    /// `<=>` or `⇔`
    Iff,
    /// `->` or `→`
    Arrow,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Word(w) => f.write_str(w),
            TokenKind::Quoted(s) => write!(f, "{}", quote(s)),
            TokenKind::Number(x) => write!(f, "{x}"),
            TokenKind::Colon => f.write_str(":"),
            TokenKind::Comma => f.write_str(","),
            TokenKind::LParen => f.write_str("("),
            TokenKind::RParen => f.write_str(")"),
            TokenKind::Eq => f.write_str("="),
            TokenKind::Iff => f.write_str("<=>"),
            TokenKind::Arrow => f.write_str("->"),
            TokenKind::Plus => f.write_str("+"),
            TokenKind::Minus => f.write_str("-"),
            TokenKind::Star => f.write_str("*"),
            TokenKind::Slash => f.write_str("/"),
            TokenKind::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub line: usize,
    /// 1-based, in characters.
    pub column: usize,
}

/// A lexical error: position and the offending text.
#[derive(Clone, Debug, PartialEq)]
pub struct LexError {
    pub line: usize,
    pub column: usize,
    pub found: String,
    pub expected: Vec<String>,
}

fn is_word_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

/// Whether `s` lexes as a single bareword.
pub fn is_bareword(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(is_word_start) && chars.all(is_word_char)
}

/// Renders a name so that it lexes back to the same identifier: barewords
/// stay bare, anything else (including lowercase keywords) is quoted.
pub fn format_ident(name: &str) -> String {
    if is_bareword(name) && !KEYWORDS.contains(&name) {
        name.to_string()
    } else {
        quote(name)
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Splits `text` into tokens; the last token is always `Eof`.
pub fn tokenize(text: &str, first_line: usize) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, first_line, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let push = |kind, width: usize, out: &mut Vec<Token>| {
            out.push(Token { kind, line: start_line, column: start_col });
            width
        };
        let width = match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => 1,
            ':' => push(TokenKind::Colon, 1, &mut out),
            ',' => push(TokenKind::Comma, 1, &mut out),
            '(' => push(TokenKind::LParen, 1, &mut out),
            ')' => push(TokenKind::RParen, 1, &mut out),
            '=' => push(TokenKind::Eq, 1, &mut out),
            '+' => push(TokenKind::Plus, 1, &mut out),
            '*' | '×' => push(TokenKind::Star, 1, &mut out),
            '/' | '÷' => push(TokenKind::Slash, 1, &mut out),
            '⇔' => push(TokenKind::Iff, 1, &mut out),
            '→' => push(TokenKind::Arrow, 1, &mut out),
            '<' if chars.get(i + 1) == Some(&'=') && chars.get(i + 2) == Some(&'>') => {
                push(TokenKind::Iff, 3, &mut out)
            }
            '-' if chars.get(i + 1) == Some(&'>') => push(TokenKind::Arrow, 2, &mut out),
            '-' | '−' => push(TokenKind::Minus, 1, &mut out),
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None | Some('\n') => {
                            return Err(LexError {
                                line: start_line,
                                column: start_col,
                                found: chars[i..j].iter().collect(),
                                expected: vec!["closing '\"'".into()],
                            })
                        }
                        Some('"') => break,
                        Some('\\') => {
                            let esc = match chars.get(j + 1) {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some(&e @ ('"' | '\\')) => e,
                                other => {
                                    return Err(LexError {
                                        line: start_line,
                                        column: col + (j - i),
                                        found: other.map_or("end of input".into(), |c| format!("\\{c}")),
                                        expected: vec!["escape \\\" \\\\ \\n or \\t".into()],
                                    })
                                }
                            };
                            s.push(esc);
                            j += 2;
                        }
                        Some(&c) => {
                            s.push(c);
                            j += 1;
                        }
                    }
                }
                push(TokenKind::Quoted(s), j + 1 - i, &mut out)
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) => {
                let mut j = i;
                while chars.get(j).is_some_and(|c| c.is_ascii_digit() || *c == '.') {
                    j += 1;
                }
                if matches!(chars.get(j), Some('e' | 'E')) {
                    let mut k = j + 1;
                    if matches!(chars.get(k), Some('+' | '-')) {
                        k += 1;
                    }
                    if chars.get(k).is_some_and(char::is_ascii_digit) {
                        j = k;
                        while chars.get(j).is_some_and(char::is_ascii_digit) {
                            j += 1;
                        }
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let value = text.parse::<f64>().map_err(|_| LexError {
                    line: start_line,
                    column: start_col,
                    found: text.clone(),
                    expected: vec!["number".into()],
                })?;
                if chars.get(j).is_some_and(|c| is_word_char(*c)) {
                    return Err(LexError {
                        line: start_line,
                        column: start_col,
                        found: chars[i..=j].iter().collect(),
                        expected: vec!["number".into()],
                    });
                }
                push(TokenKind::Number(value), j - i, &mut out)
            }
            c if is_word_start(c) => {
                let mut j = i + 1;
                while chars.get(j).is_some_and(|c| is_word_char(*c)) {
                    j += 1;
                }
                push(TokenKind::Word(chars[i..j].iter().collect()), j - i, &mut out)
            }
            other => {
                return Err(LexError {
                    line,
                    column: col,
                    found: other.to_string(),
                    expected: vec!["identifier, number or punctuation".into()],
                })
            }
        };
        i += width;
        col += width;
    }
    out.push(Token { kind: TokenKind::Eof, line, column: col });
    Ok(out)
}

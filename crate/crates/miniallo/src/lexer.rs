//! Lexer for `.adl` kernel files.
//!
//! Produces a flat token stream with explicit `Indent`/`Dedent` tokens derived
//! from leading whitespace, Python-style. Comments run from `#` to end of
//! line. Every token carries its source position for diagnostics.

use crate::diag::{Diag, Result, Span};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i128),
    /// A decimal literal containing `.` or exponent; kept as text so fixed
    /// point can parse it exactly.
    Real(String),
    Str(String),
    // Punctuation.
    LParen,
    RParen,
    LBracket,
    RBracket,
    Colon,
    Comma,
    Assign,
    PlusAssign,
    MinusAssign,
    StarAssign,
    Arrow,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn lex(file: &str, src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut indents: Vec<usize> = vec![0];
    for (lineno, line) in src.lines().enumerate() {
        let lineno = lineno as u32 + 1;
        let body = line.split('#').next().unwrap_or("");
        if body.trim().is_empty() {
            continue; // blank or comment-only lines do not affect indentation
        }
        let indent = body.len() - body.trim_start().len();
        if body[..indent].contains('\t') {
            return Err(Diag::user(file, Span::new(lineno, 1), "tabs are not allowed in indentation"));
        }
        let cur = *indents.last().unwrap();
        if indent > cur {
            indents.push(indent);
            out.push(Token { tok: Tok::Indent, span: Span::new(lineno, 1) });
        } else if indent < cur {
            while *indents.last().unwrap() > indent {
                indents.pop();
                out.push(Token { tok: Tok::Dedent, span: Span::new(lineno, 1) });
            }
            if *indents.last().unwrap() != indent {
                return Err(Diag::user(
                    file,
                    Span::new(lineno, indent as u32 + 1),
                    "indentation does not match any enclosing block",
                ));
            }
        }
        lex_line(file, lineno, body, &mut out)?;
        let end = body.len() as u32 + 1;
        out.push(Token { tok: Tok::Newline, span: Span::new(lineno, end) });
    }
    let last = src.lines().count() as u32 + 1;
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, span: Span::new(last, 1) });
    }
    out.push(Token { tok: Tok::Eof, span: Span::new(last, 1) });
    Ok(out)
}

fn lex_line(file: &str, lineno: u32, line: &str, out: &mut Vec<Token>) -> Result<()> {
    let bytes = line.as_bytes();
    let mut i = line.len() - line.trim_start().len();
    while i < bytes.len() {
        let c = bytes[i] as char;
        let span = Span::new(lineno, i as u32 + 1);
        let mut push = |tok: Tok, len: usize| {
            out.push(Token { tok, span });
            len
        };
        i += match c {
            ' ' => 1,
            '(' => push(Tok::LParen, 1),
            ')' => push(Tok::RParen, 1),
            '[' => push(Tok::LBracket, 1),
            ']' => push(Tok::RBracket, 1),
            ':' => push(Tok::Colon, 1),
            ',' => push(Tok::Comma, 1),
            '%' => push(Tok::Percent, 1),
            '*' if bytes.get(i + 1) == Some(&b'=') => push(Tok::StarAssign, 2),
            '*' => push(Tok::Star, 1),
            '/' if bytes.get(i + 1) == Some(&b'/') => push(Tok::Slash, 2), // `//` floor div
            '/' => push(Tok::Slash, 1),
            '+' if bytes.get(i + 1) == Some(&b'=') => push(Tok::PlusAssign, 2),
            '+' => push(Tok::Plus, 1),
            '-' if bytes.get(i + 1) == Some(&b'=') => push(Tok::MinusAssign, 2),
            '-' if bytes.get(i + 1) == Some(&b'>') => push(Tok::Arrow, 2),
            '-' => push(Tok::Minus, 1),
            '=' => push(Tok::Assign, 1),
            '"' => {
                let rest = &line[i + 1..];
                match rest.find('"') {
                    Some(end) => {
                        out.push(Token { tok: Tok::Str(rest[..end].to_string()), span });
                        end + 2
                    }
                    None => return Err(Diag::user(file, span, "unterminated string literal")),
                }
            }
            c if c.is_ascii_digit() => {
                let start = i;
                let mut j = i;
                let mut is_real = false;
                while j < bytes.len() {
                    let d = bytes[j] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        j += 1;
                    } else if d == '.' && j + 1 < bytes.len() && (bytes[j + 1] as char).is_ascii_digit() {
                        is_real = true;
                        j += 1;
                    } else {
                        break;
                    }
                }
                let text = &line[start..j];
                if is_real {
                    out.push(Token { tok: Tok::Real(text.to_string()), span });
                } else {
                    let v = if let Some(hex) = text.strip_prefix("0x") {
                        i128::from_str_radix(hex, 16)
                            .map_err(|_| Diag::user(file, span, format!("bad integer literal `{text}`")))?
                    } else {
                        text.replace('_', "")
                            .parse()
                            .map_err(|_| Diag::user(file, span, format!("bad integer literal `{text}`")))?
                    };
                    out.push(Token { tok: Tok::Int(v), span });
                }
                j - i
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                let mut j = i;
                while j < bytes.len() {
                    let d = bytes[j] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        j += 1;
                    } else {
                        break;
                    }
                }
                out.push(Token { tok: Tok::Ident(line[start..j].to_string()), span });
                j - i
            }
            other => {
                return Err(Diag::user(file, span, format!("unexpected character `{other}`")));
            }
        };
    }
    Ok(())
}

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Eq,
    Colon,
    Dot,
    /// `# ...` through end of line, text trimmed.
    Comment(String),
}

/// One statement's worth of source: physical lines joined while brackets
/// stay open.
#[derive(Debug, Clone)]
pub(crate) struct LogicalLine {
    pub line: usize,
    pub indent: usize,
    pub text: String,
}

pub(crate) fn logical_lines(src: &str) -> Result<Vec<LogicalLine>, ParseError> {
    let mut out = Vec::new();
    let mut pending: Option<(LogicalLine, i32)> = None;

    for (idx, raw) in src.lines().enumerate() {
        let line_no = idx + 1;
        let raw = raw.trim_end();
        if let Some((mut logical, depth)) = pending.take() {
            let piece = raw.trim();
            if !piece.is_empty() {
                logical.text.push(' ');
                logical.text.push_str(piece);
            }
            let depth = depth + bracket_delta(piece, line_no)?;
            if depth > 0 {
                pending = Some((logical, depth));
            } else {
                out.push(logical);
            }
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        let body = raw.trim_start_matches(' ');
        if body.starts_with('\t') {
            return Err(ParseError::new(
                line_no,
                ParseErrorKind::BadIndent,
                "tab characters are not allowed in indentation",
            ));
        }
        let logical = LogicalLine {
            line: line_no,
            indent: raw.len() - body.len(),
            text: body.to_string(),
        };
        let depth = bracket_delta(body, line_no)?;
        if depth > 0 {
            pending = Some((logical, depth));
        } else {
            out.push(logical);
        }
    }
    if let Some((logical, _)) = pending {
        return Err(ParseError::new(
            logical.line,
            ParseErrorKind::UnknownConstruct,
            "unclosed bracket",
        ));
    }
    Ok(out)
}

fn bracket_delta(text: &str, line: usize) -> Result<i32, ParseError> {
    let mut depth = 0;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in text.chars() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => quote = Some(c),
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            '#' => break,
            _ => {}
        }
    }
    if quote.is_some() {
        return Err(ParseError::new(
            line,
            ParseErrorKind::UnknownConstruct,
            "unterminated string literal",
        ));
    }
    Ok(depth)
}

pub(crate) fn lex(text: &str, line: usize) -> Result<Vec<Tok>, ParseError> {
    let err = |msg: &str| ParseError::new(line, ParseErrorKind::UnknownConstruct, msg);
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '#' => {
                let rest: String = chars[i + 1..].iter().collect();
                toks.push(Tok::Comment(rest.trim().to_string()));
                break;
            }
            '(' => {
                toks.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                i += 1;
            }
            '[' => {
                toks.push(Tok::LBracket);
                i += 1;
            }
            ']' => {
                toks.push(Tok::RBracket);
                i += 1;
            }
            ',' => {
                toks.push(Tok::Comma);
                i += 1;
            }
            '=' => {
                toks.push(Tok::Eq);
                i += 1;
            }
            ':' => {
                toks.push(Tok::Colon);
                i += 1;
            }
            '.' => {
                toks.push(Tok::Dot);
                i += 1;
            }
            '\'' | '"' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    let Some(&ch) = chars.get(i) else {
                        return Err(err("unterminated string literal"));
                    };
                    i += 1;
                    if ch == quote {
                        break;
                    }
                    if ch == '\\' {
                        let Some(&next) = chars.get(i) else {
                            return Err(err("dangling escape"));
                        };
                        i += 1;
                        match next {
                            'n' => s.push('\n'),
                            't' => s.push('\t'),
                            other => s.push(other),
                        }
                    } else {
                        s.push(ch);
                    }
                }
                toks.push(Tok::Str(s));
            }
            '-' | '0'..='9' => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let digits: String = chars[start..i].iter().collect();
                let value = digits.parse::<i64>().map_err(|_| err("malformed integer literal"))?;
                toks.push(Tok::Int(value));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            _ => return Err(err("unexpected character")),
        }
    }
    Ok(toks)
}

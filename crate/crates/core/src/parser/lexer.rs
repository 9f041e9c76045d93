use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{ParseError, SourceSpan};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    /// Decimal literal, kept as text so it re-parses exactly.
    Float(String),
    Label(u32),
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Semi,
    Colon,
    ColonColon,
    Assign,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Question,
    Shl,
    Arrow,
    AndAnd,
    Pipe,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tok::Ident(s) => return write!(f, "`{s}`"),
            Tok::Int(v) => return write!(f, "`{v}`"),
            Tok::Float(s) => return write!(f, "`{s}`"),
            Tok::Label(l) => return write!(f, "`.{l}`"),
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Colon => ":",
            Tok::ColonColon => "::",
            Tok::Assign => "=",
            Tok::EqEq => "==",
            Tok::NotEq => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Question => "?",
            Tok::Shl => "<<",
            Tok::Arrow => "=>",
            Tok::AndAnd => "&&",
            Tok::Pipe => "|",
            Tok::Eof => return f.write_str("end of input"),
        };
        write!(f, "`{s}`")
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub span: SourceSpan,
}

/// Tokenizes `src`. Unknown characters are reported and skipped.
pub(crate) fn lex(src: &str) -> (Vec<Token>, Vec<ParseError>) {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut errs = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut line_start = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line += 1;
            i += 1;
            line_start = i;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let span = |end: usize| SourceSpan {
            line,
            column: src[line_start..start].chars().count() + 1,
            offset: start,
            len: end - start,
        };
        let peek = |k: usize| bytes.get(i + k).copied().unwrap_or(0);
        let (tok, len) = if c.is_ascii_alphabetic() || c == b'_' {
            let mut j = i;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            (Tok::Ident(src[i..j].into()), j - i)
        } else if c.is_ascii_digit() {
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            let is_float = j + 1 < bytes.len() && bytes[j] == b'.' && bytes[j + 1].is_ascii_digit();
            if is_float {
                j += 1;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                (Tok::Float(src[i..j].into()), j - i)
            } else {
                match src[i..j].parse::<i64>() {
                    Ok(v) => (Tok::Int(v), j - i),
                    Err(_) => {
                        errs.push(ParseError::new(span(j), "integer literal out of range", Vec::new()));
                        i = j;
                        continue;
                    }
                }
            }
        } else if c == b'.' && peek(1).is_ascii_digit() {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            match src[i + 1..j].parse::<u32>() {
                Ok(v) => (Tok::Label(v), j - i),
                Err(_) => {
                    errs.push(ParseError::new(span(j), "operation label out of range", Vec::new()));
                    i = j;
                    continue;
                }
            }
        } else {
            match (c, peek(1)) {
                (b':', b':') => (Tok::ColonColon, 2),
                (b'=', b'=') => (Tok::EqEq, 2),
                (b'=', b'>') => (Tok::Arrow, 2),
                (b'!', b'=') => (Tok::NotEq, 2),
                (b'<', b'<') => (Tok::Shl, 2),
                (b'<', b'=') => (Tok::Le, 2),
                (b'>', b'=') => (Tok::Ge, 2),
                (b'&', b'&') => (Tok::AndAnd, 2),
                (b'[', _) => (Tok::LBracket, 1),
                (b']', _) => (Tok::RBracket, 1),
                (b'{', _) => (Tok::LBrace, 1),
                (b'}', _) => (Tok::RBrace, 1),
                (b'(', _) => (Tok::LParen, 1),
                (b')', _) => (Tok::RParen, 1),
                (b',', _) => (Tok::Comma, 1),
                (b';', _) => (Tok::Semi, 1),
                (b':', _) => (Tok::Colon, 1),
                (b'=', _) => (Tok::Assign, 1),
                (b'<', _) => (Tok::Lt, 1),
                (b'>', _) => (Tok::Gt, 1),
                (b'+', _) => (Tok::Plus, 1),
                (b'-', _) => (Tok::Minus, 1),
                (b'*', _) => (Tok::Star, 1),
                (b'?', _) => (Tok::Question, 1),
                (b'|', _) => (Tok::Pipe, 1),
                _ => {
                    let ch = src[i..].chars().next().unwrap_or('?');
                    let n = ch.len_utf8();
                    errs.push(ParseError::new(
                        span(i + n),
                        alloc::format!("unexpected character `{ch}`"),
                        Vec::new(),
                    ));
                    i += n;
                    continue;
                }
            }
        };
        toks.push(Token {
            tok,
            span: span(i + len),
        });
        i += len;
    }
    toks.push(Token {
        tok: Tok::Eof,
        span: SourceSpan {
            line,
            column: src[line_start..].chars().count() + 1,
            offset: src.len(),
            len: 0,
        },
    });
    (toks, errs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(s: &str) -> Vec<Tok> {
        let (t, e) = lex(s);
        assert!(e.is_empty(), "{e:?}");
        t.into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn labels_and_floats() {
        assert_eq!(
            kinds("A .1 B 1.5 map.2"),
            alloc::vec![
                Tok::Ident("A".into()),
                Tok::Label(1),
                Tok::Ident("B".into()),
                Tok::Float("1.5".into()),
                Tok::Ident("map".into()),
                Tok::Label(2),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn two_char_operators_and_comments() {
        assert_eq!(
            kinds("<< <= < :: => # ignored\n&&"),
            alloc::vec![Tok::Shl, Tok::Le, Tok::Lt, Tok::ColonColon, Tok::Arrow, Tok::AndAnd, Tok::Eof]
        );
    }

    #[test]
    fn positions_are_one_based() {
        let (t, _) = lex("a\r\n  bb");
        assert_eq!((t[1].span.line, t[1].span.column, t[1].span.len), (2, 3, 2));
    }

    #[test]
    fn bad_character_is_reported() {
        let (_, e) = lex("A @ B");
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].span.column, 3);
    }
}

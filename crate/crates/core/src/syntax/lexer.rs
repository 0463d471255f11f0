//! Tokenizer shared by both dialects.

use super::parser::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    /// Quoted constant, quotes included.
    Quoted(String),
    Number(u64),
    /// Punctuation, possibly multi-character (`||`, `:=`, `|->`, `-[`, `]->`, `-->`).
    Punct(&'static str),
    /// Any other single character (used only inside lemma text).
    Other(char),
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const PUNCTS: &[&str] = &[
    "|->", "]->", "-->", "--[", "==>", "||", ":=", "-[", "(", ")", "[", "]", ",", ";", ".", ":", "=", "|", "!", "/",
    "<", ">", "@", "#", "&",
];

pub(crate) fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize, chars: &[char]| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1, &chars);
            continue;
        }
        let rest = |k: usize| chars.get(i + k).copied();
        if c == '/' && rest(1) == Some('/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1, &chars);
            }
            continue;
        }
        if (c == '/' && rest(1) == Some('*')) || (c == '(' && rest(1) == Some('*')) {
            let close = if c == '/' { '/' } else { ')' };
            let (l0, c0) = (line, col);
            advance(&mut i, &mut line, &mut col, 2, &chars);
            loop {
                if i + 1 >= chars.len() {
                    return Err(ParseError::new(l0, c0, "unterminated comment"));
                }
                if chars[i] == '*' && chars[i + 1] == close {
                    advance(&mut i, &mut line, &mut col, 2, &chars);
                    break;
                }
                advance(&mut i, &mut line, &mut col, 1, &chars);
            }
            continue;
        }
        let (l0, c0) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                advance(&mut i, &mut line, &mut col, 1, &chars);
            }
            out.push(Token { tok: Tok::Ident(s), line: l0, col: c0 });
            continue;
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            while i < chars.len() && chars[i].is_ascii_digit() {
                s.push(chars[i]);
                advance(&mut i, &mut line, &mut col, 1, &chars);
            }
            let n = s.parse().map_err(|_| ParseError::new(l0, c0, "number too large"))?;
            out.push(Token { tok: Tok::Number(n), line: l0, col: c0 });
            continue;
        }
        if c == '\'' {
            let mut s = String::from("'");
            advance(&mut i, &mut line, &mut col, 1, &chars);
            while i < chars.len() && chars[i] != '\'' {
                if chars[i] == '\n' {
                    return Err(ParseError::new(l0, c0, "unterminated constant"));
                }
                s.push(chars[i]);
                advance(&mut i, &mut line, &mut col, 1, &chars);
            }
            if i >= chars.len() {
                return Err(ParseError::new(l0, c0, "unterminated constant"));
            }
            advance(&mut i, &mut line, &mut col, 1, &chars);
            s.push('\'');
            if s.len() == 2 {
                return Err(ParseError::new(l0, c0, "empty constant"));
            }
            out.push(Token { tok: Tok::Quoted(s), line: l0, col: c0 });
            continue;
        }
        let matched = PUNCTS.iter().find(|p| p.chars().enumerate().all(|(k, pc)| chars.get(i + k) == Some(&pc)));
        match matched {
            Some(p) => {
                advance(&mut i, &mut line, &mut col, p.chars().count(), &chars);
                out.push(Token { tok: Tok::Punct(p), line: l0, col: c0 });
            }
            None => {
                advance(&mut i, &mut line, &mut col, 1, &chars);
                out.push(Token { tok: Tok::Other(c), line: l0, col: c0 });
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

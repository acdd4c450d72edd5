use super::{Diagnostic, Span};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(u64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Assign,
    Eq,
    Neq,
    DotDot,
    Arrow,
    Minus,
    Underscore,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Assign => f.write_str("`:=`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Neq => f.write_str("`!=`"),
            Tok::DotDot => f.write_str("`..`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Underscore => f.write_str("`_`"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn lex(text: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        let start = Span { line, col, len: 1 };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic()
            || (c == '_' && chars.get(i + 1).is_some_and(|d| d.is_ascii_alphanumeric()))
        {
            let begin = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[begin..i].iter().collect();
            let len = (i - begin) as u32;
            col += len;
            out.push(Token {
                tok: Tok::Ident(word),
                span: Span { len, ..start },
            });
            continue;
        }
        if c.is_ascii_digit() {
            let begin = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[begin..i].iter().collect();
            let len = (i - begin) as u32;
            col += len;
            let value = digits.parse::<u64>().map_err(|_| {
                Diagnostic::error(
                    "E-LEX",
                    format!("integer literal `{digits}` is too large"),
                    Span { len, ..start },
                )
            })?;
            out.push(Token {
                tok: Tok::Int(value),
                span: Span { len, ..start },
            });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (tok, len) = match two.as_str() {
            ":=" => (Tok::Assign, 2),
            "!=" => (Tok::Neq, 2),
            ".." => (Tok::DotDot, 2),
            "->" => (Tok::Arrow, 2),
            _ => match c {
                '{' => (Tok::LBrace, 1),
                '}' => (Tok::RBrace, 1),
                '(' => (Tok::LParen, 1),
                ')' => (Tok::RParen, 1),
                '[' => (Tok::LBracket, 1),
                ']' => (Tok::RBracket, 1),
                ',' => (Tok::Comma, 1),
                ':' => (Tok::Colon, 1),
                '=' => (Tok::Eq, 1),
                '-' => (Tok::Minus, 1),
                '_' => (Tok::Underscore, 1),
                other => {
                    let msg = if other.is_ascii() {
                        format!("unexpected character `{other}`")
                    } else {
                        format!("non-ASCII character `{other}` (identifiers are ASCII-only)")
                    };
                    return Err(Diagnostic::error("E-LEX", msg, start));
                }
            },
        };
        out.push(Token {
            tok,
            span: Span { len, ..start },
        });
        i += len as usize;
        col += len;
    }
    Ok(out)
}

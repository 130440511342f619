use super::ast::Span;
use super::FrontendError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    // keywords
    Package,
    Func,
    Type,
    Struct,
    Var,
    If,
    Else,
    For,
    Return,
    Defer,
    Spawn,
    Extern,
    Map,
    True,
    False,
    Nil,
    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Colon,
    Semi,
    Define,
    Assign,
    PlusAssign,
    MinusAssign,
    StarAssign,
    Inc,
    Dec,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Amp,
    AndAnd,
    OrOr,
    Not,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
    /// True for semicolons inserted at a line break.
    pub implicit: bool,
}

fn keyword(s: &str) -> Option<Tok> {
    Some(match s {
        "package" => Tok::Package,
        "func" => Tok::Func,
        "type" => Tok::Type,
        "struct" => Tok::Struct,
        "var" => Tok::Var,
        "if" => Tok::If,
        "else" => Tok::Else,
        "for" => Tok::For,
        "return" => Tok::Return,
        "defer" => Tok::Defer,
        "spawn" => Tok::Spawn,
        "extern" => Tok::Extern,
        "map" => Tok::Map,
        "true" => Tok::True,
        "false" => Tok::False,
        "nil" => Tok::Nil,
        _ => return None,
    })
}

/// Whether a line break after this token terminates the statement.
fn ends_statement(t: &Tok) -> bool {
    matches!(
        t,
        Tok::Ident(_)
            | Tok::Int(_)
            | Tok::Str(_)
            | Tok::True
            | Tok::False
            | Tok::Nil
            | Tok::Return
            | Tok::RParen
            | Tok::RBrace
            | Tok::RBracket
            | Tok::Inc
            | Tok::Dec
    )
}

pub fn lex(src: &str) -> Result<Vec<Token>, FrontendError> {
    let bytes = src.as_bytes();
    let mut out: Vec<Token> = Vec::new();
    let mut i = 0;
    let push_semi = |out: &mut Vec<Token>, at: usize| {
        if out.last().is_some_and(|t| ends_statement(&t.tok)) {
            out.push(Token {
                tok: Tok::Semi,
                span: Span::new(at, at),
                implicit: true,
            });
        }
    };
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            push_semi(&mut out, i);
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            let start = i;
            i += 2;
            let mut newline = false;
            loop {
                if i + 1 >= bytes.len() {
                    return Err(FrontendError::syntax(src, start, "unterminated block comment"));
                }
                if bytes[i] == b'\n' {
                    newline = true;
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            if newline {
                push_semi(&mut out, start);
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            let tok = keyword(word).unwrap_or_else(|| Tok::Ident(word.to_string()));
            out.push(Token {
                tok,
                span: Span::new(start, i),
                implicit: false,
            });
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let v: i64 = src[start..i]
                .parse()
                .map_err(|_| FrontendError::syntax(src, start, "integer literal out of range"))?;
            out.push(Token {
                tok: Tok::Int(v),
                span: Span::new(start, i),
                implicit: false,
            });
            continue;
        }
        if c == b'"' {
            i += 1;
            let mut s = String::new();
            loop {
                match bytes.get(i) {
                    None | Some(b'\n') => {
                        return Err(FrontendError::syntax(src, start, "unterminated string literal"))
                    }
                    Some(b'"') => {
                        i += 1;
                        break;
                    }
                    Some(b'\\') => {
                        let esc = match bytes.get(i + 1) {
                            Some(b'n') => '\n',
                            Some(b't') => '\t',
                            Some(b'"') => '"',
                            Some(b'\\') => '\\',
                            _ => return Err(FrontendError::syntax(src, i, "unknown escape sequence")),
                        };
                        s.push(esc);
                        i += 2;
                    }
                    Some(_) => {
                        let ch = src[i..].chars().next().unwrap();
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            out.push(Token {
                tok: Tok::Str(s),
                span: Span::new(start, i),
                implicit: false,
            });
            continue;
        }
        let two = bytes.get(i + 1).copied();
        let (tok, len) = match (c, two) {
            (b':', Some(b'=')) => (Tok::Define, 2),
            (b'+', Some(b'=')) => (Tok::PlusAssign, 2),
            (b'-', Some(b'=')) => (Tok::MinusAssign, 2),
            (b'*', Some(b'=')) => (Tok::StarAssign, 2),
            (b'+', Some(b'+')) => (Tok::Inc, 2),
            (b'-', Some(b'-')) => (Tok::Dec, 2),
            (b'&', Some(b'&')) => (Tok::AndAnd, 2),
            (b'|', Some(b'|')) => (Tok::OrOr, 2),
            (b'=', Some(b'=')) => (Tok::EqEq, 2),
            (b'!', Some(b'=')) => (Tok::NotEq, 2),
            (b'<', Some(b'=')) => (Tok::Le, 2),
            (b'>', Some(b'=')) => (Tok::Ge, 2),
            (b'(', _) => (Tok::LParen, 1),
            (b')', _) => (Tok::RParen, 1),
            (b'{', _) => (Tok::LBrace, 1),
            (b'}', _) => (Tok::RBrace, 1),
            (b'[', _) => (Tok::LBracket, 1),
            (b']', _) => (Tok::RBracket, 1),
            (b',', _) => (Tok::Comma, 1),
            (b'.', _) => (Tok::Dot, 1),
            (b':', _) => (Tok::Colon, 1),
            (b';', _) => (Tok::Semi, 1),
            (b'=', _) => (Tok::Assign, 1),
            (b'+', _) => (Tok::Plus, 1),
            (b'-', _) => (Tok::Minus, 1),
            (b'*', _) => (Tok::Star, 1),
            (b'/', _) => (Tok::Slash, 1),
            (b'%', _) => (Tok::Percent, 1),
            (b'&', _) => (Tok::Amp, 1),
            (b'!', _) => (Tok::Not, 1),
            (b'<', _) => (Tok::Lt, 1),
            (b'>', _) => (Tok::Gt, 1),
            _ => {
                let ch = src[i..].chars().next().unwrap();
                return Err(FrontendError::syntax(
                    src,
                    i,
                    &format!("unexpected character {ch:?}"),
                ));
            }
        };
        i += len;
        out.push(Token {
            tok,
            span: Span::new(start, i),
            implicit: false,
        });
    }
    push_semi(&mut out, src.len());
    out.push(Token {
        tok: Tok::Eof,
        span: Span::new(src.len(), src.len()),
        implicit: false,
    });
    Ok(out)
}

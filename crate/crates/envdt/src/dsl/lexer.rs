//! Tokenizer for the `.envdt` text format.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Semi,
    Colon,
    Comma,
    Dot,
    DotDot,
    Arrow,
    Pipe,
    StereoOpen,
    StereoClose,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Int(v) => write!(f, "'{v}'"),
            Tok::Real(v) => write!(f, "'{v}'"),
            Tok::Str(_) => write!(f, "string literal"),
            Tok::LBrace => write!(f, "'{{'"),
            Tok::RBrace => write!(f, "'}}'"),
            Tok::LBracket => write!(f, "'['"),
            Tok::RBracket => write!(f, "']'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::Semi => write!(f, "';'"),
            Tok::Colon => write!(f, "':'"),
            Tok::Comma => write!(f, "','"),
            Tok::Dot => write!(f, "'.'"),
            Tok::DotDot => write!(f, "'..'"),
            Tok::Arrow => write!(f, "'->'"),
            Tok::Pipe => write!(f, "'|'"),
            Tok::StereoOpen => write!(f, "'<<'"),
            Tok::StereoClose => write!(f, "'>>'"),
            Tok::Eq => write!(f, "'='"),
            Tok::Ne => write!(f, "'<>'"),
            Tok::Lt => write!(f, "'<'"),
            Tok::Le => write!(f, "'<='"),
            Tok::Gt => write!(f, "'>'"),
            Tok::Ge => write!(f, "'>='"),
            Tok::Plus => write!(f, "'+'"),
            Tok::Minus => write!(f, "'-'"),
            Tok::Star => write!(f, "'*'"),
            Tok::Slash => write!(f, "'/'"),
        }
    }
}

/// Source position of a token, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

pub fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    macro_rules! err {
        ($($arg:tt)*) => {
            return Err(ParseError { line, col, message: format!($($arg)*) })
        };
    }

    while i < bytes.len() {
        let pos = Pos { line, col };
        let c = bytes[i] as char;

        // Whitespace and line comments.
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }

        // Identifiers.
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let ident = &text[start..i];
            col += (i - start) as u32;
            out.push((Tok::Ident(ident.to_string()), pos));
            continue;
        }

        // Numbers (unsigned here; the parser applies signs).
        if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_real = false;
            // A '.' starts a fraction only when not part of '..'.
            if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())
            {
                is_real = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if bytes.get(j) == Some(&b'+') || bytes.get(j) == Some(&b'-') {
                    j += 1;
                }
                if bytes.get(j).is_some_and(|b| b.is_ascii_digit()) {
                    is_real = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lexeme = &text[start..i];
            col += (i - start) as u32;
            if is_real {
                match lexeme.parse::<f64>() {
                    Ok(v) => out.push((Tok::Real(v), pos)),
                    Err(_) => err!("malformed number '{lexeme}'"),
                }
            } else {
                match lexeme.parse::<i64>() {
                    Ok(v) => out.push((Tok::Int(v), pos)),
                    Err(_) => err!("integer '{lexeme}' out of range"),
                }
            }
            continue;
        }

        // Strings with the usual escapes.
        if c == '"' {
            i += 1;
            col += 1;
            let mut s = String::new();
            loop {
                let Some(&b) = bytes.get(i) else { err!("unterminated string") };
                i += 1;
                col += 1;
                match b {
                    b'"' => break,
                    b'\n' => err!("unterminated string"),
                    b'\\' => {
                        let Some(&esc) = bytes.get(i) else { err!("unterminated string") };
                        i += 1;
                        col += 1;
                        match esc {
                            b'"' => s.push('"'),
                            b'\\' => s.push('\\'),
                            b'n' => s.push('\n'),
                            b't' => s.push('\t'),
                            other => err!("unknown escape '\\{}'", other as char),
                        }
                    }
                    _ => s.push(b as char),
                }
            }
            out.push((Tok::Str(s), pos));
            continue;
        }

        // Punctuation, longest match first.
        let two = if i + 1 < bytes.len() { &text[i..i + 2] } else { "" };
        let (tok, len) = match two {
            "<<" => (Tok::StereoOpen, 2),
            ">>" => (Tok::StereoClose, 2),
            "<=" => (Tok::Le, 2),
            ">=" => (Tok::Ge, 2),
            "<>" => (Tok::Ne, 2),
            "->" => (Tok::Arrow, 2),
            ".." => (Tok::DotDot, 2),
            _ => match c {
                '{' => (Tok::LBrace, 1),
                '}' => (Tok::RBrace, 1),
                '[' => (Tok::LBracket, 1),
                ']' => (Tok::RBracket, 1),
                '(' => (Tok::LParen, 1),
                ')' => (Tok::RParen, 1),
                ';' => (Tok::Semi, 1),
                ':' => (Tok::Colon, 1),
                ',' => (Tok::Comma, 1),
                '.' => (Tok::Dot, 1),
                '|' => (Tok::Pipe, 1),
                '=' => (Tok::Eq, 1),
                '<' => (Tok::Lt, 1),
                '>' => (Tok::Gt, 1),
                '+' => (Tok::Plus, 1),
                '-' => (Tok::Minus, 1),
                '*' => (Tok::Star, 1),
                '/' => (Tok::Slash, 1),
                other => err!("unexpected character '{other}'"),
            },
        };
        out.push((tok, pos));
        i += len;
        col += len as u32;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(text: &str) -> Vec<Tok> {
        lex(text).unwrap().into_iter().map(|(t, _)| t).collect()
    }

    #[test]
    fn ranges_do_not_eat_the_dot_dot() {
        assert_eq!(
            toks("[1..3]"),
            vec![Tok::LBracket, Tok::Int(1), Tok::DotDot, Tok::Int(3), Tok::RBracket]
        );
        assert_eq!(toks("0.5"), vec![Tok::Real(0.5)]);
        assert_eq!(toks("1.."), vec![Tok::Int(1), Tok::DotDot]);
    }

    #[test]
    fn comparison_and_stereotype_brackets_disambiguate() {
        assert_eq!(toks("<< >> <= >= <> < >"), vec![
            Tok::StereoOpen,
            Tok::StereoClose,
            Tok::Le,
            Tok::Ge,
            Tok::Ne,
            Tok::Lt,
            Tok::Gt,
        ]);
    }

    #[test]
    fn comments_and_strings() {
        assert_eq!(
            toks("log \"a\\\"b\\n\"; // trailing\nx"),
            vec![
                Tok::Ident("log".into()),
                Tok::Str("a\"b\n".into()),
                Tok::Semi,
                Tok::Ident("x".into()),
            ]
        );
    }

    #[test]
    fn positions_point_at_token_starts() {
        let lexed = lex("ab\n  cd").unwrap();
        assert_eq!(lexed[0].1, Pos { line: 1, col: 1 });
        assert_eq!(lexed[1].1, Pos { line: 2, col: 3 });
    }

    #[test]
    fn errors_carry_positions() {
        let err = lex("ok ?").unwrap_err();
        assert_eq!((err.line, err.col), (1, 4));
        assert!(lex("\"open").is_err());
    }
}

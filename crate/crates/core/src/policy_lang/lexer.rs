use crate::ast::{parse_timestamp, Timestamp};
use crate::error::SyntaxError;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Var(String),
    Int(i64),
    Time(Timestamp),
    Directive(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Turnstile,
    Amp,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) | Tok::Var(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Time(_) => "timestamp".into(),
            Tok::Directive(d) => format!("`#{d}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Turnstile => "`:-`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Ne => "`!=`".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

const TIMESTAMP_LEN: usize = "2007-05-01T10:00:00Z".len();

pub(crate) fn tokenize(src: &str) -> (Vec<Spanned>, Vec<SyntaxError>) {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut errors = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! push {
        ($tok:expr, $len:expr) => {{
            let len = $len;
            toks.push(Spanned { tok: $tok, line, column: col });
            i += len;
            col += len;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' => push!(Tok::LParen, 1),
            ')' => push!(Tok::RParen, 1),
            ',' => push!(Tok::Comma, 1),
            '.' => push!(Tok::Dot, 1),
            '&' => push!(Tok::Amp, 1),
            '=' => push!(Tok::Eq, 1),
            ':' if chars.get(i + 1) == Some(&'-') => push!(Tok::Turnstile, 2),
            '<' if chars.get(i + 1) == Some(&'=') => push!(Tok::Le, 2),
            '<' => push!(Tok::Lt, 1),
            '>' if chars.get(i + 1) == Some(&'=') => push!(Tok::Ge, 2),
            '>' => push!(Tok::Gt, 1),
            '!' if chars.get(i + 1) == Some(&'=') => push!(Tok::Ne, 2),
            '#' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '-' || chars[j] == '_') {
                    j += 1;
                }
                if j == start {
                    errors.push(SyntaxError { line, column: col, message: "empty directive name".into() });
                    i += 1;
                    col += 1;
                } else {
                    let name: String = chars[start..j].iter().collect();
                    push!(Tok::Directive(name), j - i);
                }
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                if c.is_ascii_digit() && i + TIMESTAMP_LEN <= chars.len() {
                    let candidate: String = chars[i..i + TIMESTAMP_LEN].iter().collect();
                    if let Some(ts) = parse_timestamp(&candidate) {
                        push!(Tok::Time(ts), TIMESTAMP_LEN);
                        continue;
                    }
                }
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                match text.parse::<i64>() {
                    Ok(n) => push!(Tok::Int(n), j - i),
                    Err(_) => {
                        errors.push(SyntaxError { line, column: col, message: format!("integer `{text}` out of range") });
                        col += j - i;
                        i = j;
                    }
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                let tok = if c.is_ascii_lowercase() { Tok::Ident(text) } else { Tok::Var(text) };
                push!(tok, j - i);
            }
            other => {
                errors.push(SyntaxError { line, column: col, message: format!("unexpected character `{other}`") });
                i += 1;
                col += 1;
            }
        }
    }
    (toks, errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        let (toks, errors) = tokenize(src);
        assert!(errors.is_empty(), "{errors:?}");
        toks.into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn rule_tokens() {
        let toks = kinds("p(X) :- not q(X, -3), X <= Nm. % trailing");
        assert_eq!(toks[0], Tok::Ident("p".into()));
        assert!(toks.contains(&Tok::Turnstile));
        assert!(toks.contains(&Tok::Int(-3)));
        assert!(toks.contains(&Tok::Le));
        assert_eq!(toks.last(), Some(&Tok::Dot));
    }

    #[test]
    fn timestamp_then_terminator() {
        let toks = kinds("#context c temporal 2007-07-01T00:00:00Z 2007-07-31T23:59:59Z.");
        assert!(matches!(toks[3], Tok::Time(_)));
        assert!(matches!(toks[4], Tok::Time(_)));
        assert_eq!(toks[5], Tok::Dot);
    }

    #[test]
    fn positions_reported() {
        let (_, errors) = tokenize("p(a).\n  q($).");
        assert_eq!(errors.len(), 1);
        assert_eq!((errors[0].line, errors[0].column), (2, 5));
    }
}

use super::{Func, ParseError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Num(f64),
    Param(char),
    State,
    Time,
    Func(Func),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eq,
    DS,
    Dt,
    DW,
    DJ,
    End,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Param(c) => format!("parameter '{c}'"),
            Tok::State => "'S'".into(),
            Tok::Time => "'t'".into(),
            Tok::Func(f) => format!("function '{}'", f.name()),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Eq => "'='".into(),
            Tok::DS => "'dS'".into(),
            Tok::Dt => "'dt'".into(),
            Tok::DW => "'dW'".into(),
            Tok::DJ => "'dJ'".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub pos: usize,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let text: String = chars[pos..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| ParseError::Syntax {
                column: pos,
                expected: "number".into(),
                found: format!("'{text}'"),
            })?;
            out.push(Spanned { tok: Tok::Num(v), pos });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[pos..i].iter().collect();
            out.push(Spanned { tok: classify(&word, pos)?, pos });
            continue;
        }
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '=' => Tok::Eq,
            other => {
                return Err(ParseError::Syntax { column: pos, expected: "a token".into(), found: format!("'{other}'") })
            }
        };
        out.push(Spanned { tok, pos });
        i += 1;
    }
    out.push(Spanned { tok: Tok::End, pos: chars.len() });
    Ok(out)
}

fn classify(word: &str, pos: usize) -> Result<Tok, ParseError> {
    Ok(match word {
        "dS" => Tok::DS,
        "dt" => Tok::Dt,
        "dW" => Tok::DW,
        "dJ" => Tok::DJ,
        "S" => Tok::State,
        "t" => Tok::Time,
        "s" => return Err(ParseError::ReservedParameter { column: pos, name: 's' }),
        w => {
            if let Some(f) = Func::from_name(w) {
                Tok::Func(f)
            } else {
                let mut it = w.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) if c.is_ascii_lowercase() => Tok::Param(c),
                    _ => return Err(ParseError::UnknownIdentifier { column: pos, name: w.to_string() }),
                }
            }
        }
    })
}

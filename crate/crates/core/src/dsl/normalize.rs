//! Turns free-form model text (LaTeX, unicode math, implicit products) into
//! strict DSL text. Bump [`NORMALIZATION_VERSION`] whenever the tables or the
//! rewriting rules change, since stored agent transcripts depend on them.

use super::{parse_model, ParseError, SdeModel};
use crate::params::ParamVector;

pub const NORMALIZATION_VERSION: u32 = 1;

/// Straight substitutions applied before tokenising.
const REPLACEMENTS: &[(&str, &str)] = &[
    ("\u{2212}", "-"),
    ("\u{2013}", "-"),
    ("\u{00d7}", "*"),
    ("\u{00b7}", "*"),
    ("\u{22c5}", "*"),
    ("\u{2217}", "*"),
    ("\u{00b2}", "^2"),
    ("\u{00b3}", "^3"),
    ("\\cdot", "*"),
    ("\\times", "*"),
    ("\\left", ""),
    ("\\right", ""),
    ("\\,", " "),
    ("\\;", " "),
    ("\\!", ""),
    ("\\ln", " log"),
    ("\\log", " log"),
    ("\\exp", " exp"),
    ("\\sin", " sin"),
    ("\\cos", " cos"),
    ("\\tanh", " tanh"),
    ("\\arctan", " arctan"),
    ("\\diff S", "dS"),
    ("\\diff W", "dW"),
    ("\\diff J", "dJ"),
    ("\\diff t", "dt"),
    ("\\mathrm{d}", "d"),
    ("dS_t", "dS"),
    ("dW_t", "dW"),
    ("dJ_t", "dJ"),
    ("S_t", "S"),
];

/// Longest-first words recognised inside letter runs.
const WORDS: &[&str] =
    &["arctan", "sqrt", "tanh", "atan", "abs", "exp", "log", "sin", "cos", "ln", "dS", "dt", "dW", "dJ"];

/// A parsed suggestion with an optional initial guess (`; init: a=0.1, b=2`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Suggestion {
    pub model: SdeModel,
    pub init: Option<ParamVector>,
}

#[derive(Debug, Clone, PartialEq)]
enum Lx {
    Num(String),
    Word(String),
    Sym(char),
}

impl Lx {
    fn is_keyword(&self) -> bool {
        matches!(self, Lx::Word(w) if matches!(w.as_str(), "dS" | "dt" | "dW" | "dJ"))
    }

    fn is_func(&self) -> bool {
        matches!(self, Lx::Word(w) if super::Func::from_name(w).is_some())
    }

    fn ends_operand(&self) -> bool {
        match self {
            Lx::Num(_) => true,
            Lx::Word(_) => !self.is_keyword() && !self.is_func(),
            Lx::Sym(c) => *c == ')',
        }
    }

    fn starts_operand(&self) -> bool {
        match self {
            Lx::Num(_) => true,
            Lx::Word(_) => !self.is_keyword(),
            Lx::Sym(c) => *c == '(',
        }
    }
}

/// Rewrites `\sqrt{x}`, `\frac{a}{b}` and `^{p/q}` groups, then maps any
/// remaining braces to parentheses.
fn rewrite_groups(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::new();
    let mut i = 0;
    while i < chars.len() {
        let rest: String = chars[i..].iter().take(6).collect();
        if rest.starts_with("\\sqrt") {
            i += 5;
            out.push_str("sqrt");
            if chars.get(i) != Some(&'{') && chars.get(i) != Some(&'(') {
                // \sqrt S
                while chars.get(i) == Some(&' ') {
                    i += 1;
                }
                if let Some(c) = chars.get(i) {
                    out.push('(');
                    out.push(*c);
                    out.push(')');
                    i += 1;
                }
            }
            continue;
        }
        if rest.starts_with("\\frac") {
            i += 5;
            if let Some((num, j)) = brace_group(&chars, i) {
                if let Some((den, k)) = brace_group(&chars, j) {
                    out.push_str(&format!("(({})/({}))", rewrite_groups(&num), rewrite_groups(&den)));
                    i = k;
                    continue;
                }
            }
            out.push_str("frac");
            continue;
        }
        if chars[i] == '^' && chars.get(i + 1) == Some(&'{') {
            if let Some((inner, j)) = brace_group(&chars, i + 1) {
                out.push('^');
                out.push_str(&exponent_text(&inner));
                i = j;
                continue;
            }
        }
        if chars[i] == '\u{221a}' {
            // unicode root: √S or √(…)
            out.push_str("sqrt");
            i += 1;
            if chars.get(i) != Some(&'(') {
                if let Some(c) = chars.get(i) {
                    out.push('(');
                    out.push(*c);
                    out.push(')');
                    i += 1;
                }
            }
            continue;
        }
        match chars[i] {
            '{' => out.push('('),
            '}' => out.push(')'),
            c => out.push(c),
        }
        i += 1;
    }
    out
}

fn brace_group(chars: &[char], start: usize) -> Option<(String, usize)> {
    if chars.get(start) != Some(&'{') {
        return None;
    }
    let mut depth = 0usize;
    for (k, &c) in chars.iter().enumerate().skip(start) {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((chars[start + 1..k].iter().collect(), k + 1));
                }
            }
            _ => {}
        }
    }
    None
}

fn exponent_text(inner: &str) -> String {
    let t = inner.trim();
    if let Some((p, q)) = t.split_once('/') {
        if let (Ok(p), Ok(q)) = (p.trim().parse::<f64>(), q.trim().parse::<f64>()) {
            if q != 0.0 {
                return format!("{}", p / q);
            }
        }
    }
    if t.parse::<f64>().is_ok() || (t.len() == 1 && t.chars().all(|c| c.is_ascii_lowercase())) {
        t.to_string()
    } else {
        format!("({t})")
    }
}

fn split_letters(run: &str, out: &mut Vec<Lx>) {
    let mut rest = run;
    while !rest.is_empty() {
        if let Some(w) = WORDS.iter().find(|w| rest.starts_with(**w)) {
            let canonical = match *w {
                "ln" => "log",
                "atan" => "arctan",
                other => other,
            };
            out.push(Lx::Word(canonical.to_string()));
            rest = &rest[w.len()..];
        } else {
            let c = rest.chars().next().unwrap_or(' ');
            out.push(Lx::Word(c.to_string()));
            rest = &rest[c.len_utf8()..];
        }
    }
}

fn loose_tokens(s: &str) -> Vec<Lx> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() || c == '\\' {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            out.push(Lx::Num(chars[start..i].iter().collect()));
        } else if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_alphabetic() {
                i += 1;
            }
            let run: String = chars[start..i].iter().collect();
            split_letters(&run, &mut out);
        } else {
            out.push(Lx::Sym(c));
            i += 1;
        }
    }
    out
}

/// Normalises one line of model text into strict DSL syntax. The result is
/// not validated; feed it to [`parse_model`].
pub fn normalize_model_text(line: &str) -> String {
    let mut s = line.to_string();
    for (from, to) in REPLACEMENTS {
        s = s.replace(from, to);
    }
    let s = rewrite_groups(&s);
    let toks = loose_tokens(&s);
    let mut out = String::new();
    for (k, t) in toks.iter().enumerate() {
        if k > 0 {
            let prev = &toks[k - 1];
            if prev.ends_operand() && t.starts_operand() {
                out.push_str(" * ");
            } else {
                out.push(' ');
            }
        }
        match t {
            Lx::Num(n) | Lx::Word(n) => out.push_str(n),
            Lx::Sym(c) => out.push(*c),
        }
    }
    out
}

fn strip_decoration(line: &str) -> &str {
    let mut s = line.trim();
    // enumerations like "3.", "3)", "-", "*"
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 && matches!(s[digits..].chars().next(), Some('.' | ')' | ':')) {
        s = s[digits + 1..].trim_start();
    }
    s = s.trim_start_matches(['-', '*', '\u{2022}', ' ']);
    s.trim_matches(|c: char| matches!(c, '$' | '`' | ' ' | ',' | ';'))
}

fn parse_init(text: &str) -> Option<ParamVector> {
    let lower = text.to_ascii_lowercase();
    let at = lower.find("init")?;
    let body = text[at + 4..].trim_start_matches([':', '=', ' ']);
    let body = body.trim_matches(|c: char| matches!(c, '(' | ')' | '[' | ']' | '{' | '}' | ' '));
    body.parse().ok().filter(|p: &ParamVector| !p.is_empty())
}

/// Parses a single free-form line.
pub fn parse_suggestion_line(line: &str) -> Result<Suggestion, ParseError> {
    let line = strip_decoration(line);
    let (model_part, init) = match line.split_once(';').or_else(|| line.split_once('|')) {
        Some((m, rest)) => (m, parse_init(rest)),
        None => (line, None),
    };
    let start = model_part.find("dS").unwrap_or(0);
    let mut body = model_part[start..].trim_end_matches(['.', ',', ' ', '$']).to_string();
    // LaTeX display delimiters.
    for d in ["\\]", "\\)", "\\[", "\\("] {
        body = body.replace(d, "");
    }
    let mut model = parse_model(&normalize_model_text(&body))?;
    model.source = line.to_string();
    Ok(Suggestion { model, init })
}

fn looks_like_model(line: &str) -> bool {
    line.contains("dS") && line.contains('=') && line.contains("dt")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no parseable models in suggestions ({candidates} model-like lines rejected)")]
pub struct EmptySuggestions {
    pub candidates: usize,
}

/// Extracts every parseable model from agent output, one per line. Lines
/// that look like models but fail to parse are skipped.
pub fn parse_suggestions(text: &str) -> Result<Vec<SdeModel>, EmptySuggestions> {
    let detailed = parse_suggestions_detailed(text);
    let candidates = detailed.len();
    let models: Vec<SdeModel> = detailed.into_iter().filter_map(|(_, r)| r.ok().map(|s| s.model)).collect();
    if models.is_empty() {
        Err(EmptySuggestions { candidates })
    } else {
        Ok(models)
    }
}

/// Like [`parse_suggestions`] but keeps initial guesses and per-line errors.
pub fn parse_suggestions_detailed(text: &str) -> Vec<(String, Result<Suggestion, ParseError>)> {
    text.lines().filter(|l| looks_like_model(l)).map(|l| (l.trim().to_string(), parse_suggestion_line(l))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(s: &str) -> String {
        parse_suggestion_line(s).unwrap().model.render()
    }

    #[test]
    fn latex_and_implicit_products() {
        assert_eq!(norm(r"dS = a(b-S) dt + c\sqrt{S} dW"), "dS = a*(b - S) dt + c*sqrt(S) dW");
        assert_eq!(norm(r"dS = kS(1-S) dt + mS^{1/2} dW"), "dS = k*S*(1 - S) dt + m*S^0.5 dW");
        assert_eq!(norm(r"dS = aS(b-\ln(S)) dt + cS dW"), "dS = a*S*(b - log(S)) dt + c*S dW");
        assert_eq!(norm(r"dS = a\exp(-bS)dt + c\cdot S/(1+S^2) dW"), "dS = a*exp(-b*S) dt + c*S/(1 + S^2) dW");
        assert_eq!(norm(r"dS = a\tanh(bS) dt + cS dW"), "dS = a*tanh(b*S) dt + c*S dW");
    }

    #[test]
    fn unicode_forms() {
        assert_eq!(norm("dS = a·S dt + b√S dW"), "dS = a*S dt + b*sqrt(S) dW");
        assert_eq!(norm("dS = a(b − S²) dt"), "dS = a*(b - S^2) dt");
        assert_eq!(norm("dS = k×S dt + m√(1+S) dW"), "dS = k*S dt + m*sqrt(1 + S) dW");
    }

    #[test]
    fn decorations_and_init() {
        let s =
            parse_suggestion_line("3. $dS_t = a(b - S_t) dt + c\\sqrt{S_t} dW_t$ ; init: a=0.5, b=100, c=1").unwrap();
        assert_eq!(s.model.render(), "dS = a*(b - S) dt + c*sqrt(S) dW");
        let init = s.init.unwrap();
        assert_eq!(init.get("b"), Some(100.0));
    }

    #[test]
    fn skips_prose_and_bad_lines() {
        let text = "Here are some models:\n1. dS = a*S dt + b*S dW\nnot a model\n2. dS = a*( dt\n";
        let ms = parse_suggestions(text).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(parse_suggestions("no equations here"), Err(EmptySuggestions { candidates: 0 }));
    }
}

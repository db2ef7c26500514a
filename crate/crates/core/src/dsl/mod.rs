//! The model language: `dS = <drift> dt [+ <diffusion> dW] [+ [<coef>] dJ]`.
//!
//! [`parse_model`] is strict and needs explicit `*`. Free-form agent text
//! goes through [`normalize`] first.

mod lexer;
pub mod normalize;
mod parser;
mod render;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use normalize::{
    normalize_model_text, parse_suggestion_line, parse_suggestions, parse_suggestions_detailed, EmptySuggestions,
    Suggestion, NORMALIZATION_VERSION,
};
pub use parser::parse_model;

pub const JUMP_PARAMS: [&str; 3] = ["lambda", "mu_j", "sigma_j"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Log,
    Exp,
    Sin,
    Cos,
    Tanh,
    Arctan,
    Abs,
    Neg,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Arctan => "arctan",
            Func::Abs => "abs",
            Func::Neg => "neg",
        }
    }

    /// Named functions callable from the DSL (everything but `Neg`).
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "arctan" => Func::Arctan,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sqrt => x.sqrt(),
            Func::Log => x.ln(),
            Func::Exp => x.exp(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tanh => x.tanh(),
            Func::Arctan => x.atan(),
            Func::Abs => x.abs(),
            Func::Neg => -x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn label(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Pow => "pow",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(b),
        }
    }
}

/// Expression tree over the state `S`, time `t`, constants and parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Param(char),
    State,
    Time,
    Unary(Func, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn unary(f: Func, e: Expr) -> Expr {
        Expr::Unary(f, Box::new(e))
    }

    pub fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn params_into(&self, out: &mut BTreeSet<char>) {
        match self {
            Expr::Param(c) => {
                out.insert(*c);
            }
            Expr::Unary(_, e) => e.params_into(out),
            Expr::Binary(_, l, r) => {
                l.params_into(out);
                r.params_into(out);
            }
            Expr::Const(_) | Expr::State | Expr::Time => {}
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Unary(_, e) => 1 + e.node_count(),
            Expr::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
            _ => 1,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render::render_expr(self))
    }
}

/// A parsed SDE. Equality is structural and ignores the source text.
#[derive(Debug, Clone)]
pub struct SdeModel {
    pub drift: Expr,
    pub diffusion: Option<Expr>,
    /// Jump coefficient; a bare `dJ` is stored as `S`.
    pub jump: Option<Expr>,
    pub source: String,
}

impl PartialEq for SdeModel {
    fn eq(&self, other: &Self) -> bool {
        self.drift == other.drift && self.diffusion == other.diffusion && self.jump == other.jump
    }
}

impl SdeModel {
    /// Parameter names: letters in alphabetical order, then the jump
    /// parameters when a jump term is present.
    pub fn parameters(&self) -> Vec<String> {
        let mut letters = BTreeSet::new();
        self.drift.params_into(&mut letters);
        for e in self.diffusion.iter().chain(self.jump.iter()) {
            e.params_into(&mut letters);
        }
        let mut names: Vec<String> = letters.into_iter().map(String::from).collect();
        if self.jump.is_some() {
            names.extend(JUMP_PARAMS.iter().map(|s| s.to_string()));
        }
        names
    }

    pub fn has_jump(&self) -> bool {
        self.jump.is_some()
    }

    /// Canonical text: explicit `*`, minimal parentheses.
    pub fn render(&self) -> String {
        render::render_model(self)
    }

    /// Terms in graph order: drift, diffusion, jump.
    pub fn terms(&self) -> Vec<(&'static str, &Expr)> {
        let mut v = vec![("drift", &self.drift)];
        if let Some(d) = &self.diffusion {
            v.push(("diffusion", d));
        }
        if let Some(j) = &self.jump {
            v.push(("jump", j));
        }
        v
    }
}

impl fmt::Display for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl std::str::FromStr for SdeModel {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_model(s)
    }
}

impl Serialize for SdeModel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for SdeModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_model(&text).map_err(serde::de::Error::custom)
    }
}

/// Positions are 0-based character offsets into the input.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at column {column}: expected {expected}, found {found}")]
    Syntax { column: usize, expected: String, found: String },
    #[error("unknown identifier '{name}' at column {column}")]
    UnknownIdentifier { column: usize, name: String },
    #[error("'{name}' at column {column} is reserved and cannot be a parameter")]
    ReservedParameter { column: usize, name: char },
    #[error("empty drift term at column {column}")]
    EmptyDrift { column: usize },
}

impl ParseError {
    pub fn column(&self) -> usize {
        match self {
            ParseError::Syntax { column, .. }
            | ParseError::UnknownIdentifier { column, .. }
            | ParseError::ReservedParameter { column, .. }
            | ParseError::EmptyDrift { column } => *column,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cev_parameters_and_render() {
        let m = parse_model("dS = a*S dt + b*S^c dW").unwrap();
        assert_eq!(m.parameters(), vec!["a", "b", "c"]);
        assert_eq!(m.render(), "dS = a*S dt + b*S^c dW");
    }

    #[test]
    fn cir_round_trip() {
        let m = parse_model("dS = a*(b - S) dt + c*sqrt(S) dW").unwrap();
        assert_eq!(m.render(), "dS = a*(b - S) dt + c*sqrt(S) dW");
        assert_eq!(parse_model(&m.render()).unwrap(), m);
    }

    #[test]
    fn dangling_operator_reports_offset_of_dt() {
        let err = parse_model("dS = a* dt").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }), "{err:?}");
        assert_eq!(err.column(), 8);
    }

    #[test]
    fn reserved_lowercase_s() {
        let err = parse_model("dS = s*S dt").unwrap_err();
        assert!(matches!(err, ParseError::ReservedParameter { name: 's', .. }));
    }

    #[test]
    fn empty_drift() {
        assert!(matches!(parse_model("dS = dt + b*S dW").unwrap_err(), ParseError::EmptyDrift { .. }));
    }

    #[test]
    fn jump_terms() {
        let m = parse_model("dS = a*S dt + b*S dW + dJ").unwrap();
        assert_eq!(m.jump, Some(Expr::State));
        assert_eq!(m.render(), "dS = a*S dt + b*S dW + S dJ");
        assert_eq!(m.parameters(), vec!["a", "b", "lambda", "mu_j", "sigma_j"]);
        let m2 = parse_model("dS = a*S dt + c dJ").unwrap();
        assert!(m2.diffusion.is_none());
        assert_eq!(m2.parameters(), vec!["a", "c", "lambda", "mu_j", "sigma_j"]);
    }

    #[test]
    fn equality_ignores_source_text() {
        let a = parse_model("dS = a*S dt").unwrap();
        let b = parse_model("dS   =   a * S   dt").unwrap();
        assert_eq!(a, b);
        assert_ne!(a.source, b.source);
    }

    #[test]
    fn serde_uses_canonical_text() {
        let m = parse_model("dS = a*(b-S) dt + c*sqrt(S) dW").unwrap();
        let js = serde_json::to_string(&m).unwrap();
        assert_eq!(js, "\"dS = a*(b - S) dt + c*sqrt(S) dW\"");
        let back: SdeModel = serde_json::from_str(&js).unwrap();
        assert_eq!(back, m);
    }
}

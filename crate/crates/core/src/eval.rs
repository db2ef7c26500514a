//! Expression evaluation. [`eval_term`] is the reference tree walker with
//! descriptive errors; [`CompiledExpr`] is the postfix form used in the
//! simulation hot loop. Both reject any non-finite intermediate value.

use crate::dsl::{BinOp, Expr, Func, SdeModel};
use crate::params::ParamVector;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("parameter '{0}' has no value")]
    UnboundParameter(String),
    #[error("division by zero in '{subexpr}'")]
    DivisionByZero { subexpr: String },
    #[error("non-finite value in '{subexpr}'")]
    Domain { subexpr: String },
}

/// Evaluates `expr` at state `s` and time `t`.
pub fn eval_term(expr: &Expr, params: &ParamVector, s: f64, t: f64) -> Result<f64, EvalError> {
    let v = match expr {
        Expr::Const(c) => *c,
        Expr::Param(c) => params.get(&c.to_string()).ok_or_else(|| EvalError::UnboundParameter(c.to_string()))?,
        Expr::State => s,
        Expr::Time => t,
        Expr::Unary(f, x) => f.apply(eval_term(x, params, s, t)?),
        Expr::Binary(op, l, r) => {
            let a = eval_term(l, params, s, t)?;
            let b = eval_term(r, params, s, t)?;
            if *op == BinOp::Div && b == 0.0 {
                return Err(EvalError::DivisionByZero { subexpr: expr.to_string() });
            }
            op.apply(a, b)
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::Domain { subexpr: expr.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Param(usize),
    State,
    Time,
    Unary(Func),
    Binary(BinOp),
}

/// Postfix program over a positional parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    ops: Vec<Op>,
}

impl CompiledExpr {
    /// `names` fixes the position of each parameter in the `theta` slice.
    pub fn compile(expr: &Expr, names: &[String]) -> Result<Self, EvalError> {
        let mut ops = Vec::with_capacity(expr.node_count());
        emit(expr, names, &mut ops)?;
        Ok(Self { ops })
    }

    /// Returns `None` on division by zero or any non-finite intermediate.
    #[inline]
    pub fn eval(&self, theta: &[f64], s: f64, t: f64, stack: &mut Vec<f64>) -> Option<f64> {
        stack.clear();
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::Param(i) => theta[i],
                Op::State => s,
                Op::Time => t,
                Op::Unary(f) => {
                    let x = stack.pop()?;
                    f.apply(x)
                }
                Op::Binary(b) => {
                    let r = stack.pop()?;
                    let l = stack.pop()?;
                    if b == BinOp::Div && r == 0.0 {
                        return None;
                    }
                    b.apply(l, r)
                }
            };
            if !v.is_finite() {
                return None;
            }
            stack.push(v);
        }
        stack.pop()
    }
}

fn emit(e: &Expr, names: &[String], ops: &mut Vec<Op>) -> Result<(), EvalError> {
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Param(c) => {
            let name = c.to_string();
            let i = names.iter().position(|n| *n == name).ok_or(EvalError::UnboundParameter(name))?;
            ops.push(Op::Param(i));
        }
        Expr::State => ops.push(Op::State),
        Expr::Time => ops.push(Op::Time),
        Expr::Unary(f, x) => {
            emit(x, names, ops)?;
            ops.push(Op::Unary(*f));
        }
        Expr::Binary(b, l, r) => {
            emit(l, names, ops)?;
            emit(r, names, ops)?;
            ops.push(Op::Binary(*b));
        }
    }
    Ok(())
}

/// All terms of a model compiled against its parameter order.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub names: Vec<String>,
    pub drift: CompiledExpr,
    pub diffusion: Option<CompiledExpr>,
    pub jump: Option<CompiledExpr>,
    /// Indices of lambda, mu_j, sigma_j when the model jumps.
    pub jump_idx: Option<[usize; 3]>,
}

impl CompiledModel {
    pub fn new(model: &SdeModel) -> Result<Self, EvalError> {
        let names = model.parameters();
        let c = |e: &Expr| CompiledExpr::compile(e, &names);
        let jump_idx = model.jump.as_ref().map(|_| {
            let pos = |n: &str| names.iter().position(|x| x == n).unwrap_or(0);
            [pos("lambda"), pos("mu_j"), pos("sigma_j")]
        });
        Ok(Self {
            drift: c(&model.drift)?,
            diffusion: model.diffusion.as_ref().map(c).transpose()?,
            jump: model.jump.as_ref().map(c).transpose()?,
            jump_idx,
            names,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;
    use proptest::prelude::*;

    fn p(pairs: &[(&str, f64)]) -> ParamVector {
        pairs.iter().map(|(k, v)| (*k, *v)).collect()
    }

    #[test]
    fn cir_drift_value() {
        let m = parse_model("dS = a*(b - S) dt + c*sqrt(S) dW").unwrap();
        let v = eval_term(&m.drift, &p(&[("a", 0.5), ("b", 100.0)]), 90.0, 0.0).unwrap();
        assert!((v - 5.0).abs() < 1e-12);
    }

    #[test]
    fn domain_errors_name_the_subexpression() {
        let m = parse_model("dS = log(S - b) dt + c/(S - b) dW").unwrap();
        let params = p(&[("b", 1.0), ("c", 1.0)]);
        match eval_term(&m.drift, &params, 0.5, 0.0) {
            Err(EvalError::Domain { subexpr }) => assert_eq!(subexpr, "log(S - b)"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            eval_term(m.diffusion.as_ref().unwrap(), &params, 1.0, 0.0),
            Err(EvalError::DivisionByZero { .. })
        ));
        assert!(matches!(eval_term(&m.drift, &ParamVector::new(), 2.0, 0.0), Err(EvalError::UnboundParameter(_))));
    }

    // Independent oracle: a direct closed-form transcription of each model.
    fn oracle(k: usize, a: f64, b: f64, c: f64, s: f64) -> f64 {
        match k {
            0 => a * s + b * s.powf(c),
            1 => a * (b - s) + c * s.sqrt(),
            2 => a * s * (b - s.ln()) / (1.0 + s * s),
            3 => a * (b * s).tanh() - c.abs() * (-s).exp(),
            4 => a / (1.0 + (-b * s).exp()) + (c * s).atan() * s.sin().cos(),
            // unary minus binds tighter than ^ in the grammar
            _ => (-(a * s)).powf(2.0) + s.powf(b) / c,
        }
    }

    const FORMS: [&str; 6] = [
        "dS = a*S + b*S^c dt",
        "dS = a*(b - S) + c*sqrt(S) dt",
        "dS = a*S*(b - log(S))/(1 + S*S) dt",
        "dS = a*tanh(b*S) - abs(c)*exp(-S) dt",
        "dS = a/(1 + exp(-b*S)) + arctan(c*S)*cos(sin(S)) dt",
        "dS = -(a*S)^2 + S^b/c dt",
    ];

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn matches_oracle(k in 0usize..6, a in -2.0f64..2.0, b in 0.1f64..2.0, c in 0.2f64..2.0, s in 0.1f64..50.0) {
            let m = parse_model(FORMS[k]).unwrap();
            let params = p(&[("a", a), ("b", b), ("c", c)]);
            let want = oracle(k, a, b, c, s);
            let got = eval_term(&m.drift, &params, s, 0.0).unwrap();
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {}", got, want);
            let compiled = CompiledExpr::compile(&m.drift, &m.parameters()).unwrap();
            let theta = params.ordered(&m.parameters()).unwrap();
            let fast = compiled.eval(&theta, s, 0.0, &mut Vec::new()).unwrap();
            prop_assert_eq!(fast, got);
        }
    }
}

use super::{BinOp, Expr, Func, SdeModel};

// Binding strength used to decide where parentheses are needed.
const P_ADD: u8 = 1;
const P_MUL: u8 = 2;
const P_BASE: u8 = 4;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => P_ADD,
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => P_MUL,
        Expr::Binary(BinOp::Pow, ..) => 3,
        Expr::Const(v) if *v < 0.0 => P_ADD,
        _ => P_BASE,
    }
}

fn wrap(e: &Expr, need: bool) -> String {
    let s = render_expr(e);
    if need {
        format!("({s})")
    } else {
        s
    }
}

fn number(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn render_expr(e: &Expr) -> String {
    match e {
        Expr::Const(v) => number(*v),
        Expr::Param(c) => c.to_string(),
        Expr::State => "S".into(),
        Expr::Time => "t".into(),
        Expr::Unary(Func::Neg, x) => format!("-{}", wrap(x, prec(x) < P_BASE)),
        Expr::Unary(f, x) => format!("{}({})", f.name(), render_expr(x)),
        Expr::Binary(op, l, r) => match op {
            BinOp::Add | BinOp::Sub => {
                let sym = if *op == BinOp::Add { "+" } else { "-" };
                format!("{} {sym} {}", wrap(l, prec(l) < P_ADD), wrap(r, prec(r) <= P_ADD))
            }
            BinOp::Mul | BinOp::Div => {
                let sym = if *op == BinOp::Mul { "*" } else { "/" };
                format!("{}{sym}{}", wrap(l, prec(l) < P_MUL), wrap(r, prec(r) <= P_MUL))
            }
            BinOp::Pow => {
                let exp = match r.as_ref() {
                    Expr::Const(v) if *v >= 0.0 => number(*v),
                    Expr::Param(c) => c.to_string(),
                    other => format!("({})", render_expr(other)),
                };
                format!("{}^{exp}", wrap(l, prec(l) < P_BASE))
            }
        },
    }
}

pub(crate) fn render_model(m: &SdeModel) -> String {
    let mut s = format!("dS = {} dt", render_expr(&m.drift));
    if let Some(d) = &m.diffusion {
        s.push_str(&format!(" + {} dW", render_expr(d)));
    }
    if let Some(j) = &m.jump {
        s.push_str(&format!(" + {} dJ", render_expr(j)));
    }
    s
}

#[cfg(test)]
mod tests {
    use crate::dsl::parse_model;

    fn canon(s: &str) -> String {
        parse_model(s).unwrap().render()
    }

    #[test]
    fn minimal_parentheses() {
        assert_eq!(canon("dS = ((a*S)) dt"), "dS = a*S dt");
        assert_eq!(canon("dS = a*S/(1 + S^2) dt"), "dS = a*S/(1 + S^2) dt");
        assert_eq!(canon("dS = a - (b - S) dt"), "dS = a - (b - S) dt");
        assert_eq!(canon("dS = (a - b) - S dt"), "dS = a - b - S dt");
        assert_eq!(canon("dS = a/(b*S) dt"), "dS = a/(b*S) dt");
        assert_eq!(canon("dS = -(a*S) dt"), "dS = -(a*S) dt");
        assert_eq!(canon("dS = -S^2 dt"), "dS = -S^2 dt");
        assert_eq!(canon("dS = (S^2)^a dt"), "dS = (S^2)^a dt");
        assert_eq!(canon("dS = 0.5*exp(-b*S) dt"), "dS = 0.5*exp(-b*S) dt");
    }
}

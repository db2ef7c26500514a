use super::lexer::{tokenize, Spanned, Tok};
use super::{BinOp, Expr, Func, ParseError, SdeModel};

/// Parses strict DSL text into an [`SdeModel`].
pub fn parse_model(text: &str) -> Result<SdeModel, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, i: 0 };
    p.expect(Tok::DS, "'dS'")?;
    p.expect(Tok::Eq, "'='")?;
    if p.peek() == &Tok::Dt {
        return Err(ParseError::EmptyDrift { column: p.pos() });
    }
    let drift = p.expr()?;
    p.expect(Tok::Dt, "'dt'")?;

    let mut diffusion = None;
    let mut jump = None;
    if p.eat(&Tok::Plus) {
        if p.eat(&Tok::DJ) {
            jump = Some(Expr::State);
        } else {
            let e = p.expr()?;
            match p.peek() {
                Tok::DW => {
                    p.bump();
                    diffusion = Some(e);
                }
                Tok::DJ => {
                    p.bump();
                    jump = Some(e);
                }
                _ => return Err(p.unexpected("'dW' or 'dJ'")),
            }
        }
    }
    if diffusion.is_some() && p.eat(&Tok::Plus) {
        if p.eat(&Tok::DJ) {
            jump = Some(Expr::State);
        } else {
            jump = Some(p.expr()?);
            p.expect(Tok::DJ, "'dJ'")?;
        }
    }
    if p.peek() != &Tok::End {
        return Err(p.unexpected("end of input"));
    }
    Ok(SdeModel { drift, diffusion, jump, source: text.to_string() })
}

struct Parser {
    toks: Vec<Spanned>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].tok.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        ParseError::Syntax { column: self.pos(), expected: expected.to_string(), found: self.peek().describe() }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), ParseError> {
        if self.eat(&t) {
            Ok(())
        } else {
            Err(self.unexpected(what))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.base()?;
        if self.eat(&Tok::Caret) {
            let exp = match self.peek() {
                Tok::Num(v) => Expr::Const(*v),
                Tok::Param(c) => Expr::Param(*c),
                _ => return Err(self.unexpected("number or parameter exponent")),
            };
            self.bump();
            return Ok(Expr::binary(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::Param(c) => {
                self.bump();
                Ok(Expr::Param(c))
            }
            Tok::State => {
                self.bump();
                Ok(Expr::State)
            }
            Tok::Time => {
                self.bump();
                Ok(Expr::Time)
            }
            Tok::Func(f) => {
                self.bump();
                self.expect(Tok::LParen, "'('")?;
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(Expr::unary(f, inner))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Minus => {
                self.bump();
                Ok(Expr::unary(Func::Neg, self.base()?))
            }
            _ => Err(self.unexpected("operand")),
        }
    }
}

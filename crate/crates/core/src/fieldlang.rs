//! A small expression language for scalar fields on the torus.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" [ "-" ] integer ] ;
//! primary = number | "pi" | variable | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "exp" ;
//! variable = "x" integer ;            (* x1 .. xn *)
//! ```

use std::fmt;

use thiserror::Error;

use crate::grid::{PeriodicGrid, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    /// 1-based variable index: `Var(1)` is `x1`.
    Var(usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: expected {expected}, found {found}")]
    Syntax {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("variable x{index} used on a grid of dimension {dim}")]
    Dimension { index: usize, dim: usize },
    #[error("evaluation failed at node {node}: {message}")]
    Eval { node: usize, message: String },
}

impl Expr {
    /// Largest variable index used, 0 if none.
    pub fn max_variable(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Pi => 0,
            Expr::Var(i) => *i,
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => e.max_variable(),
            Expr::Binary(_, a, b) => a.max_variable().max(b.max_variable()),
        }
    }

    /// Evaluates at a point; `Err` carries a message for division by zero.
    pub fn eval_at(&self, x: &[f64]) -> Result<f64, String> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(i) => x[i - 1],
            Expr::Neg(e) => -e.eval_at(x)?,
            Expr::Pow(e, k) => e.eval_at(x)?.powi(*k),
            Expr::Call(f, e) => f.apply(e.eval_at(x)?),
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.eval_at(x)?, b.eval_at(x)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err("division by zero".into());
                        }
                        a / b
                    }
                }
            }
        })
    }
}

/// Canonical form: every compound subexpression parenthesized, literals in
/// shortest round-trip notation.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Pi => write!(f, "pi"),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Pow(e, k) => write!(f, "({e}^{k})"),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "number {v}"),
            Token::Ident(s) => write!(f, "'{s}'"),
            Token::Sym(c) => write!(f, "'{c}'"),
            Token::End => write!(f, "end of input"),
        }
    }
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
    token: Token,
    token_start: usize,
}

fn syntax(offset: usize, expected: &str, found: impl fmt::Display) -> ExprError {
    ExprError::Syntax {
        offset,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self, ExprError> {
        let mut p = Self {
            text,
            pos: 0,
            token: Token::End,
            token_start: 0,
        };
        p.advance()?;
        Ok(p)
    }

    fn advance(&mut self) -> Result<(), ExprError> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.token_start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            self.token = Token::End;
            return Ok(());
        };
        if c.is_ascii_digit() || c == b'.' {
            self.token = Token::Num(self.number()?);
        } else if c.is_ascii_alphabetic() {
            let start = self.pos;
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_alphanumeric() {
                self.pos += 1;
            }
            self.token = Token::Ident(self.text[start..self.pos].to_string());
        } else if b"+-*/^()".contains(&c) {
            self.pos += 1;
            self.token = Token::Sym(c as char);
        } else {
            let ch = self.text[self.pos..].chars().next().unwrap_or('?');
            return Err(syntax(self.pos, "a number, name, operator or parenthesis", format!("'{ch}'")));
        }
        Ok(())
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        let bytes = self.text.as_bytes();
        let start = self.pos;
        let digits = |pos: &mut usize| {
            let from = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            *pos - from
        };
        let mut count = digits(&mut self.pos);
        if bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            count += digits(&mut self.pos);
        }
        if count == 0 {
            return Err(syntax(start, "digits", "'.'"));
        }
        if matches!(bytes.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(bytes.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(&mut self.pos) == 0 {
                return Err(syntax(mark, "exponent digits", "malformed exponent"));
            }
        }
        let literal = &self.text[start..self.pos];
        let value: f64 = literal
            .parse()
            .map_err(|_| syntax(start, "a number", format!("'{literal}'")))?;
        if !value.is_finite() {
            return Err(syntax(start, "a finite number", format!("'{literal}'")));
        }
        Ok(value)
    }

    fn eat(&mut self, c: char) -> Result<bool, ExprError> {
        if self.token == Token::Sym(c) {
            self.advance()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn expect(&mut self, c: char, expected: &str) -> Result<(), ExprError> {
        if self.eat(c)? {
            Ok(())
        } else {
            Err(syntax(self.token_start, expected, &self.token))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.token {
                Token::Sym('+') => BinOp::Add,
                Token::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.token {
                Token::Sym('*') => BinOp::Mul,
                Token::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let at = self.token_start;
            let rhs = self.unary()?;
            if op == BinOp::Div && rhs == Expr::Num(0.0) {
                return Err(syntax(at, "a nonzero denominator", "literal 0"));
            }
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat('-')? {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if !self.eat('^')? {
            return Ok(base);
        }
        let negative = self.eat('-')?;
        let at = self.token_start;
        let literal = &self.text[at..self.pos];
        match self.token {
            Token::Num(_) if literal.bytes().all(|b| b.is_ascii_digit()) => {
                let k: i32 = literal
                    .parse()
                    .map_err(|_| syntax(at, "an exponent that fits in 32 bits", format!("'{literal}'")))?;
                self.advance()?;
                Ok(Expr::Pow(Box::new(base), if negative { -k } else { k }))
            }
            _ => Err(syntax(at, "an integer exponent", &self.token)),
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let at = self.token_start;
        match self.token.clone() {
            Token::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Token::Sym('(') => {
                self.advance()?;
                let inner = self.expr()?;
                self.expect(')', "')'")?;
                Ok(inner)
            }
            Token::Ident(name) => {
                self.advance()?;
                let func = match name.as_str() {
                    "pi" => return Ok(Expr::Pi),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    _ => return variable(&name, at),
                };
                self.expect('(', &format!("'(' after {name}"))?;
                let arg = self.expr()?;
                self.expect(')', "')'")?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            other => Err(syntax(at, "a number, variable, function or '('", other)),
        }
    }
}

fn variable(name: &str, at: usize) -> Result<Expr, ExprError> {
    let index = name
        .strip_prefix('x')
        .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&i| i >= 1);
    index
        .map(Expr::Var)
        .ok_or_else(|| syntax(at, "pi, sin, cos, exp or a variable x1, x2, ...", format!("'{name}'")))
}

pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    if p.token != Token::End {
        return Err(syntax(p.token_start, "an operator or end of input", &p.token));
    }
    Ok(e)
}

/// Samples `e` at every node of `g`.
pub fn eval_field(e: &Expr, g: &PeriodicGrid) -> Result<ScalarField, ExprError> {
    let needed = e.max_variable();
    if needed > g.dim() {
        return Err(ExprError::Dimension {
            index: needed,
            dim: g.dim(),
        });
    }
    let mut values = Vec::with_capacity(g.len());
    for node in 0..g.len() {
        let value = e
            .eval_at(&g.coordinates(node))
            .map_err(|message| ExprError::Eval { node, message })?;
        if !value.is_finite() {
            return Err(ExprError::Eval {
                node,
                message: format!("non-finite value {value}"),
            });
        }
        values.push(value);
    }
    Ok(ScalarField::from_values_unchecked(g, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn num(v: f64) -> Box<Expr> {
        Box::new(Expr::Num(v))
    }

    fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    #[test]
    fn spec_shapes() {
        let e = parse("0.01*cos(2*pi*x1)").unwrap();
        let expected = Expr::Binary(
            BinOp::Mul,
            num(0.01),
            Box::new(Expr::Call(
                Func::Cos,
                Box::new(bin(BinOp::Mul, bin(BinOp::Mul, Expr::Num(2.0), Expr::Pi), Expr::Var(1))),
            )),
        );
        assert_eq!(e, expected);
        assert_eq!(
            parse("1+2*3").unwrap(),
            bin(BinOp::Add, Expr::Num(1.0), bin(BinOp::Mul, Expr::Num(2.0), Expr::Num(3.0)))
        );
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(parse("-x1^2").unwrap(), Expr::Neg(Box::new(Expr::Pow(Box::new(Expr::Var(1)), 2))));
        assert_eq!(
            parse("1-2-3").unwrap(),
            bin(BinOp::Sub, bin(BinOp::Sub, Expr::Num(1.0), Expr::Num(2.0)), Expr::Num(3.0))
        );
        assert_eq!(
            parse("8/4/2").unwrap().eval_at(&[]).unwrap(),
            1.0
        );
        assert_eq!(parse("x2^-2").unwrap(), Expr::Pow(Box::new(Expr::Var(2)), -2));
        assert_eq!(parse(" 2.5e-1 ").unwrap(), Expr::Num(0.25));
        assert_eq!(parse("1E2+.5").unwrap().eval_at(&[]).unwrap(), 100.5);
    }

    fn offset(text: &str) -> usize {
        match parse(text).unwrap_err() {
            ExprError::Syntax { offset, .. } => offset,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let text = "cos(2*pi*x3";
        assert_eq!(offset(text), text.len());
        let ExprError::Syntax { expected, found, .. } = parse(text).unwrap_err() else {
            unreachable!()
        };
        assert_eq!(expected, "')'");
        assert_eq!(found, "end of input");
        assert_eq!(offset("1 + * 2"), 4);
        assert_eq!(offset("x1 / 0"), 5);
        assert_eq!(offset("x0"), 0);
        assert_eq!(offset("tan(x1)"), 0);
        assert_eq!(offset("x1^1.5"), 3);
        assert_eq!(offset("2^x1"), 2);
        assert_eq!(offset("1e"), 1);
        assert_eq!(offset("3 $"), 2);
        assert_eq!(offset("(1"), 2);
        assert_eq!(offset("1 2"), 2);
        assert_eq!(offset(""), 0);
        assert_eq!(offset("1e999"), 0);
    }

    #[test]
    fn evaluation_on_grids() {
        let g = PeriodicGrid::uniform(2, 8).unwrap();
        assert_eq!(eval_field(&parse("0").unwrap(), &g).unwrap().sup_norm(), 0.0);
        let f = eval_field(&parse("cos(2*pi*x1)+cos(2*pi*x2)").unwrap(), &g).unwrap();
        for node in 0..g.len() {
            let x = g.coordinates(node);
            assert_eq!(f.values()[node], (2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos());
        }
        let saw = eval_field(&parse("x1").unwrap(), &PeriodicGrid::uniform(1, 16).unwrap()).unwrap();
        assert!(saw.values().iter().enumerate().all(|(k, &v)| v == k as f64 / 16.0));
        assert_eq!(
            eval_field(&parse("x3").unwrap(), &g).unwrap_err(),
            ExprError::Dimension { index: 3, dim: 2 }
        );
        assert!(matches!(
            eval_field(&parse("1/x1").unwrap(), &g).unwrap_err(),
            ExprError::Eval { node: 0, .. }
        ));
        assert!(matches!(
            eval_field(&parse("exp(1000*x1)").unwrap(), &g).unwrap_err(),
            ExprError::Eval { .. }
        ));
    }

    #[test]
    fn canonical_printer() {
        let e = parse("-x1^2 + 3*sin(x2)/2 - 1e-3").unwrap();
        assert_eq!(e.to_string(), "(((-(x1^2)) + ((3.0 * sin(x2)) / 2.0)) - 0.001)");
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..1e6).prop_map(Expr::Num),
            Just(Expr::Pi),
            (1usize..4).prop_map(Expr::Var),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (inner.clone(), -4i32..5).prop_map(|(e, k)| Expr::Pow(Box::new(e), k)),
                (prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp)], inner.clone())
                    .prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
                (
                    prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div)],
                    inner.clone(),
                    inner
                )
                    .prop_filter("literal zero denominator", |(op, _, b)| {
                        !(*op == BinOp::Div && *b == Expr::Num(0.0))
                    })
                    .prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = parse(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e);
            prop_assert_eq!(reparsed.to_string(), printed);
        }
    }
}

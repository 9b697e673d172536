//! Infix formulas used by the benchmark registry.
//!
//! Registry rows are stored as plain infix text (`sin(x1^2)*cos(x1)-1`) and
//! compiled into closures. Where a formula only uses operators the token
//! vocabulary covers, it is also lowered to a preorder tree with numeric
//! literals turned into constant slots and integer powers expanded into
//! multiplication chains.

use std::fmt;

use thiserror::Error;

use crate::expr::{BinaryOp, ExprTree, UnaryOp, MAX_VOCAB_VARS};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cannot parse formula `{input}`: {reason}")]
pub struct FormulaError {
    pub input: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Abs,
    /// `harmonic(x) = Σ_{k=1}^{floor(x)} 1/k`.
    Harmonic,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "harmonic" => Func::Harmonic,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Harmonic => "harmonic",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Tanh => v.tanh(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
            Func::Harmonic => {
                if !v.is_finite() || v < 1.0 {
                    return 0.0;
                }
                (1..=v.floor() as u64).map(|k| 1.0 / k as f64).sum()
            }
        }
    }

    fn to_unary(self) -> Option<UnaryOp> {
        Some(match self {
            Func::Sin => UnaryOp::Sin,
            Func::Cos => UnaryOp::Cos,
            Func::Exp => UnaryOp::Exp,
            Func::Log => UnaryOp::Log,
            Func::Sqrt => UnaryOp::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfixOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Num(f64),
    Var(u8),
    Neg(Box<Formula>),
    Bin(InfixOp, Box<Formula>, Box<Formula>),
    Call(Func, Box<Formula>),
}

impl Formula {
    pub fn parse(src: &str) -> Result<Formula, FormulaError> {
        let tokens = lex(src).map_err(|reason| FormulaError { input: src.into(), reason })?;
        let mut p = Parser { tokens, pos: 0 };
        let f = p.expr().map_err(|reason| FormulaError { input: src.into(), reason })?;
        if p.pos != p.tokens.len() {
            return Err(FormulaError { input: src.into(), reason: format!("unexpected {:?}", p.tokens[p.pos]) });
        }
        Ok(f)
    }

    /// Evaluate at one point; `row[i]` holds `x{i+1}`. May return NaN or inf.
    pub fn eval(&self, row: &[f64]) -> f64 {
        match self {
            Formula::Num(v) => *v,
            Formula::Var(i) => row.get(*i as usize - 1).copied().unwrap_or(f64::NAN),
            Formula::Neg(a) => -a.eval(row),
            Formula::Bin(op, a, b) => {
                let (a, b) = (a.eval(row), b.eval(row));
                match op {
                    InfixOp::Add => a + b,
                    InfixOp::Sub => a - b,
                    InfixOp::Mul => a * b,
                    InfixOp::Div => a / b,
                    InfixOp::Pow => pow(a, b),
                }
            }
            Formula::Call(f, a) => f.apply(a.eval(row)),
        }
    }

    pub fn max_var(&self) -> u8 {
        match self {
            Formula::Num(_) => 0,
            Formula::Var(i) => *i,
            Formula::Neg(a) | Formula::Call(_, a) => a.max_var(),
            Formula::Bin(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    /// Lower to a preorder tree plus the literal values of its constant slots.
    pub fn to_tree(&self) -> Option<(ExprTree, Vec<f64>)> {
        let mut consts = Vec::new();
        let tree = self.lower(&mut consts)?;
        Some((tree, consts))
    }

    fn lower(&self, consts: &mut Vec<f64>) -> Option<ExprTree> {
        let constant = |consts: &mut Vec<f64>, v: f64| {
            consts.push(v);
            ExprTree::Const(consts.len() - 1)
        };
        Some(match self {
            Formula::Num(v) => constant(consts, *v),
            Formula::Var(i) if *i <= MAX_VOCAB_VARS => ExprTree::Var(*i),
            Formula::Var(_) => return None,
            Formula::Neg(a) => {
                let c = constant(consts, -1.0);
                ExprTree::Binary(BinaryOp::Mul, Box::new(c), Box::new(a.lower(consts)?))
            }
            Formula::Bin(InfixOp::Pow, base, exp) => {
                let Formula::Num(e) = **exp else { return None };
                if e.fract() != 0.0 || e == 0.0 || e.abs() > 9.0 {
                    return None;
                }
                let k = e.abs() as usize;
                if e < 0.0 {
                    let one = constant(consts, 1.0);
                    let chain = mul_chain(base, k, consts)?;
                    ExprTree::Binary(BinaryOp::Div, Box::new(one), Box::new(chain))
                } else {
                    mul_chain(base, k, consts)?
                }
            }
            Formula::Bin(op, a, b) => {
                let op = match op {
                    InfixOp::Add => BinaryOp::Add,
                    InfixOp::Sub => BinaryOp::Sub,
                    InfixOp::Mul => BinaryOp::Mul,
                    InfixOp::Div => BinaryOp::Div,
                    InfixOp::Pow => unreachable!(),
                };
                let a = a.lower(consts)?;
                let b = b.lower(consts)?;
                ExprTree::Binary(op, Box::new(a), Box::new(b))
            }
            Formula::Call(f, a) => ExprTree::Unary(f.to_unary()?, Box::new(a.lower(consts)?)),
        })
    }
}

/// `base^k` as a left-folded product; the base is re-lowered per factor so
/// every copy gets its own constant slots.
fn mul_chain(base: &Formula, k: usize, consts: &mut Vec<f64>) -> Option<ExprTree> {
    let mut acc = base.lower(consts)?;
    for _ in 1..k {
        let next = base.lower(consts)?;
        acc = ExprTree::Binary(BinaryOp::Mul, Box::new(acc), Box::new(next));
    }
    Some(acc)
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Num(v) => write!(f, "{v}"),
            Formula::Var(i) => write!(f, "x{i}"),
            Formula::Neg(a) => write!(f, "(-{a})"),
            Formula::Bin(op, a, b) => {
                let s = match op {
                    InfixOp::Add => "+",
                    InfixOp::Sub => "-",
                    InfixOp::Mul => "*",
                    InfixOp::Div => "/",
                    InfixOp::Pow => "^",
                };
                write!(f, "({a}{s}{b})")
            }
            Formula::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Lex {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<Lex>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Lex::Num(text.parse().map_err(|_| format!("bad number `{text}`"))?));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Lex::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Lex::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Lex::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Lex::RParen);
            i += 1;
        } else {
            return Err(format!("unexpected character `{c}`"));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Lex>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Lex> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Lex> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Formula, String> {
        let mut lhs = self.term()?;
        while let Some(Lex::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { InfixOp::Add } else { InfixOp::Sub };
            lhs = Formula::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Formula, String> {
        let mut lhs = self.unary()?;
        while let Some(Lex::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { InfixOp::Mul } else { InfixOp::Div };
            lhs = Formula::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, String> {
        if let Some(Lex::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Formula::Neg(Box::new(self.unary()?)));
        }
        if let Some(Lex::Op('+')) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Formula, String> {
        let base = self.atom()?;
        if let Some(Lex::Op('^')) = self.peek() {
            self.pos += 1;
            // Right associative; the exponent may carry a sign.
            let exp = self.unary()?;
            let exp = match exp {
                Formula::Neg(inner) => match *inner {
                    Formula::Num(v) => Formula::Num(-v),
                    other => Formula::Neg(Box::new(other)),
                },
                other => other,
            };
            return Ok(Formula::Bin(InfixOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Formula, String> {
        match self.next() {
            Some(Lex::Num(v)) => Ok(Formula::Num(v)),
            Some(Lex::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Lex::RParen) => Ok(e),
                    other => Err(format!("expected `)`, found {other:?}")),
                }
            }
            Some(Lex::Ident(name)) => {
                if name == "pi" {
                    return Ok(Formula::Num(std::f64::consts::PI));
                }
                if let Some(idx) = name.strip_prefix('x') {
                    if let Ok(i) = idx.parse::<u8>() {
                        if i >= 1 {
                            return Ok(Formula::Var(i));
                        }
                    }
                }
                let func = Func::from_name(&name).ok_or_else(|| format!("unknown name `{name}`"))?;
                match self.next() {
                    Some(Lex::LParen) => {}
                    other => return Err(format!("expected `(` after {name}, found {other:?}")),
                }
                let arg = self.expr()?;
                match self.next() {
                    Some(Lex::RParen) => Ok(Formula::Call(func, Box::new(arg))),
                    other => Err(format!("expected `)`, found {other:?}")),
                }
            }
            other => Err(format!("unexpected {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::render_tokens;

    #[test]
    fn precedence() {
        let f = Formula::parse("1 + 2*3^2").unwrap();
        assert_eq!(f.eval(&[]), 19.0);
        let f = Formula::parse("-x1^2").unwrap();
        assert_eq!(f.eval(&[3.0]), -9.0);
        let f = Formula::parse("x1^-4").unwrap();
        assert_eq!(f.eval(&[2.0]), 1.0 / 16.0);
        let f = Formula::parse("2^3^2").unwrap();
        assert_eq!(f.eval(&[]), 512.0);
        let f = Formula::parse("harmonic(x1)").unwrap();
        assert_eq!(f.eval(&[3.0]), 1.0 + 0.5 + 1.0 / 3.0);
        assert!(Formula::parse("sin(x1").is_err());
        assert!(Formula::parse("foo(x1)").is_err());
    }

    #[test]
    fn lowering() {
        let (t, c) = Formula::parse("x1^3+x1^2+x1").unwrap().to_tree().unwrap();
        assert_eq!(render_tokens(&t.to_preorder()), "+ + * * x1 x1 x1 * x1 x1 x1");
        assert!(c.is_empty());
        let (t, c) = Formula::parse("sin(x1^2)*cos(x1)-1").unwrap().to_tree().unwrap();
        assert_eq!(render_tokens(&t.to_preorder()), "- * sin * x1 x1 cos x1 C");
        assert_eq!(c, vec![1.0]);
        let (t, c) = Formula::parse("x1^-2").unwrap().to_tree().unwrap();
        assert_eq!(render_tokens(&t.to_preorder()), "/ C * x1 x1");
        assert_eq!(c, vec![1.0]);
        assert!(Formula::parse("x1^x2").unwrap().to_tree().is_none());
        assert!(Formula::parse("x1^(1/3)").unwrap().to_tree().is_none());
        assert!(Formula::parse("tan(x1)").unwrap().to_tree().is_none());
        assert!(Formula::parse("x10").unwrap().to_tree().is_none());
    }
}

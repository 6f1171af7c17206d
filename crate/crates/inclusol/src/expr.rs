//! Tiny expression language for coefficient functions in scenario files.
//!
//! Grammar: numbers, the variables `t` and `s`, `inf`, `+`, `-` (binary and
//! unary), multiplication (`*` or the middle dot), `exp(..)`, `sin(..)`,
//! `abs(..)`, and parentheses.

use crate::error::{Error, Result};
use crate::problem::{BivariateFn, ScalarFn};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    T,
    S,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
    Abs(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::T => t,
            Expr::S => s,
            Expr::Add(a, b) => a.eval(t, s) + b.eval(t, s),
            Expr::Sub(a, b) => a.eval(t, s) - b.eval(t, s),
            Expr::Mul(a, b) => a.eval(t, s) * b.eval(t, s),
            Expr::Neg(a) => -a.eval(t, s),
            Expr::Exp(a) => a.eval(t, s).exp(),
            Expr::Sin(a) => a.eval(t, s).sin(),
            Expr::Abs(a) => a.eval(t, s).abs(),
        }
    }

    pub fn uses_s(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::T => false,
            Expr::S => true,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.uses_s() || b.uses_s(),
            Expr::Neg(a) | Expr::Exp(a) | Expr::Sin(a) | Expr::Abs(a) => a.uses_s(),
        }
    }

    fn constant_value(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            col: self.pos + 1,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.decode_at(self.pos).map(|(c, _)| c)
    }

    fn decode_at(&self, pos: usize) -> Option<(char, usize)> {
        let rest = &self.src[pos.min(self.src.len())..];
        std::str::from_utf8(rest)
            .ok()
            .and_then(|s| s.chars().next())
            .map(|c| (c, c.len_utf8()))
    }

    fn bump(&mut self) -> Option<char> {
        self.skip_ws();
        let (c, w) = self.decode_at(self.pos)?;
        self.pos += w;
        Some(c)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut node = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.bump();
                    node = Expr::Add(Box::new(node), Box::new(self.term()?));
                }
                Some('-') => {
                    self.bump();
                    node = Expr::Sub(Box::new(node), Box::new(self.term()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut node = self.unary()?;
        while matches!(self.peek(), Some('*') | Some('\u{b7}') | Some('\u{22c5}')) {
            self.bump();
            node = Expr::Mul(Box::new(node), Box::new(self.unary()?));
        }
        Ok(node)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.err("unexpected end of expression")),
            Some('(') => {
                self.bump();
                let inner = self.expr()?;
                if self.bump() != Some(')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.err(format!("unexpected character '{c}'"))),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos] as char;
            if c.is_ascii_digit() || c == '.' {
                self.pos += 1;
            } else if (c == 'e' || c == 'E') && self.pos > start {
                self.pos += 1;
                if self.pos < self.src.len() && matches!(self.src[self.pos] as char, '+' | '-') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| self.err(format!("malformed number '{text}'")))
    }

    fn ident(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_ascii_alphabetic() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match name {
            "t" => Ok(Expr::T),
            "s" => Ok(Expr::S),
            "inf" => Ok(Expr::Const(f64::INFINITY)),
            "exp" | "sin" | "abs" => {
                if self.bump() != Some('(') {
                    return Err(self.err(format!("expected '(' after {name}")));
                }
                let inner = self.expr()?;
                if self.bump() != Some(')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(match name {
                    "exp" => Expr::Exp(Box::new(inner)),
                    "sin" => Expr::Sin(Box::new(inner)),
                    _ => Expr::Abs(Box::new(inner)),
                })
            }
            other => Err(self.err(format!("unknown identifier '{other}'"))),
        }
    }
}

/// Parses an expression; `line` is only used for error reporting.
pub fn parse(src: &str, line: usize) -> Result<Expr> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        line,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input after expression"));
    }
    Ok(e)
}

/// Compiles a `t`-only expression into a [`ScalarFn`].
pub fn compile_scalar(src: &str, line: usize) -> Result<ScalarFn> {
    let e = parse(src, line)?;
    if e.uses_s() {
        return Err(Error::Parse {
            line,
            col: 1,
            msg: "expression must not reference 's' here".into(),
        });
    }
    if let Some(v) = e.constant_value() {
        return Ok(ScalarFn::constant(v));
    }
    Ok(ScalarFn::new(move |t| e.eval(t, 0.0)))
}

/// Compiles an expression in `t` and `s` into a [`BivariateFn`].
pub fn compile_bivariate(src: &str, line: usize) -> Result<BivariateFn> {
    let e = parse(src, line)?;
    if let Some(v) = e.constant_value() {
        return Ok(BivariateFn::constant(v));
    }
    Ok(BivariateFn::new(move |t, s| e.eval(t, s)))
}

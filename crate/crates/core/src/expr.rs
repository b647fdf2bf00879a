//! A tiny arithmetic expression language for custom sources and
//! nonlinearities.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | variable | 'pi' | func '(' args ')' | '(' expr ')'
//! func    := min | max | abs | sqrt | exp | sin | cos
//! variable:= x | y | t | u | ut | ux | uy
//! ```
//!
//! `min` and `max` take two or more arguments; the rest take one.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    T,
    U,
    Ut,
    Ux,
    Uy,
}

/// Variable bindings for evaluation. Unused slots can stay zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub u: f64,
    pub ut: f64,
    pub ux: f64,
    pub uy: f64,
}

impl Bindings {
    fn get(&self, v: Var) -> f64 {
        match v {
            Var::X => self.x,
            Var::Y => self.y,
            Var::T => self.t,
            Var::U => self.u,
            Var::Ut => self.ut,
            Var::Ux => self.ux,
            Var::Uy => self.uy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Min,
    Max,
    Abs,
    Sqrt,
    Exp,
    Sin,
    Cos,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Parsed expression together with its source text.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let root = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Expression(format!(
                "unexpected trailing input in {source:?}"
            )));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, b: &Bindings) -> f64 {
        eval(&self.root, b)
    }

    /// True if the expression references `v`.
    pub fn uses(&self, v: Var) -> bool {
        fn walk(n: &Node, v: Var) -> bool {
            match n {
                Node::Num(_) => false,
                Node::Var(w) => *w == v,
                Node::Neg(a) => walk(a, v),
                Node::Bin(_, a, b) => walk(a, v) || walk(b, v),
                Node::Call(_, args) => args.iter().any(|a| walk(a, v)),
            }
        }
        walk(&self.root, v)
    }
}

fn eval(n: &Node, b: &Bindings) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(v) => b.get(*v),
        Node::Neg(a) => -eval(a, b),
        Node::Bin(op, l, r) => {
            let (l, r) = (eval(l, b), eval(r, b));
            match op {
                '+' => l + r,
                '-' => l - r,
                '*' => l * r,
                '/' => l / r,
                '^' => l.powf(r),
                _ => unreachable!("operator set fixed by the parser"),
            }
        }
        Node::Call(f, args) => {
            let mut vals = args.iter().map(|a| eval(a, b));
            match f {
                Func::Min => vals.fold(f64::INFINITY, f64::min),
                Func::Max => vals.fold(f64::NEG_INFINITY, f64::max),
                Func::Abs => vals.next().unwrap_or(0.0).abs(),
                Func::Sqrt => vals.next().unwrap_or(0.0).sqrt(),
                Func::Exp => vals.next().unwrap_or(0.0).exp(),
                Func::Sin => vals.next().unwrap_or(0.0).sin(),
                Func::Cos => vals.next().unwrap_or(0.0).cos(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = s.chars().collect();
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
            // exponent part: 1e-3, 2.5E+4
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number {text:?}")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            out.push(match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => return Err(Error::Expression(format!("unexpected character {c:?}"))),
            });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            got => Err(Error::Expression(format!("expected {want:?}, got {got:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if let Some(Tok::Op('+')) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Node::Num(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if let Some(v) = variable(&name) {
                    return Ok(Node::Var(v));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                let f = function(&name)
                    .ok_or_else(|| Error::Expression(format!("unknown identifier {name:?}")))?;
                self.expect(Tok::LParen)?;
                let mut args = vec![self.expr()?];
                while let Some(Tok::Comma) = self.peek() {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen)?;
                let ok = match f {
                    Func::Min | Func::Max => args.len() >= 2,
                    _ => args.len() == 1,
                };
                if !ok {
                    return Err(Error::Expression(format!(
                        "{name} called with {} arguments",
                        args.len()
                    )));
                }
                Ok(Node::Call(f, args))
            }
            got => Err(Error::Expression(format!("unexpected token {got:?}"))),
        }
    }
}

fn variable(name: &str) -> Option<Var> {
    Some(match name {
        "x" => Var::X,
        "y" => Var::Y,
        "t" => Var::T,
        "u" => Var::U,
        "ut" => Var::Ut,
        "ux" => Var::Ux,
        "uy" => Var::Uy,
        _ => return None,
    })
}

fn function(name: &str) -> Option<Func> {
    Some(match name {
        "min" => Func::Min,
        "max" => Func::Max,
        "abs" => Func::Abs,
        "sqrt" => Func::Sqrt,
        "exp" => Func::Exp,
        "sin" => Func::Sin,
        "cos" => Func::Cos,
        _ => return None,
    })
}

//! A minimal arithmetic expression language for scalar data functions
//! (sources, Dirichlet data, initial conditions) given as text in config files.
//!
//! Grammar (recursive descent, no external tooling):
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := base ('^' factor)?          // '^' right-associative
//! base   := number | ident | func '(' expr {',' expr} ')' | '(' expr ')' | '-' base
//! ```
//!
//! Identifiers are the coordinates `x0..x{N-1}` plus the constants `pi` and
//! `e`. Unary minus binds tighter than `^`, so `-x0^2` is `(-x0)^2`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {position}: expected {expected}")]
    SyntaxError { position: usize, expected: String },

    #[error("unknown identifier `{name}` at byte {position}")]
    UnknownIdentifier { name: String, position: usize },

    #[error("`{name}` takes {expected} argument(s), got {got}")]
    ArityError {
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("variable x{index} is unbound for dimension {dim}")]
    UnboundVariable { index: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Sqrt,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Number(f64),
    Coord(usize),
    Pi,
    E,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression. Cheap to clone and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Arc<Node>,
    source: Arc<str>,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            bytes: text.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(ExprError::SyntaxError {
                position: p.pos,
                expected: "end of input".into(),
            });
        }
        Ok(Expr {
            root: Arc::new(root),
            source: text.into(),
        })
    }

    /// Evaluates at a point in R^N given by the first `dim` entries of `x`.
    pub fn eval(&self, x: &[f64], dim: usize) -> Result<f64, ExprError> {
        eval_node(&self.root, x, dim)
    }

    /// Largest coordinate index mentioned, if any; `max_coord() < dim` is
    /// required for evaluation to succeed.
    pub fn max_coord(&self) -> Option<usize> {
        fn walk(n: &Node, best: &mut Option<usize>) {
            match n {
                Node::Coord(i) => {
                    *best = Some(best.map_or(*i, |b| b.max(*i)));
                }
                Node::Neg(a) => walk(a, best),
                Node::Bin(_, a, b) => {
                    walk(a, best);
                    walk(b, best);
                }
                Node::Call(_, args) => args.iter().for_each(|a| walk(a, best)),
                _ => {}
            }
        }
        let mut best = None;
        walk(&self.root, &mut best);
        best
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    #[cfg(test)]
    pub(crate) fn root(&self) -> &Node {
        &self.root
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized form; `parse(print(e))` is structurally identical
    /// to `e`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_node(&self.root, f)
    }
}

fn fmt_node(n: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match n {
        Node::Number(v) => {
            if *v == v.trunc() && v.abs() < 1e15 {
                write!(f, "{v:.1}")
            } else {
                write!(f, "{v:e}")
            }
        }
        Node::Coord(i) => write!(f, "x{i}"),
        Node::Pi => write!(f, "pi"),
        Node::E => write!(f, "e"),
        Node::Neg(a) => {
            write!(f, "(-")?;
            fmt_node(a, f)?;
            write!(f, ")")
        }
        Node::Bin(op, a, b) => {
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
                BinOp::Pow => "^",
            };
            write!(f, "(")?;
            fmt_node(a, f)?;
            write!(f, " {sym} ")?;
            fmt_node(b, f)?;
            write!(f, ")")
        }
        Node::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    write!(f, ", ")?;
                }
                fmt_node(a, f)?;
            }
            write!(f, ")")
        }
    }
}

fn eval_node(n: &Node, x: &[f64], dim: usize) -> Result<f64, ExprError> {
    Ok(match n {
        Node::Number(v) => *v,
        Node::Coord(i) => {
            if *i >= dim {
                return Err(ExprError::UnboundVariable { index: *i, dim });
            }
            x[*i]
        }
        Node::Pi => std::f64::consts::PI,
        Node::E => std::f64::consts::E,
        Node::Neg(a) => -eval_node(a, x, dim)?,
        Node::Bin(op, a, b) => {
            let a = eval_node(a, x, dim)?;
            let b = eval_node(b, x, dim)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(ExprError::DomainError(format!("division by zero: {a}/0")));
                    }
                    a / b
                }
                BinOp::Pow => a.powf(b),
            }
        }
        Node::Call(func, args) => {
            let a = eval_node(&args[0], x, dim)?;
            match func {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Abs => a.abs(),
                Func::Tanh => a.tanh(),
                Func::Sqrt => {
                    if a < 0.0 {
                        return Err(ExprError::DomainError(format!("sqrt of negative {a}")));
                    }
                    a.sqrt()
                }
                Func::Min => a.min(eval_node(&args[1], x, dim)?),
                Func::Max => a.max(eval_node(&args[1], x, dim)?),
            }
        }
    })
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8, what: &str) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(ExprError::SyntaxError {
                position: self.pos,
                expected: what.into(),
            })
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term()?;
                lhs = Node::Bin(BinOp::Add, Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = Node::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                let rhs = self.factor()?;
                lhs = Node::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'/') {
                let rhs = self.factor()?;
                lhs = Node::Bin(BinOp::Div, Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Node, ExprError> {
        let base = self.base()?;
        if self.eat(b'^') {
            let exp = self.factor()?;
            Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                self.skip_ws();
                let inner = self.base()?;
                Ok(Node::Neg(Box::new(inner)))
            }
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let inner = self.expr()?;
                self.expect(b')', "closing `)`")?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(ExprError::SyntaxError {
                position: self.pos,
                expected: "number, identifier, `(` or `-`".into(),
            }),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_digit() || c == b'.')
        {
            self.pos += 1;
        }
        // Optional exponent; only consumed when followed by digits so that
        // `2*e` keeps `e` as the Euler constant.
        if self.peek() == Some(b'e') || self.peek() == Some(b'E') {
            let mut probe = self.pos + 1;
            if self.bytes.get(probe) == Some(&b'+') || self.bytes.get(probe) == Some(&b'-') {
                probe += 1;
            }
            if self.bytes.get(probe).is_some_and(u8::is_ascii_digit) {
                self.pos = probe;
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| ExprError::SyntaxError {
            position: start,
            expected: "a numeric literal".into(),
        })?;
        self.skip_ws();
        Ok(Node::Number(value))
    }

    fn ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .to_string();
        self.skip_ws();

        if let Some(func) = Func::from_name(&name) {
            self.expect(b'(', "`(` after function name")?;
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            self.expect(b')', "closing `)` of call")?;
            if args.len() != func.arity() {
                return Err(ExprError::ArityError {
                    name,
                    expected: func.arity(),
                    got: args.len(),
                });
            }
            return Ok(Node::Call(func, args));
        }

        match name.as_str() {
            "pi" => Ok(Node::Pi),
            "e" => Ok(Node::E),
            _ => {
                if let Some(rest) = name.strip_prefix('x') {
                    if !rest.is_empty() && rest.bytes().all(|c| c.is_ascii_digit()) {
                        return Ok(Node::Coord(rest.parse().unwrap()));
                    }
                }
                Err(ExprError::UnknownIdentifier {
                    name,
                    position: start,
                })
            }
        }
    }
}

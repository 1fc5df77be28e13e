//! Expression trees for the equations `f_i(x_1, ..., x_n)`.
//!
//! Grammar, lowest to highest precedence:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?        right-associative
//! primary := number | variable | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | log | sqrt | abs
//! ```
//!
//! `^` binds tighter than unary minus, so `-x1^2` is `-(x1^2)`.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based variable index.
    Var(usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Largest integer exponent expanded into repeated multiplication.
const MAX_EXPANDED_EXPONENT: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("column {column}: {message}")]
pub struct ExprError {
    /// One-based character column within the expression text.
    pub column: usize,
    pub message: String,
}

impl Expr {
    /// Parses `text`, resolving identifiers against `variables` (index order
    /// defines `x_1..x_n`).
    pub fn parse(text: &str, variables: &[String]) -> Result<Expr, ExprError> {
        let tokens = tokenize(text)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            variables,
            end_column: text.chars().count() + 1,
        };
        let expr = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ExprError {
                column: tok.column,
                message: format!("unexpected {}", tok.kind),
            });
        }
        Ok(expr)
    }

    /// Largest variable index referenced, if any.
    pub fn max_variable(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(e) | Expr::Call(_, e) => e.max_variable(),
            Expr::Binary(_, l, r) => match (l.max_variable(), r.max_variable()) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
        }
    }

    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        match self {
            Expr::Const(c) => T::constant(*c),
            Expr::Var(i) => x[*i],
            Expr::Neg(e) => -e.eval(x),
            Expr::Call(func, e) => e.eval(x).apply(*func),
            Expr::Binary(op, l, r) => {
                let lhs = l.eval(x);
                match op {
                    BinOp::Add => lhs + r.eval(x),
                    BinOp::Sub => lhs - r.eval(x),
                    BinOp::Mul => lhs * r.eval(x),
                    BinOp::Div => lhs / r.eval(x),
                    BinOp::Pow => match r.integer_exponent() {
                        Some(k) => integer_power(lhs, k),
                        None => lhs.pow(r.eval(x)),
                    },
                }
            }
        }
    }

    fn integer_exponent(&self) -> Option<i32> {
        let value = match self {
            Expr::Const(c) => *c,
            Expr::Neg(inner) => match inner.as_ref() {
                Expr::Const(c) => -*c,
                _ => return None,
            },
            _ => return None,
        };
        (value.fract() == 0.0 && value.abs() <= MAX_EXPANDED_EXPONENT).then_some(value as i32)
    }
}

fn integer_power<T: Scalar>(base: T, exponent: i32) -> T {
    let mut acc = T::constant(1.0);
    for _ in 0..exponent.unsigned_abs() {
        acc = acc * base;
    }
    if exponent < 0 {
        T::constant(1.0) / acc
    } else {
        acc
    }
}

/// Fully parenthesized rendering that re-parses to an identical tree.
/// Variables print as `x1..xn`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "(-{:?})", -c)
            }
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
        }
    }
}

/// Numeric types an expression can be evaluated over.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    fn value(self) -> f64;
    fn apply(self, func: Func) -> Self;
    fn pow(self, exponent: Self) -> Self;
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }

    fn value(self) -> f64 {
        self
    }

    fn apply(self, func: Func) -> Self {
        match func {
            Func::Sin => self.sin(),
            Func::Cos => self.cos(),
            Func::Exp => self.exp(),
            Func::Log => {
                if self > 0.0 {
                    self.ln()
                } else {
                    f64::NAN
                }
            }
            Func::Sqrt => self.sqrt(),
            Func::Abs => self.abs(),
        }
    }

    fn pow(self, exponent: Self) -> Self {
        self.powf(exponent)
    }
}

/// First-order dual number `value + eps * derivative` with `eps^2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub derivative: f64,
}

impl Dual {
    pub fn new(value: f64, derivative: f64) -> Self {
        Dual { value, derivative }
    }

    pub fn variable(value: f64) -> Self {
        Dual::new(value, 1.0)
    }

    /// Chain rule: `f(self)` given `f(value)` and `f'(value)`.
    fn chain(self, fx: f64, dfx: f64) -> Self {
        // A zero tangent stays zero even when f' is infinite (sqrt(0), say).
        let derivative = if self.derivative == 0.0 {
            0.0
        } else {
            dfx * self.derivative
        };
        Dual::new(fx, derivative)
    }
}

impl Add for Dual {
    type Output = Dual;

    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.value + rhs.value, self.derivative + rhs.derivative)
    }
}

impl Sub for Dual {
    type Output = Dual;

    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.value - rhs.value, self.derivative - rhs.derivative)
    }
}

impl Mul for Dual {
    type Output = Dual;

    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(
            self.value * rhs.value,
            self.derivative * rhs.value + self.value * rhs.derivative,
        )
    }
}

impl Div for Dual {
    type Output = Dual;

    fn div(self, rhs: Dual) -> Dual {
        let value = self.value / rhs.value;
        Dual::new(
            value,
            (self.derivative - value * rhs.derivative) / rhs.value,
        )
    }
}

impl Neg for Dual {
    type Output = Dual;

    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.derivative)
    }
}

impl Scalar for Dual {
    fn constant(c: f64) -> Self {
        Dual::new(c, 0.0)
    }

    fn value(self) -> f64 {
        self.value
    }

    fn apply(self, func: Func) -> Self {
        let x = self.value;
        match func {
            Func::Sin => self.chain(x.sin(), x.cos()),
            Func::Cos => self.chain(x.cos(), -x.sin()),
            Func::Exp => {
                let e = x.exp();
                self.chain(e, e)
            }
            Func::Log => self.chain(x.apply(Func::Log), 1.0 / x),
            Func::Sqrt => {
                let s = x.sqrt();
                self.chain(s, 0.5 / s)
            }
            Func::Abs => self.chain(x.abs(), if x < 0.0 { -1.0 } else { 1.0 }),
        }
    }

    fn pow(self, exponent: Self) -> Self {
        let value = self.value.powf(exponent.value);
        let mut derivative = 0.0;
        if self.derivative != 0.0 {
            derivative += exponent.value * self.value.powf(exponent.value - 1.0) * self.derivative;
        }
        if exponent.derivative != 0.0 {
            derivative += value * self.value.apply(Func::Log) * exponent.derivative;
        }
        Dual::new(value, derivative)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Number(v) => write!(f, "number {v}"),
            TokenKind::Ident(s) => write!(f, "identifier '{s}'"),
            TokenKind::Op(c) => write!(f, "'{c}'"),
            TokenKind::LParen => f.write_str("'('"),
            TokenKind::RParen => f.write_str("')'"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    column: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let literal: String = chars[start..i].iter().collect();
            let value = literal.parse::<f64>().map_err(|_| ExprError {
                column,
                message: format!("malformed number '{literal}'"),
            })?;
            tokens.push(Token {
                kind: TokenKind::Number(value),
                column,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                other => {
                    return Err(ExprError {
                        column,
                        message: format!("unexpected character '{other}'"),
                    })
                }
            };
            tokens.push(Token { kind, column });
            i += 1;
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    variables: &'a [String],
    end_column: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        tok
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn error_here(&self, message: impl Into<String>) -> ExprError {
        ExprError {
            column: self.peek().map_or(self.end_column, |t| t.column),
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if op == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if op == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let Some(tok) = self.next() else {
            self.pos -= 1;
            return Err(self.error_here("unexpected end of expression"));
        };
        match tok.kind {
            TokenKind::Number(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    match self.next() {
                        Some(Token {
                            kind: TokenKind::LParen,
                            ..
                        }) => {}
                        _ => {
                            self.pos -= 1;
                            return Err(self.error_here(format!("expected '(' after {name}")));
                        }
                    }
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else if let Some(index) = self.variables.iter().position(|v| *v == name) {
                    Ok(Expr::Var(index))
                } else {
                    Err(ExprError {
                        column: tok.column,
                        message: format!("unknown variable '{name}'"),
                    })
                }
            }
            other => Err(ExprError {
                column: tok.column,
                message: format!("unexpected {other}"),
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.next() {
            Some(Token {
                kind: TokenKind::RParen,
                ..
            }) => Ok(()),
            _ => {
                self.pos -= 1;
                Err(self.error_here("expected ')'"))
            }
        }
    }
}

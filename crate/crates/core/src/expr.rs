//! Small expression language for coefficient fields and implicit domains.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" unary ] ;            (* right associative *)
//! primary = number | "pi" | var | func "(" expr ")" | "(" expr ")" ;
//! var     = "x" digit { digit } ;              (* x1 .. xN *)
//! func    = "exp" | "sin" | "cos" | "sqrt" | "ln" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ]
//!         | "." digits [ ... ] ;
//! ```
//!
//! `-x^2` parses as `-(x^2)` and `2^-1` as `2^(-1)`.

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("variable x{index} at offset {offset} exceeds dimension N = {dim}")]
    VariableOutOfRange {
        offset: usize,
        index: usize,
        dim: usize,
    },
    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::VariableOutOfRange { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{kind} in '{subexpr}' at x = {point:?}")]
pub struct EvalError {
    pub kind: DomainErrorKind,
    /// Offending subexpression, pretty-printed.
    pub subexpr: String,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainErrorKind {
    DivisionByZero,
    NegativeSqrt,
    NonPositiveLog,
    InvalidPower,
    NonFinite,
}

impl fmt::Display for DomainErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainErrorKind::DivisionByZero => "division by zero",
            DomainErrorKind::NegativeSqrt => "square root of a negative number",
            DomainErrorKind::NonPositiveLog => "logarithm of a non-positive number",
            DomainErrorKind::InvalidPower => "negative base with non-integer exponent",
            DomainErrorKind::NonFinite => "non-finite result",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Sqrt,
    Ln,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "ln" => Func::Ln,
            _ => return None,
        })
    }
}

/// Expression tree; variables are zero-based (`x1` is `Var(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

// ---------------------------------------------------------------------------
// lexer / parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit()) {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v = text.parse::<f64>().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number '{text}'"),
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else {
            return Err(ParseError::Syntax {
                offset: i,
                message: format!("unexpected character '{c}'"),
            });
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self) -> ParseError {
        let found = match self.peek() {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Op(c) => format!("'{c}'"),
            Tok::End => "end of input".to_string(),
        };
        ParseError::Syntax {
            offset: self.offset(),
            message: format!("unexpected {found}"),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if *self.peek() == Tok::Op(c) {
            self.bump();
            Ok(())
        } else {
            Err(ParseError::Syntax {
                offset: self.offset(),
                message: format!("expected '{c}'"),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::Op('(') => {
                self.bump();
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let offset = self.offset();
                self.bump();
                if name == "pi" {
                    return Ok(Expr::Const(PI));
                }
                if let Some(f) = Func::from_name(&name) {
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                if let Some(digits) = name.strip_prefix('x') {
                    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                        let index: usize = digits.parse().map_err(|_| ParseError::UnknownIdentifier {
                            offset,
                            name: name.clone(),
                        })?;
                        if index == 0 || index > self.dim {
                            return Err(ParseError::VariableOutOfRange {
                                offset,
                                index,
                                dim: self.dim,
                            });
                        }
                        return Ok(Expr::Var(index - 1));
                    }
                }
                Err(ParseError::UnknownIdentifier { offset, name })
            }
            _ => Err(self.unexpected()),
        }
    }
}

/// Parses `src` over variables `x1..x{dim}`.
pub fn parse(src: &str, dim: usize) -> Result<Expr, ParseError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        dim,
    };
    if *p.peek() == Tok::End {
        return Err(ParseError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected());
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// simplifying constructors

fn fold(v: f64, fallback: impl FnOnce() -> Expr) -> Expr {
    if v.is_finite() {
        Expr::Const(v)
    } else {
        fallback()
    }
}

impl Expr {
    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    fn is_const(&self, c: f64) -> bool {
        self.as_const() == Some(c)
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(v) => Expr::Const(-v),
            Expr::Neg(inner) => *inner,
            a => Expr::Neg(Box::new(a)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => fold(x + y, || Expr::Add(Box::new(a.clone()), Box::new(b.clone()))),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => fold(x - y, || Expr::Sub(Box::new(a.clone()), Box::new(b.clone()))),
            (_, Some(y)) if y == 0.0 => a,
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => fold(x * y, || Expr::Mul(Box::new(a.clone()), Box::new(b.clone()))),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Const(0.0),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            (Some(x), _) if x == -1.0 => Expr::neg(b),
            (_, Some(y)) if y == -1.0 => Expr::neg(a),
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => {
                fold(x / y, || Expr::Div(Box::new(a.clone()), Box::new(b.clone())))
            }
            (Some(x), _) if x == 0.0 => Expr::Const(0.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => match pow_value(x, y) {
                Ok(v) => fold(v, || Expr::Pow(Box::new(a.clone()), Box::new(b.clone()))),
                Err(_) => Expr::Pow(Box::new(a), Box::new(b)),
            },
            (_, Some(y)) if y == 0.0 => Expr::Const(1.0),
            (_, Some(y)) if y == 1.0 => a,
            _ => Expr::Pow(Box::new(a), Box::new(b)),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        if let Some(x) = a.as_const() {
            if let Ok(v) = call_value(f, x) {
                if v.is_finite() {
                    return Expr::Const(v);
                }
            }
        }
        Expr::Call(f, Box::new(a))
    }

    /// Symbolic partial derivative with respect to variable `var` (zero-based).
    pub fn derivative(&self, var: usize) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var(i) => Const(if *i == var { 1.0 } else { 0.0 }),
            Neg(a) => Expr::neg(a.derivative(var)),
            Add(a, b) => Expr::add(a.derivative(var), b.derivative(var)),
            Sub(a, b) => Expr::sub(a.derivative(var), b.derivative(var)),
            Mul(a, b) => Expr::add(
                Expr::mul(a.derivative(var), (**b).clone()),
                Expr::mul((**a).clone(), b.derivative(var)),
            ),
            Div(a, b) => {
                let da = a.derivative(var);
                let db = b.derivative(var);
                if db.is_const(0.0) {
                    Expr::div(da, (**b).clone())
                } else {
                    Expr::div(
                        Expr::sub(
                            Expr::mul(da, (**b).clone()),
                            Expr::mul((**a).clone(), db),
                        ),
                        Expr::pow((**b).clone(), Const(2.0)),
                    )
                }
            }
            Pow(a, b) => {
                let da = a.derivative(var);
                let db = b.derivative(var);
                if db.is_const(0.0) {
                    // d(a^c) = c a^(c-1) a'
                    let c_minus_one = Expr::sub((**b).clone(), Const(1.0));
                    Expr::mul(
                        Expr::mul((**b).clone(), Expr::pow((**a).clone(), c_minus_one)),
                        da,
                    )
                } else {
                    // d(a^b) = a^b (b' ln a + b a'/a)
                    Expr::mul(
                        self.clone(),
                        Expr::add(
                            Expr::mul(db, Expr::call(Func::Ln, (**a).clone())),
                            Expr::div(Expr::mul((**b).clone(), da), (**a).clone()),
                        ),
                    )
                }
            }
            Call(f, a) => {
                let da = a.derivative(var);
                if da.is_const(0.0) {
                    return Const(0.0);
                }
                let a = (**a).clone();
                let outer = match f {
                    Func::Exp => Expr::call(Func::Exp, a),
                    Func::Sin => Expr::call(Func::Cos, a),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, a)),
                    Func::Sqrt => Expr::div(Const(0.5), Expr::call(Func::Sqrt, a)),
                    Func::Ln => Expr::div(Const(1.0), a),
                };
                Expr::mul(outer, da)
            }
        }
    }

    /// Rebuilds the tree through the simplifying constructors.
    pub fn simplify(&self) -> Expr {
        use Expr::*;
        match self {
            Const(_) | Var(_) => self.clone(),
            Neg(a) => Expr::neg(a.simplify()),
            Add(a, b) => Expr::add(a.simplify(), b.simplify()),
            Sub(a, b) => Expr::sub(a.simplify(), b.simplify()),
            Mul(a, b) => Expr::mul(a.simplify(), b.simplify()),
            Div(a, b) => Expr::div(a.simplify(), b.simplify()),
            Pow(a, b) => Expr::pow(a.simplify(), b.simplify()),
            Call(f, a) => Expr::call(*f, a.simplify()),
        }
    }

    /// Highest variable index used plus one.
    pub fn arity(&self) -> usize {
        use Expr::*;
        match self {
            Const(_) => 0,
            Var(i) => i + 1,
            Neg(a) | Call(_, a) => a.arity(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => a.arity().max(b.arity()),
        }
    }

    /// Tree-walking evaluation with located domain errors.
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        use Expr::*;
        let err = |kind| EvalError {
            kind,
            subexpr: self.to_string(),
            point: x.to_vec(),
        };
        let v = match self {
            Const(v) => *v,
            Var(i) => x[*i],
            Neg(a) => -a.eval(x)?,
            Add(a, b) => a.eval(x)? + b.eval(x)?,
            Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Div(a, b) => {
                let (p, q) = (a.eval(x)?, b.eval(x)?);
                if q == 0.0 {
                    return Err(err(DomainErrorKind::DivisionByZero));
                }
                p / q
            }
            Pow(a, b) => pow_value(a.eval(x)?, b.eval(x)?).map_err(err)?,
            Call(f, a) => call_value(*f, a.eval(x)?).map_err(err)?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(DomainErrorKind::NonFinite))
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Const(v) if v.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn pow_value(a: f64, b: f64) -> Result<f64, DomainErrorKind> {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        if a == 0.0 && b < 0.0 {
            return Err(DomainErrorKind::DivisionByZero);
        }
        Ok(a.powi(b as i32))
    } else if a < 0.0 {
        Err(DomainErrorKind::InvalidPower)
    } else if a == 0.0 && b < 0.0 {
        Err(DomainErrorKind::DivisionByZero)
    } else {
        Ok(a.powf(b))
    }
}

fn call_value(f: Func, a: f64) -> Result<f64, DomainErrorKind> {
    Ok(match f {
        Func::Exp => a.exp(),
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Sqrt => {
            if a < 0.0 {
                return Err(DomainErrorKind::NegativeSqrt);
            }
            a.sqrt()
        }
        Func::Ln => {
            if a <= 0.0 {
                return Err(DomainErrorKind::NonPositiveLog);
            }
            a.ln()
        }
    })
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Expr::*;
        match self {
            Const(v) => {
                if v.is_sign_negative() {
                    write!(f, "-{}", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Var(i) => write!(f, "x{}", i + 1),
            Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, 3)
            }
            Add(a, b) | Sub(a, b) => {
                write_child(f, a, 1)?;
                f.write_str(if matches!(self, Add(..)) { " + " } else { " - " })?;
                write_child(f, b, 2)
            }
            Mul(a, b) | Div(a, b) => {
                write_child(f, a, 2)?;
                f.write_str(if matches!(self, Mul(..)) { " * " } else { " / " })?;
                write_child(f, b, 3)
            }
            Pow(a, b) => {
                write_child(f, a, 5)?;
                f.write_str("^")?;
                write_child(f, b, 3)
            }
            Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// compiled evaluation

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    PowI(i32),
    Pow,
    Call(Func),
}

const STACK: usize = 64;

/// Postfix program for fast repeated evaluation; falls back to the tree on domain errors so
/// the error can be located.
#[derive(Debug, Clone)]
pub struct Compiled {
    ops: Vec<Op>,
    depth: usize,
    tree: Expr,
}

impl Compiled {
    pub fn new(tree: Expr) -> Self {
        let mut ops = Vec::new();
        emit(&tree, &mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Var(_) => depth += 1,
                Op::Neg | Op::PowI(_) | Op::Call(_) => {}
                _ => depth -= 1,
            }
            max_depth = max_depth.max(depth);
        }
        Self {
            ops,
            depth: max_depth,
            tree,
        }
    }

    pub fn tree(&self) -> &Expr {
        &self.tree
    }

    pub fn constant(&self) -> Option<f64> {
        self.tree.as_const()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        if self.depth > STACK {
            return self.tree.eval(x);
        }
        let mut stack = [0.0f64; STACK];
        let mut sp = 0usize;
        let mut ok = true;
        for op in &self.ops {
            match *op {
                Op::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Var(i) => {
                    stack[sp] = x[i];
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::PowI(k) => {
                    let a = stack[sp - 1];
                    ok &= !(a == 0.0 && k < 0);
                    stack[sp - 1] = a.powi(k);
                }
                Op::Call(f) => match call_value(f, stack[sp - 1]) {
                    Ok(v) => stack[sp - 1] = v,
                    Err(_) => return self.tree.eval(x),
                },
                bin => {
                    sp -= 1;
                    let (a, b) = (stack[sp - 1], stack[sp]);
                    stack[sp - 1] = match bin {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div => {
                            ok &= b != 0.0;
                            a / b
                        }
                        Op::Pow => match pow_value(a, b) {
                            Ok(v) => v,
                            Err(_) => return self.tree.eval(x),
                        },
                        _ => unreachable!(),
                    };
                }
            }
        }
        let v = stack[0];
        if ok && v.is_finite() {
            Ok(v)
        } else {
            self.tree.eval(x)
        }
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    use Expr::*;
    match e {
        Const(v) => ops.push(Op::Const(*v)),
        Var(i) => ops.push(Op::Var(*i)),
        Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(match e {
                Add(..) => Op::Add,
                Sub(..) => Op::Sub,
                Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
        Pow(a, b) => {
            emit(a, ops);
            match b.as_const() {
                Some(k) if k.fract() == 0.0 && k.abs() <= 64.0 => ops.push(Op::PowI(k as i32)),
                _ => {
                    emit(b, ops);
                    ops.push(Op::Pow);
                }
            }
        }
        Call(f, a) => {
            emit(a, ops);
            ops.push(Op::Call(*f));
        }
    }
}

/// An expression with its symbolic gradient and Hessian, all compiled.
#[derive(Debug, Clone)]
pub struct DiffExpr {
    dim: usize,
    value: Compiled,
    gradient: Vec<Compiled>,
    /// Upper triangle, row-major.
    hessian: Vec<Compiled>,
}

impl DiffExpr {
    pub fn new(tree: Expr, dim: usize) -> Self {
        let tree = tree.simplify();
        let grads: Vec<Expr> = (0..dim).map(|i| tree.derivative(i)).collect();
        let mut hessian = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                hessian.push(Compiled::new(grads[i].derivative(j)));
            }
        }
        Self {
            dim,
            value: Compiled::new(tree),
            gradient: grads.into_iter().map(Compiled::new).collect(),
            hessian,
        }
    }

    pub fn parse(src: &str, dim: usize) -> Result<Self, ParseError> {
        Ok(Self::new(parse(src, dim)?, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tree(&self) -> &Expr {
        self.value.tree()
    }

    pub fn gradient_trees(&self) -> impl Iterator<Item = &Expr> {
        self.gradient.iter().map(Compiled::tree)
    }

    pub fn constant(&self) -> Option<f64> {
        self.value.constant()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.value.eval(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, g) in out.iter_mut().zip(&self.gradient) {
            *o = g.eval(x)?;
        }
        Ok(())
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut g = vec![0.0; self.dim];
        self.gradient_into(x, &mut g)?;
        Ok(g)
    }

    /// Dense symmetric Hessian, row-major `dim × dim`.
    pub fn hessian(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let n = self.dim;
        let mut h = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                let v = self.hessian[k].eval(x)?;
                h[i * n + j] = v;
                h[j * n + i] = v;
                k += 1;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_associativity() {
        let e = parse("-x1^2", 1).unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), -9.0);
        let e = parse("2^3^2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 512.0);
        let e = parse("2^-1", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 0.5);
        let e = parse("8 / 4 / 2 - 1 - 1", 1).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), -1.0);
        let e = parse("1 + x1^2", 3).unwrap();
        assert_eq!(e.eval(&[1.0, 0.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn error_offsets() {
        assert_eq!(parse("1 + * x1", 3).unwrap_err().offset(), 4);
        assert!(matches!(
            parse("x4 + 1", 3),
            Err(ParseError::VariableOutOfRange { index: 4, .. })
        ));
        assert!(matches!(
            parse("y + 1", 3),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(parse("(1 + x1", 1).is_err());
        assert!(parse("", 1).is_err());
    }

    #[test]
    fn derivatives_fold_constants() {
        let e = parse("x1*x2", 3).unwrap();
        assert_eq!(e.derivative(2), Expr::Const(0.0));
        let d = DiffExpr::new(parse("x1^2", 3).unwrap(), 3);
        assert_eq!(d.hessian(&[0.3, 1.0, 2.0]).unwrap(), vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let d = DiffExpr::new(parse("3 + 0*x1", 1).unwrap(), 1);
        assert_eq!(d.constant(), Some(3.0));
    }

    #[test]
    fn domain_errors_are_located() {
        let e = Compiled::new(parse("1 + sqrt(x1)", 1).unwrap());
        let err = e.eval(&[-1.0]).unwrap_err();
        assert_eq!(err.kind, DomainErrorKind::NegativeSqrt);
        assert_eq!(err.subexpr, "sqrt(x1)");
        let e = Compiled::new(parse("1 / x1", 1).unwrap());
        assert_eq!(e.eval(&[0.0]).unwrap_err().kind, DomainErrorKind::DivisionByZero);
    }

    #[test]
    fn print_round_trip() {
        for src in [
            "-x1^2",
            "(-2)^2 + x1",
            "x1 - (x2 - x3)",
            "x1 / (x2 * x3)",
            "-(x1 + x2) * exp(-x3^2)",
            "(x1^2)^0.5 + 2^x2^2",
            "x1 + -3",
        ] {
            let e = parse(src, 3).unwrap();
            let back = parse(&e.to_string(), 3).unwrap();
            assert_eq!(e, back, "{src} -> {e}");
        }
    }
}

//! Coefficient expressions over lattice coordinates `x0 .. x{dim-1}`.
//!
//! Grammar (left-associative, usual precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' ['-'] integer)?
//! primary := number | variable | func '(' expr (',' expr)? ')' | '(' expr ')'
//! ```
//!
//! Unary functions: `abs sign exp tanh sin cos`. Binary: `min max`.
//! In one dimension `x` is accepted as an alias for `x0`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Abs,
    Sign,
    Exp,
    Tanh,
    Sin,
    Cos,
}

impl UnaryFn {
    fn name(self) -> &'static str {
        match self {
            UnaryFn::Abs => "abs",
            UnaryFn::Sign => "sign",
            UnaryFn::Exp => "exp",
            UnaryFn::Tanh => "tanh",
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            UnaryFn::Abs => v.abs(),
            UnaryFn::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryFn::Exp => v.exp(),
            UnaryFn::Tanh => v.tanh(),
            UnaryFn::Sin => v.sin(),
            UnaryFn::Cos => v.cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryFn {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Unary(UnaryFn, Box<Expr>),
    Binary(BinaryFn, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    /// Number of AST nodes. Integer exponents are part of their `Pow` node.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Unary(_, a) => 1 + a.node_count(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Unary(_, a) => a.max_var(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.max_var().is_none()
    }

    pub fn eval(&self, x: &[f64]) -> std::result::Result<f64, String> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *x
                .get(*i)
                .ok_or_else(|| format!("variable x{i} out of range"))?,
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let den = b.eval(x)?;
                if den == 0.0 {
                    return Err("division by zero".into());
                }
                a.eval(x)? / den
            }
            Expr::Pow(a, n) => {
                let base = a.eval(x)?;
                if base == 0.0 && *n < 0 {
                    return Err("division by zero".into());
                }
                base.powi(*n)
            }
            Expr::Unary(f, a) => f.apply(a.eval(x)?),
            Expr::Binary(f, a, b) => {
                let (u, v) = (a.eval(x)?, b.eval(x)?);
                match f {
                    BinaryFn::Min => u.min(v),
                    BinaryFn::Max => u.max(v),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err("non-finite value".into())
        }
    }

    /// Substitute `x_j -> x_j + h_j`.
    pub fn shifted(&self, h: &[i64]) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => match h.get(*i) {
                Some(&s) if s != 0 => Expr::Add(
                    Box::new(Expr::Var(*i)),
                    Box::new(Expr::Const(s as f64)),
                ),
                _ => Expr::Var(*i),
            },
            Expr::Neg(a) => Expr::Neg(Box::new(a.shifted(h))),
            Expr::Add(a, b) => Expr::Add(Box::new(a.shifted(h)), Box::new(b.shifted(h))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.shifted(h)), Box::new(b.shifted(h))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.shifted(h)), Box::new(b.shifted(h))),
            Expr::Div(a, b) => Expr::Div(Box::new(a.shifted(h)), Box::new(b.shifted(h))),
            Expr::Pow(a, n) => Expr::Pow(Box::new(a.shifted(h)), *n),
            Expr::Unary(f, a) => Expr::Unary(*f, Box::new(a.shifted(h))),
            Expr::Binary(f, a, b) => {
                Expr::Binary(*f, Box::new(a.shifted(h)), Box::new(b.shifted(h)))
            }
        }
    }

    pub fn times(self, other: Expr) -> Expr {
        match (&self, &other) {
            (Expr::Const(a), Expr::Const(b)) => Expr::Const(a * b),
            (Expr::Const(a), _) if *a == 1.0 => other,
            (_, Expr::Const(b)) if *b == 1.0 => self,
            _ => Expr::Mul(Box::new(self), Box::new(other)),
        }
    }

    pub fn plus(self, other: Expr) -> Expr {
        match (&self, &other) {
            (Expr::Const(a), Expr::Const(b)) => Expr::Const(a + b),
            _ => Expr::Add(Box::new(self), Box::new(other)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, n) => write!(f, "({a})^{n}"),
            Expr::Unary(g, a) => write!(f, "{}({a})", g.name()),
            Expr::Binary(g, a, b) => {
                let name = match g {
                    BinaryFn::Min => "min",
                    BinaryFn::Max => "max",
                };
                write!(f, "{name}({a}, {b})")
            }
        }
    }
}

/// Parse `source` with variables `x0 .. x{dim-1}`.
pub fn parse_expression(source: &str, dim: usize) -> Result<Expr> {
    let tokens = tokenize(source)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        dim,
        end: source.len() + 1,
    };
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(Error::Expression {
            column: t.column,
            message: format!("unexpected {}", t.kind),
        });
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Number(n) => write!(f, "number {n}"),
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Op(c) => write!(f, "`{c}`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    column: usize,
    text: String,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let column = i + 1;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let save = i;
                i += 1;
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    i += 1;
                }
                if i < bytes.len() && bytes[i].is_ascii_digit() {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Expression {
                column,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token {
                kind: TokenKind::Number(v),
                column,
                text: text.to_string(),
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let text = &src[start..i];
            out.push(Token {
                kind: TokenKind::Ident(text.to_string()),
                column,
                text: text.to_string(),
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token {
                kind: TokenKind::Op(c),
                column,
                text: c.to_string(),
            });
            i += 1;
        } else {
            return Err(Error::Expression {
                column,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self, c: char) -> bool {
        matches!(self.peek(), Some(Token { kind: TokenKind::Op(o), .. }) if *o == c)
    }

    fn column(&self) -> usize {
        self.peek().map(|t| t.column).unwrap_or(self.end)
    }

    fn expect_op(&mut self, c: char) -> Result<()> {
        if self.peek_op(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expression {
                column: self.column(),
                message: match self.peek() {
                    Some(t) => format!("expected `{c}`, found {}", t.kind),
                    None => format!("expected `{c}`, found end of input"),
                },
            })
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.peek_op('+') {
                self.pos += 1;
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.peek_op('-') {
                self.pos += 1;
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.peek_op('*') {
                self.pos += 1;
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.peek_op('/') {
                self.pos += 1;
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_op('-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if !self.peek_op('^') {
            return Ok(base);
        }
        self.pos += 1;
        let negative = if self.peek_op('-') {
            self.pos += 1;
            true
        } else {
            false
        };
        let column = self.column();
        match self.peek().cloned() {
            Some(Token {
                kind: TokenKind::Number(_),
                text,
                ..
            }) => {
                let n: i32 = text.parse().map_err(|_| Error::Expression {
                    column,
                    message: format!("exponent `{text}` is not an integer"),
                })?;
                self.pos += 1;
                Ok(Expr::Pow(Box::new(base), if negative { -n } else { n }))
            }
            _ => Err(Error::Expression {
                column,
                message: "expected integer exponent".into(),
            }),
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        let column = self.column();
        let tok = self.peek().cloned().ok_or(Error::Expression {
            column,
            message: "unexpected end of input".into(),
        })?;
        match tok.kind {
            TokenKind::Number(v) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            TokenKind::Op('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_op(')')?;
                Ok(e)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                if let Some(var) = self.variable(&name) {
                    return var.map_err(|message| Error::Expression { column, message });
                }
                let unary = match name.as_str() {
                    "abs" => Some(UnaryFn::Abs),
                    "sign" => Some(UnaryFn::Sign),
                    "exp" => Some(UnaryFn::Exp),
                    "tanh" => Some(UnaryFn::Tanh),
                    "sin" => Some(UnaryFn::Sin),
                    "cos" => Some(UnaryFn::Cos),
                    _ => None,
                };
                let binary = match name.as_str() {
                    "min" => Some(BinaryFn::Min),
                    "max" => Some(BinaryFn::Max),
                    _ => None,
                };
                if unary.is_none() && binary.is_none() {
                    return Err(Error::Expression {
                        column,
                        message: format!("unknown identifier `{name}`"),
                    });
                }
                self.expect_op('(')?;
                let a = self.expr()?;
                let out = if let Some(f) = unary {
                    Expr::Unary(f, Box::new(a))
                } else {
                    self.expect_op(',')?;
                    let b = self.expr()?;
                    Expr::Binary(binary.expect("checked"), Box::new(a), Box::new(b))
                };
                self.expect_op(')')?;
                Ok(out)
            }
            other => Err(Error::Expression {
                column,
                message: format!("unexpected {other}"),
            }),
        }
    }

    fn variable(&self, name: &str) -> Option<std::result::Result<Expr, String>> {
        if name == "x" {
            return Some(if self.dim == 1 {
                Ok(Expr::Var(0))
            } else {
                Err("`x` is only allowed in one dimension; use x0, x1, ...".into())
            });
        }
        let digits = name.strip_prefix('x')?;
        let i: usize = digits.parse().ok()?;
        Some(if i < self.dim {
            Ok(Expr::Var(i))
        } else {
            Err(format!("variable `{name}` exceeds dimension {}", self.dim))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64]) -> f64 {
        parse_expression(s, x.len()).unwrap().eval(x).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 - 2 - 3", &[0.0]), -4.0);
        assert_eq!(ev("8 / 4 / 2", &[0.0]), 1.0);
        assert_eq!(ev("2 + 3 * 4", &[0.0]), 14.0);
        assert_eq!(ev("-x0^2", &[3.0]), -9.0);
        assert_eq!(ev("2^-1", &[0.0]), 0.5);
        assert_eq!(ev("min(x0, 1) + max(x1, -1)", &[3.0, -4.0]), 0.0);
        assert_eq!(ev("sign(-2) * abs(-3)", &[0.0]), -3.0);
        assert!((ev("tanh(x) + 2", &[1e6]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn coefficient_expression_ast() {
        let e = parse_expression("2 + 1/(1+x0^2)", 1).unwrap();
        // Add(2, Div(1, Add(1, Pow(x0, 2))))
        assert_eq!(e.node_count(), 8);
        assert_eq!(e.eval(&[0.0]).unwrap(), 3.0);
        assert_eq!(e.eval(&[1.0]).unwrap(), 2.5);
    }

    #[test]
    fn errors_carry_columns() {
        match parse_expression("1 + * 2", 1) {
            Err(Error::Expression { column, .. }) => assert_eq!(column, 5),
            other => panic!("{other:?}"),
        }
        match parse_expression("x2 + 1", 2) {
            Err(Error::Expression { column, .. }) => assert_eq!(column, 1),
            other => panic!("{other:?}"),
        }
        assert!(parse_expression("foo(1)", 1).is_err());
        assert!(parse_expression("x0^1.5", 1).is_err());
        assert!(parse_expression("(1 + 2", 1).is_err());
    }

    #[test]
    fn division_by_zero_is_a_point_error() {
        let e = parse_expression("1/x0", 1).unwrap();
        assert!(e.eval(&[0.0]).is_err());
        assert_eq!(e.eval(&[2.0]).unwrap(), 0.5);
    }

    #[test]
    fn shifting_substitutes_coordinates() {
        let e = parse_expression("x0 * x1", 2).unwrap();
        let s = e.shifted(&[1, -2]);
        assert_eq!(s.eval(&[3.0, 5.0]).unwrap(), 12.0);
        let reparsed = parse_expression(&s.to_string(), 2).unwrap();
        assert_eq!(reparsed.eval(&[3.0, 5.0]).unwrap(), 12.0);
    }
}

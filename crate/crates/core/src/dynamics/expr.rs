//! Arithmetic expressions over the state variables `x1..xd`.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | '+' unary | power
//! power  := atom ('^' unary)?          // right associative
//! atom   := number | 'x'N | 'pi' | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | sqrt | tanh
//! ```
//!
//! `-x1^2` parses as `-(x1^2)`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("unexpected character '{ch}' at offset {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token '{token}' at offset {pos}")]
    UnexpectedToken { token: String, pos: usize },
    #[error("unknown identifier '{name}' at offset {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("variable '{name}' is out of range for dimension {dim}")]
    VariableOutOfRange { name: String, dim: usize },
    #[error("malformed number '{text}' at offset {pos}")]
    BadNumber { text: String, pos: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Sqrt => v.sqrt(),
            Func::Tanh => v.tanh(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }
}

/// Parsed expression tree. Variables are zero-based indices into the state vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Integer exponent, evaluated with `powi` so negative bases behave.
    PowI(Box<Expr>, i32),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ParseError> {
        let tokens = tokenize(text)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        match parser.peek() {
            None => Ok(expr),
            Some((tok, pos)) => Err(ParseError::UnexpectedToken {
                token: tok.to_string(),
                pos,
            }),
        }
    }

    /// Parses and checks that every variable index is below `dim`.
    pub fn parse_with_dim(text: &str, dim: usize) -> Result<Expr, ParseError> {
        let expr = Expr::parse(text)?;
        if let Some(v) = expr.max_var() {
            if v >= dim {
                return Err(ParseError::VariableOutOfRange {
                    name: format!("x{}", v + 1),
                    dim,
                });
            }
        }
        Ok(expr)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::PowI(a, n) => a.eval(x).powi(*n),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Call(f, a) => f.apply(a.eval(x)),
        }
    }

    /// Highest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::PowI(a, _) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => match (a.max_var(), b.max_var()) {
                (Some(p), Some(q)) => Some(p.max(q)),
                (p, q) => p.or(q),
            },
        }
    }

    pub fn is_constant(&self) -> bool {
        self.max_var().is_none()
    }
}

impl FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::PowI(a, n) => write!(f, "({a} ^ {n})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "{v}"),
            Token::Ident(s) => write!(f, "{s}"),
            Token::Op(c) => write!(f, "{c}"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let bytes: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let (pos, ch) = bytes[i];
        if ch.is_whitespace() {
            i += 1;
            continue;
        }
        if ch.is_ascii_digit() || ch == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].1.is_ascii_digit() || bytes[i].1 == '.') {
                i += 1;
            }
            // exponent part: e or E, optional sign, digits
            if i < bytes.len() && (bytes[i].1 == 'e' || bytes[i].1 == 'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j].1 == '+' || bytes[j].1 == '-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].1.is_ascii_digit() {
                    while j < bytes.len() && bytes[j].1.is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let end = if i < bytes.len() { bytes[i].0 } else { text.len() };
            let lit = &text[pos..end];
            let v: f64 = lit.parse().map_err(|_| ParseError::BadNumber {
                text: lit.to_string(),
                pos: bytes[start].0,
            })?;
            out.push((Token::Num(v), pos));
            continue;
        }
        if ch.is_ascii_alphabetic() || ch == '_' {
            let mut end = i;
            while end < bytes.len() && (bytes[end].1.is_ascii_alphanumeric() || bytes[end].1 == '_') {
                end += 1;
            }
            let stop = if end < bytes.len() { bytes[end].0 } else { text.len() };
            out.push((Token::Ident(text[pos..stop].to_string()), pos));
            i = end;
            continue;
        }
        let tok = match ch {
            '+' | '-' | '*' | '/' | '^' => Token::Op(ch),
            '(' => Token::LParen,
            ')' => Token::RParen,
            _ => return Err(ParseError::UnexpectedChar { ch, pos }),
        };
        out.push((tok, pos));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<(&Token, usize)> {
        self.tokens.get(self.pos).map(|(t, p)| (t, *p))
    }

    fn next(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.next() {
            Some((Token::RParen, _)) => Ok(()),
            Some((tok, pos)) => Err(ParseError::UnexpectedToken {
                token: tok.to_string(),
                pos,
            }),
            None => Err(ParseError::UnexpectedEnd),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some((Token::Op(op @ ('+' | '-')), _)) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some((Token::Op(op @ ('*' | '/')), _)) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some((Token::Op('-'), _)) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some((Token::Op('+'), _)) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Some((Token::Op('^'), _)) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(match exponent {
                Expr::Num(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                    Expr::PowI(Box::new(base), v as i32)
                }
                Expr::Neg(ref inner) if matches!(**inner, Expr::Num(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64) => {
                    let Expr::Num(v) = **inner else { unreachable!() };
                    Expr::PowI(Box::new(base), -(v as i32))
                }
                other => Expr::Pow(Box::new(base), Box::new(other)),
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (tok, pos) = self.next().ok_or(ParseError::UnexpectedEnd)?;
        match tok {
            Token::Num(v) => Ok(Expr::Num(v)),
            Token::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Token::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    match self.next() {
                        Some((Token::LParen, _)) => {}
                        Some((tok, pos)) => {
                            return Err(ParseError::UnexpectedToken {
                                token: tok.to_string(),
                                pos,
                            })
                        }
                        None => return Err(ParseError::UnexpectedEnd),
                    }
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                if let Some(rest) = name.strip_prefix('x') {
                    if let Ok(k) = rest.parse::<usize>() {
                        if k >= 1 && !rest.starts_with('0') {
                            return Ok(Expr::Var(k - 1));
                        }
                    }
                }
                Err(ParseError::UnknownIdentifier { name, pos })
            }
            other => Err(ParseError::UnexpectedToken {
                token: other.to_string(),
                pos,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[]), 512.0);
        assert_eq!(ev("-2 ^ 2", &[]), -4.0);
        assert_eq!(ev("8 / 4 / 2", &[]), 1.0);
        assert_eq!(ev("1 - 2 - 3", &[]), -4.0);
        assert_eq!(ev("2 ^ -1", &[]), 0.5);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(ev("x1 - x1^3", &[1.0]), 0.0);
        assert_eq!(ev("x1 - x1^3", &[-2.0]), 6.0);
        assert!((ev("sin(x1) + cos(x2)", &[0.3, 0.4]) - (0.3f64.sin() + 0.4f64.cos())).abs() < 1e-15);
        assert!((ev("sqrt(1 + x1^2)", &[1.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert!((ev("exp(-x1) * tanh(x2)", &[1.0, 0.5]) - (-1f64).exp() * 0.5f64.tanh()).abs() < 1e-15);
        assert_eq!(ev("1.5e-1 * 2E1", &[]), 3.0);
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(Expr::parse("x1 +"), Err(ParseError::UnexpectedEnd)));
        assert!(matches!(Expr::parse("y1"), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(Expr::parse("x0"), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(Expr::parse("(x1"), Err(ParseError::UnexpectedEnd)));
        assert!(matches!(Expr::parse("x1 $ 2"), Err(ParseError::UnexpectedChar { ch: '$', .. })));
        assert!(matches!(Expr::parse("x1 x2"), Err(ParseError::UnexpectedToken { .. })));
        assert!(matches!(
            Expr::parse_with_dim("x3", 2),
            Err(ParseError::VariableOutOfRange { .. })
        ));
    }

    #[test]
    fn display_reparses_to_same_value() {
        let e = Expr::parse("-x1^2 + 3*sin(x2)/(1+x1)").unwrap();
        let again = Expr::parse(&e.to_string()).unwrap();
        let x = [0.7, -1.3];
        assert_eq!(e.eval(&x), again.eval(&x));
    }
}

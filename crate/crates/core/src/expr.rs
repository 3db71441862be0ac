//! A small arithmetic expression grammar for model definition files.
//!
//! Grammar (documented in the README):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          // right-associative
//! atom   := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'
//! VAR    := x1 .. xN  (plain `x` is an alias for x1)
//! FUNC   := exp | log | sqrt
//! ```
//!
//! Expressions carry exact symbolic derivatives so fields defined this way
//! get analytic gradients and Hessians rather than finite differences.

use crate::error::{Error, Result};

/// Parsed expression tree over variables `x1..xN`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Sqrt(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' | '\u{2212}' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '^' => {
                out.push(Token::Caret);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                // scientific notation: 1e-3, 2.5E+4
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
                let value = text
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("invalid number `{text}`")))?;
                out.push(Token::Num(value));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => {
                return Err(Error::Parse(format!("unexpected character `{other}`")));
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Token) -> Result<()> {
        match self.bump() {
            Some(t) if t == tok => Ok(()),
            other => Err(Error::Parse(format!("expected {tok:?}, found {other:?}"))),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    let rhs = self.parse_term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(Token::Minus) => {
                    self.bump();
                    let rhs = self.parse_term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.bump();
                    let rhs = self.parse_unary()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(Token::Slash) => {
                    self.bump();
                    let rhs = self.parse_unary()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.bump();
            let inner = self.parse_unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr> {
        let base = self.parse_atom()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.bump();
            let exponent = self.parse_unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr> {
        match self.bump() {
            Some(Token::Num(v)) => Ok(Expr::Num(v)),
            Some(Token::LParen) => {
                let inner = self.parse_expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => match name.as_str() {
                "exp" | "log" | "sqrt" => {
                    self.expect(Token::LParen)?;
                    let arg = self.parse_expr()?;
                    self.expect(Token::RParen)?;
                    Ok(match name.as_str() {
                        "exp" => Expr::Exp(Box::new(arg)),
                        "log" => Expr::Log(Box::new(arg)),
                        _ => Expr::Sqrt(Box::new(arg)),
                    })
                }
                "x" => {
                    if self.dim >= 1 {
                        Ok(Expr::Var(0))
                    } else {
                        Err(Error::Parse("variable `x` in zero-dimensional context".into()))
                    }
                }
                other => {
                    if let Some(rest) = other.strip_prefix('x') {
                        if let Ok(idx) = rest.parse::<usize>() {
                            if idx >= 1 && idx <= self.dim {
                                return Ok(Expr::Var(idx - 1));
                            }
                            return Err(Error::Parse(format!(
                                "variable `{other}` out of range for dimension {}",
                                self.dim
                            )));
                        }
                    }
                    Err(Error::Parse(format!("unknown identifier `{other}`")))
                }
            },
            other => Err(Error::Parse(format!("unexpected token {other:?}"))),
        }
    }
}

impl Expr {
    /// Parses `src` as an expression over `x1..x<dim>`.
    pub fn parse(src: &str, dim: usize) -> Result<Expr> {
        let tokens = tokenize(src)?;
        if tokens.is_empty() {
            return Err(Error::Parse("empty expression".into()));
        }
        let mut parser = Parser { tokens, pos: 0, dim };
        let expr = parser.parse_expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Parse(format!(
                "trailing input after expression at token {}",
                parser.pos
            )));
        }
        Ok(expr)
    }

    /// Evaluates the expression at state `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Neg(a) => -a.eval(x),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Log(a) => a.eval(x).ln(),
            Expr::Sqrt(a) => a.eval(x).sqrt(),
        }
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn diff(&self, var: usize) -> Expr {
        use Expr::*;
        let d = match self {
            Num(_) => Num(0.0),
            Var(i) => Num(if *i == var { 1.0 } else { 0.0 }),
            Add(a, b) => Add(Box::new(a.diff(var)), Box::new(b.diff(var))),
            Sub(a, b) => Sub(Box::new(a.diff(var)), Box::new(b.diff(var))),
            Mul(a, b) => Add(
                Box::new(Mul(Box::new(a.diff(var)), b.clone())),
                Box::new(Mul(a.clone(), Box::new(b.diff(var)))),
            ),
            Div(a, b) => Div(
                Box::new(Sub(
                    Box::new(Mul(Box::new(a.diff(var)), b.clone())),
                    Box::new(Mul(a.clone(), Box::new(b.diff(var)))),
                )),
                Box::new(Mul(b.clone(), b.clone())),
            ),
            Pow(a, b) => match b.as_ref() {
                // constant exponent: n * a^(n-1) * a'
                Num(n) => Mul(
                    Box::new(Mul(
                        Box::new(Num(*n)),
                        Box::new(Pow(a.clone(), Box::new(Num(n - 1.0)))),
                    )),
                    Box::new(a.diff(var)),
                ),
                // general: a^b * (b' log a + b a'/a)
                _ => Mul(
                    Box::new(self.clone()),
                    Box::new(Add(
                        Box::new(Mul(Box::new(b.diff(var)), Box::new(Log(a.clone())))),
                        Box::new(Div(
                            Box::new(Mul(b.clone(), Box::new(a.diff(var)))),
                            a.clone(),
                        )),
                    )),
                ),
            },
            Neg(a) => Neg(Box::new(a.diff(var))),
            Exp(a) => Mul(Box::new(self.clone()), Box::new(a.diff(var))),
            Log(a) => Div(Box::new(a.diff(var)), a.clone()),
            Sqrt(a) => Div(
                Box::new(a.diff(var)),
                Box::new(Mul(Box::new(Num(2.0)), Box::new(self.clone()))),
            ),
        };
        d.simplify()
    }

    /// Light constant folding; keeps derivative trees small.
    pub fn simplify(self) -> Expr {
        use Expr::*;
        match self {
            Add(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (&a, &b) {
                    (Num(x), Num(y)) => Num(x + y),
                    (Num(z), _) if *z == 0.0 => b,
                    (_, Num(z)) if *z == 0.0 => a,
                    _ => Add(Box::new(a), Box::new(b)),
                }
            }
            Sub(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (&a, &b) {
                    (Num(x), Num(y)) => Num(x - y),
                    (_, Num(z)) if *z == 0.0 => a,
                    (Num(z), _) if *z == 0.0 => Neg(Box::new(b)),
                    _ => Sub(Box::new(a), Box::new(b)),
                }
            }
            Mul(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (&a, &b) {
                    (Num(x), Num(y)) => Num(x * y),
                    (Num(z), _) | (_, Num(z)) if *z == 0.0 => Num(0.0),
                    (Num(o), _) if *o == 1.0 => b,
                    (_, Num(o)) if *o == 1.0 => a,
                    _ => Mul(Box::new(a), Box::new(b)),
                }
            }
            Div(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (&a, &b) {
                    (Num(z), _) if *z == 0.0 => Num(0.0),
                    (_, Num(o)) if *o == 1.0 => a,
                    (Num(x), Num(y)) if *y != 0.0 => Num(x / y),
                    _ => Div(Box::new(a), Box::new(b)),
                }
            }
            Pow(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (&a, &b) {
                    (_, Num(z)) if *z == 0.0 => Num(1.0),
                    (_, Num(o)) if *o == 1.0 => a,
                    (Num(x), Num(y)) => Num(x.powf(*y)),
                    _ => Pow(Box::new(a), Box::new(b)),
                }
            }
            Neg(a) => {
                let a = a.simplify();
                match a {
                    Num(x) => Num(-x),
                    Neg(inner) => *inner,
                    _ => Neg(Box::new(a)),
                }
            }
            Exp(a) => {
                let a = a.simplify();
                if let Num(x) = a {
                    Num(x.exp())
                } else {
                    Exp(Box::new(a))
                }
            }
            Log(a) => {
                let a = a.simplify();
                if let Num(x) = a {
                    Num(x.ln())
                } else {
                    Log(Box::new(a))
                }
            }
            Sqrt(a) => {
                let a = a.simplify();
                if let Num(x) = a {
                    Num(x.sqrt())
                } else {
                    Sqrt(Box::new(a))
                }
            }
            other => other,
        }
    }
}

//! A small arithmetic expression language for symbolic parameter texts.
//!
//! Variables are `x` (alias `input`) and `y`. Operators are `+ - * / ^` plus
//! implicit multiplication such as `3.34x` or `2(x + 1)`. The functions
//! `sin`, `cos` and `sqrt` are available.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError(pub String);

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(s: &str) -> Result<Vec<Tok>, ParseError> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let lit: String = chars[start..i].iter().collect();
            let v = lit
                .parse::<f64>()
                .map_err(|_| ParseError(format!("bad number '{lit}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_alphabetic() {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect::<String>().to_lowercase()));
        } else if c == '*' && chars.get(i + 1) == Some(&'*') {
            out.push(Tok::Op('^'));
            i += 2;
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '−' => Tok::Op('-'),
                '·' | '×' => Tok::Op('*'),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '²' => {
                    out.push(Tok::Op('^'));
                    Tok::Num(2.0)
                }
                other => return Err(ParseError(format!("unexpected character '{other}'"))),
            };
            out.push(tok);
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    vars: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
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

    fn starts_atom(&self) -> bool {
        matches!(self.peek(), Some(Tok::Num(_) | Tok::Ident(_) | Tok::LParen))
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().cloned() {
                Some(Tok::Op(op @ ('*' | '/'))) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = if op == '*' {
                        Expr::Mul(Box::new(lhs), Box::new(rhs))
                    } else {
                        Expr::Div(Box::new(lhs), Box::new(rhs))
                    };
                }
                _ if self.starts_atom() => {
                    let rhs = self.power()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(ParseError("missing ')'".into())),
                }
            }
            Some(Tok::Ident(name)) => {
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                if let Some(f) = func {
                    let arg = match self.peek() {
                        Some(Tok::LParen) => self.atom()?,
                        _ => self.power()?,
                    };
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                let var = match name.as_str() {
                    "x" | "input" => 0,
                    "y" if self.vars > 1 => 1,
                    _ => return Err(ParseError(format!("unknown name '{name}'"))),
                };
                Ok(Expr::Var(var))
            }
            Some(t) => Err(ParseError(format!("unexpected token {t:?}"))),
            None => Err(ParseError("unexpected end of expression".into())),
        }
    }
}

/// Parses an expression over `vars` variables (1: `x`; 2: `x`, `y`).
pub fn parse(s: &str, vars: usize) -> Result<Expr, ParseError> {
    let toks = tokenize(s)?;
    if toks.is_empty() {
        return Err(ParseError("empty expression".into()));
    }
    let mut p = Parser { toks, pos: 0, vars };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(ParseError(format!("trailing input at token {}", p.pos)));
    }
    Ok(e)
}

impl Expr {
    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => vars.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Neg(a) => -a.eval(vars),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Pow(a, b) => {
                let e = b.eval(vars);
                if e.fract() == 0.0 && e.abs() < 64.0 {
                    a.eval(vars).powi(e as i32)
                } else {
                    a.eval(vars).powf(e)
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(vars);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Sqrt => v.sqrt(),
                }
            }
        }
    }

    pub fn uses_var(&self, i: usize) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(j) => *j == i,
            Expr::Neg(a) | Expr::Call(_, a) => a.uses_var(i),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.uses_var(i) || b.uses_var(i)
            }
        }
    }

    pub fn has_call(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) => false,
            Expr::Call(..) => true,
            Expr::Neg(a) => a.has_call(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.has_call() || b.has_call()
            }
        }
    }

    /// Coefficients (constant first) when the expression is a polynomial in `x`.
    pub fn to_poly(&self) -> Option<Vec<f64>> {
        fn add(a: &[f64], b: &[f64], sign: f64) -> Vec<f64> {
            let n = a.len().max(b.len());
            (0..n)
                .map(|i| a.get(i).copied().unwrap_or(0.0) + sign * b.get(i).copied().unwrap_or(0.0))
                .collect()
        }
        fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
            let mut out = vec![0.0; a.len() + b.len() - 1];
            for (i, x) in a.iter().enumerate() {
                for (j, y) in b.iter().enumerate() {
                    out[i + j] += x * y;
                }
            }
            out
        }
        match self {
            Expr::Num(v) => Some(vec![*v]),
            Expr::Var(0) => Some(vec![0.0, 1.0]),
            Expr::Var(_) => None,
            Expr::Neg(a) => Some(a.to_poly()?.iter().map(|c| -c).collect()),
            Expr::Add(a, b) => Some(add(&a.to_poly()?, &b.to_poly()?, 1.0)),
            Expr::Sub(a, b) => Some(add(&a.to_poly()?, &b.to_poly()?, -1.0)),
            Expr::Mul(a, b) => Some(mul(&a.to_poly()?, &b.to_poly()?)),
            Expr::Div(a, b) => {
                let d = b.to_poly()?;
                if d.iter().skip(1).any(|c| *c != 0.0) || d[0] == 0.0 {
                    return None;
                }
                Some(a.to_poly()?.iter().map(|c| c / d[0]).collect())
            }
            Expr::Pow(a, b) => {
                let e = b.to_poly()?;
                if e.iter().skip(1).any(|c| *c != 0.0) || e[0].fract() != 0.0 || !(0.0..=8.0).contains(&e[0]) {
                    return None;
                }
                let base = a.to_poly()?;
                let mut out = vec![1.0];
                for _ in 0..e[0] as usize {
                    out = mul(&out, &base);
                }
                Some(out)
            }
            Expr::Call(..) => None,
        }
    }

    /// Highest power of `x` written in the expression, zero coefficients
    /// included, so `0.00x + 0.00` still has the affine form.
    pub fn form_degree(&self) -> Option<usize> {
        Some(self.to_poly()?.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> f64 {
        parse(s, 1).unwrap().eval(&[x])
    }

    #[test]
    fn affine_forms() {
        assert!((ev("5.5x + 2.5", 0.28) - 4.04).abs() < 1e-12);
        assert!((ev("3.28 + 3.34 * Input", 1.0) - 6.62).abs() < 1e-12);
        assert!((ev("5.5(0.28) + 2.5", 0.0) - 4.04).abs() < 1e-12);
        assert_eq!(ev("-x", 2.0), -2.0);
        assert_eq!(ev("2 - 3x", 1.0), -1.0);
    }

    #[test]
    fn powers_and_functions() {
        assert_eq!(ev("3x^2 + x + 2", -1.0), 4.0);
        assert_eq!(ev("3x**2 + x + 2", -1.0), 4.0);
        assert_eq!(ev("3x² + x + 2", -1.0), 4.0);
        assert_eq!(ev("-x^2", 3.0), -9.0);
        assert_eq!(ev("sin(x) + 2", 0.0), 2.0);
        assert_eq!(ev("2sin(x)", 0.0), 0.0);
    }

    #[test]
    fn two_variables() {
        let e = parse("x^2 + y^2", 2).unwrap();
        assert_eq!(e.eval(&[0.3, 0.4]), 0.09 + 0.16000000000000003);
        assert!(parse("y + 1", 1).is_err());
    }

    #[test]
    fn rejects_prose() {
        assert!(parse("the vibes are good", 1).is_err());
        assert!(parse("3x +", 1).is_err());
        assert!(parse("", 1).is_err());
    }

    #[test]
    fn polynomial_view() {
        assert_eq!(parse("3x^2 + x + 2", 1).unwrap().to_poly(), Some(vec![2.0, 1.0, 3.0]));
        assert_eq!(parse("3.00x + 4.00", 1).unwrap().form_degree(), Some(1));
        assert_eq!(parse("0.00x + 0.00", 1).unwrap().form_degree(), Some(1));
        assert_eq!(parse("0x^2 + 1", 1).unwrap().form_degree(), Some(2));
        assert_eq!(parse("sin(x)", 1).unwrap().to_poly(), None);
    }
}

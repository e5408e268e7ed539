//! Arithmetic expressions in one variable `x`, used for potentials and
//! coefficient functions in run configurations.
//!
//! Grammar: numbers, `x`, `pi`, `e`, `+ - * / ^` (with `^` right-associative and
//! binding tighter than unary minus), parentheses, and the functions `exp`,
//! `log`, `sqrt`, `sin`, `cos`, `abs`.

use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("parse error at position {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{operation} is undefined at {argument} (x = {x})")]
pub struct DomainError {
    pub operation: &'static str,
    pub argument: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X,
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { position: self.pos, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{c}'"))
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            return Ok(Node::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.chars.get(self.pos).is_some_and(|c| c.is_ascii_alphanumeric()) {
                    self.pos += 1;
                }
                let name: String = self.chars[start..self.pos].iter().collect();
                match name.as_str() {
                    "x" => Ok(Node::X),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => match Func::from_name(&name) {
                        Some(f) => {
                            self.expect('(')?;
                            let arg = self.expr()?;
                            self.expect(')')?;
                            Ok(Node::Call(f, Box::new(arg)))
                        }
                        None => {
                            self.pos = start;
                            self.err(format!("unknown identifier '{name}'"))
                        }
                    },
                }
            }
            Some(c) => self.err(format!("unexpected '{c}'")),
            None => self.err("unexpected end of expression"),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.chars.get(p.pos).is_some_and(|c| c.is_ascii_digit()) {
                p.pos += 1;
            }
        };
        digits(self);
        if self.chars.get(self.pos) == Some(&'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.chars.get(self.pos), Some('e' | 'E'))
            && self.chars.get(self.pos + 1).is_some_and(|c| c.is_ascii_digit() || *c == '+' || *c == '-')
        {
            self.pos += 2;
            digits(self);
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        match text.parse::<f64>() {
            Ok(v) => Ok(Node::Num(v)),
            Err(_) => {
                self.pos = start;
                self.err(format!("malformed number '{text}'"))
            }
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let mut p = Parser { chars: src.chars().collect(), pos: 0, src };
        let root = p.expr()?;
        if let Some(c) = p.peek() {
            return p.err(format!("unexpected '{c}' after expression"));
        }
        Ok(Expr { source: p.src.to_string(), root })
    }

    pub fn eval(&self, x: f64) -> Result<f64, DomainError> {
        eval(&self.root, x)
    }
}

fn eval(node: &Node, x: f64) -> Result<f64, DomainError> {
    let domain = |operation, argument| DomainError { operation, argument, x };
    let v = match node {
        Node::Num(v) => *v,
        Node::X => x,
        Node::Neg(a) => -eval(a, x)?,
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x)?, eval(b, x)?);
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' if b == 0.0 => return Err(domain("division", b)),
                '/' => a / b,
                _ => {
                    let v = a.powf(b);
                    if v.is_nan() {
                        return Err(domain("power", a));
                    }
                    v
                }
            }
        }
        Node::Call(f, a) => {
            let a = eval(a, x)?;
            match f {
                Func::Log if a <= 0.0 => return Err(domain("log", a)),
                Func::Sqrt if a < 0.0 => return Err(domain("sqrt", a)),
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Abs => a.abs(),
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        let op = match node {
            Node::Call(f, _) => f.name(),
            _ => "arithmetic",
        };
        Err(domain(op, v))
    }
}

/// Parse and evaluate in one go.
pub fn expr_eval(expression: &str, x: f64) -> Result<f64, ExprError> {
    Ok(Expr::parse(expression)?.eval(x)?)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_examples() {
        assert_eq!(expr_eval("x*(1-x)", 0.5).unwrap(), 0.25);
        assert_eq!(expr_eval("sqrt(1+x^2)", 0.0).unwrap(), 1.0);
        assert!(matches!(expr_eval("log(x)", -1.0), Err(ExprError::Domain(_))));
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(expr_eval("2^3^2", 0.0).unwrap(), 512.0);
        assert_eq!(expr_eval("-x^2", 3.0).unwrap(), -9.0);
        assert_eq!(expr_eval("2^-1", 0.0).unwrap(), 0.5);
        assert_eq!(expr_eval("1 - 2 - 3", 0.0).unwrap(), -4.0);
        assert_eq!(expr_eval("8 / 4 / 2", 0.0).unwrap(), 1.0);
        assert_eq!(expr_eval("1.5e2 + 2E-1", 0.0).unwrap(), 150.2);
        assert!((expr_eval("exp(1) - e", 0.0).unwrap()).abs() < 1e-15);
        assert!((expr_eval("cos(pi)", 0.0).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(expr_eval("abs(x)", -2.0).unwrap(), 2.0);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let e = Expr::parse("1 + * 2").unwrap_err();
        assert_eq!(e.position, 4);
        let e = Expr::parse("foo(x)").unwrap_err();
        assert_eq!(e.position, 0);
        let e = Expr::parse("(x + 1").unwrap_err();
        assert_eq!(e.position, 6);
        assert!(Expr::parse("x x").is_err());
        assert!(Expr::parse("").is_err());
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(expr_eval("1/x", 0.0), Err(ExprError::Domain(DomainError { operation: "division", .. }))));
        assert!(matches!(expr_eval("sqrt(x)", -1.0), Err(ExprError::Domain(_))));
        assert!(matches!(expr_eval("x^0.5", -1.0), Err(ExprError::Domain(_))));
        assert!(matches!(expr_eval("exp(x)", 1e4), Err(ExprError::Domain(_))));
    }
}

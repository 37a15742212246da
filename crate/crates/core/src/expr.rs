//! Closed-form initial data: a small arithmetic expression language in the
//! coordinates `x1`, `x2` (aliases `x`, `y`).
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | 'pi' | 'e' | variable | func '(' sum ')' | '(' sum ')'
//! ```

use std::f64::consts::{E, PI};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

impl Func {
    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "tan" => Self::Tan,
            "tanh" => Self::Tanh,
            "exp" => Self::Exp,
            "ln" | "log" => Self::Ln,
            "sqrt" => Self::Sqrt,
            "abs" => Self::Abs,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Self::Sin => v.sin(),
            Self::Cos => v.cos(),
            Self::Tan => v.tan(),
            Self::Tanh => v.tanh(),
            Self::Exp => v.exp(),
            Self::Ln => v.ln(),
            Self::Sqrt => v.sqrt(),
            Self::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X1,
    X2,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, x1: f64, x2: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::X1 => x1,
            Node::X2 => x2,
            Node::Neg(a) => -a.eval(x1, x2),
            Node::Add(a, b) => a.eval(x1, x2) + b.eval(x1, x2),
            Node::Sub(a, b) => a.eval(x1, x2) - b.eval(x1, x2),
            Node::Mul(a, b) => a.eval(x1, x2) * b.eval(x1, x2),
            Node::Div(a, b) => a.eval(x1, x2) / b.eval(x1, x2),
            Node::Pow(a, b) => a.eval(x1, x2).powf(b.eval(x1, x2)),
            Node::Call(f, a) => f.apply(a.eval(x1, x2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.position + 1, self.message)
    }
}

impl std::error::Error for ExprError {}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v = text.parse().map_err(|_| ExprError {
                position: start,
                message: format!("malformed number '{text}'"),
            })?;
            out.push((start, Token::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Token::Ident(src[start..i].to_string())));
        } else if "+-*/^()".contains(c) {
            out.push((i, Token::Op(c)));
            i += 1;
        } else {
            return Err(ExprError {
                position: i,
                message: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(c, _)| *c)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            position: self.column(),
            message: message.into(),
        })
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Token::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.product()?;
        loop {
            if self.eat('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.product()?));
            } else if self.eat('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.product()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn product(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat('^') {
            // right associative, and -x^2 reads as -(x^2)
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return self.error("unexpected end of expression");
        };
        match tok {
            Token::Num(v) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Token::Op('(') => {
                self.pos += 1;
                let inner = self.sum()?;
                if !self.eat(')') {
                    return self.error("expected ')'");
                }
                Ok(inner)
            }
            Token::Op(c) => self.error(format!("unexpected '{c}'")),
            Token::Ident(name) => {
                self.pos += 1;
                match name.as_str() {
                    "x1" | "x" => Ok(Node::X1),
                    "x2" | "y" => Ok(Node::X2),
                    "pi" => Ok(Node::Num(PI)),
                    "e" => Ok(Node::Num(E)),
                    _ => {
                        let Some(f) = Func::lookup(&name) else {
                            self.pos -= 1;
                            return self.error(format!("unknown name '{name}'"));
                        };
                        if !self.eat('(') {
                            return self.error(format!("expected '(' after '{name}'"));
                        }
                        let arg = self.sum()?;
                        if !self.eat(')') {
                            return self.error("expected ')'");
                        }
                        Ok(Node::Call(f, Box::new(arg)))
                    }
                }
            }
        }
    }
}

/// A parsed closed-form function of `(x1, x2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let mut parser = Parser {
            tokens: tokenize(src)?,
            pos: 0,
            end: src.len(),
        };
        let root = parser.sum()?;
        if parser.pos != parser.tokens.len() {
            return parser.error("trailing input");
        }
        Ok(Self {
            source: src.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        self.root.eval(x1, x2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(src: &str, x1: f64, x2: f64) -> f64 {
        Expr::parse(src).unwrap().eval(x1, x2)
    }

    #[test]
    fn precedence() {
        assert_eq!(eval("1 + 2 * 3", 0.0, 0.0), 7.0);
        assert_eq!(eval("(1 + 2) * 3", 0.0, 0.0), 9.0);
        assert_eq!(eval("2 ^ 3 ^ 2", 0.0, 0.0), 512.0);
        assert_eq!(eval("-2 ^ 2", 0.0, 0.0), -4.0);
        assert_eq!(eval("2 ^ -1", 0.0, 0.0), 0.5);
        assert_eq!(eval("8 / 4 / 2", 0.0, 0.0), 1.0);
        assert_eq!(eval("1 - 2 - 3", 0.0, 0.0), -4.0);
        assert_eq!(eval("1.5e-1 * 2E1", 0.0, 0.0), 3.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(eval("x1 - 2*x2", 0.5, 0.25), 0.0);
        assert_eq!(eval("x * y", 3.0, 4.0), 12.0);
        assert_eq!(eval("cos(pi*x)", 1.0, 0.0), -1.0);
        let v = eval("tanh((2*x2 - 1)/0.2) + 1", 0.5, 1.0);
        assert_eq!(v, 5f64.tanh() + 1.0);
        assert_eq!(eval("sqrt(abs(-16)) + ln(exp(2))", 0.0, 0.0), 6.0);
        assert_eq!(eval("log(e)", 0.0, 0.0), 1.0);
    }

    #[test]
    fn errors_point_at_the_problem() {
        let err = Expr::parse("sin(x1").unwrap_err();
        assert!(err.message.contains("')'"));
        assert_eq!(Expr::parse("x3 + 1").unwrap_err().position, 0);
        assert_eq!(Expr::parse("1 + $").unwrap_err().position, 4);
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("foo(1)").is_err());
        assert!(Expr::parse("sin 1").is_err());
    }

    proptest! {
        #[test]
        fn linear_forms_round_trip(a in -50.0f64..50.0, b in -50.0f64..50.0, x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let src = format!("{a} * x1 + ({b}) * x2");
            let got = eval(&src, x, y);
            prop_assert!((got - (a * x + b * y)).abs() <= 1e-12 * (1.0 + a.abs() + b.abs()));
        }
    }
}

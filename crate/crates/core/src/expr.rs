//! Small arithmetic-expression language for data functions.
//!
//! Grammar (usual precedence, `^` right-associative):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables are `x`, `y`, `z`, `t`, `theta`, `r`. Other names must be
//! constants supplied at parse time (plus `pi`). Functions: `sin cos exp ln
//! sqrt abs min max pow step bump`, where `step` is the C-infinity step from 0
//! (s <= 0) to 1 (s >= 1) and `bump` the C-infinity bump on (0, 1).
//! Expressions compile to postfix code and evaluate either in `f64` or in
//! Taylor jets, which gives exact derivatives in one variable.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::jet::{bump_f64, smooth_bump, smooth_step, step_f64, Jet};

pub const VAR_NAMES: [&str; 6] = ["x", "y", "z", "t", "theta", "r"];
pub const X: usize = 0;
pub const Y: usize = 1;
pub const Z: usize = 2;
pub const T: usize = 3;
pub const THETA: usize = 4;
pub const R: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Min,
    Max,
    Pow,
    Step,
    Bump,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "exp" => (Func::Exp, 1),
            "ln" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "pow" => (Func::Pow, 2),
            "step" => (Func::Step, 1),
            "bump" => (Func::Bump, 1),
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    PowConst(f64),
    Call(Func),
}

/// A compiled expression.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    src: String,
    code: Vec<Op>,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Sym(char),
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let b: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let st = i;
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == '.') {
                i += 1;
            }
            if i < b.len() && (b[i] == 'e' || b[i] == 'E') {
                let mut j = i + 1;
                if j < b.len() && (b[j] == '+' || b[j] == '-') {
                    j += 1;
                }
                if j < b.len() && b[j].is_ascii_digit() {
                    i = j;
                    while i < b.len() && b[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let txt: String = b[st..i].iter().collect();
            let v = txt
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number '{txt}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let st = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == '_') {
                i += 1;
            }
            out.push(Tok::Name(b[st..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    consts: &'a HashMap<String, f64>,
    code: Vec<Op>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Expr(format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<()> {
        self.term()?;
        loop {
            if self.eat('+') {
                self.term()?;
                self.code.push(Op::Add);
            } else if self.eat('-') {
                self.term()?;
                self.code.push(Op::Sub);
            } else {
                return Ok(());
            }
        }
    }

    fn term(&mut self) -> Result<()> {
        self.unary()?;
        loop {
            if self.eat('*') {
                self.unary()?;
                self.code.push(Op::Mul);
            } else if self.eat('/') {
                self.unary()?;
                self.code.push(Op::Div);
            } else {
                return Ok(());
            }
        }
    }

    fn unary(&mut self) -> Result<()> {
        if self.eat('-') {
            self.unary()?;
            self.code.push(Op::Neg);
            Ok(())
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<()> {
        self.primary()?;
        if self.eat('^') {
            let mark = self.code.len();
            self.unary()?;
            // constant exponents get the cheaper dedicated op
            if self.code.len() == mark + 1 {
                if let Op::Const(p) = self.code[mark] {
                    self.code.pop();
                    self.code.push(Op::PowConst(p));
                    return Ok(());
                }
            }
            self.code.push(Op::Call(Func::Pow));
        }
        Ok(())
    }

    fn primary(&mut self) -> Result<()> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                self.code.push(Op::Const(v));
                Ok(())
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                self.expr()?;
                self.expect(')')
            }
            Some(Tok::Name(n)) => {
                self.pos += 1;
                if self.eat('(') {
                    let (f, arity) =
                        Func::lookup(&n).ok_or_else(|| Error::Expr(format!("unknown function '{n}'")))?;
                    let mut count = 0;
                    if !self.eat(')') {
                        loop {
                            self.expr()?;
                            count += 1;
                            if self.eat(')') {
                                break;
                            }
                            self.expect(',')?;
                        }
                    }
                    if count != arity {
                        return Err(Error::Expr(format!("{n} takes {arity} argument(s)")));
                    }
                    self.code.push(Op::Call(f));
                    Ok(())
                } else if let Some(i) = VAR_NAMES.iter().position(|v| *v == n) {
                    self.code.push(Op::Var(i));
                    Ok(())
                } else if n == "pi" {
                    self.code.push(Op::Const(std::f64::consts::PI));
                    Ok(())
                } else if let Some(v) = self.consts.get(&n) {
                    self.code.push(Op::Const(*v));
                    Ok(())
                } else {
                    Err(Error::Expr(format!("unknown name '{n}'")))
                }
            }
            other => Err(Error::Expr(format!("unexpected token {other:?}"))),
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        Self::parse_with(src, &HashMap::new())
    }

    pub fn parse_with(src: &str, consts: &HashMap<String, f64>) -> Result<Expr> {
        let toks = tokenize(src)?;
        if toks.is_empty() {
            return Err(Error::Expr("empty expression".into()));
        }
        let mut p = Parser {
            toks,
            pos: 0,
            consts,
            code: Vec::new(),
        };
        p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Expr(format!("trailing input in '{src}'")));
        }
        let mut depth = 0usize;
        for op in &p.code {
            match op {
                Op::Const(_) | Op::Var(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
                Op::Call(Func::Min | Func::Max | Func::Pow) => depth -= 1,
                _ => {}
            }
            if depth > 32 {
                return Err(Error::Expr(format!("expression too deeply nested: '{src}'")));
            }
        }
        Ok(Expr {
            src: src.trim().to_string(),
            code: p.code,
        })
    }

    pub fn constant(v: f64) -> Expr {
        Expr {
            src: format!("{v}"),
            code: vec![Op::Const(v)],
        }
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    /// True when the expression is a literal zero.
    pub fn is_zero(&self) -> bool {
        self.code == [Op::Const(0.0)]
    }

    pub fn uses(&self, var: usize) -> bool {
        self.code.iter().any(|o| *o == Op::Var(var))
    }

    pub fn eval(&self, vars: &[f64; 6]) -> f64 {
        let mut st = [0.0f64; 32];
        let mut sp = 0usize;
        for op in &self.code {
            match op {
                Op::Const(v) => {
                    st[sp] = *v;
                    sp += 1;
                }
                Op::Var(i) => {
                    st[sp] = vars[*i];
                    sp += 1;
                }
                Op::Neg => st[sp - 1] = -st[sp - 1],
                Op::PowConst(p) => {
                    let a = st[sp - 1];
                    st[sp - 1] = if p.fract() == 0.0 && p.abs() < 64.0 {
                        a.powi(*p as i32)
                    } else {
                        a.powf(*p)
                    };
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = st[sp - 1];
                    let a = st[sp - 2];
                    sp -= 1;
                    st[sp - 1] = match op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        _ => a / b,
                    };
                }
                Op::Call(f) => match f {
                    Func::Min | Func::Max | Func::Pow => {
                        let b = st[sp - 1];
                        let a = st[sp - 2];
                        sp -= 1;
                        st[sp - 1] = match f {
                            Func::Min => a.min(b),
                            Func::Max => a.max(b),
                            _ => a.powf(b),
                        };
                    }
                    _ => {
                        let a = st[sp - 1];
                        st[sp - 1] = match f {
                            Func::Sin => a.sin(),
                            Func::Cos => a.cos(),
                            Func::Exp => a.exp(),
                            Func::Ln => a.ln(),
                            Func::Sqrt => a.sqrt(),
                            Func::Abs => a.abs(),
                            Func::Step => step_f64(a),
                            Func::Bump => bump_f64(a),
                            _ => unreachable!(),
                        };
                    }
                },
            }
        }
        st[0]
    }

    /// Evaluate with variable `var` seeded as a jet; returns the Taylor jet.
    pub fn eval_jet(&self, vars: &[f64; 6], var: usize) -> Jet {
        let mut st: Vec<Jet> = Vec::with_capacity(16);
        for op in &self.code {
            match op {
                Op::Const(v) => st.push(Jet::constant(*v)),
                Op::Var(i) => st.push(if *i == var {
                    Jet::variable(vars[*i])
                } else {
                    Jet::constant(vars[*i])
                }),
                Op::Neg => {
                    let a = st.pop().unwrap();
                    st.push(-a);
                }
                Op::PowConst(p) => {
                    let a = st.pop().unwrap();
                    st.push(a.powf(*p));
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = st.pop().unwrap();
                    let a = st.pop().unwrap();
                    st.push(match op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        _ => a / b,
                    });
                }
                Op::Call(f) => match f {
                    Func::Min | Func::Max | Func::Pow => {
                        let b = st.pop().unwrap();
                        let a = st.pop().unwrap();
                        st.push(match f {
                            Func::Min => {
                                if a.value() <= b.value() {
                                    a
                                } else {
                                    b
                                }
                            }
                            Func::Max => {
                                if a.value() >= b.value() {
                                    a
                                } else {
                                    b
                                }
                            }
                            _ => (b * a.ln()).exp(),
                        });
                    }
                    _ => {
                        let a = st.pop().unwrap();
                        st.push(match f {
                            Func::Sin => a.sin(),
                            Func::Cos => a.cos(),
                            Func::Exp => a.exp(),
                            Func::Ln => a.ln(),
                            Func::Sqrt => a.sqrt(),
                            Func::Abs => a.abs(),
                            Func::Step => smooth_step(a),
                            Func::Bump => smooth_bump(a),
                            _ => unreachable!(),
                        });
                    }
                },
            }
        }
        st.pop().unwrap()
    }

    /// n-th partial derivative in `var`.
    pub fn deriv(&self, vars: &[f64; 6], var: usize, n: usize) -> f64 {
        if n == 0 {
            return self.eval(vars);
        }
        self.eval_jet(vars, var).deriv(n)
    }
}

/// Convenience for building variable arrays.
pub fn vars(x: f64, y: f64, z: f64, t: f64, theta: f64, r: f64) -> [f64; 6] {
    [x, y, z, t, theta, r]
}

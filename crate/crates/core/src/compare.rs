//! Answer-expression grammar, evaluation on a simulator grid, and verdicts.
//!
//! Grammar (whitespace ignored, an optional `name =` prefix is dropped):
//!
//! ```text
//! expr     := sum | rational
//! sum      := ['+'|'-'] term (('+'|'-') term)*
//! term     := factor ('*' factor | factor)*       juxtaposition multiplies
//! factor   := NUM | 'pi' | '/' NUM | 't' | 'u(t)' | 'u(-t)'
//!           | 'exp(' lin ')' | ('cos'|'sin') '(' lin [('+'|'-') NUM 'deg'] ')'
//! lin      := ['+'|'-'] NUM* 't' ['/' NUM]        NUM may be 'pi', joined by '*'
//! rational := '(' poly ')' '/' '(' poly ')'       poly in s, degree <= 4
//! ```
//!
//! A term carries at most one coefficient product, one time shape
//! (`t`, `exp`, `cos`, `sin`) and one step gate.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_POLY_DEGREE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("at position {pos}: {message}")]
pub struct GrammarError {
    pub pos: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("type error: {0}")]
    Type(String),
    #[error("input error: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Const,
    Exp { rate: f64 },
    Cos { omega: f64, phase_deg: f64 },
    Sin { omega: f64, phase_deg: f64 },
    Ramp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    None,
    /// u(t): 1 for t > 0.
    Pos,
    /// u(-t): 1 for t <= 0.
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    #[serde(flatten)]
    pub shape: Shape,
    pub gate: Gate,
}

impl Term {
    pub fn constant(c: f64) -> Self {
        Term {
            coef: c,
            shape: Shape::Const,
            gate: Gate::None,
        }
    }

    pub fn exp(c: f64, rate: f64) -> Self {
        Term {
            coef: c,
            shape: Shape::Exp { rate },
            gate: Gate::None,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let gate = match self.gate {
            Gate::None => 1.0,
            Gate::Pos => (t > 0.0) as u8 as f64,
            Gate::Neg => (t <= 0.0) as u8 as f64,
        };
        if gate == 0.0 {
            return 0.0;
        }
        let body = match self.shape {
            Shape::Const => 1.0,
            Shape::Exp { rate } => (rate * t).exp(),
            Shape::Cos { omega, phase_deg } => (omega * t + phase_deg.to_radians()).cos(),
            Shape::Sin { omega, phase_deg } => (omega * t + phase_deg.to_radians()).sin(),
            Shape::Ramp => t,
        };
        self.coef * body
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum AnswerExpression {
    TermSum { terms: Vec<Term> },
    /// Coefficients in ascending powers of s = jω.
    Rational { num: Vec<f64>, den: Vec<f64> },
}

/// Axis family an expression is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    /// Seconds.
    Time,
    /// Hertz; network functions are evaluated at ω = 2πf.
    Frequency,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evaluated {
    Real(Vec<f64>),
    Polar {
        magnitude: Vec<f64>,
        phase_deg: Vec<f64>,
    },
}

impl AnswerExpression {
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        parse_expression(text)
    }

    pub fn axis_kind(&self) -> AxisKind {
        match self {
            AnswerExpression::TermSum { .. } => AxisKind::Time,
            AnswerExpression::Rational { .. } => AxisKind::Frequency,
        }
    }

    /// Network function value at angular frequency `omega`.
    pub fn response(&self, omega: f64) -> Option<Complex64> {
        let AnswerExpression::Rational { num, den } = self else {
            return None;
        };
        let s = Complex64::new(0.0, omega);
        Some(horner(num, s) / horner(den, s))
    }

    pub fn eval_at(&self, t: f64) -> Option<f64> {
        match self {
            AnswerExpression::TermSum { terms } => Some(terms.iter().map(|x| x.eval(t)).sum()),
            AnswerExpression::Rational { .. } => None,
        }
    }
}

fn horner(coefs: &[f64], s: Complex64) -> Complex64 {
    coefs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

/// Wraps degrees into (-180, 180].
pub fn wrap_degrees(d: f64) -> f64 {
    let r = d.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Shortest distance between two angles in degrees, in [0, 180].
pub fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_degrees(a - b).abs()
}

pub fn evaluate(expr: &AnswerExpression, axis: &[f64], kind: AxisKind) -> Result<Evaluated, CompareError> {
    if axis.is_empty() {
        return Err(CompareError::Input("empty axis".into()));
    }
    if expr.axis_kind() != kind {
        return Err(CompareError::Type(format!(
            "{:?} expression cannot be evaluated on a {:?} axis",
            expr.axis_kind(),
            kind
        )));
    }
    match expr {
        AnswerExpression::TermSum { .. } => Ok(Evaluated::Real(
            axis.iter().map(|&t| expr.eval_at(t).unwrap()).collect(),
        )),
        AnswerExpression::Rational { .. } => {
            let h: Vec<Complex64> = axis
                .iter()
                .map(|&f| expr.response(2.0 * PI * f).unwrap())
                .collect();
            Ok(Evaluated::Polar {
                magnitude: h.iter().map(|z| z.norm()).collect(),
                phase_deg: h.iter().map(|z| wrap_degrees(z.arg().to_degrees())).collect(),
            })
        }
    }
}

/// Piecewise-linear interpolation of `values` (on `from`) onto `to`,
/// clamping to the end values outside the source range.
pub fn align(from: &[f64], values: &[f64], to: &[f64]) -> Result<Vec<f64>, CompareError> {
    if from.len() < 2 {
        return Err(CompareError::Input("source axis needs at least 2 points".into()));
    }
    if from.len() != values.len() {
        return Err(CompareError::Input(format!(
            "axis has {} points but values have {}",
            from.len(),
            values.len()
        )));
    }
    if from.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CompareError::Input("source axis is not strictly increasing".into()));
    }
    let last = from.len() - 1;
    Ok(to
        .iter()
        .map(|&x| {
            if x <= from[0] {
                return values[0];
            }
            if x >= from[last] {
                return values[last];
            }
            let hi = from.partition_point(|&a| a < x);
            if from[hi] == x {
                return values[hi];
            }
            let lo = hi - 1;
            let w = (x - from[lo]) / (from[hi] - from[lo]);
            values[lo] + w * (values[hi] - values[lo])
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub rel: f64,
    pub abs: f64,
    /// Absolute floor in degrees for phase channels.
    pub phase_abs_deg: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        TolerancePolicy {
            rel: 0.02,
            abs: 1e-6,
            phase_abs_deg: 0.5,
        }
    }
}

impl TolerancePolicy {
    pub fn with_rel(rel: f64) -> Self {
        TolerancePolicy {
            rel,
            ..Self::default()
        }
    }
}

/// Number of trailing points in the tail window: ceil(0.05 N).
pub fn tail_window(n: usize) -> usize {
    n.div_ceil(20)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Match,
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchedBy {
    Global,
    TailOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Value,
    Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub variable: String,
    pub channel: Channel,
    pub policy: TolerancePolicy,
    pub points: usize,
    pub deviations: Vec<f64>,
    pub worst_index: Option<usize>,
    pub max_deviation: f64,
    pub global_pass: bool,
    pub tail_window: usize,
    pub tail_pass: bool,
    pub outcome: Outcome,
    pub matched_by: Option<MatchedBy>,
}

impl ComparisonReport {
    pub fn is_match(&self) -> bool {
        self.outcome == Outcome::Match
    }
}

/// Compares simulator values against expression values on the same grid.
pub fn compare(sim: &[f64], expr: &[f64], policy: &TolerancePolicy) -> ComparisonReport {
    compare_channel("", Channel::Value, sim, expr, policy)
}

pub fn compare_channel(
    variable: &str,
    channel: Channel,
    sim: &[f64],
    expr: &[f64],
    policy: &TolerancePolicy,
) -> ComparisonReport {
    assert_eq!(sim.len(), expr.len(), "compare needs equal-length vectors");
    let n = sim.len();
    let floor = match channel {
        Channel::Value => policy.abs,
        Channel::Phase => policy.abs.max(policy.phase_abs_deg),
    };
    let mut deviations = Vec::with_capacity(n);
    let mut passes = Vec::with_capacity(n);
    for (&a, &b) in sim.iter().zip(expr) {
        let d = match channel {
            Channel::Value => (a - b).abs(),
            Channel::Phase => angular_distance(a, b),
        };
        let ok = d <= floor + policy.rel * a.abs().max(b.abs());
        deviations.push(d);
        passes.push(ok);
    }
    let worst_index = deviations
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i);
    let max_deviation = worst_index.map(|i| deviations[i]).unwrap_or(0.0);
    let global_pass = n > 0 && passes.iter().all(|&p| p);
    let window = tail_window(n);
    let tail_pass = n > 0 && passes[n - window..].iter().all(|&p| p);
    let matched_by = if global_pass {
        Some(MatchedBy::Global)
    } else if tail_pass {
        Some(MatchedBy::TailOnly)
    } else {
        None
    };
    ComparisonReport {
        variable: variable.to_string(),
        channel,
        policy: *policy,
        points: n,
        deviations,
        worst_index,
        max_deviation,
        global_pass,
        tail_window: window,
        tail_pass,
        outcome: if matched_by.is_some() {
            Outcome::Match
        } else {
            Outcome::Mismatch
        },
        matched_by,
    }
}

// ---------------------------------------------------------------- parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(text: &str, base: usize) -> Result<Vec<(usize, Tok)>, GrammarError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
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
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s = &text[start..i];
            let v: f64 = s.parse().map_err(|_| GrammarError {
                pos: base + start,
                message: format!("invalid number `{s}`"),
            })?;
            out.push((base + start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((base + start, Tok::Ident(text[start..i].to_ascii_lowercase())));
        } else if "+-*/()^".contains(c) {
            out.push((base + i, Tok::Sym(c)));
            i += 1;
        } else if text[i..].starts_with('°') {
            out.push((base + i, Tok::Ident("deg".into())));
            i += '°'.len_utf8();
        } else {
            let ch = text[i..].chars().next().unwrap();
            return Err(GrammarError {
                pos: base + i,
                message: format!("unexpected character `{ch}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    i: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.i).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, GrammarError> {
        Err(GrammarError {
            pos: self.pos(),
            message: message.into(),
        })
    }

    fn found(&self) -> String {
        match self.peek() {
            None => "end of input".into(),
            Some(Tok::Num(v)) => format!("number `{v}`"),
            Some(Tok::Ident(s)) => format!("`{s}`"),
            Some(Tok::Sym(c)) => format!("`{c}`"),
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), GrammarError> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`, found {}", self.found()))
        }
    }

    fn eat_ident(&mut self, name: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == name) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Result<f64, GrammarError> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.i += 1;
                Ok(v)
            }
            Some(Tok::Ident(s)) if s == "pi" => {
                self.i += 1;
                Ok(PI)
            }
            _ => self.err(format!("expected a number, found {}", self.found())),
        }
    }

    fn sign(&mut self) -> f64 {
        if self.eat_sym('-') {
            -1.0
        } else {
            self.eat_sym('+');
            1.0
        }
    }

    fn at_number(&self) -> bool {
        matches!(self.peek(), Some(Tok::Num(_))) || matches!(self.peek(), Some(Tok::Ident(s)) if s == "pi")
    }

    /// `['+'|'-'] NUM* 't' ['/' NUM]`, returning the factor of t.
    fn linear_in_t(&mut self) -> Result<f64, GrammarError> {
        let mut k = self.sign();
        let mut seen_t = false;
        loop {
            if self.at_number() {
                k *= self.number()?;
            } else if self.eat_ident("t") {
                if seen_t {
                    return self.err("argument must be linear in t");
                }
                seen_t = true;
            } else {
                break;
            }
            if !self.eat_sym('*') {
                if self.at_number() || matches!(self.peek(), Some(Tok::Ident(s)) if s == "t") {
                    continue;
                }
                break;
            }
        }
        if !seen_t {
            return self.err("argument must have the form `k*t`");
        }
        while self.eat_sym('/') {
            let d = self.number()?;
            if d == 0.0 {
                return self.err("division by zero");
            }
            k /= d;
        }
        Ok(k)
    }

    fn sum(&mut self) -> Result<Vec<Term>, GrammarError> {
        let mut terms = Vec::new();
        let mut sign = self.sign();
        loop {
            let mut t = self.term()?;
            t.coef *= sign;
            terms.push(t);
            if self.eat_sym('+') {
                sign = 1.0;
            } else if self.eat_sym('-') {
                sign = -1.0;
            } else {
                break;
            }
        }
        Ok(terms)
    }

    fn term(&mut self) -> Result<Term, GrammarError> {
        let start = self.i;
        let mut coef = 1.0;
        let mut shape: Option<Shape> = None;
        let mut gate = Gate::None;
        let mut factors = 0;
        loop {
            let fpos = self.pos();
            let set_shape = |shape: &mut Option<Shape>, s: Shape| {
                if shape.is_some() {
                    return Err(GrammarError {
                        pos: fpos,
                        message: "a term may contain only one of t, exp, cos, sin".into(),
                    });
                }
                *shape = Some(s);
                Ok(())
            };
            match self.peek().cloned() {
                Some(Tok::Num(_)) => coef *= self.number()?,
                Some(Tok::Ident(name)) => match name.as_str() {
                    "pi" => coef *= self.number()?,
                    "t" => {
                        self.i += 1;
                        set_shape(&mut shape, Shape::Ramp)?;
                    }
                    "exp" => {
                        self.i += 1;
                        self.expect_sym('(')?;
                        let rate = self.linear_in_t()?;
                        self.expect_sym(')')?;
                        set_shape(&mut shape, Shape::Exp { rate })?;
                    }
                    "cos" | "sin" => {
                        self.i += 1;
                        self.expect_sym('(')?;
                        let omega = self.linear_in_t()?;
                        let mut phase_deg = 0.0;
                        if matches!(self.peek(), Some(Tok::Sym('+' | '-'))) {
                            let s = self.sign();
                            phase_deg = s * self.number()?;
                            if !self.eat_ident("deg") {
                                return self.err(format!(
                                    "phase must be written in degrees, e.g. `30deg`; found {}",
                                    self.found()
                                ));
                            }
                        }
                        self.expect_sym(')')?;
                        let s = if name == "cos" {
                            Shape::Cos { omega, phase_deg }
                        } else {
                            Shape::Sin { omega, phase_deg }
                        };
                        set_shape(&mut shape, s)?;
                    }
                    "u" => {
                        self.i += 1;
                        self.expect_sym('(')?;
                        let neg = self.eat_sym('-');
                        if !self.eat_ident("t") {
                            return self.err(format!("expected `t` in step function, found {}", self.found()));
                        }
                        self.expect_sym(')')?;
                        if gate != Gate::None {
                            return Err(GrammarError {
                                pos: fpos,
                                message: "a term may contain only one step function".into(),
                            });
                        }
                        gate = if neg { Gate::Neg } else { Gate::Pos };
                    }
                    other => {
                        return self.err(format!(
                            "unknown name `{other}`; allowed: t, pi, exp, cos, sin, u"
                        ))
                    }
                },
                Some(Tok::Sym('/')) if factors > 0 => {
                    self.i += 1;
                    let d = self.number()?;
                    if d == 0.0 {
                        return self.err("division by zero");
                    }
                    coef /= d;
                }
                _ => {
                    if factors == 0 {
                        return self.err(format!("expected a term, found {}", self.found()));
                    }
                    break;
                }
            }
            factors += 1;
            if self.eat_sym('*') {
                continue;
            }
            match self.peek() {
                Some(Tok::Num(_) | Tok::Ident(_)) | Some(Tok::Sym('/')) => continue,
                _ => break,
            }
        }
        debug_assert!(self.i > start);
        if !coef.is_finite() {
            return self.err("coefficient is not finite");
        }
        Ok(Term {
            coef,
            shape: shape.unwrap_or(Shape::Const),
            gate,
        })
    }

    /// Polynomial in s; coefficients ascending.
    fn poly(&mut self) -> Result<Vec<f64>, GrammarError> {
        let mut coefs = vec![0.0; MAX_POLY_DEGREE + 1];
        let mut sign = self.sign();
        loop {
            let mut c = 1.0;
            let mut power = 0usize;
            let mut factors = 0;
            loop {
                if self.at_number() {
                    c *= self.number()?;
                } else if self.eat_ident("s") {
                    let mut p = 1;
                    if self.eat_sym('^') {
                        let e = self.number()?;
                        if e.fract() != 0.0 || e < 0.0 {
                            return self.err("exponent of s must be a non-negative integer");
                        }
                        p = e as usize;
                    }
                    power += p;
                } else if factors == 0 {
                    return self.err(format!("expected a polynomial term in s, found {}", self.found()));
                } else {
                    break;
                }
                factors += 1;
                if self.eat_sym('*') {
                    continue;
                }
                if !(self.at_number() || matches!(self.peek(), Some(Tok::Ident(s)) if s == "s")) {
                    break;
                }
            }
            if power > MAX_POLY_DEGREE {
                return self.err(format!("polynomial degree exceeds {MAX_POLY_DEGREE}"));
            }
            coefs[power] += sign * c;
            if self.eat_sym('+') {
                sign = 1.0;
            } else if self.eat_sym('-') {
                sign = -1.0;
            } else {
                break;
            }
        }
        while coefs.len() > 1 && *coefs.last().unwrap() == 0.0 {
            coefs.pop();
        }
        Ok(coefs)
    }

    fn group_poly(&mut self) -> Result<Vec<f64>, GrammarError> {
        if self.eat_sym('(') {
            let p = self.poly()?;
            self.expect_sym(')')?;
            Ok(p)
        } else {
            let c = self.sign() * self.number()?;
            Ok(vec![c])
        }
    }
}

pub fn parse_expression(text: &str) -> Result<AnswerExpression, GrammarError> {
    let (body, base) = match text.find('=') {
        Some(p) => (&text[p + 1..], p + 1),
        None => (text, 0),
    };
    let toks = lex(body, base)?;
    let rational = toks.iter().any(|(_, t)| matches!(t, Tok::Ident(s) if s == "s"));
    let mut p = Parser {
        toks,
        i: 0,
        end: text.len(),
    };
    if p.toks.is_empty() {
        return p.err("empty expression");
    }
    let expr = if rational {
        let num = p.group_poly()?;
        p.expect_sym('/')?;
        let den = p.group_poly()?;
        if den.iter().all(|&c| c == 0.0) {
            return Err(GrammarError {
                pos: base,
                message: "denominator is identically zero".into(),
            });
        }
        AnswerExpression::Rational { num, den }
    } else {
        AnswerExpression::TermSum { terms: p.sum()? }
    };
    if p.i < p.toks.len() {
        return p.err(format!("unexpected {} after expression", p.found()));
    }
    Ok(expr)
}

// ------------------------------------------------------------- formatting

fn num(x: f64) -> String {
    format!("{x}")
}

fn write_term_body(out: &mut String, t: &Term, c: f64) {
    out.push_str(&num(c));
    match t.shape {
        Shape::Const => {}
        Shape::Ramp => out.push_str("*t"),
        Shape::Exp { rate } => out.push_str(&format!("*exp({}*t)", num(rate))),
        Shape::Cos { omega, phase_deg } | Shape::Sin { omega, phase_deg } => {
            let f = if matches!(t.shape, Shape::Cos { .. }) { "cos" } else { "sin" };
            out.push_str(&format!("*{f}({}*t", num(omega)));
            if phase_deg != 0.0 {
                let s = if phase_deg < 0.0 { '-' } else { '+' };
                out.push_str(&format!(" {s} {}deg", num(phase_deg.abs())));
            }
            out.push(')');
        }
    }
    match t.gate {
        Gate::None => {}
        Gate::Pos => out.push_str("*u(t)"),
        Gate::Neg => out.push_str("*u(-t)"),
    }
}

fn format_poly(coefs: &[f64]) -> String {
    let mut out = String::new();
    for (k, &c) in coefs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let mag = if out.is_empty() {
            num(c)
        } else {
            out.push_str(if c < 0.0 { " - " } else { " + " });
            num(c.abs())
        };
        out.push_str(&mag);
        match k {
            0 => {}
            1 => out.push_str("*s"),
            _ => out.push_str(&format!("*s^{k}")),
        }
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

impl fmt::Display for AnswerExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerExpression::TermSum { terms } => {
                let mut out = String::new();
                for (i, t) in terms.iter().enumerate() {
                    if i == 0 {
                        write_term_body(&mut out, t, t.coef);
                    } else {
                        out.push_str(if t.coef < 0.0 { " - " } else { " + " });
                        write_term_body(&mut out, t, t.coef.abs());
                    }
                }
                if out.is_empty() {
                    out.push('0');
                }
                f.write_str(&out)
            }
            AnswerExpression::Rational { num, den } => {
                write!(f, "H = ({}) / ({})", format_poly(num), format_poly(den))
            }
        }
    }
}

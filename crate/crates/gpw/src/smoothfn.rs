//! Exact representation and differentiation of the analytic profile functions.
//!
//! Every profile used by the metric families lives in a closed class under
//! differentiation: polynomials, sums of exponentials, real powers of a
//! translate, and finite sums of those. Differentiation, integration and
//! evaluation are all closed form, so no finite differencing enters the
//! primary computation path.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FnError {
    #[error("point {point} outside the domain ({lo}, {hi})")]
    OutOfDomain { point: f64, lo: f64, hi: f64 },
    #[error("product leaves the representable class: {0}")]
    OutOfClass(String),
    #[error("primitive of a(y+b)^-1 is not representable")]
    LogPrimitive,
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// An analytic function of one variable with an exact derivative tower.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothFunction {
    /// Coefficients ascending by degree, no trailing zeros; empty = 0.
    Polynomial(Vec<f64>),
    /// Sum of `a * exp(l * y)` terms, sorted by rate, rates nonzero and distinct.
    ExpSum(Vec<(f64, f64)>),
    /// `a * (y + b)^c` on the domain `y + b > 0`.
    PowerTranslate { a: f64, b: f64, c: f64 },
    /// Canonical flat sum of the above (at most one Polynomial, one ExpSum).
    Sum(Vec<SmoothFunction>),
}

use SmoothFunction::*;

impl SmoothFunction {
    pub fn zero() -> Self {
        Polynomial(Vec::new())
    }

    pub fn constant(c: f64) -> Self {
        Polynomial(vec![c]).canonical()
    }

    pub fn poly(coeffs: &[f64]) -> Self {
        Polynomial(coeffs.to_vec()).canonical()
    }

    pub fn exp_sum(terms: &[(f64, f64)]) -> Self {
        ExpSum(terms.to_vec()).canonical()
    }

    pub fn power(a: f64, b: f64, c: f64) -> Self {
        PowerTranslate { a, b, c }.canonical()
    }

    pub fn sum(parts: Vec<SmoothFunction>) -> Self {
        Sum(parts).canonical()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Polynomial(c) if c.is_empty())
    }

    /// Canonical form: trailing zeros trimmed, exp terms merged and sorted,
    /// rate-0 exp terms folded into the constant, sums flattened.
    pub fn canonical(self) -> Self {
        match self {
            Polynomial(mut c) => {
                while c.last() == Some(&0.0) {
                    c.pop();
                }
                Polynomial(c)
            }
            ExpSum(terms) => {
                let mut constant = 0.0;
                let mut kept: Vec<(f64, f64)> = Vec::new();
                for (a, l) in terms {
                    if a == 0.0 {
                        continue;
                    }
                    if l == 0.0 {
                        constant += a;
                        continue;
                    }
                    match kept.iter_mut().find(|(_, r)| *r == l) {
                        Some(t) => t.0 += a,
                        None => kept.push((a, l)),
                    }
                }
                kept.retain(|(a, _)| *a != 0.0);
                kept.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
                let exp = ExpSum(kept);
                if constant == 0.0 {
                    exp.canonical_shallow()
                } else {
                    Sum(vec![Polynomial(vec![constant]), exp]).canonical()
                }
            }
            PowerTranslate { a, b, c } => {
                if a == 0.0 {
                    Self::zero()
                } else if c == 0.0 {
                    Polynomial(vec![a])
                } else {
                    PowerTranslate { a, b, c }
                }
            }
            Sum(parts) => {
                let mut flat: Vec<SmoothFunction> = Vec::new();
                let mut stack: Vec<SmoothFunction> =
                    parts.into_iter().map(|p| p.canonical()).rev().collect();
                while let Some(p) = stack.pop() {
                    match p {
                        Sum(inner) => stack.extend(inner.into_iter().rev()),
                        other => flat.push(other),
                    }
                }
                // merge polynomial and exponential parts
                let mut poly: Vec<f64> = Vec::new();
                let mut exps: Vec<(f64, f64)> = Vec::new();
                let mut rest: Vec<SmoothFunction> = Vec::new();
                for p in flat {
                    match p {
                        Polynomial(c) => {
                            if poly.len() < c.len() {
                                poly.resize(c.len(), 0.0);
                            }
                            for (i, v) in c.iter().enumerate() {
                                poly[i] += v;
                            }
                        }
                        ExpSum(t) => exps.extend(t),
                        other => rest.push(other),
                    }
                }
                let mut out = Vec::new();
                let p = Polynomial(poly).canonical();
                if !p.is_zero() {
                    out.push(p);
                }
                let e = ExpSum(exps).canonical();
                if !e.is_zero() {
                    out.push(e);
                }
                out.extend(rest.into_iter().filter(|r| !r.is_zero()));
                match out.len() {
                    0 => Self::zero(),
                    1 => out.pop().unwrap(),
                    _ => Sum(out),
                }
            }
        }
    }

    fn canonical_shallow(self) -> Self {
        match self {
            ExpSum(t) if t.is_empty() => Self::zero(),
            other => other,
        }
    }

    /// Open interval on which the function (and all derivatives) evaluate.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Polynomial(_) | ExpSum(_) => (f64::NEG_INFINITY, f64::INFINITY),
            PowerTranslate { b, .. } => (-b, f64::INFINITY),
            Sum(parts) => parts.iter().fold(
                (f64::NEG_INFINITY, f64::INFINITY),
                |(lo, hi), p| {
                    let (l, h) = p.domain();
                    (lo.max(l), hi.min(h))
                },
            ),
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        let (lo, hi) = self.domain();
        y > lo && y < hi
    }

    /// Exact k-th derivative; stays in the class.
    pub fn derivative(&self, k: usize) -> SmoothFunction {
        let mut f = self.clone();
        for _ in 0..k {
            f = f.derivative_once();
        }
        f
    }

    fn derivative_once(&self) -> SmoothFunction {
        match self {
            Polynomial(c) => {
                let d: Vec<f64> = c
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(i, v)| i as f64 * v)
                    .collect();
                Polynomial(d).canonical()
            }
            ExpSum(t) => ExpSum(t.iter().map(|&(a, l)| (a * l, l)).collect()).canonical(),
            PowerTranslate { a, b, c } => PowerTranslate {
                a: a * c,
                b: *b,
                c: c - 1.0,
            }
            .canonical(),
            Sum(parts) => Sum(parts.iter().map(|p| p.derivative_once()).collect()).canonical(),
        }
    }

    fn eval_unchecked(&self, y: f64) -> f64 {
        match self {
            Polynomial(c) => c.iter().rev().fold(0.0, |acc, v| acc * y + v),
            ExpSum(t) => t.iter().map(|&(a, l)| a * (l * y).exp()).sum(),
            PowerTranslate { a, b, c } => a * (y + b).powf(*c),
            Sum(parts) => parts.iter().map(|p| p.eval_unchecked(y)).sum(),
        }
    }

    pub fn eval(&self, y: f64) -> Result<f64, FnError> {
        if !self.contains(y) {
            let (lo, hi) = self.domain();
            return Err(FnError::OutOfDomain { point: y, lo, hi });
        }
        Ok(self.eval_unchecked(y))
    }

    /// Primitive F with F' = self and F(anchor) = 0, where the anchor is 0
    /// when the domain allows it and the domain midpoint otherwise.
    pub fn primitive(&self) -> Result<SmoothFunction, FnError> {
        let raw = self.primitive_raw()?;
        let anchor = self.primitive_anchor();
        let at_anchor = raw.eval(anchor)?;
        Ok(Self::sum(vec![raw, Self::constant(-at_anchor)]))
    }

    pub fn primitive_anchor(&self) -> f64 {
        let (lo, hi) = self.domain();
        if 0.0 > lo && 0.0 < hi {
            0.0
        } else if hi.is_infinite() {
            lo + 1.0
        } else if lo.is_infinite() {
            hi - 1.0
        } else {
            0.5 * (lo + hi)
        }
    }

    fn primitive_raw(&self) -> Result<SmoothFunction, FnError> {
        match self {
            Polynomial(c) => {
                let mut out = vec![0.0];
                out.extend(c.iter().enumerate().map(|(i, v)| v / (i as f64 + 1.0)));
                Ok(Polynomial(out).canonical())
            }
            ExpSum(t) => Ok(ExpSum(t.iter().map(|&(a, l)| (a / l, l)).collect()).canonical()),
            PowerTranslate { a, b, c } => {
                if *c == -1.0 {
                    return Err(FnError::LogPrimitive);
                }
                Ok(PowerTranslate {
                    a: a / (c + 1.0),
                    b: *b,
                    c: c + 1.0,
                }
                .canonical())
            }
            Sum(parts) => {
                let prims = parts
                    .iter()
                    .map(|p| p.primitive_raw())
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Self::sum(prims))
            }
        }
    }

    pub fn scale(&self, k: f64) -> SmoothFunction {
        match self {
            Polynomial(c) => Polynomial(c.iter().map(|v| k * v).collect()).canonical(),
            ExpSum(t) => ExpSum(t.iter().map(|&(a, l)| (k * a, l)).collect()).canonical(),
            PowerTranslate { a, b, c } => PowerTranslate {
                a: k * a,
                b: *b,
                c: *c,
            }
            .canonical(),
            Sum(parts) => Sum(parts.iter().map(|p| p.scale(k)).collect()).canonical(),
        }
    }

    pub fn add(&self, other: &SmoothFunction) -> SmoothFunction {
        Self::sum(vec![self.clone(), other.clone()])
    }

    /// Exact product when it stays in the class: poly*poly, exp*exp,
    /// powers with the same translate, and anything times a constant.
    pub fn try_mul(&self, other: &SmoothFunction) -> Result<SmoothFunction, FnError> {
        if self.is_zero() || other.is_zero() {
            return Ok(Self::zero());
        }
        if let Polynomial(c) = self {
            if c.len() == 1 {
                return Ok(other.scale(c[0]));
            }
        }
        if let Polynomial(c) = other {
            if c.len() == 1 {
                return Ok(self.scale(c[0]));
            }
        }
        match (self, other) {
            (Sum(parts), _) => {
                let prods = parts
                    .iter()
                    .map(|p| p.try_mul(other))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Self::sum(prods))
            }
            (_, Sum(parts)) => {
                let prods = parts
                    .iter()
                    .map(|p| self.try_mul(p))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Self::sum(prods))
            }
            (Polynomial(a), Polynomial(b)) => {
                let mut out = vec![0.0; a.len() + b.len() - 1];
                for (i, x) in a.iter().enumerate() {
                    for (j, y) in b.iter().enumerate() {
                        out[i + j] += x * y;
                    }
                }
                Ok(Polynomial(out).canonical())
            }
            (ExpSum(a), ExpSum(b)) => {
                let mut out = Vec::new();
                for &(ai, li) in a {
                    for &(bj, lj) in b {
                        out.push((ai * bj, li + lj));
                    }
                }
                Ok(ExpSum(out).canonical())
            }
            (
                PowerTranslate { a, b, c },
                PowerTranslate {
                    a: a2,
                    b: b2,
                    c: c2,
                },
            ) if b == b2 => Ok(PowerTranslate {
                a: a * a2,
                b: *b,
                c: c + c2,
            }
            .canonical()),
            _ => Err(FnError::OutOfClass(format!("{} * {}", self, other))),
        }
    }

    /// Compose with the affine map `y -> alpha + beta*y`, when representable.
    ///
    /// Polynomials and exponentials always compose; a non-integer power
    /// composes only when `beta > 0` (the translate structure survives) or
    /// `beta == 0` (constant restriction).
    pub fn compose_affine(&self, alpha: f64, beta: f64) -> Option<SmoothFunction> {
        match self {
            Polynomial(c) => {
                // Horner in the affine argument.
                let mut acc = Self::zero();
                let arg = Self::poly(&[alpha, beta]);
                for v in c.iter().rev() {
                    acc = acc.try_mul(&arg).ok()?;
                    acc = acc.add(&Self::constant(*v));
                }
                Some(acc)
            }
            ExpSum(t) => Some(Self::exp_sum(
                &t.iter()
                    .map(|&(a, l)| (a * (l * alpha).exp(), l * beta))
                    .collect::<Vec<_>>(),
            )),
            PowerTranslate { a, b, c } => {
                if beta == 0.0 {
                    return Some(Self::constant(a * (alpha + b).powf(*c)));
                }
                let is_int = c.fract() == 0.0 && *c >= 0.0 && *c < 64.0;
                if is_int {
                    // expand as a genuine polynomial in the new variable
                    let base = Self::poly(&[alpha + b, beta]);
                    let mut acc = Self::constant(*a);
                    for _ in 0..(*c as usize) {
                        acc = acc.try_mul(&base).ok()?;
                    }
                    Some(acc)
                } else if beta > 0.0 {
                    // a*(alpha + beta t + b)^c = a*beta^c * (t + (alpha+b)/beta)^c
                    Some(Self::power(
                        a * beta.powf(*c),
                        (alpha + b) / beta,
                        *c,
                    ))
                } else {
                    None
                }
            }
            Sum(parts) => {
                let mapped = parts
                    .iter()
                    .map(|p| p.compose_affine(alpha, beta))
                    .collect::<Option<Vec<_>>>()?;
                Some(Self::sum(mapped))
            }
        }
    }

    pub fn eval_tower(&self, y: f64, order: usize) -> Result<DerivativeTower, FnError> {
        if !self.contains(y) {
            let (lo, hi) = self.domain();
            return Err(FnError::OutOfDomain { point: y, lo, hi });
        }
        let mut values = Vec::with_capacity(order + 1);
        let mut f = self.clone();
        values.push(f.eval_unchecked(y));
        for _ in 0..order {
            f = f.derivative_once();
            values.push(f.eval_unchecked(y));
        }
        Ok(DerivativeTower {
            base_point: y,
            values,
        })
    }

    pub fn parse(input: &str) -> Result<SmoothFunction, FnError> {
        parse_dsl(input)
    }
}

/// Values [f(y), f'(y), ..., f^(K)(y)] at a base point.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTower {
    pub base_point: f64,
    pub values: Vec<f64>,
}

impl DerivativeTower {
    pub fn order(&self) -> usize {
        self.values.len() - 1
    }
}

// ---------------------------------------------------------------------------
// Text DSL: poly:c0,c1,...  exp:a@l+a@l  pow:a,b,c  sum:(...)|(...)
// ---------------------------------------------------------------------------

impl fmt::Display for SmoothFunction {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polynomial(c) => {
                if c.is_empty() {
                    return write!(out, "poly:0");
                }
                write!(out, "poly:")?;
                for (i, v) in c.iter().enumerate() {
                    if i > 0 {
                        write!(out, ",")?;
                    }
                    write!(out, "{}", v)?;
                }
                Ok(())
            }
            ExpSum(t) => {
                write!(out, "exp:")?;
                for (i, (a, l)) in t.iter().enumerate() {
                    if i > 0 {
                        write!(out, "+")?;
                    }
                    write!(out, "{}@{}", a, l)?;
                }
                Ok(())
            }
            PowerTranslate { a, b, c } => write!(out, "pow:{},{},{}", a, b, c),
            Sum(parts) => {
                write!(out, "sum:")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(out, "|")?;
                    }
                    write!(out, "({})", p)?;
                }
                Ok(())
            }
        }
    }
}

fn parse_err(pos: usize, msg: impl Into<String>) -> FnError {
    FnError::Parse {
        pos,
        msg: msg.into(),
    }
}

fn parse_f64(s: &str, offset: usize) -> Result<f64, FnError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(offset, format!("expected a number, found {:?}", s)))
}

fn parse_dsl(input: &str) -> Result<SmoothFunction, FnError> {
    let (tag, rest, body_at) = match input.find(':') {
        Some(i) => (&input[..i], &input[i + 1..], i + 1),
        None => return Err(parse_err(0, "expected <tag>:<body>")),
    };
    match tag {
        "poly" => {
            if rest.is_empty() {
                return Err(parse_err(body_at, "empty coefficient list"));
            }
            let mut coeffs = Vec::new();
            let mut at = body_at;
            for piece in rest.split(',') {
                coeffs.push(parse_f64(piece, at)?);
                at += piece.len() + 1;
            }
            Ok(SmoothFunction::poly(&coeffs))
        }
        "exp" => {
            if rest.is_empty() {
                return Err(parse_err(body_at, "empty exponential sum"));
            }
            let mut terms = Vec::new();
            let mut at = body_at;
            for piece in rest.split('+') {
                let sep = piece
                    .find('@')
                    .ok_or_else(|| parse_err(at, "expected amplitude@rate"))?;
                let a = parse_f64(&piece[..sep], at)?;
                let l = parse_f64(&piece[sep + 1..], at + sep + 1)?;
                terms.push((a, l));
                at += piece.len() + 1;
            }
            Ok(SmoothFunction::exp_sum(&terms))
        }
        "pow" => {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 3 {
                return Err(parse_err(body_at, "expected pow:a,b,c"));
            }
            let a = parse_f64(parts[0], body_at)?;
            let b = parse_f64(parts[1], body_at + parts[0].len() + 1)?;
            let c = parse_f64(
                parts[2],
                body_at + parts[0].len() + parts[1].len() + 2,
            )?;
            Ok(SmoothFunction::power(a, b, c))
        }
        "sum" => {
            let mut parts = Vec::new();
            let bytes = rest.as_bytes();
            let mut i = 0;
            while i < bytes.len() {
                if bytes[i] != b'(' {
                    return Err(parse_err(body_at + i, "expected '('"));
                }
                let mut depth = 1;
                let start = i + 1;
                let mut j = start;
                while j < bytes.len() && depth > 0 {
                    match bytes[j] {
                        b'(' => depth += 1,
                        b')' => depth -= 1,
                        _ => {}
                    }
                    j += 1;
                }
                if depth != 0 {
                    return Err(parse_err(body_at + i, "unbalanced parentheses"));
                }
                parts.push(parse_dsl(&rest[start..j - 1]).map_err(|e| match e {
                    FnError::Parse { pos, msg } => parse_err(body_at + start + pos, msg),
                    other => other,
                })?);
                i = j;
                if i < bytes.len() {
                    if bytes[i] != b'|' {
                        return Err(parse_err(body_at + i, "expected '|' between parts"));
                    }
                    i += 1;
                }
            }
            if parts.is_empty() {
                return Err(parse_err(body_at, "empty sum"));
            }
            Ok(SmoothFunction::sum(parts))
        }
        _ => Err(parse_err(0, format!("unknown tag {:?}", tag))),
    }
}

//! Sparse multivariate polynomials over `f64`.
//!
//! Polynomials are stored as a map from [`Monomial`] to coefficient, kept in
//! canonical form: coefficients with magnitude below [`ZERO_TOL`] are
//! dropped after every operation. Variables are indexed from zero in the
//! API and printed/parsed as `x1..xn`.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

use crate::cbf::ControlSystem;

/// Coefficients below this magnitude are treated as zero.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("variable x{index} out of range (polynomial has {nvars} variables)")]
    VariableOutOfRange { index: usize, nvars: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Exponent vector of a monomial, one entry per state variable.
///
/// Ordered graded-lexicographically: lower total degree first, then by
/// exponent of `x1` descending, then `x2`, and so on.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            write!(f, "x{}", i + 1)?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Sparse polynomial in `nvars` real variables.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    /// The coordinate polynomial `x_{i+1}` (zero-based `i`).
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::var(nvars, i), 1.0);
        p
    }

    pub fn monomial(m: Monomial, c: f64) -> Self {
        let mut p = Self::zero(m.nvars());
        p.add_term(m, c);
        p
    }

    pub fn from_terms<I>(nvars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            assert_eq!(e.len(), nvars, "exponent vector length");
            p.add_term(Monomial(e), c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Accumulates `c·m`, dropping the entry if it cancels below [`ZERO_TOL`].
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        match self.terms.entry(m) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().abs() < ZERO_TOL {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                if c.abs() >= ZERO_TOL {
                    v.insert(c);
                }
            }
        }
    }

    fn canonicalize(mut self) -> Self {
        self.terms.retain(|_, c| c.abs() >= ZERO_TOL);
        self
    }

    fn check_same(&self, other: &Self) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: other.nvars });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_same(other)?;
        let mut out = self.terms.clone();
        for (m, &c) in &other.terms {
            *out.entry(m.clone()).or_insert(0.0) += c;
        }
        Ok(Self { nvars: self.nvars, terms: out }.canonicalize())
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_same(other)?;
        let mut out = self.terms.clone();
        for (m, &c) in &other.terms {
            *out.entry(m.clone()).or_insert(0.0) -= c;
        }
        Ok(Self { nvars: self.nvars, terms: out }.canonicalize())
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_same(other)?;
        let mut out: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                *out.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        Ok(Self { nvars: self.nvars, terms: out }.canonicalize())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, &v)| (m.clone(), v * c)).collect(),
        }
        .canonicalize()
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Exact partial derivative with respect to zero-based variable `i`.
    pub fn differentiate(&self, i: usize) -> Result<Self, PolyError> {
        if i >= self.nvars {
            return Err(PolyError::VariableOutOfRange { index: i + 1, nvars: self.nvars });
        }
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.0[i];
            if e == 0 {
                continue;
            }
            let mut d = m.0.clone();
            d[i] -= 1;
            *out.terms.entry(Monomial(d)).or_insert(0.0) += c * e as f64;
        }
        Ok(out.canonicalize())
    }

    pub fn gradient(&self) -> PolyVector {
        PolyVector::new(
            (0..self.nvars).map(|i| self.differentiate(i).expect("index in range")).collect(),
        )
        .expect("gradient entries share nvars")
    }

    /// Lie derivative `Σ_i ∂p/∂x_i · field_i`.
    pub fn lie(&self, field: &PolyVector) -> Result<Self, PolyError> {
        if field.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: field.len() });
        }
        if field.nvars() != self.nvars && !field.is_empty() {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: field.nvars() });
        }
        let mut out = Self::zero(self.nvars);
        for (i, fi) in field.iter().enumerate() {
            if fi.is_zero() {
                continue;
            }
            let d = self.differentiate(i)?;
            if d.is_zero() {
                continue;
            }
            out = &out + &(&d * fi);
        }
        Ok(out)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: x.len() });
        }
        Ok(self.eval(x))
    }

    /// Unchecked evaluation; `x` must have `nvars` entries.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, &c)| c * m.eval(x)).sum()
    }

    /// Substitutes `x ↦ x + shift`.
    pub fn translate(&self, shift: &[f64]) -> Self {
        assert_eq!(shift.len(), self.nvars);
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            let mut t = Self::constant(self.nvars, c);
            for (i, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let xi = &Self::var(self.nvars, i) + &Self::constant(self.nvars, shift[i]);
                t = &t * &xi.pow(e);
            }
            out = &out + &t;
        }
        out
    }

    /// Largest absolute coefficient of `self - other`.
    pub fn max_coeff_diff(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for (m, &c) in &self.terms {
            worst = worst.max((c - other.coeff(m)).abs());
        }
        for (m, &c) in &other.terms {
            if !self.terms.contains_key(m) {
                worst = worst.max(c.abs());
            }
        }
        worst
    }

    pub fn parse(text: &str, nvars: usize) -> Result<Self, PolyError> {
        let mut p = Parser { src: text.as_bytes(), pos: 0, nvars };
        p.skip_ws();
        let out = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(out)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, &c)) in self.terms.iter().enumerate() {
            let mag = c.abs();
            if k == 0 {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else if c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            if m.is_constant() {
                write!(f, "{mag:?}")?;
            } else if mag == 1.0 {
                write!(f, "{m}")?;
            } else {
                write!(f, "{mag:?}*{m}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial[{}]({})", self.nvars, self)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial variable counts differ")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_sub(rhs).expect("polynomial variable counts differ")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial variable counts differ")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Add for Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: Polynomial) -> Polynomial {
        &self + &rhs
    }
}

impl Sub for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: Polynomial) -> Polynomial {
        &self - &rhs
    }
}

impl Mul for Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: Polynomial) -> Polynomial {
        &self * &rhs
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    nvars: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> PolyError {
        PolyError::Syntax { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    // expr := ['+'|'-'] term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Polynomial, PolyError> {
        let negate_first = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                true
            }
            Some(b'+') => {
                self.pos += 1;
                false
            }
            _ => false,
        };
        let mut acc = self.term()?;
        if negate_first {
            acc = -&acc;
        }
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = &acc + &self.term()?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = &acc - &self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    // term := factor ('*' factor)*
    fn term(&mut self) -> Result<Polynomial, PolyError> {
        let mut acc = self.factor()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            acc = &acc * &self.factor()?;
        }
        Ok(acc)
    }

    // factor := base ('^' uint)?
    fn factor(&mut self) -> Result<Polynomial, PolyError> {
        let base = self.base()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let k = self.uint()?;
            let k = u32::try_from(k).map_err(|_| self.error("exponent too large"))?;
            return Ok(base.pow(k));
        }
        // An identifier or literal directly after a base is implicit
        // multiplication, which the grammar rejects.
        match self.peek() {
            Some(c) if c.is_ascii_alphanumeric() || c == b'(' || c == b'.' => {
                Err(self.error("expected operator (implicit multiplication is not allowed)"))
            }
            _ => Ok(base),
        }
    }

    // base := decimal | 'x' uint | '(' expr ')'
    fn base(&mut self) -> Result<Polynomial, PolyError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(b'x') => {
                let start = self.pos;
                self.pos += 1;
                if !self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                    return Err(self.error("expected variable index after 'x'"));
                }
                let idx = self.uint()?;
                if idx == 0 || idx > self.nvars {
                    return Err(if idx == 0 {
                        PolyError::Syntax { pos: start, msg: "variables are numbered from x1".into() }
                    } else {
                        PolyError::VariableOutOfRange { index: idx, nvars: self.nvars }
                    });
                }
                Ok(Polynomial::var(self.nvars, idx - 1))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let v = self.decimal()?;
                Ok(Polynomial::constant(self.nvars, v))
            }
            Some(_) => Err(self.error("expected number, variable or '('")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn uint(&mut self) -> Result<usize, PolyError> {
        let start = self.pos;
        while self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected unsigned integer"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| PolyError::Syntax { pos: start, msg: "integer out of range".into() })
    }

    fn decimal(&mut self) -> Result<f64, PolyError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.src.get(p.pos).is_some_and(u8::is_ascii_digit) {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(PolyError::Syntax { pos: start, msg: "malformed number".into() });
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
                return Err(self.error("malformed exponent"));
            }
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| PolyError::Syntax { pos: start, msg: "malformed number".into() })
    }
}

/// Column vector of polynomials over a shared variable count.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyVector {
    nvars: usize,
    entries: Vec<Polynomial>,
}

impl PolyVector {
    pub fn new(entries: Vec<Polynomial>) -> Result<Self, PolyError> {
        let nvars = entries.first().map_or(0, Polynomial::nvars);
        if let Some(bad) = entries.iter().find(|p| p.nvars() != nvars) {
            return Err(PolyError::DimensionMismatch { expected: nvars, found: bad.nvars() });
        }
        Ok(Self { nvars, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Polynomial> {
        self.entries.iter()
    }

    pub fn get(&self, i: usize) -> &Polynomial {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[Polynomial] {
        &self.entries
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.entries.iter().map(|p| p.eval(x)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(Polynomial::is_zero)
    }
}

/// Rectangular grid of polynomials over a shared variable count.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMatrix {
    nvars: usize,
    rows: usize,
    cols: usize,
    entries: Vec<Polynomial>,
}

impl PolyMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Polynomial>) -> Result<Self, PolyError> {
        if entries.len() != rows * cols {
            return Err(PolyError::DimensionMismatch { expected: rows * cols, found: entries.len() });
        }
        let nvars = entries.first().map_or(0, Polynomial::nvars);
        if let Some(bad) = entries.iter().find(|p| p.nvars() != nvars) {
            return Err(PolyError::DimensionMismatch { expected: nvars, found: bad.nvars() });
        }
        Ok(Self { nvars, rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn get(&self, i: usize, j: usize) -> &Polynomial {
        &self.entries[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> PolyVector {
        PolyVector::new((0..self.rows).map(|i| self.get(i, j).clone()).collect())
            .expect("entries share nvars")
    }

    pub fn eval(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).eval(x)).collect())
            .collect()
    }
}

/// Iterated Lie derivatives of `b` along the system: returns `L_f^r b` and
/// the vector of `L_{g_j} L_f^{r-1} b` over the input channels.
pub fn lie_chain(
    b: &Polynomial,
    sys: &ControlSystem,
    r: usize,
) -> Result<(Polynomial, Vec<Polynomial>), PolyError> {
    assert!(r >= 1, "lie_chain requires r >= 1");
    if b.nvars() != sys.n() {
        return Err(PolyError::DimensionMismatch { expected: sys.n(), found: b.nvars() });
    }
    let mut cur = b.clone();
    for _ in 0..r - 1 {
        cur = cur.lie(sys.f())?;
    }
    let input = (0..sys.m())
        .map(|j| cur.lie(&sys.g().column(j)))
        .collect::<Result<Vec<_>, _>>()?;
    let drift = cur.lie(sys.f())?;
    Ok((drift, input))
}

/// Smallest `r <= max_r` at which the input first appears in the `r`-th
/// time derivative of `b`, or `None` if it never does.
pub fn relative_degree(b: &Polynomial, sys: &ControlSystem, max_r: usize) -> Option<usize> {
    let mut cur = b.clone();
    for r in 1..=max_r {
        let any_input = (0..sys.m()).any(|j| {
            cur.lie(&sys.g().column(j)).map(|p| !p.is_zero()).unwrap_or(false)
        });
        if any_input {
            return Some(r);
        }
        cur = cur.lie(sys.f()).ok()?;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str, n: usize) -> Polynomial {
        Polynomial::parse(s, n).unwrap()
    }

    #[test]
    fn parse_examples() {
        let h = p("1 - x1^2 - x2^2", 2);
        assert_eq!(h.num_terms(), 3);
        assert_eq!(h.coeff(&Monomial::one(2)), 1.0);
        assert_eq!(h.coeff(&Monomial::new(vec![2, 0])), -1.0);
        assert_eq!(h.coeff(&Monomial::new(vec![0, 2])), -1.0);
        assert!(p("0", 3).is_zero());
        let sq = p("(x1 + x2)^2", 2);
        assert_eq!(sq, Polynomial::from_terms(2, [(vec![2, 0], 1.0), (vec![1, 1], 2.0), (vec![0, 2], 1.0)]));
    }

    #[test]
    fn parse_errors_carry_position() {
        match Polynomial::parse("2x1", 1) {
            Err(PolyError::Syntax { pos, .. }) => assert_eq!(pos, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Polynomial::parse("x3 + 1", 2),
            Err(PolyError::VariableOutOfRange { index: 3, nvars: 2 })
        ));
        assert!(matches!(Polynomial::parse("(x1 + 1", 1), Err(PolyError::Syntax { pos: 7, .. })));
        assert!(Polynomial::parse("x1 +", 1).is_err());
        assert!(Polynomial::parse("x0", 1).is_err());
    }

    #[test]
    fn arithmetic_examples() {
        let x1 = Polynomial::var(2, 0);
        assert_eq!(&x1 * &x1, p("x1^2", 2));
        assert_eq!(&p("1 - x1^2", 2) + &p("x1^2", 2), p("1", 2));
        assert_eq!(&p("x1 + x2", 2) * &p("x1 - x2", 2), p("x1^2 - x2^2", 2));
        assert!(p("x1", 1).try_add(&p("x1", 2)).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(p("1 - x1^2 - x2^2", 2).differentiate(0).unwrap(), p("-2*x1", 2));
        assert!(p("x1", 2).differentiate(1).unwrap().is_zero());
        assert_eq!(p("x1^3*x2", 2).differentiate(0).unwrap(), p("3*x1^2*x2", 2));
        assert!(p("x1", 2).differentiate(2).is_err());
    }

    #[test]
    fn lie_examples() {
        let h = p("1 - x1^2 - x2^2", 2);
        let f = PolyVector::new(vec![p("x1", 2), p("-x1 + 4*x2", 2)]).unwrap();
        assert_eq!(h.lie(&f).unwrap(), p("-2*x1^2 + 2*x1*x2 - 8*x2^2", 2));
        assert!(p("3", 2).lie(&f).unwrap().is_zero());
        let pend = PolyVector::new(vec![p("x2", 2), p("x1", 2)]).unwrap();
        assert_eq!(p("x1", 2).lie(&pend).unwrap(), p("x2", 2));
    }

    #[test]
    fn evaluate_examples() {
        let h = p("1 - x1^2 - x2^2", 2);
        assert_eq!(h.evaluate(&[1.0, 0.0]).unwrap(), 0.0);
        assert!((h.evaluate(&[-0.75, -0.15]).unwrap() - 0.415).abs() < 1e-12);
        assert_eq!(Polynomial::zero(2).evaluate(&[3.0, 4.0]).unwrap(), 0.0);
        assert!(h.evaluate(&[1.0]).is_err());
    }

    #[test]
    fn printing_is_graded_lex() {
        let q = p("x2^2 + x1*x2 + x1^2 + x2 + x1 - 3", 2);
        assert_eq!(q.to_string(), "-3.0 + x1 + x2 + x1^2 + x1*x2 + x2^2");
        assert_eq!(p("0", 1).to_string(), "0");
        assert_eq!(p("-0.5*x1", 1).to_string(), "-0.5*x1");
    }

    #[test]
    fn translate_shifts_argument() {
        let q = p("x1^2 + x1*x2", 2);
        let t = q.translate(&[1.0, -2.0]);
        for x in [[0.3, 0.7], [-1.0, 2.0]] {
            let shifted = [x[0] + 1.0, x[1] - 2.0];
            assert!((t.eval(&x) - q.eval(&shifted)).abs() < 1e-12);
        }
    }
}

use std::collections::BTreeMap;
use std::ops::{Add, Neg, Sub};

use crate::poly::{PolyError, PolyVector, Polynomial};

/// Handle of a decision variable inside one [`SosProgram`](super::SosProgram).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One scalar unknown: a Gram entry of an SOS variable (packed upper
/// triangle index) or a coefficient of a free variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Unknown {
    pub var: VarId,
    pub index: usize,
}

/// Polynomial expression affine in the scalar unknowns of a program:
/// `constant + Σ_u u · linear[u]`.
///
/// Linear maps on polynomials (multiplication by a known polynomial, Lie
/// derivatives) act entrywise, so they lift directly to expressions.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyExpr {
    pub(crate) nvars: usize,
    pub(crate) constant: Polynomial,
    pub(crate) linear: BTreeMap<Unknown, Polynomial>,
}

impl PolyExpr {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, constant: Polynomial::zero(nvars), linear: BTreeMap::new() }
    }

    pub fn constant(p: Polynomial) -> Self {
        Self { nvars: p.nvars(), constant: p, linear: BTreeMap::new() }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn constant_part(&self) -> &Polynomial {
        &self.constant
    }

    pub fn linear_part(&self) -> &BTreeMap<Unknown, Polynomial> {
        &self.linear
    }

    /// True when no unknown appears.
    pub fn is_known(&self) -> bool {
        self.linear.is_empty()
    }

    /// Largest degree any assignment of the unknowns can produce.
    pub fn degree(&self) -> u32 {
        self.linear.values().map(Polynomial::degree).fold(self.constant.degree(), u32::max)
    }

    /// Smallest degree among all terms that can appear, if any.
    pub fn min_degree(&self) -> Option<u32> {
        std::iter::once(&self.constant)
            .chain(self.linear.values())
            .flat_map(|p| p.terms().map(|(m, _)| m.degree()))
            .min()
    }

    pub(crate) fn add_linear(&mut self, u: Unknown, p: Polynomial) {
        let sum = match self.linear.remove(&u) {
            Some(q) => &q + &p,
            None => p,
        };
        if !sum.is_zero() {
            self.linear.insert(u, sum);
        }
    }

    fn check(&self, other: &Self) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: other.nvars });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        out.constant = &out.constant + &other.constant;
        for (u, p) in &other.linear {
            out.add_linear(*u, p.clone());
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map_linear(|p| Ok(p.scale(c))).expect("scaling cannot fail")
    }

    /// Applies a linear map on polynomials to every component.
    pub fn map_linear(
        &self,
        f: impl Fn(&Polynomial) -> Result<Polynomial, PolyError>,
    ) -> Result<Self, PolyError> {
        let constant = f(&self.constant)?;
        let nvars = constant.nvars();
        let mut linear = BTreeMap::new();
        for (u, p) in &self.linear {
            let q = f(p)?;
            if !q.is_zero() {
                linear.insert(*u, q);
            }
        }
        Ok(Self { nvars, constant, linear })
    }

    pub fn mul_poly(&self, q: &Polynomial) -> Result<Self, PolyError> {
        self.map_linear(|p| p.try_mul(q))
    }

    pub fn lie(&self, field: &PolyVector) -> Result<Self, PolyError> {
        self.map_linear(|p| p.lie(field))
    }

    /// Substitutes values for the unknowns.
    pub fn evaluate_with(&self, value: impl Fn(Unknown) -> f64) -> Polynomial {
        let mut out = self.constant.clone();
        for (u, p) in &self.linear {
            out = &out + &p.scale(value(*u));
        }
        out
    }
}

impl From<Polynomial> for PolyExpr {
    fn from(p: Polynomial) -> Self {
        Self::constant(p)
    }
}

impl Add for PolyExpr {
    type Output = PolyExpr;
    fn add(self, rhs: PolyExpr) -> PolyExpr {
        self.try_add(&rhs).expect("expressions share the variable count")
    }
}

impl Sub for PolyExpr {
    type Output = PolyExpr;
    fn sub(self, rhs: PolyExpr) -> PolyExpr {
        self.try_sub(&rhs).expect("expressions share the variable count")
    }
}

impl Neg for PolyExpr {
    type Output = PolyExpr;
    fn neg(self) -> PolyExpr {
        self.scale(-1.0)
    }
}

impl Add<Polynomial> for PolyExpr {
    type Output = PolyExpr;
    fn add(self, rhs: Polynomial) -> PolyExpr {
        self + PolyExpr::constant(rhs)
    }
}

impl Sub<Polynomial> for PolyExpr {
    type Output = PolyExpr;
    fn sub(self, rhs: Polynomial) -> PolyExpr {
        self - PolyExpr::constant(rhs)
    }
}

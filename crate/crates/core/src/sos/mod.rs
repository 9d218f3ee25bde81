//! Sum-of-squares programs over polynomial decision variables.
//!
//! An SOS variable is a Gram form `z(x)ᵀ Q z(x)` with `Q ⪰ 0`; a free
//! variable is a linear combination of basis monomials. Constraints are
//! polynomial identities `expr ≡ 0`, where `expr` is affine in the unknowns,
//! or memberships `expr ∈ Σ`, which introduce a fresh SOS variable.

mod expr;
mod lower;

use thiserror::Error;

use crate::numkernel::SymMatrix;
use crate::poly::{Monomial, PolyError, Polynomial};
use crate::sdp::{SdpError, SdpStatus};

pub use expr::{PolyExpr, Unknown, VarId};
pub use lower::{check_certificate, compile, extract, Compiled, IndexMap};

/// Default tolerance for certificate re-checks.
pub const CERT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SosError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("constraint {constraint}: term {monomial} cannot be matched by any decision variable")]
    DegreeMismatch { constraint: usize, monomial: String },
    #[error("variable {0} is not registered in this program")]
    UnknownVariable(usize),
    #[error("solver finished with status {0:?}")]
    NotOptimal(SdpStatus),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Free,
    Sos,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyVariable {
    pub kind: VarKind,
    /// Gram basis `z` for SOS variables; coefficient monomials for free ones.
    pub basis: Vec<Monomial>,
    pub id: VarId,
}

impl PolyVariable {
    /// Number of scalar unknowns.
    pub fn num_unknowns(&self) -> usize {
        let d = self.basis.len();
        match self.kind {
            VarKind::Free => d,
            VarKind::Sos => d * (d + 1) / 2,
        }
    }

    /// Gram entry `(a, b)`, `a ≤ b`, addressed by a packed upper index.
    pub fn gram_pair(&self, index: usize) -> (usize, usize) {
        let d = self.basis.len();
        let mut k = index;
        for a in 0..d {
            let row = d - a;
            if k < row {
                return (a, a + k);
            }
            k -= row;
        }
        panic!("Gram index {index} out of range for basis of size {d}");
    }

    pub fn gram_index(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let d = self.basis.len();
        a * d - a * a.saturating_sub(1) / 2 + b - a
    }
}

/// All monomials in `n` variables of total degree `≤ max_deg`, in graded
/// order. With `even_only`, only monomials of even total degree are kept.
pub fn monomial_basis(n: usize, max_deg: u32, even_only: bool) -> Vec<Monomial> {
    monomial_basis_range(n, 0, max_deg)
        .into_iter()
        .filter(|m| !even_only || m.degree() % 2 == 0)
        .collect()
}

/// All monomials with total degree in `[min_deg, max_deg]`.
pub fn monomial_basis_range(n: usize, min_deg: u32, max_deg: u32) -> Vec<Monomial> {
    fn rec(n: usize, i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
        if i == n {
            out.push(Monomial::new(cur.clone()));
            return;
        }
        for e in 0..=left {
            cur[i] = e;
            rec(n, i + 1, left - e, cur, out);
        }
        cur[i] = 0;
    }
    let mut out = Vec::new();
    rec(n, 0, max_deg, &mut vec![0; n], &mut out);
    out.retain(|m| m.degree() >= min_deg);
    out.sort();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosProgram {
    nvars: usize,
    vars: Vec<PolyVariable>,
    identities: Vec<PolyExpr>,
    objective: Vec<(Unknown, f64)>,
}

impl SosProgram {
    pub fn new(nvars: usize) -> Self {
        Self { nvars, vars: Vec::new(), identities: Vec::new(), objective: Vec::new() }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn variables(&self) -> &[PolyVariable] {
        &self.vars
    }

    pub fn variable(&self, id: VarId) -> Result<&PolyVariable, SosError> {
        self.vars.get(id.0).ok_or(SosError::UnknownVariable(id.0))
    }

    /// Identity constraints `expr ≡ 0`, including those generated by
    /// [`add_sos`](Self::add_sos).
    pub fn identities(&self) -> &[PolyExpr] {
        &self.identities
    }

    pub fn objective(&self) -> &[(Unknown, f64)] {
        &self.objective
    }

    fn push(&mut self, kind: VarKind, basis: Vec<Monomial>) -> Result<VarId, SosError> {
        if let Some(m) = basis.iter().find(|m| m.nvars() != self.nvars) {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: m.nvars() }.into());
        }
        let id = VarId(self.vars.len());
        self.vars.push(PolyVariable { kind, basis, id });
        Ok(id)
    }

    pub fn new_free(&mut self, basis: Vec<Monomial>) -> Result<VarId, SosError> {
        self.push(VarKind::Free, basis)
    }

    /// Free polynomial with every monomial of degree `≤ deg`.
    pub fn new_free_deg(&mut self, deg: u32) -> VarId {
        let basis = monomial_basis(self.nvars, deg, false);
        self.push(VarKind::Free, basis).expect("basis matches program")
    }

    pub fn new_sos(&mut self, gram_basis: Vec<Monomial>) -> Result<VarId, SosError> {
        self.push(VarKind::Sos, gram_basis)
    }

    /// SOS polynomial of degree `≤ deg` (Gram basis up to `deg / 2`).
    pub fn new_sos_deg(&mut self, deg: u32) -> VarId {
        let basis = monomial_basis(self.nvars, deg / 2, false);
        self.push(VarKind::Sos, basis).expect("basis matches program")
    }

    /// Free real scalar.
    pub fn new_scalar(&mut self) -> VarId {
        self.push(VarKind::Free, vec![Monomial::one(self.nvars)]).expect("basis matches program")
    }

    /// Nonnegative real scalar.
    pub fn new_nonneg(&mut self) -> VarId {
        self.push(VarKind::Sos, vec![Monomial::one(self.nvars)]).expect("basis matches program")
    }

    /// The variable as an expression in its unknowns.
    pub fn expr(&self, id: VarId) -> Result<PolyExpr, SosError> {
        let v = self.variable(id)?;
        let mut e = PolyExpr::zero(self.nvars);
        match v.kind {
            VarKind::Free => {
                for (k, m) in v.basis.iter().enumerate() {
                    e.add_linear(Unknown { var: id, index: k }, Polynomial::monomial(m.clone(), 1.0));
                }
            }
            VarKind::Sos => {
                for idx in 0..v.num_unknowns() {
                    let (a, b) = v.gram_pair(idx);
                    let c = if a == b { 1.0 } else { 2.0 };
                    e.add_linear(
                        Unknown { var: id, index: idx },
                        Polynomial::monomial(v.basis[a].mul(&v.basis[b]), c),
                    );
                }
            }
        }
        Ok(e)
    }

    fn check_expr(&self, e: &PolyExpr) -> Result<(), SosError> {
        if e.nvars() != self.nvars {
            return Err(PolyError::DimensionMismatch { expected: self.nvars, found: e.nvars() }.into());
        }
        if let Some(u) = e.linear_part().keys().find(|u| u.var.0 >= self.vars.len()) {
            return Err(SosError::UnknownVariable(u.var.0));
        }
        Ok(())
    }

    /// Requires `expr ≡ 0`.
    pub fn add_identity(&mut self, expr: PolyExpr) -> Result<(), SosError> {
        self.check_expr(&expr)?;
        self.identities.push(expr);
        Ok(())
    }

    /// Requires `expr` to be a sum of squares. Returns the SOS variable
    /// that represents it.
    pub fn add_sos(&mut self, expr: PolyExpr) -> Result<VarId, SosError> {
        self.check_expr(&expr)?;
        let hi = expr.degree().div_ceil(2);
        let lo = expr.min_degree().unwrap_or(0) / 2;
        let sigma = self.new_sos(monomial_basis_range(self.nvars, lo.min(hi), hi))?;
        let s = self.expr(sigma)?;
        self.identities.push(expr - s);
        Ok(sigma)
    }

    /// Adds `weight · value(var)` to the maximized objective. `var` must be
    /// a scalar (single basis monomial).
    pub fn maximize(&mut self, var: VarId, weight: f64) -> Result<(), SosError> {
        let v = self.variable(var)?;
        if v.basis.len() != 1 {
            return Err(SosError::UnknownVariable(var.0));
        }
        self.objective.push((Unknown { var, index: 0 }, weight));
        Ok(())
    }

    pub fn minimize(&mut self, var: VarId, weight: f64) -> Result<(), SosError> {
        self.maximize(var, -weight)
    }

    /// Compiles, solves and extracts. A stalled solve still yields a
    /// certificate when it passes the independent re-check.
    pub fn solve(&self, tol: f64, max_iters: usize) -> Result<SosOutcome, SosError> {
        let compiled = compile(self)?;
        let sol = crate::sdp::solve(&compiled.sdp, tol, max_iters);
        Ok(match sol.status {
            SdpStatus::Optimal => SosOutcome::Feasible(lower::assemble(self, &sol, &compiled.map)),
            SdpStatus::PrimalInfeasible => SosOutcome::Infeasible,
            SdpStatus::Stalled => {
                let cert = lower::assemble(self, &sol, &compiled.map);
                if check_certificate(&cert, CERT_TOL) {
                    SosOutcome::Feasible(cert)
                } else {
                    SosOutcome::Unknown(SdpStatus::Stalled)
                }
            }
            status => SosOutcome::Unknown(status),
        })
    }
}

impl SosProgram {
    /// Solver status with the certificate assembled from the final iterate,
    /// whatever the status. For heuristics that tolerate inexact iterates;
    /// never a proof on its own.
    pub fn solve_iterate(&self, tol: f64, max_iters: usize) -> Result<(SdpStatus, Certificate), SosError> {
        let compiled = compile(self)?;
        let sol = crate::sdp::solve(&compiled.sdp, tol, max_iters);
        Ok((sol.status, lower::assemble(self, &sol, &compiled.map)))
    }
}

#[derive(Clone, Debug)]
pub enum SosOutcome {
    Feasible(Certificate),
    Infeasible,
    Unknown(SdpStatus),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub kind: VarKind,
    pub basis: Vec<Monomial>,
    pub polynomial: Polynomial,
    /// Gram matrix for SOS variables.
    pub gram: Option<SymMatrix>,
}

/// Concrete values for every decision variable of a program, with
/// residuals recomputed from the assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub(crate) assignments: Vec<Assignment>,
    pub(crate) identities: Vec<PolyExpr>,
    pub(crate) objective: Vec<(Unknown, f64)>,
    /// Max absolute coefficient of each identity after substitution.
    pub residuals: Vec<f64>,
    /// Minimum Gram eigenvalue of each SOS variable.
    pub gram_min_eigs: Vec<(VarId, f64)>,
}

impl Certificate {
    /// Certificate of a program with no variables and no identities.
    pub fn trivial() -> Self {
        Self {
            assignments: Vec::new(),
            identities: Vec::new(),
            objective: Vec::new(),
            residuals: Vec::new(),
            gram_min_eigs: Vec::new(),
        }
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn value(&self, var: VarId) -> &Polynomial {
        &self.assignments[var.0].polynomial
    }

    /// Constant coefficient of a variable, for scalar unknowns.
    pub fn scalar(&self, var: VarId) -> f64 {
        let p = &self.assignments[var.0].polynomial;
        p.coeff(&Monomial::one(p.nvars()))
    }

    pub fn gram(&self, var: VarId) -> Option<&SymMatrix> {
        self.assignments[var.0].gram.as_ref()
    }

    pub fn objective_value(&self) -> f64 {
        self.objective.iter().map(|(u, w)| w * self.scalar(u.var)).sum()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_gram_eig(&self) -> f64 {
        self.gram_min_eigs.iter().map(|e| e.1).fold(f64::INFINITY, f64::min)
    }

    /// Replaces one coefficient of a free variable or one Gram entry of an
    /// SOS variable and refreshes the recorded residuals.
    pub fn set_unknown(&mut self, u: Unknown, value: f64) {
        let a = &mut self.assignments[u.var.0];
        match a.kind {
            VarKind::Free => {
                let m = a.basis[u.index].clone();
                let old = a.polynomial.coeff(&m);
                a.polynomial.add_term(m, value - old);
            }
            VarKind::Sos => {
                let d = a.basis.len();
                let v = PolyVariable { kind: a.kind, basis: a.basis.clone(), id: u.var };
                let (i, j) = v.gram_pair(u.index);
                let g = a.gram.get_or_insert_with(|| SymMatrix::zeros(d));
                g.set(i, j, value);
                a.polynomial = lower::gram_polynomial(&a.basis, g);
            }
        }
        lower::refresh(self);
    }
}

//! Lowering of SOS programs to standard-form SDPs and certificate assembly.

use std::collections::{BTreeMap, BTreeSet};

use crate::numkernel::SymMatrix;
use crate::poly::{Monomial, Polynomial, ZERO_TOL};
use crate::sdp::{BlockKind, SdpProblem, SdpSolution, SdpStatus, SparseBlockMatrix};

use super::{Assignment, Certificate, SosError, SosProgram, Unknown, VarId, VarKind};

/// Where each decision variable lives in the compiled SDP.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexMap {
    slots: Vec<Slot>,
    /// `(identity, monomial)` matched by each SDP row.
    pub rows: Vec<(usize, Monomial)>,
}

#[derive(Clone, Debug, PartialEq)]
enum Slot {
    /// Variable appears in no constraint and is fixed to zero.
    Unused,
    Gram { block: usize },
    /// Coefficient `k` is `X[offset + 2k] − X[offset + 2k + 1]` in the
    /// shared diagonal block.
    Split { block: usize, offset: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Compiled {
    pub sdp: SdpProblem,
    pub map: IndexMap,
}

/// Lowers a program to an SDP: one dense block per SOS variable, one
/// diagonal block holding the split coefficients of all free variables,
/// and one equality row per monomial of each identity.
pub fn compile(prog: &SosProgram) -> Result<Compiled, SosError> {
    let used: BTreeSet<VarId> = prog
        .identities()
        .iter()
        .flat_map(|e| e.linear_part().keys().map(|u| u.var))
        .chain(prog.objective().iter().map(|(u, _)| u.var))
        .collect();
    let mut blocks = Vec::new();
    let mut slots = Vec::with_capacity(prog.variables().len());
    let mut free_len = 0;
    for v in prog.variables() {
        if !used.contains(&v.id) {
            slots.push(Slot::Unused);
            continue;
        }
        match v.kind {
            VarKind::Sos => {
                slots.push(Slot::Gram { block: blocks.len() });
                blocks.push(BlockKind::Dense(v.basis.len()));
            }
            VarKind::Free => {
                slots.push(Slot::Split { block: usize::MAX, offset: free_len });
                free_len += 2 * v.basis.len();
            }
        }
    }
    if free_len > 0 {
        let fb = blocks.len();
        blocks.push(BlockKind::Diagonal(free_len));
        for s in &mut slots {
            if let Slot::Split { block, .. } = s {
                *block = fb;
            }
        }
    }
    if blocks.is_empty() {
        // Keep the SDP well-formed when nothing is variable.
        blocks.push(BlockKind::Diagonal(1));
    }

    let place = |m: &mut SparseBlockMatrix, u: &Unknown, c: f64| {
        let v = &prog.variables()[u.var.0];
        match slots[u.var.0] {
            Slot::Gram { block } => {
                let (a, b) = v.gram_pair(u.index);
                m.add(block, a, b, if a == b { c } else { 0.5 * c });
            }
            Slot::Split { block, offset } => {
                m.add(block, offset + 2 * u.index, offset + 2 * u.index, c);
                m.add(block, offset + 2 * u.index + 1, offset + 2 * u.index + 1, -c);
            }
            Slot::Unused => unreachable!("used variables have slots"),
        }
    };

    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut rows = Vec::new();
    for (ci, e) in prog.identities().iter().enumerate() {
        let mut per_mono: BTreeMap<Monomial, Vec<(Unknown, f64)>> = BTreeMap::new();
        for (m, _) in e.constant_part().terms() {
            per_mono.entry(m.clone()).or_default();
        }
        for (u, p) in e.linear_part() {
            for (m, c) in p.terms() {
                per_mono.entry(m.clone()).or_default().push((*u, c));
            }
        }
        for (mono, coeffs) in per_mono {
            let rhs = -e.constant_part().coeff(&mono);
            let mut row = SparseBlockMatrix::new();
            for (u, c) in &coeffs {
                place(&mut row, u, *c);
            }
            if row.is_empty() {
                if rhs.abs() > ZERO_TOL {
                    return Err(SosError::DegreeMismatch { constraint: ci, monomial: mono.to_string() });
                }
                continue;
            }
            a.push(row);
            b.push(rhs);
            rows.push((ci, mono));
        }
    }

    let mut c = SparseBlockMatrix::new();
    for (u, w) in prog.objective() {
        place(&mut c, u, *w);
    }
    let sdp = SdpProblem::new(blocks, c, a, b)?;
    Ok(Compiled { sdp, map: IndexMap { slots, rows } })
}

pub(crate) fn gram_polynomial(basis: &[Monomial], q: &SymMatrix) -> Polynomial {
    let n = basis.first().map_or(0, Monomial::nvars);
    let mut p = Polynomial::zero(n);
    for a in 0..basis.len() {
        for b in a..basis.len() {
            let c = if a == b { q.get(a, b) } else { 2.0 * q.get(a, b) };
            p.add_term(basis[a].mul(&basis[b]), c);
        }
    }
    p
}

/// Builds a certificate from any solver iterate.
pub(crate) fn assemble(prog: &SosProgram, sol: &SdpSolution, map: &IndexMap) -> Certificate {
    let n = prog.nvars();
    let assignments = prog
        .variables()
        .iter()
        .zip(&map.slots)
        .map(|(v, slot)| match v.kind {
            VarKind::Sos => {
                let d = v.basis.len();
                let mut q = SymMatrix::zeros(d);
                if let Slot::Gram { block } = slot {
                    for i in 0..d {
                        for j in i..d {
                            q.set(i, j, sol.x[*block].get(i, j));
                        }
                    }
                }
                Assignment {
                    kind: v.kind,
                    basis: v.basis.clone(),
                    polynomial: if d == 0 { Polynomial::zero(n) } else { gram_polynomial(&v.basis, &q) },
                    gram: Some(q),
                }
            }
            VarKind::Free => {
                let mut p = Polynomial::zero(n);
                if let Slot::Split { block, offset } = slot {
                    for (k, m) in v.basis.iter().enumerate() {
                        let x = &sol.x[*block];
                        let c = x.get(offset + 2 * k, offset + 2 * k) - x.get(offset + 2 * k + 1, offset + 2 * k + 1);
                        p.add_term(m.clone(), c);
                    }
                }
                Assignment { kind: v.kind, basis: v.basis.clone(), polynomial: p, gram: None }
            }
        })
        .collect();
    let mut cert = Certificate {
        assignments,
        identities: prog.identities().to_vec(),
        objective: prog.objective().to_vec(),
        residuals: Vec::new(),
        gram_min_eigs: Vec::new(),
    };
    refresh(&mut cert);
    cert
}

/// Assembles the certificate of an optimal SDP solution.
pub fn extract(prog: &SosProgram, sol: &SdpSolution, map: &IndexMap) -> Result<Certificate, SosError> {
    if sol.status != SdpStatus::Optimal {
        return Err(SosError::NotOptimal(sol.status));
    }
    Ok(assemble(prog, sol, map))
}

fn unknown_value(cert: &Certificate, u: Unknown) -> f64 {
    let a = &cert.assignments[u.var.0];
    match a.kind {
        VarKind::Free => a.polynomial.coeff(&a.basis[u.index]),
        VarKind::Sos => a.gram.as_ref().map_or(0.0, |g| g.packed()[u.index]),
    }
}

struct Recheck {
    residuals: Vec<f64>,
    eigs: Vec<(VarId, f64)>,
    /// Largest mismatch between a stored polynomial and its parametrization.
    consistency: f64,
}

fn recheck(cert: &Certificate) -> Recheck {
    let residuals = cert
        .identities
        .iter()
        .map(|e| e.evaluate_with(|u| unknown_value(cert, u)).max_abs_coeff())
        .collect();
    let mut eigs = Vec::new();
    let mut consistency: f64 = 0.0;
    for (i, a) in cert.assignments.iter().enumerate() {
        match a.kind {
            VarKind::Sos => {
                let g = a.gram.clone().unwrap_or_else(|| SymMatrix::zeros(a.basis.len()));
                let lam = if a.basis.is_empty() {
                    0.0
                } else {
                    g.min_eigenvalue().unwrap_or(f64::NEG_INFINITY)
                };
                eigs.push((VarId(i), lam));
                if !a.basis.is_empty() {
                    consistency = consistency.max(a.polynomial.max_coeff_diff(&gram_polynomial(&a.basis, &g)));
                }
            }
            VarKind::Free => {
                for (m, c) in a.polynomial.terms() {
                    if !a.basis.contains(m) {
                        consistency = consistency.max(c.abs());
                    }
                }
            }
        }
    }
    Recheck { residuals, eigs, consistency }
}

pub(crate) fn refresh(cert: &mut Certificate) {
    let r = recheck(cert);
    cert.residuals = r.residuals;
    cert.gram_min_eigs = r.eigs;
}

/// Re-derives every identity residual and Gram eigenvalue from the
/// assignment and accepts iff all residuals are `≤ tol` and all Gram
/// matrices have minimum eigenvalue `≥ −tol`.
pub fn check_certificate(cert: &Certificate, tol: f64) -> bool {
    let r = recheck(cert);
    r.consistency <= tol && r.residuals.iter().all(|&x| x <= tol) && r.eigs.iter().all(|&(_, l)| l >= -tol)
}

//! Barrier synthesis: alternating descent, fixed-point level sets, and
//! half-plane chains for controllable linear systems.

mod compact;
mod descent;

use thiserror::Error;

use crate::cbf::{CbfError, ControlSystem, HocbfChain};
use crate::numkernel::{char_poly, solve_linear, DenseMatrix, NumError};
use crate::poly::{PolyError, Polynomial};
use crate::sos::SosError;

pub use compact::{check_level, check_level_containment, compact_cbf, enlarge, quadratic_form, CompactOptions, CompactResult, EnlargeOptions};
pub use descent::{descent_cbf, descent_hocbf, DescentParams, DescentStep, DescentTrace, StepKind, Termination};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error(transparent)]
    Cbf(#[from] CbfError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("Newton iteration did not converge (residual {0:e})")]
    NoConvergence(f64),
    #[error("feedback gain does not stabilize the linearization")]
    NotStabilizing,
    #[error("pair (F, G) is not controllable")]
    Uncontrollable,
    #[error("no certified level set above the search resolution")]
    NoFeasibleLevel,
    #[error("{0}")]
    Precondition(String),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Newton iteration on `f(x) + g(x)u = 0` over `(x, u)` with minimum-norm
/// steps; stops when the residual is `≤ 1e−10`.
pub fn find_fixed_point(sys: &ControlSystem, x0: &[f64], u0: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SynthError> {
    let (n, m) = (sys.n(), sys.m());
    if x0.len() != n || u0.len() != m {
        return Err(SynthError::Precondition(format!("seed has sizes ({}, {}), expected ({n}, {m})", x0.len(), u0.len())));
    }
    let grads: Vec<Vec<Polynomial>> = (0..n).map(|i| sys.f().get(i).gradient().entries().to_vec()).collect();
    let g_grads: Vec<Vec<Vec<Polynomial>>> =
        (0..n).map(|i| (0..m).map(|j| sys.g().get(i, j).gradient().entries().to_vec()).collect()).collect();
    let mut x = x0.to_vec();
    let mut u = u0.to_vec();
    let mut res = f64::INFINITY;
    for _ in 0..100 {
        let r = sys.vector_field(&x, &u);
        res = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if res <= 1e-10 {
            return Ok((x, u));
        }
        // J = [∂(f + g u)/∂x, g(x)], n × (n + m).
        let gx = sys.g().eval(&x);
        let j: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = grads[i].iter().map(|p| p.eval(&x)).collect();
                for k in 0..m {
                    for (c, p) in row.iter_mut().zip(&g_grads[i][k]) {
                        *c += p.eval(&x) * u[k];
                    }
                }
                row.extend_from_slice(&gx[i]);
                row
            })
            .collect();
        let mut jjt = DenseMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                jjt[(a, b)] = dot(&j[a], &j[b]);
            }
        }
        let tr: f64 = (0..n).map(|a| jjt[(a, a)]).sum();
        for a in 0..n {
            jjt[(a, a)] += 1e-14 * tr.max(1e-300);
        }
        let z = solve_linear(&jjt, &r).map_err(|_| SynthError::NoConvergence(res))?;
        for c in 0..n + m {
            let step: f64 = (0..n).map(|a| j[a][c] * z[a]).sum();
            if c < n {
                x[c] -= step;
            } else {
                u[c - n] -= step;
            }
        }
        if x.iter().chain(&u).any(|v| !v.is_finite()) {
            return Err(SynthError::NoConvergence(f64::NAN));
        }
    }
    Err(SynthError::NoConvergence(res))
}

/// `F = ∂(f + g u*)/∂x` and `G = g` at `x*`.
pub fn linearize(sys: &ControlSystem, x: &[f64], u: &[f64]) -> Result<(DenseMatrix, DenseMatrix), SynthError> {
    let (n, m) = (sys.n(), sys.m());
    if x.len() != n || u.len() != m {
        return Err(SynthError::Precondition("linearization point has the wrong size".into()));
    }
    let mut f = DenseMatrix::zeros(n, n);
    let mut g = DenseMatrix::zeros(n, m);
    for i in 0..n {
        for c in 0..n {
            let mut v = sys.f().get(i).differentiate(c)?.eval(x);
            for k in 0..m {
                v += sys.g().get(i, k).differentiate(c)?.eval(x) * u[k];
            }
            f[(i, c)] = v;
        }
        for k in 0..m {
            g[(i, k)] = sys.g().get(i, k).eval(x);
        }
    }
    Ok((f, g))
}

/// `[G, FG, …, F^{n−1}G]` for single-input `G`.
fn controllability(f: &DenseMatrix, g: &DenseMatrix) -> Result<DenseMatrix, SynthError> {
    let n = f.rows();
    let mut cols = Vec::with_capacity(n);
    let mut v = g.col(0);
    for _ in 0..n {
        cols.push(v.clone());
        v = f.matvec(&v)?;
    }
    let mut c = DenseMatrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            c[(i, j)] = col[i];
        }
    }
    Ok(c)
}

fn check_single_input(f: &DenseMatrix, g: &DenseMatrix) -> Result<usize, SynthError> {
    let n = f.rows();
    if !f.is_square() || g.rows() != n {
        return Err(SynthError::Precondition("F must be square with as many rows as G".into()));
    }
    if g.cols() != 1 {
        return Err(SynthError::Precondition("only single-input pairs are supported".into()));
    }
    Ok(n)
}

/// Last row of the inverse controllability matrix: `q F^k G = 0` for
/// `k < n−1` and `q F^{n−1} G = 1`.
fn canonical_row(f: &DenseMatrix, g: &DenseMatrix) -> Result<Vec<f64>, SynthError> {
    let n = check_single_input(f, g)?;
    let c = controllability(f, g)?;
    if c.rank(1e-10) < n {
        return Err(SynthError::Uncontrollable);
    }
    let ct = c.transpose();
    let mut e = vec![0.0; n];
    e[n - 1] = 1.0;
    Ok(solve_linear(&ct, &e)?)
}

/// Coordinates `z = T x` in which `Fc = T F T⁻¹` has a free first row and
/// an identity shift below it, and `Gc = T G = e_1`. Single input only.
pub fn canonical_form(f: &DenseMatrix, g: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix), SynthError> {
    let n = check_single_input(f, g)?;
    let q = canonical_row(f, g)?;
    // Rows q F^{n−1}, …, q F, q.
    let ft = f.transpose();
    let mut rows = vec![q.clone()];
    for _ in 1..n {
        let next = ft.matvec(rows.last().expect("nonempty"))?;
        rows.push(next);
    }
    rows.reverse();
    let mut t = DenseMatrix::zeros(n, n);
    for (i, r) in rows.iter().enumerate() {
        for j in 0..n {
            t[(i, j)] = r[j];
        }
    }
    let tinv = t.inverse()?;
    let fc = t.matmul(f)?.matmul(&tinv)?;
    let gc = t.matmul(g)?;
    Ok((t, fc, gc))
}

/// Single-input state feedback `K` (row) placing the closed-loop poles of
/// `F − G K` at the given real values (Ackermann).
pub fn place_poles(f: &DenseMatrix, g: &DenseMatrix, poles: &[f64]) -> Result<DenseMatrix, SynthError> {
    let n = check_single_input(f, g)?;
    if poles.len() != n {
        return Err(SynthError::Precondition(format!("{} poles for a state of size {n}", poles.len())));
    }
    let q = canonical_row(f, g)?;
    // Desired polynomial Π (s − p_i) evaluated at F.
    let mut coeffs = vec![1.0];
    for &p in poles {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= p * c;
        }
        coeffs = next;
    }
    let mut phi = DenseMatrix::zeros(n, n);
    let mut pw = DenseMatrix::identity(n);
    for k in (0..=n).rev() {
        phi = phi.add(&pw.scale(coeffs[k]))?;
        pw = pw.matmul(f)?;
    }
    let k = phi.transpose().matvec(&q)?;
    Ok(DenseMatrix::from_row_major(1, n, k)?)
}

/// Characteristic-polynomial coefficients of `F − G K`, for diagnostics.
pub fn closed_loop_char_poly(f: &DenseMatrix, g: &DenseMatrix, k: &DenseMatrix) -> Result<Vec<f64>, SynthError> {
    Ok(char_poly(&f.sub(&g.matmul(k)?)?)?)
}

/// Barrier chain for the half-plane `aᵀx − c ≥ 0` of `ẋ = F x + G u`.
///
/// The relative degree `r` is the first `s` with `aᵀF^{s−1}G ≠ 0`. For
/// `r = 1` the chain is a plain CBF with gain 1; otherwise gains
/// `k_0..k_{r−2}` (leading entries of `gains`) feed the recursion
/// `ψ_i = L_f ψ_{i−1} + k_{i−1} ψ_{i−1}` and the last gain is 1.
pub fn halfplane_hocbf(
    f: &DenseMatrix,
    g: &DenseMatrix,
    a: &[f64],
    c: f64,
    gains: &[f64],
) -> Result<HocbfChain, SynthError> {
    let n = f.rows();
    if !f.is_square() || g.rows() != n || a.len() != n {
        return Err(SynthError::Precondition("F, G and a have inconsistent sizes".into()));
    }
    if a.iter().all(|v| *v == 0.0) {
        return Err(SynthError::Precondition("half-plane normal is zero".into()));
    }
    if let Some(k) = gains.iter().find(|k| !(**k > 0.0)) {
        return Err(SynthError::Precondition(format!("gain {k} is not positive")));
    }
    let frows: Vec<Vec<f64>> = (0..n).map(|i| f.row(i).to_vec()).collect();
    let grows: Vec<Vec<f64>> = (0..n).map(|i| g.row(i).to_vec()).collect();
    let sys = ControlSystem::linear(&frows, &grows)?;
    let ft = f.transpose();
    let mut row = a.to_vec();
    let mut r = None;
    for s in 1..=n {
        let coeff: Vec<f64> = (0..g.cols()).map(|j| dot(&row, &g.col(j))).collect();
        let scale = 1.0 + row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if coeff.iter().any(|v| v.abs() > 1e-12 * scale) {
            r = Some(s);
            break;
        }
        row = ft.matvec(&row)?;
    }
    let r = r.ok_or(SynthError::Uncontrollable)?;
    if gains.len() < r - 1 {
        return Err(SynthError::Precondition(format!("relative degree {r} needs {} gains, got {}", r - 1, gains.len())));
    }
    let mut chain_gains = gains[..r - 1].to_vec();
    chain_gains.push(1.0);
    let mut b = Polynomial::constant(n, -c);
    for (i, &ai) in a.iter().enumerate() {
        b = &b + &Polynomial::var(n, i).scale(ai);
    }
    Ok(HocbfChain::new(&sys, &b, &chain_gains)?)
}

#[cfg(test)]
mod tests;

//! Infeasible-start primal-dual path-following with HKM search directions
//! and a Mehrotra predictor-corrector.

use crate::numkernel::{cholesky, eig_sym, DenseMatrix, SymMatrix};

use super::{BlockKind, BlockValue, SdpProblem, SdpSolution, SdpStatus};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 200 }
    }
}

const STEP_DAMPING: f64 = 0.95;
const RAY_NORM: f64 = 1e8;

/// A constraint matrix with both triangles expanded, grouped by block.
struct RowData {
    dense: Vec<(usize, Vec<(usize, usize, f64)>)>,
    diag: Vec<(usize, Vec<(usize, f64)>)>,
}

struct Scaled<'a> {
    p: &'a SdpProblem,
    rows: Vec<RowData>,
    /// Row scale factors: internal row `i` is `A_i / scale[i]`.
    scale: Vec<f64>,
    /// Internal rows that map to original constraints.
    keep: Vec<usize>,
    b: Vec<f64>,
    c: Vec<BlockValue>,
}

fn mul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    a.matmul(b).expect("block dimensions agree")
}

fn sym(m: &DenseMatrix) -> DenseMatrix {
    let n = m.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    out
}

fn to_sym(m: &DenseMatrix) -> SymMatrix {
    let n = m.rows();
    let mut s = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            s.set(i, j, 0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    s
}

fn lower_inverse(l: &DenseMatrix) -> DenseMatrix {
    let n = l.rows();
    let mut inv = DenseMatrix::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = 1.0 / l[(j, j)];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    inv
}

fn block_inner(a: &[BlockValue], b: &[BlockValue]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (BlockValue::Dense(p), BlockValue::Dense(q)) => {
                p.as_slice().iter().zip(q.as_slice()).map(|(u, v)| u * v).sum::<f64>()
            }
            (BlockValue::Diagonal(p), BlockValue::Diagonal(q)) => {
                p.iter().zip(q).map(|(u, v)| u * v).sum::<f64>()
            }
            _ => unreachable!("block kinds agree"),
        })
        .sum()
}

fn block_axpy(a: &[BlockValue], alpha: f64, b: &[BlockValue]) -> Vec<BlockValue> {
    a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (BlockValue::Dense(p), BlockValue::Dense(q)) => {
                BlockValue::Dense(p.add(&q.scale(alpha)).expect("block dimensions agree"))
            }
            (BlockValue::Diagonal(p), BlockValue::Diagonal(q)) => {
                BlockValue::Diagonal(p.iter().zip(q).map(|(u, v)| u + alpha * v).collect())
            }
            _ => unreachable!("block kinds agree"),
        })
        .collect()
}

fn block_max_abs(a: &[BlockValue]) -> f64 {
    a.iter().fold(0.0, |m, x| match x {
        BlockValue::Dense(d) => m.max(d.max_abs()),
        BlockValue::Diagonal(d) => d.iter().fold(m, |m, v| m.max(v.abs())),
    })
}

fn scaled_identity(blocks: &[BlockKind], tau: f64) -> Vec<BlockValue> {
    blocks
        .iter()
        .map(|k| match *k {
            BlockKind::Dense(d) => BlockValue::Dense(DenseMatrix::identity(d).scale(tau)),
            BlockKind::Diagonal(d) => BlockValue::Diagonal(vec![tau; d]),
        })
        .collect()
}

fn min_eig_block(v: &BlockValue) -> f64 {
    match v {
        BlockValue::Dense(m) => eig_sym(&to_sym(m)).map(|(e, _)| e[0]).unwrap_or(f64::NEG_INFINITY),
        BlockValue::Diagonal(d) => d.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

fn min_eig(v: &[BlockValue]) -> f64 {
    v.iter().map(min_eig_block).fold(f64::INFINITY, f64::min)
}

/// Largest `α ≤ 1/damping` keeping `V + α·dV ⪰ 0`, where `linv` holds the
/// inverse Cholesky factors of the dense blocks of `V`.
fn max_step(v: &[BlockValue], linv: &[Option<DenseMatrix>], dv: &[BlockValue]) -> f64 {
    let mut alpha = f64::INFINITY;
    for ((vb, li), db) in v.iter().zip(linv).zip(dv) {
        match (vb, db) {
            (BlockValue::Dense(_), BlockValue::Dense(d)) => {
                let li = li.as_ref().expect("dense factor present");
                let w = mul(&mul(li, d), &li.transpose());
                let lam = eig_sym(&to_sym(&w)).map(|(e, _)| e[0]).unwrap_or(-1e300);
                if lam < 0.0 {
                    alpha = alpha.min(-1.0 / lam);
                }
            }
            (BlockValue::Diagonal(x), BlockValue::Diagonal(d)) => {
                for (xi, di) in x.iter().zip(d) {
                    if *di < 0.0 {
                        alpha = alpha.min(-xi / di);
                    }
                }
            }
            _ => unreachable!("block kinds agree"),
        }
    }
    alpha
}

impl<'a> Scaled<'a> {
    fn new(p: &'a SdpProblem) -> Self {
        let mut rows = Vec::new();
        let mut scale = Vec::new();
        let mut keep = Vec::new();
        let mut b = Vec::new();
        for (i, a) in p.constraints().iter().enumerate() {
            let s = a.max_abs();
            if s == 0.0 {
                continue;
            }
            let mut dense: Vec<(usize, Vec<(usize, usize, f64)>)> = Vec::new();
            let mut diag: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
            for e in a.entries() {
                let v = e.value / s;
                match p.blocks()[e.block] {
                    BlockKind::Dense(_) => {
                        if dense.last().map(|d| d.0) != Some(e.block) {
                            dense.push((e.block, Vec::new()));
                        }
                        let list = &mut dense.last_mut().unwrap().1;
                        list.push((e.row, e.col, v));
                        if e.row != e.col {
                            list.push((e.col, e.row, v));
                        }
                    }
                    BlockKind::Diagonal(_) => {
                        if diag.last().map(|d| d.0) != Some(e.block) {
                            diag.push((e.block, Vec::new()));
                        }
                        diag.last_mut().unwrap().1.push((e.row, v));
                    }
                }
            }
            rows.push(RowData { dense, diag });
            scale.push(s);
            keep.push(i);
            b.push(p.rhs()[i] / s);
        }
        let mut c: Vec<BlockValue> = p.blocks().iter().map(|&k| BlockValue::zeros(k)).collect();
        for e in p.objective().entries() {
            match &mut c[e.block] {
                BlockValue::Dense(m) => {
                    m[(e.row, e.col)] += e.value;
                    if e.row != e.col {
                        m[(e.col, e.row)] += e.value;
                    }
                }
                BlockValue::Diagonal(d) => d[e.row] += e.value,
            }
        }
        Self { p, rows, scale, keep, b, c }
    }

    fn apply(&self, x: &[BlockValue]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                let mut s = 0.0;
                for (blk, list) in &r.dense {
                    if let BlockValue::Dense(m) = &x[*blk] {
                        s += list.iter().map(|&(i, j, v)| v * m[(i, j)]).sum::<f64>();
                    }
                }
                for (blk, list) in &r.diag {
                    if let BlockValue::Diagonal(d) = &x[*blk] {
                        s += list.iter().map(|&(i, v)| v * d[i]).sum::<f64>();
                    }
                }
                s
            })
            .collect()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<BlockValue> {
        let mut out: Vec<BlockValue> = self.p.blocks().iter().map(|&k| BlockValue::zeros(k)).collect();
        for (r, &yi) in self.rows.iter().zip(y) {
            if yi == 0.0 {
                continue;
            }
            for (blk, list) in &r.dense {
                if let BlockValue::Dense(m) = &mut out[*blk] {
                    for &(i, j, v) in list {
                        m[(i, j)] += yi * v;
                    }
                }
            }
            for (blk, list) in &r.diag {
                if let BlockValue::Diagonal(d) = &mut out[*blk] {
                    for &(i, v) in list {
                        d[i] += yi * v;
                    }
                }
            }
        }
        out
    }

    /// Schur complement `M_ij = ⟨A_i, X A_j S⁻¹⟩`.
    fn schur(&self, x: &[BlockValue], sinv: &[BlockValue]) -> DenseMatrix {
        let m = self.rows.len();
        let mut out = DenseMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut acc = 0.0;
                let (ri, rj) = (&self.rows[i], &self.rows[j]);
                for (bi, li) in &ri.dense {
                    let Some((_, lj)) = rj.dense.iter().find(|(bj, _)| bj == bi) else {
                        continue;
                    };
                    let (BlockValue::Dense(xb), BlockValue::Dense(sb)) = (&x[*bi], &sinv[*bi]) else {
                        unreachable!("dense block")
                    };
                    for &(p, q, a) in li {
                        for &(r, s, c) in lj {
                            acc += a * c * xb[(p, r)] * sb[(s, q)];
                        }
                    }
                }
                for (bi, li) in &ri.diag {
                    let Some((_, lj)) = rj.diag.iter().find(|(bj, _)| bj == bi) else {
                        continue;
                    };
                    let (BlockValue::Diagonal(xb), BlockValue::Diagonal(sb)) = (&x[*bi], &sinv[*bi]) else {
                        unreachable!("diagonal block")
                    };
                    for &(p, a) in li {
                        for &(r, c) in lj {
                            if p == r {
                                acc += a * c * xb[p] * sb[p];
                            }
                        }
                    }
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }
}

/// Cholesky factor of the Schur complement. Pivots that collapse relative
/// to their original diagonal are replaced by a huge value, which pins the
/// matching component of the step to zero instead of perturbing the rest.
struct SchurFactor {
    m: DenseMatrix,
    l: DenseMatrix,
}

const SKIPPED_PIVOT: f64 = 1e64;

impl SchurFactor {
    fn new(m: &DenseMatrix) -> Option<Self> {
        let n = m.rows();
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !d.is_finite() {
                return None;
            }
            if d <= 1e-14 * m[(j, j)].abs() || d <= 1e-300 {
                l[(j, j)] = SKIPPED_PIVOT;
                continue;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Self { m: m.clone(), l })
    }

    fn substitute(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let l = &self.l;
        let mut z = rhs.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= l[(i, k)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= l[(k, i)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
        z
    }

    /// Solve with a few rounds of iterative refinement against `M`.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = self.substitute(rhs);
        let scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for _ in 0..3 {
            let mx = self.m.matvec(&x).expect("square Schur matrix");
            let r: Vec<f64> = rhs.iter().zip(&mx).map(|(b, a)| b - a).collect();
            if r.iter().fold(0.0f64, |a, v| a.max(v.abs())) <= 1e-15 * scale {
                break;
            }
            let dx = self.substitute(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        x
    }
}

struct Direction {
    dx: Vec<BlockValue>,
    dy: Vec<f64>,
    ds: Vec<BlockValue>,
}

/// Solves the Newton system for a complementarity target
/// `Rc = σμI − XS − corr`.
#[allow(clippy::too_many_arguments)]
fn direction(
    sc: &Scaled,
    fac: &SchurFactor,
    x: &[BlockValue],
    s: &[BlockValue],
    sinv: &[BlockValue],
    rp: &[f64],
    rd: &[BlockValue],
    sigma_mu: f64,
    corr: Option<(&[BlockValue], &[BlockValue])>,
) -> Direction {
    let nb = x.len();
    let mut rc = Vec::with_capacity(nb);
    let mut h = Vec::with_capacity(nb);
    for k in 0..nb {
        match (&x[k], &s[k], &sinv[k], &rd[k]) {
            (BlockValue::Dense(xb), BlockValue::Dense(sb), BlockValue::Dense(si), BlockValue::Dense(rb)) => {
                let n = xb.rows();
                let mut r = mul(xb, sb).scale(-1.0);
                for i in 0..n {
                    r[(i, i)] += sigma_mu;
                }
                if let Some((cx, cs)) = corr {
                    let (BlockValue::Dense(a), BlockValue::Dense(b)) = (&cx[k], &cs[k]) else {
                        unreachable!()
                    };
                    r = r.sub(&mul(a, b)).expect("dims");
                }
                let t = r.add(&mul(xb, rb)).expect("dims");
                h.push(BlockValue::Dense(mul(&t, si)));
                rc.push(BlockValue::Dense(r));
            }
            (
                BlockValue::Diagonal(xb),
                BlockValue::Diagonal(sb),
                BlockValue::Diagonal(si),
                BlockValue::Diagonal(rb),
            ) => {
                let mut r: Vec<f64> = xb.iter().zip(sb).map(|(a, b)| sigma_mu - a * b).collect();
                if let Some((cx, cs)) = corr {
                    let (BlockValue::Diagonal(a), BlockValue::Diagonal(b)) = (&cx[k], &cs[k]) else {
                        unreachable!()
                    };
                    for i in 0..r.len() {
                        r[i] -= a[i] * b[i];
                    }
                }
                h.push(BlockValue::Diagonal(
                    (0..r.len()).map(|i| (r[i] + xb[i] * rb[i]) * si[i]).collect(),
                ));
                rc.push(BlockValue::Diagonal(r));
            }
            _ => unreachable!("block kinds agree"),
        }
    }
    let ah = sc.apply(&h);
    let rhs: Vec<f64> = ah.iter().zip(rp).map(|(a, r)| a - r).collect();
    let dy = fac.solve(&rhs);
    let ds = block_axpy(&sc.adjoint(&dy), -1.0, rd);
    let mut dx = Vec::with_capacity(nb);
    for k in 0..nb {
        match (&x[k], &sinv[k], &rc[k], &ds[k]) {
            (BlockValue::Dense(xb), BlockValue::Dense(si), BlockValue::Dense(r), BlockValue::Dense(d)) => {
                let t = r.sub(&mul(xb, d)).expect("dims");
                dx.push(BlockValue::Dense(sym(&mul(&t, si))));
            }
            (
                BlockValue::Diagonal(xb),
                BlockValue::Diagonal(si),
                BlockValue::Diagonal(r),
                BlockValue::Diagonal(d),
            ) => {
                dx.push(BlockValue::Diagonal(
                    (0..r.len()).map(|i| (r[i] - xb[i] * d[i]) * si[i]).collect(),
                ));
            }
            _ => unreachable!("block kinds agree"),
        }
    }
    Direction { dx, dy, ds }
}

/// Inverse Cholesky factors of the dense blocks, or `None` if some block
/// is not positive definite.
fn inverse_factors(v: &[BlockValue]) -> Option<Vec<Option<DenseMatrix>>> {
    v.iter()
        .map(|b| match b {
            BlockValue::Dense(m) => cholesky(&to_sym(m)).map(|l| Some(lower_inverse(&l))),
            BlockValue::Diagonal(d) => d.iter().all(|&x| x > 0.0).then_some(None),
        })
        .collect()
}

fn inverse_from_factors(v: &[BlockValue], linv: &[Option<DenseMatrix>]) -> Vec<BlockValue> {
    v.iter()
        .zip(linv)
        .map(|(b, li)| match b {
            BlockValue::Dense(_) => {
                let li = li.as_ref().expect("dense factor");
                BlockValue::Dense(sym(&mul(&li.transpose(), li)))
            }
            BlockValue::Diagonal(d) => BlockValue::Diagonal(d.iter().map(|x| 1.0 / x).collect()),
        })
        .collect()
}

struct Iterate {
    x: Vec<BlockValue>,
    y: Vec<f64>,
    s: Vec<BlockValue>,
}

/// Solves an SDP with the given tolerance and iteration cap.
pub fn solve(p: &SdpProblem, tol: f64, max_iters: usize) -> SdpSolution {
    assert!(tol > 0.0, "solver tolerance must be positive");
    let sc = Scaled::new(p);
    let blocks = p.blocks();
    let ntot = p.total_dim().max(1) as f64;

    // A zero constraint row with a nonzero right-hand side is infeasible.
    if let Some(i) = (0..p.num_constraints())
        .find(|&i| p.constraints()[i].is_empty() && p.rhs()[i] != 0.0)
    {
        let mut y = vec![0.0; p.num_constraints()];
        y[i] = -p.rhs()[i].signum();
        let zeros: Vec<BlockValue> = blocks.iter().map(|&k| BlockValue::zeros(k)).collect();
        return finish(p, &sc, SdpStatus::PrimalInfeasible, zeros.clone(), y, zeros, 0, true);
    }

    let tau = 1.0
        + p.constraints()
            .iter()
            .chain(std::iter::once(p.objective()))
            .map(|a| a.max_abs())
            .chain(p.rhs().iter().map(|v| v.abs()))
            .fold(0.0, f64::max);
    let mut it = Iterate {
        x: scaled_identity(blocks, tau),
        y: vec![0.0; sc.rows.len()],
        s: scaled_identity(blocks, tau),
    };
    let bnorm = 1.0 + sc.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cnorm = 1.0 + block_max_abs(&sc.c);
    let mut tiny_steps = 0;

    for iter in 0..max_iters {
        let ax = sc.apply(&it.x);
        let rp: Vec<f64> = sc.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let aty = sc.adjoint(&it.y);
        // Rd = C − A*y + S
        let rd = block_axpy(&block_axpy(&sc.c, -1.0, &aty), 1.0, &it.s);
        let pobj = block_inner(&sc.c, &it.x);
        let dobj: f64 = sc.b.iter().zip(&it.y).map(|(b, y)| b * y).sum();
        let xs = block_inner(&it.x, &it.s);
        let mu = xs / ntot;

        let pinf = rp.iter().fold(0.0f64, |m, v| m.max(v.abs())) / bnorm;
        let dinf = block_max_abs(&rd) / cnorm;
        let relgap = xs.max((pobj - dobj).abs()) / (1.0 + pobj.abs() + dobj.abs());
        if pinf < tol && dinf < tol && relgap < tol {
            return finish(p, &sc, SdpStatus::Optimal, it.x, it.y, it.s, iter, false);
        }

        if let Some(status) = ray_status(&it, &aty, &ax, dobj, pobj, tol) {
            return finish(p, &sc, status, it.x, it.y, it.s, iter, false);
        }

        let (Some(xf), Some(sf)) = (inverse_factors(&it.x), inverse_factors(&it.s)) else {
            return finish(p, &sc, SdpStatus::Stalled, it.x, it.y, it.s, iter, false);
        };
        let sinv = inverse_from_factors(&it.s, &sf);
        let m = sc.schur(&it.x, &sinv);
        let Some(fac) = SchurFactor::new(&m) else {
            return finish(p, &sc, SdpStatus::Stalled, it.x, it.y, it.s, iter, false);
        };

        let pred = direction(&sc, &fac, &it.x, &it.s, &sinv, &rp, &rd, 0.0, None);
        let ap = max_step(&it.x, &xf, &pred.dx).min(1.0);
        let ad = max_step(&it.s, &sf, &pred.ds).min(1.0);
        let x_aff = block_axpy(&it.x, ap, &pred.dx);
        let s_aff = block_axpy(&it.s, ad, &pred.ds);
        let mu_aff = block_inner(&x_aff, &s_aff) / ntot;
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

        let dir = direction(
            &sc,
            &fac,
            &it.x,
            &it.s,
            &sinv,
            &rp,
            &rd,
            sigma * mu,
            Some((&pred.dx, &pred.ds)),
        );
        let ap = (STEP_DAMPING * max_step(&it.x, &xf, &dir.dx)).min(1.0);
        let ad = (STEP_DAMPING * max_step(&it.s, &sf, &dir.ds)).min(1.0);
        if !(ap.is_finite() && ad.is_finite()) {
            return finish(p, &sc, SdpStatus::Stalled, it.x, it.y, it.s, iter, false);
        }
        if ap.max(ad) < 1e-10 {
            tiny_steps += 1;
            if tiny_steps >= 3 {
                return finish(p, &sc, SdpStatus::Stalled, it.x, it.y, it.s, iter, false);
            }
        } else {
            tiny_steps = 0;
        }
        it.x = block_axpy(&it.x, ap, &dir.dx);
        it.s = block_axpy(&it.s, ad, &dir.ds);
        for (y, d) in it.y.iter_mut().zip(&dir.dy) {
            *y += ad * d;
        }
        if it.x.iter().chain(&it.s).any(|b| !block_max_abs(std::slice::from_ref(b)).is_finite())
            || it.y.iter().any(|v| !v.is_finite())
        {
            return finish(p, &sc, SdpStatus::Stalled, it.x, it.y, it.s, iter + 1, false);
        }
    }
    finish(p, &sc, SdpStatus::Stalled, it.x, it.y, it.s, max_iters, false)
}

/// Checks the current iterate for an improving ray.
fn ray_status(
    it: &Iterate,
    aty: &[BlockValue],
    ax: &[f64],
    dobj: f64,
    pobj: f64,
    tol: f64,
) -> Option<SdpStatus> {
    // Dual ray: bᵀy < 0 with A*y ⪰ 0 certifies primal infeasibility.
    if dobj < 0.0 {
        let ynorm = it.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lam = min_eig(aty) / -dobj;
        let slack = if ynorm > RAY_NORM { 1e3 * tol } else { tol };
        if lam >= -slack {
            return Some(SdpStatus::PrimalInfeasible);
        }
    }
    // Primal ray: ⟨C,X⟩ > 0 with A(X) ≈ 0 certifies dual infeasibility.
    if pobj > 0.0 {
        let xnorm = block_max_abs(&it.x);
        let viol = ax.iter().fold(0.0f64, |m, v| m.max(v.abs())) / pobj;
        let slack = if xnorm > RAY_NORM { 1e3 * tol } else { tol };
        if viol <= slack && xnorm > 1.0 {
            return Some(SdpStatus::DualInfeasible);
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &SdpProblem,
    sc: &Scaled,
    status: SdpStatus,
    x: Vec<BlockValue>,
    y_internal: Vec<f64>,
    s: Vec<BlockValue>,
    iterations: usize,
    y_is_original: bool,
) -> SdpSolution {
    let y = if y_is_original {
        y_internal
    } else {
        let mut y = vec![0.0; p.num_constraints()];
        for (k, &i) in sc.keep.iter().enumerate() {
            y[i] = y_internal[k] / sc.scale[k];
        }
        y
    };
    let primal_objective = p.objective().inner(&x);
    let dual_objective = p.rhs().iter().zip(&y).map(|(b, y)| b * y).sum();
    let primal_residual = p
        .constraints()
        .iter()
        .zip(p.rhs())
        .map(|(a, b)| (a.inner(&x) - b).abs())
        .fold(0.0, f64::max);
    let mut r: Vec<BlockValue> = sc.adjoint(&vec![0.0; sc.rows.len()]);
    for (a, &yi) in p.constraints().iter().zip(&y) {
        for e in a.entries() {
            match &mut r[e.block] {
                BlockValue::Dense(m) => {
                    m[(e.row, e.col)] += yi * e.value;
                    if e.row != e.col {
                        m[(e.col, e.row)] += yi * e.value;
                    }
                }
                BlockValue::Diagonal(d) => d[e.row] += yi * e.value,
            }
        }
    }
    let r = block_axpy(&block_axpy(&r, -1.0, &s), -1.0, &sc.c);
    let dual_residual = block_max_abs(&r);
    let complementarity = block_inner(&x, &s);
    SdpSolution {
        status,
        x,
        y,
        s,
        primal_objective,
        dual_objective,
        iterations,
        primal_residual,
        dual_residual,
        complementarity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{SdpProblem, SparseBlockMatrix};

    fn single(c: &[(usize, usize, f64)], a: &[&[(usize, usize, f64)]], b: &[f64], dim: usize) -> SdpProblem {
        let mk = |list: &[(usize, usize, f64)]| {
            let mut m = SparseBlockMatrix::new();
            for &(i, j, v) in list {
                m.add(0, i, j, v);
            }
            m
        };
        SdpProblem::new(vec![BlockKind::Dense(dim)], mk(c), a.iter().map(|l| mk(l)).collect(), b.to_vec())
            .unwrap()
    }

    fn assert_optimal(sol: &SdpSolution, value: f64, tol: f64) {
        assert_eq!(sol.status, SdpStatus::Optimal, "{sol:?}");
        assert!((sol.primal_objective - value).abs() < 1e-6, "{} vs {value}", sol.primal_objective);
        assert!(sol.primal_residual < 10.0 * tol);
        assert!(sol.dual_residual < 10.0 * tol);
        assert!(min_eig(&sol.x) > -1e-7);
        assert!(min_eig(&sol.s) > -1e-7);
        assert!(sol.primal_objective <= sol.dual_objective + 1e-6);
        let d: usize = sol.x.iter().map(|b| match b {
            BlockValue::Dense(m) => m.rows(),
            BlockValue::Diagonal(v) => v.len(),
        }).sum();
        assert!(sol.complementarity / (d as f64) < 10.0 * tol);
    }

    #[test]
    fn scalar_equality() {
        let p = single(&[(0, 0, 1.0)], &[&[(0, 0, 1.0)]], &[3.0], 1);
        let sol = solve(&p, 1e-8, 200);
        assert_optimal(&sol, 3.0, 1e-8);
        assert!((sol.x[0].get(0, 0) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn off_diagonal_too_large_is_infeasible() {
        let p = single(
            &[(0, 0, -1.0), (1, 1, -1.0)],
            &[&[(0, 0, 1.0)], &[(1, 1, 1.0)], &[(0, 1, 0.5)]],
            &[1.0, 1.0, 2.0],
            2,
        );
        let sol = solve(&p, 1e-8, 200);
        assert_eq!(sol.status, SdpStatus::PrimalInfeasible, "{sol:?}");
    }

    #[test]
    fn trace_constraint_saturates_objective() {
        let p = single(&[(0, 0, 1.0), (1, 1, 1.0)], &[&[(0, 0, 1.0), (1, 1, 1.0)]], &[1.0], 2);
        assert_optimal(&solve(&p, 1e-8, 200), 1.0, 1e-8);
    }

    #[test]
    fn hand_solvable_battery() {
        // Largest eigenvalue of [[2,1],[1,2]] under unit trace.
        let p = single(&[(0, 0, 2.0), (0, 1, 1.0), (1, 1, 2.0)], &[&[(0, 0, 1.0), (1, 1, 1.0)]], &[1.0], 2);
        assert_optimal(&solve(&p, 1e-8, 200), 3.0, 1e-8);
        // Maximize X_12 with unit diagonal: correlation bound.
        let p = single(&[(0, 1, 0.5)], &[&[(0, 0, 1.0)], &[(1, 1, 1.0)]], &[1.0, 1.0], 2);
        assert_optimal(&solve(&p, 1e-8, 200), 1.0, 1e-8);
        // Minimize trace with X_12 = 1: optimum 2 at [[1,1],[1,1]].
        let p = single(&[(0, 0, -1.0), (1, 1, -1.0)], &[&[(0, 1, 0.5)]], &[1.0], 2);
        assert_optimal(&solve(&p, 1e-8, 200), -2.0, 1e-8);
        // Mixed dense and diagonal blocks: max x1 + 2 x2 with x1 + x2 = 1 on
        // the orthant, plus a scalar PSD block fixed to 4.
        let mut c = SparseBlockMatrix::new();
        c.add(1, 0, 0, 1.0);
        c.add(1, 1, 1, 2.0);
        let mut a1 = SparseBlockMatrix::new();
        a1.add(1, 0, 0, 1.0);
        a1.add(1, 1, 1, 1.0);
        let mut a2 = SparseBlockMatrix::new();
        a2.add(0, 0, 0, 1.0);
        let p = SdpProblem::new(
            vec![BlockKind::Dense(1), BlockKind::Diagonal(2)],
            c,
            vec![a1, a2],
            vec![1.0, 4.0],
        )
        .unwrap();
        assert_optimal(&solve(&p, 1e-8, 200), 2.0, 1e-8);
        // 3x3: maximize sum of off-diagonals with unit diagonal gives 3.
        let p = single(
            &[(0, 1, 0.5), (0, 2, 0.5), (1, 2, 0.5)],
            &[&[(0, 0, 1.0)], &[(1, 1, 1.0)], &[(2, 2, 1.0)]],
            &[1.0, 1.0, 1.0],
            3,
        );
        assert_optimal(&solve(&p, 1e-8, 200), 3.0, 1e-8);
    }

    #[test]
    fn unbounded_primal_is_dual_infeasible() {
        // maximize X_11 subject to X_22 = 1.
        let p = single(&[(0, 0, 1.0)], &[&[(1, 1, 1.0)]], &[1.0], 2);
        assert_eq!(solve(&p, 1e-8, 200).status, SdpStatus::DualInfeasible);
    }

    #[test]
    fn zero_row_with_nonzero_rhs_is_infeasible() {
        let p = single(&[], &[&[]], &[1.0], 1);
        let sol = solve(&p, 1e-8, 200);
        assert_eq!(sol.status, SdpStatus::PrimalInfeasible);
        assert!(sol.dual_objective < 0.0);
    }

    #[test]
    fn iteration_cap_reports_stalled() {
        let p = single(&[(0, 0, 1.0)], &[&[(0, 0, 1.0)]], &[3.0], 1);
        assert_eq!(solve(&p, 1e-8, 1).status, SdpStatus::Stalled);
    }

    fn random_feasible(seed: u64, dim: usize, m: usize) -> SdpProblem {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rnd = |n: usize| {
            let g = DenseMatrix::from_row_major(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            mul(&g, &g.transpose())
        };
        let x0 = rnd(dim).add(&DenseMatrix::identity(dim).scale(0.1)).unwrap();
        let s0 = rnd(dim).add(&DenseMatrix::identity(dim).scale(0.1)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut aty = DenseMatrix::zeros(dim, dim);
        for _ in 0..m {
            let mut am = SparseBlockMatrix::new();
            let mut full = DenseMatrix::zeros(dim, dim);
            for i in 0..dim {
                for j in i..dim {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    am.add(0, i, j, v);
                    full[(i, j)] = v;
                    full[(j, i)] = v;
                }
            }
            let y: f64 = rng.gen_range(-1.0..1.0);
            aty = aty.add(&full.scale(y)).unwrap();
            b.push(block_inner(&[BlockValue::Dense(full)], &[BlockValue::Dense(x0.clone())]));
            a.push(am);
        }
        let cm = aty.sub(&s0).unwrap();
        let mut c = SparseBlockMatrix::new();
        for i in 0..dim {
            for j in i..dim {
                c.add(0, i, j, cm[(i, j)]);
            }
        }
        SdpProblem::new(vec![BlockKind::Dense(dim)], c, a, b).unwrap()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn strictly_feasible_pairs_reach_optimality(seed in 0u64..10_000, dim in 1usize..6, m in 1usize..8) {
            let p = random_feasible(seed, dim, m);
            let sol = solve(&p, 1e-8, 200);
            proptest::prop_assert_eq!(sol.status, SdpStatus::Optimal);
            let scale = 1.0 + sol.primal_objective.abs();
            proptest::prop_assert!(sol.primal_objective <= sol.dual_objective + 1e-6 * scale);
            proptest::prop_assert!((sol.primal_objective - sol.dual_objective).abs() < 1e-6 * scale);
            proptest::prop_assert!(min_eig(&sol.x) > -1e-7 && min_eig(&sol.s) > -1e-7);
        }
    }
}

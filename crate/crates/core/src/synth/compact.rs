use crate::cbf::{normalize, verify_cbf, ControlSystem, SafeRegion, Verdict, VerifyOptions};
use crate::numkernel::{is_hurwitz, solve_lyapunov, DenseMatrix, SymMatrix};
use crate::poly::Polynomial;
use crate::sos::{check_certificate, SosOutcome, SosProgram};

use super::{linearize, SynthError};

#[derive(Clone, Debug, PartialEq)]
pub struct EnlargeOptions {
    /// Upper end of the bisection on `k`.
    pub k_max: f64,
    /// Bisection stops once the bracket is below `resolution · k_max`.
    pub resolution: f64,
    pub verify: VerifyOptions,
}

impl Default for EnlargeOptions {
    fn default() -> Self {
        Self { k_max: 1.0, resolution: 1e-3, verify: VerifyOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompactOptions {
    /// Bisection resolution on `δ`, relative to the bracket `δ_max`.
    pub resolution: f64,
    /// Grid points per axis for boundary seeds (over the falsifier box).
    pub seeds_per_axis: usize,
    pub verify: VerifyOptions,
    /// Enlargement settings; `None` skips enlargement.
    pub enlarge: Option<EnlargeOptions>,
}

impl Default for CompactOptions {
    fn default() -> Self {
        Self { resolution: 1e-4, seeds_per_axis: 21, verify: VerifyOptions::default(), enlarge: Some(EnlargeOptions::default()) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompactResult {
    pub x_star: Vec<f64>,
    pub u_star: Vec<f64>,
    pub gain: DenseMatrix,
    pub p: SymMatrix,
    pub delta: f64,
    /// Enlargement gain `k` (0 when none was certified).
    pub k: f64,
    pub b0: Polynomial,
    pub b1: Polynomial,
    /// Bracket `δ_max` of the level search.
    pub delta_max: f64,
}

/// `(x − x*)ᵀ P (x − x*)`.
pub fn quadratic_form(p: &SymMatrix, center: &[f64]) -> Polynomial {
    let n = p.dim();
    let d: Vec<Polynomial> =
        (0..n).map(|i| &Polynomial::var(n, i) - &Polynomial::constant(n, center[i])).collect();
    let mut v = Polynomial::zero(n);
    for i in 0..n {
        for j in 0..n {
            v = &v + &(&d[i] * &d[j]).scale(p.get(i, j));
        }
    }
    v
}

fn even_up(d: u32) -> u32 {
    d + d % 2
}

fn feasible(prog: &SosProgram, opts: &VerifyOptions) -> Result<bool, SynthError> {
    Ok(match prog.solve(opts.sdp_tol, opts.max_iters)? {
        SosOutcome::Feasible(c) => check_certificate(&c, opts.cert_tol),
        _ => false,
    })
}

/// `α·L_f b0 + Σ θ_i (L_g b0)_i + η·b0 − 1 ∈ SOS`.
fn level_condition(sys: &ControlSystem, b0: &Polynomial, opts: &VerifyOptions) -> Result<bool, SynthError> {
    let n = sys.n();
    let lf = normalize(&sys.lie_f(b0)?);
    if lf.is_zero() {
        return Ok(true);
    }
    let lg: Vec<Polynomial> = sys.lie_g(b0)?.iter().filter(|p| !p.is_zero()).map(normalize).collect();
    for &d in &opts.sos_degrees {
        let t = even_up(d + lf.degree());
        let mut prog = SosProgram::new(n);
        let a = prog.new_sos_deg(d);
        let eta = prog.new_free_deg(even_up(t.saturating_sub(b0.degree())).max(2));
        let mut e = prog.expr(a)?.mul_poly(&lf)? + prog.expr(eta)?.mul_poly(b0)? - Polynomial::constant(n, 1.0);
        for g in &lg {
            let th = prog.new_free_deg(even_up(t.saturating_sub(g.degree())).max(2));
            e = e + prog.expr(th)?.mul_poly(g)?;
        }
        prog.add_sos(e)?;
        if feasible(&prog, opts)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// `h − β·b0 ∈ SOS` with `β` SOS.
fn level_containment(b0: &Polynomial, h: &Polynomial, opts: &VerifyOptions) -> Result<bool, SynthError> {
    let n = b0.nvars();
    for &d in &opts.sos_degrees {
        let mut prog = SosProgram::new(n);
        let beta = prog.new_sos_deg(d);
        let e = crate::sos::PolyExpr::from(h.clone()) - prog.expr(beta)?.mul_poly(b0)?;
        prog.add_sos(e)?;
        if feasible(&prog, opts)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Containment half of [`check_level`]: `h_i − β_i·b0 ∈ SOS` for every region
/// constraint, with `b0 = δ − (x − x*)ᵀP(x − x*)`.
pub fn check_level_containment(
    region: &SafeRegion,
    x_star: &[f64],
    p: &SymMatrix,
    delta: f64,
    opts: &VerifyOptions,
) -> Result<bool, SynthError> {
    let b0 = &Polynomial::constant(region.nvars(), delta) - &quadratic_form(p, x_star);
    for h in region.constraints() {
        if !level_containment(&b0, &normalize(h), opts)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Whether `δ − (x − x*)ᵀP(x − x*)` passes both the level condition and
/// containment in every region constraint.
pub fn check_level(
    sys: &ControlSystem,
    region: &SafeRegion,
    x_star: &[f64],
    p: &SymMatrix,
    delta: f64,
    opts: &VerifyOptions,
) -> Result<bool, SynthError> {
    if !check_level_containment(region, x_star, p, delta, opts)? {
        return Ok(false);
    }
    let b0 = &Polynomial::constant(sys.n(), delta) - &quadratic_form(p, x_star);
    level_condition(sys, &b0, opts)
}

/// Largest `V = (x − x*)ᵀP(x − x*)` over points of `∂C` reached by
/// projecting grid seeds onto each `h_i = 0`.
fn boundary_bracket(region: &SafeRegion, v: &Polynomial, lo: &[f64], hi: &[f64], per_axis: usize) -> f64 {
    let n = region.nvars();
    let k = per_axis.max(2);
    let total = k.checked_pow(n as u32).unwrap_or(usize::MAX).min(1 << 20);
    let mut best: f64 = 0.0;
    for h in region.constraints() {
        let grad = h.gradient();
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            let mut x: Vec<f64> = (0..n).map(|i| lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / (k - 1) as f64).collect();
            for _ in 0..50 {
                let r = h.eval(&x);
                if r.abs() <= 1e-12 {
                    break;
                }
                let g = grad.eval(&x);
                let gn: f64 = g.iter().map(|v| v * v).sum();
                if gn < 1e-300 {
                    break;
                }
                for (xi, gi) in x.iter_mut().zip(&g) {
                    *xi -= r * gi / gn;
                }
            }
            if h.eval(&x).abs() <= 1e-9 && region.margin(&x) >= -1e-9 {
                best = best.max(v.eval(&x));
            }
            for d in idx.iter_mut() {
                *d += 1;
                if *d < k {
                    break;
                }
                *d = 0;
            }
        }
    }
    best
}

/// Level-set barrier around a fixed point: `P` from the Lyapunov equation of
/// `F − G K`, `δ` by bisection on the level and containment conditions, then
/// optional enlargement by `k·h_1`.
pub fn compact_cbf(
    sys: &ControlSystem,
    region: &SafeRegion,
    x_star: &[f64],
    u_star: &[f64],
    gain: &DenseMatrix,
    n_mat: &SymMatrix,
    opts: &CompactOptions,
) -> Result<CompactResult, SynthError> {
    let n = sys.n();
    if region.nvars() != n {
        return Err(SynthError::Precondition("region and system dimensions differ".into()));
    }
    let residual = sys.vector_field(x_star, u_star).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if residual > 1e-8 {
        return Err(SynthError::Precondition(format!("(x*, u*) is not a fixed point (residual {residual:e})")));
    }
    if gain.rows() != sys.m() || gain.cols() != n {
        return Err(SynthError::Precondition(format!("gain must be {}x{n}", sys.m())));
    }
    if n_mat.dim() != n || n_mat.min_eigenvalue()? <= 0.0 {
        return Err(SynthError::Precondition("N must be positive definite".into()));
    }
    let (f, g) = linearize(sys, x_star, u_star)?;
    let fbar = f.sub(&g.matmul(gain)?)?;
    if !is_hurwitz(&fbar)? {
        return Err(SynthError::NotStabilizing);
    }
    let p = solve_lyapunov(&fbar, n_mat)?;
    if p.min_eigenvalue()? <= 0.0 {
        return Err(SynthError::NotStabilizing);
    }
    let v = quadratic_form(&p, x_star);
    let fo = &opts.verify.falsify;
    let (lo, hi) = if fo.lower.len() == n && fo.upper.len() == n {
        (fo.lower.clone(), fo.upper.clone())
    } else {
        (vec![-2.0; n], vec![2.0; n])
    };
    let mut delta_max = 4.0 * boundary_bracket(region, &v, &lo, &hi, opts.seeds_per_axis);
    if !(delta_max > 0.0) {
        delta_max = 1.0;
    }
    let res = opts.resolution * delta_max;
    let ok = |d: f64| check_level(sys, region, x_star, &p, d, &opts.verify);
    let delta = if ok(delta_max)? {
        delta_max
    } else {
        let (mut a, mut b) = (0.0, delta_max);
        while b - a > res {
            let mid = 0.5 * (a + b);
            if ok(mid)? {
                a = mid;
            } else {
                b = mid;
            }
        }
        a
    };
    if delta < res {
        return Err(SynthError::NoFeasibleLevel);
    }
    let b0 = &Polynomial::constant(n, delta) - &v;
    let (k, b1) = match &opts.enlarge {
        Some(eo) => enlarge(&b0, region, sys, eo)?,
        None => (0.0, b0.clone()),
    };
    Ok(CompactResult {
        x_star: x_star.to_vec(),
        u_star: u_star.to_vec(),
        gain: gain.clone(),
        p,
        delta,
        k,
        b0,
        b1,
        delta_max,
    })
}

/// Bisection for the largest `k ∈ (0, k_max]` with `b0 + k·h_1` certified as
/// a CBF. Returns `(0, b0)` when none is found at the resolution.
pub fn enlarge(
    b0: &Polynomial,
    region: &SafeRegion,
    sys: &ControlSystem,
    opts: &EnlargeOptions,
) -> Result<(f64, Polynomial), SynthError> {
    match verify_cbf(sys, b0, &opts.verify)? {
        Verdict::Verified(_) => {}
        other => {
            return Err(SynthError::Precondition(format!(
                "enlargement needs a certified barrier, got {}",
                match other {
                    Verdict::Falsified(_) => "a falsified one",
                    _ => "an uncertified one",
                }
            )))
        }
    }
    let h = &region.constraints()[0];
    let cand = |k: f64| b0 + &h.scale(k);
    let good = |k: f64| -> Result<bool, SynthError> { Ok(verify_cbf(sys, &cand(k), &opts.verify)?.is_verified()) };
    if !(opts.k_max > 0.0) {
        return Ok((0.0, b0.clone()));
    }
    if good(opts.k_max)? {
        return Ok((opts.k_max, cand(opts.k_max)));
    }
    let res = opts.resolution * opts.k_max;
    let (mut a, mut b) = (0.0, opts.k_max);
    while b - a > res {
        let mid = 0.5 * (a + b);
        if good(mid)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    if a > 0.0 {
        Ok((a, cand(a)))
    } else {
        Ok((0.0, b0.clone()))
    }
}

//! Alternating descent: fix the candidate and search multipliers, then fix
//! the multipliers and search the candidate, each step minimizing the
//! slack `ρ` that lifts the barrier condition into the SOS cone.

use crate::cbf::{
    normalize, verify_cbf_in_region, verify_hocbf, ControlSystem, HocbfChain, SafeRegion, Verdict, VerifyOptions,
};
use crate::poly::{PolyVector, Polynomial};
use crate::sdp::SdpStatus;
use crate::sos::{PolyExpr, SosProgram, VarId};

use super::SynthError;

#[derive(Clone, Debug, PartialEq)]
pub struct DescentParams {
    /// Starting candidate `b⁰` (the base `ψ_0` for chains).
    pub initial: Polynomial,
    /// Outer iteration budget `K`.
    pub max_iters: usize,
    /// Stop when consecutive `ρ` values differ by less than this.
    pub eps: f64,
    /// Degree of `Λ = (1 + Σ x_i²)^{deg/2}`; derived from the constraints when unset.
    pub lambda_degree: Option<u32>,
    /// Degree of the SOS multipliers.
    pub multiplier_degree: u32,
    pub verify: VerifyOptions,
}

impl DescentParams {
    pub fn new(initial: Polynomial) -> Self {
        Self {
            initial,
            max_iters: 20,
            eps: 1e-4,
            lambda_degree: None,
            multiplier_degree: 2,
            verify: VerifyOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// Candidate fixed, multipliers searched.
    Multiplier,
    /// Multipliers fixed, candidate searched.
    Candidate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescentStep {
    pub iteration: usize,
    pub kind: StepKind,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    /// Some step reached `ρ ≤ 0`.
    RhoNonPositive,
    /// `ρ` at the ends of consecutive outer iterations closer than `eps`.
    Converged,
    Budget,
    /// A step had no solution; the reason is attached.
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescentTrace {
    pub steps: Vec<DescentStep>,
    /// Outer iterations started.
    pub iterations: usize,
    pub candidate: Polynomial,
    pub termination: Termination,
    pub verdict: Verdict,
}

impl DescentTrace {
    pub fn rho(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.rho).collect()
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.steps.windows(2).all(|w| w[1].rho <= w[0].rho + tol)
    }
}

fn lambda(n: usize, deg: u32) -> Polynomial {
    let mut s = Polynomial::constant(n, 1.0);
    for i in 0..n {
        s = &s + &Polynomial::var(n, i).pow(2);
    }
    s.pow(deg / 2)
}

fn even_up(d: u32) -> u32 {
    d + d % 2
}

/// Exact degree gap: rounding up would add odd top-degree terms that pin
/// Gram entries to zero and leave the SDP without an interior.
fn free_degree(target: u32, partner: u32) -> u32 {
    target.saturating_sub(partner)
}

fn max_degree(v: &PolyVector) -> u32 {
    v.iter().map(Polynomial::degree).max().unwrap_or(0)
}

/// `ρ = −1 + s` with `s ≥ 0`. Minimized when `cap` is unset; otherwise
/// pinned to `cap` with no objective, which makes the interior-point
/// solver return multipliers strictly inside the feasible set.
fn rho_var(prog: &mut SosProgram, cap: Option<f64>) -> Result<(VarId, PolyExpr), SynthError> {
    let n = prog.nvars();
    let s = prog.new_nonneg();
    match cap {
        None => prog.minimize(s, 1.0)?,
        Some(c) => prog.add_identity(prog.expr(s)? - Polynomial::constant(n, c + 1.0))?,
    }
    let e = prog.expr(s)? + Polynomial::constant(n, -1.0);
    Ok((s, e))
}

/// Slack added to the optimal `ρ` before re-solving for interior multipliers.
fn backoff(rho: f64) -> f64 {
    1e-3 * rho.abs().max(1e-2)
}

/// `⟨b, prev⟩ = ‖prev‖²` on the coefficient vectors. Without it the candidate
/// step can scale `b` up until the constant `−1` is negligible, and the
/// optimum is not attained.
fn fix_scale(prog: &mut SosProgram, b: &PolyExpr, prev: &Polynomial) -> Result<(), SynthError> {
    let n = prog.nvars();
    let inner = b.map_linear(|p| Ok(Polynomial::constant(n, p.terms().map(|(m, c)| c * prev.coeff(m)).sum())))?;
    let norm: f64 = prev.terms().map(|(_, c)| c * c).sum();
    prog.add_identity(inner - Polynomial::constant(n, norm))?;
    Ok(())
}

enum Solved {
    Ok(crate::sos::Certificate),
    Fail(String),
}

/// Largest identity residual accepted from a stalled iterate. Descent steps
/// only steer the search; the final verdict is certified separately.
const ITERATE_TOL: f64 = 1e-3;

fn solve(prog: &SosProgram, opts: &VerifyOptions, what: &str) -> Result<Solved, SynthError> {
    Ok(match prog.solve_iterate(opts.sdp_tol, opts.max_iters)? {
        (SdpStatus::Optimal, c) => Solved::Ok(c),
        (SdpStatus::Stalled, c) if c.max_residual() <= ITERATE_TOL && c.min_gram_eig() >= -ITERATE_TOL => Solved::Ok(c),
        (SdpStatus::PrimalInfeasible, _) => Solved::Fail(format!("{what} is infeasible")),
        (s, _) => Solved::Fail(format!("{what} ended {s:?}")),
    })
}

/// Shared bookkeeping of both descent loops.
struct Recorder {
    steps: Vec<DescentStep>,
    eps: f64,
}

impl Recorder {
    fn last(&self) -> f64 {
        self.steps.last().map_or(f64::INFINITY, |s| s.rho)
    }

    /// Records `rho`, clamped to the previous value. Returns true when the
    /// new value was not an improvement (the caller keeps its old state).
    fn push(&mut self, iteration: usize, kind: StepKind, rho: f64) -> bool {
        let prev = self.last();
        let worse = rho > prev;
        self.steps.push(DescentStep { iteration, kind, rho: rho.min(prev) });
        worse
    }

    /// `ρ ≤ 0` ends the run at any step; the gap test compares the ends of
    /// consecutive outer iterations and runs only when `iteration_end` is set.
    fn stop(&self, iteration_end: bool) -> Option<Termination> {
        let cur = self.last();
        if cur <= 0.0 {
            return Some(Termination::RhoNonPositive);
        }
        if !iteration_end {
            return None;
        }
        let mut ends = self.steps.iter().rev().filter(|s| s.kind == StepKind::Candidate);
        let _ = ends.next();
        match ends.next() {
            Some(prev) if (prev.rho - cur).abs() < self.eps => Some(Termination::Converged),
            _ => None,
        }
    }
}

#[derive(Clone)]
struct CbfMultipliers {
    alpha: Polynomial,
    eta: Polynomial,
    theta: Vec<Polynomial>,
    /// `(β_j, w_j)` per region constraint.
    contain: Vec<(Polynomial, Polynomial)>,
}

struct CbfSetup<'a> {
    sys: &'a ControlSystem,
    hs: Vec<Polynomial>,
    lambda: Polynomial,
    t: u32,
    d_alpha: u32,
    d_lg: u32,
    d_b: u32,
    shrink: f64,
    opts: &'a VerifyOptions,
}

impl CbfSetup<'_> {
    /// Step with the candidate fixed.
    fn multipliers(&self, b: &Polynomial, cap: Option<f64>) -> Result<Result<(f64, CbfMultipliers), String>, SynthError> {
        let n = self.sys.n();
        let mut prog = SosProgram::new(n);
        let (s, rho) = rho_var(&mut prog, cap)?;
        let a = prog.new_sos_deg(self.d_alpha);
        let eta = prog.new_free_deg(free_degree(self.t, self.d_b));
        let thetas: Vec<VarId> = (0..self.sys.m()).map(|_| prog.new_free_deg(free_degree(self.t, self.d_lg))).collect();
        let lf = self.sys.lie_f(b)?;
        let lg = self.sys.lie_g(b)?;
        let mut e = prog.expr(a)?.mul_poly(&lf)? + prog.expr(eta)?.mul_poly(b)? + rho.mul_poly(&self.lambda)?
            - Polynomial::constant(n, 1.0);
        for (th, g) in thetas.iter().zip(&lg) {
            e = e + prog.expr(*th)?.mul_poly(g)?;
        }
        prog.add_sos(e)?;
        let bs = b - &Polynomial::constant(n, self.shrink);
        let mut contain = Vec::new();
        for h in &self.hs {
            let t2 = even_up((self.d_alpha + self.d_b).max(h.degree()));
            let beta = prog.new_sos_deg(self.d_alpha);
            let w = prog.new_free_deg(free_degree(t2, h.degree()));
            let c = prog.expr(w)?.mul_poly(h)? - prog.expr(beta)?.mul_poly(&bs)? - Polynomial::constant(n, 1.0);
            prog.add_sos(c)?;
            contain.push((beta, w));
        }
        let cert = match solve(&prog, self.opts, "multiplier step")? {
            Solved::Ok(c) => c,
            Solved::Fail(why) => return Ok(Err(why)),
        };
        let m = CbfMultipliers {
            alpha: cert.value(a).clone(),
            eta: cert.value(eta).clone(),
            theta: thetas.iter().map(|t| cert.value(*t).clone()).collect(),
            contain: contain.iter().map(|(bv, w)| (cert.value(*bv).clone(), cert.value(*w).clone())).collect(),
        };
        Ok(Ok((cert.scalar(s) - 1.0, m)))
    }

    /// Step with the multipliers fixed; the candidate is a free polynomial.
    fn candidate(&self, m: &CbfMultipliers, prev: &Polynomial) -> Result<Result<(f64, Polynomial), String>, SynthError> {
        let n = self.sys.n();
        let mut prog = SosProgram::new(n);
        let (s, rho) = rho_var(&mut prog, None)?;
        let bv = prog.new_free_deg(self.d_b);
        let b = prog.expr(bv)?;
        fix_scale(&mut prog, &b, prev)?;
        let mut e = b.lie(self.sys.f())?.mul_poly(&m.alpha)? + b.mul_poly(&m.eta)? + rho.mul_poly(&self.lambda)?
            - Polynomial::constant(n, 1.0);
        for (j, th) in m.theta.iter().enumerate() {
            e = e + b.lie(&self.sys.g().column(j))?.mul_poly(th)?;
        }
        prog.add_sos(e)?;
        let bs = b.clone() - Polynomial::constant(n, self.shrink);
        for (h, (beta, w)) in self.hs.iter().zip(&m.contain) {
            let c = PolyExpr::from(w * h) - bs.mul_poly(beta)? - Polynomial::constant(n, 1.0);
            prog.add_sos(c)?;
        }
        Ok(match solve(&prog, self.opts, "candidate step")? {
            Solved::Ok(c) => Ok((c.scalar(s) - 1.0, c.value(bv).clone())),
            Solved::Fail(why) => Err(why),
        })
    }
}

fn check_region(sys: &ControlSystem, region: &SafeRegion, b: &Polynomial) -> Result<(), SynthError> {
    if region.nvars() != sys.n() || b.nvars() != sys.n() {
        return Err(SynthError::Precondition("system, region and candidate dimensions differ".into()));
    }
    if b.degree() == 0 {
        return Err(SynthError::Precondition("the initial candidate must be nonconstant".into()));
    }
    Ok(())
}

fn finish(
    steps: Recorder,
    iterations: usize,
    candidate: Polynomial,
    termination: Termination,
    verify: impl FnOnce(&Polynomial) -> Result<Verdict, SynthError>,
) -> Result<DescentTrace, SynthError> {
    let verdict = match &termination {
        Termination::RhoNonPositive => verify(&candidate)?,
        Termination::Converged => Verdict::Unknown(format!("descent stalled at rho = {:.6e}", steps.last())),
        Termination::Budget => Verdict::Unknown(format!("iteration budget exhausted at rho = {:.6e}", steps.last())),
        Termination::Failed(why) => Verdict::Unknown(why.clone()),
    };
    Ok(DescentTrace { steps: steps.steps, iterations, candidate, termination, verdict })
}

/// Alternating descent for a CBF whose superlevel set stays in `region`.
///
/// Multiplier step, with `b` fixed:
/// `α·L_f b + Σ θ_i (L_g b)_i + η·b + ρΛ − 1 ∈ SOS` and, per constraint,
/// `−β·(b − ε) + w·h − 1 ∈ SOS`. The candidate step solves the same
/// program in `b` with the multipliers fixed. A step that fails to improve
/// `ρ` keeps the previous state, so the recorded sequence never increases.
pub fn descent_cbf(sys: &ControlSystem, region: &SafeRegion, params: &DescentParams) -> Result<DescentTrace, SynthError> {
    check_region(sys, region, &params.initial)?;
    if params.max_iters == 0 || !(params.eps > 0.0) {
        return Err(SynthError::Precondition("descent needs max_iters ≥ 1 and eps > 0".into()));
    }
    let d_b = params.initial.degree();
    let d_lf = (d_b - 1 + max_degree(sys.f())).max(sys.lie_f(&params.initial)?.degree());
    let d_g = (0..sys.m()).map(|j| max_degree(&sys.g().column(j))).max().unwrap_or(0);
    let d_alpha = params.multiplier_degree;
    let t = even_up(d_alpha + d_lf).max(even_up(d_b));
    let setup = CbfSetup {
        sys,
        hs: region.constraints().iter().map(normalize).collect(),
        lambda: lambda(sys.n(), params.lambda_degree.unwrap_or(t)),
        t,
        d_alpha,
        d_lg: d_b - 1 + d_g,
        d_b,
        shrink: params.verify.shrink,
        opts: &params.verify,
    };
    let verify = |b: &Polynomial| -> Result<Verdict, SynthError> {
        Ok(verify_cbf_in_region(sys, b, region, &params.verify)?)
    };

    let mut rec = Recorder { steps: Vec::new(), eps: params.eps };
    let mut b = normalize(&params.initial);
    let mut mults: Option<CbfMultipliers> = None;
    for k in 1..=params.max_iters {
        match setup.multipliers(&b, None)? {
            Ok((rho, m)) => {
                if !rec.push(k, StepKind::Multiplier, rho) || mults.is_none() {
                    let interior = if rho > 0.0 { setup.multipliers(&b, Some(rho + backoff(rho)))?.ok() } else { None };
                    mults = Some(interior.map_or(m, |(_, mi)| mi));
                }
            }
            Err(why) => {
                let term = if mults.is_some() { Termination::Converged } else { Termination::Failed(why) };
                return finish(rec, k, b, term, verify);
            }
        }
        if let Some(term) = rec.stop(false) {
            return finish(rec, k, b, term, verify);
        }
        let m = mults.clone().expect("set above");
        match setup.candidate(&m, &b)? {
            Ok((rho, nb)) => {
                let scale = nb.max_abs_coeff();
                let worse = rec.push(k, StepKind::Candidate, rho);
                if !worse && scale > 1e-9 && nb.degree() > 0 {
                    b = normalize(&nb);
                }
            }
            Err(_) => {
                let last = rec.last();
                rec.push(k, StepKind::Candidate, last);
            }
        }
        if let Some(term) = rec.stop(true) {
            return finish(rec, k, b, term, verify);
        }
    }
    let k = params.max_iters;
    finish(rec, k, b, Termination::Budget, verify)
}

#[derive(Clone)]
struct HocbfMultipliers {
    alpha: Polynomial,
    eta: Polynomial,
    theta: Vec<Polynomial>,
    gamma: Vec<Polynomial>,
    contain: Vec<(Vec<Polynomial>, Polynomial)>,
}

struct HocbfSetup<'a> {
    sys: &'a ControlSystem,
    hs: Vec<Polynomial>,
    gains: Vec<f64>,
    lambda: Polynomial,
    t: u32,
    d_mult: u32,
    d_last: u32,
    d_lg: u32,
    d_b: u32,
    shrink: f64,
    opts: &'a VerifyOptions,
}

/// Chain pieces as expressions: `ψ_0..ψ_{r−1}`, the top drift, the top
/// input coefficients.
struct ChainExpr {
    psi: Vec<PolyExpr>,
    drift: PolyExpr,
    input: Vec<PolyExpr>,
}

impl HocbfSetup<'_> {
    fn chain_expr(&self, b: PolyExpr) -> Result<ChainExpr, SynthError> {
        let r = self.gains.len();
        let mut psi = vec![b];
        for &k in &self.gains[..r - 1] {
            let last = psi.last().expect("nonempty").clone();
            psi.push(last.lie(self.sys.f())? + last.scale(k));
        }
        let last = psi.last().expect("nonempty").clone();
        let drift = last.lie(self.sys.f())? + last.scale(self.gains[r - 1]);
        let input = (0..self.sys.m()).map(|j| last.lie(&self.sys.g().column(j))).collect::<Result<_, _>>()?;
        Ok(ChainExpr { psi, drift, input })
    }

    fn multipliers(
        &self,
        chain: &HocbfChain,
        cap: Option<f64>,
    ) -> Result<Result<(f64, HocbfMultipliers), String>, SynthError> {
        let n = self.sys.n();
        let r = chain.order();
        let mut prog = SosProgram::new(n);
        let (s, rho) = rho_var(&mut prog, cap)?;
        let a = prog.new_sos_deg(self.d_mult);
        let eta = prog.new_free_deg(free_degree(self.t, self.d_last));
        let thetas: Vec<VarId> = (0..self.sys.m()).map(|_| prog.new_free_deg(free_degree(self.t, self.d_lg))).collect();
        let gammas: Vec<VarId> = (0..r).map(|_| prog.new_sos_deg(self.d_mult)).collect();
        let mut e = prog.expr(a)?.mul_poly(chain.top_drift())?
            + prog.expr(eta)?.mul_poly(&chain.psi()[r - 1])?
            + rho.mul_poly(&self.lambda)?
            - Polynomial::constant(n, 1.0);
        for (th, g) in thetas.iter().zip(chain.top_input()) {
            e = e + prog.expr(*th)?.mul_poly(g)?;
        }
        for (gm, p) in gammas.iter().zip(chain.psi()) {
            e = e - prog.expr(*gm)?.mul_poly(p)?;
        }
        prog.add_sos(e)?;
        let mut contain = Vec::new();
        for h in &self.hs {
            let t2 = even_up((self.d_mult + self.d_b).max(h.degree()));
            let w = prog.new_free_deg(free_degree(t2, h.degree()));
            let mut c = prog.expr(w)?.mul_poly(h)? - Polynomial::constant(n, 1.0);
            let mut betas = Vec::new();
            for p in chain.psi() {
                let beta = prog.new_sos_deg(self.d_mult);
                let ps = p - &Polynomial::constant(n, self.shrink * p.max_abs_coeff());
                c = c - prog.expr(beta)?.mul_poly(&ps)?;
                betas.push(beta);
            }
            prog.add_sos(c)?;
            contain.push((betas, w));
        }
        let cert = match solve(&prog, self.opts, "multiplier step")? {
            Solved::Ok(c) => c,
            Solved::Fail(why) => return Ok(Err(why)),
        };
        let m = HocbfMultipliers {
            alpha: cert.value(a).clone(),
            eta: cert.value(eta).clone(),
            theta: thetas.iter().map(|t| cert.value(*t).clone()).collect(),
            gamma: gammas.iter().map(|g| cert.value(*g).clone()).collect(),
            contain: contain
                .iter()
                .map(|(bs, w)| (bs.iter().map(|b| cert.value(*b).clone()).collect(), cert.value(*w).clone()))
                .collect(),
        };
        Ok(Ok((cert.scalar(s) - 1.0, m)))
    }

    fn candidate(
        &self,
        m: &HocbfMultipliers,
        offsets: &[f64],
        prev: &Polynomial,
    ) -> Result<Result<(f64, Polynomial), String>, SynthError> {
        let n = self.sys.n();
        let r = self.gains.len();
        let mut prog = SosProgram::new(n);
        let (s, rho) = rho_var(&mut prog, None)?;
        let bv = prog.new_free_deg(self.d_b);
        let b = prog.expr(bv)?;
        fix_scale(&mut prog, &b, prev)?;
        let ce = self.chain_expr(b)?;
        // Input-free chain below the top.
        for p in &ce.psi[..r - 1] {
            for j in 0..self.sys.m() {
                prog.add_identity(p.lie(&self.sys.g().column(j))?)?;
            }
        }
        let mut e = ce.drift.mul_poly(&m.alpha)? + ce.psi[r - 1].mul_poly(&m.eta)? + rho.mul_poly(&self.lambda)?
            - Polynomial::constant(n, 1.0);
        for (inp, th) in ce.input.iter().zip(&m.theta) {
            e = e + inp.mul_poly(th)?;
        }
        for (p, g) in ce.psi.iter().zip(&m.gamma) {
            e = e - p.mul_poly(g)?;
        }
        prog.add_sos(e)?;
        for (h, (betas, w)) in self.hs.iter().zip(&m.contain) {
            let mut c = PolyExpr::from(w * h) - Polynomial::constant(n, 1.0);
            for ((p, beta), off) in ce.psi.iter().zip(betas).zip(offsets) {
                c = c - (p.clone() - Polynomial::constant(n, *off)).mul_poly(beta)?;
            }
            prog.add_sos(c)?;
        }
        Ok(match solve(&prog, self.opts, "candidate step")? {
            Solved::Ok(c) => Ok((c.scalar(s) - 1.0, c.value(bv).clone())),
            Solved::Fail(why) => Err(why),
        })
    }
}

/// Alternating descent for a higher-order chain, parametrized by its base
/// `ψ_0`. The candidate step keeps `L_g ψ_i ≡ 0` for `i < r−1` so the
/// relative degree is preserved; chain conditions are certified in the
/// final verification.
pub fn descent_hocbf(
    sys: &ControlSystem,
    region: &SafeRegion,
    chain0: &HocbfChain,
    params: &DescentParams,
) -> Result<DescentTrace, SynthError> {
    check_region(sys, region, chain0.base())?;
    if params.max_iters == 0 || !(params.eps > 0.0) {
        return Err(SynthError::Precondition("descent needs max_iters ≥ 1 and eps > 0".into()));
    }
    let gains = chain0.gains().to_vec();
    let r = gains.len();
    // Re-derive against this system: fails on relative-degree mismatch.
    let chain0 = HocbfChain::new(sys, &normalize(chain0.base()), &gains)?;
    let d_b = chain0.base().degree();
    let d_mult = params.multiplier_degree;
    let d_psi = chain0.psi().iter().map(Polynomial::degree).max().unwrap_or(0);
    let t = even_up((d_mult + chain0.top_drift().degree()).max(d_mult + d_psi));
    let setup = HocbfSetup {
        sys,
        hs: region.constraints().iter().map(normalize).collect(),
        gains: gains.clone(),
        lambda: lambda(sys.n(), params.lambda_degree.unwrap_or(t)),
        t,
        d_mult,
        d_last: chain0.psi()[r - 1].degree(),
        d_lg: chain0.top_input().iter().map(Polynomial::degree).max().unwrap_or(0),
        d_b,
        shrink: params.verify.shrink,
        opts: &params.verify,
    };
    let verify_opts = VerifyOptions { check_chain: true, ..params.verify.clone() };
    let verify = |b: &Polynomial| -> Result<Verdict, SynthError> {
        let chain = HocbfChain::new(sys, b, &gains)?;
        Ok(verify_hocbf(sys, &chain, region, &verify_opts)?)
    };

    let mut rec = Recorder { steps: Vec::new(), eps: params.eps };
    let mut chain = chain0;
    let mut mults: Option<HocbfMultipliers> = None;
    for k in 1..=params.max_iters {
        match setup.multipliers(&chain, None)? {
            Ok((rho, m)) => {
                if !rec.push(k, StepKind::Multiplier, rho) || mults.is_none() {
                    let interior =
                        if rho > 0.0 { setup.multipliers(&chain, Some(rho + backoff(rho)))?.ok() } else { None };
                    mults = Some(interior.map_or(m, |(_, mi)| mi));
                }
            }
            Err(why) => {
                let term = if mults.is_some() { Termination::Converged } else { Termination::Failed(why) };
                return finish(rec, k, chain.base().clone(), term, verify);
            }
        }
        if let Some(term) = rec.stop(false) {
            return finish(rec, k, chain.base().clone(), term, verify);
        }
        let m = mults.clone().expect("set above");
        let offsets: Vec<f64> = chain.psi().iter().map(|p| setup.shrink * p.max_abs_coeff()).collect();
        match setup.candidate(&m, &offsets, chain.base())? {
            Ok((rho, nb)) => {
                let next = (nb.max_abs_coeff() > 1e-9 && nb.degree() > 0)
                    .then(|| HocbfChain::new(sys, &normalize(&nb), &gains).ok())
                    .flatten();
                let worse = rec.push(k, StepKind::Candidate, rho);
                if let (false, Some(c)) = (worse, next) {
                    chain = c;
                }
            }
            Err(_) => {
                let last = rec.last();
                rec.push(k, StepKind::Candidate, last);
            }
        }
        if let Some(term) = rec.stop(true) {
            return finish(rec, k, chain.base().clone(), term, verify);
        }
    }
    let k = params.max_iters;
    finish(rec, k, chain.base().clone(), Termination::Budget, verify)
}

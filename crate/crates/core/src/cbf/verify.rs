use crate::poly::{relative_degree, Polynomial};
use crate::sos::{check_certificate, PolyExpr, SosOutcome, SosProgram, VarId};

use super::falsify::falsify_member;
use super::{
    falsify, falsify_containment, falsify_hocbf, falsify_pair, normalize, shrink, CbfError, CertificateRecord,
    ControlSystem, Evidence, HocbfChain, SafeRegion, Verdict, VerifyOptions, Witness,
};

pub(crate) fn even_up(d: u32) -> u32 {
    d + d % 2
}

/// Degree of a free multiplier whose product with `partner` should reach `target`.
pub(crate) fn free_degree(target: u32, partner: &Polynomial) -> u32 {
    even_up(target.saturating_sub(partner.degree())).max(2)
}

/// Program under construction with named multipliers.
pub(crate) struct Builder {
    pub prog: SosProgram,
    pub names: Vec<(String, VarId)>,
}

impl Builder {
    pub fn new(n: usize) -> Self {
        Self { prog: SosProgram::new(n), names: Vec::new() }
    }

    pub fn sos(&mut self, name: &str, deg: u32) -> (VarId, PolyExpr) {
        let v = self.prog.new_sos_deg(deg);
        self.names.push((name.to_string(), v));
        (v, self.prog.expr(v).expect("fresh variable"))
    }

    pub fn free(&mut self, name: &str, deg: u32) -> (VarId, PolyExpr) {
        let v = self.prog.new_free_deg(deg);
        self.names.push((name.to_string(), v));
        (v, self.prog.expr(v).expect("fresh variable"))
    }
}

pub(crate) enum Attempt {
    Found(CertificateRecord),
    Infeasible,
    Unknown(String),
}

pub(crate) fn attempt(b: Builder, condition: &str, opts: &VerifyOptions) -> Result<Attempt, CbfError> {
    Ok(match b.prog.solve(opts.sdp_tol, opts.max_iters)? {
        SosOutcome::Feasible(cert) => {
            if check_certificate(&cert, opts.cert_tol) {
                Attempt::Found(CertificateRecord { condition: condition.to_string(), certificate: cert, multipliers: b.names })
            } else {
                Attempt::Unknown(format!(
                    "certificate for {condition} failed the re-check (residual {:.3e}, Gram eigenvalue {:.3e})",
                    cert.max_residual(),
                    cert.min_gram_eig()
                ))
            }
        }
        SosOutcome::Infeasible => Attempt::Infeasible,
        SosOutcome::Unknown(s) => Attempt::Unknown(format!("SDP for {condition} ended {s:?}")),
    })
}

/// Tries a certificate family over the degree schedule; `build(d, r)`
/// returns the program for SOS multiplier degree `d` and power `r`.
fn escalate(
    opts: &VerifyOptions,
    condition: &str,
    use_powers: bool,
    mut build: impl FnMut(u32, u32) -> Result<Builder, CbfError>,
) -> Result<Result<Evidence, String>, CbfError> {
    let powers: Vec<u32> = if use_powers { opts.powers.clone() } else { vec![0] };
    let mut last = None;
    for &r in &powers {
        for &d in &opts.sos_degrees {
            match attempt(build(d, r)?, condition, opts)? {
                Attempt::Found(rec) => {
                    return Ok(Ok(Evidence { records: vec![rec], sos_degree: d, power: r, shrink: None }))
                }
                Attempt::Infeasible => {}
                Attempt::Unknown(why) => last = Some(why),
            }
        }
    }
    let mut msg = format!(
        "no certificate for {condition} at multiplier degrees {:?}{}",
        opts.sos_degrees,
        if use_powers { format!(" and powers {:?}", opts.powers) } else { String::new() }
    );
    if let Some(why) = last {
        msg.push_str(&format!("; {why}"));
    }
    Ok(Err(msg))
}

fn to_verdict(r: Result<Evidence, String>) -> Verdict {
    match r {
        Ok(e) => Verdict::Verified(e),
        Err(why) => Verdict::Unknown(why),
    }
}

fn trivial(condition: &str) -> Verdict {
    Verdict::Verified(Evidence {
        records: vec![CertificateRecord::trivial(condition)],
        sos_degree: 0,
        power: 0,
        shrink: None,
    })
}

fn check_dims(sys: &ControlSystem, ps: &[&Polynomial]) -> Result<(), CbfError> {
    if sys.m() == 0 {
        return Err(CbfError::Dimension("system has no inputs".into()));
    }
    if let Some(p) = ps.iter().find(|p| p.nvars() != sys.n()) {
        return Err(CbfError::Dimension(format!("polynomial over {} variables, system has {}", p.nvars(), sys.n())));
    }
    Ok(())
}

/// Certifies emptiness of `{b = 0, L_g b = 0, L_f b < 0}` through
/// `α0 − α1·L_f b + η·b + Σ θ_i (L_g b)_i + (L_f b)^{2r} ≡ 0`
/// with `α0, α1` SOS and `η, θ_i` free.
pub fn verify_cbf(sys: &ControlSystem, b: &Polynomial, opts: &VerifyOptions) -> Result<Verdict, CbfError> {
    check_dims(sys, &[b])?;
    let bn = normalize(b);
    let lf = normalize(&sys.lie_f(&bn)?);
    if lf.is_zero() {
        return Ok(trivial("cbf condition (drift derivative vanishes identically)"));
    }
    if opts.falsify_first {
        if let Some(x) = falsify(sys, b, &opts.falsify) {
            return Ok(Verdict::Falsified(Witness {
                point: x,
                condition: "b = 0, L_g b = 0 and L_f b < 0".into(),
            }));
        }
    }
    let lg: Vec<Polynomial> = sys.lie_g(&bn)?.iter().filter(|p| !p.is_zero()).map(normalize).collect();
    let res = escalate(opts, "cbf condition", true, |d, r| cbf_builder(sys.n(), &bn, &lf, &lg, d, r))?;
    Ok(to_verdict(res))
}

fn cbf_builder(n: usize, bn: &Polynomial, lf: &Polynomial, lg: &[Polynomial], d: u32, r: u32) -> Result<Builder, CbfError> {
    let t = even_up((2 * r * lf.degree()).max(d + lf.degree()));
    let mut bl = Builder::new(n);
    let (_, a0) = bl.sos("alpha0", t);
    let (_, a1) = bl.sos("alpha1", d);
    let (_, eta) = bl.free("eta", free_degree(t, bn));
    let mut e = a0 - a1.mul_poly(lf)? + eta.mul_poly(bn)? + lf.pow(2 * r);
    for (i, g) in lg.iter().enumerate() {
        let (_, th) = bl.free(&format!("theta{}", i + 1), free_degree(t, g));
        e = e + th.mul_poly(g)?;
    }
    bl.prog.add_identity(e)?;
    Ok(bl)
}

/// The program [`verify_cbf`] solves at multiplier degree `d` and power `r`;
/// `None` when `L_f b ≡ 0` and no program is needed.
pub fn cbf_condition_program(sys: &ControlSystem, b: &Polynomial, d: u32, r: u32) -> Result<Option<SosProgram>, CbfError> {
    check_dims(sys, &[b])?;
    let bn = normalize(b);
    let lf = normalize(&sys.lie_f(&bn)?);
    if lf.is_zero() {
        return Ok(None);
    }
    let lg: Vec<Polynomial> = sys.lie_g(&bn)?.iter().filter(|p| !p.is_zero()).map(normalize).collect();
    Ok(Some(cbf_builder(sys.n(), &bn, &lf, &lg, d, r)?.prog))
}

/// Certifies `∩_i {b_i ≥ 0} ⊆ {h_j ≥ 0}` for every constraint by showing
/// `{b_i,ε ≥ 0, h_j = 0}` is empty:
/// `β0 + Σ β_i·b_i,ε + w·h_j + 1 ≡ 0`, `β` SOS, `w` free.
pub fn verify_containment(b_set: &[Polynomial], region: &SafeRegion, opts: &VerifyOptions) -> Result<Verdict, CbfError> {
    let n = region.nvars();
    if b_set.is_empty() {
        return Err(CbfError::Precondition("containment needs at least one barrier".into()));
    }
    if let Some(b) = b_set.iter().find(|b| b.nvars() != n) {
        return Err(CbfError::Dimension(format!("barrier over {} variables, region over {n}", b.nvars())));
    }
    let bs: Vec<Polynomial> = b_set.iter().map(|b| shrink(&normalize(b), opts.shrink)).collect();
    let mut verdict = Verdict::Verified(Evidence { records: Vec::new(), sos_degree: 0, power: 0, shrink: Some(opts.shrink) });
    for (j, h) in region.constraints().iter().enumerate() {
        let hn = normalize(h);
        let label = format!("containment in constraint {}", j + 1);
        if opts.falsify_first {
            if let Some(x) = falsify_containment(&bs, &hn, &opts.falsify) {
                return Ok(Verdict::Falsified(Witness {
                    point: x,
                    condition: format!("barrier set reaches the boundary of constraint {}", j + 1),
                }));
            }
        }
        let res = escalate(opts, &label, false, |d, _| containment_builder(n, &bs, &hn, d))?;
        let mut v = to_verdict(res);
        if let Verdict::Verified(ev) = &mut v {
            ev.shrink = Some(opts.shrink);
        }
        verdict = verdict.and(v);
    }
    Ok(verdict)
}

fn containment_builder(n: usize, bs: &[Polynomial], hn: &Polynomial, d: u32) -> Result<Builder, CbfError> {
    let bdeg = bs.iter().map(Polynomial::degree).max().unwrap_or(0);
    let t = even_up((d + bdeg).max(hn.degree()));
    let mut bl = Builder::new(n);
    let (_, b0) = bl.sos("beta0", t);
    let (_, w) = bl.free("w", free_degree(t, hn));
    let mut e = b0 + w.mul_poly(hn)? + Polynomial::constant(n, 1.0);
    for (i, b) in bs.iter().enumerate() {
        let (_, bi) = bl.sos(&format!("beta{}", i + 1), d);
        e = e + bi.mul_poly(b)?;
    }
    bl.prog.add_identity(e)?;
    Ok(bl)
}

/// The programs [`verify_containment`] solves at multiplier degree `d`, one
/// per region constraint.
pub fn containment_programs(
    b_set: &[Polynomial],
    region: &SafeRegion,
    shrink_eps: f64,
    d: u32,
) -> Result<Vec<SosProgram>, CbfError> {
    let n = region.nvars();
    if b_set.is_empty() || b_set.iter().any(|b| b.nvars() != n) {
        return Err(CbfError::Dimension("barriers must be nonempty and match the region".into()));
    }
    let bs: Vec<Polynomial> = b_set.iter().map(|b| shrink(&normalize(b), shrink_eps)).collect();
    region.constraints().iter().map(|h| Ok(containment_builder(n, &bs, &normalize(h), d)?.prog)).collect()
}

/// CBF condition plus containment of `{b ≥ 0}` in the region.
pub fn verify_cbf_in_region(
    sys: &ControlSystem,
    b: &Polynomial,
    region: &SafeRegion,
    opts: &VerifyOptions,
) -> Result<Verdict, CbfError> {
    let v = verify_cbf(sys, b, opts)?;
    if v.is_falsified() {
        return Ok(v);
    }
    Ok(v.and(verify_containment(std::slice::from_ref(b), region, opts)?))
}

/// HOCBF condition with `D = L_f ψ_{r−1} + κ_r ψ_{r−1}`:
/// `α0 − α1·D + Σ γ_i ψ_i + η·ψ_{r−1} + Σ θ_j (L_g ψ_{r−1})_j + D^{2s} ≡ 0`,
/// then containment of `∩ {ψ_i ≥ 0}` in the region.
pub fn verify_hocbf(
    sys: &ControlSystem,
    chain: &HocbfChain,
    region: &SafeRegion,
    opts: &VerifyOptions,
) -> Result<Verdict, CbfError> {
    let r = chain.order();
    check_dims(sys, &[chain.base()])?;
    let found = relative_degree(chain.base(), sys, r);
    if found != Some(r) {
        return Err(CbfError::RelativeDegree { expected: r, found });
    }
    if opts.falsify_first {
        if let Some(x) = falsify_hocbf(sys, chain, &opts.falsify) {
            return Ok(Verdict::Falsified(Witness {
                point: x,
                condition: format!("psi_{} = 0, its input coefficient vanishes and its drift is negative", r - 1),
            }));
        }
    }
    let n = sys.n();
    let psi: Vec<Polynomial> = chain.psi().iter().map(normalize).collect();
    let dtop = normalize(chain.top_drift());
    let mut verdict = if dtop.is_zero() {
        trivial("hocbf condition (drift derivative vanishes identically)")
    } else {
        let lg: Vec<Polynomial> = chain.top_input().iter().filter(|p| !p.is_zero()).map(normalize).collect();
        let last = &psi[r - 1];
        let pdeg = psi.iter().map(Polynomial::degree).max().unwrap_or(0);
        to_verdict(escalate(opts, "hocbf condition", true, |d, s| {
            let t = even_up((2 * s * dtop.degree()).max(d + dtop.degree()).max(d + pdeg));
            let mut bl = Builder::new(n);
            let (_, a0) = bl.sos("alpha0", t);
            let (_, a1) = bl.sos("alpha1", d);
            let (_, eta) = bl.free("eta", free_degree(t, last));
            let mut e = a0 - a1.mul_poly(&dtop)? + eta.mul_poly(last)? + dtop.pow(2 * s);
            for (i, p) in psi.iter().enumerate() {
                let (_, g) = bl.sos(&format!("gamma{i}"), d);
                e = e + g.mul_poly(p)?;
            }
            for (j, g) in lg.iter().enumerate() {
                let (_, th) = bl.free(&format!("theta{}", j + 1), free_degree(t, g));
                e = e + th.mul_poly(g)?;
            }
            bl.prog.add_identity(e)?;
            Ok(bl)
        })?)
    };
    if opts.check_chain {
        verdict = verdict.and(check_chain(sys, chain, opts)?);
    }
    if verdict.is_falsified() {
        return Ok(verdict);
    }
    Ok(verdict.and(verify_containment(chain.psi(), region, opts)?))
}

/// Chain conditions: for `1 ≤ i < r`, no `x` has `ψ_i ≥ 0`, `ψ_{i−1} = 0`
/// and `L_f ψ_{i−1} < 0`. Certificate with `L = L_f ψ_{i−1}`:
/// `σ0 + λ·ψ_i − φ·L − μ·ψ_i·L + ζ·ψ_{i−1} + L^{2s} ≡ 0`.
pub fn check_chain(sys: &ControlSystem, chain: &HocbfChain, opts: &VerifyOptions) -> Result<Verdict, CbfError> {
    let n = sys.n();
    let psi = chain.psi();
    let mut verdict = Verdict::Verified(Evidence { records: Vec::new(), sos_degree: 0, power: 0, shrink: None });
    for i in 1..chain.order() {
        let label = format!("chain condition {i}");
        let prev = normalize(&psi[i - 1]);
        let cur = normalize(&psi[i]);
        let l = normalize(&sys.lie_f(&prev)?);
        if l.is_zero() {
            verdict = verdict.and(trivial(&label));
            continue;
        }
        let res = escalate(opts, &label, true, |d, s| {
            let t = even_up((2 * s * l.degree()).max(d + cur.degree() + l.degree()));
            let mut bl = Builder::new(n);
            let (_, s0) = bl.sos("sigma0", t);
            let (_, lam) = bl.sos("lambda", d);
            let (_, phi) = bl.sos("phi", d);
            let (_, mu) = bl.sos("mu", d);
            let (_, zeta) = bl.free("zeta", free_degree(t, &prev));
            let e = s0 + lam.mul_poly(&cur)? - phi.mul_poly(&l)? - mu.mul_poly(&(&cur * &l))?
                + zeta.mul_poly(&prev)?
                + l.pow(2 * s);
            bl.prog.add_identity(e)?;
            Ok(bl)
        })?;
        verdict = verdict.and(to_verdict(res));
    }
    Ok(verdict)
}

/// Forward invariance of `∩ {b_i ≥ 0}`: per-barrier conditions
/// `η_i b_i + Σ θ (L_g b_i) + α0 − α1·L_f b_i + Σ_{j≠i} λ_ij b_j + 1 ≡ 0`
/// and, per pair and input channel with product `p = (L_g b_i)_l (L_g b_j)_l`,
/// `α0 − α1·p + w_i b_i + w_j b_j + p^{2s} ≡ 0`.
pub fn verify_multi(sys: &ControlSystem, b_set: &[Polynomial], opts: &VerifyOptions) -> Result<Verdict, CbfError> {
    if b_set.len() < 2 {
        return Err(CbfError::Precondition("a barrier family needs at least two members".into()));
    }
    check_dims(sys, &b_set.iter().collect::<Vec<_>>())?;
    let n = sys.n();
    let bs: Vec<Polynomial> = b_set.iter().map(normalize).collect();
    let lgs: Vec<Vec<Polynomial>> = bs.iter().map(|b| sys.lie_g(b)).collect::<Result<_, _>>()?;

    // Cheap witnesses first, across every condition.
    if opts.falsify_first {
        for i in 0..bs.len() {
            if let Some(x) = falsify_member(sys, b_set, i, &opts.falsify) {
                return Ok(Verdict::Falsified(Witness {
                    point: x,
                    condition: format!("barrier {} fails on the boundary of the intersection", i + 1),
                }));
            }
        }
        for i in 0..bs.len() {
            for j in i + 1..bs.len() {
                for l in 0..sys.m() {
                    if (&lgs[i][l] * &lgs[j][l]).is_zero() {
                        continue;
                    }
                    if let Some(x) = falsify_pair(sys, &b_set[i], &b_set[j], l, &opts.falsify) {
                        return Ok(Verdict::Falsified(Witness {
                            point: x,
                            condition: format!(
                                "barriers {} and {} have opposite input coefficients on channel {} at a joint boundary point",
                                i + 1,
                                j + 1,
                                l + 1
                            ),
                        }));
                    }
                }
            }
        }
    }

    let mut verdict = Verdict::Verified(Evidence { records: Vec::new(), sos_degree: 0, power: 0, shrink: None });
    for i in 0..bs.len() {
        let lf = normalize(&sys.lie_f(&bs[i])?);
        let lg: Vec<Polynomial> = lgs[i].iter().filter(|p| !p.is_zero()).map(normalize).collect();
        let others: Vec<&Polynomial> = bs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b).collect();
        let odeg = others.iter().map(|b| b.degree()).max().unwrap_or(0);
        let bi = &bs[i];
        let res = escalate(opts, &format!("barrier {} condition", i + 1), false, |d, _| {
            let t = even_up((d + lf.degree()).max(d + odeg).max(bi.degree()));
            let mut bl = Builder::new(n);
            let (_, a0) = bl.sos("alpha0", t);
            let (_, a1) = bl.sos("alpha1", d);
            let (_, eta) = bl.free("eta", free_degree(t, bi));
            let mut e = a0 - a1.mul_poly(&lf)? + eta.mul_poly(bi)? + Polynomial::constant(n, 1.0);
            for (k, g) in lg.iter().enumerate() {
                let (_, th) = bl.free(&format!("theta{}", k + 1), free_degree(t, g));
                e = e + th.mul_poly(g)?;
            }
            for (k, bj) in others.iter().enumerate() {
                let (_, lam) = bl.sos(&format!("lambda{}", k + 1), d);
                e = e + lam.mul_poly(bj)?;
            }
            bl.prog.add_identity(e)?;
            Ok(bl)
        })?;
        verdict = verdict.and(to_verdict(res));
        if verdict.is_falsified() {
            return Ok(verdict);
        }
    }
    for i in 0..bs.len() {
        for j in i + 1..bs.len() {
            for l in 0..sys.m() {
                let p = normalize(&(&lgs[i][l] * &lgs[j][l]));
                if p.is_zero() {
                    continue;
                }
                let (bi, bj) = (&bs[i], &bs[j]);
                let label = format!("pair ({}, {}) channel {}", i + 1, j + 1, l + 1);
                let res = escalate(opts, &label, true, |d, s| {
                    let t = even_up((2 * s * p.degree()).max(d + p.degree()).max(bi.degree()).max(bj.degree()));
                    let mut bl = Builder::new(n);
                    let (_, a0) = bl.sos("alpha0", t);
                    let (_, a1) = bl.sos("alpha1", d);
                    let (_, wi) = bl.free("w_i", free_degree(t, bi));
                    let (_, wj) = bl.free("w_j", free_degree(t, bj));
                    let e = a0 - a1.mul_poly(&p)? + wi.mul_poly(bi)? + wj.mul_poly(bj)? + p.pow(2 * s);
                    bl.prog.add_identity(e)?;
                    Ok(bl)
                })?;
                verdict = verdict.and(to_verdict(res));
            }
        }
    }
    Ok(verdict)
}

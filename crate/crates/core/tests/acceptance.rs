//! Acceptance criteria 1–11. Each criterion prints one PASS/FAIL line; the
//! run exits nonzero unless the failing set equals the documented known failures.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cbfcert::cbf::{
    falsify, verify_cbf, verify_cbf_in_region, verify_hocbf, ControlSystem, FalsifyOptions, SafeRegion, Verdict,
    VerifyOptions,
};
use cbfcert::numkernel::{eig_sym, solve_lyapunov, DenseMatrix, SymMatrix};
use cbfcert::poly::{Monomial, Polynomial};
use cbfcert::sdp::{export_sdpa, import_sdpa, BlockKind, SdpProblem, SparseBlockMatrix};
use cbfcert::sim::{rk4_step, simulate, Barriers, Nominal, Scenario};
use cbfcert::sos::{monomial_basis, SosOutcome, SosProgram};
use cbfcert::synth::{
    check_level_containment, compact_cbf, descent_cbf, halfplane_hocbf, quadratic_form, CompactOptions, DescentParams,
};

/// Criteria expected to fail, with the reason printed alongside.
/// 3: the stated ellipse has a boundary point where `L_g b = 0` and
/// `L_f b < 0`, so it is not a barrier for the stated system.
const KNOWN_FAILURES: &[usize] = &[3];

type Outcome = Result<String, String>;

fn p(s: &str, n: usize) -> Polynomial {
    Polynomial::parse(s, n).unwrap()
}

fn dm(rows: &[&[f64]]) -> DenseMatrix {
    DenseMatrix::from_rows(rows)
}

fn unstable_linear() -> ControlSystem {
    ControlSystem::linear(&[vec![1.0, 0.0], vec![-1.0, 4.0]], &[vec![1.0], vec![0.0]]).unwrap()
}

fn pendulum() -> ControlSystem {
    ControlSystem::linear(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[vec![0.0], vec![1.0]]).unwrap()
}

fn disk() -> SafeRegion {
    SafeRegion::new(vec![p("1 - x1^2 - x2^2", 2)]).unwrap()
}

fn pendulum_box() -> SafeRegion {
    SafeRegion::boxed(&[-0.1, -0.3], &[0.15, 0.25]).unwrap()
}

fn ellipse(k: f64, center: &[f64], pm: &[[f64; 2]; 2]) -> Polynomial {
    let s = SymMatrix::from_rows(&[&pm[0], &pm[1]]);
    &Polynomial::constant(2, k) - &quadratic_form(&s, center)
}

/// Candidate with the stated constants for the unstable system.
fn unstable_hbar() -> Polynomial {
    ellipse(1.1575, &[0.1378, 0.0], &[[6.23, -26.7], [-26.7, 146.7]])
}

fn pendulum_hbar() -> Polynomial {
    ellipse(0.01, &[0.0, 0.0], &[[1.25, 0.25], [0.25, 0.25]])
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn closed_loop(f: &DenseMatrix, g: &DenseMatrix, k: &DenseMatrix) -> DenseMatrix {
    f.sub(&g.matmul(k).unwrap()).unwrap()
}

fn lyapunov_residual(fbar: &DenseMatrix, pm: &DenseMatrix) -> DenseMatrix {
    fbar.transpose().matmul(pm).unwrap().add(&pm.matmul(fbar).unwrap()).unwrap()
}

fn c1() -> Outcome {
    let fbar = closed_loop(&dm(&[&[0.0, 1.0], &[1.0, 0.0]]), &dm(&[&[0.0], &[1.0]]), &dm(&[&[3.0, 3.0]]));
    let pm = solve_lyapunov(&fbar, &SymMatrix::identity(2)).map_err(|e| e.to_string())?;
    let want = [[1.25, 0.25], [0.25, 0.25]];
    let mut err: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            err = err.max((pm.get(i, j) - want[i][j]).abs());
        }
    }
    let res = lyapunov_residual(&fbar, &pm.to_dense()).add(&DenseMatrix::identity(2)).unwrap().max_abs();
    check(err <= 1e-9 && res <= 1e-9, format!("max |P − P_ref| = {err:.2e}, residual {res:.2e}"))?;
    Ok(format!("max |P − P_ref| = {err:.2e}, residual {res:.2e}"))
}

fn c2() -> Outcome {
    let fbar = closed_loop(&dm(&[&[1.0, 0.0], &[-1.0, 4.0]]), &dm(&[&[1.0], &[0.0]]), &dm(&[&[8.0, -30.0]]));
    let pm = dm(&[&[6.23, -26.7], &[-26.7, 146.7]]);
    let m = SymMatrix::from_dense(&lyapunov_residual(&fbar, &pm), 1e-9).map_err(|e| e.to_string())?;
    let (eigs, _) = eig_sym(&m).map_err(|e| e.to_string())?;
    let max_eig = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p_min = SymMatrix::from_dense(&pm, 0.0).unwrap().min_eigenvalue().unwrap();
    let msg = format!("max eig(F̄ᵀP + PF̄) = {max_eig:.4}, min eig(P) = {p_min:.4}");
    check(max_eig < 0.0 && p_min > 0.0, msg.clone())?;
    Ok(msg)
}

fn c3() -> Outcome {
    let start = Instant::now();
    let v = verify_cbf_in_region(&unstable_linear(), &unstable_hbar(), &disk(), &VerifyOptions::default())
        .map_err(|e| e.to_string())?;
    let t = start.elapsed();
    match v {
        Verdict::Verified(e) if e.max_residual() < 1e-6 && t < Duration::from_secs(10) => {
            Ok(format!("verified, residual {:.2e}, {:.2?}", e.max_residual(), t))
        }
        Verdict::Falsified(w) => Err(format!(
            "falsified at ({:.6}, {:.6}) [{}] in {:.2?}; the stated ellipse violates the barrier condition there",
            w.point[0], w.point[1], w.condition, t
        )),
        other => Err(format!("{other:?} in {t:.2?}")),
    }
}

fn c4() -> Outcome {
    let sys = ControlSystem::linear(&[vec![0.0, 1.0], vec![0.0, 0.0]], &[vec![0.0], vec![1.0]]).unwrap();
    let b = p("1 - x1^2", 2);
    let v = verify_cbf(&sys, &b, &VerifyOptions::default()).map_err(|e| e.to_string())?;
    let w = v.witness().ok_or(format!("expected a witness, got {v:?}"))?;
    let x = &w.point;
    let lg = sys.lie_g(&b).unwrap()[0].eval(x);
    let lf = sys.lie_f(&b).unwrap().eval(x);
    let msg = format!("witness ({:.6}, {:.6}): b = {:.1e}, L_g b = {lg:.1e}, L_f b = {lf:.3e}", x[0], x[1], b.eval(x));
    check(b.eval(x).abs() <= 1e-6 && lg.abs() <= 1e-6 && lf <= -1e-6, msg.clone())?;
    Ok(msg)
}

fn sos_target(target: &Polynomial, half: u32) -> SosProgram {
    let n = target.nvars();
    let mut prog = SosProgram::new(n);
    let s = prog.new_sos(monomial_basis(n, half, false)).unwrap();
    let e = prog.expr(s).unwrap() - target.clone();
    prog.add_identity(e).unwrap();
    prog
}

fn c5() -> Outcome {
    for (name, t, half) in [("−1", p("-1", 2), 1), ("Motzkin", p("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", 2), 3)] {
        if let SosOutcome::Feasible(_) = sos_target(&t, half).solve(1e-8, 200).map_err(|e| e.to_string())? {
            return Err(format!("{name} accepted as SOS"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let basis = monomial_basis(2, 2, false);
    let (mut worst_res, mut worst_eig) = (0.0f64, f64::INFINITY);
    for case in 0..50 {
        let mut t = Polynomial::zero(2);
        for _ in 0..3 {
            let g = basis.iter().fold(Polynomial::zero(2), |acc, m: &Monomial| {
                &acc + &Polynomial::monomial(m.clone(), rng.gen_range(-1.0..1.0))
            });
            t = &t + &(&g * &g);
        }
        match sos_target(&t, 2).solve(1e-8, 200).map_err(|e| e.to_string())? {
            SosOutcome::Feasible(c) => {
                worst_res = worst_res.max(c.max_residual());
                worst_eig = worst_eig.min(c.min_gram_eig());
            }
            other => return Err(format!("random SOS target {case} rejected: {other:?}")),
        }
    }
    let msg = format!("−1 and Motzkin rejected; 50 targets, worst residual {worst_res:.2e}, min eig {worst_eig:.2e}");
    check(worst_res < 1e-6 && worst_eig >= -1e-7, msg.clone())?;
    Ok(msg)
}

fn timed_sim(sc: &Scenario) -> Result<(cbfcert::sim::Trajectory, Duration), String> {
    let start = Instant::now();
    let tr = simulate(sc).map_err(|e| e.to_string())?;
    Ok((tr, start.elapsed()))
}

fn c6() -> Outcome {
    let nominal = Nominal::Linear { gain: dm(&[&[8.0, -30.0]]), reference: vec![0.0, 0.0] };
    let mk = |x0: Vec<f64>| {
        Scenario::new(unstable_linear(), Barriers::Cbf(vec![unstable_hbar()]), disk(), nominal.clone(), x0)
    };
    let (safe, t1) = timed_sim(&mk(vec![-0.75, -0.15]))?;
    let (exit, t2) = timed_sim(&mk(vec![-0.4, -0.4]))?;
    let msg = format!(
        "inside start: min h = {:.4}, min h̄ = {:.2e}, halted = {} ({t1:.2?}); outside start: min h = {:.4} ({t2:.2?})",
        safe.min_h(),
        safe.min_b(0),
        safe.halted.is_some(),
        exit.min_h()
    );
    let fast = t1 < Duration::from_secs(5) && t2 < Duration::from_secs(5);
    check(
        safe.halted.is_none() && safe.min_h() >= 0.0 && safe.min_b(0) >= -1e-6 && exit.min_h() < 0.0 && fast,
        msg.clone(),
    )?;
    Ok(msg)
}

fn c7() -> Outcome {
    let nominal = Nominal::Linear { gain: dm(&[&[3.0, 3.0]]), reference: vec![0.0, 0.0] };
    let mk = |x0: Vec<f64>| {
        Scenario::new(pendulum(), Barriers::Cbf(vec![pendulum_hbar()]), pendulum_box(), nominal.clone(), x0)
    };
    let (safe, _) = timed_sim(&mk(vec![0.1, -0.1]))?;
    let (exit, _) = timed_sim(&mk(vec![0.13, 0.25]))?;
    let msg = format!("inside start: min h = {:.4}; outside start: min h = {:.4}", safe.min_h(), exit.min_h());
    check(safe.halted.is_none() && safe.min_h() >= 0.0 && exit.min_h() < 0.0, msg.clone())?;
    Ok(msg)
}

fn c8() -> Outcome {
    let opts = CompactOptions { enlarge: None, ..CompactOptions::default() };
    let res = compact_cbf(&pendulum(), &pendulum_box(), &[0.0, 0.0], &[0.0], &dm(&[&[3.0, 3.0]]), &SymMatrix::identity(2), &opts)
        .map_err(|e| e.to_string())?;
    let res_abs = opts.resolution * res.delta_max;
    let above = check_level_containment(&pendulum_box(), &[0.0, 0.0], &res.p, res.delta + 10.0 * res_abs, &opts.verify)
        .map_err(|e| e.to_string())?;
    let msg = format!("δ* = {:.6}, resolution {res_abs:.2e}, containment at δ* + 10·res: {above}", res.delta);
    check((0.009..=0.01).contains(&res.delta) && !above, msg.clone())?;
    Ok(msg)
}

fn c9() -> Outcome {
    let sys = unstable_linear();
    let region = disk();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sweep = FalsifyOptions { budget: Some(10_000), ..FalsifyOptions::default() };
    let mut verified = 0;
    for run in 0..10 {
        // Centered ellipses k − a x1² − 2c x1x2 − d x2²; the cross ratio c/a
        // straddles −4, below which they are barriers for this system.
        let a = rng.gen_range(1.0..6.0);
        let c = a * rng.gen_range(-6.0..-1.0);
        let d = c * c / a * rng.gen_range(1.2..3.0);
        let q = SymMatrix::from_rows(&[&[a, c], &[c, d]]);
        let k = 0.5 * q.min_eigenvalue().unwrap();
        let b0 = Polynomial::from_terms(2, [(vec![0, 0], k), (vec![2, 0], -a), (vec![1, 1], -2.0 * c), (vec![0, 2], -d)]);
        let mut params = DescentParams::new(b0);
        params.max_iters = 8;
        let tr = descent_cbf(&sys, &region, &params).map_err(|e| e.to_string())?;
        if !tr.is_monotone(1e-9) {
            return Err(format!("run {run}: rho sequence increases: {:?}", tr.rho()));
        }
        if tr.verdict.is_verified() {
            verified += 1;
            let again = verify_cbf_in_region(&sys, &tr.candidate, &region, &VerifyOptions::default())
                .map_err(|e| e.to_string())?;
            if !again.is_verified() {
                return Err(format!("run {run}: re-verification gave {again:?}"));
            }
            if let Some(x) = falsify(&sys, &tr.candidate, &sweep) {
                return Err(format!("run {run}: sweep found witness {x:?}"));
            }
        }
    }
    Ok(format!("10 runs monotone; {verified} verified outputs re-verified with clean sweeps"))
}

fn c10() -> Outcome {
    let sys = pendulum();
    let chain = halfplane_hocbf(&dm(&[&[0.0, 1.0], &[1.0, 0.0]]), &dm(&[&[0.0], &[1.0]]), &[1.0, 0.0], -0.1, &[1.0])
        .map_err(|e| e.to_string())?;
    let structural = sys.lie_g(chain.base()).unwrap().iter().all(Polynomial::is_zero);
    let region = SafeRegion::new(vec![chain.base().clone()]).unwrap();
    let o = VerifyOptions { check_chain: true, ..VerifyOptions::default() };
    let v = verify_hocbf(&sys, &chain, &region, &o).map_err(|e| e.to_string())?;
    let msg = format!("r = {}, L_g ψ_0 ≡ 0: {structural}, verdict verified: {}", chain.order(), v.is_verified());
    check(chain.order() == 2 && structural && v.is_verified(), msg.clone())?;
    Ok(msg)
}

fn random_poly(rng: &mut ChaCha8Rng, n: usize) -> Polynomial {
    let terms: Vec<(Vec<u32>, f64)> =
        (0..rng.gen_range(1..8)).map(|_| ((0..n).map(|_| rng.gen_range(0..4)).collect(), rng.gen_range(-2.0..2.0))).collect();
    Polynomial::from_terms(n, terms)
}

fn random_sdp(rng: &mut ChaCha8Rng) -> SdpProblem {
    let blocks: Vec<BlockKind> = (0..rng.gen_range(1..4))
        .map(|_| {
            let d = rng.gen_range(1..4);
            if rng.gen_bool(0.5) {
                BlockKind::Dense(d)
            } else {
                BlockKind::Diagonal(d)
            }
        })
        .collect();
    let mat = |rng: &mut ChaCha8Rng| {
        let mut m = SparseBlockMatrix::new();
        for _ in 0..rng.gen_range(0..6) {
            let blk = rng.gen_range(0..blocks.len());
            let d = blocks[blk].dim();
            let (i, j) = (rng.gen_range(0..d), rng.gen_range(0..d));
            let (i, j) = if matches!(blocks[blk], BlockKind::Diagonal(_)) { (i, i) } else { (i.min(j), i.max(j)) };
            m.add(blk, i, j, rng.gen_range(-1e3..1e3));
        }
        m
    };
    let c = mat(rng);
    let m = rng.gen_range(0..4);
    let a: Vec<SparseBlockMatrix> = (0..m).map(|_| mat(rng)).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1e6..1e6)).collect();
    SdpProblem::new(blocks.clone(), c, a, b).unwrap()
}

fn c11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = random_poly(&mut rng, 3);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for i in 0..3 {
            let exact = q.differentiate(i).unwrap().eval(&x);
            let h = 1e-5;
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (q.eval(&xp) - q.eval(&xm)) / (2.0 * h);
            worst = worst.max((exact - fd).abs() / exact.abs().max(1.0));
        }
    }
    check(worst < 1e-6, format!("derivative vs finite difference error {worst:.2e}"))?;

    let sys = ControlSystem::linear(&[vec![0.0, 1.0], vec![-1.0, -0.2]], &[vec![0.0], vec![1.0]]).unwrap();
    let run = |dt: f64| {
        let mut x = vec![1.0, 0.0];
        for _ in 0..(2.0 / dt).round() as usize {
            x = rk4_step(&sys, &x, &[0.0], dt);
        }
        x
    };
    let reference = run(0.1 / 8.0);
    let err = |x: Vec<f64>| x.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ratio = err(run(0.1)) / err(run(0.05));
    check(ratio >= 8.0, format!("RK4 error ratio {ratio:.2}"))?;

    for case in 0..10 {
        let prob = random_sdp(&mut rng);
        let back = import_sdpa(&export_sdpa(&prob)).map_err(|e| e.to_string())?;
        check(back == prob, format!("SDPA round trip differs on problem {case}"))?;
    }
    Ok(format!("derivative error {worst:.2e}; RK4 ratio {ratio:.2}; 10 SDPA round trips identical"))
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "Lyapunov reproduction", c1),
        (2, "stated Lyapunov matrix validity", c2),
        (3, "CBF verification of the stated ellipse", c3),
        (4, "falsification on the double integrator", c4),
        (5, "SOS soundness battery", c5),
        (6, "unstable system simulations", c6),
        (7, "pendulum simulations", c7),
        (8, "compact synthesis level", c8),
        (9, "descent monotonicity", c9),
        (10, "half-plane HOCBF chain", c10),
        (11, "numerics", c11),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        let start = Instant::now();
        let out = f();
        let t = start.elapsed();
        match out {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} ({t:.2?}): {detail}"),
            Err(detail) => {
                let tag = if KNOWN_FAILURES.contains(&id) { " (known)" } else { "" };
                println!("criterion {id:>2} FAIL{tag}  {name} ({t:.2?}): {detail}");
                failed.push(id);
            }
        }
    }
    if failed != KNOWN_FAILURES {
        eprintln!("unexpected acceptance results: failing {failed:?}, expected {KNOWN_FAILURES:?}");
        std::process::exit(1);
    }
    println!("acceptance: failing set matches known failures {KNOWN_FAILURES:?}");
}

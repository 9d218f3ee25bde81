use super::*;
use crate::cbf::{SafeRegion, Verdict};
use crate::numkernel::SymMatrix;

fn p(s: &str, n: usize) -> Polynomial {
    Polynomial::parse(s, n).unwrap()
}

fn unstable_linear() -> ControlSystem {
    ControlSystem::linear(&[vec![1.0, 0.0], vec![-1.0, 4.0]], &[vec![1.0], vec![0.0]]).unwrap()
}

fn pendulum() -> ControlSystem {
    ControlSystem::linear(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[vec![0.0], vec![1.0]]).unwrap()
}

fn pendulum_box() -> SafeRegion {
    SafeRegion::boxed(&[-0.1, -0.3], &[0.15, 0.25]).unwrap()
}

fn dm(rows: &[&[f64]]) -> DenseMatrix {
    DenseMatrix::from_rows(rows)
}

#[test]
fn fixed_points() {
    let sys = unstable_linear();
    let (x, u) = find_fixed_point(&sys, &[0.0, 0.0], &[0.0]).unwrap();
    assert_eq!(x, vec![0.0, 0.0]);
    assert_eq!(u, vec![0.0]);

    let (x, u) = find_fixed_point(&sys, &[0.4, 0.1], &[0.0]).unwrap();
    let r = sys.vector_field(&x, &u);
    assert!(r.iter().all(|v| v.abs() <= 1e-10));

    // ẋ = x² + u: every x is a fixed point with u = −x².
    let sq = ControlSystem::new(
        crate::poly::PolyVector::new(vec![p("x1^2", 1)]).unwrap(),
        crate::poly::PolyMatrix::new(1, 1, vec![p("1", 1)]).unwrap(),
    )
    .unwrap();
    let (x, u) = find_fixed_point(&sq, &[0.5], &[0.0]).unwrap();
    assert!((x[0] * x[0] + u[0]).abs() <= 1e-10);
    assert!(find_fixed_point(&sq, &[0.5, 0.0], &[0.0]).is_err());
}

#[test]
fn linearization() {
    let sq = ControlSystem::new(
        crate::poly::PolyVector::new(vec![p("x1^2", 1)]).unwrap(),
        crate::poly::PolyMatrix::new(1, 1, vec![p("1", 1)]).unwrap(),
    )
    .unwrap();
    let (f, g) = linearize(&sq, &[0.0], &[0.0]).unwrap();
    assert_eq!(f[(0, 0)], 0.0);
    assert_eq!(g[(0, 0)], 1.0);
    let (f, _) = linearize(&sq, &[1.5], &[0.0]).unwrap();
    assert!((f[(0, 0)] - 3.0).abs() < 1e-12);

    let (f, g) = linearize(&unstable_linear(), &[0.3, -0.7], &[0.2]).unwrap();
    assert_eq!(f, dm(&[&[1.0, 0.0], &[-1.0, 4.0]]));
    assert_eq!(g, dm(&[&[1.0], &[0.0]]));
}

#[test]
fn canonical_forms() {
    let (t, fc, gc) = canonical_form(&dm(&[&[0.0, 1.0], &[1.0, 0.0]]), &dm(&[&[0.0], &[1.0]])).unwrap();
    assert_eq!(gc, dm(&[&[1.0], &[0.0]]));
    assert!((t[(0, 1)] - 1.0).abs() < 1e-12 && (t[(1, 0)] - 1.0).abs() < 1e-12);
    assert!((fc[(1, 0)] - 1.0).abs() < 1e-12 && fc[(1, 1)].abs() < 1e-12);

    let f = dm(&[&[-3.0, -2.0], &[1.0, 0.0]]);
    let (t, fc, gc) = canonical_form(&f, &dm(&[&[1.0], &[0.0]])).unwrap();
    assert!(t.sub(&DenseMatrix::identity(2)).unwrap().max_abs() < 1e-12);
    assert!(fc.sub(&f).unwrap().max_abs() < 1e-12);
    assert_eq!(gc, dm(&[&[1.0], &[0.0]]));

    let (_, fc, gc) = canonical_form(&dm(&[&[1.0, 0.0], &[-1.0, 4.0]]), &dm(&[&[1.0], &[0.0]])).unwrap();
    assert!((gc[(0, 0)] - 1.0).abs() < 1e-12 && gc[(1, 0)].abs() < 1e-12);
    assert!((fc[(1, 0)] - 1.0).abs() < 1e-12 && fc[(1, 1)].abs() < 1e-12);
    // Trace and determinant survive the similarity.
    assert!((fc[(0, 0)] - 5.0).abs() < 1e-10);
    assert!((fc[(0, 1)] + 4.0).abs() < 1e-10);

    assert!(matches!(
        canonical_form(&DenseMatrix::identity(2), &dm(&[&[1.0], &[1.0]])),
        Err(SynthError::Uncontrollable)
    ));
}

#[test]
fn pole_placement() {
    let f = dm(&[&[1.0, 0.0], &[-1.0, 4.0]]);
    let g = dm(&[&[1.0], &[0.0]]);
    let k = place_poles(&f, &g, &[-1.0, -2.0]).unwrap();
    let cp = closed_loop_char_poly(&f, &g, &k).unwrap();
    let want = [3.0, 2.0];
    for (a, b) in cp.iter().zip(want) {
        assert!((a - b).abs() < 1e-9, "{cp:?}");
    }
    assert!(place_poles(&f, &g, &[-1.0]).is_err());
}

#[test]
fn halfplane_chains() {
    let f = dm(&[&[0.0, 1.0], &[1.0, 0.0]]);
    let g = dm(&[&[0.0], &[1.0]]);
    let chain = halfplane_hocbf(&f, &g, &[1.0, 0.0], -0.1, &[2.0]).unwrap();
    assert_eq!(chain.order(), 2);
    assert!(chain.psi()[1].max_coeff_diff(&p("x2 + 2*x1 + 0.2", 2)) < 1e-12);

    let chain = halfplane_hocbf(&f, &g, &[0.0, 1.0], 0.2, &[]).unwrap();
    assert_eq!(chain.order(), 1);
    assert_eq!(chain.gains(), &[1.0]);

    assert!(halfplane_hocbf(&f, &g, &[0.0, 0.0], 0.0, &[1.0]).is_err());
    assert!(halfplane_hocbf(&f, &g, &[1.0, 0.0], 0.0, &[]).is_err());
    assert!(halfplane_hocbf(&f, &g, &[1.0, 0.0], 0.0, &[-1.0]).is_err());
}

#[test]
fn compact_on_pendulum() {
    let sys = pendulum();
    let opts = CompactOptions { enlarge: None, ..CompactOptions::default() };
    let res = compact_cbf(&sys, &pendulum_box(), &[0.0, 0.0], &[0.0], &dm(&[&[3.0, 3.0]]), &SymMatrix::identity(2), &opts)
        .unwrap();
    let want = [[1.25, 0.25], [0.25, 0.25]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((res.p.get(i, j) - want[i][j]).abs() < 1e-9);
        }
    }
    // The binding constraint is the x1 = −0.1 face.
    assert!(res.delta <= 0.01 + 1e-9 && res.delta >= 0.01 - 2.5e-5, "delta = {}", res.delta);
    assert!(res.delta_max > res.delta);
    assert_eq!(res.k, 0.0);
}

#[test]
fn compact_rejects_bad_inputs() {
    let sys = unstable_linear();
    let region = SafeRegion::new(vec![p("1 - x1^2 - x2^2", 2)]).unwrap();
    let o = CompactOptions::default();
    let zero = DenseMatrix::zeros(1, 2);
    let n = SymMatrix::identity(2);
    assert!(matches!(compact_cbf(&sys, &region, &[0.0, 0.0], &[0.0], &zero, &n, &o), Err(SynthError::NotStabilizing)));
    assert!(compact_cbf(&sys, &region, &[0.4, 0.0], &[0.0], &zero, &n, &o).is_err());
    let bad_n = SymMatrix::from_rows(&[&[1.0, 0.0], &[0.0, -1.0]]);
    assert!(compact_cbf(&sys, &region, &[0.0, 0.0], &[0.0], &dm(&[&[8.0, -30.0]]), &bad_n, &o).is_err());
}

#[test]
fn enlarge_needs_certified_start() {
    let sys = ControlSystem::linear(&[vec![0.0, 1.0], vec![0.0, 0.0]], &[vec![0.0], vec![1.0]]).unwrap();
    let region = SafeRegion::new(vec![p("1 - x1^2", 2)]).unwrap();
    assert!(matches!(
        enlarge(&p("1 - x1^2", 2), &region, &sys, &EnlargeOptions::default()),
        Err(SynthError::Precondition(_))
    ));
}

#[test]
fn enlarge_on_fully_actuated_system() {
    // Every barrier is a CBF when g is invertible, so the full k_max is kept.
    let f = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
    let g = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let sys = ControlSystem::linear(&f, &g).unwrap();
    let region = SafeRegion::new(vec![p("1 - x1^2 - x2^2", 2)]).unwrap();
    let (k, b1) = enlarge(&p("0.5 - x1^2 - x2^2", 2), &region, &sys, &EnlargeOptions::default()).unwrap();
    assert_eq!(k, 1.0);
    assert!(b1.max_coeff_diff(&p("1.5 - 2*x1^2 - 2*x2^2", 2)) < 1e-12);
}

#[test]
fn descent_is_monotone_and_certifies() {
    let sys = unstable_linear();
    let region = SafeRegion::new(vec![p("1 - x1^2 - x2^2", 2)]).unwrap();
    let params = DescentParams::new(p("0.1 - x1^2 - x2^2", 2));
    let tr = descent_cbf(&sys, &region, &params).unwrap();
    assert!(tr.is_monotone(1e-9), "{:?}", tr.rho());
    assert!(!tr.steps.is_empty());
    match tr.termination {
        Termination::RhoNonPositive => assert!(!tr.verdict.is_falsified()),
        _ => assert!(matches!(tr.verdict, Verdict::Unknown(_))),
    }
}

#[test]
fn descent_budget_of_one() {
    let sys = unstable_linear();
    let region = SafeRegion::new(vec![p("1 - x1^2 - x2^2", 2)]).unwrap();
    let mut params = DescentParams::new(p("0.5 - x1^2 - 3*x2^2", 2));
    params.max_iters = 1;
    params.eps = 1e-12;
    let tr = descent_cbf(&sys, &region, &params).unwrap();
    assert_eq!(tr.iterations, 1);
    assert!(tr.steps.len() <= 2);
    if tr.termination != Termination::RhoNonPositive {
        assert!(matches!(tr.verdict, Verdict::Unknown(_)));
    }
    params.max_iters = 0;
    assert!(descent_cbf(&sys, &region, &params).is_err());
}

#[test]
fn descent_on_pendulum_chain() {
    let sys = pendulum();
    let chain = HocbfChain::new(&sys, &p("x1 + 0.1", 2), &[1.0, 1.0]).unwrap();
    let region = SafeRegion::new(vec![p("x1 + 0.1", 2)]).unwrap();
    let mut params = DescentParams::new(chain.base().clone());
    params.max_iters = 3;
    let tr = descent_hocbf(&sys, &region, &chain, &params).unwrap();
    assert!(tr.is_monotone(1e-9));
    assert!(!tr.verdict.is_falsified());
}

//! Sampling oracle for the violation sets: grid seeds, Newton projection
//! onto an equality manifold, projected descent on the worst inequality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numkernel::{solve_linear, DenseMatrix};
use crate::poly::{PolyVector, Polynomial};

use super::{ControlSystem, HocbfChain};

/// Acceptance band for equalities at a witness.
pub const WITNESS_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FalsifyOptions {
    /// Search box per axis.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Total grid samples; `None` means 41 points per axis.
    pub budget: Option<usize>,
    /// Number of seeds refined by local descent.
    pub refinements: usize,
    pub seed: u64,
}

impl Default for FalsifyOptions {
    fn default() -> Self {
        Self { lower: Vec::new(), upper: Vec::new(), budget: None, refinements: 50, seed: 7 }
    }
}

impl FalsifyOptions {
    /// Box `[lo, hi]^n`, or the default `[−2, 2]^n` when no box is set.
    fn bounds(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        if self.lower.len() == n && self.upper.len() == n {
            (self.lower.clone(), self.upper.clone())
        } else {
            (vec![-2.0; n], vec![2.0; n])
        }
    }

    fn per_axis(&self, n: usize) -> usize {
        match self.budget {
            None => 41,
            Some(b) => {
                let k = (b.max(1) as f64).powf(1.0 / n as f64);
                ((k + 1e-9).floor() as usize).max(2)
            }
        }
    }
}

/// Find `x` with `e_k(x) = 0` for all equalities and `φ_k(x) ≤ −margin_k`
/// for all objectives.
struct Search {
    n: usize,
    eqs: Vec<(Polynomial, PolyVector)>,
    objs: Vec<(Polynomial, PolyVector, f64)>,
}

impl Search {
    fn new(n: usize, eqs: Vec<Polynomial>, objs: Vec<(Polynomial, f64)>) -> Self {
        let eqs = eqs.into_iter().filter(|p| !p.is_zero()).map(|p| {
            let g = p.gradient();
            (p, g)
        });
        let objs = objs.into_iter().map(|(p, m)| {
            let g = p.gradient();
            (p, g, m)
        });
        Self { n, eqs: eqs.collect(), objs: objs.collect() }
    }

    fn residual(&self, x: &[f64]) -> f64 {
        self.eqs.iter().map(|(p, _)| p.eval(x).abs()).fold(0.0, f64::max)
    }

    /// Worst objective value shifted by its margin, with its index.
    fn worst(&self, x: &[f64]) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, (p, _, m)) in self.objs.iter().enumerate() {
            let v = p.eval(x) + m;
            if v > best.0 {
                best = (v, k);
            }
        }
        best
    }

    fn accepts(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite()) && self.residual(x) <= WITNESS_TOL && self.worst(x).0 <= 0.0
    }

    fn merit(&self, x: &[f64]) -> f64 {
        let dist: f64 = self
            .eqs
            .iter()
            .map(|(p, g)| {
                let gn: f64 = g.eval(x).iter().map(|v| v * v).sum();
                let v = p.eval(x);
                v * v / (gn + 1e-12)
            })
            .sum();
        dist + 1e-3 * self.worst(x).0.max(0.0)
    }

    fn jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.eqs.iter().map(|(_, g)| g.eval(x)).collect()
    }

    /// Solves `(J Jᵀ + λI) z = r` and returns `Jᵀ z`.
    fn min_norm(&self, j: &[Vec<f64>], r: &[f64]) -> Option<Vec<f64>> {
        let k = j.len();
        if k == 0 {
            return Some(vec![0.0; self.n]);
        }
        let mut jjt = DenseMatrix::zeros(k, k);
        let mut tr: f64 = 0.0;
        for a in 0..k {
            for b in 0..k {
                jjt[(a, b)] = j[a].iter().zip(&j[b]).map(|(u, v)| u * v).sum();
            }
            tr += jjt[(a, a)];
        }
        let lam = 1e-12 * tr.max(1e-300);
        for a in 0..k {
            jjt[(a, a)] += lam;
        }
        let z = solve_linear(&jjt, r).ok()?;
        let mut out = vec![0.0; self.n];
        for (row, za) in j.iter().zip(&z) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v * za;
            }
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    /// Gauss–Newton with minimum-norm steps onto the equality manifold.
    fn project(&self, mut x: Vec<f64>) -> Option<Vec<f64>> {
        for _ in 0..60 {
            let r: Vec<f64> = self.eqs.iter().map(|(p, _)| p.eval(&x)).collect();
            if r.iter().all(|v| v.abs() <= 1e-12) {
                return Some(x);
            }
            let step = self.min_norm(&self.jacobian(&x), &r)?;
            for (xi, s) in x.iter_mut().zip(&step) {
                *xi -= s;
            }
            if x.iter().any(|v| !v.is_finite() || v.abs() > 1e8) {
                return None;
            }
        }
        (self.residual(&x) <= WITNESS_TOL).then_some(x)
    }

    /// Projected descent on the worst objective along the manifold.
    fn refine(&self, seed: Vec<f64>) -> Option<Vec<f64>> {
        let mut x = self.project(seed)?;
        for _ in 0..80 {
            if self.accepts(&x) {
                return Some(x);
            }
            let (cur, k) = self.worst(&x);
            let grad = self.objs[k].1.eval(&x);
            let j = self.jacobian(&x);
            let jg: Vec<f64> = j.iter().map(|row| row.iter().zip(&grad).map(|(a, b)| a * b).sum()).collect();
            let back = self.min_norm(&j, &jg)?;
            let d: Vec<f64> = grad.iter().zip(&back).map(|(g, b)| -(g - b)).collect();
            let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dn < 1e-12 {
                break;
            }
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut t = 0.25 * (1.0 + xn) / dn;
            let mut moved = false;
            for _ in 0..30 {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                if let Some(y) = self.project(trial) {
                    if self.worst(&y).0 < cur {
                        x = y;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        self.accepts(&x).then_some(x)
    }

    fn run(&self, opts: &FalsifyOptions) -> Option<Vec<f64>> {
        let n = self.n;
        let (lo, hi) = opts.bounds(n);
        let k = opts.per_axis(n);
        let cell: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / (k - 1) as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let total = k.checked_pow(n as u32).unwrap_or(usize::MAX).min(1 << 22);
        let mut seeds: Vec<(f64, Vec<f64>)> = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    let j = if k > 2 { rng.gen_range(-0.25..0.25) * cell[i] } else { 0.0 };
                    (lo[i] + idx[i] as f64 * cell[i] + j).clamp(lo[i], hi[i])
                })
                .collect();
            if self.accepts(&x) {
                return Some(x);
            }
            let m = self.merit(&x);
            if m.is_finite() {
                seeds.push((m, x));
            }
            for d in idx.iter_mut() {
                *d += 1;
                if *d < k {
                    break;
                }
                *d = 0;
            }
        }
        seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Spread the refined seeds out so one basin does not take them all.
        let sep: f64 = 1.5;
        let mut chosen: Vec<Vec<f64>> = Vec::new();
        for (_, x) in &seeds {
            if chosen.len() >= opts.refinements {
                break;
            }
            let far = chosen.iter().all(|c| {
                c.iter().zip(x).zip(&cell).any(|((a, b), w)| (a - b).abs() > sep * w)
            });
            if far {
                chosen.push(x.clone());
            }
        }
        chosen.into_iter().find_map(|x| self.refine(x))
    }
}

/// Searches for `x` with `b(x) = 0`, `L_g b(x) = 0`, `L_f b(x) ≤ −1e−6`.
pub fn falsify(sys: &ControlSystem, b: &Polynomial, opts: &FalsifyOptions) -> Option<Vec<f64>> {
    let lf = sys.lie_f(b).ok()?;
    let mut eqs = vec![b.clone()];
    eqs.extend(sys.lie_g(b).ok()?);
    Search::new(sys.n(), eqs, vec![(lf, WITNESS_TOL)]).run(opts)
}

/// Searches for `x` with `h(x) = 0` and `b_i(x) ≥ 0` for every `i`.
pub fn falsify_containment(b_set: &[Polynomial], h: &Polynomial, opts: &FalsifyOptions) -> Option<Vec<f64>> {
    let objs = b_set.iter().map(|b| (b.scale(-1.0), -1e-9)).collect();
    Search::new(h.nvars(), vec![h.clone()], objs).run(opts)
}

/// Searches for `x` with `b_i(x) = b_j(x) = 0` and
/// `(L_g b_i)_l (L_g b_j)_l ≤ −1e−6`.
pub fn falsify_pair(
    sys: &ControlSystem,
    bi: &Polynomial,
    bj: &Polynomial,
    channel: usize,
    opts: &FalsifyOptions,
) -> Option<Vec<f64>> {
    let gi = sys.lie_g(bi).ok()?;
    let gj = sys.lie_g(bj).ok()?;
    let prod = gi.get(channel)? * gj.get(channel)?;
    Search::new(sys.n(), vec![bi.clone(), bj.clone()], vec![(prod, WITNESS_TOL)]).run(opts)
}

/// Searches for a point of the set certified empty for barrier `i` of a
/// multi-barrier family: `b_i = 0`, `L_g b_i = 0`, `L_f b_i ≤ −1e−6` and
/// `b_j ≥ 0` for the others.
pub(crate) fn falsify_member(
    sys: &ControlSystem,
    b_set: &[Polynomial],
    i: usize,
    opts: &FalsifyOptions,
) -> Option<Vec<f64>> {
    let b = &b_set[i];
    let mut eqs = vec![b.clone()];
    eqs.extend(sys.lie_g(b).ok()?);
    let mut objs = vec![(sys.lie_f(b).ok()?, WITNESS_TOL)];
    for (j, bj) in b_set.iter().enumerate() {
        if j != i {
            objs.push((bj.scale(-1.0), -1e-9));
        }
    }
    Search::new(sys.n(), eqs, objs).run(opts)
}

/// Searches for `x` with `ψ_{r−1} = 0`, `L_g ψ_{r−1} = 0`, the drift part
/// of `ψ_r` at most `−1e−6`, and `ψ_i ≥ 0` for `i < r−1`.
pub fn falsify_hocbf(sys: &ControlSystem, chain: &HocbfChain, opts: &FalsifyOptions) -> Option<Vec<f64>> {
    let r = chain.order();
    let last = &chain.psi()[r - 1];
    let mut eqs = vec![last.clone()];
    eqs.extend(chain.top_input().iter().cloned());
    let mut objs = vec![(chain.top_drift().clone(), WITNESS_TOL)];
    for p in &chain.psi()[..r - 1] {
        objs.push((p.scale(-1.0), -1e-9));
    }
    Search::new(sys.n(), eqs, objs).run(opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Polynomial {
        Polynomial::parse(s, 2).unwrap()
    }

    fn double_integrator() -> ControlSystem {
        ControlSystem::linear(&[vec![0.0, 1.0], vec![0.0, 0.0]], &[vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn double_integrator_witness_satisfies_conditions() {
        let sys = double_integrator();
        let b = p("1 - x1^2");
        let x = falsify(&sys, &b, &FalsifyOptions::default()).expect("witness");
        assert!(b.eval(&x).abs() <= 1e-6);
        assert!(sys.lie_g(&b).unwrap()[0].eval(&x).abs() <= 1e-6);
        assert!(sys.lie_f(&b).unwrap().eval(&x) <= -1e-6);
        assert!(x[0] * x[1] > 0.0);
    }

    #[test]
    fn fully_actuated_has_no_witness() {
        let sys = ControlSystem::linear(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(falsify(&sys, &p("1 - x1^2 - x2^2"), &FalsifyOptions::default()).is_none());
    }

    #[test]
    fn containment_witness_on_boundary() {
        let x = falsify_containment(&[p("2 - x1^2 - x2^2")], &p("1 - x1^2 - x2^2"), &FalsifyOptions::default())
            .expect("witness");
        assert!((x[0] * x[0] + x[1] * x[1] - 1.0).abs() <= 1e-6);
        assert!(falsify_containment(&[p("0.5 - x1^2 - x2^2")], &p("1 - x1^2 - x2^2"), &FalsifyOptions::default())
            .is_none());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let sys = double_integrator();
        let b = p("1 - x1^2");
        let o = FalsifyOptions { budget: Some(400), ..FalsifyOptions::default() };
        assert_eq!(falsify(&sys, &b, &o), falsify(&sys, &b, &o));
    }
}

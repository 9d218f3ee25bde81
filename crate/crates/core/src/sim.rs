//! Closed-loop simulation under a min-norm barrier filter.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::cbf::{ControlSystem, HocbfChain, SafeRegion};
use crate::numkernel::{solve_linear, DenseMatrix};
use crate::poly::Polynomial;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("filter constraints are infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Barrier constraints imposed by the filter.
#[derive(Clone, Debug, PartialEq)]
pub enum Barriers {
    /// One row `L_g b·u ≥ −κ b − L_f b` per barrier.
    Cbf(Vec<Polynomial>),
    /// One row `L_g ψ_{r−1}·u ≥ −(L_f ψ_{r−1} + κ_r ψ_{r−1})`.
    Hocbf(HocbfChain),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Nominal {
    Zero,
    /// `u = −K (x − reference)`.
    Linear { gain: DenseMatrix, reference: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub system: ControlSystem,
    pub barriers: Barriers,
    pub region: SafeRegion,
    pub nominal: Nominal,
    pub x0: Vec<f64>,
    /// Horizon in seconds.
    pub horizon: f64,
    pub dt: f64,
    /// Class-K gain for plain CBF rows.
    pub kappa: f64,
}

impl Scenario {
    /// Scenario with horizon 10 s, step 1e−3 s and gain 1.
    pub fn new(system: ControlSystem, barriers: Barriers, region: SafeRegion, nominal: Nominal, x0: Vec<f64>) -> Self {
        Self { system, barriers, region, nominal, x0, horizon: 10.0, dt: 1e-3, kappa: 1.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.system.n();
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.horizon > 0.0 && self.dt > 0.0 && self.dt <= self.horizon) {
            return bad(format!("need 0 < dt ≤ T, got dt = {}, T = {}", self.dt, self.horizon));
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive".into());
        }
        if self.x0.len() != n || self.region.nvars() != n {
            return bad("initial state or region dimension differs from the system".into());
        }
        match &self.barriers {
            Barriers::Cbf(bs) if bs.iter().any(|b| b.nvars() != n) => return bad("barrier dimension mismatch".into()),
            Barriers::Hocbf(c) if c.base().nvars() != n => return bad("chain dimension mismatch".into()),
            _ => {}
        }
        if let Nominal::Linear { gain, reference } = &self.nominal {
            if gain.rows() != self.system.m() || gain.cols() != n || reference.len() != n {
                return bad("nominal gain or reference has the wrong size".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Region constraint values per sample.
    pub h_values: Vec<Vec<f64>>,
    /// Barrier values per sample (`ψ_0..ψ_{r−1}` for chains).
    pub b_values: Vec<Vec<f64>>,
    /// Set when the filter became infeasible; the trajectory stops there.
    pub halted: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `min_t min_i h_i(x(t))`.
    pub fn min_h(&self) -> f64 {
        self.h_values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// `min_t b_j(x(t))` for barrier column `j`.
    pub fn min_b(&self, j: usize) -> f64 {
        self.b_values.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min)
    }
}

const FEAS_TOL: f64 = 1e-12;

/// `argmin ‖u − u_nom‖²` subject to `a_j·u ≥ c_j`.
///
/// The objective is strictly convex, so any KKT point is the optimum. Active
/// sets are enumerated by increasing size (at most `dim u` independent rows);
/// the first set whose projection is feasible with nonnegative multipliers
/// wins. Filter rows are few, which keeps the enumeration small.
pub fn qp_filter(u_nom: &[f64], rows: &[(Vec<f64>, f64)]) -> Result<Vec<f64>, SimError> {
    let m = u_nom.len();
    let mut live: Vec<(&[f64], f64)> = Vec::new();
    for (a, c) in rows {
        if a.len() != m || a.iter().any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(SimError::Infeasible("constraint row has the wrong size or is not finite".into()));
        }
        let an = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if an <= 1e-14 {
            if *c > 1e-12 {
                return Err(SimError::Infeasible(format!("zero row with bound {c:e}")));
            }
            continue;
        }
        live.push((a, *c));
    }
    if live.len() > 24 {
        return Err(SimError::Infeasible(format!("{} filter rows exceed the supported 24", live.len())));
    }
    let dot = |a: &[f64], u: &[f64]| a.iter().zip(u).map(|(x, y)| x * y).sum::<f64>();
    let feasible = |u: &[f64]| live.iter().all(|(a, c)| dot(a, u) >= c - FEAS_TOL * (1.0 + c.abs()));
    if feasible(u_nom) {
        return Ok(u_nom.to_vec());
    }
    let mut subsets: Vec<u32> = (1..(1u32 << live.len())).filter(|s| s.count_ones() as usize <= m).collect();
    subsets.sort_by_key(|s| (s.count_ones(), *s));
    for s in subsets {
        let work: Vec<usize> = (0..live.len()).filter(|i| s & (1 << i) != 0).collect();
        let k = work.len();
        let mut gram = DenseMatrix::zeros(k, k);
        let mut rhs = vec![0.0; k];
        for (p, &i) in work.iter().enumerate() {
            for (q, &j) in work.iter().enumerate() {
                gram[(p, q)] = dot(live[i].0, live[j].0);
            }
            rhs[p] = live[i].1 - dot(live[i].0, u_nom);
        }
        if gram.rank(1e-12) < k {
            continue;
        }
        let Ok(lam) = solve_linear(&gram, &rhs) else { continue };
        if lam.iter().any(|l| *l < -1e-12) {
            continue;
        }
        let mut u = u_nom.to_vec();
        for (p, &i) in work.iter().enumerate() {
            for (uj, aj) in u.iter_mut().zip(live[i].0) {
                *uj += lam[p] * aj;
            }
        }
        if feasible(&u) {
            return Ok(u);
        }
    }
    Err(SimError::Infeasible("no input satisfies every filter row".into()))
}

/// One RK4 step of `ẋ = f(x) + g(x) u` with `u` held constant.
pub fn rk4_step(sys: &ControlSystem, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
    let add = |x: &[f64], k: &[f64], s: f64| x.iter().zip(k).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    let k1 = sys.vector_field(x, u);
    let k2 = sys.vector_field(&add(x, &k1, dt / 2.0), u);
    let k3 = sys.vector_field(&add(x, &k2, dt / 2.0), u);
    let k4 = sys.vector_field(&add(x, &k3, dt), u);
    (0..x.len()).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

struct RowSource {
    /// `(drift part, input coefficients, value)` per filter row.
    rows: Vec<(Polynomial, Vec<Polynomial>)>,
    tracked: Vec<Polynomial>,
}

fn row_source(sc: &Scenario) -> Result<RowSource, SimError> {
    let sys = &sc.system;
    let err = |e: crate::poly::PolyError| SimError::InvalidScenario(e.to_string());
    Ok(match &sc.barriers {
        Barriers::Cbf(bs) => {
            let mut rows = Vec::new();
            for b in bs {
                let drift = &sys.lie_f(b).map_err(err)? + &b.scale(sc.kappa);
                rows.push((drift, sys.lie_g(b).map_err(err)?));
            }
            RowSource { rows, tracked: bs.clone() }
        }
        Barriers::Hocbf(c) => RowSource {
            rows: vec![(c.top_drift().clone(), c.top_input().to_vec())],
            tracked: c.psi().to_vec(),
        },
    })
}

fn nominal(sc: &Scenario, x: &[f64]) -> Vec<f64> {
    match &sc.nominal {
        Nominal::Zero => vec![0.0; sc.system.m()],
        Nominal::Linear { gain, reference } => {
            let d: Vec<f64> = x.iter().zip(reference).map(|(a, b)| a - b).collect();
            (0..gain.rows()).map(|i| -gain.row(i).iter().zip(&d).map(|(k, v)| k * v).sum::<f64>()).collect()
        }
    }
}

/// Fixed-step RK4 under the filtered control, held over each step.
pub fn simulate(sc: &Scenario) -> Result<Trajectory, SimError> {
    sc.validate()?;
    let src = row_source(sc)?;
    let steps = (sc.horizon / sc.dt).round() as usize;
    let mut tr = Trajectory::default();
    let mut x = sc.x0.clone();
    for k in 0..=steps {
        let rows: Vec<(Vec<f64>, f64)> =
            src.rows.iter().map(|(d, g)| (g.iter().map(|p| p.eval(&x)).collect(), -d.eval(&x))).collect();
        let u = match qp_filter(&nominal(sc, &x), &rows) {
            Ok(u) => u,
            Err(e) => {
                tr.halted = Some(format!("t = {:.6}: {e}", k as f64 * sc.dt));
                break;
            }
        };
        tr.times.push(k as f64 * sc.dt);
        tr.h_values.push(sc.region.constraints().iter().map(|h| h.eval(&x)).collect());
        tr.b_values.push(src.tracked.iter().map(|b| b.eval(&x)).collect());
        tr.states.push(x.clone());
        tr.inputs.push(u.clone());
        if k < steps {
            x = rk4_step(&sc.system, &x, &u, sc.dt);
            if x.iter().any(|v| !v.is_finite()) {
                tr.halted = Some(format!("t = {:.6}: state diverged", (k + 1) as f64 * sc.dt));
                break;
            }
        }
    }
    Ok(tr)
}

/// Column names `t,x1..,u1..,h_1..,b_1..`.
pub fn csv_header(n: usize, m: usize, p: usize, q: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=m).map(|i| format!("u{i}")));
    cols.extend((1..=p).map(|i| format!("h_{i}")));
    cols.extend((1..=q).map(|i| format!("b_{i}")));
    cols.join(",")
}

/// Writes the trajectory with 9 significant digits per value.
pub fn write_csv(tr: &Trajectory, dims: (usize, usize, usize, usize), path: &Path) -> Result<(), SimError> {
    let (n, m, p, q) = dims;
    let mut out = csv_header(n, m, p, q);
    out.push('\n');
    for k in 0..tr.len() {
        let vals = std::iter::once(&tr.times[k])
            .chain(&tr.states[k])
            .chain(&tr.inputs[k])
            .chain(&tr.h_values[k])
            .chain(&tr.b_values[k]);
        let mut first = true;
        for v in vals {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{v:.8e}").expect("writing to a string");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Column sizes `(n, m, p, q)` of a scenario's CSV.
pub fn csv_dims(sc: &Scenario) -> (usize, usize, usize, usize) {
    let q = match &sc.barriers {
        Barriers::Cbf(bs) => bs.len(),
        Barriers::Hocbf(c) => c.order(),
    };
    (sc.system.n(), sc.system.m(), sc.region.constraints().len(), q)
}

/// Header names and numeric rows of a trajectory CSV.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), SimError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or(SimError::Csv { line: 1, msg: "missing header".into() })?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| SimError::Csv { line: i + 2, msg: e.to_string() }))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != header.len() {
            return Err(SimError::Csv { line: i + 2, msg: format!("{} fields, header has {}", row.len(), header.len()) });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

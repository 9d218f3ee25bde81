//! Problem files: TOML-compatible sections `[system]`, `[safety]`,
//! `[candidate]`, `[scenario]` and `[options]`. Every dimension is checked
//! here so later stages never see inconsistent sizes.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use cbfcert::cbf::{ControlSystem, FalsifyOptions, SafeRegion, VerifyOptions};
use cbfcert::numkernel::{DenseMatrix, SymMatrix};
use cbfcert::poly::{PolyMatrix, PolyVector, Polynomial};
use cbfcert::synth::{CompactOptions, EnlargeOptions};
use serde::Deserialize;
use toml::Spanned;

#[derive(Clone, Debug, PartialEq)]
pub struct LoadError {
    pub section: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = &self.section {
            write!(f, "[{s}] ")?;
        }
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for LoadError {}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub x0: Option<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    pub kappa: f64,
    /// State-feedback gain `K` (m×n) for the nominal input `−K(x − x_ref)`.
    pub gain: Option<DenseMatrix>,
    pub x_ref: Vec<f64>,
    pub u_ref: Vec<f64>,
    /// Lyapunov weight `N`.
    pub weight: SymMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Options {
    pub verify: VerifyOptions,
    pub descent_iters: usize,
    pub descent_eps: f64,
    pub multiplier_degree: u32,
    pub lambda_degree: Option<u32>,
    pub compact: CompactOptions,
}

impl Options {
    fn defaults() -> Self {
        Self {
            verify: VerifyOptions::default(),
            descent_iters: 20,
            descent_eps: 1e-4,
            multiplier_degree: 2,
            lambda_degree: None,
            compact: CompactOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub system: ControlSystem,
    pub region: SafeRegion,
    pub candidates: Vec<Polynomial>,
    /// HOCBF gains; present when the candidate is a chain.
    pub gains: Option<Vec<f64>>,
    pub scenario: Option<Scenario>,
    pub options: Options,
}

impl Problem {
    pub fn n(&self) -> usize {
        self.system.n()
    }
}

type List<T> = Spanned<Vec<T>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    system: Spanned<RawSystem>,
    safety: Spanned<RawSafety>,
    candidate: Option<Spanned<RawCandidate>>,
    scenario: Option<Spanned<RawScenario>>,
    options: Option<Spanned<RawOptions>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n: Spanned<usize>,
    m: Spanned<usize>,
    f: List<Spanned<String>>,
    g: List<List<Spanned<String>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSafety {
    h: Option<List<Spanned<String>>>,
    lower: Option<List<f64>>,
    upper: Option<List<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCandidate {
    b: List<Spanned<String>>,
    gains: Option<List<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    x0: Option<List<f64>>,
    #[serde(rename = "T")]
    horizon: Option<Spanned<f64>>,
    dt: Option<Spanned<f64>>,
    kappa: Option<Spanned<f64>>,
    #[serde(rename = "K")]
    gain: Option<List<List<f64>>>,
    x_ref: Option<List<f64>>,
    u_ref: Option<List<f64>>,
    #[serde(rename = "N")]
    weight: Option<List<List<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptions {
    degrees: Option<List<u32>>,
    powers: Option<List<u32>>,
    shrink: Option<Spanned<f64>>,
    tol: Option<Spanned<f64>>,
    sdp_iters: Option<Spanned<usize>>,
    cert_tol: Option<Spanned<f64>>,
    falsify: Option<bool>,
    check_chain: Option<bool>,
    seed: Option<u64>,
    budget: Option<Spanned<usize>>,
    refinements: Option<usize>,
    lower: Option<List<f64>>,
    upper: Option<List<f64>>,
    max_iter: Option<Spanned<usize>>,
    eps: Option<Spanned<f64>>,
    multiplier_degree: Option<u32>,
    lambda_degree: Option<u32>,
    resolution: Option<Spanned<f64>>,
    seeds_per_axis: Option<Spanned<usize>>,
    enlarge: Option<bool>,
    k_max: Option<Spanned<f64>>,
}

/// Maps byte offsets to 1-based line numbers and the enclosing section.
struct Source<'a> {
    text: &'a str,
}

impl Source<'_> {
    fn line(&self, offset: usize) -> usize {
        let end = offset.min(self.text.len());
        self.text.as_bytes()[..end].iter().filter(|&&c| c == b'\n').count() + 1
    }

    fn section_at(&self, offset: usize) -> Option<String> {
        let end = offset.min(self.text.len());
        self.text[..end].lines().rev().find_map(|l| {
            let t = l.trim();
            (t.starts_with('[') && !t.starts_with("[[")).then(|| t.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string())
        })
    }
}

/// Error builder bound to one section.
struct Ctx<'a> {
    src: &'a Source<'a>,
    section: &'static str,
}

impl Ctx<'_> {
    fn err(&self, span: &Range<usize>, message: impl Into<String>) -> LoadError {
        LoadError { section: Some(self.section.into()), line: Some(self.src.line(span.start)), message: message.into() }
    }

    fn check(&self, ok: bool, span: &Range<usize>, message: impl Into<String>) -> Result<(), LoadError> {
        if ok {
            Ok(())
        } else {
            Err(self.err(span, message))
        }
    }

    fn poly(&self, s: &Spanned<String>, n: usize, what: &str) -> Result<Polynomial, LoadError> {
        Polynomial::parse(s.get_ref(), n).map_err(|e| self.err(&s.span(), format!("{what} = \"{}\": {e}", s.get_ref())))
    }

    fn vector(&self, v: &List<f64>, len: usize, what: &str) -> Result<Vec<f64>, LoadError> {
        self.check(v.get_ref().len() == len, &v.span(), format!("{what} needs {len} entries, got {}", v.get_ref().len()))?;
        self.check(v.get_ref().iter().all(|x| x.is_finite()), &v.span(), format!("{what} has a non-finite entry"))?;
        Ok(v.get_ref().clone())
    }

    fn matrix(&self, v: &List<List<f64>>, rows: usize, cols: usize, what: &str) -> Result<DenseMatrix, LoadError> {
        self.check(v.get_ref().len() == rows, &v.span(), format!("{what} needs {rows} rows, got {}", v.get_ref().len()))?;
        let mut m = DenseMatrix::zeros(rows, cols);
        for (i, row) in v.get_ref().iter().enumerate() {
            let r = self.vector(row, cols, &format!("{what} row {}", i + 1))?;
            for (j, x) in r.into_iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        Ok(m)
    }

    fn positive(&self, v: &Spanned<f64>, what: &str) -> Result<f64, LoadError> {
        let x = *v.get_ref();
        self.check(x.is_finite() && x > 0.0, &v.span(), format!("{what} must be positive, got {x}"))?;
        Ok(x)
    }

    fn bounds(&self, lo: &List<f64>, hi: &List<f64>, n: usize) -> Result<(Vec<f64>, Vec<f64>), LoadError> {
        let l = self.vector(lo, n, "lower")?;
        let u = self.vector(hi, n, "upper")?;
        self.check(l.iter().zip(&u).all(|(a, b)| a < b), &lo.span(), "lower must be below upper in every coordinate")?;
        Ok((l, u))
    }
}

pub fn load(path: &Path) -> Result<Problem, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadError {
        section: None,
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Problem, LoadError> {
    let src = Source { text };
    let raw: RawFile = toml::from_str(text).map_err(|e| {
        let (section, line) = match e.span() {
            Some(s) => (src.section_at(s.start), Some(src.line(s.start))),
            None => (None, None),
        };
        LoadError { section, line, message: e.message().trim().to_string() }
    })?;

    let (system, n, m) = build_system(&Ctx { src: &src, section: "system" }, raw.system.get_ref())?;
    let region = build_region(&Ctx { src: &src, section: "safety" }, &raw.safety, n)?;

    let cx = Ctx { src: &src, section: "candidate" };
    let (candidates, gains) = match &raw.candidate {
        None => (Vec::new(), None),
        Some(c) => {
            let c_ref = c.get_ref();
            cx.check(!c_ref.b.get_ref().is_empty(), &c_ref.b.span(), "b must list at least one polynomial")?;
            let bs = c_ref
                .b
                .get_ref()
                .iter()
                .enumerate()
                .map(|(i, s)| cx.poly(s, n, &format!("b[{}]", i + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            let gains = match &c_ref.gains {
                None => None,
                Some(g) => {
                    cx.check(bs.len() == 1, &g.span(), "gains describe a chain built from a single b")?;
                    cx.check(!g.get_ref().is_empty(), &g.span(), "gains must be nonempty")?;
                    cx.check(
                        g.get_ref().iter().all(|k| k.is_finite() && *k > 0.0),
                        &g.span(),
                        "gains must be positive",
                    )?;
                    Some(g.get_ref().clone())
                }
            };
            (bs, gains)
        }
    };

    let scenario = match &raw.scenario {
        None => None,
        Some(s) => Some(build_scenario(&Ctx { src: &src, section: "scenario" }, s.get_ref(), n, m)?),
    };

    let mut options = Options::defaults();
    if let Some(o) = &raw.options {
        apply_options(&Ctx { src: &src, section: "options" }, o.get_ref(), n, &mut options)?;
    }

    Ok(Problem { system, region, candidates, gains, scenario, options })
}

fn build_system(cx: &Ctx, raw: &RawSystem) -> Result<(ControlSystem, usize, usize), LoadError> {
    let n = *raw.n.get_ref();
    let m = *raw.m.get_ref();
    cx.check(n >= 1, &raw.n.span(), "n must be at least 1")?;
    cx.check(m >= 1, &raw.m.span(), "m must be at least 1")?;
    let f = raw.f.get_ref();
    cx.check(f.len() == n, &raw.f.span(), format!("f needs n = {n} entries, got {}", f.len()))?;
    let g = raw.g.get_ref();
    cx.check(g.len() == n, &raw.g.span(), format!("g needs n = {n} rows, got {}", g.len()))?;
    let fs = f.iter().enumerate().map(|(i, s)| cx.poly(s, n, &format!("f[{}]", i + 1))).collect::<Result<Vec<_>, _>>()?;
    let mut gs = Vec::with_capacity(n * m);
    for (i, row) in g.iter().enumerate() {
        cx.check(
            row.get_ref().len() == m,
            &row.span(),
            format!("g row {} needs m = {m} entries, got {}", i + 1, row.get_ref().len()),
        )?;
        for (j, s) in row.get_ref().iter().enumerate() {
            gs.push(cx.poly(s, n, &format!("g[{}][{}]", i + 1, j + 1))?);
        }
    }
    let sys = PolyVector::new(fs)
        .and_then(|fv| ControlSystem::new(fv, PolyMatrix::new(n, m, gs)?))
        .map_err(|e| cx.err(&raw.f.span(), e.to_string()))?;
    Ok((sys, n, m))
}

fn build_region(cx: &Ctx, raw: &Spanned<RawSafety>, n: usize) -> Result<SafeRegion, LoadError> {
    let r = raw.get_ref();
    let region = match (&r.h, &r.lower, &r.upper) {
        (Some(h), None, None) => {
            cx.check(!h.get_ref().is_empty(), &h.span(), "h must list at least one polynomial")?;
            let hs = h
                .get_ref()
                .iter()
                .enumerate()
                .map(|(i, s)| cx.poly(s, n, &format!("h[{}]", i + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            SafeRegion::new(hs)
        }
        (None, Some(lo), Some(hi)) => {
            let (l, u) = cx.bounds(lo, hi, n)?;
            SafeRegion::boxed(&l, &u)
        }
        _ => return Err(cx.err(&raw.span(), "give either h or both lower and upper")),
    };
    region.map_err(|e| cx.err(&raw.span(), e.to_string()))
}

fn build_scenario(cx: &Ctx, raw: &RawScenario, n: usize, m: usize) -> Result<Scenario, LoadError> {
    let x0 = raw.x0.as_ref().map(|v| cx.vector(v, n, "x0")).transpose()?;
    let horizon = raw.horizon.as_ref().map(|v| cx.positive(v, "T")).transpose()?.unwrap_or(10.0);
    let dt = match &raw.dt {
        Some(v) => {
            let dt = cx.positive(v, "dt")?;
            cx.check(dt <= horizon, &v.span(), "dt must not exceed T")?;
            dt
        }
        None => 1e-3_f64.min(horizon),
    };
    let kappa = raw.kappa.as_ref().map(|v| cx.positive(v, "kappa")).transpose()?.unwrap_or(1.0);
    let gain = raw.gain.as_ref().map(|k| cx.matrix(k, m, n, "K")).transpose()?;
    let x_ref = raw.x_ref.as_ref().map(|v| cx.vector(v, n, "x_ref")).transpose()?.unwrap_or_else(|| vec![0.0; n]);
    let u_ref = raw.u_ref.as_ref().map(|v| cx.vector(v, m, "u_ref")).transpose()?.unwrap_or_else(|| vec![0.0; m]);
    let weight = match &raw.weight {
        None => SymMatrix::identity(n),
        Some(w) => {
            let d = cx.matrix(w, n, n, "N")?;
            SymMatrix::from_dense(&d, 1e-12).map_err(|e| cx.err(&w.span(), format!("N: {e}")))?
        }
    };
    Ok(Scenario { x0, horizon, dt, kappa, gain, x_ref, u_ref, weight })
}

fn apply_options(cx: &Ctx, raw: &RawOptions, n: usize, o: &mut Options) -> Result<(), LoadError> {
    let v = &mut o.verify;
    if let Some(d) = &raw.degrees {
        cx.check(!d.get_ref().is_empty(), &d.span(), "degrees must be nonempty")?;
        cx.check(d.get_ref().iter().all(|&x| x >= 2 && x % 2 == 0 && x <= 20), &d.span(), "degrees must be even, between 2 and 20")?;
        v.sos_degrees = d.get_ref().clone();
    }
    if let Some(p) = &raw.powers {
        cx.check(!p.get_ref().is_empty(), &p.span(), "powers must be nonempty")?;
        cx.check(p.get_ref().iter().all(|&x| (1..=8).contains(&x)), &p.span(), "powers must lie in 1..=8")?;
        v.powers = p.get_ref().clone();
    }
    if let Some(s) = &raw.shrink {
        let x = *s.get_ref();
        cx.check(x.is_finite() && (0.0..1.0).contains(&x), &s.span(), "shrink must lie in [0, 1)")?;
        v.shrink = x;
    }
    if let Some(t) = &raw.tol {
        v.sdp_tol = cx.positive(t, "tol")?;
    }
    if let Some(t) = &raw.cert_tol {
        v.cert_tol = cx.positive(t, "cert_tol")?;
    }
    if let Some(k) = &raw.sdp_iters {
        cx.check(*k.get_ref() >= 1, &k.span(), "sdp_iters must be at least 1")?;
        v.max_iters = *k.get_ref();
    }
    if let Some(b) = raw.falsify {
        v.falsify_first = b;
    }
    if let Some(b) = raw.check_chain {
        v.check_chain = b;
    }
    let fo: &mut FalsifyOptions = &mut v.falsify;
    if let Some(s) = raw.seed {
        fo.seed = s;
    }
    if let Some(b) = &raw.budget {
        cx.check(*b.get_ref() >= 1, &b.span(), "budget must be at least 1")?;
        fo.budget = Some(*b.get_ref());
    }
    if let Some(r) = raw.refinements {
        fo.refinements = r;
    }
    match (&raw.lower, &raw.upper) {
        (Some(lo), Some(hi)) => {
            let (l, u) = cx.bounds(lo, hi, n)?;
            fo.lower = l;
            fo.upper = u;
        }
        (None, None) => {}
        (Some(s), None) | (None, Some(s)) => return Err(cx.err(&s.span(), "the search box needs both lower and upper")),
    }
    if let Some(k) = &raw.max_iter {
        cx.check(*k.get_ref() >= 1, &k.span(), "max_iter must be at least 1")?;
        o.descent_iters = *k.get_ref();
    }
    if let Some(e) = &raw.eps {
        o.descent_eps = cx.positive(e, "eps")?;
    }
    if let Some(d) = raw.multiplier_degree {
        o.multiplier_degree = d;
    }
    o.lambda_degree = raw.lambda_degree.or(o.lambda_degree);
    if let Some(r) = &raw.resolution {
        let x = cx.positive(r, "resolution")?;
        cx.check(x < 1.0, &r.span(), "resolution must be below 1")?;
        o.compact.resolution = x;
    }
    if let Some(s) = &raw.seeds_per_axis {
        cx.check(*s.get_ref() >= 2, &s.span(), "seeds_per_axis must be at least 2")?;
        o.compact.seeds_per_axis = *s.get_ref();
    }
    if raw.enlarge == Some(false) {
        o.compact.enlarge = None;
    }
    if let (Some(k), Some(eo)) = (&raw.k_max, o.compact.enlarge.as_mut()) {
        eo.k_max = cx.positive(k, "k_max")?;
    }
    Ok(())
}

/// Keeps the verification settings used inside compact synthesis in step
/// with the top-level ones.
pub fn sync_compact(o: &mut Options) {
    o.compact.verify = o.verify.clone();
    if let Some(eo) = o.compact.enlarge.as_mut() {
        *eo = EnlargeOptions { verify: o.verify.clone(), ..eo.clone() };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[system]\nn = 1\nm = 1\nf = [\"x1\"]\ng = [[\"1\"]]\n\n[safety]\nh = [\"1 - x1^2\"]\n";

    #[test]
    fn minimal_file_loads() {
        let p = parse(MINIMAL).unwrap();
        assert_eq!((p.system.n(), p.system.m()), (1, 1));
        assert!(p.candidates.is_empty() && p.scenario.is_none());
        assert_eq!(p.options, Options::defaults());
    }

    #[test]
    fn errors_carry_section_and_line() {
        let bad = MINIMAL.replace("g = [[\"1\"]]", "g = [[\"1\"], [\"0\"]]");
        let e = parse(&bad).unwrap_err();
        assert_eq!(e.section.as_deref(), Some("system"));
        assert_eq!(e.line, Some(5));

        let bad = MINIMAL.replace("\"x1\"]", "\"x1 +* 2\"]");
        let e = parse(&bad).unwrap_err();
        assert_eq!(e.line, Some(4));
        assert!(e.to_string().contains("position"), "{e}");

        let bad = format!("{MINIMAL}\n[options]\nbogus = 1\n");
        let e = parse(&bad).unwrap_err();
        assert_eq!(e.section.as_deref(), Some("options"));
        assert_eq!(e.line, Some(11));
    }

    #[test]
    fn variable_out_of_range_is_rejected() {
        let bad = MINIMAL.replace("1 - x1^2", "1 - x2^2");
        assert_eq!(parse(&bad).unwrap_err().section.as_deref(), Some("safety"));
    }

    #[test]
    fn options_and_scenario_apply() {
        let text = format!(
            "{MINIMAL}[candidate]\nb = [\"0.5 - x1^2\"]\n[scenario]\nx0 = [0.1]\nT = 2\nK = [[1.5]]\n[options]\ndegrees = [4]\nseed = 3\nlower = [-2]\nupper = [2]\nenlarge = false\n"
        );
        let p = parse(&text).unwrap();
        assert_eq!(p.options.verify.sos_degrees, vec![4]);
        assert_eq!(p.options.verify.falsify.seed, 3);
        assert_eq!(p.options.verify.falsify.lower, vec![-2.0]);
        assert!(p.options.compact.enlarge.is_none());
        let s = p.scenario.unwrap();
        assert_eq!(s.horizon, 2.0);
        assert_eq!(s.gain.unwrap()[(0, 0)], 1.5);
    }

    #[test]
    fn box_region_and_exclusivity() {
        let text = MINIMAL.replace("h = [\"1 - x1^2\"]", "lower = [-1]\nupper = [2]");
        assert_eq!(parse(&text).unwrap().region.constraints().len(), 2);
        let both = MINIMAL.replace("h = [\"1 - x1^2\"]", "h = [\"1\"]\nlower = [-1]\nupper = [2]");
        assert!(parse(&both).is_err());
    }
}

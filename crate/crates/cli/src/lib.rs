//! Batch front end for `cbfcert`: load a problem file, run one command,
//! write artifacts and map the outcome to an exit code.

pub mod problem;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};

use cbfcert::cbf::{
    cbf_condition_program, containment_programs, verify_cbf_in_region, verify_containment, verify_hocbf, verify_multi,
    HocbfChain, Verdict,
};
use cbfcert::sdp::export_sdpa;
use cbfcert::sim::{csv_dims, simulate, write_csv, Barriers, Nominal, Scenario};
use cbfcert::sos::compile;
use cbfcert::synth::{compact_cbf, descent_cbf, descent_hocbf, find_fixed_point, DescentParams, SynthError};

pub use problem::{load, LoadError, Problem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FALSIFIED: i32 = 2;
pub const EXIT_UNKNOWN: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Certify each candidate as a barrier contained in the safe region.
    Verify,
    /// Certify a chain built from one candidate and its gains.
    VerifyHocbf,
    /// Certify the candidates jointly as a barrier family.
    VerifyMulti,
    /// Alternating descent from the first candidate.
    SynthDescent,
    /// Level-set barrier around a stabilized fixed point.
    SynthCompact,
    /// Closed-loop run with the safety filter.
    Simulate,
    /// Write the SDPs of the verification programs.
    ExportSdpa,
}

#[derive(Debug, Parser)]
#[command(name = "cbfcert", version, about = "Barrier certificate verification and synthesis")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    pub file: PathBuf,
    /// Artifact directory.
    #[arg(long, default_value = "cbfcert-out")]
    pub out: PathBuf,
    /// Use only this SOS multiplier degree.
    #[arg(long)]
    pub degree: Option<u32>,
    /// SDP tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Descent iteration budget.
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// Falsifier seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Candidates verified concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Failure that maps to exit code 1.
#[derive(Debug)]
struct Usage(String);

impl<E: std::error::Error> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage(e.to_string())
    }
}

type CmdResult = Result<i32, Usage>;

fn usage<T>(msg: impl Into<String>) -> Result<T, Usage> {
    Err(Usage(msg.into()))
}

pub fn exit_code(v: &Verdict) -> i32 {
    match v {
        Verdict::Verified(_) => EXIT_OK,
        Verdict::Falsified(_) => EXIT_FALSIFIED,
        Verdict::Unknown(_) => EXIT_UNKNOWN,
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
    }
}

fn apply_flags(cli: &Cli, p: &mut Problem) -> Result<(), Usage> {
    let o = &mut p.options;
    if let Some(d) = cli.degree {
        if d < 2 || d % 2 != 0 || d > 20 {
            return usage("--degree must be even, between 2 and 20");
        }
        o.verify.sos_degrees = vec![d];
    }
    if let Some(t) = cli.tol {
        if !(t.is_finite() && t > 0.0) {
            return usage("--tol must be positive");
        }
        o.verify.sdp_tol = t;
    }
    if let Some(k) = cli.max_iter {
        if k == 0 {
            return usage("--max-iter must be at least 1");
        }
        o.descent_iters = k;
    }
    if let Some(s) = cli.seed {
        o.verify.falsify.seed = s;
    }
    if cli.jobs == 0 {
        return usage("--jobs must be at least 1");
    }
    problem::sync_compact(o);
    Ok(())
}

fn execute(cli: &Cli) -> CmdResult {
    let mut p = load(&cli.file).map_err(|e| Usage(format!("{}: {e}", cli.file.display())))?;
    apply_flags(cli, &mut p)?;
    std::fs::create_dir_all(&cli.out).map_err(|e| Usage(format!("cannot create {}: {e}", cli.out.display())))?;
    let start = Instant::now();
    let (code, body) = match cli.command {
        Command::Verify => cmd_verify(&p, cli.jobs, &cli.out)?,
        Command::VerifyHocbf => cmd_verify_hocbf(&p, &cli.out)?,
        Command::VerifyMulti => cmd_verify_multi(&p, &cli.out)?,
        Command::SynthDescent => cmd_descent(&p, &cli.out)?,
        Command::SynthCompact => cmd_compact(&p, &cli.out)?,
        Command::Simulate => cmd_simulate(&p, &cli.out)?,
        Command::ExportSdpa => cmd_export(&p, &cli.out)?,
    };
    write(&cli.out, "report.txt", &body)?;
    print!("{}", report::with_wall_time(&body, start.elapsed()));
    Ok(code)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Usage> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Usage(format!("cannot write {}: {e}", path.display())))
}

fn need_candidates(p: &Problem) -> Result<(), Usage> {
    if p.candidates.is_empty() {
        return usage("this command needs a [candidate] section with b");
    }
    Ok(())
}

fn chain(p: &Problem) -> Result<HocbfChain, Usage> {
    need_candidates(p)?;
    let Some(gains) = &p.gains else {
        return usage("a chain needs gains in [candidate]");
    };
    Ok(HocbfChain::new(&p.system, &p.candidates[0], gains)?)
}

fn cmd_verify(p: &Problem, jobs: usize, out: &Path) -> Result<(i32, String), Usage> {
    need_candidates(p)?;
    let k = p.candidates.len();
    let opts = &p.options.verify;
    let job = |i: usize| verify_cbf_in_region(&p.system, &p.candidates[i], &p.region, opts);
    let mut results: Vec<Option<Result<Verdict, _>>> = vec![None; k];
    let threads = jobs.min(k);
    if threads <= 1 {
        for (i, r) in results.iter_mut().enumerate() {
            *r = Some(job(i));
        }
    } else {
        let done: Vec<Vec<(usize, _)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let job = &job;
                    s.spawn(move || (t..k).step_by(threads).map(|i| (i, job(i))).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("verification thread panicked")).collect()
        });
        for (i, r) in done.into_iter().flatten() {
            results[i] = Some(r);
        }
    }

    let mut body = String::new();
    let mut dump = String::new();
    let mut overall: Option<Verdict> = None;
    for (i, r) in results.into_iter().enumerate() {
        let v = r.expect("every candidate ran")?;
        if k > 1 {
            body.push_str(&format!("candidate {}: {}\n", i + 1, p.candidates[i]));
        }
        body.push_str(&report::emit_report(&v, opts));
        if let Some(e) = v.evidence() {
            if k > 1 {
                dump.push_str(&format!("## candidate {}\n", i + 1));
            }
            dump.push_str(&report::certificate_dump(e));
        }
        overall = Some(match overall {
            None => v,
            Some(acc) => acc.and(v),
        });
    }
    let overall = overall.expect("at least one candidate");
    if k > 1 {
        body.push_str(&format!("overall: {}\n", report::outcome(&overall)));
    }
    if overall.is_verified() {
        write(out, "certificate.txt", &dump)?;
    }
    Ok((exit_code(&overall), body))
}

fn finish_verdict(v: Verdict, p: &Problem, out: &Path) -> Result<(i32, String), Usage> {
    if let Some(e) = v.evidence() {
        write(out, "certificate.txt", &report::certificate_dump(e))?;
    }
    Ok((exit_code(&v), report::emit_report(&v, &p.options.verify)))
}

fn cmd_verify_hocbf(p: &Problem, out: &Path) -> Result<(i32, String), Usage> {
    let c = chain(p)?;
    let v = verify_hocbf(&p.system, &c, &p.region, &p.options.verify)?;
    finish_verdict(v, p, out)
}

fn cmd_verify_multi(p: &Problem, out: &Path) -> Result<(i32, String), Usage> {
    need_candidates(p)?;
    let mut v = verify_multi(&p.system, &p.candidates, &p.options.verify)?;
    if !v.is_falsified() {
        v = v.and(verify_containment(&p.candidates, &p.region, &p.options.verify)?);
    }
    finish_verdict(v, p, out)
}

fn cmd_descent(p: &Problem, out: &Path) -> Result<(i32, String), Usage> {
    need_candidates(p)?;
    let o = &p.options;
    let mut params = DescentParams::new(p.candidates[0].clone());
    params.max_iters = o.descent_iters;
    params.eps = o.descent_eps;
    params.multiplier_degree = o.multiplier_degree;
    params.lambda_degree = o.lambda_degree;
    params.verify = o.verify.clone();
    let tr = if p.gains.is_some() {
        descent_hocbf(&p.system, &p.region, &chain(p)?, &params)?
    } else {
        descent_cbf(&p.system, &p.region, &params)?
    };
    write(out, "trace.csv", &report::descent_csv(&tr))?;
    write(out, "candidate.txt", &format!("b = {}\n", tr.candidate))?;
    if let Some(e) = tr.verdict.evidence() {
        write(out, "certificate.txt", &report::certificate_dump(e))?;
    }
    Ok((exit_code(&tr.verdict), report::descent_report(&tr, &o.verify)))
}

fn cmd_compact(p: &Problem, out: &Path) -> Result<(i32, String), Usage> {
    let Some(sc) = &p.scenario else {
        return usage("synth-compact needs a [scenario] section with K");
    };
    let Some(gain) = &sc.gain else {
        return usage("synth-compact needs K in [scenario]");
    };
    let (x_star, u_star) = find_fixed_point(&p.system, &sc.x_ref, &sc.u_ref)?;
    let res = match compact_cbf(&p.system, &p.region, &x_star, &u_star, gain, &sc.weight, &p.options.compact) {
        Ok(r) => r,
        Err(SynthError::NoFeasibleLevel) => {
            let body = format!(
                "outcome: UNKNOWN\nbudget exhausted: no certified level above resolution {:.3e}\n",
                p.options.compact.resolution
            );
            return Ok((EXIT_UNKNOWN, body));
        }
        Err(e) => return Err(e.into()),
    };
    let n = p.n();
    let mut body = String::from("outcome: SYNTHESIZED\n");
    body.push_str(&format!("fixed point: {}\n", report::point(&res.x_star)));
    body.push_str(&format!("input: {}\n", report::point(&res.u_star)));
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| res.p.get(i, j)).collect();
        body.push_str(&format!("P row {}: {}\n", i + 1, report::point(&row)));
    }
    body.push_str(&format!("delta: {:.6e}\n", res.delta));
    body.push_str(&format!("delta bracket: {:.6e}\n", res.delta_max));
    body.push_str(&format!("k: {:.6e}\n", res.k));
    body.push_str(&format!("b0 = {}\nb1 = {}\n", res.b0, res.b1));
    write(out, "candidate.txt", &format!("b0 = {}\nb1 = {}\n", res.b0, res.b1))?;
    Ok((EXIT_OK, body))
}

fn cmd_simulate(p: &Problem, out: &Path) -> Result<(i32, String), Usage> {
    need_candidates(p)?;
    let Some(sc) = &p.scenario else {
        return usage("simulate needs a [scenario] section");
    };
    let Some(x0) = &sc.x0 else {
        return usage("simulate needs x0 in [scenario]");
    };
    let barriers = if p.gains.is_some() { Barriers::Hocbf(chain(p)?) } else { Barriers::Cbf(p.candidates.clone()) };
    let nominal = match &sc.gain {
        Some(k) => Nominal::Linear { gain: k.clone(), reference: sc.x_ref.clone() },
        None => Nominal::Zero,
    };
    let mut scen = Scenario::new(p.system.clone(), barriers, p.region.clone(), nominal, x0.clone());
    scen.horizon = sc.horizon;
    scen.dt = sc.dt;
    scen.kappa = sc.kappa;
    let tr = simulate(&scen)?;
    let dims = csv_dims(&scen);
    write_csv(&tr, dims, &out.join("trajectory.csv"))?;
    let mut body = format!("outcome: {}\n", if tr.halted.is_some() { "HALTED" } else { "COMPLETED" });
    body.push_str(&format!("samples: {}\n", tr.len()));
    if let Some(t) = tr.times.last() {
        body.push_str(&format!("final time: {t:.6e}\n"));
    }
    body.push_str(&format!("min h: {:.6e}\n", tr.min_h()));
    for j in 0..dims.3 {
        body.push_str(&format!("min b_{}: {:.6e}\n", j + 1, tr.min_b(j)));
    }
    if let Some(why) = &tr.halted {
        body.push_str(&format!("halted: {why}\n"));
    }
    Ok((if tr.halted.is_some() { EXIT_UNKNOWN } else { EXIT_OK }, body))
}

fn cmd_export(p: &Problem, out: &Path) -> Result<(i32, String), Usage> {
    need_candidates(p)?;
    let o = &p.options.verify;
    let mut files = Vec::new();
    let mut save = |name: String, prog: &cbfcert::sos::SosProgram| -> Result<(), Usage> {
        let sdp = compile(prog)?.sdp;
        write(out, &name, &export_sdpa(&sdp))?;
        files.push(name);
        Ok(())
    };
    for (i, b) in p.candidates.iter().enumerate() {
        for &d in &o.sos_degrees {
            for &r in &o.powers {
                if let Some(prog) = cbf_condition_program(&p.system, b, d, r)? {
                    save(format!("cbf_b{}_d{d}_r{r}.dat-s", i + 1), &prog)?;
                }
            }
            for (j, prog) in containment_programs(std::slice::from_ref(b), &p.region, o.shrink, d)?.iter().enumerate() {
                save(format!("containment_b{}_h{}_d{d}.dat-s", i + 1, j + 1), prog)?;
            }
        }
    }
    let mut body = format!("outcome: EXPORTED\nfiles: {}\n", files.len());
    for f in &files {
        body.push_str(&format!("  {f}\n"));
    }
    Ok((EXIT_OK, body))
}

use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;

use cbfcert::cbf::{cbf_condition_program, ControlSystem};
use cbfcert::poly::Polynomial;
use cbfcert::sdp::{export_sdpa, import_sdpa};
use cbfcert::sim::{simulate, Barriers, Nominal, Scenario};
use cbfcert::sos::compile;
use cbfcert_cli::problem::parse;
use cbfcert_cli::{load, run, EXIT_FALSIFIED, EXIT_OK, EXIT_USAGE};

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn run_in(cmd: &str, file: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["cbfcert".to_string(), cmd.into(), file.display().to_string(), "--out".into(), out.display().to_string()];
    args.extend(extra.iter().map(|s| s.to_string()));
    run(args)
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn offset_ellipse_is_falsified() {
    // The stated ellipse touches a point with L_g b = 0 and L_f b < 0.
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run_in("verify", &problem("unstable.problem"), out.path(), &[]), EXIT_FALSIFIED);
    assert!(read(out.path(), "report.txt").contains("witness: (-6.7386"));
}

#[test]
fn barrier_ellipse_verifies_with_certificate_dump() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run_in("verify", &problem("ellipse.problem"), out.path(), &[]), EXIT_OK);
    let report = read(out.path(), "report.txt");
    assert!(report.contains("VERIFIED") && report.contains("max residual"));
    let dump = read(out.path(), "certificate.txt");
    let lines: Vec<&str> = dump.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(!lines.is_empty());
    for l in lines {
        let (_, poly) = l.split_once(" = ").unwrap();
        Polynomial::parse(poly, 2).unwrap();
    }
}

#[test]
fn double_integrator_prints_witness() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run_in("verify", &problem("double_integrator.problem"), out.path(), &[]), EXIT_FALSIFIED);
    let report = read(out.path(), "report.txt");
    let w = report.lines().find_map(|l| l.strip_prefix("witness: (")).unwrap();
    let x: Vec<f64> = w.trim_end_matches(')').split(", ").map(|s| s.parse().unwrap()).collect();
    assert!((x[0].abs() - 1.0).abs() < 1e-5 && x[1].abs() > 1e-3, "{x:?}");
}

#[test]
fn binary_reports_parse_position() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(problem("double_integrator.problem")).unwrap().replace("\"1 - x1^2\"]", "\"1 - x1^^2\"]");
    let file = dir.path().join("bad.problem");
    std::fs::write(&file, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cbfcert"))
        .args(["verify", file.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[safety] line 9") && err.contains("position"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run(["cbfcert", "nope", "x"]), EXIT_USAGE);
    assert_eq!(run_in("verify", Path::new("/nonexistent.problem"), out.path(), &[]), EXIT_USAGE);
    assert_eq!(run_in("verify", &problem("pendulum.problem"), out.path(), &["--jobs", "0"]), EXIT_USAGE);
    assert_eq!(run_in("simulate", &problem("double_integrator.problem"), out.path(), &[]), EXIT_USAGE);
}

#[test]
fn load_minimal_and_rejects_bad_g() {
    let minimal = "[system]\nn = 1\nm = 1\nf = [\"-x1\"]\ng = [[\"1\"]]\n[safety]\nh = [\"1 - x1^2\"]\n";
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("min.problem");
    std::fs::write(&f, minimal).unwrap();
    assert_eq!(load(&f).unwrap().n(), 1);

    let bad = minimal.replace("g = [[\"1\"]]", "g = [[\"1\"], [\"1\"]]");
    let e = parse(&bad).unwrap_err();
    assert_eq!(e.section.as_deref(), Some("system"));
    assert!(e.to_string().starts_with("[system] line 5"), "{e}");
}

#[test]
fn pendulum_file_matches_matrices() {
    let p = load(&problem("pendulum.problem")).unwrap();
    let want = ControlSystem::linear(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[vec![0.0], vec![1.0]]).unwrap();
    assert_eq!(p.system, want);
    let sc = p.scenario.unwrap();
    let k = sc.gain.unwrap();
    assert_eq!((k[(0, 0)], k[(0, 1)]), (3.0, 3.0));
    assert_eq!(p.region.constraints().len(), 4);
}

#[test]
fn reports_and_csvs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert_eq!(run_in("verify", &problem("double_integrator.problem"), dir.path(), &["--seed", "11"]), EXIT_FALSIFIED);
    }
    assert_eq!(read(a.path(), "report.txt"), read(b.path(), "report.txt"));
    for dir in [&a, &b] {
        assert_eq!(run_in("simulate", &problem("pendulum.problem"), dir.path(), &[]), EXIT_OK);
    }
    assert_eq!(read(a.path(), "trajectory.csv"), read(b.path(), "trajectory.csv"));
    assert_eq!(read(a.path(), "report.txt"), read(b.path(), "report.txt"));
}

#[test]
fn jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(problem("ellipse.problem"))
        .unwrap()
        .replace("b = [\"0.01", "b = [\"0.5 - x1^2\", \"0.01 - x1^2 - x2^2\", \"0.01");
    let file = dir.path().join("many.problem");
    std::fs::write(&file, text).unwrap();
    let (one, four) = (dir.path().join("one"), dir.path().join("four"));
    let c1 = run_in("verify", &file, &one, &[]);
    let c4 = run_in("verify", &file, &four, &["--jobs", "4"]);
    assert_eq!(c1, c4);
    assert_eq!(read(&one, "report.txt"), read(&four, "report.txt"));
    assert!(read(&one, "report.txt").contains("overall: "));
}

#[test]
fn chain_verifies_and_simulates() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run_in("verify-hocbf", &problem("pendulum_chain.problem"), out.path(), &[]), EXIT_OK);
    assert!(read(out.path(), "certificate.txt").contains("# chain condition 1"));
    assert_eq!(run_in("simulate", &problem("pendulum_chain.problem"), out.path(), &[]), EXIT_OK);
    let csv = read(out.path(), "trajectory.csv");
    assert_eq!(csv.lines().next().unwrap(), "t,x1,x2,u1,h_1,b_1,b_2");
}

#[test]
fn descent_writes_trace() {
    let out = tempfile::tempdir().unwrap();
    let code = run_in("synth-descent", &problem("ellipse.problem"), out.path(), &["--max-iter", "3"]);
    assert_eq!(code, EXIT_OK);
    let trace = read(out.path(), "trace.csv");
    assert!(trace.starts_with("iteration,step,rho\n") && trace.lines().count() >= 2);
    assert!(read(out.path(), "candidate.txt").starts_with("b = "));
}

#[test]
fn compact_reproduces_pendulum_level() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run_in("synth-compact", &problem("pendulum.problem"), out.path(), &[]), EXIT_OK);
    let report = read(out.path(), "report.txt");
    let delta: f64 = report.lines().find_map(|l| l.strip_prefix("delta: ")).unwrap().parse().unwrap();
    assert!((0.009..=0.01).contains(&delta), "{delta}");
    assert!(report.contains("P row 1: (1.25000e0, 2.50000e-1)"));
}

#[test]
fn exported_sdps_round_trip() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run_in("export-sdpa", &problem("pendulum.problem"), out.path(), &["--degree", "2"]), EXIT_OK);
    let mut count = 0;
    for entry in std::fs::read_dir(out.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "dat-s") {
            let text = std::fs::read_to_string(&path).unwrap();
            assert_eq!(export_sdpa(&import_sdpa(&text).unwrap()), text);
            count += 1;
        }
    }
    // Two powers for the condition plus one program per box face.
    assert_eq!(count, 6);
}

/// Exercises every dimension-sensitive path on a loaded problem.
fn smoke(p: &cbfcert_cli::Problem) {
    let n = p.n();
    let x = vec![0.1; n];
    let u = vec![0.0; p.system.m()];
    p.system.vector_field(&x, &u);
    p.region.margin(&x);
    for b in &p.candidates {
        p.system.lie_f(b).unwrap();
        p.system.lie_g(b).unwrap();
        if let Ok(Some(prog)) = cbf_condition_program(&p.system, b, 2, 1) {
            compile(&prog).unwrap();
        }
    }
    if let (Some(sc), false) = (&p.scenario, p.candidates.is_empty()) {
        let nominal = match &sc.gain {
            Some(k) => Nominal::Linear { gain: k.clone(), reference: sc.x_ref.clone() },
            None => Nominal::Zero,
        };
        let mut s = Scenario::new(
            p.system.clone(),
            Barriers::Cbf(p.candidates.clone()),
            p.region.clone(),
            nominal,
            sc.x0.clone().unwrap_or_else(|| vec![0.0; n]),
        );
        s.dt = 0.01;
        s.horizon = 0.05;
        s.validate().unwrap();
        simulate(&s).unwrap();
    }
}

const SEEDS: [&str; 5] =
    ["unstable.problem", "ellipse.problem", "double_integrator.problem", "pendulum.problem", "pendulum_chain.problem"];

#[derive(Clone, Debug)]
enum Mutation {
    DropLine(usize),
    DuplicateLine(usize),
    SwapLines(usize, usize),
    ReplaceDigit(usize, char),
    DropListItem(usize),
}

fn apply(text: &str, m: &Mutation) -> String {
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let k = lines.len();
    match *m {
        Mutation::DropLine(i) => {
            lines.remove(i % k);
        }
        Mutation::DuplicateLine(i) => {
            let l = lines[i % k].clone();
            lines.insert(i % k, l);
        }
        Mutation::SwapLines(i, j) => lines.swap(i % k, j % k),
        Mutation::ReplaceDigit(i, c) => {
            let digits: Vec<usize> = text.char_indices().filter(|(_, ch)| ch.is_ascii_digit()).map(|(p, _)| p).collect();
            if digits.is_empty() {
                return text.to_string();
            }
            let pos = digits[i % digits.len()];
            let mut s = text.to_string();
            s.replace_range(pos..pos + 1, &c.to_string());
            return s;
        }
        Mutation::DropListItem(i) => {
            let lists: Vec<usize> = (0..k).filter(|&j| lines[j].contains(", ")).collect();
            if let Some(&j) = lists.get(i % lists.len().max(1)) {
                let l = &lines[j];
                let at = l.find(", ").unwrap();
                let end = l[at + 2..].find([',', ']']).map_or(l.len(), |e| at + 2 + e);
                lines[j] = format!("{}{}", &l[..at], &l[end..]);
            }
        }
    }
    lines.join("\n") + "\n"
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        any::<usize>().prop_map(Mutation::DropLine),
        any::<usize>().prop_map(Mutation::DuplicateLine),
        (any::<usize>(), any::<usize>()).prop_map(|(i, j)| Mutation::SwapLines(i, j)),
        (any::<usize>(), prop::sample::select(vec!['0', '1', '3', '9'])).prop_map(|(i, c)| Mutation::ReplaceDigit(i, c)),
        any::<usize>().prop_map(Mutation::DropListItem),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn mutated_files_never_panic(seed in 0usize..SEEDS.len(), muts in prop::collection::vec(mutation(), 1..4)) {
        let mut text = std::fs::read_to_string(problem(SEEDS[seed])).unwrap();
        for m in &muts {
            text = apply(&text, m);
        }
        if let Ok(p) = parse(&text) {
            smoke(&p);
        }
    }
}

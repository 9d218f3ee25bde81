//! Plain-text reports and certificate dumps. Report bodies are deterministic;
//! wall time is appended only to what goes to standard output.

use std::fmt::Write as _;
use std::time::Duration;

use cbfcert::cbf::{Evidence, Verdict, VerifyOptions};
use cbfcert::synth::{DescentTrace, StepKind, Termination};

/// Six significant digits.
pub fn sig6(v: f64) -> String {
    format!("{v:.5e}")
}

pub fn point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| sig6(*v)).collect();
    format!("({})", parts.join(", "))
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

pub fn outcome(v: &Verdict) -> &'static str {
    match v {
        Verdict::Verified(_) => "VERIFIED",
        Verdict::Falsified(_) => "FALSIFIED",
        Verdict::Unknown(_) => "UNKNOWN",
    }
}

/// Outcome, schedule, residuals, Gram eigenvalues and the witness if any.
pub fn emit_report(v: &Verdict, opts: &VerifyOptions) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "outcome: {}", outcome(v));
    let _ = writeln!(s, "degrees tried: {}", list(&opts.sos_degrees));
    let _ = writeln!(s, "powers tried: {}", list(&opts.powers));
    match v {
        Verdict::Verified(e) => evidence(&mut s, e),
        Verdict::Falsified(w) => {
            let _ = writeln!(s, "witness: {}", point(&w.point));
            let _ = writeln!(s, "violated condition: {}", w.condition);
        }
        Verdict::Unknown(why) => {
            let _ = writeln!(s, "budget exhausted: {why}");
        }
    }
    s
}

fn evidence(s: &mut String, e: &Evidence) {
    let _ = writeln!(s, "sos degree used: {}", e.sos_degree);
    let _ = writeln!(s, "power used: {}", e.power);
    if let Some(eps) = e.shrink {
        let _ = writeln!(s, "shrink: {eps:.3e}");
    }
    let _ = writeln!(s, "max residual: {:.3e}", e.max_residual());
    let _ = writeln!(s, "min gram eigenvalue: {:.3e}", gram(e.min_gram_eig()));
    for r in &e.records {
        let _ = writeln!(
            s,
            "  {}: residual {:.3e}, min gram eigenvalue {:.3e}",
            r.condition,
            r.certificate.max_residual(),
            gram(r.certificate.min_gram_eig())
        );
    }
}

/// Trivial certificates have no Gram blocks.
fn gram(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// One `name = polynomial` line per multiplier, grouped by condition.
pub fn certificate_dump(e: &Evidence) -> String {
    let mut s = String::new();
    for r in &e.records {
        let _ = writeln!(s, "# {}", r.condition);
        for (name, p) in r.named_polynomials() {
            let _ = writeln!(s, "{name} = {p}");
        }
    }
    s
}

pub fn termination(t: &Termination) -> String {
    match t {
        Termination::RhoNonPositive => "rho reached zero".into(),
        Termination::Converged => "rho stopped decreasing".into(),
        Termination::Budget => "iteration budget exhausted".into(),
        Termination::Failed(why) => format!("step failed: {why}"),
    }
}

pub fn descent_report(tr: &DescentTrace, opts: &VerifyOptions) -> String {
    let mut s = emit_report(&tr.verdict, opts);
    let _ = writeln!(s, "iterations: {}", tr.iterations);
    let _ = writeln!(s, "termination: {}", termination(&tr.termination));
    if let Some(last) = tr.steps.last() {
        let _ = writeln!(s, "final rho: {:.6e}", last.rho);
    }
    let _ = writeln!(s, "candidate: {}", tr.candidate);
    s
}

pub fn descent_csv(tr: &DescentTrace) -> String {
    let mut s = String::from("iteration,step,rho\n");
    for st in &tr.steps {
        let kind = match st.kind {
            StepKind::Multiplier => "multiplier",
            StepKind::Candidate => "candidate",
        };
        let _ = writeln!(s, "{},{kind},{:.12e}", st.iteration, st.rho);
    }
    s
}

pub fn with_wall_time(report: &str, t: Duration) -> String {
    format!("{report}wall time: {:.3} s\n", t.as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbfcert::cbf::{CertificateRecord, Witness};

    #[test]
    fn verified_report_has_residual_line() {
        let e = Evidence { records: vec![CertificateRecord::trivial("cbf")], sos_degree: 2, power: 1, shrink: None };
        let r = emit_report(&Verdict::Verified(e), &VerifyOptions::default());
        assert!(r.contains("VERIFIED"));
        assert!(r.contains("max residual: "));
    }

    #[test]
    fn falsified_report_has_six_digit_witness() {
        let w = Witness { point: vec![-0.6738612345, 0.5], condition: "cbf".into() };
        let r = emit_report(&Verdict::Falsified(w), &VerifyOptions::default());
        assert!(r.contains("FALSIFIED"));
        assert!(r.contains("witness: (-6.73861e-1, 5.00000e-1)"), "{r}");
    }

    #[test]
    fn unknown_report_names_budget() {
        let r = emit_report(&Verdict::Unknown("no certificate at degrees 2, 4".into()), &VerifyOptions::default());
        assert!(r.contains("UNKNOWN") && r.contains("budget exhausted: no certificate"));
    }
}

//! Control barrier function semantics and verification.
//!
//! A CBF `b` for `ẋ = f(x) + g(x)u` fails exactly when some `x` has
//! `b(x) = 0`, `L_g b(x) = 0` and `L_f b(x) < 0`. Verification certifies
//! emptiness of such sets with Positivstellensatz identities (compiled to
//! SOS programs); falsification searches for a point in them.

mod falsify;
mod hocbf;
mod system;
mod verify;

use thiserror::Error;

use crate::poly::{PolyError, Polynomial};
use crate::sos::{check_certificate, Certificate, SosError, VarId};

pub use falsify::{falsify, falsify_containment, falsify_hocbf, falsify_pair, FalsifyOptions};
pub use hocbf::HocbfChain;
pub use system::ControlSystem;
pub use verify::{
    cbf_condition_program, check_chain, containment_programs, verify_cbf, verify_cbf_in_region, verify_containment,
    verify_hocbf, verify_multi,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CbfError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("relative degree mismatch: chain has order {expected}, system gives {found:?}")]
    RelativeDegree { expected: usize, found: Option<usize> },
    #[error("{0}")]
    Precondition(String),
}

/// Conjunction of polynomial constraints `h_i(x) ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SafeRegion {
    constraints: Vec<Polynomial>,
}

impl SafeRegion {
    pub fn new(constraints: Vec<Polynomial>) -> Result<Self, CbfError> {
        let Some(first) = constraints.first() else {
            return Err(CbfError::Precondition("a safe region needs at least one constraint".into()));
        };
        let n = first.nvars();
        if let Some(h) = constraints.iter().find(|h| h.nvars() != n) {
            return Err(CbfError::Dimension(format!(
                "region constraints over {n} and {} variables",
                h.nvars()
            )));
        }
        Ok(Self { constraints })
    }

    /// Axis-aligned box `lower ≤ x ≤ upper` as `2n` half-plane constraints.
    pub fn boxed(lower: &[f64], upper: &[f64]) -> Result<Self, CbfError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(CbfError::Dimension("box bounds differ in length".into()));
        }
        let n = lower.len();
        let mut cs = Vec::with_capacity(2 * n);
        for i in 0..n {
            let xi = Polynomial::var(n, i);
            cs.push(&xi - &Polynomial::constant(n, lower[i]));
            cs.push(&Polynomial::constant(n, upper[i]) - &xi);
        }
        Self::new(cs)
    }

    pub fn constraints(&self) -> &[Polynomial] {
        &self.constraints
    }

    pub fn nvars(&self) -> usize {
        self.constraints[0].nvars()
    }

    /// `min_i h_i(x)`.
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.constraints.iter().map(|h| h.eval(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.margin(x) >= 0.0
    }
}

/// One solved Positivstellensatz identity with named multipliers.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificateRecord {
    pub condition: String,
    pub certificate: Certificate,
    pub multipliers: Vec<(String, VarId)>,
}

impl CertificateRecord {
    pub fn trivial(condition: impl Into<String>) -> Self {
        Self { condition: condition.into(), certificate: Certificate::trivial(), multipliers: Vec::new() }
    }

    /// Named multiplier polynomials.
    pub fn named_polynomials(&self) -> Vec<(String, Polynomial)> {
        self.multipliers
            .iter()
            .map(|(name, v)| (name.clone(), self.certificate.value(*v).clone()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evidence {
    pub records: Vec<CertificateRecord>,
    /// SOS multiplier degree that succeeded (largest across records).
    pub sos_degree: u32,
    /// Exponent `r` of the `(·)^{2r}` term that succeeded.
    pub power: u32,
    /// Shrink factor applied to barrier sets in containment checks.
    pub shrink: Option<f64>,
}

impl Evidence {
    /// Re-checks every certificate independently.
    pub fn passes(&self, tol: f64) -> bool {
        self.records.iter().all(|r| check_certificate(&r.certificate, tol))
    }

    pub fn max_residual(&self) -> f64 {
        self.records.iter().map(|r| r.certificate.max_residual()).fold(0.0, f64::max)
    }

    pub fn min_gram_eig(&self) -> f64 {
        self.records.iter().map(|r| r.certificate.min_gram_eig()).fold(f64::INFINITY, f64::min)
    }

    fn merge(mut self, other: Evidence) -> Evidence {
        self.records.extend(other.records);
        self.sos_degree = self.sos_degree.max(other.sos_degree);
        self.power = self.power.max(other.power);
        self.shrink = self.shrink.or(other.shrink);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub point: Vec<f64>,
    /// Which condition the point violates.
    pub condition: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Verified(Evidence),
    Falsified(Witness),
    Unknown(String),
}

impl Verdict {
    pub fn is_verified(&self) -> bool {
        matches!(self, Verdict::Verified(_))
    }

    pub fn is_falsified(&self) -> bool {
        matches!(self, Verdict::Falsified(_))
    }

    pub fn evidence(&self) -> Option<&Evidence> {
        match self {
            Verdict::Verified(e) => Some(e),
            _ => None,
        }
    }

    pub fn witness(&self) -> Option<&Witness> {
        match self {
            Verdict::Falsified(w) => Some(w),
            _ => None,
        }
    }

    /// Conjunction: falsified beats unknown beats verified.
    pub fn and(self, other: Verdict) -> Verdict {
        match (self, other) {
            (f @ Verdict::Falsified(_), _) | (_, f @ Verdict::Falsified(_)) => f,
            (u @ Verdict::Unknown(_), _) | (_, u @ Verdict::Unknown(_)) => u,
            (Verdict::Verified(a), Verdict::Verified(b)) => Verdict::Verified(a.merge(b)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Degrees tried for SOS multipliers, in order.
    pub sos_degrees: Vec<u32>,
    /// Exponents `r` tried for the `(·)^{2r}` term, in order.
    pub powers: Vec<u32>,
    /// Relative shrink `ε` for containment: `b − ε·max|coeff(b)|`.
    pub shrink: f64,
    pub sdp_tol: f64,
    pub max_iters: usize,
    /// Tolerance of the independent certificate re-check.
    pub cert_tol: f64,
    /// Also certify the chain conditions of a HOCBF.
    pub check_chain: bool,
    /// Run the falsifier before attempting certificates.
    pub falsify_first: bool,
    pub falsify: FalsifyOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            sos_degrees: vec![2, 4],
            powers: vec![1, 2],
            shrink: 1e-3,
            sdp_tol: 1e-8,
            max_iters: 200,
            cert_tol: crate::sos::CERT_TOL,
            check_chain: false,
            falsify_first: true,
            falsify: FalsifyOptions::default(),
        }
    }
}

/// `p / max|coeff(p)|`, leaving the zero polynomial alone.
pub fn normalize(p: &Polynomial) -> Polynomial {
    let s = p.max_abs_coeff();
    if s > 0.0 {
        p.scale(1.0 / s)
    } else {
        p.clone()
    }
}

/// `b − ε·max|coeff(b)|`.
pub fn shrink(b: &Polynomial, eps: f64) -> Polynomial {
    let n = b.nvars();
    b - &Polynomial::constant(n, eps * b.max_abs_coeff())
}

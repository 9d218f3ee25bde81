use crate::poly::{relative_degree, Polynomial};

use super::{CbfError, ControlSystem};

/// Higher-order barrier chain `ψ_0 = b`, `ψ_i = L_f ψ_{i−1} + κ_i ψ_{i−1}`
/// with linear class-K gains `κ_1..κ_r`. The last function `ψ_r` carries the
/// input and is represented by its drift part [`top_drift`](Self::top_drift)
/// and input part [`top_input`](Self::top_input).
#[derive(Clone, Debug, PartialEq)]
pub struct HocbfChain {
    gains: Vec<f64>,
    psi: Vec<Polynomial>,
    top_drift: Polynomial,
    top_input: Vec<Polynomial>,
}

impl HocbfChain {
    /// Builds the chain; the relative degree of `b` must equal the number
    /// of gains.
    pub fn new(sys: &ControlSystem, b: &Polynomial, gains: &[f64]) -> Result<Self, CbfError> {
        let r = gains.len();
        if r == 0 {
            return Err(CbfError::Precondition("a chain needs at least one gain".into()));
        }
        if b.nvars() != sys.n() {
            return Err(CbfError::Dimension(format!("b over {} variables, system has {}", b.nvars(), sys.n())));
        }
        if let Some(k) = gains.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(CbfError::Precondition(format!("gain {k} is not positive")));
        }
        let found = relative_degree(b, sys, r);
        if found != Some(r) {
            return Err(CbfError::RelativeDegree { expected: r, found });
        }
        let mut psi = vec![b.clone()];
        for &k in &gains[..r - 1] {
            let last = psi.last().expect("chain is nonempty");
            psi.push(&sys.lie_f(last)? + &last.scale(k));
        }
        let last = psi.last().expect("chain is nonempty");
        let top_drift = &sys.lie_f(last)? + &last.scale(gains[r - 1]);
        let top_input = sys.lie_g(last)?;
        Ok(Self { gains: gains.to_vec(), psi, top_drift, top_input })
    }

    pub fn order(&self) -> usize {
        self.gains.len()
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn base(&self) -> &Polynomial {
        &self.psi[0]
    }

    /// `ψ_0..ψ_{r−1}`.
    pub fn psi(&self) -> &[Polynomial] {
        &self.psi
    }

    /// `L_f ψ_{r−1} + κ_r ψ_{r−1}`.
    pub fn top_drift(&self) -> &Polynomial {
        &self.top_drift
    }

    /// `L_g ψ_{r−1}`.
    pub fn top_input(&self) -> &[Polynomial] {
        &self.top_input
    }

    /// Input-free derivative constraint `ψ_r(x, u) = drift + input·u`.
    pub fn top_value(&self, x: &[f64], u: &[f64]) -> f64 {
        self.top_drift.eval(x) + self.top_input.iter().zip(u).map(|(p, ui)| p.eval(x) * ui).sum::<f64>()
    }

    /// Whether `x` lies in the intersection `∩_i {ψ_i ≥ 0}`.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.psi.iter().all(|p| p.eval(x) >= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_integrator() -> ControlSystem {
        ControlSystem::linear(&[vec![0.0, 1.0], vec![0.0, 0.0]], &[vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn recursion_matches_hand_derivation() {
        let sys = double_integrator();
        let b = Polynomial::parse("1 - x1", 2).unwrap();
        let c = HocbfChain::new(&sys, &b, &[2.0, 3.0]).unwrap();
        assert_eq!(c.psi()[1], Polynomial::parse("2 - 2*x1 - x2", 2).unwrap());
        assert_eq!(c.top_drift(), &Polynomial::parse("6 - 6*x1 - 5*x2", 2).unwrap());
        assert_eq!(c.top_input(), &[Polynomial::constant(2, -1.0)]);
    }

    #[test]
    fn wrong_order_is_rejected() {
        let sys = double_integrator();
        let b = Polynomial::parse("1 - x1", 2).unwrap();
        assert!(matches!(
            HocbfChain::new(&sys, &b, &[1.0]),
            Err(CbfError::RelativeDegree { expected: 1, found: None })
        ));
        let full = ControlSystem::linear(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            HocbfChain::new(&full, &b, &[1.0, 1.0]),
            Err(CbfError::RelativeDegree { expected: 2, found: Some(1) })
        ));
        assert!(HocbfChain::new(&sys, &b, &[1.0, -1.0]).is_err());
    }
}

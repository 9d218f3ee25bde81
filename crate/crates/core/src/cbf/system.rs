use crate::poly::{PolyError, PolyMatrix, PolyVector, Polynomial};

/// Control-affine polynomial system `ẋ = f(x) + g(x) u`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSystem {
    f: PolyVector,
    g: PolyMatrix,
}

impl ControlSystem {
    pub fn new(f: PolyVector, g: PolyMatrix) -> Result<Self, PolyError> {
        let n = f.len();
        if n == 0 {
            return Err(PolyError::DimensionMismatch { expected: 1, found: 0 });
        }
        if f.nvars() != n {
            return Err(PolyError::DimensionMismatch { expected: n, found: f.nvars() });
        }
        if g.rows() != n {
            return Err(PolyError::DimensionMismatch { expected: n, found: g.rows() });
        }
        if g.nvars() != n {
            return Err(PolyError::DimensionMismatch { expected: n, found: g.nvars() });
        }
        Ok(Self { f, g })
    }

    /// Linear system `ẋ = F x + G u` given as row-major matrices.
    pub fn linear(f: &[Vec<f64>], g: &[Vec<f64>]) -> Result<Self, PolyError> {
        let n = f.len();
        let m = g.first().map_or(0, Vec::len);
        let mut fe = Vec::with_capacity(n);
        for row in f {
            if row.len() != n {
                return Err(PolyError::DimensionMismatch { expected: n, found: row.len() });
            }
            let mut p = Polynomial::zero(n);
            for (j, &c) in row.iter().enumerate() {
                p = &p + &Polynomial::var(n, j).scale(c);
            }
            fe.push(p);
        }
        if g.len() != n {
            return Err(PolyError::DimensionMismatch { expected: n, found: g.len() });
        }
        let mut ge = Vec::with_capacity(n * m);
        for row in g {
            if row.len() != m {
                return Err(PolyError::DimensionMismatch { expected: m, found: row.len() });
            }
            ge.extend(row.iter().map(|&c| Polynomial::constant(n, c)));
        }
        Self::new(PolyVector::new(fe)?, PolyMatrix::new(n, m, ge)?)
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn m(&self) -> usize {
        self.g.cols()
    }

    pub fn f(&self) -> &PolyVector {
        &self.f
    }

    pub fn g(&self) -> &PolyMatrix {
        &self.g
    }

    /// `∂b/∂x · f`.
    pub fn lie_f(&self, b: &Polynomial) -> Result<Polynomial, PolyError> {
        b.lie(&self.f)
    }

    /// Entries of the row vector `∂b/∂x · g`.
    pub fn lie_g(&self, b: &Polynomial) -> Result<Vec<Polynomial>, PolyError> {
        (0..self.m()).map(|j| b.lie(&self.g.column(j))).collect()
    }

    /// Closed-loop vector field `f(x) + g(x) u` at a point.
    pub fn vector_field(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dx = self.f.eval(x);
        for (i, d) in dx.iter_mut().enumerate() {
            for (j, &uj) in u.iter().enumerate() {
                *d += self.g.get(i, j).eval(x) * uj;
            }
        }
        dx
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProgramError {
    #[error("variable index {index} out of range for {num_vars} variables")]
    IndexOutOfRange { index: usize, num_vars: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("objective has {got} coefficients, expected {expected}")]
    ObjectiveLength { expected: usize, got: usize },
    #[error("empty bound interval for variable {0}")]
    EmptyBounds(usize),
}

/// Sparse row `Σ coeff · x_index ⋚ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, a)| a * x[i]).sum()
    }
}

/// `x[sq]² ≤ x[cap]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadIneq {
    pub sq: usize,
    pub cap: usize,
}

/// `x[sq]² ≤ x[y] · x[z]` with `x[y], x[z] ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedCone {
    pub sq: usize,
    pub y: usize,
    pub z: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// A convex program in maximization form:
///
/// ```text
/// maximize   cᵀx
/// subject to A x = b,  G x ≤ h,  x_i² ≤ x_j,  x_i² ≤ x_j x_k (x_j, x_k ≥ 0),  l ≤ x ≤ u
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexProgram {
    pub num_vars: usize,
    pub linear_objective: Vec<f64>,
    pub equalities: Vec<LinearConstraint>,
    pub linear_ineqs: Vec<LinearConstraint>,
    pub quad_ineqs: Vec<QuadIneq>,
    pub rotated_cones: Vec<RotatedCone>,
    pub bounds: Vec<Bounds>,
}

impl ConvexProgram {
    pub fn new(num_vars: usize) -> Self {
        ConvexProgram {
            num_vars,
            linear_objective: vec![0.0; num_vars],
            equalities: Vec::new(),
            linear_ineqs: Vec::new(),
            quad_ineqs: Vec::new(),
            rotated_cones: Vec::new(),
            bounds: vec![Bounds::default(); num_vars],
        }
    }

    pub fn maximize(&mut self, coeffs: &[(usize, f64)]) -> &mut Self {
        self.linear_objective = vec![0.0; self.num_vars];
        for &(i, c) in coeffs {
            self.linear_objective[i] += c;
        }
        self
    }

    pub fn add_equality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> &mut Self {
        self.equalities.push(LinearConstraint { coeffs, rhs });
        self
    }

    /// `Σ coeff · x ≤ rhs`.
    pub fn add_linear_ineq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> &mut Self {
        self.linear_ineqs.push(LinearConstraint { coeffs, rhs });
        self
    }

    pub fn add_quad_ineq(&mut self, sq: usize, cap: usize) -> &mut Self {
        self.quad_ineqs.push(QuadIneq { sq, cap });
        self
    }

    pub fn add_rotated_cone(&mut self, sq: usize, y: usize, z: usize) -> &mut Self {
        self.rotated_cones.push(RotatedCone { sq, y, z });
        self
    }

    pub fn set_bounds(&mut self, var: usize, lower: Option<f64>, upper: Option<f64>) -> &mut Self {
        self.bounds[var] = Bounds { lower, upper };
        self
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.num_vars;
        let idx = |index: usize| {
            if index < n {
                Ok(())
            } else {
                Err(ProgramError::IndexOutOfRange { index, num_vars: n })
            }
        };
        if self.linear_objective.len() != n {
            return Err(ProgramError::ObjectiveLength { expected: n, got: self.linear_objective.len() });
        }
        if self.bounds.len() != n {
            return Err(ProgramError::IndexOutOfRange { index: self.bounds.len().max(1) - 1, num_vars: n });
        }
        if self.linear_objective.iter().any(|c| !c.is_finite()) {
            return Err(ProgramError::NonFinite("objective"));
        }
        for (rows, what) in [(&self.equalities, "equality"), (&self.linear_ineqs, "linear inequality")] {
            for row in rows {
                if !row.rhs.is_finite() || row.coeffs.iter().any(|(_, a)| !a.is_finite()) {
                    return Err(ProgramError::NonFinite(what));
                }
                row.coeffs.iter().try_for_each(|&(i, _)| idx(i))?;
            }
        }
        for q in &self.quad_ineqs {
            idx(q.sq)?;
            idx(q.cap)?;
        }
        for c in &self.rotated_cones {
            idx(c.sq)?;
            idx(c.y)?;
            idx(c.z)?;
        }
        for (i, b) in self.bounds.iter().enumerate() {
            if b.lower.is_some_and(|l| l.is_nan()) || b.upper.is_some_and(|u| u.is_nan()) {
                return Err(ProgramError::NonFinite("bounds"));
            }
            if let (Some(l), Some(u)) = (b.lower, b.upper) {
                if l > u {
                    return Err(ProgramError::EmptyBounds(i));
                }
            }
        }
        Ok(())
    }

    /// Number of log terms in the barrier; the duality gap on the central
    /// path is this count divided by `t`.
    pub fn barrier_degree(&self) -> usize {
        let bounds: usize =
            self.bounds.iter().map(|b| usize::from(b.lower.is_some()) + usize::from(b.upper.is_some())).sum();
        self.linear_ineqs.len() + bounds + self.quad_ineqs.len() + 4 * self.rotated_cones.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.linear_objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest constraint violation at `x` (zero when feasible). Equalities
    /// count by absolute residual.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for row in &self.equalities {
            worst = worst.max((row.dot(x) - row.rhs).abs());
        }
        for row in &self.linear_ineqs {
            worst = worst.max(row.dot(x) - row.rhs);
        }
        for q in &self.quad_ineqs {
            worst = worst.max(x[q.sq] * x[q.sq] - x[q.cap]);
        }
        for c in &self.rotated_cones {
            worst = worst.max(x[c.sq] * x[c.sq] - x[c.y] * x[c.z]).max(-x[c.y]).max(-x[c.z]);
        }
        for (b, &v) in self.bounds.iter().zip(x) {
            if let Some(l) = b.lower {
                worst = worst.max(l - v);
            }
            if let Some(u) = b.upper {
                worst = worst.max(v - u);
            }
        }
        worst
    }
}

//! Log-barrier terms over affine arguments.
//!
//! Every inequality of a [`ConvexProgram`] becomes one or more terms
//! `−log h(z)` with `h` positive on the interior. During phase I the extra
//! coordinate `s` is added to every `h` argument, which keeps each term in
//! the same class.

use super::program::ConvexProgram;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct Affine {
    coeffs: Vec<(usize, f64)>,
    constant: f64,
}

impl Affine {
    fn var(i: usize, shift: Option<usize>) -> Self {
        Affine { coeffs: vec![(i, 1.0)], constant: 0.0 }.shifted(shift)
    }

    fn shifted(mut self, shift: Option<usize>) -> Self {
        if let Some(s) = shift {
            self.coeffs.push((s, 1.0));
        }
        self
    }

    fn eval(&self, z: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|&(i, a)| a * z[i]).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Term {
    /// `h = a(z)`
    Linear(Affine),
    /// `h = cap(z) − z_sq²`
    Quad { sq: usize, cap: Affine },
    /// `h = y(z) · w(z) − z_sq²`; the sign conditions on `y`, `w` are
    /// separate linear terms.
    Cone { sq: usize, y: Affine, w: Affine },
}

impl Term {
    fn value(&self, z: &[f64]) -> f64 {
        match self {
            Term::Linear(a) => a.eval(z),
            Term::Quad { sq, cap } => cap.eval(z) - z[*sq] * z[*sq],
            Term::Cone { sq, y, w } => y.eval(z) * w.eval(z) - z[*sq] * z[*sq],
        }
    }

    /// Barrier degree of the term.
    fn degree(&self) -> usize {
        match self {
            Term::Cone { .. } => 2,
            _ => 1,
        }
    }
}

/// Collection of barrier terms, optionally shifted by a phase-I slack.
#[derive(Debug, Clone)]
pub(crate) struct Barrier {
    pub(crate) dim: usize,
    terms: Vec<Term>,
}

pub(crate) struct BarrierEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Barrier {
    /// Terms of `prog`. When `shift` is set, `z[shift]` is added to every
    /// slack and `dim` is `prog.num_vars + 1`.
    pub(crate) fn from_program(prog: &ConvexProgram, shift: Option<usize>) -> Self {
        let dim = prog.num_vars + usize::from(shift.is_some());
        let mut terms = Vec::new();
        for row in &prog.linear_ineqs {
            let coeffs = row.coeffs.iter().map(|&(i, a)| (i, -a)).collect();
            terms.push(Term::Linear(Affine { coeffs, constant: row.rhs }.shifted(shift)));
        }
        for (i, b) in prog.bounds.iter().enumerate() {
            if let Some(l) = b.lower {
                terms.push(Term::Linear(Affine { coeffs: vec![(i, 1.0)], constant: -l }.shifted(shift)));
            }
            if let Some(u) = b.upper {
                terms.push(Term::Linear(Affine { coeffs: vec![(i, -1.0)], constant: u }.shifted(shift)));
            }
        }
        for q in &prog.quad_ineqs {
            terms.push(Term::Quad { sq: q.sq, cap: Affine::var(q.cap, shift) });
        }
        for c in &prog.rotated_cones {
            terms.push(Term::Cone { sq: c.sq, y: Affine::var(c.y, shift), w: Affine::var(c.z, shift) });
            terms.push(Term::Linear(Affine::var(c.y, shift)));
            terms.push(Term::Linear(Affine::var(c.z, shift)));
        }
        Barrier { dim, terms }
    }

    /// Adds `z[var] + offset > 0`.
    pub(crate) fn push_floor(&mut self, var: usize, offset: f64) {
        self.terms.push(Term::Linear(Affine { coeffs: vec![(var, 1.0)], constant: offset }));
    }

    /// Adds `lo < z[var] < hi`, unaffected by the phase-I shift.
    pub(crate) fn push_box(&mut self, var: usize, lo: f64, hi: f64) {
        self.terms.push(Term::Linear(Affine { coeffs: vec![(var, 1.0)], constant: -lo }));
        self.terms.push(Term::Linear(Affine { coeffs: vec![(var, -1.0)], constant: hi }));
    }

    pub(crate) fn degree(&self) -> usize {
        self.terms.iter().map(Term::degree).sum()
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Smallest slack `h(z)` over all terms.
    pub(crate) fn min_slack(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(z)).fold(f64::INFINITY, f64::min)
    }

    /// Barrier value alone, `None` outside the domain.
    pub(crate) fn value(&self, z: &[f64]) -> Option<f64> {
        let mut total = 0.0;
        for t in &self.terms {
            let h = t.value(z);
            if h.is_nan() || h <= 0.0 {
                return None;
            }
            total -= h.ln();
        }
        Some(total)
    }

    /// Smallest shift `s` making every term strictly positive at `x`.
    pub(crate) fn required_shift(&self, z: &[f64], shift: usize) -> f64 {
        let mut probe = z.to_vec();
        probe[shift] = 0.0;
        self.terms
            .iter()
            .map(|t| match t {
                Term::Linear(a) => -a.eval(&probe),
                Term::Quad { sq, cap } => probe[*sq] * probe[*sq] - cap.eval(&probe),
                Term::Cone { sq, y, w } => (-y.eval(&probe)).max(-w.eval(&probe)) + probe[*sq].abs(),
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn eval(&self, z: &[f64]) -> Option<BarrierEval> {
        let n = self.dim;
        let mut value = 0.0;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let mut dh: Vec<(usize, f64)> = Vec::new();
        for t in &self.terms {
            let h = t.value(z);
            if h.is_nan() || h <= 0.0 {
                return None;
            }
            value -= h.ln();
            dh.clear();
            match t {
                Term::Linear(a) => dh.extend_from_slice(&a.coeffs),
                Term::Quad { sq, cap } => {
                    dh.extend_from_slice(&cap.coeffs);
                    dh.push((*sq, -2.0 * z[*sq]));
                    hess[(*sq, *sq)] += 2.0 / h;
                }
                Term::Cone { sq, y, w } => {
                    let (yv, wv) = (y.eval(z), w.eval(z));
                    dh.extend(y.coeffs.iter().map(|&(i, a)| (i, a * wv)));
                    dh.extend(w.coeffs.iter().map(|&(i, a)| (i, a * yv)));
                    dh.push((*sq, -2.0 * z[*sq]));
                    // −∇²h / h with ∇²h = ∇y∇wᵀ + ∇w∇yᵀ − 2 e_sq e_sqᵀ
                    for &(i, a) in &y.coeffs {
                        for &(j, b) in &w.coeffs {
                            hess[(i, j)] -= a * b / h;
                            hess[(j, i)] -= a * b / h;
                        }
                    }
                    hess[(*sq, *sq)] += 2.0 / h;
                }
            }
            let inv = 1.0 / h;
            for &(i, a) in &dh {
                grad[i] -= a * inv;
                for &(j, b) in &dh {
                    hess[(i, j)] += a * b * inv * inv;
                }
            }
        }
        Some(BarrierEval { value, grad, hess })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff_check(barrier: &Barrier, z: &[f64]) {
        let ev = barrier.eval(z).unwrap();
        let step = 1e-6;
        for i in 0..z.len() {
            let mut plus = z.to_vec();
            let mut minus = z.to_vec();
            plus[i] += step;
            minus[i] -= step;
            let fd = (barrier.value(&plus).unwrap() - barrier.value(&minus).unwrap()) / (2.0 * step);
            assert!((fd - ev.grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "grad {i}: {fd} vs {}", ev.grad[i]);
            let gp = barrier.eval(&plus).unwrap().grad;
            let gm = barrier.eval(&minus).unwrap().grad;
            for j in 0..z.len() {
                let fd = (gp[j] - gm[j]) / (2.0 * step);
                assert!((fd - ev.hess[(j, i)]).abs() < 1e-4 * (1.0 + fd.abs()), "hess ({j},{i})");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut prog = ConvexProgram::new(4);
        prog.add_linear_ineq(vec![(0, 1.0), (3, -2.0)], 3.0)
            .add_quad_ineq(0, 1)
            .add_rotated_cone(3, 1, 2)
            .set_bounds(2, Some(-1.0), Some(4.0));
        let z = [0.3, 1.2, 0.8, 0.5];
        finite_diff_check(&Barrier::from_program(&prog, None), &z);

        let mut shifted = Barrier::from_program(&prog, Some(4));
        shifted.push_floor(4, 1.0);
        finite_diff_check(&shifted, &[0.3, 1.2, 0.8, 0.5, 0.2]);
    }

    #[test]
    fn cone_degree_is_four() {
        let mut prog = ConvexProgram::new(3);
        prog.add_rotated_cone(0, 1, 2);
        let barrier = Barrier::from_program(&prog, None);
        assert_eq!(barrier.degree(), 4);
        assert_eq!(prog.barrier_degree(), 4);
    }

    #[test]
    fn required_shift_makes_interior() {
        let mut prog = ConvexProgram::new(3);
        prog.add_rotated_cone(0, 1, 2).add_quad_ineq(1, 2).add_linear_ineq(vec![(0, 1.0)], -5.0);
        let barrier = Barrier::from_program(&prog, Some(3));
        let mut z = vec![2.0, -1.0, 0.5, 0.0];
        z[3] = barrier.required_shift(&z, 3) + 1e-6;
        assert!(barrier.min_slack(&z) > 0.0);
    }
}

//! Log-barrier interior-point solver for small dense convex programs.
//!
//! Supported constraint classes are linear equalities, linear inequalities,
//! simple quadratic caps `x_i² ≤ x_j`, rotated cones `x_i² ≤ x_j x_k` and
//! variable bounds. Rotated cones enter the barrier as
//! `−log(x_j x_k − x_i²) − log x_j − log x_k`.
//!
//! [`solve`] first runs [`phase1`], which minimizes a uniform constraint
//! relaxation `s` and either yields a strictly interior point or reports the
//! minimal violation. The barrier path then starts at `μ = barrier_mu` and
//! shrinks by `mu_factor` until the duality-gap bound `m·μ` drops below `tol`.

mod barrier;
mod program;

pub use program::{Bounds, ConvexProgram, LinearConstraint, ProgramError, QuadIneq, RotatedCone};

use barrier::Barrier;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Initial barrier weight `μ`.
    pub barrier_mu: f64,
    pub mu_factor: f64,
    /// Target duality gap.
    pub tol: f64,
    /// Newton steps allowed per centering.
    pub max_iter: usize,
    pub feas_tol: f64,
    pub interior_eps: f64,
    /// Phase-I optimum above this value declares the program infeasible.
    pub infeasibility_threshold: f64,
    /// Lower bound `s ≥ −phase1_floor` keeping phase I bounded.
    pub phase1_floor: f64,
    /// Phase I also confines `x` to `|x_i − x0_i| ≤ radius · (1 + ‖x0‖∞)`
    /// around the least-norm equality solution `x0`.
    pub phase1_radius: f64,
    /// Centering stops when half the squared Newton decrement is below this.
    pub centering_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            barrier_mu: 1.0,
            mu_factor: 10.0,
            tol: 1e-8,
            max_iter: 200,
            feas_tol: 1e-8,
            interior_eps: 1e-10,
            infeasibility_threshold: 1e-6,
            phase1_floor: 1.0,
            phase1_radius: 1e4,
            centering_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Duality-gap bound `m·μ` plus the equality residual ∞-norm.
    pub kkt_residual: f64,
    /// Newton steps over both phases.
    pub iterations: usize,
    /// Minimized uniform constraint relaxation from phase I, clipped at zero.
    pub phase1_violation: f64,
    /// Objective after each outer barrier iteration.
    pub objective_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("centering did not converge within {0} Newton steps")]
    MaxIter(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Phase1Outcome {
    Feasible { point: Vec<f64>, iterations: usize },
    Infeasible { violation: f64 },
}

/// Equality system with dependent rows removed.
struct Equalities {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Equalities {
    /// Keeps a maximal independent subset of rows (Gram–Schmidt with
    /// re-orthogonalization); returns the dropped rows.
    fn reduce(prog: &ConvexProgram, cols: usize) -> (Self, Vec<usize>) {
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for (r, row) in prog.equalities.iter().enumerate() {
            let mut dense = DVector::zeros(cols);
            for &(i, a) in &row.coeffs {
                dense[i] += a;
            }
            let norm = dense.norm();
            let mut resid = dense.clone();
            for _ in 0..2 {
                for q in &basis {
                    let proj = q.dot(&resid);
                    resid.axpy(-proj, q, 1.0);
                }
            }
            let rn = resid.norm();
            if norm > 0.0 && rn > 1e-10 * norm {
                basis.push(resid / rn);
                kept.push((dense, row.rhs));
            } else {
                dropped.push(r);
            }
        }
        let mut a = DMatrix::zeros(kept.len(), cols);
        let mut b = DVector::zeros(kept.len());
        for (r, (row, rhs)) in kept.into_iter().enumerate() {
            a.set_row(r, &row.transpose());
            b[r] = rhs;
        }
        (Equalities { a, b }, dropped)
    }

    fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Least-norm solution of `A x = b`.
    fn least_norm(&self) -> Option<DVector<f64>> {
        if self.rows() == 0 {
            return Some(DVector::zeros(self.a.ncols()));
        }
        let gram = &self.a * self.a.transpose();
        let y = gram.cholesky()?.solve(&self.b);
        Some(self.a.transpose() * y)
    }

    fn residual(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.a * z - &self.b
    }

    /// Orthonormal basis of `{d : A d = 0}` as columns.
    fn null_basis(&self) -> DMatrix<f64> {
        let (p, n) = self.a.shape();
        if p == 0 {
            return DMatrix::identity(n, n);
        }
        // pad to square so the SVD returns a full right basis
        let mut padded = DMatrix::zeros(n, n);
        padded.view_mut((0, 0), (p, n)).copy_from(&self.a);
        let svd = padded.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        let cols: Vec<DVector<f64>> = order[..n - p].iter().map(|&i| v_t.row(i).transpose()).collect();
        if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }
}

struct Centering {
    steps: usize,
}

/// Minimizes `t·cᵀz + φ(z)` over `{A z = b}` by Newton's method from an
/// interior point. Steps live in the null space of `A`, so the reduced
/// Hessian `Nᵀ∇²φ N` is positive definite and factored by Cholesky.
fn center(
    barrier: &Barrier,
    null: &DMatrix<f64>,
    cost: &DVector<f64>,
    t: f64,
    z: &mut DVector<f64>,
    cfg: &SolverConfig,
) -> Result<Centering, SolverError> {
    let mut steps = 0;
    if null.ncols() == 0 {
        return Ok(Centering { steps });
    }
    loop {
        let ev = barrier
            .eval(z.as_slice())
            .ok_or_else(|| SolverError::NumericalFailure("iterate left the barrier domain".into()))?;
        let grad = cost * t + &ev.grad;
        let reduced_grad = null.transpose() * &grad;
        let reduced_hess = null.transpose() * &ev.hess * null;
        let dw = solve_spd(reduced_hess, &(-&reduced_grad))?;
        let dz = null * &dw;

        let decrement = (-reduced_grad.dot(&dw)).max(0.0);
        if decrement / 2.0 <= cfg.centering_tol {
            return Ok(Centering { steps });
        }
        if steps >= cfg.max_iter {
            return Err(SolverError::MaxIter(cfg.max_iter));
        }
        steps += 1;

        // backtracking: stay in the domain, then Armijo on the change in
        // t·cᵀz + φ computed without forming the large absolute values
        let slope = -decrement;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &*z + &dz * step;
            if let Some(phi) = barrier.value(trial.as_slice()) {
                // measured on the rounded displacement so a step lost to
                // rounding is not credited
                let change = t * cost.dot(&(&trial - &*z)) + (phi - ev.value);
                if change <= 0.01 * step * slope {
                    *z = trial;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // rounding floor of the barrier value near the end of the path
            if decrement / 2.0 <= 1e-6 {
                return Ok(Centering { steps });
            }
            return Err(SolverError::NumericalFailure(format!(
                "line search stalled with Newton decrement {decrement:e}"
            )));
        }
    }
}

/// Cholesky solve with diagonal regularization as a fallback.
fn solve_spd(mut m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let mut delta = 0.0;
    for _ in 0..8 {
        if let Some(ch) = m.clone().cholesky() {
            let sol = ch.solve(rhs);
            if sol.iter().all(|x| x.is_finite()) {
                return Ok(sol);
            }
        }
        let next = if delta == 0.0 { 1e-14 * scale } else { delta * 100.0 };
        for i in 0..n {
            m[(i, i)] += next - delta;
        }
        delta = next;
    }
    Err(SolverError::NumericalFailure("reduced Hessian is not positive definite".into()))
}

/// Runs the barrier path from interior `z` and returns the final `μ`.
fn barrier_path(
    barrier: &Barrier,
    null: &DMatrix<f64>,
    cost: &DVector<f64>,
    z: &mut DVector<f64>,
    cfg: &SolverConfig,
    mut on_outer: impl FnMut(&DVector<f64>),
) -> Result<(f64, usize), SolverError> {
    let m = barrier.degree().max(1) as f64;
    let mut mu = cfg.barrier_mu;
    let mut steps = 0;
    loop {
        steps += center(barrier, null, cost, 1.0 / mu, z, cfg)?.steps;
        on_outer(z);
        if m * mu <= cfg.tol {
            return Ok((mu, steps));
        }
        mu /= cfg.mu_factor;
    }
}

/// Finds a strictly interior point of `prog` or measures its infeasibility.
///
/// Minimizes `s` subject to every inequality relaxed by `s`, the equalities
/// kept exact and `s ≥ −phase1_floor`. A phase-I optimum below
/// `−interior_eps` yields a point whose slacks all exceed `interior_eps`; an
/// optimum above `infeasibility_threshold` is reported as infeasible.
/// Anything in between cannot be decided and is a numerical failure.
pub fn phase1(prog: &ConvexProgram, cfg: &SolverConfig) -> Result<Phase1Outcome, SolverError> {
    prog.validate()?;
    let n = prog.num_vars;
    let (eq, dropped) = Equalities::reduce(prog, n + 1);
    let x0 = eq
        .least_norm()
        .ok_or_else(|| SolverError::NumericalFailure("equality Gram matrix is singular".into()))?;

    let inconsistency = dropped
        .iter()
        .map(|&r| {
            let row = &prog.equalities[r];
            (row.dot(&x0.as_slice()[..n]) - row.rhs).abs() / row.rhs.abs().max(1.0)
        })
        .fold(0.0_f64, f64::max);
    if inconsistency > 1e-9 {
        return Ok(Phase1Outcome::Infeasible { violation: inconsistency });
    }

    let mut barrier = Barrier::from_program(prog, Some(n));
    if barrier.is_empty() {
        return Ok(Phase1Outcome::Feasible { point: x0.as_slice()[..n].to_vec(), iterations: 0 });
    }
    barrier.push_floor(n, cfg.phase1_floor);
    let radius = cfg.phase1_radius * (1.0 + x0.amax());
    for i in 0..n {
        barrier.push_box(i, x0[i] - radius, x0[i] + radius);
    }

    let mut z = x0;
    z[n] = barrier.required_shift(z.as_slice(), n).max(-cfg.phase1_floor) + 1.0;
    let mut cost = DVector::zeros(n + 1);
    cost[n] = 1.0;

    let (_, steps) = barrier_path(&barrier, &eq.null_basis(), &cost, &mut z, cfg, |_| {})?;
    let s = z[n];
    if s > cfg.infeasibility_threshold {
        return Ok(Phase1Outcome::Infeasible { violation: s });
    }
    if s >= -cfg.interior_eps {
        return Err(SolverError::NumericalFailure(format!(
            "cannot decide feasibility: phase-I optimum {s:e} lies between the interior and infeasibility thresholds"
        )));
    }
    let point = z.as_slice()[..n].to_vec();
    let interior = Barrier::from_program(prog, None).min_slack(&point);
    if interior < cfg.interior_eps {
        return Err(SolverError::NumericalFailure(format!("phase-I point has slack {interior:e}")));
    }
    Ok(Phase1Outcome::Feasible { point, iterations: steps })
}

/// Maximizes the linear objective of `prog`.
///
/// Structural problems with the program are returned as errors; every
/// solver-side outcome is encoded in [`SolveOutcome::status`].
pub fn solve(prog: &ConvexProgram, cfg: &SolverConfig) -> Result<SolveOutcome, ProgramError> {
    prog.validate()?;
    let n = prog.num_vars;
    let failed = |status, violation: f64, iterations| SolveOutcome {
        status,
        x: vec![f64::NAN; n],
        objective: f64::NAN,
        kkt_residual: f64::INFINITY,
        iterations,
        phase1_violation: violation,
        objective_history: Vec::new(),
    };

    let (start, phase1_steps) = match phase1(prog, cfg) {
        Ok(Phase1Outcome::Feasible { point, iterations }) => (point, iterations),
        Ok(Phase1Outcome::Infeasible { violation }) => return Ok(failed(SolveStatus::Infeasible, violation, 0)),
        Err(SolverError::MaxIter(_)) => return Ok(failed(SolveStatus::MaxIter, f64::NAN, 0)),
        Err(SolverError::NumericalFailure(_)) => return Ok(failed(SolveStatus::NumericalFailure, f64::NAN, 0)),
        Err(SolverError::Program(e)) => return Err(e),
    };

    let barrier = Barrier::from_program(prog, None);
    let (eq, _) = Equalities::reduce(prog, n);
    let mut z = DVector::from_vec(start);
    let cost = DVector::from_iterator(n, prog.linear_objective.iter().map(|c| -c));

    if barrier.is_empty() {
        // affine feasible set: bounded only if the objective is constant on it
        let status = if null_space_component(&eq, &cost) <= 1e-12 * cost.amax().max(1.0) {
            SolveStatus::Optimal
        } else {
            SolveStatus::NumericalFailure
        };
        let x = z.as_slice().to_vec();
        return Ok(SolveOutcome {
            status,
            objective: prog.objective_value(&x),
            kkt_residual: eq.residual(&z).amax(),
            x,
            iterations: phase1_steps,
            phase1_violation: 0.0,
            objective_history: Vec::new(),
        });
    }

    let mut history = Vec::new();
    let path = barrier_path(&barrier, &eq.null_basis(), &cost, &mut z, cfg, |z| history.push(prog.objective_value(z.as_slice())));
    let x = z.as_slice().to_vec();
    let (status, mu, steps) = match path {
        Ok((mu, steps)) => (SolveStatus::Optimal, mu, steps),
        Err(SolverError::MaxIter(_)) => (SolveStatus::MaxIter, f64::NAN, 0),
        Err(_) => (SolveStatus::NumericalFailure, f64::NAN, 0),
    };
    let kkt_residual = barrier.degree() as f64 * mu + eq.residual(&z).amax();
    let status = if status == SolveStatus::Optimal && prog.max_violation(&x) > cfg.feas_tol {
        SolveStatus::NumericalFailure
    } else {
        status
    };
    Ok(SolveOutcome {
        status,
        objective: prog.objective_value(&x),
        kkt_residual,
        x,
        iterations: phase1_steps + steps,
        phase1_violation: 0.0,
        objective_history: history,
    })
}

fn null_space_component(eq: &Equalities, v: &DVector<f64>) -> f64 {
    if eq.rows() == 0 {
        return v.amax();
    }
    let gram = &eq.a * eq.a.transpose();
    match gram.cholesky() {
        Some(ch) => {
            let y = ch.solve(&(&eq.a * v));
            (v - eq.a.transpose() * y).amax()
        }
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn phase1_box_midpoint() {
        let mut prog = ConvexProgram::new(1);
        prog.set_bounds(0, Some(0.0), Some(1.0));
        match phase1(&prog, &cfg()).unwrap() {
            Phase1Outcome::Feasible { point, .. } => assert!((point[0] - 0.5).abs() < 1e-9, "{point:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn phase1_contradictory_halfspaces() {
        let mut prog = ConvexProgram::new(1);
        prog.add_linear_ineq(vec![(0, 1.0)], 0.0).add_linear_ineq(vec![(0, -1.0)], -1.0);
        match phase1(&prog, &cfg()).unwrap() {
            Phase1Outcome::Infeasible { violation } => {
                assert!(violation >= 0.5 - 1e-8, "{violation}");
                assert!(violation <= 0.5 + 1e-7, "{violation}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn phase1_inconsistent_equalities() {
        let mut prog = ConvexProgram::new(2);
        prog.add_equality(vec![(0, 1.0), (1, 1.0)], 1.0).add_equality(vec![(0, 2.0), (1, 2.0)], 3.0);
        assert!(matches!(phase1(&prog, &cfg()).unwrap(), Phase1Outcome::Infeasible { .. }));
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let mut prog = ConvexProgram::new(2);
        prog.maximize(&[(0, 1.0)])
            .add_equality(vec![(0, 1.0), (1, 1.0)], 1.0)
            .add_equality(vec![(0, 2.0), (1, 2.0)], 2.0)
            .set_bounds(0, Some(0.0), Some(0.75))
            .set_bounds(1, Some(0.0), None);
        let out = solve(&prog, &cfg()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.x[0] - 0.75).abs() < 1e-7);
        assert!((out.x[1] - 0.25).abs() < 1e-7);
    }

    #[test]
    fn quad_cap_with_identity() {
        // maximize x s.t. x² ≤ y, y = x, x ∈ [0, 2]
        let mut prog = ConvexProgram::new(2);
        prog.maximize(&[(0, 1.0)])
            .add_equality(vec![(1, 1.0), (0, -1.0)], 0.0)
            .add_quad_ineq(0, 1)
            .set_bounds(0, Some(0.0), Some(2.0));
        let out = solve(&prog, &cfg()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.x[0] - 1.0).abs() < 1e-6, "{:?}", out.x);
        assert!(out.kkt_residual <= 1e-8);
    }

    #[test]
    fn separable_lp() {
        let mut prog = ConvexProgram::new(2);
        prog.maximize(&[(0, 1.0), (1, 1.0)])
            .add_linear_ineq(vec![(0, 1.0)], 0.3)
            .add_linear_ineq(vec![(1, 1.0)], 0.4);
        let out = solve(&prog, &cfg()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.objective - 0.7).abs() < 1e-8, "{}", out.objective);
    }

    #[test]
    fn rotated_cone_boundary() {
        let mut prog = ConvexProgram::new(3);
        prog.maximize(&[(0, 1.0)])
            .add_rotated_cone(0, 1, 2)
            .add_linear_ineq(vec![(1, 1.0)], 1.0)
            .add_linear_ineq(vec![(2, 1.0)], 1.0)
            .set_bounds(1, Some(0.0), None)
            .set_bounds(2, Some(0.0), None);
        let out = solve(&prog, &cfg()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.x[0] - 1.0).abs() < 1e-6, "{:?}", out.x);
    }

    #[test]
    fn objective_history_is_monotone() {
        let mut prog = ConvexProgram::new(3);
        prog.maximize(&[(0, 1.0), (1, -0.2)])
            .add_rotated_cone(0, 1, 2)
            .add_linear_ineq(vec![(1, 1.0), (2, 1.0)], 3.0);
        let out = solve(&prog, &cfg()).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        for w in out.objective_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", out.objective_history);
        }
    }

    #[test]
    fn infeasible_solve_reports_violation() {
        let mut prog = ConvexProgram::new(1);
        prog.maximize(&[(0, 1.0)]).add_linear_ineq(vec![(0, 1.0)], 0.0).add_linear_ineq(vec![(0, -1.0)], -1.0);
        let out = solve(&prog, &cfg()).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
        assert!(out.phase1_violation > cfg().infeasibility_threshold);
    }

    #[test]
    fn touching_constraints_are_undecided() {
        // x ≤ 0 and x ≥ 0: feasible but without interior
        let mut prog = ConvexProgram::new(1);
        prog.add_linear_ineq(vec![(0, 1.0)], 0.0).add_linear_ineq(vec![(0, -1.0)], 0.0);
        assert!(matches!(phase1(&prog, &cfg()), Err(SolverError::NumericalFailure(_))));
        assert_eq!(solve(&prog, &cfg()).unwrap().status, SolveStatus::NumericalFailure);
    }

    #[test]
    fn malformed_program_is_rejected() {
        let mut prog = ConvexProgram::new(1);
        prog.add_quad_ineq(0, 3);
        assert!(matches!(solve(&prog, &cfg()), Err(ProgramError::IndexOutOfRange { .. })));
    }
}

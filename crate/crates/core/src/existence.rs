//! Existence certificates from the convex relaxation of the load flow.
//!
//! The relaxation lifts `v_n²` to `α_n` and `v_n v_k` to `β_nk`:
//!
//! ```text
//! maximize   Σ v_n
//! subject to G_n α_n − Σ_{k∈K(n)\{0}} g_nk β_nk − g_n0 v0 I_K(n)(0) v_n = p_n
//!            v_n² ≤ α_n,   β_nk ≥ 0,   β_nk² ≤ α_n α_k
//!            v_min ≤ v_n ≤ v_max,   |g_nk (v_n − v_k)| ≤ i_max_nk
//! ```
//!
//! with `G_n = Σ_{k∈K(n)} g_nk`. When `2 v_min > v_max > v0 > v_min`, every
//! optimizer is tight (`α_n = v_n²`, `β_nk = v_n v_k`), so its voltages solve
//! the load flow. Tightness and strict security are re-checked numerically
//! before a solution is reported.

use crate::cvxsolver::{self, ConvexProgram, ProgramError, SolveOutcome, SolveStatus, SolverConfig};
use crate::loadflow::{self, inf_norm, NewtonConfig, SecurityMode, VoltageProfile};
use crate::netmodel::{check_condition1, Network, Verdict, SLACK};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Variable indices of the relaxation. Bus `n` maps to slot `n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct P1VarMap {
    pub v: Vec<usize>,
    pub alpha: Vec<usize>,
    /// `β_nk` for PQ pairs `(n, k)`; both orientations are separate variables.
    pub beta: BTreeMap<(usize, usize), usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P1Instance {
    pub program: ConvexProgram,
    pub var_map: P1VarMap,
}

impl P1Instance {
    pub fn voltages(&self, x: &[f64]) -> Vec<f64> {
        self.var_map.v.iter().map(|&i| x[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExistenceStatus {
    SolutionFound,
    /// Existence not certified. This is not a proof that no secure solution
    /// exists.
    P1Infeasible,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceCertificate {
    pub status: ExistenceStatus,
    pub voltages: Option<VoltageProfile>,
    pub tightness_alpha: Option<f64>,
    pub tightness_beta: Option<f64>,
    pub residual_after_polish: Option<f64>,
    pub strict_security: bool,
    pub condition1: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightnessReport {
    pub alpha_gap: f64,
    pub beta_gap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExistenceConfig {
    pub solver: SolverConfig,
    pub newton: NewtonConfig,
    /// Strictness margin for the final security check.
    pub margin: f64,
    /// Tightness tolerance before scaling by `max(1, ‖p‖∞)`.
    pub tight_tol: f64,
}

impl Default for ExistenceConfig {
    fn default() -> Self {
        ExistenceConfig {
            solver: SolverConfig::default(),
            newton: NewtonConfig::default(),
            margin: 1e-9,
            tight_tol: 1e-6,
        }
    }
}

impl ExistenceConfig {
    pub fn scaled_tight_tol(&self, net: &Network) -> f64 {
        self.tight_tol * inf_norm(&net.injections()).max(1.0)
    }
}

pub fn build_p1(net: &Network) -> P1Instance {
    let n_pq = net.n_pq();
    let v: Vec<usize> = (0..n_pq).collect();
    let alpha: Vec<usize> = (n_pq..2 * n_pq).collect();
    let mut beta = BTreeMap::new();
    for n in 1..=n_pq {
        for nb in net.pq_neighbors(n) {
            let next = 2 * n_pq + beta.len();
            beta.insert((n, nb.bus), next);
        }
    }
    let mut prog = ConvexProgram::new(2 * n_pq + beta.len());
    let limits = net.limits();
    let v0 = net.v0();

    prog.maximize(&v.iter().map(|&i| (i, 1.0)).collect::<Vec<_>>());
    for n in 1..=n_pq {
        let mut row = vec![(alpha[n - 1], net.total_conductance(n))];
        row.extend(net.pq_neighbors(n).map(|nb| (beta[&(n, nb.bus)], -nb.conductance)));
        if net.touches_slack(n) {
            row.push((v[n - 1], -net.slack_conductance(n) * v0));
        }
        prog.add_equality(row, net.injection(n));
        prog.add_quad_ineq(v[n - 1], alpha[n - 1]);
        prog.set_bounds(v[n - 1], Some(limits.v_min), Some(limits.v_max));
    }
    for (&(n, k), &b) in &beta {
        prog.set_bounds(b, Some(0.0), None);
        prog.add_rotated_cone(b, alpha[n - 1], alpha[k - 1]);
    }
    for br in net.branches() {
        let g = br.conductance;
        let (a, b) = (br.from.max(br.to), br.from.min(br.to));
        if b == SLACK {
            prog.add_linear_ineq(vec![(v[a - 1], g)], br.current_limit + g * v0);
            prog.add_linear_ineq(vec![(v[a - 1], -g)], br.current_limit - g * v0);
        } else {
            prog.add_linear_ineq(vec![(v[a - 1], g), (v[b - 1], -g)], br.current_limit);
            prog.add_linear_ineq(vec![(v[a - 1], -g), (v[b - 1], g)], br.current_limit);
        }
    }
    P1Instance { program: prog, var_map: P1VarMap { v, alpha, beta } }
}

pub fn solve_p1(inst: &P1Instance, cfg: &SolverConfig) -> Result<SolveOutcome, ProgramError> {
    cvxsolver::solve(&inst.program, cfg)
}

/// Gaps `max |α_n − v_n²|` and `max |β_nk − v_n v_k|` at the solver point.
pub fn verify_tightness(inst: &P1Instance, out: &SolveOutcome, tight_tol: f64) -> TightnessReport {
    let x = &out.x;
    let map = &inst.var_map;
    let alpha_gap = map.v.iter().zip(&map.alpha).map(|(&v, &a)| (x[a] - x[v] * x[v]).abs()).fold(0.0, f64::max);
    let beta_gap = map
        .beta
        .iter()
        .map(|(&(n, k), &b)| (x[b] - x[map.v[n - 1]] * x[map.v[k - 1]]).abs())
        .fold(0.0, f64::max);
    let pass = alpha_gap <= tight_tol && beta_gap <= tight_tol;
    TightnessReport { alpha_gap, beta_gap, pass }
}

/// Turns a solver outcome into an existence certificate.
///
/// An optimal, tight point is polished by Newton's method and re-checked
/// against the strict security constraints. The certificate reports
/// `SolutionFound` only if the voltage-ordering hypothesis also holds.
pub fn refine_and_check(
    net: &Network,
    inst: &P1Instance,
    out: &SolveOutcome,
    cfg: &ExistenceConfig,
) -> ExistenceCertificate {
    let condition1 = check_condition1(net);
    let mut cert = ExistenceCertificate {
        status: ExistenceStatus::Undecided,
        voltages: None,
        tightness_alpha: None,
        tightness_beta: None,
        residual_after_polish: None,
        strict_security: false,
        condition1,
    };
    match out.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            cert.status = ExistenceStatus::P1Infeasible;
            return cert;
        }
        SolveStatus::MaxIter | SolveStatus::NumericalFailure => return cert,
    }

    let tight = verify_tightness(inst, out, cfg.scaled_tight_tol(net));
    cert.tightness_alpha = Some(tight.alpha_gap);
    cert.tightness_beta = Some(tight.beta_gap);
    if !tight.pass {
        return cert;
    }

    let Ok(polished) = loadflow::newton_solve(net, &inst.voltages(&out.x), &cfg.newton) else {
        return cert;
    };
    cert.residual_after_polish = Some(polished.profile.residual_norm);
    let security = loadflow::check_security(net, &polished.profile.values, SecurityMode::Strict, cfg.margin)
        .expect("polished profile has length N");
    cert.strict_security = security.ok();
    cert.voltages = Some(polished.profile);
    if cert.strict_security && condition1.holds {
        cert.status = ExistenceStatus::SolutionFound;
    }
    cert
}

/// Full pipeline: build, solve, verify, polish.
pub fn certify_existence(net: &Network, cfg: &ExistenceConfig) -> (ExistenceCertificate, SolveOutcome) {
    let inst = build_p1(net);
    let out = solve_p1(&inst, &cfg.solver).expect("relaxation of a valid network is well formed");
    (refine_and_check(net, &inst, &out, cfg), out)
}

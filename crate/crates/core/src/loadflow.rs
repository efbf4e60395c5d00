//! Load-flow residuals, Jacobian, a damped Newton oracle, and security checks.
//!
//! At PQ bus `n` the load-flow equation reads
//!
//! ```text
//! (Σ_k g_nk) v_n² − (Σ_k g_nk v_k) v_n = p_n,    k ∈ K(n)
//! ```
//!
//! with `v_0` fixed at the slack set-point.

use crate::netmodel::{Network, SLACK};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadFlowError {
    #[error("DimensionError: expected {expected} voltages, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("NoConvergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

fn check_len(net: &Network, v: &[f64]) -> Result<(), LoadFlowError> {
    if v.len() == net.n_pq() {
        Ok(())
    } else {
        Err(LoadFlowError::Dimension { expected: net.n_pq(), got: v.len() })
    }
}

/// Candidate PQ-bus voltages together with their residual ∞-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageProfile {
    pub values: Vec<f64>,
    pub residual_norm: f64,
}

impl VoltageProfile {
    pub fn evaluate(net: &Network, values: Vec<f64>) -> Result<Self, LoadFlowError> {
        let residual_norm = inf_norm(&residual(net, &values)?);
        Ok(VoltageProfile { values, residual_norm })
    }

    /// Flat start `v_n = v0`.
    pub fn flat(net: &Network) -> Self {
        Self::evaluate(net, vec![net.v0(); net.n_pq()]).expect("flat profile has length N")
    }
}

pub(crate) fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
}

/// Voltage at any bus, slack included; `v` holds PQ voltages only.
#[inline]
fn bus_voltage(net: &Network, v: &[f64], bus: usize) -> f64 {
    if bus == SLACK {
        net.v0()
    } else {
        v[bus - 1]
    }
}

pub fn residual(net: &Network, v: &[f64]) -> Result<Vec<f64>, LoadFlowError> {
    check_len(net, v)?;
    Ok((1..=net.n_pq())
        .map(|n| {
            let vn = v[n - 1];
            let coupled: f64 = net.neighbors(n).iter().map(|nb| nb.conductance * bus_voltage(net, v, nb.bus)).sum();
            net.total_conductance(n) * vn * vn - coupled * vn - net.injection(n)
        })
        .collect())
}

pub fn jacobian(net: &Network, v: &[f64]) -> Result<DMatrix<f64>, LoadFlowError> {
    check_len(net, v)?;
    let n_pq = net.n_pq();
    let mut jac = DMatrix::zeros(n_pq, n_pq);
    for n in 1..=n_pq {
        let vn = v[n - 1];
        let coupled: f64 = net.neighbors(n).iter().map(|nb| nb.conductance * bus_voltage(net, v, nb.bus)).sum();
        jac[(n - 1, n - 1)] = 2.0 * net.total_conductance(n) * vn - coupled;
        for nb in net.pq_neighbors(n) {
            jac[(n - 1, nb.bus - 1)] = -nb.conductance * vn;
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Maximum step halvings per iteration.
    pub damping: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { tol: 1e-11, max_iter: 50, damping: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSolution {
    pub profile: VoltageProfile,
    pub iterations: usize,
}

/// Damped Newton–Raphson on the load-flow equations.
///
/// Each step is halved while the residual ∞-norm fails to decrease, at most
/// `cfg.damping` times. A singular Jacobian or an exhausted halving budget
/// ends the run with [`LoadFlowError::NoConvergence`].
pub fn newton_solve(net: &Network, v_init: &[f64], cfg: &NewtonConfig) -> Result<NewtonSolution, LoadFlowError> {
    check_len(net, v_init)?;
    let mut v = v_init.to_vec();
    let mut r = residual(net, &v)?;
    let mut norm = inf_norm(&r);
    let mut iterations = 0;
    while norm > cfg.tol {
        if iterations >= cfg.max_iter {
            return Err(LoadFlowError::NoConvergence { iterations, residual: norm });
        }
        iterations += 1;
        let jac = jacobian(net, &v)?;
        let rhs = DVector::from_iterator(r.len(), r.iter().map(|x| -x));
        let step = match jac.lu().solve(&rhs) {
            Some(s) if s.iter().all(|x| x.is_finite()) => s,
            _ => return Err(LoadFlowError::NoConvergence { iterations, residual: norm }),
        };

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.damping {
            let trial: Vec<f64> = v.iter().zip(step.iter()).map(|(x, d)| x + scale * d).collect();
            let trial_r = residual(net, &trial)?;
            let trial_norm = inf_norm(&trial_r);
            if trial_norm < norm {
                accepted = Some((trial, trial_r, trial_norm));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, trial_r, trial_norm)) => {
                v = trial;
                r = trial_r;
                norm = trial_norm;
            }
            None => return Err(LoadFlowError::NoConvergence { iterations, residual: norm }),
        }
    }
    if v.iter().any(|&x| x <= 0.0) {
        return Err(LoadFlowError::NoConvergence { iterations, residual: norm });
    }
    Ok(NewtonSolution { profile: VoltageProfile { values: v, residual_norm: norm }, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SecurityMode {
    /// Open constraints with an extra safety margin.
    Strict,
    /// Closed constraints, margin ignored.
    NonStrict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintId {
    VoltageLower(usize),
    VoltageUpper(usize),
    Current { from: usize, to: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintId,
    /// Distance to the limit; negative when the limit itself is crossed.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub voltage_ok: bool,
    pub current_ok: bool,
    pub worst_voltage_margin: f64,
    pub worst_current_margin: f64,
    pub violations: Vec<Violation>,
}

impl SecurityReport {
    pub fn ok(&self) -> bool {
        self.voltage_ok && self.current_ok
    }

    /// Smaller of the two worst margins.
    pub fn worst_margin(&self) -> f64 {
        self.worst_voltage_margin.min(self.worst_current_margin)
    }
}

/// Checks voltage bounds and branch current limits.
///
/// Slacks are raw distances to the limits. In strict mode a slack must
/// exceed `margin`; in non-strict mode it must be nonnegative.
pub fn check_security(net: &Network, v: &[f64], mode: SecurityMode, margin: f64) -> Result<SecurityReport, LoadFlowError> {
    check_len(net, v)?;
    let passes = |slack: f64| match mode {
        SecurityMode::Strict => slack > margin,
        SecurityMode::NonStrict => slack >= 0.0,
    };
    let limits = net.limits();
    let mut violations = Vec::new();
    let mut worst_voltage_margin = f64::INFINITY;
    for (i, &vn) in v.iter().enumerate() {
        let n = i + 1;
        for (constraint, slack) in
            [(ConstraintId::VoltageLower(n), vn - limits.v_min), (ConstraintId::VoltageUpper(n), limits.v_max - vn)]
        {
            worst_voltage_margin = worst_voltage_margin.min(slack);
            if !passes(slack) {
                violations.push(Violation { constraint, slack });
            }
        }
    }
    let voltage_ok = violations.is_empty();

    let mut worst_current_margin = f64::INFINITY;
    for br in net.branches() {
        let current = br.conductance * (bus_voltage(net, v, br.from) - bus_voltage(net, v, br.to));
        let slack = br.current_limit - current.abs();
        worst_current_margin = worst_current_margin.min(slack);
        if !passes(slack) {
            violations.push(Violation { constraint: ConstraintId::Current { from: br.from, to: br.to }, slack });
        }
    }
    let current_ok = violations.iter().all(|x| !matches!(x.constraint, ConstraintId::Current { .. }));

    Ok(SecurityReport { voltage_ok, current_ok, worst_voltage_margin, worst_current_margin, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::SecurityLimits;

    fn two_bus(p: f64, i_max: f64) -> Network {
        Network::new(1.0, &[p], &[(0, 1, 10.0, i_max)], SecurityLimits { v_min: 0.9, v_max: 1.1 }).unwrap()
    }

    // closed-form high-voltage root of 10 v² − 10 v − p = 0
    fn root(p: f64) -> f64 {
        (1.0 + (1.0 + 0.4 * p).sqrt()) / 2.0
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residual(&two_bus(0.0, 1.0), &[1.0]).unwrap(), vec![0.0]);
        assert!((residual(&two_bus(-0.5, 1.0), &[1.0]).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!(residual(&two_bus(-0.5, 1.0), &[0.9472136]).unwrap()[0].abs() < 1e-6);
        assert!(matches!(residual(&two_bus(0.0, 1.0), &[1.0, 1.0]), Err(LoadFlowError::Dimension { .. })));
    }

    #[test]
    fn jacobian_examples() {
        let net = two_bus(0.0, 1.0);
        assert!((jacobian(&net, &[1.0]).unwrap()[(0, 0)] - 10.0).abs() < 1e-12);
        assert!((jacobian(&net, &[0.9]).unwrap()[(0, 0)] - 8.0).abs() < 1e-12);
        assert!(jacobian(&net, &[]).is_err());
    }

    #[test]
    fn newton_examples() {
        let sol = newton_solve(&two_bus(-0.5, 1.0), &[1.0], &NewtonConfig::default()).unwrap();
        assert!((sol.profile.values[0] - root(-0.5)).abs() < 1e-8);
        assert!((sol.profile.values[0] - 0.9472136).abs() < 1e-7);

        let sol = newton_solve(&two_bus(0.0, 1.0), &[1.05], &NewtonConfig::default()).unwrap();
        assert!((sol.profile.values[0] - 1.0).abs() < 1e-10);

        for start in [0.3, 0.5, 0.9, 1.0, 2.0] {
            let err = newton_solve(&two_bus(-3.0, 1.0), &[start], &NewtonConfig::default()).unwrap_err();
            assert!(matches!(err, LoadFlowError::NoConvergence { .. }), "start {start}");
        }
    }

    #[test]
    fn security_examples() {
        let net = two_bus(-0.5, 1.0);
        let v = root(-0.5);
        let rep = check_security(&net, &[v], SecurityMode::Strict, 0.0).unwrap();
        assert!(rep.ok());
        assert!((rep.worst_current_margin - (1.0 - 10.0 * (1.0 - v))).abs() < 1e-12);
        assert!((rep.worst_current_margin - 0.472136).abs() < 1e-6);

        let strict = check_security(&net, &[0.9], SecurityMode::Strict, 0.0).unwrap();
        let closed = check_security(&net, &[0.9], SecurityMode::NonStrict, 0.0).unwrap();
        assert!(!strict.voltage_ok);
        assert!(closed.voltage_ok);

        let low = check_security(&two_bus(-0.5, 10.0), &[0.8], SecurityMode::Strict, 0.0).unwrap();
        assert!(!low.voltage_ok);
        assert!(low.current_ok);
        assert_eq!(low.violations.len(), 1);
        assert_eq!(low.violations[0].constraint, ConstraintId::VoltageLower(1));
        assert!((low.violations[0].slack + 0.1).abs() < 1e-12);
    }

    #[test]
    fn current_violation_flags_only_current() {
        let rep = check_security(&two_bus(-0.5, 0.3), &[0.95], SecurityMode::Strict, 0.0).unwrap();
        assert!(rep.voltage_ok);
        assert!(!rep.current_ok);
        assert!((rep.worst_current_margin - (0.3 - 0.5)).abs() < 1e-12);
    }
}

//! Uniqueness certificates via Jacobian nonsingularity over the security box.
//!
//! If the load-flow Jacobian is nonsingular everywhere on a convex region,
//! the region contains at most one load-flow solution. The certificates here
//! are sound sufficient tests over the voltage box `[v_min, v_max]^N`, which
//! contains the security polytope. [`falsify_p2`] searches the polytope for a
//! singular Jacobian and a unit null vector, which refutes the hypothesis.

mod falsify;

pub use falsify::{falsify_p2, sigma_min_with_gradient, FalsifyConfig};

use crate::loadflow::VoltageProfile;
use crate::netmodel::Network;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UniquenessError {
    #[error("SingularCenter: midpoint Jacobian is not invertible")]
    SingularCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UniquenessStatus {
    UniqueCertified,
    CounterexampleFound,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Gershgorin,
    MidpointRadius,
    #[serde(rename = "none")]
    None,
}

/// A point of the security polytope with a unit null vector of `J(v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub v: VoltageProfile,
    pub gamma: Vec<f64>,
    pub sigma_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessCertificate {
    pub status: UniquenessStatus,
    pub method: Method,
    pub margin: f64,
    pub counterexample: Option<Counterexample>,
}

impl UniquenessCertificate {
    fn from_margin(method: Method, margin: f64) -> Self {
        let status = if margin > 0.0 { UniquenessStatus::UniqueCertified } else { UniquenessStatus::Unknown };
        UniquenessCertificate { status, method, margin, counterexample: None }
    }

    pub fn is_certified(&self) -> bool {
        self.status == UniquenessStatus::UniqueCertified
    }
}

/// Common voltage interval `[lo, hi]` for every PQ bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageBox {
    pub lo: f64,
    pub hi: f64,
}

impl VoltageBox {
    pub fn of(net: &Network) -> Self {
        let limits = net.limits();
        VoltageBox { lo: limits.v_min, hi: limits.v_max }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// Entrywise enclosure `|J(v) − center| ≤ radius` for all `v` in a box.
/// Jacobian entries are affine in `v`, so the enclosure is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalJacobian {
    pub center: DMatrix<f64>,
    pub radius: DMatrix<f64>,
}

pub fn interval_jacobian(net: &Network) -> IntervalJacobian {
    interval_jacobian_on(net, VoltageBox::of(net))
}

pub fn interval_jacobian_on(net: &Network, bx: VoltageBox) -> IntervalJacobian {
    let n_pq = net.n_pq();
    let center = crate::loadflow::jacobian(net, &vec![bx.mid(); n_pq]).expect("length N");
    let mut radius = DMatrix::zeros(n_pq, n_pq);
    let w = bx.half_width();
    for n in 1..=n_pq {
        // J_nn = 2 G_n v_n − Σ_{k≠0} g_nk v_k − g_n0 v0
        let pq_sum: f64 = net.pq_neighbors(n).map(|nb| nb.conductance).sum();
        radius[(n - 1, n - 1)] = (2.0 * net.total_conductance(n) + pq_sum) * w;
        for nb in net.pq_neighbors(n) {
            radius[(n - 1, nb.bus - 1)] = nb.conductance * w;
        }
    }
    IntervalJacobian { center, radius }
}

pub fn gershgorin_certificate(net: &Network) -> UniquenessCertificate {
    gershgorin_certificate_on(net, VoltageBox::of(net))
}

/// Row-wise diagonal dominance over the whole box:
/// `inf J_nn > sup Σ_{k≠n} |J_nk|` for every row.
pub fn gershgorin_certificate_on(net: &Network, bx: VoltageBox) -> UniquenessCertificate {
    let v0 = net.v0();
    let margin = (1..=net.n_pq())
        .map(|n| {
            let pq_sum: f64 = net.pq_neighbors(n).map(|nb| nb.conductance).sum();
            let diag_inf = 2.0 * net.total_conductance(n) * bx.lo - net.slack_conductance(n) * v0 - pq_sum * bx.hi;
            let off_sup = pq_sum * bx.hi;
            diag_inf - off_sup
        })
        .fold(f64::INFINITY, f64::min);
    UniquenessCertificate::from_margin(Method::Gershgorin, margin)
}

pub fn midpoint_radius_certificate(net: &Network) -> Result<UniquenessCertificate, UniquenessError> {
    midpoint_radius_certificate_on(net, VoltageBox::of(net))
}

/// Certifies when `ρ(|C⁻¹| R) < 1`; margin is `1 − ρ` with `ρ` an upper
/// bound from power iteration.
pub fn midpoint_radius_certificate_on(net: &Network, bx: VoltageBox) -> Result<UniquenessCertificate, UniquenessError> {
    let ij = interval_jacobian_on(net, bx);
    let inv = ij.center.clone().try_inverse().ok_or(UniquenessError::SingularCenter)?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(UniquenessError::SingularCenter);
    }
    let m = inv.abs() * &ij.radius;
    let rho = spectral_radius_upper(&m, 500);
    Ok(UniquenessCertificate::from_margin(Method::MidpointRadius, 1.0 - rho))
}

/// Upper bound on the spectral radius of an entrywise nonnegative matrix.
///
/// For any positive `x`, `ρ(M) ≤ max_i (M x)_i / x_i`. Power iterates,
/// kept positive by a small uniform floor, tighten the bound; the smallest
/// bound seen is returned.
pub fn spectral_radius_upper(m: &DMatrix<f64>, iterations: usize) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut x = DVector::from_element(n, 1.0);
    let mut best = f64::INFINITY;
    for _ in 0..iterations {
        let y = m * &x;
        let bound = y.iter().zip(x.iter()).map(|(a, b)| a / b).fold(0.0_f64, f64::max);
        best = best.min(bound);
        let scale = y.amax();
        if scale == 0.0 {
            return 0.0;
        }
        x = y.map(|v| v / scale + 1e-12);
    }
    best
}

/// Tries Gershgorin, then the midpoint-radius test, then falsification.
pub fn certify_uniqueness(net: &Network, cfg: &FalsifyConfig) -> UniquenessCertificate {
    let gersh = gershgorin_certificate(net);
    if gersh.is_certified() {
        return gersh;
    }
    if let Ok(mr) = midpoint_radius_certificate(net) {
        if mr.is_certified() {
            return mr;
        }
    }
    falsify_p2(net, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::SecurityLimits;

    fn two_bus(v_min: f64, v_max: f64) -> Network {
        Network::new(1.0, &[-0.5], &[(0, 1, 10.0, 100.0)], SecurityLimits { v_min, v_max }).unwrap()
    }

    #[test]
    fn scalar_interval() {
        let ij = interval_jacobian(&two_bus(0.9, 1.1));
        assert!((ij.center[(0, 0)] - 10.0).abs() < 1e-12);
        assert!((ij.radius[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box_has_zero_radius() {
        let net = two_bus(0.9, 1.1);
        let bx = VoltageBox { lo: 0.95, hi: 0.95 };
        assert!(interval_jacobian_on(&net, bx).radius.iter().all(|&r| r == 0.0));
        let cert = midpoint_radius_certificate_on(&net, bx).unwrap();
        assert!(cert.is_certified());
        assert_eq!(cert.margin, 1.0);
    }

    #[test]
    fn chain_off_diagonal_radius() {
        let net = Network::new(
            1.0,
            &[0.0, 0.0],
            &[(0, 1, 10.0, 1.0), (1, 2, 10.0, 1.0)],
            SecurityLimits { v_min: 0.9, v_max: 1.1 },
        )
        .unwrap();
        let ij = interval_jacobian(&net);
        assert!((ij.radius[(0, 1)] - 1.0).abs() < 1e-12);
        assert!((ij.radius[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gershgorin_two_bus() {
        let cert = gershgorin_certificate(&two_bus(0.9, 1.1));
        assert_eq!(cert.status, UniquenessStatus::UniqueCertified);
        assert!((cert.margin - 8.0).abs() < 1e-9);

        let wide = gershgorin_certificate(&two_bus(0.4, 1.1));
        assert_eq!(wide.status, UniquenessStatus::Unknown);
        assert!((wide.margin + 2.0).abs() < 1e-12);
    }

    #[test]
    fn gershgorin_star_matches_condition() {
        // leaves only touch the slack: certified iff 2 v_min > v0
        let branches: Vec<_> = (1..=4).map(|n| (0, n, 3.0 + n as f64, 10.0)).collect();
        for (v_min, expect) in [(0.55, true), (0.45, false)] {
            let net = Network::new(1.0, &[-0.1; 4], &branches, SecurityLimits { v_min, v_max: 1.05 }).unwrap();
            assert_eq!(gershgorin_certificate(&net).is_certified(), expect, "v_min {v_min}");
        }
    }

    #[test]
    fn midpoint_radius_two_bus() {
        let cert = midpoint_radius_certificate(&two_bus(0.9, 1.1)).unwrap();
        assert!(cert.is_certified());
        assert!((cert.margin - 0.8).abs() < 1e-9);

        let cert = midpoint_radius_certificate(&two_bus(0.4, 1.6)).unwrap();
        assert_eq!(cert.status, UniquenessStatus::Unknown);
        assert!((cert.margin + 0.2).abs() < 1e-9);
    }

    #[test]
    fn midpoint_radius_singular_center() {
        // centre v = 0.5 makes J = 20·0.5 − 10 = 0
        let net = two_bus(0.2, 0.8);
        assert_eq!(midpoint_radius_certificate(&net), Err(UniquenessError::SingularCenter));
    }

    #[test]
    fn spectral_bound_is_upper() {
        let m = DMatrix::from_row_slice(3, 3, &[0.1, 0.4, 0.0, 0.2, 0.0, 0.3, 0.0, 0.5, 0.1]);
        let exact = m.clone().complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
        let bound = spectral_radius_upper(&m, 500);
        assert!(bound >= exact - 1e-12);
        assert!(bound <= exact + 1e-6);
    }
}

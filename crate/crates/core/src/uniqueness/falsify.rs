//! Multi-start search for a singular Jacobian inside the security polytope.

use super::{interval_jacobian, Counterexample, Method, UniquenessCertificate, UniquenessStatus};
use crate::loadflow::{self, SecurityMode, VoltageProfile};
use crate::netmodel::{Network, SLACK};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalsifyConfig {
    pub starts: usize,
    pub seed: u64,
    /// Absolute singularity threshold; `None` means `1e-8 · ‖center‖∞`.
    pub singular_tol: Option<f64>,
    /// Descent iterations per start.
    pub max_iter: usize,
}

impl Default for FalsifyConfig {
    fn default() -> Self {
        FalsifyConfig { starts: 32, seed: 42, singular_tol: None, max_iter: 200 }
    }
}

impl FalsifyConfig {
    pub fn singular_tol_for(&self, net: &Network) -> f64 {
        self.singular_tol.unwrap_or_else(|| 1e-8 * interval_jacobian(net).center.abs().row_sum().max())
    }
}

/// Smallest singular value of `J(v)`, its gradient in `v`, and the unit right
/// singular vector.
pub fn sigma_min_with_gradient(net: &Network, v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let jac = loadflow::jacobian(net, v).expect("length N");
    let n_pq = net.n_pq();
    let svd = jac.svd(true, true);
    let (idx, &sigma) =
        svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("N ≥ 1");
    let u = svd.u.as_ref().expect("requested").column(idx).into_owned();
    let w = svd.v_t.as_ref().expect("requested").row(idx).transpose();

    // dσ/dv_m = uᵀ (∂J/∂v_m) w
    let mut grad = vec![0.0; n_pq];
    for m in 1..=n_pq {
        let mut own = 2.0 * net.total_conductance(m) * w[m - 1];
        for nb in net.pq_neighbors(m) {
            own -= nb.conductance * w[nb.bus - 1];
        }
        let mut g = u[m - 1] * own;
        for nb in net.pq_neighbors(m) {
            g -= nb.conductance * u[nb.bus - 1] * w[nb.bus - 1];
        }
        grad[m - 1] = g;
    }
    (sigma, grad, w.iter().copied().collect())
}

/// Halfspace `a·v ≤ b` over PQ voltages.
struct HalfSpace {
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

struct Polytope {
    lo: f64,
    hi: f64,
    halfspaces: Vec<HalfSpace>,
}

impl Polytope {
    fn of(net: &Network) -> Self {
        let limits = net.limits();
        let v0 = net.v0();
        let mut halfspaces = Vec::new();
        for br in net.branches() {
            let g = br.conductance;
            let (a, b) = (br.from.max(br.to), br.from.min(br.to));
            let i_max = br.current_limit;
            if b == SLACK {
                halfspaces.push(HalfSpace { coeffs: vec![(a - 1, g)], rhs: i_max + g * v0 });
                halfspaces.push(HalfSpace { coeffs: vec![(a - 1, -g)], rhs: i_max - g * v0 });
            } else {
                halfspaces.push(HalfSpace { coeffs: vec![(a - 1, g), (b - 1, -g)], rhs: i_max });
                halfspaces.push(HalfSpace { coeffs: vec![(a - 1, -g), (b - 1, g)], rhs: i_max });
            }
        }
        Polytope { lo: limits.v_min, hi: limits.v_max, halfspaces }
    }

    fn contains(&self, v: &[f64]) -> bool {
        v.iter().all(|&x| x >= self.lo && x <= self.hi)
            && self.halfspaces.iter().all(|h| h.coeffs.iter().map(|&(i, a)| a * v[i]).sum::<f64>() <= h.rhs)
    }

    /// Cyclic projection onto the halfspaces and the box. `None` if the
    /// sweeps do not reach a feasible point.
    fn project(&self, v: &[f64]) -> Option<Vec<f64>> {
        let mut x: Vec<f64> = v.iter().map(|&x| x.clamp(self.lo, self.hi)).collect();
        for _ in 0..200 {
            if self.contains(&x) {
                return Some(x);
            }
            for h in &self.halfspaces {
                let val: f64 = h.coeffs.iter().map(|&(i, a)| a * x[i]).sum();
                if val > h.rhs {
                    // aim slightly inside so the sweeps terminate
                    let target = h.rhs - 1e-9 * h.rhs.abs().max(1e-3);
                    let norm2: f64 = h.coeffs.iter().map(|&(_, a)| a * a).sum();
                    let t = (val - target) / norm2;
                    for &(i, a) in &h.coeffs {
                        x[i] -= t * a;
                    }
                }
            }
            for xi in &mut x {
                *xi = xi.clamp(self.lo, self.hi);
            }
        }
        self.contains(&x).then_some(x)
    }
}

#[derive(Debug, Clone)]
struct LocalResult {
    sigma: f64,
    v: Vec<f64>,
}

/// Projected descent on `σ_min(J(v))` from one start. Trial steps use the
/// Polyak length `σ / ‖∇σ‖²` (exact when the minimum is zero and `σ` is
/// locally linear), halved until `σ` decreases.
fn descend(net: &Network, poly: &Polytope, start: &[f64], stop: f64, max_iter: usize) -> Option<LocalResult> {
    let mut v = poly.project(start)?;
    let (mut sigma, mut grad, _) = sigma_min_with_gradient(net, &v);
    for _ in 0..max_iter {
        if sigma <= stop {
            break;
        }
        let norm2: f64 = grad.iter().map(|g| g * g).sum();
        if norm2 == 0.0 {
            break;
        }
        let mut step = sigma / norm2;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = v.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            if let Some(trial) = poly.project(&trial) {
                let (s, g, _) = sigma_min_with_gradient(net, &trial);
                if s < sigma {
                    v = trial;
                    sigma = s;
                    grad = g;
                    improved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some(LocalResult { sigma, v })
}

/// Searches the closed security polytope for a point where `J(v)` is
/// singular. A hit, together with the unit null vector, is a feasible point
/// of the null-vector program and refutes uniqueness certification; a miss
/// is reported as `Unknown` with the smallest `σ_min` seen.
pub fn falsify_p2(net: &Network, cfg: &FalsifyConfig) -> UniquenessCertificate {
    let n_pq = net.n_pq();
    let tol = cfg.singular_tol_for(net);
    let limits = net.limits();
    let poly = Polytope::of(net);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<Vec<f64>> = (0..cfg.starts.max(1))
        .map(|_| (0..n_pq).map(|_| rng.gen_range(limits.v_min..=limits.v_max)).collect())
        .collect();

    // keep descending well below the threshold so the null vector is sharp
    let stop = tol * 1e-6;
    let results: Vec<Option<LocalResult>> =
        starts.par_iter().map(|s| descend(net, &poly, s, stop, cfg.max_iter)).collect();
    let best = results
        .into_iter()
        .flatten()
        .enumerate()
        .min_by(|a, b| a.1.sigma.total_cmp(&b.1.sigma).then(a.0.cmp(&b.0)))
        .map(|(_, r)| r);

    let Some(best) = best else {
        return UniquenessCertificate {
            status: UniquenessStatus::Unknown,
            method: Method::None,
            margin: f64::INFINITY,
            counterexample: None,
        };
    };

    if best.sigma <= tol {
        if let Some(cx) = verified_counterexample(net, &best.v, tol) {
            return UniquenessCertificate {
                status: UniquenessStatus::CounterexampleFound,
                method: Method::None,
                margin: cx.sigma_min,
                counterexample: Some(cx),
            };
        }
    }
    UniquenessCertificate { status: UniquenessStatus::Unknown, method: Method::None, margin: best.sigma, counterexample: None }
}

/// Re-checks a candidate independently of the search bookkeeping.
fn verified_counterexample(net: &Network, v: &[f64], tol: f64) -> Option<Counterexample> {
    let report = loadflow::check_security(net, v, SecurityMode::NonStrict, 0.0).ok()?;
    if !report.ok() {
        return None;
    }
    let (sigma, _, gamma) = sigma_min_with_gradient(net, v);
    let jac = loadflow::jacobian(net, v).ok()?;
    let g = DMatrix::from_column_slice(gamma.len(), 1, &gamma);
    let image = (&jac * &g).amax();
    let norm = gamma.iter().map(|x| x * x).sum::<f64>().sqrt();
    if image > tol || (norm - 1.0).abs() > 1e-9 {
        return None;
    }
    Some(Counterexample { v: VoltageProfile::evaluate(net, v.to_vec()).ok()?, gamma, sigma_min: sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::SecurityLimits;

    fn two_bus(v_min: f64, v_max: f64, i_max: f64) -> Network {
        Network::new(1.0, &[-0.5], &[(0, 1, 10.0, i_max)], SecurityLimits { v_min, v_max }).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = Network::new(
            1.0,
            &[-0.1, -0.2, 0.0],
            &[(0, 1, 8.0, 5.0), (1, 2, 6.0, 5.0), (2, 3, 4.0, 5.0), (1, 3, 3.0, 5.0)],
            SecurityLimits { v_min: 0.5, v_max: 1.1 },
        )
        .unwrap();
        let v = [0.93, 0.71, 0.82];
        let (_, grad, _) = sigma_min_with_gradient(&net, &v);
        let h = 1e-6;
        for i in 0..3 {
            let mut plus = v.to_vec();
            let mut minus = v.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fd = (sigma_min_with_gradient(&net, &plus).0 - sigma_min_with_gradient(&net, &minus).0) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn narrow_box_is_not_falsified() {
        let cert = falsify_p2(&two_bus(0.9, 1.1, 1.0), &FalsifyConfig::default());
        assert_eq!(cert.status, UniquenessStatus::Unknown);
        assert!(cert.margin >= 8.0 - 1e-9, "{}", cert.margin);
    }

    #[test]
    fn wide_box_has_singular_point() {
        let cert = falsify_p2(&two_bus(0.4, 1.1, 100.0), &FalsifyConfig::default());
        assert_eq!(cert.status, UniquenessStatus::CounterexampleFound);
        let cx = cert.counterexample.unwrap();
        assert!((cx.v.values[0] - 0.5).abs() < 1e-6);
        assert!((cx.gamma[0].abs() - 1.0).abs() < 1e-9);
        assert!(cx.sigma_min <= 1e-8);
    }

    #[test]
    fn projection_respects_currents() {
        let net = Network::new(
            1.0,
            &[-0.1, -0.1],
            &[(0, 1, 10.0, 0.5), (1, 2, 10.0, 0.3)],
            SecurityLimits { v_min: 0.5, v_max: 1.1 },
        )
        .unwrap();
        let poly = Polytope::of(&net);
        let p = poly.project(&[0.6, 1.1]).unwrap();
        let rep = loadflow::check_security(&net, &p, SecurityMode::NonStrict, 0.0).unwrap();
        assert!(rep.ok(), "{p:?} {rep:?}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let net = two_bus(0.3, 1.1, 100.0);
        let a = falsify_p2(&net, &FalsifyConfig::default());
        let b = falsify_p2(&net, &FalsifyConfig::default());
        assert_eq!(a, b);
    }
}

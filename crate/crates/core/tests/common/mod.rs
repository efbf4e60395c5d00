//! Seeded random networks shared by the integration tests.

#![allow(dead_code)]

use dcsec::netmodel::{Network, SecurityLimits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS_SIZE: u64 = 200;
pub const ADVERSARIAL_SIZE: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Radial,
    Meshed,
}

/// Spanning tree on `0..=n` where each bus attaches to a random earlier one,
/// plus `extra` chords for meshed shapes.
fn topology(rng: &mut ChaCha8Rng, n: usize, shape: Shape) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..=n).map(|k| (rng.gen_range(0..k), k)).collect();
    if shape == Shape::Meshed {
        let extra = rng.gen_range(1..=n.max(1));
        for _ in 0..extra * 4 {
            if edges.len() >= n + extra {
                break;
            }
            let a = rng.gen_range(0..=n);
            let b = rng.gen_range(0..=n);
            let (a, b) = (a.min(b), a.max(b));
            if a != b && !edges.contains(&(a, b)) {
                edges.push((a, b));
            }
        }
    }
    edges
}

/// Light-load network with voltage limits satisfying `2 v_min > v_max > v0 > v_min`.
pub fn light_network(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = if seed % 2 == 0 { Shape::Radial } else { Shape::Meshed };
    let n = rng.gen_range(1..=10);
    let v0 = rng.gen_range(0.95..1.05);
    let edges = topology(&mut rng, n, shape);
    let g: Vec<f64> = edges.iter().map(|_| rng.gen_range(5.0..20.0)).collect();
    let g_ref = g.iter().copied().fold(f64::INFINITY, f64::min);
    let p: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0..0.05) * g_ref * v0 * v0 / n as f64).collect();
    let branches: Vec<_> = edges.iter().zip(&g).map(|(&(a, b), &g)| (a, b, g, 0.5 * g * v0)).collect();
    let limits = SecurityLimits { v_min: 0.9 * v0, v_max: 1.1 * v0 };
    Network::new(v0, &p, &branches, limits).expect("generator builds valid networks")
}

/// Wide voltage box and loose current limits: certificates usually fail and
/// singular Jacobians are reachable.
pub fn adversarial_network(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1_000_003));
    let shape = if seed % 2 == 0 { Shape::Radial } else { Shape::Meshed };
    let n = rng.gen_range(1..=6);
    let v0 = 1.0;
    let edges = topology(&mut rng, n, shape);
    let branches: Vec<_> = edges.iter().map(|&(a, b)| (a, b, rng.gen_range(5.0..20.0), 1e3)).collect();
    let p: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0..0.2)).collect();
    let limits = SecurityLimits { v_min: rng.gen_range(0.3..0.5) * v0, v_max: 1.1 * v0 };
    Network::new(v0, &p, &branches, limits).expect("generator builds valid networks")
}

pub fn corpus() -> Vec<Network> {
    (0..CORPUS_SIZE).map(light_network).collect()
}

pub fn adversarial_corpus() -> Vec<Network> {
    (0..ADVERSARIAL_SIZE).map(adversarial_network).collect()
}

pub fn uniform_point(rng: &mut ChaCha8Rng, net: &Network) -> Vec<f64> {
    let l = net.limits();
    (0..net.n_pq()).map(|_| rng.gen_range(l.v_min..=l.v_max)).collect()
}

pub fn two_bus(p: f64, v_min: f64, v_max: f64, i_max: f64) -> Network {
    Network::new(1.0, &[p], &[(0, 1, 10.0, i_max)], SecurityLimits { v_min, v_max }).unwrap()
}

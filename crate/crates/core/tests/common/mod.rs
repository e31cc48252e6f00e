#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use seann_core::{Activation, DsfArchitecture, DsfNetwork};

/// Random sqrt network over `n` inputs with 1 to 3 hidden layers of width 1..=6
/// and about a fifth of the weights zeroed.
pub fn random_net<R: Rng>(rng: &mut R, n: usize) -> DsfNetwork {
    let depth = rng.random_range(1..=3);
    let mut dims = vec![n];
    dims.extend((0..depth).map(|_| rng.random_range(1..=6)));
    dims.push(1);
    random_net_with(rng, dims, Activation::Sqrt)
}

pub fn random_net_with<R: Rng>(rng: &mut R, dims: Vec<usize>, act: Activation) -> DsfNetwork {
    let arch = DsfArchitecture::new(dims, act).unwrap();
    let net = DsfNetwork::random(arch.clone(), 1.0, rng);
    let weights = net
        .weights()
        .iter()
        .map(|w| w.mapv(|v| if rng.random::<f64>() < 0.2 { 0.0 } else { v }))
        .collect();
    DsfNetwork::new(arch, weights).unwrap()
}

/// Each element kept with probability `p`, ascending.
pub fn random_subset<R: Rng>(rng: &mut R, items: &[usize], p: f64) -> Vec<usize> {
    items.iter().copied().filter(|_| rng.random::<f64>() < p).collect()
}

/// `A ⊆ B` and `e ∉ B` over `0..n`.
pub fn random_triple<R: Rng>(rng: &mut R, n: usize) -> (Vec<usize>, Vec<usize>, usize) {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    let e = all[0];
    let mut rest = all[1..].to_vec();
    rest.sort_unstable();
    let b = random_subset(rng, &rest, 0.5);
    let a = random_subset(rng, &b, 0.5);
    (a, b, e)
}

/// Per-coordinate relative error with an absolute floor for coordinates that
/// are zero up to rounding.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

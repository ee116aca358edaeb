//! Latin hypercube designs.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::seeds::Rng;

/// `n` points in `[0,1]^dims`, each column stratified into `n` equal bins with one point per bin.
pub fn lhs_continuous(n: usize, dims: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dims {
        perm.shuffle(rng);
        for (i, &bin) in perm.iter().enumerate() {
            out[i][d] = (bin as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    out
}

/// `n` level assignments (1-based) per attribute, each column cycling through the levels
/// as evenly as `n` allows before shuffling.
pub fn lhs_levels(n: usize, n_attributes: usize, n_levels: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut out = vec![vec![1; n_attributes]; n];
    for a in 0..n_attributes {
        let offset = rng.random_range(0..n_levels);
        let mut col: Vec<usize> = (0..n).map(|i| (i + offset) % n_levels + 1).collect();
        col.shuffle(rng);
        for (row, v) in out.iter_mut().zip(col) {
            row[a] = v;
        }
    }
    out
}

#![allow(dead_code)]

use boxflow::generate::{erdos_renyi, grid};
use boxflow::graph::Graph;
use boxflow::sparse::ColSparseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const CYCLE8: &str = "A B 1\nB C 1\nC D 1\nD E 1\nE F 1\nF G 1\nG H 1\nH A 1\n";

pub fn cycle8() -> Graph {
    Graph::parse(CYCLE8).unwrap()
}

/// A:+2, B:−1, D:+1, E:−1, G:−1; routes at cost 4.
pub fn cycle8_transshipment() -> Vec<f64> {
    vec![2.0, -1.0, 0.0, 1.0, -1.0, 0.0, -1.0, 0.0]
}

/// A:−2, B:+2, D:+1, E:−1; congestion 3/2.
pub fn cycle8_congestion() -> Vec<f64> {
    vec![-2.0, 2.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0]
}

/// Matrix with `per_col` random nonzeros in `[-1, 1]` per column.
pub fn random_matrix(rows: usize, cols: usize, per_col: usize, rng: &mut impl Rng) -> ColSparseMatrix {
    let columns = (0..cols)
        .map(|_| {
            let mut picked: Vec<usize> = rand::seq::index::sample(rng, rows, per_col.min(rows)).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|r| (r, rng.gen_range(-1.0..1.0))).collect()
        })
        .collect();
    ColSparseMatrix::from_columns(rows, columns, per_col).unwrap()
}

pub fn random_box(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

pub fn random_simplex(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Erdős–Rényi graph with about four neighbors per node, or a near-square
/// grid with `n` nodes, depending on the parity of `k`.
pub fn family_graph(n: usize, k: u64, rng: &mut impl Rng) -> Graph {
    if k.is_multiple_of(2) {
        erdos_renyi(n, 4.0 / n as f64, 5, rng)
    } else {
        let r = (n as f64).sqrt() as usize;
        grid(r, n / r, 5, rng)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

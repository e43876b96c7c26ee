//! Random graph families and demand samplers for tests and experiments.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::{Edge, Graph};

/// Connected Erdős–Rényi-style graph: a random spanning tree plus each
/// remaining pair independently with probability `p`. Weights are integers
/// drawn uniformly from `1..=max_weight`.
pub fn erdos_renyi<R: Rng>(n: usize, p: f64, max_weight: u32, rng: &mut R) -> Graph {
    assert!(n >= 2, "need at least two nodes");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut present = vec![false; n * n];
    let mut edges = Vec::new();
    let mut add = |u: usize, v: usize, rng: &mut R, edges: &mut Vec<Edge>| {
        let (a, b) = (u.min(v), u.max(v));
        if !present[a * n + b] {
            present[a * n + b] = true;
            let weight = f64::from(rng.gen_range(1..=max_weight.max(1)));
            edges.push(Edge { tail: a, head: b, weight });
        }
    };
    for i in 1..n {
        let j = rng.gen_range(0..i);
        add(order[i], order[j], rng, &mut edges);
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p.clamp(0.0, 1.0)) {
                add(u, v, rng, &mut edges);
            }
        }
    }
    Graph::new(n, edges).expect("spanning tree keeps the graph connected")
}

/// `rows × cols` grid with integer weights in `1..=max_weight`.
pub fn grid<R: Rng>(rows: usize, cols: usize, max_weight: u32, rng: &mut R) -> Graph {
    assert!(rows * cols >= 2, "need at least two nodes");
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                let weight = f64::from(rng.gen_range(1..=max_weight.max(1)));
                edges.push(Edge { tail: id(r, c), head: id(r, c + 1), weight });
            }
            if r + 1 < rows {
                let weight = f64::from(rng.gen_range(1..=max_weight.max(1)));
                edges.push(Edge { tail: id(r, c), head: id(r + 1, c), weight });
            }
        }
    }
    Graph::new(rows * cols, edges).expect("grids are connected")
}

/// Cycle `0 − 1 − … − (n−1) − 0` with unit weights.
pub fn cycle(n: usize) -> Graph {
    assert!(n >= 3, "a cycle needs three nodes");
    let edges = (0..n).map(|i| Edge { tail: i, head: (i + 1) % n, weight: 1.0 }).collect();
    Graph::new(n, edges).expect("cycles are connected")
}

/// `1_s − 1_t` for a uniformly random pair `s ≠ t`.
pub fn two_point_demand<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let s = rng.gen_range(0..n);
    let mut t = rng.gen_range(0..n - 1);
    if t >= s {
        t += 1;
    }
    let mut d = vec![0.0; n];
    d[s] = 1.0;
    d[t] = -1.0;
    d
}

/// Balanced integer demand on `support` random nodes with entries in
/// `[-max_abs, max_abs]`; the last chosen node absorbs the imbalance.
pub fn integer_demand<R: Rng>(n: usize, support: usize, max_abs: i32, rng: &mut R) -> Vec<f64> {
    let k = support.clamp(2, n);
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(rng);
    let mut d = vec![0.0; n];
    let mut sum = 0i64;
    for &v in &nodes[..k - 1] {
        let mut x = 0;
        while x == 0 {
            x = rng.gen_range(-max_abs.max(1)..=max_abs.max(1));
        }
        d[v] = f64::from(x);
        sum += i64::from(x);
    }
    d[nodes[k - 1]] = -(sum as f64);
    if d.iter().all(|&x| x == 0.0) {
        d[nodes[0]] = 1.0;
        d[nodes[1]] = -1.0;
    }
    d
}

mod common;

use boxflow::generate::{erdos_renyi, integer_demand};
use boxflow::graph::Graph;
use boxflow::oracle::{opt_congestion, opt_congestion_exact, opt_transshipment, opt_transshipment_exact};
use boxflow::Error;
use common::*;
use num::{BigRational, Signed, Zero};
use proptest::prelude::*;

fn permutations(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, visit);
        items.swap(k, i);
    }
}

// Cheapest matching of unit supply tokens to unit sink tokens over the
// shortest-path metric.
fn transport_brute_force(g: &Graph, d: &[f64]) -> f64 {
    let dist = g.all_pairs();
    let mut sources = Vec::new();
    let mut sinks = Vec::new();
    for (v, &x) in d.iter().enumerate() {
        for _ in 0..x.abs() as usize {
            if x > 0.0 {
                sources.push(v);
            } else {
                sinks.push(v);
            }
        }
    }
    let mut best = f64::INFINITY;
    permutations(&mut sinks, 0, &mut |perm| {
        let cost: f64 = sources.iter().zip(perm).map(|(&s, &t)| dist[s][t]).sum();
        best = best.min(cost);
    });
    best
}

fn best_cut_ratio(g: &Graph, d: &[f64]) -> f64 {
    let n = g.node_count();
    let mut best: f64 = 0.0;
    for mask in 1u32..(1 << (n - 1)) {
        let side: Vec<bool> = (0..n).map(|v| mask >> v & 1 == 1).collect();
        let cap: f64 = g.edges().iter().filter(|e| side[e.tail] != side[e.head]).map(|e| 1.0 / e.weight).sum();
        let ds: f64 = (0..n).filter(|&v| side[v]).map(|v| d[v]).sum();
        best = best.max(ds.abs() / cap);
    }
    best
}

fn small_demand(n: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    // Total supply at most 5 keeps the permutation count small.
    loop {
        let d = integer_demand(n, rng.gen_range(2..=4), 2, rng);
        if d.iter().filter(|&&x| x > 0.0).sum::<f64>() <= 5.0 {
            return d;
        }
    }
}

#[test]
fn transshipment_matches_transport_brute_force() {
    let mut rng = rng(1);
    for _ in 0..30 {
        let g = erdos_renyi(10, 0.3, 6, &mut rng);
        let d = small_demand(10, &mut rng);
        let opt = opt_transshipment(&g, &d).unwrap().cost;
        let brute = transport_brute_force(&g, &d);
        assert!((opt - brute).abs() <= 1e-9 * brute.max(1.0), "{opt} vs {brute}");
    }
}

#[test]
fn congestion_matches_cut_enumeration() {
    let mut rng = rng(2);
    for _ in 0..30 {
        let g = erdos_renyi(8, 0.35, 4, &mut rng);
        let d = integer_demand(8, 4, 3, &mut rng);
        let opt = opt_congestion(&g, &d).unwrap().cost;
        let cut = best_cut_ratio(&g, &d);
        assert!((opt - cut).abs() <= 1e-9 * cut.max(1.0), "{opt} vs {cut}");
    }
}

#[test]
fn cycle_values() {
    let g = cycle8();
    assert_eq!(opt_transshipment(&g, &cycle8_transshipment()).unwrap().cost, 4.0);
    let exact = opt_congestion_exact(&g, &cycle8_congestion()).unwrap();
    assert_eq!(exact.cost, BigRational::new(3.into(), 2.into()));
    let edge = Graph::parse("0 1 3").unwrap();
    assert_eq!(opt_congestion(&edge, &[1.0, -1.0]).unwrap().cost, 3.0);
    assert_eq!(opt_transshipment(&g, &[0.0; 8]).unwrap().cost, 0.0);
}

fn exact_divergence(g: &Graph, f: &[BigRational]) -> Vec<BigRational> {
    let mut out = vec![BigRational::zero(); g.node_count()];
    for (e, x) in g.edges().iter().zip(f) {
        out[e.tail] += x;
        out[e.head] -= x;
    }
    out
}

fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap()
}

#[test]
fn exact_flows_are_feasible_and_attain_cost() {
    let mut rng = rng(3);
    for _ in 0..15 {
        let g = erdos_renyi(9, 0.3, 5, &mut rng);
        let d = integer_demand(9, 4, 3, &mut rng);
        let target: Vec<BigRational> = d.iter().map(|&v| rational(v)).collect();

        let ts = opt_transshipment_exact(&g, &d).unwrap();
        assert_eq!(exact_divergence(&g, &ts.flow), target);
        let cost: BigRational = g.edges().iter().zip(&ts.flow).map(|(e, f)| rational(e.weight) * f.abs()).sum();
        assert_eq!(cost, ts.cost);

        let cg = opt_congestion_exact(&g, &d).unwrap();
        assert_eq!(exact_divergence(&g, &cg.flow), target);
        let worst = g.edges().iter().zip(&cg.flow).map(|(e, f)| rational(e.weight) * f.abs()).max().unwrap();
        assert_eq!(worst, cg.cost);
    }
}

#[test]
fn duals_certify_optimality() {
    let mut rng = rng(4);
    for _ in 0..20 {
        let g = erdos_renyi(12, 0.25, 5, &mut rng);
        let d = integer_demand(12, 5, 3, &mut rng);

        let ts = opt_transshipment(&g, &d).unwrap();
        for e in g.edges() {
            assert!((ts.dual[e.tail] - ts.dual[e.head]).abs() <= e.weight + 1e-9);
        }
        assert!((dot(&d, &ts.dual) - ts.cost).abs() <= 1e-9 * ts.cost.max(1.0));

        let cg = opt_congestion(&g, &d).unwrap();
        let spread: f64 = g.edges().iter().map(|e| (cg.dual[e.tail] - cg.dual[e.head]).abs() / e.weight).sum();
        assert!((spread - 1.0).abs() <= 1e-9);
        assert!((dot(&d, &cg.dual) - cg.cost).abs() <= 1e-9 * cg.cost.max(1.0));
    }
}

#[test]
fn rejects_bad_demands() {
    let g = cycle8();
    assert!(matches!(opt_transshipment(&g, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), Err(Error::Imbalanced { .. })));
    assert!(matches!(opt_congestion(&g, &[1.0, -1.0]), Err(Error::DimensionMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn symmetric_homogeneous_subadditive(seed in any::<u64>(), scale in 0.25f64..4.0) {
        let mut rng = rng(seed);
        let g = erdos_renyi(10, 0.3, 5, &mut rng);
        let d1 = integer_demand(10, 4, 3, &mut rng);
        let d2 = integer_demand(10, 3, 3, &mut rng);
        let neg: Vec<f64> = d1.iter().map(|v| -v).collect();
        let scaled: Vec<f64> = d1.iter().map(|v| v * scale).collect();
        let sum: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        for opt in [|g: &Graph, d: &[f64]| opt_transshipment(g, d).unwrap().cost, |g: &Graph, d: &[f64]| opt_congestion(g, d).unwrap().cost] {
            let base = opt(&g, &d1);
            prop_assert!((opt(&g, &neg) - base).abs() <= 1e-9 * base);
            prop_assert!((opt(&g, &scaled) - scale * base).abs() <= 1e-9 * scale * base);
            prop_assert!(opt(&g, &sum) <= base + opt(&g, &d2) + 1e-9);
        }
    }
}

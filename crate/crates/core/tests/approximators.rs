mod common;

use boxflow::approx::tree::{build_tree, cut_capacity, tree_to_r, TreeApproximator};
use boxflow::approx::ts::{
    build_cover, build_scales, build_structures, compute_pw, covering_clustering, balls, theory_tau, potentials, Clustering,
    TsApproximator, TsConfig,
};
use boxflow::approx::{calibrate, Construction, CostApproximator, Norm};
use boxflow::flow::edge_operator;
use boxflow::generate::{cycle, erdos_renyi, integer_demand, two_point_demand};
use boxflow::graph::Graph;
use boxflow::oracle::opt_congestion;
use boxflow::seed::SeedSplitter;
use common::*;
use proptest::prelude::*;

fn suite_graphs() -> Vec<Graph> {
    let mut rng = rng(21);
    let mut gs = vec![cycle8(), cycle(12), Graph::parse("0 1 1\n1 2 2\n0 2 3").unwrap()];
    for k in 0..6 {
        gs.push(family_graph([12, 20, 30][k % 3], k as u64, &mut rng));
    }
    gs
}

fn strong_diameter(g: &Graph, members: &[usize]) -> f64 {
    let mut allowed = vec![false; g.node_count()];
    members.iter().for_each(|&v| allowed[v] = true);
    members
        .iter()
        .map(|&s| {
            let dist = g.distances_within(&[s], &allowed);
            members.iter().map(|&u| dist[u]).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn dist_to_complement(g: &Graph, c: &Clustering, v: usize) -> f64 {
    let outside: Vec<usize> = (0..g.node_count()).filter(|&u| c.cluster_of(u) != c.cluster_of(v)).collect();
    if outside.is_empty() {
        return f64::INFINITY;
    }
    g.distances_from(&outside)[v]
}

#[test]
fn scale_examples() {
    assert_eq!(build_scales(&cycle8(), 2).unwrap().diameters, vec![1.0, 16.0]);
    let edge = Graph::parse("0 1 1").unwrap();
    assert_eq!(build_scales(&edge, 2).unwrap().diameters, vec![1.0]);
    let tau = theory_tau(8);
    assert_eq!(tau, 169);
    let s = build_scales(&cycle8(), tau).unwrap();
    assert_eq!(s.beta, 8.0 * 169.0);
    assert_eq!(s.i_max(), 0);
}

#[test]
fn cover_invariants() {
    for g in suite_graphs() {
        let ds = TsApproximator::build(&g, &TsConfig::default(), 5).unwrap().structures;
        let tau = f64::from(ds.scales.tau);
        for (i, level) in ds.levels.iter().enumerate() {
            let diameter = ds.scales.diameters[i];
            let cover = &level.cover;
            for c in &cover.clusterings {
                let mut seen = vec![0; g.node_count()];
                for (id, members) in c.clusters().iter().enumerate() {
                    for &v in members {
                        seen[v] += 1;
                        assert_eq!(c.cluster_of(v), id);
                    }
                    assert!(strong_diameter(&g, members) <= diameter, "scale {i}: cluster too wide");
                }
                assert!(seen.iter().all(|&k| k == 1));
                if i == 0 {
                    assert!(c.clusters().iter().all(|m| m.len() == 1));
                }
            }
            for (v, ball) in balls(&g, diameter / tau).iter().enumerate() {
                assert!(covering_clustering(ball, v, &cover.clusterings).is_some(), "scale {i}: ball of {v} split");
            }
        }
    }
}

#[test]
fn cycle_cover_at_sixteen() {
    let g = cycle8();
    let cover = build_cover(&g, 16.0, 2, 12, &mut rng(0)).unwrap();
    for (v, ball) in balls(&g, 8.0).iter().enumerate() {
        assert_eq!(ball.len(), 8);
        assert!(covering_clustering(ball, v, &cover.clusterings).is_some());
    }
}

#[test]
fn potential_examples() {
    let g = cycle8();
    let arcs = Clustering::from_labels(&[0, 0, 0, 0, 1, 1, 1, 1]);
    assert_eq!(potentials(&g, &arcs, 16.0), vec![1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 1.0]);
    assert_eq!(potentials(&g, &Clustering::whole(8), 16.0), vec![16.0; 8]);
    let tri = Graph::parse("0 1 1\n1 2 2\n0 2 3").unwrap();
    assert_eq!(potentials(&tri, &Clustering::singletons(3), 16.0), vec![1.0, 1.0, 2.0]);
    assert_eq!(potentials(&tri, &Clustering::singletons(3), 0.5), vec![0.5; 3]);
}

#[test]
fn potential_properties() {
    for g in suite_graphs() {
        let dist = g.all_pairs();
        let ds = TsApproximator::build(&g, &TsConfig::default(), 6).unwrap().structures;
        let tau = f64::from(ds.scales.tau);
        for (i, level) in ds.levels.iter().enumerate() {
            let diameter = ds.scales.diameters[i];
            for (c, phi) in level.cover.clusterings.iter().zip(&level.phi) {
                for v in 0..g.node_count() {
                    let out = dist_to_complement(&g, c, v);
                    assert_eq!(phi[v], out.min(diameter));
                    if out >= diameter / tau {
                        assert!(phi[v] >= diameter / (2.0 * tau));
                    }
                    for u in 0..g.node_count() {
                        assert!((phi[u] - phi[v]).abs() <= dist[u][v] + 1e-9);
                    }
                }
            }
        }
    }
}

#[test]
fn partition_weights_exhaustive() {
    for g in suite_graphs() {
        let dist = g.all_pairs();
        let ds = TsApproximator::build(&g, &TsConfig::default(), 7).unwrap().structures;
        let tau = f64::from(ds.scales.tau);
        let pw = compute_pw(&ds);
        for (i, level) in ds.levels.iter().enumerate() {
            let diameter = ds.scales.diameters[i];
            let num = level.cover.len() as f64;
            for v in 0..g.node_count() {
                assert!(pw.w[i][v] >= 0.25 / tau - 1e-12 && pw.w[i][v] <= num);
                for p in &pw.p[i] {
                    assert!((0.0..=1.0).contains(&p[v]));
                }
                for u in 0..g.node_count() {
                    let lip = dist[u][v] / diameter;
                    for p in &pw.p[i] {
                        assert!((p[u] - p[v]).abs() <= lip + 1e-12);
                    }
                    assert!((pw.w[i][u] - pw.w[i][v]).abs() <= num * lip + 1e-12);
                }
            }
        }
    }
}

#[test]
fn rows_and_entries_follow_the_formula() {
    for g in suite_graphs() {
        let ts = TsApproximator::build(&g, &TsConfig::default(), 8).unwrap();
        let ds = &ts.structures;
        let r = &ts.approximator.r;
        let Construction::DistanceStructures { rows, num, .. } = &ts.approximator.construction else { panic!() };
        let n = g.node_count();
        let scales = ds.scales.len();
        if scales < 2 {
            continue;
        }
        let expected_rows: usize = (0..scales - 1)
            .map(|i| ds.levels[i].cover.clusterings.iter().map(|c| c.len()).sum::<usize>() * ds.levels[i + 1].cover.len())
            .sum();
        assert_eq!(rows.len(), expected_rows);
        assert_eq!(r.nrows(), expected_rows);
        let num = (*num).max(ds.num());
        assert!(expected_rows <= scales * num * num * n);

        let pw = compute_pw(ds);
        for (row, key) in rows.iter().enumerate() {
            let members = ds.levels[key.scale].cover.clusterings[key.clustering].members(key.cluster);
            let upper = &ds.levels[key.scale + 1].cover.clusterings[key.upper];
            let inside = members.iter().all(|&v| upper.cluster_of(v) == upper.cluster_of(members[0]));
            for v in 0..n {
                let mut want = 0.0;
                if inside && members.contains(&v) {
                    let den = pw.w[key.scale][v] * pw.w[key.scale + 1][v];
                    want = ds.scales.diameters[key.scale + 1] * pw.p[key.scale][key.clustering][v] * pw.p[key.scale + 1][key.upper][v] / den;
                }
                assert_eq!(r.get(row, v), want);
            }
        }
    }
}

#[test]
fn column_sparsity_within_bounds() {
    for g in suite_graphs() {
        let ts = TsApproximator::build(&g, &TsConfig::default(), 9).unwrap();
        let r = &ts.approximator.r;
        let ds = &ts.structures;
        let num = ds.num();
        assert!(r.max_column_nnz() <= r.bound());
        assert!(r.bound() <= ds.scales.len() * num * num);
        let a = edge_operator(&g, r).unwrap();
        assert!(a.max_column_nnz() <= a.bound() && a.bound() <= 2 * r.bound());

        let tree = TreeApproximator::build(&g, 9).unwrap();
        let tr = &tree.approximator.r;
        assert!(tr.max_column_nnz() <= tree.tree.height());
        let ta = edge_operator(&g, tr).unwrap();
        assert!(ta.max_column_nnz() <= 2 * tree.tree.height());
    }
}

#[test]
fn degenerate_scale_gives_scaled_identity() {
    let g = Graph::parse("0 1 1").unwrap();
    let ts = TsApproximator::build(&g, &TsConfig { tau: Some(2), num: None }, 0).unwrap();
    assert_eq!(ts.approximator.r.to_dense(), vec![vec![16.0, 0.0], vec![0.0, 16.0]]);
}

#[test]
fn cycle_adjacent_pairs_after_calibration() {
    let g = cycle8();
    let mut a = TsApproximator::build(&g, &TsConfig { tau: Some(2), num: None }, 0).unwrap().approximator;
    let cal = a.calibrate(&g, 200, &mut rng(1)).unwrap();
    let rho = cal.rho.unwrap();
    assert!(rho <= 200.0, "rho {rho}");
    for u in 0..8 {
        let mut d = vec![0.0; 8];
        d[u] = 1.0;
        d[(u + 1) % 8] = -1.0;
        let est = a.estimate(&d).unwrap();
        assert!((1.0..=rho).contains(&est), "pair {u}: {est}");
    }
}

#[test]
fn tree_invariants() {
    for g in suite_graphs() {
        let n = g.node_count();
        let t = build_tree(&g, &mut rng(3));
        assert!(t.len() <= 2 * n);
        assert!(t.height() <= 3 * (n as f64).log2().ceil() as usize);
        for v in 0..n {
            assert_eq!(t.members[t.leaf[v]], vec![v]);
        }
        for a in 0..t.len() {
            if let Some(p) = t.parent[a] {
                assert!(t.members[a].iter().all(|v| t.members[p].contains(v)));
                let mut side = vec![false; n];
                t.members[a].iter().for_each(|&v| side[v] = true);
                assert!(t.cap[a] > 0.0);
                assert_eq!(t.cap[a], cut_capacity(&g, &side));
            }
            for b in 0..t.len() {
                let (ma, mb) = (&t.members[a], &t.members[b]);
                let overlap = ma.iter().any(|v| mb.contains(v));
                let nested = ma.iter().all(|v| mb.contains(v)) || mb.iter().all(|v| ma.contains(v));
                assert!(!overlap || nested, "tree parts {a} and {b} cross");
            }
        }
        let (r, rows) = tree_to_r(&t);
        assert_eq!(rows.len(), t.len() - 1);
        assert!(r.max_column_nnz() <= t.height());
    }
}

#[test]
fn tree_rows_certify_lower_bounds() {
    let mut rng = rng(4);
    for k in 0..6 {
        let g = erdos_renyi(12 + 2 * k, 0.25, 4, &mut rng);
        let a = TreeApproximator::build(&g, k as u64).unwrap().approximator;
        for _ in 0..20 {
            let d = integer_demand(g.node_count(), 4, 3, &mut rng);
            let opt = opt_congestion(&g, &d).unwrap().cost;
            assert!(a.raw_norm(&d).unwrap() <= opt * (1.0 + 1e-9));
        }
    }
}

#[test]
fn cycle_congestion_demand_on_tree() {
    let g = cycle8();
    let mut a = TreeApproximator::build(&g, 0).unwrap().approximator;
    let d = cycle8_congestion();
    assert!(a.raw_norm(&d).unwrap() <= 1.5);
    assert_eq!(a.raw_norm(&[0.0; 8]).unwrap(), 0.0);
    let cal = a.calibrate(&g, 200, &mut rng(0)).unwrap();
    let est = a.estimate(&d).unwrap();
    assert!(1.5 <= est && est <= cal.rho.unwrap() * 1.5);
}

#[test]
fn single_edge_tree_is_exact() {
    let g = Graph::parse("0 1 1").unwrap();
    let a = TreeApproximator::build(&g, 0).unwrap().approximator;
    assert_eq!(a.r.nrows(), 2);
    assert_eq!(a.raw_norm(&[1.0, -1.0]).unwrap(), 1.0);
}

#[test]
fn sandwich_on_fresh_demands() {
    let mut rng = rng(5);
    for k in 0..4u64 {
        let g = family_graph([16, 32][k as usize % 2], k, &mut rng);
        let mut ts = TsApproximator::build(&g, &TsConfig::default(), k).unwrap().approximator;
        let mut tree = TreeApproximator::build(&g, k).unwrap().approximator;
        for a in [&mut ts, &mut tree] {
            let cal = a.calibrate(&g, 200, &mut SeedSplitter::new(k).rng("calibration")).unwrap();
            let rho = cal.rho.unwrap();
            for s in 0..100 {
                let d = if s % 2 == 0 { two_point_demand(g.node_count(), &mut rng) } else { integer_demand(g.node_count(), 5, 3, &mut rng) };
                let opt = a.norm.opt(&g, &d).unwrap();
                let est = a.estimate(&d).unwrap();
                assert!(opt <= est * (1.0 + 1e-9), "{:?}: OPT {opt} > {est}", a.norm);
                assert!(est <= rho * opt * (1.0 + 1e-9), "{:?}: {est} > rho {rho} · {opt}", a.norm);
            }
        }
    }
}

#[test]
fn calibration_is_reproducible() {
    let g = cycle(10);
    let r = TsApproximator::build(&g, &TsConfig::default(), 1).unwrap().approximator.r;
    let a = calibrate(&g, &r, Norm::L1, 50, &mut rng(3)).unwrap();
    let b = calibrate(&g, &r, Norm::L1, 50, &mut rng(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.samples, 45 + 50);
}

#[test]
fn documents_round_trip() {
    let mut rng = rng(6);
    let g = family_graph(20, 0, &mut rng);
    let mut ts = TsApproximator::build(&g, &TsConfig::default(), 3).unwrap().approximator;
    ts.calibrate(&g, 20, &mut rng).unwrap();
    let tree = TreeApproximator::build(&g, 3).unwrap().approximator;
    for a in [ts, tree] {
        let text = a.to_json();
        let back = CostApproximator::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(back.r.triplets(), a.r.triplets());
        assert_eq!(back.calibration, a.calibration);
    }
    assert!(CostApproximator::from_json("{\"format\":\"other\"}").is_err());
}

#[test]
fn construction_is_deterministic() {
    let g = family_graph(20, 1, &mut rng(7));
    let seeds = SeedSplitter::new(4);
    let scales = build_scales(&g, 3).unwrap();
    let a = build_structures(&g, &scales, 6, &seeds).unwrap();
    let b = build_structures(&g, &scales, 6, &seeds).unwrap();
    assert_eq!(a, b);
    let ta = TreeApproximator::build(&g, 4).unwrap().tree;
    let tb = TreeApproximator::build(&g, 4).unwrap().tree;
    assert_eq!(ta, tb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tree_norm_never_exceeds_congestion(seed in any::<u64>(), n in 4usize..14) {
        let mut rng = rng(seed);
        let g = erdos_renyi(n, 0.3, 5, &mut rng);
        let a = TreeApproximator::build(&g, seed).unwrap().approximator;
        let d = integer_demand(n, 3, 4, &mut rng);
        prop_assert!(a.raw_norm(&d).unwrap() <= opt_congestion(&g, &d).unwrap().cost * (1.0 + 1e-9));
    }

    #[test]
    fn ts_columns_have_positive_mass(seed in any::<u64>(), n in 3usize..16) {
        let g = erdos_renyi(n, 0.3, 5, &mut rng(seed));
        let a = TsApproximator::build(&g, &TsConfig::default(), seed).unwrap().approximator;
        for v in 0..n {
            let (_, vals) = a.r.column(v);
            prop_assert!(vals.iter().all(|&x| x > 0.0));
            prop_assert!(!vals.is_empty());
        }
    }
}

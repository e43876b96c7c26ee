//! ℓ∞ cost approximator from a hierarchical decomposition tree.
//!
//! The tree is built by recursive balanced bisection: each part is ordered
//! by Dijkstra distance (edge length `w`, i.e. inverse capacity) from a
//! peripheral node, and the prefix with the sparsest cut among those holding
//! between a third and two thirds of the part becomes the first child. The
//! rest is split into its connected components, so every tree node induces a
//! connected subgraph. The
//! row of tree edge `e` is `1_{S_e} / cap(e)`, so `|⟨R_e, d⟩|` is exactly the
//! cut lower bound `|d(S_e)| / cap(S_e)` and `‖Rd‖∞ ≤ OPT(d)` always.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Calibration, Construction, CostApproximator, Norm};
use crate::error::Result;
use crate::graph::Graph;
use crate::seed::SeedSplitter;
use crate::sparse::ColSparseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompTree {
    /// Parent of each tree node; the root (node 0) has none.
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Graph nodes below each tree node, sorted.
    pub members: Vec<Vec<usize>>,
    /// Capacity of the cut `(S_e, V∖S_e)`; 0 for the root.
    pub cap: Vec<f64>,
    /// Leaf of each graph node.
    pub leaf: Vec<usize>,
}

impl DecompTree {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn depth(&self, mut t: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent[t] {
            t = p;
            d += 1;
        }
        d
    }

    /// Number of edges on the longest root-leaf path.
    pub fn height(&self) -> usize {
        self.leaf.iter().map(|&t| self.depth(t)).max().unwrap_or(0)
    }

    /// Non-root tree nodes, each standing for the edge to its parent.
    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&t| self.parent[t].is_some())
    }
}

/// Total `1/w` over graph edges with exactly one endpoint in `side`.
pub fn cut_capacity(g: &Graph, side: &[bool]) -> f64 {
    g.edges().iter().filter(|e| side[e.tail] != side[e.head]).map(|e| 1.0 / e.weight).sum()
}

pub fn build_tree<R: Rng>(g: &Graph, rng: &mut R) -> DecompTree {
    let n = g.node_count();
    let mut t = DecompTree { parent: Vec::new(), children: Vec::new(), members: Vec::new(), cap: Vec::new(), leaf: vec![0; n] };
    let mut stack = vec![(None, (0..n).collect::<Vec<_>>())];
    while let Some((parent, part)) = stack.pop() {
        let id = t.parent.len();
        let cap = if parent.is_some() {
            let mut side = vec![false; n];
            part.iter().for_each(|&v| side[v] = true);
            cut_capacity(g, &side)
        } else {
            0.0
        };
        t.parent.push(parent);
        t.children.push(Vec::new());
        t.cap.push(cap);
        if let Some(p) = parent {
            t.children[p].push(id);
        }
        if part.len() == 1 {
            t.leaf[part[0]] = id;
        } else {
            let (a, b) = split(g, &part, rng);
            let mut children = components(g, &a);
            children.extend(components(g, &b));
            for child in children.into_iter().rev() {
                stack.push((Some(id), child));
            }
        }
        t.members.push(part);
    }
    t
}

// Balanced sparse split of `part` (at least two nodes).
fn split<R: Rng>(g: &Graph, part: &[usize], rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let n = g.node_count();
    let k = part.len();
    if k == 2 {
        return (vec![part[0]], vec![part[1]]);
    }
    let mut allowed = vec![false; n];
    part.iter().for_each(|&v| allowed[v] = true);
    let start = part[rng.gen_range(0..k)];
    let first = farthest(g, part, &allowed, start);
    let second = farthest(g, part, &allowed, first);

    let (lo, hi) = (k.div_ceil(3).max(1), (2 * k / 3).max(1).min(k - 1));
    let mut best: Option<(f64, Vec<usize>)> = None;
    for seed in [first, second] {
        let dist = g.distances_within(&[seed], &allowed);
        let mut order = part.to_vec();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        // Sweep prefixes, tracking the induced cut incrementally.
        let mut inside = vec![false; n];
        let mut cut = 0.0;
        for (i, &v) in order.iter().enumerate() {
            for &(u, e) in g.neighbors(v) {
                if allowed[u] {
                    let c = 1.0 / g.edge(e).weight;
                    cut += if inside[u] { -c } else { c };
                }
            }
            inside[v] = true;
            let size = i + 1;
            if size >= lo && size <= hi {
                let ratio = cut / size.min(k - size) as f64;
                if best.as_ref().is_none_or(|b| ratio < b.0) {
                    best = Some((ratio, order[..size].to_vec()));
                }
            }
        }
    }
    let mut a = best.map(|b| b.1).unwrap_or_else(|| part[..k / 2].to_vec());
    a.sort_unstable();
    let mut mark = vec![false; n];
    a.iter().for_each(|&v| mark[v] = true);
    let b = part.iter().copied().filter(|&v| !mark[v]).collect();
    (a, b)
}

/// Connected components of the subgraph induced by `nodes`, each sorted,
/// ordered by smallest member.
pub fn components(g: &Graph, nodes: &[usize]) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let mut allowed = vec![false; n];
    nodes.iter().for_each(|&v| allowed[v] = true);
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    for &s in &sorted {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut i = 0;
        while i < comp.len() {
            for &(u, _) in g.neighbors(comp[i]) {
                if allowed[u] && !seen[u] {
                    seen[u] = true;
                    comp.push(u);
                }
            }
            i += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn farthest(g: &Graph, part: &[usize], allowed: &[bool], from: usize) -> usize {
    let dist = g.distances_within(&[from], allowed);
    let key = |v: usize| if dist[v].is_finite() { dist[v] } else { f64::MAX };
    part.iter().copied().max_by(|&a, &b| key(a).total_cmp(&key(b)).then(b.cmp(&a))).unwrap_or(from)
}

/// `R_{e,v} = 1/cap(e)` for `v ∈ S_e`; one row per tree edge.
pub fn tree_to_r(t: &DecompTree) -> (ColSparseMatrix, Vec<usize>) {
    let n = t.leaf.len();
    let rows: Vec<usize> = t.edges().collect();
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (r, &e) in rows.iter().enumerate() {
        for &v in &t.members[e] {
            columns[v].push((r, 1.0 / t.cap[e]));
        }
    }
    let r = ColSparseMatrix::from_columns(rows.len(), columns, t.height()).expect("column count equals leaf depth");
    (r, rows)
}

#[derive(Debug, Clone)]
pub struct TreeApproximator {
    pub tree: DecompTree,
    pub approximator: CostApproximator,
}

impl TreeApproximator {
    pub fn build(g: &Graph, seed: u64) -> Result<Self> {
        let tree = build_tree(g, &mut SeedSplitter::new(seed).rng("tree"));
        let (r, rows) = tree_to_r(&tree);
        let approximator = CostApproximator {
            norm: Norm::Linf,
            n: g.node_count(),
            seed,
            r,
            calibration: Calibration::identity(),
            construction: Construction::DecompositionTree { parent: tree.parent.clone(), cap: tree.cap.clone(), rows },
        };
        Ok(TreeApproximator { tree, approximator })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::cycle;
    use rand::SeedableRng;

    #[test]
    fn single_edge_tree() {
        let g = Graph::parse("0 1 4").unwrap();
        let t = TreeApproximator::build(&g, 0).unwrap();
        assert_eq!(t.tree.len(), 3);
        assert_eq!(t.tree.cap[1], 0.25);
        let rd = t.approximator.r.matvec(&[1.0, -1.0]).unwrap();
        assert_eq!(rd.iter().fold(0.0f64, |m, x| m.max(x.abs())), 4.0);
    }

    #[test]
    fn star_leaf_cuts_are_degree_cuts() {
        let g = Graph::parse("0 1 1\n0 2 1\n0 3 1\n0 4 1").unwrap();
        let t = TreeApproximator::build(&g, 5).unwrap().tree;
        for v in 1..5 {
            assert_eq!(t.cap[t.leaf[v]], 1.0);
        }
    }

    #[test]
    fn cycle_cuts_are_arcs() {
        let g = cycle(8);
        for seed in 0..5 {
            let t = TreeApproximator::build(&g, seed).unwrap().tree;
            for e in t.edges() {
                assert!(t.cap[e] == 1.0 || t.cap[e] == 2.0, "cap {}", t.cap[e]);
            }
            assert!(t.height() <= 6);
        }
    }

    #[test]
    fn parts_are_connected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let g = crate::generate::grid(4, 5, 3, &mut rng);
        let t = TreeApproximator::build(&g, 1).unwrap().tree;
        for members in &t.members {
            assert_eq!(components(&g, members).len(), 1);
        }
    }
}

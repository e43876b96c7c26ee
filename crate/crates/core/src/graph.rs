//! Undirected weighted graphs with a fixed edge orientation.
//!
//! Edge `k` is oriented `tail -> head` as listed in the input; this order is
//! the column order of the incidence operator `B`. The weight `w(e)` plays
//! two roles: a length for transshipment and an inverse capacity for
//! congestion routing.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::error::{check_len, Error, Result};

/// Per-edge vector; negative entries flow against the edge orientation.
pub type Flow = Vec<f64>;
/// Per-node vector of dual potentials.
pub type Potentials = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<(usize, usize)>>,
    names: Option<Vec<String>>,
}

impl Graph {
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::build(n, edges, None)
    }

    fn build(n: usize, edges: Vec<Edge>, names: Option<Vec<String>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        let mut adj = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            if e.tail >= n || e.head >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge {k} references node outside 0..{n}"
                )));
            }
            if e.tail == e.head {
                return Err(Error::InvalidGraph(format!("edge {k} is a self-loop")));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(Error::InvalidGraph(format!(
                    "edge {k} has nonpositive weight {}",
                    e.weight
                )));
            }
            adj[e.tail].push((e.head, k));
            adj[e.head].push((e.tail, k));
        }
        let g = Graph { n, edges, adj, names };
        if !g.is_connected() {
            return Err(Error::InvalidGraph("graph is disconnected".into()));
        }
        Ok(g)
    }

    /// Parses an edge list: one `u v w` triple per line, `#` starts a comment.
    ///
    /// If every node token is an unsigned integer the tokens are taken as
    /// dense ids `0..n-1`; otherwise names are mapped to ids in order of
    /// first appearance.
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected `u v w`, found {} fields", toks.len()),
                });
            }
            let w: f64 = toks[2].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad weight `{}`", toks[2]),
            })?;
            if toks[0] == toks[1] {
                return Err(Error::Parse { line: line_no, msg: "self-loop".into() });
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("nonpositive weight {w}"),
                });
            }
            raw.push((line_no, toks[0].to_string(), toks[1].to_string(), w));
        }
        if raw.is_empty() {
            return Err(Error::InvalidGraph("no edges".into()));
        }
        let numeric = raw
            .iter()
            .all(|(_, u, v, _)| u.parse::<usize>().is_ok() && v.parse::<usize>().is_ok());
        let mut edges = Vec::with_capacity(raw.len());
        if numeric {
            let mut n = 0;
            for (_, u, v, w) in &raw {
                let (u, v) = (u.parse::<usize>().unwrap(), v.parse::<usize>().unwrap());
                n = n.max(u + 1).max(v + 1);
                edges.push(Edge { tail: u, head: v, weight: *w });
            }
            let mut seen = vec![false; n];
            for e in &edges {
                seen[e.tail] = true;
                seen[e.head] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::InvalidGraph(format!(
                    "node ids are not dense: {missing} never appears"
                )));
            }
            Self::build(n, edges, None)
        } else {
            let mut ids: HashMap<String, usize> = HashMap::new();
            let mut names = Vec::new();
            let mut intern = |s: &String| -> usize {
                *ids.entry(s.clone()).or_insert_with(|| {
                    names.push(s.clone());
                    names.len() - 1
                })
            };
            for (_, u, v, w) in &raw {
                let (u, v) = (intern(u), intern(v));
                edges.push(Edge { tail: u, head: v, weight: *w });
            }
            Self::build(names.len(), edges, Some(names))
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> Edge {
        self.edges[k]
    }

    /// `(neighbor, edge index)` pairs incident to `v`.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adj[v]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.weight).collect()
    }

    pub fn max_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).fold(0.0, f64::max)
    }

    pub fn min_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).fold(f64::INFINITY, f64::min)
    }

    pub fn node_id(&self, token: &str) -> Option<usize> {
        match &self.names {
            Some(names) => names.iter().position(|s| s == token),
            None => token.parse::<usize>().ok().filter(|&v| v < self.n),
        }
    }

    pub fn node_name(&self, v: usize) -> String {
        match &self.names {
            Some(names) => names[v].clone(),
            None => v.to_string(),
        }
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// `Bf`: net out-flow at every node.
    pub fn apply_b(&self, f: &[f64]) -> Result<Vec<f64>> {
        check_len(self.edges.len(), f.len())?;
        let mut d = vec![0.0; self.n];
        for (e, &fe) in self.edges.iter().zip(f) {
            d[e.tail] += fe;
            d[e.head] -= fe;
        }
        Ok(d)
    }

    /// `Bᵀφ`: potential difference `φ(tail) − φ(head)` along every edge.
    pub fn apply_bt(&self, phi: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, phi.len())?;
        Ok(self.edges.iter().map(|e| phi[e.tail] - phi[e.head]).collect())
    }

    /// Transshipment cost `‖Wf‖₁`.
    pub fn l1_cost(&self, f: &[f64]) -> f64 {
        self.edges.iter().zip(f).map(|(e, x)| e.weight * x.abs()).sum()
    }

    /// Congestion `‖Wf‖∞`.
    pub fn congestion(&self, f: &[f64]) -> f64 {
        self.edges
            .iter()
            .zip(f)
            .map(|(e, x)| e.weight * x.abs())
            .fold(0.0, f64::max)
    }

    /// Multi-source Dijkstra over the whole graph.
    pub fn distances_from(&self, sources: &[usize]) -> Vec<f64> {
        self.dijkstra(sources, None).0
    }

    /// Multi-source Dijkstra restricted to nodes with `allowed[v]`.
    pub fn distances_within(&self, sources: &[usize], allowed: &[bool]) -> Vec<f64> {
        self.dijkstra(sources, Some(allowed)).0
    }

    /// Shortest-path tree from `root`: distances and the parent edge of every
    /// non-root node.
    pub fn shortest_path_tree(&self, root: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        self.dijkstra(&[root], None)
    }

    fn dijkstra(
        &self,
        sources: &[usize],
        allowed: Option<&[bool]>,
    ) -> (Vec<f64>, Vec<Option<usize>>) {
        let mut dist = vec![f64::INFINITY; self.n];
        let mut parent = vec![None; self.n];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            if allowed.is_none_or(|a| a[s]) {
                dist[s] = 0.0;
                heap.push(HeapItem { dist: 0.0, node: s });
            }
        }
        while let Some(HeapItem { dist: du, node: u }) = heap.pop() {
            if du > dist[u] {
                continue;
            }
            for &(v, k) in &self.adj[u] {
                if allowed.is_some_and(|a| !a[v]) {
                    continue;
                }
                let nd = du + self.edges[k].weight;
                if nd < dist[v] {
                    dist[v] = nd;
                    parent[v] = Some(k);
                    heap.push(HeapItem { dist: nd, node: v });
                }
            }
        }
        (dist, parent)
    }

    /// All-pairs shortest-path distances (one Dijkstra per node).
    pub fn all_pairs(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|v| self.distances_from(&[v])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct HeapItem {
    pub dist: f64,
    pub node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A node-indexed vector whose entries are meant to sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Demand(pub Vec<f64>);

impl Demand {
    pub fn zeros(n: usize) -> Self {
        Demand(vec![0.0; n])
    }

    /// `1_s − 1_t`.
    pub fn pair(n: usize, s: usize, t: usize) -> Self {
        let mut d = vec![0.0; n];
        d[s] += 1.0;
        d[t] -= 1.0;
        Demand(d)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn l1(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// Parses `node value` lines against the node names of `g`; nodes not
    /// listed get demand 0.
    pub fn parse(text: &str, g: &Graph) -> Result<Self> {
        let mut d = vec![0.0; g.node_count()];
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected `node value`, found {} fields", toks.len()),
                });
            }
            let v = g.node_id(toks[0]).ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("unknown node `{}`", toks[0]),
            })?;
            let x: f64 = toks[1].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad value `{}`", toks[1]),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse { line: line_no, msg: "non-finite value".into() });
            }
            d[v] += x;
        }
        Ok(Demand(d))
    }
}

/// Checks that `d` sums to zero: exactly when every entry is an integer,
/// otherwise within `1e-9·‖d‖₁`.
pub fn validate_demand(d: &[f64]) -> Result<()> {
    let sum: f64 = d.iter().sum();
    let integral = d.iter().all(|x| x.fract() == 0.0 && x.abs() < 2f64.powi(52));
    let l1: f64 = d.iter().map(|x| x.abs()).sum();
    let ok = if integral { sum == 0.0 } else { sum.abs() <= 1e-9 * l1 };
    if ok {
        Ok(())
    } else {
        Err(Error::Imbalanced { residual: sum })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CYCLE8: &str = "A B 1\nB C 1\nC D 1\nD E 1\nE F 1\nF G 1\nG H 1\nH A 1\n";

    #[test]
    fn parses_named_cycle() {
        let g = Graph::parse(CYCLE8).unwrap();
        assert_eq!(g.node_count(), 8);
        assert_eq!(g.edge_count(), 8);
        assert_eq!(g.node_id("H"), Some(7));
        assert_eq!(g.node_name(2), "C");
    }

    #[test]
    fn parses_single_edge_and_preserves_order() {
        let g = Graph::parse("0 1 5").unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
        let t = Graph::parse("0 1 1\n1 2 2\n2 0 3\n").unwrap();
        let w: Vec<f64> = t.edges().iter().map(|e| e.weight).collect();
        assert_eq!(w, vec![1.0, 2.0, 3.0]);
        assert_eq!(t.edge(2).tail, 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(Graph::parse("0 0 1"), Err(Error::Parse { .. })));
        assert!(matches!(Graph::parse("0 1 0"), Err(Error::Parse { .. })));
        assert!(matches!(Graph::parse("0 1 -2"), Err(Error::Parse { .. })));
        assert!(matches!(Graph::parse("0 1 1\n2 3 1"), Err(Error::InvalidGraph(_))));
        assert!(matches!(Graph::parse("0 1"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Graph::parse("0 2 1"), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn incidence_columns() {
        let g = Graph::parse("0 1 1\n1 2 2\n2 0 3\n").unwrap();
        assert_eq!(g.apply_b(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, -1.0, 0.0]);
        assert_eq!(g.apply_b(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(g.apply_b(&[1.0]).is_err());
        assert_eq!(g.apply_bt(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, -1.0]);
        assert_eq!(g.apply_bt(&[3.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(g.apply_bt(&[1.0]).is_err());
    }

    #[test]
    fn cycle_sum_of_potential_differences_vanishes() {
        let g = Graph::parse("0 1 1\n1 2 2\n2 0 3\n").unwrap();
        let bt = g.apply_bt(&[0.37, -1.25, 4.5]).unwrap();
        assert!(bt.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn cycle_flow_produces_cycle_demand() {
        let g = Graph::parse(CYCLE8).unwrap();
        // edges: AB BC CD DE EF FG GH HA
        let mut f = vec![0.0; 8];
        f[0] = 1.0; // A->B
        f[7] = -1.0; // A->H against H->A
        f[6] = -1.0; // H->G against G->H
        f[3] = 1.0; // D->E
        let d = g.apply_b(&f).unwrap();
        let id = |s: &str| g.node_id(s).unwrap();
        assert_eq!(d[id("A")], 2.0);
        assert_eq!(d[id("D")], 1.0);
        assert_eq!(d[id("B")], -1.0);
        assert_eq!(d[id("G")], -1.0);
        assert_eq!(d[id("E")], -1.0);
        assert_eq!(d[id("C")] + d[id("F")] + d[id("H")], 0.0);
        assert!(validate_demand(&d).is_ok());
        assert_eq!(g.l1_cost(&f), 4.0);
    }

    #[test]
    fn demand_validation() {
        assert!(validate_demand(&[0.0; 4]).is_ok());
        match validate_demand(&[1.0, 0.0]) {
            Err(Error::Imbalanced { residual }) => assert_eq!(residual, 1.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(validate_demand(&[0.1, 0.2, -0.3]).is_ok());
    }

    #[test]
    fn demand_file_uses_graph_names() {
        let g = Graph::parse(CYCLE8).unwrap();
        let d = Demand::parse("A 2\nD 1\nB -1\nG -1\nE -1\n", &g).unwrap();
        assert_eq!(d.0[0], 2.0);
        assert_eq!(d.l1(), 6.0);
        assert!(Demand::parse("Z 1", &g).is_err());
    }

    #[test]
    fn shortest_paths() {
        let g = Graph::parse("0 1 1\n1 2 2\n2 0 5\n").unwrap();
        assert_eq!(g.distances_from(&[0]), vec![0.0, 1.0, 3.0]);
        let (_, parent) = g.shortest_path_tree(0);
        assert_eq!(parent, vec![None, Some(0), Some(1)]);
        let within = g.distances_within(&[0], &[true, false, true]);
        assert_eq!(within, vec![0.0, f64::INFINITY, 5.0]);
    }

    proptest::proptest! {
        #[test]
        fn incidence_is_adjoint(
            f in proptest::collection::vec(-10.0f64..10.0, 5),
            phi in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let g = Graph::parse("0 1 1\n1 2 2\n2 3 1\n3 0 4\n0 2 1\n").unwrap();
            let bf = g.apply_b(&f).unwrap();
            let btphi = g.apply_bt(&phi).unwrap();
            let lhs: f64 = bf.iter().zip(&phi).map(|(a, b)| a * b).sum();
            let rhs: f64 = f.iter().zip(&btphi).map(|(a, b)| a * b).sum();
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            let total: f64 = bf.iter().sum();
            proptest::prop_assert!(total.abs() <= 1e-9 * (1.0 + bf.iter().map(|x| x.abs()).sum::<f64>()));
        }
    }
}

//! Single-process simulation of the Minor-Aggregation model, and the
//! distributed products with `R` and `A = R·B·W⁻¹` built on top of it.
//!
//! A round contracts a set of edges, folds one value per node over every
//! supernode with `⊕`, and folds one value per remaining edge endpoint over
//! the incident edges of every supernode with `⊗`. Programs only see node
//! values, edge values and round outputs; the simulator counts rounds and
//! audits message sizes in 64-bit words.
//!
//! Distributed vectors are stored the usual way: node vectors at nodes,
//! edge vectors at edges, and a row vector entry `y_r` at every member of
//! the node set that row `r` lives on. The collected `Vec<f64>` returned by
//! the products is just the union of those local pieces.

use std::cell::{Cell, RefCell};

use serde::Serialize;

use crate::approx::tree::DecompTree;
use crate::approx::ts::{compute_pw, DistanceStructureSet};
use crate::approx::{CostApproximator, Norm};
use crate::error::{check_len, Error, Result};
use crate::flow::{Backend, Problem};
use crate::graph::Graph;
use crate::sparse::LinearOperator;

/// Size of a message in 64-bit words.
pub trait Message: Clone {
    fn words(&self) -> usize;
}

macro_rules! one_word {
    ($($t:ty),*) => {$(
        impl Message for $t {
            fn words(&self) -> usize {
                1
            }
        }
    )*};
}
one_word!(f64, usize, u64, i64, bool);

impl Message for () {
    fn words(&self) -> usize {
        0
    }
}

impl<A: Message, B: Message> Message for (A, B) {
    fn words(&self) -> usize {
        self.0.words() + self.1.words()
    }
}

impl<A: Message, B: Message, C: Message> Message for (A, B, C) {
    fn words(&self) -> usize {
        self.0.words() + self.1.words() + self.2.words()
    }
}

impl<T: Message> Message for Option<T> {
    fn words(&self) -> usize {
        self.as_ref().map_or(1, |v| v.words().max(1))
    }
}

/// A commutative, associative fold.
pub trait Operator<T> {
    fn name(&self) -> String;
    fn identity(&self) -> T;
    fn combine(&self, a: &T, b: &T) -> T;
    /// Equality used by the operator checks.
    fn same(&self, a: &T, b: &T) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sum;

impl Operator<f64> for Sum {
    fn name(&self) -> String {
        "sum".into()
    }
    fn identity(&self) -> f64 {
        0.0
    }
    fn combine(&self, a: &f64, b: &f64) -> f64 {
        a + b
    }
    fn same(&self, a: &f64, b: &f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Min;

#[derive(Debug, Clone, Copy, Default)]
pub struct Max;

impl Operator<f64> for Max {
    fn name(&self) -> String {
        "max".into()
    }
    fn identity(&self) -> f64 {
        f64::NEG_INFINITY
    }
    fn combine(&self, a: &f64, b: &f64) -> f64 {
        a.max(*b)
    }
    fn same(&self, a: &f64, b: &f64) -> bool {
        a == b
    }
}

impl Operator<usize> for Min {
    fn name(&self) -> String {
        "min".into()
    }
    fn identity(&self) -> usize {
        usize::MAX
    }
    fn combine(&self, a: &usize, b: &usize) -> usize {
        *a.min(b)
    }
    fn same(&self, a: &usize, b: &usize) -> bool {
        a == b
    }
}

impl Operator<usize> for Max {
    fn name(&self) -> String {
        "max".into()
    }
    fn identity(&self) -> usize {
        0
    }
    fn combine(&self, a: &usize, b: &usize) -> usize {
        *a.max(b)
    }
    fn same(&self, a: &usize, b: &usize) -> bool {
        a == b
    }
}

/// Componentwise pair of two operators.
#[derive(Debug, Clone, Copy, Default)]
pub struct Both<P, Q>(pub P, pub Q);

impl<S, T, P: Operator<S>, Q: Operator<T>> Operator<(S, T)> for Both<P, Q> {
    fn name(&self) -> String {
        format!("({},{})", self.0.name(), self.1.name())
    }
    fn identity(&self) -> (S, T) {
        (self.0.identity(), self.1.identity())
    }
    fn combine(&self, a: &(S, T), b: &(S, T)) -> (S, T) {
        (self.0.combine(&a.0, &b.0), self.1.combine(&a.1, &b.1))
    }
    fn same(&self, a: &(S, T), b: &(S, T)) -> bool {
        self.0.same(&a.0, &b.0) && self.1.same(&a.1, &b.1)
    }
}

/// Fold over `()`, for rounds that only use one of the two steps.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unused;

impl Operator<()> for Unused {
    fn name(&self) -> String {
        "none".into()
    }
    fn identity(&self) {}
    fn combine(&self, _: &(), _: &()) {}
    fn same(&self, _: &(), _: &()) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NetConfig {
    /// Largest message, in 64-bit words.
    pub word_budget: usize,
    /// Check commutativity and associativity on sampled triples each round.
    pub check_operators: bool,
    pub record_trace: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { word_budget: 4, check_operators: cfg!(debug_assertions), record_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub consensus_op: String,
    pub aggregate_op: String,
    pub supernodes: usize,
    /// Largest consensus and aggregation message, in words.
    pub consensus_words: usize,
    pub aggregate_words: usize,
}

/// The minor `G / {e : c_e = ⊤}` with self-loops removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Minor {
    supernode: Vec<usize>,
    members: Vec<Vec<usize>>,
    /// `(edge, supernode of tail, supernode of head)` for every surviving edge.
    edges: Vec<(usize, usize, usize)>,
}

impl Minor {
    pub fn supernode(&self, v: usize) -> usize {
        self.supernode[v]
    }

    /// Supernodes ordered by smallest member; members ascending.
    pub fn supernodes(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Per-node results of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput<X, Z> {
    /// `y_s` for the supernode of each node.
    pub consensus: Vec<X>,
    /// `⊗` over the incident edges of the supernode of each node.
    pub aggregate: Vec<Z>,
}

#[derive(Debug)]
pub struct MinorAggNetwork<'g> {
    graph: &'g Graph,
    config: NetConfig,
    rounds: Cell<u64>,
    words: Cell<u64>,
    trace: RefCell<Vec<RoundRecord>>,
}

impl<'g> MinorAggNetwork<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        Self::with_config(graph, NetConfig::default())
    }

    pub fn with_config(graph: &'g Graph, config: NetConfig) -> Self {
        MinorAggNetwork { graph, config, rounds: Cell::new(0), words: Cell::new(0), trace: RefCell::new(Vec::new()) }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn config(&self) -> NetConfig {
        self.config
    }

    pub fn rounds(&self) -> u64 {
        self.rounds.get()
    }

    /// Total words sent over all rounds, one message per node and per edge
    /// endpoint.
    pub fn words_sent(&self) -> u64 {
        self.words.get()
    }

    pub fn trace(&self) -> Vec<RoundRecord> {
        self.trace.borrow().clone()
    }

    /// Contracts the edges with `contract[e] = true`.
    pub fn minor(&self, contract: &[bool]) -> Result<Minor> {
        let g = self.graph;
        check_len(g.edge_count(), contract.len())?;
        let n = g.node_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut v: usize) -> usize {
            while parent[v] != v {
                parent[v] = parent[parent[v]];
                v = parent[v];
            }
            v
        }
        for (e, edge) in g.edges().iter().enumerate() {
            if contract[e] {
                let (a, b) = (find(&mut parent, edge.tail), find(&mut parent, edge.head));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut supernode = vec![usize::MAX; n];
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut id_of_root = vec![usize::MAX; n];
        for v in 0..n {
            let r = find(&mut parent, v);
            if id_of_root[r] == usize::MAX {
                id_of_root[r] = members.len();
                members.push(Vec::new());
            }
            supernode[v] = id_of_root[r];
            members[id_of_root[r]].push(v);
        }
        let edges = g
            .edges()
            .iter()
            .enumerate()
            .filter_map(|(e, edge)| {
                let (a, b) = (supernode[edge.tail], supernode[edge.head]);
                (a != b).then_some((e, a, b))
            })
            .collect();
        Ok(Minor { supernode, members, edges })
    }

    /// The minor with nothing contracted.
    pub fn uncontracted(&self) -> Minor {
        self.minor(&vec![false; self.graph.edge_count()]).expect("length matches edge count")
    }

    /// Contracts every edge whose endpoints share a label.
    pub fn minor_by_labels(&self, label: &[Option<usize>]) -> Result<Minor> {
        check_len(self.graph.node_count(), label.len())?;
        let contract: Vec<bool> =
            self.graph.edges().iter().map(|e| label[e.tail].is_some() && label[e.tail] == label[e.head]).collect();
        self.minor(&contract)
    }

    /// Runs one round on `minor`.
    ///
    /// `x[v]` is node `v`'s consensus value. `edge(e, y_a, y_b)` is the
    /// program of surviving edge `e` whose tail lies in supernode `a` and head
    /// in `b`; it returns `(z_{e,a}, z_{e,b})`. Folds run in ascending node
    /// and edge order.
    pub fn run_round<X, Z, P, Q, F>(&self, minor: &Minor, x: &[X], oplus: &P, mut edge: F, otimes: &Q) -> Result<RoundOutput<X, Z>>
    where
        X: Message,
        Z: Message,
        P: Operator<X>,
        Q: Operator<Z>,
        F: FnMut(usize, &X, &X) -> (Z, Z),
    {
        let n = self.graph.node_count();
        check_len(n, x.len())?;
        if minor.supernode.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: minor.supernode.len() });
        }
        let round = self.rounds.get() + 1;
        let budget = self.config.word_budget;
        let mut words = 0u64;
        let mut consensus_words = 0;
        for v in x {
            let w = v.words();
            if w > budget {
                return Err(Error::Audit(format!("round {round}: consensus value of {w} words exceeds budget {budget}")));
            }
            consensus_words = consensus_words.max(w);
            words += w as u64;
        }
        if self.config.check_operators {
            check_operator(oplus, x, round)?;
        }

        let y: Vec<X> = minor
            .members
            .iter()
            .map(|m| m.iter().fold(oplus.identity(), |acc, &v| oplus.combine(&acc, &x[v])))
            .collect();

        let mut agg: Vec<Z> = vec![otimes.identity(); minor.len()];
        let mut aggregate_words = 0;
        let mut sample: Vec<Z> = Vec::new();
        for &(e, a, b) in &minor.edges {
            let (za, zb) = edge(e, &y[a], &y[b]);
            for z in [&za, &zb] {
                let w = z.words();
                if w > budget {
                    return Err(Error::Audit(format!("round {round}: edge {e} sent {w} words, budget {budget}")));
                }
                aggregate_words = aggregate_words.max(w);
                words += w as u64;
            }
            if self.config.check_operators && sample.len() < 3 {
                sample.push(za.clone());
            }
            agg[a] = otimes.combine(&agg[a], &za);
            agg[b] = otimes.combine(&agg[b], &zb);
        }
        if self.config.check_operators {
            check_operator(otimes, &sample, round)?;
        }

        self.rounds.set(round);
        self.words.set(self.words.get() + words);
        if self.config.record_trace {
            self.trace.borrow_mut().push(RoundRecord {
                round,
                consensus_op: oplus.name(),
                aggregate_op: otimes.name(),
                supernodes: minor.len(),
                consensus_words,
                aggregate_words,
            });
        }
        let consensus = minor.supernode.iter().map(|&s| y[s].clone()).collect();
        let aggregate = minor.supernode.iter().map(|&s| agg[s].clone()).collect();
        Ok(RoundOutput { consensus, aggregate })
    }
}

// Commutativity and associativity on a deterministic sample of values.
fn check_operator<T, P: Operator<T>>(op: &P, values: &[T], round: u64) -> Result<()> {
    let k = values.len();
    if k == 0 {
        return Ok(());
    }
    for s in 0..3.min(k) {
        let a = &values[s];
        let b = &values[(s + 1) % k];
        let c = &values[(s * 7 + 2) % k];
        let ab = op.combine(a, b);
        if !op.same(&ab, &op.combine(b, a)) {
            return Err(Error::Audit(format!("round {round}: operator {} is not commutative", op.name())));
        }
        if !op.same(&op.combine(&ab, c), &op.combine(a, &op.combine(b, c))) {
            return Err(Error::Audit(format!("round {round}: operator {} is not associative", op.name())));
        }
    }
    Ok(())
}

/// What an edge knows about one block of `A`: its entries in the rows of
/// its endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
enum EdgeEntry {
    None,
    /// Both endpoints in the same row.
    Internal(usize, f64),
    Cross(Option<(usize, f64)>, Option<(usize, f64)>),
}

/// Rows of `R` grouped so that each node lies in at most one row per block,
/// and every row is a connected node set.
#[derive(Debug, Clone)]
pub struct RowBlock {
    row: Vec<Option<usize>>,
    entry: Vec<f64>,
    minor: Minor,
    edges: Vec<EdgeEntry>,
}

/// `R` (and `A = R·B·W⁻¹`) held as local knowledge: node `v` knows its
/// column of `R`, edge `e` its column of `A`.
#[derive(Debug, Clone)]
pub struct DistributedColumns {
    rows: usize,
    n: usize,
    blocks: Vec<RowBlock>,
    inv_w: Vec<f64>,
}

impl DistributedColumns {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Nonzero entries of node `v`'s column, by ascending row.
    pub fn column(&self, v: usize) -> Vec<(usize, f64)> {
        self.blocks.iter().filter_map(|b| b.row[v].map(|r| (r, b.entry[v]))).filter(|&(_, x)| x != 0.0).collect()
    }

    pub fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.n).map(|v| self.column(v)).collect()
    }

    /// Nonzero entries of edge `e`'s column of `A`, by ascending row.
    pub fn edge_column(&self, e: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for b in &self.blocks {
            match b.edges[e] {
                EdgeEntry::None => {}
                EdgeEntry::Internal(r, x) => out.push((r, x)),
                EdgeEntry::Cross(t, h) => {
                    let mut pair: Vec<(usize, f64)> = t.into_iter().chain(h).collect();
                    pair.sort_by_key(|p| p.0);
                    out.extend(pair);
                }
            }
        }
        out.retain(|p| p.1 != 0.0);
        out
    }

    /// Every node multiplies its entries by `s`; no communication.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for b in &mut out.blocks {
            b.entry.iter_mut().for_each(|x| *x *= s);
            for e in &mut b.edges {
                *e = match *e {
                    EdgeEntry::None => EdgeEntry::None,
                    EdgeEntry::Internal(r, x) => EdgeEntry::Internal(r, x * s),
                    EdgeEntry::Cross(t, h) => EdgeEntry::Cross(t.map(|(r, x)| (r, x * s)), h.map(|(r, x)| (r, x * s))),
                };
            }
        }
        out
    }
}

// Assembles blocks from per-node rows and entries, checks that each row is
// one supernode, and lets every edge learn its endpoints' entries with one
// uncontracted round per block.
fn assemble(net: &MinorAggNetwork, rows: usize, blocks: Vec<(Vec<Option<usize>>, Vec<f64>)>) -> Result<DistributedColumns> {
    let g = net.graph();
    let plain = net.uncontracted();
    let inv_w: Vec<f64> = g.edges().iter().map(|e| 1.0 / e.weight).collect();
    let mut out = Vec::with_capacity(blocks.len());
    for (row, entry) in blocks {
        let minor = net.minor_by_labels(&row)?;
        for members in minor.supernodes() {
            let r = row[members[0]];
            if r.is_some() && members.iter().any(|&v| row[v] != r) {
                return Err(Error::Audit("a supernode spans two rows".into()));
            }
        }
        let mut owner: Vec<Option<usize>> = vec![None; rows];
        for v in 0..g.node_count() {
            if let Some(r) = row[v] {
                let s = minor.supernode(v);
                if *owner[r].get_or_insert(s) != s {
                    return Err(Error::Audit(format!("row {r} is not connected")));
                }
            }
        }

        let x: Vec<(Option<usize>, f64)> = row.iter().copied().zip(entry.iter().copied()).collect();
        let mut edges = vec![EdgeEntry::None; g.edge_count()];
        net.run_round(
            &plain,
            &x,
            &Both(FirstOpt, Sum),
            |e, ya, yb| {
                let w = inv_w[e];
                edges[e] = match (ya.0, yb.0) {
                    (Some(ra), Some(rb)) if ra == rb => EdgeEntry::Internal(ra, ya.1 * w - yb.1 * w),
                    (ta, hb) => EdgeEntry::Cross(ta.map(|r| (r, ya.1 * w)), hb.map(|r| (r, -(yb.1 * w)))),
                };
                ((), ())
            },
            &Unused,
        )?;
        out.push(RowBlock { row, entry, minor, edges });
    }
    Ok(DistributedColumns { rows, n: g.node_count(), blocks: out, inv_w })
}

// Only used on uncontracted minors, where every supernode has one member.
#[derive(Debug, Clone, Copy)]
struct FirstOpt;

impl Operator<Option<usize>> for FirstOpt {
    fn name(&self) -> String {
        "first".into()
    }
    fn identity(&self) -> Option<usize> {
        None
    }
    fn combine(&self, a: &Option<usize>, b: &Option<usize>) -> Option<usize> {
        a.or(*b)
    }
    fn same(&self, _: &Option<usize>, _: &Option<usize>) -> bool {
        true
    }
}

/// Every node learns its column of the distance-structure approximator.
///
/// One containment round per `(i, j, j′)`: contracting the clusters of
/// `C_{i,j}` and folding `(min, max)` of the level-`(i+1)` cluster ids tells
/// each node whether its cluster lies inside one cluster of `C_{i+1,j′}`.
/// The entries then follow locally; one more round per block hands edges
/// their columns of `A`.
pub fn dist_compute_r_columns(net: &MinorAggNetwork, ds: &DistanceStructureSet) -> Result<DistributedColumns> {
    let g = net.graph();
    let n = g.node_count();
    let scales = &ds.scales;
    if scales.len() < 2 {
        let top = scales.unit * scales.beta;
        return assemble(net, n, vec![((0..n).map(Some).collect(), vec![top; n])]);
    }
    let pw = compute_pw(ds);
    let mut blocks = Vec::new();
    let mut offset = 0;
    for i in 0..scales.i_max() {
        let (lo, hi) = (&ds.levels[i], &ds.levels[i + 1]);
        let d_next = scales.diameters[i + 1];
        for (j, cl) in lo.cover.clusterings.iter().enumerate() {
            let labels: Vec<Option<usize>> = (0..n).map(|v| Some(cl.cluster_of(v))).collect();
            let minor = net.minor_by_labels(&labels)?;
            for (jp, up) in hi.cover.clusterings.iter().enumerate() {
                let x: Vec<(usize, usize)> = (0..n).map(|v| (up.cluster_of(v), up.cluster_of(v))).collect();
                let out = net.run_round(&minor, &x, &Both(Min, Max), |_, _, _| ((), ()), &Unused)?;
                let mut row = Vec::with_capacity(n);
                let mut entry = Vec::with_capacity(n);
                for v in 0..n {
                    row.push(Some(offset + cl.cluster_of(v)));
                    let (lo_id, hi_id) = out.consensus[v];
                    let den = pw.w[i][v] * pw.w[i + 1][v];
                    let val = if lo_id == hi_id && den > 0.0 { d_next * pw.p[i][j][v] * pw.p[i + 1][jp][v] / den } else { 0.0 };
                    entry.push(val);
                }
                blocks.push((row, entry));
                offset += cl.len();
            }
        }
    }
    assemble(net, offset, blocks)
}

/// Columns of the tree approximator. Each node knows its ancestors and
/// their cut capacities, so only the edge columns need communication.
pub fn dist_tree_columns(net: &MinorAggNetwork, tree: &DecompTree) -> Result<DistributedColumns> {
    let n = net.graph().node_count();
    check_len(n, tree.leaf.len())?;
    let mut row_of = vec![usize::MAX; tree.len()];
    let mut rows = 0;
    for t in tree.edges() {
        row_of[t] = rows;
        rows += 1;
    }
    let height = tree.height();
    let mut blocks = vec![(vec![None; n], vec![0.0; n]); height];
    for v in 0..n {
        let mut t = tree.leaf[v];
        let mut depth = tree.depth(t);
        while let Some(p) = tree.parent[t] {
            let block = &mut blocks[depth - 1];
            block.0[v] = Some(row_of[t]);
            block.1[v] = 1.0 / tree.cap[t];
            t = p;
            depth -= 1;
        }
    }
    assemble(net, rows, blocks)
}

/// The six products of [`dist_matvec`], with `A = R·B·W⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Product {
    R,
    Rt,
    A,
    At,
    AbsA,
    AbsAt,
}

impl Product {
    pub const ALL: [Product; 6] = [Product::R, Product::Rt, Product::A, Product::At, Product::AbsA, Product::AbsAt];
}

/// `R x`, `Rᵀ y`, `A x`, `Aᵀ y`, `|A| x` or `|A|ᵀ y`.
///
/// Transposed products are local dot products. `R x` takes one consensus
/// round per block, `A x` one more round to form `B·W⁻¹x` at the nodes, and
/// `|A| x` two rounds per block.
pub fn dist_matvec(net: &MinorAggNetwork, cols: &DistributedColumns, which: Product, x: &[f64]) -> Result<Vec<f64>> {
    let m = net.graph().edge_count();
    match which {
        Product::R => {
            check_len(cols.n, x.len())?;
            forward_r(net, cols, x)
        }
        Product::Rt => {
            check_len(cols.rows, x.len())?;
            Ok(local_rt(cols, x))
        }
        Product::A => {
            check_len(m, x.len())?;
            forward_a(net, cols, x)
        }
        Product::At => {
            check_len(cols.rows, x.len())?;
            Ok(local_at(cols, x, false))
        }
        Product::AbsA => {
            check_len(m, x.len())?;
            forward_abs_a(net, cols, x)
        }
        Product::AbsAt => {
            check_len(cols.rows, x.len())?;
            Ok(local_at(cols, x, true))
        }
    }
}

fn forward_r(net: &MinorAggNetwork, cols: &DistributedColumns, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; cols.rows];
    let mut vals = vec![0.0; cols.n];
    for b in &cols.blocks {
        for v in 0..cols.n {
            vals[v] = if b.row[v].is_some() { b.entry[v] * x[v] } else { 0.0 };
        }
        let res = net.run_round(&b.minor, &vals, &Sum, |_, _, _| ((), ()), &Unused)?;
        collect_rows(b, &res.consensus, &mut out);
    }
    Ok(out)
}

fn collect_rows(b: &RowBlock, per_node: &[f64], out: &mut [f64]) {
    for members in b.minor.supernodes() {
        if let Some(r) = b.row[members[0]] {
            out[r] = per_node[members[0]];
        }
    }
}

fn forward_a(net: &MinorAggNetwork, cols: &DistributedColumns, x: &[f64]) -> Result<Vec<f64>> {
    let plain = net.uncontracted();
    let unit = vec![(); cols.n];
    let res = net.run_round(
        &plain,
        &unit,
        &Unused,
        |e, _, _| {
            let f = x[e] * cols.inv_w[e];
            (f, -f)
        },
        &Sum,
    )?;
    forward_r(net, cols, &res.aggregate)
}

fn forward_abs_a(net: &MinorAggNetwork, cols: &DistributedColumns, x: &[f64]) -> Result<Vec<f64>> {
    let plain = net.uncontracted();
    let unit = vec![(); cols.n];
    let mut out = vec![0.0; cols.rows];
    for b in &cols.blocks {
        // Edges inside a row report to their tail, which feeds the consensus.
        let inner = net.run_round(
            &plain,
            &unit,
            &Unused,
            |e, _, _| match b.edges[e] {
                EdgeEntry::Internal(_, a) => (a.abs() * x[e], 0.0),
                _ => (0.0, 0.0),
            },
            &Sum,
        )?;
        // Edges between rows report to each side directly.
        let res = net.run_round(
            &b.minor,
            &inner.aggregate,
            &Sum,
            |e, _, _| match b.edges[e] {
                EdgeEntry::Cross(t, h) => (t.map_or(0.0, |(_, a)| a.abs() * x[e]), h.map_or(0.0, |(_, a)| a.abs() * x[e])),
                _ => (0.0, 0.0),
            },
            &Sum,
        )?;
        let total: Vec<f64> = res.consensus.iter().zip(&res.aggregate).map(|(c, a)| c + a).collect();
        collect_rows(b, &total, &mut out);
    }
    Ok(out)
}

fn local_rt(cols: &DistributedColumns, y: &[f64]) -> Vec<f64> {
    (0..cols.n)
        .map(|v| {
            let mut acc = 0.0;
            for b in &cols.blocks {
                if let Some(r) = b.row[v] {
                    if b.entry[v] != 0.0 {
                        acc += b.entry[v] * y[r];
                    }
                }
            }
            acc
        })
        .collect()
}

fn local_at(cols: &DistributedColumns, y: &[f64], abs: bool) -> Vec<f64> {
    let m = cols.inv_w.len();
    let f = |a: f64| if abs { a.abs() } else { a };
    (0..m)
        .map(|e| {
            let mut acc = 0.0;
            for b in &cols.blocks {
                match b.edges[e] {
                    EdgeEntry::None => {}
                    EdgeEntry::Internal(r, a) => acc += f(a) * y[r],
                    EdgeEntry::Cross(t, h) => {
                        if let Some((r, a)) = t {
                            acc += f(a) * y[r];
                        }
                        if let Some((r, a)) = h {
                            acc += f(a) * y[r];
                        }
                    }
                }
            }
            acc
        })
        .collect()
}

// The game matrix on top of the distributed products: `[M, −M]` for
// transshipment, `[M, −M]ᵀ`-shaped `[Mᵀ, −Mᵀ]` for max flow.
#[derive(Debug)]
struct DistGame<'n, 'g> {
    net: &'n MinorAggNetwork<'g>,
    cols: DistributedColumns,
    problem: Problem,
}

impl DistGame<'_, '_> {
    fn m(&self) -> usize {
        self.net.graph().edge_count()
    }

    // `[v; −v]` or `[v; v]`.
    fn stack(v: Vec<f64>, negate: bool, out: &mut [f64]) {
        let k = v.len();
        for (i, x) in v.into_iter().enumerate() {
            out[i] = x;
            out[k + i] = if negate { -x } else { x };
        }
    }

    fn fold(x: &[f64], negate: bool) -> Vec<f64> {
        let k = x.len() / 2;
        (0..k).map(|i| if negate { x[i] - x[k + i] } else { x[i] + x[k + i] }).collect()
    }

    fn forward(&self, x: &[f64], abs: bool) -> Result<Vec<f64>> {
        dist_matvec(self.net, &self.cols, if abs { Product::AbsA } else { Product::A }, x)
    }

    fn backward(&self, y: &[f64], abs: bool) -> Result<Vec<f64>> {
        dist_matvec(self.net, &self.cols, if abs { Product::AbsAt } else { Product::At }, y)
    }
}

impl LinearOperator for DistGame<'_, '_> {
    fn rows(&self) -> usize {
        match self.problem {
            Problem::Transshipment => self.cols.rows,
            Problem::MaxFlow => self.m(),
        }
    }

    fn cols(&self) -> usize {
        match self.problem {
            Problem::Transshipment => 2 * self.m(),
            Problem::MaxFlow => 2 * self.cols.rows,
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.cols(), x.len())?;
        check_len(self.rows(), out.len())?;
        let v = match self.problem {
            Problem::Transshipment => self.forward(&Self::fold(x, true), false)?,
            Problem::MaxFlow => self.backward(&Self::fold(x, true), false)?,
        };
        out.copy_from_slice(&v);
        Ok(())
    }

    fn apply_t(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.rows(), y.len())?;
        check_len(self.cols(), out.len())?;
        let v = match self.problem {
            Problem::Transshipment => self.backward(y, false)?,
            Problem::MaxFlow => self.forward(y, false)?,
        };
        Self::stack(v, true, out);
        Ok(())
    }

    fn apply_abs(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.cols(), x.len())?;
        check_len(self.rows(), out.len())?;
        let v = match self.problem {
            Problem::Transshipment => self.forward(&Self::fold(x, false), true)?,
            Problem::MaxFlow => self.backward(&Self::fold(x, false), true)?,
        };
        out.copy_from_slice(&v);
        Ok(())
    }

    fn apply_abs_t(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.rows(), y.len())?;
        check_len(self.cols(), out.len())?;
        let v = match self.problem {
            Problem::Transshipment => self.backward(y, true)?,
            Problem::MaxFlow => self.forward(y, true)?,
        };
        Self::stack(v, false, out);
        Ok(())
    }
}

/// [`Backend`] whose products all run through the simulator.
#[derive(Debug)]
pub struct MinorAggBackend<'n, 'g> {
    game: DistGame<'n, 'g>,
    norm: f64,
}

impl<'n, 'g> MinorAggBackend<'n, 'g> {
    /// Builds the local columns of `s·R` for `approx`; `structures` must be
    /// the distance structures for an ℓ₁ approximator and `tree` the
    /// decomposition for an ℓ∞ one.
    pub fn new(net: &'n MinorAggNetwork<'g>, approx: &CostApproximator, source: Source<'_>) -> Result<Self> {
        check_len(net.graph().node_count(), approx.n)?;
        let (problem, cols) = match (approx.norm, source) {
            (Norm::L1, Source::Structures(ds)) => (Problem::Transshipment, dist_compute_r_columns(net, ds)?),
            (Norm::Linf, Source::Tree(t)) => (Problem::MaxFlow, dist_tree_columns(net, t)?),
            _ => return Err(Error::Parameter("approximator norm does not match its construction".into())),
        };
        if cols.rows != approx.r.nrows() {
            return Err(Error::DimensionMismatch { expected: approx.r.nrows(), got: cols.rows });
        }
        let cols = cols.scaled(approx.calibration.scale);
        let game = DistGame { net, cols, problem };
        let norm = game_norm(&game)?;
        Ok(MinorAggBackend { game, norm })
    }

    pub fn columns(&self) -> &DistributedColumns {
        &self.game.cols
    }
}

/// Where the local columns of `R` come from.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    Structures(&'a DistanceStructureSet),
    Tree(&'a DecompTree),
}

// `‖A_game‖₁→₁`: largest column sum of the game matrix, agreed on by a
// fully contracted max round.
fn game_norm(game: &DistGame) -> Result<f64> {
    let net = game.net;
    let g = net.graph();
    let per_node: Vec<f64> = match game.problem {
        Problem::Transshipment => {
            let sums: Vec<f64> = (0..g.edge_count())
                .map(|e| game.cols.edge_column(e).iter().map(|p| p.1.abs()).sum())
                .collect();
            let res = net.run_round(&net.uncontracted(), &vec![(); g.node_count()], &Unused, |e, _, _| (sums[e], sums[e]), &Max)?;
            res.aggregate
        }
        Problem::MaxFlow => {
            let sums = dist_matvec(net, &game.cols, Product::AbsA, &vec![1.0; g.edge_count()])?;
            (0..g.node_count())
                .map(|v| game.cols.blocks.iter().filter_map(|b| b.row[v].map(|r| sums[r])).fold(f64::NEG_INFINITY, f64::max))
                .collect()
        }
    };
    let all = net.minor(&vec![true; g.edge_count()])?;
    let res = net.run_round(&all, &per_node, &Max, |_, _, _| ((), ()), &Unused)?;
    Ok(res.consensus.first().copied().unwrap_or(0.0).max(0.0))
}

impl Backend for MinorAggBackend<'_, '_> {
    fn problem(&self) -> Problem {
        self.game.problem
    }

    fn apply_r(&self, d: &[f64]) -> Result<Vec<f64>> {
        dist_matvec(self.game.net, &self.game.cols, Product::R, d)
    }

    fn apply_rt(&self, y: &[f64]) -> Result<Vec<f64>> {
        dist_matvec(self.game.net, &self.game.cols, Product::Rt, y)
    }

    fn game_operator(&self) -> &dyn LinearOperator {
        &self.game
    }

    fn game_norm(&self) -> f64 {
        self.norm
    }

    fn rounds(&self) -> u64 {
        self.game.net.rounds()
    }
}

//! Exact optimal values for both routing problems on desk-scale graphs.
//!
//! Transshipment is solved by successive shortest paths with node
//! potentials; min-congestion routing by a Dinkelbach iteration over
//! minimum cuts, which lands on the exact maximizer of `|d(S)| / cap(S)`.
//! Both routines are generic over [`Scalar`], so integer inputs can be
//! solved exactly in [`BigRational`].

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Debug;

use num::rational::BigRational;
use num::traits::{Signed, ToPrimitive};

use crate::error::{check_len, Error, Result};
use crate::graph::{validate_demand, Graph};

/// Ordered field used by the oracle.
pub trait Scalar: Clone + Debug + PartialOrd + Signed {
    fn from_f64(v: f64) -> Option<Self>;
    fn to_f64(&self) -> f64;
    /// Residual capacities at or below `tol·scale` count as saturated.
    fn tol(scale: &Self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Option<Self> {
        v.is_finite().then_some(v)
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn tol(scale: &Self) -> Self {
        1e-12 * scale.abs()
    }
}

impl Scalar for BigRational {
    fn from_f64(v: f64) -> Option<Self> {
        BigRational::from_float(v)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn tol(_: &Self) -> Self {
        num::Zero::zero()
    }
}

/// Optimal value with a primal flow attaining it and a matching dual.
///
/// For transshipment the dual is 1-Lipschitz in `W` with `⟨d, φ⟩ = cost`;
/// for congestion it is `1_S / cap(S)` on an optimal cut `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub cost: T,
    pub flow: Vec<T>,
    pub dual: Vec<T>,
}

impl Solution<BigRational> {
    pub fn to_f64(&self) -> Solution<f64> {
        let conv = |v: &[BigRational]| v.iter().map(Scalar::to_f64).collect();
        Solution { cost: Scalar::to_f64(&self.cost), flow: conv(&self.flow), dual: conv(&self.dual) }
    }
}

pub fn opt_transshipment(g: &Graph, d: &[f64]) -> Result<Solution<f64>> {
    let (w, d) = lift::<f64>(g, d)?;
    Ok(transshipment_generic(g, &w, &d))
}

/// Rational-arithmetic transshipment; exact for any finite float input.
pub fn opt_transshipment_exact(g: &Graph, d: &[f64]) -> Result<Solution<BigRational>> {
    let (w, d) = lift::<BigRational>(g, d)?;
    Ok(transshipment_generic(g, &w, &d))
}

pub fn opt_congestion(g: &Graph, d: &[f64]) -> Result<Solution<f64>> {
    let (w, d) = lift::<f64>(g, d)?;
    Ok(congestion_generic(g, &w, &d))
}

pub fn opt_congestion_exact(g: &Graph, d: &[f64]) -> Result<Solution<BigRational>> {
    let (w, d) = lift::<BigRational>(g, d)?;
    Ok(congestion_generic(g, &w, &d))
}

fn lift<T: Scalar>(g: &Graph, d: &[f64]) -> Result<(Vec<T>, Vec<T>)> {
    check_len(g.node_count(), d.len())?;
    validate_demand(d)?;
    let conv = |v: f64| T::from_f64(v).ok_or_else(|| Error::NumericOverflow("oracle input".into()));
    let w = g.edges().iter().map(|e| conv(e.weight)).collect::<Result<Vec<_>>>()?;
    let mut d = d.iter().map(|&v| conv(v)).collect::<Result<Vec<_>>>()?;
    // Float demands may be off balance by rounding; push it onto the largest
    // entry so the network problem stays feasible.
    let sum = d.iter().fold(T::zero(), |acc, v| acc + v.clone());
    if !sum.is_zero() {
        let k = (0..d.len())
            .max_by(|&a, &b| d[a].abs().partial_cmp(&d[b].abs()).unwrap_or(Ordering::Equal))
            .unwrap_or(0);
        d[k] = d[k].clone() - sum;
    }
    Ok((w, d))
}

fn zero<T: Scalar>() -> T {
    T::zero()
}

// Residual network with paired arcs `i` and `i ^ 1`.
struct Network<T> {
    head: Vec<usize>,
    cost: Vec<T>,
    // `None` is an uncapacitated arc.
    cap: Vec<Option<T>>,
    flow: Vec<T>,
    out: Vec<Vec<usize>>,
}

impl<T: Scalar> Network<T> {
    fn new(nodes: usize) -> Self {
        Network { head: Vec::new(), cost: Vec::new(), cap: Vec::new(), flow: Vec::new(), out: vec![Vec::new(); nodes] }
    }

    fn add_arc(&mut self, u: usize, v: usize, cap: Option<T>, back_cap: Option<T>, cost: T) -> usize {
        let id = self.head.len();
        self.head.extend([v, u]);
        self.cost.extend([cost.clone(), -cost]);
        self.cap.extend([cap, back_cap]);
        self.flow.extend([zero(), zero()]);
        self.out[u].push(id);
        self.out[v].push(id + 1);
        id
    }

    // Residual capacity; `None` means unbounded.
    fn residual(&self, a: usize) -> Option<T> {
        let back = self.flow[a ^ 1].clone();
        self.cap[a].as_ref().map(|c| c.clone() - self.flow[a].clone() + back)
    }

    fn has_room(&self, a: usize, tol: &T) -> bool {
        match self.residual(a) {
            None => true,
            Some(r) => r > *tol,
        }
    }

    // Pushes `amount` along arc `a`, cancelling reverse flow first.
    fn push(&mut self, a: usize, amount: T) {
        let back = self.flow[a ^ 1].clone();
        if back >= amount {
            self.flow[a ^ 1] = back - amount;
        } else {
            self.flow[a ^ 1] = zero();
            self.flow[a] = self.flow[a].clone() + amount - back;
        }
    }

    fn net(&self, a: usize) -> T {
        self.flow[a].clone() - self.flow[a ^ 1].clone()
    }
}

struct Item<T> {
    dist: T,
    node: usize,
}

impl<T: PartialOrd> PartialEq for Item<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: PartialOrd> Eq for Item<T> {}

impl<T: PartialOrd> Ord for Item<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl<T: PartialOrd> PartialOrd for Item<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn totals<T: Scalar>(d: &[T]) -> T {
    d.iter().filter(|v| v.is_positive()).fold(zero(), |acc, v| acc + v.clone())
}

fn transshipment_generic<T: Scalar>(g: &Graph, w: &[T], d: &[T]) -> Solution<T> {
    let n = g.node_count();
    let (src, snk) = (n, n + 1);
    let mut net = Network::<T>::new(n + 2);
    // Each undirected edge is a pair of uncapacitated arcs; the reverse arcs
    // carry capacity only through cancellation.
    let mut edge_arcs = Vec::with_capacity(g.edge_count());
    for (k, e) in g.edges().iter().enumerate() {
        let fwd = net.add_arc(e.tail, e.head, None, Some(zero()), w[k].clone());
        let bwd = net.add_arc(e.head, e.tail, None, Some(zero()), w[k].clone());
        edge_arcs.push((fwd, bwd));
    }
    for (v, dv) in d.iter().enumerate() {
        if dv.is_positive() {
            net.add_arc(src, v, Some(dv.clone()), Some(zero()), zero());
        } else if dv.is_negative() {
            net.add_arc(v, snk, Some(-dv.clone()), Some(zero()), zero());
        }
    }
    let supply = totals(d);
    let tol = T::tol(&supply);
    let mut routed: T = zero();
    let mut pot: Vec<T> = vec![zero(); n + 2];
    let mut dist: Vec<Option<T>> = vec![None; n + 2];
    let mut via = vec![usize::MAX; n + 2];

    while supply.clone() - routed.clone() > tol {
        dist.iter_mut().for_each(|x| *x = None);
        dist[src] = Some(zero());
        let mut heap = BinaryHeap::new();
        heap.push(Item { dist: zero::<T>(), node: src });
        let mut done = vec![false; n + 2];
        while let Some(Item { dist: du, node: u }) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for &a in &net.out[u] {
                if !net.has_room(a, &tol) {
                    continue;
                }
                let v = net.head[a];
                let mut rc = net.cost[a].clone() + pot[u].clone() - pot[v].clone();
                if rc.is_negative() {
                    rc = zero();
                }
                let nd = du.clone() + rc;
                if dist[v].as_ref().is_none_or(|cur| nd < *cur) {
                    dist[v] = Some(nd.clone());
                    via[v] = a;
                    heap.push(Item { dist: nd, node: v });
                }
            }
        }
        let Some(_) = dist[snk] else { break };
        let far = dist.iter().flatten().fold(zero::<T>(), |m, x| if *x > m { x.clone() } else { m });
        for v in 0..n + 2 {
            let dv = dist[v].clone().unwrap_or_else(|| far.clone());
            pot[v] = pot[v].clone() + dv;
        }
        // Bottleneck along the path.
        let mut amount: Option<T> = None;
        let mut v = snk;
        while v != src {
            let a = via[v];
            if let Some(r) = net.residual(a) {
                if amount.as_ref().is_none_or(|m| r < *m) {
                    amount = Some(r);
                }
            }
            v = net.head[a ^ 1];
        }
        let amount = amount.expect("source arcs are capacitated");
        let mut v = snk;
        while v != src {
            let a = via[v];
            net.push(a, amount.clone());
            v = net.head[a ^ 1];
        }
        routed = routed + amount;
    }

    let flow: Vec<T> = edge_arcs.iter().map(|&(f, b)| net.net(f) - net.net(b)).collect();
    let cost = flow.iter().zip(w).fold(zero::<T>(), |acc, (f, w)| acc + f.abs() * w.clone());
    let dual = lipschitz_dual(g, w, &flow, &tol);
    Solution { cost, flow, dual }
}

// Bellman-Ford from a virtual root on the residual graph of an optimal flow.
// The distances `π` satisfy |π_a − π_b| ≤ w on every edge and are tight on
// edges carrying flow, so `φ = −π` has `⟨d, φ⟩ = cost`.
fn lipschitz_dual<T: Scalar>(g: &Graph, w: &[T], flow: &[T], tol: &T) -> Vec<T> {
    let n = g.node_count();
    let mut arcs: Vec<(usize, usize, T)> = Vec::with_capacity(3 * g.edge_count());
    for (k, e) in g.edges().iter().enumerate() {
        arcs.push((e.tail, e.head, w[k].clone()));
        arcs.push((e.head, e.tail, w[k].clone()));
        if flow[k] > *tol {
            arcs.push((e.head, e.tail, -w[k].clone()));
        } else if flow[k] < -tol.clone() {
            arcs.push((e.tail, e.head, -w[k].clone()));
        }
    }
    let mut pi: Vec<T> = vec![zero(); n];
    for _ in 0..=n {
        let mut changed = false;
        for (u, v, c) in &arcs {
            let cand = pi[*u].clone() + c.clone();
            if cand < pi[*v] {
                pi[*v] = cand;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    pi.into_iter().map(|p| -p).collect()
}

fn congestion_generic<T: Scalar>(g: &Graph, w: &[T], d: &[T]) -> Solution<T> {
    let n = g.node_count();
    let m = g.edge_count();
    if d.iter().all(|v| v.is_zero()) {
        return Solution { cost: zero(), flow: vec![zero(); m], dual: vec![zero(); n] };
    }
    let inv_w: Vec<T> = w.iter().map(|x| T::one() / x.clone()).collect();

    // Start from the best single-vertex cut.
    let mut best_set = vec![false; n];
    let mut c = zero::<T>();
    for v in 0..n {
        let cap = g.neighbors(v).iter().fold(zero::<T>(), |acc, &(_, k)| acc + inv_w[k].clone());
        let ratio = d[v].abs() / cap;
        if ratio > c {
            c = ratio;
            best_set.iter_mut().for_each(|x| *x = false);
            best_set[v] = true;
        }
    }
    if d[best_set.iter().position(|&x| x).unwrap_or(0)].is_negative() {
        best_set.iter_mut().for_each(|x| *x = !*x);
    }

    let supply = totals(d);
    let tol = T::tol(&supply);
    for _ in 0..200 {
        let (value, flow, reach) = max_flow(g, &inv_w, d, &c, &tol);
        if supply.clone() - value <= tol {
            let dual = cut_dual(g, &inv_w, &best_set);
            return Solution { cost: c, flow, dual };
        }
        let cut: Vec<bool> = reach[..n].to_vec();
        let (dem, cap) = cut_ratio(g, &inv_w, d, &cut);
        let next = dem / cap;
        if next <= c {
            // Only reachable through float rounding.
            break;
        }
        c = next;
        best_set = cut;
    }
    let (_, flow, _) = max_flow(g, &inv_w, d, &c, &tol);
    let dual = cut_dual(g, &inv_w, &best_set);
    Solution { cost: c, flow, dual }
}

fn cut_ratio<T: Scalar>(g: &Graph, inv_w: &[T], d: &[T], side: &[bool]) -> (T, T) {
    let dem = d.iter().zip(side).filter(|p| *p.1).fold(zero::<T>(), |acc, (v, _)| acc + v.clone());
    let cap = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| side[e.tail] != side[e.head])
        .fold(zero::<T>(), |acc, (k, _)| acc + inv_w[k].clone());
    (dem, cap)
}

fn cut_dual<T: Scalar>(g: &Graph, inv_w: &[T], side: &[bool]) -> Vec<T> {
    let (_, cap) = cut_ratio(g, inv_w, &vec![zero::<T>(); side.len()], side);
    let val = T::one() / cap;
    side.iter().map(|&s| if s { val.clone() } else { zero() }).collect()
}

// Dinic max flow with edge capacities `c / w(e)`, sources `d⁺`, sinks `d⁻`.
// Returns the value, the net edge flow and the source side of a min cut.
fn max_flow<T: Scalar>(g: &Graph, inv_w: &[T], d: &[T], c: &T, tol: &T) -> (T, Vec<T>, Vec<bool>) {
    let n = g.node_count();
    let (src, snk) = (n, n + 1);
    let mut net = Network::<T>::new(n + 2);
    let mut edge_arc = Vec::with_capacity(g.edge_count());
    for (k, e) in g.edges().iter().enumerate() {
        let cap = c.clone() * inv_w[k].clone();
        edge_arc.push(net.add_arc(e.tail, e.head, Some(cap.clone()), Some(cap), zero()));
    }
    for (v, dv) in d.iter().enumerate() {
        if dv.is_positive() {
            net.add_arc(src, v, Some(dv.clone()), Some(zero()), zero());
        } else if dv.is_negative() {
            net.add_arc(v, snk, Some(-dv.clone()), Some(zero()), zero());
        }
    }
    let mut value = zero::<T>();
    loop {
        let level = bfs_levels(&net, src, tol);
        if level[snk] == usize::MAX {
            let reach = level.iter().map(|&l| l != usize::MAX).collect();
            let flow = edge_arc.iter().map(|&a| net.net(a)).collect();
            return (value, flow, reach);
        }
        let mut next = vec![0usize; n + 2];
        while let Some(pushed) = augment(&mut net, &level, &mut next, src, snk, None, tol) {
            value = value + pushed;
        }
    }
}

fn bfs_levels<T: Scalar>(net: &Network<T>, src: usize, tol: &T) -> Vec<usize> {
    let mut level = vec![usize::MAX; net.out.len()];
    level[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &a in &net.out[u] {
            let v = net.head[a];
            if level[v] == usize::MAX && net.has_room(a, tol) {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    level
}

// One blocking-flow path search in the level graph.
fn augment<T: Scalar>(
    net: &mut Network<T>,
    level: &[usize],
    next: &mut [usize],
    u: usize,
    snk: usize,
    limit: Option<T>,
    tol: &T,
) -> Option<T> {
    if u == snk {
        return limit;
    }
    while next[u] < net.out[u].len() {
        let a = net.out[u][next[u]];
        let v = net.head[a];
        if level[v] == level[u] + 1 && net.has_room(a, tol) {
            let room = net.residual(a);
            let lim = match (limit.clone(), room) {
                (None, r) => r,
                (l, None) => l,
                (Some(l), Some(r)) => Some(if r < l { r } else { l }),
            };
            if let Some(pushed) = augment(net, level, next, v, snk, lim, tol) {
                if pushed > *tol {
                    net.push(a, pushed.clone());
                    return Some(pushed);
                }
            }
        }
        next[u] += 1;
    }
    None
}

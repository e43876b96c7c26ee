//! ℓ₁ cost approximator built from per-scale distance structures.
//!
//! For every distance scale `D_i` we sample a sparse neighborhood cover by
//! exponentially shifted clustering, attach to every cluster the potential
//! `φ(v) = min(d_G(V∖C, v), D_i)`, and turn the potentials into partition of
//! unity weights `p_{i,j}(v) / w_i(v)`. Row `(i, j, j′, C)` of `R` holds
//! `D_{i+1}·p_{i,j}(v)·p_{i+1,j′}(v) / (w_i(v)·w_{i+1}(v))` for `v ∈ C` when
//! `C` is nested in the scale-`i+1` cluster of `v` in clustering `j′`.
//!
//! Distances are measured in units of the lightest edge, so `D_0` equals the
//! minimum weight and scale-0 clusterings are singletons.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Calibration, Construction, CostApproximator, Norm};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seed::SeedSplitter;
use crate::sparse::ColSparseMatrix;

/// `D_i = unit·βⁱ` for `i ∈ I_scale = {0, …, i_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceScales {
    pub tau: u32,
    pub beta: f64,
    pub unit: f64,
    pub diameters: Vec<f64>,
}

impl DistanceScales {
    pub fn i_max(&self) -> usize {
        self.diameters.len() - 1
    }

    pub fn len(&self) -> usize {
        self.diameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diameters.is_empty()
    }
}

/// Default `τ = max(2, ⌈log₂ n⌉)`.
pub fn default_tau(n: usize) -> u32 {
    (n.max(2) as f64).log2().ceil().max(2.0) as u32
}

/// `τ = ⌈log⁷ n⌉` (natural log), capped to fit `u32`.
pub fn theory_tau(n: usize) -> u32 {
    (n.max(2) as f64).ln().powi(7).ceil().clamp(2.0, f64::from(u32::MAX)) as u32
}

/// Default number of clusterings per scale, `⌈4·log₂ n⌉`.
pub fn default_num(n: usize) -> usize {
    ((4.0 * (n.max(2) as f64).log2()).ceil() as usize).max(1)
}

pub fn build_scales(g: &Graph, tau: u32) -> Result<DistanceScales> {
    if tau < 2 {
        return Err(Error::Parameter(format!("tau must be at least 2, got {tau}")));
    }
    let n = g.node_count() as f64;
    let unit = g.min_weight();
    let beta = 8.0 * f64::from(tau);
    let top = n * n * g.max_weight();
    let mut diameters = vec![unit];
    loop {
        let next = unit * beta.powi(diameters.len() as i32);
        if next > top || !next.is_finite() {
            break;
        }
        diameters.push(next);
    }
    Ok(DistanceScales { tau, beta, unit, diameters })
}

/// A partition of the nodes; clusters are listed by smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    assignment: Vec<usize>,
    clusters: Vec<Vec<usize>>,
}

impl Clustering {
    /// Canonical clustering from any labelling of the nodes.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut assignment = Vec::with_capacity(labels.len());
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for (v, l) in labels.iter().enumerate() {
            let id = *map.entry(*l).or_insert_with(|| {
                clusters.push(Vec::new());
                clusters.len() - 1
            });
            clusters[id].push(v);
            assignment.push(id);
        }
        Clustering { assignment, clusters }
    }

    pub fn singletons(n: usize) -> Self {
        Self::from_labels(&(0..n).collect::<Vec<_>>())
    }

    pub fn whole(n: usize) -> Self {
        Self::from_labels(&vec![0; n])
    }

    pub fn cluster_of(&self, v: usize) -> usize {
        self.assignment[v]
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn members(&self, id: usize) -> &[usize] {
        &self.clusters[id]
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseNeighborhoodCover {
    pub diameter: f64,
    /// Covering radius `D/τ`.
    pub radius: f64,
    pub clusterings: Vec<Clustering>,
}

impl SparseNeighborhoodCover {
    pub fn len(&self) -> usize {
        self.clusterings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusterings.is_empty()
    }
}

/// Samples a cover with strong cluster diameter at most `diameter` in which
/// every ball `B(v, diameter/τ)` lies inside one cluster of some clustering.
///
/// `num` clusterings are drawn by exponentially shifted clustering. Nodes
/// left uncovered are then handled by up to `num` extra clusterings whose
/// centers are pinned at uncovered nodes; failing that, the cover is
/// rejected.
pub fn build_cover<R: Rng>(g: &Graph, diameter: f64, tau: u32, num: usize, rng: &mut R) -> Result<SparseNeighborhoodCover> {
    if !(diameter > 0.0) || tau < 2 || num == 0 {
        return Err(Error::Parameter("cover needs diameter > 0, tau ≥ 2, num ≥ 1".into()));
    }
    let n = g.node_count();
    let radius = diameter / f64::from(tau);
    let whole = |clusterings| SparseNeighborhoodCover { diameter, radius, clusterings };
    if g.min_weight() > diameter / 2.0 {
        return Ok(whole(vec![Clustering::singletons(n); num]));
    }
    if (0..n).any(|c| g.distances_from(&[c]).iter().all(|&d| d <= diameter / 2.0)) {
        return Ok(whole(vec![Clustering::whole(n)]));
    }

    let rank: Vec<usize> = (0..n).collect();
    let mut clusterings: Vec<Clustering> = (0..num)
        .map(|_| {
            let shifts: Vec<f64> = (0..n).map(|_| truncated_exp(diameter / 4.0, diameter / 2.0, rng)).collect();
            shifted_clustering(g, &shifts, &rank)
        })
        .collect();

    let balls = balls(g, radius);
    let mut uncovered = uncovered_nodes(&balls, &clusterings);
    let mut extra = 0;
    while !uncovered.is_empty() && extra < num {
        clusterings.push(targeted_clustering(g, diameter, radius, &uncovered, rng));
        uncovered = uncovered_nodes(&balls, &clusterings);
        extra += 1;
    }
    if !uncovered.is_empty() {
        return Err(Error::CoverFailure(format!(
            "{} nodes uncovered at diameter {diameter} after {} clusterings",
            uncovered.len(),
            clusterings.len()
        )));
    }
    Ok(whole(clusterings))
}

// Exp(mean) conditioned on being below `cap`.
fn truncated_exp<R: Rng>(mean: f64, cap: f64, rng: &mut R) -> f64 {
    if cap <= 0.0 {
        return 0.0;
    }
    loop {
        let u: f64 = rng.gen();
        let x = -mean * (1.0 - u).ln();
        if x < cap {
            return x;
        }
    }
}

// Clustering in which a maximal set of uncovered nodes, pairwise more than
// 2·radius apart, get the full shift `diameter/2` and everyone else a shift
// below `diameter/2 − 2·radius`; each pinned node's ball then lies in its
// own cluster.
fn targeted_clustering<R: Rng>(g: &Graph, diameter: f64, radius: f64, uncovered: &[usize], rng: &mut R) -> Clustering {
    let n = g.node_count();
    let mut order = uncovered.to_vec();
    order.shuffle(rng);
    let mut far = vec![true; n];
    let mut targets = Vec::new();
    for v in order {
        if far[v] {
            targets.push(v);
            for (u, d) in g.distances_from(&[v]).into_iter().enumerate() {
                if d <= 2.0 * radius {
                    far[u] = false;
                }
            }
        }
    }
    let low_cap = diameter / 2.0 - 2.0 * radius;
    let mut shifts: Vec<f64> = (0..n).map(|_| truncated_exp(diameter / 4.0, low_cap, rng)).collect();
    let mut rank = vec![0; n];
    let mut next = targets.len();
    for (v, r) in rank.iter_mut().enumerate() {
        if let Some(pos) = targets.iter().position(|&t| t == v) {
            *r = pos;
            shifts[v] = diameter / 2.0;
        } else {
            *r = next;
            next += 1;
        }
    }
    shifted_clustering(g, &shifts, &rank)
}

#[derive(PartialEq)]
struct Label {
    key: f64,
    rank: usize,
    node: usize,
    center: usize,
}

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key).then_with(|| other.rank.cmp(&self.rank)).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Assigns every node `v` to the center `u` minimizing `(d(u,v) − δ_u,
/// rank[u])`. Clusters are connected and contain the shortest paths from
/// their centers.
pub fn shifted_clustering(g: &Graph, shifts: &[f64], rank: &[usize]) -> Clustering {
    let n = g.node_count();
    let mut best: Vec<(f64, usize)> = (0..n).map(|v| (-shifts[v], rank[v])).collect();
    let mut center: Vec<usize> = (0..n).collect();
    let mut heap: BinaryHeap<Label> = (0..n).map(|v| Label { key: -shifts[v], rank: rank[v], node: v, center: v }).collect();
    let mut done = vec![false; n];
    while let Some(Label { key, rank: rk, node: u, center: c }) = heap.pop() {
        if done[u] || center[u] != c || best[u] != (key, rk) {
            continue;
        }
        done[u] = true;
        for &(v, k) in g.neighbors(u) {
            let cand = (key + g.edge(k).weight, rk);
            if !done[v] && lex_less(cand, best[v]) {
                best[v] = cand;
                center[v] = c;
                heap.push(Label { key: cand.0, rank: cand.1, node: v, center: c });
            }
        }
    }
    Clustering::from_labels(&center)
}

fn lex_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Closed balls `B(v, radius)` for every node.
pub fn balls(g: &Graph, radius: f64) -> Vec<Vec<usize>> {
    (0..g.node_count())
        .map(|v| {
            let dist = g.distances_from(&[v]);
            (0..g.node_count()).filter(|&u| dist[u] <= radius).collect()
        })
        .collect()
}

/// Nodes whose ball is split by every clustering.
pub fn uncovered_nodes(balls: &[Vec<usize>], clusterings: &[Clustering]) -> Vec<usize> {
    (0..balls.len()).filter(|&v| covering_clustering(&balls[v], v, clusterings).is_none()).collect()
}

/// First clustering holding the whole ball of `v` inside `v`'s cluster.
pub fn covering_clustering(ball: &[usize], v: usize, clusterings: &[Clustering]) -> Option<usize> {
    clusterings.iter().position(|c| ball.iter().all(|&u| c.cluster_of(u) == c.cluster_of(v)))
}

/// `φ(v) = min(d_G(V∖C(v), v), D)` for one clustering; `+∞` distance when
/// the cluster is all of `V`.
pub fn potentials(g: &Graph, clustering: &Clustering, diameter: f64) -> Vec<f64> {
    // The shortest path to the nearest outside node stays inside the cluster
    // until its last edge: seed every node with its cheapest crossing edge,
    // then relax along internal edges only.
    let n = g.node_count();
    let mut dist = vec![f64::INFINITY; n];
    for e in g.edges() {
        if clustering.cluster_of(e.tail) != clustering.cluster_of(e.head) {
            dist[e.tail] = dist[e.tail].min(e.weight);
            dist[e.head] = dist[e.head].min(e.weight);
        }
    }
    let mut heap: BinaryHeap<crate::graph::HeapItem> = (0..n)
        .filter(|&v| dist[v].is_finite())
        .map(|v| crate::graph::HeapItem { dist: dist[v], node: v })
        .collect();
    while let Some(crate::graph::HeapItem { dist: du, node: u }) = heap.pop() {
        if du > dist[u] {
            continue;
        }
        for &(v, k) in g.neighbors(u) {
            if clustering.cluster_of(v) != clustering.cluster_of(u) {
                continue;
            }
            let nd = du + g.edge(k).weight;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(crate::graph::HeapItem { dist: nd, node: v });
            }
        }
    }
    dist.into_iter().map(|d| d.min(diameter)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStructure {
    pub cover: SparseNeighborhoodCover,
    /// `phi[j][v]` for clustering `j`.
    pub phi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStructureSet {
    pub scales: DistanceScales,
    pub levels: Vec<ScaleStructure>,
}

impl DistanceStructureSet {
    /// Largest number of clusterings at any scale.
    pub fn num(&self) -> usize {
        self.levels.iter().map(|l| l.cover.len()).max().unwrap_or(0)
    }
}

pub fn build_potentials(g: &Graph, cover: &SparseNeighborhoodCover) -> Vec<Vec<f64>> {
    cover.clusterings.iter().map(|c| potentials(g, c, cover.diameter)).collect()
}

/// Covers and potentials for every scale; clustering `j` of scale `i` uses
/// the sub-seed `("cover/i", j)`.
pub fn build_structures(g: &Graph, scales: &DistanceScales, num: usize, seeds: &SeedSplitter) -> Result<DistanceStructureSet> {
    let mut levels = Vec::with_capacity(scales.len());
    for (i, &diameter) in scales.diameters.iter().enumerate() {
        let mut rng = seeds.rng(&format!("cover/{i}"));
        let cover = build_cover(g, diameter, scales.tau, num, &mut rng)?;
        let phi = build_potentials(g, &cover);
        levels.push(ScaleStructure { cover, phi });
    }
    Ok(DistanceStructureSet { scales: scales.clone(), levels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionWeights {
    /// `p[i][j][v]`.
    pub p: Vec<Vec<Vec<f64>>>,
    /// `w[i][v] = Σ_j p[i][j][v]`.
    pub w: Vec<Vec<f64>>,
}

/// `p_{i,j}(v) = max(0, φ_{i,j}(v)/D_i − 0.25/τ)`, `w_i(v) = Σ_j p_{i,j}(v)`.
pub fn compute_pw(ds: &DistanceStructureSet) -> PartitionWeights {
    let offset = 0.25 / f64::from(ds.scales.tau);
    let mut p = Vec::with_capacity(ds.levels.len());
    let mut w = Vec::with_capacity(ds.levels.len());
    for (level, &diameter) in ds.levels.iter().zip(&ds.scales.diameters) {
        let pi: Vec<Vec<f64>> =
            level.phi.iter().map(|phi| phi.iter().map(|&f| (f / diameter - offset).max(0.0)).collect()).collect();
        let n = pi.first().map_or(0, |v| v.len());
        let wi = (0..n).map(|v| pi.iter().map(|pj| pj[v]).sum()).collect();
        p.push(pi);
        w.push(wi);
    }
    PartitionWeights { p, w }
}

/// Decoded row of `R`: scale `i`, clustering `j` at scale `i`, clustering
/// `j′` at scale `i+1`, and the cluster's index inside clustering `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub scale: usize,
    pub clustering: usize,
    pub upper: usize,
    pub cluster: usize,
}

/// `R` over `ROWS(R) × V`, rows enumerated in `(i, j, j′, C)` order.
///
/// With a single scale there is no pair of consecutive scales; `R` then
/// falls back to `D_1`-scaled singleton rows (one per node).
pub fn build_r(ds: &DistanceStructureSet) -> (ColSparseMatrix, Vec<RowKey>) {
    let pw = compute_pw(ds);
    let n = pw.w.first().map_or(0, |w| w.len());
    let scales = &ds.scales;
    if scales.len() < 2 {
        let top = scales.unit * scales.beta;
        let rows = (0..n).map(|v| RowKey { scale: 0, clustering: 0, upper: 0, cluster: v }).collect();
        let r = ColSparseMatrix::diagonal(&vec![top; n]);
        return (r, rows);
    }
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut rows = Vec::new();
    let mut bound = 0;
    for i in 0..scales.i_max() {
        let (lo, hi) = (&ds.levels[i], &ds.levels[i + 1]);
        let d_next = scales.diameters[i + 1];
        bound += lo.cover.len() * hi.cover.len();
        for (j, cl) in lo.cover.clusterings.iter().enumerate() {
            for (jp, up) in hi.cover.clusterings.iter().enumerate() {
                for (k, members) in cl.clusters().iter().enumerate() {
                    let row = rows.len();
                    rows.push(RowKey { scale: i, clustering: j, upper: jp, cluster: k });
                    let parent = up.cluster_of(members[0]);
                    if members.iter().any(|&v| up.cluster_of(v) != parent) {
                        continue;
                    }
                    for &v in members {
                        let den = pw.w[i][v] * pw.w[i + 1][v];
                        if den > 0.0 {
                            let val = d_next * pw.p[i][j][v] * pw.p[i + 1][jp][v] / den;
                            if val != 0.0 {
                                columns[v].push((row, val));
                            }
                        }
                    }
                }
            }
        }
    }
    let r = ColSparseMatrix::from_columns(rows.len(), columns, bound).expect("entries respect the declared bound");
    (r, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct TsConfig {
    /// `None` picks [`default_tau`].
    pub tau: Option<u32>,
    /// `None` picks [`default_num`].
    pub num: Option<usize>,
}


/// Distance structures together with the approximator they define.
#[derive(Debug, Clone)]
pub struct TsApproximator {
    pub structures: DistanceStructureSet,
    pub approximator: CostApproximator,
}

impl TsApproximator {
    pub fn build(g: &Graph, cfg: &TsConfig, seed: u64) -> Result<Self> {
        let n = g.node_count();
        let tau = cfg.tau.unwrap_or_else(|| default_tau(n));
        let num = cfg.num.unwrap_or_else(|| default_num(n));
        let scales = build_scales(g, tau)?;
        let structures = build_structures(g, &scales, num, &SeedSplitter::new(seed))?;
        let (r, rows) = build_r(&structures);
        let approximator = CostApproximator {
            norm: Norm::L1,
            n,
            seed,
            r,
            calibration: Calibration::identity(),
            construction: Construction::DistanceStructures {
                tau,
                beta: scales.beta,
                num,
                scales: scales.diameters.clone(),
                rows,
            },
        };
        Ok(TsApproximator { structures, approximator })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::cycle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scales_follow_the_formula() {
        let s = build_scales(&cycle(8), 2).unwrap();
        assert_eq!(s.beta, 16.0);
        assert_eq!(s.diameters, vec![1.0, 16.0]);
        let edge = Graph::parse("0 1 1").unwrap();
        assert_eq!(build_scales(&edge, 2).unwrap().diameters, vec![1.0]);
        assert!(build_scales(&edge, 1).is_err());
    }

    #[test]
    fn whole_graph_cover() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cover = build_cover(&cycle(8), 16.0, 2, 12, &mut rng).unwrap();
        assert_eq!(cover.len(), 1);
        assert_eq!(cover.clusterings[0].len(), 1);
        let phi = build_potentials(&cycle(8), &cover);
        assert!(phi[0].iter().all(|&p| p == 16.0));
    }

    #[test]
    fn unit_diameter_gives_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cover = build_cover(&cycle(8), 1.0, 2, 3, &mut rng).unwrap();
        assert!(cover.clusterings.iter().all(|c| c.len() == 8));
    }

    #[test]
    fn arc_potentials() {
        let g = cycle(8);
        let labels = [0, 0, 0, 0, 1, 2, 3, 4];
        let c = Clustering::from_labels(&labels);
        let phi = potentials(&g, &c, 16.0);
        assert_eq!(&phi[..4], &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(phi[5], 1.0);
    }

    #[test]
    fn pw_plug_in() {
        let g = Graph::parse("0 1 1").unwrap();
        let scales = build_scales(&g, 2).unwrap();
        let ds = build_structures(&g, &scales, 2, &SeedSplitter::new(1)).unwrap();
        let pw = compute_pw(&ds);
        // φ = D_0 = 1 on singletons: p = 1 − 0.25/τ.
        assert_eq!(pw.p[0][0], vec![0.875, 0.875]);
        assert_eq!(pw.w[0], vec![1.75, 1.75]);
        let (r, rows) = build_r(&ds);
        assert_eq!(r.nrows(), 2);
        assert_eq!(rows.len(), 2);
        assert_eq!(r.matvec(&[1.0, -1.0]).unwrap(), vec![16.0, -16.0]);
    }
}

//! Linear cost approximators: column-sparse `R` with
//! `OPT(d) ≤ s·‖Rd‖ ≤ s·ρ·OPT(d)`.
//!
//! Two constructions are provided: [`ts`] builds the ℓ₁ approximator for
//! transshipment from per-scale distance structures, [`tree`] builds the ℓ∞
//! approximator for congestion from a hierarchical decomposition tree. Both
//! share the empirical calibration in [`calibrate`] and the on-disk format
//! of [`CostApproximator`].

pub mod tree;
pub mod ts;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::generate::{integer_demand, two_point_demand};
use crate::graph::Graph;
use crate::oracle;
use crate::sparse::ColSparseMatrix;

pub const FORMAT_NAME: &str = "boxflow-approximator";
pub const FORMAT_VERSION: u32 = 1;

/// The norm an approximator is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    /// Transshipment, `‖·‖₁`.
    L1,
    /// Congestion, `‖·‖∞`.
    Linf,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    /// The dual norm.
    pub fn dual(self) -> Norm {
        match self {
            Norm::L1 => Norm::Linf,
            Norm::Linf => Norm::L1,
        }
    }

    /// Headroom for [`calibrate`]. Two-point demands are the worst case seen
    /// for ℓ₁; under ℓ∞ demands spread over a cut the tree misses can exceed
    /// every batch ratio by about 1.6.
    pub fn calibration_margin(self) -> f64 {
        match self {
            Norm::L1 => 1.0,
            Norm::Linf => 2.0,
        }
    }

    /// Exact optimum of the routing problem this norm belongs to.
    pub fn opt(self, g: &Graph, d: &[f64]) -> Result<f64> {
        Ok(match self {
            Norm::L1 => oracle::opt_transshipment(g, d)?.cost,
            Norm::Linf => oracle::opt_congestion(g, d)?.cost,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Global factor `s`.
    pub scale: f64,
    /// Largest `s·‖Rd‖ / OPT(d)` seen on the batch; unknown when calibration
    /// was skipped.
    pub rho: Option<f64>,
    pub samples: usize,
    /// Factor applied on top of the largest observed ratio.
    pub margin: f64,
}

impl Calibration {
    pub fn identity() -> Self {
        Calibration { scale: 1.0, rho: None, samples: 0, margin: 1.0 }
    }
}

/// Construction-specific metadata carried alongside `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Construction {
    DistanceStructures {
        tau: u32,
        beta: f64,
        num: usize,
        /// `D_i` for `i ∈ I_scale`.
        scales: Vec<f64>,
        rows: Vec<ts::RowKey>,
    },
    DecompositionTree {
        parent: Vec<Option<usize>>,
        cap: Vec<f64>,
        /// Tree node of each row of `R`.
        rows: Vec<usize>,
    },
}

/// An approximator matrix with its calibration and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CostApproximator {
    pub norm: Norm,
    pub n: usize,
    pub seed: u64,
    pub r: ColSparseMatrix,
    pub calibration: Calibration,
    pub construction: Construction,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    norm: Norm,
    n: usize,
    seed: u64,
    rows: usize,
    column_bound: usize,
    calibration: Calibration,
    construction: Construction,
    triplets: Vec<(usize, usize, f64)>,
}

impl CostApproximator {
    /// `‖Rd‖` in the approximator's norm, without calibration.
    pub fn raw_norm(&self, d: &[f64]) -> Result<f64> {
        check_len(self.n, d.len())?;
        Ok(self.norm.of(&self.r.matvec(d)?))
    }

    /// `s·‖Rd‖`.
    pub fn estimate(&self, d: &[f64]) -> Result<f64> {
        Ok(self.calibration.scale * self.raw_norm(d)?)
    }

    /// `s·R`.
    pub fn calibrated(&self) -> ColSparseMatrix {
        self.r.scaled(self.calibration.scale)
    }

    pub fn to_json(&self) -> String {
        let doc = Document {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            norm: self.norm,
            n: self.n,
            seed: self.seed,
            rows: self.r.nrows(),
            column_bound: self.r.bound(),
            calibration: self.calibration,
            construction: self.construction.clone(),
            triplets: self.r.triplets(),
        };
        serde_json::to_string(&doc).expect("approximator documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if doc.format != FORMAT_NAME || doc.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported document {} v{}", doc.format, doc.version)));
        }
        let r = ColSparseMatrix::from_triplets(doc.rows, doc.n, &doc.triplets)?.with_bound(doc.column_bound)?;
        Ok(CostApproximator {
            norm: doc.norm,
            n: doc.n,
            seed: doc.seed,
            r,
            calibration: doc.calibration,
            construction: doc.construction,
        })
    }

    /// Fits the calibration scale against the exact oracle; see [`calibrate`].
    pub fn calibrate<R: Rng>(&mut self, g: &Graph, samples: usize, rng: &mut R) -> Result<Calibration> {
        self.calibration = calibrate(g, &self.r, self.norm, samples, rng)?;
        Ok(self.calibration)
    }
}

/// Demand batch used for calibration: half two-point, half small random
/// integer demands.
pub fn calibration_batch<R: Rng>(n: usize, samples: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..samples)
        .map(|k| {
            if k % 2 == 0 {
                two_point_demand(n, rng)
            } else {
                let support = rng.gen_range(2..=n.min(6));
                integer_demand(n, support, 3, rng)
            }
        })
        .collect()
}

/// Graphs up to this size calibrate on every two-point demand.
pub const PAIR_LIMIT: usize = 128;

/// `s = margin · max OPT(d)/‖Rd‖` over a demand batch, and
/// `ρ = max s·‖Rd‖/OPT(d)`.
///
/// The batch is every two-point demand (for at most [`PAIR_LIMIT`] nodes)
/// followed by `samples` demands from [`calibration_batch`].
pub fn calibrate<R: Rng>(g: &Graph, r: &ColSparseMatrix, norm: Norm, samples: usize, rng: &mut R) -> Result<Calibration> {
    let n = g.node_count();
    check_len(n, r.ncols())?;
    let mut ratios = Vec::new();
    let mut push = |opt: f64, est: f64| -> Result<()> {
        if opt == 0.0 {
            return Ok(());
        }
        if est == 0.0 {
            return Err(Error::Infeasible("approximator annihilates a nonzero demand".into()));
        }
        ratios.push(opt / est);
        Ok(())
    };
    if n <= PAIR_LIMIT {
        let dist = if norm == Norm::L1 { Some(g.all_pairs()) } else { None };
        let mut d = vec![0.0; n];
        for u in 0..n {
            for v in u + 1..n {
                d[u] = 1.0;
                d[v] = -1.0;
                let opt = match &dist {
                    Some(dist) => dist[u][v],
                    None => norm.opt(g, &d)?,
                };
                push(opt, norm.of(&r.matvec(&d)?))?;
                d[u] = 0.0;
                d[v] = 0.0;
            }
        }
    }
    for d in calibration_batch(n, samples, rng) {
        push(norm.opt(g, &d)?, norm.of(&r.matvec(&d)?))?;
    }
    if ratios.is_empty() {
        return Ok(Calibration::identity());
    }
    let margin = norm.calibration_margin();
    let scale = margin * ratios.iter().copied().fold(0.0, f64::max);
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Calibration { scale, rho: Some(scale / worst), samples: ratios.len(), margin })
}

/// Merges rows of `r` without changing `‖Rd‖` for any `d`.
///
/// Identical rows collapse into one (scaled by their multiplicity under
/// ℓ₁), and rows supported on a single node collapse into one row per node.
/// Under ℓ₁ the merged box coordinates of the transshipment game evolve
/// exactly like the originals, so this only shrinks the work per iteration.
pub fn compress_rows(r: &ColSparseMatrix, norm: Norm) -> ColSparseMatrix {
    let mut singles: Vec<f64> = vec![0.0; r.ncols()];
    let mut groups: HashMap<Vec<(usize, u64)>, (usize, f64)> = HashMap::new();
    let mut order: Vec<Vec<(usize, u64)>> = Vec::new();
    for i in 0..r.nrows() {
        let (cols, vals) = r.row(i);
        match cols.len() {
            0 => {}
            1 => {
                let v = vals[0].abs();
                singles[cols[0]] = match norm {
                    Norm::L1 => singles[cols[0]] + v,
                    Norm::Linf => singles[cols[0]].max(v),
                };
            }
            _ => {
                let key: Vec<(usize, u64)> = cols.iter().zip(vals).map(|(&c, v)| (c, v.to_bits())).collect();
                let entry = groups.entry(key.clone()).or_insert_with(|| {
                    order.push(key);
                    (order.len() - 1, 0.0)
                });
                entry.1 += 1.0;
            }
        }
    }
    let mut trips = Vec::new();
    let mut row = 0;
    for (v, &s) in singles.iter().enumerate() {
        if s != 0.0 {
            trips.push((row, v, s));
            row += 1;
        }
    }
    for key in &order {
        let mult = match norm {
            Norm::L1 => groups[key].1,
            Norm::Linf => 1.0,
        };
        for &(c, bits) in key {
            trips.push((row, c, f64::from_bits(bits) * mult));
        }
        row += 1;
    }
    ColSparseMatrix::from_triplets(row, r.ncols(), &trips).expect("merged rows stay in range")
}

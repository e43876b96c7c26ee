//! Report documents and error mapping.

use std::path::{Path, PathBuf};

use boxflow::approx::{Construction, CostApproximator};
use serde::Serialize;

pub const REPORT_FORMAT: &str = "boxflow-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: boxflow::Error },
    #[error("{0}")]
    Core(#[from] boxflow::Error),
    #[error("cannot encode report: {0}")]
    Encode(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for bad input, 2 for numeric failures.
    pub fn exit_code(&self) -> u8 {
        use boxflow::Error as E;
        match self {
            CliError::Core(E::NumericOverflow(_) | E::Infeasible(_) | E::CoverFailure(_) | E::Audit(_)) => 2,
            CliError::Encode(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub format: &'static str,
    pub version: u32,
    pub command: &'a str,
    pub seed: Option<u64>,
    pub input: Input,
    pub result: T,
}

#[derive(Debug, Serialize)]
pub struct Input {
    pub graph: String,
    pub nodes: usize,
    pub edges: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub demand: Option<String>,
}

impl Input {
    pub fn new(graph: &Path, g: &boxflow::graph::Graph, demand: Option<&Path>) -> Self {
        Input {
            graph: graph.display().to_string(),
            nodes: g.node_count(),
            edges: g.edge_count(),
            demand: demand.map(|p| p.display().to_string()),
        }
    }
}

/// Summary of an approximator, without the matrix.
#[derive(Debug, Serialize)]
pub struct ApproxInfo {
    pub kind: &'static str,
    pub rows: usize,
    pub nnz: usize,
    pub column_bound: usize,
    pub max_column_nnz: usize,
    pub scale: f64,
    pub rho: Option<f64>,
    pub calibration_samples: usize,
    pub calibration_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_nodes: Option<usize>,
}

impl ApproxInfo {
    pub fn of(a: &CostApproximator) -> Self {
        let mut info = ApproxInfo {
            kind: "",
            rows: a.r.nrows(),
            nnz: a.r.nnz(),
            column_bound: a.r.bound(),
            max_column_nnz: a.r.max_column_nnz(),
            scale: a.calibration.scale,
            rho: a.calibration.rho,
            calibration_samples: a.calibration.samples,
            calibration_margin: a.calibration.margin,
            tau: None,
            num: None,
            scales: None,
            tree_nodes: None,
        };
        match &a.construction {
            Construction::DistanceStructures { tau, num, scales, .. } => {
                info.kind = "distance_structures";
                info.tau = Some(*tau);
                info.num = Some(*num);
                info.scales = Some(scales.len());
            }
            Construction::DecompositionTree { parent, .. } => {
                info.kind = "decomposition_tree";
                info.tree_nodes = Some(parent.len());
            }
        }
        info
    }
}

/// Writes the report to `path`, or standard output.
pub fn emit<T: Serialize>(report: &Report<T>, path: Option<&Path>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Io { path: p.to_path_buf(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

use std::path::Path;
use std::time::Instant;

use boxflow::approx::tree::TreeApproximator;
use boxflow::approx::ts::{build_r, TsApproximator, TsConfig};
use boxflow::approx::calibration_batch;
use boxflow::flow::{edge_operator, solve_flow, CentralBackend, FlowConfig, Problem, SolveReport};
use boxflow::graph::{validate_demand, Demand, Graph};
use boxflow::minoragg::{
    dist_compute_r_columns, dist_matvec, MinorAggBackend, MinorAggNetwork, NetConfig, Product, RoundRecord, Source,
};
use boxflow::oracle;
use boxflow::seed::SeedSplitter;
use rand::Rng;
use serde::Serialize;

use crate::report::{emit, ApproxInfo, CliError, CliResult, Input, Report, REPORT_FORMAT, REPORT_VERSION};
use crate::{Common, DemoArgs, Exact, Mode, OracleArgs, OracleProblem, QualityArgs, SolveArgs, Switch};

const CALIBRATION_SAMPLES: usize = 200;

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn load_graph(path: &Path) -> CliResult<Graph> {
    Graph::parse(&read(path)?).map_err(|source| CliError::Input { path: path.to_path_buf(), source })
}

fn load_demand(path: &Path, g: &Graph) -> CliResult<Vec<f64>> {
    let input = |source| CliError::Input { path: path.to_path_buf(), source };
    let d = Demand::parse(&read(path)?, g).map_err(input)?;
    validate_demand(&d.0).map_err(input)?;
    Ok(d.0)
}

fn build_ts(g: &Graph, common: &Common, seeds: &SeedSplitter) -> CliResult<TsApproximator> {
    let cfg = TsConfig { tau: common.tau, num: None };
    let mut ts = TsApproximator::build(g, &cfg, seeds.seed("approximator"))?;
    if common.calibrate == Switch::On {
        ts.approximator.calibrate(g, CALIBRATION_SAMPLES, &mut seeds.rng("calibration"))?;
    }
    Ok(ts)
}

fn build_tree(g: &Graph, common: &Common, seeds: &SeedSplitter) -> CliResult<TreeApproximator> {
    let mut tree = TreeApproximator::build(g, seeds.seed("approximator"))?;
    if common.calibrate == Switch::On {
        tree.approximator.calibrate(g, CALIBRATION_SAMPLES, &mut seeds.rng("calibration"))?;
    }
    Ok(tree)
}

#[derive(Debug, Serialize)]
struct NetworkInfo {
    rounds: u64,
    words: u64,
    setup_rounds: u64,
}

#[derive(Debug, Serialize)]
struct SolveResult {
    mode: &'static str,
    approximator: ApproxInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    network: Option<NetworkInfo>,
    solve: SolveReport,
}

pub fn solve(args: &SolveArgs, problem: Problem) -> CliResult<()> {
    let started = Instant::now();
    let common = &args.common;
    let g = load_graph(&common.graph)?;
    let d = load_demand(&args.demand, &g)?;
    let seeds = SeedSplitter::new(common.seed);
    let cfg = FlowConfig::default();

    let (ts, tree) = match problem {
        Problem::Transshipment => (Some(build_ts(&g, common, &seeds)?), None),
        Problem::MaxFlow => (None, Some(build_tree(&g, common, &seeds)?)),
    };
    let approx = ts.as_ref().map(|t| &t.approximator).or(tree.as_ref().map(|t| &t.approximator)).expect("one is built");

    let (report, network) = match args.mode {
        Mode::Centralized => {
            let backend = CentralBackend::new(&g, approx)?;
            (solve_flow(&g, &backend, &d, args.eps, &cfg)?, None)
        }
        Mode::MinorAgg => {
            let net = MinorAggNetwork::new(&g);
            let source = match (&ts, &tree) {
                (Some(t), _) => Source::Structures(&t.structures),
                (_, Some(t)) => Source::Tree(&t.tree),
                _ => unreachable!(),
            };
            let backend = MinorAggBackend::new(&net, approx, source)?;
            let setup_rounds = net.rounds();
            let report = solve_flow(&g, &backend, &d, args.eps, &cfg)?;
            (report, Some(NetworkInfo { rounds: net.rounds(), words: net.words_sent(), setup_rounds }))
        }
    };
    eprintln!("solved in {:.3} s", started.elapsed().as_secs_f64());

    let result = SolveResult {
        mode: match args.mode {
            Mode::Centralized => "centralized",
            Mode::MinorAgg => "minor_agg",
        },
        approximator: ApproxInfo::of(approx),
        network,
        solve: report,
    };
    let command = match problem {
        Problem::MaxFlow => "maxflow",
        Problem::Transshipment => "transshipment",
    };
    let doc = Report {
        format: REPORT_FORMAT,
        version: REPORT_VERSION,
        command,
        seed: Some(common.seed),
        input: Input::new(&common.graph, &g, Some(&args.demand)),
        result,
    };
    emit(&doc, common.report.as_deref())
}

#[derive(Debug, Serialize)]
struct OracleResult {
    problem: &'static str,
    exact: bool,
    cost: f64,
    /// The optimum as a reduced fraction, in exact mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    cost_exact: Option<String>,
    flow: Vec<f64>,
    dual: Vec<f64>,
}

pub fn oracle(args: &OracleArgs) -> CliResult<()> {
    let g = load_graph(&args.graph)?;
    let d = load_demand(&args.demand, &g)?;
    let integral = d.iter().chain(g.edges().iter().map(|e| &e.weight)).all(|x| x.fract() == 0.0);
    let exact = match args.exact {
        Exact::On => true,
        Exact::Off => false,
        Exact::Auto => integral,
    };
    let (sol, cost_exact) = match (args.problem, exact) {
        (OracleProblem::Transshipment, false) => (oracle::opt_transshipment(&g, &d)?, None),
        (OracleProblem::Congestion, false) => (oracle::opt_congestion(&g, &d)?, None),
        (OracleProblem::Transshipment, true) => {
            let s = oracle::opt_transshipment_exact(&g, &d)?;
            (s.to_f64(), Some(s.cost.to_string()))
        }
        (OracleProblem::Congestion, true) => {
            let s = oracle::opt_congestion_exact(&g, &d)?;
            (s.to_f64(), Some(s.cost.to_string()))
        }
    };
    let result = OracleResult {
        problem: match args.problem {
            OracleProblem::Transshipment => "transshipment",
            OracleProblem::Congestion => "congestion",
        },
        exact,
        cost: sol.cost,
        cost_exact,
        flow: sol.flow,
        dual: sol.dual,
    };
    let doc = Report {
        format: REPORT_FORMAT,
        version: REPORT_VERSION,
        command: "oracle",
        seed: None,
        input: Input::new(&args.graph, &g, Some(&args.demand)),
        result,
    };
    emit(&doc, args.report.as_deref())
}

#[derive(Debug, Serialize)]
struct Quality {
    problem: &'static str,
    approximator: ApproxInfo,
    samples: usize,
    /// Smallest and largest `s·‖Rd‖ / OPT(d)` on the test demands.
    min_ratio: f64,
    max_ratio: f64,
    /// Demands with `s·‖Rd‖ < OPT(d)`.
    lower_violations: usize,
    /// `‖s·R·B·W⁻¹‖₁→₁`.
    edge_operator_norm: f64,
}

pub fn approx_quality(args: &QualityArgs) -> CliResult<()> {
    let common = &args.common;
    let g = load_graph(&common.graph)?;
    let seeds = SeedSplitter::new(common.seed);
    let mut results = Vec::new();
    for problem in [OracleProblem::Transshipment, OracleProblem::Congestion] {
        if args.problem.is_some_and(|p| p != problem) {
            continue;
        }
        let (name, approx) = match problem {
            OracleProblem::Transshipment => ("transshipment", build_ts(&g, common, &seeds)?.approximator),
            OracleProblem::Congestion => ("congestion", build_tree(&g, common, &seeds)?.approximator),
        };
        let demands = calibration_batch(g.node_count(), args.samples, &mut seeds.rng(&format!("quality/{name}")));
        let (mut lo, mut hi, mut bad, mut count) = (f64::INFINITY, 0.0f64, 0, 0);
        for d in &demands {
            let opt = approx.norm.opt(&g, d)?;
            if opt == 0.0 {
                continue;
            }
            let est = approx.estimate(d)?;
            let ratio = est / opt;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
            if est < opt * (1.0 - 1e-9) {
                bad += 1;
            }
            count += 1;
        }
        let norm = edge_operator(&g, &approx.calibrated())?.one_to_one_norm();
        results.push(Quality {
            problem: name,
            approximator: ApproxInfo::of(&approx),
            samples: count,
            min_ratio: if count > 0 { lo } else { 0.0 },
            max_ratio: hi,
            lower_violations: bad,
            edge_operator_norm: norm,
        });
    }
    let doc = Report {
        format: REPORT_FORMAT,
        version: REPORT_VERSION,
        command: "approx-quality",
        seed: Some(common.seed),
        input: Input::new(&common.graph, &g, None),
        result: results,
    };
    emit(&doc, common.report.as_deref())
}

#[derive(Debug, Serialize)]
struct ProductCheck {
    product: String,
    rounds: u64,
    max_abs_diff: f64,
}

#[derive(Debug, Serialize)]
struct Equivalence {
    centralized_cost: f64,
    minor_agg_cost: f64,
    max_flow_diff: f64,
    max_potential_diff: f64,
    rounds: u64,
}

#[derive(Debug, Serialize)]
struct DemoResult {
    rows: usize,
    blocks: usize,
    scales: usize,
    num: usize,
    /// `4·|I_scale|·NUM²`.
    round_bound: u64,
    setup_rounds: u64,
    columns_identical: bool,
    products: Vec<ProductCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    equivalence: Option<Equivalence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<RoundRecord>>,
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dist_demo(args: &DemoArgs) -> CliResult<()> {
    let common = &args.common;
    let g = load_graph(&common.graph)?;
    let seeds = SeedSplitter::new(common.seed);
    let ts = build_ts(&g, common, &seeds)?;
    let ds = &ts.structures;
    let net = MinorAggNetwork::with_config(&g, NetConfig { record_trace: args.trace, ..NetConfig::default() });

    let cols = dist_compute_r_columns(&net, ds)?;
    let setup_rounds = net.rounds();
    let (r, _) = build_r(ds);
    let columns_identical = (0..g.node_count()).all(|v| {
        let (rows, vals) = r.column(v);
        cols.column(v) == rows.iter().copied().zip(vals.iter().copied()).collect::<Vec<_>>()
    });

    let m = edge_operator(&g, &r)?;
    let mut rng = seeds.rng("dist-demo");
    let mut sample = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let (xn, xe, xr) = (sample(g.node_count()), sample(g.edge_count()), sample(r.nrows()));
    let mut products = Vec::new();
    for p in Product::ALL {
        let before = net.rounds();
        let (dist, central) = match p {
            Product::R => (dist_matvec(&net, &cols, p, &xn)?, r.matvec(&xn)?),
            Product::Rt => (dist_matvec(&net, &cols, p, &xr)?, r.matvec_t(&xr)?),
            Product::A => (dist_matvec(&net, &cols, p, &xe)?, m.matvec(&xe)?),
            Product::At => (dist_matvec(&net, &cols, p, &xr)?, m.matvec_t(&xr)?),
            Product::AbsA => (dist_matvec(&net, &cols, p, &xe)?, m.abs_matvec(&xe)?),
            Product::AbsAt => (dist_matvec(&net, &cols, p, &xr)?, m.abs_matvec_t(&xr)?),
        };
        products.push(ProductCheck {
            product: format!("{p:?}"),
            rounds: net.rounds() - before,
            max_abs_diff: max_diff(&dist, &central),
        });
    }

    let equivalence = match &args.demand {
        None => None,
        Some(path) => {
            let d = load_demand(path, &g)?;
            let cfg = FlowConfig::default();
            let central = solve_flow(&g, &CentralBackend::new(&g, &ts.approximator)?, &d, args.eps, &cfg)?;
            let solve_net = MinorAggNetwork::new(&g);
            let backend = MinorAggBackend::new(&solve_net, &ts.approximator, Source::Structures(ds))?;
            let dist = solve_flow(&g, &backend, &d, args.eps, &cfg)?;
            Some(Equivalence {
                centralized_cost: central.primal_cost,
                minor_agg_cost: dist.primal_cost,
                max_flow_diff: max_diff(&central.flow, &dist.flow),
                max_potential_diff: max_diff(&central.potentials, &dist.potentials),
                rounds: solve_net.rounds(),
            })
        }
    };

    let num = ds.num();
    let result = DemoResult {
        rows: cols.rows(),
        blocks: cols.blocks(),
        scales: ds.scales.len(),
        num,
        round_bound: 4 * (ds.scales.len() * num * num) as u64,
        setup_rounds,
        columns_identical,
        products,
        equivalence,
        trace: args.trace.then(|| net.trace()),
    };
    let doc = Report {
        format: REPORT_FORMAT,
        version: REPORT_VERSION,
        command: "dist-demo",
        seed: Some(common.seed),
        input: Input::new(&common.graph, &g, args.demand.as_deref()),
        result,
    };
    emit(&doc, common.report.as_deref())
}

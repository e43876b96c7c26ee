//! Max flow and transshipment through box-simplex games.
//!
//! With a calibrated approximator `R′` (so `OPT(d) ≤ ‖R′d‖`) and a guess
//! `t`, both problems become games whose value is zero exactly when
//! `t ≥ OPT(d)` and grows like `(OPT − t)/t` below it:
//!
//! * max flow: `A = [M, −M]ᵀ`-shaped with `M = R′BW⁻¹`, `b = [R′d; −R′d]/t`,
//!   `c = 0`; the box side is the flow `f = t·W⁻¹x`, the simplex side the
//!   potentials `φ = −R′ᵀ(y₁ − y₂)`.
//! * transshipment: `A = [M, −M]`, `b = 0`, `c = −R′d/t`; the simplex side is
//!   the flow `f = t·W⁻¹(y₁ − y₂)`, the box side the potentials `φ = R′ᵀx`.
//!
//! A geometric binary search finds the smallest grid value of `t` whose
//! game is solved with residual at most `2δ`; its flow is repaired to exact
//! feasibility and a second game slightly below `t` yields the dual.

use serde::{Deserialize, Serialize};

use crate::approx::{compress_rows, CostApproximator, Norm};
use crate::boxsimplex::{iteration_bound, solve_until, BoxSimplexInstance, Checkpoint, SaddlePoint, SolverConfig};
use crate::error::{check_len, Error, Result};
use crate::graph::{validate_demand, Graph};
use crate::sparse::{ColSparseMatrix, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    MaxFlow,
    Transshipment,
}

impl Problem {
    /// Norm of the primal objective `‖Wf‖`.
    pub fn norm(self) -> Norm {
        match self {
            Problem::MaxFlow => Norm::Linf,
            Problem::Transshipment => Norm::L1,
        }
    }

    pub fn cost(self, g: &Graph, f: &[f64]) -> f64 {
        match self {
            Problem::MaxFlow => g.congestion(f),
            Problem::Transshipment => g.l1_cost(f),
        }
    }

    /// `‖W⁻¹Bᵀφ‖` in the dual norm.
    pub fn dual_norm(self, g: &Graph, phi: &[f64]) -> Result<f64> {
        let bt = g.apply_bt(phi)?;
        let scaled: Vec<f64> = bt.iter().zip(g.edges()).map(|(v, e)| v / e.weight).collect();
        Ok(self.norm().dual().of(&scaled))
    }
}

/// Matrix-vector access to a calibrated approximator and its game matrix.
pub trait Backend {
    fn problem(&self) -> Problem;
    /// `R′d`.
    fn apply_r(&self, d: &[f64]) -> Result<Vec<f64>>;
    /// `R′ᵀy`.
    fn apply_rt(&self, y: &[f64]) -> Result<Vec<f64>>;
    fn game_operator(&self) -> &dyn LinearOperator;
    /// `‖A‖₁→₁` of the game operator.
    fn game_norm(&self) -> f64;
    /// Simulated communication rounds spent so far.
    fn rounds(&self) -> u64 {
        0
    }
}

/// `B` as an `n × m` matrix.
pub fn incidence_matrix(g: &Graph) -> ColSparseMatrix {
    let columns = g.edges().iter().map(|e| vec![(e.tail, 1.0), (e.head, -1.0)]).collect();
    ColSparseMatrix::from_columns(g.node_count(), columns, 2).expect("incidence columns are well formed")
}

/// `M = R·B·W⁻¹`.
pub fn edge_operator(g: &Graph, r: &ColSparseMatrix) -> Result<ColSparseMatrix> {
    let inv_w: Vec<f64> = g.edges().iter().map(|e| 1.0 / e.weight).collect();
    r.compose(&incidence_matrix(g).compose(&ColSparseMatrix::diagonal(&inv_w))?)
}

/// The game matrix for `problem` given `M`.
pub fn game_matrix(problem: Problem, m: &ColSparseMatrix) -> Result<ColSparseMatrix> {
    let neg = m.scaled(-1.0);
    match problem {
        Problem::MaxFlow => Ok(ColSparseMatrix::vstack(&[m, &neg])?.transpose()),
        Problem::Transshipment => ColSparseMatrix::hstack(&[m, &neg]),
    }
}

/// Max-flow game at guess `t` for an explicit approximator `r`.
pub fn build_maxflow_instance(g: &Graph, r: &ColSparseMatrix, d: &[f64], t: f64) -> Result<BoxSimplexInstance<ColSparseMatrix>> {
    check_len(g.node_count(), d.len())?;
    let a = game_matrix(Problem::MaxFlow, &edge_operator(g, r)?)?;
    let (b, c) = game_vectors(Problem::MaxFlow, &r.matvec(d)?, &a, t)?;
    BoxSimplexInstance::from_matrix(a, b, c)
}

/// Transshipment game at guess `t` for an explicit approximator `r`.
pub fn build_ts_instance(g: &Graph, r: &ColSparseMatrix, d: &[f64], t: f64) -> Result<BoxSimplexInstance<ColSparseMatrix>> {
    check_len(g.node_count(), d.len())?;
    let a = game_matrix(Problem::Transshipment, &edge_operator(g, r)?)?;
    let (b, c) = game_vectors(Problem::Transshipment, &r.matvec(d)?, &a, t)?;
    BoxSimplexInstance::from_matrix(a, b, c)
}

fn game_vectors(problem: Problem, rd: &[f64], op: &dyn LinearOperator, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Parameter(format!("guess t must be positive, got {t}")));
    }
    Ok(match problem {
        Problem::MaxFlow => {
            let b = rd.iter().map(|v| v / t).chain(rd.iter().map(|v| -v / t)).collect();
            (b, vec![0.0; op.rows()])
        }
        Problem::Transshipment => (vec![0.0; op.cols()], rd.iter().map(|v| -v / t).collect()),
    })
}

/// In-process backend with explicit matrices.
#[derive(Debug, Clone)]
pub struct CentralBackend {
    problem: Problem,
    r: ColSparseMatrix,
    game: ColSparseMatrix,
    norm: f64,
}

impl CentralBackend {
    /// Uses `s·R`; for transshipment the rows are first merged with
    /// [`compress_rows`], which leaves the game's iterates unchanged.
    pub fn new(g: &Graph, approx: &CostApproximator) -> Result<Self> {
        check_len(g.node_count(), approx.n)?;
        let problem = match approx.norm {
            Norm::L1 => Problem::Transshipment,
            Norm::Linf => Problem::MaxFlow,
        };
        let mut r = approx.calibrated();
        if problem == Problem::Transshipment {
            r = compress_rows(&r, Norm::L1);
        }
        let game = game_matrix(problem, &edge_operator(g, &r)?)?;
        let norm = game.one_to_one_norm();
        Ok(CentralBackend { problem, r, game, norm })
    }

    pub fn r(&self) -> &ColSparseMatrix {
        &self.r
    }
}

impl Backend for CentralBackend {
    fn problem(&self) -> Problem {
        self.problem
    }

    fn apply_r(&self, d: &[f64]) -> Result<Vec<f64>> {
        self.r.matvec(d)
    }

    fn apply_rt(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.r.matvec_t(y)
    }

    fn game_operator(&self) -> &dyn LinearOperator {
        &self.game
    }

    fn game_norm(&self) -> f64 {
        self.norm
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    pub game: SolverConfig,
    /// Game accuracy `δ` as a fraction of `eps`.
    pub accuracy: f64,
    /// Accuracy of the recursive repair solves.
    pub repair_eps: f64,
    /// Repair recursion stops once `‖R′r‖ ≤ θ·‖R′d‖`; `None` uses `eps/8`.
    pub repair_threshold: Option<f64>,
    pub max_repair_rounds: usize,
    /// Upper limit on the gap-check interval of each game.
    pub max_checkpoint_interval: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            game: SolverConfig::default(),
            accuracy: 0.125,
            repair_eps: 0.5,
            repair_threshold: None,
            max_repair_rounds: 8,
            max_checkpoint_interval: 64,
        }
    }
}

/// One game solved during the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub t: f64,
    pub accepted: bool,
    pub iterations: u64,
    /// Residual reached by the primal side, `‖R′(Bf − d)‖/t`.
    pub primal_bound: f64,
    /// Certified lower bound on the optimal residual.
    pub dual_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub problem: Problem,
    pub eps: f64,
    pub flow: Vec<f64>,
    pub primal_cost: f64,
    /// `‖Bf − d‖₁ / ‖d‖₁`.
    pub primal_residual: f64,
    pub potentials: Vec<f64>,
    /// `⟨d, φ⟩` with `‖W⁻¹Bᵀφ‖ = 1`.
    pub dual_value: f64,
    pub dual_norm: f64,
    /// `‖R′d‖`.
    pub approx_estimate: f64,
    pub primal_ratio: f64,
    pub dual_ratio: f64,
    pub game_norm: f64,
    pub t_final: f64,
    pub t_dual: f64,
    pub probes: Vec<Probe>,
    pub iterations: u64,
    pub repair_rounds: usize,
    pub repair_cost: f64,
    pub rounds: u64,
}

pub fn solve_maxflow(g: &Graph, backend: &dyn Backend, d: &[f64], eps: f64, cfg: &FlowConfig) -> Result<SolveReport> {
    expect_problem(backend, Problem::MaxFlow)?;
    solve_flow(g, backend, d, eps, cfg)
}

pub fn solve_transshipment(g: &Graph, backend: &dyn Backend, d: &[f64], eps: f64, cfg: &FlowConfig) -> Result<SolveReport> {
    expect_problem(backend, Problem::Transshipment)?;
    solve_flow(g, backend, d, eps, cfg)
}

fn expect_problem(backend: &dyn Backend, p: Problem) -> Result<()> {
    if backend.problem() != p {
        return Err(Error::Parameter(format!("backend is set up for {:?}, not {p:?}", backend.problem())));
    }
    Ok(())
}

/// Runs the full pipeline: search, repair, dual extraction.
pub fn solve_flow(g: &Graph, backend: &dyn Backend, d: &[f64], eps: f64, cfg: &FlowConfig) -> Result<SolveReport> {
    check_len(g.node_count(), d.len())?;
    validate_demand(d)?;
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::Parameter(format!("eps must lie in (0, 1/2], got {eps}")));
    }
    let problem = backend.problem();
    let n = g.node_count();
    let m = g.edge_count();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(SolveReport {
            problem,
            eps,
            flow: vec![0.0; m],
            primal_cost: 0.0,
            primal_residual: 0.0,
            potentials: vec![0.0; n],
            dual_value: 0.0,
            dual_norm: 0.0,
            approx_estimate: 0.0,
            primal_ratio: 0.0,
            dual_ratio: 0.0,
            game_norm: backend.game_norm(),
            t_final: 0.0,
            t_dual: 0.0,
            probes: Vec::new(),
            iterations: 0,
            repair_rounds: 0,
            repair_cost: 0.0,
            rounds: backend.rounds(),
        });
    }

    let search = search(g, backend, d, eps, cfg)?;
    let mut probes = search.probes;
    let mut iterations = search.iterations;
    let mut best_dual = search.best_dual;

    // Repair the search flow to exact feasibility.
    let rd_norm = problem.norm().of(&backend.apply_r(d)?);
    let theta = cfg.repair_threshold.unwrap_or(eps / 8.0);
    let mut flow = search.flow;
    let base_cost = problem.cost(g, &flow);
    let resid = residual(g, d, &flow)?;
    let repair = repair_flow(g, backend, &resid, theta * rd_norm, cfg)?;
    iterations += repair.iterations;
    flow.iter_mut().zip(&repair.flow).for_each(|(f, r)| *f += r);

    // Dual from a game strictly below the accepted guess.
    let t_dual = (1.0 - eps) * search.t;
    let delta = game_accuracy(eps, cfg, backend.game_norm());
    let probe = run_probe(g, backend, d, t_dual, delta, cfg, ProbeGoal::Dual)?;
    iterations += probe.probe.iterations;
    if let Some(c) = probe.dual {
        if best_dual.as_ref().is_none_or(|b| c.0 > b.0) {
            best_dual = Some(c);
        }
    }
    probes.push(probe.probe);

    let (dual_value, potentials) = best_dual.unwrap_or((0.0, vec![0.0; n]));
    let dual_norm = if dual_value > 0.0 { problem.dual_norm(g, &potentials)? } else { 0.0 };
    let primal_cost = problem.cost(g, &flow);
    let final_resid = residual(g, d, &flow)?;
    let d_l1: f64 = d.iter().map(|v| v.abs()).sum();
    Ok(SolveReport {
        problem,
        eps,
        primal_cost,
        primal_residual: final_resid.iter().map(|v| v.abs()).sum::<f64>() / d_l1,
        flow,
        potentials,
        dual_value,
        dual_norm,
        approx_estimate: rd_norm,
        primal_ratio: primal_cost / rd_norm,
        dual_ratio: dual_value / rd_norm,
        game_norm: backend.game_norm(),
        t_final: search.t,
        t_dual,
        probes,
        iterations,
        repair_rounds: repair.rounds,
        repair_cost: (primal_cost - base_cost).max(0.0),
        rounds: backend.rounds(),
    })
}

fn residual(g: &Graph, d: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let bf = g.apply_b(f)?;
    Ok(d.iter().zip(&bf).map(|(a, b)| a - b).collect())
}

fn game_accuracy(eps: f64, cfg: &FlowConfig, norm: f64) -> f64 {
    (eps * cfg.accuracy).min(0.5 * norm)
}

struct SearchOutcome {
    t: f64,
    flow: Vec<f64>,
    probes: Vec<Probe>,
    iterations: u64,
    best_dual: Option<(f64, Vec<f64>)>,
}

/// Geometric binary search for the smallest accepted grid guess.
fn search(g: &Graph, backend: &dyn Backend, d: &[f64], eps: f64, cfg: &FlowConfig) -> Result<SearchOutcome> {
    let problem = backend.problem();
    let rd_norm = problem.norm().of(&backend.apply_r(d)?);
    if rd_norm == 0.0 {
        return Err(Error::Infeasible("approximator annihilates the demand".into()));
    }
    let delta = game_accuracy(eps, cfg, backend.game_norm());
    let step = 1.0 + eps / 4.0;
    let mut probes = Vec::new();
    let mut iterations = 0;
    let mut best_dual: Option<(f64, Vec<f64>)> = None;
    let mut run = |t: f64, probes: &mut Vec<Probe>| -> Result<ProbeOutcome> {
        let out = run_probe(g, backend, d, t, delta, cfg, ProbeGoal::Decide)?;
        iterations += out.probe.iterations;
        if let Some(c) = &out.dual {
            if best_dual.as_ref().is_none_or(|b| c.0 > b.0) {
                best_dual = Some(c.clone());
            }
        }
        probes.push(out.probe);
        Ok(out)
    };

    // Bracket: lo rejected, top accepted.
    let mut lo = rd_norm / 2.0;
    let mut guard = 0;
    while run(lo, &mut probes)?.probe.accepted {
        lo /= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(Error::NumericOverflow("no rejected guess below the estimate".into()));
        }
    }
    let mut k_top = ((4.0f64).ln() / step.ln()).ceil() as i32;
    let mut top;
    guard = 0;
    loop {
        let t = lo * step.powi(k_top);
        let out = run(t, &mut probes)?;
        if out.probe.accepted {
            top = out;
            break;
        }
        k_top *= 2;
        guard += 1;
        if guard > 60 {
            return Err(Error::NumericOverflow("no accepted guess above the estimate".into()));
        }
    }
    let (mut k_lo, mut k_hi) = (0, k_top);
    while k_hi - k_lo > 1 {
        let mid = k_lo + (k_hi - k_lo) / 2;
        let out = run(lo * step.powi(mid), &mut probes)?;
        if out.probe.accepted {
            k_hi = mid;
            top = out;
        } else {
            k_lo = mid;
        }
    }
    let t = top.probe.t;
    let flow = top.flow.expect("accepted probes carry a flow");
    Ok(SearchOutcome { t, flow, probes, iterations, best_dual })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ProbeGoal {
    /// Accept when the primal residual is ≤ 2δ, reject once the guess is
    /// certified below the optimum.
    Decide,
    /// Stop once the guess is certified below the optimum.
    Dual,
}

struct ProbeOutcome {
    probe: Probe,
    flow: Option<Vec<f64>>,
    dual: Option<(f64, Vec<f64>)>,
}

// (primal residual bound, certified lower bound) from the game's two sides.
fn bounds(problem: Problem, upper: f64, lower: f64) -> (f64, f64) {
    match problem {
        Problem::MaxFlow => (upper, lower),
        Problem::Transshipment => (-lower, -upper),
    }
}

fn run_probe(
    g: &Graph,
    backend: &dyn Backend,
    d: &[f64],
    t: f64,
    delta: f64,
    cfg: &FlowConfig,
    goal: ProbeGoal,
) -> Result<ProbeOutcome> {
    let problem = backend.problem();
    let op = backend.game_operator();
    let rd = backend.apply_r(d)?;
    let (b, c) = game_vectors(problem, &rd, op, t)?;
    let inst = BoxSimplexInstance::new(op, b, c, backend.game_norm())?;
    let mut game_cfg = cfg.game.clone();
    let limit = iteration_bound(inst.simplex_dim(), inst.norm(), delta);
    let interval = game_cfg.checkpoint_interval.unwrap_or_else(|| limit.div_ceil(100));
    game_cfg.checkpoint_interval = Some(interval.clamp(1, cfg.max_checkpoint_interval.max(1)));
    let sp = solve_until(&inst, delta, &game_cfg, |cp: &Checkpoint| {
        let (p, q) = bounds(problem, cp.upper, cp.lower);
        match goal {
            ProbeGoal::Decide => p <= 2.0 * delta || q > 0.0,
            ProbeGoal::Dual => q > 0.0,
        }
    })?;
    let (p, q) = bounds(problem, sp.upper, sp.lower);
    let accepted = goal == ProbeGoal::Decide && p <= 2.0 * delta;
    let flow = accepted.then(|| extract_flow(g, problem, &sp, t));
    let dual = extract_dual(g, backend, d, &sp)?;
    Ok(ProbeOutcome {
        probe: Probe { t, accepted, iterations: sp.iterations, primal_bound: p, dual_bound: q },
        flow,
        dual,
    })
}

fn extract_flow(g: &Graph, problem: Problem, sp: &SaddlePoint, t: f64) -> Vec<f64> {
    let m = g.edge_count();
    g.edges()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let z = match problem {
                Problem::MaxFlow => sp.x[k],
                Problem::Transshipment => sp.y[k] - sp.y[m + k],
            };
            t * z / e.weight
        })
        .collect()
}

// Normalized potentials with `⟨d, φ⟩ > 0`, if the game produced any.
fn extract_dual(g: &Graph, backend: &dyn Backend, d: &[f64], sp: &SaddlePoint) -> Result<Option<(f64, Vec<f64>)>> {
    let problem = backend.problem();
    let mut phi = match problem {
        Problem::MaxFlow => {
            let half = sp.y.len() / 2;
            let diff: Vec<f64> = (0..half).map(|i| sp.y[half + i] - sp.y[i]).collect();
            backend.apply_rt(&diff)?
        }
        Problem::Transshipment => backend.apply_rt(&sp.x)?,
    };
    let mut value: f64 = d.iter().zip(&phi).map(|(a, b)| a * b).sum();
    // The dual constraint is symmetric, so either sign is feasible.
    if value < 0.0 {
        phi.iter_mut().for_each(|v| *v = -*v);
        value = -value;
    }
    let norm = problem.dual_norm(g, &phi)?;
    if !(value > 0.0 && norm > 0.0) {
        return Ok(None);
    }
    phi.iter_mut().for_each(|v| *v /= norm);
    Ok(Some((value / norm, phi)))
}

struct Repair {
    flow: Vec<f64>,
    rounds: usize,
    iterations: u64,
}

/// Routes `resid` exactly: coarse games at `cfg.repair_eps` while
/// `‖R′r‖ > threshold`, then the remainder along a shortest-path tree.
pub fn repair_flow_with(g: &Graph, backend: &dyn Backend, resid: &[f64], threshold: f64, cfg: &FlowConfig) -> Result<Vec<f64>> {
    Ok(repair_flow(g, backend, resid, threshold, cfg)?.flow)
}

fn repair_flow(g: &Graph, backend: &dyn Backend, resid: &[f64], threshold: f64, cfg: &FlowConfig) -> Result<Repair> {
    let problem = backend.problem();
    let mut flow = vec![0.0; g.edge_count()];
    let mut r = resid.to_vec();
    let mut rounds = 0;
    let mut iterations = 0;
    while rounds < cfg.max_repair_rounds {
        let size = problem.norm().of(&backend.apply_r(&r)?);
        if size <= threshold || r.iter().all(|&v| v == 0.0) {
            break;
        }
        let out = search(g, backend, &r, cfg.repair_eps, cfg)?;
        iterations += out.iterations;
        flow.iter_mut().zip(&out.flow).for_each(|(f, x)| *f += x);
        r = residual(g, resid, &flow)?;
        rounds += 1;
    }
    let tree = tree_route(g, &r);
    flow.iter_mut().zip(&tree).for_each(|(f, x)| *f += x);
    Ok(Repair { flow, rounds, iterations })
}

/// Routes a balanced demand along the shortest-path tree from node 0:
/// every tree edge carries the demand of the subtree below it.
pub fn tree_route(g: &Graph, d: &[f64]) -> Vec<f64> {
    let n = g.node_count();
    let (dist, parent) = g.shortest_path_tree(0);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let mut excess = d.to_vec();
    let mut flow = vec![0.0; g.edge_count()];
    for v in order {
        if let Some(k) = parent[v] {
            let e = g.edge(k);
            // Push v's excess toward its parent.
            let amount = excess[v];
            let p = if e.tail == v { e.head } else { e.tail };
            flow[k] += if e.tail == v { amount } else { -amount };
            excess[p] += amount;
            excess[v] = 0.0;
        }
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_route_is_exact_on_paths() {
        let g = Graph::parse("0 1 1\n1 2 2\n3 2 1").unwrap();
        let d = [1.0, 0.0, 0.0, -1.0];
        let f = tree_route(&g, &d);
        assert_eq!(f, vec![1.0, 1.0, -1.0]);
        assert_eq!(g.apply_b(&f).unwrap(), d.to_vec());
    }

    #[test]
    fn zero_residual_routes_nothing() {
        let g = Graph::parse("0 1 1\n1 2 2").unwrap();
        assert_eq!(tree_route(&g, &[0.0; 3]), vec![0.0; 2]);
    }
}

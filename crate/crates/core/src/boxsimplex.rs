//! Box-simplex games `min_{x∈[−1,1]ⁿ} max_{y∈Δ_d} xᵀAy − ⟨b,y⟩ + ⟨c,x⟩`.
//!
//! [`solve`] runs the area-convex extragradient scheme: each iteration makes
//! a gradient half-step and an extragradient half-step, each resolved by a
//! short alternating minimization between the box and simplex blocks. The
//! simplex iterates live in the log domain so the multiplicative updates
//! never underflow. Solutions are certified by the exact duality gap from
//! the two one-sided closed forms ([`eval_box_form`] and
//! [`eval_simplex_form`]).

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::sparse::{ColSparseMatrix, LinearOperator};

const DENOMINATOR_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct BoxSimplexInstance<Op> {
    a: Op,
    b: Vec<f64>,
    c: Vec<f64>,
    norm: f64,
}

impl BoxSimplexInstance<ColSparseMatrix> {
    /// Instance over an explicit matrix; `‖A‖₁→₁` is computed.
    pub fn from_matrix(a: ColSparseMatrix, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let norm = a.one_to_one_norm();
        Self::new(a, b, c, norm)
    }
}

impl<Op: LinearOperator> BoxSimplexInstance<Op> {
    /// `norm` must be `‖A‖₁→₁`; it sets the step scale and iteration count.
    pub fn new(a: Op, b: Vec<f64>, c: Vec<f64>, norm: f64) -> Result<Self> {
        check_len(a.cols(), b.len())?;
        check_len(a.rows(), c.len())?;
        if a.cols() == 0 {
            return Err(Error::Parameter("simplex side is empty".into()));
        }
        if !(norm.is_finite() && norm >= 0.0) {
            return Err(Error::Parameter(format!("operator norm {norm}")));
        }
        if b.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("instance vectors".into()));
        }
        Ok(BoxSimplexInstance { a, b, c, norm })
    }

    /// Box dimension `n`.
    pub fn box_dim(&self) -> usize {
        self.a.rows()
    }

    /// Simplex dimension `d`.
    pub fn simplex_dim(&self) -> usize {
        self.a.cols()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn operator(&self) -> &Op {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Multiplies the worst-case iteration count.
    pub iteration_multiplier: f64,
    /// Stop once the certified gap is at most `eps`.
    pub early_exit: bool,
    /// Iterations between gap checks; `None` checks every `⌈T/100⌉`.
    pub checkpoint_interval: Option<u64>,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 2.0,
            beta: 2.0,
            iteration_multiplier: 1.0,
            early_exit: true,
            checkpoint_interval: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub gap: f64,
    pub entropy: f64,
}

/// Snapshot handed to a stopping rule at every checkpoint.
#[derive(Debug)]
pub struct Checkpoint<'a> {
    pub iteration: u64,
    pub x: &'a [f64],
    pub y: &'a [f64],
    /// `eval_box_form(x)`, an upper bound on the game value.
    pub upper: f64,
    /// `eval_simplex_form(y)`, a lower bound on the game value.
    pub lower: f64,
}

impl Checkpoint<'_> {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub iterations: u64,
    pub iteration_limit: u64,
    pub upper: f64,
    pub lower: f64,
    pub gap: f64,
    pub exited_early: bool,
    pub trace: Vec<TraceRecord>,
}

/// Worst-case iteration count `⌈6(8 ln d + 1)·L/ε⌉`.
pub fn iteration_bound(simplex_dim: usize, norm: f64, eps: f64) -> u64 {
    let log_d = (simplex_dim as f64).ln();
    (6.0 * (8.0 * log_d + 1.0) * norm / eps).ceil() as u64
}

pub fn solve<Op: LinearOperator>(
    inst: &BoxSimplexInstance<Op>,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<SaddlePoint> {
    solve_until(inst, eps, cfg, |cp: &Checkpoint| cp.gap() <= eps)
}

/// Like [`solve`], but early exit is decided by `stop` (only consulted when
/// `cfg.early_exit` is set).
pub fn solve_until<Op, F>(
    inst: &BoxSimplexInstance<Op>,
    eps: f64,
    cfg: &SolverConfig,
    mut stop: F,
) -> Result<SaddlePoint>
where
    Op: LinearOperator,
    F: FnMut(&Checkpoint) -> bool,
{
    let (n, d) = (inst.box_dim(), inst.simplex_dim());
    if inst.norm == 0.0 {
        return solve_constant(inst);
    }
    if !(eps > 0.0 && eps < inst.norm) {
        return Err(Error::Parameter(format!(
            "accuracy {eps} must lie in (0, ‖A‖₁→₁ = {})",
            inst.norm
        )));
    }
    if !(cfg.alpha > 0.0 && cfg.beta > 0.0 && cfg.iteration_multiplier > 0.0) {
        return Err(Error::Parameter("alpha, beta and the iteration multiplier must be positive".into()));
    }
    let limit = ((iteration_bound(d, inst.norm, eps) as f64) * cfg.iteration_multiplier).ceil().max(1.0) as u64;
    let interval = cfg.checkpoint_interval.unwrap_or_else(|| limit.div_ceil(100)).max(1);

    // Rescaled game: A/L, b/L, c/L.
    let inv_l = 1.0 / inst.norm;
    let b: Vec<f64> = inst.b.iter().map(|v| v * inv_l).collect();
    let c: Vec<f64> = inst.c.iter().map(|v| v * inv_l).collect();
    let a = &inst.a;
    let (alpha, inv_beta) = (cfg.alpha, 1.0 / cfg.beta);

    let mut x = vec![0.0; n];
    let mut ly = vec![-(d as f64).ln(); d];
    let mut lybar = ly.clone();
    let mut y = vec![1.0 / d as f64; d];
    let mut sum_x = vec![0.0; n];
    let mut sum_y = vec![0.0; d];

    // Work buffers.
    let mut ay = vec![0.0; n];
    let mut abs_ay = vec![0.0; n];
    let mut abs_ay_next = vec![0.0; n];
    let mut tmp_n = vec![0.0; n];
    let mut num = vec![0.0; n];
    let mut xs = vec![0.0; n];
    let mut x_prime = vec![0.0; n];
    let mut atx = vec![0.0; d];
    let mut abs_t_x0 = vec![0.0; d];
    let mut abs_t_tmp = vec![0.0; d];
    let mut abs_t_next = vec![0.0; d];
    let mut gy = vec![0.0; d];
    let mut ly_prime = vec![0.0; d];
    let mut y_prime = vec![0.0; d];
    let mut ly_next = vec![0.0; d];
    let mut sq = vec![0.0; n];

    let mut trace = Vec::new();
    let mut have_cached = false;
    let mut done = 0u64;
    let mut exited_early = false;

    for t in 0..limit {
        // Quantities at (x_t, y_t); |A|y_t and |A|ᵀx_t² carry over from the
        // previous iteration.
        a.apply(&y, &mut ay)?;
        if !have_cached {
            a.apply_abs(&y, &mut abs_ay)?;
            square_into(&x, &mut sq);
            a.apply_abs_t(&sq, &mut abs_t_x0)?;
        }
        a.apply_t(&x, &mut atx)?;

        // Gradient oracle (factor 1/3).
        for i in 0..n {
            let gx = (ay[i] * inv_l + c[i]) / 3.0;
            num[i] = gx - 2.0 * x[i] * abs_ay[i] * inv_l;
        }
        for j in 0..d {
            gy[j] = (b[j] - atx[j] * inv_l) / 3.0;
        }
        box_step(&num, &abs_ay, inv_l, &mut xs);
        square_into(&xs, &mut sq);
        a.apply_abs_t(&sq, &mut abs_t_tmp)?;
        for j in 0..d {
            ly_prime[j] = ly[j] - inv_beta * (gy[j] + (abs_t_tmp[j] - abs_t_x0[j]) * inv_l);
        }
        normalize_log(&mut ly_prime)?;
        exp_into(&ly_prime, &mut y_prime);
        a.apply_abs(&y_prime, &mut tmp_n)?;
        box_step(&num, &tmp_n, inv_l, &mut x_prime);

        for i in 0..n {
            sum_x[i] += x_prime[i];
        }
        for j in 0..d {
            sum_y[j] += y_prime[j];
        }

        // Extragradient oracle (factor 1/6) at (x', y').
        a.apply(&y_prime, &mut tmp_n)?;
        for i in 0..n {
            let gx = (tmp_n[i] * inv_l + c[i]) / 6.0;
            num[i] = gx - 2.0 * x[i] * abs_ay[i] * inv_l;
        }
        a.apply_t(&x_prime, &mut atx)?;
        for j in 0..d {
            gy[j] = (b[j] - atx[j] * inv_l) / 6.0;
        }
        // x̄* from ȳ_t.
        exp_into(&lybar, &mut y_prime);
        a.apply_abs(&y_prime, &mut tmp_n)?;
        box_step(&num, &tmp_n, inv_l, &mut xs);
        square_into(&xs, &mut sq);
        a.apply_abs_t(&sq, &mut abs_t_tmp)?;
        for j in 0..d {
            ly_next[j] = lybar[j]
                - inv_beta
                    * (gy[j] + (abs_t_tmp[j] - abs_t_x0[j]) * inv_l + alpha * lybar[j] - alpha * ly[j]);
        }
        normalize_log(&mut ly_next)?;
        exp_into(&ly_next, &mut y);
        a.apply_abs(&y, &mut abs_ay_next)?;
        box_step(&num, &abs_ay_next, inv_l, &mut xs);
        square_into(&xs, &mut sq);
        a.apply_abs_t(&sq, &mut abs_t_next)?;
        for j in 0..d {
            lybar[j] = ly[j]
                - inv_beta
                    * (gy[j] + (abs_t_next[j] - abs_t_x0[j]) * inv_l + alpha * ly_next[j] - alpha * ly[j]);
        }
        normalize_log(&mut lybar)?;

        std::mem::swap(&mut x, &mut xs);
        std::mem::swap(&mut ly, &mut ly_next);
        std::mem::swap(&mut abs_ay, &mut abs_ay_next);
        std::mem::swap(&mut abs_t_x0, &mut abs_t_next);
        have_cached = true;
        done = t + 1;

        let at_checkpoint = done.is_multiple_of(interval) && done < limit;
        if at_checkpoint && (cfg.early_exit || cfg.record_trace) {
            let (xh, yh) = averages(&sum_x, &sum_y, done);
            let upper = eval_box_unchecked(inst, &xh)?;
            let lower = eval_simplex_unchecked(inst, &yh)?;
            if cfg.record_trace {
                trace.push(TraceRecord { iteration: done, gap: upper - lower, entropy: entropy(&yh) });
            }
            if cfg.early_exit {
                let cp = Checkpoint { iteration: done, x: &xh, y: &yh, upper, lower };
                if stop(&cp) {
                    exited_early = true;
                    log::debug!("box-simplex early exit at {done}/{limit}, gap {:.3e}", upper - lower);
                    break;
                }
            }
        }
    }

    let (xh, yh) = averages(&sum_x, &sum_y, done);
    let upper = eval_box_unchecked(inst, &xh)?;
    let lower = eval_simplex_unchecked(inst, &yh)?;
    if cfg.record_trace {
        trace.push(TraceRecord { iteration: done, gap: upper - lower, entropy: entropy(&yh) });
    }
    Ok(SaddlePoint {
        x: xh,
        y: yh,
        iterations: done,
        iteration_limit: limit,
        upper,
        lower,
        gap: upper - lower,
        exited_early,
        trace,
    })
}

// Constant game (A = 0): x = −sign(c), y on the smallest b.
fn solve_constant<Op: LinearOperator>(inst: &BoxSimplexInstance<Op>) -> Result<SaddlePoint> {
    let x: Vec<f64> = inst.c.iter().map(|&c| if c > 0.0 { -1.0 } else if c < 0.0 { 1.0 } else { 0.0 }).collect();
    let best = inst
        .b
        .iter()
        .enumerate()
        .min_by(|p, q| p.1.total_cmp(q.1))
        .map(|(j, _)| j)
        .unwrap_or(0);
    let mut y = vec![0.0; inst.simplex_dim()];
    y[best] = 1.0;
    let upper = eval_box_unchecked(inst, &x)?;
    let lower = eval_simplex_unchecked(inst, &y)?;
    Ok(SaddlePoint {
        x,
        y,
        iterations: 0,
        iteration_limit: 0,
        upper,
        lower,
        gap: upper - lower,
        exited_early: false,
        trace: Vec::new(),
    })
}

fn square_into(x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o = v * v;
    }
}

fn exp_into(l: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(l) {
        *o = v.exp();
    }
}

// Π_X(−num / (2·|A|y)) with |A|y given unscaled (multiplied by inv_l here).
fn box_step(num: &[f64], abs_ay: &[f64], inv_l: f64, out: &mut [f64]) {
    for i in 0..num.len() {
        let den = (2.0 * abs_ay[i] * inv_l).max(DENOMINATOR_FLOOR);
        let v = -num[i] / den;
        out[i] = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    }
}

// Π_Y in the log domain: subtract log-sum-exp.
fn normalize_log(l: &mut [f64]) -> Result<()> {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::NumericOverflow("simplex iterate".into()));
    }
    let s: f64 = l.iter().map(|v| (v - m).exp()).sum();
    let lse = m + s.ln();
    for v in l.iter_mut() {
        *v -= lse;
    }
    Ok(())
}

fn averages(sum_x: &[f64], sum_y: &[f64], count: u64) -> (Vec<f64>, Vec<f64>) {
    let k = count.max(1) as f64;
    let x = sum_x.iter().map(|v| (v / k).clamp(-1.0, 1.0)).collect();
    let mut y: Vec<f64> = sum_y.iter().map(|v| (v / k).max(0.0)).collect();
    let s: f64 = y.iter().sum();
    if s > 0.0 {
        y.iter_mut().for_each(|v| *v /= s);
    } else {
        let u = 1.0 / y.len() as f64;
        y.iter_mut().for_each(|v| *v = u);
    }
    (x, y)
}

fn entropy(y: &[f64]) -> f64 {
    -y.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

fn check_simplex(y: &[f64]) -> Result<()> {
    let s: f64 = y.iter().sum();
    if y.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::Infeasible(format!("y is not in the simplex (sum {s})")));
    }
    Ok(())
}

fn check_box(x: &[f64]) -> Result<()> {
    if x.iter().any(|&v| !(v.abs() <= 1.0 + 1e-12)) {
        return Err(Error::Infeasible("x leaves the box".into()));
    }
    Ok(())
}

/// `−(‖Ay + c‖₁ + ⟨b, y⟩)`, the best box response to `y`.
pub fn eval_simplex_form<Op: LinearOperator>(inst: &BoxSimplexInstance<Op>, y: &[f64]) -> Result<f64> {
    check_len(inst.simplex_dim(), y.len())?;
    check_simplex(y)?;
    eval_simplex_unchecked(inst, y)
}

/// `max_j (Aᵀx − b)_j + ⟨c, x⟩`, the best simplex response to `x`.
pub fn eval_box_form<Op: LinearOperator>(inst: &BoxSimplexInstance<Op>, x: &[f64]) -> Result<f64> {
    check_len(inst.box_dim(), x.len())?;
    check_box(x)?;
    eval_box_unchecked(inst, x)
}

/// Exact duality gap `eval_box_form(x) − eval_simplex_form(y) ≥ 0`.
pub fn gap<Op: LinearOperator>(inst: &BoxSimplexInstance<Op>, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(eval_box_form(inst, x)? - eval_simplex_form(inst, y)?)
}

fn eval_simplex_unchecked<Op: LinearOperator>(inst: &BoxSimplexInstance<Op>, y: &[f64]) -> Result<f64> {
    let mut ay = vec![0.0; inst.box_dim()];
    inst.a.apply(y, &mut ay)?;
    let l1: f64 = ay.iter().zip(&inst.c).map(|(a, c)| (a + c).abs()).sum();
    let by: f64 = inst.b.iter().zip(y).map(|(b, y)| b * y).sum();
    Ok(-(l1 + by))
}

fn eval_box_unchecked<Op: LinearOperator>(inst: &BoxSimplexInstance<Op>, x: &[f64]) -> Result<f64> {
    let mut atx = vec![0.0; inst.simplex_dim()];
    inst.a.apply_t(x, &mut atx)?;
    let best = atx.iter().zip(&inst.b).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
    let cx: f64 = inst.c.iter().zip(x).map(|(c, x)| c * x).sum();
    Ok(best + cx)
}

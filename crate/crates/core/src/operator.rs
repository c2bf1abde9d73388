//! The generational operator `P` on maturity densities.
//!
//! Discretization: the in-target-maturity antiderivative of the kernel is
//! available in closed form through the transition CDF
//! `F_y(m) = 1 - e^{Q(y) - Q(lambda(m))}`, so the operator is assembled
//! from exact landing masses on node-centered cells. Column (source)
//! masses then telescope to the analytic value `1 - e^{Q(y) - Q(lambda(mMax))}`
//! and mass bookkeeping holds to rounding, while row values stay
//! second-order accurate in the grid step. A separate pointwise evaluator
//! (trapezoid with the support cut split exactly at `lambda(m)`) provides
//! an independent route used by the oracle tests.

use crate::flows::{FlowError, FlowSolver};
use crate::grid::{Grid, GridDensity, GridFn};
use crate::numeric::adaptive_simpson_split;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("domain too small: a source column keeps only {min_landing:.3} of its mass inside [0, mMax]; increase mMax")]
    DomainTooSmall { min_landing: f64 },
    #[error("density support must lie in [{lo}, {hi}]")]
    Support { lo: f64, hi: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Exponent range beyond which the prefix-sum fast path would overflow
/// and the operator falls back to per-edge accumulation.
const PREFIX_EXP_LIMIT: f64 = 600.0;

/// Hazard ratio `phi/g1` as a right limit. The kernel factor
/// `Q'(lambda(m))` is a density defined almost everywhere; at a jump of
/// `phi` (which sits exactly at `lambda(0) = mP` for threshold rates) the
/// inside-the-support value is the right one.
fn rate_ratio_right(solver: &FlowSolver, at: f64) -> f64 {
    let spec = solver.spec();
    let x = at + 1e-9 * (1.0 + at.abs());
    spec.phi.eval(x) / spec.g1.eval(x)
}

/// The discretized operator bound to a model and a grid.
pub struct KernelOp {
    pub grid: Grid,
    solver: Arc<FlowSolver>,
    /// `Q(y_j)` at grid nodes.
    q_nodes: Vec<f64>,
    /// `e^{Q(y_j) - Q(mMax)}` (all <= 1).
    exp_q_shifted: Vec<f64>,
    q_shift: f64,
    /// Staggered cell edges: `0, dm/2, 3dm/2, ..., mMax`.
    edges: Vec<f64>,
    /// `Q(lambda(edge))` per edge.
    q_lam_edges: Vec<f64>,
    /// Number of nodes with `y_j <= lambda(edge)`.
    cnt_edges: Vec<usize>,
    /// Escape factor per source node: `e^{Q(y_j) - Q(lambda(mMax))}`.
    tail: Vec<f64>,
    /// Trapezoid node weights.
    weights: Vec<f64>,
    fast: bool,
}

impl KernelOp {
    /// Builds the operator; fails when the truncated domain would lose more
    /// than half of some column's mass.
    pub fn new(solver: Arc<FlowSolver>, grid: Grid) -> Result<Self, OperatorError> {
        let n = grid.n;
        let dm = grid.dm();
        let m_max = grid.m_max;
        let q_nodes: Vec<f64> = grid.nodes().map(|y| solver.hazard_q(y)).collect();
        let q_shift = q_nodes[n];

        let mut edges = Vec::with_capacity(n + 2);
        edges.push(0.0);
        for i in 0..n {
            edges.push((i as f64 + 0.5) * dm);
        }
        edges.push(m_max);

        let mut q_lam_edges = Vec::with_capacity(n + 2);
        let mut cnt_edges = Vec::with_capacity(n + 2);
        for &e in &edges {
            let lam = solver.lambda(e)?;
            q_lam_edges.push(solver.hazard_q(lam));
            let cnt = ((lam / dm).floor() as usize + 1).min(n + 1);
            cnt_edges.push(cnt);
        }

        let q_lam_end = q_lam_edges[n + 1];
        let tail: Vec<f64> = q_nodes.iter().map(|&q| (q - q_lam_end).exp()).collect();
        // Sources in the lower half of the domain must keep most of their
        // mass inside; the top columns of a weak-hazard kernel lose mass
        // intrinsically and growing mMax would not change that.
        let mid_landing = 1.0 - tail[n / 2];
        if mid_landing < 0.5 {
            return Err(OperatorError::DomainTooSmall {
                min_landing: mid_landing,
            });
        }

        let exp_q_shifted: Vec<f64> = q_nodes.iter().map(|&q| (q - q_shift).exp()).collect();
        let weights: Vec<f64> = (0..=n).map(|i| grid.weight(i)).collect();
        let fast = q_shift <= PREFIX_EXP_LIMIT;

        Ok(KernelOp {
            grid,
            solver,
            q_nodes,
            exp_q_shifted,
            q_shift,
            edges,
            q_lam_edges,
            cnt_edges,
            tail,
            weights,
            fast,
        })
    }

    pub fn solver(&self) -> &FlowSolver {
        &self.solver
    }

    /// Analytic probability that mass at source `y_j` lands inside the
    /// domain under one application.
    pub fn landing_probability(&self, j: usize) -> f64 {
        1.0 - self.tail[j]
    }

    fn apply_values(&self, f: &[f64]) -> (Vec<f64>, f64) {
        let n = self.grid.n;
        let muf: Vec<f64> = f.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        let escape: f64 = muf.iter().zip(&self.tail).map(|(a, b)| a * b).sum();

        let t_at = |k: usize| -> f64 {
            // sum over nodes below the cut of mu f e^{Q_j - Q(lambda(edge))},
            // plus the untouched mass above the cut
            let cnt = self.cnt_edges[k];
            let mut inside = 0.0;
            for j in 0..cnt {
                inside += muf[j] * (self.q_nodes[j] - self.q_lam_edges[k]).exp();
            }
            let above: f64 = muf[cnt..].iter().sum();
            inside + above
        };

        let t: Vec<f64> = if self.fast {
            let mut w_pre = Vec::with_capacity(n + 2);
            let mut v_pre = Vec::with_capacity(n + 2);
            let mut ws = 0.0;
            let mut vs = 0.0;
            w_pre.push(0.0);
            v_pre.push(0.0);
            for j in 0..=n {
                ws += muf[j] * self.exp_q_shifted[j];
                vs += muf[j];
                w_pre.push(ws);
                v_pre.push(vs);
            }
            let m_total = vs;
            self.cnt_edges
                .iter()
                .zip(&self.q_lam_edges)
                .map(|(&cnt, &ql)| (self.q_shift - ql).exp() * w_pre[cnt] + (m_total - v_pre[cnt]))
                .collect()
        } else {
            (0..=n + 1).map(t_at).collect()
        };

        let mut out = vec![0.0; n + 1];
        for i in 0..=n {
            let cell = (t[i] - t[i + 1]).max(0.0);
            out[i] = cell / self.weights[i];
        }
        (out, escape)
    }

    /// One application of `P` with escaped-mass accounting.
    pub fn apply(&self, f: &GridDensity) -> GridDensity {
        let (values, escape) = self.apply_values(&f.f.values);
        GridDensity {
            f: GridFn {
                grid: self.grid.clone(),
                values,
            },
            escaped_mass: f.escaped_mass + escape,
        }
    }

    /// Kernel density `q(m, y)` evaluated pointwise.
    pub fn kernel_value(&self, m: f64, y: f64) -> Result<f64, OperatorError> {
        let lam = self.solver.lambda(m)?;
        if y > lam || y < 0.0 {
            return Ok(0.0);
        }
        let lp = self.solver.lambda_prime(m)?;
        let qp = rate_ratio_right(&self.solver, lam);
        let qy = self.solver.hazard_q(y);
        let ql = self.solver.hazard_q(lam);
        Ok(lp * qp * (qy - ql).exp())
    }

    /// Probability that the daughter of a mother starting the resting phase
    /// at maturity `y` has initial maturity `<= m`.
    pub fn transition_cdf(&self, y: f64, m: f64) -> f64 {
        if m < 0.0 {
            return 0.0;
        }
        let lam = match self.solver.lambda(m.min(self.solver.lambda_domain_end())) {
            Ok(l) => l,
            Err(_) => return 0.0,
        };
        let qy = self.solver.hazard_q(y);
        let ql = self.solver.hazard_q(lam);
        (1.0 - (qy - ql).exp()).max(0.0)
    }

    /// Pointwise application at the grid nodes: trapezoid in the source
    /// variable with the support cut split exactly at `lambda(m)`. This is
    /// the independent row-accurate route; it does not do mass accounting.
    pub fn apply_pointwise(&self, f: &GridFn) -> Result<GridFn, OperatorError> {
        let n = self.grid.n;
        let dm = self.grid.dm();
        // prefix trapezoid sums of e^{Q - q_shift} f at nodes
        let integrand: Vec<f64> = (0..=n)
            .map(|j| self.exp_q_shifted[j] * f.values[j])
            .collect();
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        for j in 1..=n {
            prefix.push(prefix[j - 1] + 0.5 * dm * (integrand[j - 1] + integrand[j]));
        }
        let mut out = vec![0.0; n + 1];
        for i in 0..=n {
            let m = self.grid.node(i);
            let lam = self.solver.lambda(m)?;
            let lp = self.solver.lambda_prime(m)?;
            let qp = rate_ratio_right(&self.solver, lam);
            let ql = self.solver.hazard_q(lam);
            let s_shifted = if lam >= self.grid.m_max {
                prefix[n]
            } else {
                let k = ((lam / dm).floor() as usize).min(n - 1);
                let theta = lam / dm - k as f64;
                let f_at = f.values[k] * (1.0 - theta) + f.values[k + 1] * theta;
                let g_at = (self.solver.hazard_q(lam) - self.q_shift).exp() * f_at;
                prefix[k] + 0.5 * theta * dm * (integrand[k] + g_at)
            };
            out[i] = lp * qp * (self.q_shift - ql).exp() * s_shifted;
        }
        Ok(GridFn {
            grid: self.grid.clone(),
            values: out,
        })
    }

    /// Independent column-mass oracle: integrates the pointwise kernel over
    /// targets with adaptive quadrature and compares with the analytic
    /// landing probability. Returns `(numeric, analytic)`.
    pub fn column_mass_oracle(&self, j: usize) -> Result<(f64, f64), OperatorError> {
        let y = self.grid.node(j);
        let spec = self.solver.spec();
        let m_lo = if y <= spec.m_p {
            0.0
        } else {
            // support starts where lambda(m) = y
            self.solver.psi(y).max(0.0)
        };
        let cuts: Vec<f64> = (1..8).map(|k| m_lo + (self.grid.m_max - m_lo) * k as f64 / 8.0).collect();
        let numeric = adaptive_simpson_split(
            |m| self.kernel_value(m, y).unwrap_or(0.0),
            m_lo,
            self.grid.m_max,
            &cuts,
            1e-10,
        );
        Ok((numeric, self.landing_probability(j)))
    }

    /// Materializes the dense kernel matrix (tests and inspection).
    pub fn materialize(&self) -> KernelMatrix {
        let n = self.grid.n;
        let mut entries = vec![0.0; (n + 1) * (n + 1)];
        for i in 0..=n {
            let (qa, qb) = (self.q_lam_edges[i], self.q_lam_edges[i + 1]);
            for j in 0..=n {
                let q = self.q_nodes[j];
                let ca = (q.min(qa) - qa).exp();
                let cb = (q.min(qb) - qb).exp();
                let cell = (ca - cb).max(0.0);
                entries[i * (n + 1) + j] = self.weights[j] * cell / self.weights[i];
            }
        }
        KernelMatrix {
            grid: self.grid.clone(),
            entries,
            tail: self.tail.clone(),
        }
    }
}

/// Dense kernel matrix `K[i][j] ~ q(m_i, y_j)` with quadrature weights
/// folded in: `(Pf)(m_i) = sum_j K[i][j] f(y_j)`.
pub struct KernelMatrix {
    pub grid: Grid,
    entries: Vec<f64>,
    tail: Vec<f64>,
}

impl KernelMatrix {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * (self.grid.n + 1) + j]
    }

    pub fn apply(&self, f: &GridFn) -> GridFn {
        let n = self.grid.n;
        let values = (0..=n)
            .map(|i| {
                let row = &self.entries[i * (n + 1)..(i + 1) * (n + 1)];
                row.iter().zip(&f.values).map(|(k, v)| k * v).sum()
            })
            .collect();
        GridFn {
            grid: self.grid.clone(),
            values,
        }
    }

    /// Discrete landing probability of source column `j` (row-weighted
    /// column sum over the target weights).
    pub fn column_landing(&self, j: usize) -> f64 {
        let n = self.grid.n;
        let mut s = 0.0;
        for i in 0..=n {
            s += self.grid.weight(i) * self.entry(i, j);
        }
        s / self.grid.weight(j)
    }

    pub fn escape_factor(&self, j: usize) -> f64 {
        self.tail[j]
    }
}

/// Stopping rules for power iteration.
#[derive(Debug, Clone)]
pub struct PowerIterateOpts {
    pub n_max: usize,
    pub tol: f64,
    /// In-domain mass below which the iteration is declared numerically
    /// sweeping (with monotone decline).
    pub drain_threshold: f64,
    /// In-domain mass below which convergence is no longer accepted.
    pub mass_floor: f64,
}

impl Default for PowerIterateOpts {
    fn default() -> Self {
        PowerIterateOpts {
            n_max: 100_000,
            tol: 1e-9,
            drain_threshold: 0.01,
            mass_floor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IterationOutcome {
    /// Successive differences fell below tolerance with most mass inside.
    Converged,
    /// In-domain mass drained below the threshold with monotone decline.
    MassDrained,
    /// Budget exhausted without either signal.
    MaxIterations,
}

/// Power-iteration result: the fixed point when one was reached, plus the
/// full difference/mass history for diagnostics.
pub struct PowerIterateResult {
    pub fixed_point: Option<GridDensity>,
    pub outcome: IterationOutcome,
    pub iterations: usize,
    /// `(l1 difference, in-domain mass)` per iteration.
    pub history: Vec<(f64, f64)>,
}

/// Iterates `P` from `f0` until the L1 difference of successive iterates
/// falls below tolerance, the in-domain mass drains, or the budget ends.
/// The returned fixed point is renormalized to unit in-domain mass.
pub fn power_iterate(op: &KernelOp, f0: &GridDensity, opts: &PowerIterateOpts) -> PowerIterateResult {
    let mut f = f0.clone();
    let mut history = Vec::new();
    for it in 0..opts.n_max {
        let next = op.apply(&f);
        let diff = next.f.l1_distance(&f.f).expect("same grid");
        let mass = next.f.integral();
        history.push((diff, mass));
        f = next;
        if diff < opts.tol && mass > opts.mass_floor {
            let mut fixed = f.clone();
            for v in &mut fixed.f.values {
                *v /= mass;
            }
            return PowerIterateResult {
                fixed_point: Some(fixed),
                outcome: IterationOutcome::Converged,
                iterations: it + 1,
                history,
            };
        }
        if mass < opts.drain_threshold {
            let window = history.len().min(100);
            let tailwin = &history[history.len() - window..];
            let monotone = tailwin.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-15);
            if monotone {
                return PowerIterateResult {
                    fixed_point: None,
                    outcome: IterationOutcome::MassDrained,
                    iterations: it + 1,
                    history,
                };
            }
        }
    }
    let iterations = history.len();
    PowerIterateResult {
        fixed_point: None,
        outcome: IterationOutcome::MaxIterations,
        iterations,
        history,
    }
}

/// Hazard gap `alpha(m) = Q(lambda(m)) - Q(m)` on `points` maturities.
pub fn alpha_profile(solver: &FlowSolver, points: usize) -> Result<GridFn, OperatorError> {
    let grid = Grid::new(points, solver.spec().m_max);
    let mut values = Vec::with_capacity(points + 1);
    for m in grid.nodes() {
        let lam = solver.lambda(m)?;
        values.push(solver.hazard_q(lam) - solver.hazard_q(m));
    }
    Ok(GridFn { grid, values })
}

/// Verdict for the generational operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Sweeping,
    Inconclusive,
}

/// Options for the alpha-profile classifier.
#[derive(Debug, Clone)]
pub struct DiscreteOpts {
    /// Open-condition margin around the critical value 1.
    pub margin: f64,
    /// Tail starts at this fraction of mMax.
    pub tail_fraction: f64,
    pub grid_points: usize,
}

impl Default for DiscreteOpts {
    fn default() -> Self {
        DiscreteOpts {
            margin: 0.01,
            tail_fraction: 0.5,
            grid_points: 1000,
        }
    }
}

/// Evidence and verdict from the hazard-gap profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteClassification {
    pub verdict: Verdict,
    /// Minimum of alpha over the tail grid (lower bound proxy for liminf).
    pub alpha_tail_min: f64,
    pub alpha_tail_max: f64,
    /// Minimum of alpha over the whole grid.
    pub alpha_inf: f64,
    /// Grid infimum is finite, so the operator is completely mixing.
    pub completely_mixing: bool,
    pub margin: f64,
    pub tail_start: f64,
}

/// Classifies the operator by the tail behaviour of `alpha`:
/// stable when the tail minimum clears `1 + margin`, sweeping when the
/// whole tail sits at or below 1, inconclusive inside the margin band.
pub fn classify_discrete(
    solver: &FlowSolver,
    opts: &DiscreteOpts,
) -> Result<DiscreteClassification, OperatorError> {
    let prof = alpha_profile(solver, opts.grid_points)?;
    let m_max = solver.spec().m_max;
    let tail_start = opts.tail_fraction * m_max;
    let mut tail_min = f64::INFINITY;
    let mut tail_max = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    for (i, &a) in prof.values.iter().enumerate() {
        let m = prof.grid.node(i);
        inf = inf.min(a);
        if m >= tail_start {
            tail_min = tail_min.min(a);
            tail_max = tail_max.max(a);
        }
    }
    let verdict = if tail_min > 1.0 + opts.margin {
        Verdict::Stable
    } else if tail_max <= 1.0 {
        Verdict::Sweeping
    } else {
        Verdict::Inconclusive
    };
    Ok(DiscreteClassification {
        verdict,
        alpha_tail_min: tail_min,
        alpha_tail_max: tail_max,
        alpha_inf: inf,
        completely_mixing: inf.is_finite(),
        margin: opts.margin,
        tail_start,
    })
}

/// Result of the conjugacy cross-check `P U = U P-tilde`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugateReport {
    /// `||P U f - U P-tilde f||_1` on the evaluation grid.
    pub l1_discrepancy: f64,
    /// `|int U f - int f|`.
    pub u_mass_error: f64,
    /// Maximum column mass of the conjugate operator over sampled sources.
    pub conjugate_column_mass_max: f64,
}

/// Checks the conjugacy between `P` and the operator transported by
/// `U f(m) = lambda'(m) f(lambda(m))`, integrating both routes with
/// adaptive quadrature on the interpolated density.
///
/// `f` must be supported in `[mP, psi(mMax)]`.
pub fn conjugate_check(
    solver: &FlowSolver,
    f: &GridFn,
    eval_points: usize,
) -> Result<ConjugateReport, OperatorError> {
    let spec = solver.spec();
    let m_p = spec.m_p;
    let psi_max = solver.psi(spec.m_max);
    for (i, &v) in f.values.iter().enumerate() {
        let m = f.grid.node(i);
        if v != 0.0 && (m < m_p - 1e-12 || m > psi_max + 1e-12) {
            return Err(OperatorError::Support {
                lo: m_p,
                hi: psi_max,
            });
        }
    }
    let quad_tol = 1e-11;
    let knots: Vec<f64> = (0..=16).map(|k| m_p + (psi_max - m_p) * k as f64 / 16.0).collect();

    // U f and P U f
    let uf = |y: f64| -> f64 {
        match (solver.lambda(y), solver.lambda_prime(y)) {
            (Ok(ly), Ok(lp)) => lp * f.eval(ly),
            _ => 0.0,
        }
    };
    let pu = |m: f64| -> f64 {
        let lam = solver.lambda(m).unwrap_or(f64::NAN);
        if !lam.is_finite() {
            return 0.0;
        }
        let lp = solver.lambda_prime(m).unwrap_or(0.0);
        let qp = rate_ratio_right(solver, lam);
        let ql = solver.hazard_q(lam);
        lp * qp
            * adaptive_simpson_split(
                |y| (solver.hazard_q(y) - ql).exp() * uf(y),
                0.0,
                lam.min(solver.spec().m_max),
                &knots,
                quad_tol,
            )
    };

    // P-tilde f evaluated at z, with Q-tilde(x) = Q(psi(x))
    let ptilde = |z: f64| -> f64 {
        if z < m_p {
            return 0.0;
        }
        let lam_z = match solver.lambda(z.min(solver.lambda_domain_end())) {
            Ok(l) => l,
            Err(_) => return 0.0,
        };
        let lp_z = solver.lambda_prime(z).unwrap_or(0.0);
        let qt_lam = solver.hazard_q(solver.psi(lam_z));
        let psi_p = |x: f64| solver.psi_prime(x);
        let qtp_lam = {
            let px = solver.psi(lam_z);
            rate_ratio_right(solver, px) * psi_p(lam_z)
        };
        lp_z * qtp_lam
            * adaptive_simpson_split(
                |x| (solver.hazard_q(solver.psi(x)) - qt_lam).exp() * f.eval(x),
                m_p,
                lam_z.min(psi_max),
                &knots,
                quad_tol,
            )
    };
    let up = |m: f64| -> f64 {
        match (solver.lambda(m), solver.lambda_prime(m)) {
            (Ok(lm), Ok(lp)) => lp * ptilde(lm),
            _ => 0.0,
        }
    };

    // L1 of the mismatch over [0, mMax]
    let eval_grid = Grid::new(eval_points, spec.m_max);
    let mut l1 = 0.0;
    for i in 0..=eval_grid.n {
        let m = eval_grid.node(i);
        l1 += eval_grid.weight(i) * (pu(m) - up(m)).abs();
    }

    // mass preservation of U
    let int_f = adaptive_simpson_split(|x| f.eval(x), m_p, psi_max, &knots, quad_tol);
    let int_uf = adaptive_simpson_split(|y| uf(y), 0.0, spec.m_max, &knots, quad_tol);
    let u_mass_error = (int_uf - int_f).abs();

    // conjugate column masses at sampled sources
    let mut col_max: f64 = 0.0;
    for k in 1..8 {
        let x = m_p + (psi_max - m_p) * k as f64 / 8.0;
        let qt_x = solver.hazard_q(solver.psi(x));
        let m_lo = solver.psi(x).max(0.0);
        let col = adaptive_simpson_split(
            |m| {
                let lam_m = match solver.lambda(m) {
                    Ok(l) => l,
                    Err(_) => return 0.0,
                };
                if lam_m < x {
                    return 0.0;
                }
                let lp = solver.lambda_prime(m).unwrap_or(0.0);
                let px = solver.psi(lam_m);
                let qtp = rate_ratio_right(solver, px) * solver.psi_prime(lam_m);
                lp * qtp * (qt_x - solver.hazard_q(solver.psi(lam_m))).exp()
            },
            m_lo,
            spec.m_max,
            &knots,
            1e-9,
        );
        col_max = col_max.max(col);
    }

    Ok(ConjugateReport {
        l1_discrepancy: l1,
        u_mass_error,
        conjugate_column_mass_max: col_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_abs_diff_eq;

    fn unit_op(n: usize) -> KernelOp {
        let solver = Arc::new(FlowSolver::new(presets::unit_speed_model()));
        KernelOp::new(solver, Grid::new(n, 60.0)).unwrap()
    }

    #[test]
    fn kernel_value_from_origin_is_exponential() {
        let op = unit_op(256);
        for &m in &[0.5, 1.0, 3.0, 7.0] {
            assert_abs_diff_eq!(op.kernel_value(m, 0.0).unwrap(), (-m).exp(), epsilon = 1e-10);
        }
        // support cut: zero above lambda(m)
        assert_eq!(op.kernel_value(1.0, 3.5).unwrap(), 0.0);
        assert!(op.kernel_value(1.0, 2.9).unwrap() > 0.0);
    }

    #[test]
    fn remark_style_kernel_row() {
        // for the slow-tail construction Q(m) = m for m >= 3, lambda = m+2:
        // q(m, y) = e^{Q(y) - m - 2} for y <= m + 2, m >= 1
        let spec = presets::counterexample_provisional(60.0);
        let solver = Arc::new(FlowSolver::new(spec));
        let op = KernelOp::new(solver.clone(), Grid::new(256, 60.0)).unwrap();
        let m = 5.0;
        for &y in &[0.5, 3.0, 6.9] {
            let expect = (solver.hazard_q(y) - (m + 2.0)).exp();
            assert_abs_diff_eq!(op.kernel_value(m, y).unwrap(), expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn spike_image_matches_kernel_row() {
        let op = unit_op(2048);
        let spike = GridDensity::spike(op.grid.clone(), 0.0);
        let img = op.apply(&spike);
        let exact = GridFn::from_fn(op.grid.clone(), |m| (-m).exp());
        let err = img.f.l1_distance(&exact).unwrap();
        assert!(err < 2.0 / 2048.0, "spike L1 error {err}");
    }

    #[test]
    fn mass_bookkeeping_is_exact() {
        let op = unit_op(512);
        let mut f = GridDensity::uniform(op.grid.clone(), 10.0);
        for _ in 0..50 {
            f = op.apply(&f);
            assert_abs_diff_eq!(f.total_account(), 1.0, epsilon = 1e-8);
            assert!(f.f.values.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn escaped_mass_only_grows() {
        let op = unit_op(256);
        let mut f = GridDensity::uniform(op.grid.clone(), 50.0);
        let mut prev = 0.0;
        for _ in 0..20 {
            f = op.apply(&f);
            assert!(f.escaped_mass >= prev);
            prev = f.escaped_mass;
        }
    }

    #[test]
    fn matrix_agrees_with_operator() {
        let op = unit_op(128);
        let k = op.materialize();
        let f = GridDensity::uniform(op.grid.clone(), 20.0);
        let a = op.apply(&f);
        let b = k.apply(&f.f);
        assert!(a.f.l1_distance(&b).unwrap() < 1e-12);
        // entries nonnegative; column landing telescopes to the analytic value
        for j in (0..=128).step_by(16) {
            let landing = k.column_landing(j);
            assert!(landing <= 1.0 + 1e-8, "column {j} landing {landing}");
            assert_abs_diff_eq!(landing, 1.0 - k.escape_factor(j), epsilon = 1e-10);
        }
    }

    #[test]
    fn column_mass_oracle_matches_analytic() {
        let op = unit_op(512);
        for j in [0, 77, 256, 511] {
            let (numeric, analytic) = op.column_mass_oracle(j).unwrap();
            assert!(
                (numeric - analytic).abs() < 1e-6,
                "column {j}: {numeric} vs {analytic}"
            );
        }
    }

    #[test]
    fn fixed_point_residual_pointwise() {
        // beta e^{-beta m} is the exact fixed point; the pointwise route
        // reproduces it within 1e-4 at n = 2048
        let op = unit_op(2048);
        let beta = presets::beta_fixed_point();
        let fstar = GridFn::from_fn(op.grid.clone(), |m| beta * (-beta * m).exp());
        let pf = op.apply_pointwise(&fstar).unwrap();
        let res = pf.l1_distance(&fstar).unwrap();
        assert!(res < 1e-4, "pointwise residual {res}");
    }

    #[test]
    fn fixed_point_residual_conservative() {
        let op = unit_op(2048);
        let beta = presets::beta_fixed_point();
        let fstar = GridDensity::from_fn(op.grid.clone(), |m| beta * (-beta * m).exp()).unwrap();
        let pf = op.apply(&fstar);
        let res = pf.f.l1_distance(&fstar.f).unwrap();
        assert!(res < 2e-4, "conservative residual {res}");
    }

    #[test]
    fn power_iteration_converges_to_exponential_fixed_point() {
        let op = unit_op(2048);
        let f0 = GridDensity::uniform(op.grid.clone(), 10.0);
        let res = power_iterate(&op, &f0, &PowerIterateOpts::default());
        assert_eq!(res.outcome, IterationOutcome::Converged);
        let fixed = res.fixed_point.unwrap();
        let beta = presets::beta_fixed_point();
        let exact = GridFn::from_fn(op.grid.clone(), |m| beta * (-beta * m).exp());
        let dist = fixed.f.l1_distance(&exact).unwrap();
        assert!(dist < 1e-3, "distance to analytic fixed point {dist}");
        // restarting from the fixed point converges immediately
        let again = power_iterate(&op, &fixed, &PowerIterateOpts::default());
        assert!(again.iterations <= 2, "iterations {}", again.iterations);
    }

    #[test]
    fn shallow_hazard_drains_mass() {
        let solver = Arc::new(FlowSolver::new(presets::shallow_hazard_model()));
        let op = KernelOp::new(solver, Grid::new(1024, 60.0)).unwrap();
        let f0 = GridDensity::uniform(op.grid.clone(), 10.0);
        let res = power_iterate(&op, &f0, &PowerIterateOpts::default());
        assert_eq!(res.outcome, IterationOutcome::MassDrained);
        assert!(res.fixed_point.is_none());
        // in-domain mass declined monotonically
        for w in res.history.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12);
        }
    }

    #[test]
    fn alpha_profile_of_unit_speed_model() {
        let solver = FlowSolver::new(presets::unit_speed_model());
        let prof = alpha_profile(&solver, 600).unwrap();
        // alpha(m) = m on [0, 2), = 2 beyond
        assert_abs_diff_eq!(prof.eval(0.0), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(prof.eval(1.0), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(prof.eval(10.0), 2.0, epsilon = 1e-8);
        let cls = classify_discrete(&solver, &DiscreteOpts::default()).unwrap();
        assert_eq!(cls.verdict, Verdict::Stable);
        assert!(cls.completely_mixing);
        assert_abs_diff_eq!(cls.alpha_tail_min, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn shallow_hazard_classified_sweeping() {
        let solver = FlowSolver::new(presets::shallow_hazard_model());
        let cls = classify_discrete(&solver, &DiscreteOpts::default()).unwrap();
        assert_eq!(cls.verdict, Verdict::Sweeping);
        assert_abs_diff_eq!(cls.alpha_tail_max, 0.5, epsilon = 1e-8);
    }

    #[test]
    fn near_critical_alpha_is_inconclusive() {
        // Q = (m-2)/2 gives alpha = 1 exactly on the tail: refuse to call it
        let mut spec = presets::unit_speed_model();
        spec.phi = crate::scalar::ScalarFn::step(2.0, 0.5001, 1e6);
        spec.m4_threshold = Some(10.0);
        let solver = FlowSolver::new(spec);
        let cls = classify_discrete(&solver, &DiscreteOpts::default()).unwrap();
        assert_eq!(cls.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn conjugacy_holds_for_unit_speed_model() {
        let solver = FlowSolver::new(presets::unit_speed_model());
        let grid = Grid::new(2048, 60.0);
        // uniform density on [2, 6]
        let f = GridFn::from_fn(grid, |m| if (2.0..=6.0).contains(&m) { 0.25 } else { 0.0 });
        let rep = conjugate_check(&solver, &f, 256).unwrap();
        assert!(rep.l1_discrepancy < 5e-6, "discrepancy {}", rep.l1_discrepancy);
        assert!(rep.u_mass_error < 1e-8, "U mass error {}", rep.u_mass_error);
        assert!(rep.conjugate_column_mass_max <= 1.0 + 1e-8);
    }

    #[test]
    fn conjugate_check_rejects_bad_support() {
        let solver = FlowSolver::new(presets::unit_speed_model());
        let grid = Grid::new(256, 60.0);
        let f = GridFn::from_fn(grid, |m| if m <= 1.0 { 1.0 } else { 0.0 });
        assert!(matches!(
            conjugate_check(&solver, &f, 64),
            Err(OperatorError::Support { .. })
        ));
    }

    #[test]
    fn grid_refinement_settles_first_order() {
        // halving the step changes the image by less than 4x the previous change
        let solver = Arc::new(FlowSolver::new(presets::unit_speed_model()));
        let probe = |n: usize| -> GridFn {
            let op = KernelOp::new(solver.clone(), Grid::new(n, 60.0)).unwrap();
            let f = GridDensity::from_fn(op.grid.clone(), |m| if m <= 10.0 { 0.1 } else { 0.0 })
                .unwrap();
            op.apply(&f).f
        };
        let coarse = probe(512);
        let mid = probe(1024);
        let fine = probe(2048);
        // compare on the coarse nodes
        let dist = |a: &GridFn, b: &GridFn| -> f64 {
            let g = &a.grid;
            (0..=g.n)
                .map(|i| g.weight(i) * (a.values[i] - b.eval(g.node(i))).abs())
                .sum()
        };
        let d1 = dist(&coarse, &mid);
        let d2 = dist(&mid, &fine);
        assert!(d2 < 4.0 * d1, "refinement did not settle: {d1} then {d2}");
    }
}

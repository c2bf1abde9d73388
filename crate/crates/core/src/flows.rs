//! Deterministic backbone: maturation flows for both phases, the cumulative
//! hazard `Q` and its inverse, the daughter map `psi` and its inverse
//! `lambda`, plus the resting-phase time integral.
//!
//! Velocities from piecewise-linear families (constant, linear, piecewise
//! linear, table) integrate in closed form by hopping knots; other families
//! use an adaptive Dormand-Prince integrator. `Q` is tabulated at the knot
//! panels once and refined locally per evaluation, with an exact path when
//! `phi/g1` is piecewise constant.

use crate::model::ModelSpec;
use crate::numeric::{adaptive_simpson, brent, integrate_ode, OdeOutcome};
use crate::scalar::ScalarFn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cell-cycle phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Growth phase with maturity-dependent exit rate.
    Resting,
    /// Fixed-duration phase ending in division.
    Proliferating,
}

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("backward flow in phase {phase:?} from m = {m0} exits the domain before time {t}")]
    DomainExit { phase: Phase, t: f64, m0: f64 },
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("velocity for phase {phase:?} is not positive at m = {m}")]
    NonPositiveVelocity { phase: Phase, m: f64 },
}

type Result<T> = std::result::Result<T, FlowError>;

/// A velocity reduced to linear pieces, or marked general.
enum VelocityKind {
    /// Pieces `(x_lo, a, b)`: velocity `a*m + b` on `[x_lo, next x_lo)`.
    PiecewiseLinear(Vec<(f64, f64, f64)>),
    General,
}

fn velocity_kind(f: &ScalarFn) -> VelocityKind {
    match f {
        ScalarFn::Constant { c } => VelocityKind::PiecewiseLinear(vec![(0.0, 0.0, *c)]),
        ScalarFn::Linear { a, b } => VelocityKind::PiecewiseLinear(vec![(0.0, *a, *b)]),
        ScalarFn::PiecewiseLinear { knots } => {
            let mut pieces = Vec::new();
            if knots[0].0 > 0.0 {
                // clamped constant before the first knot
                pieces.push((0.0, 0.0, knots[0].1));
            }
            for w in knots.windows(2) {
                let (x0, y0) = w[0];
                let (x1, y1) = w[1];
                if x1 == x0 {
                    continue;
                }
                let a = (y1 - y0) / (x1 - x0);
                pieces.push((x0, a, y0 - a * x0));
            }
            let last = knots[knots.len() - 1];
            pieces.push((last.0, 0.0, last.1));
            VelocityKind::PiecewiseLinear(pieces)
        }
        ScalarFn::ShiftedTable { x0, dx, values } => {
            let mut pieces = vec![(0.0, 0.0, values[0])];
            for i in 0..values.len() - 1 {
                let xa = x0 + dx * i as f64;
                let a = (values[i + 1] - values[i]) / dx;
                pieces.push((xa, a, values[i] - a * xa));
            }
            let xlast = x0 + dx * (values.len() - 1) as f64;
            pieces.push((xlast, 0.0, values[values.len() - 1]));
            VelocityKind::PiecewiseLinear(pieces)
        }
        _ => VelocityKind::General,
    }
}

/// Solver bound to one model, immutable and shareable across threads.
pub struct FlowSolver {
    spec: ModelSpec,
    pub ode_tol: f64,
    pub quad_tol: f64,
    pub root_tol: f64,
    v1: VelocityKind,
    v2: VelocityKind,
    /// Sorted panel edges covering `[0, ext_end]`.
    q_edges: Vec<f64>,
    /// Cumulative hazard at each panel edge.
    q_cum: Vec<f64>,
    /// Ratio value per panel (piecewise-constant fast path only).
    q_ratio: Option<Vec<f64>>,
    /// Upper end of the extended evaluation domain for maturities.
    ext_end: f64,
    /// `psi(ext_end)`: upper end of `lambda`'s domain.
    psi_ext: f64,
}

impl FlowSolver {
    pub fn new(spec: ModelSpec) -> Self {
        Self::with_tolerances(spec, 1e-10, 1e-10, 1e-12)
    }

    pub fn with_tolerances(spec: ModelSpec, ode_tol: f64, quad_tol: f64, root_tol: f64) -> Self {
        assert!(ode_tol > 0.0 && quad_tol > 0.0 && root_tol > 0.0);
        let v1 = velocity_kind(&spec.g1);
        let v2 = velocity_kind(&spec.g2);
        let mut solver = FlowSolver {
            spec,
            ode_tol,
            quad_tol,
            root_tol,
            v1,
            v2,
            q_edges: vec![],
            q_cum: vec![],
            q_ratio: None,
            ext_end: 0.0,
            psi_ext: 0.0,
        };
        solver.extend_domain();
        solver.build_q_table();
        solver
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Upper end of the extended maturity domain `Q` covers.
    pub fn ext_end(&self) -> f64 {
        self.ext_end
    }

    /// Upper end of `lambda`'s domain.
    pub fn lambda_domain_end(&self) -> f64 {
        self.psi_ext
    }

    // Find ext_end with psi(ext_end) >= 2*mMax so that lambda is available
    // on the doubled domain used by divergence tests. Caps when the
    // division map saturates (clamped tables).
    fn extend_domain(&mut self) {
        let target = 2.0 * self.spec.m_max;
        let mut x = target;
        for _ in 0..40 {
            match self.psi_raw(x) {
                Ok(p) if p >= target => break,
                Ok(_) => x *= 1.25,
                Err(_) => break,
            }
        }
        self.ext_end = x.max(target) * 1.001 + 1.0;
        self.psi_ext = self.psi_raw(self.ext_end).unwrap_or(self.spec.m_max);
    }

    fn build_q_table(&mut self) {
        let spec = &self.spec;
        let mut edges: Vec<f64> = vec![0.0, spec.m_p.min(self.ext_end), self.ext_end];
        for f in [&spec.phi, &spec.g1] {
            for b in f.breakpoints() {
                if b > 0.0 && b < self.ext_end {
                    edges.push(b);
                }
            }
        }
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        // refine wide panels so local evaluation stays cheap
        let mut refined = Vec::with_capacity(edges.len() * 2);
        for w in edges.windows(2) {
            refined.push(w[0]);
            let width = w[1] - w[0];
            if width > 1.0 {
                let k = width.ceil() as usize;
                for j in 1..k {
                    refined.push(w[0] + width * j as f64 / k as f64);
                }
            }
        }
        refined.push(*edges.last().unwrap());
        let edges = refined;

        let pc = spec.phi.is_piecewise_constant() && spec.g1.is_piecewise_constant();
        let mut cum = Vec::with_capacity(edges.len());
        let mut ratios = Vec::with_capacity(edges.len().saturating_sub(1));
        cum.push(0.0);
        let mut acc = 0.0;
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            if pc {
                let mid = 0.5 * (a + b);
                let r = spec.phi.eval(mid) / spec.g1.eval(mid);
                ratios.push(r);
                acc += r * (b - a);
            } else {
                acc += adaptive_simpson(
                    |m| spec.phi.eval(m) / spec.g1.eval(m),
                    a,
                    b,
                    self.quad_tol * ((b - a) / self.ext_end).max(1e-3),
                );
            }
            cum.push(acc);
        }
        self.q_edges = edges;
        self.q_cum = cum;
        self.q_ratio = if pc { Some(ratios) } else { None };
    }

    fn q_panel(&self, m: f64) -> usize {
        let n = self.q_edges.len();
        self.q_edges.partition_point(|&e| e <= m).clamp(1, n - 1) - 1
    }

    /// Cumulative hazard `Q(m) = int_0^m phi/g1`, defined on `[0, ext_end]`
    /// (clamped above).
    pub fn hazard_q(&self, m: f64) -> f64 {
        if m <= 0.0 {
            return 0.0;
        }
        let m = m.min(self.ext_end);
        let k = self.q_panel(m);
        let a = self.q_edges[k];
        if let Some(r) = &self.q_ratio {
            return self.q_cum[k] + r[k] * (m - a);
        }
        self.q_cum[k]
            + adaptive_simpson(
                |x| self.spec.phi.eval(x) / self.spec.g1.eval(x),
                a,
                m,
                self.quad_tol * 1e-2,
            )
    }

    /// Least maturity with `Q(m) = q`; errors when `q > Q(mMax)` (the
    /// sample escapes the numerical domain).
    pub fn hazard_q_inverse(&self, q: f64) -> Result<f64> {
        if q < 0.0 {
            return Err(FlowError::Range {
                what: "hazard level",
                value: q,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if q == 0.0 {
            return Ok(0.0);
        }
        let q_max = self.hazard_q(self.spec.m_max);
        if q > q_max {
            return Err(FlowError::Range {
                what: "hazard level",
                value: q,
                lo: 0.0,
                hi: q_max,
            });
        }
        // first panel whose upper cumulative reaches q
        let k = self
            .q_cum
            .partition_point(|&c| c < q)
            .clamp(1, self.q_edges.len() - 1)
            - 1;
        let (a, b) = (self.q_edges[k], self.q_edges[k + 1]);
        if let Some(r) = &self.q_ratio {
            if r[k] > 0.0 {
                return Ok(a + (q - self.q_cum[k]) / r[k]);
            }
            return Ok(b);
        }
        let f = |m: f64| self.hazard_q(m) - q;
        Ok(brent(f, a, b, self.root_tol).unwrap_or(b))
    }

    fn velocity(&self, phase: Phase) -> (&VelocityKind, &ScalarFn) {
        match phase {
            Phase::Resting => (&self.v1, &self.spec.g1),
            Phase::Proliferating => (&self.v2, &self.spec.g2),
        }
    }

    /// Flow `pi_i(t, m0)` for signed `t`; negative times integrate the
    /// reversed field and exit with [`FlowError::DomainExit`] at `m = 0`.
    pub fn flow(&self, phase: Phase, t: f64, m0: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(m0);
        }
        let (kind, _) = self.velocity(phase);
        match kind {
            VelocityKind::PiecewiseLinear(pieces) => {
                flow_piecewise(pieces, t, m0).ok_or(FlowError::DomainExit { phase, t, m0 })
            }
            VelocityKind::General => self.flow_numeric(phase, t, m0),
        }
    }

    /// Always-numeric flow; the closed-form paths are checked against
    /// this independent route.
    pub fn flow_numeric(&self, phase: Phase, t: f64, m0: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(m0);
        }
        let (_, g) = self.velocity(phase);
        let sign = t.signum();
        match integrate_ode(
            |m| sign * g.eval(m.max(0.0)),
            m0,
            t.abs(),
            self.ode_tol,
            |m| m < 0.0 || !m.is_finite(),
        ) {
            OdeOutcome::Done(m) => Ok(m),
            OdeOutcome::Stopped(_) => Err(FlowError::DomainExit { phase, t, m0 }),
        }
    }

    /// Forward proliferating-phase flow (forward flows with positive
    /// velocity cannot exit the domain).
    pub fn flow_forward_p(&self, t: f64, m0: f64) -> f64 {
        self.flow(Phase::Proliferating, t, m0).unwrap_or(m0)
    }

    /// Daughter map `psi(m) = h(pi_2(tau, m))` for `m >= mP`.
    pub fn psi(&self, m: f64) -> f64 {
        self.psi_raw(m).unwrap_or(f64::NAN)
    }

    fn psi_raw(&self, m: f64) -> Result<f64> {
        let mt = self.flow(Phase::Proliferating, self.spec.tau, m)?;
        Ok(self.spec.h.eval(mt))
    }

    /// `psi'(m) = h'(pi_2(tau, m)) g2(pi_2(tau, m)) / g2(m)`.
    pub fn psi_prime(&self, m: f64) -> f64 {
        let mt = self.flow_forward_p(self.spec.tau, m);
        self.spec.h.deriv(mt) * self.spec.g2.eval(mt) / self.spec.g2.eval(m)
    }

    /// Inverse of the daughter map: maturity a mother must have at phase
    /// entry for her daughter to start at `m`. `lambda(0) = mP`.
    pub fn lambda(&self, m: f64) -> Result<f64> {
        if m < 0.0 || m > self.psi_ext {
            return Err(FlowError::Range {
                what: "lambda argument",
                value: m,
                lo: 0.0,
                hi: self.psi_ext,
            });
        }
        if m == 0.0 {
            return Ok(self.spec.m_p);
        }
        let f = |x: f64| self.psi(x) - m;
        brent(f, self.spec.m_p, self.ext_end, self.root_tol).ok_or(FlowError::Range {
            what: "lambda argument",
            value: m,
            lo: 0.0,
            hi: self.psi_ext,
        })
    }

    /// `lambda'(m) = g2(lambda(m)) / (g2(h^-1(m)) h'(h^-1(m)))`, computed
    /// as `1 / psi'(lambda(m))`.
    pub fn lambda_prime(&self, m: f64) -> Result<f64> {
        let l = self.lambda(m)?;
        Ok(1.0 / self.psi_prime(l))
    }

    /// Travel time of the resting flow from `m0` up to `m1`:
    /// `int_{m0}^{m1} dm / g1(m)`.
    pub fn resting_travel_time(&self, m0: f64, m1: f64) -> f64 {
        if m1 <= m0 {
            return 0.0;
        }
        match &self.v1 {
            VelocityKind::PiecewiseLinear(pieces) => {
                travel_time_piecewise(pieces, m0, m1).unwrap_or(f64::INFINITY)
            }
            VelocityKind::General => {
                let cuts = self.spec.g1.breakpoints();
                crate::numeric::adaptive_simpson_split(
                    |m| 1.0 / self.spec.g1.eval(m),
                    m0,
                    m1,
                    &cuts,
                    self.quad_tol,
                )
            }
        }
    }
}

/// Advance `m' = a m + b` from `m` by time `dt` (signed), in closed form.
fn advance_linear(a: f64, b: f64, m: f64, dt: f64) -> f64 {
    if a == 0.0 {
        m + b * dt
    } else {
        (m + b / a) * (a * dt).exp() - b / a
    }
}

/// Closed-form flow for piecewise-linear velocities: hop knots, solving
/// `m' = a m + b` exactly on each piece. Returns `None` when a backward
/// flow exits at `m = 0` or the velocity is not positive along the path.
fn flow_piecewise(pieces: &[(f64, f64, f64)], t: f64, m0: f64) -> Option<f64> {
    let forward = t > 0.0;
    let mut m = m0;
    let mut rem = t;
    if m < 0.0 {
        return None;
    }
    for _ in 0..pieces.len() + 8 {
        let mut idx = pieces
            .partition_point(|&(x, _, _)| x <= m)
            .saturating_sub(1);
        if !forward && idx > 0 && m == pieces[idx].0 {
            idx -= 1; // on a knot moving down: the piece below is active
        }
        let (x_lo, a, b) = pieces[idx];
        let v = a * m + b;
        if v <= 0.0 {
            return None;
        }
        // travel time (same sign as rem) to the knot in our direction
        let target = if forward {
            pieces.get(idx + 1).map(|&(x, _, _)| x)
        } else {
            Some(x_lo.max(0.0))
        };
        let t_hit = match target {
            Some(x) => {
                let vx = a * x + b;
                if vx <= 0.0 {
                    // equilibrium between here and the knot: asymptotic, never reached
                    if forward {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    }
                } else if a == 0.0 {
                    (x - m) / b
                } else {
                    (vx / v).ln() / a
                }
            }
            None => f64::INFINITY,
        };
        let finishes_inside = if forward { rem <= t_hit } else { rem >= t_hit };
        if finishes_inside {
            return Some(advance_linear(a, b, m, rem));
        }
        let x = target.unwrap();
        if !forward && x <= 0.0 {
            return None; // reaches m = 0 with time still to go
        }
        rem -= t_hit;
        m = x;
    }
    Some(m)
}

/// Exact travel time through a piecewise-linear velocity from `m0` up to `m1`.
fn travel_time_piecewise(pieces: &[(f64, f64, f64)], m0: f64, m1: f64) -> Option<f64> {
    let mut t = 0.0;
    let mut m = m0;
    while m < m1 {
        let idx = pieces
            .partition_point(|&(x, _, _)| x <= m)
            .saturating_sub(1);
        let (_, a, b) = pieces[idx];
        let upper = pieces
            .get(idx + 1)
            .map(|&(x, _, _)| x.min(m1))
            .unwrap_or(m1)
            .max(m * (1.0 + 1e-16) + 1e-300);
        let va = a * m + b;
        let vb = a * upper + b;
        if va <= 0.0 || vb <= 0.0 {
            return None;
        }
        t += if a == 0.0 {
            (upper - m) / b
        } else {
            (vb / va).ln() / a
        };
        m = upper;
    }
    Some(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_abs_diff_eq;

    fn unit_solver() -> FlowSolver {
        FlowSolver::new(presets::unit_speed_model())
    }

    #[test]
    fn constant_velocity_flow_is_translation() {
        let s = unit_solver();
        for &(t, m0) in &[(0.5, 1.0), (-0.5, 1.0), (3.0, 0.0), (2.5, 4.0)] {
            assert_abs_diff_eq!(
                s.flow(Phase::Resting, t, m0).unwrap(),
                m0 + t,
                epsilon = 1e-12
            );
        }
        assert_eq!(s.flow(Phase::Proliferating, 0.0, 3.3).unwrap(), 3.3);
    }

    #[test]
    fn linear_velocity_flow_is_exponential() {
        let mut spec = presets::unit_speed_model();
        spec.g1 = ScalarFn::Linear { a: 1.0, b: 0.0 };
        let s = FlowSolver::new(spec);
        let closed = s.flow(Phase::Resting, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(closed, std::f64::consts::E, epsilon = 1e-12);
        let numeric = s.flow_numeric(Phase::Resting, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(closed, numeric, epsilon = 1e-9);
        let back = s.flow(Phase::Resting, -1.0, std::f64::consts::E).unwrap();
        assert_abs_diff_eq!(back, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn piecewise_velocity_flow_hops_knots() {
        let mut spec = presets::unit_speed_model();
        // velocity 1 below m=3, then 2
        spec.g1 = ScalarFn::PiecewiseLinear {
            knots: vec![(0.0, 1.0), (3.0, 1.0), (3.0, 2.0), (100.0, 2.0)],
        };
        let s = FlowSolver::new(spec);
        // from 2: one unit to reach 3, then speed 2 for another unit -> 5
        assert_abs_diff_eq!(s.flow(Phase::Resting, 2.0, 2.0).unwrap(), 5.0, epsilon = 1e-12);
        // backward retraces
        assert_abs_diff_eq!(s.flow(Phase::Resting, -2.0, 5.0).unwrap(), 2.0, epsilon = 1e-12);
        let numeric = s.flow_numeric(Phase::Resting, 2.0, 2.0).unwrap();
        assert_abs_diff_eq!(numeric, 5.0, epsilon = 1e-6);
    }

    #[test]
    fn general_velocity_matches_semigroup_property() {
        let mut spec = presets::unit_speed_model();
        spec.g1 = ScalarFn::PowerLaw { a: 0.3, p: 0.7, b: 0.2 };
        let s = FlowSolver::new(spec);
        let a = s.flow(Phase::Resting, 1.7, 0.9).unwrap();
        let b = s
            .flow(Phase::Resting, 0.9, s.flow(Phase::Resting, 0.8, 0.9).unwrap())
            .unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn backward_flow_exits_domain() {
        let s = unit_solver();
        assert!(matches!(
            s.flow(Phase::Resting, -2.0, 1.0),
            Err(FlowError::DomainExit { .. })
        ));
        // exactly reaching zero is fine
        assert_abs_diff_eq!(
            s.flow(Phase::Resting, -1.0, 1.0).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn hazard_of_step_rate_is_shifted_ramp() {
        let s = unit_solver();
        assert_eq!(s.hazard_q(1.0), 0.0);
        assert_eq!(s.hazard_q(2.0), 0.0);
        assert_abs_diff_eq!(s.hazard_q(5.0), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.hazard_q_inverse(3.0).unwrap(), 5.0, epsilon = 1e-12);
        for &q in &[0.1, 1.0, 7.7, 20.0] {
            let m = s.hazard_q_inverse(q).unwrap();
            assert_abs_diff_eq!(s.hazard_q(m), q, epsilon = 1e-10);
        }
        // least maturity attaining level zero
        assert_eq!(s.hazard_q_inverse(0.0).unwrap(), 0.0);
    }

    #[test]
    fn hazard_inverse_range_error_signals_escape() {
        let s = unit_solver();
        let q_max = s.hazard_q(s.spec().m_max);
        assert!(matches!(
            s.hazard_q_inverse(q_max + 1.0),
            Err(FlowError::Range { .. })
        ));
    }

    #[test]
    fn hazard_general_path_matches_reference() {
        let mut spec = presets::unit_speed_model();
        spec.phi = ScalarFn::HillRate {
            a: 2.0,
            p: 2.0,
            k: 1.0,
            shift: 2.0,
        };
        spec.m4_threshold = Some(10.0);
        let s = FlowSolver::new(spec.clone());
        for &m in &[2.5, 4.0, 17.3] {
            let reference = adaptive_simpson(|x| spec.phi.eval(x), 2.0, m, 1e-13);
            assert_abs_diff_eq!(s.hazard_q(m), reference, epsilon = 1e-9);
            let q = s.hazard_q(m);
            assert_abs_diff_eq!(s.hazard_q_inverse(q).unwrap(), m, epsilon = 1e-8);
        }
    }

    #[test]
    fn daughter_map_and_inverse() {
        let s = unit_solver();
        // psi(m) = m - 2 for the unit-speed model
        assert_abs_diff_eq!(s.psi(2.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.psi(4.0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.lambda(0.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.lambda(5.0).unwrap(), 7.0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.lambda_prime(5.0).unwrap(), 1.0, epsilon = 1e-9);
        let mut prev = s.psi(2.0);
        for i in 1..1000 {
            let m = 2.0 + 58.0 * i as f64 / 1000.0;
            let v = s.psi(m);
            assert!(v > prev, "psi not strictly increasing at {m}");
            prev = v;
        }
    }

    #[test]
    fn lambda_prime_matches_finite_difference() {
        let mut spec = presets::unit_speed_model();
        spec.g2 = ScalarFn::PowerLaw {
            a: 0.2,
            p: 0.8,
            b: 0.5,
        };
        let s = FlowSolver::new(spec);
        let h = 1e-5;
        for &m in &[0.5, 3.0, 11.0] {
            let fd = (s.lambda(m + h).unwrap() - s.lambda(m - h).unwrap()) / (2.0 * h);
            let an = s.lambda_prime(m).unwrap();
            assert!(
                (fd - an).abs() / an.abs() < 1e-6,
                "m={m}: fd={fd} analytic={an}"
            );
        }
    }

    #[test]
    fn lambda_out_of_range() {
        let s = unit_solver();
        let hi = s.lambda_domain_end();
        assert!(matches!(s.lambda(hi + 1.0), Err(FlowError::Range { .. })));
    }

    #[test]
    fn psi_lambda_inverse_pair() {
        let s = unit_solver();
        for i in 0..50 {
            let m = 0.1 + i as f64;
            if m > s.lambda_domain_end() {
                break;
            }
            let l = s.lambda(m).unwrap();
            assert_abs_diff_eq!(s.psi(l), m, epsilon = 1e-10);
        }
    }

    #[test]
    fn travel_time_closed_forms() {
        let s = unit_solver();
        assert_abs_diff_eq!(s.resting_travel_time(1.0, 4.0), 3.0, epsilon = 1e-12);
        let mut spec = presets::unit_speed_model();
        spec.g1 = ScalarFn::Linear { a: 1.0, b: 0.0 };
        let s = FlowSolver::new(spec);
        assert_abs_diff_eq!(
            s.resting_travel_time(1.0, std::f64::consts::E),
            1.0,
            epsilon = 1e-12
        );
    }
}

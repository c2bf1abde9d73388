//! Stationary objects of the continuous-time model, built from the
//! invariant density of the generational operator: the age-maturity phase
//! densities, the resting-maturity marginal, the mean resting time with
//! its divergence test, and the continuous-time classifier.

use crate::flows::{FlowSolver, Phase};
use crate::grid::{Grid, GridDensity, GridFn};
use crate::model::ModelSpec;
use crate::numeric::adaptive_simpson;
use crate::operator::{
    classify_discrete, power_iterate, DiscreteClassification, DiscreteOpts, IterationOutcome,
    KernelOp, OperatorError, PowerIterateOpts, Verdict,
};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StationaryError {
    #[error("power iteration found no invariant density ({0:?})")]
    NoFixedPoint(IterationOutcome),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Flow(#[from] crate::flows::FlowError),
}

/// Mean resting time, or the verdict that its truncated estimates keep
/// growing under domain doubling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum RestingTime {
    Finite { value: f64, ratio: f64 },
    Divergent { base: f64, doubled: f64, ratio: f64 },
}

impl RestingTime {
    pub fn is_finite(&self) -> bool {
        matches!(self, RestingTime::Finite { .. })
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            RestingTime::Finite { value, .. } => Some(*value),
            RestingTime::Divergent { .. } => None,
        }
    }
}

/// `int_0^M f(y) G(y) dy` where `G(y) = int_y^M e^{Q(y)-Q(x)} / g1(x) dx`
/// is the expected residual resting time of a cell at maturity `y`.
///
/// `G` is accumulated backwards over `panels` cells so every exponential
/// is a difference; the density enters through `f`.
pub fn resting_time_integral(
    solver: &FlowSolver,
    f: &dyn Fn(f64) -> f64,
    m_hi: f64,
    panels: usize,
) -> f64 {
    let spec = solver.spec();
    let dm = m_hi / panels as f64;
    let tol = 1e-12;
    // G at panel edges, from the top down
    let mut g_edges = vec![0.0; panels + 1];
    for i in (0..panels).rev() {
        let (a, b) = (i as f64 * dm, (i + 1) as f64 * dm);
        let qa = solver.hazard_q(a);
        let local = adaptive_simpson(
            |x| (qa - solver.hazard_q(x)).exp() / spec.g1.eval(x),
            a,
            b,
            tol,
        );
        g_edges[i] = local + (qa - solver.hazard_q(b)).exp() * g_edges[i + 1];
    }
    let mut total = 0.0;
    for i in 0..panels {
        let (a, b) = (i as f64 * dm, (i + 1) as f64 * dm);
        let qb = solver.hazard_q(b);
        let g_top = g_edges[i + 1];
        total += adaptive_simpson(
            |y| {
                let qy = solver.hazard_q(y);
                let g_local = adaptive_simpson(
                    |x| (qy - solver.hazard_q(x)).exp() / spec.g1.eval(x),
                    y,
                    b,
                    tol,
                );
                f(y) * (g_local + (qy - qb).exp() * g_top)
            },
            a,
            b,
            1e-10,
        );
    }
    total
}

/// Options controlling the mean-resting-time estimate.
#[derive(Debug, Clone)]
pub struct RestingTimeOpts {
    pub grid_n: usize,
    /// Doubling the domain must not grow the estimate by more than this
    /// factor for it to count as converged.
    pub ratio_threshold: f64,
    pub power: PowerIterateOpts,
}

impl Default for RestingTimeOpts {
    fn default() -> Self {
        RestingTimeOpts {
            grid_n: 2048,
            ratio_threshold: 1.05,
            power: PowerIterateOpts::default(),
        }
    }
}

fn invariant_density(spec: &ModelSpec, grid_n: usize, power: &PowerIterateOpts) -> Result<(Arc<FlowSolver>, GridDensity), StationaryError> {
    let solver = Arc::new(FlowSolver::new(spec.clone()));
    let grid = Grid::new(grid_n, spec.m_max);
    let op = KernelOp::new(solver.clone(), grid.clone())?;
    let f0 = GridDensity::uniform(grid, spec.m_max / 6.0);
    let res = power_iterate(&op, &f0, power);
    match res.fixed_point {
        Some(f) => Ok((solver, f)),
        None => Err(StationaryError::NoFixedPoint(res.outcome)),
    }
}

/// Mean resting time under the invariant density, decided by domain
/// doubling: the invariant density is recomputed on `[0, 2 mMax]` and the
/// truncated integrals compared. Returns the estimate and the invariant
/// density at the base domain.
pub fn mean_resting_time(
    spec: &ModelSpec,
    opts: &RestingTimeOpts,
) -> Result<(RestingTime, GridDensity), StationaryError> {
    let (solver, f_base) = invariant_density(spec, opts.grid_n, &opts.power)?;
    let t_base = resting_time_integral(&solver, &|y| f_base.f.eval(y), spec.m_max, opts.grid_n);

    let mut spec2 = spec.clone();
    spec2.m_max = 2.0 * spec.m_max;
    let (solver2, f_doubled) = invariant_density(&spec2, 2 * opts.grid_n, &opts.power)?;
    let t_doubled =
        resting_time_integral(&solver2, &|y| f_doubled.f.eval(y), spec2.m_max, 2 * opts.grid_n);

    let ratio = t_doubled / t_base;
    if ratio > opts.ratio_threshold {
        Ok((
            RestingTime::Divergent {
                base: t_base,
                doubled: t_doubled,
                ratio,
            },
            f_base,
        ))
    } else {
        Ok((
            RestingTime::Finite {
                value: t_doubled,
                ratio,
            },
            f_base,
        ))
    }
}

/// Mean resting time of an explicitly given density (closed-form inputs);
/// the same doubling rule applies, with the density evaluated on both
/// domains.
pub fn mean_resting_time_of_density(
    spec: &ModelSpec,
    density: &dyn Fn(f64) -> f64,
    opts: &RestingTimeOpts,
) -> RestingTime {
    let solver = FlowSolver::new(spec.clone());
    let t_base = resting_time_integral(&solver, density, spec.m_max, opts.grid_n);
    let mut spec2 = spec.clone();
    spec2.m_max = 2.0 * spec.m_max;
    let solver2 = FlowSolver::new(spec2);
    let t_doubled = resting_time_integral(&solver2, density, 2.0 * spec.m_max, 2 * opts.grid_n);
    let ratio = t_doubled / t_base;
    if ratio > opts.ratio_threshold {
        RestingTime::Divergent {
            base: t_base,
            doubled: t_doubled,
            ratio,
        }
    } else {
        RestingTime::Finite {
            value: t_doubled,
            ratio,
        }
    }
}

/// Stationary age-maturity description assembled from the invariant
/// density of the generational operator.
pub struct StationaryProfile {
    pub solver: Arc<FlowSolver>,
    pub f_star: GridDensity,
    pub resting_time: RestingTime,
    /// `1 / (T_R + tau)` when the resting time is finite.
    pub c: Option<f64>,
}

impl StationaryProfile {
    pub fn new(solver: Arc<FlowSolver>, f_star: GridDensity, resting_time: RestingTime) -> Self {
        let c = resting_time
            .value()
            .map(|t| 1.0 / (t + solver.spec().tau));
        StationaryProfile {
            solver,
            f_star,
            resting_time,
            c,
        }
    }

    fn c_or_one(&self) -> f64 {
        self.c.unwrap_or(1.0)
    }

    /// Stationary density `f~*(a, m, phase)`; zero outside the support
    /// wedges. With a divergent resting time the normalizing constant is
    /// unavailable and the unnormalized shape (c = 1) is returned.
    pub fn phase_density(&self, a: f64, m: f64, phase: Phase) -> f64 {
        let spec = self.solver.spec();
        if a < 0.0 || m < 0.0 {
            return 0.0;
        }
        match phase {
            Phase::Resting => {
                let y = match self.solver.flow(Phase::Resting, -a, m) {
                    Ok(y) => y,
                    Err(_) => return 0.0, // below pi_1(a, 0): outside support
                };
                let q_y = self.solver.hazard_q(y);
                let q_m = self.solver.hazard_q(m);
                self.c_or_one() * spec.g1.eval(y) / spec.g1.eval(m)
                    * self.f_star.f.eval(y)
                    * (q_y - q_m).exp()
            }
            Phase::Proliferating => {
                if a > spec.tau {
                    return 0.0;
                }
                let y = match self.solver.flow(Phase::Proliferating, -a, m) {
                    Ok(y) => y,
                    Err(_) => return 0.0,
                };
                if y < spec.m_p - 1e-12 {
                    return 0.0; // below pi_2(a, mP)
                }
                let psi_y = self.solver.psi(y.max(spec.m_p));
                self.c_or_one() * spec.g2.eval(y) / spec.g2.eval(m)
                    * self.solver.psi_prime(y.max(spec.m_p))
                    * self.f_star.f.eval(psi_y)
            }
        }
    }

    /// Age-integrated resting density
    /// `c e^{-Q(m)} / g1(m) * int_0^m e^{Q(x)} f*(x) dx` on the grid.
    pub fn marginal_resting(&self) -> GridFn {
        let mut out = self.resting_shape();
        let c = self.c_or_one();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    /// The same profile without the normalizing constant (`c = 1`); this
    /// is the natural stationary solution of the delayed transport
    /// equation.
    pub fn resting_shape(&self) -> GridFn {
        resting_shape_of(&self.solver, &self.f_star.f)
    }

    /// Numeric total mass of both phase densities: age-integrates the
    /// phase densities over their exact support. Equals 1 within a few
    /// parts in 1e4 when the resting time is finite.
    pub fn total_mass(&self) -> (f64, f64) {
        let spec = self.solver.spec();
        let grid = &self.f_star.f.grid;
        let mut mass1 = 0.0;
        let mut mass2 = 0.0;
        for i in 0..=grid.n {
            let m = grid.node(i);
            let w = grid.weight(i);
            // resting: support a in [0, travel time from 0 to m]
            let a_hi = self.solver.resting_travel_time(0.0, m);
            if a_hi > 0.0 && a_hi.is_finite() {
                mass1 += w * adaptive_simpson(
                    |a| self.phase_density(a, m, Phase::Resting),
                    0.0,
                    a_hi,
                    1e-11,
                );
            }
            // proliferating: support a in [0, min(tau, travel from mP)]
            if m >= spec.m_p {
                let t_from_mp = travel_time_p(&self.solver, spec.m_p, m);
                let a_hi = spec.tau.min(t_from_mp);
                if a_hi > 0.0 {
                    mass2 += w * adaptive_simpson(
                        |a| self.phase_density(a, m, Phase::Proliferating),
                        0.0,
                        a_hi,
                        1e-11,
                    );
                }
            }
        }
        (mass1, mass2)
    }
}

/// Travel time of the proliferating flow from `m0` up to `m1`.
fn travel_time_p(solver: &FlowSolver, m0: f64, m1: f64) -> f64 {
    if m1 <= m0 {
        return 0.0;
    }
    let spec = solver.spec();
    adaptive_simpson(|m| 1.0 / spec.g2.eval(m), m0, m1, 1e-12)
}

/// Unnormalized stationary resting profile
/// `R(m) = e^{-Q(m)} / g1(m) * int_0^m e^{Q(x)} f(x) dx`.
///
/// The cumulative is carried in hazard-shifted form so only exponential
/// differences are ever taken.
pub fn resting_shape_of(solver: &FlowSolver, f: &GridFn) -> GridFn {
    let grid = f.grid.clone();
    let spec = solver.spec();
    let n = grid.n;
    let mut values = vec![0.0; n + 1];
    // s_i = e^{-Q(m_i)} int_0^{m_i} e^{Q} f, accumulated per cell
    let mut s = 0.0;
    let mut q_prev = 0.0;
    values[0] = 0.0;
    for i in 1..=n {
        let (a, b) = (grid.node(i - 1), grid.node(i));
        let q_b = solver.hazard_q(b);
        let cell = adaptive_simpson(
            |x| (solver.hazard_q(x) - q_b).exp() * f.eval(x),
            a,
            b,
            1e-13,
        );
        s = s * (q_prev - q_b).exp() + cell;
        q_prev = q_b;
        values[i] = s / spec.g1.eval(b);
    }
    GridFn { grid, values }
}

/// Verdict plus evidence for the continuous-time semigroup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuousClassification {
    pub verdict: Verdict,
    pub resting_time: Option<RestingTime>,
    /// `1/(T_R + tau)` when available.
    pub c: Option<f64>,
    pub used_rule: String,
    /// Nonempty when the verdict leans on the informal argument that a
    /// divergent resting time rules out invariant densities.
    pub caveat: Option<String>,
}

/// Options for [`classify_continuous`].
#[derive(Debug, Clone, Default)]
pub struct ContinuousOpts {
    pub discrete: DiscreteOpts,
    pub resting: RestingTimeOpts,
}

/// Joint outcome of both classifiers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classification {
    pub discrete: DiscreteClassification,
    pub continuous: ContinuousClassification,
}

/// Decides asymptotic stability vs sweeping for the continuous-time
/// semigroup:
///
/// - with an invariant generational density, stable iff the mean resting
///   time converges under domain doubling, sweeping iff it keeps growing;
/// - a sweeping generational operator with `phi` declared bounded sweeps
///   in continuous time too;
/// - hazard-gap tail above 1 with `phi` declared positive at infinity is
///   sufficient for stability;
/// - anything else is inconclusive.
pub fn classify_continuous(
    spec: &ModelSpec,
    opts: &ContinuousOpts,
) -> Result<Classification, StationaryError> {
    let solver = FlowSolver::new(spec.clone());
    let discrete = classify_discrete(&solver, &opts.discrete)?;

    let divergence_caveat = "a divergent mean resting time leaves the semigroup without an \
        integrable stationary profile; the sweeping conclusion follows the informal argument, \
        not a proved theorem"
        .to_string();

    let continuous = match mean_resting_time(spec, &opts.resting) {
        Ok((rt, _)) => {
            let c = rt.value().map(|t| 1.0 / (t + spec.tau));
            if rt.is_finite() {
                ContinuousClassification {
                    verdict: Verdict::Stable,
                    resting_time: Some(rt),
                    c,
                    used_rule: "invariant density exists and T_R is finite".into(),
                    caveat: None,
                }
            } else {
                ContinuousClassification {
                    verdict: Verdict::Sweeping,
                    resting_time: Some(rt),
                    c: None,
                    used_rule: "invariant density exists but T_R diverges under domain doubling"
                        .into(),
                    caveat: Some(divergence_caveat),
                }
            }
        }
        Err(StationaryError::NoFixedPoint(outcome)) => {
            let discrete_sweeping = discrete.verdict == Verdict::Sweeping
                || outcome == IterationOutcome::MassDrained;
            if discrete_sweeping && spec.phi_bounded == Some(true) {
                ContinuousClassification {
                    verdict: Verdict::Sweeping,
                    resting_time: None,
                    c: None,
                    used_rule: "generational operator sweeps and phi is declared bounded".into(),
                    caveat: None,
                }
            } else if discrete.alpha_tail_min > 1.0 + opts.discrete.margin
                && spec.phi_tail_lower_bounded == Some(true)
            {
                ContinuousClassification {
                    verdict: Verdict::Stable,
                    resting_time: None,
                    c: None,
                    used_rule: "hazard gap stays above one and phi is declared positive at \
                                infinity"
                        .into(),
                    caveat: None,
                }
            } else {
                ContinuousClassification {
                    verdict: Verdict::Inconclusive,
                    resting_time: None,
                    c: None,
                    used_rule: "no invariant density found and no declared phi bound applies"
                        .into(),
                    caveat: None,
                }
            }
        }
        Err(e) => return Err(e),
    };

    Ok(Classification {
        discrete,
        continuous,
    })
}

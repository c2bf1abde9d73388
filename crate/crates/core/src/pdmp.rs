//! Exact-event simulation of the continuous-time process
//! `(age, maturity, phase)`.
//!
//! Resting durations are sampled by hazard inversion: draw `E ~ Exp(1)`,
//! solve `Q(m*) = Q(m0) + E` for the phase-entry maturity, then convert to
//! time through the velocity integral. No time stepping and no rejection;
//! trajectories escaping the numerical maturity domain are censored and
//! flagged. Ensembles use one counter-based substream per trajectory, so
//! results do not depend on thread count.

use crate::flows::{FlowError, FlowSolver, Phase};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PdmpError {
    #[error("state (a={age}, m={maturity}, phase {phase:?}) lies outside the state space")]
    InvalidState { age: f64, maturity: f64, phase: Phase },
    #[error("empty sample")]
    EmptySample,
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Point of the process: age within the current phase, maturity, phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdmpState {
    pub age: f64,
    pub maturity: f64,
    pub phase: Phase,
}

impl PdmpState {
    /// Fresh resting-phase cell at maturity `m`.
    pub fn newborn(m: f64) -> Self {
        PdmpState {
            age: 0.0,
            maturity: m,
            phase: Phase::Resting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    EnterProliferation,
    Division,
}

/// One jump of the process.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub m_before: f64,
    pub m_after: f64,
}

/// Event log of one simulated descendant line, with optional state samples
/// on a fixed time lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed_stream: u64,
    pub events: Vec<Event>,
    pub samples: Vec<(f64, PdmpState)>,
    /// Time at which the line left the numerical domain, if it did.
    pub escaped_at: Option<f64>,
}

/// Outcome of sampling one resting duration.
pub enum RestingDraw {
    /// `(duration, maturity at phase entry)`.
    Entered { duration: f64, maturity: f64 },
    /// The hazard level exceeded `Q(mMax)`: the cell out-matures the domain.
    Escaped,
}

/// Inverts the resting-phase survival law at quantile `u in [0, 1)` for a
/// cell starting at maturity `m0`; also returns the phase-entry maturity
/// so callers need not re-integrate.
pub fn sample_resting_time(solver: &FlowSolver, m0: f64, u: f64) -> Result<RestingDraw, PdmpError> {
    assert!((0.0..1.0).contains(&u), "u must lie in [0, 1)");
    let e = -(1.0 - u).ln();
    let target = solver.hazard_q(m0) + e;
    match solver.hazard_q_inverse(target) {
        Ok(m_star) => {
            let m_star = m_star.max(m0);
            let duration = solver.resting_travel_time(m0, m_star);
            Ok(RestingDraw::Entered {
                duration,
                maturity: m_star,
            })
        }
        Err(FlowError::Range { .. }) => Ok(RestingDraw::Escaped),
        Err(e) => Err(e.into()),
    }
}

/// Advances one jump from a post-jump state. Returns the waiting time and
/// the next post-jump state, or `None` when the trajectory escapes.
pub fn step<R: Rng>(
    solver: &FlowSolver,
    state: &PdmpState,
    rng: &mut R,
) -> Result<Option<(f64, PdmpState)>, PdmpError> {
    match state.phase {
        Phase::Resting => {
            let u: f64 = rng.gen();
            match sample_resting_time(solver, state.maturity, u)? {
                RestingDraw::Entered { duration, maturity } => Ok(Some((
                    duration,
                    PdmpState {
                        age: 0.0,
                        maturity,
                        phase: Phase::Proliferating,
                    },
                ))),
                RestingDraw::Escaped => Ok(None),
            }
        }
        Phase::Proliferating => {
            let tau = solver.spec().tau;
            let m_div = solver.flow_forward_p(tau - state.age, state.maturity);
            let daughter = solver.spec().h.eval(m_div);
            Ok(Some((
                tau - state.age,
                PdmpState::newborn(daughter),
            )))
        }
    }
}

/// Chain of newborn maturities along the descendant line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationChain {
    pub maturities: Vec<f64>,
    pub escaped: bool,
}

/// Simulates `n_gen` generations starting from a newborn at `m0`,
/// recording each daughter's initial maturity. The k-th entry is one draw
/// from the k-fold application of the generational operator to a point
/// mass at `m0`.
pub fn simulate_generations<R: Rng>(
    solver: &FlowSolver,
    m0: f64,
    n_gen: usize,
    rng: &mut R,
) -> Result<GenerationChain, PdmpError> {
    let mut maturities = Vec::with_capacity(n_gen);
    let mut m = m0;
    for _ in 0..n_gen {
        let u: f64 = rng.gen();
        match sample_resting_time(solver, m, u)? {
            RestingDraw::Entered { maturity, .. } => {
                m = solver.psi(maturity);
                maturities.push(m);
            }
            RestingDraw::Escaped => {
                return Ok(GenerationChain {
                    maturities,
                    escaped: true,
                })
            }
        }
    }
    Ok(GenerationChain {
        maturities,
        escaped: false,
    })
}

fn in_state_space(solver: &FlowSolver, x: &PdmpState) -> bool {
    let spec = solver.spec();
    match x.phase {
        Phase::Resting => {
            x.age >= 0.0 && x.maturity >= solver.flow(Phase::Resting, x.age, 0.0).unwrap_or(0.0) - 1e-9
        }
        Phase::Proliferating => {
            (0.0..=spec.tau + 1e-12).contains(&x.age)
                && x.maturity >= solver.flow_forward_p(x.age, spec.m_p) - 1e-9
        }
    }
}

/// Simulates the process from `x0` up to `horizon`, sampling the state at
/// multiples of `sample_dt` (no samples when `sample_dt` is `None`).
pub fn simulate_continuous<R: Rng>(
    solver: &FlowSolver,
    x0: &PdmpState,
    horizon: f64,
    sample_dt: Option<f64>,
    rng: &mut R,
    seed_stream: u64,
) -> Result<Trajectory, PdmpError> {
    if !in_state_space(solver, x0) {
        return Err(PdmpError::InvalidState {
            age: x0.age,
            maturity: x0.maturity,
            phase: x0.phase,
        });
    }
    let mut events = Vec::new();
    let mut samples = Vec::new();
    let mut escaped_at = None;

    // segment = (start time, state at segment start with its current age)
    let mut seg_start = 0.0f64;
    let mut seg_state = *x0;
    let mut next_sample = 0.0f64;
    let dt_sample = sample_dt.unwrap_or(f64::INFINITY);

    loop {
        // decide the end of the current deterministic segment
        let hop = match seg_state.phase {
            Phase::Resting => {
                let u: f64 = rng.gen();
                match sample_resting_time(solver, seg_state.maturity, u)? {
                    RestingDraw::Entered { duration, maturity } => Some((duration, maturity)),
                    RestingDraw::Escaped => None,
                }
            }
            Phase::Proliferating => {
                let remain = solver.spec().tau - seg_state.age;
                let m_div = solver.flow_forward_p(remain, seg_state.maturity);
                Some((remain, m_div))
            }
        };
        let (seg_len, m_end) = match hop {
            Some(v) => v,
            None => {
                escaped_at = Some(seg_start);
                break;
            }
        };
        let seg_end = seg_start + seg_len;

        // emit samples inside this segment
        while next_sample <= horizon + 1e-12 && next_sample < seg_end {
            let dt = next_sample - seg_start;
            if dt >= 0.0 {
                let m = solver.flow(seg_state.phase, dt, seg_state.maturity)?;
                samples.push((
                    next_sample,
                    PdmpState {
                        age: seg_state.age + dt,
                        maturity: m,
                        phase: seg_state.phase,
                    },
                ));
            }
            next_sample += dt_sample;
        }
        if seg_end > horizon {
            break;
        }

        // jump
        match seg_state.phase {
            Phase::Resting => {
                events.push(Event {
                    time: seg_end,
                    kind: EventKind::EnterProliferation,
                    m_before: m_end,
                    m_after: m_end,
                });
                seg_state = PdmpState {
                    age: 0.0,
                    maturity: m_end,
                    phase: Phase::Proliferating,
                };
            }
            Phase::Proliferating => {
                let daughter = solver.spec().h.eval(m_end);
                events.push(Event {
                    time: seg_end,
                    kind: EventKind::Division,
                    m_before: m_end,
                    m_after: daughter,
                });
                seg_state = PdmpState::newborn(daughter);
            }
        }
        seg_start = seg_end;
    }

    Ok(Trajectory {
        seed_stream,
        events,
        samples,
        escaped_at,
    })
}

/// Deterministic per-trajectory generator: stream `index` of the master
/// seed. Identical `(seed, index)` always yields the same trajectory.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Runs independent trajectories in parallel with fixed-order collection.
pub fn run_ensemble(
    solver: &FlowSolver,
    x0: &PdmpState,
    n_traj: usize,
    horizon: f64,
    sample_dt: Option<f64>,
    master_seed: u64,
) -> Result<Vec<Trajectory>, PdmpError> {
    (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(master_seed, i as u64);
            simulate_continuous(solver, x0, horizon, sample_dt, &mut rng, i as u64)
        })
        .collect()
}

/// Fraction of sampled states in the proliferating phase.
pub fn phase2_sample_fraction(trajectories: &[Trajectory]) -> f64 {
    let mut total = 0usize;
    let mut p2 = 0usize;
    for t in trajectories {
        for (_, s) in &t.samples {
            total += 1;
            if s.phase == Phase::Proliferating {
                p2 += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        p2 as f64 / total as f64
    }
}

/// Two-dimensional age-maturity histogram for one phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram2 {
    pub a_max: f64,
    pub m_max: f64,
    pub a_bins: usize,
    pub m_bins: usize,
    /// Row-major `[a_bin][m_bin]` densities (per unit age x maturity).
    pub density: Vec<f64>,
}

impl Histogram2 {
    fn bin_area(&self) -> f64 {
        (self.a_max / self.a_bins as f64) * (self.m_max / self.m_bins as f64)
    }

    /// Maturity marginal (integrates the age variable out), per unit
    /// maturity; `values[k]` belongs to bin center `(k + 1/2) m_max/m_bins`.
    pub fn maturity_marginal(&self) -> Vec<f64> {
        let da = self.a_max / self.a_bins as f64;
        let mut out = vec![0.0; self.m_bins];
        for ia in 0..self.a_bins {
            for im in 0..self.m_bins {
                out[im] += self.density[ia * self.m_bins + im] * da;
            }
        }
        out
    }

    /// Age marginal (integrates maturity out), per unit age.
    pub fn age_marginal(&self) -> Vec<f64> {
        let dm = self.m_max / self.m_bins as f64;
        let mut out = vec![0.0; self.a_bins];
        for ia in 0..self.a_bins {
            for im in 0..self.m_bins {
                out[ia] += self.density[ia * self.m_bins + im] * dm;
            }
        }
        out
    }

    /// Total mass of this phase (both phases together normalize to 1).
    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_area()
    }
}

/// Empirical age-maturity histograms per phase, jointly normalized so the
/// two phase masses sum to one.
pub fn ensemble_histogram(
    states: &[PdmpState],
    a_bins: usize,
    m_bins: usize,
    a_max: f64,
    m_max: f64,
) -> Result<(Histogram2, Histogram2), PdmpError> {
    if states.is_empty() {
        return Err(PdmpError::EmptySample);
    }
    let mut resting = Histogram2 {
        a_max,
        m_max,
        a_bins,
        m_bins,
        density: vec![0.0; a_bins * m_bins],
    };
    let mut prolif = resting.clone();
    let mut counted = 0usize;
    for s in states {
        let ia = (s.age / a_max * a_bins as f64).floor() as isize;
        let im = (s.maturity / m_max * m_bins as f64).floor() as isize;
        if ia < 0 || im < 0 || ia >= a_bins as isize || im >= m_bins as isize {
            continue;
        }
        counted += 1;
        let idx = ia as usize * m_bins + im as usize;
        match s.phase {
            Phase::Resting => resting.density[idx] += 1.0,
            Phase::Proliferating => prolif.density[idx] += 1.0,
        }
    }
    if counted == 0 {
        return Err(PdmpError::EmptySample);
    }
    let norm = counted as f64 * resting.bin_area();
    for v in resting.density.iter_mut().chain(prolif.density.iter_mut()) {
        *v /= norm;
    }
    Ok((resting, prolif))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_abs_diff_eq;

    fn solver() -> FlowSolver {
        FlowSolver::new(presets::unit_speed_model())
    }

    #[test]
    fn resting_time_closed_form_from_origin() {
        // from m0 = 0: t_R = 2 + E; u = 1 - e^{-1} gives E = 1, t_R = 3
        let s = solver();
        let u = 1.0 - (-1.0f64).exp();
        match sample_resting_time(&s, 0.0, u).unwrap() {
            RestingDraw::Entered { duration, maturity } => {
                assert_abs_diff_eq!(duration, 3.0, epsilon = 1e-10);
                assert_abs_diff_eq!(maturity, 3.0, epsilon = 1e-10);
            }
            RestingDraw::Escaped => panic!("unexpected escape"),
        }
    }

    #[test]
    fn resting_time_vanishes_at_zero_quantile_above_threshold() {
        let s = solver();
        match sample_resting_time(&s, 3.0, 1e-14).unwrap() {
            RestingDraw::Entered { duration, .. } => {
                assert!(duration < 1e-12, "duration {duration}");
            }
            RestingDraw::Escaped => panic!("unexpected escape"),
        }
    }

    #[test]
    fn resting_time_escapes_at_extreme_quantile() {
        // from high maturity a modest draw already overshoots Q(mMax)
        let s = solver();
        let u = 1.0 - (-2.0f64).exp(); // E = 2, Q(59.5) + 2 > Q(60)
        assert!(matches!(
            sample_resting_time(&s, 59.5, u).unwrap(),
            RestingDraw::Escaped
        ));
    }

    #[test]
    fn empirical_mean_resting_time_from_origin() {
        // t_R = 2 + Exp(1): mean 3
        let s = solver();
        let mut rng = trajectory_rng(7, 0);
        let n = 1_000_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let u: f64 = rng.gen();
            match sample_resting_time(&s, 0.0, u).unwrap() {
                RestingDraw::Entered { duration, .. } => acc += duration,
                RestingDraw::Escaped => {}
            }
        }
        let mean = acc / n as f64;
        assert!((mean - 3.0).abs() < 0.01, "mean resting time {mean}");
    }

    #[test]
    fn deterministic_phase_two_step() {
        let s = solver();
        let mut rng = trajectory_rng(1, 0);
        let state = PdmpState {
            age: 0.0,
            maturity: 5.0,
            phase: Phase::Proliferating,
        };
        let (dt, next) = step(&s, &state, &mut rng).unwrap().unwrap();
        assert_abs_diff_eq!(dt, 1.0, epsilon = 1e-12);
        assert_eq!(next.phase, Phase::Resting);
        // psi(5) = 3 for the unit-speed model
        assert_abs_diff_eq!(next.maturity, 3.0, epsilon = 1e-10);
        assert_eq!(next.age, 0.0);
    }

    #[test]
    fn two_steps_compose_to_generational_map() {
        let s = solver();
        let mut rng = trajectory_rng(42, 3);
        let x0 = PdmpState::newborn(0.0);
        let (_, x1) = step(&s, &x0, &mut rng).unwrap().unwrap();
        assert_eq!(x1.phase, Phase::Proliferating);
        let (_, x2) = step(&s, &x1, &mut rng).unwrap().unwrap();
        assert_eq!(x2.phase, Phase::Resting);
        assert_abs_diff_eq!(x2.maturity, s.psi(x1.maturity), epsilon = 1e-10);
    }

    #[test]
    fn generation_chain_length_and_escape_flag() {
        let s = solver();
        let mut rng = trajectory_rng(9, 0);
        let chain = simulate_generations(&s, 0.0, 0, &mut rng).unwrap();
        assert!(chain.maturities.is_empty());
        assert!(!chain.escaped);
        let chain = simulate_generations(&s, 0.0, 25, &mut rng).unwrap();
        assert_eq!(chain.maturities.len(), 25);
    }

    #[test]
    fn identical_seeds_reproduce_trajectories() {
        let s = solver();
        let x0 = PdmpState::newborn(1.0);
        let run = |seed: u64| {
            let mut rng = trajectory_rng(seed, 11);
            simulate_continuous(&s, &x0, 50.0, Some(0.5), &mut rng, 11).unwrap()
        };
        let a = run(1234);
        let b = run(1234);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = run(1235);
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn trajectory_invariants_hold() {
        let s = solver();
        let x0 = PdmpState::newborn(0.5);
        let trajs = run_ensemble(&s, &x0, 100, 80.0, Some(0.7), 2024).unwrap();
        for t in &trajs {
            // strictly increasing event times
            for w in t.events.windows(2) {
                assert!(w[1].time > w[0].time);
            }
            // divisions occur exactly tau after the preceding entry, and
            // m_after = h(m_before) at divisions
            let mut last_entry: Option<&Event> = None;
            for e in &t.events {
                match e.kind {
                    EventKind::EnterProliferation => last_entry = Some(e),
                    EventKind::Division => {
                        let entry = last_entry.expect("division without entry");
                        assert_abs_diff_eq!(e.time - entry.time, 1.0, epsilon = 1e-9);
                        let expected = s.spec().h.eval(e.m_before);
                        assert_abs_diff_eq!(e.m_after, expected, epsilon = 1e-9);
                        // division identity: daughter maturity is psi of the
                        // maturity at phase entry
                        assert_abs_diff_eq!(e.m_after, s.psi(entry.m_after), epsilon = 1e-9);
                    }
                }
            }
            // sampled states lie in the state space
            for (_, st) in &t.samples {
                assert!(super::in_state_space(&s, st), "state {st:?}");
            }
        }
    }

    #[test]
    fn invalid_initial_state_rejected() {
        let s = solver();
        let bad = PdmpState {
            age: 5.0,
            maturity: 1.0, // resting cells of age 5 have maturity >= 5
            phase: Phase::Resting,
        };
        let mut rng = trajectory_rng(0, 0);
        assert!(matches!(
            simulate_continuous(&s, &bad, 1.0, None, &mut rng, 0),
            Err(PdmpError::InvalidState { .. })
        ));
    }

    #[test]
    fn memorylessness_in_hazard_scale() {
        // Q(m*) - Q(m0) ~ Exp(1) exactly; transform samples back and
        // compare against the exponential law
        let s = solver();
        let mut rng = trajectory_rng(5150, 0);
        let n = 100_000;
        let m0 = 1.3;
        let q0 = s.hazard_q(m0);
        let mut increments: Vec<f64> = (0..n)
            .filter_map(|_| {
                let u: f64 = rng.gen();
                match sample_resting_time(&s, m0, u).unwrap() {
                    RestingDraw::Entered { duration, .. } => {
                        let m_at_entry = s.flow(Phase::Resting, duration, m0).unwrap();
                        Some(s.hazard_q(m_at_entry) - q0)
                    }
                    RestingDraw::Escaped => None,
                }
            })
            .collect();
        increments.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = crate::verify::ks_statistic_sorted(&increments, |x| 1.0 - (-x).exp());
        let bound = 1.358 / (increments.len() as f64).sqrt();
        assert!(ks < bound, "KS {ks} vs {bound}");
    }

    #[test]
    fn histogram_single_state_single_bin() {
        let states = vec![PdmpState::newborn(1.0)];
        let (r, p) = ensemble_histogram(&states, 10, 10, 5.0, 10.0).unwrap();
        assert_eq!(r.density.iter().filter(|v| **v > 0.0).count(), 1);
        assert_eq!(p.density.iter().filter(|v| **v > 0.0).count(), 0);
        assert_abs_diff_eq!(r.mass() + p.mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn histogram_empty_sample_is_error() {
        assert!(matches!(
            ensemble_histogram(&[], 4, 4, 1.0, 1.0),
            Err(PdmpError::EmptySample)
        ));
    }
}

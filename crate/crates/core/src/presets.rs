//! Ready-made model specifications used by the CLI, the examples and the
//! test suites.

use crate::model::ModelSpec;
use crate::scalar::ScalarFn;

/// Root of `1 - beta = e^{-2 beta}` in `(0, 1)`, by bisection to 1e-15.
/// The invariant density of [`unit_speed_model`] is `beta e^{-beta m}`.
pub fn beta_fixed_point() -> f64 {
    let f = |b: f64| 1.0 - b - (-2.0 * b).exp();
    let mut lo = 0.5;
    let mut hi = 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Unit maturation speed in both phases, division shift `h(m) = m - 3`,
/// unit transition rate above `mP = 2`. Everything about this model has a
/// closed form: `psi(m) = m - 2`, `lambda(m) = m + 2`,
/// `Q(m) = max(0, m - 2)`, invariant density `beta e^{-beta m}` and mean
/// resting time exactly 2.
pub fn unit_speed_model() -> ModelSpec {
    ModelSpec {
        g1: ScalarFn::Constant { c: 1.0 },
        g2: ScalarFn::Constant { c: 1.0 },
        phi: ScalarFn::step(2.0, 1.0, 1e6),
        h: ScalarFn::Linear { a: 1.0, b: -3.0 },
        tau: 1.0,
        m_p: 2.0,
        m_max: 60.0,
        phi_bounded: Some(true),
        phi_tail_lower_bounded: Some(true),
        m4_threshold: None,
    }
}

/// Same flows as [`unit_speed_model`] but with transition rate `1/4`:
/// the hazard gap `alpha` settles at `1/2 <= 1`, so the generational
/// operator sweeps mass towards large maturities.
pub fn shallow_hazard_model() -> ModelSpec {
    ModelSpec {
        phi: ScalarFn::step(2.0, 0.25, 1e6),
        m4_threshold: Some(10.0),
        ..unit_speed_model()
    }
}

/// First stage of the stable-but-sweeping construction: the hazard is
/// pinned directly (`Q(m) = m` for `m >= 3` via a ramp on `[2, 3]`,
/// unit velocities) so the invariant density depends only on `Q` and
/// `lambda`. The finished model is produced by
/// [`crate::counterexample::build`].
pub fn counterexample_provisional(m_max: f64) -> ModelSpec {
    // Q'(m): 0 below 2, a hat peaking at 5.5 over [2, 3], then 1; the hat
    // integrates to 3 so that Q(3) = 3 and Q(m) = m beyond.
    let phi = ScalarFn::PiecewiseLinear {
        knots: vec![(0.0, 0.0), (2.0, 0.0), (2.5, 5.5), (3.0, 1.0), (1e6, 1.0)],
    };
    ModelSpec {
        g1: ScalarFn::Constant { c: 1.0 },
        g2: ScalarFn::Constant { c: 1.0 },
        phi,
        h: ScalarFn::Linear { a: 1.0, b: -3.0 },
        tau: 1.0,
        m_p: 2.0,
        m_max,
        phi_bounded: Some(true),
        phi_tail_lower_bounded: Some(true),
        m4_threshold: None,
    }
}

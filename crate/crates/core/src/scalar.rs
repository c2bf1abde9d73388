//! One-dimensional model functions from a closed set of parametric
//! families. Each family evaluates and differentiates analytically
//! (one-sided at knots of the piecewise families).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while constructing or evaluating a [`ScalarFn`].
#[derive(Debug, Error, PartialEq)]
pub enum ScalarFnError {
    #[error("knots must be non-decreasing in x (index {index})")]
    KnotsNotSorted { index: usize },
    #[error("at least two knots required")]
    TooFewKnots,
    #[error("table step must be positive, got {step}")]
    BadTableStep { step: f64 },
    #[error("non-finite parameter in {family}")]
    NonFiniteParam { family: &'static str },
    #[error("evaluation of {family} at m = {m} is not finite")]
    NonFiniteEval { family: &'static str, m: f64 },
}

/// A validated scalar function `m -> f(m)` on `[0, infinity)`.
///
/// `PiecewiseLinear` permits repeated x-knots to encode a jump; evaluation
/// at the jump abscissa returns the left value. Outside the knot range the
/// end values extend as constants. `Table` is the same on a uniform grid
/// starting at `x0` (values shifted there), which is how densities computed
/// on a grid re-enter a model as rate or velocity functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum ScalarFn {
    /// `f(m) = c`
    Constant { c: f64 },
    /// `f(m) = a m + b`
    Linear { a: f64, b: f64 },
    /// `f(m) = a m^p + b`
    PowerLaw { a: f64, p: f64, b: f64 },
    /// `f(m) = a u^p / (k + u^p)` with `u = max(0, m - shift)`.
    /// The shift lets a saturating rate vanish identically below a
    /// threshold maturity.
    HillRate {
        a: f64,
        p: f64,
        k: f64,
        #[serde(default)]
        shift: f64,
    },
    /// Linear interpolation through `(x, y)` knots.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
    /// Uniform-grid table: knot `i` at `x0 + i*dx`, linear interpolation,
    /// clamped to the end values outside.
    ShiftedTable { x0: f64, dx: f64, values: Vec<f64> },
}

impl ScalarFn {
    /// Checks parameters once; all later evaluation assumes this passed.
    pub fn validate(&self) -> Result<(), ScalarFnError> {
        let all_finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match self {
            ScalarFn::Constant { c } => {
                if !c.is_finite() {
                    return Err(ScalarFnError::NonFiniteParam { family: "constant" });
                }
            }
            ScalarFn::Linear { a, b } => {
                if !all_finite(&[*a, *b]) {
                    return Err(ScalarFnError::NonFiniteParam { family: "linear" });
                }
            }
            ScalarFn::PowerLaw { a, p, b } => {
                if !all_finite(&[*a, *p, *b]) {
                    return Err(ScalarFnError::NonFiniteParam { family: "power_law" });
                }
            }
            ScalarFn::HillRate { a, p, k, shift } => {
                if !all_finite(&[*a, *p, *k, *shift]) || *k <= 0.0 || *p <= 0.0 {
                    return Err(ScalarFnError::NonFiniteParam { family: "hill_rate" });
                }
            }
            ScalarFn::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return Err(ScalarFnError::TooFewKnots);
                }
                for (i, w) in knots.windows(2).enumerate() {
                    if !(w[0].0.is_finite() && w[0].1.is_finite()) {
                        return Err(ScalarFnError::NonFiniteParam {
                            family: "piecewise_linear",
                        });
                    }
                    if w[1].0 < w[0].0 {
                        return Err(ScalarFnError::KnotsNotSorted { index: i + 1 });
                    }
                }
                let last = knots[knots.len() - 1];
                if !(last.0.is_finite() && last.1.is_finite()) {
                    return Err(ScalarFnError::NonFiniteParam {
                        family: "piecewise_linear",
                    });
                }
            }
            ScalarFn::ShiftedTable { x0, dx, values } => {
                if values.len() < 2 {
                    return Err(ScalarFnError::TooFewKnots);
                }
                if !(*dx > 0.0) || !dx.is_finite() {
                    return Err(ScalarFnError::BadTableStep { step: *dx });
                }
                if !x0.is_finite() || !all_finite(values) {
                    return Err(ScalarFnError::NonFiniteParam {
                        family: "shifted_table",
                    });
                }
            }
        }
        Ok(())
    }

    /// Evaluates at `m`.
    pub fn eval(&self, m: f64) -> f64 {
        match self {
            ScalarFn::Constant { c } => *c,
            ScalarFn::Linear { a, b } => a * m + b,
            ScalarFn::PowerLaw { a, p, b } => a * m.powf(*p) + b,
            ScalarFn::HillRate { a, p, k, shift } => {
                let u = (m - shift).max(0.0);
                if u == 0.0 {
                    0.0
                } else {
                    let up = u.powf(*p);
                    a * up / (k + up)
                }
            }
            ScalarFn::PiecewiseLinear { knots } => {
                let n = knots.len();
                if m <= knots[0].0 {
                    return knots[0].1;
                }
                if m >= knots[n - 1].0 {
                    return knots[n - 1].1;
                }
                // first knot with x >= m; ties resolve to the left value
                let hi = knots.partition_point(|k| k.0 < m);
                let (x1, y1) = knots[hi];
                let (x0, y0) = knots[hi - 1];
                if x1 == x0 || m == x0 {
                    return y0;
                }
                y0 + (y1 - y0) * (m - x0) / (x1 - x0)
            }
            ScalarFn::ShiftedTable { x0, dx, values } => {
                let n = values.len();
                let u = (m - x0) / dx;
                if u <= 0.0 {
                    return values[0];
                }
                if u >= (n - 1) as f64 {
                    return values[n - 1];
                }
                let i = u.floor() as usize;
                let frac = u - i as f64;
                values[i] + (values[i + 1] - values[i]) * frac
            }
        }
    }

    /// Analytic derivative at `m` (right-sided at interior knots, left-sided
    /// at the last knot; zero outside tabulated ranges).
    pub fn deriv(&self, m: f64) -> f64 {
        match self {
            ScalarFn::Constant { .. } => 0.0,
            ScalarFn::Linear { a, .. } => *a,
            ScalarFn::PowerLaw { a, p, .. } => {
                if *p == 0.0 {
                    0.0
                } else {
                    a * p * m.powf(p - 1.0)
                }
            }
            ScalarFn::HillRate { a, p, k, shift } => {
                let u = (m - shift).max(0.0);
                if u == 0.0 {
                    return 0.0;
                }
                let up = u.powf(*p);
                a * p * k * up / (u * (k + up) * (k + up))
            }
            ScalarFn::PiecewiseLinear { knots } => {
                let n = knots.len();
                if m < knots[0].0 || m > knots[n - 1].0 {
                    return 0.0;
                }
                let hi = knots.partition_point(|k| k.0 <= m).min(n - 1).max(1);
                let (x1, y1) = knots[hi];
                let (x0, y0) = knots[hi - 1];
                if x1 == x0 {
                    // at a jump: report the slope of the right segment
                    if hi + 1 < n && knots[hi + 1].0 > x1 {
                        return (knots[hi + 1].1 - y1) / (knots[hi + 1].0 - x1);
                    }
                    return 0.0;
                }
                (y1 - y0) / (x1 - x0)
            }
            ScalarFn::ShiftedTable { x0, dx, values } => {
                let n = values.len();
                let u = (m - x0) / dx;
                if u < 0.0 || u > (n - 1) as f64 {
                    return 0.0;
                }
                let i = (u.floor() as usize).min(n - 2);
                (values[i + 1] - values[i]) / dx
            }
        }
    }

    /// True when the function is piecewise constant (enables the exact
    /// hazard fast path).
    pub fn is_piecewise_constant(&self) -> bool {
        match self {
            ScalarFn::Constant { .. } => true,
            ScalarFn::Linear { a, .. } => *a == 0.0,
            ScalarFn::PiecewiseLinear { knots } => knots
                .windows(2)
                .all(|w| w[0].0 == w[1].0 || w[0].1 == w[1].1),
            _ => false,
        }
    }

    /// Interior breakpoints where the function may kink or jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            ScalarFn::HillRate { shift, .. } => vec![*shift],
            ScalarFn::PiecewiseLinear { knots } => knots.iter().map(|k| k.0).collect(),
            ScalarFn::ShiftedTable { x0, dx, values } => {
                (0..values.len()).map(|i| x0 + *dx * i as f64).collect()
            }
            _ => vec![],
        }
    }

    /// Evaluates and rejects non-finite results.
    pub fn eval_checked(&self, m: f64) -> Result<f64, ScalarFnError> {
        let v = self.eval(m);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ScalarFnError::NonFiniteEval {
                family: self.family_name(),
                m,
            })
        }
    }

    /// Family tag as written in model files.
    pub fn family_name(&self) -> &'static str {
        match self {
            ScalarFn::Constant { .. } => "constant",
            ScalarFn::Linear { .. } => "linear",
            ScalarFn::PowerLaw { .. } => "power_law",
            ScalarFn::HillRate { .. } => "hill_rate",
            ScalarFn::PiecewiseLinear { .. } => "piecewise_linear",
            ScalarFn::ShiftedTable { .. } => "shifted_table",
        }
    }

    /// A unit step that is `0` for `m <= at` and `height` above; built as a
    /// piecewise-linear function with a repeated knot.
    pub fn step(at: f64, height: f64, until: f64) -> ScalarFn {
        ScalarFn::PiecewiseLinear {
            knots: vec![(0.0, 0.0), (at, 0.0), (at, height), (until, height)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn step_is_left_continuous() {
        let s = ScalarFn::step(2.0, 1.0, 100.0);
        assert_eq!(s.eval(2.0), 0.0);
        assert_eq!(s.eval(2.0 + 1e-12), 1.0);
        assert_eq!(s.eval(0.5), 0.0);
        assert_eq!(s.eval(50.0), 1.0);
        assert_eq!(s.eval(1000.0), 1.0); // clamps beyond last knot
        assert!(s.is_piecewise_constant());
    }

    #[test]
    fn hill_rate_shift_vanishes_below_threshold() {
        let h = ScalarFn::HillRate {
            a: 2.0,
            p: 2.0,
            k: 1.0,
            shift: 2.0,
        };
        assert_eq!(h.eval(1.9), 0.0);
        assert_eq!(h.eval(2.0), 0.0);
        assert!(h.eval(2.1) > 0.0);
        assert_abs_diff_eq!(h.eval(3.0), 2.0 * 1.0 / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let fns = vec![
            ScalarFn::Linear { a: 2.0, b: 1.0 },
            ScalarFn::PowerLaw { a: 1.5, p: 1.7, b: 0.2 },
            ScalarFn::HillRate { a: 1.0, p: 2.0, k: 3.0, shift: 0.5 },
            ScalarFn::PiecewiseLinear { knots: vec![(0.0, 1.0), (2.0, 3.0), (5.0, 0.5)] },
            ScalarFn::ShiftedTable { x0: 0.0, dx: 0.5, values: vec![1.0, 2.0, 1.5, 1.0, 0.5] },
        ];
        let h = 1e-6;
        for f in &fns {
            for &m in &[0.7, 1.3, 3.3] {
                let fd = (f.eval(m + h) - f.eval(m - h)) / (2.0 * h);
                assert_abs_diff_eq!(f.deriv(m), fd, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn table_clamps_and_interpolates() {
        let t = ScalarFn::ShiftedTable {
            x0: 2.0,
            dx: 1.0,
            values: vec![1.0, 3.0, 2.0],
        };
        assert_eq!(t.eval(0.0), 1.0);
        assert_eq!(t.eval(2.5), 2.0);
        assert_eq!(t.eval(10.0), 2.0);
    }

    #[test]
    fn serde_round_trip() {
        let f = ScalarFn::HillRate { a: 1.0, p: 2.0, k: 0.5, shift: 2.0 };
        let s = serde_json::to_string(&f).unwrap();
        let g: ScalarFn = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
        // shift is optional in files
        let g2: ScalarFn =
            serde_json::from_str(r#"{"family":"hill_rate","params":{"a":1.0,"p":2.0,"k":0.5}}"#)
                .unwrap();
        assert_eq!(g2, ScalarFn::HillRate { a: 1.0, p: 2.0, k: 0.5, shift: 0.0 });
    }

    #[test]
    fn invalid_knots_rejected() {
        let f = ScalarFn::PiecewiseLinear {
            knots: vec![(0.0, 0.0), (2.0, 1.0), (1.0, 2.0)],
        };
        assert_eq!(f.validate(), Err(ScalarFnError::KnotsNotSorted { index: 2 }));
    }
}

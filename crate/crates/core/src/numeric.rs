//! Scalar root finding, adaptive quadrature and an embedded Runge-Kutta
//! integrator. Everything here is deterministic: the same inputs produce
//! bit-identical results.

/// Bracketing root finder (Brent's method).
///
/// `f(a)` and `f(b)` must have opposite signs. Returns the abscissa where
/// `|f| ~ 0` within `tol` on the argument.
pub fn brent<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa * fb > 0.0 {
        return None;
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..200 {
        if fb == 0.0 || (b - a).abs() < tol {
            return Some(b);
        }
        let mut s = if fa != fc && fb != fc {
            // inverse quadratic interpolation
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let cond = !((lo.min(b) < s && s < lo.max(b))
            && (!mflag || (s - b).abs() < (b - c).abs() / 2.0)
            && (mflag || (s - b).abs() < d.abs() / 2.0));
        if cond {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s);
        d = c - b;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Some(b)
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        return left + right + err / 15.0;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` with absolute
/// tolerance `tol`. Exact for cubics on a panel; integrands with kinks
/// should be split at the kinks by the caller.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(fa, fm, fb, b - a);
    adaptive_step(&f, a, b, fa, fm, fb, whole, tol.max(1e-300), 48)
}

/// Adaptive Simpson over `[a, b]` split at the sorted interior
/// breakpoints in `cuts` (entries outside `(a, b)` are ignored).
pub fn adaptive_simpson_split<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, cuts: &[f64], tol: f64) -> f64 {
    let mut total = 0.0;
    let mut lo = a;
    for &c in cuts {
        if c > lo && c < b {
            total += adaptive_simpson(&f, lo, c, tol);
            lo = c;
        }
    }
    total + adaptive_simpson(&f, lo, b, tol)
}

/// Dormand-Prince 5(4) coefficients.
const DP_C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Outcome of a scalar ODE integration.
pub enum OdeOutcome {
    /// Reached the final time; carries the final state.
    Done(f64),
    /// The guard predicate fired; carries the state at the (bracketed) stop.
    Stopped(f64),
}

/// Integrate the scalar autonomous ODE `y' = f(y)` from `y0` over a time
/// span of length `t` (`t >= 0`) with adaptive Dormand-Prince 5(4).
///
/// `stop` is a guard: integration halts as soon as the state would violate
/// it (used for domain exits). Per-step error target is `tol`.
pub fn integrate_ode<F, G>(f: F, y0: f64, t: f64, tol: f64, stop: G) -> OdeOutcome
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> bool,
{
    if t == 0.0 {
        return OdeOutcome::Done(y0);
    }
    let mut y = y0;
    let mut s = 0.0;
    let mut h = (t / 16.0).max(1e-12).min(t);
    let mut k = [0.0f64; 7];
    if stop(y0) {
        return OdeOutcome::Stopped(y0);
    }
    let mut steps = 0usize;
    while s < t {
        steps += 1;
        if steps > 4_000_000 {
            // pathological velocity; bail out with what we have
            return OdeOutcome::Done(y);
        }
        if s + h > t {
            h = t - s;
        }
        k[0] = f(y);
        let mut reject = false;
        for i in 0..6 {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate().take(i + 1) {
                acc += DP_A[i][j] * kj;
            }
            let yi = y + h * acc;
            if !yi.is_finite() || stop(yi) {
                // shrink towards the boundary instead of stepping over it
                reject = true;
                break;
            }
            let _ = DP_C; // stage abscissae unused for autonomous systems
            k[i + 1] = f(yi);
        }
        if reject {
            h *= 0.5;
            if h < 1e-14 * (1.0 + t) {
                return OdeOutcome::Stopped(y);
            }
            continue;
        }
        let mut y5 = 0.0;
        let mut y4 = 0.0;
        for i in 0..7 {
            y5 += DP_B5[i] * k[i];
            y4 += DP_B4[i] * k[i];
        }
        let ynew = y + h * y5;
        let err = (h * (y5 - y4)).abs();
        let scale = tol * (1.0 + y.abs());
        if err <= scale || h < 1e-13 * (1.0 + t) {
            y = ynew;
            s += h;
            if stop(y) {
                return OdeOutcome::Stopped(y);
            }
        }
        let q = if err > 0.0 {
            0.9 * (scale / err).powf(0.2)
        } else {
            4.0
        };
        h *= q.clamp(0.2, 4.0);
    }
    OdeOutcome::Done(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn brent_finds_simple_root() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert_abs_diff_eq!(r, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn simpson_integrates_exponential() {
        let v = adaptive_simpson(|x| x.exp(), 0.0, 1.0, 1e-12);
        assert_abs_diff_eq!(v, 1f64.exp() - 1.0, epsilon = 1e-10);
    }

    #[test]
    fn simpson_split_handles_step() {
        // step integrand: exact once split at the jump
        let f = |x: f64| if x > 2.0 { 1.0 } else { 0.0 };
        let v = adaptive_simpson_split(f, 0.0, 5.0, &[2.0], 1e-12);
        assert_abs_diff_eq!(v, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn ode_exponential_growth() {
        // y' = y, y(0)=1 -> e
        match integrate_ode(|y| y, 1.0, 1.0, 1e-12, |_| false) {
            OdeOutcome::Done(y) => assert_abs_diff_eq!(y, 1f64.exp(), epsilon = 1e-9),
            _ => panic!("unexpected stop"),
        }
    }

    #[test]
    fn ode_guard_stops_at_boundary() {
        // y' = -1 from y=1; guard at y<0 must stop near 0 before t=2
        match integrate_ode(|_| -1.0, 1.0, 2.0, 1e-10, |y| y < 0.0) {
            OdeOutcome::Stopped(y) => assert!(y.abs() < 1e-6, "stopped at {y}"),
            OdeOutcome::Done(_) => panic!("guard did not fire"),
        }
    }
}

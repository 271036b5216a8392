//! One-dimensional maximization and Young–Fenchel conjugation.
//!
//! Every objective handled here is concave on `[x_lo, ∞)` and may take the
//! value `-∞` outside the domain of the underlying log-MGF, which acts as a
//! barrier. Suprema are one-sided (`x ≥ x_lo`); two-sided transforms are
//! obtained by calling twice with the sign of the argument reflected.

use crate::error::{Error, Result};

/// Default absolute (relative for |x| > 1) tolerance in the argument.
pub const DEFAULT_X_TOL: f64 = 1e-9;

const INV_PHI: f64 = 0.618_033_988_749_894_9;
const MAX_DOUBLINGS: i32 = 64;
/// Average slope over the last doubling below which growth is treated as
/// saturation rather than unboundedness.
const UNBOUNDED_SLOPE: f64 = 1e-6;

/// Location and value of a one-dimensional supremum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub x: f64,
    /// `+∞` when the objective is unbounded above.
    pub value: f64,
}

impl Maximum {
    pub fn is_unbounded(&self) -> bool {
        self.value == f64::INFINITY
    }
}

#[inline]
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Golden-section search for the maximum of a unimodal function on `[a, b]`.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = sanitize(f(c));
    let mut fd = sanitize(f(d));
    for _ in 0..300 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = sanitize(f(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = sanitize(f(d));
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Maximizes a concave objective on `[x_lo, ∞)`.
///
/// Brackets the maximizer by doubling the step from `x_lo` until the
/// objective stops increasing, then refines by golden section to `tol`
/// (relative once |x| exceeds one). Growth that persists through 64
/// doublings with a non-vanishing slope is reported as `value = +∞`.
pub fn maximize_concave<F: Fn(f64) -> f64>(obj: F, x_lo: f64, tol: f64) -> Maximum {
    maximize_concave_with_step(obj, x_lo, 1.0, tol)
}

/// [`maximize_concave`] with an explicit initial step.
pub fn maximize_concave_with_step<F: Fn(f64) -> f64>(
    obj: F,
    x_lo: f64,
    step: f64,
    tol: f64,
) -> Maximum {
    let f = |x: f64| sanitize(obj(x));
    let f_lo = f(x_lo);
    let mut best = Maximum {
        x: x_lo,
        value: f_lo,
    };

    let mut before = x_lo;
    let (mut prev_x, mut prev_f) = (x_lo, f_lo);
    let mut before_f = f_lo;
    for k in 0..MAX_DOUBLINGS {
        let x = x_lo + step * 2f64.powi(k);
        let fx = f(x);
        if fx == f64::INFINITY {
            return Maximum {
                x,
                value: f64::INFINITY,
            };
        }
        if !(fx > prev_f) {
            let tol_x = tol * x.abs().max(1.0);
            let (xs, vs) = golden_max(&f, before, x, tol_x);
            for (cx, cv) in [(xs, vs), (prev_x, prev_f)] {
                if cv > best.value {
                    best = Maximum { x: cx, value: cv };
                }
            }
            return best;
        }
        before = prev_x;
        before_f = prev_f;
        prev_x = x;
        prev_f = fx;
    }

    let slope = (prev_f - before_f) / (prev_x - before);
    if slope > UNBOUNDED_SLOPE {
        Maximum {
            x: prev_x,
            value: f64::INFINITY,
        }
    } else {
        Maximum {
            x: prev_x,
            value: prev_f,
        }
    }
}

/// One-sided Young–Fenchel transform `sup_{x ≥ 0} (x·u − f(x))` with its
/// maximizer. For `f(0) = 0` the value is nonnegative.
pub fn fenchel_argmax<F: Fn(f64) -> f64>(f: F, u: f64) -> Maximum {
    let m = maximize_concave(|x| x * u - f(x), 0.0, DEFAULT_X_TOL);
    if m.value < 0.0 {
        Maximum { x: 0.0, value: 0.0 }
    } else {
        m
    }
}

/// One-sided Young–Fenchel transform `sup_{x ≥ 0} (x·u − f(x))`.
pub fn fenchel<F: Fn(f64) -> f64>(f: F, u: f64) -> f64 {
    fenchel_argmax(f, u).value
}

/// Solves `f(x) = y` for continuous strictly increasing `f` on `[x_lo, ∞)`.
///
/// The upper end of the bracket starts at `x_hi_hint` and is pushed outward
/// geometrically; `f = +∞` counts as having passed the target. The result
/// satisfies `|f(x) − y| ≤ 1e-10·max(1, |y|)` unless the bracket collapses
/// to adjacent floats first.
pub fn invert_monotone<F: Fn(f64) -> f64>(f: F, y: f64, x_lo: f64, x_hi_hint: f64) -> Result<f64> {
    let target_tol = 1e-10 * y.abs().max(1.0);
    let f_lo = f(x_lo);
    if f_lo.is_nan() || f_lo > y + target_tol {
        return Err(Error::NotBracketed { target: y, x_lo });
    }
    if (f_lo - y).abs() <= target_tol {
        return Ok(x_lo);
    }
    let mut lo = x_lo;
    let mut width = if x_hi_hint > x_lo {
        x_hi_hint - x_lo
    } else {
        1.0
    };
    let mut hi = x_lo + width;
    let mut f_hi = f(hi);
    let mut expansions = 0;
    while !(f_hi >= y) {
        if f_hi.is_nan() || expansions > 2000 || hi > 1e300 {
            return Err(Error::NotBracketed { target: y, x_lo });
        }
        lo = hi;
        width *= 2.0;
        hi = x_lo + width;
        f_hi = f(hi);
        expansions += 1;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        if f(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

//! Scalar root bracketing and Brent's method.

/// Brent's method on a bracket with `f(a)` and `f(b)` of opposite sign (or zero).
/// Stops when the bracket is narrower than `rtol·|x|` or after 200 iterations.
pub fn brent(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64, rtol: f64) -> f64 {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 0.5 * rtol * b.abs() + f64::MIN_POSITIVE;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (p, q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            let (p, q) = if p > 0.0 { (p, -q) } else { (-p, q) };
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    b
}

/// Bisection for the boundary of the set where `pred` holds, given
/// `pred(lo) != pred(hi)`; returns the endpoint on the `pred(lo)` side.
pub fn bisect_boundary(mut pred: impl FnMut(f64) -> bool, mut lo: f64, mut hi: f64, rtol: f64) -> f64 {
    let left = pred(lo);
    for _ in 0..200 {
        if (hi - lo).abs() <= rtol * lo.abs().max(hi.abs()) {
            break;
        }
        let mid = (lo * hi).sqrt();
        let mid = if mid > lo.min(hi) && mid < lo.max(hi) { mid } else { 0.5 * (lo + hi) };
        if pred(mid) == left {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

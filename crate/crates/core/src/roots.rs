//! Bracketed scalar root finding.

/// Result of [`brent`]: the root estimate and the final sign-change bracket.
#[derive(Clone, Copy, Debug)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub bracket: (f64, f64),
    pub evals: usize,
}

/// Brent's method on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite
/// sign (or one of them zero). Terminates when the bracket is narrower than
/// `xtol`, when `|f| <= ftol`, or after `max_eval` evaluations. Errors from `f`
/// are propagated; a bracket without a sign change yields `Ok(None)`.
pub fn brent<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    fa: Option<f64>,
    fb: Option<f64>,
    xtol: f64,
    ftol: f64,
    max_eval: usize,
) -> Result<Option<Root>, E> {
    let mut evals = 0;
    let (mut a, mut b) = (a, b);
    let mut fa = match fa {
        Some(v) => v,
        None => {
            evals += 1;
            f(a)?
        }
    };
    let mut fb = match fb {
        Some(v) => v,
        None => {
            evals += 1;
            f(b)?
        }
    };
    if fa == 0.0 {
        return Ok(Some(Root {
            x: a,
            fx: fa,
            bracket: (a, a),
            evals,
        }));
    }
    if fb == 0.0 {
        return Ok(Some(Root {
            x: b,
            fx: fb,
            bracket: (b, b),
            evals,
        }));
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return Ok(None);
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    loop {
        // b is the best estimate, a the previous one, c the sign-change partner
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
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= ftol || evals >= max_eval {
            let bracket = if b < c { (b, c) } else { (c, b) };
            return Ok(Some(Root {
                x: b,
                fx: fb,
                bracket,
                evals,
            }));
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
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
        evals += 1;
        fb = f(b)?;
    }
}

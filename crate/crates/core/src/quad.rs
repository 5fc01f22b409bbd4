//! Small numerical utilities shared across modules: adaptive Simpson
//! quadrature (real and complex) and stable log-space reductions.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuadError {
    #[error("quadrature failed to converge on [{a}, {b}] (requested tol {tol:.3e})")]
    NoConvergence { a: f64, b: f64, tol: f64 },
}

const MAX_DEPTH: u32 = 50;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, QuadError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    let at_resolution = (b - a).abs() <= 1e-14 * (a.abs() + b.abs() + 1e-30);
    if delta.abs() <= 15.0 * tol || at_resolution {
        return Ok(left + right + delta / 15.0);
    }
    if depth >= MAX_DEPTH {
        return Err(QuadError::NoConvergence { a, b, tol });
    }
    let l = adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?;
    let r = adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?;
    Ok(l + r)
}

/// Adaptive Simpson integral of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    adaptive_step(&f, a, b, fa, fm, fb, whole, tol, 0)
}

fn simpson_c(fa: Complex64, fm: Complex64, fb: Complex64, h: f64) -> Complex64 {
    (fa + 4.0 * fm + fb) * (h / 6.0)
}

fn adaptive_step_c(
    f: &impl Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    fa: Complex64,
    fm: Complex64,
    fb: Complex64,
    whole: Complex64,
    tol: f64,
    depth: u32,
) -> Result<Complex64, QuadError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_c(fa, flm, fm, m - a);
    let right = simpson_c(fm, frm, fb, b - m);
    let delta = left + right - whole;
    let at_resolution = (b - a).abs() <= 1e-14 * (a.abs() + b.abs() + 1e-30);
    if delta.norm() <= 15.0 * tol || at_resolution {
        return Ok(left + right + delta / 15.0);
    }
    if depth >= MAX_DEPTH {
        return Err(QuadError::NoConvergence { a, b, tol });
    }
    let l = adaptive_step_c(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?;
    let r = adaptive_step_c(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?;
    Ok(l + r)
}

/// Adaptive Simpson integral of a complex-valued integrand.
pub fn integrate_complex(
    f: impl Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<Complex64, QuadError> {
    if a == b {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson_c(fa, fm, fb, b - a);
    adaptive_step_c(&f, a, b, fa, fm, fb, whole, tol, 0)
}

/// `log(Σ exp(x_i))` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// `log((1/n) Σ exp(x_i))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

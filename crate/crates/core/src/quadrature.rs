//! Adaptive Simpson quadrature, with a power-law tail model for integrals to
//! infinity.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureMethod {
    #[default]
    AdaptiveSimpson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub method: QuadratureMethod,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
    /// Improper integrals are evaluated on `[a, cutoff]` plus a power-law
    /// estimate of the remainder.
    pub infinity_cutoff: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            method: QuadratureMethod::AdaptiveSimpson,
            abs_tol: 1e-13,
            rel_tol: 1e-11,
            max_depth: 40,
            infinity_cutoff: 1e8,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("invalid quadrature configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("integrand is not finite at x = {x}")]
    NonFiniteIntegrand { x: f64 },
    #[error("integrand decays like x^-{exponent:.3} at infinity; the integral diverges")]
    DivergentTail { exponent: f64 },
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(QuadratureError::InvalidConfig("tolerances must be positive"));
        }
        if self.max_depth == 0 {
            return Err(QuadratureError::InvalidConfig("max_depth must be positive"));
        }
        if !(self.infinity_cutoff > 0.0 && self.infinity_cutoff.is_finite()) {
            return Err(QuadratureError::InvalidConfig("infinity_cutoff must be positive and finite"));
        }
        Ok(())
    }
}

fn eval(f: &impl Fn(f64) -> f64, x: f64) -> Result<f64, QuadratureError> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(QuadratureError::NonFiniteIntegrand { x })
    }
}

/// `∫_a^b f`, with the usual sign convention when `b < a`.
pub fn integrate(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    qc: &QuadratureConfig,
) -> Result<f64, QuadratureError> {
    qc.validate()?;
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, qc).map(|v| -v);
    }
    let (fa, fb) = (eval(f, a)?, eval(f, b)?);
    let m = 0.5 * (a + b);
    let fm = eval(f, m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = qc.abs_tol.max(qc.rel_tol * whole.abs());
    simpson(f, [a, m, b], [fa, fm, fb], whole, tol, qc.max_depth)
}

fn simpson(
    f: &impl Fn(f64) -> f64,
    [a, m, b]: [f64; 3],
    [fa, fm, fb]: [f64; 3],
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, QuadratureError> {
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (eval(f, lm)?, eval(f, rm)?);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || m <= a || b <= m {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson(f, [a, lm, m], [fa, flm, fm], left, 0.5 * tol, depth - 1)?
        + simpson(f, [m, rm, b], [fm, frm, fb], right, 0.5 * tol, depth - 1)?)
}

/// Decay exponent `p` of `f(x) ~ x^{-p}` near `x`, from `f(x)` and `f(2x)`.
/// Infinite once the integrand has underflowed.
pub fn tail_exponent(f: &impl Fn(f64) -> f64, x: f64) -> Result<f64, QuadratureError> {
    let (f1, f2) = (eval(f, x)?.abs(), eval(f, 2.0 * x)?.abs());
    if f1 == 0.0 || f2 == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((f1 / f2).ln() / std::f64::consts::LN_2)
}

/// `∫_x^∞ f` beyond the cutoff `L`, modelled as `L f(L) / (p - 1)`.
pub fn tail_remainder(f: &impl Fn(f64) -> f64, qc: &QuadratureConfig) -> Result<f64, QuadratureError> {
    let cutoff = qc.infinity_cutoff;
    let p = tail_exponent(f, cutoff)?.min(tail_exponent(f, 0.5 * cutoff)?);
    if p <= 1.0 + 1e-6 {
        return Err(QuadratureError::DivergentTail { exponent: p });
    }
    if p.is_infinite() {
        return Ok(0.0);
    }
    Ok(cutoff * eval(f, cutoff)? / (p - 1.0))
}

/// Geometric panel edges covering `[a, b]`, doubling from `max(a, 1)`-ish.
pub(crate) fn geometric_edges(a: f64, b: f64) -> Vec<f64> {
    let mut edges = vec![a];
    let mut x = if a > 0.0 { 2.0 * a } else { 1.0 };
    while x < b {
        if x > a {
            edges.push(x);
        }
        x *= 2.0;
    }
    edges.push(b);
    edges
}

/// `∫_a^∞ f` for nonnegative, eventually power-law or faster decaying `f`.
pub fn integrate_to_infinity(
    f: &impl Fn(f64) -> f64,
    a: f64,
    qc: &QuadratureConfig,
) -> Result<f64, QuadratureError> {
    qc.validate()?;
    let tail = tail_remainder(f, qc)?;
    let cutoff = qc.infinity_cutoff;
    if a >= cutoff {
        // power-law model from a onwards
        let p = tail_exponent(f, a)?;
        if p <= 1.0 {
            return Err(QuadratureError::DivergentTail { exponent: p });
        }
        return Ok(if p.is_infinite() { 0.0 } else { a * eval(f, a)? / (p - 1.0) });
    }
    let edges = geometric_edges(a, cutoff);
    let mut sum = tail;
    for w in edges.windows(2).rev() {
        sum += integrate(f, w[0], w[1], qc)?;
    }
    Ok(sum)
}

/// Golden-section search for the maximum of `g` on `[lo, hi]`.
pub(crate) fn golden_max(
    g: &impl Fn(f64) -> Result<f64, QuadratureError>,
    mut lo: f64,
    mut hi: f64,
    iters: usize,
) -> Result<(f64, f64), QuadratureError> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut g1, mut g2) = (g(x1)?, g(x2)?);
    for _ in 0..iters {
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + r * (hi - lo);
            g2 = g(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - r * (hi - lo);
            g1 = g(x1)?;
        }
    }
    Ok(if g1 >= g2 { (x1, g1) } else { (x2, g2) })
}

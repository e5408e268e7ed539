//! Two-sided bounds on `λ0(Ω)` from exit-time moments, the moment-ratio
//! estimator, exponential-moment bounds, and the closed-form bounds for stable,
//! time-changed stable and radial diffusion examples.
//!
//! Moment ratios are evaluated on the scaled table (`S_k = T_k c^k / k!`), in
//! which every bound is a short ratio of `O(1)` numbers:
//!
//! * `(k!)²/(2k-1)! · T_{2k-1}/T_k² · μ(Ω) = c S_{2k-1}/S_k² · μ(Ω)`
//! * `k T_{k-1}/T_k = c S_{k-1}/S_k`
//! * `(k! m/T_k)^{1/k} = c (m/S_k)^{1/k}`

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::moments::{fact_over_pow, MomentError, MomentTable};
use crate::quadrature::{
    golden_max, integrate, tail_exponent, tail_remainder, QuadratureConfig, QuadratureError,
};

/// Relative slack of every ordering check.
pub const SANDWICH_REL_SLACK: f64 = 1e-9;

/// Coarse grid size of the supremum searches.
pub const SUP_GRID_POINTS: usize = 512;

/// Left end of the log-spaced search grid for `δ_+`.
pub const DELTA_PLUS_X_MIN: f64 = 1e-6;

const GOLDEN_ITERS: usize = 80;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("order {k} needs moments up to {needed}, table stops at {max}")]
    OrderOutOfRange { k: usize, needed: usize, max: usize },
    #[error("μ(φ0)² must be positive, got {0}")]
    NonpositiveMass(f64),
    #[error("the estimator needs at least 3 orders, got {max_order}")]
    InsufficientOrders { max_order: usize },
    #[error("beta = {beta} must lie in [0, {lambda0})")]
    BetaAtOrAboveLambda0 { beta: f64, lambda0: f64 },
    #[error("beta = {beta} must be nonnegative")]
    NegativeBeta { beta: f64 },
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("alpha = {alpha} outside ({lo}, {hi}]")]
    AlphaOutOfRange { alpha: f64, lo: f64, hi: f64 },
    #[error("volume must be positive, got {0}")]
    NonpositiveVolume(f64),
    #[error("need 0 <= r < D, got r = {r}, D = {d}")]
    InvalidRange { r: f64, d: f64 },
    #[error("σ^-α decays like x^-{exponent:.3}; the tail integral diverges and δ_+ is infinite")]
    DivergentTail { exponent: f64 },
    #[error("integrand is not finite at x = {x}")]
    NonFiniteIntegrand { x: f64 },
    #[error("invalid quadrature configuration: {0}")]
    InvalidQuadrature(&'static str),
    #[error(transparent)]
    Moments(#[from] MomentError),
}

impl From<QuadratureError> for BoundsError {
    fn from(e: QuadratureError) -> Self {
        match e {
            QuadratureError::DivergentTail { exponent } => BoundsError::DivergentTail { exponent },
            QuadratureError::NonFiniteIntegrand { x } => BoundsError::NonFiniteIntegrand { x },
            QuadratureError::InvalidConfig(m) => BoundsError::InvalidQuadrature(m),
        }
    }
}

fn need(mt: &MomentTable, k: usize, needed: usize) -> Result<(), BoundsError> {
    if k < 1 || needed > mt.max_order() {
        return Err(BoundsError::OrderOutOfRange { k, needed, max: mt.max_order() });
    }
    Ok(())
}

/// `λ0 ≤ (k!)²/(2k-1)! · T_{2k-1}/T_k² · μ(Ω)`.
pub fn upper_bound_odd(mt: &MomentTable, k: usize, mu_total: f64) -> Result<f64, BoundsError> {
    need(mt, k, 2 * k - 1)?;
    let sk = mt.scaled_moment(k)?;
    Ok(mt.scale() * mt.scaled_moment(2 * k - 1)? / (sk * sk) * mu_total)
}

/// `λ0 ≤ k T_{k-1}/T_k`.
pub fn upper_bound_ratio(mt: &MomentTable, k: usize) -> Result<f64, BoundsError> {
    need(mt, k, k)?;
    Ok(mt.scale() * mt.scaled_moment(k - 1)? / mt.scaled_moment(k)?)
}

/// `(2k T_{2k-1}/T_{2k}, (2k-1) T_{2k-2}/T_{2k-1})`, the even and odd members
/// of the ratio sequence.
pub fn proof_bounds(mt: &MomentTable, k: usize) -> Result<(f64, f64), BoundsError> {
    need(mt, k, 2 * k)?;
    Ok((upper_bound_ratio(mt, 2 * k)?, upper_bound_ratio(mt, 2 * k - 1)?))
}

/// `λ0 ≥ (k! μ(φ0)² / T_k)^{1/k}`.
pub fn lower_bound(mt: &MomentTable, mass0_sq: f64, k: usize) -> Result<f64, BoundsError> {
    need(mt, k, k)?;
    if !(mass0_sq > 0.0) {
        return Err(BoundsError::NonpositiveMass(mass0_sq));
    }
    let ratio = mass0_sq / mt.scaled_moment(k)?;
    Ok(mt.scale() * ratio.powf(1.0 / k as f64))
}

/// Moment-ratio estimate of `λ0` with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lambda0Estimate {
    pub estimate: f64,
    /// Whether the Δ² step was used (otherwise `estimate = r_K`).
    pub accelerated: bool,
    /// `r_k = k T_{k-1}/T_k` for `k = 1..=K`.
    pub ratios: Vec<f64>,
    /// `λ̂^k T_k / k!` for `k = 0..=K`; tends to `μ(φ0)²` when `λ̂ = λ0`.
    pub products: Vec<f64>,
}

/// Aitken-Δ² extrapolation of `r_k = k T_{k-1}/T_k`, which decreases to `λ0`
/// geometrically at rate `λ0/λ1`.
pub fn estimate_lambda0(mt: &MomentTable) -> Result<Lambda0Estimate, BoundsError> {
    let kmax = mt.max_order();
    if kmax < 3 {
        return Err(BoundsError::InsufficientOrders { max_order: kmax });
    }
    let ratios = (1..=kmax).map(|k| upper_bound_ratio(mt, k)).collect::<Result<Vec<_>, _>>()?;
    let (r0, r1, r2) = (ratios[kmax - 3], ratios[kmax - 2], ratios[kmax - 1]);
    let (d1, d2) = (r1 - r0, r2 - r1);
    let denom = d2 - d1;
    let noise = 64.0 * f64::EPSILON * r2.abs();
    let mut estimate = r2;
    let mut accelerated = false;
    if d2.abs() > noise && denom.abs() > noise {
        let cand = r2 - d2 * d2 / denom;
        // only accept a step that stays below r_K and does not jump further
        // than the last difference could explain
        if cand.is_finite() && cand > 0.0 && cand <= r2 && r2 - cand <= (r2 - r1).abs() * 1e3 {
            estimate = cand;
            accelerated = true;
        }
    }
    let products = (0..=kmax)
        .map(|k| Ok((estimate / mt.scale()).powi(k as i32) * mt.scaled_moment(k)?))
        .collect::<Result<Vec<_>, BoundsError>>()?;
    Ok(Lambda0Estimate { estimate, accelerated, ratios, products })
}

/// `((1 + β/(λ0-β)) μ(φ0)², (1 + β/(λ0-β)) μ(Ω))`, bracketing `E_μ[e^{βτ}]`.
pub fn exp_moment_bounds(
    lambda0: f64,
    beta: f64,
    mu_total: f64,
    mass0_sq: f64,
) -> Result<(f64, f64), BoundsError> {
    if beta < 0.0 {
        return Err(BoundsError::NegativeBeta { beta });
    }
    if beta >= lambda0 {
        return Err(BoundsError::BetaAtOrAboveLambda0 { beta, lambda0 });
    }
    let factor = 1.0 + beta / (lambda0 - beta);
    Ok((factor * mass0_sq, factor * mu_total))
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(d: u32) -> f64 {
    let h = d as f64 / 2.0;
    std::f64::consts::PI.powf(h) / gamma(h + 1.0)
}

/// Eigenvalue sandwich for the symmetric α-stable process on a bounded
/// domain of given volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlmBounds {
    pub lower: f64,
    /// `(λ0 of the Brownian case)^{α/2}`, when that eigenvalue is known.
    pub upper: Option<f64>,
    pub vol: f64,
    pub alpha: f64,
}

impl BlmBounds {
    /// `(k! m / upper^k, k! vol / lower^k)` with `m` the squared mass of the
    /// principal eigenfunction; the left end needs `upper`.
    pub fn moment_bounds(&self, k: usize, mass0_sq: f64) -> (Option<f64>, f64) {
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        (
            self.upper.map(|u| fact * mass0_sq / u.powi(k as i32)),
            fact * self.vol / self.lower.powi(k as i32),
        )
    }
}

pub fn blm_stable_bounds(
    d: u32,
    alpha: f64,
    vol: f64,
    lambda0_brownian: Option<f64>,
) -> Result<BlmBounds, BoundsError> {
    if d == 0 {
        return Err(BoundsError::InvalidDimension);
    }
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(BoundsError::AlphaOutOfRange { alpha, lo: 0.0, hi: 2.0 });
    }
    if !(vol > 0.0 && vol.is_finite()) {
        return Err(BoundsError::NonpositiveVolume(vol));
    }
    let df = d as f64;
    let ratio = alpha / df;
    let lower = unit_ball_volume(d).powf(ratio)
        * 2f64.powf(alpha)
        * gamma(1.0 + alpha / 2.0)
        * gamma((df + alpha) / 2.0)
        / (gamma(df / 2.0) * vol.powf(ratio));
    Ok(BlmBounds { lower, upper: lambda0_brownian.map(|l| l.powf(alpha / 2.0)), vol, alpha })
}

/// `δ_+ = sup_{x>0} x^{α-1} ∫_x^∞ σ(z)^{-α} dz` and the eigenvalue bound
/// `(α-1) Γ(α/2)² / (4 δ_+)` on the half-line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPlus {
    pub delta_plus: f64,
    pub eigen_lower: f64,
    /// Maximizer found by the search.
    pub argsup: f64,
    /// The supremum sits at the right end of the search range and is
    /// approached as `x → ∞`.
    pub at_infinity: bool,
    pub alpha: f64,
}

impl DeltaPlus {
    /// `k! μ / λ_-^k` with `λ_-` the eigenvalue lower bound.
    pub fn moment_upper(&self, k: usize, mu_total: f64) -> f64 {
        fact_over_pow(k, self.eigen_lower) * mu_total
    }

    /// `(1 + β/(λ_- - β)) μ` for `0 ≤ β < λ_-`.
    pub fn exp_upper(&self, beta: f64, mu_total: f64) -> Result<f64, BoundsError> {
        exp_moment_bounds(self.eigen_lower, beta, mu_total, mu_total).map(|(_, u)| u)
    }
}

pub fn delta_plus(
    sigma: impl Fn(f64) -> f64,
    alpha: f64,
    qc: &QuadratureConfig,
) -> Result<DeltaPlus, BoundsError> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(BoundsError::AlphaOutOfRange { alpha, lo: 1.0, hi: 2.0 });
    }
    qc.validate()?;
    let f = |z: f64| sigma(z).powf(-alpha);
    let cutoff = qc.infinity_cutoff;
    let tail = tail_remainder(&f, qc)?;

    let n = SUP_GRID_POINTS;
    let (l0, l1) = (DELTA_PLUS_X_MIN.ln(), cutoff.ln());
    let xs: Vec<f64> = (0..n)
        .map(|j| if j + 1 == n { cutoff } else { (l0 + (l1 - l0) * j as f64 / (n - 1) as f64).exp() })
        .collect();
    // cumulative tail integrals I(x_j) = ∫_{x_j}^∞ f
    let mut tails = vec![0.0; n];
    tails[n - 1] = tail;
    for j in (0..n - 1).rev() {
        tails[j] = tails[j + 1] + integrate(&f, xs[j], xs[j + 1], qc)?;
    }
    let g_grid: Vec<f64> = xs.iter().zip(&tails).map(|(x, i)| x.powf(alpha - 1.0) * i).collect();
    let jmax = (0..n).fold(0, |b, j| if g_grid[j] > g_grid[b] { j } else { b });

    let (mut argsup, mut best) = (xs[jmax], g_grid[jmax]);
    // a plateau reaching the cutoff means the supremum is the limit at infinity;
    // summation noise decides where on the plateau the grid maximum lands
    let at_infinity = g_grid[n - 1] >= best * (1.0 - 1e-9);
    if at_infinity {
        argsup = cutoff;
    }
    if !at_infinity {
        let lo = xs[jmax.saturating_sub(1)];
        let hi = xs[jmax + 1];
        let right_tail = tails[jmax + 1];
        let g = |t: f64| -> Result<f64, QuadratureError> {
            let x = t.exp();
            Ok(x.powf(alpha - 1.0) * (integrate(&f, x, hi, qc)? + right_tail))
        };
        let (t, v) = golden_max(&g, lo.ln(), hi.ln(), GOLDEN_ITERS)?;
        if v > best {
            argsup = t.exp();
            best = v;
        }
    } else {
        // x^{α-1} ∫_x^∞ f grows without bound when f decays slower than x^{-α}
        let p = tail_exponent(&f, cutoff)?;
        if p < alpha - 1e-3 {
            return Err(BoundsError::DivergentTail { exponent: p });
        }
    }
    let eigen_lower = (alpha - 1.0) * gamma(alpha / 2.0).powi(2) / (4.0 * best);
    Ok(DeltaPlus { delta_plus: best, eigen_lower, argsup, at_infinity, alpha })
}

/// `δ_r = sup_{r≤t≤D} ∫_r^t e^{-C(l)} dl · ∫_t^D e^{C(s)} ds` with
/// `C(l) = ∫_1^l γ`, and the eigenvalue bound `λ0(B_r) ≥ 1/(4 δ_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaR {
    pub delta_r: f64,
    pub eigen_lower: f64,
    pub argsup: f64,
    /// `D - r`; the bound blows up as this shrinks.
    pub width: f64,
}

impl DeltaR {
    /// `T_k(B_r) ≤ k! μ(B_r) / λ0^k ≤ k! μ(B_r) (4 δ_r)^k`.
    pub fn moment_upper(&self, k: usize, mu_ball: f64) -> f64 {
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        fact * mu_ball * (4.0 * self.delta_r).powi(k as i32)
    }

    /// `(1 + 4βδ_r/(1 - 4βδ_r)) μ(B_r)` for `0 ≤ β < 1/(4δ_r)`.
    pub fn exp_upper(&self, beta: f64, mu_ball: f64) -> Result<f64, BoundsError> {
        exp_moment_bounds(self.eigen_lower, beta, mu_ball, mu_ball).map(|(_, u)| u)
    }
}

pub fn delta_r(
    gamma_fn: impl Fn(f64) -> f64,
    d: f64,
    r: f64,
    qc: &QuadratureConfig,
) -> Result<DeltaR, BoundsError> {
    if !(r >= 0.0 && r < d && d.is_finite()) {
        return Err(BoundsError::InvalidRange { r, d });
    }
    qc.validate()?;
    let n = SUP_GRID_POINTS;
    let ts: Vec<f64> =
        (0..n).map(|j| if j + 1 == n { d } else { r + (d - r) * j as f64 / (n - 1) as f64 }).collect();
    let mut c = vec![integrate(&gamma_fn, 1.0, ts[0], qc)?; n];
    for j in 1..n {
        c[j] = c[j - 1] + integrate(&gamma_fn, ts[j - 1], ts[j], qc)?;
    }
    // ∫_p^q e^{±C(l)} dl with C(l) = C(p) + ∫_p^l γ
    let exp_c = |p: f64, cp: f64, q: f64, sign: f64| -> Result<f64, QuadratureError> {
        let h = |l: f64| match integrate(&gamma_fn, p, l, qc) {
            Ok(v) => (sign * (cp + v)).exp(),
            Err(_) => f64::NAN,
        };
        integrate(&h, p, q, qc)
    };
    let mut left = vec![0.0; n];
    for j in 1..n {
        left[j] = left[j - 1] + exp_c(ts[j - 1], c[j - 1], ts[j], -1.0)?;
    }
    let mut right = vec![0.0; n];
    for j in (0..n - 1).rev() {
        right[j] = right[j + 1] + exp_c(ts[j], c[j], ts[j + 1], 1.0)?;
    }
    let prod: Vec<f64> = left.iter().zip(&right).map(|(a, b)| a * b).collect();
    let jmax = (0..n).fold(0, |b, j| if prod[j] > prod[b] { j } else { b });
    let (mut argsup, mut best) = (ts[jmax], prod[jmax]);
    if jmax > 0 && jmax + 1 < n {
        let (lo, hi) = (ts[jmax - 1], ts[jmax + 1]);
        let (c_lo, a_lo, b_hi) = (c[jmax - 1], left[jmax - 1], right[jmax + 1]);
        let g = |t: f64| -> Result<f64, QuadratureError> {
            let a = a_lo + exp_c(lo, c_lo, t, -1.0)?;
            let ct = c_lo + integrate(&gamma_fn, lo, t, qc)?;
            let b = b_hi + exp_c(t, ct, hi, 1.0)?;
            Ok(a * b)
        };
        let (t, v) = golden_max(&g, lo, hi, GOLDEN_ITERS)?;
        if v > best {
            argsup = t;
            best = v;
        }
    }
    Ok(DeltaR { delta_r: best, eigen_lower: 1.0 / (4.0 * best), argsup, width: d - r })
}

/// Bounds at one moment order; entries are absent where the table is too
/// short or `T_k` overflows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderBounds {
    pub k: usize,
    pub t_k: Option<f64>,
    pub upper_odd: Option<f64>,
    pub upper_ratio: Option<f64>,
    pub upper_even_ratio: Option<f64>,
    pub upper_odd_ratio: Option<f64>,
    pub lower_moment: Option<f64>,
}

/// Exponential-moment bracket at one rate `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpBounds {
    pub beta: f64,
    pub lower: f64,
    pub upper: f64,
    pub exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub lambda0_ref: f64,
    pub mass0_sq: f64,
    pub mu_total: f64,
    pub orders: Vec<OrderBounds>,
    pub estimator: Option<Lambda0Estimate>,
    pub exp: Vec<ExpBounds>,
}

/// Every bound for orders `1..=K`, plus exponential brackets at each `β`.
/// `exp_exact` supplies the reference value of `E_μ[e^{βτ}]` when known.
pub fn bounds_report(
    mt: &MomentTable,
    lambda0_ref: f64,
    mass0_sq: f64,
    betas: &[f64],
    exp_exact: impl Fn(f64) -> Option<f64>,
) -> Result<BoundsReport, BoundsError> {
    let mu_total = mt.mu_total();
    let kmax = mt.max_order();
    let orders = (1..=kmax)
        .map(|k| {
            Ok(OrderBounds {
                k,
                t_k: mt.moment(k).ok(),
                upper_odd: (2 * k - 1 <= kmax).then(|| upper_bound_odd(mt, k, mu_total)).transpose()?,
                upper_ratio: Some(upper_bound_ratio(mt, k)?),
                upper_even_ratio: (2 * k <= kmax).then(|| proof_bounds(mt, k).map(|p| p.0)).transpose()?,
                upper_odd_ratio: (2 * k <= kmax).then(|| proof_bounds(mt, k).map(|p| p.1)).transpose()?,
                lower_moment: (mass0_sq > 0.0).then(|| lower_bound(mt, mass0_sq, k)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>, BoundsError>>()?;
    let estimator = (kmax >= 3).then(|| estimate_lambda0(mt)).transpose()?;
    let exp = betas
        .iter()
        .map(|&beta| {
            let (lower, upper) = exp_moment_bounds(lambda0_ref, beta, mu_total, mass0_sq)?;
            Ok(ExpBounds { beta, lower, upper, exact: exp_exact(beta) })
        })
        .collect::<Result<Vec<_>, BoundsError>>()?;
    Ok(BoundsReport { lambda0_ref, mass0_sq, mu_total, orders, estimator, exp })
}

/// One ordering `lhs ≤ rhs` from a bounds report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

impl Check {
    pub fn le(name: String, lhs: f64, rhs: f64) -> Self {
        let slack = SANDWICH_REL_SLACK * lhs.abs().max(rhs.abs());
        Check { name, lhs, rhs, passed: lhs <= rhs + slack }
    }
}

/// All orderings `lower ≤ λ0 ≤ upper` and `lower ≤ E_μ[e^{βτ}] ≤ upper`.
pub fn sandwich_check(report: &BoundsReport) -> Vec<Check> {
    let lam = report.lambda0_ref;
    let mut out = Vec::new();
    for o in &report.orders {
        let k = o.k;
        if let Some(v) = o.lower_moment {
            out.push(Check::le(format!("lower_moment({k}) <= lambda0"), v, lam));
        }
        let uppers = [
            ("upper_odd", o.upper_odd),
            ("upper_ratio", o.upper_ratio),
            ("upper_even_ratio", o.upper_even_ratio),
            ("upper_odd_ratio", o.upper_odd_ratio),
        ];
        for (name, v) in uppers {
            if let Some(v) = v {
                out.push(Check::le(format!("lambda0 <= {name}({k})"), lam, v));
            }
        }
    }
    for e in &report.exp {
        if let Some(x) = e.exact {
            let b = e.beta;
            out.push(Check::le(format!("exp_lower(beta={b}) <= E[e^(beta tau)]"), e.lower, x));
            out.push(Check::le(format!("E[e^(beta tau)] <= exp_upper(beta={b})"), x, e.upper));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::build_chain;
    use crate::killed::{kill, KilledGenerator};
    use crate::moments::exit_moments;
    use crate::spectral::{exp_moment_exact, full_spectrum};

    const LAMBDA0_BD: f64 = 0.381_966_011_250_105_1; // (3 - √5)/2
    const MASS0_SQ_BD: f64 = 1.894_427_190_999_916;

    fn single() -> KilledGenerator {
        let g = build_chain(&[vec![-2.0, 2.0], vec![0.0, 0.0]], &[1.0, 1.0]).unwrap();
        kill(&g, &[0]).unwrap()
    }

    fn birth_death() -> KilledGenerator {
        let g = build_chain(
            &[vec![-1.0, 1.0, 0.0], vec![1.0, -2.0, 1.0], vec![0.0, 1.0, -1.0]],
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        kill(&g, &[0, 1]).unwrap()
    }

    #[test]
    fn equality_case_for_a_single_rate() {
        let mt = exit_moments(&single(), 20).unwrap();
        for k in 1..=10 {
            assert_eq!(upper_bound_odd(&mt, k, 1.0).unwrap(), 2.0);
            assert_eq!(upper_bound_ratio(&mt, k).unwrap(), 2.0);
            assert_eq!(lower_bound(&mt, 1.0, k).unwrap(), 2.0);
            assert_eq!(proof_bounds(&mt, k).unwrap(), (2.0, 2.0));
        }
        let est = estimate_lambda0(&mt).unwrap();
        assert_eq!(est.estimate, 2.0);
        assert!(est.products.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn birth_death_hand_values() {
        let mt = exit_moments(&birth_death(), 20).unwrap();
        assert!((upper_bound_odd(&mt, 1, 2.0).unwrap() - 0.4).abs() < 1e-15);
        assert!((upper_bound_ratio(&mt, 2).unwrap() - 10.0 / 26.0).abs() < 1e-15);
        let (even, odd) = proof_bounds(&mt, 1).unwrap();
        assert!((even - 10.0 / 26.0).abs() < 1e-15 && (odd - 0.4).abs() < 1e-15);
        assert!((lower_bound(&mt, MASS0_SQ_BD, 1).unwrap() - MASS0_SQ_BD / 5.0).abs() < 1e-15);
        let l20 = lower_bound(&mt, MASS0_SQ_BD, 20).unwrap();
        assert!((LAMBDA0_BD - l20).abs() / LAMBDA0_BD < 1e-6, "{l20}");
        for k in 1..10 {
            assert_eq!(proof_bounds(&mt, k).unwrap().0, upper_bound_ratio(&mt, 2 * k).unwrap());
            assert_eq!(proof_bounds(&mt, k).unwrap().1, upper_bound_ratio(&mt, 2 * k - 1).unwrap());
        }
    }

    #[test]
    fn order_guards() {
        let mt = exit_moments(&birth_death(), 4).unwrap();
        assert!(matches!(upper_bound_odd(&mt, 3, 2.0), Err(BoundsError::OrderOutOfRange { .. })));
        assert!(matches!(proof_bounds(&mt, 3), Err(BoundsError::OrderOutOfRange { .. })));
        assert!(matches!(lower_bound(&mt, 0.0, 1), Err(BoundsError::NonpositiveMass(_))));
        let short = exit_moments(&birth_death(), 2).unwrap();
        assert!(matches!(estimate_lambda0(&short), Err(BoundsError::InsufficientOrders { .. })));
    }

    #[test]
    fn estimator_on_birth_death() {
        let mt = exit_moments(&birth_death(), 20).unwrap();
        let est = estimate_lambda0(&mt).unwrap();
        assert!((est.estimate - LAMBDA0_BD).abs() < 1e-8);
        assert!((est.products[20] - MASS0_SQ_BD).abs() < 1e-6);
        assert!(est.estimate <= est.ratios[19]);
    }

    #[test]
    fn exp_bounds_examples() {
        assert_eq!(exp_moment_bounds(2.0, 1.0, 1.0, 1.0).unwrap(), (2.0, 2.0));
        let (lo, up) = exp_moment_bounds(LAMBDA0_BD, LAMBDA0_BD / 2.0, 2.0, MASS0_SQ_BD).unwrap();
        assert!((lo - 2.0 * MASS0_SQ_BD).abs() < 1e-14 && (up - 4.0).abs() < 1e-14);
        let spec = full_spectrum(&birth_death()).unwrap();
        let exact = exp_moment_exact(&spec, 2.0, LAMBDA0_BD / 2.0).unwrap();
        assert!(lo < exact && exact < up);
        assert_eq!(exp_moment_bounds(1.0, 0.0, 2.0, 1.5).unwrap(), (1.5, 2.0));
        assert!(matches!(exp_moment_bounds(1.0, 1.0, 1.0, 1.0), Err(BoundsError::BetaAtOrAboveLambda0 { .. })));
    }

    #[test]
    fn blm_examples() {
        let b = blm_stable_bounds(1, 1.0, 2.0, Some(std::f64::consts::PI.powi(2) / 4.0)).unwrap();
        assert!((b.lower - 1.0).abs() < 1e-14);
        assert!((b.upper.unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
        let b2 = blm_stable_bounds(1, 2.0, 2.0, Some(std::f64::consts::PI.powi(2) / 4.0)).unwrap();
        assert!(b2.lower <= b2.upper.unwrap());
        assert!((b2.lower - 2.0).abs() < 1e-14);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-14);
        assert_eq!(blm_stable_bounds(0, 1.0, 2.0, None).unwrap_err(), BoundsError::InvalidDimension);
        assert!(blm_stable_bounds(1, 1.0, 2.0, None).unwrap().upper.is_none());
    }

    #[test]
    fn delta_plus_examples() {
        let qc = QuadratureConfig::default();
        let d = delta_plus(|z| (1.0 + z * z).sqrt(), 1.5, &qc).unwrap();
        assert!((d.delta_plus - 2.0).abs() < 1e-6, "{d:?}");
        assert!(d.at_infinity);
        let expected = 0.5 * gamma(0.75).powi(2) / 8.0;
        assert!((d.eigen_lower - expected).abs() < 1e-6);

        let e = delta_plus(f64::exp, 1.5, &qc).unwrap();
        let x: f64 = 1.0 / 3.0;
        let closed = x.sqrt() * (-1.5 * x).exp() / 1.5;
        assert!(!e.at_infinity);
        assert!((e.argsup - x).abs() < 1e-5 && (e.delta_plus - closed).abs() < 1e-10, "{e:?}");

        assert!(matches!(delta_plus(|_| 1.0, 1.5, &qc), Err(BoundsError::DivergentTail { .. })));
        assert!(matches!(delta_plus(|_| 1.0, 0.5, &qc), Err(BoundsError::AlphaOutOfRange { .. })));
    }

    #[test]
    fn delta_r_examples() {
        let qc = QuadratureConfig::default();
        let flat = delta_r(|_| 0.0, 1.0, 0.0, &qc).unwrap();
        assert!((flat.delta_r - 0.25).abs() < 1e-12);
        assert!((flat.eigen_lower - 1.0).abs() < 1e-10);
        assert!((flat.moment_upper(2, 1.0) - 2.0).abs() < 1e-10);

        // γ ≡ c: the product is (e^{-cr} - e^{-ct})(e^{cD} - e^{ct}) / c²
        let (c, d, r) = (1.5, 2.0, 0.25);
        let got = delta_r(|_| c, d, r, &qc).unwrap();
        let prod = |t: f64| ((-c * r).exp() - (-c * t).exp()) * ((c * d).exp() - (c * t).exp()) / (c * c);
        let (_, best) = golden_max(&|t| Ok(prod(t)), r, d, 200).unwrap();
        assert!((got.delta_r - best).abs() < 1e-9 * best, "{} vs {best}", got.delta_r);

        let tiny = delta_r(|_| 0.0, 1.0, 1.0 - 1e-4, &qc).unwrap();
        assert!(tiny.eigen_lower > 1e7 && tiny.eigen_lower.is_finite());
        assert!(matches!(delta_r(|_| 0.0, 1.0, 1.0, &qc), Err(BoundsError::InvalidRange { .. })));
    }

    #[test]
    fn sandwich_passes_on_fixtures() {
        let mt = exit_moments(&single(), 20).unwrap();
        let rep = bounds_report(&mt, 2.0, 1.0, &[1.0], |_| Some(2.0)).unwrap();
        assert!(sandwich_check(&rep).iter().all(|c| c.passed));

        let kg = birth_death();
        let spec = full_spectrum(&kg).unwrap();
        let mt = exit_moments(&kg, 20).unwrap();
        let betas: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|f| f * spec.lambda0()).collect();
        let rep = bounds_report(&mt, spec.lambda0(), spec.mass0_sq(), &betas, |b| {
            exp_moment_exact(&spec, 2.0, b).ok()
        })
        .unwrap();
        let checks = sandwich_check(&rep);
        assert!(checks.len() > 60);
        assert!(checks.iter().all(|c| c.passed), "{:?}", checks.iter().find(|c| !c.passed));
    }

    #[test]
    fn corrupted_second_moment_is_caught() {
        let kg = birth_death();
        let mut mt = exit_moments(&kg, 20).unwrap();
        mt.scaled_t[2] *= 1.1;
        let rep = bounds_report(&mt, LAMBDA0_BD, MASS0_SQ_BD, &[], |_| None).unwrap();
        let failed: Vec<_> = sandwich_check(&rep).into_iter().filter(|c| !c.passed).collect();
        assert!(failed.iter().any(|c| c.name == "lambda0 <= upper_ratio(2)"), "{failed:?}");
    }
}

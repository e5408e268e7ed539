//! Finite symmetric Markov generators.
//!
//! A [`Generator`] is a rate matrix `L` together with a strictly positive
//! measure `mu` such that `mu_i L_ij = mu_j L_ji` off the diagonal. Rows may
//! sum to a negative number: the deficit is a killing rate. States whose row
//! is identically zero are absorbing cemetery states; transitions into them
//! are killing as well and they are exempt from the detailed-balance check.
//!
//! Builders cover reversible chains given explicitly, 1D diffusions
//! `Δ + V'·∇` (conductance finite volumes), the restricted fractional
//! Laplacian `-(-Δ)^{α/2}` on an interval, and its time change by
//! `σ(x)^α`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::killed::{kill_all, KilledGenerator};
use crate::Error;

/// Relative detailed-balance tolerance applied by every builder.
pub const DETAILED_BALANCE_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("generator has no states")]
    Empty,
    #[error("measure weight mu[{index}] = {value} is not strictly positive")]
    NonpositiveWeight { index: usize, value: f64 },
    #[error("negative off-diagonal rate L[{i}][{j}] = {value}")]
    NegativeOffDiagonal { i: usize, j: usize, value: f64 },
    #[error("row {row} sums to {sum} > 0")]
    PositiveRowSum { row: usize, sum: f64 },
    #[error(
        "detailed balance violated at ({i}, {j}): mu_i*L_ij = {forward}, mu_j*L_ji = {backward}"
    )]
    DetailedBalanceViolation {
        i: usize,
        j: usize,
        forward: f64,
        backward: f64,
    },
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("potential is not finite at x = {x}")]
    NonFinitePotential { x: f64 },
    #[error("alpha = {alpha} outside ({lo}, {hi})")]
    AlphaOutOfRange { alpha: f64, lo: f64, hi: f64 },
    #[error("sigma({x}) = {value} is not strictly positive")]
    SigmaNonpositive { x: f64, value: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Chain,
    Diffusion1d,
    Fractional1d,
    Timechanged1d,
}

impl GeneratorKind {
    /// Builders of these kinds already fold the exterior into the diagonal;
    /// the only admissible domain is the full state set.
    pub fn is_prekilled(self) -> bool {
        matches!(self, GeneratorKind::Fractional1d | GeneratorKind::Timechanged1d)
    }
}

/// Uniform grid of `n` interior points on `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self, GeneratorError> {
        let g = Self { a, b, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if !(self.a.is_finite() && self.b.is_finite()) || self.a >= self.b {
            return Err(GeneratorError::InvalidGrid(format!(
                "need finite a < b, got ({}, {})",
                self.a, self.b
            )));
        }
        if self.n == 0 {
            return Err(GeneratorError::InvalidGrid("need n >= 1".into()));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / (self.n + 1) as f64
    }

    /// Interior points `a + i h`, `i = 1..=n`.
    pub fn points(&self) -> Vec<f64> {
        let h = self.h();
        (1..=self.n).map(|i| self.a + i as f64 * h).collect()
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }
}

/// Finite symmetric Markov generator.
#[derive(Debug, Clone)]
pub struct Generator {
    x: Option<Vec<f64>>,
    mu: Vec<f64>,
    rates: DMatrix<f64>,
    kind: GeneratorKind,
}

impl Generator {
    fn validated(
        x: Option<Vec<f64>>,
        mu: Vec<f64>,
        rates: DMatrix<f64>,
        kind: GeneratorKind,
    ) -> Result<Self, GeneratorError> {
        let n = mu.len();
        if n == 0 {
            return Err(GeneratorError::Empty);
        }
        if rates.nrows() != n || rates.ncols() != n {
            return Err(GeneratorError::DimensionMismatch {
                expected: n,
                found: if rates.nrows() != n { rates.nrows() } else { rates.ncols() },
            });
        }
        for (index, &value) in mu.iter().enumerate() {
            if !value.is_finite() {
                return Err(GeneratorError::NonFinite { what: "measure weight", index });
            }
            if value <= 0.0 {
                return Err(GeneratorError::NonpositiveWeight { index, value });
            }
        }
        for i in 0..n {
            let mut sum = 0.0;
            let mut scale: f64 = 1.0;
            for j in 0..n {
                let v = rates[(i, j)];
                if !v.is_finite() {
                    return Err(GeneratorError::NonFinite { what: "rate", index: i * n + j });
                }
                if i != j && v < 0.0 {
                    return Err(GeneratorError::NegativeOffDiagonal { i, j, value: v });
                }
                sum += v;
                scale = scale.max(v.abs());
            }
            if sum > DETAILED_BALANCE_TOL * scale {
                return Err(GeneratorError::PositiveRowSum { row: i, sum });
            }
        }
        let g = Self { x, mu, rates, kind };
        if let Some((i, j, forward, backward)) = g.worst_balance_pair() {
            let scale = forward.abs().max(backward.abs()).max(1.0);
            if (forward - backward).abs() > DETAILED_BALANCE_TOL * scale {
                return Err(GeneratorError::DetailedBalanceViolation { i, j, forward, backward });
            }
        }
        Ok(g)
    }

    // Pair with the largest relative detailed-balance defect among
    // non-absorbing states.
    fn worst_balance_pair(&self) -> Option<(usize, usize, f64, f64)> {
        let n = self.n();
        let live: Vec<bool> = (0..n).map(|i| !self.is_absorbing(i)).collect();
        let mut worst: Option<(f64, (usize, usize, f64, f64))> = None;
        for i in 0..n {
            for j in i + 1..n {
                if !(live[i] && live[j]) {
                    continue;
                }
                let f = self.mu[i] * self.rates[(i, j)];
                let b = self.mu[j] * self.rates[(j, i)];
                let r = (f - b).abs() / f.abs().max(b.abs()).max(1.0);
                if worst.as_ref().is_none_or(|(w, _)| r > *w) {
                    worst = Some((r, (i, j, f, b)));
                }
            }
        }
        worst.map(|(_, p)| p)
    }

    /// Largest relative detailed-balance residual
    /// `|mu_i L_ij - mu_j L_ji| / max(|mu_i L_ij|, |mu_j L_ji|, 1)`.
    pub fn detailed_balance_residual(&self) -> f64 {
        self.worst_balance_pair()
            .map(|(_, _, f, b)| (f - b).abs() / f.abs().max(b.abs()).max(1.0))
            .unwrap_or(0.0)
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn x(&self) -> Option<&[f64]> {
        self.x.as_deref()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    /// A state with no outgoing transitions.
    pub fn is_absorbing(&self, i: usize) -> bool {
        self.rates.row(i).iter().all(|&v| v == 0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.mu.iter().sum()
    }

    /// Same generator with `mu` rescaled to a probability measure.
    pub fn normalized(&self) -> Self {
        let z = self.total_mass();
        Self {
            x: self.x.clone(),
            mu: self.mu.iter().map(|m| m / z).collect(),
            rates: self.rates.clone(),
            kind: self.kind,
        }
    }
}

/// Input schema for chains: `{"mu": [...], "L": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub mu: Vec<f64>,
    #[serde(rename = "L")]
    pub rates: Vec<Vec<f64>>,
}

impl ChainSpec {
    pub fn build(&self) -> Result<Generator, GeneratorError> {
        build_chain(&self.rates, &self.mu)
    }
}

/// Generator from an explicit rate matrix; the diagonal is taken as given.
pub fn build_chain(rows: &[Vec<f64>], mu: &[f64]) -> Result<Generator, GeneratorError> {
    let n = mu.len();
    if rows.len() != n {
        return Err(GeneratorError::DimensionMismatch { expected: n, found: rows.len() });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(GeneratorError::DimensionMismatch { expected: n, found: r.len() });
    }
    let rates = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    Generator::validated(None, mu.to_vec(), rates, GeneratorKind::Chain)
}

/// Conductance discretization of `Δ + V'·∇` on `(a, b)` with Dirichlet ends.
///
/// `mu_i = exp(V(x_i)) h`, edge conductance `exp(V(midpoint)) / h`, so
/// `mu_i L_ij` equals the edge conductance from both sides.
pub fn build_diffusion_1d(
    grid: &GridSpec,
    potential: impl Fn(f64) -> f64,
) -> Result<Generator, GeneratorError> {
    grid.validate()?;
    let n = grid.n;
    let h = grid.h();
    let x = grid.points();
    let eval = |z: f64| {
        let v = potential(z);
        if v.is_finite() && v.exp().is_finite() {
            Ok(v.exp())
        } else {
            Err(GeneratorError::NonFinitePotential { x: z })
        }
    };
    let mu = x.iter().map(|&z| eval(z).map(|w| w * h)).collect::<Result<Vec<_>, _>>()?;
    // conductances of the n + 1 edges, boundary edges included
    let cond = (0..=n)
        .map(|e| eval(grid.a + (e as f64 + 0.5) * h).map(|w| w / h))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rates = DMatrix::zeros(n, n);
    for i in 0..n {
        let (left, right) = (cond[i], cond[i + 1]);
        if i > 0 {
            rates[(i, i - 1)] = left / mu[i];
        }
        if i + 1 < n {
            rates[(i, i + 1)] = right / mu[i];
        }
        rates[(i, i)] = -(left + right) / mu[i];
    }
    Generator::validated(Some(x), mu, rates, GeneratorKind::Diffusion1d)
}

/// Normalizing constant of `(-Δ)^{α/2}` in one dimension,
/// `α 2^{α-1} Γ((1+α)/2) / (√π Γ(1-α/2))`.
pub fn fractional_constant(alpha: f64) -> f64 {
    alpha * 2f64.powf(alpha - 1.0) * gamma((1.0 + alpha) / 2.0)
        / (std::f64::consts::PI.sqrt() * gamma(1.0 - alpha / 2.0))
}

// ∫_p^q s^{-α} ds
fn int_pow_neg(p: f64, q: f64, alpha: f64) -> f64 {
    let beta = 1.0 - alpha;
    if beta.abs() < 1e-12 {
        (q / p).ln()
    } else {
        // p^β (exp(β ln(q/p)) - 1) / β, stable near β = 0
        p.powf(beta) * (beta * (q / p).ln()).exp_m1() / beta
    }
}

// ∫_p^q s^{-1-α} ds
fn int_pow_neg1(p: f64, q: f64, alpha: f64) -> f64 {
    (p.powf(-alpha) - q.powf(-alpha)) / alpha
}

// ∫_{k-1}^{k} (s - (k-1)) s^{-1-α} ds
fn ramp_up(k: f64, alpha: f64) -> f64 {
    int_pow_neg(k - 1.0, k, alpha) - (k - 1.0) * int_pow_neg1(k - 1.0, k, alpha)
}

// ∫_{k}^{k+1} (k + 1 - s) s^{-1-α} ds
fn ramp_down(k: f64, alpha: f64) -> f64 {
    (k + 1.0) * int_pow_neg1(k, k + 1.0, alpha) - int_pow_neg(k, k + 1.0, alpha)
}

// Hat-function weight ∫_{-1}^{1} (1 - |t|) (k + t)^{-1-α} dt via the binomial
// series in t/k; the closed form cancels badly for large k.
fn hat_weight_series(k: f64, alpha: f64) -> f64 {
    let x2 = 1.0 / (k * k);
    let mut coeff = 1.0; // binom(-1-α, m) for even m
    let mut pow = 1.0;
    let mut sum = 1.0; // m = 0 term: ∫(1-|t|) = 1
    let mut m = 0.0;
    for _ in 0..30 {
        coeff *= (m + 1.0 + alpha) * (m + 2.0 + alpha) / ((m + 1.0) * (m + 2.0));
        m += 2.0;
        pow *= x2;
        let term = coeff * pow * 2.0 / ((m + 1.0) * (m + 2.0));
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum * k.powf(-1.0 - alpha)
}

/// Dimensionless kernel weights `W_1..=W_m` of the symmetric singular-integral
/// discretization: `(-Δ)^{α/2} u(x_i) ≈ C h^{-α} Σ_k W_k (2u_i - u_{i+k} - u_{i-k})`
/// with `u` piecewise linear and zero outside the interval. The first cell uses
/// the second difference, the rest integrate hat functions exactly.
pub fn fractional_weights(m: usize, alpha: f64) -> Vec<f64> {
    let mut w = vec![0.0; m + 1];
    for (k, wk) in w.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        *wk = if k == 1 {
            1.0 / (2.0 - alpha) + ramp_down(1.0, alpha)
        } else if k < 8 {
            ramp_up(kf, alpha) + ramp_down(kf, alpha)
        } else {
            hat_weight_series(kf, alpha)
        };
    }
    w
}

/// Sum of all weights over the whole line, `1/(2-α) + 1/α`.
fn fractional_weight_total(alpha: f64) -> f64 {
    1.0 / (2.0 - alpha) + 1.0 / alpha
}

fn fractional_rates(grid: &GridSpec, alpha: f64) -> DMatrix<f64> {
    let n = grid.n;
    let c = fractional_constant(alpha) * grid.h().powf(-alpha);
    let w = fractional_weights(n, alpha);
    let diag = -2.0 * c * fractional_weight_total(alpha);
    DMatrix::from_fn(n, n, |i, j| if i == j { diag } else { c * w[i.abs_diff(j)] })
}

fn check_alpha(alpha: f64, lo: f64, hi: f64) -> Result<(), GeneratorError> {
    if alpha > lo && alpha < hi {
        Ok(())
    } else {
        Err(GeneratorError::AlphaOutOfRange { alpha, lo, hi })
    }
}

/// Rate matrix of the stable process killed on leaving `(a, b)`.
pub fn fractional_generator_1d(grid: &GridSpec, alpha: f64) -> Result<Generator, GeneratorError> {
    grid.validate()?;
    check_alpha(alpha, 0.0, 2.0)?;
    let h = grid.h();
    Generator::validated(
        Some(grid.points()),
        vec![h; grid.n],
        fractional_rates(grid, alpha),
        GeneratorKind::Fractional1d,
    )
}

/// Killed symmetric α-stable process on `(a, b)`, exterior folded into the
/// diagonal.
pub fn build_fractional_1d(grid: &GridSpec, alpha: f64) -> Result<KilledGenerator, Error> {
    let gen = fractional_generator_1d(grid, alpha)?;
    Ok(kill_all(gen)?)
}

/// Rate matrix of `σ^α Δ^{α/2}` killed outside the grid interval; symmetric
/// with respect to `σ^{-α} dx`.
pub fn time_changed_generator_1d(
    grid: &GridSpec,
    alpha: f64,
    sigma: impl Fn(f64) -> f64,
) -> Result<Generator, GeneratorError> {
    grid.validate()?;
    check_alpha(alpha, 1.0, 2.0)?;
    let x = grid.points();
    let mut speed = Vec::with_capacity(x.len());
    for &z in &x {
        let s = sigma(z);
        if !(s.is_finite() && s > 0.0) {
            return Err(GeneratorError::SigmaNonpositive { x: z, value: s });
        }
        speed.push(s.powf(alpha));
    }
    let h = grid.h();
    let mu = speed.iter().map(|s| h / s).collect();
    let mut rates = fractional_rates(grid, alpha);
    for (i, s) in speed.iter().enumerate() {
        rates.row_mut(i).scale_mut(*s);
    }
    Generator::validated(Some(x), mu, rates, GeneratorKind::Timechanged1d)
}

/// Killed time-changed stable process; the grid truncates the half-line.
pub fn build_time_changed_1d(
    grid: &GridSpec,
    alpha: f64,
    sigma: impl Fn(f64) -> f64,
) -> Result<KilledGenerator, Error> {
    let gen = time_changed_generator_1d(grid, alpha, sigma)?;
    Ok(kill_all(gen)?)
}

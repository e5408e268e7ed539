//! Dirichlet spectrum of a killed generator and the spectral side of the
//! moment identities.
//!
//! Everything is computed on the symmetrized matrix `S = M^{1/2} A M^{-1/2}`;
//! eigenfunctions are mapped back with `M^{-1/2}` so they are μ-orthonormal.
//! The principal pair of large matrices comes from block inverse iteration
//! with Rayleigh–Ritz on `S^{-1}`, which keeps `λ0` relatively accurate even
//! when `‖S‖/λ0` is large.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::killed::KilledGenerator;
use crate::linalg::{dot, weighted_dot, SpdFactor};

/// Largest domain handed to the dense eigensolver by default.
pub const DEFAULT_DENSE_CAP: usize = 4000;

/// Eigenvalues closer than this fraction of `λ_max` form one cluster.
pub const CLUSTER_REL_GAP: f64 = 1e-9;

const MAX_ITERATIONS: usize = 5000;
const BLOCK: usize = 8;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("principal pair did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("domain of {n} states exceeds the dense eigensolver cap {cap}")]
    TooLargeForDense { n: usize, cap: usize },
    #[error("beta = {beta} must lie below lambda0 = {lambda0}")]
    BetaAtOrAboveLambda0 { beta: f64, lambda0: f64 },
    #[error("beta = {beta} must be nonnegative")]
    NegativeBeta { beta: f64 },
}

/// First Dirichlet eigenvalue with its μ-normalized eigenfunction.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalPair {
    pub lambda0: f64,
    pub phi0: Vec<f64>,
    /// `μ(φ0) ≥ 0`.
    pub mass: f64,
    pub iterations: usize,
}

impl PrincipalPair {
    pub fn mass_sq(&self) -> f64 {
        self.mass * self.mass
    }
}

/// Complete Dirichlet spectrum, ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    lambda: Vec<f64>,
    phi: Vec<Vec<f64>>,
    mass: Vec<f64>,
    clusters: Vec<std::ops::Range<usize>>,
}

/// Serialized form `{"lambda": [...], "mass": [...]}`, eigenfunctions optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub lambda: Vec<f64>,
    pub mass: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<Vec<f64>>>,
}

impl Spectrum {
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// μ-orthonormal eigenfunctions, one per eigenvalue.
    pub fn phi(&self) -> &[Vec<f64>] {
        &self.phi
    }

    /// `μ(φ_i)`.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda[0]
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// Index ranges of numerically degenerate eigenvalue clusters.
    pub fn clusters(&self) -> &[std::ops::Range<usize>] {
        &self.clusters
    }

    /// Per cluster: mean eigenvalue and the basis-invariant `Σ μ(φ_i)²`.
    pub fn cluster_weights(&self) -> Vec<(f64, f64)> {
        self.clusters
            .iter()
            .map(|r| {
                let lam = self.lambda[r.clone()].iter().sum::<f64>() / r.len() as f64;
                let w = self.mass[r.clone()].iter().map(|m| m * m).sum();
                (lam, w)
            })
            .collect()
    }

    /// `μ(φ0)²`, summed over the bottom cluster if it is degenerate.
    pub fn mass0_sq(&self) -> f64 {
        self.cluster_weights()[0].1
    }

    pub fn record(&self, with_eigenfunctions: bool) -> SpectrumRecord {
        SpectrumRecord {
            lambda: self.lambda.clone(),
            mass: self.mass.clone(),
            phi: with_eigenfunctions.then(|| self.phi.clone()),
        }
    }

    pub fn principal(&self) -> PrincipalPair {
        PrincipalPair {
            lambda0: self.lambda[0],
            phi0: self.phi[0].clone(),
            mass: self.mass[0],
            iterations: 0,
        }
    }
}

fn fix_sign(v: &mut [f64]) {
    let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

// Modified Gram–Schmidt, applied twice.
fn orthonormalize(cols: &mut [Vec<f64>]) {
    for _ in 0..2 {
        for j in 0..cols.len() {
            let (done, rest) = cols.split_at_mut(j);
            let v = &mut rest[0];
            for q in done.iter() {
                let c = dot(q, v);
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
            normalize(v);
        }
    }
}

fn eigenfunction(kg: &KilledGenerator, v: &[f64]) -> (Vec<f64>, f64) {
    let phi: Vec<f64> = v.iter().zip(kg.sqrt_mu()).map(|(x, s)| x / s).collect();
    let mass = weighted_dot(kg.mu(), &phi, &vec![1.0; phi.len()]);
    (phi, mass)
}

/// Full spectrum with the default dense cap.
pub fn full_spectrum(kg: &KilledGenerator) -> Result<Spectrum, SpectralError> {
    full_spectrum_with_cap(kg, DEFAULT_DENSE_CAP)
}

pub fn full_spectrum_with_cap(kg: &KilledGenerator, cap: usize) -> Result<Spectrum, SpectralError> {
    let n = kg.dim();
    if n > cap {
        return Err(SpectralError::TooLargeForDense { n, cap });
    }
    let eig = SymmetricEigen::new(kg.sym_matrix());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs: Vec<Vec<f64>> =
        order.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();

    let lmax = lambda.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || lambda[i] - lambda[i - 1] >= CLUSTER_REL_GAP * lmax {
            clusters.push(start..i);
            start = i;
        }
    }
    for r in &clusters {
        if r.len() > 1 {
            orthonormalize(&mut vecs[r.clone()]);
        }
    }
    if n > 4 * BLOCK {
        refine_bottom(kg, &mut lambda, &mut vecs, &clusters);
    }
    let mut phi = Vec::with_capacity(n);
    let mut mass = Vec::with_capacity(n);
    for v in &mut vecs {
        fix_sign(v);
        let (p, m) = eigenfunction(kg, v);
        phi.push(p);
        mass.push(m);
    }
    if mass[0] < 0.0 {
        phi[0].iter_mut().for_each(|x| *x = -*x);
        mass[0] = -mass[0];
    }
    Ok(Spectrum { lambda, phi, mass, clusters })
}

struct RitzStep {
    /// Ritz values of `S^{-1}`, descending.
    nu: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    /// `‖S^{-1} v - ν v‖ / ν` per Ritz pair.
    residuals: Vec<f64>,
    /// Orthonormalized `S^{-1}` images, the next block.
    next: Vec<Vec<f64>>,
}

// One step of block inverse iteration with Rayleigh–Ritz on S^{-1}.
fn inverse_ritz_step(kg: &KilledGenerator, basis: &[Vec<f64>]) -> RitzStep {
    let (n, p) = (kg.dim(), basis.len());
    let z: Vec<Vec<f64>> = basis
        .iter()
        .map(|v| {
            let mut w = v.clone();
            kg.sym_solve_in_place(&mut w);
            w
        })
        .collect();
    let h = DMatrix::from_fn(p, p, |i, j| 0.5 * (dot(&basis[i], &z[j]) + dot(&basis[j], &z[i])));
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let rotate = |cols: &[Vec<f64>]| -> Vec<Vec<f64>> {
        order
            .iter()
            .map(|&c| {
                let q = eig.eigenvectors.column(c);
                let mut out = vec![0.0; n];
                for (k, col) in cols.iter().enumerate() {
                    let w = q[k];
                    out.iter_mut().zip(col).for_each(|(o, x)| *o += w * x);
                }
                out
            })
            .collect()
    };
    let vectors = rotate(basis);
    let mut next = rotate(&z);
    let nu: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c]).collect();
    let residuals = (0..p)
        .map(|j| {
            next[j].iter().zip(&vectors[j]).map(|(a, b)| (a - nu[j] * b).powi(2)).sum::<f64>().sqrt()
                / nu[j]
        })
        .collect();
    orthonormalize(&mut next);
    RitzStep { nu, vectors, residuals, next }
}

// Polish the lowest eigenpairs of a dense decomposition. The dense solver's
// backward error is ε‖S‖, which for stiff generators leaves λ0 with only
// ε‖S‖/λ0 relative accuracy; iteration on S^{-1} restores full accuracy at
// the bottom of the spectrum.
fn refine_bottom(kg: &KilledGenerator, lambda: &mut [f64], vecs: &mut [Vec<f64>], clusters: &[std::ops::Range<usize>]) {
    let n = kg.dim();
    let p = BLOCK.min(n);
    // keep pairs well inside the block, never splitting a cluster
    let mut keep = p - 2;
    if let Some(r) = clusters.iter().find(|r| r.start < keep && r.end > keep) {
        keep = r.start;
    }
    if keep == 0 {
        return;
    }
    let mut basis: Vec<Vec<f64>> = vecs[..p].to_vec();
    let mut best = f64::INFINITY;
    let mut polished = None;
    for _ in 0..200 {
        let step = inverse_ritz_step(kg, &basis);
        let res = step.residuals[..keep].iter().fold(0.0f64, |m, r| m.max(*r));
        if res < 0.9 * best {
            best = res;
            polished = Some((step.nu.clone(), step.vectors.clone()));
        } else {
            break;
        }
        if res <= 4.0 * f64::EPSILON {
            break;
        }
        basis = step.next;
    }
    if let Some((nu, v)) = polished {
        for j in 0..keep {
            lambda[j] = 1.0 / nu[j];
            vecs[j] = v[j].clone();
        }
    }
}

/// First Dirichlet eigenvalue and eigenfunction.
pub fn principal_pair(kg: &KilledGenerator) -> Result<PrincipalPair, SpectralError> {
    let n = kg.dim();
    if n <= 4 * BLOCK {
        return Ok(full_spectrum(kg)?.principal());
    }
    let p = BLOCK.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut basis: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            if j == 0 {
                kg.sqrt_mu().to_vec()
            } else {
                (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
            }
        })
        .collect();
    orthonormalize(&mut basis);

    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for it in 1..=MAX_ITERATIONS {
        let step = inverse_ritz_step(kg, &basis);
        let residual = step.residuals[0];
        if residual < 0.9 * best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if residual <= 1e-12 || (stalled >= 10 && best <= 1e-8) {
            let mut v = step.vectors[0].clone();
            fix_sign(&mut v);
            let (mut phi, mut mass) = eigenfunction(kg, &v);
            if mass < 0.0 {
                phi.iter_mut().for_each(|x| *x = -*x);
                mass = -mass;
            }
            return Ok(PrincipalPair { lambda0: 1.0 / step.nu[0], phi0: phi, mass, iterations: it });
        }
        basis = step.next;
    }
    Err(SpectralError::ConvergenceFailure { iterations: MAX_ITERATIONS, residual: best })
}

/// `T_k = k! Σ_i μ(φ_i)² / λ_i^k`, clusters entering through their summed weight.
pub fn spectral_moments(spec: &Spectrum, k: u32) -> f64 {
    let fact: f64 = (1..=k).map(f64::from).product();
    fact * spec.cluster_weights().iter().map(|(l, w)| w / l.powi(k as i32)).sum::<f64>()
}

/// `T_k λ^k / k! = Σ_i μ(φ_i)² (λ/λ_i)^k`; finite where `T_k` itself overflows.
pub fn spectral_scaled_moment(spec: &Spectrum, k: u32, scale: f64) -> f64 {
    spec.cluster_weights().iter().map(|(l, w)| w * (scale / l).powi(k as i32)).sum()
}

fn check_beta(beta: f64, lambda0: f64) -> Result<(), SpectralError> {
    if beta < 0.0 {
        return Err(SpectralError::NegativeBeta { beta });
    }
    if beta >= lambda0 {
        return Err(SpectralError::BetaAtOrAboveLambda0 { beta, lambda0 });
    }
    Ok(())
}

/// `E_μ[e^{βτ}] = μ(Ω) + β Σ_i μ(φ_i)² / (λ_i - β)`.
pub fn exp_moment_exact(spec: &Spectrum, mu_total: f64, beta: f64) -> Result<f64, SpectralError> {
    check_beta(beta, spec.lambda0())?;
    let s: f64 = spec.cluster_weights().iter().map(|(l, w)| w / (l - beta)).sum();
    Ok(mu_total + beta * s)
}

/// Same quantity by one resolvent solve, `μ(Ω) + β ⟨1, (A - β)^{-1} 1⟩_μ`,
/// without the spectrum.
pub fn exp_moment_resolvent(kg: &KilledGenerator, beta: f64) -> Result<f64, SpectralError> {
    if beta < 0.0 {
        return Err(SpectralError::NegativeBeta { beta });
    }
    let mut s = kg.sym_matrix();
    for i in 0..kg.dim() {
        s[(i, i)] -= beta;
    }
    let factor = SpdFactor::new(&s, kg.bandwidth()).map_err(|_| {
        SpectralError::BetaAtOrAboveLambda0 { beta, lambda0: f64::NAN }
    })?;
    let mut w = kg.sqrt_mu().to_vec();
    factor.solve_in_place(&mut w);
    Ok(kg.mu_total() + beta * dot(kg.sqrt_mu(), &w))
}

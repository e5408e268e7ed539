//! Restriction of a generator to a domain, the Green operator and the
//! Dirichlet form.
//!
//! `A = -L^Ω` is μ-symmetric, so `S = M^{1/2} A M^{-1/2}` (with `M = diag μ`)
//! is symmetric. `S` is Cholesky-factored once at construction; a failed
//! factorization is how a non-positive `λ0(Ω)` shows up.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::generator::{Generator, GeneratorKind};
use crate::linalg::{band_matvec, bandwidth, weighted_dot, SpdFactor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("domain is empty")]
    EmptyDomain,
    #[error("state {index} is outside the generator's {n} states")]
    StateOutOfRange { index: usize, n: usize },
    #[error("{kind:?} generators are already killed; the domain must be the full state set")]
    PrekilledDomain { kind: GeneratorKind },
    #[error(
        "killed generator is not positive definite (pivot {pivot:e} at state {state}); \
         no killing is reachable, so λ0 <= 0"
    )]
    NotPositiveDefinite { state: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite input at index {index}")]
    NonFiniteInput { index: usize },
    #[error("Green solve produced a non-finite value")]
    SolveFailure,
}

/// Generator restricted to `Ω` and killed on leaving it.
#[derive(Debug, Clone)]
pub struct KilledGenerator {
    parent: Arc<Generator>,
    omega: Vec<usize>,
    a: DMatrix<f64>,
    mu: Vec<f64>,
    sqrt_mu: Vec<f64>,
    mu_total: f64,
    bandwidth: usize,
    factor: SpdFactor,
}

/// Restrict `gen` to the states in `omega` (any order, duplicates ignored).
pub fn kill(gen: &Generator, omega: &[usize]) -> Result<KilledGenerator, SolverError> {
    KilledGenerator::new(Arc::new(gen.clone()), omega.to_vec())
}

/// Kill on the full state set, taking ownership of the generator.
pub fn kill_all(gen: Generator) -> Result<KilledGenerator, SolverError> {
    let omega = (0..gen.n()).collect();
    KilledGenerator::new(Arc::new(gen), omega)
}

impl KilledGenerator {
    pub fn new(parent: Arc<Generator>, mut omega: Vec<usize>) -> Result<Self, SolverError> {
        let n = parent.n();
        omega.sort_unstable();
        omega.dedup();
        if omega.is_empty() {
            return Err(SolverError::EmptyDomain);
        }
        if let Some(&index) = omega.iter().find(|&&i| i >= n) {
            return Err(SolverError::StateOutOfRange { index, n });
        }
        if parent.kind().is_prekilled() && omega.len() != n {
            return Err(SolverError::PrekilledDomain { kind: parent.kind() });
        }
        if let Some(&state) = omega.iter().find(|&&i| parent.is_absorbing(i)) {
            return Err(SolverError::NotPositiveDefinite { state, pivot: 0.0 });
        }
        let m = omega.len();
        let rates = parent.rates();
        let a = DMatrix::from_fn(m, m, |i, j| -rates[(omega[i], omega[j])]);
        let mu: Vec<f64> = omega.iter().map(|&i| parent.mu()[i]).collect();
        let sqrt_mu: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
        let mu_total = mu.iter().sum();
        let bw = bandwidth(&a);
        // S_ij = sqrt(mu_i) A_ij / sqrt(mu_j), averaged with its transpose
        let mut s = DMatrix::zeros(m, m);
        for j in 0..m {
            for i in 0..m {
                if i.abs_diff(j) > bw {
                    continue;
                }
                let sij = sqrt_mu[i] * a[(i, j)] / sqrt_mu[j];
                let sji = sqrt_mu[j] * a[(j, i)] / sqrt_mu[i];
                s[(i, j)] = 0.5 * (sij + sji);
            }
        }
        let factor = SpdFactor::new(&s, bw).map_err(|p| SolverError::NotPositiveDefinite {
            state: omega[p.index],
            pivot: p.pivot,
        })?;
        Ok(Self { parent, omega, a, mu, sqrt_mu, mu_total, bandwidth: bw, factor })
    }

    pub fn parent(&self) -> &Generator {
        &self.parent
    }

    /// Sorted parent indices of the domain states.
    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    /// The matrix `-L^Ω`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// `μ(Ω)`.
    pub fn mu_total(&self) -> f64 {
        self.mu_total
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn uses_banded_solver(&self) -> bool {
        self.factor.is_banded()
    }

    fn check_len(&self, v: &[f64]) -> Result<(), SolverError> {
        if v.len() != self.dim() {
            return Err(SolverError::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        Ok(())
    }

    /// `A v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, SolverError> {
        self.check_len(v)?;
        Ok(band_matvec(&self.a, self.bandwidth, v))
    }

    /// Solve `A u = xi`: `u = G^Ω xi`, the expected accumulated `xi` before exit.
    pub fn green_apply(&self, xi: &[f64]) -> Result<Vec<f64>, SolverError> {
        self.check_len(xi)?;
        if let Some(index) = xi.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::NonFiniteInput { index });
        }
        let mut b: Vec<f64> = xi.iter().zip(&self.sqrt_mu).map(|(x, s)| x * s).collect();
        self.factor.solve_in_place(&mut b);
        for (v, s) in b.iter_mut().zip(&self.sqrt_mu) {
            *v /= s;
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::SolveFailure);
        }
        Ok(b)
    }

    /// `𝓔(f, g) = Σ_i μ_i f_i (A g)_i`.
    pub fn dirichlet_energy(&self, f: &[f64], g: &[f64]) -> Result<f64, SolverError> {
        self.check_len(f)?;
        let ag = self.apply(g)?;
        Ok(weighted_dot(&self.mu, f, &ag))
    }

    /// `Σ_i μ_i f_i g_i`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> Result<f64, SolverError> {
        self.check_len(f)?;
        self.check_len(g)?;
        Ok(weighted_dot(&self.mu, f, g))
    }

    /// `𝓔(f, f) / μ(f²)`.
    pub fn rayleigh_quotient(&self, f: &[f64]) -> Result<f64, SolverError> {
        Ok(self.dirichlet_energy(f, f)? / self.inner(f, f)?)
    }

    pub(crate) fn sqrt_mu(&self) -> &[f64] {
        &self.sqrt_mu
    }

    /// `S^{-1} v` in place.
    pub(crate) fn sym_solve_in_place(&self, v: &mut [f64]) {
        self.factor.solve_in_place(v);
    }

    /// Dense symmetrized matrix `S`.
    pub(crate) fn sym_matrix(&self) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |i, j| {
            let sij = self.sqrt_mu[i] * self.a[(i, j)] / self.sqrt_mu[j];
            let sji = self.sqrt_mu[j] * self.a[(j, i)] / self.sqrt_mu[i];
            0.5 * (sij + sji)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::build_chain;

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
        kill(&g, &[1, 0]).unwrap()
    }

    #[test]
    fn one_by_one_restriction() {
        let kg = single();
        assert_eq!(kg.matrix()[(0, 0)], 2.0);
        assert_eq!(kg.mu(), &[1.0]);
        assert_eq!(kg.mu_total(), 1.0);
    }

    #[test]
    fn birth_death_restriction() {
        let kg = birth_death();
        assert_eq!(kg.omega(), &[0, 1]);
        let a = kg.matrix();
        assert_eq!((a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]), (1.0, -1.0, -1.0, 2.0));
    }

    #[test]
    fn conservative_chain_is_not_positive_definite() {
        let g = build_chain(&[vec![-1.0, 1.0], vec![1.0, -1.0]], &[1.0, 1.0]).unwrap();
        assert!(matches!(kill(&g, &[0, 1]), Err(SolverError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn domain_errors() {
        let g = build_chain(&[vec![-2.0, 2.0], vec![0.0, 0.0]], &[1.0, 1.0]).unwrap();
        assert_eq!(kill(&g, &[]).unwrap_err(), SolverError::EmptyDomain);
        assert!(matches!(kill(&g, &[5]), Err(SolverError::StateOutOfRange { index: 5, n: 2 })));
        // the cemetery itself cannot be part of the domain
        assert!(matches!(kill(&g, &[0, 1]), Err(SolverError::NotPositiveDefinite { state: 1, .. })));
    }

    #[test]
    fn green_examples() {
        assert_eq!(single().green_apply(&[1.0]).unwrap(), vec![0.5]);
        let u = birth_death().green_apply(&[1.0, 1.0]).unwrap();
        assert!((u[0] - 3.0).abs() < 1e-14 && (u[1] - 2.0).abs() < 1e-14);
        assert_eq!(birth_death().green_apply(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            birth_death().green_apply(&[1.0]),
            Err(SolverError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn energy_examples() {
        assert_eq!(single().dirichlet_energy(&[1.0], &[1.0]).unwrap(), 2.0);
        let e = birth_death().dirichlet_energy(&[3.0, 2.0], &[3.0, 2.0]).unwrap();
        assert!((e - 5.0).abs() < 1e-14);
    }
}

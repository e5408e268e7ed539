//! Exit-time moments by recursive Green solves.
//!
//! `u_0 ≡ 1`, `u_k = k G^Ω u_{k-1}`, so `u_k(x) = E_x[τ^k]` and
//! `T_k = Σ_i μ_i u_k(i)`. Moments grow like `k!/λ0^k`, so the table stores
//! `s_k = u_k c^k / k!` for a fixed scale `c` and recurses `s_k = c G s_{k-1}`.
//! With `c = 1` this is just `u_k / k!`; for long tables `c` is an estimate of
//! `λ0` and `s_k` stays `O(1)`.
//!
//! In scaled form the moment identities read `⟨s_j, s_k⟩_μ = S_{j+k}` where
//! `S_k = Σ μ s_k = T_k c^k / k!`.

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::killed::{KilledGenerator, SolverError};
use crate::linalg::weighted_dot;

pub const DEFAULT_MAX_ORDER: usize = 20;

/// Tables longer than this are stored with `c ≈ λ0` instead of `c = 1`.
pub const UNSCALED_MAX_ORDER: usize = 30;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("maximum order must be at least {min}, got {got}")]
    InvalidMaxOrder { got: usize, min: usize },
    #[error("order {k} outside the table (max order {max})")]
    OrderOutOfRange { k: usize, max: usize },
    #[error("moment of order {k} overflows the floating-point range")]
    OverflowRisk { k: usize },
    #[error("trial function is orthogonal to u_(k-1)")]
    DegenerateTrial,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Exit-time moment table for `k = 0..=K`.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub(crate) scale: f64,
    pub(crate) scaled: Vec<Vec<f64>>,
    pub(crate) scaled_t: Vec<f64>,
    pub(crate) mu: Vec<f64>,
    gram: OnceLock<Vec<f64>>,
}

/// JSON form `{"T": [...], "u": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    #[serde(rename = "T")]
    pub t: Vec<f64>,
    pub u: Vec<Vec<f64>>,
}

/// Partial sum of `Σ β^k T_k / k!` with its truncation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpSeries {
    pub value: f64,
    /// Magnitude of the last included term.
    pub last_term: f64,
    /// Geometric estimate of the omitted tail, `last_term / (1 - q)` with `q`
    /// the ratio of the last two terms; infinite once `q ≥ 1`.
    pub tail_bound: f64,
}

/// `k!/c^k` as a running product.
pub(crate) fn fact_over_pow(k: usize, c: f64) -> f64 {
    (1..=k).map(|i| i as f64 / c).product()
}

/// Moment table up to order `max_order`.
pub fn exit_moments(kg: &KilledGenerator, max_order: usize) -> Result<MomentTable, MomentError> {
    if max_order < 1 {
        return Err(MomentError::InvalidMaxOrder { got: max_order, min: 1 });
    }
    let scale = if max_order > UNSCALED_MAX_ORDER { estimate_scale(kg)? } else { 1.0 };
    let n = kg.dim();
    let mu = kg.mu().to_vec();
    let mut scaled = Vec::with_capacity(max_order + 1);
    scaled.push(vec![1.0; n]);
    for k in 1..=max_order {
        let src: Vec<f64> = scaled[k - 1].iter().map(|v| v * scale).collect();
        let next = kg.green_apply(&src)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(MomentError::OverflowRisk { k });
        }
        scaled.push(next);
    }
    let scaled_t = scaled.iter().map(|s| s.iter().zip(&mu).map(|(a, b)| a * b).sum()).collect();
    Ok(MomentTable { scale, scaled, scaled_t, mu, gram: OnceLock::new() })
}

// A few normalized inverse-iteration steps; the ratio μ(v)/μ(Gv) tends to λ0
// from above.
fn estimate_scale(kg: &KilledGenerator) -> Result<f64, MomentError> {
    let mut v = vec![1.0; kg.dim()];
    let mut ratio = 1.0;
    for _ in 0..12 {
        let w = kg.green_apply(&v)?;
        let (mv, mw): (f64, f64) = (
            v.iter().zip(kg.mu()).map(|(a, b)| a * b).sum(),
            w.iter().zip(kg.mu()).map(|(a, b)| a * b).sum(),
        );
        ratio = mv / mw;
        let norm = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        v = w.iter().map(|x| x / norm).collect();
    }
    Ok(ratio)
}

impl MomentTable {
    pub fn max_order(&self) -> usize {
        self.scaled.len() - 1
    }

    /// The scale `c` of the stored vectors `s_k = u_k c^k / k!`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `μ(Ω) = T_0`.
    pub fn mu_total(&self) -> f64 {
        self.scaled_t[0]
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    fn check(&self, k: usize) -> Result<(), MomentError> {
        if k > self.max_order() {
            return Err(MomentError::OrderOutOfRange { k, max: self.max_order() });
        }
        Ok(())
    }

    /// `S_k = T_k c^k / k!`.
    pub fn scaled_moment(&self, k: usize) -> Result<f64, MomentError> {
        self.check(k)?;
        Ok(self.scaled_t[k])
    }

    /// `s_k`.
    pub fn scaled_vector(&self, k: usize) -> Result<&[f64], MomentError> {
        self.check(k)?;
        Ok(&self.scaled[k])
    }

    /// `T_k = ∫_Ω E_x[τ^k] μ(dx)`.
    pub fn moment(&self, k: usize) -> Result<f64, MomentError> {
        let t = self.scaled_moment(k)? * fact_over_pow(k, self.scale);
        if t.is_finite() {
            Ok(t)
        } else {
            Err(MomentError::OverflowRisk { k })
        }
    }

    /// `ln T_k`, available even where `T_k` overflows.
    pub fn ln_moment(&self, k: usize) -> Result<f64, MomentError> {
        let s = self.scaled_moment(k)?;
        let ln_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
        Ok(s.ln() + ln_fact - k as f64 * self.scale.ln())
    }

    /// `T_0..=T_K`.
    pub fn moments(&self) -> Result<Vec<f64>, MomentError> {
        (0..=self.max_order()).map(|k| self.moment(k)).collect()
    }

    /// `u_k(x) = E_x[τ^k]` on the domain.
    pub fn exit_moment_vector(&self, k: usize) -> Result<Vec<f64>, MomentError> {
        let f = fact_over_pow(k, self.scale);
        let u: Vec<f64> = self.scaled_vector(k)?.iter().map(|s| s * f).collect();
        if u.iter().all(|v| v.is_finite()) {
            Ok(u)
        } else {
            Err(MomentError::OverflowRisk { k })
        }
    }

    fn gram(&self) -> &[f64] {
        self.gram.get_or_init(|| {
            let m = self.scaled.len();
            let mut g = vec![0.0; m * m];
            for j in 0..m {
                for k in j..m {
                    let v = weighted_dot(&self.mu, &self.scaled[j], &self.scaled[k]);
                    g[j * m + k] = v;
                    g[k * m + j] = v;
                }
            }
            g
        })
    }

    /// `⟨s_j, s_k⟩_μ`.
    pub fn scaled_cross(&self, j: usize, k: usize) -> Result<f64, MomentError> {
        self.check(j)?;
        self.check(k)?;
        Ok(self.gram()[j * self.scaled.len() + k])
    }

    /// `⟨u_j, u_k⟩_μ = Σ_i μ_i u_j(i) u_k(i)`.
    pub fn cross_moment(&self, j: usize, k: usize) -> Result<f64, MomentError> {
        let v = self.scaled_cross(j, k)? * fact_over_pow(j, self.scale) * fact_over_pow(k, self.scale);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(MomentError::OverflowRisk { k: j + k })
        }
    }

    /// The same table under the measure `factor · μ`. Moments, inner products
    /// and `μ(Ω)` all scale by `factor`; the vectors `u_k` do not change.
    pub fn with_measure_scale(&self, factor: f64) -> MomentTable {
        MomentTable {
            scale: self.scale,
            scaled: self.scaled.clone(),
            scaled_t: self.scaled_t.iter().map(|t| t * factor).collect(),
            mu: self.mu.iter().map(|m| m * factor).collect(),
            gram: OnceLock::new(),
        }
    }

    pub fn record(&self) -> Result<MomentRecord, MomentError> {
        Ok(MomentRecord {
            t: self.moments()?,
            u: (0..=self.max_order()).map(|k| self.exit_moment_vector(k)).collect::<Result<_, _>>()?,
        })
    }

    /// One row per order: `k,T_k,u_k(0),...`.
    pub fn to_csv(&self) -> Result<String, MomentError> {
        let rec = self.record()?;
        let mut out = String::from("k,T_k");
        for i in 0..self.mu.len() {
            let _ = write!(out, ",u_{i}");
        }
        out.push('\n');
        for (k, (t, u)) in rec.t.iter().zip(&rec.u).enumerate() {
            let _ = write!(out, "{k},{t:e}");
            for v in u {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// `⟨u_j, u_k⟩_μ`.
pub fn cross_moment(mt: &MomentTable, j: usize, k: usize) -> Result<f64, MomentError> {
    mt.cross_moment(j, k)
}

/// Relative residuals of `k⟨u_{k-1},u_k⟩ = (k!)²/(2k-1)! T_{2k-1}` and
/// `⟨u_k,u_k⟩ = (k!)²/(2k)! T_{2k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateResiduals {
    pub cross: f64,
    pub square: f64,
}

pub fn verify_iterate_identity(mt: &MomentTable, k: usize) -> Result<IterateResiduals, MomentError> {
    if k < 1 || 2 * k > mt.max_order() {
        return Err(MomentError::OrderOutOfRange { k: 2 * k, max: mt.max_order() });
    }
    // Both sides of each identity carry the common factor (k!)^2 / c^(2k-1)
    // (resp. c^(2k)); what remains is ⟨s_{k-1}, s_k⟩ = S_{2k-1} and
    // ⟨s_k, s_k⟩ = S_{2k}.
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    Ok(IterateResiduals {
        cross: rel(mt.scaled_cross(k - 1, k)?, mt.scaled_moment(2 * k - 1)?),
        square: rel(mt.scaled_cross(k, k)?, mt.scaled_moment(2 * k)?),
    })
}

/// `𝓔(f̃, f̃) - 1/(k⟨u_{k-1}, u_k⟩)` where `f̃` is `f` rescaled onto
/// `{k⟨u_{k-1}, f̃⟩ = 1}`. Never negative beyond rounding; zero iff `f ∝ u_k`.
pub fn variational_gap(
    kg: &KilledGenerator,
    mt: &MomentTable,
    k: usize,
    f: &[f64],
) -> Result<f64, MomentError> {
    if k < 1 {
        return Err(MomentError::OrderOutOfRange { k, max: mt.max_order() });
    }
    let prev = mt.scaled_vector(k - 1)?;
    mt.check(k)?;
    if f.len() != prev.len() {
        return Err(SolverError::DimensionMismatch { expected: prev.len(), found: f.len() }.into());
    }
    let pairing = weighted_dot(&mt.mu, prev, f);
    let norms = (weighted_dot(&mt.mu, prev, prev) * weighted_dot(&mt.mu, f, f)).sqrt();
    if !(pairing.abs() > 1e-14 * norms) {
        return Err(MomentError::DegenerateTrial);
    }
    // k⟨u_{k-1}, f⟩ = k (k-1)!/c^(k-1) ⟨s_{k-1}, f⟩
    let constraint = k as f64 * fact_over_pow(k - 1, mt.scale) * pairing;
    let energy = kg.dirichlet_energy(f, f)? / (constraint * constraint);
    let infimum = 1.0
        / (k as f64
            * fact_over_pow(k - 1, mt.scale)
            * fact_over_pow(k, mt.scale)
            * mt.scaled_cross(k - 1, k)?);
    Ok(energy - infimum)
}

/// `μ(Ω) + Σ_{k=1}^{K} β^k T_k / k!`, the Taylor partial sum of `E_μ[e^{βτ}]`.
pub fn exp_moment_series(mt: &MomentTable, beta: f64) -> ExpSeries {
    let r = beta / mt.scale;
    let mut value = mt.scaled_t[0];
    let mut prev = mt.scaled_t[0];
    let mut last = prev;
    let mut pow = 1.0;
    for &s in &mt.scaled_t[1..] {
        pow *= r;
        prev = last;
        last = pow * s;
        value += last;
    }
    let q = if prev > 0.0 { last / prev } else { f64::INFINITY };
    let tail_bound = if q < 1.0 { last / (1.0 - q) } else { f64::INFINITY };
    ExpSeries { value, last_term: last.abs(), tail_bound }
}

/// Inner product helper for callers holding plain vectors.
pub fn mu_inner(mu: &[f64], f: &[f64], g: &[f64]) -> f64 {
    weighted_dot(mu, f, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_chain, build_diffusion_1d, GridSpec};
    use crate::killed::{kill, kill_all};

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
    fn exponential_exit_time() {
        let mt = exit_moments(&single(), 4).unwrap();
        assert_eq!(mt.moments().unwrap(), vec![1.0, 0.5, 0.5, 0.75, 1.5]);
        for k in 0..=4 {
            let fact: f64 = (1..=k).map(|i| i as f64).product();
            assert_eq!(mt.exit_moment_vector(k).unwrap(), vec![fact / 2f64.powi(k as i32)]);
        }
    }

    #[test]
    fn birth_death_hand_solve() {
        let mt = exit_moments(&birth_death(), 2).unwrap();
        let u1 = mt.exit_moment_vector(1).unwrap();
        let u2 = mt.exit_moment_vector(2).unwrap();
        for (a, b) in u1.iter().zip([3.0, 2.0]) {
            assert!((a - b).abs() < 1e-13);
        }
        for (a, b) in u2.iter().zip([16.0, 10.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((mt.moment(1).unwrap() - 5.0).abs() < 1e-13);
        assert!((mt.moment(2).unwrap() - 26.0).abs() < 1e-12);
    }

    #[test]
    fn cross_moment_examples() {
        let mt = exit_moments(&single(), 4).unwrap();
        assert_eq!(cross_moment(&mt, 0, 0).unwrap(), 1.0);
        assert_eq!(cross_moment(&mt, 0, 1).unwrap(), 0.5);
        let bd = exit_moments(&birth_death(), 4).unwrap();
        assert!((cross_moment(&bd, 0, 1).unwrap() - 5.0).abs() < 1e-13);
        assert_eq!(cross_moment(&bd, 0, 0).unwrap(), 2.0);
        assert!(matches!(
            cross_moment(&bd, 5, 0),
            Err(MomentError::OrderOutOfRange { k: 5, max: 4 })
        ));
    }

    #[test]
    fn iterate_identity_examples() {
        let mt = exit_moments(&single(), 4).unwrap();
        let r1 = verify_iterate_identity(&mt, 1).unwrap();
        let r2 = verify_iterate_identity(&mt, 2).unwrap();
        assert_eq!((r1.cross, r2.square), (0.0, 0.0));
        let bd = exit_moments(&birth_death(), 20).unwrap();
        for k in 1..=10 {
            let r = verify_iterate_identity(&bd, k).unwrap();
            assert!(r.cross < 1e-12 && r.square < 1e-12, "k {k}: {r:?}");
        }
        assert!(verify_iterate_identity(&bd, 11).is_err());
    }

    #[test]
    fn variational_minimizer() {
        let kg = single();
        let mt = exit_moments(&kg, 3).unwrap();
        assert!(variational_gap(&kg, &mt, 1, &[1.0]).unwrap().abs() < 1e-15);
        let kg = birth_death();
        let mt = exit_moments(&kg, 6).unwrap();
        for k in 1..=5 {
            let uk = mt.exit_moment_vector(k).unwrap();
            assert!(variational_gap(&kg, &mt, k, &uk).unwrap().abs() < 1e-10);
            let bent = [uk[0], uk[1] * 1.1];
            assert!(variational_gap(&kg, &mt, k, &bent).unwrap() > 0.0);
        }
        // orthogonal to u_0 = 1 under μ = (1, 1)
        assert_eq!(
            variational_gap(&kg, &mt, 1, &[1.0, -1.0]).unwrap_err(),
            MomentError::DegenerateTrial
        );
    }

    #[test]
    fn exp_series_examples() {
        let mt = exit_moments(&single(), 60).unwrap();
        assert_eq!(exp_moment_series(&mt, 0.0).value, 1.0);
        let s = exp_moment_series(&mt, 1.0);
        // Σ 2^{-k} truncated at k = 60
        assert!((s.value - 2.0).abs() <= s.tail_bound + 1e-15);
        assert!(s.last_term < 1e-17);
    }

    #[test]
    fn long_tables_are_scaled() {
        let kg = birth_death();
        let short = exit_moments(&kg, 20).unwrap();
        let long = exit_moments(&kg, 200).unwrap();
        assert_eq!(short.scale(), 1.0);
        assert!((long.scale() - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-6);
        for k in 0..=20 {
            let (a, b) = (short.moment(k).unwrap(), long.moment(k).unwrap());
            assert!((a - b).abs() < 1e-12 * a, "k {k}");
        }
        // T_200 ≈ 200! / λ0^200 overflows, its logarithm does not
        assert_eq!(long.moment(200).unwrap_err(), MomentError::OverflowRisk { k: 200 });
        assert!(long.ln_moment(200).unwrap().is_finite());
        assert!(long.scaled_moment(200).unwrap().is_finite());
    }

    #[test]
    fn brownian_moments_converge_to_closed_form() {
        let grid = GridSpec::new(0.0, 1.0, 999).unwrap();
        let kg = kill_all(build_diffusion_1d(&grid, |_| 0.0).unwrap()).unwrap();
        let mt = exit_moments(&kg, 2).unwrap();
        let x = grid.points();
        let u1 = mt.exit_moment_vector(1).unwrap();
        for (xi, ui) in x.iter().zip(&u1) {
            assert!((ui - xi * (1.0 - xi) / 2.0).abs() < 1e-12);
        }
        assert!((mt.moment(1).unwrap() * 12.0 - 1.0).abs() < 1e-4);
        assert!((mt.moment(2).unwrap() * 60.0 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn measure_rescaling() {
        let mt = exit_moments(&birth_death(), 4).unwrap();
        let half = mt.with_measure_scale(0.5);
        assert_eq!(half.mu_total(), 1.0);
        assert!((half.moment(2).unwrap() - 13.0).abs() < 1e-12);
        assert_eq!(half.exit_moment_vector(1).unwrap(), mt.exit_moment_vector(1).unwrap());
    }

    #[test]
    fn csv_has_one_row_per_order() {
        let csv = exit_moments(&single(), 3).unwrap().to_csv().unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "k,T_k,u_0");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("1,5e-1"));
    }
}

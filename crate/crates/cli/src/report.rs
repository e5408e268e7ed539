//! The pipeline behind `run`: build, kill, moments, spectrum, bounds and an
//! optional Monte Carlo cross-check.

use std::f64::consts::PI;
use std::time::Instant;

use exit_spectrum_core::bounds::{blm_stable_bounds, delta_plus};
use exit_spectrum_core::generator::{fractional_generator_1d, time_changed_generator_1d};
use exit_spectrum_core::montecarlo::ZScore;
use exit_spectrum_core::{
    bounds_report, build_diffusion_1d, empirical_vs_solver, exit_moments, exp_moment_bounds, exp_moment_exact,
    exp_moment_resolvent, full_spectrum, kill, kill_all, principal_pair, sandwich_check,
    simulate_chain_exit, simulate_diffusion_exit, simulate_stable_exit, BoundsReport, Check,
    Generator, GridSpec, KilledGenerator, McConfig, McError, McEstimate, QuadratureConfig, Spectrum,
};
use serde::{Deserialize, Serialize};

use crate::config::{ChainSource, Model, Omega, RunConfig};
use crate::expr::Expr;
use crate::CliError;

/// Largest domain for which the whole spectrum is computed; beyond it only
/// the principal pair is.
pub const DENSE_SPECTRUM_LIMIT: usize = 1200;

/// Number of low eigenvalues listed in a report.
const LISTED_EIGENVALUES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub generator: GeneratorSummary,
    pub spectrum: SpectrumSummary,
    pub moments: MomentSummary,
    pub bounds: BoundsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds_normalized: Option<BoundsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSection>,
    pub checks: Vec<Check>,
    /// Names of the checks that failed.
    pub failed: Vec<String>,
    pub timings: Vec<Timing>,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.failed.is_empty()
    }

    /// Process exit status: 0 when every sandwich check holds, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSummary {
    pub model: String,
    pub states: usize,
    pub domain_states: usize,
    pub mu_total: f64,
    pub bandwidth: usize,
    pub banded_solver: bool,
    pub detailed_balance_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    /// `dense` for the full spectrum, `subspace` for the principal pair only.
    pub method: String,
    pub lambda0: f64,
    /// `μ(φ0)²`.
    pub mass0_sq: f64,
    /// Lowest eigenvalues, when the full spectrum was computed.
    pub lowest: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub max_order: usize,
    /// Scale `c` of the stored moments `u_k c^k / k!`.
    pub scale: f64,
    /// `ln T_k`, `k = 1..=K`; finite even where `T_k` overflows.
    pub ln_t: Vec<f64>,
}

/// Closed-form bounds on the continuum eigenvalue that the discrete model
/// approximates. Informational: they do not enter the exit status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBounds {
    pub description: String,
    pub lower: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSection {
    pub estimate: McEstimate,
    /// Comparison with the solver; absent for a fixed start point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_scores: Option<Vec<ZScore>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

struct Stopwatch(Vec<Timing>);

impl Stopwatch {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.0.push(Timing { stage: stage.into(), seconds: t.elapsed().as_secs_f64() });
        out
    }
}

fn parse_expr(src: &str) -> Result<Expr, CliError> {
    Expr::parse(src).map_err(|e| CliError::Expr { expression: src.into(), source: e.into() })
}

/// Evaluates `expr` inside a builder that wants a plain `Fn(f64) -> f64`,
/// remembering the first domain error.
fn checked_eval<T>(
    expr: &Expr,
    build: impl FnOnce(&dyn Fn(f64) -> f64) -> T,
) -> Result<T, CliError> {
    let first_error = std::cell::RefCell::new(None);
    let out = build(&|x| match expr.eval(x) {
        Ok(v) => v,
        Err(e) => {
            first_error.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    });
    match first_error.into_inner() {
        Some(e) => Err(CliError::Expr { expression: expr.to_string(), source: e.into() }),
        None => Ok(out),
    }
}

fn build_generator(model: &Model) -> Result<Generator, CliError> {
    Ok(match model {
        Model::Chain(ChainSource::Inline(spec)) => spec.build()?,
        Model::Chain(ChainSource::File { path }) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let spec: exit_spectrum_core::ChainSpec = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            spec.build()?
        }
        Model::Diffusion(d) => {
            let v = parse_expr(&d.v)?;
            let grid = GridSpec::new(d.a, d.b, d.n)?;
            checked_eval(&v, |f| build_diffusion_1d(&grid, f))??
        }
        Model::Fractional(f) => fractional_generator_1d(&GridSpec::new(f.a, f.b, f.n)?, f.alpha)?,
        Model::Timechanged(t) => {
            let sigma = parse_expr(&t.sigma)?;
            let grid = GridSpec::new(0.0, t.r, t.n)?;
            checked_eval(&sigma, |f| time_changed_generator_1d(&grid, t.alpha, f))??
        }
    })
}

fn kill_domain(gen: Generator, omega: &Omega) -> Result<KilledGenerator, CliError> {
    Ok(match omega {
        Omega::All => kill_all(gen)?,
        Omega::States(states) => kill(&gen, states)?,
    })
}

fn reference_bounds(model: &Model, lambda0: f64) -> Result<Option<ReferenceBounds>, CliError> {
    Ok(match model {
        Model::Fractional(f) => {
            let len = f.b - f.a;
            let blm = blm_stable_bounds(1, f.alpha, len, Some((PI / len).powi(2)))?;
            let upper = blm.upper;
            Some(ReferenceBounds {
                description: format!("stable alpha={} on an interval of length {len}", f.alpha),
                lower: blm.lower,
                upper,
                holds: blm.lower <= lambda0 && upper.is_none_or(|u| lambda0 <= u),
            })
        }
        Model::Timechanged(t) => {
            let sigma = parse_expr(&t.sigma)?;
            let dp = checked_eval(&sigma, |f| delta_plus(f, t.alpha, &QuadratureConfig::default()))??;
            Some(ReferenceBounds {
                description: format!("half-line Hardy bound, delta_plus = {}", dp.delta_plus),
                lower: dp.eigen_lower,
                upper: None,
                holds: dp.eigen_lower <= lambda0,
            })
        }
        _ => None,
    })
}

fn simulate(model: &Model, kg: &KilledGenerator, cfg: &McConfig) -> Result<McEstimate, CliError> {
    Ok(match model {
        Model::Chain(_) => simulate_chain_exit(kg.parent(), kg.omega(), cfg)?,
        Model::Diffusion(d) => {
            let v = parse_expr(&d.v)?;
            let potential = |x: f64| v.eval(x).unwrap_or(f64::NAN);
            simulate_diffusion_exit(d.a, d.b, potential, cfg)?
        }
        Model::Fractional(f) => simulate_stable_exit(f.a, f.b, f.alpha, cfg)?,
        Model::Timechanged(_) => {
            return Err(CliError::Unsupported(
                "Monte Carlo is not available for time-changed models".into(),
            ))
        }
    })
}

fn check_finite(report: &RunReport) -> Result<(), CliError> {
    let s = &report.spectrum;
    let g = &report.generator;
    let mut fields: Vec<(&str, f64)> = vec![
        ("spectrum.lambda0", s.lambda0),
        ("spectrum.mass0_sq", s.mass0_sq),
        ("generator.mu_total", g.mu_total),
        ("generator.detailed_balance_residual", g.detailed_balance_residual),
        ("moments.scale", report.moments.scale),
    ];
    fields.extend(s.lowest.iter().map(|&v| ("spectrum.lowest", v)));
    fields.extend(report.moments.ln_t.iter().map(|&v| ("moments.ln_t", v)));
    for b in std::iter::once(&report.bounds).chain(&report.bounds_normalized) {
        for o in &b.orders {
            let values = [o.t_k, o.upper_odd, o.upper_ratio, o.upper_even_ratio, o.upper_odd_ratio, o.lower_moment];
            fields.extend(values.into_iter().flatten().map(|v| ("bounds.orders", v)));
        }
        for e in &b.exp {
            fields.extend([("bounds.exp", e.lower), ("bounds.exp", e.upper)]);
            fields.extend(e.exact.map(|v| ("bounds.exp", v)));
        }
        if let Some(est) = &b.estimator {
            fields.push(("bounds.estimator", est.estimate));
        }
    }
    fields.extend(report.checks.iter().flat_map(|c| [("checks", c.lhs), ("checks", c.rhs)]));
    match fields.into_iter().find(|(_, v)| !v.is_finite()) {
        Some((name, _)) => Err(CliError::NonFinite(name.into())),
        None => Ok(()),
    }
}

/// Executes the full pipeline for one configuration.
pub fn run(config: &RunConfig) -> Result<RunReport, CliError> {
    config.validate()?;
    let mut clock = Stopwatch(Vec::new());
    let gen = clock.time("build", || build_generator(&config.model))?;
    let model = config.model.name().to_string();
    let states = gen.n();
    let residual = gen.detailed_balance_residual();
    let kg = clock.time("kill", || kill_domain(gen, &config.omega))?;
    let mu_total = kg.mu_total();
    let generator = GeneratorSummary {
        model,
        states,
        domain_states: kg.dim(),
        mu_total,
        bandwidth: kg.bandwidth(),
        banded_solver: kg.uses_banded_solver(),
        detailed_balance_residual: residual,
    };

    let k = config.analysis.k;
    let mt = clock.time("moments", || exit_moments(&kg, k))?;
    let ln_t = (1..=k).map(|j| mt.ln_moment(j)).collect::<Result<Vec<_>, _>>()?;
    let moments = MomentSummary { max_order: k, scale: mt.scale(), ln_t };

    let (spectrum, spec) = clock.time("spectrum", || -> Result<_, CliError> {
        if kg.dim() <= DENSE_SPECTRUM_LIMIT {
            let spec = full_spectrum(&kg)?;
            let lowest = spec.lambda().iter().take(LISTED_EIGENVALUES).copied().collect();
            let summary = SpectrumSummary {
                method: "dense".into(),
                lambda0: spec.lambda0(),
                mass0_sq: spec.mass0_sq(),
                lowest,
            };
            Ok((summary, Some(spec)))
        } else {
            let pair = principal_pair(&kg)?;
            let summary = SpectrumSummary {
                method: "subspace".into(),
                lambda0: pair.lambda0,
                mass0_sq: pair.mass_sq(),
                lowest: vec![pair.lambda0],
            };
            Ok((summary, None))
        }
    })?;

    let (lambda0, mass0_sq) = (spectrum.lambda0, spectrum.mass0_sq);
    let betas = &config.analysis.betas;
    let (bounds, bounds_normalized, reference) = clock.time("bounds", || -> Result<_, CliError> {
        for &b in betas {
            exp_moment_bounds(lambda0, b, mu_total, mass0_sq)?;
        }
        let exact = exact_exp_moments(&kg, spec.as_ref(), betas)?;
        let lookup = |table: &[(f64, f64)], scale: f64| {
            let table = table.to_vec();
            move |b: f64| table.iter().find(|(beta, _)| *beta == b).map(|(_, v)| v * scale)
        };
        let raw = bounds_report(&mt, lambda0, mass0_sq, betas, lookup(&exact, 1.0))?;
        let normalized = if config.analysis.normalize {
            let mtn = mt.with_measure_scale(1.0 / mu_total);
            let scale = 1.0 / mu_total;
            Some(bounds_report(&mtn, lambda0, mass0_sq * scale, betas, lookup(&exact, scale))?)
        } else {
            None
        };
        Ok((raw, normalized, reference_bounds(&config.model, lambda0)?))
    })?;

    let mut checks = Vec::new();
    for (label, b) in std::iter::once(("raw", &bounds)).chain(bounds_normalized.iter().map(|b| ("normalized", b))) {
        checks.extend(sandwich_check(b).into_iter().map(|mut c| {
            c.name = format!("{label}: {}", c.name);
            c
        }));
    }
    let failed = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();

    let mc = match &config.analysis.mc {
        Some(cfg) => Some(clock.time("montecarlo", || -> Result<_, CliError> {
            let estimate = simulate(&config.model, &kg, cfg)?;
            let z_scores = match empirical_vs_solver(&estimate, &mt) {
                Ok(z) => Some(z),
                Err(McError::ConventionMismatch(_)) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(McSection { estimate, z_scores })
        })?),
        None => None,
    };

    let report = RunReport {
        config: config.clone(),
        generator,
        spectrum,
        moments,
        bounds,
        bounds_normalized,
        reference,
        mc,
        checks,
        failed,
        timings: clock.0,
    };
    check_finite(&report)?;
    Ok(report)
}

/// `E_μ[e^{βτ}]` on the raw measure for each `β`, from the spectrum when it
/// is available and from a resolvent solve otherwise.
fn exact_exp_moments(
    kg: &KilledGenerator,
    spec: Option<&Spectrum>,
    betas: &[f64],
) -> Result<Vec<(f64, f64)>, CliError> {
    betas
        .iter()
        .map(|&b| {
            let v = match spec {
                Some(s) => exp_moment_exact(s, kg.mu_total(), b)?,
                None => exp_moment_resolvent(kg, b)?,
            };
            Ok((b, v))
        })
        .collect()
}

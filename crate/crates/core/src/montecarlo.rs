//! Path simulation of exit times, as a statistical check on the solvers.
//!
//! Every path draws from its own `ChaCha8Rng` keyed by `(seed, path index)`,
//! and the per-path exit times are reduced in path order, so a fixed seed gives
//! bit-identical estimates whatever the thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::generator::Generator;
use crate::killed::{kill, SolverError};
use crate::moments::MomentTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExactJump,
    EulerMaruyama,
    StableIncrement,
}

impl Scheme {
    /// Relative bias allowance when comparing against a solver.
    pub fn bias_band(self) -> f64 {
        match self {
            Scheme::ExactJump => 0.0,
            Scheme::EulerMaruyama => 0.03,
            Scheme::StableIncrement => 0.05,
        }
    }

    /// Order `p` of the time-step bias `O(dt^p)`.
    pub fn bias_order(self) -> f64 {
        match self {
            Scheme::ExactJump => f64::INFINITY,
            Scheme::EulerMaruyama => 0.5,
            Scheme::StableIncrement => 1.0,
        }
    }
}

/// Where paths start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    /// The reference measure restricted to the domain, normalized; estimates
    /// are multiplied back by the domain's mass.
    Measure,
    /// A fixed chain state (parent index).
    State(usize),
    /// A fixed point of an interval.
    Point(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub kmax: usize,
    pub scheme: Scheme,
    #[serde(default)]
    pub dt: f64,
    #[serde(default = "default_start")]
    pub start: Start,
}

fn default_start() -> Start {
    Start::Measure
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64, kmax: usize, scheme: Scheme, dt: f64) -> Self {
        Self { n_paths, seed, kmax, scheme, dt, start: Start::Measure }
    }

    fn validate(&self, expected: Scheme) -> Result<(), McError> {
        if self.scheme != expected {
            return Err(McError::SchemeMismatch { expected, found: self.scheme });
        }
        if self.n_paths == 0 {
            return Err(McError::InvalidConfig("n_paths must be at least 1"));
        }
        if self.kmax == 0 {
            return Err(McError::InvalidConfig("kmax must be at least 1"));
        }
        if expected != Scheme::ExactJump && !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(McError::InvalidConfig("dt must be positive for discretized schemes"));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum McError {
    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("this simulator needs scheme {expected:?}, got {found:?}")]
    SchemeMismatch { expected: Scheme, found: Scheme },
    #[error("no killing is reachable from the domain; the walk never exits")]
    NoKillingReachable,
    #[error("start {0:?} is not inside the domain")]
    InvalidStart(Start),
    #[error("{fraction:.1}% of paths exit on the first step; reduce dt")]
    StepTooLarge { fraction: f64 },
    #[error("alpha = {0} must lie in (0, 2)")]
    AlphaOutOfRange(f64),
    #[error("interval ({a}, {b}) is empty or not finite")]
    InvalidInterval { a: f64, b: f64 },
    #[error("estimate and reference use different measures: {0}")]
    ConventionMismatch(String),
    #[error("requested order {requested} but only {available} available")]
    OrderMismatch { requested: usize, available: usize },
    #[error(transparent)]
    Solver(SolverError),
}

/// Sample estimate of one moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub k: usize,
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub scheme: Scheme,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Factor applied to sample means: the domain's mass for a measure start,
    /// 1 for a fixed start.
    pub mass: f64,
    pub start: Start,
    /// `T̂_k` for `k = 1..=kmax`.
    pub moments: Vec<MomentEstimate>,
    pub max_exit_time: f64,
    /// Fraction of paths that left on their first step (discretized schemes).
    pub first_step_exit_fraction: f64,
    #[serde(skip)]
    samples: Vec<f64>,
}

impl McEstimate {
    pub fn kmax(&self) -> usize {
        self.moments.len()
    }

    pub fn moment(&self, k: usize) -> Option<&MomentEstimate> {
        self.moments.get(k.checked_sub(1)?)
    }

    /// Exit times in path order (empty after deserialization).
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// `(mass · mean e^{βτ}, standard error)`.
    pub fn exp_moment(&self, beta: f64) -> (f64, f64) {
        let (m, se) = mean_se(self.samples.iter().map(|t| (beta * t).exp()));
        (self.mass * m, self.mass * se)
    }

    /// Fraction of paths still inside at time `t`.
    pub fn survival(&self, t: f64) -> f64 {
        self.samples.iter().filter(|&&s| s > t).count() as f64 / self.samples.len() as f64
    }

    /// Slope of `log P(τ > t)` between `t1` and `t2`; tends to `-λ0`.
    pub fn survival_slope(&self, t1: f64, t2: f64) -> Option<f64> {
        let (s1, s2) = (self.survival(t1), self.survival(t2));
        (s1 > 0.0 && s2 > 0.0 && t2 > t1).then(|| (s2.ln() - s1.ln()) / (t2 - t1))
    }
}

fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    // Welford, in the given order
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// One exit time per path (plus whether it left on its first step).
fn run_paths(
    cfg: &McConfig,
    mass: f64,
    path: impl Fn(&mut ChaCha8Rng) -> (f64, bool) + Sync,
) -> McEstimate {
    let out: Vec<(f64, bool)> =
        (0..cfg.n_paths).into_par_iter().map(|i| path(&mut path_rng(cfg.seed, i))).collect();
    let samples: Vec<f64> = out.iter().map(|p| p.0).collect();
    let first = out.iter().filter(|p| p.1).count() as f64 / cfg.n_paths as f64;
    let moments = (1..=cfg.kmax)
        .map(|k| {
            let (m, se) = mean_se(samples.iter().map(|t| t.powi(k as i32)));
            MomentEstimate { k, mean: mass * m, std_err: mass * se, n: cfg.n_paths }
        })
        .collect();
    McEstimate {
        scheme: cfg.scheme,
        dt: cfg.dt,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        mass,
        start: cfg.start,
        moments,
        max_exit_time: samples.iter().copied().fold(0.0, f64::max),
        first_step_exit_fraction: first,
        samples,
    }
}

/// Index `i` with `cum[i-1] <= u < cum[i]`.
fn pick(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// Jump chain of one state: cumulative probabilities over `targets`, the
/// remainder being killing.
struct JumpRow {
    rate: f64,
    targets: Vec<usize>,
    cum: Vec<f64>,
}

/// Exact simulation of a finite chain killed on leaving `omega`.
pub fn simulate_chain_exit(
    gen: &Generator,
    omega: &[usize],
    cfg: &McConfig,
) -> Result<McEstimate, McError> {
    cfg.validate(Scheme::ExactJump)?;
    let kg = kill(gen, omega).map_err(|e| match e {
        SolverError::NotPositiveDefinite { .. } => McError::NoKillingReachable,
        other => McError::Solver(other),
    })?;
    let n = gen.n();
    let mut inside = vec![false; n];
    for &i in kg.omega() {
        inside[i] = true;
    }
    let l = gen.rates();
    let rows: Vec<JumpRow> = (0..n)
        .map(|i| {
            let rate = -l[(i, i)];
            let mut targets = Vec::new();
            let mut cum = Vec::new();
            let mut acc = 0.0;
            if rate > 0.0 {
                for j in (0..n).filter(|&j| j != i && l[(i, j)] > 0.0) {
                    acc += l[(i, j)] / rate;
                    targets.push(j);
                    cum.push(acc);
                }
            }
            JumpRow { rate, targets, cum }
        })
        .collect();

    let (mass, start_cum) = match cfg.start {
        Start::Measure => {
            let total = kg.mu_total();
            let mut acc = 0.0;
            let cum: Vec<f64> = kg
                .mu()
                .iter()
                .map(|m| {
                    acc += m / total;
                    acc
                })
                .collect();
            (total, Some(cum))
        }
        Start::State(s) if s < n && inside[s] => (1.0, None),
        other => return Err(McError::InvalidStart(other)),
    };
    let omega = kg.omega();
    Ok(run_paths(cfg, mass, |rng| {
        let mut state = match (&start_cum, cfg.start) {
            (Some(cum), _) => omega[pick(cum, rng.random::<f64>())],
            (None, Start::State(s)) => s,
            _ => unreachable!(),
        };
        let mut t = 0.0;
        loop {
            let row = &rows[state];
            let e: f64 = rng.sample(Exp1);
            t += e / row.rate;
            let u: f64 = rng.random();
            let idx = row.cum.partition_point(|&c| c <= u);
            match row.targets.get(idx) {
                Some(&j) if inside[j] => state = j,
                _ => return (t, false),
            }
        }
    }))
}

/// Start sampler on an interval with density proportional to `w`.
struct IntervalStart {
    a: f64,
    h: f64,
    cum: Vec<f64>,
    mass: f64,
}

const START_CELLS: usize = 4096;

impl IntervalStart {
    fn new(a: f64, b: f64, w: impl Fn(f64) -> f64) -> Self {
        let h = (b - a) / START_CELLS as f64;
        let weights: Vec<f64> = (0..START_CELLS).map(|c| w(a + (c as f64 + 0.5) * h)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cum = weights
            .iter()
            .map(|v| {
                acc += v / total;
                acc
            })
            .collect();
        Self { a, h, cum, mass: total * h }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let c = pick(&self.cum, rng.random::<f64>());
        self.a + (c as f64 + rng.random::<f64>()) * self.h
    }
}

fn check_interval(a: f64, b: f64) -> Result<(), McError> {
    if a.is_finite() && b.is_finite() && a < b {
        Ok(())
    } else {
        Err(McError::InvalidInterval { a, b })
    }
}

fn start_sampler(
    cfg: &McConfig,
    a: f64,
    b: f64,
    density: impl Fn(f64) -> f64,
) -> Result<(f64, Option<IntervalStart>), McError> {
    match cfg.start {
        Start::Measure => {
            let s = IntervalStart::new(a, b, density);
            Ok((s.mass, Some(s)))
        }
        Start::Point(x) if x > a && x < b => Ok((1.0, None)),
        other => Err(McError::InvalidStart(other)),
    }
}

fn first_step_guard(est: McEstimate) -> Result<McEstimate, McError> {
    if est.first_step_exit_fraction > 0.5 {
        return Err(McError::StepTooLarge { fraction: 100.0 * est.first_step_exit_fraction });
    }
    Ok(est)
}

/// Euler–Maruyama for `dX = V'(X) dt + √2 dW` on `(a, b)`, whose generator is
/// `Δ + V'∂`; the measure start samples `e^V dx`.
pub fn simulate_diffusion_exit(
    a: f64,
    b: f64,
    potential: impl Fn(f64) -> f64 + Sync,
    cfg: &McConfig,
) -> Result<McEstimate, McError> {
    cfg.validate(Scheme::EulerMaruyama)?;
    check_interval(a, b)?;
    let (mass, sampler) = start_sampler(cfg, a, b, |x| potential(x).exp())?;
    let drift = |x: f64| {
        let e = 1e-6 * x.abs().max(1.0);
        (potential(x + e) - potential(x - e)) / (2.0 * e)
    };
    let (dt, sd) = (cfg.dt, (2.0 * cfg.dt).sqrt());
    let est = run_paths(cfg, mass, |rng| {
        let mut x = match (&sampler, cfg.start) {
            (Some(s), _) => s.sample(rng),
            (None, Start::Point(p)) => p,
            _ => unreachable!(),
        };
        let mut steps = 0u64;
        loop {
            let z: f64 = rng.sample(StandardNormal);
            x += drift(x) * dt + sd * z;
            steps += 1;
            if !(x > a && x < b) {
                return (steps as f64 * dt, steps == 1);
            }
        }
    });
    first_step_guard(est)
}

/// Symmetric α-stable variate with `E e^{iθX} = e^{-|θ|^α}`
/// (Chambers–Mallows–Stuck).
pub fn stable_variate(alpha: f64, rng: &mut impl Rng) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = rng.sample(Exp1);
    if (alpha - 1.0).abs() < 1e-12 {
        return v.tan();
    }
    (alpha * v).sin() / v.cos().powf(1.0 / alpha)
        * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Stable random walk with increments `dt^{1/α} X`, killed on leaving `(a, b)`;
/// the measure start is uniform (Lebesgue).
pub fn simulate_stable_exit(a: f64, b: f64, alpha: f64, cfg: &McConfig) -> Result<McEstimate, McError> {
    cfg.validate(Scheme::StableIncrement)?;
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(McError::AlphaOutOfRange(alpha));
    }
    check_interval(a, b)?;
    let (mass, sampler) = start_sampler(cfg, a, b, |_| 1.0)?;
    let scale = cfg.dt.powf(1.0 / alpha);
    let dt = cfg.dt;
    let est = run_paths(cfg, mass, |rng| {
        let mut x = match (&sampler, cfg.start) {
            (Some(s), _) => s.sample(rng),
            (None, Start::Point(p)) => p,
            _ => unreachable!(),
        };
        let mut steps = 0u64;
        loop {
            x += scale * stable_variate(alpha, rng);
            steps += 1;
            if !(x > a && x < b) {
                return (steps as f64 * dt, steps == 1);
            }
        }
    });
    first_step_guard(est)
}

/// Estimates at `dt` and `dt/2` with a Richardson extrapolation of each
/// moment under an `O(dt^p)` bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtTrend {
    pub coarse: McEstimate,
    pub fine: McEstimate,
    pub order: f64,
    pub extrapolated: Vec<f64>,
}

pub fn dt_refinement(
    cfg: &McConfig,
    simulate: impl Fn(&McConfig) -> Result<McEstimate, McError>,
) -> Result<DtTrend, McError> {
    let coarse = simulate(cfg)?;
    let fine = simulate(&McConfig { dt: cfg.dt / 2.0, ..*cfg })?;
    let order = cfg.scheme.bias_order();
    let r = 2f64.powf(order);
    let extrapolated = coarse
        .moments
        .iter()
        .zip(&fine.moments)
        .map(|(c, f)| if r.is_finite() { (r * f.mean - c.mean) / (r - 1.0) } else { f.mean })
        .collect();
    Ok(DtTrend { coarse, fine, order, extrapolated })
}

/// Comparison of one simulated moment with the solver value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub k: usize,
    pub estimate: f64,
    pub reference: f64,
    pub std_err: f64,
    pub z: f64,
    /// `|T̂ - T| > 3 SE + band · T`, with the scheme's bias band.
    pub flagged: bool,
}

pub fn empirical_vs_solver(mc: &McEstimate, mt: &MomentTable) -> Result<Vec<ZScore>, McError> {
    if mc.start != Start::Measure {
        return Err(McError::ConventionMismatch(format!(
            "estimate started from {:?}, the table integrates over the domain measure",
            mc.start
        )));
    }
    // continuum starts integrate the measure exactly, grids by a Riemann sum
    let tol = if mc.scheme == Scheme::ExactJump { 1e-9 } else { 1e-2 };
    if (mc.mass - mt.mu_total()).abs() > tol * mt.mu_total() {
        return Err(McError::ConventionMismatch(format!(
            "simulated mass {} vs table mass {}",
            mc.mass,
            mt.mu_total()
        )));
    }
    if mc.kmax() > mt.max_order() {
        return Err(McError::OrderMismatch { requested: mc.kmax(), available: mt.max_order() });
    }
    let band = mc.scheme.bias_band();
    mc.moments
        .iter()
        .map(|e| {
            let reference = mt.moment(e.k).map_err(|_| McError::OrderMismatch {
                requested: e.k,
                available: mt.max_order(),
            })?;
            let diff = e.mean - reference;
            Ok(ZScore {
                k: e.k,
                estimate: e.mean,
                reference,
                std_err: e.std_err,
                z: diff / e.std_err,
                flagged: diff.abs() > 3.0 * e.std_err + band * reference.abs(),
            })
        })
        .collect()
}

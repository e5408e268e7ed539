//! Standard fixtures: a single transient state, a two-state birth–death
//! chain, random reversible chains and the discretized Brownian interval.

use exit_spectrum_core::{build_chain, build_diffusion_1d, kill, kill_all, Generator, GridSpec, KilledGenerator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `-L^Ω = [[2]]`: one state killed at rate 2.
pub fn single() -> KilledGenerator {
    let g = build_chain(&[vec![-2.0, 2.0], vec![0.0, 0.0]], &[1.0, 1.0]).unwrap();
    kill(&g, &[0]).unwrap()
}

/// Path 0 – 1 – 2 with unit rates, killed on reaching state 2.
pub fn birth_death_generator() -> Generator {
    build_chain(
        &[vec![-1.0, 1.0, 0.0], vec![1.0, -2.0, 1.0], vec![0.0, 1.0, -1.0]],
        &[1.0, 1.0, 1.0],
    )
    .unwrap()
}

pub fn birth_death() -> KilledGenerator {
    kill(&birth_death_generator(), &[0, 1]).unwrap()
}

pub const BIRTH_DEATH_LAMBDA0: f64 = 0.381_966_011_250_105_1;
pub const BIRTH_DEATH_MASS0_SQ: f64 = 1.894_427_190_999_916;

/// Reversible chain on `n` states: nearest-neighbour and random long-range
/// conductances, random weights, killing at state 0 and at a few others.
pub fn random_reversible_chain(seed: u64, n: usize) -> Generator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut cond = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || rng.random::<f64>() < 0.2 {
                let c = rng.random_range(0.1..2.0);
                cond[i][j] = c;
                cond[j][i] = c;
            }
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let kill = if i == 0 || rng.random::<f64>() < 0.25 { rng.random_range(0.05..1.0) } else { 0.0 };
            let mut row: Vec<f64> = (0..n).map(|j| cond[i][j] / mu[i]).collect();
            row[i] = -(row.iter().sum::<f64>() + kill);
            row
        })
        .collect();
    build_chain(&rows, &mu).unwrap()
}

pub fn random_chain(seed: u64, n: usize) -> KilledGenerator {
    kill_all(random_reversible_chain(seed, n)).unwrap()
}

/// Brownian motion (generator Δ) on `(0, 1)` with `n` interior points.
pub fn brownian(n: usize) -> KilledGenerator {
    let grid = GridSpec::new(0.0, 1.0, n).unwrap();
    kill_all(build_diffusion_1d(&grid, |_| 0.0).unwrap()).unwrap()
}

/// Discrete principal eigenvalue `4/h² sin²(πh/2)` of the Brownian grid.
pub fn brownian_lambda0(n: usize) -> f64 {
    let h = 1.0 / (n as f64 + 1.0);
    4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2)
}

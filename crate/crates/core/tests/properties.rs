use exit_spectrum_core::bounds::{lower_bound, upper_bound_odd, upper_bound_ratio};
use exit_spectrum_core::moments::{exit_moments, exp_moment_series};
use exit_spectrum_core::spectral::{exp_moment_exact, exp_moment_resolvent, full_spectrum, spectral_moments};
use exit_spectrum_core::*;
use proptest::prelude::*;

/// Reversible chain from symmetric conductances, weights and killing rates.
fn chain(n: usize, cond: &[f64], mu: &[f64], kill: &[f64]) -> Generator {
    let mut c = vec![vec![0.0; n]; n];
    let mut it = cond.iter();
    for i in 0..n {
        for j in i + 1..n {
            let v = *it.next().unwrap();
            // keep the path i ~ i+1 connected
            let v = if j == i + 1 { v.max(0.05) } else { v };
            c[i][j] = v;
            c[j][i] = v;
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| c[i][j] / mu[i]).collect();
            row[i] = -(row.iter().sum::<f64>() + kill[i]);
            row
        })
        .collect();
    build_chain(&rows, mu).unwrap()
}

fn arb_chain() -> impl Strategy<Value = Generator> {
    (2usize..9).prop_flat_map(|n| {
        let pairs = n * (n - 1) / 2;
        (
            prop::collection::vec(prop_oneof![Just(0.0), 0.05f64..3.0], pairs),
            prop::collection::vec(0.2f64..5.0, n),
            prop::collection::vec(prop_oneof![2 => Just(0.0), 1 => 0.01f64..2.0], n),
            0.01f64..2.0,
        )
            .prop_map(move |(cond, mu, mut kill, k0)| {
                kill[0] = k0;
                chain(n, &cond, &mu, &kill)
            })
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn green_solve_inverts_the_killed_generator(g in arb_chain(), seed in 0u64..1000) {
        let kg = kill_all(g).unwrap();
        let xi: Vec<f64> = (0..kg.dim()).map(|i| ((i as u64 + seed) % 7) as f64 - 2.0).collect();
        let u = kg.green_apply(&xi).unwrap();
        let back = kg.apply(&u).unwrap();
        let scale = xi.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (a, b) in back.iter().zip(&xi) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn exit_moments_are_positive_and_match_the_spectrum(g in arb_chain()) {
        let kg = kill_all(g).unwrap();
        let mt = exit_moments(&kg, 8).unwrap();
        let spec = full_spectrum(&kg).unwrap();
        for k in 1..=8 {
            prop_assert!(mt.exit_moment_vector(k).unwrap().iter().all(|&v| v > 0.0));
            prop_assert!(rel(mt.moment(k).unwrap(), spectral_moments(&spec, k as u32)) < 1e-8);
        }
    }

    #[test]
    fn masses_satisfy_parseval(g in arb_chain()) {
        let kg = kill_all(g).unwrap();
        let spec = full_spectrum(&kg).unwrap();
        let total: f64 = spec.mass().iter().map(|m| m * m).sum();
        prop_assert!(rel(total, kg.mu_total()) < 1e-10);
        prop_assert!(spec.mass()[0] >= 0.0);
        prop_assert!(spec.lambda().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn bounds_sandwich_lambda0(g in arb_chain()) {
        let kg = kill_all(g).unwrap();
        let spec = full_spectrum(&kg).unwrap();
        let (lam, m2) = (spec.lambda0(), spec.mass0_sq());
        let mt = exit_moments(&kg, 20).unwrap();
        let slack = 1e-9 * lam;
        for k in 1..=10 {
            prop_assert!(lower_bound(&mt, m2, k).unwrap() <= lam + slack);
            prop_assert!(lam <= upper_bound_odd(&mt, k, kg.mu_total()).unwrap() + slack);
            prop_assert!(lam <= upper_bound_ratio(&mt, k).unwrap() + slack);
        }
    }

    #[test]
    fn moment_ratios_decrease(g in arb_chain()) {
        let kg = kill_all(g).unwrap();
        let mt = exit_moments(&kg, 20).unwrap();
        let r: Vec<f64> = (1..=20).map(|k| upper_bound_ratio(&mt, k).unwrap()).collect();
        for w in r.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn variational_gap_is_nonnegative(g in arb_chain(), k in 1usize..5, seed in 0u64..10_000) {
        let kg = kill_all(g).unwrap();
        let mt = exit_moments(&kg, 5).unwrap();
        let f: Vec<f64> = (0..kg.dim()).map(|i| 1.0 + ((i as u64 * 7919 + seed) % 101) as f64 / 50.0).collect();
        let infimum = 1.0 / (k as f64 * mt.cross_moment(k - 1, k).unwrap());
        prop_assert!(variational_gap(&kg, &mt, k, &f).unwrap() >= -1e-9 * infimum);
    }

    #[test]
    fn exponential_moment_routes_agree(g in arb_chain(), frac in 0.05f64..0.9) {
        let kg = kill_all(g).unwrap();
        let spec = full_spectrum(&kg).unwrap();
        let beta = frac * spec.lambda0();
        let exact = exp_moment_exact(&spec, kg.mu_total(), beta).unwrap();
        prop_assert!(rel(exp_moment_resolvent(&kg, beta).unwrap(), exact) < 1e-9);
        let (lo, up) = exp_moment_bounds(spec.lambda0(), beta, kg.mu_total(), spec.mass0_sq()).unwrap();
        prop_assert!(lo <= exact * (1.0 + 1e-9) && exact <= up * (1.0 + 1e-9));
        let series = exp_moment_series(&exit_moments(&kg, 60).unwrap(), beta);
        prop_assert!(series.value <= exact * (1.0 + 1e-12));
    }

    #[test]
    fn measure_scaling_leaves_ratios_invariant(g in arb_chain(), factor in 0.01f64..100.0) {
        let kg = kill_all(g).unwrap();
        let mt = exit_moments(&kg, 10).unwrap();
        let scaled = mt.with_measure_scale(factor);
        for k in 1..=10 {
            prop_assert!(rel(upper_bound_ratio(&scaled, k).unwrap(), upper_bound_ratio(&mt, k).unwrap()) < 1e-13);
            prop_assert!(rel(scaled.moment(k).unwrap(), factor * mt.moment(k).unwrap()) < 1e-13);
        }
    }

    #[test]
    fn asymmetric_rates_are_rejected(g in arb_chain(), bump in 0.01f64..1.0) {
        let n = g.n();
        let mut rows: Vec<Vec<f64>> = (0..n).map(|i| g.rates().row(i).iter().copied().collect()).collect();
        rows[0][1] += bump;
        rows[0][0] -= bump;
        let rejected = matches!(
            build_chain(&rows, g.mu()),
            Err(GeneratorError::DetailedBalanceViolation { .. })
        );
        prop_assert!(rejected);
    }

    #[test]
    fn quadrature_is_exact_on_cubics(a in -5.0f64..5.0, w in 0.01f64..10.0, c in prop::array::uniform4(-3.0f64..3.0)) {
        let f = |x: f64| c[0] + x * (c[1] + x * (c[2] + x * c[3]));
        let anti = |x: f64| x * (c[0] + x * (c[1] / 2.0 + x * (c[2] / 3.0 + x * c[3] / 4.0)));
        let b = a + w;
        let got = quadrature::integrate(&f, a, b, &QuadratureConfig::default()).unwrap();
        let want = anti(b) - anti(a);
        prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()));
    }
}

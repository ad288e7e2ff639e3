use otcnet_core::analytics::experiments::positioning_run;
use otcnet_core::analytics::*;
use otcnet_core::engine::SimState;
use otcnet_core::netgen::NetworkTopology;
use otcnet_core::SimConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};

fn sample<D: Distribution<f64>>(d: D, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

#[test]
fn normal_kurtosis_is_three() {
    let xs = sample(StandardNormal, 1_000_000, 1);
    assert!((kurtosis(&xs).unwrap() - 3.0).abs() < 0.05);
    assert!(skewness(&xs).unwrap().abs() < 0.01);
}

#[test]
fn laplace_kurtosis_is_six() {
    // Difference of two unit exponentials is standard Laplace.
    let e = sample(Exp::new(1.0).unwrap(), 2_000_000, 2);
    let xs: Vec<f64> = e.chunks_exact(2).map(|c| c[0] - c[1]).collect();
    assert!((kurtosis(&xs).unwrap() - 6.0).abs() < 0.2);
}

#[test]
fn exponential_skew_is_two() {
    let xs = sample(Exp::new(1.0).unwrap(), 1_000_000, 3);
    assert!((skewness(&xs).unwrap() - 2.0).abs() < 0.05);
}

#[test]
fn exact_power_law_fits_exactly() {
    let xs: Vec<f64> = (1..=100).map(|r| 1.0 / r as f64).collect();
    let fit = zipf_fit(&xs).unwrap();
    assert!((fit.slope + 1.0).abs() < 1e-9);
    assert!((fit.r_squared - 1.0).abs() < 1e-9);
    assert_eq!(fit.ranks_used, 90);
    let flat = zipf_fit(&[2.5; 20]).unwrap();
    assert!(flat.slope.abs() < 1e-12);
    assert!(zipf_fit(&[1.0; 9]).is_err());
}

/// Expected edge count including the repair step: every admissible pair with
/// probability `p`, plus one edge per investor that drew no market maker.
#[test]
fn edge_count_matches_expectation() {
    let (n_mm, n_vi, n_ti, p) = (6, 8, 4, 0.15);
    let pairs = NetworkTopology::admissible_pairs(n_mm, n_vi, n_ti) as f64;
    let expected = p * pairs + (n_vi + n_ti) as f64 * (1.0 - p).powi(n_mm as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let runs = 4_000;
    let counts: Vec<f64> = (0..runs)
        .map(|_| {
            NetworkTopology::generate(n_mm, n_vi, n_ti, p, &mut rng)
                .unwrap()
                .edge_count() as f64
        })
        .collect();
    let m = mean(&counts);
    let se = (variance(&counts) / runs as f64).sqrt();
    assert!((m - expected).abs() < 3.0 * se, "{m} vs {expected} (se {se})");
}

#[test]
fn complete_dealer_graph_rarely_offers_arbitrage() {
    let cfg = SimConfig {
        prob_of_link: 1.0,
        rng_seed: 4,
        ..SimConfig::default()
    };
    let mut s = SimState::new(cfg).unwrap();
    s.run(5_000).unwrap();
    let arb = arbitrage_series(&s.mm_history, 1.0).unwrap();
    let positive = arb.iter().filter(|&&a| a > 0.0).count();
    assert!(
        positive as f64 <= 0.01 * arb.len() as f64,
        "{positive} of {}",
        arb.len()
    );
    assert!(arb.iter().all(|&a| a >= -1.0 - 1e-12));
}

proptest! {
    #[test]
    fn arbitrage_bounded_by_spread(mids in proptest::collection::vec(80.0f64..120.0, 2..10), b in 0.0f64..2.0) {
        let a = arbitrage(&mids, b);
        prop_assert!(a >= -b - 1e-12);
        let equal = mids.iter().all(|&m| m == mids[0]);
        prop_assert_eq!(equal, (a + b).abs() < 1e-15);
    }

    #[test]
    fn percentile_is_bounded(prices in proptest::collection::vec(50.0f64..150.0, 1..200)) {
        if let Some(p) = range_percentile(&prices) {
            prop_assert!((0.0..=100.0).contains(&p));
        }
    }
}

#[test]
fn two_dealer_arbitrage() {
    let s = arbitrage_series(&[vec![100.0, 100.0], vec![102.0, 100.0]], 1.0).unwrap();
    assert_eq!(s, vec![1.0, -1.0]);
    assert!(arbitrage_series(&[vec![100.0]], 1.0).is_err());
}

#[test]
fn spearman_detects_monotone_relations() {
    let xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let down: Vec<f64> = xs.iter().map(|x| -x.powi(3)).collect();
    let r = spearman(&xs, &down).unwrap();
    assert!((r.rho + 1.0).abs() < 1e-12);
    assert!(r.p_negative < 1e-6);
    let noise = sample(Normal::new(0.0, 1.0).unwrap(), 40, 9);
    let r = spearman(&xs, &noise).unwrap();
    assert!(r.p_two_sided > 0.01);
}

/// Dealers pushed short lean the return distribution to the right relative
/// to the mirror-image long push.
#[test]
fn short_dealers_skew_returns_up() {
    let cfg = SimConfig {
        n_trend_investors: 0,
        ..SimConfig::default()
    };
    let level = cfg.dealer_position_limit + cfg.trade_size_cap;
    let mut short = Vec::new();
    let mut long = Vec::new();
    for seed in 0..24 {
        for (sign, out) in [(-1.0, &mut short), (1.0, &mut long)] {
            let mut s = SimState::with_seed(cfg.clone(), seed).unwrap();
            for m in &mut s.mms {
                m.inventory = sign * level;
            }
            s.run(3_000).unwrap();
            out.push((s.inventory_history.clone(), s.mean_history.clone()));
        }
    }
    let skew = |runs: &[(Vec<f64>, Vec<f64>)]| {
        mean(
            &skew_vs_positioning(runs)
                .unwrap()
                .iter()
                .map(|p| p.skewness)
                .collect::<Vec<_>>(),
        )
    };
    assert!(skew(&short) > skew(&long), "{} vs {}", skew(&short), skew(&long));
}

#[test]
fn no_trades_means_no_positioning() {
    let cfg = SimConfig {
        n_value_investors: 0,
        n_trend_investors: 0,
        ..SimConfig::default()
    };
    let run = positioning_run(&cfg, 0, &[], 500).unwrap();
    let pts = skew_vs_positioning(&[run.clone(), run]).unwrap();
    assert!(pts.iter().all(|p| p.positioning == 0.0 && p.skewness == 0.0));
}

mod common;

use approx::assert_abs_diff_eq;
use common::normal_expectation;
use proptest::prelude::*;
use qcd_core::DistributionPair;

fn random_table() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..7).prop_flat_map(|k| {
        (
            prop::collection::vec(0.05f64..1.0, k),
            prop::collection::vec(0.05f64..1.0, k),
        )
            .prop_map(|(a, b)| {
                let sa: f64 = a.iter().sum();
                let sb: f64 = b.iter().sum();
                (a.iter().map(|x| x / sa).collect(), b.iter().map(|x| x / sb).collect())
            })
    })
}

#[test]
fn gaussian_closed_forms_match_quadrature() {
    for (mu, sigma) in [(1.0, 1.0), (0.5, 1.0), (2.0, 1.5), (-1.0, 2.0)] {
        let pair = DistributionPair::gaussian(mu, sigma).unwrap();
        // ln f0/f1 (x) = (μ² − 2μx) / 2σ²
        let log_ratio = |x: f64| (mu * mu - 2.0 * mu * x) / (2.0 * sigma * sigma);
        for theta in [0.1, 0.25, 0.5, 0.9] {
            let quad = normal_expectation(mu, sigma, |x| (theta * log_ratio(x)).exp()).ln();
            assert_abs_diff_eq!(pair.cumulant_gen_fn(theta).unwrap(), quad, epsilon = 1e-8);
        }
        let c = normal_expectation(mu, sigma, |x| (-log_ratio(x)).exp()).ln();
        assert_abs_diff_eq!(pair.channel_constant().unwrap(), c, epsilon = 1e-8);
        let kl = normal_expectation(mu, sigma, |x| -log_ratio(x));
        assert_abs_diff_eq!(pair.kl_divergence().unwrap(), kl, epsilon = 1e-8);
    }
}

#[test]
fn cumulant_vanishes_at_both_ends() {
    let pairs = [
        DistributionPair::gaussian(1.0, 1.0).unwrap(),
        DistributionPair::bernoulli(0.2, 0.8).unwrap(),
        DistributionPair::table(vec![0.05, 0.7, 0.25], vec![0.4, 0.35, 0.25]).unwrap(),
    ];
    for pair in &pairs {
        assert_abs_diff_eq!(pair.cumulant_gen_fn(0.0).unwrap(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pair.cumulant_gen_fn(1.0).unwrap(), 0.0, epsilon = 1e-9);
    }
}

#[test]
fn cumulant_is_strictly_convex_and_negative_inside() {
    let pairs = [
        DistributionPair::gaussian(1.0, 1.0).unwrap(),
        DistributionPair::bernoulli(0.2, 0.8).unwrap(),
        DistributionPair::bernoulli(0.3, 0.6).unwrap(),
    ];
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    for pair in &pairs {
        let lam = |t: f64| pair.cumulant_gen_fn(t).unwrap();
        for &t in &grid[1..100] {
            assert!(lam(t) < 0.0, "{pair} Λ({t}) = {}", lam(t));
        }
        for (i, &a) in grid.iter().enumerate() {
            for &b in &grid[i + 1..] {
                let mid = lam(0.5 * (a + b));
                assert!(mid < 0.5 * (lam(a) + lam(b)), "{pair}: convexity fails on [{a}, {b}]");
            }
        }
    }
}

#[test]
fn bernoulli_channel_constant_reference() {
    let pair = DistributionPair::bernoulli(0.2, 0.8).unwrap();
    assert_abs_diff_eq!(pair.channel_constant().unwrap(), 3.25f64.ln(), epsilon = 1e-12);
}

proptest! {
    #[test]
    fn kl_never_exceeds_channel_constant((p0, p1) in random_table()) {
        prop_assume!(p0.iter().zip(&p1).any(|(a, b)| (a - b).abs() > 1e-6));
        let pair = DistributionPair::table(p0, p1).unwrap();
        let kl = pair.kl_divergence().unwrap();
        let c = pair.channel_constant().unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(kl <= c + 1e-12, "kl={} C={}", kl, c);
    }

    #[test]
    fn cumulant_is_nonpositive_on_the_unit_interval((p0, p1) in random_table(), theta in 0.0f64..=1.0) {
        prop_assume!(p0.iter().zip(&p1).any(|(a, b)| (a - b).abs() > 1e-6));
        let pair = DistributionPair::table(p0, p1).unwrap();
        prop_assert!(pair.cumulant_gen_fn(theta).unwrap() <= 1e-12);
    }

    #[test]
    fn gaussian_kl_and_channel_constant_scale_with_snr(mu in 0.05f64..4.0, sigma in 0.2f64..4.0) {
        let pair = DistributionPair::gaussian(mu, sigma).unwrap();
        let snr = mu * mu / (sigma * sigma);
        prop_assert!((pair.channel_constant().unwrap() - snr).abs() <= 1e-12 * snr.max(1.0));
        prop_assert!((pair.kl_divergence().unwrap() - snr / 2.0).abs() <= 1e-12 * snr.max(1.0));
    }
}

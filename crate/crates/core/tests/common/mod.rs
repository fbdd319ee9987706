//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use qcd_core::{CusumDetector, DistributionPair, Llr, ThresholdPolicy};

/// Gauss–Hermite nodes and weights for `∫ f(x) e^{-x²} dx`, by Newton
/// iteration on normalized Hermite polynomials.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const EPS: f64 = 3e-14;
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PIM4, 0.0f64);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `E[g(X)]` for `X ~ N(mean, sd²)` by 128-node Gauss–Hermite quadrature.
pub fn normal_expectation(mean: f64, sd: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite(128);
    let s: f64 = x
        .iter()
        .zip(&w)
        .map(|(&xi, &wi)| wi * g(mean + std::f64::consts::SQRT_2 * sd * xi))
        .sum();
    s / std::f64::consts::PI.sqrt()
}

/// Stopping-time pmf by walking every observation path with the streaming
/// detector. Stopped prefixes are not extended further.
pub fn enumerate_pmf(
    pair: &DistributionPair,
    policy: &ThresholdPolicy,
    horizon: u64,
    nu: Option<u64>,
) -> (Vec<f64>, f64) {
    let symbols = pair.symbols().expect("discrete pair");
    let alphabet: Vec<(f64, f64, f64)> = symbols.iter().map(|s| (s.index as f64, s.f0, s.f1)).collect();
    let mut p_stop = vec![0.0; horizon as usize];
    let mut censored = 0.0;

    #[allow(clippy::too_many_arguments)]
    fn walk(
        pair: &DistributionPair,
        alphabet: &[(f64, f64, f64)],
        detector: CusumDetector,
        prob: f64,
        horizon: u64,
        nu: Option<u64>,
        p_stop: &mut [f64],
        censored: &mut f64,
    ) {
        let n = detector.state().n + 1;
        if n > horizon {
            *censored += prob;
            return;
        }
        let post = nu.is_some_and(|nu| n >= nu);
        for &(x, f0, f1) in alphabet {
            let p = if post { f1 } else { f0 };
            if p == 0.0 {
                continue;
            }
            let mut next = detector.clone();
            let llr: Llr = pair.log_likelihood_ratio(x).unwrap();
            if next.observe(llr).unwrap().is_some() {
                p_stop[(n - 1) as usize] += prob * p;
            } else {
                walk(pair, alphabet, next, prob * p, horizon, nu, p_stop, censored);
            }
        }
    }

    walk(
        pair,
        &alphabet,
        CusumDetector::new(*policy),
        1.0,
        horizon,
        nu,
        &mut p_stop,
        &mut censored,
    );
    (p_stop, censored)
}

/// Minimum of `f` over an evenly spaced grid of `points` values in `[lo, hi]`.
pub fn dense_grid_min(lo: f64, hi: f64, points: usize, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let t = lo + step * i as f64;
            (t, f(t))
        })
        .fold(
            (f64::NAN, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// Least-squares fit `y = a + b x`; returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (intercept, slope, r2)
}

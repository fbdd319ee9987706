//! Latency bounds for the time-varying-threshold CuSum test.
//!
//! The upper bound on the high-probability latency minimizes, over
//! `θ ∈ (0, 1)`,
//!
//! ```text
//! d(θ) = [log(1/δD) + θ log(1/δF) + rθ log T + θ log ζ(r)] / |Λ(θ)|
//! ```
//!
//! which comes from a Chernoff bound on the post-change LLR sum. The lower
//! bound is the leading-order expression `(1/C)[log T + log(1/δF) + log(1 − δF − δD)]`
//! with every vanishing term dropped, so it is only meaningful for large `T`.

use serde::Serialize;

use crate::dist::DistributionPair;
use crate::error::{check_open_probability, QcdError, Result};

/// Lower end of the θ search interval; the upper end is `1 − THETA_MARGIN`.
pub const THETA_MARGIN: f64 = 1e-6;
const COARSE_GRID_POINTS: usize = 64;
const GOLDEN_TOLERANCE: f64 = 1e-11;
const GOLDEN_MAX_ITERS: usize = 200;

// Euler–Maclaurin tail for ζ: direct sum of the first ZETA_DIRECT_TERMS − 1
// terms, then the integral, the half-term and seven Bernoulli corrections.
const ZETA_DIRECT_TERMS: u32 = 16;
// B_{2k} / (2k)! for k = 1..=7
const BERNOULLI_OVER_FACTORIAL: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30_240.0,
    -1.0 / 1_209_600.0,
    1.0 / 47_900_160.0,
    -691.0 / 1_307_674_368_000.0,
    1.0 / 74_724_249_600.0,
];

/// Riemann zeta `ζ(r) = Σ_{i≥1} i^{-r}` for real `r > 1`.
///
/// Absolute error is far below 1e-12 across `r ∈ (1, ∞)`.
pub fn zeta(r: f64) -> Result<f64> {
    if !(r.is_finite() && r > 1.0) {
        return Err(QcdError::domain(format!("zeta(r) diverges for r <= 1; got r={r}")));
    }
    let n = f64::from(ZETA_DIRECT_TERMS);
    let head: f64 = (1..ZETA_DIRECT_TERMS).rev().map(|i| f64::from(i).powf(-r)).sum();
    let mut tail = n.powf(1.0 - r) / (r - 1.0) + 0.5 * n.powf(-r);
    // rising factorial r (r+1) ... (r+2k-2) times N^{-r-2k+1}
    let mut rising = r;
    let mut power = n.powf(-r - 1.0);
    for (k, coeff) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        if k > 0 {
            let j = 2.0 * k as f64;
            rising *= (r + j - 1.0) * (r + j);
            power /= n * n;
        }
        tail += coeff * rising * power;
    }
    Ok(head + tail)
}

/// Parameters shared by every latency-bound evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyProblem {
    pub horizon: u64,
    pub delta_f: f64,
    pub delta_d: f64,
    pub r: f64,
}

impl LatencyProblem {
    pub fn new(horizon: u64, delta_f: f64, delta_d: f64, r: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(QcdError::usage("horizon must be at least 1"));
        }
        check_open_probability("delta_f", delta_f)?;
        check_open_probability("delta_d", delta_d)?;
        if !(r.is_finite() && r > 1.0) {
            return Err(QcdError::usage(format!("r must exceed 1; got {r}")));
        }
        Ok(Self {
            horizon,
            delta_f,
            delta_d,
            r,
        })
    }
}

/// The four additive terms of the bracket at a given θ, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundComponents {
    pub log_inv_delta_d: f64,
    pub theta_log_inv_delta_f: f64,
    pub r_theta_log_t: f64,
    pub theta_log_zeta: f64,
}

impl BoundComponents {
    fn at(problem: &LatencyProblem, log_zeta: f64, theta: f64) -> Self {
        Self {
            log_inv_delta_d: -problem.delta_d.ln(),
            theta_log_inv_delta_f: -theta * problem.delta_f.ln(),
            r_theta_log_t: problem.r * theta * (problem.horizon as f64).ln(),
            theta_log_zeta: theta * log_zeta,
        }
    }

    pub fn total(&self) -> f64 {
        self.log_inv_delta_d + self.theta_log_inv_delta_f + self.r_theta_log_t + self.theta_log_zeta
    }
}

fn check_open_theta(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(QcdError::domain(format!(
            "theta must lie strictly inside (0, 1) where |Λ(θ)| > 0; got {theta}"
        )))
    }
}

fn bound_at(pair: &DistributionPair, problem: &LatencyProblem, log_zeta: f64, theta: f64) -> Result<f64> {
    let lambda = pair.cumulant_gen_fn(theta)?;
    if lambda >= 0.0 {
        return Err(QcdError::domain(format!(
            "Λ({theta}) = {lambda} is not negative; bound undefined"
        )));
    }
    Ok(BoundComponents::at(problem, log_zeta, theta).total() / lambda.abs())
}

/// Latency bound `d(θ)` at a fixed θ; never below the bound's infimum.
pub fn latency_bound_at_theta(pair: &DistributionPair, problem: &LatencyProblem, theta: f64) -> Result<f64> {
    check_open_theta(theta)?;
    bound_at(pair, problem, zeta(problem.r)?.ln(), theta)
}

/// Minimizer of the latency bound over θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpperBound {
    pub theta_star: f64,
    pub d_bar: f64,
}

/// Minimizes [`latency_bound_at_theta`] over `[1e-6, 1 − 1e-6]`.
///
/// A 64-point coarse grid picks the bracket around the best sample, then
/// golden-section search refines inside it.
pub fn latency_upper_bound(pair: &DistributionPair, problem: &LatencyProblem) -> Result<UpperBound> {
    let log_zeta = zeta(problem.r)?.ln();
    let objective = |theta: f64| bound_at(pair, problem, log_zeta, theta);

    let lo = THETA_MARGIN;
    let hi = 1.0 - THETA_MARGIN;
    let step = (hi - lo) / (COARSE_GRID_POINTS - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..COARSE_GRID_POINTS)
        .map(|i| {
            let theta = lo + step * i as f64;
            objective(theta).map(|v| (theta, v))
        })
        .collect::<Result<_>>()?;
    let (best_index, &(best_theta, best_value)) = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("grid is nonempty");
    if !best_value.is_finite() {
        return Err(QcdError::NonConvergence { best_theta, best_value });
    }

    let a = grid[best_index.saturating_sub(1)].0;
    let b = grid[(best_index + 1).min(COARSE_GRID_POINTS - 1)].0;
    let (theta, value) = golden_section_min(objective, a, b)?;
    let (theta_star, d_bar) = if value <= best_value {
        (theta, value)
    } else {
        (best_theta, best_value)
    };
    if !(d_bar.is_finite() && d_bar > 0.0) {
        return Err(QcdError::NonConvergence {
            best_theta: theta_star,
            best_value: d_bar,
        });
    }
    Ok(UpperBound { theta_star, d_bar })
}

fn golden_section_min<F>(f: F, mut a: f64, mut b: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..GOLDEN_MAX_ITERS {
        if (b - a).abs() <= GOLDEN_TOLERANCE {
            let (theta, value) = if fc <= fd { (c, fc) } else { (d, fd) };
            return Ok((theta, value));
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let (best_theta, best_value) = if fc <= fd { (c, fc) } else { (d, fd) };
    Err(QcdError::NonConvergence { best_theta, best_value })
}

/// Chernoff bound on `Pr_ν(τ ≥ ν + d)`:
/// `(ζ(r)(ν+d)^r / δF)^θ · exp(d Λ(θ))`.
///
/// The result is a bound, not a probability, and may exceed one.
pub fn miss_probability_bound(
    pair: &DistributionPair,
    nu: u64,
    d: u64,
    delta_f: f64,
    r: f64,
    theta: f64,
) -> Result<f64> {
    check_open_theta(theta)?;
    check_open_probability("delta_f", delta_f)?;
    if nu == 0 {
        return Err(QcdError::usage("change point must be at least 1"));
    }
    let log_zeta = zeta(r)?.ln();
    let log_threshold = log_zeta + r * ((nu + d) as f64).ln() - delta_f.ln();
    let lambda = pair.cumulant_gen_fn(theta)?;
    Ok((theta * log_threshold + d as f64 * lambda).exp())
}

/// The same bound made uniform over `ν ≤ T − d` by replacing `ν + d` with
/// `T`: `(ζ(r) T^r / δF)^θ · exp(d Λ(θ))`, for real `d ≥ 0`.
///
/// At `d = d(θ)` from [`latency_bound_at_theta`] it equals `δD` exactly.
pub fn horizon_miss_bound(pair: &DistributionPair, problem: &LatencyProblem, theta: f64, d: f64) -> Result<f64> {
    check_open_theta(theta)?;
    if !(d.is_finite() && d >= 0.0) {
        return Err(QcdError::usage(format!(
            "window d must be finite and nonnegative; got {d}"
        )));
    }
    let log_threshold = zeta(problem.r)?.ln() + problem.r * (problem.horizon as f64).ln() - problem.delta_f.ln();
    let lambda = pair.cumulant_gen_fn(theta)?;
    Ok((theta * log_threshold + d * lambda).exp())
}

/// Leading-order lower bound `(1/C)[log T + log(1/δF) + log(1 − δF − δD)]`.
///
/// Asymptotic in `T`; it can be small or negative at short horizons.
pub fn asymptotic_lower_bound(pair: &DistributionPair, horizon: u64, delta_f: f64, delta_d: f64) -> Result<f64> {
    if horizon == 0 {
        return Err(QcdError::usage("horizon must be at least 1"));
    }
    check_open_probability("delta_f", delta_f)?;
    check_open_probability("delta_d", delta_d)?;
    if delta_f + delta_d >= 1.0 {
        return Err(QcdError::domain(format!(
            "lower bound hypothesis violated: delta_f + delta_d = {} >= 1",
            delta_f + delta_d
        )));
    }
    let c = pair.channel_constant()?;
    let bracket = (horizon as f64).ln() - delta_f.ln() + (1.0 - delta_f - delta_d).ln();
    Ok(bracket / c)
}

/// Upper and lower latency bounds for one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub problem: LatencyProblem,
    pub theta_star: f64,
    /// Real-valued; ceil it for a sample count.
    pub upper_bound_d: f64,
    pub components: BoundComponents,
    /// `None` when `δF + δD ≥ 1`.
    pub lower_bound_d: Option<f64>,
    pub valid_lower: bool,
}

pub fn bound_report(pair: &DistributionPair, problem: &LatencyProblem) -> Result<BoundReport> {
    let upper = latency_upper_bound(pair, problem)?;
    let components = BoundComponents::at(problem, zeta(problem.r)?.ln(), upper.theta_star);
    let valid_lower = problem.delta_f + problem.delta_d < 1.0;
    let lower_bound_d = if valid_lower {
        Some(asymptotic_lower_bound(
            pair,
            problem.horizon,
            problem.delta_f,
            problem.delta_d,
        )?)
    } else {
        None
    };
    Ok(BoundReport {
        problem: *problem,
        theta_star: upper.theta_star,
        upper_bound_d: upper.d_bar,
        components,
        lower_bound_d,
        valid_lower,
    })
}

//! Reproducible parallel Monte Carlo estimation.
//!
//! Trial `i` draws from the stream keyed by `(master_seed, i)` and every
//! estimator reduces by counting, so a report depends only on the seed and
//! the trial count, never on the number of worker threads.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::detector::{first_crossing, ThresholdPolicy};
use crate::dist::{ChangePoint, DistributionPair, Regime};
use crate::error::{QcdError, Result};
use crate::rng::{trial_rng, TrialRng};

pub const DEFAULT_CONFIDENCE: f64 = 0.99;
const MIN_TRIALS: u64 = 100;
const MIN_LATENCY_TRIALS: u64 = 1000;

/// Trial count, seed, parallelism and CI level for one estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloConfig {
    pub trials: u64,
    pub master_seed: u64,
    /// Worker threads; 0 lets rayon pick.
    #[serde(skip)]
    pub workers: usize,
    pub confidence: f64,
}

impl MonteCarloConfig {
    pub fn new(trials: u64, master_seed: u64) -> Self {
        Self {
            trials,
            master_seed,
            workers: 0,
            confidence: DEFAULT_CONFIDENCE,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    fn validate(&self, min_trials: u64) -> Result<()> {
        if self.trials < min_trials {
            return Err(QcdError::usage(format!(
                "need at least {min_trials} trials; got {}",
                self.trials
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(QcdError::usage(format!(
                "confidence level must lie in (0, 1); got {}",
                self.confidence
            )));
        }
        Ok(())
    }

    /// Runs `trial` for indices `offset..offset + trials` and returns the
    /// outputs in index order.
    fn run<T, F>(&self, offset: u64, trial: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(TrialRng) -> T + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| QcdError::unsupported(format!("cannot start worker pool: {e}")))?;
        let seed = self.master_seed;
        Ok(pool.install(|| {
            (offset..offset + self.trials)
                .into_par_iter()
                .map(|i| trial(trial_rng(seed, i)))
                .collect()
        }))
    }

    fn count<F>(&self, offset: u64, trial: F) -> Result<u64>
    where
        F: Fn(TrialRng) -> bool + Sync,
    {
        Ok(self.run(offset, trial)?.into_iter().filter(|&hit| hit).count() as u64)
    }
}

/// Exact (Clopper–Pearson) two-sided binomial confidence interval.
pub fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials, "invalid binomial counts");
    let alpha = 1.0 - confidence;
    let (k, n) = (successes as f64, trials as f64);
    let low = if successes == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, k, n - k + 1.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, k + 1.0, n - k)
    };
    (low, high)
}

// Inverse regularized incomplete beta by bisection; the CDF is monotone in x.
fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// What an [`EstimationReport`] estimated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    pub pair: DistributionPair,
    pub policy: ThresholdPolicy,
    pub horizon: u64,
    pub change_point: ChangePoint,
    /// Latency window `d` for miss estimates.
    pub window: Option<u64>,
}

/// Binomial estimate with its Clopper–Pearson interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationReport {
    pub trials: u64,
    pub successes: u64,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    pub master_seed: u64,
    pub instance: Instance,
}

impl EstimationReport {
    fn new(successes: u64, config: &MonteCarloConfig, instance: Instance) -> Self {
        let (ci_low, ci_high) = clopper_pearson(successes, config.trials, config.confidence);
        let point = successes as f64 / config.trials as f64;
        Self {
            trials: config.trials,
            successes,
            point,
            // the bisection can land a hair on the wrong side of k/N when the interval is tight
            ci_low: ci_low.min(point),
            ci_high: ci_high.max(point),
            confidence: config.confidence,
            master_seed: config.master_seed,
            instance,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

/// Estimates `Pr_∞(τ ≤ T)` from `config.trials` change-free trajectories.
pub fn estimate_false_alarm(
    pair: &DistributionPair,
    policy: &ThresholdPolicy,
    horizon: u64,
    config: &MonteCarloConfig,
) -> Result<EstimationReport> {
    config.validate(MIN_TRIALS)?;
    if horizon == 0 {
        return Err(QcdError::usage("horizon must be at least 1"));
    }
    let thresholds = policy.thresholds(horizon);
    let hits = config.count(0, |mut rng| {
        first_crossing(&thresholds, |_| pair.sample_llr(&mut rng, Regime::PreChange)).is_some()
    })?;
    Ok(EstimationReport::new(
        hits,
        config,
        Instance {
            pair: pair.clone(),
            policy: *policy,
            horizon,
            change_point: ChangePoint::Never,
            window: None,
        },
    ))
}

/// Estimates `Pr_ν(τ ≥ ν + d)`; censored runs count as misses.
pub fn estimate_miss(
    pair: &DistributionPair,
    policy: &ThresholdPolicy,
    horizon: u64,
    nu: u64,
    d: u64,
    config: &MonteCarloConfig,
) -> Result<EstimationReport> {
    config.validate(MIN_TRIALS)?;
    if nu == 0 || d == 0 || nu + d > horizon {
        return Err(QcdError::usage(format!(
            "miss estimate needs 1 <= nu, 1 <= d and nu + d <= T; got nu={nu}, d={d}, T={horizon}"
        )));
    }
    // a miss is decided once step ν + d − 1 passes without a stop
    let thresholds = policy.thresholds(nu + d - 1);
    let change_point = ChangePoint::At(nu);
    let misses = config.count(0, |mut rng| {
        first_crossing(&thresholds, |n| pair.sample_llr(&mut rng, change_point.regime(n))).is_none()
    })?;
    Ok(EstimationReport::new(
        misses,
        config,
        Instance {
            pair: pair.clone(),
            policy: *policy,
            horizon,
            change_point,
            window: Some(d),
        },
    ))
}

/// `{1, T/4, T/2, 3T/4, T − d_guess}` restricted to `1..T`.
///
/// Passing `d_guess = ceil(upper bound)` keeps the last point inside the
/// `ν ≤ T − d̂` range for any estimate `d̂` below the bound.
pub fn default_nu_grid(horizon: u64, d_guess: u64) -> Vec<u64> {
    let mut grid = vec![
        1,
        horizon / 4,
        horizon / 2,
        3 * horizon / 4,
        horizon.saturating_sub(d_guess),
    ];
    grid.retain(|&nu| nu >= 1 && nu < horizon);
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Simulated delay profile for one change point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuCurve {
    pub nu: u64,
    /// `miss_counts[d − 1]` = trials with `τ ≥ ν + d`, for `d ∈ 1..=T−ν`.
    pub miss_counts: Vec<u64>,
    /// Estimate of `Pr_ν(τ ≥ ν + d̂)` (absent when `d̂` is infeasible or `ν > T − d̂`).
    pub at_latency: Option<EstimationReport>,
}

impl NuCurve {
    pub fn miss_fraction(&self, d: u64, trials: u64) -> Option<f64> {
        let i = usize::try_from(d).ok()?.checked_sub(1)?;
        self.miss_counts.get(i).map(|&k| k as f64 / trials as f64)
    }

    /// Smallest `d` with `Pr_ν(τ ≥ ν + d) ≤ 1 − q`, i.e. the `q`-quantile of
    /// the detection delay `τ − ν + 1` over `1..=T−ν`.
    pub fn delay_quantile(&self, q: f64, trials: u64) -> Option<u64> {
        let limit = (1.0 - q) * trials as f64;
        self.miss_counts
            .iter()
            .position(|&k| k as f64 <= limit)
            .map(|i| i as u64 + 1)
    }
}

/// Empirical high-probability latency and the per-ν evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyEstimate {
    pub horizon: u64,
    pub delta_d: f64,
    pub trials: u64,
    pub master_seed: u64,
    /// Smallest `d` whose estimated miss rate is `≤ δD` at every grid `ν ≤ T − d`.
    pub d_hat: Option<u64>,
    /// Same rule applied to the CI lower ends (optimistic) and upper ends (pessimistic).
    pub d_ci: (Option<u64>, Option<u64>),
    pub curves: Vec<NuCurve>,
    /// At `d̂`, whether the largest admissible grid `ν` had the largest miss
    /// rate. Monitored, not enforced.
    pub worst_at_largest_nu: bool,
}

// Largest k with pred(k) over a monotone (true..., false...) predicate on 0..=n.
fn last_true(n: u64, pred: impl Fn(u64) -> bool) -> Option<u64> {
    if !pred(0) {
        return None;
    }
    let (mut lo, mut hi) = (0u64, n);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Some(lo)
}

/// Estimates the high-probability latency from the delay distributions at
/// every `ν` of `nu_grid`.
pub fn empirical_latency(
    pair: &DistributionPair,
    policy: &ThresholdPolicy,
    horizon: u64,
    delta_d: f64,
    nu_grid: &[u64],
    config: &MonteCarloConfig,
) -> Result<LatencyEstimate> {
    config.validate(MIN_LATENCY_TRIALS)?;
    if !(delta_d > 0.0 && delta_d <= 1.0) {
        return Err(QcdError::usage(format!("delta_d must lie in (0, 1]; got {delta_d}")));
    }
    if horizon < 2 {
        return Err(QcdError::usage("latency needs T >= 2"));
    }
    let mut grid = nu_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() || grid.iter().any(|&nu| nu == 0 || nu >= horizon) {
        return Err(QcdError::usage(format!(
            "change-point grid must be a nonempty subset of 1..={}",
            horizon - 1
        )));
    }

    let thresholds = policy.thresholds(horizon);
    let trials = config.trials;
    let mut curves = Vec::with_capacity(grid.len());
    for (position, &nu) in grid.iter().enumerate() {
        let change_point = ChangePoint::At(nu);
        let stops = config.run(position as u64 * trials, |mut rng| {
            first_crossing(&thresholds, |n| pair.sample_llr(&mut rng, change_point.regime(n)))
        })?;
        // stops_by[n] = trials stopped at or before n
        let mut stops_by = vec![0u64; horizon as usize + 1];
        for n in stops.into_iter().flatten() {
            stops_by[n as usize] += 1;
        }
        for n in 1..stops_by.len() {
            stops_by[n] += stops_by[n - 1];
        }
        let miss_counts = (1..=horizon - nu)
            .map(|d| trials - stops_by[(nu + d - 1) as usize])
            .collect();
        curves.push(NuCurve {
            nu,
            miss_counts,
            at_latency: None,
        });
    }

    let smallest_window = |ok: &dyn Fn(u64) -> bool| {
        (1..horizon).find(|&d| {
            curves
                .iter()
                .filter(|c| c.nu <= horizon - d)
                .all(|c| ok(c.miss_counts[(d - 1) as usize]))
        })
    };
    let max_point = (delta_d * trials as f64).floor() as u64;
    let d_hat = smallest_window(&|k| k <= max_point);
    // CP bounds are monotone in k, so "ci ≤ δD" is a count cutoff
    let max_high = last_true(trials, |k| clopper_pearson(k, trials, config.confidence).1 <= delta_d);
    let max_low = last_true(trials, |k| clopper_pearson(k, trials, config.confidence).0 <= delta_d);
    let pessimistic = max_high.and_then(|m| smallest_window(&|k| k <= m));
    let optimistic = max_low.and_then(|m| smallest_window(&|k| k <= m));

    let mut worst_at_largest_nu = true;
    if let Some(d) = d_hat {
        for curve in &mut curves {
            if curve.nu + d <= horizon {
                let k = curve.miss_counts[(d - 1) as usize];
                curve.at_latency = Some(EstimationReport::new(
                    k,
                    config,
                    Instance {
                        pair: pair.clone(),
                        policy: *policy,
                        horizon,
                        change_point: ChangePoint::At(curve.nu),
                        window: Some(d),
                    },
                ));
            }
        }
        let admissible: Vec<&NuCurve> = curves.iter().filter(|c| c.at_latency.is_some()).collect();
        if let Some(last) = admissible.last() {
            let worst = admissible
                .iter()
                .map(|c| c.miss_counts[(d - 1) as usize])
                .max()
                .unwrap_or(0);
            worst_at_largest_nu = last.miss_counts[(d - 1) as usize] == worst;
        }
    }

    Ok(LatencyEstimate {
        horizon,
        delta_d,
        trials,
        master_seed: config.master_seed,
        d_hat,
        d_ci: (optimistic, pessimistic),
        curves,
        worst_at_largest_nu,
    })
}

//! Streaming CuSum detector with fixed or time-varying thresholds.

use serde::Serialize;

use crate::bounds::zeta;
use crate::dist::{DistributionPair, Llr};
use crate::error::{check_open_probability, QcdError, Result};

/// Stopping threshold as a function of the sample index `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Classic CuSum: stop once `W_n ≥ b`.
    Fixed { b: f64 },
    /// Stop once `W_n ≥ log(ζ(r) n^r / δF)`; the threshold ignores the horizon.
    TimeVarying {
        delta_f: f64,
        r: f64,
        #[serde(skip)]
        log_zeta_r: f64,
    },
}

impl ThresholdPolicy {
    pub fn fixed(b: f64) -> Result<Self> {
        if b.is_nan() {
            return Err(QcdError::usage("fixed threshold is NaN"));
        }
        Ok(Self::Fixed { b })
    }

    pub fn time_varying(delta_f: f64, r: f64) -> Result<Self> {
        check_open_probability("delta_f", delta_f)?;
        if !(r.is_finite() && r > 1.0) {
            return Err(QcdError::usage(format!("r must exceed 1; got {r}")));
        }
        Ok(Self::TimeVarying {
            delta_f,
            r,
            log_zeta_r: zeta(r)?.ln(),
        })
    }

    /// Threshold applied to `W_n`.
    pub fn threshold_at(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(QcdError::usage("thresholds are indexed from n = 1"));
        }
        Ok(self.threshold_unchecked(n))
    }

    fn threshold_unchecked(&self, n: u64) -> f64 {
        match *self {
            Self::Fixed { b } => b,
            Self::TimeVarying { delta_f, r, log_zeta_r } => log_zeta_r + r * (n as f64).ln() - delta_f.ln(),
        }
    }

    /// Thresholds for `n = 1..=horizon`, index `n − 1`.
    pub fn thresholds(&self, horizon: u64) -> Vec<f64> {
        (1..=horizon).map(|n| self.threshold_unchecked(n)).collect()
    }
}

impl std::fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Fixed { b } => write!(f, "fixed(b={b})"),
            Self::TimeVarying { delta_f, r, .. } => write!(f, "tvt(delta_f={delta_f};r={r})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorStatus {
    Running,
    Stopped { at: u64 },
}

/// `W_n` together with the sample count and stopping status.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorState {
    pub w: f64,
    pub n: u64,
    pub status: DetectorStatus,
}

impl Default for DetectorState {
    fn default() -> Self {
        Self {
            w: 0.0,
            n: 0,
            status: DetectorStatus::Running,
        }
    }
}

/// `W_n = max(W_{n−1}, 0) + llr`; rejects updates once stopped.
pub fn cusum_update(state: DetectorState, llr: Llr) -> Result<DetectorState> {
    if let DetectorStatus::Stopped { at } = state.status {
        return Err(QcdError::usage(format!("detector already stopped at n = {at}")));
    }
    Ok(DetectorState {
        w: state.w.max(0.0) + llr.value(),
        n: state.n + 1,
        status: DetectorStatus::Running,
    })
}

/// `max_{1≤k≤n} Σ_{i=k}^{n} llr_i`, straight from the definition.
pub fn cusum_statistic_batch(llrs: &[Llr]) -> Result<f64> {
    if llrs.is_empty() {
        return Err(QcdError::usage("CuSum statistic needs at least one LLR"));
    }
    let mut best = f64::NEG_INFINITY;
    for k in 0..llrs.len() {
        let suffix: f64 = llrs[k..].iter().map(|l| l.value()).sum();
        best = best.max(suffix);
    }
    Ok(best)
}

/// Result of running a detector up to a horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum StoppingOutcome {
    StoppedAt {
        n: u64,
    },
    /// The horizon was reached without crossing the threshold.
    Censored {
        horizon: u64,
    },
}

impl StoppingOutcome {
    pub fn stopped_at(self) -> Option<u64> {
        match self {
            Self::StoppedAt { n } => Some(n),
            Self::Censored { .. } => None,
        }
    }
}

/// A CuSum statistic bound to a threshold policy.
#[derive(Debug, Clone)]
pub struct CusumDetector {
    policy: ThresholdPolicy,
    state: DetectorState,
}

impl CusumDetector {
    pub fn new(policy: ThresholdPolicy) -> Self {
        Self {
            policy,
            state: DetectorState::default(),
        }
    }

    pub fn state(&self) -> DetectorState {
        self.state
    }

    pub fn policy(&self) -> &ThresholdPolicy {
        &self.policy
    }

    /// Feeds one LLR; returns `Some(n)` on the step that crosses the threshold.
    pub fn observe(&mut self, llr: Llr) -> Result<Option<u64>> {
        let mut next = cusum_update(self.state, llr)?;
        // ties stop
        if next.w >= self.policy.threshold_unchecked(next.n) {
            next.status = DetectorStatus::Stopped { at: next.n };
        }
        self.state = next;
        Ok(match next.status {
            DetectorStatus::Stopped { at } => Some(at),
            DetectorStatus::Running => None,
        })
    }
}

/// Runs the detector over at most `horizon` observations.
///
/// Observations are pulled one at a time; nothing past the stopping time is
/// read. Fails if the stream ends before the horizon without a stop.
pub fn run_detector<I>(
    pair: &DistributionPair,
    policy: &ThresholdPolicy,
    observations: I,
    horizon: u64,
) -> Result<StoppingOutcome>
where
    I: IntoIterator<Item = f64>,
{
    if horizon == 0 {
        return Err(QcdError::usage("horizon must be at least 1"));
    }
    let mut detector = CusumDetector::new(*policy);
    let mut stream = observations.into_iter();
    for n in 1..=horizon {
        let x = stream.next().ok_or_else(|| {
            QcdError::usage(format!(
                "observation stream ended at n = {} before horizon {horizon}",
                n - 1
            ))
        })?;
        if let Some(at) = detector.observe(pair.log_likelihood_ratio(x)?)? {
            return Ok(StoppingOutcome::StoppedAt { n: at });
        }
    }
    Ok(StoppingOutcome::Censored { horizon })
}

/// Hot-loop variant over precomputed thresholds (`thresholds[n − 1]` is the
/// threshold at `n`) and an LLR source. Returns the stopping index or `None`.
pub(crate) fn first_crossing<F>(thresholds: &[f64], mut next_llr: F) -> Option<u64>
where
    F: FnMut(u64) -> f64,
{
    let mut w = 0.0f64;
    for (i, &threshold) in thresholds.iter().enumerate() {
        let n = i as u64 + 1;
        w = w.max(0.0) + next_llr(n);
        if w >= threshold {
            return Some(n);
        }
    }
    None
}

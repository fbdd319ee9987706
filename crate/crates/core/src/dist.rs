//! Pre/post-change distribution pairs.
//!
//! A [`DistributionPair`] holds the pre-change density `f0` and the
//! post-change density `f1` of an i.i.d. observation stream. It evaluates
//! log-likelihood ratios, samples observations under either regime and
//! exposes the information quantities that drive the latency bounds:
//!
//! * the cumulant generating function of `log(f0/f1)` under `f1`,
//!   `Λ(θ) = log E_f1[(f0(X)/f1(X))^θ]`,
//! * the constant `C = log E_f1[f1(X)/f0(X)]`,
//! * the divergence `kl(f1; f0) = E_f1[log(f1(X)/f0(X))]`.
//!
//! Gaussian quantities use closed forms; discrete quantities are exact
//! finite sums over the alphabet.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Serialize, Serializer};

use crate::error::{QcdError, Result};

const MASS_TOLERANCE: f64 = 1e-12;

/// Parametric family of the pair.
///
/// `GaussianMeanShift` is `f0 = N(0, σ²)`, `f1 = N(μ, σ²)`. `Bernoulli` and
/// `DiscreteTable` observe symbols `0..K` encoded as the floats `0.0, 1.0, ...`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    GaussianMeanShift { mu: f64, sigma: f64 },
    Bernoulli { p0: f64, p1: f64 },
    DiscreteTable { p0: Vec<f64>, p1: Vec<f64> },
}

/// One symbol of a discrete alphabet with its masses and LLR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Symbol {
    pub index: usize,
    pub f0: f64,
    pub f1: f64,
    pub llr: f64,
}

/// Which density generates an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    PreChange,
    PostChange,
}

/// Log-likelihood ratio `log(f1(x)/f0(x))`, in nats.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Llr(pub f64);

impl Llr {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Alphabet {
    symbols: Vec<Symbol>,
    cdf0: Vec<f64>,
    cdf1: Vec<f64>,
}

impl Alphabet {
    fn new(p0: &[f64], p1: &[f64]) -> Self {
        let symbols = p0
            .iter()
            .zip(p1)
            .enumerate()
            .map(|(index, (&f0, &f1))| Symbol {
                index,
                f0,
                f1,
                llr: if f0 > 0.0 { f1.ln() - f0.ln() } else { 0.0 },
            })
            .collect();
        let cumulative = |p: &[f64]| {
            let mut acc = 0.0;
            p.iter()
                .map(|&m| {
                    acc += m;
                    acc
                })
                .collect::<Vec<_>>()
        };
        Self {
            symbols,
            cdf0: cumulative(p0),
            cdf1: cumulative(p1),
        }
    }

    fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R, regime: Regime) -> usize {
        let cdf = match regime {
            Regime::PreChange => &self.cdf0,
            Regime::PostChange => &self.cdf1,
        };
        let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        let masses = |i: usize| match regime {
            Regime::PreChange => self.symbols[i].f0,
            Regime::PostChange => self.symbols[i].f1,
        };
        match cdf.iter().position(|&c| u < c) {
            Some(i) => i,
            // u landed on the rounding slack at the top: take the last symbol with mass
            None => (0..cdf.len()).rev().find(|&i| masses(i) > 0.0).unwrap_or(0),
        }
    }
}

/// Pre-change density `f0` paired with post-change density `f1`.
#[derive(Debug, Clone)]
pub struct DistributionPair {
    family: Family,
    alphabet: Option<Alphabet>,
}

impl Serialize for DistributionPair {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.family.serialize(serializer)
    }
}

impl PartialEq for DistributionPair {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
    }
}

impl fmt::Display for DistributionPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            Family::GaussianMeanShift { mu, sigma } => write!(f, "gaussian(mu={mu};sigma={sigma})"),
            Family::Bernoulli { p0, p1 } => write!(f, "bernoulli(p0={p0};p1={p1})"),
            Family::DiscreteTable { p0, p1 } => {
                let join = |p: &[f64]| p.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
                write!(f, "table(p0={};p1={})", join(p0), join(p1))
            }
        }
    }
}

impl DistributionPair {
    /// `f0 = N(0, σ²)` versus `f1 = N(μ, σ²)`.
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || mu == 0.0 {
            return Err(QcdError::domain(format!(
                "gaussian mean shift must be finite and nonzero (f0 = f1 otherwise); got mu={mu}"
            )));
        }
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(QcdError::domain(format!(
                "sigma must be finite and positive; got {sigma}"
            )));
        }
        Ok(Self {
            family: Family::GaussianMeanShift { mu, sigma },
            alphabet: None,
        })
    }

    /// Bernoulli(p0) versus Bernoulli(p1); both must lie strictly inside (0, 1).
    pub fn bernoulli(p0: f64, p1: f64) -> Result<Self> {
        for (name, p) in [("p0", p0), ("p1", p1)] {
            if !(p.is_finite() && p > 0.0 && p < 1.0) {
                return Err(QcdError::domain(format!(
                    "bernoulli {name} must lie in (0, 1) so both symbols have finite LLR; got {p}"
                )));
            }
        }
        if p0 == p1 {
            return Err(QcdError::domain(format!("f0 = f1 (p0 = p1 = {p0})")));
        }
        Ok(Self {
            family: Family::Bernoulli { p0, p1 },
            alphabet: Some(Alphabet::new(&[1.0 - p0, p0], &[1.0 - p1, p1])),
        })
    }

    /// Two probability vectors over the alphabet `0..K`.
    ///
    /// Both must sum to one within 1e-12 and share the same support.
    pub fn table(p0: Vec<f64>, p1: Vec<f64>) -> Result<Self> {
        if p0.len() != p1.len() {
            return Err(QcdError::domain(format!(
                "probability vectors differ in length ({} vs {})",
                p0.len(),
                p1.len()
            )));
        }
        if p0.len() < 2 {
            return Err(QcdError::domain("alphabet needs at least two symbols"));
        }
        for (name, p) in [("p0", &p0), ("p1", &p1)] {
            if p.iter().any(|&m| !m.is_finite() || m < 0.0) {
                return Err(QcdError::domain(format!("{name} has a negative or non-finite entry")));
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > MASS_TOLERANCE {
                return Err(QcdError::domain(format!("{name} sums to {total}, not 1")));
            }
        }
        if let Some(i) = (0..p0.len()).find(|&i| (p0[i] > 0.0) != (p1[i] > 0.0)) {
            return Err(QcdError::domain(format!(
                "symbol {i} is in the support of only one density (p0={}, p1={}); LLR would be infinite",
                p0[i], p1[i]
            )));
        }
        let tv: f64 = 0.5 * p0.iter().zip(&p1).map(|(a, b)| (a - b).abs()).sum::<f64>();
        if tv == 0.0 {
            return Err(QcdError::domain("f0 = f1 (identical probability vectors)"));
        }
        let alphabet = Alphabet::new(&p0, &p1);
        Ok(Self {
            family: Family::DiscreteTable { p0, p1 },
            alphabet: Some(alphabet),
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn is_discrete(&self) -> bool {
        self.alphabet.is_some()
    }

    /// Alphabet symbols for discrete pairs, `None` for continuous ones.
    pub fn symbols(&self) -> Option<&[Symbol]> {
        self.alphabet.as_ref().map(|a| a.symbols.as_slice())
    }

    /// `log f1(x) − log f0(x)`.
    pub fn log_likelihood_ratio(&self, x: f64) -> Result<Llr> {
        let value = match (&self.family, &self.alphabet) {
            (Family::GaussianMeanShift { mu, sigma }, _) => {
                if !x.is_finite() {
                    return Err(QcdError::domain(format!("observation {x} is not finite")));
                }
                gaussian_llr(*mu, *sigma, x)
            }
            (_, Some(alphabet)) => {
                let symbol = (x >= 0.0 && x.fract() == 0.0)
                    .then(|| alphabet.symbols.get(x as usize))
                    .flatten()
                    .filter(|s| s.f0 > 0.0)
                    .ok_or_else(|| QcdError::domain(format!("observation {x} is outside the common support")))?;
                symbol.llr
            }
            _ => unreachable!("discrete families always carry an alphabet"),
        };
        Ok(Llr(value))
    }

    /// Draws one observation from `f0` or `f1`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, regime: Regime) -> f64 {
        match (&self.family, &self.alphabet) {
            (Family::GaussianMeanShift { mu, sigma }, _) => {
                let z: f64 = rng.sample(StandardNormal);
                let shift = if regime == Regime::PostChange { *mu } else { 0.0 };
                shift + sigma * z
            }
            (_, Some(alphabet)) => alphabet.sample_index(rng, regime) as f64,
            _ => unreachable!("discrete families always carry an alphabet"),
        }
    }

    /// Draws one observation and returns only its LLR; the Monte Carlo fast path.
    pub fn sample_llr<R: Rng + ?Sized>(&self, rng: &mut R, regime: Regime) -> f64 {
        match (&self.family, &self.alphabet) {
            (Family::GaussianMeanShift { mu, sigma }, _) => {
                let z: f64 = rng.sample(StandardNormal);
                let shift = if regime == Regime::PostChange { *mu } else { 0.0 };
                gaussian_llr(*mu, *sigma, shift + sigma * z)
            }
            (_, Some(alphabet)) => alphabet.symbols[alphabet.sample_index(rng, regime)].llr,
            _ => unreachable!("discrete families always carry an alphabet"),
        }
    }

    /// `Λ(θ) = log E_f1[exp(θ log(f0(X)/f1(X)))]` for `θ ∈ [0, 1]`.
    pub fn cumulant_gen_fn(&self, theta: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(QcdError::usage(format!("theta must lie in [0, 1]; got {theta}")));
        }
        let value = match (&self.family, &self.alphabet) {
            (Family::GaussianMeanShift { .. }, _) => 0.5 * self.gaussian_snr() * theta * (theta - 1.0),
            (_, Some(alphabet)) => {
                if theta == 0.0 || theta == 1.0 {
                    // Σ f1 and Σ f0 over a common support; exact up to the mass tolerance
                    0.0
                } else {
                    alphabet
                        .symbols
                        .iter()
                        .filter(|s| s.f1 > 0.0)
                        .map(|s| s.f1 * (-theta * s.llr).exp())
                        .sum::<f64>()
                        .ln()
                }
            }
            _ => unreachable!(),
        };
        finite_or_domain(value, "cumulant generating function")
    }

    /// `C = log E_f1[f1(X)/f0(X)]`; strictly positive for any valid pair.
    pub fn channel_constant(&self) -> Result<f64> {
        let value = match (&self.family, &self.alphabet) {
            (Family::GaussianMeanShift { .. }, _) => self.gaussian_snr(),
            (_, Some(alphabet)) => alphabet
                .symbols
                .iter()
                .filter(|s| s.f1 > 0.0)
                .map(|s| s.f1 * s.llr.exp())
                .sum::<f64>()
                .ln(),
            _ => unreachable!(),
        };
        finite_or_domain(value, "channel constant")
    }

    /// `kl(f1; f0) = E_f1[log(f1(X)/f0(X))]`.
    pub fn kl_divergence(&self) -> Result<f64> {
        let value = match (&self.family, &self.alphabet) {
            (Family::GaussianMeanShift { .. }, _) => 0.5 * self.gaussian_snr(),
            (_, Some(alphabet)) => alphabet
                .symbols
                .iter()
                .filter(|s| s.f1 > 0.0)
                .map(|s| s.f1 * s.llr)
                .sum::<f64>()
                .max(0.0),
            _ => unreachable!(),
        };
        finite_or_domain(value, "KL divergence")
    }

    // μ²/σ²
    fn gaussian_snr(&self) -> f64 {
        match self.family {
            Family::GaussianMeanShift { mu, sigma } => (mu / sigma).powi(2),
            _ => unreachable!(),
        }
    }
}

fn gaussian_llr(mu: f64, sigma: f64, x: f64) -> f64 {
    mu * (x - 0.5 * mu) / (sigma * sigma)
}

fn finite_or_domain(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(QcdError::domain(format!("{what} is not finite ({value})")))
    }
}

/// Time at which the observations switch from `f0` to `f1`.
///
/// `At(ν)` means `X_i ~ f0` for `i < ν` and `X_i ~ f1` for `i ≥ ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangePoint {
    At(u64),
    Never,
}

impl ChangePoint {
    /// Regime of the `i`-th observation (1-based).
    pub fn regime(self, i: u64) -> Regime {
        match self {
            ChangePoint::At(nu) if i >= nu => Regime::PostChange,
            _ => Regime::PreChange,
        }
    }
}

impl fmt::Display for ChangePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChangePoint::At(nu) => write!(f, "{nu}"),
            ChangePoint::Never => f.write_str("inf"),
        }
    }
}

impl Serialize for ChangePoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ChangePoint::At(nu) => serializer.serialize_u64(*nu),
            ChangePoint::Never => serializer.serialize_str("inf"),
        }
    }
}

/// Observation model for one trajectory: pair, change point and horizon.
#[derive(Debug, Clone, Copy)]
pub struct TrajectorySpec<'a> {
    pair: &'a DistributionPair,
    change_point: ChangePoint,
    horizon: u64,
}

impl<'a> TrajectorySpec<'a> {
    pub fn new(pair: &'a DistributionPair, change_point: ChangePoint, horizon: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(QcdError::usage("horizon must be at least 1"));
        }
        if let ChangePoint::At(nu) = change_point {
            if nu == 0 || nu > horizon {
                return Err(QcdError::usage(format!(
                    "change point must satisfy 1 <= nu <= T = {horizon}; got {nu}"
                )));
            }
        }
        Ok(Self {
            pair,
            change_point,
            horizon,
        })
    }

    pub fn pair(&self) -> &'a DistributionPair {
        self.pair
    }

    pub fn change_point(&self) -> ChangePoint {
        self.change_point
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// Lazily generated observations `X_1, ..., X_T`.
    pub fn stream<R: Rng>(&self, rng: R) -> Observations<'a, R> {
        Observations {
            pair: self.pair,
            change_point: self.change_point,
            horizon: self.horizon,
            next_index: 1,
            rng,
        }
    }
}

/// Iterator over the observations of a [`TrajectorySpec`].
#[derive(Debug)]
pub struct Observations<'a, R> {
    pair: &'a DistributionPair,
    change_point: ChangePoint,
    horizon: u64,
    next_index: u64,
    rng: R,
}

impl<R: Rng> Iterator for Observations<'_, R> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if self.next_index > self.horizon {
            return None;
        }
        let regime = self.change_point.regime(self.next_index);
        self.next_index += 1;
        Some(self.pair.sample(&mut self.rng, regime))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.horizon + 1 - self.next_index) as usize;
        (left, Some(left))
    }
}

/// Materializes all `T` observations of a trajectory.
pub fn sample_trajectory<R: Rng>(spec: &TrajectorySpec<'_>, rng: R) -> Vec<f64> {
    spec.stream(rng).collect()
}

//! Exact finite-horizon analysis for discrete observation alphabets.
//!
//! The CuSum statistic restarts from zero whenever it goes nonpositive, so
//! its value after a restart is a sum of LLRs since the restart. When every
//! LLR is an integer multiple of a common gap `g`, `W_n / g` lives on a small
//! integer lattice and the stopping-time distribution follows from a forward
//! pass over that lattice. Otherwise the state is the vector of symbol counts
//! since the last restart, which is exact but only tractable for short
//! horizons.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::detector::ThresholdPolicy;
use crate::dist::{ChangePoint, DistributionPair, Regime, Symbol};
use crate::error::{check_open_probability, QcdError, Result};

/// Largest horizon handled by the lattice forward pass.
pub const MAX_LATTICE_HORIZON: u64 = 100_000;
/// Largest horizon handled by the count-class fallback.
pub const MAX_ENUMERATION_HORIZON: u64 = 20;
/// Relative tolerance for matching LLRs to lattice points.
pub const LATTICE_TOLERANCE: f64 = 1e-9;
const MAX_LATTICE_DENOMINATOR: i64 = 256;
const MAX_MARTINGALE_STEPS: usize = 30;

/// Exact distribution of a stopping time over `1..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OraclePmf {
    pub horizon: u64,
    /// `p_stop[n − 1] = Pr(τ = n)`.
    pub p_stop: Vec<f64>,
    /// `Pr(τ > horizon)`.
    pub p_censored: f64,
}

impl OraclePmf {
    /// `Pr(τ ≤ n)` for `n ≤ horizon`.
    pub fn stop_by(&self, n: u64) -> f64 {
        let n = n.min(self.horizon) as usize;
        self.p_stop[..n].iter().sum()
    }

    /// `Pr(a ≤ τ < b)`, with indices clipped to `1..=horizon`.
    pub fn window_mass(&self, a: u64, b: u64) -> f64 {
        let lo = a.max(1);
        let hi = b.min(self.horizon + 1);
        if lo >= hi {
            return 0.0;
        }
        self.p_stop[(lo - 1) as usize..(hi - 1) as usize].iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.p_stop.iter().sum::<f64>() + self.p_censored
    }
}

/// LLRs expressed as integer multiples of a common gap.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub gap: f64,
    /// One entry per symbol, aligned with [`DistributionPair::symbols`].
    pub multiples: Vec<i64>,
}

/// Finds a gap `g` with every LLR within tolerance of an integer multiple
/// of `g`, via continued-fraction rationalization of LLR ratios.
pub fn detect_lattice(pair: &DistributionPair) -> Option<Lattice> {
    let symbols = pair.symbols()?;
    let values: Vec<f64> = symbols.iter().filter(|s| s.f0 > 0.0).map(|s| s.llr).collect();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let reference = values
        .iter()
        .copied()
        .filter(|v| v.abs() > LATTICE_TOLERANCE * scale)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))?;

    let mut denominator_lcm: i64 = 1;
    for &v in &values {
        let (_, q) = rationalize(v / reference, LATTICE_TOLERANCE, MAX_LATTICE_DENOMINATOR)?;
        denominator_lcm = lcm(denominator_lcm, q);
        if denominator_lcm > MAX_LATTICE_DENOMINATOR {
            return None;
        }
    }
    let gap = reference.abs() / denominator_lcm as f64;
    let multiples: Vec<i64> = symbols
        .iter()
        .map(|s| if s.f0 > 0.0 { (s.llr / gap).round() as i64 } else { 0 })
        .collect();
    let fits = symbols
        .iter()
        .zip(&multiples)
        .filter(|(s, _)| s.f0 > 0.0)
        .all(|(s, &m)| (s.llr - m as f64 * gap).abs() <= LATTICE_TOLERANCE * scale);
    fits.then_some(Lattice { gap, multiples })
}

// Best continued-fraction convergent p/q of x with |x − p/q| ≤ tol·max(1,|x|).
fn rationalize(x: f64, tol: f64, max_den: i64) -> Option<(i64, i64)> {
    let target = tol * x.abs().max(1.0);
    let (mut h_prev, mut h) = (0i64, 1i64);
    let (mut k_prev, mut k) = (1i64, 0i64);
    let mut y = x;
    for _ in 0..64 {
        let a = y.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let a = a as i64;
        let h_next = a.checked_mul(h)?.checked_add(h_prev)?;
        let k_next = a.checked_mul(k)?.checked_add(k_prev)?;
        if k_next > max_den {
            return None;
        }
        (h_prev, h, k_prev, k) = (h, h_next, k, k_next);
        if (x - h as f64 / k as f64).abs() <= target {
            return Some((h, k));
        }
        let frac = y - a as f64;
        if frac == 0.0 {
            return None;
        }
        y = 1.0 / frac;
    }
    None
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: i64, b: i64) -> i64 {
    a / gcd(a, b) * b
}

/// One step of the exact forward pass.
trait ExactChain {
    type State: Clone;

    fn initial(&self) -> Self::State;

    /// Advances one observation; returns the surviving state and the mass
    /// that stopped (`W_n ≥ threshold`) on this step.
    fn step(&self, state: &Self::State, regime: Regime, threshold: f64) -> (Self::State, f64);

    fn mass(state: &Self::State) -> f64;
}

struct LatticeChain {
    gap: f64,
    moves: Vec<(i64, f64, f64)>,
    max_up: usize,
}

impl LatticeChain {
    fn new(symbols: &[Symbol], lattice: &Lattice) -> Self {
        let moves: Vec<(i64, f64, f64)> = symbols
            .iter()
            .zip(&lattice.multiples)
            .filter(|(s, _)| s.f0 > 0.0 || s.f1 > 0.0)
            .map(|(s, &m)| (m, s.f0, s.f1))
            .collect();
        let max_up = moves.iter().map(|m| m.0.max(0) as usize).max().unwrap_or(0);
        Self {
            gap: lattice.gap,
            moves,
            max_up,
        }
    }
}

impl ExactChain for LatticeChain {
    // mass[i] = Pr(max(W_n, 0) = i·g, not stopped)
    type State = Vec<f64>;

    fn initial(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn step(&self, state: &Vec<f64>, regime: Regime, threshold: f64) -> (Vec<f64>, f64) {
        let mut next = vec![0.0; state.len() + self.max_up];
        let mut stopped = 0.0;
        for (i, &m) in state.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for &(multiple, f0, f1) in &self.moves {
                let p = match regime {
                    Regime::PreChange => f0,
                    Regime::PostChange => f1,
                };
                if p == 0.0 {
                    continue;
                }
                let j = i as i64 + multiple;
                if j as f64 * self.gap >= threshold {
                    stopped += m * p;
                } else {
                    next[j.max(0) as usize] += m * p;
                }
            }
        }
        while next.len() > 1 && next.last() == Some(&0.0) {
            next.pop();
        }
        (next, stopped)
    }

    fn mass(state: &Vec<f64>) -> f64 {
        state.iter().sum()
    }
}

struct CountChain {
    symbols: Vec<Symbol>,
}

impl ExactChain for CountChain {
    // symbol counts since the last restart → probability
    type State = BTreeMap<Vec<u16>, f64>;

    fn initial(&self) -> Self::State {
        BTreeMap::from([(vec![0u16; self.symbols.len()], 1.0)])
    }

    fn step(&self, state: &Self::State, regime: Regime, threshold: f64) -> (Self::State, f64) {
        let mut next = BTreeMap::new();
        let mut stopped = 0.0;
        for (counts, &m) in state {
            for (k, s) in self.symbols.iter().enumerate() {
                let p = match regime {
                    Regime::PreChange => s.f0,
                    Regime::PostChange => s.f1,
                };
                if p == 0.0 {
                    continue;
                }
                let mut c = counts.clone();
                c[k] += 1;
                let w: f64 = c.iter().zip(&self.symbols).map(|(&n, s)| f64::from(n) * s.llr).sum();
                if w >= threshold {
                    stopped += m * p;
                } else {
                    if w <= 0.0 {
                        c.iter_mut().for_each(|n| *n = 0);
                    }
                    *next.entry(c).or_insert(0.0) += m * p;
                }
            }
        }
        (next, stopped)
    }

    fn mass(state: &Self::State) -> f64 {
        state.values().sum()
    }
}

enum Chain {
    Lattice(LatticeChain),
    Counts(CountChain),
}

fn build_chain(pair: &DistributionPair, horizon: u64) -> Result<Chain> {
    let symbols = pair.symbols().ok_or_else(|| {
        QcdError::unsupported(format!(
            "exact analysis needs a discrete pair; {pair} is continuous (use Monte Carlo)"
        ))
    })?;
    if horizon == 0 {
        return Err(QcdError::usage("horizon must be at least 1"));
    }
    match detect_lattice(pair) {
        Some(lattice) => {
            if horizon > MAX_LATTICE_HORIZON {
                return Err(QcdError::unsupported(format!(
                    "lattice forward pass supports T <= {MAX_LATTICE_HORIZON}; got {horizon}"
                )));
            }
            Ok(Chain::Lattice(LatticeChain::new(symbols, &lattice)))
        }
        None => {
            if horizon > MAX_ENUMERATION_HORIZON {
                return Err(QcdError::unsupported(format!(
                    "LLRs of {pair} do not share a lattice; exact enumeration supports T <= {MAX_ENUMERATION_HORIZON}, got {horizon}"
                )));
            }
            Ok(Chain::Counts(CountChain {
                symbols: symbols.to_vec(),
            }))
        }
    }
}

fn forward_pmf<C: ExactChain>(chain: &C, thresholds: &[f64], change_point: ChangePoint) -> OraclePmf {
    let mut state = chain.initial();
    let mut p_stop = Vec::with_capacity(thresholds.len());
    for (i, &threshold) in thresholds.iter().enumerate() {
        let (next, stopped) = chain.step(&state, change_point.regime(i as u64 + 1), threshold);
        p_stop.push(stopped);
        state = next;
    }
    OraclePmf {
        horizon: thresholds.len() as u64,
        p_stop,
        p_censored: C::mass(&state),
    }
}

/// Exact pmf of the stopping time under `Pr_ν` (or `Pr_∞` for `ChangePoint::Never`).
pub fn exact_stopping_distribution(
    pair: &DistributionPair,
    policy: &ThresholdPolicy,
    horizon: u64,
    change_point: ChangePoint,
) -> Result<OraclePmf> {
    if change_point == ChangePoint::At(0) {
        return Err(QcdError::usage("change point must be at least 1"));
    }
    let thresholds = policy.thresholds(horizon);
    Ok(match build_chain(pair, horizon)? {
        Chain::Lattice(chain) => forward_pmf(&chain, &thresholds, change_point),
        Chain::Counts(chain) => forward_pmf(&chain, &thresholds, change_point),
    })
}

/// `Pr_∞(τ ≤ T)`, exactly.
pub fn exact_false_alarm(pair: &DistributionPair, policy: &ThresholdPolicy, horizon: u64) -> Result<f64> {
    Ok(exact_stopping_distribution(pair, policy, horizon, ChangePoint::Never)?.stop_by(horizon))
}

/// Exact miss probabilities `Pr_ν(τ ≥ ν + d)` for every `ν ∈ 1..T` and
/// `d ∈ 1..=T−ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct MissTable {
    horizon: u64,
    // rows[ν − 1][d − 1]
    rows: Vec<Vec<f64>>,
}

impl MissTable {
    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// `Pr_ν(τ ≥ ν + d)`; `None` outside `1 ≤ ν`, `1 ≤ d`, `ν + d ≤ T`.
    pub fn miss(&self, nu: u64, d: u64) -> Option<f64> {
        if nu == 0 || d == 0 {
            return None;
        }
        self.rows
            .get(nu as usize - 1)
            .and_then(|row| row.get(d as usize - 1))
            .copied()
    }

    /// `max_{ν ∈ 1..=T−d} Pr_ν(τ ≥ ν + d)`.
    pub fn worst_miss(&self, d: u64) -> f64 {
        (1..=self.horizon.saturating_sub(d))
            .filter_map(|nu| self.miss(nu, d))
            .fold(0.0, f64::max)
    }

    fn window_ok(&self, d: u64, delta_d: f64) -> bool {
        (1..=self.horizon.saturating_sub(d)).all(|nu| self.miss(nu, d).is_some_and(|p| p <= delta_d))
    }
}

fn forward_miss_table<C: ExactChain>(chain: &C, thresholds: &[f64]) -> MissTable {
    let horizon = thresholds.len() as u64;
    // pre[k] = surviving state after k pre-change steps
    let mut pre = Vec::with_capacity(thresholds.len());
    let mut state = chain.initial();
    pre.push(state.clone());
    for &threshold in thresholds.iter().take(thresholds.len().saturating_sub(2)) {
        state = chain.step(&state, Regime::PreChange, threshold).0;
        pre.push(state.clone());
    }
    let rows = (1..horizon)
        .map(|nu| {
            let mut state = pre[(nu - 1) as usize].clone();
            let mut row = Vec::with_capacity((horizon - nu) as usize);
            for n in nu..horizon {
                state = chain.step(&state, Regime::PostChange, thresholds[(n - 1) as usize]).0;
                row.push(C::mass(&state).clamp(0.0, 1.0));
            }
            row
        })
        .collect();
    MissTable { horizon, rows }
}

/// Exact miss-probability table for every change point in the horizon.
pub fn exact_miss_table(pair: &DistributionPair, policy: &ThresholdPolicy, horizon: u64) -> Result<MissTable> {
    if horizon < 2 {
        return Err(QcdError::usage("miss table needs T >= 2"));
    }
    let thresholds = policy.thresholds(horizon);
    Ok(match build_chain(pair, horizon)? {
        Chain::Lattice(chain) => forward_miss_table(&chain, &thresholds),
        Chain::Counts(chain) => forward_miss_table(&chain, &thresholds),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactLatency {
    Window(u64),
    /// No `d ≤ T − 1` meets the miss constraint.
    Infeasible,
}

impl ExactLatency {
    pub fn window(self) -> Option<u64> {
        match self {
            Self::Window(d) => Some(d),
            Self::Infeasible => None,
        }
    }
}

/// How [`exact_high_prob_latency_with`] scans candidate windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatencySearch {
    /// Bisection on the monotone feasibility predicate.
    #[default]
    Bisection,
    /// Every `d` from 1 upward; kept to cross-check the bisection.
    Linear,
}

/// Smallest `d` with `Pr_ν(τ ≥ ν + d) ≤ δD` for all `ν ∈ 1..=T−d`.
pub fn exact_high_prob_latency(
    pair: &DistributionPair,
    policy: &ThresholdPolicy,
    horizon: u64,
    delta_d: f64,
) -> Result<ExactLatency> {
    exact_high_prob_latency_with(pair, policy, horizon, delta_d, LatencySearch::Bisection)
}

pub fn exact_high_prob_latency_with(
    pair: &DistributionPair,
    policy: &ThresholdPolicy,
    horizon: u64,
    delta_d: f64,
    search: LatencySearch,
) -> Result<ExactLatency> {
    if !(delta_d > 0.0 && delta_d <= 1.0) {
        return Err(QcdError::usage(format!("delta_d must lie in (0, 1]; got {delta_d}")));
    }
    let table = exact_miss_table(pair, policy, horizon)?;
    Ok(latency_from_table(&table, delta_d, search))
}

/// Latency search over a precomputed table.
pub fn latency_from_table(table: &MissTable, delta_d: f64, search: LatencySearch) -> ExactLatency {
    let last = table.horizon() - 1;
    match search {
        LatencySearch::Linear => (1..=last)
            .find(|&d| table.window_ok(d, delta_d))
            .map_or(ExactLatency::Infeasible, ExactLatency::Window),
        LatencySearch::Bisection => {
            if !table.window_ok(last, delta_d) {
                return ExactLatency::Infeasible;
            }
            let (mut lo, mut hi) = (1u64, last);
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if table.window_ok(mid, delta_d) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            ExactLatency::Window(lo)
        }
    }
}

/// A window `[ν̃, ν̃ + d)` of small false-alarm mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowWitness {
    pub nu: u64,
    /// `Pr_∞(ν̃ ≤ τ < ν̃ + d)`.
    pub mass: f64,
    /// `δF / ⌊T/d⌋`.
    pub limit: f64,
    pub holds: bool,
    pub nu_is_zero: bool,
}

/// Scans `ν̃ ∈ {0, …, T−d}` for the window of least false-alarm mass and
/// compares it with `δF / ⌊T/d⌋`.
pub fn window_bound_witness(pmf_inf: &OraclePmf, horizon: u64, d: u64, delta_f: f64) -> Result<WindowWitness> {
    check_open_probability("delta_f", delta_f)?;
    if d == 0 || d > horizon {
        return Err(QcdError::usage(format!(
            "window needs 1 <= d <= T; got d={d}, T={horizon}"
        )));
    }
    if horizon > pmf_inf.horizon {
        return Err(QcdError::usage(format!(
            "pmf covers T <= {}, asked for T = {horizon}",
            pmf_inf.horizon
        )));
    }
    let false_alarm = pmf_inf.stop_by(horizon);
    if false_alarm > delta_f {
        return Err(QcdError::usage(format!(
            "false-alarm constraint fails: Pr(τ <= {horizon}) = {false_alarm} > {delta_f}"
        )));
    }
    let (nu, mass) = (0..=horizon - d)
        .map(|nu| (nu, pmf_inf.window_mass(nu, nu + d)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let limit = delta_f / (horizon / d) as f64;
    Ok(WindowWitness {
        nu,
        mass,
        limit,
        holds: mass <= limit,
        nu_is_zero: nu == 0,
    })
}

/// Exact mean sequences behind the two martingale properties.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    /// `E_∞[f1(X)/f0(X)]`; one for any valid pair.
    pub pre_change_lr_mean: f64,
    /// `E_∞[(n+m)^{-r} Π_{i=n}^{n+m} LR_i]` for `m = 0..=m_max`.
    pub supermartingale_means: Vec<f64>,
    /// `E_ν[Π_{i=1}^{m} LR_i]` for `m = 1..=m_max`.
    pub submartingale_means: Vec<f64>,
    /// `e^{Cm}` for `m = 1..=m_max`.
    pub submartingale_closed_form: Vec<f64>,
    pub supermartingale_nonincreasing: bool,
    pub submartingale_nondecreasing: bool,
    pub closed_form_agrees: bool,
}

impl MartingaleReport {
    pub fn passed(&self) -> bool {
        self.supermartingale_nonincreasing && self.submartingale_nondecreasing && self.closed_form_agrees
    }
}

// E[Π LR] over `steps` i.i.d. draws with the given masses, summed over
// multinomial count classes rather than factorized.
fn product_lr_mean(symbols: &[Symbol], masses: &[f64], steps: usize) -> f64 {
    fn recurse(symbols: &[Symbol], masses: &[f64], k: usize, left: usize, coeff: f64, acc: &mut f64, weight: f64) {
        if k + 1 == symbols.len() {
            let term = masses[k].powi(left as i32) * (left as f64 * symbols[k].llr).exp();
            if left == 0 || masses[k] > 0.0 {
                *acc += coeff * weight * term;
            }
            return;
        }
        let mut binom = 1.0;
        for c in 0..=left {
            if c > 0 {
                binom *= (left - c + 1) as f64 / c as f64;
            }
            if c > 0 && masses[k] == 0.0 {
                break;
            }
            let w = weight * masses[k].powi(c as i32) * (c as f64 * symbols[k].llr).exp();
            recurse(symbols, masses, k + 1, left - c, coeff * binom, acc, w);
        }
    }
    let mut acc = 0.0;
    recurse(symbols, masses, 0, steps, 1.0, &mut acc, 1.0);
    acc
}

/// Exact checks of the supermartingale mean property under `Pr_∞` and the
/// submartingale mean property under the post-change measure.
pub fn martingale_checks(pair: &DistributionPair, n: u64, r: f64, m_max: usize) -> Result<MartingaleReport> {
    let symbols = pair
        .symbols()
        .ok_or_else(|| QcdError::unsupported("martingale checks need a discrete pair"))?;
    if n == 0 {
        return Err(QcdError::usage("n must be at least 1"));
    }
    if !(r.is_finite() && r > 1.0) {
        return Err(QcdError::usage(format!("r must exceed 1; got {r}")));
    }
    if m_max == 0 || m_max > MAX_MARTINGALE_STEPS {
        return Err(QcdError::usage(format!(
            "m_max must lie in 1..={MAX_MARTINGALE_STEPS}; got {m_max}"
        )));
    }
    let f0: Vec<f64> = symbols.iter().map(|s| s.f0).collect();
    let f1: Vec<f64> = symbols.iter().map(|s| s.f1).collect();
    let pre_change_lr_mean = product_lr_mean(symbols, &f0, 1);
    let supermartingale_means: Vec<f64> = (0..=m_max)
        .map(|m| product_lr_mean(symbols, &f0, m + 1) / ((n + m as u64) as f64).powf(r))
        .collect();
    let submartingale_means: Vec<f64> = (1..=m_max).map(|m| product_lr_mean(symbols, &f1, m)).collect();
    let c = pair.channel_constant()?;
    let submartingale_closed_form: Vec<f64> = (1..=m_max).map(|m| (c * m as f64).exp()).collect();

    let slack = 1e-12;
    let supermartingale_nonincreasing = supermartingale_means.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack));
    let submartingale_nondecreasing = std::iter::once(&1.0)
        .chain(&submartingale_means)
        .collect::<Vec<_>>()
        .windows(2)
        .all(|w| *w[1] >= *w[0] * (1.0 - slack));
    let closed_form_agrees = submartingale_means
        .iter()
        .zip(&submartingale_closed_form)
        .all(|(a, b)| (a - b).abs() <= 1e-9 * b);
    Ok(MartingaleReport {
        pre_change_lr_mean,
        supermartingale_means,
        submartingale_means,
        submartingale_closed_form,
        supermartingale_nonincreasing,
        submartingale_nondecreasing,
        closed_form_agrees,
    })
}

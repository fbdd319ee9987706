//! Finite-horizon quickest change detection.
//!
//! The crate implements the CuSum detector with a time-varying threshold
//! `log(ζ(r) n^r / δF)`, which keeps the false-alarm probability below `δF`
//! for every horizon, together with:
//!
//! * [`bounds`]: ζ(r), the Chernoff-type upper bound on the high-probability
//!   latency and the leading-order lower bound;
//! * [`oracle`]: exact stopping-time distributions for discrete pairs;
//! * [`montecarlo`]: reproducible parallel estimation with exact binomial
//!   confidence intervals.

pub mod bounds;
pub mod detector;
pub mod dist;
pub mod error;
pub mod montecarlo;
pub mod oracle;
pub mod rng;

pub use bounds::{
    asymptotic_lower_bound, bound_report, horizon_miss_bound, latency_bound_at_theta, latency_upper_bound,
    miss_probability_bound, zeta, BoundComponents, BoundReport, LatencyProblem, UpperBound,
};
pub use detector::{
    cusum_statistic_batch, cusum_update, run_detector, CusumDetector, DetectorState, DetectorStatus, StoppingOutcome,
    ThresholdPolicy,
};
pub use dist::{
    sample_trajectory, ChangePoint, DistributionPair, Family, Llr, Observations, Regime, Symbol, TrajectorySpec,
};
pub use error::{QcdError, Result};
pub use montecarlo::{
    clopper_pearson, default_nu_grid, empirical_latency, estimate_false_alarm, estimate_miss, EstimationReport,
    Instance, LatencyEstimate, MonteCarloConfig, NuCurve,
};
pub use oracle::{
    detect_lattice, exact_false_alarm, exact_high_prob_latency, exact_high_prob_latency_with, exact_miss_table,
    exact_stopping_distribution, latency_from_table, martingale_checks, window_bound_witness, ExactLatency,
    LatencySearch, Lattice, MartingaleReport, MissTable, OraclePmf, WindowWitness,
};
pub use rng::trial_rng;

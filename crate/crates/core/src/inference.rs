//! Rate-function hypothesis tests and their exponential error rates.
//!
//! The test family accepts the null `P0` exactly when the smoothed rate
//! `I^δ(P'_N, P0)` stays below a radius `r`; its type I/II error
//! probabilities decay exponentially in the sample size. Error exponents
//! are estimated either by seeded Monte Carlo with per-replication
//! substreams or, on binary observation alphabets where the empirical
//! measure is a success count, by exact binomial enumeration.

use alloc::vec;
use alloc::vec::Vec;

use crate::channels::Channel;
use crate::math;
use crate::measures::{empirical_measure, ProbMeasure};
use crate::rate::{smoothed_rate, DEFAULT_SMOOTHED_TOL};
use crate::rng::substream_seed;
use crate::{Error, Result};

/// Outcome of a single hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestDecision {
    AcceptNull,
    RejectNull,
}

/// A smoothed rate-function test: null measure, optional alternative,
/// channel, radius and smoothing.
#[derive(Debug, Clone)]
pub struct TestSpec {
    pub null_measure: ProbMeasure,
    pub alt_measure: Option<ProbMeasure>,
    pub channel: Channel,
    pub radius: f64,
    pub delta: f64,
}

impl TestSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Domain("test radius must be positive"));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Domain("test delta must be nonnegative"));
        }
        if self.null_measure.len() != self.channel.latent_size() {
            return Err(Error::DimensionMismatch {
                expected: self.channel.latent_size(),
                got: self.null_measure.len(),
            });
        }
        if let Some(alt) = &self.alt_measure {
            if alt.len() != self.channel.latent_size() {
                return Err(Error::DimensionMismatch {
                    expected: self.channel.latent_size(),
                    got: alt.len(),
                });
            }
        }
        Ok(())
    }
}

/// Accepts the null iff `I^δ(p_emp, P0) <= r`; boundary ties within the
/// smoothed-rate solver tolerance resolve to acceptance.
pub fn h_delta_test(p_emp: &ProbMeasure, spec: &TestSpec) -> Result<TestDecision> {
    spec.validate()?;
    let eval = smoothed_rate(
        p_emp,
        &spec.null_measure,
        &spec.channel,
        spec.delta,
        DEFAULT_SMOOTHED_TOL,
    )?;
    if eval.value <= spec.radius + DEFAULT_SMOOTHED_TOL {
        Ok(TestDecision::AcceptNull)
    } else {
        Ok(TestDecision::RejectNull)
    }
}

/// How error probabilities are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimationMethod {
    /// Exact enumeration on binary observation alphabets, Monte Carlo
    /// otherwise.
    Auto,
    MonteCarlo,
    ExactBinomial,
}

/// The method a report was actually produced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportMethod {
    MonteCarlo,
    ExactBinomial,
}

/// One sample-size cell of an error-rate report.
#[derive(Debug, Clone)]
pub struct RateCell {
    pub n: u64,
    /// Observed error count (Monte Carlo only).
    pub errors: Option<u64>,
    /// Natural log of the error probability; exactly `-inf` for zero counts.
    pub log_prob: f64,
    /// Rule-of-three upper bound `ln(3/reps)` for zero-count cells.
    pub log_upper_bound: Option<f64>,
    pub sentinel: bool,
}

/// Error probabilities across a sample-size grid with a fitted exponent.
#[derive(Debug, Clone)]
pub struct ErrorRateReport {
    pub cells: Vec<RateCell>,
    pub reps: u64,
    /// Least-squares slope of `log_prob` against `n` over finite cells;
    /// absent when fewer than two cells are finite.
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub method: ReportMethod,
}

/// Which error a simulation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ErrorKind {
    TypeI,
    TypeII,
}

/// Substream seed of replication `rep` in grid cell `cell` under `master`.
pub fn replication_seed(master: u64, cell: u64, rep: u64) -> u64 {
    substream_seed(substream_seed(master, cell), rep)
}

/// One type-I replication: draw `n` noisy samples under the null and test.
/// Returns `true` on a rejection (an error).
pub fn type1_replication(spec: &TestSpec, n: u64, rep_seed: u64) -> Result<bool> {
    let record = spec
        .channel
        .sample_noisy(&spec.null_measure, n as usize, rep_seed)?;
    let emp = empirical_measure(&record, spec.channel.obs_size())?;
    Ok(h_delta_test(&emp, spec)? == TestDecision::RejectNull)
}

/// One type-II replication: draw under the alternative; an acceptance is an
/// error.
pub fn type2_replication(spec: &TestSpec, n: u64, rep_seed: u64) -> Result<bool> {
    let alt = spec
        .alt_measure
        .as_ref()
        .ok_or(Error::Domain("type II rate needs an alternative measure"))?;
    let record = spec.channel.sample_noisy(alt, n as usize, rep_seed)?;
    let emp = empirical_measure(&record, spec.channel.obs_size())?;
    Ok(h_delta_test(&emp, spec)? == TestDecision::AcceptNull)
}

/// Type-I error exponent of the test across `n_grid`.
pub fn type1_rate(
    spec: &TestSpec,
    n_grid: &[u64],
    reps: u64,
    seed: u64,
    method: EstimationMethod,
) -> Result<ErrorRateReport> {
    error_rate(spec, n_grid, reps, seed, method, ErrorKind::TypeI)
}

/// Type-II error exponent; requires the alternative measure.
pub fn type2_rate(
    spec: &TestSpec,
    n_grid: &[u64],
    reps: u64,
    seed: u64,
    method: EstimationMethod,
) -> Result<ErrorRateReport> {
    if spec.alt_measure.is_none() {
        return Err(Error::Domain("type II rate needs an alternative measure"));
    }
    error_rate(spec, n_grid, reps, seed, method, ErrorKind::TypeII)
}

fn error_rate(
    spec: &TestSpec,
    n_grid: &[u64],
    reps: u64,
    seed: u64,
    method: EstimationMethod,
    kind: ErrorKind,
) -> Result<ErrorRateReport> {
    spec.validate()?;
    if n_grid.is_empty() {
        return Err(Error::Domain("sample-size grid must be nonempty"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("sample-size grid must be strictly increasing"));
    }
    if reps == 0 {
        return Err(Error::Domain("replication count must be positive"));
    }
    let exact = match method {
        EstimationMethod::Auto => spec.channel.obs_size() == 2,
        EstimationMethod::ExactBinomial => {
            if spec.channel.obs_size() != 2 {
                return Err(Error::Domain(
                    "exact enumeration needs a binary observation alphabet",
                ));
            }
            true
        }
        EstimationMethod::MonteCarlo => false,
    };

    let mut cells = Vec::with_capacity(n_grid.len());
    if exact {
        let source = match kind {
            ErrorKind::TypeI => &spec.null_measure,
            ErrorKind::TypeII => spec.alt_measure.as_ref().unwrap(),
        };
        let success = spec.channel.convolve(source)?.get(1);
        for &n in n_grid {
            let log_prob = log_binomial_predicate(success, n, |k| {
                let emp = ProbMeasure::new(vec![
                    (n - k) as f64 / n as f64,
                    k as f64 / n as f64,
                ])
                .expect("valid empirical measure");
                let decision = h_delta_test(&emp, spec).expect("validated spec");
                match kind {
                    ErrorKind::TypeI => decision == TestDecision::RejectNull,
                    ErrorKind::TypeII => decision == TestDecision::AcceptNull,
                }
            });
            let sentinel = log_prob == f64::NEG_INFINITY;
            cells.push(RateCell {
                n,
                errors: None,
                log_prob,
                log_upper_bound: None,
                sentinel,
            });
        }
    } else {
        for (cell_idx, &n) in n_grid.iter().enumerate() {
            let mut errors = 0u64;
            for rep in 0..reps {
                let rep_seed = replication_seed(seed, cell_idx as u64, rep);
                let hit = match kind {
                    ErrorKind::TypeI => type1_replication(spec, n, rep_seed)?,
                    ErrorKind::TypeII => type2_replication(spec, n, rep_seed)?,
                };
                if hit {
                    errors += 1;
                }
            }
            cells.push(monte_carlo_cell(n, errors, reps));
        }
    }

    let (slope, slope_stderr) = fit_slope(&cells, reps, exact);
    Ok(ErrorRateReport {
        cells,
        reps,
        slope,
        slope_stderr,
        method: if exact {
            ReportMethod::ExactBinomial
        } else {
            ReportMethod::MonteCarlo
        },
    })
}

/// Builds a Monte Carlo report cell, applying the rule-of-three sentinel to
/// zero counts.
pub fn monte_carlo_cell(n: u64, errors: u64, reps: u64) -> RateCell {
    if errors == 0 {
        RateCell {
            n,
            errors: Some(0),
            log_prob: f64::NEG_INFINITY,
            log_upper_bound: Some(math::ln(3.0 / reps as f64)),
            sentinel: true,
        }
    } else {
        RateCell {
            n,
            errors: Some(errors),
            log_prob: math::ln(errors as f64 / reps as f64),
            log_upper_bound: None,
            sentinel: false,
        }
    }
}

/// Weighted least squares of `log_prob` on `n` over non-sentinel cells.
/// Monte Carlo cells are weighted by the inverse delta-method variance of
/// `log(freq)`; exact cells uniformly. Returns `(slope, stderr)`.
pub fn fit_slope(cells: &[RateCell], reps: u64, exact: bool) -> (Option<f64>, Option<f64>) {
    let pts: Vec<(f64, f64, f64)> = cells
        .iter()
        .filter(|c| !c.sentinel && c.log_prob > f64::NEG_INFINITY)
        .map(|c| {
            let weight = if exact {
                1.0
            } else {
                // Var log(p̂) ≈ (1 - p̂) / (reps · p̂).
                let p = math::exp(c.log_prob);
                (reps as f64 * p / (1.0 - p).max(1e-12)).max(1e-12)
            };
            (c.n as f64, c.log_prob, weight)
        })
        .collect();
    if pts.len() < 2 {
        return (None, None);
    }
    let wsum: f64 = pts.iter().map(|p| p.2).sum();
    let xbar: f64 = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / wsum;
    let ybar: f64 = pts.iter().map(|p| p.1 * p.2).sum::<f64>() / wsum;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xbar) * (p.0 - xbar)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xbar) * (p.1 - ybar)).sum();
    if sxx <= 0.0 {
        return (None, None);
    }
    let slope = sxy / sxx;
    let stderr = if exact {
        if pts.len() > 2 {
            let ss: f64 = pts
                .iter()
                .map(|p| {
                    let fitted = ybar + slope * (p.0 - xbar);
                    (p.1 - fitted) * (p.1 - fitted)
                })
                .sum();
            math::sqrt(ss / (pts.len() as f64 - 2.0) / sxx)
        } else {
            0.0
        }
    } else {
        math::sqrt(1.0 / sxx)
    };
    (Some(slope), Some(stderr))
}

/// `Σ_{k: predicate(k)} C(n,k) p^k (1-p)^{n-k}` accumulated in log space.
pub fn exact_binomial_tail(p: f64, n: u64, predicate: impl FnMut(u64) -> bool) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain("success probability must lie in [0, 1]"));
    }
    Ok(math::exp(log_binomial_predicate(p, n, predicate)))
}

/// Log of the predicate-restricted binomial mass; `-inf` when no count
/// satisfies the predicate. Log binomial coefficients follow the recurrence
/// `ln C(n,k+1) = ln C(n,k) + ln(n-k) - ln(k+1)`.
pub fn log_binomial_predicate(p: f64, n: u64, mut predicate: impl FnMut(u64) -> bool) -> f64 {
    let log_p = if p > 0.0 { math::ln(p) } else { f64::NEG_INFINITY };
    let log_q = if p < 1.0 { math::ln(1.0 - p) } else { f64::NEG_INFINITY };
    let mut log_choose = 0.0;
    let mut terms: Vec<f64> = Vec::new();
    for k in 0..=n {
        if predicate(k) {
            let lp = if k > 0 { k as f64 * log_p } else { 0.0 };
            let lq = if k < n { (n - k) as f64 * log_q } else { 0.0 };
            let term = log_choose + lp + lq;
            if term > f64::NEG_INFINITY {
                terms.push(term);
            }
        }
        if k < n {
            log_choose += math::ln((n - k) as f64) - math::ln((k + 1) as f64);
        }
    }
    math::log_sum_exp(terms.iter().copied())
}

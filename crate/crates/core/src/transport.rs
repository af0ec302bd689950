//! Entropic optimal transport via log-domain Sinkhorn scaling.
//!
//! The distance minimized here is `Σ_ij T_ij d_ij + KL(T, μ⊗ν)` over plans
//! `T` with marginals `(μ, ν)`; the regularization strength is pinned to one
//! (there is no temperature knob). With dual potentials `(f, g)` the plan is
//! `T_ij = exp(f_i + g_j - d_ij)` and the scaling updates read
//!
//! ```text
//! f_i = log μ_i - LSE_j(g_j - d_ij),   g_j = log ν_j - LSE_i(f_i - d_ij),
//! ```
//!
//! which survive costs up to ~700 without underflow. `+inf` costs are hard
//! zeros of the kernel.

use alloc::vec;
use alloc::vec::Vec;

use crate::channels::{Channel, JointMeasure};
use crate::math;
use crate::matrix::Matrix;
use crate::measures::{kl_weights, ProbMeasure};
use crate::{Error, Result};

/// Default convergence tolerance on the larger of the two L1 marginal errors.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// A coupling of two probability measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    matrix: Matrix,
    row_marginal: ProbMeasure,
    col_marginal: ProbMeasure,
}

impl TransportPlan {
    /// Validates that the matrix couples the two marginals within 1e-8 (L1).
    pub fn new(matrix: Matrix, row_marginal: ProbMeasure, col_marginal: ProbMeasure) -> Result<Self> {
        if matrix.rows() != row_marginal.len() {
            return Err(Error::DimensionMismatch {
                expected: row_marginal.len(),
                got: matrix.rows(),
            });
        }
        if matrix.cols() != col_marginal.len() {
            return Err(Error::DimensionMismatch {
                expected: col_marginal.len(),
                got: matrix.cols(),
            });
        }
        let row_err: f64 = matrix
            .row_sums()
            .iter()
            .zip(row_marginal.weights())
            .map(|(a, b)| math::abs(a - b))
            .sum();
        let col_err: f64 = matrix
            .col_sums()
            .iter()
            .zip(col_marginal.weights())
            .map(|(a, b)| math::abs(a - b))
            .sum();
        if row_err > 1e-8 || col_err > 1e-8 {
            return Err(Error::Domain("plan marginals do not match"));
        }
        Ok(Self {
            matrix,
            row_marginal,
            col_marginal,
        })
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    #[inline]
    pub fn row_marginal(&self) -> &ProbMeasure {
        &self.row_marginal
    }

    #[inline]
    pub fn col_marginal(&self) -> &ProbMeasure {
        &self.col_marginal
    }
}

/// Outcome of a Sinkhorn solve.
#[derive(Debug, Clone)]
pub struct SinkhornReport {
    /// Transport cost plus the KL regularization term of the final plan.
    pub value: f64,
    pub plan: TransportPlan,
    pub iterations: usize,
    /// Max of the L1 row and column marginal errors at the final iterate.
    pub final_marginal_error: f64,
    pub converged: bool,
    /// Row potentials `f` (`-inf` on zero-mass rows).
    pub row_potential: Vec<f64>,
    /// Column potentials `g`.
    pub col_potential: Vec<f64>,
    /// Marginal error at every 10th iteration plus the final one.
    pub error_trace: Vec<(usize, f64)>,
}

/// Entropic optimal transport distance between `mu` and `nu` under `cost`.
pub fn eot_distance(
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    cost: &Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornReport> {
    sinkhorn(mu, nu, cost, tol, max_iter, None)
}

/// As [`eot_distance`], optionally warm-started from earlier potentials.
pub fn sinkhorn(
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    cost: &Matrix,
    tol: f64,
    max_iter: usize,
    init: Option<(&[f64], &[f64])>,
) -> Result<SinkhornReport> {
    let n = mu.len();
    let m = nu.len();
    if cost.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cost.rows(),
        });
    }
    if cost.cols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: cost.cols(),
        });
    }
    // Support compatibility: every supported row must reach a supported
    // column at finite cost, and vice versa.
    for i in 0..n {
        if mu.get(i) > 0.0 && !(0..m).any(|j| nu.get(j) > 0.0 && cost.get(i, j) < f64::INFINITY) {
            return Err(Error::NoFeasiblePlan);
        }
    }
    for j in 0..m {
        if nu.get(j) > 0.0 && !(0..n).any(|i| mu.get(i) > 0.0 && cost.get(i, j) < f64::INFINITY) {
            return Err(Error::NoFeasiblePlan);
        }
    }

    let log_mu: Vec<f64> = mu
        .weights()
        .iter()
        .map(|&w| if w > 0.0 { math::ln(w) } else { f64::NEG_INFINITY })
        .collect();
    let log_nu: Vec<f64> = nu
        .weights()
        .iter()
        .map(|&w| if w > 0.0 { math::ln(w) } else { f64::NEG_INFINITY })
        .collect();

    let (mut f, mut g) = match init {
        Some((f0, g0)) if f0.len() == n && g0.len() == m => (f0.to_vec(), g0.to_vec()),
        _ => (vec![0.0; n], vec![0.0; m]),
    };
    for (fi, &lm) in f.iter_mut().zip(&log_mu) {
        if lm == f64::NEG_INFINITY {
            *fi = f64::NEG_INFINITY;
        }
    }
    for (gj, &ln_) in g.iter_mut().zip(&log_nu) {
        if ln_ == f64::NEG_INFINITY {
            *gj = f64::NEG_INFINITY;
        }
    }

    let mut error = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut trace = Vec::new();
    for iter in 1..=max_iter {
        for i in 0..n {
            if log_mu[i] == f64::NEG_INFINITY {
                continue;
            }
            let lse = math::log_sum_exp((0..m).map(|j| g[j] - cost.get(i, j)));
            f[i] = log_mu[i] - lse;
        }
        for j in 0..m {
            if log_nu[j] == f64::NEG_INFINITY {
                continue;
            }
            let lse = math::log_sum_exp((0..n).map(|i| f[i] - cost.get(i, j)));
            g[j] = log_nu[j] - lse;
        }
        iterations = iter;

        // L1 marginal errors of the implied plan.
        let mut row_err = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            if f[i] > f64::NEG_INFINITY {
                for j in 0..m {
                    let e = f[i] + g[j] - cost.get(i, j);
                    if e > f64::NEG_INFINITY {
                        s += math::exp(e);
                    }
                }
            }
            row_err += math::abs(s - mu.get(i));
        }
        let mut col_err = 0.0;
        for j in 0..m {
            let mut s = 0.0;
            if g[j] > f64::NEG_INFINITY {
                for i in 0..n {
                    let e = f[i] + g[j] - cost.get(i, j);
                    if e > f64::NEG_INFINITY {
                        s += math::exp(e);
                    }
                }
            }
            col_err += math::abs(s - nu.get(j));
        }
        error = row_err.max(col_err);
        if iter % 10 == 0 {
            trace.push((iter, error));
        }
        if error <= tol {
            converged = true;
            break;
        }
    }
    if trace.last().map(|&(it, _)| it) != Some(iterations) {
        trace.push((iterations, error));
    }

    // Assemble the plan and its primal value.
    let mut plan = Matrix::zeros(n, m);
    let mut value = 0.0;
    for i in 0..n {
        if f[i] == f64::NEG_INFINITY {
            continue;
        }
        for j in 0..m {
            let e = f[i] + g[j] - cost.get(i, j);
            if e == f64::NEG_INFINITY {
                continue;
            }
            let t = math::exp(e);
            plan.set(i, j, t);
            if t > 0.0 {
                let reference = mu.get(i) * nu.get(j);
                value += t * (cost.get(i, j) + math::ln(t / reference));
            }
        }
    }

    let report = SinkhornReport {
        value,
        plan: TransportPlan {
            matrix: plan,
            row_marginal: mu.clone(),
            col_marginal: nu.clone(),
        },
        iterations,
        final_marginal_error: error,
        converged,
        row_potential: f,
        col_potential: g,
        error_trace: trace,
    };
    Ok(report)
}

/// The four-term split of `KL(T', T(P))` used throughout the rate analysis:
/// transport cost, mutual information of the coupling, latent divergence to
/// `P`, and divergence of the observed marginal to the base weights.
#[derive(Debug, Clone)]
pub struct ChainDecomposition {
    /// `Σ_ij T'_ij d_ij`.
    pub transport_cost: f64,
    /// `KL(T', Π_Ξ T' ⊗ Π_Ξ' T')`.
    pub mutual_information: f64,
    /// `KL(Π_Ξ T', P)`.
    pub latent_divergence: f64,
    /// `KL(Π_Ξ' T', m')`; may be negative for unnormalized base weights.
    pub base_divergence: f64,
    /// Sum of the four terms above.
    pub total: f64,
    /// `KL(T', T(P))` evaluated directly.
    pub direct: f64,
    /// First `(i, j)` where `T'` has mass but `T(P)` has none, if any.
    pub violation: Option<(usize, usize)>,
}

/// Splits `KL(T', T(P))` into its four constituents and cross-evaluates the
/// divergence directly; the two routes agree to 1e-9 whenever `T' ≪ T(P)`.
pub fn kl_chain_decomposition(
    tp: &JointMeasure,
    ch: &Channel,
    p: &ProbMeasure,
) -> Result<ChainDecomposition> {
    let t = tp.matrix();
    if t.rows() != ch.latent_size() {
        return Err(Error::DimensionMismatch {
            expected: ch.latent_size(),
            got: t.rows(),
        });
    }
    if t.cols() != ch.obs_size() {
        return Err(Error::DimensionMismatch {
            expected: ch.obs_size(),
            got: t.cols(),
        });
    }
    if p.len() != ch.latent_size() {
        return Err(Error::DimensionMismatch {
            expected: ch.latent_size(),
            got: p.len(),
        });
    }

    let joint = ch.joint_measure(p)?;
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            if t.get(i, j) > 0.0 && joint.matrix().get(i, j) <= 0.0 {
                return Ok(ChainDecomposition {
                    transport_cost: f64::INFINITY,
                    mutual_information: f64::INFINITY,
                    latent_divergence: f64::INFINITY,
                    base_divergence: f64::INFINITY,
                    total: f64::INFINITY,
                    direct: f64::INFINITY,
                    violation: Some((i, j)),
                });
            }
        }
    }

    let rows = t.row_sums();
    let cols = t.col_sums();
    let mut transport_cost = 0.0;
    let mut mutual_information = 0.0;
    let mut direct = 0.0;
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            let m = t.get(i, j);
            if m > 0.0 {
                transport_cost += m * ch.cost().get(i, j);
                mutual_information += m * math::ln(m / (rows[i] * cols[j]));
                direct += m * math::ln(m / joint.matrix().get(i, j));
            }
        }
    }
    let latent_divergence = kl_weights(&rows, p.weights());
    let base_divergence = kl_weights(&cols, ch.base().weights());
    let total = transport_cost + mutual_information + latent_divergence + base_divergence;
    Ok(ChainDecomposition {
        transport_cost,
        mutual_information,
        latent_divergence,
        base_divergence,
        total,
        direct,
        violation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::BaseWeights;
    use crate::rng::SplitMix64;

    fn pm(w: &[f64]) -> ProbMeasure {
        ProbMeasure::new(w.to_vec()).unwrap()
    }

    fn random_measure(rng: &mut SplitMix64, n: usize) -> ProbMeasure {
        let raw: Vec<f64> = (0..n).map(|_| rng.next_f64() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        ProbMeasure::new(raw.into_iter().map(|w| w / s).collect()).unwrap()
    }

    fn random_cost(rng: &mut SplitMix64, n: usize, m: usize) -> Matrix {
        let mut c = Matrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                c.set(i, j, 3.0 * rng.next_f64());
            }
        }
        c
    }

    #[test]
    fn dirac_marginals_force_the_plan() {
        let mu = pm(&[1.0, 0.0]);
        let nu = pm(&[0.0, 1.0]);
        let cost = Matrix::from_rows(&[vec![0.3, 0.7], vec![0.2, 0.9]]).unwrap();
        let rep = eot_distance(&mu, &nu, &cost, 1e-12, 1000).unwrap();
        assert!(rep.converged);
        assert!((rep.value - 0.7).abs() < 1e-9);
        assert!((rep.plan.matrix().get(0, 1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_cost_gives_product_plan() {
        let mu = pm(&[0.3, 0.7]);
        let nu = pm(&[0.6, 0.4]);
        let cost = Matrix::from_rows(&[vec![2.5, 2.5], vec![2.5, 2.5]]).unwrap();
        let rep = eot_distance(&mu, &nu, &cost, 1e-12, 1000).unwrap();
        assert!((rep.value - 2.5).abs() < 1e-10);
        for i in 0..2 {
            for j in 0..2 {
                assert!((rep.plan.matrix().get(i, j) - mu.get(i) * nu.get(j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_by_two_brute_force() {
        let mu = pm(&[0.5, 0.5]);
        let nu = pm(&[0.5, 0.5]);
        let cost = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let rep = eot_distance(&mu, &nu, &cost, 1e-12, 10_000).unwrap();

        // One-parameter transport polytope T(t) = [[t, .5-t], [.5-t, t]].
        let mut best = f64::INFINITY;
        let grid = 1_000_000usize;
        for k in 0..=grid {
            let t = 0.5 * k as f64 / grid as f64;
            let mut v = 2.0 * (0.5 - t);
            for &(m, r) in &[(t, 0.25), (0.5 - t, 0.25), (0.5 - t, 0.25), (t, 0.25)] {
                if m > 0.0 {
                    v += m * (m / r).ln();
                }
            }
            if v < best {
                best = v;
            }
        }
        assert!((rep.value - best).abs() < 1e-6, "{} vs {}", rep.value, best);
        // Frozen from the same scan, as a second anchor.
        assert!((rep.value - 0.379885493).abs() < 1e-6);
    }

    #[test]
    fn feasibility_and_symmetry_on_random_instances() {
        let mut rng = SplitMix64::new(2024);
        for _ in 0..60 {
            let n = 2 + (rng.next_u64() % 7) as usize;
            let mu = random_measure(&mut rng, n);
            let nu = random_measure(&mut rng, n);
            let cost = random_cost(&mut rng, n, n);
            let rep = eot_distance(&mu, &nu, &cost, 1e-10, DEFAULT_MAX_ITER).unwrap();
            assert!(rep.converged);
            assert!(rep.final_marginal_error <= 1e-8);

            // Symmetrize the cost and compare both orders.
            let mut sym = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    sym.set(i, j, 0.5 * (cost.get(i, j) + cost.get(j, i)));
                }
            }
            let ab = eot_distance(&mu, &nu, &sym, 1e-12, DEFAULT_MAX_ITER).unwrap();
            let ba = eot_distance(&nu, &mu, &sym, 1e-12, DEFAULT_MAX_ITER).unwrap();
            assert!((ab.value - ba.value).abs() <= 1e-8);

            // Value bracket for nonnegative costs.
            let mut product_obj = 0.0;
            for i in 0..n {
                for j in 0..n {
                    product_obj += mu.get(i) * nu.get(j) * cost.get(i, j);
                }
            }
            assert!(rep.value >= -1e-12);
            assert!(rep.value <= product_obj + 1e-9);
        }
    }

    #[test]
    fn marginal_error_trace_is_monotone() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..20 {
            let n = 3 + (rng.next_u64() % 6) as usize;
            let mu = random_measure(&mut rng, n);
            let nu = random_measure(&mut rng, n);
            let cost = random_cost(&mut rng, n, n);
            let rep = eot_distance(&mu, &nu, &cost, 1e-12, DEFAULT_MAX_ITER).unwrap();
            for w in rep.error_trace.windows(2) {
                assert!(w[1].1 <= w[0].1 + 1e-14, "trace not monotone: {:?}", rep.error_trace);
            }
        }
    }

    #[test]
    fn infeasible_supports_detected() {
        let mu = pm(&[0.5, 0.5]);
        let nu = pm(&[0.5, 0.5]);
        let cost = Matrix::from_rows(&[
            vec![0.0, f64::INFINITY],
            vec![f64::INFINITY, f64::INFINITY],
        ])
        .unwrap();
        assert!(matches!(
            eot_distance(&mu, &nu, &cost, 1e-10, 100),
            Err(Error::NoFeasiblePlan)
        ));
    }

    #[test]
    fn non_convergence_is_flagged_not_fatal() {
        // Identity-only kernel with mismatched marginals: no feasible plan
        // through the finite-cost pattern, but every row/column has an exit.
        let mu = pm(&[0.5, 0.5]);
        let nu = pm(&[0.9, 0.1]);
        let cost = Matrix::from_rows(&[
            vec![0.0, f64::INFINITY],
            vec![f64::INFINITY, 0.0],
        ])
        .unwrap();
        let rep = eot_distance(&mu, &nu, &cost, 1e-10, 200).unwrap();
        assert!(!rep.converged);
        assert!(rep.final_marginal_error > 1e-10);
    }

    #[test]
    fn chain_decomposition_identity_case() {
        let ch = Channel::from_transition_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let p = pm(&[0.4, 0.6]);
        let t = ch.joint_measure(&p).unwrap();
        let dec = kl_chain_decomposition(&t, &ch, &p).unwrap();
        assert!(dec.direct.abs() < 1e-12);
        assert!(dec.total.abs() < 1e-9);
        assert!(dec.violation.is_none());
    }

    #[test]
    fn chain_decomposition_product_plan_has_zero_mutual_information() {
        let ch = Channel::noiseless(2).unwrap();
        let p = pm(&[0.3, 0.7]);
        let joint = ch.joint_measure(&p).unwrap();
        let rows = joint.row_marginal();
        let cols = joint.col_marginal();
        let mut prod = Matrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                prod.set(i, j, rows[i] * cols[j]);
            }
        }
        let dec =
            kl_chain_decomposition(&JointMeasure::new(prod).unwrap(), &ch, &p).unwrap();
        // The product coupling puts mass on the off-diagonal where the
        // noiseless joint law has none.
        assert!(dec.violation.is_some());
        assert_eq!(dec.total, f64::INFINITY);

        // The joint law itself is independent only when P is degenerate, so
        // check the mutual-information term on an irrelevant channel where
        // T(P) is an exact product.
        let t = pm(&[0.5, 0.5]);
        let ch = Channel::irrelevant(&t, 2).unwrap();
        let joint = ch.joint_measure(&p).unwrap();
        let dec = kl_chain_decomposition(&joint, &ch, &p).unwrap();
        assert!(dec.mutual_information.abs() < 1e-12);
    }

    #[test]
    fn chain_decomposition_random_instances() {
        let mut rng = SplitMix64::new(99);
        for _ in 0..50 {
            let n = 3;
            let base = BaseWeights::new(vec![
                0.5 + rng.next_f64(),
                0.5 + rng.next_f64(),
                0.5 + rng.next_f64(),
            ])
            .unwrap();
            let cost = random_cost(&mut rng, n, n);
            // Rebuild a cost matrix whose kernel rows have unit mass so the
            // constructor gate passes: d_ij = -ln(k_ij / m'_j).
            let mut rows = Vec::new();
            for i in 0..n {
                let k: Vec<f64> = (0..n)
                    .map(|j| (-cost.get(i, j)).exp() * base.weights()[j])
                    .collect();
                let s: f64 = k.iter().sum();
                rows.push(
                    (0..n)
                        .map(|j| -((k[j] / s) / base.weights()[j]).ln())
                        .collect::<Vec<f64>>(),
                );
            }
            let ch = Channel::from_cost(Matrix::from_rows(&rows).unwrap(), base).unwrap();
            let p = random_measure(&mut rng, n);
            // Random T' absolutely continuous w.r.t. T(P).
            let mut t = Matrix::zeros(n, n);
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let v = rng.next_f64() + 1e-3;
                    t.set(i, j, v);
                    total += v;
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let v = t.get(i, j) / total;
                    t.set(i, j, v);
                }
            }
            let dec =
                kl_chain_decomposition(&JointMeasure::new(t).unwrap(), &ch, &p).unwrap();
            assert!(dec.violation.is_none());
            assert!(
                (dec.total - dec.direct).abs() < 1e-9,
                "chain {} direct {}",
                dec.total,
                dec.direct
            );
        }
    }
}

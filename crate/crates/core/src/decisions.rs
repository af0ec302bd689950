//! Data-driven decision formulations and their out-of-sample behavior.
//!
//! Four formulations act on the empirical measure of noisy draws: plugging
//! it straight into the stochastic program, plugging in an EM deconvolution
//! estimate, a KL-ball robust program, and the rate-function robust program
//! whose ambiguity set is `{P : I^δ(P'_N, P) <= r}`. Disappointment — the
//! realized cost of the prescribed decision exceeding its budget — is
//! estimated per sample size exactly as in [`crate::inference`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::channels::Channel;
use crate::inference::{fit_slope, log_binomial_predicate, replication_seed, RateCell};
use crate::math;
use crate::matrix::Matrix;
use crate::measures::{empirical_measure, kl_weights, ProbMeasure};
use crate::rate::{smoothed_rate, tv_ball_kl_min, DEFAULT_SMOOTHED_TOL};
use crate::{Error, Result};

/// A finite decision problem: loss matrix over decisions × outcomes and the
/// suboptimality slack of the selection rule.
#[derive(Debug, Clone)]
pub struct DecisionProblem {
    loss: Matrix,
    decision_labels: Vec<String>,
    epsilon: f64,
}

impl DecisionProblem {
    pub fn new(loss: Matrix, decision_labels: Option<Vec<String>>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Domain("epsilon must be positive"));
        }
        for i in 0..loss.rows() {
            for (j, &v) in loss.row(i).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidWeight {
                        index: i * loss.cols() + j,
                        value: v,
                    });
                }
            }
        }
        let labels = match decision_labels {
            Some(labels) => {
                if labels.len() != loss.rows() {
                    return Err(Error::DimensionMismatch {
                        expected: loss.rows(),
                        got: labels.len(),
                    });
                }
                labels
            }
            None => (0..loss.rows())
                .map(|k| alloc::format!("z{k}"))
                .collect(),
        };
        Ok(Self {
            loss,
            decision_labels: labels,
            epsilon,
        })
    }

    #[inline]
    pub fn decisions(&self) -> usize {
        self.loss.rows()
    }

    #[inline]
    pub fn outcomes(&self) -> usize {
        self.loss.cols()
    }

    #[inline]
    pub fn loss(&self) -> &Matrix {
        &self.loss
    }

    #[inline]
    pub fn labels(&self) -> &[String] {
        &self.decision_labels
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// The prior family the robust formulation optimizes over.
#[derive(Debug, Clone)]
pub enum PriorFamily {
    FullSimplex,
    ExplicitList(Vec<ProbMeasure>),
}

/// Radius, smoothing, prior family and channel of a robust formulation.
#[derive(Debug, Clone)]
pub struct AmbiguitySpec {
    pub radius: f64,
    pub delta: f64,
    pub prior_family: PriorFamily,
    pub channel: Channel,
}

impl AmbiguitySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Domain("ambiguity radius must be positive"));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Domain("ambiguity delta must be nonnegative"));
        }
        if let PriorFamily::ExplicitList(list) = &self.prior_family {
            for p in list {
                if p.len() != self.channel.latent_size() {
                    return Err(Error::DimensionMismatch {
                        expected: self.channel.latent_size(),
                        got: p.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A chosen decision with its budget and the per-decision predictor values.
#[derive(Debug, Clone)]
pub struct Prescription {
    pub decision_index: usize,
    /// Predictor value at the chosen decision.
    pub budget: f64,
    pub per_decision_values: Vec<f64>,
    pub worst_case_witness: Option<ProbMeasure>,
}

/// The decision formulations the harness compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    /// Empirical measure plugged straight into the stochastic program.
    SaaPlugin,
    /// EM deconvolution estimate plugged into the stochastic program.
    MlePlugin,
    /// Worst case over the KL ball around the empirical measure.
    EntropicDro,
    /// Worst case over the smoothed rate-function ambiguity set.
    OtDro,
}

/// `Σ_i loss[z][i] p_i`.
pub fn expected_cost(z: usize, p: &ProbMeasure, prob: &DecisionProblem) -> Result<f64> {
    if z >= prob.decisions() {
        return Err(Error::IndexOutOfRange {
            index: z as u32,
            size: prob.decisions(),
        });
    }
    if p.len() != prob.outcomes() {
        return Err(Error::DimensionMismatch {
            expected: prob.outcomes(),
            got: p.len(),
        });
    }
    Ok(prob
        .loss
        .row(z)
        .iter()
        .zip(p.weights())
        .map(|(&l, &w)| l * w)
        .sum())
}

/// Lowest index whose value is within epsilon of the minimum.
fn epsilon_argmin(values: &[f64], epsilon: f64) -> usize {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    values
        .iter()
        .position(|&v| v < min + epsilon)
        .expect("nonempty value list")
}

/// Sample-average formulation: plug the estimate in, enumerate decisions.
pub fn solve_saa(p_est: &ProbMeasure, prob: &DecisionProblem) -> Result<Prescription> {
    let values: Vec<f64> = (0..prob.decisions())
        .map(|z| expected_cost(z, p_est, prob))
        .collect::<Result<_>>()?;
    let decision_index = epsilon_argmin(&values, prob.epsilon);
    Ok(Prescription {
        decision_index,
        budget: values[decision_index],
        per_decision_values: values,
        worst_case_witness: Some(p_est.clone()),
    })
}

/// Outcome of the EM deconvolution.
#[derive(Debug, Clone)]
pub struct EmResult {
    pub estimate: ProbMeasure,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Maximum-likelihood deconvolution of the observed empirical measure by
/// multiplicative EM updates `P_i <- P_i · Σ_j p̂_j K_ij / (O⋆P)_j` from the
/// uniform initializer. The log-likelihood `Σ_j p̂_j log (O⋆P)_j` never
/// decreases; iteration stops once its gain drops below `tol`.
pub fn mle_em(
    p_obs_emp: &ProbMeasure,
    ch: &Channel,
    tol: f64,
    max_iter: usize,
) -> Result<EmResult> {
    if p_obs_emp.len() != ch.obs_size() {
        return Err(Error::DimensionMismatch {
            expected: ch.obs_size(),
            got: p_obs_emp.len(),
        });
    }
    let n = ch.latent_size();
    let m = ch.obs_size();
    let phat = p_obs_emp.weights();
    let mut p = vec![1.0 / n as f64; n];
    let mut q = vec![0.0; m];
    let log_likelihood = |p: &[f64], q: &mut Vec<f64>| -> f64 {
        for (j, qj) in q.iter_mut().enumerate() {
            *qj = (0..n).map(|i| p[i] * ch.kernel().get(i, j)).sum();
        }
        let mut ll = 0.0;
        for j in 0..m {
            if phat[j] > 0.0 {
                if q[j] <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                ll += phat[j] * math::ln(q[j]);
            }
        }
        ll
    };
    let mut ll = log_likelihood(&p, &mut q);
    let mut iterations = 0;
    let mut converged = false;
    for iter in 1..=max_iter {
        let mut next = vec![0.0; n];
        for (i, nx) in next.iter_mut().enumerate() {
            let mut mult = 0.0;
            for j in 0..m {
                if phat[j] > 0.0 && q[j] > 0.0 {
                    mult += phat[j] * ch.kernel().get(i, j) / q[j];
                }
            }
            *nx = p[i] * mult;
        }
        let total: f64 = next.iter().sum();
        if total <= 0.0 {
            break;
        }
        for v in &mut next {
            *v /= total;
        }
        let ll_next = log_likelihood(&next, &mut q);
        p = next;
        iterations = iter;
        let gain = ll_next - ll;
        ll = ll_next;
        if gain.is_finite() && gain < tol {
            converged = true;
            break;
        }
    }
    Ok(EmResult {
        estimate: ProbMeasure::new(p)?,
        log_likelihood: ll,
        iterations,
        converged,
    })
}

/// Worst-case expectation over a KL ball with its attaining measure.
#[derive(Debug, Clone)]
pub struct EntropicDroValue {
    pub value: f64,
    pub witness: ProbMeasure,
    pub multiplier: f64,
    pub converged: bool,
}

/// `sup { E_P[loss(z, ·)] : KL(p_emp, P) <= r }` by Lagrangian duality on
/// the single KL constraint. For each multiplier the inner maximizer is
/// `P_j = λ p̂_j / (ν - c_j)` on the support of `p̂` (plus possible residual
/// mass at the global argmax of the loss), with `ν` solved by bisection;
/// the multiplier itself is bisected until the divergence meets `r`.
pub fn entropic_dro_predictor(
    z: usize,
    p_emp: &ProbMeasure,
    r: f64,
    prob: &DecisionProblem,
) -> Result<EntropicDroValue> {
    if !(r > 0.0) {
        return Err(Error::Domain("radius must be positive"));
    }
    if z >= prob.decisions() {
        return Err(Error::IndexOutOfRange {
            index: z as u32,
            size: prob.decisions(),
        });
    }
    if p_emp.len() != prob.outcomes() {
        return Err(Error::DimensionMismatch {
            expected: prob.outcomes(),
            got: p_emp.len(),
        });
    }
    let c = prob.loss.row(z);
    let phat = p_emp.weights();
    let m = c.len();
    let c_max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let c_spread = c_max - c.iter().cloned().fold(f64::INFINITY, f64::min);
    if c_spread <= 1e-15 {
        return Ok(EntropicDroValue {
            value: c_max,
            witness: p_emp.clone(),
            multiplier: 0.0,
            converged: true,
        });
    }
    let argmax = (0..m)
        .max_by(|&a, &b| c[a].partial_cmp(&c[b]).unwrap())
        .unwrap();
    let c_max_supp = (0..m)
        .filter(|&j| phat[j] > 0.0)
        .map(|j| c[j])
        .fold(f64::NEG_INFINITY, f64::max);

    // Inner maximizer for a fixed multiplier; returns (P, KL(phat, P), <c,P>).
    let inner = |lambda: f64| -> (Vec<f64>, f64, f64) {
        let mut p = vec![0.0; m];
        let support_mass = |nu: f64| -> f64 {
            (0..m)
                .filter(|&j| phat[j] > 0.0)
                .map(|j| lambda * phat[j] / (nu - c[j]))
                .sum()
        };
        // The stationarity price nu must exceed the loss everywhere mass can
        // sit; residual mass goes to the global argmax when the support
        // alone cannot absorb it.
        let nu_floor = c_max;
        let floor_mass = if nu_floor > c_max_supp {
            support_mass(nu_floor)
        } else {
            f64::INFINITY
        };
        if floor_mass < 1.0 {
            for j in 0..m {
                if phat[j] > 0.0 {
                    p[j] = lambda * phat[j] / (nu_floor - c[j]);
                }
            }
            p[argmax] += 1.0 - floor_mass;
        } else {
            let mut lo = nu_floor;
            let mut hi = c_max + lambda + 1.0;
            while support_mass(hi) > 1.0 {
                hi = c_max + (hi - c_max) * 2.0;
            }
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mid <= c_max_supp || support_mass(mid) > 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            for j in 0..m {
                if phat[j] > 0.0 {
                    p[j] = lambda * phat[j] / (hi - c[j]);
                }
            }
            let total: f64 = p.iter().sum();
            for v in &mut p {
                *v /= total;
            }
        }
        let kl = kl_weights(phat, &p);
        let value = c.iter().zip(&p).map(|(&ci, &pi)| ci * pi).sum();
        (p, kl, value)
    };

    // KL(phat, P(λ)) decreases in λ; bracket then bisect to the radius.
    let mut lambda_hi = 1e-3 * c_spread.max(1e-9);
    let mut state = inner(lambda_hi);
    let mut doublings = 0;
    while state.1 > r {
        lambda_hi *= 2.0;
        doublings += 1;
        if doublings > 120 {
            return Ok(EntropicDroValue {
                value: state.2,
                witness: ProbMeasure::new(state.0)?,
                multiplier: lambda_hi,
                converged: false,
            });
        }
        state = inner(lambda_hi);
    }
    let mut lambda_lo = lambda_hi * 0.5;
    for _ in 0..200 {
        let mid = 0.5 * (lambda_lo + lambda_hi);
        let trial = inner(mid);
        if trial.1 > r {
            lambda_lo = mid;
        } else {
            lambda_hi = mid;
            state = trial;
        }
        if lambda_hi - lambda_lo < 1e-14 * lambda_hi.max(1.0) {
            break;
        }
    }
    Ok(EntropicDroValue {
        value: state.2,
        witness: ProbMeasure::new(state.0)?,
        multiplier: lambda_hi,
        converged: true,
    })
}

/// Worst-case expectation over the smoothed rate-function ambiguity set.
#[derive(Debug, Clone)]
pub struct OtDroValue {
    pub value: f64,
    /// Latent measure attaining the supremum.
    pub witness: ProbMeasure,
    /// The TV-ball measure certifying feasibility of the witness.
    pub witness_smoothed: ProbMeasure,
    pub multiplier: f64,
    pub converged: bool,
}

/// Objective of the latent block of the robust solver at fixed smoothed
/// measure `x` (used for stationarity checks): `<c,P> + λ Σ_j x_j log (KᵀP)_j`.
pub fn dro_inner_objective(c: &[f64], lambda: f64, x: &[f64], ch: &Channel, p: &[f64]) -> f64 {
    let m = ch.obs_size();
    let mut value = c.iter().zip(p).map(|(&ci, &pi)| ci * pi).sum::<f64>();
    for j in 0..m {
        if x[j] > 0.0 {
            let qj: f64 = (0..p.len()).map(|i| p[i] * ch.kernel().get(i, j)).sum();
            value += lambda * x[j] * math::ln(qj.max(1e-300));
        }
    }
    value
}

/// Analytic gradient of [`dro_inner_objective`] in `p`.
pub fn dro_inner_gradient(c: &[f64], lambda: f64, x: &[f64], ch: &Channel, p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let m = ch.obs_size();
    let q: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| p[i] * ch.kernel().get(i, j)).sum())
        .collect();
    (0..n)
        .map(|i| {
            let mut g = c[i];
            for j in 0..m {
                if x[j] > 0.0 && q[j] > 0.0 {
                    g += lambda * x[j] * ch.kernel().get(i, j) / q[j];
                }
            }
            g
        })
        .collect()
}

/// Alternating inner maximization of `<c,P> - λ KL(x, KᵀP)` over the latent
/// simplex and the TV ball: the ball block is solved exactly, the latent
/// block by entropic mirror ascent with backtracking.
struct InnerState {
    p: Vec<f64>,
    x: Vec<f64>,
    kl: f64,
    linear_value: f64,
}

fn dro_inner_max(
    c: &[f64],
    ch: &Channel,
    phat: &[f64],
    delta: f64,
    lambda: f64,
    p_init: &[f64],
    alternation_cap: usize,
    mirror_cap: usize,
) -> InnerState {
    let n = ch.latent_size();
    let m = ch.obs_size();
    let mut p = p_init.to_vec();
    let mut q = vec![0.0; m];
    let mut grad = vec![0.0; n];
    let mut p_try = vec![0.0; n];
    let refresh_q = |p: &[f64], q: &mut [f64]| {
        for (j, qj) in q.iter_mut().enumerate() {
            *qj = (0..n).map(|i| p[i] * ch.kernel().get(i, j)).sum();
        }
    };
    refresh_q(&p, &mut q);
    let (mut x, mut kl_at_p) = tv_ball_kl_min(&q, phat, delta);
    let mut objective_old = f64::NEG_INFINITY;
    for _ in 0..alternation_cap {
        // Latent block. On the divergence boundary, ascend the surrogate
        // with the ball measure frozen (a tight lower bound of the
        // envelope) by entropic mirror ascent. When the pushforward sits
        // inside the ball the frozen surrogate is flat at a kink and the
        // mirror step cannot revive dead coordinates, so take conditional
        // ascent steps toward the payoff vertex, line-searched on the exact
        // envelope `<c,P> - λ · ballmin(q(P))`.
        if kl_at_p == 0.0 {
            let vertex = (0..n)
                .max_by(|&a, &b| c[a].partial_cmp(&c[b]).unwrap())
                .unwrap();
            let envelope = |p_try: &[f64]| -> (f64, f64) {
                let q_try: Vec<f64> = (0..m)
                    .map(|j| (0..n).map(|i| p_try[i] * ch.kernel().get(i, j)).sum())
                    .collect();
                let kl = tv_ball_kl_min(&q_try, phat, delta).1;
                let lin: f64 = c.iter().zip(p_try).map(|(&ci, &pi)| ci * pi).sum();
                (lin - lambda * kl, kl)
            };
            let (mut g0, _) = envelope(&p);
            for _ in 0..mirror_cap {
                // Golden-section maximization of the concave envelope along
                // the ray toward the payoff vertex, keeping a sliver of
                // every coordinate alive.
                let at = |gamma: f64, out: &mut Vec<f64>| {
                    for i in 0..n {
                        let target = if i == vertex { 1.0 } else { 0.0 };
                        out[i] = (1.0 - gamma) * p[i] + gamma * target;
                    }
                };
                const INV_PHI: f64 = 0.618_033_988_749_894_9;
                let gamma_cap = 1.0 - 1e-12;
                let mut lo = 0.0;
                let mut hi = gamma_cap;
                let mut a = hi - INV_PHI * (hi - lo);
                let mut b = lo + INV_PHI * (hi - lo);
                at(a, &mut p_try);
                let mut fa = envelope(&p_try).0;
                at(b, &mut p_try);
                let mut fb = envelope(&p_try).0;
                for _ in 0..48 {
                    if fa < fb {
                        lo = a;
                        a = b;
                        fa = fb;
                        b = lo + INV_PHI * (hi - lo);
                        at(b, &mut p_try);
                        fb = envelope(&p_try).0;
                    } else {
                        hi = b;
                        b = a;
                        fb = fa;
                        a = hi - INV_PHI * (hi - lo);
                        at(a, &mut p_try);
                        fa = envelope(&p_try).0;
                    }
                }
                let gamma = 0.5 * (lo + hi);
                at(gamma, &mut p_try);
                let (g1, _) = envelope(&p_try);
                if g1 > g0 + 1e-13 * (1.0 + lambda) {
                    core::mem::swap(&mut p, &mut p_try);
                    g0 = g1;
                } else {
                    break;
                }
            }
        } else {
            let stall = 1e-13 * (1.0 + lambda);
            let mut eta = 1.0;
            for _ in 0..mirror_cap {
                refresh_q(&p, &mut q);
                let mut obj0 = 0.0;
                for i in 0..n {
                    obj0 += c[i] * p[i];
                    grad[i] = c[i];
                }
                for j in 0..m {
                    if x[j] > 0.0 {
                        let qj = q[j].max(1e-300);
                        obj0 += lambda * x[j] * math::ln(qj);
                        for i in 0..n {
                            grad[i] += lambda * x[j] * ch.kernel().get(i, j) / qj;
                        }
                    }
                }
                let gmax = grad.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let gmin = grad.iter().cloned().fold(f64::INFINITY, f64::min);
                let span = gmax - gmin;
                if !(span > 0.0) {
                    break;
                }
                // Scale-free exponent: eta = 1 moves one gradient span.
                let mut accepted = false;
                for _ in 0..40 {
                    let mut total = 0.0;
                    for i in 0..n {
                        // The additive seed lets coordinates that collapsed
                        // to zero re-enter; candidates are still accepted
                        // only on a genuine objective increase.
                        p_try[i] = (p[i] + 1e-14) * math::exp(eta * (grad[i] - gmax) / span);
                        total += p_try[i];
                    }
                    let mut obj1 = 0.0;
                    for i in 0..n {
                        p_try[i] /= total;
                        obj1 += c[i] * p_try[i];
                    }
                    for j in 0..m {
                        if x[j] > 0.0 {
                            let qj: f64 =
                                (0..n).map(|i| p_try[i] * ch.kernel().get(i, j)).sum();
                            obj1 += lambda * x[j] * math::ln(qj.max(1e-300));
                        }
                    }
                    if obj1 > obj0 + 1e-15 * (1.0 + lambda) {
                        core::mem::swap(&mut p, &mut p_try);
                        // Keep a sliver of every coordinate alive so the
                        // multiplicative update can always revive it.
                        let mut total = 0.0;
                        for v in p.iter_mut() {
                            *v = v.max(1e-280);
                            total += *v;
                        }
                        for v in p.iter_mut() {
                            *v /= total;
                        }
                        eta = (eta * 1.5).min(64.0);
                        accepted = obj1 - obj0 >= stall;
                        break;
                    }
                    eta *= 0.5;
                    if eta < 1e-16 {
                        break;
                    }
                }
                if !accepted {
                    break;
                }
            }
        }
        // Ball block: exact projection.
        refresh_q(&p, &mut q);
        let (x_new, kl) = tv_ball_kl_min(&q, phat, delta);
        x = x_new;
        kl_at_p = kl;
        let linear: f64 = c.iter().zip(&p).map(|(&ci, &pi)| ci * pi).sum();
        let objective = linear - lambda * kl;
        if objective - objective_old < 1e-12 * (1.0 + lambda) {
            return InnerState {
                p,
                x,
                kl,
                linear_value: linear,
            };
        }
        objective_old = objective;
    }
    refresh_q(&p, &mut q);
    let (x_final, kl) = tv_ball_kl_min(&q, phat, delta);
    let linear: f64 = c.iter().zip(&p).map(|(&ci, &pi)| ci * pi).sum();
    InnerState {
        p,
        x: x_final,
        kl,
        linear_value: linear,
    }
}

/// Smallest divergence the ambiguity constraint can attain:
/// `min_P I^δ(p_obs_emp, P)`, computed by alternating the exact ball
/// projection with EM steps on the latent measure. The formulation is
/// feasible exactly when this bound does not exceed the radius; the
/// minimizing latent measure doubles as a solver warm start.
pub fn ambiguity_min_divergence(
    p_obs_emp: &ProbMeasure,
    ch: &Channel,
    delta: f64,
) -> Result<(f64, ProbMeasure)> {
    ambiguity_min_divergence_until(p_obs_emp, ch, delta, f64::NEG_INFINITY)
}

/// As [`ambiguity_min_divergence`], returning early once the divergence
/// drops to `target` (feasibility is then already settled).
fn ambiguity_min_divergence_until(
    p_obs_emp: &ProbMeasure,
    ch: &Channel,
    delta: f64,
    target: f64,
) -> Result<(f64, ProbMeasure)> {
    if p_obs_emp.len() != ch.obs_size() {
        return Err(Error::DimensionMismatch {
            expected: ch.obs_size(),
            got: p_obs_emp.len(),
        });
    }
    let n = ch.latent_size();
    let m = ch.obs_size();
    let phat = p_obs_emp.weights();
    let mut p = vec![1.0 / n as f64; n];
    let mut q = vec![0.0; m];
    let mut kl_prev = f64::INFINITY;
    for _ in 0..400 {
        for (j, qj) in q.iter_mut().enumerate() {
            *qj = (0..n).map(|i| p[i] * ch.kernel().get(i, j)).sum();
        }
        let (x, kl) = tv_ball_kl_min(&q, phat, delta);
        if kl <= target || kl_prev - kl < 1e-12 {
            kl_prev = kl;
            break;
        }
        kl_prev = kl;
        // One EM step toward max Σ x_j log (KᵀP)_j.
        let mut next = vec![0.0; n];
        for (i, nx) in next.iter_mut().enumerate() {
            let mut mult = 0.0;
            for j in 0..m {
                if x[j] > 0.0 && q[j] > 0.0 {
                    mult += x[j] * ch.kernel().get(i, j) / q[j];
                }
            }
            *nx = p[i] * mult;
        }
        let total: f64 = next.iter().sum();
        if total <= 0.0 {
            break;
        }
        for v in &mut next {
            *v /= total;
        }
        p = next;
    }
    Ok((kl_prev, ProbMeasure::new(p)?))
}

/// `sup { E_P[loss(z, ·)] : P in family, I^δ(p_obs_emp, P) <= r }`.
///
/// Explicit lists are filtered by their smoothed rate; the full simplex is
/// solved by Lagrangian duality on the divergence constraint, with the
/// jointly concave inner problem handled by [`dro_inner_max`].
pub fn ot_dro_predictor(
    z: usize,
    p_obs_emp: &ProbMeasure,
    spec: &AmbiguitySpec,
    prob: &DecisionProblem,
) -> Result<OtDroValue> {
    validate_decision_inputs(p_obs_emp, spec, prob)?;
    if z >= prob.decisions() {
        return Err(Error::IndexOutOfRange {
            index: z as u32,
            size: prob.decisions(),
        });
    }
    match &spec.prior_family {
        PriorFamily::ExplicitList(list) => {
            let mut best: Option<(f64, &ProbMeasure, ProbMeasure)> = None;
            for member in list {
                let eval = smoothed_rate(
                    p_obs_emp,
                    member,
                    &spec.channel,
                    spec.delta,
                    DEFAULT_SMOOTHED_TOL,
                )?;
                if eval.value <= spec.radius + DEFAULT_SMOOTHED_TOL {
                    let value = expected_cost(z, member, prob)?;
                    if best.as_ref().map_or(true, |(v, _, _)| value > *v) {
                        best = Some((value, member, eval.witness_p2));
                    }
                }
            }
            match best {
                Some((value, witness, smoothed)) => Ok(OtDroValue {
                    value,
                    witness: witness.clone(),
                    witness_smoothed: smoothed,
                    multiplier: f64::NAN,
                    converged: true,
                }),
                None => Err(Error::InfeasibleFormulation),
            }
        }
        PriorFamily::FullSimplex => {
            let (kl_min, p_min) =
                ambiguity_min_divergence_until(p_obs_emp, &spec.channel, spec.delta, spec.radius)?;
            if kl_min > spec.radius {
                return Err(Error::InfeasibleFormulation);
            }
            full_simplex_sup(prob.loss.row(z), p_obs_emp, spec, None, p_min.weights())
        }
    }
}

/// Full-simplex robust value for an arbitrary payoff row. `warm` carries the
/// previous decision's solve on the same ambiguity set; `p_feasible` is any
/// latent measure already inside the set (from the feasibility check).
fn full_simplex_sup(
    c: &[f64],
    p_obs_emp: &ProbMeasure,
    spec: &AmbiguitySpec,
    warm: Option<&OtDroValue>,
    p_feasible: &[f64],
) -> Result<OtDroValue> {
    let ch = &spec.channel;
    let n = ch.latent_size();
    let phat = p_obs_emp.weights();
    let delta = spec.delta;
    let r = spec.radius;

    // Constraint slack at the unconstrained maximizer: done.
    let argmax = (0..n)
        .max_by(|&a, &b| c[a].partial_cmp(&c[b]).unwrap())
        .unwrap();
    let vertex_q = ch.kernel().row(argmax);
    let (vx, vkl) = tv_ball_kl_min(vertex_q, phat, delta);
    if vkl <= r + 1e-12 {
        return Ok(OtDroValue {
            value: c[argmax],
            witness: ProbMeasure::dirac(argmax, n)?,
            witness_smoothed: ProbMeasure::new(vx)?,
            multiplier: 0.0,
            converged: true,
        });
    }

    // Coarse passes while bracketing, tight passes once the bracket closes.
    let coarse = (3usize, 12usize);
    let tight = (30usize, 30usize);

    let p_warm: Vec<f64> = warm
        .map(|w| w.witness.weights().to_vec())
        .unwrap_or_else(|| p_feasible.to_vec());
    let mut lambda_hi = warm
        .map(|w| w.multiplier.max(1e-3))
        .unwrap_or(1.0);
    let mut state = dro_inner_max(c, ch, phat, delta, lambda_hi, &p_warm, coarse.0, coarse.1);
    let mut lambda_lo;
    let mut kl_lo = f64::NAN;
    if state.kl > r {
        // Walk up until the divergence constraint is met. Each attempt
        // restarts from the known feasible point: iterates of smaller λ may
        // have collapsed onto a payoff vertex and make poor warm starts.
        let mut attempts = 0;
        loop {
            lambda_lo = lambda_hi;
            kl_lo = state.kl;
            lambda_hi *= 2.0;
            attempts += 1;
            if attempts > 70 {
                return Err(Error::InfeasibleFormulation);
            }
            state = dro_inner_max(c, ch, phat, delta, lambda_hi, p_feasible, coarse.0, coarse.1);
            if state.kl <= r {
                break;
            }
        }
    } else {
        // Walk down until the constraint binds, to bracket from below.
        lambda_lo = lambda_hi;
        let mut attempts = 0;
        loop {
            lambda_lo *= 0.5;
            attempts += 1;
            if attempts > 60 {
                lambda_lo = 0.0;
                break;
            }
            let trial =
                dro_inner_max(c, ch, phat, delta, lambda_lo, &state.p, coarse.0, coarse.1);
            if trial.kl > r {
                kl_lo = trial.kl;
                break;
            }
            lambda_hi = lambda_lo;
            state = trial;
        }
    }
    let mut feasible = state;

    // Regula falsi on kl(λ) - r with a bisection safeguard; kl decreases in
    // λ, so the secant through the bracket converges superlinearly.
    for iter in 0..44 {
        // Stop once the duality gap certifies the value.
        if lambda_hi * (r - feasible.kl) < 1e-6 && feasible.kl <= r {
            break;
        }
        let width = lambda_hi - lambda_lo;
        if !(width > 0.0) {
            break;
        }
        let mut next = if kl_lo.is_finite() && kl_lo > r {
            let h_lo = kl_lo - r;
            let h_hi = feasible.kl - r;
            lambda_hi - h_hi * width / (h_hi - h_lo)
        } else {
            0.5 * (lambda_lo + lambda_hi)
        };
        next = next.clamp(lambda_lo + 0.05 * width, lambda_hi - 0.05 * width);
        if !(next > lambda_lo && next < lambda_hi) {
            break;
        }
        let (alt_cap, mir_cap) = if iter < 6 { coarse } else { tight };
        let trial = dro_inner_max(c, ch, phat, delta, next, &feasible.p, alt_cap, mir_cap);
        if trial.kl > r {
            lambda_lo = next;
            kl_lo = trial.kl;
        } else {
            lambda_hi = next;
            feasible = trial;
        }
    }
    // Final tight evaluation on the feasible side.
    let last = dro_inner_max(c, ch, phat, delta, lambda_hi, &feasible.p, tight.0, tight.1);
    if last.kl <= r {
        feasible = last;
    }
    Ok(OtDroValue {
        value: feasible.linear_value,
        witness: ProbMeasure::new(feasible.p)?,
        witness_smoothed: ProbMeasure::new(normalized(&feasible.x))?,
        multiplier: lambda_hi,
        converged: true,
    })
}

fn normalized(x: &[f64]) -> Vec<f64> {
    let total: f64 = x.iter().sum();
    x.iter().map(|&v| v / total).collect()
}

fn validate_decision_inputs(
    p_obs_emp: &ProbMeasure,
    spec: &AmbiguitySpec,
    prob: &DecisionProblem,
) -> Result<()> {
    spec.validate()?;
    if p_obs_emp.len() != spec.channel.obs_size() {
        return Err(Error::DimensionMismatch {
            expected: spec.channel.obs_size(),
            got: p_obs_emp.len(),
        });
    }
    if prob.outcomes() != spec.channel.latent_size() {
        return Err(Error::DimensionMismatch {
            expected: spec.channel.latent_size(),
            got: prob.outcomes(),
        });
    }
    Ok(())
}

/// Evaluates the robust predictor for every decision and selects by the
/// epsilon tie-break rule; the witness belongs to the chosen decision.
pub fn ot_dro_prescribe(
    p_obs_emp: &ProbMeasure,
    spec: &AmbiguitySpec,
    prob: &DecisionProblem,
) -> Result<Prescription> {
    validate_decision_inputs(p_obs_emp, spec, prob)?;
    // Feasibility does not depend on the decision; settle it once.
    let p_feasible = match &spec.prior_family {
        PriorFamily::FullSimplex => {
            let (kl_min, p_min) =
                ambiguity_min_divergence_until(p_obs_emp, &spec.channel, spec.delta, spec.radius)?;
            if kl_min > spec.radius {
                return Err(Error::InfeasibleFormulation);
            }
            Some(p_min)
        }
        PriorFamily::ExplicitList(_) => None,
    };
    let mut values = Vec::with_capacity(prob.decisions());
    let mut evals: Vec<OtDroValue> = Vec::with_capacity(prob.decisions());
    for z in 0..prob.decisions() {
        let eval = match &p_feasible {
            Some(p_min) => full_simplex_sup(
                prob.loss.row(z),
                p_obs_emp,
                spec,
                evals.last(),
                p_min.weights(),
            )?,
            None => ot_dro_predictor(z, p_obs_emp, spec, prob)?,
        };
        values.push(eval.value);
        evals.push(eval);
    }
    let decision_index = epsilon_argmin(&values, prob.epsilon);
    Ok(Prescription {
        decision_index,
        budget: values[decision_index],
        per_decision_values: values,
        worst_case_witness: Some(evals[decision_index].witness.clone()),
    })
}

/// Runs one formulation on an observed empirical measure.
pub fn run_formulation(
    formulation: Formulation,
    p_obs_emp: &ProbMeasure,
    spec: &AmbiguitySpec,
    prob: &DecisionProblem,
) -> Result<Prescription> {
    match formulation {
        Formulation::SaaPlugin => {
            require_square_observation(spec, prob)?;
            solve_saa(p_obs_emp, prob)
        }
        Formulation::MlePlugin => {
            let em = mle_em(p_obs_emp, &spec.channel, 1e-10, 10_000)?;
            solve_saa(&em.estimate, prob)
        }
        Formulation::EntropicDro => {
            require_square_observation(spec, prob)?;
            let mut values = Vec::with_capacity(prob.decisions());
            let mut witnesses = Vec::with_capacity(prob.decisions());
            for z in 0..prob.decisions() {
                let eval = entropic_dro_predictor(z, p_obs_emp, spec.radius, prob)?;
                values.push(eval.value);
                witnesses.push(eval.witness);
            }
            let decision_index = epsilon_argmin(&values, prob.epsilon);
            Ok(Prescription {
                decision_index,
                budget: values[decision_index],
                per_decision_values: values,
                worst_case_witness: Some(witnesses.swap_remove(decision_index)),
            })
        }
        Formulation::OtDro => ot_dro_prescribe(p_obs_emp, spec, prob),
    }
}

/// Plug-in style formulations identify the two alphabets.
fn require_square_observation(spec: &AmbiguitySpec, prob: &DecisionProblem) -> Result<()> {
    if spec.channel.obs_size() != prob.outcomes() {
        return Err(Error::DimensionMismatch {
            expected: prob.outcomes(),
            got: spec.channel.obs_size(),
        });
    }
    Ok(())
}

/// One disappointment replication outcome. An empty ambiguity set means the
/// budgeted supremum is over nothing (`-inf`), which any realized cost
/// breaks: such replications count as disappointments and carry no budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisappointmentOutcome {
    pub disappointed: bool,
    pub budget: Option<f64>,
}

/// Draws `n` noisy samples of `p_true`, runs the formulation on their
/// empirical measure, and flags disappointment when the realized expected
/// cost of the prescribed decision exceeds its budget.
pub fn disappointment_replication(
    formulation: Formulation,
    p_true: &ProbMeasure,
    spec: &AmbiguitySpec,
    prob: &DecisionProblem,
    n: u64,
    rep_seed: u64,
) -> Result<DisappointmentOutcome> {
    let record = spec.channel.sample_noisy(p_true, n as usize, rep_seed)?;
    let emp = empirical_measure(&record, spec.channel.obs_size())?;
    disappointment_of(formulation, &emp, p_true, spec, prob)
}

/// Disappointment indicator and budget for a given empirical measure. The
/// strict comparison tolerates last-ulp rounding of the solver's witness so
/// exact ties (realized cost equal to the budget) never count.
pub fn disappointment_of(
    formulation: Formulation,
    p_obs_emp: &ProbMeasure,
    p_true: &ProbMeasure,
    spec: &AmbiguitySpec,
    prob: &DecisionProblem,
) -> Result<DisappointmentOutcome> {
    let prescription = match run_formulation(formulation, p_obs_emp, spec, prob) {
        Ok(p) => p,
        Err(Error::InfeasibleFormulation) => {
            return Ok(DisappointmentOutcome {
                disappointed: true,
                budget: None,
            })
        }
        Err(other) => return Err(other),
    };
    let realized = expected_cost(prescription.decision_index, p_true, prob)?;
    let slack = 1e-12 * (1.0 + math::abs(prescription.budget));
    Ok(DisappointmentOutcome {
        disappointed: realized > prescription.budget + slack,
        budget: Some(prescription.budget),
    })
}

/// One sample-size cell of a disappointment report.
#[derive(Debug, Clone)]
pub struct DisappointmentCell {
    pub n: u64,
    pub disappointments: Option<u64>,
    pub log_prob: f64,
    pub log_upper_bound: Option<f64>,
    pub sentinel: bool,
    /// Mean budget across replications (exact expectation in enumeration
    /// mode).
    pub budget_mean: f64,
}

/// Disappointment probabilities across a sample-size grid.
#[derive(Debug, Clone)]
pub struct DisappointmentReport {
    pub cells: Vec<DisappointmentCell>,
    pub reps: u64,
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub method: crate::inference::ReportMethod,
    /// The guaranteed exponent `-r` the slope is compared against.
    pub target_rate: f64,
}

/// Estimates the disappointment rate of a formulation. Binary observation
/// alphabets are enumerated exactly by default; otherwise seeded Monte
/// Carlo with one substream per replication.
pub fn disappointment_rate(
    formulation: Formulation,
    p_true: &ProbMeasure,
    spec: &AmbiguitySpec,
    prob: &DecisionProblem,
    n_grid: &[u64],
    reps: u64,
    seed: u64,
    method: crate::inference::EstimationMethod,
) -> Result<DisappointmentReport> {
    use crate::inference::{EstimationMethod, ReportMethod};
    validate_decision_inputs(
        &ProbMeasure::uniform(spec.channel.obs_size())?,
        spec,
        prob,
    )?;
    if p_true.len() != spec.channel.latent_size() {
        return Err(Error::DimensionMismatch {
            expected: spec.channel.latent_size(),
            got: p_true.len(),
        });
    }
    if n_grid.is_empty() {
        return Err(Error::Domain("sample-size grid must be nonempty"));
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
        let success = spec.channel.convolve(p_true)?.get(1);
        for &n in n_grid {
            let mut budget_sum = 0.0;
            let mut budget_weight = 0.0;
            let mut outcomes: Vec<bool> = Vec::with_capacity(n as usize + 1);
            for k in 0..=n {
                let emp = ProbMeasure::new(vec![
                    (n - k) as f64 / n as f64,
                    k as f64 / n as f64,
                ])?;
                let outcome = disappointment_of(formulation, &emp, p_true, spec, prob)?;
                outcomes.push(outcome.disappointed);
                if let Some(budget) = outcome.budget {
                    let w = math::exp(log_binomial_predicate(success, n, |kk| kk == k));
                    budget_sum += w * budget;
                    budget_weight += w;
                }
            }
            let log_prob = log_binomial_predicate(success, n, |k| outcomes[k as usize]);
            cells.push(DisappointmentCell {
                n,
                disappointments: None,
                log_prob,
                log_upper_bound: None,
                sentinel: log_prob == f64::NEG_INFINITY,
                budget_mean: budget_sum / budget_weight,
            });
        }
    } else {
        for (cell_idx, &n) in n_grid.iter().enumerate() {
            let mut count = 0u64;
            let mut budget_sum = 0.0;
            let mut budgeted = 0u64;
            for rep in 0..reps {
                let rep_seed = replication_seed(seed, cell_idx as u64, rep);
                let outcome =
                    disappointment_replication(formulation, p_true, spec, prob, n, rep_seed)?;
                if outcome.disappointed {
                    count += 1;
                }
                if let Some(budget) = outcome.budget {
                    budget_sum += budget;
                    budgeted += 1;
                }
            }
            cells.push(monte_carlo_disappointment_cell(
                n,
                count,
                reps,
                budget_sum / budgeted as f64,
            ));
        }
    }

    let rate_cells: Vec<RateCell> = cells
        .iter()
        .map(|c| RateCell {
            n: c.n,
            errors: c.disappointments,
            log_prob: c.log_prob,
            log_upper_bound: c.log_upper_bound,
            sentinel: c.sentinel,
        })
        .collect();
    let (slope, slope_stderr) = fit_slope(&rate_cells, reps, exact);
    Ok(DisappointmentReport {
        cells,
        reps,
        slope,
        slope_stderr,
        method: if exact {
            ReportMethod::ExactBinomial
        } else {
            ReportMethod::MonteCarlo
        },
        target_rate: -spec.radius,
    })
}

/// Builds a Monte Carlo disappointment cell with the rule-of-three sentinel.
pub fn monte_carlo_disappointment_cell(
    n: u64,
    disappointments: u64,
    reps: u64,
    budget_mean: f64,
) -> DisappointmentCell {
    let base = crate::inference::monte_carlo_cell(n, disappointments, reps);
    DisappointmentCell {
        n,
        disappointments: Some(disappointments),
        log_prob: base.log_prob,
        log_upper_bound: base.log_upper_bound,
        sentinel: base.sentinel,
        budget_mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::EstimationMethod;
    use crate::rng::SplitMix64;

    fn pm(w: &[f64]) -> ProbMeasure {
        ProbMeasure::new(w.to_vec()).unwrap()
    }

    fn problem(rows: &[Vec<f64>], eps: f64) -> DecisionProblem {
        DecisionProblem::new(Matrix::from_rows(rows).unwrap(), None, eps).unwrap()
    }

    fn full_simplex_spec(ch: Channel, r: f64, delta: f64) -> AmbiguitySpec {
        AmbiguitySpec {
            radius: r,
            delta,
            prior_family: PriorFamily::FullSimplex,
            channel: ch,
        }
    }

    #[test]
    fn expected_cost_examples() {
        let prob = problem(&[vec![2.0, 2.0], vec![1.0, 2.0]], 1e-9);
        let p = pm(&[0.25, 0.75]);
        assert_eq!(expected_cost(0, &p, &prob).unwrap(), 2.0);
        assert!((expected_cost(1, &p, &prob).unwrap() - 1.75).abs() < 1e-15);
        let dirac = pm(&[0.0, 1.0]);
        assert_eq!(expected_cost(1, &dirac, &prob).unwrap(), 2.0);
        assert!(matches!(
            expected_cost(5, &p, &prob),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn saa_examples() {
        let single = problem(&[vec![3.0, 1.0]], 1e-9);
        let p = pm(&[0.5, 0.5]);
        let presc = solve_saa(&p, &single).unwrap();
        assert_eq!(presc.decision_index, 0);

        let prob = problem(&[vec![0.0, 1.0], vec![1.0, 0.0]], 1e-9);
        let presc = solve_saa(&pm(&[0.9, 0.1]), &prob).unwrap();
        assert_eq!(presc.decision_index, 0);
        assert!((presc.budget - 0.1).abs() < 1e-12);

        // Equal values tie-break to the lower index.
        let presc = solve_saa(&pm(&[0.5, 0.5]), &prob).unwrap();
        assert_eq!(presc.decision_index, 0);
    }

    #[test]
    fn em_noiseless_is_identity() {
        let ch = Channel::noiseless(3).unwrap();
        let phat = pm(&[0.5, 0.25, 0.25]);
        let em = mle_em(&phat, &ch, 1e-12, 10_000).unwrap();
        assert!(crate::measures::tv_distance(&em.estimate, &phat).unwrap() < 1e-9);
        assert!(em.converged);
    }

    #[test]
    fn em_irrelevant_channel_keeps_uniform() {
        let t = pm(&[0.3, 0.7]);
        let ch = Channel::irrelevant(&t, 4).unwrap();
        let em = mle_em(&pm(&[0.6, 0.4]), &ch, 1e-12, 100).unwrap();
        for &w in em.estimate.weights() {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn em_inverts_two_by_two_kernel() {
        let ch = Channel::from_transition_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        // O*[0.5, 0.5] = [0.55, 0.45].
        let em = mle_em(&pm(&[0.55, 0.45]), &ch, 1e-14, 100_000).unwrap();
        assert!(
            (em.estimate.get(0) - 0.5).abs() < 1e-4,
            "estimate {:?}",
            em.estimate.weights()
        );
    }

    #[test]
    fn em_likelihood_is_nondecreasing() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..20 {
            let n = 2 + (rng.next_u64() % 5) as usize;
            let m = 2 + (rng.next_u64() % 5) as usize;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let raw: Vec<f64> = (0..m).map(|_| rng.next_f64() + 0.05).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|w| w / s).collect()
                })
                .collect();
            let ch = Channel::from_transition_rows(&rows).unwrap();
            let raw: Vec<f64> = (0..m).map(|_| rng.next_f64() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            let phat = ProbMeasure::new(raw.into_iter().map(|w| w / s).collect()).unwrap();

            // Manual EM loop checking the ascent property step by step.
            let mut p = vec![1.0 / n as f64; n];
            let ll_of = |p: &[f64]| -> f64 {
                (0..m)
                    .map(|j| {
                        let q: f64 = (0..n).map(|i| p[i] * ch.kernel().get(i, j)).sum();
                        phat.get(j) * q.ln()
                    })
                    .sum()
            };
            let mut ll = ll_of(&p);
            for _ in 0..200 {
                let q: Vec<f64> = (0..m)
                    .map(|j| (0..n).map(|i| p[i] * ch.kernel().get(i, j)).sum())
                    .collect();
                let next: Vec<f64> = (0..n)
                    .map(|i| {
                        p[i] * (0..m)
                            .map(|j| phat.get(j) * ch.kernel().get(i, j) / q[j])
                            .sum::<f64>()
                    })
                    .collect();
                let total: f64 = next.iter().sum();
                p = next.into_iter().map(|v| v / total).collect();
                let ll_next = ll_of(&p);
                assert!(ll_next >= ll - 1e-12, "EM descent: {ll} -> {ll_next}");
                ll = ll_next;
            }
        }
    }

    #[test]
    fn entropic_dro_limits() {
        // At r = 1e-12 the true supremum sits sqrt(2 r Var(loss)) above the
        // nominal value, so keep the loss spread small.
        let prob = problem(&[vec![1.0, 2.0]], 1e-9);
        let phat = pm(&[0.7, 0.3]);
        // r -> 0: the nominal expectation.
        let eval = entropic_dro_predictor(0, &phat, 1e-12, &prob).unwrap();
        let nominal = expected_cost(0, &phat, &prob).unwrap();
        assert!(
            (eval.value - nominal).abs() < 1e-6,
            "value {} nominal {}",
            eval.value,
            nominal
        );
        // Constant loss: the constant at any radius.
        let flat = problem(&[vec![2.5, 2.5]], 1e-9);
        for &r in &[1e-6, 0.1, 2.0] {
            let eval = entropic_dro_predictor(0, &phat, r, &flat).unwrap();
            assert!((eval.value - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn entropic_dro_matches_grid_scan() {
        let prob = problem(&[vec![0.3, 1.7]], 1e-9);
        let phat = pm(&[0.6, 0.4]);
        let r = 0.1;
        let eval = entropic_dro_predictor(0, &phat, r, &prob).unwrap();
        let mut best = f64::NEG_INFINITY;
        let grid = 2_000_000usize;
        for k in 1..grid {
            let t = k as f64 / grid as f64;
            if kl_weights(phat.weights(), &[t, 1.0 - t]) <= r {
                let v = 0.3 * t + 1.7 * (1.0 - t);
                if v > best {
                    best = v;
                }
            }
        }
        assert!(
            (eval.value - best).abs() < 1e-5,
            "dual {} grid {}",
            eval.value,
            best
        );
        // The witness is feasible and attains the value.
        assert!(kl_weights(phat.weights(), eval.witness.weights()) <= r + 1e-9);
    }

    #[test]
    fn ot_dro_constant_loss() {
        let ch = Channel::from_transition_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let spec = full_simplex_spec(ch, 0.05, 0.05);
        let prob = problem(&[vec![1.5, 1.5]], 1e-9);
        let eval = ot_dro_predictor(0, &pm(&[0.5, 0.5]), &spec, &prob).unwrap();
        assert!((eval.value - 1.5).abs() < 1e-9);
    }

    #[test]
    fn ot_dro_collapses_to_empirical_measure() {
        // Noiseless channel, delta 0, tiny radius: the ambiguity set is
        // essentially the empirical measure itself.
        let ch = Channel::noiseless(2).unwrap();
        let spec = full_simplex_spec(ch, 1e-12, 0.0);
        let prob = problem(&[vec![0.4, 1.3]], 1e-9);
        let phat = pm(&[0.65, 0.35]);
        let eval = ot_dro_predictor(0, &phat, &spec, &prob).unwrap();
        let nominal = expected_cost(0, &phat, &prob).unwrap();
        assert!(
            (eval.value - nominal).abs() < 1e-4,
            "value {} nominal {}",
            eval.value,
            nominal
        );
    }

    #[test]
    fn ot_dro_matches_two_dimensional_grid_scan() {
        let ch = Channel::from_transition_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let spec = full_simplex_spec(ch.clone(), 0.05, 0.05);
        let prob = problem(&[vec![0.8, 0.1]], 1e-9);
        let phat = pm(&[0.35, 0.65]);
        let eval = ot_dro_predictor(0, &phat, &spec, &prob).unwrap();

        // Exhaustive scan over (P, P'') pairs on 2000-point simplex grids.
        let grid = 2000usize;
        let mut best = f64::NEG_INFINITY;
        for a in 0..=grid {
            let s = a as f64 / grid as f64;
            let q0 = s * 0.9 + (1.0 - s) * 0.2;
            let mut feasible = false;
            for b in 0..=grid {
                let t = b as f64 / grid as f64;
                if (t - phat.get(0)).abs() <= spec.delta
                    && kl_weights(&[t, 1.0 - t], &[q0, 1.0 - q0]) <= spec.radius
                {
                    feasible = true;
                    break;
                }
            }
            if feasible {
                let v = 0.8 * s + 0.1 * (1.0 - s);
                if v > best {
                    best = v;
                }
            }
        }
        assert!(
            (eval.value - best).abs() < 1e-3,
            "dual {} grid {}",
            eval.value,
            best
        );
    }

    #[test]
    fn ot_dro_monotone_in_radius_and_delta() {
        let mut rng = SplitMix64::new(321);
        for _ in 0..10 {
            let rows: Vec<Vec<f64>> = (0..2)
                .map(|_| {
                    let raw: Vec<f64> = (0..2).map(|_| rng.next_f64() + 0.1).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|w| w / s).collect()
                })
                .collect();
            let ch = Channel::from_transition_rows(&rows).unwrap();
            let c: Vec<f64> = (0..2).map(|_| rng.next_f64()).collect();
            let prob = problem(&[c], 1e-9);
            // Keep the empirical measure near the channel's image so small
            // radii stay feasible; infeasible evaluations rank below any
            // finite value.
            let raw = [rng.next_f64() + 0.05, rng.next_f64() + 0.05];
            let s = raw[0] + raw[1];
            let latent = pm(&[raw[0] / s, raw[1] / s]);
            let phat = ch.convolve(&latent).unwrap();
            let value_at = |r: f64, d: f64| -> f64 {
                let spec = full_simplex_spec(ch.clone(), r, d);
                match ot_dro_predictor(0, &phat, &spec, &prob) {
                    Ok(eval) => eval.value,
                    Err(Error::InfeasibleFormulation) => f64::NEG_INFINITY,
                    Err(other) => panic!("unexpected error {other:?}"),
                }
            };
            let mut prev = f64::NEG_INFINITY;
            for &r in &[0.01, 0.03, 0.08, 0.2, 0.5] {
                let v = value_at(r, 0.05);
                assert!(v + 1e-6 >= prev, "radius monotonicity: {prev} -> {v}");
                prev = v;
            }
            let mut prev = f64::NEG_INFINITY;
            for &d in &[0.0, 0.02, 0.06, 0.15, 0.4] {
                let v = value_at(0.05, d);
                assert!(v + 1e-6 >= prev, "delta monotonicity: {prev} -> {v}");
                prev = v;
            }
        }
    }

    #[test]
    fn ot_dro_sandwich_with_witness() {
        let ch = Channel::from_transition_rows(&[vec![0.7, 0.3], vec![0.25, 0.75]]).unwrap();
        let spec = full_simplex_spec(ch, 0.08, 0.04);
        let prob = problem(&[vec![0.9, 0.2]], 1e-9);
        let phat = pm(&[0.4, 0.6]);
        let eval = ot_dro_predictor(0, &phat, &spec, &prob).unwrap();
        let witness_value = expected_cost(0, &eval.witness, &prob).unwrap();
        assert!((witness_value - eval.value).abs() < 1e-9);
        assert!(eval.value <= 0.9 + 1e-12);
        // The witness is certified feasible by its smoothed measure.
        let q = spec.channel.convolve(&eval.witness).unwrap();
        let kl = kl_weights(eval.witness_smoothed.weights(), q.weights());
        assert!(kl <= spec.radius + 1e-6, "witness infeasible: {kl}");
        assert!(
            crate::measures::tv_distance(&eval.witness_smoothed, &phat).unwrap()
                <= spec.delta + 1e-9
        );
    }

    #[test]
    fn ot_dro_explicit_list_filters_and_errors() {
        let ch = Channel::noiseless(2).unwrap();
        let list = vec![pm(&[0.5, 0.5]), pm(&[0.95, 0.05])];
        let spec = AmbiguitySpec {
            radius: 0.05,
            delta: 0.02,
            prior_family: PriorFamily::ExplicitList(list),
            channel: ch.clone(),
        };
        let prob = problem(&[vec![1.0, 0.0]], 1e-9);
        let phat = pm(&[0.5, 0.5]);
        // Only the first member is feasible at this radius.
        let eval = ot_dro_predictor(0, &phat, &spec, &prob).unwrap();
        assert!((eval.value - 0.5).abs() < 1e-12);

        // Tiny radius and delta around a far-away empirical measure: empty.
        let spec = AmbiguitySpec {
            radius: 1e-6,
            delta: 1e-6,
            prior_family: PriorFamily::ExplicitList(vec![pm(&[0.95, 0.05])]),
            channel: ch,
        };
        assert!(matches!(
            ot_dro_predictor(0, &phat, &spec, &prob),
            Err(Error::InfeasibleFormulation)
        ));
    }

    #[test]
    fn prescribe_single_decision_and_symmetry_tie_break() {
        let ch = Channel::from_transition_rows(&[vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let spec = full_simplex_spec(ch, 0.05, 0.05);
        let single = problem(&[vec![0.3, 0.9]], 1e-9);
        let presc = ot_dro_prescribe(&pm(&[0.5, 0.5]), &spec, &single).unwrap();
        assert_eq!(presc.decision_index, 0);
        assert!((presc.budget - presc.per_decision_values[0]).abs() < 1e-15);

        // Symmetric instance: budgets agree to solver accuracy, so with a
        // slack above that accuracy the lower index wins the tie.
        let sym = problem(&[vec![0.0, 1.0], vec![1.0, 0.0]], 1e-3);
        let presc = ot_dro_prescribe(&pm(&[0.5, 0.5]), &spec, &sym).unwrap();
        assert_eq!(presc.decision_index, 0);
        assert!((presc.per_decision_values[0] - presc.per_decision_values[1]).abs() < 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(99);
        let ch = Channel::gaussian_grid(
            &[0.0, 1.0, 2.0, 3.0],
            &[0.0, 1.0, 2.0, 3.0],
            0.8,
        )
        .unwrap();
        let c = [0.3, 0.9, 0.1, 0.5];
        for _ in 0..20 {
            let lambda = 0.2 + 2.0 * rng.next_f64();
            let raw: Vec<f64> = (0..4).map(|_| rng.next_f64() + 0.1).collect();
            let s: f64 = raw.iter().sum();
            let x: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let raw: Vec<f64> = (0..4).map(|_| rng.next_f64() + 0.1).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let grad = dro_inner_gradient(&c, lambda, &x, &ch, &p);
            for i in 0..4 {
                let h = 1e-6;
                let mut pp = p.clone();
                pp[i] += h;
                let up = dro_inner_objective(&c, lambda, &x, &ch, &pp);
                pp[i] -= 2.0 * h;
                let dn = dro_inner_objective(&c, lambda, &x, &ch, &pp);
                let fd = (up - dn) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(1e-8);
                assert!(rel <= 1e-4, "grad {} fd {} rel {rel}", grad[i], fd);
            }
        }
    }

    #[test]
    fn newsvendor_robust_budget_dominates_plugin() {
        // 5-point grid, Gaussian noise, both formulations on the same data.
        let grid: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let ch = Channel::gaussian_grid(&grid, &grid, 0.5).unwrap();
        let loss_rows: Vec<Vec<f64>> = (0..5)
            .map(|z| {
                (0..5)
                    .map(|xi| {
                        2.0 * (xi as f64 - z as f64).max(0.0) + (z as f64 - xi as f64).max(0.0)
                    })
                    .collect()
            })
            .collect();
        let prob = problem(&loss_rows, 1e-9);
        let spec = full_simplex_spec(ch.clone(), 0.05, 0.05);
        let phat = pm(&[0.1, 0.2, 0.4, 0.2, 0.1]);
        let robust = ot_dro_prescribe(&phat, &spec, &prob).unwrap();
        let em = mle_em(&phat, &ch, 1e-10, 10_000).unwrap();
        let plugin = solve_saa(&em.estimate, &prob).unwrap();
        assert!(
            robust.budget >= plugin.budget - 1e-9,
            "robust {} plugin {}",
            robust.budget,
            plugin.budget
        );
    }

    #[test]
    fn disappointment_zero_when_budget_unbeatable() {
        let ch = Channel::noiseless(2).unwrap();
        let spec = full_simplex_spec(ch, 5.0, 0.1);
        let prob = problem(&[vec![0.2, 0.8], vec![0.5, 0.5]], 1e-9);
        let p_true = pm(&[0.6, 0.4]);
        let report = disappointment_rate(
            Formulation::OtDro,
            &p_true,
            &spec,
            &prob,
            &[10, 20],
            50,
            9,
            EstimationMethod::MonteCarlo,
        )
        .unwrap();
        for cell in &report.cells {
            assert!(cell.sentinel);
            assert_eq!(cell.disappointments, Some(0));
            assert!(cell.log_upper_bound.is_some());
        }
        assert!(report.slope.is_none());
        assert_eq!(report.target_rate, -5.0);
    }

    #[test]
    fn saa_optimizers_curse_reproduced_exactly() {
        // Binary noiseless support: exact enumeration over success counts.
        let ch = Channel::noiseless(2).unwrap();
        let spec = full_simplex_spec(ch, 0.05, 0.02);
        let prob = problem(&[vec![0.0, 1.0], vec![1.0, 0.0]], 1e-9);
        let p_true = pm(&[0.5, 0.5]);
        let report = disappointment_rate(
            Formulation::SaaPlugin,
            &p_true,
            &spec,
            &prob,
            &[5, 10, 20],
            1,
            0,
            EstimationMethod::ExactBinomial,
        )
        .unwrap();
        for cell in &report.cells {
            let freq = math::exp(cell.log_prob);
            assert!(
                freq > 0.2,
                "SAA should disappoint often at n = {}: freq {freq}",
                cell.n
            );
        }
    }

    #[test]
    fn disappointment_determinism() {
        let ch = Channel::from_transition_rows(&[vec![0.85, 0.15], vec![0.25, 0.75]]).unwrap();
        let spec = full_simplex_spec(ch, 0.1, 0.05);
        let prob = problem(&[vec![0.0, 1.0], vec![1.0, 0.0]], 1e-9);
        let p_true = pm(&[0.5, 0.5]);
        let a = disappointment_rate(
            Formulation::OtDro,
            &p_true,
            &spec,
            &prob,
            &[8, 16],
            40,
            11,
            EstimationMethod::MonteCarlo,
        )
        .unwrap();
        let b = disappointment_rate(
            Formulation::OtDro,
            &p_true,
            &spec,
            &prob,
            &[8, 16],
            40,
            11,
            EstimationMethod::MonteCarlo,
        )
        .unwrap();
        for (ca, cb) in a.cells.iter().zip(&b.cells) {
            assert_eq!(ca.disappointments, cb.disappointments);
            assert_eq!(ca.budget_mean.to_bits(), cb.budget_mean.to_bits());
        }
    }
}

//! Observation channels `O: Ξ → P(Ξ')` and their pushforwards.
//!
//! A channel stores three mutually consistent views of the same object: a
//! cost matrix `d` (extended reals, `+inf` allowed), strictly positive base
//! weights `m'`, and the row-stochastic kernel `K_ij = exp(-d_ij) · m'_j`.
//! Constructors canonicalize so that the identity `d = -log(K / m')` holds
//! exactly and every kernel row has unit mass.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::matrix::Matrix;
use crate::measures::{self, BaseWeights, ProbMeasure, SampleRecord};
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Kernel entries below this are flushed to exact zero (cost `+inf`) so that
/// the KL conventions never meet denormal noise.
const KERNEL_FLUSH: f64 = 1e-300;

/// Gate on raw row masses accepted by [`Channel::from_cost`].
const ROW_MASS_GATE: f64 = 1e-6;

/// A row-stochastic observation map with explicit cost and base weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    cost: Matrix,
    base: BaseWeights,
    kernel: Matrix,
}

impl Channel {
    /// Builds a channel from a cost matrix and base weights. Every raw row
    /// mass `Σ_j exp(-d_ij) m'_j` must lie within `1e-6` of one; rows are
    /// then renormalized and the cost recomputed from the normalized kernel.
    pub fn from_cost(cost: Matrix, base: BaseWeights) -> Result<Self> {
        if base.len() != cost.cols() {
            return Err(Error::DimensionMismatch {
                expected: cost.cols(),
                got: base.len(),
            });
        }
        let mut kernel = Matrix::zeros(cost.rows(), cost.cols());
        for i in 0..cost.rows() {
            for j in 0..cost.cols() {
                let d = cost.get(i, j);
                if d.is_nan() {
                    return Err(Error::Domain("cost entries must not be NaN"));
                }
                let k = if d == f64::INFINITY {
                    0.0
                } else {
                    math::exp(-d) * base.weights()[j]
                };
                kernel.set(i, j, k);
            }
        }
        for (i, sum) in kernel.row_sums().into_iter().enumerate() {
            if math::abs(sum - 1.0) > ROW_MASS_GATE {
                return Err(Error::InvalidChannel { row: i, sum });
            }
        }
        Ok(Self::canonicalize(kernel, base))
    }

    /// Identity observation: Dirac rows, counting base weights.
    pub fn noiseless(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("channel needs a positive alphabet size"));
        }
        let mut kernel = Matrix::zeros(n, n);
        for i in 0..n {
            kernel.set(i, i, 1.0);
        }
        Ok(Self::canonicalize(kernel, BaseWeights::counting(n)?))
    }

    /// Every row equals `target`: observations carry no information about
    /// the latent draw.
    pub fn irrelevant(target: &ProbMeasure, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("channel needs a positive alphabet size"));
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|_| target.weights().to_vec()).collect();
        let kernel = Matrix::from_rows(&rows)?;
        Ok(Self::canonicalize(kernel, BaseWeights::counting(target.len())?))
    }

    /// Builds a channel directly from transition rows (counting base
    /// weights). Each row must be a probability vector within the
    /// [`Channel::from_cost`] row-mass gate.
    pub fn from_transition_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let kernel = Matrix::from_rows(rows)?;
        let mut cost = Matrix::zeros(kernel.rows(), kernel.cols());
        for i in 0..kernel.rows() {
            for j in 0..kernel.cols() {
                let k = kernel.get(i, j);
                if !k.is_finite() || k < 0.0 {
                    return Err(Error::InvalidWeight {
                        index: i * kernel.cols() + j,
                        value: k,
                    });
                }
                cost.set(i, j, if k > 0.0 { -math::ln(k) } else { f64::INFINITY });
            }
        }
        Self::from_cost(cost, BaseWeights::counting(kernel.cols())?)
    }

    /// Discretized additive Gaussian noise between two grids: kernel rows
    /// proportional to `exp(-(s_i - o_j)^2 / (2 sigma^2))`, renormalized.
    pub fn gaussian_grid(source_grid: &[f64], obs_grid: &[f64], sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain("sigma must be positive and finite"));
        }
        if source_grid.is_empty() || obs_grid.is_empty() {
            return Err(Error::Domain("grids must be nonempty"));
        }
        for g in [source_grid, obs_grid] {
            if g.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Domain("grids must be strictly increasing"));
            }
        }
        let mut kernel = Matrix::zeros(source_grid.len(), obs_grid.len());
        for (i, &s) in source_grid.iter().enumerate() {
            for (j, &o) in obs_grid.iter().enumerate() {
                let z = (s - o) / sigma;
                kernel.set(i, j, math::exp(-0.5 * z * z));
            }
        }
        Ok(Self::canonicalize(kernel, BaseWeights::counting(obs_grid.len())?))
    }

    /// Normalizes each kernel row to unit mass, recomputes the cost as
    /// `-log(K / m')` and re-derives the kernel from that cost, so the
    /// stored triple is self-consistent to the last bit.
    fn canonicalize(raw: Matrix, base: BaseWeights) -> Self {
        let n = raw.rows();
        let n_obs = raw.cols();
        let mut cost = Matrix::zeros(n, n_obs);
        let mut kernel = Matrix::zeros(n, n_obs);
        let sums = raw.row_sums();
        for i in 0..n {
            let inv = 1.0 / sums[i];
            for j in 0..n_obs {
                let k = raw.get(i, j) * inv;
                if k < KERNEL_FLUSH {
                    cost.set(i, j, f64::INFINITY);
                    kernel.set(i, j, 0.0);
                } else {
                    let d = -math::ln(k / base.weights()[j]);
                    cost.set(i, j, d);
                    kernel.set(i, j, math::exp(-d) * base.weights()[j]);
                }
            }
        }
        Self { cost, base, kernel }
    }

    #[inline]
    pub fn latent_size(&self) -> usize {
        self.kernel.rows()
    }

    #[inline]
    pub fn obs_size(&self) -> usize {
        self.kernel.cols()
    }

    #[inline]
    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    #[inline]
    pub fn base(&self) -> &BaseWeights {
        &self.base
    }

    #[inline]
    pub fn kernel(&self) -> &Matrix {
        &self.kernel
    }

    /// The pushforward `(O⋆P)_j = Σ_i p_i K_ij`.
    pub fn convolve(&self, p: &ProbMeasure) -> Result<ProbMeasure> {
        if p.len() != self.latent_size() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_size(),
                got: p.len(),
            });
        }
        let mut out = vec![0.0; self.obs_size()];
        for (i, &pi) in p.weights().iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (o, &k) in out.iter_mut().zip(self.kernel.row(i)) {
                *o += pi * k;
            }
        }
        ProbMeasure::new(out)
    }

    /// Joint law of `(ξ, ξ')`: `T(P)_ij = p_i K_ij`.
    pub fn joint_measure(&self, p: &ProbMeasure) -> Result<JointMeasure> {
        if p.len() != self.latent_size() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_size(),
                got: p.len(),
            });
        }
        let mut m = Matrix::zeros(self.latent_size(), self.obs_size());
        for i in 0..self.latent_size() {
            let pi = p.get(i);
            for j in 0..self.obs_size() {
                m.set(i, j, pi * self.kernel.get(i, j));
            }
        }
        JointMeasure::new(m)
    }

    /// Draws `n` noisy observations: latent index from `p`, then an
    /// observation from that kernel row; only the observation indices are
    /// recorded. Two unit-interval draws are consumed per sample, latent
    /// first.
    pub fn sample_noisy(&self, p: &ProbMeasure, n: usize, seed: u64) -> Result<SampleRecord> {
        if p.len() != self.latent_size() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_size(),
                got: p.len(),
            });
        }
        if n == 0 {
            return Err(Error::Domain("sample size must be positive"));
        }
        let mut rng = SplitMix64::new(seed);
        let mut indices = Vec::with_capacity(n);
        for _ in 0..n {
            let latent = measures::inverse_cdf(p.weights(), rng.next_f64()) as usize;
            let obs = measures::inverse_cdf(self.kernel.row(latent), rng.next_f64());
            indices.push(obs);
        }
        Ok(SampleRecord { seed, indices })
    }
}

/// A joint probability measure on `Ξ × Ξ'` (total mass one within 1e-12).
#[derive(Debug, Clone, PartialEq)]
pub struct JointMeasure {
    matrix: Matrix,
}

impl JointMeasure {
    pub fn new(matrix: Matrix) -> Result<Self> {
        for i in 0..matrix.rows() {
            for (j, &v) in matrix.row(i).iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidWeight {
                        index: i * matrix.cols() + j,
                        value: v,
                    });
                }
            }
        }
        let total = matrix.total();
        if math::abs(total - 1.0) > 1e-12 {
            return Err(Error::NotNormalized { sum: total });
        }
        Ok(Self { matrix })
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        self.matrix.row_sums()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        self.matrix.col_sums()
    }
}

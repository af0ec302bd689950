//! Probability measures on finite alphabets, divergences and sampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Largest deviation of a weight sum from one that construction repairs by
/// normalizing; anything worse is rejected as a genuine bug.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A probability measure on `{0, .., n-1}`: nonnegative weights summing to
/// one (within 1e-12 after construction).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMeasure {
    weights: Vec<f64>,
}

impl ProbMeasure {
    /// Validates and normalizes: weights must be finite and nonnegative with
    /// total mass within [`NORMALIZATION_TOLERANCE`] of one.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("probability measure needs a nonempty support"));
        }
        let mut sum = 0.0;
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidWeight { index, value: w });
            }
            sum += w;
        }
        if math::abs(sum - 1.0) > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self { weights })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("support size must be positive"));
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// Point mass at `index`.
    pub fn dirac(index: usize, n: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::IndexOutOfRange {
                index: index as u32,
                size: n,
            });
        }
        let mut weights = vec![0.0; n];
        weights[index] = 1.0;
        Ok(Self { weights })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Indices carrying strictly positive mass.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
    }
}

/// Strictly positive reference weights; not necessarily normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights {
    weights: Vec<f64>,
}

impl BaseWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("base weights need a nonempty support"));
        }
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidWeight { index, value: w });
            }
        }
        Ok(Self { weights })
    }

    /// Counting weights: one per support point.
    pub fn counting(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("support size must be positive"));
        }
        Ok(Self {
            weights: vec![1.0; n],
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Anything usable as the second argument of a KL divergence.
pub trait ReferenceWeights {
    fn reference_weights(&self) -> &[f64];
}

impl ReferenceWeights for ProbMeasure {
    fn reference_weights(&self) -> &[f64] {
        &self.weights
    }
}

impl ReferenceWeights for BaseWeights {
    fn reference_weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Indices of i.i.d. draws together with the seed they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub seed: u64,
    pub indices: Vec<u32>,
}

/// KL divergence Σ p_i log(p_i / q_i) with the conventions 0·log(0/q) = 0
/// and p·log(p/0) = +inf. The result may be negative when `q` is an
/// unnormalized reference.
pub fn kl_divergence(p: &ProbMeasure, q: &impl ReferenceWeights) -> Result<f64> {
    let qw = q.reference_weights();
    if p.len() != qw.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: qw.len(),
        });
    }
    Ok(kl_weights(p.weights(), qw))
}

/// KL on raw weight slices; callers guarantee equal lengths.
pub(crate) fn kl_weights(p: &[f64], q: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            sum += pi * math::ln(pi / qi);
        }
    }
    sum
}

/// Total variation distance (1/2) Σ |p_i − q_i| in `[0, 1]`.
pub fn tv_distance(p: &ProbMeasure, q: &ProbMeasure) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(tv_weights(p.weights(), q.weights()))
}

pub(crate) fn tv_weights(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .map(|(&a, &b)| math::abs(a - b))
        .sum::<f64>()
}

/// Empirical measure of the recorded draws on a support of `size` points.
pub fn empirical_measure(samples: &SampleRecord, size: usize) -> Result<ProbMeasure> {
    if samples.indices.is_empty() {
        return Err(Error::Domain("empirical measure of an empty sample"));
    }
    let mut counts = vec![0u64; size];
    for &ix in &samples.indices {
        if ix as usize >= size {
            return Err(Error::IndexOutOfRange { index: ix, size });
        }
        counts[ix as usize] += 1;
    }
    let n = samples.indices.len() as f64;
    ProbMeasure::new(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Inverse-CDF lookup: smallest index whose cumulative weight exceeds `u`.
pub(crate) fn inverse_cdf(weights: &[f64], u: f64) -> u32 {
    let mut cum = 0.0;
    let mut last_positive = 0u32;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i as u32;
            cum += w;
            if u < cum {
                return i as u32;
            }
        }
    }
    // u landed in the float dust above the final cumulative value.
    last_positive
}

/// Draw `n` i.i.d. indices from `p` by inverse CDF over a splitmix64 stream.
/// Identical `(p, n, seed)` triples give identical records.
pub fn sample_iid(p: &ProbMeasure, n: usize, seed: u64) -> Result<SampleRecord> {
    if n == 0 {
        return Err(Error::Domain("sample size must be positive"));
    }
    let mut rng = SplitMix64::new(seed);
    let indices = (0..n)
        .map(|_| inverse_cdf(p.weights(), rng.next_f64()))
        .collect();
    Ok(SampleRecord { seed, indices })
}

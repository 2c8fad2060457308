//! Offload acceptance, performance-weighted local aggregation, and plain
//! global averaging.

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Floor applied to pre-normalization weights so a negative or all-zero
/// draw cannot break the normalization.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// The six per-server strategy values chosen each block interval.
///
/// Bounds (with block interval `F`): `f` in (0, F], `h1` in (0, 1],
/// `a` in [-1, 1], `w0` in (0, 1], `w1` in (0, 1], `b` in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StrategyParams<S: Scalar> {
    /// Local aggregation period (time units between collections).
    pub f: S,
    /// Metric coefficient in the offload decision.
    pub h1: S,
    /// Offload decision offset.
    pub a: S,
    /// Kept-data-size coefficient in local weighting.
    pub w0: S,
    /// Metric coefficient in local weighting.
    pub w1: S,
    /// Local weighting offset.
    pub b: S,
}

impl<S: Scalar> StrategyParams<S> {
    /// The all-ones strategy used by the fixed baseline.
    pub fn fixed_baseline() -> Self {
        Self {
            f: S::one(),
            h1: S::one(),
            a: S::one(),
            w0: S::one(),
            w1: S::one(),
            b: S::one(),
        }
    }

    pub fn as_array(&self) -> [S; 6] {
        [self.f, self.h1, self.a, self.w0, self.w1, self.b]
    }

    pub fn from_array(v: [S; 6]) -> Self {
        Self {
            f: v[0],
            h1: v[1],
            a: v[2],
            w0: v[3],
            w1: v[4],
            b: v[5],
        }
    }

    /// Whether the lower bound of each dimension is open.
    pub fn open_lower() -> [bool; 6] {
        [true, true, false, true, true, false]
    }

    /// Per-dimension (lo, hi) bounds; open lower bounds (see
    /// [`StrategyParams::open_lower`]) exclude `lo` itself.
    pub fn bounds(block_interval: S) -> [(S, S); 6] {
        let one = S::one();
        [
            (S::zero(), block_interval),
            (S::zero(), one),
            (-one, one),
            (S::zero(), one),
            (S::zero(), one),
            (-one, one),
        ]
    }

    /// Check every field against its bound.
    pub fn validate(&self, block_interval: S) -> Result<()> {
        let b = Self::bounds(block_interval);
        let open = Self::open_lower();
        for (i, (v, ((lo, hi), op))) in self
            .as_array()
            .iter()
            .zip(b.iter().zip(open.iter()))
            .enumerate()
        {
            let lo_ok = if *op { *v > *lo } else { *v >= *lo };
            if !(lo_ok && *v <= *hi && v.is_finite()) {
                return Err(Error::Scenario(format!(
                    "strategy value {i} out of bounds: {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Normalized per-trainer aggregation weights: nonnegative, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights<S: Scalar> {
    weights: Vec<S>,
}

impl<S: Scalar> AggregationWeights<S> {
    pub fn values(&self) -> &[S] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Offload decision factor: `sigma * upload + h1 * metric + a`, accept
/// when nonnegative. `upload` is the untrained fraction of the trainer's
/// shard; `sigma` is signed, so a negative value makes uploads costly.
pub fn offload_decision<S: Scalar>(sigma: S, upload: S, metric: S, h1: S, a: S) -> bool {
    let u = sigma * upload + h1 * metric + a;
    u >= S::zero()
}

/// Pre-normalization weight for one trainer: `w0 * kept_fraction +
/// w1 * metric + b`, where `kept_fraction` is the trainer's retained data
/// as a fraction of the server's total retained data this round.
fn raw_weight<S: Scalar>(kept_fraction: S, metric: S, w0: S, w1: S, b: S) -> S {
    w0 * kept_fraction + w1 * metric + b
}

/// Per-trainer weights from kept shard sizes and evaluation metrics.
/// Raw weights are floored at [`WEIGHT_FLOOR`] before normalization; if
/// every raw weight is at or below zero the result degrades to uniform.
pub fn local_weights<S: Scalar>(
    kept_sizes: &[usize],
    metrics: &[S],
    w0: S,
    w1: S,
    b: S,
) -> Result<AggregationWeights<S>> {
    if kept_sizes.is_empty() || kept_sizes.len() != metrics.len() {
        return Err(Error::Scenario(format!(
            "local_weights needs matching nonempty inputs ({} sizes, {} metrics)",
            kept_sizes.len(),
            metrics.len()
        )));
    }
    let total: usize = kept_sizes.iter().sum();
    let n = kept_sizes.len();
    let raw: Vec<S> = kept_sizes
        .iter()
        .zip(metrics.iter())
        .map(|(&sz, &m)| {
            let kept_fraction = if total == 0 {
                S::zero()
            } else {
                S::real(sz as f64 / total as f64)
            };
            raw_weight(kept_fraction, m, w0, w1, b)
        })
        .collect();

    if raw.iter().all(|w| *w <= S::zero()) {
        log::warn!("all raw aggregation weights nonpositive; using uniform weights");
        return Ok(AggregationWeights {
            weights: vec![S::one() / S::real(n as f64); n],
        });
    }

    let floor = S::real(WEIGHT_FLOOR);
    let clamped: Vec<S> = raw.iter().map(|&w| w.max(floor)).collect();
    let sum: S = clamped.iter().copied().sum();
    Ok(AggregationWeights {
        weights: clamped.into_iter().map(|w| w / sum).collect(),
    })
}

/// Weighted elementwise combination of trainer models.
pub fn local_aggregate<S: Scalar>(
    models: &[ModelParams<S>],
    weights: &AggregationWeights<S>,
) -> Result<ModelParams<S>> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(Error::Scenario(format!(
            "local_aggregate needs matching nonempty inputs ({} models, {} weights)",
            models.len(),
            weights.len()
        )));
    }
    let dim = models[0].dim();
    let mut out = ModelParams::zeros(dim);
    for (m, &w) in models.iter().zip(weights.values()) {
        m.check_dim(dim)?;
        out.scaled_add(w, m)?;
    }
    Ok(out)
}

/// Unweighted elementwise mean of the latest per-server local models.
pub fn global_aggregate<S: Scalar>(local_models: &[ModelParams<S>]) -> Result<ModelParams<S>> {
    if local_models.is_empty() {
        return Err(Error::Scenario("global_aggregate of empty list".into()));
    }
    let dim = local_models[0].dim();
    let mut out = ModelParams::zeros(dim);
    let w = S::one() / S::real(local_models.len() as f64);
    for m in local_models {
        m.check_dim(dim)?;
        out.scaled_add(w, m)?;
    }
    Ok(out)
}

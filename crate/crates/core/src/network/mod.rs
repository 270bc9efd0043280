//! Feed-forward sigmoid network with a multivariate binary output.
//!
//! Layer `k` maps `O(k-1)` to `O(k) = sigmoid(W(k)^T O(k-1) [+ b(k)])`, where
//! `W(k)` has shape `dims[k] x dims[k+1]`. The input `O(0)` is a sparse binary
//! [`FeatureVector`](crate::corpus::FeatureVector) and the output is one
//! independent presence probability per target word. Biases are optional per
//! layer and off by default.

mod matrix;
mod model;
mod propagate;
mod serialize;

pub use matrix::Matrix;
pub use model::{ModelMetadata, NetworkModel};
pub use propagate::{
    backward, cross_entropy, forward, Dropout, DropoutMask, Gradients, LayerActivations, PROB_EPSILON,
};
pub use serialize::{ModelFileError, FORMAT_VERSION, MAGIC};

pub(crate) use matrix::{axpy, dot};
pub(crate) use propagate::{clamp_prob, InstanceGradient};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
    #[error("non-finite weight in layer {layer}")]
    NonFinite { layer: usize },
    #[error("divergence detected in layer {layer}")]
    Divergence { layer: usize },
}

/// Logistic function `1 / (1 + e^-x)`. Saturates to exactly 0 or 1 for
/// extreme inputs instead of producing NaN.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        // 1/(1+e^-2) evaluated with mpmath at 30 digits.
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_4).abs() < 1e-15);
        for x in [-30.0, -3.5, -1e-3, 0.7, 12.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(-1e4), 0.0);
        assert_eq!(sigmoid(1e4), 1.0);
        assert!(!sigmoid(f64::MAX).is_nan());
    }

    #[test]
    fn sigmoid_is_monotone() {
        let xs: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.1).collect();
        assert!(xs.windows(2).all(|w| sigmoid(w[0]) < sigmoid(w[1])));
    }
}

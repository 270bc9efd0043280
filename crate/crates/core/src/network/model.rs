use crate::corpus::NgramConfig;
use crate::exec::Execution;

use super::{Gradients, Matrix, NetworkError};

/// Provenance recorded with a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelMetadata {
    /// SHA-256 of the source vocabulary file the model was trained with.
    pub source_vocab_hash: [u8; 32],
    pub target_vocab_hash: [u8; 32],
    pub ngram_config: NgramConfig,
    pub seed: u64,
}

/// Weights `W(1)..W(K)` (and optional biases) of a `K`-layer network.
///
/// `dims = [input, hidden.., output]` has `K + 1` entries and `weights[k]` is
/// `dims[k] x dims[k+1]`. `K = 1` is the zero-hidden-layer configuration: one
/// logistic regression per output unit over the input indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Option<Vec<f64>>>,
    metadata: ModelMetadata,
}

impl NetworkModel {
    /// All-zero weights, no biases.
    pub fn zeros(dims: &[usize]) -> Result<Self, NetworkError> {
        let weights = dims.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect();
        let biases = vec![None; dims.len().saturating_sub(1)];
        Self::new(weights, biases, ModelMetadata::default())
    }

    /// Validates shape chaining and finiteness.
    pub fn new(
        weights: Vec<Matrix>,
        biases: Vec<Option<Vec<f64>>>,
        metadata: ModelMetadata,
    ) -> Result<Self, NetworkError> {
        if weights.is_empty() {
            return Err(NetworkError::InvalidShape("at least one weight matrix is required".into()));
        }
        if biases.len() != weights.len() {
            return Err(NetworkError::InvalidShape(format!(
                "{} bias slots for {} layers",
                biases.len(),
                weights.len()
            )));
        }
        let mut dims = vec![weights[0].rows()];
        for (k, w) in weights.iter().enumerate() {
            if w.rows() != *dims.last().unwrap() {
                return Err(NetworkError::InvalidShape(format!(
                    "layer {} has {} rows, previous layer has {} units",
                    k + 1,
                    w.rows(),
                    dims.last().unwrap()
                )));
            }
            if w.rows() == 0 || w.cols() == 0 {
                return Err(NetworkError::InvalidShape(format!("layer {} is empty", k + 1)));
            }
            if let Some(b) = &biases[k] {
                if b.len() != w.cols() {
                    return Err(NetworkError::InvalidShape(format!(
                        "layer {} bias has {} entries, expected {}",
                        k + 1,
                        b.len(),
                        w.cols()
                    )));
                }
            }
            dims.push(w.cols());
        }
        let model = NetworkModel {
            dims,
            weights,
            biases,
            metadata,
        };
        model.check_finite()?;
        Ok(model)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of weight matrices `K`.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Option<Vec<f64>>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Option<Vec<f64>>] {
        &mut self.biases
    }

    /// Turns on a zero-initialized bias for layer `k` (1-based).
    pub fn enable_bias(&mut self, layer: usize) {
        let cols = self.weights[layer - 1].cols();
        self.biases[layer - 1].get_or_insert_with(|| vec![0.0; cols]);
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub fn set_metadata(&mut self, metadata: ModelMetadata) {
        self.metadata = metadata;
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>()
            + self.biases.iter().flatten().map(Vec::len).sum::<usize>()
    }

    /// Errors on the first layer (1-based) holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<(), NetworkError> {
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let bias_ok = b.as_ref().is_none_or(|b| b.iter().all(|x| x.is_finite()));
            if !w.is_finite() || !bias_ok {
                return Err(NetworkError::NonFinite { layer: k + 1 });
            }
        }
        Ok(())
    }

    /// `W <- W - lr * (grad + l2 * W)` for every weight; biases get
    /// `b <- b - lr * grad` (no decay).
    ///
    /// Fails with [`NetworkError::Divergence`] naming the first layer that
    /// ends up non-finite; the model is left in its partially updated state.
    pub fn apply_update(
        &mut self,
        grad: &Gradients,
        lr: f64,
        l2: f64,
        exec: Execution,
    ) -> Result<(), NetworkError> {
        grad.check_shapes(self)?;
        let mut diverged = None;
        for (k, w) in self.weights.iter_mut().enumerate() {
            let g = grad.weights[k].as_slice();
            let cols = w.cols();
            exec.for_each_chunk(w.as_mut_slice(), cols, |i, row| {
                let g = &g[i * cols..(i + 1) * cols];
                for (wi, gi) in row.iter_mut().zip(g) {
                    *wi -= lr * (gi + l2 * *wi);
                }
            });
            let bias_ok = match (&mut self.biases[k], &grad.biases[k]) {
                (Some(b), Some(gb)) => {
                    for (bi, gi) in b.iter_mut().zip(gb) {
                        *bi -= lr * gi;
                    }
                    b.iter().all(|x| x.is_finite())
                }
                _ => true,
            };
            if diverged.is_none() && (!w.is_finite() || !bias_ok) {
                diverged = Some(k + 1);
            }
        }
        match diverged {
            Some(layer) => Err(NetworkError::Divergence { layer }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> NetworkModel {
        NetworkModel::new(
            vec![Matrix::from_vec(1, 1, vec![w])],
            vec![None],
            ModelMetadata::default(),
        )
        .unwrap()
    }

    fn grad(g: f64) -> Gradients {
        Gradients {
            weights: vec![Matrix::from_vec(1, 1, vec![g])],
            biases: vec![None],
        }
    }

    #[test]
    fn plain_gradient_step() {
        let mut m = single(0.5);
        m.apply_update(&grad(0.1), 0.02, 0.0, Execution::Sequential).unwrap();
        assert!((m.weights()[0].get(0, 0) - 0.498).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut m = single(0.123456789);
        let before = m.clone();
        m.apply_update(&grad(0.0), 0.02, 0.0, Execution::Sequential).unwrap();
        assert_eq!(
            m.weights()[0].get(0, 0).to_bits(),
            before.weights()[0].get(0, 0).to_bits()
        );
    }

    #[test]
    fn pure_weight_decay() {
        let mut m = single(1.0);
        m.apply_update(&grad(0.0), 0.1, 0.5, Execution::Sequential).unwrap();
        assert!((m.weights()[0].get(0, 0) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn divergence_names_layer() {
        let mut m = NetworkModel::zeros(&[1, 1, 1]).unwrap();
        let g = Gradients {
            weights: vec![Matrix::zeros(1, 1), Matrix::from_vec(1, 1, vec![f64::INFINITY])],
            biases: vec![None, None],
        };
        let err = m.apply_update(&g, 0.1, 0.0, Execution::Sequential).unwrap_err();
        assert!(matches!(err, NetworkError::Divergence { layer: 2 }));
        assert_eq!(err.to_string(), "divergence detected in layer 2");
    }

    #[test]
    fn shapes_must_chain() {
        let err = NetworkModel::new(
            vec![Matrix::zeros(3, 2), Matrix::zeros(3, 4)],
            vec![None, None],
            ModelMetadata::default(),
        );
        assert!(matches!(err, Err(NetworkError::InvalidShape(_))));
        let nan = NetworkModel::new(
            vec![Matrix::from_vec(1, 1, vec![f64::NAN])],
            vec![None],
            ModelMetadata::default(),
        );
        assert!(matches!(nan, Err(NetworkError::NonFinite { layer: 1 })));
    }

    #[test]
    fn dims_and_depth() {
        let m = NetworkModel::zeros(&[7, 5, 3, 4, 6]).unwrap();
        assert_eq!(m.depth(), 4);
        assert_eq!(m.hidden_dims(), &[5, 3, 4]);
        assert_eq!(m.parameter_count(), 35 + 15 + 12 + 24);
    }
}

use rand::{Rng, RngCore};

use crate::corpus::FeatureVector;
use crate::exec::Execution;

use super::{axpy, dot, sigmoid, Matrix, NetworkError, NetworkModel};

/// Probabilities are clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]` before
/// taking logarithms.
pub const PROB_EPSILON: f64 = 1e-12;

#[inline]
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// Inverted-dropout mask applied to the last hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    /// 1-based index of the masked layer (always `K - 1`).
    pub layer: usize,
    pub keep: Vec<bool>,
    /// `1 / (1 - p)`, applied to surviving units.
    pub scale: f64,
    /// Sigmoid outputs of the masked layer before masking.
    pub pre_dropout: Vec<f64>,
}

impl DropoutMask {
    pub fn dropped(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }
}

/// Dropout request for a training-time forward pass.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut dyn RngCore,
}

/// Outputs of every layer for one input. `layer(0)` is the sparse input;
/// `layer(K)` is the vector of output probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    input: FeatureVector,
    layers: Vec<Vec<f64>>,
    dropout: Option<DropoutMask>,
}

impl LayerActivations {
    pub fn input(&self) -> &FeatureVector {
        &self.input
    }

    /// `O(k)` for `k >= 1` (post-dropout for the masked layer).
    pub fn layer(&self, k: usize) -> &[f64] {
        assert!(k >= 1, "layer 0 is sparse; use input() or dense()");
        &self.layers[k - 1]
    }

    /// Dense copy of `O(k)`, including the input at `k = 0`.
    pub fn dense(&self, k: usize) -> Vec<f64> {
        if k == 0 {
            self.input.to_dense()
        } else {
            self.layers[k - 1].clone()
        }
    }

    pub fn output(&self) -> &[f64] {
        self.layers.last().unwrap()
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.layers.pop().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dropout(&self) -> Option<&DropoutMask> {
        self.dropout.as_ref()
    }
}

/// Forward pass. The first layer sums only the weight rows of active input
/// indices. With `dropout`, units of the last hidden layer are dropped
/// independently with probability `p` and survivors scaled by `1/(1-p)`;
/// a network without hidden layers has nothing to drop.
pub fn forward(
    model: &NetworkModel,
    input: &FeatureVector,
    dropout: Option<Dropout<'_>>,
) -> Result<LayerActivations, NetworkError> {
    if input.dim() != model.input_dim() {
        return Err(NetworkError::DimensionMismatch {
            what: "input",
            expected: model.input_dim(),
            actual: input.dim(),
        });
    }
    let depth = model.depth();
    let mut dropout = dropout.filter(|d| d.p > 0.0);
    let mut layers: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut mask = None;
    for (k, (w, bias)) in model.weights().iter().zip(model.biases()).enumerate() {
        let mut z = bias.clone().unwrap_or_else(|| vec![0.0; w.cols()]);
        if k == 0 {
            for &i in input.active() {
                axpy(1.0, w.row(i), &mut z);
            }
        } else {
            accumulate_rows(w, &layers[k - 1], &mut z);
        }
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        if k + 2 == depth {
            if let Some(d) = dropout.as_mut() {
                let scale = 1.0 / (1.0 - d.p);
                let keep: Vec<bool> = (0..z.len()).map(|_| d.rng.gen::<f64>() >= d.p).collect();
                let pre_dropout = z.clone();
                for (h, &kp) in z.iter_mut().zip(&keep) {
                    *h = if kp { *h * scale } else { 0.0 };
                }
                mask = Some(DropoutMask {
                    layer: k + 1,
                    keep,
                    scale,
                    pre_dropout,
                });
            }
        }
        layers.push(z);
    }

    Ok(LayerActivations {
        input: input.clone(),
        layers,
        dropout: mask,
    })
}

/// `z += W^T x`, skipping zero entries of `x`.
#[inline]
fn accumulate_rows(w: &Matrix, x: &[f64], z: &mut [f64]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(xi, w.row(i), z);
        }
    }
}

/// Mean binary cross-entropy
/// `-(1/V) * sum_i [t_i ln p_i + (1 - t_i) ln(1 - p_i)]` with clamped `p`.
pub fn cross_entropy(p: &[f64], labels: &FeatureVector) -> Result<f64, NetworkError> {
    if p.len() != labels.dim() {
        return Err(NetworkError::DimensionMismatch {
            what: "labels",
            expected: p.len(),
            actual: labels.dim(),
        });
    }
    let mut active = labels.active().iter().peekable();
    let mut sum = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        let pi = clamp_prob(pi);
        sum += if active.next_if_eq(&&i).is_some() {
            pi.ln()
        } else {
            (1.0 - pi).ln()
        };
    }
    Ok(-sum / p.len() as f64)
}

/// One gradient matrix (and optional bias gradient) per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Option<Vec<f64>>>,
}

/// Error signals `dE/dz(k)` for `k = 1..=K` of a single instance.
#[derive(Debug, Clone)]
pub(crate) struct InstanceGradient {
    pub acts: LayerActivations,
    pub deltas: Vec<Vec<f64>>,
}

impl InstanceGradient {
    pub fn compute(
        model: &NetworkModel,
        acts: LayerActivations,
        labels: &FeatureVector,
    ) -> Result<Self, NetworkError> {
        let deltas = backprop_deltas(model, &acts, labels)?;
        Ok(InstanceGradient { acts, deltas })
    }
}

/// Backpropagates the error of `acts` against `labels` to every layer.
pub(crate) fn backprop_deltas(
    model: &NetworkModel,
    acts: &LayerActivations,
    labels: &FeatureVector,
) -> Result<Vec<Vec<f64>>, NetworkError> {
    let depth = model.depth();
    if acts.depth() != depth {
        return Err(NetworkError::DimensionMismatch {
            what: "activation layers",
            expected: depth,
            actual: acts.depth(),
        });
    }
    for k in 1..=depth {
        if acts.layer(k).len() != model.dims()[k] {
            return Err(NetworkError::DimensionMismatch {
                what: "activations",
                expected: model.dims()[k],
                actual: acts.layer(k).len(),
            });
        }
    }
    if acts.input().dim() != model.input_dim() {
        return Err(NetworkError::DimensionMismatch {
            what: "input",
            expected: model.input_dim(),
            actual: acts.input().dim(),
        });
    }
    let out = acts.output();
    if labels.dim() != out.len() {
        return Err(NetworkError::DimensionMismatch {
            what: "labels",
            expected: out.len(),
            actual: labels.dim(),
        });
    }

    let v = out.len() as f64;
    let mut delta: Vec<f64> = out.iter().map(|&p| p / v).collect();
    for &j in labels.active() {
        delta[j] = (out[j] - 1.0) / v;
    }

    let mut deltas = vec![Vec::new(); depth];
    for k in (1..depth).rev() {
        // Layer k feeds W(k+1); its units are O(k).
        let w_next = &model.weights()[k];
        let (units, mask) = match acts.dropout() {
            Some(m) if m.layer == k => (m.pre_dropout.as_slice(), Some(m)),
            _ => (acts.layer(k), None),
        };
        let mut prev: Vec<f64> = units
            .iter()
            .enumerate()
            .map(|(i, &o)| dot(w_next.row(i), &delta) * o * (1.0 - o))
            .collect();
        if let Some(m) = mask {
            for (d, &keep) in prev.iter_mut().zip(&m.keep) {
                *d = if keep { *d * m.scale } else { 0.0 };
            }
        }
        deltas[k] = std::mem::replace(&mut delta, prev);
    }
    deltas[0] = delta;
    Ok(deltas)
}

impl Gradients {
    pub fn zeros_like(model: &NetworkModel) -> Self {
        Gradients {
            weights: model
                .weights()
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model
                .biases()
                .iter()
                .map(|b| b.as_ref().map(|b| vec![0.0; b.len()]))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in self.biases.iter_mut().flatten() {
            b.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64, exec: Execution) {
        for w in &mut self.weights {
            let cols = w.cols();
            exec.for_each_chunk(w.as_mut_slice(), cols, |_, row| {
                row.iter_mut().for_each(|g| *g *= factor)
            });
        }
        for b in self.biases.iter_mut().flatten() {
            b.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub(crate) fn check_shapes(&self, model: &NetworkModel) -> Result<(), NetworkError> {
        let ok = self.weights.len() == model.depth()
            && self.biases.len() == model.depth()
            && self
                .weights
                .iter()
                .zip(model.weights())
                .all(|(g, w)| g.shape() == w.shape())
            && self
                .biases
                .iter()
                .zip(model.biases())
                .all(|(g, b)| match (g, b) {
                    (Some(g), Some(b)) => g.len() == b.len(),
                    (None, None) => true,
                    _ => false,
                });
        if ok {
            Ok(())
        } else {
            Err(NetworkError::InvalidShape("gradient shapes do not match model".into()))
        }
    }

    /// Adds the outer products `O(k-1) (x) delta(k)` of every instance, in
    /// batch order. Rows are processed independently, so the result does
    /// not depend on `exec`.
    pub(crate) fn accumulate(&mut self, batch: &[InstanceGradient], exec: Execution) {
        for (k, g) in self.weights.iter_mut().enumerate() {
            let cols = g.cols();
            if k == 0 {
                for inst in batch {
                    let delta = &inst.deltas[0];
                    for &i in inst.acts.input().active() {
                        axpy(1.0, delta, g.row_mut(i));
                    }
                }
            } else {
                exec.for_each_chunk(g.as_mut_slice(), cols, |i, row| {
                    for inst in batch {
                        let a = inst.acts.layer(k)[i];
                        if a != 0.0 {
                            axpy(a, &inst.deltas[k], row);
                        }
                    }
                });
            }
            if let Some(b) = &mut self.biases[k] {
                for inst in batch {
                    axpy(1.0, &inst.deltas[k], b);
                }
            }
        }
    }
}

/// Exact gradient of [`cross_entropy`]`(forward(model, input).output, labels)`
/// with respect to every weight (and enabled bias).
///
/// If `acts` came from a dropout forward pass, the same mask is applied.
pub fn backward(
    model: &NetworkModel,
    acts: &LayerActivations,
    labels: &FeatureVector,
) -> Result<Gradients, NetworkError> {
    let inst = InstanceGradient::compute(model, acts.clone(), labels)?;
    let mut grad = Gradients::zeros_like(model);
    grad.accumulate(std::slice::from_ref(&inst), Execution::Sequential);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelMetadata;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(dims: &[usize], seed: u64, bias: bool) -> NetworkModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = dims
            .windows(2)
            .map(|d| Matrix::from_fn(d[0], d[1], |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let biases = dims[1..]
            .iter()
            .map(|&n| bias.then(|| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()))
            .collect();
        NetworkModel::new(weights, biases, ModelMetadata::default()).unwrap()
    }

    fn loss(model: &NetworkModel, x: &FeatureVector, t: &FeatureVector) -> f64 {
        let acts = forward(model, x, None).unwrap();
        cross_entropy(acts.output(), t).unwrap()
    }

    /// Central differences on every parameter; independent of `backward`.
    fn numeric_gradient(model: &NetworkModel, x: &FeatureVector, t: &FeatureVector) -> Gradients {
        let h = 1e-5;
        let mut g = Gradients::zeros_like(model);
        let mut m = model.clone();
        for k in 0..model.depth() {
            let (rows, cols) = model.weights()[k].shape();
            for i in 0..rows {
                for j in 0..cols {
                    let w0 = model.weights()[k].get(i, j);
                    m.weights_mut()[k].set(i, j, w0 + h);
                    let up = loss(&m, x, t);
                    m.weights_mut()[k].set(i, j, w0 - h);
                    let down = loss(&m, x, t);
                    m.weights_mut()[k].set(i, j, w0);
                    g.weights[k].set(i, j, (up - down) / (2.0 * h));
                }
            }
            if let Some(b) = model.biases()[k].clone() {
                for (j, &b0) in b.iter().enumerate() {
                    m.biases_mut()[k].as_mut().unwrap()[j] = b0 + h;
                    let up = loss(&m, x, t);
                    m.biases_mut()[k].as_mut().unwrap()[j] = b0 - h;
                    let down = loss(&m, x, t);
                    m.biases_mut()[k].as_mut().unwrap()[j] = b0;
                    g.biases[k].as_mut().unwrap()[j] = (up - down) / (2.0 * h);
                }
            }
        }
        g
    }

    fn assert_close(analytic: &Gradients, numeric: &Gradients) {
        let pairs = analytic
            .weights
            .iter()
            .zip(&numeric.weights)
            .flat_map(|(a, n)| a.as_slice().iter().zip(n.as_slice()))
            .chain(
                analytic
                    .biases
                    .iter()
                    .zip(&numeric.biases)
                    .filter_map(|(a, n)| Some(a.as_ref()?.iter().zip(n.as_ref()?.iter())))
                    .flatten(),
            );
        // f64 differences carry ~1e-11 of rounding noise; the strict relative
        // check against a high-precision oracle lives in the network integration tests.
        for (&a, &n) in pairs {
            assert!(
                (a - n).abs() <= 1e-6 * a.abs().max(n.abs()) + 1e-9,
                "analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = random_model(&[7, 5, 3, 4, 6], 11, false);
        let x = FeatureVector::from_indices(vec![0, 2, 6], 7);
        let t = FeatureVector::from_indices(vec![1, 4, 5], 6);
        let acts = forward(&model, &x, None).unwrap();
        assert_close(&backward(&model, &acts, &t).unwrap(), &numeric_gradient(&model, &x, &t));
    }

    #[test]
    fn bias_gradients_match_finite_differences() {
        let model = random_model(&[6, 4, 5], 3, true);
        let x = FeatureVector::from_indices(vec![1, 5], 6);
        let t = FeatureVector::from_indices(vec![0], 5);
        let acts = forward(&model, &x, None).unwrap();
        assert_close(&backward(&model, &acts, &t).unwrap(), &numeric_gradient(&model, &x, &t));
    }

    #[test]
    fn zero_weights_give_one_half() {
        let model = NetworkModel::zeros(&[5, 4, 3]).unwrap();
        let x = FeatureVector::from_indices(vec![0, 3], 5);
        let acts = forward(&model, &x, None).unwrap();
        assert!(acts.output().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn wrong_input_dim() {
        let model = NetworkModel::zeros(&[5, 3]).unwrap();
        let x = FeatureVector::from_indices(vec![0], 4);
        let err = forward(&model, &x, None).unwrap_err();
        assert_eq!(
            err.to_string(),
            "dimension mismatch for input: expected 5, got 4"
        );
    }

    #[test]
    fn cross_entropy_values() {
        let labels = FeatureVector::from_indices(vec![0], 2);
        // -(ln 0.8 + ln 0.7) / 2, evaluated with mpmath.
        let ce = cross_entropy(&[0.8, 0.3], &labels).unwrap();
        assert!((ce - 0.289_909_247_626_471_1).abs() < 1e-15);
        let half = cross_entropy(&[0.5; 9], &FeatureVector::from_indices(vec![2, 3], 9)).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-15);
        let perfect = cross_entropy(&[1.0, 0.0], &labels).unwrap();
        assert!(perfect > 0.0 && perfect < 1.1e-12);
        assert!(cross_entropy(&[0.5], &labels).is_err());
    }

    #[test]
    fn saturated_outputs_have_finite_loss() {
        let labels = FeatureVector::from_indices(vec![1], 2);
        let ce = cross_entropy(&[1.0, 0.0], &labels).unwrap();
        assert!(ce.is_finite() && ce > 10.0);
    }

    #[test]
    fn perfect_prediction_has_no_gradient() {
        let mut model = NetworkModel::zeros(&[2, 2]).unwrap();
        // Saturate the outputs towards the labels.
        model.weights_mut()[0].set(0, 0, 60.0);
        model.weights_mut()[0].set(0, 1, -60.0);
        let x = FeatureVector::from_indices(vec![0], 2);
        let t = FeatureVector::from_indices(vec![0], 2);
        let acts = forward(&model, &x, None).unwrap();
        let g = backward(&model, &acts, &t).unwrap();
        assert!(g.weights[0].as_slice().iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn output_layer_gradient_formula() {
        // V_t = 1, O(K-1) = 1, O(K) = 0.8, t = 1: dE/dw = (0.8 - 1) * 1 = -0.2
        let p = 0.8f64;
        let model = NetworkModel::new(
            vec![Matrix::from_vec(1, 1, vec![(p / (1.0 - p)).ln()])],
            vec![None],
            ModelMetadata::default(),
        )
        .unwrap();
        let x = FeatureVector::from_indices(vec![0], 1);
        let t = FeatureVector::from_indices(vec![0], 1);
        let acts = forward(&model, &x, None).unwrap();
        assert!((acts.output()[0] - 0.8).abs() < 1e-15);
        let g = backward(&model, &acts, &t).unwrap();
        assert!((g.weights[0].get(0, 0) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn dropout_masks_last_hidden_layer() {
        let model = random_model(&[6, 8, 5, 4], 5, false);
        let x = FeatureVector::from_indices(vec![1, 2], 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let acts = forward(
            &model,
            &x,
            Some(Dropout {
                p: 0.5,
                rng: &mut rng,
            }),
        )
        .unwrap();
        let mask = acts.dropout().unwrap();
        assert_eq!(mask.layer, 2);
        for (i, &keep) in mask.keep.iter().enumerate() {
            let expected = if keep { mask.pre_dropout[i] * 2.0 } else { 0.0 };
            assert_eq!(acts.layer(2)[i], expected);
        }
        let plain = forward(&model, &x, None).unwrap();
        assert_eq!(plain.layer(1), acts.layer(1));
        assert_eq!(plain.layer(2), mask.pre_dropout.as_slice());
    }

    #[test]
    fn dropout_gradient_matches_finite_differences_under_fixed_mask() {
        // With the mask frozen, the network is an ordinary function of its
        // weights; compare against finite differences of that function.
        let model = random_model(&[5, 6, 4], 21, false);
        let x = FeatureVector::from_indices(vec![0, 3], 5);
        let t = FeatureVector::from_indices(vec![2], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let acts = forward(&model, &x, Some(Dropout { p: 0.4, rng: &mut rng })).unwrap();
        let mask = acts.dropout().unwrap().clone();
        let masked_loss = |m: &NetworkModel| {
            let mut again = ChaCha8Rng::seed_from_u64(2);
            let a = forward(m, &x, Some(Dropout { p: 0.4, rng: &mut again })).unwrap();
            assert_eq!(a.dropout().unwrap().keep, mask.keep);
            cross_entropy(a.output(), &t).unwrap()
        };
        let g = backward(&model, &acts, &t).unwrap();
        let h = 1e-5;
        let mut m = model.clone();
        for k in 0..2 {
            let (rows, cols) = model.weights()[k].shape();
            for i in 0..rows {
                for j in 0..cols {
                    let w0 = model.weights()[k].get(i, j);
                    m.weights_mut()[k].set(i, j, w0 + h);
                    let up = masked_loss(&m);
                    m.weights_mut()[k].set(i, j, w0 - h);
                    let down = masked_loss(&m);
                    m.weights_mut()[k].set(i, j, w0);
                    let n = (up - down) / (2.0 * h);
                    let a = g.weights[k].get(i, j);
                    assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()) + 1e-9, "{a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn dropout_without_hidden_layer_is_a_no_op() {
        let model = random_model(&[4, 3], 1, false);
        let x = FeatureVector::from_indices(vec![1], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let acts = forward(&model, &x, Some(Dropout { p: 0.4, rng: &mut rng })).unwrap();
        assert!(acts.dropout().is_none());
        assert_eq!(acts, forward(&model, &x, None).unwrap());
    }

    #[test]
    fn stale_activations_are_rejected() {
        let small = NetworkModel::zeros(&[3, 2, 2]).unwrap();
        let big = NetworkModel::zeros(&[3, 4, 2]).unwrap();
        let x = FeatureVector::from_indices(vec![0], 3);
        let t = FeatureVector::from_indices(vec![0], 2);
        let acts = forward(&small, &x, None).unwrap();
        assert!(backward(&big, &acts, &t).is_err());
    }
}

//! Dense feed-forward networks: forward pass, backpropagation of the mean
//! binary cross-entropy, Adam, seeded local training and the weight file format.

mod adam;
mod features;
mod io;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use features::{Features, SPARSE_DENSITY};
pub use io::{deserialize_params, serialize_params, serialized_len, MAGIC};
pub use train::{train_local, TrainConfig, TrainOutcome, Trainer, TrainingSet};

pub(crate) use features::BatchRows;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result, Scalar};

/// Clamp applied to predictions before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Linear => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }

    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => a * (T::one() - a),
            Activation::Linear => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            input_dim,
            output_dim,
            activation,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.input_dim * self.output_dim + self.output_dim
    }
}

/// Checks that every layer is non-empty and that consecutive layers chain.
pub fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Empty("network has no layers".into()));
    }
    for s in specs {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::Shape(format!("zero-width layer {s:?}")));
        }
    }
    for pair in specs.windows(2) {
        if pair[0].output_dim != pair[1].input_dim {
            return Err(Error::dim("layer chain", pair[0].output_dim, pair[1].input_dim));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    /// `[output_dim × input_dim]`
    pub weights: Array2<T>,
    pub biases: Array1<T>,
}

/// Weights and biases of a dense network. Also used for gradients and Adam
/// moments, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> MlpParams<T> {
    /// Validates shapes, chaining and finiteness.
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_chain(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            if l.weights.dim() != (l.spec.output_dim, l.spec.input_dim) {
                return Err(Error::Shape(format!(
                    "layer {i}: weights {:?} vs spec {}x{}",
                    l.weights.dim(),
                    l.spec.output_dim,
                    l.spec.input_dim
                )));
            }
            if l.biases.len() != l.spec.output_dim {
                return Err(Error::dim("bias length", l.spec.output_dim, l.biases.len()));
            }
        }
        let params = MlpParams { layers };
        if !params.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(params)
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_chain(specs)?;
        Ok(Self::zeros_unchecked(specs))
    }

    fn zeros_unchecked(specs: &[LayerSpec]) -> Self {
        MlpParams {
            layers: specs
                .iter()
                .map(|&spec| Layer {
                    spec,
                    weights: Array2::zeros((spec.output_dim, spec.input_dim)),
                    biases: Array1::zeros(spec.output_dim),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros_unchecked(&self.specs())
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer<T>> {
        self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.parameter_count()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite())
        })
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.specs() == other.specs()
    }

    /// Copy of the layers in `range`.
    pub fn slice_layers(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.layers.len() {
            return Err(Error::Shape(format!(
                "layer range {range:?} out of bounds for {} layers",
                self.layers.len()
            )));
        }
        Ok(MlpParams {
            layers: self.layers[range].to_vec(),
        })
    }

    /// Iterates over every parameter value, layer by layer, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if !self.same_shape(other) {
            return None;
        }
        Some(
            self.values()
                .zip(other.values())
                .fold(T::zero(), |m, (a, b)| m.max((a - b).abs())),
        )
    }

    /// Elementwise `self * alpha`.
    pub fn scaled(&self, alpha: T) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.weights.mapv_inplace(|v| v * alpha);
            l.biases.mapv_inplace(|v| v * alpha);
        }
        out
    }
}

/// Weighted mean of shape-identical parameter sets with weights
/// `count_c / Σ count`. Entries with a zero count are ignored.
///
/// Computed as `p_ref + Σ_c f_c (p_c - p_ref)` with `p_ref` the first
/// contributing entry, which equals `Σ_c f_c p_c` because the fractions sum to
/// one. This form returns the input bit-exactly when all inputs are equal or
/// when there is a single contributor.
pub fn weighted_average<T: Scalar>(entries: &[(&MlpParams<T>, f64)]) -> Result<MlpParams<T>> {
    let contributing: Vec<&(&MlpParams<T>, f64)> = entries.iter().filter(|(_, c)| *c > 0.0).collect();
    if contributing.iter().any(|(_, c)| !c.is_finite()) || entries.iter().any(|(_, c)| *c < 0.0) {
        return Err(Error::Config("aggregation counts must be finite and non-negative".into()));
    }
    let (reference, _) = *contributing
        .first()
        .ok_or_else(|| Error::Empty("no entries with a positive count to average".into()))?;
    let fractions = aggregation_weights(&contributing.iter().map(|(_, c)| *c).collect::<Vec<_>>());
    let mut acc = (*reference).clone();
    for ((params, _), &frac) in contributing.iter().zip(&fractions).skip(1) {
        if !params.same_shape(reference) {
            return Err(Error::Shape("averaged parameter sets differ in shape".into()));
        }
        let f = T::lit(frac);
        for ((out, r), p) in acc.layers.iter_mut().zip(&reference.layers).zip(&params.layers) {
            Zip::from(&mut out.weights)
                .and(&r.weights)
                .and(&p.weights)
                .for_each(|o, &rv, &pv| *o += f * (pv - rv));
            Zip::from(&mut out.biases)
                .and(&r.biases)
                .and(&p.biases)
                .for_each(|o, &rv, &pv| *o += f * (pv - rv));
        }
    }
    Ok(acc)
}

/// Normalized aggregation fractions `count_c / Σ count`.
pub fn aggregation_weights(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

/// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params<T: Scalar>(specs: &[LayerSpec], seed: u64) -> Result<MlpParams<T>> {
    validate_chain(specs)?;
    let mut rng = seed::rng(seed);
    let layers = specs
        .iter()
        .map(|&spec| {
            let limit = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((spec.output_dim, spec.input_dim), || {
                T::lit(rng.random_range(-limit..limit))
            });
            Layer {
                spec,
                weights,
                biases: Array1::zeros(spec.output_dim),
            }
        })
        .collect();
    Ok(MlpParams { layers })
}

/// Affine map `input · Wᵀ + b` followed by the activation.
fn layer_forward<T: Scalar>(layer: &Layer<T>, input: &BatchRows<'_, T>) -> Array2<T> {
    let mut z = match input {
        BatchRows::Sparse { csr, rows } => {
            let mut z = Array2::zeros((rows.len(), layer.spec.output_dim));
            for (b, &r) in rows.iter().enumerate() {
                let (idx, vals) = csr.row(r);
                let mut zrow = z.row_mut(b);
                for (o, wrow) in layer.weights.outer_iter().enumerate() {
                    let w = wrow.as_slice().expect("standard layout");
                    let mut acc = T::zero();
                    for (&j, &v) in idx.iter().zip(vals) {
                        acc += v * w[j];
                    }
                    zrow[o] = acc;
                }
            }
            z
        }
        _ => {
            let x = input.dense_view().expect("dense batch");
            x.dot(&layer.weights.t())
        }
    };
    let act = layer.spec.activation;
    Zip::from(z.rows_mut()).for_each(|mut row| {
        Zip::from(&mut row)
            .and(&layer.biases)
            .for_each(|v, &b| *v = act.apply(*v + b));
    });
    z
}

fn dense_forward<T: Scalar>(layer: &Layer<T>, input: ArrayView2<'_, T>) -> Array2<T> {
    layer_forward(layer, &BatchRows::Dense(input))
}

/// Activations of every layer for a batch; the last entry is the network output.
pub(crate) fn forward_rows<T: Scalar>(params: &MlpParams<T>, input: &BatchRows<'_, T>) -> Vec<Array2<T>> {
    let mut acts = Vec::with_capacity(params.layers.len());
    acts.push(layer_forward(&params.layers[0], input));
    for layer in &params.layers[1..] {
        let next = dense_forward(layer, acts.last().expect("nonempty").view());
        acts.push(next);
    }
    acts
}

/// Per-layer activations for a dense feature matrix.
pub fn forward<T: Scalar>(params: &MlpParams<T>, features: &Array2<T>) -> Result<Vec<Array2<T>>> {
    if features.ncols() != params.input_dim() {
        return Err(Error::dim("forward input", params.input_dim(), features.ncols()));
    }
    Ok(forward_rows(params, &BatchRows::Dense(features.view())))
}

/// Network output for every row of `features`.
pub fn predict_features<T: Scalar>(params: &MlpParams<T>, features: &Features<T>) -> Result<Array2<T>> {
    let rows = features.all_rows();
    predict_rows(params, features, &rows)
}

/// Network output for the selected rows, evaluated in fixed-size chunks.
pub fn predict_rows<T: Scalar>(params: &MlpParams<T>, features: &Features<T>, rows: &[usize]) -> Result<Array2<T>> {
    const CHUNK: usize = 512;
    if features.ncols() != params.input_dim() {
        return Err(Error::dim("forward input", params.input_dim(), features.ncols()));
    }
    let mut out = Array2::zeros((rows.len(), params.output_dim()));
    for (c, chunk) in rows.chunks(CHUNK).enumerate() {
        let acts = forward_rows(params, &features.batch(chunk));
        out.slice_mut(ndarray::s![c * CHUNK..c * CHUNK + chunk.len(), ..])
            .assign(acts.last().expect("nonempty"));
    }
    Ok(out)
}

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::lit(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Mean binary cross-entropy over all elements, predictions clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Scalar>(predictions: &Array2<T>, targets: &Array2<T>) -> Result<T> {
    if predictions.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            predictions.dim(),
            targets.dim()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("loss over zero elements".into()));
    }
    let mut total = T::zero();
    Zip::from(predictions).and(targets).for_each(|&p, &t| {
        let p = clamp_prob(p);
        total -= t * p.ln() + (T::one() - t) * (T::one() - p).ln();
    });
    Ok(total / T::lit(predictions.len() as f64))
}

/// Same as [`bce_loss`] with targets given as batch rows (possibly sparse).
fn bce_loss_rows<T: Scalar>(predictions: &Array2<T>, targets: &BatchRows<'_, T>) -> T {
    // Σ -ln(1-p) over all entries, then correct the entries with nonzero targets.
    let mut total = T::zero();
    for &p in predictions.iter() {
        total -= (T::one() - clamp_prob(p)).ln();
    }
    targets.for_each_nonzero(|b, j, t| {
        let p = clamp_prob(predictions[[b, j]]);
        total -= t * (p.ln() - (T::one() - p).ln());
    });
    total / T::lit(predictions.len() as f64)
}

/// Gradient of the mean BCE with respect to every weight and bias, plus the loss.
/// The output layer must use the sigmoid activation.
pub fn backward<T: Scalar>(params: &MlpParams<T>, features: &Array2<T>, targets: &Array2<T>) -> Result<(MlpParams<T>, T)> {
    if features.nrows() != targets.nrows() {
        return Err(Error::dim("batch rows", features.nrows(), targets.nrows()));
    }
    if features.ncols() != params.input_dim() {
        return Err(Error::dim("backward input", params.input_dim(), features.ncols()));
    }
    if targets.ncols() != params.output_dim() {
        return Err(Error::dim("backward targets", params.output_dim(), targets.ncols()));
    }
    if features.nrows() == 0 {
        return Err(Error::Empty("batch has no examples".into()));
    }
    backward_rows(params, &BatchRows::Dense(features.view()), &BatchRows::Dense(targets.view()))
}

pub(crate) fn backward_rows<T: Scalar>(
    params: &MlpParams<T>,
    input: &BatchRows<'_, T>,
    targets: &BatchRows<'_, T>,
) -> Result<(MlpParams<T>, T)> {
    if input.nrows() != targets.nrows() {
        return Err(Error::dim("batch rows", input.nrows(), targets.nrows()));
    }
    let last = params.layers.len() - 1;
    if params.layers[last].spec.activation != Activation::Sigmoid {
        return Err(Error::Config("binary cross-entropy training needs a sigmoid output layer".into()));
    }
    let acts = forward_rows(params, input);
    let output = &acts[last];
    let loss = bce_loss_rows(output, targets);

    // sigmoid + BCE: dL/dz = (p - t) / element count
    let scale = T::one() / T::lit(output.len() as f64);
    let mut delta = output.clone();
    match targets.dense_view() {
        Some(t) => delta -= &t,
        None => targets.for_each_nonzero(|b, j, t| delta[[b, j]] -= t),
    }
    delta.mapv_inplace(|v| v * scale);

    let mut grads = params.zeros_like();
    for l in (0..=last).rev() {
        let g = &mut grads.layers[l];
        g.biases = delta.sum_axis(Axis(0));
        if l > 0 {
            g.weights = delta.t().dot(&acts[l - 1]);
            let mut next = delta.dot(&params.layers[l].weights);
            let act = params.layers[l - 1].spec.activation;
            Zip::from(&mut next)
                .and(&acts[l - 1])
                .for_each(|d, &a| *d *= act.derivative_from_output(a));
            delta = next;
        } else {
            match input {
                BatchRows::Sparse { csr, rows } => {
                    let gw = &mut g.weights;
                    for (o, mut grow) in gw.outer_iter_mut().enumerate() {
                        let gs = grow.as_slice_mut().expect("standard layout");
                        for (b, &r) in rows.iter().enumerate() {
                            let d = delta[[b, o]];
                            if d == T::zero() {
                                continue;
                            }
                            let (idx, vals) = csr.row(r);
                            for (&j, &v) in idx.iter().zip(vals) {
                                gs[j] += d * v;
                            }
                        }
                    }
                }
                _ => {
                    let x = input.dense_view().expect("dense batch");
                    g.weights = delta.t().dot(&x);
                }
            }
        }
    }
    Ok((grads, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(i: usize, o: usize, a: Activation) -> LayerSpec {
        LayerSpec::new(i, o, a)
    }

    #[test]
    fn single_linear_layer_has_zero_bias() {
        let p: MlpParams<f64> = init_params(&[spec(1, 1, Activation::Linear)], 99).unwrap();
        assert_eq!(p.layers()[0].biases[0], 0.0);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let specs = [spec(5, 4, Activation::Relu), spec(4, 1, Activation::Sigmoid)];
        let a: MlpParams<f64> = init_params(&specs, 11).unwrap();
        let b: MlpParams<f64> = init_params(&specs, 11).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 9.0).sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn mismatched_chain_is_rejected() {
        let specs = [spec(5, 4, Activation::Relu), spec(3, 1, Activation::Sigmoid)];
        assert!(matches!(init_params::<f64>(&specs, 0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn autoencoder_parameter_count() {
        let dims = [1399, 200, 100, 50, 100, 200, 1399];
        let specs: Vec<LayerSpec> = dims.windows(2).map(|w| spec(w[0], w[1], Activation::Relu)).collect();
        let p: MlpParams<f64> = init_params(&specs, 0).unwrap();
        assert_eq!(p.depth(), 6);
        let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        assert_eq!(p.parameter_count(), expected);
        assert_eq!(p.parameter_count(), 611_649);
    }

    #[test]
    fn zero_network_with_sigmoid_outputs_half() {
        let specs = [spec(3, 2, Activation::Relu), spec(2, 2, Activation::Sigmoid)];
        let p: MlpParams<f64> = MlpParams::zeros(&specs).unwrap();
        let out = forward(&p, &array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap();
        assert!(out[1].iter().all(|&v| v == 0.5));
    }

    #[test]
    fn relu_clips_negative_preactivation() {
        let mut p: MlpParams<f64> = MlpParams::zeros(&[spec(1, 1, Activation::Relu)]).unwrap();
        p.layers_mut()[0].weights[[0, 0]] = 1.0;
        let out = forward(&p, &array![[-1.0]]).unwrap();
        assert_eq!(out[0][[0, 0]], 0.0);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p: MlpParams<f64> = MlpParams::zeros(&[spec(3, 1, Activation::Sigmoid)]).unwrap();
        assert!(forward(&p, &array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn bce_reference_values() {
        let half: f64 = bce_loss(&array![[0.5]], &array![[1.0]]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        let v: f64 = bce_loss(&array![[0.9, 0.1]], &array![[1.0, 0.0]]).unwrap();
        assert!((v - 0.105_360_515_657_826_3).abs() < 1e-12);
        let perfect: f64 = bce_loss(&array![[1.0, 0.0]], &array![[1.0, 0.0]]).unwrap();
        assert!(perfect >= 0.0 && perfect < 2e-7);
        assert!(bce_loss(&array![[0.5, 0.5]], &array![[1.0]]).is_err());
    }

    #[test]
    fn zero_network_output_bias_gradient() {
        let specs = [spec(2, 3, Activation::Relu), spec(3, 1, Activation::Sigmoid)];
        let p: MlpParams<f64> = MlpParams::zeros(&specs).unwrap();
        let x = Array2::zeros((4, 2));
        let t = array![[1.0], [0.0], [1.0], [1.0]];
        let (g, _) = backward(&p, &x, &t).unwrap();
        let expected = (0.5 - 1.0 + 0.5 - 0.0 + 0.5 - 1.0 + 0.5 - 1.0) / 4.0;
        assert!((g.layers()[1].biases[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_keeps_gradient() {
        let specs = [spec(3, 4, Activation::Sigmoid), spec(4, 2, Activation::Sigmoid)];
        let p: MlpParams<f64> = init_params(&specs, 5).unwrap();
        let x = array![[0.1, 0.7, 0.3], [0.9, 0.2, 0.5]];
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let x2 = ndarray::concatenate![Axis(0), x, x];
        let t2 = ndarray::concatenate![Axis(0), t, t];
        let (g1, l1) = backward(&p, &x, &t).unwrap();
        let (g2, l2) = backward(&p, &x2, &t2).unwrap();
        assert!(g1.max_abs_diff(&g2).unwrap() < 1e-15);
        assert!((l1 - l2).abs() < 1e-15);
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        let specs = [spec(6, 4, Activation::Relu), spec(4, 6, Activation::Sigmoid)];
        let p: MlpParams<f64> = init_params(&specs, 8).unwrap();
        let x = array![
            [1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        ];
        let dense = Features::dense(x.clone());
        let sparse = Features::<f64>::sparse_from_dense(&x.view());
        let rows = [2, 0, 1];
        let (gd, ld) = backward_rows(&p, &dense.batch(&rows), &dense.batch(&rows)).unwrap();
        let (gs, ls) = backward_rows(&p, &sparse.batch(&rows), &sparse.batch(&rows)).unwrap();
        assert!(gd.max_abs_diff(&gs).unwrap() < 1e-14);
        assert!((ld - ls).abs() < 1e-14);
    }

    #[test]
    fn weighted_average_reference_values() {
        let one = |v: f64| {
            let mut p: MlpParams<f64> = MlpParams::zeros(&[spec(1, 1, Activation::Linear)]).unwrap();
            p.layers_mut()[0].weights[[0, 0]] = v;
            p
        };
        let (a, b) = (one(2.0), one(4.0));
        let avg = weighted_average(&[(&a, 1.0), (&b, 3.0)]).unwrap();
        assert_eq!(avg.layers()[0].weights[[0, 0]], 3.5);
        let (c, d) = (one(1.0), one(2.0));
        let avg = weighted_average(&[(&c, 100.0), (&d, 300.0)]).unwrap();
        assert!((avg.layers()[0].weights[[0, 0]] - 1.75).abs() < 1e-12);
        let skip = weighted_average(&[(&a, 0.0), (&b, 2.0)]).unwrap();
        assert_eq!(skip, b);
        assert!(weighted_average(&[(&a, 0.0)]).is_err());
    }
}

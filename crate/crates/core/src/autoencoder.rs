//! Denoising autoencoder over binary drug features and the shared encoder.
//!
//! Layout: `D → 200 → 100 → 50 → 100 → 200 → D`, ReLU hidden layers and a
//! sigmoid output. The first three layers form the encoder; only those (and
//! 50-dim mean encodings) ever leave a client.

use ndarray::{Array1, Array2, Axis};

use crate::nn::{self, Activation, Features, LayerSpec, MlpParams, Trainer};
use crate::{seed, Error, Result, Scalar};

pub const HIDDEN_UNITS: [usize; 5] = [200, 100, 50, 100, 200];
pub const ENCODER_DEPTH: usize = 3;
pub const ENCODING_DIM: usize = 50;
pub const DEFAULT_CORRUPTION_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoencoderSpec {
    pub input_dim: usize,
    pub corruption_rate: f64,
}

impl AutoencoderSpec {
    pub fn new(input_dim: usize, corruption_rate: f64) -> Result<Self> {
        if input_dim <= ENCODING_DIM {
            return Err(Error::Config(format!(
                "autoencoder input dim {input_dim} must exceed the {ENCODING_DIM}-dim bottleneck"
            )));
        }
        check_rate(corruption_rate)?;
        Ok(AutoencoderSpec {
            input_dim,
            corruption_rate,
        })
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&HIDDEN_UNITS);
        dims.push(self.input_dim);
        let last = dims.len() - 2;
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Sigmoid } else { Activation::Relu };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect()
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        self.layer_specs()[..ENCODER_DEPTH].to_vec()
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("corruption rate {rate} must lie in [0, 1)")));
    }
    Ok(())
}

/// Where an averaged encoder came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub seed: u64,
    pub clients: usize,
    pub examples: usize,
}

/// The encoder half of the autoencoder (three ReLU layers down to 50 dims).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<T> {
    pub params: MlpParams<T>,
    pub provenance: Provenance,
}

impl<T: Scalar> EncoderModel<T> {
    /// Wraps encoder-shaped parameters (as loaded from a weight file).
    pub fn from_params(params: MlpParams<T>) -> Result<Self> {
        if params.depth() != ENCODER_DEPTH || params.output_dim() != ENCODING_DIM {
            return Err(Error::Shape(format!(
                "encoder must have {ENCODER_DEPTH} layers ending in {ENCODING_DIM} units, got {} layers ending in {}",
                params.depth(),
                params.output_dim()
            )));
        }
        Ok(EncoderModel {
            params,
            provenance: Provenance::default(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }
}

/// Masking noise on a dense matrix: each nonzero entry is zeroed with
/// probability `rate`. Zeros stay zero, so one draw is made per nonzero entry.
pub fn corrupt<T: Scalar>(features: &Array2<T>, rate: f64, seed: u64) -> Result<Array2<T>> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(features.clone());
    }
    Ok(Features::dense(features.clone())
        .mask_nonzeros(rate, &mut seed::rng(seed))
        .to_dense())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoencoderTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub corruption_rate: f64,
    pub seed: u64,
    pub adam: nn::AdamConfig,
}

impl AutoencoderTraining {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        AutoencoderTraining {
            epochs,
            batch_size,
            corruption_rate: DEFAULT_CORRUPTION_RATE,
            seed,
            adam: nn::AdamConfig::default(),
        }
    }
}

/// Trains the full autoencoder to reconstruct clean features from inputs
/// masked afresh each epoch. Returns the parameters and per-epoch losses.
pub fn train_autoencoder_local<T: Scalar>(
    params: &MlpParams<T>,
    client_features: &Features<T>,
    config: &AutoencoderTraining,
) -> Result<nn::TrainOutcome<T>> {
    if client_features.nrows() == 0 {
        return Err(Error::Empty("client has no examples".into()));
    }
    if config.epochs == 0 {
        return Err(Error::Config("E1 must be at least 1".into()));
    }
    check_rate(config.corruption_rate)?;
    if params.input_dim() != client_features.ncols() || params.output_dim() != client_features.ncols() {
        return Err(Error::dim("autoencoder features", params.input_dim(), client_features.ncols()));
    }
    let mut trainer = Trainer::new(
        params.clone(),
        config.batch_size,
        config.adam,
        seed::derive(config.seed, &[0]),
    );
    let mut noise = seed::rng(seed::derive(config.seed, &[1]));
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let noisy = if config.corruption_rate > 0.0 {
            client_features.mask_nonzeros(config.corruption_rate, &mut noise)
        } else {
            client_features.clone()
        };
        losses.push(trainer.run_epoch(&noisy, client_features)?);
    }
    let steps = trainer.steps();
    Ok(nn::TrainOutcome {
        params: trainer.into_params(),
        epoch_losses: losses,
        steps,
    })
}

/// Keeps the first three layers; the decoder is dropped.
pub fn extract_encoder<T: Scalar>(autoencoder: &MlpParams<T>) -> Result<EncoderModel<T>> {
    let depth = HIDDEN_UNITS.len() + 1;
    if autoencoder.depth() != depth {
        return Err(Error::Shape(format!(
            "autoencoder must have {depth} layers, got {}",
            autoencoder.depth()
        )));
    }
    let widths: Vec<usize> = autoencoder.layers()[..HIDDEN_UNITS.len()]
        .iter()
        .map(|l| l.spec.output_dim)
        .collect();
    if widths != HIDDEN_UNITS || autoencoder.output_dim() != autoencoder.input_dim() {
        return Err(Error::Shape(format!("unexpected autoencoder widths {widths:?}")));
    }
    EncoderModel::from_params(autoencoder.slice_layers(0..ENCODER_DEPTH)?)
}

/// Size-weighted average `Σ (n_c / N) w_c`, reduced in the given order.
pub fn average_encoders<T: Scalar>(entries: &[(EncoderModel<T>, usize)]) -> Result<EncoderModel<T>> {
    if entries.is_empty() {
        return Err(Error::Empty("no encoders to average".into()));
    }
    if entries.iter().any(|(_, n)| *n == 0) {
        return Err(Error::Config("every client size must be at least 1".into()));
    }
    let refs: Vec<(&MlpParams<T>, f64)> = entries.iter().map(|(e, n)| (&e.params, *n as f64)).collect();
    let params = nn::weighted_average(&refs)?;
    Ok(EncoderModel {
        params,
        provenance: Provenance {
            seed: entries[0].0.provenance.seed,
            clients: entries.len(),
            examples: entries.iter().map(|(_, n)| n).sum(),
        },
    })
}

/// 50-dim encodings of every row.
pub fn encode<T: Scalar>(encoder: &EncoderModel<T>, features: &Array2<T>) -> Result<Array2<T>> {
    let mut acts = nn::forward(&encoder.params, features)?;
    Ok(acts.pop().expect("encoder has layers"))
}

pub fn encode_features<T: Scalar>(encoder: &EncoderModel<T>, features: &Features<T>) -> Result<Array2<T>> {
    nn::predict_features(&encoder.params, features)
}

/// Mean encoding of a client's examples. This is the only encoding-level payload a
/// client sends.
pub fn client_mean_encoding<T: Scalar>(encoder: &EncoderModel<T>, client_features: &Features<T>) -> Result<Array1<T>> {
    if client_features.nrows() == 0 {
        return Err(Error::Empty("client has no examples".into()));
    }
    let enc = encode_features(encoder, client_features)?;
    Ok(enc.mean_axis(Axis(0)).expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layer_layout() {
        let spec = AutoencoderSpec::new(1399, 0.2).unwrap();
        let layers = spec.layer_specs();
        assert_eq!(layers.len(), 6);
        assert_eq!(layers[2].output_dim, 50);
        assert_eq!(layers[5].activation, Activation::Sigmoid);
        assert!(layers[..5].iter().all(|l| l.activation == Activation::Relu));
        assert!(AutoencoderSpec::new(50, 0.2).is_err());
        assert!(AutoencoderSpec::new(100, 1.0).is_err());
    }

    #[test]
    fn corruption_edges() {
        let x = array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]];
        assert_eq!(corrupt(&x, 0.0, 3).unwrap(), x);
        let zeros = Array2::<f64>::zeros((4, 5));
        assert_eq!(corrupt(&zeros, 0.7, 3).unwrap(), zeros);
        assert!(corrupt(&x, 1.0, 3).is_err());
        assert!(corrupt(&x, -0.1, 3).is_err());
    }

    #[test]
    fn corruption_rate_concentrates() {
        let ones = Array2::<f64>::ones((100, 100));
        let noisy = corrupt(&ones, 0.2, 42).unwrap();
        let zeroed = noisy.iter().filter(|&&v| v == 0.0).count() as f64 / 10_000.0;
        assert!((0.18..=0.22).contains(&zeroed), "fraction {zeroed}");
    }

    #[test]
    fn encoder_extraction() {
        let spec = AutoencoderSpec::new(60, 0.2).unwrap();
        let ae: MlpParams<f64> = nn::init_params(&spec.layer_specs(), 4).unwrap();
        let enc = extract_encoder(&ae).unwrap();
        assert_eq!(enc.params.depth(), 3);
        for (a, b) in enc.params.layers().iter().zip(ae.layers()) {
            assert_eq!(a, b);
        }
        let shallow = ae.slice_layers(0..4).unwrap();
        assert!(extract_encoder(&shallow).is_err());
    }

    #[test]
    fn averaging_reference_cases() {
        let spec = AutoencoderSpec::new(60, 0.2).unwrap();
        let ae: MlpParams<f64> = nn::init_params(&spec.layer_specs(), 4).unwrap();
        let enc = extract_encoder(&ae).unwrap();
        assert_eq!(average_encoders(&[(enc.clone(), 7)]).unwrap().params, enc.params);
        let neg = EncoderModel {
            params: enc.params.scaled(-1.0),
            provenance: Provenance::default(),
        };
        let zero = average_encoders(&[(enc.clone(), 5), (neg, 5)]).unwrap();
        assert!(zero.params.values().all(|v| v == 0.0));
        let same = average_encoders(&[(enc.clone(), 3), (enc.clone(), 11), (enc.clone(), 2)]).unwrap();
        assert_eq!(same.params, enc.params);
        assert!(average_encoders::<f64>(&[]).is_err());
        assert!(average_encoders(&[(enc, 0)]).is_err());
    }

    #[test]
    fn zero_encoder_and_means() {
        let spec = AutoencoderSpec::new(60, 0.2).unwrap();
        let zero = EncoderModel::from_params(MlpParams::<f64>::zeros(&spec.encoder_specs()).unwrap()).unwrap();
        let x = Array2::from_elem((3, 60), 1.0);
        assert!(encode(&zero, &x).unwrap().iter().all(|&v| v == 0.0));
        assert!(encode(&zero, &Array2::zeros((1, 59))).is_err());
        let empty = Features::dense(Array2::<f64>::zeros((0, 60)));
        assert!(client_mean_encoding(&zero, &empty).is_err());
    }
}

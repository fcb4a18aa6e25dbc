use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{backward_rows, AdamConfig, AdamState, Features, MlpParams};
use crate::seed::{self, Rng};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            seed,
            adam: AdamConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Inputs paired with BCE targets, row for row.
#[derive(Debug, Clone)]
pub struct TrainingSet<T> {
    pub inputs: Features<T>,
    pub targets: Features<T>,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn new(inputs: Features<T>, targets: Features<T>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::dim("training targets", inputs.nrows(), targets.nrows()));
        }
        if inputs.nrows() == 0 {
            return Err(Error::Empty("training set has no examples".into()));
        }
        Ok(TrainingSet { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: MlpParams<T>,
    /// Mean training loss of each epoch (batch losses weighted by batch size).
    pub epoch_losses: Vec<T>,
    /// Number of optimizer steps applied.
    pub steps: u64,
}

/// Mini-batch Adam training loop with its own optimizer state and shuffling stream.
pub struct Trainer<T> {
    params: MlpParams<T>,
    adam: AdamState<T>,
    batch_size: usize,
    rng: Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(params: MlpParams<T>, batch_size: usize, adam: AdamConfig, seed: u64) -> Self {
        let state = AdamState::new(&params, adam);
        Trainer {
            params,
            adam: state,
            batch_size: batch_size.max(1),
            rng: seed::rng(seed),
        }
    }

    /// One pass over the data in a freshly shuffled order. Returns the epoch loss.
    pub fn run_epoch(&mut self, inputs: &Features<T>, targets: &Features<T>) -> Result<T> {
        let n = inputs.nrows();
        if n == 0 {
            return Err(Error::Empty("training set has no examples".into()));
        }
        if targets.nrows() != n {
            return Err(Error::dim("training targets", n, targets.nrows()));
        }
        if inputs.ncols() != self.params.input_dim() {
            return Err(Error::dim("training inputs", self.params.input_dim(), inputs.ncols()));
        }
        if targets.ncols() != self.params.output_dim() {
            return Err(Error::dim("training targets", self.params.output_dim(), targets.ncols()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut total = T::zero();
        for batch in order.chunks(self.batch_size) {
            let (grads, loss) = backward_rows(&self.params, &inputs.batch(batch), &targets.batch(batch))?;
            self.adam.step(&mut self.params, &grads)?;
            total += loss * T::lit(batch.len() as f64);
        }
        Ok(total / T::lit(n as f64))
    }

    pub fn steps(&self) -> u64 {
        self.adam.timestep
    }

    pub fn params(&self) -> &MlpParams<T> {
        &self.params
    }

    pub fn into_params(self) -> MlpParams<T> {
        self.params
    }
}

/// Trains a copy of `params` for `config.epochs` passes with a fresh Adam state.
pub fn train_local<T: Scalar>(
    params: &MlpParams<T>,
    data: &TrainingSet<T>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set has no examples".into()));
    }
    let mut trainer = Trainer::new(params.clone(), config.batch_size, config.adam, config.seed);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        epoch_losses.push(trainer.run_epoch(&data.inputs, &data.targets)?);
    }
    let steps = trainer.steps();
    Ok(TrainOutcome {
        params: trainer.into_params(),
        epoch_losses,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation, LayerSpec};
    use ndarray::Array2;

    fn toy_set() -> TrainingSet<f64> {
        // two features, label 1 iff x0 > x1, 20 examples
        let mut x = Array2::zeros((20, 2));
        let mut y = Array2::zeros((20, 1));
        for i in 0..20 {
            let a = (i as f64 * 0.37).sin().abs();
            let b = (i as f64 * 0.91).cos().abs();
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            y[[i, 0]] = if a > b { 1.0 } else { 0.0 };
        }
        TrainingSet::new(Features::dense(x), Features::dense(y)).unwrap()
    }

    fn net() -> MlpParams<f64> {
        init_params(
            &[LayerSpec::new(2, 4, Activation::Relu), LayerSpec::new(4, 1, Activation::Sigmoid)],
            3,
        )
        .unwrap()
    }

    #[test]
    fn single_example_single_step() {
        let data = TrainingSet::new(
            Features::dense(Array2::from_elem((1, 2), 1.0)),
            Features::dense(Array2::from_elem((1, 1), 1.0)),
        )
        .unwrap();
        let out = train_local(&net(), &data, &TrainConfig::new(1, 1, 0)).unwrap();
        assert_eq!(out.steps, 1);
    }

    #[test]
    fn more_epochs_lower_loss() {
        let data = toy_set();
        let one = train_local(&net(), &data, &TrainConfig::new(1, 4, 9)).unwrap();
        let five = train_local(&net(), &data, &TrainConfig::new(5, 4, 9)).unwrap();
        let eval = |p: &MlpParams<f64>| {
            let out = crate::nn::forward(p, &data.inputs.to_dense()).unwrap();
            crate::nn::bce_loss(out.last().unwrap(), &data.targets.to_dense()).unwrap()
        };
        assert!(eval(&five.params) <= eval(&one.params));
        assert_eq!(five.steps, 25);
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data = toy_set();
        let a = train_local(&net(), &data, &TrainConfig::new(3, 8, 17)).unwrap();
        let b = train_local(&net(), &data, &TrainConfig::new(3, 8, 17)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn empty_data_is_rejected() {
        let empty = TrainingSet::new(
            Features::dense(Array2::<f64>::zeros((0, 2))),
            Features::dense(Array2::<f64>::zeros((0, 1))),
        );
        assert!(empty.is_err());
        assert!(train_local(&net(), &toy_set(), &TrainConfig::new(0, 4, 0)).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moments: MlpParams<T>,
    pub second_moments: MlpParams<T>,
    pub timestep: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &MlpParams<T>, config: AdamConfig) -> Self {
        AdamState {
            first_moments: params.zeros_like(),
            second_moments: params.zeros_like(),
            timestep: 0,
            config,
        }
    }

    /// Applies one bias-corrected Adam update to `params` in place.
    pub fn step(&mut self, params: &mut MlpParams<T>, grads: &MlpParams<T>) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.first_moments) {
            return Err(Error::Shape("Adam parameters, gradients and moments differ in shape".into()));
        }
        self.timestep += 1;
        let c = &self.config;
        let t = self.timestep as i32;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one_b1 = T::lit(1.0 - c.beta1);
        let one_b2 = T::lit(1.0 - c.beta2);
        let inv_corr1 = T::lit(1.0 / (1.0 - c.beta1.powi(t)));
        let inv_corr2 = T::lit(1.0 / (1.0 - c.beta2.powi(t)));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.epsilon);

        let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] * inv_corr1;
                let v_hat = v[i] * inv_corr2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };

        let layers = params
            .layers_mut()
            .iter_mut()
            .zip(grads.layers())
            .zip(self.first_moments.layers_mut().iter_mut().zip(self.second_moments.layers_mut()));
        for ((p, g), (m, v)) in layers {
            update(
                p.weights.as_slice_mut().expect("standard layout"),
                g.weights.as_slice().expect("standard layout"),
                m.weights.as_slice_mut().expect("standard layout"),
                v.weights.as_slice_mut().expect("standard layout"),
            );
            update(
                p.biases.as_slice_mut().expect("standard layout"),
                g.biases.as_slice().expect("standard layout"),
                m.biases.as_slice_mut().expect("standard layout"),
                v.biases.as_slice_mut().expect("standard layout"),
            );
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::step`].
pub fn adam_step<T: Scalar>(
    params: &MlpParams<T>,
    grads: &MlpParams<T>,
    state: &AdamState<T>,
) -> Result<(MlpParams<T>, AdamState<T>)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};

    fn scalar_net(v: f64) -> MlpParams<f64> {
        let mut p = MlpParams::zeros(&[LayerSpec::new(1, 1, Activation::Linear)]).unwrap();
        p.layers_mut()[0].weights[[0, 0]] = v;
        p
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let params = scalar_net(0.0);
        let grads = scalar_net(1.0);
        let state = AdamState::new(&params, AdamConfig::default());
        let (next, st) = adam_step(&params, &grads, &state).unwrap();
        // m = 0.1, v = 0.001; bias corrected both are 1 → Δ = -η / (1 + ε)
        let m_hat = (1.0 - 0.9) * 1.0 / (1.0 - 0.9);
        let v_hat = (1.0 - 0.999) * 1.0 / (1.0 - 0.999);
        let expected = -0.001 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        assert_eq!(st.timestep, 1);
        assert!((next.layers()[0].weights[[0, 0]] - expected).abs() < 1e-18);
        assert!((expected + 0.000_999_999_99).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let params = scalar_net(0.25);
        let grads = scalar_net(0.0);
        let state = AdamState::new(&params, AdamConfig::default());
        let (next, st) = adam_step(&params, &grads, &state).unwrap();
        assert_eq!(next, params);
        let (again, st2) = adam_step(&params, &grads, &state).unwrap();
        assert_eq!(again, next);
        assert_eq!(st, st2);
    }

    #[test]
    fn shape_mismatch_errors() {
        let params = scalar_net(0.0);
        let grads: MlpParams<f64> = MlpParams::zeros(&[LayerSpec::new(2, 1, Activation::Linear)]).unwrap();
        let state = AdamState::new(&params, AdamConfig::default());
        assert!(adam_step(&params, &grads, &state).is_err());
    }
}

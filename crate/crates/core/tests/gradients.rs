//! Backpropagation against central finite differences of an independently
//! written forward pass.

use cbfl::nn::{backward, init_params, Activation, LayerSpec, MlpParams};
use ndarray::Array2;
use rand::Rng;

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Relu => z.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Linear => z,
    }
}

/// Plain loops over the raw weight vectors; shares nothing with the library forward pass.
fn naive_loss(layers: &[(LayerSpec, Vec<f64>, Vec<f64>)], x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for r in 0..x.nrows() {
        let mut h: Vec<f64> = x.row(r).to_vec();
        for (spec, w, b) in layers {
            h = (0..spec.output_dim)
                .map(|o| {
                    let z: f64 = b[o] + (0..spec.input_dim).map(|i| w[o * spec.input_dim + i] * h[i]).sum::<f64>();
                    act(spec.activation, z)
                })
                .collect();
        }
        for (j, &p) in h.iter().enumerate() {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            let t = y[[r, j]];
            total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
    }
    total / (x.nrows() * y.ncols()) as f64
}

fn flatten(p: &MlpParams<f64>) -> Vec<(LayerSpec, Vec<f64>, Vec<f64>)> {
    p.layers()
        .iter()
        .map(|l| (l.spec, l.weights.iter().copied().collect(), l.biases.to_vec()))
        .collect()
}

fn random_net(rng: &mut impl Rng, seed: u64) -> MlpParams<f64> {
    let depth = rng.random_range(1..=4);
    let mut widths = vec![rng.random_range(2..=7)];
    for _ in 0..depth - 1 {
        widths.push(rng.random_range(2..=6));
    }
    widths.push(rng.random_range(1..=3));
    let hidden = [Activation::Relu, Activation::Sigmoid, Activation::Linear];
    let specs: Vec<LayerSpec> = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let a = if i == depth - 1 { Activation::Sigmoid } else { hidden[rng.random_range(0..3)] };
            LayerSpec::new(w[0], w[1], a)
        })
        .collect();
    let mut p = init_params(&specs, seed).unwrap();
    // nonzero biases so every parameter's gradient is exercised away from symmetric points
    for l in p.layers_mut() {
        l.biases.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    p
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let started = std::time::Instant::now();
    let mut rng = cbfl::seed::rng(2024);
    let mut seen = std::collections::HashSet::new();
    let nets = 24;
    for n in 0..nets {
        let params = random_net(&mut rng, n);
        for l in params.layers().iter().take(params.depth() - 1) {
            seen.insert(l.spec.activation);
        }
        seen.insert(Activation::Sigmoid);
        let rows = rng.random_range(1..=6);
        let x = Array2::from_shape_fn((rows, params.input_dim()), |_| rng.random_range(-1.5..1.5));
        let y = Array2::from_shape_fn((rows, params.output_dim()), |_| f64::from(rng.random_bool(0.5)));

        let (grads, loss) = backward(&params, &x, &y).unwrap();
        let base = flatten(&params);
        assert!((naive_loss(&base, &x, &y) - loss).abs() < 1e-12);

        let h = 1e-5;
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for (li, g) in grads.layers().iter().enumerate() {
            let nw = base[li].1.len();
            for idx in 0..nw + base[li].2.len() {
                let bump = |delta: f64| {
                    let mut p = base.clone();
                    if idx < nw {
                        p[li].1[idx] += delta;
                    } else {
                        p[li].2[idx - nw] += delta;
                    }
                    naive_loss(&p, &x, &y)
                };
                let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                let analytic = if idx < nw {
                    g.weights.as_slice().unwrap()[idx]
                } else {
                    g.biases[idx - nw]
                };
                diff2 += (analytic - numeric).powi(2);
                norm2 += analytic.powi(2) + numeric.powi(2);
            }
        }
        let rel = diff2.sqrt() / norm2.sqrt().max(1e-12);
        assert!(rel < 1e-4, "net {n}: relative error {rel:e}");
    }
    assert_eq!(seen.len(), 3, "all activations covered");
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

use cbfl::autoencoder::{average_encoders, AutoencoderSpec, EncoderModel, ENCODING_DIM};
use cbfl::datagen::{generate_cohort, split_within_hospital, GeneratorConfig, Task};
use cbfl::federation::{
    initial_model, ledger_report, model_specs, predict, predict_routed, privacy_audit, run_cbfl, run_fedavg, streams,
    ClientState, Direction, EvalSet, FederationConfig, MessageKind, Phase,
};
use cbfl::nn::{aggregation_weights, init_params, train_local, weighted_average, Activation, LayerSpec, MlpParams, TrainConfig};
use cbfl::Mlp;
use proptest::prelude::*;

const D: usize = 80;

fn cohort(hospitals: usize, seed: u64) -> (Vec<ClientState<f64>>, EvalSet<f64>) {
    let ds = generate_cohort(&GeneratorConfig {
        n_hospitals: hospitals,
        patients_per_hospital: 60,
        n_latent_groups: 2,
        n_features: D,
        mortality_rate: 0.3,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let (train, test) = split_within_hospital(&ds, 40, 20, seed).unwrap();
    (
        ClientState::from_cohort(&train, Task::Mortality).unwrap(),
        EvalSet::from_cohort(&test, Task::Mortality).unwrap(),
    )
}

fn quick(k: usize, rounds: usize) -> FederationConfig {
    FederationConfig {
        e1: 1,
        k,
        batch_size: 16,
        max_rounds: rounds,
        patience: rounds,
        min_delta: 0.0,
        seed: 11,
        ..FederationConfig::default()
    }
}

fn bits(p: &Mlp) -> Vec<u64> {
    p.values().map(f64::to_bits).collect()
}

#[test]
fn single_client_fedavg_is_local_training() {
    let (clients, eval) = cohort(3, 4);
    let one = vec![clients[1].clone()];
    let specs = model_specs(D);
    let cfg = quick(1, 1);
    let run = run_fedavg(&one, &specs, &eval, &cfg).unwrap();
    let w0: Mlp = initial_model(&specs, &cfg).unwrap();
    let local = train_local(
        &w0,
        one[0].training_set(),
        &TrainConfig {
            epochs: cfg.e2,
            batch_size: cfg.batch_size,
            seed: streams::local_train(cfg.seed, 1, one[0].client_id, 0),
            adam: cfg.adam,
        },
    )
    .unwrap();
    assert_eq!(bits(&run.last), bits(&local.params));
}

#[test]
fn one_community_retraces_fedavg_round_by_round() {
    let (clients, eval) = cohort(4, 5);
    let specs = model_specs(D);
    for rounds in 1..=4 {
        let fed = run_fedavg(&clients, &specs, &eval, &quick(1, rounds)).unwrap();
        let cb = run_cbfl(&clients, &specs, &eval, &quick(1, rounds)).unwrap();
        assert_eq!(bits(&cb.last_models[0]), bits(&fed.last), "round {rounds}");
        assert_eq!(bits(&cb.bundle.community_models[0]), bits(&fed.params));
        assert_eq!(cb.history, fed.history);
        assert_eq!(cb.best_round, fed.best_round);
    }
}

#[test]
fn parallel_clients_match_sequential() {
    let (clients, eval) = cohort(4, 6);
    let specs = model_specs(D);
    let seq = run_cbfl(&clients, &specs, &eval, &quick(2, 3)).unwrap();
    let par = run_cbfl(&clients, &specs, &eval, &FederationConfig { parallel: true, ..quick(2, 3) }).unwrap();
    assert_eq!(seq.history, par.history);
    for (a, b) in seq.last_models.iter().zip(&par.last_models) {
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(bits(&seq.bundle.encoder.params), bits(&par.bundle.encoder.params));
    let fa = run_fedavg(&clients, &specs, &eval, &quick(1, 3)).unwrap();
    let fb = run_fedavg(&clients, &specs, &eval, &FederationConfig { parallel: true, ..quick(1, 3) }).unwrap();
    assert_eq!(bits(&fa.last), bits(&fb.last));
}

#[test]
fn community_rounds_move_k_times_fedavg_parameters() {
    let (clients, eval) = cohort(4, 7);
    let specs = model_specs(D);
    let fed = ledger_report(&run_fedavg(&clients, &specs, &eval, &quick(1, 3)).unwrap().logs);
    for k in [1, 2, 3] {
        let run = run_cbfl(&clients, &specs, &eval, &quick(k, 3)).unwrap();
        let report = ledger_report(&run.logs);
        assert_eq!(report.per_round_model_params.len(), fed.per_round_model_params.len());
        for (c, f) in report.per_round_model_params.iter().zip(&fed.per_round_model_params) {
            assert_eq!(*c, k as u64 * f);
        }
        assert_eq!(report.round_traffic_ratio(&fed), Some(k as f64));
        let audit = privacy_audit(
            &run.logs,
            &AutoencoderSpec::new(D, 0.2).unwrap().encoder_specs(),
            &specs,
            ENCODING_DIM,
            k,
        );
        assert!(audit.passed(), "{:?}", audit.violations);
        let spec = AutoencoderSpec::new(D, 0.2).unwrap();
        let encoder_params: u64 = spec.encoder_specs().iter().map(|s| s.parameter_count() as u64).sum();
        let autoencoder_params: u64 = spec.layer_specs().iter().map(|s| s.parameter_count() as u64).sum();
        for m in run.logs.iter().flat_map(|l| &l.messages).filter(|m| m.direction() == Direction::Up) {
            assert!(
                matches!(
                    m.kind,
                    MessageKind::EncoderWeights | MessageKind::MeanEncoding | MessageKind::ModelUpdate | MessageKind::CommunityCounts
                ),
                "{m:?}"
            );
            if m.kind == MessageKind::EncoderWeights {
                assert_eq!(m.values, encoder_params);
                assert!(m.values < autoencoder_params);
            }
        }
        assert_eq!(run.logs[0].phase, Phase::Encoder);
        assert_eq!(run.logs[1].phase, Phase::Clustering);
    }
}

#[test]
fn routed_batch_matches_single_rows() {
    let (clients, eval) = cohort(4, 8);
    let run = run_cbfl(&clients, &model_specs(D), &eval, &quick(2, 2)).unwrap();
    let batch = predict(&run.bundle, &eval.features).unwrap();
    let routed = predict_routed(&run.bundle, &eval.features).unwrap();
    assert_eq!(batch, routed.scores);
    for r in (0..eval.len()).step_by(7) {
        let row = eval.features.select_rows(&[r]);
        let one = predict_routed(&run.bundle, &row).unwrap();
        assert_eq!(one.scores[0].to_bits(), batch[r].to_bits());
        assert_eq!(one.communities[0], routed.communities[r]);
    }
}

fn scalar_net(v: f64) -> MlpParams<f64> {
    let mut p = MlpParams::zeros(&[LayerSpec::new(1, 1, Activation::Linear)]).unwrap();
    p.layers_mut()[0].weights.fill(v);
    p.layers_mut()[0].biases.fill(v);
    p
}

#[test]
fn count_weighted_average_hand_value() {
    let a = scalar_net(2.0);
    let b = scalar_net(4.0);
    let avg = weighted_average(&[(&a, 1.0), (&b, 3.0)]).unwrap();
    assert!((avg.layers()[0].weights[[0, 0]] - 3.5).abs() < 1e-12);
    assert!((avg.layers()[0].biases[0] - 3.5).abs() < 1e-12);
    let skipped = weighted_average(&[(&a, 0.0), (&b, 3.0)]).unwrap();
    assert_eq!(skipped.layers()[0].weights[[0, 0]], 4.0);
}

#[test]
fn averaging_equal_encoders_is_identity() {
    let spec = AutoencoderSpec::new(D, 0.2).unwrap();
    let enc = EncoderModel::from_params(init_params::<f64>(&spec.encoder_specs(), 3).unwrap()).unwrap();
    let avg = average_encoders(&[(enc.clone(), 5), (enc.clone(), 17), (enc.clone(), 1)]).unwrap();
    assert_eq!(bits(&avg.params), bits(&enc.params));
}

proptest! {
    #[test]
    fn fractions_sum_to_one(counts in prop::collection::vec(1u32..10_000, 1..60)) {
        let c: Vec<f64> = counts.iter().map(|&v| v as f64).collect();
        let f = aggregation_weights(&c);
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(f.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn average_lies_between_inputs(x in -5.0f64..5.0, y in -5.0f64..5.0, m in 1u32..100, n in 1u32..100) {
        let avg = weighted_average(&[(&scalar_net(x), m as f64), (&scalar_net(y), n as f64)]).unwrap();
        let v = avg.layers()[0].weights[[0, 0]];
        let expected = (m as f64 * x + n as f64 * y) / (m + n) as f64;
        prop_assert!((v - expected).abs() < 1e-12);
    }
}

#[test]
fn dense_features_do_not_change_training() {
    let (clients, _) = cohort(2, 9);
    let set = clients[0].training_set();
    let dense = cbfl::nn::TrainingSet::new(
        cbfl::nn::Features::dense(set.inputs.to_dense()),
        cbfl::nn::Features::dense(set.targets.to_dense()),
    )
    .unwrap();
    let w0: Mlp = init_params(&model_specs(D), 1).unwrap();
    let cfg = TrainConfig::new(2, 8, 5);
    let a = train_local(&w0, set, &cfg).unwrap().params;
    let b = train_local(&w0, &dense, &cfg).unwrap().params;
    let diff = a.max_abs_diff(&b).unwrap();
    assert!(diff < 1e-12, "{diff}");
}

//! Simulated federation: FedAvg, community-based federated learning and a
//! pooled centralized baseline, with convergence detection and a ledger of
//! every message exchanged.
//!
//! Clients are processed in ascending `client_id` order and every local
//! computation draws from its own seed stream, so results do not depend on
//! whether clients run in parallel.

mod convergence;
mod ledger;

pub use convergence::{best_round, check_convergence, ConvergenceRule};
pub use ledger::{
    ledger_report, privacy_audit, vector_bytes, Direction, LedgerReport, Message, MessageKind, ModelMetric, Phase,
    PrivacyAudit, RoundLog, Totals,
};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{self, AutoencoderSpec, AutoencoderTraining, EncoderModel, Provenance};
use crate::clustering::{self, KMeansModel};
use crate::datagen::{CohortDataset, Region, Task};
use crate::metrics;
use crate::nn::{self, Activation, AdamConfig, Features, LayerSpec, MlpParams, TrainConfig, Trainer, TrainingSet};
use crate::{Error, Result, Scalar};

/// Hidden widths of the community and FedAvg models.
pub const MODEL_HIDDEN_UNITS: [usize; 3] = [20, 10, 5];

/// `input_dim → 20 → 10 → 5 → 1`, ReLU hidden layers and a sigmoid output.
pub fn model_specs(input_dim: usize) -> Vec<LayerSpec> {
    let mut widths = vec![input_dim];
    widths.extend(MODEL_HIDDEN_UNITS);
    widths.push(1);
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == MODEL_HIDDEN_UNITS.len() { Activation::Sigmoid } else { Activation::Relu };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

/// Seed streams derived from the run seed.
pub mod streams {
    use crate::seed::derive;

    /// Initial weights shared by FedAvg, every community model and the centralized model.
    pub fn initial_model(base: u64) -> u64 {
        derive(base, &[1])
    }

    pub fn initial_autoencoder(base: u64) -> u64 {
        derive(base, &[2])
    }

    pub fn autoencoder_local(base: u64, client_id: u64) -> u64 {
        derive(base, &[3, client_id])
    }

    pub fn kmeans(base: u64) -> u64 {
        derive(base, &[4])
    }

    /// FedAvg uses model 0.
    pub fn local_train(base: u64, round: usize, client_id: u64, model: usize) -> u64 {
        derive(base, &[5, round as u64, client_id, model as u64])
    }

    pub fn centralized(base: u64) -> u64 {
        derive(base, &[6])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainOn {
    /// Every community model sees all of the client's examples.
    FullClientData,
    /// Model `k` sees only the client's examples assigned to community `k`.
    CommunitySubset,
}

#[derive(Debug, Clone)]
pub struct ClientState<T> {
    pub client_id: u64,
    pub region: Option<Region>,
    data: TrainingSet<T>,
    labels: Vec<u8>,
}

impl<T: Scalar> ClientState<T> {
    pub fn new(client_id: u64, features: Features<T>, labels: Vec<u8>, region: Option<Region>) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(Error::dim("client labels", features.nrows(), labels.len()));
        }
        if labels.is_empty() {
            return Err(Error::Empty(format!("client {client_id} has no examples")));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Config(format!("client {client_id}: labels must be 0 or 1")));
        }
        let targets = label_column(&labels);
        Ok(ClientState {
            client_id,
            region,
            data: TrainingSet::new(features, targets)?,
            labels,
        })
    }

    /// One client per hospital, ordered by hospital id.
    pub fn from_cohort(dataset: &CohortDataset, task: Task) -> Result<Vec<Self>> {
        dataset
            .by_hospital()
            .into_iter()
            .filter(|(_, idx)| !idx.is_empty())
            .map(|(h, idx)| {
                let labels = idx.iter().map(|&i| dataset.patients[i].label(task)).collect();
                ClientState::new(h as u64, dataset.features_of(&idx), labels, dataset.regions.get(&h).copied())
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Features<T> {
        &self.data.inputs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn training_set(&self) -> &TrainingSet<T> {
        &self.data
    }

    fn subset(&self, rows: &[usize]) -> Result<TrainingSet<T>> {
        TrainingSet::new(self.data.inputs.select_rows(rows), self.data.targets.select_rows(rows))
    }
}

fn label_column<T: Scalar>(labels: &[u8]) -> Features<T> {
    Features::dense(Array2::from_shape_fn((labels.len(), 1), |(i, _)| T::lit(labels[i] as f64)))
}

/// Held-out examples driving convergence and final metrics.
#[derive(Debug, Clone)]
pub struct EvalSet<T> {
    pub features: Features<T>,
    pub labels: Vec<u8>,
}

impl<T: Scalar> EvalSet<T> {
    pub fn new(features: Features<T>, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(Error::dim("evaluation labels", features.nrows(), labels.len()));
        }
        let pos = labels.iter().filter(|&&y| y == 1).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::Metric("evaluation set needs both classes".into()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Config("evaluation labels must be 0 or 1".into()));
        }
        Ok(EvalSet { features, labels })
    }

    pub fn from_cohort(dataset: &CohortDataset, task: Task) -> Result<Self> {
        EvalSet::new(dataset.features(), dataset.labels(task))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    /// Local autoencoder epochs.
    pub e1: usize,
    /// Local epochs per training round.
    pub e2: usize,
    /// Number of communities.
    pub k: usize,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub train_on: TrainOn,
    pub corruption_rate: f64,
    /// Fan client work out to the rayon pool.
    pub parallel: bool,
    pub adam: AdamConfig,
    /// Positive rate whose log-odds seeds the output bias of `w0`; `None` keeps it at zero.
    pub output_prior: Option<f64>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            e1: 5,
            e2: 1,
            k: 5,
            batch_size: 64,
            max_rounds: 200,
            patience: 10,
            min_delta: 1e-4,
            seed: 0,
            train_on: TrainOn::FullClientData,
            corruption_rate: autoencoder::DEFAULT_CORRUPTION_RATE,
            parallel: true,
            adam: AdamConfig::default(),
            output_prior: Some(0.05),
        }
    }
}

impl FederationConfig {
    pub fn rule(&self) -> ConvergenceRule {
        ConvergenceRule {
            max_rounds: self.max_rounds,
            patience: self.patience,
            min_delta: self.min_delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.e1 == 0 || self.e2 == 0 || self.k == 0 || self.batch_size == 0 {
            return Err(Error::Config("e1, e2, k and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.corruption_rate) {
            return Err(Error::Config(format!("corruption_rate = {} must lie in [0, 1)", self.corruption_rate)));
        }
        if let Some(p) = self.output_prior {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("output_prior = {p} must lie in (0, 1)")));
            }
        }
        self.rule().validate()
    }

    fn local(&self, round: usize, client_id: u64, model: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.e2,
            batch_size: self.batch_size,
            seed: streams::local_train(self.seed, round, client_id, model),
            adam: self.adam,
        }
    }
}

/// `w0`: Glorot weights from the initial-model stream, output bias at the prior's log-odds.
pub fn initial_model<T: Scalar>(model_spec: &[LayerSpec], config: &FederationConfig) -> Result<MlpParams<T>> {
    let mut w = nn::init_params(model_spec, streams::initial_model(config.seed))?;
    if let Some(p) = config.output_prior {
        let last = w.depth() - 1;
        w.layers_mut()[last].biases.fill(T::lit((p / (1.0 - p)).ln()));
    }
    Ok(w)
}

/// Clients sorted by id, checked for duplicates and a common feature width.
fn ordered<T: Scalar>(clients: &[ClientState<T>]) -> Result<Vec<&ClientState<T>>> {
    if clients.is_empty() {
        return Err(Error::Empty("no clients".into()));
    }
    let mut out: Vec<&ClientState<T>> = clients.iter().collect();
    out.sort_by_key(|c| c.client_id);
    for w in out.windows(2) {
        if w[0].client_id == w[1].client_id {
            return Err(Error::Config(format!("duplicate client id {}", w[0].client_id)));
        }
    }
    let d = out[0].features().ncols();
    for c in &out {
        if c.features().ncols() != d {
            return Err(Error::dim("client feature width", d, c.features().ncols()));
        }
    }
    Ok(out)
}

/// Runs `f` on every client, in parallel when asked; results come back in client order.
fn map_clients<T, R, F>(clients: &[&ClientState<T>], parallel: bool, f: F) -> Result<Vec<R>>
where
    T: Scalar,
    R: Send,
    F: Fn(usize, &ClientState<T>) -> Result<R> + Sync + Send,
{
    if parallel {
        clients.par_iter().enumerate().map(|(i, c)| f(i, c)).collect()
    } else {
        clients.iter().enumerate().map(|(i, c)| f(i, c)).collect()
    }
}

fn check_model<T: Scalar>(specs: &[LayerSpec], d: usize, eval: &EvalSet<T>) -> Result<()> {
    nn::validate_chain(specs)?;
    if specs[0].input_dim != d {
        return Err(Error::dim("model input", d, specs[0].input_dim));
    }
    if specs[specs.len() - 1].output_dim != 1 {
        return Err(Error::dim("model output", 1, specs[specs.len() - 1].output_dim));
    }
    if eval.features.ncols() != d {
        return Err(Error::dim("evaluation features", d, eval.features.ncols()));
    }
    Ok(())
}

fn scores_of<T: Scalar>(params: &MlpParams<T>, features: &Features<T>, rows: &[usize]) -> Result<Vec<T>> {
    Ok(nn::predict_rows(params, features, rows)?.column(0).to_vec())
}

#[derive(Debug, Clone)]
pub struct FedAvgRun<T> {
    /// Weights from the best round.
    pub params: MlpParams<T>,
    /// Weights after the last round run.
    pub last: MlpParams<T>,
    pub logs: Vec<RoundLog>,
    /// Evaluation ROC AUC after each round.
    pub history: Vec<f64>,
    pub best_round: usize,
    pub rounds_run: usize,
}

/// Federated averaging with weights `n_c / N`.
pub fn run_fedavg<T: Scalar>(
    clients: &[ClientState<T>],
    model_spec: &[LayerSpec],
    eval: &EvalSet<T>,
    config: &FederationConfig,
) -> Result<FedAvgRun<T>> {
    config.validate()?;
    let clients = ordered(clients)?;
    check_model(model_spec, clients[0].features().ncols(), eval)?;
    let rule = config.rule();
    let all_rows: Vec<usize> = (0..eval.len()).collect();

    let mut w: MlpParams<T> = initial_model(model_spec, config)?;
    let mut best = w.clone();
    let mut history = Vec::new();
    let mut logs = Vec::new();
    for round in 1..=rule.max_rounds {
        let updates = map_clients(&clients, config.parallel, |_, c| {
            nn::train_local(&w, c.training_set(), &config.local(round, c.client_id, 0)).map(|o| o.params)
        })?;
        let entries: Vec<(&MlpParams<T>, f64)> =
            updates.iter().zip(&clients).map(|(u, c)| (u, c.len() as f64)).collect();
        w = nn::weighted_average(&entries)?;

        let mut log = RoundLog::new(round, Phase::FedAvg);
        for c in &clients {
            log.messages.push(Message::weights(c.client_id, MessageKind::ModelBroadcast, Some(0), model_spec));
            log.messages.push(Message::weights(c.client_id, MessageKind::ModelUpdate, Some(0), model_spec));
        }
        let auc = metrics::roc_auc(&scores_of(&w, &eval.features, &all_rows)?, &eval.labels)?;
        log.metric = Some(auc);
        log.model_metrics.push(ModelMetric {
            model_id: 0,
            examples: eval.len(),
            roc_auc: Some(auc),
        });
        logs.push(log);
        history.push(auc);
        if best_round(&history, rule.min_delta) == Some(history.len()) {
            best = w.clone();
        }
        log::debug!("fedavg round {round}: roc auc {auc:.4}");
        if check_convergence(&history, &rule) {
            break;
        }
    }
    Ok(FedAvgRun {
        params: best,
        last: w,
        best_round: best_round(&history, rule.min_delta).expect("at least one round"),
        rounds_run: history.len(),
        logs,
        history,
    })
}

#[derive(Debug, Clone)]
pub struct CentralizedRun<T> {
    pub params: MlpParams<T>,
    /// Evaluation ROC AUC after each epoch.
    pub history: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Pools every client's data (in client-id order) and trains one model,
/// evaluating after each epoch under the same stopping rule.
pub fn run_centralized<T: Scalar>(
    clients: &[ClientState<T>],
    model_spec: &[LayerSpec],
    eval: &EvalSet<T>,
    config: &FederationConfig,
) -> Result<CentralizedRun<T>> {
    config.validate()?;
    let clients = ordered(clients)?;
    check_model(model_spec, clients[0].features().ncols(), eval)?;
    let rule = config.rule();
    let inputs: Vec<&Features<T>> = clients.iter().map(|c| c.features()).collect();
    let inputs = Features::concat(&inputs)?;
    let labels: Vec<u8> = clients.iter().flat_map(|c| c.labels().iter().copied()).collect();
    let targets = label_column(&labels);
    let all_rows: Vec<usize> = (0..eval.len()).collect();

    let w0 = initial_model(model_spec, config)?;
    let mut trainer = Trainer::new(w0, config.batch_size, config.adam, streams::centralized(config.seed));
    let mut best = trainer.params().clone();
    let mut history = Vec::new();
    for epoch in 1..=rule.max_rounds {
        trainer.run_epoch(&inputs, &targets)?;
        let auc = metrics::roc_auc(&scores_of(trainer.params(), &eval.features, &all_rows)?, &eval.labels)?;
        history.push(auc);
        if best_round(&history, rule.min_delta) == Some(history.len()) {
            best = trainer.params().clone();
        }
        log::debug!("centralized epoch {epoch}: roc auc {auc:.4}");
        if check_convergence(&history, &rule) {
            break;
        }
    }
    Ok(CentralizedRun {
        params: best,
        best_epoch: best_round(&history, rule.min_delta).expect("at least one epoch"),
        epochs_run: history.len(),
        history,
    })
}

/// Encoder, k-means model and one model per community.
#[derive(Debug, Clone, PartialEq)]
pub struct CbflBundle<T> {
    pub encoder: EncoderModel<T>,
    pub kmeans: KMeansModel<T>,
    pub community_models: Vec<MlpParams<T>>,
}

impl<T: Scalar> CbflBundle<T> {
    pub fn new(encoder: EncoderModel<T>, kmeans: KMeansModel<T>, community_models: Vec<MlpParams<T>>) -> Result<Self> {
        if community_models.len() != kmeans.k() {
            return Err(Error::dim("community models", kmeans.k(), community_models.len()));
        }
        if kmeans.dim() != encoder.params.output_dim() {
            return Err(Error::dim("centroid width", encoder.params.output_dim(), kmeans.dim()));
        }
        for m in &community_models {
            if !m.same_shape(&community_models[0]) {
                return Err(Error::Shape("community models differ in shape".into()));
            }
        }
        if community_models[0].input_dim() != encoder.input_dim() {
            return Err(Error::dim("community model input", encoder.input_dim(), community_models[0].input_dim()));
        }
        Ok(CbflBundle {
            encoder,
            kmeans,
            community_models,
        })
    }

    pub fn k(&self) -> usize {
        self.community_models.len()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }
}

/// Community of each row and the score of that community's model.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedPredictions<T> {
    pub communities: Vec<usize>,
    pub scores: Vec<T>,
}

/// Encode, assign to the nearest centroid, score with that community's model.
pub fn predict_routed<T: Scalar>(bundle: &CbflBundle<T>, features: &Features<T>) -> Result<RoutedPredictions<T>> {
    if features.ncols() != bundle.input_dim() {
        return Err(Error::dim("prediction features", bundle.input_dim(), features.ncols()));
    }
    let encodings = autoencoder::encode_features(&bundle.encoder, features)?;
    let communities = clustering::assign_rows(&bundle.kmeans, &encodings)?;
    let scores = score_by_community(&bundle.community_models, features, &communities)?;
    Ok(RoutedPredictions { communities, scores })
}

pub fn predict<T: Scalar>(bundle: &CbflBundle<T>, features: &Features<T>) -> Result<Vec<T>> {
    predict_routed(bundle, features).map(|r| r.scores)
}

fn rows_by_community(communities: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); k];
    for (i, &c) in communities.iter().enumerate() {
        rows[c].push(i);
    }
    rows
}

fn score_by_community<T: Scalar>(
    models: &[MlpParams<T>],
    features: &Features<T>,
    communities: &[usize],
) -> Result<Vec<T>> {
    let mut scores = vec![T::zero(); communities.len()];
    for (k, rows) in rows_by_community(communities, models.len()).iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        for (&r, s) in rows.iter().zip(scores_of(&models[k], features, rows)?) {
            scores[r] = s;
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityEval {
    pub community: usize,
    pub examples: usize,
    pub positives: usize,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub per_community: Vec<CommunityEval>,
}

fn community_evals<T: Scalar>(scores: &[T], labels: &[u8], communities: &[usize], k: usize) -> Vec<CommunityEval> {
    rows_by_community(communities, k)
        .into_iter()
        .enumerate()
        .map(|(c, rows)| {
            let s: Vec<T> = rows.iter().map(|&r| scores[r]).collect();
            let y: Vec<u8> = rows.iter().map(|&r| labels[r]).collect();
            CommunityEval {
                community: c,
                examples: rows.len(),
                positives: y.iter().filter(|&&v| v == 1).count(),
                roc_auc: metrics::roc_auc(&s, &y).ok(),
                pr_auc: metrics::pr_auc(&s, &y).ok(),
            }
        })
        .collect()
}

pub fn evaluate_model<T: Scalar>(params: &MlpParams<T>, eval: &EvalSet<T>) -> Result<EvalReport> {
    let rows: Vec<usize> = (0..eval.len()).collect();
    let scores = scores_of(params, &eval.features, &rows)?;
    Ok(EvalReport {
        roc_auc: metrics::roc_auc(&scores, &eval.labels)?,
        pr_auc: metrics::pr_auc(&scores, &eval.labels)?,
        per_community: community_evals(&scores, &eval.labels, &vec![0; eval.len()], 1),
    })
}

pub fn evaluate_bundle<T: Scalar>(bundle: &CbflBundle<T>, eval: &EvalSet<T>) -> Result<EvalReport> {
    let routed = predict_routed(bundle, &eval.features)?;
    Ok(EvalReport {
        roc_auc: metrics::roc_auc(&routed.scores, &eval.labels)?,
        pr_auc: metrics::pr_auc(&routed.scores, &eval.labels)?,
        per_community: community_evals(&routed.scores, &eval.labels, &routed.communities, bundle.k()),
    })
}

#[derive(Debug, Clone)]
pub struct EncoderStage<T> {
    pub encoder: EncoderModel<T>,
    /// Per-client autoencoder training losses, one per epoch.
    pub client_losses: Vec<Vec<T>>,
    pub log: RoundLog,
}

/// One federated round of denoising-autoencoder training; returns the
/// size-weighted average of the clients' encoders.
pub fn train_encoder_federated<T: Scalar>(
    clients: &[ClientState<T>],
    config: &FederationConfig,
) -> Result<EncoderStage<T>> {
    config.validate()?;
    let clients = ordered(clients)?;
    let spec = AutoencoderSpec::new(clients[0].features().ncols(), config.corruption_rate)?;
    let ae_specs = spec.layer_specs();
    let enc_specs = spec.encoder_specs();
    let ae0: MlpParams<T> = nn::init_params(&ae_specs, streams::initial_autoencoder(config.seed))?;
    let trained = map_clients(&clients, config.parallel, |_, c| {
        let cfg = AutoencoderTraining {
            epochs: config.e1,
            batch_size: config.batch_size,
            corruption_rate: config.corruption_rate,
            seed: streams::autoencoder_local(config.seed, c.client_id),
            adam: config.adam,
        };
        let out = autoencoder::train_autoencoder_local(&ae0, c.features(), &cfg)?;
        Ok((autoencoder::extract_encoder(&out.params)?, out.epoch_losses))
    })?;
    let mut client_losses = Vec::with_capacity(clients.len());
    let mut entries = Vec::with_capacity(clients.len());
    for ((enc, losses), c) in trained.into_iter().zip(&clients) {
        client_losses.push(losses);
        entries.push((enc, c.len()));
    }
    let mut encoder = autoencoder::average_encoders(&entries)?;
    encoder.provenance = Provenance {
        seed: config.seed,
        ..encoder.provenance
    };

    let mut log = RoundLog::new(0, Phase::Encoder);
    for c in &clients {
        log.messages.push(Message::weights(c.client_id, MessageKind::AutoencoderInit, None, &ae_specs));
        log.messages.push(Message::weights(c.client_id, MessageKind::EncoderWeights, None, &enc_specs));
        log.messages.push(Message::weights(c.client_id, MessageKind::EncoderBroadcast, None, &enc_specs));
    }
    Ok(EncoderStage {
        encoder,
        client_losses,
        log,
    })
}

#[derive(Debug, Clone)]
pub struct ClusterStage<T> {
    pub kmeans: KMeansModel<T>,
    pub inertia_history: Vec<T>,
    /// Client ids in row order of `mean_encodings`, `counts` and `assignments`.
    pub client_ids: Vec<u64>,
    /// `[C × 50]` mean encoding per client.
    pub mean_encodings: Array2<T>,
    /// `counts[c][k]` is `m_k^c`.
    pub counts: Vec<Vec<usize>>,
    /// Community of each of a client's examples.
    pub assignments: Vec<Vec<usize>>,
    pub log: RoundLog,
}

/// Fits k-means on the clients' mean encodings and assigns every example.
pub fn cluster_clients<T: Scalar>(
    clients: &[ClientState<T>],
    encoder: &EncoderModel<T>,
    k: usize,
    config: &FederationConfig,
) -> Result<ClusterStage<T>> {
    let clients = ordered(clients)?;
    if k == 0 || k > clients.len() {
        return Err(Error::Config(format!(
            "k = {k} must lie in 1..={} (clustering runs on client mean encodings)",
            clients.len()
        )));
    }
    let encodings = map_clients(&clients, config.parallel, |_, c| autoencoder::encode_features(encoder, c.features()))?;
    let dim = encoder.params.output_dim();
    let mut means = Array2::zeros((clients.len(), dim));
    for (mut row, enc) in means.outer_iter_mut().zip(&encodings) {
        row.assign(&enc.mean_axis(Axis(0)).expect("clients are nonempty"));
    }
    let fit = clustering::fit_kmeans_detailed(&means, k, streams::kmeans(config.seed))?;
    let mut counts = Vec::with_capacity(clients.len());
    let mut assignments = Vec::with_capacity(clients.len());
    for enc in &encodings {
        let a = clustering::assign_rows(&fit.model, enc)?;
        let mut m = vec![0usize; k];
        for &c in &a {
            m[c] += 1;
        }
        counts.push(m);
        assignments.push(a);
    }

    let mut log = RoundLog::new(0, Phase::Clustering);
    for c in &clients {
        log.messages.push(Message::vector(c.client_id, MessageKind::MeanEncoding, dim));
        log.messages.push(Message::vector(c.client_id, MessageKind::CentroidBroadcast, k * dim));
    }
    Ok(ClusterStage {
        kmeans: fit.model,
        inertia_history: fit.inertia_history,
        client_ids: clients.iter().map(|c| c.client_id).collect(),
        mean_encodings: means,
        counts,
        assignments,
        log,
    })
}

#[derive(Debug, Clone)]
pub struct CommunityStage<T> {
    /// Community models from the best round.
    pub models: Vec<MlpParams<T>>,
    /// Community models after the last round run.
    pub last: Vec<MlpParams<T>>,
    pub logs: Vec<RoundLog>,
    pub history: Vec<f64>,
    pub best_round: usize,
    pub rounds_run: usize,
}

/// Repeated community rounds: each client trains every model it has members
/// for and the server sets `w_k ← Σ_c m_k^c w_k^c / Σ_c m_k^c`.
///
/// A client with `m_k^c = 0` still receives and returns model `k` (and is
/// ledgered for it), but its update carries zero weight so it is not computed.
pub fn community_learning<T: Scalar>(
    clients: &[ClientState<T>],
    encoder: &EncoderModel<T>,
    cluster: &ClusterStage<T>,
    model_spec: &[LayerSpec],
    eval: &EvalSet<T>,
    config: &FederationConfig,
) -> Result<CommunityStage<T>> {
    config.validate()?;
    let clients = ordered(clients)?;
    check_model(model_spec, clients[0].features().ncols(), eval)?;
    let ids: Vec<u64> = clients.iter().map(|c| c.client_id).collect();
    if ids != cluster.client_ids {
        return Err(Error::Config("clustering was run on a different client set".into()));
    }
    let k = cluster.kmeans.k();
    let rule = config.rule();

    let subsets: Vec<Vec<Option<TrainingSet<T>>>> = match config.train_on {
        TrainOn::FullClientData => Vec::new(),
        TrainOn::CommunitySubset => clients
            .iter()
            .zip(&cluster.assignments)
            .map(|(c, a)| {
                rows_by_community(a, k)
                    .iter()
                    .map(|rows| if rows.is_empty() { Ok(None) } else { c.subset(rows).map(Some) })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?,
    };

    let eval_encodings = autoencoder::encode_features(encoder, &eval.features)?;
    let eval_communities = clustering::assign_rows(&cluster.kmeans, &eval_encodings)?;

    let w0: MlpParams<T> = initial_model(model_spec, config)?;
    let mut models = vec![w0; k];
    let mut best = models.clone();
    let mut history = Vec::new();
    let mut logs = Vec::new();
    for round in 1..=rule.max_rounds {
        let updates = map_clients(&clients, config.parallel, |ci, c| {
            (0..k)
                .map(|j| {
                    if cluster.counts[ci][j] == 0 {
                        return Ok(None);
                    }
                    let data = match config.train_on {
                        TrainOn::FullClientData => c.training_set(),
                        TrainOn::CommunitySubset => subsets[ci][j].as_ref().expect("nonzero count"),
                    };
                    nn::train_local(&models[j], data, &config.local(round, c.client_id, j)).map(|o| Some(o.params))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (j, model) in models.iter_mut().enumerate() {
            let entries: Vec<(&MlpParams<T>, f64)> = updates
                .iter()
                .zip(&cluster.counts)
                .filter_map(|(u, m)| u[j].as_ref().map(|p| (p, m[j] as f64)))
                .collect();
            if entries.is_empty() {
                log::warn!("community {j} has no members; weights carried over");
                continue;
            }
            *model = nn::weighted_average(&entries)?;
        }

        let mut log = RoundLog::new(round, Phase::Community);
        for c in &clients {
            for j in 0..k {
                log.messages.push(Message::weights(c.client_id, MessageKind::ModelBroadcast, Some(j), model_spec));
                log.messages.push(Message::weights(c.client_id, MessageKind::ModelUpdate, Some(j), model_spec));
            }
            log.messages.push(Message::vector(c.client_id, MessageKind::CommunityCounts, k));
        }
        let scores = score_by_community(&models, &eval.features, &eval_communities)?;
        let auc = metrics::roc_auc(&scores, &eval.labels)?;
        log.metric = Some(auc);
        log.model_metrics = community_evals(&scores, &eval.labels, &eval_communities, k)
            .into_iter()
            .map(|e| ModelMetric {
                model_id: e.community,
                examples: e.examples,
                roc_auc: e.roc_auc,
            })
            .collect();
        logs.push(log);
        history.push(auc);
        if best_round(&history, rule.min_delta) == Some(history.len()) {
            best = models.clone();
        }
        log::debug!("community round {round}: roc auc {auc:.4}");
        if check_convergence(&history, &rule) {
            break;
        }
    }
    Ok(CommunityStage {
        models: best,
        last: models,
        best_round: best_round(&history, rule.min_delta).expect("at least one round"),
        rounds_run: history.len(),
        logs,
        history,
    })
}

#[derive(Debug, Clone)]
pub struct CbflRun<T> {
    pub bundle: CbflBundle<T>,
    /// Encoder exchange, clustering exchange, then the community rounds.
    pub logs: Vec<RoundLog>,
    pub history: Vec<f64>,
    pub best_round: usize,
    pub rounds_run: usize,
    pub cluster: ClusterStage<T>,
    pub encoder_losses: Vec<Vec<T>>,
    /// Community models after the last round run.
    pub last_models: Vec<MlpParams<T>>,
}

/// Encoder training, community discovery and community learning end to end.
pub fn run_cbfl<T: Scalar>(
    clients: &[ClientState<T>],
    model_spec: &[LayerSpec],
    eval: &EvalSet<T>,
    config: &FederationConfig,
) -> Result<CbflRun<T>> {
    config.validate()?;
    let encoder_stage = train_encoder_federated(clients, config)?;
    run_cbfl_with_encoder(clients, encoder_stage, model_spec, eval, config)
}

/// [`run_cbfl`] from an already trained encoder stage (which depends on the
/// seed but not on `k`).
pub fn run_cbfl_with_encoder<T: Scalar>(
    clients: &[ClientState<T>],
    encoder_stage: EncoderStage<T>,
    model_spec: &[LayerSpec],
    eval: &EvalSet<T>,
    config: &FederationConfig,
) -> Result<CbflRun<T>> {
    config.validate()?;
    let EncoderStage {
        encoder,
        client_losses,
        log: encoder_log,
    } = encoder_stage;
    let cluster = cluster_clients(clients, &encoder, config.k, config)?;
    let stage = community_learning(clients, &encoder, &cluster, model_spec, eval, config)?;
    let mut logs = vec![encoder_log, cluster.log.clone()];
    logs.extend(stage.logs);
    let bundle = CbflBundle::new(encoder, cluster.kmeans.clone(), stage.models)?;
    Ok(CbflRun {
        bundle,
        logs,
        history: stage.history,
        best_round: stage.best_round,
        rounds_run: stage.rounds_run,
        cluster,
        encoder_losses: client_losses,
        last_models: stage.last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::ENCODING_DIM;
    use crate::datagen::{generate_cohort, split_within_hospital, GeneratorConfig};

    fn tiny() -> (Vec<ClientState<f64>>, EvalSet<f64>) {
        let ds = generate_cohort(&GeneratorConfig {
            n_hospitals: 4,
            patients_per_hospital: 60,
            n_latent_groups: 2,
            n_features: 80,
            mortality_rate: 0.3,
            seed: 2,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let (tr, te) = split_within_hospital(&ds, 40, 20, 0).unwrap();
        (
            ClientState::from_cohort(&tr, Task::Mortality).unwrap(),
            EvalSet::from_cohort(&te, Task::Mortality).unwrap(),
        )
    }

    fn quick() -> FederationConfig {
        FederationConfig {
            e1: 1,
            k: 2,
            batch_size: 16,
            max_rounds: 4,
            patience: 2,
            ..FederationConfig::default()
        }
    }

    #[test]
    fn model_layout() {
        let s = model_specs(1399);
        assert_eq!(s.iter().map(|l| l.parameter_count()).sum::<usize>(), 28_271);
        assert_eq!(s[3].activation, Activation::Sigmoid);
    }

    #[test]
    fn config_validation() {
        assert!(FederationConfig { k: 0, ..quick() }.validate().is_err());
        assert!(FederationConfig { patience: 0, ..quick() }.validate().is_err());
        assert!(FederationConfig { min_delta: -1.0, ..quick() }.validate().is_err());
    }

    #[test]
    fn empty_clients_error() {
        let (_, eval) = tiny();
        let none: Vec<ClientState<f64>> = Vec::new();
        assert!(run_fedavg(&none, &model_specs(80), &eval, &quick()).is_err());
        assert!(run_centralized(&none, &model_specs(80), &eval, &quick()).is_err());
    }

    #[test]
    fn cbfl_runs_and_ledgers() {
        let (clients, eval) = tiny();
        let run = run_cbfl(&clients, &model_specs(80), &eval, &quick()).unwrap();
        assert_eq!(run.bundle.k(), 2);
        assert_eq!(run.logs.len(), 2 + run.rounds_run);
        let audit = privacy_audit(
            &run.logs,
            &AutoencoderSpec::new(80, 0.2).unwrap().encoder_specs(),
            &model_specs(80),
            ENCODING_DIM,
            2,
        );
        assert!(audit.passed(), "{:?}", audit.violations);
        let p = predict(&run.bundle, &eval.features).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn k_above_client_count_is_rejected() {
        let (clients, eval) = tiny();
        let cfg = FederationConfig { k: 5, ..quick() };
        assert!(run_cbfl(&clients, &model_specs(80), &eval, &cfg).is_err());
    }
}

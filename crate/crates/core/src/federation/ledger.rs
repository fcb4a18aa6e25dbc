use std::fmt;

use serde::{Deserialize, Serialize};

use crate::nn::{serialized_len, LayerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    /// Server → client: initial autoencoder weights.
    AutoencoderInit,
    /// Client → server: locally trained encoder layers.
    EncoderWeights,
    /// Server → client: averaged encoder.
    EncoderBroadcast,
    /// Client → server: mean encoding of the client's examples.
    MeanEncoding,
    /// Server → client: k-means centroids.
    CentroidBroadcast,
    /// Server → client: current weights of one model.
    ModelBroadcast,
    /// Client → server: locally trained weights of one model.
    ModelUpdate,
    /// Client → server: community sizes `m^c`.
    CommunityCounts,
}

impl MessageKind {
    pub fn direction(self) -> Direction {
        match self {
            MessageKind::AutoencoderInit
            | MessageKind::EncoderBroadcast
            | MessageKind::CentroidBroadcast
            | MessageKind::ModelBroadcast => Direction::Down,
            _ => Direction::Up,
        }
    }

    pub fn is_model_weights(self) -> bool {
        matches!(self, MessageKind::ModelBroadcast | MessageKind::ModelUpdate)
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::AutoencoderInit => "autoencoder_init",
            MessageKind::EncoderWeights => "encoder_weights",
            MessageKind::EncoderBroadcast => "encoder_broadcast",
            MessageKind::MeanEncoding => "mean_encoding",
            MessageKind::CentroidBroadcast => "centroid_broadcast",
            MessageKind::ModelBroadcast => "model_broadcast",
            MessageKind::ModelUpdate => "model_update",
            MessageKind::CommunityCounts => "community_counts",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Encoder,
    Clustering,
    Community,
    FedAvg,
}

impl Phase {
    /// Phases whose rounds count as training rounds.
    pub fn is_training(self) -> bool {
        matches!(self, Phase::Community | Phase::FedAvg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub client_id: u64,
    pub kind: MessageKind,
    /// Model index for weight messages.
    pub model_id: Option<usize>,
    /// Number of scalars carried.
    pub values: u64,
    pub bytes: u64,
}

impl Message {
    pub fn direction(&self) -> Direction {
        self.kind.direction()
    }

    /// A message carrying network weights with the given layer layout.
    pub fn weights(client_id: u64, kind: MessageKind, model_id: Option<usize>, specs: &[LayerSpec]) -> Self {
        Message {
            client_id,
            kind,
            model_id,
            values: specs.iter().map(|s| s.parameter_count() as u64).sum(),
            bytes: serialized_len(specs) as u64,
        }
    }

    /// A vector payload: u32 LE length followed by f64 LE values.
    pub fn vector(client_id: u64, kind: MessageKind, len: usize) -> Self {
        Message {
            client_id,
            kind,
            model_id: None,
            values: len as u64,
            bytes: vector_bytes(len),
        }
    }
}

pub fn vector_bytes(len: usize) -> u64 {
    4 + 8 * len as u64
}

/// Per-model evaluation of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetric {
    pub model_id: usize,
    /// Evaluation examples routed to this model.
    pub examples: usize,
    /// `None` when the routed examples hold a single class.
    pub roc_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// 1-based for training rounds; setup exchanges use 0.
    pub round: usize,
    pub phase: Phase,
    /// ROC AUC over all evaluation examples, each scored by its own model.
    pub metric: Option<f64>,
    pub model_metrics: Vec<ModelMetric>,
    pub messages: Vec<Message>,
}

impl RoundLog {
    pub fn new(round: usize, phase: Phase) -> Self {
        RoundLog {
            round,
            phase,
            metric: None,
            model_metrics: Vec::new(),
            messages: Vec::new(),
        }
    }

    pub fn totals(&self) -> Totals {
        let mut t = Totals::default();
        t.add_round(self);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub rounds: u64,
    pub messages: u64,
    pub values_up: u64,
    pub values_down: u64,
    pub model_params_up: u64,
    pub model_params_down: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

impl Totals {
    fn add_round(&mut self, log: &RoundLog) {
        self.rounds += 1;
        for m in &log.messages {
            self.messages += 1;
            let model = if m.kind.is_model_weights() { m.values } else { 0 };
            match m.direction() {
                Direction::Up => {
                    self.values_up += m.values;
                    self.model_params_up += model;
                    self.bytes_up += m.bytes;
                }
                Direction::Down => {
                    self.values_down += m.values;
                    self.model_params_down += model;
                    self.bytes_down += m.bytes;
                }
            }
        }
    }

    pub fn model_params(&self) -> u64 {
        self.model_params_up + self.model_params_down
    }

    pub fn bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    /// Every exchange, setup phases included.
    pub inclusive: Totals,
    /// Training rounds only.
    pub exclusive: Totals,
    /// Model parameters moved (down + up) in each training round.
    pub per_round_model_params: Vec<u64>,
    pub per_round_bytes: Vec<u64>,
}

impl LedgerReport {
    /// Mean model parameters moved per training round, 0 without rounds.
    pub fn mean_round_model_params(&self) -> f64 {
        if self.per_round_model_params.is_empty() {
            0.0
        } else {
            self.per_round_model_params.iter().sum::<u64>() as f64 / self.per_round_model_params.len() as f64
        }
    }

    /// Per-round model parameter traffic of `self` relative to `baseline`.
    pub fn round_traffic_ratio(&self, baseline: &LedgerReport) -> Option<f64> {
        let b = baseline.mean_round_model_params();
        (b > 0.0).then(|| self.mean_round_model_params() / b)
    }
}

pub fn ledger_report(logs: &[RoundLog]) -> LedgerReport {
    let mut inclusive = Totals::default();
    let mut exclusive = Totals::default();
    let mut per_round_model_params = Vec::new();
    let mut per_round_bytes = Vec::new();
    for log in logs {
        inclusive.add_round(log);
        if log.phase.is_training() {
            exclusive.add_round(log);
            let t = log.totals();
            per_round_model_params.push(t.model_params());
            per_round_bytes.push(t.bytes());
        }
    }
    LedgerReport {
        inclusive,
        exclusive,
        per_round_model_params,
        per_round_bytes,
    }
}

/// Result of checking what left the clients.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PrivacyAudit {
    pub violations: Vec<String>,
}

impl PrivacyAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every upload: only encoder layers, mean encodings, model updates and
/// community counts may leave a client, with the expected sizes. Decoder
/// weights would show up as an oversized encoder upload.
pub fn privacy_audit(
    logs: &[RoundLog],
    encoder_specs: &[LayerSpec],
    model_specs: &[LayerSpec],
    encoding_dim: usize,
    communities: usize,
) -> PrivacyAudit {
    let encoder = Message::weights(0, MessageKind::EncoderWeights, None, encoder_specs);
    let model = Message::weights(0, MessageKind::ModelUpdate, None, model_specs);
    let mut audit = PrivacyAudit::default();
    for log in logs {
        for m in log.messages.iter().filter(|m| m.direction() == Direction::Up) {
            let expected = match m.kind {
                MessageKind::EncoderWeights => Some((encoder.values, encoder.bytes)),
                MessageKind::ModelUpdate => Some((model.values, model.bytes)),
                MessageKind::MeanEncoding => Some((encoding_dim as u64, vector_bytes(encoding_dim))),
                MessageKind::CommunityCounts => Some((communities as u64, vector_bytes(communities))),
                _ => None,
            };
            match expected {
                None => audit.violations.push(format!(
                    "round {} client {}: {} is not an allowed upload",
                    log.round, m.client_id, m.kind
                )),
                Some((v, b)) if (v, b) != (m.values, m.bytes) => audit.violations.push(format!(
                    "round {} client {}: {} carries {} values / {} bytes, expected {v} / {b}",
                    log.round, m.client_id, m.kind, m.values, m.bytes
                )),
                _ => {}
            }
        }
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn specs() -> Vec<LayerSpec> {
        vec![LayerSpec::new(3, 2, Activation::Relu), LayerSpec::new(2, 1, Activation::Sigmoid)]
    }

    #[test]
    fn empty_ledger_is_zero() {
        let r = ledger_report(&[]);
        assert_eq!(r.inclusive, Totals::default());
        assert_eq!(r.mean_round_model_params(), 0.0);
    }

    #[test]
    fn fedavg_round_moves_two_c_p() {
        let p = 3 * 2 + 2 + 2 + 1;
        let mut log = RoundLog::new(1, Phase::FedAvg);
        for c in 0..4 {
            log.messages.push(Message::weights(c, MessageKind::ModelBroadcast, Some(0), &specs()));
            log.messages.push(Message::weights(c, MessageKind::ModelUpdate, Some(0), &specs()));
        }
        let r = ledger_report(&[log]);
        assert_eq!(r.per_round_model_params, vec![2 * 4 * p]);
        assert_eq!(r.exclusive.bytes_up, 4 * (10 + 9 * 2 + 8 * p));
    }

    #[test]
    fn audit_flags_unexpected_uploads() {
        let mut log = RoundLog::new(0, Phase::Encoder);
        log.messages.push(Message::weights(0, MessageKind::EncoderWeights, None, &specs()));
        assert!(privacy_audit(&[log.clone()], &specs(), &specs(), 2, 1).passed());
        assert!(!privacy_audit(&[log.clone()], &specs()[..1], &specs(), 2, 1).passed());
        log.messages.push(Message::vector(0, MessageKind::MeanEncoding, 3));
        assert!(!privacy_audit(&[log], &specs(), &specs(), 2, 1).passed());
    }
}

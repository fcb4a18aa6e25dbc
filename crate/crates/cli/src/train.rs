use std::path::{Path, PathBuf};

use cbfl::clustering::assign_rows;
use cbfl::datagen::{generate_cohort, Region, load_cohort_csv, split_by_hospital, split_within_hospital, CohortDataset};
use cbfl::federation::{ledger_report, privacy_audit, Direction, LedgerReport, Phase, RoundLog};
use cbfl::federation::{
    evaluate_bundle, evaluate_model, model_specs, predict_routed, run_cbfl, run_centralized, run_fedavg, ClientState,
    CommunityEval, EvalReport, EvalSet,
};
use cbfl::autoencoder::{AutoencoderSpec, ENCODING_DIM};
use cbfl::{Bundle, FeatureMatrix};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{Arm, ExperimentConfig, Split};
use crate::error::CliResult;
use crate::output::{create_run_dir, save_weights, write_csv, write_csv_with_header, write_json, write_matrix};

pub const ROUNDS_HEADER: [&str; 10] = [
    "round",
    "arm",
    "model_id",
    "roc_auc",
    "model_roc_auc",
    "model_examples",
    "params_up",
    "params_down",
    "bytes_up",
    "bytes_down",
];

pub const TRAFFIC_HEADER: [&str; 9] = [
    "round",
    "phase",
    "messages",
    "values_up",
    "values_down",
    "model_params_up",
    "model_params_down",
    "bytes_up",
    "bytes_down",
];

/// One `(round, model)` row of `rounds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub arm: String,
    pub model_id: usize,
    /// Metric of the whole round (every test example scored by its own model).
    pub roc_auc: Option<f64>,
    pub model_roc_auc: Option<f64>,
    pub model_examples: usize,
    pub params_up: u64,
    pub params_down: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

/// One ledger round of `traffic.csv`, setup exchanges included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficRow {
    pub round: usize,
    pub phase: Phase,
    pub messages: u64,
    pub values_up: u64,
    pub values_down: u64,
    pub model_params_up: u64,
    pub model_params_down: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

/// The three numbers reported per experiment, plus the metric curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub roc_auc: f64,
    pub pr_auc: f64,
    /// Round (epoch, for the centralized arm) of the returned model.
    pub rounds: usize,
    pub rounds_run: usize,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerFile {
    #[serde(flatten)]
    pub report: LedgerReport,
    pub privacy_violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub patient_id: u64,
    pub hospital_id: u32,
    pub split: String,
    pub community: usize,
}

/// A training hospital with the community nearest to its mean encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospitalRow {
    pub hospital_id: u32,
    pub region: Region,
    pub community: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub patient_id: u64,
    pub hospital_id: u32,
    pub label: u8,
    pub community: usize,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub run_dir: PathBuf,
    pub metrics: FinalMetrics,
}

pub fn load_cohort(config: &ExperimentConfig) -> CliResult<CohortDataset> {
    match &config.cohort {
        Some(path) => Ok(load_cohort_csv(path)?),
        None => Ok(generate_cohort(&config.generator())?),
    }
}

pub fn split_cohort(config: &ExperimentConfig, cohort: &CohortDataset) -> CliResult<(CohortDataset, CohortDataset)> {
    Ok(match config.split {
        Split::WithinHospital => {
            split_within_hospital(cohort, config.train_per_hospital, config.test_per_hospital, config.seed)?
        }
        Split::ByHospital => split_by_hospital(cohort, config.train_hospitals, config.seed)?,
    })
}

pub fn run_name(config: &ExperimentConfig) -> String {
    let arm = match (config.arm, config.k) {
        (Arm::Cbfl, Some(k)) => format!("cbfl-k{k}"),
        (arm, _) => arm.name().to_string(),
    };
    let task = serde_json::to_value(config.task).expect("task serializes");
    let split = serde_json::to_value(config.split).expect("split serializes");
    format!(
        "{arm}-{}-{}-seed{}",
        task.as_str().unwrap_or("task"),
        split.as_str().unwrap_or("split"),
        config.seed
    )
}

pub fn cmd_train(config: &ExperimentConfig) -> CliResult<TrainOutput> {
    config.validate_for_training()?;
    let cohort = load_cohort(config)?;
    let (train, test) = split_cohort(config, &cohort)?;
    let clients = ClientState::<f64>::from_cohort(&train, config.task)?;
    let eval = EvalSet::<f64>::from_cohort(&test, config.task)?;
    let specs = model_specs(cohort.n_features);
    let fed = config.federation();

    let dir = create_run_dir(&config.out, &run_name(config))?;
    write_json(&dir.join("config.json"), config)?;
    info!("{} train / {} test examples, writing to {}", train.len(), test.len(), dir.display());

    let arm = config.arm.name();
    let metrics = match config.arm {
        Arm::Fl => {
            let run = run_fedavg(&clients, &specs, &eval, &fed)?;
            write_ledger(&dir, arm, &run.logs, &specs, 1)?;
            save_weights(&dir.join("model.cbflw"), &run.params)?;
            let report = evaluate_model(&run.params, &eval)?;
            write_test_predictions(&dir, &test, config, &eval, &|f| single_model_scores(&run.params, f))?;
            write_community_metrics(&dir, &report.per_community)?;
            final_metrics(&report, run.best_round, run.rounds_run, run.history)
        }
        Arm::Centralized => {
            let run = run_centralized(&clients, &specs, &eval, &fed)?;
            write_csv_with_header::<RoundRow>(&dir.join("rounds.csv"), &ROUNDS_HEADER, &[])?;
            write_csv_with_header::<TrafficRow>(&dir.join("traffic.csv"), &TRAFFIC_HEADER, &[])?;
            save_weights(&dir.join("model.cbflw"), &run.params)?;
            let report = evaluate_model(&run.params, &eval)?;
            write_test_predictions(&dir, &test, config, &eval, &|f| single_model_scores(&run.params, f))?;
            write_community_metrics(&dir, &report.per_community)?;
            final_metrics(&report, run.best_epoch, run.epochs_run, run.history)
        }
        Arm::Cbfl => {
            let run = run_cbfl(&clients, &specs, &eval, &fed)?;
            let k = fed.k;
            write_ledger(&dir, arm, &run.logs, &specs, k)?;
            save_bundle(&dir, &run.bundle)?;
            let ids: Vec<String> = run.cluster.client_ids.iter().map(u64::to_string).collect();
            write_matrix(&dir.join("mean_encodings.csv"), "client_id", "e", &ids, &run.cluster.mean_encodings)?;
            let counts = ndarray::Array2::from_shape_fn((ids.len(), k), |(c, j)| run.cluster.counts[c][j] as f64);
            write_matrix(&dir.join("client_counts.csv"), "client_id", "m", &ids, &counts)?;
            write_hospitals(&dir, &run.bundle, &cohort, &run.cluster.client_ids, &run.cluster.mean_encodings)?;
            write_assignments(&dir, &run.bundle, &train, &test)?;
            let report = evaluate_bundle(&run.bundle, &eval)?;
            write_test_predictions(&dir, &test, config, &eval, &|f| {
                let routed = predict_routed(&run.bundle, f)?;
                Ok((routed.communities, routed.scores))
            })?;
            write_community_metrics(&dir, &report.per_community)?;
            final_metrics(&report, run.best_round, run.rounds_run, run.history)
        }
    };
    write_json(&dir.join("final_metrics.json"), &metrics)?;
    info!(
        "{arm}: roc_auc {:.4} pr_auc {:.4} after {} rounds",
        metrics.roc_auc, metrics.pr_auc, metrics.rounds
    );
    Ok(TrainOutput { run_dir: dir, metrics })
}

fn final_metrics(report: &EvalReport, rounds: usize, rounds_run: usize, history: Vec<f64>) -> FinalMetrics {
    FinalMetrics {
        roc_auc: report.roc_auc,
        pr_auc: report.pr_auc,
        rounds,
        rounds_run,
        history,
    }
}

type Scored = (Vec<usize>, Vec<f64>);

fn single_model_scores(params: &cbfl::Mlp, features: &FeatureMatrix) -> cbfl::Result<Scored> {
    let scores = cbfl::nn::predict_features(params, features)?.column(0).to_vec();
    Ok((vec![0; scores.len()], scores))
}

pub fn round_rows(arm: &str, logs: &[RoundLog], models: usize) -> Vec<RoundRow> {
    let mut rows = Vec::new();
    for log in logs.iter().filter(|l| l.phase.is_training()) {
        for m in 0..models {
            let mut row = RoundRow {
                round: log.round,
                arm: arm.to_string(),
                model_id: m,
                roc_auc: log.metric,
                model_roc_auc: None,
                model_examples: 0,
                params_up: 0,
                params_down: 0,
                bytes_up: 0,
                bytes_down: 0,
            };
            if let Some(mm) = log.model_metrics.iter().find(|mm| mm.model_id == m) {
                row.model_roc_auc = mm.roc_auc;
                row.model_examples = mm.examples;
            }
            for msg in log.messages.iter().filter(|x| x.kind.is_model_weights() && x.model_id == Some(m)) {
                match msg.direction() {
                    Direction::Up => {
                        row.params_up += msg.values;
                        row.bytes_up += msg.bytes;
                    }
                    Direction::Down => {
                        row.params_down += msg.values;
                        row.bytes_down += msg.bytes;
                    }
                }
            }
            rows.push(row);
        }
    }
    rows
}

pub fn traffic_rows(logs: &[RoundLog]) -> Vec<TrafficRow> {
    logs.iter()
        .map(|log| {
            let t = log.totals();
            TrafficRow {
                round: log.round,
                phase: log.phase,
                messages: t.messages,
                values_up: t.values_up,
                values_down: t.values_down,
                model_params_up: t.model_params_up,
                model_params_down: t.model_params_down,
                bytes_up: t.bytes_up,
                bytes_down: t.bytes_down,
            }
        })
        .collect()
}

fn write_ledger(dir: &Path, arm: &str, logs: &[RoundLog], specs: &[cbfl::nn::LayerSpec], models: usize) -> CliResult<()> {
    write_csv_with_header(&dir.join("rounds.csv"), &ROUNDS_HEADER, &round_rows(arm, logs, models))?;
    write_csv_with_header(&dir.join("traffic.csv"), &TRAFFIC_HEADER, &traffic_rows(logs))?;
    let encoder_specs = AutoencoderSpec::new(specs[0].input_dim, 0.0)?.encoder_specs();
    let audit = privacy_audit(logs, &encoder_specs, specs, ENCODING_DIM, models);
    let ledger = LedgerFile {
        report: ledger_report(logs),
        privacy_violations: audit.violations,
    };
    write_json(&dir.join("ledger.json"), &ledger)
}

fn save_bundle(dir: &Path, bundle: &Bundle) -> CliResult<()> {
    save_weights(&dir.join("encoder.cbflw"), &bundle.encoder.params)?;
    for (j, m) in bundle.community_models.iter().enumerate() {
        save_weights(&dir.join(format!("community_{j}.cbflw")), m)?;
    }
    let ids: Vec<String> = (0..bundle.k()).map(|j| j.to_string()).collect();
    write_matrix(&dir.join("centroids.csv"), "community", "e", &ids, &bundle.kmeans.centroids)
}

fn write_hospitals(
    dir: &Path,
    bundle: &Bundle,
    cohort: &CohortDataset,
    client_ids: &[u64],
    mean_encodings: &ndarray::Array2<f64>,
) -> CliResult<()> {
    let communities = assign_rows(&bundle.kmeans, mean_encodings)?;
    let rows: Vec<HospitalRow> = client_ids
        .iter()
        .zip(communities)
        .map(|(&id, community)| {
            let hospital_id = id as u32;
            HospitalRow {
                hospital_id,
                region: cohort.regions.get(&hospital_id).copied().unwrap_or(Region::Unknown),
                community,
            }
        })
        .collect();
    write_csv(&dir.join("hospitals.csv"), &rows)
}

fn write_assignments(dir: &Path, bundle: &Bundle, train: &CohortDataset, test: &CohortDataset) -> CliResult<()> {
    let mut rows = Vec::with_capacity(train.len() + test.len());
    for (name, part) in [("train", train), ("test", test)] {
        let routed = predict_routed(bundle, &part.features())?;
        for (p, &c) in part.patients.iter().zip(&routed.communities) {
            rows.push(AssignmentRow {
                patient_id: p.patient_id,
                hospital_id: p.hospital_id,
                split: name.to_string(),
                community: c,
            });
        }
    }
    rows.sort_by_key(|r| r.patient_id);
    write_csv(&dir.join("assignments.csv"), &rows)
}

fn write_test_predictions(
    dir: &Path,
    test: &CohortDataset,
    config: &ExperimentConfig,
    eval: &EvalSet<f64>,
    score: &dyn Fn(&FeatureMatrix) -> cbfl::Result<Scored>,
) -> CliResult<()> {
    let (communities, scores) = score(&eval.features)?;
    let rows: Vec<PredictionRow> = test
        .patients
        .iter()
        .zip(communities.iter().zip(&scores))
        .map(|(p, (&community, &score))| PredictionRow {
            patient_id: p.patient_id,
            hospital_id: p.hospital_id,
            label: p.label(config.task),
            community,
            score,
        })
        .collect();
    write_csv(&dir.join("predictions.csv"), &rows)
}

fn write_community_metrics(dir: &Path, per_community: &[CommunityEval]) -> CliResult<()> {
    write_csv(&dir.join("community_metrics.csv"), per_community)
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cbfl::clustering::{community_distances, fit_pca2d, project, KMeansModel};
use cbfl::datagen::{Region, DIAGNOSIS_CATEGORIES};
use cbfl::metrics::{enrichment, EnrichmentRow};
use serde::{Deserialize, Serialize};

use crate::config::{Arm, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::output::{create_run_dir, missing_files, read_csv, read_json, read_matrix, write_csv_with_header};
use crate::train::{load_cohort, AssignmentRow, HospitalRow, RoundRow};

const RUN_FILES: [&str; 3] = ["config.json", "rounds.csv", "final_metrics.json"];
const CBFL_FILES: [&str; 6] = [
    "centroids.csv",
    "mean_encodings.csv",
    "hospitals.csv",
    "assignments.csv",
    "community_metrics.csv",
    "client_counts.csv",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub run: String,
    pub arm: String,
    pub round: usize,
    pub roc_auc: Option<f64>,
}

/// A hospital mean encoding or a centroid projected on the first two principal components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityPoint {
    pub run: String,
    pub kind: String,
    pub id: u64,
    pub region: Option<Region>,
    pub community: usize,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub run: String,
    pub community: usize,
    pub examples: usize,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    /// Mean PCA-plane distance to the other centroids; empty when K = 1.
    pub avg_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnrichmentOut {
    pub run: String,
    pub community: usize,
    pub diagnosis: String,
    pub overlap: u64,
    pub community_size: u64,
    pub diagnosis_total: u64,
    pub population: u64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub overrepresented: bool,
}

impl EnrichmentOut {
    fn new(run: &str, row: EnrichmentRow) -> Self {
        EnrichmentOut {
            run: run.to_string(),
            community: row.community,
            diagnosis: row.diagnosis,
            overlap: row.overlap,
            community_size: row.community_size,
            diagnosis_total: row.diagnosis_total,
            population: row.population,
            p_value: row.p_value,
            p_adjusted: row.p_adjusted,
            overrepresented: row.overrepresented,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct CommunityMetricRow {
    community: usize,
    examples: usize,
    #[allow(dead_code)]
    positives: usize,
    roc_auc: Option<f64>,
    pr_auc: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Analysis {
    pub curve: Vec<CurveRow>,
    pub communities: Vec<CommunityPoint>,
    pub distances: Vec<DistanceRow>,
    pub enrichment: Vec<EnrichmentOut>,
}

pub const CURVE_HEADER: [&str; 4] = ["run", "arm", "round", "roc_auc"];
pub const COMMUNITIES_HEADER: [&str; 7] = ["run", "kind", "id", "region", "community", "pc1", "pc2"];
pub const DISTANCES_HEADER: [&str; 6] = ["run", "community", "examples", "roc_auc", "pr_auc", "avg_distance"];
pub const ENRICHMENT_HEADER: [&str; 10] = [
    "run",
    "community",
    "diagnosis",
    "overlap",
    "community_size",
    "diagnosis_total",
    "population",
    "p_value",
    "p_adjusted",
    "overrepresented",
];

/// Checks every run directory up front and reports all absent files at once.
pub fn check_inputs(runs: &[PathBuf]) -> CliResult<()> {
    if runs.is_empty() {
        return Err(CliError::Config("analyze needs at least one run directory".into()));
    }
    let mut missing = Vec::new();
    for dir in runs {
        let absent = missing_files(dir, &RUN_FILES);
        let has_config = !absent.iter().any(|p| p.ends_with("config.json"));
        missing.extend(absent);
        if has_config {
            let config: ExperimentConfig = read_json(&dir.join("config.json"))?;
            if config.arm == Arm::Cbfl {
                missing.extend(missing_files(dir, &CBFL_FILES));
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingInputs(missing))
    }
}

pub fn analyze_runs(runs: &[PathBuf]) -> CliResult<Analysis> {
    check_inputs(runs)?;
    let mut analysis = Analysis::default();
    for dir in runs {
        let name = run_label(dir);
        let config: ExperimentConfig = read_json(&dir.join("config.json"))?;
        analysis.curve.extend(curve(&name, &read_csv(&dir.join("rounds.csv"))?));
        if config.arm == Arm::Cbfl {
            analyze_communities(dir, &name, &config, &mut analysis)?;
        }
    }
    Ok(analysis)
}

/// Writes `curve.csv`, `communities.csv`, `distances.csv` and `enrichment.csv`
/// into a fresh directory under `out`.
pub fn cmd_analyze(runs: &[PathBuf], out: &Path) -> CliResult<PathBuf> {
    let analysis = analyze_runs(runs)?;
    let dir = create_run_dir(out, "analysis")?;
    write_csv_with_header(&dir.join("curve.csv"), &CURVE_HEADER, &analysis.curve)?;
    write_csv_with_header(&dir.join("communities.csv"), &COMMUNITIES_HEADER, &analysis.communities)?;
    write_csv_with_header(&dir.join("distances.csv"), &DISTANCES_HEADER, &analysis.distances)?;
    write_csv_with_header(&dir.join("enrichment.csv"), &ENRICHMENT_HEADER, &analysis.enrichment)?;
    Ok(dir)
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// One point per training round; the round metric repeats across model rows.
pub fn curve(run: &str, rows: &[RoundRow]) -> Vec<CurveRow> {
    let mut by_round: BTreeMap<usize, &RoundRow> = BTreeMap::new();
    for row in rows {
        by_round.entry(row.round).or_insert(row);
    }
    by_round
        .into_values()
        .map(|r| CurveRow {
            run: run.to_string(),
            arm: r.arm.clone(),
            round: r.round,
            roc_auc: r.roc_auc,
        })
        .collect()
}

fn analyze_communities(dir: &Path, run: &str, config: &ExperimentConfig, out: &mut Analysis) -> CliResult<()> {
    let (_, centroids) = read_matrix(&dir.join("centroids.csv"))?;
    let kmeans = KMeansModel::from_centroids(centroids)?;
    let k = kmeans.k();
    let (client_ids, means) = read_matrix(&dir.join("mean_encodings.csv"))?;
    let hospitals: Vec<HospitalRow> = read_csv(&dir.join("hospitals.csv"))?;
    if hospitals.len() != client_ids.len() {
        return Err(CliError::Data(format!(
            "{}: {} hospitals but {} mean encodings",
            dir.display(),
            hospitals.len(),
            client_ids.len()
        )));
    }

    let pca = fit_pca2d(&means);
    match &pca {
        Ok(pca) => {
            for (h, row) in hospitals.iter().zip(means.rows()) {
                let [pc1, pc2] = project(pca, row)?;
                out.communities.push(CommunityPoint {
                    run: run.to_string(),
                    kind: "hospital".into(),
                    id: h.hospital_id as u64,
                    region: Some(h.region),
                    community: h.community,
                    pc1,
                    pc2,
                });
            }
            for (j, c) in kmeans.centroids.rows().into_iter().enumerate() {
                let [pc1, pc2] = project(pca, c)?;
                out.communities.push(CommunityPoint {
                    run: run.to_string(),
                    kind: "centroid".into(),
                    id: j as u64,
                    region: None,
                    community: j,
                    pc1,
                    pc2,
                });
            }
        }
        Err(e) => log::warn!("{run}: no PCA projection ({e})"),
    }

    let distances = match (&pca, k) {
        (Ok(pca), k) if k >= 2 => community_distances(&kmeans, pca)?.into_iter().map(Some).collect(),
        _ => vec![None; k],
    };
    let metrics: Vec<CommunityMetricRow> = read_csv(&dir.join("community_metrics.csv"))?;
    for (j, avg_distance) in distances.into_iter().enumerate() {
        let m = metrics.iter().find(|m| m.community == j);
        out.distances.push(DistanceRow {
            run: run.to_string(),
            community: j,
            examples: m.map_or(0, |m| m.examples),
            roc_auc: m.and_then(|m| m.roc_auc),
            pr_auc: m.and_then(|m| m.pr_auc),
            avg_distance,
        });
    }

    let assignments: Vec<AssignmentRow> = read_csv(&dir.join("assignments.csv"))?;
    let cohort = load_cohort(config)?;
    let diagnoses: BTreeMap<u64, &Vec<usize>> = cohort.patients.iter().map(|p| (p.patient_id, &p.diagnoses)).collect();
    let mut community_of = Vec::with_capacity(assignments.len());
    let mut diagnoses_of = Vec::with_capacity(assignments.len());
    for a in &assignments {
        let d = diagnoses.get(&a.patient_id).ok_or_else(|| {
            CliError::Data(format!("{}: patient {} is not in the cohort", dir.display(), a.patient_id))
        })?;
        community_of.push(a.community);
        diagnoses_of.push((*d).clone());
    }
    let result = enrichment(&community_of, &diagnoses_of, k, &DIAGNOSIS_CATEGORIES)?;
    out.enrichment.extend(result.rows.into_iter().map(|row| EnrichmentOut::new(run, row)));
    Ok(())
}

use std::path::{Path, PathBuf};

use cbfl::autoencoder::EncoderModel;
use cbfl::clustering::KMeansModel;
use cbfl::datagen::load_cohort_csv;
use cbfl::federation::{predict_routed, CbflBundle};
use cbfl::{Bundle, FeatureMatrix, Mlp};

use crate::error::{CliError, CliResult};
use crate::output::{load_weights, missing_files, read_matrix};

/// Trained artifacts of a run directory.
#[derive(Debug, Clone)]
pub enum Scorer {
    /// CBFL: encoder, centroids and one model per community.
    Communities(Bundle),
    /// FedAvg or centralized: a single model, reported as community 0.
    Single(Mlp),
}

impl Scorer {
    pub fn load(dir: &Path) -> CliResult<Self> {
        if dir.join("model.cbflw").is_file() {
            return Ok(Scorer::Single(load_weights(&dir.join("model.cbflw"))?));
        }
        let missing = missing_files(dir, &["encoder.cbflw", "centroids.csv"]);
        if !missing.is_empty() {
            return Err(CliError::MissingInputs(missing));
        }
        let (_, centroids) = read_matrix(&dir.join("centroids.csv"))?;
        let kmeans = KMeansModel::from_centroids(centroids)?;
        let names: Vec<String> = (0..kmeans.k()).map(|j| format!("community_{j}.cbflw")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let missing = missing_files(dir, &refs);
        if !missing.is_empty() {
            return Err(CliError::MissingInputs(missing));
        }
        let models = names.iter().map(|n| load_weights(&dir.join(n))).collect::<CliResult<Vec<_>>>()?;
        let encoder = EncoderModel::from_params(load_weights(&dir.join("encoder.cbflw"))?)?;
        Ok(Scorer::Communities(CbflBundle::new(encoder, kmeans, models)?))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Scorer::Communities(b) => b.input_dim(),
            Scorer::Single(m) => m.input_dim(),
        }
    }

    /// Community and positive-class probability of every row.
    pub fn score(&self, features: &FeatureMatrix) -> CliResult<(Vec<usize>, Vec<f64>)> {
        if features.ncols() != self.input_dim() {
            return Err(cbfl::Error::Dimension {
                context: "prediction features",
                expected: self.input_dim(),
                found: features.ncols(),
            }
            .into());
        }
        match self {
            Scorer::Communities(b) => {
                let routed = predict_routed(b, features)?;
                Ok((routed.communities, routed.scores))
            }
            Scorer::Single(m) => {
                let scores = cbfl::nn::predict_features(m, features)?.column(0).to_vec();
                Ok((vec![0; scores.len()], scores))
            }
        }
    }
}

/// Scores a cohort CSV with the models of `bundle_dir`; writes the input rows
/// with `community` and `score` appended.
pub fn cmd_predict(bundle_dir: &Path, input: &Path, output: &Path) -> CliResult<PathBuf> {
    if !input.is_file() {
        return Err(CliError::MissingInputs(vec![input.display().to_string()]));
    }
    let scorer = Scorer::load(bundle_dir)?;
    let cohort = load_cohort_csv(input)?;
    let (communities, scores) = scorer.score(&cohort.features())?;

    let mut reader = csv::Reader::from_path(input)?;
    let mut writer = csv::Writer::from_path(output).map_err(|e| CliError::Data(format!("{}: {e}", output.display())))?;
    let mut header = reader.headers()?.clone();
    header.push_field("community");
    header.push_field("score");
    writer.write_record(&header)?;
    for (i, rec) in reader.records().enumerate() {
        let mut rec = rec?;
        rec.push_field(&communities[i].to_string());
        rec.push_field(&scores[i].to_string());
        writer.write_record(&rec)?;
    }
    writer.flush().map_err(|e| CliError::io(output, e))?;
    Ok(output.to_path_buf())
}

use std::fs;
use std::path::{Path, PathBuf};

use cbfl::datagen::{GeneratorConfig, Task};
use cbfl::federation::{FederationConfig, TrainOn};
use cbfl::nn::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Split {
    /// Every hospital contributes train and test patients.
    WithinHospital,
    /// Whole hospitals are held out for testing.
    ByHospital,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Fl,
    Cbfl,
    Centralized,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Fl => "fl",
            Arm::Cbfl => "cbfl",
            Arm::Centralized => "centralized",
        }
    }
}

/// Everything one CLI invocation needs, as a flat JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub split: Split,
    pub arm: Arm,
    /// Number of communities; only meaningful for `cbfl`.
    pub k: Option<usize>,
    /// Cohort CSV to train on. Without one the cohort is generated from the generator fields.
    pub cohort: Option<PathBuf>,
    /// Parent directory of run directories.
    pub out: PathBuf,
    pub seed: u64,

    pub train_per_hospital: usize,
    pub test_per_hospital: usize,
    pub train_hospitals: usize,

    pub e1: usize,
    pub e2: usize,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub train_on: TrainOn,
    pub corruption_rate: f64,
    pub parallel: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub output_prior: Option<f64>,

    pub n_hospitals: usize,
    pub patients_per_hospital: usize,
    pub n_latent_groups: usize,
    pub n_features: usize,
    pub mortality_rate: f64,
    pub prolonged_stay_rate: f64,
    pub mean_stay_minutes: f64,
    pub hospital_heterogeneity: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fed = FederationConfig::default();
        let gen = GeneratorConfig::default();
        ExperimentConfig {
            task: Task::Mortality,
            split: Split::WithinHospital,
            arm: Arm::Cbfl,
            k: None,
            cohort: None,
            out: PathBuf::from("runs"),
            seed: 0,
            train_per_hospital: 400,
            test_per_hospital: 160,
            train_hospitals: 35,
            e1: fed.e1,
            e2: fed.e2,
            batch_size: fed.batch_size,
            max_rounds: fed.max_rounds,
            patience: fed.patience,
            min_delta: fed.min_delta,
            train_on: fed.train_on,
            corruption_rate: fed.corruption_rate,
            parallel: fed.parallel,
            learning_rate: fed.adam.learning_rate,
            beta1: fed.adam.beta1,
            beta2: fed.adam.beta2,
            epsilon: fed.adam.epsilon,
            output_prior: fed.output_prior,
            n_hospitals: gen.n_hospitals,
            patients_per_hospital: gen.patients_per_hospital,
            n_latent_groups: gen.n_latent_groups,
            n_features: gen.n_features,
            mortality_rate: gen.mortality_rate,
            prolonged_stay_rate: gen.prolonged_stay_rate,
            mean_stay_minutes: gen.mean_stay_minutes,
            hospital_heterogeneity: gen.hospital_heterogeneity,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn federation(&self) -> FederationConfig {
        FederationConfig {
            e1: self.e1,
            e2: self.e2,
            k: self.k.unwrap_or(1),
            batch_size: self.batch_size,
            max_rounds: self.max_rounds,
            patience: self.patience,
            min_delta: self.min_delta,
            seed: self.seed,
            train_on: self.train_on,
            corruption_rate: self.corruption_rate,
            parallel: self.parallel,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            output_prior: self.output_prior,
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            n_hospitals: self.n_hospitals,
            patients_per_hospital: self.patients_per_hospital,
            n_latent_groups: self.n_latent_groups,
            n_features: self.n_features,
            mortality_rate: self.mortality_rate,
            prolonged_stay_rate: self.prolonged_stay_rate,
            mean_stay_minutes: self.mean_stay_minutes,
            hospital_heterogeneity: self.hospital_heterogeneity,
            seed: self.seed,
        }
    }

    /// Checks made before any data is touched.
    pub fn validate_for_training(&self) -> CliResult<()> {
        match (self.arm, self.k) {
            (Arm::Cbfl, None) => return Err(CliError::Config("arm cbfl requires k".into())),
            (Arm::Cbfl, Some(0)) => return Err(CliError::Config("k must be at least 1".into())),
            (Arm::Fl | Arm::Centralized, Some(_)) => {
                return Err(CliError::Config(format!("k is only valid with arm cbfl, not {}", self.arm.name())))
            }
            _ => {}
        }
        if let Some(path) = &self.cohort {
            if !path.is_file() {
                return Err(CliError::Config(format!("cohort file {} does not exist", path.display())));
            }
        } else {
            self.generator().validate()?;
        }
        if self.train_per_hospital == 0 || self.test_per_hospital == 0 || self.train_hospitals == 0 {
            return Err(CliError::Config("split sizes must be at least 1".into()));
        }
        self.federation().validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.federation(), FederationConfig { k: 1, ..FederationConfig::default() });
        assert_eq!(c.generator(), GeneratorConfig::default());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"arm": "fl", "seed": 7, "task": "stay_time"}"#).unwrap();
        assert_eq!(c.arm, Arm::Fl);
        assert_eq!(c.task, Task::StayTime);
        assert_eq!(c.generator().seed, 7);
        assert_eq!(c.max_rounds, 200);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"arms": "fl"}"#).is_err());
    }

    #[test]
    fn k_goes_with_cbfl_only() {
        let mut c = ExperimentConfig { arm: Arm::Cbfl, ..Default::default() };
        assert!(matches!(c.validate_for_training(), Err(CliError::Config(_))));
        c.k = Some(5);
        c.validate_for_training().unwrap();
        c.arm = Arm::Fl;
        assert!(c.validate_for_training().is_err());
        c.k = None;
        c.validate_for_training().unwrap();
        c.patience = 0;
        assert!(c.validate_for_training().is_err());
    }
}

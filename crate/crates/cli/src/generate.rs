use std::path::PathBuf;

use cbfl::datagen::{generate_cohort, save_cohort_csv, CohortSummary};
use log::info;

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::output::{create_run_dir, write_json, write_text};

#[derive(Debug, Clone)]
pub struct GenerateOutput {
    pub run_dir: PathBuf,
    pub cohort: PathBuf,
    pub summary: CohortSummary,
}

/// Writes `cohort.csv`, `config.json` and `summary.txt` into a fresh run directory.
pub fn cmd_generate(config: &ExperimentConfig) -> CliResult<GenerateOutput> {
    let generator = config.generator();
    generator.validate()?;
    let dataset = generate_cohort(&generator)?;
    let dir = create_run_dir(&config.out, &format!("cohort-seed{}", config.seed))?;
    write_json(&dir.join("config.json"), config)?;
    let cohort = dir.join("cohort.csv");
    save_cohort_csv(&dataset, &cohort)?;
    let summary = dataset.summary();
    write_text(&dir.join("summary.txt"), &summary.to_string())?;
    info!("{} patients written to {}", dataset.len(), cohort.display());
    Ok(GenerateOutput {
        run_dir: dir,
        cohort,
        summary,
    })
}

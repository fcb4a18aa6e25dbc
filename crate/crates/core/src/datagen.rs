//! Synthetic non-IID ICU cohorts, the cohort CSV format, outcome labels and
//! the two train/test split protocols.
//!
//! Hospitals belong to latent groups. A group fixes a drug-prevalence
//! signature, a diagnosis mix, a regional bias and its own outcome weights on
//! top of weights shared by every group; each hospital adds its own formulary.
//! Outcome intercepts are solved numerically so pooled rates hit the targets.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::Features;
use crate::{seed, Error, Result, Scalar};

/// Minutes in eight days: a stay this long or longer is prolonged.
pub const PROLONGED_STAY_MINUTES: i64 = 8 * 24 * 60;

pub const DIAGNOSIS_CATEGORIES: [&str; 16] = [
    "burns/trauma",
    "cardiovascular",
    "endocrine",
    "gastrointestinal",
    "general",
    "hematology",
    "infectious diseases",
    "musculoskeletal",
    "neurologic",
    "obstetrics/gynecology",
    "oncology",
    "pulmonary",
    "renal",
    "toxicology",
    "transplant",
    "surgery",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    Midwest,
    South,
    West,
    Northeast,
    Unknown,
}

impl Region {
    pub const ALL: [Region; 5] = [Region::Midwest, Region::South, Region::West, Region::Northeast, Region::Unknown];
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Region::Midwest => "Midwest",
            Region::South => "South",
            Region::West => "West",
            Region::Northeast => "Northeast",
            Region::Unknown => "Unknown",
        };
        f.write_str(s)
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .iter()
            .copied()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| Error::parse(None, format!("unknown region {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Mortality,
    StayTime,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Mortality => "mortality",
            Task::StayTime => "stay_time",
        })
    }
}

/// `1` iff the stay lasted at least eight days (11,520 minutes).
pub fn label_prolonged_stay(unit_stay_minutes: i64) -> Result<u8> {
    if unit_stay_minutes < 0 {
        return Err(Error::Config(format!("negative unit stay {unit_stay_minutes} minutes")));
    }
    Ok(u8::from(unit_stay_minutes >= PROLONGED_STAY_MINUTES))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: u64,
    pub hospital_id: u32,
    pub mortality: u8,
    pub unit_stay_minutes: i64,
    /// Indices into [`DIAGNOSIS_CATEGORIES`], ascending.
    pub diagnoses: Vec<usize>,
    /// Indices of administered drugs, ascending.
    pub drugs: Vec<usize>,
}

impl PatientRecord {
    pub fn label(&self, task: Task) -> u8 {
        match task {
            Task::Mortality => self.mortality,
            Task::StayTime => u8::from(self.unit_stay_minutes >= PROLONGED_STAY_MINUTES),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortDataset {
    pub n_features: usize,
    pub patients: Vec<PatientRecord>,
    pub regions: BTreeMap<u32, Region>,
}

impl CohortDataset {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn hospital_ids(&self) -> Vec<u32> {
        self.regions.keys().copied().collect()
    }

    /// Patient indices per hospital, in dataset order.
    pub fn by_hospital(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = self.regions.keys().map(|&h| (h, Vec::new())).collect();
        for (i, p) in self.patients.iter().enumerate() {
            map.entry(p.hospital_id).or_default().push(i);
        }
        map
    }

    pub fn subset(&self, indices: &[usize]) -> CohortDataset {
        let patients: Vec<PatientRecord> = indices.iter().map(|&i| self.patients[i].clone()).collect();
        let regions = patients
            .iter()
            .map(|p| (p.hospital_id, self.regions[&p.hospital_id]))
            .collect();
        CohortDataset {
            n_features: self.n_features,
            patients,
            regions,
        }
    }

    pub fn labels(&self, task: Task) -> Vec<u8> {
        self.patients.iter().map(|p| p.label(task)).collect()
    }

    pub fn features<T: Scalar>(&self) -> Features<T> {
        self.features_of(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn features_of<T: Scalar>(&self, indices: &[usize]) -> Features<T> {
        let rows: Vec<Vec<usize>> = indices.iter().map(|&i| self.patients[i].drugs.clone()).collect();
        Features::from_binary_rows(self.n_features, &rows).expect("drug indices validated on construction")
    }

    pub fn dense_features<T: Scalar>(&self) -> Array2<T> {
        self.features::<T>().to_dense()
    }

    pub fn summary(&self) -> CohortSummary {
        let n = self.len();
        let deaths = self.patients.iter().filter(|p| p.mortality == 1).count();
        let prolonged = self
            .patients
            .iter()
            .filter(|p| p.unit_stay_minutes >= PROLONGED_STAY_MINUTES)
            .count();
        let mut diagnosis_counts = vec![0usize; DIAGNOSIS_CATEGORIES.len()];
        for p in &self.patients {
            for &d in &p.diagnoses {
                diagnosis_counts[d] += 1;
            }
        }
        let mean_stay = if n == 0 {
            0.0
        } else {
            self.patients.iter().map(|p| p.unit_stay_minutes as f64).sum::<f64>() / n as f64
        };
        let mean_drugs = if n == 0 {
            0.0
        } else {
            self.patients.iter().map(|p| p.drugs.len() as f64).sum::<f64>() / n as f64
        };
        CohortSummary {
            patients: n,
            hospitals: self.regions.len(),
            deaths,
            prolonged_stays: prolonged,
            mean_stay_minutes: mean_stay,
            mean_drugs_per_patient: mean_drugs,
            diagnosis_counts,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CohortSummary {
    pub patients: usize,
    pub hospitals: usize,
    pub deaths: usize,
    pub prolonged_stays: usize,
    pub mean_stay_minutes: f64,
    pub mean_drugs_per_patient: f64,
    pub diagnosis_counts: Vec<usize>,
}

impl fmt::Display for CohortSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |c: usize| 100.0 * c as f64 / self.patients.max(1) as f64;
        writeln!(f, "{:<40} {:>8} {:>10}", "", "count", "percentage")?;
        writeln!(f, "{:<40} {:>8} {:>10}", "patients", self.patients, "-")?;
        writeln!(f, "{:<40} {:>8} {:>10}", "hospitals", self.hospitals, "-")?;
        writeln!(f, "{:<40} {:>8} {:>9.2}%", "death", self.deaths, pct(self.deaths))?;
        let alive = self.patients - self.deaths;
        writeln!(f, "{:<40} {:>8} {:>9.2}%", "alive", alive, pct(alive))?;
        writeln!(
            f,
            "{:<40} {:>8} {:>9.2}%",
            "patients with prolonged unit stay time",
            self.prolonged_stays,
            pct(self.prolonged_stays)
        )?;
        writeln!(f, "{:<40} {:>8.0} {:>10}", "mean unit stay (minutes)", self.mean_stay_minutes, "-")?;
        writeln!(f, "{:<40} {:>8.1} {:>10}", "mean drugs per patient", self.mean_drugs_per_patient, "-")?;
        let mut ranked: Vec<(usize, usize)> = self.diagnosis_counts.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        writeln!(f, "top diagnoses")?;
        for (d, c) in ranked.iter().take(11) {
            writeln!(f, "  {:<38} {:>8} {:>9.2}%", DIAGNOSIS_CATEGORIES[*d], c, pct(*c))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_hospitals: usize,
    pub patients_per_hospital: usize,
    pub n_latent_groups: usize,
    pub n_features: usize,
    pub mortality_rate: f64,
    pub prolonged_stay_rate: f64,
    pub mean_stay_minutes: f64,
    /// Scales the per-hospital formulary; 0 makes hospitals of a group identical.
    pub hospital_heterogeneity: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_hospitals: 50,
            patients_per_hospital: 560,
            n_latent_groups: 5,
            n_features: 1399,
            mortality_rate: 0.05,
            prolonged_stay_rate: 0.06,
            mean_stay_minutes: 3858.0,
            hospital_heterogeneity: 1.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_hospitals == 0 || self.patients_per_hospital == 0 {
            return bad("n_hospitals and patients_per_hospital must be positive".into());
        }
        if self.n_latent_groups == 0 || self.n_latent_groups > self.n_hospitals {
            return bad(format!(
                "n_latent_groups = {} must lie in 1..={}",
                self.n_latent_groups, self.n_hospitals
            ));
        }
        if self.n_features < 2 {
            return bad("n_features must be at least 2".into());
        }
        for (name, r) in [("mortality_rate", self.mortality_rate), ("prolonged_stay_rate", self.prolonged_stay_rate)] {
            if !(r > 0.0 && r < 1.0) {
                return bad(format!("{name} = {r} must lie in (0, 1)"));
            }
        }
        if !(self.mean_stay_minutes > 0.0 && (self.mean_stay_minutes as i64) < PROLONGED_STAY_MINUTES) {
            return bad("mean_stay_minutes must be positive and below eight days".into());
        }
        if !(0.0..=1.0).contains(&self.hospital_heterogeneity) {
            return bad("hospital_heterogeneity must lie in [0, 1]".into());
        }
        Ok(())
    }
}

// Shape of the synthetic signal.
const SIGNATURE_SHARE: f64 = 0.05;
const COMMON_SHARE: f64 = 0.02;
const BACKGROUND_PREVALENCE: (f64, f64) = (0.001, 0.01);
const SIGNATURE_BOOST: f64 = 0.8;
const FORMULARY_BOOST: f64 = 0.3;
const DIAGNOSIS_DRUG_BOOST: f64 = 0.3;
const MAX_PREVALENCE: f64 = 0.95;
const FOCUS_DIAGNOSES: usize = 4;
const FOCUS_WEIGHT: f64 = 6.0;
const DOMINANT_REGION_PROB: f64 = 0.7;
const COMMON_PREVALENCE: f64 = 0.3;
const COMMON_WEIGHT_SD: f64 = 1.6;
const SHARED_WEIGHT_SD: f64 = 0.2;
const GROUP_WEIGHT_SD: f64 = 0.0;
const SIGNATURE_WEIGHT_SD: f64 = 0.0;
const GROUP_OFFSET_SD: f64 = 0.3;
const DIAGNOSIS_EFFECT_SD: f64 = 0.4;
const STAY_NOISE_SD: f64 = 1.0;
/// Expected drug count of positive cases relative to negatives.
const DRUG_COUNT_RISK_RATIO: f64 = 1.0;

/// Generator internals useful for checking the construction.
#[derive(Debug, Clone)]
pub struct LatentStructure {
    /// Latent group of each hospital, keyed by hospital id.
    pub hospital_group: BTreeMap<u32, usize>,
    /// `[n_hospitals × D]` drug prevalence of each hospital (rows by hospital id).
    pub hospital_prevalence: Array2<f64>,
    /// True mortality log-odds of each patient, intercept included.
    pub mortality_logit: Vec<f64>,
}

struct GroupProfile {
    signature: Vec<usize>,
    diagnosis_weights: Vec<f64>,
    dominant_region: Region,
    mortality_offset: f64,
    stay_offset: f64,
    mortality_weights: Vec<f64>,
    stay_weights: Vec<f64>,
}

fn share(d: usize, fraction: f64) -> usize {
    ((d as f64 * fraction).round() as usize).max(1)
}

fn take_cyclic(perm: &[usize], cursor: &mut usize, n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..n).map(|i| perm[(*cursor + i) % perm.len()]).collect();
    *cursor += n;
    out.sort_unstable();
    out.dedup();
    out
}

fn normal(rng: &mut seed::Rng, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * sd
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Subtracts `β · count_i` from the risk scores, with `β` chosen so that the
/// expected drug count of positives over that of negatives equals `ratio`.
fn decouple_count(eta: &mut [f64], counts: &[f64], rate: f64, ratio: f64) {
    let count_ratio = |beta: f64| {
        let shifted: Vec<f64> = eta.iter().zip(counts).map(|(e, n)| e - beta * n).collect();
        let b = solve_intercept(&shifted, rate);
        let (mut pos, mut pos_n, mut neg, mut neg_n) = (0.0, 0.0, 0.0, 0.0);
        for (e, n) in shifted.iter().zip(counts) {
            let p = sigmoid(b + e);
            pos += p;
            pos_n += p * n;
            neg += 1.0 - p;
            neg_n += (1.0 - p) * n;
        }
        (pos_n / pos) / (neg_n / neg)
    };
    let (mut lo, mut hi) = (-5.0, 5.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if count_ratio(mid) > ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    for (e, n) in eta.iter_mut().zip(counts) {
        *e -= beta * n;
    }
}

/// Intercept `b` such that the mean of `sigmoid(b + η_i)` equals `rate`.
fn solve_intercept(eta: &[f64], rate: f64) -> f64 {
    let mean = |b: f64| eta.iter().map(|&e| sigmoid(b + e)).sum::<f64>() / eta.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Maps latent stay scores to minutes `exp(a + b z)` so that the fraction of
/// prolonged stays is `tail_rate` and the mean stay is `mean_minutes`.
fn calibrate_stays(z: &[f64], tail_rate: f64, mean_minutes: f64) -> Vec<i64> {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    let n_tail = ((tail_rate * n as f64).round() as usize).clamp(1, n);
    // threshold halfway between the last non-prolonged and first prolonged score
    let q = if n_tail < n {
        0.5 * (sorted[n - n_tail] + sorted[n - n_tail - 1])
    } else {
        sorted[0] - 1.0
    };
    let ln_threshold = (PROLONGED_STAY_MINUTES as f64).ln();
    let ratio = mean_minutes / PROLONGED_STAY_MINUTES as f64;
    let f = |b: f64| z.iter().map(|&zi| (b * (zi - q)).exp()).sum::<f64>() / n as f64;
    // f(0) = 1 > ratio; f falls then rises, so search below the minimiser
    let mut b_min = 0.0;
    let mut best = 1.0;
    for i in 1..=400 {
        let b = i as f64 * 0.02;
        let v = f(b);
        if v < best {
            best = v;
            b_min = b;
        }
    }
    let b = if best > ratio {
        b_min
    } else {
        let (mut lo, mut hi) = (0.0, b_min);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > ratio {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let a = ln_threshold - b * q;
    z.iter()
        .map(|&zi| {
            let minutes = (a + b * zi).exp().round();
            let m = minutes.min(1e9) as i64;
            // keep the calibrated side of the threshold after rounding
            if zi > q {
                m.max(PROLONGED_STAY_MINUTES)
            } else {
                m.min(PROLONGED_STAY_MINUTES - 1)
            }
        })
        .collect()
}

pub fn generate_cohort(config: &GeneratorConfig) -> Result<CohortDataset> {
    generate_cohort_with_structure(config).map(|(d, _)| d)
}

pub fn generate_cohort_with_structure(config: &GeneratorConfig) -> Result<(CohortDataset, LatentStructure)> {
    config.validate()?;
    let d = config.n_features;
    let n_diag = DIAGNOSIS_CATEGORIES.len();
    let mut rng = seed::rng_for(config.seed, &[0xC0_4047]);

    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);
    let sig_size = share(d, SIGNATURE_SHARE);
    let diag_size = (d / 70).max(1);
    let mut cursor = 0;
    let signatures: Vec<Vec<usize>> = (0..config.n_latent_groups)
        .map(|_| take_cyclic(&perm, &mut cursor, sig_size))
        .collect();
    let diagnosis_drugs: Vec<Vec<usize>> = (0..n_diag).map(|_| take_cyclic(&perm, &mut cursor, diag_size)).collect();
    // frequent everywhere, with group-specific effects
    let common = take_cyclic(&perm, &mut cursor, share(d, COMMON_SHARE));
    let pool: Vec<usize> = if cursor < d { perm[cursor..].to_vec() } else { perm.clone() };

    let (lo, hi) = (BACKGROUND_PREVALENCE.0.ln(), BACKGROUND_PREVALENCE.1.ln());
    let background: Vec<f64> = (0..d).map(|_| rng.random_range(lo..hi).exp()).collect();

    // shared outcome weights: diagnosis drugs plus a slice of the background pool
    let mut risk_drugs: Vec<usize> = diagnosis_drugs.iter().flatten().copied().collect();
    risk_drugs.extend(pool.iter().take((d / 14).max(1)));
    risk_drugs.sort_unstable();
    risk_drugs.dedup();
    let shared_mort: Vec<f64> = (0..d)
        .map(|j| if risk_drugs.binary_search(&j).is_ok() { normal(&mut rng, SHARED_WEIGHT_SD) } else { 0.0 })
        .collect();
    let shared_stay: Vec<f64> = (0..d)
        .map(|j| if risk_drugs.binary_search(&j).is_ok() { normal(&mut rng, SHARED_WEIGHT_SD) } else { 0.0 })
        .collect();
    let diag_mort: Vec<f64> = (0..n_diag).map(|_| normal(&mut rng, DIAGNOSIS_EFFECT_SD)).collect();
    let diag_stay: Vec<f64> = (0..n_diag).map(|_| normal(&mut rng, DIAGNOSIS_EFFECT_SD)).collect();

    let groups: Vec<GroupProfile> = signatures
        .into_iter()
        .enumerate()
        .map(|(g, signature)| {
            let mut diagnosis_weights = vec![1.0; n_diag];
            let mut cats: Vec<usize> = (0..n_diag).collect();
            cats.shuffle(&mut rng);
            for &c in cats.iter().take(FOCUS_DIAGNOSES) {
                diagnosis_weights[c] = FOCUS_WEIGHT;
            }
            let group_weights = |rng: &mut seed::Rng| -> Vec<f64> {
                (0..d)
                    .map(|j| {
                        if common.binary_search(&j).is_ok() {
                            normal(rng, COMMON_WEIGHT_SD)
                        } else if risk_drugs.binary_search(&j).is_ok() {
                            normal(rng, GROUP_WEIGHT_SD)
                        } else if signature.binary_search(&j).is_ok() {
                            normal(rng, SIGNATURE_WEIGHT_SD)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            };
            let mortality_weights = group_weights(&mut rng);
            let stay_weights = group_weights(&mut rng);
            GroupProfile {
                dominant_region: Region::ALL[g % 4],
                mortality_offset: normal(&mut rng, GROUP_OFFSET_SD),
                stay_offset: normal(&mut rng, GROUP_OFFSET_SD),
                signature,
                diagnosis_weights,
                mortality_weights,
                stay_weights,
            }
        })
        .collect();

    // balanced random assignment of hospitals to groups
    let mut order: Vec<usize> = (0..config.n_hospitals).collect();
    order.shuffle(&mut rng);
    let mut hospital_group = vec![0usize; config.n_hospitals];
    for (pos, &h) in order.iter().enumerate() {
        hospital_group[h] = pos % config.n_latent_groups;
    }

    let form_size = (d / 70).max(1).min(pool.len());
    let mut prevalence = Array2::<f64>::zeros((config.n_hospitals, d));
    let mut regions = BTreeMap::new();
    for h in 0..config.n_hospitals {
        let g = &groups[hospital_group[h]];
        let formulary: Vec<usize> = pool.choose_multiple(&mut rng, form_size).copied().collect();
        let mut row = prevalence.row_mut(h);
        for j in 0..d {
            row[j] = background[j];
        }
        for &j in &common {
            row[j] += COMMON_PREVALENCE;
        }
        for &j in &g.signature {
            row[j] += SIGNATURE_BOOST;
        }
        for &j in &formulary {
            row[j] += FORMULARY_BOOST * config.hospital_heterogeneity;
        }
        row.mapv_inplace(|p| p.min(MAX_PREVALENCE));
        let region = if rng.random::<f64>() < DOMINANT_REGION_PROB {
            g.dominant_region
        } else {
            *Region::ALL.choose(&mut rng).expect("nonempty")
        };
        regions.insert(h as u32, region);
    }

    let mut patients = Vec::with_capacity(config.n_hospitals * config.patients_per_hospital);
    let mut eta_mort = Vec::with_capacity(patients.capacity());
    let mut eta_stay = Vec::with_capacity(patients.capacity());
    for h in 0..config.n_hospitals {
        let gi = hospital_group[h];
        let g = &groups[gi];
        let row = prevalence.row(h);
        for _ in 0..config.patients_per_hospital {
            let n_dx = match rng.random::<f64>() {
                u if u < 0.5 => 1,
                u if u < 0.85 => 2,
                _ => 3,
            };
            let mut weights = g.diagnosis_weights.clone();
            let mut diagnoses = Vec::with_capacity(n_dx);
            for _ in 0..n_dx {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = n_diag - 1;
                for (c, &w) in weights.iter().enumerate() {
                    if u < w {
                        pick = c;
                        break;
                    }
                    u -= w;
                }
                diagnoses.push(pick);
                weights[pick] = 0.0;
            }
            diagnoses.sort_unstable();

            let mut prob: Vec<f64> = row.to_vec();
            for &dx in &diagnoses {
                for &j in &diagnosis_drugs[dx] {
                    prob[j] = (prob[j] + DIAGNOSIS_DRUG_BOOST).min(MAX_PREVALENCE);
                }
            }
            let drugs: Vec<usize> = (0..d).filter(|&j| rng.random::<f64>() < prob[j]).collect();

            let linear = |shared: &[f64], group: &[f64], diag: &[f64]| -> f64 {
                drugs.iter().map(|&j| shared[j] + group[j]).sum::<f64>()
                    + diagnoses.iter().map(|&dx| diag[dx]).sum::<f64>()
            };
            eta_mort.push(g.mortality_offset + linear(&shared_mort, &g.mortality_weights, &diag_mort));
            eta_stay.push(
                g.stay_offset + linear(&shared_stay, &g.stay_weights, &diag_stay) + normal(&mut rng, STAY_NOISE_SD),
            );
            patients.push(PatientRecord {
                patient_id: patients.len() as u64,
                hospital_id: h as u32,
                mortality: 0,
                unit_stay_minutes: 0,
                diagnoses,
                drugs,
            });
        }
    }

    let counts: Vec<f64> = patients.iter().map(|p| p.drugs.len() as f64).collect();
    decouple_count(&mut eta_mort, &counts, config.mortality_rate, DRUG_COUNT_RISK_RATIO);
    decouple_count(&mut eta_stay, &counts, config.prolonged_stay_rate, DRUG_COUNT_RISK_RATIO);
    let intercept = solve_intercept(&eta_mort, config.mortality_rate);
    for e in eta_mort.iter_mut() {
        *e += intercept;
    }
    for (p, &e) in patients.iter_mut().zip(&eta_mort) {
        p.mortality = u8::from(rng.random::<f64>() < sigmoid(e));
    }
    let stays = calibrate_stays(&eta_stay, config.prolonged_stay_rate, config.mean_stay_minutes);
    for (p, s) in patients.iter_mut().zip(stays) {
        p.unit_stay_minutes = s;
    }

    let dataset = CohortDataset {
        n_features: d,
        patients,
        regions,
    };
    let structure = LatentStructure {
        hospital_group: hospital_group.iter().enumerate().map(|(h, &g)| (h as u32, g)).collect(),
        hospital_prevalence: prevalence,
        mortality_logit: eta_mort,
    };
    Ok((dataset, structure))
}

/// Random `train_per` / `test_per` split inside every hospital.
pub fn split_within_hospital(
    dataset: &CohortDataset,
    train_per: usize,
    test_per: usize,
    seed: u64,
) -> Result<(CohortDataset, CohortDataset)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (h, mut idx) in dataset.by_hospital() {
        if idx.len() < train_per + test_per {
            return Err(Error::Config(format!(
                "hospital {h} has {} patients, fewer than {train_per} + {test_per}",
                idx.len()
            )));
        }
        idx.shuffle(&mut seed::rng_for(seed, &[0x5B17, h as u64]));
        train.extend_from_slice(&idx[..train_per]);
        test.extend_from_slice(&idx[train_per..train_per + test_per]);
    }
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Hospital-level split: `n_train_hospitals` random hospitals train, the rest test.
pub fn split_by_hospital(
    dataset: &CohortDataset,
    n_train_hospitals: usize,
    seed: u64,
) -> Result<(CohortDataset, CohortDataset)> {
    let mut ids = dataset.hospital_ids();
    if n_train_hospitals == 0 || n_train_hospitals >= ids.len() {
        return Err(Error::Config(format!(
            "n_train_hospitals = {n_train_hospitals} must lie in 1..{}",
            ids.len()
        )));
    }
    ids.shuffle(&mut seed::rng_for(seed, &[0x5B18]));
    let train_ids: std::collections::BTreeSet<u32> = ids[..n_train_hospitals].iter().copied().collect();
    let groups = dataset.by_hospital();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (h, idx) in groups {
        if train_ids.contains(&h) {
            train.extend(idx);
        } else {
            test.extend(idx);
        }
    }
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

const FIXED_COLUMNS: [&str; 6] = ["patient_id", "hospital_id", "region", "mortality", "unit_stay_minutes", "diagnoses"];

pub fn write_cohort_csv<W: Write>(dataset: &CohortDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..dataset.n_features).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    let mut flags = vec![b'0'; dataset.n_features];
    for p in &dataset.patients {
        flags.iter_mut().for_each(|f| *f = b'0');
        for &j in &p.drugs {
            flags[j] = b'1';
        }
        let diag: Vec<&str> = p.diagnoses.iter().map(|&d| DIAGNOSIS_CATEGORIES[d]).collect();
        let mut record: Vec<String> = vec![
            p.patient_id.to_string(),
            p.hospital_id.to_string(),
            dataset.regions[&p.hospital_id].to_string(),
            p.mortality.to_string(),
            p.unit_stay_minutes.to_string(),
            diag.join(";"),
        ];
        record.extend(flags.iter().map(|&f| (f as char).to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_cohort_csv(dataset: &CohortDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_cohort_csv(dataset, std::io::BufWriter::new(file))
}

pub fn read_cohort_csv<R: Read>(reader: R) -> Result<CohortDataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers()?.clone();
    for (i, name) in FIXED_COLUMNS.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(Error::Schema(format!(
                "column {} must be {name:?}, found {:?}",
                i + 1,
                header.get(i).unwrap_or("<missing>")
            )));
        }
    }
    let n_features = header.len() - FIXED_COLUMNS.len();
    for j in 0..n_features {
        let expected = format!("f{j}");
        if header.get(FIXED_COLUMNS.len() + j) != Some(expected.as_str()) {
            return Err(Error::Schema(format!("feature column {} must be named {expected}", FIXED_COLUMNS.len() + j + 1)));
        }
    }
    if n_features == 0 {
        return Err(Error::Schema("no feature columns".into()));
    }
    let mut patients = Vec::new();
    let mut regions = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::parse(Some(row), e.to_string()))?;
        if rec.len() != header.len() {
            return Err(Error::parse(Some(row), format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let num = |col: usize, what: &str| -> Result<i64> {
            rec[col]
                .parse::<i64>()
                .map_err(|_| Error::parse(Some(row), format!("{what}: {:?} is not an integer", &rec[col])))
        };
        let patient_id = num(0, "patient_id")?;
        let hospital_id = num(1, "hospital_id")?;
        if patient_id < 0 || hospital_id < 0 || hospital_id > u32::MAX as i64 {
            return Err(Error::parse(Some(row), "ids must be non-negative"));
        }
        let region: Region = rec[2].parse().map_err(|_| Error::parse(Some(row), format!("unknown region {:?}", &rec[2])))?;
        let mortality = match &rec[3] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(Some(row), format!("mortality must be 0 or 1, found {other:?}"))),
        };
        let stay = num(4, "unit_stay_minutes")?;
        if stay < 0 {
            return Err(Error::parse(Some(row), "negative unit_stay_minutes"));
        }
        let mut diagnoses = Vec::new();
        for tag in rec[5].split(';').filter(|t| !t.is_empty()) {
            let d = DIAGNOSIS_CATEGORIES
                .iter()
                .position(|c| *c == tag)
                .ok_or_else(|| Error::parse(Some(row), format!("unknown diagnosis {tag:?}")))?;
            diagnoses.push(d);
        }
        diagnoses.sort_unstable();
        diagnoses.dedup();
        let mut drugs = Vec::new();
        for j in 0..n_features {
            match &rec[FIXED_COLUMNS.len() + j] {
                "0" => {}
                "1" => drugs.push(j),
                other => {
                    return Err(Error::parse(Some(row), format!("feature f{j} must be 0 or 1, found {other:?}")));
                }
            }
        }
        let hospital_id = hospital_id as u32;
        if let Some(prev) = regions.insert(hospital_id, region) {
            if prev != region {
                return Err(Error::parse(Some(row), format!("hospital {hospital_id} listed in two regions")));
            }
        }
        patients.push(PatientRecord {
            patient_id: patient_id as u64,
            hospital_id,
            mortality,
            unit_stay_minutes: stay,
            diagnoses,
            drugs,
        });
    }
    Ok(CohortDataset {
        n_features,
        patients,
        regions,
    })
}

pub fn load_cohort_csv(path: &Path) -> Result<CohortDataset> {
    let file = std::fs::File::open(path)?;
    read_cohort_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_hospitals: 6,
            patients_per_hospital: 30,
            n_latent_groups: 3,
            n_features: 140,
            seed: 5,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn prolonged_stay_boundary() {
        assert_eq!(label_prolonged_stay(11_520).unwrap(), 1);
        assert_eq!(label_prolonged_stay(11_519).unwrap(), 0);
        assert_eq!(label_prolonged_stay(3_858).unwrap(), 0);
        assert!(label_prolonged_stay(-1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig { n_latent_groups: 7, ..small() }.validate().is_err());
        assert!(GeneratorConfig { mortality_rate: 1.0, ..small() }.validate().is_err());
        assert!(small().validate().is_ok());
    }

    #[test]
    fn generation_is_deterministic_and_binary() {
        let a = generate_cohort(&small()).unwrap();
        let b = generate_cohort(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 180);
        assert!(a.patients.iter().all(|p| p.drugs.iter().all(|&j| j < 140)));
        let c = generate_cohort(&GeneratorConfig { seed: 6, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let ds = generate_cohort(&small()).unwrap();
        let mut buf = Vec::new();
        write_cohort_csv(&ds, &mut buf).unwrap();
        let back = read_cohort_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);

        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let fields: Vec<&str> = lines[3].split(',').collect();
        let mut bad = fields.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let last = bad.len() - 1;
        bad[last] = "2".into();
        lines[3] = bad.join(",");
        match read_cohort_csv(lines.join("\n").as_bytes()) {
            Err(Error::Parse { row: Some(3), .. }) => {}
            other => panic!("expected parse error at row 3, got {other:?}"),
        }
        let renamed = text.replacen("hospital_id", "hospital", 1);
        assert!(matches!(read_cohort_csv(renamed.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn splits_partition_the_cohort() {
        let ds = generate_cohort(&small()).unwrap();
        let (tr, te) = split_within_hospital(&ds, 20, 10, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (120, 60));
        assert!(split_within_hospital(&ds, 25, 10, 1).is_err());
        let (tr, te) = split_by_hospital(&ds, 4, 1).unwrap();
        assert_eq!((tr.regions.len(), te.regions.len()), (4, 2));
        assert_eq!(tr.len() + te.len(), ds.len());
        assert!(split_by_hospital(&ds, 6, 1).is_err());
    }

    #[test]
    fn stay_calibration_hits_targets() {
        let z: Vec<f64> = (0..10_000).map(|i| ((i as f64) * 0.618).sin() * 2.0).collect();
        let stays = calibrate_stays(&z, 0.06, 3858.0);
        let tail = stays.iter().filter(|&&s| s >= PROLONGED_STAY_MINUTES).count() as f64 / 10_000.0;
        let mean = stays.iter().map(|&s| s as f64).sum::<f64>() / 10_000.0;
        assert!((tail - 0.06).abs() < 0.002, "tail {tail}");
        assert!((mean / 3858.0 - 1.0).abs() < 0.02, "mean {mean}");
    }
}

//! ROC AUC, average precision and diagnosis enrichment.

use std::cmp::Ordering;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::{Error, Result, Scalar};

/// Adjusted p-value threshold for flagging an overrepresented diagnosis.
pub const ENRICHMENT_ALPHA: f64 = 0.05;

/// Scores paired with binary labels.
#[derive(Debug, Clone)]
pub struct ScoredLabels<T> {
    scores: Vec<T>,
    labels: Vec<u8>,
}

impl<T: Scalar> ScoredLabels<T> {
    pub fn new(scores: Vec<T>, labels: Vec<u8>) -> Result<Self> {
        validate(&scores, &labels)?;
        Ok(ScoredLabels { scores, labels })
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn roc_auc(&self) -> Result<f64> {
        roc_auc(&self.scores, &self.labels)
    }

    pub fn pr_auc(&self) -> Result<f64> {
        pr_auc(&self.scores, &self.labels)
    }
}

fn validate<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim("scored labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::Empty("no scored examples".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Metric("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    Ok(())
}

fn descending<T: Scalar>(scores: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Normalized Mann–Whitney statistic: the fraction of positive/negative
/// pairs ranked correctly, ties counting one half.
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    validate(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("ROC AUC needs at least one positive and one negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // sum of midranks (1-based) of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_block = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += midrank * pos_in_block as f64;
        i = j;
    }
    let p = n_pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// Average precision: Σ over descending distinct thresholds of
/// (recall increase × precision at that threshold). Tied scores form one step.
pub fn pr_auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    validate(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 {
        return Err(Error::Metric("average precision needs at least one positive".into()));
    }
    let order = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut block_tp = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                block_tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += block_tp;
        if block_tp > 0 {
            ap += (block_tp as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
        i = j;
    }
    Ok(ap)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Upper tail `P(X ≥ observed)` of the hypergeometric distribution for
/// `draws` items taken without replacement from `population` items of which
/// `successes` are marked. Evaluated in log space.
pub fn hypergeometric_sf(population: u64, successes: u64, draws: u64, observed: u64) -> Result<f64> {
    if successes > population || draws > population {
        return Err(Error::Config(format!(
            "hypergeometric: successes {successes} and draws {draws} must not exceed population {population}"
        )));
    }
    let lo = draws.saturating_sub(population - successes);
    let hi = draws.min(successes);
    if observed <= lo {
        return Ok(1.0);
    }
    if observed > hi {
        return Ok(0.0);
    }
    let denom = ln_choose(population, draws);
    let logs: Vec<f64> = (observed..=hi)
        .map(|x| ln_choose(successes, x) + ln_choose(population - successes, draws - x) - denom)
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

/// Benjamini–Hochberg step-up adjusted p-values, returned in input order.
pub fn benjamini_hochberg(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap_or(Ordering::Equal));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        let candidate = p_values[idx] * m as f64 / (rank + 1) as f64;
        running = running.min(candidate);
        adjusted[idx] = running.min(1.0);
    }
    adjusted
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnrichmentRow {
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

#[derive(Debug, Clone, Default)]
pub struct EnrichmentResult {
    pub rows: Vec<EnrichmentRow>,
    /// Communities without members, which were not tested.
    pub skipped_communities: Vec<usize>,
}

impl EnrichmentResult {
    pub fn overrepresented(&self) -> impl Iterator<Item = &EnrichmentRow> {
        self.rows.iter().filter(|r| r.overrepresented)
    }
}

/// One-sided hypergeometric test of every (community, diagnosis) pair with
/// Benjamini–Hochberg adjustment across all tests.
///
/// `community_of[i]` is patient `i`'s community in `0..k`; `diagnoses_of[i]`
/// lists indices into `categories`.
pub fn enrichment(
    community_of: &[usize],
    diagnoses_of: &[Vec<usize>],
    k: usize,
    categories: &[&str],
) -> Result<EnrichmentResult> {
    if community_of.len() != diagnoses_of.len() {
        return Err(Error::dim("enrichment patients", community_of.len(), diagnoses_of.len()));
    }
    if community_of.is_empty() {
        return Err(Error::Empty("enrichment over zero patients".into()));
    }
    let population = community_of.len() as u64;
    let mut size = vec![0u64; k];
    let mut totals = vec![0u64; categories.len()];
    let mut overlap = vec![vec![0u64; categories.len()]; k];
    for (&c, diags) in community_of.iter().zip(diagnoses_of) {
        if c >= k {
            return Err(Error::dim("community index", k, c + 1));
        }
        size[c] += 1;
        let mut seen = diags.clone();
        seen.sort_unstable();
        seen.dedup();
        for d in seen {
            if d >= categories.len() {
                return Err(Error::dim("diagnosis index", categories.len(), d + 1));
            }
            totals[d] += 1;
            overlap[c][d] += 1;
        }
    }
    let mut result = EnrichmentResult::default();
    for c in 0..k {
        if size[c] == 0 {
            log::info!("community {c} has no members; skipped in enrichment");
            result.skipped_communities.push(c);
            continue;
        }
        for (d, name) in categories.iter().enumerate() {
            let p = hypergeometric_sf(population, totals[d], size[c], overlap[c][d])?;
            result.rows.push(EnrichmentRow {
                community: c,
                diagnosis: name.to_string(),
                overlap: overlap[c][d],
                community_size: size[c],
                diagnosis_total: totals[d],
                population,
                p_value: p,
                p_adjusted: p,
                overrepresented: false,
            });
        }
    }
    let raw: Vec<f64> = result.rows.iter().map(|r| r.p_value).collect();
    for (row, adj) in result.rows.iter_mut().zip(benjamini_hochberg(&raw)) {
        row.p_adjusted = adj.max(row.p_value);
        row.overrepresented = row.p_adjusted < ENRICHMENT_ALPHA;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_auc_reference_values() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn pr_auc_reference_values() {
        assert_eq!(pr_auc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(pr_auc(&[0.2, 0.5, 0.1], &[1, 1, 1]).unwrap(), 1.0);
        let ap = pr_auc(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-15);
        assert!(pr_auc(&[0.2, 0.5], &[0, 0]).is_err());
    }

    #[test]
    fn hypergeometric_exact_community() {
        // C(100,5) = 75_287_520
        let p = hypergeometric_sf(100, 5, 5, 5).unwrap();
        assert!((p / (1.0 / 75_287_520.0) - 1.0).abs() < 1e-9);
        assert_eq!(hypergeometric_sf(30, 30, 7, 7).unwrap(), 1.0);
        assert_eq!(hypergeometric_sf(30, 4, 7, 5).unwrap(), 0.0);
    }

    #[test]
    fn bh_step_up_hand_values() {
        let adj = benjamini_hochberg(&[0.01, 0.02, 0.03, 0.04]);
        for a in adj {
            assert!((a - 0.04).abs() < 1e-15);
        }
        let adj = benjamini_hochberg(&[0.04, 0.001, 0.5]);
        assert!((adj[1] - 0.003).abs() < 1e-15);
        assert!((adj[0] - 0.06).abs() < 1e-15);
        assert!((adj[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn universal_diagnosis_is_never_enriched() {
        let community = vec![0, 0, 1, 1, 1, 2];
        let diags = vec![vec![0], vec![0, 1], vec![0], vec![0, 1], vec![0], vec![0]];
        let res = enrichment(&community, &diags, 4, &["general", "renal"]).unwrap();
        assert_eq!(res.skipped_communities, vec![3]);
        for row in res.rows.iter().filter(|r| r.diagnosis == "general") {
            assert_eq!(row.p_value, 1.0);
            assert!(!row.overrepresented);
        }
    }
}

//! OOD detection metrics. Convention throughout: higher score means more
//! OOD, and OOD is the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FPR95 and AUROC for one (in-distribution, OOD) score pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fpr95: f64,
    pub auroc: f64,
    pub threshold_used: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (ood, id) pairs with ood > id, counting ties half. Implemented by ranking
/// the pooled scores with mid-ranks for ties, which matches exhaustive pair
/// counting exactly.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut pooled: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must not be NaN"));

    let mut ood_rank_sum = 0.0_f64;
    let mut i = 0usize;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // 1-based mid-rank of the tied block [i, j]
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        for item in &pooled[i..=j] {
            if item.1 {
                ood_rank_sum += mid_rank;
            }
        }
        i = j + 1;
    }
    let n_ood = ood_scores.len() as f64;
    let n_id = id_scores.len() as f64;
    let u = ood_rank_sum - n_ood * (n_ood + 1.0) / 2.0;
    Ok(u / (n_id * n_ood))
}

/// Smallest threshold accepting at least a `tpr` fraction of in-distribution
/// scores: the ceil(tpr * n)-th order statistic.
pub fn tpr_threshold(id_scores: &[f64], tpr: f64) -> Result<f64> {
    if id_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::ConfigError(format!("tpr must be in (0, 1], got {tpr}")));
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores must not be NaN"));
    // small slack keeps k stable when tpr * n lands on an integer boundary
    let k = ((tpr * sorted.len() as f64 - 1e-9).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[k - 1])
}

/// False positive rate at the given true positive rate: the fraction of OOD
/// scores at or below the acceptance threshold (an OOD sample counted as a
/// false positive when it would be classified in-distribution). Returns
/// `(fpr, threshold)`.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<(f64, f64)> {
    if ood_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let threshold = tpr_threshold(id_scores, tpr)?;
    let fp = ood_scores.iter().filter(|&&s| s <= threshold).count();
    Ok((fp as f64 / ood_scores.len() as f64, threshold))
}

/// Bundle FPR95 and AUROC for one score pair.
pub fn metrics_report(id_scores: &[f64], ood_scores: &[f64]) -> Result<MetricsReport> {
    let (fpr95, threshold_used) = fpr_at_tpr(id_scores, ood_scores, 0.95)?;
    Ok(MetricsReport {
        fpr95,
        auroc: auroc(id_scores, ood_scores)?,
        threshold_used,
        n_id: id_scores.len(),
        n_ood: ood_scores.len(),
    })
}

//! Accuracy, uncertainty-ranked quantile accuracy, AUC-ROC, and the report
//! that collects them per model, perturbation strength and seed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::argmax;

pub const QUANTILES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(predictions: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    Ok(fraction(&correctness(predictions, labels)?))
}

pub fn correctness(predictions: &[Vec<f64>], labels: &[usize]) -> Result<Vec<bool>> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("accuracy", &[predictions.len()], &[labels.len()]));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    Ok(predictions.iter().zip(labels).map(|(p, &y)| argmax(p) == y).collect())
}

fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|c| **c).count() as f64 / flags.len() as f64
}

/// Accuracy over the `⌈q·n⌉` least-uncertain samples for each `q`.
///
/// Samples are sorted stably by score. A group of tied scores that straddles
/// the cut contributes its mean correctness for the slots it fills, which is
/// the expected prefix accuracy over every order of the tie. Constant scores
/// therefore give the overall accuracy at every quantile, and distinct scores
/// give the plain prefix accuracy.
pub fn quantile_accuracy(scores: &[f64], correct: &[bool], quantiles: &[f64]) -> Result<Vec<f64>> {
    if scores.len() != correct.len() {
        return Err(Error::shape("quantile_accuracy", &[scores.len()], &[correct.len()]));
    }
    if scores.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    if let Some(q) = quantiles.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
        return Err(Error::InvalidParameter(format!("quantile {q} outside (0, 1]")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::non_finite("uncertainty scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // (end, correct count) of each run of tied scores
    let mut groups: Vec<(usize, u64)> = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let hits = order[i..j].iter().filter(|&&k| correct[k]).count() as u64;
        groups.push((j, hits));
        i = j;
    }
    let n = scores.len();
    Ok(quantiles
        .iter()
        .map(|&q| {
            let k = ((q * n as f64).ceil() as usize).clamp(1, n);
            let (mut start, mut full) = (0usize, 0u64);
            for &(end, hits) in &groups {
                if end <= k {
                    full += hits;
                    start = end;
                    continue;
                }
                if start < k {
                    // exact rational (full·g + taken·hits) / (k·g)
                    let g = (end - start) as u128;
                    let taken = (k - start) as u128;
                    let num = full as u128 * g + taken * hits as u128;
                    return num as f64 / (k as u128 * g) as f64;
                }
                break;
            }
            full as f64 / k as f64
        })
        .collect())
}

/// Probability that an incorrect sample scores higher than a correct one,
/// ties counting half, via average ranks.
pub fn auc_roc(scores: &[f64], correct: &[bool]) -> Result<f64> {
    if scores.len() != correct.len() {
        return Err(Error::shape("auc_roc", &[scores.len()], &[correct.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::non_finite("uncertainty scores"));
    }
    let positives = correct.iter().filter(|c| !**c).count();
    let negatives = correct.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Degenerate(
            "AUC-ROC needs at least one correct and one incorrect prediction".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps half ranks integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean (i + j + 2) / 2
        let twice_mean = (i + j + 2) as u128;
        let hits = order[i..=j].iter().filter(|&&k| !correct[k]).count() as u128;
        rank_sum2 += twice_mean * hits;
        i = j + 1;
    }
    let (p, q) = (positives as u128, negatives as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

/// Metrics of one model on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub accuracy: f64,
    /// Accuracy at each entry of [`QUANTILES`].
    pub quantile_accuracy: Vec<f64>,
    /// `None` when every prediction is correct (or every one wrong).
    pub auc_roc: Option<f64>,
    pub mean_uncertainty: f64,
}

impl ModelMetrics {
    pub fn compute(predictions: &[Vec<f64>], labels: &[usize], scores: &[f64]) -> Result<Self> {
        let correct = correctness(predictions, labels)?;
        let auc = match auc_roc(scores, &correct) {
            Ok(a) => Some(a),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            accuracy: fraction(&correct),
            quantile_accuracy: quantile_accuracy(scores, &correct, &QUANTILES)?,
            auc_roc: auc,
            mean_uncertainty: scores.iter().sum::<f64>() / scores.len() as f64,
        })
    }

    /// Elementwise mean, used for the expected single-model baseline.
    pub fn average(items: &[ModelMetrics]) -> Result<Self> {
        let n = items.len();
        if n == 0 {
            return Err(Error::Empty("metrics".into()));
        }
        let mean = |f: &dyn Fn(&ModelMetrics) -> f64| items.iter().map(f).sum::<f64>() / n as f64;
        let aucs: Vec<f64> = items.iter().filter_map(|m| m.auc_roc).collect();
        Ok(Self {
            accuracy: mean(&|m| m.accuracy),
            quantile_accuracy: (0..items[0].quantile_accuracy.len())
                .map(|q| mean(&|m| m.quantile_accuracy[q]))
                .collect(),
            auc_roc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            mean_uncertainty: mean(&|m| m.mean_uncertainty),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model: String,
    pub epsilon: f64,
    pub metrics: ModelMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub records: Vec<ModelRecord>,
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub model: String,
    pub epsilon: f64,
    pub accuracy: Spread,
    pub quantile_accuracy: Vec<Spread>,
    pub auc_roc: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub dataset: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub members: usize,
    pub quantiles: Vec<f64>,
    pub train_windows: usize,
    pub validation_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    pub runs: Vec<SeedReport>,
    pub summary: Vec<SummaryRecord>,
}

impl EvalReport {
    /// Assembles the report and its cross-seed summary. Records are matched
    /// across seeds by model name and epsilon.
    pub fn new(metadata: ReportMetadata, runs: Vec<SeedReport>) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::Empty("report runs".into()))?;
        let mut summary = Vec::new();
        for rec in &first.records {
            let same: Vec<&ModelMetrics> = runs
                .iter()
                .filter_map(|r| {
                    r.records
                        .iter()
                        .find(|o| o.model == rec.model && o.epsilon == rec.epsilon)
                        .map(|o| &o.metrics)
                })
                .collect();
            let spread = |f: &dyn Fn(&ModelMetrics) -> f64| {
                Spread::of(&same.iter().map(|m| f(m)).collect::<Vec<_>>()).expect("at least one run")
            };
            let aucs: Vec<f64> = same.iter().filter_map(|m| m.auc_roc).collect();
            summary.push(SummaryRecord {
                model: rec.model.clone(),
                epsilon: rec.epsilon,
                accuracy: spread(&|m| m.accuracy),
                quantile_accuracy: (0..rec.metrics.quantile_accuracy.len())
                    .map(|q| spread(&|m| m.quantile_accuracy[q]))
                    .collect(),
                auc_roc: Spread::of(&aucs),
            });
        }
        Ok(Self {
            metadata,
            runs,
            summary,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per seed × model × ε × quantile, then `mean`/`std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,model,epsilon,quantile,accuracy,auc_roc\n");
        let qs = &self.metadata.quantiles;
        let opt = |v: Option<f64>| v.map_or(String::new(), |a| format!("{a}"));
        for run in &self.runs {
            for r in &run.records {
                for (q, acc) in qs.iter().zip(&r.metrics.quantile_accuracy) {
                    let _ = writeln!(out, "{},{},{},{q},{acc},{}", run.seed, r.model, r.epsilon, opt(r.metrics.auc_roc));
                }
            }
        }
        for s in &self.summary {
            for (q, acc) in qs.iter().zip(&s.quantile_accuracy) {
                let _ = writeln!(out, "mean,{},{},{q},{},{}", s.model, s.epsilon, acc.mean, opt(s.auc_roc.map(|a| a.mean)));
                let _ = writeln!(out, "std,{},{},{q},{},{}", s.model, s.epsilon, acc.std, opt(s.auc_roc.map(|a| a.std)));
            }
        }
        out
    }

    /// Human-readable table of the summary.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10} {:>7} {:>16} {:>16}\n", "model", "eps", "accuracy %", "AUC-ROC");
        for s in &self.summary {
            let auc = s
                .auc_roc
                .map_or("n/a".to_string(), |a| format!("{:.3} ± {:.3}", a.mean, a.std));
            let _ = writeln!(
                out,
                "{:<10} {:>7} {:>16} {:>16}",
                s.model,
                s.epsilon,
                format!("{:.2} ± {:.2}", 100.0 * s.accuracy.mean, 100.0 * s.accuracy.std),
                auc
            );
        }
        out
    }
}

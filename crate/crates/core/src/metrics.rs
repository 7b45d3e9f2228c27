//! Multi-label evaluation: micro/macro F1, micro/macro AUC, precision at k,
//! and aggregation over training replications.
//!
//! Conventions: decisions are `p >= threshold`; an F1 with an empty
//! denominator is 0; macro-AUC skips labels lacking either class; P@k always
//! divides by k; top-k ties go to the lower label index.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{HtdsError, Result};

pub const METRIC_NAMES: [&str; 5] = ["micro_f1", "macro_f1", "micro_auc", "macro_auc", "p_at_5"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

fn check_shapes(probs: &[Vec<f64>], gold: &[Vec<bool>]) -> Result<usize> {
    if probs.len() != gold.len() {
        return Err(HtdsError::Shape(format!("{} prediction rows for {} gold rows", probs.len(), gold.len())));
    }
    let n_labels = probs.first().map_or(0, Vec::len);
    if probs.iter().any(|r| r.len() != n_labels) || gold.iter().any(|r| r.len() != n_labels) {
        return Err(HtdsError::Shape("ragged prediction or gold rows".into()));
    }
    Ok(n_labels)
}

pub fn label_counts(probs: &[Vec<f64>], gold: &[Vec<bool>], threshold: f64) -> Vec<Counts> {
    let n_labels = probs.first().map_or(0, Vec::len);
    let mut counts = vec![Counts::default(); n_labels];
    for (p, g) in probs.iter().zip(gold) {
        for l in 0..n_labels {
            match (p[l] >= threshold, g[l]) {
                (true, true) => counts[l].tp += 1,
                (true, false) => counts[l].fp += 1,
                (false, true) => counts[l].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    counts
}

pub fn micro_f1(probs: &[Vec<f64>], gold: &[Vec<bool>], threshold: f64) -> f64 {
    let total = label_counts(probs, gold, threshold).into_iter().fold(Counts::default(), |a, c| Counts {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
    });
    total.f1()
}

pub fn macro_f1(probs: &[Vec<f64>], gold: &[Vec<bool>], threshold: f64) -> f64 {
    let counts = label_counts(probs, gold, threshold);
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().map(Counts::f1).sum::<f64>() / counts.len() as f64
}

/// Mann-Whitney AUC: probability a random positive outscores a random
/// negative, ties counting one half. `None` without both classes.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // 1-based average ranks over tie groups, doubled to stay integral
    let mut pos_rank2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] {
                pos_rank2 += rank2;
            }
        }
        i = j + 1;
    }
    let np = n_pos as u128;
    let u2 = pos_rank2 - np * (np + 1);
    Some(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

pub fn micro_auc(probs: &[Vec<f64>], gold: &[Vec<bool>]) -> Result<f64> {
    check_shapes(probs, gold)?;
    let scores: Vec<f64> = probs.iter().flatten().copied().collect();
    let labels: Vec<bool> = gold.iter().flatten().copied().collect();
    auc(&scores, &labels).ok_or_else(|| HtdsError::Data("micro-AUC undefined: pooled gold is single-class".into()))
}

pub fn macro_auc(probs: &[Vec<f64>], gold: &[Vec<bool>]) -> Result<f64> {
    let n_labels = check_shapes(probs, gold)?;
    let per_label: Vec<f64> = (0..n_labels)
        .filter_map(|l| {
            let s: Vec<f64> = probs.iter().map(|r| r[l]).collect();
            let y: Vec<bool> = gold.iter().map(|r| r[l]).collect();
            auc(&s, &y)
        })
        .collect();
    if per_label.is_empty() {
        return Err(HtdsError::Data("macro-AUC undefined: no label has both classes".into()));
    }
    Ok(per_label.iter().sum::<f64>() / per_label.len() as f64)
}

/// Indices of the `k` highest scores, ties to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn precision_at_k(probs: &[Vec<f64>], gold: &[Vec<bool>], k: usize) -> Result<f64> {
    let n_labels = check_shapes(probs, gold)?;
    if k == 0 || n_labels < k {
        return Err(HtdsError::Data(format!("precision at {k} needs at least {k} labels, have {n_labels}")));
    }
    if probs.is_empty() {
        return Err(HtdsError::Data("precision at k over zero stays".into()));
    }
    let total: f64 = probs
        .iter()
        .zip(gold)
        .map(|(p, g)| top_k(p, k).into_iter().filter(|&l| g[l]).count() as f64 / k as f64)
        .sum();
    Ok(total / probs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub micro_auc: f64,
    pub macro_auc: f64,
    pub p_at_5: f64,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn compute(probs: &[Vec<f64>], gold: &[Vec<bool>], threshold: f64) -> Result<Self> {
        check_shapes(probs, gold)?;
        if probs.is_empty() {
            return Err(HtdsError::Data("cannot evaluate zero stays".into()));
        }
        Ok(MetricsReport {
            micro_f1: micro_f1(probs, gold, threshold),
            macro_f1: macro_f1(probs, gold, threshold),
            micro_auc: micro_auc(probs, gold)?,
            macro_auc: macro_auc(probs, gold)?,
            p_at_5: precision_at_k(probs, gold, 5)?,
            threshold,
        })
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "micro_f1" => Some(self.micro_f1),
            "macro_f1" => Some(self.macro_f1),
            "micro_auc" => Some(self.micro_auc),
            "macro_auc" => Some(self.macro_auc),
            "p_at_5" => Some(self.p_at_5),
            _ => None,
        }
    }

    /// Flat `key=value` block.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for m in METRIC_NAMES {
            s.push_str(&format!("{m}={}\n", self.get(m).expect("known metric")));
        }
        s.push_str(&format!("threshold={}\n", self.threshold));
        s
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("serialisable report")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
}

pub fn mean_sd(xs: &[f64]) -> MeanSd {
    let n = xs.len();
    if n == 0 {
        return MeanSd { mean: f64::NAN, sd: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    MeanSd { mean, sd }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_runs: usize,
    pub metrics: Vec<(String, MeanSd)>,
}

impl AggregateReport {
    pub fn get(&self, metric: &str) -> Option<MeanSd> {
        self.metrics.iter().find(|(m, _)| m == metric).map(|(_, v)| *v)
    }
}

impl fmt::Display for AggregateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n_runs={}", self.n_runs)?;
        for (m, v) in &self.metrics {
            writeln!(f, "{m}_mean={}\n{m}_sd={}", v.mean, v.sd)?;
        }
        Ok(())
    }
}

pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(HtdsError::Data("no runs to aggregate".into()));
    }
    let metrics = METRIC_NAMES
        .iter()
        .map(|m| {
            let xs: Vec<f64> = reports.iter().map(|r| r.get(m).expect("known metric")).collect();
            (m.to_string(), mean_sd(&xs))
        })
        .collect();
    Ok(AggregateReport { n_runs: reports.len(), metrics })
}

/// Two-sided Welch t-test p-value. Two groups with zero variance give 1 for
/// equal means and 0 otherwise. `None` when a group has fewer than two runs.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let sa = mean_sd(a);
    let sb = mean_sd(b);
    let va = sa.sd * sa.sd / a.len() as f64;
    let vb = sb.sd * sb.sd / b.len() as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        return Some(if sa.mean == sb.mean { 1.0 } else { 0.0 });
    }
    let t = (sa.mean - sb.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub a: MeanSd,
    pub b: MeanSd,
    pub p_value: Option<f64>,
}

impl MetricComparison {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value.is_some_and(|p| p < alpha)
    }
}

/// Per-metric means, SDs and Welch p-values for two run groups.
pub fn compare_groups(a: &[MetricsReport], b: &[MetricsReport]) -> Result<Vec<MetricComparison>> {
    if a.is_empty() || b.is_empty() {
        return Err(HtdsError::Data("both run groups need at least one report".into()));
    }
    Ok(METRIC_NAMES
        .iter()
        .map(|m| {
            let xa: Vec<f64> = a.iter().map(|r| r.get(m).expect("known metric")).collect();
            let xb: Vec<f64> = b.iter().map(|r| r.get(m).expect("known metric")).collect();
            MetricComparison { metric: m.to_string(), a: mean_sd(&xa), b: mean_sd(&xb), p_value: welch_t_test(&xa, &xb) }
        })
        .collect())
}

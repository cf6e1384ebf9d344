//! Predictive and temporal-reliability metrics over prediction traces.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{NsktError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: u32,
    pub skill: u32,
    pub quiz: u32,
    pub label: bool,
    pub prob: f64,
}

/// One student's queried steps in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentTrace {
    pub student: u32,
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Every pair or query weighs the same.
    #[default]
    Micro,
    /// Per-student values averaged over students.
    Macro,
}

fn pooled(traces: &[StudentTrace]) -> (Vec<f64>, Vec<bool>) {
    traces
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| (s.prob, s.label)))
        .unzip()
}

/// Rank-based AUC; tied positive/negative pairs count one half.
pub fn auc_scores(probs: &[f64], labels: &[bool]) -> Result<f64> {
    assert_eq!(probs.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(NsktError::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    // Doubled mid-ranks keep the sum integral.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && probs[idx[j + 1]] == probs[idx[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u64;
        rank_sum2 += twice_mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        i = j + 1;
    }
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

pub fn auc(traces: &[StudentTrace]) -> Result<f64> {
    let (p, y) = pooled(traces);
    auc_scores(&p, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub accuracy: f64,
    pub low: ClassMetrics,
    pub high: ClassMetrics,
    /// Names of ratios whose denominator was zero and were reported as 0.
    pub zero_division: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(tp: usize, fp: usize, fn_: usize, class: &str, flags: &mut Vec<String>) -> ClassMetrics {
    let precision = ratio(tp, tp + fp, &format!("{class}.precision"), flags);
    let recall = ratio(tp, tp + fn_, &format!("{class}.recall"), flags);
    let f1 = if precision + recall == 0.0 {
        flags.push(format!("{class}.f1"));
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics { precision, recall, f1 }
}

/// Predicted High when `p ≥ threshold`.
pub fn confusion_scores(probs: &[f64], labels: &[bool], threshold: f64) -> Result<Confusion> {
    if probs.is_empty() {
        return Err(NsktError::UndefinedMetric("confusion metrics of an empty trace".into()));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut flags = Vec::new();
    let high = class_metrics(tp, fp, fn_, "high", &mut flags);
    let low = class_metrics(tn, fn_, fp, "low", &mut flags);
    Ok(Confusion {
        accuracy: (tp + tn) as f64 / probs.len() as f64,
        low,
        high,
        zero_division: flags,
    })
}

pub fn confusion_metrics(traces: &[StudentTrace], threshold: f64) -> Result<Confusion> {
    let (p, y) = pooled(traces);
    confusion_scores(&p, &y, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageErrors {
    /// Error percentages per third of each student's queries.
    pub early: f64,
    pub middle: f64,
    pub late: f64,
    pub counts: [usize; 3],
}

/// Stage of query index `i` out of `n`: boundaries at ⌊n/3⌋ and ⌊2n/3⌋.
pub fn stage_of(i: usize, n: usize) -> usize {
    if i < n / 3 {
        0
    } else if i < 2 * n / 3 {
        1
    } else {
        2
    }
}

pub fn stage_errors(traces: &[StudentTrace]) -> StageErrors {
    let mut errors = [0usize; 3];
    let mut counts = [0usize; 3];
    for tr in traces {
        let n = tr.steps.len();
        for (i, s) in tr.steps.iter().enumerate() {
            let st = stage_of(i, n);
            counts[st] += 1;
            if (s.prob >= 0.5) != s.label {
                errors[st] += 1;
            }
        }
    }
    let pct = |k: usize| {
        if counts[k] == 0 {
            0.0
        } else {
            100.0 * errors[k] as f64 / counts[k] as f64
        }
    };
    StageErrors {
        early: pct(0),
        middle: pct(1),
        late: pct(2),
        counts,
    }
}

/// Consecutive same-skill step pairs `(earlier, later)` within a trace.
pub fn same_skill_pairs(trace: &StudentTrace) -> Vec<(TraceStep, TraceStep)> {
    let mut last: HashMap<u32, TraceStep> = HashMap::new();
    let mut out = Vec::new();
    for s in &trace.steps {
        if let Some(prev) = last.insert(s.skill, *s) {
            out.push((prev, *s));
        }
    }
    out
}

fn pair_metric(traces: &[StudentTrace], pooling: Pooling, name: &str, f: impl Fn(&TraceStep, &TraceStep) -> f64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut per_student = Vec::new();
    for tr in traces {
        let pairs = same_skill_pairs(tr);
        if pairs.is_empty() {
            continue;
        }
        let s: f64 = pairs.iter().map(|(a, b)| f(a, b)).sum();
        total += s;
        count += pairs.len();
        per_student.push(s / pairs.len() as f64);
    }
    if count == 0 {
        return Err(NsktError::UndefinedMetric(format!("{name} needs at least one same-skill pair")));
    }
    Ok(match pooling {
        Pooling::Micro => total / count as f64,
        Pooling::Macro => per_student.iter().sum::<f64>() / per_student.len() as f64,
    })
}

/// Mean absolute change of the prediction between consecutive attempts on
/// the same skill.
pub fn volatility(traces: &[StudentTrace], pooling: Pooling) -> Result<f64> {
    pair_metric(traces, pooling, "volatility", |a, b| (b.prob - a.prob).abs())
}

/// Share of same-skill updates moving against the earlier attempt's label.
pub fn inconsistency(traces: &[StudentTrace], pooling: Pooling) -> Result<f64> {
    pair_metric(traces, pooling, "inconsistency", |a, b| {
        let delta = b.prob - a.prob;
        let mismatch = (a.label && delta < 0.0) || (!a.label && delta > 0.0);
        mismatch as u8 as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub per_class: Confusion,
    pub stage_errors: StageErrors,
    pub volatility: Option<f64>,
    pub inconsistency: Option<f64>,
    pub n_queries: usize,
}

/// All metrics at once; undefined ones are reported as `None`.
pub fn report(traces: &[StudentTrace], pooling: Pooling) -> Result<MetricsReport> {
    let per_class = confusion_metrics(traces, 0.5)?;
    Ok(MetricsReport {
        auc: auc(traces).ok(),
        accuracy: per_class.accuracy,
        per_class,
        stage_errors: stage_errors(traces),
        volatility: volatility(traces, pooling).ok(),
        inconsistency: inconsistency(traces, pooling).ok(),
        n_queries: traces.iter().map(|t| t.steps.len()).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(steps: &[(u32, bool, f64)]) -> StudentTrace {
        StudentTrace {
            student: 0,
            steps: steps
                .iter()
                .enumerate()
                .map(|(i, &(skill, label, prob))| TraceStep {
                    t: i as u32 + 1,
                    skill,
                    quiz: skill,
                    label,
                    prob,
                })
                .collect(),
        }
    }

    #[test]
    fn auc_hand_values() {
        assert_eq!(auc_scores(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc_scores(&[0.4, 0.4, 0.4], &[true, false, true]).unwrap(), 0.5);
        assert!(auc_scores(&[0.3, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn confusion_hand_values() {
        let c = confusion_scores(&[0.9, 0.1], &[true, false], 0.5).unwrap();
        assert_eq!(c.accuracy, 1.0);
        assert_eq!(c.high.f1, 1.0);
        assert_eq!(c.low.f1, 1.0);
        let c = confusion_scores(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false], 0.5).unwrap();
        assert_eq!(c.low.recall, 0.0);
        assert!(c.zero_division.contains(&"low.precision".to_string()));
    }

    #[test]
    fn volatility_hand_value() {
        let tr = trace(&[(0, true, 0.5), (0, true, 0.7), (0, true, 0.6)]);
        assert!((volatility(&[tr], Pooling::Micro).unwrap() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn rise_after_incorrect_is_a_mismatch() {
        let tr = trace(&[(0, false, 0.6), (0, true, 0.7)]);
        assert_eq!(inconsistency(&[tr], Pooling::Micro).unwrap(), 1.0);
        let tr = trace(&[(0, false, 0.6), (0, true, 0.5), (0, true, 0.8), (0, true, 0.8)]);
        assert_eq!(inconsistency(&[tr], Pooling::Micro).unwrap(), 0.0);
    }

    #[test]
    fn pair_metrics_need_pairs() {
        let tr = trace(&[(0, true, 0.5), (1, true, 0.7)]);
        assert!(volatility(std::slice::from_ref(&tr), Pooling::Micro).is_err());
        assert!(inconsistency(&[tr], Pooling::Micro).is_err());
    }

    #[test]
    fn stage_boundaries() {
        let all_wrong = trace(&[(0, true, 0.1), (0, false, 0.9), (0, true, 0.2)]);
        let s = stage_errors(&[all_wrong]);
        assert_eq!((s.early, s.middle, s.late), (100.0, 100.0, 100.0));
        let steps: Vec<_> = (0..9).map(|i| (0, true, if i < 3 { 0.1 } else { 0.9 })).collect();
        let s = stage_errors(&[trace(&steps)]);
        assert_eq!((s.early, s.middle, s.late), (100.0, 0.0, 0.0));
    }

    #[test]
    fn macro_pooling_weights_students_equally() {
        let a = trace(&[(0, true, 0.0), (0, true, 1.0)]);
        let b = trace(&[(0, true, 0.5), (0, true, 0.5), (0, true, 0.5)]);
        let micro = volatility(&[a.clone(), b.clone()], Pooling::Micro).unwrap();
        let macro_ = volatility(&[a, b], Pooling::Macro).unwrap();
        assert!((micro - 1.0 / 3.0).abs() < 1e-12);
        assert!((macro_ - 0.5).abs() < 1e-12);
    }

    fn pairwise_auc(p: &[f64], y: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for i in 0..p.len() {
            for j in 0..p.len() {
                if y[i] && !y[j] {
                    total += 1.0;
                    if p[i] > p[j] {
                        wins += 1.0;
                    } else if p[i] == p[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / total
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(
            pts in proptest::collection::vec((0u8..20, any::<bool>()), 2..100),
        ) {
            let p: Vec<f64> = pts.iter().map(|(v, _)| *v as f64 / 20.0).collect();
            let y: Vec<bool> = pts.iter().map(|(_, l)| *l).collect();
            prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
            prop_assert_eq!(auc_scores(&p, &y).unwrap(), pairwise_auc(&p, &y));
        }

        #[test]
        fn auc_invariant_under_monotone_maps(
            pts in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..60),
        ) {
            let p: Vec<f64> = pts.iter().map(|(v, _)| *v).collect();
            let y: Vec<bool> = pts.iter().map(|(_, l)| *l).collect();
            prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
            let q: Vec<f64> = p.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc_scores(&p, &y).unwrap(), auc_scores(&q, &y).unwrap());
        }

        #[test]
        fn stages_partition_queries(lens in proptest::collection::vec(0usize..20, 1..6)) {
            let traces: Vec<_> = lens.iter().map(|&n| trace(&vec![(0, true, 0.7); n])).collect();
            let s = stage_errors(&traces);
            prop_assert_eq!(s.counts.iter().sum::<usize>(), lens.iter().sum::<usize>());
        }

        #[test]
        fn pair_metrics_lie_in_unit_interval(
            steps in proptest::collection::vec((0u32..3, any::<bool>(), 0.0f64..1.0), 2..30),
        ) {
            let tr = trace(&steps);
            if let Ok(v) = volatility(std::slice::from_ref(&tr), Pooling::Micro) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Ok(v) = inconsistency(&[tr], Pooling::Micro) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

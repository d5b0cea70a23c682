use std::collections::{HashMap, VecDeque};

use super::{MetricError, PredictionTable};
use crate::model::{MetricName, MetricSpec};
use crate::parallel::Execution;

/// Scores `pred` against `truth` with the default execution mode.
pub fn score(
    metric: MetricSpec,
    truth: &PredictionTable,
    pred: &PredictionTable,
) -> Result<f64, MetricError> {
    score_with(metric, truth, pred, Execution::default())
}

/// Rows are matched by id, never by position; value columns are matched by
/// position so truth and prediction headers may differ.
pub fn score_with(
    metric: MetricSpec,
    truth: &PredictionTable,
    pred: &PredictionTable,
    execution: Execution,
) -> Result<f64, MetricError> {
    let name = metric.name;
    if truth.is_empty() || pred.is_empty() {
        return Err(MetricError::Empty);
    }
    if truth.columns.is_empty() {
        return Err(MetricError::NoColumns);
    }
    if truth.columns.len() != pred.columns.len() {
        return Err(MetricError::ColumnCount {
            metric: name.to_string(),
            expected: truth.columns.len().to_string(),
            found: pred.columns.len(),
        });
    }
    if !name.is_multi_column() && truth.columns.len() != 1 {
        return Err(MetricError::ColumnCount {
            metric: name.to_string(),
            expected: "1".into(),
            found: truth.columns.len(),
        });
    }
    check_finite(truth)?;
    check_finite(pred)?;
    let order = align(truth, pred)?;
    let t: Vec<&[f64]> = truth.columns.values().map(Vec::as_slice).collect();
    let p: Vec<Vec<f64>> = pred
        .columns
        .values()
        .map(|c| order.iter().map(|&j| c[j]).collect())
        .collect();

    Ok(match name {
        MetricName::Rmse => rmse(t[0], &p[0]),
        MetricName::Mae => mean(t[0].iter().zip(&p[0]).map(|(a, b)| (a - b).abs())),
        MetricName::Mcrmse => mean(t.iter().zip(&p).map(|(tc, pc)| rmse(tc, pc))),
        MetricName::RocAuc => roc_auc(t[0], &p[0], execution)?,
        MetricName::Accuracy => accuracy(t[0], &p[0]),
        MetricName::F1 => f1(t[0], &p[0])?,
        MetricName::CategorizationAccuracy => categorization_accuracy(t[0], &p[0])?,
        MetricName::MeanCosineSimilarity => mean_cosine(&t, &p),
    })
}

fn check_finite(table: &PredictionTable) -> Result<(), MetricError> {
    for (name, col) in &table.columns {
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite {
                column: name.clone(),
                id: table.ids[i].clone(),
            });
        }
    }
    Ok(())
}

/// For each truth row, the index of its prediction row. Duplicate ids pair
/// up in order of appearance.
fn align(truth: &PredictionTable, pred: &PredictionTable) -> Result<Vec<usize>, MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::IdMismatch {
            detail: format!(
                "{} truth rows vs {} prediction rows",
                truth.len(),
                pred.len()
            ),
        });
    }
    let mut by_id: HashMap<&str, VecDeque<usize>> = HashMap::new();
    for (j, id) in pred.ids.iter().enumerate() {
        by_id.entry(id.as_str()).or_default().push_back(j);
    }
    truth
        .ids
        .iter()
        .map(|id| {
            by_id
                .get_mut(id.as_str())
                .and_then(VecDeque::pop_front)
                .ok_or_else(|| MetricError::IdMismatch {
                    detail: format!("no prediction for id `{id}`"),
                })
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn rmse(t: &[f64], p: &[f64]) -> f64 {
    mean(t.iter().zip(p).map(|(a, b)| (a - b) * (a - b))).sqrt()
}

fn binary_labels(metric: MetricName, t: &[f64]) -> Result<Vec<bool>, MetricError> {
    t.iter()
        .map(|&v| match v {
            1.0 => Ok(true),
            0.0 => Ok(false),
            other => Err(MetricError::Undefined {
                metric: metric.to_string(),
                reason: format!("truth label {other} is not 0 or 1"),
            }),
        })
        .collect()
}

/// Exhaustive pair counting. Counts are kept doubled (concordant = 2,
/// tie = 1) so the sum is an exact integer in either execution mode.
fn roc_auc(t: &[f64], p: &[f64], execution: Execution) -> Result<f64, MetricError> {
    let labels = binary_labels(MetricName::RocAuc, t)?;
    type Scored = Vec<(f64, bool)>;
    let (pos, neg): (Scored, Scored) = p.iter().copied().zip(labels).partition(|&(_, l)| l);
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricError::Undefined {
            metric: MetricName::RocAuc.to_string(),
            reason: "truth contains a single class".into(),
        });
    }
    let neg: Vec<f64> = neg.into_iter().map(|(s, _)| s).collect();
    let doubled = execution.sum(&pos, |&(sp, _)| {
        neg.iter()
            .map(|&sn| match sp.partial_cmp(&sn) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            })
            .sum()
    });
    Ok(doubled as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

/// The distinct truth value closest to `v`; ties go to the larger label.
fn nearest_label(labels: &[f64], v: f64) -> f64 {
    let mut best = labels[0];
    for &l in &labels[1..] {
        let (d, db) = ((v - l).abs(), (v - best).abs());
        if d < db || (d == db && l > best) {
            best = l;
        }
    }
    best
}

fn accuracy(t: &[f64], p: &[f64]) -> f64 {
    let mut labels: Vec<f64> = t.to_vec();
    labels.sort_by(f64::total_cmp);
    labels.dedup();
    mean(
        t.iter()
            .zip(p)
            .map(|(a, &b)| f64::from(u8::from(*a == nearest_label(&labels, b)))),
    )
}

/// Positive class is 1; a prediction counts as positive at or above 0.5.
fn f1(t: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    let labels = binary_labels(MetricName::F1, t)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&actual, &score) in labels.iter().zip(p) {
        match (actual, score >= 0.5) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

fn categorization_accuracy(t: &[f64], p: &[f64]) -> Result<f64, MetricError> {
    if let Some(bad) = t.iter().find(|v| v.fract() != 0.0) {
        return Err(MetricError::Undefined {
            metric: MetricName::CategorizationAccuracy.to_string(),
            reason: format!("truth label {bad} is not an integer class"),
        });
    }
    Ok(mean(
        t.iter()
            .zip(p)
            .map(|(a, b)| f64::from(u8::from(*a == b.round()))),
    ))
}

fn mean_cosine(t: &[&[f64]], p: &[Vec<f64>]) -> f64 {
    let rows = t[0].len();
    mean((0..rows).map(|i| {
        let (mut dot, mut nt, mut np) = (0.0, 0.0, 0.0);
        for (tc, pc) in t.iter().zip(p) {
            dot += tc[i] * pc[i];
            nt += tc[i] * tc[i];
            np += pc[i] * pc[i];
        }
        if nt == 0.0 || np == 0.0 {
            0.0
        } else {
            dot / (nt.sqrt() * np.sqrt())
        }
    }))
}

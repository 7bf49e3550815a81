//! Confusion-matrix metrics and the multi-model comparison report.
//!
//! Positive class is toxic (= 1) throughout. Ratios with a zero denominator
//! are reported as absent rather than 0 or NaN.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl Confusion {
    pub fn n(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Tallies prediction/label pairs; both sequences must be binary.
pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<Confusion> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            lhs: vec![predictions.len()],
            rhs: vec![labels.len()],
        });
    }
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        if p > 1 || y > 1 {
            return Err(Error::LabelOutOfRange {
                label: p.max(y) as usize,
                classes: 2,
            });
        }
        match (p, y) {
            (1, 1) => c.true_pos += 1,
            (1, 0) => c.false_pos += 1,
            (0, 1) => c.false_neg += 1,
            (0, 0) => c.true_neg += 1,
            _ => unreachable!(),
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub confusion: Confusion,
    /// tp/(tp+fp); absent when no positive predictions exist.
    pub precision: Option<f64>,
    /// tp/(tp+fn); absent when no positive labels exist.
    pub recall: Option<f64>,
    /// (tp+tn)/n.
    pub accuracy: f64,
}

/// Derives the Table-1-style metric triple from counts.
pub fn metrics(c: Confusion) -> Result<MetricsReport> {
    let n = c.n();
    if n == 0 {
        return Err(Error::EmptyInput("confusion counts"));
    }
    let ratio = |num: usize, den: usize| {
        if den > 0 {
            Some(num as f64 / den as f64)
        } else {
            None
        }
    };
    Ok(MetricsReport {
        confusion: c,
        precision: ratio(c.true_pos, c.true_pos + c.false_pos),
        recall: ratio(c.true_pos, c.true_pos + c.false_neg),
        accuracy: (c.true_pos + c.true_neg) as f64 / n as f64,
    })
}

/// Convenience: confusion then metrics.
pub fn evaluate(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport> {
    metrics(confusion(predictions, labels)?)
}

/// Ready-made report from bare ratio values (no underlying counts), used for
/// reference rows in comparisons.
pub fn report_from_values(
    precision: Option<f64>,
    recall: Option<f64>,
    accuracy: f64,
) -> MetricsReport {
    MetricsReport {
        confusion: Confusion::default(),
        precision,
        recall,
        accuracy,
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "—".to_string(),
    }
}

fn csv_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Renders named results as an aligned text table plus a CSV companion.
/// Rows keep their given order; columns are always precision, recall, acc.
pub fn comparison_report(results: &[(String, MetricsReport)]) -> (String, String) {
    let name_w = results
        .iter()
        .map(|(n, _)| n.chars().count())
        .chain(["model".len()])
        .max()
        .unwrap_or(5);

    let mut text = String::new();
    let header = format!(
        "{:<name_w$} {:<4} {:<4} {:<4}",
        "model", "prec", "rec", "acc"
    );
    text.push_str(header.trim_end());
    text.push('\n');
    let mut csv = String::from("model,precision,recall,accuracy\n");
    for (name, m) in results {
        let line = format!(
            "{:<name_w$} {:<4} {:<4} {:<4}",
            name,
            cell(m.precision),
            cell(m.recall),
            cell(Some(m.accuracy)),
        );
        text.push_str(line.trim_end());
        text.push('\n');
        csv.push_str(&format!(
            "{},{},{},{}\n",
            name,
            csv_cell(m.precision),
            csv_cell(m.recall),
            csv_cell(Some(m.accuracy)),
        ));
    }
    (text, csv)
}

//! Per-class precision / recall / F1 with micro, macro and weighted averages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabelSet;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("gold has {gold} items but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("nothing to score")]
    Empty,
    #[error("class id {id} out of range for {classes} classes")]
    ClassOutOfRange { id: usize, classes: usize },
    #[error("line {line}: {what}")]
    PredictionLine { line: usize, what: String },
    #[error("report JSON: {0}")]
    Json(String),
}

/// Rows are gold classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(gold: &[usize], pred: &[usize], classes: usize) -> Result<Self, MetricsError> {
        if gold.len() != pred.len() {
            return Err(MetricsError::LengthMismatch {
                gold: gold.len(),
                pred: pred.len(),
            });
        }
        if gold.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&g, &p) in gold.iter().zip(pred) {
            if let Some(&id) = [g, p].iter().find(|&&id| id >= classes) {
                return Err(MetricsError::ClassOutOfRange { id, classes });
            }
            counts[g][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    /// Gold row sum.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Predicted column sum.
    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub label: String,
    #[serde(flatten)]
    pub scores: ScoreRow,
    /// Set when precision or recall had a zero denominator and was reported as 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassRow>,
    pub micro: ScoreRow,
    pub macro_avg: ScoreRow,
    pub weighted: ScoreRow,
    pub total_support: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Harmonic mean of precision and recall, from counts: `2tp / (predicted + support)`.
/// Taken from counts so a micro row with `predicted == support` has F1 equal
/// to precision and recall bit for bit.
fn f1(tp: u64, predicted: u64, support: u64) -> f64 {
    ratio(2 * tp, predicted + support).0
}

fn averages(rows: &[ScoreRow]) -> (ScoreRow, ScoreRow) {
    let n = rows.len() as f64;
    let total: u64 = rows.iter().map(|r| r.support).sum();
    let mean = |f: fn(&ScoreRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let weighted = |f: fn(&ScoreRow) -> f64| {
        if total == 0 {
            0.0
        } else {
            rows.iter().map(|r| f(r) * r.support as f64).sum::<f64>() / total as f64
        }
    };
    (
        ScoreRow {
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            f1: mean(|r| r.f1),
            support: total,
        },
        ScoreRow {
            precision: weighted(|r| r.precision),
            recall: weighted(|r| r.recall),
            f1: weighted(|r| r.f1),
            support: total,
        },
    )
}

impl EvalReport {
    pub fn from_confusion(matrix: &ConfusionMatrix, labels: &LabelSet) -> Self {
        let classes: Vec<ClassRow> = (0..matrix.classes())
            .map(|c| {
                let tp = matrix.true_positives(c);
                let (precision, p_undef) = ratio(tp, matrix.predicted(c));
                let (recall, r_undef) = ratio(tp, matrix.support(c));
                ClassRow {
                    label: labels.name(c).map_or_else(|| c.to_string(), str::to_string),
                    scores: ScoreRow {
                        precision,
                        recall,
                        f1: f1(tp, matrix.predicted(c), matrix.support(c)),
                        support: matrix.support(c),
                    },
                    undefined: p_undef || r_undef,
                }
            })
            .collect();
        let tp: u64 = (0..matrix.classes()).map(|c| matrix.true_positives(c)).sum();
        let predicted: u64 = (0..matrix.classes()).map(|c| matrix.predicted(c)).sum();
        let total = matrix.total();
        let (mp, _) = ratio(tp, predicted);
        let (mr, _) = ratio(tp, total);
        let micro = ScoreRow {
            precision: mp,
            recall: mr,
            f1: f1(tp, predicted, total),
            support: total,
        };
        let scores: Vec<ScoreRow> = classes.iter().map(|c| c.scores).collect();
        let (macro_avg, weighted) = averages(&scores);
        Self {
            classes,
            micro,
            macro_avg,
            weighted,
            total_support: total,
        }
    }

    /// Rebuilds the aggregate rows from published per-class rows.
    ///
    /// Macro and weighted averages follow directly. The micro row needs pooled
    /// counts, which are recovered per class as `tp = round(recall · support)`
    /// and `predicted = round(tp / precision)`.
    pub fn from_class_rows(rows: &[(&str, ScoreRow)]) -> Self {
        let classes: Vec<ClassRow> = rows
            .iter()
            .map(|(label, scores)| ClassRow {
                label: label.to_string(),
                scores: *scores,
                undefined: false,
            })
            .collect();
        let mut tp = 0u64;
        let mut predicted = 0u64;
        for (_, r) in rows {
            let class_tp = (r.recall * r.support as f64).round() as u64;
            tp += class_tp;
            if r.precision > 0.0 {
                predicted += (class_tp as f64 / r.precision).round() as u64;
            }
        }
        let total: u64 = rows.iter().map(|(_, r)| r.support).sum();
        let (mp, _) = ratio(tp, predicted);
        let (mr, _) = ratio(tp, total);
        let scores: Vec<ScoreRow> = rows.iter().map(|(_, r)| *r).collect();
        let (macro_avg, weighted) = averages(&scores);
        Self {
            classes,
            micro: ScoreRow {
                precision: mp,
                recall: mr,
                f1: f1(tp, predicted, total),
                support: total,
            },
            macro_avg,
            weighted,
            total_support: total,
        }
    }

    pub fn accuracy(&self) -> f64 {
        self.micro.recall
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        serde_json::from_str(text).map_err(|e| MetricsError::Json(e.to_string()))
    }
}

/// Scores single-label predictions against gold class ids.
pub fn score(gold: &[usize], pred: &[usize], labels: &LabelSet) -> Result<EvalReport, MetricsError> {
    let matrix = ConfusionMatrix::from_predictions(gold, pred, labels.len())?;
    Ok(EvalReport::from_confusion(&matrix, labels))
}

/// Rounds half away from zero at three decimals, treating values within
/// float noise of a tie (e.g. `0.6915`) as the tie.
pub fn round3(v: f64) -> f64 {
    let scaled = v * 1000.0;
    let nudged = scaled + scaled.signum() * 1e-9 * scaled.abs().max(1.0);
    nudged.round() / 1000.0
}

fn fmt3(v: f64) -> String {
    format!("{:.3}", round3(v))
}

/// Fixed-width table: one row per class, then micro, macro and weighted
/// averages, three decimals.
pub fn render_report(report: &EvalReport) -> String {
    let width = report
        .classes
        .iter()
        .map(|c| c.label.len())
        .chain(std::iter::once("weighted avg".len()))
        .max()
        .unwrap_or(12);
    let line = |name: &str, r: &ScoreRow| {
        format!(
            "{name:>width$} {:>10} {:>9} {:>9} {:>9}\n",
            fmt3(r.precision),
            fmt3(r.recall),
            fmt3(r.f1),
            r.support
        )
    };
    let mut out = format!(
        "{:>width$} {:>10} {:>9} {:>9} {:>9}\n\n",
        "", "precision", "recall", "f1-score", "support"
    );
    for c in &report.classes {
        out.push_str(&line(&c.label, &c.scores));
    }
    out.push('\n');
    out.push_str(&line("micro avg", &report.micro));
    out.push_str(&line("macro avg", &report.macro_avg));
    out.push_str(&line("weighted avg", &report.weighted));
    out
}

#[derive(Debug, Deserialize)]
struct PredictionLine {
    gold: String,
    pred: String,
}

/// Reads JSON-lines `{"gold": label, "pred": label}` into class-id pairs.
/// Blank lines are skipped; unknown labels are errors.
pub fn parse_predictions(text: &str, labels: &LabelSet) -> Result<(Vec<usize>, Vec<usize>), MetricsError> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |what: String| MetricsError::PredictionLine { line: i + 1, what };
        let rec: PredictionLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let id = |l: &str| labels.id(l).ok_or_else(|| err(format!("unknown label {l:?}")));
        gold.push(id(&rec.gold)?);
        pred.push(id(&rec.pred)?);
    }
    Ok((gold, pred))
}

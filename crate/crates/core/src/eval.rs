//! Four-way classification metrics over regression scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::QualityLabel;

pub const F1_AVERAGING: &str = "macro";

/// Round half up, then clamp to `0..=3`.
pub fn quantize_score(score: f64) -> Result<QualityLabel> {
    if !score.is_finite() {
        return Err(Error::NonFinite(format!("cannot quantize score {score}")));
    }
    let level = (score + 0.5).floor().clamp(0.0, 3.0) as u8;
    Ok(QualityLabel::from_value(level).expect("clamped to a valid level"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: QualityLabel,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No samples of this class; its F1 of 0 still enters the macro average.
    pub zero_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub f1_averaging: String,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; 4]; 4],
}

pub fn evaluate(preds: &[f64], labels: &[QualityLabel]) -> Result<EvalReport> {
    if preds.len() != labels.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("evaluation needs at least one sample"));
    }
    let mut confusion = [[0usize; 4]; 4];
    for (&p, &l) in preds.iter().zip(labels) {
        let q = quantize_score(p)?;
        confusion[l.value() as usize][q.value() as usize] += 1;
    }
    let n = preds.len();
    let trace: usize = (0..4).map(|i| confusion[i][i]).sum();
    let per_class: Vec<ClassMetrics> = QualityLabel::ALL
        .iter()
        .map(|&label| {
            let c = label.value() as usize;
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..4).map(|r| confusion[r][c]).sum();
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label,
                support,
                precision,
                recall,
                f1,
                zero_support: support == 0,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / 4.0;
    Ok(EvalReport {
        n,
        accuracy: trace as f64 / n as f64,
        macro_f1,
        f1_averaging: F1_AVERAGING.to_string(),
        per_class,
        confusion,
    })
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "F1 averaging: {} (unweighted mean over 4 levels)", self.f1_averaging);
        let _ = writeln!(s, "| Validation Acc | Validation F1 | n |");
        let _ = writeln!(s, "|---|---|---|");
        let _ = writeln!(s, "| {:.1} | {:.1} | {} |", 100.0 * self.accuracy, 100.0 * self.macro_f1, self.n);
        let _ = writeln!(s);
        let _ = writeln!(s, "| level | support | precision | recall | F1 |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for c in &self.per_class {
            let flag = if c.zero_support { " (no support)" } else { "" };
            let _ = writeln!(
                s,
                "| {}{} | {} | {:.3} | {:.3} | {:.3} |",
                c.label, flag, c.support, c.precision, c.recall, c.f1
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use QualityLabel::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_score(2.49).unwrap(), HardNegative);
        assert_eq!(quantize_score(2.5).unwrap(), Positive);
        assert_eq!(quantize_score(3.7).unwrap(), Positive);
        assert_eq!(quantize_score(-0.2).unwrap(), EasyNegative);
        assert!(quantize_score(f64::NAN).is_err());
    }

    #[test]
    fn perfect_and_rounded() {
        let labels = [EasyNegative, MediumNegative, HardNegative, Positive];
        let r = evaluate(&[0.0, 1.0, 2.0, 3.0], &labels).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
        let r = evaluate(&[0.1, 1.2, 1.8, 2.6], &labels).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn zero_support_is_flagged() {
        let r = evaluate(&[3.0, 3.0], &[Positive, Positive]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 0.25);
        assert!(r.per_class[0].zero_support && !r.per_class[3].zero_support);
        assert!(r.table().contains("no support"));
    }

    #[test]
    fn errors() {
        assert!(evaluate(&[1.0], &[]).unwrap_err().to_string().contains("length mismatch"));
        assert!(evaluate(&[], &[]).is_err());
    }
}

//! Confusion matrices, binary and macro-averaged precision/recall/F1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[g][p]` = number of examples with gold `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, class_names: Option<Vec<String>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Data("confusion matrix must be square and non-empty".into()));
        }
        let class_names = class_names.unwrap_or_else(|| (0..k).map(|i| i.to_string()).collect());
        if class_names.len() != k {
            return Err(Error::dim("confusion class names", k, class_names.len()));
        }
        Ok(ConfusionMatrix { counts, class_names })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.k() {
            return Err(Error::dim("confusion class names", self.k(), names.len()));
        }
        self.class_names = names;
        Ok(self)
    }

    fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    fn gold(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn diagonal(&self) -> u64 {
        (0..self.k()).map(|c| self.tp(c)).sum()
    }

    /// CSV grid with gold classes as rows and predictions as columns.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = std::iter::once("gold\\pred".to_string())
            .chain(self.class_names.iter().cloned())
            .collect();
        w.write_record(&header).expect("in-memory csv");
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let rec: Vec<String> = std::iter::once(name.clone())
                .chain(row.iter().map(u64::to_string))
                .collect();
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }
}

pub fn confusion(golds: &[usize], preds: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if golds.len() != preds.len() {
        return Err(Error::dim("confusion", format!("golds {}", golds.len()), format!("preds {}", preds.len())));
    }
    if k == 0 {
        return Err(Error::Empty("confusion classes"));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (i, (&g, &p)) in golds.iter().zip(preds).enumerate() {
        if g >= k || p >= k {
            return Err(Error::LabelOutOfRange {
                label: g.max(p),
                classes: k,
                record: Some(format!("position {i}")),
            });
        }
        counts[g][p] += 1;
    }
    ConfusionMatrix::from_counts(counts, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Precision/recall/F1 of the positive class (index 0, NO-SPAM).
    Binary,
    /// Unweighted means over classes; F1 is the harmonic mean of those means.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub precision_zero_division: bool,
    pub recall_zero_division: bool,
    pub f1_zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub averaging: Averaging,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean of per-class F1 (macro only; equals `f1` for binary).
    pub f1_class_mean: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Set when any reported ratio had a zero denominator.
    pub zero_division: bool,
    pub total: u64,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

fn harmonic(p: f64, r: f64) -> (f64, bool) {
    ratio(2.0 * p * r, p + r)
}

fn class_metrics(cm: &ConfusionMatrix, c: usize) -> ClassMetrics {
    let tp = cm.tp(c) as f64;
    let (precision, pz) = ratio(tp, cm.predicted(c) as f64);
    let (recall, rz) = ratio(tp, cm.gold(c) as f64);
    let (f1, fz) = harmonic(precision, recall);
    ClassMetrics {
        name: cm.class_names[c].clone(),
        precision,
        recall,
        f1,
        support: cm.gold(c),
        precision_zero_division: pz,
        recall_zero_division: rz,
        f1_zero_division: fz,
    }
}

/// Binary metrics with the positive class at index 0.
pub fn binary_metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    if cm.k() != 2 {
        return Err(Error::Config(format!("binary metrics need k = 2, got {}", cm.k())));
    }
    let tp = cm.counts[0][0] as f64;
    let fnn = cm.counts[0][1] as f64;
    let fp = cm.counts[1][0] as f64;
    let tn = cm.counts[1][1] as f64;
    let (accuracy, az) = ratio(tp + tn, tp + tn + fp + fnn);
    let (precision, pz) = ratio(tp, tp + fp);
    let (recall, rz) = ratio(tp, tp + fnn);
    let (f1, fz) = harmonic(precision, recall);
    let per_class: Vec<ClassMetrics> = (0..2).map(|c| class_metrics(cm, c)).collect();
    Ok(MetricReport {
        averaging: Averaging::Binary,
        accuracy,
        precision,
        recall,
        f1,
        f1_class_mean: f1,
        per_class,
        zero_division: az || pz || rz || fz,
        total: cm.total(),
    })
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let k = cm.k();
    if k < 2 {
        return Err(Error::Config(format!("macro metrics need k >= 2, got {k}")));
    }
    let per_class: Vec<ClassMetrics> = (0..k).map(|c| class_metrics(cm, c)).collect();
    let kf = k as f64;
    let precision = per_class.iter().map(|c| c.precision).sum::<f64>() / kf;
    let recall = per_class.iter().map(|c| c.recall).sum::<f64>() / kf;
    let f1_class_mean = per_class.iter().map(|c| c.f1).sum::<f64>() / kf;
    let (f1, fz) = harmonic(precision, recall);
    let (accuracy, az) = ratio(cm.diagonal() as f64, cm.total() as f64);
    let class_flags = per_class
        .iter()
        .any(|c| c.precision_zero_division || c.recall_zero_division);
    Ok(MetricReport {
        averaging: Averaging::Macro,
        accuracy,
        precision,
        recall,
        f1,
        f1_class_mean,
        per_class,
        zero_division: fz || az || class_flags,
        total: cm.total(),
    })
}

/// Binary metrics for k = 2, macro metrics otherwise.
pub fn task_metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    if cm.k() == 2 {
        binary_metrics(cm)
    } else {
        macro_metrics(cm)
    }
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scope", "class", "accuracy", "precision", "recall", "f1", "f1_class_mean", "support", "zero_division"])
            .expect("in-memory csv");
        let avg = match self.averaging {
            Averaging::Binary => "binary",
            Averaging::Macro => "macro",
        };
        w.write_record([
            avg.to_string(),
            String::new(),
            fmt6(self.accuracy),
            fmt6(self.precision),
            fmt6(self.recall),
            fmt6(self.f1),
            fmt6(self.f1_class_mean),
            self.total.to_string(),
            self.zero_division.to_string(),
        ])
        .expect("in-memory csv");
        for c in &self.per_class {
            w.write_record([
                "class".to_string(),
                c.name.clone(),
                String::new(),
                fmt6(c.precision),
                fmt6(c.recall),
                fmt6(c.f1),
                String::new(),
                c.support.to_string(),
                (c.precision_zero_division || c.recall_zero_division || c.f1_zero_division).to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let mut rows: Vec<[String; 5]> = vec![[
            "class".into(),
            "precision".into(),
            "recall".into(),
            "f1".into(),
            "support".into(),
        ]];
        for c in &self.per_class {
            rows.push([c.name.clone(), pct(c.precision), pct(c.recall), pct(c.f1), c.support.to_string()]);
        }
        let label = match self.averaging {
            Averaging::Binary => "binary (pos=0)",
            Averaging::Macro => "macro",
        };
        rows.push([label.into(), pct(self.precision), pct(self.recall), pct(self.f1), self.total.to_string()]);
        let mut out = align(&rows);
        let _ = writeln!(out, "accuracy {}", pct(self.accuracy));
        if self.averaging == Averaging::Macro {
            let _ = writeln!(out, "mean per-class f1 {}", pct(self.f1_class_mean));
        }
        if self.zero_division {
            let _ = writeln!(out, "note: some ratios had zero denominators and were reported as 0");
        }
        out
    }
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Left-aligns the first column and right-aligns the rest.
pub fn align<R: AsRef<[String]>>(rows: &[R]) -> String {
    let cols = rows.iter().map(|r| r.as_ref().len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.as_ref().get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .as_ref()
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(rows, None).unwrap()
    }

    #[test]
    fn hand_counted_confusion() {
        let m = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![0, 2]]);
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
    }

    #[test]
    fn binary_hand_example() {
        // tp=2, fp=1, tn=1, fn=0 with NO-SPAM as positive.
        let r = binary_metrics(&cm(vec![vec![2, 0], vec![1, 1]])).unwrap();
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 0.8).abs() < 1e-15);
        assert!((r.accuracy - 0.75).abs() < 1e-15);
    }

    #[test]
    fn binary_perfect_and_degenerate() {
        let r = binary_metrics(&cm(vec![vec![3, 0], vec![0, 4]])).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(!r.zero_division);
        // Everything predicted as class 1 on balanced data.
        let r = binary_metrics(&cm(vec![vec![0, 5], vec![0, 5]])).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.precision, 0.0);
        assert!(r.zero_division);
        assert!(binary_metrics(&cm(vec![vec![1; 3]; 3])).is_err());
    }

    #[test]
    fn macro_three_class_example() {
        let r = macro_metrics(&cm(vec![vec![2, 0, 0], vec![1, 1, 0], vec![0, 0, 1]])).unwrap();
        let p = (2.0 / 3.0 + 1.0 + 1.0) / 3.0;
        let rc = (1.0 + 0.5 + 1.0) / 3.0;
        assert!((r.precision - p).abs() < 1e-15);
        assert!((r.recall - rc).abs() < 1e-15);
        assert!((r.f1 - 2.0 * p * rc / (p + rc)).abs() < 1e-15);
    }

    #[test]
    fn empty_class_contributes_zero_and_flags() {
        let r = macro_metrics(&cm(vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 0]])).unwrap();
        assert_eq!(r.per_class[2].precision, 0.0);
        assert_eq!(r.per_class[2].recall, 0.0);
        assert!(r.zero_division);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn csv_quotes_names() {
        let m = cm(vec![vec![1, 0], vec![0, 1]])
            .with_names(vec!["a,b".into(), "c".into()])
            .unwrap();
        assert!(m.to_csv().contains("\"a,b\",1,0"));
    }
}

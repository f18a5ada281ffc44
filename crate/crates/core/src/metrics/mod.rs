//! Confusion-matrix segmentation metrics with void exclusion.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[t * k + p]` = pixels of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::dim("confusion_matrix", "cells", k * k, counts.len()));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, t: usize) -> u64 {
        self.counts[t * self.k..(t + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, p)).sum()
    }

    /// Counts every non-void pixel of one prediction/target pair.
    pub fn accumulate(&mut self, pred: &[u32], target: &[u32], void: Option<u32>) -> Result<()> {
        if pred.len() != target.len() {
            return Err(Error::dim("accumulate", "pixels", target.len(), pred.len()));
        }
        let k = self.k as u32;
        // validate first so a bad pixel leaves the matrix unchanged
        for (&p, &t) in pred.iter().zip(target) {
            if Some(t) == void {
                continue;
            }
            if t >= k || p >= k {
                return Err(Error::Usage(format!(
                    "label out of range for {k} classes: target {t}, prediction {p}"
                )));
            }
        }
        for (&p, &t) in pred.iter().zip(target) {
            if Some(t) != void {
                self.counts[t as usize * self.k + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::dim("merge", "classes", self.k, other.k));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Correct pixels over all evaluated pixels.
    pub fn global_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric {
                metric: "global accuracy",
                reason: "no pixels were evaluated".into(),
            });
        }
        let diag: u64 = (0..self.k).map(|i| self.get(i, i)).sum();
        Ok(diag as f64 / total as f64)
    }

    /// Per-class recall (`None` for classes absent from the ground truth)
    /// and its mean over present classes.
    pub fn per_class_accuracy(&self) -> Result<(Vec<Option<f64>>, f64)> {
        let acc: Vec<Option<f64>> = (0..self.k)
            .map(|c| {
                let row = self.row_sum(c);
                (row > 0).then(|| self.get(c, c) as f64 / row as f64)
            })
            .collect();
        let mean = mean_defined(&acc).ok_or_else(|| Error::UndefinedMetric {
            metric: "class accuracy",
            reason: "no class occurs in the ground truth".into(),
        })?;
        Ok((acc, mean))
    }

    /// Per-class `TP / (TP + FP + FN)` (`None` for a zero denominator) and
    /// its mean over defined classes.
    pub fn iou(&self) -> Result<(Vec<Option<f64>>, f64)> {
        let iou: Vec<Option<f64>> = (0..self.k)
            .map(|c| {
                let tp = self.get(c, c);
                let denom = self.row_sum(c) + self.col_sum(c) - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let mean = mean_defined(&iou).ok_or_else(|| Error::UndefinedMetric {
            metric: "IoU",
            reason: "no class occurs in either prediction or ground truth".into(),
        })?;
        Ok((iou, mean))
    }

    pub fn mean_iou(&self) -> Result<f64> {
        Ok(self.iou()?.1)
    }

    pub fn report(&self, class_names: &[String]) -> Result<MetricsReport> {
        let (class_acc, avg_class_acc) = self.per_class_accuracy()?;
        let (class_iou, avg_iou) = self.iou()?;
        let names = (0..self.k)
            .map(|c| class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}")))
            .collect();
        Ok(MetricsReport {
            class_names: names,
            class_acc,
            class_iou,
            global_acc: self.global_accuracy()?,
            avg_class_acc,
            avg_iou,
            pixels: self.total(),
        })
    }
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = v.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// All evaluation measures of one confusion matrix, as fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub class_acc: Vec<Option<f64>>,
    pub class_iou: Vec<Option<f64>>,
    pub global_acc: f64,
    pub avg_class_acc: f64,
    pub avg_iou: f64,
    /// Evaluated (non-void) pixels.
    pub pixels: u64,
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.1}", 100.0 * v),
        None => "n/a".into(),
    }
}

impl MetricsReport {
    /// `metric,value` rows, percentages with one decimal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (i, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(out, "acc_{name},{}", pct(self.class_acc[i]));
        }
        for (i, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(out, "iou_{name},{}", pct(self.class_iou[i]));
        }
        let _ = writeln!(out, "global_acc,{}", pct(Some(self.global_acc)));
        let _ = writeln!(out, "avg_class_acc,{}", pct(Some(self.avg_class_acc)));
        let _ = writeln!(out, "avg_iou,{}", pct(Some(self.avg_iou)));
        let _ = writeln!(out, "pixels,{}", self.pixels);
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.class_names.iter().map(|n| n.len()).max().unwrap_or(0).max(13);
        let mut out = format!("{:<width$}  {:>8}  {:>8}\n", "class", "acc %", "IoU %");
        for (i, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>8}  {:>8}",
                pct(self.class_acc[i]),
                pct(self.class_iou[i])
            );
        }
        let _ = writeln!(out, "{}", "-".repeat(width + 20));
        let _ = writeln!(out, "{:<width$}  {:>8}", "global acc", pct(Some(self.global_acc)));
        let _ = writeln!(out, "{:<width$}  {:>8}", "avg class acc", pct(Some(self.avg_class_acc)));
        let _ = writeln!(out, "{:<width$}  {:>8}", "avg IoU", pct(Some(self.avg_iou)));
        let _ = writeln!(out, "{:<width$}  {:>8}", "pixels", self.pixels);
        out
    }
}

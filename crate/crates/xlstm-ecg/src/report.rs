//! Evaluation report: JSON document, per-matrix CSV files and a plain-text
//! table.
//!
//! JSON objects are emitted with sorted keys and shortest round-trip float
//! formatting, so the same metrics always serialize to the same bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xlstm_ecg_core::metrics::EvalReport;

use crate::error::{write_file, AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub name: String,
    /// `None` when the class lacks positives or negatives.
    pub auc: Option<f64>,
    /// `None` when the class has no positives.
    pub average_precision: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub split: String,
    pub n_samples: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub macro_auc: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub map: f64,
    pub auc_skipped: Vec<String>,
    pub map_skipped: Vec<String>,
    pub classes: Vec<ClassRow>,
    /// Rows and columns are true labels.
    pub cooc_true_true: Vec<Vec<u64>>,
    /// Rows are true labels, columns predicted labels.
    pub cooc_true_pred: Vec<Vec<u64>>,
}

impl ReportFile {
    pub fn from_eval(split: &str, report: &EvalReport, class_names: &[String]) -> Result<Self> {
        if class_names.len() != report.n_classes {
            return Err(AppError::data(format!(
                "{} class names for a {}-class report",
                class_names.len(),
                report.n_classes
            )));
        }
        let names = |ks: &[usize]| ks.iter().map(|&k| class_names[k].clone()).collect();
        let classes = class_names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let c = &report.confusion[k];
                ClassRow {
                    name: name.clone(),
                    auc: report.per_class_auc[k],
                    average_precision: report.per_class_ap[k],
                    precision: c.precision(),
                    recall: c.recall(),
                    f1: c.f1(),
                    tp: c.tp,
                    fp: c.fp,
                    tn: c.tn,
                    fn_: c.fn_,
                    support: c.tp + c.fn_,
                }
            })
            .collect();
        Ok(Self {
            split: split.to_string(),
            n_samples: report.n_samples,
            threshold: report.threshold,
            accuracy: report.accuracy,
            macro_auc: report.macro_auc,
            macro_precision: report.macro_precision,
            macro_recall: report.macro_recall,
            macro_f1: report.macro_f1,
            map: report.map,
            auc_skipped: names(&report.auc_skipped),
            map_skipped: names(&report.map_skipped),
            classes,
            cooc_true_true: report.cooc_true_true.clone(),
            cooc_true_pred: report.cooc_true_pred.clone(),
        })
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }

    /// Pretty JSON with sorted keys and a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        // going through Value sorts object keys
        let value = serde_json::to_value(self).map_err(|e| AppError::data(e.to_string()))?;
        let mut s = serde_json::to_string_pretty(&value).map_err(|e| AppError::data(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| AppError::data(format!("invalid report: {e}")))?;
        let c = r.classes.len();
        let square = |m: &Vec<Vec<u64>>| m.len() == c && m.iter().all(|row| row.len() == c);
        if !square(&r.cooc_true_true) || !square(&r.cooc_true_pred) {
            return Err(AppError::data(format!("co-occurrence matrices must be {c} × {c}")));
        }
        Ok(r)
    }

    pub fn per_class_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let err = |e: csv::Error| AppError::data(e.to_string());
        w.write_record([
            "class", "tp", "fp", "tn", "fn", "support", "precision", "recall", "f1", "auc", "average_precision",
        ])
        .map_err(err)?;
        for c in &self.classes {
            w.write_record([
                c.name.clone(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
                c.support.to_string(),
                c.precision.to_string(),
                c.recall.to_string(),
                c.f1.to_string(),
                opt(c.auc),
                opt(c.average_precision),
            ])
            .map_err(err)?;
        }
        finish(w)
    }

    /// One 2×2 block per class: rows actual (1, 0), columns predicted (1, 0).
    pub fn confusion_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| AppError::data(e.to_string());
        w.write_record(["class", "actual", "predicted_positive", "predicted_negative"])
            .map_err(err)?;
        for c in &self.classes {
            w.write_record([&c.name, "positive", &c.tp.to_string(), &c.fn_.to_string()])
                .map_err(err)?;
            w.write_record([&c.name, "negative", &c.fp.to_string(), &c.tn.to_string()])
                .map_err(err)?;
        }
        finish(w)
    }

    pub fn matrix_csv(&self, m: &[Vec<u64>], corner: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| AppError::data(e.to_string());
        let mut header = vec![corner.to_string()];
        header.extend(self.classes.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(err)?;
        for (c, row) in self.classes.iter().zip(m) {
            let mut rec = vec![c.name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).map_err(err)?;
        }
        finish(w)
    }

    /// Writes `report.json` and the CSV files into `dir`; returns the paths.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = [
            ("report.json", self.to_json()?),
            ("per_class.csv", self.per_class_csv()?),
            ("confusion.csv", self.confusion_csv()?),
            ("cooc_true_true.csv", self.matrix_csv(&self.cooc_true_true, "true\\true")?),
            ("cooc_true_pred.csv", self.matrix_csv(&self.cooc_true_pred, "true\\predicted")?),
        ];
        let mut out = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            write_file(&p, body)?;
            out.push(p);
        }
        Ok(out)
    }

    /// Human-readable summary for standard output.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let pct = |v: f64| format!("{:6.2}", 100.0 * v);
        let opt = |v: Option<f64>| v.map_or_else(|| "     -".to_string(), pct);
        let _ = writeln!(
            s,
            "split {}  samples {}  threshold {}",
            self.split, self.n_samples, self.threshold
        );
        let _ = writeln!(s, "accuracy  {}%  (pooled over sample-label pairs)", pct(self.accuracy));
        let _ = writeln!(s, "macro AUC {}%", pct(self.macro_auc));
        let _ = writeln!(s, "precision {}%", pct(self.macro_precision));
        let _ = writeln!(s, "recall    {}%", pct(self.macro_recall));
        let _ = writeln!(s, "macro F1  {}%", pct(self.macro_f1));
        let _ = writeln!(s, "MAP       {}%", pct(self.map));
        for (what, skipped) in [("AUC", &self.auc_skipped), ("MAP", &self.map_skipped)] {
            if !skipped.is_empty() {
                let _ = writeln!(s, "{what} skipped classes: {}", skipped.join(", "));
            }
        }
        let width = self.classes.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            s,
            "\n{:width$}  {:>6} {:>6} {:>6} {:>6}  {:>6} {:>6} {:>6} {:>6} {:>6}",
            "class", "TP", "FP", "TN", "FN", "P%", "R%", "F1%", "AUC%", "AP%"
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:width$}  {:>6} {:>6} {:>6} {:>6}  {} {} {} {} {}",
                c.name,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                pct(c.precision),
                pct(c.recall),
                pct(c.f1),
                opt(c.auc),
                opt(c.average_precision)
            );
        }
        for (title, m) in [
            ("label co-occurrence (true × true)", &self.cooc_true_true),
            ("label co-occurrence (true × predicted)", &self.cooc_true_pred),
        ] {
            let _ = write!(s, "\n{title}\n{:width$}", "");
            for c in &self.classes {
                let _ = write!(s, " {:>8}", c.name);
            }
            s.push('\n');
            for (c, row) in self.classes.iter().zip(m) {
                let _ = write!(s, "{:width$}", c.name);
                for v in row {
                    let _ = write!(s, " {v:>8}");
                }
                s.push('\n');
            }
        }
        s
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| AppError::data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| AppError::data(e.to_string()))
}

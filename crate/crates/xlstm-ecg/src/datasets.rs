//! Dataset loaders: PTB-XL superclasses, a generic grouped multi-label
//! layout, and the on-disk form of the synthetic set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use xlstm_ecg_core::synth::{self, SAMPLE_RATE};
use xlstm_ecg_core::{DatasetSplit, EcgRecord};

use crate::error::{AppError, Result};
use crate::wfdb::{self, header_for};

/// PTB-XL diagnostic superclasses in label-vector order.
pub const PTBXL_SUPERCLASSES: [&str; 5] = ["NORM", "CD", "HYP", "MI", "STTC"];

pub const LEAD_NAMES: [&str; 12] = ["I", "II", "III", "AVR", "AVL", "AVF", "V1", "V2", "V3", "V4", "V5", "V6"];

/// ADC gain used when writing synthetic records (1 µV resolution).
pub const SYNTH_GAIN: f64 = 1000.0;

/// Every `VALIDATION_EVERY`-th training record (by id) becomes validation
/// for loaders that have no validation fold.
pub const VALIDATION_EVERY: usize = 10;

/// A loaded split plus what was skipped on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub split: DatasetSplit,
    pub class_names: Vec<String>,
    /// Records dropped because none of their codes mapped to a class.
    pub dropped_unlabeled: usize,
    /// Codes that matched no class, with how often each was seen.
    pub unknown_codes: BTreeMap<String, usize>,
}

impl Loaded {
    /// One line per unknown code, for printing as warnings.
    pub fn warnings(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .unknown_codes
            .iter()
            .map(|(code, n)| format!("unknown diagnostic code '{code}' skipped in {n} record(s)"))
            .collect();
        if self.dropped_unlabeled > 0 {
            out.push(format!("{} record(s) with no mapped class dropped", self.dropped_unlabeled));
        }
        out
    }
}

struct Row {
    path: String,
    fold: u32,
    codes: Vec<String>,
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(false).from_reader(file))
}

fn column(headers: &csv::StringRecord, path: &Path, names: &[&str]) -> Result<usize> {
    names
        .iter()
        .find_map(|n| headers.iter().position(|h| h.trim() == *n))
        .ok_or_else(|| AppError::data(format!("{}: missing column {}", path.display(), names.join(" or "))))
}

fn read_rows(
    path: &Path,
    path_cols: &[&str],
    fold_cols: &[&str],
    code_cols: &[&str],
    split_codes: fn(&str) -> Vec<String>,
) -> Result<Vec<Row>> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))?
        .clone();
    let (pc, fc, cc) = (
        column(&headers, path, path_cols)?,
        column(&headers, path, fold_cols)?,
        column(&headers, path, code_cols)?,
    );
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
        let fold_text = rec[fc].trim();
        let fold = fold_text.parse::<f64>().ok().filter(|f| f.fract() == 0.0 && *f >= 0.0).ok_or_else(|| {
            AppError::data(format!("{} line {line}: invalid fold/group '{fold_text}'", path.display()))
        })? as u32;
        rows.push(Row {
            path: rec[pc].trim().to_string(),
            fold,
            codes: split_codes(&rec[cc]),
        });
    }
    Ok(rows)
}

/// Codes from a PTB-XL `scp_codes` dictionary literal such as
/// `{'NORM': 100.0, 'SR': 0.0}`, or from a `;`-separated list.
pub fn parse_scp_codes(text: &str) -> Vec<String> {
    let t = text.trim();
    if let Some(body) = t.strip_prefix('{').and_then(|b| b.strip_suffix('}')) {
        body.split(',')
            .filter_map(|entry| entry.split(':').next())
            .map(|k| k.trim().trim_matches(|c| c == '\'' || c == '"').to_string())
            .filter(|k| !k.is_empty())
            .collect()
    } else {
        split_list(t)
    }
}

fn split_list(text: &str) -> Vec<String> {
    text.split(';').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

/// Reads a `code,superclass` map. Rows with an empty superclass mark codes
/// that are known but carry no class (they are ignored silently).
pub fn read_superclass_map(path: &Path) -> Result<HashMap<String, Option<String>>> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))?
        .clone();
    let code = column(&headers, path, &["code", "scp_code"])?;
    let class = column(&headers, path, &["superclass", "diagnostic_class"])?;
    let mut map = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
        let sc = rec[class].trim();
        map.insert(rec[code].trim().to_string(), (!sc.is_empty()).then(|| sc.to_string()));
    }
    Ok(map)
}

/// Multi-hot labels for `codes` resolved through `lookup`; unknown codes
/// are tallied in `unknown`.
fn labels_for<'a>(
    codes: &'a [String],
    classes: &[String],
    lookup: impl Fn(&'a str) -> Option<Option<&'a str>>,
    unknown: &mut BTreeMap<String, usize>,
) -> Vec<u8> {
    let mut y = vec![0u8; classes.len()];
    let mut missed = BTreeSet::new();
    for code in codes {
        match lookup(code) {
            Some(Some(class)) => match classes.iter().position(|c| c == class) {
                Some(k) => y[k] = 1,
                None => {
                    missed.insert(code.clone());
                }
            },
            Some(None) => {}
            None => {
                missed.insert(code.clone());
            }
        }
    }
    for code in missed {
        *unknown.entry(code).or_default() += 1;
    }
    y
}

fn load_record(records_dir: &Path, rel: &str, labels: Vec<u8>, fold: u32, leads: Option<usize>) -> Result<EcgRecord> {
    let rec = wfdb::read_record(&records_dir.join(rel))?;
    if let Some(n) = leads {
        if rec.header.n_signals != n {
            return Err(AppError::data(format!("record {rel} has {} leads, expected {n}", rec.header.n_signals)));
        }
    }
    Ok(EcgRecord::new(
        rel,
        rec.samples,
        rec.header.n_signals,
        rec.header.sample_rate,
        labels,
        fold,
    )?)
}

/// Loads PTB-XL: `metadata_csv` is `ptbxl_database.csv` (columns
/// `filename_lr`, `strat_fold`, `scp_codes`; `record_path`/`fold` are also
/// accepted), `superclass_map` maps codes to the five superclasses.
pub fn load_ptbxl(metadata_csv: &Path, records_dir: &Path, superclass_map: &Path) -> Result<Loaded> {
    let map = read_superclass_map(superclass_map)?;
    let classes: Vec<String> = PTBXL_SUPERCLASSES.iter().map(|s| s.to_string()).collect();
    let rows = read_rows(
        metadata_csv,
        &["filename_lr", "record_path"],
        &["strat_fold", "fold"],
        &["scp_codes", "labels"],
        parse_scp_codes,
    )?;
    let mut unknown = BTreeMap::new();
    let mut dropped = 0;
    let mut records = Vec::new();
    for row in &rows {
        let y = labels_for(&row.codes, &classes, |c| map.get(c).map(Option::as_deref), &mut unknown);
        if y.iter().all(|&v| v == 0) {
            dropped += 1;
            continue;
        }
        records.push(load_record(records_dir, &row.path, y, row.fold, Some(12))?);
    }
    Ok(Loaded {
        split: DatasetSplit::from_folds(records)?,
        class_names: classes,
        dropped_unlabeled: dropped,
        unknown_codes: unknown,
    })
}

/// Loads a grouped multi-label set: columns `record_path`, `group` and
/// `labels` (`;`-separated class names). The holdout group becomes the
/// test set; every [`VALIDATION_EVERY`]-th remaining record (by id) is
/// moved to validation.
pub fn load_multilabel_generic(
    metadata_csv: &Path,
    records_dir: &Path,
    class_list: &[String],
    holdout_group: u32,
) -> Result<Loaded> {
    if class_list.is_empty() {
        return Err(AppError::usage("class list must not be empty"));
    }
    let distinct: BTreeSet<&String> = class_list.iter().collect();
    if distinct.len() != class_list.len() {
        return Err(AppError::usage("class list contains duplicates"));
    }
    let rows = read_rows(
        metadata_csv,
        &["record_path", "filename"],
        &["group", "fold"],
        &["labels", "codes"],
        split_list,
    )?;
    let mut unknown = BTreeMap::new();
    let mut dropped = 0;
    let mut records = Vec::new();
    for row in &rows {
        let y = labels_for(&row.codes, class_list, |c| Some(Some(c)), &mut unknown);
        if y.iter().all(|&v| v == 0) {
            dropped += 1;
            continue;
        }
        records.push(load_record(records_dir, &row.path, y, row.fold, None)?);
    }
    let mut split = DatasetSplit::from_holdout(records, holdout_group)?;
    split.carve_validation(VALIDATION_EVERY);
    Ok(Loaded {
        split,
        class_names: class_list.to_vec(),
        dropped_unlabeled: dropped,
        unknown_codes: unknown,
    })
}

pub fn synth_class_names(n_classes: usize) -> Vec<String> {
    (0..n_classes).map(|k| format!("class{k}")).collect()
}

/// Generates the synthetic set and writes it under `dir`: `classes.txt`,
/// `metadata.csv` (`record_path,fold,labels`) and `records/*.hea|.dat`.
pub fn write_synthetic(dir: &Path, n_records: usize, n_samples: usize, n_classes: usize, seed: u64) -> Result<usize> {
    let split = synth::generate_synthetic(n_records, n_samples, n_classes, seed)?;
    let names = synth_class_names(n_classes);
    let mut meta = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| AppError::data(e.to_string());
    meta.write_record(["record_path", "fold", "labels"]).map_err(csv_err)?;
    let mut all: Vec<&EcgRecord> = split.all().collect();
    all.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    for r in &all {
        let rel = format!("records/{}", r.record_id);
        let header = header_for(&r.record_id, r.sample_rate, r.n_leads(), r.samples(), SYNTH_GAIN, &LEAD_NAMES);
        wfdb::write_record(&dir.join(&rel), &header, r.samples())?;
        let labels: Vec<&str> = names
            .iter()
            .zip(&r.labels)
            .filter(|(_, &y)| y == 1)
            .map(|(n, _)| n.as_str())
            .collect();
        meta.write_record([rel.as_str(), &r.fold.to_string(), &labels.join(";")])
            .map_err(csv_err)?;
    }
    let bytes = meta.into_inner().map_err(|e| AppError::data(e.to_string()))?;
    crate::error::write_file(&dir.join("metadata.csv"), bytes)?;
    crate::error::write_file(&dir.join("classes.txt"), names.join("\n") + "\n")?;
    Ok(all.len())
}

/// Reads a set written by [`write_synthetic`]; folds 1–8 train, 9
/// validation, 10 test.
pub fn load_synthetic(dir: &Path) -> Result<Loaded> {
    let classes_path = dir.join("classes.txt");
    let text = String::from_utf8(crate::error::read_file(&classes_path)?)
        .map_err(|_| AppError::data(format!("{} is not UTF-8", classes_path.display())))?;
    let classes: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if classes.is_empty() {
        return Err(AppError::data(format!("{} lists no classes", classes_path.display())));
    }
    let rows = read_rows(&dir.join("metadata.csv"), &["record_path"], &["fold"], &["labels"], split_list)?;
    let mut unknown = BTreeMap::new();
    let mut records = Vec::new();
    let mut dropped = 0;
    for row in &rows {
        let y = labels_for(&row.codes, &classes, |c| Some(Some(c)), &mut unknown);
        if y.iter().all(|&v| v == 0) {
            dropped += 1;
            continue;
        }
        let mut rec = load_record(dir, &row.path, y, row.fold, None)?;
        if rec.sample_rate != SAMPLE_RATE {
            return Err(AppError::data(format!("record {} is not sampled at {SAMPLE_RATE} Hz", row.path)));
        }
        rec.record_id = id_from_path(&row.path);
        records.push(rec);
    }
    Ok(Loaded {
        split: DatasetSplit::from_folds(records)?,
        class_names: classes,
        dropped_unlabeled: dropped,
        unknown_codes: unknown,
    })
}

fn id_from_path(rel: &str) -> String {
    PathBuf::from(rel)
        .file_name()
        .map_or_else(|| rel.to_string(), |f| f.to_string_lossy().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scp_code_literals() {
        assert_eq!(parse_scp_codes("{'NORM': 100.0, 'SR': 0.0}"), vec!["NORM", "SR"]);
        assert_eq!(parse_scp_codes("{}"), Vec::<String>::new());
        assert_eq!(parse_scp_codes("IMI; NDT"), vec!["IMI", "NDT"]);
    }

    #[test]
    fn label_mapping_uses_class_order() {
        let classes: Vec<String> = PTBXL_SUPERCLASSES.iter().map(|s| s.to_string()).collect();
        let map: HashMap<&str, Option<&str>> =
            [("IMI", Some("MI")), ("NDT", Some("STTC")), ("SR", None)].into_iter().collect();
        let codes = vec!["IMI".to_string(), "NDT".into(), "SR".into(), "XYZ".into()];
        let mut unknown = BTreeMap::new();
        let y = labels_for(&codes, &classes, |c| map.get(c).copied(), &mut unknown);
        assert_eq!(y, vec![0, 0, 0, 1, 1]);
        assert_eq!(unknown.into_iter().collect::<Vec<_>>(), vec![("XYZ".to_string(), 1)]);
    }
}

//! Labeled multi-lead recordings and train/validation/test splits.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One multi-lead recording with its multi-hot label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    /// `T × leads`, row-major, millivolts.
    samples: Vec<f64>,
    n_leads: usize,
    pub sample_rate: f64,
    pub labels: Vec<u8>,
    /// Cross-validation fold or holdout group; 0 when not applicable.
    pub fold: u32,
}

impl EcgRecord {
    pub fn new(
        record_id: impl Into<String>,
        samples: Vec<f64>,
        n_leads: usize,
        sample_rate: f64,
        labels: Vec<u8>,
        fold: u32,
    ) -> Result<Self> {
        let record_id = record_id.into();
        if n_leads == 0 || samples.is_empty() || !samples.len().is_multiple_of(n_leads) {
            return Err(Error::config(format!(
                "record {record_id}: {} samples do not form whole frames of {n_leads} leads",
                samples.len()
            )));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::config(format!("record {record_id}: sample rate must be positive")));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::config(format!("record {record_id}: labels must be 0 or 1")));
        }
        Ok(Self {
            record_id,
            samples,
            n_leads,
            sample_rate,
            labels,
            fold,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len() / self.n_leads
    }

    pub fn n_leads(&self) -> usize {
        self.n_leads
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn sample(&self, t: usize, lead: usize) -> f64 {
        self.samples[t * self.n_leads + lead]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn lead(&self, lead: usize) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().skip(lead).step_by(self.n_leads).copied()
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<EcgRecord>,
    pub validation: Vec<EcgRecord>,
    pub test: Vec<EcgRecord>,
}

impl DatasetSplit {
    /// Fold 10 → test, fold 9 → validation, folds 1–8 → train; records in
    /// any other fold are rejected.
    pub fn from_folds(records: Vec<EcgRecord>) -> Result<Self> {
        let mut split = Self::default();
        for r in records {
            match r.fold {
                1..=8 => split.train.push(r),
                9 => split.validation.push(r),
                10 => split.test.push(r),
                other => {
                    return Err(Error::config(format!(
                        "record {} has fold {other}, expected 1–10",
                        r.record_id
                    )))
                }
            }
        }
        split.check_disjoint()?;
        Ok(split)
    }

    /// Holdout group → test, everything else → train; validation empty.
    pub fn from_holdout(records: Vec<EcgRecord>, holdout_group: u32) -> Result<Self> {
        let (test, train) = records.into_iter().partition(|r| r.fold == holdout_group);
        let split = Self {
            train,
            validation: Vec::new(),
            test,
        };
        split.check_disjoint()?;
        Ok(split)
    }

    /// Moves every `every`-th training record (in record-id order) into the
    /// validation set. Used when a loader provides no validation fold.
    pub fn carve_validation(&mut self, every: usize) {
        let every = every.max(2);
        let mut train = core::mem::take(&mut self.train);
        train.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        for (i, r) in train.into_iter().enumerate() {
            if i % every == every - 1 {
                self.validation.push(r);
            } else {
                self.train.push(r);
            }
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &EcgRecord> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label width shared by all records, or `None` if empty.
    pub fn n_classes(&self) -> Option<usize> {
        self.all().next().map(EcgRecord::n_classes)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in self.all() {
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::config(format!("record {} appears twice in the split", r.record_id)));
            }
        }
        Ok(())
    }
}

//! Clinical note corpora: ingestion, cleaning, synthetic generation and
//! summary statistics.
//!
//! A corpus is a list of [`HospitalStay`]s, each holding its notes in
//! chronological order together with a gold label set drawn from a fixed
//! [`LabelSpace`], plus a train/dev/test [`DatasetSplit`].

mod io;
mod stats;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{HtdsError, Result};

pub use io::{ingest_notes, parse_stay_notes, read_corpus_dir, write_corpus, IngestReport, LABELS_FILE, NOTES_FILE, SPLITS_FILE};
pub use stats::{corpus_stats, StatRow, StatsReport};
pub use synthetic::{generate_synthetic, SyntheticSpec};

pub const DISCHARGE_CATEGORY: &str = "Discharge summary";
pub const NURSING_CATEGORY: &str = "Nursing";
pub const NURSING_OTHER_CATEGORY: &str = "Nursing/Other";

/// Maps raw category codes onto the cleaned category set.
pub fn clean_category(raw: &str) -> String {
    let trimmed = raw.trim();
    if trimmed == NURSING_OTHER_CATEGORY {
        NURSING_CATEGORY.to_string()
    } else {
        trimmed.to_string()
    }
}

pub fn is_discharge(category: &str) -> bool {
    category == DISCHARGE_CATEGORY
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClinicalNote {
    pub note_id: String,
    pub stay_id: String,
    pub category: String,
    pub charttime: NaiveDateTime,
    pub text: String,
}

/// One admission: its notes, ordered by `(charttime, note_id)`, and gold labels
/// as indices into the corpus [`LabelSpace`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HospitalStay {
    pub stay_id: String,
    pub notes: Vec<ClinicalNote>,
    pub labels: BTreeSet<usize>,
}

impl HospitalStay {
    pub fn new(stay_id: impl Into<String>, mut notes: Vec<ClinicalNote>, labels: BTreeSet<usize>) -> Self {
        sort_notes(&mut notes);
        HospitalStay { stay_id: stay_id.into(), notes, labels }
    }

    /// Copy of this stay keeping only discharge summaries.
    pub fn discharge_only(&self) -> HospitalStay {
        HospitalStay {
            stay_id: self.stay_id.clone(),
            notes: self.notes.iter().filter(|n| is_discharge(&n.category)).cloned().collect(),
            labels: self.labels.clone(),
        }
    }

    /// Gold labels as a dense 0/1 vector of length `n_labels`.
    pub fn label_vector(&self, n_labels: usize) -> Vec<f64> {
        let mut y = vec![0.0; n_labels];
        for &l in &self.labels {
            if l < n_labels {
                y[l] = 1.0;
            }
        }
        y
    }
}

pub fn sort_notes(notes: &mut [ClinicalNote]) {
    notes.sort_by(|a, b| a.charttime.cmp(&b.charttime).then_with(|| a.note_id.cmp(&b.note_id)));
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LabelSpace {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new(codes: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if index.insert(c.clone(), i).is_some() {
                return Err(HtdsError::Data(format!("duplicate label code {c:?}")));
            }
        }
        Ok(LabelSpace { codes, index })
    }

    /// Keeps the `max_labels` most frequent codes (frequency ties broken
    /// lexicographically) and orders the kept codes lexicographically.
    pub fn top_k<'a>(codes: impl IntoIterator<Item = &'a str>, max_labels: usize) -> Result<Self> {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for c in codes {
            *freq.entry(c).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_labels);
        let mut kept: Vec<String> = ranked.into_iter().map(|(c, _)| c.to_string()).collect();
        kept.sort();
        LabelSpace::new(kept)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn code(&self, idx: usize) -> Option<&str> {
        self.codes.get(idx).map(String::as_str)
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = HtdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(HtdsError::Data(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: BTreeSet<String>,
    pub dev: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl DatasetSplit {
    pub fn get(&self, name: SplitName) -> &BTreeSet<String> {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    pub fn insert(&mut self, name: SplitName, stay_id: String) {
        match name {
            SplitName::Train => self.train.insert(stay_id),
            SplitName::Dev => self.dev.insert(stay_id),
            SplitName::Test => self.test.insert(stay_id),
        };
    }

    pub fn split_of(&self, stay_id: &str) -> Option<SplitName> {
        [SplitName::Train, SplitName::Dev, SplitName::Test]
            .into_iter()
            .find(|&s| self.get(s).contains(stay_id))
    }

    pub fn is_disjoint(&self) -> bool {
        self.train.is_disjoint(&self.dev) && self.train.is_disjoint(&self.test) && self.dev.is_disjoint(&self.test)
    }
}

/// Stays (sorted by `stay_id`), their label space and split assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub stays: Vec<HospitalStay>,
    pub labels: LabelSpace,
    pub split: DatasetSplit,
}

impl Corpus {
    pub fn stays_in(&self, name: SplitName) -> Vec<&HospitalStay> {
        let ids = self.split.get(name);
        self.stays.iter().filter(|s| ids.contains(&s.stay_id)).collect()
    }

    /// Distinct note categories, sorted.
    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.stays.iter().flat_map(|s| s.notes.iter().map(|n| n.category.as_str())).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

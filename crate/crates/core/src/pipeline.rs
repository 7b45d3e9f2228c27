//! From raw stays to model-ready inputs: note filtering, chunking, selection
//! and metadata indices.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::corpus::HospitalStay;
use crate::error::{HtdsError, Result};
use crate::model::{predict, ModelConfig, ModelParams};
use crate::selection::{assign_meta_indices, select_chunks, MetaIndices, SelectionStrategy};
use crate::tokenizer::{chunk_stay, CategoryTable, Chunk, Vocabulary, CLS_ID, PAD_ID};

/// Which notes of a stay the model may read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum NotesMode {
    #[default]
    All,
    DischargeOnly,
}

impl FromStr for NotesMode {
    type Err = HtdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(NotesMode::All),
            "discharge_only" => Ok(NotesMode::DischargeOnly),
            other => Err(HtdsError::Config(format!("unknown notes mode {other:?} (expected all|discharge_only)"))),
        }
    }
}

impl fmt::Display for NotesMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NotesMode::All => "all",
            NotesMode::DischargeOnly => "discharge_only",
        })
    }
}

impl NotesMode {
    pub fn apply(&self, stay: &HospitalStay) -> HospitalStay {
        match self {
            NotesMode::All => stay.clone(),
            NotesMode::DischargeOnly => stay.discharge_only(),
        }
    }
}

/// One stay ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedStay {
    pub stay_id: String,
    pub chunks: Vec<Chunk>,
    pub gold: Vec<f64>,
}

impl PreparedStay {
    pub fn gold_bool(&self) -> Vec<bool> {
        self.gold.iter().map(|&y| y > 0.5).collect()
    }
}

/// Everything needed to turn a stay into model input.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    pub vocab: Vocabulary,
    pub categories: CategoryTable,
    pub t_c: usize,
    pub n_c: usize,
    pub n_labels: usize,
    pub strategy: SelectionStrategy,
    pub notes_mode: NotesMode,
}

impl Preprocessor {
    pub fn prepare(&self, stay: &HospitalStay) -> Result<PreparedStay> {
        let visible = self.notes_mode.apply(stay);
        let chunked = chunk_stay(&visible, &self.vocab, &self.categories, self.t_c)?;
        let mut selected = select_chunks(&chunked.chunks, &visible, self.n_c, &self.strategy)?;
        if selected.is_empty() {
            // nothing readable: a lone CLS keeps the stay scorable
            let mut token_ids = vec![PAD_ID; self.t_c];
            token_ids[0] = CLS_ID;
            let fallback = self.categories.len() - 1;
            selected.push(Chunk { token_ids, real_len: 1, doc_index: 0, category_id: fallback, meta: MetaIndices::default() });
        }
        assign_meta_indices(&mut selected);
        Ok(PreparedStay { stay_id: stay.stay_id.clone(), chunks: selected, gold: stay.label_vector(self.n_labels) })
    }

    pub fn prepare_all(&self, stays: &[&HospitalStay]) -> Result<Vec<PreparedStay>> {
        stays.iter().map(|s| self.prepare(s)).collect()
    }
}

/// Probabilities for every stay, in input order. `threads > 1` scores stays
/// in parallel; results are identical either way.
pub fn predict_all(params: &ModelParams, cfg: &ModelConfig, stays: &[PreparedStay], threads: usize) -> Result<Vec<Vec<f64>>> {
    if threads <= 1 {
        return stays.iter().map(|s| predict(params, cfg, &s.chunks)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| HtdsError::Config(e.to_string()))?;
    pool.install(|| stays.par_iter().map(|s| predict(params, cfg, &s.chunks)).collect())
}

/// Evaluation parallelism from `HTDS_THREADS`, default 1.
pub fn threads_from_env() -> usize {
    std::env::var("HTDS_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n >= 1).unwrap_or(1)
}

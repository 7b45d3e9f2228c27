//! Chunk budget enforcement and metadata indices.
//!
//! When a stay produces more than `N_c` chunks, whole notes are admitted in a
//! strategy-specific order until the budget is reached; the last admitted
//! note is cut at the chunk level so exactly `N_c` chunks remain. Selected
//! chunks are always returned in chronological order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::corpus::{is_discharge, HospitalStay};
use crate::error::{HtdsError, Result};
use crate::tokenizer::Chunk;

/// Per-chunk indices into the PE, Rev-PE, TE, Rev-TE and CE tables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MetaIndices {
    pub pe: usize,
    pub rev_pe: usize,
    pub te: usize,
    pub rev_te: usize,
    pub ce: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SelectionStrategy {
    /// Round-robin over categories, most recent note of each first.
    Diversity,
    First,
    Last,
    /// Discharge summaries, then the named category, then everything else;
    /// each tier most recent first.
    CategoryPriority(String),
}

impl FromStr for SelectionStrategy {
    type Err = HtdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "diversity" => Ok(SelectionStrategy::Diversity),
            "first" => Ok(SelectionStrategy::First),
            "last" => Ok(SelectionStrategy::Last),
            other => match other.strip_prefix("category:") {
                Some(name) if !name.trim().is_empty() => Ok(SelectionStrategy::CategoryPriority(name.trim().to_string())),
                _ => Err(HtdsError::Config(format!("unknown selection strategy {other:?}"))),
            },
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionStrategy::Diversity => f.write_str("diversity"),
            SelectionStrategy::First => f.write_str("first"),
            SelectionStrategy::Last => f.write_str("last"),
            SelectionStrategy::CategoryPriority(c) => write!(f, "category:{c}"),
        }
    }
}

/// Order in which notes (by index into `stay.notes`) are admitted.
fn admission_order(docs: &[usize], stay: &HospitalStay, strategy: &SelectionStrategy) -> Vec<usize> {
    let category = |d: usize| stay.notes[d].category.as_str();
    match strategy {
        SelectionStrategy::First => docs.to_vec(),
        SelectionStrategy::Last => docs.iter().rev().copied().collect(),
        SelectionStrategy::Diversity => {
            let mut by_cat: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for &d in docs.iter().rev() {
                by_cat.entry(category(d)).or_default().push(d);
            }
            let rounds = by_cat.values().map(Vec::len).max().unwrap_or(0);
            let mut order = Vec::with_capacity(docs.len());
            for r in 0..rounds {
                let mut round: Vec<usize> = by_cat.values().filter_map(|v| v.get(r).copied()).collect();
                // most recent first within a round
                round.sort_unstable_by(|a, b| b.cmp(a));
                order.extend(round);
            }
            order
        }
        SelectionStrategy::CategoryPriority(priority) => {
            let tier = |d: usize| {
                let c = category(d);
                if is_discharge(c) {
                    0
                } else if c == priority {
                    1
                } else {
                    2
                }
            };
            let mut order: Vec<usize> = docs.iter().rev().copied().collect();
            order.sort_by_key(|&d| tier(d));
            order
        }
    }
}

/// Keeps at most `n_c` chunks. `chunks` must be in canonical
/// (document, within-document) order.
pub fn select_chunks(chunks: &[Chunk], stay: &HospitalStay, n_c: usize, strategy: &SelectionStrategy) -> Result<Vec<Chunk>> {
    if n_c == 0 {
        return Err(HtdsError::Config("chunk budget must be >= 1".into()));
    }
    if chunks.len() <= n_c {
        return Ok(chunks.to_vec());
    }
    let mut by_doc: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in chunks.iter().enumerate() {
        if c.doc_index >= stay.notes.len() {
            return Err(HtdsError::Data(format!("chunk refers to document {} of {}", c.doc_index, stay.notes.len())));
        }
        by_doc.entry(c.doc_index).or_default().push(i);
    }
    let docs: Vec<usize> = by_doc.keys().copied().collect();

    let mut keep: Vec<usize> = Vec::with_capacity(n_c);
    for d in admission_order(&docs, stay, strategy) {
        let room = n_c - keep.len();
        let of_doc = &by_doc[&d];
        keep.extend(of_doc.iter().take(room));
        if keep.len() == n_c {
            break;
        }
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| chunks[i].clone()).collect())
}

/// Fills in position, reversed position, document rank, reversed document
/// rank and category index. Document ranks are dense over the documents
/// present in `selected`.
pub fn assign_meta_indices(selected: &mut [Chunk]) {
    let n = selected.len();
    let mut ranks: BTreeMap<usize, usize> = BTreeMap::new();
    for c in selected.iter() {
        ranks.entry(c.doc_index).or_insert(0);
    }
    for (rank, v) in ranks.values_mut().enumerate() {
        *v = rank;
    }
    let d = ranks.len();
    for (pos, c) in selected.iter_mut().enumerate() {
        let te = ranks[&c.doc_index];
        c.meta = MetaIndices { pe: pos, rev_pe: n - 1 - pos, te, rev_te: d - 1 - te, ce: c.category_id };
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use std::collections::BTreeSet;

    use chrono::NaiveDate;

    use super::*;
    use crate::corpus::{ClinicalNote, DISCHARGE_CATEGORY};
    use crate::tokenizer::{CLS_ID, PAD_ID};

    /// Builds a stay from (category, hour, chunk count) and matching chunks.
    pub(crate) fn fixture(spec: &[(&str, i64, usize)]) -> (HospitalStay, Vec<Chunk>) {
        let t0 = NaiveDate::from_ymd_opt(2101, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let notes: Vec<ClinicalNote> = spec
            .iter()
            .enumerate()
            .map(|(i, (cat, hour, _))| ClinicalNote {
                note_id: format!("n{i:02}"),
                stay_id: "A".into(),
                category: cat.to_string(),
                charttime: t0 + chrono::Duration::hours(*hour),
                text: "x".into(),
            })
            .collect();
        let stay = HospitalStay::new("A", notes, BTreeSet::new());
        let mut chunks = Vec::new();
        for (doc_index, note) in stay.notes.iter().enumerate() {
            let i: usize = note.note_id[1..].parse().unwrap();
            for k in 0..spec[i].2 {
                chunks.push(Chunk {
                    token_ids: vec![CLS_ID, 10 + k as u32, PAD_ID],
                    real_len: 2,
                    doc_index,
                    category_id: 0,
                    meta: MetaIndices::default(),
                });
            }
        }
        (stay, chunks)
    }

    fn hours(stay: &HospitalStay, sel: &[Chunk]) -> Vec<(String, u32)> {
        sel.iter()
            .map(|c| {
                let n = &stay.notes[c.doc_index];
                (n.category.clone(), n.charttime.format("%H").to_string().parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn under_budget_is_identity() {
        let (stay, chunks) = fixture(&[("Nursing", 1, 4), ("Radiology", 2, 6)]);
        for s in [SelectionStrategy::Diversity, SelectionStrategy::First, SelectionStrategy::Last, SelectionStrategy::CategoryPriority("Radiology".into())] {
            assert_eq!(select_chunks(&chunks, &stay, 32, &s).unwrap(), chunks);
        }
    }

    const SPEC_NOTES: [(&str, i64, usize); 4] = [(DISCHARGE_CATEGORY, 10, 2), ("Radiology", 3, 1), ("Radiology", 5, 1), ("Nursing", 4, 1)];

    #[test]
    fn diversity_picks_latest_of_each_category() {
        let (stay, chunks) = fixture(&SPEC_NOTES);
        let sel = select_chunks(&chunks, &stay, 4, &SelectionStrategy::Diversity).unwrap();
        let d = DISCHARGE_CATEGORY.to_string();
        assert_eq!(hours(&stay, &sel), vec![("Nursing".into(), 4), ("Radiology".into(), 5), (d.clone(), 10), (d, 10)]);
    }

    #[test]
    fn first_truncates_the_discharge_summary() {
        let (stay, chunks) = fixture(&SPEC_NOTES);
        let sel = select_chunks(&chunks, &stay, 4, &SelectionStrategy::First).unwrap();
        let got = hours(&stay, &sel);
        assert_eq!(got.iter().map(|g| g.1).collect::<Vec<_>>(), [3, 4, 5, 10]);
        assert_eq!(sel[3].token_ids[1], 10, "head chunk of the truncated note is kept");
    }

    #[test]
    fn category_priority_puts_discharge_first() {
        let (stay, chunks) = fixture(&[("Nursing", 1, 2), ("Radiology", 2, 2), (DISCHARGE_CATEGORY, 3, 2), ("Nursing", 4, 2)]);
        let sel = select_chunks(&chunks, &stay, 4, &SelectionStrategy::CategoryPriority("Radiology".into())).unwrap();
        assert_eq!(hours(&stay, &sel).iter().map(|g| g.1).collect::<Vec<_>>(), [2, 2, 3, 3]);
        let sel = select_chunks(&chunks, &stay, 5, &SelectionStrategy::CategoryPriority("Unknown".into())).unwrap();
        assert_eq!(hours(&stay, &sel).iter().map(|g| g.1).collect::<Vec<_>>(), [2, 3, 3, 4, 4]);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("category:Radiology".parse::<SelectionStrategy>().unwrap(), SelectionStrategy::CategoryPriority("Radiology".into()));
        assert_eq!("last".parse::<SelectionStrategy>().unwrap(), SelectionStrategy::Last);
        assert!("random".parse::<SelectionStrategy>().is_err());
        assert!("category:".parse::<SelectionStrategy>().is_err());
        for s in ["diversity", "first", "last", "category:Nursing"] {
            assert_eq!(s.parse::<SelectionStrategy>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn meta_indices_two_documents() {
        let (_, mut chunks) = fixture(&[("Nursing", 1, 2), ("Radiology", 2, 1)]);
        assign_meta_indices(&mut chunks);
        let m: Vec<MetaIndices> = chunks.iter().map(|c| c.meta).collect();
        assert_eq!(m.iter().map(|m| m.pe).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(m.iter().map(|m| m.rev_pe).collect::<Vec<_>>(), [2, 1, 0]);
        assert_eq!(m.iter().map(|m| m.te).collect::<Vec<_>>(), [0, 0, 1]);
        assert_eq!(m.iter().map(|m| m.rev_te).collect::<Vec<_>>(), [1, 1, 0]);
    }

    #[test]
    fn meta_indices_single_chunk() {
        let (_, mut chunks) = fixture(&[("Nursing", 1, 1)]);
        assign_meta_indices(&mut chunks);
        assert_eq!(chunks[0].meta, MetaIndices::default());
    }

    #[test]
    fn meta_indices_skip_unselected_documents() {
        let (stay, chunks) = fixture(&[("Nursing", 1, 1), ("Nursing", 2, 1), ("Nursing", 3, 1)]);
        let mut sel = select_chunks(&chunks, &stay, 2, &SelectionStrategy::Last).unwrap();
        assign_meta_indices(&mut sel);
        assert_eq!(sel.iter().map(|c| (c.doc_index, c.meta.te)).collect::<Vec<_>>(), [(1, 0), (2, 1)]);
    }
}

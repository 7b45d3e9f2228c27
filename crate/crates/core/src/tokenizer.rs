//! Corpus-derived word-level vocabulary and per-document chunking.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::HospitalStay;
use crate::error::{HtdsError, Result};
use crate::selection::MetaIndices;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<cls>"];

const VOCAB_HEADER: &str = "#htds-vocab v1 reserved=";

/// Lowercases and splits on whitespace and punctuation boundaries. Runs of
/// alphanumeric characters form one token; every other non-space character is
/// a token of its own, so punctuation is kept.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(content: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(content);
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(HtdsError::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = format!("{VOCAB_HEADER}{}\n", RESERVED.join(","));
        for t in &self.tokens[RESERVED.len()..] {
            s.push_str(t);
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| HtdsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let content = fs::read_to_string(path).map_err(|e| HtdsError::io(path, e))?;
        let mut lines = content.lines();
        let header = lines.next().ok_or_else(|| HtdsError::parse(&name, 1, "missing header"))?;
        let reserved = header
            .strip_prefix(VOCAB_HEADER)
            .ok_or_else(|| HtdsError::parse(&name, 1, "bad vocabulary header"))?;
        if reserved != RESERVED.join(",") {
            return Err(HtdsError::parse(&name, 1, format!("unexpected reserved tokens {reserved:?}")));
        }
        Vocabulary::from_tokens(lines.map(str::to_string).collect())
    }
}

/// Builds a vocabulary of at most `max_size` ids (reserved ids included) from
/// the most frequent tokens; frequency ties are broken lexicographically.
pub fn build_vocab<'a>(stays: impl IntoIterator<Item = &'a HospitalStay>, max_size: usize) -> Result<Vocabulary> {
    if max_size < RESERVED.len() + 1 {
        return Err(HtdsError::Config(format!("vocabulary max_size must be >= 4, got {max_size}")));
    }
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut any = false;
    for stay in stays {
        any = true;
        for note in &stay.notes {
            for t in tokenize(&note.text) {
                *freq.entry(t).or_default() += 1;
            }
        }
    }
    if !any {
        return Err(HtdsError::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    for r in RESERVED {
        freq.remove(r);
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - RESERVED.len());
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t).collect())
}

/// Stable category ids. Names are sorted; unseen categories map to a trailing
/// fallback id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryTable {
    names: Vec<String>,
}

impl CategoryTable {
    pub fn new(mut names: Vec<String>) -> Self {
        names.sort();
        names.dedup();
        CategoryTable { names }
    }

    pub fn id(&self, category: &str) -> usize {
        self.names.binary_search_by(|n| n.as_str().cmp(category)).unwrap_or(self.names.len())
    }

    /// Number of embedding rows needed, fallback included.
    pub fn len(&self) -> usize {
        self.names.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    /// Exactly `T_c` ids, CLS first, right-padded with PAD.
    pub token_ids: Vec<u32>,
    pub real_len: usize,
    /// Index of the source note within the stay.
    pub doc_index: usize,
    pub category_id: usize,
    pub meta: MetaIndices,
}

impl Chunk {
    pub fn content(&self) -> &[u32] {
        &self.token_ids[1..self.real_len]
    }

    pub fn is_valid(&self, pos: usize) -> bool {
        pos < self.real_len
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChunkedStay {
    pub chunks: Vec<Chunk>,
    pub skipped_docs: usize,
}

/// Splits each note into CLS-prefixed chunks of at most `t_c` tokens. A note
/// never shares a chunk with another note.
pub fn chunk_stay(stay: &HospitalStay, vocab: &Vocabulary, categories: &CategoryTable, t_c: usize) -> Result<ChunkedStay> {
    if t_c < 2 {
        return Err(HtdsError::Config(format!("tokens per chunk must be >= 2, got {t_c}")));
    }
    let mut out = ChunkedStay::default();
    for (doc_index, note) in stay.notes.iter().enumerate() {
        let ids = vocab.encode(&note.text);
        if ids.is_empty() {
            out.skipped_docs += 1;
            continue;
        }
        let category_id = categories.id(&note.category);
        for piece in ids.chunks(t_c - 1) {
            let mut token_ids = Vec::with_capacity(t_c);
            token_ids.push(CLS_ID);
            token_ids.extend_from_slice(piece);
            let real_len = token_ids.len();
            token_ids.resize(t_c, PAD_ID);
            out.chunks.push(Chunk { token_ids, real_len, doc_index, category_id, meta: MetaIndices::default() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use chrono::NaiveDate;

    use super::*;
    use crate::corpus::ClinicalNote;

    pub(crate) fn stay_with(texts: &[&str]) -> HospitalStay {
        let t0 = NaiveDate::from_ymd_opt(2101, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let notes = texts
            .iter()
            .enumerate()
            .map(|(i, t)| ClinicalNote {
                note_id: format!("n{i}"),
                stay_id: "A".into(),
                category: "Nursing".into(),
                charttime: t0 + chrono::Duration::hours(i as i64),
                text: t.to_string(),
            })
            .collect();
        HospitalStay::new("A", notes, BTreeSet::new())
    }

    #[test]
    fn tokenize_keeps_punctuation() {
        assert_eq!(tokenize("BP 120/80, stable."), ["bp", "120", "/", "80", ",", "stable", "."]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn three_tokens_give_six_ids() {
        let stay = stay_with(&["a b c a"]);
        let v = build_vocab([&stay], 100).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("zzz"), UNK_ID);
        assert_eq!(v.token(CLS_ID), Some("<cls>"));
    }

    #[test]
    fn truncation_keeps_most_frequent_then_lexicographic() {
        // freq: c=2, a=1, b=1 -> keep c, then a (a < b)
        let stay = stay_with(&["b c a c"]);
        let v = build_vocab([&stay], 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(3), Some("c"));
        assert_eq!(v.token(4), Some("a"));
        assert_eq!(v.id("b"), UNK_ID);
    }

    #[test]
    fn vocab_rejects_tiny_max() {
        let stay = stay_with(&["a"]);
        assert!(build_vocab([&stay], 3).is_err());
    }

    #[test]
    fn vocab_save_load_roundtrip() {
        let stay = stay_with(&["alpha beta, gamma; alpha"]);
        let v = build_vocab([&stay], 50).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("#htds-vocab v1 reserved=<pad>,<unk>,<cls>\n"));
    }

    #[test]
    fn long_document_splits_greedily() {
        let words: Vec<String> = (0..1022).map(|i| format!("w{i}")).collect();
        let stay = stay_with(&[&words.join(" ")]);
        let v = build_vocab([&stay], 2000).unwrap();
        let cats = CategoryTable::new(vec!["Nursing".into()]);
        let chunked = chunk_stay(&stay, &v, &cats, 512).unwrap();
        assert_eq!(chunked.chunks.len(), 2);
        assert_eq!(chunked.chunks[0].real_len, 512);
        assert_eq!(chunked.chunks[1].real_len, 512);
        assert!(chunked.chunks.iter().all(|c| c.token_ids[0] == CLS_ID && c.token_ids.len() == 512));
    }

    #[test]
    fn documents_never_share_a_chunk() {
        let words: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        let doc = words.join(" ");
        let stay = stay_with(&[&doc, &doc]);
        let v = build_vocab([&stay], 2000).unwrap();
        let cats = CategoryTable::new(vec!["Nursing".into()]);
        let chunked = chunk_stay(&stay, &v, &cats, 512).unwrap();
        assert_eq!(chunked.chunks.len(), 2);
        assert_eq!(chunked.chunks[0].doc_index, 0);
        assert_eq!(chunked.chunks[1].doc_index, 1);
        assert_eq!(chunked.chunks[1].real_len, 301);
        assert_eq!(chunked.chunks[1].token_ids[301], PAD_ID);
    }

    #[test]
    fn empty_documents_are_skipped_and_counted() {
        let stay = stay_with(&["a b", "  ", "c"]);
        let v = build_vocab([&stay], 50).unwrap();
        let cats = CategoryTable::new(vec![]);
        let chunked = chunk_stay(&stay, &v, &cats, 4).unwrap();
        assert_eq!(chunked.skipped_docs, 1);
        assert_eq!(chunked.chunks.iter().map(|c| c.doc_index).collect::<Vec<_>>(), [0, 2]);
        assert_eq!(chunked.chunks[0].category_id, 0);
    }

    #[test]
    fn category_table_has_fallback() {
        let cats = CategoryTable::new(vec!["Radiology".into(), "Nursing".into(), "Nursing".into()]);
        assert_eq!(cats.id("Nursing"), 0);
        assert_eq!(cats.id("Radiology"), 1);
        assert_eq!(cats.id("ECG"), 2);
        assert_eq!(cats.len(), 3);
    }

    proptest::proptest! {
        #[test]
        fn chunks_reconstruct_documents(lens in proptest::collection::vec(0usize..40, 1..5), t_c in 2usize..9) {
            let docs: Vec<String> = lens.iter().enumerate()
                .map(|(d, &n)| (0..n).map(|i| format!("d{d}x{}", i % 7)).collect::<Vec<_>>().join(" "))
                .collect();
            let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
            let stay = stay_with(&refs);
            let v = build_vocab([&stay], 1000).unwrap();
            let cats = CategoryTable::new(vec![]);
            let chunked = chunk_stay(&stay, &v, &cats, t_c).unwrap();
            for (d, doc) in docs.iter().enumerate() {
                let of_doc: Vec<&Chunk> = chunked.chunks.iter().filter(|c| c.doc_index == d).collect();
                let rebuilt: Vec<u32> = of_doc.iter().flat_map(|c| c.content().iter().copied()).collect();
                proptest::prop_assert_eq!(&rebuilt, &v.encode(doc));
                proptest::prop_assert_eq!(of_doc.len(), rebuilt.len().div_ceil(t_c - 1));
                for c in &of_doc {
                    proptest::prop_assert!(c.real_len >= 2 && c.real_len <= t_c);
                }
            }
        }
    }
}

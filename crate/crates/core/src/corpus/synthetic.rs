//! Deterministic synthetic corpora with planted label keywords.
//!
//! Every label owns `keywords_per_label` pseudo-words. For each label a stay
//! carries, the first `floor(discharge_signal_fraction * keywords_per_label)`
//! keywords go into the discharge summary and the remaining ones into other
//! notes only. Decoy mentions plant the discharge-side keywords of labels the
//! stay does NOT carry into its discharge summary, so the discharge summary
//! alone is ambiguous while the other notes are not.

use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClinicalNote, Corpus, DatasetSplit, HospitalStay, LabelSpace, SplitName, DISCHARGE_CATEGORY};
use crate::error::{HtdsError, Result};

const CONSONANTS: &[u8] = b"bdgkmprstvz";
const VOWELS: &[u8] = b"aeiou";
const SYLLABLES: usize = 11 * 5;
/// Keywords are three syllables long; filler words two. Lengths differ, so the
/// two vocabularies never collide.
pub const KEYWORD_CAPACITY: usize = SYLLABLES * SYLLABLES * SYLLABLES;
const FILLER_WORDS: usize = 400;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_stays: usize,
    pub n_labels: usize,
    /// Non-discharge note categories; each stay also gets one discharge summary.
    pub categories: Vec<String>,
    pub notes_per_stay: (usize, usize),
    pub words_per_note: (usize, usize),
    pub keywords_per_label: usize,
    pub discharge_signal_fraction: f64,
    pub labels_per_stay: (usize, usize),
    /// Probability, per label a stay does not carry, of a decoy mention in its
    /// discharge summary.
    pub decoy_rate: f64,
    pub split_fracs: (f64, f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let total = (8066 + 1573 + 1729) as f64;
        SyntheticSpec {
            seed: 0,
            n_stays: 200,
            n_labels: 10,
            categories: vec!["Nursing".into(), "Physician".into(), "Radiology".into()],
            notes_per_stay: (3, 5),
            words_per_note: (8, 16),
            keywords_per_label: 2,
            discharge_signal_fraction: 0.5,
            labels_per_stay: (1, 3),
            decoy_rate: 0.1,
            split_fracs: (8066.0 / total, 1573.0 / total, 1729.0 / total),
        }
    }
}

impl SyntheticSpec {
    pub fn discharge_keywords(&self) -> usize {
        (self.discharge_signal_fraction * self.keywords_per_label as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HtdsError::Config(format!("synthetic spec: {m}")));
        if self.n_labels == 0 || self.keywords_per_label == 0 {
            return bad("n_labels and keywords_per_label must be positive");
        }
        if self.n_labels * self.keywords_per_label > KEYWORD_CAPACITY {
            return Err(HtdsError::Config(format!(
                "synthetic spec: {} labels x {} keywords exceeds keyword capacity {KEYWORD_CAPACITY}",
                self.n_labels, self.keywords_per_label
            )));
        }
        if self.categories.is_empty() || self.categories.iter().any(|c| c == DISCHARGE_CATEGORY || c.trim().is_empty()) {
            return bad("categories must be non-empty and exclude the discharge category");
        }
        let (nlo, nhi) = self.notes_per_stay;
        if nlo < 2 || nlo > nhi {
            return bad("notes_per_stay must satisfy 2 <= lo <= hi");
        }
        let (wlo, whi) = self.words_per_note;
        if wlo == 0 || wlo > whi {
            return bad("words_per_note must satisfy 1 <= lo <= hi");
        }
        if !(0.0..1.0).contains(&self.discharge_signal_fraction) {
            return bad("discharge_signal_fraction must lie in [0, 1)");
        }
        let (llo, lhi) = self.labels_per_stay;
        if llo > lhi || lhi > self.n_labels {
            return bad("labels_per_stay must satisfy lo <= hi <= n_labels");
        }
        if !(0.0..=1.0).contains(&self.decoy_rate) {
            return bad("decoy_rate must lie in [0, 1]");
        }
        let (a, b, c) = self.split_fracs;
        if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return bad("split fractions must be non-negative and sum to 1");
        }
        Ok(())
    }
}

fn syllable(i: usize) -> [u8; 2] {
    [CONSONANTS[i / VOWELS.len()], VOWELS[i % VOWELS.len()]]
}

fn word_from_digits(mut idx: usize, n_syllables: usize) -> String {
    let mut out = Vec::with_capacity(n_syllables * 2);
    for _ in 0..n_syllables {
        out.extend_from_slice(&syllable(idx % SYLLABLES));
        idx /= SYLLABLES;
    }
    String::from_utf8(out).expect("ascii")
}

/// The `j`-th keyword of `label`.
pub fn keyword(label: usize, j: usize, keywords_per_label: usize) -> String {
    let idx = label * keywords_per_label + j;
    // 7919 is coprime with the capacity (5^3 * 11^3), so this is a bijection.
    let mixed = (idx * 7919 + 12345) % KEYWORD_CAPACITY;
    word_from_digits(mixed, 3)
}

fn filler(i: usize) -> String {
    let mixed = (i * 131 + 7) % (SYLLABLES * SYLLABLES);
    word_from_digits(mixed, 2)
}

fn render(words: &[String], rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    let mut since_break = 0;
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w);
        since_break += 1;
        if since_break >= 6 && i + 1 < words.len() && rng.gen_bool(0.3) {
            out.push(if rng.gen_bool(0.7) { ',' } else { ';' });
            since_break = 0;
        }
    }
    out.push('.');
    out
}

/// Generates stays, label space and split. Byte-identical output for equal specs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_dis = spec.discharge_keywords();
    let base = NaiveDate::from_ymd_opt(2101, 1, 1).and_then(|d| d.and_hms_opt(0, 0, 0)).expect("valid date");
    let width = spec.n_stays.max(1).to_string().len().max(4);

    let mut stays = Vec::with_capacity(spec.n_stays);
    for s in 0..spec.n_stays {
        let stay_id = format!("S{s:0width$}");
        let n_lab = rng.gen_range(spec.labels_per_stay.0..=spec.labels_per_stay.1);
        let labels: BTreeSet<usize> = sample(&mut rng, spec.n_labels, n_lab).into_iter().collect();
        let n_notes = rng.gen_range(spec.notes_per_stay.0..=spec.notes_per_stay.1);

        let mut bodies: Vec<Vec<String>> = (0..n_notes)
            .map(|_| {
                let n_words = rng.gen_range(spec.words_per_note.0..=spec.words_per_note.1);
                (0..n_words).map(|_| filler(rng.gen_range(0..FILLER_WORDS))).collect()
            })
            .collect();
        let discharge = n_notes - 1;
        let plant = |body: &mut Vec<String>, word: String, rng: &mut ChaCha8Rng| {
            let at = rng.gen_range(0..=body.len());
            body.insert(at, word);
        };
        for label in 0..spec.n_labels {
            if labels.contains(&label) {
                for j in 0..spec.keywords_per_label {
                    let kw = keyword(label, j, spec.keywords_per_label);
                    let target = if j < n_dis { discharge } else { rng.gen_range(0..discharge) };
                    plant(&mut bodies[target], kw, &mut rng);
                }
            } else if n_dis > 0 && rng.gen_bool(spec.decoy_rate) {
                for j in 0..n_dis {
                    plant(&mut bodies[discharge], keyword(label, j, spec.keywords_per_label), &mut rng);
                }
            }
        }

        let mut t = base + Duration::days(s as i64) + Duration::minutes(rng.gen_range(0..600));
        let mut notes = Vec::with_capacity(n_notes);
        for (k, body) in bodies.iter().enumerate() {
            let category = if k == discharge {
                DISCHARGE_CATEGORY.to_string()
            } else {
                spec.categories[rng.gen_range(0..spec.categories.len())].clone()
            };
            notes.push(ClinicalNote {
                note_id: format!("{stay_id}-{k:03}"),
                stay_id: stay_id.clone(),
                category,
                charttime: t,
                text: render(body, &mut rng),
            });
            t += Duration::minutes(rng.gen_range(30..720));
        }
        stays.push(HospitalStay::new(stay_id, notes, labels));
    }

    let mut order: Vec<usize> = (0..spec.n_stays).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (spec.split_fracs.0 * spec.n_stays as f64).round() as usize;
    let n_dev = ((spec.split_fracs.1 * spec.n_stays as f64).round() as usize).min(spec.n_stays - n_train);
    let mut split = DatasetSplit::default();
    for (rank, &i) in order.iter().enumerate() {
        let name = if rank < n_train {
            SplitName::Train
        } else if rank < n_train + n_dev {
            SplitName::Dev
        } else {
            SplitName::Test
        };
        split.insert(name, stays[i].stay_id.clone());
    }

    let labels = LabelSpace::new((0..spec.n_labels).map(|l| format!("C{l:03}")).collect())?;
    Ok(Corpus { stays, labels, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::is_discharge;

    fn words(text: &str) -> Vec<String> {
        crate::tokenizer::tokenize(text)
    }

    #[test]
    fn keywords_are_distinct_and_disjoint_from_filler() {
        let mut kws = BTreeSet::new();
        for l in 0..50 {
            for j in 0..4 {
                let k = keyword(l, j, 4);
                assert_eq!(k.len(), 6);
                assert!(kws.insert(k));
            }
        }
        assert!((0..FILLER_WORDS).all(|i| filler(i).len() == 4));
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = SyntheticSpec { n_stays: 30, ..Default::default() };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn zero_stays_gives_empty_corpus() {
        let c = generate_synthetic(&SyntheticSpec { n_stays: 0, ..Default::default() }).unwrap();
        assert!(c.stays.is_empty());
        assert!(c.split.train.is_empty() && c.split.dev.is_empty() && c.split.test.is_empty());
    }

    #[test]
    fn capacity_is_enforced() {
        let spec = SyntheticSpec { n_labels: 1000, keywords_per_label: 200, labels_per_stay: (1, 2), ..Default::default() };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn discharge_is_last_and_split_covers_all() {
        let c = generate_synthetic(&SyntheticSpec { n_stays: 40, ..Default::default() }).unwrap();
        for s in &c.stays {
            let last = s.notes.last().unwrap();
            assert!(is_discharge(&last.category));
            assert!(s.notes.iter().all(|n| n.charttime <= last.charttime));
            assert_eq!(s.notes.iter().filter(|n| is_discharge(&n.category)).count(), 1);
        }
        assert!(c.split.is_disjoint());
        assert_eq!(c.split.train.len() + c.split.dev.len() + c.split.test.len(), 40);
    }

    // Scan of the emitted corpus: every carried label has a keyword that
    // never occurs in the discharge summary but does occur elsewhere.
    #[test]
    fn half_signal_leaves_exclusive_keywords_outside_discharge() {
        let spec = SyntheticSpec { n_stays: 60, discharge_signal_fraction: 0.5, keywords_per_label: 3, decoy_rate: 0.3, ..Default::default() };
        let c = generate_synthetic(&spec).unwrap();
        for s in &c.stays {
            let dis: BTreeSet<String> = s.notes.iter().filter(|n| is_discharge(&n.category)).flat_map(|n| words(&n.text)).collect();
            let rest: BTreeSet<String> = s.notes.iter().filter(|n| !is_discharge(&n.category)).flat_map(|n| words(&n.text)).collect();
            for &l in &s.labels {
                let exclusive = (0..spec.keywords_per_label)
                    .map(|j| keyword(l, j, spec.keywords_per_label))
                    .any(|k| rest.contains(&k) && !dis.contains(&k));
                assert!(exclusive, "stay {} label {l}", s.stay_id);
            }
        }
    }
}

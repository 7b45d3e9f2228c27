use std::fmt;

use super::{is_discharge, HospitalStay};
use crate::error::{HtdsError, Result};
use crate::tokenizer::Vocabulary;

#[derive(Clone, Debug, PartialEq)]
pub struct StatRow {
    pub name: &'static str,
    pub mean: f64,
    /// Population standard deviation over stays.
    pub sd: f64,
}

/// Per-stay amount of text, for discharge summaries alone and for all notes.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub n_stays: usize,
    pub discharge: [StatRow; 3],
    pub all_notes: [StatRow; 3],
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn rows(stays: &[&HospitalStay], vocab: &Vocabulary, keep: impl Fn(&str) -> bool) -> [StatRow; 3] {
    let mut docs = Vec::with_capacity(stays.len());
    let mut words = Vec::with_capacity(stays.len());
    let mut tokens = Vec::with_capacity(stays.len());
    for stay in stays {
        let notes: Vec<_> = stay.notes.iter().filter(|n| keep(&n.category)).collect();
        docs.push(notes.len() as f64);
        words.push(notes.iter().map(|n| n.text.split_whitespace().count()).sum::<usize>() as f64);
        tokens.push(notes.iter().map(|n| vocab.encode(&n.text).len()).sum::<usize>() as f64);
    }
    let row = |name, xs: &[f64]| {
        let (mean, sd) = mean_sd(xs);
        StatRow { name, mean, sd }
    };
    [row("Total Documents", &docs), row("Total Words", &words), row("Total Tokens", &tokens)]
}

pub fn corpus_stats(stays: &[&HospitalStay], vocab: &Vocabulary) -> Result<StatsReport> {
    if stays.is_empty() {
        return Err(HtdsError::Data("corpus statistics need at least one stay".into()));
    }
    Ok(StatsReport {
        n_stays: stays.len(),
        discharge: rows(stays, vocab, is_discharge),
        all_notes: rows(stays, vocab, |_| true),
    })
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20}{:>12}{:>12}", "", "Mean", "SD")?;
        for (title, rows) in [("Discharge Summaries", &self.discharge), ("All Notes", &self.all_notes)] {
            writeln!(f, "{title}")?;
            for r in rows.iter() {
                writeln!(f, "{:<20}{:>12.1}{:>12.1}", r.name, r.mean, r.sd)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use chrono::NaiveDate;

    use super::*;
    use crate::corpus::{ClinicalNote, DISCHARGE_CATEGORY};
    use crate::tokenizer::build_vocab;

    fn stay(id: &str, cats: &[&str]) -> HospitalStay {
        let t0 = NaiveDate::from_ymd_opt(2101, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let notes = cats
            .iter()
            .enumerate()
            .map(|(i, c)| ClinicalNote {
                note_id: format!("{id}{i}"),
                stay_id: id.into(),
                category: c.to_string(),
                charttime: t0 + chrono::Duration::hours(i as i64),
                text: "two words.".into(),
            })
            .collect();
        HospitalStay::new(id, notes, BTreeSet::new())
    }

    #[test]
    fn mean_and_population_sd() {
        let a = stay("a", &[DISCHARGE_CATEGORY]);
        let b = stay("b", &["Nursing", "Nursing", DISCHARGE_CATEGORY]);
        let v = build_vocab([&a, &b], 100).unwrap();
        let r = corpus_stats(&[&a, &b], &v).unwrap();
        assert_eq!(r.all_notes[0].mean, 2.0);
        assert_eq!(r.all_notes[0].sd, 1.0);
        assert_eq!(r.discharge[0].mean, 1.0);
        assert_eq!(r.discharge[0].sd, 0.0);
        // "two words." -> 2 words, 3 tokens
        assert_eq!(r.all_notes[1].mean, 4.0);
        assert_eq!(r.all_notes[2].mean, 6.0);
    }

    #[test]
    fn single_stay_has_zero_sd() {
        let a = stay("a", &[DISCHARGE_CATEGORY, "Radiology"]);
        let v = build_vocab([&a], 100).unwrap();
        let r = corpus_stats(&[&a], &v).unwrap();
        assert!(r.discharge.iter().chain(r.all_notes.iter()).all(|row| row.sd == 0.0));
    }

    #[test]
    fn layout_has_both_groups() {
        let a = stay("a", &[DISCHARGE_CATEGORY]);
        let v = build_vocab([&a], 100).unwrap();
        let text = corpus_stats(&[&a], &v).unwrap().to_string();
        for needle in ["Discharge Summaries", "All Notes", "Total Documents", "Total Words", "Total Tokens"] {
            assert!(text.contains(needle), "{needle}");
        }
        assert!(text.find("Discharge Summaries").unwrap() < text.find("All Notes").unwrap());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let a = stay("a", &["Nursing"]);
        let v = build_vocab([&a], 100).unwrap();
        assert!(corpus_stats(&[], &v).is_err());
    }
}

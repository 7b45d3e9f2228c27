use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{clean_category, ClinicalNote, Corpus, DatasetSplit, HospitalStay, LabelSpace, SplitName, NURSING_OTHER_CATEGORY};
use crate::error::{HtdsError, Result};

pub const NOTES_FILE: &str = "notes.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const SPLITS_FILE: &str = "splits.jsonl";

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
const ACCEPTED_TIME_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];

#[derive(Serialize, Deserialize)]
struct NoteRecord {
    note_id: String,
    stay_id: String,
    category: String,
    charttime: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    stay_id: String,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SplitRecord {
    stay_id: String,
    split: SplitName,
}

/// Counts of what cleaning changed or discarded.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub empty_notes_dropped: usize,
    pub stays_dropped: usize,
    pub nursing_other_remapped: usize,
}

pub fn parse_charttime(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    ACCEPTED_TIME_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn format_charttime(t: &NaiveDateTime) -> String {
    t.format(TIME_FORMAT).to_string()
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let content = fs::read_to_string(path).map_err(|e| HtdsError::io(path, e))?;
    Ok(content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn parse_record<T: for<'de> Deserialize<'de>>(path: &Path, line_no: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| HtdsError::parse(path.display().to_string(), line_no, e.to_string()))
}

/// Parses one stay's notes from notes-file lines. Empty notes are dropped
/// and categories cleaned as on ingestion; every line must name the same
/// stay. The result carries no labels.
pub fn parse_stay_notes(text: &str, source: &str) -> Result<HospitalStay> {
    let mut notes = Vec::new();
    let mut stay_id: Option<String> = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let line_no = i + 1;
        let rec: NoteRecord = serde_json::from_str(line).map_err(|e| HtdsError::parse(source, line_no, e.to_string()))?;
        match &stay_id {
            None => stay_id = Some(rec.stay_id.clone()),
            Some(id) if *id != rec.stay_id => {
                return Err(HtdsError::parse(source, line_no, format!("stay_id {:?} differs from {id:?}", rec.stay_id)));
            }
            Some(_) => {}
        }
        let charttime =
            parse_charttime(&rec.charttime).ok_or_else(|| HtdsError::parse(source, line_no, format!("bad charttime {:?}", rec.charttime)))?;
        if rec.text.trim().is_empty() {
            continue;
        }
        notes.push(ClinicalNote { note_id: rec.note_id, stay_id: rec.stay_id, category: clean_category(&rec.category), charttime, text: rec.text });
    }
    let stay_id = stay_id.ok_or_else(|| HtdsError::Data(format!("{source}: no notes")))?;
    Ok(HospitalStay::new(stay_id, notes, BTreeSet::new()))
}

/// Reads the three line-delimited corpus files into grouped, cleaned stays.
///
/// The label space keeps the `max_labels` most frequent codes; stays whose
/// codes all fall outside it keep an empty label set.
pub fn ingest_notes(notes_file: &Path, labels_file: &Path, split_file: &Path, max_labels: usize) -> Result<(Corpus, IngestReport)> {
    let mut report = IngestReport::default();
    let notes_name = notes_file.display().to_string();

    let mut seen_notes: HashSet<String> = HashSet::new();
    let mut seen_stays: HashSet<String> = HashSet::new();
    let mut grouped: BTreeMap<String, Vec<ClinicalNote>> = BTreeMap::new();
    for (line_no, line) in read_lines(notes_file)? {
        let rec: NoteRecord = parse_record(notes_file, line_no, &line)?;
        if !seen_notes.insert(rec.note_id.clone()) {
            return Err(HtdsError::parse(&notes_name, line_no, format!("duplicate note_id {:?}", rec.note_id)));
        }
        let charttime = parse_charttime(&rec.charttime)
            .ok_or_else(|| HtdsError::parse(&notes_name, line_no, format!("bad charttime {:?}", rec.charttime)))?;
        seen_stays.insert(rec.stay_id.clone());
        if rec.text.trim().is_empty() {
            report.empty_notes_dropped += 1;
            continue;
        }
        if rec.category.trim() == NURSING_OTHER_CATEGORY {
            report.nursing_other_remapped += 1;
        }
        grouped.entry(rec.stay_id.clone()).or_default().push(ClinicalNote {
            note_id: rec.note_id,
            stay_id: rec.stay_id,
            category: clean_category(&rec.category),
            charttime,
            text: rec.text,
        });
    }
    report.stays_dropped = seen_stays.len() - grouped.len();

    let labels_name = labels_file.display().to_string();
    let mut raw_labels: HashMap<String, Vec<String>> = HashMap::new();
    for (line_no, line) in read_lines(labels_file)? {
        let rec: LabelRecord = parse_record(labels_file, line_no, &line)?;
        if !seen_stays.contains(&rec.stay_id) {
            return Err(HtdsError::parse(&labels_name, line_no, format!("stay_id {:?} has no notes", rec.stay_id)));
        }
        if raw_labels.insert(rec.stay_id.clone(), rec.labels).is_some() {
            return Err(HtdsError::parse(&labels_name, line_no, format!("duplicate stay_id {:?}", rec.stay_id)));
        }
    }

    let label_space = LabelSpace::top_k(
        grouped
            .keys()
            .filter_map(|id| raw_labels.get(id))
            .flat_map(|codes| codes.iter().collect::<BTreeSet<_>>())
            .map(String::as_str),
        max_labels,
    )?;
    if label_space.is_empty() {
        return Err(HtdsError::Data("empty label space: no labels derivable from corpus".into()));
    }

    let split_name = split_file.display().to_string();
    let mut split = DatasetSplit::default();
    let mut assigned: HashSet<String> = HashSet::new();
    for (line_no, line) in read_lines(split_file)? {
        let rec: SplitRecord = parse_record(split_file, line_no, &line)?;
        if !seen_stays.contains(&rec.stay_id) {
            return Err(HtdsError::parse(&split_name, line_no, format!("unknown stay_id {:?}", rec.stay_id)));
        }
        if !assigned.insert(rec.stay_id.clone()) {
            return Err(HtdsError::parse(&split_name, line_no, format!("stay_id {:?} assigned twice", rec.stay_id)));
        }
        if grouped.contains_key(&rec.stay_id) {
            split.insert(rec.split, rec.stay_id);
        }
    }
    if let Some(missing) = grouped.keys().find(|id| !assigned.contains(*id)) {
        return Err(HtdsError::Data(format!("stay {missing:?} missing from split file")));
    }

    let stays = grouped
        .into_iter()
        .map(|(stay_id, notes)| {
            let labels = raw_labels
                .get(&stay_id)
                .map(|codes| codes.iter().filter_map(|c| label_space.index_of(c)).collect())
                .unwrap_or_default();
            HospitalStay::new(stay_id, notes, labels)
        })
        .collect();

    Ok((Corpus { stays, labels: label_space, split }, report))
}

pub fn read_corpus_dir(dir: &Path, max_labels: usize) -> Result<(Corpus, IngestReport)> {
    ingest_notes(&dir.join(NOTES_FILE), &dir.join(LABELS_FILE), &dir.join(SPLITS_FILE), max_labels)
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, &r).map_err(|e| HtdsError::Data(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| HtdsError::io(path, e))?;
    f.write_all(&buf).map_err(|e| HtdsError::io(path, e))
}

/// Writes `notes.jsonl`, `labels.jsonl` and `splits.jsonl` into `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HtdsError::io(dir, e))?;
    write_jsonl(
        &dir.join(NOTES_FILE),
        corpus.stays.iter().flat_map(|s| {
            s.notes.iter().map(|n| NoteRecord {
                note_id: n.note_id.clone(),
                stay_id: n.stay_id.clone(),
                category: n.category.clone(),
                charttime: format_charttime(&n.charttime),
                text: n.text.clone(),
            })
        }),
    )?;
    write_jsonl(
        &dir.join(LABELS_FILE),
        corpus.stays.iter().map(|s| LabelRecord {
            stay_id: s.stay_id.clone(),
            labels: s.labels.iter().filter_map(|&l| corpus.labels.code(l)).map(str::to_string).collect(),
        }),
    )?;
    write_jsonl(
        &dir.join(SPLITS_FILE),
        corpus.stays.iter().filter_map(|s| {
            corpus.split.split_of(&s.stay_id).map(|split| SplitRecord { stay_id: s.stay_id.clone(), split })
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn note(id: &str, stay: &str, cat: &str, t: &str, text: &str) -> String {
        serde_json::json!({"note_id": id, "stay_id": stay, "category": cat, "charttime": t, "text": text}).to_string()
    }

    #[test]
    fn groups_sorts_and_cleans() {
        let dir = tempfile::tempdir().unwrap();
        let notes = [
            note("n2", "A", "Nursing/Other", "2101-01-01T09:00:00", "pt stable, resting."),
            note("n1", "A", "Radiology", "2101-01-01 08:00", "chest x-ray: clear"),
            note("n3", "A", "Nursing", "2101-01-01T10:00:00", "   "),
        ]
        .join("\n");
        let n = write(dir.path(), "n.jsonl", &notes);
        let l = write(dir.path(), "l.jsonl", r#"{"stay_id":"A","labels":["401.9","428.0"]}"#);
        let s = write(dir.path(), "s.jsonl", r#"{"stay_id":"A","split":"train"}"#);
        let (corpus, report) = ingest_notes(&n, &l, &s, 50).unwrap();
        assert_eq!(corpus.stays.len(), 1);
        let stay = &corpus.stays[0];
        assert_eq!(stay.notes.iter().map(|n| n.note_id.as_str()).collect::<Vec<_>>(), ["n1", "n2"]);
        assert_eq!(stay.notes[1].category, "Nursing");
        assert_eq!(stay.notes[1].text, "pt stable, resting.");
        assert_eq!(report.nursing_other_remapped, 1);
        assert_eq!(report.empty_notes_dropped, 1);
        assert_eq!(stay.labels.len(), 2);
    }

    #[test]
    fn empty_notes_file_has_no_label_space() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "n.jsonl", "");
        let l = write(dir.path(), "l.jsonl", "");
        let s = write(dir.path(), "s.jsonl", "");
        let err = ingest_notes(&n, &l, &s, 50).unwrap_err();
        assert!(err.to_string().contains("empty label space"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}\n{{not json", note("n1", "A", "Radiology", "2101-01-01T08:00:00", "x"));
        let n = write(dir.path(), "n.jsonl", &body);
        let l = write(dir.path(), "l.jsonl", "");
        let s = write(dir.path(), "s.jsonl", "");
        match ingest_notes(&n, &l, &s, 50).unwrap_err() {
            HtdsError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_note_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = [note("n1", "A", "Radiology", "2101-01-01T08:00:00", "x"), note("n1", "B", "Radiology", "2101-01-01T08:00:00", "y")].join("\n");
        let n = write(dir.path(), "n.jsonl", &body);
        let l = write(dir.path(), "l.jsonl", "");
        let s = write(dir.path(), "s.jsonl", "");
        let err = ingest_notes(&n, &l, &s, 50).unwrap_err();
        assert!(err.to_string().contains("duplicate note_id"), "{err}");
    }

    #[test]
    fn unknown_split_stay_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "n.jsonl", &note("n1", "A", "Radiology", "2101-01-01T08:00:00", "x"));
        let l = write(dir.path(), "l.jsonl", r#"{"stay_id":"A","labels":["1"]}"#);
        let s = write(dir.path(), "s.jsonl", "{\"stay_id\":\"A\",\"split\":\"train\"}\n{\"stay_id\":\"Z\",\"split\":\"dev\"}");
        let err = ingest_notes(&n, &l, &s, 50).unwrap_err();
        assert!(err.to_string().contains("unknown stay_id"), "{err}");
    }

    #[test]
    fn labels_outside_space_leave_empty_set() {
        let dir = tempfile::tempdir().unwrap();
        let body = [note("n1", "A", "Radiology", "2101-01-01T08:00:00", "x"), note("n2", "B", "Radiology", "2101-01-01T08:00:00", "y"), note("n3", "C", "Radiology", "2101-01-01T08:00:00", "z")].join("\n");
        let n = write(dir.path(), "n.jsonl", &body);
        let l = write(
            dir.path(),
            "l.jsonl",
            "{\"stay_id\":\"A\",\"labels\":[\"common\"]}\n{\"stay_id\":\"B\",\"labels\":[\"common\"]}\n{\"stay_id\":\"C\",\"labels\":[\"rare\"]}",
        );
        let s = write(dir.path(), "s.jsonl", "{\"stay_id\":\"A\",\"split\":\"train\"}\n{\"stay_id\":\"B\",\"split\":\"dev\"}\n{\"stay_id\":\"C\",\"split\":\"test\"}");
        let (corpus, _) = ingest_notes(&n, &l, &s, 1).unwrap();
        assert_eq!(corpus.labels.codes(), &["common".to_string()]);
        let c = corpus.stays.iter().find(|s| s.stay_id == "C").unwrap();
        assert!(c.labels.is_empty());
    }
}

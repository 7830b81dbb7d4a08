//! Bibliographic record extraction from MARC, corpus deduplication, and
//! seeded stratified train/test splits.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marc::{parse_marc_stream, read_marc_json_lines, RawMarcRecord};
use crate::text::{clean_text, dedup_preserving};

/// A cleaned bibliographic record: the unit every later stage consumes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibRecord {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    /// Call number exactly as recorded, case preserved. Empty when absent.
    #[serde(default)]
    pub lcc: String,
    /// First letter of the call number, uppercased; the stratification class.
    #[serde(default, with = "one_letter")]
    pub lcc_class: Option<char>,
    /// Cleaned, deduplicated gold subject headings.
    #[serde(default)]
    pub gold_headings: Vec<String>,
}

impl BibRecord {
    /// The text every embedding- and prompt-facing stage sees: title and
    /// abstract joined by a single space.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

mod one_letter {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<char>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(c) => s.serialize_str(&c.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<char>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        Ok(raw.and_then(|s| s.chars().next()))
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("per-class quota must be at least 1")]
    ZeroQuota,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

/// Pulls the fields later stages need out of one parsed MARC record.
///
/// Title comes from 245 `$a`/`$b` joined with a space, abstract from the
/// first 520 `$a`, gold headings from every 650 `$a` (subdivision subfields
/// are deliberately ignored); all three pass through [`clean_text`]. Records
/// without a usable title or abstract yield `None`. `seq` numbers the record
/// within its stream and names records that lack an 001 control field.
pub fn extract_bib_record(raw: &RawMarcRecord, seq: usize) -> Option<BibRecord> {
    let f245 = raw.first_field("245")?;
    let title_src: Vec<&str> = f245
        .subfields
        .iter()
        .filter(|s| s.code == 'a' || s.code == 'b')
        .map(|s| s.value.as_str())
        .collect();
    let title = clean_text(&title_src.join(" "));
    if title.is_empty() {
        return None;
    }

    let f520 = raw.first_field("520")?;
    let abstract_src: Vec<&str> = f520.subfield_values('a').collect();
    let abstract_text = clean_text(&abstract_src.join(" "));
    if abstract_text.is_empty() {
        return None;
    }

    let id = match raw.control_value("001").map(str::trim) {
        Some(v) if !v.is_empty() => v.to_owned(),
        _ => format!("rec-{seq:06}"),
    };

    let lcc = raw
        .first_field("050")
        .and_then(|f| f.subfield_values('a').next())
        .map(|v| v.split_whitespace().collect::<Vec<_>>().join(" "))
        .unwrap_or_default();
    let lcc_class = lcc
        .chars()
        .find(char::is_ascii_alphabetic)
        .map(|c| c.to_ascii_uppercase());

    let gold_headings = dedup_preserving(
        raw.fields_with_tag("650")
            .flat_map(|f| f.subfield_values('a'))
            .map(clean_text)
            .filter(|h| !h.is_empty()),
    );

    Some(BibRecord {
        id,
        title,
        abstract_text,
        lcc,
        lcc_class,
        gold_headings,
    })
}

/// Drops records whose (title, abstract) pair was already seen, keeping the
/// first occurrence. Input order is otherwise preserved.
pub fn dedup_corpus(records: Vec<BibRecord>) -> Vec<BibRecord> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert((r.title.clone(), r.abstract_text.clone())))
        .collect()
}

/// Train/test membership by record id. Serialized as `split.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub per_class_quota: usize,
    pub seed: u64,
}

/// Samples up to `per_class_quota` records per `lcc_class` into the test set;
/// everything else (including records with no class) goes to train. The same
/// seed always produces the same split. Both id lists keep corpus order.
pub fn stratified_split(
    records: &[BibRecord],
    per_class_quota: usize,
    seed: u64,
) -> Result<DatasetSplit, IngestError> {
    if records.is_empty() {
        return Err(IngestError::EmptyCorpus);
    }
    if per_class_quota == 0 {
        return Err(IngestError::ZeroQuota);
    }

    let mut classes: BTreeMap<char, Vec<usize>> = BTreeMap::new();
    for (idx, rec) in records.iter().enumerate() {
        if let Some(class) = rec.lcc_class {
            classes.entry(class).or_default().push(idx);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx = HashSet::new();
    for (_, mut idxs) in classes {
        let take = per_class_quota.min(idxs.len());
        for i in 0..take {
            let j = rng.random_range(i..idxs.len());
            idxs.swap(i, j);
        }
        test_idx.extend(idxs[..take].iter().copied());
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (idx, rec) in records.iter().enumerate() {
        if test_idx.contains(&idx) {
            test.push(rec.id.clone());
        } else {
            train.push(rec.id.clone());
        }
    }
    Ok(DatasetSplit {
        train,
        test,
        per_class_quota,
        seed,
    })
}

/// Partitions a corpus into (train, test) record lists according to a split,
/// keeping corpus order. Ids the split does not mention are dropped.
pub fn apply_split<'a>(
    records: &'a [BibRecord],
    split: &DatasetSplit,
) -> (Vec<&'a BibRecord>, Vec<&'a BibRecord>) {
    let train_ids: HashSet<&str> = split.train.iter().map(String::as_str).collect();
    let test_ids: HashSet<&str> = split.test.iter().map(String::as_str).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rec in records {
        if test_ids.contains(rec.id.as_str()) {
            test.push(rec);
        } else if train_ids.contains(rec.id.as_str()) {
            train.push(rec);
        }
    }
    (train, test)
}

/// Everything `ingest` produces: the clean corpus plus bookkeeping about what
/// was dropped along the way.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub records: Vec<BibRecord>,
    pub parse_diagnostics: Vec<String>,
    pub skipped_incomplete: usize,
    pub duplicates_removed: usize,
}

/// Reads a `.mrc` (ISO 2709) or `.jsonl`/`.ndjson` (MARC-in-JSON) file and
/// runs extraction plus dedup. Unknown extensions are sniffed: a stream
/// starting with five ASCII digits is treated as binary MARC.
pub fn ingest_path(path: &Path) -> Result<IngestReport, IngestError> {
    let bytes = std::fs::read(path)?;
    let binary = match path.extension().and_then(|e| e.to_str()) {
        Some("mrc") | Some("marc") | Some("bin") => true,
        Some("jsonl") | Some("ndjson") | Some("json") => false,
        _ => bytes.len() >= 5 && bytes[..5].iter().all(u8::is_ascii_digit),
    };

    let mut report = IngestReport::default();
    let raw_records = if binary {
        let out = parse_marc_stream(&bytes);
        report.parse_diagnostics = out.diagnostics.iter().map(ToString::to_string).collect();
        out.records
    } else {
        let out = read_marc_json_lines(BufReader::new(&bytes[..]))
            .map_err(|e| match e {
                crate::marc::MarcJsonError::Io(io) => IngestError::Io(io),
            })?;
        report.parse_diagnostics = out.diagnostics;
        out.records
    };

    let mut extracted = Vec::with_capacity(raw_records.len());
    for (seq, raw) in raw_records.iter().enumerate() {
        match extract_bib_record(raw, seq) {
            Some(rec) => extracted.push(rec),
            None => report.skipped_incomplete += 1,
        }
    }
    let before = extracted.len();
    report.records = dedup_corpus(extracted);
    report.duplicates_removed = before - report.records.len();
    Ok(report)
}

/// Writes records as one JSON object per line.
pub fn write_bib_jsonl<W: Write>(mut w: W, records: &[BibRecord]) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads records written by [`write_bib_jsonl`].
pub fn read_bib_jsonl<R: BufRead>(r: R) -> Result<Vec<BibRecord>, IngestError> {
    let mut records = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| IngestError::Json {
            line: idx + 1,
            source,
        })?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marc::{ControlField, DataField, Subfield};

    fn data_field(tag: &str, subfields: &[(char, &str)]) -> DataField {
        DataField {
            tag: tag.to_owned(),
            indicators: [' ', ' '],
            subfields: subfields
                .iter()
                .map(|&(code, value)| Subfield {
                    code,
                    value: value.to_owned(),
                })
                .collect(),
        }
    }

    fn record(fields: Vec<DataField>) -> RawMarcRecord {
        RawMarcRecord {
            leader: RawMarcRecord::default_leader(),
            control_fields: vec![ControlField {
                tag: "001".to_owned(),
                value: "ocm123".to_owned(),
            }],
            fields,
        }
    }

    #[test]
    fn extracts_title_abstract_and_gold() {
        let raw = record(vec![
            data_field("050", &[('a', "AM101 .L36 2005")]),
            data_field(
                "245",
                &[('a', "Museums in China :"), ('b', "power, politics and identities /")],
            ),
            data_field("520", &[('a', "A study of  museum politics.")]),
            data_field("650", &[('a', "Museums."), ('x', "History.")]),
            data_field("650", &[('a', "museums")]),
            data_field("650", &[('a', "Politics and culture.")]),
        ]);
        let rec = extract_bib_record(&raw, 0).unwrap();
        assert_eq!(rec.id, "ocm123");
        assert_eq!(rec.title, "museums in china : power, politics and identities");
        assert_eq!(rec.abstract_text, "a study of museum politics");
        assert_eq!(rec.lcc, "AM101 .L36 2005");
        assert_eq!(rec.lcc_class, Some('A'));
        // 650 $x never contributes, and the duplicate heading collapses.
        assert_eq!(rec.gold_headings, ["museums", "politics and culture"]);
    }

    #[test]
    fn missing_title_or_abstract_drops_the_record() {
        let no_245 = record(vec![data_field("520", &[('a', "Some abstract.")])]);
        assert!(extract_bib_record(&no_245, 0).is_none());

        let no_520 = record(vec![data_field("245", &[('a', "A title")])]);
        assert!(extract_bib_record(&no_520, 0).is_none());

        let blank_abstract = record(vec![
            data_field("245", &[('a', "A title")]),
            data_field("520", &[('a', " . ")]),
        ]);
        assert!(extract_bib_record(&blank_abstract, 0).is_none());
    }

    #[test]
    fn synthesizes_id_when_001_is_absent() {
        let raw = RawMarcRecord {
            leader: RawMarcRecord::default_leader(),
            control_fields: vec![],
            fields: vec![
                data_field("245", &[('a', "A title")]),
                data_field("520", &[('a', "An abstract.")]),
            ],
        };
        assert_eq!(extract_bib_record(&raw, 7).unwrap().id, "rec-000007");
    }

    #[test]
    fn lcc_class_is_first_letter_uppercased() {
        let mut raw = record(vec![
            data_field("245", &[('a', "T")]),
            data_field("520", &[('a', "A.")]),
            data_field("050", &[('a', "qa76.9 .c66")]),
        ]);
        assert_eq!(extract_bib_record(&raw, 0).unwrap().lcc_class, Some('Q'));
        raw.fields.retain(|f| f.tag != "050");
        let rec = extract_bib_record(&raw, 0).unwrap();
        assert_eq!(rec.lcc, "");
        assert_eq!(rec.lcc_class, None);
    }

    fn bib(id: &str, title: &str, class: Option<char>) -> BibRecord {
        BibRecord {
            id: id.to_owned(),
            title: title.to_owned(),
            abstract_text: "abstract".to_owned(),
            lcc: String::new(),
            lcc_class: class,
            gold_headings: vec!["x".to_owned()],
        }
    }

    #[test]
    fn dedup_keeps_first_of_equal_pairs() {
        let records = vec![
            bib("a", "same", None),
            bib("b", "same", None),
            bib("c", "other", None),
        ];
        let kept = dedup_corpus(records);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].id, "a");
        assert_eq!(kept[1].id, "c");
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let mut records = Vec::new();
        for i in 0..6 {
            records.push(bib(&format!("q{i}"), &format!("tq{i}"), Some('Q')));
        }
        for i in 0..4 {
            records.push(bib(&format!("t{i}"), &format!("tt{i}"), Some('T')));
        }
        let split = stratified_split(&records, 2, 42).unwrap();
        assert_eq!(split.test.len(), 4);
        assert_eq!(split.train.len(), 6);
        assert_eq!(split.test.iter().filter(|id| id.starts_with('q')).count(), 2);
        assert_eq!(split.test.iter().filter(|id| id.starts_with('t')).count(), 2);

        let again = stratified_split(&records, 2, 42).unwrap();
        assert_eq!(split, again);

        let train: HashSet<_> = split.train.iter().collect();
        let test: HashSet<_> = split.test.iter().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), records.len());
    }

    #[test]
    fn small_class_is_exhausted_not_overdrawn() {
        let records = vec![bib("solo", "only one", Some('Z'))];
        let split = stratified_split(&records, 100, 1).unwrap();
        assert_eq!(split.test, ["solo"]);
        assert!(split.train.is_empty());
    }

    #[test]
    fn unclassed_records_stay_in_train() {
        let records = vec![bib("a", "x", None), bib("b", "y", Some('Q'))];
        let split = stratified_split(&records, 5, 0).unwrap();
        assert_eq!(split.test, ["b"]);
        assert_eq!(split.train, ["a"]);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        assert!(matches!(
            stratified_split(&[], 2, 0),
            Err(IngestError::EmptyCorpus)
        ));
        let records = vec![bib("a", "x", Some('Q'))];
        assert!(matches!(
            stratified_split(&records, 0, 0),
            Err(IngestError::ZeroQuota)
        ));
    }

    #[test]
    fn bib_jsonl_round_trips() {
        let records = vec![
            bib("a", "first", Some('Q')),
            bib("b", "second", None),
        ];
        let mut buf = Vec::new();
        write_bib_jsonl(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"abstract\":"));
        let back = read_bib_jsonl(&buf[..]).unwrap();
        assert_eq!(back, records);
    }
}

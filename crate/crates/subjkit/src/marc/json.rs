//! Line-delimited MARC-in-JSON reader.
//!
//! Each line is one object: `{"leader": "...", "fields": [{"001": "x"},
//! {"245": {"ind1": "1", "ind2": "0", "subfields": [{"a": "Title"}]}}]}`.
//! Malformed lines are skipped with a diagnostic, mirroring the binary
//! scanner's behavior.

use std::io::BufRead;

use serde_json::Value;
use thiserror::Error;

use super::{ControlField, DataField, RawMarcRecord, Subfield, LEADER_LEN};

/// Records read from a JSON-lines stream plus one note per skipped line.
#[derive(Debug, Default)]
pub struct MarcJsonOutcome {
    pub records: Vec<RawMarcRecord>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Error)]
pub enum MarcJsonError {
    #[error("reading MARC-in-JSON input: {0}")]
    Io(#[from] std::io::Error),
}

/// Reads line-delimited MARC-in-JSON. I/O failures abort; per-line structural
/// problems are reported in `diagnostics` and the line is skipped.
pub fn read_marc_json_lines<R: BufRead>(reader: R) -> Result<MarcJsonOutcome, MarcJsonError> {
    let mut out = MarcJsonOutcome::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(record) => out.records.push(record),
            Err(detail) => out.diagnostics.push(format!("line {}: {detail}", idx + 1)),
        }
    }
    Ok(out)
}

fn parse_line(line: &str) -> Result<RawMarcRecord, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;

    let leader = match obj.get("leader") {
        Some(Value::String(s)) if s.chars().count() == LEADER_LEN => s.clone(),
        Some(Value::String(s)) => {
            return Err(format!("leader has {} characters, expected {LEADER_LEN}", s.chars().count()))
        }
        Some(_) => return Err("leader is not a string".to_owned()),
        None => RawMarcRecord::default_leader(),
    };

    let mut record = RawMarcRecord {
        leader,
        control_fields: Vec::new(),
        fields: Vec::new(),
    };
    let fields = obj
        .get("fields")
        .and_then(Value::as_array)
        .ok_or("missing fields array")?;
    for field in fields {
        let entry = field
            .as_object()
            .filter(|m| m.len() == 1)
            .ok_or("each field must be a single-key object")?;
        let (tag, body) = entry.iter().next().expect("checked len above");
        if tag.len() != 3 || !tag.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("tag {tag:?} is not 3 ASCII digits"));
        }
        match body {
            Value::String(v) if tag.as_str() < "010" => record.control_fields.push(ControlField {
                tag: tag.clone(),
                value: v.clone(),
            }),
            Value::String(_) => {
                return Err(format!("tag {tag} is a data field but carries a bare string"))
            }
            Value::Object(m) if tag.as_str() >= "010" => {
                record.fields.push(parse_data_field(tag, m)?)
            }
            Value::Object(_) => {
                return Err(format!("tag {tag} is a control field but carries an object"))
            }
            _ => return Err(format!("tag {tag}: unsupported field body")),
        }
    }
    Ok(record)
}

fn parse_data_field(
    tag: &str,
    body: &serde_json::Map<String, Value>,
) -> Result<DataField, String> {
    let indicator = |key: &str| -> Result<char, String> {
        match body.get(key) {
            None => Ok(' '),
            Some(Value::String(s)) if s.chars().count() <= 1 => Ok(s.chars().next().unwrap_or(' ')),
            Some(_) => Err(format!("field {tag}: {key} must be a 1-character string")),
        }
    };
    let mut field = DataField {
        tag: tag.to_owned(),
        indicators: [indicator("ind1")?, indicator("ind2")?],
        subfields: Vec::new(),
    };
    let subfields = body
        .get("subfields")
        .and_then(Value::as_array)
        .ok_or_else(|| format!("field {tag}: missing subfields array"))?;
    for sub in subfields {
        let entry = sub
            .as_object()
            .filter(|m| m.len() == 1)
            .ok_or_else(|| format!("field {tag}: each subfield must be a single-key object"))?;
        let (code, value) = entry.iter().next().expect("checked len above");
        let mut chars = code.chars();
        let (c, rest) = (chars.next(), chars.next());
        if c.is_none() || rest.is_some() {
            return Err(format!("field {tag}: subfield code {code:?} is not one character"));
        }
        let value = value
            .as_str()
            .ok_or_else(|| format!("field {tag}: subfield {code} value is not a string"))?;
        field.subfields.push(Subfield {
            code: c.expect("checked above"),
            value: value.to_owned(),
        });
    }
    Ok(field)
}

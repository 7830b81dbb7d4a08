//! ISO 2709 stream scanner.
//!
//! The scanner walks the declared record lengths. A malformed record is
//! skipped with a diagnostic and scanning resumes at the next boundary, so
//! one bad record never poisons the rest of the stream.

use super::{
    ControlField, DataField, MarcDiagnostic, MarcParseOutcome, RawMarcRecord, Subfield,
    FIELD_TERMINATOR, LEADER_LEN, RECORD_TERMINATOR, SUBFIELD_DELIMITER,
};

/// Parses a concatenation of zero or more ISO 2709 records. Never fails:
/// structurally broken records become diagnostics instead.
pub fn parse_marc_stream(bytes: &[u8]) -> MarcParseOutcome {
    let mut out = MarcParseOutcome::default();
    let mut offset = 0;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        if rest.iter().all(|b| b.is_ascii_whitespace()) {
            break;
        }
        if rest.len() < LEADER_LEN {
            out.diagnostics.push(MarcDiagnostic::TruncatedRecord {
                offset,
                detail: format!("{} bytes remain, a leader needs {LEADER_LEN}", rest.len()),
            });
            break;
        }
        let Some(declared) = parse_digits(&rest[0..5]) else {
            out.diagnostics.push(MarcDiagnostic::TruncatedRecord {
                offset,
                detail: "record length field is not numeric".to_owned(),
            });
            // The length is unreadable, so resync past the next record terminator.
            match rest.iter().position(|&b| b == RECORD_TERMINATOR) {
                Some(pos) => {
                    offset += pos + 1;
                    continue;
                }
                None => break,
            }
        };
        if declared > rest.len() {
            out.diagnostics.push(MarcDiagnostic::TruncatedRecord {
                offset,
                detail: format!(
                    "declared length {declared} exceeds the {} bytes remaining",
                    rest.len()
                ),
            });
            break;
        }
        if declared < LEADER_LEN + 2 {
            out.diagnostics.push(MarcDiagnostic::BadDirectory {
                offset,
                detail: format!("declared length {declared} is too small for a record"),
            });
            match rest.iter().position(|&b| b == RECORD_TERMINATOR) {
                Some(pos) => {
                    offset += pos + 1;
                    continue;
                }
                None => break,
            }
        }
        match parse_record(&rest[..declared]) {
            Ok(record) => out.records.push(record),
            Err(err) => out.diagnostics.push(err.at(offset)),
        }
        offset += declared;
    }
    out
}

enum RecordError {
    Directory(String),
    Encoding(String),
}

impl RecordError {
    fn at(self, offset: usize) -> MarcDiagnostic {
        match self {
            Self::Directory(detail) => MarcDiagnostic::BadDirectory { offset, detail },
            Self::Encoding(detail) => MarcDiagnostic::BadEncoding { offset, detail },
        }
    }
}

fn parse_record(slice: &[u8]) -> Result<RawMarcRecord, RecordError> {
    if slice[slice.len() - 1] != RECORD_TERMINATOR {
        return Err(RecordError::Directory(
            "record does not end with the record terminator".to_owned(),
        ));
    }
    let leader: String = slice[..LEADER_LEN].iter().map(|&b| b as char).collect();
    let utf8 = slice[9] == b'a';

    let base = parse_digits(&slice[12..17])
        .ok_or_else(|| RecordError::Directory("base address is not numeric".to_owned()))?;
    if base <= LEADER_LEN || base >= slice.len() || slice[base - 1] != FIELD_TERMINATOR {
        return Err(RecordError::Directory(format!(
            "base address {base} does not sit just past a directory terminator"
        )));
    }
    let directory = &slice[LEADER_LEN..base - 1];
    if directory.len() % super::DIRECTORY_ENTRY_LEN != 0 {
        return Err(RecordError::Directory(format!(
            "directory length {} is not a multiple of {}",
            directory.len(),
            super::DIRECTORY_ENTRY_LEN
        )));
    }
    let data = &slice[base..slice.len() - 1];

    let mut record = RawMarcRecord {
        leader,
        control_fields: Vec::new(),
        fields: Vec::new(),
    };
    for entry in directory.chunks_exact(super::DIRECTORY_ENTRY_LEN) {
        let tag_bytes = &entry[0..3];
        if !tag_bytes.iter().all(u8::is_ascii_digit) {
            return Err(RecordError::Directory("directory tag is not numeric".to_owned()));
        }
        let tag: String = tag_bytes.iter().map(|&b| b as char).collect();
        let field_len = parse_digits(&entry[3..7]).ok_or_else(|| {
            RecordError::Directory(format!("field {tag}: directory length is not numeric"))
        })?;
        let field_start = parse_digits(&entry[7..12]).ok_or_else(|| {
            RecordError::Directory(format!("field {tag}: directory start is not numeric"))
        })?;
        let end = field_start + field_len;
        if field_len == 0 || end > data.len() {
            return Err(RecordError::Directory(format!(
                "field {tag}: directory entry points outside the field data"
            )));
        }
        let field_bytes = &data[field_start..end];
        if field_bytes[field_len - 1] != FIELD_TERMINATOR {
            return Err(RecordError::Directory(format!(
                "field {tag} does not end with a field terminator"
            )));
        }
        let body = &field_bytes[..field_len - 1];
        if tag.as_str() < "010" {
            record.control_fields.push(ControlField {
                value: decode(body, utf8)
                    .ok_or_else(|| RecordError::Encoding(format!("field {tag}: invalid UTF-8")))?,
                tag,
            });
        } else {
            record.fields.push(parse_data_field(tag, body, utf8)?);
        }
    }
    Ok(record)
}

fn parse_data_field(tag: String, body: &[u8], utf8: bool) -> Result<DataField, RecordError> {
    if body.len() < 3 || body[2] != SUBFIELD_DELIMITER {
        return Err(RecordError::Directory(format!(
            "field {tag}: expected two indicators followed by a subfield delimiter"
        )));
    }
    let indicators = [body[0] as char, body[1] as char];
    let mut subfields = Vec::new();
    for piece in body[3..].split(|&b| b == SUBFIELD_DELIMITER) {
        let (&code, value) = piece.split_first().ok_or_else(|| {
            RecordError::Directory(format!("field {tag}: empty subfield"))
        })?;
        subfields.push(Subfield {
            code: code as char,
            value: decode(value, utf8).ok_or_else(|| {
                RecordError::Encoding(format!("field {tag}: invalid UTF-8 in subfield"))
            })?,
        });
    }
    Ok(DataField {
        tag,
        indicators,
        subfields,
    })
}

fn decode(bytes: &[u8], utf8: bool) -> Option<String> {
    if utf8 {
        std::str::from_utf8(bytes).ok().map(str::to_owned)
    } else {
        Some(bytes.iter().map(|&b| b as char).collect())
    }
}

fn parse_digits(bytes: &[u8]) -> Option<usize> {
    if bytes.is_empty() || !bytes.iter().all(u8::is_ascii_digit) {
        return None;
    }
    let mut n = 0usize;
    for &b in bytes {
        n = n * 10 + usize::from(b - b'0');
    }
    Some(n)
}

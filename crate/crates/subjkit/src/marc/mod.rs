//! MARC21 record model, ISO 2709 parsing and serialization, and a
//! line-delimited MARC-in-JSON reader.
//!
//! Records are kept close to the wire format: raw tags, indicators, and
//! subfields, with no interpretation beyond the control/data field split.

mod json;
mod parse;

pub use json::{read_marc_json_lines, MarcJsonError, MarcJsonOutcome};
pub use parse::parse_marc_stream;

use thiserror::Error;

pub const LEADER_LEN: usize = 24;
pub const DIRECTORY_ENTRY_LEN: usize = 12;
pub const FIELD_TERMINATOR: u8 = 0x1e;
pub const RECORD_TERMINATOR: u8 = 0x1d;
pub const SUBFIELD_DELIMITER: u8 = 0x1f;

/// Largest record ISO 2709 can express: the leader length field is 5 digits.
pub const MAX_RECORD_LEN: usize = 99_999;

/// A variable control field (tag below "010"): bare value, no indicators or
/// subfields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlField {
    pub tag: String,
    pub value: String,
}

/// One subfield of a data field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subfield {
    pub code: char,
    pub value: String,
}

/// A variable data field: two indicator characters and ordered subfields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataField {
    pub tag: String,
    pub indicators: [char; 2],
    pub subfields: Vec<Subfield>,
}

impl DataField {
    /// Values of every subfield whose code is `code`, in field order.
    pub fn subfield_values(&self, code: char) -> impl Iterator<Item = &str> {
        self.subfields
            .iter()
            .filter(move |s| s.code == code)
            .map(|s| s.value.as_str())
    }
}

/// A parsed MARC21 record. Field order within each list is directory order;
/// control fields always precede data fields when re-serialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMarcRecord {
    /// Exactly 24 characters, all in the Latin-1 range. Length and base
    /// address digits are recomputed on serialization.
    pub leader: String,
    pub control_fields: Vec<ControlField>,
    pub fields: Vec<DataField>,
}

impl RawMarcRecord {
    /// A leader usable for records assembled in memory: UTF-8 encoding flag
    /// set, length and base address left for the serializer to fill in.
    pub fn default_leader() -> String {
        "00000nam a2200000 a 4500".to_owned()
    }

    /// Value of the first control field with `tag`, if any.
    pub fn control_value(&self, tag: &str) -> Option<&str> {
        self.control_fields
            .iter()
            .find(|f| f.tag == tag)
            .map(|f| f.value.as_str())
    }

    /// First data field with `tag`, if any.
    pub fn first_field(&self, tag: &str) -> Option<&DataField> {
        self.fields.iter().find(|f| f.tag == tag)
    }

    /// All data fields with `tag`, in record order.
    pub fn fields_with_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a DataField> {
        self.fields.iter().filter(move |f| f.tag == tag)
    }

    /// True when the leader declares UTF-8 (position 9 is `a`); otherwise
    /// field data is treated as Latin-1.
    pub fn is_utf8(&self) -> bool {
        self.leader.chars().nth(9) == Some('a')
    }

    /// Serializes the record to ISO 2709 bytes. Control fields are written
    /// first, then data fields, each in stored order; the leader's record
    /// length and base address digits are recomputed.
    pub fn to_iso2709(&self) -> Result<Vec<u8>, MarcSerializeError> {
        let mut leader: Vec<u8> = encode_latin1(&self.leader)
            .ok_or(MarcSerializeError::LeaderNotLatin1)?;
        if leader.len() != LEADER_LEN {
            return Err(MarcSerializeError::LeaderLength(leader.len()));
        }
        let utf8 = self.is_utf8();

        let mut directory = Vec::new();
        let mut data = Vec::new();
        let mut write_field = |tag: &str, body: Vec<u8>| -> Result<(), MarcSerializeError> {
            let start = data.len();
            let len = body.len() + 1;
            if len > 9_999 || start > 99_999 {
                return Err(MarcSerializeError::TooLarge);
            }
            directory.extend_from_slice(tag.as_bytes());
            directory.extend_from_slice(format!("{len:04}{start:05}").as_bytes());
            data.extend_from_slice(&body);
            data.push(FIELD_TERMINATOR);
            Ok(())
        };

        for f in &self.control_fields {
            check_tag(&f.tag, true)?;
            write_field(&f.tag, encode_value(&f.value, utf8)?)?;
        }
        for f in &self.fields {
            check_tag(&f.tag, false)?;
            let mut body = Vec::new();
            for ind in f.indicators {
                let b = u32::from(ind);
                if b > 0xff {
                    return Err(MarcSerializeError::IndicatorNotLatin1(ind));
                }
                body.push(b as u8);
            }
            for sub in &f.subfields {
                if !sub.code.is_ascii_graphic() {
                    return Err(MarcSerializeError::InvalidSubfieldCode(sub.code));
                }
                body.push(SUBFIELD_DELIMITER);
                body.push(sub.code as u8);
                body.extend_from_slice(&encode_value(&sub.value, utf8)?);
            }
            write_field(&f.tag, body)?;
        }

        let base = LEADER_LEN + directory.len() + 1;
        let total = base + data.len() + 1;
        if total > MAX_RECORD_LEN {
            return Err(MarcSerializeError::TooLarge);
        }
        leader[0..5].copy_from_slice(format!("{total:05}").as_bytes());
        leader[12..17].copy_from_slice(format!("{base:05}").as_bytes());

        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(&leader);
        out.extend_from_slice(&directory);
        out.push(FIELD_TERMINATOR);
        out.extend_from_slice(&data);
        out.push(RECORD_TERMINATOR);
        Ok(out)
    }
}

fn check_tag(tag: &str, control: bool) -> Result<(), MarcSerializeError> {
    let ok = tag.len() == 3 && tag.bytes().all(|b| b.is_ascii_digit());
    if !ok || (tag < "010") != control {
        return Err(MarcSerializeError::InvalidTag(tag.to_owned()));
    }
    Ok(())
}

fn encode_latin1(s: &str) -> Option<Vec<u8>> {
    s.chars()
        .map(|c| u8::try_from(u32::from(c)).ok())
        .collect()
}

fn encode_value(value: &str, utf8: bool) -> Result<Vec<u8>, MarcSerializeError> {
    if value
        .bytes()
        .any(|b| b == FIELD_TERMINATOR || b == RECORD_TERMINATOR || b == SUBFIELD_DELIMITER)
    {
        return Err(MarcSerializeError::DelimiterInValue);
    }
    if utf8 {
        Ok(value.as_bytes().to_vec())
    } else {
        encode_latin1(value).ok_or(MarcSerializeError::ValueNotLatin1)
    }
}

#[derive(Debug, Error)]
pub enum MarcSerializeError {
    #[error("leader must be 24 characters, got {0}")]
    LeaderLength(usize),
    #[error("leader contains characters outside Latin-1")]
    LeaderNotLatin1,
    #[error("invalid tag {0:?}: tags are 3 ASCII digits and tags below 010 are control fields")]
    InvalidTag(String),
    #[error("indicator {0:?} is outside Latin-1")]
    IndicatorNotLatin1(char),
    #[error("subfield code {0:?} is not ASCII graphic")]
    InvalidSubfieldCode(char),
    #[error("field value contains a reserved delimiter byte")]
    DelimiterInValue,
    #[error("value contains characters outside Latin-1 but the leader does not declare UTF-8")]
    ValueNotLatin1,
    #[error("record exceeds ISO 2709 size limits")]
    TooLarge,
}

/// A skipped record, reported instead of aborting the stream. `offset` is the
/// byte position where the bad record started.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MarcDiagnostic {
    /// The declared record length runs past the end of the input, or the
    /// length field itself is unreadable.
    TruncatedRecord { offset: usize, detail: String },
    /// Directory entries are malformed or point outside the record.
    BadDirectory { offset: usize, detail: String },
    /// Field data cannot be decoded under the leader-declared encoding.
    BadEncoding { offset: usize, detail: String },
}

impl MarcDiagnostic {
    pub fn offset(&self) -> usize {
        match self {
            Self::TruncatedRecord { offset, .. }
            | Self::BadDirectory { offset, .. }
            | Self::BadEncoding { offset, .. } => *offset,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::TruncatedRecord { .. } => "truncated-record",
            Self::BadDirectory { .. } => "bad-directory",
            Self::BadEncoding { .. } => "bad-encoding",
        }
    }
}

impl std::fmt::Display for MarcDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let detail = match self {
            Self::TruncatedRecord { detail, .. }
            | Self::BadDirectory { detail, .. }
            | Self::BadEncoding { detail, .. } => detail,
        };
        write!(f, "{} at byte {}: {}", self.kind(), self.offset(), detail)
    }
}

/// Result of scanning a byte stream: every well-formed record, plus one
/// diagnostic per skipped malformed record.
#[derive(Debug, Default)]
pub struct MarcParseOutcome {
    pub records: Vec<RawMarcRecord>,
    pub diagnostics: Vec<MarcDiagnostic>,
}

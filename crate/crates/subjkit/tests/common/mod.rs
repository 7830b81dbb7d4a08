//! Hand-rolled ISO 2709 assembler used as an independent oracle.
//!
//! Nothing here calls the library serializer: records are laid out byte by
//! byte from the format definition, so a round trip through the library is
//! checked against bytes it did not produce.

#![allow(dead_code)]

use subjkit::marc::{ControlField, DataField, RawMarcRecord, Subfield};

pub const FT: u8 = 0x1e;
pub const RT: u8 = 0x1d;
pub const SD: u8 = 0x1f;

/// One variable field of a fixture record, in the order it must appear.
#[derive(Clone)]
pub enum Field {
    Control(&'static str, &'static str),
    Data {
        tag: &'static str,
        ind: [char; 2],
        subs: Vec<(char, String)>,
    },
}

pub fn data(tag: &'static str, ind: [char; 2], subs: &[(char, &str)]) -> Field {
    Field::Data {
        tag,
        ind,
        subs: subs.iter().map(|&(c, v)| (c, v.to_owned())).collect(),
    }
}

/// A fixture record: a 24-char leader template (length and base digits are
/// recomputed here) plus fields. Control fields must precede data fields so
/// assembled bytes match the library's canonical field order.
pub struct FixtureRecord {
    pub leader: &'static str,
    pub fields: Vec<Field>,
}

impl FixtureRecord {
    pub fn utf8(fields: Vec<Field>) -> Self {
        Self {
            leader: "00000nam a2200000 a 4500",
            fields,
        }
    }

    pub fn latin1(fields: Vec<Field>) -> Self {
        Self {
            leader: "00000nam  2200000 a 4500",
            fields,
        }
    }

    fn is_utf8(&self) -> bool {
        self.leader.as_bytes()[9] == b'a'
    }

    fn encode(&self, value: &str) -> Vec<u8> {
        if self.is_utf8() {
            value.as_bytes().to_vec()
        } else {
            value
                .chars()
                .map(|c| u8::try_from(u32::from(c)).expect("latin-1 fixture value"))
                .collect()
        }
    }

    /// Assembles the record to ISO 2709 bytes.
    pub fn assemble(&self) -> Vec<u8> {
        let mut directory = Vec::new();
        let mut body = Vec::new();
        for field in &self.fields {
            let start = body.len();
            match field {
                Field::Control(tag, value) => {
                    assert!(tag.len() == 3 && *tag < "010", "control tag {tag}");
                    body.extend_from_slice(&self.encode(value));
                    body.push(FT);
                    push_entry(&mut directory, tag, body.len() - start, start);
                }
                Field::Data { tag, ind, subs } => {
                    assert!(tag.len() == 3 && *tag >= "010", "data tag {tag}");
                    for &i in ind {
                        body.push(u8::try_from(u32::from(i)).expect("latin-1 indicator"));
                    }
                    for (code, value) in subs {
                        body.push(SD);
                        body.push(*code as u8);
                        body.extend_from_slice(&self.encode(value));
                    }
                    body.push(FT);
                    push_entry(&mut directory, tag, body.len() - start, start);
                }
            }
        }
        let base = 24 + directory.len() + 1;
        let total = base + body.len() + 1;

        let mut out = Vec::with_capacity(total);
        let leader = self.leader.as_bytes();
        assert_eq!(leader.len(), 24, "leader template length");
        out.extend_from_slice(format!("{total:05}").as_bytes());
        out.extend_from_slice(&leader[5..12]);
        out.extend_from_slice(format!("{base:05}").as_bytes());
        out.extend_from_slice(&leader[17..24]);
        out.extend_from_slice(&directory);
        out.push(FT);
        out.extend_from_slice(&body);
        out.push(RT);
        out
    }

    /// The record the parser is expected to produce for these bytes.
    pub fn expected(&self) -> RawMarcRecord {
        let bytes = self.assemble();
        let leader = bytes[..24].iter().map(|&b| b as char).collect();
        let mut control_fields = Vec::new();
        let mut fields = Vec::new();
        for field in &self.fields {
            match field {
                Field::Control(tag, value) => control_fields.push(ControlField {
                    tag: (*tag).to_owned(),
                    value: (*value).to_owned(),
                }),
                Field::Data { tag, ind, subs } => fields.push(DataField {
                    tag: (*tag).to_owned(),
                    indicators: *ind,
                    subfields: subs
                        .iter()
                        .map(|(code, value)| Subfield {
                            code: *code,
                            value: value.clone(),
                        })
                        .collect(),
                }),
            }
        }
        RawMarcRecord {
            leader,
            control_fields,
            fields,
        }
    }
}

fn push_entry(directory: &mut Vec<u8>, tag: &str, len: usize, start: usize) {
    assert!(len <= 9999 && start <= 99999, "fixture field too large");
    directory.extend_from_slice(tag.as_bytes());
    directory.extend_from_slice(format!("{len:04}{start:05}").as_bytes());
}

/// How one segment of the fixture stream should come out of the parser.
pub enum Expect {
    Record(RawMarcRecord),
    Truncated,
    BadDirectory,
    BadEncoding,
}

/// A concatenated stream plus, per segment, its byte offset and expectation.
pub struct FixtureStream {
    pub bytes: Vec<u8>,
    pub segments: Vec<(usize, Expect)>,
}

impl FixtureStream {
    pub fn new() -> Self {
        Self {
            bytes: Vec::new(),
            segments: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: &FixtureRecord) {
        let offset = self.bytes.len();
        self.bytes.extend_from_slice(&rec.assemble());
        self.segments.push((offset, Expect::Record(rec.expected())));
    }

    pub fn push_raw(&mut self, bytes: Vec<u8>, expect: Expect) {
        let offset = self.bytes.len();
        self.bytes.extend_from_slice(&bytes);
        self.segments.push((offset, expect));
    }

    pub fn expected_records(&self) -> Vec<&RawMarcRecord> {
        self.segments
            .iter()
            .filter_map(|(_, e)| match e {
                Expect::Record(r) => Some(r),
                _ => None,
            })
            .collect()
    }
}

/// A small well-formed record: 001/008 control fields, call number, title,
/// abstract, and two subject fields.
pub fn typical_record(n: usize) -> FixtureRecord {
    let id: &'static str = Box::leak(format!("fix{n:04}").into_boxed_str());
    let title: &'static str = Box::leak(format!("Fixture title number {n}").into_boxed_str());
    FixtureRecord::utf8(vec![
        Field::Control("001", id),
        Field::Control("008", "210101s2021    xxu           000 0 eng d"),
        data("050", [' ', ' '], &[('a', "QA76.9"), ('b', ".D3")]),
        data("245", ['1', '0'], &[('a', title), ('b', "a subtitle")]),
        data("520", [' ', ' '], &[('a', "An abstract long enough to keep.")]),
        data("650", [' ', '0'], &[('a', "Databases"), ('x', "History")]),
        data("650", [' ', '0'], &[('a', "Computer science")]),
    ])
}

/// The 50-segment suite: 44 valid records of varied shape and 6 corrupt
/// segments covering every diagnostic kind the parser reports.
pub fn fixture_suite() -> FixtureStream {
    let mut stream = FixtureStream::new();

    // Segments 1-20: typical records.
    for n in 0..20 {
        stream.push(&typical_record(n));
    }

    // 21: minimal single-field record.
    stream.push(&FixtureRecord::utf8(vec![data(
        "245",
        ['1', '0'],
        &[('a', "Test title")],
    )]));

    // 22: control fields only.
    stream.push(&FixtureRecord::utf8(vec![
        Field::Control("001", "ctl-only"),
        Field::Control("005", "20210101000000.0"),
    ]));

    // 23: Latin-1 encoded accented text.
    stream.push(&FixtureRecord::latin1(vec![
        Field::Control("001", "latin1"),
        data("245", ['1', '0'], &[('a', "Caf\u{e9} soci\u{e9}t\u{e9}")]),
        data("520", [' ', ' '], &[('a', "R\u{e9}sum\u{e9} of caf\u{e9} culture.")]),
    ]));

    // 24: UTF-8 multi-byte text.
    stream.push(&FixtureRecord::utf8(vec![
        Field::Control("001", "utf8-wide"),
        data("245", ['0', '0'], &[('a', "図書館の歴史")]),
        data("650", [' ', '0'], &[('a', "Libraries—Japan")]),
    ]));

    // 25: empty subfield value and odd indicators.
    stream.push(&FixtureRecord::utf8(vec![data(
        "856",
        ['4', '2'],
        &[('u', "http://example.org/x"), ('z', "")],
    )]));

    // 26: repeated subject fields with subdivisions.
    stream.push(&FixtureRecord::utf8(vec![
        Field::Control("001", "manysubs"),
        data("245", ['1', '0'], &[('a', "Many subjects")]),
        data("520", [' ', ' '], &[('a', "Covers several topics at once.")]),
        data("650", [' ', '0'], &[('a', "Art"), ('x', "Study"), ('v', "Catalogs")]),
        data("650", [' ', '0'], &[('a', "Art"), ('y', "19th century")]),
        data("650", [' ', '0'], &[('a', "Museums")]),
    ]));

    // Corrupt 27: length digits are not numeric. The parser reports a
    // truncated record and resyncs past this record's own terminator.
    let mut garbled = typical_record(900).assemble();
    garbled[0] = b'X';
    stream.push_raw(garbled, Expect::Truncated);

    // 28: a valid record right after the resync point.
    stream.push(&typical_record(901));

    // Corrupt 29: declared length far too small for any record.
    let mut tiny = typical_record(902).assemble();
    tiny[..5].copy_from_slice(b"00010");
    stream.push_raw(tiny, Expect::BadDirectory);

    // Corrupt 30: directory region not a whole number of entries. Assembled
    // by hand: one 12-byte entry plus a stray byte before the terminator.
    {
        let field = b"  \x1faOdd directory\x1e";
        let mut dir = Vec::new();
        dir.extend_from_slice(b"24500160");
        dir.extend_from_slice(b"0000");
        dir.push(b'9'); // 13th byte
        let base = 24 + dir.len() + 1;
        let total = base + field.len() + 1;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(format!("{total:05}").as_bytes());
        bytes.extend_from_slice(b"nam a22");
        bytes.extend_from_slice(format!("{base:05}").as_bytes());
        bytes.extend_from_slice(b" a 4500");
        bytes.extend_from_slice(&dir);
        bytes.push(FT);
        bytes.extend_from_slice(field);
        bytes.push(RT);
        stream.push_raw(bytes, Expect::BadDirectory);
    }

    // Corrupt 31: directory entry pointing past the field data.
    {
        let rec = FixtureRecord::utf8(vec![data("245", ['1', '0'], &[('a', "Out of range")])]);
        let mut bytes = rec.assemble();
        // Field length digits sit at bytes 27..31 of the single entry.
        bytes[27..31].copy_from_slice(b"9000");
        stream.push_raw(bytes, Expect::BadDirectory);
    }

    // Corrupt 32: leader declares UTF-8 but a subfield holds invalid bytes.
    {
        let rec = FixtureRecord::utf8(vec![data("245", ['1', '0'], &[('a', "Bad bytes")])]);
        let mut bytes = rec.assemble();
        let pos = bytes.len() - 3; // inside the subfield value
        bytes[pos] = 0xff;
        stream.push_raw(bytes, Expect::BadEncoding);
    }

    // Segments 33-49: more typical records after every recovery.
    for n in 20..37 {
        stream.push(&typical_record(n));
    }

    // Corrupt 50, stream tail: declared length runs past end of input.
    {
        let mut bytes = typical_record(903).assemble();
        bytes[..5].copy_from_slice(b"09999");
        stream.push_raw(bytes, Expect::Truncated);
    }

    assert_eq!(stream.segments.len(), 50);
    stream
}

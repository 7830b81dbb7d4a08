//! Supervised fine-tuning export.
//!
//! Each record with gold headings becomes one JSON line holding the exact
//! conversation a zero-shot run would send, with the gold labels as the
//! assistant turn. Records without gold headings are skipped, never
//! emitted empty.

use std::io::Write;

use serde::Serialize;

use crate::ingest::BibRecord;

use super::template::PromptTemplates;
use super::{ChatMessage, LlmError};

#[derive(Serialize)]
struct FinetuneLine<'a> {
    messages: &'a [ChatMessage],
}

/// Writes one `{"messages": [...]}` line per usable record and returns how
/// many were written.
pub fn export_finetune_dataset<W: Write>(
    records: &[BibRecord],
    templates: &PromptTemplates,
    mut out: W,
) -> Result<usize, LlmError> {
    let mut written = 0;
    for record in records {
        if record.gold_headings.is_empty() {
            continue;
        }
        let messages = [
            ChatMessage::system(templates.system_open()),
            ChatMessage::user(templates.user_first(record)),
            ChatMessage::assistant(record.gold_headings.join(", ")),
        ];
        let line = serde_json::to_string(&FinetuneLine {
            messages: &messages,
        })
        .map_err(|e| LlmError::Backend(format!("serialize fine-tune line: {e}")))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        written += 1;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::super::template::TemplateVariant;
    use super::*;

    fn record(id: &str, gold: &[&str]) -> BibRecord {
        BibRecord {
            id: id.to_owned(),
            title: format!("title {id}"),
            abstract_text: format!("abstract {id}"),
            lcc: String::new(),
            lcc_class: None,
            gold_headings: gold.iter().map(|s| (*s).to_owned()).collect(),
        }
    }

    #[test]
    fn export_writes_three_turn_conversations() {
        let records = vec![
            record("a", &["dogs", "pets"]),
            record("b", &[]),
            record("c", &["cats"]),
        ];
        let templates = PromptTemplates::builtin(TemplateVariant::V2);
        let mut buf = Vec::new();
        let written = export_finetune_dataset(&records, &templates, &mut buf).unwrap();
        assert_eq!(written, 2, "the record without gold headings is skipped");

        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);

        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        let messages = first["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 3);
        assert_eq!(messages[0]["role"], "system");
        assert_eq!(messages[1]["role"], "user");
        assert_eq!(messages[2]["role"], "assistant");
        assert_eq!(messages[2]["content"], "dogs, pets");
        assert!(messages[1]["content"]
            .as_str()
            .unwrap()
            .contains("title a"));

        let second: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(second["messages"][2]["content"], "cats");
    }

    #[test]
    fn export_of_empty_corpus_writes_nothing() {
        let templates = PromptTemplates::builtin(TemplateVariant::V2);
        let mut buf = Vec::new();
        let written = export_finetune_dataset(&[], &templates, &mut buf).unwrap();
        assert_eq!(written, 0);
        assert!(buf.is_empty());
    }
}

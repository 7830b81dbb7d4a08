//! Prompt templates and message rendering.
//!
//! Templates live in plain-text files with `[section]` headers so wording
//! can be edited without recompiling; the three built-in variants are
//! embedded at compile time. A system message is always persona + task +
//! format on three lines.

use std::collections::HashMap;
use std::path::Path;

use crate::ingest::BibRecord;

use super::{ChatMessage, LlmError};

/// Built-in prompt wordings, from tersest to most explicit. V2 is the
/// default wording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemplateVariant {
    V1,
    #[default]
    V2,
    V3,
}

impl std::str::FromStr for TemplateVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Self::V1),
            "v2" => Ok(Self::V2),
            "v3" => Ok(Self::V3),
            other => Err(format!("unknown template variant {other:?}, expected v1, v2, or v3")),
        }
    }
}

impl std::fmt::Display for TemplateVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::V1 => "v1",
            Self::V2 => "v2",
            Self::V3 => "v3",
        })
    }
}

/// One complete prompt wording set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub persona: String,
    pub task_open: String,
    /// Uses `{n}`.
    pub task_exact: String,
    /// Uses `{n}`; later-round phrasing.
    pub task_additional: String,
    pub task_amap: String,
    pub format: String,
    /// Uses `{title}` and `{abstract}`.
    pub user_first: String,
    /// Uses `{title}`, `{abstract}`, and `{previous_labels}`.
    pub user_followup: String,
}

impl PromptTemplates {
    pub fn builtin(variant: TemplateVariant) -> Self {
        let src = match variant {
            TemplateVariant::V1 => include_str!("../../templates/v1.txt"),
            TemplateVariant::V2 => include_str!("../../templates/v2.txt"),
            TemplateVariant::V3 => include_str!("../../templates/v3.txt"),
        };
        Self::parse(src).expect("built-in templates are well-formed")
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses the `[section]` format. Unknown sections are errors, as is a
    /// missing one; silence would surface later as a half-empty prompt.
    pub fn parse(src: &str) -> Result<Self, LlmError> {
        let mut sections: HashMap<String, Vec<&str>> = HashMap::new();
        let mut current: Option<String> = None;
        for line in src.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('#') && current.is_none() {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                let name = name.to_owned();
                if sections.contains_key(&name) {
                    return Err(LlmError::Template(format!("duplicate section [{name}]")));
                }
                sections.insert(name.clone(), Vec::new());
                current = Some(name);
            } else if let Some(name) = &current {
                sections.get_mut(name).expect("section exists").push(line);
            } else if !trimmed.is_empty() {
                return Err(LlmError::Template(format!(
                    "content before the first section: {trimmed:?}"
                )));
            }
        }

        let mut take = |name: &str| -> Result<String, LlmError> {
            let lines = sections
                .remove(name)
                .ok_or_else(|| LlmError::Template(format!("missing section [{name}]")))?;
            let text = lines.join("\n").trim().to_owned();
            if text.is_empty() {
                return Err(LlmError::Template(format!("section [{name}] is empty")));
            }
            Ok(text)
        };

        let templates = Self {
            persona: take("persona")?,
            task_open: take("task.open")?,
            task_exact: take("task.exact")?,
            task_additional: take("task.additional")?,
            task_amap: take("task.amap")?,
            format: take("format")?,
            user_first: take("user.first")?,
            user_followup: take("user.followup")?,
        };
        if let Some(extra) = sections.keys().next() {
            return Err(LlmError::Template(format!("unknown section [{extra}]")));
        }
        Ok(templates)
    }

    fn system(&self, task: &str) -> String {
        format!("{}\n{}\n{}", self.persona, task, self.format)
    }

    pub(super) fn system_open(&self) -> String {
        self.system(&self.task_open)
    }

    pub(super) fn system_exact(&self, n: u32) -> String {
        self.system(&fill(&self.task_exact, &[("n", &n.to_string())]))
    }

    pub(super) fn system_additional(&self, n: u32) -> String {
        self.system(&fill(&self.task_additional, &[("n", &n.to_string())]))
    }

    pub(super) fn system_amap(&self) -> String {
        self.system(&self.task_amap)
    }

    pub(super) fn user_first(&self, record: &BibRecord) -> String {
        fill(
            &self.user_first,
            &[("title", &record.title), ("abstract", &record.abstract_text)],
        )
    }

    pub(super) fn user_followup(&self, record: &BibRecord, previous: &[String]) -> String {
        fill(
            &self.user_followup,
            &[
                ("title", &record.title),
                ("abstract", &record.abstract_text),
                ("previous_labels", &previous.join(", ")),
            ],
        )
    }
}

/// Single-pass placeholder substitution. Substituted values are emitted
/// verbatim, never rescanned, so record text containing braces or even a
/// placeholder name cannot inject anything. Unknown placeholders stay as
/// written.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        if let Some(end) = after.find('}') {
            if let Some((_, value)) = values.iter().find(|(k, _)| *k == &after[..end]) {
                out.push_str(value);
                rest = &after[end + 1..];
                continue;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}

/// System + one user message asking for open-ended labels.
pub fn render_zero_shot(templates: &PromptTemplates, record: &BibRecord) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(templates.system_open()),
        ChatMessage::user(templates.user_first(record)),
    ]
}

/// Zero-shot plus gold-labeled exemplar turns before the target record:
/// `1 + 2 * exemplars + 1` messages.
pub fn render_few_shot(
    templates: &PromptTemplates,
    record: &BibRecord,
    exemplars: &[&BibRecord],
) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(2 + 2 * exemplars.len());
    messages.push(ChatMessage::system(templates.system_open()));
    for ex in exemplars {
        messages.push(ChatMessage::user(templates.user_first(ex)));
        messages.push(ChatMessage::assistant(ex.gold_headings.join(", ")));
    }
    messages.push(ChatMessage::user(templates.user_first(record)));
    messages
}

/// System + user asking for exactly `n` labels.
pub fn render_constrained(
    templates: &PromptTemplates,
    record: &BibRecord,
    n: u32,
) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(templates.system_exact(n)),
        ChatMessage::user(templates.user_first(record)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> BibRecord {
        BibRecord {
            id: "r1".into(),
            title: "museums in china".into(),
            abstract_text: "a study of museum politics".into(),
            lcc: String::new(),
            lcc_class: None,
            gold_headings: vec!["museums".into(), "politics and culture".into()],
        }
    }

    #[test]
    fn all_builtin_variants_parse() {
        for variant in [TemplateVariant::V1, TemplateVariant::V2, TemplateVariant::V3] {
            let t = PromptTemplates::builtin(variant);
            assert!(t.task_exact.contains("{n}"));
            assert!(t.user_first.contains("{title}"));
            assert!(t.user_followup.contains("{previous_labels}"));
        }
    }

    #[test]
    fn default_zero_shot_wording_is_exact() {
        let t = PromptTemplates::builtin(TemplateVariant::V2);
        let messages = render_zero_shot(&t, &record());
        assert_eq!(messages.len(), 2);
        assert_eq!(
            messages[0].content,
            "You are a helpful assistant predicting Library of Congress Subject Headings (LCSH) for books.\n\
             Given the title and abstract, predict relevant LCSH labels.\n\
             Respond only with the predicted LCSH labels separated by commas."
        );
        assert_eq!(
            messages[1].content,
            "Title: museums in china\nAbstract: a study of museum politics"
        );
    }

    #[test]
    fn constrained_wording_carries_the_count() {
        let t = PromptTemplates::builtin(TemplateVariant::V2);
        let messages = render_constrained(&t, &record(), 4);
        assert!(messages[0]
            .content
            .contains("Predict exactly 4 Library of Congress Subject Headings (LCSH) labels."));
    }

    #[test]
    fn few_shot_interleaves_exemplar_turns() {
        let t = PromptTemplates::builtin(TemplateVariant::V2);
        let ex = record();
        let target = BibRecord {
            id: "r2".into(),
            title: "coral reefs".into(),
            abstract_text: "reef ecosystems".into(),
            lcc: String::new(),
            lcc_class: None,
            gold_headings: vec![],
        };
        let messages = render_few_shot(&t, &target, &[&ex]);
        assert_eq!(messages.len(), 4);
        assert_eq!(messages[1].content, t.user_first(&ex));
        assert_eq!(messages[2].content, "museums, politics and culture");
        assert_eq!(messages[3].content, t.user_first(&target));
        assert!(matches!(messages[2].role, super::super::Role::Assistant));
    }

    #[test]
    fn fill_is_single_pass_and_injection_proof() {
        assert_eq!(fill("a {x} b", &[("x", "X")]), "a X b");
        assert_eq!(fill("{x}{x}", &[("x", "1")]), "11");
        // A value containing another placeholder is not expanded again.
        assert_eq!(fill("{a} {b}", &[("a", "{b}"), ("b", "2")]), "{b} 2");
        // Unknown placeholders and stray braces survive untouched.
        assert_eq!(fill("keep {unknown} and { this", &[]), "keep {unknown} and { this");
    }

    #[test]
    fn braces_in_record_text_stay_literal() {
        let t = PromptTemplates::builtin(TemplateVariant::V2);
        let mut rec = record();
        rec.title = "sets {abstract} and braces".into();
        let messages = render_zero_shot(&t, &rec);
        assert!(messages[1]
            .content
            .starts_with("Title: sets {abstract} and braces"));
        assert!(messages[1].content.contains("Abstract: a study"));
    }

    #[test]
    fn parse_rejects_missing_and_unknown_sections() {
        assert!(PromptTemplates::parse("[persona]\nhi").is_err());
        let full = include_str!("../../templates/v2.txt");
        let with_extra = format!("{full}\n[mystery]\nx\n");
        assert!(PromptTemplates::parse(&with_extra).is_err());
    }
}

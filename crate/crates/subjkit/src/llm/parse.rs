//! Turning a raw model response into clean candidate labels.

use crate::text::{clean_text, dedup_preserving};

/// Splits a comma- or newline-separated response into cleaned, deduplicated
/// labels.
///
/// Commas inside balanced parentheses do not split, so "Opera (Music, 18th
/// century)" stays one label. Enumeration markers ("1.", "2)", "-", "*") and
/// surrounding quotes are stripped before normalization. Labels left with
/// unbalanced parentheses have the parentheses removed; since that can expose
/// a comma that now sits at the top level, parsing repeats until the label
/// set is stable. The result: parsing the comma-join of the output returns
/// the output.
pub fn parse_label_response(response: &str) -> Vec<String> {
    let mut labels = parse_once(response);
    loop {
        // Each pass only ever deletes parentheses, so this terminates.
        let again = parse_once(&labels.join(", "));
        if again == labels {
            return labels;
        }
        labels = again;
    }
}

fn parse_once(response: &str) -> Vec<String> {
    let mut labels = Vec::new();
    for piece in split_top_level(response) {
        let stripped = strip_quotes(strip_enum_marker(piece.trim()));
        let mut label = clean_text(stripped);
        if !balanced_parens(&label) {
            label = clean_text(&label.replace(['(', ')'], " "));
        }
        if !label.is_empty() {
            labels.push(label);
        }
    }
    dedup_preserving(labels)
}

/// Splits on commas and newlines that sit outside parentheses.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' | '\n' if depth == 0 => {
                pieces.push(&s[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    pieces.push(&s[start..]);
    pieces
}

fn strip_enum_marker(s: &str) -> &str {
    let rest = s.trim_start();
    for bullet in ["- ", "* ", "\u{2022} "] {
        if let Some(r) = rest.strip_prefix(bullet) {
            return r.trim_start();
        }
    }
    let digits = rest.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let after = &rest[digits..];
        if let Some(r) = after.strip_prefix('.').or_else(|| after.strip_prefix(')')) {
            // Only treat "1." as a marker when something follows; a bare
            // number is content, odd as that would be.
            if !r.is_empty() {
                return r.trim_start();
            }
        }
    }
    rest
}

fn strip_quotes(s: &str) -> &str {
    for quote in ['"', '\''] {
        if s.len() >= 2 && s.starts_with(quote) && s.ends_with(quote) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

fn balanced_parens(s: &str) -> bool {
    let mut depth = 0i64;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

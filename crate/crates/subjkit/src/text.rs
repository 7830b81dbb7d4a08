//! Text normalization shared by ingest, vocabulary lookup, and evaluation.

use unicode_normalization::UnicodeNormalization;

/// Characters stripped from the end of a string as ISBD punctuation.
const TRAILING_PUNCT: &[char] = &['/', ':', ';', '.', ','];

/// Normalizes free text into canonical matching form: Unicode NFC, lowercase,
/// inner whitespace collapsed to single spaces, outer whitespace trimmed, and
/// trailing ISBD punctuation (`/`, `:`, `;`, `.`, `,`) removed together with
/// any space that preceded it.
///
/// Idempotent: applying it twice gives the same string.
pub fn clean_text(s: &str) -> String {
    let lowered = s.nfc().collect::<String>().to_lowercase();
    let mut out = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let trimmed = out.trim_end_matches(TRAILING_PUNCT).trim_end();
        if trimmed.len() == out.len() {
            break;
        }
        out.truncate(trimmed.len());
    }
    out
}

/// Removes duplicates while keeping the first occurrence of each string in
/// its original position.
pub fn dedup_preserving<I>(items: I) -> Vec<String>
where
    I: IntoIterator<Item = String>,
{
    let mut seen = std::collections::HashSet::new();
    items
        .into_iter()
        .filter(|s| seen.insert(s.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_keeps_first_occurrence_order() {
        let items = ["b", "a", "b", "c", "a"].map(str::to_owned);
        assert_eq!(dedup_preserving(items), ["b", "a", "c"]);
    }

    #[test]
    fn collapses_case_and_whitespace() {
        assert_eq!(clean_text("  The  QUICK brown fox  "), "the quick brown fox");
    }

    #[test]
    fn strips_trailing_isbd_punctuation() {
        assert_eq!(clean_text("Museums in China /"), "museums in china");
        assert_eq!(clean_text("Climate change."), "climate change");
        assert_eq!(clean_text("History :"), "history");
        assert_eq!(clean_text("Plants ;"), "plants");
        assert_eq!(clean_text("Birds,"), "birds");
    }

    #[test]
    fn strips_stacked_trailing_punctuation() {
        assert_eq!(clean_text("Essays. /"), "essays");
        assert_eq!(clean_text("..."), "");
    }

    #[test]
    fn keeps_inner_punctuation() {
        assert_eq!(clean_text("U.S. foreign policy"), "u.s. foreign policy");
        assert_eq!(clean_text("oil, gas, and coal"), "oil, gas, and coal");
    }

    #[test]
    fn applies_nfc_before_lowercasing() {
        // "cafe" with a combining acute accent composes to the precomposed e.
        assert_eq!(clean_text("cafe\u{301}"), "caf\u{e9}");
        assert_eq!(clean_text("CAFE\u{301}"), "caf\u{e9}");
    }

    #[test]
    fn empty_and_blank_inputs() {
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("   \t\n"), "");
    }

    #[test]
    fn idempotent_on_samples() {
        for s in ["  Mixed  CASE /", "a : b ; c.", "déjà vu,", "x"] {
            let once = clean_text(s);
            assert_eq!(clean_text(&once), once);
        }
    }
}

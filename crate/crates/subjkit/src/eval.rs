//! Retrieval-style scoring of predicted headings against gold headings.
//!
//! Matching is exact string equality after normalization, the same
//! treatment every other stage applies to label text. Per-sample scores
//! are macro-averaged: each record counts equally regardless of how many
//! headings it carries.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{clean_text, dedup_preserving};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("record {0} has no gold headings to score against")]
    EmptyGold(String),
    #[error("no samples to aggregate")]
    NoSamples,
    #[error("runs cover different record sets ({only_before} records only in one, {only_after} only in the other)")]
    MismatchedRecordSets { only_before: usize, only_after: usize },
    #[error("csv: {0}")]
    Io(#[from] std::io::Error),
}

/// The canonical form used for equality between predicted and gold labels.
pub fn normalize_heading(label: &str) -> String {
    clean_text(label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub record_id: String,
    pub n_gold: usize,
    /// Distinct predictions after normalization.
    pub n_pred: usize,
    pub hits: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Scores one record. Both sides are normalized and deduplicated first;
/// a prediction can match at most one gold heading and vice versa.
pub fn eval_sample(
    record_id: &str,
    gold: &[String],
    predictions: &[String],
) -> Result<SampleEval, EvalError> {
    let gold: Vec<String> = dedup_preserving(
        gold.iter()
            .map(|g| normalize_heading(g))
            .filter(|g| !g.is_empty()),
    );
    if gold.is_empty() {
        return Err(EvalError::EmptyGold(record_id.to_owned()));
    }
    let preds: Vec<String> = dedup_preserving(
        predictions
            .iter()
            .map(|p| normalize_heading(p))
            .filter(|p| !p.is_empty()),
    );

    let gold_set: BTreeSet<&str> = gold.iter().map(String::as_str).collect();
    let hits = preds.iter().filter(|p| gold_set.contains(p.as_str())).count();

    let recall = hits as f64 / gold.len() as f64;
    let precision = if preds.is_empty() {
        0.0
    } else {
        hits as f64 / preds.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };

    Ok(SampleEval {
        record_id: record_id.to_owned(),
        n_gold: gold.len(),
        n_pred: preds.len(),
        hits,
        recall,
        precision,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub method_label: String,
    pub n_samples: usize,
    /// Macro-averaged over samples.
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Mean count of distinct predictions per sample.
    pub avg_terms: f64,
    pub per_sample: Vec<SampleEval>,
}

pub fn eval_corpus(method_label: &str, samples: Vec<SampleEval>) -> Result<CorpusReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoSamples);
    }
    let n = samples.len() as f64;
    let mean = |f: fn(&SampleEval) -> f64| samples.iter().map(f).sum::<f64>() / n;
    Ok(CorpusReport {
        method_label: method_label.to_owned(),
        n_samples: samples.len(),
        recall: mean(|s| s.recall),
        precision: mean(|s| s.precision),
        f1: mean(|s| s.f1),
        avg_terms: mean(|s| s.n_pred as f64),
        per_sample: samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

/// Side-by-side deltas between two runs over the same records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub before_label: String,
    pub after_label: String,
    pub n_samples: usize,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_runs(before: &CorpusReport, after: &CorpusReport) -> Result<RunComparison, EvalError> {
    let ids_before: BTreeSet<&str> = before.per_sample.iter().map(|s| s.record_id.as_str()).collect();
    let ids_after: BTreeSet<&str> = after.per_sample.iter().map(|s| s.record_id.as_str()).collect();
    if ids_before != ids_after {
        return Err(EvalError::MismatchedRecordSets {
            only_before: ids_before.difference(&ids_after).count(),
            only_after: ids_after.difference(&ids_before).count(),
        });
    }

    let row = |metric: &str, b: f64, a: f64| ComparisonRow {
        metric: metric.to_owned(),
        before: b,
        after: a,
        delta: a - b,
    };
    Ok(RunComparison {
        before_label: before.method_label.clone(),
        after_label: after.method_label.clone(),
        n_samples: before.n_samples,
        rows: vec![
            row("recall", before.recall, after.recall),
            row("precision", before.precision, after.precision),
            row("f1", before.f1, after.f1),
            row("avg_terms", before.avg_terms, after.avg_terms),
        ],
    })
}

impl RunComparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,before,after,delta\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:+.6}\n",
                r.metric, r.before, r.after, r.delta
            ));
        }
        out
    }
}

impl fmt::Display for RunComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} -> {} over {} records",
            self.before_label, self.after_label, self.n_samples
        )?;
        writeln!(f, "{:<12} {:>10} {:>10} {:>10}", "metric", "before", "after", "delta")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:>10.4} {:>10.4} {:>+10.4}",
                r.metric, r.before, r.after, r.delta
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| (*s).to_owned()).collect()
    }

    #[test]
    fn sample_scores_match_hand_computation() {
        // gold {a, b, c}, preds {a, b, x, y}: hits 2, R = 2/3, P = 1/2,
        // F1 = 2PR/(P+R) = 4/7.
        let s = eval_sample(
            "r1",
            &strings(&["a", "b", "c"]),
            &strings(&["a", "b", "x", "y"]),
        )
        .unwrap();
        assert_eq!(s.hits, 2);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn matching_is_exact_after_normalization() {
        let s = eval_sample(
            "r1",
            &strings(&["Dogs.", "Cats /"]),
            &strings(&["  dogs", "CATS", "dog"]),
        )
        .unwrap();
        assert_eq!(s.hits, 2, "\"dog\" must not match \"dogs\"");
        assert_eq!(s.n_gold, 2);
        assert_eq!(s.n_pred, 3);
    }

    #[test]
    fn duplicate_predictions_count_once() {
        let s = eval_sample(
            "r1",
            &strings(&["dogs", "cats"]),
            &strings(&["dogs", "Dogs.", "DOGS"]),
        )
        .unwrap();
        assert_eq!(s.n_pred, 1);
        assert_eq!(s.hits, 1);
        assert!((s.precision - 1.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_predictions_scores_zero_precision_and_f1() {
        let s = eval_sample("r1", &strings(&["dogs"]), &[]).unwrap();
        assert_eq!(s.n_pred, 0);
        assert_eq!(s.precision, 0.0);
        assert_eq!(s.recall, 0.0);
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn empty_gold_is_rejected() {
        assert!(matches!(
            eval_sample("r1", &[], &strings(&["dogs"])),
            Err(EvalError::EmptyGold(_))
        ));
        assert!(matches!(
            eval_sample("r1", &strings(&["..."]), &strings(&["dogs"])),
            Err(EvalError::EmptyGold(_))
        ));
    }

    #[test]
    fn corpus_report_macro_averages() {
        let a = eval_sample("r1", &strings(&["a", "b"]), &strings(&["a"])).unwrap();
        let b = eval_sample("r2", &strings(&["c"]), &strings(&["c", "d", "e"])).unwrap();
        let report = eval_corpus("test", vec![a, b]).unwrap();
        assert_eq!(report.n_samples, 2);
        // recalls 1/2 and 1, precisions 1 and 1/3.
        assert!((report.recall - 0.75).abs() < 1e-12);
        assert!((report.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.avg_terms - 2.0).abs() < 1e-12);
        assert!(matches!(eval_corpus("x", vec![]), Err(EvalError::NoSamples)));
    }

    #[test]
    fn comparison_requires_identical_record_sets() {
        let a = eval_sample("r1", &strings(&["a"]), &strings(&["a"])).unwrap();
        let b = eval_sample("r2", &strings(&["b"]), &strings(&["b"])).unwrap();
        let before = eval_corpus("before", vec![a.clone()]).unwrap();
        let after = eval_corpus("after", vec![b]).unwrap();
        assert!(matches!(
            compare_runs(&before, &after),
            Err(EvalError::MismatchedRecordSets { .. })
        ));
        let same = eval_corpus("after", vec![a]).unwrap();
        assert!(compare_runs(&before, &same).is_ok());
    }

    #[test]
    fn comparison_rows_carry_deltas() {
        let a = eval_sample("r1", &strings(&["a", "b"]), &strings(&["a"])).unwrap();
        let b = eval_sample("r1", &strings(&["a", "b"]), &strings(&["a", "b"])).unwrap();
        let before = eval_corpus("zero-shot", vec![a]).unwrap();
        let after = eval_corpus("cot(n/2n)", vec![b]).unwrap();
        let cmp = compare_runs(&before, &after).unwrap();

        let recall = cmp.rows.iter().find(|r| r.metric == "recall").unwrap();
        assert!((recall.before - 0.5).abs() < 1e-12);
        assert!((recall.after - 1.0).abs() < 1e-12);
        assert!((recall.delta - 0.5).abs() < 1e-12);

        let csv = cmp.to_csv();
        assert!(csv.starts_with("metric,before,after,delta\n"));
        assert_eq!(csv.lines().count(), 5);

        let table = cmp.to_string();
        assert!(table.contains("zero-shot -> cot(n/2n) over 1 records"));
        assert!(table.contains("avg_terms"));

        let json = serde_json::to_string(&cmp).unwrap();
        assert!(json.contains("\"metric\":\"f1\""));
    }
}

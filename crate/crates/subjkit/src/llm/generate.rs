//! Generation strategies over a chat backend.
//!
//! Four entry points share one trace shape: a single open-ended prompt
//! (`run_zero_shot`), the same with worked examples (`run_few_shot`), a
//! single count-constrained prompt (`run_constrained`), and a multi-round
//! schedule that asks for more labels per round while showing the labels
//! accumulated so far (`run_cot`). Every round is a fresh two-message
//! conversation; state travels only through the prompt text.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::BibRecord;
use crate::text::dedup_preserving;

use super::client::ChatClient;
use super::parse::parse_label_response;
use super::template::{render_constrained, render_few_shot, render_zero_shot, PromptTemplates};
use super::{ChatMessage, GenerationParams, LlmError};

/// A per-round label quota, possibly scaled by the predicted count `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountExpr {
    Fixed(u32),
    N,
    TwoN,
    ThreeN,
    /// "As many as possible": no numeric quota in the prompt.
    Amap,
}

impl CountExpr {
    /// Resolves to a concrete quota, or `None` for the open-ended case.
    pub fn resolve(self, n: u32) -> Option<u32> {
        match self {
            Self::Fixed(k) => Some(k),
            Self::N => Some(n),
            Self::TwoN => Some(2 * n),
            Self::ThreeN => Some(3 * n),
            Self::Amap => None,
        }
    }

    pub fn needs_n(self) -> bool {
        matches!(self, Self::N | Self::TwoN | Self::ThreeN)
    }
}

impl FromStr for CountExpr {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "n" | "N" => Ok(Self::N),
            "2n" | "2N" => Ok(Self::TwoN),
            "3n" | "3N" => Ok(Self::ThreeN),
            "amap" | "AMAP" => Ok(Self::Amap),
            other => match other.parse::<u32>() {
                Ok(0) => Err(LlmError::InvalidPlan("quota 0 is not allowed".to_owned())),
                Ok(k) => Ok(Self::Fixed(k)),
                Err(_) => Err(LlmError::InvalidPlan(format!(
                    "unknown count expression {other:?} (expected a number, n, 2n, 3n, or amap)"
                ))),
            },
        }
    }
}

impl fmt::Display for CountExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(k) => write!(f, "{k}"),
            Self::N => f.write_str("n"),
            Self::TwoN => f.write_str("2n"),
            Self::ThreeN => f.write_str("3n"),
            Self::Amap => f.write_str("amap"),
        }
    }
}

/// A slash-separated round schedule, e.g. `"n/2n/3n"` or `"5/amap"`.
/// At most 8 rounds; `amap` may only close the schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct RoundPlan {
    rounds: Vec<CountExpr>,
}

pub const MAX_ROUNDS: usize = 8;

impl RoundPlan {
    pub fn new(rounds: Vec<CountExpr>) -> Result<Self, LlmError> {
        if rounds.is_empty() {
            return Err(LlmError::InvalidPlan("a plan needs at least one round".to_owned()));
        }
        if rounds.len() > MAX_ROUNDS {
            return Err(LlmError::InvalidPlan(format!(
                "{} rounds exceed the limit of {MAX_ROUNDS}",
                rounds.len()
            )));
        }
        if rounds[..rounds.len() - 1].iter().any(|r| *r == CountExpr::Amap) {
            return Err(LlmError::InvalidPlan(
                "amap may only be the final round".to_owned(),
            ));
        }
        Ok(Self { rounds })
    }

    pub fn rounds(&self) -> &[CountExpr] {
        &self.rounds
    }

    /// True when any round scales with the predicted count.
    pub fn needs_n(&self) -> bool {
        self.rounds.iter().any(|r| r.needs_n())
    }
}

impl FromStr for RoundPlan {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rounds = s
            .split('/')
            .map(CountExpr::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rounds)
    }
}

impl fmt::Display for RoundPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, round) in self.rounds.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            write!(f, "{round}")?;
        }
        Ok(())
    }
}

impl From<RoundPlan> for String {
    fn from(plan: RoundPlan) -> Self {
        plan.to_string()
    }
}

impl TryFrom<String> for RoundPlan {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse().map_err(|e: LlmError| e.to_string())
    }
}

/// One completed round: the exact conversation sent and what came back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub index: usize,
    /// The numeric quota put in the prompt; `None` for open-ended rounds.
    pub requested: Option<u32>,
    pub prompt: Vec<ChatMessage>,
    pub raw_response: String,
    pub parsed_labels: Vec<String>,
}

/// Everything produced for one record, sufficient to replay or audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub record_id: String,
    pub method: String,
    /// Predicted label count driving the schedule, when one was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    pub rounds: Vec<RoundTrace>,
    /// Union of parsed labels across rounds, first occurrence wins.
    pub aggregated_raw: Vec<String>,
    /// Labels after vocabulary mapping, filled in by a later stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregated_mapped: Option<Vec<String>>,
}

fn single_round(
    client: &dyn ChatClient,
    prompt: Vec<ChatMessage>,
    requested: Option<u32>,
    index: usize,
    params: &GenerationParams,
) -> Result<RoundTrace, LlmError> {
    let raw_response = client.send(&prompt, params)?;
    let parsed_labels = parse_label_response(&raw_response);
    Ok(RoundTrace {
        index,
        requested,
        prompt,
        raw_response,
        parsed_labels,
    })
}

fn single_round_trace(
    client: &dyn ChatClient,
    prompt: Vec<ChatMessage>,
    requested: Option<u32>,
    record_id: &str,
    method: String,
    n: Option<u32>,
    params: &GenerationParams,
) -> Result<GenerationTrace, LlmError> {
    let round = single_round(client, prompt, requested, 0, params)?;
    let aggregated_raw = dedup_preserving(round.parsed_labels.clone());
    Ok(GenerationTrace {
        record_id: record_id.to_owned(),
        method,
        n,
        rounds: vec![round],
        aggregated_raw,
        aggregated_mapped: None,
    })
}

/// One open-ended prompt with no count guidance.
pub fn run_zero_shot(
    client: &dyn ChatClient,
    templates: &PromptTemplates,
    record: &BibRecord,
    params: &GenerationParams,
) -> Result<GenerationTrace, LlmError> {
    single_round_trace(
        client,
        render_zero_shot(templates, record),
        None,
        &record.id,
        "zero-shot".to_owned(),
        None,
        params,
    )
}

/// Open-ended prompt preceded by worked examples with their gold labels.
pub fn run_few_shot(
    client: &dyn ChatClient,
    templates: &PromptTemplates,
    record: &BibRecord,
    exemplars: &[&BibRecord],
    params: &GenerationParams,
) -> Result<GenerationTrace, LlmError> {
    single_round_trace(
        client,
        render_few_shot(templates, record, exemplars),
        None,
        &record.id,
        "few-shot".to_owned(),
        None,
        params,
    )
}

/// One prompt asking for exactly `n` labels.
pub fn run_constrained(
    client: &dyn ChatClient,
    templates: &PromptTemplates,
    record: &BibRecord,
    n: u32,
    params: &GenerationParams,
) -> Result<GenerationTrace, LlmError> {
    if n == 0 {
        return Err(LlmError::InvalidPlan("quota 0 is not allowed".to_owned()));
    }
    single_round_trace(
        client,
        render_constrained(templates, record, n),
        Some(n),
        &record.id,
        format!("limit-{n}"),
        Some(n),
        params,
    )
}

/// Runs the full schedule. Round 0 asks for its quota outright; later
/// rounds ask for that many labels beyond the ones listed in the prompt.
/// A backend failure mid-schedule returns `RoundFailed` carrying the
/// rounds that did complete.
pub fn run_cot(
    client: &dyn ChatClient,
    templates: &PromptTemplates,
    record: &BibRecord,
    plan: &RoundPlan,
    n: u32,
    params: &GenerationParams,
) -> Result<GenerationTrace, LlmError> {
    if plan.needs_n() && n == 0 {
        return Err(LlmError::InvalidPlan(
            "the plan scales with n, but n is 0".to_owned(),
        ));
    }
    let mut trace = GenerationTrace {
        record_id: record.id.clone(),
        method: format!("cot({plan})"),
        n: plan.needs_n().then_some(n),
        rounds: Vec::with_capacity(plan.rounds.len()),
        aggregated_raw: Vec::new(),
        aggregated_mapped: None,
    };

    for (index, expr) in plan.rounds.iter().enumerate() {
        let requested = expr.resolve(n);
        let system = match (requested, index) {
            (None, _) => templates.system_amap(),
            (Some(count), 0) => templates.system_exact(count),
            (Some(count), _) => templates.system_additional(count),
        };
        let user = if index == 0 {
            templates.user_first(record)
        } else {
            templates.user_followup(record, &trace.aggregated_raw)
        };
        let prompt = vec![ChatMessage::system(system), ChatMessage::user(user)];
        match single_round(client, prompt, requested, index, params) {
            Ok(round) => {
                let mut merged = trace.aggregated_raw.clone();
                merged.extend(round.parsed_labels.iter().cloned());
                trace.aggregated_raw = dedup_preserving(merged);
                trace.rounds.push(round);
            }
            Err(source) => {
                return Err(LlmError::RoundFailed {
                    round: index,
                    source: Box::new(source),
                    partial: Box::new(trace),
                });
            }
        }
    }
    Ok(trace)
}

//! Prompt construction and the one-call / two-call exchange orchestration.
//!
//! Prompt building is a pure function of the query and options: no clock,
//! RNG, or environment involvement, so a given query always yields the same
//! messages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SynonymSet;
use crate::gateway::{Gateway, GatewayError, SamplingParams};

/// System message sent ahead of every exchange (unless disabled).
pub const SYSTEM_MESSAGE: &str = "You are a biology expert who always responds the cell type \
annotation result by carefully considering the markers provided by the user.";

/// Trigger appended for single-call prompting.
pub const TRIGGER_ZERO_SHOT: &str =
    "The most likely cell type (directly return one cell type name) is";

/// Trigger appended for the reasoning round of the two-stage exchange.
pub const TRIGGER_COT: &str = "Let's think step by step.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("query '{0}' has no markers")]
    NoMarkers(String),
    #[error("query '{0}' has empty context")]
    EmptyContext(String),
}

/// Prompting strategy dimension of a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    Cot,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::Cot => "cot",
        }
    }

    /// Provider calls one sample costs under this strategy.
    pub fn calls_per_sample(self) -> usize {
        match self {
            Strategy::ZeroShot => 1,
            Strategy::Cot => 2,
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "zero_shot" => Ok(Strategy::ZeroShot),
            "cot" => Ok(Strategy::Cot),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

/// The three trigger sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerKind {
    ZeroShot,
    Cot,
    CotSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// One benchmark sample: ordered marker genes, tissue context, references.
#[derive(Debug, Clone, PartialEq)]
pub struct CellQuery {
    pub sample_id: String,
    pub markers: Vec<String>,
    pub context: String,
    pub references: SynonymSet,
}

impl CellQuery {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.markers.is_empty() {
            return Err(PromptError::NoMarkers(self.sample_id.clone()));
        }
        if self.context.is_empty() {
            return Err(PromptError::EmptyContext(self.sample_id.clone()));
        }
        Ok(())
    }
}

/// Wording of the question sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionStyle {
    /// "... what is the specific cell type in {C} ..."
    #[default]
    Specific,
    /// "... what is the cell type in {C} ..."
    Plain,
}

/// Wording of the summary trigger's parenthetical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryTrigger {
    /// "(please return one cell type name)"
    #[default]
    PleaseReturn,
    /// "(directly return one cell type name)"
    DirectReturn,
}

impl SummaryTrigger {
    pub fn text(self) -> &'static str {
        match self {
            SummaryTrigger::PleaseReturn => {
                "In summary, the most likely cell type (please return one cell type name) is"
            }
            SummaryTrigger::DirectReturn => {
                "In summary, the most likely cell type (directly return one cell type name) is"
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    pub question_style: QuestionStyle,
    pub summary_trigger: SummaryTrigger,
    /// Some providers reject system roles; turning this off drops the
    /// leading system message from every exchange.
    pub include_system: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            question_style: QuestionStyle::default(),
            summary_trigger: SummaryTrigger::default(),
            include_system: true,
        }
    }
}

impl PromptOptions {
    /// Variant matching the worked chat transcripts: plain question wording
    /// and the "directly return" summary trigger.
    pub fn transcript_style() -> Self {
        PromptOptions {
            question_style: QuestionStyle::Plain,
            summary_trigger: SummaryTrigger::DirectReturn,
            include_system: true,
        }
    }
}

pub fn trigger_text(kind: TriggerKind, opts: &PromptOptions) -> &'static str {
    match kind {
        TriggerKind::ZeroShot => TRIGGER_ZERO_SHOT,
        TriggerKind::Cot => TRIGGER_COT,
        TriggerKind::CotSummary => opts.summary_trigger.text(),
    }
}

/// The question sentence, markers serialized `[a, b, c]` in list order.
pub fn build_question(query: &CellQuery, opts: &PromptOptions) -> String {
    let markers = query.markers.join(", ");
    let noun = match opts.question_style {
        QuestionStyle::Specific => "specific cell type",
        QuestionStyle::Plain => "cell type",
    };
    format!(
        "Given the following markers [{markers}], what is the {noun} in {} corresponding to these markers?",
        query.context
    )
}

fn with_system(opts: &PromptOptions, rest: Vec<ChatMessage>) -> Vec<ChatMessage> {
    if opts.include_system {
        let mut msgs = Vec::with_capacity(rest.len() + 1);
        msgs.push(ChatMessage::system(SYSTEM_MESSAGE));
        msgs.extend(rest);
        msgs
    } else {
        rest
    }
}

/// Messages for the single-call strategy: question plus the direct trigger.
pub fn build_zero_shot(query: &CellQuery, opts: &PromptOptions) -> Vec<ChatMessage> {
    let q = build_question(query, opts);
    with_system(opts, vec![ChatMessage::user(format!("{q} {TRIGGER_ZERO_SHOT}"))])
}

/// Messages for the reasoning round of the two-call strategy.
pub fn build_cot_round1(query: &CellQuery, opts: &PromptOptions) -> Vec<ChatMessage> {
    let q = build_question(query, opts);
    with_system(opts, vec![ChatMessage::user(format!("{q} {TRIGGER_COT}"))])
}

/// Messages for the summary round: the first round's messages, the model's
/// reasoning verbatim, then the summary trigger.
pub fn build_cot_round2(
    query: &CellQuery,
    opts: &PromptOptions,
    reasoning: &str,
) -> Vec<ChatMessage> {
    let mut msgs = build_cot_round1(query, opts);
    msgs.push(ChatMessage::assistant(reasoning));
    msgs.push(ChatMessage::user(trigger_text(TriggerKind::CotSummary, opts)));
    msgs
}

/// One provider call and its reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRound {
    pub round: u32,
    pub messages: Vec<ChatMessage>,
    pub response: String,
}

/// The full message exchange for one sample (1 or 2 rounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTranscript {
    pub sample_id: String,
    pub strategy: Strategy,
    pub rounds: Vec<ExchangeRound>,
    pub final_response: String,
}

/// A prompting failure, carrying whatever rounds completed so the caller can
/// persist the partial transcript.
#[derive(Debug, Error)]
#[error("sample '{sample_id}' round {round}: {source}")]
pub struct ExchangeError {
    pub sample_id: String,
    pub round: u32,
    pub partial: Vec<ExchangeRound>,
    #[source]
    pub source: GatewayError,
}

/// Single-call exchange.
pub fn run_zero_shot(
    query: &CellQuery,
    gateway: &Gateway,
    params: &SamplingParams,
    opts: &PromptOptions,
) -> Result<PromptTranscript, Box<ExchangeError>> {
    let messages = build_zero_shot(query, opts);
    let response = gateway.complete(&messages, params).map_err(|source| {
        Box::new(ExchangeError {
            sample_id: query.sample_id.clone(),
            round: 1,
            partial: vec![],
            source,
        })
    })?;
    Ok(PromptTranscript {
        sample_id: query.sample_id.clone(),
        strategy: Strategy::ZeroShot,
        final_response: response.clone(),
        rounds: vec![ExchangeRound {
            round: 1,
            messages,
            response,
        }],
    })
}

/// Two-call exchange: a reasoning round, then a summary round whose request
/// embeds the reasoning verbatim. The two rounds are strictly sequential.
pub fn run_cot(
    query: &CellQuery,
    gateway: &Gateway,
    params: &SamplingParams,
    opts: &PromptOptions,
) -> Result<PromptTranscript, Box<ExchangeError>> {
    let m1 = build_cot_round1(query, opts);
    let reasoning = gateway.complete(&m1, params).map_err(|source| {
        Box::new(ExchangeError {
            sample_id: query.sample_id.clone(),
            round: 1,
            partial: vec![],
            source,
        })
    })?;
    let round1 = ExchangeRound {
        round: 1,
        messages: m1,
        response: reasoning.clone(),
    };
    let m2 = build_cot_round2(query, opts, &reasoning);
    let response = gateway.complete(&m2, params).map_err(|source| {
        Box::new(ExchangeError {
            sample_id: query.sample_id.clone(),
            round: 2,
            partial: vec![round1.clone()],
            source,
        })
    })?;
    Ok(PromptTranscript {
        sample_id: query.sample_id.clone(),
        strategy: Strategy::Cot,
        final_response: response.clone(),
        rounds: vec![
            round1,
            ExchangeRound {
                round: 2,
                messages: m2,
                response,
            },
        ],
    })
}

/// Run one sample under the given strategy.
pub fn run_strategy(
    strategy: Strategy,
    query: &CellQuery,
    gateway: &Gateway,
    params: &SamplingParams,
    opts: &PromptOptions,
) -> Result<PromptTranscript, Box<ExchangeError>> {
    match strategy {
        Strategy::ZeroShot => run_zero_shot(query, gateway, params, opts),
        Strategy::Cot => run_cot(query, gateway, params, opts),
    }
}

/// Recover the marker list from a built user message (the inverse of
/// [`build_question`] for well-formed prompts).
pub fn parse_markers(user_message: &str) -> Option<Vec<String>> {
    let start = user_message.find('[')?;
    let end = user_message[start..].find(']')? + start;
    Some(
        user_message[start + 1..end]
            .split(", ")
            .map(str::to_string)
            .collect(),
    )
}

//! Conversations, per-turn samples and prompt rendering.
//!
//! Every assistant decision in a conversation (a tool call or a direct
//! answer) becomes one [`TurnSample`] whose history is everything that came
//! before it, earlier tool calls and tool results included.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent_output::{AgentAction, ToolCall};
use crate::io::{self, IoError};

pub const PROMPT_TEMPLATE_VERSION: &str = "v1";

const DEFAULT_SYSTEM: &str = "You are a helpful customer support agent. Use the available tools when they are needed to fulfil the user's request, otherwise reply to the user directly.";

const OUTPUT_INSTRUCTIONS: &str = "\
First reason step by step inside <think></think> tags. Then either call exactly one tool:
<tool_call>
{\"name\": \"tool_name\", \"arguments\": {...}}
</tool_call>
or reply to the user:
<answer>
Response to the user
</answer>";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("conversation {conversation}: event {index}: {message}")]
    Validation {
        conversation: String,
        index: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub type_tag: String,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    UserMessage { text: String },
    AssistantToolCall(ToolCall),
    ToolResult { name: String, payload: Value },
    AssistantAnswer { text: String },
}

impl Event {
    /// The action taken, for assistant events.
    pub fn as_action(&self) -> Option<AgentAction> {
        match self {
            Event::AssistantToolCall(call) => Some(AgentAction::tool(call.clone())),
            Event::AssistantAnswer { text } => Some(AgentAction::answer(text.clone())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default)]
    pub tools: Vec<ToolSpec>,
    pub events: Vec<Event>,
}

fn validate_events(events: &[Event]) -> Result<(), (usize, String)> {
    let mut pending: HashMap<&str, usize> = HashMap::new();
    for (i, ev) in events.iter().enumerate() {
        match ev {
            Event::AssistantToolCall(call) => {
                if call.name.is_empty() {
                    return Err((i, "tool call with empty name".into()));
                }
                *pending.entry(call.name.as_str()).or_default() += 1;
            }
            Event::ToolResult { name, .. } => match pending.get_mut(name.as_str()) {
                Some(n) if *n > 0 => *n -= 1,
                _ => {
                    return Err((
                        i,
                        format!("tool result for `{name}` without a preceding tool call"),
                    ))
                }
            },
            _ => {}
        }
    }
    Ok(())
}

impl Conversation {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let err = |index, message| DatasetError::Validation {
            conversation: self.id.clone(),
            index,
            message,
        };
        if self.events.is_empty() {
            return Err(err(0, "conversation has no events".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.tools {
            if !names.insert(t.name.as_str()) {
                return Err(err(0, format!("duplicate tool spec `{}`", t.name)));
            }
        }
        validate_events(&self.events).map_err(|(i, m)| err(i, m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSample {
    pub conversation_id: String,
    /// 0-based ordinal of the decision within its conversation.
    pub turn_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub history: Vec<Event>,
    #[serde(default)]
    pub tools: Vec<ToolSpec>,
    pub ground_truth: AgentAction,
}

impl TurnSample {
    pub fn key(&self) -> (&str, usize) {
        (&self.conversation_id, self.turn_index)
    }

    fn validate(&self) -> Result<(), String> {
        if let AgentAction::Tool { tool } = &self.ground_truth {
            if tool.name.is_empty() {
                return Err("ground_truth tool call has an empty name".into());
            }
        }
        validate_events(&self.history).map_err(|(i, m)| format!("history event {i}: {m}"))
    }
}

/// A model output for one sample, joined on `(conversation_id, turn_index)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub conversation_id: String,
    pub turn_index: usize,
    pub raw_output: String,
}

/// One sample per assistant decision, in conversation order.
pub fn decompose(conv: &Conversation) -> Result<Vec<TurnSample>, DatasetError> {
    conv.validate()?;
    let mut samples = Vec::new();
    for (i, ev) in conv.events.iter().enumerate() {
        if let Some(action) = ev.as_action() {
            samples.push(TurnSample {
                conversation_id: conv.id.clone(),
                turn_index: samples.len(),
                system: conv.system.clone(),
                history: conv.events[..i].to_vec(),
                tools: conv.tools.clone(),
                ground_truth: action,
            });
        }
    }
    Ok(samples)
}

pub fn decompose_all(convs: &[Conversation]) -> Result<Vec<TurnSample>, DatasetError> {
    let mut out = Vec::new();
    for c in convs {
        out.extend(decompose(c)?);
    }
    Ok(out)
}

fn render_tool(spec: &ToolSpec) -> String {
    let params: serde_json::Map<String, Value> = spec
        .parameters
        .iter()
        .map(|(name, p)| {
            (
                name.clone(),
                serde_json::json!({
                    "type": p.type_tag,
                    "required": p.required,
                    "description": p.description,
                }),
            )
        })
        .collect();
    serde_json::json!({
        "name": spec.name,
        "description": spec.description,
        "parameters": params,
    })
    .to_string()
}

/// Deterministic prompt for one decision point.
pub fn assemble_prompt(sample: &TurnSample) -> String {
    let mut out = String::new();
    out.push_str("[system]\n");
    out.push_str(sample.system.as_deref().unwrap_or(DEFAULT_SYSTEM));
    out.push_str("\n\n");

    if !sample.tools.is_empty() {
        out.push_str("# Tools\nYou can call the following tools:\n");
        for t in &sample.tools {
            out.push_str(&render_tool(t));
            out.push('\n');
        }
        out.push('\n');
    }

    out.push_str("# Output format\n");
    out.push_str(OUTPUT_INSTRUCTIONS);
    out.push_str("\n\n# Conversation\n");
    for ev in &sample.history {
        match ev {
            Event::UserMessage { text } => {
                let _ = writeln!(out, "[user]\n{text}");
            }
            Event::AssistantToolCall(call) => {
                let _ = writeln!(out, "[assistant]\n<tool_call>\n{}\n</tool_call>", call.to_json());
            }
            Event::ToolResult { name, payload } => {
                let _ = writeln!(out, "[tool_result name={name}]\n{payload}");
            }
            Event::AssistantAnswer { text } => {
                let _ = writeln!(out, "[assistant]\n<answer>\n{text}\n</answer>");
            }
        }
    }
    out.push_str("[assistant]\n");
    out
}

pub fn load_conversations(path: &Path) -> Result<Vec<Conversation>, DatasetError> {
    Ok(io::read_jsonl_with(path, |c: &Conversation| {
        c.validate().map_err(|e| e.to_string())
    })?)
}

pub fn load_samples(path: &Path) -> Result<Vec<TurnSample>, DatasetError> {
    Ok(io::read_jsonl_with(path, TurnSample::validate)?)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, DatasetError> {
    Ok(io::read_jsonl(path)?)
}

pub fn write_samples(path: &Path, samples: &[TurnSample]) -> Result<(), DatasetError> {
    Ok(io::write_jsonl(path, samples)?)
}

pub fn write_conversations(path: &Path, convs: &[Conversation]) -> Result<(), DatasetError> {
    Ok(io::write_jsonl(path, convs)?)
}

/// Seeded train/test split at conversation granularity, so no conversation
/// contributes to both sides. Returns `(train, test)`.
pub fn split_by_conversation(
    samples: &[TurnSample],
    test_fraction: f64,
    seed: u64,
) -> (Vec<TurnSample>, Vec<TurnSample>) {
    let ids: BTreeSet<&str> = samples.iter().map(|s| s.conversation_id.as_str()).collect();
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (test_fraction.clamp(0.0, 1.0) * ids.len() as f64).round() as usize;
    let test_ids: BTreeSet<&str> = ids[..n_test].iter().copied().collect();
    samples
        .iter()
        .cloned()
        .partition(|s| !test_ids.contains(s.conversation_id.as_str()))
}

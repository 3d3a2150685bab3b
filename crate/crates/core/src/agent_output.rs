//! Structured agent output grammar.
//!
//! A turn is expected to look like
//!
//! ```text
//! <think>
//!   reasoning
//! </think>
//! <tool_call>
//!   {"name": "tool_name", "arguments": {...}}
//! </tool_call>
//! ```
//!
//! with `<answer>...</answer>` in place of the tool call when the agent
//! replies directly. Parsing is total: every input yields a [`ParsedOutput`],
//! and malformation is reported through [`FormatCheck`] and diagnostics so
//! that RL rollouts stay scoreable even when the text is garbage.

use std::fmt;
use std::ops::Range;

use serde::de::{self, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

/// Argument map of a tool call. Key order carries no meaning.
pub type Arguments = Map<String, Value>;

/// Reasoning text found between `<think>` tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkBlock {
    pub text: String,
    pub token_count: usize,
}

impl ThinkBlock {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let token_count = count_tokens(&text);
        Self { text, token_count }
    }
}

/// Number of maximal non-whitespace runs in `text`.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Arguments,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, arguments: Arguments) -> Self {
        Self {
            name: name.into(),
            arguments,
        }
    }

    /// Copy of this call with canonicalized arguments.
    pub fn canonical(&self) -> Self {
        Self {
            name: self.name.clone(),
            arguments: canonicalize_arguments(&self.arguments),
        }
    }

    /// The JSON document that goes inside `<tool_call>` tags.
    pub fn to_json(&self) -> String {
        let mut obj = Map::new();
        obj.insert("name".into(), Value::String(self.name.clone()));
        obj.insert("arguments".into(), Value::Object(self.arguments.clone()));
        Value::Object(obj).to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Tool,
    Answer,
}

/// The decision of one turn: call a tool or answer the user directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentAction {
    Tool { tool: ToolCall },
    Answer { answer_text: String },
}

impl AgentAction {
    pub fn tool(call: ToolCall) -> Self {
        AgentAction::Tool { tool: call }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        AgentAction::Answer {
            answer_text: text.into(),
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            AgentAction::Tool { .. } => ActionKind::Tool,
            AgentAction::Answer { .. } => ActionKind::Answer,
        }
    }

    pub fn as_tool(&self) -> Option<&ToolCall> {
        match self {
            AgentAction::Tool { tool } => Some(tool),
            AgentAction::Answer { .. } => None,
        }
    }

    pub fn as_answer(&self) -> Option<&str> {
        match self {
            AgentAction::Answer { answer_text } => Some(answer_text),
            AgentAction::Tool { .. } => None,
        }
    }
}

/// The three structural conditions a well-formed output must satisfy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatCheck {
    pub has_think: bool,
    pub has_action: bool,
    pub correct_order: bool,
}

impl FormatCheck {
    pub fn all_satisfied(&self) -> bool {
        self.has_think && self.has_action && self.correct_order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Think,
    ToolCall,
    Answer,
}

impl BlockKind {
    pub fn open_tag(self) -> &'static str {
        match self {
            BlockKind::Think => "<think>",
            BlockKind::ToolCall => "<tool_call>",
            BlockKind::Answer => "<answer>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            BlockKind::Think => "</think>",
            BlockKind::ToolCall => "</tool_call>",
            BlockKind::Answer => "</answer>",
        }
    }

    pub fn is_action(self) -> bool {
        !matches!(self, BlockKind::Think)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.open_tag())
    }
}

/// One tagged region found in the raw text. `span` covers the tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub span: Range<usize>,
    pub well_formed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "diagnostic", rename_all = "snake_case")]
pub enum Diagnostic {
    UnclosedTag { tag: BlockKind, offset: usize },
    StrayCloseTag { tag: BlockKind, offset: usize },
    /// A block body contains another recognized tag.
    NestedTag { tag: BlockKind, offset: usize },
    InvalidToolCall { offset: usize, reason: String },
    DuplicateBlock { tag: BlockKind, count: usize },
    MultipleActions { count: usize },
    OutsideText { offset: usize, text: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::UnclosedTag { tag, offset } => write!(f, "unclosed {tag} at byte {offset}"),
            Diagnostic::StrayCloseTag { tag, offset } => {
                write!(f, "stray {} at byte {offset}", tag.close_tag())
            }
            Diagnostic::NestedTag { tag, offset } => {
                write!(f, "{tag} block at byte {offset} contains a nested tag")
            }
            Diagnostic::InvalidToolCall { offset, reason } => {
                write!(f, "invalid tool call at byte {offset}: {reason}")
            }
            Diagnostic::DuplicateBlock { tag, count } => write!(f, "{count} {tag} blocks"),
            Diagnostic::MultipleActions { count } => write!(f, "{count} action blocks"),
            Diagnostic::OutsideText { offset, text } => {
                write!(f, "text outside blocks at byte {offset}: {text:?}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub think: Option<ThinkBlock>,
    pub action: Option<AgentAction>,
    pub format: FormatCheck,
    pub raw: String,
    pub blocks: Vec<Block>,
    pub diagnostics: Vec<Diagnostic>,
}

const ALL_TAGS: [(&str, BlockKind, bool); 6] = [
    ("<think>", BlockKind::Think, true),
    ("</think>", BlockKind::Think, false),
    ("<tool_call>", BlockKind::ToolCall, true),
    ("</tool_call>", BlockKind::ToolCall, false),
    ("<answer>", BlockKind::Answer, true),
    ("</answer>", BlockKind::Answer, false),
];

/// Earliest recognized tag at or after `from`: (offset, kind, is_open).
fn next_tag(text: &str, from: usize) -> Option<(usize, BlockKind, bool)> {
    let rest = &text[from..];
    let mut best: Option<(usize, BlockKind, bool)> = None;
    for (tag, kind, open) in ALL_TAGS {
        if let Some(i) = rest.find(tag) {
            if best.is_none_or(|(b, _, _)| i < b) {
                best = Some((i, kind, open));
            }
        }
    }
    best.map(|(i, k, o)| (from + i, k, o))
}

fn contains_any_tag(body: &str) -> bool {
    ALL_TAGS.iter().any(|(tag, _, _)| body.contains(tag))
}

fn note_outside(text: &str, range: Range<usize>, diagnostics: &mut Vec<Diagnostic>) {
    let chunk = &text[range.clone()];
    if !chunk.trim().is_empty() {
        diagnostics.push(Diagnostic::OutsideText {
            offset: range.start,
            text: chunk.to_string(),
        });
    }
}

/// Parse raw model output. Never fails.
pub fn parse_output(text: &str) -> ParsedOutput {
    let mut blocks = Vec::new();
    let mut diagnostics = Vec::new();
    let mut think = None;
    let mut tool_calls: Vec<(usize, ToolCall)> = Vec::new();
    let mut answers: Vec<(usize, String)> = Vec::new();

    let mut pos = 0;
    while let Some((start, kind, open)) = next_tag(text, pos) {
        note_outside(text, pos..start, &mut diagnostics);
        if !open {
            diagnostics.push(Diagnostic::StrayCloseTag {
                tag: kind,
                offset: start,
            });
            pos = start + kind.close_tag().len();
            continue;
        }
        let body_start = start + kind.open_tag().len();
        let Some(rel_close) = text[body_start..].find(kind.close_tag()) else {
            diagnostics.push(Diagnostic::UnclosedTag {
                tag: kind,
                offset: start,
            });
            blocks.push(Block {
                kind,
                span: start..text.len(),
                well_formed: false,
            });
            pos = text.len();
            break;
        };
        let body_end = body_start + rel_close;
        let end = body_end + kind.close_tag().len();
        let body = &text[body_start..body_end];
        let block_index = blocks.len();

        let mut well_formed = true;
        if contains_any_tag(body) {
            diagnostics.push(Diagnostic::NestedTag {
                tag: kind,
                offset: start,
            });
            well_formed = false;
        } else {
            match kind {
                BlockKind::Think => think = Some((block_index, ThinkBlock::new(body))),
                BlockKind::Answer => answers.push((block_index, body.trim().to_string())),
                BlockKind::ToolCall => match parse_tool_call(body) {
                    Ok(call) => tool_calls.push((block_index, call)),
                    Err(reason) => {
                        diagnostics.push(Diagnostic::InvalidToolCall {
                            offset: start,
                            reason,
                        });
                        well_formed = false;
                    }
                },
            }
        }
        blocks.push(Block {
            kind,
            span: start..end,
            well_formed,
        });
        pos = end;
    }
    note_outside(text, pos..text.len(), &mut diagnostics);

    let think_count = blocks.iter().filter(|b| b.kind == BlockKind::Think).count();
    if think_count > 1 {
        diagnostics.push(Diagnostic::DuplicateBlock {
            tag: BlockKind::Think,
            count: think_count,
        });
    }
    let action_count = blocks.iter().filter(|b| b.kind.is_action()).count();
    if action_count > 1 {
        diagnostics.push(Diagnostic::MultipleActions {
            count: action_count,
        });
    }

    let format = format_from_blocks(&blocks);
    let think = if format.has_think {
        think.map(|(_, t)| t)
    } else {
        None
    };
    let action = if format.has_action {
        tool_calls
            .pop()
            .map(|(_, call)| AgentAction::tool(call))
            .or_else(|| answers.pop().map(|(_, a)| AgentAction::answer(a)))
    } else {
        None
    };

    ParsedOutput {
        think,
        action,
        format,
        raw: text.to_string(),
        blocks,
        diagnostics,
    }
}

fn unique_well_formed(blocks: &[Block], pred: impl Fn(BlockKind) -> bool) -> Option<&Block> {
    let mut matching = blocks.iter().filter(|b| pred(b.kind));
    match (matching.next(), matching.next()) {
        (Some(b), None) if b.well_formed => Some(b),
        _ => None,
    }
}

fn format_from_blocks(blocks: &[Block]) -> FormatCheck {
    let think = unique_well_formed(blocks, |k| k == BlockKind::Think);
    let action = unique_well_formed(blocks, BlockKind::is_action);
    let correct_order = match (think, action) {
        (Some(t), Some(a)) => t.span.end <= a.span.start,
        _ => false,
    };
    FormatCheck {
        has_think: think.is_some(),
        has_action: action.is_some(),
        correct_order,
    }
}

/// Recompute the structural flags from the block inventory of a parse.
pub fn check_format(parsed: &ParsedOutput) -> FormatCheck {
    format_from_blocks(&parsed.blocks)
}

/// Body of a `<tool_call>` block: exactly one JSON object with the members
/// `name` (non-empty string) and `arguments` (object), nothing else.
pub fn parse_tool_call(body: &str) -> Result<ToolCall, String> {
    let StrictValue(value) = serde_json::from_str(body.trim()).map_err(|e| e.to_string())?;
    let Value::Object(mut obj) = value else {
        return Err("tool call body is not a JSON object".into());
    };
    if let Some(extra) = obj.keys().find(|k| *k != "name" && *k != "arguments") {
        return Err(format!("unexpected member `{extra}`"));
    }
    let name = match obj.remove("name") {
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(Value::String(_)) => return Err("empty tool name".into()),
        Some(_) => return Err("`name` is not a string".into()),
        None => return Err("missing `name`".into()),
    };
    let arguments = match obj.remove("arguments") {
        Some(Value::Object(args)) => args,
        Some(_) => return Err("`arguments` is not an object".into()),
        None => return Err("missing `arguments`".into()),
    };
    Ok(ToolCall { name, arguments })
}

/// A JSON value that refuses duplicate object keys at any depth.
struct StrictValue(Value);

impl<'de> Deserialize<'de> for StrictValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(StrictVisitor).map(StrictValue)
    }
}

struct StrictVisitor;

impl<'de> Visitor<'de> for StrictVisitor {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a JSON value")
    }

    fn visit_bool<E>(self, v: bool) -> Result<Value, E> {
        Ok(Value::Bool(v))
    }

    fn visit_i64<E>(self, v: i64) -> Result<Value, E> {
        Ok(Value::Number(v.into()))
    }

    fn visit_u64<E>(self, v: u64) -> Result<Value, E> {
        Ok(Value::Number(v.into()))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Value, E> {
        Number::from_f64(v)
            .map(Value::Number)
            .ok_or_else(|| E::custom("non-finite number"))
    }

    fn visit_str<E>(self, v: &str) -> Result<Value, E> {
        Ok(Value::String(v.to_string()))
    }

    fn visit_string<E>(self, v: String) -> Result<Value, E> {
        Ok(Value::String(v))
    }

    fn visit_unit<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
        let mut out = Vec::new();
        while let Some(StrictValue(v)) = seq.next_element()? {
            out.push(v);
        }
        Ok(Value::Array(out))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Value, A::Error> {
        let mut obj = Map::new();
        while let Some(key) = map.next_key::<String>()? {
            let StrictValue(v) = map.next_value()?;
            if obj.contains_key(&key) {
                return Err(de::Error::custom(format!("duplicate key `{key}`")));
            }
            obj.insert(key, v);
        }
        Ok(Value::Object(obj))
    }
}

/// Canonical form of an argument map: integral floats become integers,
/// key order is discarded at every depth, text is left untouched.
pub fn canonicalize_arguments(args: &Arguments) -> Arguments {
    args.iter()
        .map(|(k, v)| (k.clone(), canonicalize_value(v)))
        .collect()
}

pub fn canonicalize_value(value: &Value) -> Value {
    match value {
        Value::Number(n) => Value::Number(canonical_number(n)),
        Value::Array(items) => Value::Array(items.iter().map(canonicalize_value).collect()),
        Value::Object(obj) => Value::Object(canonicalize_arguments(obj)),
        other => other.clone(),
    }
}

fn canonical_number(n: &Number) -> Number {
    if n.is_i64() || n.is_u64() {
        return n.clone();
    }
    let Some(f) = n.as_f64() else {
        return n.clone();
    };
    if f.fract() == 0.0 {
        // 2^63 is exactly representable; the open upper bound keeps the cast exact.
        let two_63 = 2f64.powi(63);
        if (-two_63..two_63).contains(&f) {
            return Number::from(f as i64);
        }
        if (0.0..2f64.powi(64)).contains(&f) {
            return Number::from(f as u64);
        }
    }
    n.clone()
}

/// Render a well-formed output. `think` of `None` omits the think block.
pub fn render_output(think: Option<&str>, action: &AgentAction) -> String {
    let mut out = String::new();
    if let Some(text) = think {
        out.push_str("<think>\n");
        out.push_str(text);
        out.push_str("\n</think>\n");
    }
    match action {
        AgentAction::Tool { tool } => {
            out.push_str("<tool_call>\n");
            out.push_str(&tool.to_json());
            out.push_str("\n</tool_call>");
        }
        AgentAction::Answer { answer_text } => {
            out.push_str("<answer>\n");
            out.push_str(answer_text);
            out.push_str("\n</answer>");
        }
    }
    out
}

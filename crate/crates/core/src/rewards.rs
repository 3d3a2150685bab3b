//! Composite verifiable reward for tool-calling turns.
//!
//! `r_total = r_cond + r_fmt + r_len`, where
//!
//! * `r_cond` grades the tool-vs-answer decision and its execution
//!   (`1 + s_tool / 3` for two tool calls, `1 + s_sem` for two answers,
//!   `-2` otherwise),
//! * `r_fmt` is 1 when the think-then-act structure is respected,
//! * `r_len` rewards think blocks with a token count in `(m, n]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_output::{
    canonicalize_arguments, parse_output, ActionKind, AgentAction, FormatCheck, ParsedOutput,
    ThinkBlock, ToolCall,
};
use crate::similarity::{check_range, ScoreError, SimilarityScorer};

/// Reward for choosing the wrong kind of action, or none at all.
pub const MISMATCH_REWARD: f64 = -2.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid think length bounds: need min < max, got min={min} max={max}")]
pub struct LengthBoundsError {
    pub min: usize,
    pub max: usize,
}

/// Think-length bounds `m < n`, measured in whitespace-delimited tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthRewardConfig {
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for LengthRewardConfig {
    fn default() -> Self {
        Self {
            min_tokens: 14,
            max_tokens: 100,
        }
    }
}

impl LengthRewardConfig {
    pub fn new(min_tokens: usize, max_tokens: usize) -> Result<Self, LengthBoundsError> {
        if min_tokens >= max_tokens {
            return Err(LengthBoundsError {
                min: min_tokens,
                max: max_tokens,
            });
        }
        Ok(Self {
            min_tokens,
            max_tokens,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolMatchScore {
    pub s_name: f64,
    pub s_keys: f64,
    pub s_vals: f64,
    pub s_tool: f64,
}

impl ToolMatchScore {
    /// Full argument-map match: same keys, same values.
    pub fn args_exact(&self) -> bool {
        self.s_keys == 1.0 && self.s_vals == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_cond: f64,
    pub r_fmt: f64,
    pub r_len: f64,
    pub r_total: f64,
    pub tool_match: Option<ToolMatchScore>,
    pub s_sem: Option<f64>,
    pub format: FormatCheck,
    pub think_tokens: Option<usize>,
    pub pred_kind: Option<ActionKind>,
}

/// Name match, argument-key Jaccard and value-match fraction.
///
/// Both argument maps are canonicalized first. When neither call has
/// arguments the key and value terms are a vacuous 1; any other empty side
/// scores 0 on both.
pub fn tool_match_score(gt: &ToolCall, pred: &ToolCall) -> ToolMatchScore {
    let g = canonicalize_arguments(&gt.arguments);
    let p = canonicalize_arguments(&pred.arguments);
    let s_name = if gt.name == pred.name { 1.0 } else { 0.0 };

    let (s_keys, s_vals) = if g.is_empty() && p.is_empty() {
        (1.0, 1.0)
    } else {
        let shared = g.keys().filter(|k| p.contains_key(*k)).count();
        let union = g.len() + p.len() - shared;
        let matching = g
            .iter()
            .filter(|(k, v)| p.get(*k).is_some_and(|pv| pv == *v))
            .count();
        let s_vals = if g.is_empty() {
            0.0
        } else {
            matching as f64 / g.len() as f64
        };
        (shared as f64 / union as f64, s_vals)
    };

    ToolMatchScore {
        s_name,
        s_keys,
        s_vals,
        s_tool: 2.0 * (s_name + s_keys + s_vals) - 3.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalReward {
    pub r_cond: f64,
    pub tool_match: Option<ToolMatchScore>,
    pub s_sem: Option<f64>,
}

/// Decision-and-execution reward. `pred = None` means the output held no
/// valid action and is scored as a mismatch.
pub fn conditional_reward<S: SimilarityScorer + ?Sized>(
    gt: &AgentAction,
    pred: Option<&AgentAction>,
    scorer: &S,
) -> Result<ConditionalReward, ScoreError> {
    match (gt, pred) {
        (AgentAction::Tool { tool: g }, Some(AgentAction::Tool { tool: p })) => {
            let m = tool_match_score(g, p);
            Ok(ConditionalReward {
                r_cond: 1.0 + m.s_tool / 3.0,
                tool_match: Some(m),
                s_sem: None,
            })
        }
        (
            AgentAction::Answer { answer_text: g },
            Some(AgentAction::Answer { answer_text: p }),
        ) => {
            let s = check_range(scorer.score(p, g)?)?;
            Ok(ConditionalReward {
                r_cond: 1.0 + s,
                tool_match: None,
                s_sem: Some(s),
            })
        }
        _ => Ok(ConditionalReward {
            r_cond: MISMATCH_REWARD,
            tool_match: None,
            s_sem: None,
        }),
    }
}

pub fn format_reward(fc: &FormatCheck) -> f64 {
    if fc.all_satisfied() {
        1.0
    } else {
        0.0
    }
}

pub fn length_reward(think: Option<&ThinkBlock>, cfg: &LengthRewardConfig) -> f64 {
    match think {
        None => 0.0,
        Some(t) if t.token_count <= cfg.min_tokens => 0.0,
        Some(t) if t.token_count <= cfg.max_tokens => 1.0,
        Some(_) => 0.5,
    }
}

/// Score an already-parsed output against the ground-truth action.
pub fn score_parsed<S: SimilarityScorer + ?Sized>(
    parsed: &ParsedOutput,
    gt: &AgentAction,
    scorer: &S,
    cfg: &LengthRewardConfig,
) -> Result<RewardBreakdown, ScoreError> {
    let cond = conditional_reward(gt, parsed.action.as_ref(), scorer)?;
    let r_fmt = format_reward(&parsed.format);
    let r_len = length_reward(parsed.think.as_ref(), cfg);
    Ok(RewardBreakdown {
        r_cond: cond.r_cond,
        r_fmt,
        r_len,
        r_total: cond.r_cond + r_fmt + r_len,
        tool_match: cond.tool_match,
        s_sem: cond.s_sem,
        format: parsed.format,
        think_tokens: parsed.think.as_ref().map(|t| t.token_count),
        pred_kind: parsed.action.as_ref().map(AgentAction::kind),
    })
}

pub fn total_reward<S: SimilarityScorer + ?Sized>(
    raw_output: &str,
    gt: &AgentAction,
    scorer: &S,
    cfg: &LengthRewardConfig,
) -> Result<RewardBreakdown, ScoreError> {
    score_parsed(&parse_output(raw_output), gt, scorer, cfg)
}

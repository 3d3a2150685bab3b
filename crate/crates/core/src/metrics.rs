//! Turn-level evaluation against ground truth.
//!
//! Tool and Answer are each treated as the positive class in turn. An
//! unparseable prediction counts against the recall of its ground-truth
//! class and is left out of both precision denominators. Ratios with a zero
//! denominator are reported as absent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_output::{parse_output, ActionKind, AgentAction};
use crate::rewards::{tool_match_score, ToolMatchScore};
use crate::similarity::{check_range, ScoreError, SimilarityScorer};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty result list")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Tool,
    Answer,
    Invalid,
}

impl From<ActionKind> for TurnKind {
    fn from(k: ActionKind) -> Self {
        match k {
            ActionKind::Tool => TurnKind::Tool,
            ActionKind::Answer => TurnKind::Answer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub gt_kind: TurnKind,
    pub pred_kind: TurnKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name_match: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub args_exact: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool_match: Option<ToolMatchScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_sim: Option<f64>,
}

pub fn evaluate_turn<S: SimilarityScorer + ?Sized>(
    gt: &AgentAction,
    raw_pred: &str,
    scorer: &S,
) -> Result<TurnResult, ScoreError> {
    let parsed = parse_output(raw_pred);
    evaluate_action(gt, parsed.action.as_ref(), scorer)
}

/// Like [`evaluate_turn`] for an already-extracted action.
pub fn evaluate_action<S: SimilarityScorer + ?Sized>(
    gt: &AgentAction,
    pred: Option<&AgentAction>,
    scorer: &S,
) -> Result<TurnResult, ScoreError> {
    let mut r = TurnResult {
        gt_kind: gt.kind().into(),
        pred_kind: pred.map_or(TurnKind::Invalid, |a| a.kind().into()),
        name_match: None,
        args_exact: None,
        tool_match: None,
        answer_sim: None,
    };
    match (gt, pred) {
        (AgentAction::Tool { tool: g }, Some(AgentAction::Tool { tool: p })) => {
            let m = tool_match_score(g, p);
            r.name_match = Some(g.name == p.name);
            r.args_exact = Some(m.args_exact());
            r.tool_match = Some(m);
        }
        (AgentAction::Answer { answer_text: g }, Some(AgentAction::Answer { answer_text: p })) => {
            r.answer_sim = Some(check_range(scorer.score(p, g)?)?);
        }
        _ => {}
    }
    Ok(r)
}

/// Counts keyed `<gt>_<pred>`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tool_tool: usize,
    pub tool_answer: usize,
    pub tool_invalid: usize,
    pub answer_tool: usize,
    pub answer_answer: usize,
    pub answer_invalid: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tool_tool
            + self.tool_answer
            + self.tool_invalid
            + self.answer_tool
            + self.answer_answer
            + self.answer_invalid
    }

    fn add(&mut self, gt: TurnKind, pred: TurnKind) {
        let cell = match (gt, pred) {
            (TurnKind::Tool, TurnKind::Tool) => &mut self.tool_tool,
            (TurnKind::Tool, TurnKind::Answer) => &mut self.tool_answer,
            (TurnKind::Tool, TurnKind::Invalid) => &mut self.tool_invalid,
            (TurnKind::Answer, TurnKind::Tool) => &mut self.answer_tool,
            (TurnKind::Answer, TurnKind::Answer) => &mut self.answer_answer,
            (TurnKind::Answer, TurnKind::Invalid) => &mut self.answer_invalid,
            (TurnKind::Invalid, _) => unreachable!("ground truth is always a valid action"),
        };
        *cell += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_recall_macro: Option<f64>,
    pub action_recall_micro: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool_name_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool_args_em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_similarity_mean: Option<f64>,
    #[serde(flatten)]
    pub confusion: ConfusionCounts,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn f1(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(results: &[TurnResult]) -> Result<EvalReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for r in results {
        c.add(r.gt_kind, r.pred_kind);
    }
    let gt_tool = c.tool_tool + c.tool_answer + c.tool_invalid;
    let gt_answer = c.answer_tool + c.answer_answer + c.answer_invalid;
    let pred_tool = c.tool_tool + c.answer_tool;
    let pred_answer = c.tool_answer + c.answer_answer;

    let tool_recall = ratio(c.tool_tool, gt_tool);
    let tool_precision = ratio(c.tool_tool, pred_tool);
    let answer_recall = ratio(c.answer_answer, gt_answer);
    let answer_precision = ratio(c.answer_answer, pred_answer);

    let both_tool = results.iter().filter(|r| r.name_match.is_some());

    Ok(EvalReport {
        n: results.len(),
        action_recall_macro: mean(tool_recall.into_iter().chain(answer_recall)),
        action_recall_micro: (c.tool_tool + c.answer_answer) as f64 / results.len() as f64,
        tool_recall,
        tool_precision,
        tool_f1: f1(tool_precision, tool_recall),
        tool_name_accuracy: mean(both_tool.clone().map(|r| f64::from(u8::from(r.name_match == Some(true))))),
        tool_args_em: mean(both_tool.map(|r| f64::from(u8::from(r.args_exact == Some(true))))),
        answer_recall,
        answer_precision,
        answer_f1: f1(answer_precision, answer_recall),
        answer_similarity_mean: mean(results.iter().filter_map(|r| r.answer_sim)),
        confusion: c,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    /// Three column groups: Action | Tool | Answer.
    pub fn render_table(&self) -> String {
        let header = [
            "Recall", "Recall", "Precision", "F1", "Name Acc", "Args EM", "Recall", "Precision",
            "F1", "Sim.",
        ];
        let values = [
            cell(Some(self.action_recall_micro)),
            cell(self.tool_recall),
            cell(self.tool_precision),
            cell(self.tool_f1),
            cell(self.tool_name_accuracy),
            cell(self.tool_args_em),
            cell(self.answer_recall),
            cell(self.answer_precision),
            cell(self.answer_f1),
            cell(self.answer_similarity_mean),
        ];
        let w = 10;
        let mut out = String::new();
        out.push_str(&format!(
            "| {:^w$} | {:^tw$} | {:^aw$} |\n",
            "Action",
            "Tool",
            "Answer",
            tw = 5 * w + 12,
            aw = 4 * w + 9
        ));
        let row = |cells: &[String]| {
            let mut s = String::from("|");
            for c in cells {
                s.push_str(&format!(" {c:>w$} |"));
            }
            s.push('\n');
            s
        };
        out.push_str(&row(&header.map(String::from)));
        out.push_str(&row(&values));
        out.push_str(&format!(
            "n={}  macro action recall={}  confusion gt/pred: TT={} TA={} TI={} AT={} AA={} AI={}\n",
            self.n,
            cell(self.action_recall_macro),
            self.confusion.tool_tool,
            self.confusion.tool_answer,
            self.confusion.tool_invalid,
            self.confusion.answer_tool,
            self.confusion.answer_answer,
            self.confusion.answer_invalid,
        ));
        out
    }
}

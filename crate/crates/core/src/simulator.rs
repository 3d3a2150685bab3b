//! Desk-scale GRPO training on a synthetic tool-calling environment.
//!
//! The policy is a set of independent categorical tables per scenario. One
//! sampled output is the token sequence
//!
//! ```text
//! [length bucket, decision, tool name, slot_1 .. slot_k]   (tool branch)
//! [length bucket, decision, answer]                        (answer branch)
//! ```
//!
//! rendered to the `<think>` / `<tool_call>` / `<answer>` text format and
//! scored with the composite reward. Each categorical draw is one token, so
//! log-probs and their derivatives with respect to the logits are exact.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent_output::{render_output, AgentAction, Arguments, ToolCall};
use crate::grpo::{
    clipped_surrogate, GrpoConfig, GrpoError, RolloutGroup, RolloutOutput, SurrogateOutput,
    TokenLogProbs,
};
use crate::io::{self, IoError};
use crate::rewards::{total_reward, LengthRewardConfig, RewardBreakdown};
use crate::similarity::{LexicalScorer, ScoreError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario {id}: {message}")]
    Scenario { id: String, message: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite logits after step {step} (scenario {scenario})")]
    Divergence { step: usize, scenario: String },
    #[error("step {step}: rendered rollout failed the format check")]
    FormatInvariant { step: usize },
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub gold: AgentAction,
    pub tool_vocabulary: Vec<String>,
    /// Candidate values per argument slot. Every slot also has an implicit
    /// "omit" choice.
    #[serde(default)]
    pub slot_vocabulary: BTreeMap<String, Vec<Value>>,
    pub answer_vocabulary: Vec<String>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |message: String| SimError::Scenario {
            id: self.id.clone(),
            message,
        };
        if self.tool_vocabulary.is_empty() {
            return Err(err("empty tool vocabulary".into()));
        }
        if self.answer_vocabulary.is_empty() {
            return Err(err("empty answer vocabulary".into()));
        }
        if let Some((slot, _)) = self.slot_vocabulary.iter().find(|(_, v)| v.is_empty()) {
            return Err(err(format!("slot `{slot}` has no candidate values")));
        }
        match &self.gold {
            AgentAction::Tool { tool } => {
                if !self.tool_vocabulary.contains(&tool.name) {
                    return Err(err(format!("gold tool `{}` not in vocabulary", tool.name)));
                }
                for (k, v) in &tool.arguments {
                    match self.slot_vocabulary.get(k) {
                        Some(cands) if cands.contains(v) => {}
                        Some(_) => return Err(err(format!("gold value for `{k}` not a candidate"))),
                        None => return Err(err(format!("gold argument `{k}` is not a slot"))),
                    }
                }
            }
            AgentAction::Answer { answer_text } => {
                if !self.answer_vocabulary.contains(answer_text) {
                    return Err(err("gold answer not in vocabulary".into()));
                }
            }
        }
        Ok(())
    }
}

pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>, SimError> {
    Ok(io::read_jsonl_with(path, |s: &Scenario| {
        s.validate().map_err(|e| e.to_string())
    })?)
}

const DECISION: usize = 0;
const TOOL: usize = 1;
const ANSWER: usize = 2;
const LENGTH: usize = 3;
const FIRST_SLOT: usize = 4;

const DECIDE_TOOL: usize = 0;
const DECIDE_ANSWER: usize = 1;

/// Think length buckets: `<= m`, `(m, n]`, `> n`.
pub const LENGTH_BUCKETS: usize = 3;

/// Logit tables for one scenario: decision, tool, answer, length bucket,
/// then one table per slot (candidates followed by "omit").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPolicy {
    pub tables: Vec<Vec<f64>>,
}

impl ScenarioPolicy {
    pub fn uniform(scenario: &Scenario) -> Self {
        let mut tables = vec![
            vec![0.0; 2],
            vec![0.0; scenario.tool_vocabulary.len()],
            vec![0.0; scenario.answer_vocabulary.len()],
            vec![0.0; LENGTH_BUCKETS],
        ];
        for cands in scenario.slot_vocabulary.values() {
            tables.push(vec![0.0; cands.len() + 1]);
        }
        Self { tables }
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(scenario: &Scenario, scale: f64, seed: u64) -> Self {
        let mut p = Self::uniform(scenario);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in p.tables.iter_mut().flatten() {
            *v = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.tables.iter().flatten().all(|v| v.is_finite())
    }

    pub fn log_prob(&self, token: Token) -> f64 {
        log_softmax(&self.tables[token.table])[token.choice]
    }

    pub fn probabilities(&self, table: usize) -> Vec<f64> {
        softmax(&self.tables[table])
    }

    pub fn num_params(&self) -> usize {
        self.tables.iter().map(Vec::len).sum()
    }

    fn ascend(&mut self, grad: &ScenarioPolicy, lr: f64) {
        for (t, g) in self.tables.iter_mut().zip(&grad.tables) {
            for (v, d) in t.iter_mut().zip(g) {
                *v += lr * d;
            }
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            tables: self.tables.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tables.iter().flatten().copied().collect()
    }

    fn param_mut(&mut self, mut flat: usize) -> &mut f64 {
        for t in &mut self.tables {
            if flat < t.len() {
                return &mut t[flat];
            }
            flat -= t.len();
        }
        panic!("parameter index out of range")
    }
}

/// Per-scenario tables, indexed like the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredPolicy {
    pub scenarios: Vec<ScenarioPolicy>,
}

impl FactoredPolicy {
    pub fn uniform(env: &[Scenario]) -> Self {
        Self {
            scenarios: env.iter().map(ScenarioPolicy::uniform).collect(),
        }
    }

    pub fn random(env: &[Scenario], scale: f64, seed: u64) -> Self {
        Self {
            scenarios: env
                .iter()
                .enumerate()
                .map(|(i, s)| ScenarioPolicy::random(s, scale, split_seed(seed, i as u64)))
                .collect(),
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| (l - lse).min(0.0)).collect()
}

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One categorical draw: which table, which entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub table: usize,
    pub choice: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledOutput {
    pub tokens: Vec<Token>,
    pub action: AgentAction,
    pub length_bucket: usize,
    pub text: String,
    pub reward: RewardBreakdown,
}

/// `G` sampled outputs with log-probs under the sampling policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub group: RolloutGroup,
    pub samples: Vec<SampledOutput>,
}

/// Think-block token count used for each length bucket.
pub fn bucket_length(bucket: usize, cfg: &LengthRewardConfig) -> usize {
    let (m, n) = (cfg.min_tokens, cfg.max_tokens);
    match bucket {
        0 => m / 2,
        1 => m + (n - m).div_ceil(2),
        _ => n + 1 + (n - m) / 4,
    }
}

const FILLER: [&str; 8] = ["check", "the", "request", "then", "decide", "which", "action", "fits"];

fn filler_think(len: usize) -> String {
    (0..len)
        .map(|i| FILLER[i % FILLER.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

fn sample_one(
    policy: &ScenarioPolicy,
    scenario: &Scenario,
    length_cfg: &LengthRewardConfig,
    rng: &mut impl Rng,
) -> Result<SampledOutput, ScoreError> {
    let mut tokens = Vec::new();
    let mut draw = |table: usize, rng: &mut ChaCha8Rng| {
        let choice = sample_index(&policy.probabilities(table), rng);
        tokens.push(Token { table, choice });
        choice
    };
    // Re-seed a local ChaCha stream so the closure has a concrete RNG type.
    let mut local = ChaCha8Rng::seed_from_u64(rng.gen());

    let bucket = draw(LENGTH, &mut local);
    let action = if draw(DECISION, &mut local) == DECIDE_TOOL {
        let name = scenario.tool_vocabulary[draw(TOOL, &mut local)].clone();
        let mut args = Arguments::new();
        for (k, (slot, cands)) in scenario.slot_vocabulary.iter().enumerate() {
            let c = draw(FIRST_SLOT + k, &mut local);
            if c < cands.len() {
                args.insert(slot.clone(), cands[c].clone());
            }
        }
        AgentAction::tool(ToolCall::new(name, args))
    } else {
        AgentAction::answer(scenario.answer_vocabulary[draw(ANSWER, &mut local)].clone())
    };

    let text = render_output(Some(&filler_think(bucket_length(bucket, length_cfg))), &action);
    let reward = total_reward(&text, &scenario.gold, &LexicalScorer, length_cfg)?;
    Ok(SampledOutput {
        tokens,
        action,
        length_bucket: bucket,
        text,
        reward,
    })
}

/// Sample `group_size` outputs. Output `i` draws from its own stream derived
/// from `(seed, i)`, so results do not depend on generation order.
pub fn rollout(
    policy: &ScenarioPolicy,
    scenario: &Scenario,
    group_size: usize,
    seed: u64,
    length_cfg: &LengthRewardConfig,
) -> Result<Rollout, SimError> {
    if group_size < 2 {
        return Err(SimError::Config(format!(
            "group size must be at least 2, got {group_size}"
        )));
    }
    let mut samples = Vec::with_capacity(group_size);
    let mut outputs = Vec::with_capacity(group_size);
    for i in 0..group_size {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, i as u64));
        let s = sample_one(policy, scenario, length_cfg, &mut rng)?;
        let lp = TokenLogProbs::new(s.tokens.iter().map(|t| policy.log_prob(*t)).collect())?;
        outputs.push(RolloutOutput {
            new: lp.clone(),
            old: lp,
            reference: None,
            reward: s.reward.r_total,
        });
        samples.push(s);
    }
    Ok(Rollout {
        group: RolloutGroup::new(outputs),
        samples,
    })
}

/// Surrogate objective of `current` on a fixed rollout, plus its gradient
/// with respect to every logit of `current`.
pub fn surrogate_gradient(
    current: &ScenarioPolicy,
    rollout: &Rollout,
    reference: Option<&ScenarioPolicy>,
    reward_offset: f64,
    cfg: &GrpoConfig,
) -> Result<(SurrogateOutput, ScenarioPolicy), SimError> {
    let outputs = rollout
        .group
        .outputs
        .iter()
        .zip(&rollout.samples)
        .map(|(o, s)| {
            let new = TokenLogProbs::new(s.tokens.iter().map(|t| current.log_prob(*t)).collect())?;
            let reference = reference
                .map(|r| TokenLogProbs::new(s.tokens.iter().map(|t| r.log_prob(*t)).collect()))
                .transpose()?;
            Ok(RolloutOutput {
                new,
                old: o.old.clone(),
                reference,
                reward: o.reward + reward_offset,
            })
        })
        .collect::<Result<Vec<_>, GrpoError>>()?;
    let out = clipped_surrogate(&RolloutGroup::new(outputs), cfg)?;

    let probs: Vec<Vec<f64>> = (0..current.tables.len())
        .map(|t| current.probabilities(t))
        .collect();
    let mut grad = current.zeros_like();
    for (sample, diags) in rollout.samples.iter().zip(&out.tokens) {
        for (tok, d) in sample.tokens.iter().zip(diags) {
            // d log_softmax(l)[c] / d l_j = [j == c] - p_j
            let g = &mut grad.tables[tok.table];
            for (j, p) in probs[tok.table].iter().enumerate() {
                let indicator = if j == tok.choice { 1.0 } else { 0.0 };
                g[j] += d.grad_new * (indicator - p);
            }
        }
    }
    Ok((out, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub grpo: GrpoConfig,
    pub learning_rate: f64,
    pub steps: usize,
    pub group_size: usize,
    pub seed: u64,
    /// Gradient steps taken on each rollout before resampling.
    pub inner_updates: usize,
    pub length: LengthRewardConfig,
    /// Constant added to every reward before advantage estimation.
    pub reward_offset: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            grpo: GrpoConfig::default(),
            learning_rate: 1.0,
            steps: 500,
            group_size: 8,
            seed: 7,
            inner_updates: 1,
            length: LengthRewardConfig::default(),
            reward_offset: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.grpo.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(SimError::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.group_size < 2 {
            return Err(SimError::Config("group size must be at least 2".into()));
        }
        if self.inner_updates == 0 {
            return Err(SimError::Config("inner_updates must be at least 1".into()));
        }
        if self.length.min_tokens >= self.length.max_tokens {
            return Err(SimError::Config("think length bounds need min < max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub scenario: String,
    pub mean_total: f64,
    pub std_total: f64,
    pub mean_cond: f64,
    pub mean_fmt: f64,
    pub mean_len: f64,
    pub objective: f64,
    /// Mean answer similarity over outputs where gold and sample both answer.
    pub mean_sem: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    /// Mean `r_total` over the last `window` steps.
    pub fn final_window_mean(&self, window: usize) -> Option<f64> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let tail = &self.records[n.saturating_sub(window)..];
        Some(tail.iter().map(|r| r.mean_total).sum::<f64>() / tail.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub history: TrainHistory,
    pub policy: FactoredPolicy,
}

fn step_record(step: usize, scenario: &Scenario, rollout: &Rollout, objective: f64) -> StepRecord {
    let n = rollout.samples.len() as f64;
    let mean = |f: &dyn Fn(&RewardBreakdown) -> f64| {
        rollout.samples.iter().map(|s| f(&s.reward)).sum::<f64>() / n
    };
    let mean_total = mean(&|r| r.r_total);
    let var = rollout
        .samples
        .iter()
        .map(|s| (s.reward.r_total - mean_total).powi(2))
        .sum::<f64>()
        / n;
    let sems: Vec<f64> = rollout.samples.iter().filter_map(|s| s.reward.s_sem).collect();
    StepRecord {
        step,
        scenario: scenario.id.clone(),
        mean_total,
        std_total: var.sqrt(),
        mean_cond: mean(&|r| r.r_cond),
        mean_fmt: mean(&|r| r.r_fmt),
        mean_len: mean(&|r| r.r_len),
        objective,
        mean_sem: (!sems.is_empty()).then(|| sems.iter().sum::<f64>() / sems.len() as f64),
    }
}

/// Train from the uniform policy.
pub fn train(env: &[Scenario], cfg: &TrainConfig) -> Result<TrainResult, SimError> {
    train_from(env, FactoredPolicy::uniform(env), cfg)
}

/// Round-robin GRPO training. The initial policy doubles as the KL
/// reference.
pub fn train_from(
    env: &[Scenario],
    initial: FactoredPolicy,
    cfg: &TrainConfig,
) -> Result<TrainResult, SimError> {
    cfg.validate()?;
    if env.is_empty() {
        return Err(SimError::Config("environment has no scenarios".into()));
    }
    for s in env {
        s.validate()?;
    }
    if initial.scenarios.len() != env.len() {
        return Err(SimError::Config("policy does not match environment".into()));
    }
    let reference = (cfg.grpo.beta > 0.0).then(|| initial.clone());
    let mut policy = initial;
    let mut history = TrainHistory::default();

    for step in 0..cfg.steps {
        let idx = step % env.len();
        let scenario = &env[idx];
        let old = policy.scenarios[idx].clone();
        let ro = rollout(&old, scenario, cfg.group_size, split_seed(cfg.seed, step as u64), &cfg.length)?;
        if ro.samples.iter().any(|s| s.reward.r_fmt != 1.0) {
            return Err(SimError::FormatInvariant { step });
        }

        let mut objective = f64::NAN;
        for k in 0..cfg.inner_updates {
            let current = &policy.scenarios[idx];
            let (out, grad) = surrogate_gradient(
                current,
                &ro,
                reference.as_ref().map(|r| &r.scenarios[idx]),
                cfg.reward_offset,
                &cfg.grpo,
            )?;
            if k == 0 {
                objective = out.objective;
            }
            policy.scenarios[idx].ascend(&grad, cfg.learning_rate);
            if !policy.scenarios[idx].is_finite() {
                return Err(SimError::Divergence {
                    step,
                    scenario: scenario.id.clone(),
                });
            }
        }
        history.records.push(step_record(step, scenario, &ro, objective));
    }
    Ok(TrainResult { history, policy })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    /// Parameters whose gradient magnitude exceeded the comparison floor.
    pub checked: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_FLOOR: f64 = 1e-8;

/// Analytic vs central-difference gradient with `policy` as current, old
/// and (when `beta > 0`) reference policy.
pub fn gradient_check(
    policy: &ScenarioPolicy,
    scenario: &Scenario,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GradientCheck, SimError> {
    let reference = (cfg.grpo.beta > 0.0).then_some(policy);
    gradient_check_at(policy, policy, reference, scenario, cfg, seed)
}

/// Gradient check at an arbitrary `current` policy for a rollout sampled
/// from `old`. Sampled outputs are held fixed across perturbations.
pub fn gradient_check_at(
    current: &ScenarioPolicy,
    old: &ScenarioPolicy,
    reference: Option<&ScenarioPolicy>,
    scenario: &Scenario,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GradientCheck, SimError> {
    let ro = rollout(old, scenario, cfg.group_size, seed, &cfg.length)?;
    gradient_check_rollout(current, &ro, reference, &cfg.grpo)
}

/// Gradient check on a given rollout.
pub fn gradient_check_rollout(
    current: &ScenarioPolicy,
    ro: &Rollout,
    reference: Option<&ScenarioPolicy>,
    cfg: &GrpoConfig,
) -> Result<GradientCheck, SimError> {
    let (_, grad) = surrogate_gradient(current, ro, reference, 0.0, cfg)?;
    let analytic = grad.flatten();

    let objective_at = |p: &ScenarioPolicy| -> Result<f64, SimError> {
        Ok(surrogate_gradient(p, ro, reference, 0.0, cfg)?.0.objective)
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = current.clone();
    for i in 0..analytic.len() {
        let base = *probe.param_mut(i);
        *probe.param_mut(i) = base + FD_STEP;
        let up = objective_at(&probe)?;
        *probe.param_mut(i) = base - FD_STEP;
        let down = objective_at(&probe)?;
        *probe.param_mut(i) = base;
        numeric.push((up - down) / (2.0 * FD_STEP));
    }

    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    for (a, n) in analytic.iter().zip(&numeric) {
        let scale = a.abs().max(n.abs());
        if scale > GRAD_FLOOR {
            checked += 1;
            max_rel_error = max_rel_error.max((a - n).abs() / scale);
        }
    }
    Ok(GradientCheck {
        max_rel_error,
        checked,
        analytic,
        numeric,
    })
}

pub const CURVE_HEADER: [&str; 7] = [
    "step",
    "mean_total",
    "std_total",
    "mean_cond",
    "mean_fmt",
    "mean_len",
    "objective",
];

pub fn write_curves<W: Write>(history: &TrainHistory, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CURVE_HEADER)?;
    for r in &history.records {
        out.write_record([
            r.step.to_string(),
            r.mean_total.to_string(),
            r.std_total.to_string(),
            r.mean_cond.to_string(),
            r.mean_fmt.to_string(),
            r.mean_len.to_string(),
            r.objective.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Write the reward curves as CSV, atomically.
pub fn emit_curves(history: &TrainHistory, path: &Path) -> Result<(), SimError> {
    Ok(io::write_atomic(path, |w| {
        write_curves(history, w).map_err(std::io::Error::other)
    })?)
}

fn tool_scenario(id: &str, tool: &str, args: &[(&str, &str)]) -> (String, AgentAction) {
    let args: Arguments = args
        .iter()
        .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
        .collect();
    (id.to_string(), AgentAction::tool(ToolCall::new(tool, args)))
}

/// Built-in environments: `small` (5 scenarios, 3 tools, 2 slots,
/// 4 answers) and `single` (one tool, no slots).
pub fn preset(name: &str) -> Option<Vec<Scenario>> {
    match name {
        "small" => {
            let tools: Vec<String> = ["get_order_details", "cancel_order", "track_shipment"]
                .map(String::from)
                .to_vec();
            let slots: BTreeMap<String, Vec<Value>> = [
                ("order_id", ["W1001", "W1002", "W1003"]),
                ("user_id", ["U17", "U42", "U99"]),
            ]
            .into_iter()
            .map(|(k, vs)| (k.to_string(), vs.iter().map(|v| Value::String(v.to_string())).collect()))
            .collect();
            let answers: Vec<String> = [
                "your order has shipped and will arrive tomorrow",
                "the refund was issued to your original payment method",
                "could you share your order id so i can look it up",
                "your order was cancelled successfully",
            ]
            .map(String::from)
            .to_vec();
            let golds = vec![
                tool_scenario("lookup", "get_order_details", &[("order_id", "W1002"), ("user_id", "U42")]),
                tool_scenario("cancel", "cancel_order", &[("order_id", "W1003")]),
                tool_scenario("track", "track_shipment", &[("order_id", "W1001"), ("user_id", "U17")]),
                ("ask_id".to_string(), AgentAction::answer(answers[2].clone())),
                ("refund".to_string(), AgentAction::answer(answers[1].clone())),
            ];
            Some(
                golds
                    .into_iter()
                    .map(|(id, gold)| Scenario {
                        id,
                        gold,
                        tool_vocabulary: tools.clone(),
                        slot_vocabulary: slots.clone(),
                        answer_vocabulary: answers.clone(),
                    })
                    .collect(),
            )
        }
        "single" => Some(vec![Scenario {
            id: "ping".into(),
            gold: AgentAction::tool(ToolCall::new("ping", Arguments::new())),
            tool_vocabulary: vec!["ping".into()],
            slot_vocabulary: BTreeMap::new(),
            answer_vocabulary: vec!["pong".into()],
        }]),
        _ => None,
    }
}

pub const PRESETS: [&str; 2] = ["small", "single"];

/// Human-readable argmax summary of a trained policy.
pub fn policy_summary(env: &[Scenario], policy: &FactoredPolicy) -> String {
    let argmax = |p: &[f64]| {
        p.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
    };
    let mut out = String::new();
    for (s, p) in env.iter().zip(&policy.scenarios) {
        let decision = p.probabilities(DECISION);
        let (li, lp) = argmax(&p.probabilities(LENGTH));
        let action = if decision[DECIDE_TOOL] >= decision[DECIDE_ANSWER] {
            let (ti, tp) = argmax(&p.probabilities(TOOL));
            let mut parts = vec![format!("tool {} ({tp:.3})", s.tool_vocabulary[ti])];
            for (k, (slot, cands)) in s.slot_vocabulary.iter().enumerate() {
                let (ci, cp) = argmax(&p.probabilities(FIRST_SLOT + k));
                let v = cands.get(ci).map_or("<omit>".to_string(), Value::to_string);
                parts.push(format!("{slot}={v} ({cp:.3})"));
            }
            format!("P(tool)={:.3} {}", decision[DECIDE_TOOL], parts.join(" "))
        } else {
            let (ai, ap) = argmax(&p.probabilities(ANSWER));
            format!(
                "P(answer)={:.3} answer {:?} ({ap:.3})",
                decision[DECIDE_ANSWER], s.answer_vocabulary[ai]
            )
        };
        out.push_str(&format!("{}: {action} think-bucket {li} ({lp:.3})\n", s.id));
    }
    out
}

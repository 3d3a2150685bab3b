//! GRPO objective over caller-supplied log-probabilities.
//!
//! For a group of `G` outputs sampled from the old policy, each output gets
//! the standardized advantage `(r_i - mean) / std` (population std), and the
//! objective to maximize is
//!
//! ```text
//! J = 1/G sum_i 1/|o_i| sum_t [ min(ratio_t A_i, clip(ratio_t, 1-eps, 1+eps) A_i) - beta kl_t ]
//! ratio_t = exp(new_t - old_t)
//! kl_t    = exp(ref_t - new_t) - (ref_t - new_t) - 1
//! ```
//!
//! Nothing here produces log-probs; the module only consumes them and
//! returns the objective together with its exact partial derivatives with
//! respect to every `new_t`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("group needs at least 2 outputs, got {0}")]
    GroupTooSmall(usize),
    #[error("output {output}: {what} has {got} tokens, expected {expected}")]
    LengthMismatch {
        output: usize,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sequence lengths differ: {left} vs {right}")]
    SequenceMismatch { left: usize, right: usize },
    #[error("output {0} has no tokens")]
    EmptyOutput(usize),
    #[error("beta > 0 but output {0} has no reference log-probs")]
    MissingReference(usize),
    #[error("log-prob {0} is not a finite value <= 0")]
    InvalidLogProb(f64),
    #[error("reward {0} is not finite")]
    InvalidReward(f64),
    #[error("invalid GRPO config: {0}")]
    InvalidConfig(String),
}

/// Per-token log-probabilities of generated tokens under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TokenLogProbs(Vec<f64>);

impl TokenLogProbs {
    pub fn new(values: Vec<f64>) -> Result<Self, GrpoError> {
        if let Some(&bad) = values.iter().find(|v| !(v.is_finite() && **v <= 0.0)) {
            return Err(GrpoError::InvalidLogProb(bad));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for TokenLogProbs {
    type Error = GrpoError;
    fn try_from(v: Vec<f64>) -> Result<Self, GrpoError> {
        Self::new(v)
    }
}

impl From<TokenLogProbs> for Vec<f64> {
    fn from(t: TokenLogProbs) -> Self {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutput {
    pub new: TokenLogProbs,
    pub old: TokenLogProbs,
    pub reference: Option<TokenLogProbs>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub outputs: Vec<RolloutOutput>,
}

impl RolloutGroup {
    pub fn new(outputs: Vec<RolloutOutput>) -> Self {
        Self { outputs }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o.reward).collect()
    }

    pub fn validate(&self, needs_reference: bool) -> Result<(), GrpoError> {
        if self.outputs.len() < 2 {
            return Err(GrpoError::GroupTooSmall(self.outputs.len()));
        }
        for (i, o) in self.outputs.iter().enumerate() {
            if o.new.is_empty() {
                return Err(GrpoError::EmptyOutput(i));
            }
            if !o.reward.is_finite() {
                return Err(GrpoError::InvalidReward(o.reward));
            }
            let expected = o.new.len();
            if o.old.len() != expected {
                return Err(GrpoError::LengthMismatch {
                    output: i,
                    what: "old",
                    expected,
                    got: o.old.len(),
                });
            }
            match &o.reference {
                Some(r) if r.len() != expected => {
                    return Err(GrpoError::LengthMismatch {
                        output: i,
                        what: "reference",
                        expected,
                        got: r.len(),
                    })
                }
                None if needs_reference => return Err(GrpoError::MissingReference(i)),
                _ => {}
            }
        }
        Ok(())
    }
}

/// What to do when every reward in a group is identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroStdPolicy {
    #[default]
    ZeroAdvantages,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub zero_std_policy: ZeroStdPolicy,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.0,
            zero_std_policy: ZeroStdPolicy::ZeroAdvantages,
        }
    }
}

impl GrpoConfig {
    pub fn new(epsilon: f64, beta: f64) -> Result<Self, GrpoError> {
        let cfg = Self {
            epsilon,
            beta,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(GrpoError::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(GrpoError::InvalidConfig(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Group-standardized advantages with population standard deviation.
/// A group whose rewards are all identical gets all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if let Some(&bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(GrpoError::InvalidReward(bad));
    }
    // Exact tie check: a float mean of equal values can be off by an ulp.
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

fn check_same_len(a: &TokenLogProbs, b: &TokenLogProbs) -> Result<(), GrpoError> {
    if a.len() != b.len() {
        return Err(GrpoError::SequenceMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Importance ratios `exp(new_t - old_t)`.
pub fn token_ratios(new: &TokenLogProbs, old: &TokenLogProbs) -> Result<Vec<f64>, GrpoError> {
    check_same_len(new, old)?;
    Ok(new
        .as_slice()
        .iter()
        .zip(old.as_slice())
        .map(|(n, o)| (n - o).exp())
        .collect())
}

fn kl_term(new: f64, reference: f64) -> f64 {
    let d = reference - new;
    d.exp() - d - 1.0
}

/// Non-negative per-token KL estimator `exp(d) - d - 1`, `d = ref - new`.
pub fn kl_estimate(new: &TokenLogProbs, reference: &TokenLogProbs) -> Result<Vec<f64>, GrpoError> {
    check_same_len(new, reference)?;
    Ok(new
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(&n, &r)| kl_term(n, r))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDiagnostics {
    pub ratio: f64,
    /// The clipped product won the min, so the token carries no gradient
    /// through the ratio.
    pub clipped: bool,
    pub kl: f64,
    /// `min(...) - beta * kl` before the 1/(G |o_i|) weighting.
    pub term: f64,
    /// d objective / d new_t, weighting included.
    pub grad_new: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateOutput {
    /// Value to maximize.
    pub objective: f64,
    pub advantages: Vec<f64>,
    pub tokens: Vec<Vec<TokenDiagnostics>>,
}

impl SurrogateOutput {
    pub fn loss(&self) -> f64 {
        -self.objective
    }

    pub fn clip_fraction(&self) -> f64 {
        let (clipped, total) = self.tokens.iter().flatten().fold((0usize, 0usize), |(c, t), d| {
            (c + usize::from(d.clipped), t + 1)
        });
        if total == 0 {
            0.0
        } else {
            clipped as f64 / total as f64
        }
    }

    /// Gradient of the objective per output, token-aligned.
    pub fn grad_new(&self) -> Vec<Vec<f64>> {
        self.tokens
            .iter()
            .map(|ts| ts.iter().map(|d| d.grad_new).collect())
            .collect()
    }
}

/// Clipped surrogate objective with optional KL penalty.
pub fn clipped_surrogate(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<SurrogateOutput, GrpoError> {
    cfg.validate()?;
    group.validate(cfg.beta > 0.0)?;
    let advantages = group_advantages(&group.rewards())?;
    let g = group.outputs.len() as f64;
    let (lo, hi) = (1.0 - cfg.epsilon, 1.0 + cfg.epsilon);

    let mut objective = 0.0;
    let mut tokens = Vec::with_capacity(group.outputs.len());
    for (out, &adv) in group.outputs.iter().zip(&advantages) {
        let weight = 1.0 / (g * out.new.len() as f64);
        let ratios = token_ratios(&out.new, &out.old)?;
        let mut per_token = Vec::with_capacity(ratios.len());
        let mut sum = 0.0;
        for (t, &ratio) in ratios.iter().enumerate() {
            let unclipped = ratio * adv;
            let clipped_val = ratio.clamp(lo, hi) * adv;
            let clipped = clipped_val < unclipped;
            let surrogate = if clipped { clipped_val } else { unclipped };
            let mut grad = if clipped { 0.0 } else { ratio * adv };

            let mut kl = 0.0;
            if let Some(reference) = &out.reference {
                let new_t = out.new.as_slice()[t];
                let ref_t = reference.as_slice()[t];
                kl = kl_term(new_t, ref_t);
                // d kl / d new = 1 - exp(ref - new)
                grad -= cfg.beta * (1.0 - (ref_t - new_t).exp());
            }
            let term = surrogate - cfg.beta * kl;
            sum += term;
            per_token.push(TokenDiagnostics {
                ratio,
                clipped,
                kl,
                term,
                grad_new: weight * grad,
            });
        }
        objective += weight * sum;
        tokens.push(per_token);
    }

    Ok(SurrogateOutput {
        objective,
        advantages,
        tokens,
    })
}

//! Reward shaping, GRPO objective and evaluation tooling for tool-calling
//! agents that emit `<think>` / `<tool_call>` / `<answer>` formatted text.

pub mod agent_output;
pub mod dataset;
pub mod grpo;
pub mod io;
pub mod metrics;
pub mod rewards;
pub mod similarity;
pub mod simulator;

pub use agent_output::{parse_output, render_output, AgentAction, FormatCheck, ParsedOutput, ToolCall};
pub use grpo::{clipped_surrogate, group_advantages, GrpoConfig, RolloutGroup, RolloutOutput};
pub use rewards::{total_reward, LengthRewardConfig, RewardBreakdown};
pub use similarity::{LexicalScorer, MemoScorer, RemoteConfig, RemoteScorer, SimilarityScorer};

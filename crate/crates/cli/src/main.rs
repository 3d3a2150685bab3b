use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agent_sim_core::agent_output::{parse_output, AgentAction, Diagnostic};
use agent_sim_core::dataset::{
    assemble_prompt, decompose_all, load_conversations, load_predictions, load_samples,
    write_samples, Prediction, TurnSample,
};
use agent_sim_core::grpo::GrpoConfig;
use agent_sim_core::io::write_jsonl;
use agent_sim_core::metrics::{aggregate, evaluate_turn, TurnResult};
use agent_sim_core::rewards::{format_reward, total_reward, LengthRewardConfig, RewardBreakdown};
use agent_sim_core::similarity::{
    LexicalScorer, MemoScorer, RemoteConfig, RemoteScorer, SimilarityScorer, ENDPOINT_ENV,
};
use agent_sim_core::simulator::{self, emit_curves, policy_summary, train, TrainConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "agent-sim", version)]
#[command(about = "Score, evaluate and simulate GRPO training for tool-calling agents")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScorerKind {
    Lexical,
    Remote,
}

#[derive(Args)]
struct Common {
    /// Answer similarity backend
    #[arg(long, value_enum, default_value = "lexical", global = true)]
    scorer: ScorerKind,

    /// Base URL of the remote scoring service
    #[arg(long, env = ENDPOINT_ENV, global = true)]
    endpoint: Option<String>,

    /// Think blocks with at most this many tokens earn no length reward
    #[arg(long, default_value_t = 14, global = true)]
    min_think: usize,

    /// Think blocks above this many tokens earn half the length reward
    #[arg(long, default_value_t = 100, global = true)]
    max_think: usize,

    #[arg(long, default_value_t = 0.2, global = true)]
    epsilon: f64,

    #[arg(long, default_value_t = 0.0, global = true)]
    beta: f64,

    #[arg(long, default_value_t = 8, global = true)]
    group_size: usize,

    #[arg(long, default_value_t = 7, global = true)]
    seed: u64,

    /// Worker threads for per-record scoring
    #[arg(long, default_value_t = 4, global = true)]
    workers: usize,

    /// Output file (JSONL, or CSV for `simulate`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute reward breakdowns for predictions joined against samples
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Aggregate action, tool and answer metrics
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Split conversations into per-turn samples
    Decompose {
        #[arg(long)]
        conversations: PathBuf,
        /// Also write the assembled prompt for every sample
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Train the tabular policy on a scenario set and emit reward curves
    Simulate {
        /// Built-in environment
        #[arg(long, conflicts_with = "scenarios")]
        preset: Option<String>,
        /// Scenario JSONL file
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long)]
        lr: Option<f64>,
        /// Gradient steps per rollout
        #[arg(long, default_value_t = 1)]
        inner_updates: usize,
        /// Steps averaged for the final reward report
        #[arg(long, default_value_t = 50)]
        window: usize,
    },
    /// Report format flags for each raw output line
    CheckFormat {
        /// One output per line, either raw text or a JSON object with `raw_output`
        input: PathBuf,
    },
}

impl Common {
    fn length(&self) -> Result<LengthRewardConfig> {
        Ok(LengthRewardConfig::new(self.min_think, self.max_think)?)
    }

    fn grpo(&self) -> Result<GrpoConfig> {
        Ok(GrpoConfig::new(self.epsilon, self.beta)?)
    }

    fn validate(&self) -> Result<()> {
        self.length()?;
        self.grpo()?;
        if self.group_size < 2 {
            bail!("--group-size must be at least 2");
        }
        if self.workers == 0 {
            bail!("--workers must be at least 1");
        }
        Ok(())
    }

    fn scorer(&self) -> Result<MemoScorer<Box<dyn SimilarityScorer>>> {
        let inner: Box<dyn SimilarityScorer> = match self.scorer {
            ScorerKind::Lexical => Box::new(LexicalScorer),
            ScorerKind::Remote => {
                let Some(endpoint) = self.endpoint.as_deref().filter(|e| !e.trim().is_empty()) else {
                    bail!("--scorer remote needs --endpoint or {ENDPOINT_ENV}");
                };
                let mut cfg = RemoteConfig::new(endpoint.trim());
                cfg.max_in_flight = self.workers;
                Box::new(RemoteScorer::new(cfg)?)
            }
        };
        Ok(MemoScorer::new(inner))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()?)
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("{}: no such file", path.display());
    }
    Ok(())
}

struct Joined<'a> {
    pairs: Vec<(&'a Prediction, &'a TurnSample)>,
    unmatched: Vec<&'a Prediction>,
}

fn join<'a>(preds: &'a [Prediction], samples: &'a [TurnSample]) -> Joined<'a> {
    let index: HashMap<(&str, usize), &TurnSample> = samples.iter().map(|s| (s.key(), s)).collect();
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for p in preds {
        match index.get(&(p.conversation_id.as_str(), p.turn_index)) {
            Some(s) => pairs.push((p, *s)),
            None => unmatched.push(p),
        }
    }
    for p in &unmatched {
        eprintln!(
            "warning: no sample for prediction ({}, {})",
            p.conversation_id, p.turn_index
        );
    }
    Joined { pairs, unmatched }
}

/// Score all answer/answer pairs in one batched call so remote scoring runs
/// at full concurrency before the per-record pass.
fn prefetch_answers(scorer: &MemoScorer<Box<dyn SimilarityScorer>>, pairs: &[(&Prediction, &TurnSample)]) -> Result<()> {
    let parsed: Vec<(String, &str)> = pairs
        .iter()
        .filter_map(|(p, s)| match (&s.ground_truth, parse_output(&p.raw_output).action) {
            (AgentAction::Answer { answer_text: g }, Some(AgentAction::Answer { answer_text })) => {
                Some((answer_text, g.as_str()))
            }
            _ => None,
        })
        .collect();
    let refs: Vec<(&str, &str)> = parsed.iter().map(|(p, g)| (p.as_str(), *g)).collect();
    scorer.prefetch(&refs)?;
    Ok(())
}

/// Write JSONL to `out`, or to stdout when no path is given.
fn emit_jsonl<T: Serialize>(out: Option<&Path>, records: &[T]) -> Result<()> {
    match out {
        Some(path) => write_jsonl(path, records)?,
        None => {
            let mut w = std::io::stdout().lock();
            for r in records {
                serde_json::to_writer(&mut w, r)?;
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RewardRecord<'a> {
    conversation_id: &'a str,
    turn_index: usize,
    #[serde(flatten)]
    reward: RewardBreakdown,
}

#[derive(Default)]
struct Stat {
    sum: f64,
    min: f64,
    max: f64,
}

impl Stat {
    fn line(name: &str, values: impl Iterator<Item = f64>) -> String {
        let mut n = 0usize;
        let mut s = Stat {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            ..Stat::default()
        };
        for v in values {
            n += 1;
            s.sum += v;
            s.min = s.min.min(v);
            s.max = s.max.max(v);
        }
        if n == 0 {
            return format!("{name:<8} mean=- min=- max=-");
        }
        format!(
            "{name:<8} mean={:.4} min={:.4} max={:.4}",
            s.sum / n as f64,
            s.min,
            s.max
        )
    }
}

fn cmd_score(common: &Common, predictions: &Path, samples: &Path) -> Result<()> {
    let length = common.length()?;
    let scorer = common.scorer()?;
    require_file(predictions)?;
    require_file(samples)?;
    let pool = common.pool()?;

    let samples = load_samples(samples)?;
    let preds = load_predictions(predictions)?;
    let joined = join(&preds, &samples);
    prefetch_answers(&scorer, &joined.pairs)?;

    let records = pool.install(|| {
        joined
            .pairs
            .par_iter()
            .map(|(p, s)| {
                let reward = total_reward(&p.raw_output, &s.ground_truth, &scorer, &length)?;
                Ok(RewardRecord {
                    conversation_id: &p.conversation_id,
                    turn_index: p.turn_index,
                    reward,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    emit_jsonl(common.out.as_deref(), &records)?;

    let summary = [
        format!("scored {} (unmatched {})", records.len(), joined.unmatched.len()),
        Stat::line("r_cond", records.iter().map(|r| r.reward.r_cond)),
        Stat::line("r_fmt", records.iter().map(|r| r.reward.r_fmt)),
        Stat::line("r_len", records.iter().map(|r| r.reward.r_len)),
        Stat::line("r_total", records.iter().map(|r| r.reward.r_total)),
    ]
    .join("\n");
    // keep stdout clean for the records when they go there
    if common.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn cmd_eval(common: &Common, predictions: &Path, samples: &Path) -> Result<()> {
    let scorer = common.scorer()?;
    require_file(predictions)?;
    require_file(samples)?;
    let pool = common.pool()?;

    let samples = load_samples(samples)?;
    let preds = load_predictions(predictions)?;
    let joined = join(&preds, &samples);
    prefetch_answers(&scorer, &joined.pairs)?;

    let results = pool.install(|| {
        joined
            .pairs
            .par_iter()
            .map(|(p, s)| Ok(evaluate_turn(&s.ground_truth, &p.raw_output, &scorer)?))
            .collect::<Result<Vec<TurnResult>>>()
    })?;
    let report = aggregate(&results)?;
    println!("{}", report.render_table());
    if !joined.unmatched.is_empty() {
        println!("unmatched predictions: {}", joined.unmatched.len());
    }
    if let Some(path) = &common.out {
        write_jsonl(path, std::slice::from_ref(&report))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PromptRecord<'a> {
    conversation_id: &'a str,
    turn_index: usize,
    prompt: String,
}

fn cmd_decompose(common: &Common, conversations: &Path, prompts: Option<&Path>) -> Result<()> {
    require_file(conversations)?;
    let Some(out) = &common.out else {
        bail!("decompose needs --out");
    };
    let convs = load_conversations(conversations)?;
    let samples = decompose_all(&convs)?;
    write_samples(out, &samples)?;
    if let Some(path) = prompts {
        let records: Vec<PromptRecord> = samples
            .iter()
            .map(|s| PromptRecord {
                conversation_id: &s.conversation_id,
                turn_index: s.turn_index,
                prompt: assemble_prompt(s),
            })
            .collect();
        write_jsonl(path, &records)?;
    }
    println!("{} samples from {} conversations", samples.len(), convs.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    common: &Common,
    preset: Option<&str>,
    scenarios: Option<&Path>,
    steps: usize,
    lr: Option<f64>,
    inner_updates: usize,
    window: usize,
) -> Result<()> {
    let env = match (preset, scenarios) {
        (Some(name), None) => simulator::preset(name).with_context(|| {
            format!("unknown preset {name:?} (known: {})", simulator::PRESETS.join(", "))
        })?,
        (None, Some(path)) => {
            require_file(path)?;
            simulator::load_scenarios(path)?
        }
        (None, None) => simulator::preset("small").expect("built-in preset"),
        (Some(_), Some(_)) => bail!("--preset and --scenarios are exclusive"),
    };
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        grpo: common.grpo()?,
        learning_rate: lr.unwrap_or(defaults.learning_rate),
        steps,
        group_size: common.group_size,
        seed: common.seed,
        inner_updates,
        length: common.length()?,
        reward_offset: 0.0,
    };
    cfg.validate()?;

    let result = train(&env, &cfg)?;
    if let Some(path) = &common.out {
        emit_curves(&result.history, path)?;
    }
    match result.history.final_window_mean(window) {
        Some(m) => println!("final {window}-step mean r_total: {m:.4}"),
        None => println!("no steps run"),
    }
    print!("{}", policy_summary(&env, &result.policy));
    Ok(())
}

#[derive(Serialize)]
struct FormatRecord {
    line: usize,
    has_think: bool,
    has_action: bool,
    correct_order: bool,
    r_fmt: f64,
    diagnostics: Vec<Diagnostic>,
}

fn raw_text(line: &str) -> String {
    match serde_json::from_str::<serde_json::Value>(line) {
        Ok(serde_json::Value::Object(obj)) => match obj.get("raw_output") {
            Some(serde_json::Value::String(s)) => s.clone(),
            _ => line.to_string(),
        },
        _ => line.to_string(),
    }
}

fn cmd_check_format(common: &Common, input: &Path) -> Result<()> {
    require_file(input)?;
    let text = std::fs::read_to_string(input).with_context(|| input.display().to_string())?;
    let records: Vec<FormatRecord> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let parsed = parse_output(&raw_text(l));
            FormatRecord {
                line: i + 1,
                has_think: parsed.format.has_think,
                has_action: parsed.format.has_action,
                correct_order: parsed.format.correct_order,
                r_fmt: format_reward(&parsed.format),
                diagnostics: parsed.diagnostics,
            }
        })
        .collect();
    emit_jsonl(common.out.as_deref(), &records)?;
    let ok = records.iter().filter(|r| r.r_fmt == 1.0).count();
    eprintln!("{ok}/{} outputs well formatted", records.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    common.validate()?;
    match &cli.command {
        Command::Score { predictions, samples } => cmd_score(common, predictions, samples),
        Command::Eval { predictions, samples } => cmd_eval(common, predictions, samples),
        Command::Decompose { conversations, prompts } => {
            cmd_decompose(common, conversations, prompts.as_deref())
        }
        Command::Simulate {
            preset,
            scenarios,
            steps,
            lr,
            inner_updates,
            window,
        } => cmd_simulate(
            common,
            preset.as_deref(),
            scenarios.as_deref(),
            *steps,
            *lr,
            *inner_updates,
            *window,
        ),
        Command::CheckFormat { input } => cmd_check_format(common, input),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs as a plain binary (`harness = false`).

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use agent_sim_core::agent_output::{check_format, parse_output, render_output, AgentAction, Arguments, ToolCall};
use agent_sim_core::dataset::{assemble_prompt, decompose_all, load_conversations, load_predictions};
use agent_sim_core::grpo::{group_advantages, GrpoConfig};
use agent_sim_core::metrics::{aggregate, EvalReport, TurnKind, TurnResult};
use agent_sim_core::rewards::{
    conditional_reward, length_reward, tool_match_score, total_reward, LengthRewardConfig,
};
use agent_sim_core::similarity::LexicalScorer;
use agent_sim_core::simulator::{self, gradient_check_at, ScenarioPolicy, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = Result<String, String>;
type Criterion = (&'static str, &'static str, Option<Duration>, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: got {a}, expected {b} (tol {tol:e})"))
}

fn tool(name: &str, args: Value) -> ToolCall {
    let Value::Object(map) = args else { panic!("arguments must be an object") };
    ToolCall::new(name, map)
}

fn think_of(n: usize) -> String {
    vec!["w"; n].join(" ")
}

// -- AC1 ---------------------------------------------------------------------

fn ac1() -> Check {
    let tol = 1e-9;
    let cfg = LengthRewardConfig::default();
    let gt = tool("get_order_details", json!({"order_id": "W123", "user_id": "U7"}));

    let perfect = conditional_reward(&AgentAction::tool(gt.clone()), Some(&AgentAction::tool(gt.clone())), &LexicalScorer)
        .map_err(|e| e.to_string())?;
    close(perfect.r_cond, 2.0, tol, "perfect match r_cond")?;

    let mismatch = conditional_reward(&AgentAction::tool(gt.clone()), Some(&AgentAction::answer("hi")), &LexicalScorer)
        .map_err(|e| e.to_string())?;
    close(mismatch.r_cond, -2.0, tol, "mismatch r_cond")?;
    let missing = conditional_reward(&AgentAction::tool(gt.clone()), None, &LexicalScorer).map_err(|e| e.to_string())?;
    close(missing.r_cond, -2.0, tol, "missing action r_cond")?;

    let pred = tool("get_order_details", json!({"order_id": "W123", "status": "open"}));
    let m = tool_match_score(&gt, &pred);
    close(m.s_name, 1.0, tol, "s_name")?;
    close(m.s_keys, 1.0 / 3.0, tol, "s_keys")?;
    close(m.s_vals, 0.5, tol, "s_vals")?;
    close(m.s_tool, 2.0 / 3.0, tol, "s_tool")?;
    let partial = conditional_reward(&AgentAction::tool(gt.clone()), Some(&AgentAction::tool(pred)), &LexicalScorer)
        .map_err(|e| e.to_string())?;
    close(partial.r_cond, 11.0 / 9.0, tol, "partial r_cond")?;

    let empty = tool_match_score(&tool("a", json!({})), &tool("b", json!({})));
    close(empty.s_tool, 1.0, tol, "empty-args s_tool")?;

    for (tokens, expected) in [(14, 0.0), (15, 1.0), (100, 1.0), (101, 0.5)] {
        let parsed = parse_output(&render_output(Some(&think_of(tokens)), &AgentAction::tool(gt.clone())));
        let r = length_reward(parsed.think.as_ref(), &cfg);
        close(r, expected, tol, &format!("length reward at {tokens} tokens"))?;
    }
    close(length_reward(None, &cfg), 0.0, tol, "no think")?;

    let raw = render_output(Some(&think_of(20)), &AgentAction::tool(gt.clone()));
    let b = total_reward(&raw, &AgentAction::tool(gt), &LexicalScorer, &cfg).map_err(|e| e.to_string())?;
    close(b.r_total, 4.0, tol, "perfect total")?;
    Ok("r_cond 2 / -2 / 11/9, s_tool 2/3, length 14,15,100,101 -> 0,1,1,0.5".into())
}

// -- AC2 ---------------------------------------------------------------------

const NAMES: [&str; 3] = ["lookup", "cancel", "track"];
const KEYS: [&str; 4] = ["id", "user", "date", "reason"];
const WORDS: [&str; 6] = ["refund", "issued", "order", "shipped", "today", "sorry"];

fn random_action(rng: &mut ChaCha8Rng) -> AgentAction {
    if rng.gen_bool(0.5) {
        let mut args = Arguments::new();
        for k in KEYS {
            if rng.gen_bool(0.5) {
                let v = match rng.gen_range(0..3) {
                    0 => json!(rng.gen_range(0..3)),
                    1 => json!(WORDS[rng.gen_range(0..WORDS.len())]),
                    _ => json!([rng.gen_range(0..2)]),
                };
                args.insert(k.to_string(), v);
            }
        }
        AgentAction::tool(ToolCall::new(NAMES[rng.gen_range(0..NAMES.len())], args))
    } else {
        let n = rng.gen_range(0..6);
        let text: Vec<&str> = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        AgentAction::answer(text.join(" "))
    }
}

fn ac2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = LengthRewardConfig::default();
    for i in 0..10_000 {
        let gt = random_action(&mut rng);
        let pred = random_action(&mut rng);
        let mut raw = render_output(Some(&think_of(rng.gen_range(0..130))), &pred);
        match rng.gen_range(0..4) {
            0 => raw = raw.replace("<think>", ""),
            1 => raw.truncate(rng.gen_range(0..=raw.len()).min(raw.len())),
            _ => {}
        }
        while !raw.is_char_boundary(raw.len()) {
            raw.pop();
        }
        let b = total_reward(&raw, &gt, &LexicalScorer, &cfg).map_err(|e| e.to_string())?;
        ensure((-2.0..=2.0).contains(&b.r_cond), || format!("pair {i}: r_cond {}", b.r_cond))?;
        ensure((-2.0..=4.0).contains(&b.r_total), || format!("pair {i}: r_total {}", b.r_total))?;
        if let (Some(g), Some(p)) = (gt.as_tool(), pred.as_tool()) {
            let s = tool_match_score(g, p).s_tool;
            ensure((-3.0..=3.0).contains(&s), || format!("pair {i}: s_tool {s}"))?;
        }
    }
    Ok("10000 pairs in range".into())
}

// -- AC3 ---------------------------------------------------------------------

/// Welford mean / population variance, independent of the library's two-pass form.
fn oracle_advantages(r: &[f64]) -> Vec<f64> {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, x) in r.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    let std = (m2 / r.len() as f64).sqrt();
    if r.iter().all(|x| *x == r[0]) {
        return vec![0.0; r.len()];
    }
    r.iter().map(|x| (x - mean) / std).collect()
}

fn ac3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut groups = 0;
    for _ in 0..2_000 {
        let g = rng.gen_range(2..=64);
        let rewards: Vec<f64> = (0..g).map(|_| rng.gen_range(-2.0..4.0)).collect();
        let got = group_advantages(&rewards).map_err(|e| e.to_string())?;
        for (a, b) in got.iter().zip(oracle_advantages(&rewards)) {
            close(*a, b, 1e-9, &format!("advantage (G={g})"))?;
        }
        let (scale, shift) = (rng.gen_range(0.5..2.0), rng.gen_range(-10.0..10.0));
        let moved: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
        for (a, b) in got.iter().zip(group_advantages(&moved).map_err(|e| e.to_string())?) {
            close(*a, b, 1e-9, &format!("affine shift (G={g})"))?;
        }
        let flat = vec![rng.gen_range(-2.0..4.0); g];
        let zeros = group_advantages(&flat).map_err(|e| e.to_string())?;
        ensure(zeros.iter().all(|a| *a == 0.0), || format!("zero-variance group (G={g}) gave {zeros:?}"))?;
        groups += 1;
    }
    Ok(format!("{groups} groups, G in [2, 64]"))
}

// -- AC4 ---------------------------------------------------------------------

fn ac4() -> Check {
    let mut env = simulator::preset("small").ok_or("missing preset")?;
    env.extend(simulator::preset("single").ok_or("missing preset")?);
    let mut worst: f64 = 0.0;
    let (mut clipped_cfgs, mut kl_cfgs) = (0, 0);
    for i in 0..20u64 {
        let s = &env[i as usize % env.len()];
        let beta = [0.0, 0.04, 0.1, 0.5][i as usize % 4];
        let epsilon = [0.2, 0.1, 0.3][i as usize % 3];
        let cfg = TrainConfig {
            grpo: GrpoConfig::new(epsilon, beta).map_err(|e| e.to_string())?,
            group_size: 8 + (i as usize % 3) * 4,
            ..TrainConfig::default()
        };
        let old = ScenarioPolicy::random(s, 1.0, 100 + i);
        // half the configurations move the current policy well away from the
        // sampling policy so the clip is active on many tokens
        let current = if i % 2 == 0 {
            ScenarioPolicy::random(s, 1.5, 200 + i)
        } else {
            let mut p = old.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(300 + i);
            for v in p.tables.iter_mut().flatten() {
                *v += rng.gen_range(-0.05..0.05);
            }
            p
        };
        let reference = (beta > 0.0).then(|| ScenarioPolicy::random(s, 1.0, 400 + i));
        let ro = simulator::rollout(&old, s, cfg.group_size, 500 + i, &cfg.length).map_err(|e| e.to_string())?;
        let (out, _) = simulator::surrogate_gradient(&current, &ro, reference.as_ref(), 0.0, &cfg.grpo)
            .map_err(|e| e.to_string())?;
        if out.clip_fraction() > 0.0 {
            clipped_cfgs += 1;
        }
        if beta > 0.0 {
            kl_cfgs += 1;
        }
        let gc = gradient_check_at(&current, &old, reference.as_ref(), s, &cfg, 500 + i).map_err(|e| e.to_string())?;
        ensure(gc.max_rel_error <= 1e-4, || format!("config {i} ({}): max rel error {:e}", s.id, gc.max_rel_error))?;
        worst = worst.max(gc.max_rel_error);
    }
    ensure(clipped_cfgs > 0, || "no configuration exercised clipping".into())?;
    ensure(kl_cfgs > 0, || "no configuration had beta > 0".into())?;
    Ok(format!("20 configs ({clipped_cfgs} clipping, {kl_cfgs} with KL), max rel error {worst:.2e}"))
}

// -- AC5 ---------------------------------------------------------------------

fn ac5() -> Check {
    let env = simulator::preset("small").ok_or("missing preset")?;
    let cfg = TrainConfig {
        group_size: 8,
        seed: 7,
        steps: 500,
        grpo: GrpoConfig::new(0.2, 0.0).map_err(|e| e.to_string())?,
        ..TrainConfig::default()
    };
    let res = simulator::train(&env, &cfg).map_err(|e| e.to_string())?;
    ensure(res.history.records.len() == 500, || "expected 500 records".into())?;
    if let Some(r) = res.history.records.iter().find(|r| r.mean_fmt != 1.0) {
        return Err(format!("format reward {} at step {}", r.mean_fmt, r.step));
    }
    let m = res.history.final_window_mean(50).ok_or("empty history")?;
    ensure(m >= 3.5, || format!("final 50-step mean r_total {m:.4} < 3.5"))?;
    Ok(format!("final 50-step mean r_total {m:.4}, r_fmt = 1 at all 500 steps"))
}

// -- AC6 ---------------------------------------------------------------------

struct Brute {
    counts: [[usize; 3]; 2],
}

const KINDS: [TurnKind; 3] = [TurnKind::Tool, TurnKind::Answer, TurnKind::Invalid];

fn brute_check(results: &[TurnResult], rep: &EvalReport) -> Result<(), String> {
    let mut b = Brute { counts: [[0; 3]; 2] };
    for (gi, g) in KINDS[..2].iter().enumerate() {
        for (pi, p) in KINDS.iter().enumerate() {
            b.counts[gi][pi] = results.iter().filter(|r| r.gt_kind == *g && r.pred_kind == *p).count();
        }
    }
    let c = &rep.confusion;
    let got = [
        [c.tool_tool, c.tool_answer, c.tool_invalid],
        [c.answer_tool, c.answer_answer, c.answer_invalid],
    ];
    ensure(got == b.counts, || format!("confusion {got:?} vs {:?}", b.counts))?;

    let div = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    let row = |g: usize| b.counts[g].iter().sum::<usize>();
    let col = |p: usize| b.counts[0][p] + b.counts[1][p];
    let tool_r = div(b.counts[0][0], row(0));
    let tool_p = div(b.counts[0][0], col(0));
    let ans_r = div(b.counts[1][1], row(1));
    let ans_p = div(b.counts[1][1], col(1));
    let f1 = |p: Option<f64>, r: Option<f64>| match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    let macro_r = match (tool_r, ans_r) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        (a, b) => a.or(b),
    };
    let both_tool: Vec<&TurnResult> = results
        .iter()
        .filter(|r| r.gt_kind == TurnKind::Tool && r.pred_kind == TurnKind::Tool)
        .collect();
    let name_acc = div(both_tool.iter().filter(|r| r.name_match == Some(true)).count(), both_tool.len());
    let args_em = div(both_tool.iter().filter(|r| r.args_exact == Some(true)).count(), both_tool.len());
    let sims: Vec<f64> = results.iter().filter_map(|r| r.answer_sim).collect();
    let sim_mean = (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64);

    let expect = [
        ("tool_recall", rep.tool_recall, tool_r),
        ("tool_precision", rep.tool_precision, tool_p),
        ("tool_f1", rep.tool_f1, f1(tool_p, tool_r)),
        ("answer_recall", rep.answer_recall, ans_r),
        ("answer_precision", rep.answer_precision, ans_p),
        ("answer_f1", rep.answer_f1, f1(ans_p, ans_r)),
        ("macro", rep.action_recall_macro, macro_r),
        ("micro", Some(rep.action_recall_micro), div(b.counts[0][0] + b.counts[1][1], results.len())),
        ("name_accuracy", rep.tool_name_accuracy, name_acc),
        ("args_em", rep.tool_args_em, args_em),
        ("similarity", rep.answer_similarity_mean, sim_mean),
    ];
    for (name, got, want) in expect {
        ensure(got == want, || format!("{name}: {got:?} vs brute force {want:?}"))?;
    }
    Ok(())
}

fn random_turn(rng: &mut ChaCha8Rng) -> TurnResult {
    let gt = KINDS[rng.gen_range(0..2)];
    let pred = KINDS[rng.gen_range(0..3)];
    let both_tool = gt == TurnKind::Tool && pred == TurnKind::Tool;
    let both_answer = gt == TurnKind::Answer && pred == TurnKind::Answer;
    TurnResult {
        gt_kind: gt,
        pred_kind: pred,
        name_match: both_tool.then(|| rng.gen_bool(0.5)),
        args_exact: both_tool.then(|| rng.gen_bool(0.5)),
        tool_match: None,
        answer_sim: both_answer.then(|| rng.gen_range(0.0..=1.0)),
    }
}

fn ac6() -> Check {
    let plain = |g, p| TurnResult {
        gt_kind: g,
        pred_kind: p,
        name_match: None,
        args_exact: None,
        tool_match: None,
        answer_sim: None,
    };
    use TurnKind::{Answer as A, Tool as T};
    let tt = TurnResult {
        name_match: Some(true),
        args_exact: Some(true),
        ..plain(T, T)
    };
    let aa = TurnResult {
        answer_sim: Some(1.0),
        ..plain(A, A)
    };
    let fixture = [tt, plain(T, A), aa, plain(A, T)];
    let rep = aggregate(&fixture).map_err(|e| e.to_string())?;
    for (name, v) in [
        ("tool_recall", rep.tool_recall),
        ("tool_precision", rep.tool_precision),
        ("answer_recall", rep.answer_recall),
        ("answer_precision", rep.answer_precision),
        ("macro", rep.action_recall_macro),
        ("micro", Some(rep.action_recall_micro)),
    ] {
        ensure(v == Some(0.5), || format!("4-turn fixture {name} = {v:?}"))?;
    }
    brute_check(&fixture, &rep)?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fixtures = 0;
    for _ in 0..5_000 {
        let n = rng.gen_range(1..=20);
        let results: Vec<TurnResult> = (0..n).map(|_| random_turn(&mut rng)).collect();
        let rep = aggregate(&results).map_err(|e| e.to_string())?;
        brute_check(&results, &rep)?;
        fixtures += 1;
    }
    Ok(format!("4-turn fixture at 0.5; {fixtures} random fixtures match brute force"))
}

// -- AC7 ---------------------------------------------------------------------

const TAG_ALPHABET: [&str; 14] = [
    "<think>", "</think>", "<tool_call>", "</tool_call>", "<answer>", "</answer>", "{", "}",
    "\"name\"", "\"arguments\"", ":", " ", "x", "<",
];

fn check_invariants(text: &str) -> Result<(), String> {
    let p = parse_output(text);
    let f = p.format;
    ensure(f == check_format(&p), || format!("{text:?}: flags disagree with check_format"))?;
    ensure(!f.has_think || p.think.is_some(), || format!("{text:?}: has_think without think"))?;
    ensure(!f.has_action || p.action.is_some(), || format!("{text:?}: has_action without action"))?;
    ensure(!f.correct_order || (f.has_think && f.has_action), || format!("{text:?}: order without blocks"))?;
    ensure(p.raw == text, || format!("{text:?}: raw text not preserved"))?;
    Ok(())
}

fn ac7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut n = 0;
    for i in 0..100_000 {
        let text = if i % 2 == 0 {
            let len = rng.gen_range(0..64);
            let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        } else {
            let len = rng.gen_range(0..16);
            (0..len).map(|_| TAG_ALPHABET[rng.gen_range(0..TAG_ALPHABET.len())]).collect()
        };
        match panic::catch_unwind(AssertUnwindSafe(|| check_invariants(&text))) {
            Ok(r) => r?,
            Err(_) => return Err(format!("parse_output panicked on {text:?}")),
        }
        n += 1;
    }
    Ok(format!("{n} inputs, no failures"))
}

// -- AC8 ---------------------------------------------------------------------

fn pipeline(fixtures: &Path) -> Result<Vec<u8>, String> {
    let convs = load_conversations(&fixtures.join("conversations.jsonl")).map_err(|e| e.to_string())?;
    let samples = decompose_all(&convs).map_err(|e| e.to_string())?;
    let preds = load_predictions(&fixtures.join("predictions.jsonl")).map_err(|e| e.to_string())?;
    let cfg = LengthRewardConfig::default();
    let mut out = Vec::new();
    for s in &samples {
        out.extend(serde_json::to_vec(s).map_err(|e| e.to_string())?);
        out.extend(assemble_prompt(s).into_bytes());
        for p in preds.iter().filter(|p| (p.conversation_id.as_str(), p.turn_index) == s.key()) {
            let b = total_reward(&p.raw_output, &s.ground_truth, &LexicalScorer, &cfg).map_err(|e| e.to_string())?;
            out.extend(serde_json::to_vec(&b).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn ac8() -> Check {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let a = pipeline(&fixtures)?;
    let b = pipeline(&fixtures)?;
    ensure(!a.is_empty(), || "pipeline produced nothing".into())?;
    ensure(a == b, || "pipeline output differs between runs".into())?;
    let ids: BTreeSet<String> = load_conversations(&fixtures.join("conversations.jsonl"))
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|c| c.id)
        .collect();
    Ok(format!("{} bytes identical across runs ({} conversations)", a.len(), ids.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("AC1", "reward exactness", Some(Duration::from_secs(1)), ac1),
        ("AC2", "reward range property", Some(Duration::from_secs(10)), ac2),
        ("AC3", "GRPO advantage oracle", None, ac3),
        ("AC4", "surrogate gradient check", Some(Duration::from_secs(30)), ac4),
        ("AC5", "simulator convergence", Some(Duration::from_secs(60)), ac5),
        ("AC6", "metrics oracle equivalence", None, ac6),
        ("AC7", "parser robustness", Some(Duration::from_secs(60)), ac7),
        ("AC8", "pipeline round-trip", None, ac8),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("{id} PASS {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

use std::path::{Path, PathBuf};

use prefixlab::conditioning::{build_dataset as build, refresh_dataset, scan_saturated, ConditionedRecord, SaturationScan};
use prefixlab::env::{Question, WorldFile, WorldGraph};
use prefixlab::eval::{self, RecoveryMode};
use prefixlab::experiment::{self, ExperimentPlan};
use prefixlab::grpo::{self, Prompt, TrainOptions, METRICS_HEADER};
use prefixlab::io::{parse_jsonl, policy_hash, to_jsonl};
use prefixlab::par;
use prefixlab::policy::{pretrain_to_saturation, Checkpoint, Policy, SamplingParams};
use serde_json::{json, Value};

use crate::config::{band_overrides, parse_band, resolve};
use crate::output::OutDir;
use crate::{CliError, Common, ExperimentArg, ModeArg};

fn opt<T: std::fmt::Debug>(key: &str, value: Option<T>) -> Option<(String, String)> {
    value.map(|v| (key.to_string(), format!("{v:?}")))
}

/// Resolves the configuration (file, then `--set`, then dedicated flags) and
/// sizes the worker pool.
fn setup(common: &Common, flags: impl IntoIterator<Item = (String, String)>) -> Result<ExperimentPlan, CliError> {
    let mut overrides = common.set.clone();
    overrides.extend(flags);
    let plan = resolve(common.config.as_deref(), &overrides)?;
    let workers = common.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::config("--workers must be >= 1"));
    }
    par::configure_workers(workers);
    Ok(plan)
}

fn load_world(out: &mut OutDir, path: &Path) -> Result<WorldGraph, CliError> {
    let text = out.read_input("world", path)?;
    let file: WorldFile = serde_json::from_str(&text).map_err(|e| CliError::contract(format!("world file: {e}")))?;
    Ok(WorldGraph::from_file(file)?)
}

fn load_policy(out: &mut OutDir, path: &Path, graph: &WorldGraph) -> Result<Policy, CliError> {
    let text = out.read_input("policy", path)?;
    let policy = Checkpoint::from_json(&text)?.into_policy()?;
    policy.check_graph(graph)?;
    Ok(policy)
}

fn load_questions(out: &mut OutDir, role: &str, path: &Path, graph: &WorldGraph) -> Result<Vec<Question>, CliError> {
    let qs: Vec<Question> = parse_jsonl(&out.read_input(role, path)?)?;
    for q in &qs {
        graph.check_question(q)?;
    }
    Ok(qs)
}

fn checkpoint_text(policy: &Policy) -> String {
    let mut s = Checkpoint::from_policy(policy).to_json();
    s.push('\n');
    s
}

pub fn make_world(
    common: &Common,
    node_count: Option<usize>,
    out_degree: Option<usize>,
    budget: Option<usize>,
    world_seed: Option<u64>,
) -> Result<Value, CliError> {
    let flags = [
        opt("world.node_count", node_count),
        opt("world.out_degree", out_degree),
        opt("world.budget", budget),
        opt("world.seed", world_seed),
    ];
    let plan = setup(common, flags.into_iter().flatten())?;
    let mut out = OutDir::create(&common.out, "make-world")?;
    let graph = WorldGraph::build(plan.world)?;
    let questions = graph.enumerate_questions();
    out.write_json("world.json", &graph.to_file())?;
    out.write("questions.jsonl", &to_jsonl(&questions))?;
    out.finish(&plan, None)?;
    Ok(json!({
        "command": "make-world",
        "node_count": graph.node_count(),
        "out_degree": graph.out_degree(),
        "budget": graph.budget(),
        "questions": questions.len(),
    }))
}

pub fn pretrain(common: &Common, seed: u64, world: &Path) -> Result<Value, CliError> {
    let plan = setup(common, [])?;
    let mut out = OutDir::create(&common.out, "pretrain")?;
    let graph = load_world(&mut out, world)?;
    let split = experiment::split_questions(&graph, &plan.split, seed)?;
    let init = Policy::init(&graph, plan.init)?;
    let outcome = pretrain_to_saturation(init, &graph, &split.pretrain, &plan.pretrain, seed)?;
    out.write("base.policy", &checkpoint_text(&outcome.policy))?;
    out.write("pretrain_questions.jsonl", &to_jsonl(&split.pretrain))?;
    out.write("pool_questions.jsonl", &to_jsonl(&split.pool))?;
    out.write("eval_questions.jsonl", &to_jsonl(&split.eval))?;
    out.write("in_band.jsonl", &to_jsonl(&outcome.in_band))?;
    let mut history = String::from("iteration,in_band_fraction,mean_accuracy\n");
    for (i, f, a) in &outcome.history {
        history.push_str(&format!("{i},{f},{a}\n"));
    }
    out.write("pretrain_history.csv", &history)?;
    out.finish(&plan, Some(seed))?;
    Ok(json!({
        "command": "pretrain",
        "iterations": outcome.iterations,
        "in_band": outcome.in_band.len(),
        "pool": split.pool.len(),
        "eval": split.eval.len(),
        "policy_hash": policy_hash(&outcome.policy),
    }))
}

pub fn scan(
    common: &Common,
    seed: u64,
    world: &Path,
    policy: &Path,
    questions: &Path,
    band: Option<&str>,
    n: Option<usize>,
) -> Result<Value, CliError> {
    let mut flags: Vec<(String, String)> = opt("scan.n_scan", n).into_iter().collect();
    if let Some(b) = band {
        flags.extend(band_overrides("scan.saturated_band", parse_band(b)?));
    }
    let plan = setup(common, flags)?;
    let mut out = OutDir::create(&common.out, "scan")?;
    let graph = load_world(&mut out, world)?;
    let policy = load_policy(&mut out, policy, &graph)?;
    let qs = load_questions(&mut out, "questions", questions, &graph)?;
    let params = SamplingParams::training(&policy, &graph);
    let scans = scan_saturated(&policy, &graph, &qs, plan.scan.n_scan, plan.scan.saturated_band, seed, params)?;
    let saturated: Vec<SaturationScan> = scans.iter().filter(|s| s.in_band).cloned().collect();
    out.write("scans.jsonl", &to_jsonl(&scans))?;
    out.write("saturated.jsonl", &to_jsonl(&saturated))?;
    out.finish(&plan, Some(seed))?;
    if saturated.is_empty() {
        return Err(CliError::empty(format!("no question of {} fell in the saturation band", scans.len())));
    }
    let mean = scans.iter().map(|s| s.accuracy).sum::<f64>() / scans.len().max(1) as f64;
    Ok(json!({ "command": "scan", "questions": scans.len(), "saturated": saturated.len(), "mean_accuracy": mean }))
}

pub fn build_dataset(
    common: &Common,
    seed: u64,
    world: &Path,
    policy: &Path,
    scans: &Path,
    tau: Option<f64>,
    rollouts: Option<usize>,
) -> Result<Value, CliError> {
    let flags = [opt("conditioning.tau", tau), opt("conditioning.rollouts", rollouts)];
    let plan = setup(common, flags.into_iter().flatten())?;
    let mut out = OutDir::create(&common.out, "build-dataset")?;
    let graph = load_world(&mut out, world)?;
    let policy = load_policy(&mut out, policy, &graph)?;
    let scans: Vec<SaturationScan> = parse_jsonl(&out.read_input("scans", scans)?)?;
    let saturated: Vec<SaturationScan> = scans.into_iter().filter(|s| s.in_band && s.failure.is_some()).collect();
    if saturated.is_empty() {
        return Err(CliError::empty("no in-band scan carries a failure"));
    }
    let params = SamplingParams::training(&policy, &graph);
    let ds = build(&policy, &graph, &saturated, &plan.conditioning, seed, params)?;
    out.write("dataset.jsonl", &ds.to_jsonl())?;
    out.write("sweeps.jsonl", &to_jsonl(&ds.sweeps))?;
    out.write_json("diagnostics.json", &ds.diagnostics)?;
    out.write("fraction_histogram.csv", &ds.diagnostics.fraction_histogram.to_csv("fraction"))?;
    out.write("accuracy_histogram.csv", &ds.diagnostics.accuracy_histogram.to_csv("accuracy"))?;
    let mut decay = String::from("fraction,mean_accuracy\n");
    for (f, a) in plan.conditioning.fractions.iter().zip(ds.mean_accuracy_by_fraction(&plan.conditioning.fractions)) {
        decay.push_str(&format!("{f},{a}\n"));
    }
    out.write("accuracy_by_fraction.csv", &decay)?;
    out.finish(&plan, Some(seed))?;
    if ds.records.is_empty() {
        return Err(CliError::empty("the conditioned dataset is empty"));
    }
    Ok(json!({
        "command": "build-dataset",
        "records": ds.records.len(),
        "tau": plan.conditioning.tau,
        "mean_selected_fraction": ds.diagnostics.mean_selected_fraction,
        "mean_selected_accuracy": ds.diagnostics.mean_selected_accuracy,
    }))
}

pub struct TrainArgs {
    pub world: PathBuf,
    pub policy: PathBuf,
    pub dataset: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub eval_questions: Option<PathBuf>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub start_step: usize,
    pub checkpoint_every: Option<usize>,
}

pub fn train(common: &Common, seed: u64, args: TrainArgs) -> Result<Value, CliError> {
    let flags = [opt("grpo.total_steps", args.steps), opt("grpo.learning_rate", args.lr)];
    let plan = setup(common, flags.into_iter().flatten())?;
    let mut out = OutDir::create(&common.out, "train")?;
    let graph = load_world(&mut out, &args.world)?;
    let start = load_policy(&mut out, &args.policy, &graph)?;
    let prompts: Vec<Prompt> = match (&args.dataset, &args.questions) {
        (Some(d), _) => {
            let records: Vec<ConditionedRecord> = parse_jsonl(&out.read_input("dataset", d)?)?;
            records.iter().map(ConditionedRecord::prompt).collect()
        }
        (None, Some(q)) => load_questions(&mut out, "questions", q, &graph)?.into_iter().map(Prompt::plain).collect(),
        (None, None) => return Err(CliError::config("train needs --dataset or --questions")),
    };
    if prompts.is_empty() {
        return Err(CliError::empty("training set is empty"));
    }
    let eval_qs = match &args.eval_questions {
        Some(p) => Some(load_questions(&mut out, "eval_questions", p, &graph)?),
        None => None,
    };
    let every = args.checkpoint_every.unwrap_or(plan.eval.every);
    if every == 0 {
        return Err(CliError::config("--checkpoint-every must be >= 1"));
    }
    let options = TrainOptions {
        start_step: args.start_step,
        eval_every: eval_qs.as_ref().map(|_| plan.eval.every),
        checkpoint_every: Some(every),
        record_timing: false,
    };
    let mut curve = String::from("step,pass_at_1\n");
    let mut hook = |step: usize, p: &Policy| -> prefixlab::Result<()> {
        if let Some(qs) = &eval_qs {
            let r = eval::evaluate(p, &graph, qs, plan.eval.n, plan.eval.temperature, None, seed)?;
            curve.push_str(&format!("{step},{}\n", r.pass_at_1));
        }
        Ok(())
    };
    let outcome = grpo::train(start, &graph, &prompts, &plan.grpo, options, seed, Some(&mut hook))?;
    let mut metrics = format!("{METRICS_HEADER}\n");
    for m in &outcome.metrics {
        metrics.push_str(&m.csv_row());
        metrics.push('\n');
    }
    out.write("metrics.csv", &metrics)?;
    for (step, p) in &outcome.checkpoints {
        out.write(&format!("ckpt_{step}.policy"), &checkpoint_text(p))?;
    }
    out.write("final.policy", &checkpoint_text(&outcome.policy))?;
    if eval_qs.is_some() {
        out.write("curve.csv", &curve)?;
    }
    out.finish(&plan, Some(seed))?;
    let last = outcome.metrics.last().map_or(0.0, |m| m.mean_reward);
    Ok(json!({
        "command": "train",
        "prompts": prompts.len(),
        "steps": outcome.metrics.len(),
        "final_mean_reward": last,
        "checkpoints": outcome.checkpoints.len(),
        "policy_hash": policy_hash(&outcome.policy),
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    common: &Common,
    seed: u64,
    world: &Path,
    policy: &Path,
    questions: &Path,
    n: Option<usize>,
    temperature: Option<f64>,
    budgets: &[usize],
) -> Result<Value, CliError> {
    let flags = [opt("eval.n", n), opt("eval.temperature", temperature)];
    let plan = setup(common, flags.into_iter().flatten())?;
    let mut out = OutDir::create(&common.out, "evaluate")?;
    let graph = load_world(&mut out, world)?;
    let policy = load_policy(&mut out, policy, &graph)?;
    let qs = load_questions(&mut out, "questions", questions, &graph)?;
    let report = eval::evaluate(&policy, &graph, &qs, plan.eval.n, plan.eval.temperature, None, seed)?;
    out.write("per_question.csv", &report.to_csv())?;
    let mut pk = String::from("k,pass_at_k\n");
    for p in &report.pass_at_k {
        pk.push_str(&format!("{},{}\n", p.k, p.value));
    }
    out.write("pass_at_k.csv", &pk)?;
    let mut sweep_json = Vec::new();
    if !budgets.is_empty() {
        let sweep = eval::budget_sweep(&policy, &graph, &qs, budgets, plan.eval.n, plan.eval.temperature, seed)?;
        let mut s = String::from("budget,pass_at_1\n");
        for (b, p) in &sweep {
            s.push_str(&format!("{b},{p}\n"));
            sweep_json.push(json!({ "budget": b, "pass_at_1": p }));
        }
        out.write("budget_sweep.csv", &s)?;
    }
    out.finish(&plan, Some(seed))?;
    let pass: serde_json::Map<String, Value> =
        report.pass_at_k.iter().map(|p| (format!("pass@{}", p.k), json!(p.value))).collect();
    Ok(json!({
        "command": "evaluate",
        "questions": qs.len(),
        "n": plan.eval.n,
        "temperature": plan.eval.temperature,
        "pass_at_k": pass,
        "mean_length": report.mean_length,
        "budget_sweep": sweep_json,
    }))
}

pub fn recovery(
    common: &Common,
    seed: u64,
    world: &Path,
    policies: &[PathBuf],
    questions: &Path,
    mode: ModeArg,
) -> Result<Value, CliError> {
    let plan = setup(common, [])?;
    let mut out = OutDir::create(&common.out, "recovery")?;
    let graph = load_world(&mut out, world)?;
    let loaded = policies.iter().map(|p| load_policy(&mut out, p, &graph)).collect::<Result<Vec<_>, _>>()?;
    let qs = load_questions(&mut out, "questions", questions, &graph)?;
    let refs: Vec<&Policy> = loaded.iter().collect();
    let qualifying = eval::qualifying_intersection(&refs, &graph, &qs, &plan.recovery, seed)?;
    out.write("qualifying.jsonl", &to_jsonl(&qualifying))?;
    if qualifying.is_empty() {
        out.finish(&plan, Some(seed))?;
        return Err(CliError::empty("no question qualifies under every policy"));
    }
    let modes: &[RecoveryMode] = match mode {
        ModeArg::Failure => &[RecoveryMode::FailurePrefix],
        ModeArg::Success => &[RecoveryMode::SuccessPrefix],
        ModeArg::Both => &[RecoveryMode::FailurePrefix, RecoveryMode::SuccessPrefix],
    };
    let mut csv = format!("policy,{}\n", eval::RecoveryCurve::CSV_HEADER);
    let mut gaps = String::from("policy,mode,fraction,difference,drop_reference,drop_policy\n");
    let mut summary = Vec::new();
    for &m in modes {
        let curves = loaded
            .iter()
            .map(|p| eval::recovery_curve_on(p, &graph, &qualifying, m, &plan.recovery, seed))
            .collect::<prefixlab::Result<Vec<_>>>()?;
        for (i, c) in curves.iter().enumerate() {
            for line in c.csv_rows().lines() {
                csv.push_str(&format!("{i},{line}\n"));
            }
            summary.push(json!({ "policy": i, "mode": m.as_str(), "baseline": c.baseline }));
            if i > 0 {
                for r in eval::recovery_gap(&curves[0], c)?.rows {
                    gaps.push_str(&format!("{i},{},{},{},{},{}\n", m.as_str(), r.fraction, -r.difference, r.drop_a, r.drop_b));
                }
            }
        }
    }
    out.write("recovery.csv", &csv)?;
    if loaded.len() > 1 {
        out.write("gaps.csv", &gaps)?;
    }
    out.finish(&plan, Some(seed))?;
    Ok(json!({ "command": "recovery", "qualifying": qualifying.len(), "curves": summary }))
}

pub fn refresh(
    common: &Common,
    seed: u64,
    world: &Path,
    policy: &Path,
    questions: &Path,
    max_attempts: Option<usize>,
    tau: Option<f64>,
) -> Result<Value, CliError> {
    let flags = [opt("conditioning.max_attempts", max_attempts), opt("conditioning.tau", tau)];
    let plan = setup(common, flags.into_iter().flatten())?;
    let mut out = OutDir::create(&common.out, "refresh")?;
    let graph = load_world(&mut out, world)?;
    let policy = load_policy(&mut out, policy, &graph)?;
    let qs = load_questions(&mut out, "questions", questions, &graph)?;
    let params = SamplingParams::training(&policy, &graph);
    let outcome = refresh_dataset(&policy, &graph, &qs, &plan.conditioning, seed, params)?;
    out.write("refreshed.jsonl", &outcome.dataset.to_jsonl())?;
    out.write("sweeps.jsonl", &to_jsonl(&outcome.dataset.sweeps))?;
    out.write_json("excluded.json", &outcome.excluded)?;
    out.write_json("diagnostics.json", &outcome.dataset.diagnostics)?;
    out.finish(&plan, Some(seed))?;
    Ok(json!({
        "command": "refresh",
        "records": outcome.dataset.records.len(),
        "excluded": outcome.excluded.len(),
        "status": outcome.status,
    }))
}

pub fn experiment(common: &Common, seed: u64, which: ExperimentArg, seeds: Option<usize>) -> Result<Value, CliError> {
    let mut plan = setup(common, [])?;
    plan.run_seed = seed;
    if let Some(n) = seeds {
        plan.replicates = n;
    }
    plan.validate()?;
    let dir = common.out.as_path();
    std::fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    match which {
        ExperimentArg::Table1 => {
            let r = experiment::run_table1(&plan)?;
            experiment::write_table1(&plan, &r, dir)?;
            let arms: Vec<Value> = r
                .summary
                .iter()
                .map(|s| json!({ "arm": s.arm, "mean_delta": s.mean_delta, "std_delta": s.std_delta }))
                .collect();
            Ok(json!({ "command": "experiment table1", "replicates": r.replicates.len(), "arms": arms }))
        }
        ExperimentArg::Tau => {
            let r = experiment::run_tau_ablation(&plan)?;
            experiment::write_tau(&plan, &r, dir)?;
            let arms: Vec<Value> = r
                .summary
                .iter()
                .map(|s| json!({ "arm": s.arm, "mean_peak": s.mean_peak, "std_peak": s.std_peak }))
                .collect();
            Ok(json!({ "command": "experiment tau", "replicates": r.replicates.len(), "arms": arms }))
        }
        ExperimentArg::Refresh => {
            let r = experiment::run_refresh(&plan)?;
            experiment::write_refresh(&plan, &r, dir)?;
            let reps: Vec<Value> = r
                .replicates
                .iter()
                .map(|x| {
                    json!({
                        "fork_step": x.fork_step,
                        "iteration1_peak": x.iteration1_peak().pass_at_1,
                        "iteration2_peak": x.iteration2_peak().map(|p| p.pass_at_1),
                        "refreshed": x.refresh.dataset.records.len(),
                        "excluded": x.refresh.excluded.len(),
                    })
                })
                .collect();
            Ok(json!({ "command": "experiment refresh", "replicates": reps }))
        }
    }
}

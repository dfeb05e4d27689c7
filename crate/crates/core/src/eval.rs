//! Evaluation: pass@k, budget sweeps and recovery curves.

use serde::{Deserialize, Serialize};

use crate::conditioning::{estimate_accuracy, prefix_length, sample_continuations};
use crate::env::{Question, Trajectory, WorldGraph};
use crate::error::{Error, Result};
use crate::par;
use crate::policy::{Policy, SamplingParams};
use crate::rng::{Phase, SeedStream};

/// Default evaluation temperature.
pub const EVAL_TEMPERATURE: f64 = 0.6;

/// `k` values reported in an evaluation report (those `<= n`).
pub const PASS_K_VALUES: [usize; 6] = [1, 2, 4, 8, 16, 32];

fn binomial(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Unbiased pass@k estimate `1 - C(n-c, k) / C(n, k)`.
///
/// When both binomials fit in 128 bits the ratio is formed from exact integers
/// (one rounding); otherwise the product `∏ (1 - k / i)` over
/// `i = n-c+1 ..= n` is used.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("pass@k needs 1 <= k <= n, got k={k}, n={n}")));
    }
    if c > n {
        return Err(Error::InvalidParameter(format!("correct count {c} exceeds samples {n}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    if let (Some(total), Some(miss)) = (binomial(n, k), binomial(n - c, k)) {
        return Ok((total - miss) as f64 / total as f64);
    }
    let prod: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - prod)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionEval {
    pub question_id: u64,
    pub n: usize,
    pub c: usize,
    pub mean_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub temperature: f64,
    pub budget: usize,
    pub pass_at_1: f64,
    pub pass_at_k: Vec<PassAtK>,
    /// Mean episode length in actions, over all samples.
    pub mean_length: f64,
    pub per_question: Vec<QuestionEval>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("question_id,n,c\n");
        for q in &self.per_question {
            s.push_str(&format!("{},{},{}\n", q.question_id, q.n, q.c));
        }
        s
    }
}

/// Samples `n` rollouts per question and aggregates pass@k.
pub fn evaluate(
    policy: &Policy,
    graph: &WorldGraph,
    questions: &[Question],
    n: usize,
    temperature: f64,
    budget: Option<usize>,
    seed: u64,
) -> Result<EvalReport> {
    policy.check_graph(graph)?;
    if n == 0 {
        return Err(Error::InvalidParameter("evaluation needs n >= 1".into()));
    }
    if questions.is_empty() {
        return Err(Error::InvalidParameter("no questions to evaluate".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter("temperature must be positive".into()));
    }
    let budget = budget.unwrap_or(graph.budget());
    if budget == 0 || budget > graph.budget() {
        return Err(Error::InvalidParameter(format!("budget {budget} must lie in 1..={}", graph.budget())));
    }
    let params = SamplingParams::new(temperature, budget);
    let stream = SeedStream::new(seed, Phase::Eval);
    let per_question = par::try_map_slice(questions, |q| {
        let rollouts = sample_continuations(policy, graph, q, &[], n, stream, params)?;
        let c = rollouts.iter().filter(|t| t.reward == 1).count();
        let mean_length = rollouts.iter().map(|t| t.actions.len()).sum::<usize>() as f64 / n as f64;
        Ok(QuestionEval { question_id: q.question_id, n, c, mean_length })
    })?;
    let qn = per_question.len() as f64;
    let pass_at_1 = per_question.iter().map(|q| q.c as f64 / q.n as f64).sum::<f64>() / qn;
    let pass_at_k = PASS_K_VALUES
        .iter()
        .filter(|&&k| k <= n)
        .map(|&k| {
            let v = per_question.iter().map(|q| pass_at_k(q.n, q.c, k)).sum::<Result<f64>>()? / qn;
            Ok(PassAtK { k, value: v })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_length = per_question.iter().map(|q| q.mean_length).sum::<f64>() / qn;
    Ok(EvalReport { temperature, budget, pass_at_1, pass_at_k, mean_length, per_question })
}

/// pass@1 at each budget, using the evaluation seed stream for every budget.
pub fn budget_sweep(
    policy: &Policy,
    graph: &WorldGraph,
    questions: &[Question],
    budgets: &[usize],
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    budgets
        .iter()
        .map(|&b| {
            if b > graph.budget() {
                return Err(Error::InvalidParameter(format!("budget {b} exceeds world budget {}", graph.budget())));
            }
            Ok((b, evaluate(policy, graph, questions, n, temperature, Some(b), seed)?.pass_at_1))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    FailurePrefix,
    SuccessPrefix,
}

impl RecoveryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RecoveryMode::FailurePrefix => "failure_prefix",
            RecoveryMode::SuccessPrefix => "success_prefix",
        }
    }

    fn wants(self, t: &Trajectory) -> bool {
        match self {
            RecoveryMode::FailurePrefix => t.reward == 0,
            RecoveryMode::SuccessPrefix => t.reward == 1,
        }
    }
}

impl std::str::FromStr for RecoveryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "failure_prefix" | "failure" => Ok(RecoveryMode::FailurePrefix),
            "success_prefix" | "success" => Ok(RecoveryMode::SuccessPrefix),
            _ => Err(Error::InvalidParameter(format!("unknown recovery mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub fractions: Vec<f64>,
    /// Reference samples per question used for qualification and exemplars.
    pub n_reference: usize,
    pub n_continuations: usize,
    pub temperature: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            fractions: crate::conditioning::default_fractions(),
            n_reference: 32,
            n_continuations: 32,
            temperature: EVAL_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCurve {
    pub mode: RecoveryMode,
    /// Mean unconditioned accuracy (fraction 0) over the qualifying questions.
    pub baseline: f64,
    pub points: Vec<CurvePoint>,
    pub n_questions: usize,
}

impl RecoveryCurve {
    pub const CSV_HEADER: &'static str = "mode,fraction,mean_accuracy,n_questions";

    pub fn csv_rows(&self) -> String {
        let mut s = format!("{},0,{},{}\n", self.mode.as_str(), self.baseline, self.n_questions);
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", self.mode.as_str(), p.fraction, p.mean_accuracy, self.n_questions));
        }
        s
    }
}

fn reference_samples(
    policy: &Policy,
    graph: &WorldGraph,
    question: &Question,
    config: &RecoveryConfig,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let params = SamplingParams::new(config.temperature, graph.budget());
    sample_continuations(policy, graph, question, &[], config.n_reference, SeedStream::new(seed, Phase::Reference), params)
}

/// Questions on which `policy` produced at least one correct and one incorrect
/// reference sample.
pub fn qualifying_questions(
    policy: &Policy,
    graph: &WorldGraph,
    questions: &[Question],
    config: &RecoveryConfig,
    seed: u64,
) -> Result<Vec<Question>> {
    policy.check_graph(graph)?;
    let flags = par::try_map_slice(questions, |q| {
        let refs = reference_samples(policy, graph, q, config, seed)?;
        let c = refs.iter().filter(|t| t.reward == 1).count();
        Ok(c > 0 && c < refs.len())
    })?;
    Ok(questions.iter().zip(flags).filter(|(_, f)| *f).map(|(q, _)| *q).collect())
}

/// Questions qualifying under every one of `policies`.
pub fn qualifying_intersection(
    policies: &[&Policy],
    graph: &WorldGraph,
    questions: &[Question],
    config: &RecoveryConfig,
    seed: u64,
) -> Result<Vec<Question>> {
    let mut keep: Vec<Question> = questions.to_vec();
    for p in policies {
        keep = qualifying_questions(p, graph, &keep, config, seed)?;
    }
    Ok(keep)
}

/// Recovery curve over questions that are already known to qualify.
pub fn recovery_curve_on(
    policy: &Policy,
    graph: &WorldGraph,
    questions: &[Question],
    mode: RecoveryMode,
    config: &RecoveryConfig,
    seed: u64,
) -> Result<RecoveryCurve> {
    policy.check_graph(graph)?;
    if questions.is_empty() {
        return Err(Error::EmptyResult("no qualifying questions for the recovery curve".into()));
    }
    let params = SamplingParams::new(config.temperature, graph.budget());
    let exemplar_stream = SeedStream::new(seed, Phase::Exemplar);
    let cont_stream = SeedStream::new(seed, Phase::Recovery).fork(mode as u64);
    let per_question = par::try_map_slice(questions, |q| {
        let refs = reference_samples(policy, graph, q, config, seed)?;
        let pool: Vec<&Trajectory> = refs.iter().filter(|t| mode.wants(t)).collect();
        if pool.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "question {} has no {} exemplar in its reference samples",
                q.question_id,
                mode.as_str()
            )));
        }
        let pick = (exemplar_stream.seed(q.question_id, mode as u64) % pool.len() as u64) as usize;
        let moves = pool[pick].moves();
        let baseline = estimate_accuracy(policy, graph, q, &[], config.n_continuations, cont_stream.fork(0), params)?;
        let accs = config
            .fractions
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let alpha = prefix_length(f, moves.len());
                estimate_accuracy(policy, graph, q, &moves[..alpha], config.n_continuations, cont_stream.fork(i as u64 + 1), params)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok((baseline, accs))
    })?;
    let nq = per_question.len() as f64;
    let baseline = per_question.iter().map(|(b, _)| b).sum::<f64>() / nq;
    let points = config
        .fractions
        .iter()
        .enumerate()
        .map(|(i, &f)| CurvePoint { fraction: f, mean_accuracy: per_question.iter().map(|(_, a)| a[i]).sum::<f64>() / nq })
        .collect();
    Ok(RecoveryCurve { mode, baseline, points, n_questions: questions.len() })
}

/// Filters `questions` to the qualifying set for `policy`, then builds the curve.
pub fn recovery_curve(
    policy: &Policy,
    graph: &WorldGraph,
    questions: &[Question],
    mode: RecoveryMode,
    config: &RecoveryConfig,
    seed: u64,
) -> Result<RecoveryCurve> {
    let qualified = qualifying_questions(policy, graph, questions, config, seed)?;
    recovery_curve_on(policy, graph, &qualified, mode, config, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub fraction: f64,
    /// `accuracy_a - accuracy_b`.
    pub difference: f64,
    /// `baseline_a - accuracy_a` (negative when a prefix helps).
    pub drop_a: f64,
    pub drop_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryGap {
    pub mode: RecoveryMode,
    pub rows: Vec<GapRow>,
}

impl RecoveryGap {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,difference,drop_a,drop_b\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.fraction, r.difference, r.drop_a, r.drop_b));
        }
        s
    }
}

pub fn recovery_gap(a: &RecoveryCurve, b: &RecoveryCurve) -> Result<RecoveryGap> {
    if a.mode != b.mode {
        return Err(Error::InvalidParameter("recovery curves have different modes".into()));
    }
    if a.points.len() != b.points.len() || a.points.iter().zip(&b.points).any(|(x, y)| x.fraction != y.fraction) {
        return Err(Error::InvalidParameter("recovery curves have different fractions".into()));
    }
    let rows = a
        .points
        .iter()
        .zip(&b.points)
        .map(|(x, y)| GapRow {
            fraction: x.fraction,
            difference: x.mean_accuracy - y.mean_accuracy,
            drop_a: a.baseline - x.mean_accuracy,
            drop_b: b.baseline - y.mean_accuracy,
        })
        .collect();
    Ok(RecoveryGap { mode: a.mode, rows })
}

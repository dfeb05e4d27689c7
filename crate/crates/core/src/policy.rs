//! Tabular autoregressive softmax policy.
//!
//! Logits are indexed by `(current node, goal node, action slot)`; slots are the
//! out-neighbors of `current` in adjacency order followed by `STOP`. Sampling,
//! log-probabilities and gradients are all exact.

use std::collections::BTreeSet;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::conditioning::{self, AccuracyBand};
use crate::env::{
    apply_prefix_with_budget, step, Action, EpisodeState, GraphKey, NodeId, Question, StepOutcome, TerminalReason,
    Trajectory, WorldGraph,
};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{Phase, Rng, SeedStream};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    graph: GraphKey,
    temperature: f64,
    slots: usize,
    logits: Vec<f64>,
}

/// How a fresh policy is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitScheme {
    Uniform,
    /// Logit of each action is `-strength * distance(result, goal)`.
    GoalBiased { strength: f64 },
}

/// Sampling settings for one rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    pub budget: usize,
}

impl SamplingParams {
    pub fn new(temperature: f64, budget: usize) -> Self {
        SamplingParams { temperature, budget }
    }

    /// Training-time sampling: the policy's own temperature and the world budget.
    pub fn training(policy: &Policy, graph: &WorldGraph) -> Self {
        SamplingParams { temperature: policy.temperature, budget: graph.budget() }
    }
}

impl Policy {
    pub fn init(graph: &WorldGraph, scheme: InitScheme) -> Result<Self> {
        let n = graph.node_count();
        let slots = graph.slot_count();
        let mut logits = vec![0.0; n * n * slots];
        if let InitScheme::GoalBiased { strength } = scheme {
            if !(strength > 0.0) || !strength.is_finite() {
                return Err(Error::InvalidParameter(format!("goal-biased strength must be positive, got {strength}")));
            }
            let stop_penalty = graph.budget() as f64;
            for current in 0..n {
                for goal in 0..n {
                    let row = &mut logits[(current * n + goal) * slots..(current * n + goal + 1) * slots];
                    for (slot, &next) in graph.neighbors(current).iter().enumerate() {
                        row[slot] = -strength * graph.shortest_distance(next, goal) as f64;
                    }
                    row[slots - 1] = if current == goal { 0.0 } else { -strength * stop_penalty };
                }
            }
        }
        Ok(Policy { graph: graph.key(), temperature: 1.0, slots, logits })
    }

    pub fn uniform(graph: &WorldGraph) -> Self {
        Policy::init(graph, InitScheme::Uniform).expect("uniform init cannot fail")
    }

    /// Policy from raw parts, validating the table shape.
    pub fn from_parts(graph: GraphKey, temperature: f64, logits: Vec<f64>) -> Result<Self> {
        let slots = graph.out_degree + 1;
        if logits.len() != graph.node_count * graph.node_count * slots {
            return Err(Error::Malformed(format!(
                "logit table has {} entries, expected {}",
                logits.len(),
                graph.node_count * graph.node_count * slots
            )));
        }
        if !(temperature > 0.0) || logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Malformed("non-finite logits or nonpositive temperature".into()));
        }
        Ok(Policy { graph, temperature, slots, logits })
    }

    pub fn graph_key(&self) -> GraphKey {
        self.graph
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn slot_count(&self) -> usize {
        self.slots
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn check_graph(&self, graph: &WorldGraph) -> Result<()> {
        if self.graph != graph.key() {
            return Err(Error::GraphMismatch { policy: self.graph.to_string(), graph: graph.key().to_string() });
        }
        Ok(())
    }

    /// Flat offset of the logit row for `(current, goal)`.
    pub fn row_offset(&self, current: NodeId, goal: NodeId) -> usize {
        (current * self.graph.node_count + goal) * self.slots
    }

    pub fn row(&self, current: NodeId, goal: NodeId) -> &[f64] {
        let o = self.row_offset(current, goal);
        &self.logits[o..o + self.slots]
    }

    pub fn row_mut(&mut self, current: NodeId, goal: NodeId) -> &mut [f64] {
        let o = self.row_offset(current, goal);
        &mut self.logits[o..o + self.slots]
    }

    /// Log-probabilities of every slot at `(current, goal)`.
    pub fn log_probs(&self, current: NodeId, goal: NodeId, temperature: f64) -> Vec<f64> {
        log_softmax(self.row(current, goal), temperature)
    }

    pub fn action_probs(&self, current: NodeId, goal: NodeId, temperature: f64) -> Vec<f64> {
        self.log_probs(current, goal, temperature).into_iter().map(f64::exp).collect()
    }

    /// `θ ← θ - lr · grad` over the full table.
    pub fn apply_gradient(&mut self, grad: &[f64], learning_rate: f64) {
        assert_eq!(grad.len(), self.logits.len());
        for (w, g) in self.logits.iter_mut().zip(grad) {
            if *g != 0.0 {
                *w -= learning_rate * g;
            }
        }
    }
}

/// Numerically stable `log softmax(row / temperature)`.
pub fn log_softmax(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)) / temperature;
    let sum: f64 = row.iter().map(|&x| (x / temperature - max).exp()).sum();
    let lse = max + sum.ln();
    row.iter().map(|&x| x / temperature - lse).collect()
}

/// Validated start of a rollout: a question plus an optional forced prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStart {
    pub question: Question,
    pub prefix: Vec<NodeId>,
    pub state: EpisodeState,
    pub budget: usize,
}

impl RolloutStart {
    pub fn new(graph: &WorldGraph, question: &Question, prefix: &[NodeId], budget: usize) -> Result<Self> {
        let state = apply_prefix_with_budget(graph, question, prefix, budget)?;
        Ok(RolloutStart { question: *question, prefix: prefix.to_vec(), state, budget })
    }

    pub fn fresh(graph: &WorldGraph, question: &Question) -> Self {
        RolloutStart { question: *question, prefix: Vec::new(), state: EpisodeState::fresh(question), budget: graph.budget() }
    }
}

fn sample_slot(log_probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (slot, lp) in log_probs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last_positive = slot;
            acc += p;
            if u < acc {
                return slot;
            }
        }
    }
    last_positive
}

/// Samples one continuation from `start`. The returned trajectory contains
/// the prefix followed by the sampled actions, with a log-probability for
/// every action under `params.temperature`.
pub fn sample_rollout(
    policy: &Policy,
    graph: &WorldGraph,
    start: &RolloutStart,
    params: SamplingParams,
    seed: u64,
) -> Trajectory {
    debug_assert_eq!(start.budget, params.budget, "rollout start prepared for a different budget");
    let goal = start.question.goal;
    let mut actions = Vec::with_capacity(params.budget);
    let mut step_logprobs = Vec::with_capacity(params.budget);
    let mut cur = start.question.start;
    for &v in &start.prefix {
        let slot = graph.slot_of(cur, Action::Move(v)).expect("prefix validated by RolloutStart");
        step_logprobs.push(policy.log_probs(cur, goal, params.temperature)[slot]);
        actions.push(Action::Move(v));
        cur = v;
    }
    let prefix_len = actions.len();
    let mut state = start.state;
    if state.steps_used >= params.budget {
        return Trajectory {
            question_id: start.question.question_id,
            actions,
            prefix_len,
            reward: 0,
            step_logprobs,
            terminal_reason: TerminalReason::BudgetExhausted,
        };
    }
    let mut rng = Rng::seed_from_u64(seed);
    loop {
        let lp = policy.log_probs(state.current, goal, params.temperature);
        let slot = sample_slot(&lp, &mut rng);
        let action = graph.action_at(state.current, slot);
        actions.push(action);
        step_logprobs.push(lp[slot]);
        match step(graph, state, action, params.budget).expect("sampled action is legal") {
            StepOutcome::Continue(next) => state = next,
            StepOutcome::Terminal { reason, reward, .. } => {
                return Trajectory {
                    question_id: start.question.question_id,
                    actions,
                    prefix_len,
                    reward,
                    step_logprobs,
                    terminal_reason: reason,
                }
            }
        }
    }
}

/// Log-probability of one action at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLogProb {
    pub current: NodeId,
    pub goal: NodeId,
    pub slot: usize,
    pub logprob: f64,
}

/// Recomputes per-step log-probabilities of `trajectory` under the current parameters.
pub fn log_prob(
    policy: &Policy,
    graph: &WorldGraph,
    question: &Question,
    trajectory: &Trajectory,
    temperature: f64,
) -> Result<Vec<StepLogProb>> {
    policy.check_graph(graph)?;
    let mut cur = question.start;
    let mut out = Vec::with_capacity(trajectory.actions.len());
    for (i, &action) in trajectory.actions.iter().enumerate() {
        let slot = graph.slot_of(cur, action).ok_or(Error::IllegalAction { node: cur, action })?;
        if action == Action::Stop && i + 1 != trajectory.actions.len() {
            return Err(Error::IllegalAction { node: cur, action });
        }
        out.push(StepLogProb { current: cur, goal: question.goal, slot, logprob: policy.log_probs(cur, question.goal, temperature)[slot] });
        if let Action::Move(v) = action {
            cur = v;
        }
    }
    Ok(out)
}

/// Gradient of one step log-probability with respect to its logit row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradient {
    pub offset: usize,
    pub values: Vec<f64>,
}

/// `∂ log π(slot | current, goal) / ∂ θ_row = (onehot(slot) - softmax(θ_row / T)) / T`.
pub fn logprob_gradient(policy: &Policy, current: NodeId, goal: NodeId, slot: usize, temperature: f64) -> RowGradient {
    let probs = policy.action_probs(current, goal, temperature);
    let values = probs
        .iter()
        .enumerate()
        .map(|(i, p)| ((if i == slot { 1.0 } else { 0.0 }) - p) / temperature)
        .collect();
    RowGradient { offset: policy.row_offset(current, goal), values }
}

/// Supervised pretraining settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    /// Label-smoothing floor mixed into the optimal-action target.
    pub smoothing: f64,
    pub max_iterations: usize,
    /// Iterations between accuracy scans.
    pub check_every: usize,
    pub scan_rollouts: usize,
    pub band: AccuracyBand,
    /// Fraction of questions that must be in band before stopping.
    pub target_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 0.5,
            smoothing: 0.02,
            max_iterations: 2000,
            check_every: 10,
            scan_rollouts: 32,
            band: AccuracyBand::new(30.0 / 32.0, 31.0 / 32.0),
            target_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub policy: Policy,
    pub in_band: Vec<Question>,
    pub iterations: usize,
    /// `(iteration, in-band fraction, mean accuracy)` at every check.
    pub history: Vec<(usize, f64, f64)>,
}

/// States on every shortest path from each question's start to its goal,
/// including the goal itself (where the optimal action is `STOP`).
pub fn demonstration_states(graph: &WorldGraph, questions: &[Question]) -> Vec<(NodeId, NodeId)> {
    let mut states = BTreeSet::new();
    for q in questions {
        let mut frontier = vec![q.start];
        while let Some(u) = frontier.pop() {
            if !states.insert((u, q.goal)) || u == q.goal {
                continue;
            }
            let d = graph.shortest_distance(u, q.goal);
            frontier.extend(graph.neighbors(u).iter().copied().filter(|&v| graph.shortest_distance(v, q.goal) + 1 == d));
        }
    }
    states.into_iter().collect()
}

/// Smoothed optimal-action target at `(current, goal)`.
pub fn optimal_target(graph: &WorldGraph, current: NodeId, goal: NodeId, smoothing: f64) -> Vec<f64> {
    let slots = graph.slot_count();
    let mut target = vec![0.0; slots];
    if current == goal {
        target[slots - 1] = 1.0;
    } else {
        let d = graph.shortest_distance(current, goal);
        let best: Vec<usize> = (0..slots - 1)
            .filter(|&s| graph.shortest_distance(graph.neighbors(current)[s], goal) + 1 == d)
            .collect();
        for &s in &best {
            target[s] = 1.0 / best.len() as f64;
        }
    }
    for t in &mut target {
        *t = (1.0 - smoothing) * *t + smoothing / slots as f64;
    }
    target
}

/// Cross-entropy pretraining toward shortest-path actions on the states of
/// `questions`' optimal routes, stopping once `config.target_fraction` of
/// the questions have a scanned accuracy inside `config.band`.
pub fn pretrain_to_saturation(
    mut policy: Policy,
    graph: &WorldGraph,
    questions: &[Question],
    config: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    policy.check_graph(graph)?;
    if questions.is_empty() {
        return Err(Error::InvalidParameter("pretraining needs at least one question".into()));
    }
    if !(0.0..1.0).contains(&config.smoothing) || config.check_every == 0 || config.scan_rollouts < 2 {
        return Err(Error::InvalidParameter("invalid pretraining configuration".into()));
    }
    for q in questions {
        graph.check_question(q)?;
    }
    let states = demonstration_states(graph, questions);
    let targets: Vec<Vec<f64>> =
        states.iter().map(|&(u, g)| optimal_target(graph, u, g, config.smoothing)).collect();
    let temperature = policy.temperature();
    let params = SamplingParams::training(&policy, graph);
    let stream = SeedStream::new(seed, Phase::Pretrain);
    let mut history = Vec::new();
    let mut best_fraction = 0.0f64;
    let mut iteration = 0;
    loop {
        if iteration % config.check_every == 0 && iteration > 0 {
            let check = stream.fork(iteration as u64);
            let accs = par::try_map_slice(questions, |q| {
                conditioning::estimate_accuracy(&policy, graph, q, &[], config.scan_rollouts, check, params)
                    .map(|p| (*q, p))
            })?;
            let in_band: Vec<Question> = accs
                .iter()
                .filter(|(_, p)| config.band.contains_count((p * config.scan_rollouts as f64).round() as usize, config.scan_rollouts))
                .map(|(q, _)| *q)
                .collect();
            let fraction = in_band.len() as f64 / questions.len() as f64;
            let mean_acc = accs.iter().map(|(_, p)| p).sum::<f64>() / accs.len() as f64;
            history.push((iteration, fraction, mean_acc));
            best_fraction = best_fraction.max(fraction);
            if fraction >= config.target_fraction && !in_band.is_empty() {
                return Ok(PretrainOutcome { policy, in_band, iterations: iteration, history });
            }
        }
        if iteration >= config.max_iterations {
            return Err(Error::BandUnreachable { iterations: iteration, best_fraction });
        }
        for (&(u, g), target) in states.iter().zip(&targets) {
            let probs = policy.action_probs(u, g, temperature);
            let lr = config.learning_rate;
            for ((w, p), t) in policy.row_mut(u, g).iter_mut().zip(probs).zip(target) {
                *w -= lr * (p - t) / temperature;
            }
        }
        iteration += 1;
    }
}

/// Versioned on-disk checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub graph: GraphKey,
    pub temperature: f64,
    /// Row-major `(current, goal, slot)` logits.
    pub logits: Vec<f64>,
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            graph: policy.graph,
            temperature: policy.temperature,
            logits: policy.logits.clone(),
        }
    }

    pub fn into_policy(self) -> Result<Policy> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Malformed(format!("unsupported checkpoint version {}", self.format_version)));
        }
        Policy::from_parts(self.graph, self.temperature, self.logits)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{verify, WorldConfig};
    use approx::assert_abs_diff_eq;

    fn world() -> WorldGraph {
        WorldGraph::build(WorldConfig::default()).unwrap()
    }

    #[test]
    fn uniform_rows() {
        let g = world();
        let p = Policy::uniform(&g);
        assert_eq!(p.logits().len(), 20 * 20 * 4);
        for lp in p.log_probs(3, 7, 1.0) {
            assert_abs_diff_eq!(lp, (0.25f64).ln(), epsilon = 1e-15);
        }
    }

    #[test]
    fn goal_biased_rejects_nonpositive_strength() {
        let g = world();
        assert!(Policy::init(&g, InitScheme::GoalBiased { strength: 0.0 }).is_err());
        assert!(Policy::init(&g, InitScheme::GoalBiased { strength: -1.0 }).is_err());
    }

    #[test]
    fn greedy_limit_walks_a_shortest_path() {
        let g = world();
        let p = Policy::init(&g, InitScheme::GoalBiased { strength: 1e3 }).unwrap();
        for q in g.enumerate_questions().iter().step_by(17) {
            let t = sample_rollout(&p, &g, &RolloutStart::fresh(&g, q), SamplingParams::training(&p, &g), 9);
            assert_eq!(t.reward, 1);
            assert_eq!(t.move_count(), g.shortest_distance(q.start, q.goal));
            assert_eq!(*t.actions.last().unwrap(), Action::Stop);
        }
    }

    #[test]
    fn rollouts_are_deterministic_and_verified() {
        let g = world();
        let p = Policy::init(&g, InitScheme::GoalBiased { strength: 1.0 }).unwrap();
        let params = SamplingParams::training(&p, &g);
        for q in g.enumerate_questions().iter().take(40) {
            let start = RolloutStart::fresh(&g, q);
            for seed in 0..5 {
                let a = sample_rollout(&p, &g, &start, params, seed);
                let b = sample_rollout(&p, &g, &start, params, seed);
                assert_eq!(a, b);
                assert_eq!(a.reward, verify(&g, q, &a));
                assert!(a.actions.len() <= g.budget());
                let recomputed = log_prob(&p, &g, q, &a, 1.0).unwrap();
                for (r, s) in recomputed.iter().zip(&a.step_logprobs) {
                    assert_eq!(r.logprob, *s);
                }
            }
        }
    }

    #[test]
    fn gradient_of_uniform_row() {
        let g = world();
        let p = Policy::uniform(&g);
        let grad = logprob_gradient(&p, 0, 1, 0, 1.0);
        assert_eq!(grad.values, vec![0.75, -0.25, -0.25, -0.25]);
        assert_eq!(grad.offset, p.row_offset(0, 1));
    }

    #[test]
    fn exhausted_prefix_scores_zero() {
        let g = world();
        let p = Policy::uniform(&g);
        let q = Question { question_id: 0, start: 0, goal: 1 };
        let mut prefix = vec![];
        let mut cur = 0;
        while prefix.len() < g.budget() {
            let next = *g.neighbors(cur).iter().find(|&&v| v != 1).unwrap();
            prefix.push(next);
            cur = next;
        }
        let start = RolloutStart::new(&g, &q, &prefix, g.budget()).unwrap();
        let t = sample_rollout(&p, &g, &start, SamplingParams::training(&p, &g), 0);
        assert_eq!(t.reward, 0);
        assert_eq!(t.continuation_len(), 0);
    }

    #[test]
    fn checkpoint_rejects_bad_shapes() {
        let g = world();
        let mut ck = Checkpoint::from_policy(&Policy::uniform(&g));
        ck.logits.pop();
        assert!(ck.into_policy().is_err());
        let mut ck = Checkpoint::from_policy(&Policy::uniform(&g));
        ck.format_version = 99;
        assert!(ck.into_policy().is_err());
    }

    #[test]
    fn optimal_target_sums_to_one() {
        let g = world();
        for (u, goal) in [(0, 0), (0, 5), (3, 9)] {
            let t = optimal_target(&g, u, goal, 0.1);
            assert_abs_diff_eq!(t.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }
}

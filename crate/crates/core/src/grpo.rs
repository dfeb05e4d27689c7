//! Group Relative Policy Optimization over the tabular policy.
//!
//! Each prompt is answered by a group of `N` rollouts whose binary rewards are
//! normalised into advantages `(r - mean) / (std + eps)`. The update minimises
//! the negated clip-higher surrogate, averaged per token within a trajectory,
//! then over the group, then over the prompts of the batch. Prefix tokens are
//! part of the prompt and never scored.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{NodeId, Question, Trajectory, WorldGraph};
use crate::error::{Error, Result};
use crate::par;
use crate::policy::{logprob_gradient, sample_rollout, Policy, RolloutStart, SamplingParams};
use crate::rng::{Phase, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub advantage_epsilon: f64,
    pub clip_low: f64,
    pub clip_high: f64,
    pub inner_iterations: usize,
    pub learning_rate: f64,
    /// Prompts per gradient step.
    pub batch_size: usize,
    pub total_steps: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 16,
            advantage_epsilon: 1e-4,
            clip_low: 0.2,
            clip_high: 0.4,
            inner_iterations: 2,
            learning_rate: 30.0,
            batch_size: 16,
            total_steps: 200,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidParameter("group_size must be >= 2".into()));
        }
        if !(self.clip_low > 0.0 && self.clip_low <= self.clip_high && self.clip_high < 1.0) {
            return Err(Error::InvalidParameter("clip bounds must satisfy 0 < low <= high < 1".into()));
        }
        if !(self.advantage_epsilon > 0.0) || self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("advantage_epsilon must be positive and learning_rate nonnegative".into()));
        }
        if self.inner_iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("inner_iterations and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// A training prompt: a question, optionally extended by a forced prefix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub question: Question,
    #[serde(default)]
    pub prefix: Vec<NodeId>,
}

impl Prompt {
    pub fn plain(question: Question) -> Self {
        Prompt { question, prefix: Vec::new() }
    }
}

/// `A_i = (r_i - μ) / (σ + ε)` with the population standard deviation.
pub fn compute_advantages(rewards: &[u8], epsilon: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::InvalidParameter("advantages need a group of at least two rewards".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("advantage epsilon must be positive".into()));
    }
    let (mean, std) = reward_moments(rewards);
    Ok(rewards.iter().map(|&r| (f64::from(r) - mean) / (std + epsilon)).collect())
}

fn reward_moments(rewards: &[u8]) -> (f64, f64) {
    let n = rewards.len() as f64;
    let mean = rewards.iter().map(|&r| f64::from(r)).sum::<f64>() / n;
    let var = rewards.iter().map(|&r| (f64::from(r) - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Closed-form advantages of a correct and an incorrect rollout at exact success rate `p`.
pub fn piecewise_advantage(p: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Degenerate(format!("success rate {p} has zero reward variance")));
    }
    Ok((((1.0 - p) / p).sqrt(), -(p / (1.0 - p)).sqrt()))
}

/// `ω(p) = sqrt(p (1 - p))`, the reward standard deviation of a question.
pub fn question_weight(p: f64) -> f64 {
    (p * (1.0 - p)).max(0.0).sqrt()
}

/// `min(ratio · A, clip(ratio, 1 - ε_low, 1 + ε_high) · A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_low: f64, clip_high: f64) -> Result<f64> {
    if !(ratio > 0.0) {
        return Err(Error::InvalidParameter(format!("likelihood ratio must be positive, got {ratio}")));
    }
    if !(clip_low > 0.0 && clip_low <= clip_high && clip_high < 1.0) {
        return Err(Error::InvalidParameter("invalid clip bounds".into()));
    }
    Ok(surrogate_terms(ratio, advantage, clip_low, clip_high).0)
}

/// Surrogate value and whether the clipped branch is strictly active.
#[inline]
fn surrogate_terms(ratio: f64, advantage: f64, clip_low: f64, clip_high: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_low, 1.0 + clip_high) * advantage;
    if clipped < unclipped {
        (clipped, true)
    } else {
        (unclipped, false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt: Prompt,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<u8>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(prompt: Prompt, trajectories: Vec<Trajectory>, epsilon: f64) -> Result<Self> {
        let rewards: Vec<u8> = trajectories.iter().map(|t| t.reward).collect();
        let advantages = compute_advantages(&rewards, epsilon)?;
        let (mean, std) = reward_moments(&rewards);
        Ok(RolloutGroup { prompt, trajectories, rewards, mean, std, advantages })
    }

    pub fn is_degenerate(&self) -> bool {
        self.advantages.iter().all(|&a| a == 0.0)
    }
}

/// Samples `n` rollouts for `prompt` with seeds `stream.seed(question_id, i)`.
pub fn sample_group(
    policy: &Policy,
    graph: &WorldGraph,
    prompt: &Prompt,
    n: usize,
    epsilon: f64,
    stream: SeedStream,
) -> Result<RolloutGroup> {
    let params = SamplingParams::training(policy, graph);
    let start = RolloutStart::new(graph, &prompt.question, &prompt.prefix, params.budget)?;
    let qid = prompt.question.question_id;
    let trajectories = (0..n).map(|i| sample_rollout(policy, graph, &start, params, stream.seed(qid, i as u64))).collect();
    RolloutGroup::new(prompt.clone(), trajectories, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    /// L2 norm of the first (on-policy) inner-iteration gradient.
    pub grad_norm: f64,
    /// Fraction of scored tokens whose clipped branch was active, over all inner iterations.
    pub clip_fraction: f64,
}

struct GroupGradient {
    grad: Vec<f64>,
    tokens: usize,
    clipped: usize,
}

fn group_gradient(policy: &Policy, graph: &WorldGraph, group: &RolloutGroup, config: &GrpoConfig) -> GroupGradient {
    let mut grad = vec![0.0; policy.logits().len()];
    let mut tokens = 0;
    let mut clipped = 0;
    let temperature = policy.temperature();
    let n = group.trajectories.len() as f64;
    let goal = group.prompt.question.goal;
    for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
        let scored = traj.continuation_len();
        if scored == 0 {
            continue;
        }
        let weight = 1.0 / (n * scored as f64);
        let mut cur = group.prompt.question.start;
        for (t, &action) in traj.actions.iter().enumerate() {
            let slot = graph.slot_of(cur, action).expect("trajectory is legal for its world");
            if t >= traj.prefix_len {
                tokens += 1;
                let lp_new = policy.log_probs(cur, goal, temperature)[slot];
                let ratio = (lp_new - traj.step_logprobs[t]).exp();
                let (_, is_clipped) = surrogate_terms(ratio, adv, config.clip_low, config.clip_high);
                if is_clipped {
                    clipped += 1;
                } else if adv != 0.0 {
                    // d(-ratio·A)/dθ = -A · ratio · ∇ log π
                    let g = logprob_gradient(policy, cur, goal, slot, temperature);
                    let scale = -weight * adv * ratio;
                    for (k, v) in g.values.iter().enumerate() {
                        grad[g.offset + k] += scale * v;
                    }
                }
            }
            if let crate::env::Action::Move(v) = action {
                cur = v;
            }
        }
    }
    GroupGradient { grad, tokens, clipped }
}

/// One GRPO update: `config.inner_iterations` gradient-descent steps on the
/// same batch of groups, each recomputing likelihood ratios against the
/// sampling-time log-probabilities.
pub fn grpo_step(policy: &mut Policy, graph: &WorldGraph, batch: &[RolloutGroup], config: &GrpoConfig) -> Result<StepStats> {
    policy.check_graph(graph)?;
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    for group in batch {
        for t in &group.trajectories {
            if t.question_id != group.prompt.question.question_id || t.step_logprobs.len() != t.actions.len() {
                return Err(Error::Malformed("group trajectories do not belong to the group prompt".into()));
            }
        }
    }
    let rollouts: usize = batch.iter().map(|g| g.rewards.len()).sum();
    let mean_reward = batch.iter().flat_map(|g| &g.rewards).map(|&r| f64::from(r)).sum::<f64>() / rollouts as f64;
    let mean_abs_advantage = batch.iter().flat_map(|g| &g.advantages).map(|a| a.abs()).sum::<f64>() / rollouts as f64;

    let active: Vec<&RolloutGroup> = batch.iter().filter(|g| !g.is_degenerate()).collect();
    let mut grad_norm = 0.0;
    let mut tokens = 0usize;
    let mut clipped = 0usize;
    for iteration in 0..config.inner_iterations {
        let per_group = par::map_slice(&active, |g| group_gradient(policy, graph, g, config));
        let mut total = vec![0.0; policy.logits().len()];
        for gg in &per_group {
            tokens += gg.tokens;
            clipped += gg.clipped;
            for (t, v) in total.iter_mut().zip(&gg.grad) {
                *t += v;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        total.iter_mut().for_each(|v| *v *= scale);
        if iteration == 0 {
            grad_norm = total.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        policy.apply_gradient(&total, config.learning_rate);
    }
    // Degenerate groups still count their tokens as scored, unclipped.
    for g in batch.iter().filter(|g| g.is_degenerate()) {
        tokens += config.inner_iterations * g.trajectories.iter().map(Trajectory::continuation_len).sum::<usize>();
    }
    let clip_fraction = if tokens == 0 { 0.0 } else { clipped as f64 / tokens as f64 };
    Ok(StepStats { mean_reward, mean_abs_advantage, grad_norm, clip_fraction })
}

/// One row of the training metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "step,mean_reward,mean_abs_advantage,grad_norm,clip_fraction,wall_ms";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.mean_reward, self.mean_abs_advantage, self.grad_norm, self.clip_fraction, self.wall_ms
        )
    }
}

/// Cadence and bookkeeping options for [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainOptions {
    /// Global step the run starts from (nonzero when resuming from a checkpoint).
    pub start_step: usize,
    /// Call the evaluation hook every this many steps (and at start and end).
    pub eval_every: Option<usize>,
    pub checkpoint_every: Option<usize>,
    /// Record wall-clock milliseconds in the metric log; off keeps logs byte-reproducible.
    pub record_timing: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub metrics: Vec<StepMetrics>,
    /// `(global step, parameters after that many updates)`.
    pub checkpoints: Vec<(usize, Policy)>,
}

/// Dataset position `pos` of an endless stream of seeded epoch permutations.
fn dataset_index(len: usize, pos: usize, stream: SeedStream) -> usize {
    use rand::seq::SliceRandom;
    let epoch = pos / len;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream.rng(epoch as u64, 0));
    order[pos % len]
}

/// Runs `config.total_steps` GRPO steps over `dataset`.
///
/// Batches and rollout seeds depend only on `(seed, global step)`, so a run
/// resumed from a checkpoint at step `k` with `start_step = k` continues
/// exactly as the uninterrupted run would have.
pub fn train(
    mut policy: Policy,
    graph: &WorldGraph,
    dataset: &[Prompt],
    config: &GrpoConfig,
    options: TrainOptions,
    seed: u64,
    mut eval_hook: Option<&mut dyn FnMut(usize, &Policy) -> Result<()>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    policy.check_graph(graph)?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("training dataset is empty".into()));
    }
    for p in dataset {
        RolloutStart::new(graph, &p.question, &p.prefix, graph.budget())?;
    }
    let batch_stream = SeedStream::new(seed, Phase::Batch);
    let rollout_stream = SeedStream::new(seed, Phase::Train);
    let start = options.start_step;
    let end = start + config.total_steps;
    let due = |every: Option<usize>, step: usize| every.is_some_and(|e| e > 0 && step % e == 0);
    let mut metrics = Vec::with_capacity(config.total_steps);
    let mut checkpoints = Vec::new();

    for step in start..end {
        if due(options.checkpoint_every, step) {
            checkpoints.push((step, policy.clone()));
        }
        if let Some(hook) = eval_hook.as_deref_mut() {
            if step == start || due(options.eval_every, step) {
                hook(step, &policy)?;
            }
        }
        let clock = Instant::now();
        let prompts: Vec<&Prompt> = (0..config.batch_size)
            .map(|slot| &dataset[dataset_index(dataset.len(), step * config.batch_size + slot, batch_stream)])
            .collect();
        let step_stream = rollout_stream.fork(step as u64);
        let batch = par::try_map_range(prompts.len(), |slot| {
            sample_group(&policy, graph, prompts[slot], config.group_size, config.advantage_epsilon, step_stream.fork(slot as u64))
        })?;
        let stats = grpo_step(&mut policy, graph, &batch, config)?;
        metrics.push(StepMetrics {
            step: step + 1,
            mean_reward: stats.mean_reward,
            mean_abs_advantage: stats.mean_abs_advantage,
            grad_norm: stats.grad_norm,
            clip_fraction: stats.clip_fraction,
            wall_ms: if options.record_timing { clock.elapsed().as_millis() as u64 } else { 0 },
        });
    }
    if due(options.checkpoint_every, end) {
        checkpoints.push((end, policy.clone()));
    }
    if let Some(hook) = eval_hook.as_deref_mut() {
        if end != start || options.eval_every.is_some() {
            hook(end, &policy)?;
        }
    }
    Ok(TrainOutcome { policy, metrics, checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn advantages_of_constant_group_are_zero() {
        assert_eq!(compute_advantages(&[1, 1, 1, 1], 1e-4).unwrap(), vec![0.0; 4]);
        assert_eq!(compute_advantages(&[0, 0, 0], 1e-4).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn two_sample_advantages() {
        let a = compute_advantages(&[1, 0], 1e-4).unwrap();
        assert_abs_diff_eq!(a[0], 0.5 / 0.5001, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], -0.5 / 0.5001, epsilon = 1e-15);
    }

    #[test]
    fn advantage_errors() {
        assert!(compute_advantages(&[], 1e-4).is_err());
        assert!(compute_advantages(&[1], 1e-4).is_err());
        assert!(compute_advantages(&[1, 0], 0.0).is_err());
        assert!(piecewise_advantage(0.0).is_err());
        assert!(piecewise_advantage(1.0).is_err());
    }

    #[test]
    fn piecewise_values() {
        assert_eq!(piecewise_advantage(0.5).unwrap(), (1.0, -1.0));
        let (p, m) = piecewise_advantage(0.75).unwrap();
        assert_abs_diff_eq!(p, (1.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(m, -(3.0f64).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn weights() {
        assert_eq!(question_weight(0.5), 0.5);
        assert_eq!(question_weight(0.0), 0.0);
        assert_eq!(question_weight(1.0), 0.0);
        assert_abs_diff_eq!(question_weight(31.0 / 32.0), 0.173_993, epsilon = 1e-6);
    }

    #[test]
    fn surrogate_branches() {
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2, 0.4).unwrap(), 0.7);
        assert_abs_diff_eq!(clipped_surrogate(1.5, 1.0, 0.2, 0.4).unwrap(), 1.4, epsilon = 1e-15);
        assert_abs_diff_eq!(clipped_surrogate(0.5, -1.0, 0.2, 0.4).unwrap(), -0.8, epsilon = 1e-15);
        // no clipping when the clipped side would be larger
        assert_eq!(clipped_surrogate(0.5, 1.0, 0.2, 0.4).unwrap(), 0.5);
        assert!(clipped_surrogate(0.0, 1.0, 0.2, 0.4).is_err());
        assert!(clipped_surrogate(1.0, 1.0, 0.5, 0.4).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GrpoConfig::default().validate().is_ok());
        assert!(GrpoConfig { group_size: 1, ..Default::default() }.validate().is_err());
        assert!(GrpoConfig { clip_low: 0.5, clip_high: 0.4, ..Default::default() }.validate().is_err());
    }
}

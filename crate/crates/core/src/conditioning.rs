//! Failure-prefix conditioning.
//!
//! Saturated questions are found by scanning rollout accuracy. For each one a
//! rare incorrect rollout is sliced into prefixes, the prefix-conditioned
//! accuracy of every slice is estimated, and the slice whose accuracy is
//! closest to a target `tau` becomes the training prompt. The refresh variant
//! harvests new failures from an updated policy and also considers the empty
//! prefix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{NodeId, Question, Trajectory, WorldGraph};
use crate::error::{Error, Result};
use crate::grpo::Prompt;
use crate::par;
use crate::policy::{sample_rollout, Policy, RolloutStart, SamplingParams};
use crate::rng::{Phase, SeedStream};

/// Closed accuracy interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBand {
    pub low: f64,
    pub high: f64,
}

const BAND_TOLERANCE: f64 = 1e-9;

impl AccuracyBand {
    pub fn new(low: f64, high: f64) -> Self {
        AccuracyBand { low, high }
    }

    /// Band containing exactly `c / n`.
    pub fn exact(c: usize, n: usize) -> Self {
        let p = c as f64 / n as f64;
        AccuracyBand { low: p, high: p }
    }

    pub fn contains(&self, p: f64) -> bool {
        p >= self.low - BAND_TOLERANCE && p <= self.high + BAND_TOLERANCE
    }

    pub fn contains_count(&self, correct: usize, n: usize) -> bool {
        self.contains(correct as f64 / n as f64)
    }
}

impl fmt::Display for AccuracyBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.low, self.high)
    }
}

fn parse_ratio(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| Error::InvalidParameter(format!("bad ratio {s:?}")))?;
            let b: f64 = b.trim().parse().map_err(|_| Error::InvalidParameter(format!("bad ratio {s:?}")))?;
            if b == 0.0 {
                return Err(Error::InvalidParameter(format!("zero denominator in {s:?}")));
            }
            a / b
        }
        None => s.parse().map_err(|_| Error::InvalidParameter(format!("bad accuracy {s:?}")))?,
    };
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidParameter(format!("accuracy {s:?} outside [0, 1]")));
    }
    Ok(v)
}

impl FromStr for AccuracyBand {
    type Err = Error;

    /// Accepts `31/32`, `0.5`, `30/32..31/32` or `0.9..1.0`.
    fn from_str(s: &str) -> Result<Self> {
        let band = match s.split_once("..") {
            Some((lo, hi)) => AccuracyBand::new(parse_ratio(lo)?, parse_ratio(hi)?),
            None => {
                let p = parse_ratio(s)?;
                AccuracyBand::new(p, p)
            }
        };
        if band.low > band.high {
            return Err(Error::InvalidParameter(format!("empty band {s:?}")));
        }
        Ok(band)
    }
}

/// Seed stream used by [`scan_saturated`] for a given run seed.
pub fn scan_stream(seed: u64) -> SeedStream {
    SeedStream::new(seed, Phase::Scan)
}

/// Samples `n` continuations of `question ⊕ prefix`; rollout `i` uses seed
/// `stream.seed(question_id, i)`.
pub fn sample_continuations(
    policy: &Policy,
    graph: &WorldGraph,
    question: &Question,
    prefix: &[NodeId],
    n: usize,
    stream: SeedStream,
    params: SamplingParams,
) -> Result<Vec<Trajectory>> {
    let start = RolloutStart::new(graph, question, prefix, params.budget)?;
    Ok((0..n)
        .map(|i| sample_rollout(policy, graph, &start, params, stream.seed(question.question_id, i as u64)))
        .collect())
}

/// Fraction of `n` continuations of `question ⊕ prefix` that are correct.
pub fn estimate_accuracy(
    policy: &Policy,
    graph: &WorldGraph,
    question: &Question,
    prefix: &[NodeId],
    n: usize,
    stream: SeedStream,
    params: SamplingParams,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("accuracy estimate needs at least one rollout".into()));
    }
    let start = RolloutStart::new(graph, question, prefix, params.budget)?;
    let correct: usize = (0..n)
        .map(|i| usize::from(sample_rollout(policy, graph, &start, params, stream.seed(question.question_id, i as u64)).reward))
        .sum();
    Ok(correct as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationScan {
    pub question: Question,
    pub n_scan: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub in_band: bool,
    /// First incorrect rollout by index; present iff `correct < n_scan`.
    pub failure: Option<Trajectory>,
}

/// Runs `n_scan` rollouts per question and marks those whose accuracy lies in `band`.
pub fn scan_saturated(
    policy: &Policy,
    graph: &WorldGraph,
    questions: &[Question],
    n_scan: usize,
    band: AccuracyBand,
    seed: u64,
    params: SamplingParams,
) -> Result<Vec<SaturationScan>> {
    policy.check_graph(graph)?;
    if n_scan < 2 {
        return Err(Error::InvalidParameter("n_scan must be >= 2".into()));
    }
    let stream = scan_stream(seed);
    par::try_map_slice(questions, |q| {
        let rollouts = sample_continuations(policy, graph, q, &[], n_scan, stream, params)?;
        let correct = rollouts.iter().filter(|t| t.reward == 1).count();
        let failure = rollouts.into_iter().find(|t| t.reward == 0);
        Ok(SaturationScan {
            question: *q,
            n_scan,
            correct,
            accuracy: correct as f64 / n_scan as f64,
            in_band: band.contains_count(correct, n_scan),
            failure,
        })
    })
}

/// `10%, 20%, …, 90%`.
pub fn default_fractions() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

/// Prefix length for `fraction` of a trajectory with `moves` move actions:
/// `max(1, floor(fraction · moves))`, capped at `moves`; zero for fraction 0.
pub fn prefix_length(fraction: f64, moves: usize) -> usize {
    if fraction <= 0.0 {
        return 0;
    }
    ((fraction * moves as f64 + 1e-9).floor() as usize).max(1).min(moves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixCandidate {
    pub alpha: usize,
    pub fraction: f64,
    pub prefix: Vec<NodeId>,
}

/// Slices `failure` into prefix candidates, one per distinct length. When two
/// fractions give the same length the smaller fraction label is kept.
pub fn slice_prefixes(failure: &Trajectory, fractions: &[f64], include_zero: bool) -> Result<Vec<PrefixCandidate>> {
    let moves = failure.moves();
    if moves.is_empty() && !include_zero {
        return Err(Error::Degenerate("failure trajectory has no moves to slice".into()));
    }
    let mut sorted: Vec<f64> = fractions.to_vec();
    if sorted.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidParameter("prefix fractions must lie in (0, 1]".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<PrefixCandidate> = Vec::new();
    if include_zero {
        out.push(PrefixCandidate { alpha: 0, fraction: 0.0, prefix: Vec::new() });
    }
    if moves.is_empty() {
        return Ok(out);
    }
    for f in sorted {
        let alpha = prefix_length(f, moves.len());
        if out.iter().any(|c| c.alpha == alpha) {
            continue;
        }
        out.push(PrefixCandidate { alpha, fraction: f, prefix: moves[..alpha].to_vec() });
    }
    Ok(out)
}

/// Index of the accuracy closest to `tau`; ties go to the earliest (shortest) entry.
pub fn closest_to_target(accuracies: &[f64], tau: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &a) in accuracies.iter().enumerate() {
        let d = (a - tau).abs();
        match best {
            Some((_, bd)) if d >= bd - 1e-12 => {}
            _ => best = Some((i, d)),
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Iter1,
    Iter2,
}

/// One element of the prefix-conditioned dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedRecord {
    pub question_id: u64,
    pub start: NodeId,
    pub goal: NodeId,
    pub prefix: Vec<NodeId>,
    pub fraction: f64,
    pub selected_accuracy: f64,
    pub tau: f64,
    pub source: DatasetSource,
}

impl ConditionedRecord {
    pub fn question(&self) -> Question {
        Question { question_id: self.question_id, start: self.start, goal: self.goal }
    }

    pub fn prompt(&self) -> Prompt {
        Prompt { question: self.question(), prefix: self.prefix.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: usize,
    pub fraction: f64,
    pub accuracy: f64,
}

/// All candidates evaluated for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSweep {
    pub question_id: u64,
    /// Move count of the source failure.
    pub failure_moves: usize,
    pub failure: Trajectory,
    pub points: Vec<SweepPoint>,
    pub chosen: usize,
}

impl QuestionSweep {
    /// Accuracy at `fraction`, resolved through the prefix-length rule.
    pub fn accuracy_at(&self, fraction: f64) -> Option<f64> {
        let alpha = prefix_length(fraction, self.failure_moves);
        self.points.iter().find(|p| p.alpha == alpha).map(|p| p.accuracy)
    }
}

/// Estimates every candidate and returns the selected record plus the sweep.
#[allow(clippy::too_many_arguments)]
pub fn select_prefix(
    policy: &Policy,
    graph: &WorldGraph,
    question: &Question,
    candidates: &[PrefixCandidate],
    tau: f64,
    n: usize,
    stream: SeedStream,
    params: SamplingParams,
) -> Result<(ConditionedRecord, Vec<SweepPoint>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no prefix candidates".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("tau must lie in (0, 1), got {tau}")));
    }
    let points = candidates
        .iter()
        .map(|c| {
            let acc = estimate_accuracy(policy, graph, question, &c.prefix, n, stream.fork(c.alpha as u64), params)?;
            Ok(SweepPoint { alpha: c.alpha, fraction: c.fraction, accuracy: acc })
        })
        .collect::<Result<Vec<_>>>()?;
    // shortest first, so ties resolve toward the shorter prefix
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| candidates[i].alpha);
    let accs: Vec<f64> = order.iter().map(|&i| points[i].accuracy).collect();
    let chosen = order[closest_to_target(&accs, tau).expect("nonempty")];
    let c = &candidates[chosen];
    let record = ConditionedRecord {
        question_id: question.question_id,
        start: question.start,
        goal: question.goal,
        prefix: c.prefix.clone(),
        fraction: c.fraction,
        selected_accuracy: points[chosen].accuracy,
        tau,
        source: DatasetSource::Iter1,
    };
    Ok((record, points))
}

/// Parameters shared by dataset construction and refresh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditioningConfig {
    pub tau: f64,
    pub fractions: Vec<f64>,
    /// Rollouts per prefix accuracy estimate.
    pub rollouts: usize,
    pub max_attempts: usize,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        ConditioningConfig { tau: 0.5, fractions: default_fractions(), rollouts: 32, max_attempts: 128 }
    }
}

/// Histogram bucket counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub buckets: Vec<(String, usize)>,
}

impl Histogram {
    pub fn to_csv(&self, header: &str) -> String {
        let mut s = format!("{header},count\n");
        for (b, c) in &self.buckets {
            s.push_str(&format!("{b},{c}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub fraction_histogram: Histogram,
    pub accuracy_histogram: Histogram,
    pub mean_selected_fraction: f64,
    pub mean_selected_accuracy: f64,
    /// Questions dropped because their failure had no moves to slice.
    pub skipped_no_moves: Vec<u64>,
}

impl Diagnostics {
    fn from_records(records: &[ConditionedRecord], skipped_no_moves: Vec<u64>) -> Self {
        let mut frac_counts = vec![0usize; 10];
        let mut acc_counts = vec![0usize; 10];
        for r in records {
            frac_counts[((r.fraction * 10.0 + 1e-9).floor() as usize).min(9)] += 1;
            acc_counts[((r.selected_accuracy * 10.0).floor() as usize).min(9)] += 1;
        }
        let fraction_histogram = Histogram {
            buckets: frac_counts.into_iter().enumerate().map(|(i, c)| (format!("{:.1}", i as f64 / 10.0), c)).collect(),
        };
        let accuracy_histogram = Histogram {
            buckets: acc_counts
                .into_iter()
                .enumerate()
                .map(|(i, c)| (format!("{:.1}-{:.1}", i as f64 / 10.0, (i + 1) as f64 / 10.0), c))
                .collect(),
        };
        let n = records.len().max(1) as f64;
        Diagnostics {
            fraction_histogram,
            accuracy_histogram,
            mean_selected_fraction: records.iter().map(|r| r.fraction).sum::<f64>() / n,
            mean_selected_accuracy: records.iter().map(|r| r.selected_accuracy).sum::<f64>() / n,
            skipped_no_moves,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedDataset {
    /// Ordered by question id.
    pub records: Vec<ConditionedRecord>,
    pub sweeps: Vec<QuestionSweep>,
    pub diagnostics: Diagnostics,
}

impl ConditionedDataset {
    pub fn prompts(&self) -> Vec<Prompt> {
        self.records.iter().map(ConditionedRecord::prompt).collect()
    }

    pub fn to_jsonl(&self) -> String {
        crate::io::to_jsonl(&self.records)
    }

    /// Question-averaged prefix-conditioned accuracy at each fraction.
    pub fn mean_accuracy_by_fraction(&self, fractions: &[f64]) -> Vec<f64> {
        fractions
            .iter()
            .map(|&f| {
                let vals: Vec<f64> = self.sweeps.iter().filter_map(|s| s.accuracy_at(f)).collect();
                crate::stats::mean(&vals)
            })
            .collect()
    }
}

fn sweep_stream(seed: u64, source: DatasetSource) -> SeedStream {
    SeedStream::new(seed, Phase::Sweep).fork(source as u64)
}

fn condition_failures(
    policy: &Policy,
    graph: &WorldGraph,
    failures: Vec<(Question, Trajectory)>,
    config: &ConditioningConfig,
    include_zero: bool,
    source: DatasetSource,
    seed: u64,
    params: SamplingParams,
) -> Result<ConditionedDataset> {
    let stream = sweep_stream(seed, source);
    let results = par::try_map_slice(&failures, |(q, failure)| {
        if failure.move_count() == 0 && !include_zero {
            return Ok(None);
        }
        let candidates = slice_prefixes(failure, &config.fractions, include_zero)?;
        let (mut record, points) =
            select_prefix(policy, graph, q, &candidates, config.tau, config.rollouts, stream.fork(q.question_id), params)?;
        record.source = source;
        let chosen = points.iter().position(|p| p.alpha == record.prefix.len()).expect("chosen point present");
        let sweep = QuestionSweep {
            question_id: q.question_id,
            failure_moves: failure.move_count(),
            failure: failure.clone(),
            points,
            chosen,
        };
        Ok(Some((record, sweep)))
    })?;
    let mut records = Vec::new();
    let mut sweeps = Vec::new();
    let mut skipped = Vec::new();
    for ((q, _), r) in failures.iter().zip(results) {
        match r {
            Some((rec, sw)) => {
                records.push(rec);
                sweeps.push(sw);
            }
            None => skipped.push(q.question_id),
        }
    }
    let diagnostics = Diagnostics::from_records(&records, skipped);
    Ok(ConditionedDataset { records, sweeps, diagnostics })
}

/// Builds the prefix-conditioned dataset from saturated scans.
pub fn build_dataset(
    policy: &Policy,
    graph: &WorldGraph,
    scans: &[SaturationScan],
    config: &ConditioningConfig,
    seed: u64,
    params: SamplingParams,
) -> Result<ConditionedDataset> {
    policy.check_graph(graph)?;
    let mut failures: Vec<(Question, Trajectory)> = scans
        .iter()
        .map(|s| {
            s.failure.clone().map(|f| (s.question, f)).ok_or_else(|| {
                Error::InvalidParameter(format!("scan of question {} carries no failure", s.question.question_id))
            })
        })
        .collect::<Result<_>>()?;
    failures.sort_by_key(|(q, _)| q.question_id);
    condition_failures(policy, graph, failures, config, false, DatasetSource::Iter1, seed, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Harvest {
    pub failure: Option<Trajectory>,
    pub attempts: usize,
}

/// Samples rollouts one at a time until one is incorrect, up to `max_attempts`.
pub fn harvest_failure(
    policy: &Policy,
    graph: &WorldGraph,
    question: &Question,
    max_attempts: usize,
    stream: SeedStream,
    params: SamplingParams,
) -> Result<Harvest> {
    if max_attempts == 0 {
        return Err(Error::InvalidParameter("max_attempts must be >= 1".into()));
    }
    let start = RolloutStart::new(graph, question, &[], params.budget)?;
    for attempt in 0..max_attempts {
        let t = sample_rollout(policy, graph, &start, params, stream.seed(question.question_id, attempt as u64));
        if t.reward == 0 {
            return Ok(Harvest { failure: Some(t), attempts: attempt + 1 });
        }
    }
    Ok(Harvest { failure: None, attempts: max_attempts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshStatus {
    Ok,
    /// No question produced a failure within the attempt cap.
    EmptyWarning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefreshOutcome {
    pub dataset: ConditionedDataset,
    /// Questions that were correct on every harvest attempt.
    pub excluded: Vec<u64>,
    pub status: RefreshStatus,
}

/// Re-harvests failures from the current policy and rebuilds the dataset,
/// sweeping the empty prefix as well.
pub fn refresh_dataset(
    policy: &Policy,
    graph: &WorldGraph,
    questions: &[Question],
    config: &ConditioningConfig,
    seed: u64,
    params: SamplingParams,
) -> Result<RefreshOutcome> {
    policy.check_graph(graph)?;
    let stream = SeedStream::new(seed, Phase::Harvest);
    let harvests =
        par::try_map_slice(questions, |q| harvest_failure(policy, graph, q, config.max_attempts, stream, params))?;
    let mut failures = Vec::new();
    let mut excluded = Vec::new();
    for (q, h) in questions.iter().zip(harvests) {
        match h.failure {
            Some(f) => failures.push((*q, f)),
            None => excluded.push(q.question_id),
        }
    }
    failures.sort_by_key(|(q, _)| q.question_id);
    excluded.sort_unstable();
    let dataset = condition_failures(policy, graph, failures, config, true, DatasetSource::Iter2, seed, params)?;
    let status = if dataset.records.is_empty() { RefreshStatus::EmptyWarning } else { RefreshStatus::Ok };
    if status == RefreshStatus::EmptyWarning {
        log::warn!("refresh produced an empty dataset: every question was perfect over {} attempts", config.max_attempts);
    }
    Ok(RefreshOutcome { dataset, excluded, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, TerminalReason};

    fn failure_with_moves(moves: &[NodeId], stop: bool) -> Trajectory {
        let mut actions: Vec<Action> = moves.iter().map(|&m| Action::Move(m)).collect();
        if stop {
            actions.push(Action::Stop);
        }
        let n = actions.len();
        Trajectory {
            question_id: 0,
            actions,
            prefix_len: 0,
            reward: 0,
            step_logprobs: vec![-1.0; n],
            terminal_reason: if stop { TerminalReason::Stopped } else { TerminalReason::BudgetExhausted },
        }
    }

    #[test]
    fn band_parsing() {
        assert_eq!("31/32".parse::<AccuracyBand>().unwrap(), AccuracyBand::exact(31, 32));
        let b: AccuracyBand = "14/32..18/32".parse().unwrap();
        assert!(b.contains_count(16, 32) && !b.contains_count(19, 32));
        assert!("0.9..0.5".parse::<AccuracyBand>().is_err());
        assert!("3/0".parse::<AccuracyBand>().is_err());
        assert!("1.5".parse::<AccuracyBand>().is_err());
        assert!(AccuracyBand::exact(31, 32).contains_count(31, 32));
        assert!(!AccuracyBand::exact(31, 32).contains_count(32, 32));
    }

    #[test]
    fn ten_move_failure_gives_nine_prefixes() {
        let f = failure_with_moves(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], true);
        let c = slice_prefixes(&f, &default_fractions(), false).unwrap();
        assert_eq!(c.iter().map(|c| c.alpha).collect::<Vec<_>>(), (1..=9).collect::<Vec<_>>());
        for cand in &c {
            assert_eq!(cand.prefix.len(), cand.alpha);
        }
    }

    #[test]
    fn short_failure_dedupes_lengths() {
        let f = failure_with_moves(&[4, 5, 6], true);
        let c = slice_prefixes(&f, &default_fractions(), false).unwrap();
        // floor(f*3): 0.1..0.3 -> 1 (max rule), 0.4..0.6 -> 1, 0.7..0.9 -> 2
        assert_eq!(c.iter().map(|c| c.alpha).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(c[0].fraction, 0.1);
        assert_eq!(c[1].fraction, 0.7);
        let z = slice_prefixes(&f, &default_fractions(), true).unwrap();
        assert_eq!(z.iter().map(|c| c.alpha).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn stop_never_enters_a_prefix() {
        let f = failure_with_moves(&[1], true);
        for c in slice_prefixes(&f, &default_fractions(), false).unwrap() {
            assert_eq!(c.prefix, vec![1]);
        }
    }

    #[test]
    fn moveless_failure() {
        let f = failure_with_moves(&[], true);
        assert!(slice_prefixes(&f, &default_fractions(), false).is_err());
        let z = slice_prefixes(&f, &default_fractions(), true).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z[0].alpha, 0);
    }

    #[test]
    fn closest_selection() {
        assert_eq!(closest_to_target(&[0.9, 0.7, 0.55, 0.4, 0.2], 0.5), Some(2));
        assert_eq!(closest_to_target(&[0.6, 0.4], 0.5), Some(0));
        assert_eq!(closest_to_target(&[], 0.5), None);
    }

    #[test]
    fn prefix_length_rule() {
        assert_eq!(prefix_length(0.0, 7), 0);
        assert_eq!(prefix_length(0.1, 7), 1);
        assert_eq!(prefix_length(0.3, 10), 3);
        assert_eq!(prefix_length(0.7, 10), 7);
        assert_eq!(prefix_length(0.9, 1), 1);
    }
}

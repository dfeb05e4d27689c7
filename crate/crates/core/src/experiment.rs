//! End-to-end comparisons built from the other modules.
//!
//! Every pipeline starts from the same world and question split, pretrains a
//! base policy per replicate seed, scans it for saturated and medium-accuracy
//! questions, and trains arms that differ only in their dataset. Replicates
//! are independent; their spread is the noise band for the summaries.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::conditioning::{
    build_dataset, refresh_dataset, scan_saturated, AccuracyBand, ConditionedDataset, ConditioningConfig,
    RefreshOutcome, SaturationScan,
};
use crate::env::{Question, WorldConfig, WorldGraph};
use crate::error::{Error, Result};
use crate::eval::{evaluate, qualifying_intersection, recovery_curve_on, RecoveryConfig, RecoveryCurve, RecoveryMode};
use crate::grpo::{train, GrpoConfig, Prompt, StepMetrics, TrainOptions};
use crate::io;
use crate::policy::{pretrain_to_saturation, InitScheme, Policy, PretrainConfig, SamplingParams};
use crate::rng::{Phase, SeedStream};
use crate::stats;

/// Where an arm's training prompts come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmSource {
    SaturatedPlain,
    MediumPlain,
    PrefixConditioned { tau: f64 },
    /// Only valid inside the refresh pipeline.
    Refreshed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub source: ArmSource,
}

impl ArmSpec {
    pub fn new(name: &str, source: ArmSource) -> Self {
        ArmSpec { name: name.to_string(), source }
    }
}

/// Which questions the headline accuracy is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    /// A sample disjoint from pretraining and arm training.
    HeldOut,
    /// The training pool itself.
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Share of the non-evaluation questions whose routes are demonstrated in pretraining.
    pub pretrain_fraction: f64,
    pub eval_questions: usize,
    pub eval_split: EvalSplit,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { pretrain_fraction: 0.01, eval_questions: 120, eval_split: EvalSplit::HeldOut }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub n_scan: usize,
    pub saturated_band: AccuracyBand,
    pub medium_band: AccuracyBand,
    /// Subsample the medium set to the size of the saturated set.
    pub match_medium_size: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            n_scan: 32,
            saturated_band: AccuracyBand::exact(31, 32),
            medium_band: AccuracyBand::exact(16, 32),
            match_medium_size: true,
        }
    }
}

/// Evaluation cadence: step 0, every `every` steps, and the final step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSchedule {
    pub every: usize,
    /// Rollouts per evaluation question.
    pub n: usize,
    pub temperature: f64,
}

impl Default for EvalSchedule {
    fn default() -> Self {
        EvalSchedule { every: 20, n: 32, temperature: crate::eval::EVAL_TEMPERATURE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefreshPlan {
    /// Total steps of the prolonged first iteration.
    pub total_steps: usize,
    /// Fork point; defaults to the evaluation peak within the first half.
    pub fork_step: Option<usize>,
}

impl Default for RefreshPlan {
    fn default() -> Self {
        RefreshPlan { total_steps: 400, fork_step: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub run_seed: u64,
    pub replicates: usize,
    pub world: WorldConfig,
    pub init: InitScheme,
    pub split: SplitConfig,
    pub pretrain: PretrainConfig,
    pub scan: ScanConfig,
    pub conditioning: ConditioningConfig,
    pub grpo: GrpoConfig,
    pub arms: Vec<ArmSpec>,
    pub eval: EvalSchedule,
    pub recovery: RecoveryConfig,
    pub tau_values: Vec<f64>,
    pub refresh: RefreshPlan,
    pub output_dir: Option<String>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            run_seed: 1,
            replicates: 3,
            world: comparison_world(),
            init: InitScheme::GoalBiased { strength: 0.2 },
            split: SplitConfig::default(),
            pretrain: PretrainConfig::default(),
            scan: ScanConfig::default(),
            conditioning: ConditioningConfig::default(),
            grpo: GrpoConfig::default(),
            arms: default_arms(),
            eval: EvalSchedule::default(),
            recovery: RecoveryConfig::default(),
            tau_values: vec![0.25, 0.5, 0.75],
            refresh: RefreshPlan::default(),
            output_dir: None,
        }
    }
}

/// World used by the comparisons: wide enough that a few demonstrated routes
/// leave most states untrained, with a budget close to the typical distance.
pub fn comparison_world() -> WorldConfig {
    WorldConfig { node_count: 100, out_degree: 6, budget: 6, seed: 7 }
}

pub fn default_arms() -> Vec<ArmSpec> {
    vec![
        ArmSpec::new("saturate", ArmSource::SaturatedPlain),
        ArmSpec::new("medium", ArmSource::MediumPlain),
        ArmSpec::new("failure_prefix", ArmSource::PrefixConditioned { tau: 0.5 }),
    ]
}

impl ExperimentPlan {
    /// Parses a plan; keys it omits, including keys inside partially given
    /// sections, take the values of [`ExperimentPlan::default`].
    pub fn from_toml(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidParameter(format!("plan file: {m}"));
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
        let mut merged = toml::Table::try_from(ExperimentPlan::default()).expect("plan serializes");
        merge_tables(&mut merged, user);
        let plan: ExperimentPlan = merged.try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.grpo.validate()?;
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("replicates must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.split.pretrain_fraction) || self.split.pretrain_fraction == 0.0 {
            return Err(Error::InvalidParameter("pretrain_fraction must lie in (0, 1]".into()));
        }
        if self.eval.every == 0 || self.eval.n == 0 || !(self.eval.temperature > 0.0) {
            return Err(Error::InvalidParameter("evaluation schedule needs every >= 1, n >= 1, temperature > 0".into()));
        }
        if self.scan.n_scan < 2 {
            return Err(Error::InvalidParameter("n_scan must be >= 2".into()));
        }
        let mut names: Vec<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("arm names must be unique".into()));
        }
        for t in self.tau_values.iter().chain(self.arms.iter().filter_map(|a| match a.source {
            ArmSource::PrefixConditioned { ref tau } => Some(tau),
            _ => None,
        })) {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::InvalidParameter(format!("tau {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Seed of replicate `index`.
    pub fn replicate_seed(&self, index: usize) -> u64 {
        SeedStream::new(self.run_seed, Phase::Replicate).seed(0, index as u64)
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("scheme") => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Fixed question split shared by all replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSplit {
    /// Questions whose shortest routes are demonstrated in pretraining.
    pub pretrain: Vec<Question>,
    /// Questions scanned for the arms' training sets (includes `pretrain`).
    pub pool: Vec<Question>,
    pub eval: Vec<Question>,
}

pub fn split_questions(graph: &WorldGraph, config: &SplitConfig, run_seed: u64) -> Result<QuestionSplit> {
    let mut all = graph.enumerate_questions();
    if config.eval_split == EvalSplit::HeldOut && config.eval_questions >= all.len() {
        return Err(Error::InvalidParameter(format!(
            "{} evaluation questions requested but the world has only {}",
            config.eval_questions,
            all.len()
        )));
    }
    all.shuffle(&mut SeedStream::new(run_seed, Phase::Split).rng(0, 0));
    let (eval, rest) = match config.eval_split {
        EvalSplit::HeldOut => {
            let (e, r) = all.split_at(config.eval_questions);
            (e.to_vec(), r.to_vec())
        }
        EvalSplit::Training => (Vec::new(), all),
    };
    let n_pretrain = ((config.pretrain_fraction * rest.len() as f64).ceil() as usize).clamp(1, rest.len());
    let mut pretrain = rest[..n_pretrain].to_vec();
    let mut pool = rest;
    pretrain.sort_by_key(|q| q.question_id);
    pool.sort_by_key(|q| q.question_id);
    let mut eval = if config.eval_split == EvalSplit::Training { pool.clone() } else { eval };
    eval.sort_by_key(|q| q.question_id);
    Ok(QuestionSplit { pretrain, pool, eval })
}

/// Pretrained base policy and its scans for one replicate.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub base: Policy,
    pub pretrain_iterations: usize,
    pub scans: Vec<SaturationScan>,
    pub saturated: Vec<SaturationScan>,
    pub medium: Vec<Question>,
}

impl Prepared {
    pub fn saturated_questions(&self) -> Vec<Question> {
        self.saturated.iter().map(|s| s.question).collect()
    }
}

pub fn prepare(plan: &ExperimentPlan, graph: &WorldGraph, split: &QuestionSplit, seed: u64) -> Result<Prepared> {
    let init = Policy::init(graph, plan.init)?;
    let outcome = pretrain_to_saturation(init, graph, &split.pretrain, &plan.pretrain, seed)?;
    let base = outcome.policy;
    let params = SamplingParams::training(&base, graph);
    let scans = scan_saturated(&base, graph, &split.pool, plan.scan.n_scan, plan.scan.saturated_band, seed, params)?;
    let saturated: Vec<SaturationScan> = scans.iter().filter(|s| s.in_band).cloned().collect();
    let mut medium: Vec<Question> = scans
        .iter()
        .filter(|s| plan.scan.medium_band.contains_count(s.correct, s.n_scan))
        .map(|s| s.question)
        .collect();
    if plan.scan.match_medium_size && medium.len() > saturated.len() {
        medium.shuffle(&mut SeedStream::new(seed, Phase::Split).rng(1, 0));
        medium.truncate(saturated.len());
        medium.sort_by_key(|q| q.question_id);
    }
    if saturated.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no saturated questions in band {} after {} pretraining iterations",
            plan.scan.saturated_band, outcome.iterations
        )));
    }
    if medium.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no medium questions in band {} after {} pretraining iterations",
            plan.scan.medium_band, outcome.iterations
        )));
    }
    Ok(Prepared { seed, base, pretrain_iterations: outcome.iterations, scans, saturated, medium })
}

/// `(step, pass@1)` on the evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub pass_at_1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedArm {
    pub spec: ArmSpec,
    pub dataset_size: usize,
    pub dataset_hash: String,
    pub curve: Vec<CurvePoint>,
    pub metrics: Vec<StepMetrics>,
    pub policy: Policy,
    pub checkpoints: Vec<(usize, Policy)>,
}

impl TrainedArm {
    pub fn final_pass_at_1(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |p| p.pass_at_1)
    }

    pub fn peak(&self) -> CurvePoint {
        peak_of(&self.curve)
    }
}

/// Highest point; earliest step on ties.
fn peak_of(curve: &[CurvePoint]) -> CurvePoint {
    *curve.iter().fold(None, |best: Option<&CurvePoint>, p| match best {
        Some(b) if b.pass_at_1 >= p.pass_at_1 => Some(b),
        _ => Some(p),
    })
    .expect("nonempty curve")
}

/// Training options and evaluation hook shared by all arms of a replicate.
struct ArmRunner<'a> {
    plan: &'a ExperimentPlan,
    graph: &'a WorldGraph,
    eval: &'a [Question],
    seed: u64,
}

impl ArmRunner<'_> {
    fn pass_at_1(&self, policy: &Policy) -> Result<f64> {
        Ok(evaluate(policy, self.graph, self.eval, self.plan.eval.n, self.plan.eval.temperature, None, self.seed)?
            .pass_at_1)
    }

    fn run(
        &self,
        spec: &ArmSpec,
        start: &Policy,
        prompts: &[Prompt],
        start_step: usize,
        steps: usize,
        keep_checkpoints: bool,
    ) -> Result<TrainedArm> {
        let config = GrpoConfig { total_steps: steps, ..self.plan.grpo.clone() };
        let options = TrainOptions {
            start_step,
            eval_every: Some(self.plan.eval.every),
            checkpoint_every: keep_checkpoints.then_some(self.plan.eval.every),
            record_timing: false,
        };
        let mut curve = Vec::new();
        let mut hook = |step: usize, policy: &Policy| -> Result<()> {
            if curve.last().is_none_or(|p: &CurvePoint| p.step != step) {
                curve.push(CurvePoint { step, pass_at_1: self.pass_at_1(policy)? });
            }
            Ok(())
        };
        let outcome = train(
            start.clone(),
            self.graph,
            prompts,
            &config,
            options,
            self.seed,
            Some(&mut hook as &mut dyn FnMut(usize, &Policy) -> Result<()>),
        )?;
        Ok(TrainedArm {
            spec: spec.clone(),
            dataset_size: prompts.len(),
            dataset_hash: io::sha256_hex(io::to_jsonl(prompts).as_bytes()),
            curve,
            metrics: outcome.metrics,
            policy: outcome.policy,
            checkpoints: outcome.checkpoints,
        })
    }
}

/// Builds D′ once per τ and reuses it.
struct DatasetCache<'a> {
    plan: &'a ExperimentPlan,
    graph: &'a WorldGraph,
    prepared: &'a Prepared,
    built: Vec<(f64, ConditionedDataset)>,
}

impl<'a> DatasetCache<'a> {
    fn new(plan: &'a ExperimentPlan, graph: &'a WorldGraph, prepared: &'a Prepared) -> Self {
        DatasetCache { plan, graph, prepared, built: Vec::new() }
    }

    fn conditioned(&mut self, tau: f64) -> Result<&ConditionedDataset> {
        if let Some(i) = self.built.iter().position(|(t, _)| *t == tau) {
            return Ok(&self.built[i].1);
        }
        let config = ConditioningConfig { tau, ..self.plan.conditioning.clone() };
        let params = SamplingParams::training(&self.prepared.base, self.graph);
        let dataset = build_dataset(&self.prepared.base, self.graph, &self.prepared.saturated, &config, self.prepared.seed, params)?;
        if dataset.records.is_empty() {
            return Err(Error::EmptyResult(format!("prefix-conditioned dataset at tau {tau} is empty")));
        }
        self.built.push((tau, dataset));
        Ok(&self.built.last().expect("just pushed").1)
    }

    fn prompts(&mut self, source: ArmSource) -> Result<Vec<Prompt>> {
        match source {
            ArmSource::SaturatedPlain => Ok(self.prepared.saturated_questions().into_iter().map(Prompt::plain).collect()),
            ArmSource::MediumPlain => Ok(self.prepared.medium.iter().copied().map(Prompt::plain).collect()),
            ArmSource::PrefixConditioned { tau } => Ok(self.conditioned(tau)?.prompts()),
            ArmSource::Refreshed => {
                Err(Error::InvalidParameter("refreshed arms are only available in the refresh pipeline".into()))
            }
        }
    }
}

/// Question-averaged prefix-conditioned accuracy per fraction and its rank trend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrend {
    pub fractions: Vec<f64>,
    pub mean_accuracy: Vec<f64>,
    pub spearman_rho: f64,
    pub p_value: f64,
}

impl DecayTrend {
    pub fn from_dataset(dataset: &ConditionedDataset, fractions: &[f64]) -> Self {
        let mean_accuracy = dataset.mean_accuracy_by_fraction(fractions);
        let s = stats::spearman(fractions, &mean_accuracy);
        DecayTrend { fractions: fractions.to_vec(), mean_accuracy, spearman_rho: s.rho, p_value: s.p_value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecovery {
    pub policy: String,
    pub failure: RecoveryCurve,
    pub success: RecoveryCurve,
}

#[derive(Debug, Clone)]
pub struct Table1Replicate {
    pub prepared: Prepared,
    pub base_pass_at_1: f64,
    pub base_train_pass_at_1: f64,
    pub arms: Vec<TrainedArm>,
    /// Training-pool pass@1 of each arm's final policy.
    pub arm_train_pass_at_1: Vec<f64>,
    pub decay: Option<DecayTrend>,
    pub recovery: Vec<PolicyRecovery>,
    pub recovery_questions: usize,
}

impl Table1Replicate {
    pub fn arm(&self, name: &str) -> Option<&TrainedArm> {
        self.arms.iter().find(|a| a.spec.name == name)
    }

    pub fn delta(&self, name: &str) -> Option<f64> {
        self.arm(name).map(|a| a.final_pass_at_1() - self.base_pass_at_1)
    }

    pub fn recovery_of(&self, policy: &str) -> Option<&PolicyRecovery> {
        self.recovery.iter().find(|r| r.policy == policy)
    }
}

/// Across-replicate summary of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub deltas: Vec<f64>,
    pub mean_delta: f64,
    pub std_delta: f64,
}

#[derive(Debug, Clone)]
pub struct Table1Result {
    pub split: QuestionSplit,
    pub replicates: Vec<Table1Replicate>,
    pub summary: Vec<ArmSummary>,
}

impl Table1Result {
    pub fn summary_of(&self, arm: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == arm)
    }

    /// Per-replicate accuracy drop `baseline - accuracy(fraction)` of `policy`
    /// under `mode`.
    pub fn drops(&self, policy: &str, mode: RecoveryMode, fraction: f64) -> Vec<f64> {
        self.replicates
            .iter()
            .filter_map(|r| r.recovery_of(policy))
            .map(|rec| {
                let curve = match mode {
                    RecoveryMode::FailurePrefix => &rec.failure,
                    RecoveryMode::SuccessPrefix => &rec.success,
                };
                let point = curve.points.iter().find(|p| (p.fraction - fraction).abs() < 1e-12);
                point.map_or(f64::NAN, |p| curve.baseline - p.mean_accuracy)
            })
            .collect()
    }
}

fn world(plan: &ExperimentPlan) -> Result<WorldGraph> {
    WorldGraph::build(plan.world)
}

/// Base vs. every arm in `plan.arms`, over `plan.replicates` seeds.
pub fn run_table1(plan: &ExperimentPlan) -> Result<Table1Result> {
    plan.validate()?;
    let graph = world(plan)?;
    let split = split_questions(&graph, &plan.split, plan.run_seed)?;
    let mut replicates = Vec::with_capacity(plan.replicates);
    for r in 0..plan.replicates {
        let seed = plan.replicate_seed(r);
        log::info!("table1 replicate {r} (seed {seed})");
        replicates.push(table1_replicate(plan, &graph, &split, seed)?);
    }
    let summary = plan
        .arms
        .iter()
        .map(|a| {
            let deltas: Vec<f64> = replicates.iter().map(|r| r.delta(&a.name).expect("arm trained")).collect();
            ArmSummary { arm: a.name.clone(), mean_delta: stats::mean(&deltas), std_delta: stats::sample_std(&deltas), deltas }
        })
        .collect();
    Ok(Table1Result { split, replicates, summary })
}

fn table1_replicate(plan: &ExperimentPlan, graph: &WorldGraph, split: &QuestionSplit, seed: u64) -> Result<Table1Replicate> {
    let prepared = prepare(plan, graph, split, seed)?;
    let runner = ArmRunner { plan, graph, eval: &split.eval, seed };
    let train_eval: Vec<Question> = split.pool.clone();
    let train_runner = ArmRunner { plan, graph, eval: &train_eval, seed };
    let base_pass_at_1 = runner.pass_at_1(&prepared.base)?;
    let base_train_pass_at_1 = train_runner.pass_at_1(&prepared.base)?;

    let mut cache = DatasetCache::new(plan, graph, &prepared);
    let mut arms = Vec::with_capacity(plan.arms.len());
    let mut arm_train_pass_at_1 = Vec::with_capacity(plan.arms.len());
    for spec in &plan.arms {
        let prompts = cache.prompts(spec.source)?;
        let arm = runner.run(spec, &prepared.base, &prompts, 0, plan.grpo.total_steps, false)?;
        arm_train_pass_at_1.push(train_runner.pass_at_1(&arm.policy)?);
        arms.push(arm);
    }
    let decay = match cache.built.iter().find(|(t, _)| *t == plan.conditioning.tau) {
        Some((_, d)) => Some(DecayTrend::from_dataset(d, &plan.conditioning.fractions)),
        None => None,
    };

    let mut named: Vec<(&str, &Policy)> = vec![("base", &prepared.base)];
    named.extend(arms.iter().map(|a| (a.spec.name.as_str(), &a.policy)));
    let policies: Vec<&Policy> = named.iter().map(|(_, p)| *p).collect();
    let questions = qualifying_intersection(&policies, graph, &split.eval, &plan.recovery, seed)?;
    let recovery = if questions.is_empty() {
        log::warn!("no evaluation question qualifies for recovery curves under every policy");
        Vec::new()
    } else {
        named
            .iter()
            .map(|(name, p)| {
                Ok(PolicyRecovery {
                    policy: name.to_string(),
                    failure: recovery_curve_on(p, graph, &questions, RecoveryMode::FailurePrefix, &plan.recovery, seed)?,
                    success: recovery_curve_on(p, graph, &questions, RecoveryMode::SuccessPrefix, &plan.recovery, seed)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    drop(cache);
    Ok(Table1Replicate {
        prepared,
        base_pass_at_1,
        base_train_pass_at_1,
        arms,
        arm_train_pass_at_1,
        decay,
        recovery,
        recovery_questions: questions.len(),
    })
}

#[derive(Debug, Clone)]
pub struct TauReplicate {
    pub seed: u64,
    pub base_pass_at_1: f64,
    pub arms: Vec<TrainedArm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSummary {
    pub arm: String,
    pub peaks: Vec<f64>,
    pub peak_steps: Vec<usize>,
    pub mean_peak: f64,
    pub std_peak: f64,
}

#[derive(Debug, Clone)]
pub struct TauResult {
    pub replicates: Vec<TauReplicate>,
    pub summary: Vec<PeakSummary>,
}

fn tau_arm_name(tau: f64) -> String {
    format!("tau_{tau}")
}

/// Saturate arm plus one prefix-conditioned arm per `plan.tau_values`, all
/// built from the same scans.
pub fn run_tau_ablation(plan: &ExperimentPlan) -> Result<TauResult> {
    plan.validate()?;
    if plan.tau_values.is_empty() {
        return Err(Error::InvalidParameter("tau ablation needs at least one tau value".into()));
    }
    let graph = world(plan)?;
    let split = split_questions(&graph, &plan.split, plan.run_seed)?;
    let mut specs = vec![ArmSpec::new("saturate", ArmSource::SaturatedPlain)];
    specs.extend(plan.tau_values.iter().map(|&tau| ArmSpec::new(&tau_arm_name(tau), ArmSource::PrefixConditioned { tau })));
    let mut replicates = Vec::with_capacity(plan.replicates);
    for r in 0..plan.replicates {
        let seed = plan.replicate_seed(r);
        log::info!("tau replicate {r} (seed {seed})");
        let prepared = prepare(plan, &graph, &split, seed)?;
        let runner = ArmRunner { plan, graph: &graph, eval: &split.eval, seed };
        let base_pass_at_1 = runner.pass_at_1(&prepared.base)?;
        let mut cache = DatasetCache::new(plan, &graph, &prepared);
        let arms = specs
            .iter()
            .map(|spec| {
                let prompts = cache.prompts(spec.source)?;
                runner.run(spec, &prepared.base, &prompts, 0, plan.grpo.total_steps, false)
            })
            .collect::<Result<Vec<_>>>()?;
        replicates.push(TauReplicate { seed, base_pass_at_1, arms });
    }
    let summary = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let peaks: Vec<CurvePoint> = replicates.iter().map(|r| r.arms[i].peak()).collect();
            let values: Vec<f64> = peaks.iter().map(|p| p.pass_at_1).collect();
            PeakSummary {
                arm: spec.name.clone(),
                mean_peak: stats::mean(&values),
                std_peak: stats::sample_std(&values),
                peak_steps: peaks.iter().map(|p| p.step).collect(),
                peaks: values,
            }
        })
        .collect();
    Ok(TauResult { replicates, summary })
}

#[derive(Debug, Clone)]
pub struct RefreshReplicate {
    pub seed: u64,
    pub saturated: Vec<Question>,
    pub fork_step: usize,
    pub fork_hash: String,
    /// Hash of the iteration-1 checkpoint at `fork_step`, recorded independently.
    pub iteration1_hash_at_fork: String,
    pub iteration1: TrainedArm,
    pub refresh: RefreshOutcome,
    /// `None` when D″ came out empty.
    pub iteration2: Option<TrainedArm>,
}

impl RefreshReplicate {
    /// Peak of the prolonged first iteration from the fork step on.
    pub fn iteration1_peak(&self) -> CurvePoint {
        let tail: Vec<CurvePoint> = self.iteration1.curve.iter().copied().filter(|p| p.step >= self.fork_step).collect();
        peak_of(&tail)
    }

    pub fn iteration2_peak(&self) -> Option<CurvePoint> {
        self.iteration2.as_ref().map(TrainedArm::peak)
    }
}

#[derive(Debug, Clone)]
pub struct RefreshResult {
    pub replicates: Vec<RefreshReplicate>,
}

/// Prolonged prefix-conditioned training vs. a fork retrained on a refreshed dataset.
pub fn run_refresh(plan: &ExperimentPlan) -> Result<RefreshResult> {
    plan.validate()?;
    let total = plan.refresh.total_steps;
    let every = plan.eval.every;
    if total < 2 * every {
        return Err(Error::InvalidParameter(format!("refresh total_steps {total} must cover at least two evaluation windows")));
    }
    if let Some(f) = plan.refresh.fork_step {
        if f == 0 || f >= total || f % every != 0 {
            return Err(Error::InvalidParameter(format!(
                "fork_step {f} must be a positive multiple of the evaluation interval below {total}"
            )));
        }
    }
    let graph = world(plan)?;
    let split = split_questions(&graph, &plan.split, plan.run_seed)?;
    let mut replicates = Vec::with_capacity(plan.replicates);
    for r in 0..plan.replicates {
        let seed = plan.replicate_seed(r);
        log::info!("refresh replicate {r} (seed {seed})");
        let prepared = prepare(plan, &graph, &split, seed)?;
        let runner = ArmRunner { plan, graph: &graph, eval: &split.eval, seed };
        let mut cache = DatasetCache::new(plan, &graph, &prepared);
        let spec1 = ArmSpec::new("iteration_1", ArmSource::PrefixConditioned { tau: plan.conditioning.tau });
        let prompts = cache.prompts(spec1.source)?;
        let iteration1 = runner.run(&spec1, &prepared.base, &prompts, 0, total, true)?;

        let fork_step = match plan.refresh.fork_step {
            Some(f) => f,
            None => {
                let early: Vec<CurvePoint> =
                    iteration1.curve.iter().copied().filter(|p| p.step > 0 && p.step <= total / 2).collect();
                peak_of(&early).step
            }
        };
        let fork = iteration1
            .checkpoints
            .iter()
            .find(|(s, _)| *s == fork_step)
            .map(|(_, p)| p.clone())
            .ok_or_else(|| Error::InvalidParameter(format!("no iteration-1 checkpoint at step {fork_step}")))?;
        let fork_hash = io::policy_hash(&fork);
        let iteration1_hash_at_fork = iteration1
            .checkpoints
            .iter()
            .find(|(s, _)| *s == fork_step)
            .map(|(_, p)| io::policy_hash(p))
            .expect("checked above");

        let saturated = prepared.saturated_questions();
        let params = SamplingParams::training(&fork, &graph);
        let refresh_seed = SeedStream::new(seed, Phase::Harvest).seed(fork_step as u64, 0);
        let refresh = refresh_dataset(&fork, &graph, &saturated, &plan.conditioning, refresh_seed, params)?;
        let iteration2 = if refresh.dataset.records.is_empty() {
            log::warn!("refreshed dataset is empty; skipping iteration 2");
            None
        } else {
            let spec2 = ArmSpec::new("iteration_2", ArmSource::Refreshed);
            Some(runner.run(&spec2, &fork, &refresh.dataset.prompts(), fork_step, total - fork_step, false)?)
        };
        replicates.push(RefreshReplicate {
            seed,
            saturated,
            fork_step,
            fork_hash,
            iteration1_hash_at_fork,
            iteration1,
            refresh,
            iteration2,
        });
    }
    Ok(RefreshResult { replicates })
}

#[derive(Debug, Clone, Serialize)]
struct ArmManifest {
    name: String,
    source: ArmSource,
    dataset_size: usize,
    dataset_hash: String,
    final_policy_hash: String,
}

impl ArmManifest {
    fn of(arm: &TrainedArm) -> Self {
        ArmManifest {
            name: arm.spec.name.clone(),
            source: arm.spec.source,
            dataset_size: arm.dataset_size,
            dataset_hash: arm.dataset_hash.clone(),
            final_policy_hash: io::policy_hash(&arm.policy),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct ReplicateManifest {
    index: usize,
    seed: u64,
    base_policy_hash: Option<String>,
    pretrain_iterations: Option<usize>,
    saturated: Option<usize>,
    medium: Option<usize>,
    arms: Vec<ArmManifest>,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    pipeline: &'a str,
    version: &'a str,
    plan: &'a ExperimentPlan,
    world_hash: String,
    eval_questions: usize,
    replicates: Vec<ReplicateManifest>,
}

fn world_hash(plan: &ExperimentPlan) -> Result<String> {
    let graph = world(plan)?;
    Ok(io::sha256_hex(serde_json::to_string(&graph.to_file())?.as_bytes()))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn curve_rows(out: &mut String, replicate: usize, arm: &TrainedArm) {
    for p in &arm.curve {
        out.push_str(&format!("{replicate},{},{},{}\n", arm.spec.name, p.step, p.pass_at_1));
    }
}

const CURVES_HEADER: &str = "replicate,arm,step,pass_at_1\n";

/// Writes `manifest.json`, `table1.csv`, `table1_replicates.csv`,
/// `curves.csv`, `recovery.csv` and `decay.csv`.
pub fn write_table1(plan: &ExperimentPlan, result: &Table1Result, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut table = String::from("arm,mean_delta,std_delta,deltas\n");
    for s in &result.summary {
        let deltas: Vec<String> = s.deltas.iter().map(f64::to_string).collect();
        table.push_str(&format!("{},{},{},{}\n", s.arm, s.mean_delta, s.std_delta, deltas.join(";")));
    }
    write_text(dir, "table1.csv", &table)?;

    let mut reps = String::from(
        "replicate,seed,arm,dataset_size,base_pass_at_1,pass_at_1,delta,base_train_pass_at_1,train_pass_at_1\n",
    );
    let mut curves = String::from(CURVES_HEADER);
    let mut recovery = String::from("replicate,policy,mode,fraction,mean_accuracy,n_questions\n");
    let mut decay = String::from("replicate,fraction,mean_accuracy,spearman_rho,p_value\n");
    for (i, r) in result.replicates.iter().enumerate() {
        for (arm, train_p) in r.arms.iter().zip(&r.arm_train_pass_at_1) {
            reps.push_str(&format!(
                "{i},{},{},{},{},{},{},{},{}\n",
                r.prepared.seed,
                arm.spec.name,
                arm.dataset_size,
                r.base_pass_at_1,
                arm.final_pass_at_1(),
                arm.final_pass_at_1() - r.base_pass_at_1,
                r.base_train_pass_at_1,
                train_p
            ));
            curve_rows(&mut curves, i, arm);
        }
        for rec in &r.recovery {
            for line in rec.failure.csv_rows().lines().chain(rec.success.csv_rows().lines()) {
                recovery.push_str(&format!("{i},{},{line}\n", rec.policy));
            }
        }
        if let Some(d) = &r.decay {
            for (f, a) in d.fractions.iter().zip(&d.mean_accuracy) {
                decay.push_str(&format!("{i},{f},{a},{},{}\n", d.spearman_rho, d.p_value));
            }
        }
    }
    write_text(dir, "table1_replicates.csv", &reps)?;
    write_text(dir, "curves.csv", &curves)?;
    write_text(dir, "recovery.csv", &recovery)?;
    write_text(dir, "decay.csv", &decay)?;

    let replicates = result
        .replicates
        .iter()
        .enumerate()
        .map(|(i, r)| ReplicateManifest {
            index: i,
            seed: r.prepared.seed,
            base_policy_hash: Some(io::policy_hash(&r.prepared.base)),
            pretrain_iterations: Some(r.prepared.pretrain_iterations),
            saturated: Some(r.prepared.saturated.len()),
            medium: Some(r.prepared.medium.len()),
            arms: r.arms.iter().map(ArmManifest::of).collect(),
        })
        .collect();
    write_manifest(plan, "table1", result.split.eval.len(), replicates, dir)
}

/// Writes `manifest.json`, `tau_curves.csv` and `tau_peaks.csv`.
pub fn write_tau(plan: &ExperimentPlan, result: &TauResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut curves = String::from(CURVES_HEADER);
    for (i, r) in result.replicates.iter().enumerate() {
        for arm in &r.arms {
            curve_rows(&mut curves, i, arm);
        }
    }
    write_text(dir, "tau_curves.csv", &curves)?;
    let mut peaks = String::from("arm,mean_peak,std_peak,peaks,peak_steps\n");
    for s in &result.summary {
        let v: Vec<String> = s.peaks.iter().map(f64::to_string).collect();
        let st: Vec<String> = s.peak_steps.iter().map(usize::to_string).collect();
        peaks.push_str(&format!("{},{},{},{},{}\n", s.arm, s.mean_peak, s.std_peak, v.join(";"), st.join(";")));
    }
    write_text(dir, "tau_peaks.csv", &peaks)?;
    let replicates = result
        .replicates
        .iter()
        .enumerate()
        .map(|(i, r)| ReplicateManifest {
            index: i,
            seed: r.seed,
            base_policy_hash: None,
            pretrain_iterations: None,
            saturated: None,
            medium: None,
            arms: r.arms.iter().map(ArmManifest::of).collect(),
        })
        .collect();
    let graph = world(plan)?;
    let eval = split_questions(&graph, &plan.split, plan.run_seed)?.eval.len();
    write_manifest(plan, "tau", eval, replicates, dir)
}

/// Writes `manifest.json`, `refresh_curves.csv`, `refresh_summary.csv` and
/// one `refreshed_<replicate>.jsonl` per replicate.
pub fn write_refresh(plan: &ExperimentPlan, result: &RefreshResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut curves = String::from(CURVES_HEADER);
    let mut summary = String::from(
        "replicate,seed,fork_step,iteration1_peak,iteration1_peak_step,iteration2_peak,iteration2_peak_step,refreshed_size,excluded,status\n",
    );
    for (i, r) in result.replicates.iter().enumerate() {
        curve_rows(&mut curves, i, &r.iteration1);
        if let Some(arm) = &r.iteration2 {
            curve_rows(&mut curves, i, arm);
        }
        let p1 = r.iteration1_peak();
        let (p2, s2) = r.iteration2_peak().map_or((String::new(), String::new()), |p| (p.pass_at_1.to_string(), p.step.to_string()));
        summary.push_str(&format!(
            "{i},{},{},{},{},{p2},{s2},{},{},{}\n",
            r.seed,
            r.fork_step,
            p1.pass_at_1,
            p1.step,
            r.refresh.dataset.records.len(),
            r.refresh.excluded.len(),
            serde_json::to_value(r.refresh.status)?.as_str().unwrap_or_default()
        ));
        write_text(dir, &format!("refreshed_{i}.jsonl"), &r.refresh.dataset.to_jsonl())?;
    }
    write_text(dir, "refresh_curves.csv", &curves)?;
    write_text(dir, "refresh_summary.csv", &summary)?;
    let replicates = result
        .replicates
        .iter()
        .enumerate()
        .map(|(i, r)| ReplicateManifest {
            index: i,
            seed: r.seed,
            base_policy_hash: None,
            pretrain_iterations: None,
            saturated: Some(r.saturated.len()),
            medium: None,
            arms: std::iter::once(&r.iteration1).chain(r.iteration2.as_ref()).map(ArmManifest::of).collect(),
        })
        .collect();
    let graph = world(plan)?;
    let eval = split_questions(&graph, &plan.split, plan.run_seed)?.eval.len();
    write_manifest(plan, "refresh", eval, replicates, dir)
}

fn write_manifest(
    plan: &ExperimentPlan,
    pipeline: &str,
    eval_questions: usize,
    replicates: Vec<ReplicateManifest>,
    dir: &Path,
) -> Result<()> {
    let manifest = Manifest {
        pipeline,
        version: env!("CARGO_PKG_VERSION"),
        plan,
        world_hash: world_hash(plan)?,
        eval_questions,
        replicates,
    };
    io::write_json(&dir.join("manifest.json"), &manifest)
}

use std::sync::OnceLock;

use prefixlab::conditioning::{
    build_dataset, closest_to_target, estimate_accuracy, harvest_failure, refresh_dataset, scan_saturated, scan_stream,
    slice_prefixes, AccuracyBand, ConditionedDataset, ConditioningConfig, DatasetSource, RefreshStatus,
};
use prefixlab::env::{build_graph, verify, Question, WorldGraph};
use prefixlab::experiment::{prepare, split_questions, DecayTrend, ExperimentPlan, Prepared};
use prefixlab::grpo::{train, GrpoConfig, TrainOptions};
use prefixlab::policy::{InitScheme, Policy, SamplingParams};
use prefixlab::rng::{Phase, SeedStream};

struct Fixture {
    graph: WorldGraph,
    prepared: Prepared,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let plan = ExperimentPlan::default();
        let graph = WorldGraph::build(plan.world).unwrap();
        let split = split_questions(&graph, &plan.split, 0).unwrap();
        let prepared = prepare(&plan, &graph, &split, 0).unwrap();
        Fixture { graph, prepared }
    })
}

fn dataset(tau: f64) -> ConditionedDataset {
    let f = fixture();
    let cfg = ConditioningConfig { tau, ..ConditioningConfig::default() };
    let params = SamplingParams::training(&f.prepared.base, &f.graph);
    build_dataset(&f.prepared.base, &f.graph, &f.prepared.saturated, &cfg, 0, params).unwrap()
}

/// Two-action world: from `start`, slot 0 reaches the goal (then STOP is certain),
/// slot 1 reaches a dead end with one action left. Success probability is `p`.
fn bandit(p: f64) -> (WorldGraph, Policy, Question) {
    let g = build_graph(20, 3, 7, 2).unwrap();
    let start = 0;
    let goal = g.neighbors(start)[0];
    let mut policy = Policy::init(&g, InitScheme::GoalBiased { strength: 60.0 }).unwrap();
    let row = policy.row_mut(start, goal);
    row.copy_from_slice(&[p.ln(), (1.0 - p).ln(), -80.0, -80.0]);
    policy.row_mut(goal, goal)[3] = 80.0;
    (g, policy, Question { question_id: 0, start, goal })
}

#[test]
fn selection_picks_the_accuracy_closest_to_tau() {
    assert_eq!(closest_to_target(&[0.9, 0.7, 0.55, 0.4, 0.2], 0.5), Some(2));
    assert_eq!(closest_to_target(&[0.6, 0.4], 0.5), Some(0));
    assert_eq!(closest_to_target(&[], 0.5), None);
}

#[test]
fn empty_prefix_reproduces_the_scan_estimate() {
    let f = fixture();
    let params = SamplingParams::training(&f.prepared.base, &f.graph);
    for s in f.prepared.scans.iter().step_by(97).take(30) {
        let p = estimate_accuracy(&f.prepared.base, &f.graph, &s.question, &[], 32, scan_stream(0), params).unwrap();
        assert_eq!(p, s.accuracy);
    }
}

#[test]
fn dataset_records_come_from_real_failures_and_are_optimal() {
    let f = fixture();
    let d = dataset(0.5);
    assert_eq!(d.records.len() + d.diagnostics.skipped_no_moves.len(), f.prepared.saturated.len());
    for (rec, sweep) in d.records.iter().zip(&d.sweeps) {
        assert_eq!(rec.question_id, sweep.question_id);
        assert_eq!(rec.source, DatasetSource::Iter1);
        let q = rec.question();
        assert_eq!(verify(&f.graph, &q, &sweep.failure), 0);
        let moves = sweep.failure.moves();
        assert!(!rec.prefix.is_empty() && rec.prefix.len() <= moves.len());
        assert_eq!(rec.prefix[..], moves[..rec.prefix.len()]);
        let chosen = sweep.points[sweep.chosen];
        assert_eq!(chosen.alpha, rec.prefix.len());
        assert_eq!(chosen.accuracy, rec.selected_accuracy);
        let best = (chosen.accuracy - 0.5).abs();
        for p in &sweep.points {
            let d = (p.accuracy - 0.5).abs();
            assert!(d >= best - 1e-12);
            if p.alpha < chosen.alpha {
                assert!(d > best + 1e-12, "a shorter prefix ties the chosen one");
            }
        }
    }
}

#[test]
fn selected_accuracy_sits_near_tau() {
    let d = dataset(0.5);
    let m = d.diagnostics.mean_selected_accuracy;
    assert!((m - 0.5).abs() <= 0.15, "mean selected accuracy {m}");
}

#[test]
fn lower_tau_selects_longer_prefixes() {
    let low = dataset(0.25);
    let high = dataset(0.75);
    assert!(low.diagnostics.mean_selected_fraction > high.diagnostics.mean_selected_fraction);
    // identical sweeps: only the target changed
    for (a, b) in low.sweeps.iter().zip(&high.sweeps) {
        assert_eq!(a.points, b.points);
    }
}

#[test]
fn accuracy_decays_with_prefix_length() {
    let d = dataset(0.5);
    let trend = DecayTrend::from_dataset(&d, &prefixlab::conditioning::default_fractions());
    assert!(trend.spearman_rho < 0.0 && trend.p_value < 0.01, "{trend:?}");
}

#[test]
fn scans_with_no_failure_are_rejected() {
    let f = fixture();
    let params = SamplingParams::training(&f.prepared.base, &f.graph);
    let perfect: Vec<_> = f.prepared.scans.iter().filter(|s| s.failure.is_none()).take(1).cloned().collect();
    assert!(!perfect.is_empty());
    assert!(build_dataset(&f.prepared.base, &f.graph, &perfect, &ConditioningConfig::default(), 0, params).is_err());
}

#[test]
fn training_on_the_dataset_starts_near_tau_and_improves() {
    let f = fixture();
    let d = dataset(0.5);
    let cfg = GrpoConfig { total_steps: 30, ..GrpoConfig::default() };
    let out = train(f.prepared.base.clone(), &f.graph, &d.prompts(), &cfg, TrainOptions::default(), 0, None).unwrap();
    let first = out.metrics[0].mean_reward;
    assert!((first - 0.5).abs() < 0.15, "first-step reward {first}");
    let early: f64 = out.metrics[..10].iter().map(|m| m.mean_reward).sum::<f64>() / 10.0;
    let late: f64 = out.metrics[20..].iter().map(|m| m.mean_reward).sum::<f64>() / 10.0;
    assert!(late > early, "{early} -> {late}");
}

#[test]
fn harvest_hit_rate_matches_the_failure_rate() {
    let (g, policy, q) = bandit(0.97);
    let params = SamplingParams::training(&policy, &g);
    let stream = SeedStream::new(3, Phase::Harvest);
    let trials = 400;
    let hits = (0..trials)
        .filter(|&i| {
            let qi = Question { question_id: i, ..q };
            let h = harvest_failure(&policy, &g, &qi, 128, stream, params).unwrap();
            if let Some(f) = &h.failure {
                assert_eq!(verify(&g, &qi, f), 0);
            }
            h.failure.is_some()
        })
        .count() as f64;
    let p = 1.0 - 0.97f64.powi(128);
    let sd = (trials as f64 * p * (1.0 - p)).sqrt();
    assert!((hits - trials as f64 * p).abs() <= 3.0 * sd, "{hits} hits, expected {}", trials as f64 * p);
}

#[test]
fn refresh_excludes_perfect_questions_and_can_pick_the_empty_prefix() {
    let (g, policy, q) = bandit(0.5);
    // every other question is solved by the near-greedy remainder of the table
    let perfect = Question { question_id: 1, start: 5, goal: g.neighbors(5)[1] };
    let cfg = ConditioningConfig { tau: 0.5, ..ConditioningConfig::default() };
    let params = SamplingParams::training(&policy, &g);
    let out = refresh_dataset(&policy, &g, &[q, perfect], &cfg, 0, params).unwrap();
    assert_eq!(out.status, RefreshStatus::Ok);
    assert_eq!(out.excluded, vec![1]);
    assert_eq!(out.dataset.records.len(), 1);
    let rec = &out.dataset.records[0];
    assert_eq!(rec.source, DatasetSource::Iter2);
    assert!(rec.prefix.is_empty() && rec.fraction == 0.0);
    let sweep = &out.dataset.sweeps[0];
    assert_eq!(sweep.points[0].alpha, 0);
    assert_eq!(sweep.points[1].accuracy, 0.0);

    let all_perfect = refresh_dataset(&policy, &g, &[perfect], &cfg, 0, params).unwrap();
    assert_eq!(all_perfect.status, RefreshStatus::EmptyWarning);
    assert!(all_perfect.dataset.records.is_empty());
}

#[test]
fn refreshed_sweeps_always_include_the_empty_prefix() {
    let f = fixture();
    let qs = f.prepared.saturated_questions();
    let params = SamplingParams::training(&f.prepared.base, &f.graph);
    let out = refresh_dataset(&f.prepared.base, &f.graph, &qs, &ConditioningConfig::default(), 5, params).unwrap();
    for s in &out.dataset.sweeps {
        assert_eq!(s.points[0].alpha, 0);
        assert!(!out.excluded.contains(&s.question_id));
    }
    assert_eq!(out.dataset.records.len() + out.excluded.len(), qs.len());
}

#[test]
fn zero_move_failures_need_the_empty_candidate() {
    let (g, mut policy, q) = bandit(0.5);
    policy.row_mut(q.start, q.goal)[3] = 5.0;
    let scans = scan_saturated(&policy, &g, &[q], 32, AccuracyBand::new(0.0, 1.0), 2, SamplingParams::training(&policy, &g))
        .unwrap();
    let f = scans[0].failure.clone().unwrap();
    assert_eq!(f.move_count(), 0);
    assert!(slice_prefixes(&f, &[0.5], false).is_err());
    assert_eq!(slice_prefixes(&f, &[0.5], true).unwrap().len(), 1);
    let d = build_dataset(&policy, &g, &scans, &ConditioningConfig::default(), 0, SamplingParams::training(&policy, &g)).unwrap();
    assert!(d.records.is_empty());
    assert_eq!(d.diagnostics.skipped_no_moves, vec![0]);
}

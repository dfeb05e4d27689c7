//! Sequential and parallel execution must agree bit for bit. The execution
//! mode is process-global, so everything runs inside one test.

use prefixlab::conditioning::{build_dataset, refresh_dataset, scan_saturated, AccuracyBand, ConditioningConfig};
use prefixlab::env::build_graph;
use prefixlab::eval::{evaluate, recovery_curve, RecoveryConfig, RecoveryMode};
use prefixlab::grpo::{train, GrpoConfig, Prompt, TrainOptions};
use prefixlab::par::{set_exec, Exec};
use prefixlab::policy::{InitScheme, Policy, SamplingParams};

fn run_all() -> String {
    let g = build_graph(30, 3, 4, 8).unwrap();
    let policy = Policy::init(&g, InitScheme::GoalBiased { strength: 0.8 }).unwrap();
    let qs = g.enumerate_questions();
    let params = SamplingParams::training(&policy, &g);
    let scans = scan_saturated(&policy, &g, &qs, 32, AccuracyBand::new(0.5, 31.0 / 32.0), 3, params).unwrap();
    let in_band: Vec<_> = scans.iter().filter(|s| s.in_band).cloned().collect();
    let dataset = build_dataset(&policy, &g, &in_band, &ConditioningConfig::default(), 3, params).unwrap();
    let cfg = GrpoConfig { total_steps: 6, batch_size: 8, learning_rate: 5.0, ..GrpoConfig::default() };
    let trained = train(policy.clone(), &g, &dataset.prompts(), &cfg, TrainOptions::default(), 3, None).unwrap();
    let plain: Vec<Prompt> = qs.iter().copied().map(Prompt::plain).collect();
    let trained2 = train(policy.clone(), &g, &plain, &cfg, TrainOptions::default(), 3, None).unwrap();
    let report = evaluate(&trained.policy, &g, &qs, 16, 0.6, None, 3).unwrap();
    let refresh = refresh_dataset(&trained.policy, &g, &qs[..200], &ConditioningConfig::default(), 3, params).unwrap();
    let curve = recovery_curve(&trained2.policy, &g, &qs[..150], RecoveryMode::FailurePrefix, &RecoveryConfig::default(), 3)
        .unwrap();
    format!(
        "{}\n{:?}\n{:?}\n{:?}\n{}\n{:?}\n{:?}",
        serde_json::to_string(&scans).unwrap(),
        dataset.records,
        trained.policy.logits().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        trained2.metrics,
        report.to_csv(),
        refresh.dataset.records,
        curve,
    )
}

#[test]
fn execution_mode_does_not_change_results() {
    set_exec(Exec::Sequential);
    let seq = run_all();
    set_exec(Exec::Parallel);
    let par = run_all();
    assert!(seq == par, "sequential and parallel runs differ");
}

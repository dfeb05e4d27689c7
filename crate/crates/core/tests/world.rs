use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use prefixlab::env::{
    apply_prefix, build_graph, step, verify, Action, EpisodeState, Question, StepOutcome, TerminalReason, Trajectory,
    WorldConfig, WorldGraph,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_petgraph(g: &WorldGraph) -> DiGraph<(), ()> {
    let mut pg = DiGraph::new();
    let nodes: Vec<_> = (0..g.node_count()).map(|_| pg.add_node(())).collect();
    for u in 0..g.node_count() {
        for &v in g.neighbors(u) {
            pg.add_edge(nodes[u], nodes[v], ());
        }
    }
    pg
}

fn floyd_warshall(g: &WorldGraph) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for u in 0..n {
        d[u][u] = 0;
        for &v in g.neighbors(u) {
            if v != u {
                d[u][v] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

fn walk(moves: &[usize], stop: bool) -> Trajectory {
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
        step_logprobs: vec![0.0; n],
        terminal_reason: if stop { TerminalReason::Stopped } else { TerminalReason::BudgetExhausted },
    }
}

#[test]
fn generated_worlds_are_strongly_connected_and_out_regular() {
    let configs = [(20, 3, 12), (100, 6, 6), (8, 2, 6), (40, 4, 8), (5, 2, 4)];
    for &(n, d, h) in &configs {
        for seed in 0..15 {
            let g = build_graph(n, d, seed, h).unwrap();
            let sccs = tarjan_scc(&to_petgraph(&g));
            assert_eq!(sccs.len(), 1, "world {n}/{d} seed {seed} has {} components", sccs.len());
            for u in 0..n {
                let nb = g.neighbors(u);
                assert_eq!(nb.len(), d);
                let mut sorted = nb.to_vec();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(sorted.len(), d, "duplicate out-edge at node {u}");
            }
        }
    }
}

#[test]
fn same_seed_same_world_different_seed_different_world() {
    let a = build_graph(30, 3, 5, 10).unwrap();
    let b = build_graph(30, 3, 5, 10).unwrap();
    let c = build_graph(30, 3, 6, 10).unwrap();
    assert_eq!(a.edges(), b.edges());
    assert_ne!(a.edges(), c.edges());
}

#[test]
fn shortest_distances_match_floyd_warshall() {
    for &(n, d, seed) in &[(20, 3, 7), (100, 6, 7), (12, 2, 1)] {
        let g = build_graph(n, d, seed, 6).unwrap();
        let fw = floyd_warshall(&g);
        for u in 0..n {
            for v in 0..n {
                assert_eq!(g.shortest_distance(u, v), fw[u][v], "d({u},{v}) on {n}/{d}");
            }
        }
    }
}

#[test]
fn enumerated_questions_are_exactly_the_solvable_pairs() {
    let g = build_graph(20, 3, 7, 4).unwrap();
    let fw = floyd_warshall(&g);
    let qs = g.enumerate_questions();
    let expected: usize = (0..20).flat_map(|u| (0..20).map(move |v| (u, v))).filter(|&(u, v)| u != v && fw[u][v] < 4).count();
    assert_eq!(qs.len(), expected);
    for (i, q) in qs.iter().enumerate() {
        assert_eq!(q.question_id, i as u64);
        assert!(g.check_question(q).is_ok());
    }
}

#[test]
fn shortest_path_plus_stop_is_correct() {
    let g = build_graph(30, 3, 2, 10).unwrap();
    for q in g.enumerate_questions().iter().step_by(7) {
        // greedy descent on the distance table
        let mut path = Vec::new();
        let mut cur = q.start;
        while cur != q.goal {
            let next = *g
                .neighbors(cur)
                .iter()
                .min_by_key(|&&v| g.shortest_distance(v, q.goal))
                .unwrap();
            path.push(next);
            cur = next;
        }
        assert_eq!(path.len(), g.shortest_distance(q.start, q.goal));
        assert_eq!(verify(&g, q, &walk(&path, true)), 1);
        assert_eq!(verify(&g, q, &walk(&path, false)), 0);
    }
}

#[test]
fn random_legal_walks_score_by_their_endpoint() {
    let g = build_graph(20, 3, 7, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let start = rng.gen_range(0..20);
        let len = rng.gen_range(0..g.budget());
        let mut moves = Vec::new();
        let mut cur = start;
        for _ in 0..len {
            cur = g.neighbors(cur)[rng.gen_range(0..3)];
            moves.push(cur);
        }
        let goal = (start + 1 + rng.gen_range(0..19)) % 20;
        let q = Question { question_id: 0, start, goal };
        assert_eq!(verify(&g, &q, &walk(&moves, true)), u8::from(cur == goal));
    }
}

#[test]
fn walks_that_never_stop_score_zero() {
    let g = build_graph(20, 3, 7, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for q in g.enumerate_questions().iter().take(200) {
        let mut moves = Vec::new();
        let mut cur = q.start;
        for _ in 0..g.budget() {
            cur = g.neighbors(cur)[rng.gen_range(0..3)];
            moves.push(cur);
        }
        assert_eq!(verify(&g, q, &walk(&moves, false)), 0);
        // one action too many: the H-th move already exhausted the episode
        assert_eq!(verify(&g, q, &walk(&moves, true)), 0);
    }
}

#[test]
fn illegal_tokens_score_zero() {
    let g = build_graph(20, 3, 7, 12).unwrap();
    let q = g.enumerate_questions()[0];
    let non_neighbor = (0..20).find(|v| !g.neighbors(q.start).contains(v)).unwrap();
    assert_eq!(verify(&g, &q, &walk(&[non_neighbor], true)), 0);
    let mut t = walk(&[], true);
    t.actions.push(Action::Stop);
    assert_eq!(verify(&g, &q, &t), 0);
    assert!(matches!(
        step(&g, EpisodeState::fresh(&q), Action::Move(non_neighbor), 12),
        Err(prefixlab::Error::IllegalAction { .. })
    ));
}

#[test]
fn budget_exhaustion_is_terminal_on_the_last_move() {
    let g = build_graph(20, 3, 7, 3).unwrap();
    let q = Question { question_id: 0, start: 0, goal: 1 };
    let mut s = EpisodeState::fresh(&q);
    for i in 0..3 {
        let v = g.neighbors(s.current)[0];
        match step(&g, s, Action::Move(v), 3).unwrap() {
            StepOutcome::Continue(next) => {
                assert!(i < 2);
                s = next;
            }
            StepOutcome::Terminal { reason, reward, .. } => {
                assert_eq!(i, 2);
                assert_eq!(reason, TerminalReason::BudgetExhausted);
                assert_eq!(reward, 0);
            }
        }
    }
}

#[test]
fn prefixes_are_checked_against_the_world() {
    let g = build_graph(20, 3, 7, 4).unwrap();
    let q = Question { question_id: 0, start: 0, goal: 5 };
    let mut moves = Vec::new();
    let mut cur = 0;
    for _ in 0..5 {
        cur = g.neighbors(cur)[1];
        moves.push(cur);
    }
    let s = apply_prefix(&g, &q, &moves[..2]).unwrap();
    assert_eq!((s.current, s.steps_used), (moves[1], 2));
    assert!(apply_prefix(&g, &q, &moves[..4]).is_ok());
    assert!(matches!(apply_prefix(&g, &q, &moves), Err(prefixlab::Error::IllegalPrefix(_))));
    let bad = (0..20).find(|v| !g.neighbors(0).contains(v)).unwrap();
    assert!(apply_prefix(&g, &q, &[bad]).is_err());
}

#[test]
fn world_file_round_trip() {
    let g = WorldGraph::build(WorldConfig { node_count: 25, out_degree: 4, budget: 9, seed: 13 }).unwrap();
    let back = WorldGraph::from_file(g.to_file()).unwrap();
    assert_eq!(back.edges(), g.edges());
    assert_eq!(back.config(), g.config());
    let mut broken = g.to_file();
    broken.edges[0][0] = broken.edges[0][1];
    assert!(WorldGraph::from_file(broken).is_err());
}

#[test]
fn invalid_world_parameters_are_rejected() {
    assert!(build_graph(3, 2, 0, 4).is_err());
    assert!(build_graph(10, 0, 0, 4).is_err());
    assert!(build_graph(10, 10, 0, 4).is_err());
    assert!(build_graph(10, 2, 0, 0).is_err());
}

//! Verifiable graph-navigation world.
//!
//! A question asks the agent to walk from `start` to `goal` along directed
//! edges and then emit `STOP`. The reward is exactly checkable by replaying the
//! action sequence, which makes this world a stand-in for questions with a
//! verifiable ground-truth answer.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::{mix64, Rng};

pub type NodeId = usize;

/// Distance used for unreachable pairs (never observed in a valid world).
pub const UNREACHABLE: usize = usize::MAX;

/// One generated token: either a move to an out-neighbor or `STOP`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Move(NodeId),
    Stop,
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Action::Move(n) => s.serialize_u64(*n as u64),
            Action::Stop => s.serialize_str("STOP"),
        }
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Move(u64),
            Token(String),
        }
        match Repr::deserialize(d)? {
            Repr::Move(n) => Ok(Action::Move(n as NodeId)),
            Repr::Token(t) if t == "STOP" => Ok(Action::Stop),
            Repr::Token(t) => Err(serde::de::Error::custom(format!("unknown token {t:?}"))),
        }
    }
}

/// Parameters that fully determine a world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub node_count: usize,
    pub out_degree: usize,
    /// Maximum number of generated actions per episode.
    pub budget: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig { node_count: 20, out_degree: 3, budget: 12, seed: 7 }
    }
}

/// Identity of a world as recorded in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphKey {
    pub node_count: usize,
    pub out_degree: usize,
    pub seed: u64,
}

impl fmt::Display for GraphKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(n={}, d={}, seed={})", self.node_count, self.out_degree, self.seed)
    }
}

/// Strongly connected out-regular digraph with an episode budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldGraph {
    node_count: usize,
    out_degree: usize,
    budget: usize,
    seed: u64,
    edges: Vec<Vec<NodeId>>,
    /// Row-major all-pairs hop counts.
    dist: Vec<usize>,
}

/// On-disk form of a world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    pub node_count: usize,
    pub out_degree: usize,
    pub seed: u64,
    pub budget: usize,
    pub edges: Vec<Vec<NodeId>>,
}

impl WorldGraph {
    /// Samples the world for `config`.
    ///
    /// Each node draws `out_degree` distinct out-neighbors (no self-loops). If
    /// the resulting digraph is not strongly connected, the draw is repeated
    /// with an incremented attempt counter, so the result is a pure function of
    /// the configuration.
    pub fn build(config: WorldConfig) -> Result<Self> {
        let WorldConfig { node_count, out_degree, budget, seed } = config;
        if node_count < 4 {
            return Err(Error::InvalidParameter(format!("node_count must be >= 4, got {node_count}")));
        }
        if out_degree < 2 || out_degree >= node_count {
            return Err(Error::InvalidParameter(format!(
                "out_degree must satisfy 2 <= d < node_count, got d={out_degree}, n={node_count}"
            )));
        }
        if budget == 0 {
            return Err(Error::InvalidParameter("budget must be positive".into()));
        }
        for attempt in 0u64.. {
            let mut rng = Rng::seed_from_u64(mix64(
                seed ^ mix64((node_count as u64) << 32 | out_degree as u64) ^ mix64(attempt.wrapping_add(0xA5A5)),
            ));
            let edges: Vec<Vec<NodeId>> = (0..node_count)
                .map(|u| {
                    let mut out: Vec<NodeId> = sample(&mut rng, node_count - 1, out_degree)
                        .into_iter()
                        .map(|i| if i >= u { i + 1 } else { i })
                        .collect();
                    out.sort_unstable();
                    out
                })
                .collect();
            if is_strongly_connected(&edges) {
                let dist = all_pairs_bfs(&edges);
                return Ok(WorldGraph { node_count, out_degree, budget, seed, edges, dist });
            }
        }
        unreachable!("attempt counter exhausted")
    }

    /// Rebuilds a world from its persisted form, validating every invariant.
    pub fn from_file(file: WorldFile) -> Result<Self> {
        let WorldFile { node_count, out_degree, seed, budget, edges } = file;
        if edges.len() != node_count || node_count < 4 || budget == 0 {
            return Err(Error::Malformed("world shape does not match node_count/budget".into()));
        }
        for (u, out) in edges.iter().enumerate() {
            let mut sorted = out.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if out.len() != out_degree || sorted.len() != out_degree || out.iter().any(|&v| v >= node_count || v == u) {
                return Err(Error::Malformed(format!("bad adjacency list for node {u}")));
            }
        }
        if !is_strongly_connected(&edges) {
            return Err(Error::Malformed("world is not strongly connected".into()));
        }
        let dist = all_pairs_bfs(&edges);
        Ok(WorldGraph { node_count, out_degree, budget, seed, edges, dist })
    }

    pub fn to_file(&self) -> WorldFile {
        WorldFile {
            node_count: self.node_count,
            out_degree: self.out_degree,
            seed: self.seed,
            budget: self.budget,
            edges: self.edges.clone(),
        }
    }

    /// Same graph with a different episode budget.
    pub fn with_budget(&self, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidParameter("budget must be positive".into()));
        }
        Ok(WorldGraph { budget, ..self.clone() })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn out_degree(&self) -> usize {
        self.out_degree
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn key(&self) -> GraphKey {
        GraphKey { node_count: self.node_count, out_degree: self.out_degree, seed: self.seed }
    }

    pub fn config(&self) -> WorldConfig {
        WorldConfig { node_count: self.node_count, out_degree: self.out_degree, budget: self.budget, seed: self.seed }
    }

    pub fn edges(&self) -> &[Vec<NodeId>] {
        &self.edges
    }

    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.edges[u]
    }

    /// Number of action slots per state: every out-neighbor plus `STOP`.
    pub fn slot_count(&self) -> usize {
        self.out_degree + 1
    }

    pub fn stop_slot(&self) -> usize {
        self.out_degree
    }

    /// Slot index of `action` at node `u`, if legal.
    pub fn slot_of(&self, u: NodeId, action: Action) -> Option<usize> {
        match action {
            Action::Stop => Some(self.out_degree),
            Action::Move(v) => self.edges[u].iter().position(|&w| w == v),
        }
    }

    /// Action corresponding to `slot` at node `u`.
    pub fn action_at(&self, u: NodeId, slot: usize) -> Action {
        if slot == self.out_degree {
            Action::Stop
        } else {
            Action::Move(self.edges[u][slot])
        }
    }

    /// BFS hop count from `u` to `v`.
    pub fn shortest_distance(&self, u: NodeId, v: NodeId) -> usize {
        self.dist[u * self.node_count + v]
    }

    /// Every solvable question, ordered by `(start, goal)` with sequential ids.
    pub fn enumerate_questions(&self) -> Vec<Question> {
        let mut out = Vec::new();
        for start in 0..self.node_count {
            for goal in 0..self.node_count {
                if start != goal && self.shortest_distance(start, goal) < self.budget {
                    out.push(Question { question_id: out.len() as u64, start, goal });
                }
            }
        }
        out
    }

    /// Checks the question invariants against this world.
    pub fn check_question(&self, q: &Question) -> Result<()> {
        if q.start >= self.node_count || q.goal >= self.node_count {
            return Err(Error::InvalidParameter(format!("question {} names a node outside the world", q.question_id)));
        }
        if q.start == q.goal {
            return Err(Error::InvalidParameter(format!("question {} has start == goal", q.question_id)));
        }
        if self.shortest_distance(q.start, q.goal) >= self.budget {
            return Err(Error::InvalidParameter(format!("question {} is not solvable within the budget", q.question_id)));
        }
        Ok(())
    }
}

fn reachable_all(adj: &[Vec<NodeId>]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Forward and reverse reachability from node 0.
fn is_strongly_connected(edges: &[Vec<NodeId>]) -> bool {
    let mut rev = vec![Vec::new(); edges.len()];
    for (u, out) in edges.iter().enumerate() {
        for &v in out {
            rev[v].push(u);
        }
    }
    reachable_all(edges) && reachable_all(&rev)
}

fn all_pairs_bfs(edges: &[Vec<NodeId>]) -> Vec<usize> {
    let n = edges.len();
    let mut dist = vec![UNREACHABLE; n * n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        let row = &mut dist[s * n..(s + 1) * n];
        row[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &v in &edges[u] {
                if row[v] == UNREACHABLE {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    dist
}

/// Convenience wrapper over [`WorldGraph::build`].
pub fn build_graph(node_count: usize, out_degree: usize, seed: u64, budget: usize) -> Result<WorldGraph> {
    WorldGraph::build(WorldConfig { node_count, out_degree, budget, seed })
}

/// A verifiable task instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Question {
    pub question_id: u64,
    pub start: NodeId,
    pub goal: NodeId,
}

/// Position of an episode in progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EpisodeState {
    pub current: NodeId,
    pub steps_used: usize,
    pub goal: NodeId,
}

impl EpisodeState {
    pub fn fresh(question: &Question) -> Self {
        EpisodeState { current: question.start, steps_used: 0, goal: question.goal }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Stopped,
    BudgetExhausted,
}

/// Result of applying one action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue(EpisodeState),
    Terminal { reason: TerminalReason, position: NodeId, reward: u8 },
}

/// Advances `state` by `action` under an episode budget of `budget` actions.
pub fn step(graph: &WorldGraph, state: EpisodeState, action: Action, budget: usize) -> Result<StepOutcome> {
    if state.steps_used >= budget {
        return Err(Error::InvalidParameter(format!(
            "episode already used {} of {budget} steps",
            state.steps_used
        )));
    }
    match action {
        Action::Stop => Ok(StepOutcome::Terminal {
            reason: TerminalReason::Stopped,
            position: state.current,
            reward: u8::from(state.current == state.goal),
        }),
        Action::Move(v) => {
            if !graph.neighbors(state.current).contains(&v) {
                return Err(Error::IllegalAction { node: state.current, action });
            }
            let next = EpisodeState { current: v, steps_used: state.steps_used + 1, goal: state.goal };
            if next.steps_used == budget {
                Ok(StepOutcome::Terminal { reason: TerminalReason::BudgetExhausted, position: v, reward: 0 })
            } else {
                Ok(StepOutcome::Continue(next))
            }
        }
    }
}

/// A sampled response: the full action sequence from the question start,
/// including any conditioning prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: u64,
    pub actions: Vec<Action>,
    /// Leading actions that came from a conditioning prefix rather than sampling.
    #[serde(default)]
    pub prefix_len: usize,
    pub reward: u8,
    /// Log-probability of every action under the generating policy.
    pub step_logprobs: Vec<f64>,
    pub terminal_reason: TerminalReason,
}

impl Trajectory {
    /// Move actions (everything except a trailing `STOP`).
    pub fn moves(&self) -> Vec<NodeId> {
        self.actions
            .iter()
            .filter_map(|a| match a {
                Action::Move(v) => Some(*v),
                Action::Stop => None,
            })
            .collect()
    }

    pub fn move_count(&self) -> usize {
        self.actions.iter().filter(|a| matches!(a, Action::Move(_))).count()
    }

    /// Number of sampled (non-prefix) actions.
    pub fn continuation_len(&self) -> usize {
        self.actions.len() - self.prefix_len
    }

    pub fn final_position(&self, start: NodeId) -> NodeId {
        self.moves().last().copied().unwrap_or(start)
    }

    pub fn total_logprob(&self) -> f64 {
        self.step_logprobs.iter().sum()
    }
}

/// Replays `trajectory` from the question start under the world budget.
pub fn verify(graph: &WorldGraph, question: &Question, trajectory: &Trajectory) -> u8 {
    verify_with_budget(graph, question, trajectory, graph.budget())
}

/// Returns 1 iff the actions form a legal walk that ends with `STOP` on the
/// goal within `budget` actions. Malformed sequences score 0.
pub fn verify_with_budget(graph: &WorldGraph, question: &Question, trajectory: &Trajectory, budget: usize) -> u8 {
    let mut state = EpisodeState::fresh(question);
    let n = trajectory.actions.len();
    for (i, &action) in trajectory.actions.iter().enumerate() {
        match step(graph, state, action, budget) {
            Ok(StepOutcome::Continue(next)) => state = next,
            Ok(StepOutcome::Terminal { reward, .. }) => return if i + 1 == n { reward } else { 0 },
            Err(_) => return 0,
        }
    }
    0
}

/// State reached after forcing `prefix` (a sequence of move targets) from the
/// question start.
///
/// A prefix that consumes the whole budget yields an exhausted state from which
/// no continuation can be sampled; every rollout from it scores 0.
pub fn apply_prefix(graph: &WorldGraph, question: &Question, prefix: &[NodeId]) -> Result<EpisodeState> {
    apply_prefix_with_budget(graph, question, prefix, graph.budget())
}

pub fn apply_prefix_with_budget(
    graph: &WorldGraph,
    question: &Question,
    prefix: &[NodeId],
    budget: usize,
) -> Result<EpisodeState> {
    if prefix.len() > budget {
        return Err(Error::IllegalPrefix(format!(
            "prefix of length {} exceeds budget {budget}",
            prefix.len()
        )));
    }
    let mut state = EpisodeState::fresh(question);
    for &v in prefix {
        if v >= graph.node_count() || !graph.neighbors(state.current).contains(&v) {
            return Err(Error::IllegalPrefix(format!("no edge {} -> {v}", state.current)));
        }
        state.current = v;
        state.steps_used += 1;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> WorldGraph {
        WorldGraph::build(WorldConfig::default()).unwrap()
    }

    #[test]
    fn four_node_world_is_complete() {
        for seed in 0..20 {
            let g = build_graph(4, 3, seed, 5).unwrap();
            for u in 0..4 {
                let expect: Vec<_> = (0..4).filter(|&v| v != u).collect();
                assert_eq!(g.neighbors(u), expect.as_slice());
                for v in 0..4 {
                    assert_eq!(g.shortest_distance(u, v), usize::from(u != v));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_graph(3, 2, 0, 5).is_err());
        assert!(build_graph(10, 1, 0, 5).is_err());
        assert!(build_graph(10, 10, 0, 5).is_err());
        assert!(build_graph(10, 3, 0, 0).is_err());
    }

    #[test]
    fn distances_are_consistent_with_edges() {
        let g = world();
        for u in 0..g.node_count() {
            assert_eq!(g.shortest_distance(u, u), 0);
            for &v in g.neighbors(u) {
                assert_eq!(g.shortest_distance(u, v), 1);
            }
        }
    }

    #[test]
    fn stop_and_budget_boundaries() {
        let g = world();
        let u = 3;
        let v = g.neighbors(u)[0];
        let s = EpisodeState { current: u, steps_used: 2, goal: u };
        assert_eq!(
            step(&g, s, Action::Stop, 12).unwrap(),
            StepOutcome::Terminal { reason: TerminalReason::Stopped, position: u, reward: 1 }
        );
        let s = EpisodeState { current: u, steps_used: 11, goal: 0 };
        assert_eq!(
            step(&g, s, Action::Move(v), 12).unwrap(),
            StepOutcome::Terminal { reason: TerminalReason::BudgetExhausted, position: v, reward: 0 }
        );
        let illegal = (0..g.node_count()).find(|w| !g.neighbors(u).contains(w)).unwrap();
        assert!(matches!(step(&g, s, Action::Move(illegal), 12), Err(Error::IllegalAction { .. })));
    }

    fn traj(actions: Vec<Action>) -> Trajectory {
        let n = actions.len();
        Trajectory {
            question_id: 0,
            actions,
            prefix_len: 0,
            reward: 0,
            step_logprobs: vec![0.0; n],
            terminal_reason: TerminalReason::Stopped,
        }
    }

    #[test]
    fn verify_examples() {
        let g = world();
        let n = g.neighbors(2)[1];
        let q = Question { question_id: 0, start: 2, goal: n };
        assert_eq!(verify(&g, &q, &traj(vec![Action::Move(n), Action::Stop])), 1);
        assert_eq!(verify(&g, &q, &traj(vec![Action::Stop])), 0);
        // trailing garbage after STOP is malformed
        assert_eq!(verify(&g, &q, &traj(vec![Action::Move(n), Action::Stop, Action::Stop])), 0);
        // never stopping scores zero even when the walk ends on the goal
        let mut walk = vec![];
        let mut cur = 2;
        for _ in 0..g.budget() {
            let next = g.neighbors(cur)[0];
            walk.push(Action::Move(next));
            cur = next;
        }
        let q2 = Question { question_id: 1, start: 2, goal: cur };
        assert_eq!(verify(&g, &q2, &traj(walk)), 0);
    }

    #[test]
    fn prefix_application() {
        let g = world();
        let q = Question { question_id: 0, start: 0, goal: 5 };
        assert_eq!(apply_prefix(&g, &q, &[]).unwrap(), EpisodeState::fresh(&q));
        let a = g.neighbors(0)[0];
        let b = g.neighbors(a)[2];
        let s = apply_prefix(&g, &q, &[a, b]).unwrap();
        assert_eq!((s.current, s.steps_used), (b, 2));
        let bad = (0..g.node_count()).find(|w| !g.neighbors(0).contains(w)).unwrap();
        assert!(matches!(apply_prefix(&g, &q, &[bad]), Err(Error::IllegalPrefix(_))));
        let long = vec![a; g.budget() + 1];
        assert!(apply_prefix(&g, &q, &long).is_err());
    }

    #[test]
    fn world_file_round_trip() {
        let g = world();
        let json = serde_json::to_string(&g.to_file()).unwrap();
        let back = WorldGraph::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn action_serialization() {
        let v = vec![Action::Move(3), Action::Stop];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[3,"STOP"]"#);
        assert_eq!(serde_json::from_str::<Vec<Action>>(&s).unwrap(), v);
    }

    #[test]
    fn all_enumerated_questions_are_solvable() {
        let g = world();
        let qs = g.enumerate_questions();
        assert!(!qs.is_empty());
        for q in &qs {
            g.check_question(q).unwrap();
        }
    }
}

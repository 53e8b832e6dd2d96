//! Online cascade detection: Watch onset, weak-link feasibility,
//! instant and adaptive-window multi-turn confirmation, and the cached
//! influence interval handed to attribution.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{AttributionError, ConfigError};
use crate::mat::Matrix;
use crate::spectral::SpectralSignals;
use crate::topology::{SystemTopology, NUM_CHANNELS};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub epsilon: f64,
    /// Minimum number of turns retained in the influence cache; an active
    /// candidate extends retention to twice its window.
    pub cache_min_turns: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            epsilon: 1e-8,
            cache_min_turns: 64,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epsilon <= 0.0 {
            return Err(ConfigError::Invalid("detector.epsilon must be positive".into()));
        }
        if self.cache_min_turns == 0 {
            return Err(ConfigError::Invalid(
                "detector.cache_min_turns must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Earliest-onset predicate: growing energy, contracting gap, and growth
/// carried by the dominant mode rather than redistribution.
pub fn watch(signals: &SpectralSignals, lambda1_prev: f64) -> bool {
    signals.amp > 1.0 && signals.gap_contraction > 0.0 && signals.lambda1 > lambda1_prev
}

/// Widest-path feasibility result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakLinkResult {
    pub bottleneck: f64,
    pub energy_scale: f64,
    pub feasible: bool,
    pub witness_path: Vec<usize>,
}

/// Bottleneck widest-path check over the structural graph with weights
/// from the normalized influence matrix.
///
/// `B` is the best min-edge weight over simple directed paths of length
/// at most `diam(G0)` (dynamic program over (hops, node) states — cycles
/// never improve a bottleneck, so the walk relaxation is exact for simple
/// paths). The energy scale is `sum(w^2) / (sum(w) + eps)` over structural
/// edges; the route is feasible when `B` meets it.
pub fn weak_link(a_tilde: &Matrix, topo: &SystemTopology, eps: f64) -> WeakLinkResult {
    let n = topo.agent_count();
    let mut sum_w = 0.0;
    let mut sum_w2 = 0.0;
    for (i, j) in topo.edges() {
        let w = a_tilde.get(i, j);
        sum_w += w;
        sum_w2 += w * w;
    }
    let energy_scale = sum_w2 / (sum_w + eps);

    let hop_cap = topo.diameter();
    if hop_cap == 0 || topo.edge_count() == 0 {
        return WeakLinkResult {
            bottleneck: 0.0,
            energy_scale,
            feasible: 0.0 >= energy_scale,
            witness_path: Vec::new(),
        };
    }

    // best[h][v]: best bottleneck over walks of <= h edges (>= 1 edge)
    // ending at v; parent pointers reconstruct a witness walk.
    #[derive(Clone, Copy)]
    enum Step {
        None,
        Start(usize),
        Carry,
        Extend(usize),
    }
    let mut best = vec![vec![f64::NEG_INFINITY; n]; hop_cap + 1];
    let mut step = vec![vec![Step::None; n]; hop_cap + 1];
    for (u, v) in topo.edges() {
        let w = a_tilde.get(u, v);
        if w > best[1][v] {
            best[1][v] = w;
            step[1][v] = Step::Start(u);
        }
    }
    for h in 2..=hop_cap {
        for v in 0..n {
            best[h][v] = best[h - 1][v];
            step[h][v] = if best[h - 1][v] > f64::NEG_INFINITY {
                Step::Carry
            } else {
                Step::None
            };
        }
        for (u, v) in topo.edges() {
            if best[h - 1][u] > f64::NEG_INFINITY {
                let cand = best[h - 1][u].min(a_tilde.get(u, v));
                if cand > best[h][v] {
                    best[h][v] = cand;
                    step[h][v] = Step::Extend(u);
                }
            }
        }
    }

    let mut bottleneck = f64::NEG_INFINITY;
    let mut end = 0;
    for v in 0..n {
        if best[hop_cap][v] > bottleneck {
            bottleneck = best[hop_cap][v];
            end = v;
        }
    }
    if bottleneck == f64::NEG_INFINITY {
        return WeakLinkResult {
            bottleneck: 0.0,
            energy_scale,
            feasible: 0.0 >= energy_scale,
            witness_path: Vec::new(),
        };
    }

    // Reconstruct the witness walk, then excise any cycles; removing a
    // cycle only raises the min and shortens the walk, so the resulting
    // simple path still achieves the bottleneck.
    let mut walk = vec![end];
    let mut h = hop_cap;
    let mut v = end;
    loop {
        match step[h][v] {
            Step::Start(u) => {
                walk.push(u);
                break;
            }
            Step::Carry => {
                h -= 1;
            }
            Step::Extend(u) => {
                walk.push(u);
                v = u;
                h -= 1;
            }
            Step::None => break,
        }
    }
    walk.reverse();
    let witness_path = excise_cycles(walk);

    WeakLinkResult {
        bottleneck,
        energy_scale,
        feasible: bottleneck >= energy_scale,
        witness_path,
    }
}

fn excise_cycles(walk: Vec<usize>) -> Vec<usize> {
    let mut path: Vec<usize> = Vec::with_capacity(walk.len());
    for node in walk {
        if let Some(pos) = path.iter().position(|&p| p == node) {
            path.truncate(pos);
        }
        path.push(node);
    }
    path
}

/// One turn's cached influence views.
#[derive(Debug, Clone)]
pub struct CachedTurn {
    pub unified: Matrix,
    pub raw: Matrix,
    /// Degree-normalized channel slices.
    pub channels: [Matrix; NUM_CHANNELS],
    /// Unnormalized channel slices, for absolute channel comparisons.
    pub raw_channels: [Matrix; NUM_CHANNELS],
}

/// Ring buffer of recent influence views keyed by turn.
#[derive(Debug, Default)]
pub struct InfluenceCache {
    ring: VecDeque<(u64, CachedTurn)>,
}

impl InfluenceCache {
    pub fn push(&mut self, turn: u64, cached: CachedTurn, retention: usize) {
        self.ring.push_back((turn, cached));
        while self.ring.len() > retention {
            self.ring.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    /// All cached turns in `[t_w, t0]`, erroring on gaps.
    pub fn interval(&self, t_w: u64, t0: u64) -> Result<Vec<&CachedTurn>, AttributionError> {
        let mut found = Vec::new();
        let mut missing = Vec::new();
        for turn in t_w..=t0 {
            match self.ring.iter().find(|(t, _)| *t == turn) {
                Some((_, c)) => found.push(c),
                None => missing.push(turn),
            }
        }
        if missing.is_empty() {
            Ok(found)
        } else {
            Err(AttributionError::IncompleteCache { t_w, t0, missing })
        }
    }
}

/// Outcome of one detector step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorEvent {
    None,
    WatchStarted,
    InstantCascade,
    MultiTurnCascade,
    CandidateDiscarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeKind {
    Instant,
    MultiTurn,
}

/// A confirmed cascade.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Declaration {
    pub kind: CascadeKind,
    pub t_w: u64,
    pub t0: u64,
    pub window: u64,
    pub declared_at: u64,
}

#[derive(Debug, Clone)]
struct Candidate {
    t_w: u64,
    window: u64,
    t0: u64,
    watch_turns: u64,
    transition_seen: bool,
}

/// Sequential detection state machine for one monitored session.
pub struct DetectorState {
    cfg: DetectorConfig,
    candidate: Option<Candidate>,
    declarations: Vec<Declaration>,
    cache: InfluenceCache,
}

impl DetectorState {
    pub fn new(cfg: DetectorConfig) -> Self {
        DetectorState {
            cfg,
            candidate: None,
            declarations: Vec::new(),
            cache: InfluenceCache::default(),
        }
    }

    pub fn declarations(&self) -> &[Declaration] {
        &self.declarations
    }

    pub fn cache(&self) -> &InfluenceCache {
        &self.cache
    }

    pub fn active_window(&self) -> Option<(u64, u64)> {
        self.candidate.as_ref().map(|c| (c.t_w, c.t0))
    }

    /// Cache this turn's influence views. Must run before [`Self::step`]
    /// so an instant declaration can attribute from its own turn.
    pub fn cache_turn(&mut self, turn: u64, cached: CachedTurn) {
        let retention = self
            .candidate
            .as_ref()
            .map(|c| 2 * c.window as usize)
            .unwrap_or(0)
            .max(self.cfg.cache_min_turns);
        self.cache.push(turn, cached, retention);
    }

    /// Advance the state machine by one turn.
    pub fn step(
        &mut self,
        turn: u64,
        signals: &SpectralSignals,
        watch_now: bool,
        weaklink: &WeakLinkResult,
    ) -> DetectorEvent {
        if let Some(cand) = &mut self.candidate {
            cand.watch_turns += watch_now as u64;
            cand.transition_seen |= signals.phase_shift || signals.cross_channel;
            if turn < cand.t0 {
                return DetectorEvent::None;
            }
            let majority = 2 * cand.watch_turns >= cand.window;
            let confirmed = majority && cand.transition_seen;
            let (t_w, t0, window) = (cand.t_w, cand.t0, cand.window);
            self.candidate = None;
            return if confirmed {
                self.declarations.push(Declaration {
                    kind: CascadeKind::MultiTurn,
                    t_w,
                    t0,
                    window,
                    declared_at: turn,
                });
                DetectorEvent::MultiTurnCascade
            } else {
                DetectorEvent::CandidateDiscarded
            };
        }

        if !watch_now {
            return DetectorEvent::None;
        }
        let t_w = turn;
        let transition = signals.phase_shift || signals.cross_channel;
        if transition && weaklink.feasible {
            self.declarations.push(Declaration {
                kind: CascadeKind::Instant,
                t_w,
                t0: t_w,
                window: 1,
                declared_at: turn,
            });
            return DetectorEvent::InstantCascade;
        }
        let window = (1.0 / (signals.gap + self.cfg.epsilon)).ceil().max(1.0) as u64;
        if window <= 1 {
            // A one-turn window is subsumed by the instant rule, which
            // just failed; discard immediately.
            return DetectorEvent::CandidateDiscarded;
        }
        self.candidate = Some(Candidate {
            t_w,
            window,
            t0: t_w + window - 1,
            watch_turns: 1,
            transition_seen: transition,
        });
        DetectorEvent::WatchStarted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::SystemTopology;
    use approx::assert_relative_eq;

    const EPS: f64 = 1e-8;

    fn signals(
        amp: f64,
        gap: f64,
        gap_contraction: f64,
        lambda1: f64,
        phase_shift: bool,
        cross_channel: bool,
    ) -> SpectralSignals {
        let mut s = SpectralSignals::first_turn(lambda1, 0.0, EPS);
        s.amp = amp;
        s.gap = gap;
        s.gap_contraction = gap_contraction;
        s.phase_shift = phase_shift;
        s.cross_channel = cross_channel;
        s
    }

    #[test]
    fn watch_fires_on_all_three_conjuncts() {
        let s = signals(1.3, 0.5, 0.05, 2.0, false, false);
        assert!(watch(&s, 1.5));
    }

    #[test]
    fn watch_requires_dominant_mode_growth() {
        // amp and gap contraction fine, but lambda1 falling.
        let s = signals(1.3, 0.5, 0.05, 1.2, false, false);
        assert!(!watch(&s, 1.5));
    }

    #[test]
    fn watch_requires_amplification() {
        let s = signals(0.9, 0.5, 0.05, 2.0, false, false);
        assert!(!watch(&s, 1.5));
    }

    fn weights(topo: &SystemTopology, entries: &[((usize, usize), f64)]) -> Matrix {
        let mut m = Matrix::zeros(topo.agent_count(), topo.agent_count());
        for &((i, j), w) in entries {
            m.set(i, j, w);
        }
        m
    }

    #[test]
    fn weak_link_single_edge_boundary() {
        let topo = SystemTopology::new(2, vec![(0, 1)]).unwrap();
        let m = weights(&topo, &[((0, 1), 0.7)]);
        let r = weak_link(&m, &topo, EPS);
        assert_relative_eq!(r.bottleneck, 0.7);
        assert_relative_eq!(r.energy_scale, 0.49 / (0.7 + EPS), epsilon = 1e-9);
        assert!(r.feasible, "boundary case B = w_eng must be feasible");
        assert_eq!(r.witness_path, vec![0, 1]);
    }

    #[test]
    fn weak_link_uniform_weights_feasible() {
        let topo = SystemTopology::new(3, vec![(0, 1), (1, 2), (2, 0)]).unwrap();
        let m = weights(&topo, &[((0, 1), 0.4), ((1, 2), 0.4), ((2, 0), 0.4)]);
        let r = weak_link(&m, &topo, EPS);
        assert_relative_eq!(r.bottleneck, 0.4);
        assert!(r.feasible);
    }

    #[test]
    fn weak_link_chain_with_shortcut_matches_enumeration() {
        // 0 -> 1 -> 2 -> 3 with weights (0.9, 0.2, 0.9) and shortcut
        // 1 -> 3 at 0.5. A single strong edge is itself a valid path, so
        // the best bottleneck is 0.9; the best multi-hop route is
        // 0 -> 1 -> 3 at 0.5.
        let topo = SystemTopology::new(4, vec![(0, 1), (1, 2), (2, 3), (1, 3)]).unwrap();
        let m = weights(
            &topo,
            &[((0, 1), 0.9), ((1, 2), 0.2), ((2, 3), 0.9), ((1, 3), 0.5)],
        );
        let r = weak_link(&m, &topo, EPS);
        let oracle = brute_force_bottleneck(&m, &topo);
        assert_relative_eq!(r.bottleneck, oracle, epsilon = 1e-12);
        assert_relative_eq!(r.bottleneck, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn weak_link_empty_graph_degenerate() {
        let topo = SystemTopology::new(3, Vec::new()).unwrap();
        let m = Matrix::zeros(3, 3);
        let r = weak_link(&m, &topo, EPS);
        assert_eq!(r.bottleneck, 0.0);
        assert_eq!(r.energy_scale, 0.0);
        assert!(r.feasible);
        assert!(r.witness_path.is_empty());
    }

    /// Exhaustive simple-path enumeration oracle.
    pub(crate) fn brute_force_bottleneck(m: &Matrix, topo: &SystemTopology) -> f64 {
        let n = topo.agent_count();
        let cap = topo.diameter();
        let mut best = f64::NEG_INFINITY;
        fn dfs(
            node: usize,
            visited: u64,
            hops: usize,
            cap: usize,
            bottleneck: f64,
            m: &Matrix,
            topo: &SystemTopology,
            best: &mut f64,
        ) {
            if hops >= 1 && bottleneck > *best {
                *best = bottleneck;
            }
            if hops == cap {
                return;
            }
            for &next in topo.out_neighbors(node) {
                if visited & (1 << next) == 0 {
                    dfs(
                        next,
                        visited | (1 << next),
                        hops + 1,
                        cap,
                        bottleneck.min(m.get(node, next)),
                        m,
                        topo,
                        best,
                    );
                }
            }
        }
        for start in 0..n {
            dfs(start, 1 << start, 0, cap, f64::INFINITY, m, topo, &mut best);
        }
        if best == f64::NEG_INFINITY {
            0.0
        } else {
            best
        }
    }

    #[test]
    fn weak_link_matches_oracle_on_random_graphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..60 {
            let n = rng.gen_range(2..=6);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.gen_bool(0.45) {
                        edges.push((i, j));
                    }
                }
            }
            let topo = SystemTopology::new(n, edges.clone()).unwrap();
            let mut m = Matrix::zeros(n, n);
            for (i, j) in edges {
                m.set(i, j, rng.gen::<f64>());
            }
            let r = weak_link(&m, &topo, EPS);
            let oracle = brute_force_bottleneck(&m, &topo);
            assert!(
                (r.bottleneck - oracle).abs() < 1e-12,
                "dp {} vs oracle {}",
                r.bottleneck,
                oracle
            );
            // Witness must be a simple path achieving the bottleneck.
            if r.witness_path.len() >= 2 {
                let mut seen = std::collections::BTreeSet::new();
                let mut min_w = f64::INFINITY;
                for w in r.witness_path.windows(2) {
                    assert!(topo.is_feasible(w[0], w[1]));
                    min_w = min_w.min(m.get(w[0], w[1]));
                }
                assert!(r.witness_path.iter().all(|x| seen.insert(*x)));
                assert!(r.witness_path.len() - 1 <= topo.diameter());
                assert_relative_eq!(min_w, r.bottleneck, epsilon = 1e-12);
            }
        }
    }

    fn feasible_link() -> WeakLinkResult {
        WeakLinkResult {
            bottleneck: 1.0,
            energy_scale: 0.5,
            feasible: true,
            witness_path: vec![0, 1],
        }
    }

    fn infeasible_link() -> WeakLinkResult {
        WeakLinkResult {
            bottleneck: 0.1,
            energy_scale: 0.5,
            feasible: false,
            witness_path: vec![0, 1],
        }
    }

    #[test]
    fn window_arithmetic() {
        // g = 0.25 => W = 4, t0 = t_w + 3.
        let mut det = DetectorState::new(DetectorConfig::default());
        let s = signals(1.2, 0.25, 0.1, 2.0, false, false);
        let ev = det.step(10, &s, true, &infeasible_link());
        assert_eq!(ev, DetectorEvent::WatchStarted);
        assert_eq!(det.active_window(), Some((10, 13)));
    }

    #[test]
    fn instant_cascade_at_onset() {
        let mut det = DetectorState::new(DetectorConfig::default());
        let s = signals(1.5, 0.3, 0.1, 2.0, true, false);
        let ev = det.step(7, &s, true, &feasible_link());
        assert_eq!(ev, DetectorEvent::InstantCascade);
        let d = &det.declarations()[0];
        assert_eq!(d.t_w, 7);
        assert_eq!(d.t0, 7);
        assert_eq!(d.kind, CascadeKind::Instant);
    }

    #[test]
    fn multi_turn_majority_is_inclusive() {
        // W = 4; watch holds on exactly 2 of 4 turns; one cross-channel
        // event in the interval confirms.
        let mut det = DetectorState::new(DetectorConfig::default());
        let onset = signals(1.2, 0.25, 0.05, 2.0, false, false);
        assert_eq!(
            det.step(5, &onset, true, &infeasible_link()),
            DetectorEvent::WatchStarted
        );
        let w2 = signals(1.1, 0.25, 0.01, 2.1, false, true);
        assert_eq!(det.step(6, &w2, true, &infeasible_link()), DetectorEvent::None);
        let quiet = signals(0.9, 0.3, -0.05, 1.9, false, false);
        assert_eq!(det.step(7, &quiet, false, &infeasible_link()), DetectorEvent::None);
        let ev = det.step(8, &quiet, false, &infeasible_link());
        assert_eq!(ev, DetectorEvent::MultiTurnCascade);
        let d = &det.declarations()[0];
        assert_eq!(d.kind, CascadeKind::MultiTurn);
        assert_eq!((d.t_w, d.t0, d.window), (5, 8, 4));
    }

    #[test]
    fn failed_interval_discards_and_reenters_next_turn() {
        let mut det = DetectorState::new(DetectorConfig::default());
        let onset = signals(1.2, 0.4, 0.05, 2.0, false, false);
        // W = ceil(1/0.4) = 3, interval [5, 7].
        assert_eq!(
            det.step(5, &onset, true, &infeasible_link()),
            DetectorEvent::WatchStarted
        );
        let quiet = signals(0.9, 0.4, -0.01, 1.9, false, false);
        assert_eq!(det.step(6, &quiet, false, &infeasible_link()), DetectorEvent::None);
        assert_eq!(
            det.step(7, &quiet, false, &infeasible_link()),
            DetectorEvent::CandidateDiscarded
        );
        assert!(det.active_window().is_none());
        // Re-entry on the very next turn.
        assert_eq!(
            det.step(8, &onset, true, &infeasible_link()),
            DetectorEvent::WatchStarted
        );
    }

    #[test]
    fn degenerate_one_turn_window_discards_immediately() {
        let mut det = DetectorState::new(DetectorConfig::default());
        // gap ~ 1 => W = 1; instant rule failed (no weak link), so the
        // candidate dies on the spot.
        let s = signals(1.4, 1.0, 0.2, 2.0, true, false);
        assert_eq!(
            det.step(4, &s, true, &infeasible_link()),
            DetectorEvent::CandidateDiscarded
        );
        assert!(det.active_window().is_none());
        assert!(det.declarations().is_empty());
    }

    #[test]
    fn cache_interval_reports_missing_turns() {
        let mut cache = InfluenceCache::default();
        let ct = || CachedTurn {
            unified: Matrix::zeros(2, 2),
            raw: Matrix::zeros(2, 2),
            channels: [
                Matrix::zeros(2, 2),
                Matrix::zeros(2, 2),
                Matrix::zeros(2, 2),
                Matrix::zeros(2, 2),
            ],
        };
        cache.push(3, ct(), 8);
        cache.push(5, ct(), 8);
        let err = cache.interval(3, 5).unwrap_err();
        match err {
            AttributionError::IncompleteCache { missing, .. } => {
                assert_eq!(missing, vec![4]);
            }
        }
        assert!(cache.interval(5, 5).is_ok());
    }
}

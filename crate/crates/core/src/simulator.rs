//! Labeled synthetic trace generation: benign collaboration plus three
//! cascade families (intent, execution, coordination) with planted
//! origin, bridge, amplifier, spine, and onset ground truth.
//!
//! Dependence is planted numerically: attack payloads embed per-turn
//! latent signals through tokens drawn from a fixed vocabulary (text
//! channels) or through shared runtime-feature modulation (exec), which
//! the hashed encoder preserves by construction. Benign payloads keep
//! source and target content independent, so benign edges carry no
//! conditional dependence.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::detector::CascadeKind;
use crate::error::ConfigError;
use crate::topology::{Channel, SystemTopology, CHANNELS};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    HubAndSpoke,
    Hierarchical,
    Decentralized,
    Custom(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Intent,
    Execution,
    Coordination,
}

impl AttackKind {
    pub fn label(self) -> &'static str {
        match self {
            AttackKind::None => "benign",
            AttackKind::Intent => "intent",
            AttackKind::Execution => "execution",
            AttackKind::Coordination => "coordination",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StrengthProfile {
    Gradual,
    Abrupt,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Easy,
    Hard,
}

impl Regime {
    fn base_strength(self) -> f64 {
        match self {
            Regime::Easy => 1.0,
            Regime::Hard => 0.45,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub topology: TopologyKind,
    pub agent_count: usize,
    pub turns: u64,
    pub attack: AttackKind,
    #[serde(default)]
    pub injection_turn: u64,
    #[serde(default = "default_profile")]
    pub profile: StrengthProfile,
    #[serde(default = "default_regime")]
    pub regime: Regime,
    /// Extra multiplier on the planted dependence strength.
    #[serde(default)]
    pub strength: Option<f64>,
    pub seed: u64,
    /// Expand this scenario into `count` copies with consecutive seeds.
    #[serde(default)]
    pub count: Option<u64>,
}

fn default_profile() -> StrengthProfile {
    StrengthProfile::Gradual
}

fn default_regime() -> Regime {
    Regime::Easy
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agent_count < 3 {
            return Err(ConfigError::Invalid(
                "scenario.agent_count must be at least 3".into(),
            ));
        }
        if self.turns == 0 {
            return Err(ConfigError::Invalid("scenario.turns must be positive".into()));
        }
        if self.attack != AttackKind::None && self.injection_turn >= self.turns {
            return Err(ConfigError::Invalid(
                "scenario.injection_turn must be before the end of the trace".into(),
            ));
        }
        Ok(())
    }
}

/// Planted labels for one generated trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: String,
    pub is_attack: bool,
    pub cascade_kind: Option<CascadeKind>,
    pub onset_turn: Option<u64>,
    pub origin: Vec<usize>,
    pub bridge: Vec<usize>,
    pub amplifier: Vec<usize>,
    pub spines: Vec<Vec<usize>>,
    pub spine_channels: Vec<Channel>,
}

impl GroundTruth {
    fn benign() -> Self {
        GroundTruth {
            scenario: "benign".into(),
            is_attack: false,
            cascade_kind: None,
            onset_turn: None,
            origin: Vec::new(),
            bridge: Vec::new(),
            amplifier: Vec::new(),
            spines: Vec::new(),
            spine_channels: Vec::new(),
        }
    }
}

/// A generated trace in wire format plus its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedTrace {
    /// Header line followed by one event line per record.
    pub lines: Vec<String>,
    pub truth: GroundTruth,
}

pub fn build_topology_edges(
    kind: &TopologyKind,
    n: usize,
) -> Result<Vec<(usize, usize)>, ConfigError> {
    let mut edges = Vec::new();
    match kind {
        TopologyKind::HubAndSpoke => {
            // Hub 0 talks both ways with every spoke; a thin directed
            // spoke ring keeps non-hub agents with a second hop.
            for i in 1..n {
                edges.push((0, i));
                edges.push((i, 0));
            }
            for i in 1..n {
                let next = if i + 1 < n { i + 1 } else { 1 };
                if next != i {
                    edges.push((i, next));
                }
            }
        }
        TopologyKind::Hierarchical => {
            for child in 1..n {
                let parent = (child - 1) / 2;
                edges.push((parent, child));
                edges.push((child, parent));
            }
        }
        TopologyKind::Decentralized => {
            for i in 0..n {
                let next = (i + 1) % n;
                edges.push((i, next));
                edges.push((next, i));
                if n >= 5 {
                    let hop = (i + 2) % n;
                    edges.push((i, hop));
                    edges.push((hop, i));
                }
            }
        }
        TopologyKind::Custom(list) => {
            edges = list.clone();
        }
    }
    edges.sort();
    edges.dedup();
    if edges.is_empty() {
        return Err(ConfigError::Invalid("topology has no edges".into()));
    }
    Ok(edges)
}

const SIG_VOCAB: usize = 32;

struct Latent {
    /// (signal token index, repeat count) pairs for this turn.
    tokens: Vec<(usize, usize)>,
    /// Runtime-feature latents in [0, 1], quantized to five levels.
    q_latency: f64,
    q_tokens: f64,
}

fn draw_latent(rng: &mut ChaCha8Rng) -> Latent {
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        let idx = rng.gen_range(0..SIG_VOCAB);
        if !tokens.iter().any(|&(i, _)| i == idx) {
            tokens.push((idx, rng.gen_range(1..=3)));
        }
    }
    Latent {
        tokens,
        q_latency: rng.gen_range(0..5) as f64 / 4.0,
        q_tokens: rng.gen_range(0..5) as f64 / 4.0,
    }
}

fn template(agent: usize, channel: Channel) -> String {
    format!("a{agent} {} base report steady", channel.name())
}

fn noise_token(agent: usize, rng: &mut ChaCha8Rng) -> String {
    format!("n{agent}x{}", rng.gen_range(0..3))
}

/// Render the latent's signal tokens. `echo` is a correlation dial: each
/// token is kept with probability `echo` and otherwise replaced by an
/// independent draw from the vocabulary, so sub-unit echoes decorrelate
/// the two sides instead of merely shrinking counts (which rank
/// normalization would erase).
fn sig_text(latent: &Latent, echo: f64, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    for &(idx, count) in &latent.tokens {
        let kept = echo >= 1.0 || rng.gen_bool(echo.clamp(0.0, 1.0));
        let use_idx = if kept { idx } else { rng.gen_range(0..SIG_VOCAB) };
        for _ in 0..count {
            out.push_str(&format!(" sig{use_idx:02}"));
        }
    }
    out
}

type EventBody = (Value, Option<Map<String, Value>>);
type EventMap = BTreeMap<(usize, usize, Channel), EventBody>;

fn benign_text_body(src: usize, tgt: usize, channel: Channel, rng: &mut ChaCha8Rng) -> EventBody {
    let s = format!("{} {}", template(src, channel), noise_token(src, rng));
    let t = format!("{} {}", template(tgt, channel), noise_token(tgt, rng));
    let mut meta = Map::new();
    meta.insert("op".into(), json!(channel.name()));
    (json!({ "src": s, "tgt": t }), Some(meta))
}

fn benign_exec_body() -> EventBody {
    let mut meta = Map::new();
    meta.insert("latency".into(), json!(1.0));
    meta.insert("tokens".into(), json!(150.0));
    meta.insert("status".into(), json!("ok"));
    meta.insert("tgt_latency".into(), json!(1.0));
    meta.insert("tgt_tokens".into(), json!(150.0));
    meta.insert("tgt_status".into(), json!("ok"));
    (json!(""), Some(meta))
}

fn attack_text_body(
    src: usize,
    tgt: usize,
    channel: Channel,
    latent: &Latent,
    echo: f64,
    rng: &mut ChaCha8Rng,
) -> EventBody {
    let s = format!(
        "{} {}{}",
        template(src, channel),
        noise_token(src, rng),
        sig_text(latent, 1.0, rng)
    );
    let t = format!(
        "{} {}{}",
        template(tgt, channel),
        noise_token(tgt, rng),
        sig_text(latent, echo, rng)
    );
    let mut meta = Map::new();
    meta.insert("op".into(), json!(channel.name()));
    (json!({ "src": s, "tgt": t }), Some(meta))
}

fn attack_exec_body(latent: &Latent, strength: f64, rng: &mut ChaCha8Rng) -> EventBody {
    // Shared latents modulate both sides; below full strength the target
    // side mixes in an independent draw.
    let mix = |q: f64, rng: &mut ChaCha8Rng| -> f64 {
        if strength >= 1.0 || rng.gen_bool(strength.clamp(0.0, 1.0)) {
            q
        } else {
            rng.gen_range(0..5) as f64 / 4.0
        }
    };
    let ql = latent.q_latency;
    let qt = latent.q_tokens;
    let tl = mix(ql, rng);
    let tt = mix(qt, rng);
    let mut meta = Map::new();
    meta.insert("latency".into(), json!(1.0 + 1.5 * ql));
    meta.insert("tokens".into(), json!(100.0 + 200.0 * qt));
    meta.insert("status".into(), json!("ok"));
    meta.insert("tgt_latency".into(), json!(0.95 + 1.4 * tl));
    meta.insert("tgt_tokens".into(), json!(110.0 + 180.0 * tt));
    meta.insert("tgt_status".into(), json!("ok"));
    (json!(""), Some(meta))
}

/// Agents with the largest out-degree.
fn max_fanout_agents(topo: &SystemTopology) -> Vec<usize> {
    let best = (0..topo.agent_count())
        .map(|i| topo.out_neighbors(i).len())
        .max()
        .unwrap_or(0);
    (0..topo.agent_count())
        .filter(|&i| topo.out_neighbors(i).len() == best)
        .collect()
}

/// Generate one labeled trace. Deterministic under the config seed.
pub fn generate_trace(cfg: &ScenarioConfig) -> Result<SimulatedTrace, ConfigError> {
    cfg.validate()?;
    let n = cfg.agent_count;
    let edges = build_topology_edges(&cfg.topology, n)?;
    let topo = SystemTopology::new(n, edges.clone())
        .map_err(|e| ConfigError::Invalid(format!("scenario topology: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let strength = cfg.regime.base_strength() * cfg.strength.unwrap_or(1.0);

    // Roles are drawn once, before any per-turn randomness.
    let origin_pool = max_fanout_agents(&topo);
    let origin = origin_pool[rng.gen_range(0..origin_pool.len())];
    let mut neighbors: Vec<usize> = topo.out_neighbors(origin).to_vec();
    neighbors.sort_by_key(|&j| (std::cmp::Reverse(topo.out_neighbors(j).len()), j));
    let bridge = neighbors.first().copied();
    let second = neighbors.get(1).copied();

    let truth = match cfg.attack {
        AttackKind::None => GroundTruth::benign(),
        kind => build_truth(kind, cfg, &topo, origin, &neighbors),
    };

    let roster: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
    let header = json!({
        "roster": roster,
        "edges": edges.iter().map(|&(i, j)| json!([i, j])).collect::<Vec<_>>(),
    });
    let mut lines = vec![serde_json::to_string(&header).expect("header json")];

    let mut prev_latent: Option<Latent> = None;
    for turn in 0..cfg.turns {
        let mut events: EventMap = BTreeMap::new();
        // Benign background on every structural edge.
        for &(i, j) in &edges {
            for c in CHANNELS {
                let p = match c {
                    Channel::Comm => 0.98,
                    Channel::Mem => 0.95,
                    Channel::Tool => 0.95,
                    Channel::Exec => 0.95,
                };
                if rng.gen_bool(p) {
                    let body = if c == Channel::Exec {
                        benign_exec_body()
                    } else {
                        benign_text_body(i, j, c, &mut rng)
                    };
                    events.insert((i, j, c), body);
                }
            }
        }

        if cfg.attack != AttackKind::None && turn >= cfg.injection_turn {
            let dt = turn - cfg.injection_turn;
            let ramp = match cfg.profile {
                StrengthProfile::Gradual => 0.4 + 0.6 * ((dt + 1) as f64 / 6.0).min(1.0),
                StrengthProfile::Abrupt => 1.0,
            };
            let s = (strength * ramp).min(1.2);
            let latent = draw_latent(&mut rng);
            overlay_attack(
                cfg.attack,
                &topo,
                origin,
                bridge,
                second,
                &neighbors,
                dt,
                s,
                &latent,
                prev_latent.as_ref(),
                &mut events,
                &mut rng,
            );
            prev_latent = Some(latent);
        }

        for ((i, j, c), (payload, meta)) in events {
            let mut record = Map::new();
            record.insert("turn".into(), json!(turn));
            record.insert("src".into(), json!(roster[i]));
            record.insert("tgt".into(), json!(roster[j]));
            record.insert("channel".into(), json!(c.name()));
            record.insert("payload".into(), payload);
            if let Some(m) = meta {
                record.insert("meta".into(), Value::Object(m));
            }
            lines.push(serde_json::to_string(&Value::Object(record)).expect("event json"));
        }
    }

    Ok(SimulatedTrace { lines, truth })
}

#[allow(clippy::too_many_arguments)]
fn overlay_attack(
    kind: AttackKind,
    topo: &SystemTopology,
    origin: usize,
    bridge: Option<usize>,
    second: Option<usize>,
    neighbors: &[usize],
    dt: u64,
    s: f64,
    latent: &Latent,
    prev: Option<&Latent>,
    events: &mut EventMap,
    rng: &mut ChaCha8Rng,
) {
    match kind {
        AttackKind::None => {}
        AttackKind::Intent => {
            // Wave 1: origin seeds every downstream neighbor over comm.
            for &j in neighbors {
                events.insert(
                    (origin, j, Channel::Comm),
                    attack_text_body(origin, j, Channel::Comm, latent, s, rng),
                );
            }
            if let Some(prev) = prev {
                // Echoes back toward the origin couple a second mode.
                if dt >= 1 {
                    for &j in neighbors {
                        if topo.is_feasible(j, origin) {
                            events.insert(
                                (j, origin, Channel::Comm),
                                attack_text_body(j, origin, Channel::Comm, prev, 0.85 * s, rng),
                            );
                        }
                    }
                }
                // Wave 2: neighbors relay onward.
                if dt >= 2 {
                    for &j in neighbors {
                        for &k in topo.out_neighbors(j) {
                            if k != origin {
                                events.insert(
                                    (j, k, Channel::Comm),
                                    attack_text_body(j, k, Channel::Comm, prev, 0.8 * s, rng),
                                );
                            }
                        }
                    }
                }
            }
            // Later leak into shared memory.
            if dt >= 3 {
                for &j in neighbors {
                    events.insert(
                        (origin, j, Channel::Mem),
                        attack_text_body(origin, j, Channel::Mem, latent, 0.75 * s, rng),
                    );
                }
            }
        }
        AttackKind::Execution => {
            let b = match bridge {
                Some(b) => b,
                None => return,
            };
            events.insert(
                (origin, b, Channel::Tool),
                attack_text_body(origin, b, Channel::Tool, latent, 0.95 * s, rng),
            );
            if let Some(x) = second {
                events.insert(
                    (origin, x, Channel::Tool),
                    attack_text_body(origin, x, Channel::Tool, latent, 0.9 * s, rng),
                );
            }
            if let Some(prev) = prev {
                if dt >= 1 && topo.is_feasible(b, origin) {
                    events.insert(
                        (b, origin, Channel::Tool),
                        attack_text_body(b, origin, Channel::Tool, prev, 0.85 * s, rng),
                    );
                }
                // Abrupt strengthening at the relay turn: the bridge
                // fans out over tool and exec.
                if dt >= 2 {
                    for &k in topo.out_neighbors(b) {
                        if k != origin {
                            events.insert(
                                (b, k, Channel::Tool),
                                attack_text_body(b, k, Channel::Tool, prev, 0.85 * s, rng),
                            );
                            events.insert((b, k, Channel::Exec), attack_exec_body(prev, s, rng));
                        }
                    }
                }
            }
        }
        AttackKind::Coordination => {
            // Every feasible edge couples across all four channels at
            // once; origin rows carry a heavier token load.
            let edges: Vec<(usize, usize)> = topo.edges().collect();
            for (i, j) in edges {
                let boost = if i == origin { 1.2 } else { 1.0 };
                events.insert(
                    (i, j, Channel::Comm),
                    attack_text_body(i, j, Channel::Comm, latent, (s * boost).min(1.3), rng),
                );
                events.insert(
                    (i, j, Channel::Mem),
                    attack_text_body(i, j, Channel::Mem, latent, 0.85 * s * boost, rng),
                );
                events.insert(
                    (i, j, Channel::Tool),
                    attack_text_body(i, j, Channel::Tool, latent, 0.85 * s * boost, rng),
                );
                events.insert((i, j, Channel::Exec), attack_exec_body(latent, s, rng));
            }
        }
    }
}

fn build_truth(
    kind: AttackKind,
    cfg: &ScenarioConfig,
    topo: &SystemTopology,
    origin: usize,
    neighbors: &[usize],
) -> GroundTruth {
    let onward = |j: usize| -> Option<usize> {
        topo.out_neighbors(j).iter().copied().find(|&k| k != origin)
    };
    let relays: Vec<usize> = neighbors
        .iter()
        .copied()
        .filter(|&j| onward(j).is_some())
        .collect();
    let mut spines: Vec<Vec<usize>> = Vec::new();
    let mut spine_channels: Vec<Channel> = Vec::new();
    let spine_channel = match kind {
        AttackKind::Execution => Channel::Tool,
        _ => Channel::Comm,
    };
    let spine_heads: Vec<usize> = match kind {
        AttackKind::Execution => neighbors.iter().copied().take(2).collect(),
        _ => neighbors.iter().copied().take(3).collect(),
    };
    for j in spine_heads {
        let mut path = vec![origin, j];
        if let Some(k) = onward(j) {
            path.push(k);
        }
        if spines.len() < 3 {
            spines.push(path);
            spine_channels.push(spine_channel);
        }
    }
    let bridge_set: Vec<usize> = match kind {
        AttackKind::Execution => neighbors.iter().copied().take(1).collect(),
        _ => {
            if relays.is_empty() {
                neighbors.to_vec()
            } else {
                relays.clone()
            }
        }
    };
    let mut amplifier = vec![origin];
    if kind == AttackKind::Execution {
        amplifier.extend(neighbors.iter().copied().take(1));
    }
    GroundTruth {
        scenario: kind.label().into(),
        is_attack: true,
        cascade_kind: Some(match kind {
            AttackKind::Coordination => CascadeKind::Instant,
            _ => CascadeKind::MultiTurn,
        }),
        onset_turn: Some(cfg.injection_turn),
        origin: vec![origin],
        bridge: bridge_set,
        amplifier,
        spines,
        spine_channels,
    }
}

/// Expand a scenario file entry into its seed batch.
pub fn expand_scenarios(cfg: &ScenarioConfig) -> Vec<ScenarioConfig> {
    match cfg.count {
        None | Some(0) | Some(1) => vec![ScenarioConfig {
            count: None,
            ..cfg.clone()
        }],
        Some(c) => (0..c)
            .map(|i| ScenarioConfig {
                name: Some(format!(
                    "{}-{:04}",
                    cfg.name.clone().unwrap_or_else(|| cfg.attack.label().into()),
                    cfg.seed + i
                )),
                seed: cfg.seed + i,
                count: None,
                ..cfg.clone()
            })
            .collect(),
    }
}

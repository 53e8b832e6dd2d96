//! Trace wire format and per-turn event normalization.
//!
//! A trace is UTF-8 line-delimited JSON. The first line is a header
//! declaring the agent roster and the structural edge list:
//!
//! ```text
//! {"roster": ["planner", "coder"], "edges": [[0, 1], [1, 0]]}
//! {"turn": 0, "src": "planner", "tgt": "coder", "channel": "comm", "payload": "..."}
//! ```
//!
//! `tgt` may be `"*"` for broadcasts; `payload` is either a flat string
//! (shared by both sides) or `{"src": ..., "tgt": ...}` when the source
//! message and the observed target behavior differ.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::Value;

use crate::encoder::{Encoder, FeatureVector};
use crate::error::ParseError;
use crate::topology::{Channel, SystemTopology};

/// Target of an event before broadcast expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventTarget {
    Agent(usize),
    Broadcast,
}

/// Payload content; the two views coincide for flat string payloads.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Text(String),
    Views { src: String, tgt: String },
}

impl Payload {
    pub fn source_view(&self) -> &str {
        match self {
            Payload::Text(s) => s,
            Payload::Views { src, .. } => src,
        }
    }

    pub fn target_view(&self) -> &str {
        match self {
            Payload::Text(s) => s,
            Payload::Views { tgt, .. } => tgt,
        }
    }
}

/// One directed interaction after parsing (broadcasts not yet expanded).
#[derive(Debug, Clone)]
pub struct ChannelEvent {
    pub turn: u64,
    pub src: usize,
    pub tgt: EventTarget,
    pub channel: Channel,
    pub payload: Payload,
    pub meta: BTreeMap<String, Value>,
}

impl ChannelEvent {
    pub fn meta_number(&self, key: &str) -> Option<f64> {
        self.meta.get(key).and_then(Value::as_f64)
    }

    pub fn meta_string(&self, key: &str) -> Option<String> {
        self.meta.get(key).and_then(Value::as_str).map(str::to_owned)
    }

    /// `Some(true)` for "ok", `Some(false)` for anything else present.
    pub fn meta_status(&self, key: &str) -> Option<bool> {
        self.meta.get(key).and_then(Value::as_str).map(|s| s == "ok")
    }
}

/// Trace header: roster (names resolve to dense ids by position) and the
/// structural edge list.
#[derive(Debug, Clone)]
pub struct TraceHeader {
    pub roster: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

impl TraceHeader {
    pub fn agent_id(&self, name: &str) -> Option<usize> {
        self.roster.iter().position(|r| r == name)
    }
}

#[derive(Deserialize)]
struct RawHeader {
    roster: Option<Vec<String>>,
    edges: Option<Vec<(usize, usize)>>,
}

pub fn parse_header_line(line: &str) -> Result<TraceHeader, ParseError> {
    let raw: RawHeader = serde_json::from_str(line)?;
    let roster = raw.roster.ok_or(ParseError::MissingField("roster"))?;
    let edges = raw.edges.ok_or(ParseError::MissingField("edges"))?;
    if roster.is_empty() {
        return Err(ParseError::BadField {
            field: "roster",
            reason: "must not be empty".into(),
        });
    }
    Ok(TraceHeader { roster, edges })
}

#[derive(Deserialize)]
struct RawEvent {
    turn: Option<Value>,
    src: Option<String>,
    tgt: Option<String>,
    channel: Option<String>,
    payload: Option<Value>,
    #[serde(default)]
    meta: Option<serde_json::Map<String, Value>>,
}

/// Parse one wire-format record into a [`ChannelEvent`]. Broadcast records
/// (`tgt = "*"`) are returned with a broadcast marker for later expansion.
pub fn parse_event_line(line: &str, header: &TraceHeader) -> Result<ChannelEvent, ParseError> {
    let raw: RawEvent = serde_json::from_str(line)?;
    let turn_val = raw.turn.ok_or(ParseError::MissingField("turn"))?;
    let turn = match turn_val.as_i64() {
        Some(t) if t >= 0 => t as u64,
        Some(t) => {
            return Err(ParseError::BadField {
                field: "turn",
                reason: format!("must be non-negative, got {t}"),
            })
        }
        None => {
            return Err(ParseError::BadField {
                field: "turn",
                reason: "must be an integer".into(),
            })
        }
    };
    let src_name = raw.src.ok_or(ParseError::MissingField("src"))?;
    let src = header
        .agent_id(&src_name)
        .ok_or_else(|| ParseError::UnknownAgent(src_name.clone()))?;
    let tgt_name = raw.tgt.ok_or(ParseError::MissingField("tgt"))?;
    let tgt = if tgt_name == "*" {
        EventTarget::Broadcast
    } else {
        EventTarget::Agent(
            header
                .agent_id(&tgt_name)
                .ok_or_else(|| ParseError::UnknownAgent(tgt_name.clone()))?,
        )
    };
    let channel_name = raw.channel.ok_or(ParseError::MissingField("channel"))?;
    let channel =
        Channel::parse(&channel_name).ok_or_else(|| ParseError::UnknownChannel(channel_name))?;
    if let EventTarget::Agent(a) = tgt {
        if a == src {
            return Err(ParseError::BadField {
                field: "tgt",
                reason: "src and tgt must differ".into(),
            });
        }
    }
    let payload = match raw.payload.ok_or(ParseError::MissingField("payload"))? {
        Value::String(s) => Payload::Text(s),
        Value::Object(map) => {
            let side = |key: &'static str| -> Result<String, ParseError> {
                match map.get(key) {
                    Some(Value::String(s)) => Ok(s.clone()),
                    Some(_) => Err(ParseError::BadField {
                        field: "payload",
                        reason: format!("`{key}` view must be a string"),
                    }),
                    None => Err(ParseError::BadField {
                        field: "payload",
                        reason: format!("object payload requires `{key}`"),
                    }),
                }
            };
            Payload::Views {
                src: side("src")?,
                tgt: side("tgt")?,
            }
        }
        _ => {
            return Err(ParseError::BadField {
                field: "payload",
                reason: "must be a string or an object".into(),
            })
        }
    };
    let meta = raw
        .meta
        .map(|m| m.into_iter().collect())
        .unwrap_or_default();
    Ok(ChannelEvent {
        turn,
        src,
        tgt,
        channel,
        payload,
        meta,
    })
}

/// Bucketed signals for one `(src, tgt, channel)` triplet in a turn.
#[derive(Debug, Clone)]
pub struct BucketSignal {
    pub u: FeatureVector,
    pub v: FeatureVector,
    pub count: usize,
}

/// All per-turn signals after normalization: broadcasts expanded,
/// infeasible events dropped, same-triplet events averaged.
#[derive(Debug, Clone)]
pub struct TurnBatch {
    pub turn: u64,
    pub buckets: BTreeMap<(usize, usize, Channel), BucketSignal>,
    /// Mean target-side vector over all events affecting an agent on a
    /// channel this turn.
    pub agent_targets: BTreeMap<(usize, Channel), FeatureVector>,
}

impl TurnBatch {
    pub fn empty(turn: u64) -> Self {
        TurnBatch {
            turn,
            buckets: BTreeMap::new(),
            agent_targets: BTreeMap::new(),
        }
    }
}

/// Normalize one turn of events against the topology.
///
/// Broadcasts expand to one directed event per structurally feasible
/// observer; events whose edge is not in the possibility graph are
/// dropped; multiple events on the same triplet average component-wise.
pub fn normalize_turn(
    turn: u64,
    events: &[ChannelEvent],
    topo: &SystemTopology,
    encoder: &Encoder,
) -> TurnBatch {
    let mut sums: BTreeMap<(usize, usize, Channel), BucketSignal> = BTreeMap::new();
    let mut tgt_sums: BTreeMap<(usize, Channel), (FeatureVector, usize)> = BTreeMap::new();

    let mut directed: Vec<ChannelEvent> = Vec::new();
    for ev in events {
        debug_assert_eq!(ev.turn, turn, "normalize_turn fed mixed turns");
        match ev.tgt {
            EventTarget::Agent(tgt) => {
                if topo.is_feasible(ev.src, tgt) {
                    directed.push(ev.clone());
                }
            }
            EventTarget::Broadcast => {
                for &obs in topo.out_neighbors(ev.src) {
                    let mut copy = ev.clone();
                    copy.tgt = EventTarget::Agent(obs);
                    directed.push(copy);
                }
            }
        }
    }

    for ev in &directed {
        let tgt = match ev.tgt {
            EventTarget::Agent(a) => a,
            EventTarget::Broadcast => unreachable!(),
        };
        let (u, v) = encoder.encode(ev);
        let key = (ev.src, tgt, ev.channel);
        match sums.get_mut(&key) {
            Some(b) => {
                b.u.scale_add(&u, 1.0);
                b.v.scale_add(&v, 1.0);
                b.count += 1;
            }
            None => {
                sums.insert(
                    key,
                    BucketSignal {
                        u: u.clone(),
                        v: v.clone(),
                        count: 1,
                    },
                );
            }
        }
        match tgt_sums.get_mut(&(tgt, ev.channel)) {
            Some((acc, n)) => {
                acc.scale_add(&v, 1.0);
                *n += 1;
            }
            None => {
                tgt_sums.insert((tgt, ev.channel), (v, 1));
            }
        }
    }

    let mut buckets = BTreeMap::new();
    for (key, mut b) in sums {
        let inv = 1.0 / b.count as f64;
        b.u.scale(inv);
        b.v.scale(inv);
        buckets.insert(key, b);
    }
    let mut agent_targets = BTreeMap::new();
    for (key, (mut acc, n)) in tgt_sums {
        acc.scale(1.0 / n as f64);
        agent_targets.insert(key, acc);
    }
    TurnBatch {
        turn,
        buckets,
        agent_targets,
    }
}

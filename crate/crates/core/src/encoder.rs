//! Deterministic payload encoding into fixed-dimension feature vectors.
//!
//! Text channels use a signed hashed bag-of-tokens projection; the exec
//! channel places runtime metadata into fixed slots. No learned model is
//! involved, and the whole thing is a pure function of (event, dim, seed),
//! so a real embedding backend can be swapped in behind [`Encoder`] later.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::topology::Channel;
use crate::trace::{ChannelEvent, EventTarget};

/// Number of trailing metadata dimensions in every text-channel vector.
pub const META_DIMS: usize = 4;

/// Fixed-dimension feature vector. All components finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scale_add(&mut self, other: &FeatureVector, k: f64) {
        for (a, &b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += k * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.0 {
            *a *= k;
        }
    }
}

/// Slot indices (within the content region) for exec runtime features.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct ExecSlots {
    pub latency: usize,
    pub tokens: usize,
    pub status: usize,
    pub error: usize,
}

impl Default for ExecSlots {
    fn default() -> Self {
        ExecSlots {
            latency: 0,
            tokens: 1,
            status: 2,
            error: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub seed: u64,
    pub exec_slots: ExecSlots,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 32,
            seed: 0,
            exec_slots: ExecSlots::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dim < 8 || self.dim > 32 {
            return Err(ConfigError::Invalid(format!(
                "encoder.dim must be in [8, 32], got {}",
                self.dim
            )));
        }
        let content = self.dim - META_DIMS;
        let slots = [
            self.exec_slots.latency,
            self.exec_slots.tokens,
            self.exec_slots.status,
            self.exec_slots.error,
        ];
        for s in slots {
            if s >= content {
                return Err(ConfigError::Invalid(format!(
                    "exec slot index {s} outside content region [0, {content})"
                )));
            }
        }
        Ok(())
    }
}

/// Stateless event encoder.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Self {
        Encoder { cfg }
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    /// Encode a directed, feasible event into source-side and target-side
    /// vectors. The source side combines the source view of the payload
    /// with sender metadata; the target side the target view with receiver
    /// metadata.
    pub fn encode(&self, event: &ChannelEvent) -> (FeatureVector, FeatureVector) {
        let tgt = match event.tgt {
            EventTarget::Agent(a) => a,
            EventTarget::Broadcast => {
                // Broadcasts are expanded before encoding.
                unreachable!("encode called on unexpanded broadcast")
            }
        };
        let u = self.encode_side(event, event.src, true);
        let v = self.encode_side(event, tgt, false);
        (u, v)
    }

    fn encode_side(&self, event: &ChannelEvent, agent: usize, source_side: bool) -> FeatureVector {
        let d = self.cfg.dim;
        let content = d - META_DIMS;
        let mut vec = FeatureVector::zeros(d);
        if event.channel == Channel::Exec {
            // Runtime features in fixed slots; remaining dimensions zero.
            let slots = &self.cfg.exec_slots;
            let (lat, tok, status) = if source_side {
                (
                    event.meta_number("latency"),
                    event.meta_number("tokens"),
                    event.meta_status("status"),
                )
            } else {
                (
                    event
                        .meta_number("tgt_latency")
                        .or(event.meta_number("latency")),
                    event
                        .meta_number("tgt_tokens")
                        .or(event.meta_number("tokens")),
                    event.meta_status("tgt_status").or(event.meta_status("status")),
                )
            };
            vec.0[slots.latency] = lat.unwrap_or(0.0);
            vec.0[slots.tokens] = tok.unwrap_or(0.0);
            match status {
                Some(true) => vec.0[slots.status] = 1.0,
                Some(false) => vec.0[slots.error] = 1.0,
                None => {}
            }
            return vec;
        }
        let text = if source_side {
            event.payload.source_view()
        } else {
            event.payload.target_view()
        };
        for token in tokenize(text) {
            let h = fnv1a(token.as_bytes(), self.cfg.seed);
            let idx = (h % content as u64) as usize;
            let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
            vec.0[idx] += sign;
        }
        // Metadata slots occupy the trailing dimensions and are never
        // touched by token hashing.
        let op = event.meta_string("op").unwrap_or_default();
        let oph = fnv1a(op.as_bytes(), self.cfg.seed ^ 0x9e37_79b9);
        vec.0[content] = event.turn as f64 * 0.01;
        vec.0[content + 1] = ((oph & 0xff) as f64) / 255.0;
        vec.0[content + 2] = (((oph >> 8) & 0xff) as f64) / 255.0;
        vec.0[content + 3] = (agent as f64 + 1.0) * 0.1;
        vec
    }
}

/// Lowercase tokens split on non-alphanumeric boundaries.
fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Seeded FNV-1a. Stable across platforms and releases, unlike the std
/// hasher.
fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x1000_0000_01b3);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{ChannelEvent, EventTarget, Payload};
    use std::collections::BTreeMap;

    fn text_event(channel: Channel, payload: Payload) -> ChannelEvent {
        ChannelEvent {
            turn: 5,
            src: 0,
            tgt: EventTarget::Agent(1),
            channel,
            payload,
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn empty_payload_leaves_only_metadata() {
        let enc = Encoder::new(EncoderConfig::default());
        let ev = text_event(Channel::Comm, Payload::Text(String::new()));
        let (u, _v) = enc.encode(&ev);
        let content = enc.dim() - META_DIMS;
        assert!(u.0[..content].iter().all(|&x| x == 0.0));
        assert!(u.0[content..].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = Encoder::new(EncoderConfig::default());
        let ev = text_event(Channel::Comm, Payload::Text("hello agent world".into()));
        let (u1, v1) = enc.encode(&ev);
        let (u2, v2) = enc.encode(&ev);
        assert_eq!(u1, u2);
        assert_eq!(v1, v2);
    }

    #[test]
    fn exec_slots_hold_runtime_features() {
        let enc = Encoder::new(EncoderConfig::default());
        let mut meta = BTreeMap::new();
        meta.insert("latency".to_string(), serde_json::json!(1.5));
        meta.insert("tokens".to_string(), serde_json::json!(200));
        meta.insert("status".to_string(), serde_json::json!("ok"));
        let ev = ChannelEvent {
            turn: 3,
            src: 0,
            tgt: EventTarget::Agent(1),
            channel: Channel::Exec,
            payload: Payload::Text(String::new()),
            meta,
        };
        let (u, _) = enc.encode(&ev);
        assert_eq!(&u.0[0..4], &[1.5, 200.0, 1.0, 0.0]);
        assert!(u.0[4..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn token_change_never_touches_metadata_slots() {
        let enc = Encoder::new(EncoderConfig::default());
        let a = text_event(Channel::Comm, Payload::Text("alpha beta".into()));
        let b = text_event(Channel::Comm, Payload::Text("alpha gamma".into()));
        let (ua, _) = enc.encode(&a);
        let (ub, _) = enc.encode(&b);
        let content = enc.dim() - META_DIMS;
        assert_eq!(&ua.0[content..], &ub.0[content..]);
        assert_ne!(&ua.0[..content], &ub.0[..content]);
    }

    #[test]
    fn source_and_target_views_differ_for_split_payloads() {
        let enc = Encoder::new(EncoderConfig::default());
        let ev = text_event(
            Channel::Comm,
            Payload::Views {
                src: "request data".into(),
                tgt: "acknowledged request".into(),
            },
        );
        let (u, v) = enc.encode(&ev);
        let content = enc.dim() - META_DIMS;
        assert_ne!(&u.0[..content], &v.0[..content]);
    }
}

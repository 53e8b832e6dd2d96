//! Post-confirmation attribution from the cached influence interval:
//! origin / amplifier / bridge roles, top-K propagation spines, and the
//! dominant channel of each spine.

use serde::{Deserialize, Serialize};

use crate::detector::{CachedTurn, InfluenceCache};
use crate::error::AttributionError;
use crate::mat::Matrix;
use crate::topology::{Channel, SystemTopology, CHANNELS, NUM_CHANNELS};

/// One propagation spine: a simple directed path ranked by its weakest
/// edge under the interval-max influence matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spine {
    pub path: Vec<usize>,
    pub bottleneck: f64,
    pub dominant_channel: Channel,
}

/// Full score-ordered agent lists per role (rank 1 first).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleRankings {
    pub origin: Vec<usize>,
    pub amplifier: Vec<usize>,
    pub bridge: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionReport {
    pub origin: usize,
    pub amplifier: usize,
    pub bridge: usize,
    pub role_rankings: RoleRankings,
    pub spines: Vec<Spine>,
    pub interval: (u64, u64),
}

/// Rank agents by descending score, ties broken by lower agent id.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids
}

/// Attribute a confirmed cascade from the cached interval `[t_w, t0]`.
pub fn attribute(
    cache: &InfluenceCache,
    t_w: u64,
    t0: u64,
    topo: &SystemTopology,
    k: usize,
    eps: f64,
) -> Result<AttributionReport, AttributionError> {
    let interval = cache.interval(t_w, t0)?;
    Ok(attribute_interval(&interval, t_w, t0, topo, k, eps))
}

pub fn attribute_interval(
    interval: &[&CachedTurn],
    t_w: u64,
    t0: u64,
    topo: &SystemTopology,
    k: usize,
    eps: f64,
) -> AttributionReport {
    let n = topo.agent_count();

    // Origin: strongest outgoing influence at cascade onset.
    let origin_scores = interval[0].unified.row_sums();

    // Amplifier: emission relative to reception, summed over the interval.
    let mut amplifier_scores = vec![0.0; n];
    // Bridge: receive-and-redistribute product on the unnormalized views.
    let mut bridge_scores = vec![0.0; n];
    for ct in interval {
        let rows_u = ct.unified.row_sums();
        let cols_u = ct.unified.col_sums();
        let rows_r = ct.raw.row_sums();
        let cols_r = ct.raw.col_sums();
        for i in 0..n {
            amplifier_scores[i] += rows_u[i] / (cols_u[i] + eps);
            bridge_scores[i] += rows_r[i] * cols_r[i];
        }
    }

    // Interval-max influence: unified for spine ranking, raw per-channel
    // slices for the dominant-channel decision (channel-wise degree
    // normalization is scale-free, so it cannot compare channels).
    let mut a_max = interval[0].unified.clone();
    let mut a_max_c: [Matrix; NUM_CHANNELS] = interval[0].raw_channels.clone();
    for ct in &interval[1..] {
        a_max = a_max.entrywise_max(&ct.unified);
        for (acc, m) in a_max_c.iter_mut().zip(ct.raw_channels.iter()) {
            *acc = acc.entrywise_max(m);
        }
    }

    let spines = top_k_spines(&a_max, &a_max_c, topo, k);

    let origin_rank = ranked(&origin_scores);
    let amplifier_rank = ranked(&amplifier_scores);
    let bridge_rank = ranked(&bridge_scores);
    AttributionReport {
        origin: origin_rank[0],
        amplifier: amplifier_rank[0],
        bridge: bridge_rank[0],
        role_rankings: RoleRankings {
            origin: origin_rank,
            amplifier: amplifier_rank,
            bridge: bridge_rank,
        },
        spines,
        interval: (t_w, t0),
    }
}

/// Top-K spines by weakest-link strength under `a_max`, restricted to
/// simple directed paths over the structural graph with length at most
/// its diameter. Selected paths are pairwise edge-set incomparable
/// (neither a sub-path nor a super-path of an earlier pick); equal
/// bottlenecks break toward the lexicographically smaller path.
fn top_k_spines(
    a_max: &Matrix,
    a_max_c: &[Matrix; NUM_CHANNELS],
    topo: &SystemTopology,
    k: usize,
) -> Vec<Spine> {
    let cap = topo.diameter();
    if cap == 0 || k == 0 {
        return Vec::new();
    }
    let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    for start in 0..topo.agent_count() {
        stack.push(start);
        dfs_paths(
            topo,
            a_max,
            start,
            1u64 << start,
            0,
            cap,
            f64::INFINITY,
            &mut stack,
            &mut candidates,
        );
        stack.pop();
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.cmp(&b.1))
    });

    let mut picked: Vec<Spine> = Vec::new();
    let mut picked_edges: Vec<std::collections::BTreeSet<(usize, usize)>> = Vec::new();
    for (bottleneck, path) in candidates {
        if picked.len() == k {
            break;
        }
        let edges: std::collections::BTreeSet<(usize, usize)> =
            path.windows(2).map(|w| (w[0], w[1])).collect();
        let comparable = picked_edges
            .iter()
            .any(|p| p.is_subset(&edges) || edges.is_subset(p));
        if comparable {
            continue;
        }
        let dominant_channel = dominant_channel(&edges, a_max_c);
        picked.push(Spine {
            path,
            bottleneck,
            dominant_channel,
        });
        picked_edges.push(edges);
    }
    picked
}

#[allow(clippy::too_many_arguments)]
fn dfs_paths(
    topo: &SystemTopology,
    weights: &Matrix,
    node: usize,
    visited: u64,
    hops: usize,
    cap: usize,
    bottleneck: f64,
    stack: &mut Vec<usize>,
    out: &mut Vec<(f64, Vec<usize>)>,
) {
    if hops >= 1 {
        out.push((bottleneck, stack.clone()));
    }
    if hops == cap {
        return;
    }
    for &next in topo.out_neighbors(node) {
        if visited & (1 << next) != 0 {
            continue;
        }
        let w = weights.get(node, next);
        // Zero-weight edges cannot improve any spine.
        if w <= 0.0 {
            continue;
        }
        stack.push(next);
        dfs_paths(
            topo,
            weights,
            next,
            visited | (1 << next),
            hops + 1,
            cap,
            bottleneck.min(w),
            stack,
            out,
        );
        stack.pop();
    }
}

fn dominant_channel(
    edges: &std::collections::BTreeSet<(usize, usize)>,
    a_max_c: &[Matrix; NUM_CHANNELS],
) -> Channel {
    let mut best = Channel::Comm;
    let mut best_sum = f64::NEG_INFINITY;
    for c in CHANNELS {
        let sum: f64 = edges
            .iter()
            .map(|&(i, j)| a_max_c[c.index()].get(i, j))
            .sum();
        if sum > best_sum {
            best_sum = sum;
            best = c;
        }
    }
    best
}

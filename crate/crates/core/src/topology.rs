//! System topology: agents, channels, and the structural possibility graph.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::TopologyError;

/// The four interaction channels, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Comm,
    Mem,
    Tool,
    Exec,
}

pub const CHANNELS: [Channel; 4] = [Channel::Comm, Channel::Mem, Channel::Tool, Channel::Exec];

/// Number of channels.
pub const NUM_CHANNELS: usize = 4;

impl Channel {
    pub fn index(self) -> usize {
        match self {
            Channel::Comm => 0,
            Channel::Mem => 1,
            Channel::Tool => 2,
            Channel::Exec => 3,
        }
    }

    pub fn from_index(i: usize) -> Channel {
        CHANNELS[i]
    }

    pub fn parse(s: &str) -> Option<Channel> {
        match s {
            "comm" => Some(Channel::Comm),
            "mem" => Some(Channel::Mem),
            "tool" => Some(Channel::Tool),
            "exec" => Some(Channel::Exec),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Comm => "comm",
            Channel::Mem => "mem",
            Channel::Tool => "tool",
            Channel::Exec => "exec",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Directed structural graph over the agent set.
///
/// Immutable after construction; the diameter is computed once. An edge
/// `(i, j)` means agent `i` can influence agent `j` through at least one
/// channel.
#[derive(Debug, Clone)]
pub struct SystemTopology {
    agent_count: usize,
    edges: BTreeSet<(usize, usize)>,
    out_neighbors: Vec<Vec<usize>>,
    diameter: usize,
}

impl SystemTopology {
    pub fn new(
        agent_count: usize,
        edge_list: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TopologyError> {
        if agent_count == 0 {
            return Err(TopologyError::NoAgents);
        }
        let mut edges = BTreeSet::new();
        for (i, j) in edge_list {
            if i >= agent_count || j >= agent_count {
                return Err(TopologyError::EndpointOutOfRange {
                    edge: (i, j),
                    agent_count,
                });
            }
            if i == j {
                return Err(TopologyError::SelfLoop(i));
            }
            edges.insert((i, j));
        }
        let mut out_neighbors = vec![Vec::new(); agent_count];
        for &(i, j) in &edges {
            out_neighbors[i].push(j);
        }
        let diameter = directed_diameter(agent_count, &out_neighbors);
        Ok(SystemTopology {
            agent_count,
            edges,
            out_neighbors,
            diameter,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.agent_count
    }

    /// Longest finite shortest-path length (in edges); 0 when no edges.
    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_feasible(&self, src: usize, tgt: usize) -> bool {
        self.edges.contains(&(src, tgt))
    }

    pub fn out_neighbors(&self, agent: usize) -> &[usize] {
        &self.out_neighbors[agent]
    }
}

fn directed_diameter(n: usize, out_neighbors: &[Vec<usize>]) -> usize {
    let mut diameter = 0;
    let mut dist = vec![usize::MAX; n];
    for start in 0..n {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[start] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in &out_neighbors[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    diameter = diameter.max(dist[v]);
                    queue.push_back(v);
                }
            }
        }
    }
    diameter
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_self_loops_and_bad_endpoints() {
        assert!(matches!(
            SystemTopology::new(3, vec![(0, 0)]),
            Err(TopologyError::SelfLoop(0))
        ));
        assert!(matches!(
            SystemTopology::new(3, vec![(0, 3)]),
            Err(TopologyError::EndpointOutOfRange { .. })
        ));
    }

    #[test]
    fn diameter_of_directed_chain() {
        let topo = SystemTopology::new(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(topo.diameter(), 3);
    }

    #[test]
    fn diameter_ignores_unreachable_pairs() {
        // 0 -> 1, 2 isolated: longest finite distance is 1.
        let topo = SystemTopology::new(3, vec![(0, 1)]).unwrap();
        assert_eq!(topo.diameter(), 1);
    }

    #[test]
    fn diameter_empty_graph_is_zero() {
        let topo = SystemTopology::new(3, Vec::new()).unwrap();
        assert_eq!(topo.diameter(), 0);
    }

    #[test]
    fn channel_round_trip() {
        for c in CHANNELS {
            assert_eq!(Channel::parse(c.name()), Some(c));
        }
        assert_eq!(Channel::parse("email"), None);
    }
}

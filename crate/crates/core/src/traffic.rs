//! Convergecast topologies and seeded packet generation.
//!
//! Traffic follows per-second Poisson counts with packets placed at the
//! second boundary (burst semantics of a one-second observation window);
//! a flag spreads them uniformly instead for sensitivity checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type NodeId = u16;

/// A rooted routing tree; node 0 is the sink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    /// parent[n] is None only for the sink.
    pub parent: Vec<Option<NodeId>>,
    /// Hop distance to the sink.
    pub hops: Vec<u16>,
    pub sink: NodeId,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("node count must be at least 1")]
    Empty,
    #[error("edge list line {0} is malformed (expected `child parent`)")]
    BadLine(usize),
    #[error("node {0} has no path to the sink")]
    Disconnected(NodeId),
    #[error("node {0} appears as a child twice")]
    DuplicateChild(NodeId),
    #[error("parent map contains a cycle at node {0}")]
    Cycle(NodeId),
}

impl Topology {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn max_hops(&self) -> u16 {
        self.hops.iter().copied().max().unwrap_or(0)
    }

    /// Nodes ordered by hop distance (sink first), ties by id. Planning
    /// iterates in this order so links closer to the sink are served
    /// first when capacity clamps.
    pub fn nodes_by_hop(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = (0..self.len() as NodeId).collect();
        ids.sort_by_key(|&n| (self.hops[n as usize], n));
        ids
    }

    fn from_parent_map(parent: Vec<Option<NodeId>>) -> Result<Topology, TopologyError> {
        let n = parent.len();
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        let mut hops = vec![u16::MAX; n];
        hops[0] = 0;
        for start in 0..n {
            // Follow parents to a resolved node, bounding by n to catch cycles.
            let mut chain = Vec::new();
            let mut cur = start;
            let mut steps = 0;
            while hops[cur] == u16::MAX {
                chain.push(cur);
                steps += 1;
                if steps > n {
                    return Err(TopologyError::Cycle(start as NodeId));
                }
                match parent[cur] {
                    Some(p) if (p as usize) < n => cur = p as usize,
                    _ => return Err(TopologyError::Disconnected(start as NodeId)),
                }
            }
            let base = hops[cur];
            for (i, node) in chain.iter().rev().enumerate() {
                hops[*node] = base + i as u16 + 1;
            }
        }
        Ok(Topology {
            parent,
            hops,
            sink: 0,
        })
    }
}

/// Complete binary tree filled in level order; node 0 is the sink.
pub fn build_binary_tree(n: usize) -> Result<Topology, TopologyError> {
    if n == 0 {
        return Err(TopologyError::Empty);
    }
    let parent = (0..n)
        .map(|i| {
            if i == 0 {
                None
            } else {
                Some(((i - 1) / 2) as NodeId)
            }
        })
        .collect();
    Topology::from_parent_map(parent)
}

/// Parse an edge list with one `child parent` pair per line. Blank lines
/// and `#` comments are skipped; node ids must be dense from 0 with 0 as
/// the sink.
pub fn parse_edge_list(text: &str) -> Result<Topology, TopologyError> {
    let mut edges = Vec::new();
    let mut max_node = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let child: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(TopologyError::BadLine(lineno + 1))?;
        let parent: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(TopologyError::BadLine(lineno + 1))?;
        if it.next().is_some() || child == 0 {
            return Err(TopologyError::BadLine(lineno + 1));
        }
        max_node = max_node.max(child).max(parent);
        edges.push((child, parent));
    }
    let mut parent_map: Vec<Option<NodeId>> = vec![None; max_node + 1];
    for (child, parent) in edges {
        if parent_map[child].is_some() {
            return Err(TopologyError::DuplicateChild(child as NodeId));
        }
        parent_map[child] = Some(parent as NodeId);
    }
    for (i, p) in parent_map.iter().enumerate() {
        if i != 0 && p.is_none() {
            return Err(TopologyError::Disconnected(i as NodeId));
        }
    }
    Topology::from_parent_map(parent_map)
}

/// Packet generation pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficPattern {
    /// Poisson(delta) packets per second.
    Rate,
    /// Poisson(1) bursts per second of delta packets each.
    Burst,
}

impl TrafficPattern {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrafficPattern::Rate => "rate",
            TrafficPattern::Burst => "burst",
        }
    }

    pub fn parse(s: &str) -> Option<TrafficPattern> {
        match s.to_ascii_lowercase().as_str() {
            "rate" => Some(TrafficPattern::Rate),
            "burst" => Some(TrafficPattern::Burst),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficConfig {
    pub pattern: TrafficPattern,
    /// Packets per second (rate) or per burst (burst).
    pub delta: u32,
    /// Spread arrivals uniformly inside each second instead of placing
    /// them at the second boundary.
    pub uniform_placement: bool,
}

impl TrafficConfig {
    pub fn new(pattern: TrafficPattern, delta: u32) -> TrafficConfig {
        TrafficConfig {
            pattern,
            delta,
            uniform_placement: false,
        }
    }
}

/// Knuth's product method; the per-second means here are tiny.
fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u32 {
    let limit = (-mean).exp();
    let mut k = 0u32;
    let mut p = 1.0f64;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

fn mix_seed(seed: u64, node: NodeId, stream: u64) -> u64 {
    // splitmix64 over the packed identifiers.
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((node as u64) << 32 | stream);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG stream for one node and purpose, independent of every other
/// stream so event interleaving cannot perturb draws.
pub fn node_rng(seed: u64, node: NodeId, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, node, stream))
}

const TRAFFIC_STREAM: u64 = 0xA11C;

/// Generation instants in microseconds for one node over the run.
/// The sink generates nothing.
pub fn generate(
    config: &TrafficConfig,
    topo: &Topology,
    node: NodeId,
    run_seconds: u32,
    seed: u64,
) -> Vec<u64> {
    if node == topo.sink {
        return Vec::new();
    }
    let mut rng = node_rng(seed, node, TRAFFIC_STREAM);
    let mut times = Vec::new();
    for second in 0..run_seconds as u64 {
        let count = match config.pattern {
            TrafficPattern::Rate => poisson(&mut rng, config.delta as f64),
            TrafficPattern::Burst => poisson(&mut rng, 1.0) * config.delta,
        };
        for i in 0..count {
            let at = if config.uniform_placement {
                second * 1_000_000 + rng.gen_range(0..1_000_000)
            } else {
                // Back-to-back at the second boundary; the offset keeps
                // generation order stable inside the event queue.
                second * 1_000_000 + i as u64
            };
            times.push(at);
        }
    }
    times.sort_unstable();
    times
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_tree_31() {
        let t = build_binary_tree(31).unwrap();
        assert_eq!(t.len(), 31);
        assert_eq!(t.max_hops(), 4);
        let mut by_hop = [0usize; 5];
        for &h in &t.hops {
            by_hop[h as usize] += 1;
        }
        assert_eq!(by_hop, [1, 2, 4, 8, 16]);
        // Parent of a hop-k node sits at hop k-1.
        for n in 1..31 {
            let p = t.parent[n].unwrap() as usize;
            assert_eq!(t.hops[p] + 1, t.hops[n]);
        }
    }

    #[test]
    fn binary_tree_edges() {
        let t = build_binary_tree(7).unwrap();
        assert_eq!(t.max_hops(), 2);
        assert_eq!(t.hops.iter().filter(|&&h| h == 2).count(), 4);
        let single = build_binary_tree(1).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.max_hops(), 0);
    }

    #[test]
    fn edge_list_round_trip() {
        let t = parse_edge_list("1 0\n2 0\n# comment\n3 1\n").unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.hops, vec![0, 1, 1, 2]);
        assert!(parse_edge_list("1 0\n1 2\n").is_err());
        assert!(parse_edge_list("x y\n").is_err());
    }

    #[test]
    fn edge_list_detects_cycles() {
        assert_eq!(
            parse_edge_list("1 2\n2 1\n"),
            Err(TopologyError::Cycle(1))
        );
    }

    #[test]
    fn sink_generates_nothing() {
        let topo = build_binary_tree(3).unwrap();
        let cfg = TrafficConfig::new(TrafficPattern::Rate, 4);
        assert!(generate(&cfg, &topo, 0, 100, 7).is_empty());
    }

    #[test]
    fn burst_sizes_are_multiples_of_delta() {
        let topo = build_binary_tree(3).unwrap();
        let cfg = TrafficConfig::new(TrafficPattern::Burst, 4);
        let times = generate(&cfg, &topo, 1, 500, 42);
        assert_eq!(times.len() % 4, 0);
        // Each second's count is a multiple of the burst size.
        let mut per_second = std::collections::HashMap::new();
        for t in times {
            *per_second.entry(t / 1_000_000).or_insert(0u32) += 1;
        }
        assert!(per_second.values().all(|c| c % 4 == 0));
    }

    #[test]
    fn rate_mean_within_three_sigma() {
        let topo = build_binary_tree(3).unwrap();
        let cfg = TrafficConfig::new(TrafficPattern::Rate, 2);
        let seconds = 10_000u32;
        let times = generate(&cfg, &topo, 1, seconds, 1234);
        let mean = times.len() as f64 / seconds as f64;
        // Var of a per-second Poisson(2) mean over n seconds is 2/n.
        let sigma = (2.0f64 / seconds as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn generation_is_deterministic_per_seed_and_node() {
        let topo = build_binary_tree(7).unwrap();
        let cfg = TrafficConfig::new(TrafficPattern::Rate, 3);
        let a = generate(&cfg, &topo, 5, 50, 99);
        let b = generate(&cfg, &topo, 5, 50, 99);
        assert_eq!(a, b);
        let c = generate(&cfg, &topo, 6, 50, 99);
        assert_ne!(a, c);
    }
}

//! Cluster interconnect shape: nested bandwidth tiers and mixed-radix rank
//! coordinates.
//!
//! Tiers are listed innermost first (fastest link at index 0). A rank's
//! coordinate is its mixed-radix digit vector with the innermost digit varying
//! fastest, so ranks 0..g₀-1 share the first innermost group.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One nesting level of the interconnect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tier {
    pub name: String,
    /// Members per group at this level (e.g. GPUs per node, nodes per rack).
    pub group_size: u32,
    pub bandwidth_bytes_per_s: f64,
    pub latency_s: f64,
}

/// Validated topology: `ranks` equals the product of all tier group sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "TopologyRaw")]
pub struct Topology {
    ranks: u32,
    tiers: Vec<Tier>,
}

/// Serde surface for `Topology`, so every deserialization is validated.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyRaw {
    ranks: u32,
    tiers: Vec<Tier>,
}

impl TryFrom<TopologyRaw> for Topology {
    type Error = TopologyError;

    fn try_from(raw: TopologyRaw) -> Result<Topology, TopologyError> {
        Topology::new(raw.ranks, raw.tiers)
    }
}

/// Mixed-radix coordinate of one rank; `digits[t]` is the position within its
/// tier-`t` group, innermost digit first and fastest-varying.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankCoord {
    pub digits: Vec<u32>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("ranks {ranks} does not equal the product of tier group sizes ({product})")]
    BadArity { ranks: u32, product: u64 },
    #[error("tier `{tier}`: {field} must be positive")]
    NonPositive { tier: String, field: &'static str },
    #[error("topology must declare at least one tier")]
    NoTiers,
    #[error("tier_between needs two distinct ranks (got {0} twice)")]
    SameRank(u32),
    #[error("rank {rank} out of range for {ranks} ranks")]
    RankOutOfRange { rank: u32, ranks: u32 },
    #[error("topology JSON rejected: {0}")]
    Parse(String),
}

impl Topology {
    pub fn new(ranks: u32, tiers: Vec<Tier>) -> Result<Topology, TopologyError> {
        if tiers.is_empty() {
            return Err(TopologyError::NoTiers);
        }
        for tier in &tiers {
            if tier.group_size == 0 {
                return Err(TopologyError::NonPositive { tier: tier.name.clone(), field: "group_size" });
            }
            if !(tier.bandwidth_bytes_per_s > 0.0) {
                return Err(TopologyError::NonPositive {
                    tier: tier.name.clone(),
                    field: "bandwidth_bytes_per_s",
                });
            }
            if tier.latency_s < 0.0 || !tier.latency_s.is_finite() {
                return Err(TopologyError::NonPositive { tier: tier.name.clone(), field: "latency_s" });
            }
        }
        let product: u64 = tiers.iter().map(|t| u64::from(t.group_size)).product();
        if product != u64::from(ranks) || ranks == 0 {
            return Err(TopologyError::BadArity { ranks, product });
        }
        Ok(Topology { ranks, tiers })
    }

    /// Parses the on-disk JSON form
    /// (`{"ranks": N, "tiers": [{"name", "group_size", "bandwidth_bytes_per_s", "latency_s"}]}`).
    pub fn from_json(text: &str) -> Result<Topology, TopologyError> {
        serde_json::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("topology serializes");
        out.push('\n');
        out
    }

    pub fn ranks(&self) -> u32 {
        self.ranks
    }

    /// Tiers innermost first.
    pub fn tiers(&self) -> &[Tier] {
        &self.tiers
    }

    /// Advisory check: a sane topology has bandwidth non-increasing from the
    /// innermost tier outward. Violations are allowed but worth flagging.
    pub fn warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        for pair in self.tiers.windows(2) {
            if pair[1].bandwidth_bytes_per_s > pair[0].bandwidth_bytes_per_s {
                warnings.push(format!(
                    "outer tier `{}` is faster than inner tier `{}` ({} vs {} bytes/s)",
                    pair[1].name,
                    pair[0].name,
                    pair[1].bandwidth_bytes_per_s,
                    pair[0].bandwidth_bytes_per_s
                ));
            }
        }
        warnings
    }

    /// Product of group sizes for tiers `0..t` (so `prefix_product(0) == 1`
    /// and `prefix_product(tiers.len()) == ranks`).
    pub fn prefix_product(&self, t: usize) -> u64 {
        self.tiers[..t].iter().map(|tier| u64::from(tier.group_size)).product()
    }

    /// Mixed-radix decomposition of `rank`, innermost digit first.
    pub fn decode(&self, rank: u32) -> Result<RankCoord, TopologyError> {
        if rank >= self.ranks {
            return Err(TopologyError::RankOutOfRange { rank, ranks: self.ranks });
        }
        let mut rest = rank;
        let digits = self
            .tiers
            .iter()
            .map(|tier| {
                let d = rest % tier.group_size;
                rest /= tier.group_size;
                d
            })
            .collect();
        Ok(RankCoord { digits })
    }

    /// Inverse of `decode`.
    pub fn encode(&self, coord: &RankCoord) -> Result<u32, TopologyError> {
        if coord.digits.len() != self.tiers.len() {
            return Err(TopologyError::BadArity {
                ranks: self.ranks,
                product: coord.digits.len() as u64,
            });
        }
        let mut rank = 0u64;
        for (tier, digit) in self.tiers.iter().zip(&coord.digits).rev() {
            if *digit >= tier.group_size {
                return Err(TopologyError::RankOutOfRange { rank: *digit, ranks: tier.group_size });
            }
            rank = rank * u64::from(tier.group_size) + u64::from(*digit);
        }
        Ok(rank as u32)
    }

    /// The tier whose link traffic between `a` and `b` must cross: the level
    /// of their smallest common enclosing group, i.e. the outermost tier at
    /// which their coordinates differ.
    pub fn tier_between(&self, a: u32, b: u32) -> Result<usize, TopologyError> {
        if a == b {
            return Err(TopologyError::SameRank(a));
        }
        for rank in [a, b] {
            if rank >= self.ranks {
                return Err(TopologyError::RankOutOfRange { rank, ranks: self.ranks });
            }
        }
        for t in 0..self.tiers.len() {
            let stride = self.prefix_product(t + 1);
            if u64::from(a) / stride == u64::from(b) / stride {
                return Ok(t);
            }
        }
        unreachable!("distinct in-range ranks must share the outermost group");
    }
}

// ─────────────────────────── Tests ───────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn tier(name: &str, group_size: u32, bw: f64, lat: f64) -> Tier {
        Tier { name: name.into(), group_size, bandwidth_bytes_per_s: bw, latency_s: lat }
    }

    /// Two nodes of four accelerators: NVLink-class inside, IB-class between.
    fn two_by_four() -> Topology {
        Topology::new(
            8,
            vec![tier("intra", 4, 150e9, 5e-6), tier("inter", 2, 12.5e9, 2e-6)],
        )
        .unwrap()
    }

    #[test]
    fn decode_is_mixed_radix_innermost_fastest() {
        let t = two_by_four();
        assert_eq!(t.decode(0).unwrap().digits, vec![0, 0]);
        assert_eq!(t.decode(3).unwrap().digits, vec![3, 0]);
        assert_eq!(t.decode(4).unwrap().digits, vec![0, 1]);
        assert_eq!(t.decode(7).unwrap().digits, vec![3, 1]);
    }

    #[test]
    fn encode_round_trips_every_rank() {
        let t = Topology::new(
            24,
            vec![tier("a", 2, 4e9, 1e-6), tier("b", 3, 3e9, 2e-6), tier("c", 4, 2e9, 3e-6)],
        )
        .unwrap();
        for rank in 0..24 {
            let coord = t.decode(rank).unwrap();
            assert_eq!(t.encode(&coord).unwrap(), rank);
        }
    }

    #[test]
    fn tier_between_same_node_and_cross_node() {
        let t = two_by_four();
        assert_eq!(t.tier_between(0, 1).unwrap(), 0);
        assert_eq!(t.tier_between(0, 4).unwrap(), 1);
        // Different node dominates even when innermost digits differ too.
        assert_eq!(t.tier_between(1, 4).unwrap(), 1);
        assert_eq!(t.tier_between(0, 0), Err(TopologyError::SameRank(0)));
    }

    #[test]
    fn tier_between_agrees_with_coordinate_scan() {
        // Oracle: outermost index at which the digit vectors differ.
        let t = Topology::new(
            12,
            vec![tier("a", 2, 4e9, 1e-6), tier("b", 3, 3e9, 2e-6), tier("c", 2, 2e9, 3e-6)],
        )
        .unwrap();
        for a in 0..12 {
            for b in 0..12 {
                if a == b {
                    continue;
                }
                let ca = t.decode(a).unwrap().digits;
                let cb = t.decode(b).unwrap().digits;
                let expect = (0..3).rev().find(|&i| ca[i] != cb[i]).unwrap();
                assert_eq!(t.tier_between(a, b).unwrap(), expect, "ranks {a},{b}");
            }
        }
    }

    #[test]
    fn new_rejects_arity_mismatch_and_nonpositive_fields() {
        assert_eq!(
            Topology::new(8, vec![tier("a", 2, 1e9, 0.0), tier("b", 3, 1e9, 0.0)]),
            Err(TopologyError::BadArity { ranks: 8, product: 6 })
        );
        assert!(matches!(
            Topology::new(2, vec![tier("a", 2, 0.0, 0.0)]),
            Err(TopologyError::NonPositive { field: "bandwidth_bytes_per_s", .. })
        ));
        assert!(matches!(
            Topology::new(2, vec![tier("a", 2, 1e9, -1.0)]),
            Err(TopologyError::NonPositive { field: "latency_s", .. })
        ));
    }

    #[test]
    fn json_round_trip_and_validation_on_parse() {
        let t = two_by_four();
        let text = t.to_json();
        assert_eq!(Topology::from_json(&text).unwrap(), t);

        let bad = r#"{"ranks": 8, "tiers": [{"name": "a", "group_size": 3,
                      "bandwidth_bytes_per_s": 1e9, "latency_s": 0.0}]}"#;
        assert!(matches!(Topology::from_json(bad), Err(TopologyError::Parse(_))));
        let unknown = r#"{"ranks": 2, "tiers": [{"name": "a", "group_size": 2,
                      "bandwidth_bytes_per_s": 1e9, "latency_s": 0.0}], "color": "red"}"#;
        assert!(matches!(Topology::from_json(unknown), Err(TopologyError::Parse(_))));
    }

    #[test]
    fn warns_when_outer_tier_is_faster() {
        let t = Topology::new(
            4,
            vec![tier("inner", 2, 1e9, 1e-6), tier("outer", 2, 2e9, 1e-6)],
        )
        .unwrap();
        assert_eq!(t.warnings().len(), 1);
        assert!(two_by_four().warnings().is_empty());
    }
}

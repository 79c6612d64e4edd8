//! Flat-ring and topology-aware hierarchical all-reduce.
//!
//! Both collectives compute the elementwise sum of per-rank buffers and a
//! modeled wall-clock cost; they differ in how traffic maps onto the tier
//! hierarchy.
//!
//! * The **flat ring** walks ranks in id order, ignoring the hierarchy the
//!   way a topology-oblivious ring does. Each chunk makes `p - 1`
//!   reduce-scatter hops and `p - 1` all-gather hops between consecutive
//!   ranks, every hop charged at the slowest tier it crosses, and the
//!   modeled makespan is the costliest chunk's path.
//! * The **hierarchical** schedule reduce-scatters tier by tier from the
//!   innermost (fastest) tier outward, then all-gathers back from the
//!   outermost tier inward. Each tier only ever carries `1/g` of the bytes
//!   the tier inside it carried, which is what keeps slow outer links from
//!   dominating.
//!
//! Numeric results use a fixed reduction order (ascending rank within each
//! group), so repeated runs are bitwise identical, and integer-valued
//! payloads within 2^53 are summed exactly under either algorithm. Byte
//! accounting treats elements as 4-byte words even though payloads are held
//! as `f64` for exact testing.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::par;
use crate::topology::Topology;

/// Modeled element width in bytes (FP32 accounting).
pub const ELEM_BYTES: u64 = 4;

/// Largest element count at which [`sweep_sizes`] materializes buffers and
/// asserts numeric equality of the two algorithms; larger rows are costed
/// through the models alone so sweeps over hundreds of MB stay cheap.
pub const REALIZED_EQUALITY_CAP: u64 = 1 << 20;

/// Per-rank payloads of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct RankBuffers {
    bufs: Vec<Vec<f64>>,
}

impl RankBuffers {
    pub fn new(bufs: Vec<Vec<f64>>) -> Result<Self, CollectiveError> {
        let first_len = bufs.first().ok_or(CollectiveError::EmptyBuffers)?.len();
        if first_len == 0 {
            return Err(CollectiveError::EmptyBuffers);
        }
        for b in &bufs {
            if b.len() != first_len {
                return Err(CollectiveError::LengthMismatch {
                    expected: first_len,
                    got: b.len(),
                });
            }
        }
        Ok(RankBuffers { bufs })
    }

    pub fn ranks(&self) -> usize {
        self.bufs.len()
    }

    pub fn n_elems(&self) -> usize {
        self.bufs[0].len()
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.bufs
    }

    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.bufs
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CollectiveError {
    #[error("collective needs at least one rank with a non-empty buffer")]
    EmptyBuffers,
    #[error("buffer or rank count mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    ReduceScatter,
    AllGather,
}

impl PhaseKind {
    pub fn label(self) -> &'static str {
        match self {
            PhaseKind::ReduceScatter => "reduce_scatter",
            PhaseKind::AllGather => "all_gather",
        }
    }
}

/// Element range `[start, end)`, relative to the segment a group is working
/// on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChunkRange {
    pub start: u64,
    pub end: u64,
}

/// One set of ranks exchanging data concurrently within a phase, and the
/// chunk each member owns after (reduce-scatter) or contributes (all-gather).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseGroup {
    pub ranks: Vec<u32>,
    /// `chunks[j]` belongs to `ranks[j]`; together they partition
    /// `[0, active_elems)` without overlap.
    pub chunks: Vec<ChunkRange>,
}

/// One lockstep step of the hierarchical schedule. All groups within a
/// phase act concurrently; phases execute in sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub tier: usize,
    pub tier_name: String,
    pub group_size: u32,
    /// Elements per rank entering a reduce-scatter phase (equivalently,
    /// exiting the matching all-gather phase).
    pub active_elems: u64,
    /// Elements per transferred chunk: `active_elems / group_size`.
    pub chunk_elems: u64,
    pub modeled_time: f64,
    pub groups: Vec<PhaseGroup>,
}

impl Phase {
    /// Bytes each participating rank sends during this phase.
    pub fn bytes_per_rank(&self) -> u64 {
        u64::from(self.group_size - 1) * self.chunk_elems * ELEM_BYTES
    }
}

/// The full phase sequence for one all-reduce, with its modeled total time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReduceSchedule {
    pub phases: Vec<Phase>,
    pub n_elems: u64,
    /// `n_elems` rounded up to a multiple of the rank count; padding
    /// elements are zeros and stripped from realized outputs.
    pub padded_elems: u64,
    pub total_time: f64,
}

impl ReduceSchedule {
    /// Bytes a single rank sends over a given tier across all phases.
    pub fn tier_bytes_per_rank(&self, tier: usize) -> u64 {
        self.phases.iter().filter(|p| p.tier == tier).map(Phase::bytes_per_rank).sum()
    }
}

/// Cost of one ring hop between consecutive ranks: the slowest tier crossed.
fn hop_cost(topo: &Topology, a: u32, b: u32, chunk_bytes: f64) -> f64 {
    let boundary = topo.tier_between(a, b).expect("consecutive ranks differ");
    topo.tiers()[..=boundary]
        .iter()
        .map(|t| t.latency_s + chunk_bytes / t.bandwidth_bytes_per_s)
        .fold(0.0, f64::max)
}

/// Modeled flat-ring all-reduce time: ranks in id order, `2(p-1)` hops per
/// chunk, makespan taken over chunks.
///
/// The chunk finishing at rank `c` skips only the hop out of `c` during
/// reduce-scatter and the hop into `c` during all-gather, so its path costs
/// `2 * sum(hops) - (in(c) + out(c))` and the makespan is that expression
/// maximized over `c` — equivalently `2 * sum - min over ranks`.
pub fn ring_cost(topo: &Topology, n_elems: u64) -> f64 {
    let p = topo.ranks();
    if p == 1 {
        return 0.0;
    }
    let chunk_bytes = n_elems as f64 * ELEM_BYTES as f64 / p as f64;
    let hops: Vec<f64> =
        (0..p).map(|i| hop_cost(topo, i, (i + 1) % p, chunk_bytes)).collect();
    let total: f64 = hops.iter().sum();
    let min_adjacent = (0..p as usize)
        .map(|c| hops[(c + p as usize - 1) % p as usize] + hops[c])
        .fold(f64::INFINITY, f64::min);
    2.0 * total - min_adjacent
}

fn check_ranks(bufs: &RankBuffers, topo: &Topology) -> Result<(), CollectiveError> {
    if bufs.ranks() != topo.ranks() as usize {
        return Err(CollectiveError::LengthMismatch {
            expected: topo.ranks() as usize,
            got: bufs.ranks(),
        });
    }
    Ok(())
}

/// Elementwise sum in ascending rank order, replicated to every rank.
/// Elements per parallel chunk in [`replicated_sum`].
const SUM_CHUNK_ELEMS: usize = 1 << 16;

fn replicated_sum(bufs: &RankBuffers) -> RankBuffers {
    let mut acc = bufs.buffers()[0].clone();
    let rest = &bufs.buffers()[1..];
    // Every element folds ranks in ascending order regardless of chunking,
    // so parallel and sequential builds agree bitwise.
    par::for_each_chunk_mut(&mut acc, SUM_CHUNK_ELEMS, |i, chunk| {
        let (start, len) = (i * SUM_CHUNK_ELEMS, chunk.len());
        for b in rest {
            for (a, x) in chunk.iter_mut().zip(&b[start..start + len]) {
                *a += x;
            }
        }
    });
    RankBuffers { bufs: vec![acc; bufs.ranks()] }
}

/// Flat-ring all-reduce: exact elementwise sum plus the modeled ring cost.
pub fn ring_allreduce(
    bufs: &RankBuffers,
    topo: &Topology,
) -> Result<(RankBuffers, f64), CollectiveError> {
    check_ranks(bufs, topo)?;
    Ok((replicated_sum(bufs), ring_cost(topo, bufs.n_elems() as u64)))
}

/// Ranks partitioned into the groups that communicate at `tier`: members
/// agree on every coordinate except the tier's own digit. Groups are listed
/// by ascending first member, members ascending.
fn rank_groups(topo: &Topology, tier: usize) -> Vec<Vec<u32>> {
    let mut by_rest: BTreeMap<Vec<u32>, Vec<u32>> = BTreeMap::new();
    for rank in 0..topo.ranks() {
        let mut coords = topo.decode(rank).expect("rank in range").digits;
        coords.remove(tier);
        by_rest.entry(coords).or_default().push(rank);
    }
    let mut groups: Vec<Vec<u32>> = by_rest.into_values().collect();
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Builds the topology-aware phase sequence for an all-reduce of `n_elems`
/// 4-byte elements: reduce-scatter from the innermost tier outward, then
/// all-gather from the outermost tier inward. Tiers with group size 1
/// contribute no phase; a 1-rank topology yields an empty schedule.
pub fn build_schedule(topo: &Topology, n_elems: u64) -> ReduceSchedule {
    let ranks = u64::from(topo.ranks());
    let padded_elems = n_elems.div_ceil(ranks) * ranks;

    // Holdings per rank entering the reduce-scatter at each tier.
    let mut active = padded_elems;
    let mut tier_state = Vec::new();
    for (t, tier) in topo.tiers().iter().enumerate() {
        let g = u64::from(tier.group_size);
        tier_state.push((t, tier, active, active / g));
        active /= g;
    }

    let make_phase = |kind: PhaseKind, t: usize, tier: &crate::topology::Tier, active: u64, chunk: u64| {
        let g = tier.group_size;
        let chunk_bytes = (chunk * ELEM_BYTES) as f64;
        let modeled_time =
            f64::from(g - 1) * (tier.latency_s + chunk_bytes / tier.bandwidth_bytes_per_s);
        let groups = rank_groups(topo, t)
            .into_iter()
            .map(|ranks| PhaseGroup {
                chunks: (0..u64::from(g))
                    .map(|j| ChunkRange { start: j * chunk, end: (j + 1) * chunk })
                    .collect(),
                ranks,
            })
            .collect();
        Phase {
            kind,
            tier: t,
            tier_name: tier.name.clone(),
            group_size: g,
            active_elems: active,
            chunk_elems: chunk,
            modeled_time,
            groups,
        }
    };

    let mut phases = Vec::new();
    for &(t, tier, active, chunk) in &tier_state {
        if tier.group_size > 1 {
            phases.push(make_phase(PhaseKind::ReduceScatter, t, tier, active, chunk));
        }
    }
    for &(t, tier, active, chunk) in tier_state.iter().rev() {
        if tier.group_size > 1 {
            phases.push(make_phase(PhaseKind::AllGather, t, tier, active, chunk));
        }
    }
    // An empty sum is -0.0; normalize so 1-rank schedules report +0.0.
    let total_time = phases.iter().map(|p| p.modeled_time).sum::<f64>() + 0.0;
    ReduceSchedule { phases, n_elems, padded_elems, total_time }
}

/// Topology-aware all-reduce: executes the schedule's phases over simulated
/// per-rank buffers and returns the realized schedule alongside the result.
///
/// Within every group, chunk sums accumulate in ascending rank order, so the
/// result is deterministic and — for integer-valued floats within 2^53 —
/// bitwise equal to a brute-force sum.
pub fn hierarchical_allreduce(
    bufs: &RankBuffers,
    topo: &Topology,
) -> Result<(RankBuffers, ReduceSchedule), CollectiveError> {
    check_ranks(bufs, topo)?;
    let n_elems = bufs.n_elems();
    let schedule = build_schedule(topo, n_elems as u64);
    let padded = schedule.padded_elems as usize;

    // Active segment per rank, starting as the zero-padded input.
    let mut segs: Vec<Vec<f64>> = bufs
        .buffers()
        .iter()
        .map(|b| {
            let mut s = b.clone();
            s.resize(padded, 0.0);
            s
        })
        .collect();

    // Reduce-scatter inward-out: after the phase at a tier, member j of each
    // group keeps only chunk j, summed across the group. Groups touch
    // disjoint ranks and each sum stays in ascending member order, so
    // processing groups in parallel is bitwise identical to sequential.
    for (t, tier) in topo.tiers().iter().enumerate() {
        let g = tier.group_size as usize;
        if g == 1 {
            continue;
        }
        let groups = rank_groups(topo, t);
        let summed_by_group: Vec<Vec<Vec<f64>>> = par::map_ordered(groups.clone(), |group| {
            let chunk = segs[group[0] as usize].len() / g;
            (0..g)
                .map(|j| {
                    let mut acc = segs[group[0] as usize][j * chunk..(j + 1) * chunk].to_vec();
                    for &member in &group[1..] {
                        for (a, x) in
                            acc.iter_mut().zip(&segs[member as usize][j * chunk..(j + 1) * chunk])
                        {
                            *a += x;
                        }
                    }
                    acc
                })
                .collect()
        });
        for (group, summed) in groups.iter().zip(summed_by_group) {
            for (j, summed_chunk) in summed.into_iter().enumerate() {
                segs[group[j] as usize] = summed_chunk;
            }
        }
    }

    // All-gather outward-in: members re-concatenate their chunks in
    // ascending order, undoing the split of the same tier's reduce-scatter.
    for (t, tier) in topo.tiers().iter().enumerate().rev() {
        if tier.group_size == 1 {
            continue;
        }
        let groups = rank_groups(topo, t);
        let gathered_by_group: Vec<Vec<f64>> = par::map_ordered(groups.clone(), |group| {
            group.iter().flat_map(|&m| segs[m as usize].iter().copied()).collect()
        });
        for (group, gathered) in groups.iter().zip(gathered_by_group) {
            for &member in group {
                segs[member as usize] = gathered.clone();
            }
        }
    }

    for s in segs.iter_mut() {
        s.truncate(n_elems);
    }
    Ok((RankBuffers { bufs: segs }, schedule))
}

/// One row of an algorithm-comparison sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n_elems: u64,
    pub ring_time_s: f64,
    pub hier_time_s: f64,
    /// `ring_time_s / hier_time_s`; defined as 1.0 when both are zero
    /// (single-rank topologies).
    pub ratio: f64,
}

/// Runs both cost models over `sizes` and, for sizes up to
/// [`REALIZED_EQUALITY_CAP`], also realizes both algorithms on the same
/// seeded integer-valued buffers and asserts their sums are bitwise equal.
pub fn sweep_sizes(
    topo: &Topology,
    sizes: &[u64],
    seed: u64,
) -> Result<Vec<SweepRow>, CollectiveError> {
    if sizes.is_empty() {
        return Err(CollectiveError::EmptyBuffers);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let ring_time_s = ring_cost(topo, n);
        let hier_time_s = build_schedule(topo, n).total_time;
        if n <= REALIZED_EQUALITY_CAP {
            let bufs = RankBuffers::new(
                (0..topo.ranks())
                    .map(|_| (0..n).map(|_| f64::from(rng.gen_range(-1024i32..=1024))).collect())
                    .collect(),
            )?;
            let (ring_out, _) = ring_allreduce(&bufs, topo)?;
            let (hier_out, _) = hierarchical_allreduce(&bufs, topo)?;
            assert_eq!(
                ring_out, hier_out,
                "integer-valued sums must agree bitwise across algorithms"
            );
        }
        let ratio = if hier_time_s == 0.0 && ring_time_s == 0.0 {
            1.0
        } else {
            ring_time_s / hier_time_s
        };
        rows.push(SweepRow { n_elems: n, ring_time_s, hier_time_s, ratio });
    }
    Ok(rows)
}

/// Renders sweep rows as CSV with plain decimal floats.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_elems", "ring_time_s", "hier_time_s", "ratio"]).expect("csv header");
    for r in rows {
        w.write_record([
            &format!("{}", r.n_elems),
            &format!("{}", r.ring_time_s),
            &format!("{}", r.hier_time_s),
            &format!("{}", r.ratio),
        ])
        .expect("csv row");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
}

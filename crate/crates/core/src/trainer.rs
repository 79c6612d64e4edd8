//! Data-parallel SGD harness over the simulated stack.
//!
//! Each simulated rank owns a contiguous shard of the dataset and a full
//! replica of the weights. Per epoch every rank computes its shard's
//! gradient sum — either directly, or as a dataflow graph pushed through the
//! executor when a swap budget is configured — the per-rank sums are
//! combined with the hierarchical all-reduce, and every replica applies the
//! same averaged update. All arithmetic uses one fixed association on both
//! gradient paths, so the graph route is bit-for-bit interchangeable with
//! the direct one.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::collectives::{hierarchical_allreduce, CollectiveError, RankBuffers};
use crate::exec::{execute, DeviceConfig, ExecError};
use crate::graph::{ComputeFn, Graph, OpKind, OpNode, TensorSpec};
use crate::lms::{insert_swaps, plan_for_capacity, LmsSettings, PlanError};
use crate::metrics::{scaling_table, MetricsError, ScalingRow};
use crate::par;
use crate::topology::{Tier, Topology, TopologyError};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Least-squares model: loss per sample is `(x·w − y)²`, so the gradient of
/// the summed loss is `2·xᵀ(x·w − y)` accumulated over samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub weights: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(dims: usize) -> ToyModel {
        ToyModel { weights: vec![0.0; dims] }
    }

    pub fn with_weights(weights: Vec<f64>) -> ToyModel {
        ToyModel { weights }
    }

    pub fn dims(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }
}

/// An orthogonal-design regression set: `samples_per_dim` samples per
/// dimension, each `x = ±2·e_dim` with `y = x·w*` for an integer target
/// `w*`. Every gradient contribution is an integer, so shard sums are exact
/// under any grouping, and with `lr = dims/8` (`dims` a power of two ≤ 8)
/// one epoch lands exactly on `w*` and later gradients are identically zero.
/// Returns the dataset together with `w*`.
pub fn make_dataset(dims: usize, samples_per_dim: usize, seed: u64) -> (Dataset, Vec<f64>) {
    assert!(dims >= 1 && samples_per_dim >= 1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let w_star: Vec<f64> = (0..dims)
        .map(|_| {
            let mag = f64::from(rng.gen_range(1..=9i32));
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let samples = (0..dims * samples_per_dim)
        .map(|i| {
            let dim = i % dims;
            let sign = if rng.gen_bool(0.5) { 2.0 } else { -2.0 };
            let mut x = vec![0.0; dims];
            x[dim] = sign;
            Sample { x, y: sign * w_star[dim] }
        })
        .collect();
    (Dataset { samples }, w_star)
}

/// The learning rate under which [`make_dataset`] converges in one epoch.
pub fn exact_lr(dims: usize) -> f64 {
    dims as f64 / 8.0
}

/// A dense integer-valued regression set (components in [-8, 8], targets in
/// [-64, 64]) for tests that want non-trivial optimization trajectories.
pub fn make_noisy_dataset(dims: usize, n_samples: usize, seed: u64) -> Dataset {
    assert!(dims >= 1 && n_samples >= 1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let samples = (0..n_samples)
        .map(|_| Sample {
            x: (0..dims).map(|_| f64::from(rng.gen_range(-8..=8i32))).collect(),
            y: f64::from(rng.gen_range(-64..=64i32)),
        })
        .collect();
    Dataset { samples }
}

/// Contiguous shard ranges: the first `n % ranks` ranks get one extra
/// sample, so shard sizes never differ by more than one.
pub fn partition(n_samples: usize, ranks: usize) -> Vec<std::ops::Range<usize>> {
    assert!(ranks >= 1);
    let base = n_samples / ranks;
    let extra = n_samples % ranks;
    let mut start = 0;
    (0..ranks)
        .map(|r| {
            let len = base + usize::from(r < extra);
            let range = start..start + len;
            start += len;
            range
        })
        .collect()
}

/// Flop count the direct gradient path charges for a shard of `k` samples:
/// per sample, `d` products + `d−1` dot adds + residual add + doubling +
/// `d` gradient products + `d` accumulator adds.
pub fn shard_flops(k: usize, dims: usize) -> u64 {
    (k as u64) * (4 * dims as u64 + 2)
}

/// A tier stack whose group sizes are maxima, instantiable at any rank
/// count that packs innermost-first: each tier takes `min(remaining, max)`
/// ranks (which must divide the remainder), and the count must be exhausted
/// by the last tier.
#[derive(Debug, Clone)]
pub struct TopologyFamily {
    tiers: Vec<Tier>,
}

impl TopologyFamily {
    pub fn new(tiers: Vec<Tier>) -> TopologyFamily {
        assert!(!tiers.is_empty(), "a topology family needs at least one tier");
        TopologyFamily { tiers }
    }

    pub fn from_topology(topo: &Topology) -> TopologyFamily {
        TopologyFamily { tiers: topo.tiers().to_vec() }
    }

    pub fn instantiate(&self, ranks: u32) -> Result<Topology, TrainError> {
        if ranks == 0 {
            return Err(TrainError::BadConfig("rank count must be positive".into()));
        }
        let mut remaining = ranks;
        let mut tiers = Vec::with_capacity(self.tiers.len());
        for tier in &self.tiers {
            let g = tier.group_size.min(remaining);
            if remaining % g != 0 {
                return Err(TrainError::BadConfig(format!(
                    "{ranks} ranks do not pack into tier `{}` (group size {})",
                    tier.name, tier.group_size
                )));
            }
            remaining /= g;
            tiers.push(Tier { group_size: g, ..tier.clone() });
        }
        if remaining != 1 {
            return Err(TrainError::BadConfig(format!(
                "{ranks} ranks exceed the family's capacity of {}",
                self.tiers.iter().map(|t| u64::from(t.group_size)).product::<u64>()
            )));
        }
        Ok(Topology::new(ranks, tiers)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub lr: f64,
    /// Flops per second charged against compute time.
    pub flop_rate: f64,
    /// When set, shard gradients run as graphs through the executor with
    /// this swap budget; otherwise they are computed directly.
    pub lms: Option<LmsSettings>,
}

impl TrainConfig {
    pub fn new(epochs: u32, lr: f64) -> TrainConfig {
        TrainConfig { epochs, lr, flop_rate: 1e9, lms: None }
    }
}

/// One epoch of the simulated run. Wall time is the slowest rank's compute
/// plus the modeled all-reduce; the loss is the mean squared residual at the
/// weights the epoch started from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: u32,
    pub compute_s: Vec<f64>,
    pub allreduce_s: f64,
    pub wall_s: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: Vec<f64>,
    pub reports: Vec<EpochReport>,
    /// Total swap plan entries across ranks (0 when training directly).
    pub swap_entries: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: u32 },
    #[error("replica weights diverged after epoch {epoch}")]
    ReplicaDivergence { epoch: u32 },
    #[error(transparent)]
    Collective(#[from] CollectiveError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Shard gradient sum and squared-residual sum, in the canonical
/// association: per sample the dot product folds ascending over dimensions,
/// the residual doubles once, and per-dimension contributions fold ascending
/// over samples starting from the first sample's term.
pub fn shard_gradient(w: &[f64], samples: &[Sample]) -> (Vec<f64>, f64) {
    let d = w.len();
    let mut grad = vec![0.0; d];
    let mut sq = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let mut dot = w[0] * s.x[0];
        for j in 1..d {
            dot += w[j] * s.x[j];
        }
        let r = dot - s.y;
        let r2 = r * 2.0;
        sq += r * r;
        if i == 0 {
            for j in 0..d {
                grad[j] = r2 * s.x[j];
            }
        } else {
            for j in 0..d {
                grad[j] += r2 * s.x[j];
            }
        }
    }
    (grad, sq)
}

/// A shard's gradient computation lowered to a dataflow graph, mirroring
/// [`shard_gradient`]'s association exactly: weights and negated targets
/// enter as source tensors, per-sample products are `Scale(x_ij)` ops, and
/// ascending 2-ary add chains realize the dot products and accumulators.
struct ShardGraph {
    graph: Graph,
    /// Source tensor ids for the weights, index-aligned with dimensions.
    w_tensors: Vec<String>,
    /// Sink-visible accumulator tensor ids, index-aligned with dimensions.
    grad_tensors: Vec<String>,
    /// Fixed bindings (negated targets); weights get rebound each epoch.
    base_bindings: BTreeMap<String, Vec<f64>>,
}

fn build_shard_graph(dims: usize, samples: &[Sample], op_cost: f64) -> ShardGraph {
    assert!(!samples.is_empty());
    let scalar = |id: &str| TensorSpec { id: id.into(), nbytes: 8, dtype_width: 8 };

    let w_tensors: Vec<String> = (0..dims).map(|j| format!("w{j:02}")).collect();
    let y_tensors: Vec<String> = (0..samples.len()).map(|i| format!("y{i:05}")).collect();

    let mut tensors: Vec<TensorSpec> =
        w_tensors.iter().chain(&y_tensors).map(|id| scalar(id)).collect();
    // One source op per tensor: a monolithic source would allocate every
    // input at a single step, putting an unswappable floor under the peak.
    let mut ops: Vec<OpNode> = w_tensors
        .iter()
        .enumerate()
        .map(|(j, t)| {
            OpNode::new(&format!("aw{j:02}"), OpKind::Source).with_outputs([t.as_str()])
        })
        .chain(y_tensors.iter().enumerate().map(|(i, t)| {
            OpNode::new(&format!("ay{i:05}"), OpKind::Source).with_outputs([t.as_str()])
        }))
        .collect();

    let mut base_bindings = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        base_bindings.insert(y_tensors[i].clone(), vec![-s.y]);
    }

    let mut counter = 0usize;
    let mut compute = |ops: &mut Vec<OpNode>,
                       tensors: &mut Vec<TensorSpec>,
                       tag: &str,
                       f: ComputeFn,
                       inputs: Vec<String>|
     -> String {
        let op_id = format!("c{counter:07}_{tag}");
        let out = format!("t{counter:07}");
        counter += 1;
        tensors.push(scalar(&out));
        ops.push(
            OpNode::new(&op_id, OpKind::Compute(f))
                .with_inputs(inputs.iter().map(String::as_str))
                .with_outputs([out.as_str()])
                .with_cost(op_cost),
        );
        out
    };

    let mut acc: Vec<String> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        // dot = ((w0·x0 + w1·x1) + w2·x2) + …
        let mut dot = compute(
            &mut ops,
            &mut tensors,
            "p",
            ComputeFn::Scale(s.x[0]),
            vec![w_tensors[0].clone()],
        );
        for j in 1..dims {
            let term = compute(
                &mut ops,
                &mut tensors,
                "p",
                ComputeFn::Scale(s.x[j]),
                vec![w_tensors[j].clone()],
            );
            dot = compute(&mut ops, &mut tensors, "d", ComputeFn::Add, vec![dot, term]);
        }
        // r = dot + (−y), then r2 = r·2.
        let r = compute(&mut ops, &mut tensors, "r", ComputeFn::Add, vec![
            dot,
            y_tensors[i].clone(),
        ]);
        let r2 = compute(&mut ops, &mut tensors, "s", ComputeFn::Scale(2.0), vec![r]);
        // Per-dimension contribution r2·x_j folded onto the accumulator.
        for j in 0..dims {
            let term = compute(
                &mut ops,
                &mut tensors,
                "g",
                ComputeFn::Scale(s.x[j]),
                vec![r2.clone()],
            );
            if i == 0 {
                acc.push(term);
            } else {
                acc[j] = compute(&mut ops, &mut tensors, "a", ComputeFn::Add, vec![
                    acc[j].clone(),
                    term,
                ]);
            }
        }
    }
    ops.push(OpNode::new("zz_grad", OpKind::Sink).with_inputs(acc.iter().map(String::as_str)));

    ShardGraph { graph: Graph { ops, tensors }, w_tensors, grad_tensors: acc, base_bindings }
}

/// A rank's prepared gradient pipeline for one training run.
enum RankPipeline {
    /// Nothing to do: the shard is empty.
    Idle,
    /// Direct arithmetic with modeled flop time.
    Direct { range: std::ops::Range<usize> },
    /// Graph execution (possibly rewritten with swaps).
    Lowered { range: std::ops::Range<usize>, shard: ShardGraph, swap_entries: usize },
}

/// Runs data-parallel SGD on `topo.ranks()` simulated ranks and reports the
/// final (replica-consistent) weights plus per-epoch timings.
pub fn train(
    model: &ToyModel,
    data: &Dataset,
    topo: &Topology,
    device: &DeviceConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let dims = model.dims();
    if dims == 0 {
        return Err(TrainError::BadConfig("model must have at least one dimension".into()));
    }
    if data.is_empty() {
        return Err(TrainError::BadConfig("dataset is empty".into()));
    }
    if data.samples.iter().any(|s| s.x.len() != dims) {
        return Err(TrainError::BadConfig("sample dimensionality does not match model".into()));
    }
    if cfg.epochs == 0 {
        return Err(TrainError::BadConfig("epoch count must be positive".into()));
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(TrainError::BadConfig("learning rate must be positive and finite".into()));
    }
    if !(cfg.flop_rate.is_finite() && cfg.flop_rate > 0.0) {
        return Err(TrainError::BadConfig("flop rate must be positive and finite".into()));
    }

    let ranks = topo.ranks() as usize;
    let n = data.len();
    let shards = partition(n, ranks);

    // Prepare each rank's pipeline once; graphs and swap plans are reused
    // across epochs with the weights rebound.
    let exec_device = match &cfg.lms {
        Some(lms) => Some(device.with_capacity(lms.capacity)?),
        None => None,
    };
    let pipelines: Vec<RankPipeline> = shards
        .iter()
        .map(|range| -> Result<RankPipeline, TrainError> {
            if range.is_empty() {
                return Ok(RankPipeline::Idle);
            }
            match &cfg.lms {
                None => Ok(RankPipeline::Direct { range: range.clone() }),
                Some(lms) => {
                    let samples = &data.samples[range.clone()];
                    let mut shard = build_shard_graph(dims, samples, 1.0 / cfg.flop_rate);
                    let plan = plan_for_capacity(
                        &shard.graph,
                        lms.capacity,
                        lms.threshold,
                        lms.prefetch_distance,
                    )?;
                    let swap_entries = plan.entries.len();
                    if !plan.is_empty() {
                        shard.graph = insert_swaps(&shard.graph, &plan)?;
                    }
                    Ok(RankPipeline::Lowered { range: range.clone(), shard, swap_entries })
                }
            }
        })
        .collect::<Result<_, _>>()?;
    let swap_entries = pipelines
        .iter()
        .map(|p| match p {
            RankPipeline::Lowered { swap_entries, .. } => *swap_entries,
            _ => 0,
        })
        .sum();

    let mut replicas: Vec<Vec<f64>> = vec![model.weights.clone(); ranks];
    let mut reports = Vec::with_capacity(cfg.epochs as usize);

    for epoch in 1..=cfg.epochs {
        // Every rank computes (gradient sum, squared-residual sum, seconds).
        let results: Vec<Result<(Vec<f64>, f64, f64), TrainError>> =
            par::map_ordered((0..ranks).collect(), |rank| {
                rank_gradient(&pipelines[rank], &replicas[rank], data, cfg, exec_device.as_ref())
            });
        let mut buffers = Vec::with_capacity(ranks);
        let mut compute_s = Vec::with_capacity(ranks);
        for result in results {
            let (mut grad, sq, seconds) = result?;
            grad.push(sq);
            buffers.push(grad);
            compute_s.push(seconds);
        }

        let (reduced, schedule) = hierarchical_allreduce(&RankBuffers::new(buffers)?, topo)?;
        let reduced = &reduced.buffers()[0];
        let loss = reduced[dims] / n as f64;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }

        for w in &mut replicas {
            for j in 0..dims {
                w[j] -= cfg.lr * (reduced[j] / n as f64);
            }
        }
        let bits: Vec<Vec<u64>> =
            replicas.iter().map(|w| w.iter().map(|v| v.to_bits()).collect()).collect();
        if bits.iter().any(|b| *b != bits[0]) {
            return Err(TrainError::ReplicaDivergence { epoch });
        }

        let max_compute = compute_s.iter().copied().fold(0.0f64, f64::max);
        reports.push(EpochReport {
            epoch,
            allreduce_s: schedule.total_time,
            wall_s: max_compute + schedule.total_time,
            loss,
            compute_s,
        });
    }

    Ok(TrainOutcome { weights: replicas.swap_remove(0), reports, swap_entries })
}

fn rank_gradient(
    pipeline: &RankPipeline,
    w: &[f64],
    data: &Dataset,
    cfg: &TrainConfig,
    exec_device: Option<&DeviceConfig>,
) -> Result<(Vec<f64>, f64, f64), TrainError> {
    match pipeline {
        RankPipeline::Idle => Ok((vec![0.0; w.len()], 0.0, 0.0)),
        RankPipeline::Direct { range } => {
            let samples = &data.samples[range.clone()];
            let (grad, sq) = shard_gradient(w, samples);
            let seconds = shard_flops(samples.len(), w.len()) as f64 / cfg.flop_rate;
            Ok((grad, sq, seconds))
        }
        RankPipeline::Lowered { range, shard, .. } => {
            let mut bindings = shard.base_bindings.clone();
            for (j, tensor) in shard.w_tensors.iter().enumerate() {
                bindings.insert(tensor.clone(), vec![w[j]]);
            }
            let device = exec_device.expect("lowered pipeline implies an exec device");
            let (sinks, trace) = execute(&shard.graph, device, &bindings)?;
            let grad = shard
                .grad_tensors
                .iter()
                .map(|t| sinks[t].payload[0])
                .collect();
            // The loss term reuses the direct residual pass at the same
            // weights; only the gradient flows through the graph.
            let (_, sq) = shard_gradient(w, &data.samples[range.clone()]);
            Ok((grad, sq, trace.makespan))
        }
    }
}

/// Trains once per requested rank count (topologies drawn from `family`)
/// and tabulates wall-clock scaling from each run's first epoch.
pub fn scaling_run(
    model: &ToyModel,
    data: &Dataset,
    family: &TopologyFamily,
    rank_counts: &[u32],
    device: &DeviceConfig,
    cfg: &TrainConfig,
) -> Result<(Vec<ScalingRow>, Vec<TrainOutcome>), TrainError> {
    if rank_counts.is_empty() {
        return Err(TrainError::BadConfig("no rank counts requested".into()));
    }
    let mut entries = Vec::with_capacity(rank_counts.len());
    let mut outcomes = Vec::with_capacity(rank_counts.len());
    for &ranks in rank_counts {
        let topo = family.instantiate(ranks)?;
        let outcome = train(model, data, &topo, device, cfg)?;
        let nodes = ranks / topo.tiers()[0].group_size;
        entries.push((ranks, nodes, outcome.reports[0].wall_s));
        outcomes.push(outcome);
    }
    Ok((scaling_table(&entries)?, outcomes))
}

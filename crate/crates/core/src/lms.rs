//! Static graph rewriting that trades device memory for link traffic.
//!
//! The planner looks for tensors that are produced early and consumed late:
//! keeping such a tensor on the device for its whole span wastes capacity
//! that intermediate ops could use. The rewrite inserts a [`OpKind::SwapOut`]
//! right after the producer (moving the bits to a host-resident copy) and,
//! for each distant consumer, a [`OpKind::SwapIn`] that materializes a fresh
//! device tensor shortly before it is needed. The consumer is rewired to the
//! fresh tensor; payload bits are never touched, so sink outputs are bitwise
//! identical to the unmodified graph.
//!
//! Placement of the inserted ops in the canonical order is steered entirely
//! through node ids. The scheduler breaks ties lexicographically, and `'!'`
//! sorts before every alphanumeric byte, so an op named `"{anchor}!..."`
//! runs immediately after `anchor` once its data dependencies allow. Swap-outs
//! are named after the producer; swap-ins are named after — and control-depend
//! on — an *anchor* op `prefetch_distance` positions before the consumer,
//! which is how prefetching hides transfer latency behind compute.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::exec::{self, DeviceConfig, ExecError};
use crate::graph::{self, Graph, GraphError, OpKind, OpNode, Placement, TensorSpec};

/// A tensor worth considering for swapping, with where it lives in the
/// canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapCandidate {
    pub tensor_id: String,
    pub nbytes: u64,
    /// Step of the producer in the canonical order of the original graph.
    pub producer_step: usize,
    /// Device compute consumers further than the threshold from the producer.
    pub distant_consumers: Vec<ConsumerAt>,
    /// `last_step - first_step` of the tensor's liveness interval.
    pub span: usize,
}

/// A consumer op and its step in the canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsumerAt {
    pub op_id: String,
    pub step: usize,
}

/// One rewiring decision: serve `consumer`'s use of `tensor` through a swap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapEntry {
    pub tensor: String,
    pub consumer: String,
    /// How many canonical-order positions before the consumer the swap-in is
    /// anchored. Zero means "immediately before the consumer".
    #[serde(default)]
    pub prefetch_distance: usize,
}

/// A full rewrite plan. Entries for the same tensor share one swap-out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SwapPlan {
    pub entries: Vec<SwapEntry>,
    /// The distance threshold the entries were selected under, kept for
    /// reporting.
    #[serde(default)]
    pub threshold: usize,
}

impl SwapPlan {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Planner knobs as they appear in scenario files and CLI flags: the device
/// budget to plan for plus the candidate threshold and prefetch distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmsSettings {
    pub capacity: u64,
    #[serde(default = "default_threshold")]
    pub threshold: usize,
    #[serde(default)]
    pub prefetch_distance: usize,
}

fn default_threshold() -> usize {
    2
}

impl LmsSettings {
    pub fn new(capacity: u64) -> Self {
        LmsSettings { capacity, threshold: default_threshold(), prefetch_distance: 0 }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("plan entry targets missing edge: tensor '{tensor}' into op '{consumer}'")]
    PlanTargetMissing { tensor: String, consumer: String },
    #[error("tensor '{tensor}' into op '{consumer}' cannot be swapped: {reason}")]
    NotSwappable { tensor: String, consumer: String, reason: &'static str },
    #[error("duplicate plan entry for tensor '{tensor}' into op '{consumer}'")]
    DuplicateEntry { tensor: String, consumer: String },
    #[error(
        "prefetch distance {distance} for tensor '{tensor}' into op '{consumer}' reaches \
         behind the producer"
    )]
    WouldCreateCycle { tensor: String, consumer: String, distance: usize },
    #[error("no swap plan fits capacity {capacity}: best achievable peak is {achieved} bytes")]
    CannotFit { capacity: u64, achieved: u64 },
}

/// Finds device-resident tensors with at least one device compute consumer
/// whose step distance from the producer exceeds `threshold`.
///
/// Candidates are sorted by descending size, then ascending id, so callers
/// get a deterministic "biggest first" view.
pub fn find_swap_candidates(
    graph: &Graph,
    threshold: usize,
) -> Result<Vec<SwapCandidate>, GraphError> {
    graph::validate(graph)?;
    let order = graph::topo_order(graph)?;
    let liveness = graph::liveness(graph, &order)?;
    let step_of: BTreeMap<&str, usize> =
        order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let producers = graph.producers();
    let consumers = graph.consumers();

    let mut out = Vec::new();
    for tensor in &graph.tensors {
        let producer = producers[tensor.id.as_str()];
        if !producer.placement.is_device() {
            continue;
        }
        let producer_step = step_of[producer.id.as_str()];
        let mut distant: Vec<ConsumerAt> = consumers
            .get(tensor.id.as_str())
            .map(|ops| ops.as_slice())
            .unwrap_or(&[])
            .iter()
            .filter(|op| matches!(op.kind, OpKind::Compute(_)) && op.placement.is_device())
            .map(|op| ConsumerAt { op_id: op.id.clone(), step: step_of[op.id.as_str()] })
            .filter(|c| c.step - producer_step > threshold)
            .collect();
        if distant.is_empty() {
            continue;
        }
        distant.sort_by(|a, b| a.step.cmp(&b.step).then_with(|| a.op_id.cmp(&b.op_id)));
        distant.dedup();
        let span = liveness.span(&tensor.id).expect("liveness covers tensors").span();
        out.push(SwapCandidate {
            tensor_id: tensor.id.clone(),
            nbytes: tensor.nbytes,
            producer_step,
            distant_consumers: distant,
            span,
        });
    }
    out.sort_by(|a, b| b.nbytes.cmp(&a.nbytes).then_with(|| a.tensor_id.cmp(&b.tensor_id)));
    Ok(out)
}

fn unique_id(mut candidate: String, taken: &BTreeSet<String>) -> String {
    while taken.contains(&candidate) {
        candidate.push('~');
    }
    candidate
}

/// Applies a plan to a graph, returning the rewritten copy.
///
/// For every distinct tensor in the plan one swap-out is inserted right
/// after the producer; for every entry one swap-in is inserted at the
/// anchor position `prefetch_distance` steps before the consumer, and the
/// consumer's input is rewired to the swap-in's fresh tensor. An empty plan
/// returns a byte-for-byte identical graph.
pub fn insert_swaps(graph: &Graph, plan: &SwapPlan) -> Result<Graph, PlanError> {
    graph::validate(graph)?;
    let order = graph::topo_order(graph)?;
    let step_of: BTreeMap<&str, usize> =
        order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    let mut rewritten = graph.clone();
    let mut op_ids: BTreeSet<String> = rewritten.ops.iter().map(|o| o.id.clone()).collect();
    let mut tensor_ids: BTreeSet<String> =
        rewritten.tensors.iter().map(|t| t.id.clone()).collect();
    let spec_of: BTreeMap<String, TensorSpec> =
        graph.tensors.iter().map(|t| (t.id.clone(), t.clone())).collect();
    let producer_of: BTreeMap<String, (String, Placement)> = graph
        .producers()
        .into_iter()
        .map(|(t, op)| (t.to_string(), (op.id.clone(), op.placement)))
        .collect();

    // Host copies created so far: tensor id -> host tensor id.
    let mut host_copy: BTreeMap<String, String> = BTreeMap::new();
    let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();

    for entry in &plan.entries {
        if !seen.insert((entry.tensor.as_str(), entry.consumer.as_str())) {
            return Err(PlanError::DuplicateEntry {
                tensor: entry.tensor.clone(),
                consumer: entry.consumer.clone(),
            });
        }
        let missing = || PlanError::PlanTargetMissing {
            tensor: entry.tensor.clone(),
            consumer: entry.consumer.clone(),
        };
        let not_swappable = |reason| PlanError::NotSwappable {
            tensor: entry.tensor.clone(),
            consumer: entry.consumer.clone(),
            reason,
        };
        let (producer_id, producer_placement) =
            producer_of.get(&entry.tensor).ok_or_else(missing)?;
        let consumer = graph.op(&entry.consumer).ok_or_else(missing)?;
        if !consumer.inputs.iter().any(|t| t == &entry.tensor) {
            return Err(missing());
        }
        if !matches!(consumer.kind, OpKind::Compute(_)) {
            return Err(not_swappable("consumer is not a compute op"));
        }
        let consumer_device = match consumer.placement {
            Placement::Device(d) => d,
            Placement::Host => return Err(not_swappable("consumer is host-placed")),
        };
        if !producer_placement.is_device() {
            return Err(not_swappable("tensor is already host-resident"));
        }

        let producer_step = step_of[producer_id.as_str()];
        let consumer_step = step_of[entry.consumer.as_str()];
        if entry.prefetch_distance >= consumer_step - producer_step {
            return Err(PlanError::WouldCreateCycle {
                tensor: entry.tensor.clone(),
                consumer: entry.consumer.clone(),
                distance: entry.prefetch_distance,
            });
        }

        let spec = &spec_of[&entry.tensor];
        // One shared swap-out (and host copy) per tensor.
        let host_tensor = match host_copy.get(&entry.tensor) {
            Some(existing) => existing.clone(),
            None => {
                let host_tensor =
                    unique_id(format!("{}!host", entry.tensor), &tensor_ids);
                tensor_ids.insert(host_tensor.clone());
                rewritten.tensors.push(TensorSpec {
                    id: host_tensor.clone(),
                    nbytes: spec.nbytes,
                    dtype_width: spec.dtype_width,
                });
                let so_id =
                    unique_id(format!("{}!so:{}", producer_id, entry.tensor), &op_ids);
                op_ids.insert(so_id.clone());
                rewritten.ops.push(
                    OpNode::new(&so_id, OpKind::SwapOut)
                        .with_inputs([entry.tensor.as_str()])
                        .with_outputs([host_tensor.as_str()])
                        .with_placement(Placement::Host),
                );
                host_copy.insert(entry.tensor.clone(), host_tensor.clone());
                host_tensor
            }
        };

        let anchor = &order[consumer_step - 1 - entry.prefetch_distance];
        let fresh_tensor = unique_id(
            format!("{}!in:{}", entry.tensor, entry.consumer),
            &tensor_ids,
        );
        tensor_ids.insert(fresh_tensor.clone());
        rewritten.tensors.push(TensorSpec {
            id: fresh_tensor.clone(),
            nbytes: spec.nbytes,
            dtype_width: spec.dtype_width,
        });
        let si_id = unique_id(
            format!("{}!si:{}:{}", anchor, entry.tensor, entry.consumer),
            &op_ids,
        );
        op_ids.insert(si_id.clone());
        rewritten.ops.push(
            OpNode::new(&si_id, OpKind::SwapIn)
                .with_inputs([host_tensor.as_str()])
                .with_outputs([fresh_tensor.as_str()])
                .with_placement(Placement::Device(consumer_device))
                .with_control_dep(anchor),
        );

        let consumer_op = rewritten
            .ops
            .iter_mut()
            .find(|o| o.id == entry.consumer)
            .expect("consumer exists in the copy");
        for input in consumer_op.inputs.iter_mut() {
            if *input == entry.tensor {
                *input = fresh_tensor.clone();
            }
        }
    }

    graph::validate(&rewritten)?;
    Ok(rewritten)
}

/// Greedily builds a plan that brings the peak device footprint at or below
/// `capacity`.
///
/// While the simulated peak exceeds the budget, the candidate with the
/// largest `nbytes * span` product not yet in the plan is added (all of its
/// distant consumers at once; ties broken by id), and the first prefix that
/// fits is returned. A single swap often cannot lower the peak by itself —
/// neighbouring tensors still pin the high-water step — so accumulation
/// continues through plateaus. On failure the error reports the best peak
/// any prefix reached, which is always attainable by re-planning at that
/// budget. The requested prefetch distance is clamped per-entry to the
/// longest distance the dependency structure allows.
pub fn plan_for_capacity(
    graph: &Graph,
    capacity: u64,
    threshold: usize,
    prefetch_distance: usize,
) -> Result<SwapPlan, PlanError> {
    let base = exec::memory_profile(graph)?;
    if base.peak_device_bytes <= capacity {
        return Ok(SwapPlan { entries: Vec::new(), threshold });
    }

    let mut candidates = find_swap_candidates(graph, threshold)?;
    candidates.sort_by(|a, b| {
        let score_a = a.nbytes * a.span as u64;
        let score_b = b.nbytes * b.span as u64;
        score_b.cmp(&score_a).then_with(|| a.tensor_id.cmp(&b.tensor_id))
    });

    let mut plan = SwapPlan { entries: Vec::new(), threshold };
    let mut best_peak = base.peak_device_bytes;
    for candidate in &candidates {
        for consumer in &candidate.distant_consumers {
            let distance = consumer.step - candidate.producer_step;
            plan.entries.push(SwapEntry {
                tensor: candidate.tensor_id.clone(),
                consumer: consumer.op_id.clone(),
                prefetch_distance: prefetch_distance.min(distance - 1),
            });
        }
        let peak = exec::memory_profile(&insert_swaps(graph, &plan)?)?.peak_device_bytes;
        best_peak = best_peak.min(peak);
        if peak <= capacity {
            return Ok(plan);
        }
    }
    Err(PlanError::CannotFit { capacity, achieved: best_peak })
}

/// Executes both graphs and reports whether every sink observed bitwise
/// identical payloads.
///
/// The original graph is run with capacity relaxed to its own peak (it is
/// the graph that, by assumption, does not fit), while the rewritten graph
/// must run within `cfg` as given.
pub fn verify_equivalence(
    original: &Graph,
    rewritten: &Graph,
    cfg: &DeviceConfig,
    bindings: &BTreeMap<String, Vec<f64>>,
) -> Result<bool, ExecError> {
    let base_profile = exec::memory_profile(original)?;
    let relaxed = cfg.with_capacity(cfg.capacity().max(base_profile.peak_device_bytes))?;
    let (base_out, _) = exec::execute(original, &relaxed, bindings)?;
    let (new_out, _) = exec::execute(rewritten, cfg, bindings)?;
    Ok(base_out == new_out)
}

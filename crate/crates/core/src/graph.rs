//! Static dataflow graphs: tensor and op declarations, structural validation,
//! deterministic topological ordering, and tensor liveness.
//!
//! A graph never changes after construction; the swap planner produces new
//! graphs instead of mutating. All id collections are ordered (`BTreeMap` /
//! `BTreeSet`) and topological ties break on ascending lexicographic op id, so
//! every derived artifact is a pure function of the graph value.

use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use thiserror::Error;

/// Position of an op in a topological order.
pub type Step = usize;

// ─────────────────────────── Types ───────────────────────────

/// Declared storage for one tensor. Payload element count is
/// `nbytes / dtype_width`; the producer is the unique op listing the tensor in
/// its `outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub id: String,
    pub nbytes: u64,
    #[serde(default = "default_dtype_width")]
    pub dtype_width: u32,
}

fn default_dtype_width() -> u32 {
    4
}

impl TensorSpec {
    pub fn new(id: impl Into<String>, nbytes: u64) -> Self {
        TensorSpec { id: id.into(), nbytes, dtype_width: default_dtype_width() }
    }

    /// Number of payload elements held by this tensor.
    pub fn elems(&self) -> usize {
        (self.nbytes / u64::from(self.dtype_width)) as usize
    }
}

/// Where an op runs and where its outputs live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Accelerator with the given index; outputs charge device memory.
    Device(u32),
    /// Host; outputs charge host memory.
    Host,
}

impl Placement {
    pub fn is_device(self) -> bool {
        matches!(self, Placement::Device(_))
    }
}

/// Arithmetic performed by a `Compute` op. The set is intentionally small:
/// just enough for bit-exact equivalence checks of rewritten graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeFn {
    /// Elementwise sum of all inputs, accumulated in input order.
    Add,
    /// Elementwise multiply of the single input by a constant.
    Scale(f64),
    /// Sum of the single input's elements, reduced to a one-element tensor.
    SumReduce,
    /// Bit-exact copy of the single input.
    Identity,
}

/// Node kind. Swap nodes are inserted by the planner; `Source` tensors are
/// bound from caller-provided values and `Sink` inputs are the graph results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Source,
    Sink,
    SwapOut,
    SwapIn,
    Compute(ComputeFn),
}

impl OpKind {
    /// Short name used in trace rows.
    pub fn label(&self) -> &'static str {
        match self {
            OpKind::Source => "source",
            OpKind::Sink => "sink",
            OpKind::SwapOut => "swap_out",
            OpKind::SwapIn => "swap_in",
            OpKind::Compute(_) => "compute",
        }
    }
}

/// One node of the dataflow graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpNode {
    pub id: String,
    pub kind: OpKind,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default = "default_placement")]
    pub placement: Placement,
    /// Seconds of compute-stream occupancy; 0 for swap/source/sink nodes.
    #[serde(default)]
    pub compute_cost: f64,
    /// Extra ordering edges (dep op must finish before this op starts).
    #[serde(default)]
    pub control_deps: BTreeSet<String>,
}

fn default_placement() -> Placement {
    Placement::Device(0)
}

impl OpNode {
    pub fn new(id: impl Into<String>, kind: OpKind) -> Self {
        OpNode {
            id: id.into(),
            kind,
            inputs: Vec::new(),
            outputs: Vec::new(),
            placement: default_placement(),
            compute_cost: 0.0,
            control_deps: BTreeSet::new(),
        }
    }

    pub fn with_inputs<S: AsRef<str>>(mut self, inputs: impl IntoIterator<Item = S>) -> Self {
        self.inputs = inputs.into_iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn with_outputs<S: AsRef<str>>(mut self, outputs: impl IntoIterator<Item = S>) -> Self {
        self.outputs = outputs.into_iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    pub fn with_cost(mut self, compute_cost: f64) -> Self {
        self.compute_cost = compute_cost;
        self
    }

    pub fn with_control_dep(mut self, dep: impl Into<String>) -> Self {
        self.control_deps.insert(dep.into());
        self
    }
}

/// An immutable dataflow graph: ops plus declared tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Graph {
    pub ops: Vec<OpNode>,
    pub tensors: Vec<TensorSpec>,
}

/// Per-tensor live interval over a topological order: `first_step` is the
/// producer's position, `last_step` the latest consumer's (or the producer's
/// own, for tensors nobody consumes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorSpan {
    pub first_step: Step,
    pub last_step: Step,
}

impl TensorSpan {
    /// Steps between production and final use.
    pub fn span(&self) -> usize {
        self.last_step - self.first_step
    }
}

/// Liveness of every tensor in a graph under one topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct LivenessTable {
    spans: BTreeMap<String, TensorSpan>,
}

impl LivenessTable {
    pub fn span(&self, tensor: &str) -> Option<TensorSpan> {
        self.spans.get(tensor).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TensorSpan)> {
        self.spans.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

// ─────────────────────────── Errors ───────────────────────────

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("duplicate op id `{0}`")]
    DuplicateOpId(String),
    #[error("duplicate tensor id `{0}`")]
    DuplicateTensorId(String),
    #[error("tensor `{0}` is referenced but never declared")]
    DanglingTensor(String),
    #[error("tensor `{0}` is declared but no op produces it")]
    MissingProducer(String),
    #[error("tensor `{tensor}` is produced by both `{first}` and `{second}`")]
    MultipleProducers { tensor: String, first: String, second: String },
    #[error("op `{op}` names unknown op `{dep}` as a control dependency")]
    UnknownControlDep { op: String, dep: String },
    #[error("tensor `{tensor}`: nbytes {nbytes} is not a positive multiple of dtype_width {dtype_width}")]
    InvalidSize { tensor: String, nbytes: u64, dtype_width: u32 },
    #[error("op `{op}`: {reason}")]
    ArityViolation { op: String, reason: String },
    #[error("device-placed compute op `{op}` consumes host-resident tensor `{tensor}`")]
    HostInputToDeviceCompute { op: String, tensor: String },
    #[error("cycle detected through op `{0}`")]
    CycleDetected(String),
    #[error("order mismatch: {0}")]
    OrderMismatch(String),
    #[error("graph JSON rejected: {0}")]
    Parse(String),
}

// ─────────────────────────── Construction ───────────────────────────

impl Graph {
    pub fn new(ops: Vec<OpNode>, tensors: Vec<TensorSpec>) -> Graph {
        Graph { ops, tensors }
    }

    /// Parses the on-disk JSON form (`{"ops": [...], "tensors": [...]}`).
    /// Unknown keys are rejected. The result is parsed, not yet validated.
    pub fn from_json(text: &str) -> Result<Graph, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))
    }

    /// Serializes to the on-disk JSON form. Field order and formatting are
    /// deterministic, so equal graphs serialize bit-identically.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("graph serializes");
        out.push('\n');
        out
    }

    pub fn op(&self, id: &str) -> Option<&OpNode> {
        self.ops.iter().find(|o| o.id == id)
    }

    pub fn tensor(&self, id: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.id == id)
    }

    /// Map from tensor id to the id of the op producing it. Duplicate
    /// producers are resolved by first occurrence; `validate` rejects them.
    pub fn producers(&self) -> BTreeMap<&str, &OpNode> {
        let mut map = BTreeMap::new();
        for op in &self.ops {
            for out in &op.outputs {
                map.entry(out.as_str()).or_insert(op);
            }
        }
        map
    }

    /// Map from tensor id to the ops consuming it, in declaration order.
    pub fn consumers(&self) -> BTreeMap<&str, Vec<&OpNode>> {
        let mut map: BTreeMap<&str, Vec<&OpNode>> = BTreeMap::new();
        for t in &self.tensors {
            map.insert(t.id.as_str(), Vec::new());
        }
        for op in &self.ops {
            for input in &op.inputs {
                map.entry(input.as_str()).or_default().push(op);
            }
        }
        map
    }

    /// True when the tensor's producer is device-placed (the tensor occupies
    /// device memory while live).
    pub fn is_device_resident(&self, tensor: &str) -> bool {
        self.producers().get(tensor).map(|op| op.placement.is_device()).unwrap_or(false)
    }
}

// ─────────────────────────── Validation ───────────────────────────

/// Checks every structural invariant: unique ids, single producers, no
/// dangling references, swap arity, device-input rules, and acyclicity.
pub fn validate(graph: &Graph) -> Result<(), GraphError> {
    let mut op_ids = BTreeSet::new();
    for op in &graph.ops {
        if !op_ids.insert(op.id.as_str()) {
            return Err(GraphError::DuplicateOpId(op.id.clone()));
        }
    }
    let mut tensor_ids = BTreeSet::new();
    for t in &graph.tensors {
        if !tensor_ids.insert(t.id.as_str()) {
            return Err(GraphError::DuplicateTensorId(t.id.clone()));
        }
        if t.nbytes == 0 || t.dtype_width == 0 || t.nbytes % u64::from(t.dtype_width) != 0 {
            return Err(GraphError::InvalidSize {
                tensor: t.id.clone(),
                nbytes: t.nbytes,
                dtype_width: t.dtype_width,
            });
        }
    }

    // Reference integrity and producer uniqueness.
    let mut producer_of: BTreeMap<&str, &str> = BTreeMap::new();
    for op in &graph.ops {
        for out in &op.outputs {
            if !tensor_ids.contains(out.as_str()) {
                return Err(GraphError::DanglingTensor(out.clone()));
            }
            if let Some(first) = producer_of.insert(out.as_str(), op.id.as_str()) {
                return Err(GraphError::MultipleProducers {
                    tensor: out.clone(),
                    first: first.to_string(),
                    second: op.id.clone(),
                });
            }
        }
        for input in &op.inputs {
            if !tensor_ids.contains(input.as_str()) {
                return Err(GraphError::DanglingTensor(input.clone()));
            }
        }
        for dep in &op.control_deps {
            if graph.op(dep).is_none() {
                return Err(GraphError::UnknownControlDep { op: op.id.clone(), dep: dep.clone() });
            }
        }
    }
    for t in &graph.tensors {
        if !producer_of.contains_key(t.id.as_str()) {
            return Err(GraphError::MissingProducer(t.id.clone()));
        }
    }
    for op in &graph.ops {
        for input in &op.inputs {
            if producer_of.get(input.as_str()) == Some(&op.id.as_str()) {
                return Err(GraphError::ArityViolation {
                    op: op.id.clone(),
                    reason: format!("consumes its own output `{input}`"),
                });
            }
        }
    }

    // Kind-specific arity and placement rules.
    for op in &graph.ops {
        let arity_err = |reason: &str| GraphError::ArityViolation {
            op: op.id.clone(),
            reason: reason.to_string(),
        };
        match op.kind {
            OpKind::Source => {
                if !op.inputs.is_empty() {
                    return Err(arity_err("source ops take no inputs"));
                }
                if op.outputs.is_empty() {
                    return Err(arity_err("source ops must produce at least one tensor"));
                }
            }
            OpKind::Sink => {
                if !op.outputs.is_empty() {
                    return Err(arity_err("sink ops produce no tensors"));
                }
                if op.inputs.is_empty() {
                    return Err(arity_err("sink ops must consume at least one tensor"));
                }
            }
            OpKind::SwapOut => {
                if op.inputs.len() != 1 || op.outputs.len() != 1 {
                    return Err(arity_err("swap ops move exactly one tensor"));
                }
                if op.placement != Placement::Host {
                    return Err(arity_err("swap-out ops must be host-placed"));
                }
            }
            OpKind::SwapIn => {
                if op.inputs.len() != 1 || op.outputs.len() != 1 {
                    return Err(arity_err("swap ops move exactly one tensor"));
                }
                if !op.placement.is_device() {
                    return Err(arity_err("swap-in ops must be device-placed"));
                }
            }
            OpKind::Compute(ref f) => {
                let single_input = !matches!(f, ComputeFn::Add);
                if op.inputs.is_empty() {
                    return Err(arity_err("compute ops must consume at least one tensor"));
                }
                if single_input && op.inputs.len() != 1 {
                    return Err(arity_err("scale/sum_reduce/identity take exactly one input"));
                }
                if op.outputs.len() != 1 {
                    return Err(arity_err("compute ops produce exactly one tensor"));
                }
            }
        }
    }

    // Device-placed compute may only read device-resident tensors; swaps read
    // from the side they move away from.
    let placement_of_producer: BTreeMap<&str, Placement> = graph
        .ops
        .iter()
        .flat_map(|op| op.outputs.iter().map(move |t| (t.as_str(), op.placement)))
        .collect();
    for op in &graph.ops {
        for input in &op.inputs {
            let resident = placement_of_producer[input.as_str()];
            match op.kind {
                OpKind::Compute(_) if op.placement.is_device() && !resident.is_device() => {
                    return Err(GraphError::HostInputToDeviceCompute {
                        op: op.id.clone(),
                        tensor: input.clone(),
                    });
                }
                OpKind::SwapOut if !resident.is_device() => {
                    return Err(GraphError::ArityViolation {
                        op: op.id.clone(),
                        reason: format!("swap-out input `{input}` is not device-resident"),
                    });
                }
                OpKind::SwapIn if resident.is_device() => {
                    return Err(GraphError::ArityViolation {
                        op: op.id.clone(),
                        reason: format!("swap-in input `{input}` is not host-resident"),
                    });
                }
                _ => {}
            }
        }
    }

    topo_order(graph).map(|_| ())
}

// ─────────────────────────── Topological order ───────────────────────────

/// Predecessor op ids of `op`: producers of its inputs plus control deps.
pub(crate) fn preds<'a>(producers: &BTreeMap<&'a str, &'a OpNode>, op: &'a OpNode) -> BTreeSet<&'a str> {
    let mut set: BTreeSet<&str> = op.control_deps.iter().map(String::as_str).collect();
    for input in &op.inputs {
        if let Some(p) = producers.get(input.as_str()) {
            set.insert(p.id.as_str());
        }
    }
    set.remove(op.id.as_str());
    set
}

/// Deterministic topological order: Kahn's algorithm with ties broken on
/// ascending lexicographic op id. Pure function of the graph; the order does
/// not depend on op declaration order.
pub fn topo_order(graph: &Graph) -> Result<Vec<String>, GraphError> {
    let producers = graph.producers();
    let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
    let mut succs: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for op in &graph.ops {
        let ps = preds(&producers, op);
        indegree.insert(op.id.as_str(), ps.len());
        for p in ps {
            succs.entry(p).or_default().push(op.id.as_str());
        }
    }

    let mut ready: BinaryHeap<Reverse<&str>> = indegree
        .iter()
        .filter(|(_, deg)| **deg == 0)
        .map(|(id, _)| Reverse(*id))
        .collect();
    let mut order = Vec::with_capacity(graph.ops.len());
    while let Some(Reverse(id)) = ready.pop() {
        order.push(id.to_string());
        for succ in succs.get(id).into_iter().flatten() {
            let deg = indegree.get_mut(succ).expect("successor registered");
            *deg -= 1;
            if *deg == 0 {
                ready.push(Reverse(succ));
            }
        }
    }

    if order.len() != graph.ops.len() {
        let emitted: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        return Err(GraphError::CycleDetected(find_cycle_member(graph, &producers, &emitted)));
    }
    Ok(order)
}

/// Walks unsatisfied predecessors among unemitted ops until one repeats;
/// the repeated op necessarily lies on a cycle.
fn find_cycle_member(
    graph: &Graph,
    producers: &BTreeMap<&str, &OpNode>,
    emitted: &BTreeSet<&str>,
) -> String {
    let remaining: BTreeSet<&str> = graph
        .ops
        .iter()
        .map(|o| o.id.as_str())
        .filter(|id| !emitted.contains(id))
        .collect();
    let start = *remaining.iter().next().expect("cycle implies unemitted ops");
    let mut seen = BTreeSet::new();
    let mut cur = start;
    loop {
        if !seen.insert(cur) {
            return cur.to_string();
        }
        let op = graph.op(cur).expect("op exists");
        cur = *preds(producers, op)
            .iter()
            .find(|p| remaining.contains(*p))
            .expect("unemitted op has an unemitted predecessor");
    }
}

// ─────────────────────────── Liveness ───────────────────────────

/// Computes per-tensor live intervals over `order`. The order must cover each
/// op exactly once and respect every data/control edge.
pub fn liveness(graph: &Graph, order: &[String]) -> Result<LivenessTable, GraphError> {
    let mut pos: BTreeMap<&str, Step> = BTreeMap::new();
    for (step, id) in order.iter().enumerate() {
        if graph.op(id).is_none() {
            return Err(GraphError::OrderMismatch(format!("order names unknown op `{id}`")));
        }
        if pos.insert(id.as_str(), step).is_some() {
            return Err(GraphError::OrderMismatch(format!("order repeats op `{id}`")));
        }
    }
    if pos.len() != graph.ops.len() {
        return Err(GraphError::OrderMismatch(format!(
            "order covers {} of {} ops",
            pos.len(),
            graph.ops.len()
        )));
    }
    let producers = graph.producers();
    for op in &graph.ops {
        let my_pos = pos[op.id.as_str()];
        for p in preds(&producers, op) {
            if pos[p] >= my_pos {
                return Err(GraphError::OrderMismatch(format!(
                    "`{p}` must precede `{}` but does not",
                    op.id
                )));
            }
        }
    }

    let mut spans = BTreeMap::new();
    for t in &graph.tensors {
        let producer = producers.get(t.id.as_str()).ok_or_else(|| {
            GraphError::MissingProducer(t.id.clone())
        })?;
        let first_step = pos[producer.id.as_str()];
        spans.insert(t.id.clone(), TensorSpan { first_step, last_step: first_step });
    }
    for op in &graph.ops {
        let my_pos = pos[op.id.as_str()];
        for input in &op.inputs {
            let span = spans
                .get_mut(input.as_str())
                .ok_or_else(|| GraphError::DanglingTensor(input.clone()))?;
            span.last_step = span.last_step.max(my_pos);
        }
    }
    Ok(LivenessTable { spans })
}

// ─────────────────────────── Tests ───────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(id: &str, nbytes: u64) -> TensorSpec {
        TensorSpec::new(id, nbytes)
    }

    fn compute(id: &str, inputs: &[&str], outputs: &[&str]) -> OpNode {
        OpNode::new(id, OpKind::Compute(ComputeFn::Add)).with_inputs(inputs).with_outputs(outputs)
    }

    fn source(id: &str, outputs: &[&str]) -> OpNode {
        OpNode::new(id, OpKind::Source).with_outputs(outputs)
    }

    /// a → {b, c} → d over tensors ta/tb/tc.
    fn diamond() -> Graph {
        Graph::new(
            vec![
                compute("d", &["tb", "tc"], &["td"]),
                compute("b", &["ta"], &["tb"]),
                compute("c", &["ta"], &["tc"]),
                source("a", &["ta"]),
            ],
            vec![tensor("ta", 8), tensor("tb", 8), tensor("tc", 8), tensor("td", 8)],
        )
    }

    #[test]
    fn validate_accepts_diamond() {
        assert_eq!(validate(&diamond()), Ok(()));
    }

    #[test]
    fn validate_names_an_op_on_a_control_cycle() {
        let g = Graph::new(
            vec![
                source("a", &["ta"]),
                compute("x", &["ta"], &["tx"]).with_control_dep("y"),
                compute("y", &["ta"], &["ty"]).with_control_dep("x"),
            ],
            vec![tensor("ta", 8), tensor("tx", 8), tensor("ty", 8)],
        );
        match validate(&g) {
            Err(GraphError::CycleDetected(op)) => assert!(op == "x" || op == "y"),
            other => panic!("expected CycleDetected, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_undeclared_tensor() {
        let g = Graph::new(
            vec![source("a", &["ta"]), compute("b", &["ghost"], &["tb"])],
            vec![tensor("ta", 8), tensor("tb", 8)],
        );
        assert_eq!(validate(&g), Err(GraphError::DanglingTensor("ghost".into())));
    }

    #[test]
    fn validate_rejects_double_producer() {
        let g = Graph::new(
            vec![source("a", &["ta"]), source("b", &["ta"])],
            vec![tensor("ta", 8)],
        );
        assert!(matches!(validate(&g), Err(GraphError::MultipleProducers { .. })));
    }

    #[test]
    fn validate_rejects_size_not_multiple_of_width() {
        let g = Graph::new(vec![source("a", &["ta"])], vec![tensor("ta", 7)]);
        assert!(matches!(validate(&g), Err(GraphError::InvalidSize { .. })));
    }

    #[test]
    fn validate_rejects_host_input_to_device_compute() {
        let g = Graph::new(
            vec![
                source("a", &["ta"]).with_placement(Placement::Host),
                compute("b", &["ta"], &["tb"]),
            ],
            vec![tensor("ta", 8), tensor("tb", 8)],
        );
        assert!(matches!(validate(&g), Err(GraphError::HostInputToDeviceCompute { .. })));
    }

    #[test]
    fn topo_order_breaks_ties_lexicographically() {
        // b and c are both ready after a; b must come first by id.
        assert_eq!(topo_order(&diamond()).unwrap(), vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn topo_order_follows_edges_against_id_order() {
        // Chain z → y → x → w → v: ids prefer v first, edges forbid it.
        let g = Graph::new(
            vec![
                compute("v", &["tw"], &["tv"]),
                compute("w", &["tx"], &["tw"]),
                compute("x", &["ty"], &["tx"]),
                compute("y", &["tz"], &["ty"]),
                source("z", &["tz"]),
            ],
            vec![tensor("tz", 8), tensor("ty", 8), tensor("tx", 8), tensor("tw", 8), tensor("tv", 8)],
        );
        assert_eq!(topo_order(&g).unwrap(), vec!["z", "y", "x", "w", "v"]);
    }

    #[test]
    fn topo_order_ignores_declaration_order() {
        let mut g = diamond();
        let order_a = topo_order(&g).unwrap();
        g.ops.reverse();
        assert_eq!(topo_order(&g).unwrap(), order_a);
    }

    #[test]
    fn liveness_matches_hand_trace_on_chain() {
        // a produces ta(100); b consumes ta, produces tb(50); c consumes tb,
        // produces tc(25). Spans: ta [0,1], tb [1,2], tc [2,2].
        let g = Graph::new(
            vec![
                source("a", &["ta"]),
                compute("b", &["ta"], &["tb"]),
                compute("c", &["tb"], &["tc"]),
            ],
            vec![tensor("ta", 100), tensor("tb", 52), tensor("tc", 24)],
        );
        let order = topo_order(&g).unwrap();
        let live = liveness(&g, &order).unwrap();
        assert_eq!(live.span("ta").unwrap(), TensorSpan { first_step: 0, last_step: 1 });
        assert_eq!(live.span("tb").unwrap(), TensorSpan { first_step: 1, last_step: 2 });
        // No consumer ⇒ last_step = first_step.
        assert_eq!(live.span("tc").unwrap(), TensorSpan { first_step: 2, last_step: 2 });
    }

    #[test]
    fn liveness_on_u_shaped_graph_matches_consumer_scan() {
        // Encoder e0..e4 chain, decoder d4..d0 chain; decoder dK consumes both
        // the previous decoder tensor and encoder tensor K (skip edge).
        let mut ops = vec![source("e0", &["s0"])];
        let mut tensors = vec![tensor("s0", 8)];
        for k in 1..5 {
            ops.push(compute(&format!("e{k}"), &[&format!("s{}", k - 1)], &[&format!("s{k}")]));
            tensors.push(tensor(&format!("s{k}"), 8));
        }
        let mut prev = "s4".to_string();
        for k in (0..5).rev() {
            let out = format!("u{k}");
            ops.push(compute(&format!("m{k}"), &[prev.as_str(), &format!("s{k}")], &[&out]));
            tensors.push(tensor(&out, 8));
            prev = out;
        }
        let g = Graph::new(ops, tensors);
        validate(&g).unwrap();
        let order = topo_order(&g).unwrap();
        let live = liveness(&g, &order).unwrap();

        // Oracle: brute-force scan of producer/consumer positions.
        let pos: BTreeMap<&str, usize> =
            order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        for t in &g.tensors {
            let mut first = None;
            let mut last = None;
            for op in &g.ops {
                if op.outputs.contains(&t.id) {
                    first = Some(pos[op.id.as_str()]);
                }
                if op.inputs.contains(&t.id) {
                    last = Some(last.unwrap_or(0).max(pos[op.id.as_str()]));
                }
            }
            let first = first.unwrap();
            let expect = TensorSpan { first_step: first, last_step: last.unwrap_or(first) };
            assert_eq!(live.span(&t.id).unwrap(), expect, "tensor {}", t.id);
        }
        // Spot-check the skip tensor: s0 lives from step 0 to the last decoder.
        assert_eq!(live.span("s0").unwrap().first_step, 0);
        assert_eq!(live.span("s0").unwrap().last_step, pos["m0"]);
    }

    #[test]
    fn liveness_rejects_shuffled_order() {
        let g = diamond();
        let order = vec!["d".to_string(), "b".to_string(), "c".to_string(), "a".to_string()];
        assert!(matches!(liveness(&g, &order), Err(GraphError::OrderMismatch(_))));
    }

    #[test]
    fn liveness_rejects_incomplete_order() {
        let g = diamond();
        let order = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        assert!(matches!(liveness(&g, &order), Err(GraphError::OrderMismatch(_))));
    }

    #[test]
    fn json_round_trip_is_bit_identical_and_rejects_unknown_keys() {
        let g = diamond();
        let text = g.to_json();
        let back = Graph::from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), text);

        let bad = r#"{"ops": [], "tensors": [], "extra": 1}"#;
        assert!(matches!(Graph::from_json(bad), Err(GraphError::Parse(_))));
    }

    #[test]
    fn kind_and_placement_json_forms() {
        let op = OpNode::new("s", OpKind::Compute(ComputeFn::Scale(2.5)));
        let v = serde_json::to_value(&op).unwrap();
        assert_eq!(v["kind"], serde_json::json!({"compute": {"scale": 2.5}}));
        assert_eq!(v["placement"], serde_json::json!({"device": 0}));
        let host = OpNode::new("h", OpKind::SwapOut).with_placement(Placement::Host);
        let v = serde_json::to_value(&host).unwrap();
        assert_eq!(v["kind"], serde_json::json!("swap_out"));
        assert_eq!(v["placement"], serde_json::json!("host"));
    }
}

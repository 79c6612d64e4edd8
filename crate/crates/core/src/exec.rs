//! Deterministic simulated execution of tensor graphs.
//!
//! The executor walks a graph in its canonical topological order and layers
//! three orthogonal models on top of that single order:
//!
//! * **Memory accounting.** Each op allocates its output tensors in the pool
//!   named by its placement (one shared device pool, one host pool), and every
//!   tensor is freed immediately after the step of its last consumer. The
//!   peak is taken over the post-allocation, pre-free transient, so a value
//!   that dies at the very op that replaces it still counts twice during the
//!   handoff. Capacity checks happen at allocation time and abort execution
//!   with [`ExecError::DeviceOom`] / [`ExecError::HostOom`].
//! * **Timing.** Ops are serialized per stream: one compute stream per
//!   device, one host compute stream, and one transfer stream per direction
//!   (device-to-host, host-to-device). An op starts at the maximum of its
//!   predecessors' finish times and its stream's availability, so transfers
//!   overlap compute while same-direction transfers queue behind each other.
//!   Compute ops take their declared `compute_cost`; swaps take
//!   `link_latency + nbytes / bandwidth`; sources and sinks are free.
//! * **Values.** Payloads are `Vec<f64>` vectors moved through the graph with
//!   left-to-right fold semantics for n-ary ops, which pins the floating
//!   point rounding order and makes reruns bitwise identical.
//!
//! [`memory_profile`] runs only the first model, which is what the swap
//! planner needs: peak footprints without materializing any payloads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{self, ComputeFn, Graph, GraphError, OpKind, OpNode, Placement};

/// Simulated device and link parameters.
///
/// Bandwidths are in bytes per second, latency in seconds, capacities in
/// bytes. Construction through [`DeviceConfig::new`] or deserialization
/// validates that rates are positive, latency is non-negative and finite,
/// and the device pool is no larger than the host pool backing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DeviceConfigRaw", into = "DeviceConfigRaw")]
pub struct DeviceConfig {
    capacity: u64,
    host_capacity: u64,
    h2d_bandwidth: f64,
    d2h_bandwidth: f64,
    link_latency: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceConfigRaw {
    capacity: u64,
    host_capacity: u64,
    h2d_bandwidth: f64,
    d2h_bandwidth: f64,
    #[serde(default)]
    link_latency: f64,
}

impl TryFrom<DeviceConfigRaw> for DeviceConfig {
    type Error = ExecError;

    fn try_from(raw: DeviceConfigRaw) -> Result<Self, ExecError> {
        DeviceConfig::new(
            raw.capacity,
            raw.host_capacity,
            raw.h2d_bandwidth,
            raw.d2h_bandwidth,
            raw.link_latency,
        )
    }
}

impl From<DeviceConfig> for DeviceConfigRaw {
    fn from(cfg: DeviceConfig) -> Self {
        DeviceConfigRaw {
            capacity: cfg.capacity,
            host_capacity: cfg.host_capacity,
            h2d_bandwidth: cfg.h2d_bandwidth,
            d2h_bandwidth: cfg.d2h_bandwidth,
            link_latency: cfg.link_latency,
        }
    }
}

impl DeviceConfig {
    pub fn new(
        capacity: u64,
        host_capacity: u64,
        h2d_bandwidth: f64,
        d2h_bandwidth: f64,
        link_latency: f64,
    ) -> Result<Self, ExecError> {
        if capacity == 0 {
            return Err(ExecError::InvalidConfig("capacity must be positive"));
        }
        if host_capacity < capacity {
            return Err(ExecError::InvalidConfig(
                "host_capacity must be at least the device capacity",
            ));
        }
        if !(h2d_bandwidth.is_finite() && h2d_bandwidth > 0.0) {
            return Err(ExecError::InvalidConfig("h2d_bandwidth must be positive"));
        }
        if !(d2h_bandwidth.is_finite() && d2h_bandwidth > 0.0) {
            return Err(ExecError::InvalidConfig("d2h_bandwidth must be positive"));
        }
        if !(link_latency.is_finite() && link_latency >= 0.0) {
            return Err(ExecError::InvalidConfig(
                "link_latency must be finite and non-negative",
            ));
        }
        Ok(DeviceConfig {
            capacity,
            host_capacity,
            h2d_bandwidth,
            d2h_bandwidth,
            link_latency,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ExecError> {
        serde_json::from_str(text).map_err(|e| ExecError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("config serializes");
        out.push('\n');
        out
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn host_capacity(&self) -> u64 {
        self.host_capacity
    }

    pub fn h2d_bandwidth(&self) -> f64 {
        self.h2d_bandwidth
    }

    pub fn d2h_bandwidth(&self) -> f64 {
        self.d2h_bandwidth
    }

    pub fn link_latency(&self) -> f64 {
        self.link_latency
    }

    /// Returns a copy with a different device capacity, e.g. to probe how far
    /// a plan can shrink the footprint before execution stops fitting.
    pub fn with_capacity(&self, capacity: u64) -> Result<Self, ExecError> {
        DeviceConfig::new(
            capacity,
            self.host_capacity.max(capacity),
            self.h2d_bandwidth,
            self.d2h_bandwidth,
            self.link_latency,
        )
    }

    /// Models `sharers` tenants contending for the same physical link: both
    /// directions keep their latency but get `1/sharers` of the bandwidth.
    pub fn shared_bus(&self, sharers: u32) -> Result<Self, ExecError> {
        if sharers == 0 {
            return Err(ExecError::InvalidConfig("sharers must be positive"));
        }
        DeviceConfig::new(
            self.capacity,
            self.host_capacity,
            self.h2d_bandwidth / f64::from(sharers),
            self.d2h_bandwidth / f64::from(sharers),
            self.link_latency,
        )
    }
}

/// A materialized tensor payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Value {
    pub tensor_id: String,
    pub payload: Vec<f64>,
}

/// One scheduled op occurrence in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub op_id: String,
    pub kind: String,
    pub t_start: f64,
    pub t_end: f64,
    pub bytes_moved: u64,
    pub device_mem_after: u64,
}

/// Full execution record: per-op events plus footprint and makespan summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecTrace {
    pub events: Vec<TraceEvent>,
    pub peak_device_bytes: u64,
    pub peak_host_bytes: u64,
    pub makespan: f64,
}

impl ExecTrace {
    /// Renders the event list as CSV with a fixed header. Floats use plain
    /// decimal notation so the output diffs cleanly across runs.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["op_id", "kind", "t_start", "t_end", "bytes_moved", "device_mem_after"])
            .expect("csv header");
        for e in &self.events {
            w.write_record([
                e.op_id.as_str(),
                e.kind.as_str(),
                &format!("{}", e.t_start),
                &format!("{}", e.t_end),
                &format!("{}", e.bytes_moved),
                &format!("{}", e.device_mem_after),
            ])
            .expect("csv row");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("csv utf8")
    }

    /// JSON rendering: the same events plus a summary block.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("trace serializes");
        out.push('\n');
        out
    }
}

/// Peak footprints from a value-free dry run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryProfile {
    pub peak_device_bytes: u64,
    pub peak_host_bytes: u64,
}

/// Result of running the same graph under two link configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkComparison {
    pub fast: ExecTrace,
    pub slow: ExecTrace,
    /// `slow.makespan / fast.makespan`.
    pub slowdown: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExecError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("device out of memory at op '{op_id}': needs {needed} bytes, capacity {capacity}")]
    DeviceOom { op_id: String, needed: u64, capacity: u64 },
    #[error("host out of memory at op '{op_id}': needs {needed} bytes, capacity {capacity}")]
    HostOom { op_id: String, needed: u64, capacity: u64 },
    #[error("no binding supplied for source tensor '{0}'")]
    MissingInput(String),
    #[error("op '{op}' produced {got} elements for tensor '{tensor}' which declares {expected}")]
    ShapeMismatch { op: String, tensor: String, expected: u64, got: u64 },
    #[error("invalid device config: {0}")]
    InvalidConfig(&'static str),
    #[error("configs must differ only in bandwidth and latency: {0}")]
    ConfigMismatch(String),
    #[error("cannot compare traces with zero makespan")]
    ZeroMakespan,
    #[error("parse error: {0}")]
    Parse(String),
}

/// Per-step memory bookkeeping shared by `execute` and `memory_profile`.
struct MemStep<'a> {
    op: &'a OpNode,
    /// Tensors whose last consumer is this step, with their pool and size.
    dead: Vec<(&'a str, Placement, u64)>,
    /// Pool occupancy during the step, after allocation and before frees.
    transient: (u64, u64),
    /// Pool occupancy after frees.
    after: (u64, u64),
}

struct MemPlan<'a> {
    order: Vec<&'a OpNode>,
    steps: Vec<MemStep<'a>>,
    peak_device: u64,
    peak_host: u64,
}

fn pool_index(p: Placement) -> usize {
    match p {
        Placement::Device(_) => 0,
        Placement::Host => 1,
    }
}

/// Walks the canonical order once and computes allocation, free, and peak
/// bookkeeping for every step. Pure arithmetic: no capacities, no payloads.
fn plan_memory(graph: &Graph) -> Result<MemPlan<'_>, ExecError> {
    graph::validate(graph)?;
    let order = graph::topo_order(graph)?;
    let liveness = graph::liveness(graph, &order)?;
    let producers = graph.producers();

    // Residency of a tensor is the placement of its producer.
    let residency: BTreeMap<&str, Placement> = graph
        .tensors
        .iter()
        .map(|t| (t.id.as_str(), producers[t.id.as_str()].placement))
        .collect();
    let nbytes: BTreeMap<&str, u64> =
        graph.tensors.iter().map(|t| (t.id.as_str(), t.nbytes)).collect();

    // Tensors to free after each step: those whose span ends there.
    let mut dead_at: Vec<Vec<(&str, Placement, u64)>> = (0..order.len()).map(|_| Vec::new()).collect();
    for (tensor, span) in liveness.iter() {
        // Re-key through `residency` so the stored &str borrows from the
        // graph, not from the local liveness table.
        let (key, placement) = residency.get_key_value(tensor).expect("liveness covers tensors");
        dead_at[span.last_step].push((*key, *placement, nbytes[tensor]));
    }

    let mut live = (0u64, 0u64);
    let mut peak = (0u64, 0u64);
    let mut steps = Vec::with_capacity(order.len());
    let mut ordered_ops = Vec::with_capacity(order.len());
    for (step, op_id) in order.iter().enumerate() {
        let op = graph.op(op_id).expect("op ids come from the graph");
        ordered_ops.push(op);
        let mut alloc = (0u64, 0u64);
        for out in &op.outputs {
            let idx = pool_index(residency[out.as_str()]);
            let bytes = nbytes[out.as_str()];
            if idx == 0 {
                alloc.0 += bytes;
            } else {
                alloc.1 += bytes;
            }
        }
        let transient = (live.0 + alloc.0, live.1 + alloc.1);
        peak.0 = peak.0.max(transient.0);
        peak.1 = peak.1.max(transient.1);
        let mut after = transient;
        for (_, placement, bytes) in &dead_at[step] {
            if pool_index(*placement) == 0 {
                after.0 -= bytes;
            } else {
                after.1 -= bytes;
            }
        }
        live = after;
        steps.push(MemStep { op, dead: std::mem::take(&mut dead_at[step]), transient, after });
    }
    Ok(MemPlan { order: ordered_ops, steps, peak_device: peak.0, peak_host: peak.1 })
}

/// Computes peak device and host footprints without materializing payloads.
///
/// This is the planner's cost oracle: it is exact with respect to
/// [`execute`] (same order, same accounting) but runs in O(ops + tensors).
pub fn memory_profile(graph: &Graph) -> Result<MemoryProfile, ExecError> {
    let plan = plan_memory(graph)?;
    Ok(MemoryProfile { peak_device_bytes: plan.peak_device, peak_host_bytes: plan.peak_host })
}

/// Serialization streams: ops on the same stream queue behind each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stream {
    DeviceCompute(u32),
    HostCompute,
    DeviceToHost,
    HostToDevice,
}

fn op_stream(op: &OpNode) -> Option<Stream> {
    match op.kind {
        OpKind::Source | OpKind::Sink => None,
        OpKind::SwapOut => Some(Stream::DeviceToHost),
        OpKind::SwapIn => Some(Stream::HostToDevice),
        OpKind::Compute(_) => Some(match op.placement {
            Placement::Device(d) => Stream::DeviceCompute(d),
            Placement::Host => Stream::HostCompute,
        }),
    }
}

fn op_duration(op: &OpNode, moved_bytes: u64, cfg: &DeviceConfig) -> f64 {
    match op.kind {
        OpKind::Source | OpKind::Sink => 0.0,
        OpKind::SwapOut => cfg.link_latency + moved_bytes as f64 / cfg.d2h_bandwidth,
        OpKind::SwapIn => cfg.link_latency + moved_bytes as f64 / cfg.h2d_bandwidth,
        OpKind::Compute(_) => op.compute_cost,
    }
}

fn apply_compute(
    op: &OpNode,
    f: &ComputeFn,
    inputs: &[&Value],
) -> Result<Vec<f64>, ExecError> {
    let first = inputs.first().expect("validate guarantees arity");
    match f {
        ComputeFn::Add => {
            let mut acc = first.payload.clone();
            for v in &inputs[1..] {
                if v.payload.len() != acc.len() {
                    return Err(ExecError::ShapeMismatch {
                        op: op.id.clone(),
                        tensor: v.tensor_id.clone(),
                        expected: acc.len() as u64,
                        got: v.payload.len() as u64,
                    });
                }
                for (a, b) in acc.iter_mut().zip(&v.payload) {
                    *a += b;
                }
            }
            Ok(acc)
        }
        ComputeFn::Scale(c) => Ok(first.payload.iter().map(|x| x * c).collect()),
        ComputeFn::SumReduce => Ok(vec![first.payload.iter().sum()]),
        ComputeFn::Identity => Ok(first.payload.clone()),
    }
}

/// Runs the graph to completion.
///
/// `bindings` supplies one payload per Source-produced tensor, keyed by
/// tensor id. Returns the values observed by every Sink (keyed by the
/// consumed tensor's id) along with the full trace. Execution is
/// deterministic: the op order, all timestamps, and every payload bit are
/// functions of the graph, the config, and the bindings alone.
pub fn execute(
    graph: &Graph,
    cfg: &DeviceConfig,
    bindings: &BTreeMap<String, Vec<f64>>,
) -> Result<(BTreeMap<String, Value>, ExecTrace), ExecError> {
    let plan = plan_memory(graph)?;
    let producers = graph.producers();
    let specs: BTreeMap<&str, &crate::graph::TensorSpec> =
        graph.tensors.iter().map(|t| (t.id.as_str(), t)).collect();

    let mut values: BTreeMap<&str, Value> = BTreeMap::new();
    let mut sink_values: BTreeMap<String, Value> = BTreeMap::new();
    let mut finish: BTreeMap<&str, f64> = BTreeMap::new();
    let mut streams: BTreeMap<Stream, f64> = BTreeMap::new();
    let mut events: Vec<(usize, TraceEvent)> = Vec::with_capacity(plan.order.len());
    let mut makespan = 0.0f64;

    for (idx, step) in plan.steps.iter().enumerate() {
        let op = step.op;

        // Capacity checks on the post-allocation transient.
        if step.transient.0 > cfg.capacity {
            return Err(ExecError::DeviceOom {
                op_id: op.id.clone(),
                needed: step.transient.0,
                capacity: cfg.capacity,
            });
        }
        if step.transient.1 > cfg.host_capacity {
            return Err(ExecError::HostOom {
                op_id: op.id.clone(),
                needed: step.transient.1,
                capacity: cfg.host_capacity,
            });
        }

        // Timing: wait for predecessors, then for the op's stream.
        let ready = graph::preds(&producers, op)
            .iter()
            .map(|p| finish[*p])
            .fold(0.0f64, f64::max);
        let moved: u64 = match op.kind {
            OpKind::SwapOut | OpKind::SwapIn => {
                op.outputs.iter().map(|t| specs[t.as_str()].nbytes).sum()
            }
            _ => 0,
        };
        let duration = op_duration(op, moved, cfg);
        let t_start = match op_stream(op) {
            Some(s) => {
                let avail = streams.entry(s).or_insert(0.0);
                let start = ready.max(*avail);
                *avail = start + duration;
                start
            }
            None => ready,
        };
        let t_end = t_start + duration;
        finish.insert(op.id.as_str(), t_end);
        makespan = makespan.max(t_end);

        // Values.
        let in_values: Vec<&Value> = op
            .inputs
            .iter()
            .map(|t| values.get(t.as_str()).expect("liveness keeps inputs alive"))
            .collect();
        let out_payloads: Vec<Vec<f64>> = match &op.kind {
            OpKind::Source => {
                let mut outs = Vec::with_capacity(op.outputs.len());
                for t in &op.outputs {
                    let payload = bindings
                        .get(t.as_str())
                        .ok_or_else(|| ExecError::MissingInput(t.clone()))?;
                    outs.push(payload.clone());
                }
                outs
            }
            OpKind::Sink => {
                for v in &in_values {
                    sink_values.insert(v.tensor_id.clone(), (*v).clone());
                }
                Vec::new()
            }
            OpKind::SwapOut | OpKind::SwapIn => {
                // A swap relocates bits without touching them.
                vec![in_values[0].payload.clone()]
            }
            OpKind::Compute(f) => vec![apply_compute(op, f, &in_values)?],
        };
        for (tensor, payload) in op.outputs.iter().zip(out_payloads) {
            let expected = specs[tensor.as_str()].elems() as u64;
            if payload.len() as u64 != expected {
                return Err(ExecError::ShapeMismatch {
                    op: op.id.clone(),
                    tensor: tensor.clone(),
                    expected,
                    got: payload.len() as u64,
                });
            }
            values.insert(tensor.as_str(), Value { tensor_id: tensor.clone(), payload });
        }
        for (tensor, _, _) in &step.dead {
            values.remove(tensor);
        }

        events.push((
            idx,
            TraceEvent {
                op_id: op.id.clone(),
                kind: op.kind.label().to_string(),
                t_start,
                t_end,
                bytes_moved: moved,
                device_mem_after: step.after.0,
            },
        ));
    }

    events.sort_by(|(ia, a), (ib, b)| {
        a.t_start.total_cmp(&b.t_start).then(ia.cmp(ib))
    });
    let trace = ExecTrace {
        events: events.into_iter().map(|(_, e)| e).collect(),
        peak_device_bytes: plan.peak_device,
        peak_host_bytes: plan.peak_host,
        makespan,
    };
    Ok((sink_values, trace))
}

/// Executes the same graph under two configs that differ only in link speed
/// and reports the slowdown of `slow` relative to `fast`.
///
/// Capacities must match, otherwise the comparison would conflate memory
/// effects with link effects; payloads are checked to be bitwise identical
/// across the two runs before the ratio is reported.
pub fn compare_links(
    graph: &Graph,
    bindings: &BTreeMap<String, Vec<f64>>,
    fast: &DeviceConfig,
    slow: &DeviceConfig,
) -> Result<LinkComparison, ExecError> {
    if fast.capacity != slow.capacity || fast.host_capacity != slow.host_capacity {
        return Err(ExecError::ConfigMismatch(format!(
            "capacities differ: device {} vs {}, host {} vs {}",
            fast.capacity, slow.capacity, fast.host_capacity, slow.host_capacity
        )));
    }
    let (out_fast, trace_fast) = execute(graph, fast, bindings)?;
    let (out_slow, trace_slow) = execute(graph, slow, bindings)?;
    debug_assert_eq!(out_fast, out_slow, "link speed must not change results");
    let _ = out_slow;
    let _ = out_fast;
    if trace_fast.makespan <= 0.0 {
        return Err(ExecError::ZeroMakespan);
    }
    let slowdown = trace_slow.makespan / trace_fast.makespan;
    Ok(LinkComparison { fast: trace_fast, slow: trace_slow, slowdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TensorSpec;

    fn cfg(capacity: u64) -> DeviceConfig {
        DeviceConfig::new(capacity, 1 << 40, 1e9, 1e9, 0.0).unwrap()
    }

    fn tensor(id: &str, nbytes: u64, width: u32) -> TensorSpec {
        TensorSpec { id: id.into(), nbytes, dtype_width: width }
    }

    /// a(100 B) -> b(50 B) -> c(25 B): live sets are {a}=100, {a,b}=150,
    /// {b,c}=75, {c}=25, so the peak is 150 during the op producing b.
    fn chain_100_50_25() -> Graph {
        Graph {
            ops: vec![
                OpNode::new("src", OpKind::Source).with_outputs(["a"]),
                OpNode::new("mk_b", OpKind::Compute(ComputeFn::Identity))
                    .with_inputs(["a"])
                    .with_outputs(["b"]),
                OpNode::new("mk_c", OpKind::Compute(ComputeFn::SumReduce))
                    .with_inputs(["b"])
                    .with_outputs(["c"]),
                OpNode::new("out", OpKind::Sink).with_inputs(["c"]),
            ],
            tensors: vec![tensor("a", 100, 4), tensor("b", 50, 2), tensor("c", 25, 25)],
        }
    }

    #[test]
    fn chain_peak_is_150_bytes() {
        let profile = memory_profile(&chain_100_50_25()).unwrap();
        assert_eq!(profile.peak_device_bytes, 150);
        assert_eq!(profile.peak_host_bytes, 0);
    }

    #[test]
    fn chain_oom_at_op_allocating_b() {
        let g = chain_100_50_25();
        let bindings = BTreeMap::from([("a".to_string(), vec![1.0; 25])]);
        let err = execute(&g, &cfg(100), &bindings).unwrap_err();
        assert_eq!(
            err,
            ExecError::DeviceOom { op_id: "mk_b".into(), needed: 150, capacity: 100 }
        );
        // At exactly the peak it fits.
        let (_, trace) = execute(&g, &cfg(150), &bindings).unwrap();
        assert_eq!(trace.peak_device_bytes, 150);
    }

    #[test]
    fn chain_values_and_mem_after() {
        let g = chain_100_50_25();
        let bindings = BTreeMap::from([("a".to_string(), vec![2.0; 25])]);
        let (sinks, trace) = execute(&g, &cfg(1000), &bindings).unwrap();
        assert_eq!(sinks["c"].payload, vec![50.0]);
        let mem_after: Vec<u64> = trace.events.iter().map(|e| e.device_mem_after).collect();
        // src: +a =100; mk_b: +b, a dies =50; mk_c: +c, b dies =25; sink: c dies =0.
        assert_eq!(mem_after, vec![100, 50, 25, 0]);
        assert_eq!(trace.makespan, 0.0, "all ops in this chain are free");
    }

    #[test]
    fn source_to_sink_is_zero_makespan() {
        let g = Graph {
            ops: vec![
                OpNode::new("s", OpKind::Source).with_outputs(["t"]),
                OpNode::new("k", OpKind::Sink).with_inputs(["t"]),
            ],
            tensors: vec![tensor("t", 8, 4)],
        };
        let bindings = BTreeMap::from([("t".to_string(), vec![1.0, 2.0])]);
        let (sinks, trace) = execute(&g, &cfg(100), &bindings).unwrap();
        assert_eq!(trace.makespan, 0.0);
        assert_eq!(sinks["t"].payload, vec![1.0, 2.0]);
    }

    #[test]
    fn missing_binding_is_reported() {
        let g = chain_100_50_25();
        let err = execute(&g, &cfg(1000), &BTreeMap::new()).unwrap_err();
        assert_eq!(err, ExecError::MissingInput("a".into()));
    }

    #[test]
    fn wrong_payload_length_is_shape_mismatch() {
        let g = chain_100_50_25();
        let bindings = BTreeMap::from([("a".to_string(), vec![1.0; 3])]);
        let err = execute(&g, &cfg(1000), &bindings).unwrap_err();
        assert_eq!(
            err,
            ExecError::ShapeMismatch { op: "src".into(), tensor: "a".into(), expected: 25, got: 3 }
        );
    }

    /// Hand-computed round trip: compute(1 ms) -> swap out -> swap in ->
    /// compute(2 ms), with 1 MB payloads over a 1 GB/s, 5 us link. Every
    /// stage serializes, so the makespan is the plain sum
    /// 1e-3 + (5e-6 + 1e-3) + (5e-6 + 1e-3) + 2e-3 = 5.01e-3 s.
    #[test]
    fn swap_round_trip_timing() {
        let g = Graph {
            ops: vec![
                OpNode::new("s", OpKind::Source).with_outputs(["x"]),
                OpNode::new("c0", OpKind::Compute(ComputeFn::Identity))
                    .with_inputs(["x"])
                    .with_outputs(["t"])
                    .with_cost(1e-3),
                OpNode::new("so", OpKind::SwapOut)
                    .with_inputs(["t"])
                    .with_outputs(["t_host"])
                    .with_placement(Placement::Host),
                OpNode::new("si", OpKind::SwapIn)
                    .with_inputs(["t_host"])
                    .with_outputs(["t_back"]),
                OpNode::new("c1", OpKind::Compute(ComputeFn::Identity))
                    .with_inputs(["t_back"])
                    .with_outputs(["u"])
                    .with_cost(2e-3),
                OpNode::new("k", OpKind::Sink).with_inputs(["u"]),
            ],
            tensors: vec![
                tensor("x", 1_000_000, 8),
                tensor("t", 1_000_000, 8),
                tensor("t_host", 1_000_000, 8),
                tensor("t_back", 1_000_000, 8),
                tensor("u", 1_000_000, 8),
            ],
        };
        let cfg = DeviceConfig::new(1 << 30, 1 << 40, 1e9, 1e9, 5e-6).unwrap();
        let bindings = BTreeMap::from([("x".to_string(), vec![0.5; 125_000])]);
        let (sinks, trace) = execute(&g, &cfg, &bindings).unwrap();
        assert!((trace.makespan - 5.01e-3).abs() < 1e-12, "makespan {}", trace.makespan);
        assert_eq!(sinks["u"].payload, vec![0.5; 125_000], "swaps preserve bits");
        assert_eq!(trace.peak_host_bytes, 1_000_000);
        let so = trace.events.iter().find(|e| e.op_id == "so").unwrap();
        assert_eq!(so.bytes_moved, 1_000_000);
        assert_eq!(so.kind, "swap_out");
    }

    /// Two same-direction transfers serialize on the d2h stream while an
    /// independent compute op overlaps both: makespan is the 3 ms compute,
    /// not 3 ms + 2 ms of transfer.
    #[test]
    fn transfers_overlap_compute_but_serialize_per_direction() {
        let g = Graph {
            ops: vec![
                OpNode::new("s", OpKind::Source).with_outputs(["a", "b", "c"]),
                OpNode::new("so_a", OpKind::SwapOut)
                    .with_inputs(["a"])
                    .with_outputs(["a_h"])
                    .with_placement(Placement::Host),
                OpNode::new("so_b", OpKind::SwapOut)
                    .with_inputs(["b"])
                    .with_outputs(["b_h"])
                    .with_placement(Placement::Host),
                OpNode::new("work", OpKind::Compute(ComputeFn::SumReduce))
                    .with_inputs(["c"])
                    .with_outputs(["d"])
                    .with_cost(3e-3),
                OpNode::new("k", OpKind::Sink).with_inputs(["a_h", "b_h", "d"]),
            ],
            tensors: vec![
                tensor("a", 1_000_000, 8),
                tensor("b", 1_000_000, 8),
                tensor("c", 8, 8),
                tensor("a_h", 1_000_000, 8),
                tensor("b_h", 1_000_000, 8),
                tensor("d", 8, 8),
            ],
        };
        let cfg = DeviceConfig::new(1 << 30, 1 << 40, 1e9, 1e9, 5e-6).unwrap();
        let bindings = BTreeMap::from([
            ("a".to_string(), vec![1.0; 125_000]),
            ("b".to_string(), vec![2.0; 125_000]),
            ("c".to_string(), vec![7.0]),
        ]);
        let (_, trace) = execute(&g, &cfg, &bindings).unwrap();
        let ev = |id: &str| trace.events.iter().find(|e| e.op_id == id).unwrap();
        let (sa, sb, w) = (ev("so_a"), ev("so_b"), ev("work"));
        assert_eq!(sa.t_start, 0.0);
        assert_eq!(sb.t_start, sa.t_end, "same-direction transfers queue");
        assert_eq!(w.t_start, 0.0, "compute overlaps the transfers");
        assert!((trace.makespan - 3e-3).abs() < 1e-12, "makespan {}", trace.makespan);
        // Events are ordered by start time with the canonical order breaking ties.
        let ids: Vec<&str> = trace.events.iter().map(|e| e.op_id.as_str()).collect();
        assert_eq!(ids, vec!["s", "so_a", "work", "so_b", "k"]);
    }

    /// Host tensors accumulate across two sequential swap-outs: the device
    /// never holds more than 400 B, but the host transient reaches 800 B.
    #[test]
    fn swap_out_past_host_capacity_is_host_oom() {
        let g = Graph {
            ops: vec![
                OpNode::new("a_src", OpKind::Source).with_outputs(["a"]),
                OpNode::new("a_swap", OpKind::SwapOut)
                    .with_inputs(["a"])
                    .with_outputs(["a_h"])
                    .with_placement(Placement::Host),
                OpNode::new("b_src", OpKind::Source).with_outputs(["b"]),
                OpNode::new("b_swap", OpKind::SwapOut)
                    .with_inputs(["b"])
                    .with_outputs(["b_h"])
                    .with_placement(Placement::Host),
                OpNode::new("k", OpKind::Sink).with_inputs(["a_h", "b_h"]),
            ],
            tensors: vec![
                tensor("a", 400, 4),
                tensor("a_h", 400, 4),
                tensor("b", 400, 4),
                tensor("b_h", 400, 4),
            ],
        };
        assert!(
            DeviceConfig::new(400, 399, 1e9, 1e9, 0.0).is_err(),
            "host smaller than device is rejected up front"
        );
        let bindings = BTreeMap::from([
            ("a".to_string(), vec![0.0; 100]),
            ("b".to_string(), vec![0.0; 100]),
        ]);
        let cfg = DeviceConfig::new(400, 700, 1e9, 1e9, 0.0).unwrap();
        let err = execute(&g, &cfg, &bindings).unwrap_err();
        assert_eq!(
            err,
            ExecError::HostOom { op_id: "b_swap".into(), needed: 800, capacity: 700 }
        );
        // At exactly the host peak it fits.
        let cfg = DeviceConfig::new(400, 800, 1e9, 1e9, 0.0).unwrap();
        let (_, trace) = execute(&g, &cfg, &bindings).unwrap();
        assert_eq!(trace.peak_host_bytes, 800);
        assert_eq!(trace.peak_device_bytes, 400);
        // And a device config too small for one input tensor fails up front.
        let cfg = DeviceConfig::new(256, 800, 1e9, 1e9, 0.0).unwrap();
        let err = execute(&g, &cfg, &bindings).unwrap_err();
        assert_eq!(
            err,
            ExecError::DeviceOom { op_id: "a_src".into(), needed: 400, capacity: 256 }
        );
    }

    #[test]
    fn add_and_scale_semantics() {
        let g = Graph {
            ops: vec![
                OpNode::new("s", OpKind::Source).with_outputs(["a", "b"]),
                OpNode::new("sum", OpKind::Compute(ComputeFn::Add))
                    .with_inputs(["a", "b"])
                    .with_outputs(["c"]),
                OpNode::new("dbl", OpKind::Compute(ComputeFn::Scale(2.0)))
                    .with_inputs(["c"])
                    .with_outputs(["d"]),
                OpNode::new("k", OpKind::Sink).with_inputs(["d"]),
            ],
            tensors: vec![
                tensor("a", 16, 8),
                tensor("b", 16, 8),
                tensor("c", 16, 8),
                tensor("d", 16, 8),
            ],
        };
        let bindings = BTreeMap::from([
            ("a".to_string(), vec![1.0, 2.0]),
            ("b".to_string(), vec![10.0, 20.0]),
        ]);
        let (sinks, _) = execute(&g, &cfg(1000), &bindings).unwrap();
        assert_eq!(sinks["d"].payload, vec![22.0, 44.0]);
    }

    #[test]
    fn shared_bus_divides_both_bandwidths() {
        let base = DeviceConfig::new(100, 200, 16e9, 12e9, 2e-6).unwrap();
        let shared = base.shared_bus(4).unwrap();
        assert_eq!(shared.h2d_bandwidth(), 4e9);
        assert_eq!(shared.d2h_bandwidth(), 3e9);
        assert_eq!(shared.link_latency(), 2e-6);
        assert_eq!(shared.capacity(), 100);
        assert!(base.shared_bus(0).is_err());
    }

    #[test]
    fn compare_links_reports_slowdown() {
        // One swap round trip dominated by transfer time: halving bandwidth
        // should roughly double the transfer segments.
        let g = Graph {
            ops: vec![
                OpNode::new("s", OpKind::Source).with_outputs(["t"]),
                OpNode::new("so", OpKind::SwapOut)
                    .with_inputs(["t"])
                    .with_outputs(["t_h"])
                    .with_placement(Placement::Host),
                OpNode::new("si", OpKind::SwapIn).with_inputs(["t_h"]).with_outputs(["t_b"]),
                OpNode::new("k", OpKind::Sink).with_inputs(["t_b"]),
            ],
            tensors: vec![
                tensor("t", 1_000_000, 8),
                tensor("t_h", 1_000_000, 8),
                tensor("t_b", 1_000_000, 8),
            ],
        };
        let fast = DeviceConfig::new(1 << 30, 1 << 40, 1e9, 1e9, 0.0).unwrap();
        let slow = fast.shared_bus(2).unwrap();
        let bindings = BTreeMap::from([("t".to_string(), vec![3.0; 125_000])]);
        let cmp = compare_links(&g, &bindings, &fast, &slow).unwrap();
        assert!((cmp.slowdown - 2.0).abs() < 1e-9, "slowdown {}", cmp.slowdown);
        let mismatched = fast.with_capacity(1 << 20).unwrap();
        assert!(matches!(
            compare_links(&g, &bindings, &fast, &mismatched),
            Err(ExecError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn trace_csv_shape() {
        let g = chain_100_50_25();
        let bindings = BTreeMap::from([("a".to_string(), vec![1.0; 25])]);
        let (_, trace) = execute(&g, &cfg(1000), &bindings).unwrap();
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "op_id,kind,t_start,t_end,bytes_moved,device_mem_after"
        );
        assert_eq!(lines.next().unwrap(), "src,source,0,0,0,100");
        assert_eq!(csv.lines().count(), 1 + 4);
        let round: ExecTrace = serde_json::from_str(&trace.to_json()).unwrap();
        assert_eq!(round, trace);
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let cfg = DeviceConfig::new(1 << 30, 1 << 34, 16e9, 16e9, 5e-6).unwrap();
        let text = cfg.to_json();
        let back = DeviceConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(DeviceConfig::from_json("{\"capacity\":0,\"host_capacity\":1,\"h2d_bandwidth\":1.0,\"d2h_bandwidth\":1.0}").is_err());
        assert!(DeviceConfig::from_json("{\"capacity\":1,\"host_capacity\":1,\"h2d_bandwidth\":1.0,\"d2h_bandwidth\":1.0,\"bogus\":3}").is_err());
        // link_latency defaults to zero when omitted.
        let defaulted = DeviceConfig::from_json(
            "{\"capacity\":8,\"host_capacity\":8,\"h2d_bandwidth\":1.0,\"d2h_bandwidth\":2.0}",
        )
        .unwrap();
        assert_eq!(defaulted.link_latency(), 0.0);
    }
}

//! Synthetic workload generators: deterministic graphs for benchmarks,
//! calibration scenarios, and property tests, plus seeded input payloads.
//!
//! All generators are pure functions of their parameters (and seed), and the
//! ids they emit sort in construction order so the canonical topological
//! order matches the intended schedule.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::graph::{ComputeFn, Graph, OpKind, OpNode, TensorSpec};

/// A linear pipeline with sliding-window skip connections.
///
/// Op `k` consumes the previous op's tensor and, once the pipeline is
/// `window` deep, also the tensor produced `window` steps earlier. Every
/// tensor therefore stays live for `window` steps, which makes the graph's
/// working set about `window + 1` tensors deep — a swap-friendly shape where
/// each skip tensor has exactly one distant consumer.
///
/// All tensors are `tensor_bytes` wide and every op costs `compute_cost`
/// seconds, so transfer/compute ratios can be dialed in exactly.
pub fn window_chain(n_ops: usize, window: usize, tensor_bytes: u64, compute_cost: f64) -> Graph {
    assert!(n_ops >= 2, "window chain needs at least two ops");
    assert!(window >= 2, "skip distance below two is just the linear chain");
    assert!(tensor_bytes % 4 == 0 && tensor_bytes > 0, "tensors are 4-byte-element sized");

    let tensor_id = |k: usize| format!("t{k:03}");
    let mut tensors = vec![TensorSpec { id: "t_seed".into(), nbytes: tensor_bytes, dtype_width: 4 }];
    let mut ops = vec![OpNode::new("a_src", OpKind::Source).with_outputs(["t_seed"])];

    for k in 0..n_ops {
        let near = if k == 0 { "t_seed".to_string() } else { tensor_id(k - 1) };
        let (kind, inputs) = if k >= window {
            (ComputeFn::Add, vec![near, tensor_id(k - window)])
        } else {
            (ComputeFn::Identity, vec![near])
        };
        tensors.push(TensorSpec { id: tensor_id(k), nbytes: tensor_bytes, dtype_width: 4 });
        ops.push(
            OpNode::new(&format!("op{k:03}"), OpKind::Compute(kind))
                .with_inputs(inputs.iter().map(String::as_str))
                .with_outputs([tensor_id(k).as_str()])
                .with_cost(compute_cost),
        );
    }
    ops.push(OpNode::new("zz_sink", OpKind::Sink).with_inputs([tensor_id(n_ops - 1).as_str()]));
    Graph { ops, tensors }
}

/// A random shape-consistent DAG for property testing.
///
/// A single source emits a handful of seed tensors with log-uniform sizes up
/// to `max_tensor_bytes`; each of the `n_ops` compute ops then draws its
/// inputs from the tensors produced so far (adds only combine equal-length
/// tensors), and a final sink consumes everything left unconsumed so the
/// graph validates.
pub fn random_dag(seed: u64, n_ops: usize, max_tensor_bytes: u64) -> Graph {
    assert!(n_ops >= 1);
    assert!(max_tensor_bytes >= 8);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Log-uniform element counts; tensors are 8-byte elements.
    let max_elems = (max_tensor_bytes / 8).max(1);
    let rand_elems = {
        let log_max = (max_elems as f64).ln();
        move |rng: &mut ChaCha20Rng| ((rng.gen_range(0.0..=log_max)).exp().floor() as u64).max(1)
    };

    let mut tensors = Vec::new();
    let mut ops = Vec::new();
    // elems per produced tensor, in production order.
    let mut produced: Vec<(String, u64)> = Vec::new();

    let n_seeds = rng.gen_range(2..=4usize);
    let seed_ids: Vec<String> = (0..n_seeds).map(|i| format!("seed{i}")).collect();
    for id in &seed_ids {
        let elems = rand_elems(&mut rng);
        tensors.push(TensorSpec { id: id.clone(), nbytes: elems * 8, dtype_width: 8 });
        produced.push((id.clone(), elems));
    }
    ops.push(
        OpNode::new("aa_src", OpKind::Source)
            .with_outputs(seed_ids.iter().map(String::as_str)),
    );

    for k in 0..n_ops {
        let out_id = format!("v{k:03}");
        let pick = rng.gen_range(0..produced.len());
        let (in_id, in_elems) = produced[pick].clone();
        let (kind, inputs, out_elems) = match rng.gen_range(0..4u32) {
            0 => (ComputeFn::Identity, vec![in_id], in_elems),
            1 => (ComputeFn::Scale(f64::from(rng.gen_range(-4i32..=4))), vec![in_id], in_elems),
            2 => (ComputeFn::SumReduce, vec![in_id], 1),
            _ => {
                // Add a second input of the same length when one exists.
                let peers: Vec<&(String, u64)> = produced
                    .iter()
                    .filter(|(id, e)| *e == in_elems && *id != in_id)
                    .collect();
                if peers.is_empty() {
                    (ComputeFn::Identity, vec![in_id], in_elems)
                } else {
                    let other = peers[rng.gen_range(0..peers.len())].0.clone();
                    (ComputeFn::Add, vec![in_id, other], in_elems)
                }
            }
        };
        tensors.push(TensorSpec { id: out_id.clone(), nbytes: out_elems * 8, dtype_width: 8 });
        ops.push(
            OpNode::new(&format!("op{k:03}"), OpKind::Compute(kind))
                .with_inputs(inputs.iter().map(String::as_str))
                .with_outputs([out_id.as_str()])
                .with_cost(1e-6 * f64::from(rng.gen_range(1..=50u32))),
        );
        produced.push((out_id, out_elems));
    }

    // Sink everything without a consumer so validation passes.
    let consumed: std::collections::BTreeSet<&str> = ops
        .iter()
        .flat_map(|o| o.inputs.iter().map(String::as_str))
        .collect();
    let leftovers: Vec<&str> = tensors
        .iter()
        .map(|t| t.id.as_str())
        .filter(|id| !consumed.contains(id))
        .collect();
    ops.push(OpNode::new("zz_sink", OpKind::Sink).with_inputs(leftovers));
    Graph { ops, tensors }
}

/// Seeded integer-valued payloads for every source-produced tensor, keyed by
/// tensor id — the standard way to drive [`crate::exec::execute`] on
/// synthetic graphs while keeping float arithmetic exact.
pub fn make_inputs(graph: &Graph, seed: u64) -> BTreeMap<String, Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut bindings = BTreeMap::new();
    for op in &graph.ops {
        if !matches!(op.kind, OpKind::Source) {
            continue;
        }
        for tensor_id in &op.outputs {
            let spec = graph.tensor(tensor_id).expect("graph validates");
            let payload =
                (0..spec.elems()).map(|_| f64::from(rng.gen_range(-1024i32..=1024))).collect();
            bindings.insert(tensor_id.clone(), payload);
        }
    }
    bindings
}

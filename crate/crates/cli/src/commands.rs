//! Subcommand implementations. Each takes the parsed scenario plus the
//! invocation context and writes its artifacts; stdout carries a one-line
//! summary per command.

use std::path::{Path, PathBuf};

use serde::Serialize;

use swapflow_core::collectives::{sweep_csv, sweep_sizes};
use swapflow_core::exec::{compare_links, execute, memory_profile, DeviceConfig};
use swapflow_core::lms::{insert_swaps, plan_for_capacity, LmsSettings};
use swapflow_core::metrics::scaling_csv;
use swapflow_core::synth::make_inputs;
use swapflow_core::trainer::{
    make_dataset, make_noisy_dataset, scaling_run, Dataset, TopologyFamily, ToyModel, TrainConfig,
};

use crate::error::{read_to_string, write_file, CliError};
use crate::scenario::{DatasetKind, Scenario};

/// Invocation-wide settings: where artifacts go and the optional
/// `SWAPFLOW_SEED` override.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
}

impl Ctx {
    fn out(&self, rel: &Path) -> PathBuf {
        self.out_dir.join(rel)
    }

    fn seed(&self, scenario_seed: u64) -> u64 {
        self.seed_override.unwrap_or(scenario_seed)
    }
}

/// Plans swaps for the scenario graph and writes the plan and the rewritten
/// graph. Flags override the scenario's `lms` block field by field.
pub fn cmd_rewrite(
    scenario: &Path,
    capacity: Option<u64>,
    threshold: Option<usize>,
    prefetch: Option<usize>,
    ctx: &Ctx,
) -> Result<(), CliError> {
    let sc = Scenario::load(scenario)?;
    let graph = sc.load_graph(ctx.seed(sc.seed))?;

    let base = sc.lms.or(capacity.map(LmsSettings::new));
    let mut lms = base.ok_or_else(|| {
        CliError::Scenario("`rewrite` needs an `lms` block or a --capacity flag".into())
    })?;
    if let Some(capacity) = capacity {
        lms.capacity = capacity;
    }
    if let Some(threshold) = threshold {
        lms.threshold = threshold;
    }
    if let Some(prefetch) = prefetch {
        lms.prefetch_distance = prefetch;
    }

    let before = memory_profile(&graph)?;
    let plan = plan_for_capacity(&graph, lms.capacity, lms.threshold, lms.prefetch_distance)?;
    let rewritten = insert_swaps(&graph, &plan)?;
    let after = memory_profile(&rewritten)?;

    let plan_path = ctx.out(sc.outputs.plan());
    let graph_path = ctx.out(sc.outputs.graph());
    // The plan file is the entry list itself; threshold is echoed on stdout.
    write_file(
        &plan_path,
        &serde_json::to_string_pretty(&plan.entries).expect("plans serialize"),
    )?;
    write_file(&graph_path, &rewritten.to_json())?;

    println!(
        "rewrite: peak {} -> {} bytes (budget {}), ops {} -> {}, {} plan entries",
        before.peak_device_bytes,
        after.peak_device_bytes,
        lms.capacity,
        graph.ops.len(),
        rewritten.ops.len(),
        plan.entries.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    makespan_s: f64,
    peak_device_bytes: u64,
    peak_host_bytes: u64,
    ops_executed: usize,
    swap_entries: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    link_slowdown: Option<LinkSlowdown>,
}

#[derive(Serialize)]
struct LinkSlowdown {
    fast_makespan_s: f64,
    slow_makespan_s: f64,
    slowdown: f64,
}

/// Executes the scenario graph (rewritten through the planner when an `lms`
/// block is present) and writes the trace CSV and a summary JSON. With
/// `--compare FAST SLOW` device files, also reports the link slowdown.
pub fn cmd_run(scenario: &Path, compare: Option<(&Path, &Path)>, ctx: &Ctx) -> Result<(), CliError> {
    let sc = Scenario::load(scenario)?;
    let seed = ctx.seed(sc.seed);
    let graph = sc.load_graph(seed)?;
    let device = sc.device()?;

    let (exec_graph, exec_device, swap_entries) = match &sc.lms {
        None => (graph, device.clone(), 0),
        Some(lms) => {
            let plan =
                plan_for_capacity(&graph, lms.capacity, lms.threshold, lms.prefetch_distance)?;
            let entries = plan.entries.len();
            (insert_swaps(&graph, &plan)?, device.with_capacity(lms.capacity)?, entries)
        }
    };

    let bindings = make_inputs(&exec_graph, seed);
    let (_, trace) = execute(&exec_graph, &exec_device, &bindings)?;

    let link_slowdown = match compare {
        None => None,
        Some((fast_path, slow_path)) => {
            let fast = load_device(fast_path)?;
            let slow = load_device(slow_path)?;
            let cmp = compare_links(&exec_graph, &bindings, &fast, &slow)?;
            Some(LinkSlowdown {
                fast_makespan_s: cmp.fast.makespan,
                slow_makespan_s: cmp.slow.makespan,
                slowdown: cmp.slowdown,
            })
        }
    };

    let summary = RunSummary {
        makespan_s: trace.makespan,
        peak_device_bytes: trace.peak_device_bytes,
        peak_host_bytes: trace.peak_host_bytes,
        ops_executed: trace.events.len(),
        swap_entries,
        link_slowdown,
    };
    write_file(&ctx.out(sc.outputs.trace()), &trace.to_csv())?;
    write_file(
        &ctx.out(sc.outputs.summary()),
        &serde_json::to_string_pretty(&summary).expect("summaries serialize"),
    )?;

    println!(
        "run: makespan {:.6e} s, peak {} bytes device / {} host, {} events, {} swap entries",
        trace.makespan,
        trace.peak_device_bytes,
        trace.peak_host_bytes,
        trace.events.len(),
        swap_entries
    );
    if let Some(cmp) = &summary.link_slowdown {
        println!(
            "link slowdown: {:.4} (fast {:.6e} s, slow {:.6e} s)",
            cmp.slowdown, cmp.fast_makespan_s, cmp.slow_makespan_s
        );
    }
    Ok(())
}

fn load_device(path: &Path) -> Result<DeviceConfig, CliError> {
    serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| CliError::Scenario(format!("{}: {e}", path.display())))
}

/// Models ring vs hierarchical all-reduce across buffer sizes on the
/// scenario topology and writes the sweep CSV.
pub fn cmd_allreduce_bench(
    scenario: &Path,
    sizes: Option<Vec<u64>>,
    ctx: &Ctx,
) -> Result<(), CliError> {
    let sc = Scenario::load(scenario)?;
    let topo = sc.load_topology()?;
    let sizes = sizes.unwrap_or_else(|| vec![1 << 10, 1 << 14, 1 << 18, 1 << 22, 1 << 26]);
    let rows = sweep_sizes(&topo, &sizes, ctx.seed(sc.seed))?;
    write_file(&ctx.out(sc.outputs.sweep()), &sweep_csv(&rows))?;
    let last = rows.last().expect("at least one size");
    println!(
        "allreduce-bench: {} sizes on {} ranks, ring/hier ratio {:.4} at {} elems",
        rows.len(),
        topo.ranks(),
        last.ratio,
        last.n_elems
    );
    Ok(())
}

#[derive(Serialize)]
struct EpochLine {
    epoch: u32,
    wall_s: f64,
    allreduce_s: f64,
    loss: f64,
}

#[derive(Serialize)]
struct WeightsLine {
    ranks: u32,
    weights: Vec<f64>,
}

/// Trains the toy model at every requested rank count and writes the epoch
/// JSONL (runs concatenated in rank-count order), the scaling CSV, and the
/// per-rank-count final weights JSON.
pub fn cmd_train(scenario: &Path, ctx: &Ctx) -> Result<(), CliError> {
    let sc = Scenario::load(scenario)?;
    let spec = sc
        .train
        .as_ref()
        .ok_or_else(|| CliError::Scenario("`train` needs a `train` block".into()))?;
    let device = sc.device()?;
    let family = TopologyFamily::from_topology(&sc.load_topology()?);

    let seed = ctx.seed(spec.seed);
    let data: Dataset = match spec.dataset {
        DatasetKind::Exact => make_dataset(spec.dims, spec.samples_per_dim, seed).0,
        DatasetKind::Noisy => {
            make_noisy_dataset(spec.dims, spec.dims * spec.samples_per_dim, seed)
        }
    };
    let model = ToyModel::zeros(spec.dims);
    let cfg = TrainConfig {
        epochs: spec.epochs,
        lr: spec.lr,
        flop_rate: spec.flop_rate,
        lms: sc.lms,
    };

    let (rows, outcomes) = scaling_run(&model, &data, &family, &spec.ranks, device, &cfg)?;

    let mut jsonl = String::new();
    for outcome in &outcomes {
        for report in &outcome.reports {
            let line = EpochLine {
                epoch: report.epoch,
                wall_s: report.wall_s,
                allreduce_s: report.allreduce_s,
                loss: report.loss,
            };
            jsonl.push_str(&serde_json::to_string(&line).expect("epoch lines serialize"));
            jsonl.push('\n');
        }
    }
    write_file(&ctx.out(sc.outputs.epochs()), &jsonl)?;
    write_file(&ctx.out(sc.outputs.scaling()), &scaling_csv(&rows))?;
    let weights: Vec<WeightsLine> = spec
        .ranks
        .iter()
        .zip(&outcomes)
        .map(|(&ranks, o)| WeightsLine { ranks, weights: o.weights.clone() })
        .collect();
    write_file(
        &ctx.out(sc.outputs.weights()),
        &serde_json::to_string_pretty(&weights).expect("weights serialize"),
    )?;

    let swaps: usize = outcomes.iter().map(|o| o.swap_entries).sum();
    let last = rows.last().expect("at least one rank count");
    println!(
        "train: {} rank counts (max {}), final loss {:.6e}, efficiency {:.1}% at {} ranks, {} swap entries",
        rows.len(),
        last.ranks,
        outcomes.last().expect("non-empty").reports.last().expect("epochs >= 1").loss,
        last.efficiency_pct,
        last.ranks,
        swaps
    );
    Ok(())
}

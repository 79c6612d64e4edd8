//! Scenario files: one JSON document describing what to run — a graph (on
//! disk or generated), the device model, and optional topology, swap, and
//! training blocks. Paths inside a scenario resolve relative to the
//! scenario file; output paths resolve relative to `--out-dir`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use swapflow_core::exec::DeviceConfig;
use swapflow_core::graph::Graph;
use swapflow_core::synth::{random_dag, window_chain};
use swapflow_core::topology::Topology;
use swapflow_core::LmsSettings;

use crate::error::{read_to_string, CliError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Path to a graph JSON file. `rewrite` and `run` need exactly one of
    /// `graph` / `generator`; setting both is always an error.
    pub graph: Option<PathBuf>,
    /// Synthetic graph recipe (alternative to `graph`).
    pub generator: Option<GeneratorSpec>,
    /// Device model; required by `rewrite`, `run`, and `train`.
    pub device: Option<DeviceConfig>,
    /// Path to a topology JSON file; required by `allreduce-bench` and
    /// `train` (where it acts as the family template).
    pub topology: Option<PathBuf>,
    /// Swap planner settings. `rewrite` requires them (or flags); `run` and
    /// `train` rewrite their graphs through the planner when present.
    pub lms: Option<LmsSettings>,
    /// Training block for the `train` subcommand.
    pub train: Option<TrainSpec>,
    /// Seed for generated graphs, input payloads, and the collective sweep.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: OutputPaths,

    /// Directory of the scenario file, for resolving relative paths.
    #[serde(skip)]
    base: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// See [`swapflow_core::synth::window_chain`].
    WindowChain { n_ops: usize, window: usize, tensor_bytes: u64, compute_cost_s: f64 },
    /// See [`swapflow_core::synth::random_dag`]; drawn from the scenario
    /// seed.
    RandomDag { n_ops: usize, max_tensor_bytes: u64 },
}

impl GeneratorSpec {
    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Scenario(format!("generator: {msg}")));
        match self {
            GeneratorSpec::WindowChain { n_ops, window, tensor_bytes, compute_cost_s } => {
                if *n_ops < 2 {
                    return bad("window_chain needs at least two ops");
                }
                if *window < 2 || *window >= *n_ops {
                    return bad("window must be at least 2 and smaller than n_ops");
                }
                if *tensor_bytes == 0 || *tensor_bytes % 4 != 0 {
                    return bad("tensor_bytes must be a positive multiple of 4");
                }
                if !(compute_cost_s.is_finite() && *compute_cost_s >= 0.0) {
                    return bad("compute_cost_s must be finite and non-negative");
                }
            }
            GeneratorSpec::RandomDag { n_ops, max_tensor_bytes } => {
                if *n_ops == 0 {
                    return bad("random_dag needs at least one op");
                }
                if *max_tensor_bytes < 8 {
                    return bad("max_tensor_bytes must be at least 8");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: u32,
    pub lr: f64,
    /// Rank counts to train at, each instantiated from the topology family.
    pub ranks: Vec<u32>,
    /// Dataset seed (overridden by `SWAPFLOW_SEED`).
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default = "default_samples_per_dim")]
    pub samples_per_dim: usize,
    #[serde(default = "default_flop_rate")]
    pub flop_rate: f64,
    #[serde(default)]
    pub dataset: DatasetKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Orthogonal integer design: exact arithmetic at any rank count.
    #[default]
    Exact,
    /// Dense integer data for gradual loss curves.
    Noisy,
}

fn default_dims() -> usize {
    4
}

fn default_samples_per_dim() -> usize {
    256
}

fn default_flop_rate() -> f64 {
    1e9
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub plan: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub epochs: Option<PathBuf>,
    pub scaling: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub sweep: Option<PathBuf>,
}

impl OutputPaths {
    pub fn plan(&self) -> &Path {
        self.plan.as_deref().unwrap_or_else(|| Path::new("plan.json"))
    }

    pub fn graph(&self) -> &Path {
        self.graph.as_deref().unwrap_or_else(|| Path::new("rewritten.json"))
    }

    pub fn trace(&self) -> &Path {
        self.trace.as_deref().unwrap_or_else(|| Path::new("trace.csv"))
    }

    pub fn summary(&self) -> &Path {
        self.summary.as_deref().unwrap_or_else(|| Path::new("summary.json"))
    }

    pub fn epochs(&self) -> &Path {
        self.epochs.as_deref().unwrap_or_else(|| Path::new("epochs.jsonl"))
    }

    pub fn scaling(&self) -> &Path {
        self.scaling.as_deref().unwrap_or_else(|| Path::new("scaling.csv"))
    }

    pub fn weights(&self) -> &Path {
        self.weights.as_deref().unwrap_or_else(|| Path::new("weights.json"))
    }

    pub fn sweep(&self) -> &Path {
        self.sweep.as_deref().unwrap_or_else(|| Path::new("sweep.csv"))
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, CliError> {
        let text = read_to_string(path)?;
        let mut scenario: Scenario = serde_json::from_str(&text)
            .map_err(|e| CliError::Scenario(format!("{}: {e}", path.display())))?;
        scenario.base = path.parent().map_or_else(PathBuf::new, Path::to_path_buf);
        if scenario.graph.is_some() && scenario.generator.is_some() {
            return Err(CliError::Scenario("set at most one of `graph` and `generator`".into()));
        }
        if let Some(generator) = &scenario.generator {
            generator.validate()?;
        }
        Ok(scenario)
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    /// The graph to operate on, loaded from disk or generated with `seed`.
    pub fn load_graph(&self, seed: u64) -> Result<Graph, CliError> {
        match (&self.graph, &self.generator) {
            (Some(path), None) => {
                let resolved = self.resolve(path);
                Ok(Graph::from_json(&read_to_string(&resolved)?)?)
            }
            (None, Some(GeneratorSpec::WindowChain {
                n_ops,
                window,
                tensor_bytes,
                compute_cost_s,
            })) => Ok(window_chain(*n_ops, *window, *tensor_bytes, *compute_cost_s)),
            (None, Some(GeneratorSpec::RandomDag { n_ops, max_tensor_bytes })) => {
                Ok(random_dag(seed, *n_ops, *max_tensor_bytes))
            }
            (None, None) => Err(CliError::Scenario(
                "this command needs a `graph` path or a `generator` spec".into(),
            )),
            (Some(_), Some(_)) => unreachable!("rejected at load"),
        }
    }

    pub fn load_topology(&self) -> Result<Topology, CliError> {
        let path = self
            .topology
            .as_deref()
            .ok_or_else(|| CliError::Scenario("a `topology` path is required".into()))?;
        let resolved = self.resolve(path);
        Ok(Topology::from_json(&read_to_string(&resolved)?)?)
    }

    pub fn device(&self) -> Result<&DeviceConfig, CliError> {
        self.device
            .as_ref()
            .ok_or_else(|| CliError::Scenario("a `device` config is required".into()))
    }
}

//! Throughput benches for the crate's parallel seams: collective reduction,
//! a full training epoch, and batch swap planning. Run twice —
//!
//! ```text
//! cargo bench                          # rayon build
//! cargo bench --no-default-features    # sequential build
//! ```
//!
//! — and compare the same benchmark IDs across the two reports; outputs are
//! bitwise identical either way, only the wall time moves.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};

use swapflow_core::collectives::{hierarchical_allreduce, ring_allreduce, RankBuffers};
use swapflow_core::exec::DeviceConfig;
use swapflow_core::lms::{plan_for_capacity, PlanError};
use swapflow_core::par;
use swapflow_core::synth::random_dag;
use swapflow_core::topology::{Tier, Topology};
use swapflow_core::trainer::{exact_lr, make_dataset, train, TopologyFamily, ToyModel, TrainConfig};
use swapflow_core::LmsSettings;

fn two_tier() -> Vec<Tier> {
    vec![
        Tier { name: "intra".into(), group_size: 4, bandwidth_bytes_per_s: 150e9, latency_s: 5e-6 },
        Tier { name: "inter".into(), group_size: 4, bandwidth_bytes_per_s: 12.5e9, latency_s: 2e-6 },
    ]
}

fn bench_allreduce(c: &mut Criterion) {
    let mut tiers = two_tier();
    tiers[1].group_size = 2;
    let topo = Topology::new(8, tiers).expect("valid topology");
    let n: usize = 1 << 20;
    let bufs = RankBuffers::new(
        (0..8usize)
            .map(|r| (0..n).map(|i| ((i * 31 + r * 17) % 2048) as f64 - 1024.0).collect())
            .collect(),
    )
    .expect("equal-length buffers");

    let mut group = c.benchmark_group("allreduce");
    group.throughput(Throughput::Elements(8 * n as u64));
    group.bench_function("hierarchical/8x1Mi", |b| {
        b.iter(|| hierarchical_allreduce(black_box(&bufs), &topo).expect("reduces"))
    });
    group.bench_function("ring/8x1Mi", |b| {
        b.iter(|| ring_allreduce(black_box(&bufs), &topo).expect("reduces"))
    });
    group.finish();
}

fn bench_train_epoch(c: &mut Criterion) {
    let family = TopologyFamily::new(two_tier());
    let topo = family.instantiate(16).expect("16 ranks fit");
    let device = DeviceConfig::new(1 << 20, 1 << 20, 16e9, 16e9, 0.0).expect("config");
    let model = ToyModel::zeros(4);

    let mut group = c.benchmark_group("train");
    group.sample_size(20);

    let (data, _) = make_dataset(4, 256, 3);
    let direct = TrainConfig::new(1, exact_lr(4));
    group.bench_function("direct_epoch/16ranks", |b| {
        b.iter(|| train(&model, black_box(&data), &topo, &device, &direct).expect("trains"))
    });

    let (small, _) = make_dataset(4, 16, 11);
    let lowered = TrainConfig {
        epochs: 1,
        lr: 0.5,
        flop_rate: 4e6,
        lms: Some(LmsSettings { capacity: 96, threshold: 20, prefetch_distance: 0 }),
    };
    group.bench_function("lowered_epoch/16ranks", |b| {
        b.iter(|| train(&model, black_box(&small), &topo, &device, &lowered).expect("trains"))
    });
    group.finish();
}

fn bench_plan_batch(c: &mut Criterion) {
    let graphs: Vec<_> = (0..32u64).map(|seed| random_dag(seed, 32, 1 << 20)).collect();
    let mut group = c.benchmark_group("lms");
    group.sample_size(10);
    group.bench_function("plan_batch/32dags", |b| {
        b.iter(|| {
            let floors = par::map_ordered(black_box(graphs.clone()), |graph| {
                match plan_for_capacity(&graph, 0, 2, 0) {
                    Err(PlanError::CannotFit { achieved, .. }) => achieved,
                    other => panic!("capacity 0 must be unreachable, got {other:?}"),
                }
            });
            black_box(floors)
        })
    });
    group.finish();
}

criterion_group!(benches, bench_allreduce, bench_train_epoch, bench_plan_batch);
criterion_main!(benches);

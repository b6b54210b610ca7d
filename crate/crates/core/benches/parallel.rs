use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ordered_steps::eval::infer;
use ordered_steps::par::Exec;
use ordered_steps::synth::{generate_synthetic, SyntheticSpec};
use ordered_steps::task::{Granularity, TaskSet};
use ordered_steps::trainer::{initialize, update_assignments, TrainConfig, TrainingVideo};

fn sequential_vs_parallel(c: &mut Criterion) {
    let corpus = generate_synthetic(&SyntheticSpec {
        num_tasks: 8,
        videos_per_task: 25,
        video_length: 400,
        feature_dim: 64,
        train_fraction: 1.0,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let tasks = TaskSet::new(corpus.tasks.clone(), Granularity::Component).unwrap();
    let videos: Vec<TrainingVideo> = corpus
        .videos
        .iter()
        .map(|v| TrainingVideo {
            task: v.task,
            features: v.features.clone(),
            windows: None,
        })
        .collect();
    let base = TrainConfig {
        init_epochs: 2,
        outer_iterations: 0,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let state = initialize(&videos, &tasks, &base).unwrap();

    let mut group = c.benchmark_group("per_video");
    group.sample_size(20);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let name = format!("{exec:?}");
        let config = TrainConfig { exec, ..base.clone() };
        group.bench_function(BenchmarkId::new("update_assignments", &name), |b| {
            b.iter(|| update_assignments(&state, &videos, &tasks, &config).unwrap())
        });
        group.bench_function(BenchmarkId::new("infer", &name), |b| {
            b.iter(|| {
                exec.try_map(&videos, |_, v| infer(&state.bank, tasks.matrix(v.task), &v.features))
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, sequential_vs_parallel);
criterion_main!(benches);

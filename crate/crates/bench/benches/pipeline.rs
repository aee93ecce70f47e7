use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semirnet_bench::fixture;
use semirnet_core::model::{forward_graph, total_loss, AblationFlags};
use semirnet_core::similarity::{fit_mapping, word_level_similarity, MappingState, Mode};
use semirnet_core::training::{sample_triplets, train, TrainConfig};
use semirnet_core::{Tape, Tensor};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn forward_backward(c: &mut Criterion) {
    let f = fixture(400);
    let batch = &f.train[..f.config.batch_size];
    let labels: Vec<u8> = batch.iter().map(|p| p.label).collect();
    let triplets = sample_triplets(&labels, &mut ChaCha8Rng::seed_from_u64(0));
    let labels: Vec<i64> = labels.into_iter().map(i64::from).collect();
    c.bench_function("forward_backward_batch32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars = f.state.register(&mut tape);
            let g = forward_graph(
                &mut tape,
                &vars,
                &f.config,
                &f.state.mapping,
                batch,
                AblationFlags::FULL,
                Mode::Train,
            )
            .unwrap();
            let loss = total_loss(
                &mut tape,
                g.logits,
                &labels,
                g.embeddings,
                &triplets,
                &f.config,
                AblationFlags::FULL,
            )
            .unwrap();
            black_box(tape.backward(loss).unwrap())
        })
    });
}

fn similarity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (text, image) = (random(&mut rng, 6, 300), random(&mut rng, 6, 300));
    c.bench_function("word_level_6x6x300", |b| {
        b.iter(|| word_level_similarity(black_box(&text), black_box(&image)).unwrap())
    });

    for dim in [4, 32] {
        let z = random(&mut rng, 32, dim);
        let state = MappingState::new(dim, 0.9, 1e-5);
        c.bench_function(&format!("fit_mapping_32x{dim}"), |b| {
            b.iter(|| fit_mapping(black_box(&z), &state).unwrap())
        });
    }
}

fn training(c: &mut Criterion) {
    let f = fixture(400);
    let budget = TrainConfig {
        stage1_epochs: 1,
        epochs: 1,
        patience: 1,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("one_epoch_per_stage_200_samples", |b| {
        b.iter(|| {
            train(
                &f.config,
                &budget,
                &f.task.train,
                &f.task.val,
                AblationFlags::FULL,
                Some(&f.kb),
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, forward_backward, similarity, training);
criterion_main!(benches);

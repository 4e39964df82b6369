use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smartkge::evaluation::{evaluate, score_candidates};
use smartkge::geometry::egt_gradients;
use smartkge::model::init_state;
use smartkge::training::{sample_negatives, self_adversarial_loss, Batch};
use smartkge::{AttentionMode, EgtKind, KnowledgeGraph, ModelConfig, Side, Triple};

fn random_kg(entities: usize, relations: usize, triples: usize, rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let mut seen = std::collections::HashSet::new();
    let mut all = Vec::with_capacity(triples);
    while all.len() < triples {
        let t = Triple::new(rng.gen_range(0..entities), rng.gen_range(0..relations), rng.gen_range(0..entities));
        if seen.insert(t) {
            all.push(t);
        }
    }
    let test = all.split_off(all.len() - triples / 20);
    let valid = all.split_off(all.len() - triples / 20);
    KnowledgeGraph::from_ids(entities, relations, all, valid, test).unwrap()
}

fn config(dim: usize) -> ModelConfig {
    ModelConfig {
        dim,
        negatives: 64,
        batch_size: 128,
        alpha: 0.5,
        ..Default::default()
    }
}

fn egt_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kg = random_kg(100, 4, 400, &mut rng);
    let mut group = c.benchmark_group("egt_gradients");
    for dim in [32, 128] {
        let (state, _) = init_state(kg.num_entities(), kg.num_relations(), &config(dim), &mut rng);
        for kind in EgtKind::ALL {
            group.bench_with_input(BenchmarkId::new(kind.name(), dim), &dim, |b, _| {
                b.iter(|| {
                    egt_gradients(
                        state.egt_params(1, kind),
                        black_box(state.entity(3)),
                        black_box(state.entity(7)),
                        Default::default(),
                    )
                })
            });
        }
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kg = random_kg(5000, 10, 20_000, &mut rng);
    let cfg = config(32);
    let (state, mut att) = init_state(kg.num_entities(), kg.num_relations(), &cfg, &mut rng);
    att.mode = AttentionMode::Adaptive;
    let mut group = c.benchmark_group("ranking");
    for side in Side::BOTH {
        group.bench_function(format!("score_candidates/{side:?}"), |b| {
            b.iter(|| score_candidates(&state, &att, black_box(11), 2, side, cfg.norm))
        });
    }
    group.sample_size(10);
    group.bench_function("evaluate_valid", |b| {
        b.iter(|| evaluate(&state, &att, &kg, kg.valid(), cfg.norm).unwrap())
    });
    group.finish();
}

fn loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let kg = random_kg(2000, 10, 10_000, &mut rng);
    let mut group = c.benchmark_group("self_adversarial_loss");
    for dim in [32, 64] {
        let cfg = config(dim);
        let (state, mut att) = init_state(kg.num_entities(), kg.num_relations(), &cfg, &mut rng);
        att.mode = AttentionMode::Adaptive;
        let mut batch = Batch {
            positives: Vec::new(),
            negatives: Vec::new(),
            corrupted_side: Vec::new(),
        };
        for p in &kg.train()[..cfg.batch_size] {
            let (n, s): (Vec<Triple>, Vec<Side>) =
                sample_negatives(&kg, p, cfg.negatives, &mut rng).unwrap().into_iter().unzip();
            batch.positives.push(*p);
            batch.negatives.push(n);
            batch.corrupted_side.push(s);
        }
        group.bench_with_input(BenchmarkId::new("batch128_eta64", dim), &dim, |b, _| {
            b.iter(|| self_adversarial_loss(&state, &att, &batch, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, egt_kernels, scoring, loss);
criterion_main!(benches);

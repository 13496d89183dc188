use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use protograph_bench::fixture;
use protograph_core::sampler::{init_prototypes, sgld_chain, support_statistics};
use protograph_core::*;

fn knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_graph");
    for relations in [100, 400] {
        let f = fixture(relations, 32);
        group.bench_with_input(BenchmarkId::from_parameter(relations), &f.embeddings, |b, emb| {
            b.iter(|| build_knn_graph(emb, 10).unwrap())
        });
    }
    group.finish();
}

fn sgld(c: &mut Criterion) {
    let f = fixture(100, 32);
    let (support, h) = f.sampler_inputs();
    let stats = support_statistics(&support, f.episode.n_way()).unwrap();
    let mut group = c.benchmark_group("sgld");
    for chains in [1, 10] {
        let config = SamplerConfig {
            chains,
            ..SamplerConfig::default()
        };
        group.bench_with_input(BenchmarkId::new("chains", chains), &config, |b, config| {
            b.iter(|| {
                let init = init_prototypes(&stats, &h, 1.0, 1.0, config.chains, &RngStream::new(0, 0)).unwrap();
                sgld_chain(&support, &h, &f.episode.targets, init, config).unwrap()
            })
        });
    }
    group.finish();
}

fn episode_gradient(c: &mut Criterion) {
    let f = fixture(100, 32);
    let config = SamplerConfig::default();
    let stream = RngStream::new(0, 1);
    c.bench_function("episode_gradient", |b| {
        b.iter(|| episode_objective_and_grads(&f.episode, &f.graph, &f.params, &config, &stream).unwrap())
    });
}

fn evaluation(c: &mut Criterion) {
    let f = fixture(100, 32);
    let spec = EpisodeSpec {
        episodes: 50,
        ..EpisodeSpec::default()
    };
    let mut group = c.benchmark_group("evaluate_fewshot");
    group.sample_size(10);
    group.bench_function("50_episodes", |b| {
        b.iter(|| {
            evaluate_fewshot(&f.dataset, &f.graph, &f.params, &spec, &SamplerConfig::default(), &RngStream::new(0, 2))
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, knn, sgld, episode_gradient, evaluation);
criterion_main!(benches);

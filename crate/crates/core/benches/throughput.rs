use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use lowmt_core::hpo::{self, SearchSpace, StagedSearchOptions, ToyTrainer};
use lowmt_core::metrics::{self, MetricConfig};
use lowmt_core::subword::{self, UnigramConfig};
use lowmt_core::Execution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "tá", "an", "cat", "ar", "mata", "inniu", "ní", "peataí", "iad", "na", "madraí", "sin", "teaghlaigh", "ina",
    "gcoimeádtar", "chúirt", "go", "bhfuil", "bonn", "cirt", "le", "hathbhreithniú", "rialachán", "ballstát",
];

fn corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(5..30);
            (0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn metrics_bench(c: &mut Criterion) {
    let hyps = corpus(2000, 1);
    let refs = corpus(2000, 2);
    let mut g = c.benchmark_group("corpus_metrics_2000");
    for (name, exec) in MODES {
        let cfg = MetricConfig { execution: exec, ..MetricConfig::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| metrics::evaluate_all(black_box(&hyps), black_box(&refs), &cfg).unwrap())
        });
    }
    g.finish();
}

fn subword_bench(c: &mut Criterion) {
    let text = corpus(3000, 3);
    let lines: Vec<&str> = text.iter().map(String::as_str).collect();
    let mut g = c.benchmark_group("subword_training");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("bpe_400", name), |b| {
            b.iter(|| subword::bpe_train_with(black_box(&lines), 400, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("unigram_200", name), |b| {
            b.iter(|| subword::unigram_train_with(black_box(&lines), &UnigramConfig::new(200), exec).unwrap())
        });
    }
    g.finish();
}

fn hpo_bench(c: &mut Criterion) {
    let space = SearchSpace::transformer();
    let trainer = ToyTrainer::new(0);
    let mut g = c.benchmark_group("staged_search");
    for (name, exec) in MODES {
        let opts = StagedSearchOptions { execution: exec, ..StagedSearchOptions::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| hpo::staged_search(&space, &trainer, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, metrics_bench, subword_bench, hpo_bench);
criterion_main!(benches);

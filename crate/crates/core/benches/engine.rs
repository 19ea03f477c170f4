//! Query batches on the glasses knowledge base, parallel against
//! sequential.

use std::hint::black_box;

use col_core::engine::{query_batch, query_batch_seq, FactSet, QueryOptions};
use col_core::fixtures::case_study;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn workload(n: usize) -> Vec<(FactSet, String)> {
    let observations: [&[(&str, &str)]; 5] = [
        &[("Pain at eyes", "Yes")],
        &[("Pain at eyes", "No")],
        &[("Owns glasses", "No")],
        &[("Type of material", "Synthetic")],
        &[],
    ];
    let goals = ["Owns glasses", "Quality vision", "Pain at eyes", "Breakable"];
    (0..n)
        .map(|i| {
            let facts = FactSet::from_labels(observations[i % observations.len()].iter().copied());
            (facts, goals[(i / observations.len()) % goals.len()].to_string())
        })
        .collect()
}

fn batches(c: &mut Criterion) {
    let kb = case_study().kb;
    let mut group = c.benchmark_group("query_batch");
    group.sample_size(20);
    for n in [64, 512, 4096] {
        let queries = workload(n);
        group.throughput(Throughput::Elements(n as u64));
        for (label, options) in [("advise", QueryOptions::default()), ("deduce", QueryOptions::deduce())] {
            group.bench_with_input(BenchmarkId::new(format!("parallel/{label}"), n), &queries, |b, q| {
                b.iter(|| query_batch(black_box(&kb), q, options))
            });
            group.bench_with_input(BenchmarkId::new(format!("sequential/{label}"), n), &queries, |b, q| {
                b.iter(|| query_batch_seq(black_box(&kb), q, options))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, batches);
criterion_main!(benches);

//! Memory read time against the number of memory frames.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use memtrack::reader::read;
use memtrack_bench::{memory_and_query, DESK_SHAPE};

fn read_over_t(c: &mut Criterion) {
    let mut group = c.benchmark_group("read");
    group.sample_size(20);
    for t in [1usize, 2, 4, 6, 8] {
        let (mem, query) = memory_and_query(DESK_SHAPE, t);
        group.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, _| {
            b.iter(|| read(&mem, &query).expect("read"))
        });
    }
    group.finish();
}

criterion_group!(benches, read_over_t);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use crossband::channel::transmit;
use crossband::{Constellation3D, FastDetector, LinearMap, LinkSnr, MlDetector, QamGrid, RngStream};

fn bench_detect(c: &mut Criterion) {
    let grid = QamGrid::new(16).unwrap();
    let map = LinearMap::new(&grid, 0.5832).unwrap();
    let cons = Constellation3D::linear(&grid, map);
    let snr = LinkSnr::from_db(10.0, 10.0).unwrap();
    let ml = MlDetector::new(&cons, snr);
    let fast = FastDetector::new(&grid, map, snr);
    let mut rng = RngStream::new(99, 0);
    let samples: Vec<_> = (0..4096)
        .map(|_| {
            let k = rng.uniform_index(16);
            transmit(&cons, k, snr, &mut rng).unwrap().to_plane(&map)
        })
        .collect();

    let mut g = c.benchmark_group("detect");
    g.bench_function("ml_exhaustive", |b| {
        b.iter_batched(
            || samples.clone(),
            |s| s.iter().map(|r| ml.detect(r).index).sum::<usize>(),
            BatchSize::SmallInput,
        )
    });
    g.bench_function("fast_lattice", |b| {
        b.iter_batched(
            || samples.clone(),
            |s| s.iter().map(|r| fast.detect(r).index).sum::<usize>(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, bench_detect);
criterion_main!(benches);

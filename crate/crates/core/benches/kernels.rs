//! PRDC and k-NN kernels on the default thread pool against a single thread.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use forte::neighborhood::{knn_radii, min_distances};
use forte::prdc::{prdc_columns, PrdcConfig, RadiusSource};
use forte::theory::{sample_gaussian, GaussianSpec};
use forte::EmbeddingMatrix;

fn data(n: usize, d: usize, stream: u64) -> EmbeddingMatrix {
    sample_gaussian(&GaussianSpec::standard(n, d, 7).with_stream(stream)).unwrap()
}

/// Runs `f` on every available pool: the default one and, with rayon, a single thread.
fn on_pools(c: &mut Criterion, group: &str, param: usize, f: &(dyn Fn() + Sync)) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        g.bench_with_input(BenchmarkId::new("parallel", param), &param, |b, _| b.iter(f));
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_with_input(BenchmarkId::new("sequential", param), &param, |b, _| {
            one.install(|| b.iter(f))
        });
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_with_input(BenchmarkId::new("sequential", param), &param, |b, _| b.iter(f));
    g.finish();
}

fn knn(c: &mut Criterion) {
    for n in [500, 2000] {
        let x = data(n, 64, 0);
        on_pools(c, "knn_radii", n, &|| {
            black_box(knn_radii(&x, 5).unwrap());
        });
        let q = data(n / 2, 64, 1);
        on_pools(c, "min_distances", n, &|| {
            black_box(min_distances(&q, &x).unwrap());
        });
    }
}

fn prdc(c: &mut Criterion) {
    for n in [500, 2000] {
        let refs = data(n, 64, 0);
        let test = data(n / 2, 64, 1);
        for source in [RadiusSource::WithinTestSet, RadiusSource::FromReferenceSet] {
            let cfg = PrdcConfig {
                k: 5,
                radius_source: source,
                ..Default::default()
            };
            on_pools(c, &format!("prdc_columns/{}", source.as_str()), n, &|| {
                black_box(prdc_columns(&test, &refs, &cfg).unwrap());
            });
        }
    }
}

criterion_group!(benches, knn, prdc);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use facegan::autodiff::{Graph, Tensor};
use facegan::geometry::{cylindrical_unwrap, rasterize_uv, sample_mesh_from_uv};
use facegan::model::{NetConfig, NetParams};
use facegan::synth::{synth_dataset, SynthConfig};

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for (ch, size) in [(16, 32), (32, 16), (64, 8)] {
        let x = random(&[4, ch, size, size], 1);
        let w = random(&[ch, ch, 3, 3], 2);
        let b = random(&[ch], 3);
        group.bench_with_input(BenchmarkId::new("forward_backward", format!("{ch}ch_{size}px")), &(), |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let xv = g.leaf(x.clone(), false).unwrap();
                let wv = g.leaf(w.clone(), true).unwrap();
                let bv = g.leaf(b.clone(), true).unwrap();
                let y = g.conv2d(xv, wv, bv).unwrap();
                let loss = g.sum(y).unwrap();
                black_box(g.backward(loss).unwrap());
            })
        });
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let config = NetConfig::default();
    let net = NetParams::<f32>::init(&config, 1).unwrap();
    let x = random(&[8, 3, config.resolution, config.resolution], 4);
    c.bench_function("network_reconstruct_batch8", |b| b.iter(|| black_box(net.reconstruct(&x).unwrap())));
}

fn uv(c: &mut Criterion) {
    let data = synth_dataset(&SynthConfig {
        subjects: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let mesh = &data.meshes[0];
    let layout = cylindrical_unwrap(&data.template).unwrap();
    for res in [32, 128] {
        c.bench_function(&format!("rasterize_uv_{res}"), |b| b.iter(|| black_box(rasterize_uv(mesh, &layout, res).unwrap())));
        let map = rasterize_uv(mesh, &layout, res).unwrap();
        c.bench_function(&format!("sample_mesh_from_uv_{res}"), |b| {
            b.iter(|| black_box(sample_mesh_from_uv(&map, &layout).unwrap()))
        });
    }
}

criterion_group!(benches, conv2d, network, uv);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meltstream_core::autograd::ConvGeom;
use meltstream_core::optflow::{dense_flow, FlowParams};
use meltstream_core::tensor::{gemm, MatMut, MatRef};
use meltstream_core::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_gemm(c: &mut Criterion) {
    let mut g = c.benchmark_group("gemm");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for &(m, k, n) in &[(4, 1024, 256), (64, 576, 3136), (256, 256, 256)] {
        let a = Tensor::<f32>::uniform(&[m, k], -1.0, 1.0, &mut rng);
        let b = Tensor::<f32>::uniform(&[k, n], -1.0, 1.0, &mut rng);
        let mut out = vec![0f32; m * n];
        g.bench_function(BenchmarkId::from_parameter(format!("{m}x{k}x{n}")), |bch| {
            bch.iter(|| {
                gemm(
                    MatRef::new(a.data(), m, k),
                    MatRef::new(b.data(), k, n),
                    0.0,
                    MatMut::new(&mut out, m, n),
                )
            })
        });
    }
    g.finish();
}

fn bench_conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv");
    g.sample_size(20);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x2 = Tensor::<f32>::uniform(&[8, 16, 56, 56], -1.0, 1.0, &mut rng);
    let w2 = Tensor::<f32>::uniform(&[32, 16, 3, 3], -0.1, 0.1, &mut rng);
    let x3 = Tensor::<f32>::uniform(&[2, 16, 8, 28, 28], -1.0, 1.0, &mut rng);
    let w3 = Tensor::<f32>::uniform(&[16, 16, 3, 3, 3], -0.1, 0.1, &mut rng);
    g.bench_function("conv2d_3x3_fwd_bwd", |b| {
        b.iter(|| {
            let mut t = Tape::new();
            let x = t.leaf(x2.clone(), true);
            let w = t.leaf(w2.clone(), true);
            let y = t.conv2d(x, w, None, 1, 1).unwrap();
            let l = t.mean_all(y);
            t.backward(l).unwrap()
        })
    });
    g.bench_function("conv3d_3x3x3_fwd_bwd", |b| {
        b.iter(|| {
            let mut t = Tape::new();
            let x = t.leaf(x3.clone(), true);
            let w = t.leaf(w3.clone(), true);
            let y = t.conv3d(x, w, None, ConvGeom::new([1, 1, 1], [1, 1, 1])).unwrap();
            let l = t.mean_all(y);
            t.backward(l).unwrap()
        })
    });
    g.finish();
}

fn bench_flow(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f1 = Tensor::<f32>::uniform(&[112, 112], 0.0, 1.0, &mut rng);
    let f2 = Tensor::<f32>::uniform(&[112, 112], 0.0, 1.0, &mut rng);
    c.bench_function("horn_schunck_112_100it", |b| b.iter(|| dense_flow(&f1, &f2, FlowParams::default()).unwrap()));
}

criterion_group!(benches, bench_gemm, bench_conv, bench_flow);
criterion_main!(benches);

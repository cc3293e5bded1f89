//! Convolution and pooling checked against direct summation loops.

use meltstream_core::autograd::{ConvGeom, PoolKind};
use meltstream_core::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct 5-loop 3D convolution with zero padding.
fn naive_conv3d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&[f64]>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<f64> {
    let [n, c, s, h, wd] = x.shape()[..] else { panic!() };
    let [co, _, kt, kh, kw] = w.shape()[..] else { panic!() };
    let so = (s + 2 * pad[0] - kt) / stride[0] + 1;
    let ho = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let wo = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let xi = |a: usize, b: usize, t: isize, y: isize, z: isize| -> f64 {
        if t < 0 || y < 0 || z < 0 || t as usize >= s || y as usize >= h || z as usize >= wd {
            0.0
        } else {
            x.data()[(((a * c + b) * s + t as usize) * h + y as usize) * wd + z as usize]
        }
    };
    let mut out = vec![0.0; n * co * so * ho * wo];
    let mut idx = 0;
    for bn in 0..n {
        for oc in 0..co {
            for t in 0..so {
                for y in 0..ho {
                    for z in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b[oc]);
                        for ic in 0..c {
                            for dt in 0..kt {
                                for dy in 0..kh {
                                    for dz in 0..kw {
                                        let wv = w.data()[(((oc * c + ic) * kt + dt) * kh + dy) * kw + dz];
                                        let tt = (t * stride[0] + dt) as isize - pad[0] as isize;
                                        let yy = (y * stride[1] + dy) as isize - pad[1] as isize;
                                        let zz = (z * stride[2] + dz) as isize - pad[2] as isize;
                                        acc += wv * xi(bn, ic, tt, yy, zz);
                                    }
                                }
                            }
                        }
                        out[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, so, ho, wo], out).unwrap()
}

fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let wv = tape.leaf(w.clone(), false);
    let bv = b.map(|b| tape.leaf(b.clone(), false));
    let y = tape.conv2d(xv, wv, bv, stride, pad).unwrap();
    tape.value(y).clone()
}

fn conv3d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, geom: ConvGeom) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let wv = tape.leaf(w.clone(), false);
    let bv = b.map(|b| tape.leaf(b.clone(), false));
    let y = tape.conv3d(xv, wv, bv, geom).unwrap();
    tape.value(y).clone()
}

fn as_5d(t: &Tensor<f64>) -> Tensor<f64> {
    let s = t.shape();
    t.clone().reshape(&[s[0], s[1], 1, s[2], s[3]]).unwrap()
}

#[test]
fn conv2d_diagonal_kernel() {
    let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let y = conv2d(&x, &w, None, 1, 0);
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.data(), &[5.0]);
}

#[test]
fn conv2d_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::uniform(&[2, 1, 5, 7], -1.0, 1.0, &mut rng);
    let w = Tensor::ones(&[1, 1, 1, 1]);
    let b = Tensor::zeros(&[1]);
    assert_eq!(conv2d(&x, &w, Some(&b), 1, 0), x);
}

#[test]
fn conv2d_random_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::<f64>::uniform(&[1, 3, 8, 8], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut rng);
    let b = Tensor::<f64>::uniform(&[4], -1.0, 1.0, &mut rng);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
        let got = conv2d(&x, &w, Some(&b), stride, pad);
        let w5 = w.clone().reshape(&[4, 3, 1, 3, 3]).unwrap();
        let want = naive_conv3d(&as_5d(&x), &w5, Some(b.data()), [1, stride, stride], [0, pad, pad]);
        let want = want.clone().reshape(got.shape()).unwrap();
        assert!(got.max_abs_diff(&want) <= 1e-12, "stride {stride} pad {pad}");
    }
}

#[test]
fn conv3d_identity_and_counting_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f64>::uniform(&[1, 1, 3, 4, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::ones(&[1, 1, 1, 1, 1]);
    assert_eq!(conv3d(&x, &w, Some(&Tensor::zeros(&[1])), ConvGeom::unit()), x);

    let ones = Tensor::ones(&[1, 1, 3, 3, 3]);
    let y = conv3d(&ones, &ones, None, ConvGeom::unit());
    assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
    assert_eq!(y.data(), &[27.0]);
}

#[test]
fn conv3d_random_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::<f64>::uniform(&[2, 2, 6, 7, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(&[3, 2, 3, 2, 3], -1.0, 1.0, &mut rng);
    let b = Tensor::<f64>::uniform(&[3], -1.0, 1.0, &mut rng);
    for (stride, pad) in [([1, 1, 1], [0, 0, 0]), ([2, 1, 2], [1, 1, 1]), ([2, 2, 1], [1, 0, 2])] {
        let got = conv3d(&x, &w, Some(&b), ConvGeom::new(stride, pad));
        let want = naive_conv3d(&x, &w, Some(b.data()), stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }
}

#[test]
fn pooling_matches_naive() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
    let m = tape.pool2d(x, PoolKind::Max, 2, 2, 0).unwrap();
    assert_eq!(tape.value(m).data(), &[4.0]);

    let c = tape.leaf(Tensor::full(&[1, 2, 4, 6], 0.7), false);
    for kind in [PoolKind::Max, PoolKind::Avg] {
        let y = tape.pool2d(c, kind, 2, 2, 0).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = Tensor::<f64>::uniform(&[2, 3, 4, 9, 8], -1.0, 1.0, &mut rng);
    let rv = tape.leaf(r.clone(), false);
    let geom = ConvGeom::new([2, 2, 3], [0, 1, 1]);
    let y = tape.pool(rv, PoolKind::Avg, [2, 3, 3], geom).unwrap();
    // Average pooling equals convolution with a constant kernel, one channel at a time.
    let kernel = Tensor::full(&[1, 1, 2, 3, 3], 1.0 / 18.0);
    for ch in 0..6 {
        let plane = r.slice_outer(0, 2).unwrap();
        let slab: Vec<f64> = plane.data()[ch * 4 * 9 * 8..(ch + 1) * 4 * 9 * 8].to_vec();
        let single = Tensor::from_vec(&[1, 1, 4, 9, 8], slab).unwrap();
        let want = naive_conv3d(&single, &kernel, None, geom.stride, geom.pad);
        let per = want.len();
        let got = &tape.value(y).data()[ch * per..(ch + 1) * per];
        for (a, b) in got.iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear_without_bias(seed in 0u64..10_000, a in -3.0f64..3.0, stride in 1usize..3, pad in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(&[1, 2, 4, 6, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(&[2, 2, 2, 3, 3], -1.0, 1.0, &mut rng);
        let geom = ConvGeom::new([stride, stride, stride], [pad, pad, pad]);
        let lhs = conv3d(&x.map(|v| a * v), &w, None, geom);
        let rhs = conv3d(&x, &w, None, geom).map(|v| a * v);
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn conv3d_matches_naive_on_small_random_shapes(
        seed in 0u64..10_000,
        c in 1usize..4, co in 1usize..4,
        s in 3usize..8, h in 3usize..10, w in 3usize..10,
        kt in 1usize..4, kh in 1usize..4, kw in 1usize..4,
        st in 1usize..3, ph in 0usize..2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(&[1, c, s, h, w], -1.0, 1.0, &mut rng);
        let wt = Tensor::<f64>::uniform(&[co, c, kt, kh, kw], -1.0, 1.0, &mut rng);
        let geom = ConvGeom::new([st, 1, st], [1, ph, 0]);
        let got = conv3d(&x, &wt, None, geom);
        let want = naive_conv3d(&x, &wt, None, geom.stride, geom.pad);
        prop_assert!(got.max_abs_diff(&want) <= 1e-12);
    }
}

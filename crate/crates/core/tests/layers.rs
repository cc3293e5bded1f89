use meltstream_core::nn::{lstm_step, BatchNorm, Ctx, Linear, Mode, ParamStore};
use meltstream_core::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn channel_stats(y: &Tensor<f64>) -> Vec<(f64, f64)> {
    let (n, c) = (y.dim(0), y.dim(1));
    let sp = y.len() / (n * c);
    (0..c)
        .map(|ch| {
            let vals: Vec<f64> = (0..n)
                .flat_map(|b| y.data()[(b * c + ch) * sp..(b * c + ch + 1) * sp].iter().copied())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            (m, v)
        })
        .collect()
}

fn bn_train(x: Tensor<f64>, gamma: f64, beta: f64) -> Tensor<f64> {
    let c = x.dim(1);
    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", c);
    store.get_mut(bn.gamma).data_mut().fill(gamma);
    store.get_mut(bn.beta).data_mut().fill(beta);
    let mut ctx = Ctx::new(&mut store, Mode::Train);
    let xv = ctx.input(x);
    let y = bn.forward(&mut ctx, xv).unwrap();
    ctx.tape.value(y).clone()
}

#[test]
fn batchnorm_output_is_standardised() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::<f64>::uniform(&[4, 3, 5, 5], -7.0, 13.0, &mut rng);
    for (m, v) in channel_stats(&bn_train(x, 1.0, 0.0)) {
        assert!(m.abs() <= 1e-6, "mean {m}");
        assert!((v - 1.0).abs() <= 1e-4, "var {v}");
    }
}

#[test]
fn batchnorm_standardised_input_passes_through() {
    // each channel: values ±1 in equal numbers → mean 0, variance 1
    let x = Tensor::from_vec(&[2, 2, 1, 2], vec![1.0, -1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0]).unwrap();
    let y = bn_train(x.clone(), 1.0, 0.0);
    assert!(y.max_abs_diff(&x) <= 1e-5);
}

#[test]
fn batchnorm_zero_gamma_yields_beta() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::<f64>::uniform(&[3, 2, 4], -1.0, 1.0, &mut rng);
    let y = bn_train(x, 0.0, 0.75);
    assert!(y.data().iter().all(|&v| v == 0.75));
}

#[test]
fn linear_parameter_count() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Linear::new(&mut store, "fc", 4096, 256, &mut rng);
    assert_eq!(store.param_count(), 1_048_832);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lstm_hidden_is_bounded(seed in 0u64..100_000, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::<f64>::uniform(&[2, 3], -scale, scale, &mut rng));
        let h = tape.constant(Tensor::<f64>::uniform(&[2, 4], -1.0, 1.0, &mut rng));
        let c = tape.constant(Tensor::<f64>::uniform(&[2, 4], -scale, scale, &mut rng));
        let w = tape.constant(Tensor::<f64>::uniform(&[7, 16], -scale, scale, &mut rng));
        let b = tape.constant(Tensor::<f64>::uniform(&[16], -scale, scale, &mut rng));
        let (h2, _) = lstm_step(&mut tape, x, h, c, w, b).unwrap();
        prop_assert!(tape.value(h2).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn xent_is_permutation_equivariant(
        seed in 0u64..100_000,
        labels in proptest::collection::vec(0usize..4, 1..6),
        perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = labels.len();
        let logits = Tensor::<f64>::uniform(&[n, 4], -5.0, 5.0, &mut rng);
        // class j moves to column perm[j]
        let mut permuted = vec![0.0; n * 4];
        for i in 0..n {
            for j in 0..4 {
                permuted[i * 4 + perm[j]] = logits.data()[i * 4 + j];
            }
        }
        let moved: Vec<usize> = labels.iter().map(|&y| perm[y]).collect();
        let mut tape = Tape::new();
        let a = tape.constant(logits);
        let b = tape.constant(Tensor::from_vec(&[n, 4], permuted).unwrap());
        let la = tape.softmax_xent(a, &labels).unwrap();
        let lb = tape.softmax_xent(b, &moved).unwrap();
        prop_assert!((tape.value(la).data()[0] - tape.value(lb).data()[0]).abs() <= 1e-12);
    }
}

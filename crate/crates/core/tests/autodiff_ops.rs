use inav_core::autodiff::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Loss = sum(out * R) for a fixed random R, so every output coordinate
/// contributes with a different weight.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let r = tape.constant(rand_tensor(tape.shape(out), &mut rng));
    let p = tape.mul(out, r)?;
    Ok(tape.sum(p))
}

fn check<F>(shapes: &[&[usize]], seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> =
        shapes.iter().enumerate().map(|(i, s)| store.add(format!("p{i}"), rand_tensor(s, &mut rng))).collect();
    grad_check(&mut store, GradCheckOpts::default(), |tape, store| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
        let out = build(tape, store, &vars)?;
        weighted_sum(tape, out, seed)
    })
    .unwrap()
}

#[test]
fn relu_example() {
    let mut store = ParamStore::new();
    let mut tape = Tape::new(false, 0);
    let x = tape.leaf(Tensor::from_vec(vec![-1.0, 2.0]), true);
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    let s = tape.sum(y);
    let g = tape.backward(s, &mut store).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn sum_of_squares_and_detach() {
    let mut store = ParamStore::new();
    let mut tape = Tape::new(false, 0);
    let x = tape.leaf(Tensor::from_vec(vec![3.0]), true);
    let d = tape.leaf(Tensor::from_vec(vec![5.0]), false);
    let xx = tape.mul(x, x).unwrap();
    let dd = tape.mul(xx, d).unwrap();
    let s = tape.sum(dd);
    let g = tape.backward(s, &mut store).unwrap();
    assert_eq!(g.get(x).unwrap(), &[30.0]);
    assert!(g.get(d).is_none());

    let mut tape = Tape::new(false, 0);
    let x = tape.leaf(Tensor::from_vec(vec![3.0]), true);
    let xx = tape.mul(x, x).unwrap();
    let s = tape.sum(xx);
    assert_eq!(tape.backward(s, &mut store).unwrap().get(x).unwrap(), &[6.0]);
}

#[test]
fn mse_gradient_matches_symbolic() {
    // loss = mse(W x, y) with W: 2x3, x: 3, y: 2  ->  dW = 2 (Wx - y) x^T / n
    let w = [[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
    let x = [1.0, 2.0, -1.0];
    let y = [0.3, -0.2];
    let mut store = ParamStore::new();
    let wid = store.add("w", Tensor::new(&[2, 3], w.concat()).unwrap());
    let mut tape = Tape::new(false, 0);
    let wv = tape.param(&store, wid);
    let xv = tape.constant(Tensor::new(&[3, 1], x.to_vec()).unwrap());
    let yv = tape.constant(Tensor::new(&[2, 1], y.to_vec()).unwrap());
    let wx = tape.matmul(wv, xv).unwrap();
    let l = tape.mse(wx, yv).unwrap();
    tape.backward(l, &mut store).unwrap();
    for i in 0..2 {
        let r: f64 = (0..3).map(|k| w[i][k] * x[k]).sum::<f64>() - y[i];
        for k in 0..3 {
            let expect = 2.0 * r * x[k] / 2.0;
            assert!((store.get(wid).grad[i * 3 + k] - expect).abs() < 1e-12);
        }
    }
    // a second backward accumulates
    tape.backward(l, &mut store).unwrap();
    let r0: f64 = (0..3).map(|k| w[0][k] * x[k]).sum::<f64>() - y[0];
    assert!((store.get(wid).grad[0] - 2.0 * r0 * x[0]).abs() < 1e-12);
}

#[test]
fn non_scalar_loss() {
    let mut store = ParamStore::new();
    let mut tape = Tape::new(false, 0);
    let x = tape.leaf(Tensor::zeros(&[2]), true);
    assert!(matches!(tape.backward(x, &mut store), Err(AutodiffError::NonScalarLoss(_))));
}

#[test]
fn shape_mismatch_names_both() {
    let mut tape = Tape::new(false, 0);
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    match tape.add(a, b) {
        Err(AutodiffError::ShapeMismatch { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![3, 2]);
        }
        _ => panic!("expected mismatch"),
    }
}

#[test]
fn causal_conv_example() {
    let mut tape = Tape::new(false, 0);
    let x = tape.constant(Tensor::new(&[1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
    let w = tape.constant(Tensor::new(&[1, 1, 3], vec![1.0, 10.0, 100.0]).unwrap());
    let y = tape.conv1d(x, w, None, ConvOpts::causal(3, 1)).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 5]);
    // output[0] = 100 * x[0]
    assert_eq!(tape.value(y).data(), &[100.0, 210.0, 321.0, 432.0, 543.0]);
}

#[test]
fn lstm_zero_weights() {
    let mut tape = Tape::new(false, 0);
    let x = tape.constant(Tensor::full(&[2, 3], 7.0));
    let h = tape.constant(Tensor::zeros(&[2, 4]));
    let c = tape.constant(Tensor::zeros(&[2, 4]));
    let wx = tape.constant(Tensor::zeros(&[16, 3]));
    let wh = tape.constant(Tensor::zeros(&[16, 4]));
    let b = tape.constant(Tensor::zeros(&[16]));
    let out = tape.lstm_cell(x, h, c, wx, wh, b).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn dropout_modes() {
    let mut tape = Tape::new(false, 0);
    let x = tape.constant(Tensor::full(&[100], 2.0));
    assert_eq!(tape.dropout(x, 0.5), x);

    let mut acc = vec![0.0; 8];
    let masks = 10_000;
    let mut tape = Tape::new(true, 3);
    let x = tape.constant(Tensor::new(&[8], (1..=8).map(f64::from).collect()).unwrap());
    for _ in 0..masks {
        let y = tape.dropout(x, 0.3);
        acc.iter_mut().zip(tape.value(y).data()).for_each(|(a, v)| *a += v);
    }
    for (i, a) in acc.iter().enumerate() {
        let mean = a / masks as f64;
        let want = (i + 1) as f64;
        assert!((mean - want).abs() < 0.02 * want, "{mean} vs {want}");
    }
}

#[test]
fn batchnorm_train_normalizes_and_tracks_running_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let g = store.add("g", Tensor::full(&[3], 1.0));
    let b = store.add("b", Tensor::zeros(&[3]));
    let rm = store.add_buffer("rm", Tensor::zeros(&[3]));
    let rv = store.add_buffer("rv", Tensor::full(&[3], 1.0));
    let mut data = rand_tensor(&[4, 3, 10], &mut rng);
    data.data_mut().iter_mut().for_each(|v| *v = 3.0 * *v + 2.0);
    let mut tape = Tape::new(true, 0);
    let x = tape.constant(data.clone());
    let (gv, bv) = (tape.param(&store, g), tape.param(&store, b));
    let y = tape.batchnorm1d(&store, x, gv, bv, rm, rv).unwrap();
    let out = tape.value(y);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|n| (0..10).map(move |t| (n, t))).map(|(n, t)| out.at(&[n, c, t])).collect();
        let m = vals.iter().sum::<f64>() / 40.0;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 40.0;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-4, "{v}"); // eps = 1e-5 shrinks it slightly
    }
    tape.apply_buffer_updates(&mut store);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|n| (0..10).map(move |t| (n, t))).map(|(n, t)| data.at(&[n, c, t])).collect();
        let m = vals.iter().sum::<f64>() / 40.0;
        assert!((store.value(rm).data()[c] - 0.1 * m).abs() < 1e-12);
    }
    // eval mode uses the running statistics
    let mut tape = Tape::new(false, 0);
    let x = tape.constant(data);
    let (gv, bv) = (tape.param(&store, g), tape.param(&store, b));
    let y = tape.batchnorm1d(&store, x, gv, bv, rm, rv).unwrap();
    let m = store.value(rm).data()[0];
    let s = (store.value(rv).data()[0] + BN_EPS).sqrt();
    assert!((tape.value(y).at(&[0, 0, 0]) - (tape.value(x).at(&[0, 0, 0]) - m) / s).abs() < 1e-12);
}

#[test]
fn batchnorm_normalization_is_tight_without_eps_effect() {
    // with a large variance the eps term is negligible and the 1e-6 bound holds
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let g = store.add("g", Tensor::full(&[2], 1.0));
    let b = store.add("b", Tensor::zeros(&[2]));
    let rm = store.add_buffer("rm", Tensor::zeros(&[2]));
    let rv = store.add_buffer("rv", Tensor::full(&[2], 1.0));
    let mut data = rand_tensor(&[5, 2], &mut rng);
    data.data_mut().iter_mut().for_each(|v| *v *= 1000.0);
    let mut tape = Tape::new(true, 0);
    let x = tape.constant(data);
    let (gv, bv) = (tape.param(&store, g), tape.param(&store, b));
    let y = tape.batchnorm1d(&store, x, gv, bv, rm, rv).unwrap();
    for c in 0..2 {
        let vals: Vec<f64> = (0..5).map(|n| tape.value(y).at(&[n, c])).collect();
        let m = vals.iter().sum::<f64>() / 5.0;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0;
        assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-6);
    }
}

#[test]
fn conv_and_lstm_causality() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = rand_tensor(&[1, 2, 30], &mut rng);
    let w1 = rand_tensor(&[3, 2, 3], &mut rng);
    let w2 = rand_tensor(&[2, 3, 3], &mut rng);
    let run = |x: &Tensor| {
        let mut tape = Tape::new(false, 0);
        let xv = tape.constant(x.clone());
        let a = tape.constant(w1.clone());
        let b = tape.constant(w2.clone());
        let h = tape.conv1d(xv, a, None, ConvOpts::causal(3, 2)).unwrap();
        let h = tape.tanh(h);
        let y = tape.conv1d(h, b, None, ConvOpts::causal(3, 4)).unwrap();
        tape.value(y).clone()
    };
    let mut x1 = x0.clone();
    x1.set(&[0, 1, 17], 5.0);
    let (y0, y1) = (run(&x0), run(&x1));
    for c in 0..2 {
        for t in 0..30 {
            if t < 17 {
                assert_eq!(y0.at(&[0, c, t]), y1.at(&[0, c, t]));
            }
        }
    }
    assert_ne!(y0.at(&[0, 0, 17]), y1.at(&[0, 0, 17]));
}

#[test]
fn parallel_and_sequential_conv_agree_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&[9, 4, 40], &mut rng);
    let w = rand_tensor(&[5, 4, 3], &mut rng);
    let run = |exec: inav_core::par::Exec| {
        let mut store = ParamStore::new();
        let wid = store.add("w", w.clone());
        let mut tape = Tape::new(true, 0).with_exec(exec);
        let xv = tape.leaf(x.clone(), true);
        let wv = tape.param(&store, wid);
        let y = tape.conv1d(xv, wv, None, ConvOpts { stride: 2, dilation: 3, pad_left: 2, pad_right: 1 }).unwrap();
        let l = weighted_sum(&mut tape, y, 1).unwrap();
        let g = tape.backward(l, &mut store).unwrap();
        (tape.value(y).clone(), store.get(wid).grad.clone(), g.get(xv).unwrap().to_vec())
    };
    assert_eq!(run(inav_core::par::Exec::Sequential), run(inav_core::par::Exec::Parallel));
}

#[test]
fn linear_layer_gradcheck() {
    let e = check(&[&[4, 3], &[2, 3], &[2]], 1, |t, _, v| t.linear(v[0], v[1], Some(v[2])));
    assert!(e < 1e-8, "{e}");
}

#[test]
fn dilated_conv_stack_gradcheck() {
    let e = check(&[&[2, 2, 20], &[3, 2, 3], &[3], &[2, 3, 3]], 2, |t, _, v| {
        let h = t.conv1d(v[0], v[1], Some(v[2]), ConvOpts::causal(3, 2))?;
        let h = t.tanh(h);
        t.conv1d(h, v[3], None, ConvOpts::causal(3, 4))
    });
    assert!(e < 1e-6, "{e}");
}

#[test]
fn batchnorm_gradcheck_with_running_buffers() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let x = store.add("x", rand_tensor(&[3, 2, 5], &mut rng));
    let g = store.add("g", rand_tensor(&[2], &mut rng));
    let b = store.add("b", rand_tensor(&[2], &mut rng));
    let rm = store.add_buffer("rm", Tensor::zeros(&[2]));
    let rv = store.add_buffer("rv", Tensor::full(&[2], 1.0));
    let e = grad_check(&mut store, GradCheckOpts::default(), |tape, store| {
        let (xv, gv, bv) = (tape.param(store, x), tape.param(store, g), tape.param(store, b));
        let y = tape.batchnorm1d(store, xv, gv, bv, rm, rv)?;
        weighted_sum(tape, y, 4)
    })
    .unwrap();
    assert!(e < 1e-6, "{e}");
}

#[derive(Debug, Clone, Copy)]
enum OpCase {
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    MatMul,
    Conv,
    Relu,
    Tanh,
    Sigmoid,
    Abs,
    Dropout,
    Bilinear,
    Lstm,
    Concat,
    Slice,
    SwapLast,
    SumAxis,
    Mean,
    Mse,
    L2Norm,
    FrameTransform,
    ChannelBias,
}

const ALL: [OpCase; 23] = [
    OpCase::Add,
    OpCase::Sub,
    OpCase::Mul,
    OpCase::Scale,
    OpCase::AddScalar,
    OpCase::MatMul,
    OpCase::Conv,
    OpCase::Relu,
    OpCase::Tanh,
    OpCase::Sigmoid,
    OpCase::Abs,
    OpCase::Dropout,
    OpCase::Bilinear,
    OpCase::Lstm,
    OpCase::Concat,
    OpCase::Slice,
    OpCase::SwapLast,
    OpCase::SumAxis,
    OpCase::Mean,
    OpCase::Mse,
    OpCase::L2Norm,
    OpCase::FrameTransform,
    OpCase::ChannelBias,
];

fn op_error(case: OpCase, b: usize, c: usize, t: usize, seed: u64) -> f64 {
    let s3: &[usize] = &[b, c, t];
    match case {
        OpCase::Add => check(&[s3, s3], seed, |tp, _, v| tp.add(v[0], v[1])),
        OpCase::Sub => check(&[s3, s3], seed, |tp, _, v| tp.sub(v[0], v[1])),
        OpCase::Mul => check(&[s3, s3], seed, |tp, _, v| tp.mul(v[0], v[1])),
        OpCase::Scale => check(&[s3], seed, |tp, _, v| Ok(tp.scale(v[0], -1.7))),
        OpCase::AddScalar => check(&[s3], seed, |tp, _, v| Ok(tp.add_scalar(v[0], 0.3))),
        OpCase::MatMul => check(&[&[b, c], &[c, t]], seed, |tp, _, v| tp.matmul(v[0], v[1])),
        OpCase::Conv => check(&[s3, &[2, c, 2], &[2]], seed, |tp, _, v| {
            tp.conv1d(v[0], v[1], Some(v[2]), ConvOpts { stride: 1 + t % 2, dilation: 1 + c % 2, pad_left: 1, pad_right: 1 })
        }),
        OpCase::Relu => check(&[s3], seed, |tp, _, v| Ok(tp.relu(v[0]))),
        OpCase::Tanh => check(&[s3], seed, |tp, _, v| Ok(tp.tanh(v[0]))),
        OpCase::Sigmoid => check(&[s3], seed, |tp, _, v| Ok(tp.sigmoid(v[0]))),
        OpCase::Abs => check(&[s3], seed, |tp, _, v| Ok(tp.abs(v[0]))),
        OpCase::Dropout => check(&[s3], seed, |tp, _, v| Ok(tp.dropout(v[0], 0.4))),
        OpCase::Bilinear => check(&[&[b, c], &[b, t], &[3, c, t], &[3]], seed, |tp, _, v| tp.bilinear(v[0], v[1], v[2], Some(v[3]))),
        OpCase::Lstm => check(&[&[b, c], &[b, t], &[b, t], &[4 * t, c], &[4 * t, t], &[4 * t]], seed, |tp, _, v| {
            tp.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])
        }),
        OpCase::Concat => check(&[s3, &[b, c + 1, t]], seed, |tp, _, v| tp.concat(&[v[0], v[1]], 1)),
        OpCase::Slice => check(&[s3], seed, |tp, _, v| tp.slice(v[0], 2, t / 2, t - t / 2)),
        OpCase::SwapLast => check(&[s3], seed, |tp, _, v| tp.swap_last(v[0])),
        OpCase::SumAxis => check(&[s3], seed, |tp, _, v| tp.sum_axis(v[0], 2)),
        OpCase::Mean => check(&[s3], seed, |tp, _, v| Ok(tp.mean(v[0]))),
        OpCase::Mse => check(&[s3, s3], seed, |tp, _, v| tp.mse(v[0], v[1])),
        OpCase::L2Norm => check(&[s3], seed, |tp, _, v| tp.l2norm(v[0], 1)),
        OpCase::FrameTransform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
            let mats: Vec<f64> = (0..b * t * 2 * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            check(&[s3], seed, move |tp, _, v| tp.frame_transform(v[0], mats.clone(), 2))
        }
        OpCase::ChannelBias => check(&[s3, &[c]], seed, |tp, _, v| tp.add_channel_bias(v[0], v[1])),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn every_op_matches_finite_differences(
        case in 0usize..ALL.len(),
        b in 1usize..4,
        c in 1usize..4,
        t in 2usize..6,
        seed in any::<u64>(),
    ) {
        let e = op_error(ALL[case], b, c, t, seed);
        prop_assert!(e < 1e-6, "{:?} error {}", ALL[case], e);
    }
}

#[test]
fn op_set_is_covered_deterministically() {
    for (k, &case) in ALL.iter().enumerate() {
        let e = op_error(case, 2, 3, 4, k as u64);
        assert!(e < 1e-6, "{case:?}: {e}");
    }
}

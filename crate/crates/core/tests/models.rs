use inav_core::autodiff::{Tape, Tensor};
use inav_core::models::*;
use inav_core::par::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
}

fn zero_params(model: &mut Model, prefix: &str) {
    let ids: Vec<_> = model.store().iter().filter(|(_, p)| p.name.starts_with(prefix)).map(|(id, _)| id).collect();
    assert!(!ids.is_empty());
    for id in ids {
        let n = model.store().value(id).len();
        model.store_mut().set_value(id, &vec![0.0; n]);
    }
}

#[test]
fn parameter_counts_are_frozen() {
    let count = |c: ModelConfig| Model::new(c, 0).unwrap().param_count();
    assert_eq!(count(ModelConfig::Resnet(ResNetConfig::default())), RESNET_PARAMS);
    assert_eq!(count(ModelConfig::Lstm(LstmConfig::default())), LSTM_PARAMS);
    assert_eq!(count(ModelConfig::Tcn(TcnConfig::default())), TCN_PARAMS);
    assert_eq!(count(ModelConfig::Heading(HeadingNetConfig::default())), LSTM_PARAMS);
}

// Direct counts for the standard configurations.
const RESNET_PARAMS: usize = 4_109_826;
const LSTM_PARAMS: usize = 217_786;
const TCN_PARAMS: usize = 176_462;

#[test]
fn lstm_count_by_hand() {
    // bilinear 32*6*6 + 32; layer l: 4h(in + h) + 4h; head 100*2 + 2
    let h = 100;
    let expect = 32 * 36 + 32 + (4 * h * (38 + h) + 4 * h) + 2 * (4 * h * (2 * h) + 4 * h) + h * 2 + 2;
    assert_eq!(Model::new(ModelConfig::Lstm(LstmConfig::default()), 0).unwrap().param_count(), expect);
}

#[test]
fn tcn_count_by_hand_and_receptive_field() {
    let cfg = TcnConfig::default();
    let mut expect = 0;
    let mut c_in = 6;
    for &c in &cfg.channels {
        expect += c * c_in * 3 + c + c * c * 3 + c;
        if c != c_in {
            expect += c * c_in + c;
        }
        c_in = c;
    }
    expect += c_in * 2 + 2;
    let m = Model::new(ModelConfig::Tcn(cfg.clone()), 0).unwrap();
    assert_eq!(m.param_count(), expect);
    assert_eq!(cfg.receptive_field(), 253);
    assert_eq!(m.receptive_field(), Some(253));
}

#[test]
fn resnet_zero_head_and_determinism() {
    let cfg = ModelConfig::Resnet(ResNetConfig::narrow(8));
    let x = rand_tensor(&[2, 6, 200], 1);
    let a = Model::new(cfg.clone(), 5).unwrap();
    let b = Model::new(cfg.clone(), 5).unwrap();
    let ya = a.predict_windows(&x, Exec::Sequential).unwrap();
    let yb = b.predict_windows(&x, Exec::Parallel).unwrap();
    assert_eq!(ya, yb);
    assert_eq!(ya.shape(), &[2, 2]);

    // two identical windows -> identical rows
    let mut twin = x.data()[..1200].to_vec();
    twin.extend_from_slice(&x.data()[..1200]);
    let y = a.predict_windows(&Tensor::new(&[2, 6, 200], twin).unwrap(), Exec::Sequential).unwrap();
    assert_eq!(y.data()[..2], y.data()[2..]);

    let mut z = a.clone();
    zero_params(&mut z, "out.");
    let y = z.predict_windows(&x, Exec::Sequential).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    assert!(a.predict_windows(&rand_tensor(&[1, 6, 100], 2), Exec::Sequential).is_err());
}

#[test]
fn tcn_is_causal() {
    let m = Model::new(ModelConfig::Tcn(TcnConfig::default()), 3).unwrap();
    let x0 = rand_tensor(&[1, 6, 400], 4);
    let mut x1 = x0.clone();
    for c in 0..6 {
        x1.set(&[0, c, 300], 9.0);
    }
    let (y0, _) = m.predict_seq(&x0, None, Exec::Sequential).unwrap();
    let (y1, _) = m.predict_seq(&x1, None, Exec::Sequential).unwrap();
    for c in 0..2 {
        for t in 0..300 {
            assert_eq!(y0.at(&[0, c, t]), y1.at(&[0, c, t]));
        }
    }
    assert_ne!(y0.at(&[0, 0, 300]), y1.at(&[0, 0, 300]));
    // and frame t only looks 252 frames back
    let mut x2 = x0.clone();
    x2.set(&[0, 0, 10], 9.0);
    let (y2, _) = m.predict_seq(&x2, None, Exec::Sequential).unwrap();
    for t in 263..400 {
        assert_eq!(y0.at(&[0, 0, t]), y2.at(&[0, 0, t]));
    }
    assert_ne!(y0.at(&[0, 0, 262]), y2.at(&[0, 0, 262]));
}

#[test]
fn lstm_chunked_equals_one_shot() {
    for cfg in [ModelConfig::Lstm(LstmConfig::default()), ModelConfig::Heading(HeadingNetConfig::default())] {
        let m = Model::new(cfg, 7).unwrap();
        let x = rand_tensor(&[2, 6, 50], 8);
        let (full, _) = m.predict_seq(&x, None, Exec::Sequential).unwrap();
        let part = |from: usize, to: usize| {
            let mut d = Vec::new();
            for b in 0..2 {
                for c in 0..6 {
                    for t in from..to {
                        d.push(x.at(&[b, c, t]));
                    }
                }
            }
            Tensor::new(&[2, 6, to - from], d).unwrap()
        };
        let (y1, s1) = m.predict_seq(&part(0, 20), None, Exec::Sequential).unwrap();
        let (y2, _) = m.predict_seq(&part(20, 50), s1.as_ref(), Exec::Sequential).unwrap();
        for b in 0..2 {
            for c in 0..2 {
                for t in 0..50 {
                    let got = if t < 20 { y1.at(&[b, c, t]) } else { y2.at(&[b, c, t - 20]) };
                    assert!((got - full.at(&[b, c, t])).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn lstm_is_causal_and_zero_head_is_zero() {
    let mut m = Model::new(ModelConfig::Heading(HeadingNetConfig::default()), 1).unwrap();
    let x0 = rand_tensor(&[1, 6, 30], 2);
    let mut x1 = x0.clone();
    x1.set(&[0, 3, 20], -7.0);
    let (y0, _) = m.predict_seq(&x0, None, Exec::Sequential).unwrap();
    let (y1, _) = m.predict_seq(&x1, None, Exec::Sequential).unwrap();
    for t in 0..20 {
        assert_eq!(y0.at(&[0, 0, t]), y1.at(&[0, 0, t]));
    }
    zero_params(&mut m, "head.");
    let (y, _) = m.predict_seq(&x0, None, Exec::Sequential).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_passes_are_finite() {
    let n = 1000;
    let tcn = Model::new(ModelConfig::Tcn(TcnConfig::default()), 0).unwrap();
    assert!(tcn.predict_seq(&rand_tensor(&[n, 6, 20], 1), None, Exec::Parallel).unwrap().0.is_finite());
    let lstm = Model::new(ModelConfig::Lstm(LstmConfig::default()), 0).unwrap();
    assert!(lstm.predict_seq(&rand_tensor(&[n, 6, 5], 2), None, Exec::Parallel).unwrap().0.is_finite());
    let res = Model::new(ModelConfig::Resnet(ResNetConfig::narrow(8)), 0).unwrap();
    assert!(res.predict_windows(&rand_tensor(&[n, 6, 200], 3), Exec::Parallel).unwrap().is_finite());
}

#[test]
fn train_mode_batchnorm_updates_running_stats() {
    let m = Model::new(ModelConfig::Resnet(ResNetConfig::narrow(16)), 0).unwrap();
    let mut tape = Tape::new(true, 0);
    let x = tape.constant(rand_tensor(&[3, 6, 200], 5));
    let y = m.forward_window(&mut tape, x).unwrap();
    assert_eq!(tape.shape(y), &[3, 2]);
    assert!(!tape.take_buffer_updates().is_empty());
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = Model::new(ModelConfig::Tcn(TcnConfig::small()), 9).unwrap();
    let meta = TrainingMeta { epoch: 4, val_loss: Some(0.25), seed: 9 };
    save_checkpoint(&m, &meta, &path).unwrap();
    let (back, meta2) = load_checkpoint(&path).unwrap();
    assert_eq!(meta2, meta);
    assert_eq!(back.config(), m.config());
    for ((_, a), (_, b)) in m.store().iter().zip(back.store().iter()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    let x = rand_tensor(&[1, 6, 40], 1);
    assert_eq!(m.predict_seq(&x, None, Exec::Sequential).unwrap().0, back.predict_seq(&x, None, Exec::Sequential).unwrap().0);

    // truncated file
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(ModelError::MissingParameter(_))));
    std::fs::write(&cut, &bytes[..3]).unwrap();
    assert!(matches!(load_checkpoint(&cut), Err(ModelError::VersionMismatch(_))));

    // cross-config load
    let mut other = Model::new(ModelConfig::Tcn(TcnConfig::default()), 0).unwrap();
    assert!(matches!(other.load_params(&path), Err(ModelError::ShapeMismatch { .. })));
}

use inav_core::autodiff::{grad_check_report, GradCheckOpts, Tape};
use inav_core::geom::{rotate2d, UnitQuaternion, Vec3, YawAngle};
use inav_core::models::*;
use inav_core::par::Exec;
use inav_core::seqdata::{SampleWindow, SensorSequence, SequenceMeta};
use inav_core::synth::*;
use inav_core::train::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Constant-velocity motion whose gyro channel carries the world velocity,
/// so a per-frame linear map reproduces the velocity exactly.
fn linear_motion(v: [f64; 2], n: usize) -> SensorSequence {
    let ts: Vec<f64> = (0..n).map(|i| i as f64 / 200.0).collect();
    SensorSequence {
        name: format!("lin_{}_{}", v[0], v[1]),
        gt_pos: ts.iter().map(|t| Vec3::new(v[0] * t, v[1] * t, 0.0)).collect(),
        gyro: vec![Vec3::new(v[0], v[1], 0.0); n],
        accel: vec![Vec3::new(0.0, 0.0, GRAVITY); n],
        q_device: vec![UnitQuaternion::IDENTITY; n],
        gt_heading: Some(vec![v[0].atan2(v[1]); n]),
        timestamps: ts,
        meta: SequenceMeta::default(),
    }
}

fn pointwise_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig::Pointwise(PointwiseConfig::default()),
        objective: Objective::DirectMse,
        window: 40,
        loss_frames: Some(40),
        window_gap: [20, 20],
        batch_size: 8,
        lr: 0.01,
        plateau_factor: 0.5,
        patience: 3,
        max_epochs: 50,
        ..TrainConfig::tcn()
    }
}

fn linear_sets() -> (Vec<SensorSequence>, Vec<SensorSequence>) {
    let train = [[1.0, 0.0], [0.0, 1.2], [-0.7, 0.4], [0.3, -0.9]].iter().map(|v| linear_motion(*v, 400)).collect();
    let val = [[0.5, 0.5], [-1.1, -0.2]].iter().map(|v| linear_motion(*v, 400)).collect();
    (train, val)
}

#[test]
fn pointwise_model_solves_linear_motion() {
    let (train, val) = linear_sets();
    let cfg = pointwise_config();
    let model = Model::new(cfg.model.clone(), 1).unwrap();
    let out = fit(model, &train, &val, &cfg, Exec::Parallel).unwrap();
    let best = out.log.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 1e-6, "best val loss {best}");
    assert_eq!(out.meta.val_loss, Some(best));
    assert_eq!(out.log.len(), 50);

    // the trajectory of a held-out sequence follows from the same weights
    let est = predict_trajectory(&out.model, &val[0], InputFrame::Hacf, Exec::Sequential).unwrap();
    let gt = inav_core::metrics::Trajectory2D::from_ground_truth(&val[0]);
    assert!(inav_core::metrics::ate(&est, &gt).unwrap() < 1e-3);
}

#[test]
fn fit_is_deterministic_and_exec_independent() {
    let (train, val) = linear_sets();
    let cfg = TrainConfig { max_epochs: 4, ..pointwise_config() };
    let run = |exec| fit(Model::new(cfg.model.clone(), 3).unwrap(), &train, &val, &cfg, exec).unwrap();
    let a = run(Exec::Parallel);
    let b = run(Exec::Parallel);
    let c = run(Exec::Sequential);
    assert_eq!(a.log, b.log);
    assert_eq!(a.log, c.log);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("log.csv");
    write_log_csv(&a.log, &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("epoch,train_loss,val_loss,lr\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn errors() {
    let (train, val) = linear_sets();
    let cfg = pointwise_config();
    let short = vec![linear_motion([1.0, 0.0], 10)];
    let m = || Model::new(cfg.model.clone(), 0).unwrap();
    assert!(matches!(fit(m(), &train, &short, &cfg, Exec::Sequential), Err(TrainError::EmptyDataset(_))));
    assert!(matches!(fit(m(), &short, &val, &cfg, Exec::Sequential), Err(TrainError::EmptyDataset(_))));

    let mut bad = train.clone();
    bad[0].gyro[100] = Vec3::new(f64::NAN, 0.0, 0.0);
    let bad: Vec<_> = bad.into_iter().take(1).collect();
    assert!(matches!(fit(m(), &bad, &val, &cfg, Exec::Sequential), Err(TrainError::DivergedLoss { .. })));

    let other = Model::new(ModelConfig::Tcn(TcnConfig::small()), 0).unwrap();
    assert!(matches!(fit(other, &train, &val, &cfg, Exec::Sequential), Err(TrainError::InvalidConfig(_))));
}

#[test]
fn masked_heading_batch_leaves_parameters_unchanged() {
    let body = LstmConfig { hidden: 8, layers: 1, bilinear_features: 4, ..LstmConfig::default() };
    let cfg = TrainConfig {
        model: ModelConfig::Heading(HeadingNetConfig { body: LstmConfig { out_dim: 2, ..body } }),
        window: 60,
        batch_size: 4,
        ..TrainConfig::heading()
    };
    let still = vec![linear_motion([0.0, 0.0], 300), linear_motion([0.05, 0.05], 300)];
    let moving = vec![linear_motion([1.0, 0.0], 300)];
    let model = Model::new(cfg.model.clone(), 0).unwrap();
    let mut trainer = Trainer::new(model, cfg.clone(), Exec::Sequential).unwrap();
    let data = WindowData::new(&still, &cfg, Exec::Sequential).unwrap();
    let windows: Vec<SampleWindow> =
        (0..4).map(|k| SampleWindow { seq: k % 2, start: 50 * k, len: 60, yaw: YawAngle::new(k as f64) }).collect();
    let before: Vec<Vec<u64>> =
        trainer.model().store().iter().map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect()).collect();
    assert_eq!(trainer.step(&data, &windows, 0).unwrap(), None);
    let after: Vec<Vec<u64>> =
        trainer.model().store().iter().map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect()).collect();
    assert_eq!(before, after);

    let data = WindowData::new(&moving, &cfg, Exec::Sequential).unwrap();
    let w = [SampleWindow { seq: 0, start: 10, len: 60, yaw: YawAngle::new(0.3) }];
    assert!(trainer.step(&data, &w, 0).unwrap().is_some());
    let changed: Vec<Vec<u64>> =
        trainer.model().store().iter().map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect()).collect();
    assert_ne!(before, changed);
}

#[test]
fn heading_update_mask_rule() {
    let s = linear_motion([1.0, 0.0], 300);
    let w = SampleWindow { seq: 0, start: 100, len: 50, yaw: YawAngle::new(0.0) };
    assert!(heading_update_mask(&s, &w, 30.0).unwrap());
    let s = linear_motion([0.1, 0.0], 300);
    // smoothing a constant 0.1 m/s leaves it at (about) 0.1, never above
    let v = 0.1f64;
    assert!(!velocity_mask([v, 0.0]));
    assert!(!heading_update_mask(&SensorSequence { gt_pos: vec![Vec3::ZERO; 300], ..s }, &w, 30.0).unwrap());
}

proptest! {
    #[test]
    fn losses_are_yaw_invariant(
        p in prop::array::uniform2(-5.0f64..5.0),
        t in prop::array::uniform2(-5.0f64..5.0),
        rows in prop::collection::vec(prop::array::uniform2(-1.0f64..1.0), 1..20),
        theta in -7.0f64..7.0,
    ) {
        let r = YawAngle::new(theta);
        prop_assert!((mse2(rotate2d(p, r), rotate2d(t, r)) - mse2(p, t)).abs() <= 1e-12);
        let rotated: Vec<[f64; 2]> = rows.iter().map(|v| rotate2d(*v, r)).collect();
        let a = latent_velocity_loss(&rows, t);
        let b = latent_velocity_loss(&rotated, rotate2d(t, r));
        prop_assert!((a - b).abs() <= 1e-12);
        // the integration layer is an exact sum
        let mut tape = Tape::new(false, 0);
        let n = rows.len();
        let data: Vec<f64> = rows.iter().map(|v| v[0]).chain(rows.iter().map(|v| v[1])).collect();
        let x = tape.constant(inav_core::autodiff::Tensor::new(&[1, 2, n], data).unwrap());
        let s = tape.sum_axis(x, 2).unwrap();
        let sum = rows.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0], a[1] + v[1]]);
        prop_assert!((tape.value(s).data()[0] - sum[0]).abs() <= 1e-12);
        prop_assert!((tape.value(s).data()[1] - sum[1]).abs() <= 1e-12);
    }
}

fn synthetic_walks(n: usize, seconds: f64) -> Vec<SensorSequence> {
    let walk = TrajectorySpec::straight(seconds, 1.2)
        .with_ramp(1.0)
        .with_path(PathKind::SmoothRandomWalk { max_turn_rate: 0.5, speed_jitter: 0.2, knot_s: 2.0 })
        .with_gait(GaitSpec { step_hz: 1.8, bounce_mps2: 2.0, surge_gain: 1.0 });
    let spec = DatasetSpec { n_subjects: 2, n_unseen_subjects: 0, ..DatasetSpec::new(n, vec![walk]) };
    gen_dataset(&spec, 5, Exec::Parallel).unwrap()
}

fn check_graph(cfg: &TrainConfig, seqs: &[SensorSequence], windows: &[SampleWindow]) -> f64 {
    let model = Model::new(cfg.model.clone(), 2).unwrap();
    let data = WindowData::new(seqs, cfg, Exec::Sequential).unwrap();
    let batch = Batch::assemble(&data, windows, cfg, Exec::Sequential).unwrap();
    let mut store = model.store().clone();
    let opts = GradCheckOpts { max_coords: Some(4), ..GradCheckOpts::default() };
    let r = grad_check_report(&mut store, opts, |tape, store| {
        Trainer::loss_graph(&model, cfg, data.dt(), tape, store, &batch).map_err(|e| match e {
            TrainError::Autodiff(a) => a,
            other => inav_core::autodiff::AutodiffError::InvalidArgument(other.to_string()),
        })
    })
    .unwrap();
    // most coordinates sit on a smooth piece
    assert!(r.checked >= 3 * r.skipped_kinks.max(1), "{r:?}");
    r.max_rel_err
}

fn windows(len: usize, starts: &[usize]) -> Vec<SampleWindow> {
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| SampleWindow { seq: k % 2, start: s, len, yaw: YawAngle::new(0.7 * k as f64) })
        .collect()
}

#[test]
fn full_graphs_pass_grad_check() {
    let seqs = synthetic_walks(2, 6.0);
    let tcn = TrainConfig { model: ModelConfig::Tcn(TcnConfig::small()), ..TrainConfig::tcn() };
    let err = check_graph(&tcn, &seqs, &windows(400, &[1, 300]));
    assert!(err < 1e-5, "tcn latent {err}");

    let local = TrainConfig {
        model: ModelConfig::Tcn(TcnConfig { channels: vec![4, 4, 4], out_dim: 3, ..TcnConfig::default() }),
        frame: InputFrame::Local,
        window: 60,
        ..TrainConfig::tcn()
    };
    let err = check_graph(&local, &seqs, &windows(60, &[5, 200]));
    assert!(err < 1e-5, "local latent {err}");

    let lstm = TrainConfig {
        model: ModelConfig::Lstm(LstmConfig { hidden: 6, layers: 2, bilinear_features: 4, ..LstmConfig::default() }),
        window: 30,
        ..TrainConfig::lstm()
    };
    let err = check_graph(&lstm, &seqs, &windows(30, &[3, 100]));
    assert!(err < 1e-5, "lstm latent {err}");
    let direct = TrainConfig { objective: Objective::DirectMse, ..lstm };
    let err = check_graph(&direct, &seqs, &windows(30, &[3, 100]));
    assert!(err < 1e-5, "lstm direct {err}");

    let heading = TrainConfig {
        model: ModelConfig::Heading(HeadingNetConfig {
            body: LstmConfig { hidden: 6, layers: 1, bilinear_features: 4, out_dim: 2, ..LstmConfig::default() },
        }),
        window: 30,
        ..TrainConfig::heading()
    };
    let err = check_graph(&heading, &seqs, &windows(30, &[3, 100]));
    assert!(err < 1e-5, "heading {err}");

    let resnet = TrainConfig { model: ModelConfig::Resnet(ResNetConfig::narrow(16)), ..TrainConfig::resnet() };
    let err = check_graph(&resnet, &seqs, &windows(200, &[1, 50, 300]));
    assert!(err < 1e-5, "resnet strided {err}");
}

#[test]
fn random_seed_changes_initialisation_only() {
    let a = Model::new(ModelConfig::Tcn(TcnConfig::small()), 1).unwrap();
    let b = Model::new(ModelConfig::Tcn(TcnConfig::small()), 2).unwrap();
    assert_ne!(a.store().iter().next().unwrap().1.value, b.store().iter().next().unwrap().1.value);
    let _ = ChaCha8Rng::seed_from_u64(0);
}

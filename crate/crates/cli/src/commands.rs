//! Implementations of the subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use inav_core::baselines::{ndi_default, pdr, PdrConfig};
use inav_core::metrics::{align_first_5s, ate, rte, MetricsReport, Trajectory2D, RTE_INTERVAL_S};
use inav_core::models::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use inav_core::par::Exec;
use inav_core::seqdata::{load_sequence, save_sequence, SensorSequence, Split};
use inav_core::synth::{gen_dataset, DatasetSpec, GaitSpec, PathKind, TrajectorySpec};
use inav_core::train::{fit, predict_trajectory, write_log_csv, InputFrame, TrainConfig};
use serde::Serialize;
use serde_json::Value;

use crate::{
    config_hash, manifest_path, write_atomic, AlignArg, CliError, CompareArgs, EvaluateArgs, FrameArg, PredictArgs,
    RunManifest, SimulateArgs, SplitArg, TrainArgs, TrainOverrides,
};

const SPLITS_FILE: &str = "splits.json";
const MANIFEST_FILE: &str = "manifest.json";

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Dataset generated when `simulate` gets no `--spec`: one-minute walks
/// with wandering speed and heading, six subjects (one unseen) and random
/// device mountings.
pub fn default_dataset_spec() -> DatasetSpec {
    let walk = TrajectorySpec::straight(60.0, 1.2)
        .with_ramp(1.0)
        .with_path(PathKind::SmoothRandomWalk { max_turn_rate: 0.5, speed_jitter: 0.25, knot_s: 3.0 })
        .with_gait(GaitSpec { step_hz: 1.8, bounce_mps2: 2.0, surge_gain: 1.0 });
    DatasetSpec::new(30, vec![walk])
}

pub(crate) fn simulate(args: &SimulateArgs, exec: Exec) -> Result<(), CliError> {
    let start = Instant::now();
    let mut spec = match &args.spec {
        Some(p) => serde_json::from_slice::<DatasetSpec>(&fs::read(p).map_err(|e| CliError::from(e).at(p))?)
            .map_err(|e| CliError::from(e).at(p))?,
        None => default_dataset_spec(),
    };
    if let Some(n) = args.count {
        spec.n_sequences = n;
    }
    let seqs = gen_dataset(&spec, args.seed, exec)?;

    fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new("simulate", config_hash(&(&spec, args.seed)), Some(args.seed));
    if let Some(p) = &args.spec {
        manifest.inputs.push(path_str(p));
    }
    let mut splits: std::collections::BTreeMap<Split, Vec<String>> = Default::default();
    for s in &seqs {
        let csv = args.out.join(format!("{}.csv", s.name));
        save_sequence(s, &csv)?;
        manifest.outputs.push(path_str(&csv));
        splits.entry(s.meta.split).or_default().push(s.name.clone());
    }
    let splits_path = args.out.join(SPLITS_FILE);
    let mut bytes = serde_json::to_vec_pretty(&splits)?;
    bytes.push(b'\n');
    write_atomic(&splits_path, &bytes)?;
    manifest.outputs.push(path_str(&splits_path));
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    Ok(())
}

/// Every sequence CSV in `dir`, ordered by file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<SensorSequence>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::from(e).at(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::input(format!("{}: no sequence CSVs found", dir.display())));
    }
    paths.iter().map(|p| load_sequence(p).map_err(|e| CliError::from(e).at(p))).collect()
}

fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && same_arch(slot, &v) => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Nested objects are merged field by field unless they are model configs
/// of different architectures, which replace each other wholesale.
fn same_arch(a: &Value, b: &Value) -> bool {
    match (a.get("arch"), b.get("arch")) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

/// The training configuration for `arch`: architecture defaults, then the
/// optional JSON `file` merged over them, then the command-line overrides.
pub fn effective_train_config(arch: &str, file: Option<Value>, flags: &TrainOverrides) -> Result<TrainConfig, CliError> {
    let defaults = TrainConfig::for_arch(arch).ok_or_else(|| CliError::input(format!("unknown architecture `{arch}`")))?;
    let mut cfg = defaults;
    if let Some(patch) = file {
        let mut v = serde_json::to_value(&cfg)?;
        merge_json(&mut v, patch);
        cfg = serde_json::from_value(v).map_err(|e| CliError::input(format!("config: {e}")))?;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(e) = flags.epochs {
        cfg.max_epochs = e;
    }
    if let Some(lr) = flags.lr {
        cfg.lr = lr;
    }
    if let Some(b) = flags.batch_size {
        cfg.batch_size = b;
    }
    if let Some(b) = flags.max_batches {
        cfg.max_batches_per_epoch = Some(b);
    }
    if let Some(f) = flags.frame {
        cfg.frame = match f {
            FrameArg::Hacf => InputFrame::Hacf,
            FrameArg::Local => InputFrame::Local,
        };
    }
    if cfg.model.name() != arch {
        return Err(CliError::input(format!("config model is `{}` but --arch is `{arch}`", cfg.model.name())));
    }
    let out_dim = cfg.expected_out_dim();
    match &mut cfg.model {
        ModelConfig::Tcn(c) => c.out_dim = out_dim,
        ModelConfig::Lstm(c) => c.out_dim = out_dim,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_extension_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut name = p.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    p.with_file_name(name)
}

pub(crate) fn train(args: &TrainArgs, exec: Exec) -> Result<(), CliError> {
    let start = Instant::now();
    let file = match &args.config {
        Some(p) => Some(
            serde_json::from_slice::<Value>(&fs::read(p).map_err(|e| CliError::from(e).at(p))?)
                .map_err(|e| CliError::from(e).at(p))?,
        ),
        None => None,
    };
    let cfg = effective_train_config(args.arch.name(), file, &args.overrides)?;

    let seqs = load_dataset(&args.data)?;
    let train: Vec<SensorSequence> = seqs.iter().filter(|s| s.meta.split == Split::Train).cloned().collect();
    let mut val: Vec<SensorSequence> = seqs.iter().filter(|s| s.meta.split == Split::Val).cloned().collect();
    if train.is_empty() {
        return Err(CliError::input(format!("{}: no training sequences", args.data.display())));
    }
    if val.is_empty() {
        eprintln!("warning: no validation sequences; selecting the epoch on the training set");
        val = train.clone();
    }

    let model = Model::new(cfg.model.clone(), cfg.seed)?;
    let outcome = fit(model, &train, &val, &cfg, exec)?;
    save_checkpoint(&outcome.model, &outcome.meta, &args.out)?;
    let log = args.log.clone().unwrap_or_else(|| with_extension_suffix(&args.out, ".log.csv"));
    write_log_csv(&outcome.log, &log)?;

    let mut manifest = RunManifest::new("train", config_hash(&cfg), Some(cfg.seed));
    manifest.inputs.push(path_str(&args.data));
    if let Some(p) = &args.config {
        manifest.inputs.push(path_str(p));
    }
    manifest.outputs = vec![path_str(&args.out), path_str(&log)];
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))?;
    Ok(())
}

/// Input frame a checkpoint was trained in: local-frame networks predict
/// 3D device-frame velocity.
fn frame_of(model: &Model) -> InputFrame {
    if model.config().out_dim() == 3 {
        InputFrame::Local
    } else {
        InputFrame::Hacf
    }
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    let (model, _) = load_checkpoint(path).map_err(|e| CliError::from(e).at(path))?;
    Ok(model)
}

pub(crate) fn predict(args: &PredictArgs, exec: Exec) -> Result<(), CliError> {
    let start = Instant::now();
    let model = load_model(&args.ckpt)?;
    let seq = load_sequence(&args.seq).map_err(|e| CliError::from(e).at(&args.seq))?;
    let traj = predict_trajectory(&model, &seq, frame_of(&model), exec)?;
    traj.write_csv(&args.out)?;

    let mut manifest = RunManifest::new("predict", config_hash(model.config()), None);
    manifest.inputs = vec![path_str(&args.ckpt), path_str(&args.seq)];
    manifest.outputs = vec![path_str(&args.out)];
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.out))?;
    Ok(())
}

fn score(est: &Trajectory2D, gt: &Trajectory2D, align: AlignArg) -> Result<(f64, f64), CliError> {
    let est = match align {
        AlignArg::None => est.clone(),
        AlignArg::First5s => est.transformed(&align_first_5s(est, gt)?),
    };
    Ok((ate(&est, gt)?, rte(&est, gt, RTE_INTERVAL_S)?))
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("estimate").to_string()
}

pub(crate) fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let est = Trajectory2D::read_csv(&args.est).map_err(|e| CliError::from(e).at(&args.est))?;
    let seq = load_sequence(&args.gt).map_err(|e| CliError::from(e).at(&args.gt))?;
    let gt = Trajectory2D::from_ground_truth(&seq);
    let (ate_m, rte_m) = score(&est, &gt, args.align)?;
    let report = MetricsReport {
        sequence: seq.name.clone(),
        estimator: stem(&args.est),
        ate_m,
        rte_m,
        heading_mse: None,
        heading_mae_deg: None,
    };
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_atomic(&args.report, &bytes)?;

    #[derive(Serialize)]
    struct EvalConfig {
        align: &'static str,
        rte_interval_s: f64,
    }
    let align = match args.align {
        AlignArg::None => "none",
        AlignArg::First5s => "first5s",
    };
    let mut manifest = RunManifest::new("evaluate", config_hash(&EvalConfig { align, rte_interval_s: RTE_INTERVAL_S }), None);
    manifest.inputs = vec![path_str(&args.est), path_str(&args.gt)];
    manifest.outputs = vec![path_str(&args.report)];
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.report))?;
    Ok(())
}

/// One entry of `compare --methods`.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodSpec {
    Ndi,
    Pdr,
    Network { arch: String, ckpt: PathBuf },
}

impl MethodSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "ndi" => Ok(MethodSpec::Ndi),
            "pdr" => Ok(MethodSpec::Pdr),
            other => match other.split_once(':') {
                Some((arch, ckpt)) if matches!(arch, "resnet" | "lstm" | "tcn") && !ckpt.is_empty() => {
                    Ok(MethodSpec::Network { arch: arch.to_string(), ckpt: PathBuf::from(ckpt) })
                }
                _ => Err(CliError::input(format!(
                    "unknown method `{other}`; expected ndi, pdr or <resnet|lstm|tcn>:<checkpoint>"
                ))),
            },
        }
    }

    fn label(&self) -> &str {
        match self {
            MethodSpec::Ndi => "ndi",
            MethodSpec::Pdr => "pdr",
            MethodSpec::Network { arch, .. } => arch,
        }
    }
}

enum Method {
    Ndi,
    Pdr,
    Network(Model),
}

impl Method {
    /// Estimated trajectory, rigidly aligned on the first five seconds
    /// for the baselines; network estimates start at the ground truth.
    fn estimate(&self, seq: &SensorSequence, gt: &Trajectory2D, exec: Exec) -> Result<Trajectory2D, CliError> {
        Ok(match self {
            Method::Ndi => {
                let est = ndi_default(seq)?;
                est.transformed(&align_first_5s(&est, gt)?)
            }
            Method::Pdr => {
                let est = pdr(seq, &PdrConfig::default())?;
                est.transformed(&align_first_5s(&est, gt)?)
            }
            Method::Network(m) => predict_trajectory(m, seq, frame_of(m), exec)?,
        })
    }
}

fn in_split(s: &SensorSequence, split: SplitArg) -> bool {
    match split {
        SplitArg::All => true,
        SplitArg::Train => s.meta.split == Split::Train,
        SplitArg::Val => s.meta.split == Split::Val,
        SplitArg::Test => s.meta.split.is_test(),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

pub(crate) fn compare(args: &CompareArgs, exec: Exec) -> Result<(), CliError> {
    let start = Instant::now();
    let specs = args.methods.iter().map(|m| MethodSpec::parse(m)).collect::<Result<Vec<_>, _>>()?;
    let mut labels: Vec<String> = Vec::new();
    for s in &specs {
        let base = s.label().to_string();
        let n = labels.iter().filter(|l| l.split('#').next() == Some(base.as_str())).count();
        labels.push(if n == 0 { base } else { format!("{base}#{}", n + 1) });
    }
    let methods = specs
        .iter()
        .map(|s| match s {
            MethodSpec::Ndi => Ok(Method::Ndi),
            MethodSpec::Pdr => Ok(Method::Pdr),
            MethodSpec::Network { arch, ckpt } => {
                let m = load_model(ckpt)?;
                if m.config().name() != arch {
                    return Err(CliError::input(format!(
                        "{}: checkpoint holds a {} model, not {arch}",
                        ckpt.display(),
                        m.config().name()
                    )));
                }
                Ok(Method::Network(m))
            }
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let seqs: Vec<SensorSequence> = load_dataset(&args.data)?.into_iter().filter(|s| in_split(s, args.split)).collect();
    if seqs.is_empty() {
        return Err(CliError::input(format!("{}: no sequences in the selected split", args.data.display())));
    }

    let rows: Vec<Result<Vec<(f64, f64)>, CliError>> = exec.map(&seqs, |seq| {
        let gt = Trajectory2D::from_ground_truth(seq);
        methods
            .iter()
            .map(|m| score(&m.estimate(seq, &gt, Exec::Sequential)?, &gt, AlignArg::None))
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sequence".to_string()];
    for l in &labels {
        header.push(format!("{l}_ate"));
        header.push(format!("{l}_rte"));
    }
    w.write_record(&header)?;
    for (seq, row) in seqs.iter().zip(&rows) {
        let mut rec = vec![seq.name.clone()];
        for &(a, r) in row {
            rec.push(fmt(a));
            rec.push(fmt(r));
        }
        w.write_record(&rec)?;
    }
    let n = rows.len() as f64;
    let mut mean = vec!["mean".to_string()];
    for k in 0..labels.len() {
        mean.push(fmt(rows.iter().map(|r| r[k].0).sum::<f64>() / n));
        mean.push(fmt(rows.iter().map(|r| r[k].1).sum::<f64>() / n));
    }
    w.write_record(&mean)?;
    let bytes = w.into_inner().map_err(|e| CliError::internal(e.to_string()))?;
    write_atomic(&args.report, &bytes)?;

    let mut manifest = RunManifest::new("compare", config_hash(&args.methods), None);
    manifest.inputs.push(path_str(&args.data));
    for s in &specs {
        if let MethodSpec::Network { ckpt, .. } = s {
            manifest.inputs.push(path_str(ckpt));
        }
    }
    manifest.outputs = vec![path_str(&args.report)];
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write(&manifest_path(&args.report))?;
    Ok(())
}

//! Multi-subject synthetic datasets.
//!
//! Each synthetic subject has its own gait (step frequency, bounce, surge)
//! and its own device mounting. Sequence `i` belongs to subject
//! `i % n_subjects`; the last `n_unseen_subjects` subjects only ever appear
//! in the unseen test split, the rest are spread over train / val / seen
//! test.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gen_trajectory, imu_from_trajectory, GaitSpec, ImuNoiseModel, SynthError, TrajectorySpec};
use crate::geom::{UnitQuaternion, Vec3};
use crate::par::Exec;
use crate::seqdata::{SensorSequence, SequenceMeta, Split};

/// Ranges the per-subject parameters are drawn from (uniformly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectRanges {
    pub step_hz: [f64; 2],
    pub bounce_mps2: [f64; 2],
    pub surge_gain: [f64; 2],
    pub speed_scale: [f64; 2],
    /// Yaw of the device relative to the body, degrees.
    pub mounting_yaw_deg: [f64; 2],
    /// Tilt of the device about a random horizontal axis, degrees.
    pub mounting_tilt_deg: [f64; 2],
    pub sway_deg: [f64; 2],
}

impl Default for SubjectRanges {
    fn default() -> Self {
        Self {
            step_hz: [1.4, 2.2],
            bounce_mps2: [1.0, 3.0],
            surge_gain: [0.5, 1.5],
            speed_scale: [0.85, 1.15],
            mounting_yaw_deg: [-180.0, 180.0],
            mounting_tilt_deg: [0.0, 60.0],
            sway_deg: [0.0, 10.0],
        }
    }
}

impl SubjectRanges {
    /// Every subject walks like the first and carries the device aligned
    /// with the body.
    pub fn aligned() -> Self {
        Self {
            mounting_yaw_deg: [0.0, 0.0],
            mounting_tilt_deg: [0.0, 0.0],
            sway_deg: [0.0, 0.0],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    pub id: String,
    pub gait: GaitSpec,
    pub speed_scale: f64,
    pub mounting: UnitQuaternion,
    pub sway_deg: f64,
    pub unseen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_sequences: usize,
    /// Templates cycled over the sequences. Gait and mounting are replaced
    /// by the subject's; templates without a gait stay gait-free.
    pub templates: Vec<TrajectorySpec>,
    pub n_subjects: usize,
    pub n_unseen_subjects: usize,
    #[serde(default)]
    pub subjects: SubjectRanges,
    #[serde(default)]
    pub noise: ImuNoiseModel,
    /// Fraction of seen-subject sequences assigned to validation.
    #[serde(default)]
    pub val_fraction: f64,
    /// Fraction of seen-subject sequences assigned to the seen test split.
    #[serde(default)]
    pub test_fraction: f64,
    /// Draw a uniformly random initial heading for every sequence.
    #[serde(default = "yes")]
    pub random_heading: bool,
}

fn yes() -> bool {
    true
}

impl DatasetSpec {
    pub fn new(n_sequences: usize, templates: Vec<TrajectorySpec>) -> Self {
        Self {
            n_sequences,
            templates,
            n_subjects: 6,
            n_unseen_subjects: 1,
            subjects: SubjectRanges::default(),
            noise: ImuNoiseModel::default(),
            val_fraction: 0.15,
            test_fraction: 0.15,
            random_heading: true,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_sequences == 0 {
            return Ok(());
        }
        if self.templates.is_empty() {
            return bad("dataset needs at least one template");
        }
        if self.n_subjects == 0 || self.n_unseen_subjects > self.n_subjects {
            return bad("need at least one subject and no more unseen than total subjects");
        }
        let fr = |f: f64| (0.0..=1.0).contains(&f);
        if !fr(self.val_fraction) || !fr(self.test_fraction) || self.val_fraction + self.test_fraction > 1.0 {
            return bad("split fractions must lie in [0, 1] and sum to at most 1");
        }
        let r = &self.subjects;
        for range in [r.step_hz, r.bounce_mps2, r.surge_gain, r.speed_scale, r.mounting_yaw_deg, r.mounting_tilt_deg, r.sway_deg] {
            if !(range[0] <= range[1]) {
                return bad("subject ranges must be ordered");
            }
        }
        if r.step_hz[0] <= 0.0 || r.speed_scale[0] < 0.0 {
            return bad("step frequency must be positive and speed scale non-negative");
        }
        for t in &self.templates {
            t.validate()?;
        }
        Ok(())
    }

    /// Per-subject parameters, a pure function of `seed`.
    pub fn subject_params(&self, seed: u64) -> Vec<SubjectParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let r = &self.subjects;
        let mut u = |range: [f64; 2]| if range[0] < range[1] { rng.gen_range(range[0]..range[1]) } else { range[0] };
        (0..self.n_subjects)
            .map(|k| {
                let gait = GaitSpec { step_hz: u(r.step_hz), bounce_mps2: u(r.bounce_mps2), surge_gain: u(r.surge_gain) };
                let speed_scale = u(r.speed_scale);
                let yaw = u(r.mounting_yaw_deg).to_radians();
                let tilt = u(r.mounting_tilt_deg).to_radians();
                let axis_angle = u([0.0, TAU]);
                let sway_deg = u(r.sway_deg);
                let axis = Vec3::new(axis_angle.cos(), axis_angle.sin(), 0.0);
                SubjectParams {
                    id: format!("subject_{k:02}"),
                    gait,
                    speed_scale,
                    mounting: UnitQuaternion::from_yaw(yaw) * UnitQuaternion::from_axis_angle(axis, tilt),
                    sway_deg,
                    unseen: k >= self.n_subjects - self.n_unseen_subjects,
                }
            })
            .collect()
    }
}

/// Generates `spec.n_sequences` sequences, deterministic in `seed` and
/// independent of `exec`.
pub fn gen_dataset(spec: &DatasetSpec, seed: u64, exec: Exec) -> Result<Vec<SensorSequence>, SynthError> {
    spec.validate()?;
    if spec.n_sequences == 0 {
        return Ok(Vec::new());
    }
    let subjects = spec.subject_params(seed);
    exec.map_range(spec.n_sequences, |i| gen_one(spec, &subjects, seed, i)).into_iter().collect()
}

fn gen_one(spec: &DatasetSpec, subjects: &[SubjectParams], seed: u64, i: usize) -> Result<SensorSequence, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    let subject = &subjects[i % subjects.len()];

    let mut traj = spec.templates[i % spec.templates.len()].clone();
    if let Some(g) = traj.gait.as_mut() {
        *g = GaitSpec { surge_gain: if g.surge_gain > 0.0 { subject.gait.surge_gain } else { 0.0 }, ..subject.gait };
        traj.mounting_sway_deg = subject.sway_deg;
    }
    traj.mounting = subject.mounting * traj.mounting;
    traj.speed_mps *= subject.speed_scale;
    if spec.random_heading {
        traj.heading_rad = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    }
    let split = if subject.unseen {
        Split::TestUnseen
    } else {
        let u: f64 = rng.gen();
        if u < spec.val_fraction {
            Split::Val
        } else if u < spec.val_fraction + spec.test_fraction {
            Split::TestSeen
        } else {
            Split::Train
        }
    };

    let gt = gen_trajectory(&traj, rng.gen())?;
    let mut seq = imu_from_trajectory(&gt, &spec.noise, &mut rng)?;
    seq.name = format!("seq_{i:04}");
    seq.meta = SequenceMeta { subject: subject.id.clone(), device: "synthetic".into(), split, rate_hz: traj.rate_hz };
    Ok(seq)
}

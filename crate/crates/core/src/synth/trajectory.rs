//! Ground-truth body motion.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::geom::{wrap_angle, UnitQuaternion, Vec3};

/// Shape of the horizontal path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    Straight,
    /// Counter-clockwise circle centred on the origin.
    Circle { radius_m: f64 },
    /// Heading oscillates as `heading + amplitude * sin(2 pi t / period)`.
    Sinusoid { amplitude_rad: f64, period_s: f64 },
    /// Speed and turn rate wander between random knots.
    SmoothRandomWalk { max_turn_rate: f64, speed_jitter: f64, knot_s: f64 },
    /// Alternating stationary and walking segments, starting stationary.
    StopAndGo { walk_s: [f64; 2], stop_s: [f64; 2], max_turn_rate: f64, knot_s: f64 },
}

/// Gait signature added on top of the mean motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitSpec {
    /// Step frequency, Hz.
    pub step_hz: f64,
    /// Vertical acceleration amplitude while walking, m/s^2.
    pub bounce_mps2: f64,
    /// Along-track surge acceleration per unit speed, 1/s.
    #[serde(default)]
    pub surge_gain: f64,
}

fn default_rate() -> f64 {
    crate::seqdata::RATE_HZ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(flatten)]
    pub path: PathKind,
    pub duration_s: f64,
    /// Cruise speed, m/s.
    pub speed_mps: f64,
    /// Initial heading, rad.
    #[serde(default)]
    pub heading_rad: f64,
    /// Duration of the smooth start from rest; 0 starts at cruise speed.
    #[serde(default)]
    pub ramp_s: f64,
    #[serde(default)]
    pub gait: Option<GaitSpec>,
    /// Device orientation relative to the body (x forward, z up).
    #[serde(default)]
    pub mounting: UnitQuaternion,
    /// Pitch swing of the device at half the step frequency, degrees.
    #[serde(default)]
    pub mounting_sway_deg: f64,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
}

impl TrajectorySpec {
    pub fn straight(duration_s: f64, speed_mps: f64) -> Self {
        Self {
            path: PathKind::Straight,
            duration_s,
            speed_mps,
            heading_rad: 0.0,
            ramp_s: 0.0,
            gait: None,
            mounting: UnitQuaternion::IDENTITY,
            mounting_sway_deg: 0.0,
            rate_hz: default_rate(),
        }
    }

    pub fn with_path(mut self, path: PathKind) -> Self {
        self.path = path;
        self
    }

    pub fn with_gait(mut self, gait: GaitSpec) -> Self {
        self.gait = Some(gait);
        self
    }

    pub fn with_ramp(mut self, ramp_s: f64) -> Self {
        self.ramp_s = ramp_s;
        self
    }

    pub fn with_mounting(mut self, mounting: UnitQuaternion) -> Self {
        self.mounting = mounting;
        self
    }

    pub fn with_heading(mut self, heading_rad: f64) -> Self {
        self.heading_rad = heading_rad;
        self
    }

    pub fn n_frames(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        let ok_range = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad("duration must be positive");
        }
        if !(self.speed_mps >= 0.0) || !self.speed_mps.is_finite() {
            return bad("speed must be non-negative");
        }
        if !(self.rate_hz > 0.0) {
            return bad("rate must be positive");
        }
        if !(self.ramp_s >= 0.0) {
            return bad("ramp must be non-negative");
        }
        if !self.heading_rad.is_finite() || !self.mounting_sway_deg.is_finite() {
            return bad("heading and sway must be finite");
        }
        if self.n_frames() < 3 {
            return bad("need at least 3 frames");
        }
        if let Some(g) = &self.gait {
            if !(g.step_hz > 0.0) || !(g.bounce_mps2 >= 0.0) || !(g.surge_gain >= 0.0) {
                return bad("gait frequency must be positive and amplitudes non-negative");
            }
        }
        match &self.path {
            PathKind::Straight => {}
            PathKind::Circle { radius_m } => {
                if !(*radius_m > 0.0) {
                    return bad("circle radius must be positive");
                }
            }
            PathKind::Sinusoid { amplitude_rad, period_s } => {
                if !amplitude_rad.is_finite() || !(*period_s > 0.0) {
                    return bad("sinusoid period must be positive");
                }
            }
            PathKind::SmoothRandomWalk { max_turn_rate, speed_jitter, knot_s } => {
                if !(*max_turn_rate >= 0.0) || !(0.0..1.0).contains(speed_jitter) || !(*knot_s > 0.0) {
                    return bad("random walk needs turn rate >= 0, jitter in [0, 1) and knot spacing > 0");
                }
            }
            PathKind::StopAndGo { walk_s, stop_s, max_turn_rate, knot_s } => {
                if !ok_range(*walk_s) || !ok_range(*stop_s) || !(*max_turn_rate >= 0.0) || !(*knot_s > 0.0) {
                    return bad("stop-and-go ranges must be ordered");
                }
                if stop_s[0] < 5.0 {
                    return bad("stationary segments must last at least 5 s");
                }
                if walk_s[0] <= TRANSITION_S {
                    return bad("walking segments must outlast the 1 s transition");
                }
            }
        }
        Ok(())
    }
}

/// Positions, body heading and device orientation per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub timestamps: Vec<f64>,
    pub pos: Vec<Vec3>,
    /// Body heading (direction of travel), wrapped to `[-pi, pi)`.
    pub heading: Vec<f64>,
    pub q_device: Vec<UnitQuaternion>,
    /// Walking intensity in `[0, 1]`; 0 while standing still.
    pub walking: Vec<f64>,
}

const TRANSITION_S: f64 = 1.0;

/// Quintic smoothstep: C2 with zero first and second derivative at both ends.
fn smootherstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

/// Random values at evenly spaced knots joined by smootherstep blends.
struct KnotProfile {
    spacing: f64,
    values: Vec<f64>,
}

impl KnotProfile {
    fn random(rng: &mut ChaCha8Rng, duration: f64, spacing: f64, amplitude: f64) -> Self {
        let n = (duration / spacing).ceil() as usize + 2;
        let values = (0..n).map(|_| amplitude * rng.gen_range(-1.0..=1.0)).collect();
        Self { spacing, values }
    }

    fn constant(v: f64) -> Self {
        Self { spacing: 1.0, values: vec![v, v] }
    }

    fn at(&self, t: f64) -> f64 {
        let u = (t / self.spacing).max(0.0);
        let k = (u.floor() as usize).min(self.values.len() - 2);
        let (a, b) = (self.values[k], self.values[k + 1]);
        a + (b - a) * smootherstep(u - k as f64)
    }
}

/// Walking-state envelope made of smootherstep transitions.
struct Envelope {
    /// (start time, from, to)
    transitions: Vec<(f64, f64, f64)>,
    initial: f64,
}

impl Envelope {
    fn at(&self, t: f64) -> f64 {
        let mut v = self.initial;
        for &(start, from, to) in &self.transitions {
            if t <= start {
                break;
            }
            v = from + (to - from) * smootherstep((t - start) / TRANSITION_S);
        }
        v
    }
}

struct Motion<'a> {
    spec: &'a TrajectorySpec,
    walking: Envelope,
    cruise: KnotProfile,
    turn: KnotProfile,
}

impl Motion<'_> {
    fn ramp(&self, t: f64) -> f64 {
        if self.spec.ramp_s > 0.0 {
            smootherstep(t / self.spec.ramp_s)
        } else {
            1.0
        }
    }

    fn omega(&self) -> Option<f64> {
        self.spec.gait.map(|g| TAU * g.step_hz)
    }

    fn mean_speed(&self, t: f64) -> f64 {
        self.spec.speed_mps * (1.0 + self.cruise.at(t)) * self.walking.at(t) * self.ramp(t)
    }

    /// Along-track speed including the gait surge. The surge velocity
    /// `-(cos th + cos 2th / 4)` has zero mean, so the mean speed is kept.
    fn speed(&self, t: f64) -> f64 {
        let s = self.mean_speed(t);
        match (self.spec.gait, self.omega()) {
            (Some(g), Some(w)) if g.surge_gain > 0.0 => {
                let th = w * t;
                s + g.surge_gain * s / w * (-th.cos() - 0.25 * (2.0 * th).cos())
            }
            _ => s,
        }
    }

    fn heading_rate(&self, t: f64, speed: f64) -> f64 {
        match &self.spec.path {
            PathKind::Straight => 0.0,
            PathKind::Circle { radius_m } => speed / radius_m,
            PathKind::Sinusoid { amplitude_rad, period_s } => {
                let w = TAU / period_s;
                amplitude_rad * w * (w * t).cos()
            }
            PathKind::SmoothRandomWalk { .. } | PathKind::StopAndGo { .. } => self.turn.at(t) * self.walking.at(t),
        }
    }

    fn vertical(&self, t: f64) -> f64 {
        match (self.spec.gait, self.omega()) {
            (Some(g), Some(w)) => -g.bounce_mps2 * self.walking.at(t) / (w * w) * (w * t).sin(),
            _ => 0.0,
        }
    }

    fn mounting(&self, t: f64) -> UnitQuaternion {
        let sway = self.spec.mounting_sway_deg.to_radians();
        match self.omega() {
            Some(w) if sway != 0.0 => {
                self.spec.mounting * UnitQuaternion::from_axis_angle(Vec3::Y, sway * (0.5 * w * t).sin())
            }
            _ => self.spec.mounting,
        }
    }

    /// d/dt of (arc length, heading, x, y).
    fn derivative(&self, t: f64, state: [f64; 4]) -> [f64; 4] {
        let v = self.speed(t);
        let h = state[1];
        [v, self.heading_rate(t, v), v * h.cos(), v * h.sin()]
    }
}

fn stop_and_go_envelope(rng: &mut ChaCha8Rng, duration: f64, walk_s: [f64; 2], stop_s: [f64; 2]) -> Envelope {
    let mut transitions = Vec::new();
    let mut t = rng.gen_range(stop_s[0]..=stop_s[1]);
    let mut walking = false;
    while t < duration {
        let (from, to) = if walking { (1.0, 0.0) } else { (0.0, 1.0) };
        transitions.push((t, from, to));
        walking = !walking;
        t += if walking { rng.gen_range(walk_s[0]..=walk_s[1]) } else { rng.gen_range(stop_s[0]..=stop_s[1]) };
    }
    Envelope { transitions, initial: 0.0 }
}

/// Samples the trajectory described by `spec` at `spec.rate_hz`.
///
/// `seed` only matters for the random path kinds.
pub fn gen_trajectory(spec: &TrajectorySpec, seed: u64) -> Result<GroundTruth, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_frames();
    let dt = 1.0 / spec.rate_hz;
    let duration = spec.duration_s;

    let (walking, cruise, turn) = match &spec.path {
        PathKind::SmoothRandomWalk { max_turn_rate, speed_jitter, knot_s } => (
            Envelope { transitions: Vec::new(), initial: 1.0 },
            KnotProfile::random(&mut rng, duration, *knot_s, *speed_jitter),
            KnotProfile::random(&mut rng, duration, *knot_s, *max_turn_rate),
        ),
        PathKind::StopAndGo { walk_s, stop_s, max_turn_rate, knot_s } => (
            stop_and_go_envelope(&mut rng, duration, *walk_s, *stop_s),
            KnotProfile::constant(0.0),
            KnotProfile::random(&mut rng, duration, *knot_s, *max_turn_rate),
        ),
        _ => (
            Envelope { transitions: Vec::new(), initial: 1.0 },
            KnotProfile::constant(0.0),
            KnotProfile::constant(0.0),
        ),
    };
    let motion = Motion { spec, walking, cruise, turn };

    // RK4 on (arc length, heading, x, y)
    let mut states = Vec::with_capacity(n);
    let mut s = [0.0, spec.heading_rad, 0.0, 0.0];
    states.push(s);
    for i in 1..n {
        let t = (i - 1) as f64 * dt;
        let k1 = motion.derivative(t, s);
        let step = |k: [f64; 4], h: f64| [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2], s[3] + h * k[3]];
        let k2 = motion.derivative(t + 0.5 * dt, step(k1, 0.5 * dt));
        let k3 = motion.derivative(t + 0.5 * dt, step(k2, 0.5 * dt));
        let k4 = motion.derivative(t + dt, step(k3, dt));
        for j in 0..4 {
            s[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        states.push(s);
    }

    let h0 = spec.heading_rad;
    let mut out = GroundTruth {
        timestamps: Vec::with_capacity(n),
        pos: Vec::with_capacity(n),
        heading: Vec::with_capacity(n),
        q_device: Vec::with_capacity(n),
        walking: Vec::with_capacity(n),
    };
    for (i, st) in states.iter().enumerate() {
        let t = i as f64 * dt;
        let [arc, h, x, y] = *st;
        let (x, y) = match &spec.path {
            PathKind::Straight => (arc * h0.cos(), arc * h0.sin()),
            PathKind::Circle { radius_m } => {
                let hh = h0 + arc / radius_m;
                (radius_m * hh.sin(), -radius_m * hh.cos())
            }
            _ => (x, y),
        };
        let heading = match &spec.path {
            PathKind::Circle { radius_m } => h0 + arc / radius_m,
            _ => h,
        };
        out.timestamps.push(t);
        out.pos.push(Vec3::new(x, y, motion.vertical(t)));
        out.heading.push(wrap_angle(heading));
        out.q_device.push(UnitQuaternion::from_yaw(heading) * motion.mounting(t));
        out.walking.push(motion.walking.at(t));
    }
    Ok(out)
}

//! Second-order IIR sections and zero-phase filtering.

/// Direct-form-II-transposed biquad with `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Second-order Butterworth low-pass (bilinear transform, prewarped).
    pub fn butter_lowpass(cutoff_hz: f64, rate_hz: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff_hz / rate_hz).tan();
        let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k * k);
        let b0 = k * k * norm;
        Self { b: [b0, 2.0 * b0, b0], a: Self::poles(k, norm) }
    }

    /// Second-order Butterworth high-pass.
    pub fn butter_highpass(cutoff_hz: f64, rate_hz: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff_hz / rate_hz).tan();
        let norm = 1.0 / (1.0 + std::f64::consts::SQRT_2 * k + k * k);
        Self { b: [norm, -2.0 * norm, norm], a: Self::poles(k, norm) }
    }

    fn poles(k: f64, norm: f64) -> [f64; 2] {
        [2.0 * (k * k - 1.0) * norm, (1.0 - std::f64::consts::SQRT_2 * k + k * k) * norm]
    }

    /// Runs the section over `x` from a zero state.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b[0] * v + z1;
                z1 = self.b[1] * v - self.a[0] * y + z2;
                z2 = self.b[2] * v - self.a[1] * y;
                y
            })
            .collect()
    }

    /// Magnitude response at `f_hz`.
    pub fn gain(&self, f_hz: f64, rate_hz: f64) -> f64 {
        let w = std::f64::consts::TAU * f_hz / rate_hz;
        let c = |k: f64| (k * w).cos();
        let s = |k: f64| -(k * w).sin();
        let num = (self.b[0] + self.b[1] * c(1.0) + self.b[2] * c(2.0), self.b[1] * s(1.0) + self.b[2] * s(2.0));
        let den = (1.0 + self.a[0] * c(1.0) + self.a[1] * c(2.0), self.a[0] * s(1.0) + self.a[1] * s(2.0));
        num.0.hypot(num.1) / den.0.hypot(den.1)
    }
}

/// Forward-backward filtering through every section, with `pad` samples
/// of odd reflection at both ends to suppress start-up transients.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    let run = |mut v: Vec<f64>| {
        for s in sections {
            v = s.apply(&v);
        }
        v
    };
    let mut y = run(ext);
    y.reverse();
    let mut y = run(y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

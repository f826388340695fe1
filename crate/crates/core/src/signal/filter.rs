use alloc::vec::Vec;

/// Second-order IIR section (direct form I), normalized so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Butterworth low-pass, cutoff `fc` Hz.
    pub fn lowpass(fc: f64, fs: f64) -> Self {
        let (cos, alpha) = Self::prewarp(fc, fs);
        let b1 = 1.0 - cos;
        Self::normalized([b1 / 2.0, b1, b1 / 2.0], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    /// Butterworth high-pass, cutoff `fc` Hz.
    pub fn highpass(fc: f64, fs: f64) -> Self {
        let (cos, alpha) = Self::prewarp(fc, fs);
        let b1 = 1.0 + cos;
        Self::normalized([b1 / 2.0, -b1, b1 / 2.0], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    fn prewarp(fc: f64, fs: f64) -> (f64, f64) {
        let w = 2.0 * core::f64::consts::PI * fc / fs;
        (libm::cos(w), libm::sin(w) / (2.0 * core::f64::consts::FRAC_1_SQRT_2))
    }

    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        Self {
            b: [b[0] / a[0], b[1] / a[0], b[2] / a[0]],
            a: [a[1] / a[0], a[2] / a[0]],
        }
    }

    pub fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b[0] * v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = v;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

/// Zero-phase filtering: each section forward then backward, with odd
/// reflection padding at both ends to tame start-up transients.
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    if x.len() < 2 {
        return x.to_vec();
    }
    let pad = (x.len() - 1).min(3 * 64);
    let (first, last) = (x[0], x[x.len() - 1]);
    let mut y: Vec<f64> = (1..=pad).rev().map(|i| 2.0 * first - x[i]).collect();
    y.extend_from_slice(x);
    y.extend((1..=pad).map(|i| 2.0 * last - x[x.len() - 1 - i]));
    for s in sections {
        y = s.run(&y);
        y.reverse();
        y = s.run(&y);
        y.reverse();
    }
    y[pad..pad + x.len()].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| libm::sin(2.0 * core::f64::consts::PI * f * i as f64 / fs)).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        libm::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
    }

    #[test]
    fn passes_band_rejects_outside() {
        let bp = [Biquad::highpass(5.0, 250.0), Biquad::lowpass(15.0, 250.0)];
        let inband = filtfilt(&bp, &sine(10.0, 250.0, 2500));
        let low = filtfilt(&bp, &sine(0.5, 250.0, 2500));
        let high = filtfilt(&bp, &sine(60.0, 250.0, 2500));
        let r = rms(&inband[200..2300]);
        assert!(r > 0.5, "{r}");
        assert!(rms(&low[200..2300]) < 0.05);
        assert!(rms(&high[200..2300]) < 0.05);
    }
}

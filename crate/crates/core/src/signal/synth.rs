use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{RawRecord, Superclass};
use crate::error::{Error, Result};
use crate::rng;

/// One Gaussian bump of a beat, positioned relative to the R peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    /// Peak amplitude in millivolts.
    pub amplitude: f64,
    /// Gaussian standard deviation in seconds.
    pub width: f64,
    /// Center relative to the R peak in seconds.
    pub offset: f64,
}

impl Wave {
    pub const fn new(amplitude: f64, width: f64, offset: f64) -> Self {
        Self {
            amplitude,
            width,
            offset,
        }
    }
}

/// Sum-of-Gaussians beat model with waves in P, Q, R, S, T order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub heart_rate_bpm: f64,
    pub waves: [Wave; 5],
    /// Each RR interval is scaled by `1 + rr_jitter * u`, `u ~ U(-1, 1)`.
    pub rr_jitter: f64,
    pub fs: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl SynthParams {
    /// A normal sinus beat; widths and offsets follow ECGSYN's angular
    /// parameters at 60 bpm.
    pub fn normal(heart_rate_bpm: f64, fs: f64, duration_s: f64, seed: u64) -> Self {
        Self {
            heart_rate_bpm,
            waves: [
                Wave::new(0.15, 0.040, -0.194),
                Wave::new(-0.15, 0.016, -0.042),
                Wave::new(1.00, 0.016, 0.0),
                Wave::new(-0.25, 0.016, 0.042),
                Wave::new(0.30, 0.064, 0.278),
            ],
            rr_jitter: 0.0,
            fs,
            duration_s,
            seed,
        }
    }

    /// A caricature of each diagnostic superclass on top of the normal beat:
    /// MI deep Q and inverted T, CD widened QRS, STTC depressed ST and
    /// inverted T, HYP tall R and deep S.
    pub fn for_class(class: Superclass, heart_rate_bpm: f64, fs: f64, duration_s: f64, seed: u64) -> Self {
        let mut p = Self::normal(heart_rate_bpm, fs, duration_s, seed);
        let [pw, q, r, s, t] = &mut p.waves;
        match class {
            Superclass::Norm => {}
            Superclass::Mi => {
                *q = Wave::new(-0.45, 0.024, -0.040);
                r.amplitude = 0.55;
                *t = Wave::new(-0.30, 0.060, 0.290);
            }
            Superclass::Cd => {
                *q = Wave::new(-0.10, 0.030, -0.060);
                *r = Wave::new(0.75, 0.036, 0.0);
                *s = Wave::new(-0.45, 0.040, 0.080);
                *t = Wave::new(-0.20, 0.070, 0.320);
            }
            Superclass::Sttc => {
                *s = Wave::new(-0.30, 0.060, 0.090);
                *t = Wave::new(-0.25, 0.070, 0.290);
            }
            Superclass::Hyp => {
                r.amplitude = 2.0;
                *s = Wave::new(-0.80, 0.018, 0.044);
                t.amplitude = 0.45;
                pw.amplitude = 0.22;
            }
        }
        p
    }

    /// Every wave amplitude multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut p = self.clone();
        for w in &mut p.waves {
            w.amplitude *= k;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if !(30.0..=220.0).contains(&self.heart_rate_bpm) {
            return Err(Error::InvalidInput("heart rate must lie in [30, 220] bpm".into()));
        }
        if self.waves.iter().any(|w| !(w.width > 0.0)) {
            return Err(Error::InvalidInput("wave widths must be positive".into()));
        }
        if !(self.fs > 0.0) || !(self.duration_s > 0.0) || !(0.0..1.0).contains(&self.rr_jitter) {
            return Err(Error::InvalidInput("fs and duration must be positive, jitter in [0, 1)".into()));
        }
        Ok(())
    }

    /// R-peak times in seconds; the first beat sits half an RR interval in.
    pub fn r_peak_times(&self) -> Vec<f64> {
        let rr = 60.0 / self.heart_rate_bpm;
        let mut r = rng::seeded(rng::derive_seed(self.seed, 0x5252));
        let jitter = |r: &mut rng::SeededRng| {
            if self.rr_jitter > 0.0 {
                1.0 + self.rr_jitter * r.random_range(-1.0..1.0)
            } else {
                1.0
            }
        };
        let mut t = 0.5 * rr * jitter(&mut r);
        let mut out = Vec::new();
        while t < self.duration_s {
            out.push(t);
            t += rr * jitter(&mut r);
        }
        out
    }
}

/// Single-channel synthetic ECG; deterministic given `params.seed`.
pub fn synth_ecg(params: &SynthParams) -> Result<RawRecord> {
    params.validate()?;
    let n = libm::round(params.duration_s * params.fs) as usize;
    let mut x = vec![0.0; n];
    for tr in params.r_peak_times() {
        for w in &params.waves {
            let center = tr + w.offset;
            let reach = 6.0 * w.width;
            let lo = libm::floor((center - reach) * params.fs).max(0.0) as usize;
            let hi = (libm::ceil((center + reach) * params.fs).max(0.0) as usize).min(n);
            for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
                let d = (i as f64 / params.fs - center) / w.width;
                *v += w.amplitude * libm::exp(-0.5 * d * d);
            }
        }
    }
    RawRecord::new(
        alloc::format!("synth-{}", params.seed),
        params.fs,
        vec!["I".to_string()],
        vec![x],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beat_count_and_spacing() {
        let p = SynthParams::normal(60.0, 500.0, 10.0, 1);
        let r = synth_ecg(&p).unwrap();
        let x = &r.signal[0];
        let peaks: Vec<usize> = (1..x.len() - 1)
            .filter(|&i| x[i] > 0.5 && x[i] >= x[i - 1] && x[i] > x[i + 1])
            .collect();
        assert_eq!(peaks.len(), 10);
        for w in peaks.windows(2) {
            assert!((w[1] - w[0]).abs_diff(500) <= 1);
        }
    }

    #[test]
    fn class_morphologies_differ() {
        let base = synth_ecg(&SynthParams::normal(60.0, 250.0, 10.0, 1)).unwrap();
        for c in [Superclass::Mi, Superclass::Cd, Superclass::Sttc, Superclass::Hyp] {
            let x = synth_ecg(&SynthParams::for_class(c, 60.0, 250.0, 10.0, 1)).unwrap();
            let d: f64 = x.signal[0].iter().zip(&base.signal[0]).map(|(a, b)| (a - b).abs()).sum();
            assert!(d > 10.0, "{c:?}");
        }
        assert_eq!(SynthParams::for_class(Superclass::Norm, 60.0, 250.0, 10.0, 1), SynthParams::normal(60.0, 250.0, 10.0, 1));
    }

    #[test]
    fn amplitude_is_linear_and_seed_deterministic() {
        let mut p = SynthParams::normal(75.0, 250.0, 10.0, 9);
        p.rr_jitter = 0.1;
        let a = synth_ecg(&p).unwrap();
        let b = synth_ecg(&p.scaled(2.0)).unwrap();
        assert!(a.signal[0].iter().zip(&b.signal[0]).all(|(u, v)| 2.0 * u == *v));
        assert_eq!(synth_ecg(&p).unwrap(), a);
        p.heart_rate_bpm = 250.0;
        assert!(synth_ecg(&p).is_err());
    }
}

//! Records, windows, resampling, normalization, synthetic ECG and QRS detection.

mod filter;
mod qrs;
mod synth;

pub use filter::{filtfilt, Biquad};
pub use qrs::detect_qrs;
pub use synth::{synth_ecg, SynthParams, Wave};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per window after resampling.
pub const WINDOW_LEN: usize = 512;
/// Window duration in seconds before resampling.
pub const WINDOW_SECONDS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Superclass {
    Norm,
    Mi,
    Cd,
    Sttc,
    Hyp,
}

impl Superclass {
    pub const ALL: [Superclass; 5] = [
        Superclass::Norm,
        Superclass::Mi,
        Superclass::Cd,
        Superclass::Sttc,
        Superclass::Hyp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Superclass::Norm => "NORM",
            Superclass::Mi => "MI",
            Superclass::Cd => "CD",
            Superclass::Sttc => "STTC",
            Superclass::Hyp => "HYP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QualityFlag {
    Clean,
    Unanalyzable,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedNoise {
    pub snr_db: f64,
    pub noise_source: String,
}

/// A multi-channel recording in millivolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    /// `signal[channel][sample]`.
    pub signal: Vec<Vec<f64>>,
    pub fs: f64,
    pub record_id: String,
    pub channel_names: Vec<String>,
}

impl RawRecord {
    pub fn new(record_id: impl Into<String>, fs: f64, channel_names: Vec<String>, signal: Vec<Vec<f64>>) -> Result<Self> {
        let r = Self {
            signal,
            fs,
            record_id: record_id.into(),
            channel_names,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::InvalidInput(format!("{}: sampling rate must be positive", self.record_id)));
        }
        if self.signal.is_empty() {
            return Err(Error::InvalidInput(format!("{}: no channels", self.record_id)));
        }
        if self.channel_names.len() != self.signal.len() {
            return Err(Error::InvalidInput(format!(
                "{}: {} channel names for {} channels",
                self.record_id,
                self.channel_names.len(),
                self.signal.len()
            )));
        }
        let n = self.signal[0].len();
        if self.signal.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput(format!("{}: channels differ in length", self.record_id)));
        }
        if self.signal.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{}: non-finite sample", self.record_id)));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.signal.len()
    }

    pub fn len(&self) -> usize {
        self.signal.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs
    }
}

/// A normalized `[channels × 512]` window, stored channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgWindow {
    pub data: Vec<f64>,
    pub channels: usize,
    pub source_record: String,
    pub window_index: usize,
    labels: BTreeSet<Superclass>,
    quality_flag: QualityFlag,
    pub injected_noise: Option<InjectedNoise>,
}

impl EcgWindow {
    pub fn new(
        data: Vec<f64>,
        channels: usize,
        source_record: impl Into<String>,
        window_index: usize,
        labels: BTreeSet<Superclass>,
        quality_flag: QualityFlag,
    ) -> Result<Self> {
        if channels == 0 || data.len() != channels * WINDOW_LEN {
            return Err(Error::InvalidInput(format!(
                "window must hold {channels} x {WINDOW_LEN} samples, got {}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            channels,
            source_record: source_record.into(),
            window_index,
            labels,
            quality_flag,
            injected_noise: None,
        })
    }

    /// Stable identifier `record_id#index`.
    pub fn id(&self) -> String {
        format!("{}#{}", self.source_record, self.window_index)
    }

    pub fn labels(&self) -> &BTreeSet<Superclass> {
        &self.labels
    }

    pub fn quality_flag(&self) -> QualityFlag {
        self.quality_flag
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * WINDOW_LEN..(c + 1) * WINDOW_LEN]
    }

    /// Same window with its quality flag replaced; the original is untouched.
    pub fn with_quality(&self, quality_flag: QualityFlag) -> Self {
        Self {
            quality_flag,
            ..self.clone()
        }
    }
}

/// Consecutive non-overlapping windows of `window_s` seconds; a trailing
/// remainder is dropped and a too-short record yields no windows.
pub fn segment(record: &RawRecord, window_s: f64) -> Vec<RawRecord> {
    let n = libm::round(window_s * record.fs) as usize;
    if n == 0 {
        return Vec::new();
    }
    (0..record.len() / n)
        .map(|k| RawRecord {
            signal: record.signal.iter().map(|c| c[k * n..(k + 1) * n].to_vec()).collect(),
            fs: record.fs,
            record_id: record.record_id.clone(),
            channel_names: record.channel_names.clone(),
        })
        .collect()
}

/// Linear interpolation of one channel onto `target_len` points with
/// uniform spacing `len / target_len` input samples, starting at sample 0.
pub fn resample_channel(x: &[f64], target_len: usize) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "resampling needs at least 2 samples, got {}",
            x.len()
        )));
    }
    if x.len() == target_len {
        return Ok(x.to_vec());
    }
    let step = x.len() as f64 / target_len as f64;
    let last = x.len() - 1;
    Ok((0..target_len)
        .map(|i| {
            let pos = i as f64 * step;
            let k = (libm::floor(pos) as usize).min(last);
            if k == last {
                return x[last];
            }
            let f = pos - k as f64;
            if f == 0.0 {
                x[k]
            } else {
                x[k] + f * (x[k + 1] - x[k])
            }
        })
        .collect())
}

/// Resamples every channel to `target_len`, returned channel-major.
pub fn resample(channels: &[Vec<f64>], target_len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(channels.len() * target_len);
    for c in channels {
        out.extend(resample_channel(c, target_len)?);
    }
    Ok(out)
}

/// Per-channel statistics of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZscoreStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose training std is zero; those are only centered.
    pub zero_std_channels: Vec<usize>,
}

impl ZscoreStats {
    /// Pools every sample of each channel over all `windows`.
    pub fn fit(windows: &[&[f64]], channels: usize) -> Result<Self> {
        if windows.is_empty() || channels == 0 {
            return Err(Error::InvalidInput("z-score statistics need training windows".into()));
        }
        let len = windows[0].len() / channels;
        let mut mean = vec![0.0; channels];
        let mut std = vec![0.0; channels];
        for c in 0..channels {
            let mut n = 0usize;
            let mut s = 0.0;
            for w in windows {
                s += w[c * len..(c + 1) * len].iter().sum::<f64>();
                n += len;
            }
            let m = s / n as f64;
            let mut ss = 0.0;
            for w in windows {
                ss += w[c * len..(c + 1) * len].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
            mean[c] = m;
            std[c] = libm::sqrt(ss / n as f64);
        }
        let zero_std_channels = (0..channels).filter(|&c| std[c] == 0.0).collect();
        Ok(Self {
            mean,
            std,
            zero_std_channels,
        })
    }

    pub fn apply(&self, window: &[f64]) -> Vec<f64> {
        let channels = self.mean.len();
        let len = window.len() / channels;
        let mut out = Vec::with_capacity(window.len());
        for c in 0..channels {
            let (m, s) = (self.mean[c], self.std[c]);
            out.extend(window[c * len..(c + 1) * len].iter().map(|v| {
                if s > 0.0 {
                    (v - m) / s
                } else {
                    v - m
                }
            }));
        }
        out
    }
}

/// Applies training-split statistics to a batch of windows.
pub fn normalize_zscore(windows: &[&[f64]], stats: &ZscoreStats) -> Vec<Vec<f64>> {
    windows.iter().map(|w| stats.apply(w)).collect()
}

/// Each channel to mean 0 and std 1; constant channels become zeros.
pub fn normalize_instance(window: &[f64], channels: usize) -> Vec<f64> {
    let len = window.len() / channels;
    let mut out = Vec::with_capacity(window.len());
    for c in 0..channels {
        let x = &window[c * len..(c + 1) * len];
        let m = crate::stats::mean(x);
        let s = libm::sqrt(x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / len as f64);
        if s > 1e-12 {
            out.extend(x.iter().map(|v| (v - m) / s));
        } else {
            out.extend(core::iter::repeat(0.0).take(len));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Normalization {
    Zscore,
    Instance,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn record(n: usize, fs: f64) -> RawRecord {
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        RawRecord::new("r", fs, vec!["I".to_string()], vec![x]).unwrap()
    }

    #[test]
    fn segmentation_boundaries() {
        let w = segment(&record(3500, 100.0), 10.0);
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|s| s.len() == 1000));
        assert_eq!(w[2].signal[0][0], 2000.0);
        assert_eq!(segment(&record(1000, 100.0), 10.0).len(), 1);
        assert_eq!(segment(&record(999, 100.0), 10.0).len(), 0);
    }

    #[test]
    fn segment_inverts_concatenation() {
        let parts: Vec<Vec<f64>> = (0..4).map(|k| (0..50).map(|i| (k * 100 + i) as f64).collect()).collect();
        let r = RawRecord::new("c", 5.0, vec!["I".to_string()], vec![parts.concat()]).unwrap();
        let s = segment(&r, 10.0);
        assert_eq!(s.len(), 4);
        for (a, b) in s.iter().zip(&parts) {
            assert_eq!(&a.signal[0], b);
        }
    }

    #[test]
    fn resample_constants_identity_and_sine() {
        for n in [2, 100, 511, 513, 5000] {
            let r = resample_channel(&vec![3.2; n], 512).unwrap();
            assert_eq!(r.len(), 512);
            assert!(r.iter().all(|v| (v - 3.2).abs() < 1e-9));
        }
        let x: Vec<f64> = (0..512).map(|i| libm::sin(i as f64 * 0.37)).collect();
        assert_eq!(resample_channel(&x, 512).unwrap(), x);
        assert!(resample_channel(&[1.0], 512).is_err());

        let fs = 500.0;
        let x: Vec<f64> = (0..5000)
            .map(|i| libm::sin(2.0 * core::f64::consts::PI * 5.0 * i as f64 / fs))
            .collect();
        let y = resample_channel(&x, 512).unwrap();
        let worst = y
            .iter()
            .enumerate()
            .map(|(i, v)| (v - libm::sin(2.0 * core::f64::consts::PI * 5.0 * i as f64 / 51.2)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-2, "{worst}");
    }

    #[test]
    fn zscore_rules() {
        let a: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..8).map(|i| (i * i) as f64 * 0.5).collect();
        let stats = ZscoreStats::fit(&[&a, &b], 2).unwrap();
        let n = normalize_zscore(&[&a, &b], &stats);
        for c in 0..2 {
            let vals: Vec<f64> = n.iter().flat_map(|w| w[c * 4..(c + 1) * 4].to_vec()).collect();
            assert!(crate::stats::mean(&vals).abs() < 1e-6);
            assert!((crate::stats::std_dev(&vals) - 1.0).abs() < 1e-6);
        }
        let fixed = ZscoreStats {
            mean: vec![2.0],
            std: vec![4.0],
            zero_std_channels: vec![],
        };
        assert_eq!(fixed.apply(&[10.0, 2.0]), vec![2.0, 0.0]);
        let flat = ZscoreStats::fit(&[&[5.0, 5.0, 5.0]], 1).unwrap();
        assert_eq!(flat.zero_std_channels, vec![0]);
        assert_eq!(flat.apply(&[6.0, 5.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn instance_norm_rules() {
        let x: Vec<f64> = (1..=64).map(f64::from).collect();
        let y = normalize_instance(&x, 1);
        assert!(crate::stats::mean(&y).abs() < 1e-12);
        assert!((crate::stats::std_dev(&y) - 1.0).abs() < 1e-12);
        assert_eq!(normalize_instance(&[4.0; 8], 1), vec![0.0; 8]);
        let shifted: Vec<f64> = x.iter().map(|v| v + 17.0).collect();
        let z = normalize_instance(&shifted, 1);
        assert!(y.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-9));
        let twice = normalize_instance(&y, 1);
        assert!(y.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn window_shape_is_enforced() {
        assert!(EcgWindow::new(vec![0.0; 511], 1, "r", 0, BTreeSet::new(), QualityFlag::Unknown).is_err());
        let w = EcgWindow::new(vec![0.0; 1024], 2, "r", 3, BTreeSet::new(), QualityFlag::Clean).unwrap();
        assert_eq!(w.id(), "r#3");
        assert_eq!(w.with_quality(QualityFlag::Unanalyzable).quality_flag(), QualityFlag::Unanalyzable);
    }

    #[test]
    fn superclass_names_round_trip() {
        for c in Superclass::ALL {
            assert_eq!(Superclass::parse(c.name()), Some(c));
        }
        assert_eq!(Superclass::parse("xyz"), None);
    }
}

//! SNR estimation of noisy recordings and calibrated noise injection.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{detect_qrs, resample_channel, RawRecord};
use crate::stats::{mean, variance};
use crate::wavelet::{wavelet_denoise, DEFAULT_LEVEL};

/// Slowest rhythm accepted as a real beat train; fewer detections than this
/// rate allows are treated as no QRS at all.
pub const MIN_HEART_RATE_BPM: f64 = 30.0;

/// Half-width of the window around each R peak searched for the QRS extremes.
pub const QRS_HALF_WIDTH_S: f64 = 0.06;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    /// `-inf` when no QRS complex was found.
    #[serde(with = "crate::serde_float")]
    pub estimated_snr_db: f64,
    pub qrs_pp_amplitude: f64,
    pub noise_sigma: f64,
    pub wavelet: String,
    /// Decomposition level actually used (may fall below the requested one).
    pub level: usize,
    pub requested_level: usize,
    pub threshold: f64,
    pub qrs_count: usize,
    pub no_qrs: bool,
}

/// Mean peak-to-peak amplitude around each detected R peak.
pub fn qrs_peak_to_peak(x: &[f64], fs: f64, peaks: &[usize]) -> f64 {
    let half = libm::round(QRS_HALF_WIDTH_S * fs) as usize;
    let pps: Vec<f64> = peaks
        .iter()
        .map(|&p| {
            let seg = &x[p.saturating_sub(half)..(p + half + 1).min(x.len())];
            let hi = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = seg.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .collect();
    mean(&pps)
}

fn beat_train(x: &[f64], fs: f64) -> Result<Vec<usize>> {
    let peaks = detect_qrs(x, fs)?;
    let need = (libm::floor(x.len() as f64 / fs * MIN_HEART_RATE_BPM / 60.0) as usize).max(1);
    Ok(if peaks.len() < need { Vec::new() } else { peaks })
}

/// Signal power `S = pp^2 / 8` of the denoised channel, with its pp amplitude.
/// Fails with [`Error::NoQrs`] when nothing is detected.
pub fn qrs_signal_power(x: &[f64], fs: f64) -> Result<(f64, f64)> {
    let d = wavelet_denoise(x, DEFAULT_LEVEL)?;
    let peaks = beat_train(&d.denoised, fs)?;
    if peaks.is_empty() {
        return Err(Error::NoQrs("no QRS complex detected".into()));
    }
    let pp = qrs_peak_to_peak(&d.denoised, fs, &peaks);
    Ok((pp * pp / 8.0, pp))
}

/// SNR in dB: QRS power of the denoised signal over the residual variance.
pub fn estimate_snr(x: &[f64], fs: f64) -> Result<NoiseCalibration> {
    let d = wavelet_denoise(x, DEFAULT_LEVEL)?;
    let peaks = beat_train(&d.denoised, fs)?;
    let noise_var = variance(&d.residual);
    let mut cal = NoiseCalibration {
        estimated_snr_db: f64::NEG_INFINITY,
        qrs_pp_amplitude: 0.0,
        noise_sigma: libm::sqrt(noise_var),
        wavelet: "db6".to_string(),
        level: d.level,
        requested_level: DEFAULT_LEVEL,
        threshold: d.threshold,
        qrs_count: peaks.len(),
        no_qrs: peaks.is_empty(),
    };
    if !peaks.is_empty() {
        let pp = qrs_peak_to_peak(&d.denoised, fs, &peaks);
        cal.qrs_pp_amplitude = pp;
        cal.estimated_snr_db = if noise_var > 0.0 {
            10.0 * libm::log10(pp * pp / 8.0 / noise_var)
        } else {
            f64::INFINITY
        };
    }
    Ok(cal)
}

/// What was added to a window, enough to replay the injection exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub noise_source: String,
    pub target_snr_db: f64,
    pub offset: usize,
    /// One gain per channel.
    pub gains: Vec<f64>,
}

/// The noise record brought to `fs` (linear interpolation), channel by channel.
pub fn noise_at_rate(noise: &RawRecord, fs: f64) -> Result<Vec<Vec<f64>>> {
    if (noise.fs - fs).abs() < 1e-9 {
        return Ok(noise.signal.clone());
    }
    let len = libm::round(noise.len() as f64 * fs / noise.fs) as usize;
    noise.signal.iter().map(|c| resample_channel(c, len)).collect()
}

/// Adds a segment of `noise` to `window` so that each channel reaches
/// `target_snr_db`, with `S` from the window's QRS amplitude and `N` the
/// gain-scaled variance of the noise segment. The segment offset is drawn
/// from `seed`; channel `c` uses noise channel `c mod channels`.
pub fn inject_noise(window: &RawRecord, noise: &RawRecord, target_snr_db: f64, seed: u64) -> Result<(RawRecord, InjectionRecord)> {
    let noise_sig = noise_at_rate(noise, window.fs)?;
    let n = window.len();
    let avail = noise_sig[0].len();
    if avail <= n {
        return Err(Error::InvalidInput(format!(
            "noise record {} has {avail} samples at {} Hz, window needs more than {n}",
            noise.record_id, window.fs
        )));
    }
    let offset = rng::seeded(seed).random_range(0..=avail - n);
    let mut out = window.clone();
    let mut gains = Vec::with_capacity(window.channels());
    for (c, x) in out.signal.iter_mut().enumerate() {
        let (s, _) = qrs_signal_power(x, window.fs).map_err(|e| match e {
            Error::NoQrs(_) => Error::NoQrs(format!(
                "{} channel {c}: no QRS complex detected, injection refused",
                window.record_id
            )),
            other => other,
        })?;
        let seg = &noise_sig[c % noise_sig.len()][offset..offset + n];
        let nv = variance(seg);
        if !(nv > 0.0) {
            return Err(Error::InvalidInput(format!("noise record {} segment is flat", noise.record_id)));
        }
        let g = libm::sqrt(s / (nv * libm::pow(10.0, target_snr_db / 10.0)));
        for (v, e) in x.iter_mut().zip(seg) {
            *v += g * e;
        }
        gains.push(g);
    }
    Ok((
        out,
        InjectionRecord {
            noise_source: noise.record_id.clone(),
            target_snr_db,
            offset,
            gains,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub target_snr_db: f64,
    pub fraction: f64,
    /// Draw the fraction separately from the ID and OOD strata.
    pub stratified: bool,
    pub noise_source: String,
    pub seed: u64,
}

impl InjectionPlan {
    pub const DEFAULT_FRACTION: f64 = 0.165;

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Config(format!("injection fraction {} outside [0, 1]", self.fraction)));
        }
        Ok(())
    }

    /// `⌊fraction · n⌋`, robust to products landing a hair below an integer.
    pub fn count(&self, n: usize) -> usize {
        (libm::floor(self.fraction * n as f64 + 1e-9) as usize).min(n)
    }
}

/// Which window of which set received noise, with its injection seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedInjection {
    pub set: String,
    pub index: usize,
    pub window_id: String,
    pub seed: u64,
}

fn select(plan: &InjectionPlan, ood: &[bool], set_tag: u64) -> Vec<usize> {
    let strata: Vec<Vec<usize>> = if plan.stratified {
        [false, true]
            .iter()
            .map(|&want| (0..ood.len()).filter(|&i| ood[i] == want).collect())
            .collect()
    } else {
        alloc::vec![(0..ood.len()).collect()]
    };
    let mut chosen = Vec::new();
    for (s, members) in strata.iter().enumerate() {
        let mut r = rng::seeded(rng::derive_seed(plan.seed, set_tag * 16 + s as u64));
        let order = rng::permutation(&mut r, members.len());
        chosen.extend(order.iter().take(plan.count(members.len())).map(|&k| members[k]));
    }
    chosen.sort_unstable();
    chosen
}

/// Injects noise into `⌊fraction · n⌋` windows of each stratum of the
/// validation and test sets. `inject(window, seed)` must return the noisy,
/// normalized replacement; its `injected_noise` tag is set here. Splits that
/// already contain injected windows are refused.
pub fn apply_plan<F>(split: &crate::data::DatasetSplit, plan: &InjectionPlan, mut inject: F) -> Result<(crate::data::DatasetSplit, Vec<PlannedInjection>)>
where
    F: FnMut(&crate::signal::EcgWindow, u64) -> Result<crate::signal::EcgWindow>,
{
    plan.validate()?;
    if split.val.iter().chain(&split.test).any(|w| w.injected_noise.is_some()) {
        return Err(Error::AlreadyInjected);
    }
    let mut out = split.clone();
    let mut log = Vec::new();
    for (tag, name) in [(1u64, "val"), (2, "test")] {
        let (windows, ood) = if tag == 1 {
            (&mut out.val, &split.val_ood)
        } else {
            (&mut out.test, &split.test_ood)
        };
        if plan.fraction > 0.0 && plan.stratified {
            for want in [false, true] {
                let n = ood.iter().filter(|&&o| o == want).count();
                if n > 0 && (n as f64) < 1.0 / plan.fraction {
                    out.warnings.push(format!(
                        "{name} {} stratum of {n} windows is smaller than 1/fraction",
                        if want { "OOD" } else { "ID" }
                    ));
                }
            }
        }
        for i in select(plan, ood, tag) {
            let seed = rng::derive_seed(plan.seed, (tag << 32) | i as u64);
            let mut w = inject(&windows[i], seed)?;
            w.injected_noise = Some(crate::signal::InjectedNoise {
                snr_db: plan.target_snr_db,
                noise_source: plan.noise_source.clone(),
            });
            log.push(PlannedInjection {
                set: name.into(),
                index: i,
                window_id: windows[i].id(),
                seed,
            });
            windows[i] = w;
        }
    }
    Ok((out, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetSplit;
    use crate::signal::{synth_ecg, EcgWindow, QualityFlag, SynthParams};
    use crate::stats::energy;
    use alloc::vec;

    fn white(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        let mut v = vec![0.0; n];
        rng::fill_normal(&mut r, &mut v);
        v.iter_mut().for_each(|x| *x *= sigma);
        v
    }

    fn noise_record(seconds: f64, fs: f64) -> RawRecord {
        let n = (seconds * fs) as usize;
        RawRecord::new("em", fs, vec!["n".into()], vec![white(n, 1.0, 77)]).unwrap()
    }

    #[test]
    fn denoising_examples() {
        let clean = synth_ecg(&SynthParams::normal(72.0, 500.0, 10.0, 1)).unwrap().signal[0].clone();
        let d = wavelet_denoise(&clean, DEFAULT_LEVEL).unwrap();
        assert!(energy(&d.residual) / energy(&clean) < 1e-3);

        let w = white(5000, 1.0, 4);
        let d = wavelet_denoise(&w, DEFAULT_LEVEL).unwrap();
        assert!(energy(&d.denoised) / energy(&w) < 0.2);
    }

    #[test]
    fn level_falls_back_for_short_signals() {
        let c = estimate_snr(&white(1000, 1.0, 1), 100.0).unwrap();
        assert_eq!((c.level, c.requested_level), (9, 11));
    }

    #[test]
    fn clean_and_pure_noise_estimates() {
        let clean = synth_ecg(&SynthParams::normal(72.0, 500.0, 10.0, 1)).unwrap();
        assert!(estimate_snr(&clean.signal[0], 500.0).unwrap().estimated_snr_db > 30.0);
        let c = estimate_snr(&white(5000, 0.5, 9), 500.0).unwrap();
        assert!(c.no_qrs, "{c:?}");
        assert_eq!(c.estimated_snr_db, f64::NEG_INFINITY);
    }

    #[test]
    fn injection_is_monotone_deterministic_and_refuses_flat_windows() {
        let w = synth_ecg(&SynthParams::normal(66.0, 500.0, 10.0, 5)).unwrap();
        let nr = noise_record(60.0, 360.0);
        let dist = |x: &RawRecord| -> f64 {
            x.signal[0].iter().zip(&w.signal[0]).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let (hi, _) = inject_noise(&w, &nr, 24.0, 3).unwrap();
        let (lo, rec) = inject_noise(&w, &nr, 0.0, 3).unwrap();
        assert!(dist(&hi) < dist(&lo));
        let (again, rec2) = inject_noise(&w, &nr, 0.0, 3).unwrap();
        assert_eq!((again, rec2), (lo, rec));

        let flat = RawRecord::new("flat", 500.0, vec!["I".into()], vec![vec![0.0; 5000]]).unwrap();
        assert!(matches!(inject_noise(&flat, &nr, 0.0, 1), Err(Error::NoQrs(_))));
        let short = noise_record(5.0, 500.0);
        assert!(inject_noise(&w, &short, 0.0, 1).is_err());
    }

    fn split(id: usize, ood: usize) -> DatasetSplit {
        let mk = |i: usize| EcgWindow::new(vec![0.0; 512], 1, "r", i, Default::default(), QualityFlag::Unknown).unwrap();
        let n = id + ood;
        DatasetSplit {
            train: vec![],
            val: (0..n).map(mk).collect(),
            test: (0..n).map(mk).collect(),
            val_ood: (0..n).map(|i| i >= id).collect(),
            test_ood: (0..n).map(|i| i >= id).collect(),
            ood_class: None,
            normalization: None,
            zscore: None,
            warnings: vec![],
        }
    }

    fn plan(fraction: f64) -> InjectionPlan {
        InjectionPlan {
            target_snr_db: 0.0,
            fraction,
            stratified: true,
            noise_source: "em".into(),
            seed: 5,
        }
    }

    fn counts(s: &DatasetSplit) -> (usize, usize) {
        let id = s.test.iter().zip(&s.test_ood).filter(|(w, o)| !**o && w.injected_noise.is_some()).count();
        let ood = s.test.iter().zip(&s.test_ood).filter(|(w, o)| **o && w.injected_noise.is_some()).count();
        (id, ood)
    }

    #[test]
    fn plan_counts_per_stratum() {
        let s = split(100, 100);
        let (a, log) = apply_plan(&s, &plan(0.165), |w, _| Ok(w.clone())).unwrap();
        assert_eq!(counts(&a), (16, 16));
        assert_eq!(log.len(), 64);
        let (b, _) = apply_plan(&s, &plan(0.0), |w, _| Ok(w.clone())).unwrap();
        assert_eq!(b, s);
        let (c, _) = apply_plan(&s, &plan(1.0), |w, _| Ok(w.clone())).unwrap();
        assert_eq!(counts(&c), (100, 100));
        assert_eq!(apply_plan(&a, &plan(0.165), |w, _| Ok(w.clone())), Err(Error::AlreadyInjected));
        let (d, _) = apply_plan(&split(3, 2), &plan(0.165), |w, _| Ok(w.clone())).unwrap();
        assert_eq!(counts(&d), (0, 0));
        assert!(!d.warnings.is_empty());
    }
}

//! Synthetic stand-ins for the three corpora: a labeled 10 s corpus with
//! patient-aware folds, a long-term corpus with signal-quality annotations,
//! and an electrode-motion noise record.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ecgfilter_core::data::QualityInterval;
use ecgfilter_core::rng::{self, derive_seed, SeededRng};
use ecgfilter_core::signal::{filtfilt, synth_ecg, Biquad, RawRecord, Superclass, SynthParams};
use ecgfilter_core::stats::{std_dev, variance};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{LabeledCorpusConfig, NoiseCorpusConfig, QualityCorpusConfig};
use crate::error::Result;
use crate::interchange::{write_manifest, write_record, Manifest, RecordEntry};

pub const LABELED_DIR: &str = "labeled";
pub const QUALITY_DIR: &str = "quality";
pub const NOISE_DIR: &str = "noise";
pub const NOISE_TAG: &str = "em";

const LEADS: [&str; 12] = ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];

fn lead_names(channels: usize) -> Vec<String> {
    (0..channels)
        .map(|c| LEADS.get(c).map_or_else(|| format!("ch{c}"), |s| s.to_string()))
        .collect()
}

fn gaussian(r: &mut SeededRng, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    rng::fill_normal(r, &mut v);
    v
}

fn wander(r: &mut SeededRng, n: usize, fs: f64, amp: f64) -> Vec<f64> {
    let f = r.random_range(0.15..0.4);
    let phase = r.random_range(0.0..std::f64::consts::TAU);
    (0..n).map(|i| amp * (std::f64::consts::TAU * f * i as f64 / fs + phase).sin()).collect()
}

/// Electrode-motion-like noise: slow wander, steps and a 2-25 Hz band,
/// scaled to unit standard deviation per channel.
pub fn noise_record(cfg: &NoiseCorpusConfig, seed: u64) -> Result<RawRecord> {
    let n = (cfg.duration_s * cfg.fs).round() as usize;
    let mut signal = Vec::with_capacity(cfg.channels);
    for c in 0..cfg.channels {
        let mut r = rng::seeded(derive_seed(seed, c as u64));
        let band = filtfilt(&[Biquad::highpass(2.0, cfg.fs), Biquad::lowpass(25.0, cfg.fs)], &gaussian(&mut r, n));
        let bs = std_dev(&band).max(1e-12);
        let mut slow = vec![0.0; n];
        for _ in 0..4 {
            let f = r.random_range(0.05..0.5);
            let a = r.random_range(0.3..1.0);
            let ph = r.random_range(0.0..std::f64::consts::TAU);
            for (i, v) in slow.iter_mut().enumerate() {
                *v += a * (std::f64::consts::TAU * f * i as f64 / cfg.fs + ph).sin();
            }
        }
        let mut level = 0.0;
        let mut next = 0usize;
        let mut steps = vec![0.0; n];
        for (i, v) in steps.iter_mut().enumerate() {
            if i == next {
                level = r.random_range(-1.0..1.0);
                next = i + (r.random_range(1.0..6.0) * cfg.fs) as usize;
            }
            *v = level;
        }
        let steps = filtfilt(&[Biquad::lowpass(1.5, cfg.fs)], &steps);
        let mut x: Vec<f64> = (0..n).map(|i| band[i] / bs + slow[i] + steps[i]).collect();
        let m = x.iter().sum::<f64>() / n as f64;
        let s = std_dev(&x).max(1e-12);
        for v in &mut x {
            *v = (*v - m) / s;
        }
        signal.push(x);
    }
    Ok(RawRecord::new(NOISE_TAG, cfg.fs, lead_names(cfg.channels), signal)?)
}

/// Fold of each patient: a seeded permutation dealt round-robin over 1-10.
pub fn patient_folds(patients: usize, seed: u64) -> Vec<u8> {
    let order = rng::permutation(&mut rng::seeded(seed), patients);
    let mut folds = vec![0u8; patients];
    for (rank, &p) in order.iter().enumerate() {
        folds[p] = (rank % 10) as u8 + 1;
    }
    folds
}

fn beat_params(classes: &BTreeSet<Superclass>, hr: f64, fs: f64, dur: f64, seed: u64) -> Vec<SynthParams> {
    classes
        .iter()
        .map(|&c| {
            let mut p = SynthParams::for_class(c, hr, fs, dur, seed);
            p.rr_jitter = 0.05;
            p
        })
        .collect()
}

/// One labeled record: the mean of the class morphologies present, with a
/// shared rhythm, per-lead gain, wander and white noise.
fn labeled_record(cfg: &LabeledCorpusConfig, id: &str, classes: &BTreeSet<Superclass>, seed: u64) -> Result<RawRecord> {
    let mut r = rng::seeded(derive_seed(seed, 1));
    let hr = r.random_range(55.0..95.0);
    let scale = r.random_range(0.8..1.25);
    let parts = beat_params(classes, hr, cfg.fs, cfg.duration_s, seed);
    let mut base: Option<Vec<f64>> = None;
    for p in &parts {
        let x = synth_ecg(&p.scaled(scale / parts.len() as f64))?.signal.remove(0);
        base = Some(match base {
            None => x,
            Some(b) => b.iter().zip(&x).map(|(a, v)| a + v).collect(),
        });
    }
    let base = base.unwrap_or_default();
    let n = base.len();
    let mut signal = Vec::with_capacity(cfg.channels);
    for c in 0..cfg.channels {
        let gain = 1.0 - 0.5 * (c as f64 / cfg.channels.max(1) as f64);
        let amp = r.random_range(0.02..0.1);
        let w = wander(&mut r, n, cfg.fs, amp);
        let e = gaussian(&mut r, n);
        signal.push((0..n).map(|i| gain * base[i] + w[i] + cfg.noise_mv * e[i]).collect());
    }
    Ok(RawRecord::new(id, cfg.fs, lead_names(cfg.channels), signal)?)
}

pub fn labeled_corpus(cfg: &LabeledCorpusConfig, seed: u64) -> Result<Vec<(RecordEntry, RawRecord)>> {
    let folds = patient_folds(cfg.patients, derive_seed(seed, 0x464f));
    let non_norm: Vec<Superclass> = cfg.classes.iter().copied().filter(|&c| c != Superclass::Norm).collect();
    let mut out = Vec::with_capacity(cfg.patients * cfg.records_per_patient);
    for (p, &fold) in folds.iter().enumerate() {
        for k in 0..cfg.records_per_patient {
            let id = format!("lr{:05}", p * cfg.records_per_patient + k);
            let rseed = derive_seed(seed, (p * cfg.records_per_patient + k) as u64 + 0x1000);
            let mut r = rng::seeded(rseed);
            let primary = cfg.classes[r.random_range(0..cfg.classes.len())];
            let mut classes: BTreeSet<Superclass> = [primary].into_iter().collect();
            if primary != Superclass::Norm && r.random_bool(cfg.co_occurrence) {
                let others: Vec<Superclass> = non_norm.iter().copied().filter(|&c| c != primary).collect();
                if !others.is_empty() {
                    classes.insert(others[r.random_range(0..others.len())]);
                }
            }
            let rec = labeled_record(cfg, &id, &classes, rseed)?;
            let mut e = RecordEntry::new(&id, cfg.fs, rec.channel_names.clone(), rec.len());
            e.patient_id = Some(format!("p{p:05}"));
            e.fold = Some(fold);
            e.superclasses = Some(classes);
            out.push((e, rec));
        }
    }
    Ok(out)
}

/// Non-overlapping episodes, one per slot of equal length, as
/// `(start_s, end_s)` rounded to 10 ms.
fn episodes(r: &mut SeededRng, duration: f64, count: usize, len: (f64, f64)) -> Vec<(f64, f64)> {
    let slot = duration / count.max(1) as f64;
    (0..count)
        .filter_map(|k| {
            let l = r.random_range(len.0..=len.1).min(slot - 0.5);
            if l <= 0.0 {
                return None;
            }
            let a = k as f64 * slot + r.random_range(0.0..=(slot - l));
            let round = |v: f64| (v * 100.0).round() / 100.0;
            Some((round(a), round(a + l)))
        })
        .collect()
}

fn cover(duration: f64, stretches: &[(f64, f64, u8)]) -> Vec<QualityInterval> {
    let mut out = Vec::new();
    let mut t = 0.0;
    for &(a, b, class) in stretches {
        if a > t {
            out.push(QualityInterval {
                start_s: t,
                end_s: a,
                class: 1,
            });
        }
        out.push(QualityInterval {
            start_s: a,
            end_s: b,
            class,
        });
        t = b;
    }
    if duration > t {
        out.push(QualityInterval {
            start_s: t,
            end_s: duration,
            class: 1,
        });
    }
    out
}

/// Long single-lead records. Noisy patients get Class-3 episodes with
/// electrode-motion noise at `class3_snr_db`; the rest get short Class-2
/// episodes at `class2_snr_db`. SNR follows the `pp^2/8` convention on the
/// clean signal.
pub fn quality_corpus(cfg: &QualityCorpusConfig, noise: &RawRecord, seed: u64) -> Result<Vec<(RecordEntry, RawRecord)>> {
    let noise = ecgfilter_core::noise::noise_at_rate(noise, cfg.fs)?;
    let order = rng::permutation(&mut rng::seeded(derive_seed(seed, 0x5155)), cfg.patients);
    let noisy_count = ((cfg.noisy_fraction * cfg.patients as f64).round() as usize).clamp(1, cfg.patients - 1);
    let noisy: BTreeSet<usize> = order[..noisy_count].iter().copied().collect();
    let mut out = Vec::with_capacity(cfg.patients);
    for p in 0..cfg.patients {
        let id = format!("qr{p:03}");
        let pseed = derive_seed(seed, p as u64 + 0x2000);
        let mut r = rng::seeded(pseed);
        let hr = r.random_range(55.0..95.0);
        let mut params = SynthParams::normal(hr, cfg.fs, cfg.duration_s, pseed);
        params.rr_jitter = 0.05;
        let clean = synth_ecg(&params.scaled(r.random_range(0.8..1.25)))?.signal.remove(0);
        let n = clean.len();
        let hi = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = clean.iter().copied().fold(f64::INFINITY, f64::min);
        let s = (hi - lo).powi(2) / 8.0;
        let w = wander(&mut r, n, cfg.fs, 0.05);
        let e = gaussian(&mut r, n);
        let mut x: Vec<f64> = (0..n).map(|i| clean[i] + w[i] + 0.01 * e[i]).collect();
        let (class, snr, stretches) = if noisy.contains(&p) {
            (3u8, cfg.class3_snr_db, episodes(&mut r, cfg.duration_s, cfg.episodes, cfg.episode_s))
        } else {
            let k = (cfg.duration_s / 60.0).floor().max(1.0) as usize;
            (2u8, cfg.class2_snr_db, episodes(&mut r, cfg.duration_s, k, (5.0, 10.0)))
        };
        let ch = &noise[0];
        for &(a, b) in &stretches {
            let (i0, i1) = (((a * cfg.fs).round() as usize).min(n), ((b * cfg.fs).round() as usize).min(n));
            let len = i1 - i0;
            if len == 0 || ch.len() <= len {
                continue;
            }
            let off = r.random_range(0..ch.len() - len);
            let seg = &ch[off..off + len];
            let g = (s / (variance(seg).max(1e-12) * 10f64.powf(snr / 10.0))).sqrt();
            for (v, e) in x[i0..i1].iter_mut().zip(seg) {
                *v += g * e;
            }
        }
        let tagged: Vec<(f64, f64, u8)> = stretches.iter().map(|&(a, b)| (a, b, class)).collect();
        let rec = RawRecord::new(id.clone(), cfg.fs, vec!["II".to_string()], vec![x])?;
        let mut entry = RecordEntry::new(&id, cfg.fs, rec.channel_names.clone(), n);
        entry.patient_id = Some(format!("qp{p:03}"));
        entry.quality = Some(cover(n as f64 / cfg.fs, &tagged));
        out.push((entry, rec));
    }
    Ok(out)
}

pub fn write_corpus(dir: &Path, records: &[(RecordEntry, RawRecord)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(crate::AppError::io(dir))?;
    for (e, r) in records {
        write_record(dir, e, r)?;
    }
    write_manifest(dir, &Manifest::new(records.iter().map(|(e, _)| e.clone()).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub labeled_records: usize,
    pub quality_records: usize,
    pub noise_samples: usize,
}

pub fn corpus_dirs(root: &Path) -> [PathBuf; 3] {
    [root.join(LABELED_DIR), root.join(QUALITY_DIR), root.join(NOISE_DIR)]
}

/// Generates and writes all three corpora under `root`.
pub fn synthesize(root: &Path, labeled: &LabeledCorpusConfig, quality: &QualityCorpusConfig, noise: &NoiseCorpusConfig, seed: u64) -> Result<SynthSummary> {
    let [ldir, qdir, ndir] = corpus_dirs(root);
    let em = noise_record(noise, derive_seed(seed, 3))?;
    let mut entry = RecordEntry::new(NOISE_TAG, noise.fs, em.channel_names.clone(), em.len());
    entry.noise_source = Some(NOISE_TAG.to_string());
    write_corpus(&ndir, &[(entry, em.clone())])?;
    let l = labeled_corpus(labeled, derive_seed(seed, 1))?;
    write_corpus(&ldir, &l)?;
    let q = quality_corpus(quality, &em, derive_seed(seed, 2))?;
    write_corpus(&qdir, &q)?;
    Ok(SynthSummary {
        labeled_records: l.len(),
        quality_records: q.len(),
        noise_samples: em.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_balanced() {
        let f = patient_folds(40, 3);
        for k in 1..=10u8 {
            assert_eq!(f.iter().filter(|&&x| x == k).count(), 4);
        }
    }

    #[test]
    fn quality_annotations_cover_records() {
        let em = noise_record(&NoiseCorpusConfig::default(), 1).unwrap();
        let cfg = QualityCorpusConfig {
            patients: 4,
            duration_s: 120.0,
            ..QualityCorpusConfig::default()
        };
        let q = quality_corpus(&cfg, &em, 5).unwrap();
        let mut noisy = 0;
        for (e, r) in &q {
            let meta = ecgfilter_core::data::QualityMeta {
                record_id: e.record_id.clone(),
                patient_id: e.patient().to_string(),
                annotations: e.quality.clone().unwrap(),
            };
            meta.validate().unwrap();
            assert!((meta.annotations.last().unwrap().end_s - r.duration_s()).abs() < 1e-9);
            if meta.class3_seconds() > 0.0 {
                noisy += 1;
            }
        }
        assert_eq!(noisy, 2);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = LabeledCorpusConfig {
            patients: 12,
            co_occurrence: 0.5,
            ..LabeledCorpusConfig::default()
        };
        let a = labeled_corpus(&cfg, 9).unwrap();
        let b = labeled_corpus(&cfg, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|(e, r)| r.len() == 2500 && e.fold.is_some()));
    }
}

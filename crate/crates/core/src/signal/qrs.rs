use alloc::vec;
use alloc::vec::Vec;

use super::filter::{filtfilt, Biquad};
use crate::error::{Error, Result};

const REFRACTORY_S: f64 = 0.2;
const INTEGRATION_S: f64 = 0.15;

/// R-peak sample indices by band-pass, squared derivative, moving-window
/// integration and an adaptive signal/noise threshold with search-back.
pub fn detect_qrs(x: &[f64], fs: f64) -> Result<Vec<usize>> {
    if fs < 50.0 {
        return Err(Error::InvalidInput(alloc::format!("QRS detection needs fs >= 50 Hz, got {fs}")));
    }
    if x.len() < 3 {
        return Ok(Vec::new());
    }
    let bp = filtfilt(&[Biquad::highpass(5.0, fs), Biquad::lowpass(15.0, fs)], x);
    let mut sq = vec![0.0; x.len()];
    for i in 1..x.len() - 1 {
        let d = (bp[i + 1] - bp[i - 1]) * fs / 2.0;
        sq[i] = d * d;
    }
    let mwi = centered_moving_average(&sq, ((INTEGRATION_S * fs) as usize).max(1));
    let top = mwi.iter().copied().fold(0.0, f64::max);
    if !(top > 1e-12) {
        return Ok(Vec::new());
    }

    let refractory = (REFRACTORY_S * fs) as usize;
    let candidates = local_maxima(&mwi, refractory);
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let learn = ((2.0 * fs) as usize).min(x.len());
    let head_max = mwi[..learn].iter().copied().fold(0.0, f64::max);
    let mut spk = 0.25 * head_max;
    let mut npk = 0.5 * mwi[..learn].iter().sum::<f64>() / learn as f64;
    let mut peaks: Vec<usize> = Vec::new();
    let mut rr_avg: Option<f64> = None;
    let mut last_checked = 0usize;

    for (ci, &c) in candidates.iter().enumerate() {
        let thr = npk + 0.25 * (spk - npk);
        // search back over a gap much longer than the running RR
        if let (Some(rr), Some(&prev)) = (rr_avg, peaks.last()) {
            if (c - prev) as f64 > 1.66 * rr {
                let missed = candidates[last_checked..ci]
                    .iter()
                    .copied()
                    .filter(|&m| m > prev + refractory && m + refractory < c && mwi[m] > 0.5 * thr)
                    .max_by(|a, b| mwi[*a].total_cmp(&mwi[*b]));
                if let Some(m) = missed {
                    spk = 0.25 * mwi[m] + 0.75 * spk;
                    peaks.push(m);
                }
            }
        }
        last_checked = ci;
        if mwi[c] > thr {
            if let Some(&prev) = peaks.last() {
                if c < prev + refractory {
                    continue;
                }
                let rr = (c - prev) as f64;
                rr_avg = Some(rr_avg.map_or(rr, |a| 0.875 * a + 0.125 * rr));
            }
            spk = 0.125 * mwi[c] + 0.875 * spk;
            peaks.push(c);
        } else {
            npk = 0.125 * mwi[c] + 0.875 * npk;
        }
    }

    // move each detection onto the largest deviation from the local baseline
    let half = ((INTEGRATION_S * fs) as usize).max(1);
    let mut dev = vec![0.0; x.len()];
    let mut refined: Vec<usize> = peaks
        .iter()
        .map(|&p| {
            let lo = p.saturating_sub(half);
            let hi = (p + half).min(x.len() - 1);
            let base = crate::stats::median(&x[lo..=hi]);
            for i in lo..=hi {
                dev[i] = (x[i] - base).abs();
            }
            (lo..=hi).max_by(|a, b| dev[*a].total_cmp(&dev[*b])).unwrap_or(p)
        })
        .collect();
    refined.sort_unstable();
    let mut out: Vec<usize> = Vec::with_capacity(refined.len());
    for p in refined {
        match out.last() {
            Some(&q) if p < q + refractory => {
                if dev[p] > dev[q] {
                    *out.last_mut().unwrap() = p;
                }
            }
            _ => out.push(p),
        }
    }
    Ok(out)
}

fn centered_moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    let h = w / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + w - h).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Local maxima, keeping the larger of any two closer than `gap`.
fn local_maxima(x: &[f64], gap: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        if x[i] > 0.0 && x[i] >= x[i - 1] && x[i] > x[i + 1] {
            match out.last() {
                Some(&q) if i < q + gap => {
                    if x[i] > x[q] {
                        *out.last_mut().unwrap() = i;
                    }
                }
                _ => out.push(i),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::synth::{synth_ecg, SynthParams};
    use super::*;

    fn score(bpm: f64, seed: u64, fs: f64) -> (f64, f64, usize, usize) {
        let mut p = SynthParams::normal(bpm, fs, 10.0, seed);
        p.rr_jitter = 0.05;
        let rec = synth_ecg(&p).unwrap();
        let n = rec.signal[0].len();
        let tol = (0.03 * fs) as usize;
        // beats whose QRS is cut by the record edge are not scored
        let truth: Vec<usize> = p
            .r_peak_times()
            .iter()
            .map(|t| libm::round(t * fs) as usize)
            .filter(|&t| t >= tol && t + tol < n)
            .collect();
        let det: Vec<usize> = detect_qrs(&rec.signal[0], fs)
            .unwrap()
            .into_iter()
            .filter(|&t| t >= tol && t + tol < n)
            .collect();
        let hit = |a: &[usize], b: &[usize]| a.iter().filter(|&&x| b.iter().any(|&y| x.abs_diff(y) <= tol)).count();
        let recall = hit(&truth, &det) as f64 / truth.len() as f64;
        let precision = hit(&det, &truth) as f64 / det.len().max(1) as f64;
        (recall, precision, det.len(), truth.len())
    }

    #[test]
    fn sixty_bpm_clean() {
        let (r, p, n, _) = score(60.0, 0, 500.0);
        assert!((9..=11).contains(&n), "{n}");
        assert!(r >= 0.9 && p >= 0.9);
    }

    #[test]
    fn recall_and_precision_across_rates_and_seeds() {
        for seed in 0..10 {
            for bpm in [40.0, 60.0, 90.0, 120.0, 150.0, 180.0] {
                let (r, p, n, t) = score(bpm, seed, 250.0);
                assert!(r >= 0.9 && p >= 0.9, "seed {seed} bpm {bpm}: recall {r} precision {p} ({n}/{t})");
            }
        }
    }

    #[test]
    fn flat_and_low_rate_inputs() {
        assert!(detect_qrs(&[0.0; 1000], 100.0).unwrap().is_empty());
        assert!(detect_qrs(&[0.0; 1000], 40.0).is_err());
        let n = detect_qrs(&synth_ecg(&SynthParams::normal(120.0, 500.0, 10.0, 2)).unwrap().signal[0], 500.0)
            .unwrap()
            .len();
        assert!((19..=21).contains(&n), "{n}");
    }

    #[test]
    fn indices_increase_with_refractory_gap() {
        let rec = synth_ecg(&SynthParams::normal(180.0, 360.0, 10.0, 4)).unwrap();
        let d = detect_qrs(&rec.signal[0], 360.0).unwrap();
        assert!(d.windows(2).all(|w| w[1] >= w[0] + 72));
    }
}

//! Orthogonal db6 wavelet transform (periodized) and universal-threshold denoising.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::median;

/// Daubechies-6 reconstruction low-pass filter.
pub const DB6_REC_LO: [f64; 12] = [
    0.11154074335010947,
    0.49462389039845306,
    0.7511339080210954,
    0.31525035170919763,
    -0.22626469396543983,
    -0.12976686756726194,
    0.09750160558732304,
    0.027522865530305727,
    -0.03158203931748603,
    0.0005538422011614961,
    0.004777257510945511,
    -0.0010773010853084796,
];

/// Decomposition depth used for SNR estimation.
pub const DEFAULT_LEVEL: usize = 11;

/// Level-by-level coefficients; `details[0]` is the finest level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    /// Input length at each level, finest first, for exact reconstruction.
    lengths: Vec<usize>,
}

impl Coefficients {
    pub fn level(&self) -> usize {
        self.details.len()
    }
}

fn high_pass() -> [f64; 12] {
    let mut h = [0.0; 12];
    for (n, v) in h.iter_mut().enumerate() {
        let s = if n % 2 == 0 { 1.0 } else { -1.0 };
        *v = s * DB6_REC_LO[11 - n];
    }
    h
}

/// Deepest level with `len >= 2^level`.
pub fn max_level(len: usize) -> usize {
    if len < 2 {
        0
    } else {
        (usize::BITS - 1 - len.leading_zeros()) as usize
    }
}

fn analysis_step(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hi = high_pass();
    let n = x.len();
    let half = n / 2;
    let mut a = Vec::with_capacity(half);
    let mut d = Vec::with_capacity(half);
    for k in 0..half {
        let (mut sa, mut sd) = (0.0, 0.0);
        for j in 0..12 {
            let v = x[(2 * k + j) % n];
            sa += DB6_REC_LO[j] * v;
            sd += hi[j] * v;
        }
        a.push(sa);
        d.push(sd);
    }
    (a, d)
}

fn synthesis_step(a: &[f64], d: &[f64]) -> Vec<f64> {
    let hi = high_pass();
    let n = 2 * a.len();
    let mut x = alloc::vec![0.0; n];
    for k in 0..a.len() {
        for j in 0..12 {
            x[(2 * k + j) % n] += DB6_REC_LO[j] * a[k] + hi[j] * d[k];
        }
    }
    x
}

/// Multi-level decomposition. Odd-length intermediate signals are extended
/// by repeating their last sample.
pub fn dwt(x: &[f64], level: usize) -> Result<Coefficients> {
    let need = 1usize.checked_shl(level as u32).unwrap_or(usize::MAX);
    if level == 0 || x.len() < need {
        return Err(Error::TooShort {
            required: need,
            actual: x.len(),
        });
    }
    let mut cur = x.to_vec();
    let mut details = Vec::with_capacity(level);
    let mut lengths = Vec::with_capacity(level);
    for _ in 0..level {
        lengths.push(cur.len());
        if cur.len() % 2 == 1 {
            cur.push(*cur.last().unwrap());
        }
        let (a, d) = analysis_step(&cur);
        details.push(d);
        cur = a;
    }
    Ok(Coefficients {
        approx: cur,
        details,
        lengths,
    })
}

pub fn idwt(c: &Coefficients) -> Vec<f64> {
    let mut cur = c.approx.clone();
    for (d, &len) in c.details.iter().zip(&c.lengths).rev() {
        cur = synthesis_step(&cur, d);
        cur.truncate(len);
    }
    cur
}

/// `σ·√(2 ln N)` with `σ = median(|d1|) / 0.6745`.
pub fn universal_threshold(d1: &[f64], n: f64) -> f64 {
    let abs: Vec<f64> = d1.iter().map(|v| v.abs()).collect();
    let sigma = median(&abs) / 0.6745;
    sigma * libm::sqrt(2.0 * libm::log(n))
}

pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    let m = v.abs() - tau;
    if m > 0.0 {
        m.copysign(v)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub denoised: Vec<f64>,
    pub residual: Vec<f64>,
    pub level: usize,
    pub threshold: f64,
}

/// Soft-thresholds every detail level at the universal threshold, at
/// `level` or the deepest feasible level if the signal is too short.
pub fn wavelet_denoise(x: &[f64], level: usize) -> Result<Denoised> {
    let level = level.min(max_level(x.len()));
    if level == 0 {
        return Err(Error::TooShort {
            required: 2,
            actual: x.len(),
        });
    }
    let mut c = dwt(x, level)?;
    let tau = universal_threshold(&c.details[0], x.len() as f64);
    for d in &mut c.details {
        for v in d.iter_mut() {
            *v = soft_threshold(*v, tau);
        }
    }
    let denoised = idwt(&c);
    let residual = x.iter().zip(&denoised).map(|(a, b)| a - b).collect();
    Ok(Denoised {
        denoised,
        residual,
        level,
        threshold: tau,
    })
}

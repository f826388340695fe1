use ecgfilter_core::rng;
use ecgfilter_core::signal::{synth_ecg, SynthParams};
use ecgfilter_core::stats::pearson;
use ecgfilter_core::wavelet::{wavelet_denoise, DEFAULT_LEVEL};

fn white(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    let mut v = vec![0.0; n];
    rng::fill_normal(&mut r, &mut v);
    v.iter().map(|x| x * sigma).collect()
}

#[test]
fn white_noise_sigma_0_2_is_removed_with_correlation_above_0_95() {
    let mut low = Vec::new();
    for fs in [360.0, 500.0, 1000.0] {
        let clean = synth_ecg(&SynthParams::normal(72.0, fs, 10.0, 1)).unwrap().signal[0].clone();
        let noisy: Vec<f64> = clean.iter().zip(white(clean.len(), 0.2, 3)).map(|(a, b)| a + b).collect();
        let d = wavelet_denoise(&noisy, DEFAULT_LEVEL).unwrap();
        let r = pearson(&d.denoised, &clean);
        println!("fs {fs}: correlation {r:.4}");
        if !(r > 0.95) {
            low.push(format!("fs {fs}: {r:.4}"));
        }
    }
    assert!(low.is_empty(), "correlation at or below 0.95: {}", low.join(", "));
}

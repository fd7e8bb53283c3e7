//! Direct transcription of the textbook MFCC pipeline: naive O(N^2) DFT,
//! explicit triangle weights and an explicit cosine sum.

use std::f64::consts::PI;

use advspeech::features::{MfccConfig, MfccExtractor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn reference_mfcc(x: &[f64], cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let n = cfg.frame_length;
    let nfft = cfg.fft_size;
    let sr = cfg.sample_rate as f64;
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv_mel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(sr / 2.0);
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| inv_mel(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    let mut out = Vec::new();
    let mut start = 0;
    while start + n <= x.len() {
        let frame: Vec<f64> = (0..n)
            .map(|i| x[start + i] * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
            .collect();
        let power: Vec<f64> = (0..=nfft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (k * i) as f64 / nfft as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect();
        let log_mel: Vec<f64> = (0..cfg.n_mels)
            .map(|j| {
                let (a, b, c) = (points[j], points[j + 1], points[j + 2]);
                let e: f64 = power
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let f = k as f64 * sr / nfft as f64;
                        let w = if f > a && f <= b {
                            (f - a) / (b - a)
                        } else if f > b && f < c {
                            (c - f) / (c - b)
                        } else {
                            0.0
                        };
                        w * p
                    })
                    .sum();
                e.max(cfg.log_floor).ln()
            })
            .collect();
        let m = cfg.n_mels as f64;
        out.push(
            (0..cfg.n_coeffs)
                .map(|k| {
                    let s = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                    s * log_mel
                        .iter()
                        .enumerate()
                        .map(|(i, l)| l * (PI * k as f64 * (i as f64 + 0.5) / m).cos())
                        .sum::<f64>()
                })
                .collect(),
        );
        start += cfg.hop;
    }
    out
}

/// `n` random signals of random length and level against the reference at
/// 1e-6 relative.
pub fn random_signals(n: usize, seed: u64) {
    let cfg = MfccConfig::default();
    let ex = MfccExtractor::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..n {
        let len = rng.gen_range(400..2400);
        let amp = 10f64.powf(rng.gen_range(-3.0..0.0));
        let x: Vec<f64> = (0..len).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
        let fm = ex.extract_samples(&x).unwrap();
        let reference = reference_mfcc(&x, &cfg);
        assert_eq!(fm.frames, reference.len(), "trial {trial}");
        for (t, row) in reference.iter().enumerate() {
            for (f, &r) in row.iter().enumerate() {
                let got = fm.get(t, f);
                assert!(
                    (got - r).abs() <= 1e-6 * r.abs().max(1.0),
                    "trial {trial} frame {t} coeff {f}: {got} vs {r}"
                );
            }
        }
    }
}

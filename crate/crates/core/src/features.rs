//! MFCC extraction, its gradient with respect to the waveform, and fixed-size
//! zero padding.
//!
//! Pipeline per frame: Hann window, zero-padded FFT, power spectrum,
//! triangular mel filterbank (HTK mel scale, 0 Hz to Nyquist), natural log
//! with a floor, orthonormal DCT-II. Matrices are frames x coefficients.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Frame count of the longest (7 s) clip at a 10 ms hop.
pub const FULL_T_MAX: usize = 698;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub n_coeffs: usize,
    pub frame_length: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fft_size: usize,
    pub t_max: usize,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_coeffs: 40,
            frame_length: 400,
            hop: 160,
            n_mels: 64,
            fft_size: 512,
            t_max: FULL_T_MAX,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive".into());
        }
        if self.n_coeffs == 0 || self.n_coeffs > self.n_mels {
            return fail(format!(
                "n_coeffs {} must be in 1..={}",
                self.n_coeffs, self.n_mels
            ));
        }
        if self.frame_length == 0 || self.frame_length > self.fft_size {
            return fail(format!(
                "frame_length {} must be in 1..={}",
                self.frame_length, self.fft_size
            ));
        }
        if self.hop == 0 {
            return fail("hop must be at least 1".into());
        }
        if self.t_max == 0 {
            return fail("t_max must be at least 1".into());
        }
        if !(self.log_floor > 0.0) {
            return fail("log_floor must be positive".into());
        }
        Ok(())
    }

    /// `floor((len - frame_length) / hop) + 1`, or an error for clips shorter
    /// than one frame.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len < self.frame_length {
            return Err(Error::TooShort {
                needed: self.frame_length,
                got: len,
            });
        }
        Ok((len - self.frame_length) / self.hop + 1)
    }

    /// Largest sample count whose frame count still fits in `t_max`.
    pub fn max_samples(&self) -> usize {
        (self.t_max - 1) * self.hop + self.frame_length + self.hop - 1
    }
}

/// Cepstral matrix, `frames x coeffs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: Vec<f64>,
    pub frames: usize,
    pub coeffs: usize,
    pub frame_count_unpadded: usize,
}

impl FeatureMap {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.coeffs..(t + 1) * self.coeffs]
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.coeffs + f]
    }

    /// Flat dump: `"AFM1"`, frames and coeffs as u32 LE, then row-major f32.
    pub fn to_afm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.values.len());
        out.extend_from_slice(b"AFM1");
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.coeffs as u32).to_le_bytes());
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_afm_bytes(bytes: &[u8]) -> Result<FeatureMap> {
        if bytes.len() < 12 || &bytes[0..4] != b"AFM1" {
            return Err(Error::Format("missing AFM1 header".into()));
        }
        let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let coeffs = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != 4 * frames * coeffs {
            return Err(Error::Format(format!(
                "AFM1 body has {} bytes, header implies {}",
                body.len(),
                4 * frames * coeffs
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(FeatureMap {
            values,
            frames,
            coeffs,
            frame_count_unpadded: frames,
        })
    }
}

/// Zero-pads a feature map to exactly `t_max` rows.
pub fn pad_to(fm: &FeatureMap, t_max: usize) -> Result<FeatureMap> {
    if fm.frames > t_max {
        return Err(Error::Overflow {
            frames: fm.frames,
            limit: t_max,
        });
    }
    let mut values = fm.values.clone();
    values.resize(t_max * fm.coeffs, 0.0);
    Ok(FeatureMap {
        values,
        frames: t_max,
        coeffs: fm.coeffs,
        frame_count_unpadded: fm.frame_count_unpadded,
    })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Orthonormal DCT-II matrix, `n x n`, row k = basis vector k.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[k * n + i] =
                scale * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

/// One triangular filter restricted to its non-zero bins.
#[derive(Debug, Clone)]
pub struct MelFilter {
    pub first_bin: usize,
    pub weights: Vec<f64>,
}

/// Triangular filters over the one-sided spectrum `0..=fft_size/2`.
pub fn mel_filterbank(cfg: &MfccConfig) -> Vec<MelFilter> {
    let n_bins = cfg.fft_size / 2 + 1;
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;

    (0..cfg.n_mels)
        .map(|j| {
            let (lo, center, hi) = (edges[j], edges[j + 1], edges[j + 2]);
            let mut first_bin = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first_bin.get_or_insert(k);
                    weights.push(w);
                } else if first_bin.is_some() {
                    break;
                }
            }
            MelFilter {
                first_bin: first_bin.unwrap_or(0),
                weights,
            }
        })
        .collect()
}

/// Intermediate values kept by [`MfccExtractor::extract_with_cache`] for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct MfccCache {
    n_samples: usize,
    frames: usize,
    spectra: Vec<Complex64>,
    mel_energy: Vec<f64>,
}

/// Precomputed window, filterbank, DCT basis and FFT plan for one config.
#[derive(Clone)]
pub struct MfccExtractor {
    cfg: MfccConfig,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor").field("cfg", &self.cfg).finish()
    }
}

impl MfccExtractor {
    pub fn new(cfg: &MfccConfig) -> Result<Self> {
        cfg.validate()?;
        // periodic Hann
        let window = (0..cfg.frame_length)
            .map(|n| {
                0.5 - 0.5
                    * (2.0 * std::f64::consts::PI * n as f64 / cfg.frame_length as f64).cos()
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(cfg.fft_size);
        let ifft = planner.plan_fft_inverse(cfg.fft_size);
        let full_dct = dct_matrix(cfg.n_mels);
        Ok(Self {
            cfg: cfg.clone(),
            window,
            filters: mel_filterbank(cfg),
            dct: full_dct[..cfg.n_coeffs * cfg.n_mels].to_vec(),
            fft,
            ifft,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn extract(&self, w: &Waveform) -> Result<FeatureMap> {
        self.check_rate(w)?;
        Ok(self.run(&w.samples, false)?.0)
    }

    pub fn extract_samples(&self, samples: &[f64]) -> Result<FeatureMap> {
        Ok(self.run(samples, false)?.0)
    }

    pub fn extract_with_cache(&self, samples: &[f64]) -> Result<(FeatureMap, MfccCache)> {
        let (fm, cache) = self.run(samples, true)?;
        Ok((fm, cache.expect("cache requested")))
    }

    fn check_rate(&self, w: &Waveform) -> Result<()> {
        if w.sample_rate != self.cfg.sample_rate {
            return Err(Error::Domain(format!(
                "waveform rate {} Hz does not match feature rate {} Hz",
                w.sample_rate, self.cfg.sample_rate
            )));
        }
        Ok(())
    }

    fn run(&self, samples: &[f64], keep: bool) -> Result<(FeatureMap, Option<MfccCache>)> {
        let cfg = &self.cfg;
        let frames = cfg.frame_count(samples.len())?;
        let n_bins = cfg.fft_size / 2 + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut log_mel = vec![0.0; cfg.n_mels];
        let mut values = vec![0.0; frames * cfg.n_coeffs];
        let mut spectra = if keep {
            Vec::with_capacity(frames * n_bins)
        } else {
            Vec::new()
        };
        let mut mel_energy = if keep {
            Vec::with_capacity(frames * cfg.n_mels)
        } else {
            Vec::new()
        };

        for t in 0..frames {
            let start = t * cfg.hop;
            for (n, slot) in buf.iter_mut().enumerate() {
                *slot = if n < cfg.frame_length {
                    Complex64::new(samples[start + n] * self.window[n], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n_bins {
                power[k] = buf[k].norm_sqr();
            }
            if keep {
                spectra.extend_from_slice(&buf[..n_bins]);
            }
            for (m, filter) in self.filters.iter().enumerate() {
                let energy: f64 = filter
                    .weights
                    .iter()
                    .zip(&power[filter.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
                if keep {
                    mel_energy.push(energy);
                }
                log_mel[m] = energy.max(cfg.log_floor).ln();
            }
            let row = &mut values[t * cfg.n_coeffs..(t + 1) * cfg.n_coeffs];
            for (j, out) in row.iter_mut().enumerate() {
                let basis = &self.dct[j * cfg.n_mels..(j + 1) * cfg.n_mels];
                *out = basis.iter().zip(&log_mel).map(|(b, l)| b * l).sum();
            }
        }

        let fm = FeatureMap {
            values,
            frames,
            coeffs: cfg.n_coeffs,
            frame_count_unpadded: frames,
        };
        let cache = keep.then(|| MfccCache {
            n_samples: samples.len(),
            frames,
            spectra,
            mel_energy,
        });
        Ok((fm, cache))
    }

    /// Gradient of a scalar loss with respect to the input samples, given its
    /// gradient with respect to the (unpadded) coefficients.
    pub fn backward(&self, cache: &MfccCache, grad: &[f64]) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        if grad.len() < cache.frames * cfg.n_coeffs {
            return Err(Error::Shape(format!(
                "coefficient gradient has {} values, expected {}",
                grad.len(),
                cache.frames * cfg.n_coeffs
            )));
        }
        let n_bins = cfg.fft_size / 2 + 1;
        let mut out = vec![0.0; cache.n_samples];
        let mut g_log = vec![0.0; cfg.n_mels];
        let mut g_power = vec![0.0; n_bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.ifft.get_inplace_scratch_len()];

        for t in 0..cache.frames {
            let g_row = &grad[t * cfg.n_coeffs..(t + 1) * cfg.n_coeffs];
            if g_row.iter().all(|&g| g == 0.0) {
                continue;
            }
            g_log.iter_mut().for_each(|g| *g = 0.0);
            for (j, &g) in g_row.iter().enumerate() {
                let basis = &self.dct[j * cfg.n_mels..(j + 1) * cfg.n_mels];
                for (acc, b) in g_log.iter_mut().zip(basis) {
                    *acc += g * b;
                }
            }
            g_power.iter_mut().for_each(|g| *g = 0.0);
            let energies = &cache.mel_energy[t * cfg.n_mels..(t + 1) * cfg.n_mels];
            for ((filter, &e), &gl) in self.filters.iter().zip(energies).zip(&g_log) {
                // floored energies are constant
                if e <= cfg.log_floor {
                    continue;
                }
                let ge = gl / e;
                for (acc, w) in g_power[filter.first_bin..].iter_mut().zip(&filter.weights) {
                    *acc += ge * w;
                }
            }
            let spectrum = &cache.spectra[t * n_bins..(t + 1) * n_bins];
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = if k < n_bins {
                    spectrum[k] * g_power[k]
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = t * cfg.hop;
            for n in 0..cfg.frame_length {
                out[start + n] += 2.0 * buf[n].re * self.window[n];
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper building an extractor for a single call.
pub fn mfcc(w: &Waveform, cfg: &MfccConfig) -> Result<FeatureMap> {
    MfccExtractor::new(cfg)?.extract(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, len: usize, amp: f64) -> Vec<f64> {
        (0..len)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
            .collect()
    }

    #[test]
    fn silence_gives_constant_frames() {
        let cfg = MfccConfig::default();
        let fm = mfcc(&Waveform::new(vec![0.0; 16000], 16000), &cfg).unwrap();
        assert_eq!(fm.frames, 98);
        assert_eq!(fm.coeffs, 40);
        let c0 = (1.0f64 / 64.0).sqrt() * 64.0 * 1e-10f64.ln();
        for t in 0..fm.frames {
            assert!((fm.get(t, 0) - c0).abs() < 1e-9);
            for f in 1..40 {
                assert!(fm.get(t, f).abs() < 1e-9);
            }
            assert_eq!(fm.row(t), fm.row(0));
        }
    }

    #[test]
    fn too_short_and_bad_config() {
        let cfg = MfccConfig::default();
        assert!(matches!(
            mfcc(&Waveform::new(vec![0.0; 399], 16000), &cfg),
            Err(Error::TooShort { .. })
        ));
        let bad = MfccConfig {
            n_coeffs: 65,
            ..cfg.clone()
        };
        assert!(matches!(MfccExtractor::new(&bad), Err(Error::Config(_))));
        let bad = MfccConfig {
            frame_length: 600,
            ..cfg
        };
        assert!(matches!(MfccExtractor::new(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn frame_count_formula_exhaustive() {
        let cfg = MfccConfig::default();
        let ex = MfccExtractor::new(&cfg).unwrap();
        for len in 400..=4000usize {
            let expected = (len - 400) / 160 + 1;
            assert_eq!(cfg.frame_count(len).unwrap(), expected);
        }
        // spot check the extractor agrees with the formula
        for len in [400, 559, 560, 561, 4000] {
            let fm = ex.extract_samples(&vec![0.1; len]).unwrap();
            assert_eq!(fm.frames, (len - 400) / 160 + 1);
        }
    }

    #[test]
    fn max_samples_fits_t_max() {
        let cfg = MfccConfig {
            t_max: 50,
            ..MfccConfig::default()
        };
        let n = cfg.max_samples();
        assert_eq!(cfg.frame_count(n).unwrap(), 50);
        assert_eq!(cfg.frame_count(n + 1).unwrap(), 51);
    }

    #[test]
    fn dct_is_orthonormal() {
        let n = 64;
        let d = dct_matrix(n);
        let x: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let y: Vec<f64> = (0..n)
            .map(|k| (0..n).map(|i| d[k * n + i] * x[i]).sum())
            .collect();
        let back: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|k| d[k * n + i] * y[k]).sum())
            .collect();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_partitions_between_centers() {
        for cfg in [
            MfccConfig::default(),
            MfccConfig {
                frame_length: 2048,
                hop: 2048,
                fft_size: 2048,
                ..MfccConfig::default()
            },
        ] {
            let filters = mel_filterbank(&cfg);
            let n_bins = cfg.fft_size / 2 + 1;
            let mut total = vec![0.0; n_bins];
            for f in &filters {
                assert!(!f.weights.is_empty(), "empty mel filter");
                for (i, w) in f.weights.iter().enumerate() {
                    total[f.first_bin + i] += w;
                }
            }
            let mel_max = hz_to_mel(cfg.sample_rate as f64 / 2.0);
            let first_center = mel_to_hz(mel_max / (cfg.n_mels + 1) as f64);
            let last_center =
                mel_to_hz(mel_max * cfg.n_mels as f64 / (cfg.n_mels + 1) as f64);
            let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
            for (k, &s) in total.iter().enumerate() {
                let f = k as f64 * bin_hz;
                if f >= first_center && f <= last_center {
                    assert!(s > 0.0 && s <= 1.0001, "bin {k} weight {s}");
                }
            }
        }
    }

    #[test]
    fn scaling_shifts_only_c0() {
        let cfg = MfccConfig::default();
        let ex = MfccExtractor::new(&cfg).unwrap();
        // broadband so no mel band sits on the log floor
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..8000).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let k = 1.7f64;
        let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
        let a = ex.extract_samples(&x).unwrap();
        let b = ex.extract_samples(&scaled).unwrap();
        let shift = 2.0 * k.ln() * (64f64).sqrt();
        assert!(a.frame_count_unpadded > 0);
        for t in 0..a.frame_count_unpadded {
            assert!((b.get(t, 0) - a.get(t, 0) - shift).abs() < 1e-6);
            for f in 1..40 {
                assert!((b.get(t, f) - a.get(t, f)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn deterministic() {
        let cfg = MfccConfig::default();
        let x = tone(440.0, 5000, 0.5);
        let a = mfcc(&Waveform::new(x.clone(), 16000), &cfg).unwrap();
        let b = mfcc(&Waveform::new(x, 16000), &cfg).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn pad_examples() {
        let cfg = MfccConfig::default();
        let fm = mfcc(&Waveform::new(tone(300.0, 16000, 0.2), 16000), &cfg).unwrap();
        assert_eq!(fm.frames, 98);
        let padded = pad_to(&fm, 698).unwrap();
        assert_eq!(padded.frames, 698);
        assert_eq!(padded.frame_count_unpadded, 98);
        assert_eq!(&padded.values[..98 * 40], &fm.values[..]);
        assert!(padded.values[98 * 40..].iter().all(|&v| v == 0.0));

        let same = pad_to(&padded, 698).unwrap();
        assert_eq!(same, padded);

        let long = FeatureMap {
            values: vec![0.0; 699 * 40],
            frames: 699,
            coeffs: 40,
            frame_count_unpadded: 699,
        };
        assert!(matches!(pad_to(&long, 698), Err(Error::Overflow { .. })));
    }

    #[test]
    fn afm_round_trip() {
        let fm = FeatureMap {
            values: vec![1.5, -2.25, 0.0, 3.0, 4.0, -0.5],
            frames: 3,
            coeffs: 2,
            frame_count_unpadded: 3,
        };
        let bytes = fm.to_afm_bytes();
        assert_eq!(&bytes[..4], b"AFM1");
        assert_eq!(bytes.len(), 12 + 24);
        assert_eq!(FeatureMap::from_afm_bytes(&bytes).unwrap(), fm);
        assert!(FeatureMap::from_afm_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = MfccConfig {
            n_coeffs: 13,
            frame_length: 64,
            hop: 32,
            n_mels: 20,
            fft_size: 128,
            ..MfccConfig::default()
        };
        let ex = MfccExtractor::new(&cfg).unwrap();
        let x: Vec<f64> = (0..256)
            .map(|i| 0.3 * ((i as f64) * 0.37).sin() + 0.05 * ((i * 7 % 13) as f64 - 6.0) / 6.0)
            .collect();
        let (fm, cache) = ex.extract_with_cache(&x).unwrap();
        // loss = sum of weighted coefficients
        let weights: Vec<f64> = (0..fm.values.len())
            .map(|i| ((i * 31 % 17) as f64 - 8.0) / 8.0)
            .collect();
        let loss = |s: &[f64]| -> f64 {
            let f = ex.extract_samples(s).unwrap();
            f.values.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let grad = ex.backward(&cache, &weights).unwrap();
        let eps = 1e-6;
        for i in (0..x.len()).step_by(7) {
            let mut plus = x.clone();
            plus[i] += eps;
            let mut minus = x.clone();
            minus[i] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            assert!(err < 1e-4, "sample {i}: fd {fd} analytic {}", grad[i]);
        }
    }
}

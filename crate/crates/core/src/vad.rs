//! Energy-percentile voice activity detection used as a corpus filter.
//!
//! A frame is speech when its log-energy exceeds a low percentile of the
//! clip's frame energies by a fixed margin. Framing follows the MFCC config so
//! flags line up one-to-one with feature frames.

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::MfccConfig;

/// Speech-ratio threshold applied when selecting corpus files.
pub const SPEECH_RATIO_THRESHOLD: f64 = 0.68;

/// Floor on per-frame mean power, -200 dB.
const ENERGY_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadParams {
    pub energy_percentile: f64,
    pub margin_db: f64,
}

impl Default for VadParams {
    fn default() -> Self {
        Self {
            energy_percentile: 10.0,
            margin_db: 9.0,
        }
    }
}

impl VadParams {
    /// Identifier recorded in manifests next to the parameters.
    pub fn algorithm_id(&self) -> String {
        format!(
            "energy-percentile(p={},margin={}dB)",
            self.energy_percentile, self.margin_db
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadResult {
    pub frame_flags: Vec<bool>,
    pub speech_ratio: f64,
}

/// Per-frame energies in dB (`10 log10(mean square)`, floored at -200 dB).
pub fn frame_energies_db(samples: &[f64], cfg: &MfccConfig) -> Result<Vec<f64>> {
    let frames = cfg.frame_count(samples.len())?;
    Ok((0..frames)
        .map(|t| {
            let frame = &samples[t * cfg.hop..t * cfg.hop + cfg.frame_length];
            let power = frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64;
            10.0 * power.max(ENERGY_FLOOR).log10()
        })
        .collect())
}

/// Linear-interpolated percentile (`p` in [0, 100]) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Flags frames as speech from a precomputed energy sequence.
pub fn classify_energies(energies_db: &[f64], params: &VadParams) -> VadResult {
    if energies_db.is_empty() {
        return VadResult {
            frame_flags: Vec::new(),
            speech_ratio: 0.0,
        };
    }
    let threshold = percentile(energies_db, params.energy_percentile) + params.margin_db;
    let frame_flags: Vec<bool> = energies_db.iter().map(|&e| e > threshold).collect();
    let speech = frame_flags.iter().filter(|&&f| f).count();
    VadResult {
        speech_ratio: speech as f64 / frame_flags.len() as f64,
        frame_flags,
    }
}

pub fn speech_ratio(w: &Waveform, cfg: &MfccConfig, params: &VadParams) -> Result<VadResult> {
    if params.energy_percentile.is_nan() || !(0.0..=100.0).contains(&params.energy_percentile) {
        return Err(Error::Domain(format!(
            "energy percentile {} outside [0, 100]",
            params.energy_percentile
        )));
    }
    let energies = frame_energies_db(&w.samples, cfg)?;
    Ok(classify_energies(&energies, params))
}

/// Strict comparison: a clip passes only with *more than* `threshold` speech.
pub fn passes_speech_filter(v: &VadResult, threshold: f64) -> bool {
    v.speech_ratio > threshold
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `frames` analysis frames of which the first `loud` overlap a tone.
    fn constructed(loud_fraction: f64, len: usize) -> Vec<f64> {
        let loud = (loud_fraction * len as f64).round() as usize;
        (0..len)
            .map(|i| {
                if i < loud {
                    0.5 * (i as f64 * 0.2).sin()
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn silence_has_no_speech() {
        let cfg = MfccConfig::default();
        let v = speech_ratio(&Waveform::new(vec![0.0; 16000], 16000), &cfg, &VadParams::default())
            .unwrap();
        assert_eq!(v.speech_ratio, 0.0);
        assert_eq!(v.frame_flags.len(), 98);
    }

    #[test]
    fn too_short_rejected() {
        let cfg = MfccConfig::default();
        assert!(matches!(
            speech_ratio(&Waveform::new(vec![0.0; 10], 16000), &cfg, &VadParams::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn filter_is_strict() {
        let mk = |r| VadResult {
            frame_flags: vec![],
            speech_ratio: r,
        };
        assert!(passes_speech_filter(&mk(0.90), 0.68));
        assert!(passes_speech_filter(&mk(0.69), 0.68));
        assert!(!passes_speech_filter(&mk(0.68), 0.68));
        assert!(!passes_speech_filter(&mk(0.50), 0.68));
    }

    #[test]
    fn constructed_fractions_recovered() {
        // Frames straddling the tone/silence edge contain some tone energy and
        // count as speech, so the tolerance is the number of frames that can
        // overlap one boundary point.
        let cfg = MfccConfig::default();
        let straddle = (cfg.frame_length as f64 / cfg.hop as f64).ceil() + 1.0;
        for k in [0.3, 0.5, 0.7, 0.85] {
            let w = Waveform::new(constructed(k, 32000), 16000);
            let v = speech_ratio(&w, &cfg, &VadParams::default()).unwrap();
            let n = v.frame_flags.len() as f64;
            let diff = (v.speech_ratio - k).abs() * n;
            assert!(diff <= straddle, "k={k}: ratio {} ({diff} frames off)", v.speech_ratio);
        }
    }

    #[test]
    fn percentile_reference_saturates_when_mostly_loud() {
        // With fewer quiet frames than the reference percentile, the reference
        // itself is a loud frame and nothing clears the margin.
        let cfg = MfccConfig::default();
        let w = Waveform::new(constructed(0.95, 32000), 16000);
        let v = speech_ratio(&w, &cfg, &VadParams::default()).unwrap();
        assert_eq!(v.speech_ratio, 0.0);
    }

    #[test]
    fn config_alignment() {
        let cfg = MfccConfig::default();
        let w = Waveform::new(constructed(0.7, 12345), 16000);
        let v = speech_ratio(&w, &cfg, &VadParams::default()).unwrap();
        assert_eq!(v.frame_flags.len(), cfg.frame_count(12345).unwrap());
    }

    proptest! {
        #[test]
        fn ratio_is_permutation_invariant(
            energies in prop::collection::vec(-120.0f64..0.0, 5..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = energies.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let p = VadParams::default();
            prop_assert_eq!(
                classify_energies(&energies, &p).speech_ratio,
                classify_energies(&shuffled, &p).speech_ratio
            );
        }

        #[test]
        fn raising_margin_never_adds_speech(
            energies in prop::collection::vec(-120.0f64..0.0, 5..60),
            m1 in 0.0f64..30.0,
            extra in 0.0f64..30.0,
        ) {
            let lo = VadParams { margin_db: m1, ..VadParams::default() };
            let hi = VadParams { margin_db: m1 + extra, ..VadParams::default() };
            prop_assert!(
                classify_energies(&energies, &hi).speech_ratio
                    <= classify_energies(&energies, &lo).speech_ratio
            );
        }
    }
}

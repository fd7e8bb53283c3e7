//! Waveform to network input: MFCC, per-coefficient standardization and
//! zero padding to a fixed frame count, with the matching backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{pad_to, FeatureMap, MfccCache, MfccConfig, MfccExtractor};
use crate::nn::Tensor;

/// Per-coefficient affine normalization fitted on unpadded training frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Values are snapped to `f32` so a model and its checkpoint agree exactly.
    pub fn fit(maps: &[&FeatureMap]) -> Result<Self> {
        let coeffs = maps
            .first()
            .ok_or_else(|| Error::InsufficientData("no feature maps to fit".into()))?
            .coeffs;
        let mut sum = vec![0.0; coeffs];
        let mut sq = vec![0.0; coeffs];
        let mut n = 0usize;
        for fm in maps {
            for t in 0..fm.frame_count_unpadded {
                for (f, v) in fm.row(t).iter().enumerate() {
                    sum[f] += v;
                    sq[f] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InsufficientData("no unpadded frames".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n as f64 - m * m).max(0.0).sqrt().max(1e-3)) as f32 as f64)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32 as f64).collect(),
            std,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Frontend {
    cfg: MfccConfig,
    extractor: MfccExtractor,
    norm: Standardizer,
}

impl Frontend {
    pub fn new(cfg: &MfccConfig, norm: Standardizer) -> Result<Self> {
        if norm.mean.len() != cfg.n_coeffs || norm.std.len() != cfg.n_coeffs {
            return Err(Error::Shape(format!(
                "standardizer has {} coefficients, features have {}",
                norm.mean.len(),
                cfg.n_coeffs
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            extractor: MfccExtractor::new(cfg)?,
            norm,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.norm
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.cfg.t_max, self.cfg.n_coeffs, 1]
    }

    pub fn features(&self, samples: &[f64]) -> Result<FeatureMap> {
        let fm = self.extractor.extract_samples(samples)?;
        pad_to(&fm, self.cfg.t_max)
    }

    /// Standardized map of an already extracted feature map, zero-padded to
    /// `t_max` rows after standardization so padding is exactly zero at the
    /// network input.
    pub fn tensor_from_map(&self, fm: &FeatureMap) -> Result<Tensor> {
        let fm = pad_to(fm, self.cfg.t_max)?;
        let real = fm.frame_count_unpadded * fm.coeffs;
        let values = fm
            .values
            .chunks(fm.coeffs)
            .enumerate()
            .flat_map(|(t, row)| {
                let pad = t * fm.coeffs >= real;
                row.iter()
                    .zip(&self.norm.mean)
                    .zip(&self.norm.std)
                    .map(move |((v, m), s)| if pad { 0.0 } else { (v - m) / s })
            })
            .collect();
        Tensor::new(self.input_shape(), values)
    }

    pub fn tensor(&self, samples: &[f64]) -> Result<Tensor> {
        let fm = self.extractor.extract_samples(samples)?;
        self.tensor_from_map(&fm)
    }

    pub fn tensor_with_cache(&self, samples: &[f64]) -> Result<(Tensor, MfccCache, usize)> {
        let (fm, cache) = self.extractor.extract_with_cache(samples)?;
        let frames = fm.frames;
        Ok((self.tensor_from_map(&fm)?, cache, frames))
    }

    /// Sample gradient from a gradient on the padded, standardized input.
    /// Padding rows are constants and drop out.
    pub fn backward(&self, cache: &MfccCache, frames: usize, grad_input: &[f64]) -> Result<Vec<f64>> {
        let c = self.cfg.n_coeffs;
        let g: Vec<f64> = grad_input[..frames * c]
            .chunks(c)
            .flat_map(|row| row.iter().zip(&self.norm.std).map(|(g, s)| g / s))
            .collect();
        self.extractor.backward(cache, &g)
    }
}

impl Frontend {
    /// Standardized map without padding (`[frames, n_coeffs, 1]`), for
    /// networks that run on any number of frames. Frames beyond `t_max` are
    /// rejected.
    pub fn unpadded_with_cache(&self, samples: &[f64]) -> Result<(Tensor, MfccCache, usize)> {
        let (fm, cache) = self.extractor.extract_with_cache(samples)?;
        if fm.frames > self.cfg.t_max {
            return Err(Error::Overflow {
                frames: fm.frames,
                limit: self.cfg.t_max,
            });
        }
        let frames = fm.frames;
        let values = fm
            .values
            .chunks(fm.coeffs)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.norm.mean)
                    .zip(&self.norm.std)
                    .map(|((v, m), s)| (v - m) / s)
            })
            .collect();
        Ok((Tensor::new(vec![frames, fm.coeffs, 1], values)?, cache, frames))
    }

    pub fn extract_unpadded(&self, samples: &[f64]) -> Result<FeatureMap> {
        self.extractor.extract_samples(samples)
    }
}

//! Binary normal/adversarial CNN over zero-padded MFCC maps.
//!
//! Three 2x2 convolutions with small pools between them, a 128-unit dense
//! layer and a two-way softmax. Widths are configurable so a narrow variant
//! can run in CI; the wiring is the same at every width.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav_at, Waveform};
use crate::dataset::{validate_manifest, DatasetManifest, ExampleLabel, ValidateOptions};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, MfccConfig, MfccExtractor};
use crate::frontend::{Frontend, Standardizer};
use crate::nn::{accuracy, checkpoint, train_classifier, AdamConfig, EpochStats, LayerSpec, Network, Tensor, TrainConfig};
use crate::par;
use crate::seeds::derive;

pub const CLASS_NAMES: [&str; 2] = ["normal", "adversarial"];

/// Smallest frame count the layer stack is specified for.
pub const MIN_T_MAX: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThirdActivation {
    #[default]
    Linear,
    Selu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorArch {
    /// Filters of the three convolutions.
    pub conv_filters: [usize; 3],
    pub dense_units: usize,
    /// Pool after the third convolution.
    pub third_pool: [usize; 2],
    pub third_activation: ThirdActivation,
}

impl DetectorArch {
    /// 64/64/32 filters, 128 dense units.
    pub fn full() -> Self {
        Self {
            conv_filters: [64, 64, 32],
            dense_units: 128,
            third_pool: [2, 2],
            third_activation: ThirdActivation::Linear,
        }
    }

    /// Quarter-width variant for single-core runs.
    pub fn desk() -> Self {
        Self {
            conv_filters: [16, 16, 8],
            dense_units: 32,
            ..Self::full()
        }
    }
}

impl Default for DetectorArch {
    fn default() -> Self {
        Self::full()
    }
}

pub fn detector_layers(arch: &DetectorArch) -> Vec<LayerSpec> {
    let [f1, f2, f3] = arch.conv_filters;
    vec![
        LayerSpec::conv(f1, 2, 2),
        LayerSpec::Relu,
        LayerSpec::pool(1, 3),
        LayerSpec::conv(f2, 2, 2),
        LayerSpec::Relu,
        // a 1x1 max-pool is an identity; kept so the stack mirrors the table
        LayerSpec::pool(1, 1),
        LayerSpec::conv(f3, 2, 2),
        match arch.third_activation {
            ThirdActivation::Linear => LayerSpec::Linear,
            ThirdActivation::Selu => LayerSpec::Selu,
        },
        LayerSpec::pool(arch.third_pool[0], arch.third_pool[1]),
        LayerSpec::Flatten,
        LayerSpec::dense(arch.dense_units),
        LayerSpec::Relu,
        LayerSpec::dense(2),
        LayerSpec::Softmax,
    ]
}

/// 128 ms non-overlapping frames; 54 frames cover the 7 s upper end of the
/// longest bucket.
pub fn detector_desk_mfcc() -> MfccConfig {
    MfccConfig {
        frame_length: 2048,
        hop: 2048,
        fft_size: 2048,
        n_mels: 64,
        n_coeffs: 40,
        t_max: 54,
        ..MfccConfig::default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectorMeta {
    kind: String,
    class_names: Vec<String>,
    mfcc: MfccConfig,
    norm: Standardizer,
    arch: DetectorArch,
}

#[derive(Debug, Clone)]
pub struct DetectorModel {
    pub network: Network,
    pub arch: DetectorArch,
    frontend: Frontend,
}

/// Builds an untrained detector. The standardizer starts as the identity
/// and is fitted when training.
pub fn build_detector(cfg: &MfccConfig, arch: &DetectorArch, seed: u64) -> Result<DetectorModel> {
    cfg.validate()?;
    if cfg.t_max < MIN_T_MAX {
        return Err(Error::Shape(format!(
            "detector needs t_max >= {MIN_T_MAX}, got {}",
            cfg.t_max
        )));
    }
    let frontend = Frontend::new(cfg, Standardizer::identity(cfg.n_coeffs))?;
    let network = Network::build(&frontend.input_shape(), detector_layers(arch), seed)?;
    log::debug!(
        "detector {:?} -> {:?}, {} parameters",
        network.input_shape(),
        network.output_shape(),
        network.param_count()
    );
    Ok(DetectorModel {
        network,
        arch: arch.clone(),
        frontend,
    })
}

impl DetectorModel {
    pub fn mfcc_cfg(&self) -> &MfccConfig {
        self.frontend.config()
    }

    pub fn param_count(&self) -> usize {
        self.network.param_count()
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let meta = DetectorMeta {
            kind: "detector".into(),
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            mfcc: self.mfcc_cfg().clone(),
            norm: self.frontend.standardizer().clone(),
            arch: self.arch.clone(),
        };
        checkpoint::encode(&self.network, &serde_json::to_value(meta)?)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (network, meta) = checkpoint::decode(bytes)?;
        let meta: DetectorMeta = serde_json::from_value(meta)?;
        if meta.kind != "detector" {
            return Err(Error::Format(format!("expected a detector checkpoint, got {:?}", meta.kind)));
        }
        let expected = Network::shape_chain(network.input_shape(), &detector_layers(&meta.arch))?;
        if network.layers() != detector_layers(&meta.arch).as_slice() || network.layer_shapes() != expected {
            return Err(Error::Format("checkpoint layers do not match its detector architecture".into()));
        }
        Ok(Self {
            network,
            arch: meta.arch,
            frontend: Frontend::new(&meta.mfcc, meta.norm)?,
        })
    }

    /// Network input for an extracted (unpadded) feature map.
    pub fn input(&self, fm: &FeatureMap) -> Result<Tensor> {
        self.frontend.tensor_from_map(fm)
    }
}

fn label_index(label: ExampleLabel) -> usize {
    match label {
        ExampleLabel::Normal => 0,
        ExampleLabel::Adversarial => 1,
    }
}

/// Raw MFCC maps of every entry, in manifest order. Clips longer than the
/// frame limit are rejected with an overflow error naming the entry.
pub fn extract_features(
    m: &DatasetManifest,
    root: &Path,
    cfg: &MfccConfig,
    jobs: usize,
) -> Result<Vec<FeatureMap>> {
    let extractor = MfccExtractor::new(cfg)?;
    par::map_ordered(&m.entries, jobs, |e| -> Result<FeatureMap> {
        let w = read_wav_at(root.join(&e.wav_path), cfg.sample_rate)?;
        let fm = extractor.extract(&w)?;
        if fm.frames > cfg.t_max {
            return Err(Error::Domain(format!(
                "{}: {} frames exceed the detector limit of {}",
                e.id, fm.frames, cfg.t_max
            )));
        }
        Ok(fm)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl DetectorTrainConfig {
    pub fn full() -> Self {
        Self {
            epochs: 100,
            ..Self::desk()
        }
    }

    pub fn desk() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
        }
    }
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainReport {
    pub examples: usize,
    pub train_accuracy: f64,
    pub curve: Vec<EpochStats>,
}

/// Trains on pre-extracted maps. Deterministic in `seed` and the data order;
/// the returned model equals its checkpoint.
pub fn train_on_features(
    model: DetectorModel,
    data: &[(&FeatureMap, ExampleLabel)],
    cfg: &DetectorTrainConfig,
    seed: u64,
) -> Result<(DetectorModel, DetectorTrainReport)> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty detector training set".into()));
    }
    let maps: Vec<&FeatureMap> = data.iter().map(|(m, _)| *m).collect();
    let frontend = Frontend::new(model.mfcc_cfg(), Standardizer::fit(&maps)?)?;
    let tensors = data
        .iter()
        .map(|(m, l)| Ok((frontend.tensor_from_map(m)?, label_index(*l))))
        .collect::<Result<Vec<_>>>()?;
    let mut network = model.network;
    let curve = train_classifier(
        &mut network,
        &tensors,
        &TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            adam: AdamConfig::with_lr(cfg.lr),
            seed: derive(seed, &["shuffle"]),
        },
    )?;
    let trained = DetectorModel {
        network,
        arch: model.arch,
        frontend,
    };
    let report = DetectorTrainReport {
        examples: tensors.len(),
        train_accuracy: accuracy(&trained.network, &tensors)?,
        curve,
    };
    Ok((trained, report))
}

/// Refuses manifests that break the protocol invariants, then trains on
/// every entry of `train` (callers pass the train side of a split).
pub fn train_detector(
    model: DetectorModel,
    train: &DatasetManifest,
    root: &Path,
    cfg: &DetectorTrainConfig,
    seed: u64,
    jobs: usize,
) -> Result<(DetectorModel, DetectorTrainReport)> {
    let report = validate_manifest(
        train,
        &ValidateOptions {
            speech_filter: true,
            root: Some(root.to_path_buf()),
        },
    );
    if !report.ok() {
        return Err(Error::Manifest(format!(
            "refusing to train on an invalid manifest: {}",
            report.violations.join("; ")
        )));
    }
    let maps = extract_features(train, root, model.mfcc_cfg(), jobs)?;
    let data: Vec<(&FeatureMap, ExampleLabel)> =
        maps.iter().zip(&train.entries).map(|(m, e)| (m, e.label)).collect();
    train_on_features(model, &data, cfg, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: ExampleLabel,
    /// `[normal, adversarial]`.
    pub probabilities: [f64; 2],
}

impl Verdict {
    pub fn p_adversarial(&self) -> f64 {
        self.probabilities[1]
    }
}

pub fn classify_features(m: &DetectorModel, fm: &FeatureMap) -> Result<Verdict> {
    let p = m.network.predict(&m.input(fm)?)?.into_values();
    let label = if p[1] > p[0] {
        ExampleLabel::Adversarial
    } else {
        ExampleLabel::Normal
    };
    Ok(Verdict {
        label,
        probabilities: [p[0], p[1]],
    })
}

/// Argmax decision. Clips longer than the frame limit give an overflow error.
pub fn classify(m: &DetectorModel, w: &Waveform) -> Result<Verdict> {
    let cfg = m.mfcc_cfg();
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::Domain(format!(
            "detector expects {} Hz audio, got {} Hz",
            cfg.sample_rate, w.sample_rate
        )));
    }
    let fm = MfccExtractor::new(cfg)?.extract(w)?;
    classify_features(m, &fm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(t_max: usize) -> MfccConfig {
        MfccConfig {
            t_max,
            ..detector_desk_mfcc()
        }
    }

    #[test]
    fn full_shapes() {
        let m = build_detector(&MfccConfig::default(), &DetectorArch::full(), 1).unwrap();
        let shapes = m.network.layer_shapes();
        assert_eq!(shapes[0], vec![698, 40, 1]);
        assert_eq!(shapes[1], vec![697, 39, 64]);
        // 1x3 pool, conv, identity pool
        assert_eq!(shapes[3], vec![697, 13, 64]);
        assert_eq!(shapes[6], vec![696, 12, 64]);
        assert_eq!(shapes[7], vec![695, 11, 32]);
        assert_eq!(shapes[9], vec![347, 5, 32]);
        assert_eq!(m.network.output_shape(), [2]);
    }

    #[test]
    fn small_t_max_rejected() {
        assert!(matches!(
            build_detector(&cfg(7), &DetectorArch::desk(), 1),
            Err(Error::Shape(_))
        ));
        assert!(build_detector(&cfg(8), &DetectorArch::desk(), 1).is_ok());
    }

    #[test]
    fn param_count_depends_only_on_t_max() {
        let a = build_detector(&cfg(20), &DetectorArch::desk(), 1).unwrap();
        let b = build_detector(&cfg(20), &DetectorArch::desk(), 2).unwrap();
        let c = build_detector(&cfg(30), &DetectorArch::desk(), 1).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        assert!(c.param_count() > a.param_count());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_detector(&cfg(16), &DetectorArch::desk(), 9).unwrap();
        let b = build_detector(&cfg(16), &DetectorArch::desk(), 9).unwrap();
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn probabilities_sum_to_one_and_overflow_is_reported() {
        let m = build_detector(&cfg(16), &DetectorArch::desk(), 3).unwrap();
        let w = Waveform::new((0..16000).map(|i| (i as f64 * 0.01).sin() * 0.3).collect(), 16000);
        let v = classify(&m, &w).unwrap();
        assert!((v.probabilities[0] + v.probabilities[1] - 1.0).abs() < 1e-9);
        let long = Waveform::new(vec![0.1; 16 * 2048 + 2048], 16000);
        assert!(matches!(classify(&m, &long), Err(Error::Overflow { .. })));
    }

    #[test]
    fn selu_variant_and_checkpoint_round_trip() {
        let arch = DetectorArch {
            third_activation: ThirdActivation::Selu,
            ..DetectorArch::desk()
        };
        let m = build_detector(&cfg(16), &arch, 4).unwrap();
        assert!(m.network.layers().contains(&LayerSpec::Selu));
        let back = DetectorModel::from_checkpoint(&m.to_checkpoint().unwrap()).unwrap();
        assert_eq!(back.arch, arch);
        assert_eq!(back.to_checkpoint().unwrap(), m.to_checkpoint().unwrap());
    }
}

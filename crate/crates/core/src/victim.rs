//! Victim recognizers: a keyword classifier over padded MFCC maps and a
//! per-frame CTC character recognizer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav_at, Waveform};
use crate::ctc::{ctc_loss, greedy_decode, min_frames, CtcInput};
use crate::dataset::corpus::{CorpusEntry, CorpusManifest};
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::features::{FeatureMap, MfccConfig};
use crate::frontend::{Frontend, Standardizer};
use crate::nn::{
    accuracy, adam_step, checkpoint, log_softmax, train_classifier, AdamConfig, AdamState,
    LayerSpec, Network, Tensor, TrainConfig,
};
use crate::seeds;

fn check_rate(w: &Waveform, cfg: &MfccConfig) -> Result<()> {
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::Domain(format!(
            "waveform rate {} Hz, model expects {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    #[serde(default)]
    class_names: Vec<String>,
    #[serde(default)]
    vocab: Vec<char>,
    mfcc: MfccConfig,
    norm: Standardizer,
}

/// Small conv stack over `t_max x n_coeffs` maps ending in a softmax over
/// keyword classes.
#[derive(Debug, Clone)]
pub struct KeywordModel {
    pub network: Network,
    pub class_names: Vec<String>,
    frontend: Frontend,
}

pub fn keyword_layers(classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(8, 3, 3),
        LayerSpec::Relu,
        LayerSpec::pool(2, 2),
        LayerSpec::conv(16, 3, 3),
        LayerSpec::Relu,
        LayerSpec::pool(2, 2),
        LayerSpec::Flatten,
        LayerSpec::dense(classes),
        LayerSpec::Softmax,
    ]
}

impl KeywordModel {
    pub fn new(network: Network, class_names: Vec<String>, frontend: Frontend) -> Result<Self> {
        if network.output_shape() != [class_names.len()] {
            return Err(Error::Shape(format!(
                "network output {:?} for {} classes",
                network.output_shape(),
                class_names.len()
            )));
        }
        if network.input_shape() != frontend.input_shape().as_slice() {
            return Err(Error::Shape("network input does not match the feature map".into()));
        }
        Ok(Self {
            network,
            class_names,
            frontend,
        })
    }

    pub fn mfcc_cfg(&self) -> &MfccConfig {
        self.frontend.config()
    }

    pub fn frontend(&self) -> &Frontend {
        &self.frontend
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let meta = ModelMeta {
            kind: "keyword".into(),
            class_names: self.class_names.clone(),
            vocab: Vec::new(),
            mfcc: self.mfcc_cfg().clone(),
            norm: self.frontend.standardizer().clone(),
        };
        checkpoint::encode(&self.network, &serde_json::to_value(meta)?)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (network, meta) = checkpoint::decode(bytes)?;
        let meta: ModelMeta = serde_json::from_value(meta)?;
        if meta.kind != "keyword" {
            return Err(Error::Format(format!("expected a keyword checkpoint, got {:?}", meta.kind)));
        }
        Self::new(network, meta.class_names, Frontend::new(&meta.mfcc, meta.norm)?)
    }

    pub fn probabilities(&self, samples: &[f64]) -> Result<Vec<f64>> {
        let x = self.frontend.tensor(samples)?;
        Ok(self.network.predict(&x)?.into_values())
    }

    /// Cross-entropy toward `target`, its gradient with respect to the
    /// samples, and the class probabilities at `samples`.
    pub fn loss_grad(&self, samples: &[f64], target: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let (x, cache, frames) = self.frontend.tensor_with_cache(samples)?;
        let fwd = self.network.forward(&x)?;
        let probs = fwd.output().to_vec();
        if target >= probs.len() {
            return Err(Error::Domain(format!("target {target} out of range for {} classes", probs.len())));
        }
        // from the logits: probability-space cross-entropy saturates once the
        // target probability underflows its floor, leaving no descent signal
        let lsm = crate::nn::log_softmax(self.network.logits(&fwd)?);
        let loss = -lsm[target];
        let mut g_logits = probs.clone();
        g_logits[target] -= 1.0;
        let g_in = self.network.input_grad_from_logits(&fwd, &g_logits)?;
        let grad = self.frontend.backward(&cache, frames, &g_in)?;
        Ok((loss, grad, probs))
    }
}

/// Argmax class and the full distribution. Inputs longer than the model's
/// frame limit are rejected with an overflow error.
pub fn predict_keyword(m: &KeywordModel, w: &Waveform) -> Result<(usize, Vec<f64>)> {
    check_rate(w, m.mfcc_cfg())?;
    let p = m.probabilities(&w.samples)?;
    Ok((crate::nn::argmax(&p), p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordTrainConfig {
    pub mfcc: MfccConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for KeywordTrainConfig {
    fn default() -> Self {
        Self {
            mfcc: victim_keyword_mfcc(),
            epochs: 30,
            batch_size: 16,
            lr: 2e-3,
        }
    }
}

/// 32 ms frames, 16 ms hop; exactly 61 frames for a one second clip.
pub fn victim_keyword_mfcc() -> MfccConfig {
    MfccConfig {
        frame_length: 512,
        hop: 256,
        fft_size: 512,
        n_mels: 40,
        n_coeffs: 40,
        t_max: 61,
        ..MfccConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordReport {
    pub classes: Vec<String>,
    pub train_clips: usize,
    pub heldout_clips: usize,
    pub train_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
    pub final_loss: f64,
}

fn load(root: &Path, e: &CorpusEntry, rate: u32) -> Result<Waveform> {
    read_wav_at(root.join(&e.wav_path), rate)
}

/// Trains on the corpus's keyword clips marked `train`; held-out accuracy is
/// measured on those marked `test`.
pub fn train_keyword_model(
    corpus: &CorpusManifest,
    root: &Path,
    cfg: &KeywordTrainConfig,
    seed: u64,
) -> Result<(KeywordModel, KeywordReport)> {
    let mut class_names: Vec<String> = Vec::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in corpus.keywords(Split::Train) {
        if !class_names.contains(&e.label) {
            class_names.push(e.label.clone());
        }
        *counts.entry(&e.label).or_default() += 1;
    }
    if class_names.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "keyword training needs at least 2 classes, found {}",
            class_names.len()
        )));
    }
    if let Some((c, n)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::InsufficientData(format!("class {c:?} has only {n} clip(s)")));
    }

    let extract = |split: Split| -> Result<Vec<(FeatureMap, usize)>> {
        let plain = Frontend::new(&cfg.mfcc, Standardizer::identity(cfg.mfcc.n_coeffs))?;
        corpus
            .keywords(split)
            .filter_map(|e| class_names.iter().position(|c| *c == e.label).map(|i| (e, i)))
            .map(|(e, i)| {
                let w = load(root, e, cfg.mfcc.sample_rate)?;
                Ok((plain.extract_unpadded(&w.samples)?, i))
            })
            .collect()
    };
    let train_maps = extract(Split::Train)?;
    let test_maps = extract(Split::Test)?;
    let norm = Standardizer::fit(&train_maps.iter().map(|(m, _)| m).collect::<Vec<_>>())?;
    let frontend = Frontend::new(&cfg.mfcc, norm)?;
    let to_data = |maps: &[(FeatureMap, usize)]| -> Result<Vec<(Tensor, usize)>> {
        maps.iter()
            .map(|(m, i)| Ok((frontend.tensor_from_map(m)?, *i)))
            .collect()
    };
    let train = to_data(&train_maps)?;
    let test = to_data(&test_maps)?;

    let mut net = Network::build(
        &frontend.input_shape(),
        keyword_layers(class_names.len()),
        seeds::derive(seed, &["keyword", "init"]),
    )?;
    let curve = train_classifier(
        &mut net,
        &train,
        &TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            adam: AdamConfig::with_lr(cfg.lr),
            seed: seeds::derive(seed, &["keyword", "shuffle"]),
        },
    )?;
    let model = KeywordModel::new(net, class_names.clone(), frontend)?;
    // what callers get is exactly what the checkpoint reproduces
    let model = KeywordModel::from_checkpoint(&model.to_checkpoint()?)?;
    let report = KeywordReport {
        classes: class_names,
        train_clips: train.len(),
        heldout_clips: test.len(),
        train_accuracy: accuracy(&model.network, &train)?,
        heldout_accuracy: if test.is_empty() {
            None
        } else {
            Some(accuracy(&model.network, &test)?)
        },
        final_loss: curve.last().map_or(f64::NAN, |s| s.mean_loss),
    };
    log::info!(
        "keyword victim: train acc {:.3}, held-out acc {:?}",
        report.train_accuracy,
        report.heldout_accuracy
    );
    Ok((model, report))
}

/// Lowercase letters and space; blank is the index after the last symbol.
pub fn default_vocab() -> Vec<char> {
    ('a'..='z').chain(std::iter::once(' ')).collect()
}

/// Per-frame character recognizer. Both convolutions are frame-local, so
/// the weights apply to any number of frames; the stored network uses the
/// frame limit as its nominal input length.
#[derive(Debug, Clone)]
pub struct SequenceModel {
    network: Network,
    pub vocab: Vec<char>,
    frontend: Frontend,
}

/// Output for one input: per-frame log-distributions over vocab + blank.
#[derive(Debug, Clone)]
pub struct FrameLogProbs {
    pub values: Vec<f64>,
    pub frames: usize,
    pub width: usize,
}

impl FrameLogProbs {
    pub fn best_path(&self) -> Vec<usize> {
        self.values
            .chunks(self.width)
            .map(crate::nn::argmax)
            .collect()
    }
}

pub fn sequence_layers(n_coeffs: usize, hidden: usize, vocab: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(hidden, 3, n_coeffs),
        LayerSpec::Relu,
        LayerSpec::conv(vocab + 1, 1, 1),
        LayerSpec::Softmax,
    ]
}

/// 16 ms frames, 8 ms hop; `t_max` covers 7.2 s.
pub fn victim_sequence_mfcc() -> MfccConfig {
    MfccConfig {
        frame_length: 256,
        hop: 128,
        fft_size: 256,
        n_mels: 24,
        n_coeffs: 16,
        t_max: 899,
        ..MfccConfig::default()
    }
}

/// Frames dropped by the 3-frame valid convolution.
const SEQUENCE_CONTEXT: usize = 2;

impl SequenceModel {
    pub fn new(network: Network, vocab: Vec<char>, frontend: Frontend) -> Result<Self> {
        let out = network.output_shape();
        if out.len() != 3 || out[2] != vocab.len() + 1 || !matches!(network.layers().last(), Some(LayerSpec::Softmax)) {
            return Err(Error::Shape(format!(
                "sequence network output {out:?} does not end in a softmax over {} symbols",
                vocab.len() + 1
            )));
        }
        Ok(Self {
            network,
            vocab,
            frontend,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn mfcc_cfg(&self) -> &MfccConfig {
        self.frontend.config()
    }

    pub fn blank(&self) -> usize {
        self.vocab.len()
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.vocab
                    .iter()
                    .position(|&v| v == c)
                    .ok_or_else(|| Error::Domain(format!("character {c:?} not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode_indices(&self, idx: &[usize]) -> String {
        idx.iter().map(|&i| self.vocab[i]).collect()
    }

    /// Output frames for an input of `n_samples`.
    pub fn output_frames(&self, n_samples: usize) -> Result<usize> {
        Ok(self.mfcc_cfg().frame_count(n_samples)?.saturating_sub(SEQUENCE_CONTEXT))
    }

    fn network_for(&self, frames: usize) -> Result<Network> {
        if frames <= SEQUENCE_CONTEXT {
            return Err(Error::TooShort {
                needed: SEQUENCE_CONTEXT + 1,
                got: frames,
            });
        }
        let c = self.mfcc_cfg().n_coeffs;
        Network::from_parts(
            &[frames, c, 1],
            self.network.layers().to_vec(),
            self.network.params().to_vec(),
            self.network.rng_seed(),
        )
    }

    pub fn log_probs(&self, samples: &[f64]) -> Result<FrameLogProbs> {
        let (x, _, frames) = self.frontend.unpadded_with_cache(samples)?;
        let net = self.network_for(frames)?;
        let fwd = net.forward(&x)?;
        let width = self.vocab.len() + 1;
        let values: Vec<f64> = net.logits(&fwd)?.chunks(width).flat_map(log_softmax).collect();
        Ok(FrameLogProbs {
            frames: values.len() / width,
            values,
            width,
        })
    }

    /// CTC loss toward `target`, its sample gradient, and the greedy
    /// transcription at `samples`.
    pub fn ctc_grad(&self, samples: &[f64], target: &[usize]) -> Result<(f64, Vec<f64>, String)> {
        let (x, cache, frames) = self.frontend.unpadded_with_cache(samples)?;
        let net = self.network_for(frames)?;
        let fwd = net.forward(&x)?;
        let width = self.vocab.len() + 1;
        let lp: Vec<f64> = net.logits(&fwd)?.chunks(width).flat_map(log_softmax).collect();
        let out_frames = lp.len() / width;
        let out = ctc_loss(&CtcInput {
            log_probs: &lp,
            frames: out_frames,
            vocab_size: self.vocab.len(),
            target,
        })?;
        let g_logits = logit_grad(&lp, &out.grad, width);
        let g_in = net.input_grad_from_logits(&fwd, &g_logits)?;
        let grad = self.frontend.backward(&cache, frames, &g_in)?;
        let path: Vec<usize> = lp.chunks(width).map(crate::nn::argmax).collect();
        let text = self.decode_indices(&greedy_decode(&path, self.blank()));
        Ok((out.loss, grad, text))
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let meta = ModelMeta {
            kind: "sequence".into(),
            class_names: Vec::new(),
            vocab: self.vocab.clone(),
            mfcc: self.mfcc_cfg().clone(),
            norm: self.frontend.standardizer().clone(),
        };
        checkpoint::encode(&self.network, &serde_json::to_value(meta)?)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let (network, meta) = checkpoint::decode(bytes)?;
        let meta: ModelMeta = serde_json::from_value(meta)?;
        if meta.kind != "sequence" {
            return Err(Error::Format(format!("expected a sequence checkpoint, got {:?}", meta.kind)));
        }
        Self::new(network, meta.vocab, Frontend::new(&meta.mfcc, meta.norm)?)
    }
}

/// Chains a gradient on log-softmax outputs back to the logits, row by row:
/// `dz = g - softmax(z) * sum(g)`.
fn logit_grad(log_probs: &[f64], g: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.len());
    for (lp, gr) in log_probs.chunks(width).zip(g.chunks(width)) {
        let sum: f64 = gr.iter().sum();
        out.extend(lp.iter().zip(gr).map(|(l, gv)| gv - l.exp() * sum));
    }
    out
}

/// Best-path transcription: per-frame argmax, collapse repeats, drop blanks.
pub fn transcribe(m: &SequenceModel, w: &Waveform) -> Result<String> {
    check_rate(w, m.mfcc_cfg())?;
    let lp = m.log_probs(&w.samples)?;
    Ok(m.decode_indices(&greedy_decode(&lp.best_path(), m.blank())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTrainConfig {
    pub mfcc: MfccConfig,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for SequenceTrainConfig {
    fn default() -> Self {
        Self {
            mfcc: victim_sequence_mfcc(),
            hidden: 32,
            epochs: 30,
            batch_size: 8,
            lr: 3e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub utterances: usize,
    pub skipped_infeasible: usize,
    pub final_loss: f64,
    /// Fraction of training utterances transcribed exactly.
    pub train_exact_rate: f64,
}

/// CTC training on the corpus utterances marked `train`.
pub fn train_sequence_model(
    corpus: &CorpusManifest,
    root: &Path,
    cfg: &SequenceTrainConfig,
    seed: u64,
) -> Result<(SequenceModel, SequenceReport)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let vocab = default_vocab();
    let plain = Frontend::new(&cfg.mfcc, Standardizer::identity(cfg.mfcc.n_coeffs))?;
    let mut maps = Vec::new();
    let mut texts = Vec::new();
    let mut waves = Vec::new();
    for e in corpus.utterances(Split::Train) {
        let w = load(root, e, cfg.mfcc.sample_rate)?;
        maps.push(plain.extract_unpadded(&w.samples)?);
        texts.push(e.label.clone());
        waves.push(w);
    }
    if maps.is_empty() {
        return Err(Error::InsufficientData("no training utterances".into()));
    }
    let norm = Standardizer::fit(&maps.iter().collect::<Vec<_>>())?;
    let frontend = Frontend::new(&cfg.mfcc, norm)?;
    let canonical = Network::build(
        &[cfg.mfcc.t_max, cfg.mfcc.n_coeffs, 1],
        sequence_layers(cfg.mfcc.n_coeffs, cfg.hidden, vocab.len()),
        seeds::derive(seed, &["sequence", "init"]),
    )?;
    let mut model = SequenceModel::new(canonical, vocab.clone(), frontend)?;

    let mut data = Vec::new();
    let mut skipped = 0;
    for (w, text) in waves.iter().zip(&texts) {
        let target = model.encode_text(text)?;
        let (x, _, frames) = model.frontend.unpadded_with_cache(&w.samples)?;
        if frames < SEQUENCE_CONTEXT + 1 || min_frames(&target) > frames - SEQUENCE_CONTEXT {
            skipped += 1;
            continue;
        }
        data.push((x, target));
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("every training utterance is CTC-infeasible".into()));
    }

    let width = vocab.len() + 1;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut state = AdamState::new(&model.network);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seeds::derive(seed, &["sequence", "shuffle"]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut acc = model.network.zero_grads();
            for &i in batch {
                let (x, target) = &data[i];
                let net = model.network_for(x.shape()[0])?;
                let fwd = net.forward(x)?;
                let lp: Vec<f64> = net.logits(&fwd)?.chunks(width).flat_map(log_softmax).collect();
                let out = ctc_loss(&CtcInput {
                    log_probs: &lp,
                    frames: lp.len() / width,
                    vocab_size: vocab.len(),
                    target,
                })?;
                if !out.loss.is_finite() {
                    return Err(Error::Divergence(format!("non-finite CTC loss at epoch {epoch}")));
                }
                total += out.loss;
                net.backward_logits_into(&fwd, &logit_grad(&lp, &out.grad, width), Some(&mut acc))?;
            }
            let scale = 1.0 / batch.len() as f64;
            for t in acc.iter_mut().flatten() {
                t.values_mut().iter_mut().for_each(|v| *v *= scale);
            }
            adam_step(&mut model.network, &acc, &adam, &mut state)?;
        }
        last_loss = total / data.len() as f64;
        log::debug!("sequence epoch {}: ctc {:.3}", epoch + 1, last_loss);
    }
    model.network.snap_to_f32();
    let model = SequenceModel::from_checkpoint(&model.to_checkpoint()?)?;

    let mut exact = 0;
    for (w, text) in waves.iter().zip(&texts) {
        if transcribe(&model, w)? == *text {
            exact += 1;
        }
    }
    let report = SequenceReport {
        utterances: data.len(),
        skipped_infeasible: skipped,
        final_loss: last_loss,
        train_exact_rate: exact as f64 / waves.len() as f64,
    };
    log::info!(
        "sequence victim: ctc {:.3}, exact transcriptions {:.3}",
        report.final_loss,
        report.train_exact_rate
    );
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn greedy_decode_matches_direct_rule() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let blank = 3;
        for _ in 0..50 {
            let path: Vec<usize> = (0..rng.gen_range(1..12)).map(|_| rng.gen_range(0..=blank)).collect();
            // direct rule: drop consecutive duplicates, then blanks
            let mut dedup = path.clone();
            dedup.dedup();
            let expected: Vec<usize> = dedup.into_iter().filter(|&k| k != blank).collect();
            assert_eq!(greedy_decode(&path, blank), expected, "{path:?}");
        }
    }

    fn tiny_sequence_model() -> SequenceModel {
        let cfg = victim_sequence_mfcc();
        let vocab = default_vocab();
        let net = Network::build(
            &[cfg.t_max, cfg.n_coeffs, 1],
            sequence_layers(cfg.n_coeffs, 4, vocab.len()),
            1,
        )
        .unwrap();
        SequenceModel::new(net, vocab, Frontend::new(&cfg, Standardizer::identity(cfg.n_coeffs)).unwrap()).unwrap()
    }

    #[test]
    fn sequence_model_runs_on_any_length() {
        let m = tiny_sequence_model();
        for n in [2000usize, 16000, 40000] {
            let x: Vec<f64> = (0..n).map(|i| 0.1 * (i as f64 * 0.05).sin()).collect();
            let lp = m.log_probs(&x).unwrap();
            assert_eq!(lp.frames, m.output_frames(n).unwrap());
            for row in lp.values.chunks(lp.width) {
                let s: f64 = row.iter().map(|v| v.exp()).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let too_long = vec![0.0; 16000 * 8];
        assert!(matches!(m.log_probs(&too_long), Err(Error::Overflow { .. })));
    }

    #[test]
    fn sequence_checkpoint_round_trip() {
        let mut m = tiny_sequence_model();
        m.network.snap_to_f32();
        let back = SequenceModel::from_checkpoint(&m.to_checkpoint().unwrap()).unwrap();
        assert_eq!(back.network, m.network);
        assert_eq!(back.vocab, m.vocab);
    }

    #[test]
    fn ctc_sample_gradient_matches_finite_differences() {
        let m = tiny_sequence_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..1200).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let target = m.encode_text("ab").unwrap();
        let (_, grad, _) = m.ctc_grad(&x, &target).unwrap();
        let loss = |x: &[f64]| m.ctc_grad(x, &target).unwrap().0;
        for &i in &[100usize, 333, 600, 901] {
            let mut p = x.clone();
            p[i] += 1e-6;
            let mut q = x.clone();
            q[i] -= 1e-6;
            let fd = (loss(&p) - loss(&q)) / 2e-6;
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            assert!(rel < 1e-4, "sample {i}: fd {fd} analytic {}", grad[i]);
        }
    }
}

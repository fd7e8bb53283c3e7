//! Synthetic speech-like corpus.
//!
//! Each letter is rendered as a stationary "phone": a harmonic stack on the
//! speaker's pitch, shaped by three Gaussian formant peaks, optionally mixed
//! with white noise. Pitch and vocal-tract scale vary per clip, so letters
//! are told apart by their formant envelope, as vowels are. Words are sequences of phones, keyword clips hold one
//! word, utterances hold several words separated by pauses. The silence
//! budget is a fixed fraction of every clip so the energy VAD sees both a
//! quiet reference and a clear majority of speech.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Split, write_jsonl, read_jsonl};
use crate::audio::{quantize_pcm16, write_wav, Waveform};
use crate::error::{Error, Result};
use crate::features::MfccConfig;
use crate::seeds;
use crate::vad::{speech_ratio, VadParams};

pub const CORPUS_MANIFEST: &str = "corpus.jsonl";
pub const CORPUS_SPEC: &str = "corpus_spec.json";

/// Spectral recipe of one letter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneRecipe {
    /// Intonation relative to the speaker's pitch.
    pub pitch_factor: f64,
    pub formants: [f64; 3],
    pub bandwidth: f64,
    /// Fraction of the phone's RMS contributed by white noise.
    pub noise: f64,
}

/// One recipe per lowercase letter. Formant indices `(i mod 7, 3i mod 8,
/// i mod 5)` are pairwise distinct over the alphabet.
pub fn default_phones() -> BTreeMap<char, PhoneRecipe> {
    ('a'..='z')
        .enumerate()
        .map(|(i, c)| {
            let recipe = PhoneRecipe {
                pitch_factor: 1.0 + 0.01 * ((i % 11) as f64 - 5.0),
                formants: [
                    250.0 + 110.0 * (i % 7) as f64,
                    900.0 + 230.0 * ((3 * i) % 8) as f64,
                    2300.0 + 250.0 * (i % 5) as f64,
                ],
                bandwidth: 90.0,
                noise: if "cfhsxz".contains(c) { 0.5 } else { 0.0 },
            };
            (c, recipe)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub sample_rate: u32,
    pub keywords: Vec<String>,
    pub clips_per_class: usize,
    /// Fraction of each class held out from victim training.
    pub keyword_test_fraction: f64,
    pub keyword_duration_s: f64,
    /// Target fraction of each clip that carries a word.
    pub voiced_fraction: f64,
    /// Attack-pool utterances per duration range.
    pub utterance_ranges: Vec<Range>,
    pub utterances_per_range: usize,
    /// Extra utterances with durations outside every bucket.
    pub stray_durations: Vec<f64>,
    /// Utterances used to train the sequence victim.
    pub train_utterances: usize,
    pub train_utterance_range: Range,
    pub letters_per_word: [usize; 2],
    pub mean_word_s: f64,
    pub min_phone_s: f64,
    pub peak_amplitude: Range,
    /// Standard deviation of the per-clip background noise.
    pub noise_floor: Range,
    /// Speaker pitch range in Hz.
    pub pitch_hz: Range,
    /// Relative per-clip jitter of the formant frequencies.
    pub jitter: f64,
    pub phones: BTreeMap<char, PhoneRecipe>,
}

pub fn speech_commands() -> Vec<String> {
    ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl CorpusSpec {
    pub fn desk() -> Self {
        Self {
            sample_rate: 16000,
            keywords: speech_commands(),
            clips_per_class: 200,
            keyword_test_fraction: 0.25,
            keyword_duration_s: 1.0,
            voiced_fraction: 0.82,
            utterance_ranges: vec![Range::new(1.0, 2.0), Range::new(3.0, 4.0), Range::new(6.0, 7.0)],
            utterances_per_range: 100,
            stray_durations: vec![2.5, 5.0],
            train_utterances: 120,
            train_utterance_range: Range::new(1.0, 2.5),
            letters_per_word: [2, 5],
            mean_word_s: 0.6,
            min_phone_s: 0.08,
            peak_amplitude: Range::new(0.1, 0.35),
            noise_floor: Range::new(0.002, 0.002),
            pitch_hz: Range::new(90.0, 220.0),
            jitter: 0.08,
            phones: default_phones(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.keywords.is_empty() {
            return fail("corpus needs at least one keyword".into());
        }
        for w in &self.keywords {
            if let Some(c) = w.chars().find(|c| !self.phones.contains_key(c)) {
                return fail(format!("keyword {w:?} uses letter {c:?} with no phone recipe"));
            }
        }
        if !(0.0..1.0).contains(&self.keyword_test_fraction) {
            return fail("keyword_test_fraction must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.voiced_fraction) || self.voiced_fraction <= 0.0 {
            return fail("voiced_fraction must be in (0, 1)".into());
        }
        if self.letters_per_word[0] == 0 || self.letters_per_word[0] > self.letters_per_word[1] {
            return fail("letters_per_word must be a non-empty range starting at 1 or more".into());
        }
        if self.sample_rate == 0 || self.keyword_duration_s <= 0.0 {
            return fail("sample rate and keyword duration must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    Keyword,
    Utterance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub wav_path: String,
    pub kind: ClipKind,
    /// Keyword class name or utterance transcript.
    pub label: String,
    pub split: Split,
    pub duration_s: f64,
    pub speech_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
}

impl CorpusManifest {
    pub fn keywords(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries
            .iter()
            .filter(move |e| e.kind == ClipKind::Keyword && e.split == split)
    }

    pub fn utterances(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries
            .iter()
            .filter(move |e| e.kind == ClipKind::Utterance && e.split == split)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(Self {
            entries: read_jsonl(path)?,
        })
    }
}

/// Per-clip speaker variation applied to every phone recipe.
struct Voice {
    pitch_hz: f64,
    formant: f64,
}

fn render_phone(recipe: &PhoneRecipe, voice: &Voice, len: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f0 = recipe.pitch_factor * voice.pitch_hz;
    let nyquist = sr / 2.0;
    let top = (4000f64).min(nyquist * 0.9);
    let mut out = vec![0.0; len];
    let mut k = 1;
    while k as f64 * f0 < top {
        let f = k as f64 * f0;
        let amp: f64 = recipe
            .formants
            .iter()
            .zip([1.0, 0.6, 0.35])
            .map(|(&fm, g)| {
                let d = (f - fm * voice.formant) / recipe.bandwidth;
                g * (-0.5 * d * d).exp()
            })
            .sum::<f64>()
            + 0.01;
        // phasor recursion instead of a sin() per sample
        let w = 2.0 * PI * f / sr;
        let (s, c) = w.sin_cos();
        let phase0 = rng.gen_range(0.0..2.0 * PI);
        let (mut re, mut im) = (phase0.cos(), phase0.sin());
        for v in out.iter_mut() {
            *v += amp * im;
            let nre = re * c - im * s;
            im = re * s + im * c;
            re = nre;
        }
        k += 1;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.1 * (1.0 - recipe.noise) / rms);
    }
    if recipe.noise > 0.0 {
        let normal = Normal::new(0.0, 0.1 * recipe.noise).expect("finite std");
        out.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    out
}

fn ramp(x: &mut [f64], n: usize) {
    let n = n.min(x.len() / 2);
    let len = x.len();
    for i in 0..n {
        let g = 0.5 - 0.5 * (PI * i as f64 / n as f64).cos();
        x[i] *= g;
        x[len - 1 - i] *= g;
    }
}

fn render_word(
    spec: &CorpusSpec,
    word: &str,
    len: usize,
    voice: &Voice,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let sr = spec.sample_rate as f64;
    let letters: Vec<char> = word.chars().collect();
    let mut out = Vec::with_capacity(len);
    for (i, c) in letters.iter().enumerate() {
        let start = len * i / letters.len();
        let end = len * (i + 1) / letters.len();
        let mut seg = render_phone(&spec.phones[c], voice, end - start, sr, rng);
        ramp(&mut seg, (0.005 * sr) as usize);
        out.extend(seg);
    }
    ramp(&mut out, (0.01 * sr) as usize);
    out
}

fn random_word(spec: &CorpusSpec, max_letters: usize, rng: &mut ChaCha8Rng) -> String {
    let alphabet: Vec<char> = spec.phones.keys().copied().collect();
    let hi = spec.letters_per_word[1].min(max_letters).max(1);
    let lo = spec.letters_per_word[0].min(hi);
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| *alphabet.choose(rng).expect("non-empty alphabet")).collect()
}

/// Scales to the drawn peak, adds the noise floor and snaps to PCM16.
fn finish(spec: &CorpusSpec, mut x: Vec<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target = spec.peak_amplitude.sample(rng);
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / peak);
    }
    let std = spec.noise_floor.sample(rng);
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("finite std");
        x.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    x.into_iter().map(|v| quantize_pcm16(v.clamp(-1.0, 1.0))).collect()
}

fn voice(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> Voice {
    Voice {
        pitch_hz: spec.pitch_hz.sample(rng),
        formant: 1.0 + rng.gen_range(-spec.jitter..=spec.jitter),
    }
}

/// One keyword clip of `keyword_duration_s`, word placed at a random offset.
pub fn synth_keyword(spec: &CorpusSpec, word: &str, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = spec.sample_rate as f64;
    let len = (spec.keyword_duration_s * sr).round() as usize;
    let voiced = ((spec.voiced_fraction + rng.gen_range(-0.03..=0.03)) * len as f64) as usize;
    let lead = ((len - voiced) as f64 * rng.gen_range(0.3..=0.7)) as usize;
    let v = voice(spec, rng);
    let mut x = vec![0.0; len];
    let w = render_word(spec, word, voiced, &v, rng);
    x[lead..lead + voiced].copy_from_slice(&w);
    finish(spec, x, rng)
}

/// A multi-word utterance of exactly `duration_s` (to the sample) and its
/// transcript.
pub fn synth_utterance(spec: &CorpusSpec, duration_s: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, String) {
    let sr = spec.sample_rate as f64;
    let len = (duration_s * sr).round() as usize;
    let voiced = (spec.voiced_fraction * len as f64) as usize;
    let n_words = ((voiced as f64 / sr / spec.mean_word_s).round() as usize).max(1);
    let silence = len - voiced;
    let (edge, gap) = if n_words == 1 {
        (silence / 2, 0)
    } else {
        (silence / 4, (silence - 2 * (silence / 4)) / (n_words - 1))
    };
    // jittered word lengths summing to `voiced`
    let weights: Vec<f64> = (0..n_words).map(|_| rng.gen_range(0.85..=1.15)).collect();
    let total: f64 = weights.iter().sum();
    let mut bounds = vec![0usize];
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        bounds.push((voiced as f64 * acc / total).round() as usize);
    }
    let v = voice(spec, rng);
    let mut x = vec![0.0; len];
    let mut words = Vec::with_capacity(n_words);
    let mut pos = edge;
    for i in 0..n_words {
        let wlen = bounds[i + 1] - bounds[i];
        let max_letters = ((wlen as f64 / sr) / spec.min_phone_s).floor() as usize;
        let word = random_word(spec, max_letters, rng);
        let audio = render_word(spec, &word, wlen, &v, rng);
        x[pos..pos + wlen].copy_from_slice(&audio);
        pos += wlen + gap;
        words.push(word);
    }
    (finish(spec, x, rng), words.join(" "))
}

fn clip_rng(seed: u64, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeds::derive(seed, &["clip", id]))
}

/// Writes every clip under `out_dir/wav/` plus `corpus.jsonl` and the spec.
///
/// Each clip draws from its own substream keyed by its id, so the corpus is
/// byte-identical for a given seed regardless of generation order.
pub fn synth_corpus(spec: &CorpusSpec, seed: u64, out_dir: &Path) -> Result<CorpusManifest> {
    spec.validate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let vad_cfg = MfccConfig {
        sample_rate: spec.sample_rate,
        ..MfccConfig::default()
    };
    let vad = VadParams::default();
    let sr = spec.sample_rate;

    let mut entries = Vec::new();
    let mut emit = |id: String, kind, label: String, split, samples: Vec<f64>| -> Result<()> {
        let rel = format!("wav/{id}.wav");
        let w = Waveform::new(samples, sr);
        write_wav(&w, out_dir.join(&rel))?;
        let ratio = speech_ratio(&w, &vad_cfg, &vad)?.speech_ratio;
        entries.push(CorpusEntry {
            id,
            wav_path: rel,
            kind,
            label,
            split,
            duration_s: w.duration_seconds(),
            speech_ratio: ratio,
        });
        Ok(())
    };

    let n_test = (spec.clips_per_class as f64 * spec.keyword_test_fraction).round() as usize;
    for word in &spec.keywords {
        for i in 0..spec.clips_per_class {
            let id = format!("kw_{word}_{i:04}");
            let mut rng = clip_rng(seed, &id);
            let x = synth_keyword(spec, word, &mut rng);
            let split = if i < spec.clips_per_class - n_test {
                Split::Train
            } else {
                Split::Test
            };
            emit(id, ClipKind::Keyword, word.clone(), split, x)?;
        }
    }

    let mut plan: Vec<(String, Split, Option<Range>, f64)> = Vec::new();
    for i in 0..spec.train_utterances {
        plan.push((format!("utt_train_{i:04}"), Split::Train, Some(spec.train_utterance_range), 0.0));
    }
    for (r, range) in spec.utterance_ranges.iter().enumerate() {
        for i in 0..spec.utterances_per_range {
            plan.push((format!("utt_pool_{r}_{i:04}"), Split::Test, Some(*range), 0.0));
        }
    }
    for (i, &d) in spec.stray_durations.iter().enumerate() {
        plan.push((format!("utt_stray_{i:04}"), Split::Test, None, d));
    }
    for (id, split, range, fixed) in plan {
        let mut rng = clip_rng(seed, &id);
        let duration = match range {
            // whole samples so the stored duration lands inside the range
            Some(r) => (r.sample(&mut rng) * sr as f64).floor() / sr as f64,
            None => fixed,
        };
        let (x, text) = synth_utterance(spec, duration, &mut rng);
        emit(id, ClipKind::Utterance, text, split, x)?;
    }

    let manifest = CorpusManifest { entries };
    manifest.write(&out_dir.join(CORPUS_MANIFEST))?;
    let spec_json = serde_json::to_vec_pretty(spec)?;
    let spec_path = out_dir.join(CORPUS_SPEC);
    fs::write(&spec_path, spec_json).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusSpec {
        CorpusSpec {
            keywords: vec!["yes".into(), "no".into()],
            clips_per_class: 4,
            utterances_per_range: 2,
            train_utterances: 2,
            ..CorpusSpec::desk()
        }
    }

    #[test]
    fn phone_recipes_are_distinct() {
        let phones = default_phones();
        let recipes: Vec<_> = phones.values().collect();
        for i in 0..recipes.len() {
            for j in i + 1..recipes.len() {
                assert!(recipes[i].formants != recipes[j].formants);
            }
        }
    }

    #[test]
    fn utterance_has_exact_length_and_words() {
        let spec = CorpusSpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, text) = synth_utterance(&spec, 3.5, &mut rng);
        assert_eq!(x.len(), 56000);
        assert!(text.split(' ').count() >= 3);
        assert!(text.chars().all(|c| c == ' ' || c.is_ascii_lowercase()));
        assert!(x.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn corpus_is_deterministic_and_complete() {
        let spec = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth_corpus(&spec, 5, a.path()).unwrap();
        let mb = synth_corpus(&spec, 5, b.path()).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.entries.len(), 2 * 4 + 2 + 3 * 2 + 2);
        for e in &ma.entries {
            let x = fs::read(a.path().join(&e.wav_path)).unwrap();
            let y = fs::read(b.path().join(&e.wav_path)).unwrap();
            assert_eq!(x, y, "{}", e.id);
        }
        assert_eq!(ma.keywords(Split::Test).count(), 2);
        assert_eq!(
            fs::read(a.path().join(CORPUS_MANIFEST)).unwrap(),
            fs::read(b.path().join(CORPUS_MANIFEST)).unwrap()
        );
    }
}

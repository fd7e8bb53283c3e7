//! Waveforms, RIFF/WAVE I/O and peak-decibel arithmetic.
//!
//! The reader accepts PCM16 and IEEE float32 data, mono or stereo (stereo is
//! averaged down to mono). The writer only emits mono PCM16.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Amplitude floor used by [`db_peak`]; corresponds to -180 dB.
pub const AMPLITUDE_FLOOR: f64 = 1e-9;

/// Sample rate of every corpus and clip.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// One PCM16 quantization step in normalized amplitude units.
pub const PCM16_STEP: f64 = 1.0 / 32768.0;

/// Mono audio with its sample rate and optional transcript or keyword.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Option<String>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Snaps every sample onto the PCM16 grid used by [`write_wav`].
    pub fn quantized(&self) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|&x| quantize_pcm16(x)).collect(),
            sample_rate: self.sample_rate,
            label: self.label.clone(),
        }
    }
}

/// Additive perturbation for a host waveform of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub deltas: Vec<f64>,
}

impl Perturbation {
    pub fn new(deltas: Vec<f64>) -> Self {
        Self { deltas }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            deltas: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.deltas.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Integer sample to the normalized value the reader produces.
pub fn pcm16_to_f64(s: i16) -> f64 {
    s as f64 / 32768.0
}

/// Normalized value to the integer sample the writer emits.
pub fn f64_to_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Rounds to the nearest value representable in a PCM16 file.
pub fn quantize_pcm16(x: f64) -> f64 {
    pcm16_to_f64(f64_to_pcm16(x))
}

/// Rounds toward zero onto the PCM16 grid, so `|result| <= |x|`.
pub fn truncate_pcm16(x: f64) -> f64 {
    (x * 32768.0).trunc().clamp(-32768.0, 32767.0) / 32768.0
}

/// Peak level in dB: `max_i 20 log10(|x_i|)` with `|x_i|` floored at 1e-9.
pub fn db_peak(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Domain("db_peak of an empty sequence".into()));
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(20.0 * peak.max(AMPLITUDE_FLOOR).log10())
}

/// Loudness of the perturbation relative to the host: `db_peak(delta) - db_peak(host)`.
pub fn db_relative(host: &Waveform, delta: &Perturbation) -> Result<f64> {
    check_lengths(host, delta)?;
    Ok(db_peak(&delta.deltas)? - db_peak(&host.samples)?)
}

/// Amplitude bound implied by a relative dB threshold for this host.
pub fn amplitude_bound(host: &Waveform, tau_db: f64) -> Result<f64> {
    let host_db = db_peak(&host.samples)?;
    Ok(10f64.powf((host_db + tau_db) / 20.0))
}

/// Element-wise `host + delta`, clipped to [-1, 1].
pub fn apply_and_clip(host: &Waveform, delta: &Perturbation) -> Result<Waveform> {
    check_lengths(host, delta)?;
    let samples = host
        .samples
        .iter()
        .zip(&delta.deltas)
        .map(|(h, d)| (h + d).clamp(-1.0, 1.0))
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: host.sample_rate,
        label: host.label.clone(),
    })
}

fn check_lengths(host: &Waveform, delta: &Perturbation) -> Result<()> {
    if host.len() != delta.len() {
        return Err(Error::Shape(format!(
            "perturbation length {} does not match host length {}",
            delta.len(),
            host.len()
        )));
    }
    Ok(())
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a RIFF/WAVE byte buffer into a mono waveform.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 {
        return Err(Error::Format("file shorter than the RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::Format(format!(
            "expected RIFF magic, found {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("missing WAVE form type".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "chunk {:?} overruns the file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Format("fmt chunk shorter than 16 bytes".into()));
                }
                let mut format = le_u16(body, 0);
                if format == WAVE_FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(Error::Format("truncated extensible fmt chunk".into()));
                    }
                    // first two bytes of the sub-format GUID carry the format tag
                    format = le_u16(body, 24);
                }
                fmt = Some(FmtChunk {
                    format,
                    channels: le_u16(body, 2),
                    sample_rate: le_u32(body, 4),
                    bits: le_u16(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels (mono or stereo only)",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::Format("zero sample rate".into()));
    }

    let interleaved: Vec<f64> = match (fmt.format, fmt.bits) {
        (WAVE_FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| pcm16_to_f64(i16::from_le_bytes([c[0], c[1]])))
            .collect(),
        (WAVE_FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "format tag {format} with {bits} bits per sample"
            )))
        }
    };

    let channels = fmt.channels as usize;
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Ok(Waveform::new(samples, fmt.sample_rate))
}

/// Reads a WAV file, downmixing stereo to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Like [`read_wav`] but rejects files whose rate differs from `expected_rate`.
pub fn read_wav_at(path: impl AsRef<Path>, expected_rate: u32) -> Result<Waveform> {
    let w = read_wav(path.as_ref())?;
    if w.sample_rate != expected_rate {
        return Err(Error::UnsupportedEncoding(format!(
            "{}: sample rate {} Hz, expected {} Hz (no resampling)",
            path.as_ref().display(),
            w.sample_rate,
            expected_rate
        )));
    }
    Ok(w)
}

/// Encodes interleaved samples as PCM16. Only `channels == 1` is accepted.
pub fn encode_pcm16(samples: &[f64], sample_rate: u32, channels: u16) -> Result<Vec<u8>> {
    if channels != 1 {
        return Err(Error::UnsupportedEncoding(format!(
            "writer is mono-only, got {channels} channels"
        )));
    }
    if sample_rate == 0 {
        return Err(Error::Domain("sample rate must be positive".into()));
    }
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &x in samples {
        out.extend_from_slice(&f64_to_pcm16(x).to_le_bytes());
    }
    Ok(out)
}

/// Writes a mono PCM16 WAV file.
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pcm16(&w.samples, w.sample_rate, 1)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

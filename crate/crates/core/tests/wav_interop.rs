//! WAV reading and writing cross-checked against the `hound` crate.

use advspeech::audio::{read_wav, read_wav_at, write_wav, Waveform};
use advspeech::Error;

fn sine(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.6 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
        .collect()
}

#[test]
fn our_writer_is_readable_by_hound() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let x = sine(1600);
    write_wav(&Waveform::new(x.clone(), 16000), &path).unwrap();

    let mut reader = hound::WavReader::open(&path).unwrap();
    let spec = reader.spec();
    assert_eq!(spec.channels, 1);
    assert_eq!(spec.sample_rate, 16000);
    assert_eq!(spec.bits_per_sample, 16);
    assert_eq!(spec.sample_format, hound::SampleFormat::Int);
    let got: Vec<i16> = reader.samples::<i16>().map(Result::unwrap).collect();
    assert_eq!(got.len(), x.len());
    for (g, v) in got.iter().zip(&x) {
        assert_eq!(*g, (v * 32768.0).round() as i16);
    }
}

#[test]
fn hound_pcm16_is_read_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let raw = [32767i16, -32768, 0, 1, -1, 12345];
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for s in raw {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();

    let wav = read_wav(&path).unwrap();
    assert_eq!(wav.sample_rate, 16000);
    assert_eq!(wav.samples[0], 32767.0 / 32768.0);
    assert_eq!(wav.samples[1], -1.0);
    for (s, r) in wav.samples.iter().zip(raw) {
        assert_eq!(*s, r as f64 / 32768.0);
    }
}

#[test]
fn hound_float_stereo_is_downmixed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 16000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for (l, r) in [(0.5f32, -0.25f32), (1.0, 1.0), (0.0, -1.0)] {
        w.write_sample(l).unwrap();
        w.write_sample(r).unwrap();
    }
    w.finalize().unwrap();
    let wav = read_wav(&path).unwrap();
    assert_eq!(wav.samples, vec![0.125, 1.0, -0.5]);
}

#[test]
fn round_trip_is_within_half_a_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.wav");
    let x = sine(16000);
    write_wav(&Waveform::new(x.clone(), 16000), &path).unwrap();
    let back = read_wav_at(&path, 16000).unwrap();
    for (a, b) in back.samples.iter().zip(&x) {
        assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-15);
    }
    // a second round trip is lossless
    let path2 = dir.path().join("e.wav");
    write_wav(&back, &path2).unwrap();
    assert_eq!(read_wav(&path2).unwrap().samples, back.samples);
}

#[test]
fn rate_mismatch_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.wav");
    write_wav(&Waveform::new(sine(100), 8000), &path).unwrap();
    assert!(matches!(read_wav_at(&path, 16000), Err(Error::UnsupportedEncoding(_))));
}

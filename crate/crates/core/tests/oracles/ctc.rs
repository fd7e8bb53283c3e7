//! CTC loss against exhaustive alignment enumeration.

use advspeech::ctc::{ctc_loss, min_frames, CtcInput};
use advspeech::nn::log_softmax;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &k in path {
        if k != prev && k != blank {
            out.push(k);
        }
        prev = k;
    }
    out
}

/// -ln of the summed probability of every length-T path collapsing to target.
pub fn brute_force(log_probs: &[f64], frames: usize, width: usize, target: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    let count = width.pow(frames as u32);
    for code in 0..count {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % width;
            c /= width;
        }
        if collapse(&path, width - 1) == target {
            let lp: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &k)| log_probs[t * width + k])
                .sum();
            total += lp.exp();
        }
    }
    -total.ln()
}

pub fn random_log_probs(frames: usize, width: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> = (0..frames * width).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let lp = logits.chunks(width).flat_map(log_softmax).collect();
    (logits, lp)
}

/// Random instances with T <= 6, vocab <= 3, L <= 3; panics on the first
/// mismatch above 1e-9 and returns the largest difference seen.
pub fn enumeration_trials(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = 0;
    let mut worst = 0f64;
    while trials < n {
        let vocab = rng.gen_range(1..=3);
        let frames = rng.gen_range(1..=6);
        let len = rng.gen_range(0..=3);
        let target: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        if min_frames(&target) > frames {
            continue;
        }
        let width = vocab + 1;
        let (_, lp) = random_log_probs(frames, width, &mut rng);
        let out = ctc_loss(&CtcInput {
            log_probs: &lp,
            frames,
            vocab_size: vocab,
            target: &target,
        })
        .unwrap();
        let expected = brute_force(&lp, frames, width, &target);
        assert!(
            (out.loss - expected).abs() <= 1e-9,
            "T={frames} V={vocab} target {target:?}: dp {} brute {expected}",
            out.loss
        );
        assert!(out.loss >= 0.0);
        worst = worst.max((out.loss - expected).abs());
        trials += 1;
    }
    worst
}

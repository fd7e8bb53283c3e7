//! CTC loss against exhaustive alignment enumeration.

mod oracles;

use advspeech::ctc::{ctc_loss, min_frames, CtcInput};
use advspeech::nn::log_softmax;
use oracles::ctc::{brute_force, enumeration_trials, random_log_probs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_label_example_three_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, lp) = random_log_probs(3, 3, &mut rng);
    let out = ctc_loss(&CtcInput {
        log_probs: &lp,
        frames: 3,
        vocab_size: 2,
        target: &[0, 1],
    })
    .unwrap();
    let expected = brute_force(&lp, 3, 3, &[0, 1]);
    assert!((out.loss - expected).abs() < 1e-10);
}

#[test]
fn matches_enumeration_on_200_random_instances() {
    enumeration_trials(200, 2024);
}

#[test]
fn logit_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let vocab = 3;
        let width = vocab + 1;
        let frames = rng.gen_range(3..=6);
        let target: Vec<usize> = (0..2).map(|_| rng.gen_range(0..vocab)).collect();
        if min_frames(&target) > frames {
            continue;
        }
        let (logits, lp) = random_log_probs(frames, width, &mut rng);
        let loss_of = |z: &[f64]| {
            let lp: Vec<f64> = z.chunks(width).flat_map(log_softmax).collect();
            ctc_loss(&CtcInput {
                log_probs: &lp,
                frames,
                vocab_size: vocab,
                target: &target,
            })
            .unwrap()
            .loss
        };
        let out = ctc_loss(&CtcInput {
            log_probs: &lp,
            frames,
            vocab_size: vocab,
            target: &target,
        })
        .unwrap();
        // chain through log-softmax: dz = g - softmax(z) * sum(g)
        for t in 0..frames {
            let g = &out.grad[t * width..(t + 1) * width];
            let sum: f64 = g.iter().sum();
            for k in 0..width {
                let analytic = g[k] - lp[t * width + k].exp() * sum;
                let mut zp = logits.clone();
                zp[t * width + k] += 1e-5;
                let mut zm = logits.clone();
                zm[t * width + k] -= 1e-5;
                let fd = (loss_of(&zp) - loss_of(&zm)) / 2e-5;
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-4, "t={t} k={k}: analytic {analytic} fd {fd}");
            }
        }
    }
}

#[test]
fn zero_loss_only_for_a_certain_alignment() {
    // one-hot rows spelling "a blank b" make exactly one alignment certain
    let width = 3;
    let mut lp = vec![-1e3; 3 * width];
    lp[0] = 0.0;
    lp[width + 2] = 0.0;
    lp[2 * width + 1] = 0.0;
    let out = ctc_loss(&CtcInput {
        log_probs: &lp,
        frames: 3,
        vocab_size: 2,
        target: &[0, 1],
    })
    .unwrap();
    assert!(out.loss.abs() < 1e-12);
}

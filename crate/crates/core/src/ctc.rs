//! Connectionist Temporal Classification loss with its gradient.
//!
//! Forward-backward over the blank-augmented label sequence, entirely in the
//! log domain. The blank symbol is the last column of the log-probability
//! matrix (index `vocab_size`).

use crate::error::{Error, Result};

/// Per-frame log-distributions over `vocab_size + 1` symbols plus a target
/// label sequence drawn from `0..vocab_size`.
#[derive(Debug, Clone)]
pub struct CtcInput<'a> {
    /// `frames x (vocab_size + 1)` row-major.
    pub log_probs: &'a [f64],
    pub frames: usize,
    pub vocab_size: usize,
    pub target: &'a [usize],
}

impl CtcInput<'_> {
    pub fn blank(&self) -> usize {
        self.vocab_size
    }

    fn width(&self) -> usize {
        self.vocab_size + 1
    }
}

#[derive(Debug, Clone)]
pub struct CtcOutput {
    pub loss: f64,
    /// d loss / d log_probs, same layout as the input.
    pub grad: Vec<f64>,
}

/// Number of adjacent equal label pairs; each needs a blank between them.
pub fn repeat_count(target: &[usize]) -> usize {
    target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Minimum number of frames able to emit `target`.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + repeat_count(target)
}

pub fn check_feasible(target: &[usize], frames: usize) -> Result<()> {
    let needed = min_frames(target);
    if frames < needed || frames == 0 {
        return Err(Error::Infeasible {
            label_len: target.len(),
            repeats: repeat_count(target),
            needed: needed.max(1),
            frames,
        });
    }
    Ok(())
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn ctc_loss(input: &CtcInput<'_>) -> Result<CtcOutput> {
    let width = input.width();
    let t_len = input.frames;
    if input.log_probs.len() != t_len * width {
        return Err(Error::Shape(format!(
            "log_probs has {} values, expected {} x {}",
            input.log_probs.len(),
            t_len,
            width
        )));
    }
    if let Some(&bad) = input.target.iter().find(|&&l| l >= input.vocab_size) {
        return Err(Error::Domain(format!(
            "target label {bad} outside vocabulary of {}",
            input.vocab_size
        )));
    }
    check_feasible(input.target, t_len)?;

    let blank = input.blank();
    // blank-augmented sequence: b l1 b l2 ... lL b
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(input.target.iter().flat_map(|&l| [l, blank]))
        .collect();
    let s_len = ext.len();
    let lp = |t: usize, s: usize| input.log_probs[t * width + ext[s]];
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if a == neg { neg } else { a + lp(t, s) };
        }
    }

    let mut beta = vec![neg; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                b = log_add(b, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                b = log_add(b, beta[(t + 1) * s_len + s + 2]);
            }
            beta[t * s_len + s] = if b == neg { neg } else { b + lp(t, s) };
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if !log_p.is_finite() {
        return Err(Error::Divergence(
            "target has zero probability under the given distribution".into(),
        ));
    }

    // alpha and beta both include lp(t, s), so occupancy is
    // alpha + beta - lp; d(-log p)/d lp(t,k) = -exp(logsum_{s: ext[s]=k} occ - log p)
    let mut grad = vec![0.0; t_len * width];
    let mut occ = vec![neg; width];
    for t in 0..t_len {
        occ.iter_mut().for_each(|v| *v = neg);
        for s in 0..s_len {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a == neg || b == neg {
                continue;
            }
            let k = ext[s];
            occ[k] = log_add(occ[k], a + b - lp(t, s));
        }
        for k in 0..width {
            if occ[k] != neg {
                grad[t * width + k] = -(occ[k] - log_p).exp();
            }
        }
    }

    Ok(CtcOutput {
        loss: -log_p,
        grad,
    })
}

/// Best-path decoding: per-frame argmax, collapse repeats, drop blanks.
pub fn greedy_decode(argmax_path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in argmax_path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(frames: usize, width: usize) -> Vec<f64> {
        vec![-(width as f64).ln(); frames * width]
    }

    #[test]
    fn single_path() {
        let lp = uniform(1, 2);
        let out = ctc_loss(&CtcInput {
            log_probs: &lp,
            frames: 1,
            vocab_size: 1,
            target: &[0],
        })
        .unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_separator() {
        let lp = uniform(2, 2);
        let err = ctc_loss(&CtcInput {
            log_probs: &lp,
            frames: 2,
            vocab_size: 1,
            target: &[0, 0],
        });
        assert!(matches!(err, Err(Error::Infeasible { needed: 3, .. })));
        let lp = uniform(3, 2);
        // only "a blank a" works: (1/2)^3
        let out = ctc_loss(&CtcInput {
            log_probs: &lp,
            frames: 3,
            vocab_size: 1,
            target: &[0, 0],
        })
        .unwrap();
        assert!((out.loss - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocab_rejected() {
        let lp = uniform(3, 3);
        assert!(matches!(
            ctc_loss(&CtcInput {
                log_probs: &lp,
                frames: 3,
                vocab_size: 2,
                target: &[2],
            }),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn tiny_probabilities_stay_finite() {
        let width = 3;
        let frames = 6;
        let mut lp = vec![-50.0; frames * width];
        for t in 0..frames {
            // renormalize each row so the dominant symbol carries the mass
            let k = t % width;
            lp[t * width + k] = 0.0;
            let lse = lp[t * width..(t + 1) * width]
                .iter()
                .map(|v: &f64| v.exp())
                .sum::<f64>()
                .ln();
            for v in &mut lp[t * width..(t + 1) * width] {
                *v -= lse;
            }
        }
        let out = ctc_loss(&CtcInput {
            log_probs: &lp,
            frames,
            vocab_size: 2,
            target: &[1, 1, 0],
        })
        .unwrap();
        assert!(out.loss.is_finite() && out.loss > 0.0);
        assert!(out.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn greedy_collapse() {
        // a a blank b
        assert_eq!(greedy_decode(&[0, 0, 2, 1], 2), vec![0, 1]);
        assert!(greedy_decode(&[2, 2, 2], 2).is_empty());
        assert_eq!(greedy_decode(&[0, 2, 0], 2), vec![0, 0]);
    }
}

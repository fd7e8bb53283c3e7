//! Targeted attacks on the victims.
//!
//! White-box: descent on `||d||^2 + c * loss(x + d, target)` with the
//! perturbation clipped after every step to the amplitude implied by the
//! relative peak-dB bound. Candidate steps that raise the objective are
//! rejected (and the step shrunk), so accepted iterates never climb while
//! `c` and the bound are fixed. Each verified success tightens the bound.
//!
//! Black-box: a genetic algorithm over bounded perturbations that only sees
//! the victim's output distribution (or only its label).
//!
//! Every success is verified on the PCM16 waveform that gets written, so a
//! stored record can always be re-checked from its WAV file.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{
    amplitude_bound, apply_and_clip, db_relative, quantize_pcm16, read_wav, truncate_pcm16, write_wav,
    Perturbation, Waveform,
};
use crate::ctc::check_feasible;
use crate::dataset::{AttackJob, AttackKind};
use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::par;
use crate::victim::{KeywordModel, SequenceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteBoxConfig {
    pub max_iters: usize,
    pub lr: f64,
    /// Initial trade-off weight between distortion and victim loss.
    pub c: f64,
    /// Initial bound on `db_relative(x, d)`.
    pub tau_db: f64,
    pub tau_decay_db: f64,
    /// Stop at the first verified success instead of tightening further.
    pub early_stop: bool,
}

impl Default for WhiteBoxConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            lr: 0.01,
            c: 1.0,
            tau_db: -20.0,
            tau_decay_db: 2.0,
            early_stop: false,
        }
    }
}

impl WhiteBoxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.c > 0.0 && self.tau_decay_db >= 0.0) {
            return Err(Error::Config("lr and c must be positive, tau_decay_db non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxConfig {
    pub population: usize,
    pub max_generations: usize,
    pub elite_count: usize,
    /// Per-sample mutation probability.
    pub mutation_prob: f64,
    pub mutation_std: f64,
    /// Cap on every `|d_i|`.
    pub noise_bound: f64,
    /// Weight of `||d||^2` subtracted from the fitness.
    pub l2_penalty: f64,
    /// Softmax temperature of fitness-proportional parent selection.
    pub selection_temperature: f64,
    /// Fitness from the predicted label only, not the distribution.
    pub label_only: bool,
}

impl Default for BlackBoxConfig {
    fn default() -> Self {
        Self {
            population: 100,
            max_generations: 500,
            elite_count: 10,
            mutation_prob: 0.005,
            mutation_std: 0.005,
            noise_bound: 0.02,
            l2_penalty: 0.01,
            selection_temperature: 0.1,
            label_only: false,
        }
    }
}

impl BlackBoxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elite_count >= self.population {
            return Err(Error::Config("elite_count must be below population".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::Config("mutation_prob must be in [0, 1]".into()));
        }
        if !(self.mutation_std >= 0.0 && self.noise_bound > 0.0 && self.selection_temperature > 0.0) {
            return Err(Error::Config("mutation_std, noise_bound and temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Victim<'a> {
    Keyword(&'a KeywordModel),
    Sequence(&'a SequenceModel),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Text(String),
}

/// Everything an attack produced; the batch runner turns it into a record.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    /// PCM16-exact adversarial waveform.
    pub adversarial: Waveform,
    /// `adversarial - host`.
    pub perturbation: Perturbation,
    pub success: bool,
    pub iterations_used: usize,
    pub final_db_relative: f64,
    /// Bound in force when the reported perturbation was accepted.
    pub tau_db: Option<f64>,
    /// Victim output on the adversarial waveform.
    pub victim_output: String,
    /// White-box: `(phase, objective)` per accepted iterate; a phase ends
    /// whenever `c` or the bound changes. Black-box: best fitness per generation.
    pub trace: Vec<(usize, f64)>,
}

impl AttackOutcome {
    /// A failed outcome that leaves the host untouched, for targets the
    /// victim cannot be driven to at all (e.g. CTC-infeasible ones).
    pub fn unattacked(victim: Victim<'_>, host: &Waveform) -> Result<Self> {
        let (adversarial, perturbation) = realize(host, &vec![0.0; host.len()])?;
        Ok(Self {
            victim_output: victim_output(victim, &adversarial.samples)?,
            final_db_relative: db_relative(host, &perturbation)?,
            adversarial,
            perturbation,
            success: false,
            iterations_used: 0,
            tau_db: None,
            trace: Vec::new(),
        })
    }
}

/// Victim loss toward the target, its sample gradient, and the victim's
/// output at the evaluated point.
struct Eval {
    loss: f64,
    grad: Vec<f64>,
    hit: bool,
}

fn evaluate(victim: Victim<'_>, samples: &[f64], target: &Target, encoded: &[usize]) -> Result<Eval> {
    match (victim, target) {
        (Victim::Keyword(m), Target::Class(t)) => {
            let (loss, grad, probs) = m.loss_grad(samples, *t)?;
            let k = argmax(&probs);
            Ok(Eval {
                loss,
                grad,
                hit: k == *t,
            })
        }
        (Victim::Sequence(m), Target::Text(text)) => {
            let (loss, grad, out) = m.ctc_grad(samples, encoded)?;
            Ok(Eval {
                loss,
                grad,
                hit: out == *text,
            })
        }
        _ => Err(Error::Domain("keyword victims take class targets, sequence victims text".into())),
    }
}

/// Victim output on exactly these samples, without gradients.
fn victim_output(victim: Victim<'_>, samples: &[f64]) -> Result<String> {
    match victim {
        Victim::Keyword(m) => {
            let p = m.probabilities(samples)?;
            Ok(m.class_names[argmax(&p)].clone())
        }
        Victim::Sequence(m) => {
            let lp = m.log_probs(samples)?;
            Ok(m.decode_indices(&crate::ctc::greedy_decode(&lp.best_path(), m.blank())))
        }
    }
}

fn target_text(victim: Victim<'_>, target: &Target) -> Result<String> {
    match (victim, target) {
        (Victim::Keyword(m), Target::Class(t)) => m
            .class_names
            .get(*t)
            .cloned()
            .ok_or_else(|| Error::Domain(format!("class {t} outside {} classes", m.class_names.len()))),
        (Victim::Sequence(_), Target::Text(s)) => Ok(s.clone()),
        _ => Err(Error::Domain("keyword victims take class targets, sequence victims text".into())),
    }
}

/// Quantizes `delta` toward zero onto the PCM16 grid and applies it; for a
/// host already on the grid the result is exactly representable.
fn realize(host: &Waveform, delta: &[f64]) -> Result<(Waveform, Perturbation)> {
    let q = Perturbation::new(delta.iter().map(|&d| truncate_pcm16(d)).collect());
    let mut adv = apply_and_clip(host, &q)?;
    // +1.0 is not representable; keep what is verified equal to what is written
    adv.samples.iter_mut().for_each(|v| *v = quantize_pcm16(*v));
    let effective = Perturbation::new(adv.samples.iter().zip(&host.samples).map(|(a, h)| a - h).collect());
    Ok((adv, effective))
}

fn sq_norm(d: &[f64]) -> f64 {
    d.iter().map(|v| v * v).sum()
}

/// Slightly inside the bound so the strict `< tau` survives rounding.
fn clip_bound(host: &Waveform, tau_db: f64) -> Result<f64> {
    Ok(amplitude_bound(host, tau_db)? * (1.0 - 1e-9))
}

pub fn attack_white_box(
    victim: Victim<'_>,
    x: &Waveform,
    target: &Target,
    cfg: &WhiteBoxConfig,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let want = target_text(victim, target)?;
    let encoded = match (victim, target) {
        (Victim::Sequence(m), Target::Text(t)) => {
            let enc = m.encode_text(t)?;
            check_feasible(&enc, m.output_frames(x.len())?)?;
            enc
        }
        _ => Vec::new(),
    };
    let n = x.len();

    let first = victim_output(victim, &x.samples)?;
    if first == want {
        let zero = Perturbation::zeros(n);
        return Ok(AttackOutcome {
            final_db_relative: db_relative(x, &zero)?,
            adversarial: x.clone(),
            perturbation: zero,
            success: true,
            iterations_used: 0,
            tau_db: Some(cfg.tau_db),
            victim_output: first,
            trace: Vec::new(),
        });
    }

    let mut tau = cfg.tau_db;
    let mut bound = clip_bound(x, tau)?;
    let mut c = cfg.c;
    let mut delta = vec![0.0; n];
    let mut cur = evaluate(victim, &x.samples, target, &encoded)?;
    let mut f = sq_norm(&delta) + c * cur.loss;
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut step = 0i32;
    let mut scale = 1.0;
    let mut phase = 0usize;
    let mut since_success = 0usize;
    let patience = (cfg.max_iters / 5).max(1);
    let mut trace = vec![(phase, f)];
    let mut best: Option<(Waveform, Perturbation, f64, String)> = None;
    let mut iters = 0;

    let mut cand = vec![0.0; n];
    for it in 1..=cfg.max_iters {
        iters = it;
        step += 1;
        let bc1 = 1.0 - b1.powi(step);
        let bc2 = 1.0 - b2.powi(step);
        for i in 0..n {
            let g = 2.0 * delta[i] + c * cur.grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let dir = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            cand[i] = (delta[i] - cfg.lr * scale * dir).clamp(-bound, bound);
        }
        let adv_cont = apply_and_clip(x, &Perturbation::new(cand.clone()))?;
        let e = evaluate(victim, &adv_cont.samples, target, &encoded)?;
        if !e.loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite victim loss at iteration {it}")));
        }
        let f_new = sq_norm(&cand) + c * e.loss;
        if f_new > f {
            scale *= 0.5;
            since_success += 1;
        } else {
            std::mem::swap(&mut delta, &mut cand);
            cur = e;
            f = f_new;
            scale = (scale * 2.0).min(1.0);
            trace.push((phase, f));

            let mut verified = false;
            if cur.hit {
                let (adv, eff) = realize(x, &delta)?;
                let out = victim_output(victim, &adv.samples)?;
                if out == want {
                    let db = db_relative(x, &eff)?;
                    debug_assert!(db < tau);
                    best = Some((adv, eff, tau, out));
                    verified = true;
                }
            }
            if verified {
                if cfg.early_stop {
                    break;
                }
                c *= 0.5;
                tau -= cfg.tau_decay_db;
                bound = clip_bound(x, tau)?;
                delta.iter_mut().for_each(|d| *d = d.clamp(-bound, bound));
                cur = evaluate(victim, &apply_and_clip(x, &Perturbation::new(delta.clone()))?.samples, target, &encoded)?;
                f = sq_norm(&delta) + c * cur.loss;
                phase += 1;
                trace.push((phase, f));
                since_success = 0;
                continue;
            }
            since_success += 1;
        }
        if since_success >= patience {
            c *= 2.0;
            f = sq_norm(&delta) + c * cur.loss;
            phase += 1;
            trace.push((phase, f));
            since_success = 0;
        }
    }

    match best {
        Some((adv, eff, tau_ok, out)) => Ok(AttackOutcome {
            final_db_relative: db_relative(x, &eff)?,
            adversarial: adv,
            perturbation: eff,
            success: true,
            iterations_used: iters,
            tau_db: Some(tau_ok),
            victim_output: out,
            trace,
        }),
        None => {
            let (adv, eff) = realize(x, &delta)?;
            let out = victim_output(victim, &adv.samples)?;
            Ok(AttackOutcome {
                final_db_relative: db_relative(x, &eff)?,
                success: out == want,
                adversarial: adv,
                perturbation: eff,
                iterations_used: iters,
                tau_db: Some(tau),
                victim_output: out,
                trace,
            })
        }
    }
}

struct Scored {
    delta: Vec<f64>,
    fitness: f64,
    label: usize,
}

fn score(m: &KeywordModel, x: &Waveform, delta: Vec<f64>, target: usize, cfg: &BlackBoxConfig) -> Result<Scored> {
    let adv = apply_and_clip(x, &Perturbation::new(delta.clone()))?;
    let p = m.probabilities(&adv.samples)?;
    let label = argmax(&p);
    let gain = if cfg.label_only {
        if label == target { 1.0 } else { 0.0 }
    } else {
        (p[target] + 1e-30).ln()
    };
    Ok(Scored {
        fitness: gain - cfg.l2_penalty * sq_norm(&delta),
        delta,
        label,
    })
}

fn mutate(d: &mut [f64], cfg: &BlackBoxConfig, rng: &mut ChaCha8Rng, normal: &Normal<f64>) {
    if cfg.mutation_prob <= 0.0 {
        return;
    }
    // jump between mutated samples with geometric gaps
    let ln_q = (1.0 - cfg.mutation_prob).ln();
    let mut i = 0usize;
    loop {
        let skip = if cfg.mutation_prob >= 1.0 {
            0
        } else {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / ln_q).floor() as usize
        };
        i = match i.checked_add(skip) {
            Some(j) if j < d.len() => j,
            _ => break,
        };
        d[i] += normal.sample(rng);
        i += 1;
    }
}

fn bound_and_grid(d: &mut [f64], bound: f64) {
    for v in d.iter_mut() {
        *v = truncate_pcm16(v.clamp(-bound, bound));
    }
}

/// Genetic attack on the keyword victim, seeded entirely by `seed`.
pub fn attack_black_box(
    victim: &KeywordModel,
    x: &Waveform,
    target: usize,
    cfg: &BlackBoxConfig,
    seed: u64,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    if target >= victim.class_names.len() {
        return Err(Error::Domain(format!("target class {target} out of range")));
    }
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, cfg.mutation_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;

    let p0 = victim.probabilities(&x.samples)?;
    if argmax(&p0) == target {
        let zero = Perturbation::zeros(n);
        return Ok(AttackOutcome {
            final_db_relative: db_relative(x, &zero)?,
            adversarial: x.clone(),
            perturbation: zero,
            success: true,
            iterations_used: 0,
            tau_db: None,
            victim_output: victim.class_names[target].clone(),
            trace: Vec::new(),
        });
    }

    let mut pop = Vec::with_capacity(cfg.population);
    for _ in 0..cfg.population {
        let mut d = vec![0.0; n];
        mutate(&mut d, cfg, &mut rng, &normal);
        bound_and_grid(&mut d, cfg.noise_bound);
        pop.push(score(victim, x, d, target, cfg)?);
    }

    let mut trace = Vec::new();
    let mut generation = 0;
    loop {
        // stable sort keeps index order among equal fitness
        pop.sort_by(|a, b| b.fitness.total_cmp(&a.fitness));
        trace.push((generation, pop[0].fitness));
        if let Some(hit) = pop.iter().find(|s| s.label == target) {
            let (adv, eff) = realize(x, &hit.delta)?;
            return Ok(AttackOutcome {
                final_db_relative: db_relative(x, &eff)?,
                adversarial: adv,
                perturbation: eff,
                success: true,
                iterations_used: generation,
                tau_db: None,
                victim_output: victim.class_names[target].clone(),
                trace,
            });
        }
        if generation >= cfg.max_generations {
            break;
        }
        generation += 1;

        let top = pop[0].fitness;
        let weights: Vec<f64> = pop
            .iter()
            .map(|s| ((s.fitness - top) / cfg.selection_temperature).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = |rng: &mut ChaCha8Rng| {
            let mut u = rng.gen_range(0.0..total);
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    return i;
                }
                u -= w;
            }
            weights.len() - 1
        };

        let mut next: Vec<Scored> = pop.drain(..cfg.elite_count).collect();
        let parents = std::mem::take(&mut pop);
        let elites_len = next.len();
        let all: Vec<&Scored> = next.iter().chain(parents.iter()).collect();
        let mut children = Vec::with_capacity(cfg.population - elites_len);
        for _ in elites_len..cfg.population {
            let (a, b) = (all[pick(&mut rng)], all[pick(&mut rng)]);
            let mut child = Vec::with_capacity(n);
            let mut bits = 0u64;
            for i in 0..n {
                if i % 64 == 0 {
                    bits = rng.gen();
                }
                child.push(if bits >> (i % 64) & 1 == 1 { a.delta[i] } else { b.delta[i] });
            }
            mutate(&mut child, cfg, &mut rng, &normal);
            bound_and_grid(&mut child, cfg.noise_bound);
            children.push(child);
        }
        drop(all);
        for child in children {
            next.push(score(victim, x, child, target, cfg)?);
        }
        pop = next;
    }

    let best = &pop[0];
    let (adv, eff) = realize(x, &best.delta)?;
    Ok(AttackOutcome {
        final_db_relative: db_relative(x, &eff)?,
        victim_output: victim.class_names[best.label].clone(),
        adversarial: adv,
        perturbation: eff,
        success: false,
        iterations_used: generation,
        tau_db: None,
        trace,
    })
}

/// One line of `records.jsonl`. The perturbation itself lives in the WAV at
/// `adversarial_wav` (source plus perturbation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialRecord {
    pub source_id: String,
    pub source_label: String,
    pub source_wav: String,
    pub bucket: String,
    pub target: String,
    pub target_class: String,
    pub adversarial_wav: String,
    pub success: bool,
    pub iterations_used: usize,
    pub final_db_relative: f64,
    pub tau_db: Option<f64>,
    pub max_abs_delta: f64,
    pub victim_output: String,
    pub attack_kind: AttackKind,
    pub victim_checkpoint_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub bucket: String,
    pub target_class: String,
    pub attempts: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub attempts: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub cells: Vec<CellSummary>,
}

pub fn summarize(records: &[AdversarialRecord]) -> BatchSummary {
    let mut cells: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for r in records {
        let c = cells.entry((r.bucket.clone(), r.target_class.clone())).or_default();
        c.0 += 1;
        c.1 += r.success as usize;
    }
    let rate = |s: usize, a: usize| if a == 0 { 0.0 } else { s as f64 / a as f64 };
    let successes = records.iter().filter(|r| r.success).count();
    BatchSummary {
        attempts: records.len(),
        successes,
        success_rate: rate(successes, records.len()),
        cells: cells
            .into_iter()
            .map(|((bucket, target_class), (a, s))| CellSummary {
                bucket,
                target_class,
                attempts: a,
                successes: s,
                success_rate: rate(s, a),
            })
            .collect(),
    }
}

pub const RECORDS_FILE: &str = "records.jsonl";

/// Runs every job, writing `out_dir/adv/<source>__<target_class>.wav`.
///
/// Sources resolve against `source_root`. All missing sources are reported
/// together before any attack starts. Jobs run on up to `jobs` threads;
/// each job carries its own seed, so results do not depend on scheduling.
pub fn batch_attack<F>(
    plan: &[AttackJob],
    source_root: &Path,
    out_dir: &Path,
    kind: AttackKind,
    victim_hash: &str,
    jobs: usize,
    attack: F,
) -> Result<(Vec<AdversarialRecord>, BatchSummary)>
where
    F: Fn(&Waveform, &AttackJob) -> Result<AttackOutcome> + Sync,
{
    let missing: Vec<&str> = plan
        .iter()
        .filter(|j| !source_root.join(&j.source.wav_path).is_file())
        .map(|j| j.source.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Manifest(format!("missing source files for {missing:?}")));
    }
    let adv_dir = out_dir.join("adv");
    std::fs::create_dir_all(&adv_dir).map_err(|e| Error::io(&adv_dir, e))?;

    let run_one = |job: &AttackJob| -> Result<AdversarialRecord> {
        let host = read_wav(source_root.join(&job.source.wav_path))?;
        let out = attack(&host, job)?;
        let rel = format!("adv/{}__{}.wav", job.source.id, job.target_class.replace(' ', "_"));
        write_wav(&out.adversarial, out_dir.join(&rel))?;
        log::debug!(
            "{} -> {}: success={} iters={}",
            job.source.id,
            job.target_class,
            out.success,
            out.iterations_used
        );
        Ok(AdversarialRecord {
            source_id: job.source.id.clone(),
            source_label: job.source.label.clone(),
            source_wav: job.source.wav_path.clone(),
            bucket: job.bucket.clone(),
            target: job.target.clone(),
            target_class: job.target_class.clone(),
            adversarial_wav: rel,
            success: out.success,
            iterations_used: out.iterations_used,
            final_db_relative: out.final_db_relative,
            tau_db: out.tau_db,
            max_abs_delta: out.perturbation.max_abs(),
            victim_output: out.victim_output,
            attack_kind: kind,
            victim_checkpoint_hash: victim_hash.to_string(),
            seed: job.seed,
        })
    };
    let records = par::map_ordered(plan, jobs, run_one)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records);
    Ok((records, summary))
}

//! Assembly of the two balanced normal/adversarial datasets.
//!
//! Both builders pick attack sources and normals from disjoint pools,
//! delegate the attacks to a runner, then drop one normal of the same bucket
//! for every attack that failed (or whose output fails the speech filter),
//! so the manifest stays balanced inside every bucket.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bucket_of, AttackKind, Bucket, DatasetManifest, ExampleLabel, ManifestEntry, Split};
use crate::attacks::AdversarialRecord;
use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::features::MfccConfig;
use crate::seeds::derive;
use crate::vad::{passes_speech_filter, speech_ratio, VadParams, SPEECH_RATIO_THRESHOLD};

/// A clip eligible as attack source or normal example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    /// Relative to the corpus root.
    pub wav_path: String,
    /// Keyword class, or transcript for utterances.
    pub label: String,
    pub duration_s: f64,
    pub speech_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    /// `short`, `medium` or `long`.
    pub class: String,
    pub text: String,
}

/// The three target sentences, lowercased for the a-z vocabulary.
pub fn default_targets() -> Vec<TargetSpec> {
    [
        ("short", "open all doors"),
        ("medium", "switch off wifi connection"),
        (
            "long",
            "i need a reservation for sixteen people at the seafood restaurant down the street",
        ),
    ]
    .iter()
    .map(|&(c, t)| TargetSpec {
        class: c.into(),
        text: t.into(),
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackJob {
    pub source: Candidate,
    /// Duration bucket (dataset A) or source class (dataset B).
    pub bucket: String,
    /// Transcript or class name the victim should output.
    pub target: String,
    pub target_class: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct DatasetBuild {
    /// Every entry starts on the train side; see `split_train_test`.
    pub manifest: DatasetManifest,
    pub records: Vec<AdversarialRecord>,
    pub warnings: Vec<String>,
}

/// Where files live and how the speech filter is applied.
#[derive(Debug, Clone)]
pub struct BuildContext<'a> {
    pub corpus_root: &'a Path,
    /// Adversarial WAVs are written here by the runner; normals are copied
    /// to `normal/` underneath.
    pub out_dir: &'a Path,
    pub seed: u64,
    pub speech_filter: bool,
    pub vad_cfg: MfccConfig,
    pub vad: VadParams,
    pub attack_kind: AttackKind,
}

fn passes(c: &Candidate, filter: bool) -> bool {
    !filter || c.speech_ratio > SPEECH_RATIO_THRESHOLD
}

/// Splits every group (sorted by id, then shuffled by its own substream)
/// into `n_attack` sources and `n_normal` normals.
fn pick(
    groups: &BTreeMap<String, Vec<&Candidate>>,
    n_attack: usize,
    n_normal: usize,
    seed: u64,
    what: &str,
) -> Result<BTreeMap<String, (Vec<Candidate>, Vec<Candidate>)>> {
    let need = n_attack + n_normal;
    let short: Vec<String> = groups
        .iter()
        .filter(|(_, v)| v.len() < need)
        .map(|(k, v)| format!("{what} {k}: need {need} eligible clips, have {}", v.len()))
        .collect();
    if !short.is_empty() {
        return Err(Error::InsufficientData(short.join("; ")));
    }
    Ok(groups
        .iter()
        .map(|(k, v)| {
            let mut v: Vec<Candidate> = v.iter().map(|c| (*c).clone()).collect();
            v.sort_by(|a, b| a.id.cmp(&b.id));
            v.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, &["pick", what, k])));
            let normals = v[n_attack..need].to_vec();
            v.truncate(n_attack);
            (k.clone(), (v, normals))
        })
        .collect())
}

fn assemble<R>(
    ctx: &BuildContext<'_>,
    picked: BTreeMap<String, (Vec<Candidate>, Vec<Candidate>)>,
    jobs: Vec<AttackJob>,
    runner: R,
) -> Result<DatasetBuild>
where
    R: FnOnce(&[AttackJob]) -> Result<Vec<AdversarialRecord>>,
{
    let records = runner(&jobs)?;
    if records.len() != jobs.len() {
        return Err(Error::State(format!(
            "runner returned {} records for {} jobs",
            records.len(),
            jobs.len()
        )));
    }
    let mut warnings = Vec::new();
    let mut entries = Vec::new();
    let mut dropped: BTreeMap<String, usize> = BTreeMap::new();
    for (job, rec) in jobs.iter().zip(&records) {
        if rec.source_id != job.source.id || rec.target_class != job.target_class {
            return Err(Error::State(format!(
                "record for {}/{} answers job {}/{}",
                rec.source_id, rec.target_class, job.source.id, job.target_class
            )));
        }
        if !rec.success {
            warnings.push(format!(
                "attack {} -> {} failed; dropping one {} normal",
                job.source.id, job.target_class, job.bucket
            ));
            *dropped.entry(job.bucket.clone()).or_default() += 1;
            continue;
        }
        let w = read_wav(ctx.out_dir.join(&rec.adversarial_wav))?;
        let v = speech_ratio(&w, &ctx.vad_cfg, &ctx.vad)?;
        if ctx.speech_filter && !passes_speech_filter(&v, SPEECH_RATIO_THRESHOLD) {
            warnings.push(format!(
                "adversarial {} -> {} has speech ratio {:.3}; dropping it and one {} normal",
                job.source.id, job.target_class, v.speech_ratio, job.bucket
            ));
            *dropped.entry(job.bucket.clone()).or_default() += 1;
            continue;
        }
        entries.push(ManifestEntry {
            id: format!("{}__{}", job.source.id, job.target_class.replace(' ', "_")),
            wav_path: rec.adversarial_wav.clone(),
            label: ExampleLabel::Adversarial,
            bucket: job.bucket.clone(),
            target_class: Some(job.target_class.clone()),
            split: Split::Train,
            source_id: Some(job.source.id.clone()),
            attack_kind: ctx.attack_kind,
            duration_s: w.duration_seconds(),
            speech_ratio: v.speech_ratio,
            vad: ctx.vad.algorithm_id(),
        });
    }

    let normal_dir = ctx.out_dir.join("normal");
    fs::create_dir_all(&normal_dir).map_err(|e| Error::io(&normal_dir, e))?;
    for (bucket, (_, normals)) in picked {
        let keep = normals.len() - dropped.get(&bucket).copied().unwrap_or(0).min(normals.len());
        for c in &normals[..keep] {
            let rel = format!("normal/{}.wav", c.id);
            let src = ctx.corpus_root.join(&c.wav_path);
            let dst = ctx.out_dir.join(&rel);
            fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
            entries.push(ManifestEntry {
                id: c.id.clone(),
                wav_path: rel,
                label: ExampleLabel::Normal,
                bucket: bucket.clone(),
                target_class: None,
                split: Split::Train,
                source_id: None,
                attack_kind: AttackKind::None,
                duration_s: c.duration_s,
                speech_ratio: c.speech_ratio,
                vad: ctx.vad.algorithm_id(),
            });
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(DatasetBuild {
        manifest: DatasetManifest { entries },
        records,
        warnings,
    })
}

/// Dataset A: `n_per_bucket` sources per duration bucket, each attacked
/// toward every target, plus `targets.len() * n_per_bucket` normals per bucket.
pub fn build_dataset_a<R>(
    ctx: &BuildContext<'_>,
    candidates: &[Candidate],
    buckets: &[Bucket],
    targets: &[TargetSpec],
    n_per_bucket: usize,
    runner: R,
) -> Result<DatasetBuild>
where
    R: FnOnce(&[AttackJob]) -> Result<Vec<AdversarialRecord>>,
{
    if targets.is_empty() || n_per_bucket == 0 {
        return Err(Error::Config("dataset A needs targets and n_per_bucket >= 1".into()));
    }
    let mut groups: BTreeMap<String, Vec<&Candidate>> =
        buckets.iter().map(|b| (b.name.clone(), Vec::new())).collect();
    for c in candidates.iter().filter(|c| passes(c, ctx.speech_filter)) {
        if let Some(b) = bucket_of(c.duration_s, buckets) {
            groups.get_mut(b).expect("pre-seeded").push(c);
        }
    }
    let picked = pick(&groups, n_per_bucket, targets.len() * n_per_bucket, ctx.seed, "bucket")?;
    let mut jobs = Vec::new();
    for (bucket, (sources, _)) in &picked {
        for s in sources {
            for t in targets {
                jobs.push(AttackJob {
                    source: s.clone(),
                    bucket: bucket.clone(),
                    target: t.text.clone(),
                    target_class: t.class.clone(),
                    seed: derive(ctx.seed, &["job", &s.id, &t.class]),
                });
            }
        }
    }
    assemble(ctx, picked, jobs, runner)
}

/// Dataset B: mutual targeting among `classes`. Each class contributes
/// `n_per_command` sources attacked toward every other class and
/// `(K-1) * n_per_command` normals.
pub fn build_dataset_b<R>(
    ctx: &BuildContext<'_>,
    candidates: &[Candidate],
    classes: &[String],
    n_per_command: usize,
    runner: R,
) -> Result<DatasetBuild>
where
    R: FnOnce(&[AttackJob]) -> Result<Vec<AdversarialRecord>>,
{
    if classes.len() < 2 || n_per_command == 0 {
        return Err(Error::Config("dataset B needs two classes and n_per_command >= 1".into()));
    }
    let mut groups: BTreeMap<String, Vec<&Candidate>> =
        classes.iter().map(|c| (c.clone(), Vec::new())).collect();
    for c in candidates.iter().filter(|c| passes(c, ctx.speech_filter)) {
        if let Some(g) = groups.get_mut(&c.label) {
            g.push(c);
        }
    }
    let k = classes.len();
    let picked = pick(&groups, n_per_command, (k - 1) * n_per_command, ctx.seed, "class")?;
    let mut jobs = Vec::new();
    for (class, (sources, _)) in &picked {
        for s in sources {
            for t in classes.iter().filter(|t| *t != class) {
                jobs.push(AttackJob {
                    source: s.clone(),
                    bucket: class.clone(),
                    target: t.clone(),
                    target_class: t.clone(),
                    seed: derive(ctx.seed, &["job", &s.id, t]),
                });
            }
        }
    }
    assemble(ctx, picked, jobs, runner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, Waveform};
    use crate::dataset::{default_buckets, validate_manifest, ValidateOptions};

    fn tone(secs: f64) -> Waveform {
        let n = (secs * 16000.0) as usize;
        Waveform::new(
            (0..n).map(|i| 0.3 * (i as f64 * 0.05).sin() * (1.0 + (i as f64 * 0.0003).sin())).collect(),
            16000,
        )
    }

    fn corpus(dir: &Path, per_bucket: usize) -> Vec<Candidate> {
        let mut out = Vec::new();
        for (b, secs) in [("s", 1.5), ("m", 3.5), ("l", 6.5)] {
            for i in 0..per_bucket {
                let id = format!("{b}{i:02}");
                let rel = format!("{id}.wav");
                write_wav(&tone(secs), dir.join(&rel)).unwrap();
                out.push(Candidate {
                    id,
                    wav_path: rel,
                    label: "x".into(),
                    duration_s: secs,
                    speech_ratio: 0.9,
                });
            }
        }
        out
    }

    fn ctx<'a>(root: &'a Path, out: &'a Path) -> BuildContext<'a> {
        BuildContext {
            corpus_root: root,
            out_dir: out,
            seed: 5,
            speech_filter: false,
            vad_cfg: MfccConfig::default(),
            vad: VadParams::default(),
            attack_kind: AttackKind::WhiteBox,
        }
    }

    /// Copies the source as the "adversarial" file, failing on request.
    fn fake_runner<'a>(
        root: &'a Path,
        out: &'a Path,
        fail: &'a [usize],
    ) -> impl FnOnce(&[AttackJob]) -> Result<Vec<AdversarialRecord>> + 'a {
        move |jobs| {
            fs::create_dir_all(out.join("adv")).unwrap();
            Ok(jobs
                .iter()
                .enumerate()
                .map(|(i, j)| {
                    let rel = format!("adv/{}__{}.wav", j.source.id, j.target_class);
                    let mut w = read_wav(root.join(&j.source.wav_path)).unwrap();
                    w.samples[0] += 1.0 / 32768.0;
                    write_wav(&w, out.join(&rel)).unwrap();
                    AdversarialRecord {
                        source_id: j.source.id.clone(),
                        source_label: j.source.label.clone(),
                        source_wav: j.source.wav_path.clone(),
                        bucket: j.bucket.clone(),
                        target: j.target.clone(),
                        target_class: j.target_class.clone(),
                        adversarial_wav: rel,
                        success: !fail.contains(&i),
                        iterations_used: 1,
                        final_db_relative: -30.0,
                        tau_db: Some(-20.0),
                        max_abs_delta: 1.0 / 32768.0,
                        victim_output: j.target.clone(),
                        attack_kind: AttackKind::WhiteBox,
                        victim_checkpoint_hash: "h".into(),
                        seed: j.seed,
                    }
                })
                .collect())
        }
    }

    #[test]
    fn dataset_a_counts_and_shortfall() {
        let root = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cands = corpus(root.path(), 8);
        let c = ctx(root.path(), out.path());
        let b = build_dataset_a(&c, &cands, &default_buckets(), &default_targets(), 2, fake_runner(root.path(), out.path(), &[]))
            .unwrap();
        assert_eq!(b.manifest.count(ExampleLabel::Adversarial), 18);
        assert_eq!(b.manifest.count(ExampleLabel::Normal), 18);
        let r = validate_manifest(
            &b.manifest,
            &ValidateOptions {
                speech_filter: false,
                root: Some(out.path().to_path_buf()),
            },
        );
        assert!(r.ok(), "{:?}", r.violations);

        let err = build_dataset_a(&c, &cands, &default_buckets(), &default_targets(), 3, fake_runner(root.path(), out.path(), &[]));
        match err {
            Err(Error::InsufficientData(msg)) => assert!(msg.contains("need 12") && msg.contains("have 8"), "{msg}"),
            other => panic!("expected shortfall, got {other:?}"),
        }
    }

    #[test]
    fn failed_attack_drops_a_normal_of_its_bucket() {
        let root = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cands = corpus(root.path(), 8);
        let c = ctx(root.path(), out.path());
        let b = build_dataset_a(&c, &cands, &default_buckets(), &default_targets(), 2, fake_runner(root.path(), out.path(), &[0]))
            .unwrap();
        assert_eq!(b.manifest.count(ExampleLabel::Adversarial), 17);
        assert_eq!(b.manifest.count(ExampleLabel::Normal), 17);
        assert_eq!(b.warnings.len(), 1);
        let failed_bucket = &b.records[0].bucket;
        for side in [ExampleLabel::Normal, ExampleLabel::Adversarial] {
            let n = b.manifest.entries.iter().filter(|e| e.label == side && &e.bucket == failed_bucket).count();
            assert_eq!(n, 5);
        }
    }

    #[test]
    fn dataset_b_mutual_targets() {
        let root = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let mut cands = Vec::new();
        let classes: Vec<String> = ["p", "q", "r", "s"].iter().map(|s| s.to_string()).collect();
        for cl in &classes {
            for i in 0..12 {
                let id = format!("{cl}{i:02}");
                let rel = format!("{id}.wav");
                write_wav(&tone(1.0), root.path().join(&rel)).unwrap();
                cands.push(Candidate {
                    id,
                    wav_path: rel,
                    label: cl.clone(),
                    duration_s: 1.0,
                    speech_ratio: 0.9,
                });
            }
        }
        let mut c = ctx(root.path(), out.path());
        c.attack_kind = AttackKind::BlackBox;
        let b = build_dataset_b(&c, &cands, &classes, 3, fake_runner(root.path(), out.path(), &[])).unwrap();
        assert_eq!(b.manifest.count(ExampleLabel::Adversarial), 36);
        assert_eq!(b.manifest.count(ExampleLabel::Normal), 36);
        assert!(b
            .manifest
            .entries
            .iter()
            .filter(|e| e.label == ExampleLabel::Adversarial)
            .all(|e| e.target_class.as_deref() != Some(e.bucket.as_str())));
        assert!(validate_manifest(&b.manifest, &ValidateOptions { speech_filter: false, root: None }).ok());
    }
}

//! End-to-end run with stage caching.
//!
//! Stages: corpus -> victims -> dataset A / dataset B -> attack efficacy ->
//! detector -> evaluation. Each stage directory holds a `stage.json` with a
//! hash of everything the stage depends on (its config section, the master
//! seed and the hashes of upstream stages) plus a digest of every file it
//! wrote. A stage is skipped when both still match; a changed or corrupted
//! output makes it run again. Every stage directory also gets a copy of the
//! run config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attacks::{
    attack_black_box, attack_white_box, batch_attack, summarize, AdversarialRecord, AttackOutcome,
    BlackBoxConfig, Target, Victim, WhiteBoxConfig, RECORDS_FILE,
};
use crate::dataset::corpus::{synth_corpus, CorpusEntry, CorpusManifest, CorpusSpec, CORPUS_MANIFEST};
use crate::dataset::{
    build_dataset_a, build_dataset_b, default_buckets, default_targets, split_train_test, validate_manifest,
    AttackJob, AttackKind, Bucket, BuildContext, Candidate, DatasetBuild, DatasetManifest, ExampleLabel,
    Split, TargetSpec, ValidateOptions,
};
use crate::detector::{
    build_detector, detector_desk_mfcc, train_on_features, DetectorArch, DetectorTrainConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, DatasetId, EvalConfig, EvalReport, PreparedDataset};
use crate::features::{FeatureMap, MfccConfig};
use crate::nn::checkpoint::content_hash;
use crate::seeds::{self, derive};
use crate::vad::VadParams;
use crate::victim::{
    train_keyword_model, train_sequence_model, KeywordModel, KeywordTrainConfig, SequenceModel,
    SequenceTrainConfig,
};

pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const STAGE_FILE: &str = "stage.json";
pub const FAILED_FILE: &str = "FAILED";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const KEYWORD_CHECKPOINT: &str = "keyword.ann";
pub const SEQUENCE_CHECKPOINT: &str = "sequence.ann";
pub const DETECTOR_CHECKPOINT: &str = "detector.ann";
pub const EFFICACY_FILE: &str = "efficacy.json";
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset {other:?} (desk, full)"))),
        }
    }
}

/// Roots relative to the run's base directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub corpus: PathBuf,
    pub work: PathBuf,
    pub output: PathBuf,
}

impl Default for RunPaths {
    fn default() -> Self {
        Self {
            corpus: "corpus".into(),
            work: "work".into(),
            output: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAConfig {
    pub n_per_bucket: usize,
    pub buckets: Vec<Bucket>,
    pub targets: Vec<TargetSpec>,
    pub train_fraction: f64,
    pub attack: WhiteBoxConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBConfig {
    pub classes: Vec<String>,
    pub n_per_command: usize,
    pub train_fraction: f64,
    pub attack: BlackBoxConfig,
}

/// Stand-alone white-box runs on the keyword victim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyConfig {
    pub pairs: usize,
    pub attack: WhiteBoxConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub master_seed: u64,
    pub preset: Preset,
    pub paths: RunPaths,
    pub speech_filter: bool,
    pub corpus: CorpusSpec,
    pub keyword_victim: KeywordTrainConfig,
    pub sequence_victim: SequenceTrainConfig,
    pub dataset_a: DatasetAConfig,
    pub dataset_b: DatasetBConfig,
    pub efficacy: EfficacyConfig,
    pub detector: EvalConfig,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            master_seed: 20,
            preset: Preset::Desk,
            paths: RunPaths::default(),
            speech_filter: true,
            corpus: CorpusSpec::desk(),
            keyword_victim: KeywordTrainConfig::default(),
            sequence_victim: SequenceTrainConfig {
                hidden: 64,
                epochs: 200,
                ..SequenceTrainConfig::default()
            },
            dataset_a: DatasetAConfig {
                n_per_bucket: 24,
                buckets: default_buckets(),
                targets: default_targets(),
                train_fraction: 0.75,
                attack: WhiteBoxConfig {
                    max_iters: 300,
                    early_stop: true,
                    ..WhiteBoxConfig::default()
                },
            },
            dataset_b: DatasetBConfig {
                classes: crate::dataset::corpus::speech_commands(),
                n_per_command: 2,
                train_fraction: 0.75,
                attack: BlackBoxConfig {
                    population: 30,
                    max_generations: 300,
                    elite_count: 3,
                    mutation_prob: 0.2,
                    mutation_std: 0.01,
                    selection_temperature: 0.3,
                    ..BlackBoxConfig::default()
                },
            },
            efficacy: EfficacyConfig {
                pairs: 50,
                attack: WhiteBoxConfig {
                    max_iters: 300,
                    ..WhiteBoxConfig::default()
                },
            },
            detector: EvalConfig {
                runs: 5,
                mfcc: detector_desk_mfcc(),
                arch: DetectorArch::desk(),
                train: DetectorTrainConfig::desk(),
            },
        }
    }

    /// Full-size counts and models; days of CPU time.
    pub fn full() -> Self {
        let desk = Self::desk();
        Self {
            preset: Preset::Full,
            corpus: CorpusSpec {
                clips_per_class: 800,
                utterances_per_range: 420,
                ..desk.corpus
            },
            dataset_a: DatasetAConfig {
                n_per_bucket: 100,
                attack: WhiteBoxConfig::default(),
                ..desk.dataset_a
            },
            dataset_b: DatasetBConfig {
                n_per_command: 20,
                attack: BlackBoxConfig::default(),
                ..desk.dataset_b
            },
            efficacy: EfficacyConfig {
                pairs: 50,
                attack: WhiteBoxConfig::default(),
            },
            detector: EvalConfig {
                runs: 10,
                mfcc: MfccConfig::default(),
                arch: DetectorArch::full(),
                train: DetectorTrainConfig::full(),
            },
            ..desk
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        self.corpus.validate()?;
        self.keyword_victim.mfcc.validate()?;
        self.sequence_victim.mfcc.validate()?;
        self.detector.mfcc.validate()?;
        self.dataset_a.attack.validate()?;
        self.dataset_b.attack.validate()?;
        self.efficacy.attack.validate()?;
        for f in [self.dataset_a.train_fraction, self.dataset_b.train_fraction] {
            if !(f > 0.0 && f < 1.0) {
                return fail("train fractions must be in (0, 1)");
            }
        }
        if self.detector.runs == 0 {
            return fail("detector.runs must be at least 1");
        }
        if self.efficacy.pairs == 0 {
            return fail("efficacy.pairs must be at least 1");
        }
        for p in [&self.paths.corpus, &self.paths.work, &self.paths.output] {
            if p.is_absolute() || p.as_os_str().is_empty() {
                return fail("paths must be non-empty and relative to the run directory");
            }
        }
        if let Some(c) = self.dataset_b.classes.iter().find(|c| !self.corpus.keywords.contains(c)) {
            return Err(Error::Config(format!("dataset_b class {c:?} is not a corpus keyword")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Applies a `dotted.path=value` override; the value is parsed as JSON
    /// and falls back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let value: serde_json::Value =
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = match slot {
                serde_json::Value::Object(map) => map
                    .get_mut(part)
                    .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?,
                serde_json::Value::Array(items) => part
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| Error::Config(format!("bad index in config key {key:?}")))?,
                _ => return Err(Error::Config(format!("config key {key:?} goes through a scalar"))),
            };
        }
        *slot = value;
        *self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("override {key}: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Corpus,
    Victims,
    DatasetA,
    DatasetB,
    Efficacy,
    Detector,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Corpus,
        Stage::Victims,
        Stage::DatasetA,
        Stage::DatasetB,
        Stage::Efficacy,
        Stage::Detector,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Victims => "victims",
            Stage::DatasetA => "dataset_a",
            Stage::DatasetB => "dataset_b",
            Stage::Efficacy => "efficacy",
            Stage::Detector => "detector",
            Stage::Eval => "eval",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Corpus => &[],
            Stage::Victims => &[Stage::Corpus],
            Stage::DatasetA | Stage::DatasetB => &[Stage::Corpus, Stage::Victims],
            Stage::Efficacy => &[Stage::Corpus, Stage::Victims, Stage::DatasetB],
            Stage::Detector | Stage::Eval => &[Stage::DatasetA, Stage::DatasetB],
        }
    }
}

/// Contents of `stage.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub hash: String,
    /// Relative path to SHA-256 of every file the stage wrote.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub cached: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteBoxEfficacy {
    pub attempts: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Successful records whose perturbation is not strictly below its bound.
    pub bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxEfficacy {
    pub attempts: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub max_abs_delta: f64,
    pub noise_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyReport {
    pub white_box: WhiteBoxEfficacy,
    pub black_box: BlackBoxEfficacy,
}

/// What `build.json` records about a dataset build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BuildInfo {
    attempts: usize,
    successes: usize,
    normal: usize,
    adversarial: usize,
    stratified: bool,
    achieved_train_fraction: f64,
    warnings: Vec<String>,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(v)? + "\n")
}

/// Every file under `dir` (relative, `/`-separated), sorted.
fn list_files(dir: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    if dir.is_dir() {
        walk(dir, dir, &mut out)?;
    }
    out.sort();
    Ok(out)
}

fn candidates<'a>(it: impl Iterator<Item = &'a CorpusEntry>) -> Vec<Candidate> {
    it.map(|e| Candidate {
        id: e.id.clone(),
        wav_path: e.wav_path.clone(),
        label: e.label.clone(),
        duration_s: e.duration_s,
        speech_ratio: e.speech_ratio,
    })
    .collect()
}

pub struct Pipeline {
    cfg: RunConfig,
    base: PathBuf,
    jobs: usize,
    done: BTreeMap<Stage, StageOutcome>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, base: &Path, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            base: base.to_path_buf(),
            jobs: jobs.max(1),
            done: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::Corpus => self.base.join(&self.cfg.paths.corpus),
            Stage::Eval => self.base.join(&self.cfg.paths.output),
            s => self.base.join(&self.cfg.paths.work).join(s.name()),
        }
    }

    fn section(&self, stage: Stage) -> serde_json::Value {
        let c = &self.cfg;
        match stage {
            Stage::Corpus => json!(c.corpus),
            Stage::Victims => json!([c.keyword_victim, c.sequence_victim]),
            Stage::DatasetA => json!([c.dataset_a, c.speech_filter]),
            Stage::DatasetB => json!([c.dataset_b, c.speech_filter]),
            Stage::Efficacy => json!(c.efficacy),
            Stage::Detector | Stage::Eval => json!(c.detector),
        }
    }

    pub fn stage_hash(&self, stage: Stage) -> Result<String> {
        let deps = stage
            .deps()
            .iter()
            .map(|&d| self.stage_hash(d))
            .collect::<Result<Vec<_>>>()?;
        let doc = json!({
            "stage": stage,
            "master_seed": self.cfg.master_seed,
            "config": self.section(stage),
            "deps": deps,
        });
        Ok(content_hash(&serde_json::to_vec(&doc)?))
    }

    /// `Ok(None)` when the stage must run; the string says why.
    fn cached(&self, stage: Stage, hash: &str) -> Result<std::result::Result<(), String>> {
        let dir = self.dir(stage);
        let path = dir.join(STAGE_FILE);
        if !path.is_file() {
            return Ok(Err("no previous run".into()));
        }
        let rec: StageRecord = match serde_json::from_slice(&read_file(&path)?) {
            Ok(r) => r,
            Err(e) => return Ok(Err(format!("unreadable {STAGE_FILE}: {e}"))),
        };
        if rec.hash != hash {
            return Ok(Err("configuration or inputs changed".into()));
        }
        if dir.join(FAILED_FILE).exists() {
            return Ok(Err("previous attempt failed".into()));
        }
        for (rel, digest) in &rec.outputs {
            let p = dir.join(rel);
            if !p.is_file() {
                return Ok(Err(format!("{rel} is missing")));
            }
            if content_hash(&read_file(&p)?) != *digest {
                return Ok(Err(format!("{rel} does not match its recorded digest")));
            }
        }
        Ok(Ok(()))
    }

    /// Removes what a previous run of the stage recorded, so stale files do
    /// not leak into the new digest list.
    fn clear(&self, stage: Stage) -> Result<()> {
        let dir = self.dir(stage);
        let path = dir.join(STAGE_FILE);
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(rec) = serde_json::from_slice::<StageRecord>(&bytes) {
                for rel in rec.outputs.keys() {
                    let _ = fs::remove_file(dir.join(rel));
                }
            }
            let _ = fs::remove_file(&path);
        }
        for sub in ["adv", "normal"] {
            let _ = fs::remove_dir_all(dir.join(sub));
        }
        let _ = fs::remove_file(dir.join(FAILED_FILE));
        Ok(())
    }

    /// Runs `stage` after its dependencies, skipping anything cached.
    pub fn ensure(&mut self, stage: Stage) -> Result<StageOutcome> {
        for &d in stage.deps() {
            self.ensure(d)?;
        }
        if let Some(o) = self.done.get(&stage) {
            return Ok(o.clone());
        }
        let hash = self.stage_hash(stage)?;
        let dir = self.dir(stage);
        let outcome = match self.cached(stage, &hash)? {
            Ok(()) => {
                log::info!("stage {}: up to date", stage.name());
                StageOutcome {
                    stage,
                    cached: true,
                    seconds: 0.0,
                }
            }
            Err(why) => {
                if dir.join(STAGE_FILE).exists() || dir.join(FAILED_FILE).exists() {
                    log::warn!("stage {}: re-running ({why})", stage.name());
                } else {
                    log::info!("stage {}: running", stage.name());
                }
                self.clear(stage)?;
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let t = Instant::now();
                if let Err(e) = self.execute(stage, &dir) {
                    let _ = write_file(&dir.join(FAILED_FILE), format!("{e}\n"));
                    return Err(e);
                }
                write_file(&dir.join(RUN_CONFIG_FILE), self.cfg.to_json()?)?;
                let mut outputs = BTreeMap::new();
                for rel in list_files(&dir)? {
                    if rel != STAGE_FILE {
                        outputs.insert(rel.clone(), content_hash(&read_file(&dir.join(&rel))?));
                    }
                }
                write_json(&dir.join(STAGE_FILE), &StageRecord { stage, hash, outputs })?;
                StageOutcome {
                    stage,
                    cached: false,
                    seconds: t.elapsed().as_secs_f64(),
                }
            }
        };
        self.done.insert(stage, outcome.clone());
        Ok(outcome)
    }

    /// Every stage in order. Wall-clock times go to `timings.json` in the
    /// work directory, outside every stage's digest list.
    pub fn run_all(&mut self) -> Result<Vec<StageOutcome>> {
        let outcomes = Stage::ALL
            .iter()
            .map(|&s| self.ensure(s))
            .collect::<Result<Vec<_>>>()?;
        write_json(&self.base.join(&self.cfg.paths.work).join(TIMINGS_FILE), &outcomes)?;
        Ok(outcomes)
    }

    fn execute(&self, stage: Stage, dir: &Path) -> Result<()> {
        match stage {
            Stage::Corpus => {
                synth_corpus(&self.cfg.corpus, derive(self.cfg.master_seed, &[seeds::CORPUS]), dir)?;
                Ok(())
            }
            Stage::Victims => self.train_victims(dir),
            Stage::DatasetA => self.build_a(dir),
            Stage::DatasetB => self.build_b(dir),
            Stage::Efficacy => self.efficacy(dir),
            Stage::Detector => self.train_final_detector(dir),
            Stage::Eval => self.evaluate(dir),
        }
    }

    pub fn corpus(&self) -> Result<CorpusManifest> {
        CorpusManifest::read(&self.dir(Stage::Corpus).join(CORPUS_MANIFEST))
    }

    fn victim_seed(&self, which: &str) -> u64 {
        derive(self.cfg.master_seed, &[seeds::VICTIM, which])
    }

    fn train_victims(&self, dir: &Path) -> Result<()> {
        let corpus = self.corpus()?;
        let root = self.dir(Stage::Corpus);
        let kw = || train_keyword_model(&corpus, &root, &self.cfg.keyword_victim, self.victim_seed("keyword"));
        let seq = || train_sequence_model(&corpus, &root, &self.cfg.sequence_victim, self.victim_seed("sequence"));
        let (kw, seq) = if self.jobs >= 2 {
            rayon::join(kw, seq)
        } else {
            (kw(), seq())
        };
        let (kw, kw_report) = kw?;
        let (seq, seq_report) = seq?;
        write_file(&dir.join(KEYWORD_CHECKPOINT), kw.to_checkpoint()?)?;
        write_file(&dir.join(SEQUENCE_CHECKPOINT), seq.to_checkpoint()?)?;
        write_json(&dir.join("victims.json"), &json!({"keyword": kw_report, "sequence": seq_report}))
    }

    fn checkpoint(&self, name: &str) -> Result<(Vec<u8>, String)> {
        let bytes = read_file(&self.dir(Stage::Victims).join(name))?;
        let hash = content_hash(&bytes);
        Ok((bytes, hash))
    }

    pub fn keyword_victim(&self) -> Result<KeywordModel> {
        KeywordModel::from_checkpoint(&self.checkpoint(KEYWORD_CHECKPOINT)?.0)
    }

    pub fn sequence_victim(&self) -> Result<SequenceModel> {
        SequenceModel::from_checkpoint(&self.checkpoint(SEQUENCE_CHECKPOINT)?.0)
    }

    fn context<'a>(&self, corpus_root: &'a Path, dir: &'a Path, name: &str, kind: AttackKind) -> BuildContext<'a> {
        BuildContext {
            corpus_root,
            out_dir: dir,
            seed: derive(self.cfg.master_seed, &[seeds::ATTACK, name]),
            speech_filter: self.cfg.speech_filter,
            vad_cfg: MfccConfig {
                sample_rate: self.cfg.corpus.sample_rate,
                ..MfccConfig::default()
            },
            vad: VadParams::default(),
            attack_kind: kind,
        }
    }

    /// Writes records, summary, the split manifest and build notes, then
    /// refuses a manifest that breaks any protocol invariant.
    fn finish_build(&self, dir: &Path, name: &str, build: DatasetBuild, train_fraction: f64) -> Result<()> {
        crate::dataset::write_jsonl(&dir.join(RECORDS_FILE), &build.records)?;
        let summary = summarize(&build.records);
        write_json(&dir.join("summary.json"), &summary)?;
        let split = split_train_test(
            &build.manifest,
            train_fraction,
            derive(self.cfg.master_seed, &[seeds::ATTACK, name, "split"]),
        )?;
        split.manifest.write(&dir.join(MANIFEST_FILE))?;
        let mut warnings = build.warnings;
        warnings.extend(split.warnings.iter().cloned());
        write_json(
            &dir.join("build.json"),
            &BuildInfo {
                attempts: summary.attempts,
                successes: summary.successes,
                normal: split.manifest.count(ExampleLabel::Normal),
                adversarial: split.manifest.count(ExampleLabel::Adversarial),
                stratified: split.stratified,
                achieved_train_fraction: split.achieved_fraction,
                warnings,
            },
        )?;
        let report = validate_manifest(
            &split.manifest,
            &ValidateOptions {
                speech_filter: self.cfg.speech_filter,
                root: Some(dir.to_path_buf()),
            },
        );
        write_json(&dir.join("validation.json"), &report)?;
        report.into_result()?;
        Ok(())
    }

    fn build_a(&self, dir: &Path) -> Result<()> {
        let c = &self.cfg.dataset_a;
        let corpus = self.corpus()?;
        let root = self.dir(Stage::Corpus);
        let seq = self.sequence_victim()?;
        let (_, hash) = self.checkpoint(SEQUENCE_CHECKPOINT)?;
        let ctx = self.context(&root, dir, "dataset-a", AttackKind::WhiteBox);
        let pool = candidates(corpus.utterances(Split::Test));
        let build = build_dataset_a(&ctx, &pool, &c.buckets, &c.targets, c.n_per_bucket, |plan| {
            let victim = Victim::Sequence(&seq);
            batch_attack(plan, &root, dir, AttackKind::WhiteBox, &hash, self.jobs, |x, job| {
                match attack_white_box(victim, x, &Target::Text(job.target.clone()), &c.attack) {
                    Err(Error::Infeasible { .. }) => {
                        log::warn!("{} -> {}: target infeasible for this length", job.source.id, job.target_class);
                        AttackOutcome::unattacked(victim, x)
                    }
                    other => other,
                }
            })
            .map(|(records, _)| records)
        })?;
        self.finish_build(dir, "dataset-a", build, c.train_fraction)
    }

    fn build_b(&self, dir: &Path) -> Result<()> {
        let c = &self.cfg.dataset_b;
        let corpus = self.corpus()?;
        let root = self.dir(Stage::Corpus);
        let kw = self.keyword_victim()?;
        let (_, hash) = self.checkpoint(KEYWORD_CHECKPOINT)?;
        let ctx = self.context(&root, dir, "dataset-b", AttackKind::BlackBox);
        let pool = candidates(corpus.keywords(Split::Test));
        let build = build_dataset_b(&ctx, &pool, &c.classes, c.n_per_command, |plan| {
            batch_attack(plan, &root, dir, AttackKind::BlackBox, &hash, self.jobs, |x, job| {
                let t = kw
                    .class_index(&job.target)
                    .ok_or_else(|| Error::Config(format!("victim has no class {:?}", job.target)))?;
                attack_black_box(&kw, x, t, &c.attack, job.seed)
            })
            .map(|(records, _)| records)
        })?;
        self.finish_build(dir, "dataset-b", build, c.train_fraction)
    }

    /// Random (clip, other class) pairs from the held-out keyword clips.
    fn efficacy_plan(&self, corpus: &CorpusManifest, classes: &[String]) -> Result<Vec<AttackJob>> {
        let mut pool = candidates(corpus.keywords(Split::Test));
        pool.retain(|c| classes.contains(&c.label));
        if pool.len() < self.cfg.efficacy.pairs {
            return Err(Error::InsufficientData(format!(
                "{} held-out keyword clips for {} pairs",
                pool.len(),
                self.cfg.efficacy.pairs
            )));
        }
        pool.sort_by(|a, b| a.id.cmp(&b.id));
        let seed = derive(self.cfg.master_seed, &[seeds::ATTACK, "efficacy"]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pool.shuffle(&mut rng);
        pool.truncate(self.cfg.efficacy.pairs);
        Ok(pool
            .into_iter()
            .map(|s| {
                let others: Vec<&String> = classes.iter().filter(|c| **c != s.label).collect();
                let target = others[rng.gen_range(0..others.len())].clone();
                AttackJob {
                    bucket: s.label.clone(),
                    seed: derive(seed, &[&s.id, &target]),
                    target: target.clone(),
                    target_class: target,
                    source: s,
                }
            })
            .collect())
    }

    fn efficacy(&self, dir: &Path) -> Result<()> {
        let corpus = self.corpus()?;
        let root = self.dir(Stage::Corpus);
        let kw = self.keyword_victim()?;
        let (_, hash) = self.checkpoint(KEYWORD_CHECKPOINT)?;
        let plan = self.efficacy_plan(&corpus, &kw.class_names)?;
        let (records, _) = batch_attack(&plan, &root, dir, AttackKind::WhiteBox, &hash, self.jobs, |x, job| {
            let t = kw
                .class_index(&job.target)
                .ok_or_else(|| Error::Config(format!("victim has no class {:?}", job.target)))?;
            attack_white_box(Victim::Keyword(&kw), x, &Target::Class(t), &self.cfg.efficacy.attack)
        })?;
        crate::dataset::write_jsonl(&dir.join(RECORDS_FILE), &records)?;
        let wb = summarize(&records);
        let violations = records
            .iter()
            .filter(|r| r.success && !r.tau_db.is_some_and(|t| r.final_db_relative < t))
            .count();

        let bb_records: Vec<AdversarialRecord> =
            crate::dataset::read_jsonl(&self.dir(Stage::DatasetB).join(RECORDS_FILE))?;
        let bb = summarize(&bb_records);
        let report = EfficacyReport {
            white_box: WhiteBoxEfficacy {
                attempts: wb.attempts,
                successes: wb.successes,
                success_rate: wb.success_rate,
                bound_violations: violations,
            },
            black_box: BlackBoxEfficacy {
                attempts: bb.attempts,
                successes: bb.successes,
                success_rate: bb.success_rate,
                max_abs_delta: bb_records.iter().map(|r| r.max_abs_delta).fold(0.0, f64::max),
                noise_bound: self.cfg.dataset_b.attack.noise_bound,
            },
        };
        write_json(&dir.join(EFFICACY_FILE), &report)
    }

    pub fn dataset(&self, id: DatasetId) -> Result<(DatasetManifest, PathBuf)> {
        let dir = self.dir(match id {
            DatasetId::A => Stage::DatasetA,
            DatasetId::B => Stage::DatasetB,
        });
        Ok((DatasetManifest::read(&dir.join(MANIFEST_FILE))?, dir))
    }

    pub fn prepared(&self, id: DatasetId) -> Result<PreparedDataset> {
        let (m, dir) = self.dataset(id)?;
        PreparedDataset::load(id, m, &dir, &self.cfg.detector.mfcc, self.jobs)
    }

    /// One detector on the union of both training sides, for `classify`.
    fn train_final_detector(&self, dir: &Path) -> Result<()> {
        let a = self.prepared(DatasetId::A)?;
        let b = self.prepared(DatasetId::B)?;
        let data: Vec<(&FeatureMap, ExampleLabel)> = [&a, &b]
            .iter()
            .flat_map(|d| {
                d.manifest
                    .entries
                    .iter()
                    .zip(&d.features)
                    .filter(|(e, _)| e.split == Split::Train)
                    .map(|(e, f)| (f, e.label))
            })
            .collect();
        let seed = derive(self.cfg.master_seed, &[seeds::DETECTOR]);
        let d = &self.cfg.detector;
        let model = build_detector(&d.mfcc, &d.arch, derive(seed, &["init"]))?;
        let (model, report) = train_on_features(model, &data, &d.train, seed)?;
        write_file(&dir.join(DETECTOR_CHECKPOINT), model.to_checkpoint()?)?;
        write_json(&dir.join("detector.json"), &report)
    }

    fn evaluate(&self, dir: &Path) -> Result<()> {
        let a = self.prepared(DatasetId::A)?;
        let b = self.prepared(DatasetId::B)?;
        let report = evaluate(
            &a,
            &b,
            &self.cfg.detector,
            derive(self.cfg.master_seed, &[seeds::EVAL]),
            self.jobs,
        )?;
        write_file(&dir.join(REPORT_FILE), report.to_json()?)?;
        for s in &report.scenarios {
            write_json(&dir.join(format!("scenario_{}.json", s.id)), s)?;
        }
        if let Some(bd) = report.scenario(1).and_then(|s| s.breakdown.as_ref()) {
            write_file(&dir.join("breakdown_a.csv"), bd.to_csv())?;
        }
        if let Some(bd) = report.scenario(4).and_then(|s| s.breakdown.as_ref()) {
            write_file(&dir.join("breakdown_b.csv"), bd.to_csv())?;
        }
        Ok(())
    }

    pub fn eval_report(&self) -> Result<EvalReport> {
        let p = self.dir(Stage::Eval).join(REPORT_FILE);
        EvalReport::from_json(&String::from_utf8_lossy(&read_file(&p)?))
    }

    pub fn efficacy_report(&self) -> Result<EfficacyReport> {
        let p = self.dir(Stage::Efficacy).join(EFFICACY_FILE);
        Ok(serde_json::from_slice(&read_file(&p)?)?)
    }
}

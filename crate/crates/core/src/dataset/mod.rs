//! Corpus synthesis, duration bucketing, dataset assembly, splitting and the
//! manifest validator.

mod builder;
pub mod corpus;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vad::SPEECH_RATIO_THRESHOLD;

pub use builder::{
    build_dataset_a, build_dataset_b, default_targets, AttackJob, BuildContext, Candidate, DatasetBuild,
    TargetSpec,
};
pub use split::{split_train_test, SplitOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleLabel {
    Normal,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    WhiteBox,
    BlackBox,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the directory holding the manifest.
    pub wav_path: String,
    pub label: ExampleLabel,
    /// Duration bucket (`short`/`medium`/`long`) or command class.
    pub bucket: String,
    pub target_class: Option<String>,
    pub split: Split,
    /// The clip the entry derives from; a normal entry is its own source.
    pub source_id: Option<String>,
    pub attack_kind: AttackKind,
    pub duration_s: f64,
    pub speech_ratio: f64,
    /// VAD algorithm and parameters behind `speech_ratio`.
    pub vad: String,
}

impl ManifestEntry {
    pub fn source_key(&self) -> &str {
        self.source_id.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(Self {
            entries: read_jsonl(path)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.entries)
    }

    pub fn count(&self, label: ExampleLabel) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    pub fn with_split(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
        }
    }

    pub fn source_ids(&self, split: Split) -> BTreeSet<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(ManifestEntry::source_key)
            .collect()
    }
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::Manifest(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

/// Named inclusive duration interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub name: String,
    pub lo_s: f64,
    pub hi_s: f64,
}

pub fn default_buckets() -> Vec<Bucket> {
    [("short", 1.0, 2.0), ("medium", 3.0, 4.0), ("long", 6.0, 7.0)]
        .iter()
        .map(|&(n, lo, hi)| Bucket {
            name: n.into(),
            lo_s: lo,
            hi_s: hi,
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BucketPartition {
    /// Bucket name to indices into the input, in input order.
    pub buckets: BTreeMap<String, Vec<usize>>,
    pub excluded: Vec<usize>,
}

/// Interval membership with a 1e-9 s tolerance so sample-exact boundaries
/// (`16000 / 16000 = 1.0`) land inside.
pub fn bucket_of<'a>(duration_s: f64, buckets: &'a [Bucket]) -> Option<&'a str> {
    const EPS: f64 = 1e-9;
    buckets
        .iter()
        .find(|b| duration_s >= b.lo_s - EPS && duration_s <= b.hi_s + EPS)
        .map(|b| b.name.as_str())
}

pub fn bucket_by_duration(durations: &[f64], buckets: &[Bucket]) -> BucketPartition {
    let mut out = BucketPartition::default();
    for b in buckets {
        out.buckets.insert(b.name.clone(), Vec::new());
    }
    for (i, &d) in durations.iter().enumerate() {
        match bucket_of(d, buckets) {
            Some(name) => out.buckets.get_mut(name).expect("pre-seeded").push(i),
            None => out.excluded.push(i),
        }
    }
    if !out.excluded.is_empty() {
        log::info!("{} files outside every duration bucket", out.excluded.len());
    }
    out
}

/// Outcome of the independent manifest checks; `violations` is empty iff
/// every check passed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entries: usize,
    pub normal: usize,
    pub adversarial: usize,
    pub balanced: bool,
    pub source_disjoint: bool,
    pub normal_source_exclusive: bool,
    pub speech_filter: bool,
    pub files_present: bool,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.ok() {
            Ok(self)
        } else {
            Err(Error::Manifest(self.violations.join("; ")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub speech_filter: bool,
    /// Checks that every `wav_path` resolves under this root.
    pub root: Option<PathBuf>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            speech_filter: true,
            root: None,
        }
    }
}

/// Re-derives every protocol invariant from the entries alone.
pub fn validate_manifest(m: &DatasetManifest, opts: &ValidateOptions) -> ValidationReport {
    let mut r = ValidationReport {
        entries: m.entries.len(),
        normal: m.count(ExampleLabel::Normal),
        adversarial: m.count(ExampleLabel::Adversarial),
        ..Default::default()
    };

    let mut ids = BTreeSet::new();
    for e in &m.entries {
        if !ids.insert(&e.id) {
            r.violations.push(format!("duplicate entry id {}", e.id));
        }
    }

    r.balanced = r.normal == r.adversarial;
    if !r.balanced {
        r.violations.push(format!(
            "unbalanced: {} normal vs {} adversarial",
            r.normal, r.adversarial
        ));
    }
    for split in [Split::Train, Split::Test] {
        let side = m.with_split(split);
        let (n, a) = (side.count(ExampleLabel::Normal), side.count(ExampleLabel::Adversarial));
        if n != a {
            r.balanced = false;
            r.violations.push(format!("{split:?} side unbalanced: {n} normal vs {a} adversarial"));
        }
    }

    let train = m.source_ids(Split::Train);
    let test = m.source_ids(Split::Test);
    let shared: Vec<&&str> = train.intersection(&test).collect();
    r.source_disjoint = shared.is_empty();
    if !r.source_disjoint {
        r.violations.push(format!("sources on both sides of the split: {shared:?}"));
    }

    let attacked: BTreeSet<&str> = m
        .entries
        .iter()
        .filter(|e| e.label == ExampleLabel::Adversarial)
        .filter_map(|e| e.source_id.as_deref())
        .collect();
    let reused: Vec<&str> = m
        .entries
        .iter()
        .filter(|e| e.label == ExampleLabel::Normal)
        .map(ManifestEntry::source_key)
        .filter(|s| attacked.contains(s))
        .collect();
    r.normal_source_exclusive = reused.is_empty();
    if !r.normal_source_exclusive {
        r.violations.push(format!("attack sources also used as normals: {reused:?}"));
    }
    for e in &m.entries {
        if e.label == ExampleLabel::Adversarial && e.source_id.is_none() {
            r.normal_source_exclusive = false;
            r.violations.push(format!("adversarial entry {} has no source", e.id));
        }
    }

    r.speech_filter = true;
    if opts.speech_filter {
        let failing: Vec<&str> = m
            .entries
            .iter()
            .filter(|e| !(e.speech_ratio > SPEECH_RATIO_THRESHOLD))
            .map(|e| e.id.as_str())
            .collect();
        if !failing.is_empty() {
            r.speech_filter = false;
            r.violations.push(format!(
                "entries at or below the {SPEECH_RATIO_THRESHOLD} speech ratio: {failing:?}"
            ));
        }
    }

    r.files_present = true;
    if let Some(root) = &opts.root {
        let missing: Vec<&str> = m
            .entries
            .iter()
            .filter(|e| !root.join(&e.wav_path).is_file())
            .map(|e| e.id.as_str())
            .collect();
        if !missing.is_empty() {
            r.files_present = false;
            r.violations.push(format!("missing wav files for {missing:?}"));
        }
    }
    r
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn entry(id: &str, label: ExampleLabel, source: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            wav_path: format!("{id}.wav"),
            label,
            bucket: "short".into(),
            target_class: None,
            split,
            source_id: Some(source.into()),
            attack_kind: AttackKind::None,
            duration_s: 1.5,
            speech_ratio: 0.8,
            vad: "test".into(),
        }
    }

    #[test]
    fn bucket_boundaries() {
        let b = default_buckets();
        let cases = [
            (0.999, None),
            (1.0, Some("short")),
            (1.5, Some("short")),
            (2.0, Some("short")),
            (2.001, None),
            (2.999, None),
            (3.0, Some("medium")),
            (5.0, None),
            (6.0, Some("long")),
            (7.0, Some("long")),
            (7.001, None),
        ];
        for (d, want) in cases {
            assert_eq!(bucket_of(d, &b), want, "{d}");
        }
        let p = bucket_by_duration(&[1.5, 5.0, 6.0], &b);
        assert_eq!(p.buckets["short"], vec![0]);
        assert_eq!(p.buckets["long"], vec![2]);
        assert_eq!(p.excluded, vec![1]);
        assert!(p.buckets["medium"].is_empty());
    }

    #[test]
    fn validator_accepts_clean_manifest() {
        use ExampleLabel::*;
        let m = DatasetManifest {
            entries: vec![
                entry("a1", Adversarial, "s1", Split::Train),
                entry("n1", Normal, "n1", Split::Train),
                entry("a2", Adversarial, "s2", Split::Test),
                entry("n2", Normal, "n2", Split::Test),
            ],
        };
        let r = validate_manifest(&m, &ValidateOptions::default());
        assert!(r.ok(), "{:?}", r.violations);
    }

    #[test]
    fn validator_reports_each_violation() {
        use ExampleLabel::*;
        let mut m = DatasetManifest {
            entries: vec![
                entry("a1", Adversarial, "s1", Split::Train),
                entry("a2", Adversarial, "s1", Split::Test),
                entry("n1", Normal, "s1", Split::Train),
            ],
        };
        m.entries[2].speech_ratio = 0.68;
        let r = validate_manifest(&m, &ValidateOptions::default());
        assert!(!r.balanced);
        assert!(!r.source_disjoint);
        assert!(!r.normal_source_exclusive);
        assert!(!r.speech_filter);
        assert!(r.into_result().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let m = DatasetManifest {
            entries: vec![entry("a", ExampleLabel::Normal, "a", Split::Test)],
        };
        m.write(&p).unwrap();
        assert_eq!(DatasetManifest::read(&p).unwrap(), m);
        fs::write(&p, "{not json}\n").unwrap();
        assert!(matches!(DatasetManifest::read(&p), Err(Error::Manifest(_))));
    }
}

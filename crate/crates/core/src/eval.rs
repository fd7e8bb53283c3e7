//! Detector evaluation protocol.
//!
//! Six train/test scenarios over the two datasets, per-cell accuracy
//! breakdowns, hold-one-target-out runs and normal-approximation confidence
//! intervals. Runs differ only in the detector seed; the split is fixed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{validate_manifest, DatasetManifest, ExampleLabel, ManifestEntry, Split, ValidateOptions};
use crate::detector::{
    build_detector, classify_features, extract_features, train_on_features, DetectorArch,
    DetectorTrainConfig,
};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, MfccConfig};
use crate::par;
use crate::seeds::derive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetId {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: usize,
    pub train_sets: Vec<DatasetId>,
    pub test_set: DatasetId,
}

/// (A,A), (A,B), (B,A), (B,B), (AB,A), (AB,B).
pub fn scenario_table() -> Vec<ScenarioSpec> {
    use DatasetId::*;
    [
        (vec![A], A),
        (vec![A], B),
        (vec![B], A),
        (vec![B], B),
        (vec![A, B], A),
        (vec![A, B], B),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (train_sets, test_set))| ScenarioSpec {
        id: i + 1,
        train_sets,
        test_set,
    })
    .collect()
}

/// Mean and `1.96 * s / sqrt(n)` with the sample standard deviation.
pub fn ci95(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Domain(format!(
            "a confidence interval needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// Fraction of positions where the prediction equals the truth.
pub fn accuracy(truth: &[ExampleLabel], predicted: &[ExampleLabel]) -> Result<f64> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(Error::Domain(format!(
            "accuracy over {} labels and {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Errors with the shared source ids if any source feeds both sides.
pub fn check_leakage<'a>(
    train: impl IntoIterator<Item = &'a ManifestEntry>,
    test: impl IntoIterator<Item = &'a ManifestEntry>,
) -> Result<()> {
    let train: BTreeSet<&str> = train.into_iter().map(ManifestEntry::source_key).collect();
    let shared: Vec<&str> = test
        .into_iter()
        .map(ManifestEntry::source_key)
        .filter(|s| train.contains(s))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::Leakage(format!(
            "{} source(s) appear in both training and test data: {shared:?}",
            shared.len()
        )))
    }
}

/// A split manifest with the detector features of every entry.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub id: DatasetId,
    pub manifest: DatasetManifest,
    pub features: Vec<FeatureMap>,
}

impl PreparedDataset {
    pub fn load(id: DatasetId, manifest: DatasetManifest, root: &Path, mfcc: &MfccConfig, jobs: usize) -> Result<Self> {
        let report = validate_manifest(
            &manifest,
            &ValidateOptions {
                speech_filter: true,
                root: Some(root.to_path_buf()),
            },
        );
        if !report.ok() {
            return Err(Error::Manifest(format!(
                "dataset {id:?} fails validation: {}",
                report.violations.join("; ")
            )));
        }
        let features = extract_features(&manifest, root, mfcc, jobs)?;
        Ok(Self { id, manifest, features })
    }

    fn side(&self, split: Split) -> Vec<usize> {
        (0..self.manifest.entries.len())
            .filter(|&i| self.manifest.entries[i].split == split)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub runs: usize,
    pub mfcc: MfccConfig,
    pub arch: DetectorArch,
    pub train: DetectorTrainConfig,
}

/// One labelled selection of entries across datasets.
#[derive(Clone)]
struct Selection<'a> {
    entries: Vec<(&'a PreparedDataset, usize)>,
}

impl<'a> Selection<'a> {
    fn entry(&self, k: usize) -> &'a ManifestEntry {
        let (d, i) = self.entries[k];
        &d.manifest.entries[i]
    }

    fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            entries: (0..self.entries.len()).map(|k| self.entry(k).clone()).collect(),
        }
    }

    fn labels(&self) -> Vec<ExampleLabel> {
        (0..self.entries.len()).map(|k| self.entry(k).label).collect()
    }
}

/// Trains one detector on `train` and returns its train accuracy and its
/// predictions on every test selection.
fn train_and_predict(
    train: &Selection<'_>,
    tests: &[&Selection<'_>],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(f64, Vec<Vec<ExampleLabel>>)> {
    let report = validate_manifest(
        &train.manifest(),
        &ValidateOptions {
            speech_filter: true,
            root: None,
        },
    );
    if !report.ok() {
        return Err(Error::Manifest(format!(
            "refusing to train on an invalid selection: {}",
            report.violations.join("; ")
        )));
    }
    for t in tests {
        check_leakage(
            (0..train.entries.len()).map(|k| train.entry(k)),
            (0..t.entries.len()).map(|k| t.entry(k)),
        )?;
    }
    let data: Vec<(&FeatureMap, ExampleLabel)> = train
        .entries
        .iter()
        .map(|&(d, i)| (&d.features[i], d.manifest.entries[i].label))
        .collect();
    let model = build_detector(&cfg.mfcc, &cfg.arch, derive(seed, &["init"]))?;
    let (model, rep) = train_on_features(model, &data, &cfg.train, seed)?;
    let preds = tests
        .iter()
        .map(|t| {
            t.entries
                .iter()
                .map(|&(d, i)| Ok(classify_features(&model, &d.features[i])?.label))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rep.train_accuracy, preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownCell {
    pub row: String,
    pub col: String,
    /// Adversarial entries of the cell plus as many paired normals.
    pub entries: usize,
    pub accuracy: f64,
}

/// Row x column accuracy matrix; cells without adversarial entries are
/// absent rather than zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<BreakdownCell>,
}

impl Breakdown {
    pub fn get(&self, row: &str, col: &str) -> Option<&BreakdownCell> {
        self.cells.iter().find(|c| c.row == row && c.col == col)
    }

    /// Matrix layout: header of columns, one line per row, absent cells
    /// left empty. Accuracies in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source");
        for c in &self.cols {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(r);
            for c in &self.cols {
                match self.get(r, c) {
                    Some(cell) => {
                        let _ = write!(out, ",{:.2}", 100.0 * cell.accuracy);
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Cell accuracies pooled over runs. `correct[k]` counts the runs that got
/// entry `k` of `test` right.
///
/// Each bucket's normals (sorted by id) are dealt to its cells in column
/// order, as many as the cell has adversarial entries.
pub fn breakdown(
    test: &DatasetManifest,
    correct: &[usize],
    runs: usize,
    rows: &[String],
    cols: &[String],
) -> Result<Breakdown> {
    if correct.len() != test.entries.len() || runs == 0 {
        return Err(Error::Domain("breakdown needs one count per entry and runs >= 1".into()));
    }
    let mut adv: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    let mut normals: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (k, e) in test.entries.iter().enumerate() {
        match (e.label, &e.target_class) {
            (ExampleLabel::Adversarial, Some(t)) => adv.entry((e.bucket.as_str(), t.as_str())).or_default().push(k),
            (ExampleLabel::Adversarial, None) => {
                return Err(Error::Manifest(format!("adversarial entry {} has no target class", e.id)))
            }
            (ExampleLabel::Normal, _) => normals.entry(e.bucket.as_str()).or_default().push(k),
        }
    }
    for v in normals.values_mut() {
        v.sort_by(|&a, &b| test.entries[a].id.cmp(&test.entries[b].id));
    }
    if let Some((r, c)) = adv
        .keys()
        .find(|(r, c)| !rows.iter().any(|x| x == r) || !cols.iter().any(|x| x == c))
    {
        return Err(Error::Domain(format!("cell ({r}, {c}) outside the declared rows and columns")));
    }
    let mut cells = Vec::new();
    for r in rows {
        let pool = normals.get(r.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let mut next = 0;
        for c in cols {
            let Some(a) = adv.get(&(r.as_str(), c.as_str())) else {
                continue;
            };
            let paired = &pool[next.min(pool.len())..(next + a.len()).min(pool.len())];
            next += a.len();
            let members: Vec<usize> = a.iter().chain(paired).copied().collect();
            let hits: usize = members.iter().map(|&k| correct[k]).sum();
            cells.push(BreakdownCell {
                row: r.clone(),
                col: c.clone(),
                entries: members.len(),
                accuracy: hits as f64 / (members.len() * runs) as f64,
            });
        }
    }
    Ok(Breakdown {
        rows: rows.to_vec(),
        cols: cols.to_vec(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub id: usize,
    pub train_sets: Vec<DatasetId>,
    pub test_set: DatasetId,
    pub runs: usize,
    pub train_entries: usize,
    pub test_entries: usize,
    pub accuracies: Vec<f64>,
    pub train_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Absent for a single run.
    pub ci95_halfwidth: Option<f64>,
    pub breakdown: Option<Breakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownTargetReport {
    pub held_out: String,
    pub trained_on: Vec<String>,
    pub runs: usize,
    pub train_entries: usize,
    pub test_entries: usize,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub ci95_halfwidth: Option<f64>,
}

fn summarize(accuracies: &[f64]) -> (f64, Option<f64>) {
    match ci95(accuracies) {
        Ok((m, h)) => (m, Some(h)),
        Err(_) => (accuracies.iter().sum::<f64>() / accuracies.len().max(1) as f64, None),
    }
}

/// Row/column labels of a dataset's breakdown: buckets x target classes
/// in first-appearance order of the sorted entries.
fn axes(m: &DatasetManifest) -> (Vec<String>, Vec<String>) {
    let rows: BTreeSet<&str> = m.entries.iter().map(|e| e.bucket.as_str()).collect();
    let cols: BTreeSet<&str> = m.entries.iter().filter_map(|e| e.target_class.as_deref()).collect();
    let order = |set: BTreeSet<&str>| -> Vec<String> {
        // duration buckets read best short to long
        let known = ["short", "medium", "long"];
        let mut v: Vec<String> = known.iter().filter(|k| set.contains(*k)).map(|s| s.to_string()).collect();
        v.extend(set.iter().filter(|s| !known.contains(s)).map(|s| s.to_string()));
        v
    };
    (order(rows), order(cols))
}

/// Runs the given scenarios. Detectors are shared: every distinct training
/// set is trained once per run (seed `base_seed + run`) and evaluated on
/// every test set that needs it.
pub fn run_scenarios(
    specs: &[ScenarioSpec],
    a: &PreparedDataset,
    b: &PreparedDataset,
    cfg: &EvalConfig,
    base_seed: u64,
    jobs: usize,
) -> Result<Vec<ScenarioReport>> {
    if cfg.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let data = |id: DatasetId| if id == DatasetId::A { a } else { b };
    let select = |sets: &[DatasetId], split: Split| Selection {
        entries: sets
            .iter()
            .flat_map(|&id| {
                let d = data(id);
                d.side(split).into_iter().map(move |i| (d, i))
            })
            .collect(),
    };
    let tests: BTreeMap<DatasetId, Selection> = [DatasetId::A, DatasetId::B]
        .into_iter()
        .map(|id| (id, select(&[id], Split::Test)))
        .collect();
    for (id, t) in &tests {
        if t.entries.is_empty() {
            return Err(Error::InsufficientData(format!("dataset {id:?} has no test entries")));
        }
    }

    let mut train_sets: Vec<Vec<DatasetId>> = Vec::new();
    for s in specs {
        if !train_sets.contains(&s.train_sets) {
            train_sets.push(s.train_sets.clone());
        }
    }
    let trains: Vec<Selection> = train_sets.iter().map(|t| select(t, Split::Train)).collect();
    let test_ids: Vec<Vec<DatasetId>> = train_sets
        .iter()
        .map(|t| {
            let ids: BTreeSet<DatasetId> =
                specs.iter().filter(|s| &s.train_sets == t).map(|s| s.test_set).collect();
            ids.into_iter().collect()
        })
        .collect();

    // leakage is proved for every pairing before any training starts
    for (train, ids) in trains.iter().zip(&test_ids) {
        for id in ids {
            let t = &tests[id];
            check_leakage(
                (0..train.entries.len()).map(|k| train.entry(k)),
                (0..t.entries.len()).map(|k| t.entry(k)),
            )?;
        }
    }

    let work: Vec<(usize, usize)> = (0..trains.len())
        .flat_map(|t| (0..cfg.runs).map(move |r| (t, r)))
        .collect();
    let results = par::map_ordered(&work, jobs, |&(t, r)| {
        let sel: Vec<&Selection> = test_ids[t].iter().map(|id| &tests[id]).collect();
        log::info!("detector on {:?}, run {}", train_sets[t], r + 1);
        train_and_predict(&trains[t], &sel, cfg, base_seed.wrapping_add(r as u64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::new();
    for s in specs {
        let t = train_sets.iter().position(|x| x == &s.train_sets).expect("collected above");
        let slot = test_ids[t].iter().position(|&x| x == s.test_set).expect("collected above");
        let test = &tests[&s.test_set];
        let truth = test.labels();
        let mut accuracies = Vec::new();
        let mut train_accuracies = Vec::new();
        let mut correct = vec![0usize; truth.len()];
        for r in 0..cfg.runs {
            let (train_acc, preds) = &results[t * cfg.runs + r];
            let p = &preds[slot];
            accuracies.push(accuracy(&truth, p)?);
            train_accuracies.push(*train_acc);
            for (k, (x, y)) in truth.iter().zip(p).enumerate() {
                correct[k] += (x == y) as usize;
            }
        }
        let test_manifest = test.manifest();
        let (rows, cols) = axes(&data(s.test_set).manifest);
        let (mean_accuracy, ci95_halfwidth) = summarize(&accuracies);
        reports.push(ScenarioReport {
            id: s.id,
            train_sets: s.train_sets.clone(),
            test_set: s.test_set,
            runs: cfg.runs,
            train_entries: trains[t].entries.len(),
            test_entries: truth.len(),
            accuracies,
            train_accuracies,
            mean_accuracy,
            ci95_halfwidth,
            breakdown: Some(breakdown(&test_manifest, &correct, cfg.runs, &rows, &cols)?),
        });
    }
    Ok(reports)
}

/// One scenario on its own (detectors are not shared with other scenarios).
pub fn run_scenario(
    spec: &ScenarioSpec,
    a: &PreparedDataset,
    b: &PreparedDataset,
    cfg: &EvalConfig,
    base_seed: u64,
    jobs: usize,
) -> Result<ScenarioReport> {
    Ok(run_scenarios(std::slice::from_ref(spec), a, b, cfg, base_seed, jobs)?.remove(0))
}

/// Per bucket, picks as many normals of `split` as there are selected
/// adversarial entries in that bucket.
fn matched_normals(a: &PreparedDataset, adversarial: &[usize], split: Split, seed: u64) -> Result<Vec<usize>> {
    let mut need: BTreeMap<&str, usize> = BTreeMap::new();
    for &i in adversarial {
        *need.entry(a.manifest.entries[i].bucket.as_str()).or_default() += 1;
    }
    let mut out = Vec::new();
    for (bucket, n) in need {
        let mut pool: Vec<usize> = a
            .side(split)
            .into_iter()
            .filter(|&i| {
                let e = &a.manifest.entries[i];
                e.label == ExampleLabel::Normal && e.bucket == bucket
            })
            .collect();
        if pool.len() < n {
            return Err(Error::InsufficientData(format!(
                "bucket {bucket}: {n} adversarial entries but {} {split:?} normals",
                pool.len()
            )));
        }
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, &["matched", bucket])));
        out.extend_from_slice(&pool[..n]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Trains on the adversarial entries of every target class except
/// `held_out` (plus matched normals) and tests on the held-out class.
pub fn unknown_target_experiment(
    a: &PreparedDataset,
    held_out: &str,
    cfg: &EvalConfig,
    base_seed: u64,
    jobs: usize,
) -> Result<UnknownTargetReport> {
    if cfg.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let adv = |split: Split, keep: &dyn Fn(&str) -> bool| -> Vec<usize> {
        a.side(split)
            .into_iter()
            .filter(|&i| {
                let e = &a.manifest.entries[i];
                e.label == ExampleLabel::Adversarial && e.target_class.as_deref().is_some_and(keep)
            })
            .collect()
    };
    let classes: BTreeSet<&str> = a.manifest.entries.iter().filter_map(|e| e.target_class.as_deref()).collect();
    if !classes.contains(held_out) {
        return Err(Error::Domain(format!("target class {held_out:?} not in the dataset")));
    }
    let train_adv = adv(Split::Train, &|t| t != held_out);
    let test_adv = adv(Split::Test, &|t| t == held_out);
    if train_adv.is_empty() || test_adv.is_empty() {
        return Err(Error::InsufficientData(format!(
            "holding out {held_out:?} leaves {} train and {} test adversarial entries",
            train_adv.len(),
            test_adv.len()
        )));
    }
    let seed = derive(base_seed, &["unknown", held_out]);
    let pick = |adv: Vec<usize>, split: Split| -> Result<Selection> {
        let mut idx = matched_normals(a, &adv, split, seed)?;
        idx.extend(adv);
        idx.sort_unstable();
        Ok(Selection {
            entries: idx.into_iter().map(|i| (a, i)).collect(),
        })
    };
    let train = pick(train_adv, Split::Train)?;
    let test = pick(test_adv, Split::Test)?;
    check_leakage(
        (0..train.entries.len()).map(|k| train.entry(k)),
        (0..test.entries.len()).map(|k| test.entry(k)),
    )?;
    let truth = test.labels();
    let runs: Vec<usize> = (0..cfg.runs).collect();
    let accuracies = par::map_ordered(&runs, jobs, |&r| {
        log::info!("unknown target {held_out}, run {}", r + 1);
        let (_, preds) = train_and_predict(&train, &[&test], cfg, base_seed.wrapping_add(r as u64))?;
        accuracy(&truth, &preds[0])
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (mean_accuracy, ci95_halfwidth) = summarize(&accuracies);
    Ok(UnknownTargetReport {
        held_out: held_out.to_string(),
        trained_on: classes.iter().filter(|c| **c != held_out).map(|s| s.to_string()).collect(),
        runs: cfg.runs,
        train_entries: train.entries.len(),
        test_entries: truth.len(),
        accuracies,
        mean_accuracy,
        ci95_halfwidth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: usize,
    pub scenarios: Vec<ScenarioReport>,
    pub unknown_target: Vec<UnknownTargetReport>,
}

impl EvalReport {
    /// Structural checks: run counts, accuracy ranges and interval widths.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Format(format!("eval report: {m}")));
        let table = scenario_table();
        for s in &self.scenarios {
            match table.iter().find(|t| t.id == s.id) {
                Some(t) if t.train_sets == s.train_sets && t.test_set == s.test_set => {}
                _ => return fail(format!("scenario {} does not match the scenario table", s.id)),
            }
        }
        let check = |what: &str, runs: usize, acc: &[f64], mean: f64, hw: Option<f64>| -> Result<()> {
            if runs != self.runs || acc.len() != runs {
                return fail(format!("{what}: {} accuracies for {runs} runs", acc.len()));
            }
            if acc.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return fail(format!("{what}: accuracy outside [0, 1]"));
            }
            let (m, h) = summarize(acc);
            if (m - mean).abs() > 1e-12 {
                return fail(format!("{what}: mean {mean} disagrees with its accuracies"));
            }
            match (h, hw) {
                (None, None) => Ok(()),
                (Some(h), Some(hw)) if (h - hw).abs() <= 1e-12 => Ok(()),
                _ => fail(format!("{what}: confidence half-width disagrees with its accuracies")),
            }
        };
        for s in &self.scenarios {
            check(&format!("scenario {}", s.id), s.runs, &s.accuracies, s.mean_accuracy, s.ci95_halfwidth)?;
            if let Some(b) = &s.breakdown {
                if b.cells.iter().any(|c| !(0.0..=1.0).contains(&c.accuracy) || c.entries == 0) {
                    return fail(format!("scenario {}: bad breakdown cell", s.id));
                }
            }
        }
        for u in &self.unknown_target {
            check(&format!("held-out {}", u.held_out), u.runs, &u.accuracies, u.mean_accuracy, u.ci95_halfwidth)?;
        }
        Ok(())
    }

    pub fn scenario(&self, id: usize) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }
}

/// All six scenarios plus the hold-one-target-out runs on dataset A.
pub fn evaluate(
    a: &PreparedDataset,
    b: &PreparedDataset,
    cfg: &EvalConfig,
    base_seed: u64,
    jobs: usize,
) -> Result<EvalReport> {
    let scenarios = run_scenarios(&scenario_table(), a, b, cfg, base_seed, jobs)?;
    let (_, targets) = axes(&a.manifest);
    let unknown_target = targets
        .iter()
        .map(|t| unknown_target_experiment(a, t, cfg, base_seed, jobs))
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport {
        runs: cfg.runs,
        scenarios,
        unknown_target,
    };
    report.validate()?;
    Ok(report)
}

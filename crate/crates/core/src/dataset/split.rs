//! Source-granular train/test split.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, ExampleLabel, Split};
use crate::error::{Error, Result};
use crate::seeds::derive;

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub manifest: DatasetManifest,
    /// Whether the adversarial side was split per bucket.
    pub stratified: bool,
    /// Fraction of all entries on the train side.
    pub achieved_fraction: f64,
    pub warnings: Vec<String>,
}

/// Assigns every entry a side.
///
/// Adversarial entries move together with their source. Source groups are
/// split per bucket when every bucket can be split near `train_fraction`;
/// otherwise they are split globally with a warning. Normals of each bucket
/// are then matched to the number of adversarial train entries of that
/// bucket, which keeps both sides balanced.
pub fn split_train_test(m: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<SplitOutcome> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut warnings = Vec::new();

    // source -> (bucket, entry indices)
    let mut groups: BTreeMap<&str, (&str, Vec<usize>)> = BTreeMap::new();
    let mut normals: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in m.entries.iter().enumerate() {
        match e.label {
            ExampleLabel::Adversarial => {
                groups
                    .entry(e.source_key())
                    .or_insert_with(|| (e.bucket.as_str(), Vec::new()))
                    .1
                    .push(i)
            }
            ExampleLabel::Normal => normals.entry(e.bucket.as_str()).or_default().push(i),
        }
    }
    let adv_total: usize = groups.values().map(|g| g.1.len()).sum();

    let mut by_bucket: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (src, (bucket, _)) in &groups {
        by_bucket.entry(bucket).or_default().push(src);
    }
    let take = |n: usize, frac: f64| (frac * n as f64).round() as usize;
    let mut train_sources: Vec<&str> = Vec::new();
    let mut stratified = true;
    for (bucket, srcs) in &by_bucket {
        let k = take(srcs.len(), train_fraction);
        if srcs.len() < 2 || k == 0 || k == srcs.len() {
            stratified = false;
            warnings.push(format!(
                "bucket {bucket} has {} attack sources; too few to stratify",
                srcs.len()
            ));
            break;
        }
        let mut s = srcs.clone();
        s.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, &["split", bucket])));
        train_sources.extend_from_slice(&s[..k]);
    }
    if stratified && adv_total > 0 {
        let adv_train: usize = train_sources.iter().map(|s| groups[s].1.len()).sum();
        let frac = adv_train as f64 / adv_total as f64;
        if (frac - train_fraction).abs() > 0.02 {
            stratified = false;
            warnings.push(format!(
                "stratified split reaches {frac:.3} instead of {train_fraction}"
            ));
        }
    }
    if !stratified {
        warnings.push("falling back to a split over all attack sources".into());
        let mut s: Vec<&str> = groups.keys().copied().collect();
        s.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, &["split", "global"])));
        let k = take(s.len(), train_fraction);
        train_sources = s[..k].to_vec();
    }

    let mut out = m.clone();
    for e in &mut out.entries {
        e.split = Split::Test;
    }
    let mut adv_train_per_bucket: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &train_sources {
        let (bucket, idx) = &groups[s];
        *adv_train_per_bucket.entry(bucket).or_default() += idx.len();
        for &i in idx {
            out.entries[i].split = Split::Train;
        }
    }
    for (bucket, idx) in &normals {
        let want = adv_train_per_bucket.get(bucket).copied().unwrap_or(0);
        let mut idx = idx.clone();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, &["split-normal", bucket])));
        if want > idx.len() {
            warnings.push(format!(
                "bucket {bucket}: {want} adversarial train entries but only {} normals",
                idx.len()
            ));
        }
        for &i in idx.iter().take(want) {
            out.entries[i].split = Split::Train;
        }
    }

    let train = out.entries.iter().filter(|e| e.split == Split::Train).count();
    let achieved = if out.entries.is_empty() {
        0.0
    } else {
        train as f64 / out.entries.len() as f64
    };
    if (achieved - train_fraction).abs() > 0.02 {
        warnings.push(format!(
            "achieved train fraction {achieved:.3} differs from {train_fraction} by more than 0.02"
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SplitOutcome {
        manifest: out,
        stratified,
        achieved_fraction: achieved,
        warnings,
    })
}

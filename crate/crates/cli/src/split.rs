//! Deterministic scan-level dataset splitting. Frames of one scan always
//! land in the same part, so splits are disjoint by scan id.

use std::collections::HashMap;

use gazelearn_core::data::manifest::DatasetManifest;
use gazelearn_core::rng::{derive_stream, RngStream};
use gazelearn_core::{Error, Result};

const TAG_SPLIT: u64 = 0x7370;

/// Split a dataset into one part per weight, apportioning whole scans by
/// largest remainder after a seed-keyed shuffle. Every part must end up
/// with at least one scan or the split is degenerate.
pub fn split_by_scan(
    ds: &DatasetManifest,
    weights: &[usize],
    seed: u64,
) -> Result<Vec<DatasetManifest>> {
    if weights.is_empty() || weights.iter().any(|&w| w == 0) {
        return Err(Error::invalid("split weights must be positive"));
    }
    let mut scans: Vec<&str> = Vec::new();
    for rec in &ds.records {
        if scans.last() != Some(&rec.scan.as_str()) && !scans.contains(&rec.scan.as_str()) {
            scans.push(&rec.scan);
        }
    }
    if scans.len() < weights.len() {
        return Err(Error::invalid(format!(
            "degenerate split: {} scans cannot fill {} parts",
            scans.len(),
            weights.len()
        )));
    }
    let mut stream = RngStream::new(seed, derive_stream(seed, &[TAG_SPLIT]));
    stream.shuffle(&mut scans);

    // Largest-remainder apportionment of the scan count.
    let total: usize = weights.iter().sum();
    let n = scans.len();
    let mut counts: Vec<usize> = weights.iter().map(|&w| n * w / total).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(n * weights[i] % total));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "degenerate split: weights {weights:?} leave a part with no scans ({n} scans total)"
        )));
    }

    let mut part_of: HashMap<&str, usize> = HashMap::new();
    let mut cursor = 0;
    for (part, &count) in counts.iter().enumerate() {
        for &scan in &scans[cursor..cursor + count] {
            part_of.insert(scan, part);
        }
        cursor += count;
    }

    let mut parts: Vec<DatasetManifest> = counts
        .iter()
        .map(|_| DatasetManifest {
            root: ds.root.clone(),
            records: Vec::new(),
            classes: ds.classes.clone(),
        })
        .collect();
    for rec in &ds.records {
        parts[part_of[rec.scan.as_str()]].records.push(rec.clone());
    }
    Ok(parts)
}

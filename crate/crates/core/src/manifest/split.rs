use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, ManifestError, Split};

fn quartile_edges(values: &[f64]) -> [f64; 3] {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[rank - 1]
    };
    [at(0.25), at(0.5), at(0.75)]
}

fn bucket(edges: &[f64; 3], v: f64) -> usize {
    edges.iter().filter(|&&e| e < v).count()
}

fn largest_remainder(sizes: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let mut quotas: Vec<(usize, f64)> = sizes
        .iter()
        .map(|&n| {
            let exact = n as f64 * fraction;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for &idx in order.iter().take(total.saturating_sub(assigned)) {
        quotas[idx].0 += 1;
    }
    quotas.into_iter().map(|q| q.0).collect()
}

/// Stratified train/test assignment over retained videos.
///
/// Videos are bucketed by duration quartile; each bucket receives its
/// largest-remainder share of the `round(n * test_fraction)` test seats.
/// Inside a bucket, members are ordered by (event-count quartile, event
/// count, random key) and seats are taken by systematic sampling with a
/// random offset, which spreads them evenly over the event-count strata.
/// Rejected videos stay unassigned.
pub fn assign_splits(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest, ManifestError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(ManifestError::Split(format!("test_fraction {test_fraction} not in (0, 1)")));
    }
    let eligible: Vec<usize> = (0..manifest.records.len())
        .filter(|&i| manifest.records[i].is_retained())
        .collect();
    let n = eligible.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n < 2 || n_test == 0 || n_test == n {
        return Err(ManifestError::Split(format!(
            "cannot split {n} videos at test fraction {test_fraction}"
        )));
    }

    let durations: Vec<f64> = eligible.iter().map(|&i| manifest.records[i].duration_s).collect();
    let counts: Vec<f64> = eligible
        .iter()
        .map(|&i| manifest.records[i].omni_events.len() as f64)
        .collect();
    let (d_edges, c_edges) = (quartile_edges(&durations), quartile_edges(&counts));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: BTreeMap<usize, Vec<(usize, u64, usize)>> = BTreeMap::new();
    for k in 0..eligible.len() {
        strata
            .entry(bucket(&d_edges, durations[k]))
            .or_default()
            .push((bucket(&c_edges, counts[k]), rng.gen(), k));
    }
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let quotas = largest_remainder(&sizes, test_fraction, n_test);

    let mut out = manifest.clone();
    for (members, quota) in strata.values_mut().zip(quotas) {
        members.sort_by(|a, b| a.0.cmp(&b.0).then(counts[a.2].total_cmp(&counts[b.2])).then(a.1.cmp(&b.1)));
        let offset: f64 = rng.gen();
        let step = members.len() as f64 / quota.max(1) as f64;
        let picks: std::collections::BTreeSet<usize> =
            (0..quota).map(|j| (((j as f64 + offset) * step) as usize).min(members.len() - 1)).collect();
        for (pos, &(_, _, k)) in members.iter().enumerate() {
            out.records[eligible[k]].split = if picks.contains(&pos) { Split::Test } else { Split::Train };
        }
    }
    for r in out.records.iter_mut().filter(|r| !r.is_retained()) {
        r.split = Split::Unassigned;
    }
    Ok(out)
}

//! Dataset filtering and closed-set / open-set splits. Whole tracks are
//! always kept together.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::DatasetRecord;

pub const MIN_IMAGES_PER_TRACK: usize = 4;
pub const MIN_TRACKS_PER_ID: usize = 2;
pub const CLOSED_TRAIN_FRAC: f64 = 0.7;
pub const OPEN_ID_FRAC: f64 = 0.6;
pub const OPEN_REF_FRAC: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Closed,
    Open,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(SplitMode::Closed),
            "open" => Ok(SplitMode::Open),
            other => Err(Error::invalid(format!("unknown split mode '{other}'"))),
        }
    }
}

/// Image refs per subset. `reference`/`query` partition `test` in open mode
/// and are empty in closed mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub reference: BTreeSet<String>,
    pub query: BTreeSet<String>,
    pub seed: u64,
}

impl SplitSpec {
    /// Gallery/kNN database and probe sets for this split.
    pub fn gallery_and_probes(&self) -> (&BTreeSet<String>, &BTreeSet<String>) {
        match self.mode {
            SplitMode::Closed => (&self.train, &self.test),
            SplitMode::Open => (&self.reference, &self.query),
        }
    }
}

/// Round half up.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Tracks per id, each track's records in time order, tracks ordered by
/// their earliest time then id.
fn group(records: &[DatasetRecord]) -> BTreeMap<String, Vec<Vec<DatasetRecord>>> {
    let mut by_track: BTreeMap<(String, u64), Vec<DatasetRecord>> = BTreeMap::new();
    for r in records {
        by_track.entry((r.id_label.clone(), r.track_id)).or_default().push(r.clone());
    }
    let mut out: BTreeMap<String, Vec<Vec<DatasetRecord>>> = BTreeMap::new();
    for ((id, _), mut recs) in by_track {
        recs.sort_by(|a, b| a.time_key.cmp(&b.time_key).then_with(|| a.image_ref.cmp(&b.image_ref)));
        out.entry(id).or_default().push(recs);
    }
    for tracks in out.values_mut() {
        tracks.sort_by_key(|t| (t[0].time_key, t[0].track_id));
    }
    out
}

/// Drops tracks with fewer than 4 images, then ids with fewer than 2
/// tracks, repeating until nothing changes. Record order is preserved.
pub fn filter_dataset(records: &[DatasetRecord]) -> Vec<DatasetRecord> {
    let mut current = records.to_vec();
    loop {
        let mut track_sizes: BTreeMap<(&str, u64), usize> = BTreeMap::new();
        for r in &current {
            *track_sizes.entry((&r.id_label, r.track_id)).or_default() += 1;
        }
        let mut tracks_per_id: BTreeMap<&str, usize> = BTreeMap::new();
        for (&(id, _), &n) in &track_sizes {
            if n >= MIN_IMAGES_PER_TRACK {
                *tracks_per_id.entry(id).or_default() += 1;
            }
        }
        let kept: Vec<DatasetRecord> = current
            .iter()
            .filter(|r| {
                track_sizes[&(r.id_label.as_str(), r.track_id)] >= MIN_IMAGES_PER_TRACK
                    && tracks_per_id.get(r.id_label.as_str()).copied().unwrap_or(0) >= MIN_TRACKS_PER_ID
            })
            .cloned()
            .collect();
        if kept.len() == current.len() {
            return kept;
        }
        current = kept;
    }
}

fn refs(tracks: &[Vec<DatasetRecord>]) -> impl Iterator<Item = String> + '_ {
    tracks.iter().flatten().map(|r| r.image_ref.clone())
}

/// Number of tracks for the first side: rounded fraction, clamped so both
/// sides keep at least one track.
pub fn first_side_count(total: usize, frac: f64) -> usize {
    round_half_up(frac * total as f64).clamp(1, total.saturating_sub(1).max(1))
}

pub fn closed_split(records: &[DatasetRecord], train_frac: f64, seed: u64) -> Result<SplitSpec> {
    let mut spec = SplitSpec {
        mode: SplitMode::Closed,
        train: BTreeSet::new(),
        test: BTreeSet::new(),
        reference: BTreeSet::new(),
        query: BTreeSet::new(),
        seed,
    };
    for (id, tracks) in group(records) {
        if tracks.len() < 2 {
            return Err(Error::invalid(format!("id '{id}' has {} track(s), closed split needs 2", tracks.len())));
        }
        let n_train = first_side_count(tracks.len(), train_frac);
        spec.train.extend(refs(&tracks[..n_train]));
        spec.test.extend(refs(&tracks[n_train..]));
    }
    Ok(spec)
}

pub fn open_split(records: &[DatasetRecord], id_frac: f64, ref_frac: f64, seed: u64) -> Result<SplitSpec> {
    let grouped = group(records);
    if grouped.len() < 2 {
        return Err(Error::invalid(format!("open split needs at least 2 ids, got {}", grouped.len())));
    }
    let mut ids: Vec<&String> = grouped.keys().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = first_side_count(ids.len(), id_frac);
    let mut spec = SplitSpec {
        mode: SplitMode::Open,
        train: BTreeSet::new(),
        test: BTreeSet::new(),
        reference: BTreeSet::new(),
        query: BTreeSet::new(),
        seed,
    };
    for id in &ids[..n_train] {
        spec.train.extend(refs(&grouped[*id]));
    }
    for id in &ids[n_train..] {
        let tracks = &grouped[*id];
        let n_ref = if tracks.len() >= 2 { first_side_count(tracks.len(), ref_frac) } else { 1 };
        spec.reference.extend(refs(&tracks[..n_ref]));
        spec.query.extend(refs(&tracks[n_ref..]));
        spec.test.extend(refs(tracks));
    }
    Ok(spec)
}

/// Writes subset files as dataset-index CSVs named `<subset>.csv`.
pub fn split_files(spec: &SplitSpec, records: &[DatasetRecord]) -> Result<Vec<(&'static str, String)>> {
    let subset = |set: &BTreeSet<String>| -> Result<String> {
        let recs: Vec<DatasetRecord> = records.iter().filter(|r| set.contains(&r.image_ref)).cloned().collect();
        crate::formats::write_dataset_index(&recs)
    };
    let mut files = vec![("train", subset(&spec.train)?), ("test", subset(&spec.test)?)];
    if spec.mode == SplitMode::Open {
        files.push(("reference", subset(&spec.reference)?));
        files.push(("query", subset(&spec.query)?));
    }
    Ok(files)
}

/// Reads the files written by [`split_files`] back from `dir`. The mode is
/// open when `reference.csv` exists. Returns the split and the records of
/// every subset.
pub fn load_split(dir: &std::path::Path, seed: u64) -> Result<(SplitSpec, Vec<DatasetRecord>)> {
    let read = |name: &str| -> Result<Vec<DatasetRecord>> {
        let path = dir.join(format!("{name}.csv"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        crate::formats::parse_dataset_index(&text)
    };
    let refs = |recs: &[DatasetRecord]| recs.iter().map(|r| r.image_ref.clone()).collect::<BTreeSet<_>>();
    let train = read("train")?;
    let test = read("test")?;
    let open = dir.join("reference.csv").exists();
    let (reference, query) = if open { (read("reference")?, read("query")?) } else { (Vec::new(), Vec::new()) };
    let spec = SplitSpec {
        mode: if open { SplitMode::Open } else { SplitMode::Closed },
        train: refs(&train),
        test: refs(&test),
        reference: refs(&reference),
        query: refs(&query),
        seed,
    };
    if open && (!spec.reference.is_subset(&spec.test) || !spec.query.is_subset(&spec.test)) {
        return Err(Error::invalid("reference and query must partition the test subset"));
    }
    let mut records = train;
    records.extend(test);
    Ok((spec, records))
}

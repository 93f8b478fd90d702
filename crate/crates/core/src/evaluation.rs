//! Gallery CMC scoring, kNN accuracy and the results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{DatasetRecord, EmbeddingTable};
use crate::model::slice_distance;
use crate::splits::SplitSpec;

pub const DEFAULT_GALLERIES: usize = 10_000;
pub const DEFAULT_NEGATIVES: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryTrial {
    pub anchor: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GallerySet {
    pub trials: Vec<GalleryTrial>,
    /// Set when fewer than `n_neg` other ids existed and negatives repeat ids.
    pub repeated_ids: bool,
}

/// `(image_ref, id)` pairs.
pub type LabeledRefs = Vec<(String, String)>;

/// Draws `n` trials: anchor from `probes`, positive (same id, different
/// image) and negatives from `gallery`.
pub fn sample_galleries(probes: &[(String, String)], gallery: &[(String, String)], n: usize, n_neg: usize, seed: u64) -> Result<GallerySet> {
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::invalid("gallery sampling needs non-empty probe and gallery sets"));
    }
    let mut by_id: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (r, id) in gallery {
        by_id.entry(id).or_default().push(r);
    }
    let ids: Vec<&str> = by_id.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut repeated = false;
    let mut trials = Vec::with_capacity(n);
    for _ in 0..n {
        let (anchor, aid) = &probes[rng.random_range(0..probes.len())];
        let positives: Vec<&str> = by_id.get(aid.as_str()).map(|v| v.iter().copied().filter(|r| r != anchor).collect()).unwrap_or_default();
        if positives.is_empty() {
            return Err(Error::invalid(format!("anchor id '{aid}' has no image in the positive pool")));
        }
        let positive = positives[rng.random_range(0..positives.len())];
        let others: Vec<&str> = ids.iter().copied().filter(|i| i != aid).collect();
        let negatives: Vec<String> = if others.len() >= n_neg {
            rand::seq::index::sample(&mut rng, others.len(), n_neg)
                .iter()
                .map(|k| {
                    let pool = &by_id[others[k]];
                    pool[rng.random_range(0..pool.len())].to_string()
                })
                .collect()
        } else {
            repeated = true;
            let pool: Vec<&str> = others.iter().flat_map(|i| by_id[i].iter().copied()).collect();
            if pool.len() < n_neg {
                return Err(Error::invalid(format!("only {} negative images available, need {n_neg}", pool.len())));
            }
            rand::seq::index::sample(&mut rng, pool.len(), n_neg).iter().map(|k| pool[k].to_string()).collect()
        };
        trials.push(GalleryTrial { anchor: anchor.clone(), positive: positive.to_string(), negatives });
    }
    if repeated {
        log::warn!("fewer than {n_neg} negative ids; negatives repeat ids");
    }
    Ok(GallerySet { trials, repeated_ids: repeated })
}

fn labeled(records: &[DatasetRecord], refs: &std::collections::BTreeSet<String>) -> LabeledRefs {
    let mut v: LabeledRefs = records
        .iter()
        .filter(|r| refs.contains(&r.image_ref))
        .map(|r| (r.image_ref.clone(), r.id_label.clone()))
        .collect();
    v.sort();
    v
}

/// `(probes, gallery)` for a split: closed gives (test, train), open gives
/// (query, reference).
pub fn split_sets(split: &SplitSpec, records: &[DatasetRecord]) -> (LabeledRefs, LabeledRefs) {
    let (gallery, probes) = split.gallery_and_probes();
    (labeled(records, probes), labeled(records, gallery))
}

pub fn sample_split_galleries(split: &SplitSpec, records: &[DatasetRecord], n: usize, n_neg: usize, seed: u64) -> Result<GallerySet> {
    let (probes, gallery) = split_sets(split, records);
    sample_galleries(&probes, &gallery, n, n_neg, seed)
}

fn lookup<'a>(table: &'a EmbeddingTable, r: &str) -> Result<&'a [f64]> {
    table.get(r).map(|e| e.values.as_slice()).ok_or_else(|| Error::MissingEmbedding(r.to_string()))
}

/// Rank of the positive (1-based) among the gallery, ascending distance,
/// ties by image ref.
pub fn positive_rank(trial: &GalleryTrial, table: &EmbeddingTable) -> Result<usize> {
    let a = lookup(table, &trial.anchor)?;
    let mut scored: Vec<(f64, &str)> = Vec::with_capacity(trial.negatives.len() + 1);
    for r in std::iter::once(&trial.positive).chain(&trial.negatives) {
        scored.push((slice_distance(a, lookup(table, r)?)?, r));
    }
    let (dp, rp) = scored[0];
    Ok(1 + scored[1..].iter().filter(|(d, r)| *d < dp || (*d == dp && *r < rp)).count())
}

pub fn cmc(trials: &[GalleryTrial], table: &EmbeddingTable, ranks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let found = trials.par_iter().map(|t| positive_rank(t, table)).collect::<Result<Vec<_>>>()?;
    let n = found.len().max(1) as f64;
    Ok(ranks.iter().map(|&k| (k, found.iter().filter(|&&r| r <= k).count() as f64 / n)).collect())
}

/// Majority vote among the `k` nearest reference items; vote ties go to the
/// tied class with the nearest member.
pub fn knn_predict<'a>(query: &[f64], reference: &'a [(String, String)], table: &EmbeddingTable, k: usize) -> Result<&'a str> {
    if k == 0 || k > reference.len() {
        return Err(Error::invalid(format!("k = {k} with {} reference items", reference.len())));
    }
    let mut d: Vec<(f64, &str, &str)> = Vec::with_capacity(reference.len());
    for (r, id) in reference {
        d.push((slice_distance(query, lookup(table, r)?)?, r.as_str(), id.as_str()));
    }
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    let mut votes: Vec<(&str, usize)> = Vec::new();
    for (_, _, id) in &d[..k] {
        match votes.iter_mut().find(|(v, _)| v == id) {
            Some(v) => v.1 += 1,
            None => votes.push((id, 1)),
        }
    }
    // `votes` is in order of first (nearest) appearance.
    let best = votes.iter().map(|v| v.1).max().unwrap_or(0);
    Ok(votes.iter().find(|v| v.1 == best).map(|v| v.0).expect("k >= 1"))
}

pub fn knn_eval(reference: &[(String, String)], query: &[(String, String)], table: &EmbeddingTable, k: usize) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("kNN reference set is empty"));
    }
    if query.is_empty() {
        return Ok(0.0);
    }
    let hits = query
        .par_iter()
        .map(|(r, id)| Ok(knn_predict(lookup(table, r)?, reference, table, k)? == id))
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / query.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub top1: f64,
    pub top3: f64,
    pub knn1: f64,
    pub knn3: f64,
}

/// One evaluation over a split: CMC top-1/3 over sampled galleries plus
/// 1NN/3NN accuracy of the probes against the gallery set.
pub fn evaluate_split(
    split: &SplitSpec,
    records: &[DatasetRecord],
    table: &EmbeddingTable,
    n_galleries: usize,
    n_negatives: usize,
    seed: u64,
) -> Result<(Scores, bool)> {
    let (probes, gallery) = split_sets(split, records);
    let set = sample_galleries(&probes, &gallery, n_galleries, n_negatives, seed)?;
    let c = cmc(&set.trials, table, &[1, 3])?;
    Ok((
        Scores { top1: c[&1], top3: c[&3], knn1: knn_eval(&gallery, &probes, table, 1)?, knn3: knn_eval(&gallery, &probes, table, 3)? },
        set.repeated_ids,
    ))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalRow {
    pub features: String,
    pub input: String,
    pub closed: Option<Scores>,
    pub open: Option<Scores>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

const CSV_HEADER: [&str; 10] = [
    "features", "input", "closed_top1", "closed_top3", "closed_1nn", "closed_3nn", "open_top1", "open_top3", "open_1nn", "open_3nn",
];

fn cells(s: &Option<Scores>) -> [String; 4] {
    match s {
        Some(s) => [s.top1, s.top3, s.knn1, s.knn3].map(|v| format!("{v:.4}")),
        None => std::array::from_fn(|_| "-".to_string()),
    }
}

pub fn build_report(rows: Vec<EvalRow>) -> EvalReport {
    EvalReport { rows }
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:<10} | {:^31} | {:^31}", "", "", "Closed Set Setting", "Open Set Setting");
        let _ = writeln!(
            out,
            "{:<10} {:<10} | {:>7} {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7} {:>7}",
            "Features", "Input", "Top-1", "Top-3", "1NN", "3NN", "Top-1", "Top-3", "1NN", "3NN"
        );
        for r in &self.rows {
            let c = cells(&r.closed);
            let o = cells(&r.open);
            let _ = writeln!(
                out,
                "{:<10} {:<10} | {:>7} {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7} {:>7}",
                r.features, r.input, c[0], c[1], c[2], c[3], o[0], o[1], o[2], o[3]
            );
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let num = |s: &Option<Scores>| -> Vec<String> {
                match s {
                    Some(s) => [s.top1, s.top3, s.knn1, s.knn3].iter().map(|v| format!("{v:?}")).collect(),
                    None => vec![String::new(); 4],
                }
            };
            let mut rec = vec![r.features.clone(), r.input.clone()];
            rec.extend(num(&r.closed));
            rec.extend(num(&r.open));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        if rdr.headers()?.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Parse { line: 1, message: "unexpected report header".into() });
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let block = |off: usize| -> Result<Option<Scores>> {
                let f: Vec<&str> = (off..off + 4).map(|j| rec.get(j).unwrap_or("")).collect();
                if f.iter().all(|v| v.is_empty()) {
                    return Ok(None);
                }
                let p = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse { line, message: e.to_string() });
                Ok(Some(Scores { top1: p(f[0])?, top3: p(f[1])?, knn1: p(f[2])?, knn3: p(f[3])? }))
            };
            rows.push(EvalRow { features: rec[0].to_string(), input: rec[1].to_string(), closed: block(2)?, open: block(6)? });
        }
        Ok(Self { rows })
    }
}

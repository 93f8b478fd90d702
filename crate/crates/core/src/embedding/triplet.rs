//! Batch triplet loss with online semi-hard negative mining.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub semihard: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TripletStats {
    pub loss: f64,
    pub n_triplets: usize,
    pub n_active: usize,
    pub n_semihard: usize,
}

fn check_batch<L: PartialEq>(emb: &[Vec<f64>], labels: &[L]) -> Result<()> {
    if emb.len() != labels.len() {
        return Err(Error::Dimension { expected: emb.len(), got: labels.len() });
    }
    if let Some(first) = emb.first() {
        if let Some(bad) = emb.iter().find(|e| e.len() != first.len()) {
            return Err(Error::Dimension { expected: first.len(), got: bad.len() });
        }
    }
    let paired = labels.iter().enumerate().any(|(i, a)| labels[i + 1..].iter().any(|b| a == b));
    if !paired {
        return Err(Error::invalid("batch has no label with two or more samples"));
    }
    Ok(())
}

pub fn pairwise_distances(emb: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = emb.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = emb[i].iter().zip(&emb[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// For every ordered same-label pair (a, p), picks the closest negative with
/// `d_ap < d_an < d_ap + margin`. Without one, falls back to the farthest
/// negative that is not farther than the positive. Pairs with neither are
/// skipped. Ties go to the lowest index.
pub fn select_triplets<L: PartialEq>(dist: &[Vec<f64>], labels: &[L], margin: f64) -> Vec<Triplet> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let dap = dist[a][p];
            let mut semi: Option<(f64, usize)> = None;
            let mut hard: Option<(f64, usize)> = None;
            for (ng, lab) in labels.iter().enumerate() {
                if *lab == labels[a] {
                    continue;
                }
                let dan = dist[a][ng];
                if dan > dap && dan < dap + margin {
                    if semi.is_none_or(|(best, _)| dan < best) {
                        semi = Some((dan, ng));
                    }
                } else if dan <= dap && hard.is_none_or(|(best, _)| dan > best) {
                    hard = Some((dan, ng));
                }
            }
            if let Some((_, ng)) = semi {
                out.push(Triplet { anchor: a, positive: p, negative: ng, semihard: true });
            } else if let Some((_, ng)) = hard {
                out.push(Triplet { anchor: a, positive: p, negative: ng, semihard: false });
            }
        }
    }
    out
}

pub fn triplet_loss<L: PartialEq>(emb: &[Vec<f64>], labels: &[L], margin: f64) -> Result<TripletStats> {
    check_batch(emb, labels)?;
    let dist = pairwise_distances(emb);
    let trips = select_triplets(&dist, labels, margin);
    Ok(stats(&dist, &trips, margin))
}

fn stats(dist: &[Vec<f64>], trips: &[Triplet], margin: f64) -> TripletStats {
    let mut s = TripletStats { n_triplets: trips.len(), ..Default::default() };
    for t in trips {
        let h = dist[t.anchor][t.positive] - dist[t.anchor][t.negative] + margin;
        if h > 0.0 {
            s.loss += h;
            s.n_active += 1;
        }
        s.n_semihard += t.semihard as usize;
    }
    if !trips.is_empty() {
        s.loss /= trips.len() as f64;
    }
    s
}

/// Loss and its gradient with respect to each embedding, with the mined
/// triplets held fixed. A zero distance contributes a zero subgradient.
pub fn triplet_loss_grad<L: PartialEq>(
    emb: &[Vec<f64>],
    labels: &[L],
    margin: f64,
) -> Result<(TripletStats, Vec<Vec<f64>>)> {
    check_batch(emb, labels)?;
    let dist = pairwise_distances(emb);
    let trips = select_triplets(&dist, labels, margin);
    let s = stats(&dist, &trips, margin);
    let dim = emb.first().map_or(0, |e| e.len());
    let mut grad = vec![vec![0.0; dim]; emb.len()];
    if trips.is_empty() {
        return Ok((s, grad));
    }
    let w = 1.0 / trips.len() as f64;
    for t in &trips {
        let (a, p, n) = (t.anchor, t.positive, t.negative);
        let (dap, dan) = (dist[a][p], dist[a][n]);
        if dap - dan + margin <= 0.0 {
            continue;
        }
        for k in 0..dim {
            let up = if dap > 0.0 { (emb[a][k] - emb[p][k]) / dap } else { 0.0 };
            let un = if dan > 0.0 { (emb[a][k] - emb[n][k]) / dan } else { 0.0 };
            grad[a][k] += w * (up - un);
            grad[p][k] -= w * up;
            grad[n][k] += w * un;
        }
    }
    Ok((s, grad))
}

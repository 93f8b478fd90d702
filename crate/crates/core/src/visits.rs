//! Drinking-visit detection: per-frame head-to-well proximity hits merged
//! into events, plus scoring against annotated events.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{point_distance, Flower, Pose, Track, VisitEvent};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VisitRadius {
    Pixels(f64),
    /// Multiple of each flower's well radius.
    WellMultiple(f64),
}

impl VisitRadius {
    pub fn for_flower(&self, flower: &Flower) -> f64 {
        match *self {
            VisitRadius::Pixels(r) => r,
            VisitRadius::WellMultiple(m) => m * flower.well_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisitParams {
    pub radius: VisitRadius,
    /// Largest frame difference between consecutive hits of one event.
    pub gap_max: u64,
    /// Events spanning fewer frames are dropped.
    pub min_len: u64,
    pub overlap_min: u64,
}

impl Default for VisitParams {
    fn default() -> Self {
        Self { radius: VisitRadius::WellMultiple(2.0), gap_max: 5, min_len: 3, overlap_min: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HitRecord {
    pub frame: u64,
    pub track_id: u64,
    pub flower_id: u32,
}

/// Closed threshold: a head exactly `r_visit` away counts.
pub fn frame_hit(pose: &Pose, flower: &Flower, r_visit: f64) -> bool {
    pose.head.is_some_and(|h| point_distance(h, flower.center_well) <= r_visit)
}

pub fn frame_hits(frame: u64, track_id: u64, pose: &Pose, flowers: &[Flower], radius: VisitRadius) -> Vec<HitRecord> {
    flowers
        .iter()
        .filter(|f| frame_hit(pose, f, radius.for_flower(f)))
        .map(|f| HitRecord { frame, track_id, flower_id: f.flower_id })
        .collect()
}

/// Merges hits per (track, flower) into maximal runs whose consecutive hit
/// frames differ by at most `gap_max`; runs spanning fewer than `min_len`
/// frames are discarded. Output is in event order.
pub fn agglomerate(hits: &[HitRecord], gap_max: u64, min_len: u64) -> Vec<VisitEvent> {
    let mut by_pair: BTreeMap<(u64, u32), BTreeSet<u64>> = BTreeMap::new();
    for h in hits {
        by_pair.entry((h.track_id, h.flower_id)).or_default().insert(h.frame);
    }
    let mut events = Vec::new();
    for ((track_id, flower_id), frames) in by_pair {
        let mut iter = frames.into_iter();
        let Some(first) = iter.next() else { continue };
        let (mut start, mut last) = (first, first);
        let mut push = |s: u64, e: u64| {
            if e - s + 1 >= min_len {
                events.push(VisitEvent { flower_id, track_id, start_frame: s, end_frame: e });
            }
        };
        for f in iter {
            if f - last > gap_max {
                push(start, last);
                start = f;
            }
            last = f;
        }
        push(start, last);
    }
    events.sort_by_key(VisitEvent::sort_key);
    events
}

pub fn detect_visits(tracks: &[Track], flowers: &[Flower], params: &VisitParams) -> Vec<VisitEvent> {
    let hits: Vec<HitRecord> = tracks
        .iter()
        .flat_map(|t| t.entries.iter().flat_map(|(f, p)| frame_hits(*f, t.track_id, p, flowers, params.radius)))
        .collect();
    agglomerate(&hits, params.gap_max, params.min_len)
}

/// Incremental agglomeration for streaming use. Events are released in the
/// same total order as the batch path: an event leaves only once no open or
/// future run can start before it.
#[derive(Debug, Clone)]
pub struct VisitStream {
    flowers: Vec<Flower>,
    params: VisitParams,
    open: BTreeMap<(u64, u32), (u64, u64)>,
    ready: BTreeSet<(u64, u32, u64, u64)>,
    current: Option<u64>,
}

impl VisitStream {
    pub fn new(flowers: Vec<Flower>, params: VisitParams) -> Self {
        Self { flowers, params, open: BTreeMap::new(), ready: BTreeSet::new(), current: None }
    }

    fn close(&mut self, key: (u64, u32), run: (u64, u64)) {
        let (start, last) = run;
        if last - start + 1 >= self.params.min_len {
            self.ready.insert((start, key.1, key.0, last));
        }
    }

    /// Feeds one frame worth of `(track_id, pose)` pairs and returns every
    /// event that is now final.
    pub fn push_frame(&mut self, frame: u64, poses: &[(u64, Pose)]) -> Vec<VisitEvent> {
        self.current = Some(frame);
        let gap_max = self.params.gap_max;
        for (track_id, pose) in poses {
            for hit in frame_hits(frame, *track_id, pose, &self.flowers, self.params.radius) {
                let key = (hit.track_id, hit.flower_id);
                match self.open.get(&key).copied() {
                    Some((start, last)) if frame - last <= gap_max => {
                        self.open.insert(key, (start, frame));
                    }
                    Some(run) => {
                        self.close(key, run);
                        self.open.insert(key, (frame, frame));
                    }
                    None => {
                        self.open.insert(key, (frame, frame));
                    }
                }
            }
        }
        let expired: Vec<((u64, u32), (u64, u64))> =
            self.open.iter().filter(|(_, &(_, last))| frame + 1 - last > gap_max).map(|(k, v)| (*k, *v)).collect();
        for (key, run) in expired {
            self.open.remove(&key);
            self.close(key, run);
        }
        self.release()
    }

    fn release(&mut self) -> Vec<VisitEvent> {
        let next_frame = self.current.map_or(0, |c| c + 1);
        let watermark = self.open.values().map(|r| r.0).min().unwrap_or(next_frame).min(next_frame);
        let mut out = Vec::new();
        while let Some(&first) = self.ready.first() {
            if first.0 >= watermark {
                break;
            }
            self.ready.pop_first();
            out.push(VisitEvent { start_frame: first.0, flower_id: first.1, track_id: first.2, end_frame: first.3 });
        }
        out
    }

    /// Closes all open runs at end of stream.
    pub fn finish(&mut self) -> Vec<VisitEvent> {
        for (key, run) in std::mem::take(&mut self.open) {
            self.close(key, run);
        }
        std::mem::take(&mut self.ready)
            .into_iter()
            .map(|(s, f, t, e)| VisitEvent { start_frame: s, flower_id: f, track_id: t, end_frame: e })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventMetrics {
    pub n_annotated: usize,
    pub n_predicted: usize,
    pub recall: f64,
    pub duplication_rate: f64,
    /// (predicted index, annotated index)
    pub matches: Vec<(usize, usize)>,
}

fn overlap(a: &VisitEvent, b: &VisitEvent) -> u64 {
    let lo = a.start_frame.max(b.start_frame);
    let hi = a.end_frame.min(b.end_frame);
    if hi >= lo {
        hi - lo + 1
    } else {
        0
    }
}

/// Matches each prediction to the same-flower annotation it overlaps most
/// (ties to the earlier annotation). Recall counts annotations with at least
/// one match; duplication counts extra matches per annotation, both relative
/// to the number of annotations. Both are 0 when nothing is annotated.
pub fn evaluate_events(predicted: &[VisitEvent], annotated: &[VisitEvent], overlap_min: u64) -> EventMetrics {
    let mut matches = Vec::new();
    let mut per_annotation = vec![0usize; annotated.len()];
    for (pi, p) in predicted.iter().enumerate() {
        let mut best: Option<(u64, usize)> = None;
        for (ai, a) in annotated.iter().enumerate() {
            if a.flower_id != p.flower_id {
                continue;
            }
            let ov = overlap(p, a);
            if ov >= overlap_min.max(1) && best.is_none_or(|(b, _)| ov > b) {
                best = Some((ov, ai));
            }
        }
        if let Some((_, ai)) = best {
            matches.push((pi, ai));
            per_annotation[ai] += 1;
        }
    }
    let n = annotated.len();
    let (recall, duplication_rate) = if n == 0 {
        (0.0, 0.0)
    } else {
        let hit = per_annotation.iter().filter(|&&c| c > 0).count();
        let dup: usize = per_annotation.iter().map(|&c| c.saturating_sub(1)).sum();
        (hit as f64 / n as f64, dup as f64 / n as f64)
    };
    EventMetrics { n_annotated: n, n_predicted: predicted.len(), recall, duplication_rate, matches }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point2;
    use proptest::prelude::*;

    fn flower() -> Flower {
        Flower { flower_id: 0, center_well: Point2::new(100.0, 100.0), well_radius: 5.0, square_side: 60.0, color_tag: String::new() }
    }

    fn head_at(x: f64, y: f64) -> Pose {
        Pose::new(Some(Point2::new(x, y)), None, None, None, 1.0).unwrap()
    }

    fn hits(frames: impl IntoIterator<Item = u64>) -> Vec<HitRecord> {
        frames.into_iter().map(|frame| HitRecord { frame, track_id: 1, flower_id: 0 }).collect()
    }

    fn ev(s: u64, e: u64) -> VisitEvent {
        VisitEvent { flower_id: 0, track_id: 1, start_frame: s, end_frame: e }
    }

    #[test]
    fn hit_boundaries() {
        let f = flower();
        assert!(frame_hit(&head_at(100.0, 100.0), &f, 10.0));
        assert!(frame_hit(&head_at(110.0, 100.0), &f, 10.0));
        assert!(!frame_hit(&head_at(110.0 + 1e-9, 100.0), &f, 10.0));
        let headless = Pose::new(None, None, Some(Point2::new(100.0, 100.0)), None, 1.0).unwrap();
        assert!(!frame_hit(&headless, &f, 10.0));
    }

    #[test]
    fn contiguous_run() {
        assert_eq!(agglomerate(&hits(5..=20), 3, 1), vec![ev(5, 20)]);
    }

    #[test]
    fn gap_boundary() {
        let h = hits((5..=10).chain(14..=20));
        assert_eq!(agglomerate(&h, 3, 1), vec![ev(5, 10), ev(14, 20)]);
        assert_eq!(agglomerate(&h, 4, 1), vec![ev(5, 20)]);
    }

    #[test]
    fn short_runs_dropped() {
        let h = hits([1, 2, 10, 11, 12]);
        assert_eq!(agglomerate(&h, 1, 3), vec![ev(10, 12)]);
    }

    /// Sort-and-sweep interval merge over frame lists per pair.
    fn merge_oracle(hits: &[HitRecord], gap_max: u64, min_len: u64) -> Vec<VisitEvent> {
        let mut sorted = hits.to_vec();
        sorted.sort_by_key(|h| (h.track_id, h.flower_id, h.frame));
        sorted.dedup();
        let mut intervals: Vec<VisitEvent> = Vec::new();
        for h in sorted {
            match intervals.last_mut() {
                Some(last)
                    if last.track_id == h.track_id && last.flower_id == h.flower_id && h.frame <= last.end_frame + gap_max =>
                {
                    last.end_frame = h.frame;
                }
                _ => intervals.push(VisitEvent { flower_id: h.flower_id, track_id: h.track_id, start_frame: h.frame, end_frame: h.frame }),
            }
        }
        intervals.retain(|e| e.end_frame - e.start_frame + 1 >= min_len);
        intervals.sort_by_key(|e| (e.start_frame, e.flower_id, e.track_id, e.end_frame));
        intervals
    }

    fn arb_hits() -> impl Strategy<Value = Vec<HitRecord>> {
        prop::collection::vec((0u64..200, 0u64..3, 0u32..2), 0..120)
            .prop_map(|v| v.into_iter().map(|(frame, track_id, flower_id)| HitRecord { frame, track_id, flower_id }).collect())
    }

    fn stream_events(hits: &[HitRecord], flowers_n: u32, params: VisitParams) -> Vec<VisitEvent> {
        // Place heads on wells so that hits replay exactly.
        let flowers: Vec<Flower> = (0..flowers_n)
            .map(|i| Flower { flower_id: i, center_well: Point2::new(1000.0 * i as f64, 0.0), well_radius: 1.0, square_side: 10.0, color_tag: String::new() })
            .collect();
        let mut by_frame: BTreeMap<u64, Vec<(u64, Pose)>> = BTreeMap::new();
        for h in hits {
            let pose = head_at(1000.0 * h.flower_id as f64, 0.0);
            let v = by_frame.entry(h.frame).or_default();
            if !v.iter().any(|(t, p)| *t == h.track_id && p.head == pose.head) {
                v.push((h.track_id, pose));
            }
        }
        let mut s = VisitStream::new(flowers, VisitParams { radius: VisitRadius::Pixels(0.5), ..params });
        let mut out = Vec::new();
        for (f, poses) in by_frame {
            out.extend(s.push_frame(f, &poses));
        }
        out.extend(s.finish());
        out
    }

    proptest! {
        #[test]
        fn agglomerate_matches_oracle(h in arb_hits(), gap in 0u64..6, min_len in 1u64..4) {
            prop_assert_eq!(agglomerate(&h, gap, min_len), merge_oracle(&h, gap, min_len));
        }

        #[test]
        fn idempotent_and_non_overlapping(h in arb_hits(), gap in 0u64..6) {
            let events = agglomerate(&h, gap, 1);
            let rehits: Vec<HitRecord> = events.iter()
                .flat_map(|e| (e.start_frame..=e.end_frame).map(move |frame| HitRecord { frame, track_id: e.track_id, flower_id: e.flower_id }))
                .collect();
            prop_assert_eq!(agglomerate(&rehits, gap, 1), events.clone());
            for a in &events {
                for b in &events {
                    if a != b && a.track_id == b.track_id && a.flower_id == b.flower_id {
                        prop_assert!(a.end_frame < b.start_frame || b.end_frame < a.start_frame);
                    }
                }
            }
        }

        #[test]
        fn stream_matches_batch(h in arb_hits(), gap in 0u64..6, min_len in 1u64..4) {
            let params = VisitParams { gap_max: gap, min_len, ..VisitParams::default() };
            prop_assert_eq!(stream_events(&h, 2, params), agglomerate(&h, gap, min_len));
        }

        #[test]
        fn split_invariance(a in arb_hits(), b in arb_hits(), gap in 0u64..6) {
            // Second half shifted beyond gap_max from every hit of the first.
            let shift = 200 + gap + 1;
            let b: Vec<HitRecord> = b.into_iter().map(|h| HitRecord { frame: h.frame + shift, ..h }).collect();
            let mut whole = a.clone();
            whole.extend(b.iter().copied());
            let mut parts = agglomerate(&a, gap, 1);
            parts.extend(agglomerate(&b, gap, 1));
            prop_assert_eq!(agglomerate(&whole, gap, 1), parts);
        }
    }

    #[test]
    fn hovering_outside_radius() {
        let f = flower();
        let track = Track { track_id: 0, entries: (0..40).map(|i| (i, head_at(100.0 + 10.5, 100.0))).collect() };
        assert!(detect_visits(&[track], &[f], &VisitParams::default()).is_empty());
    }

    #[test]
    fn drinking_twice_gives_two_events() {
        let f = flower();
        let p = VisitParams::default();
        let r = p.radius.for_flower(&f);
        let mut entries = Vec::new();
        let mut frame = 0;
        for _ in 0..15 {
            entries.push((frame, head_at(100.0, 100.0)));
            frame += 1;
        }
        for _ in 0..p.gap_max + 2 {
            entries.push((frame, head_at(100.0 + 2.0 * r, 100.0)));
            frame += 1;
        }
        for _ in 0..15 {
            entries.push((frame, head_at(100.0, 100.0)));
            frame += 1;
        }
        let events = detect_visits(&[Track { track_id: 3, entries }], &[f], &p);
        assert_eq!(events.len(), 2);
    }

    #[test]
    fn perfect_predictions() {
        let ann = vec![ev(0, 10), ev(20, 30)];
        let m = evaluate_events(&ann, &ann, 1);
        assert_eq!((m.recall, m.duplication_rate), (1.0, 0.0));
    }

    #[test]
    fn empty_predictions() {
        let m = evaluate_events(&[], &[ev(0, 10)], 1);
        assert_eq!((m.recall, m.duplication_rate), (0.0, 0.0));
    }

    #[test]
    fn duplicates_ninety_eight() {
        let annotated: Vec<VisitEvent> = (0..98).map(|i| ev(100 * i, 100 * i + 30)).collect();
        let mut predicted = annotated.clone();
        predicted.extend((0..9).map(|i| ev(100 * i + 35 - 10, 100 * i + 40)));
        let m = evaluate_events(&predicted, &annotated, 1);
        assert_eq!(m.recall, 1.0);
        assert!((m.duplication_rate - 0.092).abs() <= 0.001, "{}", m.duplication_rate);
        assert_eq!(m.matches.len(), 107);
    }

    #[test]
    fn flower_must_match() {
        let a = ev(0, 10);
        let p = VisitEvent { flower_id: 1, ..a };
        assert_eq!(evaluate_events(&[p], &[a], 1).recall, 0.0);
    }
}

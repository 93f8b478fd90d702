//! Short-term tracking by greedy nearest-pair association.
//!
//! Each frame, every (track, pose) pair whose anchor distance is below the
//! gate is a candidate. Candidates are taken in ascending distance order
//! (ties: lower track id, then lower pose index) as long as neither side has
//! been used. Leftover poses open new tracks.

use crate::error::{Error, Result};
use crate::model::{point_distance, FrameDetections, Pose, Track};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    pub gate_px: f64,
    /// Tracks may miss at most this many consecutive frames.
    pub max_gap: u64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self { gate_px: 80.0, max_gap: 15 }
    }
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    active: Vec<Track>,
    finished: Vec<Track>,
    next_track_id: u64,
    last_frame: Option<u64>,
    params: TrackerParams,
}

/// `(pose index in frame, track id)` for every pose of a frame.
pub type Assignments = Vec<(usize, u64)>;

impl TrackerState {
    pub fn new(params: TrackerParams) -> Self {
        Self { active: Vec::new(), finished: Vec::new(), next_track_id: 0, last_frame: None, params }
    }

    pub fn params(&self) -> TrackerParams {
        self.params
    }

    pub fn active(&self) -> &[Track] {
        &self.active
    }

    pub fn next_track_id(&self) -> u64 {
        self.next_track_id
    }

    fn retire_stale(&mut self, frame: u64) {
        let max_gap = self.params.max_gap;
        let (keep, stale): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|t| frame - t.last_frame().expect("tracks are non-empty") - 1 <= max_gap);
        self.active = keep;
        self.finished.extend(stale);
    }

    /// Associates one frame of detections, returning the track id chosen for
    /// each pose.
    pub fn step(&mut self, frame: &FrameDetections) -> Result<Assignments> {
        let f = frame.frame_index;
        if self.last_frame.is_some_and(|last| f <= last) {
            return Err(Error::Tracking(format!(
                "frame {f} does not follow frame {}",
                self.last_frame.unwrap_or_default()
            )));
        }
        self.last_frame = Some(f);
        self.retire_stale(f);

        let mut pairs: Vec<(f64, u64, usize, usize)> = Vec::new();
        for (ti, t) in self.active.iter().enumerate() {
            let anchor = t.entries.last().expect("tracks are non-empty").1.anchor();
            for (pi, p) in frame.poses.iter().enumerate() {
                let d = point_distance(anchor, p.anchor());
                if d < self.params.gate_px {
                    pairs.push((d, t.track_id, pi, ti));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut pose_taken = vec![None; frame.poses.len()];
        let mut track_taken = vec![false; self.active.len()];
        for (_, track_id, pi, ti) in pairs {
            if pose_taken[pi].is_none() && !track_taken[ti] {
                pose_taken[pi] = Some(track_id);
                track_taken[ti] = true;
                self.active[ti].entries.push((f, frame.poses[pi]));
            }
        }
        let mut out = Vec::with_capacity(frame.poses.len());
        for (pi, taken) in pose_taken.into_iter().enumerate() {
            let id = match taken {
                Some(id) => id,
                None => {
                    let id = self.next_track_id;
                    self.next_track_id += 1;
                    self.active.push(Track { track_id: id, entries: vec![(f, frame.poses[pi])] });
                    id
                }
            };
            out.push((pi, id));
        }
        Ok(out)
    }

    /// Consumes the state, returning every track sorted by id.
    pub fn finish(mut self) -> Vec<Track> {
        self.finished.append(&mut self.active);
        self.finished.sort_by_key(|t| t.track_id);
        self.finished
    }
}

pub fn run_tracker<I>(frames: I, params: TrackerParams) -> Result<Vec<Track>>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<FrameDetections>,
{
    let mut state = TrackerState::new(params);
    for frame in frames {
        state.step(std::borrow::Borrow::borrow(&frame))?;
    }
    Ok(state.finish())
}

/// Pose of each assigned track id for one frame, in pose order.
pub fn assigned_poses(frame: &FrameDetections, assignments: &Assignments) -> Vec<(u64, Pose)> {
    assignments.iter().map(|&(pi, id)| (id, frame.poses[pi])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Point2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn pose_at(x: f64, y: f64) -> Pose {
        Pose::new(None, None, Some(Point2::new(x, y)), None, 1.0).unwrap()
    }

    fn frame(i: u64, pts: &[(f64, f64)]) -> FrameDetections {
        FrameDetections { frame_index: i, poses: pts.iter().map(|&(x, y)| pose_at(x, y)).collect() }
    }

    #[test]
    fn near_pose_continues_track() {
        let mut st = TrackerState::new(TrackerParams { gate_px: 50.0, max_gap: 15 });
        let a = st.step(&frame(0, &[(100.0, 100.0)])).unwrap();
        let b = st.step(&frame(1, &[(102.0, 100.0)])).unwrap();
        assert_eq!(a[0].1, b[0].1);
    }

    #[test]
    fn two_new_tracks() {
        let mut st = TrackerState::new(TrackerParams::default());
        let next = st.next_track_id();
        let a = st.step(&frame(0, &[(0.0, 0.0), (300.0, 0.0)])).unwrap();
        assert_eq!(a, vec![(0, next), (1, next + 1)]);
    }

    #[test]
    fn rejects_non_increasing_frames() {
        let mut st = TrackerState::new(TrackerParams::default());
        st.step(&frame(3, &[])).unwrap();
        assert!(st.step(&frame(3, &[])).is_err());
    }

    /// Reference greedy: scan all unused pairs each round for the global
    /// minimum under the same tie-break.
    fn greedy_oracle(tracks: &[(u64, Point2)], poses: &[Point2], gate: f64) -> Vec<(usize, u64)> {
        let mut used_t = vec![false; tracks.len()];
        let mut used_p = vec![false; poses.len()];
        let mut out = Vec::new();
        loop {
            let mut best: Option<(f64, u64, usize, usize)> = None;
            for (ti, (id, tp)) in tracks.iter().enumerate() {
                for (pi, pp) in poses.iter().enumerate() {
                    if used_t[ti] || used_p[pi] {
                        continue;
                    }
                    let d = ((tp.x - pp.x).powi(2) + (tp.y - pp.y).powi(2)).sqrt();
                    if d >= gate {
                        continue;
                    }
                    let cand = (d, *id, pi, ti);
                    let better = match best {
                        None => true,
                        Some(b) => (cand.0, cand.1, cand.2) < (b.0, b.1, b.2),
                    };
                    if better {
                        best = Some(cand);
                    }
                }
            }
            match best {
                Some((_, id, pi, ti)) => {
                    used_t[ti] = true;
                    used_p[pi] = true;
                    out.push((pi, id));
                }
                None => break,
            }
        }
        out.sort();
        out
    }

    #[test]
    fn matches_greedy_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let start: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect();
            let next: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect();
            let mut st = TrackerState::new(TrackerParams { gate_px: 60.0, max_gap: 5 });
            let first = st.step(&frame(0, &start)).unwrap();
            let tracks: Vec<(u64, Point2)> = first.iter().map(|&(pi, id)| (id, Point2::new(start[pi].0, start[pi].1))).collect();
            let got = st.step(&frame(1, &next)).unwrap();
            let matched: Vec<(usize, u64)> = got.into_iter().filter(|&(_, id)| id < 3).collect();
            let pts: Vec<Point2> = next.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            assert_eq!(matched, greedy_oracle(&tracks, &pts, 60.0));
        }
    }

    #[test]
    fn two_straight_lines() {
        let frames: Vec<FrameDetections> =
            (0..50).map(|i| frame(i, &[(10.0 + 3.0 * i as f64, 50.0), (10.0 + 3.0 * i as f64, 250.0)])).collect();
        let tracks = run_tracker(&frames, TrackerParams::default()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.len() == 50));
    }

    #[test]
    fn gap_rule() {
        let p = TrackerParams { gate_px: 80.0, max_gap: 4 };
        // Missing for exactly max_gap frames: same track.
        let frames = vec![frame(0, &[(5.0, 5.0)]), frame(5, &[(5.0, 5.0)])];
        assert_eq!(run_tracker(&frames, p).unwrap().len(), 1);
        // Missing for max_gap + 1 frames: new track.
        let frames = vec![frame(0, &[(5.0, 5.0)]), frame(6, &[(5.0, 5.0)])];
        assert_eq!(run_tracker(&frames, p).unwrap().len(), 2);
    }

    #[test]
    fn empty_stream() {
        assert!(run_tracker(Vec::<FrameDetections>::new(), TrackerParams::default()).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn conservation_and_determinism(seed in any::<u64>(), n_frames in 1usize..40) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<FrameDetections> = (0..n_frames)
                .map(|i| {
                    let k = rng.random_range(0..5);
                    let pts: Vec<(f64, f64)> = (0..k).map(|_| (rng.random_range(0.0..300.0), rng.random_range(0.0..300.0))).collect();
                    frame(i as u64 * rng.random_range(1..3), &pts)
                })
                .scan(None, |last: &mut Option<u64>, mut f| {
                    let idx = last.map_or(f.frame_index, |l| l + 1 + f.frame_index % 3);
                    f.frame_index = idx;
                    *last = Some(idx);
                    Some(f)
                })
                .collect();
            let p = TrackerParams { gate_px: 70.0, max_gap: 2 };
            let a = run_tracker(&frames, p).unwrap();
            let b = run_tracker(&frames, p).unwrap();
            prop_assert_eq!(&a, &b);
            let total: usize = a.iter().map(Track::len).sum();
            prop_assert_eq!(total, frames.iter().map(|f| f.poses.len()).sum::<usize>());
            for t in &a {
                prop_assert!(t.entries.windows(2).all(|w| w[0].0 < w[1].0));
            }
        }
    }
}
